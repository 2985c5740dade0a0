use nalgebra::{DMatrix, DVector};

use super::PhysicsError;

/// Grid points used to verify that a fitted curve is increasing.
const MONOTONE_SAMPLES: usize = 2001;
const BISECTION_STEPS: usize = 200;

/// Least-squares polynomial mapping a gripper's normalized command to the
/// force it produces, valid over the gripper's enabled input range.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceCurve {
    /// Coefficients in the scaled variable `(n - center) / half_width`, lowest first.
    coeffs: Vec<f64>,
    center: f64,
    half_width: f64,
    /// Enabled command range.
    pub input_range: (f64, f64),
}

impl ForceCurve {
    /// Fits `samples` of `(command, newtons)` with a polynomial of `degree`.
    /// The fit must be strictly increasing over `input_range`.
    pub fn fit(samples: &[(f64, f64)], degree: usize, input_range: (f64, f64)) -> Result<Self, PhysicsError> {
        if samples.len() < degree + 1 {
            return Err(PhysicsError::TooFewSamples {
                got: samples.len(),
                need: degree + 1,
            });
        }
        let (lo, hi) = input_range;
        if !(lo < hi) {
            return Err(PhysicsError::Gripper(format!("enabled input range [{lo}, {hi}] is empty")));
        }
        let center = 0.5 * (lo + hi);
        let half_width = 0.5 * (hi - lo);
        let a = DMatrix::from_fn(samples.len(), degree + 1, |r, c| ((samples[r].0 - center) / half_width).powi(c as i32));
        let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
        let coeffs = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| PhysicsError::Gripper(format!("calibration fit failed: {e}")))?;
        let curve = Self {
            coeffs: coeffs.iter().copied().collect(),
            center,
            half_width,
            input_range,
        };
        let mut prev = curve.eval(lo);
        for i in 1..MONOTONE_SAMPLES {
            let n = lo + (hi - lo) * i as f64 / (MONOTONE_SAMPLES - 1) as f64;
            let f = curve.eval(n);
            if !(f > prev) {
                return Err(PhysicsError::NonMonotone { degree, at: n });
            }
            prev = f;
        }
        Ok(curve)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Force in newtons at command `n`.
    pub fn eval(&self, n: f64) -> f64 {
        let x = (n - self.center) / self.half_width;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Forces at both ends of the enabled range.
    pub fn force_range(&self) -> (f64, f64) {
        (self.eval(self.input_range.0), self.eval(self.input_range.1))
    }

    /// Command producing `force`, clamped to the enabled range.
    pub fn command_for(&self, force: f64) -> f64 {
        let (lo, hi) = self.input_range;
        let (flo, fhi) = self.force_range();
        if force <= flo {
            return lo;
        }
        if force >= fhi {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..BISECTION_STEPS {
            let m = 0.5 * (a + b);
            if self.eval(m) < force {
                a = m;
            } else {
                b = m;
            }
            if b - a <= f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (a + b)
    }
}
