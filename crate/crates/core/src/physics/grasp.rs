use serde::Serialize;

use super::PhysicsError;

/// Gravitational acceleration, m/s².
pub const G: f64 = 9.8;

/// Minimum squeeze that lifts parts of the given masses (kg) without slip,
/// with friction `mu` at the contact and lifting angle `theta` (0 = upward).
/// Negative values, where gravity is borne axially, clamp to 0.
pub fn f_min(masses: &[f64], mu: f64, theta: f64) -> Result<f64, PhysicsError> {
    if !(mu > 0.0) {
        return Err(PhysicsError::NonPositive { name: "friction_mu", value: mu });
    }
    let factor = theta.cos() / mu - theta.sin();
    let f: f64 = masses.iter().map(|m| 0.5 * m * G * factor).sum();
    Ok(f.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FmaxBranch {
    /// Yield stress governs: A·σ_y.
    Yield,
    /// Bending curvature governs: ½·A·E·d·κ_max.
    Bending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceParams {
    /// Force-bearing area, m².
    pub area: f64,
    /// Surface thickness, m.
    pub thickness: f64,
    /// Maximum tolerable bending curvature, 1/m.
    pub kappa_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fmax {
    pub value: f64,
    pub yield_limit: f64,
    pub bending_limit: f64,
    pub branch: FmaxBranch,
}

/// Damage-free force ceiling for a surface of Young's modulus `e` and yield
/// stress `sigma_y`.
pub fn f_max(surface: &SurfaceParams, e: f64, sigma_y: f64) -> Result<Fmax, PhysicsError> {
    for (name, value) in [
        ("area", surface.area),
        ("thickness", surface.thickness),
        ("kappa_max", surface.kappa_max),
        ("youngs_modulus", e),
        ("yield_stress", sigma_y),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(PhysicsError::NonPositive { name, value });
        }
    }
    let yield_limit = surface.area * sigma_y;
    let bending_limit = 0.5 * surface.area * e * surface.thickness * surface.kappa_max;
    let branch = if yield_limit <= bending_limit {
        FmaxBranch::Yield
    } else {
        FmaxBranch::Bending
    };
    Ok(Fmax {
        value: yield_limit.min(bending_limit),
        yield_limit,
        bending_limit,
        branch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceChoice {
    pub f_min: f64,
    pub f_max: f64,
    pub f_bar: f64,
    pub f_star: f64,
    pub delta_f: f64,
    /// Margined bounds used in the feasible branch.
    pub lower: f64,
    pub upper: f64,
    pub feasible: bool,
    /// Whether `f_bar` had to be moved to obtain `f_star`.
    pub clipped: bool,
}

fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Picks the commanded force: the interval midpoint, kept inside the gripper
/// range `(lo, hi)` and at least `eta·ΔF` away from both clipped bounds.
pub fn f_star(f_min: f64, f_max: f64, range: (f64, f64), eta: f64) -> ForceChoice {
    let (glo, ghi) = range;
    let f_bar = 0.5 * (f_min + f_max);
    let cmin = clip(f_min, glo, ghi);
    let cmax = clip(f_max, glo, ghi);
    let delta_f = (cmax - cmin).max(0.0);
    let feasible = f_min < f_max;
    let (lower, upper, f_star) = if feasible {
        let (lower, upper) = (cmin + eta * delta_f, cmax - eta * delta_f);
        // eta > 0.5 crosses the bounds; their common midpoint is the only fair pick.
        let f = if lower <= upper {
            clip(f_bar, lower, upper)
        } else {
            0.5 * (lower + upper)
        };
        (lower, upper, clip(f, glo, ghi))
    } else {
        (cmin, cmax, clip(f_bar, glo, ghi))
    };
    ForceChoice {
        f_min,
        f_max,
        f_bar,
        f_star,
        delta_f,
        lower,
        upper,
        feasible,
        clipped: f_star != f_bar,
    }
}
