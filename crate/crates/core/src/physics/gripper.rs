use std::path::Path;

use serde::Deserialize;

use super::calibration::ForceCurve;
use super::PhysicsError;

/// Gripper description loaded from TOML:
///
/// ```toml
/// force_range = [1.0, 40.0]   # newtons
/// eta = 0.1
/// theta = 0.0                 # radians, 0 = lifting straight up
/// poly_degree = 5
/// input_range = [15.0, 100.0] # enabled normalized commands
/// tip_area = 0.00011          # m²
/// kappa_max = 0.5             # 1/m
/// calibration = """
/// 15 3.1
/// 20 5.0
/// """
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GripperProfile {
    pub name: String,
    pub force_range: (f64, f64),
    pub eta: f64,
    pub theta: f64,
    pub poly_degree: usize,
    pub input_range: (f64, f64),
    pub tip_area: f64,
    pub kappa_max: f64,
    /// `(command, newtons)` rows.
    pub calibration: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    #[serde(default)]
    name: String,
    force_range: [f64; 2],
    eta: f64,
    #[serde(default)]
    theta: f64,
    #[serde(default = "default_degree")]
    poly_degree: usize,
    #[serde(default = "default_input_range")]
    input_range: [f64; 2],
    #[serde(default = "default_tip_area")]
    tip_area: f64,
    #[serde(default = "default_kappa")]
    kappa_max: f64,
    calibration: String,
}

fn default_degree() -> usize {
    5
}
fn default_input_range() -> [f64; 2] {
    [15.0, 100.0]
}
fn default_tip_area() -> f64 {
    0.00011
}
fn default_kappa() -> f64 {
    0.5
}

impl GripperProfile {
    pub fn parse(text: &str) -> Result<Self, PhysicsError> {
        let raw: RawProfile = toml::from_str(text).map_err(|e| PhysicsError::Gripper(e.to_string()))?;
        let mut calibration = Vec::new();
        for (n, line) in raw.calibration.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            let row = parsed.ok_or_else(|| {
                PhysicsError::Gripper(format!("calibration row {}: expected `N_GF force_N`, got {line:?}", n + 1))
            })?;
            calibration.push(row);
        }
        let profile = Self {
            name: raw.name,
            force_range: (raw.force_range[0], raw.force_range[1]),
            eta: raw.eta,
            theta: raw.theta,
            poly_degree: raw.poly_degree,
            input_range: (raw.input_range[0], raw.input_range[1]),
            tip_area: raw.tip_area,
            kappa_max: raw.kappa_max,
            calibration,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, PhysicsError> {
        let text = std::fs::read_to_string(path).map_err(|e| PhysicsError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: String| Err(PhysicsError::Gripper(m));
        let (lo, hi) = self.force_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("force_range must satisfy 0 < lo < hi, got [{lo}, {hi}]"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must be in [0, 1], got {}", self.eta));
        }
        let (nlo, nhi) = self.input_range;
        if !(nlo < nhi) {
            return bad(format!("input_range [{nlo}, {nhi}] is empty"));
        }
        if let Some((n, _)) = self.calibration.iter().find(|(n, _)| *n < nlo || *n > nhi) {
            return bad(format!("calibration input {n} lies outside the enabled range [{nlo}, {nhi}]"));
        }
        if !(self.tip_area > 0.0 && self.kappa_max > 0.0) {
            return bad("tip_area and kappa_max must be positive".into());
        }
        Ok(())
    }

    pub fn force_curve(&self) -> Result<ForceCurve, PhysicsError> {
        ForceCurve::fit(&self.calibration, self.poly_degree, self.input_range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
name = "test"
force_range = [1.0, 40.0]
eta = 0.1
calibration = """
15 6   # lowest enabled command
40 16
60 24
80 32
100 40
20 8
"""
"#;

    #[test]
    fn parses_with_defaults() {
        let p = GripperProfile::parse(TEXT).unwrap();
        assert_eq!(p.poly_degree, 5);
        assert_eq!(p.input_range, (15.0, 100.0));
        assert_eq!(p.tip_area, 0.00011);
        assert_eq!(p.kappa_max, 0.5);
        assert_eq!(p.calibration.len(), 6);
        let c = p.force_curve().unwrap();
        assert!((c.command_for(20.0) - 50.0).abs() < 0.1);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(GripperProfile::parse(&TEXT.replace("eta = 0.1", "eta = 1.5")).is_err());
        assert!(GripperProfile::parse(&TEXT.replace("[1.0, 40.0]", "[40.0, 1.0]")).is_err());
        assert!(GripperProfile::parse(&TEXT.replace("15 6 ", "10 6 ")).is_err());
        assert!(GripperProfile::parse(&TEXT.replace("40 16", "40 sixteen")).is_err());
    }
}
