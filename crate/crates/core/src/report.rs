//! Residual reports shared by the identity checks, the solver and the CLI.

use serde::{Deserialize, Serialize};

/// A named residual with the scale and tolerance it is judged against.
/// `pass` holds exactly when `residual <= tolerance * scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub residual: f64,
    pub scale: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: Option<u64>,
    pub algebra: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub deriv_mode: String,
}

impl ResidualReport {
    pub fn new(name: &str, residual: f64, scale: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            residual,
            scale,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance * scale,
            seed: None,
            algebra: String::new(),
            n: 0,
            deriv_mode: String::new(),
        }
    }

    pub fn with_meta(mut self, algebra: &str, n: usize, deriv_mode: &str) -> Self {
        self.algebra = algebra.to_string();
        self.n = n;
        self.deriv_mode = deriv_mode.to_string();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Residual divided by scale (infinite when the scale is zero and the residual is not).
    pub fn relative(&self) -> f64 {
        if self.residual == 0.0 {
            0.0
        } else {
            self.residual / self.scale
        }
    }
}

impl std::fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<32} residual {:.3e} scale {:.3e} tol {:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.residual,
            self.scale,
            self.tolerance
        )
    }
}
