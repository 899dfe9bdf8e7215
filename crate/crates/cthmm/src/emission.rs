//! Observation model: Gaussian (identity link) and Poisson (log link)
//! emissions with a per-state linear predictor over optional covariates.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Emission family for the per-visit outcomes. Gaussian uses the identity
/// link with a single dispersion sigma shared across states; Poisson uses the
/// log link with unit dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmissionFamily {
    Gaussian { sigma: f64 },
    Poisson,
}

impl EmissionFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            EmissionFamily::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "Gaussian dispersion must be positive, got {sigma}"
                    )));
                }
            }
            EmissionFamily::Poisson => {}
        }
        Ok(())
    }

    pub fn is_poisson(&self) -> bool {
        matches!(self, EmissionFamily::Poisson)
    }
}

/// GLM coefficient matrix B, one column per hidden state. Row 0 is the
/// intercept; row d (d >= 1) multiplies covariate d-1.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    coeffs: Array2<f64>,
}

impl CoefficientMatrix {
    pub fn new(coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 || coeffs.ncols() == 0 {
            return Err(Error::Structure(
                "coefficient matrix must have at least one row and column".into(),
            ));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    /// Intercept-only coefficients, one per state.
    pub fn from_intercepts(intercepts: &[f64]) -> Result<Self> {
        let mut m = Array2::zeros((1, intercepts.len()));
        for (k, &v) in intercepts.iter().enumerate() {
            m[[0, k]] = v;
        }
        Self::new(m)
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array2<f64> {
        &mut self.coeffs
    }

    /// Number of predictor rows (1 + covariate dimension).
    pub fn predictor_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Linear predictor eta = beta_{1,k} + sum_d beta_{d+1,k} z_d.
    pub fn linear_predictor(&self, state: usize, covariates: &[f64]) -> Result<f64> {
        if covariates.len() + 1 != self.coeffs.nrows() {
            return Err(Error::Structure(format!(
                "covariate vector of length {} does not match predictor dimension {}",
                covariates.len(),
                self.coeffs.nrows()
            )));
        }
        let mut eta = self.coeffs[[0, state]];
        for (d, &z) in covariates.iter().enumerate() {
            eta += self.coeffs[[d + 1, state]] * z;
        }
        Ok(eta)
    }
}

/// Log-density of an outcome given covariates and a hidden state.
pub fn emission_logpdf(
    outcome: f64,
    covariates: &[f64],
    state: usize,
    coeffs: &CoefficientMatrix,
    family: &EmissionFamily,
) -> Result<f64> {
    let eta = coeffs.linear_predictor(state, covariates)?;
    match family {
        EmissionFamily::Gaussian { sigma } => {
            let z = (outcome - eta) / sigma;
            Ok(-0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
        }
        EmissionFamily::Poisson => {
            if outcome < 0.0 || outcome.fract() != 0.0 || !outcome.is_finite() {
                return Err(Error::Numeric(format!(
                    "Poisson outcome must be a nonnegative integer, got {outcome}"
                )));
            }
            let lambda = eta.exp();
            Ok(outcome * eta - lambda - ln_factorial(outcome))
        }
    }
}

fn ln_factorial(n: f64) -> f64 {
    statrs::function::gamma::ln_gamma(n + 1.0)
}

/// Draw one outcome from the emission model.
pub fn simulate_observation<R: Rng + ?Sized>(
    covariates: &[f64],
    state: usize,
    coeffs: &CoefficientMatrix,
    family: &EmissionFamily,
    rng: &mut R,
) -> Result<f64> {
    let eta = coeffs.linear_predictor(state, covariates)?;
    match family {
        EmissionFamily::Gaussian { sigma } => {
            let dist = Normal::new(eta, *sigma)
                .map_err(|e| Error::Numeric(format!("invalid Gaussian parameters: {e}")))?;
            Ok(dist.sample(rng))
        }
        EmissionFamily::Poisson => {
            let lambda = eta.exp();
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::Numeric(format!(
                    "Poisson mean exp({eta}) out of range"
                )));
            }
            let dist = Poisson::new(lambda)
                .map_err(|e| Error::Numeric(format!("invalid Poisson mean: {e}")))?;
            Ok(dist.sample(rng))
        }
    }
}
