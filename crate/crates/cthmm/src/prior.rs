//! Prior specification and sampler tuning knobs, plus the log-density and
//! random-draw helpers shared by the fixed-dimension and trans-dimensional
//! samplers.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::ctmc::GeneratorMatrix;
use crate::emission::{CoefficientMatrix, EmissionFamily};
use crate::error::{Error, Result};
use crate::hmm::ModelState;
use ndarray::Array2;

/// Prior on the GLM coefficients. `Normal` applies to every coefficient
/// entry. `PoissonMeanGamma` places a Gamma prior on the Poisson mean
/// exp(beta) for intercept entries, with covariate rows left flat. `Flat` is
/// the improper uniform prior on every entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaPrior {
    Flat,
    Normal { mean: f64, sd: f64 },
    PoissonMeanGamma { shape: f64, rate: f64 },
}

impl BetaPrior {
    /// Log prior density of one coefficient entry; `row` 0 is the intercept.
    pub fn logpdf(&self, value: f64, row: usize) -> f64 {
        match self {
            BetaPrior::Flat => 0.0,
            BetaPrior::Normal { mean, sd } => ln_normal_pdf(value, *mean, *sd),
            BetaPrior::PoissonMeanGamma { shape, rate } => {
                if row == 0 {
                    // If exp(beta) ~ Gamma(a, b), then the density of beta is
                    // b^a / Gamma(a) * exp(a beta - b exp(beta)).
                    shape * rate.ln() - ln_gamma(*shape) + shape * value - rate * value.exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether the prior for this row is proper (integrable), i.e. can be
    /// sampled from.
    pub fn is_proper(&self, row: usize) -> bool {
        match self {
            BetaPrior::Flat => false,
            BetaPrior::Normal { .. } => true,
            BetaPrior::PoissonMeanGamma { .. } => row == 0,
        }
    }

    /// Draw one coefficient entry from the prior. Improper rows fall back to
    /// a standard Normal refresh so that chains exploring the prior stay
    /// proper; posterior inference never hits this branch with data attached.
    pub fn draw<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> f64 {
        match self {
            BetaPrior::Normal { mean, sd } => {
                Normal::new(*mean, *sd).unwrap().sample(rng)
            }
            BetaPrior::PoissonMeanGamma { shape, rate } if row == 0 => {
                let g: f64 = Gamma::new(*shape, 1.0 / *rate).unwrap().sample(rng);
                g.ln()
            }
            _ => Normal::new(0.0, 1.0).unwrap().sample(rng),
        }
    }
}

fn default_q_shape() -> f64 {
    1.0
}
fn default_q_rate() -> f64 {
    2.0
}
fn default_dirichlet_alpha() -> f64 {
    1.0
}
fn default_beta_prior() -> BetaPrior {
    BetaPrior::Flat
}
fn default_mh_step_sd() -> f64 {
    0.1
}
fn default_k_prior_rate() -> f64 {
    3.5
}
fn default_split_proposal_sd() -> f64 {
    0.5
}
fn default_move_prob_split() -> f64 {
    0.5
}
fn default_birth_rate() -> f64 {
    1.0
}
fn default_bd_time() -> f64 {
    1e-15
}
fn default_cluster_combine_prob() -> f64 {
    0.7
}
fn default_weight_dirichlet() -> f64 {
    1.0
}
fn default_k_cap() -> usize {
    15
}
fn default_m_cap() -> usize {
    10
}
fn default_m_prior_rate() -> f64 {
    3.0
}
fn default_rejection_cap() -> usize {
    10_000
}
fn default_bd_log_rate_cap() -> f64 {
    300.0
}

/// Priors and sampler tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Gamma shape for each generator off-diagonal entry.
    #[serde(default = "default_q_shape")]
    pub q_shape: f64,
    /// Gamma rate for each generator off-diagonal entry.
    #[serde(default = "default_q_rate")]
    pub q_rate: f64,
    /// Symmetric Dirichlet concentration for the initial distribution.
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "default_beta_prior")]
    pub beta_prior: BetaPrior,
    /// Initial random-walk scale for coefficient Metropolis updates.
    #[serde(default = "default_mh_step_sd")]
    pub mh_step_sd: f64,
    /// Poisson rate of the (truncated) prior on the number of hidden states.
    #[serde(default = "default_k_prior_rate")]
    pub k_prior_rate: f64,
    /// Scale c of the intercept draw in split proposals.
    #[serde(default = "default_split_proposal_sd")]
    pub split_proposal_sd: f64,
    /// Probability of proposing a split (vs. combine) at 1 < K < cap.
    #[serde(default = "default_move_prob_split")]
    pub move_prob_split: f64,
    /// Birth intensity of the birth-death sampler.
    #[serde(default = "default_birth_rate")]
    pub birth_rate: f64,
    /// Virtual time the birth-death process runs per sweep.
    #[serde(default = "default_bd_time")]
    pub bd_time: f64,
    /// Probability of proposing a component combine (vs. split) at
    /// 1 < M < cap.
    #[serde(default = "default_cluster_combine_prob")]
    pub cluster_combine_prob: f64,
    /// Symmetric Dirichlet concentration for the mixture weights.
    #[serde(default = "default_weight_dirichlet")]
    pub weight_dirichlet: f64,
    /// Hard cap on the number of hidden states.
    #[serde(default = "default_k_cap")]
    pub k_cap: usize,
    /// Hard cap on the number of mixture components.
    #[serde(default = "default_m_cap")]
    pub m_cap: usize,
    /// Poisson rate of the (truncated) prior on the number of components.
    #[serde(default = "default_m_prior_rate")]
    pub m_prior_rate: f64,
    /// Estimate the Gaussian dispersion by Metropolis updates instead of
    /// keeping it fixed.
    #[serde(default)]
    pub estimate_dispersion: bool,
    /// Rejection budget of the endpoint-conditioned sampler before the
    /// direct bridge fallback.
    #[serde(default = "default_rejection_cap")]
    pub rejection_cap: usize,
    /// Clamp on log death rates in the birth-death sampler.
    #[serde(default = "default_bd_log_rate_cap")]
    pub bd_log_rate_cap: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("q_shape", self.q_shape),
            ("q_rate", self.q_rate),
            ("dirichlet_alpha", self.dirichlet_alpha),
            ("mh_step_sd", self.mh_step_sd),
            ("k_prior_rate", self.k_prior_rate),
            ("split_proposal_sd", self.split_proposal_sd),
            ("birth_rate", self.birth_rate),
            ("bd_time", self.bd_time),
            ("weight_dirichlet", self.weight_dirichlet),
            ("m_prior_rate", self.m_prior_rate),
            ("bd_log_rate_cap", self.bd_log_rate_cap),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.move_prob_split > 0.0 && self.move_prob_split <= 1.0) {
            return Err(Error::Config(format!(
                "move_prob_split must be in (0,1], got {}",
                self.move_prob_split
            )));
        }
        if !(self.cluster_combine_prob > 0.0 && self.cluster_combine_prob < 1.0) {
            return Err(Error::Config(format!(
                "cluster_combine_prob must be in (0,1), got {}",
                self.cluster_combine_prob
            )));
        }
        if self.k_cap < 2 || self.m_cap < 2 {
            return Err(Error::Config("k_cap and m_cap must be at least 2".into()));
        }
        if let BetaPrior::Normal { sd, .. } = self.beta_prior {
            if !(sd > 0.0) {
                return Err(Error::Config(format!("beta prior sd must be positive, got {sd}")));
            }
        }
        if let BetaPrior::PoissonMeanGamma { shape, rate } = self.beta_prior {
            if !(shape > 0.0 && rate > 0.0) {
                return Err(Error::Config(
                    "beta prior Gamma parameters must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Probability of proposing a split at the given state count.
    pub fn split_prob(&self, k: usize) -> f64 {
        if k <= 1 {
            1.0
        } else if k >= self.k_cap {
            0.0
        } else {
            self.move_prob_split
        }
    }

    /// Probability of proposing a component split at the given count.
    pub fn component_split_prob(&self, m: usize) -> f64 {
        if m <= 1 {
            1.0
        } else if m >= self.m_cap {
            0.0
        } else {
            1.0 - self.cluster_combine_prob
        }
    }

    /// Log pmf of the truncated Poisson prior on the number of states.
    pub fn log_k_prior(&self, k: usize) -> f64 {
        truncated_poisson_log_pmf(k, self.k_prior_rate, self.k_cap)
    }

    /// Log pmf of the truncated Poisson prior on the number of components.
    pub fn log_m_prior(&self, m: usize) -> f64 {
        truncated_poisson_log_pmf(m, self.m_prior_rate, self.m_cap)
    }

    pub fn log_q_prior(&self, q: f64) -> f64 {
        ln_gamma_pdf(q, self.q_shape, self.q_rate)
    }

    pub fn draw_q_entry<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.q_shape, 1.0 / self.q_rate).unwrap().sample(rng)
    }

    /// Draw a K-state generator with iid off-diagonal entries from the prior.
    pub fn draw_generator<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> GeneratorMatrix {
        let mut rates = Array2::zeros((k, k));
        for l in 0..k {
            for m in 0..k {
                if l != m {
                    rates[[l, m]] = self.draw_q_entry(rng);
                }
            }
        }
        GeneratorMatrix::from_rates(rates).expect("prior draws are valid rates")
    }

    /// Draw a length-K initial distribution from the symmetric Dirichlet.
    pub fn draw_pi<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        draw_dirichlet(&vec![self.dirichlet_alpha; k], rng)
    }

    /// Draw a D x K coefficient matrix from the prior (improper rows refreshed
    /// standard Normal).
    pub fn draw_coeffs<R: Rng + ?Sized>(
        &self,
        predictor_dim: usize,
        k: usize,
        rng: &mut R,
    ) -> CoefficientMatrix {
        let mut m = Array2::zeros((predictor_dim, k));
        for d in 0..predictor_dim {
            for s in 0..k {
                m[[d, s]] = self.beta_prior.draw(d, rng);
            }
        }
        CoefficientMatrix::new(m).expect("prior draws are finite")
    }

    /// Draw a complete model with K states from the prior.
    pub fn draw_model<R: Rng + ?Sized>(
        &self,
        k: usize,
        predictor_dim: usize,
        family: &EmissionFamily,
        rng: &mut R,
    ) -> ModelState {
        ModelState {
            pi: self.draw_pi(k, rng),
            generator: self.draw_generator(k, rng),
            coeffs: self.draw_coeffs(predictor_dim, k, rng),
            family: family.clone(),
        }
    }

    /// Log prior density of the continuous parameters of a model, excluding
    /// the prior on K itself. Flat coefficient rows contribute zero.
    pub fn log_model_prior(&self, theta: &ModelState) -> f64 {
        let k = theta.num_states();
        let mut total = 0.0;
        for l in 0..k {
            for m in 0..k {
                if l != m {
                    total += self.log_q_prior(theta.generator.rate(l, m));
                }
            }
        }
        total += ln_dirichlet_pdf(&theta.pi, self.dirichlet_alpha);
        for d in 0..theta.coeffs.predictor_dim() {
            for s in 0..k {
                total += self.beta_prior.logpdf(theta.coeffs.coeffs()[[d, s]], d);
            }
        }
        total
    }
}

/// log Gamma(shape, rate) density at x.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// log Normal(mean, sd) density at x.
pub fn ln_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// log Beta(2,2) density at x: 6 x (1 - x).
pub fn ln_beta22_pdf(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    6.0f64.ln() + x.ln() + (1.0 - x).ln()
}

/// log symmetric Dirichlet(alpha) density of a simplex point.
pub fn ln_dirichlet_pdf(pi: &[f64], alpha: f64) -> f64 {
    let k = pi.len() as f64;
    let norm = ln_gamma(alpha * k) - k * ln_gamma(alpha);
    norm + pi.iter().map(|&p| (alpha - 1.0) * p.max(1e-300).ln()).sum::<f64>()
}

/// log pmf of Poisson(rate) truncated to {1, ..., cap}.
pub fn truncated_poisson_log_pmf(k: usize, rate: f64, cap: usize) -> f64 {
    if k == 0 || k > cap {
        return f64::NEG_INFINITY;
    }
    let raw = |j: usize| j as f64 * rate.ln() - ln_gamma(j as f64 + 1.0);
    let terms: Vec<f64> = (1..=cap).map(raw).collect();
    raw(k) - crate::hmm::log_sum_exp(&terms)
}

/// Draw from a Dirichlet with the given concentration vector.
pub fn draw_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    if alpha.len() == 1 {
        return vec![1.0];
    }
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng))
        .collect();
    let mut total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // Extremely small concentrations can underflow every component; fall
        // back to a uniform point rather than an invalid simplex.
        let k = alpha.len() as f64;
        return vec![1.0 / k; alpha.len()];
    }
    for d in draws.iter_mut() {
        *d /= total;
    }
    // Guard against round-off drift.
    total = draws.iter().sum();
    for d in draws.iter_mut() {
        *d /= total;
    }
    draws
}

/// Draw from Beta(2,2).
pub fn draw_beta22<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Beta::new(2.0, 2.0).unwrap().sample(rng)
}
