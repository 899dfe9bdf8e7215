//! Discrete-skeleton HMM computations on the visit grid: forward-backward
//! smoothing, pairwise posteriors, and marginal / complete-data
//! log-likelihoods.

use std::collections::HashMap;

use ndarray::Array2;

use crate::ctmc::{GeneratorMatrix, LatentPath};
use crate::emission::{emission_logpdf, CoefficientMatrix, EmissionFamily};
use crate::error::{Error, Result};

/// One subject's irregularly spaced visit record.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub times: Vec<f64>,
    pub outcomes: Vec<f64>,
    /// One covariate vector per visit; all the same length.
    pub covariates: Vec<Vec<f64>>,
}

impl Subject {
    pub fn validate(&self) -> Result<()> {
        let t = self.times.len();
        if t == 0 {
            return Err(Error::Structure(format!("subject {} has no visits", self.id)));
        }
        if self.outcomes.len() != t || self.covariates.len() != t {
            return Err(Error::Structure(format!(
                "subject {}: times/outcomes/covariates lengths differ",
                self.id
            )));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Structure(format!(
                    "subject {}: visit times must be strictly increasing ({} then {})",
                    self.id, w[0], w[1]
                )));
            }
        }
        let d = self.covariates[0].len();
        if self.covariates.iter().any(|z| z.len() != d) {
            return Err(Error::Structure(format!(
                "subject {}: covariate dimension varies across visits",
                self.id
            )));
        }
        Ok(())
    }

    pub fn num_visits(&self) -> usize {
        self.times.len()
    }

    /// Gap between consecutive visits t and t+1.
    pub fn gap(&self, t: usize) -> f64 {
        self.times[t + 1] - self.times[t]
    }
}

/// A collection of subjects sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub subjects: Vec<Subject>,
}

impl ObservationSet {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        for s in &subjects {
            s.validate()?;
        }
        if let Some(first) = subjects.first() {
            let d = first.covariates[0].len();
            for s in &subjects {
                if s.covariates[0].len() != d {
                    return Err(Error::Structure(format!(
                        "subject {}: covariate dimension {} differs from {}",
                        s.id,
                        s.covariates[0].len(),
                        d
                    )));
                }
            }
        }
        Ok(Self { subjects })
    }

    pub fn covariate_dim(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.covariates[0].len())
    }
}

/// Full CTHMM parameter set Theta = {pi, Q, B} plus the emission family.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub pi: Vec<f64>,
    pub generator: GeneratorMatrix,
    pub coeffs: CoefficientMatrix,
    pub family: EmissionFamily,
}

impl ModelState {
    pub fn validate(&self) -> Result<()> {
        let k = self.generator.dim();
        if self.pi.len() != k {
            return Err(Error::Structure(format!(
                "initial distribution length {} differs from generator dim {k}",
                self.pi.len()
            )));
        }
        if self.coeffs.num_states() != k {
            return Err(Error::Structure(format!(
                "coefficient matrix has {} columns, generator dim {k}",
                self.coeffs.num_states()
            )));
        }
        let sum: f64 = self.pi.iter().sum();
        if self.pi.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Structure(format!(
                "initial distribution must be a probability vector, got {:?}",
                self.pi
            )));
        }
        self.family.validate()
    }

    pub fn num_states(&self) -> usize {
        self.generator.dim()
    }
}

/// Smoothed posteriors from forward-backward: per-visit state marginals
/// a[n][t, k], per-gap pairwise posteriors b[n][t][k, j] (state at visit t and
/// t+1 jointly), and per-subject log marginal likelihoods.
#[derive(Debug, Clone)]
pub struct SmoothedQuantities {
    pub marginals: Vec<Array2<f64>>,
    pub pairwise: Vec<Vec<Array2<f64>>>,
    pub subject_loglik: Vec<f64>,
}

impl SmoothedQuantities {
    pub fn total_loglik(&self) -> f64 {
        self.subject_loglik.iter().sum()
    }
}

/// Memoizes transition kernels per distinct gap length for one fixed Theta.
/// Gaps repeat often under rounded time grids, and the matrix exponential is
/// the dominant cost.
pub struct KernelCache<'a> {
    generator: &'a GeneratorMatrix,
    cache: HashMap<u64, Array2<f64>>,
}

impl<'a> KernelCache<'a> {
    pub fn new(generator: &'a GeneratorMatrix) -> Self {
        Self {
            generator,
            cache: HashMap::new(),
        }
    }

    pub fn kernel(&mut self, delta: f64) -> Result<&Array2<f64>> {
        let key = delta.to_bits();
        if !self.cache.contains_key(&key) {
            let p = self.generator.transition_matrix(delta)?;
            self.cache.insert(key, p);
        }
        Ok(self.cache.get(&key).unwrap())
    }
}

/// Per-visit emission log-densities for one subject, K columns.
fn emission_log_weights(subject: &Subject, theta: &ModelState) -> Result<Array2<f64>> {
    let t_n = subject.num_visits();
    let k = theta.num_states();
    let mut lw = Array2::zeros((t_n, k));
    for t in 0..t_n {
        for state in 0..k {
            lw[[t, state]] = emission_logpdf(
                subject.outcomes[t],
                &subject.covariates[t],
                state,
                &theta.coeffs,
                &theta.family,
            )?;
        }
    }
    Ok(lw)
}

struct ForwardResult {
    /// Scaled forward vectors, rows normalized to sum 1.
    alpha: Array2<f64>,
    loglik: f64,
}

fn forward_pass(
    subject: &Subject,
    theta: &ModelState,
    log_weights: &Array2<f64>,
    kernels: &mut KernelCache,
) -> Result<ForwardResult> {
    let t_n = subject.num_visits();
    let k = theta.num_states();
    let mut alpha = Array2::zeros((t_n, k));
    let mut loglik = 0.0;
    for t in 0..t_n {
        // Stabilize the emission weights before exponentiating.
        let row_max = (0..k)
            .map(|s| log_weights[[t, s]])
            .fold(f64::NEG_INFINITY, f64::max);
        if row_max == f64::NEG_INFINITY {
            return Err(Error::LikelihoodImpossible {
                subject: subject.id.clone(),
                visit: t,
            });
        }
        let mut norm = 0.0;
        for s in 0..k {
            let prior = if t == 0 {
                theta.pi[s]
            } else {
                let p = kernels.kernel(subject.gap(t - 1))?;
                (0..k).map(|r| alpha[[t - 1, r]] * p[[r, s]]).sum()
            };
            let v = prior * (log_weights[[t, s]] - row_max).exp();
            alpha[[t, s]] = v;
            norm += v;
        }
        if !(norm > 0.0) {
            return Err(Error::LikelihoodImpossible {
                subject: subject.id.clone(),
                visit: t,
            });
        }
        for s in 0..k {
            alpha[[t, s]] /= norm;
        }
        loglik += norm.ln() + row_max;
    }
    Ok(ForwardResult { alpha, loglik })
}

/// Forward-backward smoothing for one subject. Returns the visit-state
/// marginals, the pairwise posteriors for each gap, and the log marginal
/// likelihood.
fn smooth_subject(
    subject: &Subject,
    theta: &ModelState,
    kernels: &mut KernelCache,
) -> Result<(Array2<f64>, Vec<Array2<f64>>, f64)> {
    let t_n = subject.num_visits();
    let k = theta.num_states();
    let log_weights = emission_log_weights(subject, theta)?;
    let fwd = forward_pass(subject, theta, &log_weights, kernels)?;

    // Scaled backward vectors; beta[t] is normalized to max 1 per row.
    let mut beta = Array2::ones((t_n, k));
    for t in (0..t_n.saturating_sub(1)).rev() {
        let p = kernels.kernel(subject.gap(t))?.clone();
        let row_max = (0..k)
            .map(|s| log_weights[[t + 1, s]])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut max_v = 0.0f64;
        for s in 0..k {
            let mut v = 0.0;
            for j in 0..k {
                v += p[[s, j]] * (log_weights[[t + 1, j]] - row_max).exp() * beta[[t + 1, j]];
            }
            beta[[t, s]] = v;
            max_v = max_v.max(v);
        }
        if !(max_v > 0.0) {
            return Err(Error::LikelihoodImpossible {
                subject: subject.id.clone(),
                visit: t,
            });
        }
        for s in 0..k {
            beta[[t, s]] /= max_v;
        }
    }

    let mut marginals = Array2::zeros((t_n, k));
    for t in 0..t_n {
        let mut norm = 0.0;
        for s in 0..k {
            let v = fwd.alpha[[t, s]] * beta[[t, s]];
            marginals[[t, s]] = v;
            norm += v;
        }
        for s in 0..k {
            marginals[[t, s]] /= norm;
        }
    }

    let mut pairwise = Vec::with_capacity(t_n.saturating_sub(1));
    for t in 0..t_n.saturating_sub(1) {
        let p = kernels.kernel(subject.gap(t))?.clone();
        let row_max = (0..k)
            .map(|s| log_weights[[t + 1, s]])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut joint = Array2::zeros((k, k));
        let mut norm = 0.0;
        for s in 0..k {
            for j in 0..k {
                let v = fwd.alpha[[t, s]]
                    * p[[s, j]]
                    * (log_weights[[t + 1, j]] - row_max).exp()
                    * beta[[t + 1, j]];
                joint[[s, j]] = v;
                norm += v;
            }
        }
        if !(norm > 0.0) {
            return Err(Error::LikelihoodImpossible {
                subject: subject.id.clone(),
                visit: t + 1,
            });
        }
        joint.mapv_inplace(|v| v / norm);
        pairwise.push(joint);
    }

    Ok((marginals, pairwise, fwd.loglik))
}

/// Forward-backward smoothing across a set of subjects under one Theta.
pub fn forward_backward(subjects: &[&Subject], theta: &ModelState) -> Result<SmoothedQuantities> {
    theta.validate()?;
    let mut kernels = KernelCache::new(&theta.generator);
    let mut marginals = Vec::with_capacity(subjects.len());
    let mut pairwise = Vec::with_capacity(subjects.len());
    let mut subject_loglik = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let (m, pw, ll) = smooth_subject(subject, theta, &mut kernels)?;
        marginals.push(m);
        pairwise.push(pw);
        subject_loglik.push(ll);
    }
    Ok(SmoothedQuantities {
        marginals,
        pairwise,
        subject_loglik,
    })
}

/// Incomplete-data log-likelihood summed over subjects.
pub fn marginal_loglik(subjects: &[&Subject], theta: &ModelState) -> Result<f64> {
    theta.validate()?;
    let mut kernels = KernelCache::new(&theta.generator);
    let mut total = 0.0;
    for subject in subjects {
        let log_weights = emission_log_weights(subject, theta)?;
        total += forward_pass(subject, theta, &log_weights, &mut kernels)?.loglik;
    }
    Ok(total)
}

/// Complete-data log-likelihood given fully observed latent paths, one per
/// subject, each spanning that subject's observation window.
pub fn complete_data_loglik(
    subjects: &[&Subject],
    paths: &[LatentPath],
    theta: &ModelState,
) -> Result<f64> {
    theta.validate()?;
    if subjects.len() != paths.len() {
        return Err(Error::Structure(format!(
            "{} subjects but {} latent paths",
            subjects.len(),
            paths.len()
        )));
    }
    let k = theta.num_states();
    let mut total = 0.0;
    for (subject, path) in subjects.iter().zip(paths) {
        let t0 = subject.times[0];
        let t1 = *subject.times.last().unwrap();
        if (path.start_time - t0).abs() > 1e-9 || path.end_time + 1e-9 < t1 {
            return Err(Error::Structure(format!(
                "path [{}, {}] does not span subject {}'s window [{t0}, {t1}]",
                path.start_time, path.end_time, subject.id
            )));
        }
        let start = path.start_state();
        if theta.pi[start] <= 0.0 {
            return Err(Error::LikelihoodImpossible {
                subject: subject.id.clone(),
                visit: 0,
            });
        }
        total += theta.pi[start].ln();
        let stats = path.statistics(k);
        for l in 0..k {
            for m in 0..k {
                if l == m {
                    continue;
                }
                let n_lm = stats.jump_counts[[l, m]];
                if n_lm > 0 {
                    let q = theta.generator.rate(l, m);
                    if q <= 0.0 {
                        return Err(Error::Structure(format!(
                            "path jumps {l}->{m} but the generator rate is zero"
                        )));
                    }
                    total += n_lm as f64 * q.ln();
                }
                total -= theta.generator.rate(l, m) * stats.occupancy[l];
            }
        }
        for t in 0..subject.num_visits() {
            let state = path.state_at(subject.times[t]);
            total += emission_logpdf(
                subject.outcomes[t],
                &subject.covariates[t],
                state,
                &theta.coeffs,
                &theta.family,
            )?;
        }
    }
    Ok(total)
}

/// Brute-force marginal log-likelihood by summing over every state sequence.
/// Exponential in the number of visits; used as a test oracle and kept here so
/// integration tests can reuse it.
pub fn enumerate_loglik(subjects: &[&Subject], theta: &ModelState) -> Result<f64> {
    theta.validate()?;
    let k = theta.num_states();
    let mut kernels = KernelCache::new(&theta.generator);
    let mut total = 0.0;
    for subject in subjects {
        let t_n = subject.num_visits();
        let log_weights = emission_log_weights(subject, theta)?;
        let num_seqs = k.checked_pow(t_n as u32).ok_or_else(|| {
            Error::Structure("state-sequence enumeration overflow".into())
        })?;
        let mut lls = Vec::with_capacity(num_seqs);
        for code in 0..num_seqs {
            let mut c = code;
            let mut seq = Vec::with_capacity(t_n);
            for _ in 0..t_n {
                seq.push(c % k);
                c /= k;
            }
            let mut ll = theta.pi[seq[0]].ln() + log_weights[[0, seq[0]]];
            for t in 1..t_n {
                let p = kernels.kernel(subject.gap(t - 1))?;
                ll += p[[seq[t - 1], seq[t]]].ln() + log_weights[[t, seq[t]]];
            }
            lls.push(ll);
        }
        total += log_sum_exp(&lls);
    }
    Ok(total)
}

/// Numerically stable log(sum(exp(x))).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
