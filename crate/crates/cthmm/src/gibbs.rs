//! Fixed-dimension Metropolis-within-Gibbs sweep: latent indicator draws,
//! coefficient Metropolis updates, Dirichlet update of the initial
//! distribution, and the generator update by endpoint sampling, path
//! augmentation, and Gamma conjugacy.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::ctmc::{sample_categorical, PathStatistics};
use crate::emission::emission_logpdf;
use crate::error::{Error, Result};
use crate::hmm::{forward_backward, ModelState, SmoothedQuantities, Subject};
use crate::prior::{draw_dirichlet, PriorConfig};

/// What the sweep targets: the posterior given data, or the prior alone
/// (likelihood treated as constant — used by sampler-correctness checks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikTarget {
    Data,
    PriorOnly,
}

/// Mutable sampler state for one model: current parameters, latent visit
/// indicators, cached smoothed quantities, and the adapted Metropolis scale.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub theta: ModelState,
    /// indicators[n][t] is the assigned hidden state of subject n at visit t.
    pub indicators: Vec<Vec<usize>>,
    pub smoothed: Option<SmoothedQuantities>,
    pub log_marginal: f64,
    pub step_sd: f64,
    pub adapting: bool,
    accepted: u64,
    proposed: u64,
}

impl SamplerState {
    /// Initialize from a model, computing smoothed quantities and seeding the
    /// indicators at the marginal argmax.
    pub fn new(theta: ModelState, subjects: &[&Subject], config: &PriorConfig) -> Result<Self> {
        let mut state = Self {
            theta,
            indicators: Vec::new(),
            smoothed: None,
            log_marginal: 0.0,
            step_sd: config.mh_step_sd,
            adapting: true,
            accepted: 0,
            proposed: 0,
        };
        state.refresh(subjects)?;
        state.indicators = state
            .smoothed
            .as_ref()
            .unwrap()
            .marginals
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|t| {
                        (0..m.ncols())
                            .max_by(|&a, &b| m[[t, a]].partial_cmp(&m[[t, b]]).unwrap())
                            .unwrap()
                    })
                    .collect()
            })
            .collect();
        Ok(state)
    }

    /// Recompute smoothed quantities and the marginal log-likelihood under
    /// the current parameters.
    pub fn refresh(&mut self, subjects: &[&Subject]) -> Result<()> {
        let sq = forward_backward(subjects, &self.theta)?;
        self.log_marginal = sq.total_loglik();
        self.smoothed = Some(sq);
        Ok(())
    }

    /// Stop adapting the Metropolis scale (call at end of burn-in).
    pub fn freeze_adaptation(&mut self) {
        self.adapting = false;
    }

    fn record_proposal(&mut self, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    fn adapt_step(&mut self) {
        if !self.adapting || self.proposed == 0 {
            return;
        }
        let rate = self.accepted as f64 / self.proposed as f64;
        // Nudge toward the standard random-walk target rate.
        self.step_sd *= ((rate - 0.23) * 0.2).exp();
        self.step_sd = self.step_sd.clamp(1e-4, 50.0);
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// Draw each visit's hidden-state indicator from the smoothed marginals.
pub fn update_state_indicators<R: Rng + ?Sized>(
    state: &mut SamplerState,
    rng: &mut R,
) -> Result<()> {
    let smoothed = state
        .smoothed
        .as_ref()
        .ok_or_else(|| Error::Structure("smoothed quantities not current".into()))?;
    let mut indicators = Vec::with_capacity(smoothed.marginals.len());
    for m in &smoothed.marginals {
        let mut per_subject = Vec::with_capacity(m.nrows());
        for t in 0..m.nrows() {
            let row: Vec<f64> = (0..m.ncols()).map(|k| m[[t, k]]).collect();
            per_subject.push(sample_categorical(&row, rng)?);
        }
        indicators.push(per_subject);
    }
    state.indicators = indicators;
    Ok(())
}

/// Conditional log-target of one coefficient column entry given indicators:
/// emission terms of the visits assigned to `target_state` plus the prior.
fn coeff_conditional(
    state: &SamplerState,
    subjects: &[&Subject],
    target_state: usize,
    config: &PriorConfig,
    row: usize,
) -> Result<f64> {
    let mut total = config.beta_prior.logpdf(
        state.theta.coeffs.coeffs()[[row, target_state]],
        row,
    );
    for (n, subject) in subjects.iter().enumerate() {
        for t in 0..subject.num_visits() {
            if state.indicators[n][t] == target_state {
                total += emission_logpdf(
                    subject.outcomes[t],
                    &subject.covariates[t],
                    target_state,
                    &state.theta.coeffs,
                    &state.theta.family,
                )?;
            }
        }
    }
    Ok(total)
}

/// Random-walk Metropolis update of every coefficient entry (and of the
/// Gaussian dispersion when `estimate_dispersion` is set). In prior-only
/// mode, entries with a proper prior are redrawn from it exactly; flat
/// entries are left unchanged.
pub fn update_emission_params<R: Rng + ?Sized>(
    state: &mut SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<()> {
    let d = state.theta.coeffs.predictor_dim();
    let k = state.theta.coeffs.num_states();
    if target == LikTarget::PriorOnly {
        for row in 0..d {
            for col in 0..k {
                if config.beta_prior.is_proper(row) {
                    state.theta.coeffs.coeffs_mut()[[row, col]] =
                        config.beta_prior.draw(row, rng);
                }
            }
        }
        return Ok(());
    }
    let proposal = Normal::new(0.0, state.step_sd)
        .map_err(|e| Error::Numeric(format!("invalid proposal scale: {e}")))?;
    for row in 0..d {
        for col in 0..k {
            let current = state.theta.coeffs.coeffs()[[row, col]];
            let current_target = coeff_conditional(state, subjects, col, config, row)?;
            let candidate = current + proposal.sample(rng);
            state.theta.coeffs.coeffs_mut()[[row, col]] = candidate;
            let candidate_target = coeff_conditional(state, subjects, col, config, row)?;
            let log_alpha = candidate_target - current_target;
            let accept = log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha;
            if !accept {
                state.theta.coeffs.coeffs_mut()[[row, col]] = current;
            }
            state.record_proposal(accept);
        }
    }
    if config.estimate_dispersion {
        update_dispersion(state, subjects, rng)?;
    }
    state.adapt_step();
    Ok(())
}

/// Metropolis update of the Gaussian sigma on the log scale with a flat
/// positive prior.
fn update_dispersion<R: Rng + ?Sized>(
    state: &mut SamplerState,
    subjects: &[&Subject],
    rng: &mut R,
) -> Result<()> {
    use crate::emission::EmissionFamily;
    let sigma = match state.theta.family {
        EmissionFamily::Gaussian { sigma } => sigma,
        EmissionFamily::Poisson => return Ok(()),
    };
    let emission_total = |st: &SamplerState| -> Result<f64> {
        let mut total = 0.0;
        for (n, subject) in subjects.iter().enumerate() {
            for t in 0..subject.num_visits() {
                total += emission_logpdf(
                    subject.outcomes[t],
                    &subject.covariates[t],
                    st.indicators[n][t],
                    &st.theta.coeffs,
                    &st.theta.family,
                )?;
            }
        }
        Ok(total)
    };
    let current_ll = emission_total(state)?;
    let candidate = (sigma.ln() + Normal::new(0.0, 0.2).unwrap().sample(rng)).exp();
    let old_family = state.theta.family.clone();
    state.theta.family = EmissionFamily::Gaussian { sigma: candidate };
    let candidate_ll = emission_total(state)?;
    // Log-scale random walk on a flat positive prior: the Jacobian contributes
    // log(candidate/sigma).
    let log_alpha = candidate_ll - current_ll + candidate.ln() - sigma.ln();
    if !(log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha) {
        state.theta.family = old_family;
    }
    Ok(())
}

/// Dirichlet update of the initial distribution from first-visit indicators.
pub fn update_initial_distribution<R: Rng + ?Sized>(
    state: &mut SamplerState,
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) {
    let k = state.theta.num_states();
    if k == 1 {
        state.theta.pi = vec![1.0];
        return;
    }
    let mut alpha = vec![config.dirichlet_alpha; k];
    if target == LikTarget::Data {
        for per_subject in &state.indicators {
            alpha[per_subject[0]] += 1.0;
        }
    }
    state.theta.pi = draw_dirichlet(&alpha, rng);
}

/// Accumulated path statistics over all subjects' inter-visit intervals,
/// obtained by sampling endpoint pairs from the pairwise posteriors and then
/// endpoint-conditioned paths under the current generator.
pub fn augment_paths<R: Rng + ?Sized>(
    state: &SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    rng: &mut R,
) -> Result<PathStatistics> {
    let smoothed = state
        .smoothed
        .as_ref()
        .ok_or_else(|| Error::Structure("smoothed quantities not current".into()))?;
    let k = state.theta.num_states();
    let mut stats = PathStatistics::zeros(k);
    for (n, subject) in subjects.iter().enumerate() {
        for t in 0..subject.num_visits().saturating_sub(1) {
            let b = &smoothed.pairwise[n][t];
            let weights: Vec<f64> = b.iter().copied().collect();
            let idx = sample_categorical(&weights, rng).map_err(|e| {
                Error::Sampling(format!(
                    "endpoint draw failed for subject {} interval {t}: {e}",
                    subject.id
                ))
            })?;
            let (start, end) = (idx / k, idx % k);
            let path = state
                .theta
                .generator
                .endpoint_conditioned_path(start, end, subject.gap(t), rng, config.rejection_cap)
                .map_err(|e| {
                    Error::Sampling(format!(
                        "path augmentation failed for subject {} interval {t}: {e}",
                        subject.id
                    ))
                })?;
            stats.accumulate(&path.statistics(k));
        }
    }
    Ok(stats)
}

/// Draw a generator entrywise from the Gamma conjugate posterior given path
/// statistics.
pub fn draw_generator_given_stats<R: Rng + ?Sized>(
    stats: &PathStatistics,
    k: usize,
    config: &PriorConfig,
    rng: &mut R,
) -> Result<crate::ctmc::GeneratorMatrix> {
    let mut rates = Array2::zeros((k, k));
    for l in 0..k {
        for m in 0..k {
            if l == m {
                continue;
            }
            let shape = stats.jump_counts[[l, m]] as f64 + config.q_shape;
            let rate = stats.occupancy[l] + config.q_rate;
            rates[[l, m]] = Gamma::new(shape, 1.0 / rate)
                .map_err(|e| Error::Numeric(format!("invalid Gamma posterior: {e}")))?
                .sample(rng);
        }
    }
    crate::ctmc::GeneratorMatrix::from_rates(rates)
}

/// Generator update: path augmentation followed by the entrywise Gamma
/// conjugate draw. In prior-only mode, draws the generator from the prior.
pub fn update_generator<R: Rng + ?Sized>(
    state: &mut SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<()> {
    let k = state.theta.num_states();
    if target == LikTarget::PriorOnly {
        state.theta.generator = config.draw_generator(k, rng);
        return Ok(());
    }
    let stats = augment_paths(state, subjects, config, rng)?;
    state.theta.generator = draw_generator_given_stats(&stats, k, config, rng)?;
    Ok(())
}

/// One full sweep: indicators, coefficients, initial distribution, generator,
/// then refresh of the smoothed quantities.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<()> {
    if target == LikTarget::Data {
        update_state_indicators(state, rng)?;
    }
    update_emission_params(state, subjects, config, target, rng)?;
    update_initial_distribution(state, config, target, rng);
    update_generator(state, subjects, config, target, rng)?;
    if target == LikTarget::Data {
        state.refresh(subjects)?;
    } else {
        state.log_marginal = 0.0;
        state.smoothed = None;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::GeneratorMatrix;
    use crate::emission::{CoefficientMatrix, EmissionFamily};
    use crate::prior::BetaPrior;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn simple_subject(id: &str, outcomes: &[f64]) -> Subject {
        Subject {
            id: id.into(),
            times: (0..outcomes.len()).map(|t| t as f64).collect(),
            outcomes: outcomes.to_vec(),
            covariates: vec![vec![]; outcomes.len()],
        }
    }

    fn two_state_model() -> ModelState {
        ModelState {
            pi: vec![0.5, 0.5],
            generator: GeneratorMatrix::from_rates(array![[0.0, 0.8], [0.3, 0.0]]).unwrap(),
            coeffs: CoefficientMatrix::from_intercepts(&[-1.0, 1.0]).unwrap(),
            family: EmissionFamily::Gaussian { sigma: 1.0 },
        }
    }

    #[test]
    fn degenerate_marginals_give_deterministic_indicators() {
        let subject = simple_subject("a", &[-5.0, -5.0, -5.0]);
        let subjects = [&subject];
        let config = PriorConfig::default();
        let mut state = SamplerState::new(two_state_model(), &subjects, &config).unwrap();
        // Force a point-mass marginal.
        let sq = state.smoothed.as_mut().unwrap();
        for m in sq.marginals.iter_mut() {
            for t in 0..m.nrows() {
                m[[t, 0]] = 1.0;
                m[[t, 1]] = 0.0;
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        update_state_indicators(&mut state, &mut rng).unwrap();
        assert_eq!(state.indicators, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn single_state_indicators_all_zero() {
        let subject = simple_subject("a", &[0.1, 0.4]);
        let subjects = [&subject];
        let config = PriorConfig::default();
        let theta = ModelState {
            pi: vec![1.0],
            generator: GeneratorMatrix::trivial(),
            coeffs: CoefficientMatrix::from_intercepts(&[0.0]).unwrap(),
            family: EmissionFamily::Gaussian { sigma: 1.0 },
        };
        let mut state = SamplerState::new(theta, &subjects, &config).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(52);
        update_state_indicators(&mut state, &mut rng).unwrap();
        assert_eq!(state.indicators, vec![vec![0, 0]]);
    }

    #[test]
    fn indicator_frequencies_match_marginals() {
        let subject = simple_subject("a", &[0.0]);
        let subjects = [&subject];
        let config = PriorConfig::default();
        let mut state = SamplerState::new(two_state_model(), &subjects, &config).unwrap();
        let sq = state.smoothed.as_mut().unwrap();
        sq.marginals[0][[0, 0]] = 0.3;
        sq.marginals[0][[0, 1]] = 0.7;
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let n = 100_000;
        let mut count0 = 0;
        for _ in 0..n {
            update_state_indicators(&mut state, &mut rng).unwrap();
            if state.indicators[0][0] == 0 {
                count0 += 1;
            }
        }
        let p = count0 as f64 / n as f64;
        let se = (0.3 * 0.7 / n as f64).sqrt();
        assert!((p - 0.3).abs() < 3.0 * se, "frequency {p}");
    }

    #[test]
    fn zero_step_leaves_coefficients_fixed() {
        let subject = simple_subject("a", &[0.2, -0.4, 1.0]);
        let subjects = [&subject];
        let config = PriorConfig::default();
        let mut state = SamplerState::new(two_state_model(), &subjects, &config).unwrap();
        state.step_sd = 0.0;
        state.adapting = false;
        let before = state.theta.coeffs.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(54);
        update_emission_params(&mut state, &subjects, &config, LikTarget::Data, &mut rng)
            .unwrap();
        assert_eq!(state.theta.coeffs, before);
    }

    #[test]
    fn gaussian_single_state_posterior_matches_conjugate() {
        // One state, sigma = 1, flat prior: beta | o ~ N(mean(o), 1/n).
        let outcomes = [0.8, 1.4, 0.3, 1.0, 0.6, 1.2, 0.9, 0.5];
        let subject = simple_subject("a", &outcomes);
        let subjects = [&subject];
        let config = PriorConfig::default();
        let theta = ModelState {
            pi: vec![1.0],
            generator: GeneratorMatrix::trivial(),
            coeffs: CoefficientMatrix::from_intercepts(&[0.0]).unwrap(),
            family: EmissionFamily::Gaussian { sigma: 1.0 },
        };
        let mut state = SamplerState::new(theta, &subjects, &config).unwrap();
        state.indicators = vec![vec![0; outcomes.len()]];
        state.step_sd = 0.5;
        state.adapting = false;
        let mut rng = ChaCha20Rng::seed_from_u64(55);
        let iters = 60_000;
        let burn = 2_000;
        let mut sum = 0.0;
        for i in 0..iters {
            update_emission_params(&mut state, &subjects, &config, LikTarget::Data, &mut rng)
                .unwrap();
            if i >= burn {
                sum += state.theta.coeffs.coeffs()[[0, 0]];
            }
        }
        let post_mean = sum / (iters - burn) as f64;
        let expected = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
        // Posterior sd is 1/sqrt(8); allow generous MCMC error.
        assert!(
            (post_mean - expected).abs() < 0.02,
            "posterior mean {post_mean} vs conjugate {expected}"
        );
    }

    #[test]
    fn poisson_single_state_posterior_matches_gamma_conjugate() {
        // Intercept-only Poisson with Gamma(10, 10) prior on exp(beta):
        // exp(beta) | o ~ Gamma(sum o + 10, n + 10).
        let outcomes = [2.0, 4.0, 3.0, 5.0, 1.0, 2.0, 6.0, 3.0, 4.0, 2.0];
        let subject = simple_subject("a", &outcomes);
        let subjects = [&subject];
        let config = PriorConfig {
            beta_prior: BetaPrior::PoissonMeanGamma {
                shape: 10.0,
                rate: 10.0,
            },
            ..PriorConfig::default()
        };
        let theta = ModelState {
            pi: vec![1.0],
            generator: GeneratorMatrix::trivial(),
            coeffs: CoefficientMatrix::from_intercepts(&[1.0]).unwrap(),
            family: EmissionFamily::Poisson,
        };
        let mut state = SamplerState::new(theta, &subjects, &config).unwrap();
        state.indicators = vec![vec![0; outcomes.len()]];
        state.step_sd = 0.3;
        state.adapting = false;
        let mut rng = ChaCha20Rng::seed_from_u64(56);
        let iters = 80_000;
        let burn = 5_000;
        let mut sum = 0.0;
        for i in 0..iters {
            update_emission_params(&mut state, &subjects, &config, LikTarget::Data, &mut rng)
                .unwrap();
            if i >= burn {
                sum += state.theta.coeffs.coeffs()[[0, 0]].exp();
            }
        }
        let post_mean = sum / (iters - burn) as f64;
        let expected = (outcomes.iter().sum::<f64>() + 10.0) / (outcomes.len() as f64 + 10.0);
        assert!(
            (post_mean - expected).abs() < 0.05,
            "posterior mean {post_mean} vs conjugate {expected}"
        );
    }

    #[test]
    fn pi_update_matches_dirichlet_multinomial() {
        // All subjects assigned to state 0 at visit 1 with alpha = 1:
        // E[pi_0] = (N + 1) / (N + K).
        let subjects_owned: Vec<Subject> = (0..6)
            .map(|i| simple_subject(&format!("s{i}"), &[0.0, 0.1]))
            .collect();
        let subjects: Vec<&Subject> = subjects_owned.iter().collect();
        let config = PriorConfig::default();
        let mut state = SamplerState::new(two_state_model(), &subjects, &config).unwrap();
        state.indicators = vec![vec![0, 0]; 6];
        let mut rng = ChaCha20Rng::seed_from_u64(57);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            update_initial_distribution(&mut state, &config, LikTarget::Data, &mut rng);
            sum += state.theta.pi[0];
        }
        let mean = sum / n as f64;
        let expected = 7.0 / 8.0;
        // Var of Beta(7,1) = 7/(64*9).
        let se = ((7.0 / (64.0 * 9.0)) / n as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn pi_prior_draw_without_subjects() {
        let subject = simple_subject("a", &[0.0]);
        let subjects = [&subject];
        let config = PriorConfig::default();
        let mut state = SamplerState::new(two_state_model(), &subjects, &config).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(58);
        let n = 50_000;
        let mut sum = 0.0;
        for _ in 0..n {
            update_initial_distribution(&mut state, &config, LikTarget::PriorOnly, &mut rng);
            sum += state.theta.pi[0];
        }
        let mean = sum / n as f64;
        // Dirichlet(1,1) marginal is Uniform(0,1).
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn generator_conjugate_arithmetic() {
        // N_{01} = 5, R_0 = 10, a = 1, b = 2 -> Gamma(6, 12), mean 0.5.
        let mut stats = PathStatistics::zeros(2);
        stats.jump_counts[[0, 1]] = 5;
        stats.occupancy[0] = 10.0;
        let config = PriorConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(59);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let g = draw_generator_given_stats(&stats, 2, &config, &mut rng).unwrap();
            sum += g.rate(0, 1);
        }
        let mean = sum / n as f64;
        // Var of Gamma(6,12) = 6/144.
        let se = ((6.0 / 144.0) / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn generator_prior_draw_with_zero_stats() {
        let stats = PathStatistics::zeros(2);
        let config = PriorConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(60);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let g = draw_generator_given_stats(&stats, 2, &config, &mut rng).unwrap();
            sum += g.rate(1, 0);
        }
        let mean = sum / n as f64;
        // Gamma(1,2) has mean 0.5, variance 0.25.
        let se = (0.25 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn sweep_preserves_invariants_and_replays_deterministically() {
        let subjects_owned: Vec<Subject> = (0..4)
            .map(|i| {
                simple_subject(
                    &format!("s{i}"),
                    &[0.5 + i as f64 * 0.1, -0.7, 1.3, 0.2],
                )
            })
            .collect();
        let subjects: Vec<&Subject> = subjects_owned.iter().collect();
        let config = PriorConfig::default();
        let run = |seed: u64| -> SamplerState {
            let mut state = SamplerState::new(two_state_model(), &subjects, &config).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for _ in 0..20 {
                gibbs_sweep(&mut state, &subjects, &config, LikTarget::Data, &mut rng).unwrap();
                state.theta.validate().unwrap();
                assert_abs_diff_eq!(
                    state.theta.pi.iter().sum::<f64>(),
                    1.0,
                    epsilon = 1e-10
                );
            }
            state
        };
        let a = run(61);
        let b = run(61);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.indicators, b.indicators);
        let c = run(62);
        assert!(a.theta != c.theta);
    }
}
