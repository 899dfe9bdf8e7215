//! Trans-dimensional moves over the number of hidden states: reversible-jump
//! split/combine with centered proposals and nearest-state gating, and the
//! birth-death alternative.
//!
//! Split and combine share one "core bracket" — the log ratio of the
//! (K+1)-state side to the K-state side, covering the Jacobians, the prior
//! ratio of the transformed coordinates, the prior on the model dimension,
//! the proposal densities, and the likelihood ratio. Deterministically copied
//! coordinates (duplicated generator rows, duplicated coefficient rows) and
//! the fresh rates proposed directly from their own prior cancel and never
//! appear. The combine acceptance is the exact negation of the bracket
//! evaluated at the implied reverse-split quantities, which makes the
//! reciprocity identity hold to round-off.

use ndarray::Array2;
use rand::Rng;

use crate::ctmc::GeneratorMatrix;
use crate::emission::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::gibbs::{LikTarget, SamplerState};
use crate::hmm::{marginal_loglik, ModelState, Subject};
use crate::prior::{
    draw_beta22, ln_beta22_pdf, ln_dirichlet_pdf, ln_gamma_pdf, ln_normal_pdf, PriorConfig,
};
use rand_distr::{Distribution, Exp, Normal};

/// Which trans-dimensional move was attempted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveType {
    Split,
    Combine,
    Birth,
    Death,
}

impl MoveType {
    pub fn as_str(&self) -> &'static str {
        match self {
            MoveType::Split => "split",
            MoveType::Combine => "combine",
            MoveType::Birth => "birth",
            MoveType::Death => "death",
        }
    }
}

/// Result of one attempted move.
#[derive(Debug, Clone)]
pub struct MoveOutcome {
    pub move_type: MoveType,
    pub accepted: bool,
    pub log_acceptance: f64,
}

/// The state whose coefficient column is closest to `j` in L1 distance
/// (ties broken by smallest index). None when only one state exists.
pub fn nearest_state(coeffs: &CoefficientMatrix, j: usize) -> Option<usize> {
    let k = coeffs.num_states();
    let d = coeffs.predictor_dim();
    let mut best: Option<(usize, f64)> = None;
    for cand in 0..k {
        if cand == j {
            continue;
        }
        let dist: f64 = (0..d)
            .map(|r| (coeffs.coeffs()[[r, j]] - coeffs.coeffs()[[r, cand]]).abs())
            .sum();
        match best {
            Some((_, bd)) if bd <= dist => {}
            _ => best = Some((cand, dist)),
        }
    }
    best.map(|(i, _)| i)
}

/// Pick a state uniformly and pair it with its nearest neighbour.
pub fn select_combine_pair<R: Rng + ?Sized>(
    theta: &ModelState,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let k = theta.num_states();
    if k < 2 {
        return Err(Error::MoveUnavailable(
            "cannot combine with a single state".into(),
        ));
    }
    let j = rng.random_range(0..k);
    let partner = nearest_state(&theta.coeffs, j).unwrap();
    Ok((j, partner))
}

/// The random inputs of one split proposal. The target keeps its label and
/// its intercept; the second half is inserted at a uniformly random index
/// above the target, so every labelling a merge can select is also reachable
/// by a split and the jump kernels balance pointwise.
#[derive(Debug, Clone)]
pub struct SplitDraw {
    /// State being split.
    pub target: usize,
    /// Index of the new state in the (K+1)-state model, in target+1..=K.
    pub new_position: usize,
    /// Column weights for each non-target state, in ascending state order.
    pub col_weights: Vec<f64>,
    /// Fresh rate target -> new state.
    pub rate_to_new: f64,
    /// Fresh rate new state -> target.
    pub rate_from_new: f64,
    /// Intercept of the new state.
    pub beta_new: f64,
    /// Weight splitting the target's initial probability.
    pub pi_weight: f64,
}

/// Draw split randomness from the proposal distributions: Beta(2,2) weights,
/// prior-distributed fresh rates, and a Normal intercept centered at the
/// target's.
pub fn random_split_draw<R: Rng + ?Sized>(
    theta: &ModelState,
    config: &PriorConfig,
    rng: &mut R,
) -> SplitDraw {
    let k = theta.num_states();
    let target = rng.random_range(0..k);
    let new_position = rng.random_range(target + 1..k + 1);
    let col_weights: Vec<f64> = (0..k - 1).map(|_| draw_beta22(rng)).collect();
    let rate_to_new = config.draw_q_entry(rng);
    let rate_from_new = config.draw_q_entry(rng);
    let center = theta.coeffs.coeffs()[[0, target]];
    let beta_new = center
        + Normal::new(0.0, config.split_proposal_sd)
            .unwrap()
            .sample(rng);
    let pi_weight = draw_beta22(rng);
    SplitDraw {
        target,
        new_position,
        col_weights,
        rate_to_new,
        rate_from_new,
        beta_new,
        pi_weight,
    }
}

/// Construct the (K+1)-state model of a split: rows out of the pair copied,
/// columns into the pair weight-split, fresh rates between the halves,
/// intercept draw for the new state, initial probability split.
pub fn apply_split(theta: &ModelState, draw: &SplitDraw) -> Result<ModelState> {
    let k = theta.num_states();
    let t = draw.target;
    let pos = draw.new_position;
    if t >= k || pos <= t || pos > k || draw.col_weights.len() != k - 1 {
        return Err(Error::Structure("split draw inconsistent with model".into()));
    }
    // Child index of old state j; the target keeps its index because the new
    // state is always inserted above it.
    let map = |j: usize| if j < pos { j } else { j + 1 };
    let mut rates = Array2::zeros((k + 1, k + 1));
    let mut widx = 0usize;
    for i in 0..k {
        if i == t {
            continue;
        }
        for j in 0..k {
            if j != i && j != t {
                rates[[map(i), map(j)]] = theta.generator.rate(i, j);
            }
        }
        // Column split into the two halves.
        let w = draw.col_weights[widx];
        widx += 1;
        let q = theta.generator.rate(i, t);
        rates[[map(i), t]] = w * q;
        rates[[map(i), pos]] = (1.0 - w) * q;
    }
    for j in 0..k {
        if j != t {
            // Rows out of the pair are copied.
            rates[[t, map(j)]] = theta.generator.rate(t, j);
            rates[[pos, map(j)]] = theta.generator.rate(t, j);
        }
    }
    rates[[t, pos]] = draw.rate_to_new;
    rates[[pos, t]] = draw.rate_from_new;
    let generator = GeneratorMatrix::from_rates(rates)?;

    let d = theta.coeffs.predictor_dim();
    let mut coeffs = Array2::zeros((d, k + 1));
    for r in 0..d {
        for j in 0..k {
            coeffs[[r, map(j)]] = theta.coeffs.coeffs()[[r, j]];
        }
        coeffs[[r, pos]] = if r == 0 {
            draw.beta_new
        } else {
            theta.coeffs.coeffs()[[r, t]]
        };
    }
    let coeffs = CoefficientMatrix::new(coeffs)?;

    let mut pi = vec![0.0; k + 1];
    for j in 0..k {
        pi[map(j)] = theta.pi[j];
    }
    pi[t] = draw.pi_weight * theta.pi[t];
    pi[pos] = (1.0 - draw.pi_weight) * theta.pi[t];
    let total: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= total;
    }

    Ok(ModelState {
        pi,
        generator,
        coeffs,
        family: theta.family.clone(),
    })
}

/// The nearest-state gate: in the proposed model, the split target's nearest
/// state must be its new twin.
pub fn split_gate_ok(child: &ModelState, target: usize, new_state: usize) -> bool {
    nearest_state(&child.coeffs, target) == Some(new_state)
}

/// Number of pair members whose nearest state is the other member; this is
/// how many uniform draws select this pair in the combine schedule.
fn pair_selection_count(child: &ModelState, a: usize, b: usize) -> usize {
    let mut count = 0;
    if nearest_state(&child.coeffs, a) == Some(b) {
        count += 1;
    }
    if nearest_state(&child.coeffs, b) == Some(a) {
        count += 1;
    }
    count
}

/// The shared core bracket: log of the (K+1)-side quantities over the K-side
/// quantities, exclusive of the move-type probabilities and the pair/target
/// selection probabilities.
#[allow(clippy::too_many_arguments)]
fn core_bracket(
    parent: &ModelState,
    child: &ModelState,
    parent_target: usize,
    pair: (usize, usize),
    col_weights: &[f64],
    pi_weight: f64,
    beta_new: f64,
    proposal_center: f64,
    delta_loglik: f64,
    config: &PriorConfig,
) -> f64 {
    let (p, q) = pair;
    let k_parent = parent.num_states();
    let mut total = 0.0;
    // Jacobian of the column splits plus the Gamma prior ratio of the
    // transformed column coordinates.
    let mut widx = 0usize;
    for i in 0..child.num_states() {
        if i == p || i == q {
            continue;
        }
        let a = child.generator.rate(i, p);
        let b = child.generator.rate(i, q);
        let sum = a + b;
        total += sum.ln();
        total += ln_gamma_pdf(a, config.q_shape, config.q_rate)
            + ln_gamma_pdf(b, config.q_shape, config.q_rate)
            - ln_gamma_pdf(sum, config.q_shape, config.q_rate);
        total -= ln_beta22_pdf(col_weights[widx]);
        widx += 1;
    }
    // Jacobian of the initial-probability split, its proposal density, and
    // the Dirichlet prior ratio.
    total += parent.pi[parent_target].ln();
    total -= ln_beta22_pdf(pi_weight);
    total += ln_dirichlet_pdf(&child.pi, config.dirichlet_alpha)
        - ln_dirichlet_pdf(&parent.pi, config.dirichlet_alpha);
    // New intercept: prior density minus proposal density. The proposal is
    // centered at the intercept of the state the split keeps unchanged, so
    // the reverse-move density must use the kept member's intercept of the
    // larger model, not the merged average.
    total += config.beta_prior.logpdf(beta_new, 0);
    total -= ln_normal_pdf(beta_new, proposal_center, config.split_proposal_sd);
    // Prior on the model dimension.
    total += config.log_k_prior(k_parent + 1) - config.log_k_prior(k_parent);
    total + delta_loglik
}

/// Log acceptance of a split from `parent` (K states) to `child` (K+1).
pub fn split_log_acceptance(
    parent: &ModelState,
    child: &ModelState,
    draw: &SplitDraw,
    delta_loglik: f64,
    config: &PriorConfig,
) -> f64 {
    let k = parent.num_states();
    let pair = (draw.target, draw.new_position);
    let m_sel = pair_selection_count(child, pair.0, pair.1);
    if m_sel == 0 {
        return f64::NEG_INFINITY;
    }
    let d_next = 1.0 - config.split_prob(k + 1);
    let b_here = config.split_prob(k);
    // The new state is appended at the last index, but the reverse merge
    // removes a state from any of the k - target positions above the target;
    // each position is a distinct labelling of the same proposal with equal
    // prior density, so the reverse-move mass carries that multiplicity.
    let multiplicity = (k - draw.target) as f64;
    d_next.ln() - b_here.ln() + (m_sel as f64).ln() + multiplicity.ln() + (k as f64).ln()
        - ((k + 1) as f64).ln()
        + core_bracket(
            parent,
            child,
            draw.target,
            pair,
            &draw.col_weights,
            draw.pi_weight,
            draw.beta_new,
            parent.coeffs.coeffs()[[0, draw.target]],
            delta_loglik,
            config,
        )
}

/// The reverse-split quantities implied by a merge.
#[derive(Debug, Clone)]
pub struct ImpliedSplit {
    pub col_weights: Vec<f64>,
    pub pi_weight: f64,
    pub beta_new: f64,
}

/// Merge the pair (p, q), p < q, of a K-state model into state p: rows
/// averaged with stationary weights, columns summed, coefficients averaged
/// with the same weights, initial probabilities summed, labels above q
/// shifted down.
pub fn merge_pair(theta: &ModelState, p: usize, q: usize) -> Result<(ModelState, ImpliedSplit)> {
    let k = theta.num_states();
    if p >= q || q >= k {
        return Err(Error::Structure(format!("invalid merge pair ({p}, {q})")));
    }
    let s = theta.generator.stationary_distribution()?;
    let u = s[p] / (s[p] + s[q]);
    let map = |i: usize| if i < q { i } else { i - 1 };

    let mut rates = Array2::zeros((k - 1, k - 1));
    let mut col_weights = Vec::with_capacity(k - 2);
    for i in 0..k {
        if i == q {
            continue;
        }
        for j in 0..k {
            if j == q || i == j {
                continue;
            }
            if i == p {
                // Row out of the merged state: stationary-weighted average.
                rates[[map(p), map(j)]] = if j == p {
                    0.0
                } else {
                    u * theta.generator.rate(p, j) + (1.0 - u) * theta.generator.rate(q, j)
                };
            } else if j == p {
                // Column into the merged state: sum of the two halves.
                let a = theta.generator.rate(i, p);
                let b = theta.generator.rate(i, q);
                rates[[map(i), map(p)]] = a + b;
                col_weights.push(if a + b > 0.0 { a / (a + b) } else { 0.5 });
            } else {
                rates[[map(i), map(j)]] = theta.generator.rate(i, j);
            }
        }
    }
    let generator = GeneratorMatrix::from_rates(rates)?;

    let d = theta.coeffs.predictor_dim();
    let mut coeffs = Array2::zeros((d, k - 1));
    for r in 0..d {
        for j in 0..k {
            if j == q {
                continue;
            }
            coeffs[[r, map(j)]] = if j == p {
                u * theta.coeffs.coeffs()[[r, p]] + (1.0 - u) * theta.coeffs.coeffs()[[r, q]]
            } else {
                theta.coeffs.coeffs()[[r, j]]
            };
        }
    }
    let coeffs = CoefficientMatrix::new(coeffs)?;

    let mut pi = Vec::with_capacity(k - 1);
    for j in 0..k {
        if j == q {
            continue;
        }
        pi.push(if j == p {
            theta.pi[p] + theta.pi[q]
        } else {
            theta.pi[j]
        });
    }
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
    }
    let pi_weight = theta.pi[p] / (theta.pi[p] + theta.pi[q]);

    let merged = ModelState {
        pi,
        generator,
        coeffs,
        family: theta.family.clone(),
    };
    let implied = ImpliedSplit {
        col_weights,
        pi_weight,
        beta_new: theta.coeffs.coeffs()[[0, q]],
    };
    Ok((merged, implied))
}

/// Log acceptance of merging pair (p, q) of `child` into `parent`
/// (the exact negation of the matching split bracket).
pub fn combine_log_acceptance(
    child: &ModelState,
    parent: &ModelState,
    pair: (usize, usize),
    implied: &ImpliedSplit,
    delta_loglik_split: f64,
    config: &PriorConfig,
) -> f64 {
    let (p, q) = pair;
    // The reverse split must pass the nearest-state gate.
    if nearest_state(&child.coeffs, p) != Some(q) {
        return f64::NEG_INFINITY;
    }
    let m_sel = pair_selection_count(child, p, q);
    let k_parent = parent.num_states();
    let d_next = 1.0 - config.split_prob(k_parent + 1);
    let b_here = config.split_prob(k_parent);
    let multiplicity = (k_parent - p) as f64;
    -(d_next.ln() - b_here.ln() + (m_sel as f64).ln() + multiplicity.ln()
        + (k_parent as f64).ln()
        - ((k_parent + 1) as f64).ln()
        + core_bracket(
            parent,
            child,
            p,
            pair,
            &implied.col_weights,
            implied.pi_weight,
            implied.beta_new,
            child.coeffs.coeffs()[[0, p]],
            delta_loglik_split,
            config,
        ))
}

fn model_loglik(
    theta: &ModelState,
    subjects: &[&Subject],
    target: LikTarget,
) -> Result<Option<f64>> {
    match target {
        LikTarget::PriorOnly => Ok(Some(0.0)),
        LikTarget::Data => match marginal_loglik(subjects, theta) {
            Ok(ll) if ll.is_finite() => Ok(Some(ll)),
            Ok(_) => Ok(None),
            Err(Error::LikelihoodImpossible { .. }) => Ok(None),
            Err(e) => Err(e),
        },
    }
}

/// One reversible-jump step: split with probability b_K, otherwise combine.
/// On acceptance the new model is installed and (in data mode) the smoothed
/// quantities are refreshed.
pub fn rj_step<R: Rng + ?Sized>(
    state: &mut SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let k = state.theta.num_states();
    let do_split = rng.random::<f64>() < config.split_prob(k);
    if do_split {
        let draw = random_split_draw(&state.theta, config, rng);
        let child = apply_split(&state.theta, &draw)?;
        if !split_gate_ok(&child, draw.target, draw.new_position) {
            return Ok(MoveOutcome {
                move_type: MoveType::Split,
                accepted: false,
                log_acceptance: f64::NEG_INFINITY,
            });
        }
        let parent_ll = if target == LikTarget::Data {
            state.log_marginal
        } else {
            0.0
        };
        let child_ll = match model_loglik(&child, subjects, target)? {
            Some(ll) => ll,
            None => {
                return Ok(MoveOutcome {
                    move_type: MoveType::Split,
                    accepted: false,
                    log_acceptance: f64::NEG_INFINITY,
                })
            }
        };
        let log_acc =
            split_log_acceptance(&state.theta, &child, &draw, child_ll - parent_ll, config);
        let accepted = log_acc >= 0.0 || rng.random::<f64>().ln() < log_acc;
        if accepted {
            state.theta = child;
            if target == LikTarget::Data {
                state.refresh(subjects)?;
            } else {
                state.log_marginal = 0.0;
                state.smoothed = None;
            }
        }
        Ok(MoveOutcome {
            move_type: MoveType::Split,
            accepted,
            log_acceptance: log_acc.min(0.0),
        })
    } else {
        let (j, partner) = select_combine_pair(&state.theta, rng)?;
        let (p, q) = (j.min(partner), j.max(partner));
        let (merged, implied) = merge_pair(&state.theta, p, q)?;
        let child_ll = if target == LikTarget::Data {
            state.log_marginal
        } else {
            0.0
        };
        let merged_ll = match model_loglik(&merged, subjects, target)? {
            Some(ll) => ll,
            None => {
                return Ok(MoveOutcome {
                    move_type: MoveType::Combine,
                    accepted: false,
                    log_acceptance: f64::NEG_INFINITY,
                })
            }
        };
        let log_acc = combine_log_acceptance(
            &state.theta,
            &merged,
            (p, q),
            &implied,
            child_ll - merged_ll,
            config,
        );
        let accepted = log_acc >= 0.0 || rng.random::<f64>().ln() < log_acc;
        if accepted {
            state.theta = merged;
            if target == LikTarget::Data {
                state.refresh(subjects)?;
            } else {
                state.log_marginal = 0.0;
                state.smoothed = None;
            }
        }
        Ok(MoveOutcome {
            move_type: MoveType::Combine,
            accepted,
            log_acceptance: log_acc.min(0.0),
        })
    }
}

/// Death rate of each state (paired with its nearest neighbour) for the
/// birth-death process. States in a pair whose reverse split fails the gate
/// have rate zero; a pair selected by both of its members shares the pair's
/// rate between them.
fn death_rates(
    state: &SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
) -> Result<Vec<f64>> {
    let k = state.theta.num_states();
    let mut rates = vec![0.0; k];
    if k < 2 {
        return Ok(rates);
    }
    let current_ll = if target == LikTarget::Data {
        state.log_marginal
    } else {
        0.0
    };
    for j in 0..k {
        let partner = nearest_state(&state.theta.coeffs, j).unwrap();
        let (p, q) = (j.min(partner), j.max(partner));
        if nearest_state(&state.theta.coeffs, p) != Some(q) {
            continue;
        }
        let m_sel = pair_selection_count(&state.theta, p, q);
        let (merged, implied) = merge_pair(&state.theta, p, q)?;
        let merged_ll = match model_loglik(&merged, subjects, target)? {
            Some(ll) => ll,
            None => continue,
        };
        let bracket = core_bracket(
            &merged,
            &state.theta,
            p,
            (p, q),
            &implied.col_weights,
            implied.pi_weight,
            implied.beta_new,
            state.theta.coeffs.coeffs()[[0, p]],
            current_ll - merged_ll,
            config,
        );
        // Balance against a birth at rate lambda_b that picked the merged
        // target among K-1 states; both members of a mutually nearest pair
        // share the flow.
        let log_rate = config.birth_rate.ln() - ((k - 1) as f64).ln() - (m_sel as f64).ln()
            - ((k - 1 - p) as f64).ln()
            - bracket;
        rates[j] = log_rate.clamp(-config.bd_log_rate_cap, config.bd_log_rate_cap).exp();
    }
    Ok(rates)
}

/// Run the birth-death jump process for virtual time `t0`. Births propose a
/// split (thinned by the nearest-state gate); deaths install the merged
/// model of the selected state and its nearest neighbour.
pub fn bd_sweep<R: Rng + ?Sized>(
    state: &mut SamplerState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<Vec<MoveOutcome>> {
    let mut outcomes = Vec::new();
    let mut elapsed = 0.0;
    loop {
        let k = state.theta.num_states();
        let birth_rate = if k < config.k_cap {
            config.birth_rate
        } else {
            0.0
        };
        let deaths = death_rates(state, subjects, config, target)?;
        let total_death: f64 = deaths.iter().sum();
        let total = birth_rate + total_death;
        if total <= 0.0 {
            break;
        }
        elapsed += Exp::new(total)
            .map_err(|e| Error::Numeric(format!("invalid jump rate: {e}")))?
            .sample(rng);
        if elapsed >= config.bd_time {
            break;
        }
        if rng.random::<f64>() * total < birth_rate {
            // Birth: a split proposal, thinned by the gate.
            let draw = random_split_draw(&state.theta, config, rng);
            let child = apply_split(&state.theta, &draw)?;
            if split_gate_ok(&child, draw.target, draw.new_position)
                && model_loglik(&child, subjects, target)?.is_some()
            {
                state.theta = child;
                if target == LikTarget::Data {
                    state.refresh(subjects)?;
                } else {
                    state.log_marginal = 0.0;
                    state.smoothed = None;
                }
                outcomes.push(MoveOutcome {
                    move_type: MoveType::Birth,
                    accepted: true,
                    log_acceptance: 0.0,
                });
            } else {
                outcomes.push(MoveOutcome {
                    move_type: MoveType::Birth,
                    accepted: false,
                    log_acceptance: f64::NEG_INFINITY,
                });
            }
        } else {
            // Death: select the dying state proportional to its rate.
            let j = crate::ctmc::sample_categorical(&deaths, rng)?;
            let partner = nearest_state(&state.theta.coeffs, j).unwrap();
            let (p, q) = (j.min(partner), j.max(partner));
            let (merged, _) = merge_pair(&state.theta, p, q)?;
            state.theta = merged;
            if target == LikTarget::Data {
                state.refresh(subjects)?;
            } else {
                state.log_marginal = 0.0;
                state.smoothed = None;
            }
            outcomes.push(MoveOutcome {
                move_type: MoveType::Death,
                accepted: true,
                log_acceptance: 0.0,
            });
        }
    }
    Ok(outcomes)
}
