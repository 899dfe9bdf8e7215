//! Finite-mixture clustering of subjects over per-component hidden Markov
//! models: membership and weight conditionals, trans-dimensional moves over
//! the number of components (combine restricted to equal state counts), and
//! the four-step sweep combining them with the per-component samplers.
//!
//! The component split duplicates the chosen component, perturbing only the
//! intercepts, and splits its mixture weight; the combine move averages two
//! equal-sized components with per-state stationary weights. As with the
//! state moves, coordinates the split copies cancel between prior and
//! proposal, the reverse-move intercept densities are centered at the kept
//! component's intercepts, and the split inserts the new component at a
//! uniformly random index above the target so the split and combine flows
//! balance.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use ndarray::Array2;

use crate::ctmc::{sample_categorical, GeneratorMatrix};
use crate::emission::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::gibbs::{gibbs_sweep, LikTarget, SamplerState};
use crate::hmm::{forward_backward, log_sum_exp, ModelState, Subject};
use crate::prior::{
    draw_beta22, draw_dirichlet, ln_beta22_pdf, ln_dirichlet_pdf, ln_normal_pdf, PriorConfig,
};
use crate::transdim::{rj_step, MoveOutcome, MoveType};

/// The clustering sampler's state: mixture weights, one sampler per
/// component, and a component index per subject.
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub weights: Vec<f64>,
    pub components: Vec<SamplerState>,
    pub memberships: Vec<usize>,
}

impl MixtureState {
    /// Build from component models and weights, drawing initial memberships
    /// from the membership posteriors.
    pub fn new<R: Rng + ?Sized>(
        models: Vec<ModelState>,
        weights: Vec<f64>,
        subjects: &[&Subject],
        config: &PriorConfig,
        target: LikTarget,
        rng: &mut R,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Structure("mixture needs at least one component".into()));
        }
        if models.len() != weights.len() {
            return Err(Error::Structure(format!(
                "{} components but {} weights",
                models.len(),
                weights.len()
            )));
        }
        let mut components = Vec::with_capacity(models.len());
        for theta in models {
            theta.validate()?;
            components.push(SamplerState::new(theta, &[], config)?);
        }
        let mut mix = Self {
            weights,
            components,
            memberships: vec![0; subjects.len()],
        };
        mix.validate()?;
        let posteriors = membership_log_posteriors(subjects, &mix, target)?;
        for (n, logp) in posteriors.iter().enumerate() {
            let probs: Vec<f64> = logp.iter().map(|&v| v.exp()).collect();
            mix.memberships[n] = sample_categorical(&probs, rng)?;
        }
        Ok(mix)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Number of components with at least one member.
    pub fn filled_clusters(&self) -> usize {
        let m = self.num_components();
        let mut seen = vec![false; m];
        for &c in &self.memberships {
            seen[c] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_components();
        if m == 0 {
            return Err(Error::Structure("mixture needs at least one component".into()));
        }
        if self.weights.len() != m {
            return Err(Error::Structure("weight/component count mismatch".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || (total - 1.0).abs() > 1e-8
        {
            return Err(Error::Structure(format!(
                "mixture weights must be a probability vector, sum {total}"
            )));
        }
        for comp in &self.components {
            comp.theta.validate()?;
        }
        if self.memberships.iter().any(|&c| c >= m) {
            return Err(Error::Structure("membership references missing component".into()));
        }
        Ok(())
    }

    /// Per-subject counts per component.
    pub fn membership_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_components()];
        for &c in &self.memberships {
            counts[c] += 1;
        }
        counts
    }
}

/// Marginal log-likelihood of a single subject under one model, with an
/// impossible subject mapped to -inf rather than an error.
fn subject_loglik(subject: &Subject, theta: &ModelState) -> Result<f64> {
    match forward_backward(&[subject], theta) {
        Ok(sq) => Ok(sq.subject_loglik[0]),
        Err(Error::LikelihoodImpossible { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Per-subject posterior log-probabilities of component membership:
/// log of weight times marginal likelihood, normalized per subject.
pub fn membership_log_posteriors(
    subjects: &[&Subject],
    mix: &MixtureState,
    target: LikTarget,
) -> Result<Vec<Vec<f64>>> {
    let m = mix.num_components();
    let mut result = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let mut logp = Vec::with_capacity(m);
        for c in 0..m {
            let lw = mix.weights[c].ln();
            let ll = match target {
                LikTarget::PriorOnly => 0.0,
                LikTarget::Data => subject_loglik(subject, &mix.components[c].theta)?,
            };
            logp.push(lw + ll);
        }
        let norm = log_sum_exp(&logp);
        if !norm.is_finite() {
            return Err(Error::SubjectImpossible(format!(
                "subject {} has zero likelihood under every component",
                subject.id
            )));
        }
        for v in logp.iter_mut() {
            *v -= norm;
        }
        result.push(logp);
    }
    Ok(result)
}

/// Redraw each subject's membership from its posterior, then re-seed any
/// emptied component's parameters from the priors (keeping its state count).
pub fn update_memberships<R: Rng + ?Sized>(
    subjects: &[&Subject],
    mix: &mut MixtureState,
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<()> {
    let posteriors = membership_log_posteriors(subjects, mix, target)?;
    for (n, logp) in posteriors.iter().enumerate() {
        let probs: Vec<f64> = logp.iter().map(|&v| v.exp()).collect();
        mix.memberships[n] = sample_categorical(&probs, rng)?;
    }
    let counts = mix.membership_counts();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            let comp = &mut mix.components[c];
            let k = comp.theta.num_states();
            let d = comp.theta.coeffs.predictor_dim();
            let family = comp.theta.family.clone();
            comp.theta = config.draw_model(k, d, &family, rng);
            comp.smoothed = None;
            comp.log_marginal = 0.0;
        }
    }
    Ok(())
}

/// Mixture-weight conditional: Dirichlet(counts + delta). In prior-only mode
/// the counts are ignored so the draw is an exact prior refresh.
pub fn update_weights<R: Rng + ?Sized>(
    mix: &mut MixtureState,
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) {
    let m = mix.num_components();
    if m == 1 {
        mix.weights = vec![1.0];
        return;
    }
    let mut alpha = vec![config.weight_dirichlet; m];
    if target == LikTarget::Data {
        for (c, &count) in mix.membership_counts().iter().enumerate() {
            alpha[c] += count as f64;
        }
    }
    mix.weights = draw_dirichlet(&alpha, rng);
}

/// The component whose coefficient matrix is closest to component `j` in
/// Frobenius norm, among components with the same number of states. None if
/// no other component shares j's state count.
pub fn nearest_component(mix: &MixtureState, j: usize) -> Option<usize> {
    let k = mix.components[j].theta.num_states();
    let bj = mix.components[j].theta.coeffs.coeffs();
    let mut best: Option<(usize, f64)> = None;
    for (cand, comp) in mix.components.iter().enumerate() {
        if cand == j || comp.theta.num_states() != k {
            continue;
        }
        let bc = comp.theta.coeffs.coeffs();
        let dist: f64 = bj
            .iter()
            .zip(bc.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        match best {
            Some((_, bd)) if bd <= dist => {}
            _ => best = Some((cand, dist)),
        }
    }
    best.map(|(i, _)| i)
}

/// Number of pair members whose nearest equal-K component is the other; the
/// number of uniform component draws that select this pair in a combine.
fn component_pair_count(mix: &MixtureState, a: usize, b: usize) -> usize {
    let mut count = 0;
    if nearest_component(mix, a) == Some(b) {
        count += 1;
    }
    if nearest_component(mix, b) == Some(a) {
        count += 1;
    }
    count
}

/// The random inputs of one component split: the duplicated component keeps
/// its label, generator, initial distribution, and slope rows; the copy gets
/// perturbed intercepts and is inserted at a random index above the target.
#[derive(Debug, Clone)]
pub struct ClusterSplitDraw {
    pub target: usize,
    /// Index of the new component, in target+1..=M.
    pub new_position: usize,
    /// Weight splitting the target's mixture weight.
    pub weight: f64,
    /// Intercepts of the new component, one per state of the target.
    pub intercepts: Vec<f64>,
}

/// Draw the split randomness: Beta(2,2) weight and per-state Normal
/// intercepts centered at the target's.
pub fn random_cluster_split_draw<R: Rng + ?Sized>(
    mix: &MixtureState,
    config: &PriorConfig,
    rng: &mut R,
) -> ClusterSplitDraw {
    let m = mix.num_components();
    let target = rng.random_range(0..m);
    let new_position = rng.random_range(target + 1..m + 1);
    let weight = draw_beta22(rng);
    let theta = &mix.components[target].theta;
    let normal = Normal::new(0.0, config.split_proposal_sd).unwrap();
    let intercepts = (0..theta.num_states())
        .map(|k| theta.coeffs.coeffs()[[0, k]] + normal.sample(rng))
        .collect();
    ClusterSplitDraw {
        target,
        new_position,
        weight,
        intercepts,
    }
}

/// Construct the (M+1)-component mixture of a split. Members of the target
/// stay with it; other memberships shift to account for the insertion.
pub fn apply_cluster_split(
    mix: &MixtureState,
    draw: &ClusterSplitDraw,
    config: &PriorConfig,
) -> Result<MixtureState> {
    let m = mix.num_components();
    let t = draw.target;
    let pos = draw.new_position;
    let theta = &mix.components[t].theta;
    if t >= m || pos <= t || pos > m || draw.intercepts.len() != theta.num_states() {
        return Err(Error::Structure(
            "cluster split draw inconsistent with mixture".into(),
        ));
    }
    let mut twin = theta.clone();
    for (k, &b) in draw.intercepts.iter().enumerate() {
        twin.coeffs.coeffs_mut()[[0, k]] = b;
    }
    twin.validate()?;
    let new_comp = SamplerState::new(twin, &[], config)?;

    let mut components = mix.components.clone();
    components.insert(pos, new_comp);
    let mut weights = mix.weights.clone();
    weights[t] *= draw.weight;
    weights.insert(pos, (1.0 - draw.weight) * mix.weights[t]);
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    let memberships = mix
        .memberships
        .iter()
        .map(|&c| if c < pos { c } else { c + 1 })
        .collect();
    Ok(MixtureState {
        weights,
        components,
        memberships,
    })
}

/// The reverse-split quantities implied by a component merge.
#[derive(Debug, Clone)]
pub struct ImpliedClusterSplit {
    pub weight: f64,
    /// The removed component's intercepts.
    pub intercepts: Vec<f64>,
    /// The kept component's intercepts (the reverse proposal's centers).
    pub centers: Vec<f64>,
}

/// Merge components p and q (p < q, equal state counts) into p with
/// per-state stationary weights; mixture weights are summed and memberships
/// above q shift down.
pub fn merge_components(
    mix: &MixtureState,
    p: usize,
    q: usize,
    config: &PriorConfig,
) -> Result<(MixtureState, ImpliedClusterSplit)> {
    let m = mix.num_components();
    if p >= q || q >= m {
        return Err(Error::Structure(format!("invalid combine pair ({p}, {q})")));
    }
    let a = &mix.components[p].theta;
    let b = &mix.components[q].theta;
    let k = a.num_states();
    if b.num_states() != k {
        return Err(Error::MoveUnavailable(
            "combine requires components with equal state counts".into(),
        ));
    }
    let sa = a.generator.stationary_distribution()?;
    let sb = b.generator.stationary_distribution()?;
    let u: Vec<f64> = (0..k).map(|i| sa[i] / (sa[i] + sb[i])).collect();

    let mut rates = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            if i != j {
                rates[[i, j]] = u[i] * a.generator.rate(i, j) + (1.0 - u[i]) * b.generator.rate(i, j);
            }
        }
    }
    let generator = GeneratorMatrix::from_rates(rates)?;

    let d = a.coeffs.predictor_dim();
    let mut coeffs = Array2::zeros((d, k));
    for r in 0..d {
        for j in 0..k {
            coeffs[[r, j]] =
                u[j] * a.coeffs.coeffs()[[r, j]] + (1.0 - u[j]) * b.coeffs.coeffs()[[r, j]];
        }
    }
    let coeffs = CoefficientMatrix::new(coeffs)?;

    let mut pi: Vec<f64> = (0..k).map(|j| u[j] * a.pi[j] + (1.0 - u[j]) * b.pi[j]).collect();
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
    }

    let merged_theta = ModelState {
        pi,
        generator,
        coeffs,
        family: a.family.clone(),
    };
    merged_theta.validate()?;
    let mut merged_comp = SamplerState::new(merged_theta, &[], config)?;
    merged_comp.step_sd = mix.components[p].step_sd;

    let mut components = mix.components.clone();
    components[p] = merged_comp;
    components.remove(q);
    let mut weights = mix.weights.clone();
    weights[p] += weights[q];
    weights.remove(q);
    let memberships = mix
        .memberships
        .iter()
        .map(|&c| {
            if c == q {
                p
            } else if c > q {
                c - 1
            } else {
                c
            }
        })
        .collect();
    let implied = ImpliedClusterSplit {
        weight: mix.weights[p] / (mix.weights[p] + mix.weights[q]),
        intercepts: (0..k).map(|j| b.coeffs.coeffs()[[0, j]]).collect(),
        centers: (0..k).map(|j| a.coeffs.coeffs()[[0, j]]).collect(),
    };
    Ok((
        MixtureState {
            weights,
            components,
            memberships,
        },
        implied,
    ))
}

/// The shared core of the component split/combine log-acceptance: everything
/// except the move-type and selection probabilities. `parent_weight` is the
/// split component's mixture weight in the smaller mixture.
#[allow(clippy::too_many_arguments)]
fn cluster_core_bracket(
    parent_weights: &[f64],
    child_weights: &[f64],
    parent_target: usize,
    weight: f64,
    intercepts: &[f64],
    centers: &[f64],
    num_states: usize,
    delta_loglik: f64,
    config: &PriorConfig,
) -> f64 {
    let m_parent = parent_weights.len();
    let mut total = 0.0;
    // Jacobian of the weight split, its proposal density, and the Dirichlet
    // prior ratio.
    total += parent_weights[parent_target].ln();
    total -= ln_beta22_pdf(weight);
    total += ln_dirichlet_pdf(child_weights, config.weight_dirichlet)
        - ln_dirichlet_pdf(parent_weights, config.weight_dirichlet);
    // New intercepts: prior density minus proposal density, centered at the
    // kept component's intercepts.
    for (b, c) in intercepts.iter().zip(centers) {
        total += config.beta_prior.logpdf(*b, 0);
        total -= ln_normal_pdf(*b, *c, config.split_proposal_sd);
    }
    // Priors on the component count and on the added component's state count
    // (its remaining parameters are proposed from their own priors and
    // cancel).
    total += config.log_m_prior(m_parent + 1) - config.log_m_prior(m_parent);
    total += config.log_k_prior(num_states);
    total + delta_loglik
}

/// Log acceptance of a component split from `parent` (M components) to
/// `child` (M+1).
pub fn cluster_split_log_acceptance(
    parent: &MixtureState,
    child: &MixtureState,
    draw: &ClusterSplitDraw,
    delta_loglik: f64,
    config: &PriorConfig,
) -> f64 {
    let m = parent.num_components();
    let (p, q) = (draw.target, draw.new_position);
    if nearest_component(child, p) != Some(q) {
        return f64::NEG_INFINITY;
    }
    let m_sel = component_pair_count(child, p, q);
    let centers: Vec<f64> = (0..parent.components[p].theta.num_states())
        .map(|k| parent.components[p].theta.coeffs.coeffs()[[0, k]])
        .collect();
    let d_next = 1.0 - config.component_split_prob(m + 1);
    let b_here = config.component_split_prob(m);
    d_next.ln() - b_here.ln()
        + (m_sel as f64).ln()
        + ((m - p) as f64).ln()
        + (m as f64).ln()
        - ((m + 1) as f64).ln()
        + cluster_core_bracket(
            &parent.weights,
            &child.weights,
            p,
            draw.weight,
            &draw.intercepts,
            &centers,
            parent.components[p].theta.num_states(),
            delta_loglik,
            config,
        )
}

/// Log acceptance of combining pair (p, q) of `child` into `parent` (the
/// exact negation of the matching split bracket).
pub fn cluster_combine_log_acceptance(
    child: &MixtureState,
    parent: &MixtureState,
    pair: (usize, usize),
    implied: &ImpliedClusterSplit,
    delta_loglik_split: f64,
    config: &PriorConfig,
) -> f64 {
    let (p, q) = pair;
    if nearest_component(child, p) != Some(q) {
        return f64::NEG_INFINITY;
    }
    let m_sel = component_pair_count(child, p, q);
    let m_parent = parent.num_components();
    let d_next = 1.0 - config.component_split_prob(m_parent + 1);
    let b_here = config.component_split_prob(m_parent);
    -(d_next.ln() - b_here.ln()
        + (m_sel as f64).ln()
        + ((m_parent - p) as f64).ln()
        + (m_parent as f64).ln()
        - ((m_parent + 1) as f64).ln()
        + cluster_core_bracket(
            &parent.weights,
            &child.weights,
            p,
            implied.weight,
            &implied.intercepts,
            &implied.centers,
            child.components[p].theta.num_states(),
            delta_loglik_split,
            config,
        ))
}

/// Marginalized mixture log-likelihood: per subject, log-sum over components
/// of weight times marginal likelihood. None when some subject is impossible
/// under every component.
pub fn mixture_loglik(
    subjects: &[&Subject],
    mix: &MixtureState,
    target: LikTarget,
) -> Result<Option<f64>> {
    if target == LikTarget::PriorOnly {
        return Ok(Some(0.0));
    }
    let m = mix.num_components();
    let mut total = 0.0;
    for subject in subjects {
        let mut terms = Vec::with_capacity(m);
        for c in 0..m {
            let ll = subject_loglik(subject, &mix.components[c].theta)?;
            terms.push(mix.weights[c].ln() + ll);
        }
        let s = log_sum_exp(&terms);
        if !s.is_finite() {
            return Ok(None);
        }
        total += s;
    }
    Ok(Some(total))
}

/// One component-count move: split with probability b_M, otherwise combine.
/// A combine with no equal-K partner for the drawn component is an automatic
/// rejection.
pub fn cluster_move<R: Rng + ?Sized>(
    mix: &mut MixtureState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let m = mix.num_components();
    let do_split = rng.random::<f64>() < config.component_split_prob(m);
    if do_split {
        let draw = random_cluster_split_draw(mix, config, rng);
        let child = apply_cluster_split(mix, &draw, config)?;
        if nearest_component(&child, draw.target) != Some(draw.new_position) {
            return Ok(MoveOutcome {
                move_type: MoveType::Split,
                accepted: false,
                log_acceptance: f64::NEG_INFINITY,
            });
        }
        let parent_ll = match mixture_loglik(subjects, mix, target)? {
            Some(ll) => ll,
            None => {
                return Err(Error::Structure(
                    "current mixture has zero likelihood".into(),
                ))
            }
        };
        let child_ll = match mixture_loglik(subjects, &child, target)? {
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
            cluster_split_log_acceptance(mix, &child, &draw, child_ll - parent_ll, config);
        let accepted = log_acc >= 0.0 || rng.random::<f64>().ln() < log_acc;
        if accepted {
            *mix = child;
        }
        Ok(MoveOutcome {
            move_type: MoveType::Split,
            accepted,
            log_acceptance: log_acc.min(0.0),
        })
    } else {
        if m < 2 {
            return Ok(MoveOutcome {
                move_type: MoveType::Combine,
                accepted: false,
                log_acceptance: f64::NEG_INFINITY,
            });
        }
        let j = rng.random_range(0..m);
        let partner = match nearest_component(mix, j) {
            Some(i) => i,
            // No other component shares this state count: automatic
            // rejection rather than a re-draw of the move type.
            None => {
                return Ok(MoveOutcome {
                    move_type: MoveType::Combine,
                    accepted: false,
                    log_acceptance: f64::NEG_INFINITY,
                })
            }
        };
        let (p, q) = (j.min(partner), j.max(partner));
        let (merged, implied) = merge_components(mix, p, q, config)?;
        let child_ll = match mixture_loglik(subjects, mix, target)? {
            Some(ll) => ll,
            None => {
                return Err(Error::Structure(
                    "current mixture has zero likelihood".into(),
                ))
            }
        };
        let merged_ll = match mixture_loglik(subjects, &merged, target)? {
            Some(ll) => ll,
            None => {
                return Ok(MoveOutcome {
                    move_type: MoveType::Combine,
                    accepted: false,
                    log_acceptance: f64::NEG_INFINITY,
                })
            }
        };
        let log_acc = cluster_combine_log_acceptance(
            mix,
            &merged,
            (p, q),
            &implied,
            child_ll - merged_ll,
            config,
        );
        let accepted = log_acc >= 0.0 || rng.random::<f64>().ln() < log_acc;
        if accepted {
            *mix = merged;
        }
        Ok(MoveOutcome {
            move_type: MoveType::Combine,
            accepted,
            log_acceptance: log_acc.min(0.0),
        })
    }
}

/// One full clustering sweep: per-component state-count moves, the
/// component-count move, membership and weight updates (with empty-component
/// re-seeding), then per-component fixed-dimension sweeps over the subjects
/// assigned to each component.
pub fn clustering_sweep<R: Rng + ?Sized>(
    mix: &mut MixtureState,
    subjects: &[&Subject],
    config: &PriorConfig,
    target: LikTarget,
    rng: &mut R,
) -> Result<Vec<MoveOutcome>> {
    let mut outcomes = Vec::new();

    // 1. State-count move within each component, over its assigned subjects.
    for c in 0..mix.num_components() {
        let assigned: Vec<&Subject> = subjects
            .iter()
            .enumerate()
            .filter(|(n, _)| mix.memberships[*n] == c)
            .map(|(_, s)| *s)
            .collect();
        let comp = &mut mix.components[c];
        if target == LikTarget::Data {
            comp.refresh(&assigned)?;
        }
        outcomes.push(rj_step(comp, &assigned, config, target, rng)?);
    }

    // 2. Component-count move on the membership-marginalized likelihood.
    outcomes.push(cluster_move(mix, subjects, config, target, rng)?);

    // 3. Memberships (with empty-component re-seeding) and weights.
    update_memberships(subjects, mix, config, target, rng)?;
    update_weights(mix, config, target, rng);

    // 4. Fixed-dimension sweep within each component.
    for c in 0..mix.num_components() {
        let assigned: Vec<&Subject> = subjects
            .iter()
            .enumerate()
            .filter(|(n, _)| mix.memberships[*n] == c)
            .map(|(_, s)| *s)
            .collect();
        let comp = &mut mix.components[c];
        if target == LikTarget::Data {
            comp.refresh(&assigned)?;
        }
        gibbs_sweep(comp, &assigned, config, target, rng)?;
    }
    Ok(outcomes)
}
