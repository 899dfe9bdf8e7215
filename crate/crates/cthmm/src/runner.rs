//! Chain execution and artifact plumbing: trace records, run manifests with
//! a data digest, posterior summaries over model dimension and parameters,
//! and seeded replication studies.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{clustering_sweep, mixture_loglik, MixtureState};
use crate::emission::EmissionFamily;
use crate::error::{Error, Result};
use crate::experiments::SamplerKind;
use crate::gibbs::{gibbs_sweep, LikTarget, SamplerState};
use crate::hmm::{ModelState, Subject};
use crate::prior::PriorConfig;
use crate::transdim::{bd_sweep, rj_step, MoveOutcome};

/// A dimensionally self-contained snapshot of one model's parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSnapshot {
    pub k: usize,
    pub pi: Vec<f64>,
    /// Generator entries, row major.
    pub rates: Vec<f64>,
    /// Coefficient entries, row major (row 0 intercepts).
    pub coeffs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl ModelSnapshot {
    pub fn from_model(model: &ModelState) -> Self {
        Self {
            k: model.num_states(),
            pi: model.pi.clone(),
            rates: model.generator.rates().iter().copied().collect(),
            coeffs: model.coeffs.coeffs().iter().copied().collect(),
            sigma: match &model.family {
                EmissionFamily::Gaussian { sigma } => Some(*sigma),
                EmissionFamily::Poisson => None,
            },
        }
    }

    pub fn predictor_dim(&self) -> usize {
        self.coeffs.len() / self.k
    }

    pub fn intercept(&self, state: usize) -> f64 {
        self.coeffs[state]
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0
            || self.pi.len() != self.k
            || self.rates.len() != self.k * self.k
            || self.coeffs.is_empty()
            || self.coeffs.len() % self.k != 0
        {
            return Err(Error::Structure(format!(
                "snapshot with k={} has inconsistent lengths",
                self.k
            )));
        }
        Ok(())
    }

    /// Reorder states by ascending intercept, permuting every parameter
    /// block consistently.
    pub fn sorted_by_intercept(&self) -> Self {
        let k = self.k;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| self.intercept(a).partial_cmp(&self.intercept(b)).unwrap());
        let d = self.predictor_dim();
        let mut out = self.clone();
        for (new, &old) in order.iter().enumerate() {
            out.pi[new] = self.pi[old];
            for r in 0..d {
                out.coeffs[r * k + new] = self.coeffs[r * k + old];
            }
            for (new_j, &old_j) in order.iter().enumerate() {
                out.rates[new * k + new_j] = self.rates[old * k + old_j];
            }
        }
        out
    }
}

/// Mixture-level snapshot for clustering runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureSnapshot {
    pub weights: Vec<f64>,
    pub components: Vec<ModelSnapshot>,
    /// Subjects assigned to each component.
    pub member_counts: Vec<usize>,
}

impl MixtureSnapshot {
    pub fn from_mixture(mix: &MixtureState) -> Self {
        Self {
            weights: mix.weights.clone(),
            components: mix
                .components
                .iter()
                .map(|c| ModelSnapshot::from_model(&c.theta))
                .collect(),
            member_counts: mix.membership_counts(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn filled_clusters(&self) -> usize {
        self.member_counts.iter().filter(|&&c| c > 0).count()
    }
}

/// One accepted-or-rejected trans-dimensional proposal.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MoveRecord {
    pub move_type: String,
    pub accepted: bool,
}

impl From<&MoveOutcome> for MoveRecord {
    fn from(o: &MoveOutcome) -> Self {
        Self {
            move_type: o.move_type.as_str().to_string(),
            accepted: o.accepted,
        }
    }
}

/// One retained iteration of a chain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub log_marginal: f64,
    pub moves: Vec<MoveRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component_states: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filled_clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSnapshot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSnapshot>,
}

impl TraceRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(model) = &self.model {
            model.validate()?;
            if self.k != Some(model.k) {
                return Err(Error::Structure("trace record k disagrees with snapshot".into()));
            }
        }
        if let Some(mix) = &self.mixture {
            for c in &mix.components {
                c.validate()?;
            }
            if self.m != Some(mix.num_components()) {
                return Err(Error::Structure("trace record m disagrees with snapshot".into()));
            }
            if self.component_states
                != Some(mix.components.iter().map(|c| c.k).collect::<Vec<_>>())
            {
                return Err(Error::Structure(
                    "trace record component states disagree with snapshot".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Everything needed to rerun a fit bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub family: EmissionFamily,
    pub prior: PriorConfig,
    pub subjects: usize,
    /// SHA-256 of the canonical dataset serialization.
    pub data_digest: String,
    pub package_version: String,
}

/// SHA-256 digest of a canonical text form of the dataset, independent of
/// on-disk formatting.
pub fn data_digest(subjects: &[&Subject]) -> String {
    let mut hasher = Sha256::new();
    for s in subjects {
        hasher.update(s.id.as_bytes());
        for (i, &t) in s.times.iter().enumerate() {
            hasher.update(t.to_le_bytes());
            hasher.update(s.outcomes[i].to_le_bytes());
            for &z in &s.covariates[i] {
                hasher.update(z.to_le_bytes());
            }
        }
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Settings of one sampler run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub family: EmissionFamily,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Initial number of hidden states.
    #[serde(default = "default_one")]
    pub init_k: usize,
    /// Initial number of mixture components (clustering sampler).
    #[serde(default = "default_one")]
    pub init_m: usize,
}

fn default_thin() -> usize {
    1
}

fn default_one() -> usize {
    1
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be positive".into()));
        }
        if self.init_k == 0 || self.init_k > self.prior.k_cap {
            return Err(Error::Config(format!(
                "initial state count {} outside 1..={}",
                self.init_k, self.prior.k_cap
            )));
        }
        if self.init_m == 0 || self.init_m > self.prior.m_cap {
            return Err(Error::Config(format!(
                "initial component count {} outside 1..={}",
                self.init_m, self.prior.m_cap
            )));
        }
        self.family.validate()?;
        self.prior.validate()
    }

    pub fn manifest(&self, subjects: &[&Subject], seed: u64) -> RunManifest {
        RunManifest {
            command: match self.sampler {
                SamplerKind::Clustering => "cluster-fit".into(),
                _ => "fit".into(),
            },
            sampler: self.sampler,
            seed,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            family: self.family.clone(),
            prior: self.prior.clone(),
            subjects: subjects.len(),
            data_digest: data_digest(subjects),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// The retained trace of one run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub manifest: RunManifest,
    pub records: Vec<TraceRecord>,
}

fn predictor_dim(subjects: &[&Subject]) -> usize {
    1 + subjects.first().map_or(0, |s| s.covariates[0].len())
}

/// Draw an initial model from the prior, retrying a few times if the data
/// are impossible under the draw.
fn initial_state(
    subjects: &[&Subject],
    cfg: &FitConfig,
    rng: &mut ChaCha20Rng,
) -> Result<SamplerState> {
    let d = predictor_dim(subjects);
    let mut last_err = None;
    for _ in 0..50 {
        let theta = cfg.prior.draw_model(cfg.init_k, d, &cfg.family, rng);
        match SamplerState::new(theta, subjects, &cfg.prior) {
            Ok(state) => return Ok(state),
            Err(e @ Error::LikelihoodImpossible { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Structure("initialization failed".into())))
}

/// Run the rj or bd sampler over one model.
pub fn run_fit(subjects: &[&Subject], cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    cfg.validate()?;
    if cfg.sampler == SamplerKind::Clustering {
        return run_cluster_fit(subjects, cfg, seed);
    }
    for s in subjects {
        s.validate()?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut state = initial_state(subjects, cfg, &mut rng)?;
    let mut records = Vec::new();
    for iteration in 1..=cfg.iterations {
        let outcomes = match cfg.sampler {
            SamplerKind::Rj => vec![rj_step(&mut state, subjects, &cfg.prior, LikTarget::Data, &mut rng)?],
            SamplerKind::Bd => bd_sweep(&mut state, subjects, &cfg.prior, LikTarget::Data, &mut rng)?,
            SamplerKind::Clustering => unreachable!(),
        };
        gibbs_sweep(&mut state, subjects, &cfg.prior, LikTarget::Data, &mut rng)?;
        if iteration % cfg.thin == 0 {
            let record = TraceRecord {
                iteration,
                log_marginal: state.log_marginal,
                moves: outcomes.iter().map(MoveRecord::from).collect(),
                k: Some(state.theta.num_states()),
                m: None,
                component_states: None,
                filled_clusters: None,
                model: Some(ModelSnapshot::from_model(&state.theta)),
                mixture: None,
            };
            record.validate()?;
            records.push(record);
        }
    }
    Ok(FitResult {
        manifest: cfg.manifest(subjects, seed),
        records,
    })
}

/// Run the clustering sampler.
fn run_cluster_fit(subjects: &[&Subject], cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    for s in subjects {
        s.validate()?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = predictor_dim(subjects);
    let models: Vec<ModelState> = (0..cfg.init_m)
        .map(|_| cfg.prior.draw_model(cfg.init_k, d, &cfg.family, &mut rng))
        .collect();
    let weights = vec![1.0 / cfg.init_m as f64; cfg.init_m];
    let mut mix = MixtureState::new(models, weights, subjects, &cfg.prior, LikTarget::Data, &mut rng)?;
    let mut records = Vec::new();
    for iteration in 1..=cfg.iterations {
        let outcomes = clustering_sweep(&mut mix, subjects, &cfg.prior, LikTarget::Data, &mut rng)?;
        if iteration % cfg.thin == 0 {
            let log_marginal = mixture_loglik(subjects, &mix, LikTarget::Data)?
                .ok_or_else(|| Error::Structure("mixture has zero likelihood".into()))?;
            let snapshot = MixtureSnapshot::from_mixture(&mix);
            let record = TraceRecord {
                iteration,
                log_marginal,
                moves: outcomes.iter().map(MoveRecord::from).collect(),
                k: None,
                m: Some(snapshot.num_components()),
                component_states: Some(snapshot.components.iter().map(|c| c.k).collect()),
                filled_clusters: Some(snapshot.filled_clusters()),
                model: None,
                mixture: Some(snapshot),
            };
            record.validate()?;
            records.push(record);
        }
    }
    Ok(FitResult {
        manifest: cfg.manifest(subjects, seed),
        records,
    })
}

/// Records past the burn-in boundary.
pub fn retained<'a>(records: &'a [TraceRecord], burn_in: usize) -> Result<Vec<&'a TraceRecord>> {
    let kept: Vec<&TraceRecord> = records.iter().filter(|r| r.iteration > burn_in).collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "burn-in {burn_in} leaves no retained iterations"
        )));
    }
    Ok(kept)
}

/// Posterior frequency table over a per-record dimension (K or M).
pub fn dimension_posterior<F>(records: &[&TraceRecord], field: F) -> Result<Vec<(usize, f64)>>
where
    F: Fn(&TraceRecord) -> Option<usize>,
{
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut total = 0usize;
    for r in records {
        let v = field(r).ok_or_else(|| {
            Error::Structure(format!("record at iteration {} lacks the dimension field", r.iteration))
        })?;
        *counts.entry(v).or_default() += 1;
        total += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect())
}

/// Linear-interpolated quantile of a sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean and central 95% interval of one scalar series.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

fn summarize_series(name: String, values: &mut Vec<f64>) -> ParamSummary {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    ParamSummary {
        name,
        mean,
        lower: quantile(values, 0.025),
        upper: quantile(values, 0.975),
    }
}

/// Posterior summary of a single-model run: the K table plus parameter
/// means and 95% intervals conditional on the modal K, with states
/// relabelled by ascending intercept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub k_posterior: Vec<(usize, f64)>,
    pub modal_k: usize,
    pub params: Vec<ParamSummary>,
}

pub fn summarize_model_run(records: &[TraceRecord], burn_in: usize) -> Result<ModelSummary> {
    let kept = retained(records, burn_in)?;
    let k_posterior = dimension_posterior(&kept, |r| r.k)?;
    let modal_k = k_posterior
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|&(k, _)| k)
        .unwrap();
    let snapshots: Vec<ModelSnapshot> = kept
        .iter()
        .filter(|r| r.k == Some(modal_k))
        .filter_map(|r| r.model.as_ref())
        .map(|m| m.sorted_by_intercept())
        .collect();
    if snapshots.is_empty() {
        return Err(Error::Structure("no parameter snapshots at the modal dimension".into()));
    }
    let k = modal_k;
    let d = snapshots[0].predictor_dim();
    let mut params = Vec::new();
    for s in 0..k {
        let mut v: Vec<f64> = snapshots.iter().map(|m| m.pi[s]).collect();
        params.push(summarize_series(format!("pi[{}]", s + 1), &mut v));
    }
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let mut v: Vec<f64> = snapshots.iter().map(|m| m.rates[i * k + j]).collect();
            params.push(summarize_series(format!("q[{},{}]", i + 1, j + 1), &mut v));
        }
    }
    for r in 0..d {
        for s in 0..k {
            let mut v: Vec<f64> = snapshots.iter().map(|m| m.coeffs[r * k + s]).collect();
            params.push(summarize_series(format!("beta[{},{}]", r + 1, s + 1), &mut v));
        }
    }
    if snapshots[0].sigma.is_some() {
        let mut v: Vec<f64> = snapshots.iter().filter_map(|m| m.sigma).collect();
        params.push(summarize_series("sigma".into(), &mut v));
    }
    Ok(ModelSummary {
        k_posterior,
        modal_k,
        params,
    })
}

/// Posterior summary of a clustering run: component-count tables and, for
/// iterations at the modal M, the state-count distribution and mean
/// membership count per component (components ordered by ascending first
/// intercept within each iteration).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub m_posterior: Vec<(usize, f64)>,
    pub filled_posterior: Vec<(usize, f64)>,
    pub modal_m: usize,
    /// Per ordered component: posterior distribution of its state count.
    pub state_posteriors: Vec<Vec<(usize, f64)>>,
    /// Per ordered component: mean member count over modal-M iterations.
    pub mean_member_counts: Vec<f64>,
}

pub fn summarize_cluster_run(records: &[TraceRecord], burn_in: usize) -> Result<ClusterSummary> {
    let kept = retained(records, burn_in)?;
    let m_posterior = dimension_posterior(&kept, |r| r.m)?;
    let filled_posterior = dimension_posterior(&kept, |r| r.filled_clusters)?;
    let modal_m = m_posterior
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|&(m, _)| m)
        .unwrap();
    let modal: Vec<&MixtureSnapshot> = kept
        .iter()
        .filter(|r| r.m == Some(modal_m))
        .filter_map(|r| r.mixture.as_ref())
        .collect();
    if modal.is_empty() {
        return Err(Error::Structure("no mixture snapshots at the modal dimension".into()));
    }
    let mut state_counts: Vec<std::collections::BTreeMap<usize, usize>> =
        vec![Default::default(); modal_m];
    let mut member_totals = vec![0.0f64; modal_m];
    for snap in &modal {
        let mut order: Vec<usize> = (0..modal_m).collect();
        order.sort_by(|&a, &b| {
            snap.components[a]
                .intercept(0)
                .partial_cmp(&snap.components[b].intercept(0))
                .unwrap()
        });
        for (slot, &c) in order.iter().enumerate() {
            *state_counts[slot].entry(snap.components[c].k).or_default() += 1;
            member_totals[slot] += snap.member_counts[c] as f64;
        }
    }
    let n = modal.len() as f64;
    let state_posteriors = state_counts
        .into_iter()
        .map(|m| m.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
        .collect();
    let mean_member_counts = member_totals.iter().map(|t| t / n).collect();
    Ok(ClusterSummary {
        m_posterior,
        filled_posterior,
        modal_m,
        state_posteriors,
        mean_member_counts,
    })
}

/// Fit the same dataset under several chain seeds, returning each
/// replication's posterior over the model dimension (K, or M for the
/// clustering sampler). Replications run concurrently.
pub fn run_replication_study(
    subjects: &[&Subject],
    cfg: &FitConfig,
    seeds: &[u64],
) -> Result<Vec<Vec<(usize, f64)>>> {
    cfg.validate()?;
    let results: Vec<Result<Vec<(usize, f64)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || -> Result<Vec<(usize, f64)>> {
                    let fit = run_fit(subjects, cfg, seed)?;
                    let kept = retained(&fit.records, cfg.burn_in)?;
                    if cfg.sampler == SamplerKind::Clustering {
                        dimension_posterior(&kept, |r| r.m)
                    } else {
                        dimension_posterior(&kept, |r| r.k)
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    results.into_iter().collect()
}
