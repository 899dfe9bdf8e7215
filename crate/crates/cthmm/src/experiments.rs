//! Reproducible synthetic-data scenarios: configurable mixtures of latent
//! jump processes observed at irregular visit times, with bundled presets.
//! The `copd_like` preset is fully synthetic — a three-cluster Poisson
//! configuration with invented sizes and rates, not derived from any real
//! cohort.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::ctmc::{GeneratorMatrix, LatentPath};
use crate::emission::{simulate_observation, CoefficientMatrix, EmissionFamily};
use crate::error::{Error, Result};
use crate::hmm::{ModelState, Subject};
use crate::prior::PriorConfig;

/// Marginal law of one covariate, redrawn at every visit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl CovariateLaw {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            CovariateLaw::Normal { mean, sd } => Normal::new(*mean, *sd)
                .map(|d| d.sample(rng))
                .map_err(|e| Error::Config(format!("covariate law: {e}"))),
            CovariateLaw::Bernoulli { p } => Bernoulli::new(*p)
                .map(|d| if d.sample(rng) { 1.0 } else { 0.0 })
                .map_err(|e| Error::Config(format!("covariate law: {e}"))),
        }
    }
}

/// Which sampler a scenario is intended for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Rj,
    Bd,
    Clustering,
}

/// Ground-truth parameters of one generating component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTruth {
    pub subjects: usize,
    /// Generator rows (off-diagonals nonnegative, rows summing to zero).
    pub rates: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    /// Coefficient rows: row 0 intercepts, further rows covariate slopes.
    pub coeffs: Vec<Vec<f64>>,
}

impl ClusterTruth {
    pub fn num_states(&self) -> usize {
        self.pi.len()
    }

    /// Assemble the component's model, validating dimensions.
    pub fn model(&self, family: &EmissionFamily) -> Result<ModelState> {
        let k = self.num_states();
        let d = self.coeffs.len();
        let mut rate_mat = Array2::zeros((k, k));
        if self.rates.len() != k {
            return Err(Error::Config(format!(
                "generator has {} rows for {k} states",
                self.rates.len()
            )));
        }
        for (i, row) in self.rates.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!("generator row {i} has length {}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                rate_mat[[i, j]] = v;
            }
        }
        let mut coeff_mat = Array2::zeros((d, k));
        for (r, row) in self.coeffs.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!(
                    "coefficient row {r} has length {} for {k} states",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                coeff_mat[[r, j]] = v;
            }
        }
        let model = ModelState {
            pi: self.pi.clone(),
            generator: GeneratorMatrix::from_rates(rate_mat)?,
            coeffs: CoefficientMatrix::new(coeff_mat)?,
            family: family.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

/// A full scenario: generating mixture, observation scheme, priors, and
/// sampler settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub family: EmissionFamily,
    #[serde(default)]
    pub covariates: Vec<CovariateLaw>,
    pub horizon: f64,
    /// Bounds of the uniform law on the per-subject visit count.
    pub visits_min: usize,
    pub visits_max: usize,
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub prior: PriorConfig,
    pub clusters: Vec<ClusterTruth>,
}

fn default_thin() -> usize {
    1
}

const PRESETS: &[(&str, &str)] = &[
    ("ex5_1", include_str!("../presets/ex5_1.json")),
    ("ex5_3_gaussian", include_str!("../presets/ex5_3_gaussian.json")),
    ("ex5_3_poisson", include_str!("../presets/ex5_3_poisson.json")),
    ("ex5_4_gaussian", include_str!("../presets/ex5_4_gaussian.json")),
    ("ex5_4_poisson", include_str!("../presets/ex5_4_poisson.json")),
    ("ex5_4_sub", include_str!("../presets/ex5_4_sub.json")),
    ("copd_like", include_str!("../presets/copd_like.json")),
];

impl ScenarioConfig {
    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|(n, _)| *n).collect()
    }

    pub fn preset(name: &str) -> Result<Self> {
        let json = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, j)| *j)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {name}; available: {}",
                    Self::preset_names().join(", ")
                ))
            })?;
        let cfg: Self = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("preset {name}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.visits_min < 1 || self.visits_min > self.visits_max {
            return Err(Error::Config(format!(
                "visit-count bounds [{}, {}] are invalid",
                self.visits_min, self.visits_max
            )));
        }
        if self.clusters.is_empty() {
            return Err(Error::Config("scenario needs at least one cluster".into()));
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be positive".into()));
        }
        self.family.validate()?;
        self.prior.validate()?;
        let d = 1 + self.covariates.len();
        for (c, cluster) in self.clusters.iter().enumerate() {
            if cluster.subjects == 0 {
                return Err(Error::Config(format!("cluster {c} has no subjects")));
            }
            if cluster.coeffs.len() != d {
                return Err(Error::Config(format!(
                    "cluster {c} has {} coefficient rows but {} covariates",
                    cluster.coeffs.len(),
                    self.covariates.len()
                )));
            }
            cluster.model(&self.family)?;
        }
        Ok(())
    }

    pub fn total_subjects(&self) -> usize {
        self.clusters.iter().map(|c| c.subjects).sum()
    }

    /// Rescale cluster sizes proportionally to a new total (each cluster
    /// keeps at least one subject).
    pub fn with_total_subjects(mut self, total: usize) -> Result<Self> {
        if total < self.clusters.len() {
            return Err(Error::Config(format!(
                "{total} subjects cannot cover {} clusters",
                self.clusters.len()
            )));
        }
        let old_total = self.total_subjects() as f64;
        let mut assigned = 0usize;
        let m = self.clusters.len();
        for (i, cluster) in self.clusters.iter_mut().enumerate() {
            let n = if i + 1 == m {
                total - assigned
            } else {
                ((cluster.subjects as f64 / old_total) * total as f64).round().max(1.0) as usize
            };
            cluster.subjects = n;
            assigned += n;
        }
        self.validate()?;
        Ok(self)
    }
}

/// A generated dataset with its ground truth retained for diagnostics.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub subjects: Vec<Subject>,
    /// Generating cluster index per subject.
    pub cluster_of: Vec<usize>,
    /// Latent trajectory per subject on [0, horizon].
    pub paths: Vec<LatentPath>,
    /// Latent state at each visit per subject.
    pub states: Vec<Vec<usize>>,
}

/// Simulate a scenario: per subject, a latent path on [0, horizon], a
/// uniform visit count in [visits_min, visits_max] with the first visit at
/// time zero and the rest uniform on the window, and outcomes from the
/// emission family at the latent state of each visit.
pub fn generate_scenario<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<GeneratedData> {
    cfg.validate()?;
    let mut data = GeneratedData {
        subjects: Vec::new(),
        cluster_of: Vec::new(),
        paths: Vec::new(),
        states: Vec::new(),
    };
    let mut counter = 0usize;
    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let model = cluster.model(&cfg.family)?;
        for _ in 0..cluster.subjects {
            let path = model.generator.simulate_path(&model.pi, cfg.horizon, rng)?;
            let t = rng.random_range(cfg.visits_min..=cfg.visits_max);
            let mut times = vec![0.0f64];
            while times.len() < t {
                let candidate = rng.random_range(0.0..cfg.horizon);
                if !times.iter().any(|&x| x == candidate) {
                    times.push(candidate);
                }
            }
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut outcomes = Vec::with_capacity(t);
            let mut covariates = Vec::with_capacity(t);
            let mut states = Vec::with_capacity(t);
            for &time in &times {
                let state = path.state_at(time);
                let z: Vec<f64> = cfg
                    .covariates
                    .iter()
                    .map(|law| law.draw(rng))
                    .collect::<Result<_>>()?;
                let y = simulate_observation(&z, state, &model.coeffs, &model.family, rng)?;
                outcomes.push(y);
                covariates.push(z);
                states.push(state);
            }
            let subject = Subject {
                id: format!("s{counter:05}"),
                times,
                outcomes,
                covariates,
            };
            subject.validate()?;
            data.subjects.push(subject);
            data.cluster_of.push(c);
            data.paths.push(path);
            data.states.push(states);
            counter += 1;
        }
    }
    Ok(data)
}
