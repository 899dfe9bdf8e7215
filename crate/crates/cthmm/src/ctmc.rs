//! Generator-matrix numerics for the latent continuous-time Markov chain:
//! validation, transition kernels by uniformization, stationary distributions,
//! unconditional and endpoint-conditioned path simulation, and path sufficient
//! statistics.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// Off-diagonal rates below this are treated as absent edges when checking
/// irreducibility.
pub const EDGE_RATE_TOL: f64 = 1e-14;
/// Relative tail mass at which the uniformization series is truncated.
pub const UNIFORMIZATION_TAIL: f64 = 1e-12;
/// Negative matrix-exponential entries of magnitude below this are clamped to
/// zero; larger negatives are an error.
const NEG_CLAMP_TOL: f64 = 1e-12;

/// Infinitesimal generator Q of a finite-state CTMC.
///
/// Off-diagonal entries are nonnegative jump rates; each diagonal entry is the
/// negated row sum of the off-diagonals, so rows sum to exactly zero by
/// construction. States are indexed from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    dim: usize,
    rates: Array2<f64>,
}

impl GeneratorMatrix {
    /// Build a generator from a square matrix of rates. The diagonal of the
    /// input is ignored and recomputed as the negated off-diagonal row sum.
    pub fn from_rates(rates: Array2<f64>) -> Result<Self> {
        let dim = rates.nrows();
        if dim == 0 || rates.ncols() != dim {
            return Err(Error::Structure(format!(
                "generator must be square and non-empty, got {}x{}",
                rates.nrows(),
                rates.ncols()
            )));
        }
        let mut q = rates;
        for l in 0..dim {
            let mut row_sum = 0.0;
            for m in 0..dim {
                if m == l {
                    continue;
                }
                let v = q[[l, m]];
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite rate q[{l},{m}] = {v}"
                    )));
                }
                if v < 0.0 {
                    return Err(Error::Numeric(format!(
                        "negative off-diagonal rate q[{l},{m}] = {v}"
                    )));
                }
                row_sum += v;
            }
            q[[l, l]] = -row_sum;
        }
        Ok(Self { dim, rates: q })
    }

    /// The 1-state generator (the zero matrix).
    pub fn trivial() -> Self {
        Self {
            dim: 1,
            rates: Array2::zeros((1, 1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rates(&self) -> &Array2<f64> {
        &self.rates
    }

    pub fn rate(&self, l: usize, m: usize) -> f64 {
        self.rates[[l, m]]
    }

    /// Total exit rate out of state `l`, i.e. -q[l,l].
    pub fn exit_rate(&self, l: usize) -> f64 {
        -self.rates[[l, l]]
    }

    /// Transition kernel P(delta) = exp(Q * delta), computed by uniformization
    /// with tail truncation. Rows sum to 1 within 1e-12 and entries lie in
    /// [0, 1]; round-off negatives are clamped and rows renormalized.
    pub fn transition_matrix(&self, delta: f64) -> Result<Array2<f64>> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::Numeric(format!(
                "delta must be finite and nonnegative, got {delta}"
            )));
        }
        let k = self.dim;
        let lambda = (0..k).map(|l| self.exit_rate(l)).fold(0.0f64, f64::max);
        let mut p = Array2::eye(k);
        let mu = lambda * delta;
        if mu == 0.0 {
            return Ok(p);
        }
        // R = I + Q / lambda is substochastic with nonnegative entries.
        let mut r = self.rates.mapv(|v| v / lambda);
        for i in 0..k {
            r[[i, i]] += 1.0;
        }
        // P = sum_n pois(n; mu) R^n, accumulated until the Poisson tail mass
        // drops below the truncation threshold.
        let mut weight = (-mu).exp();
        let mut cumulative = weight;
        let mut term = Array2::eye(k);
        let mut out: Array2<f64> = &term * weight;
        let mut n = 0usize;
        let max_terms = (mu + 10.0 * mu.sqrt() + 50.0) as usize + 8;
        while cumulative < 1.0 - UNIFORMIZATION_TAIL && n < max_terms {
            n += 1;
            term = term.dot(&r);
            weight *= mu / n as f64;
            out.scaled_add(weight, &term);
            cumulative += weight;
        }
        p = out;
        // Round-off cleanup: clamp tiny negatives, renormalize rows.
        for l in 0..k {
            let mut sum = 0.0;
            for m in 0..k {
                let v = p[[l, m]];
                if v < 0.0 {
                    if v < -NEG_CLAMP_TOL {
                        return Err(Error::Numeric(format!(
                            "matrix exponential produced entry {v} at [{l},{m}]"
                        )));
                    }
                    p[[l, m]] = 0.0;
                } else {
                    sum += v;
                }
            }
            if sum <= 0.0 {
                return Err(Error::Numeric(format!("zero row {l} in transition matrix")));
            }
            for m in 0..k {
                p[[l, m]] /= sum;
            }
        }
        Ok(p)
    }

    /// Check strong connectivity of the directed graph with edges where
    /// q[l,m] > EDGE_RATE_TOL.
    pub fn check_irreducible(&self) -> Result<()> {
        let k = self.dim;
        if k == 1 {
            return Ok(());
        }
        let forward = self.reachable(0, false);
        let backward = self.reachable(0, true);
        let unreachable: Vec<usize> = (0..k)
            .filter(|&s| !(forward[s] && backward[s]))
            .collect();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(Error::ReducibleGenerator {
                from: 0,
                unreachable,
            })
        }
    }

    fn reachable(&self, from: usize, reverse: bool) -> Vec<bool> {
        let k = self.dim;
        let mut seen = vec![false; k];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(l) = stack.pop() {
            for m in 0..k {
                let rate = if reverse {
                    self.rates[[m, l]]
                } else {
                    self.rates[[l, m]]
                };
                if m != l && rate > EDGE_RATE_TOL && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen
    }

    /// Stationary distribution s with sQ = 0 and sum(s) = 1. Requires an
    /// irreducible generator.
    pub fn stationary_distribution(&self) -> Result<Array1<f64>> {
        self.check_irreducible()?;
        let k = self.dim;
        if k == 1 {
            return Ok(Array1::ones(1));
        }
        // Solve Q^T s = 0 with the last equation replaced by sum(s) = 1.
        let mut a = self.rates.t().to_owned();
        let mut b = Array1::zeros(k);
        for m in 0..k {
            a[[k - 1, m]] = 1.0;
        }
        b[k - 1] = 1.0;
        let mut s = solve_linear(a, b)?;
        let total: f64 = s.sum();
        s.mapv_inplace(|v| (v / total).max(0.0));
        let total: f64 = s.sum();
        s.mapv_inplace(|v| v / total);
        Ok(s)
    }

    /// Unconditional forward (Gillespie) simulation over [0, horizon] starting
    /// from a state drawn from `initial`.
    pub fn simulate_path<R: Rng + ?Sized>(
        &self,
        initial: &[f64],
        horizon: f64,
        rng: &mut R,
    ) -> Result<LatentPath> {
        if !(horizon > 0.0) {
            return Err(Error::Numeric(format!("horizon must be positive, got {horizon}")));
        }
        if initial.len() != self.dim {
            return Err(Error::Structure(format!(
                "initial distribution has length {}, generator dim {}",
                initial.len(),
                self.dim
            )));
        }
        let start = sample_categorical(initial, rng)?;
        self.simulate_from(start, 0.0, horizon, rng)
    }

    /// Forward simulation starting in `start_state` over [t0, t1].
    pub fn simulate_from<R: Rng + ?Sized>(
        &self,
        start_state: usize,
        t0: f64,
        t1: f64,
        rng: &mut R,
    ) -> Result<LatentPath> {
        let mut states = vec![start_state];
        let mut jump_times = Vec::new();
        let mut t = t0;
        let mut current = start_state;
        loop {
            let rate = self.exit_rate(current);
            if rate <= 0.0 {
                break;
            }
            let hold = -rng.random::<f64>().ln() / rate;
            t += hold;
            if t >= t1 {
                break;
            }
            let next = self.sample_next_state(current, rng)?;
            jump_times.push(t);
            states.push(next);
            current = next;
        }
        LatentPath::new(t0, t1, jump_times, states)
    }

    fn sample_next_state<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> Result<usize> {
        let rate = self.exit_rate(from);
        let mut u = rng.random::<f64>() * rate;
        for m in 0..self.dim {
            if m == from {
                continue;
            }
            u -= self.rates[[from, m]];
            if u <= 0.0 {
                return Ok(m);
            }
        }
        // Round-off fallback: last state with positive rate.
        (0..self.dim)
            .rev()
            .find(|&m| m != from && self.rates[[from, m]] > 0.0)
            .ok_or_else(|| Error::Numeric(format!("no exit from state {from}")))
    }

    /// Endpoint-conditioned path over an interval of length `delta`, by the
    /// modified rejection sampler of Hobolth & Stone: when start != end, the
    /// first jump time is drawn from the truncated exponential so constant
    /// paths are never proposed; when start == end, plain forward simulation
    /// with rejection on the endpoint. After `rejection_cap` rejections, falls
    /// back to direct uniformization-based bridge sampling.
    pub fn endpoint_conditioned_path<R: Rng + ?Sized>(
        &self,
        start_state: usize,
        end_state: usize,
        delta: f64,
        rng: &mut R,
        rejection_cap: usize,
    ) -> Result<LatentPath> {
        if !(delta > 0.0) {
            return Err(Error::Numeric(format!("delta must be positive, got {delta}")));
        }
        if start_state >= self.dim || end_state >= self.dim {
            return Err(Error::Structure(format!(
                "endpoint state out of range: {start_state} -> {end_state} with dim {}",
                self.dim
            )));
        }
        let exit = self.exit_rate(start_state);
        if start_state == end_state {
            if exit <= 0.0 {
                return LatentPath::new(0.0, delta, Vec::new(), vec![start_state]);
            }
            for _ in 0..rejection_cap {
                let path = self.simulate_from(start_state, 0.0, delta, rng)?;
                if *path.states.last().unwrap() == end_state {
                    return Ok(path);
                }
            }
        } else {
            if exit <= 0.0 {
                return Err(Error::ImpossibleEndpoint {
                    start: start_state,
                    end: end_state,
                    delta,
                });
            }
            for _ in 0..rejection_cap {
                // First jump from the exponential truncated to (0, delta).
                let u = rng.random::<f64>();
                let t1 = -(1.0 - u * (1.0 - (-exit * delta).exp())).ln() / exit;
                let next = self.sample_next_state(start_state, rng)?;
                let rest = self.simulate_from(next, t1, delta, rng)?;
                if *rest.states.last().unwrap() == end_state {
                    let mut jump_times = vec![t1];
                    jump_times.extend_from_slice(&rest.jump_times);
                    let mut states = vec![start_state];
                    states.extend_from_slice(&rest.states);
                    return LatentPath::new(0.0, delta, jump_times, states);
                }
            }
        }
        self.uniformized_bridge(start_state, end_state, delta, rng)
    }

    /// Direct endpoint-conditioned sampler: draw the uniformized jump count
    /// from the endpoint-conditioned Poisson mixture, then the intermediate
    /// states of the discrete bridge, then the jump times as sorted uniforms.
    pub fn uniformized_bridge<R: Rng + ?Sized>(
        &self,
        start_state: usize,
        end_state: usize,
        delta: f64,
        rng: &mut R,
    ) -> Result<LatentPath> {
        let k = self.dim;
        let lambda = (0..k).map(|l| self.exit_rate(l)).fold(0.0f64, f64::max);
        if lambda <= 0.0 {
            if start_state == end_state {
                return LatentPath::new(0.0, delta, Vec::new(), vec![start_state]);
            }
            return Err(Error::ImpossibleEndpoint {
                start: start_state,
                end: end_state,
                delta,
            });
        }
        let mu = lambda * delta;
        let mut r = self.rates.mapv(|v| v / lambda);
        for i in 0..k {
            r[[i, i]] += 1.0;
        }
        // Powers of R up to the Poisson truncation point.
        let max_terms = ((mu + 10.0 * mu.sqrt() + 50.0) as usize + 8).max(4);
        let mut powers: Vec<Array2<f64>> = Vec::with_capacity(max_terms + 1);
        powers.push(Array2::eye(k));
        let mut weights = Vec::with_capacity(max_terms + 1);
        let mut pois = (-mu).exp();
        let mut cumulative = pois;
        weights.push(pois * powers[0][[start_state, end_state]]);
        let mut n = 0usize;
        while cumulative < 1.0 - UNIFORMIZATION_TAIL && n < max_terms {
            n += 1;
            let next = powers[n - 1].dot(&r);
            pois *= mu / n as f64;
            cumulative += pois;
            weights.push(pois * next[[start_state, end_state]]);
            powers.push(next);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ImpossibleEndpoint {
                start: start_state,
                end: end_state,
                delta,
            });
        }
        let jumps = sample_categorical_unnormalized(&weights, total, rng);
        // Intermediate states of the discrete bridge.
        let mut chain = vec![start_state];
        for i in 1..jumps {
            let prev = chain[i - 1];
            let remaining = &powers[jumps - i];
            let probs: Vec<f64> = (0..k)
                .map(|s| r[[prev, s]] * remaining[[s, end_state]])
                .collect();
            let total: f64 = probs.iter().sum();
            if total <= 0.0 {
                return Err(Error::Sampling(format!(
                    "bridge step impossible from state {prev}"
                )));
            }
            chain.push(sample_categorical_unnormalized(&probs, total, rng));
        }
        if jumps > 0 {
            chain.push(end_state);
        }
        let mut times: Vec<f64> = (0..jumps).map(|_| rng.random::<f64>() * delta).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Collapse virtual (self) transitions.
        let mut jump_times = Vec::new();
        let mut states = vec![chain[0]];
        for (i, &t) in times.iter().enumerate() {
            let next = chain[i + 1];
            if next != *states.last().unwrap() {
                jump_times.push(t);
                states.push(next);
            }
        }
        LatentPath::new(0.0, delta, jump_times, states)
    }
}

/// A realized jump-process trajectory: piecewise-constant states tiling
/// [start_time, end_time], with jumps at strictly increasing interior times.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub start_time: f64,
    pub end_time: f64,
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
}

impl LatentPath {
    pub fn new(
        start_time: f64,
        end_time: f64,
        jump_times: Vec<f64>,
        states: Vec<usize>,
    ) -> Result<Self> {
        if !(end_time > start_time) {
            return Err(Error::Structure(format!(
                "path interval [{start_time}, {end_time}] is empty"
            )));
        }
        if states.len() != jump_times.len() + 1 {
            return Err(Error::Structure(format!(
                "path has {} segments but {} jump times",
                states.len(),
                jump_times.len()
            )));
        }
        let mut prev = start_time;
        for &t in &jump_times {
            if !(t > prev) || !(t < end_time) {
                return Err(Error::Structure(format!(
                    "jump time {t} outside ({prev}, {end_time})"
                )));
            }
            prev = t;
        }
        for w in states.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Structure(
                    "consecutive path segments share the same state".into(),
                ));
            }
        }
        Ok(Self {
            start_time,
            end_time,
            jump_times,
            states,
        })
    }

    pub fn start_state(&self) -> usize {
        self.states[0]
    }

    pub fn end_state(&self) -> usize {
        *self.states.last().unwrap()
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        self.states[idx]
    }

    /// Jump counts N[l,m] and occupancy times R[l] over `dim` states.
    pub fn statistics(&self, dim: usize) -> PathStatistics {
        let mut stats = PathStatistics::zeros(dim);
        let mut t = self.start_time;
        for (i, &state) in self.states.iter().enumerate() {
            let next_t = if i < self.jump_times.len() {
                self.jump_times[i]
            } else {
                self.end_time
            };
            stats.occupancy[state] += next_t - t;
            if i + 1 < self.states.len() {
                stats.jump_counts[[state, self.states[i + 1]]] += 1;
            }
            t = next_t;
        }
        stats
    }
}

/// Sufficient statistics of a fully observed path: transition counts N[l,m]
/// (zero on the diagonal) and per-state occupancy times R[l].
#[derive(Debug, Clone, PartialEq)]
pub struct PathStatistics {
    pub jump_counts: Array2<u64>,
    pub occupancy: Array1<f64>,
}

impl PathStatistics {
    pub fn zeros(dim: usize) -> Self {
        Self {
            jump_counts: Array2::zeros((dim, dim)),
            occupancy: Array1::zeros(dim),
        }
    }

    pub fn accumulate(&mut self, other: &PathStatistics) {
        self.jump_counts += &other.jump_counts;
        self.occupancy += &other.occupancy;
    }

    pub fn total_time(&self) -> f64 {
        self.occupancy.sum()
    }
}

/// Draw an index from a normalized probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::Numeric(format!(
            "invalid categorical weights: {probs:?}"
        )));
    }
    Ok(sample_categorical_unnormalized(probs, total, rng))
}

fn sample_categorical_unnormalized<R: Rng + ?Sized>(
    weights: &[f64],
    total: f64,
    rng: &mut R,
) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Gaussian elimination with partial pivoting; dimensions here are tiny.
pub fn solve_linear(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[[row, col]].abs() > a[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if a[[pivot, col]].abs() < 1e-300 {
            return Err(Error::Numeric("singular linear system".into()));
        }
        if pivot != col {
            for m in 0..n {
                a.swap([pivot, m], [col, m]);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for m in col..n {
                a[[row, m]] -= factor * a[[col, m]];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut sum = b[row];
        for m in row + 1..n {
            sum -= a[[row, m]] * x[m];
        }
        x[row] = sum / a[[row, row]];
    }
    Ok(x)
}
