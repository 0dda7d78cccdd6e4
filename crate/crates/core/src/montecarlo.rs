//! Trajectory simulation of faultless and faulty states.
//!
//! The simulator multiplies actual state vectors and measures distances on
//! density matrices, without using the reachable-state lumping of `chain`.
//! Each run draws from its own ChaCha8 stream `(seed, run)`, and partial sums
//! are reduced in run order, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::is_bad;
use crate::error::{QerrError, Result};
use crate::exec::Execution;
use crate::group::GroupTable;
use crate::model::{Circuit, ErrorModel, GateDistribution};
use crate::states::{pure_distance, NormOrder, PureState};

const RUN_CHUNK: usize = 1024;

/// A per-run random stream.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimMode {
    /// Gates drawn from `kappa` at every step.
    RandomCircuit,
    /// The given gate sequence; the horizon is its length.
    FixedCircuit(Circuit),
    /// `horizon - 1` gates from `kappa`, then the gate that maps the
    /// faultless state to `|0...0>`.
    RandomizedBenchmarking,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub mode: SimMode,
    pub kappa: GateDistribution,
    pub err: ErrorModel,
    pub psi0: PureState,
    pub big_psi0: PureState,
    pub horizon: usize,
    /// Ascending thresholds.
    pub deltas: Vec<f64>,
    pub norm: NormOrder,
    pub runs: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl SimConfig {
    pub fn horizon(&self) -> usize {
        match &self.mode {
            SimMode::FixedCircuit(c) => c.len(),
            _ => self.horizon,
        }
    }

    fn validate(&self, table: &GroupTable) -> Result<()> {
        if self.runs == 0 {
            return Err(QerrError::validation("runs must be at least 1"));
        }
        if self.deltas.windows(2).any(|w| w[0] > w[1]) {
            return Err(QerrError::validation("delta grid must be ascending"));
        }
        if self.psi0.dim() != table.dim() || self.big_psi0.dim() != table.dim() {
            return Err(QerrError::validation(format!(
                "initial states must have dimension {}",
                table.dim()
            )));
        }
        self.kappa.validate(table)?;
        self.err.validate(table)?;
        match &self.mode {
            SimMode::FixedCircuit(c) => {
                if let Some(&g) = c.gates.iter().find(|&&g| g >= table.order()) {
                    return Err(QerrError::validation(format!(
                        "gate index {g} out of range"
                    )));
                }
            }
            SimMode::RandomizedBenchmarking if self.horizon == 0 => {
                return Err(QerrError::validation(
                    "benchmarking needs at least one gate",
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Empirical curves; probability tables are indexed `[delta][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub runs: usize,
    pub seed: u64,
    pub deltas: Vec<f64>,
    pub mean_dist: Vec<f64>,
    /// Sample standard error of `mean_dist`.
    pub mean_dist_se: Vec<f64>,
    pub p_error: Vec<Vec<f64>>,
    pub p_max_error: Vec<Vec<f64>>,
    /// `sqrt(p(1 - p) / runs)` of the empirical `p`.
    pub p_error_se: Vec<Vec<f64>>,
    pub p_max_error_se: Vec<Vec<f64>>,
}

impl SimResult {
    pub fn horizon(&self) -> usize {
        self.mean_dist.len() - 1
    }
}

/// Distances `D_0, ..., D_tau` of one trajectory.
fn trajectory(
    table: &GroupTable,
    cfg: &SimConfig,
    tau: usize,
    to_zero: usize,
    run: u64,
) -> Result<Vec<f64>> {
    let mut rng = run_rng(cfg.seed, run);
    let mut ideal = cfg.psi0.clone();
    let mut faulty = cfg.big_psi0.clone();
    let mut out = Vec::with_capacity(tau + 1);
    out.push(pure_distance(&ideal, &faulty, cfg.norm)?);
    let mut product = 0;
    for t in 1..=tau {
        let gate = match &cfg.mode {
            SimMode::FixedCircuit(c) => c.gates[t - 1],
            SimMode::RandomizedBenchmarking if t == tau => {
                table.compose(to_zero, table.inverse(product))
            }
            _ => cfg.kappa.0.sample_with(rng.gen::<f64>()),
        };
        product = table.compose(gate, product);
        let lambda = cfg.err.for_gate(gate).sample_with(rng.gen::<f64>());
        let u = table.matrix(gate);
        ideal = ideal.apply(u);
        faulty = faulty.apply(u).apply(table.matrix(lambda));
        out.push(pure_distance(&ideal, &faulty, cfg.norm)?);
    }
    Ok(out)
}

/// Index of a group element taking `psi` to `|0...0>` (up to phase).
fn zero_mapper(table: &GroupTable, psi: &PureState) -> Result<usize> {
    let zero = PureState::basis(table.qubits(), 0);
    table
        .elements()
        .iter()
        .position(|e| zero.inner(&psi.apply(&e.matrix)).norm() > 1.0 - 1e-9)
        .ok_or_else(|| {
            QerrError::validation(format!(
                "no element of {} maps the start to |0...0>",
                table.name()
            ))
        })
}

fn benchmarking_target(table: &GroupTable, cfg: &SimConfig) -> Result<usize> {
    match cfg.mode {
        SimMode::RandomizedBenchmarking => zero_mapper(table, &cfg.psi0),
        _ => Ok(0),
    }
}

#[derive(Clone, Debug)]
struct Tally {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    exceed: Vec<Vec<u64>>,
    max_exceed: Vec<Vec<u64>>,
}

impl Tally {
    fn new(tau: usize, deltas: usize) -> Self {
        Tally {
            sum: vec![0.0; tau + 1],
            sum_sq: vec![0.0; tau + 1],
            exceed: vec![vec![0; tau + 1]; deltas],
            max_exceed: vec![vec![0; tau + 1]; deltas],
        }
    }

    fn add(&mut self, d: &[f64], deltas: &[f64]) {
        for (t, &x) in d.iter().enumerate() {
            self.sum[t] += x;
            self.sum_sq[t] += x * x;
        }
        for (k, &delta) in deltas.iter().enumerate() {
            let mut seen = false;
            for (t, &x) in d.iter().enumerate() {
                let bad = is_bad(x, delta);
                seen |= bad;
                self.exceed[k][t] += bad as u64;
                self.max_exceed[k][t] += seen as u64;
            }
        }
    }

    fn merge(&mut self, other: Tally) {
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(other.sum_sq) {
            *a += b;
        }
        for (a, b) in self.exceed.iter_mut().zip(other.exceed) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.max_exceed.iter_mut().zip(other.max_exceed) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Runs fixed-size chunks of trajectories through `f`, merged in chunk order.
fn chunked<T: Send>(
    runs: usize,
    exec: Execution,
    f: impl Fn(std::ops::Range<usize>) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let chunks = runs.div_ceil(RUN_CHUNK);
    exec.map(
        chunks,
        |c| f(c * RUN_CHUNK..((c + 1) * RUN_CHUNK).min(runs)),
    )
    .into_iter()
    .collect()
}

pub fn simulate(table: &GroupTable, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate(table)?;
    let tau = cfg.horizon();
    let to_zero = benchmarking_target(table, cfg)?;
    let parts = chunked(cfg.runs, cfg.exec, |range| {
        let mut tally = Tally::new(tau, cfg.deltas.len());
        for run in range {
            tally.add(
                &trajectory(table, cfg, tau, to_zero, run as u64)?,
                &cfg.deltas,
            );
        }
        Ok(tally)
    })?;
    let mut total = Tally::new(tau, cfg.deltas.len());
    for p in parts {
        total.merge(p);
    }

    let n = cfg.runs as f64;
    let mean_dist: Vec<f64> = total.sum.iter().map(|s| s / n).collect();
    let mean_dist_se = total
        .sum_sq
        .iter()
        .zip(&mean_dist)
        .map(|(sq, m)| {
            if cfg.runs < 2 {
                return 0.0;
            }
            let var = ((sq - n * m * m) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    let freq = |counts: &Vec<Vec<u64>>| -> Vec<Vec<f64>> {
        counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / n).collect())
            .collect()
    };
    let se = |p: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        p.iter()
            .map(|row| row.iter().map(|&x| binomial_se(x, cfg.runs)).collect())
            .collect()
    };
    let p_error = freq(&total.exceed);
    let p_max_error = freq(&total.max_exceed);
    Ok(SimResult {
        runs: cfg.runs,
        seed: cfg.seed,
        deltas: cfg.deltas.clone(),
        mean_dist,
        mean_dist_se,
        p_error_se: se(&p_error),
        p_max_error_se: se(&p_max_error),
        p_error,
        p_max_error,
    })
}

pub fn binomial_se(p: f64, runs: usize) -> f64 {
    (p * (1.0 - p) / runs as f64).max(0.0).sqrt()
}

/// Sample statistics of the first passage time `T_B = min{t : D_t > delta}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingEstimate {
    /// Mean over all runs, censored runs counted at the horizon.
    pub mean: f64,
    pub se: f64,
    pub censored_fraction: f64,
    pub runs: usize,
}

pub fn empirical_hitting_time(
    table: &GroupTable,
    cfg: &SimConfig,
    delta: f64,
) -> Result<HittingEstimate> {
    cfg.validate(table)?;
    let tau = cfg.horizon();
    let to_zero = benchmarking_target(table, cfg)?;
    let parts = chunked(cfg.runs, cfg.exec, |range| {
        let (mut s, mut s2, mut censored) = (0.0, 0.0, 0u64);
        for run in range {
            let d = trajectory(table, cfg, tau, to_zero, run as u64)?;
            let t = match d.iter().position(|&x| is_bad(x, delta)) {
                Some(t) => t,
                None => {
                    censored += 1;
                    tau
                }
            } as f64;
            s += t;
            s2 += t * t;
        }
        Ok((s, s2, censored))
    })?;
    let (mut s, mut s2, mut censored) = (0.0, 0.0, 0u64);
    for (a, b, c) in parts {
        s += a;
        s2 += b;
        censored += c;
    }
    let n = cfg.runs as f64;
    let mean = s / n;
    let var = if cfg.runs > 1 {
        ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(HittingEstimate {
        mean,
        se: (var / n).sqrt(),
        censored_fraction: censored as f64 / n,
        runs: cfg.runs,
    })
}

/// How many points of an analytic curve lie within `z` standard errors of
/// the empirical one.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Agreement {
    pub points: usize,
    pub within: usize,
    pub max_abs_z: f64,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        if self.points == 0 {
            1.0
        } else {
            self.within as f64 / self.points as f64
        }
    }

    pub fn merge(self, other: Agreement) -> Agreement {
        Agreement {
            points: self.points + other.points,
            within: self.within + other.within,
            max_abs_z: self.max_abs_z.max(other.max_abs_z),
        }
    }

    fn push(&mut self, diff: f64, se: f64, z: f64) {
        self.points += 1;
        let score = z_score(diff, se);
        self.max_abs_z = self.max_abs_z.max(score);
        if score <= z {
            self.within += 1;
        }
    }
}

/// `|diff| / se`; with a zero standard error only `|diff| <= 1e-12` scores 0,
/// anything else scores infinity.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Compares probabilities using the binomial standard error of the analytic
/// value; where that value is exactly 0 or 1 the empirical one must match.
pub fn agree_probabilities(analytic: &[f64], empirical: &[f64], runs: usize, z: f64) -> Agreement {
    let mut a = Agreement::default();
    for (&p, &q) in analytic.iter().zip(empirical) {
        a.push(q - p, binomial_se(p, runs), z);
    }
    a
}

/// Compares means using the analytic variance `E[D^2] - E[D]^2`.
pub fn agree_means(
    analytic_mean: &[f64],
    analytic_second: &[f64],
    empirical: &[f64],
    runs: usize,
    z: f64,
) -> Agreement {
    let mut a = Agreement::default();
    for ((&m, &m2), &x) in analytic_mean.iter().zip(analytic_second).zip(empirical) {
        let se = ((m2 - m * m).max(0.0) / runs as f64).sqrt();
        a.push(x - m, se, z);
    }
    a
}
