//! Simulated annealing over circuits with a fixed total product.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::chain::FixedCircuitModel;
use crate::exec::Execution;
use crate::group::GroupTable;
use crate::model::Circuit;
use crate::montecarlo::run_rng;
use crate::{QerrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// `P[D_tau > delta]`.
    PError,
    /// `P[max_{t <= tau} D_t > delta]`.
    PMaxError,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = QerrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p-error" => Ok(ObjectiveKind::PError),
            "p-max-error" => Ok(ObjectiveKind::PMaxError),
            _ => Err(QerrError::validation(format!(
                "unknown objective `{s}` (expected p-error or p-max-error)"
            ))),
        }
    }
}

/// Error-accumulation objective of a circuit, memoized by gate sequence.
#[derive(Clone, Debug)]
pub struct Objective<'m, 't> {
    model: &'m FixedCircuitModel<'t>,
    kind: ObjectiveKind,
    delta: f64,
    memo: HashMap<Vec<usize>, f64>,
}

impl<'m, 't> Objective<'m, 't> {
    pub fn new(model: &'m FixedCircuitModel<'t>, kind: ObjectiveKind, delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(QerrError::validation(format!(
                "delta must be >= 0, got {delta}"
            )));
        }
        Ok(Objective {
            model,
            kind,
            delta,
            memo: HashMap::new(),
        })
    }

    pub fn model(&self) -> &'m FixedCircuitModel<'t> {
        self.model
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn evaluations(&self) -> usize {
        self.memo.len()
    }

    pub fn value(&mut self, circuit: &Circuit) -> Result<f64> {
        if let Some(&u) = self.memo.get(&circuit.gates) {
            return Ok(u);
        }
        let (p_err, p_max) = self.model.end_probabilities(circuit, self.delta)?;
        let u = match self.kind {
            ObjectiveKind::PError => p_err,
            ObjectiveKind::PMaxError => p_max,
        };
        self.memo.insert(circuit.gates.clone(), u);
        Ok(u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// `T = c / ln(eta + 1)`.
    CLog {
        c: f64,
    },
    /// `T = tau * m / ln(eta)`, infinite at `eta = 1`.
    Guaranteed {
        m: f64,
    },
    Constant {
        t: f64,
    },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            Schedule::CLog { c } => ("C", c),
            Schedule::Guaranteed { m } => ("M", m),
            Schedule::Constant { t } => ("T", t),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(QerrError::validation(format!(
                "schedule constant {name} must be > 0, got {v}"
            )))
        }
    }

    /// Temperature at iteration `eta >= 1` for a circuit of length `tau`.
    pub fn temperature(&self, eta: usize, tau: usize) -> f64 {
        let eta = eta as f64;
        match *self {
            Schedule::CLog { c } => c / (eta + 1.0).ln(),
            Schedule::Guaranteed { m } => {
                if eta <= 1.0 {
                    f64::INFINITY
                } else {
                    tau as f64 * m / eta.ln()
                }
            }
            Schedule::Constant { t } => t,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnnealConfig {
    pub iterations: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Restricts gates to this subset (gate-limited variant).
    pub subset: Option<Vec<usize>>,
}

impl AnnealConfig {
    pub fn validate(&self, table: &GroupTable) -> Result<()> {
        if self.iterations == 0 {
            return Err(QerrError::validation("iterations must be >= 1"));
        }
        self.schedule.validate()?;
        if let Some(a) = &self.subset {
            if a.is_empty() {
                return Err(QerrError::validation("gate subset is empty"));
            }
            if let Some(&g) = a.iter().find(|&&g| g >= table.order()) {
                return Err(QerrError::validation(format!(
                    "gate subset element {g} is not in {}",
                    table.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub eta: usize,
    pub u_current: f64,
    pub u_best: f64,
    pub temperature: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnnealTrace {
    pub rows: Vec<TraceRow>,
    pub best: Circuit,
    pub best_value: f64,
    pub initial_value: f64,
    pub warnings: Vec<String>,
    /// Set when an objective evaluation failed mid-run.
    pub aborted: Option<String>,
}

impl AnnealTrace {
    pub fn accepted_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.accepted).count() as f64 / self.rows.len() as f64
    }
}

/// `exp(-max(0, u_j - u_i) / T)`.
pub fn acceptance_probability(u_i: f64, u_j: f64, temperature: f64) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(QerrError::validation(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let worse = (u_j - u_i).max(0.0);
    if worse == 0.0 || temperature.is_infinite() {
        return Ok(1.0);
    }
    Ok((-worse / temperature).exp())
}

/// Sets position `I` to a uniform element `G` and position `I+1` to
/// `G_{I+1} G_I G^-1`, which keeps the applied product unchanged.
pub fn propose_candidate<R: Rng + ?Sized>(
    circuit: &Circuit,
    table: &GroupTable,
    rng: &mut R,
) -> Result<Circuit> {
    let tau = circuit.len();
    if tau < 2 {
        return Err(QerrError::validation(format!(
            "annealing needs at least 2 gates, got {tau}"
        )));
    }
    let i = rng.gen_range(0..tau - 1);
    let g = rng.gen_range(0..table.order());
    Ok(replace_pair(circuit, table, i, g))
}

fn replace_pair(circuit: &Circuit, table: &GroupTable, i: usize, g: usize) -> Circuit {
    let local = table.compose(circuit.gates[i + 1], circuit.gates[i]);
    let mut gates = circuit.gates.clone();
    gates[i] = g;
    gates[i + 1] = table.compose(local, table.inverse(g));
    Circuit::new(gates)
}

/// Product-preserving pairs from a gate subset, keyed by the local product.
#[derive(Clone, Debug)]
pub struct PairIndex {
    by_product: HashMap<usize, Vec<(usize, usize)>>,
}

impl PairIndex {
    pub fn new(table: &GroupTable, subset: &[usize]) -> Self {
        let mut a = subset.to_vec();
        a.sort_unstable();
        a.dedup();
        let mut by_product: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for &first in &a {
            for &second in &a {
                by_product
                    .entry(table.compose(second, first))
                    .or_default()
                    .push((first, second));
            }
        }
        PairIndex { by_product }
    }

    /// Pairs `(first, second)` with `second * first == product`.
    pub fn pairs(&self, product: usize) -> &[(usize, usize)] {
        self.by_product
            .get(&product)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Positions whose pair has a product-preserving replacement other than itself.
    pub fn replaceable(&self, circuit: &Circuit, table: &GroupTable) -> Vec<usize> {
        (0..circuit.len().saturating_sub(1))
            .filter(|&i| {
                let (a, b) = (circuit.gates[i], circuit.gates[i + 1]);
                self.pairs(table.compose(b, a)).iter().any(|&p| p != (a, b))
            })
            .collect()
    }

    pub fn propose<R: Rng + ?Sized>(
        &self,
        circuit: &Circuit,
        table: &GroupTable,
        rng: &mut R,
    ) -> Option<Circuit> {
        let spots = self.replaceable(circuit, table);
        if spots.is_empty() {
            return None;
        }
        let i = spots[rng.gen_range(0..spots.len())];
        let pairs = self.pairs(table.compose(circuit.gates[i + 1], circuit.gates[i]));
        let (a, b) = pairs[rng.gen_range(0..pairs.len())];
        let mut gates = circuit.gates.clone();
        gates[i] = a;
        gates[i + 1] = b;
        Some(Circuit::new(gates))
    }
}

enum Proposer {
    Full,
    Limited(PairIndex),
}

/// Metropolis annealing over the whole group.
pub fn anneal(
    circuit: &Circuit,
    objective: &mut Objective,
    cfg: &AnnealConfig,
) -> Result<(Circuit, AnnealTrace)> {
    run(circuit, objective, cfg, Proposer::Full, cfg.seed, 0)
}

/// Metropolis annealing where each move replaces a neighboring pair by a
/// pair from `cfg.subset` with the same product.
pub fn anneal_gate_limited(
    circuit: &Circuit,
    objective: &mut Objective,
    cfg: &AnnealConfig,
) -> Result<(Circuit, AnnealTrace)> {
    let subset = cfg
        .subset
        .as_deref()
        .ok_or_else(|| QerrError::validation("gate-limited annealing needs a gate subset"))?;
    let index = PairIndex::new(objective.model().table(), subset);
    run(
        circuit,
        objective,
        cfg,
        Proposer::Limited(index),
        cfg.seed,
        0,
    )
}

/// Independent restarts with streams `0..restarts` of `cfg.seed`. Each
/// restart has its own memo. Returns the best circuit over all restarts and
/// every trace in restart order.
pub fn anneal_restarts(
    circuit: &Circuit,
    objective: &Objective,
    cfg: &AnnealConfig,
    restarts: usize,
    exec: Execution,
) -> Result<(Circuit, Vec<AnnealTrace>)> {
    if restarts == 0 {
        return Err(QerrError::validation("restarts must be >= 1"));
    }
    let traces = exec
        .map(restarts, |r| {
            let mut obj = objective.clone();
            let proposer = match &cfg.subset {
                Some(a) => Proposer::Limited(PairIndex::new(obj.model().table(), a)),
                None => Proposer::Full,
            };
            run(circuit, &mut obj, cfg, proposer, cfg.seed, r as u64).map(|(_, t)| t)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let best = traces
        .iter()
        .min_by(|a, b| a.best_value.total_cmp(&b.best_value))
        .map(|t| t.best.clone())
        .expect("restarts >= 1");
    Ok((best, traces))
}

fn run(
    circuit: &Circuit,
    objective: &mut Objective,
    cfg: &AnnealConfig,
    proposer: Proposer,
    seed: u64,
    stream: u64,
) -> Result<(Circuit, AnnealTrace)> {
    let table = objective.model().table();
    cfg.validate(table)?;
    let tau = circuit.len();
    if tau < 2 {
        return Err(QerrError::validation(format!(
            "annealing needs at least 2 gates, got {tau}"
        )));
    }
    let target = table.product(&circuit.gates);
    let initial_value = objective.value(circuit)?;
    let mut trace = AnnealTrace {
        rows: Vec::with_capacity(cfg.iterations),
        best: circuit.clone(),
        best_value: initial_value,
        initial_value,
        warnings: Vec::new(),
        aborted: None,
    };
    if let Proposer::Limited(index) = &proposer {
        if index.replaceable(circuit, table).is_empty() {
            trace
                .warnings
                .push("no neighboring pair has a replacement in the gate subset".into());
            return Ok((circuit.clone(), trace));
        }
    }
    let mut rng = run_rng(seed, stream);
    let mut current = circuit.clone();
    let mut u_current = initial_value;
    for eta in 1..=cfg.iterations {
        let temperature = cfg.schedule.temperature(eta, tau);
        let candidate = match &proposer {
            Proposer::Full => propose_candidate(&current, table, &mut rng)?,
            Proposer::Limited(index) => match index.propose(&current, table, &mut rng) {
                Some(c) => c,
                None => {
                    trace
                        .warnings
                        .push(format!("no replaceable pair at iteration {eta}"));
                    break;
                }
            },
        };
        if table.product(&candidate.gates) != target {
            return Err(QerrError::Numerical(format!(
                "proposal at iteration {eta} changed the circuit product"
            )));
        }
        let u_candidate = match objective.value(&candidate) {
            Ok(u) => u,
            Err(e) => {
                trace.aborted = Some(format!("iteration {eta}: {e}"));
                break;
            }
        };
        let x: f64 = rng.gen();
        let accepted = x <= acceptance_probability(u_current, u_candidate, temperature)?;
        if accepted {
            current = candidate;
            u_current = u_candidate;
            if u_current < trace.best_value {
                trace.best_value = u_current;
                trace.best = current.clone();
            }
        }
        trace.rows.push(TraceRow {
            eta,
            u_current,
            u_best: trace.best_value,
            temperature,
            accepted,
        });
    }
    Ok((trace.best.clone(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupSpec;
    use crate::model::{Categorical, ErrorModel};
    use crate::states::{NormOrder, PureState};
    use std::collections::{BTreeMap, HashSet};

    fn table(spec: &str) -> GroupTable {
        GroupSpec::parse(spec).unwrap().build().unwrap()
    }

    fn gate_dependent_pauli(t: &GroupTable) -> ErrorModel {
        // Pauli_1 elements are I, X, Y, Z in table order; rates differ by gate.
        let per_gate: BTreeMap<usize, Categorical> = (0..t.order())
            .map(|g| {
                let r = 0.01 * (g as f64 + 1.0);
                let c = Categorical::new(vec![(0, 1.0 - r), (1, r * 0.5), (3, r * 0.5)]).unwrap();
                (g, c)
            })
            .collect();
        ErrorModel::GateConditional {
            per_gate,
            default: Categorical::point(0),
        }
    }

    fn model(t: &GroupTable, err: ErrorModel) -> FixedCircuitModel<'_> {
        let psi = PureState::basis(t.qubits(), 0);
        FixedCircuitModel::new(t, &psi, &psi, err, NormOrder::TRACE).unwrap()
    }

    #[test]
    fn acceptance_rule() {
        assert_eq!(acceptance_probability(0.3, 0.2, 1.0).unwrap(), 1.0);
        assert_eq!(acceptance_probability(0.3, 0.3, 1.0).unwrap(), 1.0);
        let t = 0.01;
        let p = acceptance_probability(0.1, 0.1 + t * 2f64.ln(), t).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(acceptance_probability(0.0, 1.0, 1e-6).unwrap() < 1e-100);
        assert!(acceptance_probability(0.0, 1.0, 0.0).is_err());
        assert!(acceptance_probability(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn proposals_preserve_product() {
        let t = table("clifford:1");
        let mut rng = run_rng(3, 0);
        let c = Circuit::new((0..30).map(|_| rng.gen_range(0..t.order())).collect());
        let target = t.product(&c.gates);
        for _ in 0..1000 {
            let j = propose_candidate(&c, &t, &mut rng).unwrap();
            assert_eq!(t.product(&j.gates), target);
            let diff: Vec<usize> = (0..c.len()).filter(|&i| c.gates[i] != j.gates[i]).collect();
            assert!(diff.len() <= 2);
            if diff.len() == 2 {
                assert_eq!(diff[1], diff[0] + 1);
            }
        }
    }

    #[test]
    fn same_gate_gives_same_circuit() {
        let t = table("clifford:1");
        let c = Circuit::new(vec![5, 9, 13]);
        assert_eq!(replace_pair(&c, &t, 1, 9), c);
    }

    #[test]
    fn proposal_support_is_symmetric() {
        let t = table("pauli:1");
        let c = Circuit::new(vec![1, 2, 3]);
        let support = |c: &Circuit| -> HashSet<Vec<usize>> {
            (0..c.len() - 1)
                .flat_map(|i| (0..t.order()).map(move |g| (i, g)))
                .map(|(i, g)| replace_pair(c, &t, i, g).gates)
                .collect()
        };
        for j in support(&c) {
            assert!(support(&Circuit::new(j)).contains(&c.gates));
        }
    }

    #[test]
    fn zero_error_accepts_everything() {
        let t = table("clifford:1");
        let m = model(&t, ErrorModel::none());
        let mut obj = Objective::new(&m, ObjectiveKind::PMaxError, 0.1).unwrap();
        let c = Circuit::new(vec![1, 2, 3, 4]);
        let cfg = AnnealConfig {
            iterations: 200,
            schedule: Schedule::CLog { c: 0.004 },
            seed: 1,
            subset: None,
        };
        let (best, trace) = anneal(&c, &mut obj, &cfg).unwrap();
        assert_eq!(best, c);
        assert_eq!(trace.best_value, 0.0);
        assert!(trace.rows.iter().all(|r| r.accepted));
    }

    #[test]
    fn hot_chain_accepts_worse_moves() {
        let mut rng = run_rng(9, 0);
        let accepted = (0..1000)
            .filter(|_| {
                let du: f64 = rng.gen();
                rng.gen::<f64>() <= acceptance_probability(0.0, du, 1e6).unwrap()
            })
            .count();
        assert!(accepted >= 990);
    }

    #[test]
    fn tau_two_matches_brute_force() {
        let t = table("pauli:1");
        let m = model(&t, gate_dependent_pauli(&t));
        let c = Circuit::new(vec![3, 1]);
        let target = t.product(&c.gates);
        let mut obj = Objective::new(&m, ObjectiveKind::PError, 0.1).unwrap();
        let mut brute = f64::INFINITY;
        for a in 0..4 {
            for b in 0..4 {
                let j = Circuit::new(vec![a, b]);
                if t.product(&j.gates) == target {
                    brute = brute.min(obj.value(&j).unwrap());
                }
            }
        }
        let cfg = AnnealConfig {
            iterations: 2000,
            schedule: Schedule::CLog { c: 0.004 },
            seed: 11,
            subset: None,
        };
        let (_, trace) = anneal(&c, &mut obj, &cfg).unwrap();
        assert!((trace.best_value - brute).abs() < 1e-15);
    }

    #[test]
    fn best_so_far_is_nonincreasing() {
        let t = table("clifford:1");
        let err = ErrorModel::clifford_channel(&t, 0.02).unwrap();
        let m = model(&t, err);
        let mut obj = Objective::new(&m, ObjectiveKind::PMaxError, 0.1).unwrap();
        let mut rng = run_rng(4, 0);
        let c = Circuit::new((0..12).map(|_| rng.gen_range(0..t.order())).collect());
        let cfg = AnnealConfig {
            iterations: 300,
            schedule: Schedule::Guaranteed { m: 0.05 },
            seed: 2,
            subset: None,
        };
        let (best, trace) = anneal(&c, &mut obj, &cfg).unwrap();
        assert!(trace.rows[0].temperature.is_infinite());
        assert!(trace.rows.windows(2).all(|w| w[1].u_best <= w[0].u_best));
        assert!(trace.best_value <= trace.initial_value);
        assert_eq!(t.product(&best.gates), t.product(&c.gates));
        assert_eq!(obj.value(&best).unwrap(), trace.best_value);
    }

    #[test]
    fn gate_limited_stays_in_subset() {
        let t = table("clifford:1");
        let err = ErrorModel::pauli_channel(&t, 0.03).unwrap();
        let m = model(&t, err);
        let subset: Vec<usize> = ["I", "X", "Y", "Z", "H"]
            .iter()
            .map(|g| t.resolve_gate(g).unwrap())
            .collect();
        let h = subset[4];
        let c = Circuit::new(vec![h, subset[1], h, subset[3], subset[2], h]);
        let mut obj = Objective::new(&m, ObjectiveKind::PMaxError, 0.1).unwrap();
        let cfg = AnnealConfig {
            iterations: 300,
            schedule: Schedule::CLog { c: 0.002 },
            seed: 5,
            subset: Some(subset.clone()),
        };
        let index = PairIndex::new(&t, &subset);
        let mut rng = run_rng(1, 0);
        let mut cur = c.clone();
        for _ in 0..300 {
            cur = index.propose(&cur, &t, &mut rng).unwrap();
            assert!(cur.gates.iter().all(|g| subset.contains(g)));
            assert_eq!(t.product(&cur.gates), t.product(&c.gates));
        }
        let (best, trace) = anneal_gate_limited(&c, &mut obj, &cfg).unwrap();
        assert!(best.gates.iter().all(|g| subset.contains(g)));
        assert!(trace.best_value <= trace.initial_value);
    }

    #[test]
    fn full_subset_matches_full_support() {
        let t = table("pauli:1");
        let all: Vec<usize> = (0..t.order()).collect();
        let index = PairIndex::new(&t, &all);
        let c = Circuit::new(vec![1, 2, 3]);
        for i in 0..2 {
            let full: HashSet<(usize, usize)> = (0..t.order())
                .map(|g| {
                    let j = replace_pair(&c, &t, i, g);
                    (j.gates[i], j.gates[i + 1])
                })
                .collect();
            let limited: HashSet<(usize, usize)> = index
                .pairs(t.compose(c.gates[i + 1], c.gates[i]))
                .iter()
                .copied()
                .collect();
            assert_eq!(full, limited);
        }
    }

    #[test]
    fn no_replaceable_pair_returns_input() {
        let t = table("pauli:1");
        let m = model(&t, ErrorModel::none());
        let mut obj = Objective::new(&m, ObjectiveKind::PError, 0.1).unwrap();
        let c = Circuit::new(vec![1, 1]);
        let cfg = AnnealConfig {
            iterations: 10,
            schedule: Schedule::CLog { c: 1.0 },
            seed: 0,
            subset: Some(vec![1]),
        };
        let (best, trace) = anneal_gate_limited(&c, &mut obj, &cfg).unwrap();
        assert_eq!(best, c);
        assert!(trace.rows.is_empty());
        assert_eq!(trace.warnings.len(), 1);
    }

    #[test]
    fn restarts_are_deterministic() {
        let t = table("clifford:1");
        let err = ErrorModel::pauli_channel(&t, 0.03).unwrap();
        let m = model(&t, err);
        let obj = Objective::new(&m, ObjectiveKind::PMaxError, 0.1).unwrap();
        let c = Circuit::new(vec![1, 7, 4, 9, 2, 20]);
        let cfg = AnnealConfig {
            iterations: 100,
            schedule: Schedule::CLog { c: 0.004 },
            seed: 8,
            subset: None,
        };
        let (a, ta) = anneal_restarts(&c, &obj, &cfg, 4, Execution::Parallel).unwrap();
        let (b, tb) = anneal_restarts(&c, &obj, &cfg, 4, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(x.rows, y.rows);
        }
    }
}
