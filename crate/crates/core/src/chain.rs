//! Coupled Markov chains of faultless and faulty circuit states.
//!
//! The homogeneous chain of a random circuit is lumped from pairs of
//! accumulated unitaries onto pairs of reachable states, because distances
//! only depend on the states. Only pairs reachable from the initial pair are
//! kept. The inhomogeneous chain of a fixed circuit tracks the faulty state
//! alone; the faultless one is deterministic.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{QerrError, Result};
use crate::exec::Execution;
use crate::group::GroupTable;
use crate::model::{Circuit, ErrorModel, GateDistribution};
use crate::states::{reachable_states, schatten_distance, NormOrder, PureState, StateSet};

/// Row sums may drift from 1 by at most this much.
pub const ROW_SUM_TOL: f64 = 1e-10;
/// Probabilities outside `[0, 1]` by more than this are reported.
pub const CLAMP_WARN_TOL: f64 = 1e-8;
pub const HITTING_RESIDUAL_TOL: f64 = 1e-9;

/// Distances within this of the threshold count as ties, which are good.
pub const DIST_TIE_TOL: f64 = 1e-12;

const SCATTER_CHUNK: usize = 256;

/// `d > delta`, with floating-point ties resolved as good.
pub fn is_bad(d: f64, delta: f64) -> bool {
    d > delta + DIST_TIE_TOL
}

/// A numerical-health observation (clamped drift, row-sum defect, residual).
#[derive(Clone, Debug, PartialEq)]
pub struct HealthWarning {
    pub what: String,
    pub value: f64,
}

impl fmt::Display for HealthWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:e}", self.what, self.value)
    }
}

/// Clamps `x` to `[0, 1]`, recording drift beyond [`CLAMP_WARN_TOL`].
pub fn clamp_probability(x: f64, what: &str, health: &mut Vec<HealthWarning>) -> f64 {
    let c = x.clamp(0.0, 1.0);
    if (c - x).abs() > CLAMP_WARN_TOL {
        health.push(HealthWarning {
            what: format!("{what} clamped"),
            value: x,
        });
    }
    c
}

/// Row-stochastic matrix with sparse rows.
#[derive(Clone, Debug)]
pub struct StochasticMatrix {
    rows: Vec<Vec<(u32, f64)>>,
}

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        StochasticMatrix { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, z: usize) -> &[(u32, f64)] {
        &self.rows[z]
    }

    pub fn get(&self, z: usize, w: usize) -> f64 {
        self.rows[z]
            .iter()
            .find(|e| e.0 as usize == w)
            .map_or(0.0, |e| e.1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn max_row_sum_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (z, r) in self.rows.iter().enumerate() {
            for &(w, p) in r {
                m[(z, w as usize)] += p;
            }
        }
        m
    }

    /// `v^T P`. Rows are scattered in fixed-size chunks whose partial sums
    /// are added in chunk order, so the result does not depend on `exec`.
    pub fn step(&self, v: &[f64], exec: Execution) -> Vec<f64> {
        let n = self.n();
        let chunks = n.div_ceil(SCATTER_CHUNK);
        let scatter = |c: usize| {
            let mut out = vec![0.0; n];
            let end = ((c + 1) * SCATTER_CHUNK).min(n);
            for z in c * SCATTER_CHUNK..end {
                let vz = v[z];
                if vz != 0.0 {
                    for &(w, p) in &self.rows[z] {
                        out[w as usize] += vz * p;
                    }
                }
            }
            out
        };
        if chunks <= 1 {
            return scatter(0);
        }
        let parts = exec.map(chunks, scatter);
        let mut out = vec![0.0; n];
        for part in parts {
            for (o, x) in out.iter_mut().zip(part) {
                *o += x;
            }
        }
        out
    }
}

/// Indicator of `d > delta` over a state space.
#[derive(Clone, Debug, PartialEq)]
pub struct BadSet {
    mask: Vec<bool>,
    pub delta: f64,
    pub norm: NormOrder,
}

impl BadSet {
    pub fn from_distances(d: &[f64], delta: f64, norm: NormOrder) -> Self {
        BadSet {
            mask: d.iter().map(|&x| is_bad(x, delta)).collect(),
            delta,
            norm,
        }
    }

    pub fn contains(&self, id: usize) -> bool {
        self.mask[id]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn ids(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-t analytic curves for one threshold.
#[derive(Clone, Debug, Default)]
pub struct ChainCurves {
    pub delta: f64,
    pub p_error: Vec<f64>,
    pub p_max_error: Vec<f64>,
    pub e_dist: Vec<f64>,
    pub e_dist_sq: Vec<f64>,
    /// Empty for fixed circuits.
    pub hitting_bound: Vec<f64>,
    pub expected_hitting_time: Option<f64>,
    pub health: Vec<HealthWarning>,
}

/// Largest tolerable gate count at confidence `gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TStar {
    /// `-1` when the initial pair is already bad and `gamma < 1`.
    pub t_star: i64,
    /// `E[T_B] / (1 - gamma) - 1`; infinite when `gamma = 1` or `E[T_B] = inf`.
    pub upper_bound: f64,
    pub expected_hitting_time: f64,
}

impl TStar {
    pub fn already_failed(&self) -> bool {
        self.t_star < 0
    }
}

/// Homogeneous chain `Z_t` over (faultless state, faulty state) pairs.
#[derive(Clone, Debug)]
pub struct CoupledChain {
    pairs: Vec<(usize, usize)>,
    p: StochasticMatrix,
    z0: usize,
    d: Vec<f64>,
    norm: NormOrder,
    ideal_states: StateSet,
    faulty_states: StateSet,
    exec: Execution,
    health: Vec<HealthWarning>,
}

/// Action of the listed elements on `set`, keyed by element index.
fn actions(
    table: &GroupTable,
    set: &StateSet,
    elements: &[usize],
    exec: Execution,
) -> HashMap<usize, Vec<u32>> {
    let acts = exec.map(elements.len(), |k| {
        set.action(table, elements[k])
            .into_iter()
            .map(|s| s as u32)
            .collect::<Vec<u32>>()
    });
    elements.iter().copied().zip(acts).collect()
}

impl CoupledChain {
    pub fn build(
        table: &GroupTable,
        psi0: &PureState,
        big_psi0: &PureState,
        kappa: &GateDistribution,
        err: &ErrorModel,
        norm: NormOrder,
    ) -> Result<Self> {
        Self::build_with(
            table,
            psi0,
            big_psi0,
            kappa,
            err,
            norm,
            Execution::default(),
        )
    }

    pub fn build_with(
        table: &GroupTable,
        psi0: &PureState,
        big_psi0: &PureState,
        kappa: &GateDistribution,
        err: &ErrorModel,
        norm: NormOrder,
        exec: Execution,
    ) -> Result<Self> {
        kappa.validate(table)?;
        err.validate(table)?;
        let ideal_states = reachable_states(table, psi0)?;
        let faulty_states = reachable_states(table, big_psi0)?;

        let gate_ids: Vec<usize> = kappa.0.entries().iter().map(|e| e.0).collect();
        let mut faulty_ids = gate_ids.clone();
        faulty_ids.extend(err.support());
        faulty_ids.sort_unstable();
        faulty_ids.dedup();
        let act_ideal = actions(table, &ideal_states, &gate_ids, exec);
        let act_faulty = actions(table, &faulty_states, &faulty_ids, exec);

        let row_of = |a: usize, b: usize| -> Vec<((u32, u32), f64)> {
            let mut row: BTreeMap<(u32, u32), f64> = BTreeMap::new();
            match err {
                ErrorModel::Independent(zeta) => {
                    let mut after_gate: BTreeMap<(u32, u32), f64> = BTreeMap::new();
                    for &(u, k) in kappa.0.entries() {
                        *after_gate
                            .entry((act_ideal[&u][a], act_faulty[&u][b]))
                            .or_default() += k;
                    }
                    for (&(a2, b2), &w) in &after_gate {
                        for &(l, z) in zeta.entries() {
                            *row.entry((a2, act_faulty[&l][b2 as usize])).or_default() += w * z;
                        }
                    }
                }
                ErrorModel::GateConditional { .. } => {
                    for &(u, k) in kappa.0.entries() {
                        let a2 = act_ideal[&u][a];
                        let b2 = act_faulty[&u][b] as usize;
                        for &(l, z) in err.for_gate(u).entries() {
                            *row.entry((a2, act_faulty[&l][b2])).or_default() += k * z;
                        }
                    }
                }
            }
            row.into_iter().collect()
        };

        let start = (
            ideal_states.element_to_state()[0],
            faulty_states.element_to_state()[0],
        );
        let mut pairs = vec![start];
        let mut index: HashMap<(usize, usize), u32> = HashMap::from([(start, 0)]);
        let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
        let mut frontier = 0..1;
        while !frontier.is_empty() {
            let layer: Vec<(usize, usize)> = pairs[frontier.clone()].to_vec();
            let raw = exec.map(layer.len(), |k| row_of(layer[k].0, layer[k].1));
            for r in raw {
                let row = r
                    .into_iter()
                    .map(|((a, b), w)| {
                        let key = (a as usize, b as usize);
                        let id = *index.entry(key).or_insert_with(|| {
                            pairs.push(key);
                            (pairs.len() - 1) as u32
                        });
                        (id, w)
                    })
                    .collect();
                rows.push(row);
            }
            frontier = frontier.end..pairs.len();
        }

        let d = exec
            .map(pairs.len(), |k| {
                let (a, b) = pairs[k];
                schatten_distance(ideal_states.state(a), faulty_states.state(b), norm)
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;

        let p = StochasticMatrix::from_rows(rows);
        let mut health = Vec::new();
        let defect = p.max_row_sum_defect();
        if defect > ROW_SUM_TOL {
            health.push(HealthWarning {
                what: "row sum defect".into(),
                value: defect,
            });
        }
        Ok(CoupledChain {
            pairs,
            p,
            z0: 0,
            d,
            norm,
            ideal_states,
            faulty_states,
            exec,
            health,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(faultless state id, faulty state id)` of each chain state.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn transition(&self) -> &StochasticMatrix {
        &self.p
    }

    pub fn z0(&self) -> usize {
        self.z0
    }

    pub fn distances(&self) -> &[f64] {
        &self.d
    }

    pub fn norm(&self) -> NormOrder {
        self.norm
    }

    pub fn ideal_states(&self) -> &StateSet {
        &self.ideal_states
    }

    pub fn faulty_states(&self) -> &StateSet {
        &self.faulty_states
    }

    pub fn health(&self) -> &[HealthWarning] {
        &self.health
    }

    pub fn bad_set(&self, delta: f64) -> BadSet {
        BadSet::from_distances(&self.d, delta, self.norm)
    }

    fn start(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[self.z0] = 1.0;
        v
    }

    /// Distribution of `Z_t` for `t = 0..=horizon`, one vector at a time.
    fn for_each_step(&self, horizon: usize, mut f: impl FnMut(usize, &[f64])) {
        let mut v = self.start();
        f(0, &v);
        for t in 1..=horizon {
            v = self.p.step(&v, self.exec);
            f(t, &v);
        }
    }

    fn distribution_at(&self, t: usize) -> Vec<f64> {
        let mut v = self.start();
        for _ in 0..t {
            v = self.p.step(&v, self.exec);
        }
        v
    }

    /// `P[D_t > delta] = e_{z0}^T P^t 1_B`.
    pub fn error_distribution(&self, bad: &BadSet, t: usize) -> f64 {
        let v = self.distribution_at(t);
        let s: f64 = v.iter().zip(bad.mask()).filter(|e| *e.1).map(|e| e.0).sum();
        s.clamp(0.0, 1.0)
    }

    /// `E[D_t] = e_{z0}^T P^t d`.
    pub fn expected_error(&self, t: usize) -> f64 {
        dot(&self.distribution_at(t), &self.d)
    }

    /// `P[max_{s <= t} D_s > delta]`, accumulated as the first-passage mass
    /// `sum_s e^T B^{s-1} (P - B) 1_B` with `B` the taboo matrix.
    pub fn max_error_distribution(&self, bad: &BadSet, t: usize) -> f64 {
        *self.max_error_curve(bad, t).last().expect("t + 1 values")
    }

    fn max_error_curve(&self, bad: &BadSet, horizon: usize) -> Vec<f64> {
        if bad.contains(self.z0) {
            return vec![1.0; horizon + 1];
        }
        let mut out = Vec::with_capacity(horizon + 1);
        out.push(0.0);
        let mut survive = self.start();
        let mut hit = 0.0;
        for _ in 1..=horizon {
            survive = self.p.step(&survive, self.exec);
            for (s, &b) in survive.iter_mut().zip(bad.mask()) {
                if b {
                    hit += *s;
                    *s = 0.0;
                }
            }
            out.push(hit);
        }
        out
    }

    /// All per-t quantities for `t = 0..=horizon` in one pass.
    pub fn curves(&self, delta: f64, horizon: usize) -> Result<ChainCurves> {
        let bad = self.bad_set(delta);
        let mut c = ChainCurves {
            delta,
            health: self.health.clone(),
            ..Default::default()
        };
        let d2: Vec<f64> = self.d.iter().map(|x| x * x).collect();
        let mut raw_err = Vec::with_capacity(horizon + 1);
        self.for_each_step(horizon, |_, v| {
            raw_err.push(
                v.iter()
                    .zip(bad.mask())
                    .filter(|e| *e.1)
                    .map(|e| e.0)
                    .sum::<f64>(),
            );
            c.e_dist.push(dot(v, &self.d));
            c.e_dist_sq.push(dot(v, &d2));
        });
        c.p_error = raw_err
            .into_iter()
            .map(|x| clamp_probability(x, "p_error", &mut c.health))
            .collect();
        c.p_max_error = self
            .max_error_curve(&bad, horizon)
            .into_iter()
            .map(|x| clamp_probability(x, "p_max_error", &mut c.health))
            .collect();
        let hit = self.expected_hitting_time(&bad)?;
        let e = hit[self.z0];
        c.hitting_bound = (0..=horizon).map(|t| max_error_lower_bound(e, t)).collect();
        c.expected_hitting_time = Some(e);
        Ok(c)
    }

    /// `E[T_A | Z_0 = z]` for every chain state. States whose probability of
    /// ever entering `A` is below one get infinity.
    pub fn expected_hitting_time(&self, target: &BadSet) -> Result<Vec<f64>> {
        hitting_times(&self.p, target.mask())
    }

    /// Largest `t <= horizon` with `P[max D > delta] <= gamma`, plus the
    /// hitting-time upper bound on it.
    pub fn max_tolerable_gates(&self, bad: &BadSet, gamma: f64, horizon: usize) -> Result<TStar> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(QerrError::validation(format!(
                "gamma = {gamma} is outside [0, 1]"
            )));
        }
        let e = self.expected_hitting_time(bad)?[self.z0];
        let upper_bound = if gamma < 1.0 {
            e / (1.0 - gamma) - 1.0
        } else {
            f64::INFINITY
        };
        let curve = self.max_error_curve(bad, horizon);
        let t_star = if gamma >= 1.0 {
            horizon as i64
        } else if bad.contains(self.z0) {
            -1
        } else {
            curve.iter().take_while(|&&p| p <= gamma).count() as i64 - 1
        };
        Ok(TStar {
            t_star,
            upper_bound,
            expected_hitting_time: e,
        })
    }
}

/// `max{0, 1 - E[T] / (t + 1)}`.
pub fn max_error_lower_bound(expected_hitting_time: f64, t: usize) -> f64 {
    (1.0 - expected_hitting_time / (t as f64 + 1.0)).max(0.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Expected hitting times of `target` (mask) for a row-stochastic matrix.
pub fn hitting_times(p: &StochasticMatrix, target: &[bool]) -> Result<Vec<f64>> {
    let n = p.n();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for z in 0..n {
        for &(w, x) in p.row(z) {
            if x > 0.0 {
                preds[w as usize].push(z);
            }
        }
    }
    let backward = |seeds: Vec<usize>, allowed: &dyn Fn(usize) -> bool| {
        let mut seen = vec![false; n];
        let mut stack = seeds;
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(w) = stack.pop() {
            for &z in &preds[w] {
                if !seen[z] && allowed(z) {
                    seen[z] = true;
                    stack.push(z);
                }
            }
        }
        seen
    };
    let can_reach = backward((0..n).filter(|&z| target[z]).collect(), &|_| true);
    // may escape forever: can reach a state that never hits, without hitting first
    let escape = backward((0..n).filter(|&z| !can_reach[z]).collect(), &|z| !target[z]);

    let solve: Vec<usize> = (0..n).filter(|&z| !target[z] && !escape[z]).collect();
    let mut out: Vec<f64> = (0..n)
        .map(|z| if target[z] { 0.0 } else { f64::INFINITY })
        .collect();
    if solve.is_empty() {
        return Ok(out);
    }
    let pos: HashMap<usize, usize> = solve.iter().enumerate().map(|(i, &z)| (z, i)).collect();
    let m = solve.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    for (i, &z) in solve.iter().enumerate() {
        for &(w, x) in p.row(z) {
            if let Some(&j) = pos.get(&(w as usize)) {
                a[(i, j)] -= x;
            }
        }
    }
    let b = DVector::from_element(m, 1.0);
    let x = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| QerrError::Numerical("singular hitting-time system".into()))?;
    let residual = (&a * &x - &b).amax();
    if residual > HITTING_RESIDUAL_TOL * (1.0 + x.amax()) {
        return Err(QerrError::Numerical(format!(
            "hitting-time residual {residual:e} exceeds tolerance"
        )));
    }
    for (i, &z) in solve.iter().enumerate() {
        out[z] = x[i].max(0.0);
    }
    Ok(out)
}

/// Everything about a fixed-circuit analysis that does not depend on the
/// circuit: reachable states, state distances and (lazily) the action of each
/// group element. Evaluating many circuits against one model is cheap.
#[derive(Debug)]
pub struct FixedCircuitModel<'t> {
    table: &'t GroupTable,
    ideal: StateSet,
    faulty: StateSet,
    err: ErrorModel,
    norm: NormOrder,
    /// `cross[i][f]`: distance between ideal state `i` and faulty state `f`.
    cross: Vec<Vec<f64>>,
    ideal_act: Vec<OnceLock<Vec<u32>>>,
    faulty_act: Vec<OnceLock<Vec<u32>>>,
}

impl<'t> FixedCircuitModel<'t> {
    pub fn new(
        table: &'t GroupTable,
        psi0: &PureState,
        big_psi0: &PureState,
        err: ErrorModel,
        norm: NormOrder,
    ) -> Result<Self> {
        Self::new_with(table, psi0, big_psi0, err, norm, Execution::default())
    }

    pub fn new_with(
        table: &'t GroupTable,
        psi0: &PureState,
        big_psi0: &PureState,
        err: ErrorModel,
        norm: NormOrder,
        exec: Execution,
    ) -> Result<Self> {
        err.validate(table)?;
        let ideal = reachable_states(table, psi0)?;
        let faulty = reachable_states(table, big_psi0)?;
        let cross = exec
            .map(ideal.len(), |i| {
                (0..faulty.len())
                    .map(|f| schatten_distance(ideal.state(i), faulty.state(f), norm))
                    .collect::<Result<Vec<f64>>>()
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let lazy = || (0..table.order()).map(|_| OnceLock::new()).collect();
        Ok(FixedCircuitModel {
            table,
            ideal,
            faulty,
            err,
            norm,
            cross,
            ideal_act: lazy(),
            faulty_act: lazy(),
        })
    }

    pub fn table(&self) -> &'t GroupTable {
        self.table
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.err
    }

    pub fn norm(&self) -> NormOrder {
        self.norm
    }

    fn ideal_action(&self, g: usize) -> &[u32] {
        self.ideal_act[g].get_or_init(|| {
            self.ideal
                .action(self.table, g)
                .into_iter()
                .map(|s| s as u32)
                .collect()
        })
    }

    fn faulty_action(&self, g: usize) -> &[u32] {
        self.faulty_act[g].get_or_init(|| {
            self.faulty
                .action(self.table, g)
                .into_iter()
                .map(|s| s as u32)
                .collect()
        })
    }

    fn check(&self, circuit: &Circuit) -> Result<()> {
        if let Some(&g) = circuit.gates.iter().find(|&&g| g >= self.table.order()) {
            return Err(QerrError::validation(format!(
                "circuit gate index {g} is not in {}",
                self.table.name()
            )));
        }
        Ok(())
    }

    /// The inhomogeneous chain of `circuit`.
    pub fn chain(&self, circuit: &Circuit) -> Result<InhomogeneousChain> {
        self.check(circuit)?;
        let n = self.faulty.len();
        let mut health = Vec::new();
        let mut steps = Vec::with_capacity(circuit.len());
        for (k, &u) in circuit.gates.iter().enumerate() {
            let zeta = self.err.for_gate(u);
            let act_u = self.faulty_action(u);
            let rows = (0..n)
                .map(|y| {
                    let y2 = act_u[y] as usize;
                    let mut row: BTreeMap<u32, f64> = BTreeMap::new();
                    for &(l, z) in zeta.entries() {
                        *row.entry(self.faulty_action(l)[y2]).or_default() += z;
                    }
                    row.into_iter().collect()
                })
                .collect();
            let q = StochasticMatrix::from_rows(rows);
            let defect = q.max_row_sum_defect();
            if defect > ROW_SUM_TOL {
                health.push(HealthWarning {
                    what: format!("row sum defect of Q({})", k + 1),
                    value: defect,
                });
            }
            steps.push(q);
        }
        let path = self.ideal_path(circuit);
        Ok(InhomogeneousChain {
            y0: self.faulty.element_to_state()[0],
            states: self.faulty.clone(),
            steps,
            rho_path: path.iter().map(|&i| self.ideal.ket(i).clone()).collect(),
            d: path.iter().map(|&i| self.cross[i].clone()).collect(),
            norm: self.norm,
            health,
        })
    }

    /// Ideal state index after each prefix of the circuit.
    fn ideal_path(&self, circuit: &Circuit) -> Vec<usize> {
        let mut path = vec![self.ideal.element_to_state()[0]];
        for &u in &circuit.gates {
            let last = *path.last().expect("nonempty");
            path.push(self.ideal_action(u)[last] as usize);
        }
        path
    }

    /// `(P[D_tau > delta], P[max_{t <= tau} D_t > delta])` at the end of the
    /// circuit, without materializing the step matrices.
    pub fn end_probabilities(&self, circuit: &Circuit, delta: f64) -> Result<(f64, f64)> {
        self.check(circuit)?;
        let n = self.faulty.len();
        let path = self.ideal_path(circuit);
        let y0 = self.faulty.element_to_state()[0];
        let mut v = vec![0.0; n];
        v[y0] = 1.0;
        let mut survive = v.clone();
        let mut hit = if is_bad(self.cross[path[0]][y0], delta) {
            1.0
        } else {
            0.0
        };
        if hit == 1.0 {
            survive[y0] = 0.0;
        }
        let mut next = vec![0.0; n];
        let mut next_s = vec![0.0; n];
        for (k, &u) in circuit.gates.iter().enumerate() {
            let act_u = self.faulty_action(u);
            let zeta = self.err.for_gate(u);
            next.iter_mut().for_each(|x| *x = 0.0);
            next_s.iter_mut().for_each(|x| *x = 0.0);
            for &(l, z) in zeta.entries() {
                let act_l = self.faulty_action(l);
                for y in 0..n {
                    let w = act_l[act_u[y] as usize] as usize;
                    next[w] += v[y] * z;
                    next_s[w] += survive[y] * z;
                }
            }
            std::mem::swap(&mut v, &mut next);
            std::mem::swap(&mut survive, &mut next_s);
            let d = &self.cross[path[k + 1]];
            for (s, &dist) in survive.iter_mut().zip(d) {
                if is_bad(dist, delta) {
                    hit += *s;
                    *s = 0.0;
                }
            }
        }
        let d = &self.cross[*path.last().expect("nonempty")];
        let p_err: f64 = v
            .iter()
            .zip(d)
            .filter(|e| is_bad(*e.1, delta))
            .map(|e| e.0)
            .sum();
        Ok((p_err.clamp(0.0, 1.0), hit.clamp(0.0, 1.0)))
    }
}

/// Time-inhomogeneous chain of the faulty state under a fixed circuit.
#[derive(Clone, Debug)]
pub struct InhomogeneousChain {
    states: StateSet,
    steps: Vec<StochasticMatrix>,
    rho_path: Vec<PureState>,
    d: Vec<Vec<f64>>,
    y0: usize,
    norm: NormOrder,
    health: Vec<HealthWarning>,
}

impl InhomogeneousChain {
    pub fn build(
        table: &GroupTable,
        circuit: &Circuit,
        psi0: &PureState,
        big_psi0: &PureState,
        err: &ErrorModel,
        norm: NormOrder,
    ) -> Result<Self> {
        Self::build_with(
            table,
            circuit,
            psi0,
            big_psi0,
            err,
            norm,
            Execution::default(),
        )
    }

    pub fn build_with(
        table: &GroupTable,
        circuit: &Circuit,
        psi0: &PureState,
        big_psi0: &PureState,
        err: &ErrorModel,
        norm: NormOrder,
        exec: Execution,
    ) -> Result<Self> {
        FixedCircuitModel::new_with(table, psi0, big_psi0, err.clone(), norm, exec)?.chain(circuit)
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn states(&self) -> &StateSet {
        &self.states
    }

    /// `Q(k)` for `k = 1..=horizon`, the step that applies gate `U_k`.
    pub fn step_matrix(&self, k: usize) -> &StochasticMatrix {
        &self.steps[k - 1]
    }

    pub fn rho_path(&self) -> &[PureState] {
        &self.rho_path
    }

    /// Distances of every state to the faultless state at time `t`.
    pub fn distances_at(&self, t: usize) -> &[f64] {
        &self.d[t]
    }

    pub fn y0(&self) -> usize {
        self.y0
    }

    pub fn norm(&self) -> NormOrder {
        self.norm
    }

    pub fn health(&self) -> &[HealthWarning] {
        &self.health
    }

    /// `B^t` for threshold `delta`.
    pub fn bad_set(&self, t: usize, delta: f64) -> BadSet {
        BadSet::from_distances(&self.d[t], delta, self.norm)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.horizon() {
            return Err(QerrError::Range {
                what: "t",
                value: t,
                max: self.horizon(),
            });
        }
        Ok(())
    }

    fn distribution_at(&self, t: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.states.len()];
        v[self.y0] = 1.0;
        for q in &self.steps[..t] {
            v = q.step(&v, Execution::Sequential);
        }
        v
    }

    /// `e_{y0}^T Q(1) ... Q(t) 1_{B^t}`.
    pub fn error_distribution(&self, t: usize, delta: f64) -> Result<f64> {
        self.check_t(t)?;
        let v = self.distribution_at(t);
        let s: f64 = v
            .iter()
            .zip(&self.d[t])
            .filter(|e| is_bad(*e.1, delta))
            .map(|e| e.0)
            .sum();
        Ok(s.clamp(0.0, 1.0))
    }

    /// `e_{y0}^T Q(1) ... Q(t) d_{rho_t}`.
    pub fn expected_error(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(dot(&self.distribution_at(t), &self.d[t]))
    }

    /// `P[max_{s <= t} D_s > delta]` with time-dependent bad sets.
    pub fn max_error(&self, t: usize, delta: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.max_error_curve(delta, t)[t])
    }

    fn max_error_curve(&self, delta: f64, horizon: usize) -> Vec<f64> {
        if is_bad(self.d[0][self.y0], delta) {
            return vec![1.0; horizon + 1];
        }
        let mut out = vec![0.0];
        let mut survive = vec![0.0; self.states.len()];
        survive[self.y0] = 1.0;
        let mut hit = 0.0;
        for k in 1..=horizon {
            survive = self.steps[k - 1].step(&survive, Execution::Sequential);
            for (s, &dist) in survive.iter_mut().zip(&self.d[k]) {
                if is_bad(dist, delta) {
                    hit += *s;
                    *s = 0.0;
                }
            }
            out.push(hit);
        }
        out
    }

    /// All per-t quantities for `t = 0..=horizon`.
    pub fn curves(&self, delta: f64) -> ChainCurves {
        let mut c = ChainCurves {
            delta,
            health: self.health.clone(),
            ..Default::default()
        };
        let mut v = vec![0.0; self.states.len()];
        v[self.y0] = 1.0;
        for t in 0..=self.horizon() {
            if t > 0 {
                v = self.steps[t - 1].step(&v, Execution::Sequential);
            }
            let d = &self.d[t];
            let raw: f64 = v
                .iter()
                .zip(d)
                .filter(|e| is_bad(*e.1, delta))
                .map(|e| e.0)
                .sum();
            c.p_error
                .push(clamp_probability(raw, "p_error", &mut c.health));
            c.e_dist.push(dot(&v, d));
            c.e_dist_sq
                .push(v.iter().zip(d).map(|(p, x)| p * x * x).sum());
        }
        c.p_max_error = self
            .max_error_curve(delta, self.horizon())
            .into_iter()
            .map(|x| clamp_probability(x, "p_max_error", &mut c.health))
            .collect();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{generate_clifford_group, generate_pauli_group};
    use crate::model::Categorical;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ket(s: &str) -> PureState {
        s.parse().unwrap()
    }

    const ZETA0: &str = "sqrt(7/10)|0>+sqrt(3/10)|1>";
    const XI0: &str = "sqrt(4/5)|0>+sqrt(1/5)|1>";

    fn pauli_chain(state: &str, r: f64, norm: NormOrder) -> CoupledChain {
        let p1 = generate_pauli_group(1).unwrap();
        let err = ErrorModel::pauli_channel(&p1, r).unwrap();
        let s = ket(state);
        CoupledChain::build(&p1, &s, &s, &GateDistribution::uniform(&p1), &err, norm).unwrap()
    }

    fn random_categorical(rng: &mut ChaCha8Rng, n: usize) -> Categorical {
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        Categorical::new(w.into_iter().map(|x| x / s).enumerate()).unwrap()
    }

    #[test]
    fn rows_are_stochastic() {
        let c = pauli_chain(ZETA0, 0.2, NormOrder::TRACE);
        assert!(c.transition().max_row_sum_defect() < 1e-12);
        assert!(c.health().is_empty());
    }

    #[test]
    fn no_errors_means_no_distance() {
        let c1 = generate_clifford_group(1).unwrap();
        let s = ket("|0>");
        let c = CoupledChain::build(
            &c1,
            &s,
            &s,
            &GateDistribution::uniform(&c1),
            &ErrorModel::none(),
            NormOrder::TRACE,
        )
        .unwrap();
        for &(a, b) in c.pairs() {
            assert_eq!(a, b);
        }
        for t in 0..10 {
            assert_eq!(c.expected_error(t), 0.0);
        }
    }

    #[test]
    fn bad_set_edges() {
        let c = pauli_chain(ZETA0, 0.2, NormOrder::TRACE);
        assert!(c.bad_set(1.0).is_empty());
        let b0 = c.bad_set(0.0);
        for (z, &(a, bb)) in c.pairs().iter().enumerate() {
            let same = c
                .ideal_states()
                .ket(a)
                .inner(c.faulty_states().ket(bb))
                .norm()
                > 1.0 - 1e-9;
            assert_eq!(b0.contains(z), !same);
        }
    }

    #[test]
    fn t_zero_indicator() {
        let c = pauli_chain(ZETA0, 0.2, NormOrder::TRACE);
        assert_eq!(c.error_distribution(&c.bad_set(0.2), 0), 0.0);
        assert_eq!(c.max_error_distribution(&c.bad_set(0.2), 0), 0.0);
        assert_eq!(c.expected_error(0), 0.0);
    }

    #[test]
    fn closed_forms_at_trace_norm() {
        let r = 0.2;
        let xi = pauli_chain(XI0, r, NormOrder::TRACE);
        let bad = xi.bad_set(0.2);
        for t in 0..=100 {
            let exact = 1.0 - (1.0 - r).powi(t as i32);
            assert!((xi.max_error_distribution(&bad, t) - exact).abs() < 1e-12);
        }
        // at p = 1 every Pauli error moves this start more than 1/5 away
        let zeta = pauli_chain(ZETA0, r, NormOrder::TRACE);
        let bad = zeta.bad_set(0.2);
        for t in 0..=100 {
            let exact = 1.0 - (1.0 - r).powi(t as i32);
            assert!((zeta.max_error_distribution(&bad, t) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn two_thirds_closed_form_at_infinity_norm() {
        let r = 0.2;
        let c = pauli_chain(ZETA0, r, NormOrder::Infinity);
        let bad = c.bad_set(0.2);
        for t in 0..=100 {
            let exact = 1.0 - (1.0 - 2.0 * r / 3.0).powi(t as i32);
            assert!((c.max_error_distribution(&bad, t) - exact).abs() < 1e-12);
        }
        let e = c.expected_hitting_time(&bad).unwrap()[c.z0()];
        assert!((e - 3.0 / (2.0 * r)).abs() < 1e-9);
        let ts = c.max_tolerable_gates(&bad, 0.5, 100).unwrap();
        assert_eq!(ts.t_star, 4);
        assert!(ts.t_star as f64 <= ts.upper_bound);
    }

    #[test]
    fn t_star_at_trace_norm() {
        let r = 0.2;
        let c = pauli_chain(ZETA0, r, NormOrder::TRACE);
        let bad = c.bad_set(0.2);
        assert!((c.expected_hitting_time(&bad).unwrap()[c.z0()] - 1.0 / r).abs() < 1e-9);
        for gamma in [0.25, 0.5, 0.9] {
            let ts = c.max_tolerable_gates(&bad, gamma, 100).unwrap();
            let t = ts.t_star as usize;
            assert!(c.max_error_distribution(&bad, t) <= gamma);
            assert!(c.max_error_distribution(&bad, t + 1) > gamma);
            assert!(ts.t_star as f64 <= ts.upper_bound);
        }
        assert_eq!(c.max_tolerable_gates(&bad, 0.5, 100).unwrap().t_star, 3);
        assert_eq!(c.max_tolerable_gates(&bad, 1.0, 37).unwrap().t_star, 37);
    }

    #[test]
    fn already_failed_sentinel() {
        let p1 = generate_pauli_group(1).unwrap();
        let c = CoupledChain::build(
            &p1,
            &ket("|0>"),
            &ket("|1>"),
            &GateDistribution::uniform(&p1),
            &ErrorModel::none(),
            NormOrder::TRACE,
        )
        .unwrap();
        let bad = c.bad_set(0.5);
        assert_eq!(c.max_error_distribution(&bad, 3), 1.0);
        let ts = c.max_tolerable_gates(&bad, 0.5, 10).unwrap();
        assert!(ts.already_failed());
        assert_eq!(c.max_tolerable_gates(&bad, 1.0, 10).unwrap().t_star, 10);
    }

    #[test]
    fn two_state_hitting_time_is_geometric() {
        let q = 0.15;
        let p = StochasticMatrix::from_rows(vec![vec![(0, 1.0 - q), (1, q)], vec![(1, 1.0)]]);
        let h = hitting_times(&p, &[false, true]).unwrap();
        assert!((h[0] - 1.0 / q).abs() < 1e-12);
        assert_eq!(h[1], 0.0);
    }

    #[test]
    fn hitting_time_infinite_when_escape_possible() {
        // 0 -> {1 (target), 2 (absorbing, never hits)}
        let p = StochasticMatrix::from_rows(vec![
            vec![(1, 0.5), (2, 0.5)],
            vec![(1, 1.0)],
            vec![(2, 1.0)],
        ]);
        let h = hitting_times(&p, &[false, true, false]).unwrap();
        assert!(h[0].is_infinite() && h[2].is_infinite());
        let c = pauli_chain(ZETA0, 0.2, NormOrder::TRACE);
        let none = c.bad_set(1.0);
        assert!(c.expected_hitting_time(&none).unwrap()[0].is_infinite());
    }

    #[test]
    fn hitting_bound_examples() {
        assert_eq!(max_error_lower_bound(1.0, 0), 0.0);
        assert!(max_error_lower_bound(5.0, 1_000_000) > 0.99999);
        let c = pauli_chain(ZETA0, 0.1, NormOrder::TRACE);
        let cur = c.curves(0.2, 100).unwrap();
        for t in 0..=100 {
            assert!(cur.hitting_bound[t] <= cur.p_max_error[t] + 1e-12);
            assert!(cur.p_max_error[t] >= cur.p_error[t] - 1e-12);
        }
    }

    #[test]
    fn monotone_in_t_and_delta() {
        let c1 = generate_clifford_group(1).unwrap();
        let s = ket(ZETA0);
        let err = ErrorModel::pauli_channel(&c1, 0.05).unwrap();
        let c = CoupledChain::build(
            &c1,
            &s,
            &s,
            &GateDistribution::uniform(&c1),
            &err,
            NormOrder::TRACE,
        )
        .unwrap();
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let curves: Vec<_> = grid.iter().map(|&d| c.curves(d, 40).unwrap()).collect();
        for cur in &curves {
            for w in cur.p_max_error.windows(2) {
                assert!(w[1] >= w[0] - 1e-15);
            }
        }
        for pair in curves.windows(2) {
            for t in 0..=40 {
                assert!(pair[1].p_max_error[t] <= pair[0].p_max_error[t] + 1e-15);
            }
        }
    }

    #[test]
    fn law_of_total_probability() {
        let c = pauli_chain(ZETA0, 0.3, NormOrder::TRACE);
        let thresholds = [0.0, 0.1, 0.3, 0.45, 0.7, 0.95];
        for t in 0..15 {
            // P[D > d_k] - P[D > d_{k+1}] = P[d_k < D <= d_{k+1}], plus the atoms at the ends
            let mut total = 1.0 - c.error_distribution(&c.bad_set(thresholds[0]), t);
            for w in thresholds.windows(2) {
                total += c.error_distribution(&c.bad_set(w[0]), t)
                    - c.error_distribution(&c.bad_set(w[1]), t);
            }
            total += c.error_distribution(&c.bad_set(*thresholds.last().unwrap()), t);
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    /// Unlumped chain over all pairs of accumulated group elements.
    fn brute_force(
        table: &GroupTable,
        psi0: &PureState,
        kappa: &Categorical,
        zetas: &[Categorical],
        delta: f64,
        horizon: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = table.order();
        let rho: Vec<_> = (0..g)
            .map(|x| psi0.apply(table.matrix(x)).density())
            .collect();
        let dist: Vec<f64> = (0..g * g)
            .map(|z| schatten_distance(&rho[z / g], &rho[z % g], NormOrder::TRACE).unwrap())
            .collect();
        let mut v = vec![0.0; g * g];
        v[0] = 1.0;
        let mut survive = v.clone();
        let (mut err, mut max, mut mean) = (vec![], vec![], vec![]);
        let mut hit = 0.0;
        for t in 0..=horizon {
            if t > 0 {
                let step = |src: &[f64]| {
                    let mut out = vec![0.0; g * g];
                    for (z, &p) in src.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let (x, y) = (z / g, z % g);
                        for &(u, k) in kappa.entries() {
                            for &(l, e) in zetas[u].entries() {
                                let x2 = table.compose(u, x);
                                let y2 = table.compose(l, table.compose(u, y));
                                out[x2 * g + y2] += p * k * e;
                            }
                        }
                    }
                    out
                };
                v = step(&v);
                survive = step(&survive);
                for (s, &d) in survive.iter_mut().zip(&dist) {
                    if is_bad(d, delta) {
                        hit += *s;
                        *s = 0.0;
                    }
                }
            }
            err.push(
                v.iter()
                    .zip(&dist)
                    .filter(|e| is_bad(*e.1, delta))
                    .map(|e| e.0)
                    .sum(),
            );
            mean.push(v.iter().zip(&dist).map(|(p, d)| p * d).sum());
            max.push(hit);
        }
        (err, max, mean)
    }

    #[test]
    fn lumped_chain_matches_group_pair_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (table, state) in [
            (generate_pauli_group(1).unwrap(), ZETA0),
            (generate_pauli_group(1).unwrap(), "|0>"),
            (generate_clifford_group(1).unwrap(), ZETA0),
        ] {
            let g = table.order();
            let kappa = random_categorical(&mut rng, g);
            let zetas: Vec<Categorical> = (0..g).map(|_| random_categorical(&mut rng, g)).collect();
            let err = ErrorModel::GateConditional {
                per_gate: zetas.iter().cloned().enumerate().collect(),
                default: Categorical::point(0),
            };
            let s = ket(state);
            let chain = CoupledChain::build(
                &table,
                &s,
                &s,
                &GateDistribution(kappa.clone()),
                &err,
                NormOrder::TRACE,
            )
            .unwrap();
            let delta = 0.3;
            let (err_bf, max_bf, mean_bf) = brute_force(&table, &s, &kappa, &zetas, delta, 20);
            let cur = chain.curves(delta, 20).unwrap();
            for t in 0..=20 {
                assert!(
                    (cur.p_error[t] - err_bf[t]).abs() < 1e-12,
                    "{} t={t}",
                    table.name()
                );
                assert!((cur.p_max_error[t] - max_bf[t]).abs() < 1e-12);
                assert!((cur.e_dist[t] - mean_bf[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_builds_agree() {
        let c1 = generate_clifford_group(1).unwrap();
        let s = ket(ZETA0);
        let err = ErrorModel::clifford_channel(&c1, 0.05).unwrap();
        let k = GateDistribution::uniform(&c1);
        let a = CoupledChain::build_with(
            &c1,
            &s,
            &s,
            &k,
            &err,
            NormOrder::TRACE,
            Execution::Sequential,
        )
        .unwrap();
        let b =
            CoupledChain::build_with(&c1, &s, &s, &k, &err, NormOrder::TRACE, Execution::Parallel)
                .unwrap();
        assert_eq!(a.pairs(), b.pairs());
        assert_eq!(
            a.curves(0.1, 30).unwrap().p_max_error,
            b.curves(0.1, 30).unwrap().p_max_error
        );
    }

    #[test]
    fn fixed_circuit_basics() {
        let p1 = generate_pauli_group(1).unwrap();
        let c1 = generate_clifford_group(1).unwrap();
        let circ = Circuit::parse("H\nX\nY\nZ\nrepeat 3\n", &c1).unwrap();
        let s = ket("|0>");
        let none =
            InhomogeneousChain::build(&c1, &circ, &s, &s, &ErrorModel::none(), NormOrder::TRACE)
                .unwrap();
        for k in 1..=circ.len() {
            let q = none.step_matrix(k);
            assert!(q.max_row_sum_defect() < 1e-12);
            for z in 0..q.n() {
                assert_eq!(q.row(z).len(), 1);
            }
        }
        for t in 0..=circ.len() {
            assert_eq!(none.error_distribution(t, 0.1).unwrap(), 0.0);
            assert_eq!(none.max_error(t, 0.0).unwrap(), 0.0);
        }
        assert!(none.error_distribution(circ.len() + 1, 0.1).is_err());
        let bad = Circuit::new(vec![99]);
        assert!(InhomogeneousChain::build(
            &c1,
            &bad,
            &s,
            &s,
            &ErrorModel::none(),
            NormOrder::TRACE
        )
        .is_err());

        let err = ErrorModel::parse("pauli-channel:0.1", &c1).unwrap();
        let ic = InhomogeneousChain::build(&c1, &circ, &s, &s, &err, NormOrder::TRACE).unwrap();
        let cur = ic.curves(0.1);
        for w in cur.p_max_error.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        assert!(ic.curves(1.0).p_max_error.iter().all(|&p| p == 0.0));
        let _ = p1;
    }

    #[test]
    fn fixed_constant_circuit_matches_point_mass_random_chain() {
        let c1 = generate_clifford_group(1).unwrap();
        let h = c1.resolve_gate("H").unwrap();
        let s = ket(ZETA0);
        let err = ErrorModel::pauli_channel(&c1, 0.07).unwrap();
        let circ = Circuit::new(vec![h; 30]);
        let ic = InhomogeneousChain::build(&c1, &circ, &s, &s, &err, NormOrder::TRACE).unwrap();
        let rc = CoupledChain::build(
            &c1,
            &s,
            &s,
            &GateDistribution::point(h),
            &err,
            NormOrder::TRACE,
        )
        .unwrap();
        for delta in [0.05, 0.2, 0.5] {
            let a = ic.curves(delta);
            let b = rc.curves(delta, 30).unwrap();
            for t in 0..=30 {
                assert!((a.p_error[t] - b.p_error[t]).abs() < 1e-12);
                assert!((a.p_max_error[t] - b.p_max_error[t]).abs() < 1e-12);
                assert!((a.e_dist[t] - b.e_dist[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn end_probabilities_match_chain_curves() {
        let c1 = generate_clifford_group(1).unwrap();
        let s = ket(ZETA0);
        let err = ErrorModel::pauli_channel(&c1, 0.03).unwrap();
        let model = FixedCircuitModel::new(&c1, &s, &ket("|0>"), err, NormOrder::TRACE).unwrap();
        let circ = Circuit::parse("H\nS\nX\nH\nY\nrepeat 4\n", &c1).unwrap();
        let ic = model.chain(&circ).unwrap();
        for delta in [0.0, 0.1, 0.5, 0.9] {
            let cur = ic.curves(delta);
            let (pe, pm) = model.end_probabilities(&circ, delta).unwrap();
            assert!((pe - cur.p_error[circ.len()]).abs() < 1e-12);
            assert!((pm - cur.p_max_error[circ.len()]).abs() < 1e-12);
        }
    }
}
