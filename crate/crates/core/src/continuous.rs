//! Continuous error accumulation in one qubit.
//!
//! The faulty Bloch vector performs a random walk away from the faultless one
//! with polar kicks `alpha` and uniform azimuth, and depolarizes to `I/2` with
//! probability `q` per gate. Statistics of the trace distance
//! `D_t = sin(Theta_t / 2)` are Legendre series in the mode decay factors
//! `Lambda_{n,t} = prod_s E[P_n(cos alpha_s)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QerrError, Result};
use crate::exec::Execution;
use crate::montecarlo::run_rng;

/// Adaptive truncation stops once doubling `N` changes a value by less.
pub const SERIES_TOL: f64 = 1e-8;
pub const DEFAULT_START_TERMS: usize = 64;
pub const DEFAULT_MAX_TERMS: usize = 1 << 20;
/// The Catalan form cancels catastrophically beyond this order.
pub const CATALAN_MAX_ORDER: usize = 25;

/// Finite distribution of polar kick angles (radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture(Vec<(f64, f64)>);

impl Mixture {
    pub fn new(components: Vec<(f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(QerrError::validation("kick mixture is empty"));
        }
        for &(a, w) in &components {
            if !(0.0..=std::f64::consts::PI).contains(&a) {
                return Err(QerrError::validation(format!(
                    "kick angle {a} is outside [0, pi]"
                )));
            }
            if !(w >= 0.0) {
                return Err(QerrError::validation(format!(
                    "kick weight {w} is negative"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QerrError::validation(format!(
                "kick weights sum to {total}"
            )));
        }
        Ok(Mixture(components))
    }

    pub fn fixed(alpha: f64) -> Result<Self> {
        Self::new(vec![(alpha, 1.0)])
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.0
    }

    fn is_still(&self) -> bool {
        self.0.iter().all(|&(a, w)| a == 0.0 || w == 0.0)
    }

    fn sample_with(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(a, w) in &self.0 {
            acc += w;
            if u < acc {
                return a;
            }
        }
        self.0.last().expect("nonempty").0
    }
}

/// Kick law per step: the same mixture every step, or one per step.
#[derive(Clone, Debug, PartialEq)]
pub enum KickModel {
    Homogeneous(Mixture),
    PerStep(Vec<Mixture>),
}

impl KickModel {
    pub fn fixed(alpha: f64) -> Result<Self> {
        Ok(KickModel::Homogeneous(Mixture::fixed(alpha)?))
    }

    pub fn step(&self, s: usize) -> Result<&Mixture> {
        match self {
            KickModel::Homogeneous(m) => Ok(m),
            KickModel::PerStep(v) => v.get(s - 1).ok_or(QerrError::Range {
                what: "step",
                value: s,
                max: v.len(),
            }),
        }
    }

    fn check_steps(&self, t: usize) -> Result<()> {
        if t > 0 {
            self.step(t)?;
        }
        Ok(())
    }

    /// No kick moves the walker during the first `t` steps.
    fn is_still(&self, t: usize) -> bool {
        (1..=t).all(|s| self.step(s).map_or(true, Mixture::is_still))
    }

    /// Per-step mixtures in step order, for `t` steps.
    fn mixtures(&self, t: usize) -> Vec<&Mixture> {
        (1..=t)
            .map(|s| self.step(s).expect("steps checked"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    /// Double `N` from `start` until the value moves less than
    /// [`SERIES_TOL`], giving up at `max`.
    Adaptive {
        start: usize,
        max: usize,
    },
    Fixed(usize),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Adaptive {
            start: DEFAULT_START_TERMS,
            max: DEFAULT_MAX_TERMS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousParams {
    /// Depolarization probability per gate.
    pub q: f64,
    pub t: usize,
    pub truncation: Truncation,
}

impl ContinuousParams {
    pub fn new(q: f64, t: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(QerrError::validation(format!("q = {q} is outside [0, 1]")));
        }
        Ok(ContinuousParams {
            q,
            t,
            truncation: Truncation::default(),
        })
    }

    fn survival(&self) -> f64 {
        (1.0 - self.q).powi(self.t as i32)
    }
}

/// A truncated series value with its convergence diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Highest order `N` used.
    pub terms: usize,
    /// Change between the last two truncation orders.
    pub last_change: f64,
    pub converged: bool,
}

impl SeriesValue {
    fn exact(value: f64) -> Self {
        SeriesValue {
            value,
            terms: 0,
            last_change: 0.0,
            converged: true,
        }
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Self {
        SeriesValue {
            value: f(self.value),
            ..self
        }
    }
}

/// `P_0(x), ..., P_nmax(x)` by Bonnet's recurrence.
pub fn legendre_values(x: f64, nmax: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax >= 1 {
        p.push(x);
    }
    for n in 1..nmax {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * p[n] - nf * p[n - 1]) / (nf + 1.0);
        p.push(next);
    }
    p
}

/// `Lambda_{n,t}` for a single order.
pub fn lambda_coeff(n: usize, t: usize, kicks: &KickModel) -> Result<f64> {
    kicks.check_steps(t)?;
    let mut lam = 1.0;
    for m in kicks.mixtures(t) {
        lam *= m
            .components()
            .iter()
            .map(|&(a, w)| w * legendre_values(a.cos(), n)[n])
            .sum::<f64>();
    }
    Ok(lam)
}

/// `integral_{1 - 2 delta^2}^{1} P_n(x) dx`, via
/// `(P_{n-1}(x0) - P_{n+1}(x0)) / (2n + 1)` for `n >= 1`.
pub fn legendre_integral(n: usize, delta: f64) -> f64 {
    let x0 = 1.0 - 2.0 * delta * delta;
    if n == 0 {
        return 1.0 - x0;
    }
    let p = legendre_values(x0, n + 1);
    (p[n - 1] - p[n + 1]) / (2.0 * n as f64 + 1.0)
}

/// `sum_{r=1}^{n+1} (-1)^{r+1} delta^{2r} C_{r-1} binom(n+r-1, 2(r-1))`,
/// which equals half of [`legendre_integral`]. Only for `n <= 25`.
pub fn catalan_integral(n: usize, delta: f64) -> Result<f64> {
    if n > CATALAN_MAX_ORDER {
        return Err(QerrError::Range {
            what: "Catalan-form order",
            value: n,
            max: CATALAN_MAX_ORDER,
        });
    }
    let binom = |a: u64, b: u64| -> f64 {
        (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
    };
    let mut s = 0.0;
    for r in 1..=(n as u64 + 1) {
        let catalan = binom(2 * (r - 1), r - 1) / r as f64;
        let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * delta.powi(2 * r as i32) * catalan * binom(n as u64 + r - 1, 2 * (r - 1));
    }
    Ok(s)
}

/// Lazily grown tables of per-step kick moments `E[P_n(cos alpha_s)]` and of
/// `P_n(x0)` for the CDF kernel.
struct Series<'a> {
    kicks: &'a KickModel,
    trunc: Truncation,
    /// `moments[s][n]`; one row for homogeneous kicks.
    moments: Vec<Vec<f64>>,
    len: usize,
}

impl<'a> Series<'a> {
    fn new(kicks: &'a KickModel, trunc: Truncation) -> Self {
        Series {
            kicks,
            trunc,
            moments: Vec::new(),
            len: 0,
        }
    }

    fn ensure(&mut self, nmax: usize) {
        if self.len > nmax {
            return;
        }
        let mixtures: Vec<&Mixture> = match self.kicks {
            KickModel::Homogeneous(m) => vec![m],
            KickModel::PerStep(v) => v.iter().collect(),
        };
        self.moments = mixtures
            .iter()
            .map(|m| {
                let mut acc = vec![0.0; nmax + 1];
                for &(a, w) in m.components() {
                    for (x, p) in acc.iter_mut().zip(legendre_values(a.cos(), nmax)) {
                        *x += w * p;
                    }
                }
                acc
            })
            .collect();
        self.len = nmax + 1;
    }

    fn lambda(&self, n: usize, t: usize) -> f64 {
        match self.kicks {
            KickModel::Homogeneous(_) => self.moments[0][n].powi(t as i32),
            KickModel::PerStep(_) => (0..t).map(|s| self.moments[s][n]).product(),
        }
    }

    /// Sums `term(n, Lambda_{n,t})` for `n = 0..=N` with adaptive `N`.
    fn sum(&mut self, t: usize, extra: usize, term: impl Fn(usize, f64) -> f64) -> SeriesValue {
        let (mut n_cur, n_max, adaptive) = match self.trunc {
            Truncation::Adaptive { start, max } => (start.max(1), max.max(start), true),
            Truncation::Fixed(n) => (n, n, false),
        };
        self.ensure(n_cur + extra);
        let mut partial: f64 = (0..=n_cur).map(|n| term(n, self.lambda(n, t))).sum();
        if !adaptive {
            return SeriesValue {
                value: partial,
                terms: n_cur,
                last_change: f64::NAN,
                converged: true,
            };
        }
        loop {
            let next = (2 * n_cur).min(n_max);
            if next == n_cur {
                return SeriesValue {
                    value: partial,
                    terms: n_cur,
                    last_change: f64::INFINITY,
                    converged: false,
                };
            }
            self.ensure(next + extra);
            let add: f64 = (n_cur + 1..=next).map(|n| term(n, self.lambda(n, t))).sum();
            let change = add.abs();
            partial += add;
            n_cur = next;
            if change < SERIES_TOL {
                return SeriesValue {
                    value: partial,
                    terms: n_cur,
                    last_change: change,
                    converged: true,
                };
            }
            if n_cur == n_max {
                return SeriesValue {
                    value: partial,
                    terms: n_cur,
                    last_change: change,
                    converged: false,
                };
            }
        }
    }

    /// `E[D_t | nu > t] = -2 sum_n Lambda_{n,t} / ((2n - 1)(2n + 3))`.
    fn conditional_mean(&mut self, t: usize) -> SeriesValue {
        if self.kicks.is_still(t) {
            return SeriesValue::exact(0.0);
        }
        if t == 1 {
            let m = self.kicks.step(1).expect("steps checked");
            return SeriesValue::exact(
                m.components()
                    .iter()
                    .map(|&(a, w)| w * (a / 2.0).sin())
                    .sum(),
            );
        }
        self.sum(t, 0, |n, lam| {
            let n = n as f64;
            -2.0 * lam / ((2.0 * n - 1.0) * (2.0 * n + 3.0))
        })
        .map(|v| v.clamp(0.0, 1.0))
    }

    /// `P[D_t <= delta | nu > t]`.
    fn conditional_cdf(&mut self, delta: f64, t: usize) -> SeriesValue {
        if self.kicks.is_still(t) {
            return SeriesValue::exact(1.0);
        }
        if delta >= 1.0 {
            return SeriesValue::exact(1.0);
        }
        // one kick: D_1 = sin(alpha / 2) exactly, a step function the series
        // only reaches with Gibbs oscillations
        if t == 1 {
            let m = self.kicks.step(1).expect("steps checked");
            let v = m
                .components()
                .iter()
                .filter(|&&(a, _)| (a / 2.0).sin() <= delta)
                .map(|c| c.1)
                .sum();
            return SeriesValue::exact(v);
        }
        let x0 = 1.0 - 2.0 * delta * delta;
        let n_hint = match self.trunc {
            Truncation::Adaptive { max, .. } => max,
            Truncation::Fixed(n) => n,
        };
        // P_n(x0) table, grown alongside the kick moments
        let p = std::cell::RefCell::new(legendre_values(x0, DEFAULT_START_TERMS.min(n_hint) + 1));
        let value = self.sum(t, 1, |n, lam| {
            if n == 0 {
                return lam * delta * delta;
            }
            let mut p = p.borrow_mut();
            if p.len() < n + 2 {
                *p = legendre_values(x0, (2 * p.len()).max(n + 1));
            }
            0.5 * lam * (p[n - 1] - p[n + 1])
        });
        value.map(|v| v.clamp(0.0, 1.0))
    }
}

/// `E[D_t]`, including depolarization.
pub fn expected_trace_distance(
    params: &ContinuousParams,
    kicks: &KickModel,
) -> Result<SeriesValue> {
    kicks.check_steps(params.t)?;
    let surv = params.survival();
    let cond = Series::new(kicks, params.truncation).conditional_mean(params.t);
    Ok(cond.map(|c| 0.5 * (1.0 - surv) + surv * c))
}

/// `E[D_t^2]`: `(1 - Lambda_{1,t}) / 2` without depolarization, `1/4` after.
pub fn second_moment(params: &ContinuousParams, kicks: &KickModel) -> Result<f64> {
    let surv = params.survival();
    let lam1 = lambda_coeff(1, params.t, kicks)?;
    Ok(surv * 0.5 * (1.0 - lam1) + (1.0 - surv) * 0.25)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(QerrError::validation(format!(
            "delta = {delta} is outside [0, 1]"
        )));
    }
    Ok(())
}

/// `P[D_t <= delta]`, including depolarization.
pub fn trace_distance_cdf(
    delta: f64,
    params: &ContinuousParams,
    kicks: &KickModel,
) -> Result<SeriesValue> {
    check_delta(delta)?;
    kicks.check_steps(params.t)?;
    let surv = params.survival();
    let depolarized = if delta >= 0.5 { 1.0 - surv } else { 0.0 };
    let cond = Series::new(kicks, params.truncation).conditional_cdf(delta, params.t);
    Ok(cond.map(|c| (depolarized + surv * c).clamp(0.0, 1.0)))
}

/// `P[D_t <= delta | nu > t]`.
pub fn conditional_cdf(
    delta: f64,
    t: usize,
    kicks: &KickModel,
    trunc: Truncation,
) -> Result<SeriesValue> {
    check_delta(delta)?;
    kicks.check_steps(t)?;
    Ok(Series::new(kicks, trunc).conditional_cdf(delta, t))
}

/// Union-bound lower bound on `P[max_{s <= t} D_s <= delta | nu > t]`:
/// `max{0, 1 - t + sum_{s=1}^t P[D_s <= delta | nu > s]}`.
pub fn max_trace_distance_lower_bound(
    delta: f64,
    params: &ContinuousParams,
    kicks: &KickModel,
) -> Result<f64> {
    Ok(
        *max_lower_bound_curve(delta, params.t, kicks, params.truncation)?
            .last()
            .expect("t + 1 values"),
    )
}

/// Lower bound for every `t' = 0..=t`.
pub fn max_lower_bound_curve(
    delta: f64,
    t: usize,
    kicks: &KickModel,
    trunc: Truncation,
) -> Result<Vec<f64>> {
    check_delta(delta)?;
    kicks.check_steps(t)?;
    let mut series = Series::new(kicks, trunc);
    let mut out = vec![1.0];
    let mut sum = 0.0;
    for s in 1..=t {
        sum += series.conditional_cdf(delta, s).value;
        out.push((1.0 - s as f64 + sum).max(0.0));
    }
    Ok(out)
}

/// Analytic curves for `t = 0..=t_max` at one threshold.
#[derive(Clone, Debug, Default)]
pub struct ContinuousCurves {
    pub delta: f64,
    pub e_dt: Vec<f64>,
    pub e_dt_sq: Vec<f64>,
    pub cdf: Vec<f64>,
    pub max_lb: Vec<f64>,
    /// Smallest convergence margin seen; `converged` is false if any value
    /// hit the truncation cap.
    pub converged: bool,
    pub max_terms: usize,
}

pub fn continuous_curves(
    q: f64,
    t_max: usize,
    delta: f64,
    kicks: &KickModel,
    trunc: Truncation,
) -> Result<ContinuousCurves> {
    check_delta(delta)?;
    kicks.check_steps(t_max)?;
    ContinuousParams::new(q, 0)?;
    let mut series = Series::new(kicks, trunc);
    let mut c = ContinuousCurves {
        delta,
        converged: true,
        ..Default::default()
    };
    let mut lb_sum = 0.0;
    for t in 0..=t_max {
        let params = ContinuousParams {
            q,
            t,
            truncation: trunc,
        };
        let surv = params.survival();
        let m = series.conditional_mean(t);
        let f = series.conditional_cdf(delta, t);
        for v in [m, f] {
            c.converged &= v.converged;
            c.max_terms = c.max_terms.max(v.terms);
        }
        c.e_dt.push(0.5 * (1.0 - surv) + surv * m.value);
        c.e_dt_sq.push(second_moment(&params, kicks)?);
        let depolarized = if delta >= 0.5 { 1.0 - surv } else { 0.0 };
        c.cdf.push((depolarized + surv * f.value).clamp(0.0, 1.0));
        if t > 0 {
            lb_sum += f.value;
        }
        c.max_lb.push((1.0 - t as f64 + lb_sum).clamp(0.0, 1.0));
    }
    Ok(c)
}

/// Empirical statistics of the sphere walk. Max-distance probabilities are
/// conditional on no depolarization up to `t` (`survivors[t]` runs).
#[derive(Clone, Debug, PartialEq)]
pub struct WalkResult {
    pub runs: usize,
    pub deltas: Vec<f64>,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// `[delta][t]`: `P[D_t <= delta]`.
    pub cdf: Vec<Vec<f64>>,
    /// `[delta][t]`: `P[max_{s <= t} D_s <= delta | nu > t]`.
    pub max_cdf: Vec<Vec<f64>>,
    pub survivors: Vec<usize>,
}

/// One step of the walk: tilt `r` by `alpha` towards azimuth `phi`.
pub fn kick(r: [f64; 3], alpha: f64, phi: f64) -> [f64; 3] {
    // orthonormal frame (e1, e2) perpendicular to r
    let helper = if r[2].abs() < 0.9 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let e1 = normalize(cross(helper, r));
    let e2 = cross(r, e1);
    let (ca, sa) = (alpha.cos(), alpha.sin());
    let (cp, sp) = (phi.cos(), phi.sin());
    normalize([
        ca * r[0] + sa * (cp * e1[0] + sp * e2[0]),
        ca * r[1] + sa * (cp * e1[1] + sp * e2[1]),
        ca * r[2] + sa * (cp * e1[2] + sp * e2[2]),
    ])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Trace distance between the start pole and Bloch vector `r`.
pub fn pole_distance(r: [f64; 3]) -> f64 {
    ((1.0 - r[2]).max(0.0) / 2.0).sqrt()
}

/// Simulates `runs` walks of `t_max` steps from the north pole.
pub fn sphere_walk_oracle(
    q: f64,
    t_max: usize,
    kicks: &KickModel,
    deltas: &[f64],
    runs: usize,
    seed: u64,
    exec: Execution,
) -> Result<WalkResult> {
    ContinuousParams::new(q, t_max)?;
    kicks.check_steps(t_max)?;
    for &d in deltas {
        check_delta(d)?;
    }
    if runs == 0 {
        return Err(QerrError::validation("runs must be at least 1"));
    }
    // per run: distance path and depolarization time (t_max + 1 if never)
    let paths = exec.map(runs, |run| {
        let mut rng = run_rng(seed, run as u64);
        let mut r = [0.0, 0.0, 1.0];
        let mut path = vec![0.0];
        let mut nu = t_max + 1;
        for s in 1..=t_max {
            let alpha = kicks
                .step(s)
                .expect("steps checked")
                .sample_with(rng.gen::<f64>());
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            let dep = rng.gen::<f64>() < q;
            if nu <= t_max {
                path.push(0.5);
                continue;
            }
            r = kick(r, alpha, phi);
            if dep {
                nu = s;
                path.push(0.5);
            } else {
                path.push(pole_distance(r));
            }
        }
        (path, nu)
    });

    let n = runs as f64;
    let mut sum = vec![0.0; t_max + 1];
    let mut sum_sq = vec![0.0; t_max + 1];
    let mut below = vec![vec![0usize; t_max + 1]; deltas.len()];
    let mut max_below = vec![vec![0usize; t_max + 1]; deltas.len()];
    let mut survivors = vec![0usize; t_max + 1];
    for (path, nu) in &paths {
        for (t, &d) in path.iter().enumerate() {
            sum[t] += d;
            sum_sq[t] += d * d;
            if t < *nu {
                survivors[t] += 1;
            }
        }
        for (k, &delta) in deltas.iter().enumerate() {
            let mut ok = true;
            for (t, &d) in path.iter().enumerate() {
                below[k][t] += (d <= delta) as usize;
                ok &= d <= delta;
                if t < *nu && ok {
                    max_below[k][t] += 1;
                }
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mean_se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, m)| {
            if runs < 2 {
                0.0
            } else {
                (((s2 - n * m * m) / (n - 1.0)).max(0.0) / n).sqrt()
            }
        })
        .collect();
    Ok(WalkResult {
        runs,
        deltas: deltas.to_vec(),
        mean,
        mean_se,
        cdf: below
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / n).collect())
            .collect(),
        max_cdf: max_below
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&survivors)
                    .map(|(&c, &s)| {
                        if s == 0 {
                            f64::NAN
                        } else {
                            c as f64 / s as f64
                        }
                    })
                    .collect()
            })
            .collect(),
        survivors,
    })
}
