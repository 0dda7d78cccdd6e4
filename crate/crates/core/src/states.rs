//! Pure states, density matrices and distance measures.
//!
//! Distances are always computed on density matrices, which absorbs the global
//! phase of kets. The Schatten distance uses the eigenvalues of the Hermitian
//! difference `sigma - rho`, whose moduli are its singular values.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QerrError, Result};
use crate::group::{CMatrix, GroupElement, GroupTable, UnitaryMatrix};

pub const STATE_TOL: f64 = 1e-9;

/// Two states whose trace distance is at most this are the same state.
pub const SAME_STATE_TOL: f64 = 1e-6;

const STATE_KEY_SCALE: f64 = 1e6;

/// Order `p` of the Schatten norm, `p >= 1` or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub const TRACE: NormOrder = NormOrder::Finite(1.0);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            return Ok(NormOrder::Infinity);
        }
        if !(p >= 1.0) {
            return Err(QerrError::validation(format!(
                "norm order p = {p} must be >= 1"
            )));
        }
        Ok(NormOrder::Finite(p))
    }
}

impl FromStr for NormOrder {
    type Err = QerrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(NormOrder::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| QerrError::parse(format!("bad norm order `{s}`")))?;
                NormOrder::new(p)
            }
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Finite(p) => write!(f, "{p}"),
            NormOrder::Infinity => write!(f, "inf"),
        }
    }
}

/// A normalized state vector of `2^n` amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: DVector<Complex64>,
}

impl PureState {
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(QerrError::validation(format!(
                "state has {n} amplitudes, expected a power of two >= 2"
            )));
        }
        let v = DVector::from_vec(amps);
        let norm = v.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(QerrError::validation(format!(
                "state norm is {norm}, expected 1"
            )));
        }
        Ok(PureState { amps: v })
    }

    pub(crate) fn from_vector_unchecked(amps: DVector<Complex64>) -> Self {
        PureState { amps }
    }

    /// Computational basis state `|index>` on `qubits` qubits.
    pub fn basis(qubits: usize, index: usize) -> Self {
        let mut v = DVector::zeros(1 << qubits);
        v[index] = Complex64::new(1.0, 0.0);
        PureState { amps: v }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn apply(&self, u: &UnitaryMatrix) -> PureState {
        PureState {
            amps: u.matrix() * &self.amps,
        }
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix {
            m: &self.amps * self.amps.adjoint(),
        }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> Complex64 {
        self.amps.dotc(&other.amps)
    }
}

/// Parses `|0>`, `|01>`, `|+>`, `|->`, `sqrt(7/10)|0>+sqrt(3/10)|1>`,
/// `i*sqrt(1/2)|1>`, or a JSON amplitude list `[[re, im], ...]`.
impl FromStr for PureState {
    type Err = QerrError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('[') {
            let pairs: Vec<[f64; 2]> = serde_json::from_str(s)
                .map_err(|e| QerrError::parse(format!("bad amplitude list: {e}")))?;
            return PureState::new(
                pairs
                    .iter()
                    .map(|[re, im]| Complex64::new(*re, *im))
                    .collect(),
            );
        }
        StateExpr::new(s).parse()
    }
}

impl fmt::Display for PureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pairs: Vec<String> = self
            .amps
            .iter()
            .map(|z| format!("[{},{}]", z.re, z.im))
            .collect();
        write!(f, "[{}]", pairs.join(","))
    }
}

/// Tiny recursive-descent parser for ket expressions.
struct StateExpr<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> StateExpr<'a> {
    fn new(src: &'a str) -> Self {
        StateExpr { src, pos: 0 }
    }

    fn err(&self, msg: &str) -> QerrError {
        QerrError::parse(format!(
            "{msg} at offset {} in state `{}`",
            self.pos, self.src
        ))
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.src[self.pos..].chars().next().unwrap().len_utf8();
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn parse(mut self) -> Result<PureState> {
        let mut total: Option<DVector<Complex64>> = None;
        let mut first = true;
        while self.peek().is_some() {
            let mut sign = 1.0;
            if self.eat('+') {
            } else if self.eat('-') {
                sign = -1.0;
            } else if !first {
                return Err(self.err("expected + or -"));
            }
            first = false;
            let coeff = self.coefficient()? * sign;
            let ket = self.ket()?;
            let term = ket * coeff;
            total = Some(match total {
                None => term,
                Some(t) if t.len() == term.len() => t + term,
                Some(_) => return Err(self.err("kets of different qubit counts")),
            });
        }
        let v = total.ok_or_else(|| self.err("empty state"))?;
        PureState::new(v.iter().copied().collect())
    }

    /// Product of factors, empty product = 1.
    fn coefficient(&mut self) -> Result<Complex64> {
        let mut c = Complex64::new(1.0, 0.0);
        loop {
            match self.peek() {
                Some('|') | None => return Ok(c),
                Some('*') => {
                    self.pos += 1;
                }
                _ => c *= self.factor()?,
            }
        }
    }

    fn factor(&mut self) -> Result<Complex64> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        if rest.starts_with("sqrt(") {
            self.pos += 5;
            let v = self.ratio()?;
            if !self.eat(')') {
                return Err(self.err("missing )"));
            }
            if v < 0.0 {
                return Err(self.err("sqrt of a negative number"));
            }
            return Ok(Complex64::new(v.sqrt(), 0.0));
        }
        if rest.starts_with('i') {
            self.pos += 1;
            return Ok(Complex64::new(0.0, 1.0));
        }
        if rest.starts_with('(') {
            self.pos += 1;
            let v = self.ratio()?;
            if !self.eat(')') {
                return Err(self.err("missing )"));
            }
            return Ok(Complex64::new(v, 0.0));
        }
        Ok(Complex64::new(self.ratio()?, 0.0))
    }

    fn ratio(&mut self) -> Result<f64> {
        let num = self.number()?;
        if self.eat('/') {
            let den = self.number()?;
            if den == 0.0 {
                return Err(self.err("division by zero"));
            }
            return Ok(num / den);
        }
        Ok(num)
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err("expected a number"));
        }
        let v: f64 = rest[..len].parse().map_err(|_| self.err("bad number"))?;
        self.pos += len;
        Ok(v)
    }

    fn ket(&mut self) -> Result<DVector<Complex64>> {
        if !self.eat('|') {
            return Err(self.err("expected |"));
        }
        let rest = &self.src[self.pos..];
        let end = rest.find('>').ok_or_else(|| self.err("unterminated ket"))?;
        let label = &rest[..end];
        self.pos += end + 1;
        if label.is_empty() {
            return Err(self.err("empty ket label"));
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = DVector::from_element(1, Complex64::new(1.0, 0.0));
        for ch in label.chars() {
            let q = match ch {
                '0' => [1.0, 0.0],
                '1' => [0.0, 1.0],
                '+' => [h, h],
                '-' => [h, -h],
                _ => return Err(self.err("ket labels use 0, 1, + and -")),
            };
            let q = DVector::from_vec(vec![Complex64::new(q[0], 0.0), Complex64::new(q[1], 0.0)]);
            v = v.kronecker(&q);
        }
        Ok(v)
    }
}

/// A density matrix (Hermitian, unit trace, positive semidefinite).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(QerrError::validation("density matrix must be square"));
        }
        let herm = (&m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm > STATE_TOL {
            return Err(QerrError::validation("density matrix is not Hermitian"));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(QerrError::validation(format!(
                "density matrix trace is {tr}"
            )));
        }
        let min_eig = hermitian_eigenvalues(&m)
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -STATE_TOL {
            return Err(QerrError::validation(format!(
                "density matrix has negative eigenvalue {min_eig}"
            )));
        }
        Ok(DensityMatrix { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    /// `U rho U^dagger`.
    pub fn conjugate(&self, u: &UnitaryMatrix) -> DensityMatrix {
        DensityMatrix {
            m: u.matrix() * &self.m * u.matrix().adjoint(),
        }
    }

    fn key(&self) -> Vec<i64> {
        let n = self.dim();
        let mut key = Vec::with_capacity(2 * n * n);
        for r in 0..n {
            for c in 0..n {
                let z = self.m[(r, c)];
                key.push(((z.re + 0.0) * STATE_KEY_SCALE).round() as i64);
                key.push(((z.im + 0.0) * STATE_KEY_SCALE).round() as i64);
            }
        }
        key
    }
}

fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

fn check_dims(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return Err(QerrError::validation(format!(
            "dimension mismatch: {} vs {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    Ok(())
}

/// `(1/2) * ||sigma - rho||_p`: half the p-norm of the singular values of the
/// difference (half the largest one for `p = infinity`).
pub fn schatten_distance(rho: &DensityMatrix, sigma: &DensityMatrix, p: NormOrder) -> Result<f64> {
    check_dims(rho, sigma)?;
    let diff = &sigma.m - &rho.m;
    let sv = hermitian_eigenvalues(&diff).into_iter().map(f64::abs);
    let norm = match p {
        NormOrder::Infinity => sv.fold(0.0, f64::max),
        NormOrder::Finite(1.0) => sv.sum(),
        NormOrder::Finite(p) => sv.map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p),
    };
    Ok(0.5 * norm)
}

/// Schatten distance between two pure states from their overlap alone:
/// `|a><a| - |b><b|` has eigenvalues `±sqrt(1 - |<a|b>|^2)` and zeros.
pub fn pure_distance(a: &PureState, b: &PureState, p: NormOrder) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(QerrError::validation(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let lambda = (1.0 - a.inner(b).norm_sqr()).max(0.0).sqrt();
    Ok(match p {
        NormOrder::Infinity => 0.5 * lambda,
        NormOrder::Finite(p) => 0.5 * 2f64.powf(1.0 / p) * lambda,
    })
}

pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    schatten_distance(rho, sigma, NormOrder::TRACE)
}

/// `Tr sqrt(rho^{1/2} sigma rho^{1/2})`. For pure `rho = |psi><psi|` this is
/// `sqrt(<psi|sigma|psi>)`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho, sigma)?;
    let eig = SymmetricEigen::new(rho.m.clone());
    let sqrt_vals = eig
        .eigenvalues
        .map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    let sqrt_rho = v * CMatrix::from_diagonal(&sqrt_vals) * v.adjoint();
    let inner = &sqrt_rho * &sigma.m * &sqrt_rho;
    // symmetrize away rounding before the Hermitian solver
    let inner = (&inner + inner.adjoint()) * Complex64::new(0.5, 0.0);
    let f: f64 = hermitian_eigenvalues(&inner)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok(f.min(1.0))
}

/// States reachable as `g|psi0>` for `g` in a group, merged up to phase.
#[derive(Clone, Debug)]
pub struct StateSet {
    states: Vec<DensityMatrix>,
    kets: Vec<PureState>,
    representative: Vec<usize>,
    element_to_state: Vec<usize>,
    lookup: HashMap<Vec<i64>, Vec<usize>>,
    group: String,
    origin: String,
}

impl StateSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &DensityMatrix {
        &self.states[i]
    }

    pub fn ket(&self, i: usize) -> &PureState {
        &self.kets[i]
    }

    /// Lowest element index mapping the initial state onto state `i`.
    pub fn representative(&self, i: usize) -> usize {
        self.representative[i]
    }

    /// State index of `g|psi0>` for every element index `g`.
    pub fn element_to_state(&self) -> &[usize] {
        &self.element_to_state
    }

    pub fn origin(&self) -> (&str, &str) {
        (&self.group, &self.origin)
    }

    pub fn index_of(&self, rho: &DensityMatrix) -> Option<usize> {
        self.lookup
            .get(&rho.key())?
            .iter()
            .copied()
            .find(|&i| trace_distance(&self.states[i], rho).is_ok_and(|d| d <= SAME_STATE_TOL))
    }

    /// Index of a pure state. For pure states the trace distance is
    /// `sqrt(1 - |<a|b>|^2)`, so the kets are compared directly.
    pub fn index_of_ket(&self, ket: &PureState) -> Option<usize> {
        let rho = ket.density();
        self.lookup.get(&rho.key())?.iter().copied().find(|&i| {
            let ov = self.kets[i].inner(ket).norm_sqr();
            (1.0 - ov).max(0.0).sqrt() <= SAME_STATE_TOL
        })
    }

    /// The permutation `s -> index of (g . s)` induced by element `g`.
    pub fn action(&self, table: &GroupTable, g: usize) -> Vec<usize> {
        let u = table.matrix(g);
        self.kets
            .iter()
            .map(|k| {
                self.index_of_ket(&k.apply(u))
                    .expect("state sets are closed under the group action")
            })
            .collect()
    }
}

/// Enumerates `{g|psi0> : g in G}` as density matrices.
pub fn reachable_states(table: &GroupTable, psi0: &PureState) -> Result<StateSet> {
    if psi0.dim() != table.dim() {
        return Err(QerrError::validation(format!(
            "state dimension {} does not match group dimension {}",
            psi0.dim(),
            table.dim()
        )));
    }
    let mut set = StateSet {
        states: Vec::new(),
        kets: Vec::new(),
        representative: Vec::new(),
        element_to_state: Vec::with_capacity(table.order()),
        lookup: HashMap::new(),
        group: table.name().to_string(),
        origin: psi0.to_string(),
    };
    for (g, e) in table.elements().iter().enumerate() {
        let ket = psi0.apply(&e.matrix);
        let idx = match set.index_of_ket(&ket) {
            Some(i) => i,
            None => {
                let rho = ket.density();
                let i = set.states.len();
                set.lookup.entry(rho.key()).or_default().push(i);
                set.states.push(rho);
                set.kets.push(ket);
                set.representative.push(g);
                i
            }
        };
        set.element_to_state.push(idx);
    }
    Ok(set)
}

/// Whether `M|psi> = e^{i gamma}|psi>`, i.e. `|<psi|M|psi>| = 1`. Defined for
/// non-identity elements only.
pub fn is_stabilized_by(m: &GroupElement, psi: &PureState) -> Result<bool> {
    if m.matrix.dim() != psi.dim() {
        return Err(QerrError::validation("element and state dimensions differ"));
    }
    if m.matrix.max_abs_diff(&UnitaryMatrix::identity(psi.dim())) <= STATE_TOL {
        return Err(QerrError::validation(
            "stabilizer predicate is defined on non-identity elements",
        ));
    }
    let overlap = psi.inner(&psi.apply(&m.matrix)).norm();
    Ok((overlap - 1.0).abs() <= STATE_TOL)
}

/// Orthonormal eigenbasis of a unitary (unitaries are normal, so the Hermitian
/// and anti-Hermitian parts share eigenvectors; a generic combination of the
/// two separates every distinct eigenvalue).
pub fn unitary_eigenbasis(u: &UnitaryMatrix) -> Vec<PureState> {
    let m = u.matrix();
    let half = Complex64::new(0.5, 0.0);
    let herm = (m + m.adjoint()) * half;
    let anti = (m - m.adjoint()) * Complex64::new(0.0, -0.5);
    let mix = herm + anti * Complex64::new(0.618_033_988_749_895, 0.0);
    let eig = SymmetricEigen::new(mix);
    eig.eigenvectors
        .column_iter()
        .map(|c| PureState::from_vector_unchecked(c.into_owned()))
        .collect()
}
