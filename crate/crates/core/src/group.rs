//! Finite unitary gate groups modulo global phase.
//!
//! Elements are enumerated breadth-first from a fixed generator list, with the
//! identity seeded at index 0, so two builds always produce the same indexing.
//! Equality of elements is decided on a canonical representative: the matrix is
//! multiplied by the phase that makes its first nonzero row-major entry real and
//! positive, and the entries rounded to nine decimals form a hash key.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{QerrError, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Entry-wise tolerance for unitarity and element equality.
pub const MATRIX_TOL: f64 = 1e-9;

/// Groups above this order compose on demand instead of through a dense table.
const DENSE_COMPOSE_LIMIT: usize = 256;

const KEY_SCALE: f64 = 1e9;

/// A `2^n x 2^n` unitary matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMatrix {
    m: CMatrix,
}

impl UnitaryMatrix {
    /// Validates squareness, power-of-two dimension and `U^dagger U = I`.
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(QerrError::validation(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.nrows().is_power_of_two() || m.nrows() < 2 {
            return Err(QerrError::validation(format!(
                "dimension {} is not a power of two >= 2",
                m.nrows()
            )));
        }
        let u = UnitaryMatrix { m };
        let dev = u.unitarity_defect();
        if dev > MATRIX_TOL {
            return Err(QerrError::validation(format!(
                "matrix is not unitary (max |U^dagger U - I| = {dev:e})"
            )));
        }
        Ok(u)
    }

    pub(crate) fn new_unchecked(m: CMatrix) -> Self {
        UnitaryMatrix { m }
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryMatrix {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix {
            m: &self.m * &rhs.m,
        }
    }

    pub fn adjoint(&self) -> UnitaryMatrix {
        UnitaryMatrix {
            m: self.m.adjoint(),
        }
    }

    pub fn scale(&self, phase: Complex64) -> UnitaryMatrix {
        UnitaryMatrix { m: &self.m * phase }
    }

    fn unitarity_defect(&self) -> f64 {
        let prod = self.m.adjoint() * &self.m;
        let n = prod.nrows();
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((prod[(r, c)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Largest entry-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &UnitaryMatrix) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Removes the global phase: the first entry (row-major) with modulus above
/// [`MATRIX_TOL`] becomes real and strictly positive. Idempotent.
pub fn canonical_phase(m: &UnitaryMatrix) -> Result<UnitaryMatrix> {
    let checked = UnitaryMatrix::new(m.m.clone())?;
    Ok(canonicalize(&checked))
}

pub(crate) fn canonicalize(m: &UnitaryMatrix) -> UnitaryMatrix {
    let n = m.dim();
    for r in 0..n {
        for c in 0..n {
            let z = m.m[(r, c)];
            if z.norm() > MATRIX_TOL {
                let phase = (z / z.norm()).conj();
                return m.scale(phase);
            }
        }
    }
    m.clone()
}

fn round_key(x: f64) -> i64 {
    // adding 0.0 folds -0.0 into +0.0 before rounding
    ((x + 0.0) * KEY_SCALE).round() as i64
}

/// Rounded-entry key of an already canonical matrix.
fn key_of_canonical(m: &UnitaryMatrix) -> Vec<i64> {
    // row-major order
    let n = m.dim();
    let mut key = Vec::with_capacity(2 * n * n);
    for r in 0..n {
        for c in 0..n {
            let z = m.m[(r, c)];
            key.push(round_key(z.re));
            key.push(round_key(z.im));
        }
    }
    key
}

/// Standard named gates and their embedding into `n` qubits.
///
/// Qubit 0 is the leftmost tensor factor (most significant bit of the basis
/// index).
pub mod gates {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub fn single(name: &str) -> Option<UnitaryMatrix> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        let i = c(0.0, 1.0);
        let entries = match name.to_ascii_uppercase().as_str() {
            "I" | "ID" => [one, z, z, one],
            "X" => [z, one, one, z],
            "Y" => [z, -i, i, z],
            "Z" => [one, z, z, -one],
            "H" => [c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)],
            "S" => [one, z, z, i],
            "SDG" | "SDAG" => [one, z, z, -i],
            _ => return None,
        };
        Some(UnitaryMatrix::new_unchecked(CMatrix::from_row_slice(
            2, 2, &entries,
        )))
    }

    /// Kronecker product `a (x) b`.
    pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a.kronecker(b)
    }

    /// Embeds a single-qubit gate acting on `target` of `qubits` qubits.
    pub fn on_qubit(gate: &UnitaryMatrix, target: usize, qubits: usize) -> UnitaryMatrix {
        let id = CMatrix::identity(2, 2);
        let mut m = CMatrix::identity(1, 1);
        for q in 0..qubits {
            let factor = if q == target { gate.matrix() } else { &id };
            m = kron(&m, factor);
        }
        UnitaryMatrix::new_unchecked(m)
    }

    fn bit(basis: usize, qubit: usize, qubits: usize) -> bool {
        (basis >> (qubits - 1 - qubit)) & 1 == 1
    }

    /// Controlled-X with the given control and target.
    pub fn cnot(control: usize, target: usize, qubits: usize) -> UnitaryMatrix {
        let dim = 1 << qubits;
        let mut m = CMatrix::zeros(dim, dim);
        for b in 0..dim {
            let out = if bit(b, control, qubits) {
                b ^ (1 << (qubits - 1 - target))
            } else {
                b
            };
            m[(out, b)] = Complex64::new(1.0, 0.0);
        }
        UnitaryMatrix::new_unchecked(m)
    }

    /// Controlled-Z between two qubits (symmetric).
    pub fn cz(a: usize, b: usize, qubits: usize) -> UnitaryMatrix {
        let dim = 1 << qubits;
        let mut m = CMatrix::identity(dim, dim);
        for basis in 0..dim {
            if bit(basis, a, qubits) && bit(basis, b, qubits) {
                m[(basis, basis)] = Complex64::new(-1.0, 0.0);
            }
        }
        UnitaryMatrix::new_unchecked(m)
    }

    /// Tensor product of single-qubit Paulis, e.g. `"XZ"` = X on qubit 0, Z on qubit 1.
    pub fn pauli_string(s: &str) -> Option<UnitaryMatrix> {
        let mut m = CMatrix::identity(1, 1);
        for ch in s.chars() {
            if !matches!(ch, 'I' | 'X' | 'Y' | 'Z') {
                return None;
            }
            m = kron(&m, single(&ch.to_string())?.matrix());
        }
        if m.nrows() < 2 {
            return None;
        }
        Some(UnitaryMatrix::new_unchecked(m))
    }
}

/// Which built-in family a table belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    Pauli,
    Clifford,
    Custom,
}

/// Group selection by name (`"pauli:1"`, `"clifford:2"`, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub kind: GroupKind,
    pub qubits: usize,
}

impl GroupSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (family, n) = s.split_once(':').ok_or_else(|| {
            QerrError::parse(format!("group name `{s}` is not of the form family:n"))
        })?;
        let qubits: usize = n
            .trim()
            .parse()
            .map_err(|_| QerrError::parse(format!("bad qubit count in `{s}`")))?;
        let kind = match family.trim().to_ascii_lowercase().as_str() {
            "pauli" => GroupKind::Pauli,
            "clifford" => GroupKind::Clifford,
            other => return Err(QerrError::parse(format!("unknown group family `{other}`"))),
        };
        Ok(GroupSpec { kind, qubits })
    }

    pub fn build(&self) -> Result<GroupTable> {
        match self.kind {
            GroupKind::Pauli => generate_pauli_group(self.qubits),
            GroupKind::Clifford => generate_clifford_group(self.qubits),
            GroupKind::Custom => Err(QerrError::validation("custom groups have no builder")),
        }
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = match self.kind {
            GroupKind::Pauli => "pauli",
            GroupKind::Clifford => "clifford",
            GroupKind::Custom => "custom",
        };
        write!(f, "{family}:{}", self.qubits)
    }
}

/// Closed-form order `2^(n^2+2n) * prod_{i=1}^n (4^i - 1)` of the Clifford group mod phase.
pub fn clifford_order(n: u32) -> u128 {
    let mut order: u128 = 1 << (n * n + 2 * n);
    for i in 1..=n {
        order *= 4u128.pow(i) - 1;
    }
    order
}

/// A generator used to build a table.
#[derive(Clone, Debug)]
pub struct Generator {
    pub name: String,
    pub matrix: UnitaryMatrix,
}

/// An element of a [`GroupTable`] in canonical phase.
#[derive(Clone, Debug)]
pub struct GroupElement {
    pub index: usize,
    pub matrix: UnitaryMatrix,
}

#[derive(Clone, Debug)]
enum Compose {
    /// `table[i * order + j]`, `u32::MAX` when the product left the element set.
    Dense(Vec<u32>),
    Lookup,
}

/// An enumerated finite group with composition and inverse lookups.
///
/// `compose(i, j)` is the index of the matrix product `M_i * M_j`, i.e. `j`
/// applied first. Immutable after construction.
#[derive(Clone, Debug)]
pub struct GroupTable {
    name: String,
    kind: GroupKind,
    qubits: usize,
    elements: Vec<GroupElement>,
    lookup: HashMap<Vec<i64>, usize>,
    compose: Compose,
    inverse: Vec<Option<usize>>,
    generators: Vec<Generator>,
}

impl GroupTable {
    /// Builds a table from an explicit element list (identity must come first
    /// for the table to verify). Elements are canonicalized; duplicates are
    /// rejected. Products leaving the list are recorded as missing, so the
    /// result need not be a group.
    pub fn from_parts(
        name: impl Into<String>,
        qubits: usize,
        elements: Vec<UnitaryMatrix>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if elements.is_empty() {
            return Err(QerrError::validation(
                "group table needs at least one element",
            ));
        }
        let dim = 1usize << qubits;
        let mut lookup = HashMap::with_capacity(elements.len());
        let mut canon = Vec::with_capacity(elements.len());
        for (index, m) in elements.into_iter().enumerate() {
            if m.dim() != dim {
                return Err(QerrError::validation(format!(
                    "element {index} has dimension {}, expected {dim}",
                    m.dim()
                )));
            }
            let c = canonicalize(&UnitaryMatrix::new(m.into_matrix())?);
            if lookup.insert(key_of_canonical(&c), index).is_some() {
                return Err(QerrError::validation(format!(
                    "element {index} duplicates an earlier element up to phase"
                )));
            }
            canon.push(GroupElement { index, matrix: c });
        }
        Ok(Self::assemble(
            name.into(),
            GroupKind::Custom,
            qubits,
            canon,
            lookup,
            generators,
        ))
    }

    fn assemble(
        name: String,
        kind: GroupKind,
        qubits: usize,
        elements: Vec<GroupElement>,
        lookup: HashMap<Vec<i64>, usize>,
        generators: Vec<Generator>,
    ) -> Self {
        let mut table = GroupTable {
            name,
            kind,
            qubits,
            elements,
            lookup,
            compose: Compose::Lookup,
            inverse: Vec::new(),
            generators,
        };
        let order = table.order();
        if order <= DENSE_COMPOSE_LIMIT {
            let mut dense = vec![u32::MAX; order * order];
            for i in 0..order {
                for j in 0..order {
                    if let Some(k) = table.lookup_product(i, j) {
                        dense[i * order + j] = k as u32;
                    }
                }
            }
            table.compose = Compose::Dense(dense);
        }
        table.inverse = (0..order)
            .map(|i| table.find_canonical(&canonicalize(&table.elements[i].matrix.adjoint())))
            .collect();
        table
    }

    /// Breadth-first closure of `generators` under left multiplication,
    /// seeded with the identity.
    fn bfs(name: String, kind: GroupKind, qubits: usize, generators: Vec<Generator>) -> Self {
        let dim = 1usize << qubits;
        let identity = UnitaryMatrix::identity(dim);
        let mut lookup = HashMap::new();
        let mut elements = Vec::new();
        lookup.insert(key_of_canonical(&identity), 0);
        elements.push(GroupElement {
            index: 0,
            matrix: identity,
        });
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for g in &generators {
                let next = canonicalize(&g.matrix.mul(&elements[i].matrix));
                let key = key_of_canonical(&next);
                if let std::collections::hash_map::Entry::Vacant(slot) = lookup.entry(key) {
                    let index = elements.len();
                    slot.insert(index);
                    elements.push(GroupElement {
                        index,
                        matrix: next,
                    });
                    queue.push_back(index);
                }
            }
        }
        Self::assemble(name, kind, qubits, elements, lookup, generators)
    }

    fn find_canonical(&self, c: &UnitaryMatrix) -> Option<usize> {
        let idx = *self.lookup.get(&key_of_canonical(c))?;
        (self.elements[idx].matrix.max_abs_diff(c) <= MATRIX_TOL).then_some(idx)
    }

    fn lookup_product(&self, i: usize, j: usize) -> Option<usize> {
        let prod = self.elements[i].matrix.mul(&self.elements[j].matrix);
        self.find_canonical(&canonicalize(&prod))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn element(&self, index: usize) -> &GroupElement {
        &self.elements[index]
    }

    pub fn matrix(&self, index: usize) -> &UnitaryMatrix {
        &self.elements[index].matrix
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn has_dense_compose(&self) -> bool {
        matches!(self.compose, Compose::Dense(_))
    }

    /// Index of `M_i * M_j`, or `None` when the product is not in the table.
    pub fn try_compose(&self, i: usize, j: usize) -> Option<usize> {
        match &self.compose {
            Compose::Dense(t) => {
                let k = t[i * self.order() + j];
                (k != u32::MAX).then_some(k as usize)
            }
            Compose::Lookup => self.lookup_product(i, j),
        }
    }

    /// Index of `M_i * M_j`.
    ///
    /// Panics if the product is not in the table, which cannot happen for a
    /// table that passes [`verify_group`].
    pub fn compose(&self, i: usize, j: usize) -> usize {
        self.try_compose(i, j)
            .unwrap_or_else(|| panic!("{}: product of {i} and {j} is not in the table", self.name))
    }

    pub fn try_inverse(&self, i: usize) -> Option<usize> {
        self.inverse[i]
    }

    pub fn inverse(&self, i: usize) -> usize {
        self.inverse[i]
            .unwrap_or_else(|| panic!("{}: inverse of {i} is not in the table", self.name))
    }

    /// Index of the ordered product `seq[last] * ... * seq[0]` (first gate applied first).
    pub fn product(&self, seq: &[usize]) -> usize {
        seq.iter().fold(0, |acc, &g| self.compose(g, acc))
    }

    /// Index of the phase class of `m`.
    pub fn element_of(&self, m: &UnitaryMatrix) -> Result<usize> {
        if m.dim() != self.dim() {
            return Err(QerrError::validation(format!(
                "matrix dimension {} does not match group dimension {}",
                m.dim(),
                self.dim()
            )));
        }
        let c = canonical_phase(m)?;
        self.find_canonical(&c)
            .ok_or_else(|| QerrError::NotAMember {
                group: self.name.clone(),
            })
    }

    /// Looks up a named gate: a Pauli string (`"XZ"`), a single-qubit name with
    /// optional target (`"H 1"`), `"CNOT c t"`, `"CZ a b"`, or `"elem <index>"`.
    /// On one qubit the target may be omitted.
    pub fn resolve_gate(&self, spec: &str) -> Result<usize> {
        let m = self.gate_matrix(spec)?;
        self.element_of(&m)
    }

    pub fn gate_matrix(&self, spec: &str) -> Result<UnitaryMatrix> {
        let parts: Vec<&str> = spec.split_whitespace().collect();
        let n = self.qubits;
        let bad = || QerrError::parse(format!("cannot interpret gate `{spec}` on {n} qubit(s)"));
        let qubit = |s: &str| -> Result<usize> {
            let q: usize = s.parse().map_err(|_| bad())?;
            if q >= n {
                return Err(QerrError::parse(format!(
                    "qubit {q} out of range in `{spec}`"
                )));
            }
            Ok(q)
        };
        match parts.as_slice() {
            [] => Err(bad()),
            ["elem", idx] | ["ELEM", idx] => {
                let i: usize = idx.parse().map_err(|_| bad())?;
                if i >= self.order() {
                    return Err(QerrError::Range {
                        what: "element index",
                        value: i,
                        max: self.order() - 1,
                    });
                }
                Ok(self.elements[i].matrix.clone())
            }
            [name, a, b] => {
                let (a, b) = (qubit(a)?, qubit(b)?);
                if a == b {
                    return Err(bad());
                }
                match name.to_ascii_uppercase().as_str() {
                    "CNOT" | "CX" => Ok(gates::cnot(a, b, n)),
                    "CZ" => Ok(gates::cz(a, b, n)),
                    _ => Err(bad()),
                }
            }
            [name, q] => {
                let g = gates::single(name).ok_or_else(bad)?;
                Ok(gates::on_qubit(&g, qubit(q)?, n))
            }
            [name] => {
                let upper = name.to_ascii_uppercase();
                if upper.len() == n && upper.chars().all(|c| "IXYZ".contains(c)) {
                    return Ok(gates::pauli_string(&upper).expect("validated pauli string"));
                }
                if n == 1 {
                    return gates::single(name).ok_or_else(bad);
                }
                if upper == "I" {
                    return Ok(UnitaryMatrix::identity(self.dim()));
                }
                Err(bad())
            }
            _ => Err(bad()),
        }
    }

    /// Debug export: `{name, qubits, order, elements: [{index, matrix: [[[re, im], ...], ...]}]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let elements: Vec<_> = self
            .elements
            .iter()
            .map(|e| {
                let m = e.matrix.matrix();
                let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
                    .map(|r| {
                        (0..m.ncols())
                            .map(|c| [m[(r, c)].re, m[(r, c)].im])
                            .collect()
                    })
                    .collect();
                json!({ "index": e.index, "matrix": rows })
            })
            .collect();
        json!({
            "name": self.name,
            "qubits": self.qubits,
            "order": self.order(),
            "elements": elements,
        })
    }
}

/// The n-qubit Pauli group modulo phase (order `4^n`), `1 <= n <= 3`.
pub fn generate_pauli_group(n: usize) -> Result<GroupTable> {
    if !(1..=3).contains(&n) {
        return Err(QerrError::UnsupportedSize(format!(
            "pauli group supports 1..=3 qubits, got {n}"
        )));
    }
    let mut generators = Vec::new();
    for q in 0..n {
        for p in ["X", "Z"] {
            generators.push(Generator {
                name: format!("{p}{q}"),
                matrix: gates::on_qubit(&gates::single(p).unwrap(), q, n),
            });
        }
    }
    Ok(GroupTable::bfs(
        format!("pauli:{n}"),
        GroupKind::Pauli,
        n,
        generators,
    ))
}

/// The Clifford group modulo phase for `n` in `{1, 2}`, generated by H, S
/// on every qubit and CZ on every pair.
pub fn generate_clifford_group(n: usize) -> Result<GroupTable> {
    if !(1..=2).contains(&n) {
        return Err(QerrError::UnsupportedSize(format!(
            "clifford group enumeration supports 1 or 2 qubits, got {n}"
        )));
    }
    let mut generators = Vec::new();
    for name in ["H", "S"] {
        for q in 0..n {
            generators.push(Generator {
                name: format!("{name}{q}"),
                matrix: gates::on_qubit(&gates::single(name).unwrap(), q, n),
            });
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            generators.push(Generator {
                name: format!("CZ{a}{b}"),
                matrix: gates::cz(a, b, n),
            });
        }
    }
    Ok(GroupTable::bfs(
        format!("clifford:{n}"),
        GroupKind::Clifford,
        n,
        generators,
    ))
}

/// Checks the group axioms on a table: identity at index 0, closure, and an
/// inverse for every element.
///
/// Tables with a dense compose table are checked exhaustively. Larger tables
/// are checked for closure under left multiplication by each generator (which
/// together with the identity implies the table contains the generated group),
/// inverses, and 10 000 random products.
pub fn verify_group(table: &GroupTable) -> bool {
    let order = table.order();
    if order == 0 {
        return false;
    }
    if table
        .matrix(0)
        .max_abs_diff(&UnitaryMatrix::identity(table.dim()))
        > MATRIX_TOL
    {
        return false;
    }
    for g in table.generators() {
        let Some(gi) = table.find_canonical(&canonicalize(&g.matrix)) else {
            return false;
        };
        if (0..order).any(|i| table.try_compose(gi, i).is_none()) {
            return false;
        }
    }
    for i in 0..order {
        match table.try_inverse(i) {
            Some(inv) if table.try_compose(inv, i) == Some(0) => {}
            _ => return false,
        }
    }
    match &table.compose {
        Compose::Dense(t) => t.iter().all(|&k| k != u32::MAX),
        Compose::Lookup => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..10_000).all(|_| {
                let i = rng.gen_range(0..order);
                let j = rng.gen_range(0..order);
                table.try_compose(i, j).is_some()
            })
        }
    }
}
