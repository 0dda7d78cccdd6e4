//! Gate distributions and error models over group elements.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QerrError, Result};
use crate::group::{gates, GroupKind, GroupTable};

pub const PROB_SUM_TOL: f64 = 1e-12;

/// A finite probability distribution over group element indices, stored
/// sparsely in ascending index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    entries: Vec<(usize, f64)>,
}

impl Categorical {
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, p) in entries {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(QerrError::validation(format!(
                    "probability {p} for element {i} is not a nonnegative number"
                )));
            }
            *merged.entry(i).or_default() += p;
        }
        let sum: f64 = merged.values().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(QerrError::validation(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Categorical {
            entries: merged.into_iter().filter(|&(_, p)| p > 0.0).collect(),
        })
    }

    pub fn point(index: usize) -> Self {
        Categorical {
            entries: vec![(index, 1.0)],
        }
    }

    pub fn uniform(order: usize) -> Self {
        let w = 1.0 / order as f64;
        Categorical {
            entries: (0..order).map(|i| (i, w)).collect(),
        }
    }

    /// Nonzero `(index, probability)` pairs.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }

    fn check_range(&self, order: usize, what: &'static str) -> Result<()> {
        match self.max_index() {
            Some(i) if i >= order => Err(QerrError::Range {
                what,
                value: i,
                max: order - 1,
            }),
            _ => Ok(()),
        }
    }

    /// Samples with a single uniform draw `u` in `[0, 1)`.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for &(i, p) in &self.entries {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.entries.last().expect("distribution is nonempty").0
    }
}

/// The gate distribution `kappa` of a random circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct GateDistribution(pub Categorical);

impl GateDistribution {
    pub fn uniform(table: &GroupTable) -> Self {
        GateDistribution(Categorical::uniform(table.order()))
    }

    pub fn point(index: usize) -> Self {
        GateDistribution(Categorical::point(index))
    }

    /// `uniform` or `point:<gate>`.
    pub fn parse(spec: &str, table: &GroupTable) -> Result<Self> {
        let spec = spec.trim();
        if spec == "uniform" {
            return Ok(Self::uniform(table));
        }
        if let Some(g) = spec.strip_prefix("point:") {
            return Ok(Self::point(table.resolve_gate(g)?));
        }
        Err(QerrError::parse(format!(
            "gate distribution `{spec}`: expected `uniform` or `point:<gate>`"
        )))
    }

    pub fn validate(&self, table: &GroupTable) -> Result<()> {
        self.0.check_range(table.order(), "gate index")
    }
}

/// Conditional law of the error element given the applied gate.
#[derive(Clone, Debug, PartialEq)]
pub enum ErrorModel {
    /// `zeta(lambda)` regardless of the gate.
    Independent(Categorical),
    /// `zeta(lambda | U)`; gates without an entry use `default`.
    GateConditional {
        per_gate: BTreeMap<usize, Categorical>,
        default: Categorical,
    },
}

impl ErrorModel {
    pub fn none() -> Self {
        ErrorModel::Independent(Categorical::point(0))
    }

    pub fn for_gate(&self, gate: usize) -> &Categorical {
        match self {
            ErrorModel::Independent(z) => z,
            ErrorModel::GateConditional { per_gate, default } => {
                per_gate.get(&gate).unwrap_or(default)
            }
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, ErrorModel::Independent(_))
    }

    /// Every error element with positive probability under some gate.
    pub fn support(&self) -> Vec<usize> {
        let mut all: Vec<usize> = match self {
            ErrorModel::Independent(z) => z.entries().iter().map(|e| e.0).collect(),
            ErrorModel::GateConditional { per_gate, default } => per_gate
                .values()
                .chain(std::iter::once(default))
                .flat_map(|z| z.entries().iter().map(|e| e.0))
                .collect(),
        };
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn validate(&self, table: &GroupTable) -> Result<()> {
        match self {
            ErrorModel::Independent(z) => z.check_range(table.order(), "error index"),
            ErrorModel::GateConditional { per_gate, default } => {
                default.check_range(table.order(), "error index")?;
                for (&g, z) in per_gate {
                    if g >= table.order() {
                        return Err(QerrError::Range {
                            what: "gate index",
                            value: g,
                            max: table.order() - 1,
                        });
                    }
                    z.check_range(table.order(), "error index")?;
                }
                Ok(())
            }
        }
    }

    /// `1 - r` on the identity and `r / (4^n - 1)` on each other Pauli string.
    pub fn pauli_channel(table: &GroupTable, r: f64) -> Result<Self> {
        check_rate(r)?;
        let n = table.qubits();
        let count = 1usize << (2 * n);
        let each = r / (count - 1) as f64;
        let mut entries = vec![(0, 1.0 - r)];
        for k in 1..count {
            let label = pauli_label(k, n);
            entries.push((table.resolve_gate(&label)?, each));
        }
        Ok(ErrorModel::Independent(Categorical::new(entries)?))
    }

    /// `1 - r` on the identity and `r / (|G| - 1)` on every other element.
    pub fn clifford_channel(table: &GroupTable, r: f64) -> Result<Self> {
        check_rate(r)?;
        if table.kind() != GroupKind::Clifford {
            return Err(QerrError::validation(
                "clifford-channel needs a Clifford group",
            ));
        }
        let each = r / (table.order() - 1) as f64;
        let entries = std::iter::once((0, 1.0 - r)).chain((1..table.order()).map(|i| (i, each)));
        Ok(ErrorModel::Independent(Categorical::new(entries)?))
    }

    /// Independent Pauli errors per qubit; `rates[q] = [p_I, p_X, p_Y, p_Z]`
    /// for qubit `q` (qubit 0 leftmost).
    pub fn pauli_product(table: &GroupTable, rates: &[[f64; 4]]) -> Result<Self> {
        let n = table.qubits();
        if rates.len() != n {
            return Err(QerrError::validation(format!(
                "pauli-product needs {n} rate groups, got {}",
                rates.len()
            )));
        }
        for r in rates {
            if r.iter().any(|&p| !(p >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > PROB_SUM_TOL
            {
                return Err(QerrError::validation(format!(
                    "pauli-product rates {r:?} are not a probability vector"
                )));
            }
        }
        let mut entries = Vec::new();
        for k in 0..(1usize << (2 * n)) {
            let mut p = 1.0;
            for (q, r) in rates.iter().enumerate() {
                p *= r[(k >> (2 * (n - 1 - q))) & 3];
            }
            entries.push((table.resolve_gate(&pauli_label(k, n))?, p));
        }
        Ok(ErrorModel::Independent(Categorical::new(entries)?))
    }

    /// Shorthands `pauli-channel:r`, `clifford-channel:r`,
    /// `pauli-product:pI,pX,pY,pZ;...`, `none`, or a path to a JSON/TOML file.
    pub fn parse(spec: &str, table: &GroupTable) -> Result<Self> {
        let spec = spec.trim();
        if spec == "none" {
            return Ok(Self::none());
        }
        let shorthand = |name: &str| -> Option<&str> {
            let rest = spec.strip_prefix(name)?;
            rest.strip_prefix(':')
                .or_else(|| rest.strip_prefix(' '))
                .map(str::trim)
        };
        if let Some(r) = shorthand("pauli-channel") {
            return Self::pauli_channel(table, parse_rate(r)?);
        }
        if let Some(r) = shorthand("clifford-channel") {
            return Self::clifford_channel(table, parse_rate(r)?);
        }
        if let Some(groups) = shorthand("pauli-product") {
            let rates = groups
                .split(';')
                .map(|g| {
                    let v: Vec<f64> = g
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| QerrError::parse(format!("bad pauli-product group `{g}`")))?;
                    <[f64; 4]>::try_from(v).map_err(|_| {
                        QerrError::parse(format!("pauli-product group `{g}` needs 4 values"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Self::pauli_product(table, &rates);
        }
        let path = Path::new(spec);
        if path.exists() {
            return ErrorModelFile::load(path)?.resolve(table);
        }
        Err(QerrError::parse(format!("unknown error model `{spec}`")))
    }
}

fn check_rate(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(QerrError::validation(format!(
            "error rate {r} is outside [0, 1]"
        )));
    }
    Ok(())
}

fn parse_rate(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| QerrError::parse(format!("bad error rate `{s}`")))
}

/// Pauli string for base-4 digits of `k` (I=0, X=1, Y=2, Z=3), qubit 0 first.
fn pauli_label(k: usize, n: usize) -> String {
    (0..n)
        .map(|q| ['I', 'X', 'Y', 'Z'][(k >> (2 * (n - 1 - q))) & 3])
        .collect()
}

/// A gate or error given by name (`"X"`, `"CNOT 0 1"`) or element index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElementRef {
    Index(usize),
    Name(String),
}

impl ElementRef {
    pub fn resolve(&self, table: &GroupTable) -> Result<usize> {
        match self {
            ElementRef::Index(i) if *i < table.order() => Ok(*i),
            ElementRef::Index(i) => Err(QerrError::Range {
                what: "element index",
                value: *i,
                max: table.order() - 1,
            }),
            ElementRef::Name(s) => table.resolve_gate(s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorModelKind {
    Independent,
    GateConditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<ElementRef>,
    pub lambda: ElementRef,
    pub prob: f64,
}

/// On-disk error model: `{ kind, entries: [{gate?, lambda, prob}] }`.
///
/// For gate-conditional models, entries without a gate form the default
/// distribution used for gates that have no entries of their own; if there are
/// none, unlisted gates are error free. A gate whose listed error
/// probabilities do not include the identity gets the remaining mass on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelFile {
    pub kind: ErrorModelKind,
    pub entries: Vec<ErrorEntry>,
}

impl ErrorModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| QerrError::parse(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn resolve(&self, table: &GroupTable) -> Result<ErrorModel> {
        let mut default = Vec::new();
        let mut per_gate: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for e in &self.entries {
            let lambda = e.lambda.resolve(table)?;
            match (&e.gate, self.kind) {
                (None, _) => default.push((lambda, e.prob)),
                (Some(_), ErrorModelKind::Independent) => {
                    return Err(QerrError::validation(
                        "independent error model entries must not name a gate",
                    ))
                }
                (Some(g), ErrorModelKind::GateConditional) => per_gate
                    .entry(g.resolve(table)?)
                    .or_default()
                    .push((lambda, e.prob)),
            }
        }
        let close = |mut v: Vec<(usize, f64)>| -> Result<Categorical> {
            if !v.iter().any(|&(l, _)| l == 0) {
                let rest: f64 = v.iter().map(|e| e.1).sum();
                v.push((0, 1.0 - rest));
            }
            Categorical::new(v)
        };
        match self.kind {
            ErrorModelKind::Independent => Ok(ErrorModel::Independent(close(default)?)),
            ErrorModelKind::GateConditional => Ok(ErrorModel::GateConditional {
                per_gate: per_gate
                    .into_iter()
                    .map(|(g, v)| Ok((g, close(v)?)))
                    .collect::<Result<_>>()?,
                default: close(default)?,
            }),
        }
    }
}

/// A gate sequence `U_1 ... U_tau` as element indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    pub gates: Vec<usize>,
}

impl Circuit {
    pub fn new(gates: Vec<usize>) -> Self {
        Circuit { gates }
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// One gate per line (`H 0`, `CNOT 0 1`, `elem 7`, `X`); `#` starts a
    /// comment. A line `repeat <k>` repeats everything above it `k` times.
    pub fn parse(text: &str, table: &GroupTable) -> Result<Self> {
        let mut out = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(k) = line.strip_prefix("repeat ") {
                let k: usize = k
                    .trim()
                    .parse()
                    .map_err(|_| QerrError::parse_at(no + 1, format!("bad repeat count `{k}`")))?;
                out = out.repeat(k);
                continue;
            }
            let g = table
                .resolve_gate(line)
                .map_err(|e| QerrError::parse_at(no + 1, e.to_string()))?;
            out.push(g);
        }
        Ok(Circuit { gates: out })
    }

    pub fn load(path: &Path, table: &GroupTable) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, table)
    }

    /// Writes the circuit back in the file format, one `elem <i>` line per
    /// gate with a readable name where one is known.
    pub fn to_text(&self, table: &GroupTable) -> String {
        let names = known_names(table);
        let mut s = String::new();
        for &g in &self.gates {
            match names.get(&g) {
                Some(name) => s.push_str(name),
                None => s.push_str(&format!("elem {g}")),
            }
            s.push('\n');
        }
        s
    }
}

/// Readable names for common gates of `table`, keyed by element index.
pub fn known_names(table: &GroupTable) -> BTreeMap<usize, String> {
    let n = table.qubits();
    let mut out = BTreeMap::new();
    let mut add = |name: String| {
        if let Ok(i) = table.resolve_gate(&name) {
            out.entry(i).or_insert(name);
        }
    };
    add("I".into());
    for q in 0..n {
        for g in ["X", "Y", "Z", "H", "S", "Sdg"] {
            add(if n == 1 {
                g.to_string()
            } else {
                format!("{g} {q}")
            });
        }
    }
    for a in 0..n {
        for b in 0..n {
            if a != b {
                add(format!("CNOT {a} {b}"));
            }
        }
    }
    if n > 1 {
        for k in 1..(1usize << (2 * n)) {
            add(pauli_label(k, n));
        }
    }
    out
}

/// Expands a gate-name list like `I,X,Y,Z,H,CNOT` to element indices. On more
/// than one qubit, single-qubit names apply to every qubit and `CNOT` to every
/// ordered qubit pair.
pub fn gate_subset(spec: &str, table: &GroupTable) -> Result<Vec<usize>> {
    let n = table.qubits();
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let upper = name.to_ascii_uppercase();
        if upper == "I" {
            out.push(0);
        } else if n > 1 && gates::single(name).is_some() {
            for q in 0..n {
                out.push(table.resolve_gate(&format!("{name} {q}"))?);
            }
        } else if n > 1 && (upper == "CNOT" || upper == "CZ") {
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        out.push(table.resolve_gate(&format!("{upper} {a} {b}"))?);
                    }
                }
            }
        } else {
            out.push(table.resolve_gate(name)?);
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(QerrError::validation("empty gate subset"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{generate_clifford_group, generate_pauli_group};

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new([(0, 0.5), (1, 0.5)]).is_ok());
        assert!(Categorical::new([(0, 0.5), (1, 0.4)]).is_err());
        assert!(Categorical::new([(0, 1.5), (1, -0.5)]).is_err());
        let c = Categorical::new([(2, 0.25), (0, 0.5), (2, 0.25)]).unwrap();
        assert_eq!(c.entries(), &[(0, 0.5), (2, 0.5)]);
        assert_eq!(c.prob(1), 0.0);
        assert_eq!(c.sample_with(0.49), 0);
        assert_eq!(c.sample_with(0.51), 2);
    }

    #[test]
    fn pauli_channel_shorthand() {
        let p1 = generate_pauli_group(1).unwrap();
        let m = ErrorModel::parse("pauli-channel:0.03", &p1).unwrap();
        let z = m.for_gate(0);
        assert!((z.prob(0) - 0.97).abs() < 1e-15);
        for name in ["X", "Y", "Z"] {
            assert!((z.prob(p1.resolve_gate(name).unwrap()) - 0.01).abs() < 1e-15);
        }
        assert_eq!(m, ErrorModel::parse("pauli-channel 0.03", &p1).unwrap());
    }

    #[test]
    fn clifford_channel_shorthand() {
        let c1 = generate_clifford_group(1).unwrap();
        let m = ErrorModel::parse("clifford-channel:0.23", &c1).unwrap();
        let z = m.for_gate(5);
        assert_eq!(z.entries().len(), 24);
        assert!((z.prob(3) - 0.01).abs() < 1e-15);
        let p1 = generate_pauli_group(1).unwrap();
        assert!(ErrorModel::parse("clifford-channel:0.1", &p1).is_err());
    }

    #[test]
    fn pauli_product_marginals() {
        let p2 = generate_pauli_group(2).unwrap();
        let m = ErrorModel::parse(
            "pauli-product:0.990,0.006,0.003,0.001;0.980,0.002,0.014,0.004",
            &p2,
        )
        .unwrap();
        let z = m.for_gate(0);
        let xy = p2.resolve_gate("XY").unwrap();
        assert!((z.prob(xy) - 0.006 * 0.014).abs() < 1e-15);
        let iz = p2.resolve_gate("IZ").unwrap();
        assert!((z.prob(iz) - 0.990 * 0.004).abs() < 1e-15);
    }

    #[test]
    fn error_model_file_json_and_toml() {
        let c1 = generate_clifford_group(1).unwrap();
        let json = r#"{"kind":"gate-conditional","entries":[
            {"gate":"H","lambda":"X","prob":0.1},
            {"gate":"H","lambda":"I","prob":0.9},
            {"lambda":"Z","prob":0.01}]}"#;
        let f: ErrorModelFile = serde_json::from_str(json).unwrap();
        let m = f.resolve(&c1).unwrap();
        let h = c1.resolve_gate("H").unwrap();
        let x = c1.resolve_gate("X").unwrap();
        assert!((m.for_gate(h).prob(x) - 0.1).abs() < 1e-15);
        assert!((m.for_gate(x).prob(0) - 0.99).abs() < 1e-15);

        let toml_text = "kind = \"independent\"\n[[entries]]\nlambda = \"Z\"\nprob = 0.25\n";
        let f: ErrorModelFile = toml::from_str(toml_text).unwrap();
        let m = f.resolve(&c1).unwrap();
        assert!((m.for_gate(3).prob(0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn circuit_parsing() {
        let c2 = generate_clifford_group(2).unwrap();
        let text = "# demo\nH 0\nCNOT 0 1  # entangle\n\nelem 5\nrepeat 2\n";
        let c = Circuit::parse(text, &c2).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c.gates[3], c.gates[0]);
        assert_eq!(c.gates[2], 5);
        let err = Circuit::parse("H 0\nFOO 1\n", &c2).unwrap_err();
        assert!(matches!(err, QerrError::Parse { line: Some(2), .. }));
        let back = Circuit::parse(&c.to_text(&c2), &c2).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn gate_subset_expansion() {
        let c2 = generate_clifford_group(2).unwrap();
        let a = gate_subset("I,X,Y,Z,H,CNOT", &c2).unwrap();
        assert_eq!(a.len(), 11);
        let c1 = generate_clifford_group(1).unwrap();
        assert_eq!(gate_subset("I,X,Y,Z,H", &c1).unwrap().len(), 5);
    }
}
