use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qerr_core::anneal::{
    anneal_restarts, AnnealConfig, AnnealTrace, Objective, ObjectiveKind, Schedule,
};
use qerr_core::chain::{ChainCurves, CoupledChain, FixedCircuitModel, HealthWarning};
use qerr_core::continuous::{
    continuous_curves, sphere_walk_oracle, KickModel, Mixture, Truncation,
};
use qerr_core::group::{clifford_order, GroupKind, GroupSpec, GroupTable};
use qerr_core::model::{gate_subset, Circuit, ErrorModel, GateDistribution};
use qerr_core::montecarlo::{binomial_se, simulate, z_score, SimConfig, SimMode};
use qerr_core::states::{reachable_states, NormOrder, PureState};
use qerr_core::Execution;
use serde::Deserialize;

use crate::args::{self, Command, Format, Global, ScheduleArg, SimModeArg, StateArgs};
use crate::config::Layer;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

/// Numerical-health messages gathered while running a command.
#[derive(Debug, Default)]
pub struct Report {
    pub warnings: Vec<String>,
}

impl Report {
    fn health(&mut self, h: &[HealthWarning]) {
        for w in h {
            let msg = format!("{}: {:e}", w.what, w.value);
            if !self.warnings.contains(&msg) {
                self.warnings.push(msg);
            }
        }
    }
}

pub fn run(global: &Global, command: Command) -> CliResult<Report> {
    let section = match &command {
        Command::AnalyzeRandom(_) => "analyze-random",
        Command::AnalyzeFixed(_) => "analyze-fixed",
        Command::Simulate(_) => "simulate",
        Command::Continuous(_) => "continuous",
        Command::Anneal(_) => "anneal",
        Command::Reachable(_) => "reachable",
        Command::GroupInfo(_) => "group-info",
        Command::Compare(_) => "compare",
    };
    let layer = Layer::load(global.config.as_deref(), section)?;
    let out = Output {
        path: layer.opt(global.output.clone(), "output")?,
        format: layer.pick(global.format, "format", Format::Csv)?,
        gnuplot: global.gnuplot || layer.pick(None, "gnuplot", false)?,
    };
    let strict = global.strict || layer.pick(None, "strict", false)?;
    match command {
        Command::AnalyzeRandom(a) => analyze_random(a, &layer, &out),
        Command::AnalyzeFixed(a) => analyze_fixed(a, &layer, &out),
        Command::Simulate(a) => simulate_cmd(a, &layer, &out, strict),
        Command::Continuous(a) => continuous(a, &layer, &out, strict),
        Command::Anneal(a) => anneal(a, &layer, &out, strict),
        Command::Reachable(a) => reachable(a),
        Command::GroupInfo(a) => group_info(a),
        Command::Compare(a) => compare(a, &out),
    }
}

struct Output {
    path: Option<PathBuf>,
    format: Format,
    gnuplot: bool,
}

impl Output {
    fn emit(&self, table: &Table, x: &str) -> CliResult<()> {
        table.emit(self.path.as_deref(), self.format)?;
        if self.gnuplot {
            let Some(path) = &self.path else {
                return Err(CliError::config("--gnuplot needs --output"));
            };
            let mut script = path.clone().into_os_string();
            script.push(".gp");
            std::fs::write(script, table.gnuplot(path, x))?;
        }
        Ok(())
    }
}

pub fn build_group(name: &str) -> CliResult<GroupTable> {
    Ok(GroupSpec::parse(name)?.build()?)
}

fn parse_state(s: &str) -> CliResult<PureState> {
    Ok(s.parse::<PureState>()?)
}

fn require_seed(strict: bool, seed: Option<u64>) -> CliResult<u64> {
    match seed {
        Some(s) => Ok(s),
        None if strict => Err(CliError::config("--seed is required with --strict")),
        None => Ok(0),
    }
}

struct Setup {
    table: GroupTable,
    psi0: PureState,
    big_psi0: PureState,
    err: ErrorModel,
    norm: NormOrder,
    deltas: Vec<f64>,
}

fn setup(common: StateArgs, layer: &Layer, default_group: &str) -> CliResult<Setup> {
    let group = layer.pick(common.group, "group", default_group.to_string())?;
    let table = build_group(&group)?;
    let psi0 = match layer.opt(common.state, "state")? {
        Some(s) => parse_state(&s)?,
        None => PureState::basis(table.qubits(), 0),
    };
    let big_psi0 = match layer.opt(common.faulty_state, "faulty-state")? {
        Some(s) => parse_state(&s)?,
        None => psi0.clone(),
    };
    for (what, s) in [("state", &psi0), ("faulty state", &big_psi0)] {
        if s.dim() != table.dim() {
            return Err(CliError::config(format!(
                "{what} has dimension {}, group {} acts on dimension {}",
                s.dim(),
                table.name(),
                table.dim()
            )));
        }
    }
    let err_spec = layer.pick(common.error, "error", "none".to_string())?;
    let err = ErrorModel::parse(&err_spec, &table)?;
    let norm: NormOrder = layer
        .text(common.p, "p")?
        .unwrap_or_else(|| "1".into())
        .parse()?;
    let mut deltas = layer.floats(common.delta, "delta", &[0.1])?;
    for &d in &deltas {
        let max = if norm == NormOrder::TRACE { 1.0 } else { 2.0 };
        if !(0.0..=max).contains(&d) {
            return Err(CliError::config(format!("delta {d} is outside [0, {max}]")));
        }
    }
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    Ok(Setup {
        table,
        psi0,
        big_psi0,
        err,
        norm,
        deltas,
    })
}

fn load_circuit(path: Option<PathBuf>, table: &GroupTable) -> CliResult<Circuit> {
    let path = path.ok_or_else(|| CliError::config("--circuit is required"))?;
    Circuit::load(&path, table).map_err(|e| match e {
        qerr_core::QerrError::Io(io) => CliError::config(format!("{}: {io}", path.display())),
        other => CliError::config(format!("{}: {other}", path.display())),
    })
}

fn curve_table(curves: &[ChainCurves], with_bound: bool) -> Table {
    let multi = curves.len() > 1;
    let mut headers = vec!["t", "p_error", "p_max_error", "e_dist"];
    if with_bound {
        headers.push("lemma2_bound");
    }
    if multi {
        headers.insert(0, "delta");
    }
    let mut table = Table::new(&headers);
    for c in curves {
        for t in 0..c.p_error.len() {
            let mut row: Vec<Cell> = Vec::with_capacity(headers.len());
            if multi {
                row.push(c.delta.into());
            }
            row.extend([
                t.into(),
                c.p_error[t].into(),
                c.p_max_error[t].into(),
                c.e_dist[t].into(),
            ]);
            if with_bound {
                row.push(c.hitting_bound.get(t).copied().into());
            }
            table.push(row);
        }
    }
    table
}

fn analyze_random(a: args::AnalyzeRandom, layer: &Layer, out: &Output) -> CliResult<Report> {
    let s = setup(a.common, layer, "clifford:1")?;
    let tau = layer.pick(a.tau, "tau", 100usize)?;
    let kappa =
        GateDistribution::parse(&layer.pick(a.kappa, "kappa", "uniform".into())?, &s.table)?;
    let gamma: Option<f64> = layer.opt(a.gamma, "gamma")?;
    let chain = CoupledChain::build(&s.table, &s.psi0, &s.big_psi0, &kappa, &s.err, s.norm)?;
    let mut report = Report::default();
    report.health(chain.health());
    let mut curves = Vec::new();
    for &delta in &s.deltas {
        let c = chain.curves(delta, tau)?;
        report.health(&c.health);
        if let Some(gamma) = gamma {
            let ts = chain.max_tolerable_gates(&chain.bad_set(delta), gamma, tau)?;
            let shown = if ts.t_star == tau as i64 && gamma < 1.0 {
                format!(">= {tau} (horizon)")
            } else {
                ts.t_star.to_string()
            };
            eprintln!(
                "delta {delta}: t* = {shown}, E[T] = {}, upper bound {}",
                ts.expected_hitting_time, ts.upper_bound
            );
        }
        curves.push(c);
    }
    out.emit(&curve_table(&curves, true), "t")?;
    Ok(report)
}

fn analyze_fixed(a: args::AnalyzeFixed, layer: &Layer, out: &Output) -> CliResult<Report> {
    let s = setup(a.common, layer, "clifford:1")?;
    let circuit = load_circuit(layer.opt(a.circuit, "circuit")?, &s.table)?;
    let model = FixedCircuitModel::new(&s.table, &s.psi0, &s.big_psi0, s.err, s.norm)?;
    let chain = model.chain(&circuit)?;
    let mut report = Report::default();
    let curves: Vec<ChainCurves> = s.deltas.iter().map(|&d| chain.curves(d)).collect();
    for c in &curves {
        report.health(&c.health);
    }
    out.emit(&curve_table(&curves, false), "t")?;
    Ok(report)
}

fn simulate_cmd(a: args::Simulate, layer: &Layer, out: &Output, strict: bool) -> CliResult<Report> {
    let s = setup(a.common, layer, "clifford:1")?;
    let mode = match layer.pick(a.mode, "mode", SimModeArg::Random)? {
        SimModeArg::Random => SimMode::RandomCircuit,
        SimModeArg::Rb => SimMode::RandomizedBenchmarking,
        SimModeArg::Fixed => {
            SimMode::FixedCircuit(load_circuit(layer.opt(a.circuit, "circuit")?, &s.table)?)
        }
    };
    let cfg = SimConfig {
        mode,
        kappa: GateDistribution::parse(&layer.pick(a.kappa, "kappa", "uniform".into())?, &s.table)?,
        err: s.err,
        psi0: s.psi0,
        big_psi0: s.big_psi0,
        horizon: layer.pick(a.tau, "tau", 100usize)?,
        deltas: s.deltas,
        norm: s.norm,
        runs: layer.pick(a.runs, "runs", 1000usize)?,
        seed: require_seed(strict, layer.opt(a.seed, "seed")?)?,
        exec: Execution::default(),
    };
    let r = simulate(&s.table, &cfg)?;
    let multi = r.deltas.len() > 1;
    let mut headers = vec![
        "t",
        "p_error",
        "p_error_se",
        "p_max_error",
        "p_max_error_se",
        "e_dist",
        "e_dist_se",
        "runs",
    ];
    if multi {
        headers.insert(0, "delta");
    }
    let mut table = Table::new(&headers);
    for (k, &delta) in r.deltas.iter().enumerate() {
        for t in 0..=r.horizon() {
            let mut row: Vec<Cell> = Vec::new();
            if multi {
                row.push(delta.into());
            }
            row.extend([
                t.into(),
                r.p_error[k][t].into(),
                r.p_error_se[k][t].into(),
                r.p_max_error[k][t].into(),
                r.p_max_error_se[k][t].into(),
                r.mean_dist[t].into(),
                r.mean_dist_se[t].into(),
                r.runs.into(),
            ]);
            table.push(row);
        }
    }
    out.emit(&table, "t")?;
    Ok(Report::default())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MixtureFile {
    Homogeneous(Vec<(f64, f64)>),
    PerStep { per_step: Vec<Vec<(f64, f64)>> },
}

fn load_kicks(path: &Path) -> CliResult<KickModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let file: MixtureFile = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(match file {
        MixtureFile::Homogeneous(c) => KickModel::Homogeneous(Mixture::new(c)?),
        MixtureFile::PerStep { per_step } => KickModel::PerStep(
            per_step
                .into_iter()
                .map(Mixture::new)
                .collect::<qerr_core::Result<_>>()?,
        ),
    })
}

fn continuous(a: args::Continuous, layer: &Layer, out: &Output, strict: bool) -> CliResult<Report> {
    let kicks = match (
        layer.opt(a.alpha, "alpha")?,
        layer.opt(a.mixture_file, "mixture-file")?,
    ) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("give either --alpha or --mixture-file"))
        }
        (None, Some(p)) => load_kicks(&p)?,
        (Some(alpha), None) => KickModel::fixed(alpha)?,
        (None, None) => KickModel::fixed(0.1)?,
    };
    let q = layer.pick(a.q, "q", 0.0)?;
    let t_max = layer.pick(a.t_max, "t-max", 200usize)?;
    let delta = layer.pick(a.delta, "delta", 0.1)?;
    let trunc = match layer.text(a.truncation, "truncation")?.as_deref() {
        None | Some("adaptive") => Truncation::default(),
        Some(n) => Truncation::Fixed(n.parse().map_err(|_| {
            CliError::config(format!("truncation `{n}` is not `adaptive` or a count"))
        })?),
    };
    let runs = layer.pick(a.runs, "runs", 0usize)?;
    let curves = continuous_curves(q, t_max, delta, &kicks, trunc)?;
    let mut report = Report::default();
    if !curves.converged {
        report.warnings.push(format!(
            "Legendre series did not reach tolerance within {} terms",
            curves.max_terms
        ));
    }
    let walk = if runs > 0 {
        let seed = require_seed(strict, layer.opt(a.seed, "seed")?)?;
        Some(sphere_walk_oracle(
            q,
            t_max,
            &kicks,
            &[delta],
            runs,
            seed,
            Execution::default(),
        )?)
    } else {
        None
    };
    let mut table = Table::new(&[
        "t",
        "e_dt_analytic",
        "e_dt_mc",
        "cdf_analytic",
        "cdf_mc",
        "max_lb",
    ]);
    for t in 0..=t_max {
        table.push(vec![
            t.into(),
            curves.e_dt[t].into(),
            walk.as_ref().map(|w| w.mean[t]).into(),
            curves.cdf[t].into(),
            walk.as_ref().map(|w| w.cdf[0][t]).into(),
            curves.max_lb[t].into(),
        ]);
    }
    out.emit(&table, "t")?;
    Ok(report)
}

fn anneal(a: args::Anneal, layer: &Layer, out: &Output, strict: bool) -> CliResult<Report> {
    let s = setup(a.common, layer, "clifford:1")?;
    let circuit = load_circuit(layer.opt(a.circuit, "circuit")?, &s.table)?;
    let kind: ObjectiveKind = layer
        .pick(a.objective, "objective", "p-max-error".into())?
        .parse()?;
    let delta = match s.deltas.as_slice() {
        [d] => *d,
        _ => return Err(CliError::config("anneal takes a single --delta")),
    };
    let schedule = match layer.pick(a.schedule, "schedule", ScheduleArg::CLog)? {
        ScheduleArg::CLog => Schedule::CLog {
            c: layer.pick(a.c, "c", 0.004)?,
        },
        ScheduleArg::Guaranteed => Schedule::Guaranteed {
            m: layer
                .opt(a.m, "m")?
                .ok_or_else(|| CliError::config("--schedule guaranteed needs --m"))?,
        },
        ScheduleArg::Constant => Schedule::Constant {
            t: layer
                .opt(a.temperature, "temperature")?
                .ok_or_else(|| CliError::config("--schedule constant needs --temperature"))?,
        },
    };
    let subset = layer
        .opt(a.gate_subset, "gate-subset")?
        .map(|spec| gate_subset(&spec, &s.table))
        .transpose()?;
    let cfg = AnnealConfig {
        iterations: layer.pick(a.iterations, "iterations", 2000usize)?,
        schedule,
        seed: require_seed(strict, layer.opt(a.seed, "seed")?)?,
        subset,
    };
    let restarts = layer.pick(a.restarts, "restarts", 1usize)?;
    let model = FixedCircuitModel::new(&s.table, &s.psi0, &s.big_psi0, s.err, s.norm)?;
    let objective = Objective::new(&model, kind, delta)?;
    let (best, traces) =
        anneal_restarts(&circuit, &objective, &cfg, restarts, Execution::default())?;

    let mut report = Report::default();
    let multi = traces.len() > 1;
    let mut headers = vec!["eta", "u_current", "u_best", "temperature", "accepted"];
    if multi {
        headers.insert(0, "restart");
    }
    let mut table = Table::new(&headers);
    for (r, trace) in traces.iter().enumerate() {
        for w in &trace.warnings {
            eprintln!("warning: restart {r}: {w}");
        }
        if let Some(reason) = &trace.aborted {
            report
                .warnings
                .push(format!("restart {r} aborted at {reason}"));
        }
        for row in &trace.rows {
            let mut cells: Vec<Cell> = Vec::new();
            if multi {
                cells.push(r.into());
            }
            cells.extend([
                row.eta.into(),
                row.u_current.into(),
                row.u_best.into(),
                row.temperature.into(),
                row.accepted.into(),
            ]);
            table.push(cells);
        }
    }
    out.emit(&table, "eta")?;
    let best_trace: &AnnealTrace = traces
        .iter()
        .find(|t| t.best == best)
        .expect("best circuit comes from a trace");
    eprintln!(
        "initial {}, best {}, accepted {:.3}",
        best_trace.initial_value,
        best_trace.best_value,
        best_trace.accepted_fraction()
    );
    if let Some(path) = layer.opt(a.best_circuit, "best-circuit")? {
        std::fs::write(path, best.to_text(&s.table))?;
    }
    Ok(report)
}

fn reachable(a: args::Reachable) -> CliResult<Report> {
    let table = build_group(&a.group)?;
    let psi = match &a.state {
        Some(s) => parse_state(s)?,
        None => PureState::basis(table.qubits(), 0),
    };
    let set = reachable_states(&table, &psi)?;
    println!("{}", set.len());
    if a.list {
        for i in 0..set.len() {
            println!("{}", set.ket(i));
        }
    }
    Ok(Report::default())
}

fn group_info(a: args::GroupInfo) -> CliResult<Report> {
    let table = build_group(&a.group)?;
    println!("group {}", table.name());
    println!("qubits {}", table.qubits());
    println!("order {}", table.order());
    if table.kind() == GroupKind::Clifford {
        println!("formula {}", clifford_order(table.qubits() as u32));
    }
    let names: Vec<&str> = table.generators().iter().map(|g| g.name.as_str()).collect();
    println!("generators {}", names.join(", "));
    if let Some(path) = a.export {
        std::fs::write(path, serde_json::to_string(&table.to_json())?)?;
    }
    Ok(Report::default())
}

/// Columns of a CSV file by header.
struct Columns {
    headers: Vec<String>,
    data: BTreeMap<String, Vec<String>>,
    rows: usize,
}

impl Columns {
    fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut data: BTreeMap<String, Vec<String>> =
            headers.iter().map(|h| (h.clone(), Vec::new())).collect();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            for (h, v) in headers.iter().zip(rec.iter()) {
                data.get_mut(h).expect("header").push(v.to_string());
            }
            rows += 1;
        }
        Ok(Columns {
            headers,
            data,
            rows,
        })
    }

    fn has(&self, name: &str) -> bool {
        self.data.contains_key(name)
    }

    fn floats(&self, name: &str) -> CliResult<Vec<f64>> {
        self.data[name]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| CliError::config(format!("column {name}: `{v}` is not a number")))
            })
            .collect()
    }
}

fn compare(a: args::Compare, out: &Output) -> CliResult<Report> {
    let x = Columns::read(&a.analytic)?;
    let y = Columns::read(&a.empirical)?;
    if x.rows != y.rows {
        return Err(CliError::config(format!(
            "grid mismatch: {} rows vs {} rows",
            x.rows, y.rows
        )));
    }
    for key in ["delta", "t"] {
        if x.has(key) != y.has(key) {
            return Err(CliError::config(format!(
                "grid mismatch: only one file has `{key}`"
            )));
        }
        if x.has(key) && x.floats(key)? != y.floats(key)? {
            return Err(CliError::config(format!("grid mismatch in column `{key}`")));
        }
    }
    if !x.has("t") {
        return Err(CliError::config("files have no `t` column"));
    }
    let runs = match a.runs {
        Some(r) => Some(r),
        None if y.has("runs") => y.floats("runs")?.first().map(|&r| r as usize),
        None => None,
    };
    let compared: Vec<&str> = ["p_error", "p_max_error", "e_dist"]
        .into_iter()
        .filter(|c| x.has(c) && y.has(c))
        .collect();
    if compared.is_empty() {
        return Err(CliError::config(format!(
            "no common value columns (analytic has {:?}, empirical has {:?})",
            x.headers, y.headers
        )));
    }
    let t = x.floats("t")?;
    let delta = if x.has("delta") {
        Some(x.floats("delta")?)
    } else {
        None
    };
    let mut table = Table::new(&[
        "delta",
        "t",
        "column",
        "analytic",
        "empirical",
        "se",
        "z",
        "within",
    ]);
    let (mut points, mut within, mut max_z) = (0usize, 0usize, 0f64);
    for col in &compared {
        let av = x.floats(col)?;
        let ev = y.floats(col)?;
        let se: Vec<f64> = if col.starts_with("p_") {
            av.iter()
                .map(|&p| runs.map_or(0.0, |n| binomial_se(p, n)))
                .collect()
        } else {
            let se_col = format!("{col}_se");
            if y.has(&se_col) {
                y.floats(&se_col)?
            } else {
                vec![0.0; av.len()]
            }
        };
        for i in 0..av.len() {
            let z = z_score(ev[i] - av[i], se[i]);
            let ok = z <= a.z;
            points += 1;
            within += ok as usize;
            max_z = max_z.max(z);
            table.push(vec![
                delta.as_ref().map(|d| d[i]).into(),
                t[i].into(),
                Cell::Text(col.to_string()),
                av[i].into(),
                ev[i].into(),
                se[i].into(),
                z.into(),
                ok.into(),
            ]);
        }
    }
    if out.path.is_some() {
        out.emit(&table, "t")?;
    }
    let fraction = within as f64 / points as f64;
    let summary = format!(
        "points {points} within {within} fraction {fraction:.4} max_abs_z {max_z:.3} columns {}",
        compared.join(",")
    );
    println!("{summary}");
    if fraction < a.min_fraction {
        return Err(CliError::Mismatch(format!(
            "agreement {fraction:.4} is below {}",
            a.min_fraction
        )));
    }
    Ok(Report::default())
}
