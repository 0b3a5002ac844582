//! Command-line front end: `validate`, `cell`, `macro`, `micro` and `study`.

use crate::cell_solver::{solve_auxiliary_problems, AuxiliarySolutions, SampledCoefficient};
use crate::geometry::inverse_epsilon;
use crate::harness::{run_study, AuxiliarySummary, HarnessError, StudyOptions};
use crate::macro_solver::solve_macro;
use crate::micro_solver::solve_micro;
use crate::scenario::{parse_unchecked, validation_report, Scenario};
use crate::timestep::{default_dt, TimeGrid};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_RATE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "thinlayer", version, about = "Homogenized thin-layer reaction-diffusion: cell problems, solvers and error studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario against the model assumptions.
    Validate(Common),
    /// Solve the cell and boundary-layer problems.
    Cell(CellArgs),
    /// Solve the limit problem.
    Macro(MacroArgs),
    /// Solve the microscopic problem for one epsilon.
    Micro(MicroArgs),
    /// Run an epsilon sweep and fit convergence rates.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file.
    pub scenario: PathBuf,
    /// Output directory (default: `out` next to the scenario file).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CellArgs {
    #[command(flatten)]
    pub common: Common,
    /// Intervals per cell period.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Truncation length of the boundary-layer stripes.
    #[arg(long)]
    pub stripe_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MacroArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid intervals per unit length.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Cell resolution used for the effective coefficient.
    #[arg(long)]
    pub cell_resolution: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of evenly spaced snapshots, including t = 0 and t = T.
    #[arg(long, default_value_t = 5)]
    pub snapshots: usize,
}

#[derive(Debug, Args)]
pub struct MicroArgs {
    #[command(flatten)]
    pub common: Common,
    /// Layer thickness parameter, as `1/8` or `0.125`.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// Intervals per period.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub snapshots: usize,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated epsilons, e.g. `1/4,1/8,1/16`.
    #[arg(long)]
    pub epsilons: Option<String>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub stripe_length: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Drop the smallest epsilon of the sweep.
    #[arg(long)]
    pub skip_finest: bool,
    /// Minimum first- and second-order rates, e.g. `0.4,0.8`.
    #[arg(long)]
    pub assert_rates: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn solver_err(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_SOLVER, e.to_string())
}

/// Parses `1/8` or `0.125` into the integer inverse.
pub fn parse_epsilon(s: &str) -> Result<u32, String> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| format!("invalid epsilon '{s}'"))?;
        let den: u64 = den.trim().parse().map_err(|_| format!("invalid epsilon '{s}'"))?;
        if num != 1 || den < 2 || den > u32::MAX as u64 {
            return Err(format!("epsilon '{s}' must be 1/k with an integer k >= 2"));
        }
        return Ok(den as u32);
    }
    let v: f64 = s.parse().map_err(|_| format!("invalid epsilon '{s}'"))?;
    inverse_epsilon(v).map_err(|e| e.to_string())
}

pub fn parse_epsilon_list(s: &str) -> Result<Vec<u32>, String> {
    s.split(',').map(parse_epsilon).collect()
}

fn parse_rates(s: &str) -> Result<(f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("invalid rate '{x}'")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(format!("expected two rates, got '{s}'")),
    }
}

struct Loaded {
    scenario: Scenario,
    digest: String,
    out: PathBuf,
}

fn load(common: &Common, check: bool) -> Result<Loaded, Failure> {
    let bytes = std::fs::read(&common.scenario).map_err(|e| io_err(&common.scenario, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::new(EXIT_INVALID, format!("{}: not valid UTF-8", common.scenario.display())))?;
    let scenario = parse_unchecked(&text)
        .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", common.scenario.display())))?;
    if check {
        let report = validation_report(&scenario);
        if !report.diagnostics.is_empty() {
            let lines: Vec<String> = report.diagnostics.iter().map(|d| d.to_string()).collect();
            return Err(Failure::new(EXIT_INVALID, lines.join("\n")));
        }
    }
    let out = common.out.clone().unwrap_or_else(|| {
        common.scenario.parent().map(|p| p.join("out")).unwrap_or_else(|| PathBuf::from("out"))
    });
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    Ok(Loaded { scenario, digest: hex::encode(Sha256::digest(&bytes)), out })
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    s.push('\n');
    write(path, &s)
}

/// Provenance record written by every subcommand.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub parameters: Value,
    pub version: String,
    pub stages: Vec<(String, f64)>,
    pub exit_code: i32,
}

struct Stages(Vec<(String, f64)>);

impl Stages {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let r = f();
        self.0.push((name.to_string(), t.elapsed().as_secs_f64()));
        r
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn auxiliary(s: &Scenario, resolution: usize, stripe_length: usize) -> Result<AuxiliarySolutions, Failure> {
    let coef = SampledCoefficient::from_layer(&s.d_m, resolution).map_err(solver_err)?;
    solve_auxiliary_problems(coef, s.d_plus_tensor(), s.d_minus_tensor(), stripe_length).map_err(solver_err)
}

fn cmd_validate(l: &Loaded) -> Result<Value, Failure> {
    let r = validation_report(&l.scenario);
    for d in &r.diagnostics {
        println!("{d}");
    }
    let summary = json!({
        "diagnostics": r.diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
        "d_m_min_eigenvalue": r.d_m_min_eigenvalue,
        "d_plus_min_eigenvalue": r.d_plus_min_eigenvalue,
        "d_minus_min_eigenvalue": r.d_minus_min_eigenvalue,
        "lipschitz_f_plus": r.lipschitz_f_plus,
        "lipschitz_f_minus": r.lipschitz_f_minus,
        "lipschitz_g_m": r.lipschitz_g_m,
        "trace_mismatch": r.trace_mismatch,
    });
    write_json(&l.out.join("validation.json"), &summary)?;
    if r.diagnostics.is_empty() {
        println!("scenario is valid");
        Ok(json!({}))
    } else {
        Err(Failure::new(EXIT_INVALID, format!("{} assumption violation(s)", r.diagnostics.len())))
    }
}

fn cmd_cell(a: &CellArgs, l: &Loaded, stages: &mut Stages) -> Result<Value, Failure> {
    let s = &l.scenario;
    let n = a.resolution.unwrap_or(s.study.resolution);
    let len = a.stripe_length.unwrap_or(s.study.stripe_length);
    let aux = stages.time("auxiliary", || auxiliary(s, n, len))?;
    let g = aux.coefficient.grid();
    let mut csv = String::from("y1,y2,w1,w2\n");
    for p in 0..g.node_count() {
        let (i, j) = (p % g.nx(), p / g.nx());
        let _ = writeln!(csv, "{},{},{},{}", fmt(g.x(i)), fmt(g.ys()[j]), fmt(aux.cells.cells[0].w[p]), fmt(aux.second.w[p]));
    }
    write(&l.out.join("cell.csv"), &csv)?;
    for bl in [&aux.layer_plus, &aux.layer_minus] {
        let g = &bl.grid;
        let mut csv = String::from("y1,y2,w\n");
        for p in 0..g.node_count() {
            let _ = writeln!(csv, "{},{},{}", fmt(g.x(p % g.nx())), fmt(g.ys()[p / g.nx()]), fmt(bl.w[p]));
        }
        write(&l.out.join(format!("boundary_layer_{}.csv", bl.orientation.label())), &csv)?;
    }
    let summary = AuxiliarySummary::new(&aux);
    println!("D* = {:.12}", summary.d_star);
    for d in &summary.diagnostics {
        println!("warning: {d}");
    }
    write_json(&l.out.join("cell.json"), &summary)?;
    Ok(json!({ "resolution": n, "stripe_length": len }))
}

fn snapshot_csv(grid: &crate::geometry::StructuredGrid, columns: &[(&str, &[f64])]) -> String {
    let mut csv = String::from("x1,x2");
    for (name, _) in columns {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for p in 0..grid.node_count() {
        let _ = write!(csv, "{},{}", fmt(grid.x(p % grid.nx())), fmt(grid.ys()[p / grid.nx()]));
        for (_, v) in columns {
            let _ = write!(csv, ",{}", fmt(v[p]));
        }
        csv.push('\n');
    }
    csv
}

fn cmd_macro(a: &MacroArgs, l: &Loaded, stages: &mut Stages) -> Result<Value, Failure> {
    let s = &l.scenario;
    let cell_n = a.cell_resolution.unwrap_or(s.study.resolution);
    let aux = stages.time("auxiliary", || auxiliary(s, cell_n, s.study.stripe_length))?;
    let dt = a.dt.or(s.dt).unwrap_or(1e-3);
    let time = TimeGrid::new(s.t_final, dt).map_err(solver_err)?;
    let snaps = time.even_snapshots(a.snapshots);
    let tr = stages.time("macro", || solve_macro(s, &aux.tensor, a.resolution, dt, &snaps)).map_err(solver_err)?;
    let dir = l.out.join("snapshots");
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (k, (c, d)) in tr.states.iter().zip(&tr.derivatives).enumerate() {
        write(&dir.join(format!("macro_{k:03}.csv")), &snapshot_csv(&tr.grid, &[("c", c), ("dc_dx1", d)]))?;
    }
    write_json(&l.out.join("macro.json"), &json!({ "summary": tr.summary, "times": tr.times }))?;
    println!("macro: {} steps, D* = {:.12}", tr.summary.steps, tr.summary.d_star);
    Ok(json!({ "resolution": a.resolution, "cell_resolution": cell_n, "dt": time.dt, "snapshots": snaps }))
}

fn cmd_micro(a: &MicroArgs, l: &Loaded, stages: &mut Stages) -> Result<Value, Failure> {
    let s = &l.scenario;
    let inv = match &a.epsilon {
        Some(e) => parse_epsilon(e).map_err(|m| Failure::new(EXIT_USAGE, m))?,
        None => s.geometry.inv_epsilon,
    };
    let n = a.resolution.unwrap_or(s.study.resolution);
    let dt = a.dt.or(s.dt).unwrap_or_else(|| default_dt(1.0 / inv as f64));
    let time = TimeGrid::new(s.t_final, dt).map_err(solver_err)?;
    let snaps = time.even_snapshots(a.snapshots);
    let tr = stages.time("micro", || solve_micro(s, inv, n, dt, &snaps)).map_err(solver_err)?;
    let dir = l.out.join("snapshots");
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (k, c) in tr.states.iter().enumerate() {
        write(&dir.join(format!("micro_eps{inv}_{k:03}.csv")), &snapshot_csv(&tr.grid, &[("c", c)]))?;
    }
    write_json(&l.out.join("micro.json"), &json!({ "summary": tr.summary, "times": tr.times }))?;
    println!("micro: eps = 1/{inv}, {} nodes, {} steps", tr.summary.nodes, tr.summary.steps);
    Ok(json!({ "inv_epsilon": inv, "resolution": n, "dt": time.dt, "snapshots": snaps }))
}

fn cmd_study(a: &StudyArgs, l: &Loaded, stages: &mut Stages) -> Result<Value, Failure> {
    let s = &l.scenario;
    let mut options = StudyOptions::from_scenario(s);
    if let Some(e) = &a.epsilons {
        options.inv_epsilons = parse_epsilon_list(e).map_err(|m| Failure::new(EXIT_USAGE, m))?;
    }
    options.inv_epsilons.sort_unstable();
    options.inv_epsilons.dedup();
    if a.skip_finest {
        options.inv_epsilons.pop();
    }
    if let Some(n) = a.resolution {
        options.resolution = n;
    }
    if let Some(len) = a.stripe_length {
        options.stripe_length = len;
    }
    if a.dt.is_some() {
        options.dt = a.dt;
    }
    let rates = a.assert_rates.as_deref().map(parse_rates).transpose().map_err(|m| Failure::new(EXIT_USAGE, m))?;
    let run = || run_study(s, &options);
    let report = stages
        .time("study", || match a.jobs {
            Some(j) => rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| HarnessError::InvalidStudy(e.to_string()))
                .and_then(|pool| pool.install(run)),
            None => run(),
        })
        .map_err(solver_err)?;
    write(&l.out.join("study.csv"), &report.to_csv())?;
    write_json(&l.out.join("study.json"), &report)?;
    for p in &report.points {
        match &p.report {
            Some(r) => println!(
                "eps = 1/{:<3} composite_1 = {:.6e} composite_2 = {:.6e}",
                p.inv_epsilon,
                r.first.composite,
                r.second.as_ref().map_or(f64::NAN, |s| s.composite)
            ),
            None => println!("eps = 1/{:<3} failed: {}", p.inv_epsilon, p.failure.as_deref().unwrap_or("")),
        }
    }
    let (p1, p2) = (report.rate_first.p(), report.rate_second.p());
    println!("rates: p1 = {}, p2 = {}", show_rate(p1), show_rate(p2));
    let params = json!({
        "inv_epsilons": options.inv_epsilons,
        "resolution": options.resolution,
        "stripe_length": options.stripe_length,
        "dt": report.time.dt,
        "assert_rates": rates,
    });
    if let Some((r1, r2)) = rates {
        let ok = p1.is_some_and(|p| p >= r1) && p2.is_some_and(|p| p >= r2);
        if !ok {
            return Err(Failure::new(
                EXIT_RATE,
                format!("rate assertion failed: p1 = {} (>= {r1}), p2 = {} (>= {r2})", show_rate(p1), show_rate(p2)),
            ));
        }
    }
    Ok(params)
}

fn show_rate(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"))
}

/// Runs one parsed command and returns its exit code.
pub fn execute(cli: Cli) -> i32 {
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Cell(a) => ("cell", &a.common),
        Command::Macro(a) => ("macro", &a.common),
        Command::Micro(a) => ("micro", &a.common),
        Command::Study(a) => ("study", &a.common),
    };
    let loaded = match load(common, !matches!(cli.command, Command::Validate(_))) {
        Ok(l) => l,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let mut stages = Stages(Vec::new());
    let result = match &cli.command {
        Command::Validate(_) => cmd_validate(&loaded),
        Command::Cell(a) => cmd_cell(a, &loaded, &mut stages),
        Command::Macro(a) => cmd_macro(a, &loaded, &mut stages),
        Command::Micro(a) => cmd_micro(a, &loaded, &mut stages),
        Command::Study(a) => cmd_study(a, &loaded, &mut stages),
    };
    let (code, parameters) = match result {
        Ok(p) => (0, p),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.code, json!({}))
        }
    };
    let manifest = RunManifest {
        command: name.to_string(),
        scenario: common.scenario.display().to_string(),
        scenario_digest: loaded.digest.clone(),
        parameters,
        version: env!("CARGO_PKG_VERSION").to_string(),
        stages: stages.0,
        exit_code: code,
    };
    if let Err(f) = write_json(&loaded.out.join("manifest.json"), &manifest) {
        eprintln!("error: {}", f.message);
        return if code == 0 { f.code } else { code };
    }
    code
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            code
        }
    }
}
