//! Command-line front end. Every command parses arguments, calls the library
//! and writes its results; exit codes are 0 (certified or success), 2
//! (solved but not certified) and 1 (error).

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::certify::{certify_estimate, metrics, solve, CertificateCheck, InitMethod, SolveConfig, SolveOutcome};
use crate::error::{Error, Result};
use crate::netsim::{run_distributed, transcript_jsonl, MessageAudit, TranscriptEntry};
use crate::posegraph::{read_g2o_file, read_vertices_file, simulate_grid, write_g2o, write_vertices, InfoReduction, Pose, PoseGraph, SimulationParams};
use crate::rbcd::{IterationLog, Restart, Selection, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCERTIFIED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dpgo", version, about = "Distributed pose-graph optimization with optimality certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a pose graph and certify the result.
    Solve(SolveArgs),
    /// Re-run the solve recorded in a manifest.
    Replay(ReplayArgs),
    /// Check global optimality of a given estimate.
    Certify(CertifyArgs),
    /// Rotation and translation errors between two estimates.
    Metrics(MetricsArgs),
    /// Write a simulated multi-robot dataset as g2o.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Central,
    Distributed,
}

#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// g2o dataset.
    #[arg(long, conflicts_with = "simulate")]
    pub input: Option<PathBuf>,
    /// Simulation preset (grid9, grid4, plane9) or a TOML file of simulation parameters.
    #[arg(long)]
    pub simulate: Option<String>,
    /// Number of robots; g2o poses are split into contiguous ranges.
    #[arg(long)]
    pub robots: Option<usize>,
    /// Simulation seed; defaults to --seed.
    #[arg(long)]
    pub sim_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "mean-diagonal")]
    pub info_reduction: InfoArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InfoArg {
    MeanDiagonal,
    CovarianceTrace,
}

impl From<InfoArg> for InfoReduction {
    fn from(a: InfoArg) -> Self {
        match a {
            InfoArg::MeanDiagonal => InfoReduction::MeanDiagonal,
            InfoArg::CovarianceTrace => InfoReduction::CovarianceTrace,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    SpanningTree,
    Chordal,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Uniform,
    Importance,
    Greedy,
}

/// Solver settings; unset flags keep the values of `--config` (or the defaults).
#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    /// TOML solver configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub rank_init: Option<usize>,
    #[arg(long)]
    pub rank_max: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// adaptive, adaptive:C1, fixed:N or none.
    #[arg(long, value_parser = parse_restart)]
    pub restart: Option<Restart>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub eig_tol: Option<f64>,
    /// Momentum factor of the accelerated eigensolver.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Plain block-coordinate descent instead of the accelerated variant.
    #[arg(long)]
    pub no_acceleration: bool,
    /// Update one robot per iteration instead of one color.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "central")]
    pub mode: Mode,
    /// Structured JSON report.
    #[arg(long, default_value = "dpgo-report.json")]
    pub report: PathBuf,
    #[arg(long, default_value = "dpgo-manifest.json")]
    pub manifest: PathBuf,
    /// CSV iteration log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Rounded poses as g2o vertices.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// JSON message audit (distributed mode).
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// JSONL message transcript (distributed mode).
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value = "dpgo-report.json")]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    /// g2o dataset holding the measurements.
    #[arg(long)]
    pub graph: PathBuf,
    /// g2o vertices to certify; defaults to the vertices of --graph.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mean-diagonal")]
    pub info_reduction: InfoArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// JSON certificate record.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// g2o vertices of the estimate.
    pub estimate: PathBuf,
    /// g2o vertices of the reference.
    pub reference: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Preset (grid9, grid4, plane9) or TOML file of simulation parameters.
    #[arg(long, default_value = "grid9")]
    pub preset: String,
    #[arg(long)]
    pub robots: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noisy measurements with the ground-truth vertices.
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth vertices only.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

pub fn parse_restart(s: &str) -> std::result::Result<Restart, String> {
    let default_c1 = match SolverConfig::default().restart {
        Restart::Adaptive { c1 } => c1,
        _ => 1e-4,
    };
    match s.split_once(':') {
        None if s == "adaptive" => Ok(Restart::Adaptive { c1: default_c1 }),
        None if s == "none" => Ok(Restart::None),
        Some(("adaptive", c)) => c.parse().map(|c1| Restart::Adaptive { c1 }).map_err(|e| format!("bad c1 '{c}': {e}")),
        Some(("fixed", n)) => n.parse().map(|period| Restart::Fixed { period }).map_err(|e| format!("bad period '{n}': {e}")),
        _ => Err(format!("unknown restart mode '{s}' (expected adaptive, adaptive:C1, fixed:N or none)")),
    }
}

/// Where the measurements come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    File { path: PathBuf, info_reduction: InfoReduction },
    Simulation(SimulationParams),
}

/// Everything needed to reproduce a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub source: Source,
    pub robots: Option<usize>,
    pub mode: Mode,
    pub config: SolveConfig,
    pub solver_seed: u64,
    pub simulation_seed: Option<u64>,
}

/// Result of [`execute`].
#[derive(Clone, Debug)]
pub struct Execution {
    pub graph: PoseGraph,
    pub outcome: SolveOutcome,
    pub audit: Option<MessageAudit>,
    pub transcript: Option<Vec<TranscriptEntry>>,
}

pub fn simulation_preset(name: &str) -> Result<SimulationParams> {
    let base = SimulationParams::default();
    match name {
        "grid9" => Ok(base),
        "grid4" => Ok(SimulationParams { robots: 4, grid: vec![4, 4, 4], ..base }),
        "plane9" => Ok(SimulationParams { dimension: 2, grid: vec![12, 12], ..base }),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            SimulationParams::from_toml(&text)
        }
    }
}

/// Builds the graph named by `source`, with `robots` overriding the ownership.
pub fn load_graph(source: &Source, robots: Option<usize>) -> Result<PoseGraph> {
    match source {
        Source::File { path, info_reduction } => {
            let (g, _) = read_g2o_file(path, *info_reduction)?;
            g.with_contiguous_ownership(robots.unwrap_or(1))
        }
        Source::Simulation(p) => simulate_grid(p).map(|(g, _)| g),
    }
}

/// Runs the solve a manifest describes.
pub fn execute(m: &RunManifest) -> Result<Execution> {
    let graph = load_graph(&m.source, m.robots)?;
    match m.mode {
        Mode::Central => {
            let outcome = solve(&graph, &m.config)?;
            Ok(Execution { graph, outcome, audit: None, transcript: None })
        }
        Mode::Distributed => {
            let run = run_distributed(&graph, &m.config, true)?;
            Ok(Execution { graph, outcome: run.outcome, audit: Some(run.audit), transcript: Some(run.transcript) })
        }
    }
}

/// Resolves the solver configuration: `--config`, then individual flags.
pub fn solver_config(a: &SolverArgs) -> Result<SolveConfig> {
    let mut cfg = match &a.config {
        Some(p) => SolveConfig::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?)?,
        None => SolveConfig::default(),
    };
    if let Some(i) = a.init {
        cfg.init = match i {
            InitArg::SpanningTree => InitMethod::SpanningTree,
            InitArg::Chordal => InitMethod::Chordal,
            InitArg::Random => InitMethod::Random,
        };
    }
    if a.rank_init.is_some() {
        cfg.r0 = a.rank_init;
    }
    if a.rank_max.is_some() {
        cfg.r_max = a.rank_max;
    }
    if let Some(s) = a.selection {
        cfg.local.selection = match s {
            SelectionArg::Uniform => Selection::Uniform,
            SelectionArg::Importance => Selection::Importance,
            SelectionArg::Greedy => Selection::Greedy,
        };
    }
    if let Some(r) = a.restart {
        cfg.local.restart = r;
    }
    if let Some(t) = a.grad_tol {
        cfg.local.grad_tol = t;
    }
    if a.eig_tol.is_some() {
        cfg.eig_tol = a.eig_tol;
    }
    if let Some(g) = a.gamma {
        cfg.power.gamma = g;
    }
    if let Some(n) = a.max_iters {
        cfg.local.max_iters = n;
    }
    if a.no_acceleration {
        cfg.accelerated = false;
    }
    if a.sequential {
        cfg.local.parallel = false;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.local.seed = s;
    }
    cfg.local.validate()?;
    Ok(cfg)
}

pub fn manifest_from_args(a: &SolveArgs) -> Result<RunManifest> {
    let config = solver_config(&a.solver)?;
    let seed = config.seed;
    let (source, simulation_seed) = match (&a.source.input, &a.source.simulate) {
        (Some(path), None) => (Source::File { path: path.clone(), info_reduction: a.source.info_reduction.into() }, None),
        (None, Some(preset)) => {
            let mut p = simulation_preset(preset)?;
            p.seed = a.source.sim_seed.unwrap_or(seed);
            if let Some(r) = a.source.robots {
                p.robots = r;
            }
            let s = p.seed;
            (Source::Simulation(p), Some(s))
        }
        _ => return Err(Error::Parameter("exactly one of --input and --simulate is required".into())),
    };
    let robots = match source {
        Source::File { .. } => a.source.robots,
        Source::Simulation(_) => None,
    };
    Ok(RunManifest {
        command: "solve".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        source,
        robots,
        mode: a.mode,
        config,
        solver_seed: seed,
        simulation_seed,
    })
}

/// Iteration logs of every rank as one CSV table.
pub fn logs_csv(logs: &[IterationLog], ranks: &[usize]) -> String {
    let mut s = String::from("rank,");
    for (k, (log, rank)) in logs.iter().zip(ranks).enumerate() {
        let csv = log.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if k == 0 {
            s.push_str(header);
            s.push('\n');
        }
        for l in lines {
            let _ = writeln!(s, "{rank},{l}");
        }
    }
    s
}

pub fn summary(o: &SolveOutcome) -> String {
    let r = &o.report;
    let mut s = String::new();
    let _ = writeln!(s, "{} poses, {} edges, {} robots, {}D", r.num_poses, r.num_edges, r.num_robots, r.dimension);
    for k in &r.ranks {
        let _ = writeln!(
            s,
            "rank {}: {} iterations, cost {:.6e}, |grad| {:.3e}, lambda_min {:.3e} (tol {:.3e}){}",
            k.rank,
            k.iterations,
            k.cost,
            k.grad_norm,
            k.eigen.value,
            k.eig_tol,
            if k.certified { ", certified" } else { "" }
        );
    }
    let _ = writeln!(
        s,
        "{} at rank {}: f_sdp {:.10e}, f_rounded {:.10e}, suboptimality bound {:.3e}, {:.2} s",
        if r.certified { "certified" } else { "NOT certified" },
        r.final_rank,
        r.f_sdp,
        r.f_rounded,
        r.suboptimality_bound,
        r.wall_time
    );
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

fn finish_solve(ex: &Execution, report: &Path) -> Result<i32> {
    write(report, &json(&ex.outcome.report))?;
    print!("{}", summary(&ex.outcome));
    if let Some(a) = &ex.audit {
        print!("{}", a.table());
    }
    Ok(if ex.outcome.report.certified { EXIT_OK } else { EXIT_UNCERTIFIED })
}

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let m = manifest_from_args(a)?;
    let ex = execute(&m)?;
    write(&a.manifest, &json(&m))?;
    if let Some(p) = &a.log {
        let ranks: Vec<usize> = ex.outcome.report.ranks.iter().map(|r| r.rank).collect();
        write(p, &logs_csv(&ex.outcome.logs, &ranks))?;
    }
    if let Some(p) = &a.poses {
        write(p, &write_vertices(&ex.outcome.poses))?;
    }
    if let (Some(p), Some(audit)) = (&a.audit, &ex.audit) {
        write(p, &json(audit))?;
    }
    if let (Some(p), Some(t)) = (&a.transcript, &ex.transcript) {
        write(p, &transcript_jsonl(t))?;
    }
    finish_solve(&ex, &a.report)
}

fn cmd_replay(a: &ReplayArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| Error::io(a.manifest.display().to_string(), e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let ex = execute(&m)?;
    finish_solve(&ex, &a.report)
}

/// Certificate of the vertices in `poses` (or of the graph file's own vertices).
pub fn certify_files(graph: &Path, poses: Option<&Path>, how: InfoReduction, cfg: &SolveConfig) -> Result<CertificateCheck> {
    let (g, own) = read_g2o_file(graph, how)?;
    let est: Vec<Pose> = match poses {
        Some(p) => read_vertices_file(p)?,
        None => own,
    };
    certify_estimate(&g, &est, cfg)
}

fn cmd_certify(a: &CertifyArgs) -> Result<i32> {
    let cfg = solver_config(&a.solver)?;
    let c = certify_files(&a.graph, a.poses.as_deref(), a.info_reduction.into(), &cfg)?;
    if let Some(p) = &a.output {
        write(p, &json(&c))?;
    }
    println!(
        "cost {:.10e}, |grad| {:.3e}, lambda_min {:.6e}, residual {:.3e}, tol {:.3e}: {}",
        c.cost,
        c.grad_norm,
        c.eigen.value,
        c.eigen.residual,
        c.eig_tol,
        if c.certified { "certified" } else { "NOT certified" }
    );
    if let Some(e) = &c.escape {
        println!("escape: step {:.3e}, cost {:.6e} -> {:.6e}, |grad| {:.3e}", e.alpha, e.cost_before, e.cost_after, e.grad_norm);
    }
    Ok(if c.certified { EXIT_OK } else { EXIT_UNCERTIFIED })
}

fn cmd_metrics(a: &MetricsArgs) -> Result<i32> {
    let est = read_vertices_file(&a.estimate)?;
    let reference = read_vertices_file(&a.reference)?;
    let m = metrics(&est, &reference)?;
    println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
    Ok(EXIT_OK)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut p = simulation_preset(&a.preset)?;
    p.seed = a.seed;
    if let Some(r) = a.robots {
        p.robots = r;
    }
    let (g, truth) = simulate_grid(&p)?;
    write(&a.output, &write_g2o(&g, &truth, InfoReduction::MeanDiagonal))?;
    if let Some(t) = &a.truth {
        write(t, &write_vertices(&truth))?;
    }
    println!("{} poses, {} edges, {} robots", g.num_poses, g.edges.len(), g.num_robots());
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restart_flags() {
        assert_eq!(parse_restart("none"), Ok(Restart::None));
        assert_eq!(parse_restart("fixed:30"), Ok(Restart::Fixed { period: 30 }));
        assert_eq!(parse_restart("adaptive:0.5"), Ok(Restart::Adaptive { c1: 0.5 }));
        assert!(matches!(parse_restart("adaptive"), Ok(Restart::Adaptive { .. })));
        assert!(parse_restart("fixed").is_err());
        assert!(parse_restart("sometimes").is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from([
            "dpgo", "solve", "--simulate", "grid4", "--selection", "uniform", "--restart", "fixed:7", "--rank-init", "5",
            "--gamma", "0.9", "--seed", "3",
        ])
        .unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        let m = manifest_from_args(&a).unwrap();
        assert_eq!(m.config.local.selection, Selection::Uniform);
        assert_eq!(m.config.local.restart, Restart::Fixed { period: 7 });
        assert_eq!(m.config.r0, Some(5));
        assert_eq!(m.config.power.gamma, 0.9);
        assert_eq!(m.simulation_seed, Some(3));
        assert!(matches!(m.source, Source::Simulation(ref p) if p.robots == 4));
    }

    #[test]
    fn input_and_simulate_are_exclusive() {
        assert!(Cli::try_parse_from(["dpgo", "solve", "--input", "a.g2o", "--simulate", "grid9"]).is_err());
        let cli = Cli::try_parse_from(["dpgo", "solve"]).unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        assert!(manifest_from_args(&a).is_err());
    }
}
