//! The `emkrylov` command line: tree generation, single analyses, solver
//! comparison and parameter tuning.
//!
//! Result files are deterministic for a given tree and configuration.
//! Wall-clock timings go to separate files.

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use emkrylov_core::tree::{fmt_float, Range};
use emkrylov_core::*;
use serde::Serialize;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::result::Result;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const TRAJECTORY_SCHEMA: &str = "# emkrylov-trajectory v1";
pub const COMPARISON_SCHEMA: &str = "# emkrylov-comparison v1";
pub const COMPARISON_TIMINGS_SCHEMA: &str = "# emkrylov-comparison-timings v1";
pub const THREADS_ENV: &str = "EMKRYLOV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "emkrylov", version, about = "Electromigration stress analysis of interconnect trees")]
struct Cli {
    /// Worker threads for tuning and comparison (default: $EMKRYLOV_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic tree file.
    Generate(GenerateArgs),
    /// Run one two-phase simulation.
    Analyze(AnalyzeArgs),
    /// Run FDM and Krylov solvers on one tree; report errors and speedups.
    Compare(CompareArgs),
    /// Search (q, η_nuc, η_post) by coordinate descent.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    segments: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// A single chain instead of random attachment.
    #[arg(long)]
    path: bool,
    /// Segment length range in metres.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    length: Option<Vec<f64>>,
    /// Segment width range in metres.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    width: Option<Vec<f64>>,
    /// Segment thickness range in metres.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    height: Option<Vec<f64>>,
    /// Current-density magnitude range in A/m².
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    current_density: Option<Vec<f64>>,
    /// Keep every current positive along its segment (signed ranges allowed).
    #[arg(long)]
    fixed_sign: bool,
    #[arg(short, long)]
    output: PathBuf,
}

/// Either a tree file or an inline generator spec.
#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["tree", "segments"])))]
struct TreeSource {
    /// Tree file (`emtree v1`).
    tree: Option<PathBuf>,
    /// Generate a tree with this many segments instead of reading a file.
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long, default_value_t = 0, requires = "segments")]
    seed: u64,
    #[arg(long, requires = "segments")]
    path: bool,
}

impl TreeSource {
    fn load(&self) -> Result<InterconnectTree, CliError> {
        match (&self.tree, self.segments) {
            (Some(file), None) => {
                let text = fs::read_to_string(file)
                    .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", file.display())))?;
                Ok(parse_tree(&text)?)
            }
            (None, Some(n)) => {
                let mut cfg = GeneratorConfig::new(n, self.seed);
                if self.path {
                    cfg = cfg.path();
                }
                Ok(generate_synthetic_tree(&cfg)?)
            }
            _ => Err(CliError::Usage("give either a tree file or --segments, not both".into())),
        }
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 6)]
    q: usize,
    #[arg(long, default_value_t = 1.0)]
    eta_nuc: f64,
    #[arg(long, default_value_t = 1.0)]
    eta_post: f64,
    /// Time steps in each phase (overridden per phase by --steps-nuc/--steps-post).
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long)]
    steps_nuc: Option<usize>,
    #[arg(long)]
    steps_post: Option<usize>,
    /// Nucleation horizon in units of τ_nuc.
    #[arg(long, default_value_t = 20.0)]
    horizon_nuc: f64,
    /// Post-void horizon in units of τ_post.
    #[arg(long, default_value_t = 20.0)]
    horizon_post: f64,
    /// Grid points per segment, endpoints included.
    #[arg(long, default_value_t = DEFAULT_POINTS_PER_SEGMENT)]
    points: usize,
    /// Critical stress in Pa (default: the tree's value).
    #[arg(long)]
    sigma_crit: Option<f64>,
    /// Backward-Euler substeps per output interval for FDM runs.
    #[arg(long, default_value_t = 1)]
    fdm_substeps: usize,
    /// Run ext-rakrylov with σ = 0 (FastEM mode).
    #[arg(long)]
    fastem_mode: bool,
    /// Reduction order in FastEM mode.
    #[arg(long, default_value_t = 50)]
    fastem_order: usize,
    /// Record every grid unknown instead of tree nodes only.
    #[arg(long)]
    full_grid: bool,
}

impl SolverArgs {
    fn config(&self, solver: SolverKind) -> Result<EngineConfig, CliError> {
        let steps_nuc = self.steps_nuc.unwrap_or(self.steps);
        let steps_post = self.steps_post.unwrap_or(self.steps);
        if steps_nuc < 2 || steps_post < 2 {
            return Err(CliError::Usage("each phase needs at least 2 time steps".into()));
        }
        let mut cfg = EngineConfig::new(solver).with_params(self.q, self.eta_nuc, self.eta_post);
        cfg.steps_nuc = steps_nuc;
        cfg.steps_post = steps_post;
        cfg.horizon_nuc = self.horizon_nuc;
        cfg.horizon_post = self.horizon_post;
        cfg.points_per_segment = self.points;
        cfg.sigma_crit = self.sigma_crit;
        cfg.fdm_substeps_nuc = self.fdm_substeps;
        cfg.fdm_substeps_post = self.fdm_substeps;
        cfg.probes = if self.full_grid { Probes::FullGrid } else { Probes::TreeNodes };
        Ok(cfg)
    }

    fn fastem(&self) -> Result<EngineConfig, CliError> {
        let mut cfg = self.config(SolverKind::Ext)?;
        cfg.q = self.fastem_order;
        cfg.fastem = true;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Fdm,
    Ext,
    Ei,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Fdm => SolverKind::Fdm,
            SolverArg::Ext => SolverKind::Ext,
            SolverArg::Ei => SolverKind::Ei,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KrylovArg {
    Ext,
    Ei,
}

impl From<KrylovArg> for SolverKind {
    fn from(s: KrylovArg) -> Self {
        match s {
            KrylovArg::Ext => SolverKind::Ext,
            KrylovArg::Ei => SolverKind::Ei,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReferenceArg {
    /// FDM with substeps doubled until t_nuc and ΔR settle to 1e-4.
    Fine,
    /// FDM on the same grid as the compared solvers.
    Grid,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: TreeSource,
    #[arg(long, value_enum, default_value = "ext")]
    solver: SolverArg,
    #[command(flatten)]
    params: SolverArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    source: TreeSource,
    /// Solvers to compare; FDM always runs as the timing baseline.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fdm,ext,ei")]
    solvers: Vec<SolverArg>,
    #[command(flatten)]
    params: SolverArgs,
    #[arg(long, value_enum, default_value = "fine")]
    reference: ReferenceArg,
    /// Timed repetitions per solver (the fastest is reported).
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    source: TreeSource,
    #[arg(long, value_enum, default_value = "ext")]
    solver: KrylovArg,
    #[command(flatten)]
    params: SolverArgs,
    /// Candidate orders.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
    orders: Vec<usize>,
    /// Starting point q,η_nuc,η_post.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "4,1.0,1.0")]
    initial: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    max_iterations: usize,
    #[arg(short, long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl From<EmError> for CliError {
    fn from(e: EmError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("usage error: {m}"),
                CliError::Failure(m) => eprintln!("error: {m}"),
            }
            e.code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(CliError::Usage("--threads must be at least 1".into())) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Failure(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate(a),
        Command::Analyze(a) => analyze(a),
        Command::Compare(a) => compare(a),
        Command::Tune(a) => tune(a),
    })
}

fn range(arg: &Option<Vec<f64>>, default: Range) -> Range {
    arg.as_ref().map_or(default, |v| Range::new(v[0], v[1]))
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let mut cfg = GeneratorConfig::new(a.segments, a.seed);
    if a.path {
        cfg = cfg.path();
    }
    cfg.length = range(&a.length, cfg.length);
    cfg.width = range(&a.width, cfg.width);
    cfg.height = range(&a.height, cfg.height);
    cfg.current_density = range(&a.current_density, cfg.current_density);
    cfg.random_sign = !a.fixed_sign;
    let tree = generate_synthetic_tree(&cfg)?;
    write_file(&a.output, &tree.to_text())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    solver: &'static str,
    q: Option<usize>,
    eta_nuc: Option<f64>,
    eta_post: Option<f64>,
    fastem: bool,
    steps_nuc: usize,
    steps_post: usize,
    points_per_segment: usize,
    sigma_crit: f64,
    tau_nuc: f64,
    tau_post: f64,
    nucleated: bool,
    t_nuc: Option<f64>,
    nucleation_node: Option<usize>,
    voided_segment: Option<usize>,
    delta_r_final: f64,
    void_volume_final: Option<f64>,
    order_nuc: Option<usize>,
    order_post: Option<usize>,
    warnings: &'a [String],
}

fn summary(r: &SimulationResult) -> Summary<'_> {
    let krylov = r.config.solver != SolverKind::Fdm;
    Summary {
        schema: "emkrylov-summary v1",
        solver: r.config.solver.tag().as_str(),
        q: krylov.then_some(r.config.q),
        eta_nuc: krylov.then_some(r.config.eta_nuc),
        eta_post: krylov.then_some(r.config.eta_post),
        fastem: r.config.fastem,
        steps_nuc: r.config.steps_nuc,
        steps_post: r.config.steps_post,
        points_per_segment: r.config.points_per_segment,
        sigma_crit: r.sigma_crit,
        tau_nuc: r.shift.tau_nuc,
        tau_post: r.shift.tau_post,
        nucleated: r.t_nuc.is_some(),
        t_nuc: r.t_nuc,
        nucleation_node: r.nucleation_node,
        voided_segment: r.voided_segment,
        delta_r_final: r.delta_r_final(),
        void_volume_final: r.void_volume.last().copied(),
        order_nuc: r.order_nuc,
        order_post: r.order_post,
        warnings: &r.warnings,
    }
}

#[derive(Serialize)]
struct Timings {
    assembly_s: f64,
    nucleation_s: f64,
    postvoid_s: f64,
    solver_s: f64,
}

impl From<&PhaseTimings> for Timings {
    fn from(t: &PhaseTimings) -> Self {
        Timings { assembly_s: t.assembly_s, nucleation_s: t.nucleation_s, postvoid_s: t.postvoid_s, solver_s: t.solver_s() }
    }
}

/// Column names for the stored rows: tree nodes come first on the grid.
fn column_names(traj: &StressTrajectory, n_nodes: usize) -> Vec<String> {
    let width = traj.states.first().map_or(0, Vec::len);
    let rows: Vec<usize> = traj.rows.clone().unwrap_or_else(|| (0..width).collect());
    rows.iter()
        .map(|&r| if r < n_nodes { format!("node_{r}_stress_pa") } else { format!("point_{r}_stress_pa") })
        .collect()
}

/// Trajectory CSV: both phases in time order; the nucleation sample and the
/// first post-void sample share the time t_nuc.
pub fn trajectory_csv(r: &SimulationResult, n_nodes: usize) -> String {
    let phases: Vec<&StressTrajectory> = std::iter::once(&r.trajectory_nuc).chain(r.trajectory_post.as_ref()).collect();
    let residual = r.config.solver == SolverKind::Ei;
    let mut out = String::new();
    let _ = writeln!(out, "{TRAJECTORY_SCHEMA}");
    let mut header = vec!["time_s".to_string()];
    header.extend(column_names(&r.trajectory_nuc, n_nodes));
    if residual {
        header.push("residual_rel".into());
    }
    let _ = writeln!(out, "{}", header.join(","));
    for traj in phases {
        for (k, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
            out.push_str(&fmt_float(*t));
            for v in state {
                out.push(',');
                out.push_str(&fmt_float(*v));
            }
            if residual {
                out.push(',');
                let res = traj.residual_rel.as_ref().map_or(0.0, |r| r[k]);
                out.push_str(&fmt_float(res));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    schema: &'static str,
    columns: Vec<String>,
    nucleation: &'a StressTrajectory,
    post_void: Option<&'a StressTrajectory>,
    delta_r: &'a [f64],
    void_volume: &'a [f64],
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let tree = a.source.load()?;
    let cfg = if a.params.fastem_mode {
        if a.solver != SolverArg::Ext {
            return Err(CliError::Usage("--fastem-mode applies to --solver ext only".into()));
        }
        a.params.fastem()?
    } else {
        a.params.config(a.solver.into())?
    };
    let result = simulate_two_phase(&tree, &cfg)?;
    for w in tree.warnings().iter().chain(&result.warnings) {
        eprintln!("warning: {w}");
    }
    match a.format {
        Format::Csv => write_file(&a.out_dir.join("trajectory.csv"), &trajectory_csv(&result, tree.n_nodes()))?,
        Format::Json => write_json(
            &a.out_dir.join("trajectory.json"),
            &TrajectoryJson {
                schema: "emkrylov-trajectory v1",
                columns: column_names(&result.trajectory_nuc, tree.n_nodes()),
                nucleation: &result.trajectory_nuc,
                post_void: result.trajectory_post.as_ref(),
                delta_r: &result.delta_r,
                void_volume: &result.void_volume,
            },
        )?,
    }
    write_json(&a.out_dir.join("summary.json"), &summary(&result))?;
    write_json(&a.out_dir.join("timings.json"), &Timings::from(&result.timings))?;
    match result.t_nuc {
        Some(t) => println!(
            "nucleation at node {} after {t:.6e} s; ΔR at end of horizon {:.6e} Ω",
            result.nucleation_node.unwrap_or_default(),
            result.delta_r_final()
        ),
        None => println!("no nucleation within the horizon; ΔR = 0"),
    }
    Ok(())
}

struct Row {
    label: String,
    result: SimulationResult,
    /// Fastest solver time over the repeats.
    best: PhaseTimings,
}

fn timed(sim: &Simulator, cfg: &EngineConfig, repeats: usize) -> Result<(SimulationResult, PhaseTimings), CliError> {
    let result = sim.run(cfg)?;
    let mut best = result.timings;
    for _ in 1..repeats {
        let t = sim.run(cfg)?.timings;
        if t.solver_s() < best.solver_s() {
            best = t;
        }
    }
    Ok((result, best))
}

fn pct(reference: Option<f64>, value: Option<f64>) -> String {
    match (reference, value) {
        (Some(r), Some(v)) => fmt_float(percentage_error(r, v, 1e-30)),
        _ => String::new(),
    }
}

fn ratio(num: f64, den: f64) -> String {
    if den > 0.0 {
        fmt_float(num / den)
    } else {
        String::new()
    }
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let tree = a.source.load()?;
    let sim = Simulator::new(&tree, a.params.points)?;
    let mut configs = vec![("fdm".to_string(), a.params.config(SolverKind::Fdm)?)];
    for s in &a.solvers {
        if *s != SolverArg::Fdm {
            let cfg = a.params.config((*s).into())?;
            configs.push((cfg.solver.tag().as_str().to_string(), cfg));
        }
    }
    if a.params.fastem_mode {
        configs.push(("fastem".into(), a.params.fastem()?));
    }

    // Timed runs stay sequential so they do not compete for cores.
    let mut rows = Vec::new();
    for (label, cfg) in &configs {
        let (result, best) = timed(&sim, cfg, a.repeats)?;
        rows.push(Row { label: label.clone(), result, best });
    }

    let reference = match a.reference {
        ReferenceArg::Grid => rows[0].result.t_nuc.map(|t| (t, rows[0].result.delta_r_final())),
        ReferenceArg::Fine => match reference_solution(&sim, &configs[0].1, &ReferenceConfig::default()) {
            Ok(r) => Some((r.t_nuc, r.delta_r)),
            Err(EmError::Configuration(m)) => {
                eprintln!("warning: no reference ({m}); error columns left empty");
                None
            }
            Err(e) => return Err(e.into()),
        },
    };

    let mut table = String::new();
    let _ = writeln!(table, "{COMPARISON_SCHEMA}");
    let _ = writeln!(
        table,
        "solver,q,eta_nuc,eta_post,steps_nuc,steps_post,nucleation_node,t_nuc_s,delta_r_ohm,eps_nuc_pct,eps_post_pct,total_error_pct"
    );
    for row in &rows {
        let r = &row.result;
        let krylov = r.config.solver != SolverKind::Fdm;
        let opt = |b: bool, v: String| if b { v } else { String::new() };
        let e_nuc = pct(reference.map(|x| x.0), r.t_nuc);
        let e_post = pct(reference.map(|x| x.1), Some(r.delta_r_final()));
        let total = match (reference, r.t_nuc) {
            (Some((t_ref, dr_ref)), Some(t)) => {
                fmt_float(percentage_error(t_ref, t, 1e-30) + percentage_error(dr_ref, r.delta_r_final(), 1e-30))
            }
            _ => String::new(),
        };
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{e_nuc},{e_post},{total}",
            row.label,
            opt(krylov, r.config.q.to_string()),
            opt(krylov, fmt_float(r.config.eta_nuc)),
            opt(krylov, fmt_float(r.config.eta_post)),
            r.config.steps_nuc,
            r.config.steps_post,
            r.nucleation_node.map_or(String::new(), |n| n.to_string()),
            r.t_nuc.map_or(String::new(), fmt_float),
            fmt_float(r.delta_r_final()),
        );
    }

    let fdm = &rows[0].best;
    let mut timings = String::new();
    let _ = writeln!(timings, "{COMPARISON_TIMINGS_SCHEMA}");
    let _ = writeln!(
        timings,
        "solver,assembly_s,nucleation_s,postvoid_s,total_s,speedup_nucleation,speedup_postvoid,speedup_total"
    );
    println!("{:<14} {:>12} {:>12} {:>12} {:>10}", "solver", "eps_nuc %", "eps_post %", "total %", "speedup");
    for (row, line) in rows.iter().zip(table.lines().skip(2)) {
        let t = &row.best;
        let _ = writeln!(
            timings,
            "{},{},{},{},{},{},{},{}",
            row.label,
            fmt_float(t.assembly_s),
            fmt_float(t.nucleation_s),
            fmt_float(t.postvoid_s),
            fmt_float(t.solver_s()),
            ratio(fdm.nucleation_s, t.nucleation_s),
            ratio(fdm.postvoid_s, t.postvoid_s),
            ratio(fdm.solver_s(), t.solver_s()),
        );
        let cols: Vec<&str> = line.split(',').collect();
        let short = |s: &str| s.parse::<f64>().map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<14} {:>12} {:>12} {:>12} {:>9.2}x",
            row.label,
            short(cols[9]),
            short(cols[10]),
            short(cols[11]),
            fdm.solver_s() / t.solver_s().max(1e-300)
        );
    }
    write_file(&a.out_dir.join("comparison.csv"), &table)?;
    write_file(&a.out_dir.join("comparison_timings.csv"), &timings)
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    schema: &'static str,
    solver: &'static str,
    result: &'a TunerResult,
}

fn tune(a: TuneArgs) -> Result<(), CliError> {
    if a.initial.len() != 3 {
        return Err(CliError::Usage("--initial takes q,eta_nuc,eta_post".into()));
    }
    let q0 = a.initial[0];
    if !(q0 >= 2.0 && q0.fract() == 0.0) {
        return Err(CliError::Usage(format!("initial order must be an integer ≥ 2, got {q0}")));
    }
    let cfg = TunerConfig {
        order_set: a.orders.clone(),
        max_iterations: a.max_iterations,
        initial: (q0 as usize, a.initial[1], a.initial[2]),
        ..TunerConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tree = a.source.load()?;
    let sim = Simulator::new(&tree, a.params.points)?;
    let solver: SolverKind = a.solver.into();
    let base = a.params.config(solver)?;
    let reference = reference_solution(&sim, &base, &ReferenceConfig::default())?;
    let result = coordinate_descent_with(&cfg, &sim, &base, reference)?;
    write_json(
        &a.out_dir.join("tuner.json"),
        &TuneOutput { schema: "emkrylov-tuner v1", solver: solver.tag().as_str(), result: &result },
    )?;
    println!(
        "{}: q {} eta_nuc {} eta_post {} J {:.6} after {} iterations ({} evaluations)",
        solver.tag().as_str(),
        result.q,
        result.eta_nuc,
        result.eta_post,
        result.j,
        result.iterations,
        result.evaluations
    );
    Ok(())
}
