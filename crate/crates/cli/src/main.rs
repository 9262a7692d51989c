use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use corrsched::bench::{run_experiment, Experiment, ExperimentSpec};
use corrsched::descent::{coordinate_descent, round_to_hard};
use corrsched::heuristics::{best_of_restarts, Dissimilarity, Seeding, DEFAULT_MAX_ITER};
use corrsched::io::{
    format_f64, matrix_to_csv, matrix_to_json, read_assignment, read_matrix, read_schedule, write_assignment,
    write_layout, write_matrix,
};
use corrsched::linearize::{build_pilp_with, export_lp, Encoding};
use corrsched::objective::{assignment_report, hard_objective, network_collision_probability};
use corrsched::sim::{
    estimate_joint_activation, generate_layout, ActivationModel, SimulationSpec, DEFAULT_DENSITY, DEFAULT_LAMBDA,
    DEFAULT_STEPS,
};
use corrsched::solver::{brute_force, solve_exact, SolverOptions, SolverResult, Termination, DEFAULT_GAP};
use corrsched::{Assignment, CollisionReport, JointActivationMatrix, ScheduleMatrix};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RESOURCE_LIMIT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "corrsched", version, about = "Channel scheduling for devices with correlated activations")]
struct Cli {
    #[command(flatten)]
    global: GlobalOptions,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOptions {
    /// Seed for every random choice; falls back to CORRSCHED_SEED, then the config file, then 0.
    #[arg(long, global = true, env = "CORRSCHED_SEED")]
    seed: Option<u64>,
    /// Suppress diagnostics on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Format of the report printed on stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with defaults for seed, quiet, format and threads.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(serde::Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    quiet: Option<bool>,
    format: Option<Format>,
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate alarms on a random layout and estimate the joint activation matrix.
    Sim(SimArgs),
    /// Evaluate collision probabilities of a schedule.
    Eval(EvalArgs),
    /// Round a schedule to a hard assignment and improve it by single-device moves.
    Descend(DescendArgs),
    /// Write the linearized integer program as an LP file.
    Export(ExportArgs),
    /// Minimize the pairwise objective exactly.
    Solve(SolveArgs),
    /// K-Medoids clustering of devices into channels.
    Cluster(ClusterArgs),
    /// Run a benchmark experiment and write its CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    devices: usize,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS as f64)]
    steps: f64,
    #[arg(long)]
    out_matrix: Option<PathBuf>,
    #[arg(long)]
    out_layout: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScheduleInput {
    /// Soft or hard schedule, JSON or CSV.
    #[arg(long, required_unless_present = "assignment", conflicts_with = "assignment")]
    schedule: Option<PathBuf>,
    /// Assignment CSV with header device,channel.
    #[arg(long)]
    assignment: Option<PathBuf>,
    /// Channel count for an assignment (default: highest channel used + 1).
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    input: ScheduleInput,
    /// Append a row (l, p_c, f, per-channel values) to this CSV file.
    #[arg(long)]
    append_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DescendArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    input: ScheduleInput,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    /// Write the resulting assignment CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    channels: usize,
    #[arg(long)]
    out: PathBuf,
    /// Emit only the two gate rows that bind under minimization.
    #[arg(long)]
    reduced: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    channels: usize,
    #[arg(long, default_value_t = DEFAULT_GAP)]
    gap: f64,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<u64>,
    /// Enumerate every canonical assignment instead of branch-and-bound.
    #[arg(long)]
    brute_force: bool,
    /// Assignment CSV used as the starting incumbent.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Write the incumbent trail (elapsed_s,objective) to this CSV.
    #[arg(long)]
    log_incumbents: Option<PathBuf>,
    /// Write the best assignment CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClusterMethod {
    Kmedoids,
    KmedoidsPp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DissimilarityArg {
    #[value(name = "A")]
    Joint,
    #[value(name = "one-minus-A")]
    OneMinusJoint,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    channels: usize,
    #[arg(long, value_enum, default_value = "kmedoids-pp")]
    method: ClusterMethod,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, value_enum, default_value = "A")]
    dissimilarity: DissimilarityArg,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// anytime, bound, vs-L or vs-lambda.
    #[arg(long)]
    experiment: Experiment,
    #[arg(long)]
    spec: PathBuf,
    /// Directory for <experiment>.csv; without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Ctx {
    seed: u64,
    quiet: bool,
    format: Format,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// A run that stopped on a limit; the report is still printed.
struct Partial;

type Outcome = anyhow::Result<Option<Partial>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Partial)) => ExitCode::from(EXIT_RESOURCE_LIMIT),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let config = match &cli.global.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ConfigFile::default(),
    };
    let ctx = Ctx {
        seed: cli.global.seed.or(config.seed).unwrap_or(0),
        quiet: cli.global.quiet || config.quiet.unwrap_or(false),
        format: cli.global.format.or(config.format).unwrap_or(Format::Json),
    };
    if let Some(threads) = cli.global.threads.or(config.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Sim(args) => sim(&ctx, args),
        Command::Eval(args) => eval(&ctx, args),
        Command::Descend(args) => descend(&ctx, args),
        Command::Export(args) => export(&ctx, args),
        Command::Solve(args) => solve(&ctx, args),
        Command::Cluster(args) => cluster(&ctx, args),
        Command::Bench(args) => bench(&ctx, args),
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush());
}

fn emit_json(value: &Value) {
    out(&format!("{}\n", serde_json::to_string_pretty(value).expect("serializable report")));
}

/// Prints a flat key/value report as JSON or as a one-row CSV table.
fn emit_record(ctx: &Ctx, fields: &[(&str, Value)]) {
    match ctx.format {
        Format::Json => emit_json(&Value::Object(fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())),
        Format::Csv => {
            let header: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
            let row: Vec<String> = fields.iter().map(|(_, v)| csv_cell(v)).collect();
            out(&format!("{}\n{}\n", header.join(","), row.join(",")));
        }
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.as_f64().filter(|_| n.is_f64()).map(format_f64).unwrap_or_else(|| n.to_string()),
        Value::Array(items) => items.iter().map(csv_cell).collect::<Vec<_>>().join(";"),
        other => other.to_string(),
    }
}

fn load_matrix(path: &Path) -> anyhow::Result<JointActivationMatrix> {
    read_matrix(path).with_context(|| format!("matrix {}", path.display()))
}

fn load_assignment(path: &Path) -> anyhow::Result<Assignment> {
    read_assignment(path).with_context(|| format!("assignment {}", path.display()))
}

fn channel_count(x: &Assignment, requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| x.channel_of().iter().max().map_or(1, |&c| c + 1))
}

enum Input {
    Soft(ScheduleMatrix),
    Hard(Assignment, usize),
}

fn load_input(input: &ScheduleInput) -> anyhow::Result<Input> {
    if let Some(path) = &input.schedule {
        let e = read_schedule(path).with_context(|| format!("schedule {}", path.display()))?;
        if let Some(l) = input.channels.filter(|&l| l != e.n_channels()) {
            bail!("--channels {l} disagrees with the schedule's {} columns", e.n_channels());
        }
        return Ok(Input::Soft(e));
    }
    let path = input.assignment.as_ref().expect("clap requires one input");
    let x = load_assignment(path)?;
    let l = channel_count(&x, input.channels);
    x.check_channels(l)?;
    Ok(Input::Hard(x, l))
}

fn sim(ctx: &Ctx, args: SimArgs) -> Outcome {
    if !(args.steps >= 1.0 && args.steps.fract() == 0.0 && args.steps <= u64::MAX as f64) {
        bail!("--steps must be a positive integer, got {}", args.steps);
    }
    let steps = args.steps as u64;
    let layout = generate_layout(args.devices, args.density, ctx.seed)?;
    let model = ActivationModel::new(args.lambda)?;
    let spec = SimulationSpec::new(steps, ctx.seed)?;
    ctx.note(format!("simulating {steps} steps for {} devices", args.devices));
    let a = estimate_joint_activation(&layout, &model, &spec);
    if let Some(path) = &args.out_layout {
        write_layout(path, &layout).with_context(|| format!("writing layout {}", path.display()))?;
    }
    match &args.out_matrix {
        Some(path) => {
            write_matrix(path, &a).with_context(|| format!("writing matrix {}", path.display()))?;
            emit_record(
                ctx,
                &[
                    ("devices", json!(args.devices)),
                    ("density", json!(args.density)),
                    ("lambda", json!(args.lambda)),
                    ("steps", json!(steps)),
                    ("seed", json!(ctx.seed)),
                    ("region_radius", json!(layout.region_radius())),
                    ("matrix", json!(path.display().to_string())),
                ],
            );
        }
        None => match ctx.format {
            Format::Json => out(&matrix_to_json(&a)),
            Format::Csv => out(&matrix_to_csv(&a)),
        },
    }
    Ok(None)
}

fn report_fields(report: &CollisionReport) -> Vec<(&'static str, Value)> {
    vec![
        ("channels", json!(report.per_channel.len())),
        ("network_average", json!(report.network_average)),
        ("pairwise_bound", json!(report.pairwise_bound)),
        ("per_channel", json!(report.per_channel)),
    ]
}

fn eval(ctx: &Ctx, args: EvalArgs) -> Outcome {
    let a = load_matrix(&args.matrix)?;
    let report = match load_input(&args.input)? {
        Input::Soft(e) => network_collision_probability(&a, &e)?,
        Input::Hard(x, l) => assignment_report(&a, &x, l)?,
    };
    if let Some(path) = &args.append_csv {
        append_report_row(path, &report)?;
    }
    match ctx.format {
        Format::Json => emit_json(&serde_json::to_value(&report)?),
        Format::Csv => emit_record(ctx, &report_fields(&report)),
    }
    Ok(None)
}

fn append_report_row(path: &Path, report: &CollisionReport) -> anyhow::Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut text = String::new();
    if fresh {
        text.push_str("l,p_c,f,per_channel\n");
    }
    let per_channel: Vec<String> = report.per_channel.iter().map(|&p| format_f64(p)).collect();
    text.push_str(&format!(
        "{},{},{},{}\n",
        report.per_channel.len(),
        format_f64(report.network_average),
        format_f64(report.pairwise_bound),
        per_channel.join(";")
    ));
    file.write_all(text.as_bytes())?;
    Ok(())
}

fn descend(ctx: &Ctx, args: DescendArgs) -> Outcome {
    let a = load_matrix(&args.matrix)?;
    let (start, l, f_start) = match load_input(&args.input)? {
        Input::Soft(e) => {
            let l = e.n_channels();
            let f = corrsched::objective::pairwise_bound(&a, &e)?;
            (round_to_hard(&a, &e)?, l, f)
        }
        Input::Hard(x, l) => {
            let f = hard_objective(&a, &x, l);
            (x, l, f)
        }
    };
    let f_rounded = hard_objective(&a, &start, l);
    let result = coordinate_descent(&a, &start, l, args.max_sweeps)?;
    let f_final = hard_objective(&a, &result, l);
    ctx.note(format!("F: start {f_start}, rounded {f_rounded}, after descent {f_final}"));
    if let Some(path) = &args.out {
        write_assignment(path, &result).with_context(|| format!("writing {}", path.display()))?;
    }
    emit_record(
        ctx,
        &[
            ("channels", json!(l)),
            ("objective_start", json!(f_start)),
            ("objective_rounded", json!(f_rounded)),
            ("objective", json!(f_final)),
            ("assignment", json!(result.channel_of())),
        ],
    );
    Ok(None)
}

fn export(ctx: &Ctx, args: ExportArgs) -> Outcome {
    let a = load_matrix(&args.matrix)?;
    let encoding = if args.reduced { Encoding::Reduced } else { Encoding::Full };
    let model = build_pilp_with(&a, args.channels, encoding)?;
    fs::write(&args.out, export_lp(&model)).with_context(|| format!("writing {}", args.out.display()))?;
    emit_record(
        ctx,
        &[
            ("devices", json!(a.dim())),
            ("channels", json!(args.channels)),
            ("encoding", json!(if args.reduced { "reduced" } else { "full" })),
            ("variables", json!(model.variables.len())),
            ("constraints", json!(model.constraints.len())),
            ("out", json!(args.out.display().to_string())),
        ],
    );
    Ok(None)
}

fn solve(ctx: &Ctx, args: SolveArgs) -> Outcome {
    let a = load_matrix(&args.matrix)?;
    let result = if args.brute_force {
        brute_force(&a, args.channels)?
    } else {
        let time_limit = match args.time_limit {
            Some(t) if !(t >= 0.0 && t.is_finite()) => bail!("--time-limit must be a non-negative number of seconds"),
            Some(t) => Some(Duration::from_secs_f64(t)),
            None => None,
        };
        let initial_incumbent = match &args.warm_start {
            Some(path) => {
                let x = load_assignment(path)?;
                x.check_channels(args.channels)?;
                Some(x)
            }
            None => None,
        };
        let opts = SolverOptions {
            gap_tolerance: args.gap,
            time_limit,
            node_limit: args.node_limit,
            initial_incumbent,
            ..SolverOptions::default()
        };
        solve_exact(&a, args.channels, &opts)?
    };
    if let Some(path) = &args.log_incumbents {
        let mut text = String::from("elapsed_s,objective\n");
        for entry in &result.incumbent_log {
            text.push_str(&format!("{},{}\n", format_f64(entry.elapsed_s), format_f64(entry.objective)));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.out {
        write_assignment(path, &result.assignment).with_context(|| format!("writing {}", path.display()))?;
    }
    ctx.note(format!(
        "objective {} lower bound {} gap {} after {} nodes",
        result.objective, result.lower_bound, result.gap, result.nodes_explored
    ));
    emit_solver_result(ctx, &result);
    if result.termination != Termination::Completed {
        ctx.note(format!("stopped on {:?}; the assignment is the best found so far", result.termination));
        return Ok(Some(Partial));
    }
    Ok(None)
}

fn emit_solver_result(ctx: &Ctx, result: &SolverResult) {
    match ctx.format {
        Format::Json => emit_json(&serde_json::to_value(result).expect("serializable result")),
        Format::Csv => emit_record(
            ctx,
            &[
                ("objective", json!(result.objective)),
                ("lower_bound", json!(result.lower_bound)),
                ("gap", json!(result.gap)),
                ("nodes_explored", json!(result.nodes_explored)),
                ("termination", serde_json::to_value(result.termination).expect("serializable")),
                ("assignment", json!(result.assignment.channel_of())),
            ],
        ),
    }
}

fn cluster(ctx: &Ctx, args: ClusterArgs) -> Outcome {
    let a = load_matrix(&args.matrix)?;
    let seeding = match args.method {
        ClusterMethod::Kmedoids => Seeding::Uniform,
        ClusterMethod::KmedoidsPp => Seeding::KMeansPlusPlus,
    };
    let dissim = match args.dissimilarity {
        DissimilarityArg::Joint => Dissimilarity::Joint,
        DissimilarityArg::OneMinusJoint => Dissimilarity::OneMinusJoint,
    };
    let (x, state, f) = best_of_restarts(&a, args.channels, seeding, dissim, ctx.seed, args.restarts, args.max_iter)?;
    if let Some(path) = &args.out {
        write_assignment(path, &x).with_context(|| format!("writing {}", path.display()))?;
    }
    emit_record(
        ctx,
        &[
            ("channels", json!(args.channels)),
            ("objective", json!(f)),
            ("medoid_cost", json!(state.cost)),
            ("iterations", json!(state.cost_trace.len())),
            ("medoids", json!(state.medoids)),
            ("assignment", json!(x.channel_of())),
        ],
    );
    Ok(None)
}

fn bench(ctx: &Ctx, args: BenchArgs) -> Outcome {
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading spec {}", args.spec.display()))?;
    let spec = ExperimentSpec::from_json(&text).with_context(|| format!("spec {}", args.spec.display()))?;
    let output = run_experiment(args.experiment, &spec)?;
    for warning in &output.warnings {
        ctx.note(format!("warning: {warning}"));
    }
    let Some(dir) = &args.out else {
        out(&output.csv);
        return Ok(None);
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{}.csv", args.experiment));
    fs::write(&path, &output.csv).with_context(|| format!("writing {}", path.display()))?;
    match ctx.format {
        Format::Csv => out(&output.csv),
        Format::Json => emit_json(&json!({
            "experiment": args.experiment.to_string(),
            "out": path.display().to_string(),
            "rows": output.csv.lines().count().saturating_sub(1),
            "warnings": output.warnings,
        })),
    }
    Ok(None)
}
