//! Command-line entry points: precompute value functions, run single
//! closed-loop trials with exported traces and plots, and evaluate seeded
//! batches.

mod svg;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualshield::grid::{write_atomic, GridError, ValueFunction};
use dualshield::objective::GuidanceMode;
use dualshield::scenario::{Scenario, ScenarioError};
use dualshield::sim::{run_batch, run_trial, RunOptions, TrialResult, ValueFunctions};
use dualshield::solver::{solve, GameModel, HvRelativeModel, SolverConfig, StaticRelativeModel};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

const EXIT_CONFIG: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "dualshield", version, about = "Value-function precomputation, guided diffusion planning, and shielded closed-loop simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a relative game backwards in time and save the value function.
    Precompute(PrecomputeArgs),
    /// Run one closed-loop trial and export result, trace, and plot.
    Simulate(SimulateArgs),
    /// Run a seeded batch and print the summary table.
    Batch(BatchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    Hv5d,
    Static3d,
}

#[derive(Args)]
struct PrecomputeArgs {
    /// Which relative game to solve.
    #[arg(long, value_enum)]
    model: ModelName,
    /// Grid node counts per dimension, comma separated (defaults to the
    /// production grid of the model).
    #[arg(long)]
    grid: Option<String>,
    /// Game horizon in seconds.
    #[arg(long = "t-hj", default_value_t = 1.0)]
    t_hj: f64,
    /// Output path (defaults to <vf-dir>/<model>.vf).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file; omitted means the built-in U-turn scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable the execution-time safety filter.
    #[arg(long = "no-shield", default_value_t = false)]
    no_shield: bool,
    /// Candidate-steering mode for the planner.
    #[arg(long)]
    guidance: Option<Guidance>,
    /// Planner sample count override.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "denoise-steps")]
    denoise_steps: Option<usize>,
    #[arg(long = "warm-steps")]
    warm_steps: Option<usize>,
    /// Gibbs temperature override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Barrier decay-rate override.
    #[arg(long = "gamma-cbf")]
    gamma_cbf: Option<f64>,
    #[arg(long = "export-dir", default_value = "out")]
    export_dir: PathBuf,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Number of scenario configurations.
    #[arg(long, default_value_t = 10)]
    configs: usize,
    /// Trials per configuration.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Base seed; per-trial seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for trial parallelism (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "no-shield", default_value_t = false)]
    no_shield: bool,
    #[arg(long)]
    guidance: Option<Guidance>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "export-dir", default_value = "out")]
    export_dir: PathBuf,
    /// Report path (defaults to <export-dir>/report.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Guidance {
    Hj,
    Distance,
}

impl From<Guidance> for GuidanceMode {
    fn from(g: Guidance) -> Self {
        match g {
            Guidance::Hj => GuidanceMode::Hj,
            Guidance::Distance => GuidanceMode::Distance,
        }
    }
}

/// Default directory for value-function files.
fn vf_dir() -> PathBuf {
    std::env::var_os("DUALSHIELD_VF_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("vf"))
}

enum CmdError {
    Config(anyhow::Error),
    Format(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CmdError {
    fn report(self) -> ExitCode {
        let (code, err, kind) = match self {
            CmdError::Config(e) => (EXIT_CONFIG, e, "configuration"),
            CmdError::Format(e) => (EXIT_FORMAT, e, "file format"),
            CmdError::Runtime(e) => (EXIT_RUNTIME, e, "runtime"),
        };
        eprintln!("error ({kind}): {err:#}");
        ExitCode::from(code)
    }
}

fn classify_scenario_err(e: ScenarioError) -> CmdError {
    match e {
        ScenarioError::Io(_) | ScenarioError::Json(_) | ScenarioError::Version(_) => CmdError::Format(e.into()),
        _ => CmdError::Config(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Precompute(args) => cmd_precompute(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Batch(args) => cmd_batch(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn parse_counts(text: &str) -> Result<Vec<usize>, CmdError> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| CmdError::Config(anyhow::anyhow!("bad grid counts: {e}"))))
        .collect()
}

fn cmd_precompute(args: PrecomputeArgs) -> Result<(), CmdError> {
    let cfg = SolverConfig { horizon: args.t_hj, log_progress: true, ..Default::default() };
    if args.t_hj < 0.0 {
        return Err(CmdError::Config(anyhow::anyhow!("horizon must be non-negative")));
    }
    let started = Instant::now();
    let (vf, name) = match args.model {
        ModelName::Hv5d => {
            let model = HvRelativeModel::standard();
            let spec = match &args.grid {
                Some(g) => HvRelativeModel::grid_with_counts(&parse_counts(g)?)
                    .map_err(|e| CmdError::Config(e.into()))?,
                None => HvRelativeModel::default_grid(),
            };
            (solve(&model, &spec, &cfg).map_err(|e| CmdError::Runtime(e.into()))?, model.model_id().to_string())
        }
        ModelName::Static3d => {
            let model = StaticRelativeModel::standard();
            let spec = match &args.grid {
                Some(g) => StaticRelativeModel::grid_with_counts(&parse_counts(g)?)
                    .map_err(|e| CmdError::Config(e.into()))?,
                None => StaticRelativeModel::default_grid(),
            };
            (solve(&model, &spec, &cfg).map_err(|e| CmdError::Runtime(e.into()))?, model.model_id().to_string())
        }
    };
    let out = args.out.unwrap_or_else(|| vf_dir().join(format!("{name}.vf")));
    vf.save(&out).map_err(|e| CmdError::Runtime(e.into()))?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vf.values() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    println!("model      : {name}");
    for (j, d) in vf.spec().dims().iter().enumerate() {
        println!(
            "dim {j}      : [{:+.3}, {:+.3}] x {}{}",
            d.lo,
            d.hi,
            d.count,
            if d.periodic { " (periodic)" } else { "" }
        );
    }
    println!("horizon    : {:.3} s", args.t_hj);
    println!("value range: [{lo:.4}, {hi:.4}]");
    println!("wall time  : {:.2} s", started.elapsed().as_secs_f64());
    println!("saved      : {}", out.display());
    Ok(())
}

fn load_scenario(path: &Option<PathBuf>) -> Result<Scenario, CmdError> {
    match path {
        Some(p) => Scenario::load(p).map_err(classify_scenario_err),
        None => Ok(Scenario::default_u_turn()),
    }
}

fn load_vfs() -> Result<ValueFunctions, CmdError> {
    let dir = vf_dir();
    let load = |name: &str| -> Result<ValueFunction, CmdError> {
        let path = dir.join(name);
        ValueFunction::load(&path).map_err(|e| match e {
            GridError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CmdError::Config(anyhow::anyhow!(
                "value function {} not found; run `dualshield precompute` first or set DUALSHIELD_VF_DIR",
                path.display()
            )),
            other => CmdError::Format(anyhow::Error::from(other).context(format!("loading {}", path.display()))),
        })
    };
    ValueFunctions::new(load("hv5d.vf")?, load("static3d.vf")?).map_err(|e| CmdError::Format(e.into()))
}

fn apply_planner_overrides(
    scn: &mut Scenario,
    guidance: Option<Guidance>,
    samples: Option<usize>,
    denoise: Option<usize>,
    warm: Option<usize>,
    lambda: Option<f64>,
    gamma_cbf: Option<f64>,
) -> Result<(), CmdError> {
    if let Some(g) = guidance {
        scn.planner.guidance = g.into();
    }
    if let Some(s) = samples {
        scn.planner.samples = s;
    }
    if let Some(d) = denoise {
        scn.planner.denoise_steps = d;
    }
    if let Some(w) = warm {
        scn.planner.warm_start_steps = w;
    }
    if let Some(l) = lambda {
        scn.planner.lambda_temp = l;
    }
    if let Some(g) = gamma_cbf {
        scn.shield.gamma_cbf = g;
    }
    scn.validate().map_err(classify_scenario_err)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CmdError> {
    let mut scn = load_scenario(&args.scenario)?;
    apply_planner_overrides(
        &mut scn,
        args.guidance,
        args.samples,
        args.denoise_steps,
        args.warm_steps,
        args.lambda,
        args.gamma_cbf,
    )?;
    let vfs = load_vfs()?;
    let opts = RunOptions { shield_enabled: !args.no_shield, record_timing: true };
    let result = run_trial(&scn, &vfs, args.seed, &opts).map_err(|e| CmdError::Runtime(e.into()))?;

    let dir = &args.export_dir;
    // wall-clock timing goes to stdout only; exported files stay
    // reproducible byte for byte
    let mut file_result = result.clone();
    file_result.mean_plan_time = None;
    let json = serde_json::to_vec_pretty(&file_result).map_err(|e| CmdError::Runtime(e.into()))?;
    write_atomic(&dir.join(format!("trial_{}.json", args.seed)), &json).map_err(|e| CmdError::Runtime(e.into()))?;
    write_atomic(&dir.join(format!("trace_{}.csv", args.seed)), trace_csv(&result, scn.sim.dt).as_bytes())
        .map_err(|e| CmdError::Runtime(e.into()))?;
    write_atomic(&dir.join(format!("plot_{}.svg", args.seed)), svg::render(&scn, &result).as_bytes())
        .map_err(|e| CmdError::Runtime(e.into()))?;

    println!(
        "seed {}: success {} (T_m {}), collision {}, min clearance {:.3} m, mean jerk {:.2} m/s^3, mean plan {:.3} s",
        args.seed,
        result.success,
        result.completion_time.map(|t| format!("{t:.1} s")).unwrap_or_else(|| "-".into()),
        result.collision,
        result.min_distance,
        result.avg_jerk,
        result.mean_plan_time.unwrap_or(f64::NAN),
    );
    println!("exported to {}", dir.display());
    Ok(())
}

fn trace_csv(r: &TrialResult, dt: f64) -> String {
    let mut out = String::from("t,p_x,p_y,theta,v,w,a,w_safe,a_safe,eps,V_min\n");
    for (k, s) in r.ego.iter().enumerate() {
        // the terminal state row carries no executed control
        let (nom, exec, eps, vmin) = if k < r.log.len() {
            let l = &r.log[k];
            (l.nominal, l.executed, l.eps, l.v_min)
        } else {
            let last = r.log.last();
            (
                dualshield::dynamics::Control::ZERO,
                dualshield::dynamics::Control::ZERO,
                0.0,
                last.map(|l| l.v_min).unwrap_or(f64::NAN),
            )
        };
        out.push_str(&format!(
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            k as f64 * dt,
            s.p_x,
            s.p_y,
            s.theta,
            s.v,
            nom.w,
            nom.a,
            exec.w,
            exec.a,
            eps,
            vmin
        ));
    }
    out
}

fn cmd_batch(args: BatchArgs) -> Result<(), CmdError> {
    let mut scn = load_scenario(&args.scenario)?;
    apply_planner_overrides(&mut scn, args.guidance, args.samples, None, None, None, None)?;
    if args.configs == 0 || args.trials == 0 {
        return Err(CmdError::Config(anyhow::anyhow!("need at least one configuration and one trial")));
    }
    let vfs = load_vfs()?;
    let opts = RunOptions { shield_enabled: !args.no_shield, record_timing: true };
    let started = Instant::now();
    let report = run_batch(&scn, &vfs, args.configs, args.trials, args.seed, args.workers, &opts)
        .map_err(|e| CmdError::Runtime(e.into()))?;
    let wall = started.elapsed().as_secs_f64();

    let out = args.out.unwrap_or_else(|| args.export_dir.join("report.json"));
    let mut file_report = report.clone();
    file_report.mean_plan_time = None;
    for t in &mut file_report.trials {
        t.mean_plan_time = None;
    }
    let json = serde_json::to_vec_pretty(&file_report).map_err(|e| CmdError::Runtime(e.into()))?;
    write_atomic(&out, &json).map_err(|e| CmdError::Runtime(e.into()))?;

    println!("{} trials ({} configs x {}), base seed {} ({wall:.0} s wall)", report.trials.len(), args.configs, args.trials, args.seed);
    println!("P_s (%)  P_c (%)  l_r,min (m)  T_m (s)  j (m/s^3)  T_c (s)");
    println!(
        "{:<8.1} {:<8.1} {:<12.3} {:<8} {:<10.2} {:<8}",
        report.p_s,
        report.p_c,
        report.mean_min_distance,
        report.mean_completion_time.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into()),
        report.mean_jerk,
        report.mean_plan_time.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into()),
    );
    println!("report: {}", out.display());
    Ok(())
}


