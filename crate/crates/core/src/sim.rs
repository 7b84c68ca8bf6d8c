//! Closed-loop evaluation: plan, filter, execute, advance traffic, score.
//!
//! One trial is fully determined by `(scenario, seed)`: behaviors, initial
//! speeds, and diffusion noise all come from named streams derived from the
//! trial seed, so batches can run on any number of workers and still produce
//! identical reports.

use crate::dynamics::{effective_control, step, Control, ControlSequence, VehicleState};
use crate::grid::ValueFunction;
use crate::objective::{GoalSpec, SceneSnapshot, StaticObstacle};
use crate::planner::{plan, NoiseSchedule};
use crate::scenario::{BehaviorChoice, FootprintSpec, Scenario, ScenarioError};
use crate::seeds;
use crate::shield::{Shield, ShieldError};
use crate::solver::{HvRelativeModel, StaticRelativeModel};
use crate::traffic::{hv_policy, BehaviorMode, IdmParams};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

/// Success-band thresholds: lateral error, heading error, minimum speed, and
/// the number of consecutive in-band samples that declare the mission done.
pub const SUCCESS_Y_TOL: f64 = 0.2;
pub const SUCCESS_HEADING_TOL: f64 = std::f64::consts::PI / 3.0;
pub const SUCCESS_MIN_SPEED: f64 = 0.2;
pub const SUCCESS_CONSECUTIVE: usize = 5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Objective(#[from] crate::objective::ObjectiveError),
    #[error("value function error: {0}")]
    Grid(#[from] crate::grid::GridError),
}

/// The two precomputed value functions a run needs, shareable across trials.
#[derive(Clone)]
pub struct ValueFunctions {
    pub hv: Arc<ValueFunction>,
    pub statics: Arc<ValueFunction>,
}

impl ValueFunctions {
    pub fn new(hv: ValueFunction, statics: ValueFunction) -> Result<Self, SimError> {
        if hv.ndim() != 5 {
            return Err(SimError::Objective(crate::objective::ObjectiveError::WrongHvDimension(hv.ndim())));
        }
        if statics.ndim() != 3 {
            return Err(SimError::Objective(crate::objective::ObjectiveError::WrongStaticDimension(statics.ndim())));
        }
        Ok(Self { hv: Arc::new(hv), statics: Arc::new(statics) })
    }

    /// Loads `hv5d.vf` and `static3d.vf` from a directory.
    pub fn load_dir(dir: &std::path::Path) -> Result<Self, SimError> {
        let hv = ValueFunction::load(&dir.join("hv5d.vf"))?;
        let st = ValueFunction::load(&dir.join("static3d.vf"))?;
        Self::new(hv, st)
    }
}

/// Per-run switches that are not part of the scenario file.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub shield_enabled: bool,
    /// Record wall-clock planning times. Disable to make result files
    /// byte-for-byte reproducible.
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { shield_enabled: true, record_timing: true }
    }
}

/// Behavior and initial speed drawn for each vehicle of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub behaviors: Vec<BehaviorMode>,
    pub initial_speeds: Vec<f64>,
}

/// Draws the per-trial randomness. Pure function of `(scenario, seed)`.
pub fn trial_setup(scn: &Scenario, seed: u64) -> TrialSetup {
    let mut behaviors = Vec::with_capacity(scn.hvs.len());
    let mut speeds = Vec::with_capacity(scn.hvs.len());
    for (h, hv) in scn.hvs.iter().enumerate() {
        let mode = match hv.behavior {
            BehaviorChoice::Cooperative => BehaviorMode::Cooperative,
            BehaviorChoice::Oblivious => BehaviorMode::Oblivious,
            BehaviorChoice::Adversarial => BehaviorMode::Adversarial,
            BehaviorChoice::Random => {
                let mut rng = seeds::stream(seed, "behavior", &[h as u64]);
                match rng.random_range(0..3u32) {
                    0 => BehaviorMode::Cooperative,
                    1 => BehaviorMode::Oblivious,
                    _ => BehaviorMode::Adversarial,
                }
            }
        };
        let speed = match hv.speed_range {
            Some([lo, hi]) => {
                let mut rng = seeds::stream(seed, "speed", &[h as u64]);
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
            None => hv.start.v,
        };
        behaviors.push(mode);
        speeds.push(speed);
    }
    TrialSetup { behaviors, initial_speeds: speeds }
}

/// One executed step, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub nominal: Control,
    pub executed: Control,
    pub eps: f64,
    pub shield_active: bool,
    /// Minimum interpolated value over the constrained obstacles at the
    /// pre-step state.
    pub v_min: f64,
}

/// Everything one trial produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub setup: TrialSetup,
    /// Ego states, `steps + 1` entries.
    pub ego: Vec<VehicleState>,
    /// Per-vehicle state traces, each `steps + 1` entries.
    pub hvs: Vec<Vec<VehicleState>>,
    pub log: Vec<StepLog>,
    pub success: bool,
    /// Onset time of the stable in-band period (s).
    pub completion_time: Option<f64>,
    /// Smallest dual-circle clearance over the whole trial (m).
    pub min_distance: f64,
    pub collision: bool,
    /// Mean |da/dt| over consecutive executed accelerations (m/s³).
    pub avg_jerk: f64,
    /// Mean wall-clock planning time per step (s); absent when timing is off.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_plan_time: Option<f64>,
    /// Steps whose shield lookup had to clamp a coordinate to the grid.
    pub domain_clamp_steps: usize,
}

/// First onset of `SUCCESS_CONSECUTIVE` consecutive in-band samples.
pub fn detect_success(states: &[VehicleState], goal: &GoalSpec, dt: f64) -> (bool, Option<f64>) {
    let in_band = |s: &VehicleState| {
        (s.p_y - goal.x_g.p_y).abs() <= SUCCESS_Y_TOL
            && crate::dynamics::wrap_to_pi(s.theta - goal.x_g.theta).abs() <= SUCCESS_HEADING_TOL
            && s.v.abs() >= SUCCESS_MIN_SPEED
    };
    let mut run = 0usize;
    for (k, s) in states.iter().enumerate() {
        if in_band(s) {
            run += 1;
            if run == SUCCESS_CONSECUTIVE {
                let onset = k + 1 - SUCCESS_CONSECUTIVE;
                return (true, Some(onset as f64 * dt));
            }
        } else {
            run = 0;
        }
    }
    (false, None)
}

fn body_circles(s: &VehicleState, fp: &FootprintSpec) -> [[f64; 2]; 2] {
    let (sin_t, cos_t) = s.theta.sin_cos();
    [
        [s.p_x + fp.center_offset * cos_t, s.p_y + fp.center_offset * sin_t],
        [s.p_x - fp.center_offset * cos_t, s.p_y - fp.center_offset * sin_t],
    ]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Minimum clearance between the ego's dual-circle body and every other
/// body or obstacle circle over synchronized traces; collision iff it
/// reaches zero.
pub fn collision_and_distance(
    ego: &[VehicleState],
    hvs: &[Vec<VehicleState>],
    statics: &[StaticObstacle],
    fp: &FootprintSpec,
) -> (bool, f64) {
    let mut min_d = f64::INFINITY;
    for (k, es) in ego.iter().enumerate() {
        let ec = body_circles(es, fp);
        for trace in hvs {
            let oc = body_circles(&trace[k.min(trace.len() - 1)], fp);
            for a in &ec {
                for b in &oc {
                    min_d = min_d.min(dist(*a, *b) - 2.0 * fp.circle_radius);
                }
            }
        }
        for o in statics {
            for a in &ec {
                min_d = min_d.min(dist(*a, o.center()) - fp.circle_radius - o.radius);
            }
        }
    }
    (min_d <= 0.0, min_d)
}

/// Mean executed-acceleration rate `|a_k - a_{k-1}| / dt`.
pub fn jerk_metric(executed: &[Control], dt: f64) -> f64 {
    if executed.len() < 2 {
        return 0.0;
    }
    let sum: f64 = executed.windows(2).map(|w| (w[1].a - w[0].a).abs() / dt).sum();
    sum / (executed.len() - 1) as f64
}

/// Runs one closed-loop trial.
pub fn run_trial(scn: &Scenario, vfs: &ValueFunctions, seed: u64, opts: &RunOptions) -> Result<TrialResult, SimError> {
    scn.validate()?;
    let setup = trial_setup(scn, seed);
    let steps = scn.steps();
    let dt = scn.sim.dt;
    let schedule = NoiseSchedule::linear(scn.planner.denoise_steps);
    let mut planner_rng = seeds::stream(seed, "planner", &[]);

    let hv_model = HvRelativeModel::new(&scn.ego_bounds, &scn.hv_bounds, vfs.hv.meta().r_s);
    let static_model = StaticRelativeModel::new(&scn.ego_bounds, vfs.statics.meta().r_s);
    let shield = Shield::new(scn.shield, scn.ego_bounds, &vfs.hv, &vfs.statics, hv_model, static_model)?;

    let mut ego = scn.ego_start;
    let mut hv_states: Vec<VehicleState> = Vec::with_capacity(scn.hvs.len());
    let mut idm: Vec<IdmParams> = Vec::with_capacity(scn.hvs.len());
    for (h, spec) in scn.hvs.iter().enumerate() {
        let mut s = spec.start;
        s.v = setup.initial_speeds[h];
        hv_states.push(s);
        idm.push(IdmParams { v0: setup.initial_speeds[h], ..spec.idm });
    }

    let mut ego_trace = Vec::with_capacity(steps + 1);
    let mut hv_traces: Vec<Vec<VehicleState>> = vec![Vec::with_capacity(steps + 1); scn.hvs.len()];
    ego_trace.push(ego);
    for (h, s) in hv_states.iter().enumerate() {
        hv_traces[h].push(*s);
    }

    let mut log: Vec<StepLog> = Vec::with_capacity(steps);
    let mut executed: Vec<Control> = Vec::with_capacity(steps);
    let mut prev_plan: Option<ControlSequence> = None;
    let mut plan_time_total = 0.0f64;
    let mut domain_clamp_steps = 0usize;

    for k in 0..steps {
        let scene = SceneSnapshot::new(
            scn.goal,
            scn.weights,
            &hv_states,
            &scn.static_obstacles,
            &vfs.hv,
            &vfs.statics,
            scn.planner.guidance,
            scn.shield.num_static,
            scn.planner.horizon,
            dt,
        )?;
        let started = opts.record_timing.then(Instant::now);
        let (seq, _stats) =
            plan(&ego, &scene, prev_plan.as_ref(), &scn.planner, &schedule, dt, &scn.ego_bounds, &mut planner_rng);
        if let Some(t0) = started {
            plan_time_total += t0.elapsed().as_secs_f64();
        }
        // the control the plan actually implies for the plant
        let u_nom = effective_control(seq.control(0), &scn.ego_bounds, ego.v, dt);

        if hv_states.iter().any(|hv| {
            let xr = crate::dynamics::relative_state(&ego, hv);
            vfs.hv.clamps(&xr.as_array())
        }) {
            domain_clamp_steps += 1;
        }

        let (u_exec, eps, active, v_min) = if opts.shield_enabled {
            let d = shield.filter(u_nom, &ego, &hv_states, &scn.static_obstacles)?;
            (effective_control(d.control, &scn.ego_bounds, ego.v, dt), d.eps, d.active, d.min_value)
        } else {
            // still evaluate the safety margin for the log
            let mut scratch = Vec::new();
            let v_min = scene.min_value_at(&ego, 0, &mut scratch).unwrap_or(f64::INFINITY);
            (u_nom, 0.0, false, v_min)
        };

        log.push(StepLog { t: k as f64 * dt, nominal: u_nom, executed: u_exec, eps, shield_active: active, v_min });
        executed.push(u_exec);

        // synchronized update: all agents act on the time-k world
        let ego_before = ego;
        ego = step(&ego, &u_exec, dt);
        for (h, hv) in hv_states.iter_mut().enumerate() {
            let u_h = hv_policy(hv, setup.behaviors[h], &ego_before, &scn.hvs[h].lane, &idm[h], &scn.hv_bounds);
            *hv = step(hv, &effective_control(u_h, &scn.hv_bounds, hv.v, dt), dt);
        }

        ego_trace.push(ego);
        for (h, s) in hv_states.iter().enumerate() {
            hv_traces[h].push(*s);
        }
        // store the executable sequence: outside the box the cost landscape
        // is flat (rollout clamps), so unclamped coordinates would random-walk
        // across warm starts
        let executable = crate::dynamics::rollout(&ego_before, &seq, dt, &scn.ego_bounds);
        prev_plan = Some(ControlSequence::from_controls(&executable.controls, dt));
    }

    let (success, completion_time) = detect_success(&ego_trace, &scn.goal, dt);
    let (collision, min_distance) =
        collision_and_distance(&ego_trace, &hv_traces, &scn.static_obstacles, &scn.footprint);
    let avg_jerk = jerk_metric(&executed, dt);

    Ok(TrialResult {
        seed,
        setup,
        ego: ego_trace,
        hvs: hv_traces,
        log,
        success,
        completion_time,
        min_distance,
        collision,
        avg_jerk,
        mean_plan_time: opts.record_timing.then(|| plan_time_total / steps as f64),
        domain_clamp_steps,
    })
}

/// Summary over a batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub base_seed: u64,
    pub num_configs: usize,
    pub trials_per_config: usize,
    pub trials: Vec<TrialResult>,
    /// Success rate in percent.
    pub p_s: f64,
    /// Collision rate in percent.
    pub p_c: f64,
    /// Mean completion time over successful trials (s).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_completion_time: Option<f64>,
    /// Mean of the per-trial minimum clearances (m).
    pub mean_min_distance: f64,
    pub mean_jerk: f64,
    /// Mean planning time per step (s); absent when timing is off.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_plan_time: Option<f64>,
}

impl BatchReport {
    pub fn aggregate(base_seed: u64, num_configs: usize, trials_per_config: usize, trials: Vec<TrialResult>) -> Self {
        let n = trials.len().max(1) as f64;
        let successes: Vec<&TrialResult> = trials.iter().filter(|t| t.success).collect();
        let p_s = 100.0 * successes.len() as f64 / n;
        let p_c = 100.0 * trials.iter().filter(|t| t.collision).count() as f64 / n;
        let mean_completion_time = if successes.is_empty() {
            None
        } else {
            Some(successes.iter().filter_map(|t| t.completion_time).sum::<f64>() / successes.len() as f64)
        };
        let mean_min_distance = trials.iter().map(|t| t.min_distance).sum::<f64>() / n;
        let mean_jerk = trials.iter().map(|t| t.avg_jerk).sum::<f64>() / n;
        let times: Vec<f64> = trials.iter().filter_map(|t| t.mean_plan_time).collect();
        let mean_plan_time =
            if times.is_empty() { None } else { Some(times.iter().sum::<f64>() / times.len() as f64) };
        Self {
            base_seed,
            num_configs,
            trials_per_config,
            trials,
            p_s,
            p_c,
            mean_completion_time,
            mean_min_distance,
            mean_jerk,
            mean_plan_time,
        }
    }
}

/// Seed of one batch trial.
pub fn batch_trial_seed(base_seed: u64, config: usize, trial: usize) -> u64 {
    seeds::derive(base_seed, "trial", &[config as u64, trial as u64])
}

/// Runs `num_configs x trials_per_config` trials, optionally on a bounded
/// worker pool. Per-trial seeds depend only on the indices, so the report is
/// identical for any worker count.
pub fn run_batch(
    scn: &Scenario,
    vfs: &ValueFunctions,
    num_configs: usize,
    trials_per_config: usize,
    base_seed: u64,
    workers: Option<usize>,
    opts: &RunOptions,
) -> Result<BatchReport, SimError> {
    let seeds_list: Vec<u64> = (0..num_configs)
        .flat_map(|c| (0..trials_per_config).map(move |t| batch_trial_seed(base_seed, c, t)))
        .collect();
    let run_all = || -> Result<Vec<TrialResult>, SimError> {
        seeds_list.par_iter().map(|&s| run_trial(scn, vfs, s, opts)).collect()
    };
    let trials = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool construction")
            .install(run_all),
        None => run_all(),
    }?;
    Ok(BatchReport::aggregate(base_seed, num_configs, trials_per_config, trials))
}
