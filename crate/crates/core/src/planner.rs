//! Model-based diffusion over control sequences.
//!
//! Trajectory optimization is cast as sampling a Gibbs distribution over
//! control sequences, `p(u) ~ exp(-J(u)/lambda)`. A forward process defines
//! noisy marginals through a fixed schedule; the reverse process walks back
//! down the noise levels with a score estimated on the fly by Monte Carlo:
//! sample clean candidates around the current iterate, weight them by cost,
//! and combine their softmax mean with the iterate. No learned network is
//! involved, so the planner adapts to scene changes instantly.

use crate::dynamics::{rollout, ControlBounds, ControlSequence, VehicleState};
use crate::objective::{total_cost, GuidanceMode, SceneSnapshot};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Noise schedule: per-level retention factors `alpha_i` and their running
/// products. Levels are 1-based to match the reverse recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear variance schedule from `1e-4` to `2e-2`; at 100 steps the
    /// terminal retention is ~0.36, deep enough that the start of the
    /// reverse pass is close to pure noise for unit-scale sequences.
    pub fn linear(n_steps: usize) -> Self {
        Self::from_betas(&linear_betas(n_steps, 1e-4, 2e-2))
    }

    pub fn from_betas(betas: &[f64]) -> Self {
        assert!(!betas.is_empty(), "schedule needs at least one step");
        assert!(betas.iter().all(|b| *b > 0.0 && *b < 1.0), "betas must lie in (0, 1)");
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Self { alphas, alpha_bars }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `alpha_i`, 1-based.
    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    /// Running product `alpha_bar_i`, 1-based.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i - 1]
    }
}

pub fn linear_betas(n_steps: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(n_steps >= 1);
    if n_steps == 1 {
        return vec![lo];
    }
    (0..n_steps).map(|i| lo + (hi - lo) * i as f64 / (n_steps - 1) as f64).collect()
}

/// Planner parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Monte Carlo candidates per denoising step.
    pub samples: usize,
    /// Denoising steps for a cold start.
    pub denoise_steps: usize,
    /// Denoising steps after warm-starting from the previous solution.
    pub warm_start_steps: usize,
    /// Control horizon (number of `(w, a)` pairs).
    pub horizon: usize,
    /// Gibbs temperature.
    pub lambda_temp: f64,
    pub guidance: GuidanceMode,
    /// Seed for standalone use; the simulator derives its own streams.
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            denoise_steps: 100,
            warm_start_steps: 5,
            horizon: 50,
            lambda_temp: 0.1,
            guidance: GuidanceMode::Hj,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.samples < 1 {
            return Err("need at least one sample".into());
        }
        if self.warm_start_steps > self.denoise_steps {
            return Err(format!(
                "warm-start steps ({}) cannot exceed denoise steps ({})",
                self.warm_start_steps, self.denoise_steps
            ));
        }
        if self.horizon < 1 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.lambda_temp > 0.0) {
            return Err("temperature must be positive".into());
        }
        Ok(())
    }
}

/// Per-denoising-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub level: usize,
    pub min_cost: f64,
    pub mean_cost: f64,
    /// Effective sample size of the softmax weights.
    pub ess: f64,
}

/// Cost of one candidate control sequence; evaluated in parallel, must be
/// pure.
pub trait SequenceCost: Sync {
    fn cost(&self, seq: &ControlSequence) -> f64;
}

impl<F: Fn(&ControlSequence) -> f64 + Sync> SequenceCost for F {
    fn cost(&self, seq: &ControlSequence) -> f64 {
        self(seq)
    }
}

/// Draws `n` clean-sequence candidates around the level-`i` iterate:
/// mean `u / sqrt(alpha_bar_i)`, per-coordinate variance
/// `(1 - alpha_bar_i) / alpha_bar_i`.
pub fn sample_candidates(
    u: &ControlSequence,
    i: usize,
    n: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Vec<ControlSequence> {
    let ab = schedule.alpha_bar(i);
    let scale = 1.0 / ab.sqrt();
    let std = ((1.0 - ab) / ab).sqrt();
    let len = u.as_slice().len();
    (0..n)
        .map(|_| {
            let data: Vec<f64> = u
                .as_slice()
                .iter()
                .map(|&c| {
                    let z: f64 = rng.sample(StandardNormal);
                    c * scale + std * z
                })
                .take(len)
                .collect();
            ControlSequence::from_data(data, u.dt())
        })
        .collect()
}

/// Softmax-weighted mean of the candidates under `exp(-J/lambda)`, computed
/// with a max shift so the weights are exactly invariant to adding any
/// constant to all costs. Candidates with non-finite cost get weight zero;
/// if none are finite the plain mean of the candidates is returned.
pub fn weighted_mean(candidates: &[ControlSequence], costs: &[f64], lambda: f64) -> ControlSequence {
    assert_eq!(candidates.len(), costs.len());
    assert!(!candidates.is_empty());
    let len = candidates[0].as_slice().len();
    let best = costs.iter().cloned().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    let mut acc = vec![0.0; len];
    let mut total_w = 0.0;
    if best.is_finite() {
        for (cand, &cost) in candidates.iter().zip(costs) {
            if !cost.is_finite() {
                continue;
            }
            let w = (-(cost - best) / lambda).exp();
            if w == 0.0 {
                continue;
            }
            total_w += w;
            for (a, &c) in acc.iter_mut().zip(cand.as_slice()) {
                *a += w * c;
            }
        }
    }
    if total_w == 0.0 {
        // degenerate: fall back to the unweighted candidate mean
        for cand in candidates {
            for (a, &c) in acc.iter_mut().zip(cand.as_slice()) {
                *a += c;
            }
        }
        total_w = candidates.len() as f64;
    }
    for a in &mut acc {
        *a /= total_w;
    }
    ControlSequence::from_data(acc, candidates[0].dt())
}

/// Monte Carlo score estimate at level `i` from the weighted clean mean.
pub fn score(u: &ControlSequence, u_bar: &ControlSequence, i: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(i);
    let denom = 1.0 - ab;
    let root = ab.sqrt();
    u.as_slice().iter().zip(u_bar.as_slice()).map(|(&ui, &bi)| (-ui + root * bi) / denom).collect()
}

/// One reverse step: `u_{i-1} = (u_i + (1 - alpha_bar_i) * score) / sqrt(alpha_i)`.
pub fn reverse_step(u: &ControlSequence, score: &[f64], i: usize, schedule: &NoiseSchedule) -> ControlSequence {
    let ab = schedule.alpha_bar(i);
    let root_a = schedule.alpha(i).sqrt();
    let data: Vec<f64> =
        u.as_slice().iter().zip(score).map(|(&ui, &s)| (ui + (1.0 - ab) * s) / root_a).collect();
    ControlSequence::from_data(data, u.dt())
}

/// Receding-horizon warm start: shift the stale plan one control period,
/// duplicate the final step, and re-noise onto level `n_ws` through the
/// forward process.
pub fn warm_start(
    prev: &ControlSequence,
    n_ws: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> ControlSequence {
    let shifted = prev.shifted_left();
    let ab = schedule.alpha_bar(n_ws);
    let root = ab.sqrt();
    let std = (1.0 - ab).sqrt();
    let data: Vec<f64> = shifted
        .as_slice()
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            root * c + std * z
        })
        .collect();
    ControlSequence::from_data(data, prev.dt())
}

/// Runs the reverse process from `start_level` down to 1 and returns the
/// clean sequence with per-step diagnostics. Candidate generation is
/// sequential on `rng` for reproducibility; cost evaluation fans out over
/// threads and is reduced in index order, so results do not depend on the
/// worker count.
pub fn denoise<C: SequenceCost>(
    init: ControlSequence,
    start_level: usize,
    cost: &C,
    cfg: &PlannerConfig,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> (ControlSequence, Vec<StepStats>) {
    let mut u = init;
    let mut stats = Vec::with_capacity(start_level);
    for i in (1..=start_level).rev() {
        let candidates = sample_candidates(&u, i, cfg.samples, schedule, rng);
        let costs: Vec<f64> = candidates.par_iter().map(|c| cost.cost(c)).collect();
        let u_bar = weighted_mean(&candidates, &costs, cfg.lambda_temp);
        stats.push(step_stats(i, &costs, cfg.lambda_temp));
        let s = score(&u, &u_bar, i, schedule);
        u = reverse_step(&u, &s, i, schedule);
    }
    (u, stats)
}

fn step_stats(level: usize, costs: &[f64], lambda: f64) -> StepStats {
    let finite: Vec<f64> = costs.iter().cloned().filter(|c| c.is_finite()).collect();
    if finite.is_empty() {
        return StepStats { level, min_cost: f64::NAN, mean_cost: f64::NAN, ess: 0.0 };
    }
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    for c in &finite {
        let w = (-(c - min) / lambda).exp();
        sw += w;
        sw2 += w * w;
    }
    StepStats { level, min_cost: min, mean_cost: mean, ess: sw * sw / sw2 }
}

/// Driving cost: roll the candidate out from `x0` and score the trajectory.
pub struct DriveCost<'a> {
    pub x0: VehicleState,
    pub scene: &'a SceneSnapshot<'a>,
    pub dt: f64,
    pub bounds: ControlBounds,
}

impl SequenceCost for DriveCost<'_> {
    fn cost(&self, seq: &ControlSequence) -> f64 {
        let traj = rollout(&self.x0, seq, self.dt, &self.bounds);
        total_cost(&traj, self.scene)
    }
}

/// Plans one control sequence: cold starts denoise pure Gaussian noise over
/// all levels, warm starts re-noise the shifted previous plan onto a shallow
/// level.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    x0: &VehicleState,
    scene: &SceneSnapshot,
    prev: Option<&ControlSequence>,
    cfg: &PlannerConfig,
    schedule: &NoiseSchedule,
    dt: f64,
    bounds: &ControlBounds,
    rng: &mut ChaCha8Rng,
) -> (ControlSequence, Vec<StepStats>) {
    let cost = DriveCost { x0: *x0, scene, dt, bounds: *bounds };
    let (init, start) = match prev {
        Some(p) if cfg.warm_start_steps >= 1 => (warm_start(p, cfg.warm_start_steps, schedule, rng), cfg.warm_start_steps),
        _ => {
            let data: Vec<f64> = (0..2 * cfg.horizon).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            (ControlSequence::from_data(data, dt), cfg.denoise_steps)
        }
    };
    denoise(init, start, &cost, cfg, schedule, rng)
}
