//! Trajectory scoring: a goal-tracking term, rule/boundary/spin
//! regularizers, and a safety guidance term that reads the precomputed
//! value functions along the rollout.

use crate::dynamics::{relative_state, Control, Trajectory, VehicleState};
use crate::grid::{GridError, ValueFunction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("vehicle value function must be 5-dimensional, got {0}")]
    WrongHvDimension(usize),
    #[error("static-obstacle value function must be 3-dimensional, got {0}")]
    WrongStaticDimension(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Scoring weights. Defaults carry the tuned values for the scaled U-turn
/// environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    /// State-error weights over `(p_x, p_y, theta, v)`; no longitudinal
    /// position penalty by default, the task is lane keeping, not a waypoint.
    pub q: [f64; 4],
    pub w_goal: f64,
    pub w_reg: f64,
    /// Wrong-way penalty gain.
    pub gamma_turn: f64,
    /// Lateral-boundary penalty gain.
    pub gamma_b: f64,
    /// Dry-steering penalty gain.
    pub gamma_spin: f64,
    /// Speed scale inside the dry-steering penalty.
    pub c_v: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Slope of the safety penalty on negative values.
    pub gamma: f64,
    /// Weight of the whole safety term.
    pub lambda_s: f64,
    /// Clearance margin added on top of the failure radius in distance
    /// guidance mode.
    pub distance_margin: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            q: [0.0, 20.0, 5.0, 1.0],
            w_goal: 1.0,
            w_reg: 1.0,
            gamma_turn: 50.0,
            gamma_b: 20.0,
            gamma_spin: 1.0,
            c_v: 5.0,
            y_min: -1.5,
            y_max: 1.5,
            gamma: 10.0,
            lambda_s: 1.0,
            distance_margin: 0.1,
        }
    }
}

/// The target driving state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub x_g: VehicleState,
}

/// How candidate trajectories are steered away from obstacles: value-function
/// lookups, or the plain distance penalty used by the unshielded ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    Hj,
    Distance,
}

/// A circular static obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl StaticObstacle {
    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Weighted squared error to the goal; the heading error is wrapped.
pub fn goal_cost(s: &VehicleState, g: &GoalSpec, q: &[f64; 4]) -> f64 {
    let dth = crate::dynamics::wrap_to_pi(s.theta - g.x_g.theta);
    q[0] * (s.p_x - g.x_g.p_x).powi(2)
        + q[1] * (s.p_y - g.x_g.p_y).powi(2)
        + q[2] * dth * dth
        + q[3] * (s.v - g.x_g.v).powi(2)
}

/// Penalizes driving with the traffic direction of the opposite lane
/// (positive y while heading has a positive x component).
pub fn rule_cost(s: &VehicleState, w: &ObjectiveWeights) -> f64 {
    w.gamma_turn * s.p_y.max(0.0) * s.theta.cos().max(0.0)
}

/// Quadratic penalty outside the lateral road boundaries.
pub fn boundary_cost(s: &VehicleState, w: &ObjectiveWeights) -> f64 {
    w.gamma_b * ((s.p_y - w.y_max).max(0.0).powi(2) + (w.y_min - s.p_y).max(0.0).powi(2))
}

/// Penalizes yawing while nearly stationary.
pub fn spin_cost(s: &VehicleState, u: &Control, w: &ObjectiveWeights) -> f64 {
    w.gamma_spin * u.w * u.w * (-w.c_v * s.v * s.v).exp()
}

/// Constant-velocity prediction `t` seconds ahead.
pub fn predict(hv: &VehicleState, t: f64) -> VehicleState {
    VehicleState::new(hv.p_x + t * hv.v * hv.theta.cos(), hv.p_y + t * hv.v * hv.theta.sin(), hv.theta, hv.v)
}

/// Everything a cost evaluation needs, frozen at plan time: goal, weights,
/// per-step predictions of the other vehicles, obstacle geometry, and the
/// two value functions. Read-only, so candidate evaluations can share it
/// across threads.
pub struct SceneSnapshot<'a> {
    pub goal: GoalSpec,
    pub weights: ObjectiveWeights,
    pub statics: &'a [StaticObstacle],
    pub vf_hv: &'a ValueFunction,
    pub vf_static: &'a ValueFunction,
    pub guidance: GuidanceMode,
    /// How many nearest static obstacles enter the safety term per step.
    pub num_static: usize,
    /// Predicted state of each other vehicle at every step, `hv_pred[h][k]`.
    hv_pred: Vec<Vec<VehicleState>>,
    r_hv: f64,
    r_static: f64,
}

impl<'a> SceneSnapshot<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        goal: GoalSpec,
        weights: ObjectiveWeights,
        hv_states: &[VehicleState],
        statics: &'a [StaticObstacle],
        vf_hv: &'a ValueFunction,
        vf_static: &'a ValueFunction,
        guidance: GuidanceMode,
        num_static: usize,
        horizon: usize,
        dt: f64,
    ) -> Result<Self, ObjectiveError> {
        if vf_hv.ndim() != 5 {
            return Err(ObjectiveError::WrongHvDimension(vf_hv.ndim()));
        }
        if vf_static.ndim() != 3 {
            return Err(ObjectiveError::WrongStaticDimension(vf_static.ndim()));
        }
        let hv_pred = hv_states
            .iter()
            .map(|hv| (0..=horizon).map(|k| predict(hv, k as f64 * dt)).collect())
            .collect();
        Ok(Self {
            goal,
            weights,
            statics,
            vf_hv,
            vf_static,
            guidance,
            num_static,
            hv_pred,
            r_hv: vf_hv.meta().r_s,
            r_static: vf_static.meta().r_s,
        })
    }

    pub fn hv_prediction(&self, h: usize, k: usize) -> &VehicleState {
        &self.hv_pred[h][k]
    }

    pub fn num_hvs(&self) -> usize {
        self.hv_pred.len()
    }

    /// Indices of the `num_static` obstacles nearest to `pos`.
    fn nearest_statics(&self, pos: [f64; 2], out: &mut Vec<usize>) {
        out.clear();
        let keep = self.num_static.min(self.statics.len());
        for _ in 0..keep {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (i, o) in self.statics.iter().enumerate() {
                if out.contains(&i) {
                    continue;
                }
                let d = (o.x - pos[0]).powi(2) + (o.y - pos[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            out.push(best);
        }
    }

    /// Minimum value over all tracked vehicles and the nearest static
    /// obstacles at ego state `s`, with other vehicles at their step-`k`
    /// prediction. `None` when there is nothing to look at.
    pub fn min_value_at(&self, s: &VehicleState, k: usize, scratch: &mut Vec<usize>) -> Option<f64> {
        let mut vmin = f64::INFINITY;
        for pred in &self.hv_pred {
            let xr = relative_state(s, &pred[k.min(pred.len() - 1)]);
            let v = self.vf_hv.interpolate(&xr.as_array()).expect("dimension checked at construction");
            vmin = vmin.min(v);
        }
        self.nearest_statics(s.position(), scratch);
        for &i in scratch.iter() {
            let o = &self.statics[i];
            let dx = o.x - s.p_x;
            let dy = o.y - s.p_y;
            let (sin_t, cos_t) = s.theta.sin_cos();
            let x3 = [cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy, s.v];
            let v = self.vf_static.interpolate(&x3).expect("dimension checked at construction");
            vmin = vmin.min(v);
        }
        if vmin.is_finite() {
            Some(vmin)
        } else {
            None
        }
    }

    /// Worst clearance violation (failure radius + margin minus center
    /// distance, floored at zero) for the distance-guidance ablation.
    fn distance_violation_at(&self, s: &VehicleState, k: usize, scratch: &mut Vec<usize>) -> f64 {
        let m = self.weights.distance_margin;
        let mut worst = 0.0f64;
        for pred in &self.hv_pred {
            let p = &pred[k.min(pred.len() - 1)];
            let d = ((p.p_x - s.p_x).powi(2) + (p.p_y - s.p_y).powi(2)).sqrt();
            worst = worst.max(self.r_hv + m - d);
        }
        self.nearest_statics(s.position(), scratch);
        for &i in scratch.iter() {
            let o = &self.statics[i];
            let d = ((o.x - s.p_x).powi(2) + (o.y - s.p_y).powi(2)).sqrt();
            worst = worst.max(self.r_static + m - d);
        }
        worst
    }
}

/// Safety guidance term along a trajectory: penalize every step whose
/// minimum value went negative (or, in distance mode, whose clearance did).
pub fn safety_penalty(traj: &Trajectory, scene: &SceneSnapshot) -> f64 {
    let w = &scene.weights;
    let mut scratch = Vec::with_capacity(scene.num_static);
    let mut total = 0.0;
    for k in 0..traj.horizon() {
        let s = &traj.states[k];
        let step = match scene.guidance {
            GuidanceMode::Hj => match scene.min_value_at(s, k, &mut scratch) {
                Some(vmin) => (-vmin).max(0.0),
                None => 0.0,
            },
            GuidanceMode::Distance => scene.distance_violation_at(s, k, &mut scratch),
        };
        total += w.gamma * step;
    }
    w.lambda_s * total
}

/// Itemized trajectory cost, summed over the first `N` states and controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub goal: f64,
    pub rule: f64,
    pub boundary: f64,
    pub spin: f64,
    pub safety: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.goal + self.rule + self.boundary + self.spin + self.safety
    }
}

pub fn cost_breakdown(traj: &Trajectory, scene: &SceneSnapshot) -> CostBreakdown {
    let w = &scene.weights;
    let mut b = CostBreakdown { goal: 0.0, rule: 0.0, boundary: 0.0, spin: 0.0, safety: 0.0 };
    for k in 0..traj.horizon() {
        let s = &traj.states[k];
        let u = &traj.controls[k];
        b.goal += w.w_goal * goal_cost(s, &scene.goal, &w.q);
        b.rule += w.w_reg * rule_cost(s, w);
        b.boundary += w.w_reg * boundary_cost(s, w);
        b.spin += w.w_reg * spin_cost(s, u, w);
    }
    b.safety = safety_penalty(traj, scene);
    b
}

/// Full trajectory cost: performance terms plus the safety guidance term.
pub fn total_cost(traj: &Trajectory, scene: &SceneSnapshot) -> f64 {
    let w = &scene.weights;
    let mut scratch = Vec::with_capacity(scene.num_static);
    let mut total = 0.0;
    for k in 0..traj.horizon() {
        let s = &traj.states[k];
        let u = &traj.controls[k];
        total += w.w_goal * goal_cost(s, &scene.goal, &w.q)
            + w.w_reg * (rule_cost(s, w) + boundary_cost(s, w) + spin_cost(s, u, w));
        let step = match scene.guidance {
            GuidanceMode::Hj => match scene.min_value_at(s, k, &mut scratch) {
                Some(vmin) => (-vmin).max(0.0),
                None => 0.0,
            },
            GuidanceMode::Distance => scene.distance_violation_at(s, k, &mut scratch),
        };
        total += w.lambda_s * w.gamma * step;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout, ControlBounds, ControlSequence};
    use crate::grid::{GridDim, GridSpec, ValueFunction, VfMeta};
    use rand::Rng as _;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn goal() -> GoalSpec {
        GoalSpec { x_g: VehicleState::new(2.0, -0.7, 0.0, 0.5) }
    }

    /// A 5D value function that is `level` everywhere.
    fn flat_vf5(level: f64) -> ValueFunction {
        let spec = GridSpec::new(vec![
            GridDim::linear(-8.0, 8.0, 3),
            GridDim::linear(-8.0, 8.0, 3),
            GridDim::periodic(0.0, 2.0 * PI, 4),
            GridDim::linear(0.0, 4.0, 2),
            GridDim::linear(0.0, 4.0, 2),
        ])
        .unwrap();
        let n = spec.node_count();
        let meta = VfMeta { model: "hv5d".into(), r_s: 0.6, horizon: 1.0, ego_bounds: vec![], disturbance_bounds: vec![] };
        ValueFunction::new(spec, vec![level; n], meta).unwrap()
    }

    fn flat_vf3(level: f64) -> ValueFunction {
        let spec = GridSpec::new(vec![
            GridDim::linear(-8.0, 8.0, 3),
            GridDim::linear(-8.0, 8.0, 3),
            GridDim::linear(0.0, 4.0, 2),
        ])
        .unwrap();
        let n = spec.node_count();
        let meta =
            VfMeta { model: "static3d".into(), r_s: 0.4, horizon: 1.0, ego_bounds: vec![], disturbance_bounds: vec![] };
        ValueFunction::new(spec, vec![level; n], meta).unwrap()
    }

    fn snapshot<'a>(
        hvs: &[VehicleState],
        statics: &'a [StaticObstacle],
        vf5: &'a ValueFunction,
        vf3: &'a ValueFunction,
        guidance: GuidanceMode,
        horizon: usize,
    ) -> SceneSnapshot<'a> {
        SceneSnapshot::new(goal(), ObjectiveWeights::default(), hvs, statics, vf5, vf3, guidance, 3, horizon, 0.1)
            .unwrap()
    }

    #[test]
    fn goal_cost_zero_at_goal() {
        let g = goal();
        assert_eq!(goal_cost(&g.x_g, &g, &ObjectiveWeights::default().q), 0.0);
    }

    #[test]
    fn goal_cost_ignores_longitudinal_position() {
        let g = goal();
        let s = VehicleState::new(5.0, -0.7, 0.0, 0.5);
        assert_eq!(goal_cost(&s, &g, &ObjectiveWeights::default().q), 0.0);
    }

    #[test]
    fn goal_cost_at_start_pose() {
        let g = goal();
        let s = VehicleState::new(2.0, 0.7, PI, 0.5);
        let c = goal_cost(&s, &g, &ObjectiveWeights::default().q);
        let want = 20.0 * 1.4 * 1.4 + 5.0 * PI * PI;
        assert!((c - want).abs() < 1e-9, "{c} vs {want}");
        assert!((c - 88.548).abs() < 1e-3);
    }

    #[test]
    fn rule_cost_cases() {
        let w = ObjectiveWeights::default();
        assert_eq!(rule_cost(&VehicleState::new(0.0, -0.7, 1.0, 1.0), &w), 0.0);
        let c = rule_cost(&VehicleState::new(0.0, 0.5, 0.0, 1.0), &w);
        assert!((c - 25.0).abs() < 1e-12);
        assert_eq!(rule_cost(&VehicleState::new(0.0, 0.5, PI, 1.0), &w), 0.0);
    }

    #[test]
    fn boundary_cost_cases() {
        let w = ObjectiveWeights::default();
        assert_eq!(boundary_cost(&VehicleState::new(0.0, 0.0, 0.0, 1.0), &w), 0.0);
        let c = boundary_cost(&VehicleState::new(0.0, 1.6, 0.0, 1.0), &w);
        assert!((c - 0.2).abs() < 1e-9);
        let c = boundary_cost(&VehicleState::new(0.0, -2.0, 0.0, 1.0), &w);
        assert!((c - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spin_cost_cases() {
        let w = ObjectiveWeights::default();
        assert_eq!(spin_cost(&VehicleState::new(0.0, 0.0, 0.0, 1.0), &Control::ZERO, &w), 0.0);
        let c = spin_cost(&VehicleState::new(0.0, 0.0, 0.0, 0.0), &Control::new(PI / 3.0, 0.0), &w);
        assert!((c - (PI / 3.0) * (PI / 3.0)).abs() < 1e-12);
        let c = spin_cost(&VehicleState::new(0.0, 0.0, 0.0, 2.0), &Control::new(PI / 3.0, 0.0), &w);
        assert!((c - (PI / 3.0) * (PI / 3.0) * (-20.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn safety_penalty_zero_when_all_values_positive() {
        let vf5 = flat_vf5(1.0);
        let vf3 = flat_vf3(1.0);
        let hvs = [VehicleState::new(3.0, 0.0, 0.0, 1.0)];
        let scene = snapshot(&hvs, &[], &vf5, &vf3, GuidanceMode::Hj, 5);
        let traj = rollout(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlSequence::zeros(5, 0.1),
            0.1,
            &ControlBounds::ego_default(),
        );
        assert_eq!(safety_penalty(&traj, &scene), 0.0);
    }

    #[test]
    fn safety_penalty_single_negative_step() {
        let vf5 = flat_vf5(-0.2);
        let vf3 = flat_vf3(1.0);
        let hvs = [VehicleState::new(3.0, 0.0, 0.0, 1.0)];
        let scene = snapshot(&hvs, &[], &vf5, &vf3, GuidanceMode::Hj, 1);
        let traj = rollout(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlSequence::zeros(1, 0.1),
            0.1,
            &ControlBounds::ego_default(),
        );
        let pen = safety_penalty(&traj, &scene);
        assert!((pen - 2.0).abs() < 1e-12, "lambda_s * gamma * 0.2 = 2, got {pen}");
    }

    #[test]
    fn safety_penalty_monotone_in_value() {
        let vf3 = flat_vf3(1.0);
        let hvs = [VehicleState::new(1.0, 0.0, 0.0, 1.0)];
        let traj = rollout(
            &VehicleState::new(0.0, 0.0, 0.0, 1.0),
            &ControlSequence::zeros(3, 0.1),
            0.1,
            &ControlBounds::ego_default(),
        );
        let mut prev = None;
        for level in [0.5, 0.0, -0.1, -0.4, -2.0] {
            let vf5 = flat_vf5(level);
            let scene = snapshot(&hvs, &[], &vf5, &vf3, GuidanceMode::Hj, 3);
            let pen = safety_penalty(&traj, &scene);
            if let Some(p) = prev {
                assert!(pen >= p, "smaller value must not shrink the penalty");
            }
            prev = Some(pen);
        }
    }

    #[test]
    fn total_cost_stationary_at_goal_is_zero() {
        let vf5 = flat_vf5(1.0);
        let vf3 = flat_vf3(1.0);
        let scene = snapshot(&[], &[], &vf5, &vf3, GuidanceMode::Hj, 10);
        // sit at the goal pose with matching speed and zero controls
        let traj = rollout(&goal().x_g, &ControlSequence::zeros(10, 0.1), 0.1, &ControlBounds::ego_default());
        // v stays 0.5 and heading stays 0, so only p_x drifts, which is unweighted
        assert!(total_cost(&traj, &scene) < 1e-12);
    }

    #[test]
    fn total_cost_single_state_start_pose() {
        let vf5 = flat_vf5(1.0);
        let vf3 = flat_vf3(1.0);
        let scene = snapshot(&[], &[], &vf5, &vf3, GuidanceMode::Hj, 1);
        let traj = rollout(
            &VehicleState::new(2.0, 0.7, PI, 0.5),
            &ControlSequence::zeros(1, 0.1),
            0.1,
            &ControlBounds::ego_default(),
        );
        let c = total_cost(&traj, &scene);
        assert!((c - 88.548).abs() < 1e-2, "goal term only, got {c}");
    }

    #[test]
    fn total_cost_matches_itemized_sum() {
        let vf5 = flat_vf5(-0.05);
        let vf3 = flat_vf3(0.3);
        let statics = [
            StaticObstacle { x: 0.5, y: 0.0, radius: 0.1 },
            StaticObstacle { x: 1.0, y: 0.0, radius: 0.1 },
            StaticObstacle { x: 1.5, y: 0.0, radius: 0.1 },
            StaticObstacle { x: 2.0, y: 0.0, radius: 0.1 },
        ];
        let hvs = [VehicleState::new(-2.0, -0.7, 0.0, 1.2), VehicleState::new(-4.0, -0.7, 0.0, 0.8)];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let guidance = if trial % 2 == 0 { GuidanceMode::Hj } else { GuidanceMode::Distance };
            let scene = snapshot(&hvs, &statics, &vf5, &vf3, guidance, 8);
            let data: Vec<f64> = (0..16).map(|_| rng.random_range(-1.5..1.5)).collect();
            let x0 = VehicleState::new(
                rng.random_range(-1.0..3.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..2.0),
            );
            let traj = rollout(&x0, &ControlSequence::from_data(data, 0.1), 0.1, &ControlBounds::ego_default());
            let total = total_cost(&traj, &scene);
            let parts = cost_breakdown(&traj, &scene);
            assert!((total - parts.total()).abs() < 1e-9, "trial {trial}: {total} vs {}", parts.total());
            assert!(total >= 0.0);
        }
    }

    #[test]
    fn cost_invariant_to_longitudinal_translation_without_obstacles() {
        let vf5 = flat_vf5(1.0);
        let vf3 = flat_vf3(1.0);
        let scene = snapshot(&[], &[], &vf5, &vf3, GuidanceMode::Hj, 6);
        let seq = ControlSequence::from_data(vec![0.2, 0.5, -0.1, 0.3, 0.0, -0.2, 0.1, 0.0, 0.0, 0.1, -0.3, 0.2], 0.1);
        let b = ControlBounds::ego_default();
        let t1 = rollout(&VehicleState::new(0.0, 0.3, 0.5, 1.0), &seq, 0.1, &b);
        let t2 = rollout(&VehicleState::new(57.0, 0.3, 0.5, 1.0), &seq, 0.1, &b);
        let c1 = total_cost(&t1, &scene);
        let c2 = total_cost(&t2, &scene);
        assert!((c1 - c2).abs() < 1e-9, "{c1} vs {c2}");
    }

    #[test]
    fn distance_mode_penalizes_close_approach() {
        let vf5 = flat_vf5(1.0);
        let vf3 = flat_vf3(1.0);
        let hvs = [VehicleState::new(0.55, 0.0, 0.0, 0.0)];
        let scene = snapshot(&hvs, &[], &vf5, &vf3, GuidanceMode::Distance, 1);
        let traj = rollout(
            &VehicleState::new(0.0, 0.0, 0.0, 0.0),
            &ControlSequence::zeros(1, 0.1),
            0.1,
            &ControlBounds::ego_default(),
        );
        // clearance to 0.6 + 0.1 margin is violated by 0.15
        let pen = safety_penalty(&traj, &scene);
        assert!((pen - 10.0 * 0.15).abs() < 1e-9, "{pen}");
    }
}
