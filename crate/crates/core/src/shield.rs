//! Execution-time safety filter.
//!
//! Each nearby obstacle contributes one half-space constraint on the control,
//! built from the interpolated value and gradient of its game value function:
//! the value must not decay faster than a linear rate, robustly against the
//! worst admissible input of the other vehicle. A slack variable with a very
//! large quadratic penalty keeps the program feasible in extremis. The
//! resulting 3-variable convex QP is solved exactly by active-set
//! enumeration.

use crate::dynamics::{relative_state, Control, ControlBounds, VehicleState};
use crate::grid::{GridError, ValueFunction};
use crate::objective::StaticObstacle;
use crate::solver::{GameModel, HvRelativeModel, StaticRelativeModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShieldError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("value function dimension {got} does not match the {expected}-dimensional model")]
    ModelMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("active-set enumeration found no feasible candidate (should be impossible: the slack is unbounded above)")]
    NoFeasibleCandidate,
}

/// Filter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShieldConfig {
    /// Quadratic weight on the slack variable.
    pub c_eps: f64,
    /// Linear decay rate allowed on the value (class-K slope).
    pub gamma_cbf: f64,
    /// Number of nearest static obstacles constrained per step.
    pub num_static: usize,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self { c_eps: 1e8, gamma_cbf: 1.0, num_static: 3 }
    }
}

/// Affine constraint on the control: `normal . u + eps >= offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: [f64; 2],
    pub offset: f64,
}

fn box_inf(q: f64, (lo, hi): (f64, f64)) -> f64 {
    (q * lo).min(q * hi)
}

/// Builds the barrier constraint at relative state `x`:
/// `(grad V . G_A) u >= -grad V . f0 - gamma * V + worst-case disturbance`.
/// The disturbance term is the negated box infimum of `grad V . G_B u_h`,
/// zero for models without an opponent input.
pub fn build_constraint<M: GameModel>(
    x: &[f64],
    vf: &ValueFunction,
    model: &M,
    cfg: &ShieldConfig,
) -> Result<(HalfSpace, f64), GridError> {
    let d = model.dim();
    let v = vf.interpolate(x)?;
    let g = vf.gradient(x)?;
    let mut f0 = vec![0.0; d];
    model.drift(&x[..d], &mut f0);
    let mut ga = vec![0.0; d * model.ego_bounds().len()];
    model.ego_matrix(&x[..d], &mut ga);
    let ne = model.ego_bounds().len();
    let mut normal = [0.0; 2];
    for (i, n) in normal.iter_mut().enumerate().take(ne) {
        *n = (0..d).map(|j| g[j] * ga[j * ne + i]).sum();
    }
    let drift_term: f64 = (0..d).map(|j| g[j] * f0[j]).sum();
    let mut disturbance = 0.0;
    let nd = model.disturbance_bounds().len();
    if nd > 0 {
        let mut gb = vec![0.0; d * nd];
        model.disturbance_matrix(&x[..d], &mut gb);
        for (i, &b) in model.disturbance_bounds().iter().enumerate() {
            let q: f64 = (0..d).map(|j| g[j] * gb[j * nd + i]).sum();
            disturbance += box_inf(q, b);
        }
    }
    let offset = -drift_term - cfg.gamma_cbf * v - disturbance;
    Ok((HalfSpace { normal, offset }, v))
}

/// Solves `min sum_i d_i (x_i - t_i)^2` over `x = (w, a, eps)` subject to
/// every half-space (`normal . u + eps >= offset`), the control box, and
/// `eps >= 0`, by enumerating active subsets of size <= 3. Each subset's
/// equality-constrained optimum is kept if it is primal feasible with
/// non-negative multipliers; ties resolve to the first subset in
/// lexicographic order.
///
/// The variables are rescaled by `sqrt(d_i)` so the Hessian is the identity
/// and each subset reduces to a projection solved through a small QR; with
/// the slack weight at 1e8, the naive multiplier elimination loses the
/// active-set geometry to cancellation.
pub fn qp_solve(
    diag: &[f64; 3],
    target: &[f64; 3],
    halfspaces: &[HalfSpace],
    bounds: &ControlBounds,
) -> Result<[f64; 3], QpError> {
    let mut rows: Vec<([f64; 3], f64)> = Vec::with_capacity(halfspaces.len() + 5);
    for h in halfspaces {
        rows.push(([h.normal[0], h.normal[1], 1.0], h.offset));
    }
    rows.push(([1.0, 0.0, 0.0], bounds.w_min));
    rows.push(([-1.0, 0.0, 0.0], -bounds.w_max));
    rows.push(([0.0, 1.0, 0.0], bounds.a_min));
    rows.push(([0.0, -1.0, 0.0], -bounds.a_max));
    rows.push(([0.0, 0.0, 1.0], 0.0));
    let m = rows.len();

    let root_d = [diag[0].sqrt(), diag[1].sqrt(), diag[2].sqrt()];
    let scaled_target = [target[0] * root_d[0], target[1] * root_d[1], target[2] * root_d[2]];
    // scaled constraint gradients: a_i / sqrt(d_i) per component
    let scaled_rows: Vec<[f64; 3]> =
        rows.iter().map(|(a, _)| [a[0] / root_d[0], a[1] / root_d[1], a[2] / root_d[2]]).collect();

    let feas_tol = 1e-7;
    let feasible = |x: &[f64; 3]| -> bool {
        rows.iter().all(|(a, b)| a[0] * x[0] + a[1] * x[1] + a[2] * x[2] >= b - feas_tol * (1.0 + b.abs()))
    };

    let mut best: Option<([f64; 3], f64)> = None;
    let consider = |active: &[usize], best: &mut Option<([f64; 3], f64)>| {
        if let Some((scaled_x, obj)) = project_onto_active(&scaled_rows, &rows, active, &scaled_target) {
            let x = [scaled_x[0] / root_d[0], scaled_x[1] / root_d[1], scaled_x[2] / root_d[2]];
            if feasible(&x) && best.map_or(true, |(_, b)| obj < b) {
                *best = Some((x, obj));
            }
        }
    };

    consider(&[], &mut best);
    for i in 0..m {
        consider(&[i], &mut best);
    }
    for i in 0..m {
        for j in i + 1..m {
            consider(&[i, j], &mut best);
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                consider(&[i, j, k], &mut best);
            }
        }
    }
    best.map(|(x, _)| x).ok_or(QpError::NoFeasibleCandidate)
}

/// Minimizes `|y - t|^2` subject to the active equalities in the scaled
/// coordinates. Gram-Schmidt QR of the active gradients gives the projection
/// and the multipliers; subsets with dependent gradients are skipped (some
/// other subset covers their optimum). Returns the scaled point and the
/// objective value, or `None` when the multipliers show the subset cannot be
/// the binding set.
fn project_onto_active(
    scaled_rows: &[[f64; 3]],
    rows: &[([f64; 3], f64)],
    active: &[usize],
    t: &[f64; 3],
) -> Option<([f64; 3], f64)> {
    let k = active.len();
    if k == 0 {
        return Some((*t, 0.0));
    }
    // QR of the 3 x k matrix whose columns are the active scaled gradients,
    // by modified Gram-Schmidt with one reorthogonalization pass
    let mut q: [[f64; 3]; 3] = [[0.0; 3]; 3];
    let mut r: [[f64; 3]; 3] = [[0.0; 3]; 3];
    for (j, &row) in active.iter().enumerate() {
        let col = scaled_rows[row];
        let scale = norm3(&col);
        let mut v = col;
        for _ in 0..2 {
            for i in 0..j {
                let proj = dot3(&v, &q[i]);
                r[i][j] += proj;
                for c in 0..3 {
                    v[c] -= proj * q[i][c];
                }
            }
        }
        let n = norm3(&v);
        if n <= 1e-12 * scale.max(1e-300) {
            return None; // dependent gradients
        }
        r[j][j] = n;
        for c in 0..3 {
            q[j][c] = v[c] / n;
        }
    }
    // constraint residuals at the target: a . x == a~ . x~, so use the
    // scaled rows against the scaled target
    let mut w = [0.0f64; 3];
    for (i, &row) in active.iter().enumerate() {
        w[i] = rows[row].1 - dot3(&scaled_rows[row], t);
    }
    // forward substitution R^T y = w
    let mut y = [0.0f64; 3];
    for i in 0..k {
        let mut acc = w[i];
        for j in 0..i {
            acc -= r[j][i] * y[j];
        }
        y[i] = acc / r[i][i];
    }
    // multipliers: R lambda = 2 y (back substitution); reject negative ones
    let mut lambda = [0.0f64; 3];
    for i in (0..k).rev() {
        let mut acc = 2.0 * y[i];
        for j in i + 1..k {
            acc -= r[i][j] * lambda[j];
        }
        lambda[i] = acc / r[i][i];
    }
    let lam_scale = lambda.iter().take(k).fold(1.0f64, |m, l| m.max(l.abs()));
    if lambda.iter().take(k).any(|l| *l < -1e-7 * lam_scale) {
        return None;
    }
    let mut x = *t;
    for i in 0..k {
        for c in 0..3 {
            x[c] += q[i][c] * y[i];
        }
    }
    let obj = y.iter().take(k).map(|v| v * v).sum();
    Some((x, obj))
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// What the filter saw for one obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLog {
    /// Index into the scenario's vehicle list or static list.
    pub obstacle: usize,
    pub is_static: bool,
    /// Interpolated value at the relative state.
    pub value: f64,
    /// Constraint slack `normal . u_safe + eps - offset` at the solution.
    pub slack: f64,
}

/// Outcome of one filter call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldDecision {
    pub control: Control,
    pub eps: f64,
    /// True when the filter moved the control or needed slack.
    pub active: bool,
    /// Minimum value over all constrained obstacles (`+inf` with none).
    pub min_value: f64,
    pub constraints: Vec<ConstraintLog>,
}

/// The filter bound to its value functions and models.
pub struct Shield<'a> {
    pub cfg: ShieldConfig,
    pub bounds: ControlBounds,
    vf_hv: &'a ValueFunction,
    vf_static: &'a ValueFunction,
    hv_model: HvRelativeModel,
    static_model: StaticRelativeModel,
}

impl<'a> Shield<'a> {
    pub fn new(
        cfg: ShieldConfig,
        bounds: ControlBounds,
        vf_hv: &'a ValueFunction,
        vf_static: &'a ValueFunction,
        hv_model: HvRelativeModel,
        static_model: StaticRelativeModel,
    ) -> Result<Self, ShieldError> {
        if vf_hv.ndim() != hv_model.dim() {
            return Err(ShieldError::ModelMismatch { expected: hv_model.dim(), got: vf_hv.ndim() });
        }
        if vf_static.ndim() != static_model.dim() {
            return Err(ShieldError::ModelMismatch { expected: static_model.dim(), got: vf_static.ndim() });
        }
        Ok(Self { cfg, bounds, vf_hv, vf_static, hv_model, static_model })
    }

    /// Minimally adjusts `u_nom` so every barrier constraint holds: all
    /// vehicles are constrained, plus the nearest static obstacles.
    pub fn filter(
        &self,
        u_nom: Control,
        ego: &VehicleState,
        hvs: &[VehicleState],
        statics: &[StaticObstacle],
    ) -> Result<ShieldDecision, ShieldError> {
        let mut halfspaces = Vec::with_capacity(hvs.len() + self.cfg.num_static);
        let mut logs = Vec::with_capacity(hvs.len() + self.cfg.num_static);
        let mut min_value = f64::INFINITY;
        for (idx, hv) in hvs.iter().enumerate() {
            let xr = relative_state(ego, hv);
            let (hs, v) = build_constraint(&xr.as_array(), self.vf_hv, &self.hv_model, &self.cfg)?;
            min_value = min_value.min(v);
            halfspaces.push(hs);
            logs.push(ConstraintLog { obstacle: idx, is_static: false, value: v, slack: 0.0 });
        }
        // rank statics by center distance, keep the nearest
        let mut order: Vec<usize> = (0..statics.len()).collect();
        order.sort_by(|&a, &b| {
            let da = (statics[a].x - ego.p_x).powi(2) + (statics[a].y - ego.p_y).powi(2);
            let db = (statics[b].x - ego.p_x).powi(2) + (statics[b].y - ego.p_y).powi(2);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        for &idx in order.iter().take(self.cfg.num_static) {
            let o = &statics[idx];
            let dx = o.x - ego.p_x;
            let dy = o.y - ego.p_y;
            let (sin_t, cos_t) = ego.theta.sin_cos();
            let x3 = [cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy, ego.v];
            let (hs, v) = build_constraint(&x3, self.vf_static, &self.static_model, &self.cfg)?;
            min_value = min_value.min(v);
            halfspaces.push(hs);
            logs.push(ConstraintLog { obstacle: idx, is_static: true, value: v, slack: 0.0 });
        }

        let sol = qp_solve(&[1.0, 1.0, self.cfg.c_eps], &[u_nom.w, u_nom.a, 0.0], &halfspaces, &self.bounds)?;
        let control = Control::new(sol[0], sol[1]);
        let eps = sol[2];
        for (log, hs) in logs.iter_mut().zip(&halfspaces) {
            log.slack = hs.normal[0] * control.w + hs.normal[1] * control.a + eps - hs.offset;
        }
        let moved = (control.w - u_nom.w).abs() > 1e-9 || (control.a - u_nom.a).abs() > 1e-9;
        Ok(ShieldDecision { control, eps, active: moved || eps > 1e-9, min_value, constraints: logs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridDim, GridSpec, VfMeta};
    use rand::Rng as _;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn vf5_from(f: impl Fn(&[f64]) -> f64) -> ValueFunction {
        let spec = GridSpec::new(vec![
            GridDim::linear(-8.0, 8.0, 17),
            GridDim::linear(-8.0, 8.0, 17),
            GridDim::periodic(0.0, 2.0 * PI, 16),
            GridDim::linear(0.0, 4.0, 5),
            GridDim::linear(0.0, 4.0, 5),
        ])
        .unwrap();
        let mut x = [0.0; 5];
        let values = (0..spec.node_count())
            .map(|n| {
                spec.node_coords(n, &mut x);
                f(&x)
            })
            .collect();
        let meta =
            VfMeta { model: "hv5d".into(), r_s: 0.6, horizon: 1.0, ego_bounds: vec![], disturbance_bounds: vec![] };
        ValueFunction::new(spec, values, meta).unwrap()
    }

    fn vf3_from(f: impl Fn(&[f64]) -> f64) -> ValueFunction {
        let spec = GridSpec::new(vec![
            GridDim::linear(-8.0, 8.0, 17),
            GridDim::linear(-8.0, 8.0, 17),
            GridDim::linear(0.0, 4.0, 5),
        ])
        .unwrap();
        let mut x = [0.0; 3];
        let values = (0..spec.node_count())
            .map(|n| {
                spec.node_coords(n, &mut x);
                f(&x)
            })
            .collect();
        let meta =
            VfMeta { model: "static3d".into(), r_s: 0.4, horizon: 1.0, ego_bounds: vec![], disturbance_bounds: vec![] };
        ValueFunction::new(spec, values, meta).unwrap()
    }

    #[test]
    fn flat_value_gives_trivial_constraint() {
        let vf = vf5_from(|_| 0.7);
        let model = HvRelativeModel::standard();
        let cfg = ShieldConfig::default();
        let (hs, v) = build_constraint(&[1.0, 0.0, 0.0, 1.0, 1.0], &vf, &model, &cfg).unwrap();
        assert!(hs.normal[0].abs() < 1e-9 && hs.normal[1].abs() < 1e-9);
        assert!((hs.offset + cfg.gamma_cbf * 0.7).abs() < 1e-9);
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn heading_gradient_constraint_by_hand() {
        // value = phi_r: gradient is e_phi, so the normal picks up the
        // heading rows of the input matrices
        let vf = vf5_from(|x| x[2]);
        let model = HvRelativeModel::standard();
        let cfg = ShieldConfig { gamma_cbf: 1.0, ..Default::default() };
        // interior in phi so the periodic seam's wrap jump is not sampled
        let x = [1.0, 0.0, PI, 1.0, 1.0];
        let (hs, v) = build_constraint(&x, &vf, &model, &cfg).unwrap();
        assert!((hs.normal[0] + 1.0).abs() < 1e-9, "w coefficient {}", hs.normal[0]);
        assert!(hs.normal[1].abs() < 1e-9);
        // drift term vanishes, disturbance adds |1| * pi/18
        assert!((hs.offset - (-v + PI / 18.0)).abs() < 1e-9);
    }

    #[test]
    fn deep_safe_state_keeps_nominal_feasible() {
        let vf = vf5_from(|x| x[0] * x[0] + x[1] * x[1]); // large positive away from origin
        let model = HvRelativeModel::standard();
        let cfg = ShieldConfig::default();
        let (hs, _) = build_constraint(&[5.0, 3.0, 1.0, 2.0, 2.0], &vf, &model, &cfg).unwrap();
        // offset is strongly negative, so u = 0 satisfies it easily
        assert!(hs.offset < -1.0);
    }

    #[test]
    fn qp_without_constraints_clamps_target_to_box() {
        let b = ControlBounds::ego_default();
        let x = qp_solve(&[1.0, 1.0, 1e8], &[10.0, -10.0, 0.0], &[], &b).unwrap();
        assert!((x[0] - b.w_max).abs() < 1e-12);
        assert!((x[1] - b.a_min).abs() < 1e-12);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn qp_projects_onto_single_halfspace() {
        let b = ControlBounds::ego_default();
        let hs = [HalfSpace { normal: [0.0, 1.0], offset: 0.5 }];
        let x = qp_solve(&[1.0, 1.0, 1e8], &[0.0, 0.0, 0.0], &hs, &b).unwrap();
        assert!(x[0].abs() < 1e-9);
        assert!((x[1] - 0.5).abs() < 1e-6, "a = {}", x[1]);
        assert!(x[2] < 1e-6, "slack should be negligible, got {}", x[2]);
    }

    #[test]
    fn qp_uses_slack_when_box_infeasible() {
        let b = ControlBounds::ego_default();
        let hs = [HalfSpace { normal: [0.0, 1.0], offset: 1.5 }];
        let x = qp_solve(&[1.0, 1.0, 1e8], &[0.0, 0.0, 0.0], &hs, &b).unwrap();
        assert!((x[1] - 1.0).abs() < 1e-6, "acceleration pinned at the box, got {}", x[1]);
        assert!((x[2] - 0.5).abs() < 1e-5, "slack covers the rest, got {}", x[2]);
    }

    #[test]
    fn qp_invariant_to_duplicated_constraints() {
        let b = ControlBounds::ego_default();
        let hs = [HalfSpace { normal: [0.3, -0.8], offset: 0.4 }];
        let hs_dup = [hs[0], hs[0], hs[0]];
        let a = qp_solve(&[1.0, 1.0, 1e8], &[0.2, 0.9, 0.0], &hs, &b).unwrap();
        let dup = qp_solve(&[1.0, 1.0, 1e8], &[0.2, 0.9, 0.0], &hs_dup, &b).unwrap();
        for q in 0..3 {
            assert!((a[q] - dup[q]).abs() < 1e-9);
        }
    }

    fn grid_pass(
        diag: &[f64; 3],
        target: &[f64; 3],
        hs: &[HalfSpace],
        w_range: (f64, f64),
        a_range: (f64, f64),
        n: usize,
    ) -> (f64, [f64; 2]) {
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for iw in 0..n {
            let w = w_range.0 + (w_range.1 - w_range.0) * iw as f64 / (n - 1) as f64;
            for ia in 0..n {
                let a = a_range.0 + (a_range.1 - a_range.0) * ia as f64 / (n - 1) as f64;
                // smallest feasible slack at this grid point
                let eps = hs
                    .iter()
                    .map(|h| h.offset - h.normal[0] * w - h.normal[1] * a)
                    .fold(0.0f64, f64::max);
                let obj = diag[0] * (w - target[0]).powi(2)
                    + diag[1] * (a - target[1]).powi(2)
                    + diag[2] * (eps - target[2]).powi(2);
                if obj < best.0 {
                    best = (obj, [w, a]);
                }
            }
        }
        best
    }

    /// 201x201 adaptive-slack grid search, refined by two zoomed passes
    /// around the incumbent so optima on active constraint faces (and narrow
    /// feasible wedges) are resolved below the comparison tolerance.
    fn brute_force_objective(
        diag: &[f64; 3],
        target: &[f64; 3],
        hs: &[HalfSpace],
        b: &ControlBounds,
        n: usize,
    ) -> f64 {
        let (mut best, mut at) = grid_pass(diag, target, hs, (b.w_min, b.w_max), (b.a_min, b.a_max), n);
        let mut step_w = (b.w_max - b.w_min) / (n - 1) as f64;
        let mut step_a = (b.a_max - b.a_min) / (n - 1) as f64;
        for _ in 0..2 {
            let wr = ((at[0] - 3.0 * step_w).max(b.w_min), (at[0] + 3.0 * step_w).min(b.w_max));
            let ar = ((at[1] - 3.0 * step_a).max(b.a_min), (at[1] + 3.0 * step_a).min(b.a_max));
            let (obj, pos) = grid_pass(diag, target, hs, wr, ar, n);
            if obj < best {
                best = obj;
                at = pos;
            }
            step_w = (wr.1 - wr.0) / (n - 1) as f64;
            step_a = (ar.1 - ar.0) / (n - 1) as f64;
        }
        best
    }

    #[test]
    fn qp_matches_dense_grid_oracle() {
        let b = ControlBounds::ego_default();
        let diag = [1.0, 1.0, 1e8];
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        for case in 0..100 {
            // constraints built strictly feasible around an interior point so
            // the optimum is in the smooth region the grid can resolve
            let u_f = [rng.random_range(b.w_min..b.w_max), rng.random_range(b.a_min..b.a_max)];
            let n_cons = rng.random_range(1..=5);
            let hs: Vec<HalfSpace> = (0..n_cons)
                .map(|_| {
                    let normal = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                    let margin = rng.random_range(0.05..1.5);
                    HalfSpace { normal, offset: normal[0] * u_f[0] + normal[1] * u_f[1] - margin }
                })
                .collect();
            let target = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), 0.0];
            let x = qp_solve(&diag, &target, &hs, &b).unwrap();
            let qp_obj: f64 = (0..3).map(|q| diag[q] * (x[q] - target[q]).powi(2)).sum();
            let grid_obj = brute_force_objective(&diag, &target, &hs, &b, 201);
            assert!(qp_obj <= grid_obj + 1e-9, "case {case}: qp {qp_obj} worse than grid {grid_obj}");
            assert!((qp_obj - grid_obj).abs() <= 1e-3, "case {case}: gap {}", (qp_obj - grid_obj).abs());
        }
    }

    #[test]
    fn strictly_feasible_nominal_is_returned_exactly() {
        let b = ControlBounds::ego_default();
        let hs = [HalfSpace { normal: [1.0, 1.0], offset: -5.0 }, HalfSpace { normal: [-0.5, 0.2], offset: -4.0 }];
        let target = [0.3, -0.4, 0.0];
        let x = qp_solve(&[1.0, 1.0, 1e8], &target, &hs, &b).unwrap();
        assert_eq!(x, target, "interior target must come back bit-exact");
    }

    #[test]
    fn larger_gamma_relaxes_constraints_in_safe_states() {
        let vf = vf5_from(|x| x[0] * x[0] + x[1] * x[1] - 0.36);
        let model = HvRelativeModel::standard();
        let x = [2.0, 1.0, PI, 1.0, 1.0];
        let mut prev_offset = f64::NEG_INFINITY;
        for gamma in [0.5, 1.0, 2.0, 4.0] {
            let cfg = ShieldConfig { gamma_cbf: gamma, ..Default::default() };
            let (hs, v) = build_constraint(&x, &vf, &model, &cfg).unwrap();
            assert!(v > 0.0);
            if prev_offset > f64::NEG_INFINITY {
                assert!(hs.offset < prev_offset, "offset must decrease as gamma grows when V > 0");
            }
            prev_offset = hs.offset;
        }
    }

    #[test]
    fn filter_passes_nominal_when_everything_is_far() {
        let vf5 = vf5_from(|x| x[0] * x[0] + x[1] * x[1] - 0.36);
        let vf3 = vf3_from(|x| x[0] * x[0] + x[1] * x[1] - 0.16);
        let shield = Shield::new(
            ShieldConfig::default(),
            ControlBounds::ego_default(),
            &vf5,
            &vf3,
            HvRelativeModel::standard(),
            StaticRelativeModel::standard(),
        )
        .unwrap();
        let ego = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let hvs = [VehicleState::new(6.0, 2.0, PI, 1.0)];
        let statics =
            [StaticObstacle { x: -5.0, y: 3.0, radius: 0.1 }, StaticObstacle { x: 4.0, y: -4.0, radius: 0.1 }];
        let u_nom = Control::new(0.2, 0.4);
        let d = shield.filter(u_nom, &ego, &hvs, &statics).unwrap();
        assert_eq!(d.control, u_nom);
        assert!(!d.active);
        assert_eq!(d.eps, 0.0);
        assert_eq!(d.constraints.len(), 3);
        assert!(d.min_value > 0.0);
    }

    #[test]
    fn filter_minimal_intervention_against_fine_grid() {
        // head-on close approach forces an intervention; compare the filtered
        // objective against every feasible point of a fine control grid
        let vf5 = vf5_from(|x| x[0] * x[0] + x[1] * x[1] - 1.0);
        let vf3 = vf3_from(|x| x[0] * x[0] + x[1] * x[1] - 0.16);
        let cfg = ShieldConfig::default();
        let bounds = ControlBounds::ego_default();
        let shield = Shield::new(
            cfg,
            bounds,
            &vf5,
            &vf3,
            HvRelativeModel::standard(),
            StaticRelativeModel::standard(),
        )
        .unwrap();
        let ego = VehicleState::new(0.0, 0.0, 0.0, 2.0);
        let hvs = [VehicleState::new(1.2, 0.0, PI, 2.0)];
        let u_nom = Control::new(0.0, 1.0);
        let d = shield.filter(u_nom, &ego, &hvs, &[]).unwrap();
        assert!(d.active, "closing head-on inside the unsafe band must trigger the filter");
        assert!(bounds.contains(d.control, 1e-9));
        assert!(d.eps >= 0.0);

        // minimal intervention: no feasible grid point beats the QP objective
        let xr = relative_state(&ego, &hvs[0]);
        let (hs, _) = build_constraint(&xr.as_array(), &vf5, &HvRelativeModel::standard(), &cfg).unwrap();
        let obj_qp = (d.control.w - u_nom.w).powi(2) + (d.control.a - u_nom.a).powi(2) + cfg.c_eps * d.eps * d.eps;
        let n = 301;
        for iw in 0..n {
            let w = bounds.w_min + (bounds.w_max - bounds.w_min) * iw as f64 / (n - 1) as f64;
            for ia in 0..n {
                let a = bounds.a_min + (bounds.a_max - bounds.a_min) * ia as f64 / (n - 1) as f64;
                let eps = (hs.offset - hs.normal[0] * w - hs.normal[1] * a).max(0.0);
                let obj = (w - u_nom.w).powi(2) + (a - u_nom.a).powi(2) + cfg.c_eps * eps * eps;
                assert!(obj_qp <= obj + 1e-6);
            }
        }
    }
}
