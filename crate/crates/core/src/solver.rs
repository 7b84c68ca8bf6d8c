//! Backward-in-time sweep of a final-value two-player game on a grid.
//!
//! The value of a state is the worst-case minimum of a distance function
//! over the horizon: the first player picks inputs to keep the distance
//! large, the second to shrink it. Dynamic programming turns this into a
//! variational inequality: march the terminal condition backwards with the
//! game Hamiltonian and clamp against the distance after every step.
//!
//! The spatial scheme is first-order upwind with global Lax-Friedrichs
//! dissipation, which keeps the update monotone under the CFL bound.

use crate::dynamics::ControlBounds;
use crate::grid::{GridError, GridSpec, ValueFunction, VfMeta, MAX_DIM};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("grid has {grid} dimensions but the model expects {model}")]
    DimensionMismatch { grid: usize, model: usize },
    #[error("non-finite value appeared at sweep step {step}, node {node}")]
    NonFinite { step: usize, node: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Scalar abstraction so model dynamics can be evaluated both pointwise
/// (f64) and over whole boxes (interval arithmetic for dissipation bounds).
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
}

/// Closed interval `[lo, hi]` with outward-rounding-free arithmetic; good
/// enough for the coarse speed bounds the dissipation needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    /// Largest absolute value attained on the interval.
    pub fn magnitude(self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, r: Interval) -> Interval {
        Interval { lo: self.lo + r.lo, hi: self.hi + r.hi }
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, r: Interval) -> Interval {
        Interval { lo: self.lo - r.hi, hi: self.hi - r.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, r: Interval) -> Interval {
        let c = [self.lo * r.lo, self.lo * r.hi, self.hi * r.lo, self.hi * r.hi];
        Interval { lo: c.iter().cloned().fold(f64::INFINITY, f64::min), hi: c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Real for Interval {
    fn constant(v: f64) -> Self {
        Interval::point(v)
    }

    fn cos(self) -> Self {
        let two_pi = 2.0 * PI;
        if self.hi - self.lo >= two_pi {
            return Interval::new(-1.0, 1.0);
        }
        // shift lo into [0, 2pi) and test whether the extrema fall inside
        let a = self.lo.rem_euclid(two_pi);
        let b = a + (self.hi - self.lo);
        let mut lo = a.cos().min(b.cos());
        let mut hi = a.cos().max(b.cos());
        if a <= PI && b >= PI || b >= 3.0 * PI {
            lo = -1.0;
        }
        if a == 0.0 || b >= two_pi {
            hi = 1.0;
        }
        Interval::new(lo, hi)
    }

    fn sin(self) -> Self {
        (self - Interval::point(PI / 2.0)).cos()
    }
}

/// A control-affine two-player game: drift plus input matrices for the ego
/// (maximizer) and the disturbance (minimizer), box input bounds, and the
/// signed distance whose worst-case minimum the sweep computes.
pub trait GameModel: Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Ego input box, one `(lo, hi)` pair per input.
    fn ego_bounds(&self) -> &[(f64, f64)];
    /// Disturbance input box; empty slice when there is no opponent.
    fn disturbance_bounds(&self) -> &[(f64, f64)];
    fn drift<R: Real>(&self, x: &[R], out: &mut [R]);
    /// Ego input matrix, `dim x ego_inputs`, row-major into `out`.
    fn ego_matrix<R: Real>(&self, x: &[R], out: &mut [R]);
    /// Disturbance input matrix, `dim x dist_inputs`, row-major into `out`.
    fn disturbance_matrix<R: Real>(&self, x: &[R], out: &mut [R]);
    /// Signed distance to failure; non-positive means failed.
    fn distance(&self, x: &[f64]) -> f64;
    /// Failure radius recorded in metadata (0 when not radius-shaped).
    fn failure_radius(&self) -> f64;
}

/// Ghost-node treatment at non-periodic walls.
///
/// `ZeroGradient` keeps the whole update monotone (the outward slope is
/// zero, so no node depends negatively on a neighbor); it is the right
/// choice when the failure set lies inside the domain. `Extrapolate`
/// continues the value linearly past the wall, which is needed when the
/// failure region leaves the grid (otherwise the value floor gets walled
/// off at the boundary), at the price of monotonicity at wall nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    #[default]
    ZeroGradient,
    Extrapolate,
}

/// Sweep configuration.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Game horizon in seconds; 0 returns the terminal condition unchanged.
    pub horizon: f64,
    /// CFL number in (0, 1].
    pub cfl: f64,
    pub boundary: BoundaryMode,
    /// Print one progress line per sweep step.
    pub log_progress: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { horizon: 1.0, cfl: 0.8, boundary: BoundaryMode::default(), log_progress: false }
    }
}

/// Node-wise terminal condition: the model's distance at every grid node.
pub fn terminal_values<M: GameModel>(spec: &GridSpec, model: &M) -> Vec<f64> {
    let d = spec.ndim();
    (0..spec.node_count())
        .into_par_iter()
        .map(|n| {
            let mut x = [0.0; MAX_DIM];
            spec.node_coords(n, &mut x[..d]);
            model.distance(&x[..d])
        })
        .collect()
}

fn box_sup(q: f64, (lo, hi): (f64, f64)) -> f64 {
    (q * lo).max(q * hi)
}

fn box_inf(q: f64, (lo, hi): (f64, f64)) -> f64 {
    (q * lo).min(q * hi)
}

/// Game Hamiltonian `sup_u inf_uh p . f(x, u, uh)`, evaluated analytically:
/// the affine structure makes each input face-optimal, so the sup/inf reduce
/// to per-component box corners of `p^T G`.
pub fn hamiltonian<M: GameModel>(model: &M, x: &[f64], p: &[f64]) -> f64 {
    let d = model.dim();
    debug_assert_eq!(x.len(), d);
    debug_assert_eq!(p.len(), d);
    let mut f0 = [0.0; MAX_DIM];
    model.drift(x, &mut f0[..d]);
    let mut h: f64 = (0..d).map(|j| p[j] * f0[j]).sum();

    let ne = model.ego_bounds().len();
    if ne > 0 {
        let mut ga = [0.0; MAX_DIM * 2];
        model.ego_matrix(x, &mut ga[..d * ne]);
        for (i, &b) in model.ego_bounds().iter().enumerate() {
            let q: f64 = (0..d).map(|j| p[j] * ga[j * ne + i]).sum();
            h += box_sup(q, b);
        }
    }
    let nd = model.disturbance_bounds().len();
    if nd > 0 {
        let mut gb = [0.0; MAX_DIM * 2];
        model.disturbance_matrix(x, &mut gb[..d * nd]);
        for (i, &b) in model.disturbance_bounds().iter().enumerate() {
            let q: f64 = (0..d).map(|j| p[j] * gb[j * nd + i]).sum();
            h += box_inf(q, b);
        }
    }
    h
}

/// Per-dimension speed bound `|dx_j/dt|` at one state over both input boxes;
/// this is the local dissipation coefficient of the scheme.
fn local_alphas<M: GameModel>(model: &M, x: &[f64], out: &mut [f64]) {
    let d = model.dim();
    let mut f0 = [0.0; MAX_DIM];
    model.drift(x, &mut f0[..d]);
    let ne = model.ego_bounds().len();
    let mut ga = [0.0; MAX_DIM * 2];
    if ne > 0 {
        model.ego_matrix(x, &mut ga[..d * ne]);
    }
    let nd = model.disturbance_bounds().len();
    let mut gb = [0.0; MAX_DIM * 2];
    if nd > 0 {
        model.disturbance_matrix(x, &mut gb[..d * nd]);
    }
    for j in 0..d {
        let mut a = f0[j].abs();
        for (i, &(lo, hi)) in model.ego_bounds().iter().enumerate() {
            a += ga[j * ne + i].abs() * lo.abs().max(hi.abs());
        }
        for (i, &(lo, hi)) in model.disturbance_bounds().iter().enumerate() {
            a += gb[j * nd + i].abs() * lo.abs().max(hi.abs());
        }
        out[j] = a;
    }
}

/// Per-dimension dissipation coefficients: interval-arithmetic bounds on
/// `|dx_j/dt|` over the whole grid domain and both input boxes. These cap
/// the local coefficients and set the stable time step.
pub fn dissipation_bounds<M: GameModel>(model: &M, spec: &GridSpec) -> Vec<f64> {
    let d = model.dim();
    let xi: Vec<Interval> = spec.dims().iter().map(|g| Interval::new(g.lo, g.hi)).collect();
    let mut f0 = vec![Interval::point(0.0); d];
    model.drift(&xi, &mut f0);

    let ne = model.ego_bounds().len();
    let mut ga = vec![Interval::point(0.0); d * ne];
    if ne > 0 {
        model.ego_matrix(&xi, &mut ga);
    }
    let nd = model.disturbance_bounds().len();
    let mut gb = vec![Interval::point(0.0); d * nd];
    if nd > 0 {
        model.disturbance_matrix(&xi, &mut gb);
    }

    (0..d)
        .map(|j| {
            let mut a = f0[j].magnitude();
            for (i, &(lo, hi)) in model.ego_bounds().iter().enumerate() {
                a += ga[j * ne + i].magnitude() * lo.abs().max(hi.abs());
            }
            for (i, &(lo, hi)) in model.disturbance_bounds().iter().enumerate() {
                a += gb[j * nd + i].magnitude() * lo.abs().max(hi.abs());
            }
            a
        })
        .collect()
}

/// One Lax-Friedrichs update of the whole grid: for every node, one-sided
/// differences feed the Hamiltonian at their average, the jump term
/// dissipates, and the variational clamp keeps the value below the terminal
/// distance.
///
/// The dissipation coefficients are local (the speed bound at the node's own
/// state): the update stays monotone because they still dominate `|dH/dp|`
/// there, while the global bounds, which carry the worst-case frame-rotation
/// speed of the far corners, would drown the transport term over most of the
/// grid and freeze the sweep at the terminal condition.
pub fn lax_friedrichs_step<M: GameModel>(
    model: &M,
    spec: &GridSpec,
    values: &[f64],
    terminal: &[f64],
    dt: f64,
    boundary: BoundaryMode,
) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    lf_step_into(model, spec, values, terminal, dt, boundary, &mut out);
    out
}

fn lf_step_into<M: GameModel>(
    model: &M,
    spec: &GridSpec,
    values: &[f64],
    terminal: &[f64],
    dt: f64,
    boundary: BoundaryMode,
    out: &mut [f64],
) {
    let d = spec.ndim();
    let strides = spec.strides();
    let dims: Vec<_> = spec.dims().to_vec();
    out.par_iter_mut().enumerate().for_each(|(n, slot)| {
        let mut idx = [0usize; MAX_DIM];
        let mut x = [0.0; MAX_DIM];
        {
            let mut rem = n;
            for j in 0..d {
                idx[j] = rem / strides[j];
                rem %= strides[j];
                x[j] = dims[j].coord(idx[j]);
            }
        }
        let vc = values[n];
        let mut alphas = [0.0; MAX_DIM];
        local_alphas(model, &x[..d], &mut alphas[..d]);
        let mut p_avg = [0.0; MAX_DIM];
        let mut jump = 0.0;
        for j in 0..d {
            let g = dims[j];
            let s = strides[j];
            let i = idx[j];
            let (vp, vm) = if g.periodic {
                let up = if i + 1 < g.count { values[n + s] } else { values[n + s - s * g.count] };
                let dn = if i > 0 { values[n - s] } else { values[n + s * (g.count - 1)] };
                (up, dn)
            } else {
                match boundary {
                    BoundaryMode::ZeroGradient => {
                        let up = if i + 1 < g.count { values[n + s] } else { vc };
                        let dn = if i > 0 { values[n - s] } else { vc };
                        (up, dn)
                    }
                    BoundaryMode::Extrapolate => {
                        let up = if i + 1 < g.count { values[n + s] } else { 2.0 * vc - values[n - s] };
                        let dn = if i > 0 { values[n - s] } else { 2.0 * vc - values[n + s] };
                        (up, dn)
                    }
                }
            };
            let h = g.spacing();
            let p_plus = (vp - vc) / h;
            let p_minus = (vc - vm) / h;
            p_avg[j] = 0.5 * (p_plus + p_minus);
            jump += alphas[j] * 0.5 * (p_plus - p_minus);
        }
        // Marching toward t = 0 with `V + dt * H`, the dissipation must add
        // the jump (check the pure-advection case: it reduces to the upwind
        // difference). Monotone for dt * sum(alpha_j / dx_j) <= 1.
        let ham = hamiltonian(model, &x[..d], &p_avg[..d]) + jump;
        *slot = terminal[n].min(vc + dt * ham);
    });
}

/// Largest power of two not exceeding `x` (as an f64 time quantum). Using a
/// dyadic step means sweeps with nested horizons (0.5 s, 1 s, ...) share
/// step boundaries exactly, which keeps horizon monotonicity exact node-wise.
fn dyadic_step(x: f64) -> f64 {
    2.0_f64.powi(x.log2().floor() as i32)
}

/// Solves the final-value game on `spec` and returns the value at time zero.
pub fn solve<M: GameModel>(model: &M, spec: &GridSpec, cfg: &SolverConfig) -> Result<ValueFunction, SolverError> {
    if spec.ndim() != model.dim() {
        return Err(SolverError::DimensionMismatch { grid: spec.ndim(), model: model.dim() });
    }
    if !(cfg.cfl > 0.0 && cfg.cfl <= 1.0) {
        return Err(SolverError::InvalidConfig(format!("cfl must be in (0, 1], got {}", cfg.cfl)));
    }
    if !(cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
        return Err(SolverError::InvalidConfig(format!("horizon must be finite and >= 0, got {}", cfg.horizon)));
    }

    let terminal = terminal_values(spec, model);
    let meta = VfMeta {
        model: model.model_id().to_string(),
        r_s: model.failure_radius(),
        horizon: cfg.horizon,
        ego_bounds: model.ego_bounds().to_vec(),
        disturbance_bounds: model.disturbance_bounds().to_vec(),
    };
    if cfg.horizon == 0.0 {
        return Ok(ValueFunction::new(spec.clone(), terminal, meta)?);
    }

    let alphas = dissipation_bounds(model, spec);
    let rate: f64 = alphas.iter().zip(spec.dims()).map(|(a, d)| a / d.spacing()).sum();
    if !rate.is_finite() || rate <= 0.0 {
        return Err(SolverError::InvalidConfig(format!("model speed bounds give an unusable step rate ({rate})")));
    }
    let dt_max = cfg.cfl / rate;
    let dt = dyadic_step(dt_max);
    let steps_f = (cfg.horizon / dt).ceil();
    if !(steps_f >= 1.0) || steps_f > 1e9 {
        return Err(SolverError::InvalidConfig(format!(
            "horizon {} s needs {steps_f} sweep steps of {dt} s",
            cfg.horizon
        )));
    }
    let steps = steps_f as usize;
    // a possibly-shorter first step lands the remaining sweep on the dyadic lattice
    let first = cfg.horizon - (steps - 1) as f64 * dt;

    let mut v = terminal.clone();
    let mut buf = vec![0.0; v.len()];
    for k in 0..steps {
        let step_dt = if k == 0 { first } else { dt };
        lf_step_into(model, spec, &v, &terminal, step_dt, cfg.boundary, &mut buf);
        if let Some(node) = buf.iter().position(|x| !x.is_finite()) {
            return Err(SolverError::NonFinite { step: k, node });
        }
        std::mem::swap(&mut v, &mut buf);
        if cfg.log_progress {
            let t = cfg.horizon - (first + k as f64 * dt);
            let min_v = v.iter().cloned().fold(f64::INFINITY, f64::min);
            eprintln!("step {} / {}, t = {:.4}, min V = {:.6}", k + 1, steps, t, min_v);
        }
    }
    Ok(ValueFunction::new(spec.clone(), v, meta)?)
}

/// Relative-state game against one human-driven vehicle: state
/// `[p_xr, p_yr, phi_r, v, v_h]`, ego steers and accelerates the frame, the
/// other vehicle steers its relative heading and its own speed.
#[derive(Debug, Clone)]
pub struct HvRelativeModel {
    ego: [(f64, f64); 2],
    disturbance: [(f64, f64); 2],
    r_s: f64,
}

impl HvRelativeModel {
    pub fn new(ego: &ControlBounds, hv: &ControlBounds, r_s: f64) -> Self {
        Self { ego: ego.as_boxes(), disturbance: hv.as_boxes(), r_s }
    }

    /// Failure radius 0.6 m: two 0.3 m body circles touching.
    pub fn standard() -> Self {
        Self::new(&ControlBounds::ego_default(), &ControlBounds::hv_default(), 0.6)
    }

    /// Production grid: 100x100x64x8x8 over [-8,8]² x [0,2pi) x [0,4]².
    pub fn default_grid() -> GridSpec {
        Self::grid_with_counts(&[100, 100, 64, 8, 8]).unwrap()
    }

    /// Coarse preset used by fast runs and tests: 50x50x32x5x5.
    pub fn reduced_grid() -> GridSpec {
        Self::grid_with_counts(&[50, 50, 32, 5, 5]).unwrap()
    }

    pub fn grid_with_counts(counts: &[usize]) -> Result<GridSpec, GridError> {
        if counts.len() != 5 {
            return Err(GridError::InvalidSpec(format!("need 5 counts, got {}", counts.len())));
        }
        GridSpec::new(vec![
            GridDim::linear(-8.0, 8.0, counts[0]),
            GridDim::linear(-8.0, 8.0, counts[1]),
            GridDim::periodic(0.0, 2.0 * PI, counts[2]),
            GridDim::linear(0.0, 4.0, counts[3]),
            GridDim::linear(0.0, 4.0, counts[4]),
        ])
    }
}

use crate::grid::GridDim;

impl GameModel for HvRelativeModel {
    fn model_id(&self) -> &str {
        "hv5d"
    }

    fn dim(&self) -> usize {
        5
    }

    fn ego_bounds(&self) -> &[(f64, f64)] {
        &self.ego
    }

    fn disturbance_bounds(&self) -> &[(f64, f64)] {
        &self.disturbance
    }

    fn drift<R: Real>(&self, x: &[R], out: &mut [R]) {
        out[0] = -x[3] + x[4] * x[2].cos();
        out[1] = x[4] * x[2].sin();
        out[2] = R::constant(0.0);
        out[3] = R::constant(0.0);
        out[4] = R::constant(0.0);
    }

    fn ego_matrix<R: Real>(&self, x: &[R], out: &mut [R]) {
        let zero = R::constant(0.0);
        let one = R::constant(1.0);
        // rows (p_xr, p_yr, phi_r, v, v_h) x columns (w, a)
        out.copy_from_slice(&[x[1], zero, -x[0], zero, -one, zero, zero, one, zero, zero]);
    }

    fn disturbance_matrix<R: Real>(&self, _x: &[R], out: &mut [R]) {
        let zero = R::constant(0.0);
        let one = R::constant(1.0);
        out.copy_from_slice(&[zero, zero, zero, zero, one, zero, zero, zero, zero, one]);
    }

    fn distance(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1] - self.r_s * self.r_s
    }

    fn failure_radius(&self) -> f64 {
        self.r_s
    }
}

/// Reduced game against a circular static obstacle: state `[p_xr, p_yr, v]`,
/// no opponent input. Heading and opponent-speed axes of the full model are
/// vacuous for a point that never moves.
#[derive(Debug, Clone)]
pub struct StaticRelativeModel {
    ego: [(f64, f64); 2],
    r_s: f64,
}

impl StaticRelativeModel {
    pub fn new(ego: &ControlBounds, r_s: f64) -> Self {
        Self { ego: ego.as_boxes(), r_s }
    }

    /// Failure radius 0.4 m: 0.3 m body circle plus 0.1 m obstacle.
    pub fn standard() -> Self {
        Self::new(&ControlBounds::ego_default(), 0.4)
    }

    /// Production grid: 100x100x8 over [-8,8]² x [0,4].
    pub fn default_grid() -> GridSpec {
        Self::grid_with_counts(&[100, 100, 8]).unwrap()
    }

    pub fn reduced_grid() -> GridSpec {
        Self::grid_with_counts(&[50, 50, 5]).unwrap()
    }

    pub fn grid_with_counts(counts: &[usize]) -> Result<GridSpec, GridError> {
        if counts.len() != 3 {
            return Err(GridError::InvalidSpec(format!("need 3 counts, got {}", counts.len())));
        }
        GridSpec::new(vec![
            GridDim::linear(-8.0, 8.0, counts[0]),
            GridDim::linear(-8.0, 8.0, counts[1]),
            GridDim::linear(0.0, 4.0, counts[2]),
        ])
    }
}

impl GameModel for StaticRelativeModel {
    fn model_id(&self) -> &str {
        "static3d"
    }

    fn dim(&self) -> usize {
        3
    }

    fn ego_bounds(&self) -> &[(f64, f64)] {
        &self.ego
    }

    fn disturbance_bounds(&self) -> &[(f64, f64)] {
        &[]
    }

    fn drift<R: Real>(&self, x: &[R], out: &mut [R]) {
        out[0] = -x[2];
        out[1] = R::constant(0.0);
        out[2] = R::constant(0.0);
    }

    fn ego_matrix<R: Real>(&self, x: &[R], out: &mut [R]) {
        let zero = R::constant(0.0);
        let one = R::constant(1.0);
        out.copy_from_slice(&[x[1], zero, -x[0], zero, zero, one]);
    }

    fn disturbance_matrix<R: Real>(&self, _x: &[R], _out: &mut [R]) {}

    fn distance(&self, x: &[f64]) -> f64 {
        x[0] * x[0] + x[1] * x[1] - self.r_s * self.r_s
    }

    fn failure_radius(&self) -> f64 {
        self.r_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{relative_derivative, Control, RelativeState};
    use rand::Rng as _;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line braking game: state `[d, v]`, `d' = -v`, `v' = a` with
    /// `|a| <= 1`, failure at `d <= 0`. The avoidable region is `d > v^2/2`.
    pub(crate) struct StoppingModel;

    impl GameModel for StoppingModel {
        fn model_id(&self) -> &str {
            "stopping2d"
        }
        fn dim(&self) -> usize {
            2
        }
        fn ego_bounds(&self) -> &[(f64, f64)] {
            &[(-1.0, 1.0)]
        }
        fn disturbance_bounds(&self) -> &[(f64, f64)] {
            &[]
        }
        fn drift<R: Real>(&self, x: &[R], out: &mut [R]) {
            out[0] = -x[1];
            out[1] = R::constant(0.0);
        }
        fn ego_matrix<R: Real>(&self, _x: &[R], out: &mut [R]) {
            out[0] = R::constant(0.0);
            out[1] = R::constant(1.0);
        }
        fn disturbance_matrix<R: Real>(&self, _x: &[R], _out: &mut [R]) {}
        fn distance(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn failure_radius(&self) -> f64 {
            0.0
        }
    }

    fn stopping_grid(nd: usize, nv: usize) -> GridSpec {
        GridSpec::new(vec![GridDim::linear(0.0, 8.0, nd), GridDim::linear(0.0, 4.0, nv)]).unwrap()
    }

    #[test]
    fn terminal_values_are_node_distances() {
        let model = HvRelativeModel::standard();
        let spec = HvRelativeModel::grid_with_counts(&[9, 9, 8, 3, 3]).unwrap();
        let t = terminal_values(&spec, &model);
        // node at p_r = (1, 0): on this grid x = 1 isn't a node, use direct eval
        assert!((model.distance(&[1.0, 0.0, 0.0, 0.0, 0.0]) - 0.64).abs() < 1e-12);
        assert!((model.distance(&[0.6, 0.0, 0.0, 0.0, 0.0])).abs() < 1e-12);
        let s = StaticRelativeModel::standard();
        assert!((s.distance(&[0.0, 0.3, 0.0]) - (0.09 - 0.16)).abs() < 1e-12);
        // spot-check an actual node of the table
        let mut x = [0.0; 5];
        spec.node_coords(17, &mut x);
        assert_eq!(t[17], model.distance(&x));
    }

    #[test]
    fn hamiltonian_hand_cases() {
        let model = HvRelativeModel::standard();
        let h = hamiltonian(&model, &[1.0, 0.0, 0.0, 1.0, 1.0], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(h.abs() < 1e-15, "drift cancels and G rows vanish, got {h}");

        let h = hamiltonian(&model, &[2.0, -1.0, 0.7, 1.0, 3.0], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((h - 5.0 * PI / 18.0).abs() < 1e-12, "sup over -w plus inf over w_h, got {h}");
    }

    #[test]
    fn hamiltonian_is_positively_homogeneous() {
        let model = HvRelativeModel::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let x = [
                rng.random_range(-8.0..8.0),
                rng.random_range(-8.0..8.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..4.0),
                rng.random_range(0.0..4.0),
            ];
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p2: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            let h1 = hamiltonian(&model, &x, &p);
            let h2 = hamiltonian(&model, &x, &p2);
            assert!((h2 - 2.0 * h1).abs() < 1e-10 * (1.0 + h1.abs()));
        }
    }

    #[test]
    fn model_dynamics_agree_with_relative_derivative() {
        let model = HvRelativeModel::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let xr = RelativeState {
                p_xr: rng.random_range(-8.0..8.0),
                p_yr: rng.random_range(-8.0..8.0),
                phi_r: rng.random_range(0.0..2.0 * PI),
                v: rng.random_range(0.0..4.0),
                v_h: rng.random_range(0.0..4.0),
            };
            let u = Control::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let uh = Control::new(rng.random_range(-0.17..0.17), rng.random_range(-1.0..1.0));
            let x = xr.as_array();
            let mut f0 = [0.0; 5];
            let mut ga = [0.0; 10];
            let mut gb = [0.0; 10];
            model.drift(&x, &mut f0);
            model.ego_matrix(&x, &mut ga);
            model.disturbance_matrix(&x, &mut gb);
            let want = relative_derivative(&xr, &u, &uh);
            for j in 0..5 {
                let got = f0[j] + ga[j * 2] * u.w + ga[j * 2 + 1] * u.a + gb[j * 2] * uh.w + gb[j * 2 + 1] * uh.a;
                assert!((got - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dissipation_bounds_match_hand_intervals() {
        let model = HvRelativeModel::standard();
        let spec = HvRelativeModel::reduced_grid();
        let a = dissipation_bounds(&model, &spec);
        let expect_pxr = 4.0 + 4.0 + 8.0 * PI / 3.0;
        assert!(a[0] >= expect_pxr - 1e-9 && a[0] <= expect_pxr * 1.0001, "p_xr bound {}", a[0]);
        assert!((a[2] - (PI / 3.0 + PI / 18.0)).abs() < 1e-12, "phi bound {}", a[2]);
        assert!((a[3] - 1.0).abs() < 1e-12, "v bound {}", a[3]);
        assert!((a[4] - 1.0).abs() < 1e-12, "v_h bound {}", a[4]);
    }

    #[test]
    fn interval_trig_covers_extrema() {
        let i = Interval::new(0.0, 2.0 * PI);
        assert_eq!(i.cos(), Interval::new(-1.0, 1.0));
        let j = Interval::new(2.9, 3.3); // brackets pi
        assert_eq!(j.cos().lo, -1.0);
        assert!(j.cos().hi < -0.9);
        let k = Interval::new(-0.4, 0.3); // brackets 0
        assert_eq!(k.cos().hi, 1.0);
        let s = Interval::new(1.4, 1.8); // brackets pi/2
        assert_eq!(s.sin().hi, 1.0);
    }

    #[test]
    fn zero_horizon_returns_terminal_exactly() {
        let model = StoppingModel;
        let spec = stopping_grid(21, 11);
        let vf = solve(&model, &spec, &SolverConfig { horizon: 0.0, ..Default::default() }).unwrap();
        assert_eq!(vf.values(), terminal_values(&spec, &model).as_slice());
    }

    #[test]
    fn stopping_game_boundary_is_minimum_braking_curve() {
        let model = StoppingModel;
        let spec = stopping_grid(41, 21);
        // the failure well continues below d = 0, so the wall must extrapolate
        let cfg =
            SolverConfig { horizon: 4.0, cfl: 0.8, boundary: BoundaryMode::Extrapolate, log_progress: false };
        let vf = solve(&model, &spec, &cfg).unwrap();
        let dd = spec.dims()[0].spacing();
        // scan the zero crossing along d for a few speeds
        for &v in &[1.0, 2.0, 3.0] {
            let mut crossing = None;
            let mut prev = None;
            for i in 0..41 {
                let d = spec.dims()[0].coord(i);
                let val = vf.interpolate(&[d, v]).unwrap();
                if let Some((pd, pv)) = prev {
                    if pv < 0.0 && val >= 0.0 {
                        crossing = Some(pd + (d - pd) * (0.0 - pv) / (val - pv));
                        break;
                    }
                }
                prev = Some((d, val));
            }
            let c = crossing.expect("no zero crossing found");
            assert!((c - v * v / 2.0).abs() <= 2.0 * dd, "v = {v}: crossing {c} vs {}", v * v / 2.0);
        }
    }

    #[test]
    fn value_never_exceeds_terminal_and_shrinks_with_horizon() {
        let model = HvRelativeModel::standard();
        let spec = HvRelativeModel::grid_with_counts(&[13, 13, 8, 3, 3]).unwrap();
        let term = terminal_values(&spec, &model);
        let v_short = solve(&model, &spec, &SolverConfig { horizon: 0.25, ..Default::default() }).unwrap();
        let v_long = solve(&model, &spec, &SolverConfig { horizon: 0.5, ..Default::default() }).unwrap();
        for n in 0..term.len() {
            assert!(v_short.values()[n] <= term[n] + 1e-12);
            assert!(v_long.values()[n] <= v_short.values()[n] + 1e-12);
        }
    }

    #[test]
    fn update_is_monotone_in_stencil_neighbors() {
        let model = StoppingModel;
        let spec = stopping_grid(17, 9);
        let terminal = terminal_values(&spec, &model);
        let alphas = dissipation_bounds(&model, &spec);
        let rate: f64 = alphas.iter().zip(spec.dims()).map(|(a, d)| a / d.spacing()).sum();
        let dt = 0.8 / rate;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let base: Vec<f64> = (0..spec.node_count()).map(|_| rng.random_range(-1.0..4.0)).collect();
        let bc = BoundaryMode::ZeroGradient;
        let stepped = lax_friedrichs_step(&model, &spec, &base, &terminal, dt, bc);
        for _ in 0..200 {
            let bump_at = rng.random_range(0..base.len());
            let mut bumped = base.clone();
            bumped[bump_at] += rng.random_range(0.0..0.5);
            let stepped_b = lax_friedrichs_step(&model, &spec, &bumped, &terminal, dt, bc);
            for n in 0..base.len() {
                assert!(
                    stepped_b[n] >= stepped[n] - 1e-12,
                    "raising node {bump_at} lowered node {n}: {} -> {}",
                    stepped[n],
                    stepped_b[n]
                );
            }
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let model = StoppingModel;
        let spec = stopping_grid(33, 17);
        let cfg = SolverConfig { horizon: 2.0, ..Default::default() };
        let a = solve(&model, &spec, &cfg).unwrap();
        let b = solve(&model, &spec, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn static_table_survives_persistence_bit_for_bit() {
        let model = StaticRelativeModel::standard();
        let spec = StaticRelativeModel::grid_with_counts(&[30, 30, 4]).unwrap();
        let vf = solve(&model, &spec, &SolverConfig::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("vf_static_rt_{}", std::process::id()));
        let path = dir.join("static3d.vf");
        vf.save(&path).unwrap();
        let loaded = crate::grid::ValueFunction::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let x = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(0.0..4.0)];
            // bit-exact payload means bit-exact interpolation
            assert_eq!(vf.interpolate(&x).unwrap(), loaded.interpolate(&x).unwrap());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    /// Model with a bottomless pit in its distance function: the sweep must
    /// report the step and node where values stop being finite.
    struct BottomlessModel;

    impl GameModel for BottomlessModel {
        fn model_id(&self) -> &str {
            "bottomless"
        }
        fn dim(&self) -> usize {
            1
        }
        fn ego_bounds(&self) -> &[(f64, f64)] {
            &[(-1.0, 1.0)]
        }
        fn disturbance_bounds(&self) -> &[(f64, f64)] {
            &[]
        }
        fn drift<R: Real>(&self, _x: &[R], out: &mut [R]) {
            out[0] = R::constant(0.0);
        }
        fn ego_matrix<R: Real>(&self, _x: &[R], out: &mut [R]) {
            out[0] = R::constant(1.0);
        }
        fn disturbance_matrix<R: Real>(&self, _x: &[R], _out: &mut [R]) {}
        fn distance(&self, x: &[f64]) -> f64 {
            if x[0] > 1.8 {
                f64::NEG_INFINITY
            } else {
                x[0]
            }
        }
        fn failure_radius(&self) -> f64 {
            0.0
        }
    }

    #[test]
    fn non_finite_sweep_reports_step_and_node() {
        let spec = GridSpec::new(vec![GridDim::linear(1.0, 2.0, 8)]).unwrap();
        let err = solve(&BottomlessModel, &spec, &SolverConfig { horizon: 1.0, ..Default::default() }).unwrap_err();
        match err {
            SolverError::NonFinite { step, node } => {
                assert_eq!(step, 0);
                assert!(node < 8);
            }
            other => panic!("expected a non-finite report, got {other:?}"),
        }
    }

    #[test]
    fn unusable_speed_bounds_are_rejected_up_front() {
        struct Runaway;
        impl GameModel for Runaway {
            fn model_id(&self) -> &str {
                "runaway"
            }
            fn dim(&self) -> usize {
                1
            }
            fn ego_bounds(&self) -> &[(f64, f64)] {
                &[]
            }
            fn disturbance_bounds(&self) -> &[(f64, f64)] {
                &[]
            }
            fn drift<R: Real>(&self, x: &[R], out: &mut [R]) {
                out[0] = x[0] * R::constant(f64::MAX);
            }
            fn ego_matrix<R: Real>(&self, _x: &[R], _out: &mut [R]) {}
            fn disturbance_matrix<R: Real>(&self, _x: &[R], _out: &mut [R]) {}
            fn distance(&self, x: &[f64]) -> f64 {
                x[0]
            }
            fn failure_radius(&self) -> f64 {
                0.0
            }
        }
        let spec = GridSpec::new(vec![GridDim::linear(1.0, 2.0, 8)]).unwrap();
        let err = solve(&Runaway, &spec, &SolverConfig { horizon: 1.0, ..Default::default() }).unwrap_err();
        assert!(matches!(err, SolverError::InvalidConfig(_)), "got {err:?}");
    }

    #[test]
    fn dyadic_step_is_a_power_of_two_not_exceeding_input() {
        for &x in &[0.0123, 0.016, 0.99, 1.0, 0.0078125] {
            let d = dyadic_step(x);
            assert!(d <= x + 1e-18);
            assert!(2.0 * d > x);
            let log = d.log2();
            assert_eq!(log, log.round());
        }
    }
}
