//! Vehicle models: unicycle dynamics, body-frame transforms, control-affine
//! relative dynamics, and explicit-Euler trajectory rollout.
//!
//! World-frame state is `[p_x, p_y, theta, v]` with controls `[w, a]`
//! (yaw rate, longitudinal acceleration). The relative state of another
//! vehicle expressed in the ego body frame is `[p_xr, p_yr, phi_r, v, v_h]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_to_pi(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = (a + PI).rem_euclid(two_pi);
    r - PI
}

/// Wraps an angle to `[0, 2*pi)`.
pub fn wrap_to_2pi(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}

/// World-frame vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub p_x: f64,
    pub p_y: f64,
    /// Heading, stored wrapped to `[-pi, pi)`.
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(p_x: f64, p_y: f64, theta: f64, v: f64) -> Self {
        Self { p_x, p_y, theta: wrap_to_pi(theta), v }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.p_x, self.p_y]
    }
}

/// Yaw rate and longitudinal acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub w: f64,
    pub a: f64,
}

impl Control {
    pub const ZERO: Control = Control { w: 0.0, a: 0.0 };

    pub fn new(w: f64, a: f64) -> Self {
        Self { w, a }
    }
}

/// Box bounds on yaw rate and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub w_min: f64,
    pub w_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl ControlBounds {
    /// Ego limits: yaw rate within `±pi/3` rad/s, acceleration within `±1` m/s².
    pub fn ego_default() -> Self {
        Self { w_min: -PI / 3.0, w_max: PI / 3.0, a_min: -1.0, a_max: 1.0 }
    }

    /// Human-vehicle limits: yaw rate within `±pi/18` rad/s, acceleration within `±1` m/s².
    pub fn hv_default() -> Self {
        Self { w_min: -PI / 18.0, w_max: PI / 18.0, a_min: -1.0, a_max: 1.0 }
    }

    pub fn clamp(&self, u: Control) -> Control {
        Control { w: u.w.clamp(self.w_min, self.w_max), a: u.a.clamp(self.a_min, self.a_max) }
    }

    pub fn contains(&self, u: Control, tol: f64) -> bool {
        u.w >= self.w_min - tol && u.w <= self.w_max + tol && u.a >= self.a_min - tol && u.a <= self.a_max + tol
    }

    /// The bounds as `[(lo, hi); 2]` boxes ordered `(w, a)`.
    pub fn as_boxes(&self) -> [(f64, f64); 2] {
        [(self.w_min, self.w_max), (self.a_min, self.a_max)]
    }
}

/// State of another vehicle in the ego body frame: relative position,
/// relative heading in `[0, 2*pi)`, and the two absolute speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub p_xr: f64,
    pub p_yr: f64,
    pub phi_r: f64,
    pub v: f64,
    pub v_h: f64,
}

impl RelativeState {
    pub fn as_array(&self) -> [f64; 5] {
        [self.p_xr, self.p_yr, self.phi_r, self.v, self.v_h]
    }
}

/// Time derivative of the ego state under a control.
pub fn ego_derivative(s: &VehicleState, u: &Control) -> [f64; 4] {
    [s.v * s.theta.cos(), s.v * s.theta.sin(), u.w, u.a]
}

/// Expresses `other` in the body frame of `ego`.
pub fn relative_state(ego: &VehicleState, other: &VehicleState) -> RelativeState {
    let dx = other.p_x - ego.p_x;
    let dy = other.p_y - ego.p_y;
    let (sin_t, cos_t) = ego.theta.sin_cos();
    RelativeState {
        p_xr: cos_t * dx + sin_t * dy,
        p_yr: -sin_t * dx + cos_t * dy,
        phi_r: wrap_to_2pi(other.theta - ego.theta),
        v: ego.v,
        v_h: other.v,
    }
}

/// Relative dynamics `f0(x) + G_A(x) u + G_B(x) u_h` written out.
///
/// The drift carries the closing motion, the ego input enters through the
/// rotating frame (yaw rate couples into both relative positions), and the
/// other vehicle only affects relative heading and its own speed.
pub fn relative_derivative(xr: &RelativeState, u: &Control, uh: &Control) -> [f64; 5] {
    [
        -xr.v + xr.v_h * xr.phi_r.cos() + xr.p_yr * u.w,
        xr.v_h * xr.phi_r.sin() - xr.p_xr * u.w,
        -u.w + uh.w,
        u.a,
        uh.a,
    ]
}

/// One explicit-Euler step of the ego dynamics; heading re-wrapped.
pub fn step(s: &VehicleState, u: &Control, dt: f64) -> VehicleState {
    let d = ego_derivative(s, u);
    VehicleState::new(s.p_x + dt * d[0], s.p_y + dt * d[1], s.theta + dt * d[2], s.v + dt * d[3])
}

/// Clamps a command to the box and saturates braking at standstill: these
/// vehicles have no reverse gear, and the tabulated games only certify
/// forward motion, so one Euler step never takes the speed below zero.
pub fn effective_control(u: Control, bounds: &ControlBounds, v: f64, dt: f64) -> Control {
    let mut c = bounds.clamp(u);
    if dt > 0.0 && v >= 0.0 {
        c.a = c.a.max(-v / dt);
    }
    c
}

/// A flat control sequence of `horizon` `(w, a)` pairs, the variable the
/// diffusion process perturbs and denoises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    data: Vec<f64>,
    horizon: usize,
    dt: f64,
}

impl ControlSequence {
    pub fn zeros(horizon: usize, dt: f64) -> Self {
        assert!(horizon >= 1, "control sequence needs at least one step");
        Self { data: vec![0.0; 2 * horizon], horizon, dt }
    }

    pub fn from_data(data: Vec<f64>, dt: f64) -> Self {
        assert!(data.len() >= 2 && data.len() % 2 == 0, "flat length must be 2N");
        let horizon = data.len() / 2;
        Self { data, horizon, dt }
    }

    pub fn from_controls(controls: &[Control], dt: f64) -> Self {
        let mut data = Vec::with_capacity(2 * controls.len());
        for c in controls {
            data.push(c.w);
            data.push(c.a);
        }
        Self::from_data(data, dt)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn control(&self, k: usize) -> Control {
        Control { w: self.data[2 * k], a: self.data[2 * k + 1] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Drops the first control and duplicates the last one, the receding
    /// horizon shift applied before re-noising a stale plan.
    pub fn shifted_left(&self) -> Self {
        let n = self.horizon;
        let mut data = Vec::with_capacity(2 * n);
        data.extend_from_slice(&self.data[2..]);
        data.push(self.data[2 * n - 2]);
        data.push(self.data[2 * n - 1]);
        Self { data, horizon: n, dt: self.dt }
    }
}

/// A rolled-out trajectory: `N+1` states and the `N` (clamped) controls that
/// produced them, so `states[k+1] == step(states[k], controls[k], dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<VehicleState>,
    pub controls: Vec<Control>,
    pub dt: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// Explicit-Euler rollout; every control is clamped to `bounds` (and its
/// braking saturated at standstill) before use, so the resulting trajectory
/// is always admissible no matter how the sequence was sampled. The stored
/// controls are the effective ones, keeping the step invariant exact.
pub fn rollout(x0: &VehicleState, seq: &ControlSequence, dt: f64, bounds: &ControlBounds) -> Trajectory {
    let n = seq.horizon();
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    let mut s = *x0;
    states.push(s);
    for k in 0..n {
        let u = effective_control(seq.control(k), bounds, s.v, dt);
        s = step(&s, &u, dt);
        states.push(s);
        controls.push(u);
    }
    Trajectory { states, controls, dt }
}
