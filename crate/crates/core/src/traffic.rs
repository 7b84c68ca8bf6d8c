//! Scripted human-vehicle behavior: lane-following steering by pure pursuit
//! plus one of three longitudinal policies. Car-following (IDM) yields to a
//! vehicle merging ahead, speed-holding ignores everyone, and the
//! adversarial mode floors the accelerator to contest the right of way.

use crate::dynamics::{wrap_to_pi, Control, ControlBounds, VehicleState};
use serde::{Deserialize, Serialize};

/// Center-to-center longitudinal space one vehicle body occupies.
pub const VEHICLE_LENGTH: f64 = 1.0;

/// Speed the adversarial mode accelerates up to (the tabulated domain's
/// maximum opponent speed).
pub const ADVERSARIAL_SPEED_CAP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorMode {
    Cooperative,
    Oblivious,
    Adversarial,
}

/// Intelligent-driver-model parameters, scaled to the 1:4 environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Desired free-flow speed (set to the vehicle's initial speed).
    pub v0: f64,
    /// Time headway (s).
    pub headway: f64,
    /// Minimum standstill gap (m).
    pub min_gap: f64,
    /// Maximum acceleration (m/s²).
    pub a_max: f64,
    /// Comfortable deceleration (m/s²).
    pub b_comf: f64,
    /// Free-flow exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { v0: 1.0, headway: 1.0, min_gap: 0.5, a_max: 1.0, b_comf: 1.5, delta: 4.0 }
    }
}

/// Car-following acceleration. `gap` is bumper-to-bumper; a non-positive gap
/// commands full braking.
pub fn idm_acceleration(gap: f64, v: f64, v_lead: f64, p: &IdmParams, bounds: &ControlBounds) -> f64 {
    if gap <= 0.0 {
        return bounds.a_min;
    }
    let dv = v - v_lead;
    let s_star = p.min_gap + v * p.headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt());
    let a = p.a_max * (1.0 - (v / p.v0).powf(p.delta) - (s_star / gap).powi(2));
    a.clamp(bounds.a_min, bounds.a_max)
}

/// A lane reference: a polyline with a corridor width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePath {
    pub waypoints: Vec<[f64; 2]>,
    pub width: f64,
}

impl LanePath {
    pub fn new(waypoints: Vec<[f64; 2]>, width: f64) -> Result<Self, String> {
        if waypoints.len() < 2 {
            return Err("lane path needs at least two waypoints".into());
        }
        for w in waypoints.windows(2) {
            if (w[0][0] - w[1][0]).abs() < 1e-12 && (w[0][1] - w[1][1]).abs() < 1e-12 {
                return Err("consecutive lane waypoints must be distinct".into());
            }
        }
        Ok(Self { waypoints, width })
    }

    pub fn straight(from: [f64; 2], to: [f64; 2], width: f64) -> Self {
        Self::new(vec![from, to], width).unwrap()
    }

    fn segment_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.waypoints.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
    }

    pub fn length(&self) -> f64 {
        self.segment_lengths().sum()
    }

    /// Arc-length station of the closest point on the path, plus the signed
    /// lateral offset (positive to the left of travel).
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY, 0.0);
        let mut cum = 0.0;
        for w in self.waypoints.windows(2) {
            let ax = w[0][0];
            let ay = w[0][1];
            let bx = w[1][0];
            let by = w[1][1];
            let ex = bx - ax;
            let ey = by - ay;
            let len2 = ex * ex + ey * ey;
            let t = (((p[0] - ax) * ex + (p[1] - ay) * ey) / len2).clamp(0.0, 1.0);
            let cx = ax + t * ex;
            let cy = ay + t * ey;
            let d2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
            if d2 < best.1 {
                let len = len2.sqrt();
                // cross product sign gives the side of the lane axis
                let side = (ex * (p[1] - ay) - ey * (p[0] - ax)) / len;
                best = (cum + t * len, d2, side);
            }
            cum += len2.sqrt();
        }
        (best.0, best.2)
    }

    /// Point at a station, clamped to the path extent.
    pub fn point_at(&self, station: f64) -> [f64; 2] {
        let mut s = station.max(0.0);
        for w in self.waypoints.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if s <= len {
                let t = s / len;
                return [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
            }
            s -= len;
        }
        *self.waypoints.last().unwrap()
    }

    pub fn heading_at(&self, station: f64) -> f64 {
        let mut s = station.max(0.0);
        for w in self.waypoints.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if s <= len {
                return (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
            }
            s -= len;
        }
        let w = &self.waypoints[self.waypoints.len() - 2..];
        (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0])
    }
}

/// Pure-pursuit yaw rate toward a point `lookahead` meters down the lane.
pub fn pure_pursuit_yaw_rate(s: &VehicleState, lane: &LanePath, lookahead: f64) -> f64 {
    let (station, _) = lane.project(s.position());
    let target = lane.point_at(station + lookahead);
    let alpha = wrap_to_pi((target[1] - s.p_y).atan2(target[0] - s.p_x) - s.theta);
    let curvature = 2.0 * alpha.sin() / lookahead;
    s.v * curvature
}

fn lookahead(v: f64) -> f64 {
    (0.8 * v).max(0.5)
}

/// One step of the behavior policy.
pub fn hv_policy(
    hv: &VehicleState,
    mode: BehaviorMode,
    ego: &VehicleState,
    lane: &LanePath,
    p: &IdmParams,
    bounds: &ControlBounds,
) -> Control {
    let w = pure_pursuit_yaw_rate(hv, lane, lookahead(hv.v)).clamp(bounds.w_min, bounds.w_max);
    let a = match mode {
        BehaviorMode::Cooperative => {
            let (hv_station, _) = lane.project(hv.position());
            let (ego_station, ego_offset) = lane.project(ego.position());
            let ego_leads = ego_station > hv_station && ego_offset.abs() < lane.width / 2.0;
            if ego_leads {
                let gap = ego_station - hv_station - VEHICLE_LENGTH;
                let lane_heading = lane.heading_at(ego_station);
                let v_lead = ego.v * (ego.theta - lane_heading).cos();
                idm_acceleration(gap, hv.v, v_lead, p, bounds)
            } else {
                idm_acceleration(f64::INFINITY, hv.v, hv.v, p, bounds)
            }
        }
        BehaviorMode::Oblivious => {
            // proportional speed hold at the pre-set lane speed, unit gain
            (p.v0 - hv.v).clamp(bounds.a_min, bounds.a_max)
        }
        BehaviorMode::Adversarial => {
            if hv.v < ADVERSARIAL_SPEED_CAP {
                bounds.a_max
            } else {
                0.0
            }
        }
    };
    Control::new(w, a)
}
