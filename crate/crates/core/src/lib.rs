//! Motion planning and safe control for interactive driving.
//!
//! The crate combines three pieces that work off one shared artifact, a
//! precomputed differential-game value function on a grid:
//!
//! * [`solver`] sweeps the final-value game backwards in time on a grid
//!   ([`grid`]) to produce worst-case minimum-distance value functions for
//!   a vehicle/vehicle game and a vehicle/static-obstacle model.
//! * [`planner`] is a model-based diffusion trajectory optimizer whose
//!   sampling objective ([`objective`]) is guided by value-function lookups,
//!   steering candidate rollouts away from states the game says are lost.
//! * [`shield`] turns the same value function into a barrier constraint and
//!   solves a tiny quadratic program each control period so the executed
//!   command never leaves the provably safe set, whatever the other
//!   vehicles do within their input bounds.
//!
//! [`sim`] closes the loop: scripted human-driven vehicles ([`traffic`]),
//! a U-turn scenario ([`scenario`]), per-trial metrics, and seeded batch
//! evaluation.

pub mod dynamics;
pub mod grid;
pub mod objective;
pub mod planner;
pub mod scenario;
pub mod seeds;
pub mod shield;
pub mod sim;
pub mod solver;
pub mod traffic;

pub use dynamics::{Control, ControlBounds, ControlSequence, RelativeState, Trajectory, VehicleState};
pub use grid::{GridDim, GridError, GridSpec, ValueFunction, VfMeta};
pub use objective::{GoalSpec, GuidanceMode, ObjectiveWeights, SceneSnapshot, StaticObstacle};
pub use planner::{NoiseSchedule, PlannerConfig};
pub use scenario::Scenario;
pub use shield::{HalfSpace, ShieldConfig};
pub use sim::{BatchReport, RunOptions, TrialResult, ValueFunctions};
pub use solver::{GameModel, HvRelativeModel, SolverConfig, StaticRelativeModel};
