//! Planar two-joint arm carrying a tactile sensor above a parametric surface.

mod env;
mod kinematics;
mod render;
mod surface;

pub use env::{parse_kv, Env, EnvConfig, EnvProbe, StepRecord};
pub use kinematics::{apply_action, forward_kinematics, ActionOutcome, ArmGeometry, JointConfig, JointLimits, SensorPose};
pub use render::{max_penetration, render_tactile, SensorModel};
pub use surface::{surface_height, Surface, SurfaceKind};
