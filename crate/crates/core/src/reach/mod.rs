//! Reaching-intent simulator: a kinematic arm driven by a task-space PID with
//! obstacle repulsion and nullspace posture control, sampled as 90 hand
//! positions at 30 Hz.

mod arm;
mod controller;
mod dataset;
mod sim;

pub use arm::{pseudo_inverse, ArmModel, Joint, JointKind};
pub use controller::{
    controller_step, ControllerGains, ControllerState, RepulsionLaw, StepOutput,
};
pub use dataset::{generate_dataset, meta_path, scene_meta, ReachDataset, FORMAT_VERSION};
pub use sim::{simulate_trajectory, RawSimForward, ReachScene, SimConfig, Trajectory};
