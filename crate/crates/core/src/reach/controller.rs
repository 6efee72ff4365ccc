use nalgebra::{DMatrix, DVector, Vector3};

use super::arm::{pseudo_inverse, ArmModel};
use crate::error::{Error, Result};

/// Obstacle force-field law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepulsionLaw {
    /// `(x - x_obj) K_rep / |x - x_obj|^3`.
    InverseSquare,
    /// `(x - x_obj) K_rep`, growing with distance.
    Linear,
}

/// Task-space PID with obstacle repulsion and nullspace posture control.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub k_rep: f64,
    pub nullspace_gain: f64,
    pub obstacles: Vec<Vector3<f64>>,
    pub repulsion: RepulsionLaw,
    /// Damping of the Jacobian pseudo-inverse.
    pub damping: f64,
    /// Hand speed cap in m/s.
    pub v_max: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            kp: 5.0,
            ki: 0.2,
            kd: 0.05,
            k_rep: 0.0,
            nullspace_gain: 1.0,
            obstacles: Vec::new(),
            repulsion: RepulsionLaw::InverseSquare,
            damping: 1e-3,
            v_max: 2.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let gains = [self.kp, self.ki, self.kd, self.k_rep, self.nullspace_gain, self.damping];
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("controller gains must be finite and non-negative"));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::invalid("v_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub theta: Vec<f64>,
    pub integral: Vector3<f64>,
    pub prev_error: Option<Vector3<f64>>,
}

impl ControllerState {
    pub fn new(theta: Vec<f64>) -> Self {
        ControllerState {
            theta,
            integral: Vector3::zeros(),
            prev_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: ControllerState,
    /// Hand position after the step.
    pub hand: Vector3<f64>,
    /// Commanded task-space velocity after saturation.
    pub hand_velocity: Vector3<f64>,
    pub theta_dot: Vec<f64>,
    /// Error norm before the step.
    pub error_norm: f64,
    pub clamped: bool,
    /// An obstacle sat on the hand and its term was dropped.
    pub obstacle_skipped: bool,
}

fn repulsion(gains: &ControllerGains, x: &Vector3<f64>) -> (Vector3<f64>, bool) {
    let mut f = Vector3::zeros();
    let mut skipped = false;
    if gains.k_rep == 0.0 {
        return (f, false);
    }
    for obj in &gains.obstacles {
        let d = x - obj;
        let n = d.norm();
        if n < 1e-6 {
            skipped = true;
            continue;
        }
        f += match gains.repulsion {
            RepulsionLaw::InverseSquare => d * (gains.k_rep / (n * n * n)),
            RepulsionLaw::Linear => d * gains.k_rep,
        };
    }
    (f, skipped)
}

/// One explicit-Euler controller step of length `dt` toward `goal`.
pub fn controller_step(
    arm: &ArmModel,
    gains: &ControllerGains,
    state: &ControllerState,
    goal: &Vector3<f64>,
    dt: f64,
) -> Result<StepOutput> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt must be positive"));
    }
    if !(state.integral.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("controller integral"));
    }
    let (x, jac) = arm.kinematics(&state.theta)?;
    let e = goal - x;
    let de = state.prev_error.map_or(Vector3::zeros(), |p| (e - p) / dt);
    let (rep, obstacle_skipped) = repulsion(gains, &x);

    let mut integral = state.integral + e * dt;
    let mut xdot = e * gains.kp + integral * gains.ki + de * gains.kd + rep;
    let speed = xdot.norm();
    if speed > gains.v_max {
        // Saturated: freeze the integrator against windup.
        integral = state.integral;
        xdot = e * gains.kp + integral * gains.ki + de * gains.kd + rep;
        let s = xdot.norm();
        if s > gains.v_max {
            xdot *= gains.v_max / s;
        }
    }

    let n = arm.dof();
    let xdot_d = DVector::from_column_slice(xdot.as_slice());
    let posture = DVector::from_iterator(
        n,
        arm.theta_sec.iter().zip(&state.theta).map(|(s, t)| s - t),
    );
    // Joints sitting on a limit and driven outward are frozen (their Jacobian
    // columns removed) and the velocity solved again with the rest.
    let mut active = jac.clone();
    let mut theta_dot = DVector::zeros(n);
    for _ in 0..=n {
        let pinv = pseudo_inverse(&active, gains.damping)?;
        theta_dot = &pinv * &xdot_d;
        if gains.nullspace_gain > 0.0 {
            let projector = DMatrix::<f64>::identity(n, n) - &pinv * &active;
            theta_dot += projector * &posture * gains.nullspace_gain;
        }
        let mut changed = false;
        for (i, j) in arm.joints.iter().enumerate() {
            let q = state.theta[i];
            let pushing = (q <= j.limits.0 && theta_dot[i] < 0.0) || (q >= j.limits.1 && theta_dot[i] > 0.0);
            if pushing && active.column(i).iter().any(|v| *v != 0.0) {
                active.column_mut(i).fill(0.0);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, j) in arm.joints.iter().enumerate() {
        let q = state.theta[i];
        if (q <= j.limits.0 && theta_dot[i] < 0.0) || (q >= j.limits.1 && theta_dot[i] > 0.0) {
            theta_dot[i] = 0.0;
        }
    }

    let mut theta: Vec<f64> = state.theta.iter().zip(theta_dot.iter()).map(|(t, d)| t + d * dt).collect();
    let mut clamped = arm.clamp_to_limits(&mut theta);
    let mut hand = arm.forward_kinematics(&theta)?;

    // The realized hand displacement honours the speed cap despite the
    // linearization error of large joint steps.
    let cap = gains.v_max * dt;
    for _ in 0..8 {
        let moved = (hand - x).norm();
        if moved <= cap * (1.0 + 1e-9) {
            break;
        }
        let shrink = 0.99 * cap / moved;
        for (t, s) in theta.iter_mut().zip(&state.theta) {
            *t = s + (*t - s) * shrink;
        }
        clamped |= arm.clamp_to_limits(&mut theta);
        hand = arm.forward_kinematics(&theta)?;
    }

    if !hand.iter().all(|v| v.is_finite()) || !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("controller state"));
    }
    let theta_dot: Vec<f64> = theta.iter().zip(&state.theta).map(|(a, b)| (a - b) / dt).collect();
    Ok(StepOutput {
        state: ControllerState {
            theta,
            integral,
            prev_error: Some(e),
        },
        hand,
        hand_velocity: xdot,
        theta_dot,
        error_norm: e.norm(),
        clamped,
        obstacle_skipped,
    })
}
