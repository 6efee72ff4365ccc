use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};

use super::arm::ArmModel;
use super::controller::{controller_step, ControllerGains, ControllerState};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{LatentPoint, PriorBox};
use crate::seed;

/// Sampling protocol of a trajectory rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub samples: usize,
    pub rate_hz: f64,
    /// Integration steps per recorded sample.
    pub substeps: usize,
    /// Error norm below which the hand holds position.
    pub converge_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            samples: 90,
            rate_hz: 30.0,
            substeps: 32,
            converge_tol: 0.005,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.substeps == 0 {
            return Err(Error::invalid("samples and substeps must be positive"));
        }
        if !(self.rate_hz > 0.0 && self.converge_tol >= 0.0) {
            return Err(Error::invalid("rate must be positive and tolerance non-negative"));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.samples * 3
    }
}

/// Recorded hand trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Vector3<f64>>,
    pub goal: Vector3<f64>,
    /// Sample index at which the hand started holding, if it converged.
    pub converged_at: Option<usize>,
    /// Goal lay outside the reach annulus.
    pub unreachable: bool,
    pub seed: u64,
}

impl Trajectory {
    /// Samples flattened as `x0 y0 z0 x1 y1 z1 ...`.
    pub fn flat(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn final_error(&self) -> f64 {
        (self.samples.last().unwrap() - self.goal).norm()
    }
}

/// Rolls the controller for `sim.samples` samples. Sample `i` is the hand
/// position after `i + 1` sample periods. Once the error drops below the
/// convergence tolerance the hand holds that position. Gaussian noise of std
/// `sigma_obs` drawn from `seed` is then added to every coordinate.
pub fn simulate_trajectory(
    arm: &ArmModel,
    gains: &ControllerGains,
    sim: &SimConfig,
    goal: Vector3<f64>,
    init_theta: &[f64],
    sigma_obs: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(sigma_obs >= 0.0 && sigma_obs.is_finite()) {
        return Err(Error::invalid("sigma_obs must be finite and non-negative"));
    }
    let dt = 1.0 / (sim.rate_hz * sim.substeps as f64);
    let mut state = ControllerState::new(init_theta.to_vec());
    arm.clamp_to_limits(&mut state.theta);
    let mut hand = arm.forward_kinematics(&state.theta)?;
    let mut samples = Vec::with_capacity(sim.samples);
    let mut converged_at = None;
    if (goal - hand).norm() < sim.converge_tol {
        converged_at = Some(0);
    }
    for i in 0..sim.samples {
        if converged_at.is_none() {
            for _ in 0..sim.substeps {
                let out = controller_step(arm, gains, &state, &goal, dt)
                    .map_err(|_| Error::SimulationDiverged { step: i })?;
                state = out.state;
                hand = out.hand;
            }
            if !hand.iter().all(|v| v.is_finite()) {
                return Err(Error::SimulationDiverged { step: i });
            }
            if (goal - hand).norm() < sim.converge_tol {
                converged_at = Some(i);
            }
        }
        samples.push(hand);
    }
    if sigma_obs > 0.0 {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, sigma_obs).expect("valid std");
        for p in &mut samples {
            for v in p.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    Ok(Trajectory {
        samples,
        goal,
        converged_at,
        unreachable: false,
        seed,
    })
}

/// The reaching problem: arm, controller, protocol, and the table the goals
/// lie on.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachScene {
    pub arm: ArmModel,
    pub gains: ControllerGains,
    pub sim: SimConfig,
    pub init_theta: Vec<f64>,
    /// Goal region on the table plane.
    pub table: PriorBox,
    pub table_height: f64,
    /// Planar distance range from the base that counts as reachable.
    pub reach_inner: f64,
    pub reach_outer: f64,
}

impl Default for ReachScene {
    fn default() -> Self {
        let arm = ArmModel::planar_lift();
        let reach_outer = 0.98 * arm.planar_reach();
        ReachScene {
            init_theta: vec![0.3, -1.2, 1.8, 1.8],
            arm,
            gains: ControllerGains::default(),
            sim: SimConfig::default(),
            table: PriorBox::cube(vec![0.0, 0.0], 2.0).expect("valid box"),
            table_height: 0.0,
            reach_inner: 0.25,
            reach_outer,
        }
    }
}

impl ReachScene {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.sim.validate()?;
        if self.init_theta.len() != self.arm.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.arm.dof(),
                found: self.init_theta.len(),
            });
        }
        if self.table.dim() != 2 {
            return Err(Error::invalid("the table region must be two-dimensional"));
        }
        if !(0.0 <= self.reach_inner && self.reach_inner < self.reach_outer) {
            return Err(Error::invalid("reach annulus must satisfy 0 <= inner < outer"));
        }
        Ok(())
    }

    /// Lifts a table-plane goal to 3D.
    pub fn lift(&self, goal: &[f64]) -> Vector3<f64> {
        Vector3::new(goal[0], goal[1], self.table_height)
    }

    pub fn is_reachable(&self, goal: &[f64]) -> bool {
        let base = self.arm.base.translation.vector;
        let r = (goal[0] - base.x).hypot(goal[1] - base.y);
        self.reach_inner <= r && r <= self.reach_outer
    }

    pub fn initial_hand(&self) -> Result<Vector3<f64>> {
        self.arm.forward_kinematics(&self.init_theta)
    }

    pub fn output_dim(&self) -> usize {
        self.sim.output_dim()
    }

    /// Simulates a reach to a table-plane goal.
    pub fn simulate(&self, goal: &[f64], sigma_obs: f64, seed: u64) -> Result<Trajectory> {
        if goal.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: goal.len(),
            });
        }
        let mut t = simulate_trajectory(
            &self.arm,
            &self.gains,
            &self.sim,
            self.lift(goal),
            &self.init_theta,
            sigma_obs,
            seed,
        )?;
        t.unreachable = !self.is_reachable(goal);
        Ok(t)
    }

    /// Draws a reachable goal uniformly on the table by rejection. Returns the
    /// goal and the number of unreachable draws rejected along the way.
    pub fn sample_goal<R: rand::Rng + ?Sized>(&self, rng: &mut R, max_draws: usize) -> Option<(LatentPoint, usize)> {
        for rejected in 0..max_draws {
            let g = self.table.sample(rng);
            if self.is_reachable(&g) {
                return Some((g, rejected));
            }
        }
        None
    }
}

/// Noise-free simulator exposed as a forward model.
pub struct RawSimForward<'a> {
    pub scene: &'a ReachScene,
}

impl<'a> RawSimForward<'a> {
    pub fn new(scene: &'a ReachScene) -> Self {
        RawSimForward { scene }
    }
}

impl ForwardModel for RawSimForward<'_> {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        self.scene.output_dim()
    }

    fn forward_batch(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .map(|x| Ok(self.scene.simulate(x, 0.0, 0)?.flat()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_at_start_gives_constant_trajectory() {
        let scene = ReachScene::default();
        let start = scene.initial_hand().unwrap();
        let t = simulate_trajectory(
            &scene.arm,
            &scene.gains,
            &scene.sim,
            start,
            &scene.init_theta,
            0.0,
            1,
        )
        .unwrap();
        assert_eq!(t.samples.len(), 90);
        assert!(t.samples.iter().all(|p| *p == start));
    }

    #[test]
    fn reaches_goal_and_holds() {
        let scene = ReachScene::default();
        for goal in [[1.0, 1.0], [-1.5, 0.5], [0.3, -1.9], [-1.2, -1.7]] {
            let t = scene.simulate(&goal, 0.0, 0).unwrap();
            assert_eq!(t.samples.len(), 90);
            assert!(!t.unreachable);
            // Oracle: the last sample against the goal itself.
            assert!(t.final_error() < 0.01, "goal {goal:?} error {}", t.final_error());
            let k = t.converged_at.unwrap();
            assert!(t.samples[k..].iter().all(|p| *p == t.samples[k]));
        }
    }

    #[test]
    fn sample_speed_is_bounded() {
        let scene = ReachScene::default();
        let t = scene.simulate(&[-1.9, -1.9], 0.0, 0).unwrap();
        let cap = scene.gains.v_max / scene.sim.rate_hz;
        let mut prev = scene.initial_hand().unwrap();
        for p in &t.samples {
            assert!((p - prev).norm() <= cap * (1.0 + 1e-9));
            prev = *p;
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let scene = ReachScene::default();
        let a = scene.simulate(&[0.8, -0.6], 0.01, 42).unwrap();
        let b = scene.simulate(&[0.8, -0.6], 0.01, 42).unwrap();
        let c = scene.simulate(&[0.8, -0.6], 0.01, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flat(), c.flat());
        let clean = scene.simulate(&[0.8, -0.6], 0.0, 42).unwrap();
        let dev: f64 = a.flat().iter().zip(clean.flat()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 270.0;
        assert!((dev.sqrt() - 0.01).abs() < 0.002);
    }

    #[test]
    fn unreachable_goal_is_flagged() {
        let scene = ReachScene::default();
        assert!(scene.simulate(&[0.05, -2.3], 0.0, 0).unwrap().unreachable);
        assert!(scene.simulate(&[4.0, 4.0], 0.0, 0).unwrap().unreachable);
        // The whole default table is inside the reach annulus.
        for corner in [[-2.0, -2.0], [2.0, -2.0], [-2.0, 2.0], [2.0, 2.0]] {
            assert!(scene.is_reachable(&corner));
        }
    }

    #[test]
    fn raw_forward_matches_simulation() {
        let scene = ReachScene::default();
        let f = RawSimForward::new(&scene);
        let out = f.forward(&vec![0.5, 1.5].into()).unwrap();
        assert_eq!(out, scene.simulate(&[0.5, 1.5], 0.0, 0).unwrap().flat());
        assert_eq!(out.len(), 270);
    }
}
