use nalgebra::{DMatrix, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint of a serial chain. `offset` is the fixed translation from the
/// previous joint frame to this joint's frame, applied before the joint moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    pub axis: Unit<Vector3<f64>>,
    pub offset: Vector3<f64>,
    /// Radians for revolute joints, meters for prismatic ones.
    pub limits: (f64, f64),
}

impl Joint {
    pub fn revolute_z(offset: Vector3<f64>, limits: (f64, f64)) -> Self {
        Joint {
            kind: JointKind::Revolute,
            axis: Vector3::z_axis(),
            offset,
            limits,
        }
    }

    pub fn prismatic_z(offset: Vector3<f64>, limits: (f64, f64)) -> Self {
        Joint {
            kind: JointKind::Prismatic,
            axis: Vector3::z_axis(),
            offset,
            limits,
        }
    }
}

/// Serial kinematic chain ending in a hand point.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub base: Isometry3<f64>,
    pub joints: Vec<Joint>,
    /// Hand point in the last joint frame.
    pub tool: Vector3<f64>,
    /// Secondary posture pulled toward through the nullspace.
    pub theta_sec: Vec<f64>,
}

impl ArmModel {
    pub fn new(
        base: Isometry3<f64>,
        joints: Vec<Joint>,
        tool: Vector3<f64>,
        theta_sec: Vec<f64>,
    ) -> Result<Self> {
        if joints.len() < 2 {
            return Err(Error::invalid("an arm needs at least two joints"));
        }
        if theta_sec.len() != joints.len() {
            return Err(Error::DimensionMismatch {
                expected: joints.len(),
                found: theta_sec.len(),
            });
        }
        for (i, j) in joints.iter().enumerate() {
            if !(j.limits.0 < j.limits.1) {
                return Err(Error::invalid(format!("joint {i} has empty limits")));
            }
        }
        Ok(ArmModel {
            base,
            joints,
            tool,
            theta_sec,
        })
    }

    /// Planar chain of revolute z joints with the given link lengths along x.
    pub fn planar(lengths: &[f64]) -> Result<Self> {
        if lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("link lengths must be positive"));
        }
        let mut joints = Vec::with_capacity(lengths.len());
        let mut offset = Vector3::zeros();
        for &l in lengths {
            joints.push(Joint::revolute_z(offset, (-std::f64::consts::PI, std::f64::consts::PI)));
            offset = Vector3::new(l, 0.0, 0.0);
        }
        let n = joints.len();
        Self::new(Isometry3::identity(), joints, offset, vec![0.0; n])
    }

    /// Default arm: a vertical lift followed by three planar links (2.0 m,
    /// 1.7 m, 1.3 m), based 0.4 m behind the near edge of a 4 m x 4 m table
    /// centered at the origin and facing +y. The lift coordinate is the hand
    /// height.
    pub fn planar_lift() -> Self {
        let pi = std::f64::consts::PI;
        let joints = vec![
            Joint::prismatic_z(Vector3::zeros(), (-0.2, 0.8)),
            Joint::revolute_z(Vector3::zeros(), (-pi, pi)),
            Joint::revolute_z(Vector3::new(2.0, 0.0, 0.0), (-2.8, 2.8)),
            Joint::revolute_z(Vector3::new(1.7, 0.0, 0.0), (-2.8, 2.8)),
        ];
        let base = Isometry3::new(Vector3::new(0.0, -2.4, 0.0), Vector3::z() * (pi / 2.0));
        Self::new(base, joints, Vector3::new(1.3, 0.0, 0.0), vec![0.3, 0.0, 1.0, 1.0])
            .expect("default arm is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Link lengths: norms of the successive joint offsets and the tool.
    pub fn link_lengths(&self) -> Vec<f64> {
        self.joints[1..]
            .iter()
            .map(|j| j.offset.norm())
            .chain(std::iter::once(self.tool.norm()))
            .collect()
    }

    /// Sum of link lengths projected on the plane orthogonal to z, an upper
    /// bound on the planar reach.
    pub fn planar_reach(&self) -> f64 {
        self.joints[1..]
            .iter()
            .map(|j| j.offset.xy().norm())
            .sum::<f64>()
            + self.tool.xy().norm()
    }

    /// Clamps `theta` into the joint limits; returns whether anything moved.
    pub fn clamp_to_limits(&self, theta: &mut [f64]) -> bool {
        let mut clamped = false;
        for (t, j) in theta.iter_mut().zip(&self.joints) {
            let c = t.clamp(j.limits.0, j.limits.1);
            clamped |= c != *t;
            *t = c;
        }
        clamped
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("joint angles"));
        }
        Ok(())
    }

    /// Walks the chain, reporting each joint's world origin and axis.
    fn chain(&self, theta: &[f64], mut visit: impl FnMut(usize, Vector3<f64>, Vector3<f64>)) -> Vector3<f64> {
        let mut t = self.base;
        for (i, (j, &q)) in self.joints.iter().zip(theta).enumerate() {
            t *= Translation3::from(j.offset);
            let axis = t.rotation * j.axis.into_inner();
            visit(i, t.translation.vector, axis);
            match j.kind {
                JointKind::Revolute => t *= UnitQuaternion::from_axis_angle(&j.axis, q),
                JointKind::Prismatic => t *= Translation3::from(j.axis.into_inner() * q),
            }
        }
        t.transform_point(&self.tool.into()).coords
    }

    /// Hand position after clamping `theta` to the limits, with a flag telling
    /// whether clamping happened.
    pub fn forward_kinematics_flagged(&self, theta: &[f64]) -> Result<(Vector3<f64>, bool)> {
        self.check_theta(theta)?;
        let mut q = theta.to_vec();
        let clamped = self.clamp_to_limits(&mut q);
        Ok((self.chain(&q, |_, _, _| {}), clamped))
    }

    pub fn forward_kinematics(&self, theta: &[f64]) -> Result<Vector3<f64>> {
        Ok(self.forward_kinematics_flagged(theta)?.0)
    }

    /// Hand position and geometric position Jacobian (3 x J) at `theta`,
    /// which is used as given (no clamping).
    pub fn kinematics(&self, theta: &[f64]) -> Result<(Vector3<f64>, DMatrix<f64>)> {
        self.check_theta(theta)?;
        let n = self.dof();
        let mut frames = Vec::with_capacity(n);
        let hand = self.chain(theta, |_, p, a| frames.push((p, a)));
        let mut jac = DMatrix::zeros(3, n);
        for (i, ((p, a), j)) in frames.iter().zip(&self.joints).enumerate() {
            let col = match j.kind {
                JointKind::Revolute => a.cross(&(hand - p)),
                JointKind::Prismatic => *a,
            };
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&col);
        }
        Ok((hand, jac))
    }

    pub fn jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.kinematics(theta)?.1)
    }
}

/// Damped least-squares inverse `J^T (J J^T + lambda^2 I)^-1` of a 3-row
/// matrix.
pub fn pseudo_inverse(jac: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    if jac.nrows() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: jac.nrows(),
        });
    }
    if !(damping >= 0.0) {
        return Err(Error::invalid("damping must be non-negative"));
    }
    let jjt: Matrix3<f64> = (jac * jac.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
    let inv = (jjt + Matrix3::identity() * (damping * damping))
        .try_inverse()
        .ok_or_else(|| Error::invalid("J J^T is singular; use positive damping"))?;
    let inv = DMatrix::from_column_slice(3, 3, inv.as_slice());
    Ok(jac.transpose() * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn two_link_straight_and_rotated() {
        let arm = ArmModel::planar(&[1.0, 1.0]).unwrap();
        let x = arm.forward_kinematics(&[0.0, 0.0]).unwrap();
        assert!(close(&x, &Vector3::new(2.0, 0.0, 0.0), 1e-15));
        let x = arm.forward_kinematics(&[FRAC_PI_2, 0.0]).unwrap();
        assert!(close(&x, &Vector3::new(0.0, 2.0, 0.0), 1e-15));
    }

    fn homogeneous(rot_z: f64, trans: Vector3<f64>) -> Matrix4<f64> {
        let (s, c) = rot_z.sin_cos();
        Matrix4::new(
            c, -s, 0.0, trans.x, //
            s, c, 0.0, trans.y, //
            0.0, 0.0, 1.0, trans.z, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    #[test]
    fn matches_homogeneous_matrix_chain() {
        let arm = ArmModel::planar_lift();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let theta: Vec<f64> = arm
                .joints
                .iter()
                .map(|j| rng.gen_range(j.limits.0..j.limits.1))
                .collect();
            // Base pose, lift, base yaw, then two elbows; links run along local x.
            let m = homogeneous(FRAC_PI_2, Vector3::new(0.0, -2.4, 0.0))
                * homogeneous(0.0, Vector3::new(0.0, 0.0, theta[0]))
                * homogeneous(theta[1], Vector3::zeros())
                * homogeneous(0.0, Vector3::new(2.0, 0.0, 0.0))
                * homogeneous(theta[2], Vector3::zeros())
                * homogeneous(0.0, Vector3::new(1.7, 0.0, 0.0))
                * homogeneous(theta[3], Vector3::zeros());
            let hand = m * nalgebra::Vector4::new(1.3, 0.0, 0.0, 1.0);
            let x = arm.forward_kinematics(&theta).unwrap();
            assert!(close(&x, &hand.xyz(), 1e-12));
        }
    }

    #[test]
    fn out_of_limit_angles_are_clamped_and_flagged() {
        let arm = ArmModel::planar_lift();
        let (x, flagged) = arm.forward_kinematics_flagged(&[5.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(flagged);
        assert_eq!(x.z, 0.8);
        assert!(arm.forward_kinematics(&[0.0; 3]).is_err());
    }

    fn fd_jacobian(arm: &ArmModel, theta: &[f64]) -> DMatrix<f64> {
        let h = 1e-6;
        let mut jac = DMatrix::zeros(3, theta.len());
        for i in 0..theta.len() {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            let d = (arm.kinematics(&up).unwrap().0 - arm.kinematics(&down).unwrap().0) / (2.0 * h);
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&d);
        }
        jac
    }

    #[test]
    fn jacobian_two_link_at_zero() {
        let arm = ArmModel::planar(&[1.0, 1.0]).unwrap();
        let j = arm.jacobian(&[0.0, 0.0]).unwrap();
        assert!((j[(1, 0)] - 2.0).abs() < 1e-12 && (j[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(j[(0, 0)].abs() < 1e-12 && j[(0, 1)].abs() < 1e-12);
        let fd = fd_jacobian(&arm, &[0.0, 0.0]);
        assert!((j - fd).amax() < 1e-6);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let arm = ArmModel::planar_lift();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let theta: Vec<f64> = arm
                .joints
                .iter()
                .map(|j| rng.gen_range(j.limits.0..j.limits.1))
                .collect();
            let j = arm.jacobian(&theta).unwrap();
            assert!((&j - fd_jacobian(&arm, &theta)).amax() < 1e-6);
            let zero = nalgebra::DVector::zeros(arm.dof());
            assert_eq!((&j * zero).norm(), 0.0);
            // Column norms are bounded by the distal chain length.
            for (i, distal) in [0.0, 5.0, 3.0, 1.3].iter().enumerate().skip(1) {
                assert!(j.column(i).norm() <= distal + 1e-12);
            }
            assert!((j.column(0).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudo_inverse_of_identity() {
        let p = pseudo_inverse(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert!((p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn moore_penrose_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let j = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
            let p = pseudo_inverse(&j, 0.0).unwrap();
            assert!((&j * &p * &j - &j).amax() < 1e-10);
            // The task-space image of the nullspace projector vanishes.
            let proj = DMatrix::<f64>::identity(5, 5) - &p * &j;
            assert!((&j * proj).norm() < 1e-8 * j.norm());
        }
    }

    #[test]
    fn damping_shrinks_the_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let n = pseudo_inverse(&j, lambda).unwrap().norm();
            assert!(n < prev);
            prev = n;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn undamped_singular_matrix_is_an_error() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(pseudo_inverse(&j, 0.0).is_err());
        assert!(pseudo_inverse(&j, 1e-3).is_ok());
    }
}
