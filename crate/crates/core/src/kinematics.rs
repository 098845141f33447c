//! Constant-ratio reconstruction of the six joint angles from the first pan
//! and tilt joints, and forward kinematics of an idealized revolute chain.
//!
//! Odd joints pan (rotate about the local y axis, bending in x–z), even
//! joints tilt (rotate about the local x axis). Each joint rotates first,
//! then its link is translated along the local z axis. The undeflected arm
//! points along +z from the origin.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 6;
pub const DEFAULT_LINK_LENGTH_M: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointRatios {
    /// `(r₃, r₅)`: q₃ = r₃ q₁, q₅ = r₅ q₁
    pub pan: (f64, f64),
    /// `(r₄, r₆)`: q₄ = r₄ q₂, q₆ = r₆ q₂
    pub tilt: (f64, f64),
}

impl Default for JointRatios {
    fn default() -> Self {
        JointRatios { pan: (0.6493, 0.2053), tilt: (0.6442, 0.2291) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainGeometry {
    pub link_length_m: f64,
}

impl Default for ChainGeometry {
    fn default() -> Self {
        ChainGeometry { link_length_m: DEFAULT_LINK_LENGTH_M }
    }
}

impl ChainGeometry {
    pub fn new(link_length_m: f64) -> Result<Self> {
        if !(link_length_m > 0.0 && link_length_m.is_finite()) {
            return Err(Error::Config(format!("link length must be positive, got {link_length_m}")));
        }
        Ok(ChainGeometry { link_length_m })
    }

    pub fn reach(&self) -> f64 {
        NUM_JOINTS as f64 * self.link_length_m
    }
}

/// `(q₁, q₂, r₃q₁, r₄q₂, r₅q₁, r₆q₂)`
pub fn reconstruct_joints(q1: f64, q2: f64, ratios: &JointRatios) -> [f64; NUM_JOINTS] {
    [q1, q2, ratios.pan.0 * q1, ratios.tilt.0 * q2, ratios.pan.1 * q1, ratios.tilt.1 * q2]
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// End-effector position in metres.
pub fn forward_kinematics(q: &[f64; NUM_JOINTS], geom: &ChainGeometry) -> Result<Vector3<f64>> {
    if let Some((i, v)) = q.iter().enumerate().find(|(_, v)| !(v.abs() <= std::f64::consts::FRAC_PI_2)) {
        return Err(Error::Data(format!("joint {} angle {v} rad outside ±π/2", i + 1)));
    }
    let mut rot = Matrix3::identity();
    let mut pos = Vector3::zeros();
    let link = Vector3::new(0.0, 0.0, geom.link_length_m);
    for (i, &a) in q.iter().enumerate() {
        rot *= if i % 2 == 0 { rot_y(a) } else { rot_x(a) };
        pos += rot * link;
    }
    Ok(pos)
}

/// `m × 2` joint trajectory → `m × 6`.
pub fn reconstruct_trajectory(q12: &DMatrix<f64>, ratios: &JointRatios) -> Result<DMatrix<f64>> {
    if q12.ncols() != 2 {
        return Err(Error::Dimension(format!("expected 2 joint columns, got {}", q12.ncols())));
    }
    let mut out = DMatrix::zeros(q12.nrows(), NUM_JOINTS);
    for k in 0..q12.nrows() {
        let full = reconstruct_joints(q12[(k, 0)], q12[(k, 1)], ratios);
        for (j, v) in full.iter().enumerate() {
            out[(k, j)] = *v;
        }
    }
    Ok(out)
}

/// `m × 6` joint trajectory → `m × 3` end-effector positions.
pub fn end_effector_trajectory(joints: &DMatrix<f64>, geom: &ChainGeometry) -> Result<DMatrix<f64>> {
    if joints.ncols() != NUM_JOINTS {
        return Err(Error::Dimension(format!("expected {NUM_JOINTS} joint columns, got {}", joints.ncols())));
    }
    let mut out = DMatrix::zeros(joints.nrows(), 3);
    let mut q = [0.0; NUM_JOINTS];
    for k in 0..joints.nrows() {
        q.iter_mut().zip(joints.row(k).iter()).for_each(|(d, s)| *d = *s);
        let p = forward_kinematics(&q, geom)?;
        out.row_mut(k).copy_from(&p.transpose());
    }
    Ok(out)
}

/// Mean pointwise Euclidean distance between two `m × 3` trajectories.
pub fn mean_euclidean_error(p: &DMatrix<f64>, p_hat: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != p_hat.shape() || p.ncols() != 3 {
        return Err(Error::Dimension(format!(
            "trajectories must both be m×3, got {:?} and {:?}",
            p.shape(),
            p_hat.shape()
        )));
    }
    if p.nrows() == 0 {
        return Err(Error::Data("empty trajectories".into()));
    }
    let total: f64 = (0..p.nrows()).map(|k| (p.row(k) - p_hat.row(k)).norm()).sum();
    Ok(total / p.nrows() as f64)
}

/// Small-angle end-effector gains `(∂x/∂q₁, ∂y/∂q₂)` at the straight pose.
pub fn small_angle_gains(ratios: &JointRatios, geom: &ChainGeometry) -> (f64, f64) {
    let l = geom.link_length_m;
    let (r3, r5) = ratios.pan;
    let (r4, r6) = ratios.tilt;
    (l * (6.0 + 4.0 * r3 + 2.0 * r5), -l * (5.0 + 3.0 * r4 + r6))
}
