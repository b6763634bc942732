//! Gaze angle representations, 3D direction conversion, angular error, and the
//! supervised gaze loss with its analytic gradient.
//!
//! Angles are radians throughout; errors are converted to degrees only in
//! reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open range guard used when clamping reported angles.
pub const ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_2;

/// A point in gaze space: yaw and pitch in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeAngles {
    pub yaw: f64,
    pub pitch: f64,
}

impl GazeAngles {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite()
    }

    /// Clamp both angles into [-pi/2, pi/2]. Used only for reported/plotted
    /// values; raw predictions stay unclamped during training.
    pub fn clamped(&self) -> Self {
        Self {
            yaw: self.yaw.clamp(-ANGLE_LIMIT, ANGLE_LIMIT),
            pitch: self.pitch.clamp(-ANGLE_LIMIT, ANGLE_LIMIT),
        }
    }
}

/// Unit 3D gaze direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub fn dot(&self, other: &GazeVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Convert (yaw, pitch) to a unit direction (cos p sin y, sin p, cos p cos y).
pub fn angles_to_vector(g: GazeAngles) -> Result<GazeVector> {
    if !g.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite gaze angles ({}, {})",
            g.yaw, g.pitch
        )));
    }
    let (sy, cy) = g.yaw.sin_cos();
    let (sp, cp) = g.pitch.sin_cos();
    Ok(GazeVector { x: cp * sy, y: sp, z: cp * cy })
}

/// Angle in radians between the 3D directions of `a` and `b`; symmetric,
/// in [0, pi].
///
/// Mathematically arccos of the clamped dot product, evaluated as
/// atan2(|va x vb|, va . vb): this stays exact at zero separation, where
/// acos of a self-dot rounded just below 1 would not.
pub fn angular_error(a: GazeAngles, b: GazeAngles) -> Result<f64> {
    let va = angles_to_vector(a)?;
    let vb = angles_to_vector(b)?;
    let cross = GazeVector {
        x: va.y * vb.z - va.z * vb.y,
        y: va.z * vb.x - va.x * vb.z,
        z: va.x * vb.y - va.y * vb.x,
    };
    Ok(cross.norm().atan2(va.dot(&vb).clamp(-1.0, 1.0)))
}

pub fn radians_to_degrees(r: f64) -> f64 {
    r.to_degrees()
}

/// Supervised gaze loss of a single prediction: the angular error itself.
pub fn gaze_loss(pred: GazeAngles, gt: GazeAngles) -> Result<f64> {
    angular_error(pred, gt)
}

/// Dot products this close to +-1 get a zero gradient: the arccos derivative
/// is singular there and the loss is at its minimum (or maximum).
const ALIGNED_EPS: f64 = 1e-12;

/// Gaze loss together with its gradient w.r.t. the predicted (yaw, pitch).
///
/// At pred == gt the loss is minimal and the sub-gradient is defined as zero.
pub fn gaze_loss_with_grad(pred: GazeAngles, gt: GazeAngles) -> Result<(f64, [f64; 2])> {
    let vp = angles_to_vector(pred)?;
    let vg = angles_to_vector(gt)?;
    let d = vp.dot(&vg).clamp(-1.0, 1.0);
    let loss = d.acos();
    if d >= 1.0 - ALIGNED_EPS || d <= -1.0 + ALIGNED_EPS {
        return Ok((loss, [0.0, 0.0]));
    }
    // dL/dd = -1/sqrt(1-d^2); chain through v(yaw, pitch).
    let dl_dd = -1.0 / (1.0 - d * d).sqrt();
    let (sy, cy) = pred.yaw.sin_cos();
    let (sp, cp) = pred.pitch.sin_cos();
    let dv_dyaw = GazeVector { x: cp * cy, y: 0.0, z: -cp * sy };
    let dv_dpitch = GazeVector { x: -sp * sy, y: cp, z: -sp * cy };
    Ok((loss, [dl_dd * vg.dot(&dv_dyaw), dl_dd * vg.dot(&dv_dpitch)]))
}

/// Mean gaze loss over a batch plus per-sample gradients already scaled by
/// 1/B, so the gradients sum to the gradient of the mean.
pub fn gaze_loss_batch(
    preds: &[GazeAngles],
    gts: &[GazeAngles],
) -> Result<(f64, Vec<[f64; 2]>)> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch { expected: gts.len(), got: preds.len() });
    }
    if preds.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let inv_b = 1.0 / preds.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (&p, &g) in preds.iter().zip(gts) {
        let (loss, grad) = gaze_loss_with_grad(p, g)?;
        total += loss;
        grads.push([grad[0] * inv_b, grad[1] * inv_b]);
    }
    Ok((total * inv_b, grads))
}
