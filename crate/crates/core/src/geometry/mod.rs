//! Pinhole cameras, rigid poses and two-view epipolar geometry.
//!
//! Conventions used throughout the crate:
//! - A [`Pose`] maps camera coordinates to world coordinates,
//!   `x_world = r * x_cam + t`, so `t` is the camera center.
//! - Camera axes: `+x` right, `+y` down, `+z` forward (the viewing direction).
//! - Pixel `(i, j)` of an image is the continuous coordinate `(i, j)`.

mod epipolar;
mod posefile;

pub use epipolar::{epipolar_candidates, EpipolarCandidateSet, MAX_COLOR_DISTANCE};
pub use posefile::{read_poses, write_poses, PoseRecord};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Smallest camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-8;
const ORTHO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and square pixels with the given focal length.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }
}

/// Rigid transform from camera to world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let p = Self { r, t };
        p.validate()?;
        Ok(p)
    }

    /// Like [`Pose::new`] but snaps a nearly orthonormal `r` (as read from text
    /// with limited precision) onto the closest rotation.
    pub fn from_approximate(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > 1e-3 || r.determinant() <= 0.0 {
            return Err(Error::InvalidPose(format!(
                "rotation deviates from orthonormal by {dev:e}"
            )));
        }
        if let Ok(exact) = Self::new(r, t) {
            return Ok(exact);
        }
        let svd = r.svd(true, true);
        let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
        Self::new(u * v_t, t)
    }

    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, with image `+y` roughly along `-up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::InvalidPose("look_at direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self::new(Matrix3::from_columns(&[x, y, z]), eye)
    }

    pub fn validate(&self) -> Result<()> {
        let dev = (self.r.transpose() * self.r - Matrix3::identity()).abs().max();
        let det = self.r.determinant();
        if !dev.is_finite() || dev > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL || !self.t.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidPose(format!(
                "orthonormality error {dev:e}, det {det}"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.t
    }

    pub fn camera_to_world(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (x - self.t)
    }

    /// Applies this pose as a transform: `r * x + t`.
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }
}

/// Transform taking reference-camera coordinates to `other`-camera coordinates:
/// `r = r_otherᵀ r_ref`, `t = r_otherᵀ (t_ref - t_other)`.
pub fn relative_pose(reference: &Pose, other: &Pose) -> Result<Pose> {
    reference.validate()?;
    other.validate()?;
    let ot = other.r.transpose();
    Ok(Pose {
        r: ot * reference.r,
        t: ot * (reference.t - other.t),
    })
}

/// World point to pixel coordinates.
pub fn project(x: &Vector3<f64>, cam: &Intrinsics, pose: &Pose) -> Result<Vector2<f64>> {
    project_camera(&pose.world_to_camera(x), cam)
}

/// Camera-frame point to pixel coordinates (perspective division included).
pub fn project_camera(xc: &Vector3<f64>, cam: &Intrinsics) -> Result<Vector2<f64>> {
    if !(xc.z > MIN_DEPTH) {
        return Err(Error::BehindCamera { z: xc.z });
    }
    Ok(Vector2::new(
        cam.fx * xc.x / xc.z + cam.cx,
        cam.fy * xc.y / xc.z + cam.cy,
    ))
}

/// Pixel at camera-frame depth `depth` to a world point.
pub fn back_project(p: &Vector2<f64>, depth: f64, cam: &Intrinsics, pose: &Pose) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    let xc = Vector3::new(
        (p.x - cam.cx) / cam.fx * depth,
        (p.y - cam.cy) / cam.fy * depth,
        depth,
    );
    Ok(pose.camera_to_world(&xc))
}

/// Fundamental matrix for two views sharing intrinsics `cam`; see
/// [`fundamental_matrix_between`].
pub fn fundamental_matrix(cam: &Intrinsics, rel: &Pose) -> Result<Matrix3<f64>> {
    fundamental_matrix_between(cam, cam, rel)
}

/// `F = K_otherᵀ⁻¹ [t]x r K_ref⁻¹` with Frobenius norm 1, so that
/// `p_otherᵀ F p_ref = 0` for corresponding homogeneous pixels.
/// `rel` maps reference-camera coordinates to other-camera coordinates.
pub fn fundamental_matrix_between(k_ref: &Intrinsics, k_other: &Intrinsics, rel: &Pose) -> Result<Matrix3<f64>> {
    let tn = rel.t.norm();
    if !(tn > 1e-12) {
        return Err(Error::DegenerateBaseline(tn));
    }
    let essential = rel.t.cross_matrix() * rel.r;
    let f = k_other.inverse_matrix().transpose() * essential * k_ref.inverse_matrix();
    Ok(f / f.norm())
}
