//! Pinhole cameras and the world-to-screen transform.
//!
//! Conventions: camera frame has +z forward, +x right, +y down; pixel (i, j)
//! spans [i, i+1) x [j, j+1) with its center at (i+0.5, j+0.5); depth is the
//! camera-frame z coordinate. Projection is the 4x4 intrinsics-augmented
//! extrinsics followed by a perspective divide.

use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::GaussianPrimitive;

/// Gaussians nearer than this camera depth are culled from every render path.
pub const NEAR_PLANE: f64 = 0.01;

/// Added to both diagonal entries of every splatted 2D covariance (px^2) so
/// sub-pixel splats stay rasterizable.
pub const COV_DIAG_FLOOR: f64 = 0.3;

/// A pinhole camera: intrinsics in pixels plus a rigid world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Matrix4<f64>,
}

/// A projected point: pixel coordinates plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenPoint {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl CameraView {
    pub fn new(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: Matrix4<f64>,
    ) -> Result<Self> {
        let view = CameraView {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
        };
        view.validate()?;
        Ok(view)
    }

    /// Checks fx, fy > 0 and that the pose's 3x3 block is a proper rotation
    /// (R^T R = I within 1e-6, det = +1).
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(
                "camera",
                format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy),
            ));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::invalid(
                "camera",
                format!("world_to_camera rotation is not orthonormal (max residual {err:.3e})"),
            ));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "camera",
                format!("world_to_camera rotation has det {} != +1", r.determinant()),
            ));
        }
        let last = self.world_to_camera.row(3);
        if last != Matrix4::identity().row(3) {
            return Err(Error::invalid("camera", "world_to_camera last row must be (0,0,0,1)"));
        }
        Ok(())
    }

    /// Rotation block of the world-to-camera pose.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Maps a world point into the camera frame.
    pub fn camera_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        let q = self.world_to_camera * Vector4::new(world.x, world.y, world.z, 1.0);
        Vector3::new(q.x, q.y, q.z)
    }

    /// The 4x4 world-to-screen matrix: homogeneous pixel coordinates are
    /// obtained by multiplying and dividing by the third component.
    pub fn screen_transform(&self) -> Matrix4<f64> {
        let k = Matrix4::new(
            self.fx, 0.0, self.cx, 0.0, //
            0.0, self.fy, self.cy, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        k * self.world_to_camera
    }

    /// Projects a world point to pixel coordinates and camera depth.
    ///
    /// u = fx*x/z + cx, v = fy*y/z + cy with (x, y, z) the camera-frame point.
    /// Points at z <= NEAR_PLANE are behind-camera errors; the caller culls.
    pub fn world_to_screen(&self, world: &Vector3<f64>) -> Result<ScreenPoint> {
        let q = self.screen_transform() * Vector4::new(world.x, world.y, world.z, 1.0);
        if q.z <= NEAR_PLANE {
            return Err(Error::BehindCamera { z: q.z });
        }
        Ok(ScreenPoint {
            u: q.x / q.z,
            v: q.y / q.z,
            z: q.z,
        })
    }

    /// Inverse of `world_to_screen` given the depth; test oracle for the
    /// projection round trip.
    pub fn unproject(&self, screen: &ScreenPoint) -> Vector3<f64> {
        let cam = Vector3::new(
            (screen.u - self.cx) * screen.z / self.fx,
            (screen.v - self.cy) * screen.z / self.fy,
            screen.z,
        );
        let r = self.rotation();
        let t = self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned();
        r.transpose() * (cam - t)
    }

    /// Jacobian of `world_to_screen`'s (u, v) with respect to the world point:
    /// the 2x3 perspective Jacobian at the camera-frame point composed with
    /// the pose rotation.
    pub fn projection_jacobian(&self, world: &Vector3<f64>) -> Matrix2x3<f64> {
        let t = self.camera_point(world);
        let z_inv = 1.0 / t.z;
        let z_inv2 = z_inv * z_inv;
        let j = Matrix2x3::new(
            self.fx * z_inv,
            0.0,
            -self.fx * t.x * z_inv2,
            0.0,
            self.fy * z_inv,
            -self.fy * t.y * z_inv2,
        );
        j * self.rotation()
    }

    /// Splats a Gaussian's 3D covariance to a 2x2 screen covariance:
    /// sigma2 = J W Sigma3 W^T J^T plus the diagonal floor, with
    /// Sigma3 = R(q) diag(s^2) R(q)^T.
    pub fn splat_covariance(&self, gaussian: &GaussianPrimitive) -> Matrix2<f64> {
        let rot = gaussian.rotation.to_rotation_matrix();
        let s = gaussian.scale;
        let sigma3 = rot.matrix()
            * Matrix3::from_diagonal(&Vector3::new(s.x * s.x, s.y * s.y, s.z * s.z))
            * rot.matrix().transpose();
        let jw = self.projection_jacobian(&gaussian.position);
        let mut sigma2 = jw * sigma3 * jw.transpose();
        sigma2[(0, 0)] += COV_DIAG_FLOOR;
        sigma2[(1, 1)] += COV_DIAG_FLOOR;
        sigma2
    }
}

/// The ordered set of training views.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub views: Vec<CameraView>,
}

impl CameraRig {
    pub fn new(views: Vec<CameraView>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("camera rig", "must contain at least one view"));
        }
        Ok(CameraRig { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Builds a world-to-camera pose at `eye` looking toward `target`, world +z up
/// (+y fallback when the view direction is vertical).
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Matrix4<f64>> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(Error::invalid("camera rig", "eye and target coincide"));
    }
    let forward = forward.normalize();
    let mut up_hint = Vector3::new(0.0, 0.0, 1.0);
    if forward.cross(&up_hint).norm() < 1e-8 {
        up_hint = Vector3::new(0.0, 1.0, 0.0);
    }
    let right = forward.cross(&up_hint).normalize();
    let down = forward.cross(&right);

    let mut m = Matrix4::identity();
    for (row, axis) in [right, down, forward].iter().enumerate() {
        m[(row, 0)] = axis.x;
        m[(row, 1)] = axis.y;
        m[(row, 2)] = axis.z;
        m[(row, 3)] = -axis.dot(&eye);
    }
    Ok(m)
}

/// Layout of a generated rig: a full ring or a forward-facing arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    Ring,
    Arc,
}

/// Declarative rig description used by the scene generator CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSpec {
    pub kind: RigKind,
    pub count: usize,
    /// Distance from target to each eye, in the horizontal plane.
    pub radius: f64,
    /// Eye height above the target plane.
    #[serde(default)]
    pub height: f64,
    pub target: [f64; 3],
    /// Total angular coverage in degrees; required for `arc`, ignored for `ring`.
    #[serde(default)]
    pub arc_degrees: f64,
    pub width: u32,
    #[serde(rename = "image_height")]
    pub image_height: u32,
    pub fov_degrees: f64,
}

impl RigSpec {
    pub fn build(&self) -> Result<CameraRig> {
        if self.count == 0 {
            return Err(Error::invalid("camera rig", "count must be >= 1"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("camera rig", "radius must be positive"));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::invalid("camera rig", "fov must be in (0, 180) degrees"));
        }
        let target = Vector3::new(self.target[0], self.target[1], self.target[2]);
        let fx = 0.5 * self.width as f64 / (0.5 * self.fov_degrees.to_radians()).tan();
        let cx = 0.5 * self.width as f64;
        let cy = 0.5 * self.image_height as f64;

        let mut views = Vec::with_capacity(self.count);
        for i in 0..self.count {
            let theta = match self.kind {
                RigKind::Ring => std::f64::consts::TAU * i as f64 / self.count as f64,
                RigKind::Arc => {
                    let span = self.arc_degrees.to_radians();
                    let base = -std::f64::consts::FRAC_PI_2 - 0.5 * span;
                    if self.count == 1 {
                        -std::f64::consts::FRAC_PI_2
                    } else {
                        base + span * i as f64 / (self.count - 1) as f64
                    }
                }
            };
            let eye = target
                + Vector3::new(
                    self.radius * theta.cos(),
                    self.radius * theta.sin(),
                    self.height,
                );
            let pose = look_at(eye, target)?;
            views.push(CameraView::new(
                self.width,
                self.image_height,
                fx,
                fx,
                cx,
                cy,
                pose,
            )?);
        }
        CameraRig::new(views)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 4x4 world-to-camera transform.
    world_to_camera: Vec<f64>,
}

/// Writes a rig as a JSON array of camera records.
pub fn save_cameras(rig: &CameraRig, path: &Path) -> Result<()> {
    let records: Vec<CameraRecord> = rig
        .views
        .iter()
        .map(|v| CameraRecord {
            width: v.width,
            height: v.height,
            fx: v.fx,
            fy: v.fy,
            cx: v.cx,
            cy: v.cy,
            world_to_camera: v.world_to_camera.transpose().as_slice().to_vec(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&records).expect("camera records serialize");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<CameraRig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    let mut views = Vec::with_capacity(records.len());
    for rec in records {
        if rec.world_to_camera.len() != 16 {
            return Err(Error::invalid(
                "camera file",
                format!("world_to_camera must have 16 entries, got {}", rec.world_to_camera.len()),
            ));
        }
        let m = Matrix4::from_row_slice(&rec.world_to_camera);
        views.push(CameraView::new(
            rec.width, rec.height, rec.fx, rec.fy, rec.cx, rec.cy, m,
        )?);
    }
    CameraRig::new(views)
}
