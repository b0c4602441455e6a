//! Pinhole camera geometry.
//!
//! Poses map world coordinates into the camera frame (`x_cam = R x_world + t`).
//! Camera centers only appear through [`Pose::center`] and [`pose_error`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// Depth below which a point is treated as lying on the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
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

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < f64::from(self.width)
            && self.cy >= 0.0
            && self.cy < f64::from(self.height);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad intrinsics {self:?}")))
        }
    }

    /// Border pixels count as inside the image.
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= f64::from(self.width) && px.y <= f64::from(self.height)
    }

    /// Unit-depth ray direction (camera frame) through a pixel.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation: t,
        }
    }

    /// Quaternion in `(w, x, y, z)` order. Near-unit inputs keep their exact
    /// bits so text round trips are lossless.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, t: Vector3<f64>) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-6 {
            return Err(Error::InvalidConfig("degenerate quaternion".into()));
        }
        let rotation = if (n - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self::new(rotation, t))
    }

    /// Camera looking from `eye` toward `target` (+z forward, +y down).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, world_up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&world_up);
        if x.norm() < 1e-9 {
            x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // Rows of R are the camera axes expressed in world coordinates.
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        Self::from_matrix(&r, t)
    }

    #[inline]
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn transform(&self, y: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * y + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub e_max: f64,
    pub d_target: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            d_min: 0.1,
            d_max: 1000.0,
            e_max: 1000.0,
            d_target: 10.0,
        }
    }
}

impl ValidityConfig {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.d_min && self.d_min < self.d_target && self.d_target < self.d_max && self.e_max > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad validity config {self:?}")))
        }
    }
}

/// A posed, calibrated image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub id: u32,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

pub fn project(k: &CameraIntrinsics, pose: &Pose, y: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
    let c = pose.transform(y);
    if c.z <= MIN_DEPTH {
        return Err(Error::NonPositiveDepth { depth: c.z });
    }
    Ok((Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy), c.z))
}

pub fn reproj_error(x: &Keypoint, k: &CameraIntrinsics, pose: &Pose, y: &Vector3<f64>) -> Result<f64> {
    let (px, _) = project(k, pose, y)?;
    Ok((x.to_vector() - px).norm())
}

pub fn unproject(x: &Keypoint, k: &CameraIntrinsics, pose: &Pose, depth: f64) -> Result<Vector3<f64>> {
    if depth <= 0.0 {
        return Err(Error::NonPositiveDepth { depth });
    }
    let c = k.ray(x.x, x.y) * depth;
    Ok(pose.rotation.inverse() * (c - pose.translation))
}

pub fn is_valid(y: &Vector3<f64>, x: &Keypoint, k: &CameraIntrinsics, pose: &Pose, cfg: &ValidityConfig) -> bool {
    match project(k, pose, y) {
        Ok((px, depth)) => {
            depth >= cfg.d_min && depth <= cfg.d_max && (x.to_vector() - px).norm() < cfg.e_max
        }
        Err(_) => false,
    }
}

/// Translation error (m) between camera centers and rotation error (deg).
pub fn pose_error(est: &Pose, gt: &Pose) -> (f64, f64) {
    let trans = (est.center() - gt.center()).norm();
    let r = est.rotation_matrix() * gt.rotation_matrix().transpose();
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = 0.5 * Vector3::new(r.m32 - r.m23, r.m13 - r.m31, r.m21 - r.m12).norm();
    (trans, sin.atan2(cos).to_degrees())
}

/// Text poses file: `id qw qx qy qz tx ty tz fx fy cx cy width height` per line.
pub fn write_poses(views: &[CameraView]) -> String {
    let mut out = String::new();
    for v in views {
        let q = v.pose.rotation.quaternion();
        let t = &v.pose.translation;
        let k = &v.intrinsics;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            v.id, q.w, q.i, q.j, q.k, t.x, t.y, t.z, k.fx, k.fy, k.cx, k.cy, k.width, k.height
        )
        .expect("write to string");
    }
    out
}

pub fn parse_poses(text: &str) -> Result<Vec<CameraView>> {
    let err = |line: usize, msg: &str| Error::format("poses", format!("line {}: {msg}", line + 1));
    let mut views = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 14 {
            return Err(err(n, "expected 14 fields"));
        }
        let f = |i: usize| fields[i].parse::<f64>().map_err(|_| err(n, "bad number"));
        let id = fields[0].parse::<u32>().map_err(|_| err(n, "bad id"))?;
        let width = fields[12].parse::<u32>().map_err(|_| err(n, "bad width"))?;
        let height = fields[13].parse::<u32>().map_err(|_| err(n, "bad height"))?;
        let pose = Pose::from_wxyz(f(1)?, f(2)?, f(3)?, f(4)?, Vector3::new(f(5)?, f(6)?, f(7)?))?;
        let intrinsics = CameraIntrinsics {
            fx: f(8)?,
            fy: f(9)?,
            cx: f(10)?,
            cy: f(11)?,
            width,
            height,
        };
        views.push(CameraView {
            id,
            pose,
            intrinsics,
        });
    }
    Ok(views)
}

pub fn save_poses(path: &Path, views: &[CameraView]) -> Result<()> {
    std::fs::write(path, write_poses(views))?;
    Ok(())
}

pub fn load_poses(path: &Path) -> Result<Vec<CameraView>> {
    parse_poses(&std::fs::read_to_string(path)?)
}
