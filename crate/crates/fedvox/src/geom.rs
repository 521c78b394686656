//! SE(3) poses, pinhole cameras, ray generation and the degree-2 real
//! spherical-harmonics basis.
//!
//! Conventions fixed here and relied on everywhere else: right-handed world,
//! cameras look down their local -z axis with +y up in camera space, image
//! rows grow downward, rays go through pixel centers (px + 0.5).

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::scalar::Scalar;
use rand::Rng;

/// Rotation drift above which composed poses are re-orthonormalized.
const ORTHO_DRIFT_TOL: f64 = 1e-9;

/// Rigid transform: `apply(p) = rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3<T>) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Applies `b` first, then `a`.
    pub fn compose(a: &Self, b: &Self) -> Self {
        let mut rotation = a.rotation.mul_mat(&b.rotation);
        if rotation.orthonormality_error() > T::of_f64(ORTHO_DRIFT_TOL) {
            rotation = rotation.reorthonormalized();
        }
        Self {
            rotation,
            translation: a.rotation.mul_vec(b.translation) + a.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    pub fn apply(&self, point: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(point) + self.translation
    }

    /// Rotates a direction without translating it.
    pub fn apply_dir(&self, dir: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(dir)
    }

    /// Euclidean distance between the two translations.
    pub fn translation_error(&self, other: &Self) -> T {
        (self.translation - other.translation).norm()
    }

    /// Geodesic angle of `self.rotation * other.rotationᵀ`, in radians.
    pub fn rotation_error(&self, other: &Self) -> T {
        self.rotation.mul_mat(&other.rotation.transpose()).angle()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit direction.
    pub direction: Vec3<T>,
}

/// Ideal pinhole camera, no distortion. `pose` is camera-to-world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    pub pose: Pose<T>,
}

impl<T: Scalar> Camera<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32, pose: Pose<T>) -> Result<Self> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(Error::invalid("camera", format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        let w = T::of_usize(width as usize);
        let h = T::of_usize(height as usize);
        if cx < T::zero() || cx >= w || cy < T::zero() || cy >= h {
            return Err(Error::invalid("camera", format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        Ok(Self { fx, fy, cx, cy, width, height, pose })
    }

    /// Square camera with the given vertical field of view, principal point at
    /// the image center.
    pub fn from_fov(width: u32, height: u32, fov_y_rad: T, pose: Pose<T>) -> Result<Self> {
        let h = T::of_usize(height as usize);
        let w = T::of_usize(width as usize);
        let f = h * T::half() / (fov_y_rad * T::half()).tan();
        Self::new(f, f, w * T::half(), h * T::half(), width, height, pose)
    }

    pub fn position(&self) -> Vec3<T> {
        self.pose.translation
    }

    /// World-space ray through the center of pixel `(px, py)`.
    ///
    /// Fractional coordinates are allowed; `(0, 0)` is the top-left pixel.
    pub fn pixel_ray(&self, px: T, py: T) -> Result<Ray<T>> {
        let w = T::of_usize(self.width as usize);
        let h = T::of_usize(self.height as usize);
        if px < T::zero() || px >= w || py < T::zero() || py >= h {
            return Err(Error::PixelOutOfBounds {
                x: px.as_f64(),
                y: py.as_f64(),
                width: self.width,
                height: self.height,
            });
        }
        let dir_cam = Vec3::new(
            (px + T::half() - self.cx) / self.fx,
            -(py + T::half() - self.cy) / self.fy,
            -T::one(),
        );
        Ok(Ray {
            origin: self.pose.translation,
            direction: self.pose.apply_dir(dir_cam).normalized(),
        })
    }

    /// Projects a world point to pixel coordinates; `None` when behind the
    /// camera or outside the image.
    pub fn project(&self, point: Vec3<T>) -> Option<(T, T)> {
        let local = self.pose.inverse().apply(point);
        if local.z >= T::zero() {
            return None;
        }
        let px = self.cx + self.fx * (local.x / -local.z) - T::half();
        let py = self.cy - self.fy * (local.y / -local.z) - T::half();
        let w = T::of_usize(self.width as usize);
        let h = T::of_usize(self.height as usize);
        if px >= T::zero() && px < w && py >= T::zero() && py < h {
            Some((px, py))
        } else {
            None
        }
    }
}

/// Camera-to-world pose positioned at `eye`, looking at `target`, with the
/// world-up hint resolved against degeneracy (straight up/down views).
pub fn look_at<T: Scalar>(eye: Vec3<T>, target: Vec3<T>) -> Pose<T> {
    let forward = (target - eye).normalized();
    let mut up_hint = Vec3::new(T::zero(), T::zero(), T::one());
    if forward.cross(up_hint).norm() < T::of_f64(1e-6) {
        up_hint = Vec3::new(T::zero(), T::one(), T::zero());
    }
    let right = forward.cross(up_hint).normalized();
    let up = right.cross(forward);
    Pose {
        rotation: Mat3::from_cols(right, up, -forward),
        translation: eye,
    }
}

pub const SH_COUNT: usize = 9;

// Normalization constants of the real spherical harmonics, degree <= 2.
const SH_C0: f64 = 0.282_094_791_773_878_14; // 1 / (2 sqrt(pi))
const SH_C1: f64 = 0.488_602_511_902_919_9; // sqrt(3 / (4 pi))
const SH_C2A: f64 = 1.092_548_430_592_079_2; // sqrt(15 / (4 pi)), for xy, yz, xz
const SH_C2B: f64 = 0.315_391_565_252_520_05; // sqrt(5 / (16 pi)), for 3z^2 - 1
const SH_C2C: f64 = 0.546_274_215_296_039_6; // sqrt(15 / (16 pi)), for x^2 - y^2

/// Real spherical-harmonics basis values at a unit direction, ordered
/// `[Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22]`.
pub fn sh_basis<T: Scalar>(d: Vec3<T>) -> Result<[T; SH_COUNT]> {
    let norm = d.norm();
    if (norm - T::one()).abs() > T::of_f64(1e-4) {
        return Err(Error::NotUnitLength { norm: norm.as_f64() });
    }
    let (x, y, z) = (d.x, d.y, d.z);
    let c0 = T::of_f64(SH_C0);
    let c1 = T::of_f64(SH_C1);
    let c2a = T::of_f64(SH_C2A);
    let c2b = T::of_f64(SH_C2B);
    let c2c = T::of_f64(SH_C2C);
    let three = T::of_f64(3.0);
    Ok([
        c0,
        c1 * y,
        c1 * z,
        c1 * x,
        c2a * x * y,
        c2a * y * z,
        c2b * (three * z * z - T::one()),
        c2a * x * z,
        c2c * (x * x - y * y),
    ])
}

/// Random SE(3) perturbation: per-axis translation uniform in
/// `[-max_trans, max_trans]`, rotation about a uniform random axis by an
/// angle uniform in `[-max_rot_deg, max_rot_deg]`.
pub fn random_pose_noise<T: Scalar, R: Rng>(rng: &mut R, max_trans: T, max_rot_deg: T) -> Pose<T> {
    let translation = if max_trans > T::zero() {
        let m = max_trans.as_f64();
        Vec3::new(
            T::of_f64(rng.gen_range(-m..=m)),
            T::of_f64(rng.gen_range(-m..=m)),
            T::of_f64(rng.gen_range(-m..=m)),
        )
    } else {
        Vec3::zeros()
    };
    let rotation = if max_rot_deg > T::zero() {
        let axis = random_unit_axis(rng);
        let max_rad = max_rot_deg.as_f64().to_radians();
        let angle = T::of_f64(rng.gen_range(-max_rad..=max_rad));
        Mat3::from_axis_angle(axis, angle)
    } else {
        Mat3::identity()
    };
    Pose { rotation, translation }
}

fn random_unit_axis<T: Scalar, R: Rng>(rng: &mut R) -> Vec3<T> {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0f64..=1.0),
            rng.gen_range(-1.0f64..=1.0),
            rng.gen_range(-1.0f64..=1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            return v.normalized().map(T::of_f64);
        }
    }
}
