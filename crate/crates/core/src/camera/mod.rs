//! Differentiable pinhole camera with Brown-Conrady distortion.
//!
//! Every calibration quantity is split into a fixed base value and a
//! learnable offset. The nine offsets (four intrinsic, five distortion) are
//! the camera parameter group seen by the optimizer; [`CameraModel::lift_local`]
//! is generic over [`Real`] so their Jacobian comes from dual numbers.

mod file;

pub use file::{read_camera_file, write_camera_file, CameraRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Ray;
use crate::real::{Dual, Real};
use crate::vec3::{Mat3, Vec3};

/// Number of learnable camera offsets: fx, fy, cx, cy, k1, k2, k3, p1, p2.
pub const CAMERA_PARAMS: usize = 9;

/// Relative radius of the ball the intrinsic offsets are projected onto.
pub const INTRINSIC_OFFSET_BOUND: f64 = 0.1;

const UNDISTORT_TOLERANCE: f64 = 1e-9;
const UNDISTORT_MAX_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("pixel ({0}, {1}) lies outside the image")]
    OutOfBounds(f64, f64),
    #[error("ray points behind the camera")]
    Behind,
    #[error("distortion inversion did not converge")]
    NoConvergence,
    #[error("invalid camera parameters: {0}")]
    InvalidParameters(String),
    #[error("camera file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("camera file parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub base_fx: f64,
    pub base_fy: f64,
    pub base_cx: f64,
    pub base_cy: f64,
    pub delta_fx: f64,
    pub delta_fy: f64,
    pub delta_cx: f64,
    pub delta_cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            base_fx: fx,
            base_fy: fy,
            base_cx: cx,
            base_cy: cy,
            delta_fx: 0.0,
            delta_fy: 0.0,
            delta_cx: 0.0,
            delta_cy: 0.0,
        }
    }

    pub fn base(&self) -> [f64; 4] {
        [self.base_fx, self.base_fy, self.base_cx, self.base_cy]
    }

    pub fn deltas(&self) -> [f64; 4] {
        [self.delta_fx, self.delta_fy, self.delta_cx, self.delta_cy]
    }

    pub fn set_deltas(&mut self, d: [f64; 4]) {
        [self.delta_fx, self.delta_fy, self.delta_cx, self.delta_cy] = d;
    }

    /// Radius of the admissible offset ball.
    pub fn offset_bound(&self) -> f64 {
        INTRINSIC_OFFSET_BOUND * norm4(self.base())
    }

    /// Radially projects the offsets onto the admissible ball in place.
    pub fn project_offsets(&mut self) {
        let d = bounded_offsets(self.base(), self.deltas());
        self.set_deltas(d);
    }
}

fn norm4(v: [f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bounded_offsets<T: Real>(base: [f64; 4], delta: [T; 4]) -> [T; 4] {
    let bound = INTRINSIC_OFFSET_BOUND * norm4(base);
    let n2 = delta.iter().fold(T::zero(), |acc, d| acc + *d * *d);
    if n2.re() > bound * bound {
        let s = T::cst(bound) / n2.sqrt();
        delta.map(|d| d * s)
    } else {
        delta
    }
}

fn effective_generic<T: Real>(base: [f64; 4], delta: [T; 4]) -> [T; 4] {
    let d = bounded_offsets(base, delta);
    [d[0] + base[0], d[1] + base[1], d[2] + base[2], d[3] + base[3]]
}

/// Effective `(fx, fy, cx, cy)`; offsets outside the bound are projected first.
pub fn effective_intrinsics(intrinsics: &Intrinsics) -> [f64; 4] {
    effective_generic(intrinsics.base(), intrinsics.deltas())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl DistortionCoeffs {
    pub fn to_array(self) -> [f64; 5] {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            k1: a[0],
            k2: a[1],
            k3: a[2],
            p1: a[3],
            p2: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub base: DistortionCoeffs,
    pub offset: DistortionCoeffs,
}

impl Distortion {
    pub fn new(base: DistortionCoeffs) -> Self {
        Self {
            base,
            offset: DistortionCoeffs::default(),
        }
    }

    pub fn effective(&self) -> [f64; 5] {
        let (b, o) = (self.base.to_array(), self.offset.to_array());
        std::array::from_fn(|i| b[i] + o[i])
    }
}

/// Brown-Conrady forward map on normalized coordinates.
pub fn distort_generic<T: Real>(x: T, y: T, c: &[T; 5]) -> (T, T) {
    let [k1, k2, k3, p1, p2] = *c;
    let r2 = x * x + y * y;
    let radial = k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2 + 1.0;
    let xy = x * y;
    let xd = x * radial + p1 * xy * 2.0 + p2 * (r2 + x * x * 2.0);
    let yd = y * radial + p1 * (r2 + y * y * 2.0) + p2 * xy * 2.0;
    (xd, yd)
}

pub fn distort(normalized: [f64; 2], distortion: &Distortion) -> [f64; 2] {
    let (x, y) = distort_generic(normalized[0], normalized[1], &distortion.effective());
    [x, y]
}

/// Inverts [`distort`] by fixed-point iteration.
pub fn undistort(distorted: [f64; 2], distortion: &Distortion) -> Result<[f64; 2], CameraError> {
    let c = distortion.effective();
    let [xd, yd] = distorted;
    let (mut x, mut y) = (xd, yd);
    for _ in 0..UNDISTORT_MAX_ITERS {
        let (fx, fy) = distort_generic(x, y, &c);
        let (rx, ry) = (fx - xd, fy - yd);
        if rx.abs().max(ry.abs()) < UNDISTORT_TOLERANCE {
            return Ok([x, y]);
        }
        x -= rx;
        y -= ry;
        if !(x.is_finite() && y.is_finite()) {
            break;
        }
    }
    Err(CameraError::NoConvergence)
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub center: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, center: Vec3) -> Result<Self, CameraError> {
        let pose = Self { rotation, center };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::IDENTITY,
            center: Vec3::ZERO,
        }
    }

    /// Camera at `eye` looking at `target`; image y points away from `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, CameraError> {
        let z = (target - eye).normalized();
        let x = z.cross(up);
        if x.norm() < 1e-12 {
            return Err(CameraError::InvalidParameters("up vector parallel to view".into()));
        }
        let x = x.normalized();
        let y = z.cross(x);
        Self::new(Mat3::from_columns(x, y, z), eye)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                err = err.max((rtr.0[i][j] - id).abs());
            }
        }
        if err > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(CameraError::InvalidParameters(
                "rotation must be orthonormal with det +1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_world_dir<T: Real>(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(v)
    }

    pub fn to_world_point<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + Vec3::cst(self.center)
    }

    pub fn to_camera_dir(&self, v: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(v)
    }

    pub fn to_camera_point(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.center)
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.column(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub pose: Pose,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(
        intrinsics: Intrinsics,
        distortion: Distortion,
        pose: Pose,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let camera = Self {
            intrinsics,
            distortion,
            pose,
            width,
            height,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Undistorted pinhole camera with the principal point at the image center.
    pub fn pinhole(focal: f64, width: u32, height: u32, pose: Pose) -> Result<Self, CameraError> {
        Self::new(
            Intrinsics::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0),
            Distortion::default(),
            pose,
            width,
            height,
        )
    }

    /// Checks focal positivity, pose orthonormality and that the distortion
    /// Jacobian stays positive over a grid spanning the image.
    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidParameters("empty resolution".into()));
        }
        let [fx, fy, cx, cy] = effective_intrinsics(&self.intrinsics);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::InvalidParameters("focal lengths must be positive".into()));
        }
        self.pose.validate()?;
        let coeffs = self.distortion.effective();
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(CameraError::InvalidParameters("non-finite distortion".into()));
        }
        let c: [Dual<2>; 5] = coeffs.map(Dual::constant);
        const SAMPLES: usize = 16;
        for j in 0..=SAMPLES {
            for i in 0..=SAMPLES {
                let u = self.width as f64 * i as f64 / SAMPLES as f64;
                let v = self.height as f64 * j as f64 / SAMPLES as f64;
                let x = Dual::variable((u - cx) / fx, 0);
                let y = Dual::variable((v - cy) / fy, 1);
                let (xd, yd) = distort_generic(x, y, &c);
                let det = xd.eps[0] * yd.eps[1] - xd.eps[1] * yd.eps[0];
                if !(det > 0.0) {
                    return Err(CameraError::InvalidParameters(format!(
                        "distortion is not injective near pixel ({u:.1}, {v:.1})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The nine learnable offsets in optimizer order.
    pub fn offsets(&self) -> [f64; CAMERA_PARAMS] {
        let i = self.intrinsics.deltas();
        let d = self.distortion.offset.to_array();
        [i[0], i[1], i[2], i[3], d[0], d[1], d[2], d[3], d[4]]
    }

    pub fn with_offsets(&self, offsets: &[f64; CAMERA_PARAMS]) -> Self {
        let mut cam = self.clone();
        cam.intrinsics
            .set_deltas([offsets[0], offsets[1], offsets[2], offsets[3]]);
        cam.distortion.offset =
            DistortionCoeffs::from_array([offsets[4], offsets[5], offsets[6], offsets[7], offsets[8]]);
        cam
    }

    pub fn contains(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] <= self.width as f64
            && pixel[1] <= self.height as f64
    }

    /// Camera-frame unit direction for `pixel`, with the nine offsets given
    /// explicitly so they can carry derivatives.
    pub fn lift_local<T: Real>(&self, pixel: [f64; 2], offsets: &[T; CAMERA_PARAMS]) -> Vec3<T> {
        let [fx, fy, cx, cy] = effective_generic(
            self.intrinsics.base(),
            [offsets[0], offsets[1], offsets[2], offsets[3]],
        );
        let b = self.distortion.base.to_array();
        let coeffs: [T; 5] = std::array::from_fn(|i| offsets[4 + i] + b[i]);
        let x = (T::cst(pixel[0]) - cx) / fx;
        let y = (T::cst(pixel[1]) - cy) / fy;
        let (xd, yd) = distort_generic(x, y, &coeffs);
        Vec3::new(xd, yd, T::one()).normalized()
    }

    /// Camera-frame direction using the stored offsets.
    pub fn lift_local_f64(&self, pixel: [f64; 2]) -> Vec3 {
        self.lift_local(pixel, &self.offsets())
    }

    /// Center of pixel `(col, row)` in continuous pixel coordinates.
    pub fn pixel_center(col: u32, row: u32) -> [f64; 2] {
        [col as f64 + 0.5, row as f64 + 0.5]
    }
}

/// World-space ray through `pixel`.
pub fn lift_pixel_to_ray(pixel: [f64; 2], camera: &CameraModel) -> Result<Ray, CameraError> {
    if !camera.contains(pixel) {
        return Err(CameraError::OutOfBounds(pixel[0], pixel[1]));
    }
    let local = camera.lift_local_f64(pixel);
    Ok(Ray {
        origin: camera.pose.center,
        direction: camera.pose.to_world_dir(local),
    })
}

/// Pixel hit by a ray direction through the camera center.
pub fn project_ray_to_pixel(ray: &Ray, camera: &CameraModel) -> Result<[f64; 2], CameraError> {
    let local = camera.pose.to_camera_dir(ray.direction);
    if local.z <= 0.0 {
        return Err(CameraError::Behind);
    }
    let [x, y] = undistort([local.x / local.z, local.y / local.z], &camera.distortion)?;
    let [fx, fy, cx, cy] = effective_intrinsics(&camera.intrinsics);
    Ok([fx * x + cx, fy * y + cy])
}
