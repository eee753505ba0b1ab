//! One JSON record per frame. Rotation is camera-to-world as a unit
//! quaternion; `t` is the camera center in world meters. Intrinsics and
//! distortion are written as effective values (base plus offset).

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{effective_intrinsics, CameraError, CameraModel, Distortion, DistortionCoeffs, Intrinsics, Pose};
use crate::vec3::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraModel> for CameraRecord {
    fn from(cam: &CameraModel) -> Self {
        let [fx, fy, cx, cy] = effective_intrinsics(&cam.intrinsics);
        let [k1, k2, k3, p1, p2] = cam.distortion.effective();
        let m = cam.pose.rotation.0;
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_fn(|i, j| m[i][j]));
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        Self {
            fx,
            fy,
            cx,
            cy,
            k1,
            k2,
            k3,
            p1,
            p2,
            qw: q.w,
            qx: q.i,
            qy: q.j,
            qz: q.k,
            tx: cam.pose.center.x,
            ty: cam.pose.center.y,
            tz: cam.pose.center.z,
            width: cam.width,
            height: cam.height,
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<CameraModel, CameraError> {
        let q = nalgebra::Quaternion::new(self.qw, self.qx, self.qy, self.qz);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(CameraError::InvalidParameters(format!(
                "quaternion norm {} is not unit",
                q.norm()
            )));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let m = r.matrix();
        let rotation = Mat3(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])));
        CameraModel::new(
            Intrinsics::new(self.fx, self.fy, self.cx, self.cy),
            Distortion::new(DistortionCoeffs {
                k1: self.k1,
                k2: self.k2,
                k3: self.k3,
                p1: self.p1,
                p2: self.p2,
            }),
            Pose::new(rotation, Vec3::new(self.tx, self.ty, self.tz))?,
            self.width,
            self.height,
        )
    }
}

pub fn write_camera_file(path: &Path, camera: &CameraModel) -> Result<(), CameraError> {
    let text = serde_json::to_string_pretty(&CameraRecord::from(camera))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_camera_file(path: &Path) -> Result<CameraModel, CameraError> {
    let text = std::fs::read_to_string(path)?;
    let record: CameraRecord = serde_json::from_str(&text)?;
    record.to_camera()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_preserves_projection() {
        let pose = Pose::look_at(Vec3::new(1.2, -0.4, 0.6), Vec3::ZERO, Vec3::Z).unwrap();
        let mut cam = CameraModel::pinhole(137.0, 128, 96, pose).unwrap();
        cam.distortion.base.k1 = 0.03;
        cam.intrinsics.delta_cx = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.json");
        write_camera_file(&path, &cam).unwrap();
        let back = read_camera_file(&path).unwrap();
        for &px in &[[3.0, 4.0], [64.0, 48.0], [120.5, 90.25]] {
            let a = cam.lift_local_f64(px);
            let b = back.lift_local_f64(px);
            assert!((a - b).max_abs() < 1e-12);
        }
        assert!((back.pose.center - cam.pose.center).max_abs() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.pose.rotation.0[i][j] - cam.pose.rotation.0[i][j]).abs() < 1e-12);
            }
        }
    }
}
