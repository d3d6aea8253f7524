//! Pinhole camera model and pose conventions.
//!
//! A pose stores the camera-to-world rotation and the camera center in world
//! coordinates, so a world point maps to camera coordinates as
//! `R^T (X - C)`. Camera axes: x right, y down, z forward.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: UnitQuaternion<f64>,
    pub position: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: UnitQuaternion<f64>, position: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            position,
        }
    }

    /// Builds a pose from `(w, x, y, z)` quaternion components, renormalizing.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, position: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            position,
        )
    }

    /// Camera-to-world from a world-to-camera rotation and translation
    /// (`x_cam = R_wc X + t`).
    pub fn from_world_to_camera(r_wc: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r_wc);
        let r_cw = rot.inverse();
        let position = -(r_cw * t);
        Self::new(UnitQuaternion::from_rotation_matrix(&r_cw), position)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(world - self.position))
    }

    /// Ray origin and unit direction in world frame through pixel `uv`.
    pub fn back_project_ray(
        &self,
        intrinsics: &CameraIntrinsics,
        uv: &Vector2<f64>,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = Vector3::new(
            (uv.x - intrinsics.principal_point[0]) / intrinsics.focal,
            (uv.y - intrinsics.principal_point[1]) / intrinsics.focal,
            1.0,
        );
        (self.position, (self.rotation * dir_cam).normalize())
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.quaternion().w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal: 500.0,
            principal_point: [320.0, 240.0],
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.focal > 0.0
            && self.width > 0
            && self.height > 0
            && self.contains(&Vector2::new(
                self.principal_point[0],
                self.principal_point[1],
            ))
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x <= self.width as f64 && uv.y <= self.height as f64
    }

    /// Pinhole projection of a camera-frame point; `None` behind the camera.
    pub fn project_camera(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= 1e-9 {
            return None;
        }
        Some(Vector2::new(
            self.focal * pc.x / pc.z + self.principal_point[0],
            self.focal * pc.y / pc.z + self.principal_point[1],
        ))
    }

    pub fn project(&self, pose: &CameraPose, world: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project_camera(&pose.to_camera(world))
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (uv.x - self.principal_point[0]) / self.focal,
            (uv.y - self.principal_point[1]) / self.focal,
        )
    }
}

/// Camera-to-world rotation for a camera looking along `forward` with image
/// y pointing towards world -z.
pub fn look_rotation(forward: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = forward.normalize();
    let down = Vector3::new(0.0, 0.0, -1.0);
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_rotation_points_forward() {
        let pose = CameraPose::new(look_rotation(&Vector3::y()), Vector3::zeros());
        let pc = pose.to_camera(&Vector3::new(0.0, 10.0, 0.0));
        assert!((pc - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-12);
        let right = pose.to_camera(&Vector3::new(1.0, 10.0, 0.0));
        assert!(right.x > 0.0);
        let up = pose.to_camera(&Vector3::new(0.0, 10.0, 1.0));
        assert!(up.y < 0.0);
    }

    #[test]
    fn canonical_sign_and_unit_norm() {
        let pose = CameraPose::from_wxyz(-2.0, 0.0, 0.0, 2.0, Vector3::zeros());
        let [w, x, y, z] = pose.wxyz();
        assert!(w >= 0.0);
        assert!(((w * w + x * x + y * y + z * z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn world_to_camera_round_trip() {
        let pose = CameraPose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.3, 0.7),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let r_wc = pose.rotation.inverse().to_rotation_matrix().into_inner();
        let t = -(r_wc * pose.position);
        let back = CameraPose::from_world_to_camera(&r_wc, &t);
        assert!((back.position - pose.position).norm() < 1e-12);
        assert!(back.rotation.angle_to(&pose.rotation) < 1e-12);
    }
}
