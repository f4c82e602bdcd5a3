//! Poses, rigid transforms, pinhole intrinsics and triangle meshes.
//!
//! Conventions: the camera looks down +z, image origin is the top-left pixel
//! with y pointing down, and pixel `(u, v)` has its center at integer
//! coordinates `(u, v)`. Orientation is extrinsic X-Y-Z, i.e.
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Lengths are meters.

use alloc::vec::Vec;
use alloc::format;
use core::f64::consts::PI;

use crate::math::{Mat3, Vec3};
use crate::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * libm::floor((a + PI) / two_pi);
    // floor maps onto [-pi, pi); fold the lower end over
    if r <= -PI {
        r += two_pi;
    }
    if r > PI {
        r -= two_pi;
    }
    r
}

/// Six degree-of-freedom pose hypothesis: translation in meters, Euler angles
/// in radians kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6DoF {
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

impl Pose6DoF {
    pub const IDENTITY: Pose6DoF = Pose6DoF { x: 0.0, y: 0.0, z: 0.0, roll: 0.0, pitch: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        let all = [x, y, z, roll, pitch, yaw];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite component"));
        }
        Ok(Self {
            x,
            y,
            z,
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
        })
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn roll(&self) -> f64 {
        self.roll
    }
    pub fn pitch(&self) -> f64 {
        self.pitch
    }
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn rotation(&self) -> Mat3 {
        Mat3::rot_z(self.yaw) * Mat3::rot_y(self.pitch) * Mat3::rot_x(self.roll)
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform { rotation: self.rotation(), translation: self.translation() }
    }

    /// Pose with translation `t` and the Euler angles of rotation `r`. At
    /// gimbal lock (pitch = ±π/2) the whole in-plane angle goes to yaw.
    pub fn from_rotation(t: Vec3, r: &Mat3) -> Result<Self> {
        let m = &r.rows;
        let pitch = libm::asin((-m[2][0]).clamp(-1.0, 1.0));
        let (roll, yaw) = if m[2][0].abs() < 1.0 - 1e-12 {
            (libm::atan2(m[2][1], m[2][2]), libm::atan2(m[1][0], m[0][0]))
        } else {
            (0.0, libm::atan2(-m[0][1], m[1][1]))
        };
        Self::new(t.x, t.y, t.z, roll, pitch, yaw)
    }
}

/// Converts a pose to its rigid transform. Fails only on non-finite input,
/// which [`Pose6DoF`] already rules out at construction.
pub fn pose_to_transform(pose: &Pose6DoF) -> Result<RigidTransform> {
    let t = pose.to_transform();
    if !t.translation.is_finite() {
        return Err(Error::InvalidPose("non-finite component"));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::IDENTITY, translation: t }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.apply(other.translation),
        }
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation).max_abs_diff(&Mat3::IDENTITY)
    }
}

pub fn transform_point(t: &RigidTransform, p: Vec3) -> Vec3 {
    t.apply(p)
}

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
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// 640x480 Kinect-class sensor, f = 570 px, principal point at the center.
    pub fn kinect() -> Self {
        Self { fx: 570.0, fy: 570.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(())
    }

    /// Ratio between the 3D distance of two points on the ray through pixel
    /// `(px, py)` and their depth difference.
    pub fn ray_scale(&self, px: f64, py: f64) -> f64 {
        let a = (px - self.cx) / self.fx;
        let b = (py - self.cy) / self.fy;
        libm::sqrt(1.0 + a * a + b * b)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Pinhole projection; returns `(px, py, z)`.
pub fn project_point(k: &CameraIntrinsics, p: Vec3) -> Result<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((p.x * k.fx / p.z + k.cx, p.y * k.fy / p.z + k.cy, p.z))
}

pub fn back_project(k: &CameraIntrinsics, px: f64, py: f64, z: f64) -> Result<Vec3> {
    if !(z > 0.0) {
        return Err(Error::InvalidDepth(z));
    }
    Ok(Vec3::new((px - k.cx) * z / k.fx, (py - k.cy) * z / k.fy, z))
}

/// Indexed triangle mesh in the object frame. Faces are wound
/// counter-clockwise around their outward normal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no vertices or no faces".into()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let n = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&ix| ix as usize >= n) {
                return Err(Error::InvalidMesh(format!("face {i} index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {i} repeats a vertex")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let f = self.faces[i];
        [self.vertices[f[0] as usize], self.vertices[f[1] as usize], self.vertices[f[2] as usize]]
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.vertices.iter().fold(Vec3::ZERO, |a, &v| a + v);
        sum.scale(1.0 / self.vertices.len() as f64)
    }

    /// Largest vertex distance from the object origin.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Same mesh with faces in a different order.
    pub fn with_faces(&self, faces: Vec<[u32; 3]>) -> Result<Self> {
        Self::new(self.vertices.clone(), faces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_round_trip_through_matrix() {
        for &(r, p, y) in &[(0.3, -0.4, 2.5), (-3.0, 1.2, -0.1), (1.0, 0.0, 0.0), (0.2, -1.5, 3.1)] {
            let pose = Pose6DoF::new(0.1, 0.2, 0.7, r, p, y).unwrap();
            let back = Pose6DoF::from_rotation(pose.translation(), &pose.rotation()).unwrap();
            assert!(back.rotation().max_abs_diff(&pose.rotation()) < 1e-12);
            assert!((back.roll() - r).abs() < 1e-12 && (back.pitch() - p).abs() < 1e-12);
        }
        // gimbal lock still reproduces the matrix
        let lock = Pose6DoF::new(0.0, 0.0, 1.0, 0.4, core::f64::consts::FRAC_PI_2, -0.9).unwrap();
        let back = Pose6DoF::from_rotation(lock.translation(), &lock.rotation()).unwrap();
        assert!(back.rotation().max_abs_diff(&lock.rotation()) < 1e-9);
    }

    #[test]
    fn identity_pose() {
        let t = pose_to_transform(&Pose6DoF::IDENTITY).unwrap();
        assert_eq!(t.rotation, Mat3::IDENTITY);
        assert_eq!(t.translation, Vec3::ZERO);
    }

    #[test]
    fn pure_translation() {
        let t = pose_to_transform(&Pose6DoF::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(t.rotation, Mat3::IDENTITY);
        assert_eq!(t.translation, Vec3::new(1.0, 2.0, 3.0));
    }

    /// Rodrigues rotation of `v` about unit `axis` by `angle`.
    fn axis_angle(axis: Vec3, angle: f64, v: Vec3) -> Vec3 {
        let (s, c) = libm::sincos(angle);
        v.scale(c) + axis.cross(v).scale(s) + axis.scale(axis.dot(v) * (1.0 - c))
    }

    #[test]
    fn roll_quarter_turn_maps_y_to_z() {
        let t = Pose6DoF::new(0.0, 0.0, 0.0, PI / 2.0, 0.0, 0.0).unwrap().to_transform();
        let expect = axis_angle(Vec3::new(1.0, 0.0, 0.0), PI / 2.0, Vec3::new(0.0, 1.0, 0.0));
        let got = transform_point(&t, Vec3::new(0.0, 1.0, 0.0));
        assert!((got - expect).norm() < 1e-12);
        assert!((got - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_point_cases() {
        assert_eq!(transform_point(&RigidTransform::IDENTITY, Vec3::new(5.0, 6.0, 7.0)), Vec3::new(5.0, 6.0, 7.0));
        let tr = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(transform_point(&tr, Vec3::ZERO), Vec3::new(1.0, 0.0, 0.0));
        let yaw = Pose6DoF::new(0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0).unwrap().to_transform();
        let p = transform_point(&yaw, Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn non_finite_pose_rejected() {
        assert!(matches!(Pose6DoF::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0), Err(Error::InvalidPose(_))));
        assert!(Pose6DoF::new(0.0, 0.0, 0.0, f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-12);
        let p = Pose6DoF::new(0.0, 0.0, 0.0, 4.0, -4.0, 10.0).unwrap();
        for a in [p.roll(), p.pitch(), p.yaw()] {
            assert!(a > -PI && a <= PI);
        }
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        assert_eq!(project_point(&k, Vec3::new(0.0, 0.0, 1.0)).unwrap(), (320.0, 240.0, 1.0));
        assert_eq!(project_point(&k, Vec3::new(0.1, 0.0, 1.0)).unwrap(), (370.0, 240.0, 1.0));
        assert!(matches!(project_point(&k, Vec3::new(0.0, 0.0, 0.0)), Err(Error::BehindCamera(_))));
        assert!(project_point(&k, Vec3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn back_projection_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        assert_eq!(back_project(&k, 320.0, 240.0, 2.0).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        let p = back_project(&k, 420.0, 240.0, 1.0).unwrap();
        assert!((p - Vec3::new(0.2, 0.0, 1.0)).norm() < 1e-15);
        let q = back_project(&k, 101.0, 37.0, 1.5).unwrap();
        let q3 = back_project(&k, 101.0, 37.0, 4.5).unwrap();
        assert!((q.scale(3.0) - q3).norm() < 1e-12);
        assert!(matches!(back_project(&k, 0.0, 0.0, 0.0), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 500.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 640.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 0.0, 0.0, 640, 480).is_ok());
    }

    #[test]
    fn mesh_validation() {
        let v = alloc::vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(TriangleMesh::new(v.clone(), alloc::vec![[0, 1, 2]]).is_ok());
        assert!(TriangleMesh::new(v.clone(), alloc::vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(v.clone(), alloc::vec![[0, 1, 1]]).is_err());
        assert!(TriangleMesh::new(v, alloc::vec![]).is_err());
        let bad = alloc::vec![Vec3::new(f64::NAN, 0.0, 0.0), Vec3::ZERO, Vec3::ZERO];
        assert!(TriangleMesh::new(bad, alloc::vec![[0, 1, 2]]).is_err());
    }
}
