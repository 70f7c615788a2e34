//! Pinhole cameras, rigid poses, ray generation and depth-guided warping.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame is right-handed with `+x` right, `+y` down, `+z` forward;
//! * poses are camera-to-world;
//! * continuous image coordinates place the center of pixel `(i, j)` at
//!   `(i + 0.5, j + 0.5)`;
//! * depth maps hold the distance travelled along the unit-length pixel ray,
//!   not the camera-frame `z`.

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask, ScalarMap};

const ROTATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point and a symmetric horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x_degrees: f64) -> Result<Self> {
        let fx = 0.5 * width as f64 / (0.5 * fov_x_degrees.to_radians()).tan();
        Self::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame direction (not normalized, `z = 1`) through continuous
    /// image coordinates `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Perspective projection of a camera-frame point with positive `z`.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Data(format!(
                "pose rotation not orthonormal (|RᵀR−I|={ortho:e}, det={det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite pose translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction
    /// (image rows grow opposite to it).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Data("look-at target coincides with eye".into()));
        }
        let z = forward.normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // Looking along the up axis; any perpendicular works.
            let alt = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
            x = z.cross(&alt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Ok(Self {
            rotation,
            translation: eye,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World point into this camera's frame.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Transform taking points in camera A's frame into camera B's frame.
    pub fn relative(a: &Pose, b: &Pose) -> Pose {
        b.inverse().compose(a)
    }

    /// 4×4 row-major homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64; 16]) -> Result<Self> {
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::Data("pose matrix last row must be [0 0 0 1]".into()));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Pose::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }
}

/// Intrinsics and pose together.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    /// Ray through the center of integer pixel `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize) -> Ray {
        ray_through(&self.intrinsics, &self.pose, x as f64 + 0.5, y as f64 + 0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: Unit::new_normalize(direction),
        }
    }

    pub fn direction(&self) -> &Vector3<f64> {
        self.direction.as_ref()
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction.as_ref() * t
    }
}

/// Unit ray through continuous image coordinates (no bounds check).
pub fn ray_through(intr: &Intrinsics, pose: &Pose, u: f64, v: f64) -> Ray {
    let dir = pose.rotation() * intr.unproject(u, v);
    Ray::new(pose.center(), dir)
}

/// Ray through pixel index coordinates `(x, y)`, sampled at the pixel center
/// `(x + 0.5, y + 0.5)`. Fractional indices are allowed.
pub fn ray_for_pixel(intr: &Intrinsics, pose: &Pose, x: f64, y: f64) -> Result<Ray> {
    if !(x >= 0.0 && y >= 0.0 && x < intr.width as f64 && y < intr.height as f64) {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: intr.width,
            height: intr.height,
        });
    }
    Ok(ray_through(intr, pose, x + 0.5, y + 0.5))
}

/// Projects a world point; returns continuous image coordinates and the
/// camera-frame depth `z`.
pub fn project(intr: &Intrinsics, world_from_cam: &Pose, point: &Vector3<f64>) -> Result<((f64, f64), f64)> {
    let p = world_from_cam.world_to_camera(point);
    if p.z <= 0.0 {
        return Err(Error::BehindCamera { depth: p.z });
    }
    Ok((intr.project_camera_point(&p), p.z))
}

/// Inverse of [`project`]: world point at camera-frame depth `z` behind the
/// continuous image coordinates `(u, v)`.
pub fn backproject(intr: &Intrinsics, world_from_cam: &Pose, u: f64, v: f64, z: f64) -> Vector3<f64> {
    world_from_cam.transform_point(&(intr.unproject(u, v) * z))
}

/// Warps `source` (seen from view B) into view A using A's ray-distance depth
/// map. `a_to_b` maps A camera coordinates into B camera coordinates; both
/// views share `intr`. Pixels whose depth is invalid (as flagged by
/// `depth_valid`), that land behind B, or whose reprojection falls outside
/// the source's sampling region are masked out and left black.
pub fn warp_image(
    source: &Image,
    depth_a: &ScalarMap,
    depth_valid: Option<&Mask>,
    a_to_b: &Pose,
    intr: &Intrinsics,
) -> Result<(Image, Mask)> {
    let (w, h) = source.dims();
    if depth_a.dims() != (w, h) || (intr.width, intr.height) != (w, h) {
        return Err(Error::Shape(format!(
            "warp inputs disagree: source {w}x{h}, depth {:?}, intrinsics {}x{}",
            depth_a.dims(),
            intr.width,
            intr.height
        )));
    }
    if let Some(m) = depth_valid {
        if m.dims() != (w, h) {
            return Err(Error::Shape(format!("validity mask {:?} vs {w}x{h}", m.dims())));
        }
    }
    const EDGE_EPS: f64 = 1e-6;
    let (umin, umax) = (0.5 - EDGE_EPS, w as f64 - 0.5 + EDGE_EPS);
    let (vmin, vmax) = (0.5 - EDGE_EPS, h as f64 - 0.5 + EDGE_EPS);
    let mut out = Image::new(w, h, [0.0; 3]);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth_a.get(x, y);
            let depth_ok = depth_valid.map_or(true, |m| m.get(x, y));
            if !depth_ok || !(d > 0.0) || !d.is_finite() {
                continue;
            }
            let ray_cam = intr.unproject(x as f64 + 0.5, y as f64 + 0.5).normalize();
            let p_b = a_to_b.transform_point(&(ray_cam * d));
            if p_b.z <= 0.0 {
                continue;
            }
            let (u, v) = intr.project_camera_point(&p_b);
            if u < umin || u > umax || v < vmin || v > vmax {
                continue;
            }
            out.set(x, y, source.sample_bilinear(u, v));
            valid[y * w + x] = true;
        }
    }
    Ok((out, Mask::from_flags(w, h, valid)?))
}

/// Converts a camera-frame `z` depth into distance along the unit pixel ray
/// through continuous image coordinates `(u, v)`.
pub fn z_to_ray_distance(intr: &Intrinsics, u: f64, v: f64, z: f64) -> f64 {
    z * intr.unproject(u, v).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let rot = Rotation3::new(axis * 2.0);
        let t = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 3.0;
        Pose::new(*rot.matrix(), t).unwrap()
    }

    #[test]
    fn on_axis_ray() {
        let r = ray_for_pixel(&intr(), &Pose::identity(), 31.5, 31.5).unwrap();
        assert_relative_eq!(*r.direction(), Vector3::z(), epsilon = 1e-15);
        assert_eq!(r.origin, Vector3::zeros());
    }

    #[test]
    fn forty_five_degree_ray() {
        let wide = Intrinsics::new(100.0, 100.0, 32.0, 32.0, 200, 64).unwrap();
        let r = ray_for_pixel(&wide, &Pose::identity(), 131.5, 31.5).unwrap();
        let expect = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert_relative_eq!(*r.direction(), expect, epsilon = 1e-15);
    }

    #[test]
    fn posed_ray_is_rotated_identity_ray() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        let base = ray_for_pixel(&intr(), &Pose::identity(), 10.0, 50.0).unwrap();
        let r = ray_for_pixel(&intr(), &pose, 10.0, 50.0).unwrap();
        // Independent composition: explicit matrix-vector product by hand.
        let m = pose.rotation();
        let d = base.direction();
        let manual = Vector3::new(
            m[(0, 0)] * d.x + m[(0, 1)] * d.y + m[(0, 2)] * d.z,
            m[(1, 0)] * d.x + m[(1, 1)] * d.y + m[(1, 2)] * d.z,
            m[(2, 0)] * d.x + m[(2, 1)] * d.y + m[(2, 2)] * d.z,
        );
        assert_relative_eq!(*r.direction(), manual, epsilon = 1e-12);
        assert_relative_eq!(r.origin, *pose.translation(), epsilon = 0.0);
    }

    #[test]
    fn out_of_bounds_pixel() {
        assert!(matches!(
            ray_for_pixel(&intr(), &Pose::identity(), 64.0, 0.0),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(ray_for_pixel(&intr(), &Pose::identity(), -0.1, 0.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let ((u, v), d) = project(&intr(), &Pose::identity(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((u, v, d), (32.0, 32.0, 2.0));
        let ((u, v), _) = project(&intr(), &Pose::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!((u, v), (82.0, 32.0));
        assert!(matches!(
            project(&intr(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_backproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = intr();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let cam_pt = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..8.0));
            let world = pose.transform_point(&cam_pt);
            let ((u, v), z) = project(&k, &pose, &world).unwrap();
            let back = backproject(&k, &pose, u, v, z);
            worst = worst.max((back - world).norm());
            // Ray + distance route.
            let ray = ray_through(&k, &pose, u, v);
            let via_ray = ray.at(z_to_ray_distance(&k, u, v, z));
            worst = worst.max((via_ray - world).norm());
        }
        assert!(worst < 1e-6, "round-trip error {worst}");
    }

    #[test]
    fn composition_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = Pose::identity();
        for _ in 0..200 {
            acc = acc.compose(&random_pose(&mut rng));
        }
        assert!(Pose::new(*acc.rotation(), *acc.translation()).is_ok());
        let rel = Pose::relative(&acc, &acc);
        assert_relative_eq!(*rel.rotation(), Matrix3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn pose_validation_and_row_major() {
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&mut rng);
        assert_eq!(Pose::from_row_major(&p.to_row_major()).unwrap(), p);
    }

    #[test]
    fn look_at_points_forward() {
        let eye = Vector3::new(3.0, 1.0, 4.0);
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::y()).unwrap();
        assert_relative_eq!(pose.forward(), -eye.normalize(), epsilon = 1e-12);
        // World up projects to the top half of the image (y down).
        let above = pose.world_to_camera(&Vector3::new(0.0, 1.0, 0.0));
        assert!(above.y < 0.0);
        assert!(Pose::new(*pose.rotation(), eye).is_ok());
    }

    #[test]
    fn identity_warp_is_identity() {
        let k = intr();
        let src = Image::from_fn(64, 64, |x, y| [x as f64 / 63.0, y as f64 / 63.0, 0.25]);
        let depth = ScalarMap::from_fn(64, 64, |x, y| 1.0 + 0.01 * (x + y) as f64);
        let (warped, mask) = warp_image(&src, &depth, None, &Pose::identity(), &k).unwrap();
        assert_eq!(mask.count(), 64 * 64);
        for (a, b) in src.pixels().iter().zip(warped.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn disparity_matches_pinhole_law() {
        let k = intr();
        let (d, tx) = (4.0, 0.3);
        // Horizontal ramp makes the shift directly readable from the value.
        let src = Image::from_fn(64, 64, |x, _| [x as f64, 0.0, 0.0]);
        let depth = ScalarMap::from_fn(64, 64, |x, y| z_to_ray_distance(&k, x as f64 + 0.5, y as f64 + 0.5, d));
        // Camera B sits at +tx in A's frame: points move by -tx in B's frame.
        let a_to_b = Pose::from_translation(Vector3::new(-tx, 0.0, 0.0));
        let (warped, mask) = warp_image(&src, &depth, None, &a_to_b, &k).unwrap();
        let expected = k.fx * tx / d;
        let mut checked = 0;
        for y in 0..64 {
            for x in 0..64 {
                if mask.get(x, y) {
                    let shift = x as f64 - warped.get(x, y)[0];
                    assert!((shift - expected).abs() < 0.5, "shift {shift} vs {expected}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 64 * 50);
    }

    #[test]
    fn warp_behind_camera_is_fully_masked() {
        let k = intr();
        let src = Image::new(64, 64, [1.0; 3]);
        let depth = ScalarMap::new(64, 64, 1.0);
        let a_to_b = Pose::from_translation(Vector3::new(0.0, 0.0, -10.0));
        let (_, mask) = warp_image(&src, &depth, None, &a_to_b, &k).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn warp_rejects_resolution_mismatch() {
        let k = intr();
        let src = Image::new(64, 64, [1.0; 3]);
        let depth = ScalarMap::new(32, 64, 1.0);
        assert!(matches!(
            warp_image(&src, &depth, None, &Pose::identity(), &k),
            Err(Error::Shape(_))
        ));
    }
}
