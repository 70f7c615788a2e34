//! 3D Gaussian clouds and depth-ordered alpha-blended splatting.
//!
//! Each Gaussian is projected with a local affine (EWA) approximation of the
//! perspective map, giving a 2D covariance `J W Σ Wᵀ Jᵀ + 0.3·I` in pixel
//! units. Per pixel, Gaussians are blended front to back in order of
//! camera-frame depth (ties broken by index):
//!
//! ```text
//! α_i = min(sigmoid(o_i) · exp(−½ dᵀ Σ₂⁻¹ d), 0.999)      (skipped if α_i < 1/255)
//! C   = Σ_i c_i α_i Π_{j<i}(1 − α_j) + Π_j(1 − α_j) · background
//! ```

pub(crate) mod backward;

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{sigmoid, Aabb};
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::volren::{PixelResult, RenderedView};

const CLOUD_MAGIC: &[u8; 4] = b"GCLD";
const CLOUD_VERSION: u32 = 1;
/// Isotropic screen-space dilation added to every projected covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Gaussians closer than this to the image plane are culled.
pub const NEAR_CULL: f64 = 0.01;
/// Raw parameters per Gaussian: mean 3, log-scale 3, quaternion 4, opacity 1, color 3.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// `(w, x, y, z)`; normalized before use.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity_logit: f64, color: [f64; 3]) -> Self {
        Self {
            mean,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit,
            color,
        }
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.unit_quaternion().to_rotation_matrix().into_inner()
    }

    /// `Σ = R · diag(exp(2·log_scale)) · Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.log_scale.map(|s| (2.0 * s).exp()));
        r * s2 * r.transpose()
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Normalized 3D Gaussian density at `x`.
    pub fn eval_density(&self, x: &Vector3<f64>) -> f64 {
        let cov = self.covariance();
        let inv = cov.try_inverse().expect("covariance is positive definite");
        let d = x - self.mean;
        let m = (d.transpose() * inv * d)[(0, 0)];
        (2.0 * PI).powf(-1.5) * cov.determinant().powf(-0.5) * (-0.5 * m).exp()
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let m = &self.mean;
        let s = &self.log_scale;
        let q = &self.rotation;
        let c = &self.color;
        [
            m.x, m.y, m.z, s.x, s.y, s.z, q[0], q[1], q[2], q[3], self.opacity_logit, c[0], c[1], c[2],
        ]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            mean: Vector3::new(p[0], p[1], p[2]),
            log_scale: Vector3::new(p[3], p[4], p[5]),
            rotation: [p[6], p[7], p[8], p[9]],
            opacity_logit: p[10],
            color: [p[11], p[12], p[13]],
        }
    }
}

/// Screen-space footprint of one Gaussian at one camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-frame `z` of the mean.
    pub depth: f64,
}

/// Projects one Gaussian; `None` when its center is behind (or on) the
/// image plane.
pub fn project_gaussian(g: &Gaussian3D, intr: &Intrinsics, world_from_cam: &Pose) -> Option<ProjectedGaussian> {
    project_with_jacobian(g, intr, world_from_cam).map(|(p, _, _)| p)
}

/// Projection plus the pieces the backward pass reuses: the camera-frame
/// mean and `J·W`.
pub(crate) fn project_with_jacobian(
    g: &Gaussian3D,
    intr: &Intrinsics,
    pose: &Pose,
) -> Option<(ProjectedGaussian, Vector3<f64>, Matrix2x3<f64>)> {
    let t = pose.world_to_camera(&g.mean);
    if t.z <= NEAR_CULL {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let j = Matrix2x3::new(
        intr.fx / z, 0.0, -intr.fx * x / (z * z),
        0.0, intr.fy / z, -intr.fy * y / (z * z),
    );
    let jw = j * pose.rotation().transpose();
    let cov2d = jw * g.covariance() * jw.transpose() + Matrix2::identity() * COV2D_DILATION;
    let (u, v) = intr.project_camera_point(&t);
    Some((
        ProjectedGaussian {
            mean2d: Vector2::new(u, v),
            cov2d,
            depth: z,
        },
        t,
        jw,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian3D>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Result<Self> {
        let cloud = Self { gaussians };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Uniformly scattered isotropic Gaussians inside `bbox`, sized so that
    /// neighbors overlap, with low opacity and random colors.
    pub fn random(count: usize, bbox: &Aabb, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("gaussian count must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = bbox.extent();
        let spacing = (extent.x * extent.y * extent.z / count as f64).cbrt();
        let gaussians = (0..count)
            .map(|_| {
                let mean = Vector3::from_fn(|a, _| bbox.min[a] + rng.gen::<f64>() * extent[a]);
                let color = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
                Gaussian3D::isotropic(mean, 0.5 * spacing, -1.5, color)
            })
            .collect();
        Self::new(gaussians)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            let qn = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            let finite = g.to_params().iter().all(|v| v.is_finite());
            if !finite || (qn - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("gaussian {i} has invalid parameters")));
            }
        }
        Ok(())
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Flat raw parameter vector (`PARAMS_PER_GAUSSIAN` per Gaussian).
    pub fn to_params(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.to_params()).collect()
    }

    /// Overwrites all Gaussians from a flat parameter vector without
    /// validation (used by optimizers and gradient checks).
    pub fn set_params(&mut self, params: &[f64]) {
        for (g, p) in self.gaussians.iter_mut().zip(params.chunks_exact(PARAMS_PER_GAUSSIAN)) {
            *g = Gaussian3D::from_params(p);
        }
    }

    /// Restores the representation invariants after a raw update.
    pub fn renormalize(&mut self) {
        for g in &mut self.gaussians {
            let n = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                g.rotation.iter_mut().for_each(|v| *v /= n);
            } else {
                g.rotation = [1.0, 0.0, 0.0, 0.0];
            }
            g.color.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        }
    }

    /// Header (magic, version, count) followed by 14 little-endian `f32`
    /// per Gaussian.
    pub fn write_checkpoint(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CLOUD_MAGIC)?;
        w.write_all(&CLOUD_VERSION.to_le_bytes())?;
        w.write_all(&(self.gaussians.len() as u32).to_le_bytes())?;
        for g in &self.gaussians {
            for v in g.to_params() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("cloud checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CLOUD_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(u) != CLOUD_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut u).map_err(|_| bad("truncated header"))?;
        let count = u32::from_le_bytes(u) as usize;
        let mut gaussians = Vec::with_capacity(count);
        let mut p = [0.0f64; PARAMS_PER_GAUSSIAN];
        for _ in 0..count {
            for v in &mut p {
                r.read_exact(&mut u).map_err(|_| bad("truncated payload"))?;
                *v = f32::from_le_bytes(u) as f64;
            }
            gaussians.push(Gaussian3D::from_params(&p));
        }
        // f32 storage perturbs unit quaternions slightly.
        let mut cloud = Self { gaussians };
        cloud.renormalize();
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

/// A projected Gaussian prepared for blending at one camera.
#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: usize,
    pub proj: ProjectedGaussian,
    /// Inverse 2D covariance `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Half-extents of the screen box outside which `α < 1/255`.
    pub radius: [f64; 2],
    pub cam_point: Vector3<f64>,
    pub jw: Matrix2x3<f64>,
}

/// Projects and depth-sorts the cloud for one camera.
pub(crate) fn prepare_splats(cloud: &GaussianCloud, camera: &Camera) -> Vec<Splat> {
    let cutoff = 2.0 * (1.0 / ALPHA_MIN).ln();
    let mut splats: Vec<Splat> = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let (proj, cam_point, jw) = project_with_jacobian(g, &camera.intrinsics, &camera.pose)?;
            let cov = proj.cov2d;
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
            Some(Splat {
                index,
                proj,
                conic,
                opacity: g.opacity(),
                color: g.color,
                radius: [(cutoff * cov[(0, 0)]).sqrt(), (cutoff * cov[(1, 1)]).sqrt()],
                cam_point,
                jw,
            })
        })
        .collect();
    splats.sort_by(|a, b| a.proj.depth.total_cmp(&b.proj.depth).then(a.index.cmp(&b.index)));
    splats
}

/// One blended contribution at a pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    /// Position in the sorted splat list.
    pub slot: usize,
    pub alpha: f64,
    pub gauss: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

pub(crate) fn pixel_contributions(splats: &[Splat], u: f64, v: f64, out: &mut Vec<Contribution>) {
    out.clear();
    for (slot, s) in splats.iter().enumerate() {
        let dx = u - s.proj.mean2d.x;
        let dy = v - s.proj.mean2d.y;
        if dx.abs() > s.radius[0] || dy.abs() > s.radius[1] {
            continue;
        }
        let [a, b, c] = s.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let gauss = power.exp();
        let raw = s.opacity * gauss;
        if raw < ALPHA_MIN {
            continue;
        }
        let clamped = raw > ALPHA_MAX;
        out.push(Contribution {
            slot,
            alpha: if clamped { ALPHA_MAX } else { raw },
            gauss,
            clamped,
            dx,
            dy,
        });
    }
}

/// Blends the contributions; depth is the weighted camera-frame `z`
/// converted to distance along the pixel ray.
pub(crate) fn blend(
    splats: &[Splat],
    contributions: &[Contribution],
    background: [f64; 3],
    ray_scale: f64,
) -> (PixelResult, f64) {
    let mut trans = 1.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut acc = 0.0;
    for c in contributions {
        let s = &splats[c.slot];
        let w = c.alpha * trans;
        for ch in 0..3 {
            color[ch] += w * s.color[ch];
        }
        depth += w * s.proj.depth;
        acc += w;
        trans *= 1.0 - c.alpha;
    }
    for ch in 0..3 {
        color[ch] += trans * background[ch];
    }
    (
        PixelResult {
            color,
            depth: depth * ray_scale,
            acc,
        },
        trans,
    )
}

pub fn splat_render(cloud: &GaussianCloud, camera: &Camera, background: [f64; 3]) -> RenderedView {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let splats = prepare_splats(cloud, camera);
    let pixels: Vec<PixelResult> = (0..w * h)
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            pixel_contributions(&splats, u, v, scratch);
            blend(&splats, scratch, background, intr.unproject(u, v).norm()).0
        })
        .collect();
    RenderedView::from_pixels(w, h, pixels)
}

/// Per-pixel blend weights and leftover transmittance, exposed for checks.
pub fn pixel_weights(cloud: &GaussianCloud, camera: &Camera, x: usize, y: usize) -> (Vec<(usize, f64)>, f64) {
    let splats = prepare_splats(cloud, camera);
    let mut contributions = Vec::new();
    pixel_contributions(&splats, x as f64 + 0.5, y as f64 + 0.5, &mut contributions);
    let mut trans = 1.0;
    let mut weights = Vec::new();
    for c in &contributions {
        weights.push((splats[c.slot].index, c.alpha * trans));
        trans *= 1.0 - c.alpha;
    }
    (weights, trans)
}
