//! Procedural scenes of flat-colored spheres and boxes, with an exact ray
//! tracer used as ground truth.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::geometry::{ray_through, Camera, Ray};
use crate::image::{Image, Mask, ScalarMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box given by center and half extents.
    Box { center: [f64; 3], half: [f64; 3] },
}

impl Shape {
    pub fn center(&self) -> Vector3<f64> {
        match *self {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } => Vector3::from(center),
        }
    }

    /// Radius of a sphere enclosing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius, .. } => radius,
            Shape::Box { half, .. } => Vector3::from(half).norm(),
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let c = self.center();
        let h = match *self {
            Shape::Sphere { radius, .. } => [radius; 3],
            Shape::Box { half, .. } => half,
        };
        ([c.x - h[0], c.y - h[1], c.z - h[2]], [c.x + h[0], c.y + h[1], c.z + h[2]])
    }

    /// Nearest positive hit distance along the ray. A ray starting inside
    /// the shape hits its far side.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let d = ray.direction();
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - Vector3::from(center);
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > 0.0)
            }
            Shape::Box { .. } => {
                let (min, max) = self.bounds();
                let bx = Aabb { min, max };
                let (t0, t1) = bx.ray_interval(&ray.origin, d)?;
                if t1 <= 0.0 {
                    None
                } else if t0 > 0.0 {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub objects: Vec<SceneObject>,
    pub bbox: Aabb,
    pub background: [f64; 3],
}

/// Ground-truth rendering: color, ray-distance depth and hit mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub rgb: Image,
    /// Zero where nothing was hit.
    pub depth: ScalarMap,
    pub valid: Mask,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            let (min, max) = o.shape.bounds();
            let inside = (0..3).all(|k| min[k] >= self.bbox.min[k] && max[k] <= self.bbox.max[k]);
            if !inside {
                return Err(Error::Data(format!("object {i} leaves the scene bounds")));
            }
            if !o.albedo.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::Data(format!("object {i} albedo {:?} outside [0, 1]", o.albedo)));
            }
        }
        Ok(())
    }

    /// First hit along the ray: `(distance, albedo)`.
    pub fn trace(&self, ray: &Ray) -> Option<(f64, [f64; 3])> {
        self.objects
            .iter()
            .filter_map(|o| o.shape.intersect(ray).map(|t| (t, o.albedo)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Self = serde_json::from_str(s).map_err(|e| Error::Data(format!("scene json: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Deterministic scene of `object_count` objects inside `[-1, 1]³`, drawn
/// so that no object swallows another's center.
pub fn generate_scene(seed: u64, object_count: usize) -> Result<SyntheticScene> {
    if object_count == 0 {
        return Err(Error::Config("a scene needs at least one object".into()));
    }
    let bbox = Aabb::cube(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(object_count);
    while objects.len() < object_count {
        let mut candidate = random_object(&mut rng);
        for _ in 0..200 {
            let clear = objects.iter().all(|o| {
                let gap = (o.shape.center() - candidate.shape.center()).norm();
                gap > o.shape.bounding_radius().max(candidate.shape.bounding_radius())
            });
            if clear {
                break;
            }
            candidate = random_object(&mut rng);
        }
        objects.push(candidate);
    }
    let scene = SyntheticScene {
        objects,
        bbox,
        background: [0.0; 3],
    };
    scene.validate()?;
    Ok(scene)
}

fn random_object(rng: &mut ChaCha8Rng) -> SceneObject {
    let albedo = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
    if rng.gen_bool(0.5) {
        let radius = rng.gen_range(0.2..0.4);
        let lim = 0.9 - radius;
        let center = [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim), rng.gen_range(-lim..lim)];
        SceneObject {
            shape: Shape::Sphere { center, radius },
            albedo,
        }
    } else {
        let half = [rng.gen_range(0.15..0.35), rng.gen_range(0.15..0.35), rng.gen_range(0.15..0.35)];
        let center = [0, 1, 2].map(|k| {
            let lim = 0.9 - half[k];
            rng.gen_range(-lim..lim)
        });
        SceneObject {
            shape: Shape::Box { center, half },
            albedo,
        }
    }
}

/// Sub-pixel rays per axis used by [`render_ground_truth`].
pub const GROUND_TRUTH_SUPERSAMPLING: usize = 8;

/// Ray-traced ground truth. Color is the box-filtered average over an 8×8
/// grid of rays inside each pixel, as a sensor integrates its footprint;
/// depth and hit mask come from the pixel-center ray.
pub fn render_ground_truth(scene: &SyntheticScene, camera: &Camera) -> GroundTruth {
    render_ground_truth_sampled(scene, camera, GROUND_TRUTH_SUPERSAMPLING)
}

/// [`render_ground_truth`] with `n × n` color rays per pixel; `n = 1` traces
/// the pixel center only.
pub fn render_ground_truth_sampled(scene: &SyntheticScene, camera: &Camera, n: usize) -> GroundTruth {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let n = n.max(1);
    let hits: Vec<Option<(f64, [f64; 3])>> = (0..w * h)
        .into_par_iter()
        .map(|i| scene.trace(&camera.pixel_ray(i % w, i / w)))
        .collect();
    let rgb = if n == 1 {
        hits.iter().map(|hit| hit.map_or(scene.background, |(_, c)| c)).collect()
    } else {
        (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let mut c = [0.0; 3];
                for sy in 0..n {
                    for sx in 0..n {
                        let u = x + (sx as f64 + 0.5) / n as f64;
                        let v = y + (sy as f64 + 0.5) / n as f64;
                        let col = scene.trace(&ray_through(intr, &camera.pose, u, v)).map_or(scene.background, |(_, c)| c);
                        (0..3).for_each(|k| c[k] += col[k]);
                    }
                }
                c.map(|v| v / (n * n) as f64)
            })
            .collect()
    };
    let depth = hits.iter().map(|hit| hit.map_or(0.0, |(t, _)| t)).collect();
    let valid = hits.iter().map(Option::is_some).collect();
    GroundTruth {
        rgb: Image::from_pixels(w, h, rgb).expect("pixel count"),
        depth: ScalarMap::from_values(w, h, depth).expect("pixel count"),
        valid: Mask::from_flags(w, h, valid).expect("pixel count"),
    }
}
