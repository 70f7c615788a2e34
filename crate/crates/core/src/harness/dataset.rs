//! Calibrated view collections and their on-disk manifest.
//!
//! A dataset directory holds `manifest.json`, `images/*.png`,
//! `depth/*.pfm` and, for synthetic data, `scene.json`. Poses are stored as
//! 4x4 row-major camera-to-world matrices (+z forward, +y down in the camera
//! frame). Depth maps hold ray distances, with `-1` marking pixels without
//! a surface.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{render_ground_truth, SyntheticScene};
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::image::{Image, Mask, ScalarMap};
use crate::optim::View;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_FILE: &str = "scene.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Pseudo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    pub pose: [f64; 16],
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub intrinsics: Intrinsics,
    pub bbox: Aabb,
    pub frames: Vec<FrameRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Checks intrinsics, poses and that every referenced file exists under
    /// `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            Pose::from_row_major(&f.pose).map_err(|e| Error::Data(format!("frame {i}: {e}")))?;
            for rel in std::iter::once(&f.image).chain(f.depth.as_ref()) {
                if !root.join(rel).is_file() {
                    return Err(Error::Data(format!("frame {i}: missing file {}", root.join(rel).display())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub pose: Pose,
    pub image: Image,
    pub depth: Option<(ScalarMap, Mask)>,
    pub split: Split,
    pub provenance: Provenance,
}

/// In-memory dataset with shared intrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub intrinsics: Intrinsics,
    pub bbox: Aabb,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn views(&self, split: Split) -> Vec<View> {
        self.frames
            .iter()
            .filter(|f| f.split == split)
            .map(|f| View {
                camera: Camera::new(self.intrinsics, f.pose),
                image: f.image.clone(),
            })
            .collect()
    }

    pub fn train_views(&self) -> Vec<View> {
        self.views(Split::Train)
    }

    pub fn test_views(&self) -> Vec<View> {
        self.views(Split::Test)
    }

    /// Writes images, depth maps and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        for sub in ["images", "depth"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let mut frames = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let image = format!("images/{i:03}.png");
            f.image.write_png(&dir.join(&image))?;
            let depth = match &f.depth {
                Some((d, valid)) => {
                    let rel = format!("depth/{i:03}.pfm");
                    encode_depth(d, valid).write_pfm(&dir.join(&rel))?;
                    Some(rel)
                }
                None => None,
            };
            frames.push(FrameRecord {
                image,
                depth,
                pose: f.pose.to_row_major(),
                split: f.split,
                provenance: f.provenance,
            });
        }
        let manifest = Manifest {
            intrinsics: self.intrinsics,
            bbox: self.bbox,
            frames,
        };
        manifest.write(&dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
        manifest.validate(dir)?;
        let (w, h) = (manifest.intrinsics.width, manifest.intrinsics.height);
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for rec in &manifest.frames {
            let image = Image::read_png(&dir.join(&rec.image))?;
            if image.dims() != (w, h) {
                return Err(Error::Data(format!("{} is {:?}, manifest says {w}x{h}", rec.image, image.dims())));
            }
            let depth = match &rec.depth {
                Some(rel) => Some(decode_depth(&ScalarMap::read_pfm(&dir.join(rel))?)),
                None => None,
            };
            frames.push(Frame {
                pose: Pose::from_row_major(&rec.pose)?,
                image,
                depth,
                split: rec.split,
                provenance: rec.provenance,
            });
        }
        Ok(Self {
            intrinsics: manifest.intrinsics,
            bbox: manifest.bbox,
            frames,
        })
    }
}

/// Depth with invalid pixels encoded as `-1`.
pub fn encode_depth(depth: &ScalarMap, valid: &Mask) -> ScalarMap {
    let (w, h) = depth.dims();
    ScalarMap::from_fn(w, h, |x, y| if valid.get(x, y) { depth.get(x, y) } else { -1.0 })
}

pub fn decode_depth(encoded: &ScalarMap) -> (ScalarMap, Mask) {
    let (w, h) = encoded.dims();
    let valid: Vec<bool> = encoded.values().iter().map(|&d| d > 0.0).collect();
    let depth = ScalarMap::from_fn(w, h, |x, y| encoded.get(x, y).max(0.0));
    (depth, Mask::from_flags(w, h, valid).expect("same dims"))
}

/// Cameras on a horizontal arc around `center`, all looking at it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingGeometry {
    pub radius: f64,
    /// Camera height above the center along world +y.
    pub height: f64,
    /// Angular span; 360 places views on a closed ring.
    pub arc_degrees: f64,
    pub center: [f64; 3],
}

impl Default for RingGeometry {
    fn default() -> Self {
        Self {
            radius: 3.0,
            height: 0.6,
            arc_degrees: 120.0,
            center: [0.0; 3],
        }
    }
}

impl RingGeometry {
    /// Camera pose at azimuth `degrees` (0 looks along world +z).
    pub fn pose_at(&self, degrees: f64, height: f64) -> Result<Pose> {
        let a = degrees.to_radians();
        let c = Vector3::from(self.center);
        let eye = c + Vector3::new(self.radius * a.sin(), height, -self.radius * a.cos());
        Pose::look_at(eye, c, Vector3::y())
    }

    /// `count` evenly spaced poses; the seed rotates the whole arc by up to
    /// ±5 degrees.
    pub fn poses(&self, count: usize, seed: u64) -> Result<Vec<Pose>> {
        let phase = ChaCha8Rng::seed_from_u64(seed).gen_range(-5.0..5.0);
        let closed = self.arc_degrees >= 360.0;
        let span = if closed { count.max(1) } else { count.saturating_sub(1).max(1) } as f64;
        (0..count)
            .map(|i| {
                let az = phase - 0.5 * if closed { 0.0 } else { self.arc_degrees } + self.arc_degrees * i as f64 / span;
                self.pose_at(az, self.height)
            })
            .collect()
    }
}

/// Holdout rule: every fourth view is a test view.
pub fn split_for_index(i: usize) -> Split {
    if i % 4 == 3 {
        Split::Test
    } else {
        Split::Train
    }
}

/// Renders ground truth for each `(pose, split)` pair.
pub fn build_dataset(scene: &SyntheticScene, intrinsics: Intrinsics, poses: &[(Pose, Split)]) -> SceneDataset {
    let frames = poses
        .iter()
        .map(|&(pose, split)| {
            let gt = render_ground_truth(scene, &Camera::new(intrinsics, pose));
            Frame {
                pose,
                image: gt.rgb,
                depth: Some((gt.depth, gt.valid)),
                split,
                provenance: Provenance::Real,
            }
        })
        .collect();
    SceneDataset {
        intrinsics,
        bbox: scene.bbox,
        frames,
    }
}

/// Renders `view_count` arc views, holding out every fourth as test, and
/// writes them with the scene description into `dir`.
pub fn make_dataset(
    scene: &SyntheticScene,
    view_count: usize,
    ring: &RingGeometry,
    intrinsics: Intrinsics,
    seed: u64,
    dir: &Path,
) -> Result<(SceneDataset, Manifest)> {
    if view_count < 2 {
        return Err(Error::Config(format!("a dataset needs at least 2 views, got {view_count}")));
    }
    let poses: Vec<(Pose, Split)> = ring
        .poses(view_count, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, split_for_index(i)))
        .collect();
    let dataset = build_dataset(scene, intrinsics, &poses);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dataset.save(dir)?;
    let scene_path: PathBuf = dir.join(SCENE_FILE);
    fs::write(&scene_path, scene.to_json()).map_err(|e| Error::io(&scene_path, e))?;
    Ok((dataset, manifest))
}

pub fn load_scene(dir: &Path) -> Result<SyntheticScene> {
    let path = dir.join(SCENE_FILE);
    SyntheticScene::from_json(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
}
