//! Explicit voxel-grid radiance field.
//!
//! Raw (pre-activation) density and color live at voxel centers. A query
//! trilinearly interpolates the raw values and then applies `softplus` to the
//! density and the logistic function to each color channel, so any raw state
//! yields `σ ≥ 0` and colors in `[0, 1]`. Outside the bounding box the field
//! is empty. Color does not depend on the viewing direction.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"RGRD";
const GRID_VERSION: u32 = 1;
const INIT_SIGMA: f64 = 0.1;

/// Axis-aligned world-space box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::Config(format!("degenerate bounding box {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Parametric interval `[t_enter, t_exit]` of the ray inside the box.
    pub fn ray_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Eight trilinear corner weights and flat voxel indices.
pub type Corners = [(usize, f64); 8];

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceGrid {
    resolution: [usize; 3],
    bbox: Aabb,
    density_raw: Vec<f64>,
    color_raw: Vec<f64>,
}

impl RadianceGrid {
    /// Grid with uniform raw values.
    pub fn uniform(resolution: [usize; 3], bbox: Aabb, density_raw: f64, color_raw: [f64; 3]) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::Config(format!("grid resolution {resolution:?} must be ≥ 2 per axis")));
        }
        Aabb::new(bbox.min, bbox.max)?;
        let n = resolution.iter().product::<usize>();
        Ok(Self {
            resolution,
            bbox,
            density_raw: vec![density_raw; n],
            color_raw: color_raw.iter().copied().cycle().take(3 * n).collect(),
        })
    }

    /// Soft fog (`σ ≈ 0.1`) with mid-gray color; the seed adds a small
    /// deterministic perturbation to the raw densities.
    pub fn init(resolution: [usize; 3], bbox: Aabb, seed: u64) -> Result<Self> {
        let mut grid = Self::uniform(resolution, bbox, inverse_softplus(INIT_SIGMA), [0.0; 3])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in &mut grid.density_raw {
            *d += rng.gen_range(-0.05..0.05);
        }
        Ok(grid)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn voxel_count(&self) -> usize {
        self.density_raw.len()
    }

    pub fn density_raw(&self) -> &[f64] {
        &self.density_raw
    }

    pub fn density_raw_mut(&mut self) -> &mut [f64] {
        &mut self.density_raw
    }

    /// Interleaved RGB per voxel (`3 * voxel_count` values).
    pub fn color_raw(&self) -> &[f64] {
        &self.color_raw
    }

    pub fn color_raw_mut(&mut self) -> &mut [f64] {
        &mut self.color_raw
    }

    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    /// World position of the center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let e = self.bbox.extent();
        let idx = [i, j, k];
        Vector3::from_fn(|a, _| {
            self.bbox.min[a] + (idx[a] as f64 + 0.5) * e[a] / self.resolution[a] as f64
        })
    }

    /// Trilinear corners for a point inside the box (clamped to the outermost
    /// voxel centers); `None` outside.
    pub fn corners(&self, x: &Vector3<f64>) -> Option<Corners> {
        if !self.bbox.contains(x) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let g = (x[a] - self.bbox.min[a]) / (self.bbox.max[a] - self.bbox.min[a]) * n as f64 - 0.5;
            let g = g.clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut out = [(0usize, 0.0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            *slot = (self.voxel_index(base[0] + dx, base[1] + dy, base[2] + dz), w);
        }
        Some(out)
    }

    /// Interpolated raw density and color at precomputed corners.
    pub fn raw_at(&self, corners: &Corners) -> (f64, [f64; 3]) {
        let mut d = 0.0;
        let mut c = [0.0; 3];
        for &(idx, w) in corners {
            d += w * self.density_raw[idx];
            for ch in 0..3 {
                c[ch] += w * self.color_raw[3 * idx + ch];
            }
        }
        (d, c)
    }

    /// Activated `(σ, rgb)` at `x`. The viewing direction is accepted for
    /// interface symmetry and ignored.
    pub fn sample(&self, x: &Vector3<f64>, _dir: Option<&Vector3<f64>>) -> (f64, [f64; 3]) {
        match self.corners(x) {
            None => (0.0, [0.0; 3]),
            Some(corners) => {
                let (d, c) = self.raw_at(&corners);
                (softplus(d), [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])])
            }
        }
    }

    /// Binary checkpoint: magic, version, resolution, bbox (f64), then the
    /// density and interleaved color blocks as little-endian `f32` in
    /// x-fastest voxel order.
    pub fn write_checkpoint(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        for &n in &self.resolution {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for v in self.bbox.min.iter().chain(&self.bbox.max) {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.density_raw.iter().chain(&self.color_raw) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("grid checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != GRID_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(u) != GRID_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut resolution = [0usize; 3];
        for n in &mut resolution {
            r.read_exact(&mut u).map_err(|_| bad("truncated header"))?;
            *n = u32::from_le_bytes(u) as usize;
        }
        let mut b = [0.0f64; 6];
        let mut d8 = [0u8; 8];
        for v in &mut b {
            r.read_exact(&mut d8).map_err(|_| bad("truncated header"))?;
            *v = f64::from_le_bytes(d8);
        }
        let bbox = Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])?;
        let mut grid = Self::uniform(resolution, bbox, 0.0, [0.0; 3])?;
        for v in grid.density_raw.iter_mut().chain(grid.color_raw.iter_mut()) {
            r.read_exact(&mut u).map_err(|_| bad("truncated payload"))?;
            *v = f32::from_le_bytes(u) as f64;
        }
        Ok(grid)
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
