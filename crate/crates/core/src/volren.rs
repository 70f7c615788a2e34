//! Quadrature volume rendering of color and depth along rays.
//!
//! For samples `t_1 < … < t_K` with segment lengths `δ_k`, densities `σ_k`
//! and colors `c_k`:
//!
//! ```text
//! T_k = exp(−Σ_{j<k} σ_j δ_j)        α_k = 1 − exp(−σ_k δ_k)        w_k = T_k α_k
//! C   = Σ_k w_k c_k + T_{K+1} · background
//! D   = Σ_k w_k t_k                  acc = Σ_k w_k
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{sigmoid, softplus, Corners, RadianceGrid};
use crate::geometry::{Camera, Ray};
use crate::image::{Image, Mask, ScalarMap};

/// Rendered depth is trusted only where accumulated opacity reaches this.
pub const MIN_DEPTH_CONFIDENCE: f64 = 0.5;

/// Samples along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    t: Vec<f64>,
    delta: Vec<f64>,
    sigma: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl RaySamples {
    pub fn new(t: Vec<f64>, delta: Vec<f64>, sigma: Vec<f64>, color: Vec<[f64; 3]>) -> Result<Self> {
        let k = t.len();
        if delta.len() != k || sigma.len() != k || color.len() != k || k == 0 {
            return Err(Error::Shape("ray sample arrays must be non-empty and equally long".into()));
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Data("sample distances must be strictly increasing".into()));
        }
        if delta.iter().any(|&d| !(d > 0.0)) || sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Data("segment lengths must be positive and densities non-negative".into()));
        }
        Ok(Self { t, delta, sigma, color })
    }

    /// `count` equal segments covering `[near, far]`, sampled at segment
    /// starts, with the given per-sample densities and colors.
    pub fn uniform(near: f64, far: f64, sigma: Vec<f64>, color: Vec<[f64; 3]>) -> Result<Self> {
        let k = sigma.len();
        let step = (far - near) / k as f64;
        let t = (0..k).map(|i| near + i as f64 * step).collect();
        Self::new(t, vec![step; k], sigma, color)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Per-sample compositing weights `w_k` and the leftover transmittance.
    pub fn weights(&self) -> (Vec<f64>, f64) {
        let mut optical = 0.0_f64;
        let mut w = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let tau = self.sigma[k] * self.delta[k];
            let trans = (-optical).exp();
            w.push(trans * alpha(tau));
            optical += tau;
        }
        (w, (-optical).exp())
    }
}

/// `α(x) = 1 − exp(−x)`.
pub fn alpha(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// Transmittance before each sample: `T_1 = 1`, `T_k = exp(−Σ_{j<k} σ_j δ_j)`.
pub fn transmittance(samples: &RaySamples) -> Vec<f64> {
    let mut optical = 0.0_f64;
    samples
        .sigma
        .iter()
        .zip(&samples.delta)
        .map(|(s, d)| {
            let t = (-optical).exp();
            optical += s * d;
            t
        })
        .collect()
}

pub fn composite_color(samples: &RaySamples, background: [f64; 3]) -> [f64; 3] {
    let (w, leftover) = samples.weights();
    let mut c = [0.0; 3];
    for (wk, ck) in w.iter().zip(&samples.color) {
        for ch in 0..3 {
            c[ch] += wk * ck[ch];
        }
    }
    for ch in 0..3 {
        c[ch] += leftover * background[ch];
    }
    c
}

/// Expected termination distance and accumulated opacity. Depth is only
/// meaningful when `acc ≥ MIN_DEPTH_CONFIDENCE`.
pub fn composite_depth(samples: &RaySamples) -> (f64, f64) {
    let (w, _) = samples.weights();
    let depth = w.iter().zip(&samples.t).map(|(w, t)| w * t).sum();
    (depth, w.iter().sum())
}

/// Ray marching settings shared by rendering and training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub near: f64,
    pub far: f64,
    pub samples: usize,
    pub background: [f64; 3],
    /// Jitter samples within their strata; otherwise sample bin midpoints.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            near: 0.5,
            far: 8.0,
            samples: 128,
            background: [0.0; 3],
            jitter: true,
            seed: 0,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.near < self.far) || self.near < 0.0 || self.samples < 2 {
            return Err(Error::Config(format!(
                "render options need 0 ≤ near < far and ≥ 2 samples (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Stratified sample distances for the ray with id `ray_id`.
    pub fn sample_distances(&self, ray_id: u64) -> Vec<f64> {
        let step = (self.far - self.near) / self.samples as f64;
        if self.jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(ray_id);
            (0..self.samples)
                .map(|k| self.near + (k as f64 + rng.gen::<f64>()) * step)
                .collect()
        } else {
            (0..self.samples)
                .map(|k| self.near + (k as f64 + 0.5) * step)
                .collect()
        }
    }
}

/// Color, depth and opacity images at one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: Image,
    pub depth: ScalarMap,
    pub acc: ScalarMap,
}

impl RenderedView {
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<PixelResult>) -> Self {
        let mut rgb = Vec::with_capacity(pixels.len());
        let mut depth = Vec::with_capacity(pixels.len());
        let mut acc = Vec::with_capacity(pixels.len());
        for p in pixels {
            rgb.push(p.color);
            depth.push(p.depth);
            acc.push(p.acc);
        }
        Self {
            rgb: Image::from_pixels(width, height, rgb).expect("pixel count matches"),
            depth: ScalarMap::from_values(width, height, depth).expect("pixel count matches"),
            acc: ScalarMap::from_values(width, height, acc).expect("pixel count matches"),
        }
    }

    /// Pixels whose depth is confident enough for reprojection.
    pub fn depth_validity(&self) -> Mask {
        let flags = self.acc.values().iter().map(|&a| a >= MIN_DEPTH_CONFIDENCE).collect();
        Mask::from_flags(self.acc.width(), self.acc.height(), flags).expect("same dims")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub acc: f64,
}

/// Per-sample record kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GridSample {
    pub t: f64,
    pub delta: f64,
    pub corners: Corners,
    pub density_raw: f64,
    pub sigma: f64,
    pub color: [f64; 3],
}

/// Forward trace of a grid ray; only samples inside the grid are kept since
/// samples outside carry zero density.
#[derive(Clone, Debug)]
pub(crate) struct GridTrace {
    pub samples: Vec<GridSample>,
    pub pixel: PixelResult,
    pub leftover: f64,
}

pub(crate) fn trace_grid_ray(grid: &RadianceGrid, ray: &Ray, opts: &RenderOptions, ray_id: u64) -> GridTrace {
    let ts = opts.sample_distances(ray_id);
    let mut samples = Vec::new();
    if let Some((t0, t1)) = grid.bbox().ray_interval(&ray.origin, ray.direction()) {
        for (k, &t) in ts.iter().enumerate() {
            if t < t0 || t > t1 {
                continue;
            }
            let next = ts.get(k + 1).copied().unwrap_or(opts.far);
            if let Some(corners) = grid.corners(&ray.at(t)) {
                let (d, c) = grid.raw_at(&corners);
                samples.push(GridSample {
                    t,
                    delta: next - t,
                    corners,
                    density_raw: d,
                    sigma: softplus(d),
                    color: [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])],
                });
            }
        }
    }
    let mut optical = 0.0_f64;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut acc = 0.0;
    for s in &samples {
        let tau = s.sigma * s.delta;
        let w = (-optical).exp() * alpha(tau);
        for ch in 0..3 {
            color[ch] += w * s.color[ch];
        }
        depth += w * s.t;
        acc += w;
        optical += tau;
    }
    let leftover = (-optical).exp();
    for ch in 0..3 {
        color[ch] += leftover * opts.background[ch];
    }
    GridTrace {
        samples,
        pixel: PixelResult { color, depth, acc },
        leftover,
    }
}

/// Back-propagates `dL/dC` through one traced ray, appending
/// `(voxel, dL/d density_raw)` and `(voxel * 3 + ch, dL/d color_raw)` pairs.
pub(crate) fn backward_grid_ray(
    trace: &GridTrace,
    grad_color: [f64; 3],
    background: [f64; 3],
    density_grads: &mut Vec<(usize, f64)>,
    color_grads: &mut Vec<(usize, f64)>,
) {
    // Suffix S_k = Σ_{j>k} w_j c_j + T_{K+1}·bg, swept back to front.
    let n = trace.samples.len();
    let mut trans = Vec::with_capacity(n + 1);
    let mut optical = 0.0_f64;
    for s in &trace.samples {
        trans.push((-optical).exp());
        optical += s.sigma * s.delta;
    }
    trans.push(trace.leftover);
    let mut suffix = [
        trace.leftover * background[0],
        trace.leftover * background[1],
        trace.leftover * background[2],
    ];
    for k in (0..n).rev() {
        let s = &trace.samples[k];
        let w = trans[k] - trans[k + 1];
        let gc = dot(&grad_color, &s.color);
        let gs = dot(&grad_color, &suffix);
        let d_sigma = s.delta * (trans[k + 1] * gc - gs);
        let d_density_raw = d_sigma * sigmoid(s.density_raw);
        let mut d_color_raw = [0.0; 3];
        for ch in 0..3 {
            d_color_raw[ch] = w * grad_color[ch] * s.color[ch] * (1.0 - s.color[ch]);
            suffix[ch] += w * s.color[ch];
        }
        for &(idx, cw) in &s.corners {
            if cw == 0.0 {
                continue;
            }
            density_grads.push((idx, cw * d_density_raw));
            for ch in 0..3 {
                color_grads.push((3 * idx + ch, cw * d_color_raw[ch]));
            }
        }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Renders a full view of the grid. Ray ids are pixel indices, so the result
/// is independent of how rows are scheduled across threads.
pub fn render_view(grid: &RadianceGrid, camera: &Camera, opts: &RenderOptions) -> RenderedView {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let pixels: Vec<PixelResult> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = camera.pixel_ray(i % w, i / w);
            trace_grid_ray(grid, &ray, opts, i as u64).pixel
        })
        .collect();
    RenderedView::from_pixels(w, h, pixels)
}
