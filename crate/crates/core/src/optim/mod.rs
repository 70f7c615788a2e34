//! Photometric loss, analytic gradients, Adam updates and the training loop
//! shared by both scene representations.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Aabb, RadianceGrid};
use crate::geometry::Camera;
use crate::gsplat::backward::{backward_view, forward_pixels, PixelGrad};
use crate::gsplat::{prepare_splats, splat_render, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::image::Image;
use crate::volren::{backward_grid_ray, render_view, trace_grid_ray, RenderOptions, RenderedView};

/// Mean over the batch of the squared RGB error `‖Ĉ − C‖²`.
pub fn photometric_loss(rendered: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if rendered.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} rendered colors vs {} targets",
            rendered.len(),
            target.len()
        )));
    }
    if rendered.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| (0..3).map(|c| (r[c] - t[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / rendered.len() as f64)
}

/// PSNR implied by a mean squared RGB error (per-channel mean is `loss / 3`).
pub fn loss_to_psnr(loss: f64) -> f64 {
    crate::harness::metrics::mse_to_psnr(loss / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationKind {
    Grid,
    Gaussians,
}

impl std::str::FromStr for RepresentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "gaussians" | "gaussian" => Ok(Self::Gaussians),
            other => Err(Error::Config(format!("unknown representation `{other}`"))),
        }
    }
}

impl std::fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Grid => "grid",
            Self::Gaussians => "gaussians",
        })
    }
}

/// A trainable scene.
#[derive(Clone, Debug, PartialEq)]
pub enum Representation {
    Grid(RadianceGrid),
    Gaussians(GaussianCloud),
}

impl Representation {
    /// Fresh representation of the configured kind covering `bbox`.
    pub fn init(cfg: &TrainConfig, bbox: &Aabb) -> Result<Self> {
        match cfg.representation {
            RepresentationKind::Grid => {
                let n = cfg.grid_resolution;
                Ok(Self::Grid(RadianceGrid::init([n, n, n], *bbox, cfg.seed)?))
            }
            RepresentationKind::Gaussians => {
                Ok(Self::Gaussians(GaussianCloud::random(cfg.gaussian_count, bbox, cfg.seed)?))
            }
        }
    }

    pub fn kind(&self) -> RepresentationKind {
        match self {
            Self::Grid(_) => RepresentationKind::Grid,
            Self::Gaussians(_) => RepresentationKind::Gaussians,
        }
    }

    pub fn render(&self, camera: &Camera, opts: &RenderOptions) -> RenderedView {
        match self {
            Self::Grid(g) => render_view(g, camera, opts),
            Self::Gaussians(c) => splat_render(c, camera, opts.background),
        }
    }

    /// Checkpoint in the representation's binary format.
    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::Grid(g) => g.save(path),
            Self::Gaussians(c) => c.save(path),
        }
    }

    /// Loads either checkpoint format, dispatching on the magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        match bytes.get(..4) {
            Some(b"RGRD") => Ok(Self::Grid(RadianceGrid::read_checkpoint(bytes.as_slice())?)),
            Some(b"GCLD") => Ok(Self::Gaussians(GaussianCloud::read_checkpoint(bytes.as_slice())?)),
            _ => Err(Error::Data(format!("{}: unknown checkpoint format", path.display()))),
        }
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        match self {
            Self::Grid(g) => g.write_checkpoint(&mut buf),
            Self::Gaussians(c) => c.write_checkpoint(&mut buf),
        }
        .expect("writing to memory");
        buf
    }

    /// Batch loss and its gradient with respect to every raw parameter,
    /// accumulated into `grads` (which must come from [`Gradients::for_representation`]).
    pub fn loss_and_gradients(
        &self,
        views: &[View],
        batch: &[PixelSample],
        opts: &RenderOptions,
        grads: &mut Gradients,
    ) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let scale = 2.0 / batch.len() as f64;
        match self {
            Self::Grid(grid) => {
                const CHUNK: usize = 64;
                let parts: Vec<(f64, Vec<(usize, f64)>, Vec<(usize, f64)>)> = batch
                    .par_chunks(CHUNK)
                    .enumerate()
                    .map(|(ci, chunk)| {
                        let mut loss = 0.0;
                        let mut dg = Vec::new();
                        let mut cg = Vec::new();
                        for (k, s) in chunk.iter().enumerate() {
                            let view = &views[s.view];
                            let ray = view.camera.pixel_ray(s.x, s.y);
                            let trace = trace_grid_ray(grid, &ray, opts, (ci * CHUNK + k) as u64);
                            let target = view.image.get(s.x, s.y);
                            let mut g = [0.0; 3];
                            for c in 0..3 {
                                let r = trace.pixel.color[c] - target[c];
                                loss += r * r;
                                g[c] = scale * r;
                            }
                            backward_grid_ray(&trace, g, opts.background, &mut dg, &mut cg);
                        }
                        (loss, dg, cg)
                    })
                    .collect();
                let mut loss = 0.0;
                for (l, dg, cg) in parts {
                    loss += l;
                    for (i, v) in dg {
                        grads.blocks[0].add(i, v);
                    }
                    for (i, v) in cg {
                        grads.blocks[1].add(i, v);
                    }
                }
                loss / batch.len() as f64
            }
            Self::Gaussians(cloud) => {
                let groups = group_by_view(batch);
                let parts: Vec<(f64, Vec<f64>)> = groups
                    .par_iter()
                    .map(|(vi, samples)| {
                        let view = &views[*vi];
                        let splats = prepare_splats(cloud, &view.camera);
                        let coords: Vec<(f64, f64)> =
                            samples.iter().map(|s| (s.x as f64 + 0.5, s.y as f64 + 0.5)).collect();
                        let colors = forward_pixels(&splats, &coords, opts.background);
                        let mut loss = 0.0;
                        let pix: Vec<PixelGrad> = samples
                            .iter()
                            .zip(colors)
                            .zip(&coords)
                            .map(|((s, col), &(u, v))| {
                                let target = view.image.get(s.x, s.y);
                                let mut g = [0.0; 3];
                                for c in 0..3 {
                                    let r = col[c] - target[c];
                                    loss += r * r;
                                    g[c] = scale * r;
                                }
                                PixelGrad { u, v, grad: g }
                            })
                            .collect();
                        let mut flat = vec![0.0; cloud.len() * PARAMS_PER_GAUSSIAN];
                        backward_view(
                            cloud,
                            &view.camera.intrinsics,
                            view.camera.pose.rotation(),
                            &splats,
                            &pix,
                            opts.background,
                            &mut flat,
                        );
                        (loss, flat)
                    })
                    .collect();
                let mut loss = 0.0;
                for (l, flat) in parts {
                    loss += l;
                    scatter_cloud_grads(&flat, grads);
                }
                loss / batch.len() as f64
            }
        }
    }

    /// Batch loss only.
    pub fn loss(&self, views: &[View], batch: &[PixelSample], opts: &RenderOptions) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let (rendered, targets): (Vec<[f64; 3]>, Vec<[f64; 3]>) = match self {
            Self::Grid(grid) => batch
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let view = &views[s.view];
                    let ray = view.camera.pixel_ray(s.x, s.y);
                    (trace_grid_ray(grid, &ray, opts, i as u64).pixel.color, view.image.get(s.x, s.y))
                })
                .unzip(),
            Self::Gaussians(cloud) => group_by_view(batch)
                .into_iter()
                .flat_map(|(vi, samples)| {
                    let view = &views[vi];
                    let splats = prepare_splats(cloud, &view.camera);
                    let coords: Vec<(f64, f64)> =
                        samples.iter().map(|s| (s.x as f64 + 0.5, s.y as f64 + 0.5)).collect();
                    let colors = forward_pixels(&splats, &coords, opts.background);
                    samples
                        .iter()
                        .zip(colors)
                        .map(|(s, c)| (c, view.image.get(s.x, s.y)))
                        .collect::<Vec<_>>()
                })
                .unzip(),
        };
        photometric_loss(&rendered, &targets).expect("equal lengths")
    }
}

/// Stable grouping of batch entries by view, in order of first appearance.
fn group_by_view(batch: &[PixelSample]) -> Vec<(usize, Vec<PixelSample>)> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: std::collections::HashMap<usize, Vec<PixelSample>> = Default::default();
    for s in batch {
        groups
            .entry(s.view)
            .or_insert_with(|| {
                order.push(s.view);
                Vec::new()
            })
            .push(*s);
    }
    order
        .into_iter()
        .map(|v| {
            let g = groups.remove(&v).expect("present");
            (v, g)
        })
        .collect()
}

/// Gaussian gradient block layout: field name, components per Gaussian and
/// offset into the 14-wide raw parameter record.
pub const GAUSSIAN_BLOCKS: [(&str, usize, usize); 5] = [
    ("mean", 3, 0),
    ("log_scale", 3, 3),
    ("rotation", 4, 6),
    ("opacity", 1, 10),
    ("color", 3, 11),
];

fn scatter_cloud_grads(flat: &[f64], grads: &mut Gradients) {
    for (g, rec) in flat.chunks_exact(PARAMS_PER_GAUSSIAN).enumerate() {
        for (b, &(_, width, offset)) in GAUSSIAN_BLOCKS.iter().enumerate() {
            for k in 0..width {
                grads.blocks[b].add(g * width + k, rec[offset + k]);
            }
        }
    }
}

/// A calibrated training image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

/// One pixel of one view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelSample {
    pub view: usize,
    pub x: usize,
    pub y: usize,
}

/// Draws `count` pixels: each draw picks a view uniformly from the whole
/// pool, then a pixel uniformly within it.
pub fn sample_pixels(views: &[View], count: usize, rng: &mut impl Rng) -> Vec<PixelSample> {
    (0..count)
        .map(|_| {
            let view = rng.gen_range(0..views.len());
            let (w, h) = views[view].image.dims();
            PixelSample {
                view,
                x: rng.gen_range(0..w),
                y: rng.gen_range(0..h),
            }
        })
        .collect()
}

/// Accumulated gradient for one contiguous parameter block.
#[derive(Clone, Debug)]
pub struct GradBlock {
    pub name: &'static str,
    values: Vec<f64>,
    touched_flags: Vec<bool>,
    touched: Vec<usize>,
}

impl GradBlock {
    fn new(name: &'static str, len: usize) -> Self {
        Self {
            name,
            values: vec![0.0; len],
            touched_flags: vec![false; len],
            touched: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, v: f64) {
        if !self.touched_flags[i] {
            self.touched_flags[i] = true;
            self.touched.push(i);
        }
        self.values[i] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices that received a contribution since the last clear, in first-touch order.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            self.values[i] = 0.0;
            self.touched_flags[i] = false;
        }
        self.touched.clear();
    }
}

/// Gradients for all parameter blocks of a representation.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub blocks: Vec<GradBlock>,
}

impl Gradients {
    pub fn for_representation(rep: &Representation) -> Self {
        let blocks = match rep {
            Representation::Grid(g) => vec![
                GradBlock::new("density", g.voxel_count()),
                GradBlock::new("color", 3 * g.voxel_count()),
            ],
            Representation::Gaussians(c) => GAUSSIAN_BLOCKS
                .iter()
                .map(|&(name, width, _)| GradBlock::new(name, width * c.len()))
                .collect(),
        };
        Self { blocks }
    }

    pub fn clear(&mut self) {
        self.blocks.iter_mut().for_each(GradBlock::clear);
    }

    pub fn block(&self, name: &str) -> Option<&GradBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for one parameter block. Only touched entries are updated
/// (lazy/sparse Adam); bias correction uses the global step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamBlock {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    blocks: Vec<AdamBlock>,
    step: u64,
}

impl AdamState {
    pub fn new(grads: &Gradients) -> Self {
        Self {
            blocks: grads
                .blocks
                .iter()
                .map(|b| AdamBlock {
                    m: vec![0.0; b.values.len()],
                    v: vec![0.0; b.values.len()],
                })
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Per-block learning rates for a representation.
pub fn block_learning_rates(rep: &Representation, cfg: &TrainConfig) -> Vec<f64> {
    match rep {
        Representation::Grid(_) => vec![cfg.learning_rate; 2],
        Representation::Gaussians(_) => {
            let s = &cfg.gaussian_lr_scale;
            [s.mean, s.log_scale, s.rotation, s.opacity, s.color]
                .iter()
                .map(|m| m * cfg.learning_rate)
                .collect()
        }
    }
}

/// One Adam update over the touched entries of every block. Fails without
/// modifying anything if a touched gradient is not finite.
pub fn step(
    rep: &mut Representation,
    grads: &Gradients,
    state: &mut AdamState,
    learning_rates: &[f64],
) -> Result<()> {
    for b in &grads.blocks {
        if b.touched.iter().any(|&i| !b.values[i].is_finite()) {
            return Err(Error::NonFinite { block: b.name.to_string() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let update = |params: &mut [f64], g: &GradBlock, s: &mut AdamBlock, lr: f64| {
        for &i in &g.touched {
            let gi = g.values[i];
            s.m[i] = ADAM_BETA1 * s.m[i] + (1.0 - ADAM_BETA1) * gi;
            s.v[i] = ADAM_BETA2 * s.v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = s.m[i] / bc1;
            let v_hat = s.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    };
    match rep {
        Representation::Grid(grid) => {
            update(grid.density_raw_mut(), &grads.blocks[0], &mut state.blocks[0], learning_rates[0]);
            update(grid.color_raw_mut(), &grads.blocks[1], &mut state.blocks[1], learning_rates[1]);
        }
        Representation::Gaussians(cloud) => {
            let mut flat = cloud.to_params();
            let n = cloud.len();
            for (b, &(_, width, offset)) in GAUSSIAN_BLOCKS.iter().enumerate() {
                let mut block: Vec<f64> = (0..n * width)
                    .map(|j| flat[(j / width) * PARAMS_PER_GAUSSIAN + offset + j % width])
                    .collect();
                update(&mut block, &grads.blocks[b], &mut state.blocks[b], learning_rates[b]);
                for (j, v) in block.into_iter().enumerate() {
                    flat[(j / width) * PARAMS_PER_GAUSSIAN + offset + j % width] = v;
                }
            }
            cloud.set_params(&flat);
            cloud.renormalize();
        }
    }
    Ok(())
}

/// Multipliers applied to the base learning rate per Gaussian field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianLrScale {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for GaussianLrScale {
    fn default() -> Self {
        Self {
            mean: 1.0,
            log_scale: 2.0,
            rotation: 2.0,
            opacity: 10.0,
            color: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub representation: RepresentationKind,
    /// Grid: rate for all raw values. Gaussians: rate for means, scaled per
    /// field by `gaussian_lr_scale`.
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub render: RenderOptions,
    pub grid_resolution: usize,
    pub gaussian_count: usize,
    pub gaussian_lr_scale: GaussianLrScale,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn grid() -> Self {
        Self {
            representation: RepresentationKind::Grid,
            learning_rate: 0.05,
            iterations: 1000,
            batch_size: 1024,
            seed: 0,
            render: RenderOptions::default(),
            grid_resolution: 64,
            gaussian_count: 1000,
            gaussian_lr_scale: GaussianLrScale::default(),
            log_every: 100,
        }
    }

    pub fn gaussians() -> Self {
        Self {
            representation: RepresentationKind::Gaussians,
            learning_rate: 0.005,
            ..Self::grid()
        }
    }

    pub fn for_kind(kind: RepresentationKind) -> Self {
        match kind {
            RepresentationKind::Grid => Self::grid(),
            RepresentationKind::Gaussians => Self::gaussians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("learning rate must be > 0 and counts ≥ 1".into()));
        }
        self.render.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub psnr_train: f64,
}

/// Loss trace as CSV (`iteration,loss,psnr_train`).
pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss,psnr_train\n");
    for r in trace {
        s.push_str(&format!("{},{:.8},{:.4}\n", r.iteration, r.loss, r.psnr_train));
    }
    s
}

/// Stateful optimizer: representation, Adam moments, batch RNG and the
/// running iteration count, so training can resume across rounds.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub representation: Representation,
    pub config: TrainConfig,
    grads: Gradients,
    adam: AdamState,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(representation: Representation, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let grads = Gradients::for_representation(&representation);
        let adam = AdamState::new(&grads);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            representation,
            config,
            grads,
            adam,
            rng,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs `iterations` steps on pixels drawn from all `views`.
    pub fn run(&mut self, views: &[View], iterations: usize) -> Result<Vec<LossRecord>> {
        if iterations > 0 && views.is_empty() {
            return Err(Error::Data("cannot train on an empty view set".into()));
        }
        let lrs = block_learning_rates(&self.representation, &self.config);
        let mut trace = Vec::new();
        let mut window = 0.0;
        let mut window_len = 0usize;
        for _ in 0..iterations {
            let batch = sample_pixels(views, self.config.batch_size, &mut self.rng);
            let opts = RenderOptions {
                seed: self.rng.gen(),
                ..self.config.render
            };
            self.grads.clear();
            let loss = self
                .representation
                .loss_and_gradients(views, &batch, &opts, &mut self.grads);
            step(&mut self.representation, &self.grads, &mut self.adam, &lrs)?;
            self.iteration += 1;
            window += loss;
            window_len += 1;
            if self.iteration % self.config.log_every == 0 {
                let mean = window / window_len as f64;
                trace.push(LossRecord {
                    iteration: self.iteration,
                    loss: mean,
                    psnr_train: loss_to_psnr(mean),
                });
                window = 0.0;
                window_len = 0;
            }
        }
        Ok(trace)
    }

    pub fn into_representation(self) -> Representation {
        self.representation
    }
}

/// Trains from the given state for `config.iterations` steps.
pub fn train(representation: Representation, views: &[View], config: &TrainConfig) -> Result<(Representation, Vec<LossRecord>)> {
    if views.is_empty() {
        return Err(Error::Data("cannot train on an empty view set".into()));
    }
    let mut trainer = Trainer::new(representation, config.clone())?;
    let trace = trainer.run(views, config.iterations)?;
    Ok((trainer.into_representation(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{inverse_softplus, sigmoid, softplus};
    use crate::geometry::{Intrinsics, Pose};
    use nalgebra::Vector3;

    #[test]
    fn loss_examples() {
        let a = vec![[0.1, 0.2, 0.3]; 4];
        assert_eq!(photometric_loss(&a, &a).unwrap(), 0.0);
        let black = vec![[0.0; 3]; 7];
        let gray = vec![[0.5; 3]; 7];
        assert!((photometric_loss(&black, &gray).unwrap() - 0.75).abs() < 1e-15);
        assert!(photometric_loss(&black, &gray[..3]).is_err());
        // Independent scalar evaluation.
        let r = [[0.3, 0.9, 0.1], [0.0, 0.5, 1.0]];
        let t = [[0.2, 0.4, 0.4], [1.0, 0.5, 0.0]];
        let manual = ((0.01 + 0.25 + 0.09) + (1.0 + 0.0 + 1.0)) / 2.0;
        assert!((photometric_loss(&r, &t).unwrap() - manual).abs() < 1e-15);
    }

    fn one_voxel_scene() -> (Representation, Vec<View>) {
        // 2³ grid whose raw values are all equal: every sample sees the
        // same density and color regardless of interpolation weights.
        let grid = RadianceGrid::uniform([2, 2, 2], Aabb::cube(0.5), inverse_softplus(0.7), [0.4, -0.2, 1.1]).unwrap();
        let intr = Intrinsics::new(10.0, 10.0, 0.5, 0.5, 1, 1).unwrap();
        let pose = Pose::look_at(Vector3::new(0.0, 0.0, -2.0), Vector3::zeros(), Vector3::y()).unwrap();
        let view = View {
            camera: Camera::new(intr, pose),
            image: Image::new(1, 1, [0.9, 0.1, 0.3]),
        };
        (Representation::Grid(grid), vec![view])
    }

    #[test]
    fn single_sample_chain_rule() {
        let (rep, views) = one_voxel_scene();
        // The box spans t ∈ [1.5, 2.5] on this ray; both bin midpoints
        // (2.075, 2.425) fall inside it.
        let opts = RenderOptions {
            near: 1.9,
            far: 2.6,
            samples: 2,
            background: [0.0; 3],
            jitter: false,
            seed: 0,
        };
        let batch = vec![PixelSample { view: 0, x: 0, y: 0 }];
        let mut grads = Gradients::for_representation(&rep);
        let loss = rep.loss_and_gradients(&views, &batch, &opts, &mut grads);

        let (raw_d, raw_c) = (inverse_softplus(0.7), [0.4, -0.2, 1.1]);
        let sigma = softplus(raw_d);
        let c = raw_c.map(sigmoid);
        let ts = [2.075, 2.425];
        let deltas = [ts[1] - ts[0], opts.far - ts[1]];
        let a1 = 1.0 - (-sigma * deltas[0]).exp();
        let a2 = 1.0 - (-sigma * deltas[1]).exp();
        let w1 = a1;
        let w2 = (1.0 - a1) * a2;
        let target = views[0].image.get(0, 0);
        let pred: Vec<f64> = (0..3).map(|k| (w1 + w2) * c[k]).collect();
        let expect_loss: f64 = (0..3).map(|k| (pred[k] - target[k]).powi(2)).sum();
        assert!((loss - expect_loss).abs() < 1e-12);
        // d pred / d sigma = c · d(w1 + w2)/dσ, with w1 + w2 = 1 − exp(−σ(δ1+δ2)).
        let total = deltas[0] + deltas[1];
        let dw_dsigma = total * (-sigma * total).exp();
        let dl_dsigma: f64 = (0..3).map(|k| 2.0 * (pred[k] - target[k]) * c[k] * dw_dsigma).sum();
        let dl_draw_d = dl_dsigma * sigmoid(raw_d);
        // All 8 voxels share the density through interpolation weights
        // summing to one per sample.
        let total_density_grad: f64 = grads.blocks[0].values().iter().sum();
        assert!((total_density_grad - dl_draw_d).abs() < 1e-12, "{total_density_grad} vs {dl_draw_d}");
        for k in 0..3 {
            let dl_draw_c = 2.0 * (pred[k] - target[k]) * (w1 + w2) * c[k] * (1.0 - c[k]);
            let sum: f64 = grads.blocks[1].values().iter().skip(k).step_by(3).sum();
            assert!((sum - dl_draw_c).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (rep, mut views) = one_voxel_scene();
        let opts = RenderOptions { near: 1.0, far: 3.0, samples: 16, jitter: false, ..Default::default() };
        let rendered = rep.render(&views[0].camera, &opts);
        views[0].image = rendered.rgb;
        let batch = vec![PixelSample { view: 0, x: 0, y: 0 }];
        let mut grads = Gradients::for_representation(&rep);
        let loss = rep.loss_and_gradients(&views, &batch, &opts, &mut grads);
        assert_eq!(loss, 0.0);
        assert!(grads.blocks.iter().all(|b| b.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adam_examples() {
        let (rep0, _) = one_voxel_scene();
        let mut rep = rep0.clone();
        let mut grads = Gradients::for_representation(&rep);
        let mut state = AdamState::new(&grads);
        // Zero gradients (even on touched entries) leave parameters unchanged.
        grads.blocks[0].add(3, 0.0);
        step(&mut rep, &grads, &mut state, &[0.1, 0.1]).unwrap();
        assert_eq!(rep, rep0);
        grads.clear();
        grads.blocks[0].add(3, 2.5);
        grads.blocks[1].add(5, -1.0);
        step(&mut rep, &grads, &mut state, &[0.1, 0.1]).unwrap();
        let (Representation::Grid(a), Representation::Grid(b)) = (&rep, &rep0) else { unreachable!() };
        assert!(a.density_raw()[3] < b.density_raw()[3]);
        assert!(a.color_raw()[5] > b.color_raw()[5]);
        grads.clear();
        grads.blocks[1].add(0, f64::NAN);
        let err = step(&mut rep, &grads, &mut state, &[0.1, 0.1]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref block } if block == "color"));
    }

    #[test]
    fn pool_sampling_is_proportional_to_counts() {
        let intr = Intrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let view = View {
            camera: Camera::new(intr, Pose::identity()),
            image: Image::new(4, 4, [0.0; 3]),
        };
        // Views 0..3 are "real", 3..10 "pseudo".
        let views = vec![view; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = sample_pixels(&views, 100_000, &mut rng);
        let real = draws.iter().filter(|s| s.view < 3).count() as f64 / 1e5;
        assert!((real - 0.3).abs() < 0.02 * 0.3 + 0.006, "real fraction {real}");
        assert!(((1.0 - real) - 0.7).abs() < 0.02 * 0.7);
    }

    #[test]
    fn zero_iterations_is_noop() {
        let (rep, views) = one_voxel_scene();
        let cfg = TrainConfig { iterations: 0, ..TrainConfig::grid() };
        let (out, trace) = train(rep.clone(), &views, &cfg).unwrap();
        assert_eq!(out, rep);
        assert!(trace.is_empty());
        assert!(train(rep, &[], &cfg).is_err());
    }

    #[test]
    fn representation_kind_parsing() {
        assert_eq!("grid".parse::<RepresentationKind>().unwrap(), RepresentationKind::Grid);
        assert_eq!("gaussians".parse::<RepresentationKind>().unwrap(), RepresentationKind::Gaussians);
        assert!("mlp".parse::<RepresentationKind>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn loss_is_non_negative_and_zero_only_on_agreement(
            a in proptest::collection::vec(proptest::array::uniform3(0.0f64..1.0), 1..30),
            i in 0usize..30,
            ch in 0usize..3,
            delta in 1e-6f64..0.5,
        ) {
            proptest::prop_assert_eq!(photometric_loss(&a, &a).unwrap(), 0.0);
            let mut b = a.clone();
            let i = i % a.len();
            b[i][ch] += delta;
            let l = photometric_loss(&a, &b).unwrap();
            proptest::prop_assert!(l > 0.0);
            proptest::prop_assert!((l - delta * delta / a.len() as f64).abs() < 1e-12);
        }
    }
}
