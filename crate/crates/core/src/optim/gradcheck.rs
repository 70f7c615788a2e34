//! Analytic-versus-finite-difference gradient verification.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, PixelSample, Representation, RepresentationKind, View, GAUSSIAN_BLOCKS};
use crate::field::{Aabb, RadianceGrid};
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::gsplat::{pixel_contributions, prepare_splats, Gaussian3D, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::image::Image;
use crate::volren::RenderOptions;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub representation: RepresentationKind,
    pub parameters: usize,
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero on both sides compare as equal.
    pub floor: f64,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn new(representation: RepresentationKind) -> Self {
        Self {
            representation,
            parameters: 120,
            step: 1e-4,
            floor: 1e-6,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Parameters passed over because the step crossed a threshold.
    pub skipped: usize,
    pub max_relative_error: f64,
    /// `(block, index, analytic, numeric)` of the worst parameter.
    pub worst: (String, usize, f64, f64),
}

/// Builds a small random problem for the representation, then compares
/// analytic gradients with central differences on randomly chosen raw
/// parameters.
pub fn grad_check(cfg: &GradCheckConfig) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rep, views, opts) = match cfg.representation {
        RepresentationKind::Grid => grid_problem(&mut rng),
        RepresentationKind::Gaussians => cloud_problem(&mut rng),
    };
    let batch: Vec<PixelSample> = views
        .iter()
        .enumerate()
        .flat_map(|(v, view)| {
            let (w, h) = view.image.dims();
            (0..w * h).map(move |i| PixelSample { view: v, x: i % w, y: i / w })
        })
        .collect();
    let mut grads = Gradients::for_representation(&rep);
    rep.loss_and_gradients(&views, &batch, &opts, &mut grads);

    // Candidate parameters: everything the batch touched.
    let mut candidates: Vec<(usize, usize)> = grads
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, block)| block.touched().iter().map(move |&i| (b, i)))
        .collect();
    candidates.sort_unstable();
    candidates.shuffle(&mut rng);

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_relative_error: 0.0,
        worst: (String::new(), 0, 0.0, 0.0),
    };
    let base = splat_signature(&rep, &views);
    for (b, i) in candidates {
        if report.checked == cfg.parameters {
            break;
        }
        let analytic = grads.blocks[b].values()[i];
        let mut plus = rep.clone();
        nudge(&mut plus, b, i, cfg.step);
        let mut minus = rep.clone();
        nudge(&mut minus, b, i, -cfg.step);
        if splat_signature(&plus, &views) != base || splat_signature(&minus, &views) != base {
            // The step moves a pixel across the skip or clamp threshold,
            // where the loss is not differentiable.
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.loss(&views, &batch, &opts) - minus.loss(&views, &batch, &opts)) / (2.0 * cfg.step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = (grads.blocks[b].name.to_string(), i, analytic, numeric);
        }
    }
    report
}

/// Per pixel, which splats contribute and whether they are clamped.
fn splat_signature(rep: &Representation, views: &[View]) -> Vec<(usize, bool)> {
    let Representation::Gaussians(cloud) = rep else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut scratch = Vec::new();
    for view in views {
        let splats = prepare_splats(cloud, &view.camera);
        let (w, h) = view.image.dims();
        for i in 0..w * h {
            pixel_contributions(&splats, (i % w) as f64 + 0.5, (i / w) as f64 + 0.5, &mut scratch);
            out.extend(scratch.iter().map(|c| (splats[c.slot].index, c.clamped)));
            out.push((usize::MAX, false));
        }
    }
    out
}

fn nudge(rep: &mut Representation, block: usize, index: usize, h: f64) {
    match rep {
        Representation::Grid(g) => {
            if block == 0 {
                g.density_raw_mut()[index] += h;
            } else {
                g.color_raw_mut()[index] += h;
            }
        }
        Representation::Gaussians(c) => {
            let (_, width, offset) = GAUSSIAN_BLOCKS[block];
            let mut flat = c.to_params();
            flat[(index / width) * PARAMS_PER_GAUSSIAN + offset + index % width] += h;
            c.set_params(&flat);
        }
    }
}

fn cameras(rng: &mut ChaCha8Rng, size: usize) -> Vec<Camera> {
    let intr = Intrinsics::from_fov(size, size, 45.0).expect("valid");
    (0..2)
        .map(|_| {
            let eye = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), -3.0);
            Camera::new(intr, Pose::look_at(eye, Vector3::zeros(), Vector3::y()).expect("valid"))
        })
        .collect()
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::from_fn(size, size, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn grid_problem(rng: &mut ChaCha8Rng) -> (Representation, Vec<View>, RenderOptions) {
    let mut grid = RadianceGrid::uniform([6, 6, 6], Aabb::cube(1.0), 0.0, [0.0; 3]).expect("valid");
    grid.density_raw_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.5));
    grid.color_raw_mut().iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    let views = cameras(rng, 8)
        .into_iter()
        .map(|camera| View { camera, image: random_image(rng, 8) })
        .collect();
    let opts = RenderOptions {
        near: 1.5,
        far: 4.5,
        samples: 24,
        background: [0.2, 0.1, 0.3],
        jitter: true,
        seed: rng.gen(),
    };
    (Representation::Grid(grid), views, opts)
}

fn cloud_problem(rng: &mut ChaCha8Rng) -> (Representation, Vec<View>, RenderOptions) {
    let gaussians = (0..12)
        .map(|_| {
            let mut q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            q.iter_mut().for_each(|v| *v /= n);
            Gaussian3D {
                mean: Vector3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)),
                log_scale: Vector3::new(rng.gen_range(-2.0..-1.0), rng.gen_range(-2.0..-1.0), rng.gen_range(-2.0..-1.0)),
                rotation: q,
                opacity_logit: rng.gen_range(-1.0..1.5),
                color: [rng.gen(), rng.gen(), rng.gen()],
            }
        })
        .collect();
    let cloud = GaussianCloud::new(gaussians).expect("valid");
    let views = cameras(rng, 12)
        .into_iter()
        .map(|camera| View { camera, image: random_image(rng, 12) })
        .collect();
    let opts = RenderOptions {
        background: [0.2, 0.1, 0.3],
        ..RenderOptions::default()
    };
    (Representation::Gaussians(cloud), views, opts)
}
