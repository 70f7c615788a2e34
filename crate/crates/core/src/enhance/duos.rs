//! Training records for an enhancer: pairs of a good and a poor
//! reconstruction of the same view, with the poor one's depth and
//! uncertainty.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::consistency::uncertainty_for_view;
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::geometry::Camera;
use crate::harness::dataset::encode_depth;
use crate::image::{Image, Mask, ScalarMap};
use crate::optim::{train, Representation, TrainConfig, View};
use crate::volren::RenderOptions;

pub const DEFAULT_NOISE_STD: f64 = 0.3;
/// Share of the input views the coarse reconstruction sees.
pub const DEFAULT_SUBSET_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Quartet {
    pub id: usize,
    pub fine: Image,
    pub coarse: Image,
    pub depth: ScalarMap,
    pub depth_valid: Mask,
    /// Absent for noise-augmented pairs.
    pub uncertainty: Option<ScalarMap>,
}

/// Adds independent Gaussian noise to every channel and clamps to `[0, 1]`.
pub fn corrupt_image(image: &Image, noise_std: f64, seed: u64) -> Image {
    if noise_std <= 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, noise_std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    image.map(|p| p.map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)))
}

/// Replaces the coarse image with a noisy copy of the fine one.
pub fn augment_with_noise(q: &Quartet, noise_std: f64, seed: u64) -> Quartet {
    Quartet {
        coarse: corrupt_image(&q.fine, noise_std, seed),
        uncertainty: None,
        ..q.clone()
    }
}

fn subset_size(fraction: f64, w: usize) -> usize {
    ((fraction * w as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Trains a fine reconstruction on all `views` and a coarse one on
/// `⌈fraction·W⌉` evenly spaced views, then renders both at `cameras`.
pub fn make_duos(
    views: &[View],
    bbox: &Aabb,
    cameras: &[Camera],
    fraction: f64,
    fine_cfg: &TrainConfig,
    coarse_cfg: &TrainConfig,
) -> Result<Vec<Quartet>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subset fraction {fraction} outside (0, 1]")));
    }
    let w = views.len();
    let n = subset_size(fraction, w);
    if n < 2 {
        return Err(Error::Data(format!(
            "{w} views with fraction {fraction} leave {n} for the coarse model; need at least 2"
        )));
    }
    let subset: Vec<View> = (0..n).map(|i| views[i * w / n].clone()).collect();
    let (fine, _) = train(Representation::init(fine_cfg, bbox)?, views, fine_cfg)?;
    let (coarse, _) = train(Representation::init(coarse_cfg, bbox)?, &subset, coarse_cfg)?;
    let fine_opts = RenderOptions {
        jitter: false,
        ..fine_cfg.render
    };
    let coarse_opts = RenderOptions {
        jitter: false,
        ..coarse_cfg.render
    };
    cameras
        .iter()
        .enumerate()
        .map(|(id, cam)| {
            let fine_view = fine.render(cam, &fine_opts);
            let (coarse_view, u) = uncertainty_for_view(&coarse, &subset, cam, &coarse_opts)?;
            Ok(Quartet {
                id,
                fine: fine_view.rgb,
                depth_valid: coarse_view.depth_validity(),
                coarse: coarse_view.rgb,
                depth: coarse_view.depth,
                uncertainty: Some(u.values),
            })
        })
        .collect()
}

/// Writes `quartets/<id>/{fine.png,coarse.png,depth.pfm,uncertainty.pfm}`
/// under `root`.
pub fn write_quartets(root: &Path, quartets: &[Quartet]) -> Result<()> {
    for q in quartets {
        let dir = root.join("quartets").join(format!("{:04}", q.id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        q.fine.write_png(&dir.join("fine.png"))?;
        q.coarse.write_png(&dir.join("coarse.png"))?;
        encode_depth(&q.depth, &q.depth_valid).write_pfm(&dir.join("depth.pfm"))?;
        if let Some(u) = &q.uncertainty {
            u.write_pfm(&dir.join("uncertainty.pfm"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_identity() {
        let img = Image::from_fn(6, 5, |x, y| [x as f64 / 6.0, y as f64 / 5.0, 0.5]);
        assert_eq!(corrupt_image(&img, 0.0, 1), img);
    }

    #[test]
    fn noise_is_seeded() {
        let img = Image::new(8, 8, [0.5; 3]);
        assert_eq!(corrupt_image(&img, 0.3, 4), corrupt_image(&img, 0.3, 4));
        assert_ne!(corrupt_image(&img, 0.3, 4), corrupt_image(&img, 0.3, 5));
    }

    #[test]
    fn noise_std_matches_on_interior_values() {
        // Clamping only touches draws beyond ±0.5 from mid-gray; estimate the
        // std from the interior window [-0.45, 0.45] against the truncated
        // normal's analytic second moment.
        let img = Image::new(200, 200, [0.5; 3]);
        let out = corrupt_image(&img, DEFAULT_NOISE_STD, 9);
        let s = DEFAULT_NOISE_STD;
        let a = 0.45 / s;
        for c in 0..3 {
            let d: Vec<f64> = out.pixels().iter().map(|p| p[c] - 0.5).filter(|v| v.abs() < 0.45).collect();
            let var = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
            let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mass = erf(a / std::f64::consts::SQRT_2);
            let truncated_var = s * s * (1.0 - 2.0 * a * phi / mass);
            let est = s * (var / truncated_var).sqrt();
            assert!((est - s).abs() < 0.05 * s, "channel {c}: {est}");
        }
    }

    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592)
                * t
                * (-x * x).exp();
        y.copysign(x)
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(subset_size(0.2, 10), 2);
        assert_eq!(subset_size(0.2, 5), 1);
        assert_eq!(subset_size(1.0, 7), 7);
        assert_eq!(subset_size(0.7, 10), 7);
    }
}
