//! The densification loop: train, sample novel cameras, enhance their
//! renderings into pseudo-observations, keep the most plausible ones, and
//! train again on the grown pool.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::consistency::uncertainty_for_view;
use crate::enhance::{enhance, EnhanceRequest, Enhancer, FallbackPolicy};
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::harness::dataset::{Frame, Provenance, SceneDataset, Split};
use crate::harness::metrics::{psnr, ssim, ssim_terms};
use crate::image::Image;
use crate::optim::{LossRecord, Representation, TrainConfig, Trainer, View};
use crate::volren::RenderOptions;

/// Fraction of each axis' largest extent added around the camera box.
const BOX_INFLATION: f64 = 0.05;
/// Weights of the three finest MS-SSIM scales, renormalized to sum to one.
const MS_SSIM_WEIGHTS: [f64; 3] = [0.0448, 0.2856, 0.3001];
const COUNT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub rounds: usize,
    /// Target pool size as a multiple of the real view count.
    pub target_multiplier: f64,
    pub keep_fraction: f64,
    /// Seed of the novel-view sampler.
    pub seed: u64,
    /// Training settings; `iterations` is the budget of every round.
    pub train: TrainConfig,
    /// Budget of the initial fit on real views.
    pub initial_iterations: usize,
    pub fallback: FallbackPolicy,
    /// Enhancement requests in flight at once.
    pub max_in_flight: usize,
}

impl LoopConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            rounds: 5,
            target_multiplier: 10.0,
            keep_fraction: 0.8,
            seed: 0,
            initial_iterations: train.iterations,
            train,
            fallback: FallbackPolicy::Skip,
            max_in_flight: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.target_multiplier > 1.0) {
            return Err(Error::Config(format!("target multiplier {} must exceed 1", self.target_multiplier)));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!("keep fraction {} outside (0, 1]", self.keep_fraction)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Views sampled per round so that the kept ones reach the target.
    pub fn samples_per_round(&self, real_views: usize) -> usize {
        let per_round = real_views as f64 * (self.target_multiplier - 1.0) / self.rounds as f64;
        ((per_round / self.keep_fraction) - COUNT_EPS).ceil().max(1.0) as usize
    }

    /// Total iterations of a full run.
    pub fn total_iterations(&self) -> usize {
        self.initial_iterations + self.rounds * self.train.iterations
    }

    fn eval_options(&self) -> RenderOptions {
        RenderOptions {
            jitter: false,
            ..self.train.render
        }
    }
}

/// Number kept by the filter out of `n` candidates.
pub fn kept_count(n: usize, keep_fraction: f64) -> usize {
    ((keep_fraction * n as f64) - COUNT_EPS).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoObservation {
    pub view_id: u64,
    pub camera: Camera,
    pub image: Image,
    pub round: usize,
    /// Lower means closer to the real views.
    pub perceptual_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationPool {
    real: Vec<View>,
    pseudo: Vec<PseudoObservation>,
}

impl ObservationPool {
    pub fn new(real: Vec<View>) -> Self {
        Self { real, pseudo: Vec::new() }
    }

    pub fn real(&self) -> &[View] {
        &self.real
    }

    pub fn pseudo(&self) -> &[PseudoObservation] {
        &self.pseudo
    }

    pub fn len(&self) -> usize {
        self.real.len() + self.pseudo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends in ascending `view_id` order.
    pub fn extend(&mut self, mut kept: Vec<PseudoObservation>) {
        kept.sort_by_key(|p| p.view_id);
        self.pseudo.extend(kept);
    }

    /// Real views first, then pseudo-observations; all weigh the same.
    pub fn training_views(&self) -> Vec<View> {
        self.real
            .iter()
            .cloned()
            .chain(self.pseudo.iter().map(|p| View {
                camera: p.camera,
                image: p.image.clone(),
            }))
            .collect()
    }

    /// The pool as a dataset, pseudo frames tagged as such.
    pub fn to_dataset(&self, intrinsics: Intrinsics, bbox: Aabb) -> SceneDataset {
        let frame = |camera: &Camera, image: &Image, provenance| Frame {
            pose: camera.pose,
            image: image.clone(),
            depth: None,
            split: Split::Train,
            provenance,
        };
        let frames = self
            .real
            .iter()
            .map(|v| frame(&v.camera, &v.image, Provenance::Real))
            .chain(self.pseudo.iter().map(|p| frame(&p.camera, &p.image, Provenance::Pseudo)))
            .collect();
        SceneDataset {
            intrinsics,
            bbox,
            frames,
        }
    }
}

/// Point closest, in the least-squares sense, to all optical axes; falls
/// back to the centroid pushed along the mean viewing direction when the
/// axes are near parallel.
pub fn look_at_target(inputs: &[Pose]) -> Vector3<f64> {
    let n = inputs.len() as f64;
    let centroid = inputs.iter().map(|p| p.center()).sum::<Vector3<f64>>() / n;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for p in inputs {
        let d = p.forward();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * p.center();
    }
    let min_eig = a.symmetric_eigenvalues().min();
    if min_eig > 1e-3 * n {
        if let Some(x) = a.lu().solve(&b) {
            return x;
        }
    }
    let mean_fwd = inputs.iter().map(|p| p.forward()).sum::<Vector3<f64>>() / n;
    let spread = inputs.iter().map(|p| (p.center() - centroid).norm()).fold(0.0, f64::max);
    centroid + mean_fwd.normalize() * spread.max(1.0)
}

/// Camera poses with centers uniform in the inflated bounding box of the
/// input camera centers, each looking at [`look_at_target`] with world +y
/// as up. Centers closer to the target than half the nearest input camera
/// are redrawn.
pub fn sample_novel_views(inputs: &[Pose], count: usize, seed: u64) -> Result<Vec<Pose>> {
    if inputs.len() < 2 {
        return Err(Error::Data(format!("need at least 2 input poses, got {}", inputs.len())));
    }
    let centers: Vec<Vector3<f64>> = inputs.iter().map(|p| p.center()).collect();
    let mut lo = centers[0];
    let mut hi = centers[0];
    for c in &centers {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let largest = (hi - lo).max();
    if largest < 1e-9 {
        return Err(Error::Data("input cameras coincide; no box to sample in".into()));
    }
    let pad = BOX_INFLATION * largest;
    lo.add_scalar_mut(-pad);
    hi.add_scalar_mut(pad);
    let target = look_at_target(inputs);
    let min_dist = 0.5 * centers.iter().map(|c| (c - target).norm()).fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = Vec::with_capacity(count);
    while poses.len() < count {
        let mut eye = Vector3::zeros();
        for _ in 0..100 {
            eye = Vector3::from_fn(|i, _| rng.gen_range(lo[i]..=hi[i]));
            if (eye - target).norm() >= min_dist {
                break;
            }
        }
        let pose = Pose::look_at(eye, target, Vector3::y()).or_else(|_| Pose::look_at(eye, target, Vector3::z()))?;
        poses.push(pose);
    }
    Ok(poses)
}

fn downsample(img: &Image) -> Image {
    let (w, h) = (img.width() / 2, img.height() / 2);
    Image::from_fn(w, h, |x, y| {
        let mut s = [0.0; 3];
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let p = img.get(2 * x + dx, 2 * y + dy);
            for c in 0..3 {
                s[c] += 0.25 * p[c];
            }
        }
        s
    })
}

/// Three-scale MS-SSIM with 2x2 average pooling between scales; negative
/// factors are clamped to zero.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    let wsum: f64 = MS_SSIM_WEIGHTS.iter().sum();
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut value = 1.0;
    for (j, w) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_terms(&a, &b)?;
        let factor = if j + 1 == MS_SSIM_WEIGHTS.len() { s } else { cs };
        value *= factor.max(0.0).powf(w / wsum);
        if j + 1 < MS_SSIM_WEIGHTS.len() {
            a = downsample(&a);
            b = downsample(&b);
        }
    }
    Ok(value)
}

/// Smallest `1 - MS-SSIM` against any reference.
pub fn perceptual_distance(image: &Image, references: &[Image]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Data("perceptual distance needs at least one reference".into()));
    }
    references
        .iter()
        .map(|r| ms_ssim(image, r).map(|s| 1.0 - s))
        .try_fold(f64::INFINITY, |best, d| d.map(|d| best.min(d)))
}

/// Scores candidates against the real images and keeps the
/// `⌈keep·N⌉` closest, ties going to the lower `view_id`.
pub fn filter_pseudo(
    candidates: Vec<PseudoObservation>,
    real: &[Image],
    keep_fraction: f64,
) -> Result<Vec<PseudoObservation>> {
    if candidates.is_empty() {
        return Err(Error::Data("nothing to filter".into()));
    }
    let k = kept_count(candidates.len(), keep_fraction);
    let scores = candidates
        .par_iter()
        .map(|c| perceptual_distance(&c.image, real))
        .collect::<Result<Vec<f64>>>()?;
    let mut scored: Vec<PseudoObservation> = candidates
        .into_iter()
        .zip(scores)
        .map(|(c, s)| PseudoObservation { perceptual_score: s, ..c })
        .collect();
    scored.sort_by(|a, b| {
        a.perceptual_score
            .total_cmp(&b.perceptual_score)
            .then(a.view_id.cmp(&b.view_id))
    });
    scored.truncate(k);
    scored.sort_by_key(|p| p.view_id);
    Ok(scored)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub pool_size: usize,
    pub train_psnr: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
    /// Mean uncertainty at the test cameras.
    pub mean_uncertainty: f64,
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut s = String::from("round,pool_size,train_psnr,test_psnr,test_ssim,mean_uncertainty\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.round, r.pool_size, r.train_psnr, r.test_psnr, r.test_ssim, r.mean_uncertainty
        ));
    }
    s
}

/// Mean PSNR and SSIM of the representation over `views`.
pub fn evaluate(rep: &Representation, views: &[View], opts: &RenderOptions) -> Result<(f64, f64)> {
    if views.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for v in views {
        let img = rep.render(&v.camera, opts).rgb;
        p += psnr(&img, &v.image)?;
        s += ssim(&img, &v.image)?;
    }
    let n = views.len() as f64;
    Ok((p / n, s / n))
}

fn measure(round: usize, pool: usize, rep: &Representation, real: &[View], test: &[View], opts: &RenderOptions) -> Result<RoundMetrics> {
    let (train_psnr, _) = evaluate(rep, real, opts)?;
    let (test_psnr, test_ssim) = evaluate(rep, test, opts)?;
    let mut u = 0.0;
    for v in test {
        u += uncertainty_for_view(rep, real, &v.camera, opts)?.1.mean();
    }
    Ok(RoundMetrics {
        round,
        pool_size: pool,
        train_psnr,
        test_psnr,
        test_ssim,
        mean_uncertainty: if test.is_empty() { f64::NAN } else { u / test.len() as f64 },
    })
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub representation: Representation,
    pub pool: ObservationPool,
    /// One row per round, round 0 being the fit on real views.
    pub metrics: Vec<RoundMetrics>,
    pub loss_trace: Vec<LossRecord>,
}

fn in_round<T>(round: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Round {
        round,
        source: Box::new(e),
    })
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the full densification schedule. `test` views only feed the
/// metrics.
pub fn run_deceptive_loop(
    real: &[View],
    test: &[View],
    bbox: &Aabb,
    enhancer: &dyn Enhancer,
    cfg: &LoopConfig,
) -> Result<LoopOutcome> {
    cfg.validate()?;
    if real.len() < 2 {
        return Err(Error::Data(format!("need at least 2 real views, got {}", real.len())));
    }
    let opts = cfg.eval_options();
    let mut trainer = in_round(0, Representation::init(&cfg.train, bbox).and_then(|r| Trainer::new(r, cfg.train.clone())))?;
    let mut loss_trace = in_round(0, trainer.run(real, cfg.initial_iterations))?;
    let mut pool = ObservationPool::new(real.to_vec());
    let mut metrics = vec![in_round(0, measure(0, pool.len(), &trainer.representation, real, test, &opts))?];
    let real_poses: Vec<Pose> = real.iter().map(|v| v.camera.pose).collect();
    let real_images: Vec<Image> = real.iter().map(|v| v.image.clone()).collect();
    let intr = real[0].camera.intrinsics;
    let per_round = cfg.samples_per_round(real.len());
    let mut next_id = real.len() as u64;
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| Error::Config(format!("enhancer worker pool: {e}")))?;

    for round in 1..=cfg.rounds {
        let poses = in_round(round, sample_novel_views(&real_poses, per_round, round_seed(cfg.seed, round)))?;
        let mut requests = Vec::with_capacity(poses.len());
        for pose in poses {
            let camera = Camera::new(intr, pose);
            let (rendered, u) = in_round(round, uncertainty_for_view(&trainer.representation, real, &camera, &opts))?;
            requests.push(EnhanceRequest {
                view_id: next_id,
                depth_valid: rendered.depth_validity(),
                rgb: rendered.rgb,
                depth: rendered.depth,
                uncertainty: u.values,
                camera,
                prompt: None,
            });
            next_id += 1;
        }
        let outputs: Vec<_> = workers.install(|| requests.par_iter().map(|r| enhance(enhancer, r)).collect());
        let mut candidates = Vec::with_capacity(requests.len());
        for (req, out) in requests.into_iter().zip(outputs) {
            let image = match out {
                Ok(img) => img,
                Err(e) if e.is_unavailable() => match cfg.fallback {
                    FallbackPolicy::Skip => continue,
                    FallbackPolicy::Identity => req.rgb,
                },
                Err(e) => return in_round(round, Err(e.into())),
            };
            candidates.push(PseudoObservation {
                view_id: req.view_id,
                camera: req.camera,
                image,
                round,
                perceptual_score: f64::NAN,
            });
        }
        if !candidates.is_empty() {
            pool.extend(in_round(round, filter_pseudo(candidates, &real_images, cfg.keep_fraction))?);
        }
        let views = pool.training_views();
        loss_trace.extend(in_round(round, trainer.run(&views, cfg.train.iterations))?);
        metrics.push(in_round(round, measure(round, pool.len(), &trainer.representation, real, test, &opts))?);
    }
    Ok(LoopOutcome {
        representation: trainer.into_representation(),
        pool,
        metrics,
        loss_trace,
    })
}

/// The same training budget as the loop, spent on real views only.
pub fn run_baseline(real: &[View], test: &[View], bbox: &Aabb, cfg: &LoopConfig) -> Result<(Representation, RoundMetrics)> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(Error::Data("baseline needs real views".into()));
    }
    let mut trainer = Trainer::new(Representation::init(&cfg.train, bbox)?, cfg.train.clone())?;
    trainer.run(real, cfg.total_iterations())?;
    let m = measure(0, real.len(), &trainer.representation, real, test, &cfg.eval_options())?;
    Ok((trainer.into_representation(), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn textured(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4), rng.gen_range(0.0..6.0));
        Image::from_fn(n, n, |x, y| {
            let (x, y) = (x as f64, y as f64);
            [
                0.5 + 0.4 * (a * x + c).sin(),
                0.5 + 0.4 * (b * y).cos(),
                0.5 + 0.3 * ((a + b) * (x + y) * 0.5).sin(),
            ]
        })
    }

    fn noise(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, n, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    fn blur(img: &Image) -> Image {
        let (w, h) = img.dims();
        Image::from_fn(w, h, |x, y| {
            let mut s = [0.0; 3];
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    let p = img.get(xx, yy);
                    (0..3).for_each(|c| s[c] += p[c]);
                    n += 1.0;
                }
            }
            s.map(|v| v / n)
        })
    }

    fn pseudo(id: u64, image: Image) -> PseudoObservation {
        let intr = Intrinsics::from_fov(image.width(), image.height(), 50.0).unwrap();
        PseudoObservation {
            view_id: id,
            camera: Camera::new(intr, Pose::identity()),
            image,
            round: 1,
            perceptual_score: f64::NAN,
        }
    }

    #[test]
    fn schedule_arithmetic() {
        let cfg = LoopConfig::new(TrainConfig::grid());
        assert_eq!(cfg.samples_per_round(5), 12);
        assert_eq!(kept_count(12, 0.8), 10);
        assert_eq!(kept_count(10, 0.8), 8);
        assert_eq!(kept_count(10, 0.7), 7);
        assert_eq!(kept_count(10, 1.0), 10);
    }

    #[test]
    fn samples_stay_in_the_inflated_segment() {
        let a = Pose::from_translation(Vector3::new(-1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let poses = sample_novel_views(&[a, b], 200, 3).unwrap();
        for p in &poses {
            let c = p.center();
            assert!(c.x.abs() <= 1.1 + 1e-12, "{c}");
            assert!(c.y.abs() <= 0.1 + 1e-12 && c.z.abs() <= 0.1 + 1e-12);
        }
        assert_eq!(poses, sample_novel_views(&[a, b], 200, 3).unwrap());
    }

    #[test]
    fn sampled_centers_are_uniform() {
        let inputs: Vec<Pose> = [(-2.0, -1.0, 0.5), (2.0, 1.0, -0.5), (0.0, 0.5, 0.0)]
            .iter()
            .map(|&(x, y, z)| Pose::from_translation(Vector3::new(x, y, z)))
            .collect();
        let poses = sample_novel_views(&inputs, 1000, 42).unwrap();
        let mean = poses.iter().map(|p| p.center()).sum::<Vector3<f64>>() / 1000.0;
        let extent = Vector3::new(4.0, 2.0, 1.0).add_scalar(0.4);
        for i in 0..3 {
            assert!(mean[i].abs() < 0.05 * extent[i], "axis {i}: {}", mean[i]);
        }
    }

    #[test]
    fn coincident_inputs_are_rejected() {
        let p = Pose::identity();
        assert!(sample_novel_views(&[p, p], 3, 0).is_err());
        assert!(sample_novel_views(&[p], 3, 0).is_err());
    }

    #[test]
    fn ring_target_is_the_ring_center() {
        let center = Vector3::new(0.3, -0.2, 0.5);
        let inputs: Vec<Pose> = (0..5)
            .map(|i| {
                let a = i as f64 * 0.5;
                let eye = center + Vector3::new(3.0 * a.sin(), 0.7, -3.0 * a.cos());
                Pose::look_at(eye, center, Vector3::y()).unwrap()
            })
            .collect();
        assert!((look_at_target(&inputs) - center).norm() < 1e-9);
    }

    #[test]
    fn self_distance_is_zero_and_symmetric() {
        let a = textured(1, 48);
        let b = textured(2, 48);
        assert_eq!(perceptual_distance(&a, &[b.clone(), a.clone()]).unwrap(), 0.0);
        let ab = perceptual_distance(&a, &[b.clone()]).unwrap();
        let ba = perceptual_distance(&b, &[a]).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(perceptual_distance(&b, &[]).is_err());
        assert!(perceptual_distance(&textured(1, 32), &[textured(1, 48)]).is_err());
    }

    #[test]
    fn noise_is_farther_than_a_blurred_copy() {
        let reference = textured(3, 48);
        let d_blur = perceptual_distance(&blur(&reference), &[reference.clone()]).unwrap();
        let d_noise = perceptual_distance(&noise(4, 48), &[reference]).unwrap();
        assert!(d_blur < d_noise, "{d_blur} vs {d_noise}");
    }

    #[test]
    fn filter_keeps_exact_fraction_and_planted_copy() {
        let real = vec![textured(10, 48), textured(11, 48)];
        for slot in 0..10 {
            let cands: Vec<PseudoObservation> = (0..10)
                .map(|i| {
                    let img = if i == slot { real[1].clone() } else { noise(100 + i, 48) };
                    pseudo(i, img)
                })
                .collect();
            let kept = filter_pseudo(cands, &real, 0.8).unwrap();
            assert_eq!(kept.len(), 8);
            assert!(kept.iter().any(|p| p.view_id == slot));
            assert!(kept.windows(2).all(|w| w[0].view_id < w[1].view_id));
        }
    }

    #[test]
    fn full_keep_is_a_no_op_and_ties_break_by_id() {
        let real = vec![textured(20, 48)];
        let cands: Vec<PseudoObservation> = (0..4).map(|i| pseudo(9 - i, textured(21, 48))).collect();
        assert_eq!(filter_pseudo(cands.clone(), &real, 1.0).unwrap().len(), 4);
        let kept = filter_pseudo(cands, &real, 0.5).unwrap();
        assert_eq!(kept.iter().map(|p| p.view_id).collect::<Vec<_>>(), vec![6, 7]);
    }

    #[test]
    fn metrics_csv_has_the_documented_header() {
        let rows = [RoundMetrics {
            round: 0,
            pool_size: 5,
            train_psnr: 30.0,
            test_psnr: 20.0,
            test_ssim: 0.5,
            mean_uncertainty: 0.1,
        }];
        let csv = metrics_csv(&rows);
        assert!(csv.starts_with("round,pool_size,train_psnr,test_psnr,test_ssim,mean_uncertainty\n0,5,"));
    }

    #[test]
    fn invalid_loop_configs_are_rejected() {
        let mut cfg = LoopConfig::new(TrainConfig::grid());
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = LoopConfig::new(TrainConfig::grid());
        cfg.target_multiplier = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = LoopConfig::new(TrainConfig::grid());
        cfg.keep_fraction = 0.0;
        assert!(cfg.validate().is_err());
    }
}
