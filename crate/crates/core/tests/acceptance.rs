//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with
//! its measurement and runtime. Tests hold a shared lock so runtimes are
//! measured without competing for cores.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pseudoview::consistency::warp_uncertainty;
use pseudoview::enhance::{make_duos, BlendEnhancer, Enhancer, IdentityEnhancer, OracleEnhancer};
use pseudoview::field::Aabb;
use pseudoview::geometry::{warp_image, Camera, Intrinsics, Pose};
use pseudoview::gsplat::{pixel_weights, splat_render, Gaussian3D, GaussianCloud};
use pseudoview::harness::dataset::{build_dataset, RingGeometry, Split};
use pseudoview::harness::metrics::psnr;
use pseudoview::harness::scene::{generate_scene, render_ground_truth, SyntheticScene};
use pseudoview::image::{Image, ScalarMap};
use pseudoview::optim::{grad_check, GradCheckConfig};
use pseudoview::optim::{RepresentationKind, TrainConfig, View};
use pseudoview::pipeline::{filter_pseudo, metrics_csv, run_baseline, run_deceptive_loop, LoopConfig, PseudoObservation};
use pseudoview::volren::{transmittance, RaySamples};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, ok: bool, detail: &str, elapsed: Duration, limit: Duration) -> bool {
    let in_time = elapsed < limit;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    // Written to the raw handle so the line survives output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "criterion {n} [{verdict}] {name}: {detail} ({:.2}s, limit {}s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let _ = out.flush();
    ok && in_time
}

/// Five real views on a 120 degree arc and four held-out views between them.
struct Desk {
    scene: SyntheticScene,
    real: Vec<View>,
    test: Vec<View>,
    bbox: Aabb,
}

fn desk() -> Desk {
    let scene = generate_scene(3, 4).unwrap();
    let intr = Intrinsics::from_fov(64, 64, 50.0).unwrap();
    let poses: Vec<(Pose, Split)> = RingGeometry::default()
        .poses(9, 1)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, if i % 2 == 0 { Split::Train } else { Split::Test }))
        .collect();
    let ds = build_dataset(&scene, intr, &poses);
    Desk {
        real: ds.train_views(),
        test: ds.test_views(),
        bbox: ds.bbox,
        scene,
    }
}

fn desk_loop(kind: RepresentationKind) -> LoopConfig {
    let mut train = TrainConfig::for_kind(kind);
    train.render.samples = 64;
    train.render.near = 1.0;
    train.render.far = 5.0;
    train.grid_resolution = 64;
    // With a constant learning rate, real-only grid training peaks and then
    // drifts as weakly observed voxels random-walk. The budget stops near
    // the peak so the baseline is not handicapped by over-training.
    let (batch, initial, per_round) = match kind {
        RepresentationKind::Grid => (2048, 750, 50),
        RepresentationKind::Gaussians => (1024, 1000, 150),
    };
    train.batch_size = batch;
    train.iterations = per_round;
    let mut cfg = LoopConfig::new(train);
    cfg.initial_iterations = initial;
    cfg
}

fn final_psnr(d: &Desk, enhancer: &dyn Enhancer, cfg: &LoopConfig) -> f64 {
    run_deceptive_loop(&d.real, &d.test, &d.bbox, enhancer, cfg)
        .unwrap()
        .metrics
        .last()
        .unwrap()
        .test_psnr
}

#[test]
fn criterion_1_homogeneous_transmittance() {
    let _g = serial();
    let t = Instant::now();
    let mut worst = 0.0_f64;
    for &sigma in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for &(near, far) in &[(0.0, 1.0), (0.5, 2.5), (2.0, 6.0)] {
            let k = 256;
            let samples = RaySamples::uniform(near, far, vec![sigma; k], vec![[0.5; 3]; k]).unwrap();
            let trans = transmittance(&samples);
            let step = (far - near) / k as f64;
            let last = trans[k - 1] * (-sigma * step).exp();
            let expected = (-sigma * (far - near)).exp();
            worst = worst.max((last - expected).abs());
        }
    }
    let ok = worst < 1e-3;
    assert!(report(
        1,
        "transmittance matches exp(-sigma L) at K=256",
        ok,
        &format!("max |error| {worst:.3e} < 1e-3"),
        t.elapsed(),
        Duration::from_secs(1),
    ));
}

#[test]
fn criterion_2_gradient_fidelity() {
    let _g = serial();
    let t = Instant::now();
    let grid = grad_check(&GradCheckConfig::new(RepresentationKind::Grid));
    let cloud = grad_check(&GradCheckConfig::new(RepresentationKind::Gaussians));
    let ok = grid.checked >= 100
        && cloud.checked >= 100
        && grid.max_relative_error < 1e-4
        && cloud.max_relative_error < 1e-4;
    assert!(report(
        2,
        "analytic vs central differences",
        ok,
        &format!(
            "grid {} params max rel {:.2e}; gaussians {} params ({} skipped at thresholds) max rel {:.2e}; need < 1e-4",
            grid.checked, grid.max_relative_error, cloud.checked, cloud.skipped, cloud.max_relative_error
        ),
        t.elapsed(),
        Duration::from_secs(60),
    ));
}

#[test]
fn criterion_3_warp_geometry() {
    let _g = serial();
    let t = Instant::now();

    // Fronto-parallel plane at z = d, B shifted by tx along +x. A horizontal
    // ramp encodes source column so the warp reveals where it sampled.
    let (w, h) = (64, 48);
    let intr = Intrinsics::new(60.0, 60.0, 32.0, 24.0, w, h).unwrap();
    let mut worst_px = 0.0_f64;
    for &(d, tx) in &[(2.0, 0.1), (4.0, 0.3), (3.0, -0.2)] {
        let depth = ScalarMap::from_fn(w, h, |x, y| {
            let r = intr.unproject(x as f64 + 0.5, y as f64 + 0.5);
            d * r.norm()
        });
        let ramp = Image::from_fn(w, h, |x, _| [(x as f64 + 0.5) / w as f64, 0.0, 0.0]);
        let a_to_b = Pose::from_translation(Vector3::new(-tx, 0.0, 0.0));
        let (warped, mask) = warp_image(&ramp, &depth, None, &a_to_b, &intr).unwrap();
        let expected = 60.0 * tx / d;
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    let u_b = warped.get(x, y)[0] * w as f64;
                    let disparity = (x as f64 + 0.5) - u_b;
                    worst_px = worst_px.max((disparity - expected).abs());
                }
            }
        }
    }

    // Ground-truth image and depth of a view warped from a neighbor one to
    // two degrees along the arc.
    let scene = generate_scene(3, 4).unwrap();
    let intr = Intrinsics::from_fov(64, 64, 50.0).unwrap();
    let ring = RingGeometry::default();
    let mut worst_u = 0.0_f64;
    for &(az, step) in &[(0.0, 1.0), (-30.0, -1.0), (40.0, 1.5)] {
        let cam_a = Camera::new(intr, ring.pose_at(az, ring.height).unwrap());
        let cam_b = Camera::new(intr, ring.pose_at(az + step, ring.height).unwrap());
        let gt_a = render_ground_truth(&scene, &cam_a);
        let view_b = View {
            image: render_ground_truth(&scene, &cam_b).rgb,
            camera: cam_b,
        };
        let u = warp_uncertainty(&gt_a.rgb, &gt_a.depth, &gt_a.valid, &cam_a, &view_b).unwrap();
        worst_u = worst_u.max(u.mean_valid().unwrap());
    }
    let ok = worst_px < 0.5 && worst_u < 1e-3;
    assert!(report(
        3,
        "plane disparity and ground-truth warp",
        ok,
        &format!("disparity error {worst_px:.2e} px < 0.5; ground-truth uncertainty {worst_u:.2e} < 1e-3"),
        t.elapsed(),
        Duration::from_secs(10),
    ));
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn criterion_4_splat_correctness() {
    let _g = serial();
    let t = Instant::now();
    let (fx, cx) = (50.0, 16.5);
    let intr = Intrinsics::new(fx, fx, cx, cx, 32, 32).unwrap();
    let cam = Camera::new(intr, Pose::identity());
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // Argmax of a lone gaussian against the hand projection of its mean.
    let mut worst_peak = 0.0_f64;
    for _ in 0..10 {
        let mean = Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(2.5..4.0));
        let mut g = Gaussian3D::isotropic(mean, rng.gen_range(0.05..0.12), logit(0.9), [1.0; 3]);
        g.log_scale.x += rng.gen_range(-0.3..0.3);
        let img = splat_render(&GaussianCloud::new(vec![g]).unwrap(), &cam, [0.0; 3]).rgb;
        let (mut best, mut at) = (f64::MIN, (0, 0));
        for y in 0..32 {
            for x in 0..32 {
                if img.get(x, y)[0] > best {
                    best = img.get(x, y)[0];
                    at = (x, y);
                }
            }
        }
        let (u, v) = (fx * mean.x / mean.z + cx, fx * mean.y / mean.z + cx);
        let dist = ((at.0 as f64 + 0.5 - u).powi(2) + (at.1 as f64 + 0.5 - v).powi(2)).sqrt();
        worst_peak = worst_peak.max(dist);
    }

    // Two gaussians on the optical axis seen through the pixel at the
    // principal point, where each splat's alpha is exactly its opacity.
    let (o1, o2) = (0.6, 0.7);
    let (c1, c2, bg) = ([0.9, 0.1, 0.2], [0.1, 0.8, 0.3], [0.05, 0.05, 0.4]);
    let pair = |z1: f64, z2: f64| {
        let a = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, z1), 0.1, logit(o1), c1);
        let b = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, z2), 0.1, logit(o2), c2);
        splat_render(&GaussianCloud::new(vec![a, b]).unwrap(), &cam, bg).rgb.get(16, 16)
    };
    let front = |oa: f64, ca: [f64; 3], ob: f64, cb: [f64; 3]| {
        [0, 1, 2].map(|k| oa * ca[k] + (1.0 - oa) * ob * cb[k] + (1.0 - oa) * (1.0 - ob) * bg[k])
    };
    let (first, swapped) = (pair(2.0, 3.0), pair(3.0, 2.0));
    let (want_first, want_swapped) = (front(o1, c1, o2, c2), front(o2, c2, o1, c1));
    let swap_err = (0..3)
        .map(|k| {
            let change = swapped[k] - first[k];
            let want = want_swapped[k] - want_first[k];
            (first[k] - want_first[k]).abs().max((change - want).abs())
        })
        .fold(0.0, f64::max);

    // Weights plus leftover over every pixel of a random cloud.
    let cloud = GaussianCloud::random(60, &Aabb::cube(0.8), 5).unwrap();
    let view = Camera::new(intr, Pose::look_at(Vector3::new(0.4, -0.3, -3.0), Vector3::zeros(), Vector3::y()).unwrap());
    let mut worst_sum = 0.0_f64;
    for y in 0..32 {
        for x in 0..32 {
            let (weights, leftover) = pixel_weights(&cloud, &view, x, y);
            let s: f64 = weights.iter().map(|(_, w)| w).sum::<f64>() + leftover;
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }

    let ok = worst_peak <= 1.0 && swap_err < 1e-12 && worst_sum < 1e-9;
    assert!(report(
        4,
        "splat peak, depth-order swap, weight sum",
        ok,
        &format!("peak offset {worst_peak:.3} px <= 1; swap error {swap_err:.1e}; |sum - 1| {worst_sum:.1e} < 1e-9"),
        t.elapsed(),
        Duration::from_secs(10),
    ));
}

#[test]
fn criterion_5_filter_contract() {
    let _g = serial();
    let t = Instant::now();
    let d = desk();
    let real_images: Vec<Image> = d.real.iter().map(|v| v.image.clone()).collect();
    let intr = d.real[0].camera.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts_ok = true;
    let mut planted_kept = 0;
    let trials = 12;
    for _ in 0..trials {
        let planted = rng.gen_range(0..10);
        let source = rng.gen_range(0..real_images.len());
        let candidates: Vec<PseudoObservation> = (0..10)
            .map(|i| {
                let image = if i == planted {
                    real_images[source].clone()
                } else {
                    let az = rng.gen_range(-70.0..70.0);
                    let cam = Camera::new(intr, RingGeometry::default().pose_at(az, rng.gen_range(0.0..1.2)).unwrap());
                    let noise = rng.gen_range(0.0..0.1);
                    let seed = rng.gen();
                    pseudoview::enhance::corrupt_image(&render_ground_truth(&d.scene, &cam).rgb, noise, seed)
                };
                PseudoObservation {
                    view_id: 100 + i as u64,
                    camera: d.real[0].camera,
                    image,
                    round: 1,
                    perceptual_score: f64::NAN,
                }
            })
            .collect();
        let kept = filter_pseudo(candidates, &real_images, 0.8).unwrap();
        counts_ok &= kept.len() == 8;
        if kept.iter().any(|p| p.view_id == 100 + planted as u64) {
            planted_kept += 1;
        }
    }
    let ok = counts_ok && planted_kept == trials;
    assert!(report(
        5,
        "filter keeps 8 of 10 and every planted real copy",
        ok,
        &format!("kept exactly 8 in all trials: {counts_ok}; planted copy kept {planted_kept}/{trials}"),
        t.elapsed(),
        Duration::from_secs(10),
    ));
}

#[test]
fn criterion_6_densification_benefit() {
    let _g = serial();
    let t = Instant::now();
    let d = desk();
    let oracle = OracleEnhancer { scene: d.scene.clone() };
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in [RepresentationKind::Grid, RepresentationKind::Gaussians] {
        let cfg = desk_loop(kind);
        let (_, base) = run_baseline(&d.real, &d.test, &d.bbox, &cfg).unwrap();
        let ten = final_psnr(&d, &oracle, &cfg);
        let five = final_psnr(&d, &oracle, &LoopConfig { target_multiplier: 5.0, ..cfg.clone() });
        let b = base.test_psnr;
        ok &= ten - b >= 3.0 && b <= five && five <= ten;
        detail.push(format!("{kind:?}: baseline {b:.2}, x5 {five:.2}, x10 {ten:.2} dB (gain {:.2} >= 3)", ten - b));
    }
    assert!(report(
        6,
        "oracle densification beats baseline, monotone in multiplier",
        ok,
        &detail.join("; "),
        t.elapsed(),
        Duration::from_secs(600),
    ));
}

#[test]
fn criterion_7_identity_null_test() {
    let _g = serial();
    let t = Instant::now();
    let d = desk();
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in [RepresentationKind::Grid, RepresentationKind::Gaussians] {
        let cfg = desk_loop(kind);
        let (_, base) = run_baseline(&d.real, &d.test, &d.bbox, &cfg).unwrap();
        let ident = final_psnr(&d, &IdentityEnhancer, &cfg);
        let change = ident - base.test_psnr;
        ok &= change.abs() < 0.5;
        detail.push(format!("{kind:?}: baseline {:.2}, identity {ident:.2} dB (|change| {:.2} < 0.5)", base.test_psnr, change.abs()));
    }
    assert!(report(
        7,
        "identity enhancer adds no information",
        ok,
        &detail.join("; "),
        t.elapsed(),
        Duration::from_secs(300),
    ));
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let t = Instant::now();
    let scene = generate_scene(8, 3).unwrap();
    let intr = Intrinsics::from_fov(48, 48, 50.0).unwrap();
    let poses: Vec<(Pose, Split)> = RingGeometry::default()
        .poses(6, 2)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, if i == 2 { Split::Test } else { Split::Train }))
        .collect();
    let ds = build_dataset(&scene, intr, &poses);
    let enhancer = BlendEnhancer { scene, beta: 0.7 };
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in [RepresentationKind::Grid, RepresentationKind::Gaussians] {
        let mut train = TrainConfig::for_kind(kind);
        train.iterations = 40;
        train.batch_size = 512;
        train.render.samples = 32;
        train.render.near = 1.0;
        train.render.far = 5.0;
        train.grid_resolution = 32;
        train.gaussian_count = 300;
        train.seed = 21;
        let mut cfg = LoopConfig::new(train);
        cfg.initial_iterations = 80;
        cfg.rounds = 3;
        cfg.target_multiplier = 4.0;
        cfg.seed = 5;
        let run = || {
            let out = run_deceptive_loop(&ds.train_views(), &ds.test_views(), &ds.bbox, &enhancer, &cfg).unwrap();
            (out.representation.checkpoint_bytes(), metrics_csv(&out.metrics))
        };
        let (a, b) = (run(), run());
        let same = a == b;
        ok &= same;
        detail.push(format!("{kind:?}: checkpoint {} bytes, csv identical {same}", a.0.len()));
    }
    assert!(report(
        8,
        "identical seeds give identical checkpoints and metrics",
        ok,
        &detail.join("; "),
        t.elapsed(),
        Duration::from_secs(600),
    ));
}

#[test]
fn criterion_9_duo_ordering() {
    let _g = serial();
    let t = Instant::now();
    let scene = generate_scene(3, 4).unwrap();
    let intr = Intrinsics::from_fov(64, 64, 50.0).unwrap();
    let ring = RingGeometry::default();
    let poses: Vec<(Pose, Split)> = ring.poses(10, 1).unwrap().into_iter().map(|p| (p, Split::Train)).collect();
    let ds = build_dataset(&scene, intr, &poses);
    let cameras: Vec<Camera> = [-45.0, -15.0, 10.0, 35.0]
        .iter()
        .map(|&az| Camera::new(intr, ring.pose_at(az, 0.9).unwrap()))
        .collect();
    let mut cfg = TrainConfig::grid();
    cfg.iterations = 800;
    cfg.render.samples = 64;
    cfg.render.near = 1.0;
    cfg.render.far = 5.0;
    let quartets = make_duos(&ds.train_views(), &ds.bbox, &cameras, 0.2, &cfg, &cfg).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for (q, cam) in quartets.iter().zip(&cameras) {
        let truth = render_ground_truth(&scene, cam).rgb;
        let (fine, coarse) = (psnr(&q.fine, &truth).unwrap(), psnr(&q.coarse, &truth).unwrap());
        ok &= fine > coarse;
        detail.push(format!("{fine:.2}>{coarse:.2}"));
    }
    assert!(report(
        9,
        "fine duo beats coarse duo against ground truth",
        ok,
        &format!("fine vs coarse PSNR per view: {}", detail.join(", ")),
        t.elapsed(),
        Duration::from_secs(300),
    ));
}
