//! Uncertainty on the procedural scene, using exact ground-truth renders as
//! a stand-in for a perfect reconstruction.

use pseudoview::consistency::{warp_uncertainty, UncertaintyMap};
use pseudoview::enhance::corrupt_image;
use pseudoview::geometry::{Camera, Intrinsics};
use pseudoview::harness::dataset::RingGeometry;
use pseudoview::harness::scene::{generate_scene, render_ground_truth, GroundTruth};
use pseudoview::image::{Image, ScalarMap};
use pseudoview::optim::View;

struct Pair {
    camera_a: Camera,
    truth_a: GroundTruth,
    view_b: View,
}

fn pair(step_degrees: f64) -> Pair {
    let scene = generate_scene(3, 4).unwrap();
    let intr = Intrinsics::from_fov(64, 64, 50.0).unwrap();
    let ring = RingGeometry::default();
    let camera_a = Camera::new(intr, ring.pose_at(10.0, ring.height).unwrap());
    let camera_b = Camera::new(intr, ring.pose_at(10.0 + step_degrees, ring.height).unwrap());
    Pair {
        truth_a: render_ground_truth(&scene, &camera_a),
        view_b: View {
            image: render_ground_truth(&scene, &camera_b).rgb,
            camera: camera_b,
        },
        camera_a,
    }
}

fn uncertainty(p: &Pair, rgb: &Image, depth: &ScalarMap) -> UncertaintyMap {
    warp_uncertainty(rgb, depth, &p.truth_a.valid, &p.camera_a, &p.view_b).unwrap()
}

#[test]
fn exact_rendering_and_depth_are_consistent() {
    let p = pair(1.0);
    let u = uncertainty(&p, &p.truth_a.rgb, &p.truth_a.depth);
    assert!(u.mean_valid().unwrap() < 1e-3, "{:?}", u.mean_valid());
}

#[test]
fn scaled_depth_raises_uncertainty() {
    let p = pair(6.0);
    let exact = uncertainty(&p, &p.truth_a.rgb, &p.truth_a.depth).mean_valid().unwrap();
    let scaled = ScalarMap::from_values(64, 64, p.truth_a.depth.values().iter().map(|d| 1.2 * d).collect()).unwrap();
    let wrong = uncertainty(&p, &p.truth_a.rgb, &scaled).mean_valid().unwrap();
    assert!(wrong > exact, "{wrong} <= {exact}");
}

#[test]
fn uncertainty_vanishes_with_rendering_error() {
    let p = pair(1.0);
    let levels = [0.2, 0.05, 0.0125, 0.0];
    let means: Vec<f64> = levels
        .iter()
        .map(|&s| {
            let rgb = corrupt_image(&p.truth_a.rgb, s, 11);
            uncertainty(&p, &rgb, &p.truth_a.depth).mean_valid().unwrap()
        })
        .collect();
    assert!(means.windows(2).all(|m| m[1] < m[0]), "{means:?}");
    assert!(means[3] < 1e-3, "{means:?}");
}
