//! Reverse-mode gradients of splat blending with respect to raw Gaussian
//! parameters.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{blend, pixel_contributions, Contribution, GaussianCloud, Splat, PARAMS_PER_GAUSSIAN};
use crate::geometry::Intrinsics;

/// Gradients with respect to the screen-space quantities of one splat.
#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad {
    mean2d: [f64; 2],
    /// d/da, d/db, d/dc for the conic `[[a, b], [b, c]]` (b counted once).
    conic: [f64; 3],
    opacity_logit: f64,
    color: [f64; 3],
    touched: bool,
}

/// Pixel query for the backward pass: continuous coordinates and `dL/dC`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PixelGrad {
    pub u: f64,
    pub v: f64,
    pub grad: [f64; 3],
}

/// Forward colors for a set of pixels of one view.
pub(crate) fn forward_pixels(splats: &[Splat], pixels: &[(f64, f64)], background: [f64; 3]) -> Vec<[f64; 3]> {
    let mut scratch = Vec::new();
    pixels
        .iter()
        .map(|&(u, v)| {
            pixel_contributions(splats, u, v, &mut scratch);
            blend(splats, &scratch, background, 1.0).0.color
        })
        .collect()
}

/// Accumulates raw-parameter gradients (flat, `PARAMS_PER_GAUSSIAN` per
/// Gaussian) for the given pixels of one view.
pub(crate) fn backward_view(
    cloud: &GaussianCloud,
    intr: &Intrinsics,
    camera_rotation: &Matrix3<f64>,
    splats: &[Splat],
    pixels: &[PixelGrad],
    background: [f64; 3],
    out: &mut [f64],
) {
    let mut screen = vec![ScreenGrad::default(); splats.len()];
    let mut contributions: Vec<Contribution> = Vec::new();
    let mut trans = Vec::new();
    for px in pixels {
        pixel_contributions(splats, px.u, px.v, &mut contributions);
        trans.clear();
        let mut t = 1.0;
        for c in &contributions {
            trans.push(t);
            t *= 1.0 - c.alpha;
        }
        let g = px.grad;
        let mut suffix = [t * background[0], t * background[1], t * background[2]];
        for (c, &t_i) in contributions.iter().zip(&trans).rev() {
            let s = &splats[c.slot];
            let sg = &mut screen[c.slot];
            sg.touched = true;
            let w = c.alpha * t_i;
            for ch in 0..3 {
                sg.color[ch] += w * g[ch];
            }
            let g_dot_c = g[0] * s.color[0] + g[1] * s.color[1] + g[2] * s.color[2];
            let g_dot_s = g[0] * suffix[0] + g[1] * suffix[1] + g[2] * suffix[2];
            let d_alpha = t_i * g_dot_c - g_dot_s / (1.0 - c.alpha);
            for ch in 0..3 {
                suffix[ch] += w * s.color[ch];
            }
            if c.clamped {
                continue;
            }
            sg.opacity_logit += d_alpha * c.gauss * s.opacity * (1.0 - s.opacity);
            let d_power = d_alpha * s.opacity * c.gauss;
            let [a, b, cc] = s.conic;
            let (dx, dy) = (c.dx, c.dy);
            sg.conic[0] += d_power * (-0.5 * dx * dx);
            sg.conic[1] += d_power * (-dx * dy);
            sg.conic[2] += d_power * (-0.5 * dy * dy);
            sg.mean2d[0] += d_power * (a * dx + b * dy);
            sg.mean2d[1] += d_power * (b * dx + cc * dy);
        }
    }

    for (splat, sg) in splats.iter().zip(&screen) {
        if !sg.touched {
            continue;
        }
        let g3 = &cloud.gaussians()[splat.index];
        let base = splat.index * PARAMS_PER_GAUSSIAN;
        let grads = &mut out[base..base + PARAMS_PER_GAUSSIAN];

        // Conic → 2D covariance: dL/dΣ₂ = −A·G_A·A.
        let [a, b, c] = splat.conic;
        let conic = Matrix2::new(a, b, b, c);
        let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
        let g_cov2d = -(conic * g_conic * conic);

        // Σ₂ = T Σ Tᵀ + εI with T = J·W.
        let cov3d = g3.covariance();
        let jw = splat.jw;
        let g_cov3d: Matrix3<f64> = jw.transpose() * g_cov2d * jw;
        let g_jw: Matrix2x3<f64> = 2.0 * g_cov2d * jw * cov3d;
        let g_j = g_jw * camera_rotation;

        let t = splat.cam_point;
        let (x, y, z) = (t.x, t.y, t.z);
        let (fx, fy) = (intr.fx, intr.fy);
        let (z2, z3) = (z * z, z * z * z);
        let mut g_t = Vector3::new(
            g_j[(0, 2)] * (-fx / z2),
            g_j[(1, 2)] * (-fy / z2),
            g_j[(0, 0)] * (-fx / z2) + g_j[(0, 2)] * (2.0 * fx * x / z3)
                + g_j[(1, 1)] * (-fy / z2) + g_j[(1, 2)] * (2.0 * fy * y / z3),
        );
        let j = Matrix2x3::new(fx / z, 0.0, -fx * x / z2, 0.0, fy / z, -fy * y / z2);
        g_t += j.transpose() * Vector2::new(sg.mean2d[0], sg.mean2d[1]);
        let g_mean = camera_rotation * g_t;
        for k in 0..3 {
            grads[k] += g_mean[k];
        }

        // Σ = R diag(s²) Rᵀ.
        let r = g3.rotation_matrix();
        let s2 = g3.log_scale.map(|s| (2.0 * s).exp());
        let m = r.transpose() * g_cov3d * r;
        for k in 0..3 {
            grads[3 + k] += 2.0 * s2[k] * m[(k, k)];
        }
        let g_r = 2.0 * g_cov3d * r * Matrix3::from_diagonal(&s2);
        let g_q = quaternion_grad(&g3.rotation, &g_r);
        for k in 0..4 {
            grads[6 + k] += g_q[k];
        }

        grads[10] += sg.opacity_logit;
        for ch in 0..3 {
            grads[11 + ch] += sg.color[ch];
        }
    }
}

/// Back-propagates `dL/dR` through `R(q / |q|)` to the raw quaternion
/// `(w, x, y, z)`.
fn quaternion_grad(raw: &[f64; 4], g_r: &Matrix3<f64>) -> [f64; 4] {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = raw.map(|v| v / n);
    let d_w = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let d_x = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let d_y = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let d_z = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    let g_hat = [
        g_r.component_mul(&d_w).sum(),
        g_r.component_mul(&d_x).sum(),
        g_r.component_mul(&d_y).sum(),
        g_r.component_mul(&d_z).sum(),
    ];
    let q_hat = [w, x, y, z];
    let proj: f64 = g_hat.iter().zip(&q_hat).map(|(g, q)| g * q).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (g_hat[k] - q_hat[k] * proj) / n;
    }
    out
}
