//! View-consistency uncertainty: a rendered novel view is compared with the
//! nearest input image warped into it through the rendered depth.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{warp_image, Camera, Pose};
use crate::image::{Image, Mask, ScalarMap};
use crate::optim::{Representation, View};
use crate::volren::{RenderOptions, RenderedView};

/// Value assigned to pixels without a usable reprojection.
pub const UNCERTAINTY_CEILING: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap {
    pub values: ScalarMap,
    pub validity: Mask,
}

impl UncertaintyMap {
    /// Mean over all pixels, ceiling included.
    pub fn mean(&self) -> f64 {
        let v = self.values.values();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean over valid pixels; `None` when nothing is valid.
    pub fn mean_valid(&self) -> Option<f64> {
        let (sum, n) = self
            .values
            .values()
            .iter()
            .zip(self.validity.flags())
            .filter(|(_, &ok)| ok)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        self.values.write_pfm(path)
    }
}

/// Index of the input camera whose center is closest to `pose_a`'s; ties
/// go to the lowest index.
pub fn nearest_input_view(pose_a: &Pose, inputs: &[Pose]) -> Result<usize> {
    let c = pose_a.center();
    inputs
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p.center() - c).norm()))
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Data("no input views to compare against".into()))
}

/// Channel-mean squared difference on valid pixels, ceiling elsewhere.
pub fn uncertainty_map(rendered: &Image, warped: &Image, validity: &Mask) -> Result<UncertaintyMap> {
    let dims = rendered.dims();
    if warped.dims() != dims || validity.dims() != dims {
        return Err(Error::Shape(format!(
            "uncertainty inputs disagree: {dims:?}, {:?}, {:?}",
            warped.dims(),
            validity.dims()
        )));
    }
    let values = rendered
        .pixels()
        .iter()
        .zip(warped.pixels())
        .zip(validity.flags())
        .map(|((a, b), &ok)| {
            if ok {
                (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>() / 3.0
            } else {
                UNCERTAINTY_CEILING
            }
        })
        .collect();
    Ok(UncertaintyMap {
        values: ScalarMap::from_values(dims.0, dims.1, values)?,
        validity: validity.clone(),
    })
}

/// Warps `view_b`'s image into `camera_a` through `depth_a` and compares it
/// with `rgb_a`.
pub fn warp_uncertainty(
    rgb_a: &Image,
    depth_a: &ScalarMap,
    valid_a: &Mask,
    camera_a: &Camera,
    view_b: &View,
) -> Result<UncertaintyMap> {
    if view_b.camera.intrinsics != camera_a.intrinsics {
        return Err(Error::Shape("views must share intrinsics".into()));
    }
    let a_to_b = Pose::relative(&camera_a.pose, &view_b.camera.pose);
    let (warped, mask) = warp_image(&view_b.image, depth_a, Some(valid_a), &a_to_b, &camera_a.intrinsics)?;
    uncertainty_map(rgb_a, &warped, &mask)
}

/// Renders the representation at `camera` and measures its consistency with
/// the nearest input view. Pixels with low accumulated opacity are invalid.
pub fn uncertainty_for_view(
    representation: &Representation,
    inputs: &[View],
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<(RenderedView, UncertaintyMap)> {
    let poses: Vec<Pose> = inputs.iter().map(|v| v.camera.pose).collect();
    let b = nearest_input_view(&camera.pose, &poses)?;
    let rendered = representation.render(camera, opts);
    let valid = rendered.depth_validity();
    let map = warp_uncertainty(&rendered.rgb, &rendered.depth, &valid, camera, &inputs[b])?;
    Ok((rendered, map))
}
