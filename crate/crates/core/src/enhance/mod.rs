//! The pseudo-observation generator: a rendered view, its depth and its
//! uncertainty go in, a refined image of the same size comes out.
//!
//! Every implementation is called through [`enhance`], which validates the
//! request and rejects outputs of the wrong size or outside `[0, 1]`.

mod duos;
mod remote;

pub use duos::{augment_with_noise, corrupt_image, make_duos, write_quartets, Quartet, DEFAULT_NOISE_STD, DEFAULT_SUBSET_FRACTION};
pub use remote::{RemoteConfig, RemoteEnhancer};

use serde::{Deserialize, Serialize};

use crate::geometry::Camera;
use crate::harness::scene::{render_ground_truth, SyntheticScene};
use crate::image::{Image, Mask, ScalarMap};

#[derive(Debug, thiserror::Error)]
pub enum EnhanceError {
    #[error("enhancer unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },

    #[error("enhancer protocol violation: {0}")]
    Protocol(String),

    #[error("invalid enhance request: {0}")]
    InvalidRequest(String),
}

impl EnhanceError {
    pub fn is_unavailable(&self) -> bool {
        matches!(self, EnhanceError::Unavailable { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceRequest {
    pub view_id: u64,
    pub rgb: Image,
    /// Ray distances; meaningful where `depth_valid` is set.
    pub depth: ScalarMap,
    pub depth_valid: Mask,
    pub uncertainty: ScalarMap,
    /// Camera of the sampled view. Remote enhancers only see its intrinsics.
    pub camera: Camera,
    pub prompt: Option<String>,
}

impl EnhanceRequest {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        let dims = self.rgb.dims();
        let intr = &self.camera.intrinsics;
        if self.depth.dims() != dims
            || self.depth_valid.dims() != dims
            || self.uncertainty.dims() != dims
            || (intr.width, intr.height) != dims
        {
            return Err(EnhanceError::InvalidRequest(format!(
                "inconsistent sizes: rgb {dims:?}, depth {:?}, validity {:?}, uncertainty {:?}, camera {}x{}",
                self.depth.dims(),
                self.depth_valid.dims(),
                self.uncertainty.dims(),
                intr.width,
                intr.height
            )));
        }
        let finite = self.rgb.is_finite()
            && self.depth.values().iter().all(|v| v.is_finite())
            && self.uncertainty.values().iter().all(|v| v.is_finite());
        if !finite {
            return Err(EnhanceError::InvalidRequest("non-finite values".into()));
        }
        Ok(())
    }
}

pub trait Enhancer: Send + Sync {
    /// Produces the refined image. Callers go through [`enhance`].
    fn generate(&self, req: &EnhanceRequest) -> Result<Image, EnhanceError>;
}

/// Validates the request, runs the enhancer and validates its output.
pub fn enhance(enhancer: &dyn Enhancer, req: &EnhanceRequest) -> Result<Image, EnhanceError> {
    req.validate()?;
    let out = enhancer.generate(req)?;
    if out.dims() != req.rgb.dims() {
        return Err(EnhanceError::Protocol(format!(
            "output is {:?}, request was {:?}",
            out.dims(),
            req.rgb.dims()
        )));
    }
    if !out.in_unit_range() {
        return Err(EnhanceError::Protocol("output values outside [0, 1]".into()));
    }
    Ok(out)
}

/// Returns the rendering unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEnhancer;

impl Enhancer for IdentityEnhancer {
    fn generate(&self, req: &EnhanceRequest) -> Result<Image, EnhanceError> {
        Ok(req.rgb.clone())
    }
}

/// Returns the exact ground truth of a synthetic scene at the request's
/// camera.
#[derive(Clone, Debug)]
pub struct OracleEnhancer {
    pub scene: SyntheticScene,
}

impl Enhancer for OracleEnhancer {
    fn generate(&self, req: &EnhanceRequest) -> Result<Image, EnhanceError> {
        Ok(render_ground_truth(&self.scene, &req.camera).rgb)
    }
}

/// Moves the rendering a fraction `beta` of the way toward ground truth.
#[derive(Clone, Debug)]
pub struct BlendEnhancer {
    pub scene: SyntheticScene,
    pub beta: f64,
}

impl Enhancer for BlendEnhancer {
    fn generate(&self, req: &EnhanceRequest) -> Result<Image, EnhanceError> {
        let truth = render_ground_truth(&self.scene, &req.camera).rgb;
        let b = self.beta;
        let px = req
            .rgb
            .pixels()
            .iter()
            .zip(truth.pixels())
            .map(|(r, t)| [0, 1, 2].map(|c| (1.0 - b) * r[c] + b * t[c]))
            .collect();
        Image::from_pixels(truth.width(), truth.height(), px).map_err(|e| EnhanceError::Protocol(e.to_string()))
    }
}

/// What the densification loop does with a view whose enhancer is
/// unavailable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackPolicy {
    /// Drop the view from this round.
    #[default]
    Skip,
    /// Use the rendering itself.
    Identity,
}

impl std::str::FromStr for FallbackPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skip" => Ok(Self::Skip),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown fallback `{other}` (expected skip or identity)")),
        }
    }
}
