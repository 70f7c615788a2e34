//! Sparse-view scene reconstruction densified with enhanced
//! pseudo-observations.
//!
//! A scene is represented either as an explicit voxel radiance grid rendered
//! by ray marching ([`field`], [`volren`]) or as a cloud of 3D Gaussians
//! rendered by ordered splatting ([`gsplat`]). Both are fitted to calibrated
//! photographs by gradient descent on a photometric loss ([`optim`]).
//!
//! With only a handful of input photographs the fit generalizes poorly.
//! [`pipeline`] grows the training set: it renders the current fit at
//! sampled novel cameras, measures how consistent each rendering is with
//! the nearest real photograph ([`consistency`]), hands rendering, depth and
//! uncertainty to an [`enhance::Enhancer`], keeps the most plausible
//! results and trains on them as if they were real.
//!
//! [`harness`] supplies procedural scenes with exact ground truth, dataset
//! files, image metrics and configuration parsing.

pub mod consistency;
pub mod enhance;
pub mod error;
pub mod field;
pub mod geometry;
pub mod gsplat;
pub mod harness;
pub mod image;
pub mod optim;
pub mod pipeline;
pub mod volren;

pub use error::{Error, Result};

/// Guide chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/volume-rendering.md")]
    struct VolumeRendering;
    #[doc = include_str!("../../../book/src/splatting.md")]
    struct Splatting;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/consistency.md")]
    struct Consistency;
    #[doc = include_str!("../../../book/src/densification.md")]
    struct Densification;
    #[doc = include_str!("../../../book/src/enhancers.md")]
    struct Enhancers;
}
