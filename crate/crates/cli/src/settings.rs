//! Typed settings assembled from a `key = value` file over built-in
//! defaults.

use pseudoview::enhance::{FallbackPolicy, DEFAULT_NOISE_STD, DEFAULT_SUBSET_FRACTION};
use pseudoview::geometry::Intrinsics;
use pseudoview::harness::config::ConfigFile;
use pseudoview::harness::dataset::RingGeometry;
use pseudoview::optim::{RepresentationKind, TrainConfig};
use pseudoview::pipeline::LoopConfig;
use pseudoview::volren::RenderOptions;
use pseudoview::{Error, Result};

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub object_count: usize,
    pub view_count: usize,
    pub image_size: usize,
    pub fov_degrees: f64,
    pub ring: RingGeometry,
    pub train: TrainConfig,
    pub rounds: usize,
    pub target_multiplier: f64,
    pub keep_fraction: f64,
    pub initial_iterations: usize,
    pub round_iterations: usize,
    pub enhancer: String,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub fallback: FallbackPolicy,
    pub max_in_flight: usize,
    pub subset_fraction: f64,
    pub noise_std: f64,
}

impl Settings {
    pub fn from_config(file: &ConfigFile, seed: u64) -> Result<Self> {
        let kind: RepresentationKind = file.get("representation")?.unwrap_or(RepresentationKind::Grid);
        let mut train = TrainConfig::for_kind(kind);
        train.seed = seed;
        train.render.samples = 64;
        train.render.near = 1.0;
        train.render.far = 5.0;
        train.render.seed = seed;
        file.set("learning_rate", &mut train.learning_rate)?;
        file.set("iterations", &mut train.iterations)?;
        file.set("batch_size", &mut train.batch_size)?;
        file.set("samples", &mut train.render.samples)?;
        file.set("near", &mut train.render.near)?;
        file.set("far", &mut train.render.far)?;
        file.set("grid_resolution", &mut train.grid_resolution)?;
        file.set("gaussian_count", &mut train.gaussian_count)?;
        file.set("log_every", &mut train.log_every)?;
        train.validate()?;

        let mut s = Settings {
            seed,
            object_count: 4,
            view_count: 8,
            image_size: 64,
            fov_degrees: 50.0,
            ring: RingGeometry::default(),
            initial_iterations: train.iterations,
            round_iterations: 150,
            train,
            rounds: 5,
            target_multiplier: 10.0,
            keep_fraction: 0.8,
            enhancer: "identity".into(),
            endpoint: None,
            timeout_ms: 30_000,
            retries: 2,
            fallback: FallbackPolicy::Skip,
            max_in_flight: 4,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
            noise_std: DEFAULT_NOISE_STD,
        };
        file.set("object_count", &mut s.object_count)?;
        file.set("view_count", &mut s.view_count)?;
        file.set("image_size", &mut s.image_size)?;
        file.set("fov_degrees", &mut s.fov_degrees)?;
        file.set("ring_radius", &mut s.ring.radius)?;
        file.set("ring_height", &mut s.ring.height)?;
        file.set("arc_degrees", &mut s.ring.arc_degrees)?;
        file.set("rounds", &mut s.rounds)?;
        file.set("target_multiplier", &mut s.target_multiplier)?;
        file.set("keep_fraction", &mut s.keep_fraction)?;
        file.set("initial_iterations", &mut s.initial_iterations)?;
        file.set("round_iterations", &mut s.round_iterations)?;
        file.set("enhancer", &mut s.enhancer)?;
        s.endpoint = file.get("endpoint")?;
        file.set("timeout_ms", &mut s.timeout_ms)?;
        file.set("retries", &mut s.retries)?;
        file.set("fallback", &mut s.fallback)?;
        file.set("max_in_flight", &mut s.max_in_flight)?;
        file.set("subset_fraction", &mut s.subset_fraction)?;
        file.set("noise_std", &mut s.noise_std)?;
        if !(s.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std {} must be ≥ 0", s.noise_std)));
        }
        s.loop_config().validate()?;
        Ok(s)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.image_size, self.image_size, self.fov_degrees)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    pub fn loop_config(&self) -> LoopConfig {
        let mut cfg = LoopConfig::new(TrainConfig {
            iterations: self.round_iterations,
            ..self.train.clone()
        });
        cfg.rounds = self.rounds;
        cfg.target_multiplier = self.target_multiplier;
        cfg.keep_fraction = self.keep_fraction;
        cfg.seed = self.seed;
        cfg.initial_iterations = self.initial_iterations;
        cfg.fallback = self.fallback;
        cfg.max_in_flight = self.max_in_flight;
        cfg
    }

    /// Deterministic rendering with the training sampler's settings.
    pub fn eval_render(&self) -> RenderOptions {
        RenderOptions {
            jitter: false,
            ..self.train.render
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_a_file() {
        let s = Settings::from_config(&ConfigFile::default(), 3).unwrap();
        assert_eq!(s.train.representation, RepresentationKind::Grid);
        assert_eq!(s.train.seed, 3);
        assert_eq!(s.loop_config().train.iterations, 150);
        assert_eq!(s.loop_config().initial_iterations, s.train.iterations);
    }

    #[test]
    fn file_values_override_defaults() {
        let file = ConfigFile::parse("representation = gaussians\niterations = 12\nround_iterations = 4\nfallback = identity\n").unwrap();
        let s = Settings::from_config(&file, 0).unwrap();
        assert_eq!(s.train.representation, RepresentationKind::Gaussians);
        assert_eq!(s.train.learning_rate, TrainConfig::gaussians().learning_rate);
        let l = s.loop_config();
        assert_eq!((l.initial_iterations, l.train.iterations), (12, 4));
        assert_eq!(l.fallback, FallbackPolicy::Identity);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["keep_fraction = 1.5", "fallback = retry", "representation = mesh", "batch_size = 0"] {
            let file = ConfigFile::parse(text).unwrap();
            assert!(matches!(Settings::from_config(&file, 0), Err(Error::Config(_))), "{text}");
        }
    }
}
