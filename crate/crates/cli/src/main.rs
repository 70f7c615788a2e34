//! Command-line front end.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use pseudoview::enhance::{
    augment_with_noise, make_duos, write_quartets, Enhancer, IdentityEnhancer, OracleEnhancer, RemoteConfig, RemoteEnhancer,
};
use pseudoview::enhance::EnhanceError;
use pseudoview::harness::config::ConfigFile;
use pseudoview::harness::dataset::{encode_depth, load_scene, make_dataset, SceneDataset, Split, SCENE_FILE};
use pseudoview::harness::scene::{generate_scene, SyntheticScene};
use pseudoview::optim::{grad_check, loss_trace_csv, train, GradCheckConfig, Representation, RepresentationKind};
use pseudoview::pipeline::{evaluate, metrics_csv, run_deceptive_loop};
use pseudoview::{Error, Result};

use settings::Settings;

/// Exit code of a gradient check that exceeds its tolerance.
const NUMERICAL_ABORT: u8 = 5;
const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "pseudoview", version, about = "Sparse-view reconstruction densified with enhanced pseudo-observations")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural scene description.
    MakeScene,
    /// Render a scene from an arc of cameras into a dataset directory.
    MakeDataset {
        /// Scene JSON; generated from the seed when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Fit a representation to the training views of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the densification loop on a dataset.
    Densify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Render a checkpoint at the dataset's cameras.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Report PSNR and SSIM of a checkpoint per split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write coarse/fine training quartets for an enhancer.
    MakeDuos {
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck {
        #[arg(long, default_value = "grid")]
        representation: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(path) => ConfigFile::read(path)?,
        None => ConfigFile::default(),
    };
    let settings = Settings::from_config(&file, cli.seed)?;
    match &cli.command {
        Command::MakeScene => {
            let scene = generate_scene(cli.seed, settings.object_count)?;
            let path = cli.out.join(SCENE_FILE);
            write(&path, scene.to_json())?;
            println!("wrote {}", path.display());
        }
        Command::MakeDataset { scene } => {
            let scene = match scene {
                Some(path) => read_scene(path)?,
                None => generate_scene(cli.seed, settings.object_count)?,
            };
            let (ds, _) = make_dataset(&scene, settings.view_count, &settings.ring, settings.intrinsics()?, cli.seed, &cli.out)?;
            println!(
                "wrote {} train and {} test views to {}",
                ds.views(Split::Train).len(),
                ds.views(Split::Test).len(),
                cli.out.display()
            );
        }
        Command::Train { data } => {
            let ds = SceneDataset::load(data)?;
            let cfg = settings.train_config();
            let (rep, trace) = train(Representation::init(&cfg, &ds.bbox)?, &ds.train_views(), &cfg)?;
            ensure_dir(&cli.out)?;
            rep.save(&cli.out.join("checkpoint.bin"))?;
            write(&cli.out.join("loss.csv"), loss_trace_csv(&trace))?;
            report_eval(&rep, &ds, &cfg.render)?;
        }
        Command::Densify { data } => {
            let ds = SceneDataset::load(data)?;
            let cfg = settings.loop_config();
            let enhancer = build_enhancer(&settings, data)?;
            let outcome = run_deceptive_loop(&ds.train_views(), &ds.test_views(), &ds.bbox, enhancer.as_ref(), &cfg)?;
            ensure_dir(&cli.out)?;
            outcome.representation.save(&cli.out.join("checkpoint.bin"))?;
            write(&cli.out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
            write(&cli.out.join("loss.csv"), loss_trace_csv(&outcome.loss_trace))?;
            outcome.pool.to_dataset(ds.intrinsics, ds.bbox).save(&cli.out.join("pool"))?;
            print!("{}", metrics_csv(&outcome.metrics));
        }
        Command::Render { data, checkpoint, split } => {
            let ds = SceneDataset::load(data)?;
            let rep = Representation::load(checkpoint)?;
            let opts = settings.eval_render();
            let dir = cli.out.join("renders");
            ensure_dir(&dir)?;
            let mut count = 0;
            for (i, frame) in ds.frames.iter().enumerate() {
                let wanted = match split {
                    SplitArg::All => true,
                    SplitArg::Train => frame.split == Split::Train,
                    SplitArg::Test => frame.split == Split::Test,
                };
                if !wanted {
                    continue;
                }
                let view = rep.render(&pseudoview::geometry::Camera::new(ds.intrinsics, frame.pose), &opts);
                view.rgb.write_png(&dir.join(format!("{i:03}.png")))?;
                encode_depth(&view.depth, &view.depth_validity()).write_pfm(&dir.join(format!("{i:03}_depth.pfm")))?;
                count += 1;
            }
            println!("rendered {count} views to {}", dir.display());
        }
        Command::Eval { data, checkpoint } => {
            let ds = SceneDataset::load(data)?;
            let rep = Representation::load(checkpoint)?;
            report_eval(&rep, &ds, &settings.eval_render())?;
        }
        Command::MakeDuos { data } => {
            let ds = SceneDataset::load(data)?;
            let cameras: Vec<_> = ds.test_views().into_iter().map(|v| v.camera).collect();
            if cameras.is_empty() {
                return Err(Error::Data("make-duos renders at the test views; the dataset has none".into()));
            }
            let cfg = settings.train_config();
            let mut quartets = make_duos(&ds.train_views(), &ds.bbox, &cameras, settings.subset_fraction, &cfg, &cfg)?;
            if settings.noise_std > 0.0 {
                let n = quartets.len();
                let noisy: Vec<_> = quartets
                    .iter()
                    .map(|q| {
                        let mut a = augment_with_noise(q, settings.noise_std, cli.seed ^ q.id as u64);
                        a.id += n;
                        a
                    })
                    .collect();
                quartets.extend(noisy);
            }
            write_quartets(&cli.out, &quartets)?;
            println!("wrote {} quartets to {}", quartets.len(), cli.out.join("quartets").display());
        }
        Command::GradCheck { representation } => {
            let kind: RepresentationKind = representation.parse()?;
            let report = grad_check(&GradCheckConfig {
                seed: cli.seed,
                ..GradCheckConfig::new(kind)
            });
            println!(
                "{kind}: checked {} parameters, skipped {}, max relative error {:.3e} (worst {} #{}: analytic {:.6e}, numeric {:.6e})",
                report.checked,
                report.skipped,
                report.max_relative_error,
                report.worst.0,
                report.worst.1,
                report.worst.2,
                report.worst.3
            );
            if !(report.max_relative_error < GRAD_CHECK_TOLERANCE) {
                return Ok(ExitCode::from(NUMERICAL_ABORT));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn build_enhancer(settings: &Settings, data: &Path) -> Result<Box<dyn Enhancer>> {
    match settings.enhancer.as_str() {
        "identity" => Ok(Box::new(IdentityEnhancer)),
        "oracle" => Ok(Box::new(OracleEnhancer { scene: load_scene(data)? })),
        "remote" => {
            let endpoint = settings
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("enhancer = remote needs an endpoint".into()))?;
            let remote = RemoteEnhancer::new(RemoteConfig {
                timeout: Duration::from_millis(settings.timeout_ms),
                retries: settings.retries,
                ..RemoteConfig::new(endpoint.clone())
            })?;
            if !remote.healthy() {
                return Err(EnhanceError::Unavailable {
                    attempts: 1,
                    last: format!("{endpoint}/healthz did not answer ok"),
                }
                .into());
            }
            Ok(Box::new(remote))
        }
        other => Err(Error::Config(format!("unknown enhancer `{other}` (expected identity, oracle or remote)"))),
    }
}

fn report_eval(rep: &Representation, ds: &SceneDataset, opts: &pseudoview::volren::RenderOptions) -> Result<()> {
    let opts = pseudoview::volren::RenderOptions { jitter: false, ..*opts };
    println!("split,views,psnr,ssim");
    for (name, split) in [("train", Split::Train), ("test", Split::Test)] {
        let views = ds.views(split);
        let (p, s) = evaluate(rep, &views, &opts)?;
        println!("{name},{},{p:.4},{s:.4}", views.len());
    }
    Ok(())
}

fn read_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    SyntheticScene::from_json(&text)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write(path: &Path, contents: String) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
