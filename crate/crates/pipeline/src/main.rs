use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use echoanat::commands::{self, EvaluateSources};
use echoanat::run::write_artifact;
use echoanat::{api, RunConfig};
use echoanat_core::cyclegan::Preset;
use echoanat_core::segmentation::InitSpec;
use echoanat_core::ImageGrid;

/// Ultrasound to pseudo-anatomical translation, segmentation and evaluation.
#[derive(Parser)]
#[command(name = "echoanat", version)]
struct Cli {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the split, the synthetic data and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model size preset.
    #[arg(long, global = true, value_parser = ["paper", "desk"])]
    preset: Option<String>,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the stratified split manifest and the patch index.
    Prepare,
    /// Render both synthetic domains into the dataset roots.
    Synth,
    /// Train or resume the translation model.
    Train {
        /// Override `training.epochs`.
        #[arg(long)]
        epochs: Option<u64>,
    },
    /// Translate ultrasound images (default: the test split).
    Translate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Image files or directories.
        inputs: Vec<PathBuf>,
    },
    /// Segment the test split, or one image when `--image` is given.
    Segment {
        #[arg(long, requires_all = ["center", "radius", "out"])]
        image: Option<PathBuf>,
        /// Seed centre as `row,col`.
        #[arg(long)]
        center: Option<String>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score segmentations against manual and re-segmented references.
    Evaluate {
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        manual: Option<PathBuf>,
        #[arg(long)]
        reseg: Option<PathBuf>,
    },
    /// Write the markdown report and distribution plot.
    Report,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Model used to translate images on request.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let path = std::fs::canonicalize(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::load(&path)?
        }
        None => {
            let mut cfg = RunConfig::default();
            cfg.resolve_paths(&std::env::current_dir()?);
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(preset) = &cli.preset {
        cfg.model.preset = preset.parse::<Preset>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_center(text: &str) -> anyhow::Result<(f64, f64)> {
    let Some((r, c)) = text.split_once(',') else {
        bail!("--center expects `row,col`, got `{text}`");
    };
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let force = cli.force;
    match cli.command {
        Command::Prepare => {
            let s = commands::prepare(&cfg, force)?;
            println!(
                "split: {} train, {} validation, {} test; {} patches",
                s.train, s.validation, s.test, s.patches
            );
        }
        Command::Synth => {
            let n = commands::synth(&cfg, force)?;
            println!(
                "wrote {n} images under {} and {}",
                cfg.dataset.root.display(),
                cfg.dataset.anatomy_root.display()
            );
        }
        Command::Train { epochs } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let s = commands::train(&cfg, force)?;
            println!(
                "trained {} epoch(s) on {} + {} patches; now at epoch {}, step {}",
                s.epochs_run, s.us_patches, s.pa_patches, s.epoch, s.step
            );
        }
        Command::Translate {
            checkpoint,
            out,
            inputs,
        } => {
            let s = commands::translate_images(&cfg, checkpoint.as_deref(), &inputs, out.as_deref(), force)?;
            println!("translated {} image(s)", s.written.len());
            if !s.failed.is_empty() {
                for (path, err) in &s.failed {
                    eprintln!("failed: {}: {err}", path.display());
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Segment {
            image: Some(image),
            center,
            radius,
            out,
        } => {
            let img = ImageGrid::load_png(&image)?;
            let init = InitSpec::Circle {
                center: parse_center(center.as_deref().unwrap_or_default())?,
                radius: radius.unwrap_or_default(),
            };
            let result = commands::segment_image(&img, &init, &cfg)?;
            let out = out.unwrap_or_default();
            write_artifact(&out, &result.mask.encode_png()?, force)?;
            println!(
                "{} iteration(s){}, area {} px -> {}",
                result.iterations,
                if result.stopped_early { " (converged)" } else { "" },
                result.mask.area(),
                out.display()
            );
        }
        Command::Segment { image: None, .. } => {
            let s = commands::segment(&cfg, force)?;
            println!(
                "segmented {} lesion(s); {} test image(s) without a reference lesion",
                s.segmented,
                s.skipped.len()
            );
        }
        Command::Evaluate { masks, manual, reseg } => {
            let e = commands::evaluate(&cfg, &EvaluateSources { masks, manual, reseg }, force)?;
            print!("{}", e.summary.to_markdown());
            if !e.unmatched.is_empty() {
                eprintln!("unmatched ids: {}", e.unmatched.join(", "));
            }
        }
        Command::Report => {
            let path = commands::report(&cfg, force)?;
            println!("report written to {}", path.display());
        }
        Command::Serve { host, port, checkpoint } => {
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let state = api::AppState::new(&cfg, checkpoint.as_deref().map(Path::new))?;
                api::serve(state, addr).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
