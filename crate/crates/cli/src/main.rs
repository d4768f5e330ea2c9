//! Single binary exposing the whole pipeline as subcommands.
//!
//! Configuration comes from a preset or a JSON file; individual fields can
//! be overridden on the command line with `--set key=value` (nested fields
//! use dots, e.g. `--set seeds.data=17`). Every artifact is stamped with the
//! config hash, and evaluate refuses mismatched artifacts unless --force.
//!
//! Exit codes: 0 ok, 1 generic error, 2 config error, 3 data-format error,
//! 4 numerical divergence, 5 acceptance-threshold failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use vata_core::config::{RunConfig, TrainCond};
use vata_core::error::{Error, Result};
use vata_core::pipeline;

#[derive(Parser)]
#[command(
    name = "vata",
    about = "Visual-aligned text-to-audio sandbox: synthetic triplets, contrastive alignment, latent diffusion, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; defaults to the named preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: desk | paper-scale.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Field overrides, e.g. --set align_epochs=5 --set seeds.data=17.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Print the resolved config before running.
    #[arg(long)]
    show_config: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base: serde_json::Value = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
            }
            None => serde_json::to_value(RunConfig::preset(&self.preset)?).unwrap(),
        };
        let patched = apply_overrides(base, &self.sets)?;
        let cfg: RunConfig = serde_json::from_value(patched)
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        if self.show_config {
            println!("{}", cfg.to_json());
        }
        Ok(cfg)
    }
}

fn apply_overrides(mut json: serde_json::Value, sets: &[String]) -> Result<serde_json::Value> {
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {set:?}")))?;
        // Numbers and booleans parse as JSON; anything else is a string.
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let pointer = format!("/{}", key.replace('.', "/"));
        match json.pointer_mut(&pointer) {
            Some(slot) => *slot = value,
            None => return Err(Error::config(format!("unknown config field {key:?}"))),
        }
    }
    Ok(json)
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test dataset files.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the visual-text alignment module.
    TrainAlign {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the latent codec.
    TrainCodec {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a conditional denoiser.
    TrainDiffusion {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding align/codec snapshots; denoiser lands here too.
        #[arg(long)]
        out: PathBuf,
        /// Condition source override: aligned_text | raw_text | audio_embedding.
        #[arg(long)]
        cond: Option<String>,
        /// Snapshot base name; defaults to denoiser-aligned / denoiser-text /
        /// denoiser-audio depending on the condition source.
        #[arg(long)]
        name: Option<String>,
    },
    /// Generate mel-spectrograms from a text prompt (and optional video
    /// frames for the visual-aligned condition).
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with align/codec/denoiser snapshots.
        #[arg(long)]
        models: PathBuf,
        /// Comma-separated token ids, e.g. "0,5,1".
        #[arg(long)]
        tokens: String,
        /// Dataset file to pull frame features from (visual-aligned mode).
        #[arg(long)]
        frames_from: Option<PathBuf>,
        /// Sample index within --frames-from.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Denoiser snapshot name; defaults by condition mode.
        #[arg(long)]
        denoiser: Option<String>,
        /// Number of mels to generate.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Output dataset file for the generated mels.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compute the evaluation report (IS/KL/FAD/FD + onset alignment).
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Baseline denoiser snapshot name for the onset comparison.
        #[arg(long, default_value = "denoiser-text")]
        baseline: String,
        /// Skip the baseline arm entirely.
        #[arg(long)]
        no_baseline: bool,
        /// Fail (exit 5) when the onset criterion does not hold.
        #[arg(long = "assert")]
        assert_thresholds: bool,
        /// Score the reference data against itself (FAD/FD sanity mode).
        #[arg(long)]
        self_test: bool,
        /// Ignore config-hash mismatches on loaded artifacts.
        #[arg(long)]
        force: bool,
    },
    /// Run the finite-difference gradient suites and print the max relative
    /// error per module.
    GradCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            pipeline::gen_data(&cfg, &out)?;
            println!(
                "wrote train/val/test ({} / {} / {} samples) to {} [config {}]",
                cfg.train_samples,
                cfg.val_samples,
                cfg.test_samples,
                out.display(),
                cfg.config_hash()
            );
            Ok(())
        }
        Command::TrainAlign { cfg, data, out } => {
            let cfg = cfg.resolve()?;
            let report = pipeline::train_align(&cfg, &data, &out)?;
            println!(
                "alignment trained for {} epochs: loss {:.4} -> {:.4} (val {:.4})",
                report.epochs, report.first_train_loss, report.final_train_loss, report.final_val_loss
            );
            Ok(())
        }
        Command::TrainCodec { cfg, data, out } => {
            let cfg = cfg.resolve()?;
            let report = pipeline::train_codec_stage(&cfg, &data, &out)?;
            println!(
                "codec trained for {} epochs: val mse {:.6} -> {:.6}",
                report.epochs, report.first_val_mse, report.final_val_mse
            );
            Ok(())
        }
        Command::TrainDiffusion {
            cfg,
            data,
            out,
            cond,
            name,
        } => {
            let cfg = cfg.resolve()?;
            let source = match cond.as_deref() {
                None => cfg.train_cond,
                Some("aligned_text") => TrainCond::AlignedText,
                Some("raw_text") => TrainCond::RawText,
                Some("audio_embedding") => TrainCond::AudioEmbedding,
                Some(other) => {
                    return Err(Error::config(format!(
                        "unknown condition source {other:?}"
                    )))
                }
            };
            let name = name.unwrap_or_else(|| default_denoiser_name(source).to_string());
            let report = pipeline::train_diffusion(&cfg, &data, &out, source, &name)?;
            println!(
                "denoiser {name} trained for {} epochs: loss {:.4} -> {:.4}",
                report.epochs, report.first_train_loss, report.final_train_loss
            );
            Ok(())
        }
        Command::Sample {
            cfg,
            models,
            tokens,
            frames_from,
            index,
            denoiser,
            count,
            out,
            force,
        } => {
            let cfg = cfg.resolve()?;
            sample_command(
                &cfg,
                &models,
                &tokens,
                frames_from.as_deref(),
                index,
                denoiser,
                count,
                &out,
                force,
            )
        }
        Command::Evaluate {
            cfg,
            data,
            models,
            out,
            baseline,
            no_baseline,
            assert_thresholds,
            self_test,
            force,
        } => {
            let cfg = cfg.resolve()?;
            let opts = pipeline::EvalOptions {
                baseline_name: if no_baseline { None } else { Some(baseline) },
                force,
                assert_thresholds,
                identity_check: self_test,
            };
            let report = pipeline::evaluate(&cfg, &data, &models, &out, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(())
        }
        Command::GradCheck { cfg, seeds } => {
            let cfg = cfg.resolve()?;
            let report = pipeline::grad_check_all(&cfg, seeds)?;
            println!(
                "contrastive  max rel err: {:.3e}",
                report.contrastive_max_rel_err
            );
            println!(
                "alignment    max rel err: {:.3e}",
                report.alignment_max_rel_err
            );
            println!(
                "diffusion    max rel err: {:.3e}",
                report.diffusion_max_rel_err
            );
            println!(
                "({} seeds per suite, {:.2}s)",
                report.seeds_per_suite, report.elapsed_seconds
            );
            if report.max_err() >= 1e-4 {
                return Err(Error::Threshold(format!(
                    "gradient check failed: max relative error {:.3e} >= 1e-4",
                    report.max_err()
                )));
            }
            Ok(())
        }
    }
}

fn default_denoiser_name(source: TrainCond) -> &'static str {
    match source {
        TrainCond::AlignedText => "denoiser-aligned",
        TrainCond::RawText => "denoiser-text",
        TrainCond::AudioEmbedding => "denoiser-audio",
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_command(
    cfg: &RunConfig,
    models: &std::path::Path,
    tokens: &str,
    frames_from: Option<&std::path::Path>,
    index: usize,
    denoiser: Option<String>,
    count: usize,
    out: &std::path::Path,
    force: bool,
) -> Result<()> {
    use vata_core::diffusion::pool_condition;
    use vata_core::encoders::{encode_text, encode_video};
    use vata_core::synthdata::{read_dataset, write_dataset, EventScript, TripletSample};

    let token_ids: Vec<u32> = tokens
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("bad token id {t:?}")))
        })
        .collect::<Result<_>>()?;
    if token_ids.is_empty() {
        return Err(Error::invalid("need at least one token"));
    }

    let enc = pipeline::build_encoders(cfg);
    let codec = pipeline::load_codec(cfg, models, force)?;
    let (_, t_pool) = encode_text(&enc.text, &token_ids)?;

    let (cond, frames, den_name) = match frames_from {
        Some(path) => {
            let (_, samples) = read_dataset(path)?;
            let sample = samples.get(index).ok_or_else(|| {
                Error::invalid(format!("index {index} out of range ({} samples)", samples.len()))
            })?;
            let align = pipeline::load_alignment(cfg, models, force)?;
            let video = encode_video(&enc.video, &sample.frame_features)?;
            let (aligned, _) = align.forward(&video, &t_pool)?;
            (
                pool_condition(&aligned)?,
                sample.frame_features.clone(),
                denoiser.unwrap_or_else(|| "denoiser-aligned".to_string()),
            )
        }
        None => (
            vata_core::diffusion::ConditionVector::from_unit(t_pool.clone())?,
            vata_core::numerics::DenseMatrix::zeros(cfg.clip_len, cfg.video_dim),
            denoiser.unwrap_or_else(|| "denoiser-text".to_string()),
        ),
    };

    let den = pipeline::load_denoiser(cfg, models, &den_name, force)?;
    let conds = vec![cond; count];
    let mels = pipeline::sample_mels(cfg, &codec, &den, &conds, 0)?;

    let samples: Vec<TripletSample> = mels
        .into_iter()
        .map(|mel| TripletSample {
            mel: mel.map(|v| v as f32 as f64),
            frame_features: frames.clone(),
            token_ids: token_ids.clone(),
            script: EventScript { events: vec![] },
        })
        .collect();
    write_dataset(out, &cfg.synth_config(), &samples)?;
    println!(
        "wrote {} generated mel(s) to {} using {}",
        samples.len(),
        out.display(),
        den_name
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let payload = serde_json::json!({
                "error": match &err {
                    Error::Config(_) => "config",
                    Error::Format { .. } => "data-format",
                    Error::Divergence { .. } => "numerical-divergence",
                    Error::Threshold(_) => "threshold",
                    Error::InvalidArgument(_) => "invalid-argument",
                    Error::Shape(_) => "shape",
                    Error::Degenerate(_) => "degenerate-input",
                    Error::Io(_) => "io",
                },
                "message": err.to_string(),
            });
            eprintln!("{payload}");
            std::process::exit(err.exit_code());
        }
    }
}
