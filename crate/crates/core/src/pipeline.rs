//! End-to-end pipeline stages shared by the CLI and the acceptance suite:
//! data generation, alignment training, codec training, diffusion training,
//! sampling, evaluation and the gradient-check suites. Every stage is a pure
//! function of (config, inputs on disk) and stamps the config hash into the
//! artifacts it writes.

use crate::alignment::AlignmentParams;
use crate::codec::{self, CodecParams, LatentTensor};
use crate::config::{ContrastTarget, RunConfig, TrainCond};
use crate::contrastive::{temporal_infonce, ContrastiveConfig};
use crate::diffusion::{
    ddpm_sample, loss_step, pool_condition, ConditionVector, DenoiserConfig, DenoiserParams,
    NoiseLossKind, NoiseSchedule,
};
use crate::encoders::{
    encode_audio, encode_text, encode_video, EmbeddingSequence, EncoderWeights,
};
use crate::error::{Error, Result};
use crate::metrics::{
    classifier_accuracy, fit_gaussian, frechet_distance, inception_score, paired_kl,
    pooled_audio_feature, train_classifier, ClassifierParams,
};
use crate::numerics::{DenseMatrix, Rng};
use crate::snapshot::{self, Block};
use crate::synthdata::{
    self, generate_script, render_triplet_with_palette, Palette, TripletSample,
    TEST_STREAM_BASE, TRAIN_STREAM_BASE, VAL_STREAM_BASE,
};

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

/// The three frozen modality encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    pub text: EncoderWeights,
    pub audio: EncoderWeights,
    pub video: EncoderWeights,
}

pub fn build_encoders(cfg: &RunConfig) -> Encoders {
    let vocab = cfg.synth_config().vocab_size();
    Encoders {
        text: EncoderWeights::text(
            vocab,
            cfg.embed_dim,
            cfg.encoder_hidden,
            Rng::substream(cfg.seeds.encoders, 0).next_u64(),
        ),
        audio: EncoderWeights::audio(
            cfg.freq_bins,
            cfg.embed_dim,
            cfg.encoder_hidden,
            Rng::substream(cfg.seeds.encoders, 1).next_u64(),
        ),
        video: EncoderWeights::video(
            cfg.video_dim,
            cfg.embed_dim,
            cfg.encoder_hidden,
            Rng::substream(cfg.seeds.encoders, 2).next_u64(),
        ),
    }
}

impl Encoders {
    pub fn to_blocks(&self) -> Vec<Block> {
        let mut blocks = self.text.to_blocks();
        blocks.extend(self.audio.to_blocks());
        blocks.extend(self.video.to_blocks());
        blocks
    }
}

// ---------------------------------------------------------------------------
// Dataset generation and loading
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitMeta {
    pub split: String,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
}

fn split_meta_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.meta.json"))
}

fn split_bin_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.bin"))
}

fn generate_split(
    cfg: &RunConfig,
    count: usize,
    stream_base: u64,
    palette: &Palette,
) -> Result<Vec<TripletSample>> {
    let synth = cfg.synth_config();
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut script_rng = Rng::substream(cfg.seeds.data, stream_base + 2 * i as u64);
        let mut render_rng = Rng::substream(cfg.seeds.data, stream_base + 2 * i as u64 + 1);
        let script = generate_script(
            &mut script_rng,
            synth.clip_len,
            synth.max_events,
            synth.num_classes,
        );
        samples.push(render_triplet_with_palette(
            &script,
            &mut render_rng,
            &synth,
            palette,
        )?);
    }
    Ok(samples)
}

/// Generate train/val/test splits and write them (plus meta sidecars).
pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let synth = cfg.synth_config();
    let palette = Palette::build(&synth);
    let hash = cfg.config_hash();
    for (split, count, base) in [
        ("train", cfg.train_samples, TRAIN_STREAM_BASE),
        ("val", cfg.val_samples, VAL_STREAM_BASE),
        ("test", cfg.test_samples, TEST_STREAM_BASE),
    ] {
        let samples = generate_split(cfg, count, base, &palette)?;
        synthdata::write_dataset(&split_bin_path(out_dir, split), &synth, &samples)?;
        let meta = SplitMeta {
            split: split.to_string(),
            count,
            seed: cfg.seeds.data,
            config_hash: hash.clone(),
        };
        let mut f = std::fs::File::create(split_meta_path(out_dir, split))?;
        f.write_all(serde_json::to_string_pretty(&meta).unwrap().as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Load one split, checking shape against the config and (unless `force`)
/// the meta sidecar's config hash.
pub fn load_split(
    cfg: &RunConfig,
    dir: &Path,
    split: &str,
    force: bool,
) -> Result<Vec<TripletSample>> {
    let (header, samples) = synthdata::read_dataset(&split_bin_path(dir, split))?;
    if header.clip_len != cfg.clip_len
        || header.freq_bins != cfg.freq_bins
        || header.video_dim != cfg.video_dim
        || header.num_classes != cfg.num_classes
    {
        return Err(Error::config(format!(
            "dataset {split} header disagrees with the current config"
        )));
    }
    let meta_path = split_meta_path(dir, split);
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path)?;
        let meta: SplitMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            msg: format!("{}: {e}", meta_path.display()),
        })?;
        if !force && meta.config_hash != cfg.config_hash() {
            return Err(Error::config(format!(
                "dataset {split} was generated under config {} but the current config hashes to {}; \
                 pass --force to override",
                meta.config_hash,
                cfg.config_hash()
            )));
        }
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Loss curve CSV
// ---------------------------------------------------------------------------

fn write_loss_csv(path: &Path, config_hash: &str, rows: &[(usize, &str, f64)]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("epoch,split,value\n");
    for (epoch, split, value) in rows {
        out.push_str(&format!("{epoch},{split},{value:.12e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Alignment training
// ---------------------------------------------------------------------------

/// Frozen per-sample features consumed by alignment training.
pub struct AlignInputs {
    pub video: EmbeddingSequence,
    pub text_pool: Vec<f64>,
    pub audio: DenseMatrix,
}

pub fn precompute_align_inputs(
    enc: &Encoders,
    samples: &[TripletSample],
) -> Result<Vec<AlignInputs>> {
    samples
        .iter()
        .map(|s| {
            let video = encode_video(&enc.video, &s.frame_features)?;
            let (_, text_pool) = encode_text(&enc.text, &s.token_ids)?;
            let audio = encode_audio(&enc.audio, &s.mel)?.into_matrix();
            Ok(AlignInputs {
                video,
                text_pool,
                audio,
            })
        })
        .collect()
}

fn batch_loss(
    params: &AlignmentParams,
    inputs: &[AlignInputs],
    idx: &[usize],
    cfg: &RunConfig,
    grads: Option<&mut AlignmentParams>,
) -> Result<f64> {
    let loss_cfg = ContrastiveConfig {
        tau: cfg.tau,
        batch: idx.len(),
        timesteps: cfg.clip_len,
        symmetric: cfg.symmetric_contrastive,
    };
    let mut audio = Vec::with_capacity(idx.len());
    let mut text_side = Vec::with_capacity(idx.len());
    let mut caches = Vec::with_capacity(idx.len());
    for &i in idx {
        audio.push(inputs[i].audio.clone());
        match cfg.contrast_target {
            ContrastTarget::AlignedText => {
                let (aligned, cache) = params.forward(&inputs[i].video, &inputs[i].text_pool)?;
                text_side.push(aligned.into_matrix());
                caches.push(Some(cache));
            }
            ContrastTarget::RawVisual => {
                // Literal-equation mode: contrast audio against raw video
                // embeddings. Nothing trainable sits on that path.
                text_side.push(inputs[i].video.matrix().clone());
                caches.push(None);
            }
        }
    }
    let out = temporal_infonce(&audio, &text_side, &loss_cfg)?;
    if let Some(grads) = grads {
        for (cache, d_aligned) in caches.iter().zip(out.text_grads.iter()) {
            if let Some(cache) = cache {
                params.backward(cache, d_aligned, grads);
            }
        }
    }
    Ok(out.loss)
}

fn epoch_loss(
    params: &AlignmentParams,
    inputs: &[AlignInputs],
    batch: usize,
    cfg: &RunConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0usize;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    for chunk in idx.chunks(batch) {
        if chunk.len() < 2 {
            continue;
        }
        total += batch_loss(params, inputs, chunk, cfg, None)?;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainAlignReport {
    pub epochs: usize,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub config_hash: String,
}

/// Train the visual-text alignment module; writes `encoders.{bin,json}`,
/// `align.{bin,json}` and `align_loss.csv` into `out_dir`.
pub fn train_align(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainAlignReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.config_hash();
    let enc = build_encoders(cfg);
    snapshot::write_snapshot(
        &out_dir.join("encoders"),
        "encoders",
        cfg.seeds.encoders,
        &hash,
        &enc.to_blocks(),
    )?;

    let train = load_split(cfg, data_dir, "train", false)?;
    let val = load_split(cfg, data_dir, "val", false)?;
    let train_in = precompute_align_inputs(&enc, &train)?;
    let val_in = precompute_align_inputs(&enc, &val)?;

    let mut init_rng = Rng::substream(cfg.seeds.align, 0);
    let mut params = AlignmentParams::init(cfg.alignment_config(), &mut init_rng)?;
    let mut adam = crate::optim::Adam::new(cfg.align_lr, params.param_count());
    let mut loop_rng = Rng::substream(cfg.seeds.align, 1);

    let mut order: Vec<usize> = (0..train_in.len()).collect();
    let mut csv_rows: Vec<(usize, &str, f64)> = Vec::new();
    let mut first_train_loss = f64::NAN;
    let mut final_train_loss = f64::NAN;
    let mut final_val_loss = f64::NAN;

    for epoch in 1..=cfg.align_epochs {
        loop_rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.align_batch) {
            if chunk.len() < cfg.align_batch {
                continue; // keep every step at the configured batch size
            }
            let mut grads = params.zeros_like();
            let loss = batch_loss(&params, &train_in, chunk, cfg, Some(&mut grads))?;
            let mut flat = params.flatten();
            adam.step(&mut flat, &grads.flatten());
            params.set_from_flat(&flat)?;
            epoch_total += loss;
            batches += 1;
        }
        let train_loss = epoch_total / batches.max(1) as f64;
        let val_loss = epoch_loss(&params, &val_in, cfg.align_batch, cfg)?;
        if epoch == 1 {
            first_train_loss = train_loss;
        }
        final_train_loss = train_loss;
        final_val_loss = val_loss;
        csv_rows.push((epoch, "train", train_loss));
        csv_rows.push((epoch, "val", val_loss));
    }

    write_loss_csv(&out_dir.join("align_loss.csv"), &hash, &csv_rows)?;
    snapshot::write_snapshot(
        &out_dir.join("align"),
        "alignment",
        cfg.seeds.align,
        &hash,
        &params.to_blocks(),
    )?;
    Ok(TrainAlignReport {
        epochs: cfg.align_epochs,
        first_train_loss,
        final_train_loss,
        final_val_loss,
        config_hash: hash,
    })
}

/// Per-timestep retrieval top-1 accuracy: audio row (b, i) must rank its own
/// sample's aligned-text row first among the batch at timestep i.
pub fn retrieval_accuracy(
    params: &AlignmentParams,
    inputs: &[AlignInputs],
    batch: usize,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    for chunk in idx.chunks(batch) {
        if chunk.len() < 2 {
            continue;
        }
        let mut aligned = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (a, _) = params.forward(&inputs[i].video, &inputs[i].text_pool)?;
            aligned.push(a.into_matrix());
        }
        let t_n = aligned[0].rows();
        for (bi, &sample_idx) in chunk.iter().enumerate() {
            let audio = &inputs[sample_idx].audio;
            for i in 0..t_n {
                let arow = audio.row(i);
                let mut best = 0usize;
                let mut best_sim = f64::NEG_INFINITY;
                for (mi, text) in aligned.iter().enumerate() {
                    let sim = crate::numerics::dot(arow, text.row(i));
                    if sim > best_sim {
                        best_sim = sim;
                        best = mi;
                    }
                }
                if best == bi {
                    hits += 1;
                }
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("no full batches to evaluate retrieval on"));
    }
    Ok(hits as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Codec training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TrainCodecReport {
    pub epochs: usize,
    pub first_val_mse: f64,
    pub final_val_mse: f64,
    pub config_hash: String,
}

pub fn train_codec_stage(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<TrainCodecReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.config_hash();
    let train: Vec<DenseMatrix> = load_split(cfg, data_dir, "train", false)?
        .into_iter()
        .map(|s| s.mel)
        .collect();
    let val: Vec<DenseMatrix> = load_split(cfg, data_dir, "val", false)?
        .into_iter()
        .map(|s| s.mel)
        .collect();
    let mut rng = Rng::substream(cfg.seeds.codec, 0);
    let (params, curve) = codec::train_codec(
        &train,
        &val,
        cfg.codec_config(),
        cfg.codec_epochs,
        cfg.codec_lr,
        cfg.codec_batch,
        &mut rng,
    )?;
    let mut rows: Vec<(usize, &str, f64)> = Vec::new();
    for e in &curve {
        rows.push((e.epoch, "train", e.train_mse));
        rows.push((e.epoch, "val", e.val_mse));
    }
    write_loss_csv(&out_dir.join("codec_loss.csv"), &hash, &rows)?;
    snapshot::write_snapshot(
        &out_dir.join("codec"),
        "codec",
        cfg.seeds.codec,
        &hash,
        &params.to_blocks(),
    )?;
    Ok(TrainCodecReport {
        epochs: cfg.codec_epochs,
        first_val_mse: curve.first().map(|e| e.val_mse).unwrap_or(f64::NAN),
        final_val_mse: curve.last().map(|e| e.val_mse).unwrap_or(f64::NAN),
        config_hash: hash,
    })
}

// ---------------------------------------------------------------------------
// Diffusion training
// ---------------------------------------------------------------------------

/// Condition vector for one sample under a given source.
pub fn condition_for_sample(
    enc: &Encoders,
    align: &AlignmentParams,
    sample: &TripletSample,
    source: TrainCond,
) -> Result<ConditionVector> {
    match source {
        TrainCond::AlignedText => {
            let video = encode_video(&enc.video, &sample.frame_features)?;
            let (_, pool) = encode_text(&enc.text, &sample.token_ids)?;
            let (aligned, _) = align.forward(&video, &pool)?;
            pool_condition(&aligned)
        }
        TrainCond::RawText => {
            let (_, pool) = encode_text(&enc.text, &sample.token_ids)?;
            ConditionVector::from_unit(pool)
        }
        TrainCond::AudioEmbedding => {
            let audio = encode_audio(&enc.audio, &sample.mel)?;
            pool_condition(&audio)
        }
    }
    .map_err(|e| match e {
        // A degenerate pool is a data problem, keep the message informative.
        Error::Degenerate(msg) => Error::Degenerate(format!("condition pooling: {msg}")),
        other => other,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainDiffusionReport {
    pub epochs: usize,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub config_hash: String,
}

fn noise_loss_kind(cfg: &RunConfig) -> NoiseLossKind {
    if cfg.squared_noise_loss {
        NoiseLossKind::SquaredMean
    } else {
        NoiseLossKind::UnsquaredNorm
    }
}

/// Train a denoiser conditioned per `source`; writes `<name>.{bin,json}` and
/// `diffusion_loss_<name>.csv`. Both acceptance arms call this with the same
/// seeds so they differ only in the condition source.
pub fn train_diffusion(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    source: TrainCond,
    name: &str,
) -> Result<TrainDiffusionReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.config_hash();
    let enc = build_encoders(cfg);
    let align = load_alignment(cfg, out_dir, false)?;
    let codec = load_codec(cfg, out_dir, false)?;
    let schedule = cfg.schedule()?;

    let train = load_split(cfg, data_dir, "train", false)?;
    let mut latents: Vec<LatentTensor> = Vec::with_capacity(train.len());
    let mut conds: Vec<ConditionVector> = Vec::with_capacity(train.len());
    for s in &train {
        latents.push(codec.encode_mel(&s.mel)?);
        conds.push(condition_for_sample(&enc, &align, s, source)?);
    }

    let den_cfg = DenoiserConfig {
        latent_len: cfg.codec_config().latent_len(),
        t_embed_dim: cfg.t_embed_dim,
        cond_dim: cfg.embed_dim,
        hidden: cfg.denoiser_hidden,
        layers: cfg.denoiser_layers,
    };
    let mut init_rng = Rng::substream(cfg.seeds.diffusion, 0);
    let mut params = DenoiserParams::init(den_cfg, &mut init_rng)?;
    let mut adam = crate::optim::Adam::new(cfg.diffusion_lr, params.param_count());
    let mut loop_rng = Rng::substream(cfg.seeds.diffusion, 1);
    let kind = noise_loss_kind(cfg);
    let zero_cond = ConditionVector::zero(cfg.embed_dim);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut csv_rows: Vec<(usize, &str, f64)> = Vec::new();
    let mut first_train_loss = f64::NAN;
    let mut final_train_loss = f64::NAN;

    for epoch in 1..=cfg.diffusion_epochs {
        loop_rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.diffusion_batch) {
            let mut grads = params.zeros_like();
            let mut chunk_loss = 0.0;
            for &i in chunk {
                let cond = if cfg.cfg_guidance.enabled
                    && loop_rng.next_f64() < cfg.cfg_guidance.dropout
                {
                    &zero_cond
                } else {
                    &conds[i]
                };
                chunk_loss +=
                    loss_step(&params, &schedule, &latents[i], cond, &mut loop_rng, kind, &mut grads)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            let mut flat_grads = grads.flatten();
            for g in flat_grads.iter_mut() {
                *g *= scale;
            }
            let mut flat = params.flatten();
            adam.step(&mut flat, &flat_grads);
            params.set_from_flat(&flat)?;
            epoch_total += chunk_loss;
            seen += chunk.len();
        }
        let train_loss = epoch_total / seen.max(1) as f64;
        if epoch == 1 {
            first_train_loss = train_loss;
        }
        final_train_loss = train_loss;
        csv_rows.push((epoch, "train", train_loss));
    }

    write_loss_csv(
        &out_dir.join(format!("diffusion_loss_{name}.csv")),
        &hash,
        &csv_rows,
    )?;
    snapshot::write_snapshot(
        &out_dir.join(name),
        "denoiser",
        cfg.seeds.diffusion,
        &hash,
        &params.to_blocks(),
    )?;
    Ok(TrainDiffusionReport {
        epochs: cfg.diffusion_epochs,
        first_train_loss,
        final_train_loss,
        config_hash: hash,
    })
}

// ---------------------------------------------------------------------------
// Snapshot loading
// ---------------------------------------------------------------------------

fn check_hash(cfg: &RunConfig, sidecar: &snapshot::Sidecar, what: &str, force: bool) -> Result<()> {
    if !force && sidecar.config_hash != cfg.config_hash() {
        return Err(Error::config(format!(
            "{what} snapshot was written under config {} but the current config hashes to {}; \
             pass --force to override",
            sidecar.config_hash,
            cfg.config_hash()
        )));
    }
    Ok(())
}

pub fn load_alignment(cfg: &RunConfig, dir: &Path, force: bool) -> Result<AlignmentParams> {
    let (sidecar, blocks) = snapshot::read_snapshot(&dir.join("align"))?;
    check_hash(cfg, &sidecar, "alignment", force)?;
    AlignmentParams::from_blocks(&blocks)
}

pub fn load_codec(cfg: &RunConfig, dir: &Path, force: bool) -> Result<CodecParams> {
    let (sidecar, blocks) = snapshot::read_snapshot(&dir.join("codec"))?;
    check_hash(cfg, &sidecar, "codec", force)?;
    CodecParams::from_blocks(&blocks)
}

pub fn load_denoiser(cfg: &RunConfig, dir: &Path, name: &str, force: bool) -> Result<DenoiserParams> {
    let (sidecar, blocks) = snapshot::read_snapshot(&dir.join(name))?;
    check_hash(cfg, &sidecar, name, force)?;
    DenoiserParams::from_blocks(&blocks)
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Generate one mel per condition; sample i draws from substream
/// (seeds.sample, seed_base + i), so two arms sampled with the same base see
/// identical noise.
pub fn sample_mels(
    cfg: &RunConfig,
    codec: &CodecParams,
    denoiser: &DenoiserParams,
    conditions: &[ConditionVector],
    seed_base: u64,
) -> Result<Vec<DenseMatrix>> {
    let schedule = cfg.schedule()?;
    let ccfg = cfg.codec_config();
    let mut out = Vec::with_capacity(conditions.len());
    for (i, cond) in conditions.iter().enumerate() {
        let mut rng = Rng::substream(cfg.seeds.sample, seed_base + i as u64);
        let z = if cfg.cfg_guidance.enabled && cfg.cfg_guidance.scale != 0.0 {
            crate::diffusion::ddpm_sample_guided(
                denoiser,
                &schedule,
                cond,
                cfg.cfg_guidance.scale,
                &mut rng,
                ccfg.channels,
                ccfg.latent_rows(),
                ccfg.latent_cols(),
            )?
        } else {
            ddpm_sample(
                denoiser,
                &schedule,
                cond,
                &mut rng,
                ccfg.channels,
                ccfg.latent_rows(),
                ccfg.latent_cols(),
            )?
        };
        out.push(codec.decode_latent(&z)?);
    }
    Ok(out)
}

/// Fraction of the quiet-to-loud row-energy range at which an onset counts
/// as crossed. Sits well above any noise-floor wobble while staying below
/// the attack of an early (ramp-quietened) event.
pub const ONSET_THRESHOLD_FRACTION: f64 = 0.35;

/// First row whose mean energy crosses ONSET_THRESHOLD_FRACTION of the range
/// between the quietest and loudest rows. Total on any input: a flat mel
/// crosses at row 0.
pub fn mel_energy_onset(mel: &DenseMatrix) -> f64 {
    let energies: Vec<f64> = (0..mel.rows())
        .map(|r| {
            let row = mel.row(r);
            row.iter().sum::<f64>() / row.len() as f64
        })
        .collect();
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = min + ONSET_THRESHOLD_FRACTION * (max - min);
    for (i, &e) in energies.iter().enumerate() {
        if e >= threshold {
            return i as f64;
        }
    }
    (energies.len() - 1) as f64
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnsetReport {
    pub aligned_mean_error: f64,
    pub baseline_mean_error: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleCounts {
    pub test: usize,
    pub generated: usize,
    pub fad_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub is: f64,
    pub kl: f64,
    pub fad: f64,
    pub fd: f64,
    pub onset: OnsetReport,
    pub classifier_val_accuracy: f64,
    pub sample_counts: SampleCounts,
    pub config_hash: String,
}

pub struct EvalOptions {
    /// Also evaluate the raw-text baseline denoiser for the onset gap.
    pub baseline_name: Option<String>,
    /// Skip config-hash checks on loaded artifacts.
    pub force: bool,
    /// Error (exit code 5) when the onset criterion fails.
    pub assert_thresholds: bool,
    /// Score the reference mels against themselves instead of generating
    /// (pipeline smoke test: FAD and FD collapse to ~0).
    pub identity_check: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            baseline_name: Some("denoiser-text".to_string()),
            force: false,
            assert_thresholds: false,
            identity_check: false,
        }
    }
}

fn pooled_rows(enc: &Encoders, mels: &[DenseMatrix]) -> Result<DenseMatrix> {
    let d = enc.audio.embed_dim();
    let mut out = DenseMatrix::zeros(mels.len(), d);
    for (i, mel) in mels.iter().enumerate() {
        let f = pooled_audio_feature(&enc.audio, mel)?;
        out.row_mut(i).copy_from_slice(&f);
    }
    Ok(out)
}

fn frame_rows(enc: &Encoders, mels: &[DenseMatrix]) -> Result<DenseMatrix> {
    let d = enc.audio.embed_dim();
    let t = mels.first().map(|m| m.rows()).unwrap_or(0);
    let mut out = DenseMatrix::zeros(mels.len() * t, d);
    for (i, mel) in mels.iter().enumerate() {
        let seq = encode_audio(&enc.audio, mel)?;
        for r in 0..seq.timesteps() {
            out.row_mut(i * t + r).copy_from_slice(seq.row(r));
        }
    }
    Ok(out)
}

fn posteriors(
    clf: &ClassifierParams,
    enc: &Encoders,
    mels: &[DenseMatrix],
) -> Result<DenseMatrix> {
    let k = clf.num_classes();
    let mut out = DenseMatrix::zeros(mels.len(), k);
    for (i, mel) in mels.iter().enumerate() {
        let f = pooled_audio_feature(&enc.audio, mel)?;
        let p = clf.posterior(&f)?;
        out.row_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

fn mean_onset_error(generated: &[DenseMatrix], reference: &[TripletSample]) -> f64 {
    let mut total = 0.0;
    for (gen, sample) in generated.iter().zip(reference.iter()) {
        let truth = sample.script.first_onset().unwrap_or(0.0);
        total += (mel_energy_onset(gen) - truth).abs();
    }
    total / generated.len() as f64
}

/// Full evaluation: trains the metric classifier, generates test-set mels
/// under the visual-aligned condition (and the raw-text baseline when
/// configured), and writes `report.json`.
pub fn evaluate(
    cfg: &RunConfig,
    data_dir: &Path,
    model_dir: &Path,
    out_dir: &Path,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.config_hash();
    let enc = build_encoders(cfg);
    let align = load_alignment(cfg, model_dir, opts.force)?;
    let codec = load_codec(cfg, model_dir, opts.force)?;
    let den_aligned = load_denoiser(cfg, model_dir, "denoiser-aligned", opts.force)?;

    let train = load_split(cfg, data_dir, "train", opts.force)?;
    let val = load_split(cfg, data_dir, "val", opts.force)?;
    let test = load_split(cfg, data_dir, "test", opts.force)?;

    let mut clf_rng = Rng::substream(cfg.seeds.eval, 0);
    let clf = train_classifier(&train, &enc.audio, cfg.num_classes, 60, 5e-3, &mut clf_rng)?;
    let clf_acc = classifier_accuracy(&clf, &enc.audio, &val)?;

    let ref_mels: Vec<DenseMatrix> = test.iter().map(|s| s.mel.clone()).collect();
    let gen_aligned: Vec<DenseMatrix> = if opts.identity_check {
        ref_mels.clone()
    } else {
        let mut conds = Vec::with_capacity(test.len());
        for s in &test {
            conds.push(condition_for_sample(&enc, &align, s, TrainCond::AlignedText)?);
        }
        sample_mels(cfg, &codec, &den_aligned, &conds, 0)?
    };

    let (baseline_mean, gap, _gen_baseline) = match (&opts.baseline_name, opts.identity_check) {
        (Some(name), false) => {
            let den_text = load_denoiser(cfg, model_dir, name, opts.force)?;
            let mut conds = Vec::with_capacity(test.len());
            for s in &test {
                conds.push(condition_for_sample(&enc, &align, s, TrainCond::RawText)?);
            }
            let gen_baseline = sample_mels(cfg, &codec, &den_text, &conds, 0)?;
            let aligned_err = mean_onset_error(&gen_aligned, &test);
            let baseline_err = mean_onset_error(&gen_baseline, &test);
            (
                Some(baseline_err),
                Some(baseline_err - aligned_err),
                Some(gen_baseline),
            )
        }
        _ => (None, None, None),
    };

    let aligned_err = mean_onset_error(&gen_aligned, &test);

    // Distribution metrics on the visual-aligned arm.
    let ref_pool = pooled_rows(&enc, &ref_mels)?;
    let gen_pool = pooled_rows(&enc, &gen_aligned)?;
    let fd = frechet_distance(&fit_gaussian(&ref_pool)?, &fit_gaussian(&gen_pool)?)?;
    let ref_frames = frame_rows(&enc, &ref_mels)?;
    let gen_frames = frame_rows(&enc, &gen_aligned)?;
    let fad = frechet_distance(&fit_gaussian(&ref_frames)?, &fit_gaussian(&gen_frames)?)?;
    let is = inception_score(&posteriors(&clf, &enc, &gen_aligned)?)?;
    let kl = paired_kl(
        &posteriors(&clf, &enc, &gen_aligned)?,
        &posteriors(&clf, &enc, &ref_mels)?,
    )?;

    let report = EvalReport {
        is,
        kl,
        fad,
        fd,
        onset: OnsetReport {
            aligned_mean_error: aligned_err,
            baseline_mean_error: baseline_mean,
            gap,
        },
        classifier_val_accuracy: clf_acc,
        sample_counts: SampleCounts {
            test: test.len(),
            generated: gen_aligned.len(),
            fad_rows: gen_frames.rows(),
        },
        config_hash: hash,
    };

    let mut f = std::fs::File::create(out_dir.join("report.json"))?;
    f.write_all(serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    f.write_all(b"\n")?;

    if opts.assert_thresholds {
        let gap = report.onset.gap.ok_or_else(|| {
            Error::Threshold("onset assertion requires the baseline denoiser".into())
        })?;
        let baseline = report.onset.baseline_mean_error.unwrap();
        if !(report.onset.aligned_mean_error < baseline) || gap < 1.0 {
            return Err(Error::Threshold(format!(
                "onset criterion failed: aligned {:.3}s vs baseline {:.3}s (gap {:.3}s, need >= 1s)",
                report.onset.aligned_mean_error, baseline, gap
            )));
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Gradient-check suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub contrastive_max_rel_err: f64,
    pub alignment_max_rel_err: f64,
    pub diffusion_max_rel_err: f64,
    pub seeds_per_suite: usize,
    pub elapsed_seconds: f64,
}

impl GradCheckReport {
    pub fn max_err(&self) -> f64 {
        self.contrastive_max_rel_err
            .max(self.alignment_max_rel_err)
            .max(self.diffusion_max_rel_err)
    }
}

/// Run the three finite-difference suites (contrastive loss, alignment
/// attention+fusion, diffusion loss), each over `seeds` random seeds, and
/// report the maximum relative error per module.
pub fn grad_check_all(cfg: &RunConfig, seeds: usize) -> Result<GradCheckReport> {
    use crate::numerics::{finite_diff_grad, grad_relative_error, l2_normalize};
    let start = std::time::Instant::now();

    let unit_rows = |b: usize, t: usize, d: usize, rng: &mut Rng| -> Vec<DenseMatrix> {
        (0..b)
            .map(|_| {
                let mut m = DenseMatrix::zeros(t, d);
                for i in 0..t {
                    let raw: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
                    m.row_mut(i).copy_from_slice(&l2_normalize(&raw).unwrap());
                }
                m
            })
            .collect()
    };

    // (a) temporal contrastive loss w.r.t. the aligned-text tensor.
    let mut contrastive_max: f64 = 0.0;
    for seed in 0..seeds as u64 {
        let (b, t, d) = (6, 4, 8);
        let loss_cfg = ContrastiveConfig {
            tau: cfg.tau,
            batch: b,
            timesteps: t,
            symmetric: cfg.symmetric_contrastive,
        };
        let mut rng = Rng::substream(901, seed);
        let audio = unit_rows(b, t, d, &mut rng);
        let text = unit_rows(b, t, d, &mut rng);
        let out = temporal_infonce(&audio, &text, &loss_cfg)?;
        let flat: Vec<f64> = text.iter().flat_map(|m| m.data().iter().cloned()).collect();
        let probe = |x: &[f64]| {
            let rebuilt: Vec<DenseMatrix> = (0..b)
                .map(|bi| DenseMatrix::from_parts(t, d, x[bi * t * d..(bi + 1) * t * d].to_vec()))
                .collect();
            temporal_infonce(&audio, &rebuilt, &loss_cfg).map(|o| o.loss)
        };
        let numeric = finite_diff_grad(probe, &flat, 1e-5)?;
        let analytic: Vec<f64> = out
            .text_grads
            .iter()
            .flat_map(|m| m.data().iter().cloned())
            .collect();
        contrastive_max = contrastive_max.max(grad_relative_error(&analytic, &numeric));
    }

    // (b) alignment attention + fusion through the contrastive loss.
    let mut alignment_max: f64 = 0.0;
    let small_align = crate::alignment::AlignmentConfig {
        model_dim: 8,
        depth: 1,
        heads: 2,
        ff_hidden: 12,
        fusion_hidden: 8,
        positional_encoding: cfg.positional_encoding,
    };
    for seed in 0..seeds as u64 {
        let (b, t, d) = (3, 3, 8);
        let loss_cfg = ContrastiveConfig {
            tau: cfg.tau.max(0.2), // small nets + tiny tau make fd ill-conditioned
            batch: b,
            timesteps: t,
            symmetric: cfg.symmetric_contrastive,
        };
        let mut rng = Rng::substream(902, seed);
        let mut params = AlignmentParams::init(small_align, &mut rng)?;
        params.fusion.gate1 = 0.5;
        params.fusion.gate2 = 0.3;
        let videos: Vec<EmbeddingSequence> = (0..b)
            .map(|_| {
                EmbeddingSequence::from_rows_normalized(&DenseMatrix::random_normal(
                    t, d, 1.0, &mut rng,
                ))
                .unwrap()
            })
            .collect();
        let pools: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                l2_normalize(&(0..d).map(|_| rng.next_normal()).collect::<Vec<_>>()).unwrap()
            })
            .collect();
        let audio = unit_rows(b, t, d, &mut rng);

        let eval = |p: &AlignmentParams| -> Result<f64> {
            let mut aligned = Vec::with_capacity(b);
            for bi in 0..b {
                let (a, _) = p.forward(&videos[bi], &pools[bi])?;
                aligned.push(a.into_matrix());
            }
            Ok(temporal_infonce(&audio, &aligned, &loss_cfg)?.loss)
        };
        let mut grads = params.zeros_like();
        {
            let mut aligned = Vec::with_capacity(b);
            let mut caches = Vec::with_capacity(b);
            for bi in 0..b {
                let (a, c) = params.forward(&videos[bi], &pools[bi])?;
                aligned.push(a.into_matrix());
                caches.push(c);
            }
            let out = temporal_infonce(&audio, &aligned, &loss_cfg)?;
            for bi in 0..b {
                params.backward(&caches[bi], &out.text_grads[bi], &mut grads);
            }
        }
        let flat = params.flatten();
        let probe = |x: &[f64]| {
            let mut p = params.clone();
            p.set_from_flat(x)?;
            eval(&p)
        };
        let numeric = finite_diff_grad(probe, &flat, 1e-5)?;
        alignment_max = alignment_max.max(grad_relative_error(&grads.flatten(), &numeric));
    }

    // (c) diffusion loss_step at fixed draws.
    let mut diffusion_max: f64 = 0.0;
    let schedule = NoiseSchedule::build(crate::diffusion::ScheduleKind::Linear, 50, 1e-3, 0.2)?;
    let kind = noise_loss_kind(cfg);
    for seed in 0..seeds as u64 {
        let den_cfg = DenoiserConfig {
            latent_len: 8,
            t_embed_dim: 8,
            cond_dim: 6,
            hidden: 16,
            layers: cfg.denoiser_layers.min(3),
        };
        let mut rng = Rng::substream(903, seed);
        let params = DenoiserParams::init(den_cfg, &mut rng)?;
        let cond = ConditionVector::from_unit(
            l2_normalize(&(0..6).map(|_| rng.next_normal()).collect::<Vec<_>>()).unwrap(),
        )?;
        let mut z0 = LatentTensor::zeros(1, 2, 4);
        rng.fill_normal(&mut z0.data);
        let mut eps = LatentTensor::zeros(1, 2, 4);
        rng.fill_normal(&mut eps.data);
        let n = 1 + rng.next_below(schedule.n_steps() as u64) as usize;

        let mut grads = params.zeros_like();
        crate::diffusion::noise_loss_at(&params, &schedule, &z0, &cond, n, &eps, kind, &mut grads)?;
        let flat = params.flatten();
        let probe = |x: &[f64]| {
            let mut q = params.clone();
            q.set_from_flat(x)?;
            let mut sink = q.zeros_like();
            crate::diffusion::noise_loss_at(&q, &schedule, &z0, &cond, n, &eps, kind, &mut sink)
        };
        let numeric = finite_diff_grad(probe, &flat, 1e-5)?;
        diffusion_max = diffusion_max.max(grad_relative_error(&grads.flatten(), &numeric));
    }

    Ok(GradCheckReport {
        contrastive_max_rel_err: contrastive_max,
        alignment_max_rel_err: alignment_max,
        diffusion_max_rel_err: diffusion_max,
        seeds_per_suite: seeds,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
