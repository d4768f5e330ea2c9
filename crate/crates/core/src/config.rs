//! Run configuration: every tunable in one JSON-serializable struct, with
//! named presets, whole-config validation, and a content hash that gets
//! stamped into every artifact the pipeline writes.

use crate::alignment::AlignmentConfig;
use crate::codec::CodecConfig;
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::synthdata::SynthConfig;

use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which tensor plays the "text" side of the contrastive objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastTarget {
    /// Visual-aligned text embeddings (the trained fusion output).
    AlignedText,
    /// Raw video embeddings; no gradient reaches the fusion network, kept for
    /// comparison runs.
    RawVisual,
}

/// Condition source for diffusion training (and matched sampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainCond {
    /// Pooled visual-aligned text embedding.
    AlignedText,
    /// Pooled raw text embedding (text-only baseline arm).
    RawText,
    /// Pooled per-second audio embedding.
    AudioEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfgGuidance {
    pub enabled: bool,
    /// Probability of dropping the condition during training.
    pub dropout: f64,
    /// Guidance scale at sampling time; 0 disables extrapolation.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub encoders: u64,
    pub align: u64,
    pub codec: u64,
    pub diffusion: u64,
    pub sample: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Shared embedding space.
    pub embed_dim: usize,
    pub encoder_hidden: usize,

    // Synthetic data.
    pub clip_len: usize,
    pub freq_bins: usize,
    pub video_dim: usize,
    pub num_classes: usize,
    pub max_events: usize,
    pub ambience_palette: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,

    // Codec.
    pub latent_channels: usize,
    pub compression: usize,
    pub codec_epochs: usize,
    pub codec_lr: f64,
    pub codec_batch: usize,

    // Alignment.
    pub align_depth: usize,
    pub align_heads: usize,
    pub align_ff_hidden: usize,
    pub fusion_hidden: usize,
    pub positional_encoding: bool,
    pub tau: f64,
    pub align_epochs: usize,
    pub align_lr: f64,
    pub align_batch: usize,
    pub symmetric_contrastive: bool,
    pub contrast_target: ContrastTarget,

    // Diffusion.
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub denoiser_hidden: usize,
    pub denoiser_layers: usize,
    pub t_embed_dim: usize,
    pub diffusion_epochs: usize,
    pub diffusion_lr: f64,
    pub diffusion_batch: usize,
    pub train_cond: TrainCond,
    pub squared_noise_loss: bool,
    pub cfg_guidance: CfgGuidance,

    pub seeds: Seeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Desk-scale preset: small enough for a single CPU core end to end.
    pub fn desk() -> Self {
        RunConfig {
            embed_dim: 64,
            encoder_hidden: 128,
            clip_len: 10,
            freq_bins: 64,
            video_dim: 32,
            num_classes: 8,
            max_events: 2,
            ambience_palette: 256,
            train_samples: 4096,
            val_samples: 512,
            test_samples: 256,
            latent_channels: 8,
            compression: 2,
            codec_epochs: 15,
            codec_lr: 1e-2,
            codec_batch: 32,
            align_depth: 2,
            align_heads: 8,
            align_ff_hidden: 128,
            fusion_hidden: 320,
            positional_encoding: true,
            tau: 0.07,
            align_epochs: 40,
            align_lr: 2e-3,
            align_batch: 32,
            symmetric_contrastive: false,
            contrast_target: ContrastTarget::AlignedText,
            diffusion_steps: 100,
            beta_min: 1e-4,
            beta_max: 0.1,
            denoiser_hidden: 256,
            denoiser_layers: 3,
            t_embed_dim: 32,
            diffusion_epochs: 48,
            diffusion_lr: 1e-3,
            diffusion_batch: 32,
            train_cond: TrainCond::AlignedText,
            squared_noise_loss: true,
            cfg_guidance: CfgGuidance {
                enabled: false,
                dropout: 0.1,
                scale: 0.0,
            },
            seeds: Seeds {
                data: 11,
                encoders: 22,
                align: 33,
                codec: 44,
                diffusion: 55,
                sample: 66,
                eval: 77,
            },
        }
    }

    /// Full-scale preset: published training settings (depth 4, dim 768,
    /// 8 heads, lr 1.5e-4, batch 128, 30 epochs, 1000 diffusion steps).
    pub fn paper_scale() -> Self {
        let mut cfg = RunConfig::desk();
        cfg.embed_dim = 768;
        cfg.encoder_hidden = 512;
        cfg.align_depth = 4;
        cfg.align_heads = 8;
        cfg.align_ff_hidden = 4 * 768;
        cfg.fusion_hidden = 2 * 768;
        cfg.align_lr = 1.5e-4;
        cfg.align_batch = 128;
        cfg.align_epochs = 30;
        cfg.diffusion_steps = 1000;
        cfg.beta_max = 0.02;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper-scale" => Ok(RunConfig::paper_scale()),
            other => Err(Error::config(format!(
                "unknown preset {other:?}; available: desk, paper-scale"
            ))),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validate the whole configuration before any run.
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.align_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} must be a positive multiple of align_heads {}",
                self.embed_dim, self.align_heads
            )));
        }
        self.synth_config().validate()?;
        self.codec_config().validate()?;
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if self.align_batch < 2 {
            return Err(Error::config("align_batch must be at least 2"));
        }
        if self.cfg_guidance.enabled
            && !(0.0..1.0).contains(&self.cfg_guidance.dropout)
        {
            return Err(Error::config("cfg_guidance.dropout must lie in [0, 1)"));
        }
        // The pipeline schedule must end near-isotropic.
        let schedule = self.schedule()?;
        schedule.validate_terminal()?;
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 {
            return Err(Error::config("all dataset splits must be non-empty"));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            clip_len: self.clip_len,
            freq_bins: self.freq_bins,
            video_dim: self.video_dim,
            num_classes: self.num_classes,
            max_events: self.max_events,
            ambience_palette: self.ambience_palette,
            palette_seed: self.seeds.data,
            ..SynthConfig::default()
        }
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            channels: self.latent_channels,
            compression: self.compression,
            clip_len: self.clip_len,
            freq_bins: self.freq_bins,
        }
    }

    pub fn alignment_config(&self) -> AlignmentConfig {
        AlignmentConfig {
            model_dim: self.embed_dim,
            depth: self.align_depth,
            heads: self.align_heads,
            ff_hidden: self.align_ff_hidden,
            fusion_hidden: self.fusion_hidden,
            positional_encoding: self.positional_encoding,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(
            ScheduleKind::Linear,
            self.diffusion_steps,
            self.beta_min,
            self.beta_max,
        )
    }

    /// FNV-1a hash of the canonical JSON serialization, as 16 hex digits.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_validates() {
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn paper_scale_preset_validates() {
        RunConfig::paper_scale().validate().unwrap();
    }

    #[test]
    fn desk_schedule_is_terminal() {
        let cfg = RunConfig::desk();
        let s = cfg.schedule().unwrap();
        assert!(s.terminal_alpha_bar() < 0.01, "{}", s.terminal_alpha_bar());
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.tau = 0.08;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash(), RunConfig::desk().config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn json_roundtrip() {
        let a = RunConfig::paper_scale();
        let json = a.to_json();
        let b: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut json: serde_json::Value = serde_json::from_str(&RunConfig::desk().to_json()).unwrap();
        json.as_object_mut()
            .unwrap()
            .insert("not_a_field".into(), serde_json::json!(1));
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_value(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.align_heads = 7; // 64 % 7 != 0
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::desk();
        cfg.compression = 3; // does not divide 10
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::desk();
        cfg.beta_max = 0.02; // N=100 schedule no longer terminal
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::desk();
        cfg.align_batch = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        assert!(matches!(RunConfig::preset("huge"), Err(Error::Config(_))));
    }
}
