//! Frozen stub modality encoders: deterministic seeded maps from tokens, mel
//! rows and video frames into a shared D-dimensional embedding space.
//!
//! Each encoder is a random-projection two-layer tanh network, immutable
//! after construction. Nothing in the pipeline ever updates these weights;
//! the trainable alignment module lives downstream of them.

use crate::error::{Error, Result};
use crate::numerics::{l2_norm, l2_normalize, DenseMatrix, Rng};
use crate::snapshot::Block;

/// Mel rows are log-compressed before projection: x = ln(1 + mel / knee).
/// The knee sits at the nominal noise floor, so silence lands around ln(2)
/// with the ambience modulation clearly visible, while event bands land
/// around ln(1 + amp/knee) with their spectral shape preserved additively.
/// A zero mel row maps to exactly zero, i.e. the bias path.
pub const MEL_LOG_KNEE: f64 = 0.02;
/// Input gain applied to log-compressed mel rows.
pub const AUDIO_INPUT_GAIN: f64 = 1.0;
/// Input gain for video frame features (already O(1) scale).
pub const VIDEO_INPUT_GAIN: f64 = 2.0;

/// Unit-norm tolerance for embedding rows.
pub const ROW_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Audio,
    Video,
}

impl Modality {
    pub fn tag(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }
}

/// A sequence of per-timestep embeddings; every row has unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    mat: DenseMatrix,
}

impl EmbeddingSequence {
    /// Validates the unit-row invariant.
    pub fn new(mat: DenseMatrix) -> Result<Self> {
        for r in 0..mat.rows() {
            let n = l2_norm(mat.row(r));
            if (n - 1.0).abs() > ROW_NORM_TOL {
                return Err(Error::invalid(format!(
                    "embedding row {r} has norm {n}, expected 1 within {ROW_NORM_TOL:.0e}"
                )));
            }
        }
        Ok(EmbeddingSequence { mat })
    }

    /// Normalize each row of `mat` and wrap.
    pub fn from_rows_normalized(mat: &DenseMatrix) -> Result<Self> {
        let mut out = DenseMatrix::zeros(mat.rows(), mat.cols());
        for r in 0..mat.rows() {
            let unit = l2_normalize(mat.row(r))?;
            out.row_mut(r).copy_from_slice(&unit);
        }
        Ok(EmbeddingSequence { mat: out })
    }

    pub fn timesteps(&self) -> usize {
        self.mat.rows()
    }

    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.mat.row(i)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.mat
    }
}

/// Elementwise transform applied to raw inputs before the projection.
#[derive(Debug, Clone, Copy, PartialEq)]
enum InputTransform {
    Identity,
    /// x -> ln(1 + x / knee); maps zero to zero.
    LogKnee(f64),
}

impl InputTransform {
    fn apply(&self, v: f64) -> f64 {
        match self {
            InputTransform::Identity => v,
            InputTransform::LogKnee(knee) => (1.0 + v / knee).ln(),
        }
    }
}

/// Frozen weights for one modality encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    modality: Modality,
    /// Raw per-row input dimension (freq bins, video dim, or table width).
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    input_gain: f64,
    transform: InputTransform,
    seed: u64,
    /// Token embedding table; text only.
    table: Option<DenseMatrix>,
    w1: DenseMatrix,
    b1: Vec<f64>,
    w2: DenseMatrix,
    b2: Vec<f64>,
}

impl EncoderWeights {
    fn build(
        modality: Modality,
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        input_gain: f64,
        transform: InputTransform,
        vocab: Option<usize>,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::from_seed(seed);
        let table = vocab.map(|v| DenseMatrix::random_normal(v, input_dim, 1.0, &mut rng));
        let w1 = DenseMatrix::random_normal(
            hidden_dim,
            input_dim,
            1.0 / (input_dim as f64).sqrt(),
            &mut rng,
        );
        let b1: Vec<f64> = (0..hidden_dim).map(|_| 0.3 * rng.next_normal()).collect();
        let w2 = DenseMatrix::random_normal(
            embed_dim,
            hidden_dim,
            1.0 / (hidden_dim as f64).sqrt(),
            &mut rng,
        );
        let b2: Vec<f64> = (0..embed_dim).map(|_| 0.3 * rng.next_normal()).collect();
        EncoderWeights {
            modality,
            input_dim,
            hidden_dim,
            embed_dim,
            input_gain,
            transform,
            seed,
            table,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn text(vocab_size: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        Self::build(
            Modality::Text,
            embed_dim,
            hidden_dim,
            embed_dim,
            1.0,
            InputTransform::Identity,
            Some(vocab_size),
            seed,
        )
    }

    pub fn audio(freq_bins: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        Self::build(
            Modality::Audio,
            freq_bins,
            hidden_dim,
            embed_dim,
            AUDIO_INPUT_GAIN,
            InputTransform::LogKnee(MEL_LOG_KNEE),
            None,
            seed,
        )
    }

    pub fn video(video_dim: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        Self::build(
            Modality::Video,
            video_dim,
            hidden_dim,
            embed_dim,
            VIDEO_INPUT_GAIN,
            InputTransform::Identity,
            None,
            seed,
        )
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.table.as_ref().map(|t| t.rows())
    }

    /// Project one raw input row to a unit embedding.
    fn project_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut hidden = vec![0.0; self.hidden_dim];
        for (h, (w_row, b)) in hidden
            .iter_mut()
            .zip((0..self.hidden_dim).map(|i| (self.w1.row(i), self.b1[i])))
        {
            let mut acc = b;
            for (w, v) in w_row.iter().zip(x.iter()) {
                acc += w * self.transform.apply(*v) * self.input_gain;
            }
            *h = acc.tanh();
        }
        let mut out = vec![0.0; self.embed_dim];
        for (o, (w_row, b)) in out
            .iter_mut()
            .zip((0..self.embed_dim).map(|i| (self.w2.row(i), self.b2[i])))
        {
            let mut acc = b;
            for (w, h) in w_row.iter().zip(hidden.iter()) {
                acc += w * h;
            }
            *o = acc;
        }
        l2_normalize(&out)
    }

    /// Snapshot blocks (frozen weights; used for reproducibility audits).
    pub fn to_blocks(&self) -> Vec<Block> {
        let prefix = self.modality.tag();
        let mut blocks = Vec::new();
        if let Some(t) = &self.table {
            blocks.push(Block::new(
                format!("{prefix}.table"),
                vec![t.rows(), t.cols()],
                t.data().to_vec(),
            ));
        }
        blocks.push(Block::new(
            format!("{prefix}.w1"),
            vec![self.w1.rows(), self.w1.cols()],
            self.w1.data().to_vec(),
        ));
        blocks.push(Block::new(format!("{prefix}.b1"), vec![self.b1.len()], self.b1.clone()));
        blocks.push(Block::new(
            format!("{prefix}.w2"),
            vec![self.w2.rows(), self.w2.cols()],
            self.w2.data().to_vec(),
        ));
        blocks.push(Block::new(format!("{prefix}.b2"), vec![self.b2.len()], self.b2.clone()));
        blocks
    }
}

/// Per-token embeddings plus the pooled (normalized mean) clip embedding.
pub fn encode_text(w: &EncoderWeights, tokens: &[u32]) -> Result<(EmbeddingSequence, Vec<f64>)> {
    if w.modality != Modality::Text {
        return Err(Error::invalid(format!(
            "encode_text called with {} weights",
            w.modality.tag()
        )));
    }
    if tokens.is_empty() {
        return Err(Error::invalid("encode_text on an empty token sequence"));
    }
    let table = w.table.as_ref().expect("text weights carry a table");
    let mut rows = DenseMatrix::zeros(tokens.len(), w.embed_dim);
    for (i, &tok) in tokens.iter().enumerate() {
        if tok as usize >= table.rows() {
            return Err(Error::invalid(format!(
                "token id {tok} out of vocabulary (size {})",
                table.rows()
            )));
        }
        let emb = w.project_row(table.row(tok as usize))?;
        rows.row_mut(i).copy_from_slice(&emb);
    }
    let mut mean = vec![0.0; w.embed_dim];
    for i in 0..tokens.len() {
        for (m, v) in mean.iter_mut().zip(rows.row(i).iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= tokens.len() as f64;
    }
    let pooled = l2_normalize(&mean)?;
    Ok((EmbeddingSequence::new(rows)?, pooled))
}

/// One embedding per one-second mel row.
pub fn encode_audio(w: &EncoderWeights, mel: &DenseMatrix) -> Result<EmbeddingSequence> {
    if w.modality != Modality::Audio {
        return Err(Error::invalid(format!(
            "encode_audio called with {} weights",
            w.modality.tag()
        )));
    }
    if mel.cols() != w.input_dim {
        return Err(Error::shape(format!(
            "mel has {} bins, audio encoder expects {}",
            mel.cols(),
            w.input_dim
        )));
    }
    let mut rows = DenseMatrix::zeros(mel.rows(), w.embed_dim);
    for i in 0..mel.rows() {
        let emb = w.project_row(mel.row(i))?;
        rows.row_mut(i).copy_from_slice(&emb);
    }
    EmbeddingSequence::new(rows)
}

/// One embedding per video frame feature row.
pub fn encode_video(w: &EncoderWeights, frames: &DenseMatrix) -> Result<EmbeddingSequence> {
    if w.modality != Modality::Video {
        return Err(Error::invalid(format!(
            "encode_video called with {} weights",
            w.modality.tag()
        )));
    }
    if frames.cols() != w.input_dim {
        return Err(Error::shape(format!(
            "frames have dim {}, video encoder expects {}",
            frames.cols(),
            w.input_dim
        )));
    }
    let mut rows = DenseMatrix::zeros(frames.rows(), w.embed_dim);
    for i in 0..frames.rows() {
        let emb = w.project_row(frames.row(i))?;
        rows.row_mut(i).copy_from_slice(&emb);
    }
    EmbeddingSequence::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;
    use crate::synthdata::{self, SynthConfig};

    const D: usize = 64;
    const HIDDEN: usize = 128;

    #[test]
    fn same_seed_same_weights_same_output() {
        let a = EncoderWeights::text(10, D, HIDDEN, 5);
        let b = EncoderWeights::text(10, D, HIDDEN, 5);
        assert_eq!(a, b);
        let (ra, pa) = encode_text(&a, &[0, 3, 7]).unwrap();
        let (rb, pb) = encode_text(&b, &[0, 3, 7]).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn single_token_pool_is_its_embedding() {
        let w = EncoderWeights::text(10, D, HIDDEN, 5);
        let (rows, pooled) = encode_text(&w, &[4]).unwrap();
        for (a, b) in rows.row(0).iter().zip(pooled.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_tokens_permutes_rows() {
        let w = EncoderWeights::text(10, D, HIDDEN, 5);
        let (ab, _) = encode_text(&w, &[2, 6]).unwrap();
        let (ba, _) = encode_text(&w, &[6, 2]).unwrap();
        assert_eq!(ab.row(0), ba.row(1));
        assert_eq!(ab.row(1), ba.row(0));
    }

    #[test]
    fn out_of_vocab_token_is_invalid() {
        let w = EncoderWeights::text(10, D, HIDDEN, 5);
        assert!(encode_text(&w, &[10]).is_err());
    }

    #[test]
    fn zero_mel_row_is_bias_path_and_unit_norm() {
        let w = EncoderWeights::audio(64, D, HIDDEN, 6);
        let mel = DenseMatrix::zeros(3, 64);
        let seq = encode_audio(&w, &mel).unwrap();
        for r in 0..3 {
            assert!((l2_norm(seq.row(r)) - 1.0).abs() < 1e-12);
            assert_eq!(seq.row(0), seq.row(r));
        }
    }

    #[test]
    fn identical_mel_rows_give_identical_embeddings() {
        let w = EncoderWeights::audio(64, D, HIDDEN, 6);
        let mut mel = DenseMatrix::zeros(4, 64);
        for r in 0..4 {
            for c in 0..64 {
                mel.set(r, c, if r % 2 == 0 { 0.5 + c as f64 * 0.01 } else { 0.02 });
            }
        }
        let seq = encode_audio(&w, &mel).unwrap();
        assert_eq!(seq.row(0), seq.row(2));
        assert_eq!(seq.row(1), seq.row(3));
        assert_ne!(seq.row(0), seq.row(1));
    }

    #[test]
    fn mel_bin_mismatch_is_shape_error() {
        let w = EncoderWeights::audio(64, D, HIDDEN, 6);
        let mel = DenseMatrix::zeros(2, 32);
        assert!(matches!(encode_audio(&w, &mel), Err(Error::Shape(_))));
    }

    #[test]
    fn video_dim_mismatch_is_shape_error() {
        let w = EncoderWeights::video(32, D, HIDDEN, 7);
        let frames = DenseMatrix::zeros(2, 16);
        assert!(matches!(encode_video(&w, &frames), Err(Error::Shape(_))));
    }

    #[test]
    fn modality_misuse_always_errors() {
        let text = EncoderWeights::text(10, D, HIDDEN, 5);
        let audio = EncoderWeights::audio(64, D, HIDDEN, 6);
        let video = EncoderWeights::video(32, D, HIDDEN, 7);
        assert!(encode_audio(&text, &DenseMatrix::zeros(1, 64)).is_err());
        assert!(encode_video(&audio, &DenseMatrix::zeros(1, 32)).is_err());
        assert!(encode_text(&video, &[0]).is_err());
    }

    #[test]
    fn active_and_silent_rows_are_separable() {
        let cfg = SynthConfig::default();
        let palette = synthdata::Palette::build(&cfg);
        let w = EncoderWeights::audio(cfg.freq_bins, D, HIDDEN, 6);
        let mut checked = 0;
        for seed in 0..100u64 {
            let mut rng = Rng::from_seed(seed);
            let script =
                synthdata::generate_script(&mut rng, cfg.clip_len, cfg.max_events, cfg.num_classes);
            let s = synthdata::render_triplet_with_palette(&script, &mut rng, &cfg, &palette)
                .unwrap();
            let mask = script.activity_mask(cfg.clip_len);
            let seq = encode_audio(&w, &s.mel).unwrap();
            let active = mask.iter().position(|&m| m);
            let silent = mask.iter().position(|&m| !m);
            if let (Some(a), Some(s_)) = (active, silent) {
                let cos = dot(seq.row(a), seq.row(s_));
                assert!(cos < 0.99, "seed {seed}: active/silent cosine {cos}");
                checked += 1;
            }
        }
        assert!(checked > 50, "too few samples with both row kinds");
    }

    #[test]
    fn video_class_rows_are_separable() {
        let cfg = SynthConfig::default();
        let palette = synthdata::Palette::build(&cfg);
        let w = EncoderWeights::video(cfg.video_dim, D, HIDDEN, 7);
        for seed in 0..100u64 {
            let mut rng = Rng::from_seed(seed + 500);
            let script =
                synthdata::generate_script(&mut rng, cfg.clip_len, cfg.max_events, cfg.num_classes);
            let s = synthdata::render_triplet_with_palette(&script, &mut rng, &cfg, &palette)
                .unwrap();
            let mask = script.activity_mask(cfg.clip_len);
            let seq = encode_video(&w, &s.frame_features).unwrap();
            let active = mask.iter().position(|&m| m);
            let silent = mask.iter().position(|&m| !m);
            if let (Some(a), Some(s_)) = (active, silent) {
                assert!(dot(seq.row(a), seq.row(s_)) < 0.99);
            }
        }
    }

    #[test]
    fn serialized_weights_unchanged_by_use() {
        let w = EncoderWeights::audio(64, D, HIDDEN, 6);
        let before = w.to_blocks();
        let mel = DenseMatrix::from_fn(5, 64, |r, c| (r * c) as f64 * 0.001);
        let _ = encode_audio(&w, &mel).unwrap();
        let _ = encode_audio(&w, &mel).unwrap();
        assert_eq!(w.to_blocks(), before);
    }
}
