//! Latent audio codec: a small patch autoencoder that maps a T x F mel matrix
//! to a C x (T/r) x (F/r) latent and back. Fills the role of the frozen VAE
//! in front of the diffusion stage — only the compression contract matters:
//! latent shape, reconstructability, and roughly unit-scale latents (via a
//! per-channel standardization statistic calibrated after training).
//!
//! Encoder: r x r mel patch -> linear to C channels -> tanh -> channel mixing.
//! Decoder mirrors it; the final activation clamps at zero so decoded mels
//! stay nonnegative.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};
use crate::optim::Adam;
use crate::snapshot::{take_block, Block};

/// Fixed scale applied to mel values inside the codec. Encode multiplies by
/// it, decode divides it back out.
pub const MEL_INPUT_SCALE: f64 = 0.5;

/// Codec activation: x + tanh(x). Monotone and smooth like tanh but with a
/// derivative bounded in [1, 2], so wide-range reconstruction never stalls
/// in a saturated regime.
fn codec_act(x: f64) -> f64 {
    x + x.tanh()
}

fn codec_act_grad(x: f64) -> f64 {
    let t = x.tanh();
    2.0 - t * t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    /// Latent channels C.
    pub channels: usize,
    /// Compression level r; divides both clip_len and freq_bins.
    pub compression: usize,
    pub clip_len: usize,
    pub freq_bins: usize,
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.compression == 0 {
            return Err(Error::config("codec channels and compression must be positive"));
        }
        if self.clip_len % self.compression != 0 || self.freq_bins % self.compression != 0 {
            return Err(Error::config(format!(
                "compression {} must divide clip_len {} and freq_bins {}",
                self.compression, self.clip_len, self.freq_bins
            )));
        }
        Ok(())
    }

    pub fn latent_rows(&self) -> usize {
        self.clip_len / self.compression
    }

    pub fn latent_cols(&self) -> usize {
        self.freq_bins / self.compression
    }

    pub fn latent_len(&self) -> usize {
        self.channels * self.latent_rows() * self.latent_cols()
    }
}

/// C x (T/r) x (F/r) array of 64-bit floats, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        LatentTensor {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_data(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(Error::shape(format!(
                "latent data length {} vs {}x{}x{}",
                data.len(),
                channels,
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent entries must be finite"));
        }
        Ok(LatentTensor {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[c * self.rows * self.cols + r * self.cols + col]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.data[c * self.rows * self.cols + r * self.cols + col] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn matches(&self, cfg: &CodecConfig) -> bool {
        self.channels == cfg.channels
            && self.rows == cfg.latent_rows()
            && self.cols == cfg.latent_cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub cfg: CodecConfig,
    /// Patch projection (C x r^2) and bias.
    w_enc: DenseMatrix,
    b_enc: Vec<f64>,
    /// Channel mixing (C x C) and bias.
    mix: DenseMatrix,
    b_mix: Vec<f64>,
    /// Decoder channel unmixing (C x C) and bias.
    unmix: DenseMatrix,
    b_unmix: Vec<f64>,
    /// Patch reconstruction (r^2 x C) and bias.
    w_dec: DenseMatrix,
    b_dec: Vec<f64>,
    /// Per-channel standardization, calibrated on the training set.
    latent_mean: Vec<f64>,
    latent_std: Vec<f64>,
}

impl CodecParams {
    pub fn init(cfg: CodecConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let p = cfg.compression * cfg.compression;
        // Mixing layers start near the identity so the autoencoder begins
        // close to a working linear code and skips the dead plateau a purely
        // random init sits on.
        let near_identity = |rng: &mut Rng| {
            let mut m = DenseMatrix::random_normal(c, c, 0.1 / (c as f64).sqrt(), rng);
            for i in 0..c {
                let v = m.get(i, i) + 1.0;
                m.set(i, i, v);
            }
            m
        };
        let mix = near_identity(rng);
        let unmix = near_identity(rng);
        Ok(CodecParams {
            cfg,
            w_enc: DenseMatrix::random_normal(c, p, 1.0 / (p as f64).sqrt(), rng),
            b_enc: vec![0.0; c],
            mix,
            b_mix: vec![0.0; c],
            unmix,
            b_unmix: vec![0.0; c],
            w_dec: DenseMatrix::random_normal(p, c, 1.0 / (c as f64).sqrt(), rng),
            // Positive bias keeps decoder outputs off the zero clamp at init.
            b_dec: vec![0.1; p],
            latent_mean: vec![0.0; c],
            latent_std: vec![1.0; c],
        })
    }

    fn zeros_like(&self) -> CodecParams {
        let mut z = self.clone();
        z.w_enc.scale(0.0);
        z.b_enc.iter_mut().for_each(|v| *v = 0.0);
        z.mix.scale(0.0);
        z.b_mix.iter_mut().for_each(|v| *v = 0.0);
        z.unmix.scale(0.0);
        z.b_unmix.iter_mut().for_each(|v| *v = 0.0);
        z.w_dec.scale(0.0);
        z.b_dec.iter_mut().for_each(|v| *v = 0.0);
        z
    }

    fn check_mel(&self, mel: &DenseMatrix) -> Result<()> {
        if mel.rows() != self.cfg.clip_len || mel.cols() != self.cfg.freq_bins {
            return Err(Error::shape(format!(
                "mel {}x{} vs codec config {}x{}",
                mel.rows(),
                mel.cols(),
                self.cfg.clip_len,
                self.cfg.freq_bins
            )));
        }
        Ok(())
    }

    fn gather_patch(&self, mel: &DenseMatrix, tp: usize, fp: usize, out: &mut [f64]) {
        let r = self.cfg.compression;
        let mut idx = 0;
        for dr in 0..r {
            for dc in 0..r {
                out[idx] = mel.get(tp * r + dr, fp * r + dc) * MEL_INPUT_SCALE;
                idx += 1;
            }
        }
    }

    /// Raw (un-standardized) latent for one mel.
    fn encode_raw(&self, mel: &DenseMatrix) -> Result<LatentTensor> {
        self.check_mel(mel)?;
        let c_n = self.cfg.channels;
        let p = self.cfg.compression * self.cfg.compression;
        let mut z = LatentTensor::zeros(c_n, self.cfg.latent_rows(), self.cfg.latent_cols());
        let mut patch = vec![0.0; p];
        let mut h = vec![0.0; c_n];
        for tp in 0..z.rows {
            for fp in 0..z.cols {
                self.gather_patch(mel, tp, fp, &mut patch);
                for c in 0..c_n {
                    let mut acc = self.b_enc[c];
                    for (w, v) in self.w_enc.row(c).iter().zip(patch.iter()) {
                        acc += w * v;
                    }
                    h[c] = codec_act(acc);
                }
                for c in 0..c_n {
                    let mut acc = self.b_mix[c];
                    for (w, v) in self.mix.row(c).iter().zip(h.iter()) {
                        acc += w * v;
                    }
                    z.set(c, tp, fp, acc);
                }
            }
        }
        Ok(z)
    }

    /// Standardized latent (the audio prior fed to the diffusion stage).
    pub fn encode_mel(&self, mel: &DenseMatrix) -> Result<LatentTensor> {
        let mut z = self.encode_raw(mel)?;
        for c in 0..z.channels {
            let (mu, sd) = (self.latent_mean[c], self.latent_std[c]);
            for r in 0..z.rows {
                for col in 0..z.cols {
                    let v = (z.get(c, r, col) - mu) / sd;
                    z.set(c, r, col, v);
                }
            }
        }
        Ok(z)
    }

    /// Decode a standardized latent back to a nonnegative mel.
    pub fn decode_latent(&self, z: &LatentTensor) -> Result<DenseMatrix> {
        if !z.matches(&self.cfg) {
            return Err(Error::shape(format!(
                "latent {}x{}x{} vs codec config {}x{}x{}",
                z.channels,
                z.rows,
                z.cols,
                self.cfg.channels,
                self.cfg.latent_rows(),
                self.cfg.latent_cols()
            )));
        }
        let c_n = self.cfg.channels;
        let r = self.cfg.compression;
        let p = r * r;
        let mut mel = DenseMatrix::zeros(self.cfg.clip_len, self.cfg.freq_bins);
        let mut zraw = vec![0.0; c_n];
        let mut g = vec![0.0; c_n];
        for tp in 0..z.rows {
            for fp in 0..z.cols {
                for c in 0..c_n {
                    zraw[c] = z.get(c, tp, fp) * self.latent_std[c] + self.latent_mean[c];
                }
                for c in 0..c_n {
                    let mut acc = self.b_unmix[c];
                    for (w, v) in self.unmix.row(c).iter().zip(zraw.iter()) {
                        acc += w * v;
                    }
                    g[c] = codec_act(acc);
                }
                for j in 0..p {
                    let mut acc = self.b_dec[j];
                    for (w, v) in self.w_dec.row(j).iter().zip(g.iter()) {
                        acc += w * v;
                    }
                    mel.set(tp * r + j / r, fp * r + j % r, acc.max(0.0) / MEL_INPUT_SCALE);
                }
            }
        }
        Ok(mel)
    }

    /// Mean squared reconstruction error over one mel.
    pub fn reconstruction_mse(&self, mel: &DenseMatrix) -> Result<f64> {
        let z = self.encode_mel(mel)?;
        let rec = self.decode_latent(&z)?;
        let n = (mel.rows() * mel.cols()) as f64;
        Ok(mel
            .data()
            .iter()
            .zip(rec.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// One sample forward + backward; accumulates parameter gradients,
    /// returns the sample MSE. Training runs on raw latents (standardization
    /// statistics are identity until calibration).
    fn accumulate_grads(&self, mel: &DenseMatrix, grads: &mut CodecParams) -> f64 {
        let c_n = self.cfg.channels;
        let r = self.cfg.compression;
        let p = r * r;
        let denom = (self.cfg.clip_len * self.cfg.freq_bins) as f64;

        let mut patch = vec![0.0; p];
        let mut h_pre = vec![0.0; c_n];
        let mut h = vec![0.0; c_n];
        let mut z = vec![0.0; c_n];
        let mut g_pre = vec![0.0; c_n];
        let mut g = vec![0.0; c_n];
        let mut y = vec![0.0; p];
        let mut loss = 0.0;

        for tp in 0..self.cfg.latent_rows() {
            for fp in 0..self.cfg.latent_cols() {
                self.gather_patch(mel, tp, fp, &mut patch);
                for c in 0..c_n {
                    let mut acc = self.b_enc[c];
                    for (w, v) in self.w_enc.row(c).iter().zip(patch.iter()) {
                        acc += w * v;
                    }
                    h_pre[c] = acc;
                    h[c] = codec_act(acc);
                }
                for c in 0..c_n {
                    let mut acc = self.b_mix[c];
                    for (w, v) in self.mix.row(c).iter().zip(h.iter()) {
                        acc += w * v;
                    }
                    z[c] = acc;
                }
                for c in 0..c_n {
                    let mut acc = self.b_unmix[c];
                    for (w, v) in self.unmix.row(c).iter().zip(z.iter()) {
                        acc += w * v;
                    }
                    g_pre[c] = acc;
                    g[c] = codec_act(acc);
                }
                for j in 0..p {
                    let mut acc = self.b_dec[j];
                    for (w, v) in self.w_dec.row(j).iter().zip(g.iter()) {
                        acc += w * v;
                    }
                    y[j] = acc;
                }

                // Backward. Training fits the unclamped decoder output (the
                // targets are nonnegative, so the optimum is unaffected and
                // no output can die behind the zero clamp); the clamp is
                // applied at inference in decode_latent. Loss is reported in
                // original mel units.
                let unit = MEL_INPUT_SCALE * MEL_INPUT_SCALE;
                let mut dg = vec![0.0; c_n];
                for j in 0..p {
                    let diff = y[j] - patch[j];
                    loss += diff * diff / (denom * unit);
                    let dy = 2.0 * diff / (denom * unit);
                    for (c, gv) in g.iter().enumerate() {
                        let cur = grads.w_dec.get(j, c) + dy * gv;
                        grads.w_dec.set(j, c, cur);
                        dg[c] += dy * self.w_dec.get(j, c);
                    }
                    grads.b_dec[j] += dy;
                }
                let mut dz = vec![0.0; c_n];
                for c in 0..c_n {
                    let dgp = dg[c] * codec_act_grad(g_pre[c]);
                    if dgp == 0.0 {
                        continue;
                    }
                    for (c2, zv) in z.iter().enumerate() {
                        let cur = grads.unmix.get(c, c2) + dgp * zv;
                        grads.unmix.set(c, c2, cur);
                        dz[c2] += dgp * self.unmix.get(c, c2);
                    }
                    grads.b_unmix[c] += dgp;
                }
                let mut dh = vec![0.0; c_n];
                for c in 0..c_n {
                    if dz[c] == 0.0 {
                        continue;
                    }
                    for (c2, hv) in h.iter().enumerate() {
                        let cur = grads.mix.get(c, c2) + dz[c] * hv;
                        grads.mix.set(c, c2, cur);
                        dh[c2] += dz[c] * self.mix.get(c, c2);
                    }
                    grads.b_mix[c] += dz[c];
                }
                for c in 0..c_n {
                    let dhp = dh[c] * codec_act_grad(h_pre[c]);
                    if dhp == 0.0 {
                        continue;
                    }
                    for (j, pv) in patch.iter().enumerate() {
                        let cur = grads.w_enc.get(c, j) + dhp * pv;
                        grads.w_enc.set(c, j, cur);
                    }
                    grads.b_enc[c] += dhp;
                }
            }
        }
        loss
    }

    pub fn param_count(&self) -> usize {
        let c = self.cfg.channels;
        let p = self.cfg.compression * self.cfg.compression;
        c * p + c + c * c + c + c * c + c + p * c + p
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.w_enc.data());
        out.extend_from_slice(&self.b_enc);
        out.extend_from_slice(self.mix.data());
        out.extend_from_slice(&self.b_mix);
        out.extend_from_slice(self.unmix.data());
        out.extend_from_slice(&self.b_unmix);
        out.extend_from_slice(self.w_dec.data());
        out.extend_from_slice(&self.b_dec);
        out
    }

    fn set_from_flat(&mut self, data: &[f64]) {
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &data[pos..pos + n];
            pos += n;
            s.to_vec()
        };
        let we = self.w_enc.data().len();
        let be = self.b_enc.len();
        let mx = self.mix.data().len();
        let bm = self.b_mix.len();
        let um = self.unmix.data().len();
        let bu = self.b_unmix.len();
        let wd = self.w_dec.data().len();
        let bd = self.b_dec.len();
        self.w_enc.data_mut().copy_from_slice(&take(we));
        self.b_enc.copy_from_slice(&take(be));
        self.mix.data_mut().copy_from_slice(&take(mx));
        self.b_mix.copy_from_slice(&take(bm));
        self.unmix.data_mut().copy_from_slice(&take(um));
        self.b_unmix.copy_from_slice(&take(bu));
        self.w_dec.data_mut().copy_from_slice(&take(wd));
        self.b_dec.copy_from_slice(&take(bd));
    }

    /// Diagnostics hooks (used by examples and tests).
    pub fn clone_zeroed(&self) -> CodecParams {
        self.zeros_like()
    }

    pub fn grad_probe(&self, mel: &DenseMatrix, grads: &mut CodecParams) -> f64 {
        self.accumulate_grads(mel, grads)
    }

    pub fn probe_flatten(&self) -> Vec<f64> {
        self.flatten()
    }

    pub fn probe_set_flat(&mut self, data: &[f64]) {
        self.set_from_flat(data);
    }

    /// Snapshot blocks including the calibration statistics.
    pub fn to_blocks(&self) -> Vec<Block> {
        vec![
            Block::new(
                "codec.dims",
                vec![4],
                vec![
                    self.cfg.channels as f64,
                    self.cfg.compression as f64,
                    self.cfg.clip_len as f64,
                    self.cfg.freq_bins as f64,
                ],
            ),
            Block::new("codec.params", vec![self.param_count()], self.flatten()),
            Block::new("codec.latent_mean", vec![self.cfg.channels], self.latent_mean.clone()),
            Block::new("codec.latent_std", vec![self.cfg.channels], self.latent_std.clone()),
        ]
    }

    pub fn from_blocks(blocks: &[Block]) -> Result<Self> {
        let dims = take_block(blocks, "codec.dims", &[4])?;
        let cfg = CodecConfig {
            channels: dims[0] as usize,
            compression: dims[1] as usize,
            clip_len: dims[2] as usize,
            freq_bins: dims[3] as usize,
        };
        let mut params = CodecParams::init(cfg, &mut Rng::from_seed(0))?;
        let flat = take_block(blocks, "codec.params", &[params.param_count()])?;
        params.set_from_flat(&flat);
        params.latent_mean = take_block(blocks, "codec.latent_mean", &[cfg.channels])?;
        params.latent_std = take_block(blocks, "codec.latent_std", &[cfg.channels])?;
        Ok(params)
    }
}

/// Per-epoch reconstruction losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecEpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Train the codec on mel matrices with Adam, then calibrate the per-channel
/// latent standardization on the training set. Deterministic in (data, seed).
pub fn train_codec(
    train: &[DenseMatrix],
    val: &[DenseMatrix],
    cfg: CodecConfig,
    epochs: usize,
    lr: f64,
    batch: usize,
    rng: &mut Rng,
) -> Result<(CodecParams, Vec<CodecEpochLoss>)> {
    if train.is_empty() {
        return Err(Error::invalid("train_codec needs a non-empty dataset"));
    }
    let mut params = CodecParams::init(cfg, rng)?;
    let mut curve = Vec::with_capacity(epochs);
    let mut adam = Adam::new(lr, params.param_count());
    let batch = batch.max(1);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let mut train_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            let mut grads = params.zeros_like();
            let mut chunk_loss = 0.0;
            for &idx in chunk {
                chunk_loss += params.accumulate_grads(&train[idx], &mut grads);
            }
            let scale = 1.0 / chunk.len() as f64;
            let mut flat_grads = grads.flatten();
            for g in flat_grads.iter_mut() {
                *g *= scale;
            }
            let mut flat = params.flatten();
            adam.step(&mut flat, &flat_grads);
            params.set_from_flat(&flat);
            train_loss += chunk_loss;
            seen += chunk.len();
        }
        let train_mse = train_loss / seen as f64;
        let val_mse = mean_mse(&params, val)?;
        curve.push(CodecEpochLoss {
            epoch: epoch + 1,
            train_mse,
            val_mse,
        });
    }

    calibrate_latent_scale(&mut params, train)?;
    Ok((params, curve))
}

fn mean_mse(params: &CodecParams, mels: &[DenseMatrix]) -> Result<f64> {
    if mels.is_empty() {
        return Ok(f64::NAN);
    }
    let mut acc = 0.0;
    for m in mels {
        acc += params.reconstruction_mse(m)?;
    }
    Ok(acc / mels.len() as f64)
}

/// Compute per-channel mean/std of raw latents over the given mels and store
/// them as the standardization statistic.
pub fn calibrate_latent_scale(params: &mut CodecParams, mels: &[DenseMatrix]) -> Result<()> {
    let c_n = params.cfg.channels;
    let mut sums = vec![0.0; c_n];
    let mut sqs = vec![0.0; c_n];
    let mut count = 0usize;
    for mel in mels {
        let z = params.encode_raw(mel)?;
        for c in 0..c_n {
            for r in 0..z.rows {
                for col in 0..z.cols {
                    let v = z.get(c, r, col);
                    sums[c] += v;
                    sqs[c] += v * v;
                }
            }
        }
        count += params.cfg.latent_rows() * params.cfg.latent_cols();
    }
    if count == 0 {
        return Err(Error::invalid("cannot calibrate on an empty set"));
    }
    for c in 0..c_n {
        let mean = sums[c] / count as f64;
        let var = (sqs[c] / count as f64 - mean * mean).max(0.0);
        params.latent_mean[c] = mean;
        params.latent_std[c] = var.sqrt().max(1e-6);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{self, SynthConfig};

    fn test_cfg() -> CodecConfig {
        CodecConfig {
            channels: 8,
            compression: 2,
            clip_len: 10,
            freq_bins: 64,
        }
    }

    fn render_mels(n: usize, base_seed: u64) -> Vec<DenseMatrix> {
        let scfg = SynthConfig::default();
        let palette = synthdata::Palette::build(&scfg);
        (0..n)
            .map(|i| {
                let mut rng = Rng::from_seed(base_seed + i as u64);
                let script = synthdata::generate_script(
                    &mut rng,
                    scfg.clip_len,
                    scfg.max_events,
                    scfg.num_classes,
                );
                synthdata::render_triplet_with_palette(&script, &mut rng, &scfg, &palette)
                    .unwrap()
                    .mel
            })
            .collect()
    }

    #[test]
    fn latent_shape_follows_config() {
        let cfg = test_cfg();
        let params = CodecParams::init(cfg, &mut Rng::from_seed(1)).unwrap();
        let mel = DenseMatrix::zeros(10, 64);
        let z = params.encode_mel(&mel).unwrap();
        assert_eq!((z.channels, z.rows, z.cols), (8, 5, 32));
    }

    #[test]
    fn zero_mel_encodes_finite_and_decodes_nonnegative() {
        let cfg = test_cfg();
        let params = CodecParams::init(cfg, &mut Rng::from_seed(2)).unwrap();
        let z = params.encode_mel(&DenseMatrix::zeros(10, 64)).unwrap();
        assert!(z.data.iter().all(|v| v.is_finite()));
        let zero_latent = LatentTensor::zeros(8, 5, 32);
        let mel = params.decode_latent(&zero_latent).unwrap();
        assert!(mel.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn shape_mismatches_error() {
        let cfg = test_cfg();
        let params = CodecParams::init(cfg, &mut Rng::from_seed(3)).unwrap();
        assert!(params.encode_mel(&DenseMatrix::zeros(10, 32)).is_err());
        assert!(params.decode_latent(&LatentTensor::zeros(4, 5, 32)).is_err());
        let bad = CodecConfig {
            channels: 8,
            compression: 3,
            clip_len: 10,
            freq_bins: 64,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut rng = Rng::from_seed(4);
        assert!(train_codec(&[], &[], test_cfg(), 1, 1e-3, 8, &mut rng).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let mels = render_mels(4, 100);
        let mut rng = Rng::from_seed(5);
        let (params, curve) =
            train_codec(&mels, &mels, test_cfg(), 0, 1e-3, 8, &mut rng).unwrap();
        let fresh = CodecParams::init(test_cfg(), &mut Rng::from_seed(5)).unwrap();
        assert_eq!(params.flatten(), fresh.flatten());
        assert!(curve.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let mels = render_mels(8, 200);
        let run = || {
            let mut rng = Rng::from_seed(6);
            train_codec(&mels, &mels, test_cfg(), 2, 1e-3, 4, &mut rng)
                .unwrap()
                .0
        };
        assert_eq!(run().flatten(), run().flatten());
    }

    #[test]
    fn training_halves_validation_mse() {
        let train = render_mels(256, 300);
        let val = render_mels(32, 900);
        let mut rng = Rng::from_seed(7);
        let (params, curve) =
            train_codec(&train, &val, test_cfg(), 30, 1e-2, 8, &mut rng).unwrap();
        let first = curve.first().unwrap().val_mse;
        let last = curve.last().unwrap().val_mse;
        assert!(
            last <= 0.5 * first,
            "val mse {first:.5} -> {last:.5}, expected >= 50% drop"
        );
        // Calibrated latents should be roughly unit variance per channel.
        let mut per_channel = vec![(0.0, 0.0, 0usize); params.cfg.channels];
        for mel in &train {
            let z = params.encode_mel(mel).unwrap();
            for c in 0..z.channels {
                for r in 0..z.rows {
                    for col in 0..z.cols {
                        let v = z.get(c, r, col);
                        per_channel[c].0 += v;
                        per_channel[c].1 += v * v;
                        per_channel[c].2 += 1;
                    }
                }
            }
        }
        for (c, (s, sq, n)) in per_channel.iter().enumerate() {
            let mean = s / *n as f64;
            let var = sq / *n as f64 - mean * mean;
            assert!(
                (0.5..=2.0).contains(&var),
                "channel {c} variance {var} outside [0.5, 2.0]"
            );
        }
    }

    #[test]
    fn snapshot_roundtrip_preserves_everything() {
        let mels = render_mels(8, 400);
        let mut rng = Rng::from_seed(8);
        let (params, _) = train_codec(&mels, &mels, test_cfg(), 1, 1e-3, 4, &mut rng).unwrap();
        let blocks = params.to_blocks();
        let restored = CodecParams::from_blocks(&blocks).unwrap();
        assert_eq!(restored, params);
    }
}
