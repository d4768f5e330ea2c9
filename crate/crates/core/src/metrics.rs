//! Evaluation suite: Gaussian fits over embedding sets, Frechet distance,
//! Inception Score, paired KL divergence, and the small event classifier
//! that supplies class posteriors for IS/KL.

use crate::encoders::{encode_audio, EncoderWeights};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, DenseMatrix, Rng, SpdMatrix};
use crate::optim::Adam;
use crate::synthdata::TripletSample;

/// Probability floor used inside KL terms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean and covariance fitted to a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: SpdMatrix,
    pub count: usize,
}

/// Sample mean and covariance (denominator M-1) with shrinkage
/// lambda I, lambda = 1e-6 * trace / D, so near-singular sample covariances
/// stay inside the PSD cone for the matrix square root.
pub fn fit_gaussian(embeddings: &DenseMatrix) -> Result<GaussianStats> {
    let m = embeddings.rows();
    let d = embeddings.cols();
    if m < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 embeddings to fit a Gaussian, got {m}"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in 0..m {
        for (mu, v) in mean.iter_mut().zip(embeddings.row(r).iter()) {
            *mu += v;
        }
    }
    for mu in mean.iter_mut() {
        *mu /= m as f64;
    }
    let mut cov = DenseMatrix::zeros(d, d);
    for r in 0..m {
        let row = embeddings.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                let dj = row[j] - mean[j];
                let v = cov.get(i, j) + di * dj;
                cov.set(i, j, v);
            }
        }
    }
    let denom = (m - 1) as f64;
    let mut trace = 0.0;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
        trace += cov.get(i, i);
    }
    let lambda = 1e-6 * trace / d as f64;
    for i in 0..d {
        let v = cov.get(i, i) + lambda;
        cov.set(i, i, v);
    }
    Ok(GaussianStats {
        mean,
        cov: SpdMatrix::new(cov)?,
        count: m,
    })
}

/// Squared 2-Wasserstein distance between Gaussians, in the symmetric-product
/// form: |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    let d = g1.mean.len();
    if g2.mean.len() != d {
        return Err(Error::shape(format!(
            "Gaussian dims differ: {d} vs {}",
            g2.mean.len()
        )));
    }
    let mut mean_term = 0.0;
    for (a, b) in g1.mean.iter().zip(g2.mean.iter()) {
        mean_term += (a - b) * (a - b);
    }
    let s1_sqrt = g1.cov.sqrt()?;
    let inner = s1_sqrt
        .matrix()
        .matmul(g2.cov.matrix())
        .matmul(s1_sqrt.matrix());
    // Round-off makes the triple product very slightly asymmetric.
    let cross = SpdMatrix::new_symmetrized(inner)?.sqrt()?;
    let trace_term = g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term).max(0.0))
}

fn check_prob_rows(name: &str, probs: &DenseMatrix) -> Result<()> {
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let mut sum = 0.0;
        for &p in row {
            if !(p >= -1e-9) || !p.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} row {r} contains a negative or non-finite entry"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "{name} row {r} sums to {sum}, not a probability vector"
            )));
        }
    }
    Ok(())
}

/// exp of the mean KL between per-sample posteriors and the marginal
/// posterior. Lies in [1, K].
pub fn inception_score(probs: &DenseMatrix) -> Result<f64> {
    if probs.rows() == 0 || probs.cols() == 0 {
        return Err(Error::invalid("inception_score on an empty matrix"));
    }
    check_prob_rows("probs", probs)?;
    let (m, k) = (probs.rows(), probs.cols());
    let mut marginal = vec![0.0; k];
    for r in 0..m {
        for (mv, &p) in marginal.iter_mut().zip(probs.row(r).iter()) {
            *mv += p;
        }
    }
    for mv in marginal.iter_mut() {
        *mv /= m as f64;
    }
    let mut mean_kl = 0.0;
    for r in 0..m {
        let row = probs.row(r);
        let mut kl = 0.0;
        for (p, q) in row.iter().zip(marginal.iter()) {
            if *p > 0.0 {
                kl += p * (p.max(PROB_FLOOR) / q.max(PROB_FLOOR)).ln();
            }
        }
        mean_kl += kl;
    }
    Ok((mean_kl / m as f64).exp())
}

/// Mean over paired rows of KL(reference || generated); entries floored at
/// PROB_FLOOR inside the logs.
pub fn paired_kl(gen_probs: &DenseMatrix, ref_probs: &DenseMatrix) -> Result<f64> {
    if gen_probs.rows() != ref_probs.rows() || gen_probs.cols() != ref_probs.cols() {
        return Err(Error::invalid(format!(
            "paired_kl shapes differ: {}x{} vs {}x{}",
            gen_probs.rows(),
            gen_probs.cols(),
            ref_probs.rows(),
            ref_probs.cols()
        )));
    }
    if gen_probs.rows() == 0 {
        return Err(Error::invalid("paired_kl on empty inputs"));
    }
    check_prob_rows("gen_probs", gen_probs)?;
    check_prob_rows("ref_probs", ref_probs)?;
    let m = gen_probs.rows();
    let mut total = 0.0;
    for r in 0..m {
        let mut kl = 0.0;
        for (p_ref, p_gen) in ref_probs.row(r).iter().zip(gen_probs.row(r).iter()) {
            if *p_ref > 0.0 {
                kl += p_ref * (p_ref.max(PROB_FLOOR) / p_gen.max(PROB_FLOOR)).ln();
            }
        }
        total += kl;
    }
    Ok(total / m as f64)
}

// ---------------------------------------------------------------------------
// Event classifier
// ---------------------------------------------------------------------------

/// Softmax classifier from pooled audio embeddings to event classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// K x D weight matrix.
    pub w: DenseMatrix,
    pub b: Vec<f64>,
}

impl ClassifierParams {
    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    /// Class posterior for one feature vector.
    pub fn posterior(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.w.cols() {
            return Err(Error::shape(format!(
                "feature dim {} vs classifier dim {}",
                feature.len(),
                self.w.cols()
            )));
        }
        let k = self.w.rows();
        let mut logits = vec![0.0; k];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = self.b[c] + crate::numerics::dot(self.w.row(c), feature);
        }
        crate::numerics::softmax(&logits, 1.0)
    }

    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        let p = self.posterior(feature)?;
        Ok(p.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap())
    }
}

/// Pooled per-clip audio feature: normalized mean of the per-second audio
/// embeddings.
pub fn pooled_audio_feature(encoder: &EncoderWeights, mel: &DenseMatrix) -> Result<Vec<f64>> {
    let seq = encode_audio(encoder, mel)?;
    let d = seq.dim();
    let mut mean = vec![0.0; d];
    for i in 0..seq.timesteps() {
        for (m, v) in mean.iter_mut().zip(seq.row(i).iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= seq.timesteps() as f64;
    }
    l2_normalize(&mean)
}

/// Train the event classifier on (pooled audio feature, dominant class)
/// pairs. Deterministic in (data, seed).
pub fn train_classifier(
    samples: &[TripletSample],
    encoder: &EncoderWeights,
    num_classes: usize,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<ClassifierParams> {
    if samples.is_empty() {
        return Err(Error::invalid("train_classifier needs a non-empty dataset"));
    }
    let mut features = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        features.push(pooled_audio_feature(encoder, &s.mel)?);
        labels.push(
            s.script
                .dominant_class()
                .ok_or_else(|| Error::invalid("sample without events"))? as usize,
        );
    }
    train_classifier_on_features(&features, &labels, num_classes, epochs, lr, rng)
}

/// Core trainer over explicit feature/label pairs (also used by the shuffled
/// label control).
pub fn train_classifier_on_features(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<ClassifierParams> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid("features/labels must be non-empty and paired"));
    }
    let d = features[0].len();
    let k = num_classes;
    let mut params = ClassifierParams {
        w: DenseMatrix::random_normal(k, d, 0.01, rng),
        b: vec![0.0; k],
    };
    let n_params = k * d + k;
    let mut adam = Adam::new(lr, n_params);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let batch = 32.min(features.len());

    for _epoch in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let mut gw = DenseMatrix::zeros(k, d);
            let mut gb = vec![0.0; k];
            for &idx in chunk {
                let p = params.posterior(&features[idx])?;
                for c in 0..k {
                    let dlogit = (p[c] - if c == labels[idx] { 1.0 } else { 0.0 })
                        / chunk.len() as f64;
                    gb[c] += dlogit;
                    let row = gw.row_mut(c);
                    for (g, &f) in row.iter_mut().zip(features[idx].iter()) {
                        *g += dlogit * f;
                    }
                }
            }
            let mut flat: Vec<f64> = params.w.data().to_vec();
            flat.extend_from_slice(&params.b);
            let mut grads: Vec<f64> = gw.data().to_vec();
            grads.extend_from_slice(&gb);
            adam.step(&mut flat, &grads);
            params.w.data_mut().copy_from_slice(&flat[..k * d]);
            params.b.copy_from_slice(&flat[k * d..]);
        }
    }
    Ok(params)
}

/// Top-1 accuracy of the classifier over samples with dominant-class labels.
pub fn classifier_accuracy(
    params: &ClassifierParams,
    encoder: &EncoderWeights,
    samples: &[TripletSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut hits = 0usize;
    for s in samples {
        let f = pooled_audio_feature(encoder, &s.mel)?;
        let pred = params.predict(&f)?;
        if pred as u32 == s.script.dominant_class().unwrap_or(u32::MAX) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}
