//! Temporal contrastive objective with analytic gradients.
//!
//! For a mini-batch of B clips with T timesteps each, the loss at timestep i
//! contrasts every clip's audio embedding against the aligned-text embeddings
//! of ALL clips at that same timestep:
//!
//!   L = -(1/B) sum_b sum_i log( exp(s[b,b,i]/tau) / sum_m exp(s[b,m,i]/tau) )
//!
//! where s[b,m,i] = <audio[b,i], text[m,i]> is the cosine similarity of unit
//! rows. Negatives are other batch items at the SAME timestep. Gradients flow
//! only into the text side; the audio encoder is frozen.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Unit-norm tolerance on loss inputs. Deliberately looser than the encoder
/// invariant (1e-10) so central finite differences (step ~1e-5) can probe the
/// loss without tripping validation.
pub const UNIT_ROW_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Mini-batch size B.
    pub batch: usize,
    /// Timesteps per clip T.
    pub timesteps: usize,
    /// Also contrast text->audio and average the two directions.
    pub symmetric: bool,
}

impl ContrastiveConfig {
    pub fn new(tau: f64, batch: usize, timesteps: usize) -> Result<Self> {
        let cfg = ContrastiveConfig {
            tau,
            batch,
            timesteps,
            symmetric: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if self.batch < 2 {
            return Err(Error::invalid(
                "contrastive loss needs a batch of at least 2",
            ));
        }
        if self.timesteps < 1 {
            return Err(Error::invalid("need at least one timestep"));
        }
        Ok(())
    }
}

/// Loss value plus gradients w.r.t. the aligned-text rows (one T x D matrix
/// per batch item).
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub text_grads: Vec<DenseMatrix>,
}

fn check_tensor(name: &str, tensor: &[DenseMatrix], cfg: &ContrastiveConfig) -> Result<usize> {
    if tensor.len() != cfg.batch {
        return Err(Error::shape(format!(
            "{name}: expected {} batch items, got {}",
            cfg.batch,
            tensor.len()
        )));
    }
    let dim = tensor[0].cols();
    for (b, m) in tensor.iter().enumerate() {
        if m.rows() != cfg.timesteps || m.cols() != dim {
            return Err(Error::shape(format!(
                "{name}[{b}]: expected {}x{dim}, got {}x{}",
                cfg.timesteps,
                m.rows(),
                m.cols()
            )));
        }
        for i in 0..m.rows() {
            let n = crate::numerics::l2_norm(m.row(i));
            if (n - 1.0).abs() > UNIT_ROW_TOL {
                return Err(Error::invalid(format!(
                    "{name}[{b}] row {i} has norm {n:.6}, expected 1 within {UNIT_ROW_TOL:.0e}"
                )));
            }
        }
    }
    Ok(dim)
}

/// Loss from a precomputed similarity tensor: `sims[i]` is the B x B matrix
/// with entry (b, m) = sim(audio[b,i], text[m,i]). Exposed so invariance
/// tests can inject constants into the similarities directly.
pub fn infonce_from_similarities(sims: &[DenseMatrix], tau: f64, batch: usize) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if batch < 2 {
        return Err(Error::invalid("batch must be at least 2"));
    }
    let mut loss = 0.0;
    for (i, s) in sims.iter().enumerate() {
        if s.rows() != batch || s.cols() != batch {
            return Err(Error::shape(format!(
                "sims[{i}]: expected {batch}x{batch}, got {}x{}",
                s.rows(),
                s.cols()
            )));
        }
        for b in 0..batch {
            let row = s.row(b);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
            let lse = max
                + row
                    .iter()
                    .map(|&v| (v / tau - max).exp())
                    .sum::<f64>()
                    .ln();
            loss += lse - row[b] / tau;
        }
    }
    Ok(loss / batch as f64)
}

/// Temporal InfoNCE over unit-row tensors, with analytic gradients flowing
/// into `aligned_text` only.
pub fn temporal_infonce(
    audio: &[DenseMatrix],
    aligned_text: &[DenseMatrix],
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    cfg.validate()?;
    let dim_a = check_tensor("audio", audio, cfg)?;
    let dim_t = check_tensor("aligned_text", aligned_text, cfg)?;
    if dim_a != dim_t {
        return Err(Error::shape(format!(
            "audio dim {dim_a} vs aligned_text dim {dim_t}"
        )));
    }
    let b_n = cfg.batch;
    let t_n = cfg.timesteps;
    let tau = cfg.tau;

    let mut loss = 0.0;
    let mut grads: Vec<DenseMatrix> = (0..b_n)
        .map(|_| DenseMatrix::zeros(t_n, dim_a))
        .collect();

    let mut sims = DenseMatrix::zeros(b_n, b_n);
    let mut probs = vec![0.0; b_n];
    for i in 0..t_n {
        for b in 0..b_n {
            for m in 0..b_n {
                sims.set(
                    b,
                    m,
                    crate::numerics::dot(audio[b].row(i), aligned_text[m].row(i)),
                );
            }
        }
        // Audio -> text direction: softmax over text candidates m.
        for b in 0..b_n {
            let row = sims.row(b);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
            let mut sum = 0.0;
            for (m, &v) in row.iter().enumerate() {
                let e = (v / tau - max).exp();
                probs[m] = e;
                sum += e;
            }
            loss += max + sum.ln() - row[b] / tau;
            for m in 0..b_n {
                probs[m] /= sum;
                // dL/ds[b,m,i] = -(1/B) (delta - p) / tau; chain to text rows.
                let delta = if m == b { 1.0 } else { 0.0 };
                let coef = -(delta - probs[m]) / (tau * b_n as f64)
                    * if cfg.symmetric { 0.5 } else { 1.0 };
                let arow = audio[b].row(i);
                let grow = grads[m].row_mut(i);
                for (g, &a) in grow.iter_mut().zip(arow.iter()) {
                    *g += coef * a;
                }
            }
        }
        if cfg.symmetric {
            // Text -> audio direction: softmax over audio candidates b.
            for m in 0..b_n {
                let mut max = f64::NEG_INFINITY;
                for b in 0..b_n {
                    max = max.max(sims.get(b, m));
                }
                let max = max / tau;
                let mut sum = 0.0;
                for b in 0..b_n {
                    let e = (sims.get(b, m) / tau - max).exp();
                    probs[b] = e;
                    sum += e;
                }
                loss += max + sum.ln() - sims.get(m, m) / tau;
                for b in 0..b_n {
                    probs[b] /= sum;
                    let delta = if b == m { 1.0 } else { 0.0 };
                    let coef = -0.5 * (delta - probs[b]) / (tau * b_n as f64);
                    let arow = audio[b].row(i);
                    let grow = grads[m].row_mut(i);
                    for (g, &a) in grow.iter_mut().zip(arow.iter()) {
                        *g += coef * a;
                    }
                }
            }
        }
    }

    let directions = if cfg.symmetric { 2.0 } else { 1.0 };
    Ok(ContrastiveOutput {
        loss: loss / (b_n as f64 * directions),
        text_grads: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_relative_error, l2_normalize, Rng};

    fn random_unit_rows(b: usize, t: usize, d: usize, rng: &mut Rng) -> Vec<DenseMatrix> {
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
    }

    #[test]
    fn all_equal_similarities_give_t_ln_b() {
        let (b, t, d) = (4, 10, 16);
        let mut rng = Rng::from_seed(1);
        let audio = random_unit_rows(b, t, d, &mut rng);
        // Same text row for every batch item at each timestep -> similarities
        // constant across candidates.
        let shared = random_unit_rows(1, t, d, &mut rng).pop().unwrap();
        let text: Vec<DenseMatrix> = (0..b).map(|_| shared.clone()).collect();
        let cfg = ContrastiveConfig::new(0.07, b, t).unwrap();
        let out = temporal_infonce(&audio, &text, &cfg).unwrap();
        let expect = t as f64 * (b as f64).ln();
        assert!(
            (out.loss - expect).abs() < 1e-10,
            "loss {} vs {}",
            out.loss,
            expect
        );
    }

    #[test]
    fn two_item_closed_form() {
        // a0 = t0 = e0, a1 = t1 = e1: positive sim 1, cross sims 0, tau = 1.
        let d = 4;
        let mut a0 = DenseMatrix::zeros(1, d);
        a0.set(0, 0, 1.0);
        let mut a1 = DenseMatrix::zeros(1, d);
        a1.set(0, 1, 1.0);
        let audio = vec![a0.clone(), a1.clone()];
        let text = vec![a0, a1];
        let cfg = ContrastiveConfig::new(1.0, 2, 1).unwrap();
        let out = temporal_infonce(&audio, &text, &cfg).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-10, "loss {}", out.loss);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (b, t, d) = (8, 5, 8);
        let cfg = ContrastiveConfig::new(0.2, b, t).unwrap();
        for seed in 0..3u64 {
            let mut rng = Rng::from_seed(seed);
            let audio = random_unit_rows(b, t, d, &mut rng);
            let text = random_unit_rows(b, t, d, &mut rng);
            let out = temporal_infonce(&audio, &text, &cfg).unwrap();

            let flat: Vec<f64> = text
                .iter()
                .flat_map(|m| m.data().iter().cloned())
                .collect();
            let loss_at = |x: &[f64]| {
                let rebuilt: Vec<DenseMatrix> = (0..b)
                    .map(|bi| {
                        DenseMatrix::from_parts(t, d, x[bi * t * d..(bi + 1) * t * d].to_vec())
                    })
                    .collect();
                temporal_infonce(&audio, &rebuilt, &cfg).map(|o| o.loss)
            };
            let numeric = finite_diff_grad(loss_at, &flat, 1e-5).unwrap();
            let analytic: Vec<f64> = out
                .text_grads
                .iter()
                .flat_map(|m| m.data().iter().cloned())
                .collect();
            let rel = grad_relative_error(&analytic, &numeric);
            assert!(rel < 1e-4, "seed {seed}: rel err {rel:.3e}");
        }
    }

    #[test]
    fn symmetric_gradient_matches_finite_differences() {
        let (b, t, d) = (5, 3, 6);
        let mut cfg = ContrastiveConfig::new(0.3, b, t).unwrap();
        cfg.symmetric = true;
        let mut rng = Rng::from_seed(11);
        let audio = random_unit_rows(b, t, d, &mut rng);
        let text = random_unit_rows(b, t, d, &mut rng);
        let out = temporal_infonce(&audio, &text, &cfg).unwrap();
        let flat: Vec<f64> = text.iter().flat_map(|m| m.data().iter().cloned()).collect();
        let loss_at = |x: &[f64]| {
            let rebuilt: Vec<DenseMatrix> = (0..b)
                .map(|bi| DenseMatrix::from_parts(t, d, x[bi * t * d..(bi + 1) * t * d].to_vec()))
                .collect();
            temporal_infonce(&audio, &rebuilt, &cfg).map(|o| o.loss)
        };
        let numeric = finite_diff_grad(loss_at, &flat, 1e-5).unwrap();
        let analytic: Vec<f64> = out
            .text_grads
            .iter()
            .flat_map(|m| m.data().iter().cloned())
            .collect();
        assert!(grad_relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn loss_bounds_hold() {
        let (b, t, d) = (6, 4, 8);
        let tau = 0.1;
        let cfg = ContrastiveConfig::new(tau, b, t).unwrap();
        for seed in 0..20u64 {
            let mut rng = Rng::from_seed(seed);
            let audio = random_unit_rows(b, t, d, &mut rng);
            let text = random_unit_rows(b, t, d, &mut rng);
            let out = temporal_infonce(&audio, &text, &cfg).unwrap();
            assert!(out.loss >= 0.0);
            let upper = t as f64 * (2.0 / tau + (b as f64).ln());
            assert!(out.loss <= upper + 1e-9, "{} > {}", out.loss, upper);
        }
    }

    #[test]
    fn similarity_shift_leaves_loss_unchanged() {
        let (b, t) = (5, 3);
        let mut rng = Rng::from_seed(4);
        let sims: Vec<DenseMatrix> = (0..t)
            .map(|_| DenseMatrix::from_fn(b, b, |_, _| rng.next_range(-1.0, 1.0)))
            .collect();
        let base = infonce_from_similarities(&sims, 0.07, b).unwrap();
        // Add a constant to every similarity at timestep 1.
        let shifted: Vec<DenseMatrix> = sims
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 1 { s.map(|v| v + 0.37) } else { s.clone() })
            .collect();
        let moved = infonce_from_similarities(&shifted, 0.07, b).unwrap();
        assert!((base - moved).abs() < 1e-10, "{base} vs {moved}");
    }

    #[test]
    fn loss_decreases_monotonically_as_tau_shrinks() {
        // Positives strictly maximal per row.
        let (b, t, d) = (4, 3, 8);
        let mut rng = Rng::from_seed(6);
        let text = random_unit_rows(b, t, d, &mut rng);
        let audio = text.clone(); // positive sim = 1 > any cross sim
        let mut last = f64::INFINITY;
        for &tau in &[1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
            let cfg = ContrastiveConfig::new(tau, b, t).unwrap();
            let loss = temporal_infonce(&audio, &text, &cfg).unwrap().loss;
            assert!(loss < last, "tau {tau}: {loss} !< {last}");
            last = loss;
        }
        assert!(last < 1e-6, "loss should approach 0, got {last}");
    }

    #[test]
    fn batch_permutation_invariance() {
        let (b, t, d) = (6, 4, 8);
        let cfg = ContrastiveConfig::new(0.07, b, t).unwrap();
        let mut rng = Rng::from_seed(8);
        let audio = random_unit_rows(b, t, d, &mut rng);
        let text = random_unit_rows(b, t, d, &mut rng);
        let base = temporal_infonce(&audio, &text, &cfg).unwrap().loss;
        let perm = [3usize, 0, 5, 1, 4, 2];
        let audio_p: Vec<DenseMatrix> = perm.iter().map(|&i| audio[i].clone()).collect();
        let text_p: Vec<DenseMatrix> = perm.iter().map(|&i| text[i].clone()).collect();
        let permuted = temporal_infonce(&audio_p, &text_p, &cfg).unwrap().loss;
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn small_batch_and_non_unit_rows_rejected() {
        assert!(ContrastiveConfig::new(0.07, 1, 10).is_err());
        assert!(ContrastiveConfig::new(0.0, 4, 10).is_err());
        let (b, t, d) = (2, 1, 4);
        let cfg = ContrastiveConfig::new(1.0, b, t).unwrap();
        let mut rng = Rng::from_seed(2);
        let audio = random_unit_rows(b, t, d, &mut rng);
        let mut text = random_unit_rows(b, t, d, &mut rng);
        let bumped = text[0].get(0, 0) + 0.5;
        text[0].set(0, 0, bumped); // breaks the unit norm
        assert!(temporal_infonce(&audio, &text, &cfg).is_err());
    }
}
