//! Trainable visual-text alignment: a multi-head attention transformer over
//! temporal video embeddings plus a dual residual fusion with the pooled text
//! embedding, producing the visual-aligned text sequence.
//!
//! These parameters (attention stack + fusion) are the only trainable weights
//! upstream of the diffusion stage; encoders stay frozen and the alignment
//! trainer never touches codec or denoiser parameters.

pub mod attention;
pub mod fusion;

pub use attention::{positional_encoding, AttentionStack, StackCache};
pub use fusion::{FusionCache, FusionParams};

use crate::encoders::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};
use crate::snapshot::{take_block, Block};

/// Scale applied to the sinusoidal positional encoding before it is added to
/// the attention input. Keeps position visible without drowning unit-norm
/// content rows.
pub const PE_SCALE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentConfig {
    pub model_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub fusion_hidden: usize,
    /// Sinusoidal positional encoding on the attention input.
    pub positional_encoding: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            model_dim: 64,
            depth: 2,
            heads: 8,
            ff_hidden: 128,
            fusion_hidden: 128,
            positional_encoding: true,
        }
    }
}

impl AlignmentConfig {
    /// Closed-form parameter count:
    /// depth * (4 D^2 + 2 D F + 9 D + F) + 5 D H + 2 H + 2 D + 2
    /// with D = model_dim, F = ff_hidden, H = fusion_hidden.
    pub fn expected_param_count(&self) -> usize {
        let d = self.model_dim;
        let f = self.ff_hidden;
        let h = self.fusion_hidden;
        self.depth * (4 * d * d + 2 * d * f + 9 * d + f) + 5 * d * h + 2 * h + 2 * d + 2
    }
}

/// All trainable alignment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    pub cfg: AlignmentConfig,
    pub stack: AttentionStack,
    pub fusion: FusionParams,
}

/// Forward cache for one sample.
#[derive(Debug, Clone)]
pub struct AlignCache {
    stack: StackCache,
    fusion: FusionCache,
}

impl AlignmentParams {
    pub fn init(cfg: AlignmentConfig, rng: &mut Rng) -> Result<Self> {
        let stack = AttentionStack::init(cfg.depth, cfg.model_dim, cfg.heads, cfg.ff_hidden, rng)?;
        let fusion = FusionParams::init(cfg.model_dim, cfg.fusion_hidden, rng);
        Ok(AlignmentParams { cfg, stack, fusion })
    }

    pub fn zeros_like(&self) -> AlignmentParams {
        AlignmentParams {
            cfg: self.cfg,
            stack: self.stack.zeros_like(),
            fusion: self.fusion.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count() + self.fusion.param_count()
    }

    /// Temporal aggregation of video embeddings: positional encoding (if
    /// enabled) plus the attention stack. Output rows are not normalized.
    pub fn attend_temporal(&self, f_v: &EmbeddingSequence) -> Result<DenseMatrix> {
        let (out, _) = self.attend_temporal_cached(f_v)?;
        Ok(out)
    }

    fn attend_temporal_cached(
        &self,
        f_v: &EmbeddingSequence,
    ) -> Result<(DenseMatrix, StackCache)> {
        if f_v.dim() != self.cfg.model_dim {
            return Err(Error::shape(format!(
                "video embedding dim {} vs model dim {}",
                f_v.dim(),
                self.cfg.model_dim
            )));
        }
        let mut x = f_v.matrix().clone();
        if self.cfg.positional_encoding {
            let pe = positional_encoding(x.rows(), x.cols());
            for r in 0..x.rows() {
                let row = x.row_mut(r);
                for (c, v) in row.iter_mut().enumerate() {
                    *v += PE_SCALE * pe.get(r, c);
                }
            }
        }
        self.stack.forward(&x)
    }

    /// Fuse a pooled text embedding with aggregated visual rows.
    pub fn fuse(&self, t_pool: &[f64], v_agg: &DenseMatrix) -> Result<EmbeddingSequence> {
        let (out, _) = self.fusion.forward(t_pool, v_agg)?;
        Ok(out)
    }

    /// Full forward: video embeddings + pooled text -> visual-aligned text.
    pub fn forward(
        &self,
        f_v: &EmbeddingSequence,
        t_pool: &[f64],
    ) -> Result<(EmbeddingSequence, AlignCache)> {
        let (v_agg, stack_cache) = self.attend_temporal_cached(f_v)?;
        let (aligned, fusion_cache) = self.fusion.forward(t_pool, &v_agg)?;
        Ok((
            aligned,
            AlignCache {
                stack: stack_cache,
                fusion: fusion_cache,
            },
        ))
    }

    /// Backward from a gradient on the aligned-text rows. Parameter gradients
    /// accumulate into `grads`; input gradients are discarded (both encoders
    /// feeding this module are frozen).
    pub fn backward(
        &self,
        cache: &AlignCache,
        d_aligned: &DenseMatrix,
        grads: &mut AlignmentParams,
    ) {
        let (d_vagg, _d_tpool) = self.fusion.backward(&cache.fusion, d_aligned, &mut grads.fusion);
        let _d_input = self.stack.backward(&cache.stack, &d_vagg, &mut grads.stack);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.stack.flatten_into(&mut out);
        self.fusion.flatten_into(&mut out);
        out
    }

    pub fn set_from_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, expected {}",
                data.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        self.stack.unflatten_from(data, &mut pos);
        self.fusion.unflatten_from(data, &mut pos);
        debug_assert_eq!(pos, data.len());
        Ok(())
    }

    /// Snapshot blocks (one flat block plus the config dims for validation).
    pub fn to_blocks(&self) -> Vec<Block> {
        vec![
            Block::new(
                "alignment.dims",
                vec![6],
                vec![
                    self.cfg.model_dim as f64,
                    self.cfg.depth as f64,
                    self.cfg.heads as f64,
                    self.cfg.ff_hidden as f64,
                    self.cfg.fusion_hidden as f64,
                    if self.cfg.positional_encoding { 1.0 } else { 0.0 },
                ],
            ),
            Block::new("alignment.params", vec![self.param_count()], self.flatten()),
        ]
    }

    pub fn from_blocks(blocks: &[Block]) -> Result<Self> {
        let dims = take_block(blocks, "alignment.dims", &[6])?;
        let cfg = AlignmentConfig {
            model_dim: dims[0] as usize,
            depth: dims[1] as usize,
            heads: dims[2] as usize,
            ff_hidden: dims[3] as usize,
            fusion_hidden: dims[4] as usize,
            positional_encoding: dims[5] != 0.0,
        };
        let mut params = AlignmentParams::init(cfg, &mut Rng::from_seed(0))?;
        let flat = take_block(blocks, "alignment.params", &[params.param_count()])?;
        params.set_from_flat(&flat)?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{temporal_infonce, ContrastiveConfig};
    use crate::numerics::{finite_diff_grad, grad_relative_error, l2_normalize};

    fn unit_vec(d: usize, rng: &mut Rng) -> Vec<f64> {
        l2_normalize(&(0..d).map(|_| rng.next_normal()).collect::<Vec<_>>()).unwrap()
    }

    fn unit_seq(t: usize, d: usize, rng: &mut Rng) -> EmbeddingSequence {
        let mut m = DenseMatrix::zeros(t, d);
        for i in 0..t {
            m.row_mut(i).copy_from_slice(&unit_vec(d, rng));
        }
        EmbeddingSequence::new(m).unwrap()
    }

    fn small_cfg() -> AlignmentConfig {
        AlignmentConfig {
            model_dim: 8,
            depth: 2,
            heads: 2,
            ff_hidden: 12,
            fusion_hidden: 10,
            positional_encoding: true,
        }
    }

    #[test]
    fn param_count_matches_formula_for_named_shape() {
        let cfg = AlignmentConfig {
            model_dim: 64,
            depth: 4,
            heads: 8,
            ff_hidden: 256,
            fusion_hidden: 128,
            positional_encoding: true,
        };
        let params = AlignmentParams::init(cfg, &mut Rng::from_seed(0)).unwrap();
        assert_eq!(params.param_count(), cfg.expected_param_count());
        assert_eq!(params.param_count(), 241_282);
    }

    #[test]
    fn full_scale_preset_constructs_and_reports_count() {
        // depth 4, dim 768, 8 heads.
        let cfg = AlignmentConfig {
            model_dim: 768,
            depth: 4,
            heads: 8,
            ff_hidden: 4 * 768,
            fusion_hidden: 2 * 768,
            positional_encoding: true,
        };
        let params = AlignmentParams::init(cfg, &mut Rng::from_seed(0)).unwrap();
        assert_eq!(params.param_count(), cfg.expected_param_count());
        assert!(params.param_count() > 10_000_000);
    }

    #[test]
    fn zero_gate_identity_at_initialization() {
        let mut rng = Rng::from_seed(1);
        let params = AlignmentParams::init(small_cfg(), &mut rng).unwrap();
        let f_v = unit_seq(5, 8, &mut rng);
        let t_pool = unit_vec(8, &mut rng);
        let (aligned, _) = params.forward(&f_v, &t_pool).unwrap();
        let expect = l2_normalize(&t_pool).unwrap();
        for i in 0..5 {
            assert_eq!(aligned.row(i), expect.as_slice());
        }
    }

    #[test]
    fn aligned_rows_are_unit_norm_with_open_gates() {
        let mut rng = Rng::from_seed(2);
        let mut params = AlignmentParams::init(small_cfg(), &mut rng).unwrap();
        params.fusion.gate1 = 0.8;
        params.fusion.gate2 = -0.5;
        let f_v = unit_seq(5, 8, &mut rng);
        let t_pool = unit_vec(8, &mut rng);
        let (aligned, _) = params.forward(&f_v, &t_pool).unwrap();
        for i in 0..5 {
            let n = crate::numerics::l2_norm(aligned.row(i));
            assert!((n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn equivariance_only_without_positional_encoding() {
        let mut rng = Rng::from_seed(3);
        let mut cfg = small_cfg();
        cfg.positional_encoding = false;
        let params = AlignmentParams::init(cfg, &mut rng).unwrap();
        let f_v = unit_seq(6, 8, &mut rng);
        let perm = [4usize, 2, 0, 5, 3, 1];
        let mut pm = DenseMatrix::zeros(6, 8);
        for (r, &p) in perm.iter().enumerate() {
            pm.row_mut(r).copy_from_slice(f_v.row(p));
        }
        let f_v_p = EmbeddingSequence::new(pm).unwrap();
        let a = params.attend_temporal(&f_v).unwrap();
        let b = params.attend_temporal(&f_v_p).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((b.get(r, c) - a.get(p, c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn contrastive_loss_gradients_match_finite_differences() {
        // Full chain: attention + fusion -> temporal InfoNCE, gradients w.r.t.
        // every alignment parameter.
        let b_n = 3;
        let t_n = 3;
        let d = 8;
        let cfg = small_cfg();
        let loss_cfg = ContrastiveConfig::new(0.2, b_n, t_n).unwrap();

        for seed in [0u64, 1] {
            let mut rng = Rng::from_seed(seed);
            let mut params = AlignmentParams::init(cfg, &mut rng).unwrap();
            // Open the gates so fusion params participate.
            params.fusion.gate1 = 0.6;
            params.fusion.gate2 = 0.4;
            let videos: Vec<EmbeddingSequence> =
                (0..b_n).map(|_| unit_seq(t_n, d, &mut rng)).collect();
            let pools: Vec<Vec<f64>> = (0..b_n).map(|_| unit_vec(d, &mut rng)).collect();
            let audio: Vec<DenseMatrix> = (0..b_n)
                .map(|_| unit_seq(t_n, d, &mut rng).into_matrix())
                .collect();

            let eval = |p: &AlignmentParams| -> crate::Result<(f64, Vec<DenseMatrix>, Vec<AlignCache>)> {
                let mut aligned = Vec::with_capacity(b_n);
                let mut caches = Vec::with_capacity(b_n);
                for bi in 0..b_n {
                    let (a, c) = p.forward(&videos[bi], &pools[bi])?;
                    aligned.push(a.into_matrix());
                    caches.push(c);
                }
                let out = temporal_infonce(&audio, &aligned, &loss_cfg)?;
                Ok((out.loss, out.text_grads, caches))
            };

            let (loss, text_grads, caches) = eval(&params).unwrap();
            assert!(loss.is_finite());
            let mut grads = params.zeros_like();
            for bi in 0..b_n {
                params.backward(&caches[bi], &text_grads[bi], &mut grads);
            }
            let analytic = grads.flatten();

            let flat = params.flatten();
            let probe = |x: &[f64]| {
                let mut p = params.clone();
                p.set_from_flat(x)?;
                eval(&p).map(|(l, _, _)| l)
            };
            let numeric = finite_diff_grad(probe, &flat, 1e-5).unwrap();
            let rel = grad_relative_error(&analytic, &numeric);
            assert!(rel < 1e-4, "seed {seed}: rel err {rel:.3e}");
        }
    }

    #[test]
    fn snapshot_blocks_roundtrip() {
        let mut rng = Rng::from_seed(5);
        let mut params = AlignmentParams::init(small_cfg(), &mut rng).unwrap();
        params.fusion.gate1 = 0.25;
        let blocks = params.to_blocks();
        let restored = AlignmentParams::from_blocks(&blocks).unwrap();
        assert_eq!(restored.cfg, params.cfg);
        // Values pass through f32 only when written to disk; block roundtrip
        // in memory is exact.
        assert_eq!(restored.flatten(), params.flatten());
    }
}
