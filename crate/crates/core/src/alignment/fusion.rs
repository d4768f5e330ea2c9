//! Dual residual fusion of a pooled text embedding with per-timestep
//! aggregated visual features.
//!
//! Row i of the output is
//!   l2_normalize( t + g1 * MLP1([t; v_i]) + g2 * MLP2(v_i) )
//! with both gates g1, g2 initialized to zero, so an untrained module passes
//! the text embedding through unchanged and training starts exactly at the
//! text-only conditioning baseline.
//!
//! Weights are stored with the reduction axis contiguous (each unit's fan-in
//! is one matrix row), which keeps the forward and backward loops on slices.

use crate::encoders::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::numerics::{dot, DenseMatrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// MLP1 hidden weights: hidden x 2*dim (input is [text; visual]).
    pub w1a: DenseMatrix,
    pub b1a: Vec<f64>,
    /// MLP1 output weights: dim x hidden.
    pub w1b: DenseMatrix,
    pub b1b: Vec<f64>,
    /// MLP2 hidden weights: hidden x dim.
    pub w2a: DenseMatrix,
    pub b2a: Vec<f64>,
    /// MLP2 output weights: dim x hidden.
    pub w2b: DenseMatrix,
    pub b2b: Vec<f64>,
    pub gate1: f64,
    pub gate2: f64,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    t_pool: Vec<f64>,
    v_agg: DenseMatrix,
    z1: DenseMatrix,
    m1: DenseMatrix,
    z2: DenseMatrix,
    m2: DenseMatrix,
    pre_norms: Vec<f64>,
    out: DenseMatrix,
}

impl FusionParams {
    pub fn init(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let s2d = 1.0 / (2.0 * dim as f64).sqrt();
        let sd = 1.0 / (dim as f64).sqrt();
        let sh = 1.0 / (hidden as f64).sqrt();
        FusionParams {
            w1a: DenseMatrix::random_normal(hidden, 2 * dim, s2d, rng),
            b1a: vec![0.0; hidden],
            w1b: DenseMatrix::random_normal(dim, hidden, sh, rng),
            b1b: vec![0.0; dim],
            w2a: DenseMatrix::random_normal(hidden, dim, sd, rng),
            b2a: vec![0.0; hidden],
            w2b: DenseMatrix::random_normal(dim, hidden, sh, rng),
            b2b: vec![0.0; dim],
            gate1: 0.0,
            gate2: 0.0,
        }
    }

    pub fn zeros_like(&self) -> FusionParams {
        FusionParams {
            w1a: DenseMatrix::zeros(self.w1a.rows(), self.w1a.cols()),
            b1a: vec![0.0; self.b1a.len()],
            w1b: DenseMatrix::zeros(self.w1b.rows(), self.w1b.cols()),
            b1b: vec![0.0; self.b1b.len()],
            w2a: DenseMatrix::zeros(self.w2a.rows(), self.w2a.cols()),
            b2a: vec![0.0; self.b2a.len()],
            w2b: DenseMatrix::zeros(self.w2b.rows(), self.w2b.cols()),
            b2b: vec![0.0; self.b2b.len()],
            gate1: 0.0,
            gate2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w1b.rows()
    }

    pub fn hidden(&self) -> usize {
        self.b1a.len()
    }

    /// Fuse a pooled text embedding with aggregated visual rows. Returns the
    /// visual-aligned text sequence (unit rows) and the backward cache.
    pub fn forward(
        &self,
        t_pool: &[f64],
        v_agg: &DenseMatrix,
    ) -> Result<(EmbeddingSequence, FusionCache)> {
        let dim = self.dim();
        let hidden = self.hidden();
        if t_pool.len() != dim {
            return Err(Error::shape(format!(
                "pooled text dim {} vs fusion dim {dim}",
                t_pool.len()
            )));
        }
        if v_agg.cols() != dim {
            return Err(Error::shape(format!(
                "visual dim {} vs fusion dim {dim}",
                v_agg.cols()
            )));
        }
        let t_rows = v_agg.rows();
        let mut z1 = DenseMatrix::zeros(t_rows, hidden);
        let mut m1 = DenseMatrix::zeros(t_rows, dim);
        let mut z2 = DenseMatrix::zeros(t_rows, hidden);
        let mut m2 = DenseMatrix::zeros(t_rows, dim);
        let mut out = DenseMatrix::zeros(t_rows, dim);
        let mut pre_norms = vec![0.0; t_rows];
        let mut u = vec![0.0; 2 * dim];
        u[..dim].copy_from_slice(t_pool);

        for i in 0..t_rows {
            let v_i = v_agg.row(i);
            u[dim..].copy_from_slice(v_i);
            {
                let z1_row = z1.row_mut(i);
                for h in 0..hidden {
                    z1_row[h] = (dot(self.w1a.row(h), &u) + self.b1a[h]).tanh();
                }
            }
            {
                let z2_row = z2.row_mut(i);
                for h in 0..hidden {
                    z2_row[h] = (dot(self.w2a.row(h), v_i) + self.b2a[h]).tanh();
                }
            }
            for c in 0..dim {
                m1.row_mut(i)[c] = dot(self.w1b.row(c), z1.row(i)) + self.b1b[c];
                m2.row_mut(i)[c] = dot(self.w2b.row(c), z2.row(i)) + self.b2b[c];
            }
            let mut norm_sq = 0.0;
            {
                let out_row = out.row_mut(i);
                for c in 0..dim {
                    let v = t_pool[c] + self.gate1 * m1.row(i)[c] + self.gate2 * m2.row(i)[c];
                    out_row[c] = v;
                    norm_sq += v * v;
                }
            }
            let norm = norm_sq.sqrt();
            if norm < 1e-300 {
                return Err(Error::Degenerate(format!(
                    "fusion row {i} collapsed to the zero vector"
                )));
            }
            pre_norms[i] = norm;
            for v in out.row_mut(i) {
                *v /= norm;
            }
        }

        let seq = EmbeddingSequence::new(out.clone())?;
        Ok((
            seq,
            FusionCache {
                t_pool: t_pool.to_vec(),
                v_agg: v_agg.clone(),
                z1,
                m1,
                z2,
                m2,
                pre_norms,
                out,
            },
        ))
    }

    /// Backward pass. Accumulates into `grads`; returns (d_v_agg, d_t_pool).
    pub fn backward(
        &self,
        cache: &FusionCache,
        d_out: &DenseMatrix,
        grads: &mut FusionParams,
    ) -> (DenseMatrix, Vec<f64>) {
        let dim = self.dim();
        let hidden = self.hidden();
        let t_rows = cache.v_agg.rows();
        let mut d_vagg = DenseMatrix::zeros(t_rows, dim);
        let mut d_tpool = vec![0.0; dim];
        let mut u = vec![0.0; 2 * dim];
        u[..dim].copy_from_slice(&cache.t_pool);
        let mut d_pre = vec![0.0; dim];
        let mut dz1 = vec![0.0; hidden];
        let mut dz2 = vec![0.0; hidden];

        for i in 0..t_rows {
            let v_i = cache.v_agg.row(i);
            u[dim..].copy_from_slice(v_i);
            // y = pre / ||pre||  =>  d_pre = (d_y - y <y, d_y>) / ||pre||
            let y = cache.out.row(i);
            let dy = d_out.row(i);
            let proj = dot(y, dy);
            let inv = 1.0 / cache.pre_norms[i];
            for c in 0..dim {
                d_pre[c] = (dy[c] - y[c] * proj) * inv;
            }

            grads.gate1 += dot(&d_pre, cache.m1.row(i));
            grads.gate2 += dot(&d_pre, cache.m2.row(i));
            for c in 0..dim {
                d_tpool[c] += d_pre[c];
            }

            // MLP1 backward: dm1 = g1 * d_pre.
            let z1 = cache.z1.row(i);
            dz1.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..dim {
                let dm = self.gate1 * d_pre[c];
                if dm != 0.0 {
                    let wrow = self.w1b.row(c);
                    let grow = grads.w1b.row_mut(c);
                    for h in 0..hidden {
                        dz1[h] += dm * wrow[h];
                        grow[h] += dm * z1[h];
                    }
                    grads.b1b[c] += dm;
                }
            }
            for h in 0..hidden {
                let dpre1 = dz1[h] * (1.0 - z1[h] * z1[h]);
                if dpre1 == 0.0 {
                    continue;
                }
                grads.b1a[h] += dpre1;
                let grow = grads.w1a.row_mut(h);
                for (g, &uv) in grow.iter_mut().zip(u.iter()) {
                    *g += dpre1 * uv;
                }
                let wrow = self.w1a.row(h);
                for c in 0..dim {
                    d_tpool[c] += dpre1 * wrow[c];
                }
                let dst = d_vagg.row_mut(i);
                for c in 0..dim {
                    dst[c] += dpre1 * wrow[dim + c];
                }
            }

            // MLP2 backward: dm2 = g2 * d_pre.
            let z2 = cache.z2.row(i);
            dz2.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..dim {
                let dm = self.gate2 * d_pre[c];
                if dm != 0.0 {
                    let wrow = self.w2b.row(c);
                    let grow = grads.w2b.row_mut(c);
                    for h in 0..hidden {
                        dz2[h] += dm * wrow[h];
                        grow[h] += dm * z2[h];
                    }
                    grads.b2b[c] += dm;
                }
            }
            for h in 0..hidden {
                let dpre2 = dz2[h] * (1.0 - z2[h] * z2[h]);
                if dpre2 == 0.0 {
                    continue;
                }
                grads.b2a[h] += dpre2;
                let grow = grads.w2a.row_mut(h);
                for (g, &vv) in grow.iter_mut().zip(v_i.iter()) {
                    *g += dpre2 * vv;
                }
                let wrow = self.w2a.row(h);
                let dst = d_vagg.row_mut(i);
                for c in 0..dim {
                    dst[c] += dpre2 * wrow[c];
                }
            }
        }
        (d_vagg, d_tpool)
    }

    pub fn param_count(&self) -> usize {
        let d = self.dim();
        let h = self.hidden();
        5 * d * h + 2 * h + 2 * d + 2
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1a.data());
        out.extend_from_slice(&self.b1a);
        out.extend_from_slice(self.w1b.data());
        out.extend_from_slice(&self.b1b);
        out.extend_from_slice(self.w2a.data());
        out.extend_from_slice(&self.b2a);
        out.extend_from_slice(self.w2b.data());
        out.extend_from_slice(&self.b2b);
        out.push(self.gate1);
        out.push(self.gate2);
    }

    pub fn unflatten_from(&mut self, data: &[f64], pos: &mut usize) {
        let mut take = |n: usize| {
            let s = &data[*pos..*pos + n];
            *pos += n;
            s.to_vec()
        };
        let (w1a_n, b1a_n) = (self.w1a.data().len(), self.b1a.len());
        let (w1b_n, b1b_n) = (self.w1b.data().len(), self.b1b.len());
        let (w2a_n, b2a_n) = (self.w2a.data().len(), self.b2a.len());
        let (w2b_n, b2b_n) = (self.w2b.data().len(), self.b2b.len());
        self.w1a.data_mut().copy_from_slice(&take(w1a_n));
        self.b1a.copy_from_slice(&take(b1a_n));
        self.w1b.data_mut().copy_from_slice(&take(w1b_n));
        self.b1b.copy_from_slice(&take(b1b_n));
        self.w2a.data_mut().copy_from_slice(&take(w2a_n));
        self.b2a.copy_from_slice(&take(b2a_n));
        self.w2b.data_mut().copy_from_slice(&take(w2b_n));
        self.b2b.copy_from_slice(&take(b2b_n));
        self.gate1 = take(1)[0];
        self.gate2 = take(1)[0];
    }
}
