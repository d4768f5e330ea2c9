//! Pre-norm multi-head self-attention encoder over the time axis, with a
//! hand-derived backward pass.
//!
//! Layer layout (row convention: activations are T x D, weights right-multiply):
//!   n1    = LN(x)
//!   q,k,v = n1 Wq + bq, ...
//!   attn  = concat_h softmax(Q_h K_h^T / sqrt(d_h)) V_h, projected by Wo
//!   x'    = x + attn
//!   n2    = LN(x')
//!   x''   = x' + tanh(n2 W1 + b1) W2 + b2
//!
//! tanh keeps the whole stack smooth, so finite-difference gradient checks
//! are meaningful everywhere.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};

const LN_EPS: f64 = 1e-5;

/// Softmax of one attention score row, in place. Max-subtraction keeps the
/// exponentials bounded; a single element comes out exactly 1.
pub(crate) fn attn_softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Sinusoidal positional encoding, rows are timesteps.
pub fn positional_encoding(timesteps: usize, dim: usize) -> DenseMatrix {
    DenseMatrix::from_fn(timesteps, dim, |t, j| {
        let pair = (j / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
        let angle = t as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: DenseMatrix,
    pub bq: Vec<f64>,
    pub wk: DenseMatrix,
    pub bk: Vec<f64>,
    pub wv: DenseMatrix,
    pub bv: Vec<f64>,
    pub wo: DenseMatrix,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
}

impl AttentionLayer {
    fn init(dim: usize, ff_hidden: usize, rng: &mut Rng) -> Self {
        let s_d = 1.0 / (dim as f64).sqrt();
        let s_f = 1.0 / (ff_hidden as f64).sqrt();
        AttentionLayer {
            ln1_gamma: vec![1.0; dim],
            ln1_beta: vec![0.0; dim],
            wq: DenseMatrix::random_normal(dim, dim, s_d, rng),
            bq: vec![0.0; dim],
            wk: DenseMatrix::random_normal(dim, dim, s_d, rng),
            bk: vec![0.0; dim],
            wv: DenseMatrix::random_normal(dim, dim, s_d, rng),
            bv: vec![0.0; dim],
            wo: DenseMatrix::random_normal(dim, dim, s_d, rng),
            bo: vec![0.0; dim],
            ln2_gamma: vec![1.0; dim],
            ln2_beta: vec![0.0; dim],
            w1: DenseMatrix::random_normal(dim, ff_hidden, s_d, rng),
            b1: vec![0.0; ff_hidden],
            w2: DenseMatrix::random_normal(ff_hidden, dim, s_f, rng),
            b2: vec![0.0; dim],
        }
    }

    fn zeros(dim: usize, ff_hidden: usize) -> Self {
        AttentionLayer {
            ln1_gamma: vec![0.0; dim],
            ln1_beta: vec![0.0; dim],
            wq: DenseMatrix::zeros(dim, dim),
            bq: vec![0.0; dim],
            wk: DenseMatrix::zeros(dim, dim),
            bk: vec![0.0; dim],
            wv: DenseMatrix::zeros(dim, dim),
            bv: vec![0.0; dim],
            wo: DenseMatrix::zeros(dim, dim),
            bo: vec![0.0; dim],
            ln2_gamma: vec![0.0; dim],
            ln2_beta: vec![0.0; dim],
            w1: DenseMatrix::zeros(dim, ff_hidden),
            b1: vec![0.0; ff_hidden],
            w2: DenseMatrix::zeros(ff_hidden, dim),
            b2: vec![0.0; dim],
        }
    }
}

/// LayerNorm forward: returns (output, xhat, inv_std per row).
fn layer_norm(
    x: &DenseMatrix,
    gamma: &[f64],
    beta: &[f64],
) -> (DenseMatrix, DenseMatrix, Vec<f64>) {
    let (t, d) = (x.rows(), x.cols());
    let mut out = DenseMatrix::zeros(t, d);
    let mut xhat = DenseMatrix::zeros(t, d);
    let mut inv_std = vec![0.0; t];
    for r in 0..t {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = inv;
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            xhat.set(r, c, xh);
            out.set(r, c, gamma[c] * xh + beta[c]);
        }
    }
    (out, xhat, inv_std)
}

/// LayerNorm backward. Accumulates dgamma/dbeta, returns dx.
fn layer_norm_backward(
    d_out: &DenseMatrix,
    xhat: &DenseMatrix,
    inv_std: &[f64],
    gamma: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> DenseMatrix {
    let (t, d) = (d_out.rows(), d_out.cols());
    let mut dx = DenseMatrix::zeros(t, d);
    for r in 0..t {
        let dy = d_out.row(r);
        let xh = xhat.row(r);
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            d_gamma[c] += dy[c] * xh[c];
            d_beta[c] += dy[c];
            let dxh = dy[c] * gamma[c];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for c in 0..d {
            let dxh = dy[c] * gamma[c];
            dx.set(r, c, inv_std[r] * (dxh - mean_dxhat - xh[c] * mean_dxhat_xhat));
        }
    }
    dx
}

/// Per-layer forward cache.
#[derive(Debug, Clone)]
struct LayerCache {
    x_in: DenseMatrix,
    n1: DenseMatrix,
    ln1_xhat: DenseMatrix,
    ln1_inv_std: Vec<f64>,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    /// Attention probabilities per head, each T x T.
    probs: Vec<DenseMatrix>,
    concat: DenseMatrix,
    n2: DenseMatrix,
    ln2_xhat: DenseMatrix,
    ln2_inv_std: Vec<f64>,
    z: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct StackCache {
    layers: Vec<LayerCache>,
}

/// Multi-head attention encoder stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub layers: Vec<AttentionLayer>,
}

impl AttentionStack {
    pub fn init(depth: usize, dim: usize, heads: usize, ff_hidden: usize, rng: &mut Rng) -> Result<Self> {
        if depth == 0 || dim == 0 || heads == 0 || ff_hidden == 0 {
            return Err(Error::config("attention dims must all be positive"));
        }
        if dim % heads != 0 {
            return Err(Error::config(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(AttentionStack {
            dim,
            heads,
            ff_hidden,
            layers: (0..depth)
                .map(|_| AttentionLayer::init(dim, ff_hidden, rng))
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> AttentionStack {
        AttentionStack {
            dim: self.dim,
            heads: self.heads,
            ff_hidden: self.ff_hidden,
            layers: self
                .layers
                .iter()
                .map(|_| AttentionLayer::zeros(self.dim, self.ff_hidden))
                .collect(),
        }
    }

    /// Forward over a T x D input (positional encoding, if any, is already
    /// added by the caller). Returns the encoded sequence and the cache.
    pub fn forward(&self, x: &DenseMatrix) -> Result<(DenseMatrix, StackCache)> {
        if x.cols() != self.dim {
            return Err(Error::shape(format!(
                "attention input dim {} vs model dim {}",
                x.cols(),
                self.dim
            )));
        }
        let t = x.rows();
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let (n1, ln1_xhat, ln1_inv_std) = layer_norm(&cur, &layer.ln1_gamma, &layer.ln1_beta);
            let mut q = n1.matmul(&layer.wq);
            q.add_row_broadcast(&layer.bq);
            let mut k = n1.matmul(&layer.wk);
            k.add_row_broadcast(&layer.bk);
            let mut v = n1.matmul(&layer.wv);
            v.add_row_broadcast(&layer.bv);

            let mut probs = Vec::with_capacity(self.heads);
            let mut concat = DenseMatrix::zeros(t, self.dim);
            for h in 0..self.heads {
                let lo = h * dh;
                let hi = lo + dh;
                let mut p = DenseMatrix::zeros(t, t);
                for i in 0..t {
                    let qi = &q.row(i)[lo..hi];
                    let prow = p.row_mut(i);
                    for j in 0..t {
                        prow[j] = crate::numerics::dot(qi, &k.row(j)[lo..hi]) * scale;
                    }
                    attn_softmax_row(prow);
                }
                for i in 0..t {
                    let prow = p.row(i).to_vec();
                    let dst = &mut concat.row_mut(i)[lo..hi];
                    for (j, &pj) in prow.iter().enumerate() {
                        let vj = &v.row(j)[lo..hi];
                        for (d, &vv) in dst.iter_mut().zip(vj.iter()) {
                            *d += pj * vv;
                        }
                    }
                }
                probs.push(p);
            }

            let mut attn = concat.matmul(&layer.wo);
            attn.add_row_broadcast(&layer.bo);
            let mut x_mid = cur.clone();
            x_mid.add_assign(&attn);
            let (n2, ln2_xhat, ln2_inv_std) =
                layer_norm(&x_mid, &layer.ln2_gamma, &layer.ln2_beta);
            let mut h1 = n2.matmul(&layer.w1);
            h1.add_row_broadcast(&layer.b1);
            let z = h1.map(f64::tanh);
            let mut ff = z.matmul(&layer.w2);
            ff.add_row_broadcast(&layer.b2);
            let mut x_out = x_mid.clone();
            x_out.add_assign(&ff);

            caches.push(LayerCache {
                x_in: cur,
                n1,
                ln1_xhat,
                ln1_inv_std,
                q,
                k,
                v,
                probs,
                concat,
                n2,
                ln2_xhat,
                ln2_inv_std,
                z,
            });
            cur = x_out;
        }

        Ok((cur, StackCache { layers: caches }))
    }

    /// Backward pass. Accumulates parameter gradients into `grads` (a
    /// zeros_like sibling) and returns the gradient w.r.t. the stack input.
    pub fn backward(
        &self,
        cache: &StackCache,
        d_out: &DenseMatrix,
        grads: &mut AttentionStack,
    ) -> DenseMatrix {
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d_cur = d_out.clone();

        for (layer, (lc, g)) in self
            .layers
            .iter()
            .zip(cache.layers.iter().zip(grads.layers.iter_mut()))
            .rev()
        {
            let t = lc.x_in.rows();
            // x_out = x_mid + tanh(n2 W1 + b1) W2 + b2
            let d_ff = &d_cur;
            for (gw, v) in g.b2.iter_mut().zip(d_ff.col_sums()) {
                *gw += v;
            }
            g.w2.add_assign(&lc.z.matmul_at_b(d_ff));
            let dz = d_ff.matmul_a_bt(&layer.w2);
            let mut dh1 = DenseMatrix::zeros(t, self.ff_hidden);
            for r in 0..t {
                for c in 0..self.ff_hidden {
                    let zv = lc.z.get(r, c);
                    dh1.set(r, c, dz.get(r, c) * (1.0 - zv * zv));
                }
            }
            for (gw, v) in g.b1.iter_mut().zip(dh1.col_sums()) {
                *gw += v;
            }
            g.w1.add_assign(&lc.n2.matmul_at_b(&dh1));
            let dn2 = dh1.matmul_a_bt(&layer.w1);
            let mut d_xmid = d_cur.clone();
            d_xmid.add_assign(&layer_norm_backward(
                &dn2,
                &lc.ln2_xhat,
                &lc.ln2_inv_std,
                &layer.ln2_gamma,
                &mut g.ln2_gamma,
                &mut g.ln2_beta,
            ));

            // x_mid = x_in + concat Wo + bo
            let d_attn = &d_xmid;
            for (gw, v) in g.bo.iter_mut().zip(d_attn.col_sums()) {
                *gw += v;
            }
            g.wo.add_assign(&lc.concat.matmul_at_b(d_attn));
            let d_concat = d_attn.matmul_a_bt(&layer.wo);

            let mut dq = DenseMatrix::zeros(t, self.dim);
            let mut dk = DenseMatrix::zeros(t, self.dim);
            let mut dv = DenseMatrix::zeros(t, self.dim);
            for h in 0..self.heads {
                let lo = h * dh;
                let hi = lo + dh;
                let p = &lc.probs[h];
                // dV_h = P^T dO_h ; dP = dO_h V_h^T
                for i in 0..t {
                    let dci = &d_concat.row(i)[lo..hi];
                    let mut dp = vec![0.0; t];
                    for (j, dpj) in dp.iter_mut().enumerate() {
                        *dpj = crate::numerics::dot(dci, &lc.v.row(j)[lo..hi]);
                    }
                    let prow = p.row(i);
                    let inner: f64 = dp.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                    let qi = lc.q.row(i)[lo..hi].to_vec();
                    for j in 0..t {
                        let ds = prow[j] * (dp[j] - inner) * scale;
                        let kj = &lc.k.row(j)[lo..hi];
                        let dqi = &mut dq.row_mut(i)[lo..hi];
                        for (dqv, &kv) in dqi.iter_mut().zip(kj.iter()) {
                            *dqv += ds * kv;
                        }
                        let dkj = &mut dk.row_mut(j)[lo..hi];
                        for (dkv, &qv) in dkj.iter_mut().zip(qi.iter()) {
                            *dkv += ds * qv;
                        }
                    }
                    let dci = dci.to_vec();
                    for j in 0..t {
                        let pj = prow[j];
                        let dvj = &mut dv.row_mut(j)[lo..hi];
                        for (dvv, &dc) in dvj.iter_mut().zip(dci.iter()) {
                            *dvv += pj * dc;
                        }
                    }
                }
            }

            for (gw, v) in g.bq.iter_mut().zip(dq.col_sums()) {
                *gw += v;
            }
            g.wq.add_assign(&lc.n1.matmul_at_b(&dq));
            for (gw, v) in g.bk.iter_mut().zip(dk.col_sums()) {
                *gw += v;
            }
            g.wk.add_assign(&lc.n1.matmul_at_b(&dk));
            for (gw, v) in g.bv.iter_mut().zip(dv.col_sums()) {
                *gw += v;
            }
            g.wv.add_assign(&lc.n1.matmul_at_b(&dv));

            let mut dn1 = dq.matmul_a_bt(&layer.wq);
            dn1.add_assign(&dk.matmul_a_bt(&layer.wk));
            dn1.add_assign(&dv.matmul_a_bt(&layer.wv));

            let mut d_x = d_xmid;
            d_x.add_assign(&layer_norm_backward(
                &dn1,
                &lc.ln1_xhat,
                &lc.ln1_inv_std,
                &layer.ln1_gamma,
                &mut g.ln1_gamma,
                &mut g.ln1_beta,
            ));
            d_cur = d_x;
        }
        d_cur
    }

    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let f = self.ff_hidden;
        self.layers.len() * (4 * d * d + 2 * d * f + 9 * d + f)
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.ln1_gamma);
            out.extend_from_slice(&l.ln1_beta);
            out.extend_from_slice(l.wq.data());
            out.extend_from_slice(&l.bq);
            out.extend_from_slice(l.wk.data());
            out.extend_from_slice(&l.bk);
            out.extend_from_slice(l.wv.data());
            out.extend_from_slice(&l.bv);
            out.extend_from_slice(l.wo.data());
            out.extend_from_slice(&l.bo);
            out.extend_from_slice(&l.ln2_gamma);
            out.extend_from_slice(&l.ln2_beta);
            out.extend_from_slice(l.w1.data());
            out.extend_from_slice(&l.b1);
            out.extend_from_slice(l.w2.data());
            out.extend_from_slice(&l.b2);
        }
    }

    pub fn unflatten_from(&mut self, data: &[f64], pos: &mut usize) {
        fn take<'a>(data: &'a [f64], pos: &mut usize, n: usize) -> &'a [f64] {
            let s = &data[*pos..*pos + n];
            *pos += n;
            s
        }
        for l in self.layers.iter_mut() {
            let d = l.wq.rows();
            let f = l.b1.len();
            l.ln1_gamma.copy_from_slice(take(data, pos, d));
            l.ln1_beta.copy_from_slice(take(data, pos, d));
            l.wq.data_mut().copy_from_slice(take(data, pos, d * d));
            l.bq.copy_from_slice(take(data, pos, d));
            l.wk.data_mut().copy_from_slice(take(data, pos, d * d));
            l.bk.copy_from_slice(take(data, pos, d));
            l.wv.data_mut().copy_from_slice(take(data, pos, d * d));
            l.bv.copy_from_slice(take(data, pos, d));
            l.wo.data_mut().copy_from_slice(take(data, pos, d * d));
            l.bo.copy_from_slice(take(data, pos, d));
            l.ln2_gamma.copy_from_slice(take(data, pos, d));
            l.ln2_beta.copy_from_slice(take(data, pos, d));
            l.w1.data_mut().copy_from_slice(take(data, pos, d * f));
            l.b1.copy_from_slice(take(data, pos, f));
            l.w2.data_mut().copy_from_slice(take(data, pos, f * d));
            l.b2.copy_from_slice(take(data, pos, d));
        }
    }
}
