//! Conditional noise-prediction network: a residual MLP over the flattened
//! latent with a sinusoidal timestep embedding, modulated at every hidden
//! layer by scale/shift vectors computed from the condition (FiLM).

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};
use crate::snapshot::{take_block, Block};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    /// Flattened latent length.
    pub latent_len: usize,
    /// Sinusoidal timestep embedding width (even).
    pub t_embed_dim: usize,
    /// Condition vector width.
    pub cond_dim: usize,
    /// Hidden width.
    pub hidden: usize,
    /// Number of residual hidden layers.
    pub layers: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_len == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::config("denoiser dims must be positive"));
        }
        if self.t_embed_dim < 2 || self.t_embed_dim % 2 != 0 {
            return Err(Error::config("t_embed_dim must be even and >= 2"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.latent_len + self.t_embed_dim + self.cond_dim
    }
}

/// Sinusoidal embedding of a (1-based) step index.
pub fn timestep_embedding(n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let half = dim / 2;
    for j in 0..half {
        let freq = 1.0 / 10000f64.powf(j as f64 / half as f64);
        let angle = n as f64 * freq;
        out[2 * j] = angle.sin();
        out[2 * j + 1] = angle.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
struct FilmLayer {
    w: DenseMatrix,       // hidden x hidden
    b: Vec<f64>,          // hidden
    scale_w: DenseMatrix, // cond x hidden
    scale_b: Vec<f64>,    // hidden
    shift_w: DenseMatrix, // cond x hidden
    shift_b: Vec<f64>,    // hidden
}

impl FilmLayer {
    fn init(hidden: usize, cond: usize, rng: &mut Rng) -> Self {
        FilmLayer {
            w: DenseMatrix::random_normal(hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            b: vec![0.0; hidden],
            // FiLM starts neutral: scale (1 + 0) and shift 0.
            scale_w: DenseMatrix::zeros(cond, hidden),
            scale_b: vec![0.0; hidden],
            shift_w: DenseMatrix::zeros(cond, hidden),
            shift_b: vec![0.0; hidden],
        }
    }

    fn zeros(hidden: usize, cond: usize) -> Self {
        FilmLayer {
            w: DenseMatrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
            scale_w: DenseMatrix::zeros(cond, hidden),
            scale_b: vec![0.0; hidden],
            shift_w: DenseMatrix::zeros(cond, hidden),
            shift_b: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub cfg: DenoiserConfig,
    w_in: DenseMatrix, // input_dim x hidden
    b_in: Vec<f64>,
    film: Vec<FilmLayer>,
    w_out: DenseMatrix, // hidden x latent_len
    b_out: Vec<f64>,
}

/// Forward-pass intermediates needed by backward.
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    x: Vec<f64>,
    layers: Vec<LayerCache>,
    h_final: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    h_in: Vec<f64>,
    a: Vec<f64>,
    gamma: Vec<f64>,
    f: Vec<f64>,
}

impl DenoiserParams {
    pub fn init(cfg: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let in_dim = cfg.input_dim();
        Ok(DenoiserParams {
            cfg,
            w_in: DenseMatrix::random_normal(in_dim, cfg.hidden, 1.0 / (in_dim as f64).sqrt(), rng),
            b_in: vec![0.0; cfg.hidden],
            film: (0..cfg.layers)
                .map(|_| FilmLayer::init(cfg.hidden, cfg.cond_dim, rng))
                .collect(),
            // Small output init: the untrained net predicts near-zero noise.
            w_out: DenseMatrix::random_normal(
                cfg.hidden,
                cfg.latent_len,
                0.1 / (cfg.hidden as f64).sqrt(),
                rng,
            ),
            b_out: vec![0.0; cfg.latent_len],
        })
    }

    /// All-zero parameters (for the expectation sanity checks).
    pub fn zeros(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DenoiserParams {
            cfg,
            w_in: DenseMatrix::zeros(cfg.input_dim(), cfg.hidden),
            b_in: vec![0.0; cfg.hidden],
            film: (0..cfg.layers)
                .map(|_| FilmLayer::zeros(cfg.hidden, cfg.cond_dim))
                .collect(),
            w_out: DenseMatrix::zeros(cfg.hidden, cfg.latent_len),
            b_out: vec![0.0; cfg.latent_len],
        })
    }

    pub fn zeros_like(&self) -> DenoiserParams {
        DenoiserParams::zeros(self.cfg).expect("config already validated")
    }

    /// Predict the noise component of `z_n` at step `n` under `cond`.
    pub fn forward(&self, z_n: &[f64], n: usize, cond: &[f64]) -> Result<(Vec<f64>, DenoiserCache)> {
        if z_n.len() != self.cfg.latent_len {
            return Err(Error::shape(format!(
                "latent len {} vs config {}",
                z_n.len(),
                self.cfg.latent_len
            )));
        }
        if cond.len() != self.cfg.cond_dim {
            return Err(Error::shape(format!(
                "condition dim {} vs config {}",
                cond.len(),
                self.cfg.cond_dim
            )));
        }
        let h_n = self.cfg.hidden;
        let mut x = Vec::with_capacity(self.cfg.input_dim());
        x.extend_from_slice(z_n);
        x.extend_from_slice(&timestep_embedding(n, self.cfg.t_embed_dim));
        x.extend_from_slice(cond);

        let mut h = self.b_in.clone();
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = self.w_in.row(i);
            for (hv, &w) in h.iter_mut().zip(wrow.iter()) {
                *hv += xv * w;
            }
        }
        let mut layer_caches = Vec::with_capacity(self.film.len());
        for layer in &self.film {
            let h_in = h.clone();
            let mut a = layer.b.clone();
            for (i, &hv) in h_in.iter().enumerate() {
                let wrow = layer.w.row(i);
                for (av, &w) in a.iter_mut().zip(wrow.iter()) {
                    *av += hv * w;
                }
            }
            let mut gamma = layer.scale_b.clone();
            let mut shift = layer.shift_b.clone();
            for (i, &cv) in cond.iter().enumerate() {
                if cv == 0.0 {
                    continue;
                }
                let srow = layer.scale_w.row(i);
                let trow = layer.shift_w.row(i);
                for j in 0..h_n {
                    gamma[j] += cv * srow[j];
                    shift[j] += cv * trow[j];
                }
            }
            let mut f = vec![0.0; h_n];
            for j in 0..h_n {
                f[j] = (a[j] * (1.0 + gamma[j]) + shift[j]).tanh();
                h[j] += f[j];
            }
            layer_caches.push(LayerCache { h_in, a, gamma, f });
        }

        let mut out = self.b_out.clone();
        for (i, &hv) in h.iter().enumerate() {
            let wrow = self.w_out.row(i);
            for (ov, &w) in out.iter_mut().zip(wrow.iter()) {
                *ov += hv * w;
            }
        }
        Ok((
            out,
            DenoiserCache {
                x,
                layers: layer_caches,
                h_final: h,
            },
        ))
    }

    /// Backward from a gradient on the predicted noise. Parameter gradients
    /// accumulate into `grads`; the condition is an input of the frozen
    /// upstream modules, so its gradient is not needed.
    pub fn backward(&self, cache: &DenoiserCache, d_eps: &[f64], grads: &mut DenoiserParams) {
        let h_n = self.cfg.hidden;
        let cond_off = self.cfg.latent_len + self.cfg.t_embed_dim;
        let cond = &cache.x[cond_off..];

        // Output layer.
        let mut dh = vec![0.0; h_n];
        for i in 0..h_n {
            let wrow = self.w_out.row(i);
            let grow = grads.w_out.row_mut(i);
            let hv = cache.h_final[i];
            let mut acc = 0.0;
            for (j, &d) in d_eps.iter().enumerate() {
                grow[j] += hv * d;
                acc += d * wrow[j];
            }
            dh[i] = acc;
        }
        for (g, &d) in grads.b_out.iter_mut().zip(d_eps.iter()) {
            *g += d;
        }

        // Residual FiLM layers, in reverse.
        for (layer, (lc, g)) in self
            .film
            .iter()
            .zip(cache.layers.iter().zip(grads.film.iter_mut()))
            .rev()
        {
            let mut da = vec![0.0; h_n];
            for j in 0..h_n {
                let df = dh[j];
                let dpre = df * (1.0 - lc.f[j] * lc.f[j]);
                da[j] = dpre * (1.0 + lc.gamma[j]);
                let dgamma = dpre * lc.a[j];
                let dshift = dpre;
                g.scale_b[j] += dgamma;
                g.shift_b[j] += dshift;
                for (i, &cv) in cond.iter().enumerate() {
                    if cv == 0.0 {
                        continue;
                    }
                    let sv = g.scale_w.get(i, j) + cv * dgamma;
                    g.scale_w.set(i, j, sv);
                    let tv = g.shift_w.get(i, j) + cv * dshift;
                    g.shift_w.set(i, j, tv);
                }
            }
            for j in 0..h_n {
                g.b[j] += da[j];
            }
            // dh_in = dh (residual) + W da
            let mut dh_next = dh.clone();
            for i in 0..h_n {
                let wrow = layer.w.row(i);
                let grow = g.w.row_mut(i);
                let hv = lc.h_in[i];
                let mut acc = 0.0;
                for j in 0..h_n {
                    grow[j] += hv * da[j];
                    acc += da[j] * wrow[j];
                }
                dh_next[i] += acc;
            }
            dh = dh_next;
        }

        // Input projection.
        for (i, &xv) in cache.x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let grow = grads.w_in.row_mut(i);
            for (gv, &d) in grow.iter_mut().zip(dh.iter()) {
                *gv += xv * d;
            }
        }
        for (g, &d) in grads.b_in.iter_mut().zip(dh.iter()) {
            *g += d;
        }
    }

    pub fn param_count(&self) -> usize {
        let c = &self.cfg;
        let per_layer = c.hidden * c.hidden + c.hidden + 2 * (c.cond_dim * c.hidden + c.hidden);
        c.input_dim() * c.hidden
            + c.hidden
            + c.layers * per_layer
            + c.hidden * c.latent_len
            + c.latent_len
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.w_in.data());
        out.extend_from_slice(&self.b_in);
        for l in &self.film {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
            out.extend_from_slice(l.scale_w.data());
            out.extend_from_slice(&l.scale_b);
            out.extend_from_slice(l.shift_w.data());
            out.extend_from_slice(&l.shift_b);
        }
        out.extend_from_slice(self.w_out.data());
        out.extend_from_slice(&self.b_out);
        out
    }

    pub fn set_from_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat denoiser vector has {} entries, expected {}",
                data.len(),
                self.param_count()
            )));
        }
        let mut pos = 0usize;
        fn take<'a>(data: &'a [f64], pos: &mut usize, n: usize) -> &'a [f64] {
            let s = &data[*pos..*pos + n];
            *pos += n;
            s
        }
        let win = self.w_in.data().len();
        self.w_in.data_mut().copy_from_slice(take(data, &mut pos, win));
        let bin = self.b_in.len();
        self.b_in.copy_from_slice(take(data, &mut pos, bin));
        for l in self.film.iter_mut() {
            let wn = l.w.data().len();
            l.w.data_mut().copy_from_slice(take(data, &mut pos, wn));
            let bn = l.b.len();
            l.b.copy_from_slice(take(data, &mut pos, bn));
            let sn = l.scale_w.data().len();
            l.scale_w.data_mut().copy_from_slice(take(data, &mut pos, sn));
            let sbn = l.scale_b.len();
            l.scale_b.copy_from_slice(take(data, &mut pos, sbn));
            let tn = l.shift_w.data().len();
            l.shift_w.data_mut().copy_from_slice(take(data, &mut pos, tn));
            let tbn = l.shift_b.len();
            l.shift_b.copy_from_slice(take(data, &mut pos, tbn));
        }
        let won = self.w_out.data().len();
        self.w_out.data_mut().copy_from_slice(take(data, &mut pos, won));
        let bon = self.b_out.len();
        self.b_out.copy_from_slice(take(data, &mut pos, bon));
        debug_assert_eq!(pos, data.len());
        Ok(())
    }

    pub fn to_blocks(&self) -> Vec<Block> {
        vec![
            Block::new(
                "denoiser.dims",
                vec![5],
                vec![
                    self.cfg.latent_len as f64,
                    self.cfg.t_embed_dim as f64,
                    self.cfg.cond_dim as f64,
                    self.cfg.hidden as f64,
                    self.cfg.layers as f64,
                ],
            ),
            Block::new("denoiser.params", vec![self.param_count()], self.flatten()),
        ]
    }

    pub fn from_blocks(blocks: &[Block]) -> Result<Self> {
        let dims = take_block(blocks, "denoiser.dims", &[5])?;
        let cfg = DenoiserConfig {
            latent_len: dims[0] as usize,
            t_embed_dim: dims[1] as usize,
            cond_dim: dims[2] as usize,
            hidden: dims[3] as usize,
            layers: dims[4] as usize,
        };
        let mut params = DenoiserParams::zeros(cfg)?;
        let flat = take_block(blocks, "denoiser.params", &[params.param_count()])?;
        params.set_from_flat(&flat)?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DenoiserConfig {
        DenoiserConfig {
            latent_len: 8,
            t_embed_dim: 8,
            cond_dim: 6,
            hidden: 16,
            layers: 3,
        }
    }

    #[test]
    fn output_shape_matches_latent() {
        let p = DenoiserParams::init(small_cfg(), &mut Rng::from_seed(1)).unwrap();
        let z = vec![0.3; 8];
        let cond = vec![0.1; 6];
        let (eps, _) = p.forward(&z, 5, &cond).unwrap();
        assert_eq!(eps.len(), 8);
        assert!(eps.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = DenoiserParams::zeros(small_cfg()).unwrap();
        let (eps, _) = p.forward(&vec![1.0; 8], 3, &vec![0.5; 6]).unwrap();
        assert!(eps.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatches_error() {
        let p = DenoiserParams::init(small_cfg(), &mut Rng::from_seed(2)).unwrap();
        assert!(p.forward(&vec![0.0; 7], 1, &vec![0.0; 6]).is_err());
        assert!(p.forward(&vec![0.0; 8], 1, &vec![0.0; 5]).is_err());
    }

    #[test]
    fn flatten_roundtrip_and_count() {
        let p = DenoiserParams::init(small_cfg(), &mut Rng::from_seed(3)).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.param_count());
        let mut q = DenoiserParams::zeros(small_cfg()).unwrap();
        q.set_from_flat(&flat).unwrap();
        assert_eq!(q, p);
        let restored = DenoiserParams::from_blocks(&p.to_blocks()).unwrap();
        assert_eq!(restored, p);
    }

    #[test]
    fn timestep_embedding_is_bounded_and_distinct() {
        let a = timestep_embedding(1, 16);
        let b = timestep_embedding(2, 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
