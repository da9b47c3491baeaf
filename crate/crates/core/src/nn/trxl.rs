use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{softmax_rows, softmax_rows_backward, xavier, Matrix};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Shape of the responder-set actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrxlConfig {
    /// Width of each responder's feature row.
    pub input_dim: usize,
    /// Number of depots, i.e. logits per responder.
    pub n_depots: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl TrxlConfig {
    /// Defaults for a region with `n_depots` depots: rows of width `2 n`,
    /// model width `2 n`, two heads, two layers.
    pub fn for_depots(n_depots: usize) -> Self {
        Self {
            input_dim: 2 * n_depots,
            n_depots,
            d_model: 2 * n_depots,
            heads: 2,
            layers: 2,
            mlp_hidden: 64,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_depots == 0 || self.d_model == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.heads == 0 || self.layers == 0 {
            return Err(Error::Config("transformer needs at least one head and one layer".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    fn layer_len(&self) -> usize {
        let d = self.d_model;
        let h = self.mlp_hidden;
        4 * d * d + d + 2 * d + d * h + h + h * d + d + 2 * d
    }

    fn n_params(&self) -> usize {
        self.input_dim * self.d_model + self.d_model + self.layers * self.layer_len() + self.d_model * self.n_depots + self.n_depots
    }
}

/// Offsets of one layer's parameter blocks inside the flat vector.
struct LayerOff {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    g1: usize,
    b1n: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    g2: usize,
    b2n: usize,
}

impl LayerOff {
    fn new(cfg: &TrxlConfig, l: usize) -> Self {
        let d = cfg.d_model;
        let h = cfg.mlp_hidden;
        let base = cfg.input_dim * d + d + l * cfg.layer_len();
        let wq = base;
        let wk = wq + d * d;
        let wv = wk + d * d;
        let wo = wv + d * d;
        let bo = wo + d * d;
        let g1 = bo + d;
        let b1n = g1 + d;
        let w1 = b1n + d;
        let b1 = w1 + d * h;
        let w2 = b1 + h;
        let b2 = w2 + h * d;
        let g2 = b2 + d;
        let b2n = g2 + d;
        Self { wq, wk, wv, wo, bo, g1, b1n, w1, b1, w2, b2, g2, b2n }
    }
}

/// Stack of attention layers over an unordered set of responders followed
/// by a per-responder softmax over depots. No positional information is
/// added, so permuting the input rows permutes the output rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trxl {
    config: TrxlConfig,
    params: Vec<f64>,
}

struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Vec<Matrix>,
    concat: Matrix,
    ln1: LayerNormCache,
    y1: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    mask: Option<Matrix>,
    ln2: LayerNormCache,
}

/// Intermediate values kept for [`Trxl::backward`].
pub struct TrxlCache {
    x: Matrix,
    layers: Vec<LayerCache>,
    last: Matrix,
    probs: Matrix,
}

impl TrxlCache {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }
}

fn affine(x: &Matrix, w: &[f64], b: &[f64]) -> Matrix {
    let mut z = x.matmul_slice(w, b.len());
    for r in 0..z.rows() {
        for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
            *v += bb;
        }
    }
    z
}

/// Accumulates `x^T dz` into `gw` and column sums of `dz` into `gb`, and
/// returns `dz w^T`.
fn affine_backward(x: &Matrix, dz: &Matrix, w: &[f64], gw: &mut [f64], gb: Option<&mut [f64]>) -> Matrix {
    let dw = x.t_matmul(dz);
    for (a, d) in gw.iter_mut().zip(dw.data()) {
        *a += d;
    }
    if let Some(gb) = gb {
        for r in 0..dz.rows() {
            for (a, d) in gb.iter_mut().zip(dz.row(r)) {
                *a += d;
            }
        }
    }
    dz.matmul_slice_t(w, x.cols())
}

fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> (Matrix, LayerNormCache) {
    let n = x.cols() as f64;
    let mut xhat = Matrix::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.rows());
    let mut y = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mu = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for j in 0..row.len() {
            xh[j] = (row[j] - mu) * is;
        }
        let yr = y.row_mut(r);
        for j in 0..row.len() {
            yr[j] = gamma[j] * xhat.get(r, j) + beta[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(cache: &LayerNormCache, dy: &Matrix, gamma: &[f64], gg: &mut [f64], gb: &mut [f64]) -> Matrix {
    let n = dy.cols() as f64;
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    for r in 0..dy.rows() {
        let d = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d.len() {
            gg[j] += d[j] * xh[j];
            gb[j] += d[j];
        }
        let dxh: Vec<f64> = d.iter().zip(gamma).map(|(a, g)| a * g).collect();
        let mean = dxh.iter().sum::<f64>() / n;
        let mean_x = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let out = dx.row_mut(r);
        for j in 0..d.len() {
            out[j] = cache.inv_std[r] * (dxh[j] - mean - xh[j] * mean_x);
        }
    }
    dx
}

impl Trxl {
    pub fn new(config: TrxlConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let h = config.mlp_hidden;
        let mut params = Vec::with_capacity(config.n_params());
        params.extend(xavier(config.input_dim, d, rng));
        params.extend(std::iter::repeat(0.0).take(d));
        for _ in 0..config.layers {
            for _ in 0..4 {
                params.extend(xavier(d, d, rng));
            }
            params.extend(std::iter::repeat(0.0).take(d));
            params.extend(std::iter::repeat(1.0).take(d));
            params.extend(std::iter::repeat(0.0).take(d));
            params.extend(xavier(d, h, rng));
            params.extend(std::iter::repeat(0.0).take(h));
            params.extend(xavier(h, d, rng));
            params.extend(std::iter::repeat(0.0).take(d));
            params.extend(std::iter::repeat(1.0).take(d));
            params.extend(std::iter::repeat(0.0).take(d));
        }
        params.extend(xavier(d, config.n_depots, rng));
        params.extend(std::iter::repeat(0.0).take(config.n_depots));
        debug_assert_eq!(params.len(), config.n_params());
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TrxlConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn from_parts(config: TrxlConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.n_params() {
            return Err(Error::Input(format!(
                "expected {} transformer parameters, found {}",
                config.n_params(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    fn out_offsets(&self) -> (usize, usize) {
        let c = &self.config;
        let w = c.input_dim * c.d_model + c.d_model + c.layers * c.layer_len();
        (w, w + c.d_model * c.n_depots)
    }

    /// Per-responder depot likelihoods (one row per responder). Passing an
    /// rng enables dropout inside the position-wise MLPs.
    pub fn forward(&self, x: &Matrix, mut rng: Option<&mut dyn RngCore>) -> Result<(Matrix, TrxlCache)> {
        let c = &self.config;
        if x.rows() == 0 {
            return Err(Error::Input("transformer input has no responders".into()));
        }
        if x.cols() != c.input_dim {
            return Err(Error::Input(format!("transformer rows have width {}, expected {}", x.cols(), c.input_dim)));
        }
        let d = c.d_model;
        let hd = c.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let p = &self.params;
        let w_in = c.input_dim * d;
        let mut h = affine(x, &p[..w_in], &p[w_in..w_in + d]);
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let o = LayerOff::new(c, l);
            let q = h.matmul_slice(&p[o.wq..o.wk], d);
            let k = h.matmul_slice(&p[o.wk..o.wv], d);
            let v = h.matmul_slice(&p[o.wv..o.wo], d);
            let mut concat = Matrix::zeros(h.rows(), d);
            let mut attn = Vec::with_capacity(c.heads);
            for head in 0..c.heads {
                let qh = q.col_block(head * hd, hd);
                let kh = k.col_block(head * hd, hd);
                let vh = v.col_block(head * hd, hd);
                let s = qh.matmul_t(&kh).map(|z| z * scale);
                let a = softmax_rows(&s);
                concat.set_col_block(head * hd, &a.matmul(&vh));
                attn.push(a);
            }
            let mut r1 = affine(&concat, &p[o.wo..o.bo], &p[o.bo..o.g1]);
            r1.add_assign(&h);
            let (y1, ln1) = layer_norm(&r1, &p[o.g1..o.b1n], &p[o.b1n..o.w1]);
            let hidden_pre = affine(&y1, &p[o.w1..o.b1], &p[o.b1..o.w2]);
            let mut hidden = hidden_pre.map(|z| z.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(r) if c.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - c.dropout);
                    let m = Matrix::from_vec(
                        hidden.rows(),
                        hidden.cols(),
                        (0..hidden.rows() * hidden.cols())
                            .map(|_| if r.gen::<f64>() < c.dropout { 0.0 } else { keep })
                            .collect(),
                    );
                    for (a, b) in hidden.data_mut().iter_mut().zip(m.data()) {
                        *a *= b;
                    }
                    Some(m)
                }
                _ => None,
            };
            let mut r2 = affine(&hidden, &p[o.w2..o.b2], &p[o.b2..o.g2]);
            r2.add_assign(&y1);
            let (y2, ln2) = layer_norm(&r2, &p[o.g2..o.b2n], &p[o.b2n..o.b2n + d]);
            layers.push(LayerCache { input: h, q, k, v, attn, concat, ln1, y1, hidden_pre, hidden, mask, ln2 });
            h = y2;
        }
        let (wo, bo) = self.out_offsets();
        let logits = affine(&h, &p[wo..bo], &p[bo..bo + c.n_depots]);
        let probs = softmax_rows(&logits);
        Ok((probs.clone(), TrxlCache { x: x.clone(), layers, last: h, probs }))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x, None)?.0)
    }

    /// Gradients with respect to the input rows and all parameters given
    /// the gradient of the loss with respect to the likelihoods.
    pub fn backward(&self, cache: &TrxlCache, dprobs: &Matrix) -> (Matrix, Vec<f64>) {
        let c = &self.config;
        let d = c.d_model;
        let hd = c.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let p = &self.params;
        let mut g = vec![0.0; p.len()];

        let dlogits = softmax_rows_backward(&cache.probs, dprobs);
        let (wo, bo) = self.out_offsets();
        let end = bo + c.n_depots;
        let (gw, gb) = g[wo..end].split_at_mut(bo - wo);
        let mut dh = affine_backward(&cache.last, &dlogits, &p[wo..bo], gw, Some(gb));

        for l in (0..c.layers).rev() {
            let o = LayerOff::new(c, l);
            let lc = &cache.layers[l];
            let (gg2, gb2) = g[o.g2..o.b2n + d].split_at_mut(d);
            let dr2 = layer_norm_backward(&lc.ln2, &dh, &p[o.g2..o.b2n], gg2, gb2);
            // residual into y1 plus the MLP branch
            let mut dy1 = dr2.clone();
            let (gw2, gb2b) = g[o.w2..o.g2].split_at_mut(o.b2 - o.w2);
            let mut dhidden = affine_backward(&lc.hidden, &dr2, &p[o.w2..o.b2], gw2, Some(gb2b));
            if let Some(m) = &lc.mask {
                for (a, b) in dhidden.data_mut().iter_mut().zip(m.data()) {
                    *a *= b;
                }
            }
            for (a, z) in dhidden.data_mut().iter_mut().zip(lc.hidden_pre.data()) {
                if *z <= 0.0 {
                    *a = 0.0;
                }
            }
            let (gw1, gb1) = g[o.w1..o.w2].split_at_mut(o.b1 - o.w1);
            dy1.add_assign(&affine_backward(&lc.y1, &dhidden, &p[o.w1..o.b1], gw1, Some(gb1)));

            let (gg1, gb1n) = g[o.g1..o.w1].split_at_mut(d);
            let dr1 = layer_norm_backward(&lc.ln1, &dy1, &p[o.g1..o.b1n], gg1, gb1n);
            let mut dinput = dr1.clone();
            let (gwo, gbo) = g[o.wo..o.g1].split_at_mut(o.bo - o.wo);
            let dconcat = affine_backward(&lc.concat, &dr1, &p[o.wo..o.bo], gwo, Some(gbo));

            let n = lc.input.rows();
            let mut dq = Matrix::zeros(n, d);
            let mut dk = Matrix::zeros(n, d);
            let mut dv = Matrix::zeros(n, d);
            for head in 0..c.heads {
                let a = &lc.attn[head];
                let qh = lc.q.col_block(head * hd, hd);
                let kh = lc.k.col_block(head * hd, hd);
                let vh = lc.v.col_block(head * hd, hd);
                let dout = dconcat.col_block(head * hd, hd);
                let da = dout.matmul_t(&vh);
                dv.set_col_block(head * hd, &a.t_matmul(&dout));
                let ds = softmax_rows_backward(a, &da).map(|z| z * scale);
                dq.set_col_block(head * hd, &ds.matmul(&kh));
                dk.set_col_block(head * hd, &ds.t_matmul(&qh));
            }
            dinput.add_assign(&affine_backward(&lc.input, &dq, &p[o.wq..o.wk], &mut g[o.wq..o.wk], None));
            dinput.add_assign(&affine_backward(&lc.input, &dk, &p[o.wk..o.wv], &mut g[o.wk..o.wv], None));
            dinput.add_assign(&affine_backward(&lc.input, &dv, &p[o.wv..o.wo], &mut g[o.wv..o.wo], None));
            dh = dinput;
        }
        let w_in = c.input_dim * d;
        let (gw, gb) = g[..w_in + d].split_at_mut(w_in);
        let dx = affine_backward(&cache.x, &dh, &p[..w_in], gw, Some(gb));
        (dx, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_grad, relative_error};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn single_responder_gets_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Trxl::new(TrxlConfig::for_depots(3), &mut rng).unwrap();
        let p = net.predict(&random_input(1, 6, &mut rng)).unwrap();
        assert_eq!((p.rows(), p.cols()), (1, 3));
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rejects_empty_and_bad_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Trxl::new(TrxlConfig::for_depots(2), &mut rng).unwrap();
        assert!(matches!(net.predict(&Matrix::zeros(0, 4)), Err(Error::Input(_))));
        assert!(matches!(net.predict(&Matrix::zeros(2, 3)), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = TrxlConfig::for_depots(3);
        cfg.heads = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(Trxl::new(cfg, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Trxl::new(TrxlConfig::for_depots(5), &mut rng).unwrap();
        let p = net.predict(&random_input(7, 10, &mut rng).map(|v| v * 20.0)).unwrap();
        for r in 0..p.rows() {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let net = Trxl::new(TrxlConfig::for_depots(4), &mut rng).unwrap();
            let x = random_input(6, 8, &mut rng);
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rng);
            let a = net.predict(&x).unwrap().permute_rows(&perm);
            let b = net.predict(&x.permute_rows(&perm)).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = TrxlConfig::for_depots(3);
        cfg.dropout = 0.3;
        let net = Trxl::new(cfg, &mut rng).unwrap();
        let x = random_input(4, 6, &mut rng);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let depots = rng.gen_range(1..4);
            let mut cfg = TrxlConfig::for_depots(depots);
            cfg.heads = [1, 2][rng.gen_range(0..2)];
            cfg.layers = rng.gen_range(1..3);
            cfg.mlp_hidden = rng.gen_range(3..8);
            let net = Trxl::new(cfg.clone(), &mut rng).unwrap();
            let rows = rng.gen_range(1..5);
            let x = random_input(rows, cfg.input_dim, &mut rng);
            let w = random_input(rows, depots, &mut rng);
            let (_, cache) = net.forward(&x, None).unwrap();
            let (dx, g) = net.backward(&cache, &w);
            let loss = |n: &Trxl, x: &Matrix| -> f64 {
                n.predict(x).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            };
            let num = numeric_grad(net.params(), 1e-4, |p| {
                let mut n = net.clone();
                n.params_mut().copy_from_slice(p);
                loss(&n, &x)
            });
            assert!(relative_error(&g, &num) < 1e-4, "param grad error {}", relative_error(&g, &num));
            let num_x = numeric_grad(x.data(), 1e-4, |d| loss(&net, &Matrix::from_vec(x.rows(), x.cols(), d.to_vec())));
            assert!(relative_error(dx.data(), &num_x) < 1e-4);
        }
    }
}
