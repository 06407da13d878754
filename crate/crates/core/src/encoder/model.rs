//! A small pre-norm transformer encoder with hand-written backpropagation.
//!
//! Token ids `0..V` are vocabulary entries; `V` is the padding id and `V+1`
//! the mask id. The output projection is tied to the first `V` rows of the
//! token embedding, so predictions are distributions over the vocabulary only.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ff_mult: usize,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            heads: 4,
            layers: 2,
            max_len: 128,
            ff_mult: 4,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "encoder dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.max_len == 0 || self.ff_mult == 0 {
            return Err(Error::config("encoder max_len and ff_mult must be >= 1"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("encoder init_std must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Layer {
    fn zeros(d: usize, f: usize) -> Self {
        Layer {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.ln1_g.as_slice_mut().unwrap(),
            self.ln1_b.as_slice_mut().unwrap(),
            self.wq.as_slice_mut().unwrap(),
            self.bq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.bk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.bv.as_slice_mut().unwrap(),
            self.wo.as_slice_mut().unwrap(),
            self.bo.as_slice_mut().unwrap(),
            self.ln2_g.as_slice_mut().unwrap(),
            self.ln2_b.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

/// Encoder weights. The same struct holds gradients during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    /// `(V + 2) × d`; the last two rows are padding and mask.
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<Layer>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub output_bias: Array1<f64>,
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// One contextual vector per input position (n × d).
    pub vectors: Array2<f64>,
    /// One distribution over the vocabulary per requested position.
    pub probs: Vec<Vec<f64>>,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    h_in: Array2<f64>,
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    c: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

struct ForwardCache {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| v * rr);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns dx and accumulates dg/db.
fn layer_norm_back(dy: &Array2<f64>, cache: &LnCache, g: &Array1<f64>, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_d = dxh.sum() / d;
        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        let r = cache.rstd[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = r * (dxh[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

fn softmax_in_place(row: &mut [f64]) {
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

impl EncoderParams {
    pub fn zeros_like(&self) -> EncoderParams {
        let d = self.config.dim;
        let f = d * self.config.ff_mult;
        EncoderParams {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            position_embedding: Array2::zeros(self.position_embedding.raw_dim()),
            layers: (0..self.layers.len()).map(|_| Layer::zeros(d, f)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            output_bias: Array1::zeros(self.vocab_size),
        }
    }

    /// Gaussian weights with `init_std`, unit layer-norm gains, zero biases.
    pub fn init(config: &EncoderConfig, vocab_size: usize) -> Result<EncoderParams> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::config(format!("encoder needs a vocabulary of at least 2, got {vocab_size}")));
        }
        let d = config.dim;
        let f = d * config.ff_mult;
        let mut rng = util::seeded(config.seed);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::config(e.to_string()))?;
        let mut gauss = |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| normal.sample(&mut rng));
        let token_embedding = gauss((vocab_size + 2, d));
        let position_embedding = gauss((config.max_len, d));
        let layers = (0..config.layers)
            .map(|_| {
                let mut l = Layer::zeros(d, f);
                l.ln1_g.fill(1.0);
                l.ln2_g.fill(1.0);
                l.wq = gauss((d, d));
                l.wk = gauss((d, d));
                l.wv = gauss((d, d));
                l.wo = gauss((d, d));
                l.w1 = gauss((d, f));
                l.w2 = gauss((f, d));
                l
            })
            .collect();
        Ok(EncoderParams {
            config: config.clone(),
            vocab_size,
            token_embedding,
            position_embedding,
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            output_bias: Array1::zeros(vocab_size),
        })
    }

    pub fn pad_id(&self) -> usize {
        self.vocab_size
    }

    pub fn mask_id(&self) -> usize {
        self.vocab_size + 1
    }

    /// Every parameter tensor as a flat mutable slice, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.token_embedding.as_slice_mut().unwrap(),
            self.position_embedding.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.extend(l.slices_mut());
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out.push(self.output_bias.as_slice_mut().unwrap());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.clone().slices_mut().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.clone().slices_mut().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, ids: &[usize]) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::config(format!(
                "sequence of length {} exceeds encoder max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t > self.mask_id()) {
            return Err(Error::config(format!("token id {bad} outside encoder vocabulary")));
        }
        Ok(())
    }

    fn forward(&self, ids: &[usize]) -> ForwardCache {
        let n = ids.len();
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut h = Array2::zeros((n, d));
        for (i, &t) in ids.iter().enumerate() {
            let mut row = h.row_mut(i);
            row += &self.token_embedding.row(t);
            row += &self.position_embedding.row(i);
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, ln1) = layer_norm(&h, &layer.ln1_g, &layer.ln1_b);
            let q = a.dot(&layer.wq) + &layer.bq;
            let k = a.dot(&layer.wk) + &layer.bk;
            let v = a.dot(&layer.wv) + &layer.bv;
            let mut o = Array2::zeros((n, d));
            let mut attn = Vec::with_capacity(heads);
            for hd in 0..heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                for mut row in scores.axis_iter_mut(Axis(0)) {
                    softmax_in_place(row.as_slice_mut().unwrap());
                }
                o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                attn.push(scores);
            }
            let h1 = &h + &(o.dot(&layer.wo) + &layer.bo);
            let (c, ln2) = layer_norm(&h1, &layer.ln2_g, &layer.ln2_b);
            let u = c.dot(&layer.w1) + &layer.b1;
            let g = u.mapv(gelu);
            let h2 = &h1 + &(g.dot(&layer.w2) + &layer.b2);
            caches.push(LayerCache { h_in: h, ln1, a, q, k, v, attn, o, ln2, c, u, g });
            h = h2;
        }
        let (z, lnf) = layer_norm(&h, &self.lnf_g, &self.lnf_b);
        ForwardCache {
            ids: ids.to_vec(),
            layers: caches,
            lnf,
            z,
        }
    }

    fn predict_row(&self, z: ArrayView1<f64>) -> Vec<f64> {
        let vocab = self.token_embedding.slice(s![..self.vocab_size, ..]);
        let mut logits = (vocab.dot(&z) + &self.output_bias).to_vec();
        softmax_in_place(&mut logits);
        logits
    }

    /// Contextual vectors for every position and predicted distributions at
    /// `predict_at`.
    pub fn encode(&self, ids: &[usize], predict_at: &[usize]) -> Result<Encoded> {
        self.check_input(ids)?;
        if let Some(&p) = predict_at.iter().find(|&&p| p >= ids.len()) {
            return Err(Error::config(format!("prediction position {p} outside sequence of length {}", ids.len())));
        }
        let cache = self.forward(ids);
        let probs = predict_at.iter().map(|&p| self.predict_row(cache.z.row(p))).collect();
        Ok(Encoded { vectors: cache.z, probs })
    }

    /// Summed masked-token cross-entropy for one sequence. When `grads` is
    /// given, adds `grad_scale` × the loss gradient into it.
    pub fn loss_and_backward(
        &self,
        ids: &[usize],
        positions: &[usize],
        labels: &[usize],
        grads: Option<(&mut EncoderParams, f64)>,
    ) -> Result<SequenceLoss> {
        self.check_input(ids)?;
        if positions.len() != labels.len() {
            return Err(Error::config("positions and labels differ in length"));
        }
        let cache = self.forward(ids);
        let mut loss = SequenceLoss::default();
        let mut probs = Vec::with_capacity(positions.len());
        for (&p, &y) in positions.iter().zip(labels) {
            if y >= self.vocab_size {
                return Err(Error::config(format!("label {y} outside vocabulary")));
            }
            let row = self.predict_row(cache.z.row(p));
            let py = row[y];
            if py < super::PROB_FLOOR {
                loss.clamped += 1;
            }
            loss.loss -= py.max(super::PROB_FLOOR).ln();
            probs.push(row);
        }
        if let Some((g, scale)) = grads {
            self.backward(&cache, positions, labels, probs, g, scale);
        }
        Ok(loss)
    }

    fn backward(
        &self,
        cache: &ForwardCache,
        positions: &[usize],
        labels: &[usize],
        probs: Vec<Vec<f64>>,
        g: &mut EncoderParams,
        scale: f64,
    ) {
        let n = cache.ids.len();
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let att_scale = 1.0 / (dh as f64).sqrt();
        let v_n = self.vocab_size;

        // Output layer: logits = z_p · E[..V]ᵀ + b
        let mut dz = Array2::zeros((n, d));
        for ((&p, &y), mut dl) in positions.iter().zip(labels).zip(probs) {
            dl[y] -= 1.0;
            dl.iter_mut().for_each(|x| *x *= scale);
            let zp = cache.z.row(p);
            for (t, &dlt) in dl.iter().enumerate() {
                if dlt == 0.0 {
                    continue;
                }
                g.output_bias[t] += dlt;
                g.token_embedding.row_mut(t).scaled_add(dlt, &zp);
                dz.row_mut(p).scaled_add(dlt, &self.token_embedding.row(t));
            }
        }
        debug_assert!(g.token_embedding.nrows() == v_n + 2);

        let mut dh_cur = layer_norm_back(&dz, &cache.lnf, &self.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

        for (li, layer) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[li];
            let gl = &mut g.layers[li];
            // feed-forward: h2 = h1 + gelu(c W1 + b1) W2 + b2
            let df = &dh_cur;
            gl.w2 += &c.g.t().dot(df);
            gl.b2 += &df.sum_axis(Axis(0));
            let dg = df.dot(&layer.w2.t());
            let du = &dg * &c.u.mapv(gelu_grad);
            gl.w1 += &c.c.t().dot(&du);
            gl.b1 += &du.sum_axis(Axis(0));
            let dc = du.dot(&layer.w1.t());
            let dh1 = &dh_cur + &layer_norm_back(&dc, &c.ln2, &layer.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);

            // attention: h1 = h + O Wo + bo
            gl.wo += &c.o.t().dot(&dh1);
            gl.bo += &dh1.sum_axis(Axis(0));
            let d_o = dh1.dot(&layer.wo.t());
            let mut dq = Array2::zeros((n, d));
            let mut dk = Array2::zeros((n, d));
            let mut dv = Array2::zeros((n, d));
            for hd in 0..heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let a = &c.attn[hd];
                let doh = d_o.slice(cols);
                let da = doh.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&doh));
                let mut ds = Array2::zeros((n, n));
                for i in 0..n {
                    let dot: f64 = a.row(i).iter().zip(da.row(i)).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * att_scale;
                    }
                }
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            gl.wq += &c.a.t().dot(&dq);
            gl.bq += &dq.sum_axis(Axis(0));
            gl.wk += &c.a.t().dot(&dk);
            gl.bk += &dk.sum_axis(Axis(0));
            gl.wv += &c.a.t().dot(&dv);
            gl.bv += &dv.sum_axis(Axis(0));
            let da_in = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
            dh_cur = &dh1 + &layer_norm_back(&da_in, &c.ln1, &layer.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
            let _ = &c.h_in;
        }

        for (i, &t) in cache.ids.iter().enumerate() {
            g.token_embedding.row_mut(t).scaled_add(1.0, &dh_cur.row(i));
            g.position_embedding.row_mut(i).scaled_add(1.0, &dh_cur.row(i));
        }
    }

    /// `self -= lr * grads`.
    pub fn sgd_step(&mut self, grads: &EncoderParams, lr: f64) {
        let mut g = grads.clone();
        for (p, gs) in self.slices_mut().into_iter().zip(g.slices_mut()) {
            for (x, dx) in p.iter_mut().zip(gs.iter()) {
                *x -= lr * dx;
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters serialize")
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<EncoderParams> {
        let p: EncoderParams =
            serde_json::from_str(text).map_err(|e| Error::parse(source_name, e.line(), e.to_string()))?;
        p.config.validate()?;
        let d = p.config.dim;
        let f = d * p.config.ff_mult;
        let template = EncoderParams::init(&EncoderConfig { seed: 0, ..p.config.clone() }, p.vocab_size)?;
        let shapes_ok = p.token_embedding.dim() == template.token_embedding.dim()
            && p.position_embedding.dim() == template.position_embedding.dim()
            && p.layers.len() == p.config.layers
            && p.layers.iter().all(|l| l.w1.dim() == (d, f) && l.wq.dim() == (d, d))
            && p.output_bias.len() == p.vocab_size;
        if !shapes_ok {
            return Err(Error::parse(source_name, 1, "parameter shapes do not match the stored configuration"));
        }
        if !p.all_finite() {
            return Err(Error::parse(source_name, 1, "non-finite parameter"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SequenceLoss {
    pub loss: f64,
    /// Label probabilities that fell below the clamp floor.
    pub clamped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderParams {
        let cfg = EncoderConfig { dim: 8, heads: 2, layers: 2, max_len: 16, ff_mult: 2, init_std: 0.3, seed: 3 };
        EncoderParams::init(&cfg, 20).unwrap()
    }

    #[test]
    fn shapes_and_normalization() {
        let p = small();
        let e = p.encode(&[1, 2, 3, 21, 5], &[3, 0]).unwrap();
        assert_eq!(e.vectors.dim(), (5, 8));
        assert_eq!(e.probs.len(), 2);
        for row in &e.probs {
            assert_eq!(row.len(), 20);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        let again = p.encode(&[1, 2, 3, 21, 5], &[3, 0]).unwrap();
        assert_eq!(e.vectors, again.vectors);
    }

    #[test]
    fn too_long_sequence_names_max_len() {
        let p = small();
        let err = p.encode(&[0; 17], &[]).unwrap_err();
        assert!(err.to_string().contains("16"), "{err}");
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let p = small();
        let ids = [1, 21, 3, 4];
        let mut g = p.zeros_like();
        let before = p.loss_and_backward(&ids, &[1], &[2], Some((&mut g, 1.0))).unwrap().loss;
        let mut q = p.clone();
        q.sgd_step(&g, 1e-3);
        let after = q.loss_and_backward(&ids, &[1], &[2], None).unwrap().loss;
        assert!(after < before);
    }

    #[test]
    fn json_roundtrip() {
        let p = small();
        let back = EncoderParams::from_json(&p.to_json(), "p.json").unwrap();
        assert_eq!(back, p);
        assert!(EncoderParams::from_json("{}", "p.json").is_err());
    }
}
