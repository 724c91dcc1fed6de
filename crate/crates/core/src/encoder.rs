//! Small pre-norm transformer encoder with an explicit backward pass.
//!
//! Each block computes `x + Attn(LN(x))` followed by `x + FFN(LN(x))`. Keys at
//! padded positions are excluded from every attention softmax, so padding
//! never reaches a real position.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{affine, affine_backward, softmax_in_place, Matrix};
use crate::params::{prefixed, prefixed_mut, Parameters};
use crate::preprocess::{TokenSequence, DEFAULT_MAX_LEN};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: d = 32, 2 layers, 2 heads, FFN 64, X = 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            max_len: DEFAULT_MAX_LEN,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.layers == 0 {
            return fail("encoder needs at least one layer".into());
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            ));
        }
        if self.max_len < 2 || self.vocab_size < 4 || self.ffn_dim == 0 {
            return fail("max_len ≥ 2, vocab_size ≥ 4 and ffn_dim ≥ 1 are required".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Contextual token states (`max_len × d`) with the attention mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStates {
    pub states: Matrix,
    pub mask: Vec<u8>,
}

impl HiddenStates {
    pub fn new(states: Matrix, mask: Vec<u8>) -> Result<Self> {
        if states.rows != mask.len() {
            return Err(Error::Shape(format!(
                "{} hidden rows but {} mask entries",
                states.rows,
                mask.len()
            )));
        }
        Ok(Self { states, mask })
    }

    pub fn hidden_dim(&self) -> usize {
        self.states.cols
    }

    pub fn len(&self) -> usize {
        self.states.rows
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows == 0
    }

    /// The `[CLS]` vector (row 0).
    pub fn cls(&self) -> &[f64] {
        self.states.row(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (cfg.hidden_dim, cfg.ffn_dim);
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            wq: uniform(rng, d * d, d),
            bq: uniform(rng, d, d),
            wk: uniform(rng, d * d, d),
            bk: uniform(rng, d, d),
            wv: uniform(rng, d * d, d),
            bv: uniform(rng, d, d),
            wo: uniform(rng, d * d, d),
            bo: uniform(rng, d, d),
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w1: uniform(rng, d * f, d),
            b1: uniform(rng, f, d),
            w2: uniform(rng, f * d, f),
            b2: uniform(rng, d, f),
        }
    }
}

impl Parameters for LayerParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("ln1_gain".into(), &self.ln1_gain[..]),
            ("ln1_bias".into(), &self.ln1_bias[..]),
            ("wq".into(), &self.wq[..]),
            ("bq".into(), &self.bq[..]),
            ("wk".into(), &self.wk[..]),
            ("bk".into(), &self.bk[..]),
            ("wv".into(), &self.wv[..]),
            ("bv".into(), &self.bv[..]),
            ("wo".into(), &self.wo[..]),
            ("bo".into(), &self.bo[..]),
            ("ln2_gain".into(), &self.ln2_gain[..]),
            ("ln2_bias".into(), &self.ln2_bias[..]),
            ("w1".into(), &self.w1[..]),
            ("b1".into(), &self.b1[..]),
            ("w2".into(), &self.w2[..]),
            ("b2".into(), &self.b2[..]),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("ln1_gain".into(), &mut self.ln1_gain[..]),
            ("ln1_bias".into(), &mut self.ln1_bias[..]),
            ("wq".into(), &mut self.wq[..]),
            ("bq".into(), &mut self.bq[..]),
            ("wk".into(), &mut self.wk[..]),
            ("bk".into(), &mut self.bk[..]),
            ("wv".into(), &mut self.wv[..]),
            ("bv".into(), &mut self.bv[..]),
            ("wo".into(), &mut self.wo[..]),
            ("bo".into(), &mut self.bo[..]),
            ("ln2_gain".into(), &mut self.ln2_gain[..]),
            ("ln2_bias".into(), &mut self.ln2_bias[..]),
            ("w1".into(), &mut self.w1[..]),
            ("b1".into(), &mut self.b1[..]),
            ("w2".into(), &mut self.w2[..]),
            ("b2".into(), &mut self.b2[..]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: Vec<f64>,
    pub position_embedding: Vec<f64>,
    pub layers: Vec<LayerParams>,
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding[..]),
            (
                "position_embedding".to_string(),
                &self.position_embedding[..],
            ),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("layers.{i}"), l.tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding[..]),
            (
                "position_embedding".to_string(),
                &mut self.position_embedding[..],
            ),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("layers.{i}"), l.tensors_mut()));
        }
        out
    }
}

struct LayerNormCache {
    normalized: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LayerNormCache) {
    let (n, d) = (x.rows, x.cols);
    let mut normalized = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            normalized.set(i, j, xh);
            out.set(i, j, xh * gain[j] + bias[j]);
        }
    }
    (out, LayerNormCache { normalized, rstd })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dout: &Matrix,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Matrix {
    let (n, d) = (dout.rows, dout.cols);
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dy = dout.row(i);
        let xh = cache.normalized.row(i);
        let (mut sum, mut sum_xh) = (0.0, 0.0);
        for j in 0..d {
            dgain[j] += dy[j] * xh[j];
            dbias[j] += dy[j];
            dxhat[j] = dy[j] * gain[j];
            sum += dxhat[j];
            sum_xh += dxhat[j] * xh[j];
        }
        let r = cache.rstd[i];
        let nf = d as f64;
        let row = dx.row_mut(i);
        for j in 0..d {
            row[j] = r / nf * (nf * dxhat[j] - sum - xh[j] * sum_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

struct LayerCache {
    input_ln: LayerNormCache,
    attn_in: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, `X×X` attention probabilities.
    probs: Vec<Matrix>,
    context: Matrix,
    attn_drop: Option<Vec<f64>>,
    ffn_ln: LayerNormCache,
    ffn_in: Matrix,
    pre_act: Matrix,
    activated: Matrix,
    ffn_drop: Option<Vec<f64>>,
}

/// Intermediate values kept by a training forward pass for [`Encoder::backward`].
pub struct EncoderCache {
    ids: Vec<usize>,
    embed_drop: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn apply_mask(m: &mut Matrix, mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        for (v, k) in m.data.iter_mut().zip(mask) {
            *v *= k;
        }
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let token_embedding = uniform(rng, config.vocab_size * d, d);
        let position_embedding = uniform(rng, config.max_len * d, d);
        let layers = (0..config.layers)
            .map(|_| LayerParams::init(&config, rng))
            .collect();
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            layers,
        })
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn encode(&self, tokens: &TokenSequence) -> Result<HiddenStates> {
        self.forward(tokens, None).map(|(h, _)| h)
    }

    /// Forward pass that keeps everything needed for [`Self::backward`].
    /// Dropout is applied only when an RNG is supplied and the rate is positive.
    pub fn forward(
        &self,
        tokens: &TokenSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(HiddenStates, EncoderCache)> {
        let cfg = &self.config;
        let (d, n) = (cfg.hidden_dim, tokens.ids.len());
        if n != cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence length {n} but encoder expects {}",
                cfg.max_len
            )));
        }
        if let Some(&id) = tokens.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: cfg.vocab_size,
            });
        }
        let mut rng = rng.filter(|_| cfg.dropout > 0.0);

        let mut x = Matrix::zeros(n, d);
        for (t, &id) in tokens.ids.iter().enumerate() {
            let tok = &self.token_embedding[id * d..(id + 1) * d];
            let pos = &self.position_embedding[t * d..(t + 1) * d];
            for ((o, a), b) in x.row_mut(t).iter_mut().zip(tok).zip(pos) {
                *o = a + b;
            }
        }
        let embed_drop = rng
            .as_deref_mut()
            .map(|r| dropout_mask(r, n * d, cfg.dropout));
        apply_mask(&mut x, &embed_drop);

        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = self.layer_forward(layer, x, &tokens.mask, rng.as_deref_mut());
            x = out;
            caches.push(cache);
        }
        Ok((
            HiddenStates::new(x, tokens.mask.clone())?,
            EncoderCache {
                ids: tokens.ids.clone(),
                embed_drop,
                layers: caches,
            },
        ))
    }

    fn layer_forward(
        &self,
        p: &LayerParams,
        x: Matrix,
        mask: &[u8],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Matrix, LayerCache) {
        let cfg = &self.config;
        let (n, d, heads, hd) = (x.rows, cfg.hidden_dim, cfg.heads, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        let (attn_in, input_ln) = layer_norm(&x, &p.ln1_gain, &p.ln1_bias);
        let q = affine(&attn_in, &p.wq, &p.bq, d);
        let k = affine(&attn_in, &p.wk, &p.bk, d);
        let v = affine(&attn_in, &p.wv, &p.bv, d);

        let mut context = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * hd;
            let mut pm = Matrix::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[off..off + hd];
                let row = pm.row_mut(i);
                for j in 0..n {
                    row[j] = if mask[j] == 0 {
                        f64::NEG_INFINITY
                    } else {
                        let kj = &k.row(j)[off..off + hd];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    };
                }
                softmax_in_place(row);
                let crow = &mut context.row_mut(i)[off..off + hd];
                for j in 0..n {
                    let pij = pm.get(i, j);
                    if pij == 0.0 {
                        continue;
                    }
                    for (c, vv) in crow.iter_mut().zip(&v.row(j)[off..off + hd]) {
                        *c += pij * vv;
                    }
                }
            }
            probs.push(pm);
        }

        let mut attn_out = affine(&context, &p.wo, &p.bo, d);
        let attn_drop = rng
            .as_deref_mut()
            .map(|r| dropout_mask(r, n * d, cfg.dropout));
        apply_mask(&mut attn_out, &attn_drop);
        let mut x1 = x;
        for (a, b) in x1.data.iter_mut().zip(&attn_out.data) {
            *a += b;
        }

        let (ffn_in, ffn_ln) = layer_norm(&x1, &p.ln2_gain, &p.ln2_bias);
        let pre_act = affine(&ffn_in, &p.w1, &p.b1, cfg.ffn_dim);
        let activated = Matrix::from_vec(
            n,
            cfg.ffn_dim,
            pre_act.data.iter().map(|&z| gelu(z)).collect(),
        );
        let mut ffn_out = affine(&activated, &p.w2, &p.b2, d);
        let ffn_drop = rng.map(|r| dropout_mask(r, n * d, cfg.dropout));
        apply_mask(&mut ffn_out, &ffn_drop);
        for (a, b) in x1.data.iter_mut().zip(&ffn_out.data) {
            *a += b;
        }

        (
            x1,
            LayerCache {
                input_ln,
                attn_in,
                q,
                k,
                v,
                probs,
                context,
                attn_drop,
                ffn_ln,
                ffn_in,
                pre_act,
                activated,
                ffn_drop,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` given `d(loss)/d(hidden states)`.
    pub fn backward(&self, cache: &EncoderCache, dhidden: &Matrix, grads: &mut Encoder) {
        let d = self.config.hidden_dim;
        let mut dx = dhidden.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            dx = self.layer_backward(layer, &cache.layers[li], dx, &mut grads.layers[li]);
        }
        apply_mask(&mut dx, &cache.embed_drop);
        for (t, &id) in cache.ids.iter().enumerate() {
            let row = dx.row(t);
            for j in 0..d {
                grads.token_embedding[id * d + j] += row[j];
                grads.position_embedding[t * d + j] += row[j];
            }
        }
    }

    fn layer_backward(
        &self,
        p: &LayerParams,
        c: &LayerCache,
        dout: Matrix,
        g: &mut LayerParams,
    ) -> Matrix {
        let cfg = &self.config;
        let (n, d, hd) = (dout.rows, cfg.hidden_dim, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        // Feed-forward branch.
        let mut dffn = dout.clone();
        apply_mask(&mut dffn, &c.ffn_drop);
        let mut dact = affine_backward(&c.activated, &p.w2, &dffn, &mut g.w2, &mut g.b2);
        for (da, &z) in dact.data.iter_mut().zip(&c.pre_act.data) {
            *da *= gelu_grad(z);
        }
        let dffn_in = affine_backward(&c.ffn_in, &p.w1, &dact, &mut g.w1, &mut g.b1);
        let dln2 = layer_norm_backward(
            &c.ffn_ln,
            &p.ln2_gain,
            &dffn_in,
            &mut g.ln2_gain,
            &mut g.ln2_bias,
        );
        let mut dx1 = dout;
        for (a, b) in dx1.data.iter_mut().zip(&dln2.data) {
            *a += b;
        }

        // Attention branch.
        let mut dattn = dx1.clone();
        apply_mask(&mut dattn, &c.attn_drop);
        let dcontext = affine_backward(&c.context, &p.wo, &dattn, &mut g.wo, &mut g.bo);
        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);
        let mut dp = vec![0.0; n];
        for (h, pm) in c.probs.iter().enumerate() {
            let off = h * hd;
            for i in 0..n {
                let dci = &dcontext.row(i)[off..off + hd];
                let prow = pm.row(i);
                let mut weighted = 0.0;
                for j in 0..n {
                    if prow[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &c.v.row(j)[off..off + hd];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    weighted += dp[j] * prow[j];
                    for (o, &dc) in dv.row_mut(j)[off..off + hd].iter_mut().zip(dci) {
                        *o += prow[j] * dc;
                    }
                }
                for j in 0..n {
                    if prow[j] == 0.0 {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    let qi = &c.q.row(i)[off..off + hd];
                    let kj = &c.k.row(j)[off..off + hd];
                    for (o, kv) in dq.row_mut(i)[off..off + hd].iter_mut().zip(kj) {
                        *o += ds * kv;
                    }
                    for (o, qv) in dk.row_mut(j)[off..off + hd].iter_mut().zip(qi) {
                        *o += ds * qv;
                    }
                }
            }
        }
        let mut dattn_in = affine_backward(&c.attn_in, &p.wq, &dq, &mut g.wq, &mut g.bq);
        let dk_in = affine_backward(&c.attn_in, &p.wk, &dk, &mut g.wk, &mut g.bk);
        let dv_in = affine_backward(&c.attn_in, &p.wv, &dv, &mut g.wv, &mut g.bv);
        for ((a, b), e) in dattn_in.data.iter_mut().zip(&dk_in.data).zip(&dv_in.data) {
            *a += b + e;
        }
        let dln1 = layer_norm_backward(
            &c.input_ln,
            &p.ln1_gain,
            &dattn_in,
            &mut g.ln1_gain,
            &mut g.ln1_bias,
        );
        for (a, b) in dx1.data.iter_mut().zip(&dln1.data) {
            *a += b;
        }
        dx1
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    mask: Vec<u8>,
    h: Vec<Vec<f64>>,
}

/// Writes one JSON line per post: `{"id", "mask", "h"}`.
pub fn save_embeddings<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a HiddenStates)>,
) -> Result<()> {
    let mut out = String::new();
    for (id, h) in rows {
        let row = EmbeddingRow {
            id: id.to_string(),
            mask: h.mask.clone(),
            h: h.states.to_rows(),
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads precomputed hidden states keyed by post id, checking every row has
/// `max_len × hidden_dim` finite entries and a well-formed mask.
pub fn load_embeddings(
    path: &Path,
    max_len: usize,
    hidden_dim: usize,
) -> Result<BTreeMap<String, HiddenStates>> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if !seen.insert(row.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.into(),
                line: line_no,
                id: row.id,
            });
        }
        if row.h.len() != max_len || row.mask.len() != max_len {
            return Err(Error::Shape(format!(
                "{}:{line_no}: expected {max_len} rows, found {} rows and {} mask entries",
                path.display(),
                row.h.len(),
                row.mask.len()
            )));
        }
        if let Some(bad) = row.h.iter().find(|r| r.len() != hidden_dim) {
            return Err(Error::Shape(format!(
                "{}:{line_no}: expected hidden dim {hidden_dim}, found {}",
                path.display(),
                bad.len()
            )));
        }
        if row.mask.iter().any(|&m| m > 1) || row.mask.first() != Some(&1) {
            return Err(Error::malformed(
                path,
                line_no,
                "mask must be 0/1 with position 0 unmasked",
            ));
        }
        let states = Matrix::from_rows(&row.h);
        if !states.is_finite() {
            return Err(Error::malformed(path, line_no, "non-finite hidden state"));
        }
        out.insert(row.id, HiddenStates::new(states, row.mask)?);
    }
    Ok(out)
}
