//! A small pre-LayerNorm transformer with hand-written backpropagation,
//! generic over the scalar type. One architecture serves three roles: the
//! response-to-persona language model, the recombiner (causal language
//! models) and the mask classifier (bidirectional encoder with a per-token
//! sigmoid head).

mod checkpoint;
mod loss;
mod ops;
mod optim;
mod train;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GmeError, Result};
use crate::scalar::Scalar;

pub use checkpoint::{load_tensors, save_tensors, Manifest};
pub use loss::{sigmoid, smoothed_cross_entropy, weighted_binary_cross_entropy, TagTarget, TokenTarget};
pub use optim::{clip_grad_norm, Adam, AdamState};
pub use train::{train, EpochOrder, TrainConfig, TrainReport, TrainerState};

use ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_rows, LnCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Next-token logits over the vocabulary.
    LanguageModel,
    /// One logit per position.
    Tagger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Context limit in tokens.
    pub max_len: usize,
    pub n_types: usize,
    pub causal: bool,
    pub head: HeadKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(GmeError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.n_types == 0 || self.d_ff == 0 {
            return Err(GmeError::Config("model dimensions must be positive".into()));
        }
        if self.head == HeadKind::LanguageModel && !self.causal {
            return Err(GmeError::Config("language-model head requires causal attention".into()));
        }
        Ok(())
    }

    fn out_dim(&self) -> usize {
        match self.head {
            HeadKind::LanguageModel => self.vocab_size,
            HeadKind::Tagger => 1,
        }
    }
}

/// Size hyperparameters shared by every model role; the role fixes the
/// vocabulary, type table, attention direction and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelDims {
    pub fn config(&self, vocab_size: usize, n_types: usize, causal: bool, head: HeadKind) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            n_types,
            causal,
            head,
        }
    }
}

#[derive(Clone, Debug)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    tok: usize,
    pos: usize,
    typ: usize,
    layers: Vec<LayerIdx>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
    shapes: Vec<(usize, usize)>,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut shapes = Vec::new();
        let mut add = |r: usize, k: usize| {
            shapes.push((r, k));
            shapes.len() - 1
        };
        let d = c.d_model;
        let tok = add(c.vocab_size, d);
        let pos = add(c.max_len, d);
        let typ = add(c.n_types, d);
        let layers = (0..c.n_layers)
            .map(|_| LayerIdx {
                ln1_g: add(1, d),
                ln1_b: add(1, d),
                wq: add(d, d),
                bq: add(1, d),
                wk: add(d, d),
                bk: add(1, d),
                wv: add(d, d),
                bv: add(1, d),
                wo: add(d, d),
                bo: add(1, d),
                ln2_g: add(1, d),
                ln2_b: add(1, d),
                w1: add(d, c.d_ff),
                b1: add(1, c.d_ff),
                w2: add(c.d_ff, d),
                b2: add(1, d),
            })
            .collect();
        let lnf_g = add(1, d);
        let lnf_b = add(1, d);
        let head_w = add(d, c.out_dim());
        let head_b = add(1, c.out_dim());
        Layout {
            tok,
            pos,
            typ,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            shapes,
        }
    }
}

/// One tensor per parameter, in layout order. Also used for gradients and
/// optimizer moments.
pub type Tensors<T> = Vec<Array2<T>>;

pub fn zeros_like<T: Scalar>(t: &[Array2<T>]) -> Tensors<T> {
    t.iter().map(|a| Array2::zeros(a.raw_dim())).collect()
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    o: Array2<T>,
    ln2: LnCache<T>,
    f: Array2<T>,
    h_pre: Array2<T>,
    h_act: Array2<T>,
}

/// Activations of one forward pass, kept for the backward pass.
pub struct Forward<T> {
    tokens: Vec<u32>,
    types: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    z: Array2<T>,
    /// `len x vocab` for language models, `len x 1` for taggers.
    pub logits: Array2<T>,
}

impl<T> Forward<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Cached keys and values for incremental greedy decoding.
pub struct DecodeState<T> {
    keys: Vec<Array2<T>>,
    values: Vec<Array2<T>>,
}

impl<T> DecodeState<T> {
    pub fn len(&self) -> usize {
        self.keys.first().map(|k| k.nrows()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct SequenceModel<T> {
    config: ModelConfig,
    layout: Layout,
    params: Tensors<T>,
}

impl<T: Scalar> SequenceModel<T> {
    /// Initializes weights from `seed`: N(0, 0.02)-scaled uniform draws,
    /// residual projections shrunk by sqrt(2 * layers), unit LayerNorm
    /// gains, zero biases, and a zero tagger head (every confidence starts
    /// at exactly 0.5).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let resid_std = std / ((2 * config.n_layers.max(1)) as f64).sqrt();
        let mut params: Tensors<T> = layout
            .shapes
            .iter()
            .map(|&(r, c)| Array2::zeros((r, c)))
            .collect();
        let mut fill = |t: &mut Array2<T>, std: f64| {
            // uniform with matching variance
            let a = std * 3f64.sqrt();
            t.mapv_inplace(|_| T::of(rng.gen_range(-a..a)));
        };
        fill(&mut params[layout.tok], std);
        fill(&mut params[layout.pos], std);
        fill(&mut params[layout.typ], std);
        for l in &layout.layers {
            for (idx, s) in [
                (l.wq, std),
                (l.wk, std),
                (l.wv, std),
                (l.wo, resid_std),
                (l.w1, std),
                (l.w2, resid_std),
            ] {
                fill(&mut params[idx], s);
            }
            params[l.ln1_g].fill(T::one());
            params[l.ln2_g].fill(T::one());
        }
        params[layout.lnf_g].fill(T::one());
        if config.head == HeadKind::LanguageModel {
            fill(&mut params[layout.head_w], std);
        }
        Ok(SequenceModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Tensors<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Tensors<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Tensors<T>) -> Result<()> {
        let ok = params.len() == self.layout.shapes.len()
            && params
                .iter()
                .zip(&self.layout.shapes)
                .all(|(p, &(r, c))| p.dim() == (r, c));
        if !ok {
            return Err(GmeError::Config("parameter shapes do not match model config".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.layout.shapes
    }

    pub fn zero_grads(&self) -> Tensors<T> {
        zeros_like(&self.params)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, tokens: &[u32], types: &[u32]) -> Result<()> {
        if tokens.len() != types.len() {
            return Err(GmeError::Precondition("token and type sequences differ in length".into()));
        }
        if tokens.is_empty() {
            return Err(GmeError::Precondition("empty input sequence".into()));
        }
        if tokens.len() > self.config.max_len {
            return Err(GmeError::Length {
                len: tokens.len(),
                limit: self.config.max_len,
                case: None,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(GmeError::Config(format!("token id {t} outside vocabulary")));
        }
        if let Some(&t) = types.iter().find(|&&t| t as usize >= self.config.n_types) {
            return Err(GmeError::Config(format!("type id {t} outside type table")));
        }
        Ok(())
    }

    /// Summed token, position and type embeddings, the input the saliency
    /// gradients are taken against.
    pub fn input_embeddings(&self, tokens: &[u32], types: &[u32]) -> Array2<T> {
        let p = &self.params;
        let mut x = Array2::zeros((tokens.len(), self.config.d_model));
        for (t, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&p[self.layout.tok].row(tokens[t] as usize));
            row += &p[self.layout.pos].row(t);
            row += &p[self.layout.typ].row(types[t] as usize);
        }
        x
    }

    pub fn forward(&self, tokens: &[u32], types: &[u32]) -> Result<Forward<T>> {
        self.forward_with_offset(tokens, types, None)
    }

    /// Forward pass with an optional additive perturbation of the input
    /// embeddings (used by finite-difference checks).
    pub fn forward_with_offset(
        &self,
        tokens: &[u32],
        types: &[u32],
        offset: Option<&Array2<T>>,
    ) -> Result<Forward<T>> {
        self.check_input(tokens, types)?;
        let p = &self.params;
        let mut x = self.input_embeddings(tokens, types);
        if let Some(o) = offset {
            x += o;
        }
        let n = tokens.len();
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for l in &self.layout.layers {
            let (a, ln1) = layer_norm(&x, &p[l.ln1_g], &p[l.ln1_b]);
            let q = a.dot(&p[l.wq]) + &p[l.bq];
            let k = a.dot(&p[l.wk]) + &p[l.bk];
            let v = a.dot(&p[l.wv]) + &p[l.bv];
            let mut o = Array2::zeros((n, self.config.d_model));
            let mut probs = Vec::with_capacity(h);
            for head in 0..h {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                if self.config.causal {
                    for i in 0..n {
                        for j in i + 1..n {
                            scores[[i, j]] = T::neg_infinity();
                        }
                    }
                }
                softmax_rows(&mut scores);
                o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            x = x + o.dot(&p[l.wo]) + &p[l.bo];
            let (f, ln2) = layer_norm(&x, &p[l.ln2_g], &p[l.ln2_b]);
            let h_pre = f.dot(&p[l.w1]) + &p[l.b1];
            let h_act = h_pre.mapv(gelu);
            x = x + h_act.dot(&p[l.w2]) + &p[l.b2];
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                f,
                h_pre,
                h_act,
            });
        }
        let (z, lnf) = layer_norm(&x, &p[self.layout.lnf_g], &p[self.layout.lnf_b]);
        let logits = z.dot(&p[self.layout.head_w]) + &p[self.layout.head_b];
        Ok(Forward {
            tokens: tokens.to_vec(),
            types: types.to_vec(),
            layers,
            lnf,
            z,
            logits,
        })
    }

    /// Backpropagates `d_logits` through the cached pass, accumulating
    /// parameter gradients into `grads`. Returns the gradient with respect
    /// to the input embeddings (`len x d_model`).
    pub fn backward(&self, fwd: &Forward<T>, d_logits: &Array2<T>, grads: &mut [Array2<T>]) -> Array2<T> {
        let p = &self.params;
        let lay = &self.layout;
        let n = fwd.len();
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let scale = T::one() / T::of(dh as f64).sqrt();

        grads[lay.head_w] += &fwd.z.t().dot(d_logits);
        grads[lay.head_b] += &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dz = d_logits.dot(&p[lay.head_w].t());
        let mut dx = {
            let (g, rest) = two_mut(grads, lay.lnf_g, lay.lnf_b);
            layer_norm_backward(&dz, &fwd.lnf, &p[lay.lnf_g], g, rest)
        };

        for (l, c) in lay.layers.iter().zip(&fwd.layers).rev() {
            // feed-forward branch
            grads[l.w2] += &c.h_act.t().dot(&dx);
            grads[l.b2] += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut dh_act = dx.dot(&p[l.w2].t());
            ndarray::Zip::from(&mut dh_act)
                .and(&c.h_pre)
                .for_each(|g, &x| *g = *g * gelu_grad(x));
            grads[l.w1] += &c.f.t().dot(&dh_act);
            grads[l.b1] += &dh_act.sum_axis(Axis(0)).insert_axis(Axis(0));
            let df = dh_act.dot(&p[l.w1].t());
            let dres = {
                let (g, b) = two_mut(grads, l.ln2_g, l.ln2_b);
                layer_norm_backward(&df, &c.ln2, &p[l.ln2_g], g, b)
            };
            dx += &dres;

            // attention branch
            grads[l.wo] += &c.o.t().dot(&dx);
            grads[l.bo] += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
            let d_o = dx.dot(&p[l.wo].t());
            let mut dq = Array2::zeros((n, self.config.d_model));
            let mut dk = Array2::zeros((n, self.config.d_model));
            let mut dv = Array2::zeros((n, self.config.d_model));
            for head in 0..h {
                let cols = s![.., head * dh..(head + 1) * dh];
                let probs = &c.probs[head];
                let do_h = d_o.slice(cols);
                let dp = do_h.dot(&c.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&do_h));
                let mut ds = &dp * probs;
                let row_sums = ds.sum_axis(Axis(1));
                ndarray::Zip::from(ds.rows_mut())
                    .and(probs.rows())
                    .and(&row_sums)
                    .for_each(|mut d, p_row, &rs| {
                        d.zip_mut_with(&p_row, |x, &pv| *x = (*x - pv * rs) * scale);
                    });
                // ds currently holds P*dP - P*rowsum, i.e. P ⊙ (dP - rowsum), scaled
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            grads[l.wq] += &c.a.t().dot(&dq);
            grads[l.bq] += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[l.wk] += &c.a.t().dot(&dk);
            grads[l.bk] += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[l.wv] += &c.a.t().dot(&dv);
            grads[l.bv] += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
            let da = dq.dot(&p[l.wq].t()) + dk.dot(&p[l.wk].t()) + dv.dot(&p[l.wv].t());
            let dres = {
                let (g, b) = two_mut(grads, l.ln1_g, l.ln1_b);
                layer_norm_backward(&da, &c.ln1, &p[l.ln1_g], g, b)
            };
            dx += &dres;
        }

        for (t, row) in dx.axis_iter(Axis(0)).enumerate() {
            let mut r = grads[lay.tok].row_mut(fwd.tokens[t] as usize);
            r += &row;
            let mut r = grads[lay.pos].row_mut(t);
            r += &row;
            let mut r = grads[lay.typ].row_mut(fwd.types[t] as usize);
            r += &row;
        }
        dx
    }

    /// Runs the prompt and returns the decode cache with the logits of the
    /// last prompt position.
    pub fn prefill(&self, tokens: &[u32], types: &[u32]) -> Result<(DecodeState<T>, Array1<T>)> {
        if !self.config.causal {
            return Err(GmeError::Config("incremental decoding requires a causal model".into()));
        }
        let fwd = self.forward(tokens, types)?;
        let state = DecodeState {
            keys: fwd.layers.iter().map(|c| c.k.clone()).collect(),
            values: fwd.layers.iter().map(|c| c.v.clone()).collect(),
        };
        let last = fwd.logits.row(fwd.len() - 1).to_owned();
        Ok((state, last))
    }

    /// Appends one token to the decode cache and returns its logits.
    pub fn step(&self, state: &mut DecodeState<T>, token: u32, token_type: u32) -> Result<Array1<T>> {
        let t = state.len();
        if t >= self.config.max_len {
            return Err(GmeError::Length {
                len: t + 1,
                limit: self.config.max_len,
                case: None,
            });
        }
        self.check_input(&[token], &[token_type])?;
        let p = &self.params;
        let lay = &self.layout;
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut x = (&p[lay.tok].row(token as usize) + &p[lay.pos].row(t) + &p[lay.typ].row(token_type as usize))
            .insert_axis(Axis(0));
        for (li, l) in lay.layers.iter().enumerate() {
            let (a, _) = layer_norm(&x, &p[l.ln1_g], &p[l.ln1_b]);
            let q = a.dot(&p[l.wq]) + &p[l.bq];
            let k = a.dot(&p[l.wk]) + &p[l.bk];
            let v = a.dot(&p[l.wv]) + &p[l.bv];
            state.keys[li]
                .push_row(k.row(0))
                .expect("key width matches");
            state.values[li]
                .push_row(v.row(0))
                .expect("value width matches");
            let keys = &state.keys[li];
            let values = &state.values[li];
            let mut o = Array2::zeros((1, self.config.d_model));
            for head in 0..h {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&keys.slice(cols).t()) * scale;
                softmax_rows(&mut scores);
                o.slice_mut(cols).assign(&scores.dot(&values.slice(cols)));
            }
            x = x + o.dot(&p[l.wo]) + &p[l.bo];
            let (f, _) = layer_norm(&x, &p[l.ln2_g], &p[l.ln2_b]);
            let hid = (f.dot(&p[l.w1]) + &p[l.b1]).mapv(gelu);
            x = x + hid.dot(&p[l.w2]) + &p[l.b2];
        }
        let (z, _) = layer_norm(&x, &p[lay.lnf_g], &p[lay.lnf_b]);
        let logits = z.dot(&p[lay.head_w]) + &p[lay.head_b];
        Ok(logits.row(0).to_owned())
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(row: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
