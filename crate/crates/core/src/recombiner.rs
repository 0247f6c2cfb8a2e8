//! The generator: persona, history and template serialized into one token
//! stream, trained by denoising and decoded greedily.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::MaskTargets;
use crate::corpus::{DialogueSample, DialogueTurn, Speaker};
use crate::nn::{
    argmax, smoothed_cross_entropy, train, HeadKind, Manifest, ModelDims, SequenceModel, TokenTarget, TrainConfig,
    TrainReport,
};
use crate::templating::{sample_training_template, Segment, Template, TemplateSamplerConfig};
use crate::text::Words;
use crate::vocab::{Vocab, END_OF_RESPONSE, MASK_SPAN, PAD, SEP, UNK};
use crate::{GmeError, Result, Scalar};

pub const PERSONA_TYPE: u32 = 0;
pub const SPEAKER_ONE_TYPE: u32 = 1;
pub const SPEAKER_TWO_TYPE: u32 = 2;
pub const TEMPLATE_TYPE: u32 = 3;
pub const RESPONSE_TYPE: u32 = 4;
const N_TYPES: usize = 5;
const KIND: &str = "recombiner";
/// Free tokens a strict-mode mask span may emit before the next literal is forced.
const STRICT_SPAN_LIMIT: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecombinerConfig {
    pub model: ModelDims,
    pub label_smoothing: f64,
    /// Word limit for one generated response.
    pub max_decode_length: usize,
    /// Copy literal template segments verbatim during decoding.
    pub strict_copy: bool,
    pub train: TrainConfig,
}

impl Default for RecombinerConfig {
    fn default() -> Self {
        RecombinerConfig {
            model: ModelDims { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 128, max_len: 112 },
            label_smoothing: 0.1,
            max_decode_length: 64,
            strict_copy: false,
            train: TrainConfig {
                steps: 10000,
                batch_size: 16,
                learning_rate: 2e-3,
                warmup_steps: 100,
                eval_every: 500,
                patience: 4,
                ..TrainConfig::default()
            },
        }
    }
}

impl RecombinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(GmeError::Config(format!(
                "label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.max_decode_length == 0 {
            return Err(GmeError::Config("max_decode_length must be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub token_ids: Vec<u32>,
    pub type_ids: Vec<u32>,
    /// Set on response positions, the only ones that carry loss.
    pub loss_mask: Vec<bool>,
    /// Tokens before the response segment.
    pub prompt_len: usize,
    /// History turns that survived truncation (the most recent ones).
    pub history_kept: usize,
}

impl EncodedExample {
    /// Next-token targets for every loss-bearing position.
    pub fn targets(&self) -> Vec<TokenTarget> {
        (1..self.token_ids.len())
            .filter(|&t| self.loss_mask[t])
            .map(|t| TokenTarget { position: t - 1, target: self.token_ids[t] })
            .collect()
    }
}

fn speaker_type(s: Speaker) -> u32 {
    match s {
        Speaker::One => SPEAKER_ONE_TYPE,
        Speaker::Two => SPEAKER_TWO_TYPE,
    }
}

/// Serializes `persona SEP.. history SEP.. template SEP [response EOR]`.
/// The oldest history turns are dropped until the stream fits `max_len`
/// (leaving room for one generated token at inference).
pub fn serialize(
    vocab: &Vocab,
    history: &[DialogueTurn],
    template: &[String],
    persona: &[Words],
    response: Option<&[String]>,
    max_len: usize,
) -> Result<EncodedExample> {
    let mut head = Vec::new();
    for sentence in persona {
        for w in sentence {
            vocab.encode_word(w, &mut head);
        }
        head.push(SEP);
    }
    let n_persona = head.len();
    let mut tmpl = Vec::new();
    for w in template {
        vocab.encode_word(w, &mut tmpl);
    }
    tmpl.push(SEP);
    let mut resp = Vec::new();
    if let Some(r) = response {
        for w in r {
            vocab.encode_word(w, &mut resp);
        }
        resp.push(END_OF_RESPONSE);
    }
    let fixed = n_persona + tmpl.len() + resp.len().max(1);
    if fixed > max_len {
        return Err(GmeError::Length { len: fixed, limit: max_len, case: None });
    }
    let mut turns: Vec<Vec<u32>> = Vec::new();
    let mut used = fixed;
    for turn in history.iter().rev() {
        let mut ids = Vec::new();
        for w in &turn.text {
            vocab.encode_word(w, &mut ids);
        }
        ids.push(SEP);
        if used + ids.len() > max_len {
            break;
        }
        used += ids.len();
        turns.push(ids);
    }
    let history_kept = turns.len();
    let mut token_ids = head;
    let mut type_ids = vec![PERSONA_TYPE; n_persona];
    for (ids, turn) in turns.iter().rev().zip(&history[history.len() - history_kept..]) {
        token_ids.extend(ids);
        type_ids.resize(token_ids.len(), speaker_type(turn.speaker));
    }
    token_ids.extend(&tmpl);
    type_ids.resize(token_ids.len(), TEMPLATE_TYPE);
    let prompt_len = token_ids.len();
    token_ids.extend(&resp);
    type_ids.resize(token_ids.len(), RESPONSE_TYPE);
    let mut loss_mask = vec![false; token_ids.len()];
    loss_mask[prompt_len..].iter_mut().for_each(|m| *m = true);
    Ok(EncodedExample { token_ids, type_ids, loss_mask, prompt_len, history_kept })
}

/// Summed (smoothed) response loss and its logits gradient.
pub fn response_loss<T: Scalar>(
    model: &SequenceModel<T>,
    example: &EncodedExample,
    smoothing: T,
) -> Result<(T, Array2<T>, usize)> {
    let fwd = model.forward(&example.token_ids, &example.type_ids)?;
    let targets = example.targets();
    let (loss, grad) = smoothed_cross_entropy(&fwd.logits, &targets, smoothing);
    Ok((loss, grad, targets.len()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub words: Words,
    pub truncated: bool,
}

/// Trained generator handle. Decoding is read-only, so one handle can serve
/// concurrent callers.
#[derive(Clone, Debug)]
pub struct Recombiner<T> {
    model: SequenceModel<T>,
    vocab: Vocab,
    config: RecombinerConfig,
}

impl<T: Scalar> Recombiner<T> {
    pub fn new(vocab: Vocab, config: RecombinerConfig) -> Result<Self> {
        config.validate()?;
        let mc = config.model.config(vocab.len(), N_TYPES, true, HeadKind::LanguageModel);
        Ok(Recombiner { model: SequenceModel::new(mc, config.train.seed)?, vocab, config })
    }

    pub fn model(&self) -> &SequenceModel<T> {
        &self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &RecombinerConfig {
        &self.config
    }

    pub fn set_strict_copy(&mut self, strict: bool) {
        self.config.strict_copy = strict;
    }

    pub fn encode(
        &self,
        history: &[DialogueTurn],
        template: &Template,
        persona: &[Words],
        response: Option<&[String]>,
    ) -> Result<EncodedExample> {
        serialize(&self.vocab, history, &template.words(), persona, response, self.model.config().max_len)
    }

    /// Greedy decoding from the response start until the end-of-response
    /// token, the word limit or the context limit.
    pub fn generate(&self, history: &[DialogueTurn], template: &Template, persona: &[Words]) -> Result<Generation> {
        let enc = self.encode(history, template, persona, None)?;
        let max_len = self.model.config().max_len;
        let (mut state, mut logits) = self.model.prefill(&enc.token_ids, &enc.type_ids)?;
        let mut strict = self.config.strict_copy.then(|| StrictCursor::new(&self.vocab, template));
        let mut out: Vec<u32> = Vec::new();
        let mut n_words = 0usize;
        let mut truncated = false;
        loop {
            let free = self.pick(&mut logits, out.is_empty());
            let next = match strict.as_mut() {
                Some(c) => c.next(free),
                None => free,
            };
            if next == END_OF_RESPONSE {
                break;
            }
            if !self.vocab.is_continuation(next) {
                n_words += 1;
                if n_words > self.config.max_decode_length {
                    truncated = true;
                    break;
                }
            }
            out.push(next);
            if state.len() >= max_len {
                truncated = true;
                break;
            }
            logits = self.model.step(&mut state, next, RESPONSE_TYPE)?;
        }
        Ok(Generation { words: self.vocab.decode(&out), truncated })
    }

    fn pick(&self, logits: &mut ndarray::Array1<T>, first: bool) -> u32 {
        for banned in [PAD, UNK, SEP, MASK_SPAN] {
            logits[banned as usize] = T::neg_infinity();
        }
        if first {
            for id in 0..logits.len() as u32 {
                if self.vocab.is_continuation(id) {
                    logits[id as usize] = T::neg_infinity();
                }
            }
        }
        argmax(logits) as u32
    }

    /// Teacher-forced argmax accuracy over response tokens.
    pub fn token_accuracy(&self, examples: &[EncodedExample]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for e in examples {
            let fwd = self.model.forward(&e.token_ids, &e.type_ids)?;
            for t in e.targets() {
                hit += (argmax(&fwd.logits.row(t.position).to_owned()) as u32 == t.target) as usize;
                total += 1;
            }
        }
        if total == 0 {
            return Err(GmeError::Precondition("no response tokens to score".into()));
        }
        Ok(hit as f64 / total as f64)
    }

    pub fn save(&self, dir: &Path, step: usize) -> Result<()> {
        let mut extra = serde_json::Map::new();
        extra.insert("recombiner".into(), serde_json::to_value(&self.config)?);
        let manifest = Manifest {
            kind: KIND.into(),
            model: self.model.config().clone(),
            vocab_hash: self.vocab.hash(),
            seed: self.config.train.seed,
            step,
            extra,
        };
        self.model.save(dir, &manifest)
    }

    pub fn load(dir: &Path, vocab: Vocab) -> Result<Self> {
        let (model, manifest) = SequenceModel::load(dir)?;
        manifest.expect(KIND, &vocab.hash())?;
        let config: RecombinerConfig = manifest
            .extra
            .get("recombiner")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| GmeError::Config("recombiner manifest lacks its config".into()))?;
        if model.config().vocab_size != vocab.len() || model.config().n_types != N_TYPES {
            return Err(GmeError::Config("checkpoint does not fit the recombiner role".into()));
        }
        Ok(Recombiner { model, vocab, config })
    }
}

/// Constrained decoding state: literal segments are emitted verbatim, mask
/// segments decode freely until the model starts the next literal.
struct StrictCursor {
    literals: Vec<Option<Vec<u32>>>,
    segment: usize,
    offset: usize,
    free_run: usize,
}

impl StrictCursor {
    fn new(vocab: &Vocab, template: &Template) -> Self {
        let literals = template
            .segments
            .iter()
            .map(|s| match s {
                Segment::Literal(ws) => {
                    let mut ids = Vec::new();
                    ws.iter().for_each(|w| vocab.encode_word(w, &mut ids));
                    Some(ids)
                }
                Segment::Mask => None,
            })
            .collect();
        StrictCursor { literals, segment: 0, offset: 0, free_run: 0 }
    }

    fn next(&mut self, proposal: u32) -> u32 {
        loop {
            match self.literals.get(self.segment) {
                None => return END_OF_RESPONSE,
                Some(Some(ids)) if self.offset < ids.len() => {
                    self.offset += 1;
                    return ids[self.offset - 1];
                }
                Some(Some(_)) => {
                    self.segment += 1;
                    self.offset = 0;
                }
                Some(None) => {
                    let upcoming = match self.literals.get(self.segment + 1) {
                        Some(Some(ids)) => ids.first().copied(),
                        _ => Some(END_OF_RESPONSE),
                    };
                    if Some(proposal) == upcoming || self.free_run >= STRICT_SPAN_LIMIT {
                        self.segment += 1;
                        self.offset = 0;
                        self.free_run = 0;
                        continue;
                    }
                    self.free_run += 1;
                    return proposal;
                }
            }
        }
    }
}

fn visit_seed(seed: u64, epoch: usize, idx: usize) -> u64 {
    let mut x = seed ^ 0x5851_F42D_4C95_7F2D;
    for v in [epoch as u64, idx as u64] {
        x = (x ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        x ^= x >> 29;
    }
    x
}

/// The template drawn for sample `idx` on its visit in `epoch`.
pub fn visit_template(
    sample: &DialogueSample,
    mask: &crate::templating::TokenMaskVector,
    sampler: &TemplateSamplerConfig,
    epoch: usize,
    idx: usize,
) -> Result<Template> {
    let mut rng = ChaCha8Rng::seed_from_u64(visit_seed(sampler.rng_seed, epoch, idx));
    sample_training_template(&sample.response, mask, sampler, &mut rng)
}

/// Denoising training: every visit draws a fresh template for its sample.
/// `validate` scores the current generator (higher is better).
pub fn train_recombiner<T: Scalar>(
    samples: &[DialogueSample],
    targets: &MaskTargets,
    sampler: &TemplateSamplerConfig,
    vocab: &Vocab,
    config: &RecombinerConfig,
    validate: &mut dyn FnMut(&Recombiner<T>) -> Result<f64>,
    resume_dir: Option<&Path>,
) -> Result<(Recombiner<T>, TrainReport)> {
    sampler.validate()?;
    targets.expect_vocab(vocab, samples.len())?;
    let mut rec = Recombiner::<T>::new(vocab.clone(), config.clone())?;
    let max_len = rec.model.config().max_len;
    let smoothing = T::of(config.label_smoothing);
    let mut example = |m: &SequenceModel<T>, idx: usize, epoch: usize, grads: &mut [Array2<T>]| {
        let s = &samples[idx];
        let t = visit_template(s, &targets.masks[idx], sampler, epoch, idx)?;
        let enc = match serialize(vocab, &s.history, &t.words(), &s.persona, Some(&s.response), max_len) {
            Ok(e) => e,
            Err(GmeError::Length { .. }) => return Ok((T::zero(), 0)),
            Err(e) => return Err(e),
        };
        let fwd = m.forward(&enc.token_ids, &enc.type_ids)?;
        let tt = enc.targets();
        let (loss, d) = smoothed_cross_entropy(&fwd.logits, &tt, smoothing);
        m.backward(&fwd, &d, grads);
        Ok((loss, tt.len()))
    };
    let shell = rec.clone();
    let mut val = |m: &SequenceModel<T>| {
        let r = Recombiner { model: m.clone(), ..shell.clone() };
        validate(&r)
    };
    let report = train(&mut rec.model, samples.len(), &config.train, KIND, &mut example, &mut val, resume_dir)?;
    Ok((rec, report))
}
