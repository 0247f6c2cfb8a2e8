//! Response-to-persona language model and gradient saliency over response words.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DialogueSample;
use crate::nn::{
    smoothed_cross_entropy, train, HeadKind, Manifest, ModelDims, SequenceModel, TokenTarget, TrainConfig,
    TrainReport,
};
use crate::templating::{
    overlap_set, stopword_set, target_mask_vector, Lemmatizer, Stoplist, TokenMaskVector,
};
use crate::text::Words;
use crate::vocab::{Vocab, END_OF_RESPONSE, SEP};
use crate::{GmeError, Result, Scalar};

pub const RESPONSE_TYPE: u32 = 0;
pub const PERSONA_TYPE: u32 = 1;
const N_TYPES: usize = 2;
const KIND: &str = "attribution";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionConfig {
    pub model: ModelDims,
    pub train: TrainConfig,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            model: ModelDims { d_model: 48, n_layers: 2, n_heads: 4, d_ff: 96, max_len: 64 },
            train: TrainConfig {
                steps: 4000,
                batch_size: 16,
                learning_rate: 2e-3,
                warmup_steps: 50,
                eval_every: 500,
                ..TrainConfig::default()
            },
        }
    }
}

/// Token stream `response SEP persona_1 SEP ... persona_k SEP EOR`.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonaEncoding {
    pub tokens: Vec<u32>,
    pub types: Vec<u32>,
    /// Token span of each response word.
    pub word_spans: Vec<Range<usize>>,
    /// Every token after the response separator is predicted from its prefix.
    pub targets: Vec<TokenTarget>,
}

pub fn encode_pair(vocab: &Vocab, response: &[String], persona: &[Words], max_len: usize) -> Result<PersonaEncoding> {
    if response.is_empty() {
        return Err(GmeError::Precondition("empty response".into()));
    }
    let (mut tokens, word_spans) = vocab.encode(response);
    tokens.push(SEP);
    let mut types = vec![RESPONSE_TYPE; tokens.len()];
    let boundary = tokens.len() - 1;
    for sentence in persona {
        let (ids, _) = vocab.encode(sentence);
        tokens.extend(ids);
        tokens.push(SEP);
    }
    tokens.push(END_OF_RESPONSE);
    types.resize(tokens.len(), PERSONA_TYPE);
    if tokens.len() > max_len {
        return Err(GmeError::Length { len: tokens.len(), limit: max_len, case: None });
    }
    let targets = (boundary..tokens.len() - 1)
        .map(|p| TokenTarget { position: p, target: tokens[p + 1] })
        .collect();
    Ok(PersonaEncoding { tokens, types, word_spans, targets })
}

/// Causal LM of the persona given the response. Inference is read-only and
/// safe to share across threads.
#[derive(Clone, Debug)]
pub struct PersonaPredictor<T> {
    model: SequenceModel<T>,
    vocab: Vocab,
}

impl<T: Scalar> PersonaPredictor<T> {
    pub fn new(vocab: Vocab, dims: &ModelDims, seed: u64) -> Result<Self> {
        let config = dims.config(vocab.len(), N_TYPES, true, HeadKind::LanguageModel);
        Ok(PersonaPredictor { model: SequenceModel::new(config, seed)?, vocab })
    }

    pub fn from_parts(model: SequenceModel<T>, vocab: Vocab) -> Result<Self> {
        let c = model.config();
        if c.vocab_size != vocab.len() || c.head != HeadKind::LanguageModel || c.n_types != N_TYPES {
            return Err(GmeError::Config("model does not fit the attribution role or vocabulary".into()));
        }
        Ok(PersonaPredictor { model, vocab })
    }

    pub fn model(&self) -> &SequenceModel<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut SequenceModel<T> {
        &mut self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn encode(&self, response: &[String], persona: &[Words]) -> Result<PersonaEncoding> {
        encode_pair(&self.vocab, response, persona, self.model.config().max_len)
    }

    /// Summed persona cross-entropy and the number of predicted tokens.
    pub fn persona_nll(&self, response: &[String], persona: &[Words]) -> Result<(T, usize)> {
        let enc = self.encode(response, persona)?;
        let fwd = self.model.forward(&enc.tokens, &enc.types)?;
        let (loss, _) = smoothed_cross_entropy(&fwd.logits, &enc.targets, T::zero());
        Ok((loss, enc.targets.len()))
    }

    pub fn save(&self, dir: &Path, seed: u64, step: usize) -> Result<()> {
        let manifest = Manifest {
            kind: KIND.into(),
            model: self.model.config().clone(),
            vocab_hash: self.vocab.hash(),
            seed,
            step,
            extra: Default::default(),
        };
        self.model.save(dir, &manifest)
    }

    pub fn load(dir: &Path, vocab: Vocab) -> Result<Self> {
        let (model, manifest) = SequenceModel::load(dir)?;
        manifest.expect(KIND, &vocab.hash())?;
        Self::from_parts(model, vocab)
    }
}

/// Mean per-token persona NLL over `samples`.
pub fn mean_persona_nll<T: Scalar>(predictor: &PersonaPredictor<T>, samples: &[DialogueSample]) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for s in samples {
        let (l, n) = predictor.persona_nll(&s.response, &s.persona)?;
        total += l.as_f64();
        count += n;
    }
    if count == 0 {
        return Err(GmeError::Precondition("no persona tokens to score".into()));
    }
    Ok(total / count as f64)
}

/// Trains the response-to-persona model. Samples that do not fit the
/// context are skipped with a warning.
pub fn train_response_to_persona<T: Scalar>(
    train_set: &[DialogueSample],
    valid_set: &[DialogueSample],
    vocab: &Vocab,
    config: &AttributionConfig,
    resume_dir: Option<&Path>,
) -> Result<(PersonaPredictor<T>, TrainReport)> {
    let mut predictor = PersonaPredictor::<T>::new(vocab.clone(), &config.model, config.train.seed)?;
    let encoded: Vec<PersonaEncoding> = train_set
        .iter()
        .filter_map(|s| predictor.encode(&s.response, &s.persona).ok())
        .collect();
    if encoded.len() < train_set.len() {
        log::warn!("attribution: skipped {} over-long samples", train_set.len() - encoded.len());
    }
    let valid: Vec<DialogueSample> = valid_set
        .iter()
        .filter(|s| predictor.encode(&s.response, &s.persona).is_ok())
        .take(256)
        .cloned()
        .collect();
    let mut example = |m: &SequenceModel<T>, idx: usize, _epoch: usize, grads: &mut [ndarray::Array2<T>]| {
        let e = &encoded[idx];
        let fwd = m.forward(&e.tokens, &e.types)?;
        let (loss, d) = smoothed_cross_entropy(&fwd.logits, &e.targets, T::zero());
        m.backward(&fwd, &d, grads);
        Ok((loss, e.targets.len()))
    };
    let vocab_copy = vocab.clone();
    let mut validate = |m: &SequenceModel<T>| {
        if valid.is_empty() {
            return Ok(0.0);
        }
        let p = PersonaPredictor { model: m.clone(), vocab: vocab_copy.clone() };
        Ok(-mean_persona_nll(&p, &valid)?)
    };
    let report = train(
        &mut predictor.model,
        encoded.len(),
        &config.train,
        KIND,
        &mut example,
        &mut validate,
        resume_dir,
    )?;
    Ok((predictor, report))
}

/// Per-word L2 norm of the persona-loss gradient with respect to the input
/// embeddings, pooled over the word's subword tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScores<T> {
    pub per_token_norm: Vec<T>,
}

pub fn gradient_saliency<T: Scalar>(
    predictor: &PersonaPredictor<T>,
    response: &[String],
    persona: &[Words],
) -> Result<SaliencyScores<T>> {
    let enc = predictor.encode(response, persona)?;
    let fwd = predictor.model.forward(&enc.tokens, &enc.types)?;
    let (loss, d_logits) = smoothed_cross_entropy(&fwd.logits, &enc.targets, T::zero());
    if !loss.is_finite() {
        return Err(GmeError::NonFiniteLoss { stage: "saliency".into(), step: 0 });
    }
    let mut scratch = predictor.model.zero_grads();
    let dx = predictor.model.backward(&fwd, &d_logits, &mut scratch);
    let per_token_norm = enc
        .word_spans
        .iter()
        .map(|span| {
            dx.slice(ndarray::s![span.clone(), ..])
                .iter()
                .fold(T::zero(), |a, &g| a + g * g)
                .sqrt()
        })
        .collect();
    Ok(SaliencyScores { per_token_norm })
}

/// Words whose saliency strictly exceeds `delta`.
pub fn gradient_set<T: Scalar>(scores: &SaliencyScores<T>, delta: T) -> Result<BTreeSet<usize>> {
    if !(delta > T::zero()) {
        return Err(GmeError::Precondition(format!("saliency threshold must be positive, got {delta}")));
    }
    Ok(scores
        .per_token_norm
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > delta)
        .map(|(i, _)| i)
        .collect())
}

/// Training mask targets for a corpus, bound to the vocabulary of the
/// attribution model that produced their gradient sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskTargets {
    pub vocab_hash: String,
    pub masks: Vec<TokenMaskVector>,
}

impl MaskTargets {
    pub fn expect_vocab(&self, vocab: &Vocab, len: usize) -> Result<()> {
        if self.vocab_hash != vocab.hash() {
            return Err(GmeError::Config("mask targets were built with a different vocabulary".into()));
        }
        if self.masks.len() != len {
            return Err(GmeError::Precondition(format!(
                "{} mask targets for {len} samples",
                self.masks.len()
            )));
        }
        Ok(())
    }
}

/// `(Gradient ∪ Overlap) \ Stopwords` for every sample. Samples too long
/// for the attribution context fall back to an empty gradient set.
pub fn mask_targets<T: Scalar>(
    predictor: &PersonaPredictor<T>,
    samples: &[DialogueSample],
    delta: f64,
    lemmatizer: &impl Lemmatizer,
    stoplist: &Stoplist,
) -> Result<MaskTargets> {
    let delta = T::of(delta);
    let mut fallback = 0usize;
    let mut masks = Vec::with_capacity(samples.len());
    for s in samples {
        let gradient = match gradient_saliency(predictor, &s.response, &s.persona) {
            Ok(scores) => gradient_set(&scores, delta)?,
            Err(GmeError::Length { .. }) => {
                fallback += 1;
                BTreeSet::new()
            }
            Err(e) => return Err(e),
        };
        let overlap = overlap_set(&s.response, &s.persona, lemmatizer);
        let stop = stopword_set(&s.response, stoplist);
        masks.push(target_mask_vector(s.response.len(), &gradient, &overlap, &stop)?);
    }
    if fallback > 0 {
        log::warn!("attribution: {fallback} samples exceeded the context; gradient sets left empty");
    }
    Ok(MaskTargets { vocab_hash: predictor.vocab().hash(), masks })
}
