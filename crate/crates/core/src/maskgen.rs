//! Per-word mask classifier over (history, response), trained with
//! inverse-class-frequency weighted binary cross-entropy. The persona is
//! never part of its input.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::MaskTargets;
use crate::corpus::{DialogueSample, DialogueTurn, Speaker};
use crate::nn::{
    sigmoid, train, weighted_binary_cross_entropy, HeadKind, Manifest, ModelDims, SequenceModel, TagTarget,
    TrainConfig, TrainReport,
};
use crate::templating::TokenMaskVector;
use crate::vocab::{Vocab, SEP};
use crate::{GmeError, Result, Scalar};

pub const SPEAKER_ONE_TYPE: u32 = 0;
pub const SPEAKER_TWO_TYPE: u32 = 1;
pub const RESPONSE_TYPE: u32 = 2;
const N_TYPES: usize = 3;
const KIND: &str = "maskgen";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencies {
    pub f_positive: f64,
    pub f_negative: f64,
}

impl ClassFrequencies {
    pub fn new(positives: usize, total: usize) -> Result<Self> {
        if positives == 0 || positives >= total {
            return Err(GmeError::Config(format!(
                "degenerate mask frequencies: {positives} positive of {total} tokens"
            )));
        }
        let f_positive = positives as f64 / total as f64;
        Ok(ClassFrequencies { f_positive, f_negative: 1.0 - f_positive })
    }

    /// Loss weight `1 / f` of a token's class.
    pub fn weight(&self, positive: bool) -> f64 {
        if positive {
            1.0 / self.f_positive
        } else {
            1.0 / self.f_negative
        }
    }
}

pub fn class_frequencies<'a>(masks: impl IntoIterator<Item = &'a TokenMaskVector>) -> Result<ClassFrequencies> {
    let (mut pos, mut total) = (0, 0);
    for m in masks {
        pos += m.positives();
        total += m.len();
    }
    ClassFrequencies::new(pos, total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskDecision<T> {
    /// `P(m_i = 1 | history, response)` per response word.
    pub confidences: Vec<T>,
}

impl<T: Scalar> MaskDecision<T> {
    pub fn to_mask_vector(&self, threshold: T) -> TokenMaskVector {
        TokenMaskVector {
            labels: self.confidences.iter().map(|&c| c > threshold).collect(),
            confidences: Some(self.confidences.iter().map(|c| c.as_f64()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskgenConfig {
    pub model: ModelDims,
    pub train: TrainConfig,
}

impl Default for MaskgenConfig {
    fn default() -> Self {
        MaskgenConfig {
            model: ModelDims { d_model: 48, n_layers: 2, n_heads: 4, d_ff: 96, max_len: 80 },
            train: TrainConfig {
                steps: 2000,
                batch_size: 16,
                learning_rate: 2e-3,
                warmup_steps: 50,
                eval_every: 500,
                ..TrainConfig::default()
            },
        }
    }
}

/// `history SEP.. response SEP`, with the first piece of every response word recorded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggingInput {
    pub tokens: Vec<u32>,
    pub types: Vec<u32>,
    pub word_positions: Vec<usize>,
}

/// Serializes the classifier input; oldest history turns are dropped to fit.
pub fn serialize_for_tagging(
    vocab: &Vocab,
    history: &[DialogueTurn],
    response: &[String],
    max_len: usize,
) -> Result<TaggingInput> {
    let (mut resp, spans) = vocab.encode(response);
    resp.push(SEP);
    if resp.len() > max_len {
        return Err(GmeError::Length { len: resp.len(), limit: max_len, case: None });
    }
    let mut turns = Vec::new();
    let mut used = resp.len();
    for turn in history.iter().rev() {
        let (mut ids, _) = vocab.encode(&turn.text);
        ids.push(SEP);
        if used + ids.len() > max_len {
            break;
        }
        used += ids.len();
        let ty = match turn.speaker {
            Speaker::One => SPEAKER_ONE_TYPE,
            Speaker::Two => SPEAKER_TWO_TYPE,
        };
        turns.push((ids, ty));
    }
    let mut tokens = Vec::with_capacity(used);
    let mut types = Vec::with_capacity(used);
    for (ids, ty) in turns.into_iter().rev() {
        types.resize(types.len() + ids.len(), ty);
        tokens.extend(ids);
    }
    let offset = tokens.len();
    tokens.extend(resp);
    types.resize(tokens.len(), RESPONSE_TYPE);
    let word_positions = spans.iter().map(|s| offset + s.start).collect();
    Ok(TaggingInput { tokens, types, word_positions })
}

/// Trained classifier handle; prediction is read-only and thread-safe.
#[derive(Clone, Debug)]
pub struct MaskClassifier<T> {
    model: SequenceModel<T>,
    vocab: Vocab,
    frequencies: ClassFrequencies,
}

impl<T: Scalar> MaskClassifier<T> {
    pub fn new(vocab: Vocab, frequencies: ClassFrequencies, dims: &ModelDims, seed: u64) -> Result<Self> {
        let config = dims.config(vocab.len(), N_TYPES, false, HeadKind::Tagger);
        Ok(MaskClassifier { model: SequenceModel::new(config, seed)?, vocab, frequencies })
    }

    pub fn model(&self) -> &SequenceModel<T> {
        &self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn frequencies(&self) -> ClassFrequencies {
        self.frequencies
    }

    pub fn encode(&self, history: &[DialogueTurn], response: &[String]) -> Result<TaggingInput> {
        serialize_for_tagging(&self.vocab, history, response, self.model.config().max_len)
    }

    pub fn predict_mask(&self, history: &[DialogueTurn], response: &[String]) -> Result<MaskDecision<T>> {
        let input = self.encode(history, response)?;
        let fwd = self.model.forward(&input.tokens, &input.types)?;
        Ok(MaskDecision {
            confidences: input.word_positions.iter().map(|&p| sigmoid(fwd.logits[[p, 0]])).collect(),
        })
    }

    /// Weighted tag targets for one sample.
    pub fn tag_targets(&self, input: &TaggingInput, mask: &TokenMaskVector) -> Vec<TagTarget<T>> {
        input
            .word_positions
            .iter()
            .zip(&mask.labels)
            .map(|(&position, &positive)| TagTarget {
                position,
                positive,
                weight: T::of(self.frequencies.weight(positive)),
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, seed: u64, step: usize) -> Result<()> {
        let mut extra = serde_json::Map::new();
        extra.insert("frequencies".into(), serde_json::to_value(self.frequencies)?);
        let manifest = Manifest {
            kind: KIND.into(),
            model: self.model.config().clone(),
            vocab_hash: self.vocab.hash(),
            seed,
            step,
            extra,
        };
        self.model.save(dir, &manifest)
    }

    pub fn load(dir: &Path, vocab: Vocab) -> Result<Self> {
        let (model, manifest) = SequenceModel::load(dir)?;
        manifest.expect(KIND, &vocab.hash())?;
        let frequencies = manifest
            .extra
            .get("frequencies")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| GmeError::Config("classifier manifest lacks class frequencies".into()))?;
        if model.config().head != HeadKind::Tagger || model.config().vocab_size != vocab.len() {
            return Err(GmeError::Config("checkpoint does not fit the classifier role".into()));
        }
        Ok(MaskClassifier { model, vocab, frequencies })
    }
}

/// Token-level precision, recall and F1 of thresholded predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TagScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn tag_scores<T: Scalar>(
    classifier: &MaskClassifier<T>,
    samples: &[DialogueSample],
    masks: &[TokenMaskVector],
    threshold: T,
) -> Result<TagScores> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (s, m) in samples.iter().zip(masks) {
        let d = classifier.predict_mask(&s.history, &s.response)?;
        for (&c, &gold) in d.confidences.iter().zip(&m.labels) {
            match (c > threshold, gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(TagScores { precision, recall, f1 })
}

/// Trains the classifier; validation selects by token F1 at threshold 0.5.
pub fn train_mask_classifier<T: Scalar>(
    samples: &[DialogueSample],
    targets: &MaskTargets,
    frequencies: ClassFrequencies,
    vocab: &Vocab,
    config: &MaskgenConfig,
    valid: (&[DialogueSample], &[TokenMaskVector]),
    resume_dir: Option<&Path>,
) -> Result<(MaskClassifier<T>, TrainReport)> {
    targets.expect_vocab(vocab, samples.len())?;
    let mut clf = MaskClassifier::<T>::new(vocab.clone(), frequencies, &config.model, config.train.seed)?;
    let encoded: Vec<Option<(TaggingInput, Vec<TagTarget<T>>)>> = samples
        .iter()
        .zip(&targets.masks)
        .map(|(s, m)| {
            clf.encode(&s.history, &s.response).ok().map(|i| {
                let t = clf.tag_targets(&i, m);
                (i, t)
            })
        })
        .collect();
    let skipped = encoded.iter().filter(|e| e.is_none()).count();
    if skipped > 0 {
        log::warn!("maskgen: skipped {skipped} over-long samples");
    }
    let mut example = |m: &SequenceModel<T>, idx: usize, _epoch: usize, grads: &mut [Array2<T>]| {
        let Some((input, tt)) = &encoded[idx] else {
            return Ok((T::zero(), 0));
        };
        let fwd = m.forward(&input.tokens, &input.types)?;
        let (loss, d) = weighted_binary_cross_entropy(&fwd.logits, tt);
        m.backward(&fwd, &d, grads);
        Ok((loss, tt.len()))
    };
    let shell = clf.clone();
    let half = T::of(0.5);
    let mut validate = |m: &SequenceModel<T>| {
        if valid.0.is_empty() {
            return Ok(0.0);
        }
        let c = MaskClassifier { model: m.clone(), ..shell.clone() };
        Ok(tag_scores(&c, valid.0, valid.1, half)?.f1)
    };
    let report = train(&mut clf.model, samples.len(), &config.train, KIND, &mut example, &mut validate, resume_dir)?;
    Ok((clf, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;

    fn vocab() -> Vocab {
        let all = words("i like apples . hello there how are you ? own a car");
        Vocab::build(all.iter())
    }

    fn dims() -> ModelDims {
        ModelDims { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_len: 32 }
    }

    #[test]
    fn frequencies_count_and_reject_degenerate_corpora() {
        let f = ClassFrequencies::new(10, 100).unwrap();
        assert!((f.f_positive - 0.1).abs() < 1e-15);
        assert!((f.weight(true) - 10.0).abs() < 1e-12);
        assert!((f.weight(false) - 1.0 / 0.9).abs() < 1e-12);
        assert!(ClassFrequencies::new(0, 10).is_err());
        assert!(ClassFrequencies::new(10, 10).is_err());
        let masks = [
            TokenMaskVector::from_labels(vec![true, false, false]),
            TokenMaskVector::from_labels(vec![false, true]),
        ];
        assert!((class_frequencies(&masks).unwrap().f_positive - 0.4).abs() < 1e-15);
    }

    #[test]
    fn tagging_input_has_no_persona_segment() {
        let v = vocab();
        let h = vec![
            DialogueTurn { speaker: Speaker::One, text: words("hello there .") },
            DialogueTurn { speaker: Speaker::Two, text: words("how are you ?") },
        ];
        let i = serialize_for_tagging(&v, &h, &words("i like xy ."), 64).unwrap();
        assert!(i.types.iter().all(|&t| (t as usize) < N_TYPES));
        assert_eq!(i.word_positions, vec![9, 10, 11, 13]);
        assert_eq!(i.tokens.len(), 15);
        let short = serialize_for_tagging(&v, &h, &words("i like xy ."), 12).unwrap();
        assert_eq!(short.tokens.len(), 11);
        assert!(short.types.iter().all(|&t| t != SPEAKER_ONE_TYPE));
        assert!(matches!(serialize_for_tagging(&v, &[], &words("i like xy ."), 4), Err(GmeError::Length { .. })));
    }

    #[test]
    fn untrained_classifier_is_uniform_and_deterministic() {
        let f = ClassFrequencies::new(1, 4).unwrap();
        let c = MaskClassifier::<f64>::new(vocab(), f, &dims(), 9).unwrap();
        let r = words("i like apples .");
        let d = c.predict_mask(&[], &r).unwrap();
        assert_eq!(d.confidences.len(), r.len());
        assert!(d.confidences.iter().all(|&p| (p - 0.5).abs() < 0.1));
        assert_eq!(d, c.predict_mask(&[], &r).unwrap());
        let v = d.to_mask_vector(0.5);
        assert_eq!(v.confidences.unwrap().len(), 4);
    }

    #[test]
    fn balanced_weights_are_a_constant_factor() {
        let f = ClassFrequencies::new(5, 10).unwrap();
        let c = MaskClassifier::<f64>::new(vocab(), f, &dims(), 4).unwrap();
        let r = words("i like apples . own a car");
        let input = c.encode(&[], &r).unwrap();
        let m = TokenMaskVector::from_labels(vec![false, true, true, false, true, false, true]);
        let weighted = c.tag_targets(&input, &m);
        let unweighted: Vec<_> = weighted.iter().map(|t| TagTarget { weight: 1.0, ..*t }).collect();
        let mut model = c.model().clone();
        // Perturb the zero head so the logits differ across positions.
        let n = model.params().len();
        model.params_mut()[n - 2].iter_mut().enumerate().for_each(|(i, w)| *w = 0.3 * (i as f64).sin());
        let fwd = model.forward(&input.tokens, &input.types).unwrap();
        let (lw, _) = weighted_binary_cross_entropy(&fwd.logits, &weighted);
        let (lu, _) = weighted_binary_cross_entropy(&fwd.logits, &unweighted);
        assert!((lw - 2.0 * lu).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_carries_frequencies() {
        let dir = tempfile::tempdir().unwrap();
        let f = ClassFrequencies::new(3, 7).unwrap();
        let c = MaskClassifier::<f32>::new(vocab(), f, &dims(), 1).unwrap();
        c.save(dir.path(), 1, 0).unwrap();
        let d = MaskClassifier::<f32>::load(dir.path(), vocab()).unwrap();
        assert_eq!(d.frequencies(), f);
        assert_eq!(d.model().params(), c.model().params());
    }
}
