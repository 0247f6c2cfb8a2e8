//! Response templates: span masks derived from saliency, lemma overlap and
//! stopwords, sentence deletion for training, and classifier-driven masking
//! for inference.

mod lexical;

pub use lexical::{Lemmatizer, RuleLemmatizer, Stoplist};

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DialogueTurn;
use crate::text::{self, Words};
use crate::vocab::MASK_SPAN_TOKEN;
use crate::{GmeError, Result, Scalar};

/// Masking threshold used for in-distribution editing.
pub const EPSILON_MAIN: f64 = 0.5;
/// Masking threshold used when transferring to other response distributions.
pub const EPSILON_TRANSFER: f64 = 0.75;

/// Per-word mask labels, optionally with the classifier confidences that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenMaskVector {
    pub labels: Vec<bool>,
    pub confidences: Option<Vec<f64>>,
}

impl TokenMaskVector {
    pub fn from_labels(labels: Vec<bool>) -> Self {
        TokenMaskVector { labels, confidences: None }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Literal(Words),
    Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub segments: Vec<Segment>,
    pub source_length: usize,
    pub deleted_sentence_indices: Vec<usize>,
}

impl Template {
    /// Builds a template from the words that survive deletion and their mask
    /// labels. Masked runs collapse to one placeholder, literal runs to one segment.
    pub fn from_labeled<'a>(
        words: impl IntoIterator<Item = (&'a String, bool)>,
        source_length: usize,
        deleted_sentence_indices: Vec<usize>,
    ) -> Self {
        let mut segments = Vec::new();
        for (w, masked) in words {
            match (masked, segments.last_mut()) {
                (true, Some(Segment::Mask)) => {}
                (true, _) => segments.push(Segment::Mask),
                (false, Some(Segment::Literal(run))) => run.push(w.clone()),
                (false, _) => segments.push(Segment::Literal(vec![w.clone()])),
            }
        }
        Template { segments, source_length, deleted_sentence_indices }
    }

    /// The unmasked response itself.
    pub fn verbatim(response: &[String]) -> Self {
        Self::from_labeled(response.iter().map(|w| (w, false)), response.len(), Vec::new())
    }

    /// Template words with each mask rendered as the reserved placeholder token.
    pub fn words(&self) -> Words {
        let mut out = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Literal(ws) => out.extend(ws.iter().cloned()),
                Segment::Mask => out.push(MASK_SPAN_TOKEN.to_string()),
            }
        }
        out
    }

    pub fn render(&self) -> String {
        text::join(&self.words())
    }

    pub fn literal_words(&self) -> Words {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(ws) => Some(ws.iter().cloned()),
                Segment::Mask => None,
            })
            .flatten()
            .collect()
    }

    pub fn mask_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Mask)).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateSamplerConfig {
    /// Saliency threshold for the gradient set.
    pub delta: f64,
    /// Sentence-deletion temperature.
    pub tau: f64,
    pub noise_rate: f64,
    pub rng_seed: u64,
}

impl Default for TemplateSamplerConfig {
    fn default() -> Self {
        TemplateSamplerConfig { delta: 3.0, tau: 1.0, noise_rate: 0.15, rng_seed: 0 }
    }
}

impl TemplateSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GmeError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(GmeError::Config(format!("noise_rate must lie in [0, 1), got {}", self.noise_rate)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(GmeError::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Indices of response words whose lemma matches the lemma of some persona word.
pub fn overlap_set(response: &[String], persona: &[Words], lemmatizer: &impl Lemmatizer) -> BTreeSet<usize> {
    let lemmas: HashSet<String> = persona.iter().flatten().map(|w| lemmatizer.lemma(w)).collect();
    response
        .iter()
        .enumerate()
        .filter(|(_, w)| lemmas.contains(&lemmatizer.lemma(w)))
        .map(|(i, _)| i)
        .collect()
}

pub fn stopword_set(response: &[String], stoplist: &Stoplist) -> BTreeSet<usize> {
    response
        .iter()
        .enumerate()
        .filter(|(_, w)| stoplist.contains(w))
        .map(|(i, _)| i)
        .collect()
}

/// `m_i = 1` iff `i` is in `gradient ∪ overlap` and not in `stopwords`.
pub fn target_mask_vector(
    len: usize,
    gradient: &BTreeSet<usize>,
    overlap: &BTreeSet<usize>,
    stopwords: &BTreeSet<usize>,
) -> Result<TokenMaskVector> {
    for (name, set) in [("gradient", gradient), ("overlap", overlap), ("stopword", stopwords)] {
        if let Some(&i) = set.iter().next_back().filter(|&&i| i >= len) {
            return Err(GmeError::Precondition(format!(
                "{name} index {i} out of range for a response of {len} words"
            )));
        }
    }
    let mut labels = vec![false; len];
    for &i in gradient.union(overlap) {
        labels[i] = !stopwords.contains(&i);
    }
    Ok(TokenMaskVector::from_labels(labels))
}

/// Maximal runs of set labels as sorted half-open spans.
pub fn merge_spans(labels: &[bool]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &m) in labels.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, labels.len()));
    }
    spans
}

/// `P(n) ∝ exp(-n / tau)` for `n` in `0..l`.
pub fn keep_count_distribution(l: usize, tau: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..l).map(|n| (-(n as f64) / tau).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn sample_keep_count<R: Rng + ?Sized>(l: usize, tau: f64, rng: &mut R) -> usize {
    let p = keep_count_distribution(l, tau);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (n, pn) in p.iter().enumerate() {
        acc += pn;
        if u < acc {
            return n;
        }
    }
    l.saturating_sub(1)
}

/// Draws a training template: persona-related sentences (those holding a
/// masked word) are partly deleted, survivors get extra Bernoulli noise
/// masks, and consecutive masks merge.
pub fn sample_training_template<R: Rng + ?Sized>(
    response: &[String],
    mask: &TokenMaskVector,
    config: &TemplateSamplerConfig,
    rng: &mut R,
) -> Result<Template> {
    config.validate()?;
    if mask.len() != response.len() {
        return Err(GmeError::Precondition(format!(
            "mask has {} labels for a response of {} words",
            mask.len(),
            response.len()
        )));
    }
    let sents = text::sentences(response);
    let related: Vec<usize> = sents
        .iter()
        .enumerate()
        .filter(|(_, r)| mask.labels[(*r).clone()].iter().any(|&m| m))
        .map(|(k, _)| k)
        .collect();
    let l = related.len();
    let mut deleted = Vec::new();
    let mut kept_related = Vec::new();
    if l > 0 {
        let n = sample_keep_count(l, config.tau, rng);
        let keep: HashSet<usize> = sample(rng, l, n).into_iter().collect();
        for (j, &k) in related.iter().enumerate() {
            if keep.contains(&j) {
                kept_related.push(k);
            } else {
                deleted.push(k);
            }
        }
    }
    let mut labels = mask.labels.clone();
    for &k in &kept_related {
        for i in sents[k].clone() {
            if rng.gen::<f64>() < config.noise_rate {
                labels[i] = true;
            }
        }
    }
    let dropped: HashSet<usize> = deleted.iter().flat_map(|&k| sents[k].clone()).collect();
    let kept = response
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, (w, m))| (w, m));
    Ok(Template::from_labeled(kept, response.len(), deleted))
}

/// The inference masking rule: confident words that appear neither in the
/// editing persona nor in the history.
pub fn inference_mask<T: Scalar>(
    original_response: &[String],
    confidences: &[T],
    editing_persona: &[Words],
    history: &[DialogueTurn],
    epsilon: T,
) -> Result<Vec<bool>> {
    if confidences.len() != original_response.len() {
        return Err(GmeError::Precondition(format!(
            "{} confidences for a response of {} words",
            confidences.len(),
            original_response.len()
        )));
    }
    let seen: HashSet<&str> = editing_persona
        .iter()
        .flatten()
        .chain(history.iter().flat_map(|t| t.text.iter()))
        .map(String::as_str)
        .collect();
    Ok(original_response
        .iter()
        .zip(confidences)
        .map(|(w, &c)| c > epsilon && !seen.contains(w.as_str()))
        .collect())
}

pub fn build_inference_template<T: Scalar>(
    original_response: &[String],
    confidences: &[T],
    editing_persona: &[Words],
    history: &[DialogueTurn],
    epsilon: T,
) -> Result<Template> {
    let labels = inference_mask(original_response, confidences, editing_persona, history, epsilon)?;
    Ok(Template::from_labeled(
        original_response.iter().zip(labels),
        original_response.len(),
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests;
