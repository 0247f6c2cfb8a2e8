//! Dialogue data model, line-delimited corpus IO, dataset-construction
//! heuristics and the synthetic slot-grammar generator.

mod io;
mod leakage;
mod selection;
pub mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::text::Words;

pub use io::{
    load_edit_cases, load_training_corpus, read_edit_cases, read_training_records, write_edit_cases,
    write_training_corpus, JsonlReader, LineError, MALFORMED_RATE_CAP,
};
pub use leakage::{editing_persona_set, filter_persona_leakage, LeakageOutcome};
pub use selection::{qualifies, select_editing_personas, selection_key};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSizes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "s1")]
    One,
    #[serde(rename = "s2")]
    Two,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::One => Speaker::Two,
            Speaker::Two => Speaker::One,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: Words,
}

/// The speaker who produces the response following `history`.
pub fn responder(history: &[DialogueTurn]) -> Speaker {
    history
        .last()
        .map(|t| t.speaker.other())
        .unwrap_or(Speaker::One)
}

/// A (history, response, persona) training triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueSample {
    pub history: Vec<DialogueTurn>,
    pub response: Words,
    pub persona: Vec<Words>,
}

/// An inference-time editing request with optional reference edits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditCase {
    pub id: Option<String>,
    pub history: Vec<DialogueTurn>,
    pub original_response: Words,
    pub editing_persona: Vec<Words>,
    pub references: Vec<Words>,
}

impl EditCase {
    pub fn label(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| format!("#{index}"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sample_count: usize,
    /// Number of persona sentences -> number of samples.
    pub persona_sentence_histogram: BTreeMap<usize, usize>,
}

impl CorpusStats {
    pub fn of_samples(samples: &[DialogueSample]) -> Self {
        Self::from_counts(samples.iter().map(|s| s.persona.len()))
    }

    pub fn of_cases(cases: &[EditCase]) -> Self {
        Self::from_counts(cases.iter().map(|c| c.editing_persona.len()))
    }

    fn from_counts(counts: impl Iterator<Item = usize>) -> Self {
        let mut stats = CorpusStats::default();
        for n in counts {
            stats.sample_count += 1;
            *stats.persona_sentence_histogram.entry(n).or_default() += 1;
        }
        stats
    }
}
