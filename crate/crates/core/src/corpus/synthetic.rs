//! Closed slot-grammar corpus for desk-scale training and testing.
//!
//! Persona sentences take the forms "i like/hate X", "i own a X" and
//! "i work as a X" over 52 slot values. Responses realize zero to two persona
//! sentences among persona-agnostic filler sentences; a training persona
//! holds the sentences its response realizes. Half of the likeable
//! items have one predicate held out: those sentences form the editing-persona
//! space and are filtered out of training by the leakage filter.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    responder, select_editing_personas, write_edit_cases, write_training_corpus, DialogueSample,
    DialogueTurn, EditCase, Speaker,
};
use crate::error::{GmeError, Result};
use crate::nli::{OracleLexicon, Predicate, RuleOracle, SlotCategory, SlotStatement};
use crate::text::{words, Words};

pub const ITEMS: [&str; 24] = [
    "apples", "pizza", "hiking", "jazz", "soccer", "chess", "coffee", "tea", "sushi", "reading",
    "swimming", "dancing", "painting", "cooking", "camping", "gardening", "pasta", "chocolate",
    "movies", "baseball", "skiing", "yoga", "karaoke", "poetry",
];
pub const POSSESSIONS: [&str; 14] = [
    "dog", "cat", "car", "truck", "boat", "bike", "house", "horse", "piano", "guitar", "farm",
    "parrot", "laptop", "camera",
];
pub const JOBS: [&str; 14] = [
    "nurse", "teacher", "doctor", "chef", "pilot", "farmer", "lawyer", "dentist", "plumber",
    "writer", "engineer", "baker", "mechanic", "librarian",
];

const RESPONSE_FILLERS: [&str; 20] = [
    "that sounds fun .",
    "the weather is nice today .",
    "i just got home from school .",
    "what about you ?",
    "i am doing well .",
    "that is cool .",
    "i see .",
    "tell me more about yourself .",
    "it has been a long day .",
    "i am so tired today .",
    "that is great to hear .",
    "nice to meet you .",
    "hello there !",
    "i went to the park yesterday .",
    "my family is visiting soon .",
    "how was your weekend ?",
    "i think so too .",
    "we should hang out sometime .",
    "that must be hard .",
    "good for you !",
];

const PARTNER_FILLERS: [&str; 12] = [
    "hi , how are you ?",
    "what do you do for fun ?",
    "do you have any hobbies ?",
    "what do you do for a living ?",
    "do you have any pets ?",
    "how is your day going ?",
    "i just finished my homework .",
    "where are you from ?",
    "i am watching the news .",
    "tell me about your family .",
    "that is interesting .",
    "what are you up to ?",
];

fn forms(p: Predicate) -> &'static [&'static str] {
    match p {
        Predicate::Like => &["i like X .", "i really like X .", "i love X ."],
        Predicate::Hate => &["i hate X .", "i can not stand X .", "i really hate X ."],
        Predicate::Own => &["i own a X .", "i have a X ."],
        Predicate::WorkAs => &["i work as a X .", "i am a X ."],
    }
}

fn fill(form: &str, value: &str) -> Words {
    words(&form.replace('X', value))
}

/// Canonical persona sentence of a statement.
pub fn persona_sentence(s: &SlotStatement) -> Words {
    fill(forms(s.predicate)[0], &s.value)
}

/// Surface realization `form` (wrapping) of a statement.
pub fn realize(s: &SlotStatement, form: usize) -> Words {
    let f = forms(s.predicate);
    fill(f[form % f.len()], &s.value)
}

pub fn lexicon() -> OracleLexicon {
    let cat = |name: &str, predicates: Vec<Predicate>, exclusive, values: &[&str]| SlotCategory {
        name: name.into(),
        predicates,
        exclusive,
        values: values.iter().map(|v| v.to_string()).collect(),
    };
    let cues: BTreeMap<String, Predicate> = [
        ("like", Predicate::Like),
        ("love", Predicate::Like),
        ("hate", Predicate::Hate),
        ("stand", Predicate::Hate),
        ("own", Predicate::Own),
        ("have", Predicate::Own),
        ("work", Predicate::WorkAs),
        ("am", Predicate::WorkAs),
    ]
    .into_iter()
    .map(|(w, p)| (w.to_string(), p))
    .collect();
    OracleLexicon {
        categories: vec![
            cat("item", vec![Predicate::Like, Predicate::Hate], false, &ITEMS),
            cat("possession", vec![Predicate::Own], false, &POSSESSIONS),
            cat("job", vec![Predicate::WorkAs], true, &JOBS),
        ],
        cues,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    /// Unfiltered training samples.
    pub train: Vec<DialogueSample>,
    pub valid: Vec<DialogueSample>,
    pub valid_cases: Vec<EditCase>,
    pub test_cases: Vec<EditCase>,
    pub lexicon: OracleLexicon,
    /// Held-out persona sentences that editing personas are drawn from.
    pub held_out: Vec<Words>,
}

#[derive(Clone, Debug)]
pub struct SyntheticFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub valid_cases: PathBuf,
    pub test_cases: PathBuf,
    pub lexicon: PathBuf,
}

impl SyntheticFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SyntheticFiles {
            train: dir.join("train.jsonl"),
            valid: dir.join("valid.jsonl"),
            valid_cases: dir.join("valid_cases.jsonl"),
            test_cases: dir.join("test_cases.jsonl"),
            lexicon: dir.join("lexicon.json"),
        }
    }
}

impl SyntheticCorpus {
    pub fn write(&self, dir: &Path) -> Result<SyntheticFiles> {
        let files = SyntheticFiles::in_dir(dir);
        write_training_corpus(&files.train, &self.train)?;
        write_training_corpus(&files.valid, &self.valid)?;
        write_edit_cases(&files.valid_cases, &self.valid_cases)?;
        write_edit_cases(&files.test_cases, &self.test_cases)?;
        let lex = serde_json::to_string_pretty(&self.lexicon)?;
        std::fs::write(&files.lexicon, lex).map_err(|e| GmeError::io(&files.lexicon, e))?;
        Ok(files)
    }
}

struct Generator {
    rng: ChaCha8Rng,
    oracle: RuleOracle,
    held_out: Vec<SlotStatement>,
}

fn all_values() -> Vec<(&'static str, usize)> {
    ITEMS
        .iter()
        .map(|v| (*v, 0))
        .chain(POSSESSIONS.iter().map(|v| (*v, 1)))
        .chain(JOBS.iter().map(|v| (*v, 2)))
        .collect()
}

impl Generator {
    fn statement(&mut self, taken: &[SlotStatement]) -> SlotStatement {
        let values = all_values();
        loop {
            let (value, cat) = values[self.rng.gen_range(0..values.len())];
            let predicate = match cat {
                0 if self.rng.gen_bool(0.5) => Predicate::Like,
                0 => Predicate::Hate,
                1 => Predicate::Own,
                _ => Predicate::WorkAs,
            };
            let clash = taken.iter().any(|t| {
                t.value == value || (predicate == Predicate::WorkAs && t.predicate == Predicate::WorkAs)
            });
            if !clash {
                return SlotStatement {
                    predicate,
                    value: value.to_string(),
                };
            }
        }
    }

    fn with_predicate(&mut self, value: &str) -> SlotStatement {
        let predicate = if ITEMS.contains(&value) {
            if self.rng.gen_bool(0.5) {
                Predicate::Like
            } else {
                Predicate::Hate
            }
        } else if POSSESSIONS.contains(&value) {
            Predicate::Own
        } else {
            Predicate::WorkAs
        };
        SlotStatement {
            predicate,
            value: value.to_string(),
        }
    }

    /// `size` distinct statements with at most one job, sampled so that every
    /// slot value has the same marginal frequency: the persona holds a job
    /// with probability size * |jobs| / |values|, the rest are distinct
    /// non-job values.
    fn persona(&mut self, size: usize) -> Vec<SlotStatement> {
        let n_values = ITEMS.len() + POSSESSIONS.len() + JOBS.len();
        let p_job = (size * JOBS.len()) as f64 / n_values as f64;
        let mut values: Vec<&str> = ITEMS.iter().chain(POSSESSIONS.iter()).copied().collect();
        values.shuffle(&mut self.rng);
        let mut chosen: Vec<&str> = Vec::with_capacity(size);
        if self.rng.gen_bool(p_job) {
            chosen.push(JOBS[self.rng.gen_range(0..JOBS.len())]);
        }
        chosen.extend(values.into_iter().take(size - chosen.len()));
        chosen.shuffle(&mut self.rng);
        chosen.into_iter().map(|v| self.with_predicate(v)).collect()
    }

    fn realize(&mut self, s: &SlotStatement) -> Words {
        let n = forms(s.predicate).len();
        let form = self.rng.gen_range(0..n);
        realize(s, form)
    }

    fn pick<'a>(&mut self, options: &[&'a str]) -> &'a str {
        options[self.rng.gen_range(0..options.len())]
    }

    fn history(&mut self, persona: &[SlotStatement], me: Speaker) -> Vec<DialogueTurn> {
        let n = self.rng.gen_range(1..=3);
        let mut speaker = me.other();
        let mut turns = Vec::with_capacity(n);
        for _ in 0..n {
            let text = if speaker == me {
                if !persona.is_empty() && self.rng.gen_bool(0.2) {
                    let s = persona[self.rng.gen_range(0..persona.len())].clone();
                    self.realize(&s)
                } else {
                    words(self.pick(&RESPONSE_FILLERS))
                }
            } else if self.rng.gen_bool(0.3) {
                let s = self.statement(&[]);
                self.realize(&s)
            } else {
                words(self.pick(&PARTNER_FILLERS))
            };
            turns.push(DialogueTurn { speaker, text });
            speaker = speaker.other();
        }
        turns.reverse();
        debug_assert_eq!(responder(&turns), me);
        turns
    }

    fn response(&mut self, realized: &[SlotStatement], fillers: usize) -> Words {
        let mut sentences: Vec<Words> = realized.iter().map(|s| self.realize(s)).collect();
        let mut pool: Vec<&str> = RESPONSE_FILLERS.to_vec();
        pool.shuffle(&mut self.rng);
        sentences.extend(pool.into_iter().take(fillers).map(words));
        sentences.shuffle(&mut self.rng);
        sentences.concat()
    }

    fn speaker(&mut self) -> Speaker {
        if self.rng.gen_bool(0.5) {
            Speaker::One
        } else {
            Speaker::Two
        }
    }

    /// A training sample whose persona holds every realized statement (or the
    /// first profile statement when none is realized) plus each remaining
    /// statement with probability 0.15.
    fn sample(&mut self) -> DialogueSample {
        let size = self.rng.gen_range(1..=3);
        let profile = self.persona(size);
        let k = match self.rng.gen_range(0..20) {
            0..=2 => 0,
            3..=14 => 1,
            _ => 2,
        }
        .min(size);
        let fillers = if k == 0 {
            self.rng.gen_range(1..=2)
        } else {
            self.rng.gen_range(0..=2)
        };
        let response = self.response(&profile[..k], fillers);
        let me = self.speaker();
        let history = self.history(&profile, me);
        let mut persona = profile[..k.max(1)].to_vec();
        for s in &profile[k.max(1)..] {
            if self.rng.gen_bool(0.15) {
                persona.push(s.clone());
            }
        }
        persona.shuffle(&mut self.rng);
        DialogueSample {
            history,
            response,
            persona: persona.iter().map(persona_sentence).collect(),
        }
    }

    fn edit_case(&mut self, id: String) -> Result<Option<EditCase>> {
        let target = self.held_out[self.rng.gen_range(0..self.held_out.len())].clone();
        let original = SlotStatement {
            predicate: target.predicate.opposite().expect("held-out sentences are like/hate"),
            value: target.value.clone(),
        };
        let mut persona = vec![original];
        if self.rng.gen_bool(0.4) {
            let s = self.statement(&persona);
            persona.push(s);
        }
        let fillers = self.rng.gen_range(0..=2);
        let response = self.response(&persona, fillers);
        let me = self.speaker();
        let history = self.history(&persona, me);

        let size = if self.rng.gen_bool(0.92) { 1 } else { 2 };
        let pool: Vec<Vec<Words>> = if size == 1 {
            self.held_out.iter().map(|s| vec![persona_sentence(s)]).collect()
        } else {
            let h = &self.held_out;
            (0..h.len())
                .flat_map(|i| (i + 1..h.len()).map(move |j| (i, j)))
                .map(|(i, j)| vec![persona_sentence(&h[i]), persona_sentence(&h[j])])
                .collect()
        };
        let selected =
            select_editing_personas(&[(history, response)], &pool, &self.oracle)?.pop();
        Ok(selected.map(|mut case| {
            case.references = self.references(&case);
            case.id = Some(id);
            case
        }))
    }

    /// Three reference edits: each contradicted sentence rewritten in one of
    /// the surface forms of the editing statement; with a two-sentence
    /// persona the third reference also inserts the unrealized sentence.
    fn references(&self, case: &EditCase) -> Vec<Words> {
        let lex = self.oracle.lexicon();
        let targets: Vec<SlotStatement> = case
            .editing_persona
            .iter()
            .filter_map(|s| lex.statements(s).into_iter().next())
            .collect();
        let sentences: Vec<Words> = crate::text::sentences(&case.original_response)
            .into_iter()
            .map(|r| case.original_response[r].to_vec())
            .collect();
        let rewrite = |form: usize| -> Words {
            sentences
                .iter()
                .map(|sent| {
                    let stmts = lex.statements(sent);
                    targets
                        .iter()
                        .find(|t| {
                            stmts.iter().any(|s| {
                                s.value == t.value && Some(s.predicate) == t.predicate.opposite()
                            })
                        })
                        .map(|t| realize(t, form))
                        .unwrap_or_else(|| sent.clone())
                })
                .collect::<Vec<_>>()
                .concat()
        };
        let mut refs = vec![rewrite(0), rewrite(1)];
        let unrealized = targets.iter().find(|t| {
            self.oracle.label(&case.original_response, &persona_sentence(t))
                == crate::nli::NliLabel::Neutral
        });
        match unrealized {
            Some(t) if targets.len() == 2 => {
                let mut r = rewrite(0);
                r.extend(realize(t, 0));
                refs.push(r);
            }
            _ => refs.push(rewrite(2)),
        }
        refs
    }

    fn edit_cases(&mut self, split: &str, n: usize) -> Result<Vec<EditCase>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let id = format!("{split}-{:05}", out.len());
            if let Some(case) = self.edit_case(id)? {
                out.push(case);
            }
        }
        Ok(out)
    }
}

/// Generates the full synthetic corpus; output is a pure function of
/// `grammar_seed` and `sizes`.
pub fn generate_synthetic_corpus(grammar_seed: u64, sizes: SyntheticSizes) -> Result<SyntheticCorpus> {
    if sizes.train == 0 || sizes.valid == 0 || sizes.test == 0 {
        return Err(GmeError::Precondition("synthetic split sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(grammar_seed);
    let mut items: Vec<&str> = ITEMS.to_vec();
    items.shuffle(&mut rng);
    let held_out: Vec<SlotStatement> = items[..ITEMS.len() / 2]
        .iter()
        .map(|v| SlotStatement {
            predicate: if rng.gen_bool(0.5) {
                Predicate::Like
            } else {
                Predicate::Hate
            },
            value: v.to_string(),
        })
        .collect();
    let lexicon = lexicon();
    let mut g = Generator {
        rng,
        oracle: RuleOracle::new(lexicon.clone()),
        held_out,
    };
    let train = (0..sizes.train).map(|_| g.sample()).collect();
    let valid = (0..sizes.valid).map(|_| g.sample()).collect();
    let valid_cases = g.edit_cases("valid", sizes.valid)?;
    let test_cases = g.edit_cases("test", sizes.test)?;
    Ok(SyntheticCorpus {
        train,
        valid,
        valid_cases,
        test_cases,
        held_out: g.held_out.iter().map(persona_sentence).collect(),
        lexicon,
    })
}
