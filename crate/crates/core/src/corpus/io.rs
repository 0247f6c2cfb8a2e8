use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DialogueSample, DialogueTurn, EditCase, Speaker};
use crate::error::{GmeError, Result};
use crate::text::{self, Words};

/// Loading aborts when more than this fraction of lines is malformed.
pub const MALFORMED_RATE_CAP: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct TrainingRecord {
    history: Vec<TurnRecord>,
    response: String,
    persona: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EditCaseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    history: Vec<TurnRecord>,
    original_response: String,
    editing_persona: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    references: Option<Vec<String>>,
}

fn nonempty_words(field: &str, raw: &str) -> std::result::Result<Words, String> {
    let w = text::words(raw);
    if w.is_empty() {
        Err(format!("field {field:?} is empty"))
    } else {
        Ok(w)
    }
}

fn history_from(records: Vec<TurnRecord>) -> std::result::Result<Vec<DialogueTurn>, String> {
    let turns = records
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(DialogueTurn {
                speaker: t.speaker,
                text: nonempty_words(&format!("history[{i}].text"), &t.text)?,
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    if turns.windows(2).any(|w| w[0].speaker == w[1].speaker) {
        return Err("history speakers do not alternate".into());
    }
    Ok(turns)
}

fn history_to(history: &[DialogueTurn]) -> Vec<TurnRecord> {
    history
        .iter()
        .map(|t| TurnRecord {
            speaker: t.speaker,
            text: text::join(&t.text),
        })
        .collect()
}

impl TryFrom<TrainingRecord> for DialogueSample {
    type Error = String;

    fn try_from(r: TrainingRecord) -> std::result::Result<Self, String> {
        Ok(DialogueSample {
            history: history_from(r.history)?,
            response: nonempty_words("response", &r.response)?,
            persona: r
                .persona
                .iter()
                .enumerate()
                .map(|(i, p)| nonempty_words(&format!("persona[{i}]"), p))
                .collect::<std::result::Result<_, _>>()?,
        })
    }
}

impl TryFrom<EditCaseRecord> for EditCase {
    type Error = String;

    fn try_from(r: EditCaseRecord) -> std::result::Result<Self, String> {
        if !(1..=2).contains(&r.editing_persona.len()) {
            return Err(format!(
                "editing_persona has {} sentences, expected 1 or 2",
                r.editing_persona.len()
            ));
        }
        Ok(EditCase {
            id: r.id,
            history: history_from(r.history)?,
            original_response: nonempty_words("original_response", &r.original_response)?,
            editing_persona: r
                .editing_persona
                .iter()
                .enumerate()
                .map(|(i, p)| nonempty_words(&format!("editing_persona[{i}]"), p))
                .collect::<std::result::Result<_, _>>()?,
            references: r
                .references
                .unwrap_or_default()
                .iter()
                .enumerate()
                .map(|(i, p)| nonempty_words(&format!("references[{i}]"), p))
                .collect::<std::result::Result<_, _>>()?,
        })
    }
}

/// Streaming reader over a line-delimited record file. Blank lines are
/// skipped; each other line yields a value or a numbered error.
pub struct JsonlReader<R, Rec, T> {
    lines: Lines<R>,
    line_no: usize,
    _marker: PhantomData<(Rec, T)>,
}

impl<R: BufRead, Rec: DeserializeOwned, T: TryFrom<Rec, Error = String>> Iterator
    for JsonlReader<R, Rec, T>
{
    type Item = std::result::Result<T, LineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line_no = self.line_no;
            let err = |message: String| LineError {
                line: line_no,
                message,
            };
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(err(e.to_string()))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str::<Rec>(&line)
                    .map_err(|e| err(e.to_string()))
                    .and_then(|rec| T::try_from(rec).map_err(err)),
            );
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| GmeError::io(path, e))
}

/// Streams training samples in file order.
pub fn read_training_records(
    path: &Path,
) -> Result<impl Iterator<Item = std::result::Result<DialogueSample, LineError>>> {
    Ok(JsonlReader::<_, TrainingRecord, DialogueSample> {
        lines: open(path)?.lines(),
        line_no: 0,
        _marker: PhantomData,
    })
}

pub fn read_edit_cases(
    path: &Path,
) -> Result<impl Iterator<Item = std::result::Result<EditCase, LineError>>> {
    Ok(JsonlReader::<_, EditCaseRecord, EditCase> {
        lines: open(path)?.lines(),
        line_no: 0,
        _marker: PhantomData,
    })
}

fn collect_capped<T>(
    path: &Path,
    iter: impl Iterator<Item = std::result::Result<T, LineError>>,
) -> Result<Vec<T>> {
    let mut items = Vec::new();
    let mut bad: Vec<LineError> = Vec::new();
    for r in iter {
        match r {
            Ok(x) => items.push(x),
            Err(e) => {
                log::warn!("{}:{}: {}", path.display(), e.line, e.message);
                bad.push(e);
            }
        }
    }
    let total = items.len() + bad.len();
    if !bad.is_empty() && bad.len() as f64 > MALFORMED_RATE_CAP * total as f64 {
        let first = &bad[0];
        return Err(GmeError::MalformedCorpus {
            path: PathBuf::from(path),
            malformed: bad.len(),
            total,
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    Ok(items)
}

/// Loads a training corpus, skipping malformed lines as long as they stay
/// at or below [`MALFORMED_RATE_CAP`].
pub fn load_training_corpus(path: &Path) -> Result<Vec<DialogueSample>> {
    collect_capped(path, read_training_records(path)?)
}

pub fn load_edit_cases(path: &Path) -> Result<Vec<EditCase>> {
    collect_capped(path, read_edit_cases(path)?)
}

fn write_lines<S: Serialize>(path: &Path, records: impl Iterator<Item = S>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| GmeError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| GmeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| GmeError::io(path, e))?;
    }
    w.flush().map_err(|e| GmeError::io(path, e))
}

pub fn write_training_corpus(path: &Path, samples: &[DialogueSample]) -> Result<()> {
    write_lines(
        path,
        samples.iter().map(|s| TrainingRecord {
            history: history_to(&s.history),
            response: text::join(&s.response),
            persona: s.persona.iter().map(|p| text::join(p)).collect(),
        }),
    )
}

pub fn write_edit_cases(path: &Path, cases: &[EditCase]) -> Result<()> {
    write_lines(
        path,
        cases.iter().map(|c| EditCaseRecord {
            id: c.id.clone(),
            history: history_to(&c.history),
            original_response: text::join(&c.original_response),
            editing_persona: c.editing_persona.iter().map(|p| text::join(p)).collect(),
            references: (!c.references.is_empty())
                .then(|| c.references.iter().map(|r| text::join(r)).collect()),
        }),
    )
}
