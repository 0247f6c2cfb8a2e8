//! Natural-language-inference backends: the rule oracle for the synthetic
//! slot grammar, and a process-boundary plugin for trained classifiers.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{GmeError, Result};
use crate::scalar::Scalar;
use crate::text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "entailment" => Some(NliLabel::Entailment),
            "neutral" => Some(NliLabel::Neutral),
            "contradiction" => Some(NliLabel::Contradiction),
            _ => None,
        }
    }
}

/// Consistency score of one label: entailment +0.5, neutral 0, contradiction -0.5.
pub fn map_label<T: Scalar>(label: NliLabel) -> T {
    match label {
        NliLabel::Entailment => T::of(0.5),
        NliLabel::Neutral => T::zero(),
        NliLabel::Contradiction => T::of(-0.5),
    }
}

/// Classifies a (premise, hypothesis) pair. Implementations must be callable
/// from several threads at once.
pub trait NliBackend: Send + Sync {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliLabel>;

    fn classify_batch(&self, pairs: &[(Vec<String>, Vec<String>)]) -> Result<Vec<NliLabel>> {
        pairs.iter().map(|(p, h)| self.classify(p, h)).collect()
    }
}

fn check_nonempty(premise: &[String], hypothesis: &[String]) -> Result<()> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(GmeError::Precondition(
            "nli premise and hypothesis must be non-empty".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Like,
    Hate,
    Own,
    WorkAs,
}

impl Predicate {
    pub fn opposite(self) -> Option<Predicate> {
        match self {
            Predicate::Like => Some(Predicate::Hate),
            Predicate::Hate => Some(Predicate::Like),
            _ => None,
        }
    }
}

/// One closed class of slot values and the predicates that may govern it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotCategory {
    pub name: String,
    pub predicates: Vec<Predicate>,
    /// A speaker holds at most one value of an exclusive category.
    pub exclusive: bool,
    pub values: Vec<String>,
}

/// Closed lexicon of the synthetic grammar. It makes the rule oracle exact on
/// that language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleLexicon {
    pub categories: Vec<SlotCategory>,
    /// Cue word -> predicate it expresses.
    pub cues: BTreeMap<String, Predicate>,
}

/// A (predicate, value) statement found in a word sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotStatement {
    pub predicate: Predicate,
    pub value: String,
}

impl OracleLexicon {
    pub fn category_of(&self, value: &str) -> Option<&SlotCategory> {
        self.categories
            .iter()
            .find(|c| c.values.iter().any(|v| v == value))
    }

    /// Every slot statement realized in `words`: a slot value governed by the
    /// nearest preceding cue in its sentence whose predicate fits the value's
    /// category.
    pub fn statements(&self, words: &[String]) -> Vec<SlotStatement> {
        let mut out = Vec::new();
        for sent in text::sentences(words) {
            let sw = &words[sent];
            for (i, w) in sw.iter().enumerate() {
                let Some(cat) = self.category_of(w) else { continue };
                let cue = sw[..i].iter().rev().find_map(|c| {
                    self.cues
                        .get(c.as_str())
                        .copied()
                        .filter(|p| cat.predicates.contains(p))
                });
                if let Some(predicate) = cue {
                    out.push(SlotStatement {
                        predicate,
                        value: w.clone(),
                    });
                }
            }
        }
        out
    }
}

/// Exact NLI over the synthetic grammar; the response is the premise.
#[derive(Clone, Debug)]
pub struct RuleOracle {
    lexicon: OracleLexicon,
}

impl RuleOracle {
    pub fn new(lexicon: OracleLexicon) -> Self {
        RuleOracle { lexicon }
    }

    pub fn lexicon(&self) -> &OracleLexicon {
        &self.lexicon
    }

    pub fn label(&self, premise: &[String], hypothesis: &[String]) -> NliLabel {
        let Some(hyp) = self.lexicon.statements(hypothesis).into_iter().next() else {
            return NliLabel::Neutral;
        };
        let exclusive = self
            .lexicon
            .category_of(&hyp.value)
            .map(|c| (c.exclusive, c.name.clone()));
        let prem = self.lexicon.statements(premise);
        let contradicts = prem.iter().any(|s| {
            (s.value == hyp.value && Some(s.predicate) == hyp.predicate.opposite())
                || match &exclusive {
                    Some((true, name)) => {
                        s.predicate == hyp.predicate
                            && s.value != hyp.value
                            && self.lexicon.category_of(&s.value).map(|c| &c.name) == Some(name)
                    }
                    _ => false,
                }
        });
        if contradicts {
            NliLabel::Contradiction
        } else if prem.contains(&hyp) {
            NliLabel::Entailment
        } else {
            NliLabel::Neutral
        }
    }
}

impl NliBackend for RuleOracle {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliLabel> {
        check_nonempty(premise, hypothesis)?;
        Ok(self.label(premise, hypothesis))
    }
}

/// External classifier behind a subprocess. Each batch spawns the command,
/// writes `premise<TAB>hypothesis` lines to its stdin and reads one label
/// per line from its stdout, in order.
#[derive(Clone, Debug)]
pub struct ExternalNli {
    program: PathBuf,
    args: Vec<String>,
}

impl ExternalNli {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        ExternalNli {
            program: program.into(),
            args,
        }
    }

    /// Parses a whitespace-separated command line.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| GmeError::Config("empty external nli command".into()))?;
        Ok(Self::new(program, parts.map(String::from).collect()))
    }
}

fn backend_error(pair: Option<&(Vec<String>, Vec<String>)>, message: String) -> GmeError {
    let (premise, hypothesis) = pair
        .map(|(p, h)| (text::join(p), text::join(h)))
        .unwrap_or_default();
    GmeError::NliBackend {
        premise,
        hypothesis,
        message,
    }
}

/// Runs a line-oriented subprocess: one request line in, one reply line out.
pub(crate) fn run_line_protocol(
    program: &Path,
    args: &[String],
    requests: &[String],
) -> std::result::Result<Vec<String>, String> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| format!("cannot start {}: {e}", program.display()))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload: String = requests.iter().map(|r| format!("{r}\n")).collect();
    let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
    let stdout = child.stdout.take().expect("piped stdout");
    let lines: Vec<String> = BufReader::new(stdout)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| e.to_string())?;
    writer
        .join()
        .map_err(|_| "writer thread panicked".to_string())?
        .map_err(|e| format!("writing requests: {e}"))?;
    let status = child.wait().map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("{} exited with {status}", program.display()));
    }
    if lines.len() != requests.len() {
        return Err(format!(
            "expected {} reply lines, got {}",
            requests.len(),
            lines.len()
        ));
    }
    Ok(lines)
}

impl NliBackend for ExternalNli {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliLabel> {
        let pair = (premise.to_vec(), hypothesis.to_vec());
        Ok(self.classify_batch(std::slice::from_ref(&pair))?[0])
    }

    fn classify_batch(&self, pairs: &[(Vec<String>, Vec<String>)]) -> Result<Vec<NliLabel>> {
        for (p, h) in pairs {
            check_nonempty(p, h)?;
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let requests: Vec<String> = pairs
            .iter()
            .map(|(p, h)| format!("{}\t{}", text::join(p), text::join(h)))
            .collect();
        let lines = run_line_protocol(&self.program, &self.args, &requests)
            .map_err(|m| backend_error(pairs.first(), m))?;
        lines
            .iter()
            .zip(pairs)
            .map(|(line, pair)| {
                NliLabel::parse(line)
                    .ok_or_else(|| backend_error(Some(pair), format!("unknown label {line:?}")))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NliBackendKind {
    RuleOracle,
    ExternalModel,
}

/// Where an NLI backend comes from: a lexicon file for the rule oracle, or a
/// command line for an external model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NliBackendDescriptor {
    pub kind: NliBackendKind,
    pub resource: String,
}

impl NliBackendDescriptor {
    pub fn build(&self) -> Result<Box<dyn NliBackend>> {
        match self.kind {
            NliBackendKind::RuleOracle => {
                let path = Path::new(&self.resource);
                let raw = std::fs::read_to_string(path).map_err(|e| GmeError::io(path, e))?;
                let lexicon: OracleLexicon = serde_json::from_str(&raw)?;
                Ok(Box::new(RuleOracle::new(lexicon)))
            }
            NliBackendKind::ExternalModel => {
                let ext = ExternalNli::from_command_line(&self.resource)?;
                if !resolvable(&ext.program) {
                    return Err(GmeError::Config(format!(
                        "external nli program {} not found",
                        ext.program.display()
                    )));
                }
                Ok(Box::new(ext))
            }
        }
    }
}

pub(crate) fn resolvable(program: &Path) -> bool {
    if program.components().count() > 1 {
        return program.exists();
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).exists()))
        .unwrap_or(false)
}
