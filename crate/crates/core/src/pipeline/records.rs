use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::editor::CaseOutcome;
use crate::templating::Template;
use crate::text::{join, Words};
use crate::{GmeError, Result, Scalar};

/// One line of an edit result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: Option<String>,
    pub edited_response: Option<String>,
    /// Template rendered with mask placeholders.
    pub template_text: Option<String>,
    pub template: Option<Template>,
    pub confidences: Option<Vec<f64>>,
    #[serde(default)]
    pub truncated: bool,
    pub error: Option<String>,
}

impl EditRecord {
    pub fn from_outcome<T: Scalar>(id: Option<String>, outcome: CaseOutcome<T>) -> Self {
        match outcome {
            Ok(r) => EditRecord {
                id,
                edited_response: Some(join(&r.edited_response)),
                template_text: Some(r.template.render()),
                template: Some(r.template),
                confidences: Some(r.mask_decision.confidences.iter().map(|c| c.as_f64()).collect()),
                truncated: r.truncated,
                error: None,
            },
            Err(e) => EditRecord {
                id,
                edited_response: None,
                template_text: None,
                template: None,
                confidences: None,
                truncated: false,
                error: Some(e),
            },
        }
    }

    pub fn edited_words(&self) -> Option<Words> {
        self.edited_response.as_ref().map(|s| s.split_whitespace().map(String::from).collect())
    }

    pub fn template_struct(&self) -> Option<Template> {
        self.template.clone()
    }
}

pub fn write_edit_records(path: &Path, records: &[EditRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| GmeError::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| GmeError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| GmeError::io(path, e))?;
    }
    w.flush().map_err(|e| GmeError::io(path, e))
}

pub fn read_edit_records(path: &Path) -> Result<Vec<EditRecord>> {
    let f = std::fs::File::open(path).map_err(|e| GmeError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| GmeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            GmeError::Serde(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}
