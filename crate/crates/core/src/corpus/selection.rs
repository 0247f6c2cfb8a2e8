use sha2::{Digest, Sha256};

use super::{responder, DialogueTurn, EditCase};
use crate::error::Result;
use crate::nli::{NliBackend, NliLabel};
use crate::text::{self, Words};

fn is_contradiction(nli: &dyn NliBackend, premise: &[String], hypothesis: &[String]) -> Result<bool> {
    Ok(nli.classify(premise, hypothesis)? == NliLabel::Contradiction)
}

/// Whether `persona` is a valid editing persona for the case:
/// (a) some sentence contradicts the original response,
/// (b) no sentence contradicts an earlier turn of the responding speaker,
/// (c) no two sentences contradict each other (either direction).
pub fn qualifies(
    history: &[DialogueTurn],
    original_response: &[String],
    persona: &[Words],
    nli: &dyn NliBackend,
) -> Result<bool> {
    let mut difficult = false;
    for s in persona {
        if is_contradiction(nli, original_response, s)? {
            difficult = true;
            break;
        }
    }
    if !difficult {
        return Ok(false);
    }
    let me = responder(history);
    for turn in history.iter().filter(|t| t.speaker == me) {
        for s in persona {
            if is_contradiction(nli, &turn.text, s)? {
                return Ok(false);
            }
        }
    }
    for (i, a) in persona.iter().enumerate() {
        for b in &persona[i + 1..] {
            if is_contradiction(nli, a, b)? || is_contradiction(nli, b, a)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Order-independent tie-break key for choosing among qualifying personas.
pub fn selection_key(history: &[DialogueTurn], original_response: &[String], persona: &[Words]) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in history {
        h.update(text::join(&t.text).as_bytes());
        h.update(b"\x1f");
    }
    h.update(b"\x1e");
    h.update(text::join(original_response).as_bytes());
    h.update(b"\x1e");
    for s in persona {
        h.update(text::join(s).as_bytes());
        h.update(b"\x1f");
    }
    h.finalize().into()
}

/// For every (history, original response) pair, picks one qualifying persona
/// profile from `pool` (the one with the smallest [`selection_key`]). Cases
/// with no qualifying profile are omitted.
pub fn select_editing_personas(
    cases: &[(Vec<DialogueTurn>, Words)],
    pool: &[Vec<Words>],
    nli: &dyn NliBackend,
) -> Result<Vec<EditCase>> {
    let mut out = Vec::new();
    for (history, original) in cases {
        let mut best: Option<([u8; 32], &Vec<Words>)> = None;
        for profile in pool {
            if !qualifies(history, original, profile, nli)? {
                continue;
            }
            let key = selection_key(history, original, profile);
            if best.as_ref().map_or(true, |(k, _)| key < *k) {
                best = Some((key, profile));
            }
        }
        if let Some((_, persona)) = best {
            out.push(EditCase {
                id: None,
                history: history.clone(),
                original_response: original.clone(),
                editing_persona: persona.clone(),
                references: Vec::new(),
            });
        }
    }
    Ok(out)
}
