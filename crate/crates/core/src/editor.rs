//! Inference: classifier confidences become a template, and the recombiner
//! fills it under the editing persona.

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueTurn, EditCase};
use crate::maskgen::{MaskClassifier, MaskDecision};
use crate::recombiner::Recombiner;
use crate::templating::{build_inference_template, Template};
use crate::text::Words;
use crate::{GmeError, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditResult<T> {
    pub edited_response: Words,
    pub template: Template,
    pub mask_decision: MaskDecision<T>,
    pub truncated: bool,
}

/// Outcome of one case in a batch: the result or the error message.
pub type CaseOutcome<T> = std::result::Result<EditResult<T>, String>;

/// The two trained stages plus the masking threshold.
#[derive(Clone, Debug)]
pub struct Editor<T> {
    maskgen: MaskClassifier<T>,
    recombiner: Recombiner<T>,
    epsilon: T,
    /// Largest tolerated fraction of failed cases in a batch.
    pub failure_cap: f64,
}

impl<T: Scalar> Editor<T> {
    pub fn new(maskgen: MaskClassifier<T>, recombiner: Recombiner<T>, epsilon: T) -> Result<Self> {
        if maskgen.vocab().hash() != recombiner.vocab().hash() {
            return Err(GmeError::Config("classifier and recombiner use different vocabularies".into()));
        }
        if !(epsilon >= T::zero() && epsilon < T::one()) {
            return Err(GmeError::Config(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        Ok(Editor { maskgen, recombiner, epsilon, failure_cap: 0.05 })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn maskgen(&self) -> &MaskClassifier<T> {
        &self.maskgen
    }

    pub fn recombiner(&self) -> &Recombiner<T> {
        &self.recombiner
    }

    pub fn recombiner_mut(&mut self) -> &mut Recombiner<T> {
        &mut self.recombiner
    }

    /// Template inferred for a case: the classifier sees only history and response.
    pub fn infer_template(
        &self,
        history: &[DialogueTurn],
        original_response: &[String],
        editing_persona: &[Words],
    ) -> Result<(Template, MaskDecision<T>)> {
        let decision = self.maskgen.predict_mask(history, original_response)?;
        let template = build_inference_template(
            original_response,
            &decision.confidences,
            editing_persona,
            history,
            self.epsilon,
        )?;
        Ok((template, decision))
    }

    pub fn edit(
        &self,
        history: &[DialogueTurn],
        original_response: &[String],
        editing_persona: &[Words],
    ) -> Result<EditResult<T>> {
        let (template, mask_decision) = self.infer_template(history, original_response, editing_persona)?;
        let generation = self.recombiner.generate(history, &template, editing_persona)?;
        Ok(EditResult {
            edited_response: generation.words,
            template,
            mask_decision,
            truncated: generation.truncated,
        })
    }

    pub fn edit_case(&self, case: &EditCase, index: usize) -> Result<EditResult<T>> {
        self.edit(&case.history, &case.original_response, &case.editing_persona)
            .map_err(|e| match e {
                GmeError::Length { len, limit, .. } => GmeError::Length { len, limit, case: Some(case.label(index)) },
                other => other,
            })
    }

    /// Edits every case independently; failures are recorded per case and
    /// only abort the batch when their share exceeds `failure_cap`.
    pub fn batch_edit(&self, cases: &[EditCase]) -> Result<Vec<CaseOutcome<T>>> {
        let outcomes: Vec<CaseOutcome<T>> = cases
            .iter()
            .enumerate()
            .map(|(i, c)| self.edit_case(c, i).map_err(|e| e.to_string()))
            .collect();
        let failed = outcomes.iter().filter(|o| o.is_err()).count();
        if !cases.is_empty() && failed as f64 / cases.len() as f64 > self.failure_cap {
            return Err(GmeError::Precondition(format!(
                "{failed} of {} cases failed, above the {:.1}% cap",
                cases.len(),
                100.0 * self.failure_cap
            )));
        }
        for (i, o) in outcomes.iter().enumerate() {
            if let Err(e) = o {
                log::warn!("{}: {e}", cases[i].label(i));
            }
        }
        Ok(outcomes)
    }
}
