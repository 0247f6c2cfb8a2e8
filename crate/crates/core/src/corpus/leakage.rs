use std::collections::HashSet;

use super::{DialogueSample, EditCase};
use crate::text::normalize_sentence;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeakageOutcome {
    pub retained: Vec<DialogueSample>,
    pub dropped: usize,
}

/// Normalized set of every editing-persona sentence across `cases`.
pub fn editing_persona_set<'a>(cases: impl IntoIterator<Item = &'a EditCase>) -> HashSet<String> {
    cases
        .into_iter()
        .flat_map(|c| c.editing_persona.iter().map(|s| normalize_sentence(s)))
        .collect()
}

/// Drops every training sample with a persona sentence that (after
/// normalization) equals an editing-persona sentence. `editing_personas` must
/// hold normalized sentences.
pub fn filter_persona_leakage(
    train: impl IntoIterator<Item = DialogueSample>,
    editing_personas: &HashSet<String>,
) -> LeakageOutcome {
    let mut retained = Vec::new();
    let mut dropped = 0;
    for sample in train {
        let leaks = sample
            .persona
            .iter()
            .any(|s| editing_personas.contains(&normalize_sentence(s)));
        if leaks {
            dropped += 1;
        } else {
            retained.push(sample);
        }
    }
    LeakageOutcome { retained, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;
    use proptest::prelude::*;

    fn sample(persona: &[&str]) -> DialogueSample {
        DialogueSample {
            history: vec![],
            response: words("ok ."),
            persona: persona.iter().map(|p| words(p)).collect(),
        }
    }

    #[test]
    fn empty_filter_is_identity() {
        let input = vec![sample(&["i like tea ."]), sample(&["i hate tea ."])];
        let out = filter_persona_leakage(input.clone(), &HashSet::new());
        assert_eq!(out.retained, input);
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn exact_match_after_normalization_is_dropped() {
        let set: HashSet<String> = ["i like tea".to_string()].into();
        let out = filter_persona_leakage(vec![sample(&["I like tea ."])], &set);
        assert!(out.retained.is_empty());
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn ten_samples_four_leaking() {
        let set: HashSet<String> = ["i hate jazz".to_string()].into();
        let samples: Vec<_> = (0..10)
            .map(|i| {
                if [1, 4, 5, 9].contains(&i) {
                    sample(&["i own a cat .", "i hate jazz ."])
                } else {
                    sample(&["i own a cat .", "i like jazz ."])
                }
            })
            .collect();
        // brute force membership
        let expected_retained: Vec<_> = samples
            .iter()
            .filter(|s| !s.persona.iter().any(|p| set.contains(&normalize_sentence(p))))
            .cloned()
            .collect();
        let out = filter_persona_leakage(samples, &set);
        assert_eq!(out.retained.len(), 6);
        assert_eq!(out.dropped, 4);
        assert_eq!(out.retained, expected_retained);
    }

    proptest! {
        #[test]
        fn output_is_counted_subsequence(picks in proptest::collection::vec(0usize..4, 0..40), banned in 0usize..4) {
            let names = ["i like tea .", "i hate tea .", "i own a cat .", "i am a nurse ."];
            let samples: Vec<_> = picks.iter().map(|&i| sample(&[names[i]])).collect();
            let set: HashSet<String> = [normalize_sentence(&words(names[banned]))].into();
            let out = filter_persona_leakage(samples.clone(), &set);
            prop_assert_eq!(out.retained.len() + out.dropped, samples.len());
            let mut it = samples.iter();
            for r in &out.retained {
                prop_assert!(it.any(|s| s == r));
            }
        }
    }
}
