use super::*;
use crate::corpus::Speaker;
use crate::text::words;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn set(xs: &[usize]) -> BTreeSet<usize> {
    xs.iter().copied().collect()
}

#[test]
fn overlap_uses_lemmas() {
    let r = words("i liked apples");
    assert_eq!(overlap_set(&r, &[words("i like apples")], &RuleLemmatizer), set(&[0, 1, 2]));
    assert!(overlap_set(&r, &[words("you own cats")], &RuleLemmatizer).is_empty());
}

#[test]
fn stopwords_include_punctuation() {
    let s = Stoplist::english();
    assert_eq!(stopword_set(&words("i like apples ."), &s), set(&[0, 3]));
    assert!(stopword_set(&words("enjoy hiking mountains"), &s).is_empty());
}

#[test]
fn target_mask_set_algebra() {
    let m = target_mask_vector(4, &set(&[1]), &set(&[2]), &set(&[2])).unwrap();
    assert_eq!(m.labels, vec![false, true, false, false]);
    assert!(m.confidences.is_none());
    let z = target_mask_vector(3, &set(&[]), &set(&[]), &set(&[])).unwrap();
    assert_eq!(z.labels, vec![false; 3]);
    assert!(target_mask_vector(2, &set(&[2]), &set(&[]), &set(&[])).is_err());
}

#[test]
fn merge_spans_examples() {
    assert_eq!(merge_spans(&[true, true, false, true]), vec![(0, 2), (3, 4)]);
    assert!(merge_spans(&[false, false]).is_empty());
}

#[test]
fn template_rendering() {
    let r = words("i like apples . you ?");
    let t = Template::from_labeled(r.iter().zip([false, true, true, false, false, false]), r.len(), vec![]);
    assert_eq!(t.render(), "i [MASK-SPAN] . you ?");
    assert_eq!(t.mask_count(), 1);
    assert_eq!(t.literal_words(), words("i . you ?"));
    assert_eq!(Template::verbatim(&r).words(), r);
}

#[test]
fn no_related_sentence_means_verbatim() {
    let r = words("hello there . how are you ?");
    let m = TokenMaskVector::from_labels(vec![false; r.len()]);
    let cfg = TemplateSamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let t = sample_training_template(&r, &m, &cfg, &mut rng).unwrap();
        assert_eq!(t, Template::verbatim(&r));
    }
}

#[test]
fn single_related_sentence_is_always_deleted() {
    // With l = 1 the only admissible keep count is 0.
    let r = words("i like apples . how are you ?");
    let mut labels = vec![false; r.len()];
    labels[2] = true;
    let m = TokenMaskVector::from_labels(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = sample_training_template(&r, &m, &TemplateSamplerConfig::default(), &mut rng).unwrap();
    assert_eq!(t.words(), words("how are you ?"));
    assert_eq!(t.deleted_sentence_indices, vec![0]);
    assert_eq!(t.source_length, r.len());
}

#[test]
fn keep_count_distribution_normalizes() {
    let p = keep_count_distribution(2, 1.0);
    assert!((p[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn sampler_config_validation() {
    let mut c = TemplateSamplerConfig::default();
    c.tau = 0.0;
    assert!(c.validate().is_err());
    c.tau = 1.0;
    c.noise_rate = 1.0;
    assert!(c.validate().is_err());
}

#[test]
fn inference_filter_rules() {
    let r = words("i like apples .");
    let p = vec![words("i hate apples .")];
    let h = vec![DialogueTurn { speaker: Speaker::One, text: words("do you like fruit ?") }];
    let t = build_inference_template(&r, &[0.0f64; 4], &p, &h, 0.5).unwrap();
    assert_eq!(t, Template::verbatim(&r));
    // "apples" is in the persona and "like" is in the history, so nothing is masked.
    let t = build_inference_template(&r, &[0.9f64; 4], &p, &h, 0.5).unwrap();
    assert_eq!(t.mask_count(), 0);
    let t = build_inference_template(&r, &[0.1f32, 0.9, 0.9, 0.1], &p, &[], 0.5).unwrap();
    assert_eq!(t.render(), "i [MASK-SPAN] apples .");
    assert!(build_inference_template(&r, &[0.1f64], &p, &[], 0.5).is_err());
}

fn labeled_response() -> impl Strategy<Value = (Vec<String>, Vec<bool>)> {
    prop::collection::vec((prop::sample::select(vec!["a", "b", "c", ".", "?"]), any::<bool>()), 0..24)
        .prop_map(|v| v.into_iter().map(|(w, m)| (w.to_string(), m)).unzip())
}

proptest! {
    #[test]
    fn merged_spans_reconstruct_labels(labels in prop::collection::vec(any::<bool>(), 0..40)) {
        let spans = merge_spans(&labels);
        let mut back = vec![false; labels.len()];
        for w in spans.windows(2) {
            prop_assert!(w[0].1 < w[1].0);
        }
        for &(s, e) in &spans {
            prop_assert!(s < e);
            back[s..e].iter_mut().for_each(|b| *b = true);
        }
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn training_template_invariants((r, labels) in labeled_response(), seed in any::<u64>(), noise in 0.0f64..0.9) {
        let cfg = TemplateSamplerConfig { noise_rate: noise, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_training_template(&r, &TokenMaskVector::from_labels(labels), &cfg, &mut rng).unwrap();
        for w in t.segments.windows(2) {
            prop_assert!(!(w[0] == Segment::Mask && w[1] == Segment::Mask));
            prop_assert!(matches!(w[0], Segment::Mask) || matches!(w[1], Segment::Mask));
        }
        let lit = t.literal_words();
        let mut it = r.iter();
        prop_assert!(lit.iter().all(|w| it.any(|x| x == w)));
        let n_sent = text::sentences(&r).len();
        prop_assert!(t.deleted_sentence_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(t.deleted_sentence_indices.iter().all(|&k| k < n_sent));
    }
}
