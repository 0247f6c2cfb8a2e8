//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use gme::corpus::DialogueTurn;
use gme::templating::{Lemmatizer, Segment, Stoplist, Template};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn ws(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Levenshtein distance by plain exponential recursion.
pub fn brute_med(a: &[String], b: &[String]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_med(ra, rb) + usize::from(x != y);
            let del = brute_med(ra, b) + 1;
            let ins = brute_med(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

fn ngram_table(words: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut t = BTreeMap::new();
    if words.len() >= n {
        for i in 0..=words.len() - n {
            *t.entry(words[i..i + n].join(" ")).or_insert(0) += 1;
        }
    }
    t
}

/// Corpus BLEU-4 written after the multi-bleu.perl script: string-keyed
/// n-gram tables, per-sentence clipping against the reference maxima and the
/// closest reference length, shorter on ties.
pub fn moses_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let mut correct = [0f64; 4];
    let mut total = [0f64; 4];
    let mut length_translation = 0f64;
    let mut length_reference = 0f64;
    for (h, rs) in hyps.iter().zip(refs) {
        let mut closest_diff = usize::MAX;
        let mut closest_len = usize::MAX;
        let mut ref_max: BTreeMap<String, usize> = BTreeMap::new();
        for r in rs {
            let diff = r.len().abs_diff(h.len());
            if diff < closest_diff || (diff == closest_diff && r.len() < closest_len) {
                closest_diff = diff;
                closest_len = r.len();
            }
            for n in 1..=4 {
                for (g, c) in ngram_table(r, n) {
                    let e = ref_max.entry(g).or_insert(0);
                    if c > *e {
                        *e = c;
                    }
                }
            }
        }
        length_translation += h.len() as f64;
        length_reference += closest_len as f64;
        for n in 1..=4 {
            for (g, c) in ngram_table(h, n) {
                total[n - 1] += c as f64;
                correct[n - 1] += c.min(*ref_max.get(&g).unwrap_or(&0)) as f64;
            }
        }
    }
    if length_translation == 0.0 {
        return 0.0;
    }
    let my_log = |x: f64| if x == 0.0 { -9_999_999_999.0 } else { x.ln() };
    let mut score = 0.0;
    for n in 0..4 {
        let p = if total[n] > 0.0 { correct[n] / total[n] } else { 0.0 };
        score += my_log(p);
    }
    let bp = if length_translation < length_reference {
        (1.0 - length_reference / length_translation).exp()
    } else {
        1.0
    };
    100.0 * bp * (score / 4.0).exp()
}

pub fn brute_overlap(response: &[String], persona: &[Vec<String>], lem: &impl Lemmatizer) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for (i, w) in response.iter().enumerate() {
        for s in persona {
            for p in s {
                if lem.lemma(w) == lem.lemma(p) {
                    out.insert(i);
                }
            }
        }
    }
    out
}

pub fn brute_stopwords(response: &[String], stop: &Stoplist) -> BTreeSet<usize> {
    (0..response.len()).filter(|&i| stop.contains(&response[i])).collect()
}

pub fn brute_target(len: usize, g: &BTreeSet<usize>, o: &BTreeSet<usize>, s: &BTreeSet<usize>) -> Vec<bool> {
    (0..len).map(|i| (g.contains(&i) || o.contains(&i)) && !s.contains(&i)).collect()
}

/// Spans rebuilt by scanning each index for a run start and walking to its end.
pub fn brute_spans(labels: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..labels.len() {
        if labels[i] && (i == 0 || !labels[i - 1]) {
            let mut j = i;
            while j < labels.len() && labels[j] {
                j += 1;
            }
            out.push((i, j));
        }
    }
    out
}

/// Inference template by direct per-word evaluation of the masking rule.
pub fn brute_inference_template(
    response: &[String],
    conf: &[f64],
    persona: &[Vec<String>],
    history: &[DialogueTurn],
    eps: f64,
) -> Template {
    let mut segments: Vec<Segment> = Vec::new();
    for (i, w) in response.iter().enumerate() {
        let in_persona = persona.iter().any(|s| s.iter().any(|p| p == w));
        let in_history = history.iter().any(|t| t.text.iter().any(|h| h == w));
        let masked = conf[i] > eps && !in_persona && !in_history;
        if masked {
            if segments.last() != Some(&Segment::Mask) {
                segments.push(Segment::Mask);
            }
        } else if let Some(Segment::Literal(run)) = segments.last_mut() {
            run.push(w.clone());
        } else {
            segments.push(Segment::Literal(vec![w.clone()]));
        }
    }
    Template { segments, source_length: response.len(), deleted_sentence_indices: vec![] }
}

pub const SMALL_VOCAB: [&str; 16] = [
    "i", "like", "liked", "likes", "apples", "apple", "the", "a", "dog", "dogs", "run", "running", ".", "?", "is", "am",
];

pub fn random_words<R: Rng>(rng: &mut R, vocab: &[&str], max_len: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| vocab.choose(rng).unwrap().to_string()).collect()
}

pub fn random_subset<R: Rng>(rng: &mut R, len: usize, p: f64) -> BTreeSet<usize> {
    (0..len).filter(|_| rng.gen_bool(p)).collect()
}

/// Compares `value` with the pinned JSON file under `tests/golden`; setting
/// `GME_BLESS=1` rewrites the file instead.
pub fn golden<T: serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug>(name: &str, value: &T) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("GME_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(value).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let pinned: T = serde_json::from_str(&text).unwrap();
    assert_eq!(&pinned, value, "golden file {name} differs");
}
