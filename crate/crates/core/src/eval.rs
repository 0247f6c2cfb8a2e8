//! Metrics: word-level edit distance, edit behavior statistics, corpus
//! BLEU-4 with multiple references, persona consistency score, unigram F1
//! and an external language-model NLL hook.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nli::{map_label, run_line_protocol, NliBackend, NliLabel};
use crate::templating::Template;
use crate::text::{self, Words};
use crate::{GmeError, Result};

/// Word-level Levenshtein distance with unit costs.
pub fn med(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn bag(words: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for w in words {
        *m.entry(w.as_str()).or_insert(0) += 1;
    }
    m
}

/// Size of the multiset difference `a \ b`.
fn bag_difference(a: &[String], b: &[String]) -> usize {
    let bb = bag(b);
    bag(a)
        .into_iter()
        .map(|(w, n)| n.saturating_sub(bb.get(w).copied().unwrap_or(0)))
        .sum()
}

/// How the distance to a multi-sentence persona is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PersonaDistance {
    #[default]
    Concatenated,
    MinOverSentences,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehavioralStats {
    pub add: f64,
    pub rm: f64,
    pub delta_len: f64,
    pub med_to_original: f64,
    pub med_to_persona: f64,
}

/// One edited response with its original and the editing persona.
#[derive(Clone, Copy, Debug)]
pub struct EditTriple<'a> {
    pub original: &'a [String],
    pub edited: &'a [String],
    pub persona: &'a [Words],
}

pub fn behavioral_stats(triples: &[EditTriple<'_>], persona_distance: PersonaDistance) -> Result<BehavioralStats> {
    if triples.is_empty() {
        return Err(GmeError::Precondition("behavioral statistics need at least one pair".into()));
    }
    let mut s = BehavioralStats::default();
    for t in triples {
        s.add += bag_difference(t.edited, t.original) as f64;
        s.rm += bag_difference(t.original, t.edited) as f64;
        s.delta_len += t.edited.len() as f64 - t.original.len() as f64;
        s.med_to_original += med(t.edited, t.original) as f64;
        s.med_to_persona += match persona_distance {
            PersonaDistance::Concatenated => med(t.edited, &t.persona.concat()),
            PersonaDistance::MinOverSentences => {
                t.persona.iter().map(|p| med(t.edited, p)).min().unwrap_or(t.edited.len())
            }
        } as f64;
    }
    let n = triples.len() as f64;
    for v in [&mut s.add, &mut s.rm, &mut s.delta_len, &mut s.med_to_original, &mut s.med_to_persona] {
        *v /= n;
    }
    Ok(s)
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 on a 0-100 scale, following multi-bleu.perl: n-gram counts
/// clipped by their maximum count in any reference, the closest reference
/// length (shorter on ties) for the brevity penalty, and no smoothing.
pub fn multi_ref_bleu(predictions: &[Words], references: &[Vec<Words>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(GmeError::Precondition("BLEU needs at least one prediction".into()));
    }
    if predictions.len() != references.len() {
        return Err(GmeError::Misaligned(format!(
            "{} predictions but {} reference sets",
            predictions.len(),
            references.len()
        )));
    }
    let mut correct = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (pred, refs) in predictions.iter().zip(references) {
        if refs.is_empty() {
            return Err(GmeError::Precondition("every prediction needs at least one reference".into()));
        }
        hyp_len += pred.len();
        let mut closest = refs[0].len();
        for r in refs {
            let (d, dc) = (r.len().abs_diff(pred.len()), closest.abs_diff(pred.len()));
            if d < dc || (d == dc && r.len() < closest) {
                closest = r.len();
            }
        }
        ref_len += closest;
        for n in 1..=4 {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngram_counts(pred, n) {
                correct[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += pred.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log = |x: f64| if x == 0.0 { -9_999_999_999.0 } else { x.ln() };
    let mut sum = 0.0;
    for n in 0..4 {
        let p = if total[n] > 0 { correct[n] as f64 / total[n] as f64 } else { 0.0 };
        sum += log(p);
    }
    let bp = if hyp_len < ref_len { (1.0 - ref_len as f64 / hyp_len as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * (sum / 4.0).exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub entailment: usize,
    pub neutral: usize,
    pub contradiction: usize,
}

impl LabelDistribution {
    fn add(&mut self, l: NliLabel) {
        match l {
            NliLabel::Entailment => self.entailment += 1,
            NliLabel::Neutral => self.neutral += 1,
            NliLabel::Contradiction => self.contradiction += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PScore {
    /// Mean over samples of the summed mapped labels (+0.5 / 0 / -0.5).
    pub mean: f64,
    pub per_sample: Vec<f64>,
    pub labels: LabelDistribution,
}

/// Persona consistency: the response is the premise and each persona
/// sentence a hypothesis.
pub fn p_score(responses: &[Words], personas: &[Vec<Words>], nli: &dyn NliBackend) -> Result<PScore> {
    if responses.len() != personas.len() {
        return Err(GmeError::Misaligned(format!(
            "{} responses but {} personas",
            responses.len(),
            personas.len()
        )));
    }
    if responses.is_empty() {
        return Err(GmeError::Precondition("P-Score needs at least one sample".into()));
    }
    let pairs: Vec<(Words, Words)> = responses
        .iter()
        .zip(personas)
        .filter(|(r, _)| !r.is_empty())
        .flat_map(|(r, p)| p.iter().map(move |s| (r.clone(), s.clone())))
        .collect();
    let mut labels = nli.classify_batch(&pairs)?.into_iter();
    let mut dist = LabelDistribution::default();
    let per_sample: Vec<f64> = responses
        .iter()
        .zip(personas)
        .map(|(r, p)| {
            p.iter()
                .map(|_| {
                    // An empty response states nothing about the persona.
                    let l = if r.is_empty() {
                        NliLabel::Neutral
                    } else {
                        labels.next().expect("one label per pair")
                    };
                    dist.add(l);
                    map_label::<f64>(l)
                })
                .sum()
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(PScore { mean, per_sample, labels: dist })
}

pub fn average_score(bleu: f64, p_score: f64) -> f64 {
    (bleu + p_score) / 2.0
}

/// Best bag-of-words F1 against any reference.
pub fn unigram_f1(prediction: &[String], references: &[Words]) -> f64 {
    let p = bag(prediction);
    references
        .iter()
        .map(|r| {
            let rb = bag(r);
            let common: usize = p.iter().map(|(w, &n)| n.min(rb.get(w).copied().unwrap_or(0))).sum();
            if common == 0 {
                return 0.0;
            }
            let precision = common as f64 / prediction.len() as f64;
            let recall = common as f64 / r.len() as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .fold(0.0, f64::max)
}

/// Per-response `(total log-probability, word count)` from a language model.
pub trait LmScorer {
    fn score(&self, responses: &[Words]) -> Result<Vec<(f64, usize)>>;
}

/// Process plugin: one response per request line, one
/// `total_logprob<TAB>word_count` reply line.
#[derive(Clone, Debug)]
pub struct ExternalLmScorer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalLmScorer {
    /// The scorer when its program resolves, `None` otherwise.
    pub fn resolve(program: impl Into<PathBuf>, args: Vec<String>) -> Option<Self> {
        let program = program.into();
        crate::nli::resolvable(&program).then_some(ExternalLmScorer { program, args })
    }
}

impl LmScorer for ExternalLmScorer {
    fn score(&self, responses: &[Words]) -> Result<Vec<(f64, usize)>> {
        let requests: Vec<String> = responses.iter().map(|r| text::join(r)).collect();
        let lines = run_line_protocol(&self.program, &self.args, &requests).map_err(GmeError::Scorer)?;
        lines
            .iter()
            .map(|l| {
                let mut f = l.split('\t');
                let lp = f.next().and_then(|x| x.trim().parse::<f64>().ok());
                let n = f.next().and_then(|x| x.trim().parse::<usize>().ok());
                match (lp, n, f.next()) {
                    (Some(lp), Some(n), None) if lp.is_finite() => Ok((lp, n)),
                    _ => Err(GmeError::Scorer(format!("malformed scorer reply {l:?}"))),
                }
            })
            .collect()
    }
}

/// Word-level NLL `-Σ log p / Σ words`; `None` when no scorer is available.
pub fn external_lm_nll(responses: &[Words], scorer: Option<&dyn LmScorer>) -> Result<Option<f64>> {
    if responses.is_empty() {
        return Err(GmeError::Precondition("NLL needs at least one response".into()));
    }
    let Some(scorer) = scorer else {
        return Ok(None);
    };
    let scores = scorer.score(responses)?;
    let words: usize = scores.iter().map(|s| s.1).sum();
    if words == 0 {
        return Err(GmeError::Scorer("scorer reported zero words".into()));
    }
    Ok(Some(-scores.iter().map(|s| s.0).sum::<f64>() / words as f64))
}

/// Share of literal template words that survive into the edited response
/// (multiset intersection), pooled over cases.
pub fn template_retention(templates: &[Template], edited: &[Words]) -> f64 {
    let (mut kept, mut total) = (0usize, 0usize);
    for (t, e) in templates.iter().zip(edited) {
        let lit = t.literal_words();
        total += lit.len();
        kept += lit.len() - bag_difference(&lit, e);
    }
    if total == 0 {
        1.0
    } else {
        kept as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu: f64,
    /// P-Score on the same 0-100 scale as BLEU.
    pub p_score: f64,
    pub average: f64,
    pub f1: f64,
    pub nll: Option<f64>,
    pub labels: LabelDistribution,
}

/// Scores predictions against edit-case references and personas.
pub fn score_report(
    predictions: &[Words],
    references: &[Vec<Words>],
    personas: &[Vec<Words>],
    nli: &dyn NliBackend,
    scorer: Option<&dyn LmScorer>,
) -> Result<ScoreReport> {
    let bleu = multi_ref_bleu(predictions, references)?;
    let ps = p_score(predictions, personas, nli)?;
    let p = 100.0 * ps.mean;
    let f1 = predictions.iter().zip(references).map(|(p, r)| unigram_f1(p, r)).sum::<f64>() / predictions.len() as f64;
    Ok(ScoreReport {
        bleu,
        p_score: p,
        average: average_score(bleu, p),
        f1,
        nll: external_lm_nll(predictions, scorer)?,
        labels: ps.labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
}

/// Mean and sample standard deviation of every named metric across runs.
pub fn aggregate(runs: &[BTreeMap<String, f64>]) -> BTreeMap<String, MeanStd> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (k, &v) in r {
            values.entry(k.clone()).or_default().push(v);
        }
    }
    values
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            (k, MeanStd { mean, stddev: var.sqrt(), n })
        })
        .collect()
}

impl ScoreReport {
    /// Flat metric map for aggregation across seeds.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::from([
            ("bleu".to_string(), self.bleu),
            ("p_score".to_string(), self.p_score),
            ("average".to_string(), self.average),
            ("f1".to_string(), self.f1),
        ]);
        if let Some(nll) = self.nll {
            m.insert("nll".into(), nll);
        }
        m
    }
}

impl BehavioralStats {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("add".to_string(), self.add),
            ("rm".to_string(), self.rm),
            ("delta_len".to_string(), self.delta_len),
            ("med_to_original".to_string(), self.med_to_original),
            ("med_to_persona".to_string(), self.med_to_persona),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;
    use proptest::prelude::*;

    #[test]
    fn med_examples() {
        assert_eq!(med(&words("a b c"), &words("a b c")), 0);
        assert_eq!(med(&words("a b c"), &words("a x c")), 1);
        assert_eq!(med(&[], &words("a b")), 2);
    }

    #[test]
    fn behavioral_hand_case_and_no_edit() {
        let o = words("i like dogs");
        let e = words("i like cats a lot");
        let p = vec![words("i like cats")];
        let s = behavioral_stats(&[EditTriple { original: &o, edited: &e, persona: &p }], PersonaDistance::Concatenated)
            .unwrap();
        assert_eq!((s.add, s.rm, s.delta_len), (3.0, 1.0, 2.0));
        assert_eq!(s.med_to_persona, 2.0);
        let z = behavioral_stats(&[EditTriple { original: &o, edited: &o, persona: &p }], PersonaDistance::default())
            .unwrap();
        assert_eq!((z.add, z.rm, z.delta_len, z.med_to_original), (0.0, 0.0, 0.0, 0.0));
        assert!(behavioral_stats(&[], PersonaDistance::default()).is_err());
    }

    #[test]
    fn persona_distance_modes() {
        let e = words("i like cats");
        let p = vec![words("i like cats"), words("i own a car")];
        let t = [EditTriple { original: &e, edited: &e, persona: &p }];
        assert_eq!(behavioral_stats(&t, PersonaDistance::Concatenated).unwrap().med_to_persona, 4.0);
        assert_eq!(behavioral_stats(&t, PersonaDistance::MinOverSentences).unwrap().med_to_persona, 0.0);
    }

    #[test]
    fn bleu_examples() {
        let p = vec![words("a b c d")];
        let r = vec![vec![words("a b c d e")]];
        assert!((multi_ref_bleu(&p, &r).unwrap() - 100.0 * (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-9);
        let r2 = vec![vec![words("x y"), words("a b c d")]];
        assert!((multi_ref_bleu(&p, &r2).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(multi_ref_bleu(&[words("a b c")], &[vec![words("a b c")]]).unwrap(), 0.0);
        assert!(multi_ref_bleu(&[], &[]).is_err());
    }

    #[test]
    fn closest_reference_prefers_shorter_on_ties() {
        // Lengths 3 and 5 are equally close to 4; the shorter one gives no penalty.
        let p = vec![words("a b c d")];
        let r = vec![vec![words("a b c d e"), words("a b c")]];
        assert!((multi_ref_bleu(&p, &r).unwrap() - 100.0).abs() < 1e-9);
    }

    struct Fixed(Vec<NliLabel>);

    impl NliBackend for Fixed {
        fn classify(&self, _: &[String], _: &[String]) -> Result<NliLabel> {
            unreachable!()
        }

        fn classify_batch(&self, pairs: &[(Words, Words)]) -> Result<Vec<NliLabel>> {
            assert_eq!(pairs.len(), self.0.len());
            Ok(self.0.clone())
        }
    }

    #[test]
    fn p_score_fixtures() {
        use NliLabel::*;
        let r = vec![words("x")];
        let one = p_score(&r, &[vec![words("p")]], &Fixed(vec![Entailment])).unwrap();
        assert_eq!(one.mean, 0.5);
        let two = p_score(&r, &[vec![words("p"), words("q")]], &Fixed(vec![Entailment, Contradiction])).unwrap();
        assert_eq!(two.mean, 0.0);
        // Six samples with 1, 2, 1, 1, 2, 1 persona sentences.
        let rs = vec![words("x"); 6];
        let ps: Vec<Vec<Words>> = [1, 2, 1, 1, 2, 1].iter().map(|&k| vec![words("p"); k]).collect();
        let labels = vec![
            Entailment, Entailment, Neutral, Contradiction, Neutral, Entailment, Contradiction, Entailment,
        ];
        let s = p_score(&rs, &ps, &Fixed(labels)).unwrap();
        assert_eq!(s.per_sample, vec![0.5, 0.5, -0.5, 0.0, 0.0, 0.5]);
        assert_eq!(s.mean, 1.0 / 6.0);
        assert_eq!(s.labels, LabelDistribution { entailment: 4, neutral: 2, contradiction: 2 });
        let empty = p_score(&[vec![], words("x")], &[vec![words("p")], vec![words("q")]], &Fixed(vec![Entailment])).unwrap();
        assert_eq!(empty.per_sample, vec![0.0, 0.5]);
    }

    #[test]
    fn average_examples() {
        assert!((average_score(60.3, 29.9) - 45.1).abs() < 1e-9);
        assert!((average_score(76.4, -30.5) - 22.95).abs() < 1e-9);
        assert_eq!(format!("{:.1}", average_score(76.4, -30.5) + 1e-9), "23.0");
        assert_eq!(average_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(unigram_f1(&words("a b"), &[words("a b")]), 1.0);
        assert_eq!(unigram_f1(&words("a b"), &[words("c d")]), 0.0);
        assert_eq!(unigram_f1(&words("a b"), &[words("a c")]), 0.5);
        assert_eq!(unigram_f1(&words("a b"), &[words("c d"), words("a c")]), 0.5);
    }

    struct PerWord(f64);

    impl LmScorer for PerWord {
        fn score(&self, responses: &[Words]) -> Result<Vec<(f64, usize)>> {
            Ok(responses.iter().map(|r| (self.0 * r.len() as f64, r.len())).collect())
        }
    }

    #[test]
    fn nll_hook() {
        let rs = vec![words("a b"), words("c d e")];
        assert_eq!(external_lm_nll(&rs, Some(&PerWord(-1.0))).unwrap(), Some(1.0));
        assert_eq!(external_lm_nll(&rs, None).unwrap(), None);
        assert!(external_lm_nll(&[], None).is_err());
        assert!(ExternalLmScorer::resolve("/definitely/not/a/scorer", vec![]).is_none());
    }

    #[test]
    fn external_scorer_fixture() {
        // Per-word log-probabilities -1, -2, -0.5 over responses of 2, 1 and 4 words.
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("scorer.sh");
        std::fs::write(
            &script,
            "#!/bin/sh\nawk '{ n = NF; lp = (NR == 1 ? -1 : (NR == 2 ? -2 : -0.5)) * n; printf \"%s\\t%d\\n\", lp, n }'\n",
        )
        .unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let s = ExternalLmScorer::resolve(&script, vec![]).unwrap();
        let rs = vec![words("a b"), words("c"), words("d e f g")];
        let nll = external_lm_nll(&rs, Some(&s)).unwrap().unwrap();
        assert!((nll - (2.0 + 2.0 + 2.0) / 7.0).abs() < 1e-12);
    }

    #[test]
    fn retention_counts_literal_words() {
        let r = words("i like apples .");
        let t = Template::from_labeled(r.iter().zip([false, true, false, false]), 4, vec![]);
        assert_eq!(template_retention(&[t.clone()], &[words("i hate apples .")]), 1.0);
        assert!((template_retention(&[t], &[words("i hate pears")]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_mean_and_stddev() {
        let runs: Vec<BTreeMap<String, f64>> =
            [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|&v| BTreeMap::from([("bleu".to_string(), v)])).collect();
        let a = aggregate(&runs);
        assert_eq!(a["bleu"].mean, 3.0);
        assert!((a["bleu"].stddev - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(a["bleu"].n, 5);
    }

    fn word_seq(max: usize) -> impl Strategy<Value = Words> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..=max)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn med_is_a_metric(a in word_seq(7), b in word_seq(7), c in word_seq(7)) {
            prop_assert_eq!(med(&a, &b), med(&b, &a));
            prop_assert_eq!(med(&a, &b) == 0, a == b);
            prop_assert!(med(&a, &c) <= med(&a, &b) + med(&b, &c));
        }

        #[test]
        fn add_minus_rm_is_length_change(o in word_seq(10), e in word_seq(10)) {
            let p = vec![words("x")];
            let s = behavioral_stats(&[EditTriple { original: &o, edited: &e, persona: &p }], PersonaDistance::default()).unwrap();
            prop_assert_eq!(s.add - s.rm, s.delta_len);
        }

        #[test]
        fn bleu_ignores_reference_order(p in word_seq(8), r1 in word_seq(8), r2 in word_seq(8)) {
            let a = multi_ref_bleu(&[p.clone()], &[vec![r1.clone(), r2.clone()]]).unwrap();
            let b = multi_ref_bleu(&[p], &[vec![r2, r1]]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
