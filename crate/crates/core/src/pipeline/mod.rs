//! Run orchestration: data preparation, the three training stages, batch
//! editing and evaluation, all rooted in one output directory.

mod config;
mod records;

pub use config::{DataConfig, DataSource, EditConfig, EvalConfig, NliConfig, Precision, RunConfig, DESK_DELTA};
pub use records::{read_edit_records, write_edit_records, EditRecord};

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attribution::{mask_targets, train_response_to_persona, MaskTargets, PersonaPredictor};
use crate::corpus::synthetic::SyntheticFiles;
use crate::corpus::{
    editing_persona_set, filter_persona_leakage, generate_synthetic_corpus, load_edit_cases, load_training_corpus,
    write_edit_cases, write_training_corpus, CorpusStats, DialogueSample, EditCase,
};
use crate::editor::Editor;
use crate::eval::{
    aggregate, behavioral_stats, multi_ref_bleu, p_score, score_report, template_retention, BehavioralStats,
    EditTriple, ExternalLmScorer, LmScorer, MeanStd, ScoreReport,
};
use crate::maskgen::{class_frequencies, tag_scores, train_mask_classifier, ClassFrequencies, MaskClassifier, TagScores};
use crate::nli::{NliBackend, NliBackendDescriptor, NliBackendKind};
use crate::nn::TrainReport;
use crate::recombiner::{train_recombiner, Recombiner};
use crate::templating::{RuleLemmatizer, Stoplist, Template};
use crate::text::Words;
use crate::vocab::Vocab;
use crate::{GmeError, Result, Scalar};

/// File locations inside a run's output directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn data(&self) -> SyntheticFiles {
        SyntheticFiles::in_dir(&self.root.join("data"))
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("data").join("stats.json")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(name)
    }

    pub fn targets(&self) -> PathBuf {
        self.root.join("models").join("mask_targets.json")
    }

    pub fn train_summary(&self) -> PathBuf {
        self.root.join("train_summary.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
    _file: File,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| GmeError::io(dir, e))?;
        let path = dir.join(".lock");
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                GmeError::Precondition(format!("output directory {} is locked by another command", dir.display()))
            } else {
                GmeError::io(&path, e)
            }
        })?;
        Ok(OutputLock { path, _file: file })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| GmeError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| GmeError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GmeError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn persist_config(cfg: &RunConfig, layout: &RunLayout) -> Result<()> {
    let path = layout.config();
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| GmeError::io(&path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub train: CorpusStats,
    pub valid: CorpusStats,
    pub valid_cases: CorpusStats,
    pub test_cases: CorpusStats,
    /// Training samples removed because a persona sentence is an editing persona.
    pub leakage_dropped: usize,
}

/// Writes the train/valid splits and edit-case files into the run directory.
pub fn prepare_data(cfg: &RunConfig) -> Result<PrepareReport> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.output_dir);
    let _lock = OutputLock::acquire(&layout.root)?;
    let files = layout.data();
    std::fs::create_dir_all(layout.root.join("data")).map_err(|e| GmeError::io(&layout.root, e))?;
    let (train, valid, valid_cases, test_cases) = match cfg.data.source {
        DataSource::Synthetic => {
            let c = generate_synthetic_corpus(cfg.seed, cfg.data.synthetic)?;
            write_json(&files.lexicon, &c.lexicon)?;
            (c.train, c.valid, c.valid_cases, c.test_cases)
        }
        DataSource::Files => {
            let req = |p: &Option<PathBuf>| p.clone().expect("validated");
            (
                load_training_corpus(&req(&cfg.data.train))?,
                load_training_corpus(&req(&cfg.data.valid))?,
                load_edit_cases(&req(&cfg.data.valid_cases))?,
                load_edit_cases(&req(&cfg.data.test_cases))?,
            )
        }
    };
    let held_out = editing_persona_set(valid_cases.iter().chain(&test_cases));
    let filtered = filter_persona_leakage(train, &held_out);
    write_training_corpus(&files.train, &filtered.retained)?;
    write_training_corpus(&files.valid, &valid)?;
    write_edit_cases(&files.valid_cases, &valid_cases)?;
    write_edit_cases(&files.test_cases, &test_cases)?;
    let report = PrepareReport {
        train: CorpusStats::of_samples(&filtered.retained),
        valid: CorpusStats::of_samples(&valid),
        valid_cases: CorpusStats::of_cases(&valid_cases),
        test_cases: CorpusStats::of_cases(&test_cases),
        leakage_dropped: filtered.dropped,
    };
    write_json(&layout.stats(), &report)?;
    persist_config(cfg, &layout)?;
    log::info!(
        "prepared {} training samples ({} dropped for leakage), {} test cases",
        report.train.sample_count,
        report.leakage_dropped,
        report.test_cases.sample_count
    );
    Ok(report)
}

/// The NLI backend named by the config; the rule oracle defaults to the
/// lexicon written by `prepare_data`.
pub fn nli_backend(cfg: &RunConfig) -> Result<Box<dyn NliBackend>> {
    let resource = match (&cfg.nli.resource, cfg.nli.kind) {
        (Some(r), _) => r.clone(),
        (None, NliBackendKind::RuleOracle) => RunLayout::new(&cfg.output_dir).data().lexicon.display().to_string(),
        (None, NliBackendKind::ExternalModel) => {
            return Err(GmeError::Config("nli.resource must name the external classifier".into()))
        }
    };
    NliBackendDescriptor { kind: cfg.nli.kind, resource }.build()
}

fn lm_scorer(cfg: &RunConfig) -> Option<ExternalLmScorer> {
    let cmd = cfg.eval.lm_scorer.as_ref()?;
    let mut parts = cmd.split_whitespace();
    let program = parts.next()?;
    let scorer = ExternalLmScorer::resolve(program, parts.map(String::from).collect());
    if scorer.is_none() {
        log::warn!("lm scorer {program} not found; NLL will be reported absent");
    }
    scorer
}

/// Summary of one stage's training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub steps: usize,
    pub best_step: usize,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
    pub seconds: f64,
    pub epoch_means: Vec<f64>,
    pub val_trace: Vec<(usize, f64)>,
}

impl StageSummary {
    fn of(report: &TrainReport, started: Instant) -> Self {
        StageSummary {
            steps: report.state.step,
            best_step: report.state.best_step,
            best_score: report.state.best_score,
            stopped_early: report.stopped_early,
            seconds: started.elapsed().as_secs_f64(),
            epoch_means: report.epoch_means(),
            val_trace: report.state.val_trace.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub attribution: StageSummary,
    pub maskgen: StageSummary,
    pub recombiner: StageSummary,
    pub frequencies: ClassFrequencies,
    /// Saliency quantiles (10, 50, 90, 99 %) over training response words.
    pub saliency_quantiles: Vec<f64>,
    pub maskgen_valid: TagScores,
}

/// Corpus splits as written by `prepare_data`.
pub struct PreparedData {
    pub train: Vec<DialogueSample>,
    pub valid: Vec<DialogueSample>,
    pub valid_cases: Vec<EditCase>,
    pub test_cases: Vec<EditCase>,
}

pub fn load_prepared(layout: &RunLayout) -> Result<PreparedData> {
    let f = layout.data();
    Ok(PreparedData {
        train: load_training_corpus(&f.train)?,
        valid: load_training_corpus(&f.valid)?,
        valid_cases: load_edit_cases(&f.valid_cases)?,
        test_cases: load_edit_cases(&f.test_cases)?,
    })
}

/// Word vocabulary over every training response, persona and history word.
pub fn build_vocab(train: &[DialogueSample]) -> Vocab {
    let words: Vec<&String> = train
        .iter()
        .flat_map(|s| {
            s.response
                .iter()
                .chain(s.persona.iter().flatten())
                .chain(s.history.iter().flat_map(|t| t.text.iter()))
        })
        .collect();
    Vocab::build(words)
}

fn quantiles(mut xs: Vec<f64>, qs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return vec![0.0; qs.len()];
    }
    xs.sort_by(f64::total_cmp);
    qs.iter().map(|q| xs[((xs.len() - 1) as f64 * q).round() as usize]).collect()
}

/// Validation Average (BLEU and scaled P-Score) of an editor on edit cases.
pub fn validation_average<T: Scalar>(editor: &Editor<T>, cases: &[EditCase], nli: &dyn NliBackend) -> Result<f64> {
    let cases: Vec<&EditCase> = cases.iter().filter(|c| !c.references.is_empty()).collect();
    if cases.is_empty() {
        return Ok(0.0);
    }
    let mut preds = Vec::with_capacity(cases.len());
    for (i, c) in cases.iter().enumerate() {
        preds.push(match editor.edit_case(c, i) {
            Ok(r) => r.edited_response,
            Err(_) => c.original_response.clone(),
        });
    }
    let refs: Vec<Vec<Words>> = cases.iter().map(|c| c.references.clone()).collect();
    let personas: Vec<Vec<Words>> = cases.iter().map(|c| c.editing_persona.clone()).collect();
    let bleu = multi_ref_bleu(&preds, &refs)?;
    let p = p_score(&preds, &personas, nli)?.mean * 100.0;
    Ok((bleu + p) / 2.0)
}

/// Trains attribution, then the mask classifier, then the recombiner
/// (selected by validation Average with the freshly trained classifier).
pub fn train_all(cfg: &RunConfig) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.output_dir);
    let _lock = OutputLock::acquire(&layout.root)?;
    let data = load_prepared(&layout)?;
    let nli = nli_backend(cfg)?;
    let vocab = build_vocab(&data.train);
    vocab.save(&layout.vocab())?;
    let resume = |name: &str| layout.root.join("resume").join(name);

    let t0 = Instant::now();
    let (predictor, attr_report) = train_response_to_persona::<T>(
        &data.train,
        &data.valid,
        &vocab,
        &cfg.attribution,
        Some(&resume("attribution")),
    )?;
    predictor.save(&layout.model("attribution"), cfg.attribution.train.seed, attr_report.state.step)?;
    let attribution = StageSummary::of(&attr_report, t0);
    let saliency_quantiles = saliency_profile(&predictor, &data.train)?;
    log::info!("saliency quantiles (10/50/90/99%): {saliency_quantiles:?}");

    let lem = RuleLemmatizer;
    let stop = Stoplist::english();
    let targets = mask_targets(&predictor, &data.train, cfg.sampler.delta, &lem, &stop)?;
    let valid_targets = mask_targets(&predictor, &data.valid, cfg.sampler.delta, &lem, &stop)?;
    write_json(&layout.targets(), &targets)?;
    let frequencies = class_frequencies(&targets.masks)?;
    log::info!("mask positive rate {:.3}", frequencies.f_positive);

    let t1 = Instant::now();
    let (clf, clf_report) = train_mask_classifier::<T>(
        &data.train,
        &targets,
        frequencies,
        &vocab,
        &cfg.maskgen,
        (&data.valid, &valid_targets.masks),
        Some(&resume("maskgen")),
    )?;
    clf.save(&layout.model("maskgen"), cfg.maskgen.train.seed, clf_report.state.step)?;
    let maskgen = StageSummary::of(&clf_report, t1);
    let maskgen_valid = tag_scores(&clf, &data.valid, &valid_targets.masks, T::of(0.5))?;

    let t2 = Instant::now();
    let val_cases: Vec<EditCase> = data.valid_cases.iter().take(cfg.edit.validation_cases).cloned().collect();
    let epsilon = T::of(cfg.edit.epsilon);
    let mut validate = |rec: &Recombiner<T>| {
        let editor = Editor::new(clf.clone(), rec.clone(), epsilon)?;
        validation_average(&editor, &val_cases, nli.as_ref())
    };
    let (rec, rec_report) = train_recombiner::<T>(
        &data.train,
        &targets,
        &cfg.sampler,
        &vocab,
        &cfg.recombiner,
        &mut validate,
        Some(&resume("recombiner")),
    )?;
    rec.save(&layout.model("recombiner"), rec_report.state.best_step)?;
    let recombiner = StageSummary::of(&rec_report, t2);

    let summary = TrainSummary {
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        attribution,
        maskgen,
        recombiner,
        frequencies,
        saliency_quantiles,
        maskgen_valid,
    };
    write_json(&layout.train_summary(), &summary)?;
    persist_config(cfg, &layout)?;
    Ok(summary)
}

fn saliency_profile<T: Scalar>(predictor: &PersonaPredictor<T>, train: &[DialogueSample]) -> Result<Vec<f64>> {
    let mut all = Vec::new();
    for s in train.iter().take(500) {
        if let Ok(sc) = crate::attribution::gradient_saliency(predictor, &s.response, &s.persona) {
            all.extend(sc.per_token_norm.iter().map(|x| x.as_f64()));
        }
    }
    Ok(quantiles(all, &[0.1, 0.5, 0.9, 0.99]))
}

/// Loads the trained classifier and recombiner of a run as an editor.
pub fn load_editor<T: Scalar>(cfg: &RunConfig, epsilon: Option<f64>) -> Result<Editor<T>> {
    let layout = RunLayout::new(&cfg.output_dir);
    let vocab = Vocab::load(&layout.vocab())?;
    let clf = MaskClassifier::<T>::load(&layout.model("maskgen"), vocab.clone())?;
    let mut rec = Recombiner::<T>::load(&layout.model("recombiner"), vocab)?;
    rec.set_strict_copy(cfg.recombiner.strict_copy);
    let mut editor = Editor::new(clf, rec, T::of(epsilon.unwrap_or(cfg.edit.epsilon)))?;
    editor.failure_cap = cfg.edit.failure_cap;
    Ok(editor)
}

/// Loads mask targets written during training.
pub fn load_targets(layout: &RunLayout) -> Result<MaskTargets> {
    read_json(&layout.targets())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditSummary {
    pub cases: usize,
    pub failed: usize,
    pub truncated: usize,
    pub epsilon: f64,
}

/// Edits every case in `cases_path` and writes one record per case.
pub fn edit_file(cfg: &RunConfig, cases_path: &Path, out_path: &Path, epsilon: Option<f64>) -> Result<EditSummary> {
    let cases = load_edit_cases(cases_path)?;
    let records = match cfg.precision {
        Precision::F32 => edit_records(&load_editor::<f32>(cfg, epsilon)?, &cases)?,
        Precision::F64 => edit_records(&load_editor::<f64>(cfg, epsilon)?, &cases)?,
    };
    write_edit_records(out_path, &records)?;
    let summary = EditSummary {
        cases: records.len(),
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        truncated: records.iter().filter(|r| r.truncated).count(),
        epsilon: epsilon.unwrap_or(cfg.edit.epsilon),
    };
    Ok(summary)
}

pub fn edit_records<T: Scalar>(editor: &Editor<T>, cases: &[EditCase]) -> Result<Vec<EditRecord>> {
    Ok(editor
        .batch_edit(cases)?
        .into_iter()
        .zip(cases)
        .map(|(o, c)| EditRecord::from_outcome(c.id.clone(), o))
        .collect())
}

/// Scores of one result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub source: String,
    pub scores: ScoreReport,
    pub behavior: BehavioralStats,
    /// Raw mean P-Score (sum of +-0.5 labels per sample).
    pub p_score_raw: f64,
    /// Share of unmasked template words kept in the edited response.
    pub template_retention: Option<f64>,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub no_edit: RunScores,
    pub runs: Vec<RunScores>,
    /// Mean and standard deviation of each metric across runs.
    pub aggregate: BTreeMap<String, MeanStd>,
}

/// Per-sample evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: Option<String>,
    pub edited_response: String,
    pub p_score: f64,
    pub med_to_original: usize,
    pub f1: f64,
}

/// Checks that records line up with cases by position and id.
pub fn align(records: &[EditRecord], cases: &[EditCase]) -> Result<()> {
    if records.len() != cases.len() {
        let first = cases
            .get(records.len().min(cases.len()))
            .map(|c| c.label(records.len()))
            .unwrap_or_else(|| format!("#{}", cases.len()));
        return Err(GmeError::Misaligned(format!(
            "{} results for {} cases; first unmatched case {first}",
            records.len(),
            cases.len()
        )));
    }
    for (i, (r, c)) in records.iter().zip(cases).enumerate() {
        if r.id.is_some() && c.id.is_some() && r.id != c.id {
            return Err(GmeError::Misaligned(format!("first mismatching id {}", c.label(i))));
        }
    }
    Ok(())
}

/// Predictions of a result file; failed cases fall back to the original response.
fn predictions(records: &[EditRecord], cases: &[EditCase]) -> Vec<Words> {
    records
        .iter()
        .zip(cases)
        .map(|(r, c)| r.edited_words().unwrap_or_else(|| c.original_response.clone()))
        .collect()
}

pub fn score_predictions(
    source: &str,
    preds: &[Words],
    templates: Option<&[Template]>,
    cases: &[EditCase],
    nli: &dyn NliBackend,
    scorer: Option<&dyn LmScorer>,
    cfg: &EvalConfig,
) -> Result<(RunScores, Vec<SampleRow>)> {
    if let Some((i, c)) = cases.iter().enumerate().find(|(_, c)| c.references.is_empty()) {
        return Err(GmeError::Precondition(format!("case {} has no references", c.label(i))));
    }
    let refs: Vec<Vec<Words>> = cases.iter().map(|c| c.references.clone()).collect();
    let personas: Vec<Vec<Words>> = cases.iter().map(|c| c.editing_persona.clone()).collect();
    let scores = score_report(preds, &refs, &personas, nli, scorer)?;
    let ps = p_score(preds, &personas, nli)?;
    let triples: Vec<EditTriple> = cases
        .iter()
        .zip(preds)
        .map(|(c, p)| EditTriple { original: &c.original_response, edited: p, persona: &c.editing_persona })
        .collect();
    let behavior = behavioral_stats(&triples, cfg.persona_distance)?;
    let rows = cases
        .iter()
        .zip(preds)
        .zip(&ps.per_sample)
        .map(|((c, p), &s)| SampleRow {
            id: c.id.clone(),
            edited_response: crate::text::join(p),
            p_score: s,
            med_to_original: crate::eval::med(p, &c.original_response),
            f1: crate::eval::unigram_f1(p, &c.references),
        })
        .collect();
    let run = RunScores {
        source: source.to_string(),
        scores,
        behavior,
        p_score_raw: ps.mean,
        template_retention: templates.map(|t| template_retention(t, preds)),
        failed: 0,
    };
    Ok((run, rows))
}

/// Scores each result file against the cases, plus the no-edit baseline,
/// and aggregates across files (e.g. one per seed). Writes the report and
/// per-sample rows under `out_dir`.
pub fn evaluate(cfg: &RunConfig, result_files: &[PathBuf], cases_path: &Path, out_dir: &Path) -> Result<EvalReport> {
    let cases = load_edit_cases(cases_path)?;
    let nli = nli_backend(cfg)?;
    let scorer = lm_scorer(cfg);
    let scorer_ref = scorer.as_ref().map(|s| s as &dyn LmScorer);
    let originals: Vec<Words> = cases.iter().map(|c| c.original_response.clone()).collect();
    let (no_edit, _) = score_predictions("no-edit", &originals, None, &cases, nli.as_ref(), scorer_ref, &cfg.eval)?;
    let mut runs = Vec::new();
    for (k, path) in result_files.iter().enumerate() {
        let records = read_edit_records(path)?;
        align(&records, &cases)?;
        let preds = predictions(&records, &cases);
        let templates: Option<Vec<Template>> = records.iter().map(|r| r.template_struct()).collect();
        let (mut run, rows) = score_predictions(
            &path.display().to_string(),
            &preds,
            templates.as_deref(),
            &cases,
            nli.as_ref(),
            scorer_ref,
            &cfg.eval,
        )?;
        run.failed = records.iter().filter(|r| r.error.is_some()).count();
        write_jsonl(&out_dir.join(format!("rows_{k}.jsonl")), &rows)?;
        runs.push(run);
    }
    let metric_maps: Vec<BTreeMap<String, f64>> = runs
        .iter()
        .map(|r| {
            let mut m = r.scores.metrics();
            m.extend(r.behavior.metrics());
            m
        })
        .collect();
    let report = EvalReport { no_edit, runs, aggregate: aggregate(&metric_maps) };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| GmeError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| GmeError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| GmeError::io(path, e))?;
    }
    w.flush().map_err(|e| GmeError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceReport {
    pub prepare: PrepareReport,
    pub train: TrainSummary,
    pub edit: EditSummary,
    pub eval: EvalReport,
    pub seconds: BTreeMap<String, f64>,
}

/// Full desk-scale experiment: prepare, train, edit the test cases, evaluate.
pub fn reproduce(cfg: &RunConfig) -> Result<ReproduceReport> {
    let layout = RunLayout::new(&cfg.output_dir);
    let mut seconds = BTreeMap::new();
    let t = Instant::now();
    let prepare = prepare_data(cfg)?;
    seconds.insert("prepare".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let train = train_all(cfg)?;
    seconds.insert("train".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let results = layout.root.join("edits").join("test.jsonl");
    let edit = {
        let _lock = OutputLock::acquire(&layout.root)?;
        edit_file(cfg, &layout.data().test_cases, &results, None)?
    };
    seconds.insert("edit".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let eval = {
        let _lock = OutputLock::acquire(&layout.root)?;
        evaluate(cfg, &[results], &layout.data().test_cases, &layout.root.join("eval"))?
    };
    seconds.insert("evaluate".to_string(), t.elapsed().as_secs_f64());
    let report = ReproduceReport { prepare, train, edit, eval, seconds };
    write_json(&layout.root.join("reproduce.json"), &report)?;
    Ok(report)
}
