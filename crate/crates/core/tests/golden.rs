//! Outputs of pinned checkpoints and encodings, compared with files under
//! `tests/golden`. `GME_BLESS=1` retrains the tiny checkpoints and rewrites
//! every file.

mod common;

use std::path::PathBuf;

use common::{golden, ws};
use gme::attribution::MaskTargets;
use gme::corpus::{generate_synthetic_corpus, DialogueTurn, Speaker, SyntheticSizes};
use gme::maskgen::{class_frequencies, train_mask_classifier, MaskClassifier, MaskgenConfig};
use gme::nn::{ModelDims, TrainConfig};
use gme::pipeline::build_vocab;
use gme::recombiner::{serialize, train_recombiner, Recombiner, RecombinerConfig};
use gme::templating::{
    overlap_set, stopword_set, target_mask_vector, RuleLemmatizer, Stoplist, Template, TemplateSamplerConfig,
};
use gme::vocab::Vocab;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/checkpoints")
}

fn tiny(steps: usize, seed: u64) -> (ModelDims, TrainConfig) {
    let dims = ModelDims { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_len: 112 };
    let train = TrainConfig {
        steps,
        batch_size: 8,
        learning_rate: 3e-3,
        warmup_steps: 10,
        eval_every: 0,
        seed,
        ..TrainConfig::default()
    };
    (dims, train)
}

fn bless_checkpoints() {
    let corpus = generate_synthetic_corpus(8, SyntheticSizes { train: 200, valid: 1, test: 1 }).unwrap();
    let vocab = build_vocab(&corpus.train);
    let (lem, stop) = (RuleLemmatizer, Stoplist::english());
    let masks = corpus
        .train
        .iter()
        .map(|s| {
            let o = overlap_set(&s.response, &s.persona, &lem);
            let st = stopword_set(&s.response, &stop);
            target_mask_vector(s.response.len(), &Default::default(), &o, &st).unwrap()
        })
        .collect();
    let targets = MaskTargets { vocab_hash: vocab.hash(), masks };
    let (model, train) = tiny(300, 1);
    let rc = RecombinerConfig { model, train, ..RecombinerConfig::default() };
    let sampler = TemplateSamplerConfig { rng_seed: 1, ..Default::default() };
    let (rec, _) =
        train_recombiner::<f64>(&corpus.train, &targets, &sampler, &vocab, &rc, &mut |_| Ok(0.0), None).unwrap();
    let (model, train) = tiny(200, 2);
    let mc = MaskgenConfig { model, train };
    let freq = class_frequencies(&targets.masks).unwrap();
    let (clf, _) =
        train_mask_classifier::<f64>(&corpus.train, &targets, freq, &vocab, &mc, (&[], &[]), None).unwrap();
    std::fs::create_dir_all(dir()).unwrap();
    vocab.save(&dir().join("vocab.json")).unwrap();
    rec.save(&dir().join("recombiner"), 300).unwrap();
    clf.save(&dir().join("maskgen"), 2, 200).unwrap();
}

fn history() -> Vec<DialogueTurn> {
    vec![
        DialogueTurn { speaker: Speaker::One, text: ws("hello there !") },
        DialogueTurn { speaker: Speaker::Two, text: ws("what about you ?") },
    ]
}

#[test]
fn pinned_checkpoints_reproduce_their_outputs() {
    if std::env::var_os("GME_BLESS").is_some() {
        bless_checkpoints();
    }
    let vocab = Vocab::load(&dir().join("vocab.json")).unwrap();
    let rec = Recombiner::<f64>::load(&dir().join("recombiner"), vocab.clone()).unwrap();
    let clf = MaskClassifier::<f64>::load(&dir().join("maskgen"), vocab.clone()).unwrap();

    let h = history();
    let response = ws("i like pizza . that is cool .");
    let persona = vec![ws("i hate pizza .")];
    let template = Template::from_labeled(
        response.iter().zip([false, false, true, false, false, false, false, false]),
        response.len(),
        vec![],
    );
    let enc = serialize(&vocab, &h, &template.words(), &persona, Some(&response), 112).unwrap();
    golden("encoding.json", &(enc.token_ids, enc.type_ids, enc.prompt_len));

    let out = rec.generate(&h, &template, &persona).unwrap();
    golden("decode.json", &out.words.join(" "));

    let conf = clf.predict_mask(&h, &response).unwrap().confidences;
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/confidences.json");
    if std::env::var_os("GME_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&conf).unwrap() + "\n").unwrap();
    }
    let pinned: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(pinned.len(), conf.len());
    for (a, b) in pinned.iter().zip(&conf) {
        assert!((a - b).abs() <= 1e-6, "{pinned:?} vs {conf:?}");
    }
}

#[test]
fn checkpoints_refuse_a_different_vocabulary() {
    let other = Vocab::build(ws("a different vocabulary").iter());
    assert!(Recombiner::<f64>::load(&dir().join("recombiner"), other.clone()).is_err());
    assert!(MaskClassifier::<f64>::load(&dir().join("maskgen"), other).is_err());
}
