use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionConfig;
use crate::corpus::SyntheticSizes;
use crate::eval::PersonaDistance;
use crate::maskgen::MaskgenConfig;
use crate::nli::NliBackendKind;
use crate::recombiner::RecombinerConfig;
use crate::templating::{TemplateSamplerConfig, EPSILON_MAIN};
use crate::{GmeError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSizes,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub valid_cases: Option<PathBuf>,
    pub test_cases: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            synthetic: SyntheticSizes { train: 6000, valid: 300, test: 500 },
            train: None,
            valid: None,
            valid_cases: None,
            test_cases: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NliConfig {
    pub kind: NliBackendKind,
    /// Lexicon path for the rule oracle (defaults to the prepared one) or the
    /// command line of an external classifier.
    pub resource: Option<String>,
}

impl Default for NliConfig {
    fn default() -> Self {
        NliConfig { kind: NliBackendKind::RuleOracle, resource: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    pub epsilon: f64,
    pub failure_cap: f64,
    /// Validation edit cases scored at every recombiner validation.
    pub validation_cases: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig { epsilon: EPSILON_MAIN, failure_cap: 0.05, validation_cases: 300 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub persona_distance: PersonaDistance,
    /// Command line of an external LM scorer; NLL is reported absent without one.
    pub lm_scorer: Option<String>,
}

/// Everything a run needs; persisted next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage seed derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub nli: NliConfig,
    pub sampler: TemplateSamplerConfig,
    pub attribution: AttributionConfig,
    pub maskgen: MaskgenConfig,
    pub recombiner: RecombinerConfig,
    pub edit: EditConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/synthetic"),
            precision: Precision::F32,
            data: DataConfig::default(),
            nli: NliConfig::default(),
            sampler: TemplateSamplerConfig { delta: DESK_DELTA, tau: DESK_TAU, ..Default::default() },
            attribution: AttributionConfig::default(),
            maskgen: MaskgenConfig::default(),
            recombiner: RecombinerConfig::default(),
            edit: EditConfig::default(),
            eval: EvalConfig::default(),
        };
        cfg.derive_seeds();
        cfg
    }
}

/// Saliency threshold matched to the gradient scale of the desk-size
/// attribution model.
pub const DESK_DELTA: f64 = 2.0;

/// Decay of the kept-sentence count distribution used by the desk run.
pub const DESK_TAU: f64 = 3.0;

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn has_stage_seed(text: &str) -> bool {
    let Ok(t) = toml::from_str::<toml::Table>(text) else { return false };
    let nested = |a: &str, b: &str| t.get(a).and_then(|x| x.get(b)).and_then(|x| x.get("seed")).is_some();
    nested("attribution", "train")
        || nested("maskgen", "train")
        || nested("recombiner", "train")
        || t.get("sampler").and_then(|x| x.get("rng_seed")).is_some()
}

/// Kept below 2^63 so seeds survive TOML's signed integers.
fn stage_seed(master: u64, stage: u64) -> u64 {
    (master.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage.wrapping_mul(0xBF58_476D_1CE4_E5B9))) >> 1
}

impl RunConfig {
    /// Parses a possibly partial config; every key left out keeps its value
    /// from `RunConfig::default()`, including keys inside nested sections.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| GmeError::Config(e.to_string());
        let overrides: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let mut base = toml::Table::try_from(RunConfig::default()).map_err(|e| err(&e))?;
        merge(&mut base, overrides);
        let mut cfg: RunConfig = toml::Value::Table(base).try_into().map_err(|e| err(&e))?;
        if !has_stage_seed(text) {
            cfg.derive_seeds();
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GmeError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| GmeError::Config(e.to_string()))
    }

    /// Sets the master seed and re-derives every stage seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.derive_seeds();
        self
    }

    pub fn derive_seeds(&mut self) {
        self.attribution.train.seed = stage_seed(self.seed, 1);
        self.maskgen.train.seed = stage_seed(self.seed, 2);
        self.recombiner.train.seed = stage_seed(self.seed, 3);
        self.sampler.rng_seed = stage_seed(self.seed, 4);
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |r: Result<()>, what: &str| {
            if let Err(e) = r {
                out.push(format!("{what}: {e}"));
            }
        };
        check(self.sampler.validate(), "sampler");
        check(self.recombiner.validate(), "recombiner");
        check(self.attribution.train.validate(), "attribution.train");
        check(self.maskgen.train.validate(), "maskgen.train");
        for (name, dims) in [
            ("attribution", &self.attribution.model),
            ("maskgen", &self.maskgen.model),
            ("recombiner", &self.recombiner.model),
        ] {
            if dims.n_heads == 0 || dims.d_model % dims.n_heads != 0 || dims.max_len == 0 {
                out.push(format!("{name}.model: d_model must be a positive multiple of n_heads and max_len positive"));
            }
        }
        if !(0.0..1.0).contains(&self.edit.epsilon) {
            out.push(format!("edit.epsilon must lie in [0, 1), got {}", self.edit.epsilon));
        }
        if !(0.0..=1.0).contains(&self.edit.failure_cap) {
            out.push(format!("edit.failure_cap must lie in [0, 1], got {}", self.edit.failure_cap));
        }
        match self.data.source {
            DataSource::Synthetic => {
                let s = self.data.synthetic;
                if s.train == 0 || s.valid == 0 || s.test == 0 {
                    out.push("data.synthetic sizes must be positive".into());
                }
            }
            DataSource::Files => {
                for (name, p) in [
                    ("data.train", &self.data.train),
                    ("data.valid", &self.data.valid),
                    ("data.valid_cases", &self.data.valid_cases),
                    ("data.test_cases", &self.data.test_cases),
                ] {
                    match p {
                        None => out.push(format!("{name} is required for file data")),
                        Some(p) if !p.exists() => out.push(format!("{name}: {} does not exist", p.display())),
                        _ => {}
                    }
                }
                if self.nli.kind == NliBackendKind::RuleOracle && self.nli.resource.is_none() {
                    out.push("nli.resource (an oracle lexicon) is required for file data".into());
                }
            }
        }
        if let Some(r) = &self.nli.resource {
            if self.nli.kind == NliBackendKind::RuleOracle && !Path::new(r).exists() {
                out.push(format!("nli.resource: {r} does not exist"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(GmeError::Config(p.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default().with_seed(7);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = RunConfig::from_toml("seed = 3\n[sampler]\ntau = 0.5\n").unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.sampler.tau, 0.5);
        assert_eq!(partial.sampler.noise_rate, 0.15);
        assert_eq!(partial, RunConfig { sampler: TemplateSamplerConfig { tau: 0.5, ..partial.sampler.clone() }, ..RunConfig::default().with_seed(3) });
        let nested = RunConfig::from_toml("[recombiner.train]\nsteps = 7\n").unwrap();
        assert_eq!(nested.recombiner.train.steps, 7);
        assert_eq!(nested.recombiner.train.learning_rate, RunConfig::default().recombiner.train.learning_rate);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn seeds_derive_from_the_master_seed() {
        let a = RunConfig::default().with_seed(1);
        let b = RunConfig::default().with_seed(2);
        assert_ne!(a.recombiner.train.seed, b.recombiner.train.seed);
        assert_ne!(a.maskgen.train.seed, a.attribution.train.seed);
        assert_eq!(a, RunConfig::default().with_seed(1));
    }

    #[test]
    fn problems_are_listed_exhaustively() {
        let mut c = RunConfig::default();
        c.sampler.tau = -1.0;
        c.edit.epsilon = 2.0;
        c.data.source = DataSource::Files;
        let p = c.problems();
        assert!(p.len() >= 6, "{p:?}");
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
