//! Mini-batch Adam training loop shared by all three models.
//!
//! Schedule: linear warmup, then a constant rate that halves whenever the
//! validation score fails to improve `patience` times in a row; training
//! stops after `max_decays` halvings or `steps` steps, and the best
//! validated parameters are restored at the end.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_tensors, save_tensors};
use super::{clip_grad_norm, Adam, SequenceModel, Tensors};
use crate::error::{GmeError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    /// Validate every this many steps (and after the last step).
    pub eval_every: usize,
    /// Stale validations before the learning rate is halved.
    pub patience: usize,
    /// Training ends after this many halvings.
    pub max_decays: usize,
    pub seed: u64,
    /// Write resumable state every this many steps (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 32,
            learning_rate: 5e-5,
            warmup_steps: 0,
            grad_clip: 1.0,
            eval_every: 500,
            patience: 2,
            max_decays: 3,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(GmeError::Config("steps and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return Err(GmeError::Config("learning_rate and grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic per-epoch visiting order.
pub struct EpochOrder;

impl EpochOrder {
    pub fn permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: usize,
    pub lr: f64,
    pub best_score: Option<f64>,
    pub best_step: usize,
    pub stale: usize,
    pub decays: usize,
    pub adam_step: u64,
    /// (step, epoch, mean loss per target) for every step.
    pub train_trace: Vec<(usize, usize, f64)>,
    /// (step, validation score).
    pub val_trace: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub state: TrainerState,
    pub stopped_early: bool,
}

impl TrainReport {
    /// Mean training loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &(_, epoch, loss) in &self.state.train_trace {
            if out.len() <= epoch {
                out.resize(epoch + 1, (0.0, 0));
            }
            out[epoch].0 += loss;
            out[epoch].1 += 1;
        }
        out.into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| s / n as f64)
            .collect()
    }
}

const STATE_FILE: &str = "trainer.json";

struct ResumeFiles<'a> {
    dir: &'a Path,
}

impl ResumeFiles<'_> {
    fn exists(&self) -> bool {
        self.dir.join(STATE_FILE).exists()
    }

    fn save<T: Scalar>(
        &self,
        state: &TrainerState,
        params: &[Array2<T>],
        best: Option<&Tensors<T>>,
        adam: &Adam<T>,
    ) -> Result<()> {
        std::fs::create_dir_all(self.dir).map_err(|e| GmeError::io(self.dir, e))?;
        save_tensors(&self.dir.join("current.bin"), params)?;
        save_tensors(&self.dir.join("adam_m.bin"), &adam.m)?;
        save_tensors(&self.dir.join("adam_v.bin"), &adam.v)?;
        if let Some(b) = best {
            save_tensors(&self.dir.join("best.bin"), b)?;
        }
        let p = self.dir.join(STATE_FILE);
        std::fs::write(&p, serde_json::to_string(state)?).map_err(|e| GmeError::io(&p, e))
    }

    #[allow(clippy::type_complexity)]
    fn load<T: Scalar>(&self) -> Result<(TrainerState, Tensors<T>, Option<Tensors<T>>, Tensors<T>, Tensors<T>)> {
        let p = self.dir.join(STATE_FILE);
        let raw = std::fs::read_to_string(&p).map_err(|e| GmeError::io(&p, e))?;
        let state: TrainerState = serde_json::from_str(&raw)?;
        let best_path = self.dir.join("best.bin");
        let best = if best_path.exists() {
            Some(load_tensors(&best_path)?)
        } else {
            None
        };
        Ok((
            state,
            load_tensors(&self.dir.join("current.bin"))?,
            best,
            load_tensors(&self.dir.join("adam_m.bin"))?,
            load_tensors(&self.dir.join("adam_v.bin"))?,
        ))
    }
}

/// Per-example callback: accumulate the gradient of the summed loss of
/// example `index` (visited in `epoch`) into `grads`; return the loss sum and
/// the number of targets it covers.
pub type ExampleFn<'a, T> =
    dyn FnMut(&SequenceModel<T>, usize, usize, &mut [Array2<T>]) -> Result<(T, usize)> + 'a;

/// Validation callback: higher is better.
pub type ValidateFn<'a, T> = dyn FnMut(&SequenceModel<T>) -> Result<f64> + 'a;

pub fn train<T: Scalar>(
    model: &mut SequenceModel<T>,
    n_examples: usize,
    cfg: &TrainConfig,
    stage: &str,
    example: &mut ExampleFn<'_, T>,
    validate: &mut ValidateFn<'_, T>,
    resume_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if n_examples == 0 {
        return Err(GmeError::Precondition(format!("{stage}: empty training set")));
    }
    let mut adam = Adam::new(model.params());
    let mut state = TrainerState {
        lr: cfg.learning_rate,
        ..Default::default()
    };
    let mut best: Option<Tensors<T>> = None;
    let resume = resume_dir.map(|dir| ResumeFiles { dir });
    if let Some(r) = resume.as_ref().filter(|r| r.exists()) {
        let (s, current, b, m, v) = r.load::<T>()?;
        model.set_params(current)?;
        adam.m = m;
        adam.v = v;
        adam.state.step = s.adam_step;
        best = b;
        log::info!("{stage}: resuming at step {}", s.step);
        state = s;
    }

    let mut perm_epoch = usize::MAX;
    let mut perm = Vec::new();
    let mut stopped_early = false;
    while state.step < cfg.steps {
        let mut grads = model.zero_grads();
        let mut loss_sum = T::zero();
        let mut count = 0usize;
        let mut epoch = 0;
        for b in 0..cfg.batch_size {
            let global = state.step * cfg.batch_size + b;
            epoch = global / n_examples;
            if epoch != perm_epoch {
                perm = EpochOrder::permutation(cfg.seed, epoch, n_examples);
                perm_epoch = epoch;
            }
            let idx = perm[global % n_examples];
            let (l, n) = example(model, idx, epoch, &mut grads)?;
            loss_sum = loss_sum + l;
            count += n;
        }
        let step = state.step + 1;
        if !loss_sum.is_finite() {
            return Err(GmeError::NonFiniteLoss {
                stage: stage.to_string(),
                step,
            });
        }
        if count > 0 {
            let inv = T::one() / T::of(count as f64);
            for g in grads.iter_mut() {
                g.mapv_inplace(|v| v * inv);
            }
            clip_grad_norm(&mut grads, T::of(cfg.grad_clip));
            let warm = if cfg.warmup_steps > 0 {
                (step as f64 / cfg.warmup_steps as f64).min(1.0)
            } else {
                1.0
            };
            adam.step(model.params_mut(), &grads, T::of(state.lr * warm));
        }
        let mean = if count > 0 {
            loss_sum.as_f64() / count as f64
        } else {
            0.0
        };
        state.train_trace.push((step, epoch, mean));
        state.step = step;
        state.adam_step = adam.state.step;

        let validate_now = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if validate_now {
            let score = validate(model)?;
            log::info!("{stage}: step {step} train loss {mean:.4} validation {score:.4} lr {:.2e}", state.lr);
            state.val_trace.push((step, score));
            if state.best_score.map_or(true, |b| score > b) {
                state.best_score = Some(score);
                state.best_step = step;
                state.stale = 0;
                best = Some(model.params().clone());
            } else {
                state.stale += 1;
                if state.stale >= cfg.patience.max(1) {
                    state.lr *= 0.5;
                    state.decays += 1;
                    state.stale = 0;
                    if state.decays >= cfg.max_decays.max(1) {
                        stopped_early = step < cfg.steps;
                    }
                }
            }
        }
        if let Some(r) = &resume {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                r.save(&state, model.params(), best.as_ref(), &adam)?;
            }
        }
        if stopped_early {
            log::info!("{stage}: stopping after {} learning-rate decays", state.decays);
            break;
        }
    }
    if let Some(b) = best {
        model.set_params(b)?;
    }
    Ok(TrainReport {
        state,
        stopped_early,
    })
}
