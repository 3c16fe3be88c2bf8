//! Supervised ℓ1 training with per-epoch validation and resumable state.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, ImageMetrics, MetricReport};
use crate::network::checkpoint::{seal, verify_checksum, Reader};
use crate::network::{DenoMambaModel, ModelConfig};
use crate::numerics::ops::mean_abs_diff;
use crate::numerics::{FeatureMap, Tape, Var};
use crate::training::optim::{step_schedule, AdamConfig, OptimizerState, LR_HALVE_EVERY};

/// Mean absolute difference between prediction and target.
pub fn l1_loss(tape: &Tape, pred: Var, target: Var) -> Result<Var> {
    mean_abs_diff(tape, pred, target)
}

/// Untaped ℓ1 loss.
pub fn l1_value(pred: &FeatureMap, target: &FeatureMap) -> Result<f64> {
    let tape = Tape::inference();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let l = l1_loss(&tape, p, t)?;
    let v = tape.value(l).data()[0];
    Ok(v)
}

/// One forward pass; parameters are not touched.
pub fn denoise(model: &DenoMambaModel, x: &FeatureMap) -> Result<FeatureMap> {
    model.forward(x)
}

/// Per-image metrics of the model's output on each pair's LDCT input.
pub fn evaluate(model: &DenoMambaModel, pairs: &[ImagePair], data_range: f64) -> Result<MetricReport> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let y = denoise(model, &p.ldct)?;
            ImageMetrics::compute(format!("{i:04}"), &y, &p.ndct, data_range)
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    #[serde(default = "default_halve_every")]
    pub halve_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_range")]
    pub data_range: f64,
}

fn default_halve_every() -> usize {
    LR_HALVE_EVERY
}

fn default_range() -> f64 {
    1.0
}

impl TrainConfig {
    /// 100 epochs at `1e-4`.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 1e-4,
            halve_every: LR_HALVE_EVERY,
            seed: 0,
            adam: AdamConfig::default(),
            data_range: 1.0,
        }
    }

    /// 40 epochs at a higher base rate, suited to the small desk model.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 40,
            base_lr: 1e-3,
            ..TrainConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        if self.halve_every == 0 {
            return Err(Error::Config("halve_every must be at least 1".into()));
        }
        if !(self.data_range > 0.0) {
            return Err(Error::Config("data range must be positive".into()));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        step_schedule(epoch, self.base_lr, self.halve_every)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_l1: f64,
    pub val_psnr_mean: f64,
    pub val_psnr_std: f64,
    pub val_ssim_mean: f64,
    pub val_rmse_mean: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Loss of every optimisation step, in order.
    pub step_losses: Vec<f64>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_l1,val_psnr_mean,val_psnr_std,val_ssim_mean,val_rmse_mean";

    /// Per-epoch CSV. Wall time is left out so identical runs give identical
    /// files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{:.8},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.lr, r.train_l1, r.val_psnr_mean, r.val_psnr_std, r.val_ssim_mean, r.val_rmse_mean
            ));
        }
        out
    }
}

/// Parameters of the epoch with the best mean validation PSNR.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_psnr: f64,
    pub params: Vec<f64>,
}

/// Training loop state; survives interruption through [`Trainer::save_state`].
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    /// Epochs completed so far.
    pub epoch: usize,
    pub history: TrainHistory,
    pub best: Option<BestSnapshot>,
}

impl Trainer {
    pub fn new(model: &DenoMambaModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: OptimizerState::new(&model.store, config.adam),
            config,
            epoch: 0,
            history: TrainHistory::default(),
            best: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn check_pairs(model: &DenoMambaModel, pairs: &[ImagePair]) -> Result<()> {
        for p in pairs {
            let [_, _, h, w] = p.ldct.dims4()?;
            model.config().check_extents(h, w)?;
            if p.ldct.shape() != p.ndct.shape() {
                return Err(Error::shape(
                    "training pair",
                    crate::numerics::shape_str(p.ndct.shape()),
                    crate::numerics::shape_str(p.ldct.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Visiting order of the training pairs in `epoch`.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One optimisation step on a single pair; returns its loss.
    pub fn step(&mut self, model: &mut DenoMambaModel, pair: &ImagePair, lr: f64) -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(pair.ldct.clone());
        let y = tape.constant(pair.ndct.clone());
        let pred = model.forward_taped(&tape, x)?;
        let loss = l1_loss(&tape, pred, y)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}, step {}", self.epoch, self.optimizer.step)));
        }
        let grads = tape.backward(loss)?;
        model.store.zero_grads();
        grads.accumulate_into(&mut model.store);
        drop(grads);
        drop(tape);
        self.optimizer.adam_step(&mut model.store, lr)?;
        Ok(value)
    }

    /// Trains one epoch and validates.
    pub fn train_epoch(&mut self, model: &mut DenoMambaModel, train: &[ImagePair], val: &[ImagePair]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        Self::check_pairs(model, train)?;
        Self::check_pairs(model, val)?;
        let start = Instant::now();
        let lr = self.config.lr(self.epoch);
        let mut total = 0.0;
        for i in self.epoch_order(train.len(), self.epoch) {
            let l = self.step(model, &train[i], lr)?;
            self.history.step_losses.push(l);
            total += l;
        }
        let (psnr, ssim, rmse) = if val.is_empty() {
            (
                crate::metrics::Aggregate {
                    mean: f64::NAN,
                    std: f64::NAN,
                    n: 0,
                },
                f64::NAN,
                f64::NAN,
            )
        } else {
            let report = evaluate(model, val, self.config.data_range)?;
            let s = report.summary()?;
            (s.psnr, s.ssim.mean, s.rmse_pct.mean)
        };
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            train_l1: total / train.len() as f64,
            val_psnr_mean: psnr.mean,
            val_psnr_std: psnr.std,
            val_ssim_mean: ssim,
            val_rmse_mean: rmse,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let improved = match &self.best {
            None => true,
            Some(b) => psnr.mean > b.val_psnr,
        };
        if improved || val.is_empty() {
            self.best = Some(BestSnapshot {
                epoch: self.epoch,
                val_psnr: psnr.mean,
                params: model.store.flatten(),
            });
        }
        log::info!(
            "epoch {} lr {:.3e} train_l1 {:.5} val_psnr {:.3}",
            record.epoch,
            record.lr,
            record.train_l1,
            record.val_psnr_mean
        );
        self.history.records.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete, calling `after_epoch`
    /// after each one (e.g. to write checkpoints).
    pub fn run(
        &mut self,
        model: &mut DenoMambaModel,
        train: &[ImagePair],
        val: &[ImagePair],
        mut after_epoch: impl FnMut(&Trainer, &DenoMambaModel) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            self.train_epoch(model, train, val)?;
            after_epoch(self, model)?;
        }
        Ok(())
    }

    /// A copy of `model` carrying the best-validation parameters.
    pub fn best_model(&self, model: &DenoMambaModel) -> Result<DenoMambaModel> {
        let mut out = model.clone();
        if let Some(b) = &self.best {
            out.store.load_flat(&b.params)?;
        }
        Ok(out)
    }
}

/// Trains `model` for `config.epochs` epochs from scratch.
pub fn train(model: &mut DenoMambaModel, train: &[ImagePair], val: &[ImagePair], config: TrainConfig) -> Result<TrainHistory> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(model, train, val, |_, _| Ok(()))?;
    Ok(trainer.history)
}

/// Mean validation PSNR of a finished history's last epoch.
pub fn final_val_psnr(history: &TrainHistory) -> Option<f64> {
    history.records.last().map(|r| r.val_psnr_mean)
}

pub const STATE_MAGIC: &[u8; 4] = b"DNTS";
pub const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    model: ModelConfig,
    epoch: usize,
    step: u64,
    history: TrainHistory,
    best_epoch: Option<usize>,
    best_psnr: Option<f64>,
}

impl Trainer {
    /// Serialises the optimiser, history and best snapshot. Layout: `"DNTS"`,
    /// version u32, JSON length u32 and bytes, moment/parameter counts u64,
    /// first moments, second moments and best parameters as LE f64, FNV-1a 64.
    pub fn state_bytes(&self, model: &DenoMambaModel) -> Vec<u8> {
        let meta = StateMeta {
            config: self.config,
            model: model.config().clone(),
            epoch: self.epoch,
            step: self.optimizer.step,
            history: self.history.clone(),
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_psnr: self.best.as_ref().map(|b| b.val_psnr),
        };
        let json = serde_json::to_string(&meta).expect("state serialises");
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        let m: Vec<f64> = self.optimizer.first_moment.iter().flatten().copied().collect();
        let v: Vec<f64> = self.optimizer.second_moment.iter().flatten().copied().collect();
        let best = self.best.as_ref().map(|b| b.params.clone()).unwrap_or_default();
        for block in [&m, &v, &best] {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for x in block.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        seal(out)
    }

    pub fn from_state_bytes(bytes: &[u8], model: &DenoMambaModel) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != STATE_MAGIC {
            return Err(Error::Integrity("not a training state file (bad magic)".into()));
        }
        let body = verify_checksum(bytes)?;
        let mut r = Reader::new(body);
        r.take(4)?;
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(Error::Integrity(format!("unsupported training state version {version}")));
        }
        let len = r.u32()? as usize;
        let meta: StateMeta = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Integrity(format!("unreadable training state: {e}")))?;
        if &meta.model != model.config() {
            return Err(Error::Integrity("training state belongs to a different model configuration".into()));
        }
        let mut blocks = Vec::new();
        for _ in 0..3 {
            let n = r.u64()? as usize;
            blocks.push(r.f64s(n)?);
        }
        let best_params = blocks.pop().expect("three blocks");
        let v = blocks.pop().expect("three blocks");
        let m = blocks.pop().expect("three blocks");
        let mut optimizer = OptimizerState::new(&model.store, meta.config.adam);
        let total = model.param_count();
        if m.len() != total || v.len() != total {
            return Err(Error::Integrity("optimizer moments do not match the model".into()));
        }
        let mut offset = 0;
        for (fm, sm) in optimizer.first_moment.iter_mut().zip(optimizer.second_moment.iter_mut()) {
            let n = fm.len();
            fm.copy_from_slice(&m[offset..offset + n]);
            sm.copy_from_slice(&v[offset..offset + n]);
            offset += n;
        }
        optimizer.step = meta.step;
        let best = match (meta.best_epoch, meta.best_psnr) {
            (Some(epoch), Some(val_psnr)) if best_params.len() == total => Some(BestSnapshot {
                epoch,
                val_psnr,
                params: best_params,
            }),
            (None, _) => None,
            _ => return Err(Error::Integrity("best snapshot does not match the model".into())),
        };
        Ok(Trainer {
            config: meta.config,
            optimizer,
            epoch: meta.epoch,
            history: meta.history,
            best,
        })
    }

    pub fn save_state(&self, model: &DenoMambaModel, path: &Path) -> Result<()> {
        std::fs::write(path, self.state_bytes(model)).map_err(|e| Error::io(path, e))
    }

    pub fn load_state(path: &Path, model: &DenoMambaModel) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_state_bytes(&bytes, model)
    }
}

/// Mean and sample std of a history's validation PSNR over its last `k` epochs.
pub fn tail_val_psnr(history: &TrainHistory, k: usize) -> Result<(f64, f64)> {
    let vals: Vec<f64> = history.records.iter().rev().take(k).map(|r| r.val_psnr_mean).collect();
    let a = aggregate(&vals)?;
    Ok((a.mean, a.std))
}
