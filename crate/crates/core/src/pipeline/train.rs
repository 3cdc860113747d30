//! Mini-batch training with per-epoch shuffling, validation-driven early
//! stopping and best-checkpoint selection.

use std::io::Write;
use std::path::PathBuf;

use heightbins_tensor::{AdamW, Graph, Params, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{prepare_targets, total_loss, LevelTerms};
use crate::model::{Level, Model};
use crate::pipeline::config::RunConfig;
use crate::pipeline::data::{Dataset, Sample};
use crate::pipeline::evaluate::{evaluate, save_checkpoint};
use crate::synth::{derive_seed, Split};

/// Stops after `patience` consecutive observations without a strict
/// improvement of the best value.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records a value; returns whether it improved on the best so far.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = value.is_finite() && self.best.is_none_or(|b| value < b);
        if improved {
            self.best = Some(value);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxSteps,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean total loss over the epoch's samples.
    pub train_loss: f64,
    /// Mean L1 of the finest head over the epoch's samples.
    pub train_l1: f64,
    pub val_rmse: Option<f64>,
    pub val_rmse_m: Option<f64>,
    pub improved: bool,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x:.6}"));
        format!(
            "epoch={} steps={} train_loss={:.6} train_l1={:.6} val_rmse={} val_rmse_m={} improved={}",
            self.epoch,
            self.steps,
            self.train_loss,
            self.train_l1,
            f(self.val_rmse),
            f(self.val_rmse_m),
            self.improved
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters at the best validation round (the last ones if validation
    /// never produced a finite value).
    pub best_params: Params,
    pub last_params: Params,
    pub epochs: Vec<EpochRecord>,
    /// Batch loss of every optimizer update, in order.
    pub step_losses: Vec<f64>,
    pub best_val_rmse: Option<f64>,
    pub stop: StopReason,
}

/// Loss, per-level terms and gradients of one sample.
pub struct SampleStep {
    pub loss: f64,
    pub levels: Vec<(Level, LevelTerms)>,
    pub grads: Vec<Vec<f64>>,
}

pub fn sample_step(
    model: &Model,
    params: &Params,
    cfg: &RunConfig,
    sample: &Sample,
) -> Result<SampleStep> {
    let g = Graph::new();
    let p = g.bind(params);
    let s = sample.size;
    let image = g.constant(&Tensor::new(vec![sample.channels, s, s], sample.image.clone())?);
    let outs = model.forward(&g, &p, image)?;
    let pairs: Vec<(Level, _)> = model.cfg.levels.iter().copied().zip(outs).collect();
    let targets = prepare_targets(&g, &pairs, &sample.height, s, &model.cfg.head, &cfg.loss)?;
    let terms = total_loss(&g, &pairs, &targets, &model.cfg.head, &cfg.loss)?;
    let loss = g.item(terms.total);
    if !loss.is_finite() {
        return Ok(SampleStep {
            loss,
            levels: terms.levels,
            grads: Vec::new(),
        });
    }
    let grads = g.backward(terms.total)?;
    let grads = p
        .iter()
        .zip(params.iter())
        .map(|(&v, (_, _, t))| grads.get_or_zeros(v, t.len()))
        .collect();
    Ok(SampleStep {
        loss,
        levels: terms.levels,
        grads,
    })
}

/// Receives one line per epoch.
pub type Reporter<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Trains on the `train` split and validates on `val`.
pub fn train(cfg: &RunConfig, data: &Dataset, report: Option<Reporter<'_>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Data("no samples in the train split".into()));
    }
    let val: Vec<&Sample> = data.subset(Split::Val);
    let size = data.patch_size().expect("nonempty");
    let channels = data.samples[0].channels;
    if channels != cfg.model.input_channels {
        return Err(Error::Data(format!(
            "patches have {channels} channels, model.input_channels is {}",
            cfg.model.input_channels
        )));
    }
    let (model, mut params) = Model::new(&cfg.model, size, cfg.seed)?;
    train_model(cfg, model, &mut params, &train_idx, data, &val, report)
}

#[allow(clippy::too_many_arguments)]
fn train_model(
    cfg: &RunConfig,
    model: Model,
    params: &mut Params,
    train_idx: &[usize],
    data: &Dataset,
    val: &[&Sample],
    mut report: Option<Reporter<'_>>,
) -> Result<TrainOutcome> {
    let mut opt = AdamW::new(params, cfg.optimizer.adamw());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let out_dir: Option<PathBuf> = cfg.output_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log_file = match &out_dir {
        Some(dir) => Some(std::fs::File::create(dir.join("train.log"))?),
        None => None,
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let (mut loss_sum, mut l1_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = Vec::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let st = match sample_step(&model, params, cfg, &data.samples[i]) {
                    Ok(st) => st,
                    Err(e) if e.exit_code() == 4 => {
                        let msg = format!(
                            "{e} at epoch {epoch} step {} (seed {} batch seed {epoch_seed} sample {i})",
                            step_losses.len() + 1,
                            cfg.seed
                        );
                        return Err(numeric_dump(msg, &out_dir));
                    }
                    Err(e) => return Err(e),
                };
                if !st.loss.is_finite() {
                    return Err(non_finite(cfg, epoch, epoch_seed, step_losses.len() + 1, i, &st, &out_dir));
                }
                batch_loss += st.loss;
                loss_sum += st.loss;
                l1_sum += st.levels.last().map_or(0.0, |(_, t)| t.height);
                seen += 1;
                if acc.is_empty() {
                    acc = st.grads;
                } else {
                    for (a, g) in acc.iter_mut().zip(&st.grads) {
                        a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|v| *v *= scale);
            opt.step(params, &acc)
                .map_err(|e| Error::Numeric(format!("epoch {epoch} step {}: {e}", step_losses.len() + 1)))?;
            step_losses.push(batch_loss * scale);
            if let Some((_, name, _)) = params
                .iter()
                .find(|(_, _, t)| t.data().iter().any(|v| !v.is_finite()))
            {
                let msg = format!(
                    "non-finite parameter {name} after epoch {epoch} step {} (seed {} batch seed {epoch_seed}) batch loss {}",
                    step_losses.len(),
                    cfg.seed,
                    batch_loss * scale
                );
                return Err(numeric_dump(msg, &out_dir));
            }
            log::debug!("epoch {epoch} step {} loss {:.6}", step_losses.len(), batch_loss * scale);
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                stop = StopReason::MaxSteps;
                let rec = epoch_record(epoch, step_losses.len(), loss_sum, l1_sum, seen);
                epochs.push(rec);
                break 'epochs;
            }
        }

        let mut rec = epoch_record(epoch, step_losses.len(), loss_sum, l1_sum, seen);
        if epoch % cfg.val_every == 0 && !val.is_empty() {
            let r = match evaluate(&model, params, val, cfg.connectivity) {
                Ok(r) => r,
                Err(e) if e.exit_code() == 4 => {
                    let msg = format!(
                        "{e} while validating after epoch {epoch} step {} (seed {})",
                        step_losses.len(),
                        cfg.seed
                    );
                    return Err(numeric_dump(msg, &out_dir));
                }
                Err(e) => return Err(e),
            };
            rec.val_rmse = r.rmse;
            rec.val_rmse_m = r.rmse_m;
            rec.improved = stopper.observe(r.rmse.unwrap_or(f64::NAN));
            if rec.improved {
                best_params = params.clone();
                if let Some(dir) = &out_dir {
                    let extra = [
                        ("epoch", epoch.to_string()),
                        ("val_rmse", format!("{:.9}", r.rmse.unwrap_or(f64::NAN))),
                    ];
                    save_checkpoint(&dir.join("best.ckpt"), &model, params, &extra)?;
                }
            }
        }
        log::info!("{}", rec.to_line());
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", rec.to_line())?;
        }
        if let Some(r) = report.as_mut() {
            r(&rec);
        }
        let reached = cfg.target_train_l1.is_some_and(|t| rec.train_l1 < t);
        epochs.push(rec);
        if reached {
            stop = StopReason::TargetReached;
            break;
        }
        if stopper.should_stop() {
            stop = StopReason::Patience;
            break;
        }
    }

    if stopper.best().is_none() {
        best_params = params.clone();
    }
    if let Some(dir) = &out_dir {
        save_checkpoint(&dir.join("last.ckpt"), &model, params, &[])?;
        if stopper.best().is_none() {
            save_checkpoint(&dir.join("best.ckpt"), &model, params, &[])?;
        }
    }
    Ok(TrainOutcome {
        model,
        best_params,
        last_params: params.clone(),
        epochs,
        step_losses,
        best_val_rmse: stopper.best(),
        stop,
    })
}

fn epoch_record(epoch: usize, steps: usize, loss_sum: f64, l1_sum: f64, seen: usize) -> EpochRecord {
    let n = seen.max(1) as f64;
    EpochRecord {
        epoch,
        steps,
        train_loss: loss_sum / n,
        train_l1: l1_sum / n,
        val_rmse: None,
        val_rmse_m: None,
        improved: false,
    }
}

fn non_finite(
    cfg: &RunConfig,
    epoch: usize,
    epoch_seed: u64,
    step: usize,
    sample: usize,
    st: &SampleStep,
    out_dir: &Option<PathBuf>,
) -> Error {
    let terms: Vec<String> = st
        .levels
        .iter()
        .map(|(l, t)| {
            format!(
                "{l}:height={} bins={} htc={} dist={}",
                t.height, t.bins, t.htc, t.dist
            )
        })
        .collect();
    let msg = format!(
        "non-finite loss {} at epoch {epoch} step {step} (seed {} batch seed {epoch_seed} sample {sample}) {}",
        st.loss,
        cfg.seed,
        terms.join(" ")
    );
    numeric_dump(msg, out_dir)
}

/// Writes `msg` to `nonfinite.txt` in the output directory, if any.
fn numeric_dump(msg: String, out_dir: &Option<PathBuf>) -> Error {
    if let Some(dir) = out_dir {
        let _ = std::fs::write(dir.join("nonfinite.txt"), format!("{msg}\n"));
    }
    Error::Numeric(msg)
}
