//! Soft-Dice training with RMSprop, per-epoch re-augmentation and
//! best-validation checkpointing.

use super::checkpoint::{Checkpoint, Entry, OPTIMIZER_PREFIX};
use super::model::DuckNet;
use crate::blocks::ParamRole;
use crate::data::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, DEFAULT_SMOOTH, DEFAULT_THRESHOLD};
use crate::seed;
use crate::tensor::{rmsprop_step, Mode, RmspropState, Scalar, Tensor4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_size: (usize, usize),
    pub seed: u64,
    pub augment: bool,
    pub augment_cfg: AugmentConfig,
    pub smooth: f64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 4,
            epochs: 600,
            input_size: (352, 352),
            seed: 0,
            augment: true,
            augment_cfg: AugmentConfig::default(),
            smooth: DEFAULT_SMOOTH,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        Ok(())
    }
}

/// One RMSprop accumulator per trainable tensor, in visit order.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    lr: f64,
    states: Vec<(String, RmspropState<S>)>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(net: &mut DuckNet<S>, lr: f64) -> Self {
        let mut states = Vec::new();
        net.visit(&mut |name, role, t| {
            if role == ParamRole::Trainable {
                states.push((name.to_string(), RmspropState::new(t.shape().len(), lr)));
            }
        });
        Optimizer { lr, states }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update to every trainable tensor. Gradients are all
    /// checked before any parameter changes.
    pub fn step(&mut self, net: &mut DuckNet<S>) -> Result<()> {
        let mut bad = None;
        net.visit(&mut |name, role, t| {
            if role == ParamRole::Trainable && bad.is_none() {
                if let Some(i) = t.grad().and_then(|g| g.iter().position(|v| !v.is_finite())) {
                    bad = Some(Error::NonFinite {
                        op: "train_step",
                        detail: format!("gradient of {name}[{i}]"),
                    });
                }
            }
        });
        if let Some(e) = bad {
            return Err(e);
        }
        let mut k = 0;
        let mut result = Ok(());
        let states = &mut self.states;
        net.visit(&mut |_, role, t| {
            if role != ParamRole::Trainable || result.is_err() {
                return;
            }
            let (data, grad) = t.data_and_grad_mut();
            let state = &mut states[k].1;
            k += 1;
            if let Some(grad) = grad {
                result = rmsprop_step(data, grad, state);
            }
        });
        result
    }

    /// Accumulators as checkpoint entries named `rmsprop/<param>`.
    pub fn entries(&self, net: &mut DuckNet<S>) -> Vec<Entry> {
        let mut shapes = Vec::new();
        net.visit(&mut |_, role, t| {
            if role == ParamRole::Trainable {
                shapes.push(t.shape());
            }
        });
        self.states
            .iter()
            .zip(shapes)
            .map(|((name, s), shape)| Entry {
                name: format!("{OPTIMIZER_PREFIX}{name}"),
                shape,
                data: s.sq_avg.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect()
    }
}

/// Forward, soft Dice over the whole batch, backward and one optimiser
/// update. Returns the loss before the update.
pub fn train_step<S: Scalar>(
    net: &mut DuckNet<S>,
    opt: &mut Optimizer<S>,
    images: &Tensor4<S>,
    masks: &Tensor4<S>,
    smooth: f64,
) -> Result<f64> {
    net.zero_grad();
    let probs = net.forward(images, Mode::Train)?;
    let (loss, grad) = metrics::dice_loss_soft(&probs, masks, smooth)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "train_step",
            detail: format!("loss = {loss}"),
        });
    }
    net.backward(&grad)?;
    opt.step(net)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// One `epoch train_loss val_dice` line per epoch.
    pub fn to_text(&self) -> String {
        self.epochs
            .iter()
            .map(|r| format!("{} {:.9} {:.9}\n", r.epoch, r.train_loss, r.val_dice))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: History,
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub last: Checkpoint,
}

fn mean_dice<S: Scalar>(net: &mut DuckNet<S>, samples: &[Sample], threshold: f64) -> Result<f64> {
    let report = metrics::evaluate(net, samples, threshold)?;
    Ok(report.mean[0])
}

fn batch_tensors<S: Scalar>(batch: &[Sample]) -> Result<(Tensor4<S>, Tensor4<S>)> {
    let images: Vec<Tensor4<S>> = batch.iter().map(|s| s.image.cast()).collect();
    let masks: Vec<Tensor4<S>> = batch.iter().map(|s| s.mask.cast()).collect();
    Ok((
        Tensor4::stack(&images.iter().collect::<Vec<_>>())?,
        Tensor4::stack(&masks.iter().collect::<Vec<_>>())?,
    ))
}

/// Drives training of one network.
pub struct Trainer<'a, S> {
    pub net: &'a mut DuckNet<S>,
    pub opt: Optimizer<S>,
    pub cfg: TrainConfig,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(net: &'a mut DuckNet<S>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = Optimizer::new(net, cfg.lr);
        Ok(Trainer { net, opt, cfg })
    }

    /// The epoch's training samples, re-augmented and in the epoch's batch
    /// order.
    pub fn epoch_samples(&self, train: &[Sample], epoch: usize) -> Vec<Sample> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(self.cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        order
            .into_iter()
            .map(|i| {
                let s = &train[i];
                if self.cfg.augment {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::sample_stream(self.cfg.seed, epoch as u64, &s.id));
                    augment(s, &self.cfg.augment_cfg, &mut rng)
                } else {
                    s.clone()
                }
            })
            .collect()
    }

    /// Runs one epoch and returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &[Sample], epoch: usize) -> Result<f64> {
        let samples = self.epoch_samples(train, epoch);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, batch) in samples.chunks(self.cfg.batch_size).enumerate() {
            let (images, masks) = batch_tensors::<S>(batch)?;
            let loss = train_step(self.net, &mut self.opt, &images, &masks, self.cfg.smooth).map_err(|e| match e {
                Error::NonFinite { op, detail } => Error::NonFinite {
                    op,
                    detail: format!("{detail} at epoch {epoch}, step {step}"),
                },
                other => other,
            })?;
            total += loss;
            steps += 1;
        }
        Ok(total / steps as f64)
    }

    fn snapshot(&mut self) -> Checkpoint {
        let mut ckpt = Checkpoint::capture(self.net);
        ckpt.entries.extend(self.opt.entries(self.net));
        ckpt
    }

    /// Trains for `cfg.epochs` epochs. Samples must already be at the
    /// network's input size. Without validation samples the training set
    /// (un-augmented) selects the best epoch.
    pub fn fit(&mut self, train: &[Sample], val: &[Sample]) -> Result<TrainOutcome> {
        self.fit_with(train, val, |_| {})
    }

    /// [`Trainer::fit`], calling `on_epoch` after every epoch.
    pub fn fit_with(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::Data("the training split is empty".into()));
        }
        let select = if val.is_empty() { train } else { val };
        let mut history = History::default();
        let mut best: Option<(usize, f64, Checkpoint)> = None;
        for epoch in 1..=self.cfg.epochs {
            let train_loss = self.run_epoch(train, epoch)?;
            let val_dice = mean_dice(self.net, select, self.cfg.threshold)?;
            let record = EpochRecord {
                epoch,
                train_loss,
                val_dice,
            };
            on_epoch(&record);
            history.epochs.push(record);
            if best.as_ref().is_none_or(|b| val_dice > b.1) {
                best = Some((epoch, val_dice, self.snapshot()));
            }
        }
        let (best_epoch, best_val_dice, best) = best.expect("at least one epoch");
        Ok(TrainOutcome {
            history,
            best,
            best_epoch,
            best_val_dice,
            last: self.snapshot(),
        })
    }
}

pub fn train<S: Scalar>(
    net: &mut DuckNet<S>,
    train: &[Sample],
    val: &[Sample],
    cfg: TrainConfig,
) -> Result<TrainOutcome> {
    Trainer::new(net, cfg)?.fit(train, val)
}
