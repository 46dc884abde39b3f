//! Local SGD training with seeded shuffling and early stopping keyed on
//! validation Matthews correlation.
//!
//! Shuffle order depends only on `(seed, round_tag, epoch)`, never on a node
//! identity, so nodes holding identical data walk identical trajectories.

use super::data::Dataset;
use super::metrics::evaluate;
use super::model::backward;
use super::ModelParams;
use crate::error::{Error, Result};
use crate::seed;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` disables early stopping; `Some(p)` stops once the validation
    /// MCC has gone `p` consecutive epochs without a strict improvement
    /// (`Some(0)` therefore runs exactly one epoch).
    pub patience: Option<usize>,
    pub seed: u64,
    /// Distinguishes shuffle streams between federated rounds.
    pub round_tag: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.1, epochs: 5, batch_size: 16, patience: None, seed: 0, round_tag: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Tracks the best value of a maximized metric and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    streak: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::NEG_INFINITY, best_epoch: 0, streak: 0 }
    }

    /// Records one epoch's metric; returns true when training should stop.
    /// The first observation always counts as an improvement.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.streak = 0;
        } else {
            self.streak += 1;
        }
        self.streak >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_metric(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mcc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose weights the model was left at (last epoch when no
    /// validation set was given).
    pub best_epoch: usize,
    pub best_val_mcc: Option<f64>,
    pub history: Vec<EpochStat>,
}

/// Runs minibatch SGD on `params` in place. With a non-empty validation set
/// the model is rolled back to the epoch with the highest validation MCC;
/// otherwise all epochs run and the final weights stand.
pub fn train_local(
    params: &mut ModelParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    params.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    let arch = params.arch.clone();
    let val_batch = if val.is_empty() { None } else { Some(val.to_batch_for(&arch)?) };
    let mut stopper = EarlyStopper::new(cfg.patience.unwrap_or(usize::MAX));
    let mut best_params: Option<ModelParams> = None;
    let mut history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        let label = format!("shuffle.r{}.e{}", cfg.round_tag, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng_from(cfg.seed, &label));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.subset(chunk).to_batch_for(&arch)?;
            let (loss, grads) = backward(params, &batch)?;
            params.sgd_step(&grads, cfg.lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        epochs_run = epoch;

        let val_mcc = match &val_batch {
            Some(b) => Some(evaluate(params, b)?.mcc),
            None => None,
        };
        history.push(EpochStat { epoch, train_loss, val_mcc });

        if let Some(mcc) = val_mcc {
            let stop = stopper.observe(epoch, mcc);
            if stopper.best_epoch() == epoch {
                best_params = Some(params.clone());
            }
            if stop {
                break;
            }
        }
    }

    let (best_epoch, best_val_mcc) = if let Some(best) = best_params {
        *params = best;
        (stopper.best_epoch(), Some(stopper.best_metric()))
    } else {
        (epochs_run, None)
    };
    Ok(TrainReport { epochs_run, best_epoch, best_val_mcc, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::synthetic_dataset;
    use crate::nn::metrics::evaluate;
    use crate::nn::Architecture;
    use crate::tensor::PlainTensor;

    /// Two linearly separable point clouds as a `[n, 1, 1, 2]` image set.
    fn separable_toy(n_per_class: usize) -> Dataset {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            let jitter = 0.02 * (i % 7) as f64;
            data.extend_from_slice(&[0.8 + jitter, 0.7 - jitter]);
            labels.push(0);
            data.extend_from_slice(&[-0.8 - jitter, -0.6 + jitter]);
            labels.push(1);
        }
        let images =
            PlainTensor::from_vec(&[2 * n_per_class, 1, 1, 2], data).unwrap();
        Dataset::new(images, labels, 2).unwrap()
    }

    #[test]
    fn stopper_patience_zero_stops_immediately() {
        let mut s = EarlyStopper::new(0);
        assert!(s.observe(1, 0.9), "patience 0 stops after the first epoch");
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn stopper_monotone_improvement_never_stops() {
        let mut s = EarlyStopper::new(1);
        for (e, m) in [0.1, 0.2, 0.3, 0.4, 0.5].into_iter().enumerate() {
            assert!(!s.observe(e + 1, m));
        }
        assert_eq!(s.best_epoch(), 5);
    }

    #[test]
    fn stopper_counts_consecutive_flat_epochs() {
        let mut s = EarlyStopper::new(2);
        assert!(!s.observe(1, 0.5));
        assert!(!s.observe(2, 0.8));
        assert!(!s.observe(3, 0.7), "one bad epoch is within patience 2");
        assert!(s.observe(4, 0.6), "two consecutive non-improving epochs");
        assert_eq!(s.best_epoch(), 2);
        // A recovery in between resets the streak; an equal value does not.
        let mut s = EarlyStopper::new(1);
        s.observe(1, 0.5);
        assert!(!s.observe(2, 0.6));
        assert!(s.observe(3, 0.6));
    }

    #[test]
    fn separable_toy_hits_ninety_nine_percent_within_200_steps() {
        let data = separable_toy(20); // 40 samples
        let arch = Architecture::mlp(2, vec![8], 2);
        let mut params = ModelParams::init(&arch, 7).unwrap();
        let cfg = TrainConfig {
            lr: 0.5,
            epochs: 40,
            batch_size: 8, // 5 batches/epoch * 40 epochs = 200 steps
            patience: None,
            seed: 7,
            round_tag: 0,
        };
        train_local(&mut params, &data, &data.subset(&[]), &cfg).unwrap();
        let report = evaluate(&params, &data.to_batch_for(&arch).unwrap()).unwrap();
        assert!(report.accuracy >= 0.99, "train accuracy {} below 0.99", report.accuracy);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = synthetic_dataset(11, "det", 24, 8).unwrap();
        let (train, val) = data.split(0.25, 11, "det.split");
        let arch = Architecture::mlp(64, vec![16], 3);
        let cfg = TrainConfig { lr: 0.2, epochs: 3, batch_size: 4, patience: None, seed: 3, round_tag: 0 };
        let mut a = ModelParams::init(&arch, 9).unwrap();
        let mut b = ModelParams::init(&arch, 9).unwrap();
        let ra = train_local(&mut a, &train, &val, &cfg).unwrap();
        let rb = train_local(&mut b, &train, &val, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&ra).unwrap(),
            serde_json::to_string(&rb).unwrap()
        );
    }

    #[test]
    fn patience_zero_runs_exactly_one_epoch() {
        let data = synthetic_dataset(12, "p0", 18, 8).unwrap();
        let (train, val) = data.split(0.2, 12, "p0.split");
        let arch = Architecture::mlp(64, vec![8], 3);
        let mut params = ModelParams::init(&arch, 4).unwrap();
        let cfg = TrainConfig { lr: 0.1, epochs: 10, batch_size: 4, patience: Some(0), seed: 5, round_tag: 0 };
        let report = train_local(&mut params, &train, &val, &cfg).unwrap();
        assert_eq!(report.epochs_run, 1);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn model_is_rolled_back_to_best_epoch() {
        let data = synthetic_dataset(13, "roll", 30, 8).unwrap();
        let (train, val) = data.split(0.2, 13, "roll.split");
        let arch = Architecture::mlp(64, vec![16], 3);
        let cfg = TrainConfig { lr: 0.3, epochs: 6, batch_size: 4, patience: None, seed: 8, round_tag: 0 };
        let mut full = ModelParams::init(&arch, 2).unwrap();
        let report = train_local(&mut full, &train, &val, &cfg).unwrap();
        // Replaying only the first `best_epoch` epochs lands on the same
        // weights the full run rolled back to.
        let mut replay = ModelParams::init(&arch, 2).unwrap();
        let cfg2 = TrainConfig { epochs: report.best_epoch, ..cfg };
        train_local(&mut replay, &train, &val, &cfg2).unwrap();
        assert_eq!(full, replay);
        let best_seen = report
            .history
            .iter()
            .filter_map(|s| s.val_mcc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_val_mcc, Some(best_seen));
    }

    #[test]
    fn empty_validation_disables_early_stopping() {
        let data = synthetic_dataset(14, "noval", 12, 8).unwrap();
        let arch = Architecture::mlp(64, vec![8], 3);
        let mut params = ModelParams::init(&arch, 1).unwrap();
        let cfg = TrainConfig { lr: 0.1, epochs: 4, batch_size: 4, patience: Some(0), seed: 2, round_tag: 0 };
        let report = train_local(&mut params, &data, &data.subset(&[]), &cfg).unwrap();
        assert_eq!(report.epochs_run, 4);
        assert_eq!(report.best_val_mcc, None);
        assert!(report.history.iter().all(|s| s.val_mcc.is_none()));
    }

    #[test]
    fn rejects_bad_configuration() {
        let data = separable_toy(4);
        let arch = Architecture::mlp(2, vec![4], 2);
        let mut params = ModelParams::init(&arch, 0).unwrap();
        let empty = data.subset(&[]);
        for cfg in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(train_local(&mut params, &data, &empty, &cfg).is_err());
        }
        assert!(matches!(
            train_local(&mut params, &empty, &empty, &TrainConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn round_tag_steers_the_shuffle() {
        let toy = synthetic_dataset(15, "tag", 12, 8).unwrap();
        let empty = toy.subset(&[]);
        let arch = Architecture::mlp(64, vec![4], 3);
        let base = TrainConfig { lr: 0.05, epochs: 2, batch_size: 2, patience: None, seed: 1, round_tag: 0 };
        let mut q1 = ModelParams::init(&arch, 3).unwrap();
        let mut q2 = ModelParams::init(&arch, 3).unwrap();
        let r1 = train_local(&mut q1, &toy, &empty, &TrainConfig { round_tag: 1, ..base.clone() }).unwrap();
        train_local(&mut q2, &toy, &empty, &TrainConfig { round_tag: 2, ..base }).unwrap();
        assert_ne!(q1, q2, "round tag must steer the shuffle");
        assert_eq!(r1.history.len(), 2);
        assert!(r1.history.iter().all(|s| s.train_loss.is_finite()));
    }
}
