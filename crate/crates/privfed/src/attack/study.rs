//! Paired leakage comparison: the same inversion attack against the three
//! capture points, trial by trial.
//!
//! Each trial builds a fresh seeded scene — K nodes holding one synthetic
//! image each, one shared model initialization — and attacks the victim
//! node's image through every adversary view: its bare gradient, its
//! plaintext round delta, and the securely aggregated global delta. All
//! three reconstructions are scored against the same normalized image, so
//! the per-trial errors are paired and a one-sided paired t-test can ask
//! whether each widening of the aggregation strictly degrades the attack.

use super::invert::{invert, AttackConfig};
use super::{capture_fed_plain, capture_fed_secure, capture_local, pooled_moments_of};
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::nn::data::{synthetic_dataset, Dataset};
use crate::nn::{Architecture, ModelParams};
use crate::seed;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Independent seeded trials; at least 2 for the paired test.
    pub trials: usize,
    /// Nodes per federation, one image each; node 0 is the victim.
    pub nodes: usize,
    /// Synthetic image side length.
    pub side: usize,
    /// Hidden widths of the victim MLP.
    pub hidden: Vec<usize>,
    /// Local epochs behind each federated round update.
    pub epochs: usize,
    pub lr: f64,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            trials: 20,
            nodes: 3,
            side: 8,
            hidden: vec![16],
            epochs: 2,
            lr: 0.2,
            attack: AttackConfig { iterations: 400, ..AttackConfig::default() },
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::Parameter(format!(
                "paired comparison needs at least 2 trials, got {}",
                self.trials
            )));
        }
        if self.nodes < 2 {
            return Err(Error::Parameter(
                "secure aggregation needs at least 2 nodes".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("at least one local epoch is required".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.lr)));
        }
        self.attack.validate()
    }
}

/// Best reconstruction error per scenario for one seeded scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub local_mse: f64,
    pub fed_plain_mse: f64,
    pub fed_secure_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub trials: Vec<TrialOutcome>,
    pub mean_local: f64,
    pub mean_fed_plain: f64,
    pub mean_fed_secure: f64,
    /// One-sided paired p-value that fed-plain reconstructions are worse
    /// (higher MSE) than local ones.
    pub p_local_vs_fed_plain: f64,
    /// One-sided paired p-value that fed-secure is worse than fed-plain.
    pub p_fed_plain_vs_fed_secure: f64,
    /// Mean MSE strictly increases local -> fed-plain -> fed-secure.
    pub strictly_ordered: bool,
}

/// One-sided paired t-test p-value for `mean(treatment - baseline) > 0`.
/// With zero variance in the differences the test degenerates to 0 or 1
/// by the sign of the mean.
pub fn paired_one_sided_p(baseline: &[f64], treatment: &[f64]) -> Result<f64> {
    if baseline.len() != treatment.len() {
        return Err(Error::Shape(format!(
            "paired samples differ in length: {} vs {}",
            baseline.len(),
            treatment.len()
        )));
    }
    let n = baseline.len();
    if n < 2 {
        return Err(Error::Degenerate("a paired test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = treatment.iter().zip(baseline).map(|(t, b)| t - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean > 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Parameter(format!("t distribution: {e}")))?;
    Ok(1.0 - dist.cdf(t))
}

/// Runs the full paired study. Every derived quantity — scene data, model
/// initialization, training, attack restarts — is seeded from
/// `config.seed` and the trial index, so reports reproduce exactly.
pub fn run_ordering_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let mut trials = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let trial_seed = seed::derive_seed(config.seed, &format!("study.trial{trial}"));
        trials.push(run_trial(config, trial, trial_seed)?);
    }
    let mean = |pick: fn(&TrialOutcome) -> f64| {
        trials.iter().map(pick).sum::<f64>() / trials.len() as f64
    };
    let collect = |pick: fn(&TrialOutcome) -> f64| trials.iter().map(pick).collect::<Vec<f64>>();
    let (local, plain, secure) = (
        collect(|t| t.local_mse),
        collect(|t| t.fed_plain_mse),
        collect(|t| t.fed_secure_mse),
    );
    let (mean_local, mean_fed_plain, mean_fed_secure) =
        (mean(|t| t.local_mse), mean(|t| t.fed_plain_mse), mean(|t| t.fed_secure_mse));
    Ok(StudyReport {
        config: config.clone(),
        trials,
        mean_local,
        mean_fed_plain,
        mean_fed_secure,
        p_local_vs_fed_plain: paired_one_sided_p(&local, &plain)?,
        p_fed_plain_vs_fed_secure: paired_one_sided_p(&plain, &secure)?,
        strictly_ordered: mean_local < mean_fed_plain && mean_fed_plain < mean_fed_secure,
    })
}

fn run_trial(config: &StudyConfig, trial: usize, trial_seed: u64) -> Result<TrialOutcome> {
    // One image per node so every capture traces back to a single sample
    // and the victim's image is the unambiguous ground truth everywhere.
    let pool = synthetic_dataset(trial_seed, "study.scene", config.nodes, config.side)?;
    let nodes: Vec<Dataset> = (0..config.nodes).map(|k| pool.subset(&[k])).collect();
    let arch =
        Architecture::mlp(config.side * config.side, config.hidden.clone(), pool.classes);
    let mut fed = FederationConfig::new(arch.clone());
    fed.rounds = 1;
    fed.epochs = config.epochs;
    fed.lr = config.lr;
    fed.batch_size = 1;
    fed.patience = None;
    fed.seed = trial_seed;

    let global = ModelParams::init(&arch, trial_seed)?;
    let moments = pooled_moments_of(&nodes, fed.frac_bits)?;
    let victim_batch = nodes[0].normalized(moments.mean, moments.std).to_batch_for(&arch)?;
    let truth = victim_batch.inputs.clone();

    let mut attack = config.attack.clone();
    attack.seed = seed::derive_seed(trial_seed, "study.attack");

    let local = capture_local(&global, &victim_batch)?;
    let fed_plain = capture_fed_plain(&fed, &nodes, 0)?;
    let (fed_secure, _) = capture_fed_secure(&fed, &nodes)?;

    let mse_of = |capture| -> Result<f64> {
        let report = invert(&global, &capture, Some(&truth), &attack)?;
        report.best_mse.ok_or_else(|| {
            Error::Degenerate("every restart aborted; no reconstruction to score".into())
        })
    };
    Ok(TrialOutcome {
        trial,
        seed: trial_seed,
        local_mse: mse_of(local)?,
        fed_plain_mse: mse_of(fed_plain)?,
        fed_secure_mse: mse_of(fed_secure)?,
    })
}
