//! Multi-node federated training: dataset-size-weighted averaging of full
//! model replicas, secure aggregation of both model updates and
//! normalization statistics, per-round local early stopping, and
//! MCC-driven hyperparameter search.
//!
//! Aggregation runs in one of two modes over the same simulated network.
//! In plain mode every node ships its weights to the collector in the
//! clear; in secure mode each node secret-shares `n_k`-scaled weights and
//! its sample count, so only `Σ n_k·w_k` and `N = Σ n_k` are ever revealed.
//! The collector divides the revealed aggregate and broadcasts the new
//! global model, which is public output in both modes.

use crate::error::{Error, Result};
use crate::fixed::{decode_fixed, encode_fixed, encode_scalar, FixedTensor, DEFAULT_FRAC_BITS};
use crate::nn::data::Dataset;
use crate::nn::metrics::{evaluate, ConfusionMatrix};
use crate::nn::train::{train_local, TrainConfig, TrainReport};
use crate::nn::{Architecture, ModelParams};
use crate::seed;
use crate::shares::{secure_moments, secure_sum_collect, Moments, SessionId};
use crate::tensor::PlainTensor;
use crate::transport::sim::{run_sim, LatencyModel, SimParty, Transcript};
use crate::transport::{Frame, Meter, MsgType, Net};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Share of each node's data held out for local early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Grid of trial values for hyperparameter search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lrs: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_sizes: Vec<usize>,
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.lrs.len() * self.epochs.len() * self.batch_sizes.len()
    }

    fn validate(&self) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::Parameter("empty hyperparameter search space".into()));
        }
        if self.lrs.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::Parameter("search learning rates must be positive".into()));
        }
        if self.epochs.contains(&0) || self.batch_sizes.contains(&0) {
            return Err(Error::Parameter("search epochs and batch sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Full grid in lexicographic (lr, epochs, batch) order.
    pub fn grid(&self) -> Vec<TrialConfig> {
        let mut out = Vec::with_capacity(self.size());
        for &lr in &self.lrs {
            for &epochs in &self.epochs {
                for &batch_size in &self.batch_sizes {
                    out.push(TrialConfig { lr, epochs, batch_size });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    pub arch: Architecture,
    /// Federated rounds R.
    pub rounds: usize,
    /// Local epochs per round E.
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Early-stopping patience; `None` always runs the full E epochs.
    pub patience: Option<usize>,
    /// Secret-shared aggregation on/off.
    pub secure: bool,
    pub seed: u64,
    /// Fixed-point precision for secure sums.
    pub frac_bits: u8,
    /// One-way link latency of the simulated network.
    pub latency_ms: u64,
    pub search: SearchSpace,
    /// Reduced round count used for each hyperparameter trial.
    pub search_rounds: usize,
}

impl FederationConfig {
    pub fn new(arch: Architecture) -> Self {
        FederationConfig {
            arch,
            rounds: 3,
            epochs: 2,
            lr: 0.1,
            batch_size: 16,
            patience: None,
            secure: false,
            seed: 0,
            frac_bits: DEFAULT_FRAC_BITS,
            latency_ms: 0,
            search: SearchSpace::default(),
            search_rounds: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.rounds == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("rounds, epochs, and batch size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.lr)));
        }
        if self.frac_bits == 0 || self.frac_bits > 32 {
            return Err(Error::Parameter(format!("frac_bits {} outside 1..=32", self.frac_bits)));
        }
        Ok(())
    }

    fn train_config(&self, round: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            round_tag: round,
        }
    }
}

/// One federated round as seen by the collector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub mode: String,
    /// Per node, `None` when the node had nothing to train on.
    pub train_loss: Vec<Option<f64>>,
    pub val_mcc: Vec<Option<f64>>,
    /// Collector-side transport meter deltas for this round.
    pub comm_rounds: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub virtual_time_ns: u64,
}

/// Everything a finished federation produced.
pub struct FederationRun {
    pub params: ModelParams,
    pub reports: Vec<RoundReport>,
    /// Global model after each round, in order.
    pub round_params: Vec<ModelParams>,
    /// Pooled normalization statistics used by every node.
    pub moments: Moments,
    /// MCC of the final model over the pooled local validation splits.
    pub final_val_mcc: Option<f64>,
    pub meters: Vec<Meter>,
    /// Recorded network traffic (absent for a single offline node).
    pub transcript: Option<Transcript>,
}

/// Dataset-size-weighted average of full replicas, computed in anchored
/// form `w₁ + Σ λ_k (w_k − w₁)` so averaging identical replicas returns
/// them bit-for-bit.
pub fn weighted_fedavg(updates: &[(ModelParams, u64)]) -> Result<ModelParams> {
    let total: u64 = updates.iter().map(|(_, n)| *n).sum();
    if updates.is_empty() || total == 0 {
        return Err(Error::Degenerate("no weighted updates to average".into()));
    }
    let anchor = updates[0].0.clone();
    let mut out = anchor.clone();
    for (w, n) in updates {
        if w.arch != anchor.arch {
            return Err(Error::Shape("mixed architectures in federated average".into()));
        }
        let lambda = *n as f64 / total as f64;
        if lambda == 0.0 {
            continue;
        }
        for (o, (wt, at)) in out.named.iter_mut().zip(w.named.iter().zip(&anchor.named)) {
            for (ov, (wv, av)) in o.1.data.iter_mut().zip(wt.1.data.iter().zip(&at.1.data)) {
                *ov += lambda * (wv - av);
            }
        }
    }
    Ok(out)
}

/// Network round of secure aggregation: contributes `n_k·w_k ‖ n_k` as
/// secret shares, reveals only the totals at `collector`, divides there,
/// and broadcasts the new global model to every node. Returns that global.
pub fn secure_weighted_fedavg(
    net: &mut impl Net,
    session: SessionId,
    params: &ModelParams,
    n_k: u64,
    frac_bits: u8,
    collector: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ModelParams> {
    let flat = params.flatten();
    let mut scaled: Vec<f64> = flat.data.iter().map(|w| *w * n_k as f64).collect();
    scaled.push(n_k as f64);
    let contribution =
        encode_fixed(&PlainTensor::from_vec(&[scaled.len()], scaled)?, frac_bits)?;
    let total = secure_sum_collect(net, session, &contribution, collector, rng)?;
    if net.me() == collector {
        let dec = decode_fixed(&total.expect("collector receives the total"));
        let (sum, n_total) = dec.data.split_at(dec.data.len() - 1);
        if n_total[0] < 0.5 {
            return Err(Error::Degenerate("federation has no training samples".into()));
        }
        let global: Vec<f64> = sum.iter().map(|v| v / n_total[0]).collect();
        let mut payload = Vec::with_capacity(global.len() * 8);
        for v in &global {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for j in 0..net.n_parties() {
            if j != collector {
                net.send(j, Frame::new(MsgType::Open, session, payload.clone()))?;
            }
        }
        let tensor = PlainTensor::from_vec(&[global.len()], global)?;
        ModelParams::unflatten(&params.arch, &tensor)
    } else {
        let frame = net.recv(collector)?;
        if frame.session_id != session || frame.msg_type != MsgType::Open {
            return Err(Error::Protocol("expected the aggregated model broadcast".into()));
        }
        parse_f64_payload(&frame.payload, params.numel())
            .and_then(|t| ModelParams::unflatten(&params.arch, &t))
    }
}

/// Plaintext aggregation round: every node ships `(n_k, w_k)` to the
/// collector in the clear; the collector averages and broadcasts.
pub fn plain_fedavg_round(
    net: &mut impl Net,
    session: SessionId,
    params: &ModelParams,
    n_k: u64,
    collector: usize,
) -> Result<ModelParams> {
    let me = net.me();
    if me == collector {
        let mut updates = vec![(params.clone(), n_k)];
        for j in 0..net.n_parties() {
            if j == collector {
                continue;
            }
            let frame = net.recv(j)?;
            if frame.session_id != session || frame.msg_type != MsgType::Share {
                return Err(Error::Protocol("expected a plaintext model update".into()));
            }
            if frame.payload.len() < 8 {
                return Err(Error::Format("plaintext update too short".into()));
            }
            let n = u64::from_le_bytes(frame.payload[..8].try_into().unwrap());
            let t = parse_f64_payload(&frame.payload[8..], params.numel())?;
            updates.push((ModelParams::unflatten(&params.arch, &t)?, n));
        }
        // Received in peer order 1..K; restore node order with self first.
        let global = weighted_fedavg(&updates)?;
        let flat = global.flatten();
        let mut payload = Vec::with_capacity(flat.data.len() * 8);
        for v in &flat.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for j in 0..net.n_parties() {
            if j != collector {
                net.send(j, Frame::new(MsgType::Open, session, payload.clone()))?;
            }
        }
        Ok(global)
    } else {
        let flat = params.flatten();
        let mut payload = Vec::with_capacity(8 + flat.data.len() * 8);
        payload.extend_from_slice(&n_k.to_le_bytes());
        for v in &flat.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        net.send(collector, Frame::new(MsgType::Share, session, payload))?;
        let frame = net.recv(collector)?;
        if frame.session_id != session || frame.msg_type != MsgType::Open {
            return Err(Error::Protocol("expected the aggregated model broadcast".into()));
        }
        parse_f64_payload(&frame.payload, params.numel())
            .and_then(|t| ModelParams::unflatten(&params.arch, &t))
    }
}

fn parse_f64_payload(bytes: &[u8], want: usize) -> Result<PlainTensor> {
    if bytes.len() != want * 8 {
        return Err(Error::Format(format!(
            "model payload carries {} bytes, expected {}",
            bytes.len(),
            want * 8
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PlainTensor::from_vec(&[want], data)
}

/// One node's local contribution to a federated round: start from the
/// global replica, run local epochs with early stopping, and return the
/// best-epoch weights plus the per-epoch history.
pub fn local_train_round(
    global: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &FederationConfig,
    round: u64,
) -> Result<(ModelParams, TrainReport)> {
    let mut params = global.clone();
    let report = train_local(&mut params, train, val, &cfg.train_config(round))?;
    Ok((params, report))
}

/// Per-node pixel statistics contributed to the pooled moments:
/// `(sum, sum of squares, pixel count)`.
pub fn pixel_sums(ds: &Dataset) -> (f64, f64, u64) {
    let sum: f64 = ds.images.data.iter().sum();
    let sum_sq: f64 = ds.images.data.iter().map(|v| v * v).sum();
    (sum, sum_sq, ds.images.numel() as u64)
}

/// Single-node stand-in for securely pooled statistics: the same
/// encode-sum-decode arithmetic as [`secure_moments`], so one node's local
/// moments and K identical nodes' pooled moments agree exactly.
pub fn pooled_moments_local(ds: &Dataset, frac_bits: u8) -> Result<Moments> {
    let (sum, sum_sq, count) = pixel_sums(ds);
    let t = FixedTensor {
        shape: vec![3],
        frac_bits,
        data: vec![
            encode_scalar(sum, frac_bits)?,
            encode_scalar(sum_sq, frac_bits)?,
            encode_scalar(count as f64, frac_bits)?,
        ],
    };
    let dec = decode_fixed(&t);
    let (sum, sum_sq, count) = (dec.data[0], dec.data[1], dec.data[2]);
    if count <= 0.0 {
        return Ok(Moments { mean: 0.0, std: 0.0, count: 0.0 });
    }
    let mean = sum / count;
    let var = (sum_sq / count - mean * mean).max(0.0);
    Ok(Moments { mean, std: var.sqrt(), count })
}

/// Normalize a node's data with the pooled moments and carve off the local
/// validation split. The split depends only on the federation seed, so
/// nodes holding identical data make identical splits.
pub fn normalize_and_split(node: &Dataset, moments: &Moments, seed_root: u64) -> (Dataset, Dataset) {
    node.normalized(moments.mean, moments.std).split(VALIDATION_FRACTION, seed_root, "fed.valsplit")
}

/// Per-node diagnostics shipped to the collector each round. Scalar
/// aggregates only — never parameter or pixel data.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeStat {
    train_loss: Option<f64>,
    val_mcc: Option<f64>,
}

struct PartyOutcome {
    global: ModelParams,
    moments: Moments,
    reports: Vec<RoundReport>,
    round_params: Vec<ModelParams>,
    final_val_mcc: Option<f64>,
}

/// The full protocol for one party; party 0 doubles as the collector.
fn run_node(
    net: &mut SimParty,
    cfg: &FederationConfig,
    ds: &Dataset,
) -> Result<PartyOutcome> {
    let me = net.me();
    let n_parties = net.n_parties();
    let collector = 0usize;
    let mut rng: ChaCha12Rng = seed::rng_from(cfg.seed, &format!("fed.rng.node{me}"));

    // Pool normalization statistics before any training.
    let sid_m = seed::derive_seed128(cfg.seed, "fed.sid.moments");
    let (sum, sum_sq, count) = pixel_sums(ds);
    let pooled =
        secure_moments(net, sid_m, sum, sum_sq, count, cfg.frac_bits, collector, &mut rng)?;
    let moments = if me == collector {
        let m = pooled.expect("collector learns the pooled moments");
        let mut payload = Vec::with_capacity(24);
        payload.extend_from_slice(&m.mean.to_le_bytes());
        payload.extend_from_slice(&m.std.to_le_bytes());
        payload.extend_from_slice(&m.count.to_le_bytes());
        for j in 0..n_parties {
            if j != collector {
                net.send(j, Frame::new(MsgType::Open, sid_m, payload.clone()))?;
            }
        }
        m
    } else {
        let frame = net.recv(collector)?;
        if frame.session_id != sid_m || frame.msg_type != MsgType::Open || frame.payload.len() != 24
        {
            return Err(Error::Protocol("expected the pooled-moments broadcast".into()));
        }
        let f = |i: usize| f64::from_le_bytes(frame.payload[i * 8..(i + 1) * 8].try_into().unwrap());
        Moments { mean: f(0), std: f(1), count: f(2) }
    };

    let (train, val) = normalize_and_split(ds, &moments, cfg.seed);
    let n_k = train.len() as u64;
    let mut global = ModelParams::init(&cfg.arch, cfg.seed)?;
    let mut reports = Vec::new();
    let mut round_params = Vec::new();
    let mut prev_meter = net.meter();

    for round in 1..=cfg.rounds {
        let (trained, stat) = if train.is_empty() {
            (global.clone(), NodeStat { train_loss: None, val_mcc: None })
        } else {
            let (w, rep) = local_train_round(&global, &train, &val, cfg, round as u64)?;
            let last = rep.history.last().expect("at least one epoch ran");
            (w, NodeStat { train_loss: Some(last.train_loss), val_mcc: rep.best_val_mcc })
        };

        let sid_r = seed::derive_seed128(cfg.seed, &format!("fed.sid.round{round}"));
        let mut stats = vec![None; n_parties];
        if me == collector {
            stats[me] = Some(stat);
            for j in 1..n_parties {
                let frame = net.recv(j)?;
                if frame.session_id != sid_r || frame.msg_type != MsgType::Hello {
                    return Err(Error::Protocol("expected a round stats report".into()));
                }
                let s: NodeStat = serde_json::from_slice(&frame.payload)
                    .map_err(|e| Error::Format(format!("bad stats payload: {e}")))?;
                stats[j] = Some(s);
            }
        } else {
            let payload = serde_json::to_vec(&stat).expect("stats serialize");
            net.send(collector, Frame::new(MsgType::Hello, sid_r, payload))?;
        }

        global = if cfg.secure {
            secure_weighted_fedavg(net, sid_r, &trained, n_k, cfg.frac_bits, collector, &mut rng)?
        } else {
            plain_fedavg_round(net, sid_r, &trained, n_k, collector)?
        };
        round_params.push(global.clone());

        if me == collector {
            let meter = net.meter();
            reports.push(RoundReport {
                round,
                mode: if cfg.secure { "secure".into() } else { "plain".into() },
                train_loss: stats.iter().map(|s| s.as_ref().unwrap().train_loss).collect(),
                val_mcc: stats.iter().map(|s| s.as_ref().unwrap().val_mcc).collect(),
                comm_rounds: meter.rounds - prev_meter.rounds,
                bytes_sent: meter.bytes_sent - prev_meter.bytes_sent,
                bytes_received: meter.bytes_received - prev_meter.bytes_received,
                virtual_time_ns: net.local_time_ns(),
            });
            prev_meter = meter;
        }
    }

    // Pool validation confusion counts of the final model for a global MCC.
    let sid_v = seed::derive_seed128(cfg.seed, "fed.sid.finalval");
    let local_confusion: Vec<Vec<u64>> = if val.is_empty() {
        ConfusionMatrix::new(cfg.arch.classes()).rows()
    } else {
        let report = evaluate(&global, &val.to_batch_for(&cfg.arch)?)?;
        report.confusion
    };
    let final_val_mcc = if me == collector {
        let mut pooled = local_confusion;
        for j in 1..n_parties {
            let frame = net.recv(j)?;
            if frame.session_id != sid_v || frame.msg_type != MsgType::Hello {
                return Err(Error::Protocol("expected final validation counts".into()));
            }
            let rows: Vec<Vec<u64>> = serde_json::from_slice(&frame.payload)
                .map_err(|e| Error::Format(format!("bad confusion payload: {e}")))?;
            if rows.len() != pooled.len() {
                return Err(Error::Shape("confusion counts for a different class count".into()));
            }
            for (p, r) in pooled.iter_mut().zip(rows) {
                for (pv, rv) in p.iter_mut().zip(r) {
                    *pv += rv;
                }
            }
        }
        let m = ConfusionMatrix::from_rows(&pooled);
        if m.total() == 0 {
            None
        } else {
            Some(m.mcc())
        }
    } else {
        let payload = serde_json::to_vec(&local_confusion).expect("counts serialize");
        net.send(collector, Frame::new(MsgType::Hello, sid_v, payload))?;
        None
    };

    Ok(PartyOutcome { global, moments, reports, round_params, final_val_mcc })
}

/// Federated training over simulated nodes. With a single node everything
/// runs offline and degenerates to local training with best-epoch rollback.
pub fn run_federation(cfg: &FederationConfig, nodes: &[Dataset]) -> Result<FederationRun> {
    cfg.validate()?;
    if nodes.is_empty() {
        return Err(Error::Degenerate("federation needs at least one node".into()));
    }
    if nodes.iter().all(|d| d.is_empty()) {
        return Err(Error::Degenerate("every node dataset is empty".into()));
    }

    if nodes.len() == 1 {
        let moments = pooled_moments_local(&nodes[0], cfg.frac_bits)?;
        let (train, val) = normalize_and_split(&nodes[0], &moments, cfg.seed);
        let n_k = train.len() as u64;
        let mut global = ModelParams::init(&cfg.arch, cfg.seed)?;
        let mut reports = Vec::new();
        let mut round_params = Vec::new();
        for round in 1..=cfg.rounds {
            let (w, rep) = local_train_round(&global, &train, &val, cfg, round as u64)?;
            global = weighted_fedavg(&[(w, n_k)])?;
            round_params.push(global.clone());
            let last = rep.history.last().expect("at least one epoch ran");
            reports.push(RoundReport {
                round,
                mode: if cfg.secure { "secure".into() } else { "plain".into() },
                train_loss: vec![Some(last.train_loss)],
                val_mcc: vec![rep.best_val_mcc],
                comm_rounds: 0,
                bytes_sent: 0,
                bytes_received: 0,
                virtual_time_ns: 0,
            });
        }
        let final_val_mcc = if val.is_empty() {
            None
        } else {
            Some(evaluate(&global, &val.to_batch_for(&cfg.arch)?)?.mcc)
        };
        return Ok(FederationRun {
            params: global,
            reports,
            round_params,
            moments,
            final_val_mcc,
            meters: vec![Meter::default()],
            transcript: None,
        });
    }

    let latency = if cfg.latency_ms == 0 {
        LatencyModel::ideal()
    } else {
        LatencyModel::from_ms(cfg.latency_ms)
    };
    let fns: Vec<_> = (0..nodes.len())
        .map(|k| {
            let cfg = cfg.clone();
            let ds = nodes[k].clone();
            move |party: &mut SimParty| run_node(party, &cfg, &ds)
        })
        .collect();
    let sim = run_sim(latency, fns)?;
    let mut outcomes = sim.results;
    let collector = outcomes.remove(0);
    Ok(FederationRun {
        params: collector.global,
        reports: collector.reports,
        round_params: collector.round_params,
        moments: collector.moments,
        final_val_mcc: collector.final_val_mcc,
        meters: sim.meters,
        transcript: Some(sim.transcript),
    })
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub config: TrialConfig,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrialConfig,
    pub trials: Vec<TrialReport>,
}

/// Random search without replacement, scored by `objective` (higher is
/// better). Ties prefer the lower learning rate, then fewer epochs, then
/// the smaller batch.
pub fn search_over(
    space: &SearchSpace,
    budget: usize,
    seed_root: u64,
    mut objective: impl FnMut(&TrialConfig) -> Result<f64>,
) -> Result<SearchOutcome> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::Parameter("search budget must be >= 1".into()));
    }
    let grid = space.grid();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut seed::rng_from(seed_root, "hp.search"));
    order.truncate(budget.min(grid.len()));

    let mut trials = Vec::with_capacity(order.len());
    for i in order {
        let config = grid[i].clone();
        let score = objective(&config)?;
        trials.push(TrialReport { config, score });
    }
    let best = trials
        .iter()
        .min_by(|a, b| {
            let sa = if a.score.is_nan() { f64::NEG_INFINITY } else { a.score };
            let sb = if b.score.is_nan() { f64::NEG_INFINITY } else { b.score };
            sb.partial_cmp(&sa)
                .unwrap()
                .then(a.config.lr.partial_cmp(&b.config.lr).unwrap())
                .then(a.config.epochs.cmp(&b.config.epochs))
                .then(a.config.batch_size.cmp(&b.config.batch_size))
        })
        .expect("at least one trial ran")
        .config
        .clone();
    Ok(SearchOutcome { best, trials })
}

/// Hyperparameter search over the confederation: each trial runs a reduced
/// federation and is scored by the pooled validation MCC of its final model.
pub fn hyperparameter_search(
    cfg: &FederationConfig,
    nodes: &[Dataset],
    budget: usize,
) -> Result<SearchOutcome> {
    search_over(&cfg.search, budget, cfg.seed, |trial| {
        let mut c = cfg.clone();
        c.lr = trial.lr;
        c.epochs = trial.epochs;
        c.batch_size = trial.batch_size;
        c.rounds = cfg.search_rounds.clamp(1, cfg.rounds);
        let run = run_federation(&c, nodes)?;
        Ok(run.final_val_mcc.unwrap_or(f64::NEG_INFINITY))
    })
}
