//! Latency accounting for inference protocols.
//!
//! A protocol is summarized as a sequence of [`Stage`]s: each stage is some
//! number of request-response rounds with a fixed per-direction message size.
//! The comparison-based baseline protocol is never implemented; only its
//! round/byte pattern is derived from the real protocol's profile (every
//! comparison stage costs `rounds_per_comparison` sequential rounds and a
//! byte multiplier) and replayed through the same simulator.
//!
//! Two elapsed figures exist for the real protocol. The live run sends both
//! parties' opening halves concurrently, so consecutive rounds overlap on a
//! full-duplex link and the measured virtual time undercuts rounds x RTT.
//! The sequenced replay serializes every round as a request-response, which
//! is the conservative figure the closed-form `rounds x RTT` arithmetic
//! predicts and the one comparable to the round-count baseline; both are
//! reported.

use super::sim::{run_sim, LatencyModel, SimParty, SimRun};
use super::{Frame, MsgType, Net};
use crate::error::Result;
use crate::inference::{run_inference_sim, GatePlan};
use crate::nn::{Architecture, ModelParams};
use crate::shares::TripleKind;
use crate::tensor::PlainTensor;
use serde::{Deserialize, Serialize};

/// On-wire size of a frame carrying `payload` bytes.
fn frame_bytes(payload: u64) -> u64 {
    payload + 4 + 1 + 2 + 16
}

/// On-wire size of one serialized fixed-point tensor record.
fn fxt1_bytes(rank: u64, numel: u64) -> u64 {
    6 + 4 * rank + 8 * numel
}

/// Round/byte model of comparison subprotocols in the reference baseline,
/// standing in for a SecureNN-class garbled-comparison stack: eight
/// communication rounds per comparison batch and a 4x message blow-up.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineModel {
    pub rounds_per_comparison: u64,
    pub comparison_bytes_factor: u64,
}

impl Default for BaselineModel {
    fn default() -> Self {
        BaselineModel { rounds_per_comparison: 8, comparison_bytes_factor: 4 }
    }
}

/// One phase of a protocol: `rounds` request-response exchanges, each moving
/// `bytes_each_way` per direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage {
    pub label: String,
    pub rounds: u64,
    pub bytes_each_way: u64,
    /// True when this stage realizes comparisons (ReLU / argmax), the part
    /// the baseline pays extra rounds for.
    pub comparison: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    pub stages: Vec<Stage>,
}

impl Profile {
    pub fn rounds(&self) -> u64 {
        self.stages.iter().map(|s| s.rounds).sum()
    }

    /// Total bytes across both directions and all rounds.
    pub fn bytes_total(&self) -> u64 {
        self.stages.iter().map(|s| s.rounds * 2 * s.bytes_each_way).sum()
    }

    /// Deterministic elapsed time: per round, one RTT plus both transfers.
    pub fn elapsed_ns(&self, lat: &LatencyModel) -> u64 {
        self.stages
            .iter()
            .map(|s| s.rounds * (2 * lat.one_way_ns + 2 * lat.transfer_ns(s.bytes_each_way)))
            .sum()
    }

    /// Pure rounds-times-RTT prediction, ignoring bandwidth.
    pub fn closed_form_rtt_ns(&self, lat: &LatencyModel) -> u64 {
        self.rounds() * 2 * lat.one_way_ns
    }

    /// Derive the baseline profile: comparison stages pay
    /// `rounds_per_comparison` rounds and `comparison_bytes_factor` total
    /// bytes (spread evenly over those rounds); other stages are unchanged.
    pub fn baseline(&self, model: &BaselineModel) -> Profile {
        let k = model.rounds_per_comparison.max(1);
        let stages = self
            .stages
            .iter()
            .map(|s| {
                if s.comparison {
                    let total = s.rounds * s.bytes_each_way * model.comparison_bytes_factor;
                    let rounds = s.rounds * k;
                    Stage {
                        label: format!("baseline-{}", s.label),
                        rounds,
                        bytes_each_way: total.div_ceil(rounds),
                        comparison: true,
                    }
                } else {
                    s.clone()
                }
            })
            .collect();
        Profile { stages }
    }
}

/// Exact round/byte profile of one encrypted inference, stage by stage in
/// protocol order. Byte sizes mirror the live frames: matmul stages open
/// two masked operand tensors, comparison stages open one masked rank-1
/// vector per round.
pub fn inference_profile(plan: &GatePlan) -> Profile {
    let linear_labels: Vec<String> = match &plan.arch {
        Architecture::SmallCnn { .. } => {
            ["conv1", "conv2", "fc1", "fc2"].iter().map(|s| s.to_string()).collect()
        }
        Architecture::Mlp { .. } => {
            (1..=plan.matmuls.len()).map(|i| format!("fc{i}")).collect()
        }
    };
    let mut stages = Vec::new();
    for (i, kind) in plan.matmuls.iter().enumerate() {
        let TripleKind::Matmul { m, k, n } = kind else { unreachable!() };
        let opened = fxt1_bytes(2, (m * k) as u64) + fxt1_bytes(2, (k * n) as u64);
        stages.push(Stage {
            label: linear_labels[i].clone(),
            rounds: 1,
            bytes_each_way: frame_bytes(opened),
            comparison: false,
        });
        if i < plan.relu_elems.len() {
            stages.push(Stage {
                label: format!("relu{}", i + 1),
                rounds: 1,
                bytes_each_way: frame_bytes(fxt1_bytes(1, plan.relu_elems[i] as u64)),
                comparison: true,
            });
        }
    }
    // Argmax tournament: one batched comparison round per halving level,
    // then one equality round over all classes.
    if plan.classes > 1 {
        let mut len = plan.classes;
        let mut level = 0;
        while len > 1 {
            let pairs = len / 2;
            level += 1;
            stages.push(Stage {
                label: format!("argmax.l{level}"),
                rounds: 1,
                bytes_each_way: frame_bytes(fxt1_bytes(1, pairs as u64)),
                comparison: true,
            });
            len = pairs + len % 2;
        }
        stages.push(Stage {
            label: "argmax.eq".into(),
            rounds: 1,
            bytes_each_way: frame_bytes(fxt1_bytes(1, plan.classes as u64)),
            comparison: true,
        });
    }
    Profile { stages }
}

/// Replay a profile as dummy traffic between two simulated parties; party 0
/// initiates every round. Returns the run with meters and virtual elapsed.
pub fn simulate_profile(profile: &Profile, latency: LatencyModel) -> Result<SimRun<()>> {
    let plan: Vec<(u64, u64)> = profile.stages.iter().map(|s| (s.rounds, s.bytes_each_way)).collect();
    let plan2 = plan.clone();
    run_sim(
        latency,
        vec![
            Box::new(move |net: &mut SimParty| {
                for (rounds, bytes) in &plan {
                    for _ in 0..*rounds {
                        let payload = vec![0u8; payload_len(*bytes)];
                        net.send(1, Frame::new(MsgType::Open, [0; 16], payload))?;
                        net.recv(1)?;
                    }
                }
                Ok(())
            }) as Box<dyn FnOnce(&mut SimParty) -> Result<()> + Send>,
            Box::new(move |net: &mut SimParty| {
                for (rounds, bytes) in &plan2 {
                    for _ in 0..*rounds {
                        net.recv(0)?;
                        let payload = vec![0u8; payload_len(*bytes)];
                        net.send(0, Frame::new(MsgType::Open, [0; 16], payload))?;
                    }
                }
                Ok(())
            }),
        ],
    )
}

/// Payload length so the whole frame (with header) is `bytes_each_way`.
fn payload_len(bytes_each_way: u64) -> usize {
    (bytes_each_way as usize).saturating_sub(4 + 1 + 2 + 16)
}

/// Link bandwidth the benchmark assumes: fast enough that transfer time
/// stays under 1% of rounds x RTT, finite so byte volume still separates
/// the protocols.
pub const BENCH_BANDWIDTH_BYTES_PER_SEC: u64 = 1 << 30;

/// One latency point of the protocol comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchPoint {
    pub latency_ms: u64,
    /// Live protocol elapsed: concurrent opening halves overlap rounds.
    pub fss_overlapped_ns: u64,
    /// Sequenced request-response replay of the real profile.
    pub fss_ns: u64,
    pub baseline_ns: u64,
    /// Pure rounds x RTT predictions for both replays.
    pub fss_closed_form_ns: u64,
    pub baseline_closed_form_ns: u64,
    /// `1 - fss / baseline` on the sequenced figures.
    pub reduction: f64,
}

/// Full latency comparison of one encrypted inference against the
/// round-count baseline, across a set of one-way latencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceBenchmark {
    pub arch: Architecture,
    pub baseline_model: BaselineModel,
    pub bandwidth_bytes_per_sec: u64,
    pub fss_profile: Profile,
    pub baseline_profile: Profile,
    pub fss_rounds: u64,
    pub baseline_rounds: u64,
    pub fss_bytes_total: u64,
    pub baseline_bytes_total: u64,
    /// Metered rounds of one live ReLU layer (the mask construction makes
    /// this 1 regardless of tensor size).
    pub rounds_per_relu: u64,
    pub points: Vec<BenchPoint>,
}

/// Meter one live ReLU of `elems` elements in the simulator.
fn measure_relu_rounds(elems: usize, seed: u64) -> Result<u64> {
    use crate::fixed::FixedTensor;
    use crate::fss::gadgets::{gen_mask_pairs, secure_relu, MaskStore};
    use crate::shares::share_tensor;

    let mut rng = crate::seed::rng_from(seed, "bench.relu");
    let x = FixedTensor::zeros(&[elems], crate::fixed::DEFAULT_FRAC_BITS);
    let mut shares = share_tensor(&x, 2, &mut rng)?;
    let (m0, m1) = gen_mask_pairs(elems, &mut rng)?;
    let mk = |share: FixedTensor, masks| {
        move |net: &mut SimParty| {
            let mut store = MaskStore::default();
            store.deposit(masks);
            let peer = 1 - net.me();
            secure_relu(net, peer, [0; 16], &mut store, &share)
        }
    };
    let s1 = shares.pop().unwrap();
    let s0 = shares.pop().unwrap();
    type F = Box<dyn FnOnce(&mut SimParty) -> Result<crate::fixed::FixedTensor> + Send>;
    let fns: Vec<F> = vec![Box::new(mk(s0, m0)), Box::new(mk(s1, m1))];
    let run = run_sim(LatencyModel::ideal(), fns)?;
    Ok(run.meters[0].rounds)
}

/// Benchmark one live encrypted inference of `sample` against the derived
/// comparison baseline at each one-way latency in `latencies_ms`.
pub fn benchmark_inference(
    params: &ModelParams,
    sample: &PlainTensor,
    latencies_ms: &[u64],
    baseline_model: &BaselineModel,
    seed: u64,
) -> Result<InferenceBenchmark> {
    let plan = GatePlan::for_arch(&params.arch)?;
    let fss = inference_profile(&plan);
    let baseline = fss.baseline(baseline_model);
    let rounds_per_relu = match plan.relu_elems.first() {
        Some(&elems) => measure_relu_rounds(elems, seed)?,
        None => 0,
    };

    let mut points = Vec::with_capacity(latencies_ms.len());
    for &ms in latencies_ms {
        let lat = LatencyModel::from_ms(ms).with_bandwidth(BENCH_BANDWIDTH_BYTES_PER_SEC);
        let live = run_inference_sim(
            params,
            vec![sample.clone()],
            crate::fixed::DEFAULT_FRAC_BITS,
            seed,
            lat,
            false,
        )?;
        let fss_run = simulate_profile(&fss, lat)?;
        let base_run = simulate_profile(&baseline, lat)?;
        let fss_ns = fss_run.elapsed_ns;
        let baseline_ns = base_run.elapsed_ns;
        points.push(BenchPoint {
            latency_ms: ms,
            fss_overlapped_ns: live.elapsed_ns,
            fss_ns,
            baseline_ns,
            fss_closed_form_ns: fss.closed_form_rtt_ns(&lat),
            baseline_closed_form_ns: baseline.closed_form_rtt_ns(&lat),
            reduction: 1.0 - fss_ns as f64 / baseline_ns as f64,
        });
    }

    Ok(InferenceBenchmark {
        arch: params.arch.clone(),
        baseline_model: *baseline_model,
        bandwidth_bytes_per_sec: BENCH_BANDWIDTH_BYTES_PER_SEC,
        fss_rounds: fss.rounds(),
        baseline_rounds: baseline.rounds(),
        fss_bytes_total: fss.bytes_total(),
        baseline_bytes_total: baseline.bytes_total(),
        rounds_per_relu,
        fss_profile: fss,
        baseline_profile: baseline,
        points,
    })
}

/// Exact comparison of two reductions `1 - f/b` without float rounding:
/// reduction at point 1 exceeds reduction at point 0 iff `f1 * b0 < f0 * b1`.
pub fn reduction_strictly_increases(f0: u64, b0: u64, f1: u64, b1: u64) -> bool {
    (f1 as u128) * (b0 as u128) < (f0 as u128) * (b1 as u128)
}
