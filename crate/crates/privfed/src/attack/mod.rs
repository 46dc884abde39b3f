//! Gradient-inversion attack harness: measures what each deployment mode
//! actually leaks to an honest-but-curious server.
//!
//! Three capture points produce the adversary's view of the same training
//! run: [`capture_local`] is the raw gradient of one batch, as a bare
//! gradient-sharing deployment would reveal it; [`capture_fed_plain`] is a
//! single node's plaintext federated round update, exactly what the
//! collector of a non-secure federation receives; [`capture_fed_secure`]
//! is the post-aggregation global update only — with secure aggregation the
//! per-node updates exist nowhere outside the nodes, which the transcript
//! byte-scan tests assert. [`invert`] then reconstructs training images
//! from any captured update, and [`study`] runs the paired leakage
//! comparison across all three modes.

pub mod invert;
pub mod study;

pub use invert::{analytic_label, invert, AttackConfig, AttackReport, LabelMode, RestartOutcome};
pub use study::{paired_one_sided_p, run_ordering_study, StudyConfig, StudyReport, TrialOutcome};

use crate::error::{Error, Result};
use crate::federation::{local_train_round, normalize_and_split, run_federation, FederationConfig};
use crate::fixed::{encode_scalar, decode_fixed, FixedTensor, Ring64};
use crate::nn::data::Dataset;
use crate::nn::model::{backward, penultimate_features, Batch};
use crate::nn::ModelParams;
use crate::shares::Moments;
use crate::tensor::PlainTensor;
use crate::transport::sim::Transcript;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Which adversary view a captured update represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Raw gradient of a single batch at known weights.
    Local,
    /// One node's weight delta after a plaintext federated round.
    FedPlain,
    /// The securely aggregated global weight delta; nothing per-node.
    FedSecure,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Local => "local",
            Scenario::FedPlain => "fed-plain",
            Scenario::FedSecure => "fed-secure",
        }
    }
}

/// Attacker-known context attached to a captured update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMeta {
    /// Samples per training step; the inversion reconstructs one batch of
    /// this size.
    pub batch_size: usize,
    /// Nodes that contributed to the observed artifact.
    pub nodes: usize,
    /// Federated round the capture belongs to (0 for a bare gradient).
    pub round: usize,
}

/// One observed model update in parameter layout, plus its provenance.
///
/// `update` holds the artifact exactly as the adversary sees it: a gradient
/// for [`Scenario::Local`], a weight delta (after minus before) for the
/// federated scenarios. The inversion orients deltas itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedUpdate {
    pub kind: Scenario,
    pub update: ModelParams,
    pub meta: UpdateMeta,
}

/// The leakage of gradient sharing: the exact mean gradient of `batch` at
/// `params`, as produced by the training backward pass.
pub fn capture_local(params: &ModelParams, batch: &Batch) -> Result<CapturedUpdate> {
    let (_, grads) = backward(params, batch)?;
    Ok(CapturedUpdate {
        kind: Scenario::Local,
        update: grads,
        meta: UpdateMeta { batch_size: batch.len(), nodes: 1, round: 0 },
    })
}

/// Pooled normalization moments for a set of nodes, by the same
/// per-node-encode / exact-ring-sum / single-decode arithmetic as the
/// secure pooling round, so replayed values match a live federation bit
/// for bit.
pub fn pooled_moments_of(nodes: &[Dataset], frac_bits: u8) -> Result<Moments> {
    let mut acc = [Ring64::ZERO; 3];
    for ds in nodes {
        let sum: f64 = ds.images.data.iter().sum();
        let sum_sq: f64 = ds.images.data.iter().map(|v| v * v).sum();
        let vals = [sum, sum_sq, ds.images.numel() as f64];
        for (a, v) in acc.iter_mut().zip(vals) {
            *a = *a + encode_scalar(v, frac_bits)?;
        }
    }
    let dec = decode_fixed(&FixedTensor { shape: vec![3], frac_bits, data: acc.to_vec() });
    let (sum, sum_sq, count) = (dec.data[0], dec.data[1], dec.data[2]);
    if count <= 0.0 {
        return Ok(Moments { mean: 0.0, std: 0.0, count: 0.0 });
    }
    let mean = sum / count;
    let var = (sum_sq / count - mean * mean).max(0.0);
    Ok(Moments { mean, std: var.sqrt(), count })
}

/// The leakage of plaintext federation: the victim node's first-round
/// weight delta, replayed deterministically (pooled moments, seeded
/// validation split, local epochs) so it equals what the collector would
/// receive from that node in a live run.
pub fn capture_fed_plain(
    cfg: &FederationConfig,
    nodes: &[Dataset],
    victim: usize,
) -> Result<CapturedUpdate> {
    cfg.validate()?;
    if victim >= nodes.len() {
        return Err(Error::Parameter(format!(
            "victim index {victim} out of range for {} nodes",
            nodes.len()
        )));
    }
    let moments = pooled_moments_of(nodes, cfg.frac_bits)?;
    let (train, val) = normalize_and_split(&nodes[victim], &moments, cfg.seed);
    if train.is_empty() {
        return Err(Error::Degenerate("victim node has no training data".into()));
    }
    let global = ModelParams::init(&cfg.arch, cfg.seed)?;
    let (after, _) = local_train_round(&global, &train, &val, cfg, 1)?;
    let mut delta = after;
    delta.axpy(-1.0, &global)?;
    Ok(CapturedUpdate {
        kind: Scenario::FedPlain,
        update: delta,
        meta: UpdateMeta {
            batch_size: cfg.batch_size.min(train.len()),
            nodes: nodes.len(),
            round: 1,
        },
    })
}

/// The leakage of secure aggregation: one federated round is actually run
/// with secret-shared averaging, and only the global delta comes back,
/// together with the network transcript so callers can verify that no
/// per-node update ever crossed the wire.
pub fn capture_fed_secure(
    cfg: &FederationConfig,
    nodes: &[Dataset],
) -> Result<(CapturedUpdate, Option<Transcript>)> {
    let mut one_round = cfg.clone();
    one_round.rounds = 1;
    one_round.secure = true;
    let run = run_federation(&one_round, nodes)?;
    let global = ModelParams::init(&cfg.arch, cfg.seed)?;
    let mut delta = run.round_params[0].clone();
    delta.axpy(-1.0, &global)?;
    let capture = CapturedUpdate {
        kind: Scenario::FedSecure,
        update: delta,
        meta: UpdateMeta { batch_size: cfg.batch_size, nodes: nodes.len(), round: 1 },
    };
    Ok((capture, run.transcript))
}

/// Reconstruction error against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconQuality {
    /// Mean squared error over every element.
    pub mse: f64,
    /// Mean squared error per image, in batch order.
    pub per_image: Vec<f64>,
}

/// Scores a reconstruction against the true inputs it targets. Both
/// tensors must share the exact shape `[n, ...]`, with values in the same
/// (normalized) domain the model was trained on.
pub fn evaluate_reconstruction(recon: &PlainTensor, truth: &PlainTensor) -> Result<ReconQuality> {
    if recon.shape != truth.shape {
        return Err(Error::Shape(format!(
            "reconstruction shaped {:?} cannot be scored against truth {:?}",
            recon.shape, truth.shape
        )));
    }
    let n = *recon.shape.first().unwrap_or(&0);
    if n == 0 || recon.numel() == 0 {
        return Err(Error::Degenerate("nothing to score: empty reconstruction".into()));
    }
    let stride = recon.numel() / n;
    let per_image: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (&recon.data[i * stride..(i + 1) * stride], &truth.data[i * stride..(i + 1) * stride]);
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / stride as f64
        })
        .collect();
    let mse = per_image.iter().sum::<f64>() / n as f64;
    Ok(ReconQuality { mse, per_image })
}

/// Squared Frechet distance between Gaussian fits of two feature sets
/// shaped `[n, d]`: `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`.
///
/// Covariances use the n-1 divisor (zero for a single sample). The matrix
/// square roots go through symmetric eigendecompositions with negative
/// eigenvalues clamped to zero, so near-singular fits stay finite.
pub fn frechet_feature_distance(a: &PlainTensor, b: &PlainTensor) -> Result<f64> {
    let dims = |t: &PlainTensor| -> Result<(usize, usize)> {
        match t.shape[..] {
            [n, d] if n > 0 && d > 0 => Ok((n, d)),
            _ => Err(Error::Shape(format!("feature set must be [n, d], got {:?}", t.shape))),
        }
    };
    let (na, d) = dims(a)?;
    let (nb, db) = dims(b)?;
    if d != db {
        return Err(Error::Shape(format!("feature widths differ: {d} vs {db}")));
    }
    let mean = |t: &PlainTensor, n: usize| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for row in t.data.chunks(d) {
            for (mi, v) in m.iter_mut().zip(row) {
                *mi += v / n as f64;
            }
        }
        m
    };
    let cov = |t: &PlainTensor, n: usize, m: &[f64]| -> DMatrix<f64> {
        let mut c = DMatrix::zeros(d, d);
        if n < 2 {
            return c;
        }
        for row in t.data.chunks(d) {
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += (row[i] - m[i]) * (row[j] - m[j]) / (n - 1) as f64;
                }
            }
        }
        c
    };
    let (ma, mb) = (mean(a, na), mean(b, nb));
    let (ca, cb) = (cov(a, na, &ma), cov(b, nb, &mb));
    let mean_gap: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();

    // sqrt(Sa) via eigendecomposition, then tr(sqrt(sqrt(Sa) Sb sqrt(Sa))),
    // which equals tr((Sa Sb)^(1/2)) for symmetric PSD inputs.
    let sqrt_sym = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let eig = m.clone().symmetric_eigen();
        let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        &eig.eigenvectors * roots * eig.eigenvectors.transpose()
    };
    let root_a = sqrt_sym(&ca);
    let inner = &root_a * &cb * &root_a;
    let cross: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((mean_gap + ca.trace() + cb.trace() - 2.0 * cross).max(0.0))
}

/// Frechet distance between reconstruction and truth in the victim model's
/// own penultimate-activation space. The embedding network is the attacked
/// model itself, not a reference classifier, so these values are not
/// comparable to FID figures and only order reconstructions of the same
/// victim.
pub fn feature_distance(
    params: &ModelParams,
    recon: &PlainTensor,
    truth: &PlainTensor,
) -> Result<f64> {
    let as_batch = |t: &PlainTensor| -> Result<Batch> {
        let n = *t.shape.first().unwrap_or(&0);
        Batch::new(t.clone(), vec![0; n])
    };
    let fa = penultimate_features(params, &as_batch(recon)?)?;
    let fb = penultimate_features(params, &as_batch(truth)?)?;
    frechet_feature_distance(&fa, &fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::weighted_fedavg;
    use crate::fixed::encode_fixed;
    use crate::nn::data::synthetic_dataset;
    use crate::nn::Architecture;
    use crate::seed;
    use rand::Rng;

    fn mlp_scene(seed_root: u64) -> (FederationConfig, Vec<Dataset>) {
        let pool = synthetic_dataset(seed_root, "attack.scene", 9, 8).unwrap();
        let nodes: Vec<Dataset> =
            (0..3).map(|k| pool.subset(&[3 * k, 3 * k + 1, 3 * k + 2])).collect();
        let arch = Architecture::mlp(64, vec![12], pool.classes);
        let mut cfg = FederationConfig::new(arch);
        cfg.rounds = 1;
        cfg.epochs = 2;
        cfg.lr = 0.2;
        cfg.batch_size = 2;
        cfg.seed = seed_root;
        (cfg, nodes)
    }

    #[test]
    fn local_capture_is_the_exact_batch_gradient() {
        let arch = Architecture::mlp(10, vec![7], 3);
        let params = ModelParams::init(&arch, 3).unwrap();
        let mut rng = seed::rng_from(4, "attack.localgrad");
        let data: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch =
            Batch::new(PlainTensor::from_vec(&[2, 10], data).unwrap(), vec![0, 2]).unwrap();
        let cap = capture_local(&params, &batch).unwrap();
        let (_, grads) = backward(&params, &batch).unwrap();
        assert_eq!(cap.update, grads);
        assert_eq!(cap.kind, Scenario::Local);
        assert_eq!(cap.meta, UpdateMeta { batch_size: 2, nodes: 1, round: 0 });
    }

    /// For a single sample the first-layer gradient is rank one:
    /// dW1[i,:] = delta1[i] * x, db1[i] = delta1[i], so any row with a
    /// nonzero bias gradient determines the input in closed form. This pins
    /// the captured artifact to the actual pixels, independent of the
    /// optimizer.
    #[test]
    fn local_capture_determines_the_input_analytically() {
        let arch = Architecture::mlp(64, vec![16], 3);
        let params = ModelParams::init(&arch, 11).unwrap();
        let ds = synthetic_dataset(12, "attack.pin", 3, 8).unwrap();
        let one = ds.subset(&[1]);
        let batch = one.to_batch_for(&arch).unwrap();
        let cap = capture_local(&params, &batch).unwrap();
        let db1 = &cap.update.get("fc1.bias").data;
        let dw1 = &cap.update.get("fc1.weight").data;
        let row = (0..db1.len()).max_by(|&a, &b| db1[a].abs().total_cmp(&db1[b].abs())).unwrap();
        assert!(db1[row].abs() > 1e-9, "every first-layer bias gradient vanished");
        let recovered: Vec<f64> = dw1[row * 64..(row + 1) * 64].iter().map(|w| w / db1[row]).collect();
        let err: f64 = recovered
            .iter()
            .zip(&batch.inputs.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 64.0;
        assert!(err < 1e-18, "closed-form recovery off by mse {err}");
    }

    #[test]
    fn pooled_moments_match_the_live_federation_pipeline() {
        let (cfg, nodes) = mlp_scene(21);
        let run = run_federation(&cfg, &nodes).unwrap();
        let replay = pooled_moments_of(&nodes, cfg.frac_bits).unwrap();
        assert_eq!(replay, run.moments);
        // Single node: equals the local stand-in used by offline training.
        let solo = crate::federation::pooled_moments_local(&nodes[0], cfg.frac_bits).unwrap();
        assert_eq!(pooled_moments_of(&nodes[..1], cfg.frac_bits).unwrap(), solo);
    }

    /// Degenerate federation: with one node the captured "federated" update
    /// is exactly the local training delta after E epochs.
    #[test]
    fn fed_plain_with_one_node_equals_the_local_training_delta() {
        let pool = synthetic_dataset(31, "attack.solo", 6, 8).unwrap();
        let arch = Architecture::mlp(64, vec![10], pool.classes);
        let mut cfg = FederationConfig::new(arch.clone());
        cfg.rounds = 1;
        cfg.epochs = 3;
        cfg.seed = 31;
        let cap = capture_fed_plain(&cfg, std::slice::from_ref(&pool), 0).unwrap();
        let run = run_federation(&cfg, std::slice::from_ref(&pool)).unwrap();
        let global = ModelParams::init(&arch, cfg.seed).unwrap();
        let mut live_delta = run.round_params[0].clone();
        live_delta.axpy(-1.0, &global).unwrap();
        assert_eq!(cap.update.max_abs_diff(&live_delta), 0.0);
        assert_eq!(cap.meta.nodes, 1);
        assert_eq!(cap.meta.round, 1);
    }

    /// Replayed per-node updates, averaged the way the collector would,
    /// reproduce the live plaintext round bit for bit.
    #[test]
    fn fed_plain_replays_compose_into_the_live_global_round() {
        let (cfg, nodes) = mlp_scene(45);
        let global = ModelParams::init(&cfg.arch, cfg.seed).unwrap();
        let moments = pooled_moments_of(&nodes, cfg.frac_bits).unwrap();
        let mut weighted = Vec::new();
        for (k, node) in nodes.iter().enumerate() {
            let cap = capture_fed_plain(&cfg, &nodes, k).unwrap();
            let mut after = global.clone();
            after.axpy(1.0, &cap.update).unwrap();
            let (train, _) = normalize_and_split(node, &moments, cfg.seed);
            weighted.push((after, train.len() as u64));
        }
        let composed = weighted_fedavg(&weighted).unwrap();
        let run = run_federation(&cfg, &nodes).unwrap();
        assert_eq!(composed.max_abs_diff(&run.round_params[0]), 0.0);
    }

    #[test]
    fn fed_secure_update_matches_the_plain_aggregate_to_fixed_point() {
        let (cfg, nodes) = mlp_scene(52);
        let (secure, transcript) = capture_fed_secure(&cfg, &nodes).unwrap();
        assert!(transcript.is_some(), "multi-node secure run must produce traffic");
        let plain_run = run_federation(&cfg, &nodes).unwrap();
        let global = ModelParams::init(&cfg.arch, cfg.seed).unwrap();
        let mut plain_delta = plain_run.round_params[0].clone();
        plain_delta.axpy(-1.0, &global).unwrap();
        let gap = secure.update.max_abs_diff(&plain_delta);
        assert!(gap < 1e-3, "secure aggregate strays {gap} from the plain average");
        assert_eq!(secure.kind, Scenario::FedSecure);
    }

    fn contains(haystack: &[u8], needle: &[u8]) -> bool {
        haystack.windows(needle.len()).any(|w| w == needle)
    }

    /// The secure transcript must not contain any node's update — not as
    /// raw f64 bytes, and not as the fixed-point encoding of the scaled
    /// contribution each node secret-shares. The aggregated global model
    /// is broadcast in the clear by design; finding it doubles as the
    /// positive control for the needle scan.
    #[test]
    fn fed_secure_transcript_never_shows_a_node_update() {
        let (cfg, nodes) = mlp_scene(60);
        let (_, transcript) = capture_fed_secure(&cfg, &nodes).unwrap();
        let haystack: Vec<u8> = transcript
            .unwrap()
            .collect()
            .iter()
            .flat_map(|e| e.bytes.clone())
            .collect();
        let global = ModelParams::init(&cfg.arch, cfg.seed).unwrap();
        let moments = pooled_moments_of(&nodes, cfg.frac_bits).unwrap();
        // Windows of all-zero bytes are too common in framing to be
        // meaningful either way; only distinctive needles count.
        let scan = |needle: &[u8]| needle.iter().any(|&b| b != 0) && contains(&haystack, needle);
        for (k, node) in nodes.iter().enumerate() {
            let cap = capture_fed_plain(&cfg, &nodes, k).unwrap();
            let mut after = global.clone();
            after.axpy(1.0, &cap.update).unwrap();
            for params in [&cap.update, &after] {
                for (name, tensor) in &params.named {
                    let f64_needle: Vec<u8> =
                        tensor.data.iter().take(3).flat_map(|v| v.to_le_bytes()).collect();
                    assert!(
                        !scan(&f64_needle),
                        "node {k} tensor {name} leaked as f64 into the secure transcript"
                    );
                }
            }
            // What the node actually encodes before sharing: n_k * w_k.
            let (train, _) = normalize_and_split(node, &moments, cfg.seed);
            let n_k = train.len() as f64;
            let scaled: Vec<f64> = after.flatten().data.iter().map(|w| w * n_k).collect();
            let enc = encode_fixed(
                &PlainTensor::from_vec(&[scaled.len()], scaled).unwrap(),
                cfg.frac_bits,
            )
            .unwrap();
            for window in [0, enc.data.len() / 3, 2 * enc.data.len() / 3] {
                let ring_needle: Vec<u8> =
                    enc.data[window..window + 3].iter().flat_map(|r| r.0.to_le_bytes()).collect();
                assert!(
                    !scan(&ring_needle),
                    "node {k} contribution leaked fixed-point encoded at word {window}"
                );
            }
        }
        // Positive control: the broadcast aggregate is visible as f64.
        let mut secure_cfg = cfg.clone();
        secure_cfg.rounds = 1;
        secure_cfg.secure = true;
        let run = run_federation(&secure_cfg, &nodes).unwrap();
        let broadcast: Vec<u8> = run.round_params[0]
            .flatten()
            .data
            .iter()
            .take(3)
            .flat_map(|v| v.to_le_bytes())
            .collect();
        assert!(scan(&broadcast), "needle scan failed its positive control");
    }

    #[test]
    fn reconstruction_scores_match_hand_computed_cases() {
        let truth = PlainTensor::zeros(&[2, 1]);
        let recon = PlainTensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let q = evaluate_reconstruction(&recon, &truth).unwrap();
        assert_eq!(q.per_image, vec![9.0, 16.0]);
        assert_eq!(q.mse, 12.5);

        let same = evaluate_reconstruction(&truth, &truth).unwrap();
        assert_eq!(same.mse, 0.0);

        let mut shifted = truth.clone();
        for v in &mut shifted.data {
            *v += 1.0;
        }
        assert_eq!(evaluate_reconstruction(&shifted, &truth).unwrap().mse, 1.0);

        let bad = PlainTensor::zeros(&[1, 2]);
        assert!(evaluate_reconstruction(&bad, &truth).is_err());
        assert!(evaluate_reconstruction(
            &PlainTensor::zeros(&[0, 3]),
            &PlainTensor::zeros(&[0, 3])
        )
        .is_err());
    }

    #[test]
    fn frechet_distance_matches_hand_computed_gaussians() {
        // 1-D features: a = {0, 2} fits N(1, 2), b = {1, 3} fits N(2, 2);
        // distance^2 = (1-2)^2 + 2 + 2 - 2*sqrt(2*2) = 1.
        let a = PlainTensor::from_vec(&[2, 1], vec![0.0, 2.0]).unwrap();
        let b = PlainTensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let d = frechet_feature_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "expected 1.0, got {d}");

        assert!(frechet_feature_distance(&a, &a).unwrap() < 1e-12);
        let sym = frechet_feature_distance(&b, &a).unwrap();
        assert!((sym - d).abs() < 1e-12);

        // Single samples carry no covariance: pure mean gap.
        let p = PlainTensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let q = PlainTensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        assert!((frechet_feature_distance(&p, &q).unwrap() - 25.0).abs() < 1e-12);

        assert!(frechet_feature_distance(&p, &PlainTensor::zeros(&[1, 3])).is_err());
        assert!(frechet_feature_distance(&p, &PlainTensor::zeros(&[3])).is_err());
    }

    #[test]
    fn feature_distance_is_zero_for_identical_batches_and_orders_noise() {
        let arch = Architecture::mlp(64, vec![16, 8], 3);
        let params = ModelParams::init(&arch, 77).unwrap();
        let ds = synthetic_dataset(78, "attack.feat", 6, 8).unwrap();
        let truth =
            PlainTensor::from_vec(&[6, 64], ds.images.data.clone()).unwrap();
        assert!(feature_distance(&params, &truth, &truth).unwrap() < 1e-12);

        let mut rng = seed::rng_from(79, "attack.feat.noise");
        let mut near = truth.clone();
        let mut far = truth.clone();
        for (n, f) in near.data.iter_mut().zip(&mut far.data) {
            *n += rng.gen_range(-0.05..0.05);
            *f = rng.gen_range(-1.0..1.0);
        }
        let dn = feature_distance(&params, &near, &truth).unwrap();
        let df = feature_distance(&params, &far, &truth).unwrap();
        assert!(dn < df, "light noise ({dn}) should sit closer than scrambled inputs ({df})");
    }

    #[test]
    fn captured_updates_serialize_with_kebab_case_scenarios() {
        let arch = Architecture::mlp(4, vec![], 2);
        let cap = CapturedUpdate {
            kind: Scenario::FedPlain,
            update: ModelParams::zeros(&arch).unwrap(),
            meta: UpdateMeta { batch_size: 1, nodes: 3, round: 1 },
        };
        let json = serde_json::to_string(&cap).unwrap();
        assert!(json.contains("\"fed-plain\""));
        let back: CapturedUpdate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cap);
        assert_eq!(Scenario::FedSecure.as_str(), "fed-secure");
    }

    #[test]
    fn capture_rejects_bad_victims_and_empty_nodes() {
        let (cfg, nodes) = mlp_scene(91);
        assert!(matches!(
            capture_fed_plain(&cfg, &nodes, 3),
            Err(Error::Parameter(_))
        ));
        let empty = Dataset::new(PlainTensor::zeros(&[0, 1, 8, 8]), vec![], 3).unwrap();
        assert!(matches!(
            capture_fed_plain(&cfg, std::slice::from_ref(&empty), 0),
            Err(Error::Degenerate(_))
        ));
    }
}
