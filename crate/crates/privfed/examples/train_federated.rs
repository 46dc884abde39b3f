//! Runs the same three-node federation twice — once with plaintext
//! averaging, once with secret-shared secure aggregation — from identical
//! seeds, then shows that the models agree while the secure run's traffic
//! grows only modestly.

use privfed::federation::{run_federation, FederationConfig};
use privfed::nn::data::synthetic_dataset;
use privfed::nn::metrics::{cohens_kappa, evaluate};
use privfed::nn::model::predict;
use privfed::nn::Architecture;
use privfed::Result;

fn main() -> Result<()> {
    let seed = 7;
    let side = 12;
    // Unequal shard sizes so the dataset-size weighting matters.
    let sizes = [120usize, 60, 30];
    let nodes: Vec<_> = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| synthetic_dataset(seed, &format!("fed.node{k}"), n, side))
        .collect::<Result<_>>()?;
    let test = synthetic_dataset(seed, "fed.test", 150, side)?;

    let mut cfg = FederationConfig::new(Architecture::small_cnn(side, side, test.classes));
    cfg.rounds = 3;
    cfg.epochs = 2;
    cfg.seed = seed;

    let plain = run_federation(&cfg, &nodes)?;
    cfg.secure = true;
    let secure = run_federation(&cfg, &nodes)?;

    for (p, s) in plain.reports.iter().zip(&secure.reports) {
        println!(
            "round {}: plain {} B in {} comm rounds | secure {} B in {} comm rounds",
            p.round, p.bytes_sent, p.comm_rounds, s.bytes_sent, s.comm_rounds
        );
    }

    // The fixed-point detour should cost at most rounding noise per round.
    let pf = plain.params.flatten();
    let sf = secure.params.flatten();
    let max_diff = pf
        .data
        .iter()
        .zip(&sf.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max |plain - secure| parameter gap: {max_diff:.2e}");

    let moments = plain.moments;
    let batch = test
        .normalized(moments.mean, moments.std)
        .to_batch_for(&cfg.arch)?;
    let mp = evaluate(&plain.params, &batch)?;
    let ms = evaluate(&secure.params, &batch)?;
    let kappa = cohens_kappa(&predict(&plain.params, &batch)?, &predict(&secure.params, &batch)?)?;
    println!("test MCC: plain {:.4}, secure {:.4}", mp.mcc, ms.mcc);
    println!("prediction agreement (Cohen's kappa): {kappa:.4}");
    Ok(())
}
