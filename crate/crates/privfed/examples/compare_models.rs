//! Statistical comparison of two classifiers on the same test set: per-model
//! accuracy and MCC, Cohen's kappa for agreement, and McNemar's test for
//! whether their error rates differ significantly.

use privfed::federation::pooled_moments_local;
use privfed::fixed::DEFAULT_FRAC_BITS;
use privfed::nn::data::synthetic_dataset;
use privfed::nn::metrics::{cohens_kappa, evaluate, mcnemar_test};
use privfed::nn::model::predict;
use privfed::nn::train::{train_local, TrainConfig};
use privfed::nn::{Architecture, ModelParams};
use privfed::Result;

fn main() -> Result<()> {
    let seed = 4;
    let side = 12;
    let data = synthetic_dataset(seed, "cmp.train", 240, side)?;
    let test = synthetic_dataset(seed, "cmp.test", 150, side)?;
    let moments = pooled_moments_local(&data, DEFAULT_FRAC_BITS)?;
    let (train, val) = data.normalized(moments.mean, moments.std).split(0.1, seed, "cmp.val");
    let test_n = test.normalized(moments.mean, moments.std);

    // Same data, two architectures: the small CNN against a one-layer MLP.
    let cnn_arch = Architecture::small_cnn(side, side, data.classes);
    let mlp_arch = Architecture::mlp(side * side, vec![24], data.classes);
    let mut preds = Vec::new();
    for (name, arch, epochs) in [("cnn", &cnn_arch, 5), ("mlp", &mlp_arch, 5)] {
        let mut params = ModelParams::init(arch, seed)?;
        let cfg =
            TrainConfig { lr: 0.1, epochs, batch_size: 16, patience: None, seed, round_tag: 0 };
        train_local(&mut params, &train, &val, &cfg)?;
        let batch = test_n.to_batch_for(arch)?;
        let m = evaluate(&params, &batch)?;
        println!("{name}: accuracy {:.4}, MCC {:.4}", m.accuracy, m.mcc);
        preds.push((name, predict(&params, &batch)?));
    }

    let (a_name, a) = &preds[0];
    let (b_name, b) = &preds[1];
    let kappa = cohens_kappa(a, b)?;
    let (stat, p) = mcnemar_test(a, b, &test.labels)?;
    println!();
    println!("{a_name} vs {b_name}:");
    println!("  Cohen's kappa       {kappa:.4}");
    println!("  McNemar statistic   {stat:.4}");
    println!("  McNemar p-value     {p:.4}");
    if p < 0.05 {
        println!("  -> error rates differ significantly at the 5% level");
    } else {
        println!("  -> no significant difference in error rates at the 5% level");
    }
    Ok(())
}
