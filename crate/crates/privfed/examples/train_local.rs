//! Trains the small CNN on a pooled synthetic dataset and reports the full
//! metric suite on a held-out test set. Fully deterministic: rerunning
//! prints identical numbers.

use privfed::fixed::DEFAULT_FRAC_BITS;
use privfed::nn::data::synthetic_dataset;
use privfed::nn::metrics::evaluate;
use privfed::nn::train::{train_local, TrainConfig};
use privfed::nn::{Architecture, ModelParams};
use privfed::federation::pooled_moments_local;
use privfed::Result;

fn main() -> Result<()> {
    let seed = 42;
    let side = 12;
    let data = synthetic_dataset(seed, "example.train", 300, side)?;
    let test = synthetic_dataset(seed, "example.test", 120, side)?;
    println!(
        "{} training and {} test images, {}x{}, {} classes",
        data.len(),
        test.len(),
        side,
        side,
        data.classes
    );

    // Normalize with the training moments only; the test set reuses them.
    let moments = pooled_moments_local(&data, DEFAULT_FRAC_BITS)?;
    println!("pixel mean {:.4}, std {:.4}", moments.mean, moments.std);
    let (train, val) = data.normalized(moments.mean, moments.std).split(0.1, seed, "example.val");

    let arch = Architecture::small_cnn(side, side, data.classes);
    let mut params = ModelParams::init(&arch, seed)?;
    let cfg = TrainConfig { lr: 0.1, epochs: 6, batch_size: 16, patience: None, seed, round_tag: 0 };
    let report = train_local(&mut params, &train, &val, &cfg)?;
    for e in &report.history {
        println!(
            "epoch {}: train loss {:.4}, val MCC {}",
            e.epoch,
            e.train_loss,
            e.val_mcc.map_or("n/a".into(), |m| format!("{m:.4}"))
        );
    }

    let batch = test.normalized(moments.mean, moments.std).to_batch_for(&arch)?;
    let m = evaluate(&params, &batch)?;
    println!("test accuracy     {:.4}", m.accuracy);
    println!("test MCC          {:.4}", m.mcc);
    println!("macro sensitivity {:.4}", m.macro_sensitivity);
    println!("macro specificity {:.4}", m.macro_specificity);
    println!("weighted ROC-AUC  {:.4}", m.roc_auc_weighted);
    Ok(())
}
