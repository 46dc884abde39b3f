//! Measures how network latency hits encrypted inference, comparing the
//! single-round FSS comparison protocol against a classic multi-round
//! secure comparison baseline on a simulated link with a virtual clock.
//! The FSS advantage should widen as the link gets slower.

use privfed::nn::{Architecture, ModelParams};
use privfed::tensor::PlainTensor;
use privfed::transport::bench::{benchmark_inference, BaselineModel};
use privfed::{seed, Result};
use rand::Rng;

fn main() -> Result<()> {
    let root = 23;
    let side = 16;
    let arch = Architecture::small_cnn(side, side, 3);
    let params = ModelParams::init(&arch, root)?;

    let shape = arch.input_shape();
    let numel: usize = shape.iter().product();
    let mut rng = seed::rng_from(root, "bench.sample");
    let sample = PlainTensor::from_vec(&shape, (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect())?;

    let bench = benchmark_inference(&params, &sample, &[0, 10, 100], &BaselineModel::default(), root)?;
    println!(
        "model {} | fss: {} online rounds, {} B | baseline: {} rounds, {} B | metered rounds per ReLU: {}",
        arch.tag(),
        bench.fss_rounds,
        bench.fss_bytes_total,
        bench.baseline_rounds,
        bench.baseline_bytes_total,
        bench.rounds_per_relu,
    );
    println!();
    println!("latency    fss (virtual)   baseline (virtual)   reduction");
    for p in &bench.points {
        println!(
            "{:>5} ms   {:>10.2} ms   {:>15.2} ms   {:>8.1}%",
            p.latency_ms,
            p.fss_ns as f64 / 1e6,
            p.baseline_ns as f64 / 1e6,
            100.0 * p.reduction
        );
    }
    println!();
    // Sanity: virtual elapsed time tracks rounds x RTT as latency dominates.
    for p in &bench.points {
        let model_err = |virt: u64, closed: u64| {
            if closed == 0 {
                0.0
            } else {
                100.0 * (virt as f64 - closed as f64).abs() / closed as f64
            }
        };
        println!(
            "{:>5} ms: virtual vs closed-form gap — fss {:.2}%, baseline {:.2}%",
            p.latency_ms,
            model_err(p.fss_ns, p.fss_closed_form_ns),
            model_err(p.baseline_ns, p.baseline_closed_form_ns)
        );
    }
    Ok(())
}
