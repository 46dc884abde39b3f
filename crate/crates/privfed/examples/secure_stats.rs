//! Pools per-node dataset statistics with additive secret sharing: each
//! node contributes masked fixed-point sums, the collector learns only the
//! global mean and standard deviation, and a transcript scan confirms the
//! raw per-node values never crossed the wire.

use privfed::fixed::DEFAULT_FRAC_BITS;
use privfed::federation::pixel_sums;
use privfed::nn::data::synthetic_dataset;
use privfed::shares::secure_moments;
use privfed::transport::sim::{run_sim, LatencyModel};
use privfed::transport::Net;
use privfed::{seed, Result};

fn main() -> Result<()> {
    let root = 31;
    let sizes = [40usize, 25, 10];
    let nodes: Vec<_> = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| synthetic_dataset(root, &format!("stats.node{k}"), n, 8))
        .collect::<Result<_>>()?;

    let sums: Vec<(f64, f64, u64)> = nodes.iter().map(pixel_sums).collect();
    for (k, (s, _, c)) in sums.iter().enumerate() {
        println!("node {k}: {c} pixels, local mean {:.6}", s / *c as f64);
    }

    // Exact f64 pooling is the oracle the protocol must approximate.
    let (ts, tq, tc) = sums.iter().fold((0.0, 0.0, 0u64), |(a, b, c), &(s, q, n)| {
        (a + s, b + q, c + n)
    });
    let plain_mean = ts / tc as f64;
    let plain_std = (tq / tc as f64 - plain_mean * plain_mean).max(0.0).sqrt();

    let sid = seed::derive_seed128(root, "stats.sid");
    let fns: Vec<_> = sums
        .iter()
        .map(|&(s, q, c)| {
            move |party: &mut privfed::transport::sim::SimParty| {
                let mut rng = seed::rng_from(root, &format!("stats.rng{}", party.me()));
                secure_moments(party, sid, s, q, c, DEFAULT_FRAC_BITS, 0, &mut rng)
            }
        })
        .collect();
    let run = run_sim(LatencyModel::ideal(), fns)?;
    let pooled = run.results[0].expect("party 0 collects");

    println!();
    println!("secure pooled mean {:.6} (plain {:.6})", pooled.mean, plain_mean);
    println!("secure pooled std  {:.6} (plain {:.6})", pooled.std, plain_std);
    println!("|mean error| = {:.2e}", (pooled.mean - plain_mean).abs());

    // No message may contain any node's raw sum: every payload is masked.
    let envelopes = run.transcript.collect();
    let mut hits = 0;
    for (s, _, _) in &sums {
        let needle = s.to_le_bytes();
        for env in &envelopes {
            hits += env
                .bytes
                .windows(needle.len())
                .filter(|w| *w == needle)
                .count();
        }
    }
    println!("raw per-node sums found in {} transcript message(s)", hits);
    assert_eq!(hits, 0);
    Ok(())
}
