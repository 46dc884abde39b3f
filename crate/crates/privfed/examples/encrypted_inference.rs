//! Encrypted two-party inference over a real TCP loopback connection: the
//! server holds the model, the client holds the images, and the wire only
//! ever carries secret shares and FSS-masked values. The client's labels
//! are checked against a plaintext forward pass of the same model.

use privfed::fixed::DEFAULT_FRAC_BITS;
use privfed::inference::service::{run_client, serve, ClientConfig};
use privfed::nn::data::synthetic_dataset;
use privfed::nn::model::predict;
use privfed::nn::{Architecture, ModelParams};
use privfed::Result;
use std::net::TcpListener;

fn main() -> Result<()> {
    let seed = 9;
    let side = 8;
    let data = synthetic_dataset(seed, "infer.images", 16, side)?;
    let arch = Architecture::small_cnn(side, side, data.classes);
    let params = ModelParams::init(&arch, seed)?;

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    println!("serving encrypted inference on {addr}");
    let server_params = params.clone();
    let server = std::thread::spawn(move || {
        serve(&listener, &server_params, DEFAULT_FRAC_BITS, seed, Some(1))
    });

    let cfg = ClientConfig { probabilities: true, seed };
    let preds = run_client(addr, &data.images, cfg)?;
    let report = server.join().expect("server thread")?;
    println!(
        "server handled {} session(s), {} image(s), {} failure(s)",
        report.sessions, report.images, report.failures
    );

    // The encrypted protocol must agree with a local plaintext forward pass.
    let batch = data.to_batch_for(&arch)?;
    let plain = predict(&params, &batch)?;
    let mut agree = 0;
    for (i, p) in preds.iter().enumerate() {
        let probs = p.probabilities.as_ref().expect("probabilities requested");
        let top = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        assert_eq!(top, p.label, "probabilities and label disagree");
        if p.label == plain[i] {
            agree += 1;
        }
        if i < 4 {
            println!(
                "image {i}: encrypted label {} (p = {:.3}), plaintext label {}",
                p.label, probs[p.label], plain[i]
            );
        }
    }
    println!("{agree}/{} encrypted labels match the plaintext model", preds.len());
    assert_eq!(agree, preds.len());
    Ok(())
}
