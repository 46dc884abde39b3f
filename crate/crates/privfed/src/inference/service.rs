//! Client/server wire protocol for encrypted inference over TCP.
//!
//! The server is the model owner (party 0) and also hosts the dealer, a
//! third logical party that only hands out correlated randomness and never
//! sees a live value. One connection is one session:
//!
//! ```text
//! client -> HELLO   {images, probabilities}
//! server -> HELLO   {arch, frac_bits, session_id, images}
//! server -> SHARE   client's model share (FXT1 records, declared order)
//! per image:
//!   server -> KEYBLOCK  client's preprocessing block for one inference
//!   client -> SHARE     server's input share
//!   both   ->           interleaved gate traffic (OPEN frames)
//!   server -> RESULT    server's output shares; only the client can decode
//! ```
//!
//! Any failure aborts the session with a typed ERROR frame before a RESULT
//! is produced, so a broken session never leaks a partial label.

use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{encode_fixed, read_fxt1, to_fxt1_bytes, FixedTensor};
use crate::inference::{
    deal_one, finish_prediction, secure_forward_one, share_model, GatePlan, MaterialBlock,
    Prediction, SharedModel,
};
use crate::nn::{Architecture, ModelParams};
use crate::seed;
use crate::shares::{share_tensor, Dealer, SessionId};
use crate::tensor::PlainTensor;
use crate::transport::tcp::TcpNet;
use crate::transport::{Frame, MsgType, Net};

/// Upper bound on images per session; keeps a bad client from making the
/// server deal unbounded preprocessing.
pub const MAX_IMAGES_PER_SESSION: usize = 4096;

#[derive(Debug, Serialize, Deserialize)]
struct ClientHello {
    images: usize,
    probabilities: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ServerHello {
    arch: Architecture,
    frac_bits: u8,
    session_id: SessionId,
    images: usize,
}

/// Wire form of a session abort: a short stable code plus a human message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Range(_) => "range",
        Error::Shape(_) => "shape",
        Error::Parameter(_) => "parameter",
        Error::Format(_) => "format",
        Error::Protocol(_) => "protocol",
        Error::Transport(_) => "transport",
        Error::Preprocessing(_) => "preprocessing",
        Error::Degenerate(_) => "degenerate",
        Error::Usage(_) => "usage",
        Error::Data(_) => "data",
        Error::Io(_) => "io",
    }
}

/// Receive a frame, mapping a remote ERROR frame to a typed local error and
/// rejecting anything but the expected message type.
fn expect_frame(
    net: &mut TcpNet,
    peer: usize,
    want: MsgType,
    session: Option<SessionId>,
) -> Result<Frame> {
    let frame = net.recv(peer)?;
    if frame.msg_type == MsgType::Error {
        let info: ErrorInfo = serde_json::from_slice(&frame.payload)
            .unwrap_or_else(|_| ErrorInfo {
                code: "protocol".into(),
                message: "peer aborted the session".into(),
            });
        return Err(Error::Protocol(format!(
            "peer aborted the session ({}): {}",
            info.code, info.message
        )));
    }
    if frame.msg_type != want {
        return Err(Error::Protocol(format!(
            "expected a {:?} frame, got {:?}",
            want, frame.msg_type
        )));
    }
    if let Some(sid) = session {
        if frame.session_id != sid {
            return Err(Error::Protocol("frame for a different session".into()));
        }
    }
    Ok(frame)
}

fn decode_shares(payload: &[u8], count: usize) -> Result<Vec<FixedTensor>> {
    let mut shares = Vec::with_capacity(count);
    let mut at = 0usize;
    for _ in 0..count {
        let (t, used) = read_fxt1(&payload[at..])?;
        at += used;
        shares.push(t);
    }
    if at != payload.len() {
        return Err(Error::Format("trailing bytes after model share records".into()));
    }
    Ok(shares)
}

fn serve_session(
    net: &mut TcpNet,
    params: &ModelParams,
    frac_bits: u8,
    dealer_seed: [u8; 16],
    sid: SessionId,
) -> Result<usize> {
    let hello = expect_frame(net, 1, MsgType::Hello, None)?;
    let ch: ClientHello = serde_json::from_slice(&hello.payload)
        .map_err(|e| Error::Protocol(format!("malformed client hello: {e}")))?;
    if ch.images > MAX_IMAGES_PER_SESSION {
        return Err(Error::Parameter(format!(
            "session asks for {} images, limit is {MAX_IMAGES_PER_SESSION}",
            ch.images
        )));
    }

    let plan = GatePlan::for_arch(&params.arch)?;
    let mut dealer = Dealer::new(dealer_seed);
    let (mine, theirs) = share_model(params, frac_bits, dealer.rng())?;

    let sh = ServerHello {
        arch: params.arch.clone(),
        frac_bits,
        session_id: sid,
        images: ch.images,
    };
    net.send(1, Frame::new(MsgType::Hello, sid, serde_json::to_vec(&sh).unwrap()))?;

    let mut model_bytes = Vec::new();
    for t in &theirs.shares {
        model_bytes.extend_from_slice(&to_fxt1_bytes(t));
    }
    net.send(1, Frame::new(MsgType::Share, sid, model_bytes))?;

    for _ in 0..ch.images {
        let (a, b) = deal_one(&plan, &mut dealer, frac_bits)?;
        net.send(1, Frame::new(MsgType::KeyBlock, sid, b.to_bytes()))?;
        let mut material = a.into_material();

        let xf = expect_frame(net, 1, MsgType::Share, Some(sid))?;
        let (x_share, used) = read_fxt1(&xf.payload)?;
        if used != xf.payload.len() {
            return Err(Error::Format("trailing bytes after the input share".into()));
        }
        let out = secure_forward_one(net, 1, sid, &mine, &x_share, &mut material, &plan)?;
        // Material is dealt per image and must be spent exactly.
        if material.triples.remaining() != 0 || material.masks.remaining() != 0 {
            return Err(Error::Preprocessing(
                "an inference left preprocessing material unconsumed".into(),
            ));
        }
        finish_prediction(net, 1, sid, 1, &out, ch.probabilities)?;
    }
    Ok(ch.images)
}

/// Serve one accepted connection as one inference session. On any failure
/// the client is sent a typed ERROR frame and the error is returned.
pub fn handle_connection(
    stream: TcpStream,
    params: &ModelParams,
    frac_bits: u8,
    dealer_seed: [u8; 16],
    sid: SessionId,
) -> Result<usize> {
    let mut net = TcpNet::from_stream(stream, 0)?;
    let res = serve_session(&mut net, params, frac_bits, dealer_seed, sid);
    if let Err(ref e) = res {
        let info = ErrorInfo { code: error_code(e).into(), message: e.to_string() };
        let frame = Frame::new(MsgType::Error, sid, serde_json::to_vec(&info).unwrap());
        let _ = net.send(1, frame);
    }
    res
}

/// What a serve loop did before it stopped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeReport {
    pub sessions: usize,
    pub images: usize,
    pub failures: usize,
}

/// Accept sessions sequentially until `max_sessions` connections have been
/// handled (`None` serves forever). A failed session is reported, not fatal.
pub fn serve(
    listener: &TcpListener,
    params: &ModelParams,
    frac_bits: u8,
    seed: u64,
    max_sessions: Option<usize>,
) -> Result<ServeReport> {
    params.validate()?;
    let mut report = ServeReport::default();
    while !max_sessions.is_some_and(|m| report.sessions >= m) {
        let (stream, _) = listener.accept()?;
        let n = report.sessions;
        let sid = seed::derive_seed128(seed, &format!("serve.sid.{n}"));
        let dealer_seed = seed::derive_seed128(seed, &format!("serve.deal.{n}"));
        match handle_connection(stream, params, frac_bits, dealer_seed, sid) {
            Ok(images) => report.images += images,
            Err(_) => report.failures += 1,
        }
        report.sessions += 1;
    }
    Ok(report)
}

/// Client-side knobs for one session.
#[derive(Debug, Clone, Copy)]
pub struct ClientConfig {
    /// Ask for reconstructed logits and return softmax probabilities; off by
    /// default so a standard session reveals labels only.
    pub probabilities: bool,
    /// Seeds the client's half of the input sharing.
    pub seed: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { probabilities: false, seed: 0 }
    }
}

/// Run one session as the data owner: connect, receive the model share and
/// per-image material, and jointly classify every sample in `images`
/// (`[n, ...]`, one sample per leading index).
pub fn run_client(
    addr: impl ToSocketAddrs,
    images: &PlainTensor,
    cfg: ClientConfig,
) -> Result<Vec<Prediction>> {
    if images.shape.is_empty() {
        return Err(Error::Shape("image batch needs a leading sample axis".into()));
    }
    let n = images.shape[0];
    let mut net = TcpNet::connect(addr)?;
    let hello = ClientHello { images: n, probabilities: cfg.probabilities };
    net.send(
        0,
        Frame::new(MsgType::Hello, [0u8; 16], serde_json::to_vec(&hello).unwrap()),
    )?;

    let shf = expect_frame(&mut net, 0, MsgType::Hello, None)?;
    let sh: ServerHello = serde_json::from_slice(&shf.payload)
        .map_err(|e| Error::Protocol(format!("malformed server hello: {e}")))?;
    let sid = sh.session_id;
    let plan = GatePlan::for_arch(&sh.arch)?;

    let input_shape = sh.arch.input_shape();
    let sample_numel: usize = input_shape.iter().product();
    if n > 0 && images.numel() / n != sample_numel {
        return Err(Error::Shape(format!(
            "each sample has {} values, the served model expects {sample_numel}",
            images.numel() / n
        )));
    }

    let mf = expect_frame(&mut net, 0, MsgType::Share, Some(sid))?;
    let shares = decode_shares(&mf.payload, sh.arch.param_specs().len())?;
    let model = SharedModel { arch: sh.arch.clone(), frac_bits: sh.frac_bits, shares };

    let mut rng = seed::rng_from(cfg.seed, "infer.client.split");
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        let kb = expect_frame(&mut net, 0, MsgType::KeyBlock, Some(sid))?;
        let mut material = MaterialBlock::from_bytes(&kb.payload)?.into_material();

        let sample = PlainTensor::from_vec(
            &input_shape,
            images.data[i * sample_numel..(i + 1) * sample_numel].to_vec(),
        )?;
        let enc = encode_fixed(&sample, sh.frac_bits)?;
        let mut halves = share_tensor(&enc, 2, &mut rng)?;
        let server_share = halves.pop().unwrap();
        let my_share = halves.pop().unwrap();
        net.send(0, Frame::new(MsgType::Share, sid, to_fxt1_bytes(&server_share)))?;

        let out = secure_forward_one(&mut net, 0, sid, &model, &my_share, &mut material, &plan)?;
        let pred = finish_prediction(&mut net, 0, sid, 1, &out, cfg.probabilities)?
            .expect("the data owner reconstructs the prediction");
        predictions.push(pred);
    }
    Ok(predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::DEFAULT_FRAC_BITS;
    use crate::nn::data::synthetic_dataset;
    use crate::nn::model::predict;
    use crate::nn::train::{train_local, TrainConfig};
    use crate::transport::WIRE_VERSION;
    use std::io::{Read, Write};

    fn served_model() -> ModelParams {
        let ds = synthetic_dataset(7, "svc.train", 48, 8).unwrap();
        let arch = Architecture::small_cnn(8, 8, 3);
        let mut params = ModelParams::init(&arch, 7).unwrap();
        let cfg = TrainConfig { lr: 0.1, epochs: 2, batch_size: 16, ..TrainConfig::default() };
        let empty = crate::nn::data::Dataset::new(
            PlainTensor::zeros(&[0, 1, 8, 8]),
            vec![],
            3,
        )
        .unwrap();
        train_local(&mut params, &ds, &empty, &cfg).unwrap();
        params
    }

    fn spawn_server(
        params: ModelParams,
        sessions: usize,
    ) -> (std::net::SocketAddr, std::thread::JoinHandle<Result<ServeReport>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            serve(&listener, &params, DEFAULT_FRAC_BITS, 11, Some(sessions))
        });
        (addr, handle)
    }

    #[test]
    fn loopback_session_matches_plaintext_predictions() {
        let params = served_model();
        let ds = synthetic_dataset(8, "svc.query", 6, 8).unwrap();
        let batch = ds.to_batch_for(&params.arch).unwrap();
        let want = predict(&params, &batch).unwrap();

        let (addr, handle) = spawn_server(params, 1);
        let got = run_client(addr, &ds.images, ClientConfig::default()).unwrap();
        let report = handle.join().unwrap().unwrap();

        assert_eq!(report, ServeReport { sessions: 1, images: 6, failures: 0 });
        let labels: Vec<usize> = got.iter().map(|p| p.label).collect();
        assert_eq!(labels, want);
        assert!(got.iter().all(|p| p.probabilities.is_none()));
    }

    #[test]
    fn probabilities_come_back_normalized_when_asked() {
        let params = served_model();
        let ds = synthetic_dataset(9, "svc.query2", 3, 8).unwrap();
        let (addr, handle) = spawn_server(params, 1);
        let cfg = ClientConfig { probabilities: true, seed: 5 };
        let got = run_client(addr, &ds.images, cfg).unwrap();
        handle.join().unwrap().unwrap();

        for p in &got {
            let probs = p.probabilities.as_ref().expect("probabilities requested");
            assert_eq!(probs.len(), 3);
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            let top = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(top, p.label);
        }
    }

    #[test]
    fn empty_batch_is_a_complete_empty_session() {
        let params = served_model();
        let (addr, handle) = spawn_server(params, 1);
        let empty = PlainTensor::zeros(&[0, 1, 8, 8]);
        let got = run_client(addr, &empty, ClientConfig::default()).unwrap();
        let report = handle.join().unwrap().unwrap();
        assert!(got.is_empty());
        assert_eq!(report, ServeReport { sessions: 1, images: 0, failures: 0 });
    }

    #[test]
    fn malformed_hello_gets_a_typed_error_frame() {
        let params = served_model();
        let (addr, handle) = spawn_server(params, 1);

        let mut stream = TcpStream::connect(addr).unwrap();
        let bad = Frame::new(MsgType::Hello, [0u8; 16], b"not json".to_vec());
        stream.write_all(&bad.encode()).unwrap();

        let mut reply = Vec::new();
        stream.read_to_end(&mut reply).unwrap();
        let frame = Frame::decode(&reply).unwrap();
        assert_eq!(frame.msg_type, MsgType::Error);
        let info: ErrorInfo = serde_json::from_slice(&frame.payload).unwrap();
        assert_eq!(info.code, "protocol");
        assert!(info.message.contains("hello"));

        let report = handle.join().unwrap().unwrap();
        assert_eq!(report.failures, 1);
        assert_eq!(report.images, 0);
    }

    #[test]
    fn wrong_wire_version_aborts_with_an_error_frame() {
        let params = served_model();
        let (addr, handle) = spawn_server(params, 1);

        let mut stream = TcpStream::connect(addr).unwrap();
        let good = Frame::new(MsgType::Hello, [0u8; 16], b"{}".to_vec());
        let mut bytes = good.encode();
        // The version field sits after the length prefix and type byte.
        bytes[5] = (WIRE_VERSION + 1) as u8;
        stream.write_all(&bytes).unwrap();

        let mut reply = Vec::new();
        stream.read_to_end(&mut reply).unwrap();
        let frame = Frame::decode(&reply).unwrap();
        assert_eq!(frame.msg_type, MsgType::Error);
        let info: ErrorInfo = serde_json::from_slice(&frame.payload).unwrap();
        assert!(info.message.contains("version"), "unexpected abort reason: {}", info.message);

        let report = handle.join().unwrap().unwrap();
        assert_eq!(report.failures, 1);
    }

    #[test]
    fn client_rejects_a_batch_that_cannot_feed_the_served_model() {
        let params = served_model();
        let (addr, handle) = spawn_server(params, 1);
        // 4 values per sample can never feed an 8x8 model; the client
        // notices as soon as the server announces the architecture.
        let bad = PlainTensor::zeros(&[2, 4]);
        let err = run_client(addr, &bad, ClientConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expects"), "unexpected error: {msg}");
        // The aborted connection shows up as a failed session server-side.
        let report = handle.join().unwrap().unwrap();
        assert_eq!(report.failures, 1);
    }

    #[test]
    fn oversized_session_request_is_refused() {
        let params = served_model();
        let (addr, handle) = spawn_server(params, 1);

        let mut stream = TcpStream::connect(addr).unwrap();
        let hello = ClientHello { images: MAX_IMAGES_PER_SESSION + 1, probabilities: false };
        let frame = Frame::new(MsgType::Hello, [0u8; 16], serde_json::to_vec(&hello).unwrap());
        stream.write_all(&frame.encode()).unwrap();

        let mut reply = Vec::new();
        stream.read_to_end(&mut reply).unwrap();
        let frame = Frame::decode(&reply).unwrap();
        assert_eq!(frame.msg_type, MsgType::Error);
        let info: ErrorInfo = serde_json::from_slice(&frame.payload).unwrap();
        assert_eq!(info.code, "parameter");

        let report = handle.join().unwrap().unwrap();
        assert_eq!(report.failures, 1);
    }

    #[test]
    fn sequential_sessions_reuse_one_listener() {
        let params = served_model();
        let ds = synthetic_dataset(10, "svc.query3", 2, 8).unwrap();
        let batch = ds.to_batch_for(&params.arch).unwrap();
        let want = predict(&params, &batch).unwrap();

        let (addr, handle) = spawn_server(params, 2);
        let a = run_client(addr, &ds.images, ClientConfig::default()).unwrap();
        let b = run_client(addr, &ds.images, ClientConfig { seed: 99, ..Default::default() }).unwrap();
        let report = handle.join().unwrap().unwrap();

        assert_eq!(report, ServeReport { sessions: 2, images: 4, failures: 0 });
        // Different client sharing seeds, same decrypted labels.
        let la: Vec<usize> = a.iter().map(|p| p.label).collect();
        let lb: Vec<usize> = b.iter().map(|p| p.label).collect();
        assert_eq!(la, want);
        assert_eq!(lb, want);
    }
}
