//! Masked comparison gadgets: private ReLU and argmax from comparison keys.
//!
//! Each gadget consumes one precomputed *mask*: a random ring element `r`,
//! additively shared, together with a two-payload comparison key for
//! `alpha = r` carrying `beta = (1, r)`. To act on a shared value `x`, the
//! parties open the single masked value `u = x + r` — which is uniformly
//! random and reveals nothing — then evaluate their keys locally.
//!
//! The sign bit comes out of an exact identity that holds for every `u` and
//! `r` in Z_2^64 (no wraparound failure cases):
//!
//! ```text
//! [x < 0]  =  [u < r] - [u xor 2^63 < r] + [u >= 2^63]      where x = u - r
//! ```
//!
//! Payload slot 0 turns the two key evaluations into shares of the bit
//! `b = [x < 0]`; slot 1 yields shares of `b * r` without extra traffic, so
//! `b * x = u * b - b * r` — and with it ReLU — is linear in local data once
//! `u` is public. Each batch of ReLUs therefore costs exactly one
//! communication round, and argmax over `C` values costs `ceil(log2 C) + 1`
//! rounds via a pairwise max tournament plus one final equality test.

use super::dcf::{dcf_eval_multi, dcf_gen_multi, read_dcf2, write_dcf2, DcfKey};
use crate::error::{Error, Result};
use crate::fixed::{FixedTensor, Ring64};
use crate::shares::SessionId;
use crate::transport::Net;
use rand::RngCore;
use rand_chacha::ChaCha12Rng;

/// Widest argmax supported: keeps the tie-break transform far below the
/// sign boundary (logit magnitudes stay under 2^43 after shifting).
pub const MAX_CLASSES: usize = 64;

/// One party's half of a comparison mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskShare {
    pub r_share: Ring64,
    pub key: DcfKey<2>,
}

/// Deal one mask: random `r`, shared, with keys for `beta = (1, r)`.
pub fn gen_mask_pair(rng: &mut ChaCha12Rng) -> Result<(MaskShare, MaskShare)> {
    let r = Ring64(rng.next_u64());
    let r0 = Ring64(rng.next_u64());
    let r1 = r - r0;
    let (k0, k1) = dcf_gen_multi(64, r.0, [Ring64(1), r], rng)?;
    Ok((MaskShare { r_share: r0, key: k0 }, MaskShare { r_share: r1, key: k1 }))
}

pub fn gen_mask_pairs(
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<MaskShare>, Vec<MaskShare>)> {
    let mut a = Vec::with_capacity(count);
    let mut b = Vec::with_capacity(count);
    for _ in 0..count {
        let (m0, m1) = gen_mask_pair(rng)?;
        a.push(m0);
        b.push(m1);
    }
    Ok((a, b))
}

/// Serialize one mask share: `r` share word, then the `DCF2` key record.
pub fn write_mask(mask: &MaskShare) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&mask.r_share.0.to_le_bytes());
    out.extend_from_slice(&write_dcf2(&mask.key));
    out
}

/// Parse one mask share; returns it and the bytes consumed.
pub fn read_mask(buf: &[u8]) -> Result<(MaskShare, usize)> {
    if buf.len() < 8 {
        return Err(Error::Format("mask record truncated before r share".into()));
    }
    let r_share = Ring64(u64::from_le_bytes(buf[..8].try_into().unwrap()));
    let (key, used) = read_dcf2(&buf[8..])?;
    Ok((MaskShare { r_share, key }, 8 + used))
}

/// FIFO of single-use masks. Both parties must drain theirs in the same
/// order; the counters make exhaustion an explicit error, never a reuse.
#[derive(Debug, Default)]
pub struct MaskStore {
    queue: std::collections::VecDeque<MaskShare>,
    issued: u64,
    consumed: u64,
}

impl MaskStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deposit(&mut self, masks: Vec<MaskShare>) {
        self.issued += masks.len() as u64;
        self.queue.extend(masks);
    }

    pub fn take(&mut self, n: usize) -> Result<Vec<MaskShare>> {
        if self.queue.len() < n {
            return Err(Error::Preprocessing(format!(
                "need {n} comparison masks, {} left (issued {}, consumed {})",
                self.queue.len(),
                self.issued,
                self.consumed
            )));
        }
        self.consumed += n as u64;
        Ok(self.queue.drain(..n).collect())
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }
}

/// This party's shares of `b = [x < 0]` (scale 0) and `b * r`, plus the
/// public masked value `u`, for one element.
struct SignShare {
    u: u64,
    b: Ring64,
    br: Ring64,
}

/// Open `u = x + r` for a batch of shared ring values (one round) and
/// evaluate the sign identity per element.
fn open_masked(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    store: &mut MaskStore,
    xs: &[Ring64],
) -> Result<Vec<SignShare>> {
    let masks = store.take(xs.len())?;
    let masked: Vec<Ring64> =
        xs.iter().zip(&masks).map(|(&x, m)| x + m.r_share).collect();
    let carrier = FixedTensor { shape: vec![xs.len()], frac_bits: 0, data: masked };
    let opened = open_tensor(net, peer, session, &carrier)?;
    let me = net.me();
    opened
        .data
        .iter()
        .zip(&masks)
        .map(|(&u_elem, mask)| {
            let u = u_elem.0;
            let at_u = dcf_eval_multi(&mask.key, u)?;
            let at_flip = dcf_eval_multi(&mask.key, u ^ (1u64 << 63))?;
            let mut b = at_u[0] - at_flip[0];
            let mut br = at_u[1] - at_flip[1];
            if u >> 63 == 1 {
                if me == 0 {
                    b += Ring64(1);
                }
                br += mask.r_share;
            }
            Ok(SignShare { u, b, br })
        })
        .collect()
}

fn open_tensor(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    t: &FixedTensor,
) -> Result<FixedTensor> {
    let mut opened = crate::shares::open_tensors(net, peer, session, &[t])?;
    Ok(opened.pop().unwrap())
}

/// Share of `relu(x) = x - b*x` given the sign share for `x`.
fn relu_share(x: Ring64, sign: &SignShare) -> Ring64 {
    x - Ring64(sign.u) * sign.b + sign.br
}

/// Elementwise ReLU on a shared fixed-point tensor. Exact on every
/// representable value (including the magnitude-bound edges and zero) and
/// costs one communication round for the whole tensor.
pub fn secure_relu(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    store: &mut MaskStore,
    x: &FixedTensor,
) -> Result<FixedTensor> {
    if x.numel() == 0 {
        return Ok(x.clone());
    }
    let signs = open_masked(net, peer, session, store, &x.data)?;
    let data = x.data.iter().zip(&signs).map(|(&v, s)| relu_share(v, s)).collect();
    Ok(FixedTensor { shape: x.shape.clone(), frac_bits: x.frac_bits, data })
}

/// Argmax over a shared logit vector, returned as a shared one-hot vector
/// at the input's scale. Ties break toward the lower index exactly: logits
/// are lifted to `l * 2^k + (C - 1 - c)` with `k = ceil(log2 C)`, which
/// separates equal values by index without ever reordering distinct ones.
///
/// Rounds: `ceil(log2 C) + 1` (tournament levels plus one final equality
/// test); a single class costs nothing.
pub fn secure_argmax(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    store: &mut MaskStore,
    logits: &FixedTensor,
) -> Result<FixedTensor> {
    if logits.shape.len() != 1 {
        return Err(Error::Shape(format!(
            "argmax expects a rank-1 logit vector, got shape {:?}",
            logits.shape
        )));
    }
    let c = logits.numel();
    if c == 0 || c > MAX_CLASSES {
        return Err(Error::Parameter(format!(
            "argmax supports 1..={MAX_CLASSES} classes, got {c}"
        )));
    }
    let me = net.me();
    let one_hot_unit = Ring64(1).wrapping_shl(logits.frac_bits as u32);
    if c == 1 {
        let v = if me == 0 { one_hot_unit } else { Ring64::ZERO };
        return Ok(FixedTensor {
            shape: vec![1],
            frac_bits: logits.frac_bits,
            data: vec![v],
        });
    }
    let k = c.next_power_of_two().trailing_zeros();
    // Lift: shift is linear so each party shifts its own share; the public
    // tie-break constant is added by party 0 alone.
    let lifted: Vec<Ring64> = logits
        .data
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut v = l.wrapping_shl(k);
            if me == 0 {
                v += Ring64((c - 1 - i) as u64);
            }
            v
        })
        .collect();

    // Pairwise max tournament: max(a, b) = b + relu(a - b), one batched
    // round per level.
    let mut round = lifted.clone();
    while round.len() > 1 {
        let pairs = round.len() / 2;
        let diffs: Vec<Ring64> =
            (0..pairs).map(|p| round[2 * p] - round[2 * p + 1]).collect();
        let signs = open_masked(net, peer, session, store, &diffs)?;
        let mut next = Vec::with_capacity(pairs + round.len() % 2);
        for p in 0..pairs {
            next.push(round[2 * p + 1] + relu_share(diffs[p], &signs[p]));
        }
        if round.len() % 2 == 1 {
            next.push(round[round.len() - 1]);
        }
        round = next;
    }
    let max_share = round[0];

    // Final round: the winner is the unique class with lifted value equal to
    // the maximum, so `1 - [l_c - max < 0]` is exactly one-hot.
    let diffs: Vec<Ring64> = lifted.iter().map(|&l| l - max_share).collect();
    let signs = open_masked(net, peer, session, store, &diffs)?;
    let data = signs
        .iter()
        .map(|s| {
            let hit = if me == 0 { Ring64(1) - s.b } else { -s.b };
            hit * one_hot_unit
        })
        .collect();
    Ok(FixedTensor { shape: vec![c], frac_bits: logits.frac_bits, data })
}

/// Masks consumed by one argmax over `c` classes (`2c - 1`; none for 1).
pub fn argmax_mask_cost(c: usize) -> usize {
    if c <= 1 {
        0
    } else {
        2 * c - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::{decode_scalar, encode_scalar, DEFAULT_FRAC_BITS};
    use crate::seed;
    use crate::shares::share_tensor;
    use crate::transport::sim::{run_sim, LatencyModel};

    const F: u8 = DEFAULT_FRAC_BITS;

    /// The sign identity itself, against plain integer arithmetic.
    #[test]
    fn sign_identity_exhaustive_sampling() {
        let mut rng = seed::rng_from(7, "identity");
        for _ in 0..100_000 {
            let u = rng.next_u64();
            let r = rng.next_u64();
            let x = u.wrapping_sub(r);
            let f = |t: u64| (t < r) as i64;
            let got = f(u) - f(u ^ (1 << 63)) + (u >> 63) as i64;
            assert_eq!(got, (x >> 63) as i64, "u {u:#x} r {r:#x}");
        }
        for u in [0u64, 1, u64::MAX, 1 << 63, (1 << 63) - 1] {
            for r in [0u64, 1, u64::MAX, 1 << 63, (1 << 63) - 1] {
                let f = |t: u64| (t < r) as i64;
                let got = f(u) - f(u ^ (1 << 63)) + (u >> 63) as i64;
                assert_eq!(got, (u.wrapping_sub(r) >> 63) as i64);
            }
        }
    }

    fn relu_via_sim(values: &[f64]) -> Vec<f64> {
        let plain = FixedTensor {
            shape: vec![values.len()],
            frac_bits: F,
            data: values.iter().map(|&v| encode_scalar(v, F).unwrap()).collect(),
        };
        let mut rng = seed::rng_from(11, "relu.shares");
        let mut shares = share_tensor(&plain, 2, &mut rng).unwrap();
        let (m0, m1) = gen_mask_pairs(values.len(), &mut seed::rng_from(11, "relu.masks")).unwrap();
        let s1 = shares.pop().unwrap();
        let s0 = shares.pop().unwrap();
        let session = [9u8; 16];
        let mk = |share: FixedTensor, masks: Vec<MaskShare>| {
            move |party: &mut crate::transport::sim::SimParty| {
                let mut store = MaskStore::new();
                store.deposit(masks);
                let peer = 1 - party.me();
                secure_relu(party, peer, session, &mut store, &share)
            }
        };
        let run = run_sim(LatencyModel::ideal(), vec![mk(s0, m0), mk(s1, m1)]).unwrap();
        let out = run.results[0].add(&run.results[1]).unwrap();
        assert_eq!(run.meters[0].rounds, 1);
        assert_eq!(run.meters[1].rounds, 1);
        out.data.iter().map(|&v| decode_scalar(v, F)).collect()
    }

    #[test]
    fn relu_matches_plaintext_exactly() {
        let edge = 1048575.9;
        let values = [
            0.0, 1.0, -1.0, 0.5, -0.5, 3.25, -3.25, edge, -edge, 1.0 / 65536.0,
            -1.0 / 65536.0, 123.456, -987.654,
        ];
        let got = relu_via_sim(&values);
        for (&v, &g) in values.iter().zip(&got) {
            let enc = encode_scalar(v, F).unwrap();
            let want = decode_scalar(if enc.to_i64() >= 0 { enc } else { Ring64::ZERO }, F);
            assert_eq!(g, want, "relu({v})");
        }
    }

    #[test]
    fn relu_randomized_against_reference() {
        use rand::Rng;
        let mut rng = seed::rng_from(13, "relu.rand");
        let values: Vec<f64> =
            (0..64).map(|_| rng.gen_range(-1000.0..1000.0)).collect();
        let got = relu_via_sim(&values);
        for (&v, &g) in values.iter().zip(&got) {
            let enc = encode_scalar(v, F).unwrap();
            let want = decode_scalar(if enc.to_i64() >= 0 { enc } else { Ring64::ZERO }, F);
            assert_eq!(g, want, "relu({v})");
        }
    }

    fn argmax_via_sim(logits: &[f64], seed_label: &str) -> (Vec<f64>, u64, u64) {
        let plain = FixedTensor {
            shape: vec![logits.len()],
            frac_bits: F,
            data: logits.iter().map(|&v| encode_scalar(v, F).unwrap()).collect(),
        };
        let mut rng = seed::rng_from(17, seed_label);
        let mut shares = share_tensor(&plain, 2, &mut rng).unwrap();
        let (m0, m1) =
            gen_mask_pairs(argmax_mask_cost(logits.len()), &mut seed::rng_from(17, "am")).unwrap();
        let s1 = shares.pop().unwrap();
        let s0 = shares.pop().unwrap();
        let session = [3u8; 16];
        let mk = |share: FixedTensor, masks: Vec<MaskShare>| {
            move |party: &mut crate::transport::sim::SimParty| {
                let mut store = MaskStore::new();
                store.deposit(masks);
                let peer = 1 - party.me();
                let out = secure_argmax(party, peer, session, &mut store, &share)?;
                assert_eq!(store.remaining(), 0, "mask cost formula must be exact");
                Ok(out)
            }
        };
        let run = run_sim(LatencyModel::ideal(), vec![mk(s0, m0), mk(s1, m1)]).unwrap();
        let out = run.results[0].add(&run.results[1]).unwrap();
        (
            out.data.iter().map(|&v| decode_scalar(v, F)).collect(),
            run.meters[0].rounds,
            run.transcript.total_bytes(),
        )
    }

    fn expect_one_hot(got: &[f64], want_index: usize) {
        for (i, &v) in got.iter().enumerate() {
            let want = if i == want_index { 1.0 } else { 0.0 };
            assert_eq!(v, want, "class {i} of {got:?}, want hot {want_index}");
        }
    }

    #[test]
    fn argmax_basic_and_round_count() {
        let (got, rounds, _) = argmax_via_sim(&[0.5, 2.0, -1.0, 1.75], "basic");
        expect_one_hot(&got, 1);
        assert_eq!(rounds, 3); // ceil(log2 4) + 1
    }

    #[test]
    fn argmax_breaks_ties_toward_lower_index() {
        let (got, _, _) = argmax_via_sim(&[1.0, 3.5, 3.5, 3.5, 0.0], "tie");
        expect_one_hot(&got, 1);
        let (got, _, _) = argmax_via_sim(&[2.0, 2.0], "tie2");
        expect_one_hot(&got, 0);
        let (got, _, _) = argmax_via_sim(&[-4.0, -4.0, -4.0], "tie3");
        expect_one_hot(&got, 0);
    }

    #[test]
    fn argmax_single_class_is_free() {
        let (got, rounds, bytes) = argmax_via_sim(&[-2.5], "single");
        expect_one_hot(&got, 0);
        assert_eq!(rounds, 0);
        assert_eq!(bytes, 0);
    }

    #[test]
    fn argmax_round_formula_across_widths() {
        for c in [2usize, 3, 5, 8, 10] {
            let logits: Vec<f64> = (0..c).map(|i| -(i as f64)).collect();
            let (got, rounds, _) = argmax_via_sim(&logits, "widths");
            expect_one_hot(&got, 0);
            let k = (c.next_power_of_two()).trailing_zeros() as u64;
            assert_eq!(rounds, k + 1, "c = {c}");
        }
    }

    #[test]
    fn argmax_randomized_against_reference() {
        use rand::Rng;
        let mut rng = seed::rng_from(23, "argmax.rand");
        for trial in 0..20 {
            let c = rng.gen_range(2..=12);
            let logits: Vec<f64> =
                (0..c).map(|_| (rng.gen_range(-8000..8000) as f64) / 16.0).collect();
            // Reference on the encoded values, ties toward the lower index.
            let enc: Vec<i64> =
                logits.iter().map(|&v| encode_scalar(v, F).unwrap().to_i64()).collect();
            let mut best = 0;
            for i in 1..c {
                if enc[i] > enc[best] {
                    best = i;
                }
            }
            let (got, _, _) = argmax_via_sim(&logits, &format!("rt{trial}"));
            expect_one_hot(&got, best);
        }
    }

    #[test]
    fn argmax_rejects_bad_shapes() {
        let logits = FixedTensor::zeros(&[2, 2], F);
        let wide = FixedTensor::zeros(&[MAX_CLASSES + 1], F);
        // Validation happens before any traffic, so no peer is needed.
        let mk = |active: bool| {
            let logits = &logits;
            let wide = &wide;
            move |party: &mut crate::transport::sim::SimParty| {
                if !active {
                    return Ok((true, true));
                }
                let mut store = MaskStore::new();
                let r1 = secure_argmax(party, 1, [0; 16], &mut store, logits);
                let r2 = secure_argmax(party, 1, [0; 16], &mut store, wide);
                Ok((r1.is_err(), r2.is_err()))
            }
        };
        let run = run_sim(LatencyModel::ideal(), vec![mk(true), mk(false)]).unwrap();
        assert_eq!(run.results[0], (true, true));
    }

    #[test]
    fn mask_store_underflow_is_a_preprocessing_error() {
        let mut store = MaskStore::new();
        let (m0, _) = gen_mask_pairs(2, &mut seed::rng_from(29, "store")).unwrap();
        store.deposit(m0);
        assert_eq!(store.remaining(), 2);
        store.take(1).unwrap();
        let err = store.take(2).unwrap_err();
        assert!(matches!(err, Error::Preprocessing(_)), "{err}");
        assert_eq!(store.consumed(), 1);
    }

    #[test]
    fn mask_serialization_roundtrip() {
        let (m0, m1) = gen_mask_pair(&mut seed::rng_from(31, "ser")).unwrap();
        for m in [m0, m1] {
            let bytes = write_mask(&m);
            let (back, used) = read_mask(&bytes).unwrap();
            assert_eq!(used, bytes.len());
            assert_eq!(back, m);
        }
        assert!(read_mask(&[1, 2, 3]).is_err());
    }

    #[test]
    fn transcript_is_deterministic() {
        let go = || {
            let (got, _, _) = argmax_via_sim(&[1.0, -2.0, 5.0, 4.0, 4.9], "det");
            got
        };
        assert_eq!(go(), go());
        let (_, _, b1) = argmax_via_sim(&[1.0, -2.0, 5.0, 4.0, 4.9], "det");
        let (_, _, b2) = argmax_via_sim(&[1.0, -2.0, 5.0, 4.0, 4.9], "det");
        assert_eq!(b1, b2);
    }
}
