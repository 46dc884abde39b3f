//! Two-party function secret sharing for comparison functions.
//!
//! A key pair for `(alpha, beta)` lets the two parties evaluate, on any
//! public `x`, additive shares of `beta * [x < alpha]` over Z_2^64 — the
//! comparison is strict, so `x = alpha` yields shares of zero. Each key is
//! one root seed plus `domain_bits` correction words plus a final payload
//! correction; neither key alone reveals `alpha` or `beta`.
//!
//! The payload group is generalized to `(Z_2^64)^W` so one tree can carry
//! several correlated payloads (the masked-ReLU gadget uses `W = 2`). The
//! public single-payload API serializes as the `DCF1` record; `W = 2` keys
//! use the sibling `DCF2` layout without an embedded payload field.

use super::prg::{convert, expand, Seed};
use crate::error::{Error, Result};
use crate::fixed::Ring64;
use rand::RngCore;
use rand_chacha::ChaCha12Rng;

pub const DOMAIN_BITS_ALLOWED: [u8; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionWord<const W: usize> {
    pub s: Seed,
    pub v: [Ring64; W],
    pub t_l: bool,
    pub t_r: bool,
}

/// One party's comparison-function key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcfKey<const W: usize> {
    pub domain_bits: u8,
    pub party: u8,
    pub root_seed: Seed,
    pub levels: Vec<CorrectionWord<W>>,
    pub final_cw: [Ring64; W],
}

fn check_domain(domain_bits: u8) -> Result<()> {
    if !DOMAIN_BITS_ALLOWED.contains(&domain_bits) {
        return Err(Error::Parameter(format!(
            "domain_bits {domain_bits} not in {DOMAIN_BITS_ALLOWED:?}"
        )));
    }
    Ok(())
}

fn check_point(domain_bits: u8, x: u64) -> Result<()> {
    if domain_bits < 64 && x >> domain_bits != 0 {
        return Err(Error::Parameter(format!(
            "evaluation point {x} outside the {domain_bits}-bit domain"
        )));
    }
    Ok(())
}

/// Bit `i` (1-based from the most significant end of the domain).
fn msb_bit(x: u64, domain_bits: u8, i: u8) -> bool {
    (x >> (domain_bits - i)) & 1 == 1
}

fn xor_seed(a: &Seed, b: &Seed) -> Seed {
    let mut out = [0u8; 16];
    for i in 0..16 {
        out[i] = a[i] ^ b[i];
    }
    out
}

fn group_add<const W: usize>(a: [Ring64; W], b: [Ring64; W]) -> [Ring64; W] {
    let mut out = a;
    for i in 0..W {
        out[i] = out[i] + b[i];
    }
    out
}

fn group_sub<const W: usize>(a: [Ring64; W], b: [Ring64; W]) -> [Ring64; W] {
    let mut out = a;
    for i in 0..W {
        out[i] = out[i] - b[i];
    }
    out
}

/// Negate when `flip` is set: the `(-1)^t` factor of the construction.
fn group_sign<const W: usize>(a: [Ring64; W], flip: bool) -> [Ring64; W] {
    if !flip {
        return a;
    }
    let mut out = a;
    for i in 0..W {
        out[i] = -out[i];
    }
    out
}

fn take<const W: usize>(v: [Ring64; 2]) -> [Ring64; W] {
    std::array::from_fn(|i| v[i])
}

fn random_seed(rng: &mut ChaCha12Rng) -> Seed {
    let mut s = [0u8; 16];
    rng.fill_bytes(&mut s);
    s
}

/// Generate a key pair for `f(x) = beta * [x < alpha]` on the given domain.
pub fn dcf_gen_multi<const W: usize>(
    domain_bits: u8,
    alpha: u64,
    beta: [Ring64; W],
    rng: &mut ChaCha12Rng,
) -> Result<(DcfKey<W>, DcfKey<W>)> {
    check_domain(domain_bits)?;
    check_point(domain_bits, alpha)?;
    let n = domain_bits;
    let root0 = random_seed(rng);
    let root1 = random_seed(rng);
    let mut s0 = root0;
    let mut s1 = root1;
    let mut t0 = false;
    let mut t1 = true;
    let mut v_alpha = [Ring64::ZERO; W];
    let mut levels: Vec<CorrectionWord<W>> = Vec::with_capacity(n as usize);

    for i in 1..=n {
        let a_i = msb_bit(alpha, n, i);
        let e0 = expand(&s0);
        let e1 = expand(&s1);
        // Keep follows alpha's bit; Lose is the side alpha leaves forever.
        let (keep0, keep1, lose0, lose1) = if a_i {
            ((e0.s_r, e0.t_r, e0.v_r), (e1.s_r, e1.t_r, e1.v_r), (e0.s_l, e0.v_l), (e1.s_l, e1.v_l))
        } else {
            ((e0.s_l, e0.t_l, e0.v_l), (e1.s_l, e1.t_l, e1.v_l), (e0.s_r, e0.v_r), (e1.s_r, e1.v_r))
        };
        let s_cw = xor_seed(&lose0.0, &lose1.0);
        let mut v_cw = group_sign(
            group_sub(group_sub(take::<W>(lose1.1), take::<W>(lose0.1)), v_alpha),
            t1,
        );
        if a_i {
            // Lose = L: points entering the left subtree here share alpha's
            // prefix but have a 0 where alpha has 1, so they are all < alpha
            // and must pick up the payload.
            v_cw = group_add(v_cw, group_sign(beta, t1));
        }
        v_alpha = group_add(
            group_add(group_sub(v_alpha, take::<W>(keep1.2)), group_sign(v_cw, t1)),
            take::<W>(keep0.2),
        );
        let t_cw_l = e0.t_l ^ e1.t_l ^ a_i ^ true;
        let t_cw_r = e0.t_r ^ e1.t_r ^ a_i;
        levels.push(CorrectionWord { s: s_cw, v: v_cw, t_l: t_cw_l, t_r: t_cw_r });
        let t_cw_keep = if a_i { t_cw_r } else { t_cw_l };
        s0 = if t0 { xor_seed(&keep0.0, &s_cw) } else { keep0.0 };
        s1 = if t1 { xor_seed(&keep1.0, &s_cw) } else { keep1.0 };
        let new_t0 = keep0.1 ^ (t0 & t_cw_keep);
        let new_t1 = keep1.1 ^ (t1 & t_cw_keep);
        t0 = new_t0;
        t1 = new_t1;
    }
    let final_cw = group_sign(
        group_sub(group_sub(take::<W>(convert(&s1)), take::<W>(convert(&s0))), v_alpha),
        t1,
    );
    let mk = |party: u8, root: Seed| DcfKey {
        domain_bits,
        party,
        root_seed: root,
        levels: levels.clone(),
        final_cw,
    };
    Ok((mk(0, root0), mk(1, root1)))
}

/// Evaluate one party's key at public point `x`.
pub fn dcf_eval_multi<const W: usize>(key: &DcfKey<W>, x: u64) -> Result<[Ring64; W]> {
    check_domain(key.domain_bits)?;
    check_point(key.domain_bits, x)?;
    if key.levels.len() != key.domain_bits as usize {
        return Err(Error::Format("key level count does not match domain".into()));
    }
    let n = key.domain_bits;
    let negate = key.party == 1;
    let mut s = key.root_seed;
    let mut t = key.party == 1;
    let mut v = [Ring64::ZERO; W];
    for i in 1..=n {
        let cw = &key.levels[(i - 1) as usize];
        let e = expand(&s);
        let x_i = msb_bit(x, n, i);
        let (mut child_s, mut child_t, child_v) = if x_i {
            (e.s_r, e.t_r, take::<W>(e.v_r))
        } else {
            (e.s_l, e.t_l, take::<W>(e.v_l))
        };
        let mut step = child_v;
        if t {
            step = group_add(step, cw.v);
            child_s = xor_seed(&child_s, &cw.s);
            child_t ^= if x_i { cw.t_r } else { cw.t_l };
        }
        v = group_add(v, group_sign(step, negate));
        s = child_s;
        t = child_t;
    }
    let mut leaf = take::<W>(convert(&s));
    if t {
        leaf = group_add(leaf, key.final_cw);
    }
    Ok(group_add(v, group_sign(leaf, negate)))
}

/// Single-payload keygen: the public comparison-key API.
pub fn dcf_keygen(
    domain_bits: u8,
    alpha: u64,
    beta: Ring64,
    rng: &mut ChaCha12Rng,
) -> Result<(DcfKey<1>, DcfKey<1>)> {
    dcf_gen_multi(domain_bits, alpha, [beta], rng)
}

/// Single-payload evaluation.
pub fn dcf_eval(key: &DcfKey<1>, x: u64) -> Result<Ring64> {
    Ok(dcf_eval_multi(key, x)?[0])
}

const DCF1_MAGIC: &[u8; 4] = b"DCF1";
const DCF2_MAGIC: &[u8; 4] = b"DCF2";

fn write_key_body<const W: usize>(key: &DcfKey<W>, out: &mut Vec<u8>) {
    out.push(key.domain_bits);
    out.push(key.party);
}

fn write_levels<const W: usize>(key: &DcfKey<W>, out: &mut Vec<u8>) {
    out.extend_from_slice(&key.root_seed);
    for cw in &key.levels {
        out.extend_from_slice(&cw.s);
        for w in &cw.v {
            out.extend_from_slice(&w.0.to_le_bytes());
        }
        out.push(cw.t_l as u8 | (cw.t_r as u8) << 1);
    }
    for w in &key.final_cw {
        out.extend_from_slice(&w.0.to_le_bytes());
    }
}

/// Serialize a single-payload key with its public payload value as `DCF1`.
pub fn write_dcf1(key: &DcfKey<1>, beta: Ring64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DCF1_MAGIC);
    write_key_body(key, &mut out);
    out.extend_from_slice(&beta.0.to_le_bytes());
    write_levels(key, &mut out);
    out
}

/// Serialize a two-payload key as `DCF2` (payload values stay private).
pub fn write_dcf2(key: &DcfKey<2>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DCF2_MAGIC);
    write_key_body(key, &mut out);
    write_levels(key, &mut out);
    out
}

fn read_header<'a>(buf: &'a [u8], magic: &[u8; 4]) -> Result<(u8, u8, &'a [u8])> {
    if buf.len() < 6 {
        return Err(Error::Format("key record truncated before header".into()));
    }
    if &buf[..4] != magic {
        return Err(Error::Format("bad key magic".into()));
    }
    let domain_bits = buf[4];
    check_domain(domain_bits).map_err(|_| Error::Format(format!("bad domain_bits {domain_bits}")))?;
    let party = buf[5];
    if party > 1 {
        return Err(Error::Format(format!("bad party id {party}")));
    }
    Ok((domain_bits, party, &buf[6..]))
}

fn read_levels<const W: usize>(
    domain_bits: u8,
    party: u8,
    buf: &[u8],
) -> Result<(DcfKey<W>, usize)> {
    let per_level = 16 + 8 * W + 1;
    let need = 16 + per_level * domain_bits as usize + 8 * W;
    if buf.len() < need {
        return Err(Error::Format(format!(
            "key record truncated: want {need} bytes, have {}",
            buf.len()
        )));
    }
    let root_seed: Seed = buf[..16].try_into().unwrap();
    let mut off = 16;
    let mut levels = Vec::with_capacity(domain_bits as usize);
    for _ in 0..domain_bits {
        let s: Seed = buf[off..off + 16].try_into().unwrap();
        off += 16;
        let v: [Ring64; W] = std::array::from_fn(|i| {
            Ring64(u64::from_le_bytes(buf[off + 8 * i..off + 8 * i + 8].try_into().unwrap()))
        });
        off += 8 * W;
        let flags = buf[off];
        off += 1;
        if flags > 3 {
            return Err(Error::Format(format!("bad control-bit flags {flags:#x}")));
        }
        levels.push(CorrectionWord { s, v, t_l: flags & 1 == 1, t_r: flags & 2 == 2 });
    }
    let final_cw: [Ring64; W] = std::array::from_fn(|i| {
        Ring64(u64::from_le_bytes(buf[off + 8 * i..off + 8 * i + 8].try_into().unwrap()))
    });
    off += 8 * W;
    Ok((DcfKey { domain_bits, party, root_seed, levels, final_cw }, off))
}

/// Parse a `DCF1` record; returns the key, its payload, and bytes consumed.
pub fn read_dcf1(buf: &[u8]) -> Result<(DcfKey<1>, Ring64, usize)> {
    let (domain_bits, party, rest) = read_header(buf, DCF1_MAGIC)?;
    if rest.len() < 8 {
        return Err(Error::Format("DCF1 truncated before payload".into()));
    }
    let beta = Ring64(u64::from_le_bytes(rest[..8].try_into().unwrap()));
    let (key, used) = read_levels::<1>(domain_bits, party, &rest[8..])?;
    Ok((key, beta, 6 + 8 + used))
}

/// Parse a `DCF2` record; returns the key and bytes consumed.
pub fn read_dcf2(buf: &[u8]) -> Result<(DcfKey<2>, usize)> {
    let (domain_bits, party, rest) = read_header(buf, DCF2_MAGIC)?;
    let (key, used) = read_levels::<2>(domain_bits, party, rest)?;
    Ok((key, 6 + used))
}
