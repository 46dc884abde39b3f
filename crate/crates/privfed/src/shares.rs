//! Additive secret sharing over Z_2^64 and the protocols built on it.
//!
//! A tensor is split into `n` uniformly random shares that sum to it mod
//! 2^64; any `n-1` shares are independent of the secret. Multiplication of
//! shared tensors uses dealer-issued Beaver triples (elementwise and matmul
//! variants); only the blinded differences `x - a`, `y - b` are ever opened.
//! Triples are single-use: stores track issue/consume counts so a protocol
//! can assert it used exactly its preprocessing budget.

use crate::error::{Error, Result};
use crate::fixed::{encode_scalar, read_fxt1, to_fxt1_bytes, FixedTensor, Ring64};
use crate::transport::{Frame, MsgType, Net};
use rand::RngCore;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

pub type SessionId = [u8; 16];

pub const MIN_PARTIES: usize = 2;
pub const MAX_PARTIES: usize = 8;

/// One party's share of a secret tensor, tagged for the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditiveShare {
    pub party: usize,
    pub session: SessionId,
    pub value: FixedTensor,
}

fn random_ring(rng: &mut ChaCha12Rng) -> Ring64 {
    Ring64(rng.next_u64())
}

fn random_tensor(shape: &[usize], frac_bits: u8, rng: &mut ChaCha12Rng) -> FixedTensor {
    let n: usize = shape.iter().product();
    FixedTensor {
        shape: shape.to_vec(),
        frac_bits,
        data: (0..n).map(|_| random_ring(rng)).collect(),
    }
}

/// Split `t` into `n` additive shares. The first `n-1` are uniform; the last
/// absorbs the remainder so the shares sum to `t` exactly.
pub fn share_tensor(t: &FixedTensor, n: usize, rng: &mut ChaCha12Rng) -> Result<Vec<FixedTensor>> {
    if !(MIN_PARTIES..=MAX_PARTIES).contains(&n) {
        return Err(Error::Parameter(format!(
            "share count {n} outside [{MIN_PARTIES}, {MAX_PARTIES}]"
        )));
    }
    let mut shares = Vec::with_capacity(n);
    let mut last = t.clone();
    for _ in 0..n - 1 {
        let r = random_tensor(&t.shape, t.frac_bits, rng);
        last = last.sub(&r)?;
        shares.push(r);
    }
    shares.push(last);
    Ok(shares)
}

/// Sum shares back into the secret. Exact in the ring.
pub fn reconstruct(shares: &[FixedTensor]) -> Result<FixedTensor> {
    let first = shares
        .first()
        .ok_or_else(|| Error::Parameter("reconstruct needs at least one share".into()))?;
    let mut acc = first.clone();
    for s in &shares[1..] {
        acc = acc.add(s)?;
    }
    Ok(acc)
}

/// Rescale a 2-party share locally after a product. Party 0 floor-shifts its
/// share; party 1 negates, floor-shifts, negates. The reconstructed value is
/// within 1 ulp of the plain truncation except with probability about
/// `|x| / 2^64`, negligible at the documented magnitude bounds.
pub fn truncate_share(party: usize, t: &FixedTensor, bits: u8) -> Result<FixedTensor> {
    if bits > t.frac_bits {
        return Err(Error::Parameter(format!(
            "cannot truncate {bits} bits from scale 2^{}",
            t.frac_bits
        )));
    }
    let shift = |v: Ring64| -> Ring64 {
        if party == 0 {
            Ring64(v.0 >> bits)
        } else {
            Ring64((v.0.wrapping_neg() >> bits).wrapping_neg())
        }
    };
    Ok(FixedTensor {
        shape: t.shape.clone(),
        frac_bits: t.frac_bits - bits,
        data: t.data.iter().map(|&v| shift(v)).collect(),
    })
}

/// The two multiplication gate variants triples exist for.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TripleKind {
    Elementwise { shape: Vec<usize> },
    Matmul { m: usize, k: usize, n: usize },
}

/// One party's share of a Beaver triple `c = a * b`.
#[derive(Debug, Clone)]
pub struct BeaverTriple {
    pub kind: TripleKind,
    pub a: FixedTensor,
    pub b: FixedTensor,
    pub c: FixedTensor,
}

/// Trusted dealer: expands a seed into correlated randomness for two parties.
pub struct Dealer {
    rng: ChaCha12Rng,
}

impl Dealer {
    pub fn new(seed: [u8; 16]) -> Dealer {
        let mut full = [0u8; 32];
        full[..16].copy_from_slice(&seed);
        full[16..].copy_from_slice(&seed);
        Dealer { rng: rand_chacha::rand_core::SeedableRng::from_seed(full) }
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }

    fn split2(&mut self, t: &FixedTensor) -> (FixedTensor, FixedTensor) {
        let r = random_tensor(&t.shape, t.frac_bits, &mut self.rng);
        let other = t.sub(&r).expect("same layout");
        (r, other)
    }

    /// Elementwise triple with operand scales `frac_a`, `frac_b`.
    pub fn elementwise_triple(
        &mut self,
        shape: &[usize],
        frac_a: u8,
        frac_b: u8,
    ) -> Result<(BeaverTriple, BeaverTriple)> {
        let a = random_tensor(shape, frac_a, &mut self.rng);
        let b = random_tensor(shape, frac_b, &mut self.rng);
        let c = a.mul(&b)?;
        let kind = TripleKind::Elementwise { shape: shape.to_vec() };
        let (a0, a1) = self.split2(&a);
        let (b0, b1) = self.split2(&b);
        let (c0, c1) = self.split2(&c);
        Ok((
            BeaverTriple { kind: kind.clone(), a: a0, b: b0, c: c0 },
            BeaverTriple { kind, a: a1, b: b1, c: c1 },
        ))
    }

    /// Matmul triple for `(m,k) x (k,n)` with operand scales.
    pub fn matmul_triple(
        &mut self,
        m: usize,
        k: usize,
        n: usize,
        frac_a: u8,
        frac_b: u8,
    ) -> Result<(BeaverTriple, BeaverTriple)> {
        let a = random_tensor(&[m, k], frac_a, &mut self.rng);
        let b = random_tensor(&[k, n], frac_b, &mut self.rng);
        let c = a.matmul(&b)?;
        let kind = TripleKind::Matmul { m, k, n };
        let (a0, a1) = self.split2(&a);
        let (b0, b1) = self.split2(&b);
        let (c0, c1) = self.split2(&c);
        Ok((
            BeaverTriple { kind: kind.clone(), a: a0, b: b0, c: c0 },
            BeaverTriple { kind, a: a1, b: b1, c: c1 },
        ))
    }
}

/// Per-party stock of unconsumed triples, keyed by gate kind.
#[derive(Default)]
pub struct TripleStore {
    queues: HashMap<TripleKind, std::collections::VecDeque<BeaverTriple>>,
    issued: u64,
    consumed: u64,
}

impl TripleStore {
    pub fn put(&mut self, t: BeaverTriple) {
        self.issued += 1;
        self.queues.entry(t.kind.clone()).or_default().push_back(t);
    }

    /// Take the oldest triple of `kind`; single use by construction.
    pub fn take(&mut self, kind: &TripleKind) -> Result<BeaverTriple> {
        let q = self
            .queues
            .get_mut(kind)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| Error::Preprocessing(format!("no triple left for {kind:?}")))?;
        self.consumed += 1;
        Ok(q.pop_front().unwrap())
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn remaining(&self) -> u64 {
        self.issued - self.consumed
    }
}

fn open_frame_payload(parts: &[&FixedTensor]) -> Vec<u8> {
    let mut payload = Vec::new();
    for t in parts {
        payload.extend_from_slice(&to_fxt1_bytes(t));
    }
    payload
}

fn parse_tensors(mut buf: &[u8], expect: usize) -> Result<Vec<FixedTensor>> {
    let mut out = Vec::with_capacity(expect);
    for _ in 0..expect {
        let (t, used) = read_fxt1(buf)?;
        buf = &buf[used..];
        out.push(t);
    }
    if !buf.is_empty() {
        return Err(Error::Format("trailing bytes after expected tensors".into()));
    }
    Ok(out)
}

/// Open the given share tensors to both parties in one round: each side sends
/// its shares, receives the peer's, and adds. Returns the public values.
pub fn open_tensors(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    shares: &[&FixedTensor],
) -> Result<Vec<FixedTensor>> {
    let frame = Frame::new(MsgType::Open, session, open_frame_payload(shares));
    net.send(peer, frame)?;
    let reply = net.recv(peer)?;
    if reply.session_id != session {
        return Err(Error::Protocol("open reply for a different session".into()));
    }
    if reply.msg_type != MsgType::Open {
        return Err(Error::Protocol(format!("expected Open frame, got {:?}", reply.msg_type)));
    }
    let theirs = parse_tensors(&reply.payload, shares.len())?;
    shares
        .iter()
        .zip(theirs)
        .map(|(mine, other)| mine.add(&other))
        .collect()
}

/// Elementwise product of shared tensors via one Beaver triple. The result
/// scale is the sum of the operand scales; callers truncate afterwards.
pub fn beaver_mul_elem(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    x: &FixedTensor,
    y: &FixedTensor,
    triple: BeaverTriple,
) -> Result<FixedTensor> {
    match &triple.kind {
        TripleKind::Elementwise { shape } if *shape == x.shape => {}
        _ => return Err(Error::Parameter("triple kind does not match gate".into())),
    }
    let eps_sh = x.sub(&triple.a)?;
    let del_sh = y.sub(&triple.b)?;
    let opened = open_tensors(net, peer, session, &[&eps_sh, &del_sh])?;
    let (eps, del) = (&opened[0], &opened[1]);
    // z = c + eps*b + del*a (+ eps*del at party 0)
    let mut z = triple.c.add(&eps.mul(&triple.b)?)?;
    z = z.add(&del.mul(&triple.a)?)?;
    if net.me() == 0 {
        z = z.add(&eps.mul(del)?)?;
    }
    Ok(z)
}

/// Matrix product of shared tensors via one matmul Beaver triple.
pub fn beaver_matmul(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    x: &FixedTensor,
    y: &FixedTensor,
    triple: BeaverTriple,
) -> Result<FixedTensor> {
    match &triple.kind {
        TripleKind::Matmul { m, k, n }
            if x.shape == [*m, *k] && y.shape == [*k, *n] => {}
        _ => return Err(Error::Parameter("triple kind does not match gate".into())),
    }
    let eps_sh = x.sub(&triple.a)?;
    let del_sh = y.sub(&triple.b)?;
    let opened = open_tensors(net, peer, session, &[&eps_sh, &del_sh])?;
    let (eps, del) = (&opened[0], &opened[1]);
    let mut z = triple.c.add(&eps.matmul(&triple.b)?)?;
    z = z.add(&triple.a.matmul(del)?)?;
    if net.me() == 0 {
        z = z.add(&eps.matmul(del)?)?;
    }
    Ok(z)
}

/// n-party secure summation. Every party contributes a tensor of identical
/// layout; each splits its contribution among all parties, partial sums flow
/// to `collector`, and only the total is ever reconstructed. Returns the
/// revealed sum at the collector, `None` elsewhere.
pub fn secure_sum_collect(
    net: &mut impl Net,
    session: SessionId,
    contribution: &FixedTensor,
    collector: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Option<FixedTensor>> {
    let n = net.n_parties();
    let me = net.me();
    let shares = share_tensor(contribution, n, rng)?;
    for (j, share) in shares.iter().enumerate() {
        if j != me {
            let frame = Frame::new(MsgType::Share, session, to_fxt1_bytes(share));
            net.send(j, frame)?;
        }
    }
    let mut acc = shares[me].clone();
    for j in 0..n {
        if j == me {
            continue;
        }
        let frame = net.recv(j)?;
        if frame.session_id != session || frame.msg_type != MsgType::Share {
            return Err(Error::Protocol("unexpected frame during share distribution".into()));
        }
        let (t, used) = read_fxt1(&frame.payload)?;
        if used != frame.payload.len() {
            return Err(Error::Format("trailing bytes in share frame".into()));
        }
        acc = acc.add(&t)?;
    }
    if me == collector {
        let mut parts = vec![acc];
        for j in 0..n {
            if j == me {
                continue;
            }
            let frame = net.recv(j)?;
            if frame.session_id != session || frame.msg_type != MsgType::Result {
                return Err(Error::Protocol("unexpected frame during sum collection".into()));
            }
            let (t, used) = read_fxt1(&frame.payload)?;
            if used != frame.payload.len() {
                return Err(Error::Format("trailing bytes in result frame".into()));
            }
            parts.push(t);
        }
        Ok(Some(reconstruct(&parts)?))
    } else {
        let frame = Frame::new(MsgType::Result, session, to_fxt1_bytes(&acc));
        net.send(collector, frame)?;
        Ok(None)
    }
}

/// Pooled dataset statistics revealed by secure summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub count: f64,
}

/// Securely pool per-node `(sum, sum of squares, count)` and derive global
/// mean and standard deviation: `std = sqrt(sum_sq/N - mean^2)`. Only the
/// three pooled scalars are revealed.
pub fn secure_moments(
    net: &mut impl Net,
    session: SessionId,
    local_sum: f64,
    local_sum_sq: f64,
    local_count: u64,
    frac_bits: u8,
    collector: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Option<Moments>> {
    let contribution = FixedTensor {
        shape: vec![3],
        frac_bits,
        data: vec![
            encode_scalar(local_sum, frac_bits)?,
            encode_scalar(local_sum_sq, frac_bits)?,
            encode_scalar(local_count as f64, frac_bits)?,
        ],
    };
    let total = secure_sum_collect(net, session, &contribution, collector, rng)?;
    Ok(total.map(|t| {
        let dec = crate::fixed::decode_fixed(&t);
        let (sum, sum_sq, count) = (dec.data[0], dec.data[1], dec.data[2]);
        if count <= 0.0 {
            return Moments { mean: 0.0, std: 0.0, count: 0.0 };
        }
        let mean = sum / count;
        let var = (sum_sq / count - mean * mean).max(0.0);
        Moments { mean, std: var.sqrt(), count }
    }))
}
