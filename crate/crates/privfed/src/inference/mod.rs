//! Two-party encrypted inference: the model owner and the data owner each
//! hold additive shares of the model and the input, run the forward pass
//! jointly (Beaver matmuls, masked-comparison ReLU, tournament argmax), and
//! only the data owner can decrypt the predicted label.
//!
//! Preprocessing material is dealt per image from a seeded dealer and is
//! single-use; a [`GatePlan`] states exactly how much material and how many
//! online communication rounds one inference costs, and tests hold the
//! implementation to those numbers.

pub mod service;

use crate::error::{Error, Result};
use crate::fixed::{encode_fixed, FixedTensor, Ring64};
use crate::fss::gadgets::{
    gen_mask_pairs, read_mask, secure_argmax, secure_relu, write_mask, MaskShare, MaskStore,
};
use crate::nn::layers::im2col_map;
use crate::nn::{Architecture, ModelParams, CNN_C1, CNN_C2, CNN_FC, CONV_KERNEL};
use crate::shares::{
    beaver_matmul, share_tensor, truncate_share, BeaverTriple, Dealer, SessionId, TripleKind,
    TripleStore,
};
use crate::transport::{Frame, MsgType, Net};

/// Distinct top-1 logit gaps below this (in absolute units) count as ties:
/// fixed-point noise may legitimately flip them.
pub fn margin_guard(frac_bits: u8) -> f64 {
    2f64.powi(-(frac_bits as i32 - 6))
}

fn ceil_log2(c: usize) -> u64 {
    if c <= 1 {
        0
    } else {
        (usize::BITS - (c - 1).leading_zeros()) as u64
    }
}

/// Static per-inference cost of an architecture: every multiplication gate
/// in consumption order, every comparison-mask batch, and the exact number
/// of online communication rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatePlan {
    pub arch: Architecture,
    /// Matmul triples in the order the forward pass takes them.
    pub matmuls: Vec<TripleKind>,
    /// Elements passed through secure ReLU, one entry per ReLU layer.
    pub relu_elems: Vec<usize>,
    pub argmax_masks: usize,
    pub classes: usize,
}

impl GatePlan {
    pub fn for_arch(arch: &Architecture) -> Result<GatePlan> {
        arch.validate()?;
        let classes = arch.classes();
        let argmax_masks = crate::fss::gadgets::argmax_mask_cost(classes);
        match arch {
            Architecture::SmallCnn { in_channels, height, width, .. } => {
                let (h, w) = (*height, *width);
                let k2 = CONV_KERNEL * CONV_KERNEL;
                let flat = arch.cnn_flat_dim().unwrap();
                Ok(GatePlan {
                    arch: arch.clone(),
                    matmuls: vec![
                        TripleKind::Matmul { m: CNN_C1, k: in_channels * k2, n: h * w },
                        TripleKind::Matmul { m: CNN_C2, k: CNN_C1 * k2, n: (h / 2) * (w / 2) },
                        TripleKind::Matmul { m: CNN_FC, k: flat, n: 1 },
                        TripleKind::Matmul { m: classes, k: CNN_FC, n: 1 },
                    ],
                    relu_elems: vec![CNN_C1 * h * w, CNN_C2 * (h / 2) * (w / 2), CNN_FC],
                    argmax_masks,
                    classes,
                })
            }
            Architecture::Mlp { inputs, hidden, .. } => {
                let mut dims = vec![*inputs];
                dims.extend_from_slice(hidden);
                dims.push(classes);
                let matmuls = dims
                    .windows(2)
                    .map(|p| TripleKind::Matmul { m: p[1], k: p[0], n: 1 })
                    .collect();
                Ok(GatePlan {
                    arch: arch.clone(),
                    matmuls,
                    relu_elems: hidden.clone(),
                    argmax_masks,
                    classes,
                })
            }
        }
    }

    pub fn relu_layers(&self) -> usize {
        self.relu_elems.len()
    }

    pub fn total_masks(&self) -> usize {
        self.relu_elems.iter().sum::<usize>() + self.argmax_masks
    }

    /// Exact online rounds one inference costs each party: one opening per
    /// matmul, one per ReLU layer, and `ceil(log2 C) + 1` for the argmax
    /// tournament plus its final sign round. The closing result handover is
    /// a lone send, which the round meter does not count.
    pub fn online_rounds(&self) -> u64 {
        let argmax = if self.classes > 1 { ceil_log2(self.classes) + 1 } else { 0 };
        self.matmuls.len() as u64 + self.relu_layers() as u64 + argmax
    }
}

/// One party's additive share of every model parameter, in declared order.
#[derive(Debug, Clone)]
pub struct SharedModel {
    pub arch: Architecture,
    pub frac_bits: u8,
    pub shares: Vec<FixedTensor>,
}

/// Encode the model to fixed point and split it into two additive shares.
pub fn share_model(
    params: &ModelParams,
    frac_bits: u8,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<(SharedModel, SharedModel)> {
    params.validate()?;
    let mut a = Vec::with_capacity(params.named.len());
    let mut b = Vec::with_capacity(params.named.len());
    for (_, t) in &params.named {
        let enc = encode_fixed(t, frac_bits)?;
        let mut halves = share_tensor(&enc, 2, rng)?;
        b.push(halves.pop().unwrap());
        a.push(halves.pop().unwrap());
    }
    Ok((
        SharedModel { arch: params.arch.clone(), frac_bits, shares: a },
        SharedModel { arch: params.arch.clone(), frac_bits, shares: b },
    ))
}

/// Preprocessing for some number of inferences, as consumable stores.
#[derive(Default)]
pub struct Material {
    pub triples: TripleStore,
    pub masks: MaskStore,
}

/// The same material in transferable form (what a KEYBLOCK frame carries).
#[derive(Debug, Clone)]
pub struct MaterialBlock {
    pub triples: Vec<BeaverTriple>,
    pub masks: Vec<MaskShare>,
}

impl Material {
    pub fn absorb(&mut self, block: MaterialBlock) {
        for t in block.triples {
            self.triples.put(t);
        }
        self.masks.deposit(block.masks);
    }
}

impl MaterialBlock {
    pub fn into_material(self) -> Material {
        let mut m = Material::default();
        m.absorb(self);
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.triples.len() as u32).to_le_bytes());
        for t in &self.triples {
            let TripleKind::Matmul { m, k, n } = &t.kind else {
                unreachable!("inference deals matmul triples only");
            };
            for d in [*m, *k, *n] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for part in [&t.a, &t.b, &t.c] {
                out.extend_from_slice(&crate::fixed::to_fxt1_bytes(part));
            }
        }
        out.extend_from_slice(&(self.masks.len() as u32).to_le_bytes());
        for mask in &self.masks {
            out.extend_from_slice(&write_mask(mask));
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<MaterialBlock> {
        let take_u32 = |buf: &[u8], at: usize| -> Result<u32> {
            buf.get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::Format("material block truncated".into()))
        };
        let mut at = 0usize;
        let n_triples = take_u32(buf, at)? as usize;
        at += 4;
        let mut triples = Vec::with_capacity(n_triples);
        for _ in 0..n_triples {
            let m = take_u32(buf, at)? as usize;
            let k = take_u32(buf, at + 4)? as usize;
            let n = take_u32(buf, at + 8)? as usize;
            at += 12;
            let mut parts = Vec::with_capacity(3);
            for _ in 0..3 {
                let (t, used) = crate::fixed::read_fxt1(&buf[at..])?;
                at += used;
                parts.push(t);
            }
            let c = parts.pop().unwrap();
            let b = parts.pop().unwrap();
            let a = parts.pop().unwrap();
            triples.push(BeaverTriple { kind: TripleKind::Matmul { m, k, n }, a, b, c });
        }
        let n_masks = take_u32(buf, at)? as usize;
        at += 4;
        let mut masks = Vec::with_capacity(n_masks);
        for _ in 0..n_masks {
            let (mask, used) = read_mask(&buf[at..])?;
            at += used;
            masks.push(mask);
        }
        if at != buf.len() {
            return Err(Error::Format("trailing bytes in material block".into()));
        }
        Ok(MaterialBlock { triples, masks })
    }
}

/// Deal exactly one inference's worth of correlated randomness.
pub fn deal_one(
    plan: &GatePlan,
    dealer: &mut Dealer,
    frac_bits: u8,
) -> Result<(MaterialBlock, MaterialBlock)> {
    let mut a = MaterialBlock { triples: Vec::new(), masks: Vec::new() };
    let mut b = MaterialBlock { triples: Vec::new(), masks: Vec::new() };
    for kind in &plan.matmuls {
        let TripleKind::Matmul { m, k, n } = kind else {
            return Err(Error::Parameter("gate plan holds a non-matmul triple".into()));
        };
        let (t0, t1) = dealer.matmul_triple(*m, *k, *n, frac_bits, frac_bits)?;
        a.triples.push(t0);
        b.triples.push(t1);
    }
    let (m0, m1) = gen_mask_pairs(plan.total_masks(), dealer.rng())?;
    a.masks = m0;
    b.masks = m1;
    Ok((a, b))
}

fn with_shape(t: FixedTensor, shape: Vec<usize>) -> FixedTensor {
    debug_assert_eq!(t.numel(), shape.iter().product::<usize>());
    FixedTensor { shape, frac_bits: t.frac_bits, data: t.data }
}

/// Apply a public im2col gather to this party's share; padding taps are
/// public zeros, so both shares agree on them.
fn gather_ring(x: &FixedTensor, map: &[Option<usize>], rows: usize) -> FixedTensor {
    let data: Vec<Ring64> =
        map.iter().map(|m| m.map_or(Ring64::ZERO, |i| x.data[i])).collect();
    FixedTensor {
        shape: vec![rows, map.len() / rows],
        frac_bits: x.frac_bits,
        data,
    }
}

/// 2x2 average pooling on a `[c, h*w]` share: exact ring sums of each
/// window, then a probabilistic shared shift that divides the value by 4
/// while keeping the scale.
fn pool_share(me: usize, z: &FixedTensor, h: usize, w: usize) -> Result<FixedTensor> {
    let c = z.shape[0];
    let (h2, w2) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h2 {
            for x in 0..w2 {
                let idx = base + 2 * y * w + 2 * x;
                data.push(z.data[idx] + z.data[idx + 1] + z.data[idx + w] + z.data[idx + w + 1]);
            }
        }
    }
    let sum = FixedTensor { shape: vec![c, h2 * w2], frac_bits: z.frac_bits, data };
    let mut avg = truncate_share(me, &sum, 2)?;
    // The shift divided the value by 4; the scale is unchanged.
    avg.frac_bits = sum.frac_bits;
    Ok(avg)
}

/// Add a shared bias vector to every column of a `[m, n]` shared matrix.
fn add_bias(z: &mut FixedTensor, bias: &FixedTensor) {
    let (m, n) = (z.shape[0], z.shape[1]);
    for r in 0..m {
        for col in 0..n {
            z.data[r * n + col] += bias.data[r];
        }
    }
}

/// Matmul gate: Beaver multiply at doubled scale, then truncate back.
fn linear_gate(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    material: &mut Material,
    kind: &TripleKind,
    weight: &FixedTensor,
    x: &FixedTensor,
    bias: &FixedTensor,
) -> Result<FixedTensor> {
    let triple = material.triples.take(kind)?;
    let raw = beaver_matmul(net, peer, session, weight, x, triple)?;
    let mut z = truncate_share(net.me(), &raw, weight.frac_bits)?;
    add_bias(&mut z, bias);
    Ok(z)
}

/// Both parties' result of one secure forward pass: shares of the one-hot
/// label (scale `2^f`) and of the logits.
#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub onehot_share: FixedTensor,
    pub logits_share: FixedTensor,
}

/// The party-symmetric secure forward pass for one input share.
pub fn secure_forward_one(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    model: &SharedModel,
    x_share: &FixedTensor,
    material: &mut Material,
    plan: &GatePlan,
) -> Result<InferenceOutput> {
    if plan.arch != model.arch {
        return Err(Error::Shape("gate plan for a different architecture".into()));
    }
    if x_share.frac_bits != model.frac_bits {
        return Err(Error::Parameter("input share scale differs from the model scale".into()));
    }
    let me = net.me();
    let logits = match &model.arch {
        Architecture::SmallCnn { in_channels, height, width, .. } => {
            let (h, w) = (*height, *width);
            if x_share.shape != [*in_channels, h, w] {
                return Err(Error::Shape(format!(
                    "input share shaped {:?}, expected [{in_channels}, {h}, {w}]",
                    x_share.shape
                )));
            }
            let k2 = CONV_KERNEL * CONV_KERNEL;

            let map1 = im2col_map(*in_channels, h, w);
            let col1 = gather_ring(x_share, &map1, in_channels * k2);
            let mut z = linear_gate(
                net, peer, session, material, &plan.matmuls[0],
                &model.shares[0], &col1, &model.shares[1],
            )?;
            z = secure_relu(net, peer, session, &mut material.masks, &z)?;
            let p1 = pool_share(me, &z, h, w)?;

            let (h2, w2) = (h / 2, w / 2);
            let map2 = im2col_map(CNN_C1, h2, w2);
            let p1 = with_shape(p1, vec![CNN_C1 * h2 * w2]);
            let col2 = gather_ring(&p1, &map2, CNN_C1 * k2);
            let mut z = linear_gate(
                net, peer, session, material, &plan.matmuls[1],
                &model.shares[2], &col2, &model.shares[3],
            )?;
            z = secure_relu(net, peer, session, &mut material.masks, &z)?;
            let p2 = pool_share(me, &z, h2, w2)?;

            let flat = with_shape(p2, vec![plan.arch.cnn_flat_dim().unwrap(), 1]);
            let mut z = linear_gate(
                net, peer, session, material, &plan.matmuls[2],
                &model.shares[4], &flat, &model.shares[5],
            )?;
            z = secure_relu(net, peer, session, &mut material.masks, &z)?;
            linear_gate(
                net, peer, session, material, &plan.matmuls[3],
                &model.shares[6], &z, &model.shares[7],
            )?
        }
        Architecture::Mlp { inputs, hidden, .. } => {
            if x_share.shape != [*inputs] {
                return Err(Error::Shape(format!(
                    "input share shaped {:?}, expected [{inputs}]",
                    x_share.shape
                )));
            }
            let mut act = with_shape(x_share.clone(), vec![*inputs, 1]);
            let layers = hidden.len() + 1;
            for l in 0..layers {
                let mut z = linear_gate(
                    net, peer, session, material, &plan.matmuls[l],
                    &model.shares[2 * l], &act, &model.shares[2 * l + 1],
                )?;
                if l + 1 < layers {
                    z = secure_relu(net, peer, session, &mut material.masks, &z)?;
                }
                act = z;
            }
            act
        }
    };
    let logits_share = with_shape(logits, vec![plan.classes]);
    let onehot_share =
        secure_argmax(net, peer, session, &mut material.masks, &logits_share)?;
    Ok(InferenceOutput { onehot_share, logits_share })
}

/// What the data owner decrypts at the end of one inference.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Prediction {
    pub label: usize,
    /// Softmax over reconstructed logits; only present when the session was
    /// configured to return probabilities.
    pub probabilities: Option<Vec<f64>>,
}

/// Final handover: the model owner sends its output shares to the data
/// owner and learns nothing; the data owner reconstructs and returns the
/// prediction.
pub fn finish_prediction(
    net: &mut impl Net,
    peer: usize,
    session: SessionId,
    data_owner: usize,
    out: &InferenceOutput,
    with_probabilities: bool,
) -> Result<Option<Prediction>> {
    use crate::fixed::{decode_fixed, to_fxt1_bytes};
    if net.me() != data_owner {
        let mut payload = to_fxt1_bytes(&out.onehot_share);
        if with_probabilities {
            payload.extend_from_slice(&to_fxt1_bytes(&out.logits_share));
        }
        net.send(peer, Frame::new(MsgType::Result, session, payload))?;
        return Ok(None);
    }
    let frame = net.recv(peer)?;
    if frame.session_id != session || frame.msg_type != MsgType::Result {
        return Err(Error::Protocol("expected the result share handover".into()));
    }
    let (their_onehot, used) = crate::fixed::read_fxt1(&frame.payload)?;
    let onehot = decode_fixed(&out.onehot_share.add(&their_onehot)?);
    let label = onehot
        .data
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let probabilities = if with_probabilities {
        let (their_logits, used2) = crate::fixed::read_fxt1(&frame.payload[used..])?;
        if used + used2 != frame.payload.len() {
            return Err(Error::Format("trailing bytes in result frame".into()));
        }
        let logits = decode_fixed(&out.logits_share.add(&their_logits)?);
        Some(crate::nn::layers::softmax(&logits.data))
    } else {
        if used != frame.payload.len() {
            return Err(Error::Format("trailing bytes in result frame".into()));
        }
        None
    };
    Ok(Some(Prediction { label, probabilities }))
}

/// Which asset a session endpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    ModelOwner,
    DataOwner,
}

/// Per-party outcome of [`run_inference_sim`]: every image's output shares,
/// plus the decrypted predictions on the data owner's side only.
pub type SimSessionResult = (Vec<InferenceOutput>, Option<Vec<Prediction>>);

/// Run a complete two-party session inside the virtual-clock simulator:
/// party 0 owns the model, party 1 owns `samples` and decrypts one
/// [`Prediction`] per sample. Deterministic for fixed seeds.
pub fn run_inference_sim(
    params: &ModelParams,
    samples: Vec<crate::tensor::PlainTensor>,
    frac_bits: u8,
    seed: u64,
    latency: crate::transport::sim::LatencyModel,
    with_probabilities: bool,
) -> Result<crate::transport::sim::SimRun<SimSessionResult>> {
    use crate::transport::sim::SimParty;

    let (sa, sb) = prepare_session(
        params,
        frac_bits,
        crate::seed::derive_seed128(seed, "inf.dealer"),
        samples.len(),
    )?;
    let sid = sa.session_id;
    let n = samples.len();

    let owner = move |net: &mut SimParty| -> Result<SimSessionResult> {
        let (model, mut material, plan) = (sa.model, sa.material, sa.plan);
        let mut outs = Vec::with_capacity(n);
        for _ in 0..n {
            let f = net.recv(1)?;
            if f.msg_type != MsgType::Share || f.session_id != sid {
                return Err(Error::Protocol("expected an input share".into()));
            }
            let (x, _) = crate::fixed::read_fxt1(&f.payload)?;
            let out = secure_forward_one(net, 1, sid, &model, &x, &mut material, &plan)?;
            finish_prediction(net, 1, sid, 1, &out, with_probabilities)?;
            outs.push(out);
        }
        Ok((outs, None))
    };
    let data = move |net: &mut SimParty| -> Result<SimSessionResult> {
        let (model, mut material, plan) = (sb.model, sb.material, sb.plan);
        let mut rng = crate::seed::rng_from(seed, "inf.split");
        let mut outs = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        for sample in &samples {
            let enc = crate::fixed::encode_fixed(sample, frac_bits)?;
            let mut halves = share_tensor(&enc, 2, &mut rng)?;
            let owner_share = halves.pop().unwrap();
            let mine = halves.pop().unwrap();
            net.send(
                0,
                Frame::new(MsgType::Share, sid, crate::fixed::to_fxt1_bytes(&owner_share)),
            )?;
            let out = secure_forward_one(net, 0, sid, &model, &mine, &mut material, &plan)?;
            let pred = finish_prediction(net, 0, sid, 1, &out, with_probabilities)?
                .expect("the data owner reconstructs the prediction");
            outs.push(out);
            preds.push(pred);
        }
        Ok((outs, Some(preds)))
    };

    type PartyFn = Box<dyn FnOnce(&mut SimParty) -> Result<SimSessionResult> + Send>;
    let fns: Vec<PartyFn> = vec![Box::new(owner), Box::new(data)];
    crate::transport::sim::run_sim(latency, fns)
}

/// One endpoint of a prepared inference session.
pub struct InferenceSession {
    pub session_id: SessionId,
    pub role: Role,
    pub model: SharedModel,
    pub material: Material,
    pub plan: GatePlan,
}

/// Share the model and deal material for `images` inferences, producing the
/// model owner's and data owner's endpoints of one session.
pub fn prepare_session(
    params: &ModelParams,
    frac_bits: u8,
    dealer_seed: [u8; 16],
    images: usize,
) -> Result<(InferenceSession, InferenceSession)> {
    let plan = GatePlan::for_arch(&params.arch)?;
    let mut dealer = Dealer::new(dealer_seed);
    let (model_a, model_b) = share_model(params, frac_bits, dealer.rng())?;
    let mut mat_a = Material::default();
    let mut mat_b = Material::default();
    for _ in 0..images {
        let (a, b) = deal_one(&plan, &mut dealer, frac_bits)?;
        mat_a.absorb(a);
        mat_b.absorb(b);
    }
    let session_id = crate::seed::derive_seed128(
        u64::from_le_bytes(dealer_seed[..8].try_into().unwrap()),
        "infer.session",
    );
    Ok((
        InferenceSession {
            session_id,
            role: Role::ModelOwner,
            model: model_a,
            material: mat_a,
            plan: plan.clone(),
        },
        InferenceSession {
            session_id,
            role: Role::DataOwner,
            model: model_b,
            material: mat_b,
            plan,
        },
    ))
}
