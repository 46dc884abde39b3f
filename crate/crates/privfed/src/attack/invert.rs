//! Gradient-inversion optimizer: reconstructs the training batch behind a
//! captured update by gradient matching.
//!
//! The attacker minimizes `1 - cos(grad_theta L(x, y), u) + lambda * TV(x)`
//! over candidate inputs `x` (and soft labels when they are not recovered
//! analytically), where `u` is the captured update oriented as a gradient.
//! The derivative of that objective with respect to `x` runs backward
//! through the gradient computation itself — a hand-derived second pass for
//! the MLP in which the ReLU masks are held fixed, since the second
//! derivative of ReLU is zero almost everywhere. Descent uses the sign of
//! the gradient with a step that decays tenfold at 50% and 75% of the
//! iteration budget; restarts differ only in their seeded Gaussian
//! initialization and are merged by index, so a fixed seed reproduces the
//! whole report.

use super::{evaluate_reconstruction, CapturedUpdate, Scenario};
use crate::error::{Error, Result};
use crate::nn::layers::softmax;
use crate::nn::model::argmax;
use crate::nn::{Architecture, ModelParams};
use crate::seed;
use crate::tensor::PlainTensor;
use rand::distributions::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;
use std::time::Instant;

/// How the attack obtains labels for its candidate batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Read the label off the sign pattern of the final-layer bias
    /// gradient; exact for single-sample captures, where the true class is
    /// the only negative entry.
    Analytic,
    /// Optimize per-sample soft labels jointly with the pixels.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Sign-descent steps per restart; 0 returns the initialization.
    pub iterations: usize,
    pub step_size: f64,
    /// Weight of the anisotropic total-variation prior.
    pub lambda_tv: f64,
    pub restarts: usize,
    pub seed: u64,
    pub label_mode: LabelMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 1000,
            step_size: 0.1,
            lambda_tv: 0.0,
            restarts: 2,
            seed: 0,
            label_mode: LabelMode::Analytic,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::Parameter(format!(
                "step size {} must be positive and finite",
                self.step_size
            )));
        }
        if !self.lambda_tv.is_finite() || self.lambda_tv < 0.0 {
            return Err(Error::Parameter(format!(
                "TV weight {} must be finite and non-negative",
                self.lambda_tv
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Parameter("at least one restart is required".into()));
        }
        Ok(())
    }
}

/// One restart's outcome; `reconstruction` is the best point visited, not
/// necessarily the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub restart: usize,
    pub reconstruction: PlainTensor,
    pub labels: Vec<usize>,
    /// Best objective value seen.
    pub objective: f64,
    pub mse: Option<f64>,
    /// Completed descent steps (fewer than requested after an abort).
    pub iterations_run: usize,
    /// True when the objective went non-finite and the restart stopped.
    pub aborted: bool,
    /// Objective at every evaluated point, in order.
    pub trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub scenario: Scenario,
    pub config: AttackConfig,
    pub meta: super::UpdateMeta,
    pub restarts: Vec<RestartOutcome>,
    /// Restart with the lowest objective — the attacker's own pick, made
    /// without seeing ground truth.
    pub best_restart: usize,
    /// Lowest reconstruction error over all restarts, when truth was given.
    pub best_mse: Option<f64>,
    /// Wall-clock duration; the only non-deterministic field.
    pub wall_ms: u64,
}

/// Step size for the `it`-th step of `total`: tenfold decays once half and
/// three quarters of the budget are spent.
fn step_at(it: usize, total: usize, base: f64) -> f64 {
    let half = total.div_ceil(2);
    let three_quarters = (3 * total).div_ceil(4);
    let decays = usize::from(it >= half) + usize::from(it >= three_quarters);
    base * 0.1f64.powi(decays as i32)
}

/// Side lengths for the TV grid: square images get a square grid, anything
/// else falls back to a single row (horizontal differences only).
fn tv_grid(n: usize) -> (usize, usize) {
    let s = (n as f64).sqrt().round() as usize;
    if s > 0 && s * s == n {
        (s, s)
    } else {
        (1, n)
    }
}

/// Anisotropic total variation of one image on an `h x w` grid. Adds
/// `scale` times a subgradient into `g` (zero at exact ties) and returns
/// the TV value.
fn tv_value_and_subgrad(x: &[f64], h: usize, w: usize, scale: f64, g: &mut [f64]) -> f64 {
    // `f64::signum` maps +-0.0 to +-1.0; tied neighbors must contribute
    // nothing, so zero differences are handled explicitly.
    let sign = |d: f64| if d == 0.0 { 0.0 } else { d.signum() };
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                let d = x[i + 1] - x[i];
                total += d.abs();
                g[i + 1] += scale * sign(d);
                g[i] -= scale * sign(d);
            }
            if r + 1 < h {
                let d = x[i + w] - x[i];
                total += d.abs();
                g[i + w] += scale * sign(d);
                g[i] -= scale * sign(d);
            }
        }
    }
    total
}

/// The captured update flattened into gradient orientation: federated
/// deltas are `-lr * (accumulated gradients)`, so they are negated; cosine
/// similarity absorbs the learning-rate scale.
fn oriented_update(update: &CapturedUpdate) -> Vec<f64> {
    let flat = update.update.flatten().data;
    match update.kind {
        Scenario::Local => flat,
        Scenario::FedPlain | Scenario::FedSecure => flat.iter().map(|v| -v).collect(),
    }
}

/// Recovers the label of a single-sample capture from the final-layer bias
/// gradient: softmax cross-entropy makes that gradient `p - onehot(y)`, so
/// the true class is its only negative (here: most negative) entry.
pub fn analytic_label(update: &CapturedUpdate) -> Result<usize> {
    if update.meta.batch_size != 1 {
        return Err(Error::Parameter(format!(
            "analytic label recovery needs a single-sample capture, batch size is {}",
            update.meta.batch_size
        )));
    }
    let layers = match &update.update.arch {
        Architecture::Mlp { hidden, .. } => hidden.len() + 1,
        Architecture::SmallCnn { .. } => 2, // final linear layer is fc2
    };
    let bias = &update.update.get(&format!("fc{layers}.bias")).data;
    let sign = if update.kind == Scenario::Local { 1.0 } else { -1.0 };
    Ok((0..bias.len())
        .min_by(|&a, &b| (sign * bias[a]).total_cmp(&(sign * bias[b])))
        .expect("classifier has at least one class"))
}

/// MLP weights viewed layer by layer, with the offset of each tensor in
/// the flat parameter vector (declared order: fc1.weight, fc1.bias, ...).
struct MlpProblem<'a> {
    weights: Vec<&'a PlainTensor>,
    biases: Vec<&'a PlainTensor>,
    dims: Vec<(usize, usize)>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
    inputs: usize,
    classes: usize,
    n_params: usize,
    batch: usize,
    lambda_tv: f64,
    grid: (usize, usize),
    target: Vec<f64>,
    target_norm: f64,
}

/// Per-sample forward state: pre-activations, activations (a_0 = x), and
/// the softmax of the logits.
struct Flow {
    zs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    p: Vec<f64>,
}

fn matvec(w: &[f64], out: usize, inn: usize, x: &[f64]) -> Vec<f64> {
    (0..out).map(|o| w[o * inn..(o + 1) * inn].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn matvec_t(w: &[f64], out: usize, inn: usize, d: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; inn];
    for o in 0..out {
        let row = &w[o * inn..(o + 1) * inn];
        for (ri, wi) in r.iter_mut().zip(row) {
            *ri += d[o] * wi;
        }
    }
    r
}

impl<'a> MlpProblem<'a> {
    fn new(victim: &'a ModelParams, update: &CapturedUpdate, lambda_tv: f64) -> Result<Self> {
        victim.validate()?;
        update.update.validate()?;
        if update.update.arch != victim.arch {
            return Err(Error::Shape("captured update is for a different architecture".into()));
        }
        let (inputs, hidden, classes) = match &victim.arch {
            Architecture::Mlp { inputs, hidden, classes } => (*inputs, hidden.clone(), *classes),
            Architecture::SmallCnn { .. } => {
                return Err(Error::Parameter(
                    "gradient inversion is implemented for the MLP family".into(),
                ))
            }
        };
        let n_layers = hidden.len() + 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut dims = Vec::with_capacity(n_layers);
        let (mut w_off, mut b_off) = (Vec::new(), Vec::new());
        let mut off = 0;
        for l in 1..=n_layers {
            let w = victim.get(&format!("fc{l}.weight"));
            let b = victim.get(&format!("fc{l}.bias"));
            w_off.push(off);
            off += w.numel();
            b_off.push(off);
            off += b.numel();
            dims.push((w.shape[0], w.shape[1]));
            weights.push(w);
            biases.push(b);
        }
        let batch = update.meta.batch_size;
        if batch == 0 {
            return Err(Error::Degenerate("captured update covers an empty batch".into()));
        }
        let target = oriented_update(update);
        let target_norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        if target_norm == 0.0 {
            return Err(Error::Degenerate("captured update is identically zero".into()));
        }
        Ok(MlpProblem {
            weights,
            biases,
            dims,
            w_off,
            b_off,
            inputs,
            classes,
            n_params: off,
            batch,
            lambda_tv,
            grid: tv_grid(inputs),
            target,
            target_norm,
        })
    }

    fn layers(&self) -> usize {
        self.weights.len()
    }

    fn flow(&self, x: &[f64]) -> Flow {
        let n = self.layers();
        let mut zs = Vec::with_capacity(n);
        let mut acts = vec![x.to_vec()];
        for l in 0..n {
            let (out, inn) = self.dims[l];
            let mut z = matvec(&self.weights[l].data, out, inn, &acts[l]);
            for (zi, bi) in z.iter_mut().zip(&self.biases[l].data) {
                *zi += bi;
            }
            let a = if l + 1 < n {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                Vec::new()
            };
            zs.push(z);
            if l + 1 < n {
                acts.push(a);
            }
        }
        let p = softmax(&zs[n - 1]);
        Flow { zs, acts, p }
    }

    /// Backpropagated errors delta_1..delta_L for one sample against soft
    /// label `y`; delta_L carries the 1/batch factor of the mean loss, as
    /// the training backward pass does.
    fn deltas(&self, flow: &Flow, y: &[f64]) -> Vec<Vec<f64>> {
        let n = self.layers();
        let mut out = vec![Vec::new(); n];
        out[n - 1] = flow
            .p
            .iter()
            .zip(y)
            .map(|(p, y)| (p - y) / self.batch as f64)
            .collect();
        for l in (0..n - 1).rev() {
            let (o, i) = self.dims[l + 1];
            let back = matvec_t(&self.weights[l + 1].data, o, i, &out[l + 1]);
            out[l] = back
                .iter()
                .zip(&flow.zs[l])
                .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
        }
        out
    }

    /// Adds this sample's parameter gradient (dW_l = delta_l a_{l-1}^T,
    /// db_l = delta_l) into the flat accumulator.
    fn add_gradient(&self, flow: &Flow, deltas: &[Vec<f64>], g: &mut [f64]) {
        for l in 0..self.layers() {
            let (out, inn) = self.dims[l];
            let a = &flow.acts[l];
            let base = self.w_off[l];
            for o in 0..out {
                let d = deltas[l][o];
                let row = &mut g[base + o * inn..base + (o + 1) * inn];
                for (gi, ai) in row.iter_mut().zip(a) {
                    *gi += d * ai;
                }
            }
            let brow = &mut g[self.b_off[l]..self.b_off[l] + out];
            for (gi, di) in brow.iter_mut().zip(&deltas[l]) {
                *gi += di;
            }
        }
    }

    /// Gradient of `s = <g(x, y), v>` with respect to this sample's input
    /// and soft label, for fixed `v` — the reverse pass over the gradient
    /// computation. ReLU masks are the ones recorded in `flow`. Returns
    /// (ds/dx, ds/dy).
    fn adjoint(&self, flow: &Flow, deltas: &[Vec<f64>], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.layers();
        let b_inv = 1.0 / self.batch as f64;

        // Adjoints of the deltas: the direct term V_l a_{l-1} + v_l, plus
        // the chain through delta_{l-1} = mask_{l-1} * (W_l^T delta_l),
        // accumulated in ascending order so each layer is complete before
        // it feeds the next.
        let mut dbar: Vec<Vec<f64>> = (0..n)
            .map(|l| {
                let (out, inn) = self.dims[l];
                let mut d = matvec(&v[self.w_off[l]..], out, inn, &flow.acts[l]);
                for (di, vb) in d.iter_mut().zip(&v[self.b_off[l]..self.b_off[l] + out]) {
                    *di += vb;
                }
                d
            })
            .collect();
        for l in 1..n {
            let (out, inn) = self.dims[l];
            let masked: Vec<f64> = dbar[l - 1]
                .iter()
                .zip(&flow.zs[l - 1])
                .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
            let up = matvec(&self.weights[l].data, out, inn, &masked);
            for (di, ui) in dbar[l].iter_mut().zip(&up) {
                *di += ui;
            }
        }

        // delta_L = (softmax(z_L) - y) / batch: the label adjoint is
        // -dbar_L / batch, the logit adjoint goes through the softmax
        // Jacobian diag(p) - p p^T (symmetric), also scaled by 1/batch.
        let dy: Vec<f64> = dbar[n - 1].iter().map(|d| -d * b_inv).collect();
        let p = &flow.p;
        let pdot: f64 = p.iter().zip(&dbar[n - 1]).map(|(a, b)| a * b).sum();
        let mut zbar: Vec<f64> =
            p.iter().zip(&dbar[n - 1]).map(|(&pi, &di)| (pi * di - pi * pdot) * b_inv).collect();

        // Walk back down to the input: a_{l-1} collects the direct term
        // V_l^T delta_l and the linear chain W_l^T zbar_l; hidden
        // activations then push through their ReLU mask.
        for l in (0..n).rev() {
            let (out, inn) = self.dims[l];
            let mut abar = matvec_t(&v[self.w_off[l]..self.w_off[l] + out * inn], out, inn, &deltas[l]);
            let chain = matvec_t(&self.weights[l].data, out, inn, &zbar);
            for (ai, ci) in abar.iter_mut().zip(&chain) {
                *ai += ci;
            }
            if l == 0 {
                return (abar, dy);
            }
            zbar = abar
                .iter()
                .zip(&flow.zs[l - 1])
                .map(|(&a, &z)| if z > 0.0 { a } else { 0.0 })
                .collect();
        }
        unreachable!("loop returns at layer 0");
    }

    /// Mean parameter gradient of the candidate batch, flattened in
    /// declared order — the quantity matched against the capture.
    fn batch_gradient(&self, x: &[f64], ys: &[Vec<f64>]) -> (Vec<f64>, Vec<(Flow, Vec<Vec<f64>>)>) {
        let mut g = vec![0.0; self.n_params];
        let mut passes = Vec::with_capacity(self.batch);
        for (i, y) in ys.iter().enumerate() {
            let flow = self.flow(&x[i * self.inputs..(i + 1) * self.inputs]);
            let deltas = self.deltas(&flow, y);
            self.add_gradient(&flow, &deltas, &mut g);
            passes.push((flow, deltas));
        }
        (g, passes)
    }

    /// Objective value and its gradients with respect to pixels and label
    /// logits (`gy` is the adjoint against the soft labels; callers chain
    /// it through their own parametrization).
    fn evaluate(&self, x: &[f64], ys: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let (g, passes) = self.batch_gradient(x, ys);
        let dot: f64 = g.iter().zip(&self.target).map(|(a, b)| a * b).sum();
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = g_norm * self.target_norm;
        // An exactly-zero candidate gradient has no direction: score it as
        // orthogonal. Non-finite values must fall through and poison the
        // objective so the restart aborts.
        let cos = if denom == 0.0 { 0.0 } else { dot / denom };
        let mut value = 1.0 - cos;

        let (h, w) = self.grid;
        let mut gx = vec![0.0; x.len()];
        if self.lambda_tv > 0.0 {
            for i in 0..self.batch {
                let block = i * self.inputs;
                value += self.lambda_tv
                    * tv_value_and_subgrad(
                        &x[block..block + self.inputs],
                        h,
                        w,
                        self.lambda_tv,
                        &mut gx[block..block + self.inputs],
                    );
            }
        }
        if !value.is_finite() {
            return (value, gx, Vec::new());
        }

        // d(1 - cos)/dg, then one adjoint pass per sample with v fixed.
        let v: Vec<f64> = if denom > 0.0 {
            g.iter()
                .zip(&self.target)
                .map(|(gi, ti)| -ti / denom + gi * dot / (g_norm * g_norm * denom))
                .collect()
        } else {
            vec![0.0; self.n_params]
        };
        let mut gys = Vec::with_capacity(self.batch);
        for (i, (flow, deltas)) in passes.iter().enumerate() {
            let (dx, dy) = self.adjoint(flow, deltas, &v);
            for (out, di) in gx[i * self.inputs..(i + 1) * self.inputs].iter_mut().zip(&dx) {
                *out += di;
            }
            gys.push(dy);
        }
        (value, gx, gys)
    }
}

fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    y
}

/// Reconstructs the batch behind `update` by sign descent on the
/// gradient-matching objective, one seeded Gaussian initialization per
/// restart. `truth`, when given, must carry the exact input batch shape
/// and is used only for scoring.
pub fn invert(
    victim: &ModelParams,
    update: &CapturedUpdate,
    truth: Option<&PlainTensor>,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    cfg.validate()?;
    let problem = MlpProblem::new(victim, update, cfg.lambda_tv)?;
    let batch = problem.batch;
    let mut recon_shape = vec![batch];
    recon_shape.extend(victim.arch.input_shape());
    if let Some(t) = truth {
        if t.shape != recon_shape {
            return Err(Error::Shape(format!(
                "ground truth shaped {:?}, reconstruction will be {:?}",
                t.shape, recon_shape
            )));
        }
    }
    let fixed_labels = match cfg.label_mode {
        LabelMode::Analytic => Some(vec![analytic_label(update)?]),
        LabelMode::Joint => None,
    };

    let started = Instant::now();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let mut outcomes = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let mut rng = seed::rng_from(cfg.seed, &format!("attack.restart{restart}"));
        let mut x: Vec<f64> = (0..batch * problem.inputs).map(|_| gauss.sample(&mut rng)).collect();
        let init = x.clone();
        // Joint mode optimizes per-sample label logits, started uniform.
        let mut logits = vec![vec![0.0; problem.classes]; batch];
        let soft = |logits: &[Vec<f64>]| -> Vec<Vec<f64>> {
            match &fixed_labels {
                Some(labels) => labels.iter().map(|&l| one_hot(l, problem.classes)).collect(),
                None => logits.iter().map(|l| softmax(l)).collect(),
            }
        };

        let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
        let mut trajectory = Vec::new();
        let mut aborted = false;
        let mut steps = 0usize;
        loop {
            let ys = soft(&logits);
            let (value, gx, gys) = problem.evaluate(&x, &ys);
            if !value.is_finite() {
                aborted = true;
                break;
            }
            trajectory.push(value);
            if best.as_ref().is_none_or(|(b, _, _)| value < *b) {
                let labels = ys.iter().map(|y| argmax(y)).collect();
                best = Some((value, x.clone(), labels));
            }
            if steps == cfg.iterations {
                break;
            }
            let step = step_at(steps, cfg.iterations, cfg.step_size);
            for (xi, gi) in x.iter_mut().zip(&gx) {
                *xi -= step * gi.signum();
            }
            if fixed_labels.is_none() {
                for (l, gy) in logits.iter_mut().zip(&gys) {
                    // Chain the soft-label adjoint through softmax(logits).
                    let y = softmax(l);
                    let ydot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((li, &yi), &gyi) in l.iter_mut().zip(&y).zip(gy.iter()) {
                        *li -= step * (yi * (gyi - ydot)).signum();
                    }
                }
            }
            steps += 1;
        }

        let (objective, best_x, labels) = best.unwrap_or_else(|| {
            // Every evaluation was non-finite: report the untouched init.
            (f64::INFINITY, init, vec![0; batch])
        });
        let reconstruction = PlainTensor::from_vec(&recon_shape, best_x)?;
        let mse = match truth {
            Some(t) => Some(evaluate_reconstruction(&reconstruction, t)?.mse),
            None => None,
        };
        outcomes.push(RestartOutcome {
            restart,
            reconstruction,
            labels,
            objective,
            mse,
            iterations_run: steps,
            aborted,
            trajectory,
        });
    }

    let best_restart = (0..outcomes.len())
        .min_by(|&a, &b| outcomes[a].objective.total_cmp(&outcomes[b].objective))
        .expect("at least one restart");
    let best_mse = outcomes.iter().filter_map(|o| o.mse).min_by(f64::total_cmp);
    Ok(AttackReport {
        scenario: update.kind,
        config: cfg.clone(),
        meta: update.meta,
        restarts: outcomes,
        best_restart,
        best_mse,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}
