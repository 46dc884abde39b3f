//! Plain `f64` layer primitives with hand-written backward passes.
//!
//! Convolution is expressed as im2col followed by a matrix product; the
//! gather map is built once per shape and shared with the fixed-point
//! inference engine so both paths use byte-identical layouts. All functions
//! operate on one sample; batching lives one level up.

use crate::error::{Error, Result};
use crate::tensor::PlainTensor;
use super::CONV_KERNEL;

/// Gather map for a 3x3 kernel at padding 1, stride 1 on a `(c_in, h, w)`
/// input: entry `[row * (h*w) + col]` is the flat input index feeding
/// column matrix position `(row, col)`, or `None` at padding. Rows are
/// `ci*9 + ky*3 + kx`; columns are output positions `y*w + x`.
pub fn im2col_map(c_in: usize, h: usize, w: usize) -> Vec<Option<usize>> {
    let k = CONV_KERNEL;
    let mut map = Vec::with_capacity(c_in * k * k * h * w);
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                for y in 0..h {
                    for x in 0..w {
                        let iy = y + ky;
                        let ix = x + kx;
                        // Padding of 1: source coordinate is (iy-1, ix-1).
                        if iy >= 1 && iy <= h && ix >= 1 && ix <= w {
                            map.push(Some(ci * h * w + (iy - 1) * w + (ix - 1)));
                        } else {
                            map.push(None);
                        }
                    }
                }
            }
        }
    }
    map
}

/// Materialize the column matrix `(c_in*9) x (h*w)` for one sample.
pub fn gather_columns(x: &[f64], map: &[Option<usize>]) -> Vec<f64> {
    map.iter().map(|m| m.map_or(0.0, |i| x[i])).collect()
}

/// 3x3 convolution, padding 1: `out[co] = W[co] . col + b[co]`, output
/// `(c_out, h, w)` flattened.
pub fn conv_forward(
    x: &[f64],
    weight: &PlainTensor,
    bias: &[f64],
    map: &[Option<usize>],
    hw: usize,
) -> Vec<f64> {
    let c_out = weight.shape[0];
    let rows = weight.shape[1];
    let col = gather_columns(x, map);
    let mut out = vec![0.0; c_out * hw];
    for co in 0..c_out {
        let wrow = &weight.data[co * rows..(co + 1) * rows];
        let orow = &mut out[co * hw..(co + 1) * hw];
        orow.fill(bias[co]);
        for (r, &wv) in wrow.iter().enumerate() {
            if wv != 0.0 {
                let crow = &col[r * hw..(r + 1) * hw];
                for (o, &c) in orow.iter_mut().zip(crow) {
                    *o += wv * c;
                }
            }
        }
    }
    out
}

/// Gradients of the convolution: returns `(dx, dweight, dbias)`.
pub fn conv_backward(
    dout: &[f64],
    x: &[f64],
    weight: &PlainTensor,
    map: &[Option<usize>],
    hw: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c_out = weight.shape[0];
    let rows = weight.shape[1];
    let col = gather_columns(x, map);
    let mut dw = vec![0.0; c_out * rows];
    let mut db = vec![0.0; c_out];
    let mut dcol = vec![0.0; rows * hw];
    for co in 0..c_out {
        let drow = &dout[co * hw..(co + 1) * hw];
        db[co] = drow.iter().sum();
        for r in 0..rows {
            let crow = &col[r * hw..(r + 1) * hw];
            dw[co * rows + r] = drow.iter().zip(crow).map(|(d, c)| d * c).sum();
            let wv = weight.data[co * rows + r];
            if wv != 0.0 {
                let dcrow = &mut dcol[r * hw..(r + 1) * hw];
                for (dc, &d) in dcrow.iter_mut().zip(drow) {
                    *dc += wv * d;
                }
            }
        }
    }
    let mut dx = vec![0.0; x.len()];
    for (pos, m) in map.iter().enumerate() {
        if let Some(i) = m {
            dx[*i] += dcol[pos];
        }
    }
    (dx, dw, db)
}

/// 2x2 average pooling, stride 2, over `(c, h, w)`; `h` and `w` even.
pub fn avgpool_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xo;
                out[ci * oh * ow + y * ow + xo] =
                    0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
    out
}

pub fn avgpool_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let g = 0.25 * dout[ci * oh * ow + y * ow + xo];
                let base = ci * h * w + 2 * y * w + 2 * xo;
                dx[base] += g;
                dx[base + 1] += g;
                dx[base + w] += g;
                dx[base + w + 1] += g;
            }
        }
    }
    dx
}

/// `y = W x + b` for one sample.
pub fn linear_forward(x: &[f64], weight: &PlainTensor, bias: &[f64]) -> Vec<f64> {
    let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
    (0..out_dim)
        .map(|o| {
            let row = &weight.data[o * in_dim..(o + 1) * in_dim];
            bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

/// Gradients of the linear layer: `(dx, dweight, dbias)`.
pub fn linear_backward(
    dout: &[f64],
    x: &[f64],
    weight: &PlainTensor,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (out_dim, in_dim) = (weight.shape[0], weight.shape[1]);
    let mut dw = vec![0.0; out_dim * in_dim];
    let mut dx = vec![0.0; in_dim];
    for o in 0..out_dim {
        let d = dout[o];
        let wrow = &weight.data[o * in_dim..(o + 1) * in_dim];
        let dwrow = &mut dw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            dwrow[i] = d * x[i];
            dx[i] += d * wrow[i];
        }
    }
    (dx, dw, dout.to_vec())
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Subgradient 0 at exactly 0, matching the forward's strict positivity.
pub fn relu_backward(dout: &[f64], x: &[f64]) -> Vec<f64> {
    dout.iter().zip(x).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Cross-entropy of softmax for one sample: `(loss, dlogits)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let p = softmax(logits);
    let loss = -p[label].max(1e-300).ln();
    let mut d = p;
    d[label] -= 1.0;
    Ok((loss, d))
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error, with a floor that keeps near-zero
/// gradients from dividing by noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    const H: f64 = 1e-4;
    const TOL: f64 = 1e-3;

    fn randu(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn im2col_map_layout() {
        // 1x2x2 input: center tap (ky=1,kx=1) is the identity gather.
        let map = im2col_map(1, 2, 2);
        assert_eq!(map.len(), 9 * 4);
        let center = 4 * (1 * 3 + 1);
        assert_eq!(&map[center..center + 4], &[Some(0), Some(1), Some(2), Some(3)]);
        // Top-left tap (ky=0,kx=0) shifts down-right; only output (1,1)
        // sees input (0,0).
        assert_eq!(&map[0..4], &[None, None, None, Some(0)]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = seed::rng_from(1, "layers.conv");
        let (c_in, c_out, h, w) = (2, 3, 4, 4);
        let hw = h * w;
        let map = im2col_map(c_in, h, w);
        let x = randu(&mut rng, c_in * hw);
        let weight =
            PlainTensor::from_vec(&[c_out, c_in * 9], randu(&mut rng, c_out * c_in * 9)).unwrap();
        let bias = randu(&mut rng, c_out);
        // Scalar objective: weighted sum of outputs with fixed coefficients.
        let coef = randu(&mut rng, c_out * hw);
        let obj = |xv: &[f64], wt: &PlainTensor, bv: &[f64]| {
            conv_forward(xv, wt, bv, &map, hw).iter().zip(&coef).map(|(o, c)| o * c).sum::<f64>()
        };
        let (dx, dw, db) = conv_backward(&coef, &x, &weight, &map, hw);
        let ndx = numeric_gradient(|xv| obj(xv, &weight, &bias), &x, H);
        assert!(max_relative_error(&dx, &ndx) < TOL);
        let ndw = numeric_gradient(
            |wv| {
                let wt = PlainTensor::from_vec(&[c_out, c_in * 9], wv.to_vec()).unwrap();
                obj(&x, &wt, &bias)
            },
            &weight.data,
            H,
        );
        assert!(max_relative_error(&dw, &ndw) < TOL);
        let ndb = numeric_gradient(|bv| obj(&x, &weight, bv), &bias, H);
        assert!(max_relative_error(&db, &ndb) < TOL);
    }

    #[test]
    fn avgpool_gradients_match_finite_differences() {
        let mut rng = seed::rng_from(2, "layers.pool");
        let (c, h, w) = (3, 4, 6);
        let x = randu(&mut rng, c * h * w);
        let coef = randu(&mut rng, c * (h / 2) * (w / 2));
        let obj = |xv: &[f64]| {
            avgpool_forward(xv, c, h, w).iter().zip(&coef).map(|(o, k)| o * k).sum::<f64>()
        };
        let dx = avgpool_backward(&coef, c, h, w);
        let ndx = numeric_gradient(obj, &x, H);
        assert!(max_relative_error(&dx, &ndx) < TOL);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = seed::rng_from(3, "layers.linear");
        let (din, dout_dim) = (5, 4);
        let x = randu(&mut rng, din);
        let weight = PlainTensor::from_vec(&[dout_dim, din], randu(&mut rng, dout_dim * din)).unwrap();
        let bias = randu(&mut rng, dout_dim);
        let coef = randu(&mut rng, dout_dim);
        let obj = |xv: &[f64], wt: &PlainTensor, bv: &[f64]| {
            linear_forward(xv, wt, bv).iter().zip(&coef).map(|(o, c)| o * c).sum::<f64>()
        };
        let (dx, dw, db) = linear_backward(&coef, &x, &weight);
        let ndx = numeric_gradient(|xv| obj(xv, &weight, &bias), &x, H);
        assert!(max_relative_error(&dx, &ndx) < TOL);
        let ndw = numeric_gradient(
            |wv| {
                let wt = PlainTensor::from_vec(&[dout_dim, din], wv.to_vec()).unwrap();
                obj(&x, &wt, &bias)
            },
            &weight.data,
            H,
        );
        assert!(max_relative_error(&dw, &ndw) < TOL);
        let ndb = numeric_gradient(|bv| obj(&x, &weight, bv), &bias, H);
        assert!(max_relative_error(&db, &ndb) < TOL);
    }

    #[test]
    fn relu_gradient_matches_finite_differences_off_kink() {
        let mut rng = seed::rng_from(4, "layers.relu");
        // Keep probes away from the kink at 0 so central differences apply.
        let x: Vec<f64> = (0..32)
            .map(|_| {
                let v: f64 = rng.gen_range(0.01..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let coef = randu(&mut rng, x.len());
        let obj =
            |xv: &[f64]| relu_forward(xv).iter().zip(&coef).map(|(o, c)| o * c).sum::<f64>();
        let dx = relu_backward(&coef, &x);
        let ndx = numeric_gradient(obj, &x, H);
        assert!(max_relative_error(&dx, &ndx) < TOL);
        assert_eq!(relu_backward(&[5.0], &[0.0]), vec![0.0]);
    }

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let mut rng = seed::rng_from(5, "layers.smce");
        let logits = randu(&mut rng, 6);
        let (_, d) = softmax_ce(&logits, 2).unwrap();
        let nd = numeric_gradient(|lv| softmax_ce(lv, 2).unwrap().0, &logits, H);
        assert!(max_relative_error(&d, &nd) < TOL);
        assert!(softmax_ce(&logits, 6).is_err());
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
        // Shift invariance and overflow stability.
        let q = softmax(&[1001.0, 1002.0, 1003.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let (loss, _) = softmax_ce(&[50.0, 0.0, 0.0], 0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn conv_of_identity_kernel_is_identity() {
        // Single channel, weight 1 on the center tap only.
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let weight = PlainTensor::from_vec(&[1, 9], w).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let map = im2col_map(1, 4, 4);
        let out = conv_forward(&x, &weight, &[0.0], &map, 16);
        assert_eq!(out, x);
    }
}
