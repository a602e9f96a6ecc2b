//! Independent reference implementations shared by the integration tests
//! and the acceptance harness. Nothing here calls into the code under test
//! except to build inputs.
#![allow(dead_code)]

use influxcl::diffcore::{Activation, Batch, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖a − b‖∞ / ‖b‖∞`, the reference being `b`.
pub fn rel_err_inf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-12);
    diff / scale
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Central differences of `f` at `x` with step `h`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues and unit eigenvectors (one `Vec` per eigenvalue),
/// sorted by descending eigenvalue.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let total: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// A random model, parameter vector and batch.
pub fn random_triple(seed: u64) -> (ModelSpec, ParamVector, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(2..6);
    let depth = rng.random_range(1..3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..6)).collect();
    let classes = rng.random_range(2..5);
    let act = if seed.is_multiple_of(2) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let spec = ModelSpec::new(input, hidden, classes, act).unwrap();
    let values: Vec<f64> = (0..spec.num_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let params = ParamVector::new(values, spec.layout()).unwrap();
    let n = rng.random_range(3..9);
    let features: Vec<f64> = (0..n * input)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let batch = Batch::new((0..n as u64).collect(), features, input, labels).unwrap();
    (spec, params, batch)
}

/// Activations feeding the output layer for `x`, with a trailing 1 for the bias.
pub fn output_features(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut offset = 0;
    for &width in &spec.hidden_widths {
        let fan_in = h.len();
        let w = &params.values()[offset..offset + width * fan_in];
        let b = &params.values()[offset + width * fan_in..offset + width * fan_in + width];
        h = (0..width)
            .map(|o| {
                let pre = dot(&w[o * fan_in..(o + 1) * fan_in], &h) + b[o];
                match spec.activation {
                    Activation::Tanh => pre.tanh(),
                    Activation::Relu => pre.max(0.0),
                }
            })
            .collect();
        offset += width * fan_in + width;
    }
    h.push(1.0);
    h
}

fn output_probs(spec: &ModelSpec, params: &ParamVector, z: &[f64]) -> Vec<f64> {
    let c = spec.num_classes;
    let hdim = z.len() - 1;
    let start = spec.num_params() - (c * hdim + c);
    let w = &params.values()[start..start + c * hdim];
    let b = &params.values()[start + c * hdim..];
    let logits: Vec<f64> = (0..c)
        .map(|k| dot(&w[k * hdim..(k + 1) * hdim], &z[..hdim]) + b[k])
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Index of output weight `(class, j)` (`j == hdim` is the bias) within the
/// output-layer coordinates: weights row-major, then biases.
fn out_index(class: usize, j: usize, hdim: usize, classes: usize) -> usize {
    if j == hdim {
        classes * hdim + class
    } else {
        class * hdim + j
    }
}

/// Loss gradient with respect to the output layer only: `(p − e_y) ⊗ z`.
pub fn output_layer_grad(spec: &ModelSpec, params: &ParamVector, x: &[f64], y: usize) -> Vec<f64> {
    let z = output_features(spec, params, x);
    let p = output_probs(spec, params, &z);
    let (c, hdim) = (spec.num_classes, z.len() - 1);
    let mut g = vec![0.0; c * hdim + c];
    for k in 0..c {
        let r = p[k] - if k == y { 1.0 } else { 0.0 };
        for (j, zj) in z.iter().enumerate() {
            g[out_index(k, j, hdim, c)] = r * zj;
        }
    }
    g
}

/// Dense mean-loss Hessian over the output layer with the features held
/// fixed: `mean_i (diag p_i − p_i p_iᵀ) ⊗ z_i z_iᵀ` (a linear-softmax Hessian).
pub fn output_layer_hessian(
    spec: &ModelSpec,
    params: &ParamVector,
    xs: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let c = spec.num_classes;
    let hdim = *spec.hidden_widths.last().unwrap();
    let d = c * hdim + c;
    let mut h = vec![vec![0.0; d]; d];
    for x in xs {
        let z = output_features(spec, params, x);
        let p = output_probs(spec, params, &z);
        for k in 0..c {
            for l in 0..c {
                let s = if k == l { p[k] } else { 0.0 } - p[k] * p[l];
                for (i, zi) in z.iter().enumerate() {
                    for (j, zj) in z.iter().enumerate() {
                        h[out_index(k, i, hdim, c)][out_index(l, j, hdim, c)] +=
                            s * zi * zj / xs.len() as f64;
                    }
                }
            }
        }
    }
    h
}
