//! Matrix-free Arnoldi iteration and Ritz-pair distillation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BREAKDOWN_TOL: f64 = 1e-12;

/// Ritz pairs with `|λ| ≤ RITZ_REL_TOL · max|λ|` are treated as zero and dropped.
pub const RITZ_REL_TOL: f64 = 1e-8;

/// Output of [`arnoldi`].
#[derive(Debug, Clone)]
pub struct Krylov {
    /// `(m + 1) × m` upper Hessenberg matrix, or `m × m` after breakdown.
    pub hessenberg: Vec<Vec<f64>>,
    /// Orthonormal basis rows `q_0, …`; `m + 1` rows, or `m` after breakdown.
    pub basis: Vec<Vec<f64>>,
    /// Number of operator applications performed.
    pub iterations: usize,
    pub breakdown: bool,
    /// `‖A q_j − Σ_i H_ij q_i‖` per step, measured after orthogonalisation.
    pub residuals: Vec<f64>,
}

impl Krylov {
    /// Leading square block of the Hessenberg matrix.
    pub fn square(&self) -> Vec<Vec<f64>> {
        self.hessenberg[..self.iterations]
            .iter()
            .map(|row| row[..self.iterations].to_vec())
            .collect()
    }
}

/// Runs up to `n_iters` Arnoldi steps on the linear operator `op` from a
/// seed-determined random unit vector, with full re-orthogonalisation.
///
/// `n_iters` is capped at `dim`. If the residual norm drops below `1e-12`
/// (relative to `max(1, ‖A q_j‖)`) the Krylov space is invariant and the
/// iteration stops early with `breakdown = true`.
pub fn arnoldi<F>(mut op: F, dim: usize, n_iters: usize, seed: u64) -> Result<Krylov>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::arg("arnoldi needs a positive dimension"));
    }
    if n_iters == 0 {
        return Err(Error::arg("arnoldi needs at least one iteration"));
    }
    let m = n_iters.min(dim);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&q0);
    q0.iter_mut().for_each(|x| *x /= n0);

    let mut basis = vec![q0];
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut residuals = Vec::with_capacity(m);

    for j in 0..m {
        let mut w = op(&basis[j])?;
        if w.len() != dim {
            return Err(Error::shape(format!(
                "operator returned {} values for dimension {dim}",
                w.len()
            )));
        }
        let scale = norm(&w).max(1.0);
        // classical Gram-Schmidt, applied twice
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = dot(q, &w);
                h[i][j] += c;
                axpy(-c, q, &mut w);
            }
        }
        let beta = norm(&w);
        residuals.push(beta);
        if beta <= BREAKDOWN_TOL * scale {
            h.truncate(j + 1);
            h.iter_mut().for_each(|row| row.truncate(j + 1));
            return Ok(Krylov {
                hessenberg: h,
                basis,
                iterations: j + 1,
                breakdown: true,
                residuals,
            });
        }
        h[j + 1][j] = beta;
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    Ok(Krylov {
        hessenberg: h,
        basis,
        iterations: m,
        breakdown: false,
        residuals,
    })
}

/// Ritz pairs ordered by decreasing `|λ|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RitzPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// How many pairs were requested; may exceed `values.len()`.
    pub requested: usize,
}

/// Eigendecomposes the symmetrised square Hessenberg block, keeps the
/// `top_k` nonzero Ritz values by magnitude, and lifts their vectors back
/// through the basis.
pub fn distill(krylov: &Krylov, top_k: usize) -> Result<RitzPairs> {
    if top_k == 0 {
        return Err(Error::arg("top_k must be at least 1"));
    }
    let m = krylov.iterations;
    let t = DMatrix::from_fn(m, m, |i, j| {
        0.5 * (krylov.hessenberg[i][j] + krylov.hessenberg[j][i])
    });
    let eig = SymmetricEigen::new(t);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let largest = order.first().map_or(0.0, |&i| eig.eigenvalues[i].abs());

    let dim = krylov.basis[0].len();
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &i in order.iter().take(top_k) {
        let lambda = eig.eigenvalues[i];
        if lambda.abs() <= RITZ_REL_TOL * largest || lambda == 0.0 {
            break;
        }
        let mut v = vec![0.0; dim];
        for (k, q) in krylov.basis.iter().take(m).enumerate() {
            axpy(eig.eigenvectors[(k, i)], q, &mut v);
        }
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        values.push(lambda);
        vectors.push(v);
    }
    Ok(RitzPairs {
        values,
        vectors,
        requested: top_k,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
