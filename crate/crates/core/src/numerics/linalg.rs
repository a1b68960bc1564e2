//! Small dense symmetric eigensolver and PCA.
//!
//! Feature dimensions here are tiny (a penultimate layer of width ~32), so
//! a cyclic Jacobi sweep is plenty and keeps the crate free of BLAS/LAPACK
//! bindings. Everything is deterministic, including eigenvector signs.

use crate::error::{Error, Result};
use crate::numerics::matrix::DenseMatrix;

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// matrix given as a flat row-major `n x n` slice.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::contract("eigen input is not n*n"));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    for &col in &order {
        vals.push(m[col * n + col]);
        let mut vec_col: Vec<f64> = (0..n).map(|row| v[row * n + col]).collect();
        // Deterministic sign: the entry of largest magnitude is positive.
        let lead = vec_col
            .iter()
            .enumerate()
            .max_by(|(i, x), (j, y)| {
                x.abs()
                    .partial_cmp(&y.abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        if vec_col[lead] < 0.0 {
            vec_col.iter_mut().for_each(|x| *x = -*x);
        }
        vecs.push(vec_col);
    }
    Ok((vals, vecs))
}

/// Principal-component basis fit by eigendecomposition of the covariance.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `components[k]` is the k-th unit principal direction.
    pub components: Vec<Vec<f64>>,
}

pub fn pca_fit(data: &DenseMatrix, k: usize) -> Result<Pca> {
    let (n, d) = (data.rows(), data.cols());
    if n == 0 {
        return Err(Error::contract("PCA needs at least one row"));
    }
    if k == 0 || k > d {
        return Err(Error::contract(format!(
            "embed dim {k} out of range for {d} features"
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (x, m)) in centered.iter_mut().zip(data.row(i).iter().zip(&mean)) {
            *c = x - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let (_, vecs) = symmetric_eigen(&cov, d)?;
    Ok(Pca {
        mean,
        components: vecs.into_iter().take(k).collect(),
    })
}

impl Pca {
    pub fn transform(&self, data: &DenseMatrix) -> Result<DenseMatrix> {
        if data.cols() != self.mean.len() {
            return Err(Error::contract(format!(
                "PCA fit on {} features, got {}",
                self.mean.len(),
                data.cols()
            )));
        }
        let k = self.components.len();
        let mut out = DenseMatrix::zeros(data.rows(), k);
        for i in 0..data.rows() {
            let row = data.row(i);
            for (j, comp) in self.components.iter().enumerate() {
                let mut s = 0.0;
                for ((x, m), c) in row.iter().zip(&self.mean).zip(comp) {
                    s += (x - m) * c;
                }
                out.set(i, j, s);
            }
        }
        Ok(out)
    }
}
