//! Weighted kernel ridge regression in dual form.
//!
//! At a given weight vector the Gram matrix is assembled and the dual
//! system (K + n*lambda*I) alpha = y is solved by Cholesky, with a small
//! diagonal jitter ladder for numerically semidefinite Gram matrices.

use crate::error::{KfsError, Result};
use crate::kernels::{self, ColMajor, KernelSpec};

/// Design matrix plus centered response.
///
/// The response is always centered on ingestion; the removed mean is kept
/// for prediction-time re-addition and for manifests.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>,
    xcols: ColMajor,
    n: usize,
    p: usize,
    y: Vec<f64>,
    y_mean: f64,
    centered: bool,
}

impl Dataset {
    /// Builds a dataset from a row-major n x p design and n responses,
    /// rejecting non-finite entries and centering y.
    pub fn new(x: Vec<f64>, n: usize, p: usize, mut y: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(KfsError::invalid(format!(
                "need n >= 1 and p >= 1, got n = {n}, p = {p}"
            )));
        }
        if x.len() != n * p {
            return Err(KfsError::dims(format!(
                "design has {} entries, expected n * p = {}",
                x.len(),
                n * p
            )));
        }
        if y.len() != n {
            return Err(KfsError::dims(format!(
                "response has {} entries, expected {n}",
                y.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(KfsError::invalid(format!(
                "non-finite design entry at row {}, column {}",
                pos / p + 1,
                pos % p + 1
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(KfsError::invalid(format!(
                "non-finite response at row {}",
                pos + 1
            )));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        for v in &mut y {
            *v -= y_mean;
        }
        let xcols = ColMajor::from_row_major(&x, n, p);
        Ok(Dataset {
            x,
            xcols,
            n,
            p,
            y,
            y_mean,
            centered: true,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Centered responses.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Mean removed from the raw response.
    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    /// Row-major design.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub(crate) fn xcols(&self) -> &ColMajor {
        &self.xcols
    }

    /// Gram matrix of this design under the given kernel and weights.
    pub fn gram(&self, spec: &KernelSpec, beta: &[f64]) -> Result<Vec<f64>> {
        kernels::gram_matrix(spec, &self.xcols, beta)
    }

    /// Largest absolute design entry; feeds the gradient sup-norm bound.
    pub fn max_abs_x(&self) -> f64 {
        self.x.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Mean squared (centered) response.
    pub fn mean_sq_y(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum::<f64>() / self.n as f64
    }
}

/// Output of one dual ridge solve.
#[derive(Debug, Clone)]
pub struct KrrFit {
    pub alpha: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// alpha' K alpha, the squared RKHS norm of the fitted function.
    pub rkhs_norm_sq: f64,
    /// 0.5 * mean(residual^2) + (lambda / 2) * rkhs_norm_sq.
    pub objective: f64,
}

const JITTER_BASE: f64 = 1e-12;
const JITTER_RETRIES: usize = 4;

/// Solves (K + n*lambda*I) alpha = y and reports fit, residuals and the
/// objective value. K must be symmetric positive semidefinite; a jitter
/// ladder starting at 1e-12 * h(0) and stepping x10 per retry covers
/// numerically semidefinite cases before giving up.
pub fn solve_krr(k: &[f64], n: usize, y: &[f64], lambda: f64) -> Result<KrrFit> {
    if !(lambda > 0.0) {
        return Err(KfsError::invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if k.len() != n * n {
        return Err(KfsError::dims(format!(
            "Gram has {} entries, expected {}",
            k.len(),
            n * n
        )));
    }
    if y.len() != n {
        return Err(KfsError::dims(format!(
            "response has {} entries, expected {n}",
            y.len()
        )));
    }
    let ridge = n as f64 * lambda;
    let diag_scale = k[0].max(f64::MIN_POSITIVE); // diagonal entries all equal h(0)

    let mut attempts = 0usize;
    let mut last_jitter = 0.0;
    let mut chol: Option<Vec<f64>> = None;
    while attempts <= JITTER_RETRIES {
        let jitter = if attempts == 0 {
            0.0
        } else {
            JITTER_BASE * diag_scale * 10f64.powi(attempts as i32 - 1)
        };
        last_jitter = jitter;
        let mut work = k.to_vec();
        for i in 0..n {
            work[i * n + i] += ridge + jitter;
        }
        if cholesky_in_place(&mut work, n).is_ok() {
            chol = Some(work);
            break;
        }
        attempts += 1;
    }
    let chol = chol.ok_or_else(|| {
        let dmin = (0..n).map(|i| k[i * n + i]).fold(f64::INFINITY, f64::min);
        let dmax = (0..n).map(|i| k[i * n + i]).fold(f64::NEG_INFINITY, f64::max);
        KfsError::Solver {
            stage: "krr factorization",
            attempts,
            last_jitter,
            detail: format!(
                "Cholesky failed at ridge {ridge:.3e} with Gram diagonal in [{dmin:.3e}, {dmax:.3e}]"
            ),
        }
    })?;

    let mut alpha = y.to_vec();
    solve_with_cholesky(&chol, n, &mut alpha);

    let fitted = sym_matvec(k, n, &alpha);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
    let rkhs_norm_sq = dot(&alpha, &fitted).max(0.0);
    let msr = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let objective = 0.5 * msr + 0.5 * lambda * rkhs_norm_sq;

    Ok(KrrFit {
        alpha,
        fitted,
        residuals,
        rkhs_norm_sq,
        objective,
    })
}

/// Distance matrix and ridge fit at one weight vector. The distance
/// matrix is the expensive shared piece, so callers that also need the
/// gradient reuse it.
pub(crate) fn fit_at(
    spec: &KernelSpec,
    data: &Dataset,
    beta: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, KrrFit)> {
    let d = kernels::distance_matrix(spec.q(), data.xcols(), beta, kernels::DEFAULT_TILE)?;
    let k = kernels::gram_from_distances(spec, &d);
    let fit = solve_krr(&k, data.n(), data.y(), lambda)?;
    Ok((d, fit))
}

/// The ridge objective 0.5 * mean(r^2) + (lambda / 2) * ||f||^2 at beta.
/// Adding gamma * ||beta||_1 on top gives the penalized selection objective.
pub fn objective_value(
    spec: &KernelSpec,
    data: &Dataset,
    beta: &[f64],
    lambda: f64,
) -> Result<f64> {
    if beta.len() != data.p() {
        return Err(KfsError::dims(format!(
            "objective_value: |beta| = {} but data has p = {}",
            beta.len(),
            data.p()
        )));
    }
    let (_, fit) = fit_at(spec, data, beta, lambda)?;
    Ok(fit.objective)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four lanes so the reduction vectorizes; the fixed lane structure
    // keeps results identical run to run
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

pub(crate) fn sym_matvec(k: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = dot(&k[i * n..(i + 1) * n], v);
    }
    out
}

/// Lower Cholesky in place on a row-major buffer; only the lower triangle
/// of the result is meaningful. Err carries the failing pivot index.
fn cholesky_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), usize> {
    for j in 0..n {
        let d = {
            let row_j = &a[j * n..j * n + j];
            a[j * n + j] - dot(row_j, row_j)
        };
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        let inv = 1.0 / d;
        for i in (j + 1)..n {
            let (head, tail) = a.split_at_mut(i * n);
            let row_j = &head[j * n..j * n + j];
            let row_i = &tail[..j];
            tail[j] = (tail[j] - dot(row_i, row_j)) * inv;
        }
    }
    Ok(())
}

/// Solves L L' x = b in place given the Cholesky factor.
fn solve_with_cholesky(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s = dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
