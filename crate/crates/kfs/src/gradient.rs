//! Closed-form gradient of the ridge objective in the feature weights.
//!
//! With r the dual residuals at beta and d_ij the weighted pairwise
//! distances, the objective gradient is
//!
//! ```text
//! grad_l = -(1 / (2 lambda n^2)) * sum_{i,j} r_i r_j h'(d_ij) |X_il - X_jl|^q
//! ```
//!
//! the double sum running over all ordered pairs including i = j (whose
//! term vanishes since |X_il - X_il| = 0). The l1 penalty adds a flat
//! gamma to every coordinate on the nonnegative orthant; at beta_l = 0
//! the formula is the right derivative and needs no special casing.
//!
//! A central-difference oracle over the objective and an empirical
//! Lipschitz probe (which drives the automatic stepsize) live here too.

use crate::error::{KfsError, Result};
use crate::kernels::{self, KernelSpec};
use crate::krr::{self, Dataset};
use rand::Rng;
use rayon::prelude::*;

/// Gradient of the objective at one weight vector, with the diagnostics
/// the acceptance checks watch.
#[derive(Debug, Clone)]
pub struct GradientReport {
    /// Gradient of the plain ridge objective.
    pub grad: Vec<f64>,
    /// grad + gamma on every coordinate.
    pub grad_regularized: Vec<f64>,
    /// (1/n^2) sum_{i,j} r_i r_j h'(d_ij); nonpositive up to roundoff
    /// because -h' is completely monotone.
    pub pairwise_nsd_value: f64,
    /// Sup norm of `grad`.
    pub sup_norm: f64,
}

/// Holding both the distance matrix and the Gram matrix costs two n^2
/// buffers; above this budget the gradient recomputes distances tile by
/// tile instead of keeping them.
pub const DIST_REUSE_BUDGET_BYTES: usize = 256 << 20;

const ROW_TILE: usize = 32;

#[inline]
fn abs_q(d: f64, q: u8) -> f64 {
    if q == 1 {
        d.abs()
    } else {
        d * d
    }
}

struct PairAccum {
    grad: Vec<f64>,
    nsd_off: f64,
}

/// Shared pair loop. For each row i it visits pairs (i, j > i), weighting
/// the coordinate distance profile by w_ij = r_i r_j h'(d_ij). Row tiles
/// run in parallel and partial sums combine in fixed tile order, so the
/// result does not depend on the thread count.
fn accumulate_pairs(
    spec: &KernelSpec,
    data: &Dataset,
    residuals: &[f64],
    beta: &[f64],
    dists: Option<&[f64]>,
) -> PairAccum {
    let n = data.n();
    let p = data.p();
    let q = spec.q();
    let x = data.x();
    let support = kernels::support_pairs(beta);
    let xcols = data.xcols();

    let n_tiles = n.div_ceil(ROW_TILE);
    let partials: Vec<PairAccum> = (0..n_tiles)
        .into_par_iter()
        .map(|tile| {
            let i0 = tile * ROW_TILE;
            let i1 = (i0 + ROW_TILE).min(n);
            let mut grad = vec![0.0; p];
            let mut nsd_off = 0.0;
            let mut row_d = vec![0.0; n];
            for i in i0..i1 {
                let tail = &mut row_d[i..];
                match dists {
                    Some(d) => tail.copy_from_slice(&d[i * n + i..(i + 1) * n]),
                    None => {
                        // same column-streaming order as distance_matrix,
                        // so both paths agree to the last bit
                        tail.fill(0.0);
                        for &(l, b) in &support {
                            let col = xcols.column(l);
                            let xi = col[i];
                            for (slot, &xj) in tail.iter_mut().zip(&col[i..]) {
                                *slot += b * abs_q(xi - xj, q);
                            }
                        }
                    }
                }
                let ri = residuals[i];
                let xi = &x[i * p..(i + 1) * p];
                for j in (i + 1)..n {
                    let w = ri * residuals[j] * spec.h_prime_at(row_d[j]);
                    nsd_off += w;
                    let xj = &x[j * p..(j + 1) * p];
                    for l in 0..p {
                        grad[l] += w * abs_q(xi[l] - xj[l], q);
                    }
                }
            }
            PairAccum { grad, nsd_off }
        })
        .collect();

    let mut grad = vec![0.0; p];
    let mut nsd_off = 0.0;
    for part in partials {
        for (g, pg) in grad.iter_mut().zip(&part.grad) {
            *g += pg;
        }
        nsd_off += part.nsd_off;
    }
    PairAccum { grad, nsd_off }
}

fn validate_inputs(data: &Dataset, residuals: &[f64], beta: &[f64], lambda: f64) -> Result<()> {
    if residuals.len() != data.n() {
        return Err(KfsError::dims(format!(
            "residuals have {} entries, expected {}",
            residuals.len(),
            data.n()
        )));
    }
    if beta.len() != data.p() {
        return Err(KfsError::dims(format!(
            "|beta| = {} but data has p = {}",
            beta.len(),
            data.p()
        )));
    }
    if beta.iter().any(|&b| b < 0.0) {
        return Err(KfsError::domain("beta must be nonnegative".to_string()));
    }
    if !(lambda > 0.0) {
        return Err(KfsError::invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Exact pairwise-sum gradient given residuals. Distances are recomputed
/// tile by tile; callers holding a distance matrix use
/// [`pairwise_gradient_from_distances`].
pub fn pairwise_gradient(
    spec: &KernelSpec,
    data: &Dataset,
    residuals: &[f64],
    beta: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    validate_inputs(data, residuals, beta, lambda)?;
    let acc = accumulate_pairs(spec, data, residuals, beta, None);
    Ok(finish_gradient(acc.grad, data.n(), lambda))
}

/// Same sum evaluated from a precomputed distance matrix.
pub fn pairwise_gradient_from_distances(
    spec: &KernelSpec,
    data: &Dataset,
    residuals: &[f64],
    beta: &[f64],
    dists: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    validate_inputs(data, residuals, beta, lambda)?;
    if dists.len() != data.n() * data.n() {
        return Err(KfsError::dims(format!(
            "distance matrix has {} entries, expected {}",
            dists.len(),
            data.n() * data.n()
        )));
    }
    let acc = accumulate_pairs(spec, data, residuals, beta, Some(dists));
    Ok(finish_gradient(acc.grad, data.n(), lambda))
}

fn finish_gradient(mut grad: Vec<f64>, n: usize, lambda: f64) -> Vec<f64> {
    // off-diagonal pairs were visited once each; the ordered double sum
    // counts them twice
    let scale = -1.0 / (lambda * (n * n) as f64);
    for g in grad.iter_mut() {
        *g *= scale;
    }
    grad
}

pub(crate) struct GradientParts {
    pub report: GradientReport,
    pub objective: f64,
}

pub(crate) fn gradient_with_fit(
    spec: &KernelSpec,
    data: &Dataset,
    beta: &[f64],
    lambda: f64,
    gamma: f64,
) -> Result<GradientParts> {
    let n = data.n();
    let reuse = 2 * n * n * std::mem::size_of::<f64>() <= DIST_REUSE_BUDGET_BYTES;
    let (dists, fit) = krr::fit_at(spec, data, beta, lambda)?;
    let acc = if reuse {
        accumulate_pairs(spec, data, &fit.residuals, beta, Some(&dists))
    } else {
        drop(dists);
        accumulate_pairs(spec, data, &fit.residuals, beta, None)
    };
    let grad = finish_gradient(acc.grad, n, lambda);
    let diag: f64 = fit.residuals.iter().map(|r| r * r).sum::<f64>() * spec.h_prime_at(0.0);
    let nsd = (2.0 * acc.nsd_off + diag) / (n * n) as f64;
    let sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let grad_regularized = grad.iter().map(|g| g + gamma).collect();
    Ok(GradientParts {
        report: GradientReport {
            grad,
            grad_regularized,
            pairwise_nsd_value: nsd,
            sup_norm: sup,
        },
        objective: fit.objective,
    })
}

/// Solves the ridge problem at beta and evaluates the closed-form
/// gradient and its diagnostics. `gamma` only shifts `grad_regularized`.
pub fn full_gradient(
    spec: &KernelSpec,
    data: &Dataset,
    beta: &[f64],
    lambda: f64,
    gamma: f64,
) -> Result<GradientReport> {
    if gamma < 0.0 {
        return Err(KfsError::invalid(format!(
            "gamma must be nonnegative, got {gamma}"
        )));
    }
    Ok(gradient_with_fit(spec, data, beta, lambda, gamma)?.report)
}

/// Central differences of the ridge objective, the independent oracle for
/// [`full_gradient`]. Every coordinate must sit at least `step` inside
/// the nonnegative orthant.
pub fn finite_diff_gradient(
    spec: &KernelSpec,
    data: &Dataset,
    beta: &[f64],
    lambda: f64,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(KfsError::invalid(format!(
            "step must be positive, got {step}"
        )));
    }
    if beta.len() != data.p() {
        return Err(KfsError::dims(format!(
            "|beta| = {} but data has p = {}",
            beta.len(),
            data.p()
        )));
    }
    if let Some(l) = beta.iter().position(|&b| b < step) {
        return Err(KfsError::domain(format!(
            "beta[{l}] = {} is closer than step = {step} to the boundary",
            beta[l]
        )));
    }
    let mut out = vec![0.0; beta.len()];
    let mut work = beta.to_vec();
    for l in 0..beta.len() {
        work[l] = beta[l] + step;
        let plus = krr::objective_value(spec, data, &work, lambda)?;
        work[l] = beta[l] - step;
        let minus = krr::objective_value(spec, data, &work, lambda)?;
        work[l] = beta[l];
        out[l] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}

/// Side length of the probe box for the Lipschitz estimate. Weighted
/// distances saturate the kernel once they pass a few units, so probing
/// uniform weights in (0, 1)^p at large p would only see vanishing
/// gradients. The box is scaled so typical weighted distances stay O(1).
pub(crate) fn probe_box_radius(data: &Dataset) -> f64 {
    let n = data.n();
    let p = data.p();
    if n < 2 {
        return 1.0;
    }
    // mean absolute coordinate difference over consecutive rows
    let sample = (n - 1).min(128);
    let mut acc = 0.0;
    for i in 0..sample {
        let a = data.row(i);
        let b = data.row(i + 1);
        for l in 0..p {
            acc += (a[l] - b[l]).abs();
        }
    }
    let mean_abs = (acc / (sample * p) as f64).max(1e-12);
    (4.0 / (p as f64 * mean_abs)).clamp(1e-6, 1.0)
}

/// Empirical Lipschitz constant of the gradient map, estimated as the
/// largest ratio ||grad(b) - grad(b')||_2 / ||b - b'||_2 over seeded
/// random pairs drawn from the active probe box. The automatic stepsize
/// is its reciprocal.
pub fn estimate_lipschitz(
    spec: &KernelSpec,
    data: &Dataset,
    lambda: f64,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(KfsError::invalid("need at least one probe pair"));
    }
    let p = data.p();
    let r = probe_box_radius(data);
    let mut rng = crate::rng::stream_rng(seed, crate::rng::STREAM_LIPSCHITZ);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..r)).collect();
        let b: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..r)).collect();
        let ga = full_gradient(spec, data, &a, lambda, 0.0)?.grad;
        let gb = full_gradient(spec, data, &b, lambda, 0.0)?.grad;
        let num: f64 = ga
            .iter()
            .zip(&gb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if den > 1e-12 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}
