//! Synthetic models, Monte-Carlo effect-size estimators, and a numeric
//! self-check of the Fourier identity behind the absolute-distance
//! kernel.
//!
//! The two canonical models are
//!
//! ```text
//! main effect:   Y = X1 + (X2^2 - 1) + N(0, sigma^2)
//! hierarchical:  Y = X1 + X1 X2 + X1 X2 X3 + N(0, sigma^2)
//! ```
//!
//! with X drawn iid standard normal. Both feed the experiment harness.

use crate::error::{KfsError, Result};
use crate::kernels::KernelSpec;
use crate::krr::Dataset;
use crate::rng::{stream_rng, STREAM_DATASET, STREAM_PAIRS};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Univariate pieces available to the additive model builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Linear,
    CenteredQuadratic,
    Sine,
}

impl Component {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Component::Linear => x,
            Component::CenteredQuadratic => x * x - 1.0,
            Component::Sine => x.sin(),
        }
    }
}

/// Which synthetic response to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Y = X1 + (X2^2 - 1) + noise.
    MainEffect,
    /// Y = X1 + X1 X2 + X1 X2 X3 + noise.
    Hierarchical,
    /// Y = sum_k f_k(X_k) + noise with the listed components.
    CustomAdditive(Vec<Component>),
}

/// A synthetic model: response kind, ambient dimension, noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub p: usize,
    pub sigma2: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, p: usize, sigma2: f64) -> Result<Self> {
        let spec = ModelSpec { kind, p, sigma2 };
        if spec.p < spec.min_p() {
            return Err(KfsError::invalid(format!(
                "model needs p >= {}, got {}",
                spec.min_p(),
                spec.p
            )));
        }
        if !(spec.sigma2 >= 0.0) {
            return Err(KfsError::invalid(format!(
                "noise variance must be nonnegative, got {}",
                spec.sigma2
            )));
        }
        Ok(spec)
    }

    pub fn main_effect(p: usize, sigma2: f64) -> Result<Self> {
        ModelSpec::new(ModelKind::MainEffect, p, sigma2)
    }

    pub fn hierarchical(p: usize, sigma2: f64) -> Result<Self> {
        ModelSpec::new(ModelKind::Hierarchical, p, sigma2)
    }

    fn min_p(&self) -> usize {
        match &self.kind {
            ModelKind::MainEffect => 2,
            ModelKind::Hierarchical => 3,
            ModelKind::CustomAdditive(c) => c.len().max(1),
        }
    }

    /// Indices that carry signal, in level order.
    pub fn signal_indices(&self) -> Vec<usize> {
        match &self.kind {
            ModelKind::MainEffect => vec![0, 1],
            ModelKind::Hierarchical => vec![0, 1, 2],
            ModelKind::CustomAdditive(c) => (0..c.len()).collect(),
        }
    }

    /// Noiseless response at one row.
    pub fn signal(&self, row: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::MainEffect => row[0] + (row[1] * row[1] - 1.0),
            ModelKind::Hierarchical => row[0] + row[0] * row[1] + row[0] * row[1] * row[2],
            ModelKind::CustomAdditive(c) => c.iter().enumerate().map(|(k, f)| f.eval(row[k])).sum(),
        }
    }
}

/// Draws n observations of the model with X ~ N(0, I_p). The response
/// comes back centered inside the [`Dataset`]. Fixed seeds replay
/// identical bytes.
pub fn generate(model: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(KfsError::invalid("need n >= 1"));
    }
    let mut rng = stream_rng(seed, STREAM_DATASET);
    let p = model.p;
    let mut x = vec![0.0; n * p];
    for v in x.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let sigma = model.sigma2.sqrt();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let noise: f64 = StandardNormal.sample(&mut rng);
        y[i] = model.signal(&x[i * p..(i + 1) * p]) + sigma * noise;
    }
    Dataset::new(x, n, p, y)
}

/// Distance weight used inside an effect-size expectation.
#[derive(Debug, Clone)]
pub enum EffectKernel<'a> {
    /// |u - u'| on a single coordinate.
    AbsDistance,
    /// h(||u - u'||_1) under the given mixture.
    Mixture(&'a KernelSpec),
}

/// One Monte-Carlo estimate of E[g(U) g(U') kappa(U_T, U_T')].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeEstimate {
    pub raw: f64,
    pub abs: f64,
    pub mc_stderr: f64,
    pub samples: usize,
}

/// Estimates E[g(X_T) g(X_T') kappa(X_T, X_T')] from `pairs` independent
/// draws of (X, X') produced by `sampler`. `t` selects the coordinates
/// that both g and kappa see.
pub fn effect_size_mc<S>(
    kernel: EffectKernel<'_>,
    g: impl Fn(&[f64]) -> f64,
    mut sampler: S,
    t: &[usize],
    pairs: usize,
    seed: u64,
) -> Result<EffectSizeEstimate>
where
    S: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    if pairs < 2 {
        return Err(KfsError::invalid("need at least two Monte-Carlo pairs"));
    }
    if t.is_empty() {
        return Err(KfsError::invalid("index set must be nonempty"));
    }
    if matches!(kernel, EffectKernel::AbsDistance) && t.len() != 1 {
        return Err(KfsError::invalid(
            "absolute-distance weighting applies to a single coordinate",
        ));
    }
    let mut rng = stream_rng(seed, STREAM_PAIRS);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..pairs {
        let a = sampler(&mut rng);
        let b = sampler(&mut rng);
        for &idx in t {
            if idx >= a.len() || idx >= b.len() {
                return Err(KfsError::invalid(format!(
                    "index {idx} out of range for sampled dimension {}",
                    a.len()
                )));
            }
        }
        let at: Vec<f64> = t.iter().map(|&i| a[i]).collect();
        let bt: Vec<f64> = t.iter().map(|&i| b[i]).collect();
        let weight = match &kernel {
            EffectKernel::AbsDistance => (at[0] - bt[0]).abs(),
            EffectKernel::Mixture(spec) => {
                let l1: f64 = at.iter().zip(&bt).map(|(u, v)| (u - v).abs()).sum();
                spec.h(l1)?
            }
        };
        let prod = g(&at) * g(&bt) * weight;
        sum += prod;
        sum_sq += prod * prod;
    }
    let m = pairs as f64;
    let raw = sum / m;
    let var = ((sum_sq / m) - raw * raw).max(0.0);
    let mc_stderr = (var / m).sqrt();
    Ok(EffectSizeEstimate {
        raw,
        abs: raw.abs(),
        mc_stderr,
        samples: pairs,
    })
}

/// Product of min(|part|, 1) over a nonempty chain of estimates.
/// The infimum over chains is the caller's loop.
pub fn compose_effect_size(parts: &[EffectSizeEstimate]) -> Result<f64> {
    if parts.is_empty() {
        return Err(KfsError::invalid("effect-size chain must be nonempty"));
    }
    Ok(parts.iter().map(|e| e.abs.min(1.0)).product())
}

/// All nested chains T_1 = {l} to T_last = s, each step adding one index.
/// Factorial growth caps this at |s| <= 6; larger sets need a
/// caller-supplied chain.
pub fn enumerate_chains(l: usize, s: &[usize]) -> Result<Vec<Vec<Vec<usize>>>> {
    if !s.contains(&l) {
        return Err(KfsError::invalid(format!(
            "chain anchor {l} must belong to the signal set"
        )));
    }
    if s.len() > 6 {
        return Err(KfsError::invalid(
            "chain enumeration is capped at six indices; supply a chain explicitly",
        ));
    }
    let mut sorted_s = s.to_vec();
    sorted_s.sort_unstable();
    sorted_s.dedup();
    if sorted_s.len() != s.len() {
        return Err(KfsError::invalid("signal set contains duplicate indices"));
    }
    let rest: Vec<usize> = s.iter().copied().filter(|&i| i != l).collect();
    let mut orders = vec![];
    permute(&rest, &mut vec![], &mut orders);
    let mut chains = Vec::with_capacity(orders.len());
    for order in orders {
        let mut chain = Vec::with_capacity(s.len());
        let mut current = vec![l];
        chain.push(current.clone());
        for idx in order {
            current.push(idx);
            let mut sorted = current.clone();
            sorted.sort_unstable();
            chain.push(sorted);
        }
        chains.push(chain);
    }
    Ok(chains)
}

fn permute(rest: &[usize], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == rest.len() {
        out.push(prefix.clone());
        return;
    }
    for &r in rest {
        if !prefix.contains(&r) {
            prefix.push(r);
            permute(rest, prefix, out);
            prefix.pop();
        }
    }
}

/// Small-frequency cutoff below which the spectral integrand switches to
/// its series expansion.
const FOURIER_EPS: f64 = 1e-3;
/// Default frequency cutoff for [`fourier_identity_check_default`].
pub const FOURIER_DEFAULT_CUTOFF: f64 = 200.0;
/// Default Simpson interval count for [`fourier_identity_check_default`].
pub const FOURIER_DEFAULT_QUAD: usize = 4000;

/// Numeric check of the identity
///
/// ```text
/// sum_ij p_i p_j |x_i - x_j| = -(2/pi) * int_0^inf |p_hat(w)|^2 / w^2 dw
/// ```
///
/// for signed masses summing to zero, with p_hat(w) = sum_j p_j e^{i w x_j}.
/// Returns (lhs, rhs); the rhs integrates by composite Simpson on
/// [eps, cutoff] plus a series term on [0, eps], where the integrand is
/// finite because p_hat(0) = 0.
/// [`fourier_identity_check`] at the default quadrature settings. The
/// defaults resolve the identity to roughly 1e-2; tighter comparisons
/// pass a larger cutoff and interval count explicitly.
pub fn fourier_identity_check_default(points: &[f64], masses: &[f64]) -> Result<(f64, f64)> {
    fourier_identity_check(points, masses, FOURIER_DEFAULT_CUTOFF, FOURIER_DEFAULT_QUAD)
}

pub fn fourier_identity_check(
    points: &[f64],
    masses: &[f64],
    omega_cutoff: f64,
    n_quad: usize,
) -> Result<(f64, f64)> {
    if points.len() != masses.len() {
        return Err(KfsError::dims(format!(
            "{} points vs {} masses",
            points.len(),
            masses.len()
        )));
    }
    if points.len() < 2 {
        return Err(KfsError::invalid("need at least two points"));
    }
    let total: f64 = masses.iter().sum();
    if total.abs() > 1e-12 {
        return Err(KfsError::domain(format!(
            "masses must sum to zero, got {total:.3e}"
        )));
    }
    if !(omega_cutoff > FOURIER_EPS) {
        return Err(KfsError::invalid("cutoff must exceed the series window"));
    }
    if n_quad < 2 {
        return Err(KfsError::invalid("need at least two quadrature intervals"));
    }

    let mut lhs = 0.0;
    for (i, &pi) in masses.iter().enumerate() {
        for (j, &pj) in masses.iter().enumerate() {
            lhs += pi * pj * (points[i] - points[j]).abs();
        }
    }

    // |p_hat(w)|^2 / w^2
    let integrand = |w: f64| -> f64 {
        let mut c = 0.0;
        let mut s = 0.0;
        for (&x, &p) in points.iter().zip(masses) {
            c += p * (w * x).cos();
            s += p * (w * x).sin();
        }
        (c * c + s * s) / (w * w)
    };

    // series on [0, eps]: |p_hat|^2 / w^2 = m1^2 + (m2^2/4 - m1 m3 / 3) w^2 + O(w^4)
    let m1: f64 = points.iter().zip(masses).map(|(&x, &p)| p * x).sum();
    let m2: f64 = points.iter().zip(masses).map(|(&x, &p)| p * x * x).sum();
    let m3: f64 = points
        .iter()
        .zip(masses)
        .map(|(&x, &p)| p * x * x * x)
        .sum();
    let eps = FOURIER_EPS;
    let head = m1 * m1 * eps + (m2 * m2 / 4.0 - m1 * m3 / 3.0) * eps.powi(3) / 3.0;

    // composite Simpson on [eps, cutoff]
    let intervals = if n_quad % 2 == 0 { n_quad } else { n_quad + 1 };
    let h = (omega_cutoff - eps) / intervals as f64;
    let mut simpson = integrand(eps) + integrand(omega_cutoff);
    for k in 1..intervals {
        let w = eps + k as f64 * h;
        simpson += integrand(w) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    simpson *= h / 3.0;

    let rhs = -(2.0 / std::f64::consts::PI) * (head + simpson);
    Ok((lhs, rhs))
}
