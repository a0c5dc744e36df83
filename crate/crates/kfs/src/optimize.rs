//! Projection onto the nonnegative l1 ball, projected gradient descent,
//! and the multi-round variant that pins already-found coordinates.
//!
//! The projection threshold comes from the exact sort-and-scan water
//! filling; a bisection oracle for it lives in the tests. The descent
//! loop enforces per-step monotonicity of the penalized objective by
//! halving the stepsize when a step would increase it, failing after 20
//! halvings.

use crate::error::{KfsError, Result};
use crate::gradient;
use crate::kernels::KernelSpec;
use crate::krr::Dataset;
use serde::{Deserialize, Serialize};

/// Nonnegative feature weights with their l1 budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    values: Vec<f64>,
    budget: f64,
}

impl Beta {
    /// Wraps a weight vector after checking feasibility.
    pub fn new(values: Vec<f64>, budget: f64) -> Result<Self> {
        if !(budget > 0.0) {
            return Err(KfsError::invalid(format!(
                "budget must be positive, got {budget}"
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(KfsError::domain("weights must be finite and nonnegative"));
        }
        let total: f64 = values.iter().sum();
        if total > budget + 1e-12 {
            return Err(KfsError::domain(format!(
                "weights sum to {total}, over the budget {budget}"
            )));
        }
        Ok(Beta { values, budget })
    }

    /// The origin, which is where selection starts.
    pub fn zeros(p: usize, budget: f64) -> Result<Self> {
        Beta::new(vec![0.0; p], budget)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices with weight above the support threshold.
    pub fn support(&self, eps: f64) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > eps)
            .map(|(l, _)| l)
            .collect()
    }
}

/// Stepsize policy for the descent loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepsize {
    /// Reciprocal of the empirical gradient Lipschitz constant, then
    /// halved until the first step descends.
    Auto,
    Fixed(f64),
}

/// Everything the selection loop needs beyond the data and kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub lambda: f64,
    pub gamma: f64,
    /// l1 budget of the feasible set.
    pub m: f64,
    pub stepsize: Stepsize,
    pub max_iters: usize,
    /// Stop once the sup-norm iterate change drops to this.
    pub tol: f64,
    /// Weights above this count as selected.
    pub support_eps: f64,
    /// Pin value for coordinates held fixed by the hierarchical rounds.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            lambda: 0.1,
            gamma: 0.0,
            m: 10.0,
            stepsize: Stepsize::Auto,
            max_iters: 2000,
            tol: 1e-7,
            support_eps: 1e-8,
            tau: 1.0,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(KfsError::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.gamma < 0.0 {
            return Err(KfsError::invalid(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        if !(self.m > 0.0) {
            return Err(KfsError::invalid(format!(
                "budget m must be positive, got {}",
                self.m
            )));
        }
        if let Stepsize::Fixed(a) = self.stepsize {
            if !(a > 0.0) {
                return Err(KfsError::invalid(format!(
                    "stepsize must be positive, got {a}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(KfsError::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(KfsError::invalid(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.support_eps < 0.0 {
            return Err(KfsError::invalid("support_eps must be nonnegative"));
        }
        if !(self.tau > 0.0) {
            return Err(KfsError::invalid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// What a selection run returns: the final iterate, its support, and the
/// per-step histories the diagnostics read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub beta_final: Beta,
    /// Indices (0-based) with final weight above `support_eps`.
    pub support: Vec<usize>,
    /// Penalized objective at the initializer and after every accepted step.
    pub objective_history: Vec<f64>,
    /// Sup-norm change of each accepted step.
    pub iterate_sup_changes: Vec<f64>,
    /// Cumulative support after each hierarchical round; empty for a
    /// single-round run.
    pub rounds: Vec<Vec<usize>>,
    pub config_echo: SelectionConfig,
    /// Stepsize in effect when the loop stopped.
    pub resolved_stepsize: f64,
    /// Stepsize halvings spent on monotonicity backoff.
    pub halvings: usize,
}

/// Euclidean projection onto {b >= 0, sum b <= m}: clip negatives, and if
/// the positive part still overshoots, soft-threshold by the exact water
/// level found from the sorted scan.
pub fn project_l1_nonneg(v: &[f64], m: f64) -> Vec<f64> {
    let (out, _) = project_with_level(v, m);
    out
}

pub(crate) fn project_with_level(v: &[f64], m: f64) -> (Vec<f64>, f64) {
    assert!(m > 0.0, "budget must be positive");
    let positive_sum: f64 = v.iter().filter(|x| **x > 0.0).sum();
    if positive_sum <= m {
        return (v.iter().map(|&x| x.max(0.0)).collect(), 0.0);
    }
    let mut sorted: Vec<f64> = v.iter().copied().filter(|&x| x > 0.0).collect();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut level = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cum += u;
        let candidate = (cum - m) / (k + 1) as f64;
        if k + 1 == sorted.len() || candidate >= sorted[k + 1] {
            level = candidate;
            break;
        }
    }
    let out = v.iter().map(|&x| (x - level).max(0.0)).collect();
    (out, level)
}

/// Observer invoked after every accepted descent step with (iteration,
/// iterate, regularized gradient at the new iterate). Tests and the
/// no-false-positive diagnostics hook in here.
pub trait StepObserver {
    fn on_step(&mut self, iter: usize, beta: &[f64], grad_regularized: &[f64]);
}

impl<F: FnMut(usize, &[f64], &[f64])> StepObserver for F {
    fn on_step(&mut self, iter: usize, beta: &[f64], grad_regularized: &[f64]) {
        self(iter, beta, grad_regularized)
    }
}

struct NoopObserver;
impl StepObserver for NoopObserver {
    fn on_step(&mut self, _: usize, _: &[f64], _: &[f64]) {}
}

const MAX_HALVINGS: usize = 20;
const MONOTONE_SLACK: f64 = 1e-12;
/// Stepsize used when the Lipschitz probe sees a flat gradient field.
const FLAT_FIELD_STEPSIZE: f64 = 1.0;
/// Probe pairs for the automatic stepsize.
const LIPSCHITZ_PAIRS: usize = 8;

fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn resolve_stepsize(spec: &KernelSpec, data: &Dataset, config: &SelectionConfig) -> Result<f64> {
    match config.stepsize {
        Stepsize::Fixed(a) => Ok(a),
        Stepsize::Auto => {
            let l_hat = gradient::estimate_lipschitz(
                spec,
                data,
                config.lambda,
                LIPSCHITZ_PAIRS,
                config.seed,
            )?;
            if l_hat <= 0.0 {
                Ok(FLAT_FIELD_STEPSIZE)
            } else {
                Ok(1.0 / l_hat)
            }
        }
    }
}

/// Core descent loop shared by the plain and pinned entry points.
///
/// Free coordinates follow the projected gradient; pinned coordinates are
/// held where the initializer put them. Each accepted step is monotone in
/// the penalized objective; a non-monotone proposal halves the stepsize
/// and retries the same iterate.
fn pgd_core(
    spec: &KernelSpec,
    data: &Dataset,
    config: &SelectionConfig,
    beta0: &Beta,
    pinned: &[usize],
    observer: &mut dyn StepObserver,
) -> Result<SelectionResult> {
    config.validate()?;
    let p = data.p();
    if beta0.len() != p {
        return Err(KfsError::dims(format!(
            "initializer has {} coordinates but data has p = {p}",
            beta0.len()
        )));
    }
    if pinned.iter().any(|&l| l >= p) {
        return Err(KfsError::invalid("pinned index out of range"));
    }
    let mut is_pinned = vec![false; p];
    for &l in pinned {
        is_pinned[l] = true;
    }
    let all_pinned = pinned.len() == p;

    let mut beta = beta0.values().to_vec();
    let mut parts = gradient::gradient_with_fit(spec, data, &beta, config.lambda, config.gamma)?;
    let mut objective = parts.objective + config.gamma * l1_norm(&beta);
    let mut history = vec![objective];
    let mut sup_changes = Vec::new();
    let mut alpha = if all_pinned {
        0.0
    } else {
        resolve_stepsize(spec, data, config)?
    };
    if let Stepsize::Auto = config.stepsize {
        // moving any coordinate further than the ball diameter is wasted
        // work under the projection, so cap the opening step
        let g0 = parts
            .report
            .grad_regularized
            .iter()
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if g0 > 0.0 {
            alpha = alpha.min(2.0 * config.m / g0);
        }
    }
    let mut halvings = 0usize;

    if !all_pinned {
        let mut iter = 0usize;
        while iter < config.max_iters {
            let grad = &parts.report.grad_regularized;
            // gradient step on the free block, then project it back
            let mut free_step: Vec<f64> = Vec::with_capacity(p - pinned.len());
            for l in 0..p {
                if !is_pinned[l] {
                    free_step.push(beta[l] - alpha * grad[l]);
                }
            }
            let projected = project_l1_nonneg(&free_step, config.m);
            let mut candidate = beta.clone();
            let mut fi = 0;
            for l in 0..p {
                if !is_pinned[l] {
                    candidate[l] = projected[fi];
                    fi += 1;
                }
            }

            let cand_parts =
                gradient::gradient_with_fit(spec, data, &candidate, config.lambda, config.gamma)?;
            let cand_objective = cand_parts.objective + config.gamma * l1_norm(&candidate);

            if cand_objective > objective + MONOTONE_SLACK {
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(KfsError::NonMonotone {
                        halvings,
                        from: objective,
                        to: cand_objective,
                    });
                }
                alpha *= 0.5;
                continue;
            }

            let sup_change = beta
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            beta = candidate;
            parts = cand_parts;
            objective = cand_objective;
            history.push(objective);
            sup_changes.push(sup_change);
            iter += 1;
            observer.on_step(iter, &beta, &parts.report.grad_regularized);
            if sup_change <= config.tol {
                break;
            }
        }
    }

    let beta_final = Beta {
        values: beta,
        budget: config.m,
    };
    let support = beta_final.support(config.support_eps);
    Ok(SelectionResult {
        beta_final,
        support,
        objective_history: history,
        iterate_sup_changes: sup_changes,
        rounds: Vec::new(),
        config_echo: config.clone(),
        resolved_stepsize: alpha,
        halvings,
    })
}

/// Projected gradient descent over {beta >= 0, ||beta||_1 <= m} from the
/// given initializer. Returns the last iterate, its support and the
/// objective history.
pub fn pgd_select(
    spec: &KernelSpec,
    data: &Dataset,
    config: &SelectionConfig,
    beta0: &Beta,
) -> Result<SelectionResult> {
    pgd_core(spec, data, config, beta0, &[], &mut NoopObserver)
}

/// Same loop with an observer called after every accepted step.
pub fn pgd_select_traced(
    spec: &KernelSpec,
    data: &Dataset,
    config: &SelectionConfig,
    beta0: &Beta,
    observer: &mut dyn StepObserver,
) -> Result<SelectionResult> {
    pgd_core(spec, data, config, beta0, &[], observer)
}

/// Descent with the pinned coordinates held at tau while the free block
/// explores its own l1 ball of radius m. Free coordinates start at zero.
pub fn pgd_select_pinned(
    spec: &KernelSpec,
    data: &Dataset,
    config: &SelectionConfig,
    pinned: &[usize],
) -> Result<SelectionResult> {
    let mut sorted = pinned.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut init = vec![0.0; data.p()];
    for &l in &sorted {
        if l >= data.p() {
            return Err(KfsError::invalid(format!("pinned index {l} out of range")));
        }
        init[l] = config.tau;
    }
    let beta0 = Beta {
        values: init,
        budget: config.m,
    };
    pgd_core(spec, data, config, &beta0, &sorted, &mut NoopObserver)
}

/// Multi-round selection: each round pins everything found so far at tau
/// and reruns descent on the rest, growing the support monotonically.
/// Stops when a round adds nothing or after p rounds.
pub fn hier_select(
    spec: &KernelSpec,
    data: &Dataset,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    let mut pinned: Vec<usize> = Vec::new();
    let mut rounds: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<SelectionResult> = None;
    for _round in 0..data.p() {
        let res = pgd_select_pinned(spec, data, config, &pinned)?;
        let mut cumulative = res.support.clone();
        for &l in &pinned {
            if !cumulative.contains(&l) {
                cumulative.push(l);
            }
        }
        cumulative.sort_unstable();
        rounds.push(cumulative.clone());
        let grew = cumulative.len() > pinned.len();
        pinned = cumulative;
        last = Some(res);
        if !grew {
            break;
        }
    }
    let mut out = last.expect("at least one round runs");
    out.support = pinned;
    out.rounds = rounds;
    Ok(out)
}
