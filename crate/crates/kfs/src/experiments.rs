//! Batch harness: ROC sweeps over a penalty grid, the hierarchical
//! variant, and the gradient-concentration trend against a large-sample
//! reference.
//!
//! Every trial draws a fresh dataset from a seed derived from the base
//! seed and the (gamma, trial) indices, so curves replay bit for bit.
//! Kernels under comparison see the same datasets, which pairs the
//! Laplace/Gaussian curves trial by trial.

use crate::error::{KfsError, Result};
use crate::gradient;
use crate::kernels::KernelSpec;
use crate::optimize::{self, Beta, SelectionConfig, Stepsize};
use crate::rng::{derive_seed, stream_rng, STREAM_TREND_BETA};
use crate::signals::{self, ModelSpec};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One point of an ROC sweep: recovery frequency per signal coordinate
/// and the false positive rate at one penalty value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub gamma: f64,
    /// signal index (0-based) -> fraction of trials that selected it.
    pub tpr_per_signal: BTreeMap<usize, f64>,
    /// Mean fraction of noise coordinates selected.
    pub fpr: f64,
    pub trials: usize,
    /// Trials whose optimizer run failed; excluded from the frequencies.
    pub failures: usize,
}

/// A labelled kernel's sweep over the whole gamma grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub kernel: String,
    pub q: u8,
    pub points: Vec<RocPoint>,
}

/// One sample size of the concentration trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub n: usize,
    /// Median over seed replicates of the worst sup-norm gradient
    /// deviation from the reference across the shared evaluation points.
    pub sup_dev: f64,
    pub seeds: usize,
}

/// Optimizer settings shared by every trial of a sweep.
///
/// The defaults target the desk-scale protocols (n = p = 200). At that
/// scale the finite-sample push on independent coordinates leaves dust
/// weights of order 1e-3..1e-2 at their penalty equilibria, well below
/// real signal weights, so the sweep counts a coordinate as selected
/// only above `support_eps` = 0.025.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOpts {
    pub m: f64,
    pub stepsize: Stepsize,
    pub max_iters: usize,
    pub tol: f64,
    pub support_eps: f64,
    pub tau: f64,
}

impl Default for SweepOpts {
    fn default() -> Self {
        SweepOpts {
            m: 1.0,
            stepsize: Stepsize::Auto,
            max_iters: 300,
            tol: 1e-6,
            support_eps: 0.025,
            tau: 1.0,
        }
    }
}

impl SweepOpts {
    fn config(&self, lambda: f64, gamma: f64, seed: u64) -> SelectionConfig {
        SelectionConfig {
            lambda,
            gamma,
            m: self.m,
            stepsize: self.stepsize,
            max_iters: self.max_iters,
            tol: self.tol,
            support_eps: self.support_eps,
            tau: self.tau,
            seed,
        }
    }
}

struct TrialOutcome {
    selected: Option<Vec<usize>>,
}

fn aggregate(
    gamma: f64,
    trials: usize,
    outcomes: &[TrialOutcome],
    signal: &[usize],
    p: usize,
) -> RocPoint {
    let noise_count = p - signal.len();
    let mut tpr: BTreeMap<usize, f64> = signal.iter().map(|&s| (s, 0.0)).collect();
    let mut fpr_sum = 0.0;
    let mut ok = 0usize;
    for out in outcomes {
        let Some(support) = &out.selected else {
            continue;
        };
        ok += 1;
        for &s in signal {
            if support.contains(&s) {
                *tpr.get_mut(&s).unwrap() += 1.0;
            }
        }
        if noise_count > 0 {
            let false_pos = support.iter().filter(|l| !signal.contains(l)).count();
            fpr_sum += false_pos as f64 / noise_count as f64;
        }
    }
    let denom = ok.max(1) as f64;
    for v in tpr.values_mut() {
        *v /= denom;
    }
    RocPoint {
        gamma,
        tpr_per_signal: tpr,
        fpr: fpr_sum / denom,
        trials,
        failures: trials - ok,
    }
}

/// Sweeps the gamma grid for each kernel on fresh datasets drawn from the
/// model; every (gamma, trial) pair gets its own dataset, shared across
/// kernels. Failed trials are counted and skipped, never fatal.
pub fn run_roc(
    model: &ModelSpec,
    kernels: &[(String, KernelSpec)],
    gamma_grid: &[f64],
    n: usize,
    lambda: f64,
    trials: usize,
    seed: u64,
    opts: &SweepOpts,
) -> Result<Vec<RocCurve>> {
    if gamma_grid.is_empty() {
        return Err(KfsError::invalid("gamma grid must be nonempty"));
    }
    if trials == 0 {
        return Err(KfsError::invalid("need at least one trial"));
    }
    if kernels.is_empty() {
        return Err(KfsError::invalid("need at least one kernel"));
    }
    let signal = model.signal_indices();
    let mut curves: Vec<RocCurve> = kernels
        .iter()
        .map(|(name, spec)| RocCurve {
            kernel: name.clone(),
            q: spec.q(),
            points: Vec::new(),
        })
        .collect();

    for (gi, &gamma) in gamma_grid.iter().enumerate() {
        let trial_results: Vec<Vec<TrialOutcome>> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let data_seed = derive_seed(seed, gi as u64, trial as u64);
                let data = match signals::generate(model, n, data_seed) {
                    Ok(d) => d,
                    Err(_) => {
                        return kernels
                            .iter()
                            .map(|_| TrialOutcome { selected: None })
                            .collect()
                    }
                };
                kernels
                    .iter()
                    .map(|(_, spec)| {
                        let config = opts.config(lambda, gamma, data_seed);
                        let beta0 = match Beta::zeros(model.p, config.m) {
                            Ok(b) => b,
                            Err(_) => return TrialOutcome { selected: None },
                        };
                        match optimize::pgd_select(spec, &data, &config, &beta0) {
                            Ok(res) => TrialOutcome {
                                selected: Some(res.support),
                            },
                            Err(_) => TrialOutcome { selected: None },
                        }
                    })
                    .collect()
            })
            .collect();

        for (ki, curve) in curves.iter_mut().enumerate() {
            let outcomes: Vec<TrialOutcome> = trial_results
                .iter()
                .map(|per_kernel| TrialOutcome {
                    selected: per_kernel[ki].selected.clone(),
                })
                .collect();
            curve
                .points
                .push(aggregate(gamma, trials, &outcomes, &signal, model.p));
        }
    }
    Ok(curves)
}

/// Per-trial detail of a hierarchical sweep: the cumulative support after
/// each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierTrialLog {
    pub gamma: f64,
    pub trial: usize,
    pub rounds: Vec<Vec<usize>>,
}

/// Gamma sweep of the multi-round selector on the hierarchical model with
/// the Laplace kernel. Returns the ROC points plus per-trial round logs.
pub fn run_hier_experiment(
    n: usize,
    p: usize,
    sigma2: f64,
    lambda: f64,
    gamma_grid: &[f64],
    trials: usize,
    seed: u64,
    opts: &SweepOpts,
) -> Result<(Vec<RocPoint>, Vec<HierTrialLog>)> {
    if gamma_grid.is_empty() {
        return Err(KfsError::invalid("gamma grid must be nonempty"));
    }
    if trials == 0 {
        return Err(KfsError::invalid("need at least one trial"));
    }
    let model = ModelSpec::hierarchical(p, sigma2)?;
    let spec = KernelSpec::laplace();
    let signal = model.signal_indices();
    let mut points = Vec::with_capacity(gamma_grid.len());
    let mut logs = Vec::new();

    for (gi, &gamma) in gamma_grid.iter().enumerate() {
        let per_trial: Vec<(TrialOutcome, Option<HierTrialLog>)> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let data_seed = derive_seed(seed, gi as u64, trial as u64);
                let data = match signals::generate(&model, n, data_seed) {
                    Ok(d) => d,
                    Err(_) => return (TrialOutcome { selected: None }, None),
                };
                let config = opts.config(lambda, gamma, data_seed);
                match optimize::hier_select(&spec, &data, &config) {
                    Ok(res) => {
                        let log = HierTrialLog {
                            gamma,
                            trial,
                            rounds: res.rounds.clone(),
                        };
                        (
                            TrialOutcome {
                                selected: Some(res.support),
                            },
                            Some(log),
                        )
                    }
                    Err(_) => (TrialOutcome { selected: None }, None),
                }
            })
            .collect();

        let outcomes: Vec<TrialOutcome> = per_trial
            .iter()
            .map(|(o, _)| TrialOutcome {
                selected: o.selected.clone(),
            })
            .collect();
        points.push(aggregate(gamma, trials, &outcomes, &signal, p));
        logs.extend(per_trial.into_iter().filter_map(|(_, log)| log));
    }
    Ok((points, logs))
}

/// Worst sup-norm deviation over the shared evaluation points between a
/// size-n gradient and the reference gradient, medianed over replicates.
///
/// The reference dataset is the replicate-0 draw at n_ref, so putting
/// n_ref itself in the list with one replicate reports exactly zero.
pub fn run_concentration_trend(
    model: &ModelSpec,
    kernel: &KernelSpec,
    lambda: f64,
    n_list: &[usize],
    seeds: usize,
    n_ref: usize,
    seed: u64,
) -> Result<Vec<TrendPoint>> {
    if n_list.is_empty() {
        return Err(KfsError::invalid("n list must be nonempty"));
    }
    if seeds == 0 {
        return Err(KfsError::invalid("need at least one replicate"));
    }
    let max_n = *n_list.iter().max().unwrap();
    if n_ref < 4 * max_n {
        return Err(KfsError::invalid(format!(
            "reference size {n_ref} must be at least 4x the largest n ({max_n})"
        )));
    }

    // shared evaluation points
    let n_eval = 5;
    let mut rng = stream_rng(seed, STREAM_TREND_BETA);
    let betas: Vec<Vec<f64>> = (0..n_eval)
        .map(|_| (0..model.p).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();

    let ref_data = signals::generate(model, n_ref, trend_seed(seed, n_ref, 0))?;
    let ref_grads: Vec<Vec<f64>> = betas
        .iter()
        .map(|b| Ok(gradient::full_gradient(kernel, &ref_data, b, lambda, 0.0)?.grad))
        .collect::<Result<_>>()?;
    drop(ref_data);

    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut devs: Vec<f64> = (0..seeds)
            .into_par_iter()
            .map(|rep| -> Result<f64> {
                let data = signals::generate(model, n, trend_seed(seed, n, rep as u64))?;
                let mut worst = 0.0f64;
                for (b, ref_grad) in betas.iter().zip(&ref_grads) {
                    let grad = gradient::full_gradient(kernel, &data, b, lambda, 0.0)?.grad;
                    let dev = grad
                        .iter()
                        .zip(ref_grad)
                        .map(|(a, r)| (a - r).abs())
                        .fold(0.0f64, f64::max);
                    worst = worst.max(dev);
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?;
        devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sup_dev = median_sorted(&devs);
        out.push(TrendPoint { n, sup_dev, seeds });
    }
    Ok(out)
}

fn trend_seed(seed: u64, n: usize, rep: u64) -> u64 {
    derive_seed(seed, n as u64, rep)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Frozen CSV layout: kernel,q,gamma,fpr,tpr_1,...,tpr_k,trials.
pub fn roc_to_csv(curves: &[RocCurve]) -> String {
    let n_signals = curves
        .first()
        .and_then(|c| c.points.first())
        .map(|pt| pt.tpr_per_signal.len())
        .unwrap_or(0);
    let mut out = String::from("kernel,q,gamma,fpr");
    for k in 1..=n_signals {
        out.push_str(&format!(",tpr_{k}"));
    }
    out.push_str(",trials\n");
    for curve in curves {
        for pt in &curve.points {
            out.push_str(&format!(
                "{},{},{},{}",
                curve.kernel, curve.q, pt.gamma, pt.fpr
            ));
            for (_, v) in pt.tpr_per_signal.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", pt.trials));
        }
    }
    out
}

/// CSV for the trend run: n,sup_dev,seeds.
pub fn trend_to_csv(points: &[TrendPoint]) -> String {
    let mut out = String::from("n,sup_dev,seeds\n");
    for pt in points {
        out.push_str(&format!("{},{},{}\n", pt.n, pt.sup_dev, pt.seeds));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_opts() -> SweepOpts {
        SweepOpts {
            max_iters: 30,
            ..Default::default()
        }
    }

    #[test]
    fn roc_rerun_is_bit_identical() {
        let model = ModelSpec::main_effect(6, 1.0).unwrap();
        let kernels = vec![
            ("laplace".to_string(), KernelSpec::laplace()),
            ("gaussian".to_string(), KernelSpec::gaussian()),
        ];
        let grid = [0.0, 0.05];
        let a = run_roc(&model, &kernels, &grid, 30, 0.05, 2, 9, &tiny_opts()).unwrap();
        let b = run_roc(&model, &kernels, &grid, 30, 0.05, 2, 9, &tiny_opts()).unwrap();
        assert_eq!(a, b);
        assert_eq!(roc_to_csv(&a), roc_to_csv(&b));
    }

    #[test]
    fn failed_trials_are_counted_not_fatal() {
        // n = 0 makes every dataset draw fail; the sweep still returns
        // points with the failures recorded and zeroed frequencies
        let model = ModelSpec::main_effect(4, 1.0).unwrap();
        let kernels = vec![("laplace".to_string(), KernelSpec::laplace())];
        let curves = run_roc(&model, &kernels, &[0.1], 0, 0.1, 3, 1, &tiny_opts()).unwrap();
        let pt = &curves[0].points[0];
        assert_eq!(pt.failures, 3);
        assert_eq!(pt.trials, 3);
        assert_eq!(pt.fpr, 0.0);
        assert!(pt.tpr_per_signal.values().all(|&v| v == 0.0));
    }

    #[test]
    fn heavy_penalty_selects_nothing() {
        let model = ModelSpec::main_effect(5, 1.0).unwrap();
        let kernels = vec![("laplace".to_string(), KernelSpec::laplace())];
        let curves = run_roc(&model, &kernels, &[1e9], 25, 0.05, 3, 11, &tiny_opts()).unwrap();
        let pt = &curves[0].points[0];
        assert_eq!(pt.fpr, 0.0);
        assert!(pt.tpr_per_signal.values().all(|&v| v == 0.0));
        assert_eq!(pt.failures, 0);
    }

    #[test]
    fn csv_layout_is_frozen() {
        let model = ModelSpec::main_effect(4, 1.0).unwrap();
        let kernels = vec![("laplace".to_string(), KernelSpec::laplace())];
        let curves = run_roc(&model, &kernels, &[0.1], 20, 0.1, 1, 3, &tiny_opts()).unwrap();
        let csv = roc_to_csv(&curves);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "kernel,q,gamma,fpr,tpr_1,tpr_2,trials"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("laplace,1,0.1,"), "row {row}");
        assert_eq!(row.split(',').count(), 7);
    }

    #[test]
    fn hier_sweep_runs_and_replays() {
        let (pts_a, logs_a) =
            run_hier_experiment(40, 5, 0.5, 0.05, &[0.0, 0.1], 2, 5, &tiny_opts()).unwrap();
        let (pts_b, logs_b) =
            run_hier_experiment(40, 5, 0.5, 0.05, &[0.0, 0.1], 2, 5, &tiny_opts()).unwrap();
        assert_eq!(pts_a, pts_b);
        assert_eq!(logs_a, logs_b);
        assert_eq!(pts_a.len(), 2);
        for log in &logs_a {
            for w in log.rounds.windows(2) {
                for l in &w[0] {
                    assert!(w[1].contains(l));
                }
            }
        }
    }

    #[test]
    fn hier_noiseless_heavy_penalty_is_all_zero() {
        let (pts, _) = run_hier_experiment(30, 4, 0.0, 0.05, &[1e9], 2, 6, &tiny_opts()).unwrap();
        assert_eq!(pts[0].fpr, 0.0);
        assert!(pts[0].tpr_per_signal.values().all(|&v| v == 0.0));
    }

    #[test]
    fn trend_reference_replicate_reports_zero() {
        let model = ModelSpec::main_effect(4, 1.0).unwrap();
        let points =
            run_concentration_trend(&model, &KernelSpec::laplace(), 0.1, &[200], 1, 200 * 4, 13)
                .unwrap();
        assert_eq!(points.len(), 1);
        assert!(points[0].sup_dev > 0.0); // 200 != n_ref: independent draw

        let at_ref =
            run_concentration_trend(&model, &KernelSpec::laplace(), 0.1, &[800], 1, 800, 13);
        // n_ref must be 4x the largest n, so this is rejected
        assert!(at_ref.is_err());
    }

    #[test]
    fn trend_reference_seed_reproduces_exactly_zero_deviation() {
        // a replicate drawn at (n_ref, rep 0) shares the reference
        // dataset seed, so its gradients coincide with the reference
        let model = ModelSpec::main_effect(3, 0.5).unwrap();
        let kernel = KernelSpec::laplace();
        let seed = 21;
        let n_ref = 240;
        let data_a = signals::generate(&model, n_ref, trend_seed(seed, n_ref, 0)).unwrap();
        let data_b = signals::generate(&model, n_ref, trend_seed(seed, n_ref, 0)).unwrap();
        let beta = vec![0.4, 0.2, 0.7];
        let ga = gradient::full_gradient(&kernel, &data_a, &beta, 0.2, 0.0)
            .unwrap()
            .grad;
        let gb = gradient::full_gradient(&kernel, &data_b, &beta, 0.2, 0.0)
            .unwrap()
            .grad;
        assert_eq!(ga, gb);

        let points =
            run_concentration_trend(&model, &KernelSpec::laplace(), 0.2, &[60, 240], 1, 960, 21)
                .unwrap();
        assert!(points[0].sup_dev > 0.0);
        assert!(points[1].sup_dev > 0.0);
    }

    #[test]
    fn trend_csv_layout() {
        let pts = vec![TrendPoint {
            n: 100,
            sup_dev: 0.5,
            seeds: 3,
        }];
        assert_eq!(trend_to_csv(&pts), "n,sup_dev,seeds\n100,0.5,3\n");
    }

    #[test]
    fn fpr_declines_along_gamma_up_to_noise() {
        let model = ModelSpec::main_effect(6, 1.0).unwrap();
        let kernels = vec![("laplace".to_string(), KernelSpec::laplace())];
        let curves = run_roc(
            &model,
            &kernels,
            &[0.0, 0.05, 1e4],
            40,
            0.05,
            4,
            17,
            &tiny_opts(),
        )
        .unwrap();
        let pts = &curves[0].points;
        let slack = 2.0 / (pts[0].trials as f64).sqrt();
        for w in pts.windows(2) {
            assert!(
                w[1].fpr <= w[0].fpr + slack,
                "fpr rose: {} -> {}",
                w[0].fpr,
                w[1].fpr
            );
        }
    }
}
