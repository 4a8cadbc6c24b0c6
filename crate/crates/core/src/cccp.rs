//! Convex-concave outer loop for the joint weight/hyperparameter objective.
//!
//! Each iteration linearises the concave log-det part at the current
//! hyperparameters, solves the resulting reweighted sparse-group problem for
//! the weights, then minimises the surrogate over the hyperparameters in
//! closed form:
//!
//! ```text
//! beta_q = |w_q| / sqrt(g_beta_q)
//! gamma_g = |w_g| / sqrt(g_gamma_g)
//! lambda = |y - Phi w| / sqrt(g_lambda)
//! ```

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::admm::{solve_sharing_admm, solve_sharing_admm_squared, AdmmOptions};
use crate::error::{Error, Result};
use crate::objective::{Evidence, Hyperparameters, MaskedGroupTerm, PriorMode};
use crate::regression::{GroupLayout, RegressionProblem, Weights};
use crate::sgl::{solve_sgl, solve_norm_loss, InnerOptions, SglWeights};

/// Noise variance handling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Updated with the other hyperparameters.
    Estimate,
    /// Held at a known value.
    Fixed(f64),
    /// Chosen from candidates by hold-out validation, then held fixed.
    Grid(Vec<f64>),
}

/// Denominator of the EM noise update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaDenominator {
    /// Number of weights.
    #[default]
    Coefficients,
    /// Number of regression rows (exact EM).
    Rows,
}

/// Solver for the reweighted weight subproblem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    #[default]
    Proximal,
    Admm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub max_outer: usize,
    pub inner: InnerOptions,
    pub inner_solver: InnerSolver,
    pub admm: AdmmOptions,
    /// Disable to keep every coordinate (variances floored instead).
    pub prune: bool,
    /// Relative to the current largest variance.
    pub prune_tol: f64,
    /// Lower bound on variances when pruning is disabled.
    pub variance_floor: f64,
    pub lambda_mode: LambdaMode,
    pub lambda_floor: f64,
    /// Fraction of trailing rows held out in grid mode.
    pub holdout_fraction: f64,
    pub mode: PriorMode,
    /// Whether the node's own lags join the group prior (combined mode).
    pub penalize_self_group: bool,
    pub masked_term: MaskedGroupTerm,
    pub stop_tol: f64,
    /// Stop after the support is unchanged this many iterations in a row.
    pub support_patience: Option<usize>,
    pub em_lambda_denominator: LambdaDenominator,
    /// Log-normal spread of the initial variances (0 = all ones).
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_outer: 50,
            inner: InnerOptions::default(),
            inner_solver: InnerSolver::Proximal,
            admm: AdmmOptions::default(),
            prune: true,
            prune_tol: 1e-6,
            variance_floor: 1e-12,
            lambda_mode: LambdaMode::Estimate,
            lambda_floor: 1e-12,
            holdout_fraction: 0.25,
            mode: PriorMode::Combined,
            penalize_self_group: false,
            masked_term: MaskedGroupTerm::Omit,
            stop_tol: 1e-6,
            support_patience: Some(3),
            em_lambda_denominator: LambdaDenominator::Coefficients,
            init_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("prune_tol", self.prune_tol),
            ("variance_floor", self.variance_floor),
            ("lambda_floor", self.lambda_floor),
            ("stop_tol", self.stop_tol),
            ("inner tol", self.inner.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be at least 1".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::InvalidArgument("init_jitter must be non-negative".into()));
        }
        match &self.lambda_mode {
            LambdaMode::Estimate => {}
            LambdaMode::Fixed(l) => {
                if !(*l > 0.0 && l.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "fixed noise variance must be positive, got {l}"
                    )));
                }
            }
            LambdaMode::Grid(grid) => {
                if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::InvalidArgument(
                        "lambda grid must be non-empty and positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Group-prior mask for a layout (self group masked unless penalised).
    pub fn group_mask(&self, layout: &GroupLayout) -> Vec<bool> {
        let own = layout.self_group();
        (0..layout.n_groups())
            .map(|g| self.penalize_self_group || Some(g) != own)
            .collect()
    }

    /// Starting hyperparameters: unit (or jittered) variances, noise variance
    /// from the sample variance of `y` or the fixed value.
    pub fn initial_hyper(&self, prob: &RegressionProblem) -> Hyperparameters {
        let lambda = match &self.lambda_mode {
            LambdaMode::Fixed(l) => *l,
            _ => sample_variance(&prob.y).max(self.lambda_floor),
        };
        let mut h = Hyperparameters::initial(&prob.layout, lambda, self.mode)
            .with_mask(self.group_mask(&prob.layout));
        h.masked_term = self.masked_term;
        if self.init_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let normal = Normal::new(0.0, self.init_jitter).expect("finite spread");
            h.beta.iter_mut().for_each(|b| *b = normal.sample(&mut rng).exp());
            h.gamma.iter_mut().for_each(|c| *c = normal.sample(&mut rng).exp());
        }
        h
    }
}

pub(crate) fn sample_variance(y: &DVector<f64>) -> f64 {
    let n = y.len();
    if n < 2 {
        return y.norm_squared() / n.max(1) as f64;
    }
    let mean = y.mean();
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ObjectiveConverged,
    SupportStable,
    AllPruned,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum PruneTarget {
    Coordinate(usize),
    Group(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub target: PruneTarget,
}

/// Structured record of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub solver: String,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Objective at the start and after every iteration.
    pub objective_trace: Vec<f64>,
    pub prune_events: Vec<PruneEvent>,
    pub lambda: f64,
    /// `(lambda, hold-out mean squared error)` in grid mode.
    pub lambda_scores: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        self.stop_reason != StopReason::MaxIterations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutput {
    pub w: Weights,
    pub hyper: Hyperparameters,
    pub diagnostics: Diagnostics,
}

/// Closed-form minimiser of the linearised surrogate over the
/// hyperparameters. Entries the mode does not use are copied from `prev`.
pub fn update_hyper(
    layout: &GroupLayout,
    prev: &Hyperparameters,
    w: &DVector<f64>,
    g: &SglWeights,
    residual_norm: f64,
    estimate_lambda: bool,
) -> Hyperparameters {
    let ratio = |num: f64, root_g: f64| {
        if num == 0.0 {
            0.0
        } else {
            num / root_g.max(f64::MIN_POSITIVE)
        }
    };
    let mut h = prev.clone();
    if prev.mode.uses_beta() {
        for q in 0..layout.n_cols() {
            h.beta[q] = ratio(w[q].abs(), g.element[q]);
        }
    }
    for grp in 0..layout.n_groups() {
        if prev.gamma_active(grp) {
            let r = layout.range(grp);
            let norm = w.rows(r.start, r.len()).norm();
            h.gamma[grp] = ratio(norm, g.group[grp]);
        }
    }
    if estimate_lambda {
        h.lambda = ratio(residual_norm, g.data);
    }
    h
}

/// Sub-weights for the columns flagged in `keep` (empty groups dropped).
pub(crate) fn restrict_weights(layout: &GroupLayout, keep: &[bool], sw: &SglWeights) -> SglWeights {
    let element: Vec<f64> = (0..layout.n_cols())
        .filter(|&q| keep[q])
        .map(|q| sw.element[q])
        .collect();
    let group: Vec<f64> = (0..layout.n_groups())
        .filter(|&g| layout.range(g).any(|q| keep[q]))
        .map(|g| sw.group[g])
        .collect();
    SglWeights {
        element: DVector::from_vec(element),
        group: DVector::from_vec(group),
        data: sw.data,
    }
}

/// Applies pruning (or the variance floor) in place; zeroes pruned weights.
pub(crate) fn prune_or_floor(
    layout: &GroupLayout,
    h: &mut Hyperparameters,
    w: &mut DVector<f64>,
    cfg: &SolveConfig,
    iteration: usize,
    events: &mut Vec<PruneEvent>,
) {
    let was_active = h.active_mask(layout);
    if !cfg.prune {
        let floor = cfg.variance_floor;
        if h.mode.uses_beta() {
            h.beta.iter_mut().for_each(|b| *b = b.max(floor));
        }
        for g in 0..layout.n_groups() {
            if h.gamma_active(g) {
                h.gamma[g] = h.gamma[g].max(floor);
            }
        }
        return;
    }
    if h.mode.uses_beta() {
        let max_beta = h.beta.iter().cloned().fold(0.0, f64::max);
        let thr = cfg.prune_tol * max_beta;
        for b in h.beta.iter_mut() {
            if *b < thr || *b <= 0.0 {
                *b = 0.0;
            }
        }
    }
    let max_gamma = (0..layout.n_groups())
        .filter(|&g| h.gamma_active(g))
        .map(|g| h.gamma[g])
        .fold(0.0, f64::max);
    let thr = cfg.prune_tol * max_gamma;
    for g in 0..layout.n_groups() {
        if h.gamma_active(g) && (h.gamma[g] < thr || h.gamma[g] <= 0.0) {
            h.gamma[g] = 0.0;
        }
    }
    let now_active = h.active_mask(layout);
    for g in 0..layout.n_groups() {
        let r = layout.range(g);
        let had = r.clone().any(|q| was_active[q]);
        let has = r.clone().any(|q| now_active[q]);
        if had && !has {
            events.push(PruneEvent {
                iteration,
                target: PruneTarget::Group(g),
            });
        } else {
            for q in r {
                if was_active[q] && !now_active[q] {
                    events.push(PruneEvent {
                        iteration,
                        target: PruneTarget::Coordinate(q),
                    });
                }
            }
        }
    }
    for q in 0..layout.n_cols() {
        if !now_active[q] {
            w[q] = 0.0;
        }
    }
}

/// Runs `solve` at each grid value on the leading rows, scores the trailing
/// rows, and returns the best value with all scores.
pub(crate) fn select_lambda<F>(
    prob: &RegressionProblem,
    cfg: &SolveConfig,
    grid: &[f64],
    solve: F,
) -> Result<(f64, Vec<(f64, f64)>)>
where
    F: Fn(&RegressionProblem, &SolveConfig) -> Result<SolveOutput>,
{
    let n = prob.n_rows();
    let n_hold = ((n as f64) * cfg.holdout_fraction).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot be split for hold-out validation"
        )));
    }
    let train = prob.select_rows(0..n - n_hold);
    let hold = prob.select_rows(n - n_hold..n);
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let sub_cfg = SolveConfig {
            lambda_mode: LambdaMode::Fixed(lambda),
            ..cfg.clone()
        };
        let out = solve(&train, &sub_cfg)?;
        let mse = hold.residual(&out.w.0).norm_squared() / n_hold as f64;
        scores.push((lambda, mse));
    }
    let best = scores
        .iter()
        .filter(|s| s.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|s| s.0)
        .ok_or_else(|| Error::Numerical("no finite hold-out score".into()))?;
    Ok((best, scores))
}

pub(crate) fn numerical_failure(solver: &str, iteration: usize, h: &Hyperparameters, what: &str) -> Error {
    let active = h.beta.iter().filter(|b| **b > 0.0).count();
    Error::Numerical(format!(
        "{solver}: {what} at iteration {iteration} (lambda = {:.6e}, {} active element variances, max beta = {:.6e}, max gamma = {:.6e})",
        h.lambda,
        active,
        h.beta.iter().cloned().fold(0.0, f64::max),
        h.gamma.iter().cloned().fold(0.0, f64::max),
    ))
}

fn solve_weights(
    prob: &RegressionProblem,
    keep: &[bool],
    sw: &SglWeights,
    w: &DVector<f64>,
    h: &Hyperparameters,
    cfg: &SolveConfig,
    estimate: bool,
    warnings: &mut Vec<String>,
) -> Result<DVector<f64>> {
    let (sub, idx) = prob.restrict(keep);
    let sub_sw = restrict_weights(&prob.layout, keep, sw);
    let w0 = DVector::from_iterator(idx.len(), idx.iter().map(|&q| w[q]));
    let (w_sub, converged) = match (cfg.inner_solver, estimate) {
        (InnerSolver::Proximal, true) => {
            let s = solve_norm_loss(&sub, &sub_sw, &w0, &cfg.inner)?;
            (s.w, s.converged)
        }
        (InnerSolver::Proximal, false) => {
            let s = solve_sgl(&sub, &sub_sw, 1.0 / h.lambda, &w0, &cfg.inner)?;
            (s.w, s.converged)
        }
        (InnerSolver::Admm, true) => {
            let s = solve_sharing_admm(&sub, &sub_sw, Some(&w0), &cfg.admm)?;
            (s.w, s.converged)
        }
        (InnerSolver::Admm, false) => {
            let s = solve_sharing_admm_squared(&sub, &sub_sw, 1.0 / h.lambda, Some(&w0), &cfg.admm)?;
            (s.w, s.converged)
        }
    };
    if !converged {
        warnings.push("inner solver hit its iteration limit".into());
    }
    let mut out = DVector::zeros(prob.n_cols());
    for (a, &q) in idx.iter().enumerate() {
        out[q] = w_sub[a];
    }
    Ok(out)
}

pub fn solve_cccp(prob: &RegressionProblem, cfg: &SolveConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    if prob.n_rows() == 0 {
        return Err(Error::InsufficientData("regression has no rows".into()));
    }
    if let LambdaMode::Grid(grid) = &cfg.lambda_mode {
        let (best, scores) = select_lambda(prob, cfg, grid, solve_cccp)?;
        let mut out = solve_cccp(
            prob,
            &SolveConfig {
                lambda_mode: LambdaMode::Fixed(best),
                ..cfg.clone()
            },
        )?;
        out.diagnostics.lambda_scores = scores;
        return Ok(out);
    }
    let estimate = cfg.lambda_mode == LambdaMode::Estimate;
    let layout = &prob.layout;
    let mut h = cfg.initial_hyper(prob);
    let mut ev = Evidence::new(prob, &h)?;
    let mut w = ev.posterior(prob.n_cols()).mu;
    let mut trace = vec![ev.u(prob, &w) - ev.v()];
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    let mut support = h.active_mask(layout);
    let mut stable_for = 0;
    let mut iterations = 0;

    for it in 1..=cfg.max_outer {
        iterations = it;
        let g = ev.grad_v(layout, &h);
        let sw = SglWeights::from_gradient(&g);
        let keep = h.active_mask(layout);
        w = solve_weights(prob, &keep, &sw, &w, &h, cfg, estimate, &mut warnings)?;
        let r_norm = prob.residual(&w).norm();
        let mut h_new = update_hyper(layout, &h, &w, &sw, r_norm, estimate);
        if estimate {
            h_new.lambda = h_new.lambda.max(cfg.lambda_floor);
        }
        prune_or_floor(layout, &mut h_new, &mut w, cfg, it, &mut events);
        h = h_new;
        let new_support = h.active_mask(layout);
        if !new_support.iter().any(|&a| a) {
            trace.push(prob.y.norm_squared() / h.lambda + prob.n_rows() as f64 * h.lambda.ln());
            stop_reason = StopReason::AllPruned;
            break;
        }
        ev = Evidence::new(prob, &h).map_err(|e| match e {
            Error::Numerical(m) => numerical_failure("cccp", it, &h, &m),
            other => other,
        })?;
        let l1 = ev.u(prob, &w) - ev.v();
        if !l1.is_finite() {
            return Err(numerical_failure("cccp", it, &h, "non-finite objective"));
        }
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(l1);
        if (prev - l1).abs() <= cfg.stop_tol * prev.abs().max(1e-12) {
            stop_reason = StopReason::ObjectiveConverged;
            break;
        }
        if new_support == support {
            stable_for += 1;
        } else {
            stable_for = 0;
            support = new_support;
        }
        if let Some(patience) = cfg.support_patience {
            if stable_for >= patience {
                stop_reason = StopReason::SupportStable;
                break;
            }
        }
    }
    if stop_reason == StopReason::MaxIterations {
        warnings.push(format!("stopped after {} outer iterations", cfg.max_outer));
    }
    warnings.dedup();
    Ok(SolveOutput {
        w: Weights(w),
        diagnostics: Diagnostics {
            solver: match cfg.inner_solver {
                InnerSolver::Proximal => "cccp".into(),
                InnerSolver::Admm => "cccp-admm".into(),
            },
            iterations,
            stop_reason,
            objective_trace: trace,
            prune_events: events,
            lambda: h.lambda,
            lambda_scores: Vec::new(),
            warnings,
        },
        hyper: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::VGradient;

    fn layout_1x2() -> GroupLayout {
        GroupLayout::linear(1, 0, 0, 2)
    }

    #[test]
    fn hyper_update_closed_form() {
        let layout = layout_1x2();
        let h = Hyperparameters::initial(&layout, 1.0, PriorMode::Combined);
        let g = SglWeights::from_gradient(&VGradient {
            beta: DVector::from_vec(vec![4.0, 1.0]),
            gamma: DVector::from_vec(vec![1.0]),
            lambda: 4.0,
        });
        let w = DVector::from_vec(vec![2.0, 0.0]);
        let out = update_hyper(&layout, &h, &w, &g, 3.0, true);
        assert_eq!(out.beta[0], 1.0);
        assert_eq!(out.beta[1], 0.0);
        assert_eq!(out.gamma[0], 2.0);
        assert_eq!(out.lambda, 1.5);
    }
}
