//! Expectation-maximisation on the marginal likelihood.
//!
//! E-step: Gaussian posterior `N(mu, Sigma)` at the current hyperparameters.
//! M-step, with `s_q = Sigma_qq + mu_q^2` and `tau_q = 1 / M_q`:
//!
//! ```text
//! beta_q  = s_q
//! gamma_g = mean_{q in g} s_q
//! lambda  = (|y - Phi mu|^2 + lambda sum_q (1 - tau_q Sigma_qq)) / N
//! ```

use nalgebra::DVector;

use crate::cccp::{
    numerical_failure, prune_or_floor, select_lambda, Diagnostics, LambdaDenominator, LambdaMode,
    SolveConfig, SolveOutput, StopReason,
};
use crate::error::{Error, Result};
use crate::objective::{Evidence, Hyperparameters, PosteriorGaussian};
use crate::regression::{GroupLayout, RegressionProblem, Weights};

/// Second moments `Sigma_qq + mu_q^2`.
fn second_moments(post: &PosteriorGaussian) -> DVector<f64> {
    DVector::from_fn(post.mu.len(), |q, _| post.sigma[(q, q)] + post.mu[q] * post.mu[q])
}

fn lambda_numerator(prob: &RegressionProblem, h: &Hyperparameters, post: &PosteriorGaussian) -> f64 {
    let layout = &prob.layout;
    let r = prob.residual(&post.mu).norm_squared();
    let mut acc = 0.0;
    for q in 0..layout.n_cols() {
        if let Some(c) = h.coord(q, layout.group_of(q)) {
            acc += 1.0 - post.sigma[(q, q)] / c.var;
        }
    }
    r + h.lambda * acc
}

fn lambda_denominator(prob: &RegressionProblem, which: LambdaDenominator) -> f64 {
    match which {
        LambdaDenominator::Coefficients => prob.n_cols() as f64,
        LambdaDenominator::Rows => prob.n_rows() as f64,
    }
}

/// One M-step from the posterior at `h`.
pub fn m_step(
    prob: &RegressionProblem,
    h: &Hyperparameters,
    post: &PosteriorGaussian,
    estimate_lambda: bool,
    denominator: LambdaDenominator,
) -> Hyperparameters {
    let layout = &prob.layout;
    let s = second_moments(post);
    let active = h.active_mask(layout);
    let mut out = h.clone();
    if h.mode.uses_beta() {
        for q in 0..layout.n_cols() {
            out.beta[q] = if active[q] { s[q] } else { 0.0 };
        }
    }
    for g in 0..layout.n_groups() {
        if h.gamma_active(g) {
            let r = layout.range(g);
            let n = r.len().max(1) as f64;
            out.gamma[g] = if r.clone().any(|q| active[q]) {
                r.map(|q| s[q]).sum::<f64>() / n
            } else {
                0.0
            };
        }
    }
    if estimate_lambda {
        out.lambda = lambda_numerator(prob, h, post) / lambda_denominator(prob, denominator);
    }
    out
}

fn residual_terms(
    layout: &GroupLayout,
    h: &Hyperparameters,
    s: &DVector<f64>,
) -> f64 {
    let active = h.active_mask(layout);
    let mut worst: f64 = 0.0;
    if h.mode.uses_beta() {
        for q in 0..layout.n_cols() {
            if active[q] {
                let b = h.beta[q];
                worst = worst.max((-s[q] / (b * b) + 1.0 / b).abs());
            }
        }
    }
    for g in 0..layout.n_groups() {
        let r = layout.range(g);
        if h.gamma_active(g) && r.clone().any(|q| active[q]) {
            let c = h.gamma[g];
            let k = r.len() as f64;
            let sum: f64 = r.map(|q| s[q]).sum();
            worst = worst.max((-sum / (c * c) + k / c).abs());
        }
    }
    worst
}

/// Largest violation of the stationary conditions whose solutions are the
/// M-step fixed points. The noise equation is included when `denominator`
/// is given.
pub fn stationarity_residual(
    prob: &RegressionProblem,
    h: &Hyperparameters,
    denominator: Option<LambdaDenominator>,
) -> Result<f64> {
    let ev = Evidence::new(prob, h)?;
    let post = ev.posterior(prob.n_cols());
    let s = second_moments(&post);
    let mut worst = residual_terms(&prob.layout, h, &s);
    if let Some(which) = denominator {
        let lam = h.lambda;
        let n = lambda_denominator(prob, which);
        worst = worst.max((-lambda_numerator(prob, h, &post) / (lam * lam) + n / lam).abs());
    }
    Ok(worst)
}

pub fn solve_em(prob: &RegressionProblem, cfg: &SolveConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    if prob.n_rows() == 0 {
        return Err(Error::InsufficientData("regression has no rows".into()));
    }
    if let LambdaMode::Grid(grid) = &cfg.lambda_mode {
        let (best, scores) = select_lambda(prob, cfg, grid, solve_em)?;
        let mut out = solve_em(
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
    let mut trace = vec![ev.l2()];
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut post = ev.posterior(prob.n_cols());

    for it in 1..=cfg.max_outer {
        iterations = it;
        let mut h_new = m_step(prob, &h, &post, estimate, cfg.em_lambda_denominator);
        if estimate {
            h_new.lambda = h_new.lambda.max(cfg.lambda_floor);
        }
        let mut mu = post.mu.clone();
        prune_or_floor(layout, &mut h_new, &mut mu, cfg, it, &mut events);
        h = h_new;
        if !h.active_mask(layout).iter().any(|&a| a) {
            trace.push(prob.y.norm_squared() / h.lambda + prob.n_rows() as f64 * h.lambda.ln());
            post = PosteriorGaussian {
                mu: DVector::zeros(prob.n_cols()),
                sigma: nalgebra::DMatrix::zeros(prob.n_cols(), prob.n_cols()),
            };
            stop_reason = StopReason::AllPruned;
            break;
        }
        ev = Evidence::new(prob, &h).map_err(|e| match e {
            Error::Numerical(m) => numerical_failure("em", it, &h, &m),
            other => other,
        })?;
        let l2 = ev.l2();
        if !l2.is_finite() {
            return Err(numerical_failure("em", it, &h, "non-finite objective"));
        }
        post = ev.posterior(prob.n_cols());
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(l2);
        if (prev - l2).abs() <= cfg.stop_tol * prev.abs().max(1e-12) {
            stop_reason = StopReason::ObjectiveConverged;
            break;
        }
    }
    if stop_reason == StopReason::MaxIterations {
        warnings.push(format!("stopped after {} iterations", cfg.max_outer));
    }
    let active = h.active_mask(layout);
    let w = DVector::from_fn(prob.n_cols(), |q, _| if active[q] { post.mu[q] } else { 0.0 });
    Ok(SolveOutput {
        w: Weights(w),
        diagnostics: Diagnostics {
            solver: "em".into(),
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
    use crate::objective::PriorMode;
    use crate::regression::GroupSource;
    use nalgebra::DMatrix;

    #[test]
    fn zero_design_decays_variances() {
        let mut layout = GroupLayout::new(2);
        layout.push(GroupSource::Node(0), 2);
        let prob = RegressionProblem::new(
            0,
            DVector::from_vec(vec![1.0, -1.0, 0.5]),
            DMatrix::zeros(3, 2),
            layout,
        )
        .unwrap();
        let mut h = Hyperparameters::initial(&prob.layout, 1.0, PriorMode::Combined);
        for _ in 0..5 {
            let post = Evidence::new(&prob, &h).unwrap().posterior(2);
            assert!(post.mu.iter().all(|m| *m == 0.0));
            let next = m_step(&prob, &h, &post, false, LambdaDenominator::Coefficients);
            let m_prev = h.beta[0] * h.gamma[0] / (h.beta[0] + h.gamma[0]);
            assert!((next.beta[0] - m_prev).abs() < 1e-15);
            assert!(next.beta[0] < h.beta[0]);
            h = next;
        }
    }
}
