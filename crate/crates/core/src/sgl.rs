//! Weighted sparse-group-lasso subproblems.
//!
//! Squared loss:
//!
//! ```text
//! min_w  s/2 |y - Phi w|^2 + sum_g c_g |w_g|_2 + sum_q e_q |w_q|
//! ```
//!
//! solved by monotone accelerated proximal gradient with backtracking, and the
//! norm-loss variant
//!
//! ```text
//! min_w  d |y - Phi w|_2 + sum_g c_g |w_g|_2 + sum_q e_q |w_q|
//! ```
//!
//! solved through `d |r| = min_{eta > 0} d^2 |r|^2 / (2 eta) + eta / 2`, which
//! alternates a closed-form `eta` update with squared-loss solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::VGradient;
use crate::regression::{GroupLayout, RegressionProblem};

/// Penalty weights of the reweighted subproblem (square roots of the
/// linearisation factors).
#[derive(Clone, Debug, PartialEq)]
pub struct SglWeights {
    pub element: DVector<f64>,
    pub group: DVector<f64>,
    pub data: f64,
}

impl SglWeights {
    pub fn from_gradient(g: &VGradient) -> Self {
        Self {
            element: g.beta.map(|v| v.max(0.0).sqrt()),
            group: g.gamma.map(|v| v.max(0.0).sqrt()),
            data: g.lambda.max(0.0).sqrt(),
        }
    }

    pub fn zeros(layout: &GroupLayout) -> Self {
        Self {
            element: DVector::zeros(layout.n_cols()),
            group: DVector::zeros(layout.n_groups()),
            data: 0.0,
        }
    }

    fn validate(&self, layout: &GroupLayout) -> Result<()> {
        if self.element.len() != layout.n_cols() || self.group.len() != layout.n_groups() {
            return Err(Error::Dimension(format!(
                "penalty weights sized {}/{} for {} columns in {} groups",
                self.element.len(),
                self.group.len(),
                layout.n_cols(),
                layout.n_groups()
            )));
        }
        if self
            .element
            .iter()
            .chain(self.group.iter())
            .chain(std::iter::once(&self.data))
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "penalty weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn penalty(&self, layout: &GroupLayout, w: &DVector<f64>) -> f64 {
        let elem: f64 = self
            .element
            .iter()
            .zip(w.iter())
            .map(|(e, v)| e * v.abs())
            .sum();
        let grp: f64 = (0..layout.n_groups())
            .map(|g| {
                let r = layout.range(g);
                self.group[g] * w.rows(r.start, r.len()).norm()
            })
            .sum();
        elem + grp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Cap on `eta` alternations in the norm-loss solver.
    pub max_lift: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
            max_lift: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SglSolution {
    pub w: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iterate (starting point first).
    pub trace: Vec<f64>,
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Proximal operator of `sum_q elem_t[q] |x_q| + grp_t |x|_2` for one group:
/// elementwise soft-threshold, then radial shrink. Exact thresholds map to 0.
pub fn prox_sparse_group(v: &[f64], elem_t: &[f64], grp_t: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v
        .iter()
        .zip(elem_t)
        .map(|(&x, &t)| soft_threshold(x, t))
        .collect();
    shrink_group(&mut out, grp_t);
    out
}

fn shrink_group(s: &mut [f64], grp_t: f64) {
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= grp_t {
        s.iter_mut().for_each(|x| *x = 0.0);
    } else if grp_t > 0.0 {
        let scale = 1.0 - grp_t / norm;
        s.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Largest eigenvalue of `Phi^T Phi` by power iteration.
pub(crate) fn gram_spectral_norm(phi: &DMatrix<f64>, iters: usize) -> f64 {
    let n = phi.ncols();
    if n == 0 || phi.nrows() == 0 {
        return 0.0;
    }
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let z = phi.tr_mul(&(phi * &x));
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        est = nz;
        x = z / nz;
    }
    est
}

/// Borrowed view of a squared-loss instance.
pub(crate) struct SquaredLoss<'a> {
    pub phi: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub layout: &'a GroupLayout,
    pub weights: &'a SglWeights,
    pub scale: f64,
    /// Initial step-size estimate; power iteration when `None`.
    pub lipschitz: Option<f64>,
}

impl SquaredLoss<'_> {
    fn smooth(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = self.phi * w - self.y;
        (0.5 * self.scale * r.norm_squared(), r)
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        self.smooth(w).0 + self.weights.penalty(self.layout, w)
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for g in 0..self.layout.n_groups() {
            let r = self.layout.range(g);
            let seg: Vec<f64> = r
                .clone()
                .map(|q| soft_threshold(v[q], self.weights.element[q] * step))
                .collect();
            let mut seg = seg;
            shrink_group(&mut seg, self.weights.group[g] * step);
            for (q, x) in r.zip(seg) {
                out[q] = x;
            }
        }
        out
    }

    /// Monotone FISTA with backtracking and function-value restart.
    pub fn solve(&self, w0: &DVector<f64>, opts: &InnerOptions) -> SglSolution {
        let n = w0.len();
        let mut x = w0.clone();
        let mut fx = self.objective(&x);
        let mut trace = vec![fx];
        if n == 0 {
            return SglSolution {
                w: x,
                objective: fx,
                iterations: 0,
                converged: true,
                trace,
            };
        }
        let mut lip = self
            .lipschitz
            .unwrap_or_else(|| self.scale * gram_spectral_norm(self.phi, 50))
            .max(1e-12);
        let mut yk = x.clone();
        let mut t = 1.0f64;
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..opts.max_iter {
            iterations = it + 1;
            let (fy, ry) = self.smooth(&yk);
            let grad = self.phi.tr_mul(&ry) * self.scale;
            let (z, fz_smooth) = loop {
                let z = self.prox(&(&yk - &grad / lip), 1.0 / lip);
                let d = &z - &yk;
                let (fz, _) = self.smooth(&z);
                let bound = fy + grad.dot(&d) + 0.5 * lip * d.norm_squared();
                if fz <= bound + 1e-14 * fy.abs().max(1.0) || lip > 1e300 {
                    break (z, fz);
                }
                lip *= 2.0;
            };
            let fz = fz_smooth + self.weights.penalty(self.layout, &z);
            let step = (&z - &yk).norm();
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if fz <= fx {
                let x_prev = std::mem::replace(&mut x, z);
                let decrease = fx - fz;
                fx = fz;
                trace.push(fx);
                yk = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
                t = t_next;
                if decrease <= opts.tol * fx.abs().max(1e-300)
                    && step <= opts.tol.sqrt() * (1.0 + x.norm())
                {
                    converged = true;
                    break;
                }
            } else {
                // restart momentum; next step is a plain proximal step from x
                yk = x.clone();
                t = 1.0;
                if step <= opts.tol * (1.0 + x.norm()) {
                    converged = true;
                    break;
                }
            }
        }
        SglSolution {
            w: x,
            objective: fx,
            iterations,
            converged,
            trace,
        }
    }
}

/// Squared-loss sparse group lasso, warm-started at `w0`.
pub fn solve_sgl(
    prob: &RegressionProblem,
    weights: &SglWeights,
    loss_scale: f64,
    w0: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<SglSolution> {
    weights.validate(&prob.layout)?;
    if !(loss_scale > 0.0 && loss_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "loss scale must be positive, got {loss_scale}"
        )));
    }
    if w0.len() != prob.n_cols() {
        return Err(Error::Dimension(format!(
            "warm start has {} entries, problem has {} columns",
            w0.len(),
            prob.n_cols()
        )));
    }
    let inst = SquaredLoss {
        phi: &prob.phi,
        y: &prob.y,
        layout: &prob.layout,
        weights,
        scale: loss_scale,
        lipschitz: None,
    };
    let sol = inst.solve(w0, opts);
    if !sol.objective.is_finite() {
        return Err(Error::Numerical("sparse group lasso objective is not finite".into()));
    }
    Ok(sol)
}

/// Objective of the norm-loss problem.
pub fn norm_loss_objective(prob: &RegressionProblem, weights: &SglWeights, w: &DVector<f64>) -> f64 {
    weights.data * prob.residual(w).norm() + weights.penalty(&prob.layout, w)
}

/// Norm-loss problem solved by alternating the variational `eta` update with
/// warm-started squared-loss solves. `trace` holds the lifted objective after
/// each alternation.
pub fn solve_norm_loss(
    prob: &RegressionProblem,
    weights: &SglWeights,
    w0: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<SglSolution> {
    weights.validate(&prob.layout)?;
    if !(weights.data > 0.0) {
        return Err(Error::InvalidArgument(
            "data-term weight must be positive".into(),
        ));
    }
    if w0.len() != prob.n_cols() {
        return Err(Error::Dimension(format!(
            "warm start has {} entries, problem has {} columns",
            w0.len(),
            prob.n_cols()
        )));
    }
    let eta_min = 1e-12 * (1.0 + prob.y.norm());
    let gram = gram_spectral_norm(&prob.phi, 50);
    let d = weights.data;
    let mut w = w0.clone();
    let mut f = norm_loss_objective(prob, weights, &w);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..opts.max_lift {
        iterations = it + 1;
        let eta = (d * prob.residual(&w).norm()).max(eta_min);
        let inst = SquaredLoss {
            phi: &prob.phi,
            y: &prob.y,
            layout: &prob.layout,
            weights,
            scale: d * d / eta,
            lipschitz: Some(d * d / eta * gram),
        };
        let sol = inst.solve(&w, opts);
        // lifted objective at (w_new, eta), then minimised over eta
        let lifted = sol.objective + 0.5 * eta;
        let f_new = norm_loss_objective(prob, weights, &sol.w).min(lifted);
        let moved = (&sol.w - &w).norm();
        w = sol.w;
        let decrease = f - f_new;
        f = f_new.min(f);
        trace.push(f);
        if decrease <= opts.tol * f.abs().max(1e-300) && moved <= opts.tol.sqrt() * (1.0 + w.norm()) {
            converged = true;
            break;
        }
    }
    let objective = norm_loss_objective(prob, weights, &w);
    if !objective.is_finite() {
        return Err(Error::Numerical("norm-loss objective is not finite".into()));
    }
    Ok(SglSolution {
        w,
        objective,
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::GroupSource;

    #[test]
    fn prox_closed_form() {
        assert_eq!(prox_sparse_group(&[3.0, 0.0], &[1.0, 1.0], 1.0), vec![1.0, 0.0]);
        assert_eq!(prox_sparse_group(&[3.0, 0.5], &[1.0, 1.0], 2.0), vec![0.0, 0.0]);
        // exact element threshold resolves to zero
        assert_eq!(prox_sparse_group(&[1.0, -2.0], &[1.0, 0.0], 0.0), vec![0.0, -2.0]);
    }

    fn single_group(phi: DMatrix<f64>, y: DVector<f64>) -> RegressionProblem {
        let mut layout = GroupLayout::new(phi.ncols());
        layout.push(GroupSource::Node(0), phi.ncols());
        RegressionProblem::new(0, y, phi, layout).unwrap()
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        let phi = DMatrix::<f64>::identity(3, 3);
        let y = DVector::from_vec(vec![2.0, -0.5, 0.9]);
        let prob = single_group(phi, y);
        let mut w = SglWeights::zeros(&prob.layout);
        w.element.fill(1.0);
        let sol = solve_sgl(&prob, &w, 1.0, &DVector::zeros(3), &InnerOptions::default()).unwrap();
        let expect = [1.0, 0.0, 0.0];
        for (a, b) in sol.w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_data_weight_rejected() {
        let prob = single_group(DMatrix::identity(2, 2), DVector::zeros(2));
        let w = SglWeights::zeros(&prob.layout);
        assert!(solve_norm_loss(&prob, &w, &DVector::zeros(2), &InnerOptions::default()).is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let phi = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        assert!((gram_spectral_norm(&phi, 200) - 9.0).abs() < 1e-8);
    }
}
