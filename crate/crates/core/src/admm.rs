//! Sharing-form ADMM for the reweighted subproblem.
//!
//! With one block `z_i = Phi_i w_i` per group and `G` groups the subproblem
//! becomes `min sum_i pen_i(w_i) + f(sum_i z_i)`. Scaled ADMM on the average
//! `zbar` gives
//!
//! ```text
//! w_i  <- argmin pen_i(w_i) + rho/2 |Phi_i w_i - Phi_i w_i^n + avg^n - zbar^n + u^n|^2
//! zbar <- argmin f(G zbar) + G rho / 2 |zbar - u^n - avg^{n+1}|^2
//! u    <- u^n + avg^{n+1} - zbar^{n+1}
//! ```
//!
//! where `avg = (1/G) sum_i Phi_i w_i`. The group updates are independent and
//! run in parallel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{GroupLayout, GroupSource, RegressionProblem};
use crate::sgl::{gram_spectral_norm, InnerOptions, SglWeights, SquaredLoss};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Residual balancing (x2 / /2 when one residual dominates by 10x).
    pub adaptive_rho: bool,
    pub inner: InnerOptions,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iter: 10_000,
            adaptive_rho: true,
            inner: InnerOptions {
                tol: 1e-12,
                max_iter: 2000,
                max_lift: 1,
            },
        }
    }
}

/// Data term of the shared objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SharedLoss {
    /// `weight * |y - s|_2`
    Norm { weight: f64 },
    /// `scale / 2 * |y - s|^2`
    Squared { scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmSolution {
    pub w: DVector<f64>,
    pub z_bar: DVector<f64>,
    pub u: DVector<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Group-lasso step of the norm-loss `zbar` update: `c (1 - sigma/|c|)_+`
/// applied to `c = u + avg - y/G`, returning `zbar = zhat + y/G`.
pub fn z_update_analytic(c: &DVector<f64>, sigma: f64) -> DVector<f64> {
    let norm = c.norm();
    if norm <= sigma {
        DVector::zeros(c.len())
    } else {
        c * (1.0 - sigma / norm)
    }
}

/// Iterations between residual-balancing adjustments of rho.
const RHO_ADAPT_EVERY: usize = 10;

fn z_update(loss: SharedLoss, y: &DVector<f64>, a: &DVector<f64>, n_groups: f64, rho: f64) -> DVector<f64> {
    match loss {
        SharedLoss::Norm { weight } => {
            let shift = y / n_groups;
            let c = a - &shift;
            z_update_analytic(&c, weight / rho) + shift
        }
        SharedLoss::Squared { scale } => (y * scale + a * rho) / (scale * n_groups + rho),
    }
}

struct Block {
    phi: DMatrix<f64>,
    layout: GroupLayout,
    weights: SglWeights,
    gram: f64,
    cols: std::ops::Range<usize>,
}

/// Norm-loss subproblem `data |y - Phi w| + penalties` by sharing ADMM.
pub fn solve_sharing_admm(
    prob: &RegressionProblem,
    sw: &SglWeights,
    w0: Option<&DVector<f64>>,
    opts: &AdmmOptions,
) -> Result<AdmmSolution> {
    if !(sw.data > 0.0) {
        return Err(Error::InvalidArgument(
            "data-term weight must be positive".into(),
        ));
    }
    solve_shared(prob, sw, SharedLoss::Norm { weight: sw.data }, w0, opts)
}

/// Squared-loss subproblem `scale/2 |y - Phi w|^2 + penalties` by sharing ADMM.
pub fn solve_sharing_admm_squared(
    prob: &RegressionProblem,
    sw: &SglWeights,
    loss_scale: f64,
    w0: Option<&DVector<f64>>,
    opts: &AdmmOptions,
) -> Result<AdmmSolution> {
    if !(loss_scale > 0.0 && loss_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "loss scale must be positive, got {loss_scale}"
        )));
    }
    solve_shared(prob, sw, SharedLoss::Squared { scale: loss_scale }, w0, opts)
}

fn solve_shared(
    prob: &RegressionProblem,
    sw: &SglWeights,
    loss: SharedLoss,
    w0: Option<&DVector<f64>>,
    opts: &AdmmOptions,
) -> Result<AdmmSolution> {
    let layout = &prob.layout;
    if sw.element.len() != layout.n_cols() || sw.group.len() != layout.n_groups() {
        return Err(Error::Dimension("penalty weights do not match the layout".into()));
    }
    if !(opts.rho > 0.0 && opts.rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {}", opts.rho)));
    }
    let n = prob.n_rows();
    let n_groups = layout.n_groups();
    let mut w = match w0 {
        Some(v) if v.len() == prob.n_cols() => v.clone(),
        Some(v) => {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, problem has {} columns",
                v.len(),
                prob.n_cols()
            )))
        }
        None => DVector::zeros(prob.n_cols()),
    };
    if n_groups == 0 {
        return Ok(AdmmSolution {
            w,
            z_bar: DVector::zeros(n),
            u: DVector::zeros(n),
            rho: opts.rho,
            iterations: 0,
            converged: true,
            primal_residual: 0.0,
            dual_residual: 0.0,
        });
    }
    let blocks: Vec<Block> = (0..n_groups)
        .map(|g| {
            let cols = layout.range(g);
            let phi = prob.phi.columns(cols.start, cols.len()).into_owned();
            let mut sub = GroupLayout::new(layout.lag_order());
            sub.push(GroupSource::Dictionary(g), cols.len());
            let weights = SglWeights {
                element: sw.element.rows(cols.start, cols.len()).into_owned(),
                group: DVector::from_element(1, sw.group[g]),
                data: 0.0,
            };
            let gram = gram_spectral_norm(&phi, 50);
            Block {
                phi,
                layout: sub,
                weights,
                gram,
                cols,
            }
        })
        .collect();
    let gf = n_groups as f64;
    let mut parts: Vec<DVector<f64>> = blocks
        .iter()
        .map(|b| &b.phi * w.rows(b.cols.start, b.cols.len()))
        .collect();
    let mut avg = parts.iter().fold(DVector::zeros(n), |acc, p| acc + p) / gf;
    let mut rho = opts.rho;
    let mut u = DVector::<f64>::zeros(n);
    let mut z_bar = z_update(loss, &prob.y, &(&u + &avg), gf, rho);
    let mut history: Vec<f64> = Vec::new();
    let sqrt_n = (n as f64).sqrt();
    let mut converged = false;
    let mut iterations = 0;
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let common = &avg - &z_bar + &u;
        let updates: Vec<(DVector<f64>, DVector<f64>)> = blocks
            .par_iter()
            .zip(parts.par_iter())
            .map(|(b, part)| {
                let target = part - &common;
                let inst = SquaredLoss {
                    phi: &b.phi,
                    y: &target,
                    layout: &b.layout,
                    weights: &b.weights,
                    scale: rho,
                    lipschitz: Some(rho * b.gram),
                };
                let w0 = w.rows(b.cols.start, b.cols.len()).into_owned();
                let sol = inst.solve(&w0, &opts.inner);
                let new_part = &b.phi * &sol.w;
                (sol.w, new_part)
            })
            .collect();
        for (g, (wb, part)) in updates.into_iter().enumerate() {
            let cols = &blocks[g].cols;
            w.rows_mut(cols.start, cols.len()).copy_from(&wb);
            parts[g] = part;
        }
        avg = parts.iter().fold(DVector::zeros(n), |acc, p| acc + p) / gf;
        let z_old = std::mem::replace(&mut z_bar, z_update(loss, &prob.y, &(&u + &avg), gf, rho));
        u += &avg - &z_bar;

        r_norm = (&avg - &z_bar).norm();
        s_norm = rho * gf.sqrt() * (&z_bar - &z_old).norm();
        if !(r_norm.is_finite() && s_norm.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite residuals at iteration {iterations}; try a different rho"
            )));
        }
        let eps_pri = sqrt_n * opts.eps_abs + opts.eps_rel * avg.norm().max(z_bar.norm());
        let eps_dual = sqrt_n * opts.eps_abs + opts.eps_rel * rho * u.norm();
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
        history.push(r_norm + s_norm);
        if history.len() > 50 {
            let now = history[history.len() - 1];
            let before = history[history.len() - 51];
            if now > 10.0 * before && now > 10.0 * history[0] {
                return Err(Error::Divergence(format!(
                    "residuals grew from {before:.3e} to {now:.3e} over 50 iterations; rescale rho (currently {rho})"
                )));
            }
        }
        // residual balancing; growth is only judged under a fixed rho
        if opts.adaptive_rho && iterations % RHO_ADAPT_EVERY == 0 {
            if r_norm > 10.0 * s_norm {
                rho *= 2.0;
                u /= 2.0;
                history.clear();
            } else if s_norm > 10.0 * r_norm {
                rho /= 2.0;
                u *= 2.0;
                history.clear();
            }
        }
    }
    Ok(AdmmSolution {
        w,
        z_bar,
        u,
        rho,
        iterations,
        converged,
        primal_residual: r_norm,
        dual_residual: s_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_case_returns_zero() {
        let c = DVector::from_vec(vec![0.3, 0.4]);
        assert_eq!(z_update_analytic(&c, 0.5), DVector::zeros(2));
    }

    #[test]
    fn closed_form_shrink() {
        let c = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(z_update_analytic(&c, 0.5), DVector::from_vec(vec![0.5, 0.0]));
    }
}
