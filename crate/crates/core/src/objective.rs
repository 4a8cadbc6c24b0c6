//! Type-II objective for the combined element/group Gaussian prior.
//!
//! Each coordinate `q` in group `g` gets an effective prior variance `M_q`
//! and a log-normaliser term `l_q`:
//!
//! | mode / group          | `M_q`               | `l_q`            |
//! |-----------------------|---------------------|------------------|
//! | combined, penalised   | `b g / (b + g)`     | `ln(b + g)`      |
//! | combined, masked      | `b`                 | `0` or `ln b`    |
//! | element only          | `b`                 | `0`              |
//! | group only            | `g`                 | `0`              |
//!
//! With `C = lambda I + Phi diag(M) Phi^T`:
//!
//! ```text
//! L1(w, h) = |y - Phi w|^2 / lambda + sum_q w_q^2 / M_q + sum_q l_q + ln|C|
//! L2(h)    = y^T C^-1 y + sum_q l_q + ln|C|
//! v(h)     = -(sum_q l_q + ln|C|)
//! ```
//!
//! Coordinates with `M_q = 0` are pruned: they are dropped from every matrix
//! and contribute nothing.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{GroupLayout, RegressionProblem};

/// Which sparsity prior is active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Element and group priors multiplied together.
    #[default]
    Combined,
    /// Per-coefficient variances only (classic SBL).
    ElementOnly,
    /// One variance per group (group SBL).
    GroupOnly,
}

impl PriorMode {
    pub fn uses_beta(self) -> bool {
        !matches!(self, PriorMode::GroupOnly)
    }

    pub fn uses_gamma(self) -> bool {
        !matches!(self, PriorMode::ElementOnly)
    }
}

/// Log-normaliser contribution of a group excluded from the group prior in
/// combined mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedGroupTerm {
    /// No contribution: the element prior alone, as in classic SBL.
    #[default]
    Omit,
    /// `ln(beta_q)` per coordinate.
    LogBeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Element variances, one per column.
    pub beta: DVector<f64>,
    /// Group variances, one per group.
    pub gamma: DVector<f64>,
    /// Noise variance.
    pub lambda: f64,
    pub mode: PriorMode,
    /// `false` excludes the group from the group prior (combined mode only).
    pub group_penalized: Vec<bool>,
    pub masked_term: MaskedGroupTerm,
}

/// Per-coordinate prior quantities and their partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct CoordPrior {
    pub var: f64,
    pub log_term: f64,
    pub dvar_dbeta: f64,
    pub dvar_dgamma: f64,
    pub dlog_dbeta: f64,
    pub dlog_dgamma: f64,
}

impl Hyperparameters {
    /// Unit variances everywhere and the given noise variance.
    pub fn initial(layout: &GroupLayout, lambda: f64, mode: PriorMode) -> Self {
        Self {
            beta: DVector::from_element(layout.n_cols(), 1.0),
            gamma: DVector::from_element(layout.n_groups(), 1.0),
            lambda,
            mode,
            group_penalized: vec![true; layout.n_groups()],
            masked_term: MaskedGroupTerm::Omit,
        }
    }

    pub fn with_mask(mut self, group_penalized: Vec<bool>) -> Self {
        self.group_penalized = group_penalized;
        self
    }

    pub fn validate(&self, layout: &GroupLayout) -> Result<()> {
        if self.beta.len() != layout.n_cols() {
            return Err(Error::Dimension(format!(
                "{} element variances for {} columns",
                self.beta.len(),
                layout.n_cols()
            )));
        }
        if self.gamma.len() != layout.n_groups() || self.group_penalized.len() != layout.n_groups()
        {
            return Err(Error::Dimension(format!(
                "group hyperparameters sized {}/{} for {} groups",
                self.gamma.len(),
                self.group_penalized.len(),
                layout.n_groups()
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {}",
                self.lambda
            )));
        }
        if self
            .beta
            .iter()
            .chain(self.gamma.iter())
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "variances must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn group_prior_applies(&self, g: usize) -> bool {
        match self.mode {
            PriorMode::Combined => self.group_penalized[g],
            PriorMode::ElementOnly => false,
            PriorMode::GroupOnly => true,
        }
    }

    /// Whether the group carries a group variance that the solvers update.
    pub fn gamma_active(&self, g: usize) -> bool {
        self.group_prior_applies(g)
    }

    /// `None` when the coordinate is pruned (zero effective variance).
    pub(crate) fn coord(&self, q: usize, g: usize) -> Option<CoordPrior> {
        let b = self.beta[q];
        let c = self.gamma[g];
        let p = match self.mode {
            PriorMode::Combined if self.group_penalized[g] => {
                if b <= 0.0 || c <= 0.0 {
                    return None;
                }
                let s = b + c;
                CoordPrior {
                    var: b * c / s,
                    log_term: s.ln(),
                    dvar_dbeta: (c / s).powi(2),
                    dvar_dgamma: (b / s).powi(2),
                    dlog_dbeta: 1.0 / s,
                    dlog_dgamma: 1.0 / s,
                }
            }
            PriorMode::Combined | PriorMode::ElementOnly => {
                if b <= 0.0 {
                    return None;
                }
                let with_log = self.mode == PriorMode::Combined
                    && self.masked_term == MaskedGroupTerm::LogBeta;
                CoordPrior {
                    var: b,
                    log_term: if with_log { b.ln() } else { 0.0 },
                    dvar_dbeta: 1.0,
                    dvar_dgamma: 0.0,
                    dlog_dbeta: if with_log { 1.0 / b } else { 0.0 },
                    dlog_dgamma: 0.0,
                }
            }
            PriorMode::GroupOnly => {
                if c <= 0.0 {
                    return None;
                }
                CoordPrior {
                    var: c,
                    log_term: 0.0,
                    dvar_dbeta: 0.0,
                    dvar_dgamma: 1.0,
                    dlog_dbeta: 0.0,
                    dlog_dgamma: 0.0,
                }
            }
        };
        Some(p)
    }

    /// Effective prior variance per column (0 on pruned coordinates).
    pub fn effective_variance(&self, layout: &GroupLayout) -> DVector<f64> {
        DVector::from_fn(layout.n_cols(), |q, _| {
            self.coord(q, layout.group_of(q)).map_or(0.0, |c| c.var)
        })
    }

    pub fn active_mask(&self, layout: &GroupLayout) -> Vec<bool> {
        (0..layout.n_cols())
            .map(|q| self.coord(q, layout.group_of(q)).is_some())
            .collect()
    }
}

/// Gaussian approximation `N(mu, Sigma)` of the weight posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGaussian {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Gradient of `-v` (the concave log-det part) with respect to the
/// hyperparameters. Pruned entries and masked groups report zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VGradient {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub lambda: f64,
}

/// Route used to factor the marginal covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorPath {
    /// Direct when there are fewer rows than active columns, otherwise Sigma-based.
    Auto,
    /// Factor `C = lambda I + Phi M Phi^T` (rows x rows).
    Direct,
    /// Factor `Sigma^-1 = M^-1 + Phi^T Phi / lambda` (active x active).
    Sigma,
}

enum Factor {
    Direct {
        chol: Cholesky<f64, Dyn>,
    },
    Sigma {
        chol: Cholesky<f64, Dyn>,
    },
}

/// Factorisation of the marginal covariance on the active set plus the
/// scalar and diagonal quantities every objective/gradient evaluation needs.
pub struct Evidence {
    active: Vec<usize>,
    priors: Vec<CoordPrior>,
    phi_a: DMatrix<f64>,
    y: DVector<f64>,
    lambda: f64,
    factor: Factor,
    log_prior: f64,
    logdet_c: f64,
    data_fit: f64,
}

impl Evidence {
    pub fn new(prob: &RegressionProblem, h: &Hyperparameters) -> Result<Self> {
        Self::with_path(prob, h, FactorPath::Auto)
    }

    pub fn with_path(prob: &RegressionProblem, h: &Hyperparameters, path: FactorPath) -> Result<Self> {
        h.validate(&prob.layout)?;
        let layout = &prob.layout;
        let mut active = Vec::new();
        let mut priors = Vec::new();
        for q in 0..layout.n_cols() {
            if let Some(c) = h.coord(q, layout.group_of(q)) {
                active.push(q);
                priors.push(c);
            }
        }
        let phi_a = prob.phi.select_columns(active.iter());
        let n = prob.n_rows();
        let a = active.len();
        let lambda = h.lambda;
        let log_prior: f64 = priors.iter().map(|c| c.log_term).sum();
        let use_direct = match path {
            FactorPath::Auto => n < a,
            FactorPath::Direct => true,
            FactorPath::Sigma => false,
        };
        let y = prob.y.clone();

        let (factor, logdet_c, data_fit) = if use_direct {
            let mut c = DMatrix::<f64>::from_diagonal_element(n, n, lambda);
            let mut scaled = phi_a.clone();
            for (j, pr) in priors.iter().enumerate() {
                scaled.column_mut(j).scale_mut(pr.var);
            }
            c.gemm(1.0, &scaled, &phi_a.transpose(), 1.0);
            symmetrize(&mut c);
            let chol = Cholesky::new(c).ok_or_else(|| {
                Error::Numerical("marginal covariance is not positive definite".into())
            })?;
            let logdet = chol.ln_determinant();
            let z = chol.l().solve_lower_triangular(&y).expect("triangular solve");
            let fit = z.norm_squared();
            (Factor::Direct { chol }, logdet, fit)
        } else {
            let mut s = phi_a.tr_mul(&phi_a) / lambda;
            for (j, pr) in priors.iter().enumerate() {
                s[(j, j)] += 1.0 / pr.var;
            }
            symmetrize(&mut s);
            let chol = Cholesky::new(s).ok_or_else(|| {
                Error::Numerical("posterior precision is not positive definite".into())
            })?;
            let ln_m: f64 = priors.iter().map(|c| c.var.ln()).sum();
            let logdet = n as f64 * lambda.ln() + ln_m + chol.ln_determinant();
            // y^T C^-1 y = (|y|^2 - y^T Phi mu) / lambda with mu = S^-1 Phi^T y / lambda
            let rhs = phi_a.tr_mul(&y) / lambda;
            let mu = chol.solve(&rhs);
            let fit = (y.norm_squared() - y.dot(&(&phi_a * &mu))) / lambda;
            (Factor::Sigma { chol }, logdet, fit)
        };
        if !(logdet_c.is_finite() && data_fit.is_finite()) {
            return Err(Error::Numerical("non-finite evidence terms".into()));
        }
        Ok(Self {
            active,
            priors,
            phi_a,
            y,
            lambda,
            factor,
            log_prior,
            logdet_c,
            data_fit,
        })
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// `ln|C|`.
    pub fn logdet_c(&self) -> f64 {
        self.logdet_c
    }

    /// `sum_q l_q`.
    pub fn log_prior(&self) -> f64 {
        self.log_prior
    }

    /// `y^T C^-1 y`.
    pub fn data_fit(&self) -> f64 {
        self.data_fit
    }

    pub fn l2(&self) -> f64 {
        self.data_fit + self.log_prior + self.logdet_c
    }

    /// `v(h) = -(sum_q l_q + ln|C|)`.
    pub fn v(&self) -> f64 {
        -(self.log_prior + self.logdet_c)
    }

    /// `trace(Delta)` and `diag(Phi_a^T Delta Phi_a)` with `Delta = C^-1`.
    fn delta_terms(&self) -> (f64, DVector<f64>) {
        let n = self.y.len();
        match &self.factor {
            Factor::Direct { chol } => {
                let l = chol.l();
                let x = l
                    .solve_lower_triangular(&self.phi_a)
                    .expect("triangular solve");
                let diag = DVector::from_fn(self.active.len(), |j, _| x.column(j).norm_squared());
                let linv = l
                    .solve_lower_triangular(&DMatrix::identity(n, n))
                    .expect("triangular solve");
                (linv.norm_squared(), diag)
            }
            Factor::Sigma { chol } => {
                // Delta = I/lambda - Phi Sigma Phi^T / lambda^2
                let lam = self.lambda;
                let l = chol.l();
                // Phi Sigma Phi^T = (L^-1 Phi^T)^T (L^-1 Phi^T)
                let z = l
                    .solve_lower_triangular(&self.phi_a.transpose())
                    .expect("triangular solve");
                let trace = n as f64 / lam - z.norm_squared() / (lam * lam);
                let gram = self.phi_a.tr_mul(&self.phi_a);
                let zg = l.solve_lower_triangular(&gram).expect("triangular solve");
                let diag = DVector::from_fn(self.active.len(), |j, _| {
                    gram[(j, j)] / lam - zg.column(j).norm_squared() / (lam * lam)
                });
                (trace, diag)
            }
        }
    }

    /// Posterior mean and covariance on the active set.
    fn posterior_active(&self) -> (DVector<f64>, DMatrix<f64>) {
        match &self.factor {
            Factor::Direct { chol } => {
                // Sigma = M - M Phi^T C^-1 Phi M,  mu = M Phi^T C^-1 y
                let l = chol.l();
                let mut pm = self.phi_a.clone();
                for (j, pr) in self.priors.iter().enumerate() {
                    pm.column_mut(j).scale_mut(pr.var);
                }
                let x = l.solve_lower_triangular(&pm).expect("triangular solve");
                let mut sigma = -x.tr_mul(&x);
                for (j, pr) in self.priors.iter().enumerate() {
                    sigma[(j, j)] += pr.var;
                }
                symmetrize(&mut sigma);
                let cy = chol.solve(&self.y);
                let mu = pm.tr_mul(&cy);
                (mu, sigma)
            }
            Factor::Sigma { chol } => {
                let mut sigma = chol.inverse();
                symmetrize(&mut sigma);
                let mu = &sigma * (self.phi_a.tr_mul(&self.y) / self.lambda);
                (mu, sigma)
            }
        }
    }

    /// Posterior scattered back to full length (zeros on pruned coordinates).
    pub fn posterior(&self, n_cols: usize) -> PosteriorGaussian {
        let (mu_a, sigma_a) = self.posterior_active();
        let mut mu = DVector::zeros(n_cols);
        let mut sigma = DMatrix::zeros(n_cols, n_cols);
        for (a, &q) in self.active.iter().enumerate() {
            mu[q] = mu_a[a];
            for (b, &r) in self.active.iter().enumerate() {
                sigma[(q, r)] = sigma_a[(a, b)];
            }
        }
        PosteriorGaussian { mu, sigma }
    }

    pub fn grad_v(&self, layout: &GroupLayout, h: &Hyperparameters) -> VGradient {
        let (trace, diag) = self.delta_terms();
        let mut gb = DVector::zeros(layout.n_cols());
        let mut gg = DVector::zeros(layout.n_groups());
        for (a, &q) in self.active.iter().enumerate() {
            let pr = &self.priors[a];
            let g = layout.group_of(q);
            if h.mode.uses_beta() {
                gb[q] = pr.dlog_dbeta + diag[a] * pr.dvar_dbeta;
            }
            if h.gamma_active(g) {
                gg[g] += pr.dlog_dgamma + diag[a] * pr.dvar_dgamma;
            }
        }
        VGradient {
            beta: gb,
            gamma: gg,
            lambda: trace,
        }
    }

    /// `u(w) = |y - Phi w|^2 / lambda + sum_q w_q^2 / M_q`; infinite when a
    /// pruned coordinate carries weight.
    pub fn u(&self, prob: &RegressionProblem, w: &DVector<f64>) -> f64 {
        let mut is_active = vec![false; prob.n_cols()];
        for &q in &self.active {
            is_active[q] = true;
        }
        if w.iter().zip(&is_active).any(|(v, &act)| !act && *v != 0.0) {
            return f64::INFINITY;
        }
        let r = prob.residual(w);
        let quad: f64 = self
            .active
            .iter()
            .zip(&self.priors)
            .map(|(&q, pr)| w[q] * w[q] / pr.var)
            .sum();
        r.norm_squared() / self.lambda + quad
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn posterior(prob: &RegressionProblem, h: &Hyperparameters) -> Result<PosteriorGaussian> {
    let ev = Evidence::new(prob, h)?;
    let post = ev.posterior(prob.n_cols());
    if post.mu.iter().chain(post.sigma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite posterior".into()));
    }
    Ok(post)
}

pub fn eval_l1(prob: &RegressionProblem, h: &Hyperparameters, w: &DVector<f64>) -> Result<f64> {
    let ev = Evidence::new(prob, h)?;
    Ok(ev.u(prob, w) - ev.v())
}

pub fn eval_l2(prob: &RegressionProblem, h: &Hyperparameters) -> Result<f64> {
    Ok(Evidence::new(prob, h)?.l2())
}

/// Gradient of the linearised concave part. These are the reweighting
/// factors of the convex-concave iteration.
pub fn grad_v(prob: &RegressionProblem, h: &Hyperparameters) -> Result<VGradient> {
    let ev = Evidence::new(prob, h)?;
    let g = ev.grad_v(&prob.layout, h);
    if g.beta.iter().chain(g.gamma.iter()).any(|v| !v.is_finite()) || !g.lambda.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok(g)
}

/// `v(lambda, beta, gamma)` itself.
pub fn eval_v(prob: &RegressionProblem, h: &Hyperparameters) -> Result<f64> {
    Ok(Evidence::new(prob, h)?.v())
}

/// Convex part `u(w, lambda, beta, gamma)`.
pub fn eval_u(prob: &RegressionProblem, h: &Hyperparameters, w: &DVector<f64>) -> Result<f64> {
    Ok(Evidence::new(prob, h)?.u(prob, w))
}
