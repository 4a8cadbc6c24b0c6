//! Multivariable ARX networks: representation, random generation, simulation
//! and Boolean topology.
//!
//! Sign convention. For node `i` the stored polynomials drive the recursion
//!
//! ```text
//! y_i(t) = sum_{j != i} sum_d A_ij[d] y_j(t-d)
//!        - sum_d A_ii[d] y_i(t-d)
//!        + sum_j sum_d B_ij[d] u_j(t-d) + e_i(t)
//! ```
//!
//! i.e. the diagonal entry is the monic polynomial `1 + sum_d A_ii[d] z^-d`
//! moved to the right-hand side, and off-diagonal entries are coupling gains.
//! This is the per-node form the regression layer reads back, so coefficients
//! round-trip without sign flips.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude beyond which a simulated sample is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Rejection sampling stops after this many unstable draws.
pub const MAX_GENERATION_ATTEMPTS: usize = 1000;

/// Spectral-radius bound enforced on generated networks.
pub const STABILITY_MARGIN: f64 = 0.95;

/// Matrix of polynomials in `z^-1`. Entry `(i, j)` holds coefficients for
/// lags `1..=len`, so index `d - 1` multiplies `z^-d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialMatrix {
    rows: usize,
    cols: usize,
    max_order: usize,
    coeffs: Vec<Vec<f64>>,
}

impl PolynomialMatrix {
    pub fn zeros(rows: usize, cols: usize, max_order: usize) -> Self {
        Self {
            rows,
            cols,
            max_order,
            coeffs: vec![Vec::new(); rows * cols],
        }
    }

    /// Builds from a `rows x cols` nested list of coefficient lists.
    pub fn from_nested(nested: Vec<Vec<Vec<f64>>>, max_order: usize) -> Result<Self> {
        let rows = nested.len();
        let cols = nested.first().map_or(0, Vec::len);
        let mut out = Self::zeros(rows, cols, max_order);
        for (i, row) in nested.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "polynomial row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for (j, c) in row.into_iter().enumerate() {
                out.set(i, j, c)?;
            }
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        &self.coeffs[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, coeffs: Vec<f64>) -> Result<()> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::Dimension(format!(
                "entry ({i}, {j}) outside {}x{} polynomial matrix",
                self.rows, self.cols
            )));
        }
        if coeffs.len() > self.max_order {
            return Err(Error::InvalidArgument(format!(
                "entry ({i}, {j}) has {} coefficients, max order is {}",
                coeffs.len(),
                self.max_order
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "entry ({i}, {j}) has a non-finite coefficient"
            )));
        }
        self.coeffs[i * self.cols + j] = coeffs;
        Ok(())
    }

    /// Coefficient multiplying `z^-lag` (zero past the stored list).
    pub fn coeff(&self, i: usize, j: usize, lag: usize) -> f64 {
        debug_assert!(lag >= 1);
        self.get(i, j).get(lag - 1).copied().unwrap_or(0.0)
    }

    /// Index of the last nonzero coefficient (0 for the zero polynomial).
    pub fn effective_order(&self, i: usize, j: usize) -> usize {
        self.get(i, j)
            .iter()
            .rposition(|&c| c != 0.0)
            .map_or(0, |d| d + 1)
    }

    pub fn max_effective_order(&self) -> usize {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| self.effective_order(i, j))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).iter().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_vec()).collect())
            .collect()
    }
}

/// Ground-truth or estimated ARX network.
#[derive(Clone, Debug, PartialEq)]
pub struct ArxNetwork {
    pub p: usize,
    pub m: usize,
    pub a: PolynomialMatrix,
    pub b: PolynomialMatrix,
    pub noise_var: Vec<f64>,
}

impl ArxNetwork {
    pub fn new(
        a: PolynomialMatrix,
        b: PolynomialMatrix,
        noise_var: Vec<f64>,
    ) -> Result<Self> {
        let p = a.rows();
        if a.cols() != p {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != p {
            return Err(Error::Dimension(format!(
                "B has {} rows, A has {p}",
                b.rows()
            )));
        }
        if noise_var.len() != p {
            return Err(Error::Dimension(format!(
                "{} noise variances for {p} nodes",
                noise_var.len()
            )));
        }
        if noise_var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "noise variances must be finite and non-negative".into(),
            ));
        }
        let m = b.cols();
        Ok(Self {
            p,
            m,
            a,
            b,
            noise_var,
        })
    }

    pub fn max_order(&self) -> usize {
        self.a.max_order().max(self.b.max_order())
    }

    pub fn max_effective_order(&self) -> usize {
        self.a
            .max_effective_order()
            .max(self.b.max_effective_order())
    }

    /// Autoregressive matrix `M_d` such that `y(t) = sum_d M_d y(t-d) + ...`.
    fn lag_matrix(&self, lag: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| {
            let c = self.a.coeff(i, j, lag);
            if i == j {
                -c
            } else {
                c
            }
        })
    }

    /// Companion matrix of the autoregressive part.
    pub fn companion(&self) -> DMatrix<f64> {
        let order = self.a.max_effective_order().max(1);
        let p = self.p;
        let n = p * order;
        let mut c = DMatrix::zeros(n, n);
        for d in 1..=order {
            c.view_mut((0, (d - 1) * p), (p, p))
                .copy_from(&self.lag_matrix(d));
        }
        for blk in 1..order {
            for r in 0..p {
                c[(blk * p + r, (blk - 1) * p + r)] = 1.0;
            }
        }
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        if self.p == 0 {
            return 0.0;
        }
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// Boolean interconnection structure. `node_edges[i][j]` is the edge `j -> i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub node_edges: Vec<Vec<bool>>,
    pub input_edges: Vec<Vec<bool>>,
}

impl NetworkTopology {
    pub fn empty(p: usize, m: usize) -> Self {
        Self {
            node_edges: vec![vec![false; p]; p],
            input_edges: vec![vec![false; m]; p],
        }
    }

    pub fn p(&self) -> usize {
        self.node_edges.len()
    }

    pub fn m(&self) -> usize {
        self.input_edges.first().map_or(0, Vec::len)
    }

    pub fn edge_count(&self) -> usize {
        let nodes = self
            .node_edges
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().filter(|&(j, &e)| e && i != j).count())
            .sum::<usize>();
        let inputs = self.input_edges.iter().flatten().filter(|&&e| e).count();
        nodes + inputs
    }
}

/// Sampled node and input signals. Column `t` holds time index `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl TimeSeries {
    pub fn new(y: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        if u.nrows() > 0 && u.ncols() != y.ncols() {
            return Err(Error::Dimension(format!(
                "Y has {} samples, U has {}",
                y.ncols(),
                u.ncols()
            )));
        }
        if y.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "time series contains non-finite samples".into(),
            ));
        }
        let t = y.ncols();
        let u = if u.nrows() == 0 {
            DMatrix::zeros(0, t)
        } else {
            u
        };
        Ok(Self { y, u })
    }

    pub fn p(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the exciting input is produced during simulation.
#[derive(Clone, Debug)]
pub enum InputKind {
    Gaussian { variance: f64 },
    Provided(DMatrix<f64>),
}

/// Parameters for [`random_network`]. Defaults follow the benchmark setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkGenerator {
    pub p: usize,
    pub m: usize,
    pub max_order: usize,
    pub density: f64,
    pub coeff_scale: f64,
    pub noise_var: f64,
}

impl Default for NetworkGenerator {
    fn default() -> Self {
        Self {
            p: 10,
            m: 1,
            max_order: 3,
            density: 0.2,
            coeff_scale: 0.5,
            noise_var: 0.01,
        }
    }
}

impl NetworkGenerator {
    fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::InvalidArgument("need at least one node".into()));
        }
        if self.max_order < 1 {
            return Err(Error::InvalidArgument("max_order must be >= 1".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if !(self.coeff_scale > 0.0 && self.coeff_scale.is_finite()) {
            return Err(Error::InvalidArgument(
                "coeff_scale must be positive".into(),
            ));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise_var must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn failure(&self) -> Error {
        Error::GenerationFailed {
            attempts: MAX_GENERATION_ATTEMPTS,
            p: self.p,
            m: self.m,
            max_order: self.max_order,
            density: self.density,
            coeff_scale: self.coeff_scale,
        }
    }
}

/// Draws a Boolean structure: each off-diagonal node edge and each input edge
/// is present with probability `density`. Self-loops are always present.
pub fn random_topology(p: usize, m: usize, density: f64, seed: u64) -> NetworkTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topo = NetworkTopology::empty(p, m);
    for i in 0..p {
        for j in 0..p {
            topo.node_edges[i][j] = i != j && rng.random::<f64>() < density;
        }
        for j in 0..m {
            topo.input_edges[i][j] = rng.random::<f64>() < density;
        }
    }
    topo
}

fn random_polynomial(rng: &mut ChaCha8Rng, max_order: usize, scale: f64) -> Vec<f64> {
    let order = rng.random_range(1..=max_order);
    (0..order)
        .map(|_| {
            // resample the (measure-zero) exact zero so the effective order holds
            loop {
                let c = rng.random_range(-scale..=scale);
                if c != 0.0 {
                    break c;
                }
            }
        })
        .collect()
}

/// Draws coefficients on a fixed topology, rejecting until the companion
/// spectral radius is below [`STABILITY_MARGIN`].
pub fn random_coefficients(
    topology: &NetworkTopology,
    gen: &NetworkGenerator,
    seed: u64,
) -> Result<ArxNetwork> {
    gen.validate()?;
    let (p, m) = (gen.p, gen.m);
    if topology.p() != p || (p > 0 && topology.m() != m) {
        return Err(Error::Dimension(format!(
            "topology is {}x{}, generator expects p={p}, m={m}",
            topology.p(),
            topology.m()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut a = PolynomialMatrix::zeros(p, p, gen.max_order);
        let mut b = PolynomialMatrix::zeros(p, m, gen.max_order);
        for i in 0..p {
            for j in 0..p {
                if i == j || topology.node_edges[i][j] {
                    a.set(i, j, random_polynomial(&mut rng, gen.max_order, gen.coeff_scale))?;
                }
            }
            for j in 0..m {
                if topology.input_edges[i][j] {
                    b.set(i, j, random_polynomial(&mut rng, gen.max_order, gen.coeff_scale))?;
                }
            }
        }
        let net = ArxNetwork::new(a, b, vec![gen.noise_var; p])?;
        if net.spectral_radius() < STABILITY_MARGIN {
            return Ok(net);
        }
    }
    Err(gen.failure())
}

/// Random stable network: topology and coefficients from one seed.
pub fn random_network(gen: &NetworkGenerator, seed: u64) -> Result<ArxNetwork> {
    gen.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo_seed: u64 = rng.random();
    let coeff_seed: u64 = rng.random();
    let topology = random_topology(gen.p, gen.m, gen.density, topo_seed);
    random_coefficients(&topology, gen, coeff_seed)
}

/// Simulates the network from zero initial conditions.
pub fn simulate(
    net: &ArxNetwork,
    samples: usize,
    input: &InputKind,
    seed: u64,
) -> Result<TimeSeries> {
    let order = net.max_effective_order();
    if samples <= order {
        return Err(Error::InsufficientData(format!(
            "{samples} samples cannot cover model order {order}"
        )));
    }
    let (p, m) = (net.p, net.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = match input {
        InputKind::Gaussian { variance } => {
            if !(*variance >= 0.0 && variance.is_finite()) {
                return Err(Error::InvalidArgument(
                    "input variance must be non-negative".into(),
                ));
            }
            let sd = variance.sqrt();
            let mut u = DMatrix::zeros(m, samples);
            for t in 0..samples {
                for j in 0..m {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    u[(j, t)] = sd * z;
                }
            }
            u
        }
        InputKind::Provided(u) => {
            if u.nrows() != m || u.ncols() != samples {
                return Err(Error::Dimension(format!(
                    "provided input is {}x{}, expected {m}x{samples}",
                    u.nrows(),
                    u.ncols()
                )));
            }
            u.clone()
        }
    };

    let noise_sd: Vec<f64> = net.noise_var.iter().map(|v| v.sqrt()).collect();
    let mut y = DMatrix::<f64>::zeros(p, samples);
    for t in 0..samples {
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..p {
                let poly = net.a.get(i, j);
                let sign = if i == j { -1.0 } else { 1.0 };
                for (d0, &c) in poly.iter().enumerate() {
                    let lag = d0 + 1;
                    if lag <= t {
                        acc += sign * c * y[(j, t - lag)];
                    }
                }
            }
            for j in 0..m {
                for (d0, &c) in net.b.get(i, j).iter().enumerate() {
                    let lag = d0 + 1;
                    if lag <= t {
                        acc += c * u[(j, t - lag)];
                    }
                }
            }
            if noise_sd[i] > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                acc += noise_sd[i] * z;
            }
            if !acc.is_finite() || acc.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Unstable {
                    time: t + 1,
                    node: i + 1,
                    value: acc,
                });
            }
            y[(i, t)] = acc;
        }
    }
    TimeSeries::new(y, u)
}

/// Edge present iff some coefficient of the corresponding polynomial exceeds
/// `zero_tol` in magnitude. Self-loops are never reported as edges.
pub fn boolean_topology(net: &ArxNetwork, zero_tol: f64) -> NetworkTopology {
    let mut topo = NetworkTopology::empty(net.p, net.m);
    for i in 0..net.p {
        for j in 0..net.p {
            topo.node_edges[i][j] = i != j && net.a.max_abs(i, j) > zero_tol;
        }
        for j in 0..net.m {
            topo.input_edges[i][j] = net.b.max_abs(i, j) > zero_tol;
        }
    }
    topo
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ar(a: f64, b: Option<f64>, noise: f64) -> ArxNetwork {
        let mut am = PolynomialMatrix::zeros(1, 1, 1);
        am.set(0, 0, vec![a]).unwrap();
        let m = usize::from(b.is_some());
        let mut bm = PolynomialMatrix::zeros(1, m, 1);
        if let Some(b) = b {
            bm.set(0, 0, vec![b]).unwrap();
        }
        ArxNetwork::new(am, bm, vec![noise]).unwrap()
    }

    #[test]
    fn scalar_network_is_stable_and_bounded() {
        let gen = NetworkGenerator {
            p: 1,
            m: 0,
            max_order: 1,
            density: 1.0,
            coeff_scale: 0.5,
            noise_var: 0.01,
        };
        for seed in 0..20 {
            let net = random_network(&gen, seed).unwrap();
            let a = net.a.get(0, 0);
            assert_eq!(a.len(), 1);
            assert!(a[0].abs() <= 0.5);
            assert!(net.spectral_radius() < 1.0);
        }
    }

    #[test]
    fn benchmark_shape() {
        let net = random_network(&NetworkGenerator::default(), 11).unwrap();
        assert_eq!((net.p, net.m), (10, 1));
        assert!(net.max_effective_order() <= 3);
        assert!(net.spectral_radius() < STABILITY_MARGIN);
        for i in 0..10 {
            assert!(net.a.effective_order(i, i) >= 1, "diagonal {i} must be nonzero");
        }
        let data = simulate(&net, 20, &InputKind::Gaussian { variance: 1.0 }, 3).unwrap();
        assert_eq!(data.len(), 20);
        assert_eq!(data.p(), 10);
        assert_eq!(data.m(), 1);
    }

    #[test]
    fn same_seed_same_network() {
        let gen = NetworkGenerator::default();
        assert_eq!(random_network(&gen, 5).unwrap(), random_network(&gen, 5).unwrap());
        assert_ne!(random_network(&gen, 5).unwrap(), random_network(&gen, 6).unwrap());
    }

    #[test]
    fn spectral_radius_of_scalar_ar() {
        // y(t) = 0.5 y(t-1) corresponds to a stored diagonal coefficient of -0.5
        let net = scalar_ar(-0.5, None, 0.0);
        assert!((net.spectral_radius() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_zero_input_stays_zero() {
        let net = random_network(&NetworkGenerator { noise_var: 0.0, ..Default::default() }, 2)
            .unwrap();
        let u = DMatrix::zeros(1, 30);
        let data = simulate(&net, 30, &InputKind::Provided(u), 0).unwrap();
        assert!(data.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_is_geometric() {
        let net = scalar_ar(-0.5, Some(1.0), 0.0);
        let mut u = DMatrix::zeros(1, 8);
        u[(0, 0)] = 1.0;
        let data = simulate(&net, 8, &InputKind::Provided(u), 0).unwrap();
        assert_eq!(data.y[(0, 0)], 0.0);
        for t in 1..8 {
            assert_eq!(data.y[(0, t)], 0.5f64.powi(t as i32 - 1));
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let mut a = PolynomialMatrix::zeros(1, 1, 3);
        a.set(0, 0, vec![0.1, 0.0, 0.2]).unwrap();
        let net = ArxNetwork::new(a, PolynomialMatrix::zeros(1, 0, 3), vec![0.0]).unwrap();
        let err = simulate(&net, 3, &InputKind::Gaussian { variance: 1.0 }, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn unstable_network_reports_divergence() {
        let net = scalar_ar(-3.0, None, 1.0);
        let err = simulate(&net, 200, &InputKind::Gaussian { variance: 1.0 }, 1).unwrap_err();
        assert!(matches!(err, Error::Unstable { node: 1, .. }));
    }

    #[test]
    fn topology_from_coefficients() {
        let mut a = PolynomialMatrix::zeros(2, 2, 3);
        a.set(0, 0, vec![0.2]).unwrap();
        a.set(1, 1, vec![0.2]).unwrap();
        let b = PolynomialMatrix::zeros(2, 0, 3);
        let net = ArxNetwork::new(a.clone(), b.clone(), vec![0.0; 2]).unwrap();
        assert_eq!(boolean_topology(&net, 1e-6).edge_count(), 0);

        a.set(0, 1, vec![0.0, 0.3, 0.0]).unwrap();
        let net = ArxNetwork::new(a.clone(), b.clone(), vec![0.0; 2]).unwrap();
        let topo = boolean_topology(&net, 1e-6);
        assert!(topo.node_edges[0][1]);
        assert!(!topo.node_edges[1][0]);
        assert_eq!(net.a.effective_order(0, 1), 2);

        a.set(0, 1, vec![1e-8]).unwrap();
        let net = ArxNetwork::new(a, b, vec![0.0; 2]).unwrap();
        assert_eq!(boolean_topology(&net, 1e-6).edge_count(), 0);
    }

    #[test]
    fn coefficient_list_longer_than_order_rejected() {
        let mut a = PolynomialMatrix::zeros(1, 1, 2);
        assert!(a.set(0, 0, vec![0.1, 0.1, 0.1]).is_err());
    }

    #[test]
    fn fixed_topology_redraws_only_coefficients() {
        let gen = NetworkGenerator::default();
        let topo = random_topology(gen.p, gen.m, gen.density, 9);
        let n1 = random_coefficients(&topo, &gen, 1).unwrap();
        let n2 = random_coefficients(&topo, &gen, 2).unwrap();
        assert_eq!(boolean_topology(&n1, 0.0), topo);
        assert_eq!(boolean_topology(&n2, 0.0), topo);
        assert_ne!(n1, n2);
    }
}
