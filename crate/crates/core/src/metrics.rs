//! Scoring of identified networks against ground truth.

use serde::{Deserialize, Serialize};

use crate::arx::{ArxNetwork, NetworkTopology};
use crate::error::{Error, Result};
use crate::objective::Hyperparameters;
use crate::regression::{GroupLayout, Weights};

/// A group counts as detected when its norm exceeds this fraction of the
/// largest group norm of the node.
pub const DETECTION_REL_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyScore {
    /// Detected true edges / true edges (1 when there are none).
    pub tp_rate: f64,
    /// False detections / true non-edges (0 when there are none).
    pub fp_rate: f64,
    pub exact: bool,
    pub true_edges: usize,
    pub detected_true: usize,
    pub non_edges: usize,
    pub false_detections: usize,
}

/// Self-loops are ignored; node and input edges are pooled.
pub fn score_topology(est: &NetworkTopology, truth: &NetworkTopology) -> Result<TopologyScore> {
    if est.p() != truth.p() || est.m() != truth.m() {
        return Err(Error::Dimension(format!(
            "estimate has p={}, m={} but truth has p={}, m={}",
            est.p(),
            est.m(),
            truth.p(),
            truth.m()
        )));
    }
    let (mut te, mut dt, mut ne, mut fd) = (0, 0, 0, 0);
    let mut tally = |e: bool, t: bool| {
        if t {
            te += 1;
            dt += usize::from(e);
        } else {
            ne += 1;
            fd += usize::from(e);
        }
    };
    for i in 0..truth.p() {
        for j in 0..truth.p() {
            if i != j {
                tally(est.node_edges[i][j], truth.node_edges[i][j]);
            }
        }
        for j in 0..truth.m() {
            tally(est.input_edges[i][j], truth.input_edges[i][j]);
        }
    }
    let tp_rate = if te == 0 { 1.0 } else { dt as f64 / te as f64 };
    let fp_rate = if ne == 0 { 0.0 } else { fd as f64 / ne as f64 };
    Ok(TopologyScore {
        tp_rate,
        fp_rate,
        exact: dt == te && fd == 0,
        true_edges: te,
        detected_true: dt,
        non_edges: ne,
        false_detections: fd,
    })
}

/// Largest absolute difference over all `A` and `B` coefficients, shorter
/// polynomials padded with zeros.
pub fn coeff_inf_error(est: &ArxNetwork, truth: &ArxNetwork) -> Result<f64> {
    if est.p != truth.p || est.m != truth.m {
        return Err(Error::Dimension(format!(
            "estimate has p={}, m={} but truth has p={}, m={}",
            est.p, est.m, truth.p, truth.m
        )));
    }
    if est.max_order() < truth.max_effective_order() {
        return Err(Error::InvalidArgument(format!(
            "estimate order {} cannot represent truth of order {}",
            est.max_order(),
            truth.max_effective_order()
        )));
    }
    let mut worst: f64 = 0.0;
    let mut compare = |a: &[f64], b: &[f64]| {
        for d in 0..a.len().max(b.len()) {
            let x = a.get(d).copied().unwrap_or(0.0);
            let y = b.get(d).copied().unwrap_or(0.0);
            worst = worst.max((x - y).abs());
        }
    };
    for i in 0..truth.p {
        for j in 0..truth.p {
            compare(est.a.get(i, j), truth.a.get(i, j));
        }
        for j in 0..truth.m {
            compare(est.b.get(i, j), truth.b.get(i, j));
        }
    }
    Ok(worst)
}

/// Detected groups: survived pruning and carry a non-negligible norm.
pub fn detected_groups(layout: &GroupLayout, w: &Weights, hyper: &Hyperparameters) -> Vec<bool> {
    let active = hyper.active_mask(layout);
    let norms: Vec<f64> = (0..layout.n_groups()).map(|g| w.group_norm(layout, g)).collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    (0..layout.n_groups())
        .map(|g| {
            let survived = layout.range(g).any(|q| active[q]);
            survived && norms[g] > DETECTION_REL_TOL * max
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arx::{random_network, random_topology, NetworkGenerator};

    #[test]
    fn identical_topology_is_exact() {
        let t = random_topology(6, 2, 0.3, 5);
        let s = score_topology(&t, &t).unwrap();
        assert_eq!((s.tp_rate, s.fp_rate, s.exact), (1.0, 0.0, true));
    }

    #[test]
    fn empty_estimate_misses_everything() {
        let t = random_topology(6, 2, 0.5, 5);
        assert!(t.edge_count() > 0);
        let s = score_topology(&NetworkTopology::empty(6, 2), &t).unwrap();
        assert_eq!((s.tp_rate, s.fp_rate, s.exact), (0.0, 0.0, false));
    }

    #[test]
    fn single_coefficient_offset() {
        let net = random_network(&NetworkGenerator::default(), 3).unwrap();
        assert_eq!(coeff_inf_error(&net, &net).unwrap(), 0.0);
        let mut other = net.clone();
        let mut c = other.a.get(0, 0).to_vec();
        c[0] += 0.3;
        other.a.set(0, 0, c).unwrap();
        assert!((coeff_inf_error(&other, &net).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = NetworkTopology::empty(3, 1);
        let b = NetworkTopology::empty(4, 1);
        assert!(score_topology(&a, &b).is_err());
    }
}
