//! Per-node linear regression `y = Phi w + e` assembled from a time series.
//!
//! Rows run time-descending (`t = T` down to `k + 1`). Column groups are the
//! other nodes in ascending index order, then the inputs, then the node's own
//! lagged samples (negated) last. Within a group the columns for row time `s`
//! are `[x(s-k), ..., x(s-1)]`, so the `j`-th weight of a group (0-based)
//! multiplies lag `k - j`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arx::TimeSeries;
use crate::error::{Error, Result};

/// What a column group regresses on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum GroupSource {
    Node(usize),
    Input(usize),
    SelfLoop,
    Dictionary(usize),
}

impl GroupSource {
    /// Human-readable label, 1-based (`y3`, `u1`, `self`, `f2`).
    pub fn label(&self, node: usize) -> String {
        match self {
            GroupSource::Node(j) => format!("y{}", j + 1),
            GroupSource::Input(j) => format!("u{}", j + 1),
            GroupSource::SelfLoop => format!("y{} (self)", node + 1),
            GroupSource::Dictionary(g) => format!("f{}", g + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub source: GroupSource,
    pub start: usize,
    pub size: usize,
}

impl Group {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.size
    }
}

/// Partition of the weight vector into contiguous groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLayout {
    lag_order: usize,
    groups: Vec<Group>,
    #[serde(skip)]
    col_group: Vec<usize>,
}

impl GroupLayout {
    pub fn new(lag_order: usize) -> Self {
        Self {
            lag_order,
            groups: Vec::new(),
            col_group: Vec::new(),
        }
    }

    /// Linear ARX layout for `node`: other nodes, inputs, self last.
    pub fn linear(p: usize, m: usize, node: usize, k: usize) -> Self {
        let mut layout = Self::new(k);
        for j in (0..p).filter(|&j| j != node) {
            layout.push(GroupSource::Node(j), k);
        }
        for j in 0..m {
            layout.push(GroupSource::Input(j), k);
        }
        layout.push(GroupSource::SelfLoop, k);
        layout
    }

    pub fn push(&mut self, source: GroupSource, size: usize) {
        let g = self.groups.len();
        self.groups.push(Group {
            source,
            start: self.col_group.len(),
            size,
        });
        self.col_group.extend(std::iter::repeat_n(g, size));
    }

    /// Nominal lag order `k` of the linear groups.
    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_group.len()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &Group {
        &self.groups[g]
    }

    pub fn range(&self, g: usize) -> Range<usize> {
        self.groups[g].range()
    }

    pub fn group_of(&self, col: usize) -> usize {
        self.col_group[col]
    }

    pub fn self_group(&self) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.source == GroupSource::SelfLoop)
    }

    pub fn find(&self, source: GroupSource) -> Option<usize> {
        self.groups.iter().position(|g| g.source == source)
    }

    /// Rebuilds the column index after deserialization.
    pub fn reindex(&mut self) {
        self.col_group.clear();
        for (g, grp) in self.groups.iter().enumerate() {
            debug_assert_eq!(grp.start, self.col_group.len());
            self.col_group.extend(std::iter::repeat_n(g, grp.size));
        }
    }

    /// Layout of the columns flagged in `keep`; empty groups disappear.
    fn restrict(&self, keep: &[bool]) -> GroupLayout {
        let mut out = GroupLayout::new(self.lag_order);
        for grp in &self.groups {
            let size = grp.range().filter(|&c| keep[c]).count();
            if size > 0 {
                out.push(grp.source, size);
            }
        }
        out
    }
}

/// Weight vector partitioned by a [`GroupLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Weights(pub DVector<f64>);

impl Weights {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn group(&self, layout: &GroupLayout, g: usize) -> &[f64] {
        &self.0.as_slice()[layout.range(g)]
    }

    pub fn group_norm(&self, layout: &GroupLayout, g: usize) -> f64 {
        self.group(layout, g).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Coefficients of a linear group ordered by lag `1..=k` (index `d - 1`
    /// multiplies `z^-d`).
    pub fn lag_coefficients(&self, layout: &GroupLayout, g: usize) -> Vec<f64> {
        let w = self.group(layout, g);
        let k = w.len();
        (1..=k).map(|d| w[k - d]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionProblem {
    pub node: usize,
    pub y: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub layout: GroupLayout,
}

impl RegressionProblem {
    pub fn new(node: usize, y: DVector<f64>, phi: DMatrix<f64>, layout: GroupLayout) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "Phi has {} rows, y has {}",
                phi.nrows(),
                y.len()
            )));
        }
        if phi.ncols() != layout.n_cols() {
            return Err(Error::Dimension(format!(
                "Phi has {} columns, layout has {}",
                phi.ncols(),
                layout.n_cols()
            )));
        }
        Ok(Self {
            node,
            y,
            phi,
            layout,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.phi.ncols()
    }

    /// Sub-problem on the flagged columns. Returns the kept original indices.
    pub fn restrict(&self, keep: &[bool]) -> (RegressionProblem, Vec<usize>) {
        assert_eq!(keep.len(), self.n_cols());
        let idx: Vec<usize> = (0..self.n_cols()).filter(|&c| keep[c]).collect();
        let phi = self.phi.select_columns(idx.iter());
        let layout = self.layout.restrict(keep);
        (
            RegressionProblem {
                node: self.node,
                y: self.y.clone(),
                phi,
                layout,
            },
            idx,
        )
    }

    pub fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.phi * w
    }

    /// Rows `range` only (used for hold-out splits).
    pub fn select_rows(&self, rows: Range<usize>) -> RegressionProblem {
        let idx: Vec<usize> = rows.collect();
        RegressionProblem {
            node: self.node,
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&r| self.y[r])),
            phi: self.phi.select_rows(idx.iter()),
            layout: self.layout.clone(),
        }
    }
}

/// Regression for node `node` (0-based) with lag order `k`.
pub fn build_problem(data: &TimeSeries, node: usize, k: usize) -> Result<RegressionProblem> {
    let (p, m, t_len) = (data.p(), data.m(), data.len());
    if node >= p {
        return Err(Error::InvalidArgument(format!(
            "node index {node} out of range for {p} nodes"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("lag order k must be >= 1".into()));
    }
    if k >= t_len {
        return Err(Error::InsufficientData(format!(
            "lag order {k} needs more than {t_len} samples"
        )));
    }
    let layout = GroupLayout::linear(p, m, node, k);
    let n_rows = t_len - k;
    let mut phi = DMatrix::zeros(n_rows, layout.n_cols());
    let mut y = DVector::zeros(n_rows);
    for r in 0..n_rows {
        // 0-based column index of the row's time s = T - r
        let s = t_len - 1 - r;
        y[r] = data.y[(node, s)];
        for grp in layout.groups() {
            let (signal, sign) = match grp.source {
                GroupSource::Node(j) => (data.y.row(j), 1.0),
                GroupSource::Input(j) => (data.u.row(j), 1.0),
                GroupSource::SelfLoop => (data.y.row(node), -1.0),
                GroupSource::Dictionary(_) => unreachable!("linear layout"),
            };
            for j in 0..k {
                phi[(r, grp.start + j)] = sign * signal[s - k + j];
            }
        }
    }
    RegressionProblem::new(node, y, phi, layout)
}

/// Vertically stacks independent experiments sharing node and layout.
pub fn stack_experiments(problems: &[RegressionProblem]) -> Result<RegressionProblem> {
    let first = problems
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to stack".into()))?;
    for (e, prob) in problems.iter().enumerate().skip(1) {
        if prob.node != first.node || prob.layout != first.layout {
            return Err(Error::LayoutMismatch(format!(
                "experiment {e} has node {} / {} columns, expected node {} / {} columns",
                prob.node,
                prob.n_cols(),
                first.node,
                first.n_cols()
            )));
        }
    }
    let n_rows: usize = problems.iter().map(RegressionProblem::n_rows).sum();
    let n_cols = first.n_cols();
    let mut phi = DMatrix::zeros(n_rows, n_cols);
    let mut y = DVector::zeros(n_rows);
    let mut r0 = 0;
    for prob in problems {
        let n = prob.n_rows();
        phi.view_mut((r0, 0), (n, n_cols)).copy_from(&prob.phi);
        y.rows_mut(r0, n).copy_from(&prob.y);
        r0 += n;
    }
    RegressionProblem::new(first.node, y, phi, first.layout.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(y: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> TimeSeries {
        let t = y[0].len();
        let ym = DMatrix::from_fn(y.len(), t, |i, c| y[i][c]);
        let um = DMatrix::from_fn(u.len(), t, |i, c| u[i][c]);
        TimeSeries::new(ym, um).unwrap()
    }

    #[test]
    fn scalar_self_block_is_negated() {
        let data = series(vec![vec![1.0, 2.0, 3.0]], vec![]);
        let prob = build_problem(&data, 0, 1).unwrap();
        assert_eq!(prob.y.as_slice(), &[3.0, 2.0]);
        assert_eq!(prob.phi.as_slice(), &[-2.0, -1.0]);
        assert_eq!(prob.layout.self_group(), Some(0));
    }

    #[test]
    fn two_node_layout() {
        let data = series(vec![vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]], vec![]);
        let prob = build_problem(&data, 0, 1).unwrap();
        assert_eq!(prob.layout.group(0).source, GroupSource::Node(1));
        assert_eq!(prob.layout.group(1).source, GroupSource::SelfLoop);
        assert_eq!(prob.phi.row(0).iter().copied().collect::<Vec<_>>(), vec![20.0, -2.0]);
        assert_eq!(prob.phi.row(1).iter().copied().collect::<Vec<_>>(), vec![10.0, -1.0]);
    }

    #[test]
    fn inputs_sit_between_nodes_and_self() {
        let data = series(
            vec![vec![0.0; 6], vec![0.0; 6], vec![0.0; 6]],
            vec![vec![0.0; 6], vec![0.0; 6]],
        );
        let prob = build_problem(&data, 1, 2).unwrap();
        let sources: Vec<_> = prob.layout.groups().iter().map(|g| g.source).collect();
        assert_eq!(
            sources,
            vec![
                GroupSource::Node(0),
                GroupSource::Node(2),
                GroupSource::Input(0),
                GroupSource::Input(1),
                GroupSource::SelfLoop
            ]
        );
        assert_eq!(prob.n_cols(), 10);
        assert_eq!(prob.n_rows(), 4);
    }

    #[test]
    fn impulse_lands_on_lag_columns() {
        // impulse in u1 at time tau = 4 (1-based); k = 3, T = 8
        let mut u = vec![0.0; 8];
        u[3] = 1.0;
        let data = series(vec![vec![0.0; 8]], vec![u]);
        let prob = build_problem(&data, 0, 3).unwrap();
        let g = prob.layout.find(GroupSource::Input(0)).unwrap();
        let start = prob.layout.group(g).start;
        for r in 0..prob.n_rows() {
            let s = 8 - r; // 1-based row time
            for j in 0..3 {
                let lag = 3 - j;
                let expected = if s - lag == 4 { 1.0 } else { 0.0 };
                assert_eq!(prob.phi[(r, start + j)], expected, "row time {s}, lag {lag}");
            }
        }
    }

    #[test]
    fn k_too_large() {
        let data = series(vec![vec![1.0, 2.0, 3.0]], vec![]);
        assert!(matches!(build_problem(&data, 0, 3), Err(Error::InsufficientData(_))));
        assert!(build_problem(&data, 1, 1).is_err());
    }

    #[test]
    fn stacking() {
        let a = series(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![]);
        let pa = build_problem(&a, 0, 1).unwrap();
        assert_eq!(stack_experiments(std::slice::from_ref(&pa)).unwrap(), pa);
        let stacked = stack_experiments(&[pa.clone(), pa.clone()]).unwrap();
        assert_eq!(stacked.n_rows(), 6);
        assert_eq!(stacked.y.rows(3, 3), pa.y.rows(0, 3));

        let b = series(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![]);
        let pb = build_problem(&b, 0, 2).unwrap();
        assert!(matches!(
            stack_experiments(&[pa, pb]),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn restriction_drops_empty_groups() {
        let data = series(vec![vec![1.0; 6], vec![2.0; 6]], vec![vec![3.0; 6]]);
        let prob = build_problem(&data, 0, 2).unwrap();
        let keep = [false, false, true, false, true, true];
        let (sub, idx) = prob.restrict(&keep);
        assert_eq!(idx, vec![2, 4, 5]);
        assert_eq!(sub.layout.n_groups(), 2);
        assert_eq!(sub.layout.group(0).source, GroupSource::Input(0));
        assert_eq!(sub.layout.group(0).size, 1);
        assert_eq!(sub.layout.group(1).size, 2);
        assert_eq!(sub.phi.column(0), prob.phi.column(2));
    }

    #[test]
    fn lag_coefficients_reverse_group_order() {
        let layout = GroupLayout::linear(1, 0, 0, 3);
        let w = Weights(DVector::from_vec(vec![0.0, 0.2, 0.5]));
        assert_eq!(w.lag_coefficients(&layout, 0), vec![0.5, 0.2, 0.0]);
    }
}
