//! Nonlinear dictionary terms appended to a node's regression.
//!
//! Each entry contributes one column evaluated on the lagged samples of the
//! regression row (lags `1..=lag_window`, never the current sample). Entries
//! sharing a `group_id` form one group; dictionary groups follow the linear
//! groups in `group_id` order.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::arx::TimeSeries;
use crate::error::{Error, Result};
use crate::expr::{Expr, SignalKind, SignalRef};
use crate::regression::{build_problem, GroupSource, RegressionProblem};

/// Lagged view of a time series at one regression row.
pub struct LagWindow<'a> {
    data: &'a TimeSeries,
    /// 0-based time index of the row.
    time: usize,
    window: usize,
}

impl LagWindow<'_> {
    /// `y_j(t - lag)`, 0-based `j`; NaN outside the window.
    pub fn y(&self, j: usize, lag: usize) -> f64 {
        self.get(SignalRef {
            kind: SignalKind::Node,
            index: j,
            lag,
        })
    }

    /// `u_j(t - lag)`, 0-based `j`; NaN outside the window.
    pub fn u(&self, j: usize, lag: usize) -> f64 {
        self.get(SignalRef {
            kind: SignalKind::Input,
            index: j,
            lag,
        })
    }

    pub fn get(&self, r: SignalRef) -> f64 {
        if r.lag == 0 || r.lag > self.window || r.lag > self.time {
            return f64::NAN;
        }
        let m = match r.kind {
            SignalKind::Node => &self.data.y,
            SignalKind::Input => &self.data.u,
        };
        if r.index >= m.nrows() {
            return f64::NAN;
        }
        m[(r.index, self.time - r.lag)]
    }
}

pub type EvalFn = dyn Fn(&LagWindow) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum Evaluator {
    /// `prod_s x_s^{powers_s}`.
    Monomial {
        sources: Vec<SignalRef>,
        powers: Vec<u32>,
    },
    /// `x^h / (K^h + x^h)`.
    HillAct { source: SignalRef, h: f64, k: f64 },
    /// `1 / (1 + (x/K)^h)`.
    HillRep { source: SignalRef, h: f64, k: f64 },
    Expr(Expr),
    Function(Arc<EvalFn>),
}

impl fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evaluator::Monomial { sources, powers } => f
                .debug_struct("Monomial")
                .field("sources", sources)
                .field("powers", powers)
                .finish(),
            Evaluator::HillAct { source, h, k } => write!(f, "HillAct({source}, h={h}, K={k})"),
            Evaluator::HillRep { source, h, k } => write!(f, "HillRep({source}, h={h}, K={k})"),
            Evaluator::Expr(e) => write!(f, "Expr({e:?})"),
            Evaluator::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Evaluator {
    pub fn eval(&self, win: &LagWindow) -> f64 {
        match self {
            Evaluator::Monomial { sources, powers } => sources
                .iter()
                .zip(powers)
                .map(|(s, &p)| win.get(*s).powi(p as i32))
                .product(),
            Evaluator::HillAct { source, h, k } => {
                let xh = win.get(*source).powf(*h);
                xh / (k.powf(*h) + xh)
            }
            Evaluator::HillRep { source, h, k } => 1.0 / (1.0 + (win.get(*source) / k).powf(*h)),
            Evaluator::Expr(e) => e.eval(&|r| win.get(r)),
            Evaluator::Function(f) => f(win),
        }
    }

    fn signals(&self) -> Vec<SignalRef> {
        match self {
            Evaluator::Monomial { sources, .. } => sources.clone(),
            Evaluator::HillAct { source, .. } | Evaluator::HillRep { source, .. } => vec![*source],
            Evaluator::Expr(e) => e.signals(),
            Evaluator::Function(_) => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DictionaryEntry {
    pub label: String,
    pub group_id: usize,
    /// Largest lag the evaluator may read.
    pub lag_window: usize,
    pub evaluator: Evaluator,
}

impl DictionaryEntry {
    /// Entry whose window is the largest lag referenced by `evaluator`.
    pub fn new(label: impl Into<String>, group_id: usize, evaluator: Evaluator) -> Self {
        let lag_window = evaluator.signals().iter().map(|s| s.lag).max().unwrap_or(1);
        Self {
            label: label.into(),
            group_id,
            lag_window,
            evaluator,
        }
    }
}

/// On-disk form of a dictionary entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub label: String,
    pub kind: EntryKind,
    #[serde(default)]
    pub params: EntryParams,
    #[serde(default)]
    pub sources: Vec<SignalRef>,
    pub group_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Monomial,
    HillAct,
    HillRep,
    CustomExpr,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryParams {
    /// Monomial exponents, one per source (default all 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
}

const MAX_MONOMIAL_DEGREE: u32 = 3;

impl EntrySpec {
    pub fn compile(&self) -> Result<DictionaryEntry> {
        let bad = |msg: String| Error::InvalidArgument(format!("dictionary entry '{}': {msg}", self.label));
        let hill = |p: &EntryParams| -> Result<(SignalRef, f64, f64)> {
            let [source] = self.sources[..] else {
                return Err(bad("Hill terms take exactly one source".into()));
            };
            let h = p.h.ok_or_else(|| bad("missing parameter 'h'".into()))?;
            let k = p.k.ok_or_else(|| bad("missing parameter 'K'".into()))?;
            if !(h > 0.0 && h.is_finite() && k > 0.0 && k.is_finite()) {
                return Err(bad("Hill parameters must be positive".into()));
            }
            Ok((source, h, k))
        };
        let evaluator = match self.kind {
            EntryKind::Monomial => {
                if self.sources.is_empty() {
                    return Err(bad("monomial needs at least one source".into()));
                }
                let powers = self
                    .params
                    .powers
                    .clone()
                    .unwrap_or_else(|| vec![1; self.sources.len()]);
                if powers.len() != self.sources.len() {
                    return Err(bad(format!(
                        "{} powers for {} sources",
                        powers.len(),
                        self.sources.len()
                    )));
                }
                let degree: u32 = powers.iter().sum();
                if degree == 0 || degree > MAX_MONOMIAL_DEGREE {
                    return Err(bad(format!(
                        "monomial degree {degree} outside 1..={MAX_MONOMIAL_DEGREE}"
                    )));
                }
                Evaluator::Monomial {
                    sources: self.sources.clone(),
                    powers,
                }
            }
            EntryKind::HillAct => {
                let (source, h, k) = hill(&self.params)?;
                Evaluator::HillAct { source, h, k }
            }
            EntryKind::HillRep => {
                let (source, h, k) = hill(&self.params)?;
                Evaluator::HillRep { source, h, k }
            }
            EntryKind::CustomExpr => {
                let src = self
                    .params
                    .expr
                    .as_deref()
                    .ok_or_else(|| bad("missing parameter 'expr'".into()))?;
                Evaluator::Expr(Expr::parse(src)?)
            }
        };
        Ok(DictionaryEntry::new(self.label.clone(), self.group_id, evaluator))
    }
}

pub fn dictionary_from_json(text: &str) -> Result<Vec<DictionaryEntry>> {
    let specs: Vec<EntrySpec> = serde_json::from_str(text)?;
    specs.iter().map(EntrySpec::compile).collect()
}

pub fn read_dictionary(path: impl AsRef<Path>) -> Result<Vec<DictionaryEntry>> {
    dictionary_from_json(&std::fs::read_to_string(path)?)
}

/// Order of entries as laid out in the regression: by `group_id`, then by
/// position in `dict`. Group ids must be exactly `0..G`.
fn column_order(dict: &[DictionaryEntry]) -> Result<Vec<usize>> {
    let n_groups = dict.iter().map(|e| e.group_id + 1).max().unwrap_or(0);
    let mut order = Vec::with_capacity(dict.len());
    for g in 0..n_groups {
        let before = order.len();
        order.extend((0..dict.len()).filter(|&e| dict[e].group_id == g));
        if order.len() == before {
            return Err(Error::InvalidArgument(format!(
                "dictionary group ids must be contiguous from 0; group {g} is empty"
            )));
        }
    }
    Ok(order)
}

/// Linear regression for `node` extended with one column per dictionary
/// entry.
pub fn build_nonlinear_problem(
    data: &TimeSeries,
    node: usize,
    k: usize,
    dict: &[DictionaryEntry],
) -> Result<RegressionProblem> {
    let base = build_problem(data, node, k)?;
    if dict.is_empty() {
        return Ok(base);
    }
    for (e, entry) in dict.iter().enumerate() {
        if entry.lag_window == 0 || entry.lag_window > k {
            return Err(Error::InvalidArgument(format!(
                "dictionary entry {e} ('{}') has lag window {} but k = {k}",
                entry.label, entry.lag_window
            )));
        }
        for s in entry.evaluator.signals() {
            let limit = match s.kind {
                SignalKind::Node => data.p(),
                SignalKind::Input => data.m(),
            };
            if s.index >= limit {
                return Err(Error::InvalidArgument(format!(
                    "dictionary entry {e} ('{}') references {s}, which does not exist",
                    entry.label
                )));
            }
        }
    }
    let order = column_order(dict)?;
    let t_len = data.len();
    let n_rows = base.n_rows();
    let n_lin = base.n_cols();
    let mut phi = DMatrix::zeros(n_rows, n_lin + dict.len());
    phi.columns_mut(0, n_lin).copy_from(&base.phi);
    for (c, &e) in order.iter().enumerate() {
        let entry = &dict[e];
        for r in 0..n_rows {
            let win = LagWindow {
                data,
                time: t_len - 1 - r,
                window: entry.lag_window,
            };
            let v = entry.evaluator.eval(&win);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    entry: e,
                    label: entry.label.clone(),
                    row: r,
                    reason: format!("evaluated to {v}"),
                });
            }
            phi[(r, n_lin + c)] = v;
        }
    }
    let mut layout = base.layout.clone();
    let mut c = 0;
    while c < order.len() {
        let g = dict[order[c]].group_id;
        let size = order[c..].iter().take_while(|&&e| dict[e].group_id == g).count();
        layout.push(GroupSource::Dictionary(g), size);
        c += size;
    }
    RegressionProblem::new(node, base.y.clone(), phi, layout)
}

/// Labels of the dictionary columns in layout order.
pub fn column_labels(dict: &[DictionaryEntry]) -> Result<Vec<String>> {
    Ok(column_order(dict)?
        .into_iter()
        .map(|e| dict[e].label.clone())
        .collect())
}

/// Dictionary column values for an arbitrary window, used when simulating
/// planted nonlinear models.
pub fn evaluate_at(entry: &DictionaryEntry, data: &TimeSeries, time: usize) -> f64 {
    entry.evaluator.eval(&LagWindow {
        data,
        time,
        window: entry.lag_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> TimeSeries {
        let y = DMatrix::from_fn(2, 12, |i, t| (i as f64 + 1.0) * (t as f64 * 0.3).sin());
        let u = DMatrix::from_fn(1, 12, |_, t| (t as f64 * 0.7).cos());
        TimeSeries::new(y, u).unwrap()
    }

    #[test]
    fn empty_dictionary_is_linear_problem() {
        let data = series();
        assert_eq!(
            build_nonlinear_problem(&data, 1, 3, &[]).unwrap(),
            build_problem(&data, 1, 3).unwrap()
        );
    }

    #[test]
    fn square_column_matches_lag_one_column() {
        let data = series();
        let spec = r#"[{"label": "y1^2", "kind": "monomial", "params": {"powers": [2]},
                        "sources": ["y1[1]"], "group_id": 0}]"#;
        let dict = dictionary_from_json(spec).unwrap();
        let prob = build_nonlinear_problem(&data, 1, 3, &dict).unwrap();
        let lin = build_problem(&data, 1, 3).unwrap();
        // node 1's group is first for node index 1; lag 1 is its last column
        let lag1 = lin.layout.range(0).end - 1;
        let last = prob.n_cols() - 1;
        for r in 0..prob.n_rows() {
            assert_eq!(prob.phi[(r, last)], lin.phi[(r, lag1)].powi(2));
        }
        assert_eq!(prob.layout.groups().last().unwrap().source, GroupSource::Dictionary(0));
    }

    #[test]
    fn groups_follow_group_id() {
        let data = series();
        let spec = r#"[
            {"label": "b", "kind": "custom_expr", "params": {"expr": "y1[2] * u1[1]"}, "group_id": 1},
            {"label": "a", "kind": "hill_act", "params": {"h": 2, "K": 0.5}, "sources": ["u1[1]"], "group_id": 0},
            {"label": "c", "kind": "hill_rep", "params": {"h": 2, "K": 0.5}, "sources": ["u1[1]"], "group_id": 1}
        ]"#;
        let dict = dictionary_from_json(spec).unwrap();
        assert_eq!(column_labels(&dict).unwrap(), vec!["a", "b", "c"]);
        let prob = build_nonlinear_problem(&data, 0, 3, &dict).unwrap();
        let n = prob.layout.n_groups();
        assert_eq!(prob.layout.group(n - 2).size, 1);
        assert_eq!(prob.layout.group(n - 1).size, 2);
    }

    #[test]
    fn evaluation_errors_are_indexed() {
        let data = series();
        let dict = vec![DictionaryEntry::new(
            "bad",
            0,
            Evaluator::Expr(Expr::parse("1 / (y1[1] - y1[1])").unwrap()),
        )];
        match build_nonlinear_problem(&data, 0, 2, &dict) {
            Err(Error::Evaluation { entry: 0, row: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn window_must_fit_lag_order() {
        let data = series();
        let dict = dictionary_from_json(
            r#"[{"label": "x", "kind": "monomial", "sources": ["y1[4]"], "group_id": 0}]"#,
        )
        .unwrap();
        assert!(build_nonlinear_problem(&data, 0, 3, &dict).is_err());
        assert!(build_nonlinear_problem(&data, 0, 4, &dict).is_ok());
    }
}
