//! Objective terms on `(T, 21, 15)` clips. Every L1 term is a mean over all elements.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::motion::N_JOINTS;
use crate::tensor::{Graph, Scalar, Var, VertexMap};

/// Which (output, reference) pairs enter the smoothness term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothPairs {
    /// Each output against its own reference: both reconstructions and both cycles.
    #[default]
    Symmetric,
    /// Reconstructions plus the target cycle against both the source and the target.
    Printed,
}

/// Per-step loss values; `total` is the weighted sum evaluated in 64-bit.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_cyc: f64,
    pub l_root: f64,
    pub l_sm: f64,
    pub total: f64,
}

/// Weights of the non-reconstruction terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cyc: f64,
    pub root: f64,
    pub sm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cyc: 1.0,
            root: 1.0,
            sm: 1.0,
        }
    }
}

impl LossReport {
    pub fn new(l_rec: f64, l_cyc: f64, l_root: f64, l_sm: f64, w: &LossWeights) -> Self {
        LossReport {
            l_rec,
            l_cyc,
            l_root,
            l_sm,
            total: l_rec + w.cyc * l_cyc + w.root * l_root + w.sm * l_sm,
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("l_rec", self.l_rec),
            ("l_cyc", self.l_cyc),
            ("l_root", self.l_root),
            ("l_sm", self.l_sm),
            ("total", self.total),
        ]
    }

    /// Averages reports over a batch (total recomputed from the averaged terms).
    pub fn mean(reports: &[LossReport], w: &LossWeights) -> LossReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport::new(
            avg(|r| r.l_rec),
            avg(|r| r.l_cyc),
            avg(|r| r.l_root),
            avg(|r| r.l_sm),
            w,
        )
    }
}

/// Sum of the two reconstruction L1 terms.
pub fn loss_rec<F: Scalar>(
    g: &mut Graph<F>,
    rec_src: Var,
    src: Var,
    rec_tar: Var,
    tar: Var,
) -> Result<Var> {
    let a = g.l1(rec_src, src)?;
    let b = g.l1(rec_tar, tar)?;
    g.add(a, b)
}

/// Sum of the two cycle L1 terms.
pub fn loss_cyc<F: Scalar>(
    g: &mut Graph<F>,
    cyc_src: Var,
    src: Var,
    cyc_tar: Var,
    tar: Var,
) -> Result<Var> {
    loss_rec(g, cyc_src, src, cyc_tar, tar)
}

/// Root velocity track `(T, 1, 3)`: the root channels averaged over the joint rows.
pub fn root_velocity<F: Scalar>(g: &mut Graph<F>, m: Var) -> Result<Var> {
    let root = g.slice(m, 2, 12, 3)?;
    let avg = Arc::new(VertexMap::new(
        1,
        N_JOINTS,
        (0..N_JOINTS)
            .map(|i| (0, i, 1.0 / N_JOINTS as f64))
            .collect(),
    ));
    g.gather_weighted_sum(root, &avg)
}

/// L1 between root velocity tracks, mean over frames and the three channels.
pub fn loss_root<F: Scalar>(g: &mut Graph<F>, out: Var, src: Var) -> Result<Var> {
    let a = root_velocity(g, out)?;
    let b = root_velocity(g, src)?;
    g.l1(a, b)
}

/// Adjacent-frame differences `M[t+1] − M[t]`.
pub fn frame_differences<F: Scalar>(g: &mut Graph<F>, m: Var) -> Result<Var> {
    let t = g.shape(m)[0];
    let next = g.slice(m, 0, 1, t - 1)?;
    let prev = g.slice(m, 0, 0, t - 1)?;
    g.sub(next, prev)
}

pub fn loss_smooth_pair<F: Scalar>(g: &mut Graph<F>, out: Var, reference: Var) -> Result<Var> {
    let a = frame_differences(g, out)?;
    let b = frame_differences(g, reference)?;
    g.l1(a, b)
}

/// Sum of smoothness terms over `(output, reference)` pairs.
pub fn loss_smooth<F: Scalar>(g: &mut Graph<F>, pairs: &[(Var, Var)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(o, r) in pairs {
        let l = loss_smooth_pair(g, o, r)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one smoothness pair"))
}
