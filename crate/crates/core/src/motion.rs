//! Odometry-conditioned transition structure over map nodes plus the off-map
//! state.
//!
//! For every node `i` the query odometry is scored against the local mapped
//! trajectory around each successor `j` (minimum Mahalanobis distance to the
//! segment between neighbouring midpoints). Within-map probabilities are a
//! softmax of `-d²/2`; the leftover mass `χ²₃(min d²)` moves to the off-map
//! state. The off-map row keeps `off_self` and spreads the rest uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{chi2_cdf_3_unchecked, min_mahalanobis_on_segment};
use crate::map::TopometricMap;
use crate::traverse::OdometryStep;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    /// Odometry-conditioned transitions with the off-map state.
    #[default]
    Full,
    /// Odometry-conditioned transitions, off-map transitions disabled.
    NoOff,
    /// Uniform transitions over outgoing edges, constant off-map leak.
    NoOdom,
}

impl std::str::FromStr for MotionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_off" => Ok(Self::NoOff),
            "no_odom" => Ok(Self::NoOdom),
            other => Err(invalid(format!(
                "unknown motion mode {other:?} (expected full, no_off or no_odom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionParams {
    /// Off-map self-transition probability E_{O→O}.
    pub off_self: f64,
    pub mode: MotionMode,
    /// Constant within-to-off probability used by `no_odom`.
    pub no_odom_to_off: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            off_self: 0.9,
            mode: MotionMode::Full,
            no_odom_to_off: 0.01,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.off_self) {
            return Err(invalid(format!("off_self must lie in [0, 1), got {}", self.off_self)));
        }
        if !(0.0..=1.0).contains(&self.no_odom_to_off) {
            return Err(invalid(format!(
                "no_odom_to_off must lie in [0, 1], got {}",
                self.no_odom_to_off
            )));
        }
        Ok(())
    }
}

/// Sparse (N+1)×(N+1) row-stochastic transition matrix for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    n: usize,
    row_start: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
    to_off: Vec<f64>,
    off_self: f64,
    off_out: f64,
}

const ROW_TOL: f64 = 1e-9;

impl TransitionModel {
    /// Assembles a model from explicit rows, checking stochasticity.
    pub fn from_rows(within: Vec<Vec<(usize, f64)>>, to_off: Vec<f64>, off_self: f64) -> Result<Self> {
        let n = within.len();
        if n == 0 || to_off.len() != n {
            return Err(invalid("transition model needs one to_off entry per within-map row"));
        }
        if !(0.0..=1.0).contains(&off_self) {
            return Err(invalid(format!("off_self must lie in [0, 1], got {off_self}")));
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        row_start.push(0);
        for (i, row) in within.iter().enumerate() {
            let mut sum = to_off[i];
            if !(0.0..=1.0).contains(&to_off[i]) {
                return Err(invalid(format!("to_off({i}) = {} outside [0, 1]", to_off[i])));
            }
            for &(j, p) in row {
                if j >= n {
                    return Err(invalid(format!("row {i} targets node {j} outside the map")));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!("E[{i}][{j}] = {p} outside [0, 1]")));
                }
                targets.push(j as u32);
                probs.push(p);
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("row {i} sums to {sum}")));
            }
            row_start.push(targets.len());
        }
        Ok(Self {
            n,
            row_start,
            targets,
            probs,
            to_off,
            off_self,
            off_out: (1.0 - off_self) / n as f64,
        })
    }

    /// Number of within-map states.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Outgoing within-map transitions of row `i` as parallel slices.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_start[i]..self.row_start[i + 1];
        (&self.targets[r.clone()], &self.probs[r])
    }

    pub fn within(&self, i: usize) -> Vec<(usize, f64)> {
        let (t, p) = self.row(i);
        t.iter().map(|&j| j as usize).zip(p.iter().copied()).collect()
    }

    #[inline]
    pub fn to_off(&self, i: usize) -> f64 {
        self.to_off[i]
    }

    #[inline]
    pub fn off_self(&self) -> f64 {
        self.off_self
    }

    /// Probability of leaving the off-map state for any particular node.
    #[inline]
    pub fn off_out(&self) -> f64 {
        self.off_out
    }

    /// Stored within-map entries.
    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    /// Largest deviation of any row sum (including the off-map row) from 1.
    pub fn max_row_error(&self) -> f64 {
        let mut worst = (self.off_self + self.off_out * self.n as f64 - 1.0).abs();
        for i in 0..self.n {
            let s: f64 = self.row(i).1.iter().sum::<f64>() + self.to_off[i];
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }

    /// Dense matrix with the off-map state last. Meant for small models.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut m = vec![vec![0.0; n + 1]; n + 1];
        for (i, row) in m.iter_mut().enumerate().take(n) {
            let (t, p) = self.row(i);
            for (&j, &v) in t.iter().zip(p) {
                row[j as usize] += v;
            }
            row[n] = self.to_off[i];
        }
        for j in 0..n {
            m[n][j] = self.off_out;
        }
        m[n][n] = self.off_self;
        m
    }
}

/// Squared Mahalanobis distance between the odometry and every outgoing
/// segment of node `i`.
pub fn edge_distances(map: &TopometricMap, i: usize, odom: &OdometryStep) -> Result<Vec<(usize, f64)>> {
    if i >= map.len() {
        return Err(invalid(format!("node {i} outside map of {} nodes", map.len())));
    }
    Ok(map
        .successors(i)
        .map(|j| {
            let (lo, hi) = map.segment_unchecked(i, j);
            (j, min_mahalanobis_on_segment(lo, hi, &odom.mean, &odom.cov).d2)
        })
        .collect())
}

/// E_{iO} = χ²₃(min_j d²_ij).
pub fn off_map_transition(d2s: &[f64]) -> Result<f64> {
    let min = d2s.iter().copied().fold(f64::INFINITY, f64::min);
    if d2s.is_empty() {
        return Err(invalid("off-map transition needs at least one edge distance"));
    }
    if min.is_nan() || min < 0.0 {
        return Err(invalid(format!("invalid squared distance {min}")));
    }
    Ok(chi2_cdf_3_unchecked(min))
}

/// Softmax of -d²/2 over the row, scaled by `1 - p_off`.
pub fn transition_row(d2s: &[(usize, f64)], p_off: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = d2s.to_vec();
    let mut probs: Vec<f64> = d2s.iter().map(|&(_, d)| d).collect();
    softmax_neg_half_in_place(&mut probs, 1.0 - p_off);
    for (o, p) in out.iter_mut().zip(probs) {
        o.1 = p;
    }
    out
}

#[inline]
fn softmax_neg_half_in_place(d2s: &mut [f64], mass: f64) {
    let min = d2s.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for v in d2s.iter_mut() {
        *v = (-0.5 * (*v - min)).exp();
        total += *v;
    }
    let scale = mass / total;
    for v in d2s.iter_mut() {
        *v *= scale;
    }
}

/// Builds E_t for one odometry step.
pub fn build_transition_model(
    map: &TopometricMap,
    odom: &OdometryStep,
    params: &MotionParams,
) -> Result<TransitionModel> {
    params.validate()?;
    let n = map.len();
    let max_row = map.window();
    let mut row_start = Vec::with_capacity(n + 1);
    let mut targets = Vec::with_capacity(n * (max_row - 1));
    let mut probs = Vec::with_capacity(n * (max_row - 1));
    let mut to_off = Vec::with_capacity(n);
    row_start.push(0);
    let mut buf = Vec::with_capacity(max_row);
    for i in 0..n {
        let succ = map.successors(i);
        buf.clear();
        let p_off = match params.mode {
            MotionMode::NoOdom => {
                let u = (1.0 - params.no_odom_to_off) / succ.len() as f64;
                buf.extend(succ.clone().map(|_| u));
                params.no_odom_to_off
            }
            MotionMode::Full | MotionMode::NoOff => {
                let mut min = f64::INFINITY;
                for j in succ.clone() {
                    let (lo, hi) = map.segment_unchecked(i, j);
                    let d2 = min_mahalanobis_on_segment(lo, hi, &odom.mean, &odom.cov).d2;
                    min = min.min(d2);
                    buf.push(d2);
                }
                let p_off = if params.mode == MotionMode::Full {
                    chi2_cdf_3_unchecked(min)
                } else {
                    0.0
                };
                softmax_neg_half_in_place(&mut buf, 1.0 - p_off);
                p_off
            }
        };
        targets.extend(succ.map(|j| j as u32));
        probs.extend_from_slice(&buf);
        to_off.push(p_off);
        row_start.push(targets.len());
    }
    Ok(TransitionModel {
        n,
        row_start,
        targets,
        probs,
        to_off,
        off_self: params.off_self,
        off_out: (1.0 - params.off_self) / n as f64,
    })
}
