//! Ground-truth association and precision/recall bookkeeping.
//!
//! A proposal is correct when the proposed node's pose lies within the
//! translation and heading tolerances of the query frame's pose. Every frame
//! (or wakeup trial) lands in exactly one of TP, FP, FN, TN at each threshold;
//! a proposal on an off-map frame is always a false positive.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::WorldPose;
use crate::map::TopometricMap;
use crate::tasks::{LcdRecord, WakeupResult};
use crate::traverse::Traverse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerance {
    pub dist_m: f64,
    pub heading_deg: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            dist_m: 5.0,
            heading_deg: 30.0,
        }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<()> {
        if !(self.dist_m >= 0.0 && (0.0..=180.0).contains(&self.heading_deg)) {
            return Err(invalid(format!("bad tolerance {self:?}")));
        }
        Ok(())
    }

    pub fn accepts(&self, a: &WorldPose, b: &WorldPose) -> bool {
        a.distance(b) <= self.dist_m && a.heading_diff(b).abs().to_degrees() <= self.heading_deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub within_map: bool,
    /// Nearest node (by translation) inside both tolerances.
    pub true_node: Option<usize>,
}

/// Per-frame labels plus the poses needed to judge proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tolerance: Tolerance,
    pub labels: Vec<GroundTruthLabel>,
    frame_poses: Vec<WorldPose>,
    node_poses: Vec<WorldPose>,
}

pub fn label_ground_truth(query: &Traverse, map: &TopometricMap, tolerance: Tolerance) -> Result<GroundTruth> {
    tolerance.validate()?;
    let frame_poses = query.gt_poses().ok_or(Error::MissingGroundTruth("query"))?;
    let node_poses = map.gt_poses().ok_or(Error::MissingGroundTruth("map"))?.to_vec();
    let labels = frame_poses
        .iter()
        .map(|q| {
            let mut best: Option<(usize, f64)> = None;
            for (i, n) in node_poses.iter().enumerate() {
                if tolerance.accepts(q, n) {
                    let d = q.distance(n);
                    if best.is_none_or(|(_, b)| d < b) {
                        best = Some((i, d));
                    }
                }
            }
            GroundTruthLabel {
                within_map: best.is_some(),
                true_node: best.map(|(i, _)| i),
            }
        })
        .collect();
    Ok(GroundTruth {
        tolerance,
        labels,
        frame_poses,
        node_poses,
    })
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Whether proposing `node` at frame `t` is a correct localization.
    pub fn is_correct(&self, t: usize, node: usize) -> bool {
        match (self.frame_poses.get(t), self.node_poses.get(node)) {
            (Some(q), Some(n)) => self.tolerance.accepts(q, n),
            _ => false,
        }
    }

    pub fn off_map_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| !l.within_map).count() as f64 / self.labels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// TP / (TP + FP), or 1 when nothing is proposed.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, 1.0)
    }

    /// TP / (TP + FN), or 0 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, 0.0)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, proposed: bool, correct: bool, within_map: bool) {
        match (proposed, correct && within_map, within_map) {
            (true, true, _) => self.tp += 1,
            (true, false, _) => self.fp += 1,
            (false, _, true) => self.fn_ += 1,
            (false, _, false) => self.tn += 1,
        }
    }
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(flatten)]
    pub counts: Confusion,
    /// Mean distance traveled by proposing trials (wakeup curves only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_distance: Option<f64>,
}

impl PrPoint {
    fn new(threshold: f64, counts: Confusion) -> Self {
        Self {
            threshold,
            precision: counts.precision(),
            recall: counts.recall(),
            counts,
            mean_distance: None,
        }
    }
}

/// Operating points in strictly increasing threshold order. At threshold θ a
/// frame is proposed when τ ≥ θ, so every observed τ is a reachable point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// One decision opportunity for the LCD sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub tau: f64,
    pub correct: bool,
    pub within_map: bool,
}

fn unique_sorted(mut taus: Vec<f64>) -> Vec<f64> {
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

/// Threshold sweep over all observed scores.
pub fn pr_sweep(items: &[Scored]) -> PrCurve {
    let mut order: Vec<&Scored> = items.iter().collect();
    order.sort_by(|a, b| b.tau.total_cmp(&a.tau));
    // start with nothing proposed, then admit frames from the highest τ down
    let mut counts = Confusion::default();
    for s in items {
        counts.add(false, s.correct, s.within_map);
    }
    let mut points = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let tau = order[k].tau;
        while k < order.len() && order[k].tau == tau {
            let s = order[k];
            if s.within_map {
                counts.fn_ -= 1;
            } else {
                counts.tn -= 1;
            }
            counts.add(true, s.correct, s.within_map);
            k += 1;
        }
        points.push(PrPoint::new(tau, counts));
    }
    points.reverse();
    PrCurve { points }
}

/// Counts at a fixed threshold with the strict τ > θ rule used online.
pub fn confusion_at(items: &[Scored], tau_thres: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in items {
        c.add(s.tau > tau_thres, s.correct, s.within_map);
    }
    c
}

/// Scoring inputs for an LCD run; the proposal judged is the recorded mode.
pub fn lcd_items(records: &[LcdRecord], gt: &GroundTruth) -> Result<Vec<Scored>> {
    if records.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            found: records.len(),
        });
    }
    Ok(records
        .iter()
        .map(|r| Scored {
            tau: r.tau,
            correct: gt.is_correct(r.t, r.x_hat),
            within_map: gt.labels[r.t].within_map,
        })
        .collect())
}

pub fn score_lcd(records: &[LcdRecord], gt: &GroundTruth) -> Result<PrCurve> {
    Ok(pr_sweep(&lcd_items(records, gt)?))
}

/// Largest recall among points with precision ≥ `p`; 0 when none qualifies.
pub fn recall_at_precision(curve: &PrCurve, p: f64) -> f64 {
    best_at_precision(curve, p).map_or(0.0, |pt| pt.recall)
}

/// Highest-recall point with precision ≥ `p` (lowest threshold among ties).
pub fn best_at_precision(curve: &PrCurve, p: f64) -> Option<&PrPoint> {
    curve
        .points
        .iter()
        .filter(|pt| pt.precision >= p)
        .fold(None, |best: Option<&PrPoint>, pt| match best {
            Some(b) if b.recall >= pt.recall => Some(b),
            _ => Some(pt),
        })
}

struct TrialSteps {
    prefix_max: Vec<f64>,
    correct: Vec<bool>,
    distance: Vec<f64>,
    end_within: bool,
}

fn trial_steps(r: &WakeupResult, gt: &GroundTruth) -> Result<TrialSteps> {
    let label = |f: usize| {
        gt.labels
            .get(f)
            .map(|l| l.within_map)
            .ok_or_else(|| invalid(format!("trial {} refers to frame {f} beyond the labels", r.trial)))
    };
    let mut s = TrialSteps {
        prefix_max: Vec::new(),
        correct: Vec::new(),
        distance: Vec::new(),
        end_within: label(r.end_frame)?,
    };
    if r.history.is_empty() {
        // without a history only the run's own decision is known
        if let Some(node) = r.proposal {
            s.prefix_max.push(r.tau);
            s.correct.push(gt.is_correct(r.end_frame, node));
            s.distance.push(r.distance_traveled);
        }
        return Ok(s);
    }
    let mut run = f64::NEG_INFINITY;
    for h in &r.history {
        if h.tau > run {
            run = h.tau;
        }
        s.prefix_max.push(run);
        s.correct.push(gt.is_correct(h.frame, h.x_hat));
        s.distance.push(h.distance);
    }
    s.end_within = label(r.history.last().expect("nonempty").frame)?;
    Ok(s)
}

/// Wakeup precision/recall: at threshold θ a trial stops at its first step
/// with τ ≥ θ; trials that never stop are FN (TN if they end off the map).
/// Exact for every θ when trials carry a full history; otherwise only the
/// run's own decisions are known and lower thresholds add no proposals.
pub fn score_wakeup(results: &[WakeupResult], gt: &GroundTruth) -> Result<PrCurve> {
    if results.is_empty() {
        return Err(invalid("no wakeup trials to score"));
    }
    let trials = results.iter().map(|r| trial_steps(r, gt)).collect::<Result<Vec<_>>>()?;
    let thresholds = unique_sorted(trials.iter().flat_map(|s| s.prefix_max.iter().copied()).collect());
    let points = thresholds
        .into_iter()
        .map(|th| {
            let mut c = Confusion::default();
            let mut dist = 0.0;
            for s in &trials {
                let k = s.prefix_max.partition_point(|&m| m < th);
                if k < s.prefix_max.len() {
                    c.add(true, s.correct[k], true);
                    dist += s.distance[k];
                } else {
                    c.add(false, false, s.end_within);
                }
            }
            let proposals = c.tp + c.fp;
            let mut pt = PrPoint::new(th, c);
            pt.mean_distance = (proposals > 0).then(|| dist / proposals as f64);
            pt
        })
        .collect();
    Ok(PrCurve { points })
}

/// Mean distance traveled by proposing trials at the highest-recall point with
/// precision ≥ `p`.
pub fn mean_distance_at(curve: &PrCurve, p: f64) -> Option<f64> {
    best_at_precision(curve, p).and_then(|pt| pt.mean_distance)
}

/// Aggregate figures for one scored run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub items: usize,
    pub within_map: usize,
    pub r_at_99p: f64,
    pub r_at_100p: f64,
    /// Counts at the configured threshold.
    pub operating: Confusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_distance_at_99p: Option<f64>,
}

pub fn summarize_lcd(records: &[LcdRecord], gt: &GroundTruth, tau_thres: f64) -> Result<Summary> {
    let items = lcd_items(records, gt)?;
    let curve = pr_sweep(&items);
    Ok(Summary {
        items: items.len(),
        within_map: items.iter().filter(|s| s.within_map).count(),
        r_at_99p: recall_at_precision(&curve, 0.99),
        r_at_100p: recall_at_precision(&curve, 1.0),
        operating: confusion_at(&items, tau_thres),
        mean_distance_at_99p: None,
    })
}

pub fn summarize_wakeup(results: &[WakeupResult], gt: &GroundTruth) -> Result<Summary> {
    let curve = score_wakeup(results, gt)?;
    let mut operating = Confusion::default();
    let mut within = 0;
    for r in results {
        let end_within = gt.labels.get(r.end_frame).is_some_and(|l| l.within_map);
        within += usize::from(end_within);
        let correct = r.proposal.is_some_and(|n| gt.is_correct(r.end_frame, n));
        operating.add(r.converged, correct, if r.converged { true } else { end_within });
    }
    Ok(Summary {
        items: results.len(),
        within_map: within,
        r_at_99p: recall_at_precision(&curve, 0.99),
        r_at_100p: recall_at_precision(&curve, 1.0),
        operating,
        mean_distance_at_99p: mean_distance_at(&curve, 0.99),
    })
}
