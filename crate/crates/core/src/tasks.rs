//! Loop closure detection (smoothing over a whole query) and wakeup (global
//! localization from a uniform prior with a step budget).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::{decide, init_belief, smooth_pass, Belief, FilterTrace, Proposal};
use crate::map::TopometricMap;
use crate::measurement::{likelihood_vector, MeasurementConfig, MeasurementParams};
use crate::motion::{build_transition_model, MotionMode, MotionParams};
use crate::seeds::{stream, Purpose};
use crate::traverse::Traverse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    /// Prior mass on the off-map state.
    pub p0_off: f64,
    /// Neighborhood radius for the convergence score (m).
    pub radius_m: f64,
    pub tau_thres: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            p0_off: 0.1,
            radius_m: 4.0,
            tau_thres: 0.95,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p0_off) {
            return Err(invalid(format!("p0_off must lie in [0, 1), got {}", self.p0_off)));
        }
        if !(self.radius_m.is_finite() && self.radius_m >= 0.0) {
            return Err(invalid(format!("radius_m must be >= 0, got {}", self.radius_m)));
        }
        if !(0.0..=1.0).contains(&self.tau_thres) {
            return Err(invalid(format!("tau_thres must lie in [0, 1], got {}", self.tau_thres)));
        }
        Ok(())
    }
}

/// Everything the localizer needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerParams {
    pub motion: MotionParams,
    pub measurement: MeasurementConfig,
    pub filter: FilterParams,
}

impl LocalizerParams {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.measurement.validate()?;
        self.filter.validate()
    }

    /// Initial off-map mass; the no-off ablation has no off-map state at all.
    pub fn effective_p0_off(&self) -> f64 {
        match self.motion.mode {
            MotionMode::NoOff => 0.0,
            _ => self.filter.p0_off,
        }
    }
}

fn check_query(map: &TopometricMap, query: &Traverse) -> Result<()> {
    if query.is_empty() {
        return Err(invalid("query traverse is empty"));
    }
    if query.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: query.dim(),
        });
    }
    Ok(())
}

/// Runs the forward recursion over query frames `first..=last`.
fn forward(
    map: &TopometricMap,
    query: &Traverse,
    first: usize,
    last: usize,
    params: &LocalizerParams,
    meas: &MeasurementParams,
    mut visit: impl FnMut(usize, &FilterTrace) -> bool,
) -> Result<FilterTrace> {
    let p0 = init_belief(map.len(), params.effective_p0_off())?;
    let g0 = likelihood_vector(query.descriptor(first), map, meas)?;
    let mut trace = FilterTrace::start(&p0, g0).map_err(|e| at_step(e, first))?;
    if !visit(first, &trace) {
        return Ok(trace);
    }
    for t in first + 1..=last {
        let odom = query
            .odom(t)
            .ok_or_else(|| invalid(format!("query frame {t} has no odometry")))?;
        let e = build_transition_model(map, odom, &params.motion)?;
        let g = likelihood_vector(query.descriptor(t), map, meas)?;
        trace.step(e, g).map_err(|e| at_step(e, t))?;
        if !visit(t, &trace) {
            break;
        }
    }
    Ok(trace)
}

/// Reports degeneracies with the query frame index.
fn at_step(e: Error, t: usize) -> Error {
    match e {
        Error::DegenerateMeasurement { .. } => Error::DegenerateMeasurement { step: Some(t) },
        other => other,
    }
}

/// One query frame of a loop closure run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcdRecord {
    pub t: usize,
    pub proposal: Proposal,
    /// Within-map mode, recorded even when no proposal is made.
    pub x_hat: usize,
    pub tau: f64,
    /// Belief mass on the mode node.
    pub mode_mass: f64,
    pub off_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcdResult {
    pub records: Vec<LcdRecord>,
    pub lambda: f64,
    pub k: usize,
    pub log_evidence: f64,
}

#[derive(Debug, Clone)]
pub struct LcdRun {
    pub result: LcdResult,
    pub trace: FilterTrace,
    /// Beliefs the decisions were made on (smoothed, or filtered if forward only).
    pub beliefs: Vec<Belief>,
}

/// Loop closure detection over a whole query; `forward_only` decides on
/// filtered instead of smoothed beliefs.
pub fn run_lcd(map: &TopometricMap, query: &Traverse, params: &LocalizerParams, forward_only: bool) -> Result<LcdResult> {
    Ok(run_lcd_full(map, query, params, forward_only)?.result)
}

pub fn run_lcd_full(
    map: &TopometricMap,
    query: &Traverse,
    params: &LocalizerParams,
    forward_only: bool,
) -> Result<LcdRun> {
    params.validate()?;
    check_query(map, query)?;
    let meas = params.measurement.resolve(query.descriptor(0), map)?;
    let trace = forward(map, query, 0, query.len() - 1, params, &meas, |_, _| true)?;
    let beliefs = if forward_only {
        (0..trace.len()).map(|t| trace.filtered(t)).collect()
    } else {
        smooth_pass(&trace)
    };
    let records = beliefs
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let d = decide(b, map, params.filter.radius_m, params.filter.tau_thres);
            LcdRecord {
                t,
                proposal: d.proposal,
                x_hat: d.x_hat,
                tau: d.tau,
                mode_mass: b.within[d.x_hat],
                off_mass: b.off,
            }
        })
        .collect();
    let result = LcdResult {
        records,
        lambda: meas.lambda,
        k: meas.k,
        log_evidence: trace.log_evidence(),
    };
    Ok(LcdRun { result, trace, beliefs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WakeupParams {
    pub max_steps: usize,
    pub n_trials: usize,
    /// Keep filtering to `max_steps` after convergence and record every step,
    /// so thresholds can be swept offline.
    pub record_history: bool,
}

impl Default for WakeupParams {
    fn default() -> Self {
        Self {
            max_steps: 30,
            n_trials: 500,
            record_history: false,
        }
    }
}

/// Decision state after one wakeup step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WakeupStep {
    pub step: usize,
    pub frame: usize,
    pub x_hat: usize,
    pub tau: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeupResult {
    pub trial: usize,
    pub start: usize,
    pub converged: bool,
    pub steps_used: usize,
    pub proposal: Option<usize>,
    pub tau: f64,
    pub distance_traveled: f64,
    /// Query frame the decision (or the budget) ended on.
    pub end_frame: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<WakeupStep>,
}

/// Global localization from frame `start`: filter forward and stop at the
/// first τ > τ_thres or after `max_steps` motion + measurement updates.
pub fn run_wakeup(
    map: &TopometricMap,
    query: &Traverse,
    start: usize,
    max_steps: usize,
    params: &LocalizerParams,
    record_history: bool,
) -> Result<WakeupResult> {
    params.validate()?;
    check_query(map, query)?;
    if start + 1 >= query.len() {
        return Err(invalid(format!(
            "wakeup start {start} leaves no step in a query of {} frames",
            query.len()
        )));
    }
    if max_steps == 0 {
        return Err(invalid("max_steps must be >= 1"));
    }
    let last = (start + max_steps).min(query.len() - 1);
    let meas = params.measurement.resolve(query.descriptor(start), map)?;
    let mut history = Vec::new();
    let mut distance = 0.0;
    let mut outcome: Option<WakeupStep> = None;
    let mut final_step = None;
    forward(map, query, start, last, params, &meas, |t, trace| {
        if t == start {
            return true;
        }
        distance += query.odom(t).map_or(0.0, |o| o.mean.translation_norm());
        let b = trace.filtered(trace.len() - 1);
        let d = decide(&b, map, params.filter.radius_m, params.filter.tau_thres);
        let step = WakeupStep {
            step: t - start,
            frame: t,
            x_hat: d.x_hat,
            tau: d.tau,
            distance,
        };
        final_step = Some(step);
        if record_history {
            history.push(step);
        }
        if outcome.is_none() && matches!(d.proposal, Proposal::Localized(_)) {
            outcome = Some(step);
        }
        record_history || outcome.is_none()
    })?;
    let end = outcome.or(final_step).expect("at least one step");
    Ok(WakeupResult {
        trial: 0,
        start,
        converged: outcome.is_some(),
        steps_used: end.step,
        proposal: outcome.map(|s| s.x_hat),
        tau: end.tau,
        distance_traveled: end.distance,
        end_frame: end.frame,
        history,
    })
}

/// Start frames for `n_trials` wakeup trials, uniform over frames that leave
/// the full step budget (or at least one step on short queries).
pub fn wakeup_starts(seed: u64, n_trials: usize, query_len: usize, max_steps: usize) -> Result<Vec<usize>> {
    if query_len < 2 {
        return Err(invalid("wakeup needs a query of at least two frames"));
    }
    let hi = if query_len > max_steps + 1 {
        query_len - 1 - max_steps
    } else {
        query_len - 2
    };
    let mut rng = stream(seed, Purpose::WakeupStarts, 0);
    Ok((0..n_trials).map(|_| rng.random_range(0..=hi)).collect())
}

/// Runs `params.n_trials` seeded wakeup trials in parallel; results keep trial order.
pub fn run_wakeup_batch(
    map: &TopometricMap,
    query: &Traverse,
    seed: u64,
    wakeup: &WakeupParams,
    params: &LocalizerParams,
) -> Result<Vec<WakeupResult>> {
    if wakeup.n_trials == 0 {
        return Err(invalid("n_trials must be >= 1"));
    }
    let starts = wakeup_starts(seed, wakeup.n_trials, query.len(), wakeup.max_steps)?;
    run_wakeup_starts(map, query, &starts, wakeup, params)
}

/// Wakeup trials from explicit start frames (shared across ablations).
pub fn run_wakeup_starts(
    map: &TopometricMap,
    query: &Traverse,
    starts: &[usize],
    wakeup: &WakeupParams,
    params: &LocalizerParams,
) -> Result<Vec<WakeupResult>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(trial, &start)| {
            let mut r = run_wakeup(map, query, start, wakeup.max_steps, params, wakeup.record_history)?;
            r.trial = trial;
            Ok(r)
        })
        .collect()
}
