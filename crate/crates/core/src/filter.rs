//! Scaled forward filtering, backward smoothing and convergence detection.
//!
//! Messages are vectors of length N + 1 with the off-map state last. The
//! forward messages are kept normalized (α̂_t sums to one) and the scale
//! c_t = Σ α'_t is stored, so Π c_t is the evidence of the whole sequence.
//! The backward pass divides by the same c_t, which makes α̂_t ∘ β̂_t the
//! smoothed marginal directly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instrument;
use crate::map::TopometricMap;
use crate::motion::TransitionModel;

/// Probability vector over the map nodes and the off-map state.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub within: Vec<f64>,
    pub off: f64,
}

impl Belief {
    /// Splits a length-(N+1) message.
    pub fn from_message(msg: &[f64]) -> Self {
        let (within, off) = msg.split_at(msg.len() - 1);
        Self {
            within: within.to_vec(),
            off: off[0],
        }
    }

    pub fn to_message(&self) -> Vec<f64> {
        let mut m = self.within.clone();
        m.push(self.off);
        m
    }

    pub fn n(&self) -> usize {
        self.within.len()
    }

    pub fn total(&self) -> f64 {
        self.within.iter().sum::<f64>() + self.off
    }
}

/// Uniform belief over map nodes with `p0_off` on the off-map state.
pub fn init_belief(n: usize, p0_off: f64) -> Result<Belief> {
    if n == 0 {
        return Err(invalid("belief needs at least one map node"));
    }
    if !(0.0..1.0).contains(&p0_off) {
        return Err(invalid(format!("p0_off must lie in [0, 1), got {p0_off}")));
    }
    Ok(Belief {
        within: vec![(1.0 - p0_off) / n as f64; n],
        off: p0_off,
    })
}

/// out = Eᵀ · alpha using the banded rows.
fn predict_into(alpha: &[f64], e: &TransitionModel, out: &mut [f64]) {
    let n = e.n();
    let a_off = alpha[n];
    let spread = a_off * e.off_out();
    out[..n].fill(spread);
    let mut to_off = a_off * e.off_self();
    for (i, &a) in alpha[..n].iter().enumerate() {
        let (targets, probs) = e.row(i);
        for (&j, &p) in targets.iter().zip(probs) {
            out[j as usize] += a * p;
        }
        to_off += a * e.to_off(i);
        instrument::add(targets.len() + 1);
    }
    instrument::add(n + 1);
    out[n] = to_off;
}

fn check_dims(n1: usize, e: &TransitionModel, g: &[f64]) -> Result<()> {
    if n1 != e.n() + 1 || g.len() != n1 {
        return Err(invalid(format!(
            "message of length {n1}, transition over {} states, likelihood of length {}",
            e.n() + 1,
            g.len()
        )));
    }
    Ok(())
}

/// Multiplies by `g` and normalizes in place; returns the scale.
fn absorb(msg: &mut [f64], g: &[f64]) -> Option<f64> {
    let mut c = 0.0;
    for (m, gi) in msg.iter_mut().zip(g) {
        *m *= gi;
        c += *m;
    }
    if !(c > 0.0 && c.is_finite()) {
        return None;
    }
    let inv = 1.0 / c;
    msg.iter_mut().for_each(|m| *m *= inv);
    Some(c)
}

/// One scaled forward step: α'_i = g_i Σ_j α̂_{t-1,j} E_ji, c = Σ α', α̂ = α'/c.
pub fn forward_step(alpha_prev: &[f64], e: &TransitionModel, g: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dims(alpha_prev.len(), e, g)?;
    let mut out = vec![0.0; alpha_prev.len()];
    predict_into(alpha_prev, e, &mut out);
    let c = absorb(&mut out, g).ok_or(Error::DegenerateMeasurement { step: None })?;
    Ok((out, c))
}

/// One scaled backward step: β̂_{t-1,i} = Σ_j E_ij g_j β̂_{t,j} / c_t.
pub fn backward_step(beta: &[f64], e: &TransitionModel, g: &[f64], c: f64) -> Result<Vec<f64>> {
    check_dims(beta.len(), e, g)?;
    let mut out = vec![0.0; beta.len()];
    backward_into(beta, e, g, c, &mut out, &mut Vec::new());
    Ok(out)
}

fn backward_into(beta: &[f64], e: &TransitionModel, g: &[f64], c: f64, out: &mut [f64], gb: &mut Vec<f64>) {
    let n = e.n();
    gb.clear();
    gb.extend(beta.iter().zip(g).map(|(b, gi)| b * gi));
    let inv = 1.0 / c;
    let off_gb = gb[n];
    let spread: f64 = gb[..n].iter().sum::<f64>() * e.off_out();
    for (i, o) in out[..n].iter_mut().enumerate() {
        let (targets, probs) = e.row(i);
        let mut acc = e.to_off(i) * off_gb;
        for (&j, &p) in targets.iter().zip(probs) {
            acc += p * gb[j as usize];
        }
        *o = acc * inv;
        instrument::add(targets.len() + 1);
    }
    instrument::add(n + 1);
    out[n] = (e.off_self() * off_gb + spread) * inv;
}

/// Forward pass record: scaled messages, scales and the models that produced
/// them. `transitions[t - 1]` drives the step into time t.
#[derive(Debug, Clone)]
pub struct FilterTrace {
    alphas: Vec<Vec<f64>>,
    scales: Vec<f64>,
    transitions: Vec<TransitionModel>,
    likelihoods: Vec<Vec<f64>>,
}

impl FilterTrace {
    /// α̂_0 = normalize(p0 ∘ g0).
    pub fn start(p0: &Belief, g0: Vec<f64>) -> Result<Self> {
        if g0.len() != p0.n() + 1 {
            return Err(invalid(format!(
                "likelihood of length {} for a belief over {} states",
                g0.len(),
                p0.n() + 1
            )));
        }
        let mut alpha = p0.to_message();
        let c = absorb(&mut alpha, &g0).ok_or(Error::DegenerateMeasurement { step: Some(0) })?;
        Ok(Self {
            alphas: vec![alpha],
            scales: vec![c],
            transitions: Vec::new(),
            likelihoods: vec![g0],
        })
    }

    /// Advances one step with the transition into the new time and its likelihood.
    pub fn step(&mut self, e: TransitionModel, g: Vec<f64>) -> Result<()> {
        let t = self.alphas.len();
        let prev = self.alphas.last().expect("trace is never empty");
        check_dims(prev.len(), &e, &g)?;
        let mut next = vec![0.0; prev.len()];
        predict_into(prev, &e, &mut next);
        let c = absorb(&mut next, &g).ok_or(Error::DegenerateMeasurement { step: Some(t) })?;
        self.alphas.push(next);
        self.scales.push(c);
        self.transitions.push(e);
        self.likelihoods.push(g);
        Ok(())
    }

    /// Number of time steps recorded (T + 1).
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alpha(&self, t: usize) -> &[f64] {
        &self.alphas[t]
    }

    /// Filtered belief p_t, equal to α̂_t.
    pub fn filtered(&self, t: usize) -> Belief {
        Belief::from_message(&self.alphas[t])
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// ln Π c_t.
    pub fn log_evidence(&self) -> f64 {
        self.scales.iter().map(|c| c.ln()).sum()
    }

    pub fn transitions(&self) -> &[TransitionModel] {
        &self.transitions
    }

    pub fn likelihoods(&self) -> &[Vec<f64>] {
        &self.likelihoods
    }
}

/// Backward recursion over a finished trace; returns p^s_t for every t.
pub fn smooth_pass(trace: &FilterTrace) -> Vec<Belief> {
    let steps = trace.len();
    let n1 = trace.alphas[0].len();
    let mut beta = vec![1.0; n1];
    let mut next = vec![0.0; n1];
    let mut gb = Vec::with_capacity(n1);
    let mut out = vec![None; steps];
    for t in (0..steps).rev() {
        out[t] = Some(smoothed_from(&trace.alphas[t], &beta));
        if t > 0 {
            backward_into(
                &beta,
                &trace.transitions[t - 1],
                &trace.likelihoods[t],
                trace.scales[t],
                &mut next,
                &mut gb,
            );
            std::mem::swap(&mut beta, &mut next);
        }
    }
    out.into_iter().map(|b| b.expect("filled")).collect()
}

fn smoothed_from(alpha: &[f64], beta: &[f64]) -> Belief {
    let mut m: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| a * b).collect();
    let total: f64 = m.iter().sum();
    if total > 0.0 {
        m.iter_mut().for_each(|v| *v /= total);
    }
    Belief::from_message(&m)
}

/// Mode of the within-map belief (lowest index on ties) and the mass within
/// `radius_nodes` of it. Off-map mass never counts toward τ.
pub fn convergence_score_nodes(belief: &Belief, radius_nodes: usize) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in belief.within.iter().enumerate() {
        if p > belief.within[best] {
            best = i;
        }
    }
    let lo = best.saturating_sub(radius_nodes);
    let hi = (best + radius_nodes + 1).min(belief.n());
    let tau: f64 = belief.within[lo..hi].iter().sum();
    (best, tau.clamp(0.0, 1.0))
}

/// Neighborhood radius in nodes for a metric radius.
pub fn radius_in_nodes(map: &TopometricMap, radius_m: f64) -> usize {
    (radius_m / map.node_spacing()).round().max(0.0) as usize
}

/// τ = belief mass within `radius_m` (converted to nodes) of the within-map mode.
pub fn convergence_score(belief: &Belief, map: &TopometricMap, radius_m: f64) -> (usize, f64) {
    convergence_score_nodes(belief, radius_in_nodes(map, radius_m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    Localized(usize),
    OffMapOrUnsure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub proposal: Proposal,
    pub x_hat: usize,
    pub tau: f64,
}

/// Proposes the mode when τ strictly exceeds `tau_thres`.
pub fn decide_nodes(belief: &Belief, radius_nodes: usize, tau_thres: f64) -> Decision {
    let (x_hat, tau) = convergence_score_nodes(belief, radius_nodes);
    let proposal = if tau > tau_thres {
        Proposal::Localized(x_hat)
    } else {
        Proposal::OffMapOrUnsure
    };
    Decision { proposal, x_hat, tau }
}

pub fn decide(belief: &Belief, map: &TopometricMap, radius_m: f64, tau_thres: f64) -> Decision {
    decide_nodes(belief, radius_in_nodes(map, radius_m), tau_thres)
}
