//! Per-iteration timing of the four filter stages over a query.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use topoloc::filter::{backward_step, forward_step, init_belief};
use topoloc::map::TopometricMap;
use topoloc::measurement::likelihood_vector;
use topoloc::motion::{build_transition_model, TransitionModel};
use topoloc::tasks::LocalizerParams;
use topoloc::traverse::Traverse;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl StageStats {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let pick = |q: f64| ms[((q * (ms.len() - 1) as f64).round() as usize).min(ms.len() - 1)];
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: ms[ms.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub nodes: usize,
    pub dim: usize,
    pub iterations: usize,
    pub motion: StageStats,
    pub measurement: StageStats,
    pub forward: StageStats,
    pub backward: StageStats,
    /// Mean of motion + measurement + forward + backward per iteration.
    pub total_mean_ms: f64,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "N = {}, d = {}, {} iterations (ms per iteration)\n{:<12} {:>9} {:>9} {:>9} {:>9}\n",
            self.nodes, self.dim, self.iterations, "stage", "mean", "p50", "p95", "max"
        );
        for (name, st) in [
            ("motion", &self.motion),
            ("measurement", &self.measurement),
            ("forward", &self.forward),
            ("backward", &self.backward),
        ] {
            s += &format!(
                "{:<12} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
                name, st.mean_ms, st.p50_ms, st.p95_ms, st.max_ms
            );
        }
        s += &format!("{:<12} {:>9.3}\n", "total", self.total_mean_ms);
        s
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64() * 1e3)
}

/// Times `repeats` full passes over `query` (one iteration per odometry step).
pub fn bench(map: &TopometricMap, query: &Traverse, params: &LocalizerParams, repeats: usize) -> CliResult<BenchReport> {
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if query.len() < 2 || repeats == 0 {
        return Err(CliError::Data("bench needs a query of at least two frames and repeats >= 1".into()));
    }
    if query.dim() != map.dim() {
        return Err(topoloc::Error::DimensionMismatch { expected: map.dim(), found: query.dim() }.into());
    }
    let meas = params.measurement.resolve(query.descriptor(0), map)?;
    let mut samples: [Vec<f64>; 4] = Default::default();
    for _ in 0..repeats {
        let p0 = init_belief(map.len(), params.effective_p0_off())?;
        let g0 = likelihood_vector(query.descriptor(0), map, &meas)?;
        let mut alpha: Vec<f64> = p0.to_message().iter().zip(&g0).map(|(p, g)| p * g).collect();
        let c0: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= c0);
        let mut steps: Vec<(TransitionModel, Vec<f64>, f64)> = Vec::with_capacity(query.len() - 1);
        for t in 1..query.len() {
            let odom = query
                .odom(t)
                .ok_or_else(|| CliError::Data(format!("query frame {t} has no odometry")))?;
            let (e, ms) = timed(|| build_transition_model(map, odom, &params.motion));
            samples[0].push(ms);
            let (g, ms) = timed(|| likelihood_vector(query.descriptor(t), map, &meas));
            samples[1].push(ms);
            let (e, g) = (e?, g?);
            let (fw, ms) = timed(|| forward_step(&alpha, &e, &g));
            samples[2].push(ms);
            let (next, c) = fw.map_err(|_| topoloc::Error::DegenerateMeasurement { step: Some(t) })?;
            alpha = next;
            steps.push((e, g, c));
        }
        let mut beta = vec![1.0; alpha.len()];
        for (e, g, c) in steps.iter().rev() {
            let (out, ms) = timed(|| backward_step(&beta, e, g, *c));
            samples[3].push(ms);
            beta = out?;
        }
    }
    let [motion, measurement, forward, backward] = samples.map(StageStats::from_samples);
    Ok(BenchReport {
        nodes: map.len(),
        dim: map.dim(),
        iterations: (query.len() - 1) * repeats,
        total_mean_ms: motion.mean_ms + measurement.mean_ms + forward.mean_ms + backward.mean_ms,
        motion,
        measurement,
        forward,
        backward,
    })
}
