//! Appearance likelihoods: an exponential kernel over descriptor distance for
//! map nodes, and the k-th best of those for the off-map state.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::map::TopometricMap;

pub const DEFAULT_RHO: f64 = std::f64::consts::E * std::f64::consts::E;

/// Configured measurement knobs; λ is either fixed here or calibrated from the
/// first query descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    /// Ratio between the best and the average first-frame likelihood.
    /// Defaults to e²: at e a noiseless 1000-node map needs more than ten
    /// frames to reach τ > 0.95.
    pub rho: f64,
    pub k_frac: f64,
    pub k_min: usize,
    /// Fixed kernel rate; skips calibration when set.
    pub lambda: Option<f64>,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            k_frac: 0.02,
            k_min: 10,
            lambda: None,
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 1.0) {
            return Err(invalid(format!("rho must be > 1, got {}", self.rho)));
        }
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return Err(invalid(format!("k_frac must lie in (0, 1], got {}", self.k_frac)));
        }
        if self.k_min < 2 {
            return Err(invalid(format!("k_min must be >= 2, got {}", self.k_min)));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(invalid(format!("lambda must be > 0, got {l}")));
            }
        }
        Ok(())
    }

    /// Rank of the off-map likelihood among N map nodes, capped at N.
    pub fn off_map_rank(&self, n: usize) -> usize {
        let k = (self.k_frac * n as f64).ceil() as usize;
        k.max(self.k_min).min(n).max(1)
    }

    /// Fixes λ (calibrating on `z0` unless overridden) and k for one query.
    pub fn resolve(&self, z0: &[f32], map: &TopometricMap) -> Result<MeasurementParams> {
        self.validate()?;
        let lambda = match self.lambda {
            Some(l) => l,
            None => calibrate_lambda(z0, map, self.rho)?,
        };
        Ok(MeasurementParams {
            lambda,
            k: self.off_map_rank(map.len()),
        })
    }
}

/// Resolved parameters for one query sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementParams {
    pub lambda: f64,
    pub k: usize,
}

/// Euclidean distance from `z` to every map descriptor.
pub fn descriptor_distances(z: &[f32], map: &TopometricMap) -> Result<Vec<f64>> {
    let mut out = vec![0.0; map.len()];
    descriptor_distances_into(z, map, &mut out)?;
    Ok(out)
}

fn descriptor_distances_into(z: &[f32], map: &TopometricMap, out: &mut [f64]) -> Result<()> {
    if z.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: z.len(),
        });
    }
    for (v, slot) in out.iter_mut().enumerate() {
        let r = map.descriptor(v);
        let mut acc = 0.0f64;
        for (a, b) in z.iter().zip(r) {
            let d = f64::from(*a) - f64::from(*b);
            acc += d * d;
        }
        *slot = acc.sqrt();
    }
    Ok(())
}

/// λ = ln ρ / (mean distance − min distance), so that the best first-frame match
/// is ρ times as likely as an average one. Falls back to 1 when all distances
/// coincide.
pub fn calibrate_lambda(z0: &[f32], map: &TopometricMap, rho: f64) -> Result<f64> {
    if !(rho.is_finite() && rho > 1.0) {
        return Err(invalid(format!("rho must be > 1, got {rho}")));
    }
    let d = descriptor_distances(z0, map)?;
    Ok(lambda_from_distances(&d, rho))
}

pub(crate) fn lambda_from_distances(d: &[f64], rho: f64) -> f64 {
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let gap = mean - min;
    if gap < 1e-9 {
        1.0
    } else {
        rho.ln() / gap
    }
}

/// Value of the k-th largest entry (k is 1-based), by selection.
pub fn kth_largest(values: &[f64], k: usize, scratch: &mut Vec<f64>) -> f64 {
    assert!(k >= 1 && k <= values.len(), "rank {k} outside 1..={}", values.len());
    scratch.clear();
    scratch.extend_from_slice(values);
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    *kth
}

/// Likelihood vector g of length N + 1 (off-map state last). Unnormalized.
pub fn likelihood_vector(z: &[f32], map: &TopometricMap, params: &MeasurementParams) -> Result<Vec<f64>> {
    let mut g = vec![0.0; map.len() + 1];
    let mut scratch = Vec::with_capacity(map.len());
    likelihood_vector_into(z, map, params, &mut g, &mut scratch)?;
    Ok(g)
}

pub(crate) fn likelihood_vector_into(
    z: &[f32],
    map: &TopometricMap,
    params: &MeasurementParams,
    g: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let n = map.len();
    if params.k < 1 || params.k > n {
        return Err(invalid(format!("off-map rank {} outside 1..={n}", params.k)));
    }
    descriptor_distances_into(z, map, &mut g[..n])?;
    for v in g[..n].iter_mut() {
        *v = (-params.lambda * *v).exp();
    }
    g[n] = kth_largest(&g[..n], params.k, scratch);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::traverse::DescriptorMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// 1-D descriptors so distances to z = 0 are the descriptor values.
    fn line_map(values: &[f32]) -> TopometricMap {
        let desc = DescriptorMatrix::new(values.len(), 1, values.to_vec()).unwrap();
        let steps = vec![Pose2::new(2.0, 0.0, 0.0); values.len() - 1];
        TopometricMap::from_steps(desc, None, 3, 2.0, &steps).unwrap()
    }

    #[test]
    fn calibration_examples() {
        let map = line_map(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(calibrate_lambda(&[0.0], &map, std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-12);
        let flat = line_map(&[2.0, 2.0, 2.0]);
        assert_eq!(calibrate_lambda(&[0.0], &flat, 3.0).unwrap(), 1.0);
        let two = line_map(&[0.5, 1.5]);
        assert_abs_diff_eq!(calibrate_lambda(&[0.0], &two, 2.0).unwrap(), 1.3863, epsilon = 1e-4);
        assert!(calibrate_lambda(&[0.0, 1.0], &two, 2.0).is_err());
        assert!(calibrate_lambda(&[0.0], &two, 1.0).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let map = line_map(&[0.0, 1.0, 2.0]);
        let g = likelihood_vector(&[0.0], &map, &MeasurementParams { lambda: 1.0, k: 2 }).unwrap();
        assert_eq!(g[0], 1.0);
        assert_abs_diff_eq!(g[1], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[2], (-2.0f64).exp(), epsilon = 1e-15);
        assert_eq!(g[3], g[1]);
        assert!(likelihood_vector(&[0.0, 0.0], &map, &MeasurementParams { lambda: 1.0, k: 2 }).is_err());
        assert!(likelihood_vector(&[0.0], &map, &MeasurementParams { lambda: 1.0, k: 4 }).is_err());
    }

    #[test]
    fn kth_order_statistic() {
        let mut s = Vec::new();
        assert_eq!(kth_largest(&[0.9, 0.5, 0.4, 0.1], 2, &mut s), 0.5);
        assert_eq!(kth_largest(&[0.4, 0.9, 0.4, 0.1], 3, &mut s), 0.4);
        assert_eq!(kth_largest(&[0.4, 0.9, 0.4, 0.1], 1, &mut s), 0.9);
    }

    #[test]
    fn rank_rule() {
        let c = MeasurementConfig::default();
        assert_eq!(c.off_map_rank(1000), 20);
        assert_eq!(c.off_map_rank(100), 10);
        assert_eq!(c.off_map_rank(4), 4);
        assert!(MeasurementConfig { k_min: 1, ..c }.validate().is_err());
        assert!(MeasurementConfig { rho: 1.0, ..c }.validate().is_err());
        assert!(MeasurementConfig { k_frac: 0.0, ..c }.validate().is_err());
        assert!(MeasurementConfig { lambda: Some(-1.0), ..c }.validate().is_err());
    }

    proptest! {
        #[test]
        fn order_statistic_and_bounds(vals in proptest::collection::vec(0.0f32..3.0, 2..40),
                                      lambda in 0.1..5.0f64, kraw in 1usize..40) {
            let map = line_map(&vals);
            let k = kraw.min(vals.len());
            let g = likelihood_vector(&[0.0], &map, &MeasurementParams { lambda, k }).unwrap();
            let n = vals.len();
            let mut sorted = g[..n].to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            prop_assert_eq!(g[n], sorted[k - 1]);
            prop_assert!(g.iter().all(|v| *v > 0.0 && *v <= 1.0));
            prop_assert!(sorted[0] >= g[n]);
        }

        #[test]
        fn permutation_equivariance(vals in proptest::collection::vec(0.0f32..3.0, 3..20), rot in 0usize..20) {
            let n = vals.len();
            let r = rot % n;
            let mut rotated = vals.clone();
            rotated.rotate_left(r);
            let p = MeasurementParams { lambda: 1.3, k: 2 };
            let g = likelihood_vector(&[0.5], &line_map(&vals), &p).unwrap();
            let h = likelihood_vector(&[0.5], &line_map(&rotated), &p).unwrap();
            for v in 0..n {
                prop_assert_eq!(h[v], g[(v + r) % n]);
            }
            prop_assert_eq!(g[n], h[n]);
        }

        #[test]
        fn farther_descriptors_score_lower(base in 0.0f32..2.0, extra in 0.01f32..2.0) {
            let p = MeasurementParams { lambda: 0.7, k: 2 };
            let g = likelihood_vector(&[0.0], &line_map(&[base, 1.0, 2.0]), &p).unwrap();
            let h = likelihood_vector(&[0.0], &line_map(&[base + extra, 1.0, 2.0]), &p).unwrap();
            prop_assert!(h[0] < g[0]);
        }
    }
}
