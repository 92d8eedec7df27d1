//! Topometric map: temporally ordered place nodes with appearance
//! descriptors and a banded table of relative poses between nearby nodes.

use std::ops::Range;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Pose2, WorldPose};
use crate::traverse::{DescriptorMatrix, Traverse};

pub const DEFAULT_NODE_SPACING: f64 = 2.0;
pub const DEFAULT_WINDOW: usize = 5;

/// Borrowed view of one map node.
#[derive(Debug, Clone, Copy)]
pub struct MapNode<'a> {
    pub index: usize,
    pub descriptor: &'a [f32],
    pub gt_pose: Option<WorldPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopometricMap {
    descriptors: DescriptorMatrix,
    gt_poses: Option<Vec<WorldPose>>,
    window: usize,
    node_spacing: f64,
    /// `band[i * window + k]` is rel_pose(i, i + k); entries past the map end are unused.
    band: Vec<Pose2>,
    /// Segment endpoints (lo, hi) for every banded pair, same layout as `band`.
    segments: Vec<(Pose2, Pose2)>,
}

impl TopometricMap {
    /// Assembles a map from an explicit band. `band[i]` lists rel_pose(i, i + k)
    /// for k = 0.. min(window, N - i); the first entry must be the identity.
    pub fn from_band(
        descriptors: DescriptorMatrix,
        gt_poses: Option<Vec<WorldPose>>,
        window: usize,
        node_spacing: f64,
        band: Vec<Vec<Pose2>>,
    ) -> Result<Self> {
        let n = descriptors.rows();
        if n == 0 {
            return Err(invalid("map needs at least one node"));
        }
        if window < 2 {
            return Err(invalid(format!("window must be >= 2, got {window}")));
        }
        if !(node_spacing.is_finite() && node_spacing > 0.0) {
            return Err(invalid(format!("node spacing must be > 0, got {node_spacing}")));
        }
        if band.len() != n {
            return Err(invalid(format!("band has {} rows for {n} nodes", band.len())));
        }
        if let Some(gt) = &gt_poses {
            if gt.len() != n {
                return Err(invalid(format!("{} gt poses for {n} nodes", gt.len())));
            }
        }
        let mut flat = vec![Pose2::IDENTITY; n * window];
        for (i, row) in band.iter().enumerate() {
            let expected = window.min(n - i);
            if row.len() != expected {
                return Err(invalid(format!(
                    "band row {i} has {} entries, expected {expected}",
                    row.len()
                )));
            }
            if row[0] != Pose2::IDENTITY {
                return Err(invalid(format!("rel_pose({i}, {i}) is not the identity")));
            }
            flat[i * window..i * window + expected].copy_from_slice(row);
        }
        let mut map = Self {
            descriptors,
            gt_poses,
            window,
            node_spacing,
            band: flat,
            segments: Vec::new(),
        };
        map.segments = map.compute_segments();
        Ok(map)
    }

    /// Assembles a map from the relative poses between consecutive nodes.
    pub fn from_steps(
        descriptors: DescriptorMatrix,
        gt_poses: Option<Vec<WorldPose>>,
        window: usize,
        node_spacing: f64,
        steps: &[Pose2],
    ) -> Result<Self> {
        let n = descriptors.rows();
        if n == 0 || steps.len() + 1 != n {
            return Err(invalid(format!(
                "{} consecutive steps for {n} nodes",
                steps.len()
            )));
        }
        let band = (0..n)
            .map(|i| {
                let len = window.min(n - i);
                let mut row = Vec::with_capacity(len);
                let mut acc = Pose2::IDENTITY;
                row.push(acc);
                for step in &steps[i..i + len - 1] {
                    acc = acc.compose(step);
                    row.push(acc);
                }
                row
            })
            .collect();
        Self::from_band(descriptors, gt_poses, window, node_spacing, band)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.descriptors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn window(&self) -> usize {
        self.window
    }

    #[inline]
    pub fn node_spacing(&self) -> f64 {
        self.node_spacing
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.descriptors.cols()
    }

    pub fn descriptors(&self) -> &DescriptorMatrix {
        &self.descriptors
    }

    #[inline]
    pub fn descriptor(&self, i: usize) -> &[f32] {
        self.descriptors.row(i)
    }

    pub fn gt_poses(&self) -> Option<&[WorldPose]> {
        self.gt_poses.as_deref()
    }

    pub fn node(&self, index: usize) -> MapNode<'_> {
        MapNode {
            index,
            descriptor: self.descriptors.row(index),
            gt_pose: self.gt_poses.as_ref().map(|g| g[index]),
        }
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.len() && j < self.len() && j >= i && j - i < self.window
    }

    /// Relative pose from node `i` to node `j`, defined for 0 <= j - i < window.
    pub fn rel_pose(&self, i: usize, j: usize) -> Result<Pose2> {
        if !self.in_band(i, j) {
            return Err(Error::MissingEdge { from: i, to: j });
        }
        Ok(self.band[i * self.window + (j - i)])
    }

    /// Nodes reachable from `i` in one motion step. Interior nodes have edges
    /// to i+1 ..= i+w-1; the terminal node keeps a self edge so its row is
    /// never empty.
    #[inline]
    pub fn successors(&self, i: usize) -> Range<usize> {
        let n = self.len();
        if i + 1 >= n {
            i..i + 1
        } else {
            i + 1..(i + self.window).min(n)
        }
    }

    /// All banded pairs (i, j) with j > i.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).flat_map(move |i| (i + 1..(i + self.window).min(self.len())).map(move |j| (i, j)))
    }

    /// Endpoints of the local trajectory segment around node `j` seen from `i`:
    /// midpoints between `j` and its predecessor / successor.
    pub fn segment_endpoints(&self, i: usize, j: usize) -> Result<(Pose2, Pose2)> {
        if !self.in_band(i, j) {
            return Err(Error::MissingEdge { from: i, to: j });
        }
        Ok(self.segments[i * self.window + (j - i)])
    }

    #[inline]
    pub(crate) fn segment_unchecked(&self, i: usize, j: usize) -> &(Pose2, Pose2) {
        &self.segments[i * self.window + (j - i)]
    }

    fn compute_segments(&self) -> Vec<(Pose2, Pose2)> {
        let n = self.len();
        let w = self.window;
        let mut out = vec![(Pose2::IDENTITY, Pose2::IDENTITY); n * w];
        for i in 0..n {
            for j in i..(i + w).min(n) {
                if j == i {
                    continue;
                }
                let at = self.band[i * w + (j - i)];
                let pred = if j == i {
                    Pose2::IDENTITY
                } else {
                    self.band[i * w + (j - 1 - i)]
                };
                let lo = pred.midpoint(&at);
                let hi = if j + 1 >= n || j + 1 - i >= w {
                    at
                } else {
                    at.midpoint(&self.band[i * w + (j + 1 - i)])
                };
                out[i * w + (j - i)] = (lo, hi);
            }
        }
        out
    }

    /// Largest per-component deviation of rel_pose(i, j) from
    /// rel_pose(i, k) ∘ rel_pose(k, j) over the whole band.
    pub fn band_inconsistency(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..(i + self.window).min(n) {
                let direct = self.band[i * self.window + (j - i)];
                for k in i..=j {
                    let via = self.band[i * self.window + (k - i)]
                        .compose(&self.band[k * self.window + (j - k)]);
                    worst = worst
                        .max((via.dx() - direct.dx()).abs())
                        .max((via.dy() - direct.dy()).abs())
                        .max(crate::geometry::wrap(via.dtheta() - direct.dtheta()).abs());
                }
            }
        }
        worst
    }
}

/// Greedy subsampling of a reference traverse: a frame becomes a node when the
/// odometry translation accumulated since the previous node reaches
/// `node_spacing`. Returns the chosen frame indices.
pub fn select_nodes(reference: &Traverse, node_spacing: f64) -> Result<Vec<usize>> {
    if !(node_spacing.is_finite() && node_spacing > 0.0) {
        return Err(invalid(format!("node spacing must be > 0, got {node_spacing}")));
    }
    if reference.len() < 2 {
        return Err(invalid("reference traverse needs at least two frames"));
    }
    let threshold = node_spacing * (1.0 - 1e-12);
    let mut selected = vec![0];
    let mut acc = 0.0;
    for t in 1..reference.len() {
        let odom = reference
            .odom(t)
            .ok_or_else(|| invalid(format!("frame {t} is missing odometry")))?;
        acc += odom.mean.translation_norm();
        if acc >= threshold {
            selected.push(t);
            acc = 0.0;
        }
    }
    if selected.len() < 2 {
        return Err(invalid(format!(
            "reference traverse is shorter than one node spacing ({node_spacing} m)"
        )));
    }
    Ok(selected)
}

/// Builds a map by subsampling `reference` at regular odometry distance.
pub fn build_map(reference: &Traverse, node_spacing: f64, window: usize) -> Result<TopometricMap> {
    if window < 2 {
        return Err(invalid(format!("window must be >= 2, got {window}")));
    }
    let selected = select_nodes(reference, node_spacing)?;
    let steps: Vec<Pose2> = selected
        .windows(2)
        .map(|w| {
            (w[0] + 1..=w[1]).fold(Pose2::IDENTITY, |acc, t| {
                acc.compose(&reference.odom(t).expect("checked during selection").mean)
            })
        })
        .collect();
    let descriptors = reference.descriptors().select(&selected);
    let gt_poses = selected
        .iter()
        .map(|&t| reference.gt_pose(t))
        .collect::<Option<Vec<_>>>();
    TopometricMap::from_steps(descriptors, gt_poses, window, node_spacing, &steps)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::Covariance3;
    use crate::traverse::{FrameMeta, OdometryStep};
    use approx::assert_abs_diff_eq;

    /// Straight traverse of `frames` frames, each `step` meters forward.
    pub(crate) fn straight_traverse(frames: usize, step: f64, dim: usize) -> Traverse {
        let mut desc = DescriptorMatrix::with_cols(dim);
        let mut meta = Vec::new();
        for t in 0..frames {
            let row: Vec<f32> = (0..dim).map(|k| ((t * 7 + k * 3) % 11) as f32).collect();
            desc.push(&row).unwrap();
            meta.push(FrameMeta {
                odom: (t > 0).then(|| {
                    OdometryStep::new(Pose2::new(step, 0.0, 0.0), Covariance3::identity())
                }),
                gt_pose: Some(WorldPose::new(t as f64 * step, 0.0, 0.0)),
            });
        }
        Traverse::new(desc, meta).unwrap()
    }

    /// Collinear map with `n` nodes `spacing` apart.
    pub(crate) fn straight_map(n: usize, spacing: f64, window: usize) -> TopometricMap {
        let desc = DescriptorMatrix::new(n, 2, (0..2 * n).map(|v| v as f32).collect()).unwrap();
        let steps = vec![Pose2::new(spacing, 0.0, 0.0); n - 1];
        let gt = (0..n).map(|i| WorldPose::new(i as f64 * spacing, 0.0, 0.0)).collect();
        TopometricMap::from_steps(desc, Some(gt), window, spacing, &steps).unwrap()
    }

    #[test]
    fn subsampling_every_other_frame() {
        let tr = straight_traverse(10, 1.0, 3);
        assert_eq!(select_nodes(&tr, 2.0).unwrap(), vec![0, 2, 4, 6, 8]);
        let map = build_map(&tr, 2.0, 3).unwrap();
        assert_eq!(map.len(), 5);
        assert_eq!(map.rel_pose(0, 1).unwrap(), Pose2::new(2.0, 0.0, 0.0));
        assert_eq!(map.descriptor(2), tr.descriptor(4));
        assert_eq!(map.node(1).gt_pose, Some(WorldPose::new(2.0, 0.0, 0.0)));
    }

    #[test]
    fn fine_spacing_keeps_every_frame() {
        let tr = straight_traverse(6, 1.0, 2);
        assert_eq!(select_nodes(&tr, 0.5).unwrap(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn collinear_band_accumulates() {
        let tr = straight_traverse(20, 0.5, 2);
        let map = build_map(&tr, 2.0, 5).unwrap();
        for i in 0..map.len() - 2 {
            let p = map.rel_pose(i, i + 2).unwrap();
            assert_abs_diff_eq!(p.dx(), 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.dy(), 0.0, epsilon = 1e-12);
        }
        assert_eq!(map.rel_pose(3, 3).unwrap(), Pose2::IDENTITY);
        assert!(map.band_inconsistency() < 1e-9);
    }

    #[test]
    fn build_errors() {
        let tr = straight_traverse(3, 1.0, 2);
        assert!(build_map(&tr, 5.0, 3).is_err());
        assert!(build_map(&tr, 1.0, 1).is_err());
        assert!(build_map(&tr, 0.0, 3).is_err());
        assert!(build_map(&straight_traverse(1, 1.0, 2), 1.0, 3).is_err());
    }

    #[test]
    fn segment_examples() {
        let map = straight_map(6, 2.0, 3);
        let (lo, hi) = map.segment_endpoints(0, 1).unwrap();
        assert_eq!((lo, hi), (Pose2::new(1.0, 0.0, 0.0), Pose2::new(3.0, 0.0, 0.0)));
        // j + 1 - i reaches the window: hi collapses onto rel_pose(i, j)
        let (lo, hi) = map.segment_endpoints(0, 2).unwrap();
        assert_eq!(lo, Pose2::new(3.0, 0.0, 0.0));
        assert_eq!(hi, map.rel_pose(0, 2).unwrap());
        // terminal node
        let (_, hi) = map.segment_endpoints(4, 5).unwrap();
        assert_eq!(hi, map.rel_pose(4, 5).unwrap());
        // self segment is a point at the identity
        assert_eq!(map.segment_endpoints(2, 2).unwrap(), (Pose2::IDENTITY, Pose2::IDENTITY));
        assert!(matches!(map.segment_endpoints(0, 3), Err(Error::MissingEdge { .. })));
        assert!(map.segment_endpoints(3, 2).is_err());

        let wide = straight_map(6, 2.0, 4);
        let (lo, hi) = wide.segment_endpoints(0, 2).unwrap();
        assert_eq!((lo, hi), (Pose2::new(3.0, 0.0, 0.0), Pose2::new(5.0, 0.0, 0.0)));
    }

    #[test]
    fn segments_tile_forward_axis() {
        let tr = straight_traverse(60, 0.5, 2);
        let map = build_map(&tr, 2.0, 5).unwrap();
        for i in 0..map.len() {
            let js: Vec<usize> = (i + 1..(i + map.window()).min(map.len())).collect();
            for pair in js.windows(2) {
                let (_, hi) = map.segment_endpoints(i, pair[0]).unwrap();
                let (lo, _) = map.segment_endpoints(i, pair[1]).unwrap();
                assert_eq!(hi, lo);
            }
        }
    }

    #[test]
    fn successors_cover_band() {
        let map = straight_map(6, 2.0, 3);
        assert_eq!(map.successors(0), 1..3);
        assert_eq!(map.successors(4), 5..6);
        assert_eq!(map.successors(5), 5..6);
        assert_eq!(map.edges().count(), 4 * 2 + 1);
    }

    #[test]
    fn band_rows_validated() {
        let desc = DescriptorMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let bad = vec![vec![Pose2::new(0.1, 0.0, 0.0), Pose2::IDENTITY], vec![Pose2::IDENTITY]];
        assert!(TopometricMap::from_band(desc.clone(), None, 2, 1.0, bad).is_err());
        let short = vec![vec![Pose2::IDENTITY], vec![Pose2::IDENTITY]];
        assert!(TopometricMap::from_band(desc, None, 2, 1.0, short).is_err());
    }
}
