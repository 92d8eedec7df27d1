//! Time-ordered frames of appearance descriptors, probabilistic odometry and
//! optional ground truth.

use crate::error::{invalid, Error, Result};
use crate::geometry::{Covariance3, Pose2, WorldPose};

/// Gaussian belief over the relative pose between two consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryStep {
    pub mean: Pose2,
    pub cov: Covariance3,
}

impl OdometryStep {
    pub fn new(mean: Pose2, cov: Covariance3) -> Self {
        Self { mean, cov }
    }
}

/// Dense row-major matrix of `f32` descriptors, one row per frame or node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DescriptorMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "descriptor buffer holds {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn with_cols(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = Self::with_cols(cols);
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> DescriptorMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DescriptorMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// A single frame of a traverse. `odom` is `None` exactly for the first frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeta {
    pub odom: Option<OdometryStep>,
    pub gt_pose: Option<WorldPose>,
}

/// Ordered sequence of frames sharing one descriptor dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Traverse {
    descriptors: DescriptorMatrix,
    frames: Vec<FrameMeta>,
}

impl Traverse {
    pub fn new(descriptors: DescriptorMatrix, frames: Vec<FrameMeta>) -> Result<Self> {
        if descriptors.rows() != frames.len() {
            return Err(invalid(format!(
                "{} descriptor rows for {} frames",
                descriptors.rows(),
                frames.len()
            )));
        }
        for (t, f) in frames.iter().enumerate() {
            match (t, f.odom.is_some()) {
                (0, true) => return Err(invalid("first frame must not carry odometry")),
                (t, false) if t > 0 => {
                    return Err(invalid(format!("frame {t} is missing odometry")))
                }
                _ => {}
            }
        }
        Ok(Self {
            descriptors,
            frames,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.descriptors.cols()
    }

    #[inline]
    pub fn descriptor(&self, t: usize) -> &[f32] {
        self.descriptors.row(t)
    }

    pub fn descriptors(&self) -> &DescriptorMatrix {
        &self.descriptors
    }

    #[inline]
    pub fn odom(&self, t: usize) -> Option<&OdometryStep> {
        self.frames[t].odom.as_ref()
    }

    #[inline]
    pub fn gt_pose(&self, t: usize) -> Option<WorldPose> {
        self.frames[t].gt_pose
    }

    pub fn frames(&self) -> &[FrameMeta] {
        &self.frames
    }

    /// All ground-truth poses, if every frame carries one.
    pub fn gt_poses(&self) -> Option<Vec<WorldPose>> {
        self.frames.iter().map(|f| f.gt_pose).collect()
    }

    /// Returns a copy whose ground-truth poses are mapped through `f`.
    pub fn map_gt_poses(&self, f: impl Fn(WorldPose) -> WorldPose) -> Traverse {
        let frames = self
            .frames
            .iter()
            .map(|fr| FrameMeta {
                odom: fr.odom,
                gt_pose: fr.gt_pose.map(&f),
            })
            .collect();
        Traverse {
            descriptors: self.descriptors.clone(),
            frames,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> OdometryStep {
        OdometryStep::new(Pose2::new(1.0, 0.0, 0.0), Covariance3::identity())
    }

    #[test]
    fn odometry_presence_is_checked() {
        let d = DescriptorMatrix::from_rows(&[vec![0.0f32; 2], vec![1.0; 2]]).unwrap();
        let bad_first = vec![
            FrameMeta { odom: Some(step()), gt_pose: None },
            FrameMeta { odom: Some(step()), gt_pose: None },
        ];
        assert!(Traverse::new(d.clone(), bad_first).is_err());
        let missing = vec![
            FrameMeta { odom: None, gt_pose: None },
            FrameMeta { odom: None, gt_pose: None },
        ];
        assert!(Traverse::new(d.clone(), missing).is_err());
        let ok = vec![
            FrameMeta { odom: None, gt_pose: None },
            FrameMeta { odom: Some(step()), gt_pose: None },
        ];
        let t = Traverse::new(d, ok).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.gt_poses().is_none());
    }

    #[test]
    fn ragged_descriptors_rejected() {
        let mut m = DescriptorMatrix::with_cols(3);
        assert!(m.push(&[1.0, 2.0]).is_err());
        m.push(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
        assert!(DescriptorMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }
}
