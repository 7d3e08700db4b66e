//! Landmark RMSE and pose error reporting.
//!
//! Per-landmark RMSE takes the mean of squared errors over images inside the
//! square root, then averages the per-landmark values. Sums use pairwise
//! reduction so batch order does not shift results beyond rounding.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{LandmarkSet2D, Pose};
use crate::registration::pose_rmse;
use crate::synthesis::SyntheticCase;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmseReport {
    pub per_landmark: Vec<f64>,
    pub mean: f64,
    pub n_images: usize,
    pub unit: String,
    #[serde(default)]
    pub config_hash: String,
}

/// Per-landmark RMSE across a batch of images.
pub fn rmse_per_landmark(pred: &[LandmarkSet2D], gt: &[LandmarkSet2D]) -> Result<RmseReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(invalid("RMSE needs at least one image"));
    }
    if pred.len() != gt.len() {
        return Err(invalid(format!(
            "{} predictions for {} ground-truth images",
            pred.len(),
            gt.len()
        )));
    }
    let n = gt[0].len();
    if n == 0 {
        return Err(invalid("RMSE needs at least one landmark"));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != n || g.len() != n {
            return Err(invalid(format!(
                "image {i}: {} predicted and {} ground-truth landmarks, expected {n}",
                p.len(),
                g.len()
            )));
        }
    }
    let per_landmark: Vec<f64> = (0..n)
        .map(|k| {
            let sq: Vec<f64> = pred
                .iter()
                .zip(gt)
                .map(|(p, g)| (p.points()[k] - g.points()[k]).norm_squared())
                .collect();
            (pairwise_sum(&sq) / gt.len() as f64).sqrt()
        })
        .collect();
    let mean = pairwise_sum(&per_landmark) / n as f64;
    Ok(RmseReport {
        per_landmark,
        mean,
        n_images: gt.len(),
        unit: "px".to_string(),
        config_hash: String::new(),
    })
}

/// RMSE of decoded landmarks against each case's ground-truth projections.
pub fn evaluate_dataset(cases: &[SyntheticCase], decoded: &[LandmarkSet2D]) -> Result<RmseReport> {
    let gt: Vec<LandmarkSet2D> = cases.iter().map(|c| c.landmarks_2d_gt.clone()).collect();
    rmse_per_landmark(decoded, &gt)
}

impl RmseReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    /// Two-row table: `Mean L1 .. Ln` header and the values.
    pub fn table(&self) -> String {
        let mut header = format!("{:>10}", format!("Mean ({})", self.unit));
        let mut row = format!("{:>10.4}", self.mean);
        for (i, v) in self.per_landmark.iter().enumerate() {
            let _ = write!(header, " {:>9}", format!("L{}", i + 1));
            let _ = write!(row, " {v:>9.4}");
        }
        format!("{header}\n{row}\nimages: {}\n", self.n_images)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorReport {
    /// Geodesic angle between the two rotations (degrees).
    pub rotation_error_deg: f64,
    /// Euclidean translation difference (mm).
    pub translation_error_mm: f64,
    /// Unitless 6-vector RMS difference, see [`pose_rmse`].
    pub pose_rmse: f64,
}

pub fn pose_error(estimate: &Pose, truth: &Pose) -> Result<PoseErrorReport> {
    let a = estimate.rotation_matrix()?;
    let b = truth.rotation_matrix()?;
    let cos = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    Ok(PoseErrorReport {
        rotation_error_deg: cos.acos().to_degrees(),
        translation_error_mm: (estimate.translation - truth.translation).norm(),
        pose_rmse: pose_rmse(estimate, truth),
    })
}
