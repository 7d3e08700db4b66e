//! Seeded synthetic registration cases.
//!
//! Every case draws a pose uniformly from symmetric ranges, projects the
//! landmark fixture, and optionally perturbs the projections with isotropic
//! Gaussian pixel noise. The generator is Xoshiro256++ seeded through
//! `seed_from_u64`; output is bit-reproducible for a given build.

use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    registration_to_detector, CameraIntrinsics, LandmarkSet2D, LandmarkSet3D, Pose, Projector,
    VolumeFrame, MIN_DEPTH,
};
use crate::heatmap::{gaussian_heatmap, Heatmap};

/// Written into every case file.
pub const GENERATOR_VERSION: &str = "fluororeg-synth/1 xoshiro256++";

const FIXTURE_CSV: &str = include_str!("../data/pelvis_landmarks.csv");

/// The bundled eight-landmark pelvis, volume-centered millimetres.
pub fn pelvis_fixture_centered() -> LandmarkSet3D {
    let set = crate::io::parse_landmarks_3d(FIXTURE_CSV, Path::new("pelvis_landmarks.csv"))
        .expect("bundled fixture parses");
    set.check_non_coplanar(1.0)
        .expect("bundled fixture is non-degenerate");
    set
}

/// The bundled pelvis placed with the default [`VolumeFrame`].
pub fn pelvis_fixture() -> LandmarkSet3D {
    crate::geometry::voxel_to_world(pelvis_fixture_centered().points(), &VolumeFrame::default())
        .expect("default volume frame is valid")
}

/// Default projection model: default intrinsics, rotating about the center
/// of the default volume.
pub fn default_projector() -> Projector {
    Projector::new(CameraIntrinsics::default()).with_pivot(VolumeFrame::default().center_world())
}

/// Symmetric sampling ranges: rotation in degrees, translation in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRanges {
    pub rot_range_deg: f64,
    pub trans_range_mm: f64,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            rot_range_deg: 45.0,
            trans_range_mm: 50.0,
        }
    }
}

impl SamplingRanges {
    pub fn new(rot_range_deg: f64, trans_range_mm: f64) -> Result<Self> {
        let r = Self {
            rot_range_deg,
            trans_range_mm,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rot_range_deg >= 0.0
            && self.trans_range_mm >= 0.0
            && self.rot_range_deg.is_finite()
            && self.trans_range_mm.is_finite()
        {
            Ok(())
        } else {
            Err(invalid(format!("sampling ranges must be >= 0, got {self:?}")))
        }
    }
}

fn symmetric<R: Rng>(rng: &mut R, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

fn draw_pose<R: Rng>(rng: &mut R, ranges: &SamplingRanges) -> Pose {
    let rot = ranges.rot_range_deg.to_radians();
    let r = Vector3::from_fn(|_, _| symmetric(rng, rot));
    let t = Vector3::from_fn(|_, _| symmetric(rng, ranges.trans_range_mm));
    Pose::new(r, t)
}

/// Pose with every rotation component uniform in `±rot_range_deg` and every
/// translation component uniform in `±trans_range_mm`.
pub fn sample_pose(seed: u64, ranges: &SamplingRanges) -> Result<Pose> {
    ranges.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    Ok(draw_pose(&mut rng, ranges))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCase {
    pub case_id: String,
    pub seed: u64,
    pub true_pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Rotation center of `true_pose` (world mm).
    pub pivot: Point3<f64>,
    pub landmarks_3d: LandmarkSet3D,
    pub landmarks_2d_gt: LandmarkSet2D,
    pub landmarks_2d_noisy: LandmarkSet2D,
    pub noise_sigma: f64,
}

/// Samples a pose, projects `landmarks` and adds pixel noise.
///
/// Fails with [`Error::CaseRejected`] when a landmark lands behind the source
/// or outside twice the detector extent around its center.
pub fn generate_case(
    seed: u64,
    landmarks: &LandmarkSet3D,
    projector: &Projector,
    ranges: &SamplingRanges,
    noise_sigma: f64,
) -> Result<SyntheticCase> {
    let intr = &projector.intrinsics;
    ranges.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let pose = draw_pose(&mut rng, ranges);

    let rot = pose.rotation_matrix()?;
    for (i, p) in landmarks.points().iter().enumerate() {
        let depth = projector.to_camera(&rot, &pose.translation, p).z;
        if depth <= MIN_DEPTH {
            return Err(Error::CaseRejected(format!(
                "landmark {} lies behind the source (depth {depth:.3} mm)",
                i + 1
            )));
        }
    }
    let gt = projector.project(&pose, landmarks)?;
    for (i, q) in gt.points().iter().enumerate() {
        if q.x.abs() > intr.width() || q.y.abs() > intr.height() {
            return Err(Error::CaseRejected(format!(
                "landmark {} projects to ({:.1}, {:.1}), outside twice the detector",
                i + 1,
                q.x,
                q.y
            )));
        }
    }

    let noisy = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| invalid(e.to_string()))?;
        LandmarkSet2D::new(
            gt.points()
                .iter()
                .map(|q| Point2::new(q.x + normal.sample(&mut rng), q.y + normal.sample(&mut rng)))
                .collect(),
        )?
    } else {
        gt.clone()
    };

    Ok(SyntheticCase {
        case_id: format!("seed_{seed}"),
        seed,
        true_pose: pose,
        intrinsics: *intr,
        pivot: projector.pivot,
        landmarks_3d: landmarks.clone(),
        landmarks_2d_gt: gt,
        landmarks_2d_noisy: noisy,
        noise_sigma,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the `attempt`-th try of case `index`. The first attempt of case
/// `i` uses `base + i`.
pub fn case_seed(base: u64, index: u64, attempt: u32) -> u64 {
    let first = base.wrapping_add(index);
    if attempt == 0 {
        first
    } else {
        splitmix64(first ^ splitmix64(u64::from(attempt)))
    }
}

/// Generates case `index` of a batch, resampling rejected poses.
pub fn generate_indexed_case(
    base_seed: u64,
    index: u64,
    landmarks: &LandmarkSet3D,
    projector: &Projector,
    ranges: &SamplingRanges,
    noise_sigma: f64,
) -> Result<SyntheticCase> {
    const MAX_ATTEMPTS: u32 = 1000;
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = case_seed(base_seed, index, attempt);
        match generate_case(seed, landmarks, projector, ranges, noise_sigma) {
            Ok(mut case) => {
                case.case_id = format!("case_{index:04}");
                return Ok(case);
            }
            Err(e @ Error::CaseRejected(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| invalid("no attempts made")))
}

/// One Gaussian heatmap per landmark at its `net_size` network-frame position.
///
/// The detector size used for the frame change is the case's image width.
pub fn case_to_heatmaps(case: &SyntheticCase, sigma: f64, net_size: usize) -> Result<Vec<Heatmap>> {
    if net_size == 0 {
        return Err(invalid("net_size must be >= 1"));
    }
    let net = registration_to_detector(
        &case.landmarks_2d_gt,
        net_size as f64,
        case.intrinsics.width(),
    )?;
    net.points()
        .iter()
        .enumerate()
        .map(|(i, c)| gaussian_heatmap(i, *c, sigma, net_size, net_size))
        .collect()
}

/// Serialized form of a [`SyntheticCase`]. Angles are degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub generator: String,
    pub case_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub intrinsics: CameraIntrinsics,
    pub pivot_mm: [f64; 3],
    pub pose: PoseRecord,
    pub noise_sigma: f64,
    pub landmarks_3d: Vec<[f64; 3]>,
    pub landmarks_2d_gt: Vec<[f64; 2]>,
    pub landmarks_2d_noisy: Vec<[f64; 2]>,
}

/// Pose at a file boundary: rotation vector in degrees, translation in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation_deg: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            rotation_deg: p.rotation_degrees(),
            translation_mm: p.translation.into(),
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        Pose::from_degrees(r.rotation_deg, r.translation_mm)
    }
}

fn points2(set: &LandmarkSet2D) -> Vec<[f64; 2]> {
    set.points().iter().map(|p| [p.x, p.y]).collect()
}

impl SyntheticCase {
    /// Projection model the case was generated with.
    pub fn projector(&self) -> Projector {
        Projector::new(self.intrinsics).with_pivot(self.pivot)
    }

    pub fn to_record(&self, config_hash: &str) -> CaseRecord {
        CaseRecord {
            generator: GENERATOR_VERSION.to_string(),
            case_id: self.case_id.clone(),
            seed: self.seed,
            config_hash: config_hash.to_string(),
            intrinsics: self.intrinsics,
            pivot_mm: self.pivot.into(),
            pose: PoseRecord::from(&self.true_pose),
            noise_sigma: self.noise_sigma,
            landmarks_3d: self
                .landmarks_3d
                .points()
                .iter()
                .map(|p| [p.x, p.y, p.z])
                .collect(),
            landmarks_2d_gt: points2(&self.landmarks_2d_gt),
            landmarks_2d_noisy: points2(&self.landmarks_2d_noisy),
        }
    }

    pub fn from_record(rec: &CaseRecord) -> Result<Self> {
        rec.intrinsics.validate()?;
        let l3 = LandmarkSet3D::new(
            rec.landmarks_3d
                .iter()
                .map(|p| Point3::new(p[0], p[1], p[2]))
                .collect(),
        )?;
        let to2 = |v: &[[f64; 2]]| {
            LandmarkSet2D::new(v.iter().map(|p| Point2::new(p[0], p[1])).collect())
        };
        let gt = to2(&rec.landmarks_2d_gt)?;
        let noisy = to2(&rec.landmarks_2d_noisy)?;
        if gt.len() != l3.len() || noisy.len() != l3.len() {
            return Err(invalid("case file landmark counts disagree"));
        }
        Ok(Self {
            case_id: rec.case_id.clone(),
            seed: rec.seed,
            true_pose: Pose::from(&rec.pose),
            intrinsics: rec.intrinsics,
            pivot: Point3::from(rec.pivot_mm),
            landmarks_3d: l3,
            landmarks_2d_gt: gt,
            landmarks_2d_noisy: noisy,
            noise_sigma: rec.noise_sigma,
        })
    }

    pub fn to_json(&self, config_hash: &str) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_record(config_hash))
            .expect("case record serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: CaseRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        Self::from_record(&rec)
    }
}
