//! The full decoding pipeline in-process: heatmaps from a synthetic case are
//! soft-argmax decoded, mapped into the registration frame and registered.
//!
//! cargo run --release --example heatmaps_to_pose

use fluororeg::cli::decode_soft;
use fluororeg::evaluation::{pose_error, rmse_per_landmark};
use fluororeg::geometry::Pose;
use fluororeg::heatmap::Temperature;
use fluororeg::registration::{estimate_pose, Bounds, OptimizerConfig, RegistrationProblem};
use fluororeg::synthesis::{
    case_to_heatmaps, default_projector, generate_indexed_case, pelvis_fixture, SamplingRanges,
};
use fluororeg::Result;

fn main() -> Result<()> {
    let landmarks = pelvis_fixture();
    let projector = default_projector();
    let ranges = SamplingRanges::new(5.0, 10.0)?;
    let tau = Temperature::new(0.1)?;
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for i in 0..10 {
        let case = generate_indexed_case(42, i, &landmarks, &projector, &ranges, 0.0)?;
        let observed = decode_soft(&case_to_heatmaps(&case, 2.0, 512)?, tau, 512.0, 768.0)?;
        let problem = RegistrationProblem::new(
            landmarks.clone(),
            observed,
            projector.intrinsics,
            Bounds::default(),
        )?
        .with_projector(projector)?;
        let fit = estimate_pose(&problem, &OptimizerConfig::converge(), &Pose::identity())?;
        let e = pose_error(&fit.pose, &case.true_pose)?;
        println!(
            "{}: rmse {:.4} px, rotation error {:.4} deg, translation error {:.4} mm",
            case.case_id,
            (fit.final_loss / problem.len() as f64).sqrt(),
            e.rotation_error_deg,
            e.translation_error_mm
        );
        pred.push(projector.project(&fit.pose, &landmarks)?);
        gt.push(case.landmarks_2d_gt);
    }
    print!("{}", rmse_per_landmark(&pred, &gt)?.table());
    Ok(())
}
