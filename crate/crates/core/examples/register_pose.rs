//! Recovers a pose from noisy landmark observations with both optimizers and
//! reports reprojection and pose errors.
//!
//! cargo run --release --example register_pose -- [noise_px]

use fluororeg::evaluation::pose_error;
use fluororeg::geometry::Pose;
use fluororeg::registration::{
    estimate_pose, reprojection_rmse, Bounds, OptimizerConfig, RegistrationProblem,
};
use fluororeg::synthesis::{default_projector, generate_case, pelvis_fixture, SamplingRanges};
use fluororeg::Result;

fn main() -> Result<()> {
    let noise: f64 = std::env::args().nth(1).map_or(0.5, |s| s.parse().expect("noise in px"));
    let projector = default_projector();
    let landmarks = pelvis_fixture();
    let case = generate_case(42, &landmarks, &projector, &SamplingRanges::new(5.0, 10.0)?, noise)?;
    let problem = RegistrationProblem::new(
        landmarks,
        case.landmarks_2d_noisy.clone(),
        projector.intrinsics,
        Bounds::default(),
    )?
    .with_projector(projector)?;

    let truth = case.true_pose;
    println!("true pose: r {:.3?} deg, t {:.3?} mm", truth.rotation_degrees(), truth.translation.as_slice());
    println!(
        "rmse at truth {:.4} px (noise {noise} px)",
        reprojection_rmse(&truth, &problem)?
    );
    for (name, cfg) in [
        ("paper", OptimizerConfig::paper()),
        ("converge", OptimizerConfig::converge()),
        ("lbfgs", OptimizerConfig::lbfgs()),
    ] {
        let fit = estimate_pose(&problem, &cfg, &Pose::identity())?;
        let e = pose_error(&fit.pose, &truth)?;
        println!(
            "{name:<9} {:>5} iters converged={:<5} rmse {:>9.4} px  rot err {:.4} deg  trans err {:.4} mm",
            fit.iterations_run,
            fit.converged,
            reprojection_rmse(&fit.pose, &problem)?,
            e.rotation_error_deg,
            e.translation_error_mm
        );
    }
    Ok(())
}
