//! Compares the closed-form loss gradient with central finite differences on
//! random problems.
//!
//! cargo run --example gradient_check -- [trials]

use fluororeg::cli::{gradcheck, RunConfig, PARAM_NAMES};
use fluororeg::geometry::Pose;
use fluororeg::registration::{loss_gradient, Bounds, RegistrationProblem};
use fluororeg::synthesis::{default_projector, pelvis_fixture};
use fluororeg::Result;

fn main() -> Result<()> {
    let trials: u64 = std::env::args().nth(1).map_or(100, |s| s.parse().expect("trial count"));

    let projector = default_projector();
    let landmarks = pelvis_fixture();
    let truth = Pose::from_degrees([15.0, -30.0, 8.0], [20.0, 10.0, -35.0]);
    let observed = projector.project(&truth, &landmarks)?;
    let problem = RegistrationProblem::new(landmarks, observed, projector.intrinsics, Bounds::default())?
        .with_projector(projector)?;
    let g = loss_gradient(&Pose::identity(), &problem)?;
    for (name, v) in PARAM_NAMES.iter().zip(g) {
        println!("dL/d{name:<3} at identity = {v:>14.4}");
    }

    for step in [1e-3, 1e-5, 1e-7] {
        let out = gradcheck(&RunConfig::default(), 42, trials, step, false)?;
        println!(
            "step {step:e}: worst relative error {:.3e} over {trials} trials ({})",
            out.worst_relative_error, PARAM_NAMES[out.worst_component]
        );
    }
    Ok(())
}
