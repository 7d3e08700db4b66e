//! Projects the bundled pelvis through the default C-arm geometry and walks
//! the point through every coordinate frame.
//!
//! cargo run --example project_landmarks

use fluororeg::geometry::{
    detector_to_registration, registration_to_detector, rodrigues, CameraIntrinsics, Pose,
};
use fluororeg::synthesis::{default_projector, pelvis_fixture};
use fluororeg::Result;

fn main() -> Result<()> {
    let intr = CameraIntrinsics::default();
    println!(
        "detector {}x{} px, sdd {} mm, focal length {} px",
        intr.image_size[0],
        intr.image_size[1],
        intr.sdd,
        intr.focal_length()
    );

    let pose = Pose::from_degrees([10.0, -5.0, 20.0], [4.0, -12.0, 6.0]);
    let r = rodrigues(&pose.rotation)?;
    println!("R =\n{r:.6}det R = {:.12}", r.determinant());

    let landmarks = pelvis_fixture();
    let projected = default_projector().project(&pose, &landmarks)?;
    let net = registration_to_detector(&projected, 512.0, 768.0)?;
    let back = detector_to_registration(&net, 512.0, 768.0)?;
    println!("{:>3} {:>28} {:>22} {:>22}", "id", "world (mm)", "registration (px)", "512 frame (px)");
    for (i, ((w, q), n)) in landmarks
        .points()
        .iter()
        .zip(projected.points())
        .zip(net.points())
        .enumerate()
    {
        println!(
            "{:>3} ({:>7.1}, {:>6.1}, {:>6.1}) ({:>9.3}, {:>9.3}) ({:>9.3}, {:>9.3})",
            i + 1,
            w.x,
            w.y,
            w.z,
            q.x,
            q.y,
            n.x,
            n.y
        );
        assert!((back.points()[i] - q).norm() < 1e-12);
    }
    Ok(())
}
