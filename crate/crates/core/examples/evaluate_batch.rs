//! Decodes heatmap fixtures with hard argmax and tabulates per-landmark RMSE
//! against the ground-truth projections.
//!
//! cargo run --example evaluate_batch

use nalgebra::Point2;

use fluororeg::evaluation::evaluate_dataset;
use fluororeg::geometry::{detector_to_registration, LandmarkSet2D};
use fluororeg::heatmap::hard_argmax;
use fluororeg::synthesis::{
    case_to_heatmaps, default_projector, generate_indexed_case, pelvis_fixture, SamplingRanges,
};
use fluororeg::Result;

fn main() -> Result<()> {
    let landmarks = pelvis_fixture();
    let projector = default_projector();
    let ranges = SamplingRanges::new(20.0, 30.0)?;
    let cases = (0..25)
        .map(|i| generate_indexed_case(7, i, &landmarks, &projector, &ranges, 0.0))
        .collect::<Result<Vec<_>>>()?;

    let decoded = cases
        .iter()
        .map(|c| {
            let maps = case_to_heatmaps(c, 2.0, 512)?;
            let net = LandmarkSet2D::new(
                maps.iter()
                    .map(|h| {
                        let (x, y) = hard_argmax(h);
                        Point2::new(x as f64, y as f64)
                    })
                    .collect(),
            )?;
            detector_to_registration(&net, 512.0, 768.0)
        })
        .collect::<Result<Vec<_>>>()?;

    let report = evaluate_dataset(&cases, &decoded)?;
    print!("{}", report.table());
    println!("(quantization only: one 512-grid cell is 1.5 detector pixels)");
    Ok(())
}
