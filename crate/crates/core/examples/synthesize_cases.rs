//! Generates a seeded batch of synthetic cases, writes case files and heatmap
//! fixtures to a directory, and shows one case record.
//!
//! cargo run --example synthesize_cases -- [out_dir]

use std::path::PathBuf;

use fluororeg::io::write_heatmap_file;
use fluororeg::synthesis::{
    case_to_heatmaps, default_projector, generate_indexed_case, pelvis_fixture, SamplingRanges,
};
use fluororeg::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("fluororeg-cases"), PathBuf::from);
    std::fs::create_dir_all(&out).expect("output directory");

    let landmarks = pelvis_fixture();
    let projector = default_projector();
    let ranges = SamplingRanges::default();
    for i in 0..5 {
        let case = generate_indexed_case(42, i, &landmarks, &projector, &ranges, 0.0)?;
        let stem = out.join(&case.case_id);
        std::fs::write(stem.with_extension("json"), case.to_json("example")).expect("write case");
        write_heatmap_file(&stem.with_extension("hmap"), &case_to_heatmaps(&case, 2.0, 512)?)?;
        println!(
            "{} seed {:>20}  r {:>7.2?} deg  t {:>7.2?} mm",
            case.case_id,
            case.seed,
            case.true_pose.rotation_degrees(),
            case.true_pose.translation.as_slice()
        );
    }
    println!("wrote 5 cases to {}", out.display());
    Ok(())
}
