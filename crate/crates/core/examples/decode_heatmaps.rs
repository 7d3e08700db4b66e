//! Builds Gaussian heatmaps, decodes them with soft and hard argmax at a few
//! temperatures, and round-trips them through the `HMAP` file format.
//!
//! cargo run --example decode_heatmaps

use nalgebra::Point2;

use fluororeg::heatmap::{
    bce_with_logits, gaussian_heatmap, hard_argmax, read_heatmaps, soft_argmax, write_heatmaps,
    Temperature,
};
use fluororeg::Result;

fn main() -> Result<()> {
    let centers = [Point2::new(100.25, 301.6), Point2::new(250.9, 80.05), Point2::new(400.5, 400.5)];
    let maps = centers
        .iter()
        .enumerate()
        .map(|(i, c)| gaussian_heatmap(i, *c, 2.0, 512, 512))
        .collect::<Result<Vec<_>>>()?;

    for tau in [1.0, 0.1, 1e-3] {
        let t = Temperature::new(tau)?;
        for (h, c) in maps.iter().zip(&centers) {
            let soft = soft_argmax(h, t);
            let (hx, hy) = hard_argmax(h);
            println!(
                "tau {tau:<6} true ({:>7.3}, {:>7.3})  soft ({:>8.4}, {:>8.4}) err {:.2e}  hard ({hx}, {hy})",
                c.x,
                c.y,
                soft.x,
                soft.y,
                (soft - c).norm()
            );
        }
    }

    // sigmoid(logit) against a binary disk of radius 3 px
    let h = &maps[0];
    let target: Vec<f64> = (0..512 * 512)
        .map(|k| {
            let (x, y) = ((k % 512) as f64, (k / 512) as f64);
            if (Point2::new(x, y) - centers[0]).norm() <= 3.0 { 1.0 } else { 0.0 }
        })
        .collect();
    println!("BCE against a 3 px disk: {:.6}", bce_with_logits(h, &target)?);

    let mut bytes = Vec::new();
    write_heatmaps(&mut bytes, &maps).expect("in-memory write");
    let back = read_heatmaps(bytes.as_slice()).expect("valid container");
    println!("HMAP container: {} bytes, {} maps of {}x{}", bytes.len(), back.len(), back[0].width(), back[0].height());
    Ok(())
}
