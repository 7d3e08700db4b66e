//! Landmark heatmaps and their decoding.
//!
//! A [`Heatmap`] stores row-major logits; coordinates are `(x, y)` with `x`
//! the column and `y` the row.

use std::io::{Read, Write};

use nalgebra::Point2;

use crate::error::{invalid, Result};

/// Stand-in for a `-inf` logit that keeps arithmetic finite.
pub const NEG_INF_LOGIT: f64 = -1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    landmark_id: usize,
    width: usize,
    height: usize,
    logits: Vec<f64>,
}

impl Heatmap {
    pub fn new(landmark_id: usize, width: usize, height: usize, logits: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("heatmap dimensions must be >= 1"));
        }
        if logits.len() != width * height {
            return Err(invalid(format!(
                "heatmap has {} logits, expected {width} x {height}",
                logits.len()
            )));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(invalid("heatmap logits must be finite"));
        }
        Ok(Self {
            landmark_id,
            width,
            height,
            logits,
        })
    }

    pub fn from_fn(
        landmark_id: usize,
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let logits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(landmark_id, width, height, logits)
    }

    pub fn landmark_id(&self) -> usize {
        self.landmark_id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.logits[y * self.width + x]
    }

    fn coords(&self, idx: usize) -> (f64, f64) {
        ((idx % self.width) as f64, (idx / self.width) as f64)
    }
}

/// Softmax temperature, strictly positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Self(tau))
        } else {
            Err(invalid(format!("temperature must be > 0, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Spatial softmax of `logits / tau`, row-major, summing to one.
pub fn softmax2d(h: &Heatmap, tau: Temperature) -> Vec<f64> {
    let max = h.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = h
        .logits
        .iter()
        .map(|&v| ((v - max) / tau.0).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Expected grid coordinate under [`softmax2d`].
pub fn soft_argmax(h: &Heatmap, tau: Temperature) -> Point2<f64> {
    let probs = softmax2d(h, tau);
    let (mut x, mut y) = (0.0, 0.0);
    for (idx, p) in probs.iter().enumerate() {
        let (cx, cy) = h.coords(idx);
        x += cx * p;
        y += cy * p;
    }
    Point2::new(x, y)
}

/// Derivatives of [`soft_argmax`] with respect to every logit.
///
/// Returns `(dx/dh, dy/dh)`, each row-major like the logits, using
/// `dx/dh_k = p_k (x_k - x_hat) / tau`.
pub fn soft_argmax_jacobian(h: &Heatmap, tau: Temperature) -> (Vec<f64>, Vec<f64>) {
    let probs = softmax2d(h, tau);
    let mean = soft_argmax(h, tau);
    probs
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let (cx, cy) = h.coords(idx);
            (p * (cx - mean.x) / tau.0, p * (cy - mean.y) / tau.0)
        })
        .unzip()
}

/// Integer location of the largest logit. Ties go to the smallest row-major
/// index.
pub fn hard_argmax(h: &Heatmap) -> (usize, usize) {
    let mut best = 0;
    for (idx, &v) in h.logits.iter().enumerate() {
        if v > h.logits[best] {
            best = idx;
        }
    }
    (best % h.width, best / h.width)
}

/// Isotropic Gaussian log-density fixture: `-|p - c|^2 / (2 sigma^2)`.
pub fn gaussian_heatmap(
    landmark_id: usize,
    center: Point2<f64>,
    sigma: f64,
    width: usize,
    height: usize,
) -> Result<Heatmap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if !(center.x.is_finite() && center.y.is_finite()) {
        return Err(invalid("heatmap center must be finite"));
    }
    let denom = 2.0 * sigma * sigma;
    Heatmap::from_fn(landmark_id, width, height, |x, y| {
        let dx = x as f64 - center.x;
        let dy = y as f64 - center.y;
        (-(dx * dx + dy * dy) / denom).max(NEG_INF_LOGIT)
    })
}

/// Mean binary cross-entropy between `sigmoid(logits)` and `target`.
///
/// Per pixel `max(x, 0) - x t + ln(1 + exp(-|x|))`.
pub fn bce_with_logits(h: &Heatmap, target: &[f64]) -> Result<f64> {
    if target.len() != h.logits.len() {
        return Err(invalid(format!(
            "target has {} entries, heatmap has {}",
            target.len(),
            h.logits.len()
        )));
    }
    if !target.iter().all(|t| (0.0..=1.0).contains(t)) {
        return Err(invalid("BCE targets must lie in [0, 1]"));
    }
    let total: f64 = h
        .logits
        .iter()
        .zip(target)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum();
    Ok(total / target.len() as f64)
}

const MAGIC: &[u8; 4] = b"HMAP";
const VERSION: u32 = 1;

/// Writes heatmaps in the `HMAP` v1 container: little-endian header
/// `magic, version, count, H, W` followed by `count * H * W` f32 logits.
///
/// Landmark ids are implied by order.
pub fn write_heatmaps<W: Write>(mut w: W, maps: &[Heatmap]) -> Result<(), std::io::Error> {
    let (height, width) = match maps.first() {
        Some(m) => (m.height, m.width),
        None => (0, 0),
    };
    if maps.iter().any(|m| m.height != height || m.width != width) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "all heatmaps in one file must share their dimensions",
        ));
    }
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension overflows u32")
        })
    };
    w.write_all(MAGIC)?;
    for v in [VERSION, dim(maps.len())?, dim(height)?, dim(width)?] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(height * width * 4);
    for m in maps {
        buf.clear();
        for &v in &m.logits {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads an `HMAP` v1 container written by [`write_heatmaps`].
pub fn read_heatmaps<R: Read>(mut r: R) -> Result<Vec<Heatmap>, String> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header)
        .map_err(|e| format!("truncated header: {e}"))?;
    if &header[0..4] != MAGIC {
        return Err("bad magic, expected HMAP".into());
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, count, height, width) = (field(0), field(1), field(2), field(3));
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (count, height, width) = (count as usize, height as usize, width as usize);
    if count > 0 && (height == 0 || width == 0) {
        return Err("zero heatmap dimension".into());
    }
    let per_map = height
        .checked_mul(width)
        .ok_or("heatmap dimensions overflow")?;
    let mut raw = vec![0u8; per_map * 4];
    let mut maps = Vec::with_capacity(count);
    for id in 0..count {
        r.read_exact(&mut raw)
            .map_err(|e| format!("truncated payload in heatmap {id}: {e}"))?;
        let logits = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        maps.push(Heatmap::new(id, width, height, logits).map_err(|e| e.to_string())?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| e.to_string())? != 0 {
        return Err("trailing bytes after payload".into());
    }
    Ok(maps)
}
