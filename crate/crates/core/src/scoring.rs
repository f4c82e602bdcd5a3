//! Pixel-wise inlier comparison and sample weights.
//!
//! A rendered pixel is an inlier when the observed depth at the same pixel is
//! close enough. The 3D form compares back-projected points; the 1D form
//! compares depths only. On a fixed pixel the two differ by the constant ray
//! factor [`CameraIntrinsics::ray_scale`], so the 3D test at threshold `eps`
//! is the 1D test at `eps / scale`.

use crate::geometry::{back_project, CameraIntrinsics};
use crate::raster::DepthBuffer;
use crate::scene::DepthRegion;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InlierMode {
    #[default]
    Depth1d,
    Euclidean3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quantize {
    #[default]
    Off,
    /// Depths rounded to unsigned 16-bit millimeters before comparison.
    FixedPointMm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InlierParams {
    pub epsilon: f64,
    pub mode: InlierMode,
    pub quantize: Quantize,
}

impl Default for InlierParams {
    fn default() -> Self {
        Self { epsilon: 0.01, mode: InlierMode::Depth1d, quantize: Quantize::Off }
    }
}

impl InlierParams {
    pub fn new(epsilon: f64, mode: InlierMode, quantize: Quantize) -> Result<Self> {
        let p = Self { epsilon, mode, quantize };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Inlier, observed and rendered pixel counts for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InlierScore {
    pub n_inlier: u64,
    pub n_observed: u64,
    pub n_rendered: u64,
    /// Depths that hit the 16-bit ceiling in quantized mode.
    pub saturated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for WeightCoeffs {
    fn default() -> Self {
        Self { alpha: 0.4, beta: 0.4, gamma: 0.2 }
    }
}

impl WeightCoeffs {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let c = Self { alpha, beta, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(self.alpha) && in_unit(self.beta) && in_unit(self.gamma)) {
            return Err(Error::InvalidConfig("weight coefficients must lie in [0, 1]".into()));
        }
        if (self.alpha + self.beta + self.gamma - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("weight coefficients must sum to 1".into()));
        }
        Ok(())
    }
}

pub fn inlier_1d(z_obs: f64, z_rend: f64, eps: f64) -> bool {
    (z_obs - z_rend).abs() < eps
}

/// Euclidean distance test between the two points reconstructed at the same
/// pixel.
pub fn inlier_3d(px: f64, py: f64, z_obs: f64, z_rend: f64, k: &CameraIntrinsics, eps: f64) -> bool {
    match (back_project(k, px, py, z_obs), back_project(k, px, py, z_rend)) {
        (Ok(a), Ok(b)) => (a - b).norm() < eps,
        _ => false,
    }
}

pub const QUANT_MAX_MM: u16 = u16::MAX;

/// Rounds meters to the nearest millimeter (half up). Returns the value and
/// whether it saturated at either end of the 16-bit range.
pub fn quantize_depth(z: f64) -> (u16, bool) {
    let mm = libm::floor(z * 1000.0 + 0.5);
    if !(mm >= 0.0) {
        (0, true)
    } else if mm > QUANT_MAX_MM as f64 {
        (QUANT_MAX_MM, true)
    } else {
        (mm as u16, false)
    }
}

pub fn dequantize_depth(mm: u16) -> f64 {
    mm as f64 / 1000.0
}

/// Streaming scorer: feed rendered pixels one at a time, then call
/// [`ScoreAccumulator::finish`]. Counts do not depend on the feed order.
#[derive(Debug)]
pub struct ScoreAccumulator<'a> {
    observed: &'a DepthRegion<'a>,
    params: InlierParams,
    score: InlierScore,
}

impl<'a> ScoreAccumulator<'a> {
    pub fn new(observed: &'a DepthRegion<'a>, params: InlierParams) -> Self {
        Self { observed, params, score: InlierScore::default() }
    }

    #[inline]
    pub fn push(&mut self, x: u32, y: u32, z_rend: f64) {
        self.score.n_rendered += 1;
        let Some(z_obs) = self.observed.get(x, y) else {
            return;
        };
        let eps = self.params.epsilon;
        let hit = match self.params.quantize {
            Quantize::Off => match self.params.mode {
                InlierMode::Depth1d => inlier_1d(z_obs, z_rend, eps),
                InlierMode::Euclidean3d => {
                    inlier_3d(x as f64, y as f64, z_obs, z_rend, self.observed.intrinsics(), eps)
                }
            },
            Quantize::FixedPointMm => {
                let (qo, so) = quantize_depth(z_obs);
                let (qr, sr) = quantize_depth(z_rend);
                self.score.saturated += so as u64 + sr as u64;
                let dz = (qo as i32 - qr as i32).unsigned_abs() as f64;
                let eps_mm = eps * 1000.0;
                match self.params.mode {
                    InlierMode::Depth1d => dz < eps_mm,
                    InlierMode::Euclidean3d => dz * self.observed.intrinsics().ray_scale(x as f64, y as f64) < eps_mm,
                }
            }
        };
        self.score.n_inlier += hit as u64;
    }

    pub fn finish(mut self) -> InlierScore {
        self.score.n_observed = self.observed.valid_count() as u64;
        if self.score.saturated > 0 {
            log::warn!("{} depth values saturated during quantization", self.score.saturated);
        }
        self.score
    }
}

/// Scores a materialized render against the observed crop over the same box.
pub fn score_region(rendered: &DepthBuffer, observed: &DepthRegion<'_>, params: &InlierParams) -> Result<InlierScore> {
    if rendered.bbox() != observed.bbox() {
        return Err(Error::BoxMismatch);
    }
    let b = rendered.bbox();
    let mut acc = ScoreAccumulator::new(observed, *params);
    let w = b.width() as usize;
    for (i, &z) in rendered.depths().iter().enumerate() {
        if z != DepthBuffer::EMPTY {
            acc.push(b.x_min + (i % w) as u32, b.y_min + (i / w) as u32, z);
        }
    }
    Ok(acc.finish())
}

/// Weighted sum of the two inlier ratios and the detector confidence, before
/// clamping. A ratio with a zero denominator contributes 0.
pub fn raw_weight(s: &InlierScore, confidence: f64, c: &WeightCoeffs) -> f64 {
    let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    c.alpha * ratio(s.n_inlier, s.n_observed) + c.beta * ratio(s.n_inlier, s.n_rendered) + c.gamma * confidence
}

/// [`raw_weight`] clamped to `[0, 1]`.
pub fn compute_weight(s: &InlierScore, confidence: f64, c: &WeightCoeffs) -> f64 {
    let w = raw_weight(s, confidence, c);
    if w > 1.0 {
        log::debug!("weight {w} clamped to 1 (n_inlier {} > n_observed {})", s.n_inlier, s.n_observed);
    }
    w.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BoundingBox;
    use crate::scene::DepthImage;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn inlier_1d_examples() {
        assert!(inlier_1d(1.0, 1.0, 0.01));
        assert!(!inlier_1d(1.0, 1.01, 0.01));
        assert!(inlier_1d(1.0, 1.0099, 0.01));
    }

    #[test]
    fn inlier_3d_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        // principal point: identical to the depth test
        for dz in [0.0, 0.005, 0.0099, 0.0101, 0.02] {
            assert_eq!(inlier_3d(320.0, 240.0, 1.0, 1.0 + dz, &k, 0.01), inlier_1d(1.0, 1.0 + dz, 0.01));
        }
        // 45 degree ray: distance = dz * sqrt(2)
        assert!(!inlier_3d(820.0, 240.0, 1.0, 1.008, &k, 0.01));
        assert!(inlier_1d(1.0, 1.008, 0.01));
        assert!(inlier_3d(13.0, 470.0, 2.5, 2.5, &k, 0.01));
    }

    #[test]
    fn weight_examples() {
        let c = WeightCoeffs::default();
        let perfect = InlierScore { n_inlier: 70, n_observed: 70, n_rendered: 70, saturated: 0 };
        assert!((compute_weight(&perfect, 1.0, &c) - 1.0).abs() < 1e-15);
        assert_eq!(compute_weight(&InlierScore::default(), 0.0, &c), 0.0);
        let s = InlierScore { n_inlier: 50, n_observed: 100, n_rendered: 200, saturated: 0 };
        let w = compute_weight(&s, 0.9, &WeightCoeffs::new(0.4, 0.4, 0.2).unwrap());
        assert!((w - 0.48).abs() < 1e-12);
        let over = InlierScore { n_inlier: 50, n_observed: 10, n_rendered: 50, saturated: 0 };
        assert!(raw_weight(&over, 1.0, &c) > 1.0);
        assert_eq!(compute_weight(&over, 1.0, &c), 1.0);
    }

    #[test]
    fn coeff_validation() {
        assert!(WeightCoeffs::new(0.5, 0.5, 0.5).is_err());
        assert!(WeightCoeffs::new(-0.1, 0.6, 0.5).is_err());
        assert!(InlierParams::new(0.0, InlierMode::Depth1d, Quantize::Off).is_err());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_depth(1.0005), (1001, false));
        assert_eq!(quantize_depth(0.9994), (999, false));
        assert_eq!(quantize_depth(70.0), (u16::MAX, true));
        assert_eq!(quantize_depth(-1.0), (0, true));
    }

    fn image(w: u32, h: u32, d: Vec<f64>) -> DepthImage {
        let k = CameraIntrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        DepthImage::new(k, d).unwrap()
    }

    #[test]
    fn self_match_and_shift() {
        let img = image(4, 3, (0..12).map(|i| if i % 5 == 0 { 0.0 } else { 1.0 + i as f64 * 0.01 }).collect());
        let b = BoundingBox::full(4, 3);
        let region = img.region(b).unwrap();
        let rendered = DepthBuffer::from_parts(b, img.depths().to_vec()).unwrap();
        let s = score_region(&rendered, &region, &InlierParams::default()).unwrap();
        assert_eq!(s.n_inlier, s.n_rendered);
        assert_eq!(s.n_observed, 9);
        let shifted: Vec<f64> = img.depths().iter().map(|&d| if d > 0.0 { d + 0.02 } else { 0.0 }).collect();
        let rendered = DepthBuffer::from_parts(b, shifted).unwrap();
        assert_eq!(score_region(&rendered, &region, &InlierParams::default()).unwrap().n_inlier, 0);
    }

    #[test]
    fn box_mismatch_is_an_error() {
        let img = image(4, 3, vec![1.0; 12]);
        let region = img.region(BoundingBox::full(4, 3)).unwrap();
        let rendered = DepthBuffer::empty(BoundingBox::new(0, 0, 1, 1).unwrap());
        assert_eq!(score_region(&rendered, &region, &InlierParams::default()), Err(Error::BoxMismatch));
    }
}
