//! Synthetic depth observations and stub detections.
//!
//! A scene places meshes at ground-truth poses in front of a camera. Its
//! observation is the joint z-buffer of all objects, optionally perturbed with
//! Gaussian depth noise and pixel dropout. Stub detections stand in for a
//! learned detector: the tight box around each object's visible pixels,
//! jittered per edge.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraIntrinsics, Pose6DoF, TriangleMesh};
use crate::particle::Detection;
use crate::raster::{render_full, BoundingBox, DepthBuffer};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Observed depth image in meters; 0 marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    intrinsics: CameraIntrinsics,
    depths: Vec<f64>,
}

impl DepthImage {
    pub fn new(intrinsics: CameraIntrinsics, depths: Vec<f64>) -> Result<Self> {
        intrinsics.validate()?;
        if depths.len() != intrinsics.pixel_count() {
            return Err(Error::Dimension(format!(
                "{} depths for a {}x{} image",
                depths.len(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if let Some(i) = depths.iter().position(|&d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::Dimension(format!("depth at index {i} is negative or not finite")));
        }
        Ok(Self { intrinsics, depths })
    }

    pub fn blank(intrinsics: CameraIntrinsics) -> Self {
        Self { depths: vec![0.0; intrinsics.pixel_count()], intrinsics }
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    #[inline]
    pub fn raw(&self, x: u32, y: u32) -> f64 {
        self.depths[y as usize * self.intrinsics.width as usize + x as usize]
    }

    /// Valid depth at `(x, y)`.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let d = self.raw(x, y);
        (d > 0.0).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn region(&self, bbox: BoundingBox) -> Result<DepthRegion<'_>> {
        bbox.check_fits(self.width(), self.height())?;
        Ok(DepthRegion { image: self, bbox })
    }

    /// Rounds every depth to whole millimeters, the precision of the on-disk
    /// format.
    pub fn quantized(&self) -> DepthImage {
        let depths = self
            .depths
            .iter()
            .map(|&d| crate::scoring::dequantize_depth(crate::scoring::quantize_depth(d).0))
            .collect();
        DepthImage { intrinsics: self.intrinsics, depths }
    }

    /// Pastes a rendered buffer into a copy of the image, keeping the nearer
    /// value where both are valid.
    fn merge_min(&mut self, buf: &DepthBuffer) {
        let b = buf.bbox();
        let w = self.intrinsics.width as usize;
        for (i, &z) in buf.depths().iter().enumerate() {
            if z == DepthBuffer::EMPTY {
                continue;
            }
            let x = b.x_min as usize + i % b.width() as usize;
            let y = b.y_min as usize + i / b.width() as usize;
            let slot = &mut self.depths[y * w + x];
            if *slot == 0.0 || z < *slot {
                *slot = z;
            }
        }
    }
}

/// Read-only window of a [`DepthImage`].
#[derive(Debug, Clone, Copy)]
pub struct DepthRegion<'a> {
    image: &'a DepthImage,
    bbox: BoundingBox,
}

impl<'a> DepthRegion<'a> {
    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn image(&self) -> &'a DepthImage {
        self.image
    }

    pub fn intrinsics(&self) -> &'a CameraIntrinsics {
        &self.image.intrinsics
    }

    /// Valid depth at absolute pixel `(x, y)` if it lies in the region.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if !self.bbox.contains(x, y) {
            return None;
        }
        self.image.get(x, y)
    }

    pub fn valid_count(&self) -> usize {
        let w = self.image.width() as usize;
        (self.bbox.y_min..=self.bbox.y_max)
            .map(|y| {
                let row = y as usize * w;
                self.image.depths[row + self.bbox.x_min as usize..=row + self.bbox.x_max as usize]
                    .iter()
                    .filter(|&&d| d > 0.0)
                    .count()
            })
            .sum()
    }

    /// Smallest and largest valid depth in the region.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for y in self.bbox.y_min..=self.bbox.y_max {
            for x in self.bbox.x_min..=self.bbox.x_max {
                if let Some(d) = self.image.get(x, y) {
                    range = Some(match range {
                        None => (d, d),
                        Some((lo, hi)) => (lo.min(d), hi.max(d)),
                    });
                }
            }
        }
        range
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// Index into the mesh list handed to [`render_scene`].
    pub mesh: usize,
    pub label: String,
    pub pose: Pose6DoF,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub sigma_m: f64,
    /// Fraction of valid pixels turned invalid, in `[0, 1)`.
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: CameraIntrinsics,
    pub objects: Vec<SceneObject>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self, n_meshes: usize) -> Result<()> {
        self.camera.validate()?;
        if self.objects.is_empty() {
            return Err(Error::InvalidConfig("scene has no objects".into()));
        }
        if let Some(o) = self.objects.iter().find(|o| o.mesh >= n_meshes) {
            return Err(Error::InvalidConfig(format!("object '{}' refers to missing mesh {}", o.label, o.mesh)));
        }
        if !(self.noise.sigma_m >= 0.0 && self.noise.sigma_m.is_finite()) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A single-object scene with a random pose: centered within ±10 cm
/// horizontally and ±8 cm vertically of the optical axis, 0.6 to 0.9 m
/// away, each Euler angle uniform. The pose depends only on `seed`.
pub fn synthetic_scene(label: impl Into<String>, seed: u64, noise: NoiseModel) -> Result<Scene> {
    let mut rng = stream(seed, Purpose::ScenePose, 0, 0);
    let pi = core::f64::consts::PI;
    let pose = Pose6DoF::new(
        rng.random_range(-0.10..0.10),
        rng.random_range(-0.08..0.08),
        rng.random_range(0.6..0.9),
        rng.random_range(-pi..pi),
        rng.random_range(-pi..pi),
        rng.random_range(-pi..pi),
    )?;
    Ok(Scene {
        camera: CameraIntrinsics::kinect(),
        objects: vec![SceneObject { mesh: 0, label: label.into(), pose }],
        noise,
        seed,
    })
}

/// Observation plus, per pixel, the index of the object visible there before
/// noise and dropout were applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub image: DepthImage,
    pub clean: DepthImage,
    pub owner: Vec<Option<u32>>,
}

impl RenderedScene {
    /// Tight box of the pixels where object `index` is the front surface.
    pub fn visible_box(&self, index: usize) -> Option<BoundingBox> {
        let w = self.image.width() as usize;
        let mut b: Option<BoundingBox> = None;
        for (i, o) in self.owner.iter().enumerate() {
            if *o != Some(index as u32) {
                continue;
            }
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            b = Some(match b {
                None => BoundingBox { x_min: x, y_min: y, x_max: x, y_max: y },
                Some(b) => BoundingBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min.min(y),
                    x_max: b.x_max.max(x),
                    y_max: b.y_max.max(y),
                },
            });
        }
        b
    }
}

pub fn render_scene(scene: &Scene, meshes: &[TriangleMesh]) -> Result<DepthImage> {
    Ok(render_scene_detailed(scene, meshes)?.image)
}

pub fn render_scene_detailed(scene: &Scene, meshes: &[TriangleMesh]) -> Result<RenderedScene> {
    scene.validate(meshes.len())?;
    let k = scene.camera;
    let mut clean = DepthImage::blank(k);
    let mut owner = vec![None; k.pixel_count()];
    for (oi, obj) in scene.objects.iter().enumerate() {
        let buf = render_full(&meshes[obj.mesh], &obj.pose.to_transform(), &k);
        let before = clean.depths.clone();
        clean.merge_min(&buf);
        for (i, (&a, &b)) in before.iter().zip(clean.depths.iter()).enumerate() {
            if a != b {
                owner[i] = Some(oi as u32);
            }
        }
    }

    let mut depths = clean.depths.clone();
    if scene.noise.sigma_m > 0.0 {
        let normal = Normal::new(0.0, scene.noise.sigma_m).map_err(|_| Error::InvalidConfig("bad noise sigma".into()))?;
        let mut rng = stream(scene.seed, Purpose::SceneNoise, 0, 0);
        for d in depths.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + normal.sample(&mut rng)).max(crate::raster::NEAR_PLANE);
        }
    }
    if scene.noise.dropout > 0.0 {
        let valid: Vec<usize> = (0..depths.len()).filter(|&i| depths[i] > 0.0).collect();
        let amount = libm::floor(scene.noise.dropout * valid.len() as f64) as usize;
        let mut rng = stream(scene.seed, Purpose::SceneDropout, 0, 0);
        for pick in rand::seq::index::sample(&mut rng, valid.len(), amount) {
            depths[valid[pick]] = 0.0;
        }
    }
    Ok(RenderedScene { image: DepthImage { intrinsics: k, depths }, clean, owner })
}

/// Ground-truth detections with each box edge jittered uniformly by up to
/// `jitter` pixels. Fully occluded objects produce no detection.
pub fn stub_detect(
    scene: &Scene,
    rendered: &RenderedScene,
    jitter: u32,
    conf_range: (f64, f64),
) -> Result<Vec<Detection>> {
    let (lo, hi) = conf_range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidConfig("confidence range must satisfy 0 <= lo <= hi <= 1".into()));
    }
    let (w, h) = (scene.camera.width as i64, scene.camera.height as i64);
    let mut out = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        let Some(tight) = rendered.visible_box(i) else {
            log::warn!("object '{}' is fully occluded; no detection", obj.label);
            continue;
        };
        let mut rng = stream(scene.seed, Purpose::Detection, 0, i as u64);
        let j = jitter as i64;
        let mut shift = |v: u32, max: i64| -> u32 {
            let d = if j > 0 { rng.random_range(-j..=j) } else { 0 };
            (v as i64 + d).clamp(0, max - 1) as u32
        };
        let x0 = shift(tight.x_min, w);
        let y0 = shift(tight.y_min, h);
        let x1 = shift(tight.x_max, w);
        let y1 = shift(tight.y_max, h);
        let bbox = BoundingBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))?;
        let confidence = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out.push(Detection { label: obj.label.clone(), bbox, confidence });
    }
    Ok(out)
}
