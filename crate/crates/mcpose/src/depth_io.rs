//! Depth images on disk: a binary 16-bit PGM of millimeters plus a JSON
//! sidecar holding the intrinsics.
//!
//! Depths are stored as whole millimeters, so a save/load round trip is exact
//! for images already on the millimeter grid and rounds others to it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mcpose_core::scoring::{dequantize_depth, quantize_depth};
use mcpose_core::{CameraIntrinsics, DepthImage};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Millimeters per stored unit.
    pub depth_scale_mm: f64,
}

impl Sidecar {
    pub fn for_intrinsics(k: &CameraIntrinsics) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height, depth_scale_mm: 1.0 }
    }

    pub fn intrinsics(&self) -> mcpose_core::Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

/// The sidecar that belongs to `pgm`: same stem, `.json` extension.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Encodes depths as a P5 PGM with maxval 65535, big-endian samples. Depths
/// beyond 65.535 m saturate; the count of saturated pixels is returned.
pub fn encode_pgm(image: &DepthImage) -> (Vec<u8>, usize) {
    let mut out = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    out.reserve(image.depths().len() * 2);
    let mut saturated = 0;
    for &z in image.depths() {
        let (mm, sat) = if z > 0.0 { quantize_depth(z) } else { (0, false) };
        saturated += sat as usize;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    (out, saturated)
}

/// Parsed PGM raster: dimensions, maxval and samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: u32,
    pub height: u32,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Decodes a binary PGM. Header fields may be separated by any whitespace
/// and `#` comments; samples are one byte when maxval < 256, else two bytes
/// big-endian.
pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(format!("not a binary PGM (magic '{magic}')"));
    }
    let num = |s: String, what: &str| s.parse::<u32>().map_err(|_| format!("bad {what} '{s}'"));
    let width = num(token()?, "width")?;
    let height = num(token()?, "height")?;
    let maxval = num(token()?, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).ok_or("truncated header")?;
    let n = width as usize * height as usize;
    let wide = maxval > 255;
    let need = if wide { n * 2 } else { n };
    if data.len() < need {
        return Err(format!("truncated raster: {} of {need} bytes", data.len()));
    }
    let samples = if wide {
        data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm { width, height, maxval: maxval as u16, samples })
}

/// Writes `<path>` and its sidecar.
pub fn save_depth(path: &Path, image: &DepthImage) -> CliResult<()> {
    let (bytes, saturated) = encode_pgm(image);
    if saturated > 0 {
        log::warn!("{}: {saturated} depths beyond 65.535 m saturated", path.display());
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::write(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&Sidecar::for_intrinsics(image.intrinsics())).expect("plain struct");
    fs::write(&side, json + "\n").map_err(|e| CliError::write(&side, e))
}

/// Reads `<path>` and its sidecar, checking that they agree.
pub fn load_depth(path: &Path) -> CliResult<DepthImage> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CliError::read(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| CliError::read(&side, e))?;
    let k = meta.intrinsics().map_err(|e| CliError::read(&side, e))?;
    if !(meta.depth_scale_mm > 0.0 && meta.depth_scale_mm.is_finite()) {
        return Err(CliError::read(&side, "depth_scale_mm must be positive"));
    }
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    let pgm = decode_pgm(&bytes).map_err(|e| CliError::read(path, e))?;
    if (pgm.width, pgm.height) != (meta.width, meta.height) {
        return Err(CliError::read(
            path,
            format!("image is {}x{} but sidecar says {}x{}", pgm.width, pgm.height, meta.width, meta.height),
        ));
    }
    let depths = pgm
        .samples
        .iter()
        .map(|&v| if meta.depth_scale_mm == 1.0 { dequantize_depth(v) } else { v as f64 * meta.depth_scale_mm / 1000.0 })
        .collect();
    DepthImage::new(k, depths).map_err(|e| CliError::read(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 3.5, 2.5, 8, 6).unwrap()
    }

    #[test]
    fn known_pixel_values() {
        let mut bytes = b"P5\n# golden\n3 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x00, 0x00, 0x03, 0xE8, 0xFF, 0xFF]);
        let pgm = decode_pgm(&bytes).unwrap();
        assert_eq!((pgm.width, pgm.height, pgm.maxval), (3, 1, 65535));
        assert_eq!(pgm.samples, vec![0, 1000, 65535]);
    }

    #[test]
    fn eight_bit_raster() {
        let pgm = decode_pgm(b"P5 2 1 255\n\x07\xff").unwrap();
        assert_eq!(pgm.samples, vec![7, 255]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").unwrap_err().contains("magic"));
        assert!(decode_pgm(b"P5\n2 2\n65535\n\x00\x01").unwrap_err().contains("truncated"));
        assert!(decode_pgm(b"P5\n2").unwrap_err().contains("truncated"));
        assert!(decode_pgm(b"P5\n1 1\n70000\n\x00\x00").unwrap_err().contains("maxval"));
    }

    #[test]
    fn encode_rounds_to_millimeters() {
        let k = small();
        let mut depths = vec![0.0; 48];
        depths[1] = 0.7504;
        depths[2] = 0.75051;
        depths[3] = 70.0;
        let img = DepthImage::new(k, depths).unwrap();
        let (bytes, saturated) = encode_pgm(&img);
        assert_eq!(saturated, 1);
        let pgm = decode_pgm(&bytes).unwrap();
        assert_eq!(&pgm.samples[..4], &[0, 750, 751, 65535]);
    }
}
