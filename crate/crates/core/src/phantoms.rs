//! Ground-truth complex fields for synthetic experiments.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, PhaseMap};

/// Quadratic curvature giving roughly a 6π peak-to-peak span.
pub const DEFAULT_QUADRATIC_ALPHA: f64 = 12.0 * PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhaseProfile {
    Quadratic {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Random,
    Peaks {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    Lens {
        wavelength: f64,
        focal_length: f64,
        pitch: f64,
    },
    Flat,
}

fn default_alpha() -> f64 {
    DEFAULT_QUADRATIC_ALPHA
}

fn default_scale() -> f64 {
    1.0
}

impl PhaseProfile {
    pub fn name(&self) -> &'static str {
        match self {
            PhaseProfile::Quadratic { .. } => "quadratic",
            PhaseProfile::Random => "random",
            PhaseProfile::Peaks { .. } => "peaks",
            PhaseProfile::Lens { .. } => "lens",
            PhaseProfile::Flat => "flat",
        }
    }

    /// Parses a bare kind name with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "quadratic" => PhaseProfile::Quadratic {
                alpha: DEFAULT_QUADRATIC_ALPHA,
            },
            "random" => PhaseProfile::Random,
            "peaks" => PhaseProfile::Peaks { scale: 1.0 },
            "flat" => PhaseProfile::Flat,
            "lens" => {
                return Err(Error::InvalidParameter(
                    "lens phantom needs wavelength, focal_length and pitch".into(),
                ))
            }
            other => return Err(Error::InvalidParameter(format!("unknown phantom kind '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source", content = "path")]
pub enum AmplitudeSource {
    #[default]
    Uniform,
    Image(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub profile: PhaseProfile,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub amplitude: AmplitudeSource,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub field: ComplexField,
    pub phase: PhaseMap,
    pub amplitude: Grid<f64>,
}

/// MATLAB-style `peaks(u, v)`.
pub fn peaks(u: f64, v: f64) -> f64 {
    3.0 * (1.0 - u).powi(2) * (-u * u - (v + 1.0).powi(2)).exp()
        - 10.0 * (u / 5.0 - u.powi(3) - v.powi(5)) * (-u * u - v * v).exp()
        - (1.0 / 3.0) * (-(u + 1.0).powi(2) - v * v).exp()
}

fn linspace(i: usize, n: usize, lo: f64, hi: f64) -> f64 {
    if n == 1 {
        return 0.5 * (lo + hi);
    }
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

pub fn phase_profile(profile: &PhaseProfile, height: usize, width: usize, seed: u64) -> Result<Grid<f64>> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let r2 = |r: usize, c: usize| (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
    Ok(match *profile {
        PhaseProfile::Quadratic { alpha } => {
            let norm = (height.max(width) as f64).powi(2);
            Grid::from_fn(height, width, |r, c| alpha * r2(r, c) / norm)
        }
        PhaseProfile::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Grid::from_fn(height, width, |_, _| rng.random_range(-PI..PI))
        }
        PhaseProfile::Peaks { scale } => Grid::from_fn(height, width, |r, c| {
            let u = linspace(c, width, -3.0, 3.0);
            let v = linspace(r, height, -3.0, 3.0);
            scale * peaks(u, v)
        }),
        PhaseProfile::Lens {
            wavelength,
            focal_length,
            pitch,
        } => {
            if !(wavelength > 0.0 && focal_length != 0.0 && pitch > 0.0) {
                return Err(Error::InvalidParameter(
                    "lens phantom needs wavelength > 0, pitch > 0, focal_length != 0".into(),
                ));
            }
            let k = -PI / (wavelength * focal_length) * pitch * pitch;
            Grid::from_fn(height, width, |r, c| k * r2(r, c))
        }
        PhaseProfile::Flat => Grid::filled(height, width, 0.0),
    })
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.height < 8 || spec.width < 8 {
        return Err(Error::InvalidShape {
            height: spec.height,
            width: spec.width,
            reason: "phantoms need at least 8x8 pixels",
        });
    }
    let phase = phase_profile(&spec.profile, spec.height, spec.width, spec.seed)?;
    let amplitude = match &spec.amplitude {
        AmplitudeSource::Uniform => Grid::filled(spec.height, spec.width, 1.0),
        AmplitudeSource::Image(path) => load_intensity(path, Some((spec.height, spec.width)))?,
    };
    let field = ComplexField::from_polar(&amplitude, &phase)?;
    let phase = match spec.profile {
        PhaseProfile::Random | PhaseProfile::Flat => PhaseMap::wrapped(phase)?,
        _ => PhaseMap::unwrapped(phase)?,
    };
    Ok(Phantom {
        field,
        phase,
        amplitude,
    })
}

/// Reads a binary PGM, scales by `maxval` into `[0, 1]`, and optionally
/// center-crops to `(height, width)`.
pub fn load_intensity(path: impl AsRef<Path>, crop: Option<(usize, usize)>) -> Result<Grid<f64>> {
    let image = parse_pgm(&fs::read(path)?)?;
    match crop {
        Some((h, w)) => center_crop(&image, h, w),
        None => Ok(image),
    }
}

pub fn center_crop<T: Copy>(image: &Grid<T>, height: usize, width: usize) -> Result<Grid<T>> {
    let (h, w) = image.shape();
    if height > h || width > w || height == 0 || width == 0 {
        return Err(Error::ShapeMismatch {
            expected: (height, width),
            actual: (h, w),
        });
    }
    let r0 = (h - height) / 2;
    let c0 = (w - width) / 2;
    Ok(Grid::from_fn(height, width, |r, c| image[(r0 + r, c0 + c)]))
}

/// Binary (P5) PGM, 8- or 16-bit big-endian samples.
pub fn parse_pgm(bytes: &[u8]) -> Result<Grid<f64>> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format("not a binary PGM (expected P5)".into()));
    }
    let width = parse_number(next_token(bytes, &mut pos)?)?;
    let height = parse_number(next_token(bytes, &mut pos)?)?;
    let maxval = parse_number(next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM has an empty dimension".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("malformed PGM header".into()));
    }
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM shape overflow".into()))?;
    let expected = n * bytes_per;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if bytes_per == 1 {
        raster[..expected].iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster[..expected]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / scale)
            .collect()
    };
    Grid::new(height, width, data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("malformed PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed PGM header".into()))
}
