//! Calibrated measurement noise.
//!
//! SNR is `10 log10(Σ y² / Σ (ŷ - y)²)` over the pixels of a frame. The noise
//! scale is chosen so the *expected* noise power, including the effect of
//! clamping negative samples to zero, meets the target.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;

/// Photon-scale bisection bracket and iteration count.
pub const GAMMA_BRACKET: (f64, f64) = (1e-3, 1e12);
pub const BISECTION_STEPS: usize = 60;
/// Beyond this many standard deviations above zero the clamp changes the
/// noise power by less than one part in 10¹⁶.
const CLAMP_NEGLIGIBLE: f64 = 8.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    Gaussian,
    PoissonGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    /// `null` in JSON for the noiseless `+∞`.
    #[serde(with = "infinite_as_null")]
    pub target_snr_db: f64,
    #[serde(default = "default_read_sigma")]
    pub read_sigma_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn default_read_sigma() -> f64 {
    0.01
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            model: NoiseModel::None,
            target_snr_db: f64::INFINITY,
            read_sigma_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(target_snr_db: f64, seed: u64) -> Self {
        Self {
            model: NoiseModel::Gaussian,
            target_snr_db,
            read_sigma_fraction: 0.0,
            seed,
        }
    }

    pub fn poisson_gaussian(target_snr_db: f64, read_sigma_fraction: f64, seed: u64) -> Self {
        Self {
            model: NoiseModel::PoissonGaussian,
            target_snr_db,
            read_sigma_fraction,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.model == NoiseModel::None {
            return Ok(());
        }
        if !self.target_snr_db.is_finite() {
            return Err(Error::InvalidParameter("target SNR must be finite".into()));
        }
        if !(self.read_sigma_fraction >= 0.0 && self.read_sigma_fraction.is_finite()) {
            return Err(Error::InvalidParameter("read-sigma-fraction must be >= 0".into()));
        }
        Ok(())
    }
}

/// Noise scale solved by calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Calibration {
    Identity,
    Gaussian { sigma: f64 },
    PoissonGaussian { gamma: f64, read_sigma: f64 },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[(max(Y, 0) - y)²]` for `Y ~ N(y, variance)`.
pub fn clamped_noise_power(y: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return 0.0;
    }
    let sigma = variance.sqrt();
    let a = -y / sigma;
    if a < -CLAMP_NEGLIGIBLE {
        return variance;
    }
    let tail = 1.0 - std_normal_cdf(a) + a * std_normal_pdf(a);
    variance * tail.max(0.0) + y * y * std_normal_cdf(a)
}

/// Chooses the noise scale for `frame` so the expected SNR hits the target.
pub fn calibrate(frame: &Grid<f64>, noise: &NoiseSpec) -> Result<Calibration> {
    noise.validate()?;
    let signal: f64 = frame.data().iter().map(|y| y * y).sum();
    if noise.model == NoiseModel::None || signal == 0.0 {
        return Ok(Calibration::Identity);
    }
    let target = signal / 10f64.powf(noise.target_snr_db / 10.0);
    match noise.model {
        NoiseModel::None => unreachable!(),
        NoiseModel::Gaussian => {
            let power = |sigma: f64| -> f64 {
                let v = sigma * sigma;
                frame.data().iter().map(|&y| clamped_noise_power(y, v)).sum()
            };
            // unclamped closed form; clamping only removes power, so it is a lower bound
            let lo = (target / frame.len() as f64).sqrt();
            let mut hi = lo;
            while power(hi) < target {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::UnachievableSnr("gaussian sigma diverged".into()));
                }
            }
            let mut lo = lo;
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if power(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(Calibration::Gaussian { sigma: 0.5 * (lo + hi) })
        }
        NoiseModel::PoissonGaussian => {
            let read_sigma = noise.read_sigma_fraction * frame.mean();
            let read_var = read_sigma * read_sigma;
            let power = |gamma: f64| -> f64 {
                frame
                    .data()
                    .iter()
                    .map(|&y| clamped_noise_power(y, y.max(0.0) / gamma + read_var))
                    .sum()
            };
            let (mut lo, mut hi) = (GAMMA_BRACKET.0.ln(), GAMMA_BRACKET.1.ln());
            if power(hi.exp()) > target {
                return Err(Error::UnachievableSnr(format!(
                    "read-noise floor exceeds the {} dB target",
                    noise.target_snr_db
                )));
            }
            if power(lo.exp()) < target {
                return Err(Error::UnachievableSnr(format!(
                    "{} dB needs fewer photons than the calibration bracket allows",
                    noise.target_snr_db
                )));
            }
            // power decreases with gamma
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if power(mid.exp()) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(Calibration::PoissonGaussian {
                gamma: (0.5 * (lo + hi)).exp(),
                read_sigma,
            })
        }
    }
}

/// Draws a noisy copy of a nonnegative `frame`.
pub fn apply_noise<R: Rng + ?Sized>(frame: &Grid<f64>, noise: &NoiseSpec, rng: &mut R) -> Result<Grid<f64>> {
    if let Some(i) = frame.data().iter().position(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "frame sample {i} is negative or non-finite"
        )));
    }
    let cal = calibrate(frame, noise)?;
    Ok(apply_calibrated(frame, cal, rng))
}

pub fn apply_calibrated<R: Rng + ?Sized>(frame: &Grid<f64>, cal: Calibration, rng: &mut R) -> Grid<f64> {
    match cal {
        Calibration::Identity => frame.clone(),
        Calibration::Gaussian { sigma } => frame.map(|&y| {
            let n: f64 = rng.sample(StandardNormal);
            (y + sigma * n).max(0.0)
        }),
        Calibration::PoissonGaussian { gamma, read_sigma } => frame.map(|&y| {
            let lambda = gamma * y;
            let counts = if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(lambda)
            } else {
                0.0
            };
            let n: f64 = rng.sample(StandardNormal);
            (counts / gamma + read_sigma * n).max(0.0)
        }),
    }
}

/// `10 log10(Σ clean² / Σ (noisy - clean)²)`; `+∞` when the frames agree.
pub fn empirical_snr(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|y| y * y).sum();
    let err: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a) * (b - a)).sum();
    if err == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / err).log10()
}

/// SplitMix64 finalizer; used to derive independent per-frame streams.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for frame `(k, q)`: `seed ⊕ hash(k, q)`.
pub fn frame_seed(seed: u64, k: u64, q: u64) -> u64 {
    seed ^ mix64(k.wrapping_mul(4).wrapping_add(q).wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn none_is_identity() {
        let f = Grid::from_fn(4, 4, |r, c| (r + c) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_noise(&f, &NoiseSpec::none(), &mut rng).unwrap(), f);
    }

    #[test]
    fn gaussian_sigma_on_constant_frame() {
        let f = Grid::filled(64, 64, 1.0);
        let cal = calibrate(&f, &NoiseSpec::gaussian(22.0, 0)).unwrap();
        let Calibration::Gaussian { sigma } = cal else { panic!() };
        let expected = 10f64.powf(-22.0 / 20.0);
        assert!((sigma - expected).abs() < 1e-9, "{sigma} vs {expected}");
        assert!((sigma - 0.0794).abs() < 1e-4);
    }

    #[test]
    fn gaussian_sigma_empirical_snr_over_a_million_samples() {
        let f = Grid::filled(1000, 1000, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = apply_noise(&f, &NoiseSpec::gaussian(22.0, 0), &mut rng).unwrap();
        let snr = empirical_snr(f.data(), noisy.data());
        assert!((snr - 22.0).abs() < 0.02, "{snr}");
    }

    #[test]
    fn clamped_power_limits() {
        // far from zero: plain variance; at zero: half the variance
        assert!((clamped_noise_power(100.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((clamped_noise_power(0.0, 4.0) - 2.0).abs() < 1e-12);
        assert_eq!(clamped_noise_power(3.0, 0.0), 0.0);
    }

    #[test]
    fn clamped_power_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (y, v) in [(0.3f64, 0.25f64), (1.0, 1.0), (0.05, 0.01)] {
            let n = 400_000;
            let s = v.sqrt();
            let mc: f64 = (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let yy = (y + s * z).max(0.0);
                    (yy - y) * (yy - y)
                })
                .sum::<f64>()
                / n as f64;
            let exact = clamped_noise_power(y, v);
            assert!((mc - exact).abs() / exact < 0.01, "{y} {v}: {mc} vs {exact}");
        }
    }

    #[test]
    fn poisson_gaussian_thirteen_db() {
        let f = Grid::from_fn(64, 64, |r, c| 2.0 + 2.0 * ((r as f64) * 0.3 + (c as f64) * 0.17).cos());
        let noise = NoiseSpec::poisson_gaussian(13.0, 0.01, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let noisy = apply_noise(&f, &noise, &mut rng).unwrap();
            let snr = empirical_snr(f.data(), noisy.data());
            assert!((12.5..=13.5).contains(&snr), "{snr}");
        }
    }

    #[test]
    fn read_noise_floor_is_unachievable() {
        let f = Grid::filled(16, 16, 1.0);
        // read sigma = mean -> SNR can never exceed 0 dB
        let noise = NoiseSpec::poisson_gaussian(10.0, 1.0, 0);
        assert!(matches!(calibrate(&f, &noise), Err(Error::UnachievableSnr(_))));
    }

    #[test]
    fn negative_frame_is_rejected() {
        let f = Grid::filled(2, 2, -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_noise(&f, &NoiseSpec::gaussian(10.0, 0), &mut rng).is_err());
    }

    #[test]
    fn snr_sentinels() {
        assert_eq!(empirical_snr(&[1.0, 2.0], &[1.0, 2.0]), f64::INFINITY);
        assert!(empirical_snr(&[1.0, 2.0], &[2.0, 4.0]).abs() < 1e-12);
    }
}
