//! Synthetic binaural magnitude spectrograms.
//!
//! Each sound category owns a fixed spectro-temporal envelope. A rendered
//! observation scales the envelope by a distance attenuation and by
//! direction-dependent left/right gains (an interaural level difference).

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// Total number of sound categories.
pub const NUM_CATEGORIES: usize = 12;
/// Categories available during training; the rest are only used for testing.
pub const NUM_HEARD: usize = 8;
/// Minimum pairwise relative distance between category envelopes.
pub const MIN_SIGNATURE_DISTANCE: f64 = 0.2;

pub fn heard_categories() -> Vec<usize> {
    (0..NUM_HEARD).collect()
}

pub fn unheard_categories() -> Vec<usize> {
    (NUM_HEARD..NUM_CATEGORIES).collect()
}

pub fn is_heard(category: usize) -> bool {
    category < NUM_HEARD
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcousticConfig {
    pub bins: usize,
    pub frames: usize,
    /// Interaural level difference coefficient, in [0, 1).
    pub ild: f32,
    pub noise_snr_db: Option<f32>,
    pub dataset_seed: u64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            frames: 8,
            ild: 0.8,
            noise_snr_db: None,
            dataset_seed: 0,
        }
    }
}

impl AcousticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 4 || self.frames < 4 {
            return Err(Error::InvalidArgument(format!(
                "spectrogram must be at least 4x4, got {}x{}",
                self.bins, self.frames
            )));
        }
        if !(0.0..1.0).contains(&self.ild) {
            return Err(Error::InvalidArgument(format!("ild coefficient {} outside [0, 1)", self.ild)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategorySignature {
    pub category: usize,
    pub bins: usize,
    pub frames: usize,
    /// Row-major `bins x frames`.
    pub envelope: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinauralSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

impl BinauralSpectrogram {
    pub fn energy(&self) -> (f64, f64) {
        let e = |v: &[f32]| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>();
        (e(&self.left), e(&self.right))
    }

    pub fn mean_power(&self) -> f64 {
        let (l, r) = self.energy();
        (l + r) / (2 * self.left.len()) as f64
    }

    pub fn is_valid(&self) -> bool {
        self.left.iter().chain(&self.right).all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Smooth random spectral envelope times a category-specific temporal
/// modulation, normalized to unit mean.
pub fn make_signature(category: usize, dataset_seed: u64, bins: usize, frames: usize) -> Result<CategorySignature> {
    if bins < 4 || frames < 4 {
        return Err(Error::InvalidArgument(format!("signature must be at least 4x4, got {bins}x{frames}")));
    }
    let mut rng = seed::stream(dataset_seed, "signature", category as u64);
    let harmonics: Vec<(f64, f64)> = (1..=4)
        .map(|j| {
            let amp: f64 = rng.sample::<f64, _>(StandardNormal) * 0.8 / j as f64;
            (amp, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let depth = rng.random_range(0.3..0.9);
    let rate = f64::from(rng.random_range(1u32..=3));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut envelope = Vec::with_capacity(bins * frames);
    for f in 0..bins {
        let u = f as f64 / bins as f64;
        let log_level: f64 = harmonics
            .iter()
            .enumerate()
            .map(|(j, (a, p))| a * (std::f64::consts::PI * (j + 1) as f64 * u + p).cos())
            .sum();
        let spectral = log_level.exp();
        for t in 0..frames {
            let v = t as f64 / frames as f64;
            let modulation = 1.0 + depth * (std::f64::consts::TAU * rate * v + phase + u * rate).sin();
            envelope.push(spectral * modulation);
        }
    }
    let mean = envelope.iter().sum::<f64>() / envelope.len() as f64;
    Ok(CategorySignature {
        category,
        bins,
        frames,
        envelope: envelope.into_iter().map(|x| (x / mean) as f32).collect(),
    })
}

/// `||a - b|| / mean(||a||, ||b||)` in the Frobenius norm.
pub fn relative_distance(a: &CategorySignature, b: &CategorySignature) -> f64 {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let diff: f64 = a
        .envelope
        .iter()
        .zip(&b.envelope)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / (0.5 * (norm(&a.envelope) + norm(&b.envelope)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignatureSet {
    /// Seed actually used; differs from the requested one if regeneration was
    /// needed to keep categories apart.
    pub seed: u64,
    pub signatures: Vec<CategorySignature>,
}

impl SignatureSet {
    pub fn generate(dataset_seed: u64, count: usize, bins: usize, frames: usize) -> Result<Self> {
        for attempt in 0..64u64 {
            let seed = if attempt == 0 { dataset_seed } else { seed::derive(dataset_seed, "signature-retry", attempt) };
            let signatures = (0..count)
                .map(|c| make_signature(c, seed, bins, frames))
                .collect::<Result<Vec<_>>>()?;
            let separated = signatures.iter().enumerate().all(|(i, a)| {
                signatures[i + 1..]
                    .iter()
                    .all(|b| relative_distance(a, b) >= MIN_SIGNATURE_DISTANCE)
            });
            if separated {
                return Ok(Self { seed, signatures });
            }
        }
        Err(Error::Generation { seed: dataset_seed, reason: "category signatures not separable".into() })
    }

    pub fn for_config(cfg: &AcousticConfig) -> Result<Self> {
        cfg.validate()?;
        Self::generate(cfg.dataset_seed, NUM_CATEGORIES, cfg.bins, cfg.frames)
    }

    pub fn get(&self, category: usize) -> Result<&CategorySignature> {
        self.signatures
            .get(category)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sound category {category}")))
    }

    /// `signature <id> <bins> <frames> <seed>` followed by `bins` rows of
    /// `frames` values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.signatures {
            let _ = writeln!(out, "signature {} {} {} {}", s.category, s.bins, s.frames, self.seed);
            for row in s.envelope.chunks(s.frames) {
                let cells: Vec<String> = row.iter().map(f32::to_string).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        }
        out
    }
}

pub fn attenuation(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

/// Left and right gains; they always sum to one.
pub fn ild_gains(alpha: f64, beta: f64, ild: f64) -> (f64, f64) {
    let s = ild * beta.cos() * alpha.sin();
    (0.5 * (1.0 + s), 0.5 * (1.0 - s))
}

pub fn render(sig: &CategorySignature, distance: f64, alpha: f64, beta: f64, ild: f32) -> BinauralSpectrogram {
    let a = attenuation(distance.max(0.0));
    let (gl, gr) = ild_gains(alpha, beta, f64::from(ild));
    let (sl, sr) = ((a * gl) as f32, (a * gr) as f32);
    BinauralSpectrogram {
        bins: sig.bins,
        frames: sig.frames,
        left: sig.envelope.iter().map(|&e| sl * e).collect(),
        right: sig.envelope.iter().map(|&e| sr * e).collect(),
    }
}

/// Adds zero-mean Gaussian noise at the requested signal-to-noise ratio
/// without clamping. An infinite SNR returns the input unchanged.
pub fn add_noise_unclamped<R: Rng + ?Sized>(
    spec: &BinauralSpectrogram,
    snr_db: f64,
    rng: &mut R,
) -> Result<BinauralSpectrogram> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(spec.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr {snr_db} dB")));
    }
    let power = spec.mean_power();
    if power <= 0.0 {
        return Err(Error::EmptyInput("spectrogram has zero energy"));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut noisy = |v: &[f32]| -> Vec<f32> { v.iter().map(|&x| (f64::from(x) + normal.sample(rng)) as f32).collect() };
    let left = noisy(&spec.left);
    let right = noisy(&spec.right);
    Ok(BinauralSpectrogram { left, right, ..*spec })
}

/// [`add_noise_unclamped`] followed by clamping negative magnitudes to zero.
pub fn add_noise<R: Rng + ?Sized>(spec: &BinauralSpectrogram, snr_db: f64, rng: &mut R) -> Result<BinauralSpectrogram> {
    let mut out = add_noise_unclamped(spec, snr_db, rng)?;
    for v in out.left.iter_mut().chain(out.right.iter_mut()) {
        *v = v.max(0.0);
    }
    Ok(out)
}

pub fn add_depth_noise<R: Rng + ?Sized>(depth: &[f32], stddev: f32, max_depth: f32, rng: &mut R) -> Vec<f32> {
    if stddev <= 0.0 {
        return depth.to_vec();
    }
    depth
        .iter()
        .map(|&d| (d + stddev * rng.sample::<f32, _>(StandardNormal)).clamp(0.0, max_depth))
        .collect()
}
