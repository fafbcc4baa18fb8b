//! Ground-truth-labeled simulated atom frames: sampled Gaussian ODs
//! composited onto background/dark frame pairs, plus stand-in synthetic
//! backgrounds for when no experimental library is available.

use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Frame, FrameTriple, GaussianParams};

/// Draws below this width (pixels) are rejected and redrawn; sub-pixel
/// clouds are unresolvable and break fitting.
pub const SIGMA_MIN_PX: f64 = 0.5;

/// Uniform sampling bounds for each Gaussian parameter. Position and width
/// bounds are fractions of the image width/height; `rho`/`b` are in OD
/// units and `theta` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamRanges {
    /// Fraction of W.
    pub x0_frac: (f64, f64),
    /// Fraction of H.
    pub y0_frac: (f64, f64),
    /// Fraction of W.
    pub sigma_x_frac: (f64, f64),
    /// Fraction of H.
    pub sigma_y_frac: (f64, f64),
    pub rho: (f64, f64),
    pub b: (f64, f64),
    pub theta: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            x0_frac: (0.1, 0.9),
            // Published table lists the y0 minimum as a fraction of W,
            // almost certainly a typo; both bounds are exposed here and
            // default to fractions of H.
            y0_frac: (0.1, 0.9),
            sigma_x_frac: (0.0, 0.25),
            sigma_y_frac: (0.0, 0.25),
            rho: (0.0, 3.0),
            b: (-0.05, 0.05),
            theta: (-0.1, 0.1),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let pairs: [(&'static str, (f64, f64)); 7] = [
            ("x0", self.x0_frac),
            ("y0", self.y0_frac),
            ("sigma_x", self.sigma_x_frac),
            ("sigma_y", self.sigma_y_frac),
            ("rho", self.rho),
            ("b", self.b),
            ("theta", self.theta),
        ];
        for (name, (lo, hi)) in pairs {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidRange(name));
            }
        }
        if self.theta.0 < -FRAC_PI_4 || self.theta.1 > FRAC_PI_4 {
            return Err(Error::InvalidRange("theta"));
        }
        Ok(())
    }

    /// Per-parameter pixel-unit bounds for a given image size, in
    /// `[x0, y0, sigma_x, sigma_y, rho, b, theta]` order.
    pub fn scaled(&self, width: usize, height: usize) -> [(f64, f64); 7] {
        let w = width as f64;
        let h = height as f64;
        [
            (self.x0_frac.0 * w, self.x0_frac.1 * w),
            (self.y0_frac.0 * h, self.y0_frac.1 * h),
            (self.sigma_x_frac.0 * w, self.sigma_x_frac.1 * w),
            (self.sigma_y_frac.0 * h, self.sigma_y_frac.1 * h),
            self.rho,
            self.b,
            self.theta,
        ]
    }
}

/// Ordered list of `(bg, dark)` pairs; ordering reflects acquisition time.
#[derive(Debug, Clone)]
pub struct BackgroundLibrary {
    entries: Vec<(Frame, Frame)>,
}

impl BackgroundLibrary {
    pub fn new(entries: Vec<(Frame, Frame)>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::LibraryTooSmall(entries.len()));
        }
        let (w, h) = (entries[0].0.width(), entries[0].0.height());
        for (bg, dark) in &entries {
            if bg.width() != w || bg.height() != h || !bg.same_dims(dark) {
                return Err(Error::DimensionMismatch(w, h, bg.width(), bg.height()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &(Frame, Frame) {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[(Frame, Frame)] {
        &self.entries
    }

    pub fn width(&self) -> usize {
        self.entries[0].0.width()
    }

    pub fn height(&self) -> usize {
        self.entries[0].0.height()
    }
}

/// One simulated shot with its ground truth.
///
/// `triple` carries the bg/dark of library entry `source_bg_index`, while
/// the atoms frame was synthesized against the bg of `synth_bg_index` (the
/// next entry, wrapping) so the presented background differs from the one
/// baked into the atoms image, as in real back-to-back acquisitions.
#[derive(Debug, Clone)]
pub struct LabeledShot {
    pub triple: FrameTriple,
    pub truth: GaussianParams,
    pub source_bg_index: usize,
    pub synth_bg_index: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-item seed derivation.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

pub(crate) fn sample_params_rng(
    ranges: &ParamRanges,
    width: usize,
    height: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianParams> {
    ranges.validate()?;
    let b = ranges.scaled(width, height);
    for k in [2usize, 3] {
        if b[k].1 <= SIGMA_MIN_PX {
            return Err(Error::UnresolvableSigma(SIGMA_MIN_PX));
        }
    }
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.random_range(lo..hi);
    let x0 = draw(rng, b[0]);
    let y0 = draw(rng, b[1]);
    let mut sigma_x = draw(rng, b[2]);
    while sigma_x < SIGMA_MIN_PX {
        sigma_x = draw(rng, b[2]);
    }
    let mut sigma_y = draw(rng, b[3]);
    while sigma_y < SIGMA_MIN_PX {
        sigma_y = draw(rng, b[3]);
    }
    let rho = draw(rng, b[4]);
    let bb = draw(rng, b[5]);
    let theta = draw(rng, b[6]);
    GaussianParams::new(x0, y0, sigma_x, sigma_y, rho, bb, theta)
}

/// One parameter vector drawn uniformly from `ranges` (widths redrawn while
/// below the resolvability floor).
pub fn sample_params(
    ranges: &ParamRanges,
    width: usize,
    height: usize,
    rng_seed: u64,
) -> Result<GaussianParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_params_rng(ranges, width, height, &mut rng)
}

/// Composite a cloud onto a background: `atoms = T*(bg-dark) + dark` with
/// `T = exp(-OD)`, rounded to the nearest count and clamped to 16 bits.
/// No noise is added beyond quantization.
pub fn synthesize_atoms(truth: &GaussianParams, bg: &Frame, dark: &Frame) -> Result<Frame> {
    if !bg.same_dims(dark) {
        return Err(Error::DimensionMismatch(bg.width(), bg.height(), dark.width(), dark.height()));
    }
    truth.validate()?;
    let od = crate::imaging::gaussian_od(truth, bg.width(), bg.height())?;
    let mut counts = Vec::with_capacity(bg.width() * bg.height());
    for i in 0..counts.capacity() {
        let t = (-od.values()[i]).exp();
        let d = dark.counts()[i] as f64;
        let val = t * (bg.counts()[i] as f64 - d) + d;
        counts.push(val.round().clamp(0.0, 65535.0) as u16);
    }
    Frame::new(bg.width(), bg.height(), counts)
}

/// Build `n` labeled shots. Entry `k` is drawn uniformly per shot; the
/// atoms frame is synthesized against entry `k+1`'s bg (wrapping) with
/// entry `k`'s dark, while the presented triple carries entry `k`'s pair.
pub fn build_dataset(
    library: &BackgroundLibrary,
    ranges: &ParamRanges,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<LabeledShot>> {
    ranges.validate()?;
    let len = library.len();
    let (w, h) = (library.width(), library.height());
    let mut shots = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, i as u64));
        let k = rng.random_range(0..len);
        let synth = (k + 1) % len;
        let truth = sample_params_rng(ranges, w, h, &mut rng)?;
        let atoms = synthesize_atoms(&truth, &library.entry(synth).0, &library.entry(k).1)?;
        let triple =
            FrameTriple::new(atoms, library.entry(k).0.clone(), library.entry(k).1.clone())?;
        shots.push(LabeledShot { triple, truth, source_bg_index: k, synth_bg_index: synth });
    }
    Ok(shots)
}

/// Builds a labeled dataset where each shot's atoms frame is synthesized
/// against the *same* background pair it is presented with
/// (`synth_bg_index == source_bg_index`).
///
/// With matched backgrounds the only corruption between the model OD and
/// the recovered OD is 16-bit quantization, so a full 2-D fit of such a
/// shot recovers the truth parameters almost exactly. Use this for
/// identifiability checks and noise-free evaluation; use [`build_dataset`]
/// for realistic training data.
pub fn build_matched_dataset(
    library: &BackgroundLibrary,
    ranges: &ParamRanges,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<LabeledShot>> {
    ranges.validate()?;
    let len = library.len();
    let (w, h) = (library.width(), library.height());
    let mut shots = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, i as u64));
        let k = rng.random_range(0..len);
        let truth = sample_params_rng(ranges, w, h, &mut rng)?;
        let atoms = synthesize_atoms(&truth, &library.entry(k).0, &library.entry(k).1)?;
        let triple =
            FrameTriple::new(atoms, library.entry(k).0.clone(), library.entry(k).1.clone())?;
        shots.push(LabeledShot { triple, truth, source_bg_index: k, synth_bg_index: k });
    }
    Ok(shots)
}

/// Low-frequency sinusoidal fringe pattern added to synthetic backgrounds,
/// mimicking interferometric structure from beam-path imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeSpec {
    /// Peak amplitude in counts.
    pub amplitude: f64,
    /// Wavevector, radians per pixel.
    pub kx: f64,
    pub ky: f64,
    /// Phase offset, radians.
    pub phase: f64,
}

impl FringeSpec {
    pub fn none() -> Self {
        Self { amplitude: 0.0, kx: 0.0, ky: 0.0, phase: 0.0 }
    }
}

pub const SYNTH_DARK_LEVEL: f64 = 100.0;

/// Stand-in `(bg, dark)` pair: flat level plus fringes plus Gaussian count
/// noise; dark is a small constant with the same noise.
pub fn synth_background(
    width: usize,
    height: usize,
    level: f64,
    noise_sd: f64,
    fringe: &FringeSpec,
    rng_seed: u64,
) -> Result<(Frame, Frame)> {
    if !(level > 0.0) || noise_sd < 0.0 || fringe.amplitude < 0.0 {
        return Err(Error::DomainError("background level/noise/fringe out of domain".into()));
    }
    if level + 5.0 * noise_sd >= 65535.0 {
        return Err(Error::DomainError("background level leaves no noise headroom".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::DomainError(e.to_string()))?;
    let quantize = |v: f64| v.round().clamp(0.0, 65535.0) as u16;
    let mut bg = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let fringe_val =
                fringe.amplitude * (fringe.kx * x as f64 + fringe.ky * y as f64 + fringe.phase).sin();
            let noise = if noise_sd > 0.0 { noise_sd * normal.sample(&mut rng) } else { 0.0 };
            bg.push(quantize(level + fringe_val + noise));
        }
    }
    let mut dark = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let noise = if noise_sd > 0.0 { noise_sd * normal.sample(&mut rng) } else { 0.0 };
        dark.push(quantize(SYNTH_DARK_LEVEL + noise));
    }
    Ok((Frame::new(width, height, bg)?, Frame::new(width, height, dark)?))
}

/// Parameters for generating a whole synthetic background library.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthBackgroundConfig {
    pub level: f64,
    pub noise_sd: f64,
    pub fringe_amplitude: f64,
    /// Base fringe wavevector; per-entry direction and phase are jittered.
    pub fringe_kx: f64,
    pub fringe_ky: f64,
}

impl Default for SynthBackgroundConfig {
    fn default() -> Self {
        Self { level: 20000.0, noise_sd: 0.0, fringe_amplitude: 400.0, fringe_kx: 0.23, fringe_ky: 0.11 }
    }
}

/// Library of `n` synthetic pairs with per-entry fringe phase/direction
/// jitter, deterministic under the seed.
pub fn synth_library(
    cfg: &SynthBackgroundConfig,
    width: usize,
    height: usize,
    n: usize,
    rng_seed: u64,
) -> Result<BackgroundLibrary> {
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut meta = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, 0x10_0000 + i as u64));
        let fringe = FringeSpec {
            amplitude: cfg.fringe_amplitude,
            kx: cfg.fringe_kx * meta.random_range(0.9..1.1),
            ky: cfg.fringe_ky * meta.random_range(0.9..1.1),
            phase: meta.random_range(0.0..std::f64::consts::TAU),
        };
        entries.push(synth_background(
            width,
            height,
            cfg.level,
            cfg.noise_sd,
            &fringe,
            derive_seed(rng_seed, i as u64),
        )?);
    }
    BackgroundLibrary::new(entries)
}
