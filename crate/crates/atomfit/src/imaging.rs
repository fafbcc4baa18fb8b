//! Physical and geometric model: transmission, optical density, and the
//! rotated 2-D Gaussian OD surface with its analytic Jacobian.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixels where `bg - dark` falls at or below this are treated as dead.
pub const DEFAULT_BG_FLOOR: f64 = 1e-6;
/// Transmission clamp; caps OD at 6.
pub const DEFAULT_T_FLOOR: f64 = 2.478752176666358e-3; // e^-6

pub const MIN_FRAME_DIM: usize = 8;
pub const PARAM_COUNT: usize = 7;
pub const PARAM_NAMES: [&str; PARAM_COUNT] =
    ["x0", "y0", "sigma_x", "sigma_y", "rho", "b", "theta"];

/// One 16-bit camera image, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    counts: Vec<u16>,
}

impl Frame {
    pub fn new(width: usize, height: usize, counts: Vec<u16>) -> Result<Self> {
        if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
            return Err(Error::FrameTooSmall(width, height));
        }
        if counts.len() != width * height {
            return Err(Error::BadBufferLength { width, height, got: counts.len() });
        }
        Ok(Self { width, height, counts })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u16) -> Result<Self> {
        let mut counts = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                counts.push(f(x, y));
            }
        }
        Self::new(width, height, counts)
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u16] {
        &self.counts
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.counts[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// The `(I_atoms, I_bg, I_dark)` set for one shot.
#[derive(Debug, Clone)]
pub struct FrameTriple {
    pub atoms: Frame,
    pub bg: Frame,
    pub dark: Frame,
}

impl FrameTriple {
    pub fn new(atoms: Frame, bg: Frame, dark: Frame) -> Result<Self> {
        if !atoms.same_dims(&bg) {
            return Err(Error::DimensionMismatch(atoms.width, atoms.height, bg.width, bg.height));
        }
        if !atoms.same_dims(&dark) {
            return Err(Error::DimensionMismatch(
                atoms.width,
                atoms.height,
                dark.width,
                dark.height,
            ));
        }
        Ok(Self { atoms, bg, dark })
    }

    pub fn width(&self) -> usize {
        self.atoms.width
    }

    pub fn height(&self) -> usize {
        self.atoms.height
    }
}

/// Per-pixel state of a derived OD value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelState {
    Valid,
    /// Computable but transmission hit the floor; OD is capped.
    Clamped,
    Invalid,
}

impl PixelState {
    #[inline]
    pub fn is_valid(self) -> bool {
        !matches!(self, PixelState::Invalid)
    }
}

/// A 2-D field of optical density with a validity mask.
#[derive(Debug, Clone)]
pub struct ODMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    states: Vec<PixelState>,
}

impl ODMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, states: Vec<PixelState>) -> Result<Self> {
        if values.len() != width * height || states.len() != width * height {
            return Err(Error::BadBufferLength { width, height, got: values.len() });
        }
        for (v, s) in values.iter().zip(&states) {
            if s.is_valid() && !v.is_finite() {
                return Err(Error::DomainError("non-finite OD at a valid pixel".into()));
            }
        }
        Ok(Self { width, height, values, states })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn states(&self) -> &[PixelState] {
        &self.states
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn state(&self, x: usize, y: usize) -> PixelState {
        self.states[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.state(x, y).is_valid()
    }

    pub fn valid_count(&self) -> usize {
        self.states.iter().filter(|s| s.is_valid()).count()
    }
}

/// The 7-vector describing one cloud's OD surface.
///
/// `sigma_x` is the width along the principal axis rotated by `theta` from
/// horizontal; in canonical form `theta` lies in `[-pi/4, pi/4)` so that
/// axis is the one most aligned with the horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
    pub b: f64,
    pub theta: f64,
}

impl GaussianParams {
    pub fn new(x0: f64, y0: f64, sigma_x: f64, sigma_y: f64, rho: f64, b: f64, theta: f64) -> Result<Self> {
        let p = Self { x0, y0, sigma_x, sigma_y, rho, b, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x > 0.0 && self.sigma_y > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sigma_x={} sigma_y={} must be positive",
                self.sigma_x, self.sigma_y
            )));
        }
        let all = self.to_array();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn is_canonical(&self) -> bool {
        (-FRAC_PI_4..FRAC_PI_4).contains(&self.theta)
    }

    /// Order: `[x0, y0, sigma_x, sigma_y, rho, b, theta]`.
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [self.x0, self.y0, self.sigma_x, self.sigma_y, self.rho, self.b, self.theta]
    }

    pub fn from_array(a: &[f64; PARAM_COUNT]) -> Self {
        Self { x0: a[0], y0: a[1], sigma_x: a[2], sigma_y: a[3], rho: a[4], b: a[5], theta: a[6] }
    }

    /// OD value at a single point.
    pub fn od_at(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        self.b
            + self.rho
                * (-u * u / (2.0 * self.sigma_x * self.sigma_x)
                    - v * v / (2.0 * self.sigma_y * self.sigma_y))
                    .exp()
    }
}

/// Equivalent parameterization with `theta` in `[-pi/4, pi/4)` and
/// `sigma_x` on the axis most aligned with horizontal. The OD surface is
/// unchanged pointwise.
pub fn canonicalize(params: &GaussianParams) -> GaussianParams {
    let mut p = *params;
    // The surface has period pi in theta; fold into [-pi/2, pi/2) first.
    let mut t = (p.theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if t >= FRAC_PI_4 {
        t -= FRAC_PI_2;
        std::mem::swap(&mut p.sigma_x, &mut p.sigma_y);
    } else if t < -FRAC_PI_4 {
        t += FRAC_PI_2;
        std::mem::swap(&mut p.sigma_x, &mut p.sigma_y);
    }
    p.theta = t;
    p
}

/// Per-pixel transmission with a validity mask.
#[derive(Debug, Clone)]
pub struct TransmissionMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-pixel `T = (atoms - dark) / (bg - dark)`. Pixels with
/// `bg - dark <= floor` are marked invalid.
pub fn transmission(triple: &FrameTriple, floor: f64) -> Result<TransmissionMap> {
    let n = triple.width() * triple.height();
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut any_valid = false;
    for i in 0..n {
        let denom = triple.bg.counts[i] as f64 - triple.dark.counts[i] as f64;
        if denom > floor {
            values[i] = (triple.atoms.counts[i] as f64 - triple.dark.counts[i] as f64) / denom;
            valid[i] = true;
            any_valid = true;
        }
    }
    if !any_valid {
        return Err(Error::DegenerateInput);
    }
    Ok(TransmissionMap { width: triple.width(), height: triple.height(), values, valid })
}

/// OD = -ln T at valid pixels; `T <= t_floor` (including negative T from
/// counts below dark level) is clamped to `-ln(t_floor)` and flagged.
pub fn od_from_triple(triple: &FrameTriple, t_floor: f64) -> Result<ODMap> {
    let t = transmission(triple, DEFAULT_BG_FLOOR)?;
    od_from_transmission(&t, t_floor)
}

pub fn od_from_transmission(t: &TransmissionMap, t_floor: f64) -> Result<ODMap> {
    let n = t.values.len();
    let od_cap = -t_floor.ln();
    let mut values = vec![0.0; n];
    let mut states = vec![PixelState::Invalid; n];
    for i in 0..n {
        if !t.valid[i] {
            continue;
        }
        if t.values[i] <= t_floor {
            values[i] = od_cap;
            states[i] = PixelState::Clamped;
        } else {
            values[i] = -t.values[i].ln();
            states[i] = PixelState::Valid;
        }
    }
    ODMap::new(t.width, t.height, values, states)
}

/// Evaluate the rotated Gaussian OD surface over a pixel grid.
pub fn gaussian_od(params: &GaussianParams, width: usize, height: usize) -> Result<ODMap> {
    params.validate()?;
    let (s, c) = params.theta.sin_cos();
    let inv2sx2 = 1.0 / (2.0 * params.sigma_x * params.sigma_x);
    let inv2sy2 = 1.0 / (2.0 * params.sigma_y * params.sigma_y);
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let dy = y as f64 - params.y0;
        for x in 0..width {
            let dx = x as f64 - params.x0;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            values.push(params.b + params.rho * (-u * u * inv2sx2 - v * v * inv2sy2).exp());
        }
    }
    let states = vec![PixelState::Valid; width * height];
    ODMap::new(width, height, values, states)
}

/// Analytic partials of the OD surface with respect to each of the 7
/// parameters, one grid per parameter in `PARAM_NAMES` order.
#[derive(Debug, Clone)]
pub struct JacobianGrids {
    pub width: usize,
    pub height: usize,
    pub partials: [Vec<f64>; PARAM_COUNT],
}

pub fn gaussian_od_jacobian(params: &GaussianParams, width: usize, height: usize) -> Result<JacobianGrids> {
    params.validate()?;
    let (s, c) = params.theta.sin_cos();
    let sx2 = params.sigma_x * params.sigma_x;
    let sy2 = params.sigma_y * params.sigma_y;
    let n = width * height;
    let mut partials: [Vec<f64>; PARAM_COUNT] = std::array::from_fn(|_| Vec::with_capacity(n));
    for y in 0..height {
        let dy = y as f64 - params.y0;
        for x in 0..width {
            let dx = x as f64 - params.x0;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let g = (-u * u / (2.0 * sx2) - v * v / (2.0 * sy2)).exp();
            let rg = params.rho * g;
            partials[0].push(rg * (u * c / sx2 - v * s / sy2));
            partials[1].push(rg * (u * s / sx2 + v * c / sy2));
            partials[2].push(rg * u * u / (sx2 * params.sigma_x));
            partials[3].push(rg * v * v / (sy2 * params.sigma_y));
            partials[4].push(g);
            partials[5].push(1.0);
            partials[6].push(rg * u * v * (1.0 / sy2 - 1.0 / sx2));
        }
    }
    Ok(JacobianGrids { width, height, partials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple_from(atoms: u16, bg: u16, dark: u16) -> FrameTriple {
        FrameTriple::new(
            Frame::filled(8, 8, atoms).unwrap(),
            Frame::filled(8, 8, bg).unwrap(),
            Frame::filled(8, 8, dark).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn transmission_basic_arithmetic() {
        let t = transmission(&triple_from(600, 1100, 100), DEFAULT_BG_FLOOR).unwrap();
        assert!(t.valid.iter().all(|&v| v));
        assert!(t.values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn transmission_identity_when_atoms_equal_bg() {
        let t = transmission(&triple_from(1000, 1000, 0), DEFAULT_BG_FLOOR).unwrap();
        assert!(t.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn transmission_marks_dead_pixel_invalid() {
        let mut bg = vec![1100u16; 64];
        bg[10] = 100; // bg == dark at one pixel
        let triple = FrameTriple::new(
            Frame::filled(8, 8, 600).unwrap(),
            Frame::new(8, 8, bg).unwrap(),
            Frame::filled(8, 8, 100).unwrap(),
        )
        .unwrap();
        let t = transmission(&triple, DEFAULT_BG_FLOOR).unwrap();
        assert!(!t.valid[10]);
        assert_eq!(t.valid.iter().filter(|&&v| v).count(), 63);
    }

    #[test]
    fn transmission_dimension_mismatch() {
        let r = FrameTriple::new(
            Frame::filled(8, 8, 1).unwrap(),
            Frame::filled(8, 9, 1).unwrap(),
            Frame::filled(8, 8, 1).unwrap(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch(..))));
    }

    #[test]
    fn transmission_all_invalid_is_degenerate() {
        let triple = triple_from(500, 100, 100);
        assert!(matches!(transmission(&triple, DEFAULT_BG_FLOOR), Err(Error::DegenerateInput)));
    }

    #[test]
    fn od_log_identities() {
        // T = 1 -> OD = 0
        let od = od_from_triple(&triple_from(1100, 1100, 100), DEFAULT_T_FLOOR).unwrap();
        assert!(od.values().iter().all(|&v| v.abs() < 1e-12));
        // T = e^-1 -> OD = 1 (counts chosen so atoms-dark = (bg-dark)/e)
        let bgd = 10000.0f64;
        let atoms = (bgd / std::f64::consts::E).round() as u16 + 100;
        let od = od_from_triple(&triple_from(atoms, 10100, 100), DEFAULT_T_FLOOR).unwrap();
        assert!(od.values().iter().all(|&v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn od_clamps_at_t_floor() {
        // atoms == dark -> T = 0 -> clamped to -ln(t_floor) = 6
        let od = od_from_triple(&triple_from(100, 1100, 100), (-6.0f64).exp()).unwrap();
        assert!(od.values().iter().all(|&v| (v - 6.0).abs() < 1e-12));
        assert!(od.states().iter().all(|&s| s == PixelState::Clamped));
    }

    #[test]
    fn od_of_atoms_equal_bg_is_zero() {
        let od = od_from_triple(&triple_from(900, 900, 100), DEFAULT_T_FLOOR).unwrap();
        assert!(od.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_center_value_and_flat_cases() {
        let p = GaussianParams::new(10.0, 12.0, 3.0, 5.0, 1.5, 0.04, 0.1).unwrap();
        assert_abs_diff_eq!(p.od_at(10.0, 12.0), 0.04 + 1.5, epsilon = 1e-14);

        // theta = 0 along the row through y0 is the 1-D profile
        let p = GaussianParams::new(10.0, 12.0, 3.0, 5.0, 1.5, 0.04, 0.0).unwrap();
        let od = gaussian_od(&p, 32, 32).unwrap();
        for x in 0..32 {
            let expect = 0.04 + 1.5 * (-((x as f64 - 10.0).powi(2)) / (2.0 * 9.0)).exp();
            assert_abs_diff_eq!(od.get(x, 12), expect, epsilon = 1e-14);
        }

        // rho = 0 -> constant B
        let p = GaussianParams::new(10.0, 12.0, 3.0, 5.0, 0.0, 0.04, 0.1).unwrap();
        let od = gaussian_od(&p, 16, 16).unwrap();
        assert!(od.values().iter().all(|&v| (v - 0.04).abs() < 1e-15));
    }

    #[test]
    fn gaussian_rejects_nonpositive_sigma() {
        assert!(GaussianParams::new(1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(GaussianParams::new(1.0, 1.0, 1.0, -2.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn jacobian_trivial_columns() {
        let p = GaussianParams::new(9.0, 7.5, 2.5, 4.0, 1.2, 0.01, 0.08).unwrap();
        let j = gaussian_od_jacobian(&p, 24, 24).unwrap();
        assert!(j.partials[5].iter().all(|&v| v == 1.0));
        // d/d rho at the center pixel is exp(0)=1 when the center is a pixel
        let p = GaussianParams::new(9.0, 7.0, 2.5, 4.0, 1.2, 0.01, 0.08).unwrap();
        let j = gaussian_od_jacobian(&p, 24, 24).unwrap();
        assert_abs_diff_eq!(j.partials[4][7 * 24 + 9], 1.0, epsilon = 1e-14);
    }

    /// Central finite differences against the analytic Jacobian.
    fn check_jacobian_fd(p: &GaussianParams, w: usize, h: usize, tol: f64) {
        let j = gaussian_od_jacobian(p, w, h).unwrap();
        let base = p.to_array();
        for (k, scale) in base.iter().enumerate() {
            let step = 1e-5 * scale.abs().max(1.0);
            let mut lo = base;
            let mut hi = base;
            lo[k] -= step;
            hi[k] += step;
            let od_lo = gaussian_od(&GaussianParams::from_array(&lo), w, h).unwrap();
            let od_hi = gaussian_od(&GaussianParams::from_array(&hi), w, h).unwrap();
            // Compare in a scaled norm so near-zero pixels don't dominate.
            let ref_mag = j.partials[k]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-12);
            for i in 0..w * h {
                let fd = (od_hi.values()[i] - od_lo.values()[i]) / (2.0 * step);
                let err = (fd - j.partials[k][i]).abs() / ref_mag;
                assert!(
                    err < tol,
                    "param {} pixel {}: fd={} analytic={} relerr={}",
                    PARAM_NAMES[k],
                    i,
                    fd,
                    j.partials[k][i],
                    err
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = GaussianParams::new(
                rng.random_range(5.0..20.0),
                rng.random_range(5.0..20.0),
                rng.random_range(1.5..6.0),
                rng.random_range(1.5..6.0),
                rng.random_range(0.2..3.0),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.7..0.7),
            )
            .unwrap();
            check_jacobian_fd(&p, 24, 24, 1e-5);
        }
    }

    #[test]
    fn canonicalize_quarter_turn_swaps_axes() {
        let p = GaussianParams::new(5.0, 5.0, 2.0, 3.0, 1.0, 0.0, FRAC_PI_2).unwrap();
        let c = canonicalize(&p);
        assert_abs_diff_eq!(c.theta, 0.0, epsilon = 1e-15);
        assert_eq!((c.sigma_x, c.sigma_y), (3.0, 2.0));
    }

    #[test]
    fn canonicalize_boundary_maps_to_lower_edge() {
        let p = GaussianParams::new(5.0, 5.0, 2.0, 3.0, 1.0, 0.0, FRAC_PI_4).unwrap();
        let c = canonicalize(&p);
        assert_abs_diff_eq!(c.theta, -FRAC_PI_4, epsilon = 1e-15);
        assert_eq!((c.sigma_x, c.sigma_y), (3.0, 2.0));
        assert!(c.is_canonical());
    }

    proptest! {
        #[test]
        fn canonicalize_preserves_surface(
            x0 in 4.0..12.0f64,
            y0 in 4.0..12.0f64,
            sx in 1.0..5.0f64,
            sy in 1.0..5.0f64,
            rho in 0.0..3.0f64,
            b in -0.05..0.05f64,
            theta in -7.0..7.0f64,
        ) {
            let p = GaussianParams::new(x0, y0, sx, sy, rho, b, theta).unwrap();
            let c = canonicalize(&p);
            prop_assert!(c.is_canonical());
            let a = gaussian_od(&p, 16, 16).unwrap();
            let bm = gaussian_od(&c, 16, 16).unwrap();
            for i in 0..16 * 16 {
                prop_assert!((a.values()[i] - bm.values()[i]).abs() < 1e-12);
            }
        }

        /// Quantization round trip: synthesizing integer frames from a T
        /// grid and recovering T stays within 0.5/(bg-dark) per pixel.
        #[test]
        fn transmission_quantization_round_trip(
            seed in 0u64..200,
            bg_level in 2000u16..20000,
            dark_level in 0u16..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = 8usize;
            let h = 8usize;
            let t_true: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.001..1.0f64)).collect();
            let bg = Frame::filled(w, h, bg_level).unwrap();
            let dark = Frame::filled(w, h, dark_level).unwrap();
            let denom = bg_level as f64 - dark_level as f64;
            let atoms = Frame::from_fn(w, h, |x, y| {
                (t_true[y * w + x] * denom + dark_level as f64).round() as u16
            }).unwrap();
            let triple = FrameTriple::new(atoms, bg, dark).unwrap();
            let t = transmission(&triple, DEFAULT_BG_FLOOR).unwrap();
            for i in 0..w * h {
                prop_assert!((t.values[i] - t_true[i]).abs() <= 0.5 / denom + 1e-12);
            }
        }
    }
}
