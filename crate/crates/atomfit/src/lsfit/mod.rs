//! The two least-squares baselines: the fast 3x1D slice fitter and the
//! full rotated 2-D fit, on top of the shared LM engine.

mod lm;

pub use lm::{lm_minimize, LmConfig, LmOutcome};

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{canonicalize, GaussianParams, ODMap, PARAM_COUNT};

/// Widths below this (pixels) are outside the fit domain.
const SIGMA_FLOOR: f64 = 5e-2;
const MIN_SLICE_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub param_tolerance: f64,
    pub residual_tolerance: f64,
    pub lm_lambda0: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    /// Number of horizontal/vertical alternations in the 3x1D fitter.
    pub slice_rounds: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            param_tolerance: 1e-8,
            residual_tolerance: 1e-8,
            lm_lambda0: 1e-3,
            lm_lambda_up: 10.0,
            lm_lambda_down: 0.1,
            slice_rounds: 3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.param_tolerance > 0.0
            && self.residual_tolerance > 0.0
            && self.lm_lambda0 > 0.0
            && self.lm_lambda_up > 1.0
            && self.lm_lambda_down > 0.0
            && self.lm_lambda_down < 1.0
            && self.slice_rounds > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("fit config out of domain".into()))
        }
    }

    fn lm(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.max_iterations,
            param_tolerance: self.param_tolerance,
            residual_tolerance: self.residual_tolerance,
            lambda0: self.lm_lambda0,
            lambda_up: self.lm_lambda_up,
            lambda_down: self.lm_lambda_down,
        }
    }
}

/// Output of one whole-image fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Canonical parameters.
    pub params: GaussianParams,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of squared OD residuals over valid pixels.
    pub residual_ss: f64,
    pub elapsed: Duration,
}

/// Result of a 1-D slice fit `f(t) = offset + amplitude exp(-(t-center)^2 / 2 sigma^2)`.
#[derive(Debug, Clone, Copy)]
pub struct Slice1dFit {
    pub center: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Damped-LS fit of a 1-D Gaussian with offset, initialized from moments
/// (offset = median, amplitude = max - median, center = argmax, sigma from
/// the FWHM of the above-half-max region).
pub fn fit_1d_gaussian(values: &[f64], valid: &[bool], config: &FitConfig) -> Result<Slice1dFit> {
    config.validate()?;
    let pts: Vec<(f64, f64)> = values
        .iter()
        .zip(valid)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(i, (&v, _))| (i as f64, v))
        .collect();
    if pts.len() < MIN_SLICE_SAMPLES {
        return Err(Error::TooFewSamples { got: pts.len(), need: MIN_SLICE_SAMPLES });
    }

    let mut ys: Vec<f64> = pts.iter().map(|&(_, y)| y).collect();
    let offset0 = median(&mut ys);
    let (argmax_idx, &(tmax, ymax)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .unwrap();
    let amp0 = ymax - offset0;
    if amp0 <= 1e-9 {
        // no peak present
        return Ok(Slice1dFit {
            center: tmax,
            sigma: 1.0,
            amplitude: amp0,
            offset: offset0,
            converged: false,
            iterations: 0,
        });
    }
    let half = offset0 + amp0 / 2.0;
    let mut lo = argmax_idx;
    while lo > 0 && pts[lo - 1].1 > half {
        lo -= 1;
    }
    let mut hi = argmax_idx;
    while hi + 1 < pts.len() && pts[hi + 1].1 > half {
        hi += 1;
    }
    let fwhm = (pts[hi].0 - pts[lo].0 + 1.0).max(1.0);
    let sigma0 = (fwhm / 2.3548).max(0.8);

    let model = |x: &[f64]| -> Option<Vec<f64>> {
        let (c, s, a, o) = (x[0], x[1], x[2], x[3]);
        if s <= 1e-3 {
            return None;
        }
        Some(pts.iter().map(|&(t, _)| o + a * (-(t - c) * (t - c) / (2.0 * s * s)).exp()).collect())
    };
    let out = lm_minimize(
        |x| {
            let m = model(x)?;
            Some(DVector::from_iterator(pts.len(), m.iter().zip(&pts).map(|(mv, &(_, y))| mv - y)))
        },
        |x| {
            let (c, s, a, _) = (x[0], x[1], x[2], x[3]);
            if s <= 1e-3 {
                return None;
            }
            let mut j = DMatrix::zeros(pts.len(), 4);
            for (i, &(t, _)) in pts.iter().enumerate() {
                let d = t - c;
                let g = (-d * d / (2.0 * s * s)).exp();
                j[(i, 0)] = a * g * d / (s * s);
                j[(i, 1)] = a * g * d * d / (s * s * s);
                j[(i, 2)] = g;
                j[(i, 3)] = 1.0;
            }
            Some(j)
        },
        &[tmax, sigma0, amp0, offset0],
        &config.lm(),
    )?;
    Ok(Slice1dFit {
        center: out.x[0],
        sigma: out.x[1].abs(),
        amplitude: out.x[2],
        offset: out.x[3],
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Mask-aware 5x5 box smoothing; invalid pixels get -inf so they never win
/// the argmax.
fn box_smooth_5x5(od: &ODMap) -> Vec<f64> {
    let (w, h) = (od.width(), od.height());
    let mut out = vec![f64::NEG_INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            if !od.is_valid(x, y) {
                continue;
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        let (xu, yu) = (xx as usize, yy as usize);
                        if od.is_valid(xu, yu) {
                            sum += od.get(xu, yu);
                            n += 1;
                        }
                    }
                }
            }
            if n > 0 {
                out[y * w + x] = sum / n as f64;
            }
        }
    }
    out
}

fn smoothed_argmax(od: &ODMap) -> Result<(usize, usize, f64)> {
    let smooth = box_smooth_5x5(od);
    let (w, h) = (od.width(), od.height());
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            let v = smooth[y * w + x];
            if v > best.2 {
                best = (x, y, v);
            }
        }
    }
    if best.2.is_finite() {
        Ok(best)
    } else {
        Err(Error::DegenerateInput)
    }
}

struct SliceEstimates {
    x0: f64,
    y0: f64,
    sigma_x: f64,
    sigma_y: f64,
    rho: f64,
    b: f64,
    converged: bool,
    iterations: usize,
}

fn run_3x1d(od: &ODMap, config: &FitConfig) -> Result<SliceEstimates> {
    let (w, h) = (od.width(), od.height());
    if od.valid_count() == 0 {
        return Err(Error::DegenerateInput);
    }
    let (xi, yi, peak) = smoothed_argmax(od)?;
    let mut all: Vec<f64> =
        od.values().iter().zip(od.states()).filter(|(_, s)| s.is_valid()).map(|(&v, _)| v).collect();
    let b_fallback = median(&mut all);

    let mut est = SliceEstimates {
        x0: xi as f64,
        y0: yi as f64,
        sigma_x: w as f64 / 8.0,
        sigma_y: h as f64 / 8.0,
        rho: (peak - b_fallback).max(0.0),
        b: b_fallback,
        converged: true,
        iterations: 0,
    };
    let mut rho_pair = (est.rho, est.rho);
    let mut b_pair = (est.b, est.b);

    for _ in 0..config.slice_rounds {
        let row = (est.y0.round().clamp(0.0, h as f64 - 1.0)) as usize;
        let row_vals: Vec<f64> = (0..w).map(|x| od.get(x, row)).collect();
        let row_valid: Vec<bool> = (0..w).map(|x| od.is_valid(x, row)).collect();
        match fit_1d_gaussian(&row_vals, &row_valid, config) {
            Ok(f) if f.converged => {
                est.x0 = f.center.clamp(0.0, w as f64 - 1.0);
                est.sigma_x = f.sigma.max(SIGMA_FLOOR);
                rho_pair.0 = f.amplitude;
                b_pair.0 = f.offset;
                est.iterations += f.iterations;
            }
            Ok(f) => {
                est.converged = false;
                est.iterations += f.iterations;
            }
            Err(_) => est.converged = false,
        }

        let col = (est.x0.round().clamp(0.0, w as f64 - 1.0)) as usize;
        let col_vals: Vec<f64> = (0..h).map(|y| od.get(col, y)).collect();
        let col_valid: Vec<bool> = (0..h).map(|y| od.is_valid(col, y)).collect();
        match fit_1d_gaussian(&col_vals, &col_valid, config) {
            Ok(f) if f.converged => {
                est.y0 = f.center.clamp(0.0, h as f64 - 1.0);
                est.sigma_y = f.sigma.max(SIGMA_FLOOR);
                rho_pair.1 = f.amplitude;
                b_pair.1 = f.offset;
                est.iterations += f.iterations;
            }
            Ok(f) => {
                est.converged = false;
                est.iterations += f.iterations;
            }
            Err(_) => est.converged = false,
        }
    }
    // amplitude/offset merged from the final row/column pair
    est.rho = 0.5 * (rho_pair.0 + rho_pair.1);
    est.b = 0.5 * (b_pair.0 + b_pair.1);
    Ok(est)
}

fn residual_ss_over_valid(od: &ODMap, params: &GaussianParams) -> f64 {
    let (w, h) = (od.width(), od.height());
    let (s, c) = params.theta.sin_cos();
    let inv2sx2 = 1.0 / (2.0 * params.sigma_x * params.sigma_x);
    let inv2sy2 = 1.0 / (2.0 * params.sigma_y * params.sigma_y);
    let mut ss = 0.0;
    for y in 0..h {
        let dy = y as f64 - params.y0;
        for x in 0..w {
            if !od.is_valid(x, y) {
                continue;
            }
            let dx = x as f64 - params.x0;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let model = params.b + params.rho * (-u * u * inv2sx2 - v * v * inv2sy2).exp();
            let r = model - od.get(x, y);
            ss += r * r;
        }
    }
    ss
}

/// Fast slice fitter: alternating 1-D fits on the row/column through the
/// current center estimate. Does not model rotation (`theta = 0`).
pub fn fit_3x1d(od: &ODMap, config: &FitConfig) -> Result<FitResult> {
    let start = Instant::now();
    let est = run_3x1d(od, config)?;
    let params = canonicalize(&GaussianParams {
        x0: est.x0,
        y0: est.y0,
        sigma_x: est.sigma_x.max(SIGMA_FLOOR),
        sigma_y: est.sigma_y.max(SIGMA_FLOOR),
        rho: est.rho,
        b: est.b,
        theta: 0.0,
    });
    let residual_ss = residual_ss_over_valid(od, &params);
    Ok(FitResult {
        params,
        converged: est.converged,
        iterations: est.iterations,
        residual_ss,
        elapsed: start.elapsed(),
    })
}

/// Orientation estimate from second central moments of OD thresholded at
/// `b + rho/2`, folded into [-pi/4, pi/4).
fn theta_from_moments(od: &ODMap, b: f64, rho: f64) -> Option<f64> {
    let thr = b + rho / 2.0;
    let (w, h) = (od.width(), od.height());
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !od.is_valid(x, y) {
                continue;
            }
            let wgt = (od.get(x, y) - thr).max(0.0);
            sw += wgt;
            sx += wgt * x as f64;
            sy += wgt * y as f64;
        }
    }
    if sw <= 1e-9 {
        return None;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if !od.is_valid(x, y) {
                continue;
            }
            let wgt = (od.get(x, y) - thr).max(0.0);
            let dx = x as f64 - mx;
            let dy = y as f64 - my;
            cxx += wgt * dx * dx;
            cyy += wgt * dy * dy;
            cxy += wgt * dx * dy;
        }
    }
    let theta = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    // fold the major-axis angle into the canonical interval
    let mut t = (theta + std::f64::consts::FRAC_PI_2).rem_euclid(std::f64::consts::PI)
        - std::f64::consts::FRAC_PI_2;
    if t >= std::f64::consts::FRAC_PI_4 {
        t -= std::f64::consts::FRAC_PI_2;
    } else if t < -std::f64::consts::FRAC_PI_4 {
        t += std::f64::consts::FRAC_PI_2;
    }
    Some(t)
}

/// Bilinear OD profile through `(cx, cy)` at `angle`, 1 px steps. Samples
/// touching any invalid source pixel are masked out.
fn sample_rotated_profile(od: &ODMap, cx: f64, cy: f64, angle: f64) -> (Vec<f64>, Vec<bool>) {
    let (w, h) = (od.width(), od.height());
    let half = (((w * w + h * h) as f64).sqrt() / 2.0).ceil() as i64;
    let (s, c) = angle.sin_cos();
    let mut vals = Vec::with_capacity((2 * half + 1) as usize);
    let mut mask = Vec::with_capacity((2 * half + 1) as usize);
    for k in -half..=half {
        let x = cx + k as f64 * c;
        let y = cy + k as f64 * s;
        let (x0, y0) = (x.floor(), y.floor());
        let (ix, iy) = (x0 as i64, y0 as i64);
        if ix < 0 || iy < 0 || ix + 1 >= w as i64 || iy + 1 >= h as i64 {
            vals.push(0.0);
            mask.push(false);
            continue;
        }
        let (ix, iy) = (ix as usize, iy as usize);
        if !(od.is_valid(ix, iy)
            && od.is_valid(ix + 1, iy)
            && od.is_valid(ix, iy + 1)
            && od.is_valid(ix + 1, iy + 1))
        {
            vals.push(0.0);
            mask.push(false);
            continue;
        }
        let (fx, fy) = (x - x0, y - y0);
        let v = od.get(ix, iy) * (1.0 - fx) * (1.0 - fy)
            + od.get(ix + 1, iy) * fx * (1.0 - fy)
            + od.get(ix, iy + 1) * (1.0 - fx) * fy
            + od.get(ix + 1, iy + 1) * fx * fy;
        vals.push(v);
        mask.push(true);
    }
    (vals, mask)
}

struct ValidPixels {
    xs: Vec<f64>,
    ys: Vec<f64>,
    od: Vec<f64>,
}

impl ValidPixels {
    fn collect(od: &ODMap) -> Self {
        let (w, h) = (od.width(), od.height());
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut vals = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if od.is_valid(x, y) {
                    xs.push(x as f64);
                    ys.push(y as f64);
                    vals.push(od.get(x, y));
                }
            }
        }
        Self { xs, ys, od: vals }
    }

    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        if p[2] <= SIGMA_FLOOR || p[3] <= SIGMA_FLOOR {
            return None;
        }
        let (s, c) = p[6].sin_cos();
        let inv2sx2 = 1.0 / (2.0 * p[2] * p[2]);
        let inv2sy2 = 1.0 / (2.0 * p[3] * p[3]);
        let mut r = DVector::zeros(self.od.len());
        for i in 0..self.od.len() {
            let dx = self.xs[i] - p[0];
            let dy = self.ys[i] - p[1];
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            r[i] = p[5] + p[4] * (-u * u * inv2sx2 - v * v * inv2sy2).exp() - self.od[i];
        }
        Some(r)
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        if p[2] <= SIGMA_FLOOR || p[3] <= SIGMA_FLOOR {
            return None;
        }
        let (s, c) = p[6].sin_cos();
        let sx2 = p[2] * p[2];
        let sy2 = p[3] * p[3];
        let mut j = DMatrix::zeros(self.od.len(), PARAM_COUNT);
        for i in 0..self.od.len() {
            let dx = self.xs[i] - p[0];
            let dy = self.ys[i] - p[1];
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let g = (-u * u / (2.0 * sx2) - v * v / (2.0 * sy2)).exp();
            let rg = p[4] * g;
            j[(i, 0)] = rg * (u * c / sx2 - v * s / sy2);
            j[(i, 1)] = rg * (u * s / sx2 + v * c / sy2);
            j[(i, 2)] = rg * u * u / (sx2 * p[2]);
            j[(i, 3)] = rg * v * v / (sy2 * p[3]);
            j[(i, 4)] = g;
            j[(i, 5)] = 1.0;
            j[(i, 6)] = rg * u * v * (1.0 / sy2 - 1.0 / sx2);
        }
        Some(j)
    }
}

/// Full 7-parameter rotated-Gaussian fit. Initialization comes from the
/// slice fitter, a moment-based orientation estimate, and 1-D fits along
/// the rotated axes; refinement is masked Levenberg-Marquardt.
pub fn fit_2d(od: &ODMap, config: &FitConfig, init: Option<GaussianParams>) -> Result<FitResult> {
    let start = Instant::now();
    config.validate()?;
    let mut warm_iterations = 0usize;
    let p0 = match init {
        Some(p) => {
            p.validate()?;
            p
        }
        None => {
            let est = run_3x1d(od, config)?;
            warm_iterations = est.iterations;
            let theta0 = theta_from_moments(od, est.b, est.rho).unwrap_or(0.0);
            let mut sigma_x = est.sigma_x;
            let mut sigma_y = est.sigma_y;
            if theta0.abs() > 0.02 {
                // slice widths along the rotated axes
                let (vx, mx) = sample_rotated_profile(od, est.x0, est.y0, theta0);
                if let Ok(f) = fit_1d_gaussian(&vx, &mx, config) {
                    if f.converged && f.sigma > SIGMA_FLOOR {
                        sigma_x = f.sigma;
                    }
                }
                let (vy, my) =
                    sample_rotated_profile(od, est.x0, est.y0, theta0 + std::f64::consts::FRAC_PI_2);
                if let Ok(f) = fit_1d_gaussian(&vy, &my, config) {
                    if f.converged && f.sigma > SIGMA_FLOOR {
                        sigma_y = f.sigma;
                    }
                }
            }
            GaussianParams {
                x0: est.x0,
                y0: est.y0,
                sigma_x: sigma_x.max(SIGMA_FLOOR * 2.0),
                sigma_y: sigma_y.max(SIGMA_FLOOR * 2.0),
                rho: est.rho,
                b: est.b,
                theta: theta0,
            }
        }
    };

    let pixels = ValidPixels::collect(od);
    if pixels.od.is_empty() {
        return Err(Error::DegenerateInput);
    }
    let out = lm_minimize(
        |x| pixels.residuals(x),
        |x| pixels.jacobian(x),
        &p0.to_array(),
        &config.lm(),
    )?;
    let raw = GaussianParams::from_array(&[
        out.x[0], out.x[1], out.x[2].abs(), out.x[3].abs(), out.x[4], out.x[5], out.x[6],
    ]);
    let params = canonicalize(&raw);
    Ok(FitResult {
        params,
        converged: out.converged,
        iterations: warm_iterations + out.iterations,
        residual_ss: out.residual_ss,
        elapsed: start.elapsed(),
    })
}
