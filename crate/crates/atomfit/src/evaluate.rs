//! Fit-quality and benchmarking metrics.
//!
//! The central figure of merit is a reduced chi-square computed against a
//! noise variance estimated from the fit residuals themselves, so no
//! ground-truth noise level is needed. The estimator is the median of the
//! squared center-minus-neighbor-mean differences:
//!
//! `d = r(x, y) - (r(x-1, y) + r(x+1, y) + r(x, y-1) + r(x, y+1)) / 4`
//!
//! For i.i.d. noise with variance `s^2`, `Var(d) = 1.25 s^2`, and the
//! median of a scaled one-degree chi-square is 0.454937 of its variance,
//! so `s^2 = median(d^2) / (0.454937 * 1.25)`. Because the model surface
//! is smooth its curvature contributes negligibly to `d`, and the median
//! is insensitive to the few pixels where it does not.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{canonicalize, gaussian_od, GaussianParams, ODMap, PARAM_COUNT, PARAM_NAMES};

/// Median of the chi-square distribution with one degree of freedom.
pub const CHI2_1_MEDIAN: f64 = 0.454937;
/// Variance inflation of the center-minus-4-neighbor-mean difference.
pub const NEIGHBOR_DIFF_VAR_FACTOR: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub chi_square: f64,
    /// Valid pixels minus the 7 fitted parameters.
    pub dof: usize,
    /// Estimated per-pixel noise variance of the OD map.
    pub noise_variance: f64,
}

impl ChiSquareReport {
    pub fn reduced(&self) -> f64 {
        self.chi_square / self.dof as f64
    }
}

fn median_of(mut xs: Vec<f64>) -> f64 {
    let n = xs.len();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median of a non-empty slice, without mutating the input.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() || xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput);
    }
    Ok(median_of(xs.to_vec()))
}

/// Reduced chi-square of `params` against the measured OD map, with the
/// noise variance estimated from the residuals (see module docs).
pub fn chi_square(od: &ODMap, params: &GaussianParams) -> Result<ChiSquareReport> {
    params.validate()?;
    let (w, h) = (od.width(), od.height());
    let model = gaussian_od(params, w, h)?;

    let mut residual = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut n_valid = 0usize;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if od.state(x, y).is_valid() {
                residual[i] = od.get(x, y) - model.get(x, y);
                valid[i] = true;
                n_valid += 1;
            }
        }
    }
    if n_valid <= PARAM_COUNT {
        return Err(Error::DegenerateInput);
    }

    // neighbor differences over interior pixels with 4 valid neighbors
    let mut diffs_sq = Vec::with_capacity(n_valid);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if valid[i] && valid[i - 1] && valid[i + 1] && valid[i - w] && valid[i + w] {
                let d = residual[i]
                    - 0.25 * (residual[i - 1] + residual[i + 1] + residual[i - w] + residual[i + w]);
                diffs_sq.push(d * d);
            }
        }
    }
    if diffs_sq.is_empty() {
        return Err(Error::DegenerateInput);
    }
    let noise_variance = median_of(diffs_sq) / (CHI2_1_MEDIAN * NEIGHBOR_DIFF_VAR_FACTOR);
    if !(noise_variance > 0.0) {
        return Err(Error::DegenerateInput);
    }

    let ss: f64 = residual
        .iter()
        .zip(&valid)
        .filter(|(_, &v)| v)
        .map(|(r, _)| r * r)
        .sum();
    Ok(ChiSquareReport {
        chi_square: ss / noise_variance,
        dof: n_valid - PARAM_COUNT,
        noise_variance,
    })
}

/// Signed difference `a - b` between two canonical orientation angles,
/// folded onto `[-pi/4, pi/4)` so boundary estimates do not produce a
/// spurious half-turn error.
pub fn theta_difference(a: f64, b: f64) -> f64 {
    let half = std::f64::consts::FRAC_PI_2;
    let mut d = (a - b).rem_euclid(half);
    if d >= half / 2.0 {
        d -= half;
    }
    d
}

/// Per-parameter signed error `estimate - truth` in canonical form.
pub fn param_errors(estimate: &GaussianParams, truth: &GaussianParams) -> [f64; PARAM_COUNT] {
    let e = canonicalize(estimate);
    let t = canonicalize(truth);
    let ea = e.to_array();
    let ta = t.to_array();
    let mut out: [f64; PARAM_COUNT] = std::array::from_fn(|k| ea[k] - ta[k]);
    out[6] = theta_difference(e.theta, t.theta);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamErrorStats {
    pub names: Vec<String>,
    pub mean: [f64; PARAM_COUNT],
    pub std: [f64; PARAM_COUNT],
    pub rms: [f64; PARAM_COUNT],
    pub n: usize,
}

/// Mean, sample standard deviation, and RMS of the signed errors over a
/// set of (estimate, truth) pairs.
pub fn param_error_stats(pairs: &[(GaussianParams, GaussianParams)]) -> Result<ParamErrorStats> {
    if pairs.is_empty() {
        return Err(Error::DegenerateInput);
    }
    let n = pairs.len();
    let errs: Vec<[f64; PARAM_COUNT]> = pairs.iter().map(|(e, t)| param_errors(e, t)).collect();
    let mut mean = [0.0; PARAM_COUNT];
    for e in &errs {
        for k in 0..PARAM_COUNT {
            mean[k] += e[k];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = [0.0; PARAM_COUNT];
    let mut rms = [0.0; PARAM_COUNT];
    for e in &errs {
        for k in 0..PARAM_COUNT {
            var[k] += (e[k] - mean[k]) * (e[k] - mean[k]);
            rms[k] += e[k] * e[k];
        }
    }
    let std = std::array::from_fn(|k| if n > 1 { (var[k] / (n - 1) as f64).sqrt() } else { 0.0 });
    let rms = std::array::from_fn(|k| (rms[k] / n as f64).sqrt());
    Ok(ParamErrorStats {
        names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        mean,
        std,
        rms,
        n,
    })
}

/// Keep only the values within `k` interquartile ranges of the quartiles.
/// Used to drop runaway fit parameters before run-to-run spread statistics.
pub fn filter_outliers_iqr(values: &[f64], k: f64) -> Result<Vec<f64>> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let (q1, q3) = (quantile(0.25), quantile(0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
    Ok(values.iter().copied().filter(|&v| v >= lo && v <= hi).collect())
}

/// Time a closure: `warmup` untimed calls, then `repeats` timed calls run
/// back to back. Returns the individual wall-clock durations.
pub fn time_closure<F: FnMut()>(mut f: F, warmup: usize, repeats: usize) -> Result<Vec<Duration>> {
    if repeats == 0 {
        return Err(Error::EmptyTiming);
    }
    for _ in 0..warmup {
        f();
    }
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        f();
        out.push(t0.elapsed());
    }
    Ok(out)
}

pub fn median_duration(durations: &[Duration]) -> Result<Duration> {
    let secs: Vec<f64> = durations.iter().map(|d| d.as_secs_f64()).collect();
    Ok(Duration::from_secs_f64(median(&secs)?))
}

/// Aggregate accuracy/speed summary for one fitting method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub median_reduced_chi_square: f64,
    pub mean_reduced_chi_square: f64,
    pub median_time_s: f64,
    pub mean_time_s: f64,
    pub converged_fraction: f64,
    pub param_errors: ParamErrorStats,
}

pub struct MethodRun {
    pub method: String,
    pub reduced_chi_squares: Vec<f64>,
    pub times: Vec<Duration>,
    pub converged: Vec<bool>,
    /// (estimate, truth) pairs, canonical or not; canonicalized here.
    pub pairs: Vec<(GaussianParams, GaussianParams)>,
}

pub fn summarize_method(run: &MethodRun) -> Result<MethodSummary> {
    let n = run.reduced_chi_squares.len();
    if n == 0 || run.times.len() != n || run.pairs.len() != n || run.converged.len() != n {
        return Err(Error::ResultSetMismatch(format!(
            "method {} has inconsistent result lengths",
            run.method
        )));
    }
    let times_s: Vec<f64> = run.times.iter().map(|d| d.as_secs_f64()).collect();
    Ok(MethodSummary {
        method: run.method.clone(),
        n,
        median_reduced_chi_square: median(&run.reduced_chi_squares)?,
        mean_reduced_chi_square: run.reduced_chi_squares.iter().sum::<f64>() / n as f64,
        median_time_s: median(&times_s)?,
        mean_time_s: times_s.iter().sum::<f64>() / n as f64,
        converged_fraction: run.converged.iter().filter(|&&c| c).count() as f64 / n as f64,
        param_errors: param_error_stats(&run.pairs)?,
    })
}

/// Full benchmark output, serialized as the `bench` report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub shots: usize,
    pub seed: u64,
    pub config_hash: String,
    pub methods: Vec<MethodSummary>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// One row of the flat per-image-per-method benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRecord {
    pub shot: usize,
    pub method: String,
    pub reduced_chi_square: f64,
    pub time_s: f64,
    pub converged: bool,
    pub estimate: GaussianParams,
    pub truth: GaussianParams,
}

/// Run every available method over the same shots and aggregate the
/// results. All fits are serialized on the calling thread so timings are
/// free of contention; the first `warmup` shots are additionally fitted
/// untimed per method to absorb one-time initialization.
pub fn run_benchmark(
    shots: &[crate::simulator::LabeledShot],
    fit_config: &crate::lsfit::FitConfig,
    ml1: Option<&crate::cnn::RegressorModel>,
    ml3: Option<&crate::cnn::RegressorModel>,
    warmup: usize,
    seed: u64,
    config_hash: &str,
) -> Result<(BenchmarkReport, Vec<FlatRecord>)> {
    use crate::cnn::forward_shot;
    use crate::imaging::{od_from_triple, DEFAULT_T_FLOOR};
    use crate::lsfit::{fit_2d, fit_3x1d};

    if shots.is_empty() {
        return Err(Error::DegenerateInput);
    }
    let ods: Vec<ODMap> = shots
        .iter()
        .map(|s| od_from_triple(&s.triple, DEFAULT_T_FLOOR))
        .collect::<Result<_>>()?;

    // (name, fit closure returning (params, converged, elapsed))
    type Fit<'a> = Box<dyn Fn(usize) -> Result<(GaussianParams, bool, Duration)> + 'a>;
    let mut methods: Vec<(&str, Fit)> = vec![
        (
            "3x1dls",
            Box::new(|i: usize| {
                let r = fit_3x1d(&ods[i], fit_config)?;
                Ok((r.params, r.converged, r.elapsed))
            }),
        ),
        (
            "2dls",
            Box::new(|i: usize| {
                let r = fit_2d(&ods[i], fit_config, None)?;
                Ok((r.params, r.converged, r.elapsed))
            }),
        ),
    ];
    if let Some(m) = ml1 {
        methods.push((
            "ml1",
            Box::new(move |i: usize| {
                let t0 = Instant::now();
                let p = forward_shot(m, &shots[i])?;
                Ok((p, true, t0.elapsed()))
            }),
        ));
    }
    if let Some(m) = ml3 {
        methods.push((
            "ml3",
            Box::new(move |i: usize| {
                let t0 = Instant::now();
                let p = forward_shot(m, &shots[i])?;
                Ok((p, true, t0.elapsed()))
            }),
        ));
    }

    let mut flat = Vec::with_capacity(shots.len() * methods.len());
    let mut summaries = Vec::with_capacity(methods.len());
    for (name, fit) in &methods {
        for i in 0..warmup.min(shots.len()) {
            let _ = fit(i)?;
        }
        let mut run = MethodRun {
            method: name.to_string(),
            reduced_chi_squares: Vec::with_capacity(shots.len()),
            times: Vec::with_capacity(shots.len()),
            converged: Vec::with_capacity(shots.len()),
            pairs: Vec::with_capacity(shots.len()),
        };
        for (i, shot) in shots.iter().enumerate() {
            let (params, converged, elapsed) = fit(i)?;
            let chi = chi_square(&ods[i], &params)?;
            run.reduced_chi_squares.push(chi.reduced());
            run.times.push(elapsed);
            run.converged.push(converged);
            run.pairs.push((params, shot.truth));
            flat.push(FlatRecord {
                shot: i,
                method: name.to_string(),
                reduced_chi_square: chi.reduced(),
                time_s: elapsed.as_secs_f64(),
                converged,
                estimate: canonicalize(&params),
                truth: canonicalize(&shot.truth),
            });
        }
        summaries.push(summarize_method(&run)?);
    }

    let report = BenchmarkReport {
        format_version: REPORT_FORMAT_VERSION,
        width: ods[0].width(),
        height: ods[0].height(),
        shots: shots.len(),
        seed,
        config_hash: config_hash.to_string(),
        methods: summaries,
    };
    Ok((report, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::PixelState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy_od(truth: &GaussianParams, w: usize, h: usize, sd: f64, seed: u64) -> ODMap {
        let clean = gaussian_od(truth, w, h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).unwrap();
        let values: Vec<f64> = clean.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
        ODMap::new(w, h, values, vec![PixelState::Valid; w * h]).unwrap()
    }

    fn truth() -> GaussianParams {
        GaussianParams::new(30.0, 34.0, 7.0, 5.0, 1.2, 0.01, 0.05).unwrap()
    }

    /// With the true parameters, the reduced chi-square must average 1
    /// within Monte-Carlo error: mean over T trials of chi2/dof has
    /// standard error sqrt(2/dof)/sqrt(T).
    #[test]
    fn chi_square_calibration_against_true_model() {
        let t = truth();
        let (w, h) = (64, 64);
        let trials = 200;
        let mut acc = 0.0;
        for i in 0..trials {
            let od = noisy_od(&t, w, h, 0.05, 1000 + i as u64);
            let rep = chi_square(&od, &t).unwrap();
            assert_eq!(rep.dof, w * h - 7);
            acc += rep.reduced();
        }
        let mean = acc / trials as f64;
        let se = (2.0 / (w * h - 7) as f64).sqrt() / (trials as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 5.0 * se + 0.01,
            "reduced chi-square mean {mean:.4}, tolerance {:.4}",
            5.0 * se + 0.01
        );
    }

    #[test]
    fn noise_variance_estimate_tracks_injected_noise() {
        let t = truth();
        for &sd in &[0.02, 0.1, 0.3] {
            let od = noisy_od(&t, 64, 64, sd, 7);
            let rep = chi_square(&od, &t).unwrap();
            let ratio = rep.noise_variance / (sd * sd);
            assert!((0.85..1.15).contains(&ratio), "sd {sd}: ratio {ratio:.3}");
        }
    }

    #[test]
    fn misfit_inflates_chi_square() {
        let t = truth();
        let od = noisy_od(&t, 64, 64, 0.05, 21);
        let good = chi_square(&od, &t).unwrap();
        let mut wrong = t.clone();
        wrong.rho *= 2.0;
        let bad = chi_square(&od, &wrong).unwrap();
        assert!(bad.chi_square > 2.0 * bad.dof as f64, "misfit chi2 {:.0}", bad.chi_square);
        assert!(bad.chi_square > 5.0 * good.chi_square);
    }

    #[test]
    fn invalid_pixels_are_excluded() {
        let t = truth();
        let od = noisy_od(&t, 32, 32, 0.05, 3);
        let mut values = od.values().to_vec();
        let mut states = od.states().to_vec();
        // poison a block; marked invalid, it must not affect the result
        for y in 5..9 {
            for x in 5..9 {
                values[y * 32 + x] = 1e9;
                states[y * 32 + x] = PixelState::Invalid;
            }
        }
        let damaged = ODMap::new(32, 32, values, states).unwrap();
        let rep = chi_square(&damaged, &t).unwrap();
        assert_eq!(rep.dof, 32 * 32 - 16 - 7);
        assert!(rep.reduced() < 2.0, "reduced {:.2}", rep.reduced());
    }

    #[test]
    fn degenerate_maps_are_rejected() {
        let t = truth();
        let od = noisy_od(&t, 32, 32, 0.05, 3);
        let values = od.values().to_vec();
        let states = vec![PixelState::Invalid; 32 * 32];
        let empty = ODMap::new(32, 32, values, states).unwrap();
        assert!(matches!(chi_square(&empty, &t), Err(Error::DegenerateInput)));
    }

    #[test]
    fn self_comparison_has_zero_errors() {
        let t = truth();
        let stats = param_error_stats(&[(t.clone(), t.clone()), (t.clone(), t.clone())]).unwrap();
        assert!(stats.mean.iter().all(|&m| m == 0.0));
        assert!(stats.std.iter().all(|&s| s == 0.0));
        assert!(stats.rms.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn theta_errors_wrap_at_the_canonical_boundary() {
        let q = std::f64::consts::FRAC_PI_4;
        // estimates straddling the fold are nearly identical orientations
        let d = theta_difference(q - 0.01, -q + 0.01);
        assert!(d.abs() < 0.025, "wrapped difference {d}");
        assert!((theta_difference(0.1, 0.03) - 0.07).abs() < 1e-12);
        assert!((theta_difference(0.03, 0.1) + 0.07).abs() < 1e-12);
    }

    #[test]
    fn error_stats_match_hand_computation() {
        let t = truth();
        let mut e1 = t.clone();
        e1.x0 += 1.0;
        let mut e2 = t.clone();
        e2.x0 -= 1.0;
        let stats = param_error_stats(&[(e1, t.clone()), (e2, t.clone())]).unwrap();
        assert!((stats.mean[0]).abs() < 1e-12);
        assert!((stats.std[0] - 2f64.sqrt()).abs() < 1e-12); // sample std of {1, -1}
        assert!((stats.rms[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iqr_filter_drops_only_extremes() {
        let mut vals: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        vals.push(1e6);
        vals.push(-1e6);
        let kept = filter_outliers_iqr(&vals, 5.0).unwrap();
        assert_eq!(kept.len(), 100);
        assert!(kept.iter().all(|&v| v.abs() <= 1.0));
        // a tight cluster survives untouched
        let same = filter_outliers_iqr(&[2.0, 2.0, 2.0], 5.0).unwrap();
        assert_eq!(same, vec![2.0, 2.0, 2.0]);
        assert!(filter_outliers_iqr(&[], 5.0).is_err());
    }

    #[test]
    fn timing_helpers() {
        assert!(matches!(time_closure(|| {}, 0, 0), Err(Error::EmptyTiming)));
        let mut calls = 0usize;
        let times = time_closure(
            || {
                calls += 1;
                std::hint::black_box(calls);
            },
            3,
            5,
        )
        .unwrap();
        assert_eq!(times.len(), 5);
        assert_eq!(calls, 8);
        median_duration(&times).unwrap();
    }

    #[test]
    fn median_handles_odd_even_and_rejects_empty() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        assert!(median(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn run_benchmark_produces_consistent_tables() {
        use crate::cnn::{NetworkSpec, Normalizer, RegressorModel};
        use crate::lsfit::FitConfig;
        use crate::simulator::{build_dataset, synth_library, ParamRanges, SynthBackgroundConfig};

        let library = synth_library(&SynthBackgroundConfig::default(), 32, 32, 3, 4).unwrap();
        // comfortably identifiable clouds so every fit succeeds
        let ranges = ParamRanges {
            sigma_x_frac: (0.1, 0.2),
            sigma_y_frac: (0.1, 0.2),
            rho: (0.8, 2.0),
            ..ParamRanges::default()
        };
        let shots = build_dataset(&library, &ranges, 5, 12).unwrap();
        let norm = Normalizer::from_ranges(&ranges, 20000.0).unwrap();
        let spec = NetworkSpec {
            input_width: 32,
            input_height: 32,
            conv_channels: vec![4, 8],
            fc_width: 8,
            ..NetworkSpec::ml1()
        };
        let ml1 = RegressorModel::init(spec, norm, 6).unwrap();

        let (report, flat) =
            run_benchmark(&shots, &FitConfig::default(), Some(&ml1), None, 1, 12, "h").unwrap();
        assert_eq!(report.methods.len(), 3);
        assert_eq!(flat.len(), 15);
        for name in ["3x1dls", "2dls", "ml1"] {
            let m = report.method(name).unwrap();
            assert_eq!(m.n, 5);
            assert!(m.median_reduced_chi_square.is_finite());
            assert!(m.median_time_s > 0.0);
        }
        assert!(report.method("ml3").is_none());
        // the 2-D fit must beat the slice fit on its own figure of merit
        let two_d = report.method("2dls").unwrap().median_reduced_chi_square;
        let slice = report.method("3x1dls").unwrap().median_reduced_chi_square;
        assert!(two_d <= slice + 1e-9, "2dls {two_d} vs 3x1dls {slice}");
    }

    #[test]
    fn summarize_method_checks_lengths_and_report_round_trips() {
        let t = truth();
        let run = MethodRun {
            method: "2dls".into(),
            reduced_chi_squares: vec![1.0, 1.2],
            times: vec![Duration::from_millis(5), Duration::from_millis(7)],
            converged: vec![true, false],
            pairs: vec![(t.clone(), t.clone()), (t.clone(), t.clone())],
        };
        let s = summarize_method(&run).unwrap();
        assert_eq!(s.n, 2);
        assert!((s.median_reduced_chi_square - 1.1).abs() < 1e-12);
        assert!((s.converged_fraction - 0.5).abs() < 1e-12);

        let bad = MethodRun { times: vec![Duration::from_millis(5)], ..run };
        assert!(matches!(summarize_method(&bad), Err(Error::ResultSetMismatch(_))));

        let report = BenchmarkReport {
            format_version: REPORT_FORMAT_VERSION,
            width: 64,
            height: 64,
            shots: 2,
            seed: 9,
            config_hash: "abc".into(),
            methods: vec![s],
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: BenchmarkReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(back.method("2dls").is_some());
        assert!(back.method("nope").is_none());
    }
}
