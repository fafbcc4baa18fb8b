use super::*;
use crate::imaging::FrameTriple;
use crate::simulator::{build_dataset, synth_library, SynthBackgroundConfig};

/// Small spec exercising every layer type: stem pool, two conv stages,
/// dense, head. Cheap enough for finite differences over all weights.
fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_channels: 1,
        input_width: 16,
        input_height: 16,
        stem_pool: 2,
        conv_channels: vec![2, 2],
        fc_width: 3,
        coord_mod_stages: vec![0],
        aux_features: AUX_FEATURE_COUNT,
    }
}

fn unit_normalizer() -> Normalizer {
    Normalizer { centers: [0.0; PARAM_COUNT], scales: [1.0; PARAM_COUNT], input_scale: 1.0 }
}

fn tiny_input(spec: &NetworkSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn weight_count_matches_layout() {
    let spec = tiny_spec();
    assert_eq!(init_weights(&spec, 1).len(), spec.weight_count());
    let ml1 = NetworkSpec::ml1();
    ml1.validate().unwrap();
    // compact model: well under the 3e5 budget
    assert!(ml1.weight_count() < 300_000, "params {}", ml1.weight_count());
    assert_eq!(init_weights(&ml1, 1).len(), ml1.weight_count());
    NetworkSpec::ml3().validate().unwrap();
}

#[test]
fn forward_is_deterministic_and_finite() {
    let spec = tiny_spec();
    let w = init_weights(&spec, 7);
    let inp = tiny_input(&spec, 3);
    let a = forward_raw(&spec, &w, &inp);
    let b = forward_raw(&spec, &w, &inp);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
    // a different seed must give different weights and a different output
    let w2 = init_weights(&spec, 8);
    assert_ne!(w, w2);
    assert_ne!(forward_raw(&spec, &w2, &inp), a);
}

/// Central finite differences over every weight must agree with the
/// analytic gradient to a relative error below 1e-4.
#[test]
fn gradient_matches_finite_differences() {
    let spec = tiny_spec();
    let mut weights = init_weights(&spec, 11);
    let samples: Vec<TrainSample> = (0..3)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
            TrainSample {
                input: tiny_input(&spec, 200 + i),
                target: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            }
        })
        .collect();

    let loss_of = |w: &[f64]| -> f64 {
        let denom = (samples.len() * PARAM_COUNT) as f64;
        samples
            .iter()
            .map(|s| {
                let out = forward_raw(&spec, w, &s.input);
                out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            / denom
    };

    // analytic gradient via the backward pass
    let mut grads = vec![0.0; weights.len()];
    let denom = (samples.len() * PARAM_COUNT) as f64;
    for s in &samples {
        let mut cache = None;
        let out = forward_inner(&spec, &weights, &s.input, Some(&mut cache));
        let cache = cache.unwrap();
        let grad_head: [f64; PARAM_COUNT] =
            std::array::from_fn(|k| 2.0 * (out[k] - s.target[k]) / denom);
        backward(&spec, &weights, &cache, &grad_head, &mut grads);
    }

    let h = 1e-5;
    let scale = grads.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    assert!(scale > 0.0);
    let mut worst = 0.0f64;
    for i in 0..weights.len() {
        let orig = weights[i];
        weights[i] = orig + h;
        let up = loss_of(&weights);
        weights[i] = orig - h;
        let dn = loss_of(&weights);
        weights[i] = orig;
        let fd = (up - dn) / (2.0 * h);
        let rel = (fd - grads[i]).abs() / scale;
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst:.3e}");
}

#[test]
fn normalizer_round_trips() {
    let ranges = ParamRanges::default();
    let norm = Normalizer::from_ranges(&ranges, 20000.0).unwrap();
    let frac = [0.3, 0.7, 0.12, 0.2, 1.5, 0.01, 0.05];
    let z = norm.normalize(&frac);
    let back = norm.denormalize(&z);
    for k in 0..PARAM_COUNT {
        assert!((back[k] - frac[k]).abs() < 1e-12);
    }
    // midpoint of the range normalizes to exactly zero
    let z0 = norm.normalize(&norm.centers.clone());
    assert!(z0.iter().all(|&v| v == 0.0));
}

#[test]
fn normalizer_scale_is_uniform_std() {
    // uniform on [a, b] has std (b - a) / sqrt(12)
    let ranges = ParamRanges { rho: (0.0, 3.0), ..ParamRanges::default() };
    let norm = Normalizer::from_ranges(&ranges, 1.0).unwrap();
    assert!((norm.scales[4] - 3.0 / 12f64.sqrt()).abs() < 1e-15);
}

#[test]
fn zero_weights_predict_range_midpoints() {
    let ranges = ParamRanges::default();
    let norm = Normalizer::from_ranges(&ranges, 20000.0).unwrap();
    let spec = NetworkSpec::ml1();
    let model = RegressorModel {
        spec: spec.clone(),
        weights: vec![0.0; spec.weight_count()],
        normalizer: norm.clone(),
        provenance: Provenance { dataset_id: String::new(), seed: 0, epochs: 0 },
    };
    let frame = Frame::filled(64, 64, 20000).unwrap();
    let p = forward(&model, &[&frame]).unwrap();
    let mid = frac_to_params(&norm.centers, 64, 64);
    assert!((p.x0 - mid.x0).abs() < 1e-9);
    assert!((p.sigma_y - mid.sigma_y).abs() < 1e-9);
    assert!((p.rho - mid.rho).abs() < 1e-9);
}

#[test]
fn loss_trivial_cases() {
    let norm = unit_normalizer();
    let p = GaussianParams::new(10.0, 12.0, 3.0, 4.0, 1.0, 0.0, 0.05).unwrap();
    // identical sets give zero
    assert_eq!(loss(&[p.clone()], &[p.clone()], &norm, 32, 32).unwrap(), 0.0);
    // one unit offset in a single z-scored parameter gives 1/7
    let mut q = p.clone();
    q.rho += 1.0;
    let l = loss(&[q], &[p.clone()], &norm, 32, 32).unwrap();
    assert!((l - 1.0 / 7.0).abs() < 1e-12);
    // mean semantics: duplicating the pair leaves the loss unchanged
    let mut q2 = p.clone();
    q2.rho += 1.0;
    let l2 = loss(&[q2.clone(), q2], &[p.clone(), p.clone()], &norm, 32, 32).unwrap();
    assert!((l2 - 1.0 / 7.0).abs() < 1e-12);
    assert!(loss(&[], &[], &norm, 32, 32).is_err());
}

#[test]
fn area_resample_preserves_mean_and_identity() {
    let frame = Frame::from_fn(16, 12, |x, y| (x * 13 + y * 7) as u16).unwrap();
    // identity resample
    let same = area_resample(&frame, 16, 12);
    for (v, &c) in same.iter().zip(frame.counts()) {
        assert!((v - c as f64).abs() < 1e-9);
    }
    // 2x downscale preserves the total mean exactly (area weighting)
    let down = area_resample(&frame, 8, 6);
    let mean_in = frame.counts().iter().map(|&c| c as f64).sum::<f64>() / 192.0;
    let mean_out = down.iter().sum::<f64>() / 48.0;
    assert!((mean_in - mean_out).abs() < 1e-9);
    // non-integer ratio still averages to the same mean
    let odd = area_resample(&frame, 5, 5);
    let mean_odd = odd.iter().sum::<f64>() / 25.0;
    assert!((mean_in - mean_odd).abs() < 1e-9);
}

#[test]
fn adam_zero_learning_rate_leaves_weights_unchanged() {
    let spec = tiny_spec();
    let mut weights = init_weights(&spec, 5);
    let before = weights.clone();
    let sample = TrainSample { input: tiny_input(&spec, 1), target: [0.5; PARAM_COUNT] };
    let mut state = AdamState::new(weights.len());
    let hyper = Hyperparams { learning_rate: 0.0, ..Default::default() };
    backward_and_step(&spec, &mut weights, &[sample], &mut state, &hyper).unwrap();
    assert_eq!(weights, before);
}

#[test]
fn adam_overfits_a_small_batch() {
    // wider than the gradcheck net so 6 random samples are separable
    let spec = NetworkSpec { conv_channels: vec![4, 8], fc_width: 16, ..tiny_spec() };
    let mut weights = init_weights(&spec, 42);
    let samples: Vec<TrainSample> = (0..6)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + i);
            TrainSample {
                input: tiny_input(&spec, 300 + i),
                target: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            }
        })
        .collect();
    let mut state = AdamState::new(weights.len());
    let hyper = Hyperparams { learning_rate: 3e-3, ..Default::default() };
    let mut last = f64::INFINITY;
    for _ in 0..800 {
        last = backward_and_step(&spec, &mut weights, &samples, &mut state, &hyper).unwrap();
    }
    assert!(last < 1e-3, "failed to overfit 6 samples, loss {last:.3e}");
}

/// A flipped training sample must equal the sample built from the mirrored
/// scene: mirrored frame, x0 -> (W-1)-x0 (or y0), theta -> -theta.
#[test]
fn flip_augmentation_matches_mirrored_scene() {
    let (shots, ranges) = small_dataset(120, 33);
    let shot = &shots[0];
    let (w, h) = (shot.triple.width(), shot.triple.height());
    let spec = NetworkSpec {
        input_channels: 1,
        input_width: 16,
        input_height: 16,
        stem_pool: 1,
        conv_channels: vec![2, 2],
        fc_width: 3,
        coord_mod_stages: vec![],
        aux_features: AUX_FEATURE_COUNT,
    };
    let scale = input_scale_from_shots(&shots).unwrap();
    let normalizer = Normalizer::from_ranges(&ranges, scale).unwrap();
    let aug = FlipAugment::new(&normalizer, w, h);

    let mirror = |frame: &Frame, horizontal: bool, vertical: bool| {
        let mut counts = vec![0u16; w * h];
        for y in 0..h {
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                let sy = if vertical { h - 1 - y } else { y };
                counts[y * w + x] = frame.get(sx, sy);
            }
        }
        Frame::new(w, h, counts).unwrap()
    };

    for code in 1..4u8 {
        let (hor, ver) = (code & 1 != 0, code & 2 != 0);
        let mut sample = prepare_samples(&spec, &normalizer, std::slice::from_ref(shot))
            .unwrap()
            .pop()
            .unwrap();
        aug.apply(&spec, code, &mut sample);

        let t = &shot.truth;
        let mirrored_truth = GaussianParams {
            x0: if hor { (w - 1) as f64 - t.x0 } else { t.x0 },
            y0: if ver { (h - 1) as f64 - t.y0 } else { t.y0 },
            theta: if hor != ver { -t.theta } else { t.theta },
            ..*t
        };
        let mirrored_atoms = mirror(&shot.triple.atoms, hor, ver);
        let mirrored_input =
            build_input(&spec, scale, &[&mirrored_atoms]).unwrap();
        let expected = normalizer.normalize(&params_to_frac(&mirrored_truth, w, h));

        for (a, b) in sample.input.iter().zip(&mirrored_input) {
            assert!((a - b).abs() < 1e-12, "code {code}: input mismatch");
        }
        for k in 0..PARAM_COUNT {
            assert!(
                (sample.target[k] - expected[k]).abs() < 1e-12,
                "code {code}: target {k}: {} vs {}",
                sample.target[k],
                expected[k]
            );
        }
    }
}

fn small_dataset(n: usize, seed: u64) -> (Vec<LabeledShot>, ParamRanges) {
    let cfg = SynthBackgroundConfig::default();
    let library = synth_library(&cfg, 32, 32, 3, seed).unwrap();
    let ranges = ParamRanges::default();
    let shots = build_dataset(&library, &ranges, n, seed).unwrap();
    (shots, ranges)
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let (shots, ranges) = small_dataset(120, 17);
    let spec = NetworkSpec {
        input_channels: 1,
        input_width: 32,
        input_height: 32,
        stem_pool: 2,
        conv_channels: vec![4, 8],
        fc_width: 16,
        coord_mod_stages: vec![0, 1],
        aux_features: 0,
    };
    let hyper = Hyperparams { epochs: 2, ..Default::default() };
    let (m1, c1) = train(&spec, &shots, &ranges, 0.8, &hyper, 99).unwrap();
    let (m2, c2) = train(&spec, &shots, &ranges, 0.8, &hyper, 99).unwrap();
    assert_eq!(m1.weights, m2.weights);
    assert_eq!(c1, c2);
    // and a different seed diverges
    let (m3, _) = train(&spec, &shots, &ranges, 0.8, &hyper, 100).unwrap();
    assert_ne!(m1.weights, m3.weights);
}

#[test]
fn train_rejects_tiny_datasets_and_bad_split() {
    let (shots, ranges) = small_dataset(120, 5);
    let spec = tiny_spec();
    let hyper = Hyperparams { epochs: 1, ..Default::default() };
    assert!(matches!(
        train(&spec, &shots[..50], &ranges, 0.8, &hyper, 1),
        Err(Error::DatasetTooSmall { .. })
    ));
    assert!(train(&spec, &shots, &ranges, 1.5, &hyper, 1).is_err());
}

#[test]
fn zero_epoch_training_returns_initial_weights() {
    let (shots, ranges) = small_dataset(120, 9);
    let spec = NetworkSpec {
        input_channels: 3,
        input_width: 32,
        input_height: 32,
        stem_pool: 2,
        conv_channels: vec![4, 4],
        fc_width: 8,
        coord_mod_stages: vec![],
        aux_features: AUX_FEATURE_COUNT,
    };
    let hyper = Hyperparams { epochs: 0, ..Default::default() };
    let (model, curve) = train(&spec, &shots, &ranges, 0.8, &hyper, 21).unwrap();
    assert!(curve.is_empty());
    assert_eq!(model.weights, init_weights(&spec, derive_seed(21, 0x1217)));
}

#[test]
fn fine_tune_is_deterministic_and_keeps_normalizer() {
    let (shots, ranges) = small_dataset(120, 31);
    let spec = NetworkSpec {
        input_channels: 1,
        input_width: 32,
        input_height: 32,
        stem_pool: 2,
        conv_channels: vec![4, 4],
        fc_width: 8,
        coord_mod_stages: vec![1],
        aux_features: 0,
    };
    let hyper = Hyperparams { epochs: 1, ..Default::default() };
    let (model, _) = train(&spec, &shots, &ranges, 0.8, &hyper, 3).unwrap();
    let (t1, _) = fine_tune(&model, &shots[..100], 2, &hyper, 77).unwrap();
    let (t2, _) = fine_tune(&model, &shots[..100], 2, &hyper, 77).unwrap();
    assert_eq!(t1.weights, t2.weights);
    assert_eq!(t1.normalizer, model.normalizer);
    assert_eq!(t1.provenance.epochs, model.provenance.epochs + 2);
}

#[test]
fn forward_shot_respects_channel_count() {
    let (shots, ranges) = small_dataset(120, 13);
    let norm = Normalizer::from_ranges(&ranges, 20000.0).unwrap();
    let spec1 = NetworkSpec { input_width: 32, input_height: 32, ..NetworkSpec::ml1() };
    let model1 = RegressorModel::init(spec1, norm.clone(), 1).unwrap();
    forward_shot(&model1, &shots[0]).unwrap();
    // wrong stack size is rejected
    let err = forward(&model1, &[&shots[0].triple.atoms, &shots[0].triple.bg]);
    assert!(matches!(err, Err(Error::ChannelMismatch { got: 2, want: 1 })));
    // mismatched frame dims are rejected
    let other = Frame::filled(16, 16, 100).unwrap();
    let spec3 = NetworkSpec { input_width: 32, input_height: 32, ..NetworkSpec::ml3() };
    let model3 = RegressorModel::init(spec3, norm, 2).unwrap();
    let bad = forward(&model3, &[&shots[0].triple.atoms, &shots[0].triple.bg, &other]);
    assert!(matches!(bad, Err(Error::DimensionMismatch(..))));
    let _ = FrameTriple::new; // silence unused import if constructors change
}

#[test]
fn input_scale_uses_high_percentile_of_bg_level() {
    let (shots, _) = small_dataset(120, 2);
    let scale = input_scale_from_shots(&shots).unwrap();
    // synthetic library sits near the configured 20000-count level
    assert!(scale > 15000.0 && scale < 25000.0, "scale {scale}");
    assert!(input_scale_from_shots(&[]).is_err());
}
