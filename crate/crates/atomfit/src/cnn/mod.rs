//! Compact convolutional regressor mapping absorption images directly to
//! the 7 Gaussian parameters, trained from scratch on simulated shots.
//!
//! Internally the network predicts z-scores of the parameters relative to
//! the training ranges; positions and widths are handled as fractions of
//! the image width/height so a trained model is resolution-agnostic.

mod layers;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{canonicalize, Frame, GaussianParams, PARAM_COUNT};
use crate::simulator::{derive_seed, LabeledShot, ParamRanges};

use layers::*;

pub const MIN_TRAIN_SHOTS: usize = 100;
/// Lower clamp for denormalized widths, pixels.
const SIGMA_OUT_FLOOR: f64 = 5e-2;

/// Fixed compact architecture: optional 2x2 average-pool stem, then 3x3
/// stride-2 convolution stages with a smooth activation, the final feature
/// map flattened into one hidden dense layer, and a linear 7-output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_width: usize,
    pub input_height: usize,
    /// 1 (no stem) or 2 (2x2 average pool before the conv stages).
    pub stem_pool: usize,
    pub conv_channels: Vec<usize>,
    pub fc_width: usize,
    /// Conv stages whose outputs are coordinate-modulated (tripled to
    /// `[f, f*x, f*y]`) before the next stage. Strictly increasing indices.
    #[serde(default)]
    pub coord_mod_stages: Vec<usize>,
    /// Number of scalar summary features (image moments) appended to the
    /// flattened conv output before the dense layer; 0 or AUX_FEATURE_COUNT.
    #[serde(default)]
    pub aux_features: usize,
}

impl NetworkSpec {
    /// Single-image (atoms only) desk-scale configuration. Frames are
    /// area-resampled straight to 32x32, so no stem pool is needed and the
    /// per-channel preprocessing cost stays small relative to the shared
    /// conv stages (keeps ML-1 and ML-3 latencies close).
    pub fn ml1() -> Self {
        Self {
            input_channels: 1,
            input_width: 32,
            input_height: 32,
            stem_pool: 1,
            conv_channels: vec![8, 16, 32, 64],
            fc_width: 128,
            coord_mod_stages: vec![],
            aux_features: AUX_FEATURE_COUNT,
        }
    }

    /// Three-image (atoms, bg, dark) desk-scale configuration.
    pub fn ml3() -> Self {
        Self { input_channels: 3, ..Self::ml1() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::ShapeMismatch("input_channels must be 1 or 3".into()));
        }
        if self.stem_pool != 1 && self.stem_pool != 2 {
            return Err(Error::ShapeMismatch("stem_pool must be 1 or 2".into()));
        }
        if self.conv_channels.is_empty() || self.fc_width == 0 {
            return Err(Error::ShapeMismatch("empty architecture".into()));
        }
        let (mut h, mut w) = (self.input_height / self.stem_pool, self.input_width / self.stem_pool);
        if self.stem_pool == 2 && (self.input_height % 2 != 0 || self.input_width % 2 != 0) {
            return Err(Error::ShapeMismatch("stem pool needs even input dims".into()));
        }
        for _ in &self.conv_channels {
            h = conv_out_dim(h);
            w = conv_out_dim(w);
        }
        if h == 0 || w == 0 {
            return Err(Error::ShapeMismatch("spatial extent collapsed to zero".into()));
        }
        if !self.coord_mod_stages.windows(2).all(|p| p[0] < p[1])
            || self.coord_mod_stages.last().is_some_and(|&i| i >= self.conv_channels.len())
        {
            return Err(Error::ShapeMismatch(
                "coord_mod_stages must be strictly increasing conv-stage indices".into(),
            ));
        }
        if self.aux_features != 0 && self.aux_features != AUX_FEATURE_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "aux_features must be 0 or {AUX_FEATURE_COUNT}"
            )));
        }
        Ok(())
    }

    /// Channels entering the first conv stage: the frame channels plus two
    /// fixed coordinate maps. Stride convolutions are translation
    /// equivariant, so absolute position (needed for x0/y0 and for the
    /// cross moment that determines theta) must be injected explicitly.
    pub fn in_channels(&self) -> usize {
        self.input_channels + 2
    }

    /// (channels, height, width) entering each conv stage, then the final
    /// map. Channel counts include coordinate modulation where applied.
    fn stage_dims(&self) -> Vec<(usize, usize, usize)> {
        let mut dims = Vec::new();
        let mut c = self.in_channels();
        let mut h = self.input_height / self.stem_pool;
        let mut w = self.input_width / self.stem_pool;
        for (i, &co) in self.conv_channels.iter().enumerate() {
            dims.push((c, h, w));
            c = if self.coord_mod_stages.contains(&i) { 3 * co } else { co };
            h = conv_out_dim(h);
            w = conv_out_dim(w);
        }
        dims.push((c, h, w));
        dims
    }

    /// Flattened length of the final conv feature map.
    fn flat_len(&self) -> usize {
        let (c, h, w) = *self.stage_dims().last().unwrap();
        c * h * w
    }

    /// Dense-layer input length: flattened conv output plus any appended
    /// summary features.
    fn fc_in_len(&self) -> usize {
        self.flat_len() + self.aux_features
    }

    /// Total length of one prepared input vector: all channel planes
    /// followed by the summary features.
    pub fn input_len(&self) -> usize {
        self.in_channels() * self.input_width * self.input_height + self.aux_features
    }

    pub fn weight_count(&self) -> usize {
        let dims = self.stage_dims();
        let mut n = 0;
        for (i, &co) in self.conv_channels.iter().enumerate() {
            n += co * dims[i].0 * 9 + co;
        }
        n += self.fc_width * self.fc_in_len() + self.fc_width;
        n += PARAM_COUNT * self.fc_width + PARAM_COUNT;
        n
    }

    /// Byte-stable description of the weight blob layout, stage by stage.
    pub fn layout_description(&self) -> String {
        let dims = self.stage_dims();
        let mut parts = Vec::new();
        for (i, &co) in self.conv_channels.iter().enumerate() {
            let ci = dims[i].0;
            parts.push(format!("conv{i}: w[{co}][{ci}][3][3], b[{co}]"));
        }
        let (fc, fh, fw) = *self.stage_dims().last().unwrap();
        parts.push(format!(
            "fc: w[{}][{}x{}x{}+{}], b[{}]",
            self.fc_width, fc, fh, fw, self.aux_features, self.fc_width
        ));
        parts.push(format!("head: w[{}][{}], b[{}]", PARAM_COUNT, self.fc_width, PARAM_COUNT));
        parts.join("; ")
    }
}

/// Number of summary features produced by [`aux_from_planes`].
pub const AUX_FEATURE_COUNT: usize = 9;

/// Fraction of the (max - median) absorption span used as the moment
/// threshold in [`aux_from_planes`].
const AUX_THRESHOLD_FRAC: f64 = 0.2;

/// Scalar summaries of the absorption signal, appended to the dense-layer
/// input. The orientation of an elliptical cloud is a function of moment
/// *ratios* (theta = atan2(2*mu11, mu20 - mu02) / 2), which stacked linear
/// layers approximate poorly from pixels alone; precomputing bounded,
/// scale-free moment features hands the dense head that information
/// directly. Inputs carry no gradient, so the features need no backward
/// pass.
///
/// `planes` are the prepared channel planes (frames first). With three
/// frame channels the absorption estimate is `bg - atoms` per pixel; with
/// one it is the negative deviation from the background level.
///
/// Raw second moments of the absorption map are badly biased: the uniform
/// optical-density offset contributes a whole-frame pedestal, and clouds
/// truncated at the frame edge skew the covariance toward the frame axes.
/// Both are removed by measuring moments of the excess above an adaptive
/// threshold, `median + frac * (max - median)`, which isolates the cloud
/// core regardless of offset or overall scale. The resulting orientation
/// estimate, folded into the canonical `[-pi/4, pi/4)` quarter-turn range,
/// is included directly as a feature.
fn aux_from_planes(spec: &NetworkSpec, planes: &[f64]) -> [f64; AUX_FEATURE_COUNT] {
    const EPS: f64 = 1e-6;
    let (w, h) = (spec.input_width, spec.input_height);
    let plane = w * h;
    let mut absorb: Vec<f64> = (0..plane)
        .map(|i| {
            if spec.input_channels >= 2 {
                (planes[plane + i] - planes[i]).max(0.0)
            } else {
                (-planes[i]).max(0.0)
            }
        })
        .collect();
    let mut sorted = absorb.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite absorption values"));
    let median = sorted[plane / 2];
    let tau = median + AUX_THRESHOLD_FRAC * (sorted[plane - 1] - median);
    for v in &mut absorb {
        *v = (*v - tau).max(0.0);
    }

    let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
    for y in 0..h {
        let yv = coord_value(y, h);
        for x in 0..w {
            let v = absorb[y * w + x];
            m += v;
            mx += v * coord_value(x, w);
            my += v * yv;
        }
    }
    let ms = m + EPS;
    let (cx, cy) = (mx / ms, my / ms);

    let (mut c20, mut c02, mut c11) = (0.0, 0.0, 0.0);
    for y in 0..h {
        let dy = coord_value(y, h) - cy;
        for x in 0..w {
            let v = absorb[y * w + x];
            let dx = coord_value(x, w) - cx;
            c20 += v * dx * dx;
            c02 += v * dy * dy;
            c11 += v * dx * dy;
        }
    }
    c20 /= ms;
    c02 /= ms;
    c11 /= ms;

    // scale-free anisotropy pair: theta = atan2(e2, e1) / 2
    let trace = c20 + c02 + EPS;
    let e1 = (c20 - c02) / trace;
    let e2 = 2.0 * c11 / trace;
    // orientation estimate folded into the canonical quarter-turn range,
    // scaled to [-1, 1)
    let mut theta = 0.5 * (2.0 * c11).atan2(c20 - c02);
    if theta >= std::f64::consts::FRAC_PI_4 {
        theta -= std::f64::consts::FRAC_PI_2;
    } else if theta < -std::f64::consts::FRAC_PI_4 {
        theta += std::f64::consts::FRAC_PI_2;
    }
    // peak-absorption estimate: mass over the ellipse area (cell units)
    let amp = m / ((w * h) as f64 * std::f64::consts::TAU * (c20 * c02).sqrt() + EPS);
    [
        (m + EPS).ln() * 0.1,
        cx,
        cy,
        c20.sqrt(),
        c02.sqrt(),
        e1,
        e2,
        theta / std::f64::consts::FRAC_PI_4,
        amp.clamp(0.0, 2.0),
    ]
}

/// Output normalization constants: per-parameter center (range midpoint)
/// and scale (standard deviation of the training uniform distribution,
/// `(max-min)/sqrt(12)`), in internal fraction/OD/radian units, plus the
/// count scale applied to input frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub centers: [f64; PARAM_COUNT],
    pub scales: [f64; PARAM_COUNT],
    pub input_scale: f64,
}

impl Normalizer {
    pub fn from_ranges(ranges: &ParamRanges, input_scale: f64) -> Result<Self> {
        ranges.validate()?;
        // fractional bounds: scaled() with unit dimensions
        let bounds = ranges.scaled(1, 1);
        let mut centers = [0.0; PARAM_COUNT];
        let mut scales = [0.0; PARAM_COUNT];
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            centers[k] = 0.5 * (lo + hi);
            scales[k] = (hi - lo) / 12f64.sqrt();
        }
        let n = Self { centers, scales, input_scale };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().any(|&s| !(s > 0.0)) || !(self.input_scale > 0.0) {
            return Err(Error::DomainError("normalizer scales must be positive".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, frac: &[f64; PARAM_COUNT]) -> [f64; PARAM_COUNT] {
        std::array::from_fn(|k| (frac[k] - self.centers[k]) / self.scales[k])
    }

    pub fn denormalize(&self, z: &[f64; PARAM_COUNT]) -> [f64; PARAM_COUNT] {
        std::array::from_fn(|k| self.centers[k] + z[k] * self.scales[k])
    }
}

/// Internal (fraction-of-image) units for a parameter vector.
pub fn params_to_frac(p: &GaussianParams, width: usize, height: usize) -> [f64; PARAM_COUNT] {
    let (w, h) = (width as f64, height as f64);
    [p.x0 / w, p.y0 / h, p.sigma_x / w, p.sigma_y / h, p.rho, p.b, p.theta]
}

pub fn frac_to_params(f: &[f64; PARAM_COUNT], width: usize, height: usize) -> GaussianParams {
    let (w, h) = (width as f64, height as f64);
    GaussianParams {
        x0: f[0] * w,
        y0: f[1] * h,
        sigma_x: (f[2] * w).max(SIGMA_OUT_FLOOR),
        sigma_y: (f[3] * h).max(SIGMA_OUT_FLOOR),
        rho: f[4],
        b: f[5],
        theta: f[6],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressorModel {
    pub spec: NetworkSpec,
    pub weights: Vec<f64>,
    pub normalizer: Normalizer,
    pub provenance: Provenance,
}

impl RegressorModel {
    pub fn init(spec: NetworkSpec, normalizer: Normalizer, seed: u64) -> Result<Self> {
        spec.validate()?;
        normalizer.validate()?;
        let weights = init_weights(&spec, seed);
        Ok(Self {
            spec,
            weights,
            normalizer,
            provenance: Provenance { dataset_id: String::new(), seed, epochs: 0 },
        })
    }

    pub fn check_weight_count(&self) -> Result<()> {
        if self.weights.len() != self.spec.weight_count() {
            return Err(Error::ModelFormat(format!(
                "weight count {} does not match architecture ({})",
                self.weights.len(),
                self.spec.weight_count()
            )));
        }
        Ok(())
    }
}

/// Fan-in-scaled uniform initialization, seeded.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(spec.weight_count());
    let push_layer = |rng: &mut ChaCha8Rng, n_w: usize, fan_in: usize, n_b: usize, w: &mut Vec<f64>| {
        let bound = (1.0 / fan_in as f64).sqrt();
        for _ in 0..n_w {
            w.push(rng.random_range(-bound..bound));
        }
        for _ in 0..n_b {
            w.push(0.0);
        }
    };
    let dims = spec.stage_dims();
    for (i, &co) in spec.conv_channels.iter().enumerate() {
        let ci = dims[i].0;
        push_layer(&mut rng, co * ci * 9, ci * 9, co, &mut weights);
    }
    let flat = spec.fc_in_len();
    push_layer(&mut rng, spec.fc_width * flat, flat, spec.fc_width, &mut weights);
    push_layer(&mut rng, PARAM_COUNT * spec.fc_width, spec.fc_width, PARAM_COUNT, &mut weights);
    weights
}

/// Per-stage slices into the flat weight vector.
struct Layout {
    conv: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>,
    fc_w: std::ops::Range<usize>,
    fc_b: std::ops::Range<usize>,
    head_w: std::ops::Range<usize>,
    head_b: std::ops::Range<usize>,
}

fn layout(spec: &NetworkSpec) -> Layout {
    let mut off = 0;
    let mut conv = Vec::new();
    let dims = spec.stage_dims();
    for (i, &co) in spec.conv_channels.iter().enumerate() {
        let w = off..off + co * dims[i].0 * 9;
        off = w.end;
        let b = off..off + co;
        off = b.end;
        conv.push((w, b));
    }
    let fc_w = off..off + spec.fc_width * spec.fc_in_len();
    off = fc_w.end;
    let fc_b = off..off + spec.fc_width;
    off = fc_b.end;
    let head_w = off..off + PARAM_COUNT * spec.fc_width;
    off = head_w.end;
    let head_b = off..off + PARAM_COUNT;
    Layout { conv, fc_w, fc_b, head_w, head_b }
}

/// Forward activations kept for the backward pass.
struct Cache {
    stem_in: Option<Vec<f64>>,
    stage_in: Vec<Vec<f64>>,
    stage_pre: Vec<Vec<f64>>,
    fc_pre: Vec<f64>,
    fc_out: Vec<f64>,
}

fn forward_inner(spec: &NetworkSpec, weights: &[f64], input: &[f64], cache: Option<&mut Option<Cache>>) -> [f64; PARAM_COUNT] {
    let lay = layout(spec);
    let dims = spec.stage_dims();
    let mut stage_in = Vec::new();
    let mut stage_pre = Vec::new();

    debug_assert_eq!(input.len(), spec.input_len());
    let (planes, aux) = input.split_at(input.len() - spec.aux_features);
    let mut x: Vec<f64>;
    let stem_in = if spec.stem_pool == 2 {
        let c = spec.in_channels();
        let (h, w) = (spec.input_height, spec.input_width);
        let mut pooled = vec![0.0; c * (h / 2) * (w / 2)];
        avgpool2_forward(planes, c, h, w, &mut pooled);
        x = pooled;
        Some(planes.to_vec())
    } else {
        x = planes.to_vec();
        None
    };

    for (i, &co) in spec.conv_channels.iter().enumerate() {
        let (ci, hi, wi) = dims[i];
        let (ho, wo) = (conv_out_dim(hi), conv_out_dim(wi));
        let mut pre = vec![0.0; co * ho * wo];
        conv3x3s2_forward(&x, ci, hi, wi, &weights[lay.conv[i].0.clone()], &weights[lay.conv[i].1.clone()], co, &mut pre);
        let mut act = vec![0.0; pre.len()];
        silu_forward(&pre, &mut act);
        if spec.coord_mod_stages.contains(&i) {
            let mut modulated = vec![0.0; 3 * act.len()];
            coord_modulate_forward(&act, co, ho, wo, &mut modulated);
            act = modulated;
        }
        stage_in.push(std::mem::replace(&mut x, act));
        stage_pre.push(pre);
    }

    // The final feature map feeds the dense layer flattened (preserving the
    // coarse spatial structure), with the summary features appended.
    x.extend_from_slice(aux);
    let mut fc_pre = vec![0.0; spec.fc_width];
    fc_forward(&x, &weights[lay.fc_w.clone()], &weights[lay.fc_b.clone()], spec.fc_width, &mut fc_pre);
    let mut fc_out = vec![0.0; spec.fc_width];
    silu_forward(&fc_pre, &mut fc_out);

    let mut head = vec![0.0; PARAM_COUNT];
    fc_forward(&fc_out, &weights[lay.head_w.clone()], &weights[lay.head_b.clone()], PARAM_COUNT, &mut head);

    if let Some(slot) = cache {
        stage_in.push(x); // dense-layer input: flattened activation + aux
        *slot = Some(Cache { stem_in, stage_in, stage_pre, fc_pre, fc_out });
    }
    std::array::from_fn(|k| head[k])
}

/// Deterministic forward pass producing the raw (z-space) 7-vector.
pub fn forward_raw(spec: &NetworkSpec, weights: &[f64], input: &[f64]) -> [f64; PARAM_COUNT] {
    forward_inner(spec, weights, input, None)
}

/// Backward pass; accumulates weight gradients into `grads`.
fn backward(
    spec: &NetworkSpec,
    weights: &[f64],
    cache: &Cache,
    grad_head: &[f64; PARAM_COUNT],
    grads: &mut [f64],
) {
    let lay = layout(spec);
    let dims = spec.stage_dims();

    let mut g_fc_out = vec![0.0; spec.fc_width];
    {
        let (gw, rest) = split_two(grads, lay.head_w.clone(), lay.head_b.clone());
        fc_backward(&cache.fc_out, &weights[lay.head_w.clone()], PARAM_COUNT, grad_head, &mut g_fc_out, gw, rest);
    }

    let mut g_fc_pre = vec![0.0; spec.fc_width];
    silu_backward(&cache.fc_pre, &g_fc_out, &mut g_fc_pre);

    let mut g_act = vec![0.0; spec.fc_in_len()];
    {
        let (gw, gb) = split_two(grads, lay.fc_w.clone(), lay.fc_b.clone());
        let flat = cache.stage_in.last().unwrap();
        fc_backward(flat, &weights[lay.fc_w.clone()], spec.fc_width, &g_fc_pre, &mut g_act, gw, gb);
    }
    // the appended summary features are functions of the input only
    g_act.truncate(spec.flat_len());

    for i in (0..spec.conv_channels.len()).rev() {
        let (ci, hi, wi) = dims[i];
        let co = spec.conv_channels[i];
        let (ho, wo) = (conv_out_dim(hi), conv_out_dim(wi));
        if spec.coord_mod_stages.contains(&i) {
            let mut g_plain = vec![0.0; co * ho * wo];
            coord_modulate_backward(&g_act, co, ho, wo, &mut g_plain);
            g_act = g_plain;
        }
        let mut g_pre = vec![0.0; g_act.len()];
        silu_backward(&cache.stage_pre[i], &g_act, &mut g_pre);
        let mut g_in = vec![0.0; ci * hi * wi];
        {
            let (gw, gb) = split_two(grads, lay.conv[i].0.clone(), lay.conv[i].1.clone());
            conv3x3s2_backward(
                &cache.stage_in[i],
                ci,
                hi,
                wi,
                &weights[lay.conv[i].0.clone()],
                co,
                &g_pre,
                &mut g_in,
                gw,
                gb,
            );
        }
        g_act = g_in;
    }

    // stem pool has no weights; nothing further to accumulate
    let _ = &cache.stem_in;
}

/// Two disjoint mutable slices out of the flat gradient buffer.
fn split_two(
    buf: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

/// Exact-area downscaling of a frame to the model input resolution.
pub fn area_resample(frame: &Frame, out_w: usize, out_h: usize) -> Vec<f64> {
    let x_weights = axis_weights(frame.width(), out_w);
    let y_weights = axis_weights(frame.height(), out_h);
    let mut out = vec![0.0; out_w * out_h];
    resample_into(frame, &x_weights, &y_weights, 1.0, &mut out);
    out
}

fn resample_into(
    frame: &Frame,
    x_weights: &[Vec<(usize, f64)>],
    y_weights: &[Vec<(usize, f64)>],
    value_scale: f64,
    out: &mut [f64],
) {
    let out_w = x_weights.len();
    for (oy, yws) in y_weights.iter().enumerate() {
        for (ox, xws) in x_weights.iter().enumerate() {
            let mut acc = 0.0;
            for &(iy, wy) in yws {
                for &(ix, wx) in xws {
                    acc += wy * wx * frame.get(ix, iy) as f64;
                }
            }
            out[oy * out_w + ox] = acc * value_scale;
        }
    }
}

/// For each output cell along one axis: source indices and normalized
/// overlap weights.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut ws = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    ws.push((i, overlap / scale));
                }
                i += 1;
            }
            ws
        })
        .collect()
}

fn build_input(model_spec: &NetworkSpec, input_scale: f64, frames: &[&Frame]) -> Result<Vec<f64>> {
    if frames.len() != model_spec.input_channels {
        return Err(Error::ChannelMismatch { got: frames.len(), want: model_spec.input_channels });
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    for f in frames {
        if f.width() != w || f.height() != h {
            return Err(Error::DimensionMismatch(w, h, f.width(), f.height()));
        }
    }
    // overlap weights shared across channels, count scale folded in
    let x_weights = axis_weights(w, model_spec.input_width);
    let y_weights = axis_weights(h, model_spec.input_height);
    let (iw, ih) = (model_spec.input_width, model_spec.input_height);
    let plane = iw * ih;
    let mut input = vec![0.0; model_spec.in_channels() * plane];
    for (c, f) in frames.iter().enumerate() {
        resample_into(f, &x_weights, &y_weights, 1.0 / input_scale, &mut input[c * plane..(c + 1) * plane]);
    }
    // center around zero: background-level pixels sit near 1.0 after count
    // normalization, which would bias every first-layer gradient
    for v in &mut input[..frames.len() * plane] {
        *v -= 1.0;
    }
    // two fixed coordinate maps in [-0.5, 0.5], x-major then y-major
    let (xc, yc) = input[frames.len() * plane..].split_at_mut(plane);
    for y in 0..ih {
        for x in 0..iw {
            xc[y * iw + x] = coord_value(x, iw);
            yc[y * iw + x] = coord_value(y, ih);
        }
    }
    if model_spec.aux_features > 0 {
        input.extend_from_slice(&aux_from_planes(model_spec, &input));
    }
    Ok(input)
}

/// Run the regressor on one image stack (1 frame for ML-1, `(atoms, bg,
/// dark)` for ML-3) and return canonical parameters at the original image
/// scale.
pub fn forward(model: &RegressorModel, frames: &[&Frame]) -> Result<GaussianParams> {
    model.check_weight_count()?;
    let input = build_input(&model.spec, model.normalizer.input_scale, frames)?;
    let raw = forward_raw(&model.spec, &model.weights, &input);
    let frac = model.normalizer.denormalize(&raw);
    let params = frac_to_params(&frac, frames[0].width(), frames[0].height());
    Ok(canonicalize(&params))
}

pub fn forward_shot(model: &RegressorModel, shot: &LabeledShot) -> Result<GaussianParams> {
    match model.spec.input_channels {
        1 => forward(model, &[&shot.triple.atoms]),
        _ => forward(model, &[&shot.triple.atoms, &shot.triple.bg, &shot.triple.dark]),
    }
}

/// Mean of the squared z-score-normalized errors, so every parameter is
/// weighted equally.
pub fn loss(
    predicted: &[GaussianParams],
    truth: &[GaussianParams],
    normalizer: &Normalizer,
    width: usize,
    height: usize,
) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    normalizer.validate()?;
    let mut acc = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        let zp = normalizer.normalize(&params_to_frac(p, width, height));
        let zt = normalizer.normalize(&params_to_frac(t, width, height));
        acc += zp.iter().zip(&zt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(acc / (predicted.len() * PARAM_COUNT) as f64)
}

/// One preprocessed training example: normalized input stack and z-space
/// target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub target: [f64; PARAM_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay per step, scaled by the current learning rate.
    pub weight_decay: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam first/second-moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// Exact reverse-mode gradients of the z-space MSE over one mini-batch,
/// followed by one Adam step. Deterministic for a fixed batch order.
pub fn backward_and_step(
    spec: &NetworkSpec,
    weights: &mut [f64],
    samples: &[TrainSample],
    state: &mut AdamState,
    hyper: &Hyperparams,
) -> Result<f64> {
    let n = weights.len();
    let (loss, grads) = loss_gradient(spec, weights, samples)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(state.t as usize));
    }

    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    for i in 0..n {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        weights[i] -= hyper.learning_rate
            * (mhat / (vhat.sqrt() + hyper.epsilon) + hyper.weight_decay * weights[i]);
    }
    Ok(loss)
}

/// Mean z-space MSE over `samples` and its exact gradient with respect to
/// every weight, without updating anything. Useful for validating the
/// backward pass against finite differences.
pub fn loss_gradient(
    spec: &NetworkSpec,
    weights: &[f64],
    samples: &[TrainSample],
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let mut grads = vec![0.0; weights.len()];
    let denom = (samples.len() * PARAM_COUNT) as f64;
    let mut loss_acc = 0.0;
    for s in samples {
        let mut cache = None;
        let out = forward_inner(spec, weights, &s.input, Some(&mut cache));
        let cache = cache.unwrap();
        let mut grad_head = [0.0; PARAM_COUNT];
        for k in 0..PARAM_COUNT {
            let e = out[k] - s.target[k];
            loss_acc += e * e;
            grad_head[k] = 2.0 * e / denom;
        }
        backward(spec, weights, &cache, &grad_head, &mut grads);
    }
    Ok((loss_acc / denom, grads))
}

/// 99th percentile of the per-shot mean `bg - dark` level.
pub fn input_scale_from_shots(shots: &[LabeledShot]) -> Result<f64> {
    if shots.is_empty() {
        return Err(Error::DatasetTooSmall { got: 0, need: 1 });
    }
    let mut levels: Vec<f64> = shots
        .iter()
        .map(|s| {
            let n = (s.triple.width() * s.triple.height()) as f64;
            s.triple
                .bg
                .counts()
                .iter()
                .zip(s.triple.dark.counts())
                .map(|(&b, &d)| b as f64 - d as f64)
                .sum::<f64>()
                / n
        })
        .collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((levels.len() as f64 * 0.99).ceil() as usize).clamp(1, levels.len()) - 1;
    let scale = levels[idx];
    if scale <= 0.0 {
        return Err(Error::DomainError("nonpositive background level".into()));
    }
    Ok(scale)
}

/// Preprocess labeled shots into network inputs/targets.
pub fn prepare_samples(
    spec: &NetworkSpec,
    normalizer: &Normalizer,
    shots: &[LabeledShot],
) -> Result<Vec<TrainSample>> {
    shots
        .iter()
        .map(|s| {
            let frames: Vec<&Frame> = match spec.input_channels {
                1 => vec![&s.triple.atoms],
                _ => vec![&s.triple.atoms, &s.triple.bg, &s.triple.dark],
            };
            let input = build_input(spec, normalizer.input_scale, &frames)?;
            let frac = params_to_frac(&s.truth, s.triple.width(), s.triple.height());
            Ok(TrainSample { input, target: normalizer.normalize(&frac) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn mean_loss(spec: &NetworkSpec, weights: &[f64], samples: &[TrainSample]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    for s in samples {
        let out = forward_raw(spec, weights, &s.input);
        acc += out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    acc / (samples.len() * PARAM_COUNT) as f64
}

/// Normalized-MSE of a model over labeled shots.
pub fn evaluate_loss(model: &RegressorModel, shots: &[LabeledShot]) -> Result<f64> {
    model.check_weight_count()?;
    let samples = prepare_samples(&model.spec, &model.normalizer, shots)?;
    Ok(mean_loss(&model.spec, &model.weights, &samples))
}

/// Mirror-image training augmentation. A horizontal or vertical flip of an
/// input stack is an exact relabeling of the same physical scene:
/// x0 -> (W-1)-x0 (or y0 -> (H-1)-y0) and theta -> -theta, everything else
/// unchanged. The `a_*` constants express those relabelings in z space,
/// where each one becomes `z' = a - z`.
#[derive(Debug, Clone, Copy)]
struct FlipAugment {
    a_x: f64,
    a_y: f64,
    a_theta: f64,
}

impl FlipAugment {
    fn new(normalizer: &Normalizer, width: usize, height: usize) -> Self {
        let mx = (width as f64 - 1.0) / width as f64;
        let my = (height as f64 - 1.0) / height as f64;
        Self {
            a_x: (mx - 2.0 * normalizer.centers[0]) / normalizer.scales[0],
            a_y: (my - 2.0 * normalizer.centers[1]) / normalizer.scales[1],
            a_theta: -2.0 * normalizer.centers[6] / normalizer.scales[6],
        }
    }

    /// `code` bit 0 flips horizontally, bit 1 vertically. Only the frame
    /// channels are mirrored; the coordinate maps stay in their canonical
    /// orientation, matching what inference always feeds the network.
    fn apply(&self, spec: &NetworkSpec, code: u8, s: &mut TrainSample) {
        let (w, h) = (spec.input_width, spec.input_height);
        let channels = spec.input_channels;
        if code & 1 != 0 {
            for c in 0..channels {
                for y in 0..h {
                    s.input[(c * h + y) * w..(c * h + y + 1) * w].reverse();
                }
            }
            s.target[0] = self.a_x - s.target[0];
            s.target[6] = self.a_theta - s.target[6];
        }
        if code & 2 != 0 {
            for c in 0..channels {
                for y in 0..h / 2 {
                    for x in 0..w {
                        s.input.swap((c * h + y) * w + x, (c * h + (h - 1 - y)) * w + x);
                    }
                }
            }
            s.target[1] = self.a_y - s.target[1];
            s.target[6] = self.a_theta - s.target[6];
        }
        if code != 0 && spec.aux_features > 0 {
            // summary features are a function of the planes; recompute them
            // from the mirrored frames
            let off = s.input.len() - spec.aux_features;
            let aux = aux_from_planes(spec, &s.input[..off]);
            s.input[off..].copy_from_slice(&aux);
        }
    }
}

fn run_epochs(
    spec: &NetworkSpec,
    weights: &mut Vec<f64>,
    train: &[TrainSample],
    val: &[TrainSample],
    hyper: &Hyperparams,
    seed: u64,
    keep_best: bool,
    augment: Option<FlipAugment>,
) -> Result<(Vec<f64>, Vec<EpochStats>)> {
    let mut state = AdamState::new(weights.len());
    let mut curve = Vec::new();
    // With augmentation, one epoch covers all four mirror variants of every
    // training sample: virtual index i maps to sample i/4, flip code i%4.
    let variants = if augment.is_some() { 4 } else { 1 };
    let mut order: Vec<usize> = (0..train.len() * variants).collect();
    let mut best = (f64::INFINITY, weights.clone());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0FFEE));
    for epoch in 0..hyper.epochs {
        // cosine decay from the configured rate down to 5% of it
        let lr = if hyper.epochs > 1 {
            let progress = epoch as f64 / (hyper.epochs - 1) as f64;
            let floor = 0.05 * hyper.learning_rate;
            floor + 0.5 * (hyper.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
        } else {
            hyper.learning_rate
        };
        let epoch_hyper = Hyperparams { learning_rate: lr, ..*hyper };
        // Fisher-Yates with the dedicated shuffle stream
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut train_acc = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| {
                    let mut s = train[i / variants].clone();
                    if let Some(aug) = augment {
                        aug.apply(spec, (i % variants) as u8, &mut s);
                    }
                    s
                })
                .collect();
            train_acc += backward_and_step(spec, weights, &batch, &mut state, &epoch_hyper)?;
            batches += 1;
        }
        let train_loss = if batches > 0 { train_acc / batches as f64 } else { f64::NAN };
        let val_loss = if val.is_empty() { train_loss } else { mean_loss(spec, weights, val) };
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        if val_loss < best.0 {
            best = (val_loss, weights.clone());
        }
        curve.push(EpochStats { epoch, train_loss, val_loss });
    }
    if keep_best && best.0.is_finite() {
        *weights = best.1;
    }
    Ok((std::mem::take(weights), curve))
}

/// Train a fresh model. `split` is the training fraction; the remainder is
/// held out for validation and the best-validation weights are returned.
pub fn train(
    spec: &NetworkSpec,
    shots: &[LabeledShot],
    ranges: &ParamRanges,
    split: f64,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(RegressorModel, Vec<EpochStats>)> {
    spec.validate()?;
    if shots.len() < MIN_TRAIN_SHOTS {
        return Err(Error::DatasetTooSmall { got: shots.len(), need: MIN_TRAIN_SHOTS });
    }
    if !(0.0..=1.0).contains(&split) {
        return Err(Error::Config("split must be in [0, 1]".into()));
    }

    // deterministic split after a seeded shuffle
    let mut idx: Vec<usize> = (0..shots.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x51D));
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((shots.len() as f64 * split).round() as usize).clamp(1, shots.len());
    let train_shots: Vec<LabeledShot> = idx[..n_train].iter().map(|&i| shots[i].clone()).collect();
    let val_shots: Vec<LabeledShot> = idx[n_train..].iter().map(|&i| shots[i].clone()).collect();

    let input_scale = input_scale_from_shots(&train_shots)?;
    let normalizer = Normalizer::from_ranges(ranges, input_scale)?;
    let mut weights = init_weights(spec, derive_seed(seed, 0x1217));

    let train_samples = prepare_samples(spec, &normalizer, &train_shots)?;
    let val_samples = prepare_samples(spec, &normalizer, &val_shots)?;
    let augment =
        FlipAugment::new(&normalizer, train_shots[0].triple.width(), train_shots[0].triple.height());
    let (weights, curve) = run_epochs(
        spec,
        &mut weights,
        &train_samples,
        &val_samples,
        hyper,
        seed,
        true,
        Some(augment),
    )?;

    Ok((
        RegressorModel {
            spec: spec.clone(),
            weights,
            normalizer,
            provenance: Provenance { dataset_id: String::new(), seed, epochs: hyper.epochs },
        },
        curve,
    ))
}

/// Continue training an existing model on new shots (e.g. after background
/// drift). The normalizer is kept so the output convention is unchanged.
pub fn fine_tune(
    model: &RegressorModel,
    shots: &[LabeledShot],
    epochs: usize,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(RegressorModel, Vec<EpochStats>)> {
    model.check_weight_count()?;
    if shots.is_empty() {
        return Err(Error::DatasetTooSmall { got: 0, need: 1 });
    }
    let samples = prepare_samples(&model.spec, &model.normalizer, shots)?;
    let mut weights = model.weights.clone();
    let tuned_hyper = Hyperparams { epochs, ..*hyper };
    let augment =
        FlipAugment::new(&model.normalizer, shots[0].triple.width(), shots[0].triple.height());
    let (weights, curve) = run_epochs(
        &model.spec,
        &mut weights,
        &samples,
        &[],
        &tuned_hyper,
        seed,
        false,
        Some(augment),
    )?;
    Ok((
        RegressorModel {
            spec: model.spec.clone(),
            weights,
            normalizer: model.normalizer.clone(),
            provenance: Provenance {
                dataset_id: model.provenance.dataset_id.clone(),
                seed,
                epochs: model.provenance.epochs + epochs,
            },
        },
        curve,
    ))
}

#[cfg(test)]
mod tests;
