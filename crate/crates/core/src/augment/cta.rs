//! Learned strong augmentation: a reduced CTAugment.
//!
//! Each transform owns a vector of magnitude-bin weights. Sampling picks
//! transforms uniformly and a bin in proportion to its (thresholded) weight;
//! after the model is probed on an augmented labelled example, every bin that
//! was used moves towards how well the prediction matched the label.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

use super::{image_dims, sample_bilinear};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Identity,
    Brightness,
    Contrast,
    Sharpness,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Solarize,
    Cutout,
}

impl TransformKind {
    /// The default transform set (identity excluded).
    pub const LITE: [TransformKind; 10] = [
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::Sharpness,
        TransformKind::Rotate,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::TranslateX,
        TransformKind::TranslateY,
        TransformKind::Solarize,
        TransformKind::Cutout,
    ];

    fn signed(self) -> bool {
        !matches!(self, TransformKind::Identity | TransformKind::Solarize | TransformKind::Cutout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformBins {
    pub kind: TransformKind,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtaPolicy {
    pub transforms: Vec<TransformBins>,
    pub decay: f64,
    /// Bins whose relative weight falls below this are never sampled.
    pub threshold: f64,
    pub ops_per_sample: usize,
}

pub const DEFAULT_BINS: usize = 17;
pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_OPS: usize = 2;

impl Default for CtaPolicy {
    fn default() -> Self {
        Self::new(&TransformKind::LITE, DEFAULT_BINS)
    }
}

impl CtaPolicy {
    /// All weights start at 1.
    pub fn new(kinds: &[TransformKind], bins: usize) -> Self {
        CtaPolicy {
            transforms: kinds
                .iter()
                .map(|&kind| TransformBins {
                    kind,
                    weights: vec![1.0; bins],
                })
                .collect(),
            decay: DEFAULT_DECAY,
            threshold: DEFAULT_THRESHOLD,
            ops_per_sample: DEFAULT_OPS,
        }
    }

    /// A policy that can only ever produce the input image.
    pub fn identity_only() -> Self {
        Self::new(&[TransformKind::Identity], 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::Config("CTA policy has no transforms".into()));
        }
        for t in &self.transforms {
            if t.weights.len() < 2 {
                return Err(Error::Config(format!("{:?} needs at least 2 magnitude bins", t.kind)));
            }
            if t.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Config(format!("{:?} has a bin weight outside [0,1]", t.kind)));
            }
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!("CTA decay {} outside [0,1)", self.decay)));
        }
        Ok(())
    }

    fn find(&self, kind: TransformKind) -> Option<&TransformBins> {
        self.transforms.iter().find(|t| t.kind == kind)
    }

    /// Sampling probabilities of a transform's bins.
    pub fn bin_probabilities(&self, kind: TransformKind) -> Option<Vec<f64>> {
        let t = self.find(kind)?;
        if t.weights.iter().all(|&w| w == 0.0) {
            warn!("all CTA bin weights for {kind:?} are zero; sampling bins uniformly");
            return Some(vec![1.0 / t.weights.len() as f64; t.weights.len()]);
        }
        let shifted: Vec<f64> = t.weights.iter().map(|w| w + (1.0 - self.decay)).collect();
        let max = shifted.iter().cloned().fold(0.0, f64::max);
        let mut p: Vec<f64> = shifted
            .iter()
            .map(|w| w / max)
            .map(|w| if w < self.threshold { 0.0 } else { w })
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Some(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedTransform {
    pub kind: TransformKind,
    pub bin: usize,
    /// Direction for signed transforms (+1 or -1).
    pub sign: i8,
}

/// Transforms applied by one [`strong_augment`] call, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformRecord(pub Vec<AppliedTransform>);

/// `A(x)`: samples `ops_per_sample` transforms and applies them in order.
pub fn strong_augment<T: Scalar, R: Rng + ?Sized>(
    image: &Tensor<T>,
    policy: &CtaPolicy,
    rng: &mut R,
) -> Result<(Tensor<T>, TransformRecord)> {
    image_dims(image)?;
    if policy.transforms.is_empty() {
        return Err(Error::Config("CTA policy has no transforms".into()));
    }
    let mut out = image.clone();
    let mut record = Vec::with_capacity(policy.ops_per_sample);
    for _ in 0..policy.ops_per_sample {
        let t = &policy.transforms[rng.random_range(0..policy.transforms.len())];
        let probs = policy.bin_probabilities(t.kind).expect("transform present");
        let bin = WeightedIndex::new(&probs)
            .map_err(|e| Error::invalid(format!("bin weights for {:?}: {e}", t.kind)))?
            .sample(rng);
        let sign = if t.kind.signed() && rng.random::<bool>() { -1 } else { 1 };
        let applied = AppliedTransform { kind: t.kind, bin, sign };
        out = apply_transform(&out, applied, t.weights.len(), rng)?;
        record.push(applied);
    }
    Ok((out, TransformRecord(record)))
}

/// Moves every bin in `record` towards the prediction quality
/// `1 - L1(probs, onehot(label)) / 2`.
pub fn cta_update(policy: &mut CtaPolicy, probs: &[f64], label: usize, record: &TransformRecord) -> Result<()> {
    if label >= probs.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", probs.len())));
    }
    for applied in &record.0 {
        let t = policy
            .transforms
            .iter()
            .find(|t| t.kind == applied.kind)
            .ok_or_else(|| Error::invalid(format!("record references unknown transform {:?}", applied.kind)))?;
        if applied.bin >= t.weights.len() {
            return Err(Error::invalid(format!("bin {} out of range for {:?}", applied.bin, applied.kind)));
        }
    }
    let match_value = prediction_match(probs, label);
    let decay = policy.decay;
    for applied in &record.0 {
        let t = policy
            .transforms
            .iter_mut()
            .find(|t| t.kind == applied.kind)
            .expect("validated above");
        let w = &mut t.weights[applied.bin];
        *w = decay * *w + (1.0 - decay) * match_value;
    }
    Ok(())
}

pub fn prediction_match(probs: &[f64], label: usize) -> f64 {
    let l1: f64 = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - if i == label { 1.0 } else { 0.0 }).abs())
        .sum();
    (1.0 - 0.5 * l1).clamp(0.0, 1.0)
}

/// Applies one transform at magnitude `bin / (bins - 1)`. Bin 0 is the
/// identity for every transform.
pub fn apply_transform<T: Scalar, R: Rng + ?Sized>(
    image: &Tensor<T>,
    applied: AppliedTransform,
    bins: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims(image)?;
    let m = applied.bin as f64 / (bins.max(2) - 1) as f64;
    let s = applied.sign as f64;
    if m == 0.0 || applied.kind == TransformKind::Identity {
        return Ok(image.clone());
    }
    let clamp01 = |v: f64| T::narrow(v.clamp(0.0, 1.0));
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let out = match applied.kind {
        TransformKind::Identity => unreachable!(),
        TransformKind::Brightness => {
            let f = 1.0 + s * 0.9 * m;
            image.map(|v| clamp01(v.widen() * f))
        }
        TransformKind::Contrast => {
            let f = 1.0 + s * 0.9 * m;
            let mean = image.sum() / image.len() as f64;
            image.map(|v| clamp01(mean + (v.widen() - mean) * f))
        }
        TransformKind::Sharpness => {
            let f = 1.0 + s * 0.9 * m;
            let blurred = box_blur(image, h, w, c);
            let data = image
                .data()
                .iter()
                .zip(&blurred)
                .map(|(&v, &b)| clamp01(b + (v.widen() - b) * f))
                .collect();
            Tensor::new(vec![h, w, c], data)?
        }
        TransformKind::Rotate => {
            let a = (s * 30.0 * m).to_radians();
            let (sin, cos) = a.sin_cos();
            resample(image, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
            })?
        }
        TransformKind::ShearX => {
            let k = s * 0.3 * m;
            resample(image, |y, x| (y, x + k * (y - cy)))?
        }
        TransformKind::ShearY => {
            let k = s * 0.3 * m;
            resample(image, |y, x| (y + k * (x - cx), x))?
        }
        TransformKind::TranslateX => {
            let d = s * 0.3 * m * w as f64;
            resample(image, |y, x| (y, x - d))?
        }
        TransformKind::TranslateY => {
            let d = s * 0.3 * m * h as f64;
            resample(image, |y, x| (y - d, x))?
        }
        TransformKind::Solarize => {
            let threshold = 1.0 - m;
            image.map(|v| {
                let v = v.widen();
                clamp01(if v > threshold { 1.0 - v } else { v })
            })
        }
        TransformKind::Cutout => {
            let side = (m * 0.5 * h.min(w) as f64).round() as usize;
            let mut out = image.clone();
            if side > 0 {
                let y0 = rng.random_range(0..h) as i64 - side as i64 / 2;
                let x0 = rng.random_range(0..w) as i64 - side as i64 / 2;
                let data = out.data_mut();
                for y in y0.max(0)..(y0 + side as i64).min(h as i64) {
                    for x in x0.max(0)..(x0 + side as i64).min(w as i64) {
                        for ch in 0..c {
                            data[(y as usize * w + x as usize) * c + ch] = T::narrow(0.5);
                        }
                    }
                }
            }
            out
        }
    };
    Ok(out)
}

/// Inverse-mapped resampling: `source(y, x)` gives the input coordinate for
/// output pixel `(y, x)`. Out-of-range samples are filled with mid grey.
fn resample<T: Scalar>(image: &Tensor<T>, source: impl Fn(f64, f64) -> (f64, f64)) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims(image)?;
    let mut out = Vec::with_capacity(image.len());
    let mut px = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y as f64, x as f64);
            sample_bilinear(image, sy, sx, 0.5, &mut px);
            out.extend(px.iter().map(|&v| T::narrow(v.clamp(0.0, 1.0))));
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// 3x3 box blur with edge clamping, returned in `f64`.
fn box_blur<T: Scalar>(image: &Tensor<T>, h: usize, w: usize, c: usize) -> Vec<f64> {
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        acc += src[(yy * w + xx) * c + ch].widen();
                    }
                }
                out[(y * w + x) * c + ch] = acc / 9.0;
            }
        }
    }
    out
}
