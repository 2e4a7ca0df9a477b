//! Procedural two-class texture data: oriented stripes (class 0) against
//! scattered blobs (class 1), both tinted and noisy.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::splits::{make_splits, SplitSize, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, Tensor};
use crate::scalar::Scalar;
use crate::trainer::{stream_rng, LabelledSet, Preset, TrainConfig, TrainData, TrainMode};

const STREAM: u64 = 64;

pub const CLASS_NAMES: [&str; 2] = ["stripes", "blobs"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureConfig {
    pub size: usize,
    /// Pattern amplitude range around mid-grey.
    pub contrast: (f64, f64),
    /// Per-image pixel noise standard deviation range.
    pub noise: (f64, f64),
    /// Stripe period range in pixels.
    pub period: (f64, f64),
    /// Blob count and radius ranges.
    pub blobs: (usize, usize),
    pub radius: (f64, f64),
    /// Upper bound of the other class's pattern amplitude, relative to the
    /// image's own pattern.
    pub distractor: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig {
            size: 64,
            contrast: (0.1, 0.3),
            noise: (0.05, 0.15),
            period: (3.0, 30.0),
            blobs: (3, 9),
            radius: (2.0, 14.0),
            distractor: 0.9,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn add_stripes<R: Rng + ?Sized>(config: &TextureConfig, amp: f64, pattern: &mut [f64], rng: &mut R) {
    let s = config.size;
    let theta = rng.random_range(0.0..PI);
    let period = uniform(rng, config.period);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (c, sn) = (theta.cos(), theta.sin());
    for y in 0..s {
        for x in 0..s {
            let t = (x as f64 * c + y as f64 * sn) * 2.0 * PI / period + phase;
            pattern[y * s + x] += amp * t.sin();
        }
    }
}

fn add_blobs<R: Rng + ?Sized>(config: &TextureConfig, amp: f64, pattern: &mut [f64], rng: &mut R) {
    let s = config.size;
    let count = rng.random_range(config.blobs.0..=config.blobs.1.max(config.blobs.0));
    for _ in 0..count {
        let (cy, cx) = (rng.random_range(0.0..s as f64), rng.random_range(0.0..s as f64));
        let r = uniform(rng, config.radius);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for y in 0..s {
            for x in 0..s {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                pattern[y * s + x] += sign * 1.6 * amp * (-d2 / (2.0 * r * r)).exp();
            }
        }
    }
}

/// One `[size, size, 3]` image of `class`: its own pattern plus a fainter
/// copy of the other class's pattern.
pub fn texture_image<T: Scalar, R: Rng + ?Sized>(config: &TextureConfig, class: usize, rng: &mut R) -> Result<Tensor<T>> {
    let s = config.size;
    if s == 0 {
        return Err(Error::invalid("texture size must be positive"));
    }
    if class > 1 {
        return Err(Error::invalid(format!("texture class {class} not in {{0, 1}}")));
    }
    let amp = uniform(rng, config.contrast);
    let other = amp * rng.random_range(0.0..=config.distractor);
    let mut pattern = vec![0.0; s * s];
    let (stripe_amp, blob_amp) = if class == 0 { (amp, other) } else { (other, amp) };
    add_stripes(config, stripe_amp, &mut pattern, rng);
    add_blobs(config, blob_amp, &mut pattern, rng);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let base = rng.random_range(0.35..0.65);
    let noise = Normal::new(0.0, uniform(rng, config.noise)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(s * s * 3);
    for p in &pattern {
        for t in tint {
            let v = (base + p) * t + noise.sample(rng);
            data.push(T::narrow(v.clamp(0.0, 1.0)));
        }
    }
    Tensor::new(vec![s, s, 3], data)
}

/// `n` images with alternating labels; image `i` depends only on
/// `(seed, i)`.
pub fn texture_set<T: Scalar>(config: &TextureConfig, n: usize, seed: u64) -> Result<LabelledSet<T>> {
    let mut set = LabelledSet::default();
    for i in 0..n {
        let label = i % 2;
        set.images.push(texture_image(config, label, &mut stream_rng(seed, STREAM, i as u64))?);
        set.labels.push(label);
    }
    Ok(set)
}

/// Balanced 20% test and 10% validation; `labelled_fraction` of the total is
/// labelled training data and the remainder is the unlabelled pool.
pub fn texture_train_data<T: Scalar>(config: &TextureConfig, total: usize, labelled_fraction: f64, seed: u64) -> Result<TrainData<T>> {
    let all = texture_set(config, total, seed)?;
    let splits = make_splits(
        &all.labels,
        &SplitSpec {
            test: SplitSize::Fraction(0.2),
            validation: SplitSize::Fraction(0.1),
            labelled_fraction,
            balanced_test: true,
            seed,
        },
    )?;
    let pick = |idx: &[usize]| LabelledSet {
        images: idx.iter().map(|&i| all.images[i].clone()).collect(),
        labels: idx.iter().map(|&i| all.labels[i]).collect(),
    };
    let mut used = vec![false; total];
    for &i in splits.train.iter().chain(&splits.validation).chain(&splits.test) {
        used[i] = true;
    }
    let unlabelled = (0..total).filter(|&i| !used[i]).map(|i| all.images[i].clone()).collect();
    Ok(TrainData {
        train: pick(&splits.train),
        unlabelled,
        validation: pick(&splits.validation),
        test: Some(pick(&splits.test)),
    })
}

/// Network for the texture comparison.
pub fn texture_model_spec(config: &TextureConfig) -> ModelSpec {
    ModelSpec::with_widths(config.size, config.size, 2, &[8, 16, 32])
}

/// Training settings for the texture comparison. SL and SSL share batch size
/// and learning rate, so only the unlabelled term differs between modes.
pub fn texture_train_config(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 80,
        seed,
        batch_size: 16,
        base_lr: 0.1,
        mu: 3,
        tau: 0.9,
        lambda_init: 1.0,
        lambda_fixed: 1.0,
        eval_every_epoch: false,
        ..TrainConfig::preset(Preset::FeatureRecognition, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let c = TextureConfig::default();
        let a: LabelledSet<f32> = texture_set(&c, 6, 3).unwrap();
        let b: LabelledSet<f32> = texture_set(&c, 6, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels, vec![0, 1, 0, 1, 0, 1]);
        assert!(a.images.iter().all(|im| im.shape() == [64, 64, 3]));
        assert!(a.images[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a.images[0], a.images[2]);
    }

    #[test]
    fn split_sizes() {
        let c = TextureConfig {
            size: 8,
            ..Default::default()
        };
        let d: TrainData<f32> = texture_train_data(&c, 200, 0.1, 1).unwrap();
        assert_eq!(d.train.len(), 20);
        assert_eq!(d.validation.len(), 20);
        assert_eq!(d.test.as_ref().unwrap().len(), 40);
        assert_eq!(d.unlabelled.len(), 120);
        assert!(texture_image::<f32, _>(&c, 2, &mut stream_rng(0, 0, 0)).is_err());
    }
}
