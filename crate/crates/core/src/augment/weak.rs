use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

use super::image_dims;

/// Random horizontal flip followed by an integer translation with reflect
/// padding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakAugmentConfig {
    pub flip_probability: f64,
    /// Maximum shift as a fraction of the image side.
    pub max_shift: f64,
}

impl Default for WeakAugmentConfig {
    fn default() -> Self {
        WeakAugmentConfig {
            flip_probability: 0.5,
            max_shift: 0.125,
        }
    }
}

impl WeakAugmentConfig {
    pub fn identity() -> Self {
        WeakAugmentConfig {
            flip_probability: 0.0,
            max_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("flip probability {} outside [0,1]", self.flip_probability)));
        }
        if !(0.0..=0.5).contains(&self.max_shift) {
            return Err(Error::Config(format!("shift fraction {} outside [0,0.5]", self.max_shift)));
        }
        Ok(())
    }
}

/// One draw of the weak augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeakParams {
    pub flip: bool,
    pub dy: i64,
    pub dx: i64,
}

pub fn sample_weak_params<R: Rng + ?Sized>(config: &WeakAugmentConfig, height: usize, width: usize, rng: &mut R) -> WeakParams {
    let flip = rng.random::<f64>() < config.flip_probability;
    let max_dy = (config.max_shift * height as f64).round() as i64;
    let max_dx = (config.max_shift * width as f64).round() as i64;
    let dy = if max_dy > 0 { rng.random_range(-max_dy..=max_dy) } else { 0 };
    let dx = if max_dx > 0 { rng.random_range(-max_dx..=max_dx) } else { 0 };
    WeakParams { flip, dy, dx }
}

pub fn apply_weak<T: Scalar>(image: &Tensor<T>, params: WeakParams) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims(image)?;
    if !params.flip && params.dx == 0 && params.dy == 0 {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        let sy = reflect(y as i64 - params.dy, h);
        for x in 0..w {
            let mut sx = reflect(x as i64 - params.dx, w);
            if params.flip {
                sx = w - 1 - sx;
            }
            out.extend_from_slice(&src[(sy * w + sx) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// `alpha(x)`: weak augmentation of an `[H,W,C]` image.
pub fn weak_augment<T: Scalar, R: Rng + ?Sized>(image: &Tensor<T>, config: &WeakAugmentConfig, rng: &mut R) -> Result<Tensor<T>> {
    let (h, w, _) = image_dims(image)?;
    let params = sample_weak_params(config, h, w, rng);
    apply_weak(image, params)
}

/// Mirror index into `[0, n)`, edge pixels repeated (symmetric padding).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}
