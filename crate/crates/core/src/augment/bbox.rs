use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

use super::annotation::BboxAnnotation;
use super::{image_dims, resize_region};

/// Per-side jitter of a chosen box, as fractions of the box side. A side
/// moves outwards by up to `grow` and inwards by up to `shrink`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropJitter {
    pub shrink: f64,
    pub grow: f64,
    /// Minimum fraction of the box area the crop must keep.
    pub min_coverage: f64,
    pub max_attempts: usize,
}

impl Default for CropJitter {
    fn default() -> Self {
        CropJitter {
            shrink: 0.10,
            grow: 0.25,
            min_coverage: 0.8,
            max_attempts: 64,
        }
    }
}

impl CropJitter {
    pub fn none() -> Self {
        CropJitter {
            shrink: 0.0,
            grow: 0.0,
            ..Self::default()
        }
    }
}

/// Crop rectangle in pixel-edge coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropRect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    /// Fraction of `other`'s area inside `self`.
    pub fn coverage_of(&self, other: &CropRect) -> f64 {
        let inter = CropRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        inter.area() / other.area()
    }

    fn from_bbox(b: &BboxAnnotation) -> Self {
        CropRect {
            x0: b.xmin as f64,
            y0: b.ymin as f64,
            x1: b.xmax as f64,
            y1: b.ymax as f64,
        }
    }
}

/// Picks a box uniformly, jitters it, and resizes the crop to
/// `out_h x out_w`. Without usable boxes the centred square crop is used.
pub fn crop_to_bbox<T: Scalar, R: Rng + ?Sized>(
    image: &Tensor<T>,
    annotations: &[BboxAnnotation],
    out_h: usize,
    out_w: usize,
    jitter: &CropJitter,
    rng: &mut R,
) -> Result<(Tensor<T>, CropRect)> {
    let (h, w, _) = image_dims(image)?;
    if jitter.shrink < 0.0 || jitter.grow < 0.0 || jitter.shrink >= 0.5 || !(0.0..=1.0).contains(&jitter.min_coverage) {
        return Err(Error::Config(format!("invalid crop jitter {jitter:?}")));
    }
    let usable: Vec<&BboxAnnotation> = annotations
        .iter()
        .filter(|a| {
            let ok = a.is_valid(w, h);
            if !ok {
                warn!("skipping degenerate box {a:?} on a {w}x{h} image");
            }
            ok
        })
        .collect();
    let rect = if usable.is_empty() {
        let side = h.min(w) as f64;
        let (x0, y0) = ((w as f64 - side) / 2.0, (h as f64 - side) / 2.0);
        CropRect {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        }
    } else {
        let chosen = CropRect::from_bbox(usable[rng.random_range(0..usable.len())]);
        jittered(&chosen, w as f64, h as f64, jitter, rng)
    };
    let out = resize_region(image, (rect.x0, rect.y0, rect.x1, rect.y1), out_h, out_w)?;
    Ok((out, rect))
}

fn jittered<R: Rng + ?Sized>(b: &CropRect, w: f64, h: f64, jitter: &CropJitter, rng: &mut R) -> CropRect {
    let (bw, bh) = (b.x1 - b.x0, b.y1 - b.y0);
    let mut offset = |side: f64| {
        if jitter.shrink == 0.0 && jitter.grow == 0.0 {
            0.0
        } else {
            rng.random_range(-jitter.shrink..=jitter.grow) * side
        }
    };
    for _ in 0..jitter.max_attempts {
        let c = CropRect {
            x0: (b.x0 - offset(bw)).max(0.0),
            y0: (b.y0 - offset(bh)).max(0.0),
            x1: (b.x1 + offset(bw)).min(w),
            y1: (b.y1 + offset(bh)).min(h),
        };
        if c.coverage_of(b) >= jitter.min_coverage {
            return c;
        }
    }
    *b
}
