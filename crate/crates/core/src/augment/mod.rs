//! Weak (`alpha`) and strong (`A`) augmentation plus bounding-box crops.
//!
//! Images are `[H, W, C]` tensors with values in `[0, 1]`.

pub mod annotation;
pub mod bbox;
pub mod cta;
pub mod weak;

pub use annotation::{parse_annotations_jsonl, parse_voc_xml, BboxAnnotation, FeatureClass};
pub use bbox::{crop_to_bbox, CropJitter, CropRect};
pub use cta::{cta_update, strong_augment, AppliedTransform, CtaPolicy, TransformKind, TransformRecord};
pub use weak::{weak_augment, WeakAugmentConfig};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub(crate) fn image_dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(Error::invalid(format!(
            "expected a non-empty [H, W, C] image, got shape {:?}",
            image.shape()
        ))),
    }
}

/// Bilinear sample at continuous pixel coordinates (pixel centres on
/// integers). Points outside the image read `fill`.
pub(crate) fn sample_bilinear<T: Scalar>(image: &Tensor<T>, y: f64, x: f64, fill: f64, out: &mut [f64]) {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let data = image.data();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let weight = wy * wx;
            if weight == 0.0 {
                continue;
            }
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                out.iter_mut().for_each(|v| *v += weight * fill);
            } else {
                let base = (yy as usize * w + xx as usize) * c;
                for (ch, v) in out.iter_mut().enumerate() {
                    *v += weight * data[base + ch].widen();
                }
            }
        }
    }
}

/// Resamples the region `[x0, x1) x [y0, y1)` (pixel-edge coordinates) to
/// `out_h x out_w`, clamping reads to the image border.
pub fn resize_region<T: Scalar>(
    image: &Tensor<T>,
    region: (f64, f64, f64, f64),
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims(image)?;
    let (x0, y0, x1, y1) = region;
    if out_h == 0 || out_w == 0 || x1 <= x0 || y1 <= y0 {
        return Err(Error::invalid(format!("degenerate resize region {region:?} -> {out_h}x{out_w}")));
    }
    let mut out = Vec::with_capacity(out_h * out_w * c);
    let mut px = vec![0.0; c];
    for i in 0..out_h {
        let sy = (y0 + (i as f64 + 0.5) * (y1 - y0) / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        for j in 0..out_w {
            let sx = (x0 + (j as f64 + 0.5) * (x1 - x0) / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            sample_bilinear(image, sy, sx, 0.0, &mut px);
            out.extend(px.iter().map(|&v| T::narrow(v)));
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Resizes a whole image.
pub fn resize<T: Scalar>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w, _) = image_dims(image)?;
    resize_region(image, (0.0, 0.0, w as f64, h as f64), out_h, out_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_identity() {
        let img = Tensor::<f64>::from_f64([2, 3, 1], &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let out = resize(&img, 2, 3).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_image_shapes() {
        assert!(image_dims(&Tensor::<f32>::zeros([4, 4])).is_err());
        assert!(image_dims(&Tensor::<f32>::zeros([0, 4, 3])).is_err());
    }
}
