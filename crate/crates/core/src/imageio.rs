//! Reading and writing RGB images as `[H, W, 3]` tensors in `[0, 1]`.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| T::narrow(v as f64 / 255.0)).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

pub fn save_rgb<T: Scalar>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let (h, w) = match *image.shape() {
        [h, w, 3] => (h, w),
        _ => return Err(Error::invalid(format!("expected an [H,W,3] image, got {:?}", image.shape()))),
    };
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, px) in image.data().chunks(3).enumerate() {
        let q = |v: T| (v.widen().clamp(0.0, 1.0) * 255.0).round() as u8;
        out.put_pixel((i % w) as u32, (i / w) as u32, Rgb([q(px[0]), q(px[1]), q(px[2])]));
    }
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
