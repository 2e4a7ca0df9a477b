use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::augment::resize;
use crate::error::{Error, Result};
use crate::nn::{ClassifierModel, Tape, Tensor};
use crate::scalar::Scalar;

/// Grad-CAM map at the resolution of the last conv block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub image_id: String,
    pub class: usize,
    pub height: usize,
    pub width: usize,
    /// `ReLU(sum_k w_k A_k)` before normalisation, row-major.
    pub raw: Vec<f64>,
    /// `raw / max(raw)`, or all zeros when `raw` is zero.
    pub normalized: Vec<f64>,
}

/// Saliency of `target` for one `[H,W,C]` image.
pub fn grad_cam<T: Scalar>(model: &ClassifierModel<T>, image: &Tensor<T>, target: usize, image_id: &str) -> Result<SaliencyMap> {
    let classes = model.spec().classes;
    if target >= classes {
        return Err(Error::invalid(format!("target class {target} out of range for {classes}")));
    }
    if model.spec().blocks.is_empty() {
        return Err(Error::invalid("Grad-CAM needs a model with at least one conv layer"));
    }
    let batch = Tensor::stack(std::slice::from_ref(image))?;
    let mut tape = Tape::new();
    let graph = model.forward(&mut tape, &batch)?;
    let activations = graph.last_conv.expect("model has conv blocks");
    let mut select = vec![0.0; classes];
    select[target] = 1.0;
    let logit = tape.weighted_sum(graph.logits, select)?;
    let grads = tape.backward_with(logit, &[activations])?;
    let a = tape.value(activations);
    let (h, w, k) = (a.shape()[1], a.shape()[2], a.shape()[3]);
    let da = grads.get_or_zeros(activations, a.shape());
    let spatial = (h * w) as f64;
    let mut weights = vec![0.0; k];
    for (i, g) in da.data().iter().enumerate() {
        weights[i % k] += g.widen() / spatial;
    }
    let raw: Vec<f64> = a
        .data()
        .chunks(k)
        .map(|px| px.iter().zip(&weights).map(|(v, wk)| v.widen() * wk).sum::<f64>().max(0.0))
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let normalized = raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    Ok(SaliencyMap {
        image_id: image_id.to_owned(),
        class: target,
        height: h,
        width: w,
        raw,
        normalized,
    })
}

/// Blue-to-red ramp.
fn ramp(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [v, (1.0 - (2.0 * v - 1.0).abs()) * 0.8, 1.0 - v]
}

/// Writes the normalised map as CSV (one row per map row) and an overlay PNG
/// of `image` (`[H,W,3]`, values in `[0,1]`) blended with the upsampled map.
pub fn write_saliency<T: Scalar>(map: &SaliencyMap, image: &Tensor<T>, png_path: &Path, csv_path: &Path) -> Result<()> {
    let mut text = String::new();
    for row in map.normalized.chunks(map.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(csv_path, text).map_err(|e| Error::io(csv_path, e))?;

    let (h, w, c) = match *image.shape() {
        [h, w, c] if c == 1 || c == 3 => (h, w, c),
        _ => return Err(Error::invalid(format!("overlay needs an [H,W,1|3] image, got {:?}", image.shape()))),
    };
    let small = Tensor::<f64>::new(vec![map.height, map.width, 1], map.normalized.clone())?;
    let up = resize(&small, h, w)?;
    let mut png = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let s = up.data()[y * w + x];
            let heat = ramp(s);
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let base = image.data()[(y * w + x) * c + if c == 3 { ch } else { 0 }].widen();
                px[ch] = ((0.55 * base + 0.45 * heat[ch]).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            png.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    png.save(png_path).map_err(|source| Error::Image {
        path: png_path.to_path_buf(),
        source,
    })
}
