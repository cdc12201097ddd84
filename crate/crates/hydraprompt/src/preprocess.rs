//! Bilinear resize and centre crop.

use hydraprompt_core::Tensor;

use crate::error::{Error, Result};

/// Bilinear resize of a square-or-not `H×W×C` image to `size×size`, using
/// pixel-centre alignment and edge clamping.
pub fn resize_bilinear(image: &Tensor, size: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || size == 0 {
        return Err(Error::Config(format!("cannot resize {s:?} to {size}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if (h, w) == (size, size) {
        return Ok(image.clone());
    }
    let src = image.data();
    let axis = |n_in: usize, i: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n_in as f64 / size as f64 - 0.5).max(0.0);
        let lo = (x.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(size * size * c);
    for i in 0..size {
        let (y0, y1, fy) = axis(h, i);
        for j in 0..size {
            let (x0, x1, fx) = axis(w, j);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::new(&[size, size, c], out)?)
}

/// Centre `crop×crop` window of an `H×W×C` image.
pub fn center_crop(image: &Tensor, crop: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || crop == 0 || crop > s[0] || crop > s[1] {
        return Err(Error::Config(format!("cannot crop {s:?} to {crop}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let (top, left) = ((h - crop) / 2, (w - crop) / 2);
    let mut out = Vec::with_capacity(crop * crop * c);
    for y in top..top + crop {
        out.extend_from_slice(&image.data()[(y * w + left) * c..(y * w + left + crop) * c]);
    }
    Ok(Tensor::new(&[crop, crop, c], out)?)
}

/// Resize to `resize`, then centre-crop to `crop`. No other augmentation.
pub fn preprocess(image: &Tensor, resize: usize, crop: usize) -> Result<Tensor> {
    if crop > resize {
        return Err(Error::Config(format!("crop {crop} exceeds resize {resize}")));
    }
    center_crop(&resize_bilinear(image, resize)?, crop)
}
