//! Adaptive local-statistics (Wiener-type) noise removal.

use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DenoiseError {
    #[error("window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
}

/// Per-pixel local mean and variance over a `window` x `window`
/// neighbourhood with edge-replicated borders.
pub fn local_stats(img: &GrayImage, window: usize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    // Summed-area tables over the padded image, in exact integer arithmetic.
    let (pw, ph) = (w + 2 * r as usize, h + 2 * r as usize);
    let mut s1 = vec![0u64; (pw + 1) * (ph + 1)];
    let mut s2 = vec![0u64; (pw + 1) * (ph + 1)];
    for py in 0..ph {
        let sy = clamp(py as isize - r, h);
        let (mut row1, mut row2) = (0u64, 0u64);
        for px in 0..pw {
            let v = img.get(clamp(px as isize - r, w), sy) as u64;
            row1 += v;
            row2 += v * v;
            let i = (py + 1) * (pw + 1) + px + 1;
            s1[i] = s1[i - (pw + 1)] + row1;
            s2[i] = s2[i - (pw + 1)] + row2;
        }
    }
    let n = (window * window) as f64;
    let box_sum = |s: &[u64], x: usize, y: usize| {
        let (x1, y1) = (x + window, y + window);
        s[y1 * (pw + 1) + x1] + s[y * (pw + 1) + x] - s[y * (pw + 1) + x1] - s[y1 * (pw + 1) + x]
    };
    let mut mean = vec![0.0; w * h];
    let mut var = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let m = box_sum(&s1, x, y) as f64 / n;
            let q = box_sum(&s2, x, y) as f64 / n;
            mean[y * w + x] = m;
            var[y * w + x] = (q - m * m).max(0.0);
        }
    }
    (mean, var)
}

/// Shrinks every pixel toward its local mean by the local signal-to-noise
/// ratio. Noise power is the average local variance over the image:
///
/// `out = mu + max(0, var - noise) / max(var, noise) * (x - mu)`
///
/// rounded and clamped to 8 bits.
pub fn denoise(img: &GrayImage, window: usize) -> Result<GrayImage, DenoiseError> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(DenoiseError::InvalidWindow(window));
    }
    let (mean, var) = local_stats(img, window);
    let noise = var.iter().sum::<f64>() / var.len() as f64;
    let pixels = img
        .pixels()
        .iter()
        .zip(mean.iter().zip(&var))
        .map(|(&x, (&mu, &v))| {
            let denom = v.max(noise).max(f64::MIN_POSITIVE);
            let gain = (v - noise).max(0.0) / denom;
            (mu + gain * (x as f64 - mu)).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(GrayImage::new(img.width(), img.height(), pixels).expect("same dimensions"))
}
