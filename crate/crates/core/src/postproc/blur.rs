//! Separable Gaussian blur with mirrored borders.

use crate::error::{Error, Result};
use crate::layout::ImageLayout;
use crate::stats::normal_cdf;

/// Tap weights: the Gaussian integrated over unit-width bins, half-width
/// ceil(3 sigma), renormalized to sum 1. Integrated bins (rather than point
/// samples) make the discrete response to a step edge telescope onto the
/// erf curve.
fn kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as i64;
    let mut k = Vec::with_capacity((2 * half + 1) as usize);
    for j in -half..=half {
        k.push(normal_cdf((j as f64 + 0.5) / sigma) - normal_cdf((j as f64 - 0.5) / sigma));
    }
    let sum: f64 = k.iter().sum();
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Mirrors an out-of-range index into [0, n), repeating the edge sample
/// (..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...).
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

pub fn blur(image: &[f64], layout: &ImageLayout, sigma: f64) -> Result<Vec<f64>> {
    layout.check_len(image)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("blur sigma {sigma} must be positive")));
    }
    let k = kernel(sigma);
    let half = (k.len() / 2) as i64;
    let (h, w) = (layout.height as i64, layout.width as i64);
    let mut tmp = vec![0.0; image.len()];
    for y in 0..layout.height {
        for x in 0..w {
            for c in 0..layout.channels {
                let mut acc = 0.0;
                for (t, wt) in k.iter().enumerate() {
                    let xx = reflect(x + t as i64 - half, w);
                    acc += wt * image[layout.index(y, xx, c)];
                }
                tmp[layout.index(y, x as usize, c)] = acc;
            }
        }
    }
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..layout.width {
            for c in 0..layout.channels {
                let mut acc = 0.0;
                for (t, wt) in k.iter().enumerate() {
                    let yy = reflect(y + t as i64 - half, h);
                    acc += wt * tmp[layout.index(yy, x, c)];
                }
                out[layout.index(y as usize, x, c)] = acc;
            }
        }
    }
    Ok(out)
}
