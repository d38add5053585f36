//! Center crop with bilinear rescale back to the original size.

use crate::error::{Error, Result};
use crate::layout::ImageLayout;

/// Crops the centered floor(ratio * H) x floor(ratio * W) window and
/// bilinearly rescales it back to H x W. Source coordinates are
/// corner-aligned (dst 0 maps to src 0, dst last to src last), which makes
/// the rescale exact on affine images; ratio 1 is the identity.
pub fn crop_resize(image: &[f64], layout: &ImageLayout, ratio: f64) -> Result<Vec<f64>> {
    layout.check_len(image)?;
    if !(ratio.is_finite() && ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!("crop ratio {ratio} must lie in (0, 1]")));
    }
    let (h, w, c) = (layout.height, layout.width, layout.channels);
    let ch = ((ratio * h as f64).floor() as usize).max(1);
    let cw = ((ratio * w as f64).floor() as usize).max(1);
    if ch == h && cw == w {
        return Ok(image.to_vec());
    }
    let oy = (h - ch) / 2;
    let ox = (w - cw) / 2;
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        let (y0, y1, fy) = source_taps(y, h, ch);
        for x in 0..w {
            let (x0, x1, fx) = source_taps(x, w, cw);
            for chan in 0..c {
                let p = |yy: usize, xx: usize| image[layout.index(oy + yy, ox + xx, chan)];
                out[layout.index(y, x, chan)] = (1.0 - fy) * (1.0 - fx) * p(y0, x0)
                    + (1.0 - fy) * fx * p(y0, x1)
                    + fy * (1.0 - fx) * p(y1, x0)
                    + fy * fx * p(y1, x1);
            }
        }
    }
    Ok(out)
}

/// Maps destination index `i` of an axis of length `dst` onto the two
/// bracketing source taps of an axis of length `src`, with the blend
/// fraction toward the upper tap. A single-sample axis maps to its center.
fn source_taps(i: usize, dst: usize, src: usize) -> (usize, usize, f64) {
    let pos = if dst > 1 {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    } else {
        (src - 1) as f64 / 2.0
    };
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, pos - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_ratio_is_identity() {
        let layout = ImageLayout::new(4, 5, 3, (0.0, 1.0)).unwrap();
        let img: Vec<f64> = (0..layout.len()).map(|i| i as f64 * 0.01).collect();
        assert_eq!(crop_resize(&img, &layout, 1.0).unwrap(), img);
    }

    #[test]
    fn tiny_crop_yields_constant_image() {
        let layout = ImageLayout::new(2, 2, 1, (0.0, 1.0)).unwrap();
        let img = vec![0.1, 0.2, 0.3, 0.4];
        // ratio 0.8 floors both axes to 1 sample: the crop window's single
        // value fills the output.
        let out = crop_resize(&img, &layout, 0.8).unwrap();
        assert_eq!(out, vec![0.1; 4]);
    }

    #[test]
    fn ramps_stay_ramps_under_upscale() {
        // An affine image sampled bilinearly at affinely mapped coordinates
        // is still affine, so second differences along each axis vanish.
        let layout = ImageLayout::new(10, 10, 1, (0.0, 1.0)).unwrap();
        let img: Vec<f64> = (0..100)
            .map(|i| {
                let (y, x) = (i / 10, i % 10);
                0.03 * y as f64 + 0.07 * x as f64
            })
            .collect();
        let out = crop_resize(&img, &layout, 0.85).unwrap();
        for y in 0..10 {
            for x in 0..8 {
                let a = out[layout.index(y, x, 0)];
                let b = out[layout.index(y, x + 1, 0)];
                let c = out[layout.index(y, x + 2, 0)];
                assert!((c - 2.0 * b + a).abs() < 1e-6, "row {y} col {x}");
            }
        }
        for x in 0..10 {
            for y in 0..8 {
                let a = out[layout.index(y, x, 0)];
                let b = out[layout.index(y + 1, x, 0)];
                let c = out[layout.index(y + 2, x, 0)];
                assert!((c - 2.0 * b + a).abs() < 1e-6, "col {x} row {y}");
            }
        }
        // Corner alignment pins the crop window's corners.
        assert!((out[layout.index(0, 0, 0)] - img[layout.index(1, 1, 0)]).abs() < 1e-12);
        assert!((out[layout.index(9, 9, 0)] - img[layout.index(8, 8, 0)]).abs() < 1e-12);
    }

    #[test]
    fn crop_window_is_centered() {
        let layout = ImageLayout::new(5, 5, 1, (0.0, 1.0)).unwrap();
        let mut img = vec![0.0; 25];
        img[layout.index(2, 2, 0)] = 1.0;
        // ratio 0.8 on 5 floors to a 4x4 window at offset 0; the hot pixel
        // stays inside every admissible window, so mass is conserved under
        // the interpolation's partition of unity.
        let out = crop_resize(&img, &layout, 0.8).unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out.iter().any(|v| *v > 0.2));
    }

    #[test]
    fn rejects_out_of_domain_ratio() {
        let layout = ImageLayout::new(2, 2, 1, (0.0, 1.0)).unwrap();
        let img = vec![0.0; 4];
        assert!(crop_resize(&img, &layout, 0.0).is_err());
        assert!(crop_resize(&img, &layout, 1.2).is_err());
        assert!(crop_resize(&img, &layout, f64::NAN).is_err());
    }

    #[test]
    fn channels_are_resized_independently() {
        let layout = ImageLayout::new(3, 3, 3, (0.0, 1.0)).unwrap();
        let img: Vec<f64> = (0..27)
            .map(|i| match i % 3 {
                0 => 0.2,
                1 => 0.5,
                _ => 0.9,
            })
            .collect();
        let out = crop_resize(&img, &layout, 0.9).unwrap();
        for (i, v) in out.iter().enumerate() {
            let expect = match i % 3 {
                0 => 0.2,
                1 => 0.5,
                _ => 0.9,
            };
            assert!((v - expect).abs() < 1e-12);
        }
    }
}
