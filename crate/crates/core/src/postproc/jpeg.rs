//! Baseline JPEG round-trip on flat images: map the layout's value range to
//! [0, 255], convert RGB to YCbCr for three-channel images (4:4:4, no
//! subsampling), take 8x8 block DCTs, quantize with the standard tables
//! scaled by the conventional quality formula, then invert every step.
//! Nothing is entropy-coded; only the lossy stages matter here.

use crate::error::{Error, Result};
use crate::layout::ImageLayout;

/// Standard luminance quantization table, row-major.
const LUMA_BASE: [i64; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard chrominance quantization table, row-major.
const CHROMA_BASE: [i64; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table by the conventional quality mapping: scale is
/// 5000 / q below 50, otherwise 200 - 2q, and every entry is clamped to
/// [1, 255]. Quality 50 reproduces the base table.
fn scaled_table(base: &[i64; 64], quality: i64) -> [f64; 64] {
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut t = [0.0; 64];
    for (out, b) in t.iter_mut().zip(base) {
        *out = ((b * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t
}

/// Orthonormal 8-point DCT-II matrix: row 0 is 1/sqrt(8), row k is
/// (1/2) cos((2j+1) k pi / 16). Blocks transform as M B M^T, which equals
/// the standard JPEG 2-D DCT normalization.
fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if k == 0 {
                0.5 / std::f64::consts::SQRT_2
            } else {
                0.5 * ((2 * j + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos()
            };
        }
    }
    m
}

/// One plane, padded to multiples of 8 by edge replication, transformed
/// block by block: level shift, DCT, quantize, dequantize, inverse DCT,
/// unshift. Returns the un-padded plane.
fn round_trip_plane(plane: &[f64], h: usize, w: usize, table: &[f64; 64]) -> Vec<f64> {
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let mut padded = vec![0.0; ph * pw];
    for y in 0..ph {
        for x in 0..pw {
            padded[y * pw + x] = plane[y.min(h - 1) * w + x.min(w - 1)];
        }
    }
    let m = dct_matrix();
    let mut block = [[0.0; 8]; 8];
    let mut tmp = [[0.0; 8]; 8];
    let mut coef = [[0.0; 8]; 8];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for (y, row) in block.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = padded[(by + y) * pw + bx + x] - 128.0;
                }
            }
            // coef = M B M^T
            for y in 0..8 {
                for x in 0..8 {
                    tmp[y][x] = (0..8).map(|j| m[y][j] * block[j][x]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    coef[y][x] = (0..8).map(|j| tmp[y][j] * m[x][j]).sum();
                }
            }
            for (y, row) in coef.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    let q = table[y * 8 + x];
                    *v = (*v / q).round_ties_even() * q;
                }
            }
            // block = M^T coef M
            for y in 0..8 {
                for x in 0..8 {
                    tmp[y][x] = (0..8).map(|j| m[j][y] * coef[j][x]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    block[y][x] = (0..8).map(|j| tmp[y][j] * m[j][x]).sum::<f64>() + 128.0;
                }
            }
            for (y, row) in block.iter().enumerate() {
                for (x, v) in row.iter().enumerate() {
                    padded[(by + y) * pw + bx + x] = *v;
                }
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        out[y * w..(y + 1) * w].copy_from_slice(&padded[y * pw..y * pw + w]);
    }
    out
}

pub fn jpeg(image: &[f64], layout: &ImageLayout, quality: i64) -> Result<Vec<f64>> {
    layout.check_len(image)?;
    if !(1..=100).contains(&quality) {
        return Err(Error::BadQuality(quality));
    }
    let (lo, hi) = layout.value_range;
    let (h, w, c) = (layout.height, layout.width, layout.channels);
    let to_u8 = |v: f64| ((v - lo) / (hi - lo) * 255.0).clamp(0.0, 255.0).round_ties_even();
    let luma = scaled_table(&LUMA_BASE, quality);
    let planes: Vec<Vec<f64>> = if c == 1 {
        let plane: Vec<f64> = image.iter().map(|&v| to_u8(v)).collect();
        vec![round_trip_plane(&plane, h, w, &luma)]
    } else {
        let chroma = scaled_table(&CHROMA_BASE, quality);
        let mut y_plane = vec![0.0; h * w];
        let mut cb = vec![0.0; h * w];
        let mut cr = vec![0.0; h * w];
        for i in 0..h * w {
            let r = to_u8(image[3 * i]);
            let g = to_u8(image[3 * i + 1]);
            let b = to_u8(image[3 * i + 2]);
            y_plane[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb[i] = 128.0 - 0.168735892 * r - 0.331264108 * g + 0.5 * b;
            cr[i] = 128.0 + 0.5 * r - 0.418687589 * g - 0.081312411 * b;
        }
        vec![
            round_trip_plane(&y_plane, h, w, &luma),
            round_trip_plane(&cb, h, w, &chroma),
            round_trip_plane(&cr, h, w, &chroma),
        ]
    };
    let from_u8 = |v: f64| lo + v.clamp(0.0, 255.0).round_ties_even() / 255.0 * (hi - lo);
    let mut out = vec![0.0; image.len()];
    if c == 1 {
        for (o, v) in out.iter_mut().zip(&planes[0]) {
            *o = from_u8(*v);
        }
    } else {
        for i in 0..h * w {
            let y = planes[0][i];
            let cb = planes[1][i] - 128.0;
            let cr = planes[2][i] - 128.0;
            out[3 * i] = from_u8(y + 1.402 * cr);
            out[3 * i + 1] = from_u8(y - 0.344136286 * cb - 0.714136286 * cr);
            out[3 * i + 2] = from_u8(y + 1.772 * cb);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_layout(h: usize, w: usize) -> ImageLayout {
        ImageLayout::new(h, w, 1, (-1.0, 1.0)).unwrap()
    }

    /// Smooth synthetic image standing in for natural content.
    fn smooth_image(layout: &ImageLayout) -> Vec<f64> {
        let mut img = Vec::with_capacity(layout.len());
        for y in 0..layout.height {
            for x in 0..layout.width {
                for c in 0..layout.channels {
                    let v = (0.11 * y as f64 + 0.3 * c as f64).sin() * (0.17 * x as f64).cos();
                    img.push(0.8 * v);
                }
            }
        }
        img
    }

    #[test]
    fn quality_is_validated() {
        let layout = gray_layout(8, 8);
        let img = vec![0.0; 64];
        assert!(matches!(jpeg(&img, &layout, 0), Err(Error::BadQuality(0))));
        assert!(matches!(jpeg(&img, &layout, 101), Err(Error::BadQuality(101))));
        assert!(jpeg(&img, &layout, 1).is_ok());
        assert!(jpeg(&img, &layout, 100).is_ok());
    }

    #[test]
    fn quality_fifty_reproduces_base_tables() {
        let t = scaled_table(&LUMA_BASE, 50);
        for (s, b) in t.iter().zip(&LUMA_BASE) {
            assert_eq!(*s, *b as f64);
        }
        // Quality 100 clamps every entry up to 1.
        assert!(scaled_table(&CHROMA_BASE, 100).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_mid_gray_round_trips_exactly() {
        // 128 on the byte scale: the level shift zeroes the block, so every
        // coefficient quantizes to zero at any quality.
        let layout = gray_layout(11, 13);
        let v = -1.0 + 128.0 / 255.0 * 2.0;
        let img = vec![v; layout.len()];
        for q in [1, 10, 50, 80, 100] {
            let out = jpeg(&img, &layout, q).unwrap();
            for o in &out {
                assert_eq!(*o, v);
            }
        }
    }

    #[test]
    fn lower_quality_means_larger_error() {
        let layout = gray_layout(24, 24);
        let img = smooth_image(&layout);
        let mse = |q: i64| {
            let out = jpeg(&img, &layout, q).unwrap();
            out.iter().zip(&img).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / img.len() as f64
        };
        let hi = mse(95);
        let lo = mse(10);
        assert!(lo > hi, "mse(q=10)={lo} should exceed mse(q=95)={hi}");
    }

    #[test]
    fn matches_direct_dct_oracle_per_block() {
        // Independent path: quadruple-loop DCT with the textbook
        // normalization F(u,v) = C(u)C(v)/4 * sum f cos cos, quantize with
        // the same table, quadruple-loop IDCT.
        let layout = gray_layout(8, 8);
        let img = smooth_image(&layout);
        let q = 80;
        let got = jpeg(&img, &layout, q).unwrap();

        let table = scaled_table(&LUMA_BASE, q);
        let f: Vec<f64> = img
            .iter()
            .map(|&v| ((v + 1.0) / 2.0 * 255.0).round_ties_even() - 128.0)
            .collect();
        let cc = |u: usize| if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        let mut coef = [[0.0; 8]; 8];
        for u in 0..8 {
            for v in 0..8 {
                let mut acc = 0.0;
                for x in 0..8 {
                    for y in 0..8 {
                        acc += f[x * 8 + y]
                            * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                let raw = 0.25 * cc(u) * cc(v) * acc;
                coef[u][v] = (raw / table[u * 8 + v]).round_ties_even() * table[u * 8 + v];
            }
        }
        for x in 0..8 {
            for y in 0..8 {
                let mut acc = 0.0;
                for u in 0..8 {
                    for v in 0..8 {
                        acc += 0.25
                            * cc(u)
                            * cc(v)
                            * coef[u][v]
                            * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                let oracle = -1.0 + (acc + 128.0).clamp(0.0, 255.0).round_ties_even() / 255.0 * 2.0;
                let mine = got[x * 8 + y];
                // Within one gray level of the oracle.
                assert!(
                    (mine - oracle).abs() <= 2.0 / 255.0 + 1e-12,
                    "({x},{y}): {mine} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn quality_100_stays_within_16_gray_levels() {
        let layout = ImageLayout::new(16, 16, 3, (0.0, 1.0)).unwrap();
        let mut img = smooth_image(&layout);
        for (i, v) in img.iter_mut().enumerate() {
            *v = (v.abs() + ((i * 37 % 11) as f64) / 11.0).min(1.0);
        }
        let out = jpeg(&img, &layout, 100).unwrap();
        for (a, b) in out.iter().zip(&img) {
            let gray = (a - b).abs() * 255.0;
            assert!(gray <= 16.0, "deviation {gray} gray levels");
        }
    }

    #[test]
    fn odd_sizes_pad_and_crop_back() {
        let layout = gray_layout(9, 10);
        let img = smooth_image(&layout);
        let out = jpeg(&img, &layout, 80).unwrap();
        assert_eq!(out.len(), img.len());
        // Determinism.
        assert_eq!(out, jpeg(&img, &layout, 80).unwrap());
    }

    #[test]
    fn rgb_path_round_trips_neutral_gray() {
        let layout = ImageLayout::new(8, 8, 3, (0.0, 1.0)).unwrap();
        let v = 128.0 / 255.0;
        let img = vec![v; layout.len()];
        let out = jpeg(&img, &layout, 90).unwrap();
        for o in &out {
            assert_eq!(*o, v);
        }
    }
}
