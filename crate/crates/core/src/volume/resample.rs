//! Bilinear resampling of single slices.

use ndarray::Array2;

/// For each output index, the two source taps and the weight of the second.
fn taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            // half-pixel centers, edge-clamped
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Resizes a slice to `out_h × out_w` with bilinear interpolation.
pub fn resize_bilinear(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Array2::zeros((out_h, out_w));
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
            let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
            out[[r, c]] = top * (1.0 - fr) + bottom * fr;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let a = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f32);
        assert_eq!(resize_bilinear(&a, 5, 7), a);
    }

    #[test]
    fn upsampling_a_linear_ramp_stays_linear_inside() {
        let a = Array2::from_shape_fn((4, 4), |(_, j)| j as f32);
        let b = resize_bilinear(&a, 4, 8);
        // interior output column c samples source position (c+0.5)/2-0.5
        for c in 1..7 {
            let expected = ((c as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
            assert!((b[[2, c]] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let a = Array2::from_elem((13, 31), 4.5f32);
        assert!(resize_bilinear(&a, 200, 200).iter().all(|&v| (v - 4.5).abs() < 1e-5));
    }
}
