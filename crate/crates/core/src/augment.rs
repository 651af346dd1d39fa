//! Per-epoch training inputs: slice subgroups, augmentation and standardization.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::volume::CanonicalVolume;
use crate::CANONICAL_DEPTH;

/// Guard against division by zero for constant slices.
pub const STD_EPSILON: f64 = 1e-7;

/// `n` contiguous slices taken from a canonical volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub pixels: Array3<f32>,
    pub start_index: usize,
}

impl SliceStack {
    pub fn n(&self) -> usize {
        self.pixels.dim().0
    }
}

fn check_depth(n: usize) -> Result<()> {
    if (1..=CANONICAL_DEPTH).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidDepth(n))
    }
}

fn stack_at(volume: &CanonicalVolume, n: usize, start: usize) -> SliceStack {
    SliceStack { pixels: volume.voxels().slice(s![start..start + n, .., ..]).to_owned(), start_index: start }
}

/// Draws a random run of `n` sequential slices; the start is uniform over `0..=16−n`.
pub fn sample_subgroup(volume: &CanonicalVolume, n: usize, rng: &mut impl Rng) -> Result<SliceStack> {
    check_depth(n)?;
    let start = rng.random_range(0..=CANONICAL_DEPTH - n);
    Ok(stack_at(volume, n, start))
}

/// Start indices of the central subgroup(s): one for even `n`, the two
/// nearest-to-center candidates for odd `n`.
pub fn central_starts(n: usize) -> Result<Vec<usize>> {
    check_depth(n)?;
    let slack = CANONICAL_DEPTH - n;
    Ok(if slack % 2 == 0 { vec![slack / 2] } else { vec![slack / 2, slack / 2 + 1] })
}

pub fn central_subgroups(volume: &CanonicalVolume, n: usize) -> Result<Vec<SliceStack>> {
    Ok(central_starts(n)?.into_iter().map(|start| stack_at(volume, n, start)).collect())
}

/// Sampling ranges for [`AugmentationDraw`]. The defaults are the training
/// protocol's values; each is overridable from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRanges {
    /// Small rotation drawn from `[-max, +max]` degrees.
    pub max_rotation_deg: f64,
    pub quarter_turns: bool,
    /// Translation bound as a fraction of the slice height/width.
    pub max_shift_fraction: f64,
    pub max_noise_sigma: f64,
    pub brightness: (f64, f64),
    pub max_blur_sigma: f64,
    pub blur_probability: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotation_deg: 25.0,
            quarter_turns: true,
            max_shift_fraction: 0.1,
            max_noise_sigma: 0.05 * 255.0,
            brightness: (0.1, 2.0),
            max_blur_sigma: 1.0,
            blur_probability: 0.5,
        }
    }
}

/// One realization of the six augmentations for a whole subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationDraw {
    pub alpha_deg: f64,
    pub quarter_turns: u8,
    pub dy: i32,
    pub dx: i32,
    pub noise_sigma: f64,
    pub brightness: f64,
    pub blur_sigma: f64,
    pub blur_applied: bool,
    /// Seeds the per-voxel noise so [`augment`] stays a pure function.
    pub noise_seed: u64,
}

impl AugmentationDraw {
    /// Parameters that leave every stack unchanged.
    pub fn neutral() -> Self {
        AugmentationDraw {
            alpha_deg: 0.0,
            quarter_turns: 0,
            dy: 0,
            dx: 0,
            noise_sigma: 0.0,
            brightness: 1.0,
            blur_sigma: 0.0,
            blur_applied: false,
            noise_seed: 0,
        }
    }

    pub fn sample(ranges: &AugmentRanges, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let max_dy = (height as f64 * ranges.max_shift_fraction).floor() as i32;
        let max_dx = (width as f64 * ranges.max_shift_fraction).floor() as i32;
        AugmentationDraw {
            alpha_deg: rng.random_range(-ranges.max_rotation_deg..=ranges.max_rotation_deg),
            quarter_turns: if ranges.quarter_turns { rng.random_range(0..=3) } else { 0 },
            dy: rng.random_range(-max_dy..=max_dy),
            dx: rng.random_range(-max_dx..=max_dx),
            noise_sigma: rng.random_range(0.0..=ranges.max_noise_sigma),
            brightness: rng.random_range(ranges.brightness.0..=ranges.brightness.1),
            blur_sigma: rng.random_range(0.0..=ranges.max_blur_sigma),
            blur_applied: rng.random_bool(ranges.blur_probability),
            noise_seed: rng.random(),
        }
    }
}

/// Rotation by `alpha_deg` (counter-clockwise) about the slice center, bilinear, zero fill.
pub fn rotate(src: ArrayView2<f32>, alpha_deg: f64) -> Array2<f32> {
    let (h, w) = src.dim();
    if alpha_deg == 0.0 {
        return src.to_owned();
    }
    let (sin, cos) = alpha_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let sample = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize { 0.0 } else { src[[r as usize, c as usize]] }
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        // inverse map: output pixel → source position; rows grow downward
        let (y, x) = (r as f64 - cy, c as f64 - cx);
        let sx = cos * x - sin * y + cx;
        let sy = sin * x + cos * y + cy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
        let bottom = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Exact counter-clockwise rotation by `k·90°` of a square slice.
pub fn rotate_quarter(src: ArrayView2<f32>, k: u8) -> Array2<f32> {
    let (h, w) = src.dim();
    assert_eq!(h, w, "quarter turns need square slices");
    let n = h - 1;
    match k % 4 {
        0 => src.to_owned(),
        1 => Array2::from_shape_fn((h, w), |(r, c)| src[[c, n - r]]),
        2 => Array2::from_shape_fn((h, w), |(r, c)| src[[n - r, n - c]]),
        _ => Array2::from_shape_fn((h, w), |(r, c)| src[[n - c, r]]),
    }
}

/// Integer shift by `(dy, dx)`, zero fill.
pub fn translate(src: ArrayView2<f32>, dy: i32, dx: i32) -> Array2<f32> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (sr, sc) = (r as i64 - dy as i64, c as i64 - dx as i64);
        if sr < 0 || sc < 0 || sr >= h as i64 || sc >= w as i64 { 0.0 } else { src[[sr as usize, sc as usize]] }
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let weights: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(mut img: ArrayViewMut2<f32>, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    for axis in [Axis(0), Axis(1)] {
        for mut lane in img.lanes_mut(axis) {
            let src: Vec<f32> = lane.to_vec();
            let len = src.len() as isize;
            for (i, out) in lane.iter_mut().enumerate() {
                *out = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &wk)| wk * src[(i as isize + k as isize - radius).clamp(0, len - 1) as usize])
                    .sum();
            }
        }
    }
}

/// Applies, in order: small rotation, quarter turns, translation, additive
/// Gaussian noise, brightness, optional blur. Geometry is shared by all
/// slices; noise is independent per voxel. The result is clipped to `[0, 255]`.
pub fn augment(stack: &SliceStack, draw: &AugmentationDraw) -> SliceStack {
    let mut pixels = stack.pixels.clone();
    let noise = (draw.noise_sigma > 0.0).then(|| Normal::new(0.0f32, draw.noise_sigma as f32).expect("finite sigma"));
    let mut noise_rng = rng_for(&[draw.noise_seed]);
    for mut slice in pixels.axis_iter_mut(Axis(0)) {
        let mut img = rotate(slice.view(), draw.alpha_deg);
        img = rotate_quarter(img.view(), draw.quarter_turns);
        if draw.dy != 0 || draw.dx != 0 {
            img = translate(img.view(), draw.dy, draw.dx);
        }
        if let Some(noise) = &noise {
            img.mapv_inplace(|v| v + noise.sample(&mut noise_rng));
        }
        if draw.brightness != 1.0 {
            let b = draw.brightness as f32;
            img.mapv_inplace(|v| v * b);
        }
        if draw.blur_applied {
            gaussian_blur(img.view_mut(), draw.blur_sigma);
        }
        img.mapv_inplace(|v| v.clamp(0.0, 255.0));
        slice.assign(&img);
    }
    SliceStack { pixels, start_index: stack.start_index }
}

/// Maps every slice independently to zero mean and unit (population) standard deviation.
pub fn standardize(stack: &SliceStack) -> SliceStack {
    let mut pixels = stack.pixels.clone();
    for mut slice in pixels.axis_iter_mut(Axis(0)) {
        let n = slice.len() as f64;
        let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = slice.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let denom = var.sqrt().max(STD_EPSILON);
        slice.mapv_inplace(|v| ((v as f64 - mean) / denom) as f32);
    }
    SliceStack { pixels, start_index: stack.start_index }
}

/// One training input: random subgroup → augmentation → standardization.
pub fn training_input(volume: &CanonicalVolume, n: usize, ranges: &AugmentRanges, rng: &mut impl Rng) -> Result<SliceStack> {
    let stack = sample_subgroup(volume, n, rng)?;
    let (_, h, w) = stack.pixels.dim();
    let draw = AugmentationDraw::sample(ranges, h, w, rng);
    Ok(standardize(&augment(&stack, &draw)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Provenance;
    use ndarray::Array;
    use proptest::prelude::*;
    use crate::seed::rng_for;

    fn volume() -> CanonicalVolume {
        let v = Array::from_shape_fn((16, 200, 200), |(k, i, j)| ((k * 7 + i + 2 * j) % 256) as f32);
        CanonicalVolume::new(v, None, Provenance::default()).unwrap()
    }

    fn small_stack(h: usize) -> SliceStack {
        SliceStack { pixels: Array::from_shape_fn((2, h, h), |(k, i, j)| (k * 50 + i * 3 + j) as f32), start_index: 0 }
    }

    #[test]
    fn subgroup_sixteen_is_whole_volume() {
        let v = volume();
        let s = sample_subgroup(&v, 16, &mut rng_for(&[1])).unwrap();
        assert_eq!(s.start_index, 0);
        assert_eq!(&s.pixels, v.voxels());
        let one = sample_subgroup(&v, 1, &mut rng_for(&[2])).unwrap();
        assert_eq!(one.n(), 1);
        assert!(matches!(sample_subgroup(&v, 0, &mut rng_for(&[3])), Err(Error::InvalidDepth(0))));
        assert!(matches!(sample_subgroup(&v, 17, &mut rng_for(&[3])), Err(Error::InvalidDepth(17))));
    }

    #[test]
    fn subgroup_start_is_uniform() {
        // chi-square against uniform over 13 starts, 12 dof; 99.9% quantile is 32.9
        let v = volume();
        let mut rng = rng_for(&[42]);
        let draws = 100_000;
        let mut counts = [0usize; 13];
        for _ in 0..draws {
            counts[sample_subgroup(&v, 4, &mut rng).unwrap().start_index] += 1;
        }
        let expected = draws as f64 / 13.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 32.9, "chi2 = {chi2}, counts {counts:?}");
        let sigma = (draws as f64 * (1.0 / 13.0) * (12.0 / 13.0)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - expected).abs() < 3.0 * sigma + 1.0));
    }

    #[test]
    fn central_starts_worked_examples() {
        assert_eq!(central_starts(4).unwrap(), vec![6]);
        assert_eq!(central_starts(16).unwrap(), vec![0]);
        assert_eq!(central_starts(7).unwrap(), vec![4, 5]);
        assert_eq!(central_starts(1).unwrap(), vec![7, 8]);
        assert!(central_starts(0).is_err());
        let stacks = central_subgroups(&volume(), 7).unwrap();
        assert_eq!(stacks.iter().map(|s| s.start_index).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn neutral_draw_is_identity() {
        let s = SliceStack { pixels: volume().voxels().slice(s![3..7, .., ..]).to_owned(), start_index: 3 };
        assert_eq!(augment(&s, &AugmentationDraw::neutral()), s);
    }

    #[test]
    fn half_turn_twice_is_exact() {
        let s = small_stack(9);
        let draw = AugmentationDraw { quarter_turns: 2, ..AugmentationDraw::neutral() };
        let once = augment(&s, &draw);
        assert_ne!(once.pixels, s.pixels);
        assert_eq!(once.pixels[[0, 0, 0]], s.pixels[[0, 8, 8]]);
        assert_eq!(augment(&once, &draw), s);
        let quarter = AugmentationDraw { quarter_turns: 1, ..AugmentationDraw::neutral() };
        let four = (0..4).fold(s.clone(), |acc, _| augment(&acc, &quarter));
        assert_eq!(four, s);
    }

    #[test]
    fn brightness_clips_at_255() {
        let mut s = small_stack(4);
        s.pixels[[0, 0, 0]] = 200.0;
        s.pixels[[0, 0, 1]] = 100.0;
        s.pixels[[0, 0, 2]] = 127.5;
        s.pixels[[0, 0, 3]] = 0.0;
        let out = augment(&s, &AugmentationDraw { brightness: 2.0, ..AugmentationDraw::neutral() });
        assert_eq!(out.pixels[[0, 0, 0]], 255.0);
        assert_eq!(out.pixels[[0, 0, 1]], 200.0);
        assert_eq!(out.pixels[[0, 0, 2]], 255.0);
        assert_eq!(out.pixels[[0, 0, 3]], 0.0);
    }

    #[test]
    fn translation_moves_content_and_zero_fills() {
        let s = small_stack(6);
        let out = augment(&s, &AugmentationDraw { dy: 2, dx: -1, ..AugmentationDraw::neutral() });
        assert_eq!(out.pixels[[1, 2, 0]], s.pixels[[1, 0, 1]]);
        assert_eq!(out.pixels[[1, 0, 3]], 0.0);
        assert_eq!(out.pixels[[1, 3, 5]], 0.0);
    }

    #[test]
    fn small_rotation_of_90_matches_quarter_turn() {
        let s = small_stack(11);
        let a = rotate(s.pixels.index_axis(Axis(0), 0), 90.0);
        let b = rotate_quarter(s.pixels.index_axis(Axis(0), 0), 1);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn geometry_is_shared_across_slices() {
        let mut pixels = Array3::zeros((4, 200, 200));
        for k in 0..4 {
            for i in 90..96 {
                for j in 120..128 {
                    pixels[[k, i, j]] = 250.0;
                }
            }
        }
        let stack = SliceStack { pixels, start_index: 0 };
        let draw = AugmentationDraw { alpha_deg: 17.0, quarter_turns: 3, dy: -9, dx: 14, ..AugmentationDraw::neutral() };
        let out = augment(&stack, &draw);
        for k in 1..4 {
            assert_eq!(out.pixels.index_axis(Axis(0), k), out.pixels.index_axis(Axis(0), 0));
        }
    }

    #[test]
    fn blur_preserves_mean_of_constant_and_smooths_impulse() {
        let mut img = Array2::from_elem((9, 9), 10.0f32);
        gaussian_blur(img.view_mut(), 0.8);
        assert!(img.iter().all(|&v| (v - 10.0).abs() < 1e-4));
        let mut imp = Array2::zeros((9, 9));
        imp[[4, 4]] = 100.0;
        gaussian_blur(imp.view_mut(), 1.0);
        assert!(imp[[4, 4]] < 100.0 && imp[[4, 5]] > 0.0);
        assert!((imp.sum() - 100.0).abs() < 1e-3);
    }

    #[test]
    fn standardize_two_point_slice() {
        let pixels = Array::from_shape_fn((1, 10, 10), |(_, i, _)| if i < 5 { 0.0 } else { 255.0 });
        let out = standardize(&SliceStack { pixels, start_index: 0 });
        assert!(out.pixels.iter().all(|&v| (v.abs() - 1.0).abs() < 1e-6));
        assert_eq!(out.pixels[[0, 0, 0]], -1.0);
    }

    #[test]
    fn standardize_constant_slice_is_zero() {
        let out = standardize(&SliceStack { pixels: Array3::from_elem((2, 8, 8), 42.0), start_index: 0 });
        assert!(out.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn draws_stay_in_range_and_blur_half_the_time() {
        let ranges = AugmentRanges::default();
        let mut rng = rng_for(&[7]);
        let draws = 100_000;
        let mut blurred = 0;
        for _ in 0..draws {
            let d = AugmentationDraw::sample(&ranges, 200, 200, &mut rng);
            assert!((-25.0..=25.0).contains(&d.alpha_deg));
            assert!(d.quarter_turns <= 3);
            assert!((-20..=20).contains(&d.dy) && (-20..=20).contains(&d.dx));
            assert!((0.0..=12.75).contains(&d.noise_sigma));
            assert!((0.1..=2.0).contains(&d.brightness));
            assert!((0.0..=1.0).contains(&d.blur_sigma));
            blurred += d.blur_applied as usize;
        }
        let rate = blurred as f64 / draws as f64;
        assert!((rate - 0.5).abs() <= 0.01, "blur rate {rate}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn standardized_slices_have_zero_mean_unit_std(values in prop::collection::vec(0f32..255.0, 64), seed in 0u64..100) {
            let mut pixels = Array3::from_shape_vec((1, 8, 8), values).unwrap();
            pixels[[0, 0, 0]] = (seed % 200) as f32;
            pixels[[0, 0, 1]] = 250.0;
            pixels[[0, 0, 2]] = 1.0;
            let once = standardize(&SliceStack { pixels, start_index: 0 });
            let n = 64.0;
            let mean = once.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
            let std = (once.pixels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() <= 1e-5);
            prop_assert!((std - 1.0).abs() <= 1e-4);
            let twice = standardize(&once);
            for (a, b) in once.pixels.iter().zip(twice.pixels.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn augmented_values_stay_in_canonical_range(seed in 0u64..1000) {
            let mut rng = rng_for(&[seed]);
            let stack = sample_subgroup(&volume(), 3, &mut rng).unwrap();
            let draw = AugmentationDraw::sample(&AugmentRanges::default(), 200, 200, &mut rng);
            let out = augment(&stack, &draw);
            prop_assert!(out.pixels.iter().all(|&v| (0.0..=255.0).contains(&v)));
            prop_assert_eq!(augment(&stack, &draw), out);
        }
    }
}
