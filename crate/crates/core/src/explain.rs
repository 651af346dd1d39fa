//! Integrated Gradients attributions and per-slice heat overlays.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::augment::SliceStack;
use crate::error::{Error, Result};
use crate::labels::SequenceType;
use crate::model::{tensor_rows, LogitModel};

pub const DEFAULT_STEPS: usize = 128;
const PATH_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// Same `n×H×W` layout as the input stack.
    pub attributions: Array3<f32>,
    pub target_index: usize,
    pub target_class: Option<SequenceType>,
    /// `|Σ attributions − (F(x) − F(baseline))|`.
    pub completeness_gap: f64,
    /// `F(x) − F(baseline)` for the target logit.
    pub logit_difference: f64,
    pub steps: usize,
}

impl SaliencyMap {
    /// Gap as a fraction of `|F(x) − F(baseline)|`.
    pub fn relative_gap(&self) -> f64 {
        self.completeness_gap / self.logit_difference.abs().max(f64::MIN_POSITIVE)
    }
}

fn stack_tensor(pixels: &Array3<f32>) -> Tensor {
    let (n, h, w) = pixels.dim();
    Tensor::from_slice(pixels.as_standard_layout().as_slice().expect("standard layout")).view([1, n as i64, h as i64, w as i64])
}

fn target_logit(model: &dyn LogitModel, xs: &Tensor, target: usize) -> Result<f64> {
    let rows = tensor_rows(&tch::no_grad(|| model.logits(xs)))?;
    Ok(rows[0][target] as f64)
}

/// Integrated Gradients from an all-zero baseline with the midpoint rule:
/// gradients are taken at `(k + ½)/steps · x` for `k = 0..steps`.
pub fn integrated_gradients(model: &dyn LogitModel, stack: &SliceStack, target: usize, steps: usize) -> Result<SaliencyMap> {
    if steps < 2 {
        return Err(Error::InvalidSteps(steps));
    }
    let (n, h, w) = stack.pixels.dim();
    if n != model.in_channels() {
        return Err(Error::ChannelMismatch { expected: model.in_channels(), actual: n });
    }
    if target >= model.num_classes() {
        return Err(Error::InvalidConfig(format!("target class {target} outside 0..{}", model.num_classes())));
    }
    let x = stack_tensor(&stack.pixels);
    let baseline = x.zeros_like();
    let delta = &x - &baseline;
    let mut grad_sum = Tensor::zeros([n as i64, h as i64, w as i64], (Kind::Double, x.device()));
    let alphas: Vec<f32> = (0..steps).map(|k| (k as f32 + 0.5) / steps as f32).collect();
    for chunk in alphas.chunks(PATH_BATCH) {
        let a = Tensor::from_slice(chunk).view([chunk.len() as i64, 1, 1, 1]);
        let inputs = (&baseline + &a * &delta).detach().set_requires_grad(true);
        let out = model.logits(&inputs).select(1, target as i64).sum(Kind::Float);
        let grads = Tensor::run_backward(&[&out], &[&inputs], false, false);
        grad_sum += grads[0].sum_dim_intlist([0i64].as_slice(), false, Kind::Double);
    }
    let attributions = (delta.squeeze_dim(0).to_kind(Kind::Double) * grad_sum / steps as f64).to_kind(Kind::Float).contiguous();
    let flat = Vec::<f32>::try_from(attributions.view([-1]))?;
    let attributions = Array3::from_shape_vec((n, h, w), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let logit_difference = target_logit(model, &x, target)? - target_logit(model, &baseline, target)?;
    let total: f64 = attributions.iter().map(|&v| v as f64).sum();
    Ok(SaliencyMap {
        attributions,
        target_index: target,
        target_class: None,
        completeness_gap: (total - logit_difference).abs(),
        logit_difference,
        steps,
    })
}

/// Attributions for the model's own prediction on the stack.
pub fn explain_prediction(model: &dyn LogitModel, stack: &SliceStack, class_order: &[SequenceType], steps: usize) -> Result<SaliencyMap> {
    let logits = tensor_rows(&tch::no_grad(|| model.logits(&stack_tensor(&stack.pixels))))?.remove(0);
    let target = crate::model::argmax(&logits);
    let mut map = integrated_gradients(model, stack, target, steps)?;
    map.target_class = class_order.get(target).copied();
    Ok(map)
}

/// `F(x)_k = ⟨w_k, x⟩ + b_k`; its IG from a zero baseline is exactly `w_k ⊙ x`.
#[derive(Debug)]
pub struct LinearSurrogate {
    /// `K×n×H×W`.
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearSurrogate {
    pub fn new(weights: Tensor, bias: Tensor) -> Self {
        LinearSurrogate { weights, bias }
    }
}

impl LogitModel for LinearSurrogate {
    fn in_channels(&self) -> usize {
        self.weights.size()[1] as usize
    }

    fn num_classes(&self) -> usize {
        self.weights.size()[0] as usize
    }

    fn logits(&self, xs: &Tensor) -> Tensor {
        let b = xs.size()[0];
        xs.view([b, -1]).matmul(&self.weights.view([self.num_classes() as i64, -1]).tr()) + &self.bias
    }
}

/// Grayscale render of a slice, min-max scaled to 0..=255.
fn gray_levels(slice: ndarray::ArrayView2<f32>) -> Vec<f32> {
    let (lo, hi) = slice.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    slice.iter().map(|&v| if span > 0.0 { (v - lo) / span * 255.0 } else { 0.0 }).collect()
}

/// Blends each slice's gray render with red heat `h = |a| / max|a|`, the
/// maximum taken over the whole map.
pub fn overlay_images(map: &SaliencyMap, stack: &SliceStack) -> Result<Vec<RgbImage>> {
    if map.attributions.dim() != stack.pixels.dim() {
        return Err(Error::ShapeMismatch(format!("map {:?} vs stack {:?}", map.attributions.dim(), stack.pixels.dim())));
    }
    let (_, h, w) = stack.pixels.dim();
    let peak = map.attributions.iter().fold(0f32, |m, &v| m.max(v.abs()));
    let mut images = Vec::new();
    for (slice, attr) in stack.pixels.axis_iter(Axis(0)).zip(map.attributions.axis_iter(Axis(0))) {
        let gray = gray_levels(slice);
        let mut img = RgbImage::new(w as u32, h as u32);
        for ((idx, &g), &a) in gray.iter().enumerate().zip(attr.iter()) {
            let heat = if peak > 0.0 { a.abs() / peak } else { 0.0 };
            let mix = |target: f32| (g * (1.0 - heat) + target * heat).round().clamp(0.0, 255.0) as u8;
            img.put_pixel((idx % w) as u32, (idx / w) as u32, Rgb([mix(255.0), mix(0.0), mix(0.0)]));
        }
        images.push(img);
    }
    Ok(images)
}

/// Writes `slice_XX.png` per slice into `dir`; returns the paths in slice order.
pub fn render_overlay(map: &SaliencyMap, stack: &SliceStack, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    overlay_images(map, stack)?
        .into_iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(format!("slice_{:02}.png", stack.start_index + i));
            img.save(&path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionDescriptor {
    pub shape: [usize; 3],
    pub dtype: String,
    pub byte_order: String,
    pub target_index: usize,
    pub target_class: Option<SequenceType>,
    pub steps: usize,
    pub completeness_gap: f64,
    pub logit_difference: f64,
    pub start_index: usize,
}

/// Raw little-endian f32 attributions plus a JSON descriptor at `<stem>.json`.
pub fn dump_attributions(map: &SaliencyMap, start_index: usize, raw_path: impl AsRef<Path>) -> Result<PathBuf> {
    let raw_path = raw_path.as_ref();
    let bytes: Vec<u8> = map.attributions.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(raw_path, bytes)?;
    let (n, h, w) = map.attributions.dim();
    let descriptor = AttributionDescriptor {
        shape: [n, h, w],
        dtype: "float32".into(),
        byte_order: "little".into(),
        target_index: map.target_index,
        target_class: map.target_class,
        steps: map.steps,
        completeness_gap: map.completeness_gap,
        logit_difference: map.logit_difference,
        start_index,
    };
    let json_path = raw_path.with_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(&descriptor)?)?;
    Ok(json_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn stack(n: usize, h: usize) -> SliceStack {
        SliceStack { pixels: Array::from_shape_fn((n, h, h), |(k, i, j)| ((k + 1) * (i + 2 * j)) as f32 / 10.0 - 1.0), start_index: 3 }
    }

    fn surrogate(n: i64, h: i64) -> LinearSurrogate {
        tch::manual_seed(3);
        LinearSurrogate::new(Tensor::randn([3, n, h, h], (Kind::Float, tch::Device::Cpu)), Tensor::from_slice(&[0.5f32, -1.0, 2.0]))
    }

    #[test]
    fn linear_surrogate_is_exact() {
        let s = stack(2, 6);
        let model = surrogate(2, 6);
        for steps in [2, 7, 128] {
            let map = integrated_gradients(&model, &s, 1, steps).unwrap();
            let w = Vec::<f32>::try_from(model.weights.get(1).contiguous().view([-1])).unwrap();
            for ((a, x), wi) in map.attributions.iter().zip(s.pixels.iter()).zip(&w) {
                assert!((a - wi * x).abs() <= 1e-5, "{a} vs {}", wi * x);
            }
            assert!(map.completeness_gap < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = surrogate(2, 6);
        assert!(matches!(integrated_gradients(&model, &stack(2, 6), 0, 1), Err(Error::InvalidSteps(1))));
        assert!(matches!(integrated_gradients(&model, &stack(3, 6), 0, 8), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn zero_weights_give_zero_attributions() {
        let model = LinearSurrogate::new(Tensor::zeros([3, 2, 6, 6], (Kind::Float, tch::Device::Cpu)), Tensor::zeros([3], (Kind::Float, tch::Device::Cpu)));
        let map = integrated_gradients(&model, &stack(2, 6), 2, 16).unwrap();
        assert!(map.attributions.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn zero_map_overlay_is_plain_render_and_hot_voxel_peaks() {
        let s = stack(2, 8);
        let mut map = SaliencyMap {
            attributions: Array3::zeros((2, 8, 8)),
            target_index: 0,
            target_class: None,
            completeness_gap: 0.0,
            logit_difference: 0.0,
            steps: 2,
        };
        let plain = overlay_images(&map, &s).unwrap();
        for (k, img) in plain.iter().enumerate() {
            let gray = gray_levels(s.pixels.index_axis(Axis(0), k));
            for (idx, p) in img.pixels().enumerate() {
                let g = gray[idx].round() as u8;
                assert_eq!(p.0, [g, g, g]);
            }
        }
        map.attributions[[1, 5, 2]] = -3.0;
        let hot = overlay_images(&map, &s).unwrap();
        let redness = |p: &Rgb<u8>| p.0[0] as i32 - p.0[1] as i32;
        let (best, _) = hot[1].enumerate_pixels().map(|(x, y, p)| ((y, x), redness(p))).max_by_key(|&(_, r)| r).unwrap();
        assert_eq!(best, (5, 2));
        assert_eq!(hot[1].get_pixel(2, 5).0, [255, 0, 0]);
        let dir = tempfile::tempdir().unwrap();
        let files = render_overlay(&map, &s, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.exists()));
        let json = dump_attributions(&map, s.start_index, dir.path().join("attr.f32")).unwrap();
        assert_eq!(fs::metadata(dir.path().join("attr.f32")).unwrap().len(), 2 * 8 * 8 * 4);
        let d: AttributionDescriptor = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(d.shape, [2, 8, 8]);
    }
}
