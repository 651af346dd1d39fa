use mriseq::augment::SliceStack;
use mriseq::explain::{integrated_gradients, render_overlay, LinearSurrogate};
use mriseq::model::LogitModel;
use ndarray::Array3;
use tch::{Device, Kind, Tensor};

fn random_stack(n: usize, seed: i64) -> SliceStack {
    tch::manual_seed(seed);
    let t = Tensor::randn([n as i64, 200, 200], (Kind::Float, Device::Cpu));
    let v = Vec::<f32>::try_from(t.view([-1])).unwrap();
    SliceStack { pixels: Array3::from_shape_vec((n, 200, 200), v).unwrap(), start_index: 6 }
}

#[test]
fn linear_surrogate_attributions_equal_weight_times_input() {
    let stack = random_stack(4, 1);
    tch::manual_seed(2);
    let w = Tensor::randn([5, 4, 200, 200], (Kind::Float, Device::Cpu)) * 0.01;
    let model = LinearSurrogate::new(w.shallow_clone(), Tensor::zeros([5], (Kind::Float, Device::Cpu)));
    for (target, steps) in [(0, 2), (3, 31), (4, 128)] {
        let map = integrated_gradients(&model, &stack, target, steps).unwrap();
        let wk = Vec::<f32>::try_from(w.get(target as i64).contiguous().view([-1])).unwrap();
        let worst = map.attributions.iter().zip(stack.pixels.iter()).zip(&wk).map(|((a, x), w)| (a - w * x).abs()).fold(0f32, f32::max);
        assert!(worst <= 1e-5, "target {target}, steps {steps}: {worst}");
        assert!(map.relative_gap() < 1e-4);
    }
}

/// `F(x) = (⟨m ⊙ w, x⟩)²` per class: nonlinear, and blind to voxels where `m = 0`.
#[derive(Debug)]
struct MaskedSquare {
    w: Tensor,
}

impl LogitModel for MaskedSquare {
    fn in_channels(&self) -> usize {
        self.w.size()[1] as usize
    }
    fn num_classes(&self) -> usize {
        self.w.size()[0] as usize
    }
    fn logits(&self, xs: &Tensor) -> Tensor {
        let b = xs.size()[0];
        xs.view([b, -1]).matmul(&self.w.view([self.num_classes() as i64, -1]).tr()).square()
    }
}

#[test]
fn ignored_voxels_get_zero_attribution_and_completeness_holds() {
    let stack = random_stack(2, 3);
    tch::manual_seed(4);
    let mask = Tensor::ones([1, 2, 200, 200], (Kind::Float, Device::Cpu));
    let _ = mask.narrow(2, 50, 100).fill_(0.0);
    let w = Tensor::randn([3, 2, 200, 200], (Kind::Float, Device::Cpu)) * 0.01 * &mask;
    let model = MaskedSquare { w };
    let map = integrated_gradients(&model, &stack, 1, 64).unwrap();
    for k in 0..2 {
        for i in 50..150 {
            for j in 0..200 {
                assert_eq!(map.attributions[[k, i, j]], 0.0);
            }
        }
    }
    assert!(map.attributions.iter().any(|&a| a != 0.0));
    // a quadratic path integral is exact under the midpoint rule
    assert!(map.relative_gap() < 1e-3, "gap {}", map.relative_gap());
}

#[test]
fn one_overlay_per_slice() {
    let stack = random_stack(4, 5);
    let model = LinearSurrogate::new(Tensor::ones([5, 4, 200, 200], (Kind::Float, Device::Cpu)), Tensor::zeros([5], (Kind::Float, Device::Cpu)));
    let map = integrated_gradients(&model, &stack, 0, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = render_overlay(&map, &stack, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 4);
    let img = image::open(&files[0]).unwrap();
    assert_eq!((img.width(), img.height()), (200, 200));
}
