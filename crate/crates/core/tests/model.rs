use mriseq::model::{build_model, input_shape, tensor_rows, Architecture, Checkpoint, ModelConfig};
use mriseq::Error;
use tch::nn::OptimizerConfig;
use tch::{nn, Device, Kind, Tensor};

fn randn(shape: [i64; 4], seed: i64) -> Tensor {
    tch::manual_seed(seed);
    Tensor::randn(shape, (Kind::Float, Device::Cpu))
}

#[test]
fn resnet18_batch_32_gives_32_by_5() {
    let cfg = ModelConfig::new(Architecture::Resnet18, 4, 5, 1);
    let m = build_model(&cfg).unwrap();
    let xs = randn(input_shape(32, &cfg), 2);
    let logits = m.forward(&xs).unwrap();
    assert_eq!(logits.size(), vec![32, 5]);
    let probs = m.probabilities(&xs).unwrap();
    for row in tensor_rows(&probs).unwrap() {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    // the same sample alone and inside the batch
    let single = m.forward(&xs.narrow(0, 7, 1)).unwrap();
    let diff = (single - logits.narrow(0, 7, 1)).abs().max().double_value(&[]);
    assert!(diff < 1e-4, "batch dependence {diff}");
}

#[test]
fn single_channel_four_classes() {
    let cfg = ModelConfig::new(Architecture::Resnet18, 1, 4, 1);
    let m = build_model(&cfg).unwrap();
    assert_eq!(m.forward(&randn(input_shape(3, &cfg), 0)).unwrap().size(), vec![3, 4]);
}

#[test]
fn zero_inputs_give_identical_finite_rows() {
    let cfg = ModelConfig::new(Architecture::Resnet18, 4, 5, 3);
    let m = build_model(&cfg).unwrap();
    let rows = tensor_rows(&m.forward(&Tensor::zeros(input_shape(4, &cfg), (Kind::Float, Device::Cpu))).unwrap()).unwrap();
    assert!(rows.iter().flatten().all(|v| v.is_finite()));
    assert!(rows.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn every_backbone_maps_to_k_logits() {
    for arch in [Architecture::Alexnet, Architecture::Squeezenet11, Architecture::Mobilenetv2, Architecture::Vgg16] {
        for (n, k) in [(4, 5), (1, 4)] {
            let cfg = ModelConfig::new(arch, n, k, 0);
            let m = build_model(&cfg).unwrap();
            let out = m.forward(&randn(input_shape(2, &cfg), 1)).unwrap();
            assert_eq!(out.size(), vec![2, k as i64], "{arch}");
            assert!(tensor_rows(&out).unwrap().iter().flatten().all(|v| v.is_finite()), "{arch}");
            let first = m.var_store().variables()[m.first_layer_name()].size();
            assert_eq!(first[1], n as i64, "{arch} first layer");
        }
    }
}

#[test]
fn same_seed_same_weights() {
    let cfg = ModelConfig::new(Architecture::Squeezenet11, 2, 5, 42);
    let xs = randn(input_shape(2, &cfg), 9);
    let a = build_model(&cfg).unwrap().forward(&xs).unwrap();
    let b = build_model(&cfg).unwrap().forward(&xs).unwrap();
    assert!(a.equal(&b));
    let c = build_model(&ModelConfig { init_seed: 43, ..cfg }).unwrap().forward(&xs).unwrap();
    assert!(!a.equal(&c));
}

#[test]
fn vgg16_trains_at_reduced_rate() {
    let cfg = ModelConfig::new(Architecture::Vgg16, 4, 5, 0);
    assert_eq!(cfg.architecture.default_learning_rate(), 0.001);
    let m = build_model(&cfg).unwrap();
    let mut opt = nn::sgd(0.9, 0.0, 0.0, false).build(m.var_store(), cfg.architecture.default_learning_rate()).unwrap();
    let xs = randn(input_shape(2, &cfg), 4);
    let ys = Tensor::from_slice(&[0i64, 3]);
    let before = m.var_store().variables()["classifier.6.weight"].copy();
    for _ in 0..2 {
        let loss = m.forward_t(&xs, true).unwrap().cross_entropy_for_logits(&ys);
        assert!(loss.double_value(&[]).is_finite());
        opt.backward_step(&loss);
    }
    let after = &m.var_store().variables()["classifier.6.weight"];
    assert!(!before.equal(after));
}

#[test]
fn unsupported_architecture_name() {
    assert!(matches!("inception".parse::<Architecture>(), Err(Error::UnsupportedArchitecture(_))));
}

/// Analytic first-layer gradient of the cross-entropy against central differences.
#[test]
fn first_layer_gradient_matches_finite_differences() {
    let cfg = ModelConfig::new(Architecture::Resnet18, 3, 5, 11);
    let m = build_model(&cfg).unwrap();
    let xs = randn([2, 3, 8, 8], 5);
    let ys = Tensor::from_slice(&[1i64, 4]);
    let loss_at = || m.forward_t(&xs, false).unwrap().cross_entropy_for_logits(&ys);
    let mut w = m.var_store().variables()["conv1.weight"].shallow_clone();
    let analytic = Tensor::run_backward(&[loss_at()], &[&w], false, false).remove(0);

    tch::manual_seed(8);
    let mut directions = vec![&analytic / analytic.norm()];
    for _ in 0..4 {
        let d = Tensor::randn(w.size(), (Kind::Float, Device::Cpu));
        directions.push(&d / d.norm());
    }
    let h = 1e-2;
    for d in directions {
        let expected = (&analytic * &d).sum(Kind::Double).double_value(&[]);
        let mut shift = |scale: f64| tch::no_grad(|| { let _ = w.f_add_(&(&d * scale)); });
        shift(h);
        let plus = tch::no_grad(|| loss_at().double_value(&[]));
        shift(-2.0 * h);
        let minus = tch::no_grad(|| loss_at().double_value(&[]));
        shift(h);
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic.norm().double_value(&[]);
        let rel = (numeric - expected).abs() / expected.abs().max(0.1 * scale);
        assert!(rel < 1e-2, "directional derivative {expected} vs {numeric} (rel {rel})");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Architecture::Resnet18, Architecture::Mobilenetv2] {
        let cfg = ModelConfig::new(arch, 2, 4, 5);
        let mut ckpt = Checkpoint::untrained(build_model(&cfg).unwrap());
        ckpt.meta.epoch = 17;
        ckpt.meta.val_macro_accuracy = 0.8125;
        ckpt.meta.manifest_hash = Some("abc".into());
        let path = dir.path().join(format!("{arch}.safetensors"));
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        let xs = randn(input_shape(3, &cfg), 6);
        assert!(ckpt.model.forward(&xs).unwrap().equal(&back.model.forward(&xs).unwrap()), "{arch}");
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.safetensors");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::InvalidCheckpoint(_))));
}
