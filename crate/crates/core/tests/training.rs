mod common;

use mriseq::augment::{central_subgroups, standardize};
use mriseq::dataset::Split;
use mriseq::model::{build_model, Architecture, Checkpoint, ModelConfig};
use mriseq::training::{
    evaluate, predict_canonical, predict_volume, stack_probabilities, sweep_depth, train, ConfusionMatrix, TrainConfig,
};
use mriseq::volume::write_nifti;
use mriseq::{Error, SequenceType};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_configs(n: usize, epochs: usize) -> (ModelConfig, TrainConfig) {
    (ModelConfig::new(Architecture::Resnet18, n, 5, 1), TrainConfig { epochs, n, seed: 4, batch_size: 8, ..Default::default() })
}

#[test]
fn best_epoch_is_first_maximum_and_runs_repeat() {
    let (manifest, store) = common::ring_dataset(2, 1, 0);
    let (mc, tc) = toy_configs(2, 2);
    let a = train(&manifest, &store, &mc, &tc).unwrap();
    let curve = &a.loss_curve;
    assert_eq!(curve.len(), 2);
    let best = curve.iter().map(|r| r.val_macro_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let first = curve.iter().find(|r| r.val_macro_accuracy == best).unwrap().epoch;
    assert_eq!(a.checkpoint.meta.epoch, first);
    assert_eq!(a.checkpoint.meta.val_macro_accuracy, best);
    assert_eq!(a.checkpoint.meta.manifest_hash.as_deref(), Some(manifest.content_hash().unwrap().as_str()));

    // the recorded validation score is reproduced by the returned weights
    let val = evaluate(&a.checkpoint, &manifest, Split::Val, &store).unwrap();
    assert!((val.macro_accuracy - best).abs() < 1e-12);

    let b = train(&manifest, &store, &mc, &tc).unwrap();
    for (x, y) in a.loss_curve.iter().zip(&b.loss_curve) {
        assert!((x.train_loss - y.train_loss).abs() <= 1e-5 * x.train_loss.abs().max(1.0));
        assert!((x.val_loss - y.val_loss).abs() <= 1e-5 * x.val_loss.abs().max(1.0));
    }
}

#[test]
fn evaluation_is_per_volume() {
    let (manifest, store) = common::ring_dataset(1, 3, 2);
    let ckpt = Checkpoint::untrained(build_model(&ModelConfig::new(Architecture::Resnet18, 3, 5, 0)).unwrap());
    let m = evaluate(&ckpt, &manifest, Split::Val, &store).unwrap();
    assert_eq!(m.confusion.total() as usize, manifest.split_len(Split::Val));
    for (i, _) in SequenceType::ALL.iter().enumerate() {
        assert_eq!(m.confusion.row_total(i), 3);
    }
    assert!((0.0..=1.0).contains(&m.macro_accuracy));
}

#[test]
fn guards_reject_mismatched_inputs() {
    let (mut manifest, store) = common::ring_dataset(1, 1, 3);
    let (mc, tc) = toy_configs(4, 1);
    assert!(matches!(train(&manifest, &store, &mc, &TrainConfig { n: 3, ..tc.clone() }), Err(Error::ChannelMismatch { .. })));

    let four = ModelConfig { num_classes: 4, ..mc };
    assert!(matches!(train(&manifest, &store, &four, &tc), Err(Error::ClassCountMismatch { .. })));
    let ckpt = Checkpoint::untrained(build_model(&four).unwrap());
    assert!(matches!(evaluate(&ckpt, &manifest, Split::Val, &store), Err(Error::ClassCountMismatch { checkpoint: 4, data: 5 })));

    let no_val: Vec<_> = manifest.records.iter().filter(|r| r.split != Some(Split::Val)).cloned().collect();
    let saved = std::mem::replace(&mut manifest.records, no_val);
    assert!(matches!(train(&manifest, &store, &mc, &tc), Err(Error::EmptySplit(_))));
    manifest.records = saved;
    assert!(matches!(sweep_depth(&manifest, &store, &mc, &tc, &[1, 0, 4], |_, _| Ok(())), Err(Error::InvalidDepth(0))));
}

#[test]
fn toy_sweep_has_one_row_per_depth() {
    let (manifest, store) = common::ring_dataset(1, 1, 5);
    let (mc, tc) = toy_configs(1, 1);
    let mut seen = Vec::new();
    let rows = sweep_depth(&manifest, &store, &mc, &tc, &[1, 4], |n, _| {
        seen.push(n);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 4]);
    assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![1, 4]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.val_macro_accuracy)));
}

#[test]
fn odd_depth_prediction_averages_the_two_central_stacks() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let volume = common::ring_volume(2, &mut rng);
    let ckpt = Checkpoint::untrained(build_model(&ModelConfig::new(Architecture::Resnet18, 7, 5, 2)).unwrap());
    let p = predict_canonical(&ckpt, &volume).unwrap();
    let stacks: Vec<_> = central_subgroups(&volume, 7).unwrap().iter().map(standardize).collect();
    assert_eq!(stacks.iter().map(|s| s.start_index).collect::<Vec<_>>(), vec![4, 5]);
    let probs = stack_probabilities(&ckpt.model, &stacks).unwrap();
    for k in 0..5 {
        let by_hand = (probs[0][k] + probs[1][k]) / 2.0;
        assert!((p.probabilities[k] - by_hand).abs() <= 1e-6);
    }
    assert!((p.probabilities.iter().sum::<f32>() - 1.0).abs() < 1e-5);
}

#[test]
fn predicting_a_file_and_its_copy_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let volume = common::ring_volume(0, &mut rng);
    let a = dir.path().join("a.nii.gz");
    let b = dir.path().join("b.nii");
    write_nifti(volume.voxels(), &a).unwrap();
    write_nifti(volume.voxels(), &b).unwrap();
    let ckpt = Checkpoint::untrained(build_model(&ModelConfig::new(Architecture::Resnet18, 4, 5, 3)).unwrap());
    let pa = predict_volume(&ckpt, &a).unwrap();
    let pb = predict_volume(&ckpt, &b).unwrap();
    assert_eq!(pa, pb);
    assert!((pa.probabilities.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    assert!(matches!(predict_volume(&ckpt, dir.path().join("missing.nii")), Err(Error::UnreadableFile { .. })));
}

proptest! {
    #[test]
    fn confusion_rows_and_macro_accuracy(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
        let m = ConfusionMatrix::from_pairs(&SequenceType::ALL, pairs.iter().copied()).unwrap();
        let mut recalls = Vec::new();
        for class in 0..5 {
            let actual: Vec<_> = pairs.iter().filter(|p| p.0 == class).collect();
            prop_assert_eq!(m.row_total(class) as usize, actual.len());
            if !actual.is_empty() {
                recalls.push(actual.iter().filter(|p| p.1 == class).count() as f64 / actual.len() as f64);
            }
        }
        let expected = recalls.iter().sum::<f64>() / recalls.len() as f64;
        prop_assert!((m.macro_accuracy() - expected).abs() < 1e-12);
    }
}
