//! Synthetic volumes and manifests shared by the integration tests.
#![allow(dead_code)]

use mriseq::dataset::{BaseDataset, Manifest, SampleRecord, Split, Variant};
use mriseq::store::VolumeStore;
use mriseq::volume::{CanonicalVolume, Provenance};
use mriseq::SequenceType;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Ring period in pixels for each class index.
pub const RING_PERIODS: [f64; 5] = [48.0, 30.0, 19.0, 12.0, 7.5];

/// A canonical volume of concentric rings whose period identifies the class.
/// Center, phase, amplitude and background noise vary per volume.
pub fn ring_volume(class: usize, rng: &mut impl Rng) -> CanonicalVolume {
    let period = RING_PERIODS[class];
    let cy = 100.0 + rng.random_range(-15.0..15.0);
    let cx = 100.0 + rng.random_range(-15.0..15.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(70.0..110.0);
    let mut v = Array3::zeros((16, 200, 200));
    for ((k, i, j), out) in v.indexed_iter_mut() {
        let r = ((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)).sqrt();
        let drift = 0.15 * k as f64;
        let value = 127.5 + amp * (std::f64::consts::TAU * r / period + phase + drift).cos() + rng.random_range(-8.0..8.0);
        *out = value.clamp(0.0, 255.0) as f32;
    }
    CanonicalVolume::new(v, Some(SequenceType::ALL[class]), Provenance::default()).unwrap()
}

/// `per_class_train` + `per_class_val` ring volumes per class, in TRAIN and VAL.
pub fn ring_dataset(per_class_train: usize, per_class_val: usize, seed: u64) -> (Manifest, VolumeStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = VolumeStore::new();
    let mut records = Vec::new();
    for class in 0..5 {
        for (split, count) in [(Split::Train, per_class_train), (Split::Val, per_class_val)] {
            for i in 0..count {
                let name = format!("synthetic/{split}/{}/{i:03}", SequenceType::ALL[class]);
                store.insert(name.clone(), ring_volume(class, &mut rng));
                let mut r = SampleRecord::new(name, SequenceType::ALL[class], BaseDataset::TcgaGbm);
                r.split = Some(split);
                records.push(r);
            }
        }
    }
    (Manifest { variant: Variant::Tcga5, seed, records }, store)
}

/// Random labeled listing spread over every base dataset and class.
pub fn random_listing(rng: &mut impl Rng) -> Vec<SampleRecord> {
    let mut records = Vec::new();
    for base in BaseDataset::ALL {
        for class in SequenceType::ALL {
            if base.is_brats() && class == SequenceType::Other {
                continue;
            }
            for i in 0..rng.random_range(0..40) {
                records.push(SampleRecord::new(format!("{base}/{class}/{i}"), class, base));
            }
        }
    }
    records
}
