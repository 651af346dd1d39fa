//! Canonical volumes held in memory, keyed by the manifest's `volume_ref`.

use std::collections::HashMap;

use log::info;

use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::volume::{load_canonical, CanonicalVolume};

/// Eager store: every referenced volume is loaded and canonicalized once.
/// A canonical volume takes 16·200·200·4 bytes ≈ 2.6 MB.
#[derive(Debug, Default)]
pub struct VolumeStore {
    volumes: HashMap<String, CanonicalVolume>,
}

impl VolumeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads each distinct `volume_ref` of the manifest from disk.
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let mut store = VolumeStore::new();
        for record in &manifest.records {
            if store.volumes.contains_key(&record.volume_ref) {
                continue;
            }
            let volume = load_canonical(&record.volume_ref)?;
            store.volumes.insert(record.volume_ref.clone(), volume.with_label(record.label));
        }
        info!("loaded {} canonical volumes", store.volumes.len());
        Ok(store)
    }

    pub fn insert(&mut self, volume_ref: impl Into<String>, volume: CanonicalVolume) {
        self.volumes.insert(volume_ref.into(), volume);
    }

    pub fn get(&self, volume_ref: &str) -> Result<&CanonicalVolume> {
        self.volumes.get(volume_ref).ok_or_else(|| Error::MissingVolume(volume_ref.to_string()))
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}
