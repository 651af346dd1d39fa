//! Directory walks that turn raw dataset trees into labeled listings.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::dataset::{write_listing, BaseDataset, ListingEntry};
use crate::error::{Error, Result};
use crate::labels::{file_stem, parse_brats_label, ParseResult, RuleTable};
use crate::volume::{load_volume, looks_like_dicom, SourceFormat};

/// A directory tree and the base dataset its volumes belong to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRoot {
    pub path: PathBuf,
    pub base_dataset: BaseDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiscardKind {
    /// Name matched no rule.
    Unknown,
    /// Segmentation or other non-sequence file.
    NotASequence,
    MixedSliceDimensions,
    Unreadable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub path: String,
    pub base_dataset: BaseDataset,
    pub kind: DiscardKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub entries: Vec<ListingEntry>,
    pub discards: Vec<Discard>,
}

impl ScanReport {
    pub fn unknown(&self) -> impl Iterator<Item = &Discard> {
        self.discards.iter().filter(|d| d.kind == DiscardKind::Unknown)
    }

    /// Writes `listing.csv` and `discards.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let listing = dir.join("listing.csv");
        write_listing(&self.entries, &listing)?;
        let discards = dir.join("discards.csv");
        let mut w = csv::Writer::from_path(&discards)?;
        for d in &self.discards {
            w.serialize(d)?;
        }
        w.flush()?;
        Ok((listing, discards))
    }
}

/// One loadable item found in a tree: a volume file or a DICOM series directory.
fn candidates(root: &Path) -> Vec<PathBuf> {
    let mut dicom_dirs = BTreeSet::new();
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name().into_iter().filter_map(|e| e.ok()) {
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        match SourceFormat::detect(path) {
            Some(SourceFormat::Nifti) | Some(SourceFormat::MetaImage) => files.push(path.to_path_buf()),
            _ if looks_like_dicom(path) => {
                if let Some(parent) = path.parent() {
                    dicom_dirs.insert(parent.to_path_buf());
                }
            }
            _ => {}
        }
    }
    files.extend(dicom_dirs);
    files.sort();
    files
}

fn label_for(path: &Path, base: BaseDataset, rules: &RuleTable) -> std::result::Result<ParseResult, (DiscardKind, String)> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    if base.is_brats() {
        match parse_brats_label(name) {
            Ok(parsed) if parsed.label.is_some() => Ok(parsed),
            Ok(_) => Err((DiscardKind::Unknown, format!("no sequence token in {name:?}"))),
            Err(Error::NotASequenceFile { .. }) => Err((DiscardKind::NotASequence, format!("{name:?} is not a sequence file"))),
            Err(e) => Err((DiscardKind::Unknown, e.to_string())),
        }
    } else {
        // TCGA series carry their description in the leaf directory (or file) name.
        let parsed = rules.parse(file_stem(name));
        if parsed.label.is_some() {
            Ok(parsed)
        } else {
            Err((DiscardKind::Unknown, format!("no rule matches {name:?}")))
        }
    }
}

/// Walks every root, labels each candidate by name and checks that it loads.
/// Inputs are only read. Fails when no root yields a usable volume.
pub fn scan(roots: &[ScanRoot], rules: &RuleTable) -> Result<ScanReport> {
    let mut report = ScanReport::default();
    for root in roots {
        if !root.path.is_dir() {
            return Err(Error::unreadable(&root.path, "scan root is not a directory"));
        }
        for path in candidates(&root.path) {
            let shown = path.to_string_lossy().into_owned();
            let discard = |kind, reason: String| Discard { path: shown.clone(), base_dataset: root.base_dataset, kind, reason };
            let parsed = match label_for(&path, root.base_dataset, rules) {
                Ok(p) => p,
                Err((kind, reason)) => {
                    report.discards.push(discard(kind, reason));
                    continue;
                }
            };
            match load_volume(&path) {
                Ok(volume) => report.entries.push(ListingEntry {
                    path: shown.clone(),
                    label: parsed.label.expect("labeled"),
                    base_dataset: root.base_dataset,
                    format: volume.source_format.as_str().to_string(),
                    source_name: parsed.source_name.clone(),
                    matched_tokens: parsed.matched_tokens.join("|"),
                }),
                Err(e @ Error::MixedSliceDimensions { .. }) => {
                    warn!("discarding {shown}: {e}");
                    report.discards.push(discard(DiscardKind::MixedSliceDimensions, e.to_string()));
                }
                Err(e) => {
                    warn!("discarding {shown}: {e}");
                    report.discards.push(discard(DiscardKind::Unreadable, e.to_string()));
                }
            }
        }
    }
    if report.entries.is_empty() {
        let shown: Vec<String> = roots.iter().map(|r| r.path.display().to_string()).collect();
        return Err(Error::NoReadableVolumes(shown.join(", ")));
    }
    info!("scan: {} volumes, {} discarded", report.entries.len(), report.discards.len());
    Ok(report)
}
