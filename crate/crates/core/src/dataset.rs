//! Dataset variants: stratified splits and oversampled training sets.
//!
//! The union of all labeled volumes is split once per seed, independently
//! inside every (base dataset, class) stratum, and each training group is
//! balanced by duplicating records. The five variants are then views of
//! that single assignment, so a volume lands in the same split in every
//! variant built from the same seed.
//!
//! Stratum sizes are split as `VAL = ⌊n/10⌋`, `TRAIN = ⌊7n/10⌋` and
//! `TEST = n − VAL − TRAIN`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::SequenceType;
use crate::seed::{rng_for, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaseDataset {
    Brats15Train,
    Brats15Val,
    Brats19Train,
    Brats19Val,
    TcgaGbm,
}

impl BaseDataset {
    pub const ALL: [BaseDataset; 5] = [
        BaseDataset::Brats15Train,
        BaseDataset::Brats15Val,
        BaseDataset::Brats19Train,
        BaseDataset::Brats19Val,
        BaseDataset::TcgaGbm,
    ];

    pub fn is_brats(self) -> bool {
        self != BaseDataset::TcgaGbm
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BaseDataset::Brats15Train => "BRATS15_TRAIN",
            BaseDataset::Brats15Val => "BRATS15_VAL",
            BaseDataset::Brats19Train => "BRATS19_TRAIN",
            BaseDataset::Brats19Val => "BRATS19_VAL",
            BaseDataset::TcgaGbm => "TCGA_GBM",
        }
    }
}

impl fmt::Display for BaseDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '+'], "_");
        BaseDataset::ALL
            .into_iter()
            .find(|b| b.as_str() == norm)
            .ok_or_else(|| Error::UnknownBaseDataset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRAIN" => Ok(Split::Train),
            "VAL" | "VALIDATION" => Ok(Split::Val),
            "TEST" => Ok(Split::Test),
            _ => Err(Error::InvalidManifest(format!("unknown split {s:?}"))),
        }
    }
}

/// The five dataset variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "BRATS_TCGA5")]
    BratsTcga5,
    #[serde(rename = "BRATS_TCGA4")]
    BratsTcga4,
    #[serde(rename = "TCGA5")]
    Tcga5,
    #[serde(rename = "TCGA4")]
    Tcga4,
    #[serde(rename = "BRATS4")]
    Brats4,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::BratsTcga5, Variant::BratsTcga4, Variant::Tcga5, Variant::Tcga4, Variant::Brats4];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BratsTcga5 => "BRATS_TCGA5",
            Variant::BratsTcga4 => "BRATS_TCGA4",
            Variant::Tcga5 => "TCGA5",
            Variant::Tcga4 => "TCGA4",
            Variant::Brats4 => "BRATS4",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Variant::BratsTcga5 | Variant::Tcga5 => 5,
            _ => 4,
        }
    }

    pub fn classes(self) -> &'static [SequenceType] {
        SequenceType::class_order(self.num_classes())
    }

    pub fn includes_base(self, base: BaseDataset) -> bool {
        match self {
            Variant::BratsTcga5 | Variant::BratsTcga4 => true,
            Variant::Tcga5 | Variant::Tcga4 => base == BaseDataset::TcgaGbm,
            Variant::Brats4 => base.is_brats(),
        }
    }

    pub fn includes(self, base: BaseDataset, label: SequenceType) -> bool {
        self.includes_base(base) && self.classes().contains(&label)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['+', '-'], "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub volume_ref: String,
    pub label: SequenceType,
    pub base_dataset: BaseDataset,
    pub split: Option<Split>,
    pub is_oversampled_copy: bool,
}

impl SampleRecord {
    pub fn new(volume_ref: impl Into<String>, label: SequenceType, base_dataset: BaseDataset) -> Self {
        SampleRecord { volume_ref: volume_ref.into(), label, base_dataset, split: None, is_oversampled_copy: false }
    }

    fn copy(&self) -> Self {
        SampleRecord { is_oversampled_copy: true, ..self.clone() }
    }

    fn sort_key(&self) -> (Option<Split>, BaseDataset, SequenceType, bool, &str) {
        (self.split, self.base_dataset, self.label, self.is_oversampled_copy, &self.volume_ref)
    }
}

/// `(val, test, train)` sizes of a stratum of `n` samples.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let train = 7 * n / 10;
    (val, n - val - train, train)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub variant: Variant,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub original: usize,
    pub oversampled: usize,
}

impl ClassCount {
    pub fn total(&self) -> usize {
        self.original + self.oversampled
    }
}

/// JSON sidecar of a persisted manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub variant: Variant,
    pub seed: u64,
    pub counts: BTreeMap<Split, BTreeMap<SequenceType, ClassCount>>,
    pub totals: BTreeMap<Split, usize>,
    pub csv_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    volume_ref: String,
    label: SequenceType,
    base_dataset: BaseDataset,
    split: Split,
    oversampled: bool,
}

impl Manifest {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.in_split(split).count()
    }

    /// Records per class in a split, with originals and copies separated.
    pub fn class_counts(&self, split: Split) -> BTreeMap<SequenceType, ClassCount> {
        let mut counts: BTreeMap<SequenceType, ClassCount> = BTreeMap::new();
        for r in self.in_split(split) {
            let c = counts.entry(r.label).or_default();
            if r.is_oversampled_copy {
                c.oversampled += 1;
            } else {
                c.original += 1;
            }
        }
        counts
    }

    /// Per-class counts of one base dataset within a split.
    pub fn group_counts(&self, split: Split, base: BaseDataset) -> BTreeMap<SequenceType, ClassCount> {
        let mut counts: BTreeMap<SequenceType, ClassCount> = BTreeMap::new();
        for r in self.in_split(split).filter(|r| r.base_dataset == base) {
            let c = counts.entry(r.label).or_default();
            if r.is_oversampled_copy {
                c.oversampled += 1;
            } else {
                c.original += 1;
            }
        }
        counts
    }

    pub fn summary(&self) -> Result<ManifestSummary> {
        let counts: BTreeMap<_, _> = Split::ALL.iter().map(|&s| (s, self.class_counts(s))).collect();
        let totals = Split::ALL.iter().map(|&s| (s, self.split_len(s))).collect();
        Ok(ManifestSummary { variant: self.variant, seed: self.seed, counts, totals, csv_sha256: self.content_hash()? })
    }

    fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            let split = r.split.ok_or_else(|| Error::InvalidManifest(format!("{} has no split", r.volume_ref)))?;
            w.serialize(CsvRow {
                volume_ref: r.volume_ref.clone(),
                label: r.label,
                base_dataset: r.base_dataset,
                split,
                oversampled: r.is_oversampled_copy,
            })?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// SHA-256 of the CSV serialization; ties checkpoints to their training data.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_csv_bytes()?)))
    }

    /// Writes `<path>` (CSV, one record per row) and its JSON summary next to it.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<PathBuf> {
        let csv_path = csv_path.as_ref();
        std::fs::write(csv_path, self.to_csv_bytes()?)?;
        let json_path = csv_path.with_extension("json");
        std::fs::write(&json_path, serde_json::to_string_pretty(&self.summary()?)?)?;
        Ok(json_path)
    }

    /// Reads a manifest CSV and its JSON sidecar.
    pub fn load(csv_path: impl AsRef<Path>) -> Result<Manifest> {
        let csv_path = csv_path.as_ref();
        let summary: ManifestSummary = serde_json::from_str(&std::fs::read_to_string(csv_path.with_extension("json"))?)?;
        let mut reader = csv::Reader::from_path(csv_path)?;
        let records = reader
            .deserialize::<CsvRow>()
            .map(|row| {
                row.map(|r| SampleRecord {
                    volume_ref: r.volume_ref,
                    label: r.label,
                    base_dataset: r.base_dataset,
                    split: Some(r.split),
                    is_oversampled_copy: r.oversampled,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let manifest = Manifest { variant: summary.variant, seed: summary.seed, records };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks split disjointness, copy placement and the variant's class set.
    pub fn validate(&self) -> Result<()> {
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            let split = r.split.ok_or_else(|| Error::InvalidManifest(format!("{} has no split", r.volume_ref)))?;
            if r.is_oversampled_copy && split != Split::Train {
                return Err(Error::InvalidManifest(format!("oversampled copy of {} outside TRAIN", r.volume_ref)));
            }
            if !self.variant.includes(r.base_dataset, r.label) {
                return Err(Error::InvalidManifest(format!(
                    "{} ({}, {}) does not belong to {}",
                    r.volume_ref, r.base_dataset, r.label, self.variant
                )));
            }
            if let Some(prev) = split_of.insert(&r.volume_ref, split) {
                if prev != split {
                    return Err(Error::InvalidManifest(format!("{} is in both {prev} and {split}", r.volume_ref)));
                }
            }
        }
        Ok(())
    }

    fn sorted(mut self) -> Self {
        self.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        self
    }
}

/// Splits every (base dataset, class) stratum into VAL, TEST and TRAIN with a seeded shuffle.
///
/// The result spans every base dataset and class it was given, so it is
/// tagged as the main dataset variant.
pub fn stratified_split(records: &[SampleRecord], seed: u64) -> Result<Manifest> {
    let mut seen = BTreeSet::new();
    let mut strata: BTreeMap<(BaseDataset, SequenceType), Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        if r.split.is_some() || r.is_oversampled_copy {
            return Err(Error::InvalidManifest(format!("{} is already assigned", r.volume_ref)));
        }
        if !seen.insert(r.volume_ref.as_str()) {
            return Err(Error::InvalidManifest(format!("{} is listed twice", r.volume_ref)));
        }
        strata.entry((r.base_dataset, r.label)).or_default().push(r);
    }

    let classes: BTreeSet<SequenceType> = strata.keys().map(|&(_, c)| c).collect();
    let bases: BTreeSet<BaseDataset> = strata.keys().map(|&(b, _)| b).collect();
    for &base in &bases {
        for &class in &classes {
            if !strata.contains_key(&(base, class)) {
                log::warn!("empty stratum: {base} has no {class} samples");
            }
        }
    }

    let mut out = Vec::with_capacity(records.len());
    for ((base, class), mut members) in strata {
        members.sort_by(|a, b| a.volume_ref.cmp(&b.volume_ref));
        let mut rng = rng_for(&[seed, tag("split"), tag(base.as_str()), tag(class.as_str())]);
        members.shuffle(&mut rng);
        let (val, test, _) = split_sizes(members.len());
        for (i, r) in members.into_iter().enumerate() {
            let split = if i < val {
                Split::Val
            } else if i < val + test {
                Split::Test
            } else {
                Split::Train
            };
            out.push(SampleRecord { split: Some(split), ..r.clone() });
        }
    }
    Ok(Manifest { variant: Variant::BratsTcga5, seed, records: out }.sorted())
}

fn draw_copies(pool: &[&SampleRecord], count: usize, rng: &mut impl Rng) -> Vec<SampleRecord> {
    (0..count).map(|_| pool[rng.random_range(0..pool.len())].copy()).collect()
}

/// Duplicates TRAIN records inside every base dataset until each class
/// present there matches the group's largest class. Copies are drawn
/// uniformly with replacement from the group's original records.
pub fn balance_groups(manifest: &Manifest) -> Manifest {
    let mut groups: BTreeMap<BaseDataset, BTreeMap<SequenceType, Vec<&SampleRecord>>> = BTreeMap::new();
    for r in manifest.in_split(Split::Train).filter(|r| !r.is_oversampled_copy) {
        groups.entry(r.base_dataset).or_default().entry(r.label).or_default().push(r);
    }
    let mut records = manifest.records.clone();
    for (base, classes) in &groups {
        let target = classes.values().map(Vec::len).max().unwrap_or(0);
        for (class, pool) in classes {
            let have = manifest.group_counts(Split::Train, *base).get(class).map_or(0, ClassCount::total);
            if have < target {
                let mut rng = rng_for(&[manifest.seed, tag("balance"), tag(base.as_str()), tag(class.as_str())]);
                records.extend(draw_copies(pool, target - have, &mut rng));
            }
        }
    }
    Manifest { records, ..manifest.clone() }.sorted()
}

/// Raises every TRAIN class to the largest per-class TRAIN total across
/// groups. This is what lifts OTHER, absent from BraTS, to the combined
/// count of the other classes.
pub fn raise_to_largest_class(manifest: &Manifest) -> Manifest {
    let totals = manifest.class_counts(Split::Train);
    let target = totals.values().map(ClassCount::total).max().unwrap_or(0);
    let mut records = manifest.records.clone();
    for (class, count) in &totals {
        if count.total() >= target {
            continue;
        }
        let pool: Vec<&SampleRecord> =
            manifest.in_split(Split::Train).filter(|r| r.label == *class && !r.is_oversampled_copy).collect();
        let mut rng = rng_for(&[manifest.seed, tag("raise"), tag(manifest.variant.as_str()), tag(class.as_str())]);
        records.extend(draw_copies(&pool, target - count.total(), &mut rng));
    }
    Manifest { records, ..manifest.clone() }.sorted()
}

/// Group balancing followed by the cross-group raise.
pub fn oversample_train(manifest: &Manifest) -> Manifest {
    raise_to_largest_class(&balance_groups(manifest))
}

/// Restricts a split manifest to a variant's base datasets and classes.
pub fn filter_variant(manifest: &Manifest, variant: Variant) -> Manifest {
    let records = manifest.records.iter().filter(|r| variant.includes(r.base_dataset, r.label)).cloned().collect();
    Manifest { variant, seed: manifest.seed, records }
}

/// Builds one dataset variant from the full labeled listing.
///
/// Groups are balanced on the full union before filtering, so a TCGA-GBM
/// class is lifted to that group's largest class even when the largest
/// class (OTHER) is later filtered out of a four-class variant.
pub fn assemble_variant(variant: Variant, all_records: &[SampleRecord], seed: u64) -> Result<Manifest> {
    let balanced = balance_groups(&stratified_split(all_records, seed)?);
    let view = filter_variant(&balanced, variant);
    if view.records.is_empty() {
        return Err(Error::InvalidManifest(format!("no records belong to {variant}")));
    }
    let manifest = raise_to_largest_class(&view);
    manifest.validate()?;
    Ok(manifest)
}

/// One row of a scan listing: a loadable, labeled volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListingEntry {
    pub path: String,
    pub label: SequenceType,
    pub base_dataset: BaseDataset,
    pub format: String,
    pub source_name: String,
    /// `|`-separated tokens that decided the label.
    pub matched_tokens: String,
}

impl ListingEntry {
    pub fn record(&self) -> SampleRecord {
        SampleRecord::new(self.path.clone(), self.label, self.base_dataset)
    }
}

pub fn write_listing(entries: &[ListingEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_listing(path: impl AsRef<Path>) -> Result<Vec<ListingEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ListingEntry>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stratum(base: BaseDataset, class: SequenceType, n: usize) -> Vec<SampleRecord> {
        (0..n).map(|i| SampleRecord::new(format!("{base}/{class}/{i:05}"), class, base)).collect()
    }

    #[test]
    fn split_sizes_by_hand() {
        assert_eq!(split_sizes(10), (1, 2, 7));
        assert_eq!(split_sizes(693), (69, 139, 485));
        assert_eq!(split_sizes(1120), (112, 224, 784));
        assert_eq!(split_sizes(0), (0, 0, 0));
        assert_eq!(split_sizes(1), (0, 1, 0));
    }

    #[test]
    fn stratum_of_ten() {
        let m = stratified_split(&stratum(BaseDataset::TcgaGbm, SequenceType::T2, 10), 3).unwrap();
        assert_eq!((m.split_len(Split::Val), m.split_len(Split::Test), m.split_len(Split::Train)), (1, 2, 7));
    }

    #[test]
    fn balanced_group_gets_no_copies() {
        let mut recs = stratum(BaseDataset::Brats19Val, SequenceType::T1, 20);
        recs.extend(stratum(BaseDataset::Brats19Val, SequenceType::T2, 20));
        let m = oversample_train(&stratified_split(&recs, 0).unwrap());
        assert!(m.records.iter().all(|r| !r.is_oversampled_copy));
    }

    #[test]
    fn rejects_duplicates_and_preassigned() {
        let mut recs = stratum(BaseDataset::TcgaGbm, SequenceType::T1, 3);
        recs.push(recs[0].clone());
        assert!(stratified_split(&recs, 0).is_err());
        let mut recs = stratum(BaseDataset::TcgaGbm, SequenceType::T1, 3);
        recs[1].split = Some(Split::Test);
        assert!(stratified_split(&recs, 0).is_err());
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!("BRATS+TCGA5".parse::<Variant>().unwrap(), Variant::BratsTcga5);
        assert_eq!("tcga4".parse::<Variant>().unwrap(), Variant::Tcga4);
        assert!(matches!("BRATS5".parse::<Variant>(), Err(Error::UnknownVariant(_))));
        assert_eq!("tcga-gbm".parse::<BaseDataset>().unwrap(), BaseDataset::TcgaGbm);
    }

    #[test]
    fn manifest_round_trips_through_csv_and_json() {
        let mut recs = stratum(BaseDataset::TcgaGbm, SequenceType::Flair, 30);
        recs.extend(stratum(BaseDataset::TcgaGbm, SequenceType::Other, 50));
        let m = assemble_variant(Variant::Tcga5, &recs, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back, m);
        let summary: ManifestSummary = serde_json::from_str(&std::fs::read_to_string(p.with_extension("json")).unwrap()).unwrap();
        assert_eq!(summary.totals[&Split::Train], m.split_len(Split::Train));
        assert_eq!(summary.csv_sha256, m.content_hash().unwrap());
    }

    #[test]
    fn unbuildable_variant_is_an_error() {
        let recs = stratum(BaseDataset::TcgaGbm, SequenceType::Flair, 30);
        assert!(assemble_variant(Variant::Brats4, &recs, 0).is_err());
    }
}
