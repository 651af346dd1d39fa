//! Volume loading and canonicalization.
//!
//! Every input, whatever its format or shape, goes through the same chain:
//! [`load_volume`] → [`normalize_intensities`] → [`extract_central_16`] →
//! [`canonical_resize`], ending as a 16×200×200 [`CanonicalVolume`] with
//! intensities in `[0, 255]`.

mod dicom;
pub mod metaimage;
mod nifti;
pub mod resample;

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::BaseDataset;
use crate::error::{Error, Result};
use crate::labels::SequenceType;
use crate::{CANONICAL_DEPTH, CANONICAL_SIZE};

pub use self::dicom::{load_dicom_series, looks_like_dicom, write_dicom_slice, SliceMeta};
pub use self::nifti::{load_nifti, write_nifti};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceFormat {
    Nifti,
    MetaImage,
    DicomSeries,
}

impl SourceFormat {
    /// Format implied by a path: directories are DICOM series, files go by extension.
    pub fn detect(path: &Path) -> Option<SourceFormat> {
        if path.is_dir() {
            return Some(SourceFormat::DicomSeries);
        }
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Some(SourceFormat::Nifti)
        } else if name.ends_with(".mha") || name.ends_with(".mhd") {
            Some(SourceFormat::MetaImage)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceFormat::Nifti => "NIFTI",
            SourceFormat::MetaImage => "METAIMAGE",
            SourceFormat::DicomSeries => "DICOM_SERIES",
        }
    }
}

/// A loaded volume indexed `(slice, row, column)`.
#[derive(Debug, Clone)]
pub struct RawVolume {
    voxels: Array3<f32>,
    pub source_format: SourceFormat,
    pub source_path: PathBuf,
}

impl RawVolume {
    pub fn new(voxels: Array3<f32>, source_format: SourceFormat, source_path: impl Into<PathBuf>) -> Result<Self> {
        let (d, h, w) = voxels.dim();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!("volume must be non-empty, got {d}×{h}×{w}")));
        }
        Ok(RawVolume { voxels, source_format, source_path: source_path.into() })
    }

    /// Wraps an in-memory array, e.g. a synthetic volume.
    pub fn from_array(voxels: Array3<f32>) -> Result<Self> {
        Self::new(voxels, SourceFormat::Nifti, PathBuf::new())
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn into_voxels(self) -> Array3<f32> {
        self.voxels
    }

    pub fn depth(&self) -> usize {
        self.voxels.dim().0
    }

    pub fn height(&self) -> usize {
        self.voxels.dim().1
    }

    pub fn width(&self) -> usize {
        self.voxels.dim().2
    }

    fn with_voxels(&self, voxels: Array3<f32>) -> RawVolume {
        RawVolume { voxels, source_format: self.source_format, source_path: self.source_path.clone() }
    }
}

/// Loads a volume from a NIfTI file, a MetaImage file or a directory of DICOM slices.
pub fn load_volume(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::unreadable(path, "path does not exist"));
    }
    match SourceFormat::detect(path) {
        Some(SourceFormat::Nifti) => load_nifti(path),
        Some(SourceFormat::MetaImage) => metaimage::load_metaimage(path),
        Some(SourceFormat::DicomSeries) => load_dicom_series(path),
        None => Err(Error::unreadable(path, "unrecognized volume format")),
    }
}

/// Linear per-volume min–max mapping onto `[0, 255]`.
///
/// Constant volumes map to all zeros. Non-finite voxels are treated as the
/// volume minimum.
pub fn normalize_intensities(volume: &RawVolume) -> RawVolume {
    let (lo, hi) = volume
        .voxels
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    let range = hi - lo;
    let out = if !(range > 0.0) || !range.is_finite() {
        Array3::zeros(volume.voxels.raw_dim())
    } else {
        let scale = 255.0 / range;
        volume.voxels.mapv(|v| if v.is_finite() { ((v as f64 - lo) * scale) as f32 } else { 0.0 })
    };
    volume.with_voxels(out)
}

/// Central slice window of a volume of `depth` slices: `(start, pad_before, pad_after)`.
///
/// For `depth >= 16` this is `⌊(depth−16)/2⌋` with no padding. Shallower
/// volumes replicate their first slice upward and last slice downward; an
/// odd surplus replica goes to the end.
pub fn central_window(depth: usize) -> (usize, usize, usize) {
    if depth >= CANONICAL_DEPTH {
        ((depth - CANONICAL_DEPTH) / 2, 0, 0)
    } else {
        let missing = CANONICAL_DEPTH - depth;
        (0, missing / 2, missing - missing / 2)
    }
}

/// Keeps the 16 central slices, replicating the extreme slices of shallower volumes.
pub fn extract_central_16(volume: &RawVolume) -> RawVolume {
    let depth = volume.depth();
    let (start, before, _after) = central_window(depth);
    if depth >= CANONICAL_DEPTH {
        let kept = volume.voxels.slice(s![start..start + CANONICAL_DEPTH, .., ..]).to_owned();
        return volume.with_voxels(kept);
    }
    let (_, h, w) = volume.voxels.dim();
    let mut out = Array3::zeros((CANONICAL_DEPTH, h, w));
    for (k, mut slice) in out.axis_iter_mut(Axis(0)).enumerate() {
        let src = k.saturating_sub(before).min(depth - 1);
        slice.assign(&volume.voxels.index_axis(Axis(0), src));
    }
    volume.with_voxels(out)
}

/// `x·num/den` rounded half-up, in exact integer arithmetic.
fn mul_div_round(x: usize, num: usize, den: usize) -> usize {
    (2 * x * num + den) / (2 * den)
}

/// Geometry of the aspect-preserving resize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizePlan {
    pub min_dim: usize,
    pub max_dim: usize,
    /// `R = Min/Max`.
    pub scale_factor: f64,
    /// `(height, width)` after scaling by `R`.
    pub scaled: (usize, usize),
    /// `(top, bottom, left, right)` zero padding up to `Min × Min`.
    pub padding: (usize, usize, usize, usize),
}

impl ResizePlan {
    pub fn for_shape(height: usize, width: usize) -> ResizePlan {
        let min_dim = height.min(width);
        let max_dim = height.max(width);
        let scaled = (
            mul_div_round(height, min_dim, max_dim).max(1),
            mul_div_round(width, min_dim, max_dim).max(1),
        );
        let pad_v = min_dim - scaled.0;
        let pad_h = min_dim - scaled.1;
        ResizePlan {
            min_dim,
            max_dim,
            scale_factor: min_dim as f64 / max_dim as f64,
            scaled,
            padding: (pad_v / 2, pad_v - pad_v / 2, pad_h / 2, pad_h - pad_h / 2),
        }
    }

    pub fn is_square(&self) -> bool {
        self.min_dim == self.max_dim
    }

    /// Shape after padding, which is always `Min × Min`.
    pub fn padded(&self) -> (usize, usize) {
        (self.min_dim, self.min_dim)
    }

    /// Scales one slice by `R` and zero-pads it to `Min × Min`.
    pub fn scale_and_pad(&self, slice: &Array2<f32>) -> Array2<f32> {
        let scaled = resample::resize_bilinear(slice, self.scaled.0, self.scaled.1);
        let (top, _, left, _) = self.padding;
        let mut out = Array2::zeros(self.padded());
        out.slice_mut(s![top..top + self.scaled.0, left..left + self.scaled.1]).assign(&scaled);
        out
    }
}

/// Provenance of a canonical volume.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source_path: PathBuf,
    pub base_dataset: Option<BaseDataset>,
}

/// A 16×200×200 intensity stack in `[0, 255]`.
#[derive(Debug, Clone)]
pub struct CanonicalVolume {
    voxels: Array3<f32>,
    pub label: Option<SequenceType>,
    pub provenance: Provenance,
}

impl CanonicalVolume {
    pub fn new(voxels: Array3<f32>, label: Option<SequenceType>, provenance: Provenance) -> Result<Self> {
        let expected = (CANONICAL_DEPTH, CANONICAL_SIZE, CANONICAL_SIZE);
        if voxels.dim() != expected {
            return Err(Error::ShapeMismatch(format!("canonical volume must be {expected:?}, got {:?}", voxels.dim())));
        }
        Ok(CanonicalVolume { voxels, label, provenance })
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn with_label(mut self, label: SequenceType) -> Self {
        self.label = Some(label);
        self
    }
}

/// Resizes a 16-slice volume to 200×200 per slice, padding non-square inputs
/// to a square after scaling by `R = Min/Max` so nothing is cropped or stretched.
pub fn canonical_resize(volume: &RawVolume) -> Result<CanonicalVolume> {
    if volume.depth() != CANONICAL_DEPTH {
        return Err(Error::ShapeMismatch(format!("expected {CANONICAL_DEPTH} slices, got {}", volume.depth())));
    }
    let plan = ResizePlan::for_shape(volume.height(), volume.width());
    let mut out = Array3::zeros((CANONICAL_DEPTH, CANONICAL_SIZE, CANONICAL_SIZE));
    for (src, mut dst) in volume.voxels.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let src = src.to_owned();
        let square = if plan.is_square() { src } else { plan.scale_and_pad(&src) };
        dst.assign(&resample::resize_bilinear(&square, CANONICAL_SIZE, CANONICAL_SIZE));
    }
    // bilinear weights are convex, the clamp only absorbs float rounding
    out.mapv_inplace(|v| v.clamp(0.0, 255.0));
    CanonicalVolume::new(
        out,
        None,
        Provenance { source_path: volume.source_path.clone(), base_dataset: None },
    )
}

/// Runs normalize → extract → resize on an already loaded volume.
pub fn canonicalize(volume: &RawVolume) -> Result<CanonicalVolume> {
    let normalized = normalize_intensities(volume);
    canonical_resize(&extract_central_16(&normalized))
}

/// Loads and canonicalizes a volume from disk.
pub fn load_canonical(path: impl AsRef<Path>) -> Result<CanonicalVolume> {
    canonicalize(&load_volume(path)?)
}
