//! DICOM series: one directory, one file per slice.

use std::path::{Path, PathBuf};

use dicom_core::value::PrimitiveValue;
use dicom_core::{DataElement, VR};
use dicom_dictionary_std::{tags, uids};
use dicom_object::{open_file, DefaultDicomObject, FileMetaTableBuilder, InMemDicomObject};
use ndarray::{Array2, Array3, Axis};

use super::{RawVolume, SourceFormat};
use crate::error::{Error, Result};

const BIG_ENDIAN: &str = "1.2.840.10008.1.2.2";

/// Cheap check for the `DICM` magic after the 128-byte preamble.
pub fn looks_like_dicom(path: &Path) -> bool {
    use std::io::Read;
    let mut head = [0u8; 132];
    std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut head)).is_ok() && &head[128..132] == b"DICM"
}

struct Slice {
    file: PathBuf,
    pixels: Array2<f32>,
    position: Option<f64>,
    instance: Option<i64>,
}

fn read_float(obj: &DefaultDicomObject, tag: dicom_core::Tag) -> Option<f64> {
    obj.element_opt(tag).ok().flatten().and_then(|e| e.to_float64().ok())
}

fn read_slices(path: &Path) -> Result<Vec<Slice>> {
    let bad = |reason: String| Error::unreadable(path, reason);
    let obj = open_file(path).map_err(|e| bad(e.to_string()))?;
    if obj.meta().transfer_syntax().trim_end_matches('\0') == BIG_ENDIAN {
        return Err(bad("big-endian transfer syntax is not supported".into()));
    }
    let int = |tag, name: &str| -> Result<usize> {
        obj.element(tag)
            .map_err(|e| bad(format!("{name}: {e}")))?
            .to_int::<i64>()
            .map_err(|e| bad(format!("{name}: {e}")))
            .map(|v| v.max(0) as usize)
    };
    let rows = int(tags::ROWS, "Rows")?;
    let cols = int(tags::COLUMNS, "Columns")?;
    let bits = int(tags::BITS_ALLOCATED, "BitsAllocated")?;
    let signed = obj.element_opt(tags::PIXEL_REPRESENTATION).ok().flatten().and_then(|e| e.to_int::<i32>().ok()) == Some(1);
    let samples = obj.element_opt(tags::SAMPLES_PER_PIXEL).ok().flatten().and_then(|e| e.to_int::<usize>().ok()).unwrap_or(1);
    let frames = obj.element_opt(tags::NUMBER_OF_FRAMES).ok().flatten().and_then(|e| e.to_int::<usize>().ok()).unwrap_or(1).max(1);
    if samples != 1 {
        return Err(bad(format!("{samples} samples per pixel, expected grayscale")));
    }
    let slope = read_float(&obj, tags::RESCALE_SLOPE).unwrap_or(1.0);
    let intercept = read_float(&obj, tags::RESCALE_INTERCEPT).unwrap_or(0.0);
    let data = obj
        .element(tags::PIXEL_DATA)
        .map_err(|e| bad(format!("PixelData: {e}")))?
        .to_bytes()
        .map_err(|e| bad(format!("PixelData is encapsulated or unreadable: {e}")))?;

    let bytes_per = bits / 8;
    let frame_len = rows * cols;
    if rows == 0 || cols == 0 || !matches!(bits, 8 | 16 | 32) || data.len() < frame_len * frames * bytes_per {
        return Err(bad(format!("pixel data does not match {rows}×{cols}×{frames} at {bits} bits")));
    }

    let decode = |c: &[u8]| -> f64 {
        match (bits, signed) {
            (8, false) => c[0] as f64,
            (8, true) => c[0] as i8 as f64,
            (16, false) => u16::from_ne_bytes([c[0], c[1]]) as f64,
            (16, true) => i16::from_ne_bytes([c[0], c[1]]) as f64,
            (32, false) => u32::from_ne_bytes([c[0], c[1], c[2], c[3]]) as f64,
            _ => i32::from_ne_bytes([c[0], c[1], c[2], c[3]]) as f64,
        }
    };

    // slice position = projection of the patient position on the slice normal
    let position = match (
        obj.element_opt(tags::IMAGE_POSITION_PATIENT).ok().flatten().and_then(|e| e.to_multi_float64().ok()),
        obj.element_opt(tags::IMAGE_ORIENTATION_PATIENT).ok().flatten().and_then(|e| e.to_multi_float64().ok()),
    ) {
        (Some(p), Some(o)) if p.len() == 3 && o.len() == 6 => {
            let n = [o[1] * o[5] - o[2] * o[4], o[2] * o[3] - o[0] * o[5], o[0] * o[4] - o[1] * o[3]];
            Some(p[0] * n[0] + p[1] * n[1] + p[2] * n[2])
        }
        _ => None,
    };
    let instance = obj.element_opt(tags::INSTANCE_NUMBER).ok().flatten().and_then(|e| e.to_int::<i64>().ok());

    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = f * frame_len * bytes_per;
        let values: Vec<f32> = data[start..start + frame_len * bytes_per]
            .chunks_exact(bytes_per)
            .map(|c| (decode(c) * slope + intercept) as f32)
            .collect();
        out.push(Slice {
            file: path.to_path_buf(),
            pixels: Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?,
            position,
            instance: instance.map(|i| i * frames as i64 + f as i64),
        });
    }
    Ok(out)
}

/// Assembles a directory of per-slice DICOM files into a volume.
///
/// Slices are ordered by position along the slice normal when every slice
/// carries position and orientation, else by instance number, else by file
/// name. Series whose slices disagree on dimensions are rejected.
pub fn load_dicom_series(dir: &Path) -> Result<RawVolume> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && looks_like_dicom(p))
        .collect();
    files.sort();

    let mut slices = Vec::new();
    for file in &files {
        match read_slices(file) {
            Ok(s) => slices.extend(s),
            // DICOMDIR and other non-image objects carry no pixel data
            Err(e) => log::debug!("skipping {}: {e}", file.display()),
        }
    }
    if slices.is_empty() {
        return Err(Error::unreadable(dir, "no readable DICOM slices"));
    }

    let mut dims: Vec<(usize, usize)> = slices.iter().map(|s| s.pixels.dim()).collect();
    dims.sort();
    dims.dedup();
    if dims.len() > 1 {
        return Err(Error::MixedSliceDimensions { path: dir.to_path_buf(), dims });
    }

    if slices.iter().all(|s| s.position.is_some()) {
        slices.sort_by(|a, b| a.position.partial_cmp(&b.position).unwrap_or(std::cmp::Ordering::Equal));
    } else if slices.iter().all(|s| s.instance.is_some()) {
        slices.sort_by_key(|s| s.instance);
    } else {
        slices.sort_by(|a, b| a.file.cmp(&b.file));
    }

    let (h, w) = dims[0];
    let mut voxels = Array3::zeros((slices.len(), h, w));
    for (mut dst, s) in voxels.axis_iter_mut(Axis(0)).zip(&slices) {
        dst.assign(&s.pixels);
    }
    RawVolume::new(voxels, SourceFormat::DicomSeries, dir)
}

/// Slice-level metadata for [`write_dicom_slice`].
#[derive(Debug, Clone, Default)]
pub struct SliceMeta {
    pub instance_number: Option<i32>,
    /// Patient position; orientation is written as axial (identity rows/columns).
    pub position: Option<[f64; 3]>,
}

/// Writes one 16-bit unsigned grayscale slice as an Explicit VR Little Endian
/// MR image. The array is `(rows, columns)`.
pub fn write_dicom_slice(pixels: &Array2<u16>, meta: &SliceMeta, path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols) = pixels.dim();
    let sop_instance = format!("2.25.{}", crate::seed::derive_seed(&[rows as u64, cols as u64, crate::seed::tag(&path.as_ref().display().to_string())]));
    let mut obj = InMemDicomObject::new_empty();
    obj.put(DataElement::new(tags::SOP_CLASS_UID, VR::UI, PrimitiveValue::from(uids::MR_IMAGE_STORAGE)));
    obj.put(DataElement::new(tags::SOP_INSTANCE_UID, VR::UI, PrimitiveValue::from(sop_instance.as_str())));
    obj.put(DataElement::new(tags::MODALITY, VR::CS, PrimitiveValue::from("MR")));
    obj.put(DataElement::new(tags::SAMPLES_PER_PIXEL, VR::US, PrimitiveValue::from(1u16)));
    obj.put(DataElement::new(tags::PHOTOMETRIC_INTERPRETATION, VR::CS, PrimitiveValue::from("MONOCHROME2")));
    obj.put(DataElement::new(tags::ROWS, VR::US, PrimitiveValue::from(rows as u16)));
    obj.put(DataElement::new(tags::COLUMNS, VR::US, PrimitiveValue::from(cols as u16)));
    obj.put(DataElement::new(tags::BITS_ALLOCATED, VR::US, PrimitiveValue::from(16u16)));
    obj.put(DataElement::new(tags::BITS_STORED, VR::US, PrimitiveValue::from(16u16)));
    obj.put(DataElement::new(tags::HIGH_BIT, VR::US, PrimitiveValue::from(15u16)));
    obj.put(DataElement::new(tags::PIXEL_REPRESENTATION, VR::US, PrimitiveValue::from(0u16)));
    if let Some(n) = meta.instance_number {
        obj.put(DataElement::new(tags::INSTANCE_NUMBER, VR::IS, PrimitiveValue::from(n.to_string())));
    }
    if let Some(p) = meta.position {
        let joined = p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("\\");
        obj.put(DataElement::new(tags::IMAGE_POSITION_PATIENT, VR::DS, PrimitiveValue::from(joined)));
        obj.put(DataElement::new(tags::IMAGE_ORIENTATION_PATIENT, VR::DS, PrimitiveValue::from("1\\0\\0\\0\\1\\0")));
    }
    let data: Vec<u16> = pixels.iter().copied().collect();
    obj.put(DataElement::new(tags::PIXEL_DATA, VR::OW, PrimitiveValue::U16(data.into())));

    let file = obj
        .with_meta(
            FileMetaTableBuilder::new()
                .transfer_syntax(uids::EXPLICIT_VR_LITTLE_ENDIAN)
                .media_storage_sop_class_uid(uids::MR_IMAGE_STORAGE)
                .media_storage_sop_instance_uid(sop_instance.as_str()),
        )
        .map_err(|e| Error::unreadable(path.as_ref(), e))?;
    file.write_to_file(path.as_ref()).map_err(|e| Error::unreadable(path.as_ref(), e))
}
