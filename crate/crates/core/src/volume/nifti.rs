use std::path::Path;

use ndarray::{Array3, Axis, Ix3};
use nifti::{IntoNdArray, NiftiObject, ReaderOptions};

use super::{RawVolume, SourceFormat};
use crate::error::{Error, Result};

/// Loads a `.nii` / `.nii.gz` file. The stored third axis is the slice axis;
/// 4D inputs keep their first frame.
pub fn load_nifti(path: &Path) -> Result<RawVolume> {
    let obj = ReaderOptions::new().read_file(path).map_err(|e| Error::unreadable(path, e))?;
    let mut data = obj.into_volume().into_ndarray::<f32>().map_err(|e| Error::unreadable(path, e))?;
    while data.ndim() > 3 {
        data = data.index_axis_move(Axis(3), 0);
    }
    while data.ndim() < 3 {
        let last = Axis(data.ndim());
        data = data.insert_axis(last);
    }
    let xyz = data.into_dimensionality::<Ix3>().map_err(|e| Error::unreadable(path, e))?;
    let zyx = xyz.permuted_axes([2, 1, 0]).as_standard_layout().to_owned();
    RawVolume::new(zyx, SourceFormat::Nifti, path)
}

/// Writes a `(slice, row, column)` volume as NIfTI-1 (gzip when the name ends in `.gz`).
pub fn write_nifti(voxels: &Array3<f32>, path: impl AsRef<Path>) -> Result<()> {
    let xyz = voxels.view().permuted_axes([2, 1, 0]);
    nifti::writer::WriterOptions::new(path.as_ref())
        .write_nifti(&xyz)
        .map_err(|e| Error::unreadable(path.as_ref(), e))
}
