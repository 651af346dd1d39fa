//! MetaImage (`.mha` with inline data, `.mhd` + detached raw) reading and writing.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use ndarray::Array3;

use super::{RawVolume, SourceFormat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    U64,
    I64,
    F32,
    F64,
}

impl ElementType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_UCHAR" => ElementType::U8,
            "MET_CHAR" => ElementType::I8,
            "MET_USHORT" => ElementType::U16,
            "MET_SHORT" => ElementType::I16,
            "MET_UINT" | "MET_ULONG" => ElementType::U32,
            "MET_INT" | "MET_LONG" => ElementType::I32,
            "MET_ULONG_LONG" => ElementType::U64,
            "MET_LONG_LONG" => ElementType::I64,
            "MET_FLOAT" => ElementType::F32,
            "MET_DOUBLE" => ElementType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ElementType::U8 | ElementType::I8 => 1,
            ElementType::U16 | ElementType::I16 => 2,
            ElementType::U32 | ElementType::I32 | ElementType::F32 => 4,
            ElementType::U64 | ElementType::I64 | ElementType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], msb: bool) -> f32 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut buf = [0u8; $n];
                buf.copy_from_slice(&b[..$n]);
                (if msb { <$t>::from_be_bytes(buf) } else { <$t>::from_le_bytes(buf) }) as f32
            }};
        }
        match self {
            ElementType::U8 => b[0] as f32,
            ElementType::I8 => b[0] as i8 as f32,
            ElementType::U16 => num!(u16, 2),
            ElementType::I16 => num!(i16, 2),
            ElementType::U32 => num!(u32, 4),
            ElementType::I32 => num!(i32, 4),
            ElementType::U64 => num!(u64, 8),
            ElementType::I64 => num!(i64, 8),
            ElementType::F32 => num!(f32, 4),
            ElementType::F64 => num!(f64, 8),
        }
    }
}

/// Splits a MetaImage buffer into its `key = value` header and the offset of
/// the first byte after the `ElementDataFile` line.
fn parse_header(bytes: &[u8]) -> Option<(HashMap<String, String>, usize)> {
    let mut fields = HashMap::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map(|p| pos + p).unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[pos..end]).ok()?.trim();
        pos = end + 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=')?;
        let key = key.trim().to_string();
        let last = key == "ElementDataFile";
        fields.insert(key, value.trim().to_string());
        if last {
            return Some((fields, pos.min(bytes.len())));
        }
    }
    None
}

fn is_true(fields: &HashMap<String, String>, key: &str) -> bool {
    fields.get(key).is_some_and(|v| v.eq_ignore_ascii_case("true"))
}

pub fn load_metaimage(path: &Path) -> Result<RawVolume> {
    let bad = |reason: &str| Error::unreadable(path, reason);
    let bytes = std::fs::read(path)?;
    let (fields, data_start) = parse_header(&bytes).ok_or_else(|| bad("malformed MetaImage header"))?;

    let dims: Vec<usize> = fields
        .get("DimSize")
        .ok_or_else(|| bad("missing DimSize"))?
        .split_whitespace()
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("non-integer DimSize"))?;
    if dims.is_empty() || dims.len() > 4 || dims.contains(&0) {
        return Err(bad("unsupported DimSize"));
    }
    let element = fields
        .get("ElementType")
        .and_then(|t| ElementType::parse(t))
        .ok_or_else(|| bad("unsupported ElementType"))?;
    let channels: usize = fields.get("ElementNumberOfChannels").and_then(|c| c.parse().ok()).unwrap_or(1).max(1);
    let msb = is_true(&fields, "BinaryDataByteOrderMSB") || is_true(&fields, "ElementByteOrderMSB");
    let data_file = fields.get("ElementDataFile").cloned().unwrap_or_default();

    let mut raw = if data_file.eq_ignore_ascii_case("LOCAL") {
        bytes[data_start..].to_vec()
    } else {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::read(dir.join(&data_file)).map_err(|e| Error::unreadable(path, format!("{data_file}: {e}")))?
    };

    let (nx, ny, nz) = (dims[0], dims.get(1).copied().unwrap_or(1), dims.get(2).copied().unwrap_or(1));
    let voxel_count = nx * ny * nz;
    let needed = voxel_count * channels * element.size();
    if is_true(&fields, "CompressedData") {
        let mut inflated = Vec::with_capacity(needed);
        ZlibDecoder::new(raw.as_slice()).read_to_end(&mut inflated).map_err(|e| Error::unreadable(path, e))?;
        raw = inflated;
    } else if let Some(skip) = fields.get("HeaderSize").and_then(|h| h.parse::<i64>().ok()) {
        let skip = if skip < 0 { raw.len().saturating_sub(needed) } else { skip as usize };
        raw.drain(..skip.min(raw.len()));
    }
    if raw.len() < needed {
        return Err(bad(&format!("pixel data holds {} bytes, expected {needed}", raw.len())));
    }

    let stride = channels * element.size();
    let values: Vec<f32> = raw[..needed].chunks_exact(stride).map(|c| element.decode(c, msb)).collect();
    // x varies fastest on disk, which is exactly (z, y, x) in row-major order
    let voxels = Array3::from_shape_vec((nz, ny, nx), values).map_err(|e| Error::unreadable(path, e))?;
    RawVolume::new(voxels, SourceFormat::MetaImage, path)
}

/// Writes a `(slice, row, column)` volume as a single-file `.mha` of `MET_FLOAT`.
pub fn write_mha(voxels: &Array3<f32>, path: impl AsRef<Path>, compress: bool) -> Result<()> {
    let (nz, ny, nx) = voxels.dim();
    let mut payload: Vec<u8> = voxels.iter().flat_map(|v| v.to_le_bytes()).collect();
    if compress {
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&payload)?;
        payload = enc.finish()?;
    }
    let mut out = std::fs::File::create(path)?;
    write!(
        out,
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         CompressedData = {}\n{}ElementSpacing = 1 1 1\nDimSize = {nx} {ny} {nz}\n\
         ElementType = MET_FLOAT\nElementDataFile = LOCAL\n",
        if compress { "True" } else { "False" },
        if compress { format!("CompressedDataSize = {}\n", payload.len()) } else { String::new() },
    )?;
    out.write_all(&payload)?;
    Ok(())
}
