//! MetaImage (`.mhd` + `.raw`) and JSON-sidecar volume I/O.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IntensityUnit, Volume};
use crate::error::{Error, Result};

/// On-disk voxel representation. All payloads are little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Uint8,
    Uint16,
    Float32,
    Float64,
}

impl ElementType {
    fn size(self) -> usize {
        match self {
            ElementType::Uint8 => 1,
            ElementType::Uint16 => 2,
            ElementType::Float32 => 4,
            ElementType::Float64 => 8,
        }
    }

    fn met_name(self) -> &'static str {
        match self {
            ElementType::Uint8 => "MET_UCHAR",
            ElementType::Uint16 => "MET_USHORT",
            ElementType::Float32 => "MET_FLOAT",
            ElementType::Float64 => "MET_DOUBLE",
        }
    }

    fn from_met(name: &str) -> Result<Self> {
        match name {
            "MET_UCHAR" => Ok(ElementType::Uint8),
            "MET_USHORT" => Ok(ElementType::Uint16),
            "MET_FLOAT" => Ok(ElementType::Float32),
            "MET_DOUBLE" => Ok(ElementType::Float64),
            other => Err(Error::MetaImage(format!("unsupported ElementType {other}"))),
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            ElementType::Uint8 => bytes.iter().map(|&b| b as f64).collect(),
            ElementType::Uint16 => bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            ElementType::Float32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            ElementType::Float64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        }
    }

    fn encode(self, data: &[f64]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(data.len() * self.size());
        for &v in data {
            match self {
                ElementType::Uint8 => out.push(to_unsigned(v, u8::MAX as f64)? as u8),
                ElementType::Uint16 => {
                    out.extend_from_slice(&(to_unsigned(v, u16::MAX as f64)? as u16).to_le_bytes())
                }
                ElementType::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                ElementType::Float64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Ok(out)
    }
}

fn to_unsigned(v: f64, max: f64) -> Result<f64> {
    let r = v.round();
    if !(0.0..=max).contains(&r) {
        return Err(Error::InvalidVolume(format!("value {v} does not fit an unsigned {max} range")));
    }
    Ok(r)
}

/// Reads `.mhd` or sidecar `.json` volumes, chosen by extension.
pub fn read_volume(path: &Path) -> Result<Volume> {
    if !path.exists() {
        return Err(Error::VolumeNotFound(path.to_path_buf()));
    }
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "json" => read_sidecar(path),
        _ => read_metaimage(path),
    }
}

fn read_payload(path: &Path, ty: ElementType, n: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::VolumeNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let expected = n * ty.size();
    if bytes.len() != expected {
        return Err(Error::InvalidVolume(format!(
            "{} holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(ty.decode(&bytes))
}

fn parse_numbers<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::MetaImage(format!("bad value for {key}: {value}"))))
        .collect()
}

fn triple<T: Copy>(key: &str, v: Vec<T>) -> Result<[T; 3]> {
    <[T; 3]>::try_from(v).map_err(|_| Error::MetaImage(format!("{key} must have 3 components")))
}

pub fn read_metaimage(path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::VolumeNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut fields = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::MetaImage(format!("malformed header line: {line}")))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |k: &str| fields.get(k).map(String::as_str);

    if let Some(nd) = get("NDims") {
        if nd != "3" {
            return Err(Error::MetaImage(format!("only 3D images are supported, NDims = {nd}")));
        }
    }
    for key in ["BinaryDataByteOrderMSB", "ElementByteOrderMSB"] {
        if get(key).is_some_and(|v| v.eq_ignore_ascii_case("true")) {
            return Err(Error::MetaImage("big-endian payloads are not supported".into()));
        }
    }
    if get("CompressedData").is_some_and(|v| v.eq_ignore_ascii_case("true")) {
        return Err(Error::MetaImage("compressed payloads are not supported".into()));
    }
    if get("ElementNumberOfChannels").is_some_and(|v| v != "1") {
        return Err(Error::MetaImage("multi-channel images are not supported".into()));
    }

    let dims = triple("DimSize", parse_numbers::<usize>("DimSize", get("DimSize").ok_or_else(|| {
        Error::MetaImage("missing DimSize".into())
    })?)?)?;
    let spacing = match get("ElementSpacing").or_else(|| get("ElementSize")) {
        Some(v) => triple("ElementSpacing", parse_numbers::<f64>("ElementSpacing", v)?)?,
        None => [1.0; 3],
    };
    let origin = match get("Offset").or_else(|| get("Origin")).or_else(|| get("Position")) {
        Some(v) => triple("Offset", parse_numbers::<f64>("Offset", v)?)?,
        None => [0.0; 3],
    };
    let ty = ElementType::from_met(get("ElementType").ok_or_else(|| Error::MetaImage("missing ElementType".into()))?)?;
    let data_file = get("ElementDataFile").ok_or_else(|| Error::MetaImage("missing ElementDataFile".into()))?;
    if data_file.eq_ignore_ascii_case("LOCAL") || data_file.contains('%') || data_file.eq_ignore_ascii_case("LIST") {
        return Err(Error::MetaImage(format!("ElementDataFile {data_file} is not supported")));
    }
    let unit = get("IntensityUnit").and_then(IntensityUnit::parse).unwrap_or_default();
    let payload = resolve(path, data_file);
    let data = read_payload(&payload, ty, dims.iter().product())?;
    Volume::new(dims, spacing, origin, data, unit)
}

fn resolve(header: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        header.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Writes `<stem>.mhd` and `<stem>.raw` next to each other.
pub fn write_metaimage(volume: &Volume, path: &Path, ty: ElementType) -> Result<()> {
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::param(format!("bad output path {}", path.display())))?
        .to_string();
    let [nx, ny, nz] = volume.dims();
    let [sx, sy, sz] = volume.spacing();
    let [ox, oy, oz] = volume.origin();
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         Offset = {ox} {oy} {oz}\n\
         ElementSpacing = {sx} {sy} {sz}\n\
         DimSize = {nx} {ny} {nz}\n\
         IntensityUnit = {}\n\
         ElementType = {}\n\
         ElementDataFile = {raw_name}\n",
        volume.unit().as_str(),
        ty.met_name()
    );
    let bytes = ty.encode(volume.data())?;
    fs::write(&raw_path, bytes)?;
    fs::write(path, header)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f64; 3],
    #[serde(default)]
    origin: [f64; 3],
    dtype: ElementType,
    data_file: String,
    #[serde(default)]
    intensity_unit: IntensityUnit,
}

pub fn read_sidecar(path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::VolumeNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    let payload = resolve(path, &meta.data_file);
    let data = read_payload(&payload, meta.dtype, meta.dims.iter().product())?;
    Volume::new(meta.dims, meta.spacing, meta.origin, data, meta.intensity_unit)
}

/// Writes `<stem>.json` describing a flat `<stem>.raw` payload.
pub fn write_sidecar(volume: &Volume, path: &Path, ty: ElementType) -> Result<()> {
    let raw_path = path.with_extension("raw");
    let meta = Sidecar {
        dims: volume.dims(),
        spacing: volume.spacing(),
        origin: volume.origin(),
        dtype: ty,
        data_file: raw_path.file_name().and_then(|n| n.to_str()).unwrap_or("volume.raw").to_string(),
        intensity_unit: volume.unit(),
    };
    fs::write(&raw_path, ty.encode(volume.data())?)?;
    fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
