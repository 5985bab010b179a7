//! RVOL binary volumes and dataset manifests.
//!
//! RVOL layout (little-endian):
//!
//! | field        | type          |
//! |--------------|---------------|
//! | magic        | `b"RVOL"`     |
//! | version      | u16 = 1       |
//! | num_classes  | u16           |
//! | dims         | u32 × 3       |
//! | spacing      | f32 × 3       |
//! | image        | f32 × voxels  |
//! | labels       | u16 × voxels  |
//!
//! A dataset is a directory of `.rvol` files plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Volume};

pub const MAGIC: &[u8; 4] = b"RVOL";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 12 + 12;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn encode_volume(volume: &Volume) -> Vec<u8> {
    let n = volume.voxels();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 6);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&volume.num_classes.to_le_bytes());
    for d in volume.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in volume.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for &x in &volume.image {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &l in &volume.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("bad magic".into()))? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let num_classes = r.u16()?;
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let spacing = [r.f32()?, r.f32()?, r.f32()?];
    if dims.contains(&0) {
        return Err(Error::ZeroSize(dims));
    }
    let n = voxel_count(dims);
    let image = r
        .take(n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = r
        .take(n * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after label payload",
            bytes.len() - r.pos
        )));
    }
    Volume::new(dims, spacing, num_classes, image, labels)
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(volume)).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: u16,
    pub files: Vec<String>,
}

/// Write volumes as `vol_000.rvol`, `vol_001.rvol`, ... plus a manifest.
pub fn save_dataset(volumes: &[Volume], dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let num_classes = volumes.first().map(|v| v.num_classes).unwrap_or(1);
    let mut files = Vec::with_capacity(volumes.len());
    for (i, v) in volumes.iter().enumerate() {
        if v.num_classes != num_classes {
            return Err(Error::Format(format!(
                "volume {i} has {} classes, dataset has {num_classes}",
                v.num_classes
            )));
        }
        let name = format!("vol_{i:03}.rvol");
        write_volume(v, dir.join(&name))?;
        files.push(name);
    }
    let manifest = Manifest { num_classes, files };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load every volume listed in `dir/manifest.json`, in manifest order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Volume>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    manifest
        .files
        .iter()
        .map(|f| {
            let v = read_volume(dir.join(f))?;
            if v.num_classes != manifest.num_classes {
                return Err(Error::Format(format!(
                    "{f}: {} classes, manifest declares {}",
                    v.num_classes, manifest.num_classes
                )));
            }
            Ok(v)
        })
        .collect()
}
