//! Parameter checkpoints.
//!
//! Layout (little-endian): `SEGN`, u32 version, u32 pools x3, u32 base
//! channels, u16 classes, u64 seed, u64 parameter count, then the f64
//! parameters.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{SegNet, SegNetConfig};

const MAGIC: &[u8; 4] = b"SEGN";
const VERSION: u32 = 1;

pub fn encode(net: &SegNet) -> Vec<u8> {
    let c = &net.config;
    let mut out = Vec::with_capacity(42 + 8 * net.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in c.pools_per_axis {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&(c.base_channels as u32).to_le_bytes());
    out.extend_from_slice(&c.num_classes.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<SegNet> {
    let mut r = Reader { bytes };
    if &r.take::<4>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let pools_per_axis = [r.u32()?, r.u32()?, r.u32()?];
    let base_channels = r.u32()? as usize;
    let num_classes = u16::from_le_bytes(r.take()?);
    let seed = r.u64()?;
    let count = r.u64()? as usize;
    if r.bytes.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "{} payload bytes for {count} parameters",
            r.bytes.len()
        )));
    }
    let params = r.bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let config = SegNetConfig {
        pools_per_axis,
        base_channels,
        num_classes,
        seed,
    };
    SegNet::with_params(config, params)
}

pub fn save(net: &SegNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<SegNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> SegNet {
        SegNet::new(SegNetConfig {
            pools_per_axis: [1, 0, 1],
            base_channels: 2,
            num_classes: 2,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let n = net();
        let back = decode(&encode(&n)).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn header_bytes() {
        let bytes = encode(&net());
        assert_eq!(&bytes[..4], b"SEGN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &[2, 0, 0, 0]);
        assert_eq!(&bytes[24..26], &[2, 0]);
        assert_eq!(bytes.len(), 42 + 8 * net().num_params());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&net());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut wrong_count = bytes;
        wrong_count[34] += 1;
        assert!(decode(&wrong_count).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.segn");
        save(&net(), &path).unwrap();
        assert_eq!(load(&path).unwrap(), net());
    }
}
