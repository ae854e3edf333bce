//! Parameter checkpoints: a 16-byte header (`DWPV` magic, `u32` version,
//! `u64` length, all little-endian) followed by little-endian `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use super::ParamVector;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DWPV";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ParamVector) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 8 * params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!(
            "header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != len * 8 {
        return Err(Error::Checkpoint(format!(
            "header declares {len} values but body has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ParamVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        write_checkpoint(&path, &vec![1.5, -2.0].into()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DWPV");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        write_checkpoint(&path, &vec![1.0; 3].into()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_checkpoint(&path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(proptest::num::f64::ANY, 0..64)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.bin");
            write_checkpoint(&path, &ParamVector(values.clone())).unwrap();
            let back = read_checkpoint(&path).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&values));
        }
    }
}
