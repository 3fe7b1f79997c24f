//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"ADCKPT\0\0"
//! version  u32      currently 1
//! count    u32      number of arrays
//! entry*   u32 name_len | name bytes | u32 ndim | u64 dim* | u64 offset | u64 elems
//! payload  f64 arrays, offsets relative to payload start
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AdError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ADCKPT\0\0";
const VERSION: u32 = 1;

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        w.write_all(&(p.value.len() as u64).to_le_bytes())?;
        offset += p.value.len() as u64;
    }
    for p in params.iter() {
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AdError::CheckpointFormat("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(AdError::CheckpointFormat(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(AdError::CheckpointFormat("unreasonable name length".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| AdError::CheckpointFormat("name is not utf-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let offset = read_u64(&mut r)?;
        let elems = read_u64(&mut r)? as usize;
        if shape.iter().product::<usize>() != elems {
            return Err(AdError::CheckpointFormat(format!(
                "entry `{name}`: shape {shape:?} does not hold {elems} elements"
            )));
        }
        manifest.push((name, shape, offset, elems));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut params = ParamSet::new();
    for (name, shape, offset, elems) in manifest {
        let start = offset as usize * 8;
        let end = start + elems * 8;
        if end > payload.len() {
            return Err(AdError::CheckpointFormat(format!(
                "entry `{name}` extends past payload"
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.insert(
            &name,
            Tensor::new(shape, data).map_err(|e| AdError::CheckpointFormat(e.to_string()))?,
        );
    }
    Ok(params)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params = ParamSet::new();
        params.insert("layer.w", Tensor::new(vec![2, 3], vec![1., -2., 3., 4., 5.5, -6.]).unwrap());
        params.insert("layer.b", Tensor::from_vec(vec![0.25, -0.75, 1e-300]));
        save(&params, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in params.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT________").unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, AdError::CheckpointFormat(_)));
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let mut params = ParamSet::new();
        params.insert("w", Tensor::from_vec(vec![std::f64::consts::PI, -0.0, 7.25]));
        save(&params, &a).unwrap();
        save(&params, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
