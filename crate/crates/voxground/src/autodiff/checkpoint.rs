//! Binary checkpoint format for parameter stores.
//!
//! Layout: header (8-byte magic, u32 version, u64 tensor count) followed by
//! one record per tensor: u32 name length, utf-8 name, u8 dtype tag,
//! u32 rank, u64 dims, then raw little-endian values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::store::ParamStore;

const MAGIC: &[u8; 8] = b"VXGCKPT\0";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for tensor in store.iter() {
        let name = tensor.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[DTYPE_F64])?;
        let (rows, cols) = tensor.values.shape();
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(rows as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for v in tensor.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut r = BufReader::new(File::open(path)?);
    let magic: [u8; 8] = read_exact(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(read_exact(&mut r)?);
    let mut store = ParamStore::new(0);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Parse("tensor name is not utf-8".into()))?;
        let dtype = read_exact::<1>(&mut r)?[0];
        if dtype != DTYPE_F64 {
            return Err(Error::Parse(format!("unsupported dtype tag {dtype}")));
        }
        let rank = u32::from_le_bytes(read_exact(&mut r)?);
        if rank != 2 {
            return Err(Error::Parse(format!("unsupported tensor rank {rank}")));
        }
        let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        store.insert(&name, Matrix::from_vec(rows, cols, data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut store = ParamStore::new(42);
        store.init_uniform("a.w", 5, 7, 7);
        store.init_uniform("b.bias", 1, 3, 3);
        store.insert("odd", Matrix::from_vec(1, 3, vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();

        assert_eq!(loaded.len(), store.len());
        for t in store.iter() {
            let l = loaded.get(&t.name).unwrap();
            assert_eq!(l.values.shape(), t.values.shape());
            for (a, b) in l.values.data().iter().zip(t.values.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "tensor {}", t.name);
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse(_))));
    }
}
