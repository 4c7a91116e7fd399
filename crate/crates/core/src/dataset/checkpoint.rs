use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WGS1";

/// Binary tensor directory: magic, tensor count, then per tensor the name
/// (u32 length + bytes), rank (u32), extents (u64 each) and the f64 payload.
/// Everything is little-endian and written in registration order, so two
/// identical stores serialize to identical bytes.
pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let werr = |e: std::io::Error| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(werr)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(werr)?;
    for name in store.names() {
        let p = store.get(name);
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(nb).map_err(werr)?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes()).map_err(werr)?;
        for &e in &p.shape {
            w.write_all(&(e as u64).to_le_bytes()).map_err(werr)?;
        }
        for &v in &p.values {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    w.flush().map_err(werr)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let rerr = |e: std::io::Error| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(rerr)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, format!("bad checkpoint magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).map_err(rerr)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(rerr)?;
        let nlen = u32::from_le_bytes(u32buf) as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf).map_err(rerr)?;
        let name = String::from_utf8(nbuf).map_err(|_| Error::parse(path, "tensor name is not utf-8"))?;
        r.read_exact(&mut u32buf).map_err(rerr)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf).map_err(rerr)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut u64buf).map_err(rerr)?;
            values.push(f64::from_le_bytes(u64buf));
        }
        store.register(&name, &shape, values);
    }
    Ok(store)
}
