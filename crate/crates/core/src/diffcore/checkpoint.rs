//! Flat binary parameter files.
//!
//! Layout: `b"FLNS"`, version `u32`, parameter count `u64`, then that many
//! little-endian `f64` values in slice order. A sidecar text manifest lists
//! one `slice <name> <offset> <rows> <cols>` line per named block.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::params::{ParamSlice, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLNS";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(w: &mut W, store: &ParamStore) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for v in store.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the header and values; the layout comes from the manifest.
pub fn read_values<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let fmt = |e: std::io::Error| Error::Format(format!("truncated parameter block: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(fmt)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(fmt)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8).map_err(fmt)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok(values)
}

pub fn manifest_lines(store: &ParamStore) -> Vec<String> {
    store
        .slices()
        .iter()
        .map(|s| format!("slice {} {} {} {}", s.name, s.offset, s.rows, s.cols))
        .collect()
}

/// Parses every `slice ...` line, ignoring other lines.
pub fn parse_manifest_slices(text: &str) -> Result<Vec<ParamSlice>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&"slice") {
            continue;
        }
        if parts.len() != 5 {
            return Err(Error::Format(format!("bad manifest line `{line}`")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad number `{s}` in `{line}`")))
        };
        out.push(ParamSlice {
            name: parts[1].to_string(),
            offset: num(parts[2])?,
            rows: num(parts[3])?,
            cols: num(parts[4])?,
        });
    }
    Ok(out)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Writes `path` and `path.manifest`.
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_params(&mut f, store).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let mut text = manifest_lines(store).join("\n");
    text.push('\n');
    std::fs::write(&mpath, text).map_err(|e| Error::io(mpath, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let values = read_values(&mut f)?;
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(mpath, e))?;
    ParamStore::from_parts(parse_manifest_slices(&text)?, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut p = ParamStore::new();
        let id = p.add("w", 1, 2);
        p.slice_values_mut(id).copy_from_slice(&[1.5, -2.0]);
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"FLNS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 16 + 16);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamStore::new();
        let a = p.add("net.l0.w", 2, 3);
        p.add("net.l0.b", 1, 3);
        p.slice_values_mut(a).iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let path = dir.path().join("ck.bin");
        save(&p, &path).unwrap();
        let q = load(&path).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(p.slices(), q.slices());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(matches!(read_values(&mut bytes.as_slice()), Err(Error::Format(_))));
    }
}
