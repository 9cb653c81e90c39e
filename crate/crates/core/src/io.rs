//! File formats: the `DSR1` tensor container, 16-bit PGM previews and
//! `key = value` manifests.
//!
//! A `DSR1` file is the magic bytes followed by zero or more records. Each
//! record is a little-endian `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` `u64` extents and then the `f64` values in row-major order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DSR1";

pub fn write_dsr(w: &mut impl Write, entries: &[(&str, &Tensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        filled += n;
    }
    Ok(true)
}

pub fn read_dsr(r: &mut impl Read, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("missing DSR1 magic"));
    }
    let mut out = Vec::new();
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    while read_exact_or_eof(r, &mut u32buf)? {
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        let t = Tensor::new(shape, data).map_err(|e| bad(&format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_dsr(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dsr(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_dsr(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    read_dsr(&mut r, path)
}

/// Loads the single tensor stored in `path`.
pub fn load_single(path: &Path) -> Result<Tensor> {
    let mut entries = load_dsr(path)?;
    if entries.len() != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected one tensor, found {}", entries.len()),
        });
    }
    Ok(entries.remove(0).1)
}

/// Writes a binary 16-bit PGM, mapping `[lo, hi]` linearly to `[0, 65535]`.
pub fn write_pgm16(path: &Path, data: &[f64], height: usize, width: usize, lo: f64, hi: f64) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::invalid("pgm: data length does not match extents"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    for &v in data {
        let q = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        w.write_all(&q.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `key = value` lines in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `key = value` lines; blank lines and `#` comments are ignored.
pub fn parse_manifest(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: expected `key = value`", lineno + 1),
        })?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("duplicate key {}", k.trim()),
            });
        }
    }
    Ok(map)
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path)
}

/// Fetches and parses a required manifest value.
pub fn manifest_value<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    let raw = map.get(key).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: format!("missing key {key}"),
    })?;
    raw.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        reason: format!("bad value for {key}: {raw}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dsr_round_trip(
            name in "[a-z._0-9]{1,12}",
            dims in proptest::collection::vec(1usize..4, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) % 0x7fe0_0000_0000_0000))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write_dsr(&mut buf, &[(&name, &t)]).unwrap();
            let back = read_dsr(&mut buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(t.shape(), back[0].1.shape());
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_dsr(&mut &b"DSR2"[..], Path::new("x")).is_err());
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_dsr(&mut buf, &[("a", &t)]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_dsr(&mut buf.as_slice(), Path::new("x")).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("side = 64\n# c\n\ncount=3\n", Path::new("m")).unwrap();
        assert_eq!(m["side"], "64");
        let c: usize = manifest_value(&m, "count", Path::new("m")).unwrap();
        assert_eq!(c, 3);
        assert!(parse_manifest("a = 1\na = 2", Path::new("m")).is_err());
        assert!(parse_manifest("novalue", Path::new("m")).is_err());
    }
}
