//! Dense matrix files and atomic output.
//!
//! The binary layout is a 16-byte header (`MADMMAT1`, rows as `u32`, cols
//! as `u32`) followed by `rows * cols` row-major `f64` values. Every
//! number is little-endian.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

pub const MAGIC: &[u8; 8] = b"MADMMAT1";

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn encode_bin(m: &Array2<f64>) -> Result<Vec<u8>> {
    let (r, c) = m.dim();
    let (r32, c32) = (u32::try_from(r).context("too many rows")?, u32::try_from(c).context("too many columns")?);
    let mut out = Vec::with_capacity(16 + 8 * r * c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&r32.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bin(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        bail!("not a matrix file: bad header");
    }
    let r = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 8 * r * c {
        bail!("matrix file declares {r}x{c} but holds {} bytes of data", body.len());
    }
    let data = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(Array2::from_shape_vec((r, c), data)?)
}

/// Comma-separated rows. Values use Rust's shortest round-trip formatting,
/// which never depends on locale.
pub fn encode_csv(m: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn decode_csv(text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().with_context(|| format!("line {}: bad number `{}`", i + 1, t.trim())))
            .collect::<Result<Vec<_>>>()?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => bail!("line {}: expected {c} values, found {}", i + 1, vals.len()),
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)?)
}

/// Reads `.csv` or `.bin` by extension.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let m = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => decode_csv(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?),
        Some("bin") => decode_bin(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?),
        _ => bail!("{}: expected a .csv or .bin matrix file", path.display()),
    };
    m.with_context(|| format!("parsing {}", path.display()))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => atomic_write(path, encode_csv(m).as_bytes()),
        Some("bin") => atomic_write(path, &encode_bin(m)?),
        _ => bail!("{}: expected a .csv or .bin matrix file", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrices() -> impl Strategy<Value = Array2<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(m in matrices()) {
            prop_assert_eq!(&decode_bin(&encode_bin(&m).unwrap()).unwrap(), &m);
            prop_assert_eq!(&decode_csv(&encode_csv(&m)).unwrap(), &m);
        }
    }

    #[test]
    fn header_is_sixteen_little_endian_bytes() {
        let m = Array2::from_shape_vec((1, 2), vec![1.0, -2.0]).unwrap();
        let b = encode_bin(&m).unwrap();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(&b[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode_bin(b"MADMMAT1\x01\x00\x00\x00\x01\x00\x00\x00").is_err());
        assert!(decode_bin(b"short").is_err());
        assert!(decode_csv("1,2\n3\n").is_err());
        assert!(decode_csv("1,x\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_matrix(&p, &Array2::zeros((2, 2))).unwrap();
        write_matrix(&p, &Array2::ones((1, 3))).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), Array2::<f64>::ones((1, 3)));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
