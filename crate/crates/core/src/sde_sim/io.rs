//! Path files.
//!
//! **CSV**: header `t,x1,..,xp` followed, when latents are present, by
//! `f1,..,fk,e1,..,ep`. One row per grid point, `\n` line endings, values in
//! Rust's shortest round-trip `f64` formatting.
//!
//! **Binary** (all integers and floats little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `b"HFSP"`                        |
//! | 4      | 4    | format version, `u32` = 1              |
//! | 8      | 8    | row count `n+1`, `u64`                 |
//! | 16     | 4    | `p`, `u32`                             |
//! | 20     | 4    | `k`, `u32` (0 without latents)         |
//! | 24     | 4    | flags, `u32`; bit 0 = latents present  |
//! | 28     | 4    | reserved, `u32` = 0                    |
//! | 32     | ...  | rows of `f64`: `t, x1..xp[, f1..fk, e1..ep]` |

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::SamplePath;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HFSP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

/// On-disk path format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathFormat {
    Csv,
    Binary,
}

impl PathFormat {
    /// `.bin` and `.hfsp` select the binary container; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("hfsp") => PathFormat::Binary,
            _ => PathFormat::Csv,
        }
    }
}

fn row_values(path: &SamplePath, i: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + path.x.ncols() * 2);
    row.push(path.times[i]);
    row.extend(path.x.row(i).iter());
    if let (Some(f), Some(e)) = (&path.f, &path.e) {
        row.extend(f.row(i).iter());
        row.extend(e.row(i).iter());
    }
    row
}

fn header(path: &SamplePath) -> Vec<String> {
    let p = path.p();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=p).map(|i| format!("x{i}")));
    if let (Some(f), Some(_)) = (&path.f, &path.e) {
        cols.extend((1..=f.ncols()).map(|i| format!("f{i}")));
        cols.extend((1..=p).map(|i| format!("e{i}")));
    }
    cols
}

pub fn write_csv<W: Write>(path: &SamplePath, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header(path)).map_err(csv_err)?;
    for i in 0..path.x.nrows() {
        w.write_record(row_values(path, i).iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn read_csv<R: Read>(input: R) -> Result<SamplePath> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let cols: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if cols.first().map(String::as_str) != Some("t") {
        return Err(Error::Format("first column must be `t`".into()));
    }
    let p = cols.iter().filter(|c| c.starts_with('x')).count();
    let k = cols.iter().filter(|c| c.starts_with('f')).count();
    let has_latents = k > 0;
    let expected = 1 + p + if has_latents { k + p } else { 0 };
    if p == 0 || cols.len() != expected {
        return Err(Error::Format(format!("unexpected header {cols:?}")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
        if vals.len() != expected {
            return Err(Error::Format(format!(
                "row {}: expected {expected} fields",
                line + 2
            )));
        }
        rows.push(vals);
    }
    assemble(rows, p, if has_latents { Some(k) } else { None })
}

fn assemble(rows: Vec<Vec<f64>>, p: usize, k: Option<usize>) -> Result<SamplePath> {
    let nrows = rows.len();
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let x = DMatrix::from_fn(nrows, p, |i, j| rows[i][1 + j]);
    let (f, e) = match k {
        Some(k) => (
            Some(DMatrix::from_fn(nrows, k, |i, j| rows[i][1 + p + j])),
            Some(DMatrix::from_fn(nrows, p, |i, j| rows[i][1 + p + k + j])),
        ),
        None => (None, None),
    };
    let path = SamplePath { times, x, f, e };
    check_grid(&path)?;
    Ok(path)
}

/// Rejects non-uniform grids.
fn check_grid(path: &SamplePath) -> Result<()> {
    if path.times.len() < 2 {
        return Ok(());
    }
    let h = path.h();
    if !(h > 0.0) {
        return Err(Error::Format("time column must be increasing".into()));
    }
    for (i, w) in path.times.windows(2).enumerate() {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h + 16.0 * f64::EPSILON * w[1].abs() {
            return Err(Error::Format(format!("non-uniform grid at row {}", i + 2)));
        }
    }
    Ok(())
}

pub fn write_binary<W: Write>(path: &SamplePath, mut out: W) -> Result<()> {
    let k = path.f.as_ref().map_or(0, |f| f.ncols());
    let latents = path.f.is_some() && path.e.is_some();
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(path.x.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(path.p() as u32).to_le_bytes());
    buf.extend_from_slice(&(if latents { k as u32 } else { 0 }).to_le_bytes());
    buf.extend_from_slice(&(latents as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    out.write_all(&buf)?;
    for i in 0..path.x.nrows() {
        for v in row_values(path, i) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<SamplePath> {
    let mut head = [0u8; HEADER_LEN];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let nrows = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let p = u32_at(16) as usize;
    let k = u32_at(20) as usize;
    let latents = u32_at(24) & 1 == 1;
    let width = 1 + p + if latents { k + p } else { 0 };
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    if data.len() != nrows * width * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            data.len(),
            nrows * width * 8
        )));
    }
    let rows: Vec<Vec<f64>> = data
        .chunks_exact(width * 8)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    assemble(rows, p, latents.then_some(k))
}

pub fn save(path: &SamplePath, file: &Path) -> Result<()> {
    let out = std::io::BufWriter::new(std::fs::File::create(file)?);
    match PathFormat::from_path(file) {
        PathFormat::Csv => write_csv(path, out),
        PathFormat::Binary => write_binary(path, out),
    }
}

pub fn load(file: &Path) -> Result<SamplePath> {
    let input = std::io::BufReader::new(std::fs::File::open(file)?);
    match PathFormat::from_path(file) {
        PathFormat::Csv => read_csv(input),
        PathFormat::Binary => read_binary(input),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Regime;
    use crate::sde_sim::{fixtures::reference_config, simulate};

    fn sample(latents: bool) -> SamplePath {
        let mut cfg = reference_config(25, 0.01, Regime::Ergodic, 4);
        cfg.keep_latents = latents;
        simulate(&cfg).unwrap()
    }

    #[test]
    fn csv_round_trip_with_and_without_latents() {
        for latents in [false, true] {
            let path = sample(latents);
            let mut buf = Vec::new();
            write_csv(&path, &mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            let head = text.lines().next().unwrap();
            if latents {
                assert_eq!(head, "t,x1,x2,x3,x4,x5,x6,f1,f2,e1,e2,e3,e4,e5,e6");
            } else {
                assert_eq!(head, "t,x1,x2,x3,x4,x5,x6");
            }
            assert_eq!(text.lines().count(), 27);
            assert_eq!(read_csv(&buf[..]).unwrap(), path);
        }
    }

    #[test]
    fn binary_layout_and_round_trip() {
        let path = sample(true);
        let mut buf = Vec::new();
        write_binary(&path, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"HFSP");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 26);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 32 + 26 * 15 * 8);
        let t1 = f64::from_le_bytes(buf[32 + 15 * 8..32 + 15 * 8 + 8].try_into().unwrap());
        assert_eq!(t1, 0.01);
        assert_eq!(read_binary(&buf[..]).unwrap(), path);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(read_csv("x1,x2\n1,2\n".as_bytes()).is_err());
        assert!(read_csv("t,x1\n0,1\n0.1,abc\n".as_bytes()).is_err());
        assert!(read_csv("t,x1\n0,1\n0.1,2\n0.3,3\n".as_bytes()).is_err());
        assert!(read_binary(&b"NOPE"[..]).is_err());
    }
}
