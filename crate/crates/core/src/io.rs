//! Field files, plot-ready text output and the output-directory lock.
//!
//! Binary layout, all little-endian: magic `THCH`, `u32` version, `u32` dim,
//! `u32` n, `f64` box length, then `n^dim` values of `f64` in row-major order
//! (last axis fastest).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const MAGIC: &[u8; 4] = b"THCH";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

/// Name of the sentinel file that marks an output directory as in use.
pub const LOCK_FILE: &str = ".thermoch.lock";

pub fn encode_field(f: &Field) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&g.box_len().to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<Field> {
    let bad = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing THCH magic".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (dim, n) = (u32_at(8) as usize, u32_at(12) as usize);
    let box_len = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let grid = GridSpec::new(dim, n, box_len).map_err(|e| bad(e.to_string()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.len() {
        return Err(bad(format!(
            "expected {} values for {grid}, found {} bytes of data",
            grid.len(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Field::new(grid, values).map_err(|e| bad(e.to_string()))
}

pub fn write_field(path: &Path, f: &Field) -> Result<()> {
    fs::write(path, encode_field(f)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `x value` columns along the first axis, other indices held at 0.
pub fn slice_1d(f: &Field) -> String {
    let g = f.grid();
    let mut out = String::from("# x value\n");
    for i in 0..g.n() {
        let idx = g.ravel(&[i, 0, 0][..g.dim()]);
        let _ = writeln!(out, "{:.10e} {:.16e}", i as f64 * g.spacing(), f.values()[idx]);
    }
    out
}

/// `x y value` rows of the plane through the first two axes, one blank line per `x`
/// as gnuplot `splot` expects.
pub fn plane_2d(f: &Field) -> String {
    let g = f.grid();
    let mut out = String::from("# x y value\n");
    for i in 0..g.n() {
        for j in 0..g.n() {
            let idx = g.ravel(&[i, j, 0][..g.dim()]);
            let _ = writeln!(
                out,
                "{:.10e} {:.10e} {:.16e}",
                i as f64 * g.spacing(),
                j as f64 * g.spacing(),
                f.values()[idx]
            );
        }
        out.push('\n');
    }
    out
}

/// Writes `<stem>.bin`, `<stem>_x.dat` and, for `d ≥ 2`, `<stem>_xy.dat`.
pub fn write_snapshot(dir: &Path, stem: &str, f: &Field) -> Result<()> {
    write_field(&dir.join(format!("{stem}.bin")), f)?;
    write_text(&dir.join(format!("{stem}_x.dat")), &slice_1d(f))?;
    if f.grid().dim() >= 2 {
        write_text(&dir.join(format!("{stem}_xy.dat")), &plane_2d(f))?;
    }
    Ok(())
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    /// Creates `dir` if needed and the sentinel inside it; fails if the sentinel exists.
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut file = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::io(
                        &path,
                        std::io::Error::new(e.kind(), "output directory is locked by another run; remove the file if stale"),
                    )
                } else {
                    Error::io(&path, e)
                }
            })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
