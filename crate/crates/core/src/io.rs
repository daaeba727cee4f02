//! Dense matrix persistence.
//!
//! Text format: a `rows cols` header line, then one whitespace-separated row
//! per line, every value printed with full round-trip precision.
//!
//! Binary format: the 8-byte magic `LAEMAT01`, `rows` and `cols` as
//! little-endian `u64`, then `rows·cols` little-endian `f64` values in
//! row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"LAEMAT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Text,
    Binary,
}

impl MatrixFormat {
    /// `.bin` selects binary; everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => MatrixFormat::Binary,
            _ => MatrixFormat::Text,
        }
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        MatrixFormat::Text => {
            writeln!(w, "{} {}", m.nrows(), m.ncols()).map_err(io)?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
                writeln!(w, "{}", row.join(" ")).map_err(io)?;
            }
        }
        MatrixFormat::Binary => {
            w.write_all(BINARY_MAGIC).map_err(io)?;
            w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io)?;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_all(&m[(i, j)].to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

/// Read either format, detected from the leading bytes.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    let got = read_up_to(&mut file, &mut head).map_err(|e| Error::io(path, e))?;
    drop(file);
    if got == 8 && &head == BINARY_MAGIC {
        read_binary(path)
    } else {
        read_text(path)
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn read_text(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header =
        lines.next().ok_or_else(|| parse_error(path, 1, "missing shape header"))?.map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let [rows, cols] = dims[..] else {
        return Err(parse_error(path, 1, format!("bad shape header {header:?}")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let lineno = i as u64 + 2;
        let line =
            lines.next().ok_or_else(|| parse_error(path, lineno, "missing row"))?.map_err(|e| Error::io(path, e))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| parse_error(path, lineno, format!("bad value {tok:?}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(parse_error(path, lineno, format!("expected {cols} values, got {}", data.len() - before)));
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn read_binary(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf8 = [0u8; 8];
    let mut read8 = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
        r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
        Ok(buf8)
    };
    read8(&mut r)?;
    let rows = u64::from_le_bytes(read8(&mut r)?) as usize;
    let cols = u64::from_le_bytes(read8(&mut r)?) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(f64::from_le_bytes(read8(&mut r)?));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
