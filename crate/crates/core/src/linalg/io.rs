use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Matrix;
use crate::{Error, Result, Scalar};

/// Writes plain comma-separated rows without a header. Values use the
/// shortest representation that parses back to the same float.
pub fn write_matrix_csv<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(m, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_rows<T: Scalar, W: Write>(m: &Matrix<T>, out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()
}

pub fn read_matrix_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(BufReader::new(file), path)
}

pub(crate) fn read_rows<T: Scalar, R: Read>(input: R, path: &Path) -> Result<Matrix<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(rows as u64 + 1, |p| p.line());
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(parse_err(format!("{} fields, expected {c}", rec.len())));
            }
            _ => {}
        }
        for cell in rec.iter() {
            let v: T = cell.trim().parse().map_err(|_| parse_err(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse { path: path.to_path_buf(), line: 0, msg: "empty file".into() })?;
    Matrix::from_vec(rows, cols, data)
}
