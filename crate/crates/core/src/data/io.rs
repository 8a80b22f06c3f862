use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Leading bytes of the binary feature format.
pub const FEATURE_MAGIC: &[u8; 4] = b"CAJF";
const HEADER_LEN: usize = 12;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a feature matrix. Files starting with `CAJF` are decoded as binary;
/// `.csv` files are parsed as comma-separated text with an optional header.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_binary(path, &bytes)
    } else if is_csv(path) {
        parse_csv(path, &bytes)
    } else {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        Err(format_err(path, format!("bad magic {magic:?}, expected \"CAJF\"")))
    }
}

fn decode_binary(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(format_err(path, format!("empty matrix {rows}x{cols}")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(path, "declared shape overflows"))?;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("{rows}x{cols} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            // a non-numeric first line is the header
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line + 1,
                    detail: e.to_string(),
                })
            }
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line + 1,
                    detail: format!("expected {c} fields, found {}", values.len()),
                })
            }
            _ => {}
        }
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: rows, col });
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| format_err(path, "no data rows"))?;
    Matrix::new(rows, cols, data)
}

/// Writes `m` as CSV when `path` ends in `.csv`, otherwise in the binary format.
pub fn save_feature_file(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid(format!(
            "refusing to save empty {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::invalid("refusing to save non-finite matrix"));
    }
    if is_csv(path) {
        let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
        let header: Vec<String> = (0..m.cols()).map(|c| format!("f{c}")).collect();
        w.write_record(&header).map_err(|e| format_err(path, e.to_string()))?;
        for r in m.iter_rows() {
            // `Display` for f64 prints the shortest string that parses back exactly
            w.write_record(r.iter().map(|v| v.to_string()))
                .map_err(|e| format_err(path, e.to_string()))?;
        }
        w.flush().map_err(io_err(path))?;
        return Ok(());
    }
    let rows = u32::try_from(m.rows()).map_err(|_| Error::invalid("too many rows"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::invalid("too many columns"))?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(FEATURE_MAGIC).map_err(io_err(path))?;
    w.write_all(&rows.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&cols.to_le_bytes()).map_err(io_err(path))?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one base-10 label per line, validated against `[0, num_classes)`.
/// Blank lines are ignored.
pub fn load_labels(path: impl AsRef<Path>, num_classes: usize) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: usize = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("`{line}` is not a non-negative integer"),
        })?;
        if value >= num_classes {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("label {value} outside [0, {num_classes})"),
            });
        }
        out.push(value);
    }
    Ok(out)
}

pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}
