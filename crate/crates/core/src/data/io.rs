// Matrix and label files.
//
// Binary layout, all little-endian:
//   "SEMX" | version u32 (=1) | rows u64 | cols u64 | dtype u8 | payload
// dtype 1 is f64 in column-major order, dtype 2 is u32 (labels, one column).
// Paths ending in `.csv` are read and written as plain CSV instead.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"SEMX";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_U32: u8 = 2;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1;

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn encode_header(rows: usize, cols: usize, dtype: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.push(dtype);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

// Returns (rows, cols, dtype, payload start).
fn decode_header(bytes: &[u8]) -> Result<(usize, usize, u8, Cursor<'_>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MATRIX_MAGIC {
        return Err(Error::format(0, "bad magic, expected SEMX"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let rows = cur.u64("rows")?;
    let cols = cur.u64("cols")?;
    let dtype = cur.take(1, "dtype")?[0];
    let (rows, cols) = match (usize::try_from(rows), usize::try_from(cols)) {
        (Ok(r), Ok(c)) if r.checked_mul(c).is_some() => (r, c),
        _ => return Err(Error::format(8, "matrix dimensions overflow")),
    };
    Ok((rows, cols, dtype, cur))
}

fn check_trailing(cur: &Cursor<'_>) -> Result<()> {
    if cur.pos != cur.bytes.len() {
        return Err(Error::format(cur.pos as u64, "trailing bytes after payload"));
    }
    Ok(())
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        let mut out = String::new();
        for i in 0..m.rows() {
            let row: Vec<String> = (0..m.cols()).map(|j| format!("{}", m.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(path, out)?;
    } else {
        let mut out = encode_header(m.rows(), m.cols(), DTYPE_F64);
        out.reserve(m.data().len() * 8);
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out)?;
    }
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if is_csv(path) {
        return parse_csv_matrix(&bytes);
    }
    let (rows, cols, dtype, mut cur) = decode_header(&bytes)?;
    if dtype != DTYPE_F64 {
        return Err(Error::format(
            (HEADER_LEN - 1) as u64,
            format!("expected f64 payload (dtype 1), found dtype {dtype}"),
        ));
    }
    let n = rows * cols;
    let payload = cur.take(n.saturating_mul(8), "payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_trailing(&cur)?;
    DenseMatrix::new(rows, cols, data)
}

fn parse_csv_matrix(bytes: &[u8]) -> Result<DenseMatrix> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(e.valid_up_to() as u64, "invalid UTF-8"))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if !content.trim().is_empty() {
            let mut field_off = offset;
            let mut row = Vec::new();
            for field in content.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format(field_off as u64, format!("not a number: {field:?}"))
                })?;
                row.push(v);
                field_off += field.len() + 1;
            }
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::format(
                        offset as u64,
                        format!("expected {} fields, found {}", first.len(), row.len()),
                    ));
                }
            }
            rows.push(row);
        }
        offset += line.len();
    }
    DenseMatrix::from_rows(&rows)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        let mut out = String::with_capacity(labels.len() * 3);
        for l in labels {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        fs::write(path, out)?;
    } else {
        let mut out = encode_header(labels.len(), 1, DTYPE_U32);
        for &l in labels {
            let v = u32::try_from(l).map_err(|_| Error::spec(format!("label {l} exceeds u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out)?;
    }
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if is_csv(path) {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::format(e.valid_up_to() as u64, "invalid UTF-8"))?;
        let mut labels = Vec::new();
        let mut offset = 0usize;
        for line in text.split_inclusive('\n') {
            let t = line.trim();
            if !t.is_empty() {
                let v: usize = t.parse().map_err(|_| {
                    Error::format(offset as u64, format!("not a non-negative integer: {t:?}"))
                })?;
                labels.push(v);
            }
            offset += line.len();
        }
        return Ok(labels);
    }
    let (rows, cols, dtype, mut cur) = decode_header(&bytes)?;
    if dtype != DTYPE_U32 || cols != 1 {
        return Err(Error::format(
            16,
            format!("expected a u32 label column, found dtype {dtype} with {cols} columns"),
        ));
    }
    let payload = cur.take(rows.saturating_mul(4), "labels")?;
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    check_trailing(&cur)?;
    Ok(labels)
}
