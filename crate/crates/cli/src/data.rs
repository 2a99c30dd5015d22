//! Dataset ingestion (CSV and IDX) and numeric CSV emission.
//!
//! CSV numbers are written with 17 significant digits so a round trip
//! through an emitted file reproduces every f64 exactly.

use gptape::adgraph::Value;
use gptape::error::{Error, Result};
use gptape::models::Dataset;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    IntegerClass,
}

#[derive(Debug, Clone)]
pub struct DatasetTable {
    pub x: Value,
    pub y: Value,
    pub label_kind: LabelKind,
}

impl DatasetTable {
    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::new(self.x, self.y)
    }
}

fn classify_labels(y: &Value) -> LabelKind {
    if y.data().iter().all(|v| v.fract() == 0.0 && *v >= 0.0) {
        LabelKind::IntegerClass
    } else {
        LabelKind::Real
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LabelColumn {
    Last,
    Index(usize),
}

/// Parses a rectangular numeric CSV, extracting one column as the target.
/// Rows keep their file order; errors carry 1-based line numbers.
pub fn load_csv(path: &Path, label: LabelColumn, header: bool) -> Result<DatasetTable> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}: non-numeric cell {:?}",
                    path.display(),
                    lineno + 1,
                    cell.trim()
                ))
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Data(format!(
                    "{}: line {}: ragged row has {} cells, expected {w}",
                    path.display(),
                    lineno + 1,
                    row.len()
                )));
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    if width < 2 {
        return Err(Error::Data(format!(
            "{}: need at least one feature column plus the label",
            path.display()
        )));
    }
    let label_idx = match label {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if i < width => i,
        LabelColumn::Index(i) => {
            return Err(Error::Data(format!(
                "{}: label column {i} out of range for width {width}",
                path.display()
            )));
        }
    };
    let n = rows.len();
    let mut x = Value::zeros(n, width - 1);
    let mut y = Value::zeros(n, 1);
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == label_idx {
                y[(i, 0)] = v;
            } else {
                x[(i, k)] = v;
                k += 1;
            }
        }
    }
    let label_kind = classify_labels(&y);
    Ok(DatasetTable { x, y, label_kind })
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{what}: truncated header")))
}

/// Big-endian IDX pair: images scaled to [0,1] and flattened row-major,
/// labels as a class column.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetTable> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let magic = read_u32_be(&images, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&images, 4, "images")? as usize;
    let rows = read_u32_be(&images, 8, "images")? as usize;
    let cols = read_u32_be(&images, 12, "images")? as usize;
    let pixels = count * rows * cols;
    if images.len() < 16 + pixels {
        return Err(Error::Data(format!(
            "{}: expected {pixels} pixel bytes, file holds {}",
            images_path.display(),
            images.len() - 16
        )));
    }

    let lmagic = read_u32_be(&labels, 0, "labels")?;
    if lmagic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {lmagic:#010x}, expected {LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let lcount = read_u32_be(&labels, 4, "labels")? as usize;
    if lcount != count {
        return Err(Error::Data(format!(
            "image count {count} does not match label count {lcount}"
        )));
    }
    if labels.len() < 8 + lcount {
        return Err(Error::Data(format!(
            "{}: truncated label payload",
            labels_path.display()
        )));
    }

    let d = rows * cols;
    let mut x = Value::zeros(count, d);
    for i in 0..count {
        for j in 0..d {
            x[(i, j)] = images[16 + i * d + j] as f64 / 255.0;
        }
    }
    let y = Value::from_fn(count, 1, |i, _| labels[8 + i] as f64);
    Ok(DatasetTable {
        x,
        y,
        label_kind: LabelKind::IntegerClass,
    })
}

/// 17-significant-digit scientific form, losslessly re-parseable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    #[test]
    fn csv_with_header_and_trailing_label() {
        let f = write_tmp(b"a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let t = load_csv(f.path(), LabelColumn::Last, true).unwrap();
        assert_eq!(t.x.shape(), (3, 2));
        assert_eq!(t.y.data(), &[3.0, 6.0, 9.0]);
        assert_eq!(t.label_kind, LabelKind::IntegerClass);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let f = write_tmp(b"1,2\n3\n");
        let err = load_csv(f.path(), LabelColumn::Last, false).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let f = write_tmp(b"1,2\n3,oops\n");
        let err = load_csv(f.path(), LabelColumn::Last, false).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn empty_csv_is_an_error() {
        let f = write_tmp(b"");
        assert!(load_csv(f.path(), LabelColumn::Last, false).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let values = [
            std::f64::consts::PI,
            -1.0 / 3.0,
            6.02214076e23,
            5e-324,
            -0.1,
        ];
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v, 1.0]).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, "v,y", &rows).unwrap();
        let back = load_csv(&path, LabelColumn::Last, true).unwrap();
        for (i, &v) in values.iter().enumerate() {
            assert_eq!(back.x[(i, 0)].to_bits(), v.to_bits(), "value {v}");
        }
    }

    fn idx_pair(count: u32, rows: u32, cols: u32, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&count.to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        img.extend_from_slice(pixels);
        let mut lab = Vec::new();
        lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn idx_parses_and_scales() {
        let (img, lab) = idx_pair(2, 2, 2, &[0, 128, 255, 64, 10, 20, 30, 40], &[3, 7]);
        let fi = write_tmp(&img);
        let fl = write_tmp(&lab);
        let t = load_idx(fi.path(), fl.path()).unwrap();
        assert_eq!(t.x.shape(), (2, 4));
        assert_eq!(t.x[(0, 2)], 1.0); // byte 255 -> 1.0
        assert_eq!(t.x[(0, 1)], 128.0 / 255.0);
        assert_eq!(t.y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn idx_rejects_wrong_magic_and_count_mismatch() {
        let (mut img, lab) = idx_pair(1, 1, 1, &[9], &[1]);
        img[3] = 0x01; // corrupt the magic
        let fi = write_tmp(&img);
        let fl = write_tmp(&lab);
        assert!(load_idx(fi.path(), fl.path()).is_err());

        let (img, lab) = idx_pair(1, 1, 1, &[9], &[1, 2]);
        let fi = write_tmp(&img);
        let fl = write_tmp(&lab);
        let err = load_idx(fi.path(), fl.path()).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }
}

/// Feature-only CSV (no label column): every cell is an input coordinate.
pub fn load_features(path: &Path, header: bool) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}: non-numeric cell {:?}",
                    path.display(),
                    lineno + 1,
                    cell.trim()
                ))
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Data(format!(
                    "{}: line {}: ragged row",
                    path.display(),
                    lineno + 1
                )));
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let n = rows.len();
    let mut x = Value::zeros(n, width);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}
