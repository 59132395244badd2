//! CSV tables of points (optionally labelled), plain matrices, and IDX image files.
//!
//! Written CSV carries a header (`x0,x1,...` or `y0,y1,...`, plus `label`) and
//! every value in `{:.16e}` form, which round-trips `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::affinity::Dataset;
use crate::error::{Error, Result};
use crate::tsne::Embedding;
use crate::Scalar;

/// Where to find labels in a CSV table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelColumn {
    /// A header whose last name is `label`; without a header, a last column
    /// made entirely of integers (and at least one other column).
    #[default]
    Auto,
    Last,
    None,
}

impl FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "last" => Ok(Self::Last),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidParameter(format!(
                "label column must be auto, last or none, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table<T> {
    pub dataset: Dataset<T>,
    pub labels: Option<Vec<i64>>,
}

struct RawCsv {
    header: Option<Vec<String>>,
    rows: Vec<(u64, Vec<String>)>,
}

fn parse_error(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

fn read_raw(path: &Path) -> Result<RawCsv> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        if fields.len() == 1 && fields[0].is_empty() {
            continue;
        }
        if k == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            width = Some(fields.len());
            header = Some(fields);
            continue;
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_error(
                    path,
                    format!("line {line}"),
                    format!("expected {w} fields, found {}", fields.len()),
                ))
            }
            Some(_) => {}
        }
        rows.push((line, fields));
    }
    if rows.is_empty() {
        return Err(parse_error(path, "end of file", "no data rows"));
    }
    Ok(RawCsv { header, rows })
}

fn parse_value<T: Scalar>(path: &Path, line: u64, col: usize, s: &str) -> Result<T> {
    match s.parse::<T>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(
            path,
            format!("line {line}, column {}", col + 1),
            format!("expected a finite number, found {s:?}"),
        )),
    }
}

/// Reads a point table, splitting off a label column as directed.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, labels: LabelColumn) -> Result<Table<T>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let width = raw.rows[0].1.len();
    let has_labels = match labels {
        LabelColumn::None => false,
        LabelColumn::Last => true,
        LabelColumn::Auto => match &raw.header {
            Some(h) => h.last().is_some_and(|name| name.eq_ignore_ascii_case("label")),
            None => width >= 2 && raw.rows.iter().all(|(_, r)| r[width - 1].parse::<i64>().is_ok()),
        },
    };
    let d = width - usize::from(has_labels);
    if d == 0 {
        return Err(parse_error(path, "line 1", "no feature columns"));
    }
    let mut values = Vec::with_capacity(raw.rows.len() * d);
    let mut out_labels = Vec::new();
    for (line, r) in &raw.rows {
        for (c, s) in r[..d].iter().enumerate() {
            values.push(parse_value(path, *line, c, s)?);
        }
        if has_labels {
            let s = &r[d];
            out_labels.push(s.parse::<i64>().map_err(|_| {
                parse_error(path, format!("line {line}, column {width}"), format!("expected an integer label, found {s:?}"))
            })?);
        }
    }
    let x = Array2::from_shape_vec((raw.rows.len(), d), values).expect("rectangular");
    Ok(Table {
        dataset: Dataset::new(x)?,
        labels: has_labels.then_some(out_labels),
    })
}

/// Reads a numeric matrix (header optional, no labels).
pub fn read_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let width = raw.rows[0].1.len();
    let mut values = Vec::with_capacity(raw.rows.len() * width);
    for (line, r) in &raw.rows {
        for (c, s) in r.iter().enumerate() {
            values.push(parse_value(path, *line, c, s)?);
        }
    }
    Ok(Array2::from_shape_vec((raw.rows.len(), width), values).expect("rectangular"))
}

/// Reads integer labels, one per row (a single-column CSV, header optional).
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    raw.rows
        .iter()
        .map(|(line, r)| {
            if r.len() != 1 {
                return Err(parse_error(path, format!("line {line}"), format!("expected 1 field, found {}", r.len())));
            }
            r[0].parse::<i64>()
                .map_err(|_| parse_error(path, format!("line {line}"), format!("expected an integer label, found {:?}", r[0])))
        })
        .collect()
}

/// Renders points (and labels) as CSV with the given column prefix.
pub fn format_csv<T: Scalar>(points: ArrayView2<'_, T>, labels: Option<&[i64]>, prefix: &str) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != points.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                l.len(),
                points.nrows()
            )));
        }
    }
    let mut out = String::new();
    let names: Vec<String> = (0..points.ncols()).map(|k| format!("{prefix}{k}")).collect();
    out.push_str(&names.join(","));
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in points.rows().into_iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn save_embedding<T: Scalar>(path: impl AsRef<Path>, y: &Embedding<T>, labels: Option<&[i64]>) -> Result<()> {
    write_file(path, format_csv(y.points(), labels, "y")?)
}

pub fn save_dataset<T: Scalar>(path: impl AsRef<Path>, x: &Dataset<T>, labels: Option<&[i64]>) -> Result<()> {
    write_file(path, format_csv(x.points(), labels, "x")?)
}

const IDX_UBYTE: u8 = 0x08;

fn parse_idx_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(parse_error(path, "byte 0", "file shorter than the 4-byte magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_error(path, "byte 0", format!("bad magic number {:02x?}", &bytes[..4])));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(parse_error(
            path,
            "byte 2",
            format!("unsupported element type 0x{:02x} (only unsigned bytes)", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(parse_error(path, "byte 3", "zero dimensions"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(parse_error(path, format!("byte {}", bytes.len()), "truncated dimension sizes"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize)
        .collect();
    let total = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let body = &bytes[header..];
    match total {
        Some(t) if t == body.len() => Ok((dims, body)),
        Some(t) => Err(parse_error(
            path,
            format!("byte {}", header + t.min(body.len())),
            format!("dimensions {dims:?} need {t} data bytes, file has {}", body.len()),
        )),
        None => Err(parse_error(path, "byte 4", format!("dimensions {dims:?} overflow"))),
    }
}

/// Reads an unsigned-byte IDX array with at least two dimensions, flattening
/// every item to one row and scaling pixels to `[0, 1]`.
pub fn load_idx<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, body) = parse_idx_header(&bytes, path)?;
    if dims.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "{}: expected images (2 or more dimensions), found {dims:?}",
            path.display()
        )));
    }
    let n = dims[0];
    let d = body.len().checked_div(n).unwrap_or(0);
    let scale = T::lit(255.0);
    let x = Array2::from_shape_vec((n, d), body.iter().map(|&b| T::from_count(b as usize) / scale).collect())
        .expect("sizes checked");
    Dataset::new(x)
}

/// Reads a one-dimensional unsigned-byte IDX label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, body) = parse_idx_header(&bytes, path)?;
    if dims.len() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "{}: expected a label vector, found dimensions {dims:?}",
            path.display()
        )));
    }
    Ok(body.iter().map(|&b| i64::from(b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn embedding_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        let y = Embedding::<f64>::random_uniform(40, 2, 1e3, 5);
        let labels: Vec<i64> = (0..40).map(|i| i % 3 - 1).collect();
        save_embedding(&path, &y, Some(&labels)).unwrap();
        let t = load_csv::<f64>(&path, LabelColumn::Auto).unwrap();
        assert_eq!(t.labels.as_deref(), Some(&labels[..]));
        for (a, b) in t.dataset.points().iter().zip(y.points().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        save_embedding(&path, &y, None).unwrap();
        assert_eq!(load_csv::<f64>(&path, LabelColumn::Auto).unwrap().labels, None);
    }

    #[test]
    fn extreme_values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let x = array![[f64::MIN_POSITIVE, -0.0], [1.0 / 3.0, f64::MAX], [5e-324, -1e300]];
        write_file(&path, format_csv(x.view(), None, "x").unwrap()).unwrap();
        let back = read_matrix::<f64>(&path).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_arity_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x0,x1\n1,2\n3,4\n5\n").unwrap();
        match load_csv::<f64>(&path, LabelColumn::None) {
            Err(Error::Parse { location, message, .. }) => {
                assert_eq!(location, "line 4");
                assert!(message.contains("expected 2 fields"));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        fs::write(&path, "1,2\n3,abc\n").unwrap();
        match load_csv::<f64>(&path, LabelColumn::None) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2, column 2"),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn headerless_integer_column_is_a_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "0.5,1.5,2\n-1,3e2,0\n").unwrap();
        let t = load_csv::<f64>(&path, LabelColumn::Auto).unwrap();
        assert_eq!(t.labels, Some(vec![2, 0]));
        assert_eq!(t.dataset.dim(), 2);
        let t = load_csv::<f64>(&path, LabelColumn::None).unwrap();
        assert_eq!(t.dataset.dim(), 3);
        fs::write(&path, "0.5,1.5\n-1,3.5\n").unwrap();
        assert_eq!(load_csv::<f64>(&path, LabelColumn::Auto).unwrap().labels, None);
    }

    #[test]
    fn labels_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(&path, "label\n3\n1\n").unwrap();
        assert_eq!(load_labels(&path).unwrap(), vec![3, 1]);
    }

    fn idx_fixture() -> Vec<u8> {
        // Magic 0x00000803, then 4 x 2 x 2 and 16 pixels: 32 bytes in all.
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend([0u8, 255, 51, 102, 1, 2, 3, 4, 255, 255, 255, 255, 0, 0, 0, 17]);
        b
    }

    #[test]
    fn idx_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.idx");
        let bytes = idx_fixture();
        assert_eq!(bytes.len(), 32);
        fs::write(&path, &bytes).unwrap();
        let x = load_idx::<f64>(&path).unwrap();
        assert_eq!((x.n(), x.dim()), (4, 4));
        assert_eq!(x.point(0).to_vec(), vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(x.points()[[3, 3]], 17.0 / 255.0);
        assert!(x.points().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let mut bytes = idx_fixture();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_idx::<f64>(&path), Err(Error::Parse { location, .. }) if location == "byte 31"));
        bytes = idx_fixture();
        bytes[2] = 0x0d;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_idx::<f64>(&path), Err(Error::Parse { location, .. }) if location == "byte 2"));
        fs::write(&path, [0u8, 0, 8, 1, 0, 0, 0, 3, 7, 1, 9]).unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![7, 1, 9]);
        assert!(matches!(load_idx::<f64>(&path), Err(Error::DimensionMismatch(_))));
    }
}
