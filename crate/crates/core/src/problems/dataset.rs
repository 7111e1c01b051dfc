use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How labels are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    /// Labels in `{-1, +1}`.
    Classification,
    /// Arbitrary finite reals.
    Regression,
}

/// On-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// `<label> <index>:<value> ...`, 1-based indices.
    Sparse,
    /// `label,f1,...,fd` with a header row.
    Csv,
    /// Pick by extension: `.csv` is dense CSV, everything else sparse.
    Auto,
}

/// Row-major feature matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    kind: LabelKind,
}

impl Dataset {
    pub fn new(n: usize, d: usize, features: Vec<f64>, labels: Vec<f64>, kind: LabelKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no examples".into()));
        }
        if d == 0 {
            return Err(Error::InvalidDataset("dataset has zero features".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidDataset(format!("{} labels for {n} rows", labels.len())));
        }
        if features.len() != n * d {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} entries, expected {n}x{d}",
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite feature in row {}", pos / d + 1)));
        }
        for (i, &y) in labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::InvalidDataset(format!("non-finite label in row {}", i + 1)));
            }
            if kind == LabelKind::Classification && y != 1.0 && y != -1.0 {
                return Err(Error::InvalidDataset(format!("label {y} in row {} is not -1 or +1", i + 1)));
            }
        }
        Ok(Self { n, d, features, labels, kind })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Load from disk. `dim` fixes the feature count for the sparse format;
    /// when `None` it is the largest index seen.
    pub fn load(path: impl AsRef<Path>, format: DataFormat, kind: LabelKind, dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let format = match format {
            DataFormat::Auto => {
                if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                    DataFormat::Csv
                } else {
                    DataFormat::Sparse
                }
            }
            f => f,
        };
        match format {
            DataFormat::Csv => parse_csv(&text, kind),
            _ => parse_sparse(&text, kind, dim),
        }
    }
}

fn parse_label(tok: &str, line: usize, kind: LabelKind) -> Result<f64> {
    let y: f64 = tok
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad label {tok:?}") })?;
    if !y.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite label {tok:?}") });
    }
    if kind == LabelKind::Classification && y != 1.0 && y != -1.0 {
        return Err(Error::Parse { line, msg: format!("label {tok:?} is not -1 or +1") });
    }
    Ok(y)
}

/// Parse the sparse `<label> <index>:<value>` format. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_sparse(text: &str, kind: LabelKind, dim: Option<usize>) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut toks = body.split_whitespace();
        let label = parse_label(toks.next().unwrap_or_default(), line, kind)?;
        let mut entries = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected index:value, got {tok:?}") })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad index {idx:?}") })?;
            if idx == 0 {
                return Err(Error::Parse { line, msg: "feature indices are 1-based".into() });
            }
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad value {val:?}") })?;
            if !val.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value {val}") });
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(Error::Parse { line, msg: format!("index {idx} exceeds dimension {d}") });
                }
            }
            max_index = max_index.max(idx);
            entries.push((idx - 1, val));
        }
        rows.push(entries);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no examples in input".into() });
    }
    let d = dim.unwrap_or(max_index).max(1);
    let mut features = vec![0.0; rows.len() * d];
    for (r, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            features[r * d + j] = v;
        }
    }
    Dataset::new(rows.len(), d, features, labels, kind)
}

/// Parse dense CSV with a `label,f1,...,fd` header.
pub fn parse_csv(text: &str, kind: LabelKind) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if header.is_empty() || !header[0].eq_ignore_ascii_case("label") {
        return Err(Error::Parse { line: 1, msg: "first header column must be `label`".into() });
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::Parse { line: 1, msg: "header declares no feature columns".into() });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::Parse { line, msg: format!("expected {} columns, got {}", d + 1, rec.len()) });
        }
        labels.push(parse_label(&rec[0], line, kind)?);
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad value {field:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value {field:?}") });
            }
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no examples in input".into() });
    }
    Dataset::new(labels.len(), d, features, labels, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_row_is_densified() {
        let ds = parse_sparse("+1 1:0.5 3:2.0\n", LabelKind::Classification, Some(3)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.row(0), &[0.5, 0.0, 2.0]);
        assert_eq!(ds.label(0), 1.0);
    }

    #[test]
    fn sparse_infers_dimension() {
        let ds = parse_sparse("-1 2:1\n+1 5:3\n", LabelKind::Classification, None).unwrap();
        assert_eq!(ds.dim(), 5);
        assert_eq!(ds.row(1), &[0.0, 0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_sparse("", LabelKind::Classification, None).is_err());
        assert!(parse_sparse("\n# comment\n", LabelKind::Classification, None).is_err());
        assert!(parse_csv("label,f1\n", LabelKind::Classification).is_err());
    }

    #[test]
    fn bad_label_reports_line() {
        let err = parse_sparse("+1 1:1\n2 1:0.5\n", LabelKind::Classification, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_sparse("2 1:0.5\n", LabelKind::Regression, None).is_ok());
    }

    #[test]
    fn zero_index_and_overflow_rejected() {
        assert!(parse_sparse("+1 0:1\n", LabelKind::Classification, None).is_err());
        assert!(parse_sparse("+1 4:1\n", LabelKind::Classification, Some(3)).is_err());
        assert!(parse_sparse("+1 1:nan\n", LabelKind::Classification, None).is_err());
    }

    #[test]
    fn csv_with_header() {
        let ds = parse_csv("label,f1,f2\n1,0.5,1.5\n-1,2,3\n", LabelKind::Classification).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.row(1), &[2.0, 3.0]);
        assert_eq!(ds.labels(), &[1.0, -1.0]);
        let err = parse_csv("label,f1\n1,0.5\n3,1\n", LabelKind::Classification).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn load_picks_format_from_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,a,b\n1,1,2\n").unwrap();
        let ds = Dataset::load(&p, DataFormat::Auto, LabelKind::Classification, None).unwrap();
        assert_eq!(ds.row(0), &[1.0, 2.0]);
        let p = dir.path().join("d.svm");
        fs::write(&p, "-1 2:4\n").unwrap();
        let ds = Dataset::load(&p, DataFormat::Auto, LabelKind::Classification, None).unwrap();
        assert_eq!(ds.row(0), &[0.0, 4.0]);
    }
}
