//! File formats.
//!
//! * Dataset files: a `# {json}` header line, then one CSV row per sample
//!   holding `r` and the representer entries in row-major order.
//! * Model files: JSON with the model, the configuration that produced it and
//!   its fit report.
//! * Plain numeric tables (frame matrices, landmark tables, CV plans).
//!
//! Floats are written with 17 significant digits, so every format reads back
//! to the same values and rewrites to the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CvMode, CvPlan};
use crate::ggr::{AffineMap, Dataset, FitConfig, FittedModel, Sample};
use crate::grassmann::GrassmannPoint;
use crate::report::FitReport;

const DATASET_FORMAT: &str = "grassreg-dataset";
const MODEL_FORMAT: &str = "grassreg-model";
const VERSION: u32 = 1;

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn malformed(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

fn parse_float(token: &str, line: usize) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| malformed(line, format!("`{token}` is not a number")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    n: usize,
    p: usize,
    count: usize,
    normalization: AffineMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<String>,
}

/// A dataset plus an optional label for the units of `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub dataset: Dataset,
    pub units: Option<String>,
}

impl DatasetFile {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset, units: None }
    }
}

pub fn format_dataset(file: &DatasetFile) -> Result<String> {
    let d = &file.dataset;
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: VERSION,
        n: d.n(),
        p: d.p(),
        count: d.len(),
        normalization: *d.normalization(),
        units: file.units.clone(),
    };
    let mut out = format!("# {}\n", serde_json::to_string(&header)?);
    for s in d.samples() {
        out.push_str(&float(s.r));
        let m = s.point.matrix();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(',');
                out.push_str(&float(m[(i, j)]));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_dataset(text: &str) -> Result<DatasetFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| malformed(1, "expected a `# {json}` header"))?;
    let header: DatasetHeader =
        serde_json::from_str(json.trim()).map_err(|e| malformed(1, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(malformed(1, format!("unknown format `{}`", header.format)));
    }
    if header.version != VERSION {
        return Err(malformed(1, format!("unsupported version {}", header.version)));
    }
    let width = header.n * header.p;
    let mut samples = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(Error::DimensionMismatch(format!(
                "line {lineno}: {} fields, expected {}",
                fields.len(),
                width + 1
            )));
        }
        let r = parse_float(fields[0], lineno)?;
        let values = fields[1..]
            .iter()
            .map(|f| parse_float(f, lineno))
            .collect::<Result<Vec<_>>>()?;
        let point = GrassmannPoint::new(DMatrix::from_row_slice(header.n, header.p, &values))
            .map_err(|e| malformed(lineno, e))?;
        samples.push(Sample { r, point });
    }
    if samples.len() != header.count {
        return Err(Error::Format(format!(
            "header announces {} samples, file has {}",
            header.count,
            samples.len()
        )));
    }
    Ok(DatasetFile {
        dataset: Dataset::with_normalization(samples, header.normalization)?,
        units: header.units,
    })
}

/// A fitted model with the configuration and report that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: FittedModel,
    pub config: FitConfig,
    pub report: FitReport,
}

impl ModelFile {
    pub fn new(model: FittedModel, config: FitConfig, report: FitReport) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: VERSION,
            model,
            config,
            report,
        }
    }
}

pub fn format_model(file: &ModelFile) -> Result<String> {
    let mut s = serde_json::to_string_pretty(file)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!("unknown model format `{}`", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Format(format!("unsupported model version {}", file.version)));
    }
    Ok(file)
}

fn is_comment(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('#') || t.starts_with('"') || t.starts_with('\'')
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty())
}

/// Numeric matrix with one row per line; fields separated by commas or
/// whitespace; `#` lines are comments.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if is_comment(line) {
            continue;
        }
        let row = tokens(line).map(|t| parse_float(t, idx + 1)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::DimensionMismatch(format!(
                    "line {}: {} columns, expected {}",
                    idx + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Format("matrix file holds no numbers".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| float(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Column layout of a landmark table: each record is one line whose first
/// `leading` fields are metadata (field `r_field` among them is the
/// independent variable) followed by `landmarks × dims` coordinates, one
/// landmark after the other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkLayout {
    pub leading: usize,
    pub r_field: usize,
    pub landmarks: usize,
    pub dims: usize,
}

/// One specimen of a landmark table.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRecord {
    pub r: f64,
    /// Metadata fields other than `r`, verbatim.
    pub labels: Vec<String>,
    /// landmarks × dims.
    pub coordinates: DMatrix<f64>,
}

/// Read whitespace- or comma-separated landmark records. Lines starting with
/// `#`, `"` or `'` and NTS-style header lines (containing `dim=`) are skipped.
pub fn parse_landmarks(text: &str, layout: &LandmarkLayout) -> Result<Vec<LandmarkRecord>> {
    if layout.r_field >= layout.leading {
        return Err(Error::InvalidArgument("r_field must index one of the leading fields".into()));
    }
    if layout.landmarks == 0 || layout.dims == 0 {
        return Err(Error::InvalidArgument("layout needs landmarks and dimensions".into()));
    }
    let width = layout.leading + layout.landmarks * layout.dims;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if is_comment(line) || line.to_ascii_lowercase().contains("dim=") {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = tokens(line).collect();
        if fields.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "line {lineno}: {} fields, expected {width}",
                fields.len()
            )));
        }
        let r = parse_float(fields[layout.r_field], lineno)?;
        let labels = fields[..layout.leading]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != layout.r_field)
            .map(|(_, f)| f.to_string())
            .collect();
        let coords = fields[layout.leading..]
            .iter()
            .map(|f| parse_float(f, lineno))
            .collect::<Result<Vec<_>>>()?;
        out.push(LandmarkRecord {
            r,
            labels,
            coordinates: DMatrix::from_row_slice(layout.landmarks, layout.dims, &coords),
        });
    }
    if out.is_empty() {
        return Err(Error::Format("landmark file holds no records".into()));
    }
    Ok(out)
}

/// One fold id per line, in the dataset's sorted order. A first line
/// `# mode=leave-one-subject-out` or `# mode=k-fold` sets the mode.
pub fn parse_cv_plan(text: &str, len: usize) -> Result<CvPlan> {
    let mut mode = CvMode::KFold;
    let mut folds = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('#') {
            match rest.trim() {
                "mode=leave-one-subject-out" => mode = CvMode::LeaveOneSubjectOut,
                "mode=k-fold" => mode = CvMode::KFold,
                _ => {}
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        folds.push(
            t.parse::<usize>()
                .map_err(|_| malformed(idx + 1, format!("`{t}` is not a fold id")))?,
        );
    }
    if folds.len() != len {
        return Err(Error::InvalidPlan(format!("plan covers {} samples, dataset has {len}", folds.len())));
    }
    Ok(CvPlan { folds, mode })
}

pub fn format_cv_plan(plan: &CvPlan) -> String {
    let mode = match plan.mode {
        CvMode::KFold => "k-fold",
        CvMode::LeaveOneSubjectOut => "leave-one-subject-out",
    };
    let mut out = format!("# mode={mode}\n");
    for f in &plan.folds {
        let _ = writeln!(out, "{f}");
    }
    out
}

pub fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    parse_dataset(&read_text(path)?)
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    write_text(path, &format_dataset(file)?)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    parse_model(&read_text(path)?)
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_text(path, &format_model(file)?)
}
