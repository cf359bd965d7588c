//! File formats: text and binary matrices, label tables, CAV bundles and
//! long-format metric histories.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! every text format reads back bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::cav::CavSet;
use crate::error::{CavError, Result};
use crate::matrix::{ActivationMatrix, LabelMatrix};
use crate::metrics::{MetricsHistory, MetricsSnapshot};

pub const BINARY_MAGIC: &[u8; 4] = b"CAVM";
pub const BINARY_VERSION: u8 = 1;
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixFormat {
    #[default]
    Text,
    Binary,
}

impl MatrixFormat {
    /// Binary for `.bin`/`.cavm` extensions, text otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin" | "cavm") => MatrixFormat::Binary,
            _ => MatrixFormat::Text,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CavError + '_ {
    move |source| CavError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for (j, v) in values.into_iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

pub fn matrix_to_text(m: &DMatrix<f64>) -> String {
    let mut out = format!("{},{}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        push_row(&mut out, row.iter().copied());
    }
    out
}

fn parse_f64(s: &str, context: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CavError::parse(context, format!("`{}` is not a number", s.trim())))?;
    if !v.is_finite() {
        return Err(CavError::parse(context, format!("non-finite value `{}`", s.trim())));
    }
    Ok(v)
}

fn parse_usize(s: &str, context: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| CavError::parse(context, format!("`{}` is not a non-negative integer", s.trim())))
}

fn parse_f64_list(s: &str, context: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| parse_f64(v, context)).collect()
}

/// Parse a text matrix from a line iterator; `label` names the source in
/// errors. Consumes exactly the header plus `rows` lines.
fn parse_text_matrix<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, label: &str) -> Result<DMatrix<f64>> {
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| CavError::parse(label, "missing `rows,cols` header"))?;
    let ctx = format!("{label} line {}", line_no + 1);
    let (rows, cols) = header
        .split_once(',')
        .ok_or_else(|| CavError::parse(&ctx, "header must be `rows,cols`"))?;
    let (rows, cols) = (parse_usize(rows, &ctx)?, parse_usize(cols, &ctx)?);
    let mut data = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| CavError::parse(label, format!("expected {rows} rows, found {i}")))?;
        let ctx = format!("{label} line {}", line_no + 1);
        let values = parse_f64_list(line, &ctx)?;
        if values.len() != cols {
            return Err(CavError::parse(&ctx, format!("expected {cols} values, found {}", values.len())));
        }
        for (j, v) in values.into_iter().enumerate() {
            data[(i, j)] = v;
        }
    }
    Ok(data)
}

pub fn matrix_from_text(text: &str, label: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let m = parse_text_matrix(&mut lines, label)?;
    if let Some((line_no, _)) = lines.next() {
        return Err(CavError::parse(format!("{label} line {}", line_no + 1), "trailing data after matrix"));
    }
    Ok(m)
}

pub fn matrix_to_binary(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows()).map_err(|_| CavError::InvalidMatrix("too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| CavError::InvalidMatrix("too many columns".into()))?;
    let mut out = Vec::with_capacity(13 + 8 * m.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.push(BINARY_VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for row in m.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn matrix_from_binary(bytes: &[u8], label: &str) -> Result<DMatrix<f64>> {
    if bytes.len() < 13 || &bytes[..4] != BINARY_MAGIC {
        return Err(CavError::parse(label, "not a CAVM binary matrix"));
    }
    if bytes[4] != BINARY_VERSION {
        return Err(CavError::parse(label, format!("unsupported binary version {}", bytes[4])));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let body = &bytes[13..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| CavError::parse(label, "matrix size overflows"))?;
    if body.len() != expected {
        return Err(CavError::parse(
            label,
            format!("{rows}x{cols} needs {expected} data bytes, found {}", body.len()),
        ));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut data = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            data[(i, j)] = values.next().expect("length checked");
        }
    }
    Ok(data)
}

/// Decode either matrix format, detected from the magic bytes.
pub fn matrix_from_bytes(bytes: &[u8], label: &str) -> Result<DMatrix<f64>> {
    if bytes.starts_with(BINARY_MAGIC) {
        return matrix_from_binary(bytes, label);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| CavError::parse(label, "file is neither UTF-8 text nor CAVM binary"))?;
    matrix_from_text(text, label)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_bytes(&read_file(path)?, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Text => write_file(path, matrix_to_text(m).as_bytes()),
        MatrixFormat::Binary => write_file(path, &matrix_to_binary(m)?),
    }
}

pub fn read_activations(path: &Path) -> Result<ActivationMatrix> {
    ActivationMatrix::new(read_matrix(path)?)
}

pub fn labels_to_text(labels: &LabelMatrix) -> String {
    let mut out = labels.names().join(",");
    out.push('\n');
    for i in 0..labels.samples() {
        let row: Vec<String> = (0..labels.concepts()).map(|c| labels.get(i, c).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn labels_from_text(text: &str, label: &str) -> Result<LabelMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CavError::parse(label, "missing header row of concept names"))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_owned()).collect();
    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let ctx = format!("{label} line {}", line_no + 1);
        let row = line
            .split(',')
            .map(|v| match v.trim() {
                "1" | "+1" => Ok(1i8),
                "-1" => Ok(-1i8),
                other => Err(CavError::parse(&ctx, format!("label `{other}` is not -1 or +1"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        if row.len() != names.len() {
            return Err(CavError::parse(&ctx, format!("expected {} labels, found {}", names.len(), row.len())));
        }
        rows.push(row);
    }
    LabelMatrix::from_rows(&rows, names)
}

pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    labels_from_text(&read_text(path)?, &path.display().to_string())
}

pub fn write_labels(path: &Path, labels: &LabelMatrix) -> Result<()> {
    write_file(path, labels_to_text(labels).as_bytes())
}

/// Where a bundle came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub fit_method: String,
    /// Ordered key/value echo of the producing configuration.
    pub config: Vec<(String, String)>,
    pub epochs_run: Option<usize>,
    pub final_snapshot: Option<MetricsSnapshot>,
}

/// A CAV set plus provenance, persisted as a key/value text document.
#[derive(Debug, Clone, PartialEq)]
pub struct CavBundle {
    pub format_version: u32,
    pub cavs: CavSet,
    pub provenance: Provenance,
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

impl CavBundle {
    pub fn new(cavs: CavSet, provenance: Provenance) -> Self {
        Self {
            format_version: BUNDLE_VERSION,
            cavs,
            provenance,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        let _ = writeln!(out, "format_version = {}", self.format_version);
        let _ = writeln!(out, "concepts = {}", self.cavs.names().join(","));
        let _ = writeln!(out, "biases = {}", join_f64(self.cavs.biases()));
        let _ = writeln!(out, "fit_method = {}", p.fit_method);
        if let Some(epochs) = p.epochs_run {
            let _ = writeln!(out, "epochs_run = {epochs}");
        }
        for (key, value) in &p.config {
            let _ = writeln!(out, "config.{key} = {value}");
        }
        if let Some(s) = &p.final_snapshot {
            let _ = writeln!(out, "final.epoch = {}", s.epoch);
            let _ = writeln!(out, "final.macro_auroc = {:?}", s.macro_auroc);
            let _ = writeln!(out, "final.avg_orthogonality = {:?}", s.avg_orthogonality);
            let _ = writeln!(out, "final.per_concept_auroc = {}", join_f64(&s.per_concept_auroc));
            let _ = writeln!(out, "final.per_concept_orthogonality = {}", join_f64(&s.per_concept_orthogonality));
        }
        out.push_str("[vectors]\n");
        out.push_str(&matrix_to_text(self.cavs.vectors()));
        out
    }

    pub fn from_text(text: &str, label: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut version = None;
        let mut names = None;
        let mut biases = None;
        let mut provenance = Provenance::default();
        let mut snapshot = SnapshotFields::default();
        let mut vectors = None;

        while let Some((line_no, line)) = lines.next() {
            let ctx = format!("{label} line {}", line_no + 1);
            if line.trim() == "[vectors]" {
                vectors = Some(parse_text_matrix(&mut lines, label)?);
                if let Some((line_no, _)) = lines.next() {
                    return Err(CavError::parse(
                        format!("{label} line {}", line_no + 1),
                        "trailing data after vectors",
                    ));
                }
                break;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CavError::parse(&ctx, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "format_version" => {
                    let v = parse_usize(value, &ctx)?;
                    if v != BUNDLE_VERSION as usize {
                        return Err(CavError::parse(&ctx, format!("unsupported bundle version {v}")));
                    }
                    version = Some(v as u32);
                }
                "concepts" => names = Some(value.split(',').map(|s| s.trim().to_owned()).collect::<Vec<_>>()),
                "biases" => biases = Some(parse_f64_list(value, &ctx)?),
                "fit_method" => provenance.fit_method = value.to_owned(),
                "epochs_run" => provenance.epochs_run = Some(parse_usize(value, &ctx)?),
                "final.epoch" => snapshot.epoch = Some(parse_usize(value, &ctx)?),
                "final.macro_auroc" => snapshot.macro_auroc = Some(parse_f64(value, &ctx)?),
                "final.avg_orthogonality" => snapshot.avg_orthogonality = Some(parse_f64(value, &ctx)?),
                "final.per_concept_auroc" => snapshot.auroc = Some(parse_f64_list(value, &ctx)?),
                "final.per_concept_orthogonality" => snapshot.orthogonality = Some(parse_f64_list(value, &ctx)?),
                _ => match key.strip_prefix("config.") {
                    Some(k) => provenance.config.push((k.to_owned(), value.to_owned())),
                    None => return Err(CavError::parse(&ctx, format!("unknown key `{key}`"))),
                },
            }
        }

        let missing = |what: &str| CavError::parse(label, format!("missing `{what}`"));
        let format_version = version.ok_or_else(|| missing("format_version"))?;
        let names = names.ok_or_else(|| missing("concepts"))?;
        let biases = biases.ok_or_else(|| missing("biases"))?;
        let vectors = vectors.ok_or_else(|| missing("[vectors]"))?;
        provenance.final_snapshot = snapshot.finish(label)?;
        let cavs = CavSet::new(vectors, biases, names)?;
        Ok(Self {
            format_version,
            cavs,
            provenance,
        })
    }
}

#[derive(Default)]
struct SnapshotFields {
    epoch: Option<usize>,
    macro_auroc: Option<f64>,
    avg_orthogonality: Option<f64>,
    auroc: Option<Vec<f64>>,
    orthogonality: Option<Vec<f64>>,
}

impl SnapshotFields {
    fn finish(self, label: &str) -> Result<Option<MetricsSnapshot>> {
        match (self.epoch, self.macro_auroc, self.avg_orthogonality, self.auroc, self.orthogonality) {
            (None, None, None, None, None) => Ok(None),
            (Some(epoch), Some(macro_auroc), Some(avg_orthogonality), Some(a), Some(o)) => Ok(Some(MetricsSnapshot {
                epoch,
                per_concept_auroc: a,
                per_concept_orthogonality: o,
                macro_auroc,
                avg_orthogonality,
            })),
            _ => Err(CavError::parse(label, "incomplete `final.*` snapshot")),
        }
    }
}

pub fn read_bundle(path: &Path) -> Result<CavBundle> {
    CavBundle::from_text(&read_text(path)?, &path.display().to_string())
}

pub fn write_bundle(path: &Path, bundle: &CavBundle) -> Result<()> {
    write_file(path, bundle.to_text().as_bytes())
}

/// Long-format history: `epoch,metric,concept,value`. Aggregates leave the
/// concept field empty.
pub fn history_to_csv(history: &MetricsHistory, names: &[String]) -> String {
    let mut out = String::from("epoch,metric,concept,value\n");
    for s in history.snapshots() {
        for (name, v) in names.iter().zip(&s.per_concept_auroc) {
            let _ = writeln!(out, "{},auroc,{name},{v:?}", s.epoch);
        }
        for (name, v) in names.iter().zip(&s.per_concept_orthogonality) {
            let _ = writeln!(out, "{},orthogonality,{name},{v:?}", s.epoch);
        }
        let _ = writeln!(out, "{},macro_auroc,,{:?}", s.epoch, s.macro_auroc);
        let _ = writeln!(out, "{},avg_orthogonality,,{:?}", s.epoch, s.avg_orthogonality);
    }
    out
}

/// Inverse of [`history_to_csv`] for the given concept order.
pub fn history_from_csv(text: &str, names: &[String], label: &str) -> Result<MetricsHistory> {
    let mut history = MetricsHistory::new();
    let mut current: Option<MetricsSnapshot> = None;
    let blank = |epoch| MetricsSnapshot {
        epoch,
        per_concept_auroc: vec![f64::NAN; names.len()],
        per_concept_orthogonality: vec![f64::NAN; names.len()],
        macro_auroc: f64::NAN,
        avg_orthogonality: f64::NAN,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, "epoch,metric,concept,value")) => {}
        _ => return Err(CavError::parse(label, "missing `epoch,metric,concept,value` header")),
    }
    for (line_no, line) in lines {
        let ctx = format!("{label} line {}", line_no + 1);
        let fields: Vec<&str> = line.split(',').collect();
        let [epoch, metric, concept, value] = fields[..] else {
            return Err(CavError::parse(&ctx, "expected 4 fields"));
        };
        let epoch = parse_usize(epoch, &ctx)?;
        let value = parse_f64(value, &ctx)?;
        if current.as_ref().is_some_and(|s| s.epoch != epoch) {
            history.push(current.take().expect("checked"))?;
        }
        let snap = current.get_or_insert_with(|| blank(epoch));
        let index = || {
            names
                .iter()
                .position(|n| n == concept)
                .ok_or_else(|| CavError::parse(&ctx, format!("unknown concept `{concept}`")))
        };
        match metric {
            "auroc" => snap.per_concept_auroc[index()?] = value,
            "orthogonality" => snap.per_concept_orthogonality[index()?] = value,
            "macro_auroc" => snap.macro_auroc = value,
            "avg_orthogonality" => snap.avg_orthogonality = value,
            other => return Err(CavError::parse(&ctx, format!("unknown metric `{other}`"))),
        }
    }
    if let Some(s) = current {
        history.push(s)?;
    }
    Ok(history)
}
