//! Dataset-level metrics and report files.
//!
//! ```text
//! PCA(S, ε)  = |{(x, y) : bound(x) < ε  and  h(x) = y}| / |S|
//! CPCA(S, ε) = the same with Clopper-Pearson upper limits as bounds
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{CPOutcome, FailureCriterion};
use crate::cert::{BoundRecord, CertConfig};
use crate::error::{Error, Result};
use crate::image::Shape;

/// The three thresholds reported by default.
pub const DEFAULT_EPS_GRID: [f64; 3] = [1e-10, 1e-7, 1e-4];

pub const CSV_HEADER: &str = "sample_id,label,predicted,hit,gap_d,bound,cp_upper,t_argmin";

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("epsilon {eps} outside (0, 1)")));
    }
    Ok(())
}

pub fn validate_eps_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("epsilon grid is empty"));
    }
    for &e in grid {
        check_epsilon(e)?;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("epsilon grid must be strictly increasing"));
    }
    Ok(())
}

fn certified_fraction(
    bounds_and_hits: impl ExactSizeIterator<Item = (f64, bool)>,
    eps: f64,
) -> Result<f64> {
    let m = bounds_and_hits.len();
    if m == 0 {
        return Err(Error::invalid("no records to aggregate"));
    }
    check_epsilon(eps)?;
    let certified = bounds_and_hits.filter(|&(b, hit)| hit && b < eps).count();
    Ok(certified as f64 / m as f64)
}

/// Probabilistically certified accuracy.
pub fn pca(records: &[BoundRecord], epsilon: f64) -> Result<f64> {
    certified_fraction(records.iter().map(|r| (r.bound, r.hit)), epsilon)
}

/// Clopper-Pearson certified accuracy.
pub fn cpca(outcomes: &[CPOutcome], hits: &[bool], epsilon: f64) -> Result<f64> {
    if outcomes.len() != hits.len() {
        return Err(Error::invalid(format!(
            "{} outcomes but {} hit flags",
            outcomes.len(),
            hits.len()
        )));
    }
    certified_fraction(
        outcomes.iter().zip(hits).map(|(o, &h)| (o.upper, h)),
        epsilon,
    )
}

/// Fraction of records with `hit`.
pub fn clean_accuracy(records: &[BoundRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records to aggregate"));
    }
    Ok(records.iter().filter(|r| r.hit).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub value: f64,
}

/// PCA at each threshold of an increasing grid.
pub fn epsilon_sweep(records: &[BoundRecord], eps_grid: &[f64]) -> Result<Vec<CurvePoint>> {
    validate_eps_grid(eps_grid)?;
    eps_grid
        .iter()
        .map(|&epsilon| {
            Ok(CurvePoint {
                epsilon,
                value: pca(records, epsilon)?,
            })
        })
        .collect()
}

pub fn cpca_sweep(
    outcomes: &[CPOutcome],
    hits: &[bool],
    eps_grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    validate_eps_grid(eps_grid)?;
    eps_grid
        .iter()
        .map(|&epsilon| {
            Ok(CurvePoint {
                epsilon,
                value: cpca(outcomes, hits, epsilon)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpConfig {
    pub n_trials: u64,
    pub alpha: f64,
    pub criterion: FailureCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEcho {
    pub cert: CertConfig,
    /// Textual transform, parseable by `TransformSpec::from_str`.
    pub transform: String,
    pub cp: Option<CpConfig>,
    pub era_r: Option<usize>,
    pub eps_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub name: String,
    /// Hex SHA-256 of the canonical dataset bytes.
    pub digest: String,
    pub count: usize,
    pub num_classes: usize,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleResult {
    pub sample_id: u64,
    pub label: usize,
    pub record: BoundRecord,
    pub cp: Option<CPOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curves {
    pub pca: Vec<CurvePoint>,
    pub cpca: Option<Vec<CurvePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationReport {
    pub config: RunEcho,
    pub dataset: DatasetInfo,
    pub model: String,
    pub samples: Vec<SampleResult>,
    pub clean_accuracy: f64,
    pub era: Option<f64>,
    pub curves: Curves,
}

impl CertificationReport {
    /// Assembles a report and computes its curves.
    pub fn build(
        config: RunEcho,
        dataset: DatasetInfo,
        model: String,
        samples: Vec<SampleResult>,
        era: Option<f64>,
    ) -> Result<Self> {
        if samples.len() != dataset.count {
            return Err(Error::invalid(format!(
                "{} sample results for a dataset of {}",
                samples.len(),
                dataset.count
            )));
        }
        let records: Vec<BoundRecord> = samples.iter().map(|s| s.record.clone()).collect();
        let pca = epsilon_sweep(&records, &config.eps_grid)?;
        let cpca = if samples.iter().all(|s| s.cp.is_some()) && config.cp.is_some() {
            let outcomes: Vec<CPOutcome> = samples.iter().filter_map(|s| s.cp.clone()).collect();
            let hits: Vec<bool> = records.iter().map(|r| r.hit).collect();
            Some(cpca_sweep(&outcomes, &hits, &config.eps_grid)?)
        } else {
            None
        };
        Ok(CertificationReport {
            clean_accuracy: clean_accuracy(&records)?,
            config,
            dataset,
            model,
            samples,
            era,
            curves: Curves { pca, cpca },
        })
    }

    pub fn records(&self) -> Vec<BoundRecord> {
        self.samples.iter().map(|s| s.record.clone()).collect()
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.samples
            .iter()
            .map(|s| CsvRow {
                sample_id: s.sample_id,
                label: s.label,
                predicted: s.record.predicted,
                hit: s.record.hit,
                gap_d: s.record.gap_d,
                bound: s.record.bound,
                cp_upper: s.cp.as_ref().map(|c| c.upper),
                t_argmin: s.record.t_argmin,
            })
            .collect()
    }

    /// Hex SHA-256 of the JSON serialization.
    pub fn digest(&self) -> String {
        hex_sha256(&emit_report(self, ReportFormat::Json))
    }
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!(
                "unknown report format `{other}` (csv, json)"
            ))),
        }
    }
}

/// One line of the per-sample CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub sample_id: u64,
    pub label: usize,
    pub predicted: usize,
    pub hit: bool,
    pub gap_d: f64,
    pub bound: f64,
    pub cp_upper: Option<f64>,
    pub t_argmin: f64,
}

pub fn emit_report(report: &CertificationReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => emit_csv_rows(&report.csv_rows()).into_bytes(),
    }
}

pub fn emit_csv_rows(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let cp = r.cp_upper.map(|u| format!("{u:?}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{:?},{:?},{},{:?}",
            r.sample_id, r.label, r.predicted, r.hit, r.gap_d, r.bound, cp, r.t_argmin
        )
        .unwrap();
    }
    out
}

fn field<T: FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {name} value `{raw}`")))
}

pub fn parse_csv_report(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(Error::Format(format!("missing CSV header `{CSV_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Format(format!(
                "line {line_no}: expected 8 columns, found {}",
                cols.len()
            )));
        }
        rows.push(CsvRow {
            sample_id: field(line_no, "sample_id", cols[0])?,
            label: field(line_no, "label", cols[1])?,
            predicted: field(line_no, "predicted", cols[2])?,
            hit: field(line_no, "hit", cols[3])?,
            gap_d: field(line_no, "gap_d", cols[4])?,
            bound: field(line_no, "bound", cols[5])?,
            cp_upper: if cols[6].is_empty() {
                None
            } else {
                Some(field(line_no, "cp_upper", cols[6])?)
            },
            t_argmin: field(line_no, "t_argmin", cols[7])?,
        });
    }
    Ok(rows)
}

pub fn parse_json_report(bytes: &[u8]) -> Result<CertificationReport> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("malformed report JSON: {e}")))
}

pub fn write_report(
    report: &CertificationReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, emit_report(report, format))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<CertificationReport> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_json_report(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A plain numeric table written as CSV: a header line, then one row per
/// x value. `None` cells are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map(|v| format!("{v:?}")).unwrap_or_default())
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format("empty table".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() {
                return Err(Error::Format(format!(
                    "row {}: expected {} cells, found {}",
                    i + 1,
                    columns.len(),
                    cells.len()
                )));
            }
            rows.push(
                cells
                    .iter()
                    .map(|c| {
                        if c.is_empty() {
                            Ok(None)
                        } else {
                            field(i + 2, "cell", c).map(Some)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Table { columns, rows })
    }
}

/// Two-column `epsilon,<name>` curve.
pub fn curve_table(name: &str, curve: &[CurvePoint]) -> Table {
    Table {
        columns: vec!["epsilon".into(), name.into()],
        rows: curve
            .iter()
            .map(|p| vec![Some(p.epsilon), Some(p.value)])
            .collect(),
    }
}

/// PCA (and CPCA where available) of several reports on a common grid,
/// one column per report and metric. Reports must describe the same
/// dataset.
pub fn merge_sweeps(reports: &[(String, CertificationReport)], eps_grid: &[f64]) -> Result<Table> {
    validate_eps_grid(eps_grid)?;
    let Some((_, first)) = reports.first() else {
        return Err(Error::invalid("no reports to merge"));
    };
    let mut columns = vec!["epsilon".to_string()];
    let mut series: Vec<Vec<CurvePoint>> = Vec::new();
    for (name, r) in reports {
        if r.dataset.digest != first.dataset.digest {
            return Err(Error::invalid(format!(
                "{name}: dataset digest {} differs from {}",
                r.dataset.digest, first.dataset.digest
            )));
        }
        columns.push(format!("pca[{name}]"));
        series.push(epsilon_sweep(&r.records(), eps_grid)?);
        if r.samples.iter().all(|s| s.cp.is_some()) {
            let outcomes: Vec<CPOutcome> = r.samples.iter().filter_map(|s| s.cp.clone()).collect();
            let hits: Vec<bool> = r.samples.iter().map(|s| s.record.hit).collect();
            columns.push(format!("cpca[{name}]"));
            series.push(cpca_sweep(&outcomes, &hits, eps_grid)?);
        }
    }
    let rows = eps_grid
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            std::iter::once(Some(e))
                .chain(series.iter().map(|s| Some(s[i].value)))
                .collect()
        })
        .collect();
    Ok(Table { columns, rows })
}

/// PCA against the number of transform draws `n`: one row per report,
/// sorted by `n`, one column per threshold.
pub fn pca_vs_n(reports: &[(String, CertificationReport)], eps_grid: &[f64]) -> Result<Table> {
    validate_eps_grid(eps_grid)?;
    if reports.is_empty() {
        return Err(Error::invalid("no reports to merge"));
    }
    let mut columns = vec!["n".to_string()];
    columns.extend(eps_grid.iter().map(|e| format!("pca@{e:?}")));
    let mut rows = Vec::new();
    for (_, r) in reports {
        let mut row = vec![Some(r.config.cert.n_samples as f64)];
        for p in epsilon_sweep(&r.records(), eps_grid)? {
            row.push(Some(p.value));
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    Ok(Table { columns, rows })
}
