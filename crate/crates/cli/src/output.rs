use std::path::{Path, PathBuf};

use mimo_waveform::numerics::c64;
use mimo_waveform::ComplexMatrix;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Outcome of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Failed(String),
}

impl PointStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PointStatus::Ok)
    }

    fn label(&self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub index: usize,
    pub values: Vec<f64>,
    pub status: PointStatus,
}

/// Result table: an `index` column, the named value columns, then `status`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Row>,
}

/// 17 significant digits, round-trip exact for `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    /// Looks up a value column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["index"];
        header.extend(&self.columns);
        header.push("status");
        w.write_record(&header).expect("writing to memory");
        for row in &self.rows {
            let mut record = vec![row.index.to_string()];
            record.extend(row.values.iter().map(|&v| format_float(v)));
            record.push(row.status.label().into());
            w.write_record(&record).expect("writing to memory");
        }
        w.into_inner().expect("flushing to memory")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointManifest {
    pub index: usize,
    pub sweep_value: f64,
    #[serde(flatten)]
    pub status: PointStatus,
    /// Convergence of the robust design; absent when the point failed
    /// before the optimizer finished.
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub points: Vec<PointManifest>,
}

/// Waveform on disk: column-major interleaved `(re, im)` pairs, matching
/// `vec(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub relative_entropy: f64,
    pub snr: f64,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl WaveformFile {
    pub fn pack(x: &ComplexMatrix) -> (usize, usize, Vec<f64>) {
        let data = x.iter().flat_map(|z| [z.re, z.im]).collect();
        (x.nrows(), x.ncols(), data)
    }

    pub fn matrix(&self) -> Result<ComplexMatrix, String> {
        if self.data.len() != 2 * self.rows * self.cols {
            return Err(format!(
                "{} numbers for a {}x{} waveform",
                self.data.len(),
                self.rows,
                self.cols
            ));
        }
        let entries: Vec<_> = self.data.chunks_exact(2).map(|p| c64(p[0], p[1])).collect();
        Ok(ComplexMatrix::from_column_slice(
            self.rows, self.cols, &entries,
        ))
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `results.csv` → `results.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

/// `results.csv` → `results.waveform.json`.
pub fn waveform_path(csv: &Path) -> PathBuf {
    csv.with_extension("waveform.json")
}
