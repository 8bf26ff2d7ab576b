//! Results persistence, scoring tables and visual reports.

mod diagnostic;
mod heatmap;
mod score;
mod store;
mod svg;

use std::path::PathBuf;

use thiserror::Error;

use crate::stats::StatsError;

pub use diagnostic::{diagnostic_csv, diagnostic_svg, histogram_csv, marginals_csv, strips_csv, DiagnosticMatrix};
pub use heatmap::{heatmap_csv, heatmap_svg, recall_heatmap, verdict_heatmap, HeatCell, HeatmapGrid, HeatmapKind};
pub use score::{
    accuracy_rows, read_accuracy_csv, score_rows, summarize_niah, write_accuracy_csv, AccuracyRow, Comparison,
    GridSummary, NiahCellSummary, NiahSummary, RunSummary, ScoreOptions, Scored,
};
pub use store::{
    read_manifest, InstanceOutcome, NiahRecord, ResultsStore, UnitRecord, FAILURES_FILE, MANIFEST_FILE, NIAH_FILE,
    PROGRESS_FILE, REPORTS_DIR, RESULTS_FILE, SUMMARY_FILE, TIMINGS_FILE, VERDICTS_FILE,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store was produced under manifest {expected}, got {found}")]
    ManifestMismatch { expected: String, found: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("nothing to plot")]
    EmptyGrid,
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Csv(e.to_string())
    }
}

/// Write every report for a scored run into `reports/`. Returns the files
/// written, in a fixed order.
pub fn emit_reports(store: &ResultsStore, scored: &Scored) -> Result<Vec<PathBuf>, ReportError> {
    use std::fs;
    let dir = store.reports_dir()?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), ReportError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
        Ok(())
    };
    let title = format!("{} ({})", store.manifest().run_id, store.manifest().mode);
    if let Some(niah) = &scored.summary.niah {
        let grid = recall_heatmap(niah)?;
        put("heatmap.csv", heatmap_csv(&grid))?;
        put("heatmap.svg", heatmap_svg(&grid, &title))?;
        return Ok(written);
    }
    let grid = verdict_heatmap(&scored.comparisons)?;
    put("heatmap.csv", heatmap_csv(&grid))?;
    put("heatmap.svg", heatmap_svg(&grid, &title))?;
    let matrices: Vec<DiagnosticMatrix> = scored
        .comparisons
        .iter()
        .filter_map(|c| DiagnosticMatrix::from_comparison(c, &store.manifest().task_names))
        .collect();
    put("diagnostic.csv", diagnostic_csv(&matrices))?;
    put("diagnostic_strips.csv", strips_csv(&matrices))?;
    put("marginals.csv", marginals_csv(&scored.comparisons))?;
    put("histogram.csv", histogram_csv(&scored.comparisons))?;
    put("diagnostic.svg", diagnostic_svg(&matrices, &title))?;
    let mut accuracies = Vec::new();
    write_accuracy_csv(&mut accuracies, &scored.rows)?;
    put("accuracies.csv", String::from_utf8(accuracies).expect("csv is utf-8"))?;
    Ok(written)
}
