//! Append-only per-run results store.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::lm::Prediction;
use crate::plan::{EvaluationUnit, NiahCell, RunManifest};
use crate::prompt::SettingKind;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const NIAH_FILE: &str = "niah.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const PROGRESS_FILE: &str = "progress.json";
pub const FAILURES_FILE: &str = "failures.json";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    /// Index into the (capped) test set.
    pub index: usize,
    pub gold: usize,
    pub prediction: Prediction,
    pub correct: bool,
}

/// Outcome of one evaluation unit: every test instance queried against one
/// context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub manifest_digest: String,
    pub unit: EvaluationUnit,
    pub task: String,
    pub setting: SettingKind,
    pub setting_label: String,
    /// Digest of the context and every query sent for the unit.
    pub prompt_hash: String,
    pub context_tokens: usize,
    /// Depth of the test task's first block; 0 when the context holds only it.
    pub depth: f64,
    pub stream_position: Option<usize>,
    pub n_instances: usize,
    pub n_correct: usize,
    pub n_no_match: usize,
    pub accuracy: f64,
    /// Some queries were answered by constrained generation.
    pub fallback: bool,
    pub outcomes: Vec<InstanceOutcome>,
}

impl UnitRecord {
    pub fn check(&self) -> Result<(), ReportError> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(ReportError::InvalidRecord(format!(
                "accuracy {} outside [0, 1]",
                self.accuracy
            )));
        }
        if self.n_correct > self.n_instances || self.outcomes.len() != self.n_instances {
            return Err(ReportError::InvalidRecord(format!(
                "{} correct of {} instances with {} outcomes",
                self.n_correct,
                self.n_instances,
                self.outcomes.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahRecord {
    pub manifest_digest: String,
    pub cell: NiahCell,
    pub length: usize,
    pub depth: f64,
    pub context_tokens: usize,
    /// Measured token offset of the needle over the haystack length.
    pub needle_depth: f64,
    pub prompt_hash: String,
    pub response: String,
    pub recall: f64,
}

#[derive(Debug)]
pub struct ResultsStore {
    dir: PathBuf,
    manifest: RunManifest,
    digest: String,
    records: Vec<UnitRecord>,
    index: HashMap<EvaluationUnit, usize>,
    niah: Vec<NiahRecord>,
    niah_index: HashMap<NiahCell, usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse a line-delimited file, dropping a torn final line left by an
/// interrupted append.
fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut good_len = 0;
    for line in raw.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(value) => out.push(value),
            Err(e) => {
                return Err(ReportError::InvalidRecord(format!(
                    "{}: {e}",
                    path.display()
                )))
            }
        }
        good_len += line.len();
    }
    if good_len != raw.len() {
        log::warn!("{}: discarding a partial trailing record", path.display());
        let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        file.set_len(good_len as u64).map_err(io_err(path))?;
    }
    Ok(out)
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut line = serde_json::to_string(value).map_err(|e| ReportError::InvalidRecord(e.to_string()))?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    file.write_all(line.as_bytes()).map_err(io_err(path))?;
    file.flush().map_err(io_err(path))
}

impl ResultsStore {
    /// Open or create the store for `manifest` in `dir`. An existing store
    /// must have been produced under the same manifest.
    pub fn open(dir: &Path, manifest: &RunManifest) -> Result<Self, ReportError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let digest = manifest.digest();
        if manifest_path.exists() {
            let existing = read_manifest(&manifest_path)?;
            if existing.digest() != digest {
                return Err(ReportError::ManifestMismatch {
                    expected: existing.digest(),
                    found: digest,
                });
            }
        } else {
            fs::write(&manifest_path, manifest.to_json()).map_err(io_err(&manifest_path))?;
        }
        Self::load(dir, manifest.clone())
    }

    /// Open an existing run directory.
    pub fn open_existing(dir: &Path) -> Result<Self, ReportError> {
        let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
        Self::load(dir, manifest)
    }

    fn load(dir: &Path, manifest: RunManifest) -> Result<Self, ReportError> {
        let digest = manifest.digest();
        let records: Vec<UnitRecord> = read_lines(&dir.join(RESULTS_FILE))?;
        let niah: Vec<NiahRecord> = read_lines(&dir.join(NIAH_FILE))?;
        let mut index = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            if record.manifest_digest != digest {
                return Err(ReportError::ManifestMismatch {
                    expected: digest,
                    found: record.manifest_digest.clone(),
                });
            }
            index.insert(record.unit, i);
        }
        let mut niah_index = HashMap::with_capacity(niah.len());
        for (i, record) in niah.iter().enumerate() {
            if record.manifest_digest != digest {
                return Err(ReportError::ManifestMismatch {
                    expected: digest,
                    found: record.manifest_digest.clone(),
                });
            }
            niah_index.insert(record.cell, i);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            digest,
            records,
            index,
            niah,
            niah_index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn manifest_digest(&self) -> &str {
        &self.digest
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn niah_records(&self) -> &[NiahRecord] {
        &self.niah
    }

    pub fn get(&self, unit: &EvaluationUnit) -> Option<&UnitRecord> {
        self.index.get(unit).map(|&i| &self.records[i])
    }

    pub fn contains(&self, unit: &EvaluationUnit) -> bool {
        self.index.contains_key(unit)
    }

    pub fn contains_niah(&self, cell: &NiahCell) -> bool {
        self.niah_index.contains_key(cell)
    }

    /// Append a record. Re-recording a unit with the same prompt hash is a
    /// no-op and returns `false`.
    pub fn record(&mut self, record: UnitRecord) -> Result<bool, ReportError> {
        if record.manifest_digest != self.digest {
            return Err(ReportError::ManifestMismatch {
                expected: self.digest.clone(),
                found: record.manifest_digest,
            });
        }
        record.check()?;
        if let Some(&i) = self.index.get(&record.unit) {
            if self.records[i].prompt_hash == record.prompt_hash {
                return Ok(false);
            }
            return Err(ReportError::InvalidRecord(format!(
                "unit {:?} already recorded with a different prompt",
                record.unit
            )));
        }
        append_line(&self.dir.join(RESULTS_FILE), &record)?;
        self.index.insert(record.unit, self.records.len());
        self.records.push(record);
        Ok(true)
    }

    pub fn record_niah(&mut self, record: NiahRecord) -> Result<bool, ReportError> {
        if record.manifest_digest != self.digest {
            return Err(ReportError::ManifestMismatch {
                expected: self.digest.clone(),
                found: record.manifest_digest,
            });
        }
        if !(0.0..=1.0).contains(&record.recall) {
            return Err(ReportError::InvalidRecord(format!("recall {} outside [0, 1]", record.recall)));
        }
        if let Some(&i) = self.niah_index.get(&record.cell) {
            if self.niah[i].prompt_hash == record.prompt_hash {
                return Ok(false);
            }
            return Err(ReportError::InvalidRecord(format!(
                "cell {:?} already recorded with a different prompt",
                record.cell
            )));
        }
        append_line(&self.dir.join(NIAH_FILE), &record)?;
        self.niah_index.insert(record.cell, self.niah.len());
        self.niah.push(record);
        Ok(true)
    }

    /// Write a pretty JSON artifact into the run directory.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, ReportError> {
        let path = self.dir.join(name);
        let mut body =
            serde_json::to_string_pretty(value).map_err(|e| ReportError::InvalidRecord(e.to_string()))?;
        body.push('\n');
        fs::write(&path, body).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Append a line to a side file that is not part of the results.
    pub fn append_side<T: Serialize>(&self, name: &str, value: &T) -> Result<(), ReportError> {
        append_line(&self.dir.join(name), value)
    }

    pub fn reports_dir(&self) -> Result<PathBuf, ReportError> {
        let dir = self.dir.join(REPORTS_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ReportError> {
    if !path.exists() {
        return Err(ReportError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        });
    }
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    RunManifest::from_json(&raw).map_err(|e| ReportError::InvalidRecord(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{make_plan, Arm, Mode, PlanConfig};

    pub(crate) fn manifest() -> RunManifest {
        let mut c = PlanConfig::new(Mode::ScaleShot, "tasks");
        c.n_task = 2;
        c.grid = vec![1];
        c.permutations = 1;
        c.replicates = 2;
        make_plan(&c, &["a".to_string(), "b".to_string()]).unwrap()
    }

    pub(crate) fn record(m: &RunManifest, task_index: usize, replicate_index: usize, accuracy: f64) -> UnitRecord {
        UnitRecord {
            manifest_digest: m.digest(),
            unit: EvaluationUnit {
                grid_index: 0,
                arm: Arm::Single,
                task_index,
                permutation_index: None,
                replicate_index,
                setting_index: None,
            },
            task: m.task_names[task_index].clone(),
            setting: SettingKind::Baseline,
            setting_label: "baseline".into(),
            prompt_hash: format!("h{task_index}{replicate_index}"),
            context_tokens: 10,
            depth: 0.0,
            stream_position: None,
            n_instances: 4,
            n_correct: (accuracy * 4.0) as usize,
            n_no_match: 0,
            accuracy,
            fallback: false,
            outcomes: (0..4)
                .map(|i| InstanceOutcome {
                    index: i,
                    gold: 0,
                    prediction: Prediction::Option(0),
                    correct: (i as f64) < accuracy * 4.0,
                })
                .collect(),
        }
    }

    #[test]
    fn append_reload_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        let mut store = ResultsStore::open(dir.path(), &m).unwrap();
        assert!(store.record(record(&m, 0, 0, 0.5)).unwrap());
        assert!(!store.record(record(&m, 0, 0, 0.5)).unwrap());
        assert!(store.record(record(&m, 1, 0, 1.0)).unwrap());
        let bytes = fs::read(dir.path().join(RESULTS_FILE)).unwrap();
        let reopened = ResultsStore::open(dir.path(), &m).unwrap();
        assert_eq!(reopened.records().len(), 2);
        assert_eq!(reopened.records(), store.records());
        assert_eq!(fs::read(dir.path().join(RESULTS_FILE)).unwrap(), bytes);
    }

    #[test]
    fn out_of_range_accuracy_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        let mut store = ResultsStore::open(dir.path(), &m).unwrap();
        let mut bad = record(&m, 0, 0, 1.0);
        bad.accuracy = 1.2;
        assert!(matches!(store.record(bad), Err(ReportError::InvalidRecord(_))));
        assert!(store.records().is_empty());
    }

    #[test]
    fn manifest_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        ResultsStore::open(dir.path(), &m).unwrap();
        let mut other = m.clone();
        other.seed = 99;
        assert!(matches!(
            ResultsStore::open(dir.path(), &other),
            Err(ReportError::ManifestMismatch { .. })
        ));
        let mut store = ResultsStore::open(dir.path(), &m).unwrap();
        let mut foreign = record(&m, 0, 0, 1.0);
        foreign.manifest_digest = other.digest();
        assert!(matches!(store.record(foreign), Err(ReportError::ManifestMismatch { .. })));
    }

    #[test]
    fn torn_trailing_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        let mut store = ResultsStore::open(dir.path(), &m).unwrap();
        store.record(record(&m, 0, 0, 0.5)).unwrap();
        let path = dir.path().join(RESULTS_FILE);
        let clean = fs::read(&path).unwrap();
        let mut torn = clean.clone();
        torn.extend_from_slice(b"{\"manifest_digest\":");
        fs::write(&path, torn).unwrap();
        let reopened = ResultsStore::open(dir.path(), &m).unwrap();
        assert_eq!(reopened.records().len(), 1);
        assert_eq!(fs::read(&path).unwrap(), clean);
    }
}
