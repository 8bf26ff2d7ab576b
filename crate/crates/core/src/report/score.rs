//! Accuracy tables, verdicts and run summaries.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::store::{NiahRecord, UnitRecord};
use super::ReportError;
use crate::plan::{Arm, Mode, RunManifest};
use crate::prompt::SettingKind;
use crate::stats::{self, StatsError};
use crate::{CellVerdict64, EffectivenessSplit64, PassRateSummary64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub alpha: f64,
    /// Shot count compared against 1-shot for the effectiveness split.
    pub effectiveness_shots: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            alpha: stats::DEFAULT_ALPHA,
            effectiveness_shots: 4,
        }
    }
}

/// One unit's accuracy: the normative tabular form of the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub grid_index: usize,
    pub arm: Arm,
    pub task_index: usize,
    pub task: String,
    pub permutation: Option<usize>,
    pub replicate: usize,
    pub setting_index: Option<usize>,
    pub setting: String,
    pub accuracy: f64,
    pub context_tokens: usize,
    pub depth: f64,
    pub stream_position: Option<usize>,
}

impl AccuracyRow {
    fn key(&self) -> (usize, Arm, usize, Option<usize>, usize, Option<usize>) {
        (
            self.grid_index,
            self.arm,
            self.task_index,
            self.permutation,
            self.replicate,
            self.setting_index,
        )
    }
}

/// Rows in canonical unit order.
pub fn accuracy_rows(records: &[UnitRecord]) -> Vec<AccuracyRow> {
    let mut rows: Vec<AccuracyRow> = records
        .iter()
        .map(|r| AccuracyRow {
            grid_index: r.unit.grid_index,
            arm: r.unit.arm,
            task_index: r.unit.task_index,
            task: r.task.clone(),
            permutation: r.unit.permutation_index,
            replicate: r.unit.replicate_index,
            setting_index: r.unit.setting_index,
            setting: r.setting_label.clone(),
            accuracy: r.accuracy,
            context_tokens: r.context_tokens,
            depth: r.depth,
            stream_position: r.stream_position,
        })
        .collect();
    rows.sort_by_key(AccuracyRow::key);
    rows
}

pub fn write_accuracy_csv<W: Write>(writer: W, rows: &[AccuracyRow]) -> Result<(), ReportError> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush().map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_accuracy_csv<R: Read>(reader: R) -> Result<Vec<AccuracyRow>, ReportError> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in csv.deserialize() {
        rows.push(row?);
    }
    rows.sort_by_key(AccuracyRow::key);
    Ok(rows)
}

/// Verdicts of one arm against its reference at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grid_index: usize,
    pub n_task: usize,
    pub n_shot: usize,
    /// `lifelong`, or the controlled setting label.
    pub label: String,
    pub setting_index: Option<usize>,
    pub permutations: Vec<Vec<usize>>,
    pub mean_context_tokens: f64,
    pub cells: Vec<CellVerdict64>,
    /// Mean measured depth per cell, aligned with `cells`.
    pub cell_depths: Vec<Option<f64>>,
    /// `None` until every cell is complete.
    pub summary: Option<PassRateSummary64>,
}

/// The per-column triple of s-acc, l-acc and pass rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub grid_index: usize,
    pub n_task: usize,
    pub n_shot: usize,
    pub label: String,
    pub mean_context_tokens: f64,
    pub s_acc: Option<f64>,
    pub l_acc: Option<f64>,
    /// Percent of passing cells.
    pub pass: Option<f64>,
    pub n_cells: usize,
    pub n_fail: usize,
    pub n_excel: usize,
    pub n_incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahCellSummary {
    pub length_index: usize,
    pub depth_index: usize,
    pub length: usize,
    pub depth: f64,
    pub context_tokens: usize,
    pub needle_depth: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahSummary {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub cells: Vec<NiahCellSummary>,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub mode: Mode,
    pub alpha: f64,
    pub columns: Vec<GridSummary>,
    pub effectiveness: Option<EffectivenessSplit64>,
    pub niah: Option<NiahSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub rows: Vec<AccuracyRow>,
    pub comparisons: Vec<Comparison>,
    pub summary: RunSummary,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

struct Lookup<'a> {
    rows: HashMap<(usize, Arm, usize, Option<usize>, usize, Option<usize>), &'a AccuracyRow>,
}

impl<'a> Lookup<'a> {
    fn new(rows: &'a [AccuracyRow]) -> Self {
        Self {
            rows: rows.iter().map(|r| (r.key(), r)).collect(),
        }
    }

    fn get(
        &self,
        grid: usize,
        arm: Arm,
        task: usize,
        perm: Option<usize>,
        rep: usize,
        setting: Option<usize>,
    ) -> Option<&'a AccuracyRow> {
        self.rows.get(&(grid, arm, task, perm, rep, setting)).copied()
    }
}

#[allow(clippy::too_many_arguments)]
fn compare<'a>(
    manifest: &RunManifest,
    grid_index: usize,
    label: String,
    setting_index: Option<usize>,
    reference: &dyn Fn(usize, usize) -> Option<&'a AccuracyRow>,
    treated: &dyn Fn(usize, usize, usize) -> Option<&'a AccuracyRow>,
    alpha: f64,
) -> Result<Comparison, ReportError> {
    let point = &manifest.grid[grid_index];
    let r_count = manifest.n_replicates;
    let mut cells = Vec::new();
    let mut cell_depths = Vec::new();
    let mut tokens = Vec::new();
    for t in 0..point.n_task {
        let single: Vec<Option<f64>> = (0..r_count).map(|r| reference(t, r).map(|x| x.accuracy)).collect();
        for p in 0..point.permutations.len() {
            let rows: Vec<Option<&AccuracyRow>> = (0..r_count).map(|r| treated(t, p, r)).collect();
            let lifelong: Vec<Option<f64>> = rows.iter().map(|x| x.map(|x| x.accuracy)).collect();
            tokens.extend(rows.iter().flatten().map(|x| x.context_tokens as f64));
            cell_depths.push(mean(rows.iter().flatten().map(|x| x.depth)));
            cells.push(stats::cell_verdict(
                &manifest.task_names[t],
                t,
                p,
                &single,
                &lifelong,
                alpha,
            )?);
        }
    }
    let names = &manifest.task_names[..point.n_task];
    let summary = match stats::pass_rate(&cells, names, &point.permutations) {
        Ok(summary) => Some(summary),
        Err(StatsError::MissingCells(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Comparison {
        grid_index,
        n_task: point.n_task,
        n_shot: point.n_shot,
        label,
        setting_index,
        permutations: point.permutations.clone(),
        mean_context_tokens: mean(tokens).unwrap_or(0.0),
        cells,
        cell_depths,
        summary,
    })
}

fn column(c: &Comparison, s_acc: Option<f64>, l_acc: Option<f64>) -> GridSummary {
    let n_incomplete = c.cells.iter().filter(|v| v.verdict == stats::Verdict::Incomplete).count();
    GridSummary {
        grid_index: c.grid_index,
        n_task: c.n_task,
        n_shot: c.n_shot,
        label: c.label.clone(),
        mean_context_tokens: c.mean_context_tokens,
        s_acc,
        l_acc,
        pass: c.summary.as_ref().map(|s| s.overall * 100.0),
        n_cells: c.cells.len(),
        n_fail: c.cells.iter().filter(|v| v.verdict == stats::Verdict::Fail).count(),
        n_excel: c.cells.iter().filter(|v| v.verdict == stats::Verdict::Excel).count(),
        n_incomplete,
    }
}

/// Verdicts and summaries from accuracy rows. The same function scores the
/// store and a re-read CSV bundle, so both agree exactly.
pub fn score_rows(
    manifest: &RunManifest,
    mut rows: Vec<AccuracyRow>,
    niah: Option<NiahSummary>,
    options: &ScoreOptions,
) -> Result<Scored, ReportError> {
    rows.sort_by_key(AccuracyRow::key);
    if rows.is_empty() && niah.is_none() {
        return Err(StatsError::MissingCells(vec!["no results recorded".to_string()]).into());
    }
    let lookup = Lookup::new(&rows);
    let mut comparisons = Vec::new();
    let mut columns = Vec::new();
    let mut effectiveness = None;
    match manifest.mode {
        Mode::ScaleShot | Mode::ScaleTask => {
            for g in 0..manifest.grid.len() {
                let reference = |t: usize, r: usize| lookup.get(g, Arm::Single, t, None, r, None);
                let treated = |t: usize, p: usize, r: usize| lookup.get(g, Arm::Lifelong, t, Some(p), r, None);
                let c = compare(manifest, g, "lifelong".to_string(), None, &reference, &treated, options.alpha)?;
                let in_grid = |arm: Arm| {
                    mean(rows.iter().filter(|x| x.grid_index == g && x.arm == arm).map(|x| x.accuracy))
                };
                columns.push(column(&c, in_grid(Arm::Single), in_grid(Arm::Lifelong)));
                comparisons.push(c);
            }
            if manifest.mode == Mode::ScaleShot {
                effectiveness = effectiveness_split(manifest, &lookup, options)?;
            }
        }
        Mode::Controlled => {
            let baseline = manifest
                .controlled_settings
                .iter()
                .position(|s| s.kind == SettingKind::Baseline);
            let setting_mean = |s: usize| {
                mean(rows.iter().filter(|x| x.setting_index == Some(s)).map(|x| x.accuracy))
            };
            for (s, setting) in manifest.controlled_settings.iter().enumerate() {
                if Some(s) == baseline {
                    continue;
                }
                let Some(b) = baseline else {
                    columns.push(GridSummary {
                        grid_index: 0,
                        n_task: manifest.grid[0].n_task,
                        n_shot: manifest.grid[0].n_shot,
                        label: setting.label(),
                        mean_context_tokens: mean(
                            rows.iter().filter(|x| x.setting_index == Some(s)).map(|x| x.context_tokens as f64),
                        )
                        .unwrap_or(0.0),
                        s_acc: None,
                        l_acc: setting_mean(s),
                        pass: None,
                        n_cells: 0,
                        n_fail: 0,
                        n_excel: 0,
                        n_incomplete: 0,
                    });
                    continue;
                };
                let reference = |t: usize, r: usize| lookup.get(0, Arm::Controlled, t, None, r, Some(b));
                let treated = |t: usize, p: usize, r: usize| lookup.get(0, Arm::Controlled, t, Some(p), r, Some(s));
                let c = compare(manifest, 0, setting.label(), Some(s), &reference, &treated, options.alpha)?;
                columns.push(column(&c, setting_mean(b), setting_mean(s)));
                comparisons.push(c);
            }
        }
        Mode::Niah => {}
    }
    Ok(Scored {
        rows,
        comparisons,
        summary: RunSummary {
            run_id: manifest.run_id.clone(),
            mode: manifest.mode,
            alpha: options.alpha,
            columns,
            effectiveness,
            niah,
        },
    })
}

fn effectiveness_split(
    manifest: &RunManifest,
    lookup: &Lookup<'_>,
    options: &ScoreOptions,
) -> Result<Option<EffectivenessSplit64>, ReportError> {
    let find = |shots: usize| manifest.grid.iter().position(|g| g.n_shot == shots);
    let (Some(one), Some(k)) = (find(1), find(options.effectiveness_shots)) else {
        return Ok(None);
    };
    if one == k {
        return Ok(None);
    }
    let per_task = |g: usize| -> Option<Vec<Vec<f64>>> {
        (0..manifest.grid[g].n_task)
            .map(|t| {
                (0..manifest.n_replicates)
                    .map(|r| lookup.get(g, Arm::Single, t, None, r, None).map(|x| x.accuracy))
                    .collect::<Option<Vec<f64>>>()
            })
            .collect()
    };
    let (Some(a1), Some(ak)) = (per_task(one), per_task(k)) else {
        return Ok(None);
    };
    let names = &manifest.task_names[..a1.len()];
    Ok(Some(stats::icl_effectiveness_split(names, &a1, &ak, options.alpha)?))
}

pub fn summarize_niah(manifest: &RunManifest, records: &[NiahRecord]) -> Option<NiahSummary> {
    let plan = manifest.niah.as_ref()?;
    let mut cells: Vec<NiahCellSummary> = records
        .iter()
        .map(|r| NiahCellSummary {
            length_index: r.cell.length_index,
            depth_index: r.cell.depth_index,
            length: r.length,
            depth: r.depth,
            context_tokens: r.context_tokens,
            needle_depth: r.needle_depth,
            recall: r.recall,
        })
        .collect();
    cells.sort_by_key(|c| (c.length_index, c.depth_index));
    Some(NiahSummary {
        lengths: plan.lengths.clone(),
        depths: plan.depths.clone(),
        mean_recall: mean(cells.iter().map(|c| c.recall)).unwrap_or(0.0),
        cells,
    })
}
