//! Task-by-position diagnostics: verdict matrices, permutation strips,
//! marginal pass rates and failure histograms.

use std::fmt::Write;

use super::score::Comparison;
use super::svg::{diverging, Svg};
use crate::stats::Verdict;

/// Verdicts of one comparison arranged by task (rows) and stream position
/// (columns). A task/position pair no permutation visited is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticMatrix {
    pub label: String,
    pub grid_index: usize,
    pub tasks: Vec<String>,
    /// Row-major `n_task x n_task`; each entry lists the verdicts observed.
    pub entries: Vec<Vec<Verdict>>,
    /// One row per permutation: verdicts in stream order.
    pub strips: Vec<Vec<(usize, Verdict)>>,
}

impl DiagnosticMatrix {
    pub fn from_comparison(c: &Comparison, task_names: &[String]) -> Option<Self> {
        if c.cells.is_empty() || c.n_task == 0 {
            return None;
        }
        let n = c.n_task;
        let p_count = c.permutations.len();
        let mut entries = vec![Vec::new(); n * n];
        let mut strips: Vec<Vec<(usize, Verdict)>> = c
            .permutations
            .iter()
            .map(|perm| perm.iter().map(|&t| (t, Verdict::Incomplete)).collect())
            .collect();
        for (i, cell) in c.cells.iter().enumerate() {
            let (t, p) = (i / p_count, i % p_count);
            let position = c.permutations[p].iter().position(|&x| x == t)?;
            entries[t * n + position].push(cell.verdict);
            strips[p][position].1 = cell.verdict;
        }
        Some(Self {
            label: c.label.clone(),
            grid_index: c.grid_index,
            tasks: task_names.iter().take(n).cloned().collect(),
            entries,
            strips,
        })
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    /// Mean verdict code at `(task, position)`, `None` when unvisited or
    /// incomplete.
    pub fn value(&self, task: usize, position: usize) -> Option<f64> {
        let verdicts = &self.entries[task * self.n() + position];
        let codes: Option<Vec<i8>> = verdicts.iter().map(|v| v.code()).collect();
        let codes = codes.filter(|c| !c.is_empty())?;
        Some(codes.iter().map(|&c| c as f64).sum::<f64>() / codes.len() as f64)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite())
        .map(|v| format!("{v}"))
        .unwrap_or_else(|| "NA".to_string())
}

pub fn diagnostic_csv(matrices: &[DiagnosticMatrix]) -> String {
    let mut out = String::from("label,grid_index,task,position,verdicts,value\n");
    for m in matrices {
        for (t, task) in m.tasks.iter().enumerate() {
            for position in 0..m.n() {
                let verdicts: Vec<&str> = m.entries[t * m.n() + position].iter().map(|v| v.as_str()).collect();
                let _ = writeln!(
                    out,
                    "\"{}\",{},{},{},{},{}",
                    m.label,
                    m.grid_index,
                    task,
                    position,
                    if verdicts.is_empty() { "NA".to_string() } else { verdicts.join("|") },
                    fmt_opt(m.value(t, position))
                );
            }
        }
    }
    out
}

pub fn strips_csv(matrices: &[DiagnosticMatrix]) -> String {
    let mut out = String::from("label,grid_index,permutation,position,task,verdict\n");
    for m in matrices {
        for (p, strip) in m.strips.iter().enumerate() {
            for (position, (t, verdict)) in strip.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "\"{}\",{},{},{},{},{}",
                    m.label,
                    m.grid_index,
                    p,
                    position,
                    m.tasks[*t],
                    verdict.as_str()
                );
            }
        }
    }
    out
}

pub fn marginals_csv(comparisons: &[Comparison]) -> String {
    let mut out = String::from("label,grid_index,axis,key,passed,total,rate\n");
    for c in comparisons {
        let Some(s) = &c.summary else { continue };
        let mut row = |axis: &str, key: String, m: &crate::stats::Marginal<f64>| {
            let _ = writeln!(
                out,
                "\"{}\",{},{},{},{},{},{}",
                c.label,
                c.grid_index,
                axis,
                key,
                m.passed,
                m.total,
                fmt_opt(Some(m.rate))
            );
        };
        for (task, m) in &s.by_task {
            row("task", task.clone(), m);
        }
        for (i, m) in s.by_index.iter().enumerate() {
            row("index", i.to_string(), m);
        }
        for (p, m) in s.by_permutation.iter().enumerate() {
            row("permutation", p.to_string(), m);
        }
    }
    out
}

pub fn histogram_csv(comparisons: &[Comparison]) -> String {
    let mut out = String::from("label,grid_index,k,tasks_failing,tasks_excelling\n");
    for c in comparisons {
        let Some(s) = &c.summary else { continue };
        for (k, (fail, excel)) in s.fail_histogram.iter().zip(&s.excel_histogram).enumerate() {
            let _ = writeln!(out, "\"{}\",{},{},{},{}", c.label, c.grid_index, k, fail, excel);
        }
    }
    out
}

/// One panel per matrix: the task x position grid with its permutation
/// strips beneath.
pub fn diagnostic_svg(matrices: &[DiagnosticMatrix], title: &str) -> String {
    let cell = 14.0;
    let (left, gap) = (110.0, 30.0);
    let panel_height = |m: &DiagnosticMatrix| cell * (m.n() + m.strips.len()) as f64 + 3.0 * gap;
    let width = left + cell * matrices.iter().map(|m| m.n()).max().unwrap_or(1) as f64 + 20.0;
    let height = 40.0 + matrices.iter().map(panel_height).sum::<f64>();
    let mut svg = Svg::new(width.max(240.0), height);
    svg.text(10.0, 20.0, 13.0, "start", title);
    let mut top = 40.0;
    for m in matrices {
        svg.text(10.0, top + 10.0, 11.0, "start", &format!("{} (grid {})", m.label, m.grid_index));
        top += gap;
        for (t, task) in m.tasks.iter().enumerate() {
            let y = top + cell * t as f64;
            svg.text(left - 4.0, y + cell * 0.75, 9.0, "end", task);
            for position in 0..m.n() {
                let value = m.value(t, position);
                let tip = format!("{task} @ {position}: {}", fmt_opt(value));
                svg.rect(left + cell * position as f64, y, cell, cell, &diverging(value), Some(&tip));
            }
        }
        top += cell * m.n() as f64 + gap;
        for (p, strip) in m.strips.iter().enumerate() {
            let y = top + cell * p as f64;
            svg.text(left - 4.0, y + cell * 0.75, 9.0, "end", &format!("perm {p}"));
            for (position, (t, verdict)) in strip.iter().enumerate() {
                let value = verdict.code().map(f64::from);
                let tip = format!("{} @ {position}: {}", m.tasks[*t], verdict.as_str());
                svg.rect(left + cell * position as f64, y, cell, cell, &diverging(value), Some(&tip));
            }
        }
        top += cell * m.strips.len() as f64 + gap;
    }
    svg.finish()
}
