//! Pass/fail heatmaps over context length and depth, and NIAH recall maps.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::score::{Comparison, NiahSummary};
use super::svg::{diverging, Svg};
use super::ReportError;
use crate::stats::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapKind {
    /// Mean verdict code: FAIL -1, PASS 0, EXCEL +1.
    Verdict,
    /// Token recall in `[0, 1]`.
    Recall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub x: usize,
    pub y: usize,
    pub mean_depth: Option<f64>,
    pub n_cells: usize,
    pub n_fail: usize,
    pub n_pass: usize,
    pub n_excel: usize,
    /// `None` renders as the NA mask.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub kind: HeatmapKind,
    pub x_labels: Vec<String>,
    pub y_labels: Vec<String>,
    /// Row-major over `(x, y)`.
    pub cells: Vec<HeatCell>,
}

impl HeatmapGrid {
    pub fn cell(&self, x: usize, y: usize) -> &HeatCell {
        &self.cells[x * self.y_labels.len() + y]
    }
}

fn tokens_label(tokens: f64) -> String {
    if tokens >= 1000.0 {
        format!("{:.1}k", tokens / 1000.0)
    } else {
        format!("{tokens:.0}")
    }
}

fn x_labels(comparisons: &[Comparison]) -> Vec<String> {
    let controlled = comparisons.iter().all(|c| c.setting_index.is_some());
    let shots_vary = comparisons.windows(2).any(|w| w[0].n_shot != w[1].n_shot);
    comparisons
        .iter()
        .map(|c| {
            let tokens = tokens_label(c.mean_context_tokens);
            if controlled {
                c.label.clone()
            } else if shots_vary {
                format!("{}-shot ({tokens})", c.n_shot)
            } else {
                format!("{} tasks ({tokens})", c.n_task)
            }
        })
        .collect()
}

/// Verdicts binned by the tested task's stream position. With `n_task`
/// tasks and `B` rows, position `i` lands in row `i * B / n_task`, so row 0
/// is the front of the context.
pub fn verdict_heatmap(comparisons: &[Comparison]) -> Result<HeatmapGrid, ReportError> {
    let bins = comparisons.iter().map(|c| c.n_task).min().ok_or(ReportError::EmptyGrid)?;
    if bins == 0 {
        return Err(ReportError::EmptyGrid);
    }
    let mut cells = Vec::new();
    let mut depth_sums = vec![(0.0, 0usize); bins];
    for (x, c) in comparisons.iter().enumerate() {
        let p_count = c.permutations.len();
        let mut acc: Vec<(Vec<i8>, usize, [usize; 3], f64, usize)> = vec![(Vec::new(), 0, [0; 3], 0.0, 0); bins];
        for (i, cell) in c.cells.iter().enumerate() {
            let t = i / p_count;
            let p = i % p_count;
            let Some(position) = c.permutations[p].iter().position(|&x| x == t) else {
                continue;
            };
            let bin = position * bins / c.n_task;
            let entry = &mut acc[bin];
            entry.1 += 1;
            if let Some(code) = cell.verdict.code() {
                entry.0.push(code);
            }
            match cell.verdict {
                Verdict::Fail => entry.2[0] += 1,
                Verdict::Pass => entry.2[1] += 1,
                Verdict::Excel => entry.2[2] += 1,
                Verdict::Incomplete => {}
            }
            if let Some(d) = c.cell_depths.get(i).copied().flatten() {
                entry.3 += d;
                entry.4 += 1;
            }
        }
        for (y, (codes, n, counts, depth, nd)) in acc.into_iter().enumerate() {
            let mean_depth = (nd > 0).then(|| depth / nd as f64);
            if let Some(d) = mean_depth {
                depth_sums[y].0 += d;
                depth_sums[y].1 += 1;
            }
            let value = (!codes.is_empty() && codes.len() == n)
                .then(|| codes.iter().map(|&c| c as f64).sum::<f64>() / codes.len() as f64);
            cells.push(HeatCell {
                x,
                y,
                mean_depth,
                n_cells: n,
                n_fail: counts[0],
                n_pass: counts[1],
                n_excel: counts[2],
                value,
            });
        }
    }
    let y_labels = depth_sums
        .iter()
        .enumerate()
        .map(|(y, (sum, n))| {
            if *n > 0 {
                format!("{:.0}%", 100.0 * sum / *n as f64)
            } else {
                format!("bin {y}")
            }
        })
        .collect();
    Ok(HeatmapGrid {
        kind: HeatmapKind::Verdict,
        x_labels: x_labels(comparisons),
        y_labels,
        cells,
    })
}

pub fn recall_heatmap(niah: &NiahSummary) -> Result<HeatmapGrid, ReportError> {
    if niah.lengths.is_empty() || niah.depths.is_empty() {
        return Err(ReportError::EmptyGrid);
    }
    let mut cells = Vec::new();
    for x in 0..niah.lengths.len() {
        for y in 0..niah.depths.len() {
            let found = niah.cells.iter().find(|c| c.length_index == x && c.depth_index == y);
            cells.push(HeatCell {
                x,
                y,
                mean_depth: found.map(|c| c.needle_depth),
                n_cells: usize::from(found.is_some()),
                n_fail: 0,
                n_pass: 0,
                n_excel: 0,
                value: found.map(|c| c.recall),
            });
        }
    }
    Ok(HeatmapGrid {
        kind: HeatmapKind::Recall,
        x_labels: niah.lengths.iter().map(|&l| tokens_label(l as f64)).collect(),
        y_labels: niah.depths.iter().map(|d| format!("{:.0}%", d * 100.0)).collect(),
        cells,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_else(|| "NA".to_string())
}

pub fn heatmap_csv(grid: &HeatmapGrid) -> String {
    let mut out = String::from("x_index,x_label,y_index,y_label,mean_depth,n_cells,n_fail,n_pass,n_excel,value\n");
    for c in &grid.cells {
        let _ = writeln!(
            out,
            "{},\"{}\",{},\"{}\",{},{},{},{},{},{}",
            c.x,
            grid.x_labels[c.x],
            c.y,
            grid.y_labels[c.y],
            fmt_opt(c.mean_depth),
            c.n_cells,
            c.n_fail,
            c.n_pass,
            c.n_excel,
            fmt_opt(c.value)
        );
    }
    out
}

pub fn heatmap_svg(grid: &HeatmapGrid, title: &str) -> String {
    let (cw, ch) = (56.0, 22.0);
    let (left, top) = (70.0, 40.0);
    let nx = grid.x_labels.len() as f64;
    let ny = grid.y_labels.len() as f64;
    let mut svg = Svg::new(left + cw * nx + 20.0, top + ch * ny + 110.0);
    svg.text(left, 20.0, 13.0, "start", title);
    for c in &grid.cells {
        let colour = match grid.kind {
            HeatmapKind::Verdict => diverging(c.value),
            HeatmapKind::Recall => diverging(c.value.map(|r| 2.0 * r - 1.0)),
        };
        let label = format!(
            "{} / {}: {}",
            grid.x_labels[c.x],
            grid.y_labels[c.y],
            fmt_opt(c.value)
        );
        svg.rect(left + cw * c.x as f64, top + ch * c.y as f64, cw, ch, &colour, Some(&label));
    }
    for (y, label) in grid.y_labels.iter().enumerate() {
        svg.text(left - 6.0, top + ch * (y as f64 + 0.7), 10.0, "end", label);
    }
    for (x, label) in grid.x_labels.iter().enumerate() {
        svg.vertical_text(left + cw * (x as f64 + 0.6), top + ch * ny + 6.0, 10.0, label);
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::NiahCellSummary;
    use crate::CellVerdict64;

    fn comparison(verdicts: &[Verdict]) -> Comparison {
        // Two tasks, two permutations: [0,1] and [1,0].
        let cells = verdicts
            .iter()
            .enumerate()
            .map(|(i, &v)| CellVerdict64 {
                task: format!("t{}", i / 2),
                task_index: i / 2,
                permutation: i % 2,
                verdict: v,
                t_statistic: None,
                p_value: None,
                mean_single: None,
                mean_lifelong: None,
                n_pairs: 3,
            })
            .collect();
        Comparison {
            grid_index: 0,
            n_task: 2,
            n_shot: 1,
            label: "lifelong".into(),
            setting_index: None,
            permutations: vec![vec![0, 1], vec![1, 0]],
            mean_context_tokens: 1234.0,
            cells,
            cell_depths: vec![Some(0.0), Some(0.5), Some(0.5), Some(0.0)],
            summary: None,
        }
    }

    #[test]
    fn bins_follow_stream_position() {
        // Front positions: t0 in p0, t1 in p1. Both fail; back positions pass.
        let c = comparison(&[Verdict::Fail, Verdict::Pass, Verdict::Pass, Verdict::Fail]);
        let grid = verdict_heatmap(&[c]).unwrap();
        assert_eq!(grid.cell(0, 0).value, Some(-1.0));
        assert_eq!(grid.cell(0, 1).value, Some(0.0));
        assert_eq!(grid.y_labels, vec!["0%", "50%"]);
        assert_eq!(grid.x_labels, vec!["2 tasks (1.2k)"]);
    }

    #[test]
    fn incomplete_bins_are_masked() {
        let c = comparison(&[Verdict::Incomplete, Verdict::Excel, Verdict::Excel, Verdict::Pass]);
        let grid = verdict_heatmap(&[c]).unwrap();
        assert_eq!(grid.cell(0, 0).value, None);
        assert_eq!(grid.cell(0, 1).value, Some(1.0));
        let svg = heatmap_svg(&grid, "run");
        assert!(svg.contains("#bdbdbd"));
        assert!(heatmap_csv(&grid).contains(",NA\n"));
    }

    #[test]
    fn recall_grid_covers_every_cell() {
        let niah = NiahSummary {
            lengths: vec![100, 2000],
            depths: vec![0.0, 1.0],
            cells: vec![NiahCellSummary {
                length_index: 1,
                depth_index: 0,
                length: 2000,
                depth: 0.0,
                context_tokens: 2000,
                needle_depth: 0.01,
                recall: 1.0,
            }],
            mean_recall: 1.0,
        };
        let grid = recall_heatmap(&niah).unwrap();
        assert_eq!(grid.cells.len(), 4);
        assert_eq!(grid.cell(1, 0).value, Some(1.0));
        assert_eq!(grid.cell(0, 0).value, None);
        assert_eq!(grid.x_labels, vec!["100", "2.0k"]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(verdict_heatmap(&[]), Err(ReportError::EmptyGrid)));
    }
}
