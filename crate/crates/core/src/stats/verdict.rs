use std::fmt;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use super::ttest::{paired_t_test, TTest};
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Excel,
    Incomplete,
}

impl Verdict {
    /// EXCEL counts as a pass.
    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::Excel)
    }

    /// Heatmap code: FAIL −1, PASS 0, EXCEL +1.
    pub fn code(self) -> Option<i8> {
        match self {
            Verdict::Fail => Some(-1),
            Verdict::Pass => Some(0),
            Verdict::Excel => Some(1),
            Verdict::Incomplete => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Excel => "EXCEL",
            Verdict::Incomplete => "INCOMPLETE",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lifelong-vs-single comparison for one (task, permutation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Float + Serialize",
    deserialize = "F: Float + FromPrimitive + Deserialize<'de>"
))]
pub struct CellVerdict<F> {
    pub task: String,
    pub task_index: usize,
    pub permutation: usize,
    pub verdict: Verdict,
    #[serde(with = "crate::float_repr::option")]
    pub t_statistic: Option<F>,
    pub p_value: Option<F>,
    pub mean_single: Option<F>,
    pub mean_lifelong: Option<F>,
    pub n_pairs: usize,
}

fn mean<F: Float + FromPrimitive>(values: &[F]) -> F {
    values.iter().fold(F::zero(), |acc, &v| acc + v) / F::from_usize(values.len()).expect("count fits")
}

/// Two-sided paired test of lifelong against single accuracies, paired by
/// replicate. Missing values make the cell INCOMPLETE.
pub fn cell_verdict<F: Float + FromPrimitive>(
    task: &str,
    task_index: usize,
    permutation: usize,
    single: &[Option<F>],
    lifelong: &[Option<F>],
    alpha: F,
) -> Result<CellVerdict<F>, StatsError> {
    let incomplete = CellVerdict {
        task: task.to_string(),
        task_index,
        permutation,
        verdict: Verdict::Incomplete,
        t_statistic: None,
        p_value: None,
        mean_single: None,
        mean_lifelong: None,
        n_pairs: 0,
    };
    if single.len() != lifelong.len() || single.is_empty() {
        return Ok(incomplete);
    }
    let (Some(s), Some(l)) = (
        single.iter().copied().collect::<Option<Vec<F>>>(),
        lifelong.iter().copied().collect::<Option<Vec<F>>>(),
    ) else {
        return Ok(incomplete);
    };
    let test = paired_t_test(&l, &s)?;
    let verdict = if test.p < alpha && test.mean_diff < F::zero() {
        Verdict::Fail
    } else if test.p < alpha && test.mean_diff > F::zero() {
        Verdict::Excel
    } else {
        Verdict::Pass
    };
    Ok(CellVerdict {
        verdict,
        t_statistic: Some(test.t),
        p_value: Some(test.p),
        mean_single: Some(mean(&s)),
        mean_lifelong: Some(mean(&l)),
        n_pairs: test.n,
        ..incomplete
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Float + Serialize",
    deserialize = "F: Float + FromPrimitive + Deserialize<'de>"
))]
pub struct Marginal<F> {
    pub passed: usize,
    pub total: usize,
    /// NaN when `total` is zero.
    #[serde(with = "crate::float_repr")]
    pub rate: F,
}

impl<F: Float + FromPrimitive> Marginal<F> {
    fn new(passed: usize, total: usize) -> Self {
        let rate = if total == 0 {
            F::nan()
        } else {
            F::from_usize(passed).expect("count fits") / F::from_usize(total).expect("count fits")
        };
        Self { passed, total, rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Float + Serialize",
    deserialize = "F: Float + FromPrimitive + Deserialize<'de>"
))]
pub struct PassRateSummary<F> {
    pub n_cells: usize,
    pub n_pass: usize,
    pub n_fail: usize,
    pub n_excel: usize,
    /// `(#PASS + #EXCEL) / #cells`.
    pub overall: F,
    /// In task order.
    pub by_task: Vec<(String, Marginal<F>)>,
    /// By the tested task's position in the stream.
    pub by_index: Vec<Marginal<F>>,
    pub by_permutation: Vec<Marginal<F>>,
    /// Entry `k`: tasks failing in exactly `k` permutations.
    pub fail_histogram: Vec<usize>,
    pub excel_histogram: Vec<usize>,
}

/// Aggregate verdicts of a grid point.
///
/// `task_names[t]` names task index `t`; `permutations[p]` lists task
/// indices in stream order. Every (task, permutation) cell must carry one
/// complete verdict.
pub fn pass_rate<F: Float + FromPrimitive>(
    verdicts: &[CellVerdict<F>],
    task_names: &[String],
    permutations: &[Vec<usize>],
) -> Result<PassRateSummary<F>, StatsError> {
    let n_tasks = task_names.len();
    let n_perms = permutations.len();
    let mut grid: Vec<Vec<Option<Verdict>>> = vec![vec![None; n_perms]; n_tasks];
    for v in verdicts {
        if v.task_index < n_tasks && v.permutation < n_perms && v.verdict != Verdict::Incomplete {
            grid[v.task_index][v.permutation] = Some(v.verdict);
        }
    }
    let missing: Vec<String> = (0..n_tasks)
        .flat_map(|t| (0..n_perms).map(move |p| (t, p)))
        .filter(|&(t, p)| grid[t][p].is_none())
        .map(|(t, p)| format!("{}/p{p}", task_names[t]))
        .collect();
    if !missing.is_empty() || n_tasks == 0 || n_perms == 0 {
        return Err(StatsError::MissingCells(missing));
    }
    let cell = |t: usize, p: usize| grid[t][p].expect("checked complete");

    let count = |f: &dyn Fn(Verdict) -> bool| {
        (0..n_tasks)
            .flat_map(|t| (0..n_perms).map(move |p| (t, p)))
            .filter(|&(t, p)| f(cell(t, p)))
            .count()
    };
    let n_cells = n_tasks * n_perms;
    let n_pass = count(&|v| v == Verdict::Pass);
    let n_fail = count(&|v| v == Verdict::Fail);
    let n_excel = count(&|v| v == Verdict::Excel);

    let by_task = (0..n_tasks)
        .map(|t| {
            let passed = (0..n_perms).filter(|&p| cell(t, p).is_pass()).count();
            (task_names[t].clone(), Marginal::new(passed, n_perms))
        })
        .collect();
    let stream_len = permutations.iter().map(Vec::len).max().unwrap_or(0);
    let mut index_counts = vec![(0usize, 0usize); stream_len];
    for (p, perm) in permutations.iter().enumerate() {
        for (position, &t) in perm.iter().enumerate() {
            if t < n_tasks {
                index_counts[position].1 += 1;
                if cell(t, p).is_pass() {
                    index_counts[position].0 += 1;
                }
            }
        }
    }
    let by_index = index_counts.into_iter().map(|(k, n)| Marginal::new(k, n)).collect();
    let by_permutation = (0..n_perms)
        .map(|p| Marginal::new((0..n_tasks).filter(|&t| cell(t, p).is_pass()).count(), n_tasks))
        .collect();
    let histogram = |target: Verdict| {
        let mut h = vec![0usize; n_perms + 1];
        for t in 0..n_tasks {
            h[(0..n_perms).filter(|&p| cell(t, p) == target).count()] += 1;
        }
        h
    };
    Ok(PassRateSummary {
        n_cells,
        n_pass,
        n_fail,
        n_excel,
        overall: Marginal::<F>::new(n_pass + n_excel, n_cells).rate,
        by_task,
        by_index,
        by_permutation,
        fail_histogram: histogram(Verdict::Fail),
        excel_histogram: histogram(Verdict::Excel),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Float + Serialize",
    deserialize = "F: Float + FromPrimitive + Deserialize<'de>"
))]
pub struct EffectivenessSplit<F> {
    pub effective: Vec<String>,
    pub ineffective: Vec<String>,
    /// Test of k-shot minus 1-shot accuracy per task, in input order.
    pub tests: Vec<(String, TTest<F>)>,
}

/// Tasks whose k-shot accuracy significantly exceeds their 1-shot accuracy
/// (two-sided `p < alpha` and positive mean gain).
pub fn icl_effectiveness_split<F: Float + FromPrimitive>(
    task_names: &[String],
    acc_1shot: &[Vec<F>],
    acc_kshot: &[Vec<F>],
    alpha: F,
) -> Result<EffectivenessSplit<F>, StatsError> {
    if task_names.len() != acc_1shot.len() || task_names.len() != acc_kshot.len() {
        return Err(StatsError::LengthMismatch(acc_1shot.len(), acc_kshot.len()));
    }
    let mut split = EffectivenessSplit {
        effective: Vec::new(),
        ineffective: Vec::new(),
        tests: Vec::with_capacity(task_names.len()),
    };
    for ((name, one), k) in task_names.iter().zip(acc_1shot).zip(acc_kshot) {
        let test = paired_t_test(k, one)?;
        if test.p < alpha && test.mean_diff > F::zero() {
            split.effective.push(name.clone());
        } else {
            split.ineffective.push(name.clone());
        }
        split.tests.push((name.clone(), test));
    }
    Ok(split)
}
