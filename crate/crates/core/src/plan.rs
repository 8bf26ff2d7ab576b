//! Seeded run manifests and evaluation-unit enumeration.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::EndpointConfig;
use crate::prompt::{ControlledSetting, PromptError, SettingKind, DEFAULT_SEPARATOR};
use crate::seed;
use crate::task::{fisher_yates, DEFAULT_TEST_CAP};

pub const DEFAULT_PERMUTATIONS: usize = 5;
pub const DEFAULT_REPLICATES: usize = 5;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("grid is empty")]
    GridEmpty,
    #[error("grid values must be strictly increasing: {0:?}")]
    GridNotIncreasing(Vec<usize>),
    #[error("{needed} tasks requested but only {available} available")]
    NotEnoughTasks { needed: usize, available: usize },
    #[error("invalid plan parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Setting(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ScaleShot,
    ScaleTask,
    Controlled,
    Niah,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ScaleShot => "scale_shot",
            Mode::ScaleTask => "scale_task",
            Mode::Controlled => "controlled",
            Mode::Niah => "niah",
        })
    }
}

/// One column of a scaling experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_task: usize,
    pub n_shot: usize,
    /// Each permutation orders task indices `0..n_task`.
    pub permutations: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahPlan {
    /// Context lengths in tokens, strictly increasing.
    pub lengths: Vec<usize>,
    /// Needle depths in `[0, 1]`, strictly increasing.
    pub depths: Vec<f64>,
    pub needle: String,
    pub question: String,
    pub max_tokens: u32,
}

pub const NIAH_NEEDLE: &str =
    "The best thing to do in San Francisco is eat a sandwich and sit in Dolores Park on a sunny day.";
pub const NIAH_QUESTION: &str = "What is the best thing to do in San Francisco?";

impl Default for NiahPlan {
    fn default() -> Self {
        Self {
            lengths: vec![1000, 2000, 4000, 8000],
            depths: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            needle: NIAH_NEEDLE.to_string(),
            question: NIAH_QUESTION.to_string(),
            max_tokens: 64,
        }
    }
}

/// Inputs to [`make_plan`]. Also recoverable from a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub run_id: Option<String>,
    pub seed: u64,
    pub mode: Mode,
    pub registry: String,
    /// Task order; empty means the whole registry in its sorted order.
    pub tasks: Vec<String>,
    pub n_task: usize,
    pub n_shot: usize,
    pub grid: Vec<usize>,
    pub permutations: usize,
    pub replicates: usize,
    pub settings: Vec<SettingKind>,
    pub repetitions: Vec<u32>,
    pub model: EndpointConfig,
    pub tokenizer_id: String,
    pub separator: String,
    pub test_cap: usize,
    pub filler_corpus: Option<String>,
    pub niah: Option<NiahPlan>,
}

impl PlanConfig {
    pub fn new(mode: Mode, registry: impl Into<String>) -> Self {
        Self {
            run_id: None,
            seed: 0,
            mode,
            registry: registry.into(),
            tasks: Vec::new(),
            n_task: 16,
            n_shot: 2,
            grid: Vec::new(),
            permutations: DEFAULT_PERMUTATIONS,
            replicates: DEFAULT_REPLICATES,
            settings: Vec::new(),
            repetitions: Vec::new(),
            model: EndpointConfig::default(),
            tokenizer_id: "whitespace".to_string(),
            separator: DEFAULT_SEPARATOR.to_string(),
            test_cap: DEFAULT_TEST_CAP,
            filler_corpus: None,
            niah: None,
        }
    }
}

/// A fully seeded, self-contained experiment plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub mode: Mode,
    pub registry: String,
    pub task_names: Vec<String>,
    pub n_task: usize,
    pub n_shot: usize,
    pub n_permutations: usize,
    pub n_replicates: usize,
    pub grid: Vec<GridPoint>,
    pub controlled_settings: Vec<ControlledSetting>,
    pub model: EndpointConfig,
    pub tokenizer_id: String,
    pub separator: String,
    pub test_cap: usize,
    pub filler_corpus: Option<String>,
    pub niah: Option<NiahPlan>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }

    /// Content digest. Endpoint transport settings (URL, key variable,
    /// parallelism, timeouts, retries) do not change results and are left out.
    pub fn digest(&self) -> String {
        let mut identity = self.clone();
        identity.model = EndpointConfig {
            model_name: self.model.model_name.clone(),
            logprob_top_k: self.model.logprob_top_k,
            chat: self.model.chat,
            ..EndpointConfig::default()
        };
        seed::digest_hex(&[serde_json::to_string(&identity).expect("manifest serializes").as_bytes()])
    }

    /// The configuration that regenerates this manifest.
    pub fn plan_config(&self) -> PlanConfig {
        let mut settings: Vec<SettingKind> = Vec::new();
        let mut repetitions: Vec<u32> = Vec::new();
        for s in &self.controlled_settings {
            if !settings.contains(&s.kind) {
                settings.push(s.kind);
            }
            if let Some(n) = s.repetitions {
                if !repetitions.contains(&n) {
                    repetitions.push(n);
                }
            }
        }
        let grid = match self.mode {
            Mode::ScaleShot => self.grid.iter().map(|g| g.n_shot).collect(),
            Mode::ScaleTask => self.grid.iter().map(|g| g.n_task).collect(),
            Mode::Controlled | Mode::Niah => Vec::new(),
        };
        PlanConfig {
            run_id: Some(self.run_id.clone()),
            seed: self.seed,
            mode: self.mode,
            registry: self.registry.clone(),
            tasks: self.task_names.clone(),
            n_task: self.n_task,
            n_shot: self.n_shot,
            grid,
            permutations: self.n_permutations,
            replicates: self.n_replicates,
            settings,
            repetitions,
            model: self.model.clone(),
            tokenizer_id: self.tokenizer_id.clone(),
            separator: self.separator.clone(),
            test_cap: self.test_cap,
            filler_corpus: self.filler_corpus.clone(),
            niah: self.niah.clone(),
        }
    }
}

fn factorial_at_least(n: usize, bound: usize) -> bool {
    let mut acc: usize = 1;
    for k in 2..=n {
        acc = acc.saturating_mul(k);
        if acc >= bound {
            return true;
        }
    }
    acc >= bound
}

/// `count` seeded Fisher–Yates permutations of `0..n_task`, pairwise distinct
/// whenever `n_task! >= count`.
pub fn sample_permutations(n_task: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seed::rng_for(seed, "permutations", &[n_task as u64]);
    let distinct = factorial_at_least(n_task, count);
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut perm: Vec<usize> = (0..n_task).collect();
        fisher_yates(&mut perm, &mut rng);
        if distinct && out.contains(&perm) {
            continue;
        }
        out.push(perm);
    }
    out
}

fn check_increasing(values: &[usize]) -> Result<(), PlanError> {
    if values.is_empty() {
        return Err(PlanError::GridEmpty);
    }
    if values.windows(2).any(|w| w[0] >= w[1]) || values[0] == 0 {
        return Err(PlanError::GridNotIncreasing(values.to_vec()));
    }
    Ok(())
}

/// Build a manifest. `available` lists the registry's tasks in registry order.
pub fn make_plan(config: &PlanConfig, available: &[String]) -> Result<RunManifest, PlanError> {
    if config.mode != Mode::Niah && (config.permutations == 0 || config.replicates == 0) {
        return Err(PlanError::InvalidParameter(
            "permutations and replicates must be >= 1".to_string(),
        ));
    }
    let order: Vec<String> = if config.tasks.is_empty() {
        available.to_vec()
    } else {
        for name in &config.tasks {
            if !available.contains(name) {
                return Err(PlanError::UnknownTask(name.clone()));
            }
        }
        config.tasks.clone()
    };
    let take = |n: usize| -> Result<Vec<String>, PlanError> {
        if n > order.len() {
            return Err(PlanError::NotEnoughTasks {
                needed: n,
                available: order.len(),
            });
        }
        Ok(order[..n].to_vec())
    };

    let mut controlled_settings = Vec::new();
    let mut niah = None;
    let (task_names, grid) = match config.mode {
        Mode::ScaleShot => {
            check_increasing(&config.grid)?;
            let perms = sample_permutations(config.n_task, config.permutations, config.seed);
            let grid = config
                .grid
                .iter()
                .map(|&n_shot| GridPoint {
                    n_task: config.n_task,
                    n_shot,
                    permutations: perms.clone(),
                })
                .collect();
            (take(config.n_task)?, grid)
        }
        Mode::ScaleTask => {
            check_increasing(&config.grid)?;
            let largest = *config.grid.last().expect("grid checked non-empty");
            let grid = config
                .grid
                .iter()
                .map(|&n_task| GridPoint {
                    n_task,
                    n_shot: config.n_shot,
                    permutations: sample_permutations(n_task, config.permutations, config.seed),
                })
                .collect();
            (take(largest)?, grid)
        }
        Mode::Controlled => {
            if config.settings.is_empty() {
                return Err(PlanError::GridEmpty);
            }
            for &kind in &config.settings {
                let reps: Vec<Option<u32>> = if kind.is_repeat() && !config.repetitions.is_empty() {
                    config.repetitions.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for repetitions in reps {
                    let setting = ControlledSetting {
                        kind,
                        repetitions,
                        filler_source: if kind == SettingKind::Random {
                            config.filler_corpus.clone()
                        } else {
                            None
                        },
                    };
                    setting.validate()?;
                    controlled_settings.push(setting);
                }
            }
            let perms = sample_permutations(config.n_task, 1, config.seed);
            let grid = vec![GridPoint {
                n_task: config.n_task,
                n_shot: config.n_shot,
                permutations: perms,
            }];
            (take(config.n_task)?, grid)
        }
        Mode::Niah => {
            let plan = config.niah.clone().unwrap_or_default();
            check_increasing(&plan.lengths)?;
            if plan.depths.is_empty() {
                return Err(PlanError::GridEmpty);
            }
            if plan.depths.windows(2).any(|w| w[0] >= w[1])
                || plan.depths.iter().any(|d| !(0.0..=1.0).contains(d))
            {
                return Err(PlanError::InvalidParameter(format!(
                    "depths must be strictly increasing within [0, 1]: {:?}",
                    plan.depths
                )));
            }
            if plan.needle.trim().is_empty() {
                return Err(PlanError::InvalidParameter("needle is empty".to_string()));
            }
            niah = Some(plan);
            (Vec::new(), Vec::new())
        }
    };

    let (n_permutations, n_replicates) = match config.mode {
        Mode::Controlled => (1, config.replicates),
        Mode::Niah => (0, 0),
        _ => (config.permutations, config.replicates),
    };

    Ok(RunManifest {
        run_id: config
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{}-{:016x}", config.mode, config.seed)),
        seed: config.seed,
        mode: config.mode,
        registry: config.registry.clone(),
        n_task: if config.mode == Mode::ScaleTask {
            task_names.len()
        } else {
            config.n_task
        },
        task_names,
        n_shot: config.n_shot,
        n_permutations,
        n_replicates,
        grid,
        controlled_settings,
        model: config.model.clone(),
        tokenizer_id: config.tokenizer_id.clone(),
        separator: config.separator.clone(),
        test_cap: config.test_cap,
        filler_corpus: config.filler_corpus.clone(),
        niah,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Single,
    Lifelong,
    Controlled,
}

/// One (task, permutation, replicate, setting) cell of a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvaluationUnit {
    pub grid_index: usize,
    pub arm: Arm,
    pub task_index: usize,
    pub permutation_index: Option<usize>,
    pub replicate_index: usize,
    /// Index into the manifest's controlled settings.
    pub setting_index: Option<usize>,
}

impl EvaluationUnit {
    pub fn setting_kind(&self, manifest: &RunManifest) -> SettingKind {
        match (self.arm, self.setting_index) {
            (Arm::Single, _) => SettingKind::Baseline,
            (Arm::Lifelong, _) => SettingKind::Recall,
            (Arm::Controlled, Some(s)) => manifest.controlled_settings[s].kind,
            (Arm::Controlled, None) => SettingKind::Baseline,
        }
    }
}

/// All units in deterministic order.
///
/// Single-task units come first per grid point, then lifelong units ordered
/// by (permutation, replicate, task) so units sharing a context are adjacent.
pub fn enumerate_units(manifest: &RunManifest) -> Vec<EvaluationUnit> {
    let mut units = Vec::new();
    let replicates = manifest.n_replicates;
    for (grid_index, point) in manifest.grid.iter().enumerate() {
        match manifest.mode {
            Mode::ScaleShot | Mode::ScaleTask => {
                for task_index in 0..point.n_task {
                    for replicate_index in 0..replicates {
                        units.push(EvaluationUnit {
                            grid_index,
                            arm: Arm::Single,
                            task_index,
                            permutation_index: None,
                            replicate_index,
                            setting_index: None,
                        });
                    }
                }
                for permutation_index in 0..point.permutations.len() {
                    for replicate_index in 0..replicates {
                        for task_index in 0..point.n_task {
                            units.push(EvaluationUnit {
                                grid_index,
                                arm: Arm::Lifelong,
                                task_index,
                                permutation_index: Some(permutation_index),
                                replicate_index,
                                setting_index: None,
                            });
                        }
                    }
                }
            }
            Mode::Controlled => {
                for setting_index in 0..manifest.controlled_settings.len() {
                    let kind = manifest.controlled_settings[setting_index].kind;
                    let permutation_index = (kind != SettingKind::Baseline).then_some(0);
                    for replicate_index in 0..replicates {
                        for task_index in 0..point.n_task {
                            units.push(EvaluationUnit {
                                grid_index,
                                arm: Arm::Controlled,
                                task_index,
                                permutation_index,
                                replicate_index,
                                setting_index: Some(setting_index),
                            });
                        }
                    }
                }
            }
            Mode::Niah => {}
        }
    }
    units
}

/// Closed-form unit count for a manifest.
pub fn expected_unit_count(manifest: &RunManifest) -> usize {
    let r = manifest.n_replicates;
    manifest
        .grid
        .iter()
        .map(|g| match manifest.mode {
            Mode::ScaleShot | Mode::ScaleTask => g.n_task * g.permutations.len() * r + g.n_task * r,
            Mode::Controlled => manifest.controlled_settings.len() * g.n_task * r,
            Mode::Niah => 0,
        })
        .sum()
}

/// One (length, depth) point of a needle-in-a-haystack lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NiahCell {
    pub length_index: usize,
    pub depth_index: usize,
}

pub fn enumerate_niah_cells(plan: &NiahPlan) -> Vec<NiahCell> {
    (0..plan.lengths.len())
        .flat_map(|length_index| {
            (0..plan.depths.len()).map(move |depth_index| NiahCell {
                length_index,
                depth_index,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("task{i:02}")).collect()
    }

    fn scale_shot(n_task: usize, grid: &[usize], p: usize, r: usize) -> PlanConfig {
        let mut c = PlanConfig::new(Mode::ScaleShot, "tasks");
        c.seed = 11;
        c.n_task = n_task;
        c.grid = grid.to_vec();
        c.permutations = p;
        c.replicates = r;
        c
    }

    #[test]
    fn permutations_are_bijections_and_distinct() {
        let perms = sample_permutations(16, 5, 3);
        assert_eq!(perms.len(), 5);
        for p in &perms {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        }
        let distinct: HashSet<_> = perms.iter().collect();
        assert_eq!(distinct.len(), 5);
        assert_eq!(perms, sample_permutations(16, 5, 3));
    }

    #[test]
    fn single_task_permutations_repeat() {
        assert_eq!(sample_permutations(1, 3, 0), vec![vec![0]; 3]);
        // 3! = 6 >= 6, so all six orders appear.
        let all: HashSet<_> = sample_permutations(3, 6, 9).into_iter().collect();
        assert_eq!(all.len(), 6);
        assert!(all.contains(&vec![2, 0, 1]));
    }

    #[test]
    fn scale_shot_shares_permutations() {
        let m = make_plan(&scale_shot(16, &[1, 2, 4, 8], 5, 5), &names(20)).unwrap();
        assert_eq!(m.grid.len(), 4);
        assert!(m.grid.iter().all(|g| g.permutations == m.grid[0].permutations));
        assert_eq!(m.task_names, names(16));
    }

    #[test]
    fn scale_task_subsets_are_nested_prefixes() {
        let mut c = PlanConfig::new(Mode::ScaleTask, "tasks");
        c.seed = 11;
        c.grid = vec![8, 16, 32, 64];
        c.n_shot = 2;
        let m = make_plan(&c, &names(64)).unwrap();
        assert_eq!(m.task_names.len(), 64);
        for g in &m.grid {
            for p in &g.permutations {
                assert!(p.iter().all(|&t| t < g.n_task));
            }
        }
        // Same seed and size give the same orders regardless of mode.
        let shot = make_plan(&scale_shot(16, &[2], 5, 5), &names(64)).unwrap();
        assert_eq!(shot.grid[0].permutations, m.grid[1].permutations);
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(
            make_plan(&scale_shot(4, &[], 1, 1), &names(4)),
            Err(PlanError::GridEmpty)
        ));
        assert!(matches!(
            make_plan(&scale_shot(4, &[2, 2], 1, 1), &names(4)),
            Err(PlanError::GridNotIncreasing(_))
        ));
        let mut c = scale_shot(4, &[1], 1, 1);
        c.tasks = vec!["nope".into()];
        assert!(matches!(make_plan(&c, &names(4)), Err(PlanError::UnknownTask(_))));
        assert!(matches!(
            make_plan(&scale_shot(8, &[1], 1, 1), &names(4)),
            Err(PlanError::NotEnoughTasks { needed: 8, available: 4 })
        ));
        let mut c = PlanConfig::new(Mode::Controlled, "tasks");
        c.n_task = 2;
        c.settings = vec![SettingKind::Random];
        assert!(matches!(make_plan(&c, &names(2)), Err(PlanError::Setting(_))));
    }

    #[test]
    fn unit_counts_full_design() {
        let m = make_plan(&scale_shot(16, &[2], 5, 5), &names(16)).unwrap();
        let units = enumerate_units(&m);
        let lifelong = units.iter().filter(|u| u.arm == Arm::Lifelong).count();
        let single = units.iter().filter(|u| u.arm == Arm::Single).count();
        assert_eq!((lifelong, single), (400, 80));
        assert_eq!(units.len(), expected_unit_count(&m));
    }

    #[test]
    fn digest_ignores_transport_settings() {
        let m = make_plan(&scale_shot(2, &[1], 1, 1), &names(2)).unwrap();
        let mut moved = m.clone();
        moved.model.base_url = "http://127.0.0.1:40123".into();
        moved.model.max_parallel = 1;
        assert_eq!(m.digest(), moved.digest());
        moved.model.model_name = "other".into();
        assert_ne!(m.digest(), moved.digest());
    }

    #[test]
    fn smoke_plan_counts() {
        let m = make_plan(&scale_shot(1, &[1], 1, 1), &names(1)).unwrap();
        assert_eq!(enumerate_units(&m).len(), 2);
    }

    #[test]
    fn controlled_counts() {
        // Hand enumeration for two tasks, one replicate: every setting
        // contributes one unit per task.
        let mut c = PlanConfig::new(Mode::Controlled, "tasks");
        c.n_task = 2;
        c.replicates = 1;
        c.settings = SettingKind::ALL.to_vec();
        c.filler_corpus = Some("pg.txt".into());
        let small = make_plan(&c, &names(2)).unwrap();
        let units = enumerate_units(&small);
        let mut by_hand = Vec::new();
        for s in 0..8 {
            for t in 0..2 {
                by_hand.push((s, t));
            }
        }
        let listed: Vec<_> = units
            .iter()
            .map(|u| (u.setting_index.unwrap(), u.task_index))
            .collect();
        assert_eq!(listed, by_hand);

        c.n_task = 16;
        c.replicates = 5;
        let full = make_plan(&c, &names(16)).unwrap();
        assert_eq!(enumerate_units(&full).len(), 640);
        assert_eq!(expected_unit_count(&full), 640);
    }

    #[test]
    fn repetitions_expand_repeat_settings() {
        let mut c = PlanConfig::new(Mode::Controlled, "tasks");
        c.n_task = 2;
        c.settings = vec![SettingKind::Baseline, SettingKind::Repeat, SettingKind::RepeatShuffle];
        c.repetitions = vec![1, 2, 4];
        let m = make_plan(&c, &names(2)).unwrap();
        let labels: Vec<_> = m.controlled_settings.iter().map(|s| s.label()).collect();
        assert_eq!(
            labels,
            ["baseline", "repeat x1", "repeat x2", "repeat x4", "repeat_shuffle x1", "repeat_shuffle x2", "repeat_shuffle x4"]
        );
        assert_eq!(make_plan(&m.plan_config(), &m.task_names).unwrap(), m);
    }

    #[test]
    fn manifest_replans_and_round_trips() {
        for mode in [Mode::ScaleShot, Mode::ScaleTask] {
            let mut c = scale_shot(4, &[1, 2], 3, 2);
            c.mode = mode;
            let m = make_plan(&c, &names(6)).unwrap();
            let json = m.to_json();
            assert_eq!(RunManifest::from_json(&json).unwrap(), m);
            let again = make_plan(&m.plan_config(), &m.task_names).unwrap();
            assert_eq!(again.to_json(), json);
        }
        let mut c = PlanConfig::new(Mode::Niah, "none");
        c.niah = Some(NiahPlan::default());
        let m = make_plan(&c, &[]).unwrap();
        assert_eq!(make_plan(&m.plan_config(), &[]).unwrap(), m);
        assert_eq!(enumerate_niah_cells(m.niah.as_ref().unwrap()).len(), 20);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unit_count_matches_formula(n_task in 1usize..7, p in 1usize..4, r in 1usize..4, points in 1usize..4, seed in any::<u64>()) {
                let grid: Vec<usize> = (1..=points).collect();
                let mut c = scale_shot(n_task, &grid, p, r);
                c.seed = seed;
                let m = make_plan(&c, &names(n_task)).unwrap();
                let units = enumerate_units(&m);
                prop_assert_eq!(units.len(), expected_unit_count(&m));
                let distinct: HashSet<_> = units.iter().collect();
                prop_assert_eq!(distinct.len(), units.len());
                prop_assert_eq!(units.len(), points * (n_task * p * r + n_task * r));
            }

            #[test]
            fn permutations_always_bijective(n in 1usize..12, count in 1usize..8, seed in any::<u64>()) {
                for perm in sample_permutations(n, count, seed) {
                    let mut s = perm.clone();
                    s.sort_unstable();
                    prop_assert_eq!(s, (0..n).collect::<Vec<_>>());
                }
            }
        }
    }
}
