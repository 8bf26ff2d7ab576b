//! Execution of a manifest against a model endpoint, and scoring of the
//! persisted results.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{Job, JobKind, LmClient, LmError, OptionSet, Prediction};
use crate::plan::{enumerate_niah_cells, enumerate_units, Arm, EvaluationUnit, Mode, NiahCell, RunManifest};
use crate::prompt::{measure_depth, DepthAnchor, PromptBuilder, PromptError, PromptRecord, SettingKind};
use crate::report::{
    self, accuracy_rows, score_rows, summarize_niah, InstanceOutcome, NiahRecord, ReportError, ResultsStore,
    ScoreOptions, Scored, UnitRecord, FAILURES_FILE, PROGRESS_FILE, SUMMARY_FILE, TIMINGS_FILE, VERDICTS_FILE,
};
use crate::seed;
use crate::stats::{self, StatsError};
use crate::task::{load_task_bundle, sample_fewshot_sets, FewShotSample, TaskBundle, TaskError};
use crate::tokenizer::{self, Tokenizer, TokenizerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this many new units (or NIAH cells).
    pub max_units: Option<usize>,
    /// Units whose queries are dispatched as one batch.
    pub chunk_units: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_units: None,
            chunk_units: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub total: usize,
    pub already_done: usize,
    pub completed: usize,
    pub failed: Vec<UnitFailure>,
    pub network_requests: usize,
    pub cache_hits: usize,
    /// Stopped by `max_units` before every unit was attempted.
    pub interrupted: bool,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty() && !self.interrupted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub unit: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
struct Progress {
    total: usize,
    done: usize,
    failed: usize,
}

#[derive(Debug, Serialize)]
struct Timing {
    first_unit: usize,
    units: usize,
    jobs: usize,
    network_requests: usize,
    cache_hits: usize,
    seconds: f64,
}

/// Context and queries of one evaluation unit.
#[derive(Debug, Clone)]
pub struct UnitPrompts {
    pub context: PromptRecord,
    pub queries: Vec<String>,
    pub golds: Vec<usize>,
    pub depth: f64,
    pub stream_position: Option<usize>,
    pub prompt_hash: String,
}

/// Tasks, few-shot samples and prompt builder for one manifest.
pub struct Experiment {
    manifest: RunManifest,
    bundles: Vec<TaskBundle>,
    options: Vec<Arc<OptionSet>>,
    builder: PromptBuilder,
    samples: HashMap<(usize, usize), Vec<FewShotSample>>,
    filler: Option<String>,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("run_id", &self.manifest.run_id)
            .field("tasks", &self.bundles.len())
            .finish()
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_filler(manifest: &RunManifest) -> Result<Option<String>, PipelineError> {
    manifest
        .filler_corpus
        .as_deref()
        .map(|p| read_text(Path::new(p)))
        .transpose()
}

impl Experiment {
    /// Load the manifest's tasks from `registry` and draw every few-shot
    /// sample the plan needs.
    pub fn load(manifest: &RunManifest, registry: &Path) -> Result<Self, PipelineError> {
        let tokenizer = tokenizer::resolve(&manifest.tokenizer_id)?;
        let mut bundles = Vec::with_capacity(manifest.task_names.len());
        for name in &manifest.task_names {
            let mut bundle = load_task_bundle(&registry.join(name))?;
            bundle.test = bundle.test.capped(manifest.test_cap, manifest.seed);
            bundles.push(bundle);
        }
        let options = bundles
            .iter()
            .map(|b| Arc::new(OptionSet::new(&b.spec.options, tokenizer.as_ref())))
            .collect();
        let mut samples = HashMap::new();
        for point in &manifest.grid {
            for t in 0..point.n_task {
                if samples.contains_key(&(t, point.n_shot)) {
                    continue;
                }
                let bundle: &TaskBundle = &bundles[t];
                let sample_seed = seed::child_seed(
                    manifest.seed,
                    "fewshot",
                    &[seed::string_key(&bundle.spec.name), point.n_shot as u64],
                );
                let drawn = sample_fewshot_sets(&bundle.train, point.n_shot, manifest.n_replicates, sample_seed)?;
                samples.insert((t, point.n_shot), drawn);
            }
        }
        Ok(Self {
            filler: load_filler(manifest)?,
            manifest: manifest.clone(),
            bundles,
            options,
            builder: PromptBuilder::new(manifest.separator.clone(), tokenizer),
            samples,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn bundles(&self) -> &[TaskBundle] {
        &self.bundles
    }

    fn sample(&self, task: usize, n_shot: usize, replicate: usize) -> &FewShotSample {
        &self.samples[&(task, n_shot)][replicate]
    }

    /// Build the context and every query for `unit`.
    pub fn unit_prompts(&self, unit: &EvaluationUnit) -> Result<UnitPrompts, PipelineError> {
        let point = &self.manifest.grid[unit.grid_index];
        let t = unit.task_index;
        let r = unit.replicate_index;
        let spec = &self.bundles[t].spec;
        let test_block = (spec, self.sample(t, point.n_shot, r));
        let stream = |p: usize| -> Vec<(&crate::task::TaskSpec, &FewShotSample)> {
            point.permutations[p]
                .iter()
                .map(|&i| (&self.bundles[i].spec, self.sample(i, point.n_shot, r)))
                .collect()
        };
        let position = |p: usize| point.permutations[p].iter().position(|&i| i == t);
        let kind = unit.setting_kind(&self.manifest);
        let (context, stream_position) = match unit.arm {
            Arm::Single => (self.builder.build_single_task_prompt(test_block.0, test_block.1)?, None),
            Arm::Lifelong => {
                let p = unit.permutation_index.expect("lifelong units carry a permutation");
                (self.builder.build_lifelong_prompt(&stream(p))?, position(p))
            }
            Arm::Controlled => {
                let s = unit.setting_index.expect("controlled units carry a setting");
                let setting = &self.manifest.controlled_settings[s];
                let p = unit.permutation_index.unwrap_or(0);
                let shuffle_seed = seed::child_seed(self.manifest.seed, "controlled", &[t as u64, r as u64]);
                let context = self.builder.build_controlled_prompt(
                    setting,
                    test_block,
                    &stream(p),
                    shuffle_seed,
                    self.filler.as_deref(),
                )?;
                let at = match kind {
                    SettingKind::Recall | SettingKind::Paraphrase | SettingKind::Replay => position(p),
                    _ => None,
                };
                (context, at)
            }
        };
        let depth = match kind {
            SettingKind::Remove => 0.0,
            _ => measure_depth(&context, &spec.name, DepthAnchor::Start)?,
        };
        let paraphrase = kind == SettingKind::Paraphrase;
        let mut queries = Vec::with_capacity(self.bundles[t].test.instances.len());
        let mut golds = Vec::with_capacity(queries.capacity());
        for instance in &self.bundles[t].test.instances {
            queries.push(self.builder.build_query(&context, spec, &instance.inputs, paraphrase)?);
            golds.push(spec.option_index(&instance.label).expect("labels validated on load"));
        }
        let mut parts: Vec<&[u8]> = vec![context.text.as_bytes()];
        parts.extend(queries.iter().map(|q| q.as_bytes()));
        let prompt_hash = seed::digest_hex(&parts);
        Ok(UnitPrompts {
            context,
            queries,
            golds,
            depth,
            stream_position,
            prompt_hash,
        })
    }

    fn setting_label(&self, unit: &EvaluationUnit) -> String {
        match unit.setting_index {
            Some(s) => self.manifest.controlled_settings[s].label(),
            None => unit.setting_kind(&self.manifest).to_string(),
        }
    }
}

fn unit_name(unit: &EvaluationUnit, manifest: &RunManifest) -> String {
    let task = &manifest.task_names[unit.task_index];
    let mut name = format!("g{}/{:?}/{task}/r{}", unit.grid_index, unit.arm, unit.replicate_index);
    if let Some(p) = unit.permutation_index {
        name.push_str(&format!("/p{p}"));
    }
    if let Some(s) = unit.setting_index {
        name.push_str(&format!("/{}", manifest.controlled_settings[s].label()));
    }
    name
}

fn finish(store: &ResultsStore, report: &RunReport, done: usize) -> Result<(), PipelineError> {
    store.write_json(
        PROGRESS_FILE,
        &Progress {
            total: report.total,
            done,
            failed: report.failed.len(),
        },
    )?;
    store.write_json(FAILURES_FILE, &report.failed)?;
    Ok(())
}

/// Run every unit of the store's manifest that has no record yet.
///
/// Records are appended in unit order. A unit with any failed query is not
/// recorded; it is listed in `failures.json` and retried on the next run.
pub fn run_experiment(
    store: &mut ResultsStore,
    client: &LmClient,
    registry: &Path,
    options: &RunOptions,
) -> Result<RunReport, PipelineError> {
    let manifest = store.manifest().clone();
    if manifest.mode == Mode::Niah {
        return run_niah(store, client, options);
    }
    let experiment = Experiment::load(&manifest, registry)?;
    let units = enumerate_units(&manifest);
    let mut report = RunReport {
        total: units.len(),
        ..RunReport::default()
    };
    let mut pending: Vec<(usize, EvaluationUnit)> = Vec::new();
    for (ordinal, unit) in units.iter().enumerate() {
        if store.contains(unit) {
            report.already_done += 1;
        } else {
            pending.push((ordinal, *unit));
        }
    }
    if let Some(limit) = options.max_units {
        if pending.len() > limit {
            pending.truncate(limit);
            report.interrupted = true;
        }
    }
    info!(
        "{}: {} units, {} done, {} to run",
        manifest.run_id,
        report.total,
        report.already_done,
        pending.len()
    );
    let digest = store.manifest_digest().to_string();
    for chunk in pending.chunks(options.chunk_units.max(1)) {
        let started = Instant::now();
        let mut prompts = Vec::with_capacity(chunk.len());
        let mut jobs = Vec::new();
        for (ordinal, unit) in chunk {
            let built = experiment.unit_prompts(unit)?;
            let option_set = &experiment.options[unit.task_index];
            for query in &built.queries {
                jobs.push(Job {
                    text: query.clone(),
                    kind: JobKind::Classify(Arc::clone(option_set)),
                    group: *ordinal as u64,
                });
            }
            prompts.push(built);
        }
        let batch = client.dispatch_batch(&jobs);
        report.network_requests += batch.report.network_requests;
        report.cache_hits += batch.report.cache_hits;
        let mut results = batch.results.into_iter();
        for ((_, unit), built) in chunk.iter().zip(prompts) {
            let answers: Vec<_> = results.by_ref().take(built.queries.len()).collect();
            if let Some(error) = answers.iter().find_map(|a| a.as_ref().err()) {
                warn!("{}: {error}", unit_name(unit, &manifest));
                report.failed.push(UnitFailure {
                    unit: unit_name(unit, &manifest),
                    error: error.to_string(),
                });
                continue;
            }
            let mut outcomes = Vec::with_capacity(answers.len());
            let mut fallback = false;
            for (index, (answer, gold)) in answers.into_iter().zip(&built.golds).enumerate() {
                let answer = answer.expect("errors handled above");
                fallback |= answer.response.fallback;
                let prediction = answer.prediction.unwrap_or(Prediction::NoMatch);
                outcomes.push(InstanceOutcome {
                    index,
                    gold: *gold,
                    prediction,
                    correct: prediction == Prediction::Option(*gold),
                });
            }
            let predictions: Vec<Option<usize>> = outcomes.iter().map(|o| o.prediction.option()).collect();
            let golds: Vec<Option<usize>> = built.golds.iter().map(|&g| Some(g)).collect();
            let accuracy: f64 = stats::accuracy(&predictions, &golds)?;
            let n_correct = outcomes.iter().filter(|o| o.correct).count();
            let n_no_match = outcomes.iter().filter(|o| o.prediction == Prediction::NoMatch).count();
            store.record(UnitRecord {
                manifest_digest: digest.clone(),
                unit: *unit,
                task: manifest.task_names[unit.task_index].clone(),
                setting: unit.setting_kind(&manifest),
                setting_label: experiment.setting_label(unit),
                prompt_hash: built.prompt_hash,
                context_tokens: built.context.total_tokens,
                depth: built.depth,
                stream_position: built.stream_position,
                n_instances: outcomes.len(),
                n_correct,
                n_no_match,
                accuracy,
                fallback,
                outcomes,
            })?;
            report.completed += 1;
        }
        store.append_side(
            TIMINGS_FILE,
            &Timing {
                first_unit: chunk[0].0,
                units: chunk.len(),
                jobs: jobs.len(),
                network_requests: batch.report.network_requests,
                cache_hits: batch.report.cache_hits,
                seconds: started.elapsed().as_secs_f64(),
            },
        )?;
        finish(store, &report, report.already_done + report.completed)?;
    }
    finish(store, &report, report.already_done + report.completed)?;
    Ok(report)
}

/// Byte offsets where a sentence may start: 0, after `.`, `!` or `?`
/// followed by whitespace, and the end of the text.
fn sentence_boundaries(text: &str) -> Vec<usize> {
    let mut out = vec![0];
    let bytes = text.as_bytes();
    for i in 0..bytes.len() {
        if matches!(bytes[i], b'.' | b'!' | b'?') && bytes.get(i + 1).is_some_and(|b| b.is_ascii_whitespace()) {
            out.push(i + 1);
        }
    }
    if *out.last().expect("non-empty") != text.len() {
        out.push(text.len());
    }
    out
}

/// A haystack of `length` tokens with the needle inserted at the sentence
/// boundary nearest `depth`. Returns the text and the needle's measured
/// token depth.
pub fn build_haystack(
    filler: &str,
    needle: &str,
    length: usize,
    depth: f64,
    tokenizer: &dyn Tokenizer,
) -> Result<(String, f64), PipelineError> {
    let budget = length.saturating_sub(tokenizer.count(needle));
    let (hay, have) = tokenizer.truncate(filler, budget);
    if have < budget {
        return Err(PromptError::FillerTooShort { have, need: budget }.into());
    }
    let tokens = tokenizer.tokenize(hay);
    let target_token = ((depth * tokens.len() as f64).round() as usize).min(tokens.len());
    let target_char = tokens.get(target_token).map_or(hay.len(), |t| t.start);
    let at = sentence_boundaries(hay)
        .into_iter()
        .min_by_key(|&b| (b.abs_diff(target_char), b))
        .expect("boundaries non-empty");
    let (before, after) = hay.split_at(at);
    let parts: Vec<&str> = [before.trim_end(), needle, after.trim_start()]
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect();
    let text = parts.join(" ");
    let prefix = if before.trim_end().is_empty() {
        String::new()
    } else {
        format!("{} ", before.trim_end())
    };
    let total = tokenizer.count(&text);
    let offset = tokenizer.count(&prefix);
    let needle_depth = if total == 0 { 0.0 } else { offset as f64 / total as f64 };
    Ok((text, needle_depth))
}

fn cell_name(cell: &NiahCell) -> String {
    format!("niah/L{}/D{}", cell.length_index, cell.depth_index)
}

/// Needle-in-a-haystack lattice: one generation per (length, depth) cell.
pub fn run_niah(store: &mut ResultsStore, client: &LmClient, options: &RunOptions) -> Result<RunReport, PipelineError> {
    let manifest = store.manifest().clone();
    let plan = manifest
        .niah
        .clone()
        .ok_or_else(|| PipelineError::Invalid("manifest has no NIAH plan".to_string()))?;
    let filler = load_filler(&manifest)?
        .ok_or_else(|| PipelineError::Invalid("NIAH runs need a filler corpus".to_string()))?;
    if filler.to_lowercase().contains(&plan.needle.to_lowercase()) {
        return Err(PipelineError::Invalid("filler corpus already contains the needle".to_string()));
    }
    let tokenizer = tokenizer::resolve(&manifest.tokenizer_id)?;
    let cells = enumerate_niah_cells(&plan);
    let mut report = RunReport {
        total: cells.len(),
        ..RunReport::default()
    };
    let mut pending: Vec<NiahCell> = Vec::new();
    for cell in cells {
        if store.contains_niah(&cell) {
            report.already_done += 1;
        } else {
            pending.push(cell);
        }
    }
    if let Some(limit) = options.max_units {
        if pending.len() > limit {
            pending.truncate(limit);
            report.interrupted = true;
        }
    }
    let digest = store.manifest_digest().to_string();
    for chunk in pending.chunks(options.chunk_units.max(1)) {
        let started = Instant::now();
        let mut built = Vec::with_capacity(chunk.len());
        let mut jobs = Vec::with_capacity(chunk.len());
        for (i, cell) in chunk.iter().enumerate() {
            let length = plan.lengths[cell.length_index];
            let (haystack, needle_depth) = build_haystack(
                &filler,
                &plan.needle,
                length,
                plan.depths[cell.depth_index],
                tokenizer.as_ref(),
            )?;
            let query = format!("{haystack}{}{}", manifest.separator, plan.question);
            jobs.push(Job {
                text: query.clone(),
                kind: JobKind::Generate {
                    max_tokens: plan.max_tokens,
                },
                group: i as u64,
            });
            built.push((tokenizer.count(&haystack), needle_depth, seed::digest_hex(&[query.as_bytes()])));
        }
        let batch = client.dispatch_batch(&jobs);
        report.network_requests += batch.report.network_requests;
        report.cache_hits += batch.report.cache_hits;
        for ((cell, result), (context_tokens, needle_depth, prompt_hash)) in
            chunk.iter().zip(batch.results).zip(built)
        {
            match result {
                Ok(outcome) => {
                    let response = outcome.response.completion_text;
                    let recall: f64 = stats::token_recall(&response, &plan.needle)?;
                    store.record_niah(NiahRecord {
                        manifest_digest: digest.clone(),
                        cell: *cell,
                        length: plan.lengths[cell.length_index],
                        depth: plan.depths[cell.depth_index],
                        context_tokens,
                        needle_depth,
                        prompt_hash,
                        response,
                        recall,
                    })?;
                    report.completed += 1;
                }
                Err(error) => {
                    warn!("{}: {error}", cell_name(cell));
                    report.failed.push(UnitFailure {
                        unit: cell_name(cell),
                        error: error.to_string(),
                    });
                }
            }
        }
        store.append_side(
            TIMINGS_FILE,
            &Timing {
                first_unit: chunk[0].length_index * plan.depths.len() + chunk[0].depth_index,
                units: chunk.len(),
                jobs: jobs.len(),
                network_requests: batch.report.network_requests,
                cache_hits: batch.report.cache_hits,
                seconds: started.elapsed().as_secs_f64(),
            },
        )?;
        finish(store, &report, report.already_done + report.completed)?;
    }
    finish(store, &report, report.already_done + report.completed)?;
    Ok(report)
}

/// Score everything recorded so far.
pub fn score_store(store: &ResultsStore, options: &ScoreOptions) -> Result<Scored, PipelineError> {
    let manifest = store.manifest();
    let niah = summarize_niah(manifest, store.niah_records());
    Ok(score_rows(manifest, accuracy_rows(store.records()), niah, options)?)
}

/// Write `verdicts.json` and `summary.json`; returns their paths.
pub fn write_scores(store: &ResultsStore, scored: &Scored) -> Result<Vec<PathBuf>, PipelineError> {
    Ok(vec![
        store.write_json(VERDICTS_FILE, &scored.comparisons)?,
        store.write_json(SUMMARY_FILE, &scored.summary)?,
    ])
}

/// Score, persist the summaries and emit every report file.
pub fn score_and_report(store: &ResultsStore, options: &ScoreOptions) -> Result<(Scored, Vec<PathBuf>), PipelineError> {
    let scored = score_store(store, options)?;
    let mut written = write_scores(store, &scored)?;
    written.extend(report::emit_reports(store, &scored)?);
    Ok((scored, written))
}
