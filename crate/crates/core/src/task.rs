//! Task bundles: specs, labeled examples, few-shot replicates and test sets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tokenizer::Tokenizer;

pub const LABEL_PLACEHOLDER: &str = "label";
pub const DEFAULT_TEST_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("placeholder mismatch: {0}")]
    PlaceholderMismatch(String),
    #[error("class `{class}` has {have} examples, {need} needed")]
    InsufficientExamples {
        class: String,
        have: usize,
        need: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Classification,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A `{name}` template. Braces that do not enclose an identifier are literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let name_len = after
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(after.len());
            if name_len > 0 && after[name_len..].starts_with('}') {
                literal.push_str(&rest[..open]);
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(after[..name_len].to_string()));
                rest = &after[name_len + 1..];
            } else {
                literal.push_str(&rest[..=open]);
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Self {
            source: source.to_string(),
            segments,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Placeholder names in order of appearance (duplicates kept).
    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(name) => Some(name.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Input placeholders, i.e. everything except `label`.
    pub fn input_fields(&self) -> BTreeSet<&str> {
        self.placeholders()
            .filter(|name| *name != LABEL_PLACEHOLDER)
            .collect()
    }

    /// Literal text preceding the first placeholder.
    pub fn leading_literal(&self) -> &str {
        match self.segments.first() {
            Some(Segment::Literal(text)) => text,
            _ => "",
        }
    }

    /// Substitute placeholders verbatim.
    pub fn render(
        &self,
        inputs: &BTreeMap<String, String>,
        label: Option<&str>,
    ) -> Result<String, TaskError> {
        let mut out = String::with_capacity(self.source.len() + 64);
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) if name == LABEL_PLACEHOLDER => match label {
                    Some(label) => out.push_str(label),
                    None => {
                        return Err(TaskError::PlaceholderMismatch(format!(
                            "template {:?} needs a label",
                            self.source
                        )))
                    }
                },
                Segment::Placeholder(name) => match inputs.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(TaskError::PlaceholderMismatch(format!(
                            "input `{name}` missing for template {:?}",
                            self.source
                        )))
                    }
                },
            }
        }
        Ok(out)
    }

    /// Render up to (not including) the first `{label}` placeholder.
    fn render_before_label(&self, inputs: &BTreeMap<String, String>) -> Result<String, TaskError> {
        let cut = self
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Placeholder(n) if n == LABEL_PLACEHOLDER))
            .unwrap_or(self.segments.len());
        let head = Template {
            source: String::new(),
            segments: self.segments[..cut].to_vec(),
        };
        head.render(inputs, None)
    }
}

impl Serialize for Template {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let source = String::deserialize(deserializer)?;
        Ok(Template::parse(&source))
    }
}

/// One classification task. Serialized with the bundle's interchange key names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub task_type: TaskType,
    pub options: Vec<String>,
    pub instruction: String,
    #[serde(rename = "instruction_2")]
    pub instruction_paraphrase: String,
    #[serde(rename = "demonstration_prompt")]
    pub demonstration_template: Template,
    #[serde(rename = "inference_prompt")]
    pub inference_template: Template,
}

const TASK_KEYS: [&str; 7] = [
    "name",
    "task_type",
    "options",
    "instruction",
    "instruction_2",
    "demonstration_prompt",
    "inference_prompt",
];

impl TaskSpec {
    pub fn input_fields(&self) -> BTreeSet<&str> {
        self.inference_template.input_fields()
    }

    /// Structural placeholder checks that make a spec unusable if violated.
    pub fn check_placeholders(&self) -> Result<(), TaskError> {
        let demo_labels = self
            .demonstration_template
            .placeholders()
            .filter(|p| *p == LABEL_PLACEHOLDER)
            .count();
        if demo_labels != 1 {
            return Err(TaskError::PlaceholderMismatch(format!(
                "demonstration_prompt must contain exactly one {{label}}, found {demo_labels}"
            )));
        }
        if self
            .inference_template
            .placeholders()
            .any(|p| p == LABEL_PLACEHOLDER)
        {
            return Err(TaskError::PlaceholderMismatch(
                "inference_prompt must not contain {label}".to_string(),
            ));
        }
        let demo_inputs = self.demonstration_template.input_fields();
        let inference_inputs = self.inference_template.input_fields();
        if demo_inputs != inference_inputs {
            return Err(TaskError::PlaceholderMismatch(format!(
                "demonstration inputs {demo_inputs:?} differ from inference inputs {inference_inputs:?}"
            )));
        }
        Ok(())
    }

    pub fn render_demonstration(&self, example: &LabeledExample) -> Result<String, TaskError> {
        self.demonstration_template
            .render(&example.inputs, Some(&example.label))
    }

    pub fn render_inference(&self, inputs: &BTreeMap<String, String>) -> Result<String, TaskError> {
        self.inference_template.render(inputs, None)
    }

    pub fn option_index(&self, label: &str) -> Option<usize> {
        self.options.iter().position(|o| o == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub inputs: BTreeMap<String, String>,
    pub label: String,
}

/// Training examples available for few-shot sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPool {
    pub task_name: String,
    /// Class order used when sampling.
    pub options: Vec<String>,
    pub examples: Vec<LabeledExample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSample {
    pub task_name: String,
    pub replicate_index: usize,
    pub examples: Vec<LabeledExample>,
}

impl FewShotSample {
    /// Same examples in a new seeded order.
    pub fn reshuffled(&self, seed: u64) -> FewShotSample {
        let mut rng = seed::rng_for(seed, "reshuffle", &[]);
        let mut examples = self.examples.clone();
        fisher_yates(&mut examples, &mut rng);
        FewShotSample {
            task_name: self.task_name.clone(),
            replicate_index: self.replicate_index,
            examples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSet {
    pub task_name: String,
    pub instances: Vec<LabeledExample>,
}

impl TestSet {
    /// Keep at most `cap` instances, chosen with a seeded draw and kept in file order.
    pub fn capped(mut self, cap: usize, seed: u64) -> TestSet {
        if self.instances.len() > cap {
            let mut rng = seed::rng_for(seed, "testset", &[seed::string_key(&self.task_name)]);
            let mut keep = index::sample(&mut rng, self.instances.len(), cap).into_vec();
            keep.sort_unstable();
            let keep: HashSet<usize> = keep.into_iter().collect();
            self.instances = std::mem::take(&mut self.instances)
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, e)| e)
                .collect();
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct TaskBundle {
    pub spec: TaskSpec,
    pub train: TrainingPool,
    pub test: TestSet,
}

pub(crate) fn fisher_yates<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

fn read_file(path: &Path) -> Result<String, TaskError> {
    if !path.is_file() {
        return Err(TaskError::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_records(spec: &TaskSpec, path: &Path) -> Result<Vec<LabeledExample>, TaskError> {
    let raw = read_file(path)?;
    let fields = spec.input_fields();
    let mut warned = false;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| TaskError::MalformedRecord {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let object = value
            .as_object()
            .ok_or_else(|| malformed("record is not a JSON object".to_string()))?;
        let label = match object.get(LABEL_PLACEHOLDER) {
            Some(serde_json::Value::String(label)) => label.clone(),
            Some(_) => return Err(malformed("label is not a string".to_string())),
            None => return Err(malformed("missing label".to_string())),
        };
        if spec.option_index(&label).is_none() {
            return Err(malformed(format!("label {label:?} is not one of {:?}", spec.options)));
        }
        let mut inputs = BTreeMap::new();
        for field in &fields {
            match object.get(*field) {
                Some(serde_json::Value::String(text)) => {
                    inputs.insert((*field).to_string(), text.clone());
                }
                Some(_) => return Err(malformed(format!("field `{field}` is not a string"))),
                None => return Err(malformed(format!("missing field `{field}`"))),
            }
        }
        if !warned {
            let extra: Vec<&String> = object
                .keys()
                .filter(|k| *k != LABEL_PLACEHOLDER && !fields.contains(k.as_str()))
                .collect();
            if !extra.is_empty() {
                info!("{}: ignoring unknown fields {extra:?}", path.display());
                warned = true;
            }
        }
        out.push(LabeledExample { inputs, label });
    }
    Ok(out)
}

/// Load `task.json`, `train.jsonl` and `test.jsonl` from a bundle directory.
///
/// Training examples whose rendered input collides with a test instance are
/// dropped so that test sets stay disjoint from every few-shot sample.
pub fn load_task_bundle(dir: &Path) -> Result<TaskBundle, TaskError> {
    let spec_path = dir.join("task.json");
    let raw = read_file(&spec_path)?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| TaskError::MalformedRecord {
            path: spec_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
    if let Some(object) = value.as_object() {
        let unknown: Vec<&String> = object
            .keys()
            .filter(|k| !TASK_KEYS.contains(&k.as_str()))
            .collect();
        if !unknown.is_empty() {
            info!("{}: ignoring unknown keys {unknown:?}", spec_path.display());
        }
    }
    let spec: TaskSpec =
        serde_json::from_value(value).map_err(|e| TaskError::MalformedRecord {
            path: spec_path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
    spec.check_placeholders()?;

    let train = parse_records(&spec, &dir.join("train.jsonl"))?;
    let test = parse_records(&spec, &dir.join("test.jsonl"))?;

    let test_keys: HashSet<String> = test
        .iter()
        .map(|e| spec.render_inference(&e.inputs))
        .collect::<Result<_, _>>()?;
    let before = train.len();
    let mut train_kept = Vec::with_capacity(before);
    for example in train {
        if !test_keys.contains(&spec.render_inference(&example.inputs)?) {
            train_kept.push(example);
        }
    }
    if train_kept.len() != before {
        warn!(
            "{}: dropped {} training examples that overlap the test set",
            spec.name,
            before - train_kept.len()
        );
    }

    Ok(TaskBundle {
        train: TrainingPool {
            task_name: spec.name.clone(),
            options: spec.options.clone(),
            examples: train_kept,
        },
        test: TestSet {
            task_name: spec.name.clone(),
            instances: test,
        },
        spec,
    })
}

/// Bundle directory names under a registry root, sorted.
pub fn registry_task_names(root: &Path) -> Result<Vec<String>, TaskError> {
    if !root.is_dir() {
        return Err(TaskError::MissingFile(root.to_path_buf()));
    }
    let entries = std::fs::read_dir(root).map_err(|source| TaskError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| TaskError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        if entry.path().join("task.json").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewOptions { count: usize },
    EmptyOption { index: usize },
    DuplicateOption { option: String },
    FirstTokenCollision { first: String, second: String, token: String },
    EmptyFirstToken { option: String },
    TemplatePrefixMismatch { detail: String },
    PlaceholderMismatch { detail: String },
    ParaphraseIdentical,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewOptions { count } => write!(f, "only {count} option(s); at least 2 required"),
            Violation::EmptyOption { index } => write!(f, "option {index} is empty"),
            Violation::DuplicateOption { option } => write!(f, "duplicate option {option:?}"),
            Violation::FirstTokenCollision { first, second, token } => {
                write!(f, "options {first:?} and {second:?} share first token {token:?}")
            }
            Violation::EmptyFirstToken { option } => {
                write!(f, "option {option:?} produces no tokens")
            }
            Violation::TemplatePrefixMismatch { detail } => {
                write!(f, "inference prompt is not a prefix of the demonstration: {detail}")
            }
            Violation::PlaceholderMismatch { detail } => write!(f, "placeholder mismatch: {detail}"),
            Violation::ParaphraseIdentical => write!(f, "instruction_2 equals instruction"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub task: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every task invariant; violations are collected, never raised.
pub fn validate_task(spec: &TaskSpec, tokenizer: &dyn Tokenizer) -> ValidationReport {
    let mut violations = Vec::new();
    if spec.options.len() < 2 {
        violations.push(Violation::TooFewOptions {
            count: spec.options.len(),
        });
    }
    let mut seen = HashSet::new();
    for (index, option) in spec.options.iter().enumerate() {
        if option.is_empty() {
            violations.push(Violation::EmptyOption { index });
        } else if !seen.insert(option.as_str()) {
            violations.push(Violation::DuplicateOption {
                option: option.clone(),
            });
        }
    }

    let mut first_tokens: Vec<(&str, Vec<u32>)> = Vec::new();
    for option in seen.iter().copied().collect::<BTreeSet<_>>() {
        let tokens = tokenizer.tokenize(option);
        match tokens.first() {
            None => violations.push(Violation::EmptyFirstToken {
                option: option.to_string(),
            }),
            Some(first) => {
                let key = vec![first.id];
                if let Some((other, _)) = first_tokens.iter().find(|(_, k)| *k == key) {
                    violations.push(Violation::FirstTokenCollision {
                        first: other.to_string(),
                        second: option.to_string(),
                        token: String::from_utf8_lossy(&option.as_bytes()[first.start..first.end]).into_owned(),
                    });
                }
                first_tokens.push((option, key));
            }
        }
    }

    if let Err(TaskError::PlaceholderMismatch(detail)) = spec.check_placeholders() {
        violations.push(Violation::PlaceholderMismatch { detail });
    } else {
        // Probe with field names as values so the comparison is content-independent.
        let probe: BTreeMap<String, String> = spec
            .input_fields()
            .into_iter()
            .map(|f| (f.to_string(), format!("<{f}>")))
            .collect();
        let head = spec.demonstration_template.render_before_label(&probe);
        let inference = spec.render_inference(&probe);
        match (head, inference) {
            (Ok(head), Ok(inference)) => {
                let ok = head
                    .strip_prefix(&inference)
                    .is_some_and(|rest| rest.chars().all(char::is_whitespace));
                if !ok {
                    violations.push(Violation::TemplatePrefixMismatch {
                        detail: format!("{inference:?} vs {head:?}"),
                    });
                }
            }
            (Err(e), _) | (_, Err(e)) => violations.push(Violation::PlaceholderMismatch {
                detail: e.to_string(),
            }),
        }
    }

    if spec.instruction_paraphrase == spec.instruction {
        violations.push(Violation::ParaphraseIdentical);
    }

    ValidationReport {
        task: spec.name.clone(),
        violations,
    }
}

/// Draw `n_replicates` class-balanced samples with `n_shot` examples per class.
///
/// Within a replicate examples are drawn without replacement, then the
/// combined sample is shuffled once so classes are interleaved.
pub fn sample_fewshot_sets(
    pool: &TrainingPool,
    n_shot: usize,
    n_replicates: usize,
    seed: u64,
) -> Result<Vec<FewShotSample>, TaskError> {
    let by_class: Vec<(&String, Vec<&LabeledExample>)> = pool
        .options
        .iter()
        .map(|class| {
            let members = pool.examples.iter().filter(|e| &e.label == class).collect();
            (class, members)
        })
        .collect();
    for (class, members) in &by_class {
        if members.len() < n_shot {
            return Err(TaskError::InsufficientExamples {
                class: (*class).clone(),
                have: members.len(),
                need: n_shot,
            });
        }
    }

    let mut samples = Vec::with_capacity(n_replicates);
    for replicate in 0..n_replicates {
        let mut rng = seed::rng_for(seed, "fewshot", &[replicate as u64]);
        let mut examples = Vec::with_capacity(n_shot * by_class.len());
        for (_, members) in &by_class {
            let mut chosen = index::sample(&mut rng, members.len(), n_shot).into_vec();
            chosen.sort_unstable();
            examples.extend(chosen.into_iter().map(|i| members[i].clone()));
        }
        fisher_yates(&mut examples, &mut rng);
        samples.push(FewShotSample {
            task_name: pool.task_name.clone(),
            replicate_index: replicate,
            examples,
        });
    }
    Ok(samples)
}
