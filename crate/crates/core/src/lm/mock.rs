//! Scripted deterministic language model.
//!
//! The mock recovers the test task, gold label, setting, stream position,
//! depth and shot count from the prompt text alone, looks up the first
//! matching behavior rule, and decides correctness with a keyed hash so the
//! same `(script, prompt)` always yields the same response bytes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompletionBackend, CompletionRequest, CompletionResponse, LmError, Usage};
use crate::prompt::{SettingKind, DEFAULT_SEPARATOR};
use crate::seed;
use crate::task::{load_task_bundle, registry_task_names, TaskBundle, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Test instances are ranked by a keyed hash; the lowest `accuracy`
    /// fraction of ranks is answered correctly. Accuracy per context is then
    /// exact up to test-set granularity.
    #[default]
    Quantile,
    /// Each prompt is answered correctly with probability `accuracy`.
    Bernoulli,
}

/// Accuracy for prompts matching every given condition. Ranges are `[lo, hi)`
/// except that `hi >= 1` includes 1; shot ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRule {
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub setting: Option<SettingKind>,
    #[serde(default)]
    pub depth: Option<(f64, f64)>,
    #[serde(default)]
    pub position: Option<(f64, f64)>,
    #[serde(default)]
    pub shots: Option<(usize, usize)>,
    pub accuracy: f64,
    /// Per-context accuracy jitter, uniform in `[-noise, +noise]`.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "text")]
pub enum GenerationBehavior {
    /// Return the sentence of the prompt that contains the pattern.
    Echo,
    #[default]
    Silent,
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRule {
    pub pattern: String,
    pub behavior: GenerationBehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub seed: u64,
    pub sampling: Sampling,
    /// Accuracy of the catch-all rule applied when no rule matches.
    pub default_accuracy: f64,
    pub default_noise: f64,
    pub rules: Vec<BehaviorRule>,
    pub generation: Vec<GenerationRule>,
    pub default_generation: GenerationBehavior,
    /// When false, responses carry no log-probabilities.
    pub logprobs_supported: bool,
    pub separator: String,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            seed: 0,
            sampling: Sampling::Quantile,
            default_accuracy: 1.0,
            default_noise: 0.0,
            rules: Vec::new(),
            generation: Vec::new(),
            default_generation: GenerationBehavior::Silent,
            logprobs_supported: true,
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }
}

impl MockScript {
    /// A script answering every classification with the given accuracy.
    pub fn constant(accuracy: f64) -> Self {
        Self {
            default_accuracy: accuracy,
            ..Self::default()
        }
    }

    pub fn echo(pattern: &str) -> Self {
        Self {
            generation: vec![GenerationRule {
                pattern: pattern.to_string(),
                behavior: GenerationBehavior::Echo,
            }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.default_accuracy) || !unit(self.default_noise) {
            return Err(LmError::InvalidScript(
                "default accuracy and noise must lie in [0, 1]".to_string(),
            ));
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if !unit(rule.accuracy) || !unit(rule.noise) {
                return Err(LmError::InvalidScript(format!(
                    "rule {i}: accuracy and noise must lie in [0, 1]"
                )));
            }
        }
        if self.generation.iter().any(|g| g.pattern.is_empty()) {
            return Err(LmError::InvalidScript("empty generation pattern".to_string()));
        }
        Ok(())
    }

    /// Parse TOML or JSON, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self, LmError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LmError::InvalidScript(format!("{}: {e}", path.display())))?;
        let script: MockScript = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| LmError::InvalidScript(e.to_string()))?
        } else {
            toml::from_str(&raw).map_err(|e| LmError::InvalidScript(e.to_string()))?
        };
        script.validate()?;
        Ok(script)
    }

    /// Rule accuracy and noise for a described prompt.
    pub fn behavior(&self, facts: &PromptFacts) -> (f64, f64) {
        self.rules
            .iter()
            .find(|rule| rule_matches(rule, facts))
            .map_or((self.default_accuracy, self.default_noise), |r| {
                (r.accuracy, r.noise)
            })
    }

    /// Keyed Bernoulli draw used by [`Sampling::Bernoulli`].
    pub fn bernoulli(&self, key: &[u8], probability: f64) -> bool {
        seed::unit_interval(self.seed, "bernoulli", key) < probability
    }
}

fn in_range(value: f64, (lo, hi): (f64, f64)) -> bool {
    value >= lo && (value < hi || (hi >= 1.0 && value <= hi))
}

fn rule_matches(rule: &BehaviorRule, facts: &PromptFacts) -> bool {
    rule.task.as_ref().map_or(true, |t| *t == facts.task)
        && rule.setting.map_or(true, |s| s == facts.setting)
        && rule.depth.map_or(true, |r| facts.depth.is_some_and(|d| in_range(d, r)))
        && rule
            .position
            .map_or(true, |r| facts.position.is_some_and(|p| in_range(p, r)))
        && rule
            .shots
            .map_or(true, |(lo, hi)| facts.shots.is_some_and(|s| (lo..=hi).contains(&s)))
}

/// What the mock recovers from a classification query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptFacts {
    pub task: String,
    pub gold: usize,
    pub setting: SettingKind,
    /// Index of the test task's first block over the number of blocks.
    pub position: Option<f64>,
    /// Character offset of that block over the context length.
    pub depth: Option<f64>,
    /// Demonstrations per class in the test task's first block.
    pub shots: Option<usize>,
    /// Context preceding the query instruction.
    pub context_len: usize,
    /// Quantile rank of the test instance within its task.
    pub rank: f64,
}

struct TaskIndex {
    spec: TaskSpec,
    /// Rendered inference text → (gold option, quantile rank in [0,1)).
    inferences: HashMap<String, (usize, f64)>,
}

/// In-process scripted model; also backs the mock HTTP server.
pub struct MockModel {
    script: MockScript,
    tasks: Vec<TaskIndex>,
}

impl std::fmt::Debug for MockModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockModel")
            .field("script", &self.script)
            .field("tasks", &self.tasks.len())
            .finish()
    }
}

impl MockModel {
    pub fn new(script: MockScript, bundles: &[TaskBundle]) -> Result<Self, LmError> {
        script.validate()?;
        let mut tasks = Vec::with_capacity(bundles.len());
        for bundle in bundles {
            let spec = &bundle.spec;
            let mut rendered: Vec<(String, usize)> = Vec::new();
            for instance in &bundle.test.instances {
                let text = spec
                    .render_inference(&instance.inputs)
                    .map_err(|e| LmError::InvalidScript(e.to_string()))?;
                let gold = spec.option_index(&instance.label).unwrap_or(0);
                if !rendered.iter().any(|(t, _)| *t == text) {
                    rendered.push((text, gold));
                }
            }
            let mut keyed: Vec<(f64, usize)> = rendered
                .iter()
                .enumerate()
                .map(|(i, (text, _))| {
                    let key = format!("{}\u{0}{text}", spec.name);
                    (seed::unit_interval(script.seed, "rank", key.as_bytes()), i)
                })
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let n = rendered.len() as f64;
            let mut inferences = HashMap::with_capacity(rendered.len());
            for (rank, (_, i)) in keyed.into_iter().enumerate() {
                let (text, gold) = rendered[i].clone();
                inferences.insert(text, (gold, (rank as f64 + 0.5) / n));
            }
            tasks.push(TaskIndex {
                spec: spec.clone(),
                inferences,
            });
        }
        Ok(Self { script, tasks })
    }

    /// Load every bundle under a registry directory.
    pub fn from_registry(script: MockScript, root: &Path) -> Result<Self, LmError> {
        let invalid = |e: crate::task::TaskError| LmError::InvalidScript(e.to_string());
        let bundles = registry_task_names(root)
            .map_err(invalid)?
            .iter()
            .map(|name| load_task_bundle(&root.join(name)).map_err(invalid))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(script, &bundles)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    /// Recover the query facts, or `None` when the prompt ends in no known
    /// test instance.
    pub fn analyze(&self, prompt: &str) -> Option<PromptFacts> {
        let sep = self.script.separator.as_str();
        // (query start, task index, gold, rank, paraphrased)
        let mut best: Option<(usize, usize, usize, f64, bool)> = None;
        for (t, task) in self.tasks.iter().enumerate() {
            for (paraphrase, instruction) in [
                (false, &task.spec.instruction),
                (true, &task.spec.instruction_paraphrase),
            ] {
                if instruction.is_empty() {
                    continue;
                }
                let head = format!("{instruction}{sep}");
                let Some(pos) = prompt.rfind(&head) else { continue };
                let Some(&(gold, rank)) = task.inferences.get(&prompt[pos + head.len()..]) else {
                    continue;
                };
                if pos != 0 && !prompt[..pos].ends_with(sep) {
                    continue;
                }
                if best.map_or(true, |b| pos > b.0) {
                    best = Some((pos, t, gold, rank, paraphrase));
                }
            }
        }
        let (query_start, t, gold, rank, paraphrase) = best?;
        let context = prompt[..query_start].strip_suffix(sep).unwrap_or("");
        let test = &self.tasks[t].spec;

        let mut blocks: Vec<(usize, usize)> = Vec::new();
        for (i, task) in self.tasks.iter().enumerate() {
            let instruction = &task.spec.instruction;
            if instruction.is_empty() {
                continue;
            }
            for (pos, _) in context.match_indices(instruction.as_str()) {
                if pos == 0 || context[..pos].ends_with(sep) {
                    blocks.push((pos, i));
                }
            }
        }
        blocks.sort_unstable();
        let has_filler = blocks.first().is_some_and(|b| b.0 > 0);
        let block_text = |k: usize| {
            let start = blocks[k].0;
            let end = blocks.get(k + 1).map_or(context.len(), |b| b.0);
            context[start..end].strip_suffix(sep).unwrap_or(&context[start..end])
        };
        let test_blocks: Vec<usize> = (0..blocks.len()).filter(|&k| blocks[k].1 == t).collect();

        let setting = if paraphrase {
            SettingKind::Paraphrase
        } else if has_filler {
            SettingKind::Random
        } else if blocks.is_empty() {
            SettingKind::Baseline
        } else if test_blocks.is_empty() {
            SettingKind::Remove
        } else if test_blocks.len() == blocks.len() {
            if blocks.len() == 1 {
                SettingKind::Baseline
            } else if (1..blocks.len()).all(|k| block_text(k) == block_text(0)) {
                SettingKind::Repeat
            } else {
                SettingKind::RepeatShuffle
            }
        } else if test_blocks.len() > 1 && test_blocks.last() == Some(&(blocks.len() - 1)) {
            SettingKind::Replay
        } else {
            SettingKind::Recall
        };

        let first = test_blocks.first().copied();
        let position = first.map(|k| k as f64 / blocks.len() as f64);
        let depth = first.map(|k| {
            if context.is_empty() {
                0.0
            } else {
                blocks[k].0 as f64 / context.len() as f64
            }
        });
        let literal = test.demonstration_template.leading_literal();
        let shots = match first {
            Some(k) if !literal.is_empty() && !test.options.is_empty() => {
                Some(block_text(k).matches(literal).count() / test.options.len())
            }
            None if blocks.is_empty() && !has_filler => Some(0),
            _ => None,
        };
        Some(PromptFacts {
            task: test.name.clone(),
            gold,
            setting,
            position,
            depth,
            shots,
            context_len: context.len(),
            rank,
        })
    }

    /// Option chosen for a classification query.
    pub fn choose(&self, prompt: &str) -> Option<(usize, PromptFacts)> {
        let facts = self.analyze(prompt)?;
        let t = self.tasks.iter().position(|x| x.spec.name == facts.task)?;
        let task = &self.tasks[t];
        let rank = facts.rank;
        let (accuracy, noise) = self.script.behavior(&facts);
        let context = &prompt[..facts.context_len];
        let jitter = if noise > 0.0 {
            let key = format!("{}\u{0}{context}", facts.task);
            noise * (2.0 * seed::unit_interval(self.script.seed, "noise", key.as_bytes()) - 1.0)
        } else {
            0.0
        };
        let accuracy = (accuracy + jitter).clamp(0.0, 1.0);
        let correct = match self.script.sampling {
            Sampling::Quantile => rank < accuracy,
            Sampling::Bernoulli => self.script.bernoulli(prompt.as_bytes(), accuracy),
        };
        let n_options = task.spec.options.len();
        let choice = if correct || n_options < 2 {
            facts.gold
        } else {
            let pick = seed::unit_interval(self.script.seed, "wrong", prompt.as_bytes());
            let k = ((pick * (n_options - 1) as f64) as usize).min(n_options - 2);
            if k >= facts.gold {
                k + 1
            } else {
                k
            }
        };
        Some((choice, facts))
    }

    fn first_word(option: &str) -> &str {
        option.split_whitespace().next().unwrap_or(option)
    }

    fn classification(&self, request: &CompletionRequest, t: usize, choice: usize) -> CompletionResponse {
        let spec = &self.tasks[t].spec;
        let mut others: Vec<(f64, usize)> = (0..spec.options.len())
            .filter(|&k| k != choice)
            .map(|k| {
                let key = format!("{}\u{0}{k}", request.prompt);
                (seed::unit_interval(self.script.seed, "order", key.as_bytes()), k)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut top = vec![(format!(" {}", Self::first_word(&spec.options[choice])), -0.05)];
        for (rank, (_, k)) in others.into_iter().enumerate() {
            top.push((format!(" {}", Self::first_word(&spec.options[k])), -1.5 - rank as f64 * 0.5));
        }
        let top_k = request.logprobs.unwrap_or(0) as usize;
        top.truncate(top_k);
        let text = if request.logprobs.is_some() {
            format!(" {}", Self::first_word(&spec.options[choice]))
        } else {
            format!(" {}", spec.options[choice])
        };
        CompletionResponse {
            text: truncate_words(&text, request.max_tokens),
            top_tokens: (self.script.logprobs_supported && request.logprobs.is_some()).then_some(top),
            usage: usage(request, &text),
        }
    }

    fn generation(&self, request: &CompletionRequest) -> CompletionResponse {
        let prompt = &request.prompt;
        let behavior = self
            .script
            .generation
            .iter()
            .find_map(|rule| prompt.find(&rule.pattern).map(|pos| (pos, &rule.behavior)));
        let text = match behavior {
            Some((pos, GenerationBehavior::Echo)) => format!(" {}", sentence_at(prompt, pos)),
            Some((_, GenerationBehavior::Fixed(text))) => text.clone(),
            Some((_, GenerationBehavior::Silent)) => String::new(),
            None => match &self.script.default_generation {
                GenerationBehavior::Fixed(text) => text.clone(),
                _ => String::new(),
            },
        };
        let text = truncate_words(&text, request.max_tokens);
        CompletionResponse {
            usage: usage(request, &text),
            text,
            top_tokens: None,
        }
    }
}

fn usage(request: &CompletionRequest, text: &str) -> Usage {
    Usage {
        prompt_tokens: request.prompt.split_whitespace().count() as u64,
        completion_tokens: text.split_whitespace().count() as u64,
    }
}

/// Keep the first `max_tokens` whitespace-delimited words, with their
/// original spacing.
fn truncate_words(text: &str, max_tokens: u32) -> String {
    let mut count = 0;
    let mut end = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
        } else {
            if !in_word {
                if count == max_tokens as usize {
                    break;
                }
                count += 1;
                in_word = true;
            }
            end = i + c.len_utf8();
        }
    }
    if count == 0 {
        return String::new();
    }
    text[..end].to_string()
}

/// The sentence of `text` containing byte offset `pos`.
fn sentence_at(text: &str, pos: usize) -> &str {
    let is_end = |c: char| matches!(c, '.' | '!' | '?' | '\n');
    let start = text[..pos]
        .char_indices()
        .rev()
        .find(|&(_, c)| is_end(c))
        .map_or(0, |(i, c)| i + c.len_utf8());
    let end = text[pos..]
        .char_indices()
        .find(|&(_, c)| is_end(c))
        .map_or(text.len(), |(i, c)| {
            if c == '\n' {
                pos + i
            } else {
                pos + i + c.len_utf8()
            }
        });
    text[start..end].trim()
}

impl CompletionBackend for MockModel {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LmError> {
        if request.max_tokens == 0 {
            return Ok(CompletionResponse {
                text: String::new(),
                top_tokens: None,
                usage: usage(request, ""),
            });
        }
        if let Some((choice, facts)) = self.choose(&request.prompt) {
            let t = self
                .tasks
                .iter()
                .position(|x| x.spec.name == facts.task)
                .expect("analyzed task is indexed");
            return Ok(self.classification(request, t, choice));
        }
        Ok(self.generation(request))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{LmClient, OptionSet, Prediction, ResponseCache, EndpointConfig};
    use crate::plan::{NIAH_NEEDLE, NIAH_QUESTION};
    use crate::prompt::{ControlledSetting, PromptBuilder};
    use crate::synthetic::{write_registry, SyntheticSpec};
    use crate::task::{sample_fewshot_sets, FewShotSample};
    use crate::tokenizer::WhitespaceTokenizer;
    use std::sync::Arc;

    struct Fixture {
        _dir: tempfile::TempDir,
        bundles: Vec<TaskBundle>,
        builder: PromptBuilder,
        samples: Vec<Vec<FewShotSample>>,
    }

    fn fixture(n_tasks: usize, n_shot: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_tasks,
            ..SyntheticSpec::default()
        };
        let names = write_registry(dir.path(), &spec).unwrap();
        let bundles: Vec<TaskBundle> = names
            .iter()
            .map(|n| load_task_bundle(&dir.path().join(n)).unwrap())
            .collect();
        let samples = bundles
            .iter()
            .map(|b| sample_fewshot_sets(&b.train, n_shot, 3, 7).unwrap())
            .collect();
        Fixture {
            _dir: dir,
            bundles,
            builder: PromptBuilder::new(DEFAULT_SEPARATOR, Arc::new(WhitespaceTokenizer)),
            samples,
        }
    }

    impl Fixture {
        fn stream(&self, order: &[usize], r: usize) -> Vec<(&TaskSpec, &FewShotSample)> {
            order
                .iter()
                .map(|&t| (&self.bundles[t].spec, &self.samples[t][r]))
                .collect()
        }

        fn query(&self, context: &crate::prompt::PromptRecord, t: usize, i: usize, paraphrase: bool) -> String {
            let spec = &self.bundles[t].spec;
            self.builder
                .build_query(context, spec, &self.bundles[t].test.instances[i].inputs, paraphrase)
                .unwrap()
        }
    }

    #[test]
    fn recovers_settings_position_and_shots() {
        let fx = fixture(4, 2);
        let model = MockModel::new(MockScript::default(), &fx.bundles).unwrap();
        let order = [2, 0, 3, 1];
        let stream = fx.stream(&order, 0);
        let lifelong = fx.builder.build_lifelong_prompt(&stream).unwrap();
        let facts = model.analyze(&fx.query(&lifelong, 3, 5, false)).unwrap();
        assert_eq!(facts.task, "synth_03");
        assert_eq!(facts.setting, SettingKind::Recall);
        assert_eq!(facts.position, Some(0.5));
        assert_eq!(facts.shots, Some(2));
        let gold = fx.bundles[3].spec.option_index(&fx.bundles[3].test.instances[5].label);
        assert_eq!(Some(facts.gold), gold);

        let single = fx.builder.build_single_task_prompt(stream[2].0, stream[2].1).unwrap();
        let facts = model.analyze(&fx.query(&single, 3, 5, false)).unwrap();
        assert_eq!((facts.setting, facts.position, facts.depth), (SettingKind::Baseline, Some(0.0), Some(0.0)));

        let test = stream[2];
        let cases = [
            (SettingKind::Replay, false),
            (SettingKind::Remove, false),
            (SettingKind::Paraphrase, true),
        ];
        for (kind, paraphrase) in cases {
            let context = fx
                .builder
                .build_controlled_prompt(&ControlledSetting::new(kind), test, &stream, 1, None)
                .unwrap();
            let facts = model.analyze(&fx.query(&context, 3, 0, paraphrase)).unwrap();
            assert_eq!(facts.setting, kind);
        }
        for kind in [SettingKind::Repeat, SettingKind::RepeatShuffle] {
            let context = fx
                .builder
                .build_controlled_prompt(&ControlledSetting::repeated(kind, 3), test, &stream, 1, None)
                .unwrap();
            assert_eq!(model.analyze(&fx.query(&context, 3, 0, false)).unwrap().setting, kind);
        }
        let filler = crate::synthetic::filler_text(400, 1);
        let context = fx
            .builder
            .build_controlled_prompt(&ControlledSetting::new(SettingKind::Random), test, &stream, 1, Some(&filler))
            .unwrap();
        assert_eq!(model.analyze(&fx.query(&context, 3, 0, false)).unwrap().setting, SettingKind::Random);
    }

    #[test]
    fn unknown_prompt_is_generation() {
        let fx = fixture(2, 1);
        let model = MockModel::new(MockScript::default(), &fx.bundles).unwrap();
        assert!(model.analyze("hello there").is_none());
        let request = CompletionRequest {
            model: "m".into(),
            prompt: "hello there".into(),
            max_tokens: 5,
            logprobs: None,
            chat: false,
        };
        assert_eq!(model.complete(&request).unwrap().text, "");
    }

    fn client(model: MockModel) -> LmClient {
        LmClient::new(Arc::new(model), ResponseCache::disabled(), EndpointConfig::default())
    }

    fn accuracy_over_tests(script: MockScript, fx: &Fixture, t: usize) -> (usize, usize) {
        let lm = client(MockModel::new(script, &fx.bundles).unwrap());
        let options = OptionSet::new(&fx.bundles[t].spec.options, &WhitespaceTokenizer);
        let context = fx.builder.build_single_task_prompt(&fx.bundles[t].spec, &fx.samples[t][0]).unwrap();
        let mut correct = 0;
        let n = fx.bundles[t].test.instances.len();
        for i in 0..n {
            let (prediction, _) = lm.classify(&fx.query(&context, t, i, false), &options).unwrap();
            let gold = fx.bundles[t].spec.option_index(&fx.bundles[t].test.instances[i].label).unwrap();
            if prediction == Prediction::Option(gold) {
                correct += 1;
            }
        }
        (correct, n)
    }

    #[test]
    fn perfect_and_zero_accuracy() {
        let fx = fixture(3, 1);
        assert_eq!(accuracy_over_tests(MockScript::constant(1.0), &fx, 1), (20, 20));
        assert_eq!(accuracy_over_tests(MockScript::constant(0.0), &fx, 1), (0, 20));
    }

    #[test]
    fn quantile_sampling_is_exact() {
        let fx = fixture(1, 1);
        assert_eq!(accuracy_over_tests(MockScript::constant(0.7), &fx, 0), (14, 20));
    }

    #[test]
    fn bernoulli_rate_matches_script() {
        // ±0.03 at 1000 trials is about a two-sigma band, so most seeds land
        // inside it and the pooled rate is far tighter.
        let mut inside = 0;
        let mut pooled = 0;
        for seed in 0..20u64 {
            let script = MockScript {
                sampling: Sampling::Bernoulli,
                seed,
                ..MockScript::constant(0.7)
            };
            let hits = (0..1000u32)
                .filter(|i| script.bernoulli(&i.to_le_bytes(), 0.7))
                .count();
            pooled += hits;
            if (hits as f64 / 1000.0 - 0.7).abs() <= 0.03 {
                inside += 1;
            }
        }
        assert!(inside >= 17, "{inside} of 20 seeds within tolerance");
        assert!((pooled as f64 / 20_000.0 - 0.7).abs() <= 0.01, "{pooled}");
    }

    #[test]
    fn rules_match_in_order() {
        let script = MockScript {
            rules: vec![
                BehaviorRule {
                    task: Some("a".into()),
                    setting: Some(SettingKind::Recall),
                    depth: None,
                    position: Some((0.0, 0.5)),
                    shots: None,
                    accuracy: 0.2,
                    noise: 0.0,
                },
                BehaviorRule {
                    task: Some("a".into()),
                    setting: None,
                    depth: None,
                    position: None,
                    shots: Some((4, 8)),
                    accuracy: 0.9,
                    noise: 0.1,
                },
            ],
            ..MockScript::constant(0.5)
        };
        let mut facts = PromptFacts {
            task: "a".into(),
            gold: 0,
            setting: SettingKind::Recall,
            position: Some(0.25),
            depth: Some(0.3),
            shots: Some(4),
            context_len: 10,
            rank: 0.5,
        };
        assert_eq!(script.behavior(&facts), (0.2, 0.0));
        facts.position = Some(0.5);
        assert_eq!(script.behavior(&facts), (0.9, 0.1));
        facts.shots = Some(1);
        assert_eq!(script.behavior(&facts), (0.5, 0.0));
        facts.position = Some(1.0);
        assert!(in_range(1.0, (0.5, 1.0)));
    }

    #[test]
    fn echo_returns_needle_sentence() {
        let model = MockModel::new(MockScript::echo("eat a sandwich"), &[]).unwrap();
        let prompt = format!("Some filler here. More filler. {NIAH_NEEDLE} Even more filler.\n\n{NIAH_QUESTION}");
        let request = CompletionRequest {
            model: "m".into(),
            prompt,
            max_tokens: 64,
            logprobs: None,
            chat: false,
        };
        assert_eq!(model.complete(&request).unwrap().text, format!(" {NIAH_NEEDLE}"));
        let silent = MockModel::new(MockScript::default(), &[]).unwrap();
        assert_eq!(silent.complete(&request).unwrap().text, "");
        let mut zero = request.clone();
        zero.max_tokens = 0;
        assert_eq!(model.complete(&zero).unwrap().text, "");
        let mut short = request;
        short.max_tokens = 3;
        assert_eq!(model.complete(&short).unwrap().text, " The best thing");
    }

    #[test]
    fn responses_are_byte_stable() {
        let fx = fixture(2, 1);
        let context = fx.builder.build_single_task_prompt(&fx.bundles[0].spec, &fx.samples[0][1]).unwrap();
        let request = CompletionRequest {
            model: "m".into(),
            prompt: fx.query(&context, 0, 3, false),
            max_tokens: 1,
            logprobs: Some(100),
            chat: false,
        };
        let a = MockModel::new(MockScript::constant(0.5), &fx.bundles).unwrap();
        let b = MockModel::new(MockScript::constant(0.5), &fx.bundles).unwrap();
        assert_eq!(
            serde_json::to_string(&a.complete(&request).unwrap()).unwrap(),
            serde_json::to_string(&b.complete(&request).unwrap()).unwrap()
        );
    }

    #[test]
    fn script_parses_from_toml() {
        let raw = r#"
            seed = 3
            default_accuracy = 0.9
            [[rules]]
            setting = "recall"
            position = [0.0, 0.5]
            accuracy = 0.7
            [[generation]]
            pattern = "sandwich"
            behavior = { kind = "echo" }
        "#;
        let script: MockScript = toml::from_str(raw).unwrap();
        assert_eq!(script.rules[0].position, Some((0.0, 0.5)));
        assert_eq!(script.generation[0].behavior, GenerationBehavior::Echo);
        assert!(script.validate().is_ok());
        let bad = MockScript::constant(1.5);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn truncation_and_sentences() {
        assert_eq!(truncate_words(" a b  c", 2), " a b");
        assert_eq!(truncate_words("abc", 0), "");
        assert_eq!(sentence_at("One. Two three. Four", 7), "Two three.");
        assert_eq!(sentence_at("alpha beta", 3), "alpha beta");
    }
}
