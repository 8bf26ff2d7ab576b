//! Prompt assembly for single-task, lifelong and controlled settings.
//!
//! A [`PromptRecord`] is a sequence of blocks joined by the separator. Each
//! block remembers its character and token span so depth and length can be
//! measured without re-tokenizing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::task::{FewShotSample, TaskError, TaskSpec};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("filler corpus holds {have} tokens, {need} needed")]
    FillerTooShort { have: usize, need: usize },
    #[error("setting `{setting}` requires {missing}")]
    SettingInputMissing { setting: SettingKind, missing: String },
    #[error("task `{0}` has no block in the prompt")]
    TaskNotInPrompt(String),
    #[error("few-shot sample belongs to `{sample}`, not `{task}`")]
    SampleMismatch { task: String, sample: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Instruction followed by demonstrations of one task.
    InstructionDemos,
    Filler,
    TestHeader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub task_name: Option<String>,
    pub kind: BlockKind,
    /// Byte offsets into [`PromptRecord::text`].
    pub char_start: usize,
    pub char_end: usize,
    pub token_start: usize,
    pub token_end: usize,
}

impl Block {
    pub fn token_len(&self) -> usize {
        self.token_end - self.token_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub text: String,
    pub blocks: Vec<Block>,
    pub total_tokens: usize,
    pub separator: String,
}

impl PromptRecord {
    pub fn empty(separator: &str) -> Self {
        Self {
            text: String::new(),
            blocks: Vec::new(),
            total_tokens: 0,
            separator: separator.to_string(),
        }
    }

    pub fn block_text(&self, block: &Block) -> &str {
        &self.text[block.char_start..block.char_end]
    }

    pub fn block_texts(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| self.block_text(b))
    }

    pub fn task_blocks<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a Block> + 'a {
        self.blocks
            .iter()
            .filter(move |b| b.task_name.as_deref() == Some(task))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    Baseline,
    Random,
    Repeat,
    RepeatShuffle,
    Recall,
    Replay,
    Remove,
    Paraphrase,
}

impl SettingKind {
    pub const ALL: [SettingKind; 8] = [
        SettingKind::Baseline,
        SettingKind::Random,
        SettingKind::Repeat,
        SettingKind::RepeatShuffle,
        SettingKind::Recall,
        SettingKind::Replay,
        SettingKind::Remove,
        SettingKind::Paraphrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingKind::Baseline => "baseline",
            SettingKind::Random => "random",
            SettingKind::Repeat => "repeat",
            SettingKind::RepeatShuffle => "repeat_shuffle",
            SettingKind::Recall => "recall",
            SettingKind::Replay => "replay",
            SettingKind::Remove => "remove",
            SettingKind::Paraphrase => "paraphrase",
        }
    }

    pub fn is_repeat(self) -> bool {
        matches!(self, SettingKind::Repeat | SettingKind::RepeatShuffle)
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SettingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown setting `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlledSetting {
    pub kind: SettingKind,
    /// Copies of the test block for repeat variants; `None` matches the
    /// recall prompt length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u32>,
    /// Filler corpus path; required for `random`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filler_source: Option<String>,
}

impl ControlledSetting {
    pub fn new(kind: SettingKind) -> Self {
        Self {
            kind,
            repetitions: None,
            filler_source: None,
        }
    }

    pub fn repeated(kind: SettingKind, repetitions: u32) -> Self {
        Self {
            kind,
            repetitions: Some(repetitions),
            filler_source: None,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.repetitions == Some(0) {
            return Err(PromptError::SettingInputMissing {
                setting: self.kind,
                missing: "repetitions >= 1".to_string(),
            });
        }
        if self.repetitions.is_some() && !self.kind.is_repeat() {
            return Err(PromptError::SettingInputMissing {
                setting: self.kind,
                missing: "no repetitions (only repeat variants take them)".to_string(),
            });
        }
        match (self.kind, &self.filler_source) {
            (SettingKind::Random, None) => Err(PromptError::SettingInputMissing {
                setting: self.kind,
                missing: "filler_source".to_string(),
            }),
            (kind, Some(_)) if kind != SettingKind::Random => {
                Err(PromptError::SettingInputMissing {
                    setting: kind,
                    missing: "no filler_source (only random takes one)".to_string(),
                })
            }
            _ => Ok(()),
        }
    }

    /// Label used in reports, e.g. `repeat_shuffle x4`.
    pub fn label(&self) -> String {
        match self.repetitions {
            Some(n) => format!("{} x{n}", self.kind),
            None => self.kind.to_string(),
        }
    }

    /// Whether queries use the paraphrased instruction.
    pub fn paraphrase(&self) -> bool {
        self.kind == SettingKind::Paraphrase
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthAnchor {
    #[default]
    Start,
    Midpoint,
}

/// A task paired with the few-shot sample used for its block.
pub type TaskBlock<'a> = (&'a TaskSpec, &'a FewShotSample);

#[derive(Clone)]
pub struct PromptBuilder {
    separator: String,
    tokenizer: Arc<dyn Tokenizer>,
}

impl fmt::Debug for PromptBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PromptBuilder")
            .field("separator", &self.separator)
            .field("tokenizer", &self.tokenizer.id())
            .finish()
    }
}

struct Segment {
    task_name: Option<String>,
    kind: BlockKind,
    text: String,
}

impl PromptBuilder {
    pub fn new(separator: impl Into<String>, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            separator: separator.into(),
            tokenizer,
        }
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    /// `instruction ⊕ demo₁ ⊕ … ⊕ demo_m`; an empty instruction is skipped.
    pub fn task_block_text(
        &self,
        spec: &TaskSpec,
        sample: &FewShotSample,
    ) -> Result<String, PromptError> {
        if sample.task_name != spec.name {
            return Err(PromptError::SampleMismatch {
                task: spec.name.clone(),
                sample: sample.task_name.clone(),
            });
        }
        let mut parts = Vec::with_capacity(sample.examples.len() + 1);
        if !spec.instruction.is_empty() {
            parts.push(spec.instruction.clone());
        }
        for example in &sample.examples {
            parts.push(spec.render_demonstration(example)?);
        }
        Ok(parts.join(&self.separator))
    }

    fn assemble(&self, segments: Vec<Segment>) -> PromptRecord {
        let sep_tokens = self.tokenizer.count(&self.separator);
        let mut text = String::new();
        let mut blocks = Vec::with_capacity(segments.len());
        let mut token_cursor = 0;
        for (i, segment) in segments.into_iter().enumerate() {
            if i > 0 {
                text.push_str(&self.separator);
                token_cursor += sep_tokens;
            }
            let tokens = self.tokenizer.count(&segment.text);
            let char_start = text.len();
            text.push_str(&segment.text);
            blocks.push(Block {
                task_name: segment.task_name,
                kind: segment.kind,
                char_start,
                char_end: text.len(),
                token_start: token_cursor,
                token_end: token_cursor + tokens,
            });
            token_cursor += tokens;
        }
        let total_tokens = self.tokenizer.count(&text);
        PromptRecord {
            text,
            blocks,
            total_tokens,
            separator: self.separator.clone(),
        }
    }

    fn task_segment(&self, spec: &TaskSpec, sample: &FewShotSample) -> Result<Segment, PromptError> {
        Ok(Segment {
            task_name: Some(spec.name.clone()),
            kind: BlockKind::InstructionDemos,
            text: self.task_block_text(spec, sample)?,
        })
    }

    pub fn build_single_task_prompt(
        &self,
        spec: &TaskSpec,
        sample: &FewShotSample,
    ) -> Result<PromptRecord, PromptError> {
        Ok(self.assemble(vec![self.task_segment(spec, sample)?]))
    }

    /// Concatenate task blocks in the given (already permuted) order.
    pub fn build_lifelong_prompt(&self, ordered: &[TaskBlock<'_>]) -> Result<PromptRecord, PromptError> {
        let segments = ordered
            .iter()
            .map(|(spec, sample)| self.task_segment(spec, sample))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.assemble(segments))
    }

    /// `context ⊕ instruction ⊕ inference`, dropping the leading separator
    /// when the context is empty.
    pub fn build_query(
        &self,
        context: &PromptRecord,
        spec: &TaskSpec,
        test_inputs: &BTreeMap<String, String>,
        paraphrase: bool,
    ) -> Result<String, PromptError> {
        let instruction = if paraphrase {
            &spec.instruction_paraphrase
        } else {
            &spec.instruction
        };
        let inference = spec.render_inference(test_inputs)?;
        let mut out = String::with_capacity(
            context.text.len() + instruction.len() + inference.len() + 2 * self.separator.len(),
        );
        if !context.text.is_empty() {
            out.push_str(&context.text);
            out.push_str(&self.separator);
        }
        if !instruction.is_empty() {
            out.push_str(instruction);
            out.push_str(&self.separator);
        }
        out.push_str(&inference);
        Ok(out)
    }

    /// Assemble the context for a controlled setting.
    ///
    /// `stream` is the permuted task order and must contain the test task.
    /// `filler` is the corpus text for the random setting.
    pub fn build_controlled_prompt(
        &self,
        setting: &ControlledSetting,
        test: TaskBlock<'_>,
        stream: &[TaskBlock<'_>],
        seed: u64,
        filler: Option<&str>,
    ) -> Result<PromptRecord, PromptError> {
        let (test_spec, test_sample) = test;
        let single = || self.build_single_task_prompt(test_spec, test_sample);
        let recall = || self.build_lifelong_prompt(stream);
        match setting.kind {
            SettingKind::Baseline => single(),
            SettingKind::Recall | SettingKind::Paraphrase => recall(),
            SettingKind::Replay => {
                let mut segments = stream
                    .iter()
                    .map(|(spec, sample)| self.task_segment(spec, sample))
                    .collect::<Result<Vec<_>, _>>()?;
                segments.push(self.task_segment(test_spec, test_sample)?);
                Ok(self.assemble(segments))
            }
            SettingKind::Remove => {
                let rest: Vec<TaskBlock<'_>> = stream
                    .iter()
                    .copied()
                    .filter(|(spec, _)| spec.name != test_spec.name)
                    .collect();
                self.build_lifelong_prompt(&rest)
            }
            SettingKind::Repeat | SettingKind::RepeatShuffle => {
                let copies = match setting.repetitions {
                    Some(n) => n as usize,
                    None => self.matching_repetitions(test, stream)?,
                };
                let mut segments = Vec::with_capacity(copies);
                for copy in 0..copies {
                    let segment = if copy == 0 || setting.kind == SettingKind::Repeat {
                        self.task_segment(test_spec, test_sample)?
                    } else {
                        let copy_seed = seed::child_seed(seed, "repeat_shuffle", &[copy as u64]);
                        self.task_segment(test_spec, &test_sample.reshuffled(copy_seed))?
                    };
                    segments.push(segment);
                }
                Ok(self.assemble(segments))
            }
            SettingKind::Random => {
                let filler = filler.ok_or_else(|| PromptError::SettingInputMissing {
                    setting: SettingKind::Random,
                    missing: "filler text".to_string(),
                })?;
                let target = recall()?.total_tokens;
                let test_block = self.task_block_text(test_spec, test_sample)?;
                let overhead = self.tokenizer.count(&test_block) + self.tokenizer.count(&self.separator);
                let need = target.saturating_sub(overhead);
                let (prefix, have) = self.tokenizer.truncate(filler, need);
                if have < need {
                    return Err(PromptError::FillerTooShort { have, need });
                }
                let mut segments = Vec::with_capacity(2);
                if !prefix.is_empty() {
                    segments.push(Segment {
                        task_name: None,
                        kind: BlockKind::Filler,
                        text: prefix.to_string(),
                    });
                }
                segments.push(Segment {
                    task_name: Some(test_spec.name.clone()),
                    kind: BlockKind::InstructionDemos,
                    text: test_block,
                });
                Ok(self.assemble(segments))
            }
        }
    }

    /// Copies of the test block whose total length is closest to the recall prompt.
    pub fn matching_repetitions(
        &self,
        test: TaskBlock<'_>,
        stream: &[TaskBlock<'_>],
    ) -> Result<usize, PromptError> {
        let target = self.build_lifelong_prompt(stream)?.total_tokens as f64;
        let single = self.build_single_task_prompt(test.0, test.1)?.total_tokens as f64;
        let sep = self.tokenizer.count(&self.separator) as f64;
        if single + sep <= 0.0 {
            return Ok(1);
        }
        Ok((((target + sep) / (single + sep)).round() as usize).max(1))
    }
}

/// Fractional depth of a task's first block: token offset ÷ total tokens.
pub fn measure_depth(
    context: &PromptRecord,
    task_name: &str,
    anchor: DepthAnchor,
) -> Result<f64, PromptError> {
    let block = context
        .task_blocks(task_name)
        .next()
        .ok_or_else(|| PromptError::TaskNotInPrompt(task_name.to_string()))?;
    if context.total_tokens == 0 {
        return Ok(0.0);
    }
    let offset = match anchor {
        DepthAnchor::Start => block.token_start as f64,
        DepthAnchor::Midpoint => (block.token_start + block.token_end) as f64 / 2.0,
    };
    Ok((offset / context.total_tokens as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{LabeledExample, Template, TaskType};
    use crate::tokenizer::{ByteTokenizer, WhitespaceTokenizer};

    fn spec(name: &str) -> TaskSpec {
        TaskSpec {
            name: name.into(),
            task_type: TaskType::Classification,
            options: vec!["yes".into(), "no".into()],
            instruction: format!("Decide for task {name}."),
            instruction_paraphrase: format!("Task {name}: choose yes or no."),
            demonstration_template: Template::parse("Q: {text}\nA: {label}"),
            inference_template: Template::parse("Q: {text}\nA:"),
        }
    }

    fn sample(name: &str, r: usize) -> FewShotSample {
        FewShotSample {
            task_name: name.into(),
            replicate_index: r,
            examples: vec![
                LabeledExample {
                    inputs: BTreeMap::from([("text".into(), format!("{name} first {r}"))]),
                    label: "yes".into(),
                },
                LabeledExample {
                    inputs: BTreeMap::from([("text".into(), format!("{name} second {r}"))]),
                    label: "no".into(),
                },
            ],
        }
    }

    fn builder() -> PromptBuilder {
        PromptBuilder::new(DEFAULT_SEPARATOR, Arc::new(WhitespaceTokenizer))
    }

    #[test]
    fn single_task_has_three_segments() {
        let (s, f) = (spec("a"), sample("a", 0));
        let record = builder().build_single_task_prompt(&s, &f).unwrap();
        assert_eq!(record.text.split("\n\n").count(), 3);
        assert_eq!(record.blocks.len(), 1);
        assert_eq!(record.blocks[0].char_end, record.text.len());
    }

    #[test]
    fn empty_instruction_starts_with_demo() {
        let mut s = spec("a");
        s.instruction.clear();
        let record = builder().build_single_task_prompt(&s, &sample("a", 0)).unwrap();
        assert!(record.text.starts_with("Q: a first 0\nA: yes"));
    }

    #[test]
    fn ag_news_exact_text() {
        let spec = TaskSpec {
            name: "ag_news".into(),
            task_type: TaskType::Classification,
            options: vec!["World".into(), "Sports".into(), "Business".into(), "Technology".into()],
            instruction: "Classify the news article into World, Sports, Business or Technology.".into(),
            instruction_paraphrase: "Determine which category best fits the news article: Sports, Technology, Business, or World.".into(),
            demonstration_template: Template::parse("Article: {text}\nAnswer: {label}"),
            inference_template: Template::parse("Article: {text}\nAnswer:"),
        };
        let sample = FewShotSample {
            task_name: "ag_news".into(),
            replicate_index: 0,
            examples: vec![LabeledExample {
                inputs: BTreeMap::from([("text".into(), "Rates rise".into())]),
                label: "Business".into(),
            }],
        };
        let record = builder().build_single_task_prompt(&spec, &sample).unwrap();
        assert_eq!(
            record.text,
            "Classify the news article into World, Sports, Business or Technology.\n\nArticle: Rates rise\nAnswer: Business"
        );
    }

    #[test]
    fn lifelong_blocks_follow_permutation() {
        let specs = [spec("t1"), spec("t2"), spec("t3")];
        let samples = [sample("t1", 0), sample("t2", 0), sample("t3", 0)];
        let order = [2usize, 0, 1];
        let stream: Vec<TaskBlock<'_>> = order.iter().map(|&i| (&specs[i], &samples[i])).collect();
        let record = builder().build_lifelong_prompt(&stream).unwrap();
        let names: Vec<_> = record.blocks.iter().map(|b| b.task_name.clone().unwrap()).collect();
        assert_eq!(names, ["t3", "t1", "t2"]);
        assert_eq!(record.block_texts().collect::<Vec<_>>().join("\n\n"), record.text);
        for (s, f) in specs.iter().zip(&samples) {
            let single = builder().build_single_task_prompt(s, f).unwrap();
            assert!(record.text.contains(&single.text));
        }
    }

    #[test]
    fn lifelong_of_one_is_single() {
        let (s, f) = (spec("a"), sample("a", 1));
        let b = builder();
        assert_eq!(
            b.build_lifelong_prompt(&[(&s, &f)]).unwrap(),
            b.build_single_task_prompt(&s, &f).unwrap()
        );
    }

    #[test]
    fn token_accounting_is_additive() {
        let specs = [spec("a"), spec("b")];
        let samples = [sample("a", 0), sample("b", 0)];
        for tok in [Arc::new(WhitespaceTokenizer) as Arc<dyn Tokenizer>, Arc::new(ByteTokenizer)] {
            let b = PromptBuilder::new("\n\n", tok.clone());
            let record = b
                .build_lifelong_prompt(&[(&specs[0], &samples[0]), (&specs[1], &samples[1])])
                .unwrap();
            let blocks: usize = record.blocks.iter().map(Block::token_len).sum();
            assert_eq!(record.total_tokens, blocks + tok.count("\n\n"));
            assert_eq!(record.total_tokens, tok.count(&record.text));
            assert_eq!(record.blocks[1].token_start, record.blocks[0].token_end + tok.count("\n\n"));
        }
    }

    #[test]
    fn query_forms() {
        let (s, f) = (spec("t1"), sample("t1", 0));
        let b = builder();
        let inputs = BTreeMap::from([("text".to_string(), "probe".to_string())]);
        let zero = b.build_query(&PromptRecord::empty("\n\n"), &s, &inputs, false).unwrap();
        assert_eq!(zero, "Decide for task t1.\n\nQ: probe\nA:");
        let ctx = b.build_single_task_prompt(&s, &f).unwrap();
        let plain = b.build_query(&ctx, &s, &inputs, false).unwrap();
        let para = b.build_query(&ctx, &s, &inputs, true).unwrap();
        assert_eq!(plain, format!("{}\n\nDecide for task t1.\n\nQ: probe\nA:", ctx.text));
        assert_eq!(para, format!("{}\n\nTask t1: choose yes or no.\n\nQ: probe\nA:", ctx.text));
        assert!(matches!(
            b.build_query(&ctx, &s, &BTreeMap::new(), false),
            Err(PromptError::Task(TaskError::PlaceholderMismatch(_)))
        ));
    }

    #[test]
    fn remove_drops_only_the_test_block() {
        let specs = [spec("t1"), spec("t2"), spec("t3")];
        let samples = [sample("t1", 0), sample("t2", 0), sample("t3", 0)];
        let stream: Vec<TaskBlock<'_>> = (0..3).map(|i| (&specs[i], &samples[i])).collect();
        let record = builder()
            .build_controlled_prompt(
                &ControlledSetting::new(SettingKind::Remove),
                stream[0],
                &stream,
                1,
                None,
            )
            .unwrap();
        let names: Vec<_> = record.blocks.iter().map(|b| b.task_name.clone().unwrap()).collect();
        assert_eq!(names, ["t2", "t3"]);
    }

    #[test]
    fn repeat_once_is_baseline() {
        let (s, f) = (spec("t1"), sample("t1", 0));
        let b = builder();
        let repeat = b
            .build_controlled_prompt(
                &ControlledSetting::repeated(SettingKind::Repeat, 1),
                (&s, &f),
                &[(&s, &f)],
                9,
                None,
            )
            .unwrap();
        assert_eq!(repeat, b.build_single_task_prompt(&s, &f).unwrap());
    }

    #[test]
    fn repeat_shuffle_first_copy_verbatim() {
        let s = spec("t1");
        let mut f = sample("t1", 0);
        for i in 0..6 {
            f.examples.push(LabeledExample {
                inputs: BTreeMap::from([("text".into(), format!("extra {i}"))]),
                label: if i % 2 == 0 { "yes".into() } else { "no".into() },
            });
        }
        let b = builder();
        let record = b
            .build_controlled_prompt(
                &ControlledSetting::repeated(SettingKind::RepeatShuffle, 3),
                (&s, &f),
                &[(&s, &f)],
                5,
                None,
            )
            .unwrap();
        let single = b.build_single_task_prompt(&s, &f).unwrap();
        let texts: Vec<_> = record.block_texts().collect();
        assert_eq!(texts.len(), 3);
        assert_eq!(texts[0], single.text);
        assert_ne!(texts[1], single.text);
        assert_ne!(texts[1], texts[2]);
        let again = b
            .build_controlled_prompt(
                &ControlledSetting::repeated(SettingKind::RepeatShuffle, 3),
                (&s, &f),
                &[(&s, &f)],
                5,
                None,
            )
            .unwrap();
        assert_eq!(record, again);
    }

    #[test]
    fn random_setting_errors() {
        let (s, f) = (spec("t1"), sample("t1", 0));
        let (s2, f2) = (spec("t2"), sample("t2", 0));
        let b = builder();
        let stream = [(&s, &f), (&s2, &f2)];
        let setting = ControlledSetting {
            kind: SettingKind::Random,
            repetitions: None,
            filler_source: Some("pg.txt".into()),
        };
        assert!(matches!(
            b.build_controlled_prompt(&setting, (&s, &f), &stream, 0, None),
            Err(PromptError::SettingInputMissing { .. })
        ));
        assert!(matches!(
            b.build_controlled_prompt(&setting, (&s, &f), &stream, 0, Some("too short")),
            Err(PromptError::FillerTooShort { have: 2, .. })
        ));
        let filler = "lorem ipsum ".repeat(200);
        let record = b
            .build_controlled_prompt(&setting, (&s, &f), &stream, 0, Some(&filler))
            .unwrap();
        let recall = b.build_lifelong_prompt(&stream).unwrap();
        assert_eq!(record.total_tokens, recall.total_tokens);
        assert_eq!(record.blocks[0].kind, BlockKind::Filler);
    }

    #[test]
    fn setting_validation() {
        assert!(ControlledSetting::new(SettingKind::Random).validate().is_err());
        assert!(ControlledSetting::repeated(SettingKind::Repeat, 0).validate().is_err());
        assert!(ControlledSetting::repeated(SettingKind::Recall, 2).validate().is_err());
        assert!(ControlledSetting::repeated(SettingKind::Repeat, 2).validate().is_ok());
        assert_eq!("repeat_shuffle".parse::<SettingKind>().unwrap(), SettingKind::RepeatShuffle);
    }

    #[test]
    fn depth_measurements() {
        let specs: Vec<TaskSpec> = (0..16).map(|i| spec(&format!("t{i:02}"))).collect();
        let samples: Vec<FewShotSample> =
            (0..16).map(|i| sample(&format!("t{i:02}"), 0)).collect();
        let stream: Vec<TaskBlock<'_>> = specs.iter().zip(&samples).collect();
        let b = PromptBuilder::new("\n\n", Arc::new(WhitespaceTokenizer));
        let record = b.build_lifelong_prompt(&stream).unwrap();
        // Oracle: every block has the same whitespace token count and the
        // separator adds none, so block i starts at i * len.
        let per_block = WhitespaceTokenizer.count(&b.task_block_text(&specs[0], &samples[0]).unwrap());
        assert_eq!(record.total_tokens, 16 * per_block);
        assert_eq!(measure_depth(&record, "t00", DepthAnchor::Start).unwrap(), 0.0);
        let last = measure_depth(&record, "t15", DepthAnchor::Start).unwrap();
        assert_eq!(last, (15 * per_block) as f64 / (16 * per_block) as f64);
        assert!((last - 0.9375).abs() < 1e-12);
        let single = b.build_single_task_prompt(&specs[3], &samples[3]).unwrap();
        assert_eq!(measure_depth(&single, "t03", DepthAnchor::Start).unwrap(), 0.0);
        assert_eq!(measure_depth(&single, "t03", DepthAnchor::Midpoint).unwrap(), 0.5);
        assert!(matches!(
            measure_depth(&single, "t04", DepthAnchor::Start),
            Err(PromptError::TaskNotInPrompt(_))
        ));
    }
}
