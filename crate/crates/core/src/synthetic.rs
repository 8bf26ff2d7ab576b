//! Deterministic synthetic task registries and filler text for tests and demos.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::seed;

const OPTION_WORDS: [&str; 12] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima",
];

const VOCABULARY: [&str; 48] = [
    "river", "stone", "market", "cloud", "engine", "garden", "winter", "signal", "harbor", "lantern",
    "meadow", "copper", "violet", "canyon", "pepper", "saddle", "timber", "orbit", "velvet", "marble",
    "falcon", "ribbon", "cactus", "tunnel", "walnut", "glacier", "puzzle", "anchor", "bamboo", "cobalt",
    "dragon", "ember", "fossil", "goblet", "hazel", "island", "jasmine", "kettle", "lagoon", "mosaic",
    "nectar", "oyster", "quartz", "rocket", "summit", "tulip", "umbra", "willow",
];

/// Shape of a generated registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub n_options: usize,
    pub train_per_class: usize,
    pub test_size: usize,
    pub words_per_input: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_tasks: 4,
            n_options: 2,
            train_per_class: 8,
            test_size: 20,
            words_per_input: 6,
            seed: 0,
        }
    }
}

pub fn task_name(index: usize) -> String {
    format!("synth_{index:02}")
}

fn input_text<R: Rng>(rng: &mut R, task: usize, serial: usize, words: usize) -> String {
    let mut text = format!("item{task}x{serial}");
    for _ in 0..words {
        text.push(' ');
        text.push_str(VOCABULARY.choose(rng).expect("vocabulary is non-empty"));
    }
    text
}

fn record(text: &str, label: &str) -> String {
    serde_json::json!({ "text": text, "label": label }).to_string()
}

/// Write `n_tasks` bundles under `root`, one directory per task.
pub fn write_registry(root: &Path, spec: &SyntheticSpec) -> io::Result<Vec<String>> {
    assert!(
        (2..=OPTION_WORDS.len()).contains(&spec.n_options),
        "n_options must be in 2..={}",
        OPTION_WORDS.len()
    );
    let mut names = Vec::with_capacity(spec.n_tasks);
    for t in 0..spec.n_tasks {
        let name = task_name(t);
        let dir = root.join(&name);
        fs::create_dir_all(&dir)?;
        let offset = t % OPTION_WORDS.len();
        let options: Vec<String> = (0..spec.n_options)
            .map(|k| OPTION_WORDS[(offset + k) % OPTION_WORDS.len()].to_string())
            .collect();
        let task = serde_json::json!({
            "name": name,
            "task_type": "classification",
            "options": options,
            "instruction": format!("Task {t}: read the input and answer with one of {}.", options.join(", ")),
            "instruction_2": format!("For exercise number {t}, pick the matching word among {}.", options.join(" or ")),
            "demonstration_prompt": "Input: {text}\nLabel: {label}",
            "inference_prompt": "Input: {text}\nLabel:",
        });
        fs::write(dir.join("task.json"), serde_json::to_string_pretty(&task)?)?;

        let mut rng = seed::rng_for(spec.seed, "synthetic", &[t as u64]);
        let mut serial = 0;
        let mut train = String::new();
        for _ in 0..spec.train_per_class {
            for option in &options {
                let text = input_text(&mut rng, t, serial, spec.words_per_input);
                serial += 1;
                writeln!(train, "{}", record(&text, option)).expect("write to string");
            }
        }
        fs::write(dir.join("train.jsonl"), train)?;
        let mut test = String::new();
        for i in 0..spec.test_size {
            let text = input_text(&mut rng, t, serial, spec.words_per_input);
            serial += 1;
            writeln!(test, "{}", record(&text, &options[i % options.len()])).expect("write to string");
        }
        fs::write(dir.join("test.jsonl"), test)?;
        names.push(name);
    }
    Ok(names)
}

/// Seeded filler prose of `n_sentences` short sentences.
pub fn filler_text(n_sentences: usize, seed: u64) -> String {
    let mut rng = seed::rng_for(seed, "filler", &[]);
    let mut out = String::new();
    for i in 0..n_sentences {
        if i > 0 {
            out.push(' ');
        }
        let len = rng.gen_range(6..12);
        let words: Vec<&str> = (0..len)
            .map(|_| *VOCABULARY.choose(&mut rng).expect("vocabulary is non-empty"))
            .collect();
        let mut sentence = words.join(" ");
        sentence[..1].make_ascii_uppercase();
        sentence.push('.');
        out.push_str(&sentence);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{load_task_bundle, registry_task_names, validate_task};
    use crate::tokenizer::WhitespaceTokenizer;

    #[test]
    fn registry_loads_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_tasks: 16,
            n_options: 3,
            ..SyntheticSpec::default()
        };
        let names = write_registry(dir.path(), &spec).unwrap();
        assert_eq!(registry_task_names(dir.path()).unwrap(), names);
        for name in &names {
            let bundle = load_task_bundle(&dir.path().join(name)).unwrap();
            assert!(validate_task(&bundle.spec, &WhitespaceTokenizer).is_clean());
            assert_eq!(bundle.train.examples.len(), 24);
            assert_eq!(bundle.test.instances.len(), 20);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_registry(a.path(), &SyntheticSpec::default()).unwrap();
        write_registry(b.path(), &SyntheticSpec::default()).unwrap();
        for file in ["task.json", "train.jsonl", "test.jsonl"] {
            let path = |root: &Path| root.join(task_name(1)).join(file);
            assert_eq!(fs::read(path(a.path())).unwrap(), fs::read(path(b.path())).unwrap());
        }
        assert_eq!(filler_text(5, 3), filler_text(5, 3));
        assert!(filler_text(5, 3).ends_with('.'));
    }
}
