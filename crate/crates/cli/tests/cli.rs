use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haystack_core::lm::{mock_serve, MockServerHandle};
use haystack_core::synthetic::{filler_text, write_registry, SyntheticSpec};
use haystack_core::{MockModel, MockScript};

fn haystack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haystack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

struct Fixture {
    dir: tempfile::TempDir,
    registry: PathBuf,
}

impl Fixture {
    fn new(n_tasks: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let registry = dir.path().join("tasks");
        let spec = SyntheticSpec {
            n_tasks,
            test_size: 8,
            ..SyntheticSpec::default()
        };
        write_registry(&registry, &spec).unwrap();
        Self { dir, registry }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, body: &str) -> String {
        let path = self.path("haystack.toml");
        std::fs::write(&path, format!("registry = \"tasks\"\noutput_dir = \"runs\"\n{body}")).unwrap();
        path.display().to_string()
    }

    fn serve(&self, script: MockScript) -> MockServerHandle {
        let model = MockModel::from_registry(script, &self.registry).unwrap();
        mock_serve(model, 0).unwrap()
    }
}

const SCALE_SHOT: &str = "mode = \"scale_shot\"\nn_task = 2\ngrid = [1, 2]\npermutations = 2\nreplicates = 3\n";

#[test]
fn validate_clean_registry() {
    let f = Fixture::new(3);
    let config = f.config("");
    let out = haystack(&["--config", &config, "validate"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("3 tasks, 0 with violations"));
}

#[test]
fn validate_reports_colliding_options() {
    let f = Fixture::new(1);
    let bad = f.registry.join("zz_cities");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(
        bad.join("task.json"),
        r#"{"name": "zz_cities", "task_type": "classification", "options": ["New York", "New Jersey"],
            "instruction": "Which state?", "instruction_2": "Name the state.",
            "demonstration_prompt": "City: {text}\nState: {label}", "inference_prompt": "City: {text}\nState:"}"#,
    )
    .unwrap();
    let rows = "{\"text\": \"Albany\", \"label\": \"New York\"}\n{\"text\": \"Newark\", \"label\": \"New Jersey\"}\n";
    std::fs::write(bad.join("train.jsonl"), rows).unwrap();
    std::fs::write(bad.join("test.jsonl"), rows).unwrap();
    let config = f.config("");
    let out = haystack(&["--config", &config, "validate"]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    assert!(text(&out).contains("share first token \"New\""), "{}", text(&out));
}

#[test]
fn validate_missing_bundle_is_io_error() {
    let f = Fixture::new(2);
    let config = f.config("tasks = [\"synth_00\", \"absent\"]\n");
    let out = haystack(&["--config", &config, "validate"]);
    assert_eq!(code(&out), 2, "{}", text(&out));
}

#[test]
fn bad_config_is_io_error_and_bad_alpha_is_validation() {
    let f = Fixture::new(1);
    let config = f.config("not_a_key = 1\n");
    assert_eq!(code(&haystack(&["--config", &config, "validate"])), 2);
    let config = f.config("alpha = 2.0\n");
    assert_eq!(code(&haystack(&["--config", &config, "validate"])), 1);
    let missing = f.path("nope.toml").display().to_string();
    assert_eq!(code(&haystack(&["--config", &missing, "validate"])), 2);
}

#[test]
fn plan_writes_manifest() {
    let f = Fixture::new(2);
    let config = f.config(SCALE_SHOT);
    let out_path = f.path("m.json");
    let out = haystack(&["--config", &config, "plan", "--out", &out_path.display().to_string()]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let manifest = haystack_core::report::read_manifest(&out_path).unwrap();
    assert_eq!(manifest.grid.len(), 2);
    // Same config, same bytes.
    let again = f.path("m2.json");
    haystack(&["--config", &config, "plan", "--out", &again.display().to_string()]);
    assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn mock_run_score_and_report() {
    let f = Fixture::new(2);
    let server = f.serve(MockScript::constant(1.0));
    let config = f.config(SCALE_SHOT);
    let run_dir = f.path("run").display().to_string();
    let url = server.base_url();
    let out = haystack(&["--config", &config, "run", "--base-url", &url, "--run-dir", &run_dir]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let out = haystack(&["--config", &config, "score", "--run-dir", &run_dir]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("100.0"), "{}", text(&out));
    let out = haystack(&["--config", &config, "report", "--run-dir", &run_dir]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    for name in ["verdicts.json", "summary.json", "reports/heatmap.svg", "reports/diagnostic.svg"] {
        assert!(Path::new(&run_dir).join(name).is_file(), "{name}");
    }
    // A second run finds everything recorded and sends nothing.
    let out = haystack(&["--config", &config, "run", "--base-url", &url, "--run-dir", &run_dir]);
    assert_eq!(code(&out), 0);
    assert!(text(&out).contains("(0 new, 0 requests"), "{}", text(&out));
}

#[test]
fn interrupted_run_resumes_to_identical_store() {
    let f = Fixture::new(2);
    let script = MockScript {
        default_accuracy: 0.7,
        default_noise: 0.2,
        ..MockScript::default()
    };
    let server = f.serve(script);
    let config = f.config(SCALE_SHOT);
    let url = server.base_url();
    let whole = f.path("whole").display().to_string();
    let parts = f.path("parts").display().to_string();
    assert_eq!(code(&haystack(&["--config", &config, "run", "--base-url", &url, "--run-dir", &whole])), 0);
    let out = haystack(&["--config", &config, "run", "--base-url", &url, "--run-dir", &parts, "--max-units", "9"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert_eq!(code(&haystack(&["--config", &config, "run", "--base-url", &url, "--run-dir", &parts])), 0);
    for name in ["manifest.json", "results.jsonl"] {
        let a = std::fs::read(Path::new(&whole).join(name)).unwrap();
        let b = std::fs::read(Path::new(&parts).join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn unreachable_endpoint_exits_3_with_failure_report() {
    let f = Fixture::new(2);
    let config = f.config(&format!("{SCALE_SHOT}[endpoint]\nmax_retries = 1\nrequest_timeout_secs = 2\n"));
    let run_dir = f.path("run");
    let out = haystack(&[
        "--config",
        &config,
        "run",
        "--base-url",
        "http://127.0.0.1:9",
        "--run-dir",
        &run_dir.display().to_string(),
    ]);
    assert_eq!(code(&out), 3, "{}", text(&out));
    let failures = std::fs::read_to_string(run_dir.join("failures.json")).unwrap();
    assert!(failures.contains("synth_00"), "{failures}");
}

#[test]
fn niah_echo_and_silent() {
    let f = Fixture::new(1);
    std::fs::write(f.path("filler.txt"), filler_text(300, 5)).unwrap();
    let body = "filler_corpus = \"filler.txt\"\n[niah]\nlengths = [200, 400]\ndepths = [0.0, 0.5, 1.0]\n";
    let config = f.config(body);
    for (script, expected) in [(MockScript::echo("San Francisco"), 1.0), (MockScript::default(), 0.0)] {
        let server = f.serve(script);
        let run_dir = f.path(&format!("niah{expected}"));
        let out = haystack(&[
            "--config",
            &config,
            "niah",
            "--base-url",
            &server.base_url(),
            "--run-dir",
            &run_dir.display().to_string(),
        ]);
        assert_eq!(code(&out), 0, "{}", text(&out));
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
        let cells = summary["niah"]["cells"].as_array().unwrap();
        assert_eq!(cells.len(), 6);
        assert!(cells.iter().all(|c| c["recall"].as_f64() == Some(expected)));
        assert!(run_dir.join("reports/heatmap.svg").is_file());
    }
}
