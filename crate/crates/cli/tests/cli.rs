/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! End-to-end runs of the `msgan` binary on tiny scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
schema = 1
name = "tiny"

[chain]
link_lengths = [1.0, 1.0]
joint_lower = [-3.0, -3.0]
joint_upper = [3.0, 3.0]

[world]
obstacles = [{ circle = { center = [1.2, 1.2], radius = 0.3 } }]

[[constraints]]
kind = "joint_limit"

[task_box]
min = [-2.0, -2.0]
max = [2.0, 2.0]

[planner]
max_iter = 300

[gan]
epochs = 2
batch_size = 16
n_nets = 3
gen_hidden = [8]
disc_hidden = [6]

[dataset]
size = 64

[plan]
start_box = { min = [1.0, -1.0], max = [2.0, 0.0] }
goal = [-1.0, 1.0]

[coverage]
samples = 100
ensemble_size = 3
"#;

fn msgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msgan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = msgan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(scenario: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.toml"), scenario).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn gen_data(&self, n: &str, seed: &str, out: &str) -> String {
        ok(&["gen-data", "--scenario", &self.arg("s.toml"), "--n", n, "--seed", seed, "--out", &self.arg(out)])
    }

    fn model(&self) -> String {
        self.gen_data("64", "1", "data.csv");
        ok(&[
            "train", "--scenario", &self.arg("s.toml"), "--data", &self.arg("data.csv"), "--seed", "2", "--out", &self.arg("model"),
        ]);
        self.arg("model")
    }
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn gen_data_is_deterministic_with_n_rows() {
    let f = Fixture::new(TINY);
    f.gen_data("50", "4", "a.csv");
    f.gen_data("50", "4", "b.csv");
    assert_eq!(rows(&f.path("a.csv")), 50);
    assert_eq!(fs::read(f.path("a.csv")).unwrap(), fs::read(f.path("b.csv")).unwrap());
}

#[test]
fn unconstrained_scenario_accepts_everything() {
    let free = TINY.replace("obstacles = [{ circle = { center = [1.2, 1.2], radius = 0.3 } }]", "obstacles = []");
    let f = Fixture::new(&free);
    let out = f.gen_data("30", "0", "d.csv");
    assert!(out.contains("acceptance rate 100.00%"), "{out}");
}

#[test]
fn train_writes_manifest_and_history() {
    let f = Fixture::new(TINY);
    f.gen_data("64", "1", "data.csv");
    fs::write(f.path("zero.toml"), "epochs = 0\n").unwrap();
    for (config, epochs) in [(None, 2), (Some("zero.toml"), 0)] {
        let (scen, data, out) = (f.arg("s.toml"), f.arg("data.csv"), f.arg(&format!("m{epochs}")));
        let mut args = vec!["train", "--scenario", &scen, "--data", &data, "--seed", "3", "--out", &out];
        let cfg = config.map(|c| f.arg(c));
        if let Some(c) = &cfg {
            args.extend(["--config", c.as_str()]);
        }
        ok(&args);
        let dir = f.path(&format!("m{epochs}"));
        assert!(dir.join("manifest.toml").exists());
        assert_eq!(fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "msmlp")).count(), 3);
        assert_eq!(rows(&dir.join("history.csv")), epochs);
        let history = fs::read_to_string(dir.join("history.csv")).unwrap();
        for line in history.lines().skip(1) {
            assert!(line.split(',').all(|v| v.parse::<f64>().unwrap().is_finite()));
        }
    }
}

#[test]
fn evaluations_write_two_rows_per_trial_and_repeat_exactly() {
    let f = Fixture::new(TINY);
    let model = f.model();
    for cmd in ["eval-projection", "eval-ik", "bench-plan"] {
        for k in 0..2 {
            let out = f.arg(&format!("{cmd}{k}.csv"));
            ok(&[cmd, "--scenario", &f.arg("s.toml"), "--model", &model, "--trials", "4", "--seed", "5", "--out", &out]);
        }
        let a = f.path(&format!("{cmd}0.csv"));
        assert_eq!(rows(&a), 8);
        assert_eq!(fs::read(&a).unwrap(), fs::read(f.path(&format!("{cmd}1.csv"))).unwrap());
        let text = fs::read_to_string(&a).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert!(cols[1] == "random" || cols[1] == "gan");
            assert!(cols[3..].iter().all(|v| v.parse::<u64>().is_ok()), "{line}");
        }
        assert!(f.path(&format!("{cmd}0.summary.csv")).exists());
        assert!(f.path(&format!("{cmd}0.timing.csv")).exists());
    }
}

#[test]
fn plan_writes_a_path_table() {
    let f = Fixture::new(TINY);
    let model = f.model();
    let stdout = ok(&["plan", "--scenario", &f.arg("s.toml"), "--model", &model, "--trials", "1", "--seed", "1", "--out", &f.arg("path.csv")]);
    if stdout.contains("path with") {
        let text = fs::read_to_string(f.path("path.csv")).unwrap();
        assert!(text.starts_with("q0,q1\n"));
    }
}

#[test]
fn coverage_emits_svg_and_reference_row() {
    let f = Fixture::new(TINY);
    let model = f.model();
    ok(&["coverage", "--scenario", &f.arg("s.toml"), "--model", &model, "--out", &f.arg("cov")]);
    let svg = fs::read_to_string(f.path("cov.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed svg");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let csv = fs::read_to_string(f.path("cov.csv")).unwrap();
    let dataset_row = csv.lines().find(|l| l.starts_with("dataset,")).unwrap();
    assert_eq!(dataset_row.split(',').nth(4), Some("1.0"));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let f = Fixture::new(&TINY.replace("schema = 1", "schema = 7"));
    let out = msgan(&["gen-data", "--scenario", &f.arg("s.toml"), "--n", "5", "--seed", "0", "--out", &f.arg("d.csv")]);
    assert_eq!(out.status.code(), Some(2));

    let unreachable = TINY.replace(
        "[[constraints]]\nkind = \"joint_limit\"",
        "[[constraints]]\nkind = \"ee_pose\"\ntarget = [10.0, 10.0, 0.0]\nweights = [1.0, 1.0, 0.0]",
    );
    let f = Fixture::new(&unreachable);
    let out = msgan(&["gen-data", "--scenario", &f.arg("s.toml"), "--n", "5", "--seed", "0", "--out", &f.arg("d.csv")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = msgan(&["gen-data", "--scenario", "does/not/exist.toml", "--n", "5", "--seed", "0", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));

    let f = Fixture::new(TINY);
    f.gen_data("64", "1", "data.csv");
    fs::write(f.path("wild.toml"), "w_adv = 1e300\nlr_g = 1e300\nepochs = 20\n").unwrap();
    let out = msgan(&[
        "train", "--scenario", &f.arg("s.toml"), "--data", &f.arg("data.csv"), "--config", &f.arg("wild.toml"), "--seed", "0",
        "--out", &f.arg("m"),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = f.arg("no-model");
    let out = msgan(&["eval-ik", "--scenario", &f.arg("s.toml"), "--model", &missing, "--trials", "2", "--seed", "0", "--out", &f.arg("r.csv")]);
    assert_eq!(out.status.code(), Some(1));
}
