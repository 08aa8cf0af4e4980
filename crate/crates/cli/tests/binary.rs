use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn woundsev(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_woundsev")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"
manifest = "data/manifest.csv"
output_dir = "run"
channel = "Z0"
seed = 5

[model]
family = "single"
backbones = ["ToySmall"]
num_classes = 3
head = [8]

[training]
epochs = 2
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = woundsev(dir.path(), &["fixture", "--out", "data", "--per-class", "12", "--size", "64", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn injected_gold_predictions_give_a_diagonal_report() {
    let dir = setup();
    let o = woundsev(dir.path(), &["prepare", "--config", "exp.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));

    // predictions.csv of a first evaluation needs a model; build the gold
    // predictions straight from the index instead
    let index = fs::read_to_string(dir.path().join("run/prepared/index.csv")).unwrap();
    let mut preds = String::from("key,predicted\n");
    for line in index.lines().skip(1).filter(|l| l.contains(",test,")) {
        let f: Vec<&str> = line.split(',').collect();
        preds.push_str(&format!("{},{}\n", f[2], f[3]));
    }
    fs::write(dir.path().join("gold.csv"), preds).unwrap();

    let o = woundsev(dir.path(), &["evaluate", "--config", "exp.toml", "--predictions", "gold.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("accuracy: 100.00%"), "{out}");
    assert!(out.contains("| Recall | 100.0% | 100.0% | 100.0% | 100.0% |"), "{out}");
    assert!(dir.path().join("run/eval/eval_report.json").is_file());

    let o = woundsev(dir.path(), &["report", "run", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "Model,Z0\nToySmall,100.00%\n");
}

#[test]
fn train_then_evaluate_and_reproduce() {
    let dir = setup();
    let o = woundsev(dir.path(), &["run", "--config", "exp.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy: "));
    for policy in ["best_val_accuracy", "best_combined_accuracy"] {
        assert!(dir.path().join("run/model/checkpoints").join(policy).join("spec.json").is_file());
    }
    let history = fs::read_to_string(dir.path().join("run/model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    // a second output directory with the same seed reproduces the history
    for cmd in ["prepare", "train"] {
        let o = woundsev(dir.path(), &[cmd, "--config", "exp.toml", "--out", "again"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read_to_string(dir.path().join("again/model/history.csv")).unwrap(), history);

    // a different seed changes the split
    let o = woundsev(dir.path(), &["prepare", "--config", "exp.toml", "--out", "other", "--seed", "6"]);
    assert!(o.status.success());
    let split = |d: &str| fs::read_to_string(dir.path().join(d).join("prepared/split.json")).unwrap();
    assert_ne!(split("run"), split("other"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    // training before preparing is a data error
    let o = woundsev(dir.path(), &["train", "--config", "exp.toml"]);
    assert_eq!(o.status.code(), Some(65), "{}", stderr(&o));
    assert!(stderr(&o).contains("prepare"));

    let dup = CONFIG.replace("family = \"single\"", "family = \"stacked2\"").replace("[\"ToySmall\"]", "[\"ToySmall\", \"toy small\"]").replace("head = [8]\n", "");
    fs::write(dir.path().join("dup.toml"), dup).unwrap();
    let o = woundsev(dir.path(), &["train", "--config", "dup.toml"]);
    assert_eq!(o.status.code(), Some(78), "{}", stderr(&o));
    assert!(stderr(&o).contains("more than once"));

    let o = woundsev(dir.path(), &["prepare", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(78));

    fs::create_dir(dir.path().join("empty")).unwrap();
    let o = woundsev(dir.path(), &["report", "empty"]);
    assert_eq!(o.status.code(), Some(65));
}

#[test]
fn rubric_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ok.toml"), "color = \"red100\"\nperiwound = \"normal\"\nsize_cm = 1.5\ndepth = \"minimal-none\"\n").unwrap();
    let o = woundsev(dir.path(), &["rubric", "ok.toml"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.ends_with("GREEN")).count(), 5, "{out}");

    fs::write(dir.path().join("bad.toml"), "color = \"red100\"\nperiwound = \"normal\"\nsize_cm = [1]\ndepth = 2\n").unwrap();
    let o = woundsev(dir.path(), &["rubric", "bad.toml"]);
    assert_eq!(o.status.code(), Some(78));
    assert!(stderr(&o).contains("bad.toml:3"), "{}", stderr(&o));
}
