use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
train_count = 200
test_count = 60
eval_pool = 120
stem_width = 4
stage_widths = [4, 8, 8]
epochs = 2
batch_size = 32
regimes = ["baseline", "cutmix"]
eval_samples = 5
min_score = 0.0
iba_steps = 2
iba_calibration = 100
n_orders = 2
step_stride = 16
corpus_count = 20
"#;

fn mixinterp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixinterp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn full_command_chain_and_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let base = ["--config", "tiny.toml", "--out", "out"];
    for cmd in ["train", "attribute", "eval-align", "eval-faith", "dissect"] {
        let mut args = vec![cmd];
        args.extend(base);
        let o = mixinterp(dir.path(), &args);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = mixinterp(dir.path(), &["eval-align", "--config", "tiny.toml", "--out", "out", "--method", "iba", "--models", "cutmix"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("cutmix\tiba\t")), "{out}");
    assert_eq!(out.lines().count(), 3);

    let o = mixinterp(dir.path(), &["report", "--config", "tiny.toml", "--out", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<String> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| dir.path().join(l).to_string_lossy().into_owned())
        .collect();
    for name in ["alignment.tsv", "inter_model_deletion.tsv", "faithfulness_gradcam.svg", "heatmaps_iba.svg", "concepts.svg"] {
        assert!(files.iter().any(|f| f.ends_with(name)), "missing {name}");
    }
    let table = fs::read_to_string(files.iter().find(|f| f.ends_with("alignment.tsv")).unwrap()).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("baseline\t"));

    // Reports regenerate from the records alone.
    let report_dir = Path::new(&files[0]).parent().unwrap().to_path_buf();
    let before = fs::read(report_dir.join("alignment.tsv")).unwrap();
    fs::remove_dir_all(&report_dir).unwrap();
    let run_dir = report_dir.parent().unwrap();
    let o = mixinterp(dir.path(), &["report", "--run", run_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(report_dir.join("alignment.tsv")).unwrap(), before);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    fs::write(dir.path().join("bad.toml"), "no_such_key = 3\n").unwrap();
    fs::write(dir.path().join("invalid.toml"), "epochs = 0\n").unwrap();

    assert_eq!(code(&mixinterp(dir.path(), &["train", "--config", "bad.toml"])), 2);
    assert_eq!(code(&mixinterp(dir.path(), &["train", "--config", "invalid.toml"])), 2);
    assert_eq!(code(&mixinterp(dir.path(), &["train", "--config", "tiny.toml", "--models", "mixup"])), 2);
    assert_eq!(code(&mixinterp(dir.path(), &["attribute", "--config", "tiny.toml", "--method", "lime"])), 2);
    assert_eq!(code(&mixinterp(dir.path(), &["bogus"])), 2);

    let missing = mixinterp(dir.path(), &["attribute", "--config", "tiny.toml", "--out", "empty"]);
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("mixinterp train"));
    assert_eq!(code(&mixinterp(dir.path(), &["train", "--config", "absent.toml"])), 3);
    assert_eq!(code(&mixinterp(dir.path(), &["report", "--run", "nowhere"])), 3);

    // A run directory without results has nothing to report.
    let run = dir.path().join("bare");
    fs::create_dir_all(&run).unwrap();
    fs::write(run.join("config.toml"), TINY).unwrap();
    let o = mixinterp(dir.path(), &["report", "--run", "bare"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no data"));

    let help = mixinterp(dir.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in ["train", "attribute", "eval-align", "eval-faith", "dissect", "report"] {
        assert!(text.contains(cmd));
    }
}
