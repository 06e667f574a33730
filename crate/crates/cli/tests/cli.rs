use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skd_cli::config::{ExperimentConfig, DEFAULT_CONFIG};
use skd_cli::run::{Manifest, CONFIG_FILE, MANIFEST_FILE, METRICS_FILE, STUDENT_CHECKPOINT, TEACHER_CHECKPOINT};
use skd_cli::table::{Table, COLUMNS};
use skd_core::Checkpoint;

const TINY: &str = r#"
output_dir = "runs"

[dataset]
kind = "synthetic"
num_classes = 3
dim = 4
samples_per_class = 20
cluster_std = 0.8
inter_class_margin = 3.0
seed = 11
test_samples_per_class = 10

[teacher]
hidden = [16]
seed = 1

[student]
hidden = [4]
seed = 2

[loss]
method = "kd"
tau = 4.0
lambda = 0.9

[sgd]
lr = 0.05
momentum = 0.9
weight_decay = 0.0005
epochs = 4
batch_size = 16
seed = 3
schedule = [{ epoch = 2, multiplier = 0.1 }]
"#;

fn skd(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skd"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn work(config_text: &str) -> Work {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_owned();
    let config = root.join("tiny.toml");
    std::fs::write(&config, config_text).unwrap();
    Work {
        _dir: dir,
        root,
        config,
    }
}

fn train(w: &Work, name: &str) -> PathBuf {
    let out = w.root.join(name);
    let r = skd(&[&"train-teacher", &w.config, &"--out", &out]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

fn distill(w: &Work, teacher: &Path, name: &str, extra: &[&str]) -> Output {
    let out = w.root.join(name);
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> =
        vec![&"distill", &w.config, &"--teacher", &teacher, &"--out", &out];
    for e in extra {
        args.push(e);
    }
    skd(&args)
}

fn metrics(dir: &Path) -> Table {
    Table::read(dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&skd(&[&"--help"])), 0);
    assert_eq!(code(&skd(&[&"--version"])), 0);
    assert_eq!(code(&skd(&[&"no-such-command"])), 1);
    assert_eq!(code(&skd(&[&"distill"])), 1);
    let r = skd(&[&"distill", &"x.toml", &"--method", &"hinton"]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("unknown method"), "{}", stderr(&r));
}

#[test]
fn init_config_writes_the_bundled_default_once() {
    let w = work(TINY);
    let path = w.root.join("default.toml");
    assert_eq!(code(&skd(&[&"init-config", &path])), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), DEFAULT_CONFIG);
    assert_eq!(code(&skd(&[&"init-config", &path])), 1);
}

#[test]
fn teacher_run_directory_is_complete_and_reproducible() {
    let w = work(TINY);
    let a = train(&w, "a");
    for f in [CONFIG_FILE, METRICS_FILE, MANIFEST_FILE, TEACHER_CHECKPOINT] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let ckpt = Checkpoint::load(a.join(TEACHER_CHECKPOINT)).unwrap();
    assert!(ckpt.l_avg.unwrap() > 0.0);
    let m = Manifest::read(a.join(MANIFEST_FILE)).unwrap();
    for key in [
        "version",
        "rng",
        "dataset_seed",
        "teacher_seed",
        "student_seed",
        "sgd_seed",
        "l_avg_policy",
    ] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(m.get("l_avg").unwrap().parse::<f64>().unwrap(), ckpt.l_avg.unwrap());

    let t = metrics(&a);
    assert_eq!(t.header, COLUMNS);
    assert_eq!(t.rows.len(), 4);
    let epochs: Vec<String> = t.rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(epochs, ["1", "2", "3", "4"]);

    // Rerun with the same config, and again from the snapshot.
    let b = train(&w, "b");
    let snap = w.root.join("c");
    let r = skd(&[&"train-teacher", &a.join(CONFIG_FILE), &"--out", &snap]);
    assert_eq!(code(&r), 0);
    let bytes = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(bytes(&a), bytes(&snap));
}

#[test]
fn config_errors_exit_one_with_context() {
    let without_teacher: String = {
        let mut skipping = false;
        TINY.lines()
            .filter(|l| {
                if l.starts_with('[') {
                    skipping = *l == "[teacher]";
                }
                !skipping
            })
            .map(|l| format!("{l}\n"))
            .collect()
    };
    let w = work(&without_teacher);
    let r = skd(&[&"train-teacher", &w.config, &"--out", &w.root.join("x")]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("teacher"), "{}", stderr(&r));

    let w = work(&TINY.replace("tau = 4.0", "tau = four"));
    let r = skd(&[&"train-teacher", &w.config]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("line"), "{}", stderr(&r));

    let w = work(&TINY.replace("lambda = 0.9", "lambda = 1.5"));
    assert_eq!(code(&skd(&[&"train-teacher", &w.config])), 1);

    let r = skd(&[&"train-teacher", &"/nonexistent/config.toml"]);
    assert_eq!(code(&r), 3);
}

#[test]
fn divergence_exits_two() {
    let w = work(&TINY.replace("lr = 0.05", "lr = 1e300"));
    let r = skd(&[&"train-teacher", &w.config, &"--out", &w.root.join("t")]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    assert!(stderr(&r).contains("epoch 1"), "{}", stderr(&r));
}

#[test]
fn distill_flags_override_and_are_snapshotted() {
    let w = work(TINY);
    let t = train(&w, "teacher").join(TEACHER_CHECKPOINT);
    let r = distill(&w, &t, "s", &["--method", "skd", "--tau", "2", "--lambda", "0.5"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let dir = w.root.join("s");
    assert!(dir.join(STUDENT_CHECKPOINT).is_file());
    let snap = ExperimentConfig::load(dir.join(CONFIG_FILE)).unwrap();
    assert_eq!(snap.loss.method, skd_core::Method::Skd);
    assert_eq!(snap.loss.tau, 2.0);
    assert_eq!(snap.loss.lambda, 0.5);
    assert!(snap.distill.unwrap().teacher_checkpoint.is_absolute());
    let m = Manifest::read(dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.get("method"), Some("skd"));

    // Re-executing the snapshot needs no flags.
    let again = w.root.join("again");
    let r = skd(&[&"distill", &dir.join(CONFIG_FILE), &"--out", &again]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(
        std::fs::read(dir.join(METRICS_FILE)).unwrap(),
        std::fs::read(again.join(METRICS_FILE)).unwrap()
    );
}

#[test]
fn kd_with_zero_lambda_matches_ce() {
    let w = work(TINY);
    let t = train(&w, "teacher").join(TEACHER_CHECKPOINT);
    assert_eq!(code(&distill(&w, &t, "kd0", &["--method", "kd", "--lambda", "0"])), 0);
    assert_eq!(code(&distill(&w, &t, "ce", &["--method", "ce"])), 0);
    let a = metrics(&w.root.join("kd0"));
    let b = metrics(&w.root.join("ce"));
    // kd_part is logged for KD even at λ = 0; everything else must agree.
    let kd_part = a.column("kd_part").unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (i, (x, y)) in ra.iter().zip(rb).enumerate() {
            if i != kd_part {
                assert_eq!(x, y, "column {}", a.header[i]);
            }
        }
    }
    assert_eq!(
        std::fs::read(w.root.join("kd0").join(STUDENT_CHECKPOINT)).unwrap(),
        std::fs::read(w.root.join("ce").join(STUDENT_CHECKPOINT)).unwrap()
    );
}

#[test]
fn skd_is_radially_orthogonal_at_extreme_temperatures() {
    let w = work(TINY);
    let t = train(&w, "teacher").join(TEACHER_CHECKPOINT);
    for tau in ["1", "16"] {
        let name = format!("skd-{tau}");
        let r = distill(&w, &t, &name, &["--method", "skd", "--tau", tau]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        let table = metrics(&w.root.join(&name));
        for v in table.numbers("radial_alignment").unwrap() {
            assert!(v.unwrap() <= 1e-8, "τ={tau}: {v:?}");
        }
        assert!(table.numbers("sphere_confidence").unwrap().iter().all(Option::is_some));
    }
}

#[test]
fn methods_needing_l_avg_reject_a_teacher_without_it() {
    let w = work(TINY);
    let t = train(&w, "teacher").join(TEACHER_CHECKPOINT);
    let mut ckpt = Checkpoint::load(&t).unwrap();
    ckpt.l_avg = None;
    let bare = w.root.join("bare.ckpt");
    ckpt.save(&bare).unwrap();
    for method in ["skd", "kdstar"] {
        let r = distill(&w, &bare, method, &["--method", method]);
        assert_eq!(code(&r), 1);
        assert!(stderr(&r).contains("l_avg"), "{}", stderr(&r));
    }
    assert_eq!(code(&distill(&w, &bare, "kd", &["--method", "kd"])), 0);
    let r = distill(&w, &w.root.join("missing.ckpt"), "m", &[]);
    assert_eq!(code(&r), 3);
    let r = skd(&[&"distill", &w.config, &"--out", &w.root.join("n")]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("--teacher"));
}

fn assert_svg(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
    assert!(doc.descendants().any(|n| n.has_tag_name("polyline")));
    assert!(!text.contains("NaN"));
}

#[test]
fn report_echoes_merges_and_rejects_mismatched_schemas() {
    let w = work(TINY);
    let a = train(&w, "a");
    let t = a.join(TEACHER_CHECKPOINT);
    assert_eq!(code(&distill(&w, &t, "kd", &[])), 0);

    let one = w.root.join("report-one");
    let r = skd(&[&"report", &a, &"--out", &one]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let echoed = std::fs::read(one.join("report.csv")).unwrap();
    assert_eq!(echoed, std::fs::read(a.join(METRICS_FILE)).unwrap());
    assert_eq!(String::from_utf8_lossy(&r.stdout).as_bytes(), &echoed[..]);

    let two = w.root.join("report-two");
    let r = skd(&[&"report", &a, &w.root.join("kd"), &"--out", &two]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let merged = Table::read(two.join("report.csv")).unwrap();
    assert_eq!(merged.header[0], "run_id");
    assert_eq!(&merged.header[1..], COLUMNS);
    assert_eq!(merged.rows.len(), 8);
    assert_eq!(merged.rows[0][0], "a");
    assert_eq!(merged.rows[7][0], "kd");
    let charts: Vec<PathBuf> = std::fs::read_dir(&two)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    assert!(charts.iter().any(|p| p.ends_with("test_acc_vs_epoch.svg")));
    for c in &charts {
        assert_svg(c);
    }

    let summary = w.root.join("summary.csv");
    std::fs::write(&summary, "tau,method,student_test_acc\n1,kd,0.5\n").unwrap();
    let r = skd(&[&"report", &a, &summary, &"--out", &w.root.join("bad")]);
    assert_eq!(code(&r), 1);
    let err = stderr(&r);
    assert!(
        err.contains("schema") && err.contains("tau") && err.contains("lr"),
        "{err}"
    );
}

#[test]
fn sweeps_write_summaries_and_charts() {
    let w = work(TINY);
    let cap = w.root.join("cap");
    let r = skd(&[
        &"sweep-capacity",
        &w.config,
        &"--teacher-widths",
        &"4,32",
        &"--jobs",
        &"2",
        &"--out",
        &cap,
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let s = Table::read(cap.join("summary.csv")).unwrap();
    assert_eq!(s.rows.len(), 4);
    let params: Vec<usize> = s.rows.iter().step_by(2).map(|r| r[2].parse().unwrap()).collect();
    assert!(params[0] < params[1]);
    for name in ["kd-w4", "skd-w32", "teacher-w32"] {
        assert!(cap.join(name).join(METRICS_FILE).is_file(), "{name}");
    }
    assert_svg(&cap.join("kd_loss_vs_width.svg"));
    assert_svg(&cap.join("confidence_gap_vs_width.svg"));

    let temp = w.root.join("temp");
    let t = cap.join("teacher-w32").join(TEACHER_CHECKPOINT);
    let r = skd(&[
        &"sweep-temperature",
        &w.config,
        &"--teacher",
        &t,
        &"--jobs",
        &"3",
        &"--out",
        &temp,
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let s = Table::read(temp.join("summary.csv")).unwrap();
    assert_eq!(s.rows.len(), 10);
    assert_svg(&temp.join("accuracy_vs_tau.svg"));
    let m = Manifest::read(temp.join(MANIFEST_FILE)).unwrap();
    assert!(m.get("kd_accuracy_std").is_some() && m.get("skd_accuracy_std").is_some());
    assert_eq!(m.get("sgd_seed"), Some("3"));
    // Every point shares the base seeds.
    for row in &s.rows {
        let dir = temp.join(format!("{}-tau{}", row[1], row[0]));
        let pm = Manifest::read(dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(pm.get("student_seed"), Some("2"));
        assert_eq!(pm.get("sgd_seed"), Some("3"));
    }

    // A report over a sweep directory charts against the sweep axis.
    let rep = w.root.join("rep");
    assert_eq!(code(&skd(&[&"report", &temp, &"--out", &rep])), 0);
    assert_svg(&rep.join("student_test_acc_vs_tau.svg"));

    // Parallelism does not change results.
    let serial = w.root.join("temp1");
    let r = skd(&[&"sweep-temperature", &w.config, &"--teacher", &t, &"--out", &serial]);
    assert_eq!(code(&r), 0);
    assert_eq!(
        std::fs::read(temp.join("summary.csv")).unwrap(),
        std::fs::read(serial.join("summary.csv")).unwrap()
    );

    let r = skd(&[&"sweep-capacity", &w.config, &"--teacher-widths", &"8"]);
    assert_eq!(code(&r), 1);
    let r = skd(&[&"sweep-temperature", &w.config, &"--taus", &"1,0"]);
    assert_eq!(code(&r), 1);
    let r = skd(&[&"sweep-temperature", &w.config, &"--taus", &"1,2", &"--jobs", &"0"]);
    assert_eq!(code(&r), 1);
}
