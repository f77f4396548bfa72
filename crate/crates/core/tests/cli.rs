use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn miaeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miaeval"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

const CONFIG: &str = r#"
output_dir = "out"
repetitions = 2
attacks = ["threshold", "nn"]

[dataset]
source = "synthetic"
classes = 2
dim = 4
train_per_class = 30
test_per_class = 30
separation = 2.0
seed = 1

[model]
hidden = [8]

[train]
optimizer = "dp-sgd"
learning_rate = 0.05
schedule = "constant"
epochs = 3
batch_size = 8
clip = 1.0
sigma = 1.0

[attack]
epochs = 2
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn accountant_prints_six_significant_digits() {
    let o = miaeval(&[
        "accountant",
        "--sigma",
        "0.651",
        "--epochs",
        "15",
        "--n",
        "25000",
        "--batch",
        "32",
        "--delta",
        "1e-5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eps: f64 = stdout(&o).parse().unwrap();
    assert!((2.7..=3.3).contains(&eps));
    let digits = stdout(&o).chars().filter(char::is_ascii_digit).count();
    assert!(digits <= 6);

    let o = miaeval(&[
        "accountant",
        "--sigma",
        "0.05",
        "--epochs",
        "15",
        "--n",
        "25000",
        "--batch",
        "32",
    ]);
    let eps: f64 = stdout(&o).parse().unwrap();
    assert!((eps / 7000.0 - 1.0).abs() <= 0.15);

    let o = miaeval(&[
        "accountant",
        "--sigma",
        "0",
        "--epochs",
        "15",
        "--n",
        "25000",
        "--batch",
        "32",
    ]);
    assert_eq!((o.status.code(), stdout(&o).as_str()), (Some(0), "inf"));
}

#[test]
fn accountant_usage_errors() {
    assert_eq!(
        miaeval(&[
            "accountant",
            "--sigma",
            "abc",
            "--epochs",
            "1",
            "--n",
            "10",
            "--batch",
            "1"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        miaeval(&["accountant", "--sigma", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        miaeval(&[
            "accountant",
            "--sigma",
            "1",
            "--epochs",
            "1",
            "--n",
            "10",
            "--batch",
            "1",
            "--delta",
            "2"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn bound_values_and_errors() {
    for (eps, expected) in [
        ("0.1", "0.4750"),
        ("5", "0.0067"),
        ("0", "0.5000"),
        ("1", "0.2689"),
    ] {
        let o = miaeval(&["bound", "--epsilon", eps, "--delta", "0"]);
        assert_eq!((o.status.code(), stdout(&o).as_str()), (Some(0), expected));
    }
    let o = miaeval(&["bound", "--epsilon", "-1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn synth_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = d.join("train.csv");
    let test = d.join("test.csv");
    for (path, seed) in [(&train, "1"), (&test, "2")] {
        let o = miaeval(&[
            "synth",
            "--classes",
            "3",
            "--dim",
            "2",
            "--per-class",
            "10",
            "--separation",
            "3",
            "--seed",
            "5",
            "--draw-seed",
            seed,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read_to_string(&train).unwrap().lines().count(), 30);
    let out = d.join("split");
    let o = miaeval(&[
        "split",
        "--train",
        train.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = |name: &str| fs::read_to_string(out.join(name)).unwrap().lines().count();
    assert_eq!(rows("target_train.csv"), 15);
    assert_eq!(rows("shadow_train.csv"), 15);
    assert_eq!(rows("target_test.csv") + rows("shadow_test.csv"), 30);
}

#[test]
fn malformed_csv_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2,0\n1,x,1\n").unwrap();
    let o = miaeval(&[
        "split",
        "--train",
        bad.to_str().unwrap(),
        "--test",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("bad.csv") && stderr(&o).contains("row 2"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn experiment_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(
        lines.next(),
        Some("run,epoch,accuracy,attack,fpr,fnr,p_err,epsilon")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 3 * 2);
    for row in &rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 8);
        for i in [0, 1, 2, 4, 5, 6, 7] {
            let v: f64 = f[i].parse().unwrap();
            assert_eq!(v.to_string(), f[i]);
        }
    }
    let frontier = fs::read_to_string(out.join("frontier.csv")).unwrap();
    assert!(frontier.starts_with("epoch,mean_accuracy,ci_accuracy,mean_p_err,ci_p_err\n"));
    assert_eq!(frontier.lines().count(), 4);
    assert!(fs::read_to_string(out.join("outliers.csv"))
        .unwrap()
        .starts_with("epoch,population,fraction\n"));
    let ckpt = out.join("checkpoints").join("run1_epoch3.miab");
    let bytes = fs::read(&ckpt).unwrap();
    assert_eq!(&bytes[..4], b"MIAB");

    let o = miaeval(&["experiment", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("records.csv")).unwrap(),
        records
    );
    assert_eq!(fs::read(&ckpt).unwrap(), bytes);
    assert!(!dir.path().join("out.partial").exists());

    // single-checkpoint attack and outlier report on the written artefacts
    let split_dir = dir.path().join("split");
    fs::create_dir_all(&split_dir).unwrap();
    let members = split_dir.join("m.csv");
    fs::write(&members, "0.1,0.2,0.3,0.4,0\n1,1,1,1,1\n").unwrap();
    let o = miaeval(&[
        "attack",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--members",
        members.to_str().unwrap(),
        "--nonmembers",
        members.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("fpr,fnr,p_err"));
    let o = miaeval(&[
        "outliers",
        "--decisions",
        out.join("decisions.csv").to_str().unwrap(),
        "--epoch",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn zero_sigma_epsilon_column_is_inf() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("sigma = 1.0", "sigma = 0.0"));
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records = fs::read_to_string(dir.path().join("out/records.csv")).unwrap();
    assert!(records.lines().skip(1).all(|l| l.ends_with(",inf")));
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("dim = 4", "dim = 4\nwidth = 3"));
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 10"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &CONFIG.replace("clip = 1.0\n", ""));
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let cfg = write_config(dir.path(), &CONFIG.replace("epochs = 3\n", "epochs = [3\n"));
    assert_eq!(
        miaeval(&["experiment", "--config", &cfg]).status.code(),
        Some(2)
    );

    let cfg = write_config(
        dir.path(),
        &CONFIG.replace("[attack]\n", "[attack]\nk = 3\n"),
    );
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("attack.k"), "{}", stderr(&o));
}

#[test]
fn failed_experiment_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    // more samples per batch than members: fails once training starts
    let cfg = write_config(
        dir.path(),
        &CONFIG.replace("batch_size = 8", "batch_size = 500"),
    );
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!dir.path().join("out").exists());
    assert!(!dir.path().join("out.partial").exists());

    // an unrelated directory in the way is never replaced; staged files are removed
    let cfg = write_config(dir.path(), CONFIG);
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/keep.txt"), "x").unwrap();
    let o = miaeval(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(dir.path().join("out/keep.txt").exists());
    assert!(!dir.path().join("out.partial").exists());
}

fn frontier_csv(n: usize, shift: f64) -> String {
    let mut s = String::from("epoch,mean_accuracy,ci_accuracy,mean_p_err,ci_p_err\n");
    for e in 1..=n {
        s.push_str(&format!(
            "{e},{},{},{},{}\n",
            0.5 + shift + 0.01 * e as f64,
            0.01,
            0.45 - 0.005 * e as f64,
            0.0
        ));
    }
    s
}

#[test]
fn frontier_plot_markers() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, frontier_csv(15, 0.0)).unwrap();
    fs::write(&b, frontier_csv(15, 0.05)).unwrap();
    let svg = dir.path().join("plot.svg");
    let o = miaeval(&[
        "frontier-plot",
        a.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("class=\"marker-first\"").count(), 1);
    assert_eq!(text.matches("class=\"marker-last\"").count(), 1);
    assert_eq!(text.matches("class=\"marker-mid\"").count(), 13);

    let o = miaeval(&[
        "frontier-plot",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("class=\"series\"").count(), 2);
    assert!(text.contains("stroke=\"#1f77b4\"") && text.contains("stroke=\"#d62728\""));
}

#[test]
fn frontier_plot_zero_width_crosshairs_are_points() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    fs::write(
        &a,
        "epoch,mean_accuracy,ci_accuracy,mean_p_err,ci_p_err\n1,0.5,0,0.4,0\n2,0.6,0,0.3,0\n",
    )
    .unwrap();
    let svg = dir.path().join("p.svg");
    assert!(miaeval(&[
        "frontier-plot",
        a.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap()
    ])
    .status
    .success());
    let text = fs::read_to_string(&svg).unwrap();
    for line in text.lines().filter(|l| l.contains("class=\"ci\"")) {
        for part in line.split("<line").skip(1) {
            let attr = |name: &str| {
                part.split(&format!("{name}=\""))
                    .nth(1)
                    .unwrap()
                    .split('"')
                    .next()
                    .unwrap()
                    .to_string()
            };
            assert_eq!(attr("x1"), attr("x2"));
            assert_eq!(attr("y1"), attr("y2"));
        }
    }
}

#[test]
fn frontier_plot_malformed_row() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("broken.csv");
    fs::write(
        &a,
        "epoch,mean_accuracy,ci_accuracy,mean_p_err,ci_p_err\n1,0.5,0,0.4,0\n2,oops,0,0.3,0\n",
    )
    .unwrap();
    let o = miaeval(&[
        "frontier-plot",
        a.to_str().unwrap(),
        "--out",
        dir.path().join("p.svg").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("broken.csv") && stderr(&o).contains("row 3"),
        "{}",
        stderr(&o)
    );
}
