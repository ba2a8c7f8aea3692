//! The `spl` binary end to end on tiny generated benchmarks.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spl_core::dataio::{load_feature_dataset, Domain};

fn spl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spl")).args(args).output().expect("spawn spl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn benchgen(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["benchgen", "--classes", "3", "--dim", "4", "--per-class", "15", "--out", p(dir)];
    args.extend_from_slice(extra);
    let out = spl(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (dir.join("source.csv"), dir.join("target.csv"))
}

const FAST: &[&str] = &[
    "--iterations",
    "2",
    "--epochs",
    "3",
    "--vae-epochs",
    "1",
    "--hidden-dim",
    "32",
    "--latent-dim",
    "4",
    "--dropout",
    "0.2",
];

fn run(source: &Path, target: &Path, out: &Path, method: &str) -> Output {
    let mut args = vec!["run", "--source", p(source), "--target", p(target), "--method", method, "--out", p(out)];
    args.extend_from_slice(FAST);
    spl(&args)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = benchgen(dir.path(), &[]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&s, &t, out, "naive-spl");
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.csv", "report.md", "trace.jsonl", "selected.csv", "predictions.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let csv = read(a.join("report.csv"));
    assert!(csv.starts_with("task,method,seed,iterations,initial_accuracy,final_accuracy,mean_final_accuracy\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("source→target,naive-spl,0,2,"));
    assert_eq!(read(a.join("trace.jsonl")).lines().count(), 3);
    assert!(read(a.join("selected.csv")).starts_with("sample_id,pseudo_class,confidence,iteration\n"));
}

#[test]
fn augment_off_matches_naive_spl_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = benchgen(dir.path(), &[]);
    let naive = dir.path().join("naive");
    assert_eq!(code(&run(&s, &t, &naive, "naive-spl")), 0);
    let off = dir.path().join("off");
    let mut args = vec!["run", "--source", p(&s), "--target", p(&t), "--method", "norm-vae-spl", "--augment", "off"];
    args.extend_from_slice(&["--out", p(&off)]);
    args.extend_from_slice(FAST);
    assert_eq!(code(&spl(&args)), 0);
    assert_eq!(read(naive.join("predictions.csv")), read(off.join("predictions.csv")));
}

#[test]
fn bad_flags_exit_2_and_bad_data_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = benchgen(dir.path(), &[]);
    assert_eq!(code(&run(&s, &t, dir.path(), "naive_spl")), 2);
    assert_eq!(code(&spl(&["run", "--bogus"])), 2);
    assert_eq!(code(&spl(&["run", "--target", p(&t)])), 2);
    let zero = spl(&["run", "--source", p(&s), "--target", p(&t), "--iterations", "0"]);
    assert_eq!(code(&zero), 2);
    assert_eq!(code(&run(&dir.path().join("missing.csv"), &t, dir.path(), "naive-spl")), 1);
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "#dim=4,classes=3\n0,S,0,1,2,3,4\n1,S,1,1,2,3\n").unwrap();
    let o = run(&ragged, &t, dir.path(), "naive-spl");
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row"));
    // Source and target swapped: domain tags disagree with the roles.
    assert_eq!(code(&run(&t, &s, dir.path(), "naive-spl")), 1);
}

#[test]
fn benchgen_is_deterministic_and_honours_imbalance() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let flags = ["--target-per-class", "20", "--imbalance", "4", "--seed", "3"];
    benchgen(&a, &flags);
    benchgen(&b, &flags);
    assert_eq!(read(a.join("target.csv")), read(b.join("target.csv")));
    assert_eq!(read(a.join("source.csv")), read(b.join("source.csv")));
    let (rows, meta) = load_feature_dataset(a.join("target.csv")).unwrap();
    assert_eq!(meta.classes, 3);
    let mut hist = [0; 3];
    for r in &rows {
        assert_eq!(r.domain, Domain::Target);
        hist[r.label.unwrap()] += 1;
    }
    assert_eq!(hist, [20, 20, 5]);
    assert_eq!(code(&spl(&["benchgen", "--classes", "1", "--out", p(dir.path())])), 2);
    assert_eq!(code(&spl(&["benchgen", "--spread", "-1", "--out", p(dir.path())])), 2);
}

#[test]
fn ablate_grid_and_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = benchgen(dir.path(), &[]);
    let grid = dir.path().join("grid");
    let mut args = vec!["ablate", "--source", p(&s), "--target", p(&t), "--out", p(&grid)];
    args.extend_from_slice(&["--methods", "naive-spl,baseline", "--seeds", "0,1,2,3,4", "--epochs", "3"]);
    args.extend_from_slice(&["--iterations", "2"]);
    assert_eq!(code(&spl(&args)), 0);
    let md = read(grid.join("report.md"));
    let lines: Vec<&str> = md.lines().collect();
    assert!(lines[2].starts_with("| naive-spl | 2 |"));
    assert!(lines[3].starts_with("| baseline | 2 |"));
    let csv = read(grid.join("report.csv"));
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.lines().next().unwrap().ends_with(",mean_final_accuracy"));

    let cell = dir.path().join("cell");
    let mut args = vec!["ablate", "--source", p(&s), "--target", p(&t), "--out", p(&cell)];
    args.extend_from_slice(&["--methods", "naive-spl", "--seeds", "0"]);
    args.extend_from_slice(FAST);
    assert_eq!(code(&spl(&args)), 0);
    let single = dir.path().join("single");
    assert_eq!(code(&run(&s, &t, &single, "naive-spl")), 0);
    assert_eq!(read(cell.join("report.csv")), read(single.join("report.csv")));

    let mut empty = vec!["ablate", "--source", p(&s), "--target", p(&t), "--seeds", ","];
    empty.extend_from_slice(&["--out", p(&cell)]);
    assert_eq!(code(&spl(&empty)), 2);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = benchgen(dir.path(), &[]);
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# tiny run\nsource = {}\ntarget = {}\nmethod = baseline\niterations = 3\nepochs = 3\nseed = 4\n",
            p(&s),
            p(&t)
        ),
    )
    .unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&spl(&["run", "--config", p(&cfg), "--out", p(&out), "--seed", "5"])), 0);
    let row = read(out.join("report.csv")).lines().nth(1).unwrap().to_string();
    assert!(row.starts_with("source→target,baseline,5,3,"), "{row}");
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(code(&spl(&["run", "--config", p(&cfg)])), 2);
}

#[test]
fn project_writes_real_and_synthetic_points() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = benchgen(dir.path(), &[]);
    let out = dir.path().join("proj");
    let mut args = vec!["project", "--source", p(&s), "--target", p(&t), "--out", p(&out)];
    args.extend_from_slice(FAST);
    let o = spl(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("projection.csv"));
    assert!(csv.starts_with("id,domain,label,origin,pc1,pc2\n"));
    let real = csv.lines().filter(|l| l.contains(",real,")).count();
    let synthetic = csv.lines().filter(|l| l.contains(",synthetic,")).count();
    assert_eq!(real, 90);
    assert!(synthetic >= 45);
}
