use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn sdgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdgnn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = sdgnn(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str =
    "# synthetic run\nd = 16\nd_word = 16\nbatch_size = 32\ndropout = 0\nmax_epochs = 200\npatience = 30\n";

/// One trained synthetic model shared by the tests that need it.
struct Trained {
    _dir: tempfile::TempDir,
    run: PathBuf,
    test: PathBuf,
    summary: Value,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name);
        for (name, n, seed) in [("train.jsonl", "200", "1"), ("val.jsonl", "100", "2"), ("test.jsonl", "200", "3")] {
            ok(&["synth", "--n", n, "--seed", seed, "--out", s(&p(name))]);
        }
        fs::write(p("run.cfg"), SMALL).unwrap();
        let out = ok(&[
            "train",
            "--config",
            s(&p("run.cfg")),
            "--train",
            s(&p("train.jsonl")),
            "--val",
            s(&p("val.jsonl")),
            "--seed",
            "1",
            "--out",
            s(&p("run")),
        ]);
        Trained { run: p("run"), test: p("test.jsonl"), summary: serde_json::from_str(&out).unwrap(), _dir: dir }
    })
}

fn best(t: &Trained) -> String {
    t.run.join("best.ckpt").display().to_string()
}

#[test]
fn train_writes_checkpoints_and_log() {
    let t = trained();
    for f in ["best.ckpt", "final.ckpt", "train_log.jsonl"] {
        assert!(t.run.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(t.run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count() as u64, t.summary["epochs"].as_u64().unwrap());
    assert!(t.summary["best_val_auroc"].as_f64().unwrap() >= 0.95);
}

#[test]
fn eval_on_held_out_synth_split() {
    let t = trained();
    let report: Value = serde_json::from_str(&ok(&["eval", "--checkpoint", &best(t), "--data", s(&t.test)])).unwrap();
    assert!(report["auroc"].as_f64().unwrap() >= 0.95, "{report}");
    assert_eq!(report["n"], 200);
    for key in ["precision", "recall", "f1", "tp", "fp", "tn", "fn_", "threshold"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn predict_preserves_order_and_range() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let lines: Vec<String> = fs::read_to_string(&t.test).unwrap().lines().take(3).map(String::from).collect();
    // third record repeats the first under another id, with the label dropped
    let mut repeat: Value = serde_json::from_str(&lines[0]).unwrap();
    repeat["id"] = "again".into();
    repeat.as_object_mut().unwrap().remove("label");
    let data = dir.path().join("three.jsonl");
    fs::write(&data, format!("{}\n{}\n{repeat}\n", lines[0], lines[1])).unwrap();

    let out = ok(&["predict", "--checkpoint", &best(t), "--data", s(&data)]);
    let rows: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let first: Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(rows[0]["id"], first["id"]);
    assert_eq!(rows[2]["id"], "again");
    for r in &rows {
        let y = r["y_hat"].as_f64().unwrap();
        assert!(y > 0.0 && y < 1.0);
    }
    assert_eq!(rows[0]["y_hat"], rows[2]["y_hat"]);
}

fn inspect(t: &Trained, id: &str) -> Value {
    serde_json::from_str(&ok(&["inspect", "--checkpoint", &best(t), "--data", s(&t.test), "--id", id])).unwrap()
}

#[test]
fn inspect_weights_are_normalized() {
    let t = trained();
    let dump = inspect(t, "synth-3-00004-neg");
    let n = dump["tokens"].as_array().unwrap().len();
    let edges = dump["edges"].as_array().unwrap();
    for layer in 0..2 {
        let mut sums = vec![0.0; n + 1];
        for e in edges {
            sums[e["u"].as_u64().unwrap() as usize] += e["weights"][layer].as_f64().unwrap();
        }
        for s in &sums[1..] {
            assert!((s - 1.0).abs() < 1e-9, "layer {layer}: {s}");
        }
    }
    let pooled: f64 = dump["pooling"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((pooled - 1.0).abs() < 1e-9);
    assert_eq!(dump["label"], 0);

    let o = sdgnn(&["inspect", "--checkpoint", &best(t), "--data", s(&t.test), "--id", "missing"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing"));
}

/// Which twin gets the attention varies with the seed; that the key edge
/// separates them does not.
#[test]
fn key_edge_attention_separates_twins() {
    let t = trained();
    let (mut pos_mean, mut neg_mean) = (0.0, 0.0);
    let pairs = 20;
    for i in 0..pairs {
        let pos = inspect(t, &format!("synth-3-{i:05}-pos"));
        let neg = inspect(t, &format!("synth-3-{i:05}-neg"));
        let key = pos["edges"].as_array().unwrap().iter().find(|e| e["relation"] == "dobj:fwd").unwrap();
        let twin = neg["edges"].as_array().unwrap().iter().find(|e| e["u"] == key["u"] && e["v"] == key["v"]).unwrap();
        assert_eq!(twin["relation"], "nsubj:fwd");
        pos_mean += key["weights"][0].as_f64().unwrap() / pairs as f64;
        neg_mean += twin["weights"][0].as_f64().unwrap() / pairs as f64;
    }
    assert!((pos_mean - neg_mean).abs() > 0.5, "{pos_mean} vs {neg_mean}");
}

#[test]
fn same_seed_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["synth", "--n", "40", "--seed", "5", "--out", s(&p("a.jsonl"))]);
    ok(&["synth", "--n", "20", "--seed", "6", "--out", s(&p("b.jsonl"))]);
    let run = |out: &str| {
        ok(&[
            "train",
            "--train",
            s(&p("a.jsonl")),
            "--val",
            s(&p("b.jsonl")),
            "--out",
            s(&p(out)),
            "--seed",
            "3",
            "--set",
            "d=8",
            "--set",
            "d_word=8",
            "--set",
            "max_epochs=3",
            "--set",
            "batch_size=8",
        ]);
        // wall-clock seconds are the one field allowed to differ
        fs::read_to_string(p(out).join("train_log.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                assert!(v.as_object_mut().unwrap().remove("seconds").is_some());
                v
            })
            .collect::<Vec<_>>()
    };
    let a = run("r1");
    assert_eq!(a, run("r2"));
    assert_eq!(a.len(), 3);
    assert_eq!(a[2]["epoch"], 3);
}

#[test]
fn usage_errors_exit_2() {
    let o = sdgnn(&["train", "--val", "v.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--train"), "{}", stderr(&o));

    let o = sdgnn(&["train", "--train", "t.jsonl", "--val", "v.jsonl", "--set", "d=7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d must be even"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lr = 0.01\nlearning_rate = 3\n").unwrap();
    let o = sdgnn(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:") && stderr(&o).contains("learning_rate"));

    assert_eq!(sdgnn(&["synth", "--n", "1"]).status.code(), Some(2));
    assert_eq!(sdgnn(&["nonsense"]).status.code(), Some(2));
    assert_eq!(sdgnn(&["eval", "--config", "/no/such/file"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    let o = sdgnn(&["eval", "--checkpoint", &best(t), "--data", s(&p("absent.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));

    let positives: String =
        fs::read_to_string(&t.test).unwrap().lines().step_by(2).take(4).map(|l| format!("{l}\n")).collect();
    fs::write(p("pos.jsonl"), positives).unwrap();
    let o = sdgnn(&["eval", "--checkpoint", &best(t), "--data", s(&p("pos.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("AUROC undefined"), "{}", stderr(&o));

    fs::write(p("empty.jsonl"), "").unwrap();
    assert_eq!(sdgnn(&["eval", "--checkpoint", &best(t), "--data", s(&p("empty.jsonl"))]).status.code(), Some(1));

    let alien = r#"{"id":"x","tokens":["a","b"],"arcs":[[0,1,"root"],[1,2,"vocative"]],"genres":[],"label":1}"#;
    fs::write(p("alien.jsonl"), format!("{alien}\n")).unwrap();
    let o = sdgnn(&["predict", "--checkpoint", &best(t), "--data", s(&p("alien.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown relation vocative"), "{}", stderr(&o));

    fs::write(p("garbage.ckpt"), b"not a checkpoint").unwrap();
    let o = sdgnn(&["predict", "--checkpoint", s(&p("garbage.ckpt")), "--data", s(&t.test)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn synth_is_reproducible_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&["synth", "--n", "200", "--seed", "9", "--out", s(&a)]);
    let to_stdout = ok(&["synth", "--n", "200", "--seed", "9"]);
    fs::write(&b, &to_stdout).unwrap();
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, to_stdout);
    assert_eq!(text.lines().count(), 200);
    let positives = text.lines().filter(|l| l.contains(r#""label":1"#)).count();
    assert_eq!(positives, 100);

    let stats: Value = serde_json::from_str(&ok(&["stats", "--data", s(&a)])).unwrap();
    assert_eq!(stats["num_sentences"], 200);
    assert_eq!(stats["spoiler_ratio"], 0.5);
    let nodes = stats["avg_nodes_per_sentence"].as_f64().unwrap();
    let edges = stats["avg_edges_per_sentence"].as_f64().unwrap();
    assert!((edges - 2.0 * (nodes - 1.0)).abs() < 1e-9);
}

#[test]
fn stats_small_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.jsonl");
    fs::write(
        &one,
        r#"{"id":"a","tokens":["He","dies","."],"arcs":[[2,1,"nsubj"],[0,2,"root"],[2,3,"punct"]],"genres":[],"label":1}"#,
    )
    .unwrap();
    let stats: Value = serde_json::from_str(&ok(&["stats", "--data", s(&one)])).unwrap();
    assert_eq!(stats["num_sentences"], 1);
    assert_eq!(stats["avg_genres_per_sentence"], 0.0);
    assert_eq!(stats["avg_edges_per_sentence"], 4.0);

    let conllu = "# text = He dies\n1\tHe\the\tPRON\t_\t_\t2\tnsubj\t_\t_\n2\tdies\tdie\tVERB\t_\t_\t0\troot\t_\t_\n\n";
    let path = dir.path().join("one.conllu");
    fs::write(&path, conllu).unwrap();
    let stats: Value = serde_json::from_str(&ok(&["stats", "--data", s(&path)])).unwrap();
    assert_eq!(stats["avg_nodes_per_sentence"], 2.0);

    // malformed lines are each reported; strict=false skips them
    fs::write(&one, "{broken\n{\"id\":\"b\"}\n").unwrap();
    let o = sdgnn(&["stats", "--data", s(&one)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 1") && err.contains("line 2"), "{err}");
}
