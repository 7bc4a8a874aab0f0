use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synthetic.n_users=24",
    "--set",
    "synthetic.n_items=40",
    "--set",
    "synthetic.interactions_per_user=8",
    "--set",
    "synthetic.d0_text=6",
    "--set",
    "synthetic.d0_visual=6",
    "--set",
    "model.chunk_dim=4",
    "--set",
    "train.max_epochs=4",
    "--set",
    "train.eval_every=2",
    "--set",
    "train.patience=4",
    "--set",
    "train.lr=0.01",
    "--set",
    "train.batch_size=64",
];

fn addrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_addrl"))
        .current_dir(dir)
        .arg("--no-banner")
        .args(SMALL)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = addrl(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synthetic", "--out", "data"]);
    ok(dir.path(), &["--data", "data", "train", "--out", "run"]);
    dir
}

#[test]
fn gradcheck_passes_on_the_toy_model() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gradcheck", "--seed", "1"]);
    let last = stdout.lines().last().unwrap();
    let err: f64 = last.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4, "{stdout}");
    let out = addrl(dir.path(), &["gradcheck", "--seed", "1", "--tolerance", "1e-15"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn help_lists_every_key_with_default() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    for line in [
        "train.lr = 0.0001",
        "train.batch_size = 1024",
        "train.patience = 50",
        "model.chunk_dim = 32",
        "model.temperature = 0.2",
        "model.activation = \"tanh\"",
        "data.residual_chunk = true",
        "synthetic.affinity = 8.0",
        "eval.cutoffs = [10, 20]",
        "grid.alpha = []",
    ] {
        assert!(help.contains(line), "missing {line:?}");
    }
    for cmd in ["gen-synthetic", "train", "evaluate", "recommend", "whatif", "ablate", "grid", "export", "gradcheck"] {
        assert!(help.contains(cmd), "missing command {cmd}");
    }
}

#[test]
fn whatif_at_one_matches_recommend() {
    let d = fixture();
    let p = d.path();
    ok(p, &["--data", "data", "recommend", "--checkpoint", "run/model.ckpt", "--user", "u7", "-n", "20", "--out", "a.csv"]);
    ok(
        p,
        &[
            "--data", "data", "whatif", "--checkpoint", "run/model.ckpt", "--attr", "price", "--xi", "1", "--user", "u7",
            "-n", "20", "--out", "b.csv",
        ],
    );
    let a = std::fs::read_to_string(p.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(p.join("b.csv")).unwrap());
    assert_eq!(a.lines().count(), 21);
    assert_eq!(a.lines().next(), Some("rank,item_token,score"));

    ok(
        p,
        &[
            "--data", "data", "whatif", "--checkpoint", "run/model.ckpt", "--attr", "price", "--value", "v0",
            "--xi=-1,0,1", "--cohort", "5", "--out", "c.csv",
        ],
    );
    let c = std::fs::read_to_string(p.join("c.csv")).unwrap();
    assert_eq!(c.lines().next(), Some("xi,level_name,fraction"));
    assert_eq!(c.lines().count(), 1 + 3 * 4);
}

#[test]
fn training_is_byte_reproducible() {
    let d = fixture();
    let p = d.path();
    ok(p, &["--data", "data", "train", "--out", "again"]);
    for f in ["history.csv", "metrics.csv", "model.ckpt"] {
        let a = std::fs::read(p.join("run").join(f)).unwrap();
        assert_eq!(a, std::fs::read(p.join("again").join(f)).unwrap(), "{f}");
    }
    let ck = std::fs::read_to_string(p.join("run/model.ckpt")).unwrap();
    assert!(ck.starts_with("ADDRL-CKPT-1\n"));
    let history = std::fs::read_to_string(p.join("run/history.csv")).unwrap();
    assert!(history.starts_with("epoch,loss_total,loss_bpr,loss_intra,loss_inter,loss_low,val_recall20,val_ndcg20\n0,,"));
}

#[test]
fn ablate_writes_a_metrics_row() {
    let d = fixture();
    let p = d.path();
    ok(p, &["--data", "data", "ablate", "--variant", "w/o_intra", "--out", "ab"]);
    let csv = std::fs::read_to_string(p.join("ab/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,recall20,ndcg20,best_epoch");
    assert!(lines[1].starts_with("w/o_intra,"));
    assert_eq!(lines.len(), 2);
    let history = std::fs::read_to_string(p.join("ab/wo_intra/history.csv")).unwrap();
    for row in history.lines().skip(2) {
        assert_eq!(row.split(',').nth(3), Some("0"), "{row}");
    }
}

#[test]
fn evaluate_export_interpret_and_grid() {
    let d = fixture();
    let p = d.path();
    ok(p, &["--data", "data", "evaluate", "--checkpoint", "run/model.ckpt", "--out", "m.csv"]);
    assert_eq!(
        std::fs::read_to_string(p.join("m.csv")).unwrap(),
        std::fs::read_to_string(p.join("run/metrics.csv")).unwrap()
    );
    ok(p, &["--data", "data", "evaluate", "--baseline", "popularity", "--out", "pop.csv"]);
    ok(p, &["--data", "data", "export", "--checkpoint", "run/model.ckpt", "--out", "e.csv"]);
    let e = std::fs::read_to_string(p.join("e.csv")).unwrap();
    assert!(e.starts_with("entity_token,source,chunk_index,attr_name,value_name,f1,f2,f3,f4\n"));
    ok(p, &["--data", "data", "interpret", "--checkpoint", "run/model.ckpt", "--user", "u1", "-n", "2", "--out", "i.csv"]);
    let i = std::fs::read_to_string(p.join("i.csv")).unwrap();
    assert_eq!(i.lines().count(), 1 + 2 * 4);
    ok(p, &["--data", "data", "--set", "grid.alpha=[0.0, 0.01]", "grid", "--jobs", "2", "--out", "g"]);
    let g = std::fs::read_to_string(p.join("g/grid.csv")).unwrap();
    assert_eq!(g.lines().count(), 3);
    assert_eq!(g.lines().filter(|l| l.ends_with(",1")).count(), 1);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = addrl(p, &["--set", "train.lrr=1", "gradcheck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lrr"));

    std::fs::write(p.join("bad.toml"), "[train]\nlr = 1e-3\nmystery = 2\n").unwrap();
    let out = addrl(p, &["--config", "bad.toml", "gradcheck"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("bad.toml") && msg.contains("line 3") && msg.contains("mystery"), "{msg}");

    assert_eq!(addrl(p, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(addrl(p, &["--data", "missing", "train", "--out", "r"]).status.code(), Some(2));

    ok(p, &["gen-synthetic", "--out", "data"]);
    let mut lines = std::fs::read_to_string(p.join("data/interactions.tsv")).unwrap();
    lines.push_str("only-one-column\n");
    std::fs::write(p.join("data/interactions.tsv"), lines).unwrap();
    let out = addrl(p, &["--data", "data", "train", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("interactions.tsv:"));
}

#[test]
fn flags_win_over_config_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), "[synthetic]\nseed = 1\n").unwrap();
    ok(p, &["--config", "c.toml", "--set", "synthetic.seed=2", "--seed", "3", "gen-synthetic", "--out", "a"]);
    ok(p, &["--set", "synthetic.seed=3", "gen-synthetic", "--out", "b"]);
    ok(p, &["--config", "c.toml", "gen-synthetic", "--out", "c"]);
    let read = |d: &str| std::fs::read(p.join(d).join("interactions.tsv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}
