use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgre::evaluation::{read_predictions, MetricReport};
use cgre::model::Checkpoint;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn overfit_conf() -> PathBuf {
    data_dir().join("synthetic/overfit/run.conf")
}

fn cgre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgre"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A quick config layered over the shipped fixture config.
fn quick_conf(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("quick.conf");
    fs::write(&p, format!("include = {}\nepochs = 5\n{extra}", s(&overfit_conf()))).unwrap();
    p
}

fn train(conf: &Path, out: &Path) -> Output {
    cgre(&["train", "--config", s(conf), "--out", s(out)])
}

fn read_report(path: &Path) -> MetricReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn build_graph_reports_seventy_two_nodes_for_fb_nyt() {
    let out = tempfile::tempdir().unwrap();
    let fb = data_dir().join("fb_nyt");
    let o = cgre(&[
        "build-graph",
        "--schema",
        s(&fb.join("schema.json")),
        "--constraints",
        s(&fb.join("constraints.tsv")),
        "--out",
        s(out.path()),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("nodes: 72\n"), "{text}");
    assert!(text.contains("constraint_edges: 164\n"), "{text}");
    assert!(out.path().join("graph.json").exists());
    assert_eq!(fs::read_to_string(out.path().join("graph_report.txt")).unwrap(), text);
}

#[test]
fn build_graph_toy_schema_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("schema.json"), r#"{"relations":["NA","r1","r2"],"types":["A","B","Others"]}"#).unwrap();
    fs::write(dir.path().join("c.tsv"), "A\tr1\tB\nB\tr2\tA\nA\tr2\tA\n").unwrap();
    let out = dir.path().join("out");
    let o = cgre(&[
        "build-graph",
        "--schema",
        s(&dir.path().join("schema.json")),
        "--constraints",
        s(&dir.path().join("c.tsv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    // A->r1, r1->B, B->r2, A->r2, r2->A; NA<->{A,B,Others}; one loop per node
    for line in ["nodes: 6", "constraint_edges: 5", "na_edges: 6", "self_loops: 6", "total_edges: 17"] {
        assert!(text.contains(line), "missing {line:?} in {text}");
    }
}

#[test]
fn build_graph_without_constraints_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cgre(&[
        "build-graph",
        "--schema",
        s(&data_dir().join("fb_nyt/schema.json")),
        "--constraints",
        s(&dir.path().join("missing.tsv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn build_graph_reports_unknown_relation_with_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.tsv");
    fs::write(&c, "PERSON\tfounded\tORG\nPERSON\tnot_a_relation\tORG\n").unwrap();
    let o = cgre(&[
        "build-graph",
        "--schema",
        s(&data_dir().join("synthetic/overfit/schema.json")),
        "--constraints",
        s(&c),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("c.tsv") && err.contains("line 2"), "{err}");
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(cgre(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cgre(&["train"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "batch size = 0\n").unwrap();
    assert_eq!(train(&conf, dir.path()).status.code(), Some(1));
    assert_eq!(cgre(&["--help"]).status.code(), Some(0));
}

#[test]
fn training_is_deterministic_and_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let conf = quick_conf(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&conf, &a).status.success());
    assert!(train(&conf, &b).status.success());
    for f in ["checkpoint.json", "train.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let log = fs::read_to_string(a.join("train.log")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .filter(|l| l.starts_with("epoch "))
        .map(|l| l.split_whitespace().nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn base_checkpoint_has_no_graph_encoder_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let conf = quick_conf(dir.path(), "variant = base\nepochs = 1\n");
    assert!(train(&conf, dir.path()).status.success());
    let ckpt = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert!(ckpt.tensor_names().iter().all(|n| !n.starts_with("graph.")));
    assert!(ckpt.tensor_names().contains(&"base.queries"));
}

#[test]
fn divergence_exits_three_with_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let conf = quick_conf(dir.path(), "learning rate = 1e12\nnormalized_adjacency = false\ndropout rate = 0\n");
    let o = train(&conf, dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    let (params, _) = ckpt.restore().unwrap();
    assert!(params.all_finite());
    assert!(fs::read_to_string(dir.path().join("train.log")).unwrap().contains("aborted"));
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
    conf: PathBuf,
    ckpt: PathBuf,
}

fn trained() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let conf = quick_conf(&root, "");
    assert!(train(&conf, &root.join("model")).status.success());
    Trained {
        ckpt: root.join("model/checkpoint.json"),
        conf,
        root,
        _dir: dir,
    }
}

#[test]
fn eval_predict_and_file_round_trip() {
    let t = trained();
    let out = t.root.join("eval");
    let o = cgre(&["eval", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out.join("metrics.json"));
    assert!(report.auc.is_some());
    for bucket in ["<100", "<200"] {
        let keys: Vec<&str> = report.hits_at_k[bucket].keys().map(String::as_str).collect();
        assert_eq!(keys, vec!["10", "15", "20"]);
    }
    let csv = fs::read_to_string(out.join("pr_curve.csv")).unwrap();
    assert!(csv.starts_with("recall,precision\n"));
    assert_eq!(csv.lines().count(), report.predictions + 1);

    let pred_out = t.root.join("pred");
    let o = cgre(&["predict", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&pred_out)]);
    assert!(o.status.success());
    let pred_path = pred_out.join("predictions.jsonl");
    let records = read_predictions(std::io::BufReader::new(fs::File::open(&pred_path).unwrap()), "p").unwrap();
    let n_r = 5;
    assert_eq!(records.len(), report.bags * (n_r - 1));
    assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.score) && r.relation != "NA"));
    for bag in records.chunks(n_r - 1) {
        assert!(bag.iter().all(|r| r.pair_id == bag[0].pair_id && r.argmax == bag[0].argmax));
        if bag[0].argmax != "NA" {
            let best = bag.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
            assert_eq!(best.relation, bag[0].argmax);
        }
    }

    let file_out = t.root.join("from_file");
    let o = cgre(&[
        "eval", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&file_out),
        "--predictions", s(&pred_path),
    ]);
    assert!(o.status.success());
    let from_file = read_report(&file_out.join("metrics.json"));
    assert!((from_file.auc.unwrap() - report.auc.unwrap()).abs() < 1e-12);
    let mut expected = report.clone();
    expected.attention_accuracy = None;
    assert_eq!(from_file, expected);
    assert_eq!(fs::read(out.join("pr_curve.csv")).unwrap(), fs::read(file_out.join("pr_curve.csv")).unwrap());

    // identical reruns give identical bytes
    let again = t.root.join("eval2");
    assert!(cgre(&["eval", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&again)]).status.success());
    assert_eq!(fs::read(out.join("metrics.json")).unwrap(), fs::read(again.join("metrics.json")).unwrap());
    let threaded = t.root.join("eval4");
    let o = cgre(&["--threads", "4", "eval", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&threaded)]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("metrics.json")).unwrap(), fs::read(threaded.join("metrics.json")).unwrap());
}

#[test]
fn perfect_predictions_give_auc_one() {
    let t = trained();
    let pred_out = t.root.join("pred");
    assert!(cgre(&["predict", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&pred_out)])
        .status
        .success());
    // rewrite the scores as a perfect oracle from the test file's gold labels
    let test = fs::read_to_string(data_dir().join("synthetic/overfit/test.jsonl")).unwrap();
    let gold: std::collections::BTreeMap<(String, String), String> = test
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                (v["head"]["text"].as_str().unwrap().to_string(), v["tail"]["text"].as_str().unwrap().to_string()),
                v["relation"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    let text = fs::read_to_string(pred_out.join("predictions.jsonl")).unwrap();
    let mut oracle = String::new();
    for line in text.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        let key = (v["pair_id"]["head"].as_str().unwrap().to_string(), v["pair_id"]["tail"].as_str().unwrap().to_string());
        let label = gold[&key].clone();
        let hit = v["relation"].as_str().unwrap() == label;
        v["score"] = serde_json::json!(if hit { 1.0 } else { 0.0 });
        v["argmax"] = serde_json::json!(label);
        oracle.push_str(&v.to_string());
        oracle.push('\n');
    }
    let oracle_path = t.root.join("oracle.jsonl");
    fs::write(&oracle_path, oracle).unwrap();
    let out = t.root.join("oracle_eval");
    let o = cgre(&[
        "eval", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&out),
        "--predictions", s(&oracle_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out.join("metrics.json"));
    assert_eq!(report.auc, Some(1.0));
    assert_eq!(report.micro_f1.unwrap().f1, 1.0);
}

#[test]
fn eval_refuses_mismatched_schema() {
    let t = trained();
    let other = t.root.join("other.conf");
    let fb = data_dir().join("fb_nyt/schema.json");
    fs::write(&other, format!("include = {}\nschema = {}\n", s(&t.conf), s(&fb))).unwrap();
    let out = t.root.join("nope");
    let o = cgre(&["eval", "--config", s(&other), "--checkpoint", s(&t.ckpt), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema hash"));
    assert!(!out.exists());
}

#[test]
fn size_split_on_small_bags_is_an_error() {
    let t = trained();
    // every test pair gets exactly two sentences
    let test = fs::read_to_string(data_dir().join("synthetic/overfit/test.jsonl")).unwrap();
    let mut seen: std::collections::BTreeMap<String, usize> = Default::default();
    let mut two = String::new();
    for line in test.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let c = seen.entry(v["head"]["text"].as_str().unwrap().to_string()).or_default();
        *c += 1;
        if *c == 1 {
            two.push_str(line);
            two.push('\n');
            two.push_str(line);
            two.push('\n');
        }
    }
    let small = t.root.join("small.jsonl");
    fs::write(&small, two).unwrap();
    let conf = t.root.join("small.conf");
    fs::write(&conf, format!("include = {}\ntest = {}\n", s(&t.conf), s(&small))).unwrap();
    let out = t.root.join("split");
    let o = cgre(&["eval", "--config", s(&conf), "--checkpoint", s(&t.ckpt), "--out", s(&out), "--split", "one"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    let o = cgre(&["eval", "--config", s(&t.conf), "--checkpoint", s(&t.ckpt), "--out", s(&out), "--split", "seven"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validity_splits_on_distractor_world() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    assert!(cgre(&["synth", "distractor", "--seed", "2", "--out", s(&world)]).status.success());
    let conf = world.join("quick.conf");
    fs::write(&conf, "include = run.conf\nepochs = 3\n").unwrap();
    assert!(train(&conf, &world.join("model")).status.success());
    let ckpt = world.join("model/checkpoint.json");
    let mut f1 = Vec::new();
    for mode in ["zero", "one", "all"] {
        let out = world.join(mode);
        let o = cgre(&["eval", "--config", s(&conf), "--checkpoint", s(&ckpt), "--out", s(&out), "--validity", mode]);
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        f1.push(read_report(&out.join("metrics.json")).micro_f1.unwrap());
    }
    // under zero no gold facts remain
    assert_eq!((f1[0].recall, f1[0].f1), (0.0, 0.0));
    assert!(f1[2].f1 > 0.0);
    let fixture_conf = overfit_conf();
    let o = cgre(&[
        "eval", "--config", s(&fixture_conf), "--checkpoint", s(&ckpt), "--out", s(&dir.path().join("x")),
        "--validity", "one",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_writes_a_runnable_world() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["overfit", "long-tail", "distractor"] {
        let out = dir.path().join(kind);
        assert!(cgre(&["synth", kind, "--out", s(&out)]).status.success());
        for f in ["schema.json", "constraints.tsv", "train.jsonl", "test.jsonl", "run.conf"] {
            assert!(out.join(f).exists(), "{kind}: {f}");
        }
        assert!(cgre_cli::config::RunConfig::load(&out.join("run.conf")).is_ok());
    }
    // the shipped fixture is what `synth overfit --seed 1` writes
    let fresh = dir.path().join("overfit");
    for f in ["schema.json", "constraints.tsv", "train.jsonl", "test.jsonl", "run.conf"] {
        assert_eq!(
            fs::read(fresh.join(f)).unwrap(),
            fs::read(data_dir().join("synthetic/overfit").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(cgre(&["synth", "bogus", "--out", s(&dir.path().join("b"))]).status.code(), Some(1));
}
