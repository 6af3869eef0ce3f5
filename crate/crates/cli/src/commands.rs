use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cgre::constraint_graph::{build_constraint_graph, load_constraints, BuildReport, ConstraintGraph};
use cgre::corpus::{
    build_vocabulary, encode_bags, load_pretrained, parse_dataset, relation_instance_counts, BagMode, EncodedBag,
    Schema, Vocabulary, NA_ID,
};
use cgre::evaluation::{
    attention_accuracy, bag_scores, build_size_split, build_validity_split, evaluate, pr_curve_csv,
    prediction_records, read_predictions, scores_from_records, write_predictions, BagScores, EvalOptions, F1Rule,
    MetricReport, SizeSplit, ValiditySplit,
};
use cgre::model::{predict_bags, relation_attention, train, Checkpoint, GraphContext, ModelParams, TrainLog};
use cgre::numerics::Rng;
use cgre::synthetic::{distractor_fixture, long_tail_world, overfit_fixture, LongTailConfig, SyntheticWorld};
use cgre::{Error, Result};

use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const METRICS_FILE: &str = "metrics.json";
pub const PR_CURVE_FILE: &str = "pr_curve.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const GRAPH_FILE: &str = "graph.json";
pub const GRAPH_REPORT_FILE: &str = "graph_report.txt";

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads the schema and builds the constraint graph. Schema problems in the
/// constraint file are reported with the file name.
pub fn load_graph(schema_path: &Path, constraints_path: &Path) -> Result<(Schema, ConstraintGraph, BuildReport)> {
    let schema = Schema::load(schema_path)?;
    let constraints = load_constraints(constraints_path)?;
    let (graph, report) = build_constraint_graph(&schema, &constraints).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", constraints_path.display())),
        other => other,
    })?;
    Ok((schema, graph, report))
}

pub fn build_graph(schema: &Path, constraints: &Path, out: &Path) -> Result<BuildReport> {
    let (_, graph, report) = load_graph(schema, constraints)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join(GRAPH_FILE), graph.to_json()?.as_bytes())?;
    write_atomic(&out.join(GRAPH_REPORT_FILE), report.render().as_bytes())?;
    Ok(report)
}

/// Everything a finished training run produced, for callers that keep
/// working in-process.
pub struct TrainOutcome {
    pub log: TrainLog,
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub schema: Schema,
    pub graph: ConstraintGraph,
    pub train_bags: Vec<EncodedBag>,
}

/// Trains from `config`, writing the checkpoint after every epoch and a
/// per-epoch `train.log` into `out`. On a numeric failure the checkpoint on
/// disk is the last completed epoch (or the initialization).
pub fn train_run(config: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let m = &config.model;
    let (schema, graph, _) = load_graph(
        config.require("schema", &config.schema)?,
        config.require("constraints", &config.constraints)?,
    )?;
    let bags = parse_dataset(config.require("train", &config.train)?, &schema, BagMode::Train)?;
    let pretrained = config.pretrained.as_deref().map(|p| load_pretrained(p, m.word_dim)).transpose()?;
    let vocab = build_vocabulary(&bags, pretrained.as_ref(), m.word_dim, m.position_dim, m.max_len, &mut Rng::new(m.seed))?;
    let encoded = encode_bags(&bags, &vocab, m.max_len)?;
    let mut params = ModelParams::init(m, &vocab, &graph, &mut Rng::new(m.seed))?;

    fs::create_dir_all(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let save = |p: &ModelParams| -> Result<()> {
        write_atomic(&ckpt_path, &Checkpoint::new(p, &vocab, &schema, &graph)?.to_bytes()?)
    };
    save(&params)?;
    let mut log_text = format!(
        "variant {}\ntraining_bags {}\nvocabulary {}\nseed {}\n",
        m.variant,
        encoded.len(),
        vocab.len(),
        m.seed
    );
    let log_path = out.join(TRAIN_LOG_FILE);
    write_atomic(&log_path, log_text.as_bytes())?;

    let mut rng = Rng::new(m.seed);
    let result = train(&mut params, &encoded, &graph, &mut rng, |p, stats| {
        save(p)?;
        let _ = writeln!(
            log_text,
            "epoch {} mean_loss {} full_loss {} batches {}",
            stats.epoch, stats.mean_loss, stats.full_loss, stats.batches
        );
        write_atomic(&log_path, log_text.as_bytes())
    });
    match result {
        Ok(log) => {
            let _ = writeln!(
                log_text,
                "done training_bags {} filtered_instances {} filtered_bags {}",
                log.training_bags, log.filtered_instances, log.filtered_bags
            );
            write_atomic(&log_path, log_text.as_bytes())?;
            Ok(TrainOutcome {
                log,
                params,
                vocab,
                schema,
                graph,
                train_bags: encoded,
            })
        }
        Err(e) => {
            let _ = writeln!(log_text, "aborted: {e}");
            write_atomic(&log_path, log_text.as_bytes())?;
            Err(e)
        }
    }
}

/// Test-set options for `eval` and `predict`.
#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub split: Option<SizeSplit>,
    pub validity: Option<ValiditySplit>,
    /// Score from a prediction file instead of running the model.
    pub predictions: Option<PathBuf>,
    /// Dataset to score instead of the configured test set.
    pub data: Option<PathBuf>,
}

struct Scored {
    checkpoint: Checkpoint,
    params: ModelParams,
    bags: Vec<EncodedBag>,
}

fn load_eval_bags(config: &RunConfig, checkpoint: &Path, args: &EvalArgs) -> Result<Scored> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let schema = Schema::load(config.require("schema", &config.schema)?)?;
    ckpt.verify_schema(&schema)?;
    let data = match &args.data {
        Some(p) => p.as_path(),
        None => config.require("test", &config.test)?,
    };
    let raw = parse_dataset(data, &schema, BagMode::Eval)?;
    let (params, vocab) = ckpt.restore()?;
    let mut bags = encode_bags(&raw, &vocab, ckpt.config.max_len)?;
    let mut rng = Rng::new(config.model.seed);
    if let Some(mode) = args.split {
        bags = build_size_split(&bags, mode, &mut rng)?;
    }
    if let Some(mode) = args.validity {
        bags = build_validity_split(&bags, mode, &mut rng)?;
    }
    Ok(Scored {
        checkpoint: ckpt,
        params,
        bags,
    })
}

fn score(s: &Scored) -> Result<Vec<BagScores>> {
    let scores = predict_bags(&s.bags, &s.params, &s.checkpoint.graph)?;
    bag_scores(&s.bags, scores)
}

/// Attention accuracy over annotated bags, keyed on each bag's first
/// non-NA label. `None` when no bag qualifies.
fn model_attention_accuracy(s: &Scored) -> Result<Option<f64>> {
    let ctx = GraphContext::new(&s.params, &s.checkpoint.graph)?;
    let mut flags = Vec::new();
    let mut weights = Vec::new();
    for bag in &s.bags {
        let (Some(f), Some(&r)) = (&bag.valid_flags, bag.labels.iter().find(|&&r| r != NA_ID)) else {
            continue;
        };
        flags.push(f.clone());
        weights.push(relation_attention(bag, r, &s.params, &ctx)?);
    }
    match attention_accuracy(&flags, &weights) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Domain(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Computes the configured metrics and writes `metrics.json` and
/// `pr_curve.csv` into `out`.
pub fn eval_run(config: &RunConfig, checkpoint: &Path, args: &EvalArgs, out: &Path) -> Result<MetricReport> {
    let scored = load_eval_bags(config, checkpoint, args)?;
    let relations = &scored.checkpoint.relations;
    let per_bag = match &args.predictions {
        Some(path) => {
            let file = fs::File::open(path)?;
            let records = read_predictions(BufReader::new(file), &path.display().to_string())?;
            scores_from_records(&records, relations, &scored.bags)?
        }
        None => score(&scored)?,
    };
    let train_counts = match &config.train {
        Some(p) => {
            let schema = scored.checkpoint.schema()?;
            Some(relation_instance_counts(&parse_dataset(p, &schema, BagMode::Train)?, relations.len()))
        }
        None => None,
    };
    let sel = &config.metrics;
    let options = EvalOptions {
        precision_at: sel.precision_at.clone(),
        train_counts,
        hits_thresholds: sel.hits_thresholds.clone(),
        hits_k: sel.hits_k.clone(),
        f1_rule: sel.f1_threshold.map_or(F1Rule::Argmax, F1Rule::Threshold),
    };
    let (mut report, curve) = evaluate(&per_bag, &options);
    if sel.attention_accuracy && args.predictions.is_none() {
        report.attention_accuracy = model_attention_accuracy(&scored)?;
    }
    fs::create_dir_all(out)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_atomic(&out.join(METRICS_FILE), json.as_bytes())?;
    write_atomic(&out.join(PR_CURVE_FILE), pr_curve_csv(&curve).as_bytes())?;
    Ok(report)
}

/// Writes one record per (bag, non-NA relation) to `predictions.jsonl`.
pub fn predict_run(config: &RunConfig, checkpoint: &Path, args: &EvalArgs, out: &Path) -> Result<PathBuf> {
    let scored = load_eval_bags(config, checkpoint, args)?;
    let per_bag = score(&scored)?;
    let records = prediction_records(&per_bag, &scored.checkpoint.relations)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &records)?;
    fs::create_dir_all(out)?;
    let path = out.join(PREDICTIONS_FILE);
    write_atomic(&path, &buf)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Overfit,
    LongTail,
    Distractor,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "overfit" => Ok(SynthKind::Overfit),
            "long-tail" | "longtail" => Ok(SynthKind::LongTail),
            "distractor" => Ok(SynthKind::Distractor),
            other => Err(Error::Config(format!("unknown synthetic world {other:?}"))),
        }
    }
}

/// Shared small-model settings for the synthetic worlds.
const SMALL_MODEL: &str = "\
word size = 16
position size = 4
filter num. = 16
window size = 3
coefficient λ = 17
emb. size = 16
hidden size = 32
output size = 48
gcn_layers = 2
output_option = opt-1
normalized_adjacency = true
max_len = 20
batch size = 20
learning rate = 0.5
dropout rate = 0.5
";

/// The `run.conf` written next to a synthetic world.
pub fn synth_run_conf(kind: SynthKind, seed: u64) -> String {
    let (title, epochs, extra) = match kind {
        SynthKind::Overfit => ("overfit fixture: 4 relations plus NA, 200 training bags", 30, ""),
        SynthKind::LongTail => (
            "long-tail world: relation families told apart only by entity types",
            15,
            "hits_thresholds = 30\nhits_k = 1,10\n",
        ),
        SynthKind::Distractor => ("distractor world: bags mix conforming and violating sentences", 15, ""),
    };
    format!(
        "# {title}\ntrain = train.jsonl\ntest = test.jsonl\nschema = schema.json\nconstraints = constraints.tsv\n\
         {SMALL_MODEL}epochs = {epochs}\nseed = {seed}\nvariant = cgre\nprecision_at = 10,50,100\n{extra}"
    )
}

pub fn synth_world(kind: SynthKind, seed: u64) -> SyntheticWorld {
    match kind {
        SynthKind::Overfit => overfit_fixture(seed),
        SynthKind::LongTail => long_tail_world(seed, &LongTailConfig::default()),
        SynthKind::Distractor => distractor_fixture(seed, 40, 20),
    }
}

pub fn synth(kind: SynthKind, seed: u64, out: &Path) -> Result<()> {
    let world = synth_world(kind, seed);
    world.write(out)?;
    let mut f = fs::File::create(out.join("run.conf"))?;
    f.write_all(synth_run_conf(kind, seed).as_bytes())?;
    Ok(())
}
