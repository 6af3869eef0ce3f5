//! Flat `key = value` run configuration.
//!
//! Keys are matched after normalization (lowercase, `.` dropped, `λ` spelled
//! `lambda`, spaces and dashes turned into `_`), so the hyperparameter table
//! names can be written verbatim: `filter num. = 230`, `coefficient λ = 17`,
//! `batch size = 160`. A line `include = other.conf` splices another file in
//! place; later assignments override earlier ones. Relative paths resolve
//! against the directory of the file that mentions them.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cgre::model::{ModelConfig, Variant};
use cgre::{Error, Result};

/// Which metrics `eval` reports.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSelection {
    pub precision_at: Vec<usize>,
    pub hits_k: Vec<usize>,
    pub hits_thresholds: Vec<usize>,
    /// Score cutoff for F1; the bag argmax rule when unset.
    pub f1_threshold: Option<f64>,
    pub attention_accuracy: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            precision_at: vec![100, 200, 300],
            hits_k: vec![10, 15, 20],
            hits_thresholds: vec![100, 200],
            f1_threshold: None,
            attention_accuracy: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub metrics: MetricSelection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            test: None,
            schema: None,
            constraints: None,
            pretrained: None,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            metrics: MetricSelection::default(),
        }
    }
}

/// Canonical form of a config key.
pub fn normalize_key(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase().replace('λ', "lambda").replace('.', "");
    let mut out = String::new();
    for c in lowered.chars() {
        if c.is_whitespace() || c == '-' {
            if !out.is_empty() && !out.ends_with('_') {
                out.push('_');
            }
        } else {
            out.push(c);
        }
    }
    out.trim_end_matches('_').to_string()
}

struct Entry {
    key: String,
    value: String,
    base: PathBuf,
    origin: String,
}

fn collect(path: &Path, stack: &mut Vec<PathBuf>, out: &mut Vec<Entry>) -> Result<()> {
    let canonical = fs::canonicalize(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("config {}: {e}", path.display())))
    })?;
    if stack.contains(&canonical) {
        return Err(Error::Config(format!("include cycle through {}", path.display())));
    }
    let text = fs::read_to_string(&canonical)?;
    let base = canonical.parent().map(Path::to_path_buf).unwrap_or_default();
    stack.push(canonical);
    for (i, line) in text.lines().enumerate() {
        let origin = format!("{}:{}", path.display(), i + 1);
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("{origin}: expected `key = value`")));
        };
        let key = normalize_key(k);
        let value = v.trim().to_string();
        if key == "include" {
            collect(&base.join(&value), stack, out)?;
        } else {
            out.push(Entry {
                key,
                value,
                base: base.clone(),
                origin,
            });
        }
    }
    stack.pop();
    Ok(())
}

fn parse<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::Config(format!("{}: cannot parse {:?} for {}", e.origin, e.value, e.key)))
}

fn parse_list(e: &Entry) -> Result<Vec<usize>> {
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{}: bad list item {s:?} for {}", e.origin, e.key)))
        })
        .collect()
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{}: expected a boolean for {}", e.origin, e.key))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        collect(path, &mut Vec::new(), &mut entries)?;
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut output_size = None;
        let mut input_size = None;
        let mut seen_output_dir = false;
        for e in entries {
            let path = || e.base.join(&e.value);
            let m = &mut c.model;
            match e.key.as_str() {
                "train" | "train_data" => c.train = Some(path()),
                "test" | "test_data" => c.test = Some(path()),
                "schema" => c.schema = Some(path()),
                "constraints" => c.constraints = Some(path()),
                "pretrained" | "pretrained_embeddings" => c.pretrained = Some(path()),
                "output_dir" | "out" => {
                    c.output_dir = path();
                    seen_output_dir = true;
                }
                "filter_num" | "filters" | "m" => m.filters = parse(e)?,
                "window_size" | "window" => m.window = parse(e)?,
                "word_size" | "d_w" => m.word_dim = parse(e)?,
                "position_size" | "d_p" => m.position_dim = parse(e)?,
                "coefficient_lambda" | "lambda" => m.lambda = parse(e)?,
                "emb_size" | "d_v" => m.node_dim = parse(e)?,
                "hidden_size" => m.hidden_dim = parse(e)?,
                "output_size" => output_size = Some((parse::<usize>(e)?, e.origin.clone())),
                "input_size" => input_size = Some((parse::<usize>(e)?, e.origin.clone())),
                "gcn_layers" | "k" | "layers" => m.gcn_layers = parse(e)?,
                "output_option" => m.output_option = e.value.parse()?,
                "normalized_adjacency" | "normalize_adjacency" => m.normalized_adjacency = parse_bool(e)?,
                "max_len" => m.max_len = parse(e)?,
                "batch_size" => m.batch_size = parse(e)?,
                "learning_rate" | "lr" => m.learning_rate = parse(e)?,
                "dropout_rate" | "dropout" => m.dropout = parse(e)?,
                "epochs" => m.epochs = parse(e)?,
                "seed" => m.seed = parse(e)?,
                "variant" => m.variant = e.value.parse::<Variant>()?,
                "precision_at" | "p_at_n" => c.metrics.precision_at = parse_list(e)?,
                "hits_k" => c.metrics.hits_k = parse_list(e)?,
                "hits_thresholds" => c.metrics.hits_thresholds = parse_list(e)?,
                "f1_threshold" => c.metrics.f1_threshold = Some(parse(e)?),
                "attention_accuracy" | "aacc" => c.metrics.attention_accuracy = parse_bool(e)?,
                other => return Err(Error::Config(format!("{}: unknown key {other:?}", e.origin))),
            }
        }
        if !seen_output_dir {
            if let Some(first) = entries.first() {
                c.output_dir = first.base.join("out");
            }
        }
        c.model.validate()?;
        if let Some((v, origin)) = output_size {
            if v != c.model.sentence_dim() {
                return Err(Error::Config(format!(
                    "{origin}: output size {v} must equal 3 x filter num = {}",
                    c.model.sentence_dim()
                )));
            }
        }
        if let Some((v, origin)) = input_size {
            if v != c.model.classifier_input_dim() {
                return Err(Error::Config(format!(
                    "{origin}: input size {v} must equal {} for variant {}",
                    c.model.classifier_input_dim(),
                    c.model.variant
                )));
            }
        }
        if let Some(t) = c.metrics.f1_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("f1 threshold must be in [0, 1], got {t}")));
            }
        }
        for (key, p) in c.paths() {
            if !p.exists() {
                return Err(Error::Io(io::Error::new(
                    io::ErrorKind::NotFound,
                    format!("{key} path {} does not exist", p.display()),
                )));
            }
        }
        Ok(c)
    }

    fn paths(&self) -> Vec<(&'static str, &Path)> {
        [
            ("train", &self.train),
            ("test", &self.test),
            ("schema", &self.schema),
            ("constraints", &self.constraints),
            ("pretrained", &self.pretrained),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_deref().map(|p| (k, p)))
        .collect()
    }

    /// A path the current command cannot run without.
    pub fn require<'a>(&self, key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("config must set `{key}` for this command")))
    }
}
