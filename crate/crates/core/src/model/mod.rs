//! The bag-level model: constraint-aware attention over a bag's sentences
//! feeding a softmax relation classifier.

mod checkpoint;
mod forward;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraint_graph::ConstraintGraph;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::graph_encoder::{GraphEncoderParams, OutputOption};
use crate::numerics::{xavier_init, Rng, Tensor};
use crate::sentence_encoder::SentenceEncoderParams;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use forward::{
    bag_attention, bag_loss, bag_loss_and_gradients, classify, make_constraint_repr, make_instance_repr,
    predict_bag, predict_bags, relation_attention, GraphContext,
};
pub use train::{argmax, filter_violating, train, train_epoch, training_accuracy, EpochStats, TrainLog};

/// Which parts of the model are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Sentence keys with type rows and graph-derived relation queries.
    #[default]
    #[serde(rename = "cgre")]
    Cgre,
    /// Sentence keys against learned relation queries; no types, no graph.
    #[serde(rename = "base")]
    Base,
    /// Base with learned entity-type embeddings mixed into the keys.
    #[serde(rename = "base+type")]
    BaseType,
    /// Base with hard type-constraint filtering.
    #[serde(rename = "base+const")]
    BaseConst,
}

impl Variant {
    pub fn uses_graph_encoder(self) -> bool {
        self == Variant::Cgre
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect();
        match key.as_str() {
            "cgre" => Ok(Variant::Cgre),
            "base" => Ok(Variant::Base),
            "base+type" | "basetype" => Ok(Variant::BaseType),
            "base+const" | "baseconst" => Ok(Variant::BaseConst),
            _ => Err(Error::config(format!("unknown variant {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cgre => "cgre",
            Variant::Base => "base",
            Variant::BaseType => "base+type",
            Variant::BaseConst => "base+const",
        })
    }
}

/// Architecture and optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub position_dim: usize,
    pub filters: usize,
    pub window: usize,
    pub lambda: f64,
    /// Graph node embedding width `d_v` (also the type-embedding width for
    /// the Base+Type variant).
    pub node_dim: usize,
    pub hidden_dim: usize,
    pub gcn_layers: usize,
    pub output_option: OutputOption,
    pub normalized_adjacency: bool,
    pub max_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 50,
            position_dim: 5,
            filters: 230,
            window: 3,
            lambda: 17.0,
            node_dim: 100,
            hidden_dim: 750,
            gcn_layers: 2,
            output_option: OutputOption::Opt1,
            normalized_adjacency: false,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            batch_size: 160,
            learning_rate: 0.5,
            dropout: 0.5,
            epochs: 30,
            seed: 42,
            variant: Variant::Cgre,
        }
    }
}

impl ModelConfig {
    /// Sentence vector width `3m`; also the graph node output width.
    pub fn sentence_dim(&self) -> usize {
        3 * self.filters
    }

    /// Width of the vector fed to the classifier.
    pub fn classifier_input_dim(&self) -> usize {
        match self.variant {
            Variant::Cgre => 3 * self.sentence_dim(),
            _ => self.sentence_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word size", self.word_dim),
            ("position size", self.position_dim),
            ("filter num", self.filters),
            ("window size", self.window),
            ("max len", self.max_len),
            ("batch size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("coefficient lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate must be in [0, 1), got {}", self.dropout)));
        }
        if self.variant != Variant::Base && self.variant != Variant::BaseConst && self.node_dim == 0 {
            return Err(Error::config("emb. size must be positive"));
        }
        if self.variant == Variant::Cgre {
            if self.gcn_layers < self.output_option.min_layers() {
                return Err(Error::config(format!(
                    "output option {} needs at least {} GCN layers, got {}",
                    self.output_option,
                    self.output_option.min_layers(),
                    self.gcn_layers
                )));
            }
            if self.gcn_layers == 0 && self.node_dim != self.sentence_dim() {
                return Err(Error::config(format!(
                    "without GCN layers emb. size must equal 3 x filter num ({})",
                    self.sentence_dim()
                )));
            }
            if self.gcn_layers > 1 && self.hidden_dim == 0 {
                return Err(Error::config("hidden size must be positive"));
            }
        }
        Ok(())
    }
}

/// All trainable tensors. Optional parts are present only for the variants
/// that use them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub sentence: SentenceEncoderParams,
    pub graph: Option<GraphEncoderParams>,
    /// Per-relation attention queries for the Base variants, `n_r × 3m`.
    pub queries: Option<Tensor>,
    /// Base+Type entity-type table, `n_t × d_v`.
    pub type_embeddings: Option<Tensor>,
    /// Base+Type key map, `3m × (3m + 2d_v)`.
    pub type_map_weight: Option<Tensor>,
    pub type_map_bias: Option<Tensor>,
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, vocab: &Vocabulary, graph: &ConstraintGraph, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if vocab.word_dim() != config.word_dim || vocab.position_dim() != config.position_dim {
            return Err(Error::config(format!(
                "vocabulary tables ({}, {}) do not match word/position size ({}, {})",
                vocab.word_dim(),
                vocab.position_dim(),
                config.word_dim,
                config.position_dim
            )));
        }
        let sentence = SentenceEncoderParams::init(vocab, config.filters, config.window, config.lambda, rng)?;
        let d = config.sentence_dim();
        let n_r = graph.num_relations();
        let n_t = graph.num_types();
        let mut params = ModelParams {
            config: config.clone(),
            sentence,
            graph: None,
            queries: None,
            type_embeddings: None,
            type_map_weight: None,
            type_map_bias: None,
            classifier_weight: Tensor::zeros(&[1, 1]),
            classifier_bias: Tensor::zeros(&[n_r]),
        };
        match config.variant {
            Variant::Cgre => {
                params.graph = Some(GraphEncoderParams::init(
                    graph.num_nodes(),
                    config.node_dim,
                    config.hidden_dim,
                    d,
                    config.gcn_layers,
                    config.output_option,
                    config.normalized_adjacency,
                    rng,
                )?);
            }
            Variant::Base | Variant::BaseConst => {
                params.queries = Some(xavier_init(&[n_r, d], rng)?);
            }
            Variant::BaseType => {
                params.queries = Some(xavier_init(&[n_r, d], rng)?);
                params.type_embeddings = Some(xavier_init(&[n_t, config.node_dim], rng)?);
                params.type_map_weight = Some(xavier_init(&[d, d + 2 * config.node_dim], rng)?);
                params.type_map_bias = Some(Tensor::zeros(&[d]));
            }
        }
        params.classifier_weight = xavier_init(&[n_r, config.classifier_input_dim()], rng)?;
        Ok(params)
    }

    pub fn num_relations(&self) -> usize {
        self.classifier_bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            sentence: self.sentence.zeros_like(),
            graph: self.graph.as_ref().map(GraphEncoderParams::zeros_like),
            queries: self.queries.as_ref().map(Tensor::zeros_like),
            type_embeddings: self.type_embeddings.as_ref().map(Tensor::zeros_like),
            type_map_weight: self.type_map_weight.as_ref().map(Tensor::zeros_like),
            type_map_bias: self.type_map_bias.as_ref().map(Tensor::zeros_like),
            classifier_weight: self.classifier_weight.zeros_like(),
            classifier_bias: self.classifier_bias.zeros_like(),
        }
    }

    /// Named tensors in a fixed order; `tensors_mut` yields the same order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.sentence.tensors().into_iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(g) = &self.graph {
            out.extend(g.tensors());
        }
        let optional = [
            ("base.queries", &self.queries),
            ("base.type_embeddings", &self.type_embeddings),
            ("base.type_map_weight", &self.type_map_weight),
            ("base.type_map_bias", &self.type_map_bias),
        ];
        for (name, t) in optional {
            if let Some(t) = t {
                out.push((name.to_string(), t));
            }
        }
        out.push(("classifier.weight".to_string(), &self.classifier_weight));
        out.push(("classifier.bias".to_string(), &self.classifier_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.sentence.tensors_mut();
        if let Some(g) = &mut self.graph {
            out.extend(g.tensors_mut());
        }
        for t in [
            &mut self.queries,
            &mut self.type_embeddings,
            &mut self.type_map_weight,
            &mut self.type_map_bias,
        ]
        .into_iter()
        .flatten()
        {
            out.push(t);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}
