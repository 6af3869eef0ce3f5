#![allow(dead_code)]

use std::path::PathBuf;

use cgre::constraint_graph::ConstraintGraph;
use cgre::corpus::{build_vocabulary, encode_bags, group_bags, BagMode, EncodedBag, Vocabulary};
use cgre::graph_encoder::OutputOption;
use cgre::model::{ModelConfig, ModelParams, Variant};
use cgre::numerics::Rng;
use cgre::synthetic::SyntheticWorld;

pub struct Prepared {
    pub world: SyntheticWorld,
    pub graph: ConstraintGraph,
    pub vocab: Vocabulary,
    pub train: Vec<EncodedBag>,
    pub test: Vec<EncodedBag>,
}

/// Encodes both splits with a vocabulary built from the training bags.
pub fn prepare(world: SyntheticWorld, config: &ModelConfig) -> Prepared {
    let graph = world.graph().unwrap();
    let train_bags = group_bags(world.train.clone(), BagMode::Train).unwrap();
    let test_bags = group_bags(world.test.clone(), BagMode::Eval).unwrap();
    let mut rng = Rng::new(config.seed);
    let vocab = build_vocabulary(&train_bags, None, config.word_dim, config.position_dim, config.max_len, &mut rng).unwrap();
    let train = encode_bags(&train_bags, &vocab, config.max_len).unwrap();
    let test = encode_bags(&test_bags, &vocab, config.max_len).unwrap();
    Prepared {
        world,
        graph,
        vocab,
        train,
        test,
    }
}

pub fn init_params(p: &Prepared, config: &ModelConfig) -> ModelParams {
    ModelParams::init(config, &p.vocab, &p.graph, &mut Rng::new(config.seed)).unwrap()
}

/// The tiny gradient-check architecture.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        position_dim: 2,
        filters: 3,
        window: 3,
        node_dim: 4,
        hidden_dim: 5,
        gcn_layers: 2,
        output_option: OutputOption::Opt1,
        max_len: 16,
        batch_size: 8,
        dropout: 0.0,
        epochs: 1,
        seed: 5,
        variant,
        ..ModelConfig::default()
    }
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}
