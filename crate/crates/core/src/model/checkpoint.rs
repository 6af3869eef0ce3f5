use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::constraint_graph::ConstraintGraph;
use crate::corpus::{Schema, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const CHECKPOINT_FORMAT: &str = "cgre-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Self-describing model file: schema hash, configuration, graph, word list
/// and every named tensor. Serialization is compact JSON, so equal models
/// produce equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema_hash: String,
    pub config: ModelConfig,
    pub relations: Vec<String>,
    pub types: Vec<String>,
    pub graph: ConstraintGraph,
    pub vocabulary: Vec<String>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, vocab: &Vocabulary, schema: &Schema, graph: &ConstraintGraph) -> Result<Self> {
        if graph.relations() != schema.relations.as_slice() || graph.types() != schema.types.as_slice() {
            return Err(Error::schema("constraint graph was built from a different schema"));
        }
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            schema_hash: schema.hash(),
            config: params.config.clone(),
            relations: schema.relations.clone(),
            types: schema.types.clone(),
            graph: graph.clone(),
            vocabulary: vocab.words().to_vec(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        })
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::schema(format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        let schema = ckpt.schema()?;
        if schema.hash() != ckpt.schema_hash {
            return Err(Error::schema("checkpoint schema hash does not match its own schema"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.relations.clone(), self.types.clone())
    }

    /// Refuses a dataset schema whose hash differs from the training schema.
    pub fn verify_schema(&self, schema: &Schema) -> Result<()> {
        let hash = schema.hash();
        if hash != self.schema_hash {
            return Err(Error::schema(format!(
                "schema hash {hash} does not match checkpoint {}",
                self.schema_hash
            )));
        }
        Ok(())
    }

    /// Rebuilds the parameters and the word index.
    pub fn restore(&self) -> Result<(ModelParams, Vocabulary)> {
        let c = &self.config;
        let vocab = Vocabulary::from_words(self.vocabulary.clone(), c.word_dim, c.position_dim, c.max_len)?;
        let mut params = ModelParams::init(c, &vocab, &self.graph, &mut Rng::new(0))?;
        let mut stored: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for t in &self.tensors {
            if stored.insert(t.name.as_str(), t).is_some() {
                return Err(Error::schema(format!("duplicate tensor {:?} in checkpoint", t.name)));
            }
        }
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != stored.len() {
            return Err(Error::schema(format!(
                "checkpoint holds {} tensors, model expects {}",
                stored.len(),
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = stored
                .get(name.as_str())
                .ok_or_else(|| Error::schema(format!("checkpoint lacks tensor {name:?}")))?;
            if t.shape != slot.shape() {
                return Err(Error::schema(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(t.shape.clone(), t.data.clone())?;
        }
        Ok((params, vocab))
    }
}
