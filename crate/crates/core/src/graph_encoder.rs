//! Stacked GCN over the constraint graph.
//!
//! Each layer computes `ReLU(A · V · Wᵀ + b)` with the binary adjacency
//! (self-loops included). Node rows `0..n_r` are relations, the rest types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraint_graph::ConstraintGraph;
use crate::error::{Error, Result};
use crate::numerics::{axpy_slice, xavier_init, Rng, Tensor};

/// Which layer outputs form the final node representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputOption {
    /// `V^(K)`.
    #[default]
    #[serde(rename = "opt-1")]
    Opt1,
    /// Linear projection of `[V^(K-1); V^(K)]`.
    #[serde(rename = "opt-2")]
    Opt2,
    /// Linear projection of `[V^(0); V^(K-1); V^(K)]`.
    #[serde(rename = "opt-3")]
    Opt3,
}

impl OutputOption {
    pub fn min_layers(self) -> usize {
        match self {
            OutputOption::Opt1 => 0,
            OutputOption::Opt2 => 1,
            OutputOption::Opt3 => 2,
        }
    }
}

impl FromStr for OutputOption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "opt-1" | "opt1" | "1" => Ok(OutputOption::Opt1),
            "opt-2" | "opt2" | "2" => Ok(OutputOption::Opt2),
            "opt-3" | "opt3" | "3" => Ok(OutputOption::Opt3),
            other => Err(Error::config(format!("unknown output option {other:?}"))),
        }
    }
}

impl fmt::Display for OutputOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutputOption::Opt1 => "opt-1",
            OutputOption::Opt2 => "opt-2",
            OutputOption::Opt3 => "opt-3",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEncoderParams {
    /// `V^(0)`, one row per node.
    pub embeddings: Tensor,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub output_option: OutputOption,
    pub projection_weight: Option<Tensor>,
    pub projection_bias: Option<Tensor>,
    /// Use the degree-normalized adjacency instead of the binary one.
    pub normalized: bool,
}

impl GraphEncoderParams {
    /// Layer widths run `d_v → hidden → … → d_n`. With zero layers the
    /// embeddings are the output, so `d_v` must equal `d_n`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        nodes: usize,
        d_v: usize,
        hidden: usize,
        d_n: usize,
        layers: usize,
        output_option: OutputOption,
        normalized: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if nodes == 0 || d_v == 0 || d_n == 0 || (layers > 1 && hidden == 0) {
            return Err(Error::config("graph encoder sizes must be positive"));
        }
        if layers < output_option.min_layers() {
            return Err(Error::config(format!(
                "output option {output_option} needs at least {} GCN layers, got {layers}",
                output_option.min_layers()
            )));
        }
        if layers == 0 && d_v != d_n {
            return Err(Error::config(format!(
                "without GCN layers the embedding size ({d_v}) must equal the node output size ({d_n})"
            )));
        }
        let mut widths = vec![d_v];
        for k in 1..=layers {
            widths.push(if k == layers { d_n } else { hidden });
        }
        let embeddings = xavier_init(&[nodes, d_v], rng)?;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for k in 1..=layers {
            weights.push(xavier_init(&[widths[k], widths[k - 1]], rng)?);
            biases.push(Tensor::zeros(&[widths[k]]));
        }
        let concat = match output_option {
            OutputOption::Opt1 => None,
            OutputOption::Opt2 => Some(widths[layers - 1] + widths[layers]),
            OutputOption::Opt3 => Some(widths[0] + widths[layers - 1] + widths[layers]),
        };
        let (projection_weight, projection_bias) = match concat {
            Some(c) => (Some(xavier_init(&[d_n, c], rng)?), Some(Tensor::zeros(&[d_n]))),
            None => (None, None),
        };
        Ok(GraphEncoderParams {
            embeddings,
            weights,
            biases,
            output_option,
            projection_weight,
            projection_bias,
            normalized,
        })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn output_dim(&self) -> usize {
        match (&self.projection_weight, self.weights.last()) {
            (Some(p), _) => p.rows(),
            (None, Some(w)) => w.rows(),
            (None, None) => self.embeddings.cols(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GraphEncoderParams {
            embeddings: self.embeddings.zeros_like(),
            weights: self.weights.iter().map(Tensor::zeros_like).collect(),
            biases: self.biases.iter().map(Tensor::zeros_like).collect(),
            output_option: self.output_option,
            projection_weight: self.projection_weight.as_ref().map(Tensor::zeros_like),
            projection_bias: self.projection_bias.as_ref().map(Tensor::zeros_like),
            normalized: self.normalized,
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("graph.embeddings".to_string(), &self.embeddings)];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("graph.layer{}.weight", k + 1), w));
            out.push((format!("graph.layer{}.bias", k + 1), b));
        }
        if let (Some(w), Some(b)) = (&self.projection_weight, &self.projection_bias) {
            out.push(("graph.projection.weight".to_string(), w));
            out.push(("graph.projection.bias".to_string(), b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embeddings];
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        if let (Some(w), Some(b)) = (&mut self.projection_weight, &mut self.projection_bias) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// One GCN layer: `ReLU(A · V · Wᵀ + b)`.
pub fn gcn_layer(v: &Tensor, adjacency: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(gcn_layer_parts(v, adjacency, w, b)?.1)
}

fn gcn_layer_parts(v: &Tensor, adjacency: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    if adjacency.rank() != 2 || adjacency.rows() != adjacency.cols() || adjacency.cols() != v.rows() {
        return Err(Error::shape(format!(
            "adjacency {:?} does not match node matrix {:?}",
            adjacency.shape(),
            v.shape()
        )));
    }
    let mixed = adjacency.matmul(v)?;
    let mut pre = mixed.matmul_t(w)?;
    pre.add_row_vector(b)?;
    Ok((mixed, pre.map(|x| x.max(0.0))))
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GraphTrace {
    /// `V^(0) … V^(K)`.
    pub layers: Vec<Tensor>,
    mixed: Vec<Tensor>,
    concat: Option<Tensor>,
    pub output: Tensor,
}

fn concat_parts(option: OutputOption, k: usize) -> Vec<usize> {
    match option {
        OutputOption::Opt1 => vec![k],
        OutputOption::Opt2 => vec![k - 1, k],
        OutputOption::Opt3 => vec![0, k - 1, k],
    }
}

pub fn graph_forward(adjacency: &Tensor, params: &GraphEncoderParams) -> Result<GraphTrace> {
    let k = params.layers();
    if k < params.output_option.min_layers() {
        return Err(Error::config(format!(
            "output option {} needs at least {} GCN layers, got {k}",
            params.output_option,
            params.output_option.min_layers()
        )));
    }
    let mut layers = vec![params.embeddings.clone()];
    let mut mixed = Vec::with_capacity(k);
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let (m, v) = gcn_layer_parts(layers.last().expect("nonempty"), adjacency, w, b)?;
        mixed.push(m);
        layers.push(v);
    }
    let (concat, output) = match (&params.projection_weight, &params.projection_bias) {
        (Some(pw), Some(pb)) if params.output_option != OutputOption::Opt1 => {
            let parts: Vec<&Tensor> = concat_parts(params.output_option, k).into_iter().map(|i| &layers[i]).collect();
            let c = Tensor::hcat(&parts)?;
            let mut out = c.matmul_t(pw)?;
            out.add_row_vector(pb)?;
            (Some(c), out)
        }
        (None, None) if params.output_option == OutputOption::Opt1 => (None, layers[k].clone()),
        _ => return Err(Error::config("output projection does not match the output option")),
    };
    Ok(GraphTrace {
        layers,
        mixed,
        concat,
        output,
    })
}

fn column_sum_into(dst: &mut Tensor, m: &Tensor) {
    for i in 0..m.rows() {
        axpy_slice(dst.data_mut(), 1.0, m.row(i));
    }
}

/// Accumulates gradients given `d loss / d output` (`n × d_n`).
pub fn graph_backward(
    trace: &GraphTrace,
    adjacency: &Tensor,
    d_output: &Tensor,
    params: &GraphEncoderParams,
    grads: &mut GraphEncoderParams,
) -> Result<()> {
    if d_output.shape() != trace.output.shape() {
        return Err(Error::shape(format!(
            "output gradient {:?} vs output {:?}",
            d_output.shape(),
            trace.output.shape()
        )));
    }
    let k = params.layers();
    let mut d_layers: Vec<Tensor> = trace.layers.iter().map(Tensor::zeros_like).collect();
    match (&trace.concat, &params.projection_weight, &mut grads.projection_weight, &mut grads.projection_bias) {
        (Some(c), Some(pw), Some(gw), Some(gb)) => {
            gw.add_assign(&d_output.t_matmul(c)?)?;
            column_sum_into(gb, d_output);
            let dc = d_output.matmul(pw)?;
            let mut offset = 0;
            for idx in concat_parts(params.output_option, k) {
                let width = trace.layers[idx].cols();
                let dst = &mut d_layers[idx];
                for i in 0..dc.rows() {
                    axpy_slice(dst.row_mut(i), 1.0, &dc.row(i)[offset..offset + width]);
                }
                offset += width;
            }
        }
        _ => d_layers[k].add_assign(d_output)?,
    }
    for layer in (1..=k).rev() {
        let v = &trace.layers[layer];
        let mut d_pre = d_layers[layer].clone();
        for (g, &out) in d_pre.data_mut().iter_mut().zip(v.data()) {
            if out <= 0.0 {
                *g = 0.0;
            }
        }
        grads.weights[layer - 1].add_assign(&d_pre.t_matmul(&trace.mixed[layer - 1])?)?;
        column_sum_into(&mut grads.biases[layer - 1], &d_pre);
        let d_mixed = d_pre.matmul(&params.weights[layer - 1])?;
        let d_prev = adjacency.t_matmul(&d_mixed)?;
        d_layers[layer - 1].add_assign(&d_prev)?;
    }
    grads.embeddings.add_assign(&d_layers[0])?;
    Ok(())
}

/// Splits node outputs into relation rows `R` and type rows `T`.
pub fn split_nodes(output: &Tensor, num_relations: usize) -> Result<(Tensor, Tensor)> {
    if num_relations == 0 || num_relations >= output.rows() {
        return Err(Error::shape(format!(
            "cannot split {} node rows at relation count {num_relations}",
            output.rows()
        )));
    }
    Ok((
        output.slice_rows(0, num_relations)?,
        output.slice_rows(num_relations, output.rows())?,
    ))
}

/// Runs the encoder on `graph` and returns `(R, T)`.
pub fn graph_encode(graph: &ConstraintGraph, params: &GraphEncoderParams) -> Result<(Tensor, Tensor)> {
    if params.num_nodes() != graph.num_nodes() {
        return Err(Error::shape(format!(
            "graph has {} nodes, embeddings have {} rows",
            graph.num_nodes(),
            params.num_nodes()
        )));
    }
    let adjacency = graph.adjacency_matrix(params.normalized);
    let trace = graph_forward(&adjacency, params)?;
    split_nodes(&trace.output, graph.num_relations())
}
