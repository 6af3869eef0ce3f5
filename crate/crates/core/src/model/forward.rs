use rayon::prelude::*;

use super::{ModelParams, Variant};
use crate::constraint_graph::ConstraintGraph;
use crate::corpus::{EncodedBag, NA_ID};
use crate::error::{Error, Result};
use crate::graph_encoder::{graph_backward, graph_forward, split_nodes, GraphTrace};
use crate::numerics::{axpy_slice, dot, dropout_mask, softmax_slice, Rng, Tensor};
use crate::sentence_encoder::{self, SentenceTrace};

struct EncodedGraph {
    relations: Tensor,
    types: Tensor,
    adjacency: Tensor,
    trace: GraphTrace,
}

/// Graph-side state shared by every bag of one forward pass.
pub struct GraphContext<'g> {
    graph: &'g ConstraintGraph,
    encoded: Option<EncodedGraph>,
}

impl<'g> GraphContext<'g> {
    pub fn new(params: &ModelParams, graph: &'g ConstraintGraph) -> Result<Self> {
        if graph.num_relations() != params.num_relations() {
            return Err(Error::shape(format!(
                "graph has {} relations, classifier has {}",
                graph.num_relations(),
                params.num_relations()
            )));
        }
        let encoded = match (&params.graph, params.config.variant) {
            (Some(gp), Variant::Cgre) => {
                if gp.num_nodes() != graph.num_nodes() {
                    return Err(Error::shape(format!(
                        "graph has {} nodes, node embeddings have {} rows",
                        graph.num_nodes(),
                        gp.num_nodes()
                    )));
                }
                let adjacency = graph.adjacency_matrix(gp.normalized);
                let trace = graph_forward(&adjacency, gp)?;
                let (relations, types) = split_nodes(&trace.output, graph.num_relations())?;
                Some(EncodedGraph {
                    relations,
                    types,
                    adjacency,
                    trace,
                })
            }
            (None, Variant::Cgre) => return Err(Error::config("cgre variant without graph encoder parameters")),
            _ => None,
        };
        if let Some(te) = &params.type_embeddings {
            if te.rows() != graph.num_types() {
                return Err(Error::shape("type embedding rows differ from graph type count"));
            }
        }
        Ok(GraphContext { graph, encoded })
    }

    pub fn graph(&self) -> &ConstraintGraph {
        self.graph
    }

    /// Relation rows `R` (CGRE only).
    pub fn relation_reprs(&self) -> Option<&Tensor> {
        self.encoded.as_ref().map(|e| &e.relations)
    }

    /// Type rows `T` (CGRE only).
    pub fn type_reprs(&self) -> Option<&Tensor> {
        self.encoded.as_ref().map(|e| &e.types)
    }
}

/// `g = [s; T[head_type]; T[tail_type]]`.
pub fn make_instance_repr(s: &[f64], head_type: usize, tail_type: usize, types: &Tensor) -> Result<Vec<f64>> {
    if head_type >= types.rows() || tail_type >= types.rows() {
        return Err(Error::domain(format!(
            "type ids ({head_type}, {tail_type}) outside {} type rows",
            types.rows()
        )));
    }
    if s.len() != types.cols() {
        return Err(Error::shape(format!(
            "sentence width {} differs from type width {}",
            s.len(),
            types.cols()
        )));
    }
    let mut g = Vec::with_capacity(3 * s.len());
    g.extend_from_slice(s);
    g.extend_from_slice(types.row(head_type));
    g.extend_from_slice(types.row(tail_type));
    Ok(g)
}

fn mean_rows(rows: &[usize], table: &Tensor, out: &mut [f64]) {
    if rows.is_empty() {
        return;
    }
    let w = 1.0 / rows.len() as f64;
    for &t in rows {
        axpy_slice(out, w, table.row(t));
    }
}

/// `c_r = [R[r]; mean of predecessor type rows; mean of successor type rows]`.
/// A relation without constraints gets zero type parts.
pub fn make_constraint_repr(r: usize, graph: &ConstraintGraph, relations: &Tensor, types: &Tensor) -> Result<Vec<f64>> {
    let (pred, succ) = graph.relation_neighbors(r)?;
    let d = relations.cols();
    if types.cols() != d {
        return Err(Error::shape("relation and type rows differ in width"));
    }
    let mut c = vec![0.0; 3 * d];
    c[..d].copy_from_slice(relations.row(r));
    mean_rows(pred, types, &mut c[d..2 * d]);
    mean_rows(succ, types, &mut c[2 * d..]);
    Ok(c)
}

/// `α = softmax(g_i · c)`, `z = Σ α_i g_i`.
pub fn bag_attention(keys: &[Vec<f64>], query: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if keys.is_empty() {
        return Err(Error::domain("attention over an empty bag"));
    }
    if let Some(k) = keys.iter().find(|k| k.len() != query.len()) {
        return Err(Error::shape(format!("key width {} vs query width {}", k.len(), query.len())));
    }
    let logits: Vec<f64> = keys.iter().map(|k| dot(k, query)).collect();
    let alpha = softmax_slice(&logits)?;
    let mut z = vec![0.0; query.len()];
    for (a, k) in alpha.iter().zip(keys) {
        axpy_slice(&mut z, *a, k);
    }
    Ok((alpha, z))
}

struct Classified {
    probs: Vec<f64>,
    dropped: Vec<f64>,
    /// `log P(r)` for every relation, computed stably.
    log_probs: Vec<f64>,
}

fn classify_masked(z: &[f64], mask: &[f64], params: &ModelParams) -> Result<Classified> {
    let w = &params.classifier_weight;
    if z.len() != w.cols() {
        return Err(Error::shape(format!("classifier input {} vs weight {:?}", z.len(), w.shape())));
    }
    let dropped: Vec<f64> = z.iter().zip(mask).map(|(a, m)| a * m).collect();
    let logits: Vec<f64> = (0..w.rows())
        .map(|r| dot(w.row(r), &dropped) + params.classifier_bias.data()[r])
        .collect();
    let probs = softmax_slice(&logits)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let log_probs = logits.iter().map(|l| l - log_norm).collect();
    Ok(Classified {
        probs,
        dropped,
        log_probs,
    })
}

/// `softmax(W · dropout(z) + b)`; dropout is applied only when training.
pub fn classify(z: &[f64], params: &ModelParams, training: bool, rng: &mut Rng) -> Result<Vec<f64>> {
    let mask = dropout_mask(&[z.len()], params.config.dropout, rng, training)?;
    Ok(classify_masked(z, mask.data(), params)?.probs)
}

struct InstanceState {
    trace: SentenceTrace,
    /// Base+Type: `[s; TE[h]; TE[t]]`.
    mixed_input: Option<Vec<f64>>,
    key: Vec<f64>,
    head_type: usize,
    tail_type: usize,
}

fn instance_states(bag: &EncodedBag, params: &ModelParams, ctx: &GraphContext) -> Result<Vec<InstanceState>> {
    if bag.instances.is_empty() {
        return Err(Error::domain(format!("bag {} is empty", bag.pair)));
    }
    bag.instances
        .iter()
        .map(|inst| {
            let (s, trace) = sentence_encoder::encode(inst, &params.sentence)?;
            let (key, mixed_input) = match params.config.variant {
                Variant::Cgre => {
                    let types = ctx.type_reprs().ok_or_else(|| Error::config("missing graph context"))?;
                    (make_instance_repr(&s, inst.head_type, inst.tail_type, types)?, None)
                }
                Variant::Base | Variant::BaseConst => (s, None),
                Variant::BaseType => {
                    let (te, mw, mb) = type_map(params)?;
                    if inst.head_type >= te.rows() || inst.tail_type >= te.rows() {
                        return Err(Error::domain("entity type id outside type table"));
                    }
                    let mut input = s;
                    input.extend_from_slice(te.row(inst.head_type));
                    input.extend_from_slice(te.row(inst.tail_type));
                    let key = (0..mw.rows()).map(|o| dot(mw.row(o), &input) + mb.data()[o]).collect();
                    (key, Some(input))
                }
            };
            Ok(InstanceState {
                trace,
                mixed_input,
                key,
                head_type: inst.head_type,
                tail_type: inst.tail_type,
            })
        })
        .collect()
}

fn type_map(params: &ModelParams) -> Result<(&Tensor, &Tensor, &Tensor)> {
    match (&params.type_embeddings, &params.type_map_weight, &params.type_map_bias) {
        (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
        _ => Err(Error::config("base+type variant without type parameters")),
    }
}

fn relation_query(r: usize, params: &ModelParams, ctx: &GraphContext) -> Result<Vec<f64>> {
    if r >= params.num_relations() {
        return Err(Error::domain(format!("relation id {r} out of range")));
    }
    match (params.config.variant, &ctx.encoded, &params.queries) {
        (Variant::Cgre, Some(e), _) => make_constraint_repr(r, ctx.graph, &e.relations, &e.types),
        (Variant::Cgre, None, _) => Err(Error::config("missing graph context")),
        (_, _, Some(q)) => Ok(q.row(r).to_vec()),
        _ => Err(Error::config("base variant without relation queries")),
    }
}

/// Attention weights of `bag` keyed on relation `r` (eval mode).
pub fn relation_attention(bag: &EncodedBag, r: usize, params: &ModelParams, ctx: &GraphContext) -> Result<Vec<f64>> {
    let states = instance_states(bag, params, ctx)?;
    let keys: Vec<Vec<f64>> = states.into_iter().map(|s| s.key).collect();
    Ok(bag_attention(&keys, &relation_query(r, params, ctx)?)?.0)
}

/// Per-relation scores `P(r | z_r)`: every relation's query is applied in
/// turn and entry `r` of the resulting distribution is kept.
pub fn predict_bag(bag: &EncodedBag, params: &ModelParams, ctx: &GraphContext) -> Result<Vec<f64>> {
    let states = instance_states(bag, params, ctx)?;
    let n_r = params.num_relations();
    let ones = vec![1.0; params.classifier_weight.cols()];
    let mut scores = vec![0.0; n_r];
    let constrained = params.config.variant == Variant::BaseConst;
    let mut any_allowed = false;
    for (r, score) in scores.iter_mut().enumerate() {
        let query = relation_query(r, params, ctx)?;
        let keys: Vec<Vec<f64>> = if constrained && r != NA_ID {
            let mut keep = Vec::new();
            for s in &states {
                if !ctx.graph.violates(s.head_type, s.tail_type, r)? {
                    keep.push(s.key.clone());
                }
            }
            if keep.is_empty() {
                continue;
            }
            any_allowed = true;
            keep
        } else {
            states.iter().map(|s| s.key.clone()).collect()
        };
        let (_, z) = bag_attention(&keys, &query)?;
        *score = classify_masked(&z, &ones, params)?.probs[r];
    }
    if constrained && !any_allowed {
        scores.iter_mut().for_each(|s| *s = 0.0);
        scores[NA_ID] = 1.0;
    }
    Ok(scores)
}

/// Scores for every bag, fanned out over the current rayon pool. Output order
/// matches input order.
pub fn predict_bags(bags: &[EncodedBag], params: &ModelParams, graph: &ConstraintGraph) -> Result<Vec<Vec<f64>>> {
    let ctx = GraphContext::new(params, graph)?;
    bags.par_iter().map(|b| predict_bag(b, params, &ctx)).collect()
}

/// Mean bag cross-entropy with attention keyed on each bag's label; dropout
/// off.
pub fn bag_loss(bags: &[&EncodedBag], params: &ModelParams, graph: &ConstraintGraph) -> Result<f64> {
    let ctx = GraphContext::new(params, graph)?;
    let ones = vec![1.0; params.classifier_weight.cols()];
    let mut total = 0.0;
    for bag in bags {
        let r = gold_label(bag)?;
        let states = instance_states(bag, params, &ctx)?;
        let keys: Vec<Vec<f64>> = states.into_iter().map(|s| s.key).collect();
        let (_, z) = bag_attention(&keys, &relation_query(r, params, &ctx)?)?;
        total -= classify_masked(&z, &ones, params)?.log_probs[r];
    }
    Ok(total / bags.len().max(1) as f64)
}

fn gold_label(bag: &EncodedBag) -> Result<usize> {
    bag.label()
        .ok_or_else(|| Error::domain(format!("training bag {} needs exactly one label", bag.pair)))
}

/// Mean loss over `batch`; gradients are added into `grads`. With a dropout
/// generator the classifier input is dropped out.
pub fn bag_loss_and_gradients(
    batch: &[&EncodedBag],
    params: &ModelParams,
    graph: &ConstraintGraph,
    mut dropout_rng: Option<&mut Rng>,
    grads: &mut ModelParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let ctx = GraphContext::new(params, graph)?;
    let scale = 1.0 / batch.len() as f64;
    let d = params.config.sentence_dim();
    let width = params.classifier_weight.cols();
    let mut d_nodes = ctx.encoded.as_ref().map(|e| e.trace.output.zeros_like());
    let mut total = 0.0;

    for bag in batch {
        let r = gold_label(bag)?;
        let states = instance_states(bag, params, &ctx)?;
        let query = relation_query(r, params, &ctx)?;
        let keys: Vec<Vec<f64>> = states.iter().map(|s| s.key.clone()).collect();
        let (alpha, z) = bag_attention(&keys, &query)?;
        let mask = match dropout_rng.as_deref_mut() {
            Some(rng) => dropout_mask(&[width], params.config.dropout, rng, true)?,
            None => Tensor::filled(&[width], 1.0),
        };
        let Classified {
            probs,
            dropped,
            log_probs,
        } = classify_masked(&z, mask.data(), params)?;
        let loss = -log_probs[r];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss on bag {}", bag.pair)));
        }
        total += loss;

        // classifier
        let mut d_logits = probs;
        d_logits[r] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v *= scale);
        let mut dz = vec![0.0; width];
        for (o, &g) in d_logits.iter().enumerate() {
            axpy_slice(grads.classifier_weight.row_mut(o), g, &dropped);
            axpy_slice(&mut dz, g, params.classifier_weight.row(o));
        }
        axpy_slice(grads.classifier_bias.data_mut(), 1.0, &d_logits);
        for (g, m) in dz.iter_mut().zip(mask.data()) {
            *g *= m;
        }

        // attention
        let d_alpha: Vec<f64> = keys.iter().map(|k| dot(k, &dz)).collect();
        let mean = dot(&alpha, &d_alpha);
        let d_logit: Vec<f64> = alpha.iter().zip(&d_alpha).map(|(a, da)| a * (da - mean)).collect();
        let mut d_query = vec![0.0; query.len()];
        for (k, &de) in keys.iter().zip(&d_logit) {
            axpy_slice(&mut d_query, de, k);
        }

        match (params.config.variant, ctx.encoded.as_ref(), d_nodes.as_mut()) {
            (Variant::Cgre, Some(_), Some(dn)) => {
                let n_r = ctx.graph.num_relations();
                axpy_slice(dn.row_mut(r), 1.0, &d_query[..d]);
                let (pred, succ) = ctx.graph.relation_neighbors(r)?;
                for (list, part) in [(pred, &d_query[d..2 * d]), (succ, &d_query[2 * d..])] {
                    if list.is_empty() {
                        continue;
                    }
                    let w = 1.0 / list.len() as f64;
                    for &t in list {
                        axpy_slice(dn.row_mut(n_r + t), w, part);
                    }
                }
            }
            (_, _, _) => {
                let q = grads.queries.as_mut().ok_or_else(|| Error::config("missing query gradients"))?;
                axpy_slice(q.row_mut(r), 1.0, &d_query);
            }
        }

        for ((state, &a), &de) in states.iter().zip(&alpha).zip(&d_logit) {
            let mut d_key: Vec<f64> = dz.iter().map(|g| a * g).collect();
            axpy_slice(&mut d_key, de, &query);
            let ds = match params.config.variant {
                Variant::Cgre => {
                    let n_r = ctx.graph.num_relations();
                    let dn = d_nodes.as_mut().expect("graph gradients");
                    axpy_slice(dn.row_mut(n_r + state.head_type), 1.0, &d_key[d..2 * d]);
                    axpy_slice(dn.row_mut(n_r + state.tail_type), 1.0, &d_key[2 * d..]);
                    d_key.truncate(d);
                    d_key
                }
                Variant::Base | Variant::BaseConst => d_key,
                Variant::BaseType => {
                    let (_, mw, _) = type_map(params)?;
                    let input = state.mixed_input.as_ref().expect("mixed input");
                    let mut d_input = vec![0.0; input.len()];
                    {
                        let gw = grads.type_map_weight.as_mut().expect("type map grads");
                        for (o, &g) in d_key.iter().enumerate() {
                            if g != 0.0 {
                                axpy_slice(gw.row_mut(o), g, input);
                                axpy_slice(&mut d_input, g, mw.row(o));
                            }
                        }
                    }
                    axpy_slice(grads.type_map_bias.as_mut().expect("type map grads").data_mut(), 1.0, &d_key);
                    let dv = params.config.node_dim;
                    let gte = grads.type_embeddings.as_mut().expect("type grads");
                    axpy_slice(gte.row_mut(state.head_type), 1.0, &d_input[d..d + dv]);
                    axpy_slice(gte.row_mut(state.tail_type), 1.0, &d_input[d + dv..]);
                    d_input.truncate(d);
                    d_input
                }
            };
            sentence_encoder::backward(&state.trace, &ds, &params.sentence, &mut grads.sentence)?;
        }
    }

    if let (Some(e), Some(dn), Some(gp), Some(gg)) = (&ctx.encoded, &d_nodes, &params.graph, grads.graph.as_mut()) {
        graph_backward(&e.trace, &e.adjacency, dn, gp, gg)?;
    }
    Ok(total * scale)
}
