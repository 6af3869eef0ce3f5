use serde::{Deserialize, Serialize};

use super::forward::{bag_loss, bag_loss_and_gradients, predict_bags};
use super::{ModelParams, Variant};
use crate::constraint_graph::ConstraintGraph;
use crate::corpus::EncodedBag;
use crate::error::{Error, Result};
use crate::numerics::{sgd_update, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-bag loss over the epoch, measured before each batch update.
    pub mean_loss: f64,
    /// Loss over all training bags after the epoch, dropout off.
    pub full_loss: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub training_bags: usize,
    pub filtered_instances: usize,
    pub filtered_bags: usize,
}

/// Drops instances whose entity types violate the bag label's constraints.
/// Bags left empty are removed. Returns the kept bags and the number of
/// removed instances.
pub fn filter_violating(bags: &[EncodedBag], graph: &ConstraintGraph) -> Result<(Vec<EncodedBag>, usize)> {
    let mut kept = Vec::with_capacity(bags.len());
    let mut removed = 0;
    for bag in bags {
        let r = bag
            .label()
            .ok_or_else(|| Error::domain(format!("training bag {} needs exactly one label", bag.pair)))?;
        let mut out = bag.clone();
        let mut flags = bag.valid_flags.clone();
        let mut instances = Vec::with_capacity(bag.instances.len());
        let mut keep_flags = Vec::new();
        for (i, inst) in bag.instances.iter().enumerate() {
            if graph.violates(inst.head_type, inst.tail_type, r)? {
                removed += 1;
            } else {
                instances.push(inst.clone());
                if let Some(f) = &flags {
                    keep_flags.push(f[i]);
                }
            }
        }
        if instances.is_empty() {
            continue;
        }
        if flags.is_some() {
            flags = Some(keep_flags);
        }
        out.instances = instances;
        out.valid_flags = flags;
        kept.push(out);
    }
    if kept.is_empty() {
        return Err(Error::config("every training bag was removed by constraint filtering"));
    }
    Ok((kept, removed))
}

/// One pass of mini-batch SGD over `bags` in a seeded random order. A batch
/// whose loss or gradients are non-finite aborts the epoch before its update
/// is applied, so `params` always holds the last good state.
pub fn train_epoch(
    params: &mut ModelParams,
    bags: &[EncodedBag],
    graph: &ConstraintGraph,
    rng: &mut Rng,
    epoch: usize,
) -> Result<EpochStats> {
    if bags.is_empty() {
        return Err(Error::domain("no training bags"));
    }
    let mut order: Vec<usize> = (0..bags.len()).collect();
    rng.shuffle(&mut order);
    let lr = params.config.learning_rate;
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(params.config.batch_size) {
        let batch: Vec<&EncodedBag> = chunk.iter().map(|&i| &bags[i]).collect();
        let mut grads = params.zeros_like();
        let loss = bag_loss_and_gradients(&batch, params, graph, Some(rng), &mut grads)?;
        if let Some((name, _)) = grads.tensors().into_iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {name} at epoch {epoch}")));
        }
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            sgd_update(p, g.1, lr)?;
        }
        total += loss * batch.len() as f64;
        batches += 1;
    }
    let all: Vec<&EncodedBag> = bags.iter().collect();
    let full_loss = bag_loss(&all, params, graph)?;
    if !full_loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss after epoch {epoch}")));
    }
    Ok(EpochStats {
        epoch,
        mean_loss: total / bags.len() as f64,
        full_loss,
        batches,
    })
}

/// Runs `params.config.epochs` epochs. Base+Const training first removes
/// constraint-violating instances. `on_epoch` sees the parameters after
/// every epoch.
pub fn train<F>(
    params: &mut ModelParams,
    bags: &[EncodedBag],
    graph: &ConstraintGraph,
    rng: &mut Rng,
    mut on_epoch: F,
) -> Result<TrainLog>
where
    F: FnMut(&ModelParams, &EpochStats) -> Result<()>,
{
    let mut log = TrainLog::default();
    let filtered;
    let bags = if params.config.variant == Variant::BaseConst {
        let (kept, removed) = filter_violating(bags, graph)?;
        log.filtered_instances = removed;
        log.filtered_bags = bags.len() - kept.len();
        filtered = kept;
        &filtered[..]
    } else {
        bags
    };
    log.training_bags = bags.len();
    for epoch in 1..=params.config.epochs {
        let stats = train_epoch(params, bags, graph, rng, epoch)?;
        log::info!("epoch {epoch}: loss {:.6} (full pass {:.6})", stats.mean_loss, stats.full_loss);
        on_epoch(params, &stats)?;
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Fraction of bags whose argmax prediction equals their label.
pub fn training_accuracy(params: &ModelParams, bags: &[EncodedBag], graph: &ConstraintGraph) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::domain("no bags to score"));
    }
    let scores = predict_bags(bags, params, graph)?;
    let correct = bags
        .iter()
        .zip(&scores)
        .filter(|(b, s)| b.label() == Some(argmax(s)))
        .count();
    Ok(correct as f64 / bags.len() as f64)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
