//! Metrics over scored test bags, plus the controlled test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedBag, PairId, NA_ID};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Scores of one evaluated bag together with its gold annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct BagScores {
    pub pair: PairId,
    pub labels: BTreeSet<usize>,
    /// Set under the zero-valid split: the nominal labels are not facts.
    pub noisy_label: bool,
    /// One score per relation id. Entry `NA_ID` may be a placeholder when
    /// scores were read back from a prediction file.
    pub scores: Vec<f64>,
    pub argmax: usize,
}

impl BagScores {
    pub fn new(bag: &EncodedBag, scores: Vec<f64>) -> Self {
        let argmax = crate::model::argmax(&scores);
        BagScores {
            pair: bag.pair.clone(),
            labels: bag.labels.clone(),
            noisy_label: bag.noisy_label,
            scores,
            argmax,
        }
    }

    /// Non-NA gold facts of this bag.
    pub fn gold_facts(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .copied()
            .filter(move |&r| r != NA_ID && !self.noisy_label)
    }

    /// Non-NA relation ids by descending score, ties to the lower id.
    pub fn ranking(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.scores.len()).filter(|&r| r != NA_ID).collect();
        ids.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        ids
    }
}

pub fn bag_scores(bags: &[EncodedBag], scores: Vec<Vec<f64>>) -> Result<Vec<BagScores>> {
    if bags.len() != scores.len() {
        return Err(Error::shape(format!("{} bags but {} score rows", bags.len(), scores.len())));
    }
    Ok(bags.iter().zip(scores).map(|(b, s)| BagScores::new(b, s)).collect())
}

/// A scored non-NA relation for one entity pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair: PairId,
    pub relation: usize,
    pub score: f64,
}

/// Non-NA predictions in total order: score descending, then pair, then
/// relation id.
#[derive(Clone, Debug)]
pub struct RankedPredictions {
    predictions: Vec<Prediction>,
    gold: BTreeMap<PairId, BTreeSet<usize>>,
    total_positive_facts: usize,
}

impl RankedPredictions {
    /// `gold` maps each pair to its relation set; NA entries are ignored.
    pub fn new(predictions: Vec<Prediction>, gold: BTreeMap<PairId, BTreeSet<usize>>) -> Self {
        let mut predictions: Vec<Prediction> = predictions.into_iter().filter(|p| p.relation != NA_ID).collect();
        predictions.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.pair.cmp(&b.pair))
                .then(a.relation.cmp(&b.relation))
        });
        let gold: BTreeMap<PairId, BTreeSet<usize>> = gold
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().filter(|&r| r != NA_ID).collect()))
            .collect();
        let total_positive_facts = gold.values().map(BTreeSet::len).sum();
        RankedPredictions {
            predictions,
            gold,
            total_positive_facts,
        }
    }

    /// Every non-NA relation of every bag becomes a prediction.
    pub fn from_bag_scores(bags: &[BagScores]) -> Self {
        let mut preds = Vec::new();
        let mut gold: BTreeMap<PairId, BTreeSet<usize>> = BTreeMap::new();
        for b in bags {
            gold.entry(b.pair.clone()).or_default().extend(b.gold_facts());
            for r in (0..b.scores.len()).filter(|&r| r != NA_ID) {
                preds.push(Prediction {
                    pair: b.pair.clone(),
                    relation: r,
                    score: b.scores[r],
                });
            }
        }
        Self::new(preds, gold)
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn total_positive_facts(&self) -> usize {
        self.total_positive_facts
    }

    pub fn is_correct(&self, p: &Prediction) -> bool {
        self.gold.get(&p.pair).is_some_and(|g| g.contains(&p.relation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// One point per ranking prefix.
pub fn pr_curve(rp: &RankedPredictions) -> Result<Vec<PrPoint>> {
    if rp.total_positive_facts == 0 {
        return Err(Error::domain("no positive gold facts; PR curve undefined"));
    }
    let total = rp.total_positive_facts as f64;
    let mut correct = 0usize;
    Ok(rp
        .predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if rp.is_correct(p) {
                correct += 1;
            }
            PrPoint {
                precision: correct as f64 / (i + 1) as f64,
                recall: correct as f64 / total,
            }
        })
        .collect())
}

/// Trapezoidal area under precision as a function of recall, clamped to
/// `[0, 1]`. Points must be sorted by ascending recall.
pub fn auc(points: &[PrPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::domain(format!("AUC needs at least 2 points, got {}", points.len())));
    }
    let mut area = 0.0;
    for w in points.windows(2) {
        let dr = w[1].recall - w[0].recall;
        if dr < 0.0 {
            return Err(Error::domain("PR points are not sorted by recall"));
        }
        area += dr * (w[0].precision + w[1].precision) / 2.0;
    }
    Ok(area.clamp(0.0, 1.0))
}

/// AUC of a ranking curve, with the first point's precision extended back
/// to recall 0 so a perfect ranking scores exactly 1.
pub fn curve_auc(points: &[PrPoint]) -> Result<f64> {
    let first = points
        .first()
        .ok_or_else(|| Error::domain("AUC of an empty PR curve"))?;
    let mut anchored = Vec::with_capacity(points.len() + 1);
    anchored.push(PrPoint {
        precision: first.precision,
        recall: 0.0,
    });
    anchored.extend_from_slice(points);
    auc(&anchored)
}

/// Fraction of the top `n` predictions that are correct.
pub fn precision_at_n(rp: &RankedPredictions, n: usize) -> Result<f64> {
    if n == 0 || n > rp.predictions.len() {
        return Err(Error::domain(format!(
            "P@{n} requested with {} predictions",
            rp.predictions.len()
        )));
    }
    let correct = rp.predictions[..n].iter().filter(|p| rp.is_correct(p)).count();
    Ok(correct as f64 / n as f64)
}

/// Non-NA relations with fewer than `threshold` training instances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LongTailBucket {
    pub threshold: usize,
    pub relations: BTreeSet<usize>,
}

impl LongTailBucket {
    /// `counts[r]` is the training-instance count of relation `r`.
    pub fn from_counts(counts: &[usize], threshold: usize) -> Self {
        LongTailBucket {
            threshold,
            relations: counts
                .iter()
                .enumerate()
                .filter(|&(r, &c)| r != NA_ID && c < threshold)
                .map(|(r, _)| r)
                .collect(),
        }
    }
}

/// Mean over bucket relations (with at least one test bag) of the fraction
/// of that relation's bags ranking it within the top `k` non-NA relations.
pub fn hits_at_k_macro(bags: &[BagScores], bucket: &LongTailBucket, k: usize) -> Result<f64> {
    if bucket.relations.is_empty() {
        return Err(Error::domain(format!("long-tail bucket <{} is empty", bucket.threshold)));
    }
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for b in bags {
        let ranking = b.ranking();
        let top: BTreeSet<usize> = ranking.iter().take(k).copied().collect();
        for r in b.gold_facts().filter(|r| bucket.relations.contains(r)) {
            let e = hits.entry(r).or_default();
            e.1 += 1;
            if top.contains(&r) {
                e.0 += 1;
            }
        }
    }
    if hits.is_empty() {
        return Err(Error::domain(format!(
            "no test bag carries a relation from bucket <{}",
            bucket.threshold
        )));
    }
    let sum: f64 = hits.values().map(|&(h, n)| h as f64 / n as f64).sum();
    Ok(sum / hits.len() as f64)
}

/// Per bag, the share of (valid, noisy) sentence pairs where the valid one
/// has strictly higher attention; averaged over bags with at least one of
/// each.
pub fn attention_accuracy(flags: &[Vec<bool>], weights: &[Vec<f64>]) -> Result<f64> {
    if flags.len() != weights.len() {
        return Err(Error::shape(format!("{} flag rows but {} weight rows", flags.len(), weights.len())));
    }
    let mut total = 0.0;
    let mut bags = 0usize;
    for (f, w) in flags.iter().zip(weights) {
        if f.len() != w.len() {
            return Err(Error::shape("flag and weight rows differ in length"));
        }
        let valid: Vec<f64> = f.iter().zip(w).filter(|(v, _)| **v).map(|(_, a)| *a).collect();
        let noisy: Vec<f64> = f.iter().zip(w).filter(|(v, _)| !**v).map(|(_, a)| *a).collect();
        if valid.is_empty() || noisy.is_empty() {
            continue;
        }
        let wins = valid
            .iter()
            .map(|a| noisy.iter().filter(|b| a > b).count())
            .sum::<usize>();
        total += wins as f64 / (valid.len() * noisy.len()) as f64;
        bags += 1;
    }
    if bags == 0 {
        return Err(Error::domain("no bag has both valid and noisy sentences"));
    }
    Ok(total / bags as f64)
}

/// Bag-size splits over pairs with more than two sentences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeSplit {
    One,
    Two,
    All,
}

/// Sentence-validity splits over annotated bags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValiditySplit {
    /// Noisy sentences only; the nominal label is not a fact.
    Zero,
    /// One seeded valid sentence plus all noisy ones.
    One,
    /// Valid sentences only.
    All,
}

macro_rules! split_names {
    ($ty:ident { $($variant:ident => $name:literal),* }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$variant),)*
                    other => Err(Error::config(format!("unknown split {other:?}"))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)* })
            }
        }
    };
}

split_names!(SizeSplit { One => "one", Two => "two", All => "all" });
split_names!(ValiditySplit { Zero => "zero", One => "one", All => "all" });

fn keep_indices(bag: &EncodedBag, idx: &[usize]) -> EncodedBag {
    let mut out = bag.clone();
    out.instances = idx.iter().map(|&i| bag.instances[i].clone()).collect();
    out.valid_flags = bag.valid_flags.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect());
    out
}

/// Keeps pairs with more than two sentences and samples one, two or all of
/// them. Sampled sentences keep their original order.
pub fn build_size_split(bags: &[EncodedBag], mode: SizeSplit, rng: &mut Rng) -> Result<Vec<EncodedBag>> {
    let mut out = Vec::new();
    for bag in bags.iter().filter(|b| b.instances.len() > 2) {
        let n = bag.instances.len();
        let mut idx = match mode {
            SizeSplit::One => rng.sample_indices(n, 1),
            SizeSplit::Two => rng.sample_indices(n, 2),
            SizeSplit::All => (0..n).collect(),
        };
        idx.sort_unstable();
        out.push(keep_indices(bag, &idx));
    }
    if out.is_empty() {
        return Err(Error::domain(format!(
            "size split {mode} is empty: no test pair has more than two sentences"
        )));
    }
    Ok(out)
}

/// Rebuilds annotated bags with zero, one or all valid sentences. Bags
/// without annotations, or without the sentences the mode needs, are left
/// out.
pub fn build_validity_split(bags: &[EncodedBag], mode: ValiditySplit, rng: &mut Rng) -> Result<Vec<EncodedBag>> {
    if bags.iter().all(|b| b.valid_flags.is_none()) {
        return Err(Error::schema("validity splits need per-sentence `valid` annotations"));
    }
    let mut out = Vec::new();
    for bag in bags {
        let Some(flags) = &bag.valid_flags else { continue };
        let valid: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        let noisy: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
        let idx: Vec<usize> = match mode {
            ValiditySplit::Zero if !noisy.is_empty() => noisy,
            ValiditySplit::One if !valid.is_empty() => {
                let pick = valid[rng.below(valid.len())];
                let mut v = noisy;
                v.push(pick);
                v.sort_unstable();
                v
            }
            ValiditySplit::All if !valid.is_empty() => valid,
            _ => continue,
        };
        let mut b = keep_indices(bag, &idx);
        b.noisy_label = mode == ValiditySplit::Zero;
        out.push(b);
    }
    if out.is_empty() {
        return Err(Error::domain(format!("validity split {mode} is empty")));
    }
    Ok(out)
}

/// How bags turn into positive predictions for F1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum F1Rule {
    /// The bag's argmax, when it is not NA.
    Argmax,
    /// Every non-NA relation scoring at least the threshold.
    Threshold(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro precision, recall and F1 over (pair, relation) facts.
pub fn micro_f1(bags: &[BagScores], rule: F1Rule) -> F1Report {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut gold = 0usize;
    for b in bags {
        let facts: BTreeSet<usize> = b.gold_facts().collect();
        gold += facts.len();
        let preds: Vec<usize> = match rule {
            F1Rule::Argmax => (b.argmax != NA_ID).then_some(b.argmax).into_iter().collect(),
            F1Rule::Threshold(t) => (0..b.scores.len()).filter(|&r| r != NA_ID && b.scores[r] >= t).collect(),
        };
        predicted += preds.len();
        tp += preds.iter().filter(|r| facts.contains(r)).count();
    }
    let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1Report { precision, recall, f1 }
}

/// Which metrics to compute.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub precision_at: Vec<usize>,
    /// Training-instance counts per relation; enables Hits@K.
    pub train_counts: Option<Vec<usize>>,
    pub hits_thresholds: Vec<usize>,
    pub hits_k: Vec<usize>,
    pub f1_rule: F1Rule,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            precision_at: vec![100, 200, 300],
            train_counts: None,
            hits_thresholds: vec![100, 200],
            hits_k: vec![10, 15, 20],
            f1_rule: F1Rule::Argmax,
        }
    }
}

/// Structured metric report. Map keys are sorted, so serialization is
/// deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bags: usize,
    pub predictions: usize,
    pub positive_facts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub precision_at: BTreeMap<String, f64>,
    /// `"<100" → {"10": value, …}`.
    pub hits_at_k: BTreeMap<String, BTreeMap<String, f64>>,
    pub micro_f1: Option<F1Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_accuracy: Option<f64>,
}

/// Computes every configured metric that is defined on `bags`; undefined
/// ones (no positives, too few predictions, empty buckets) are left out.
pub fn evaluate(bags: &[BagScores], options: &EvalOptions) -> (MetricReport, Vec<PrPoint>) {
    let rp = RankedPredictions::from_bag_scores(bags);
    let curve = pr_curve(&rp).unwrap_or_default();
    let mut report = MetricReport {
        bags: bags.len(),
        predictions: rp.predictions().len(),
        positive_facts: rp.total_positive_facts(),
        auc: curve_auc(&curve).ok(),
        micro_f1: Some(micro_f1(bags, options.f1_rule)),
        ..MetricReport::default()
    };
    for &n in &options.precision_at {
        if let Ok(v) = precision_at_n(&rp, n) {
            report.precision_at.insert(n.to_string(), v);
        }
    }
    if let Some(counts) = &options.train_counts {
        for &t in &options.hits_thresholds {
            let bucket = LongTailBucket::from_counts(counts, t);
            let mut row = BTreeMap::new();
            for &k in &options.hits_k {
                if let Ok(v) = hits_at_k_macro(bags, &bucket, k) {
                    row.insert(k.to_string(), v);
                }
            }
            if !row.is_empty() {
                report.hits_at_k.insert(format!("<{t}"), row);
            }
        }
    }
    (report, curve)
}

/// Two-column `recall,precision` CSV with a header.
pub fn pr_curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("recall,precision\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.recall, p.precision));
    }
    out
}

/// One line of a prediction file: a bag's score for one non-NA relation,
/// plus the bag's overall argmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: PairId,
    pub relation: String,
    pub score: f64,
    pub argmax: String,
}

pub fn prediction_records(bags: &[BagScores], relations: &[String]) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for b in bags {
        if b.scores.len() != relations.len() {
            return Err(Error::shape(format!(
                "bag {} has {} scores for {} relations",
                b.pair,
                b.scores.len(),
                relations.len()
            )));
        }
        for r in (0..relations.len()).filter(|&r| r != NA_ID) {
            out.push(PredictionRecord {
                pair_id: b.pair.clone(),
                relation: relations[r].clone(),
                score: b.scores[r],
                argmax: relations[b.argmax].clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut writer: W, records: &[PredictionRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Rebuilds per-bag scores from prediction records, taking gold labels from
/// `bags`. The NA score is not stored in the file and is set to 0; no
/// metric reads it.
pub fn scores_from_records(
    records: &[PredictionRecord],
    relations: &[String],
    bags: &[EncodedBag],
) -> Result<Vec<BagScores>> {
    let ids: BTreeMap<&str, usize> = relations.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let lookup = |name: &str| {
        ids.get(name)
            .copied()
            .ok_or_else(|| Error::schema(format!("prediction file names unknown relation {name:?}")))
    };
    let mut by_pair: BTreeMap<&PairId, (Vec<f64>, Vec<bool>, usize)> = BTreeMap::new();
    for rec in records {
        let r = lookup(&rec.relation)?;
        let argmax = lookup(&rec.argmax)?;
        let entry = by_pair
            .entry(&rec.pair_id)
            .or_insert_with(|| (vec![0.0; relations.len()], vec![false; relations.len()], argmax));
        entry.0[r] = rec.score;
        entry.1[r] = true;
    }
    bags.iter()
        .map(|bag| {
            let (scores, seen, argmax) = by_pair
                .get(&bag.pair)
                .ok_or_else(|| Error::schema(format!("prediction file has no records for {}", bag.pair)))?;
            if seen.iter().enumerate().any(|(r, s)| r != NA_ID && !s) {
                return Err(Error::schema(format!("prediction file is missing relations for {}", bag.pair)));
            }
            Ok(BagScores {
                pair: bag.pair.clone(),
                labels: bag.labels.clone(),
                noisy_label: bag.noisy_label,
                scores: scores.clone(),
                argmax: *argmax,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(i: usize) -> PairId {
        PairId::new(&format!("h{i}"), &format!("t{i}"))
    }

    fn scored(i: usize, labels: &[usize], scores: Vec<f64>) -> BagScores {
        let argmax = crate::model::argmax(&scores);
        BagScores {
            pair: pair(i),
            labels: labels.iter().copied().collect(),
            noisy_label: false,
            scores,
            argmax,
        }
    }

    #[test]
    fn pr_curve_two_predictions() {
        let gold: BTreeMap<PairId, BTreeSet<usize>> =
            [(pair(0), [1].into()), (pair(1), [2].into()), (pair(2), [1].into())].into();
        let preds = vec![
            Prediction { pair: pair(0), relation: 1, score: 0.9 },
            Prediction { pair: pair(1), relation: 1, score: 0.8 },
        ];
        let rp = RankedPredictions::new(preds, gold);
        let pts = pr_curve(&rp).unwrap();
        assert_eq!(pts[0], PrPoint { precision: 1.0, recall: 1.0 / 3.0 });
        assert_eq!(pts[1], PrPoint { precision: 0.5, recall: 1.0 / 3.0 });
        assert_eq!(precision_at_n(&rp, 2).unwrap(), 0.5);
        assert_eq!(precision_at_n(&rp, 1).unwrap(), 1.0);
        assert!(precision_at_n(&rp, 3).is_err());
    }

    #[test]
    fn perfect_ranking_ends_at_one_one() {
        let bags = vec![scored(0, &[1], vec![0.1, 0.9, 0.0]), scored(1, &[2], vec![0.1, 0.0, 0.8])];
        let rp = RankedPredictions::from_bag_scores(&bags);
        let pts = pr_curve(&rp).unwrap();
        assert_eq!(pts[1], PrPoint { precision: 1.0, recall: 1.0 });
        assert_eq!(curve_auc(&pts).unwrap(), 1.0);
        assert_eq!(auc(&pts).unwrap(), 0.5);
        let empty = RankedPredictions::new(vec![], BTreeMap::new());
        assert!(pr_curve(&empty).is_err());
    }

    #[test]
    fn ranking_ties_are_deterministic() {
        let preds = vec![
            Prediction { pair: pair(2), relation: 1, score: 0.5 },
            Prediction { pair: pair(1), relation: 2, score: 0.5 },
            Prediction { pair: pair(1), relation: 1, score: 0.5 },
            Prediction { pair: pair(0), relation: 0, score: 0.9 },
        ];
        let rp = RankedPredictions::new(preds, BTreeMap::new());
        let order: Vec<(PairId, usize)> = rp.predictions().iter().map(|p| (p.pair.clone(), p.relation)).collect();
        assert_eq!(order, vec![(pair(1), 1), (pair(1), 2), (pair(2), 1)]);
    }

    #[test]
    fn auc_examples() {
        let flat = [PrPoint { precision: 1.0, recall: 0.0 }, PrPoint { precision: 1.0, recall: 1.0 }];
        assert_eq!(auc(&flat).unwrap(), 1.0);
        let tri = [PrPoint { precision: 1.0, recall: 0.0 }, PrPoint { precision: 0.0, recall: 1.0 }];
        assert_eq!(auc(&tri).unwrap(), 0.5);
        assert!(auc(&flat[..1]).is_err());
        let unsorted = [flat[1], flat[0]];
        assert!(auc(&unsorted).is_err());
    }

    #[test]
    fn hits_examples() {
        let bucket = LongTailBucket { threshold: 100, relations: [1].into() };
        let bags = vec![scored(0, &[1], vec![0.0, 0.9, 0.1])];
        assert_eq!(hits_at_k_macro(&bags, &bucket, 10).unwrap(), 1.0);

        let bucket = LongTailBucket { threshold: 100, relations: [1, 2].into() };
        let bags = vec![scored(0, &[1], vec![0.0, 0.9, 0.1]), scored(1, &[2], vec![0.0, 0.9, 0.1])];
        assert_eq!(hits_at_k_macro(&bags, &bucket, 1).unwrap(), 0.5);

        let empty = LongTailBucket { threshold: 100, relations: BTreeSet::new() };
        assert!(hits_at_k_macro(&bags, &empty, 1).is_err());
    }

    #[test]
    fn bucket_uses_training_counts_and_skips_na() {
        let b = LongTailBucket::from_counts(&[5000, 20, 150, 400, 0], 200);
        assert_eq!(b.relations, [1, 2, 4].into());
        let b = LongTailBucket::from_counts(&[5000, 20, 150, 400, 0], 100);
        assert_eq!(b.relations, [1, 4].into());
    }

    #[test]
    fn aacc_examples() {
        assert_eq!(attention_accuracy(&[vec![true, false]], &[vec![0.7, 0.3]]).unwrap(), 1.0);
        assert_eq!(attention_accuracy(&[vec![true, false]], &[vec![0.5, 0.5]]).unwrap(), 0.0);
        let w = [vec![0.4, 0.1, 0.3, 0.2]];
        assert_eq!(attention_accuracy(&[vec![true, false, false, true]], &w).unwrap(), 0.75);
        assert_eq!(attention_accuracy(&[vec![true, true, false, false]], &w).unwrap(), 0.5);
        assert!(attention_accuracy(&[vec![true, true]], &[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn f1_examples() {
        let perfect = vec![scored(0, &[1], vec![0.1, 0.8, 0.1]), scored(1, &[2], vec![0.1, 0.1, 0.8])];
        assert_eq!(micro_f1(&perfect, F1Rule::Argmax).f1, 1.0);

        let mut zero = perfect.clone();
        zero.iter_mut().for_each(|b| b.noisy_label = true);
        let r = micro_f1(&zero, F1Rule::Argmax);
        assert_eq!((r.precision, r.f1), (0.0, 0.0));

        // 4 bags: 2 TP, 1 FP (bag 2 predicts 1, gold NA), 1 FN (bag 3 predicts NA)
        let bags = vec![
            scored(0, &[1], vec![0.1, 0.8, 0.1]),
            scored(1, &[2], vec![0.1, 0.1, 0.8]),
            scored(2, &[0], vec![0.1, 0.8, 0.1]),
            scored(3, &[2], vec![0.8, 0.1, 0.1]),
        ];
        let r = micro_f1(&bags, F1Rule::Argmax);
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.recall, 2.0 / 3.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);

        let none = vec![scored(0, &[1], vec![0.9, 0.05, 0.05])];
        assert_eq!(micro_f1(&none, F1Rule::Argmax).f1, 0.0);
        assert_eq!(micro_f1(&bags, F1Rule::Threshold(0.5)), r);
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("one".parse::<SizeSplit>().unwrap(), SizeSplit::One);
        assert_eq!("Zero".parse::<ValiditySplit>().unwrap(), ValiditySplit::Zero);
        assert!("zero".parse::<SizeSplit>().is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = pr_curve_csv(&[PrPoint { precision: 1.0, recall: 0.5 }]);
        assert_eq!(csv, "recall,precision\n0.5,1\n");
    }
}
