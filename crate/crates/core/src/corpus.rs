//! Reading datasets into bags and encoding sentences as index sequences.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"tokens": ["Bill_Gates", "founded", "Microsoft"],
//!  "head": {"text": "Bill_Gates", "start": 0, "end": 1, "type": "PERSON"},
//!  "tail": {"text": "Microsoft", "start": 2, "end": 3, "type": "ORG"},
//!  "relation": "/business/company/founders", "valid": true}
//! ```
//!
//! Spans are half-open token ranges. `relation` may be omitted in evaluation
//! files (the instance is then treated as NA); `valid` is an optional
//! per-sentence annotation used by the validity splits.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{xavier_init, Rng, Tensor};

pub const NA_RELATION: &str = "NA";
/// Index of the NA relation in every schema.
pub const NA_ID: usize = 0;
pub const OTHERS_TYPE: &str = "Others";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";
pub const DEFAULT_MAX_LEN: usize = 120;

/// Relation and entity-type inventories. Relation index 0 is always NA.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub relations: Vec<String>,
    pub types: Vec<String>,
}

impl Schema {
    pub fn new(relations: Vec<String>, types: Vec<String>) -> Result<Self> {
        let schema = Schema { relations, types };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.relations.first().map(String::as_str) != Some(NA_RELATION) {
            return Err(Error::schema("relation 0 must be NA"));
        }
        if !self.types.iter().any(|t| t == OTHERS_TYPE) {
            return Err(Error::schema("type inventory must contain Others"));
        }
        for (what, names) in [("relation", &self.relations), ("type", &self.types)] {
            let unique: BTreeSet<&String> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(Error::schema(format!("duplicate {what} name")));
            }
        }
        Ok(())
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    pub fn known_type_id(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    /// Unrecognized type names fall back to Others.
    pub fn type_id(&self, name: &str) -> usize {
        self.known_type_id(name).unwrap_or_else(|| self.others_id())
    }

    pub fn others_id(&self) -> usize {
        self.types
            .iter()
            .position(|t| t == OTHERS_TYPE)
            .expect("validated schema has Others")
    }

    /// Stable fingerprint of the relation and type inventories.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.relations {
            h.update(r.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for t in &self.types {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub type_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub head: Mention,
    pub tail: Mention,
    pub relation: Option<usize>,
    pub valid: Option<bool>,
}

impl Instance {
    pub fn pair(&self) -> PairId {
        PairId::new(&self.head.text, &self.tail.text)
    }

    pub fn head_type(&self) -> usize {
        self.head.type_id
    }

    pub fn tail_type(&self) -> usize {
        self.tail.type_id
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("empty token list".into());
        }
        for (name, m) in [("head", &self.head), ("tail", &self.tail)] {
            if m.start >= m.end || m.end > n {
                return Err(format!(
                    "{name} span {}..{} outside sentence of {n} tokens",
                    m.start, m.end
                ));
            }
        }
        if (self.head.start, self.head.end) == (self.tail.start, self.tail.end) {
            return Err("head and tail spans coincide".into());
        }
        Ok(())
    }
}

/// Entity pair key `(head, tail)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairId {
    pub head: String,
    pub tail: String,
}

impl PairId {
    pub fn new(head: &str, tail: &str) -> Self {
        PairId {
            head: head.to_string(),
            tail: tail.to_string(),
        }
    }
}

impl std::fmt::Display for PairId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.head, self.tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BagMode {
    /// One bag per (pair, relation); each bag has exactly one label.
    Train,
    /// One bag per pair; the label set gathers every instance label.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub pair: PairId,
    pub instances: Vec<Instance>,
    pub labels: BTreeSet<usize>,
    /// Set by the zero-validity split: no sentence supports the labels, so
    /// predicting them counts as an error.
    pub noisy_label: bool,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// The single training label.
    pub fn label(&self) -> Option<usize> {
        if self.labels.len() == 1 {
            self.labels.first().copied()
        } else {
            None
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MentionRecord {
    text: String,
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    type_name: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    head: MentionRecord,
    tail: MentionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    valid: Option<bool>,
}

/// Parses one record per non-blank line.
pub fn parse_instances<R: BufRead>(reader: R, schema: &Schema, source_name: &str) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: line_no,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let relation = match &rec.relation {
            None => None,
            Some(name) => Some(schema.relation_id(name).ok_or_else(|| {
                Error::schema(format!(
                    "{source_name}:{line_no}: unknown relation {name:?}"
                ))
            })?),
        };
        let mention = |m: MentionRecord| Mention {
            type_id: schema.type_id(&m.type_name),
            text: m.text,
            start: m.start,
            end: m.end,
        };
        let inst = Instance {
            tokens: rec.tokens,
            head: mention(rec.head),
            tail: mention(rec.tail),
            relation,
            valid: rec.valid,
        };
        inst.validate().map_err(parse_err)?;
        out.push(inst);
    }
    Ok(out)
}

pub fn parse_dataset(path: &Path, schema: &Schema, mode: BagMode) -> Result<Vec<Bag>> {
    let file = File::open(path)?;
    let instances = parse_instances(BufReader::new(file), schema, &path.display().to_string())?;
    group_bags(instances, mode)
}

/// Writes bags back out as line-delimited records, one per instance.
pub fn write_instances<'a, W: Write>(
    writer: &mut W,
    instances: impl IntoIterator<Item = &'a Instance>,
    schema: &Schema,
) -> Result<()> {
    for inst in instances {
        let mention = |m: &Mention| MentionRecord {
            text: m.text.clone(),
            start: m.start,
            end: m.end,
            type_name: schema.types[m.type_id].clone(),
        };
        let rec = Record {
            tokens: inst.tokens.clone(),
            head: mention(&inst.head),
            tail: mention(&inst.tail),
            relation: inst.relation.map(|r| schema.relations[r].clone()),
            valid: inst.valid,
        };
        serde_json::to_writer(&mut *writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, bags: &[Bag], schema: &Schema) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    write_instances(&mut w, bags.iter().flat_map(|b| &b.instances), schema)?;
    w.flush()?;
    Ok(())
}

/// Groups instances into bags, ordered by first occurrence of each key.
pub fn group_bags(instances: Vec<Instance>, mode: BagMode) -> Result<Vec<Bag>> {
    let mut index: HashMap<(PairId, Option<usize>), usize> = HashMap::new();
    let mut bags: Vec<Bag> = Vec::new();
    for (i, inst) in instances.into_iter().enumerate() {
        let key = match mode {
            BagMode::Train => {
                let r = inst.relation.ok_or_else(|| {
                    Error::schema(format!("training instance {i} has no relation label"))
                })?;
                (inst.pair(), Some(r))
            }
            BagMode::Eval => (inst.pair(), None),
        };
        let label = inst.relation.unwrap_or(0);
        let slot = *index.entry(key).or_insert_with(|| {
            bags.push(Bag {
                pair: inst.pair(),
                instances: Vec::new(),
                labels: BTreeSet::new(),
                noisy_label: false,
            });
            bags.len() - 1
        });
        bags[slot].labels.insert(label);
        bags[slot].instances.push(inst);
    }
    Ok(bags)
}

/// Word inventory plus initial word and position embedding tables.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    pub word_embeddings: Tensor,
    /// Relative-distance table for the head entity, `(2·max_len+1) × d_p`.
    pub head_positions: Tensor,
    /// Relative-distance table for the tail entity.
    pub tail_positions: Tensor,
    pub max_len: usize,
}

impl Vocabulary {
    /// Rebuilds the word index from a stored word list; tables are zeroed and
    /// are expected to be overwritten from a checkpoint.
    pub fn from_words(words: Vec<String>, d_w: usize, d_p: usize, max_len: usize) -> Result<Self> {
        if words.len() < 2 || words[PAD_ID] != PAD_TOKEN || words[UNK_ID] != UNK_TOKEN {
            return Err(Error::schema("word list must start with <PAD>, <UNK>"));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let table = 2 * max_len + 1;
        Ok(Vocabulary {
            word_embeddings: Tensor::zeros(&[words.len(), d_w]),
            head_positions: Tensor::zeros(&[table, d_p]),
            tail_positions: Tensor::zeros(&[table, d_p]),
            words,
            index,
            max_len,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word_dim(&self) -> usize {
        self.word_embeddings.cols()
    }

    pub fn position_dim(&self) -> usize {
        self.head_positions.cols()
    }
}

/// Reads `word v1 … v_d` lines. A leading `count dim` header line is skipped.
pub fn load_pretrained(path: &Path, d_w: usize) -> Result<HashMap<String, Vec<f64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    let source = path.display().to_string();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if idx == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != d_w {
            return Err(Error::schema(format!(
                "{source}:{}: embedding width {} but word size is {d_w}",
                idx + 1,
                values.len()
            )));
        }
        let vec = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                source_name: source.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        out.insert(word.to_string(), vec);
    }
    Ok(out)
}

/// Collects corpus words (first-occurrence order) and initializes embeddings.
/// Pretrained vectors override the Xavier rows; PAD is the zero vector.
pub fn build_vocabulary(
    bags: &[Bag],
    pretrained: Option<&HashMap<String, Vec<f64>>>,
    d_w: usize,
    d_p: usize,
    max_len: usize,
    rng: &mut Rng,
) -> Result<Vocabulary> {
    if max_len == 0 {
        return Err(Error::domain("max_len must be at least 1"));
    }
    if let Some(vectors) = pretrained {
        if let Some(v) = vectors.values().find(|v| v.len() != d_w) {
            return Err(Error::schema(format!(
                "pretrained width {} differs from word size {d_w}",
                v.len()
            )));
        }
    }
    let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut index: HashMap<String, usize> = HashMap::new();
    index.insert(PAD_TOKEN.into(), PAD_ID);
    index.insert(UNK_TOKEN.into(), UNK_ID);
    for tok in bags.iter().flat_map(|b| &b.instances).flat_map(|i| &i.tokens) {
        if !index.contains_key(tok) {
            index.insert(tok.clone(), words.len());
            words.push(tok.clone());
        }
    }
    let mut word_embeddings = xavier_init(&[words.len(), d_w], rng)?;
    word_embeddings.row_mut(PAD_ID).fill(0.0);
    if let Some(vectors) = pretrained {
        for (i, w) in words.iter().enumerate().skip(2) {
            if let Some(v) = vectors.get(w) {
                word_embeddings.row_mut(i).copy_from_slice(v);
            }
        }
    }
    let table = 2 * max_len + 1;
    let head_positions = xavier_init(&[table, d_p], rng)?;
    let tail_positions = xavier_init(&[table, d_p], rng)?;
    Ok(Vocabulary {
        words,
        index,
        word_embeddings,
        head_positions,
        tail_positions,
        max_len,
    })
}

/// Index form of one sentence, padded to `max_len`. Only the first `len`
/// positions are read by the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInstance {
    pub token_ids: Vec<usize>,
    pub head_offsets: Vec<usize>,
    pub tail_offsets: Vec<usize>,
    pub len: usize,
    pub head_pos: usize,
    pub tail_pos: usize,
    pub head_type: usize,
    pub tail_type: usize,
}

/// Maps a signed distance into `[0, 2·max_len]`.
pub fn position_index(distance: isize, max_len: usize) -> usize {
    let m = max_len as isize;
    (distance.clamp(-m, m) + m) as usize
}

pub fn encode_instance(inst: &Instance, vocab: &Vocabulary, max_len: usize) -> Result<EncodedInstance> {
    if inst.tokens.is_empty() {
        return Err(Error::domain("cannot encode an empty sentence"));
    }
    if max_len == 0 {
        return Err(Error::domain("max_len must be at least 1"));
    }
    let len = inst.tokens.len().min(max_len);
    let head_pos = inst.head.start.min(max_len - 1);
    let tail_pos = inst.tail.start.min(max_len - 1);
    let mut token_ids = vec![PAD_ID; max_len];
    for (slot, tok) in token_ids.iter_mut().zip(&inst.tokens) {
        *slot = vocab.id(tok);
    }
    let offsets = |anchor: usize| -> Vec<usize> {
        (0..max_len)
            .map(|i| position_index(i as isize - anchor as isize, max_len))
            .collect()
    };
    Ok(EncodedInstance {
        token_ids,
        head_offsets: offsets(head_pos),
        tail_offsets: offsets(tail_pos),
        len,
        head_pos,
        tail_pos,
        head_type: inst.head.type_id,
        tail_type: inst.tail.type_id,
    })
}

/// A bag in index form, ready for the model.
#[derive(Clone, Debug)]
pub struct EncodedBag {
    pub pair: PairId,
    pub instances: Vec<EncodedInstance>,
    pub labels: BTreeSet<usize>,
    pub noisy_label: bool,
    /// Per-instance validity annotation, when every instance carries one.
    pub valid_flags: Option<Vec<bool>>,
}

impl EncodedBag {
    pub fn label(&self) -> Option<usize> {
        if self.labels.len() == 1 {
            self.labels.first().copied()
        } else {
            None
        }
    }
}

pub fn encode_bag(bag: &Bag, vocab: &Vocabulary, max_len: usize) -> Result<EncodedBag> {
    if bag.instances.is_empty() {
        return Err(Error::domain(format!("bag {} is empty", bag.pair)));
    }
    let instances = bag
        .instances
        .iter()
        .map(|i| encode_instance(i, vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    let valid_flags = bag.instances.iter().map(|i| i.valid).collect();
    Ok(EncodedBag {
        pair: bag.pair.clone(),
        instances,
        labels: bag.labels.clone(),
        noisy_label: bag.noisy_label,
        valid_flags,
    })
}

pub fn encode_bags(bags: &[Bag], vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedBag>> {
    bags.iter().map(|b| encode_bag(b, vocab, max_len)).collect()
}

/// Training-instance count per relation id.
pub fn relation_instance_counts(bags: &[Bag], num_relations: usize) -> Vec<usize> {
    let mut counts = vec![0; num_relations];
    for inst in bags.iter().flat_map(|b| &b.instances) {
        if let Some(r) = inst.relation {
            if r < num_relations {
                counts[r] += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn schema() -> Schema {
        Schema::new(
            vec!["NA".into(), "founded".into(), "born_in".into()],
            vec!["PERSON".into(), "ORG".into(), "GPE".into(), "Others".into()],
        )
        .unwrap()
    }

    fn line(h: &str, t: &str, rel: &str) -> String {
        format!(
            r#"{{"tokens":["{h}","met","{t}","today"],"head":{{"text":"{h}","start":0,"end":1,"type":"PERSON"}},"tail":{{"text":"{t}","start":2,"end":3,"type":"ORG"}},"relation":"{rel}"}}"#
        )
    }

    fn parse(text: &str, mode: BagMode) -> Result<Vec<Bag>> {
        let insts = parse_instances(text.as_bytes(), &schema(), "fixture")?;
        group_bags(insts, mode)
    }

    #[test]
    fn same_triple_makes_one_bag() {
        let text = format!("{}\n{}\n", line("a", "b", "founded"), line("a", "b", "founded"));
        let bags = parse(&text, BagMode::Train).unwrap();
        assert_eq!(bags.len(), 1);
        assert_eq!(bags[0].len(), 2);
        assert_eq!(bags[0].label(), Some(1));
    }

    #[test]
    fn missing_tail_type_reports_line() {
        let bad = line("a", "b", "founded").replace(r#","type":"ORG""#, "");
        let text = format!("{}\n{}\n", line("a", "b", "founded"), bad);
        match parse(&text, BagMode::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_relation_is_schema_error() {
        let text = line("a", "b", "married_to");
        assert!(matches!(parse(&text, BagMode::Train), Err(Error::Schema(_))));
    }

    #[test]
    fn eval_mode_keys_by_pair() {
        let text = [
            line("a", "b", "founded"),
            line("c", "d", "NA"),
            line("a", "b", "born_in"),
            line("e", "f", "founded"),
        ]
        .join("\n");
        let bags = parse(&text, BagMode::Eval).unwrap();
        assert_eq!(bags.len(), 3);
        assert_eq!(bags[0].labels, BTreeSet::from([1, 2]));
        let train = parse(&text, BagMode::Train).unwrap();
        assert_eq!(train.len(), 4);
    }

    #[test]
    fn grouping_examples() {
        let text = format!("{}\n{}", line("a", "b", "founded"), line("a", "b", "born_in"));
        assert_eq!(parse(&text, BagMode::Train).unwrap().len(), 2);
        let eval = parse(&text, BagMode::Eval).unwrap();
        assert_eq!(eval.len(), 1);
        assert_eq!(eval[0].labels.len(), 2);
        let single = parse(&line("x", "y", "NA"), BagMode::Train).unwrap();
        assert_eq!(single[0].len(), 1);
    }

    #[test]
    fn unlabeled_train_instance_is_rejected() {
        let text = line("a", "b", "founded").replace(r#","relation":"founded""#, "");
        assert!(matches!(parse(&text, BagMode::Train), Err(Error::Schema(_))));
        let eval = parse(&text, BagMode::Eval).unwrap();
        assert_eq!(eval[0].labels, BTreeSet::from([0]));
    }

    #[test]
    fn unknown_type_maps_to_others() {
        let text = line("a", "b", "founded").replace("\"ORG\"", "\"SPACESHIP\"");
        let bags = parse(&text, BagMode::Train).unwrap();
        assert_eq!(bags[0].instances[0].tail.type_id, schema().others_id());
    }

    #[test]
    fn bad_spans_are_rejected() {
        let text = line("a", "b", "founded").replace(r#""start":2,"end":3"#, r#""start":3,"end":9"#);
        assert!(matches!(parse(&text, BagMode::Train), Err(Error::Parse { .. })));
        let same = line("a", "b", "founded").replace(r#""start":2,"end":3"#, r#""start":0,"end":1"#);
        assert!(matches!(parse(&same, BagMode::Train), Err(Error::Parse { .. })));
    }

    fn pretrained_cat() -> HashMap<String, Vec<f64>> {
        HashMap::from([("cat".to_string(), vec![0.1; 50])])
    }

    fn bag_of(tokens: &[&str]) -> Bag {
        let inst = Instance {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            head: Mention { text: tokens[0].into(), start: 0, end: 1, type_id: 0 },
            tail: Mention { text: tokens[1].into(), start: 1, end: 2, type_id: 1 },
            relation: Some(1),
            valid: None,
        };
        group_bags(vec![inst], BagMode::Train).unwrap().remove(0)
    }

    #[test]
    fn vocabulary_rows() {
        let bags = vec![bag_of(&["cat", "dog", "sat"])];
        let vocab = build_vocabulary(&bags, Some(&pretrained_cat()), 50, 5, 10, &mut Rng::new(0)).unwrap();
        assert_eq!(vocab.word_embeddings.row(vocab.id("cat")), &[0.1; 50][..]);
        let bound = crate::numerics::xavier_bound(vocab.len(), 50);
        assert!(vocab.word_embeddings.row(vocab.id("dog")).iter().all(|v| v.abs() <= bound));
        assert!(vocab.word_embeddings.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert_eq!(vocab.head_positions.shape(), &[21, 5]);
        let err = build_vocabulary(&bags, Some(&pretrained_cat()), 20, 5, 10, &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn pretrained_file_width_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        std::fs::write(&p, "2 3\ncat 0.1 0.2 0.3\ndog 1 2 3\n").unwrap();
        let v = load_pretrained(&p, 3).unwrap();
        assert_eq!(v["dog"], vec![1.0, 2.0, 3.0]);
        assert!(matches!(load_pretrained(&p, 4), Err(Error::Schema(_))));
    }

    #[test]
    fn encode_examples() {
        let bags = vec![bag_of(&["w0", "w1", "w2", "w3", "w4"])];
        let vocab = build_vocabulary(&bags, None, 4, 2, 8, &mut Rng::new(0)).unwrap();
        let mut inst = bags[0].instances[0].clone();
        inst.head.start = 1;
        inst.head.end = 2;
        inst.tail.start = 3;
        inst.tail.end = 4;
        let enc = encode_instance(&inst, &vocab, 8).unwrap();
        assert_eq!(enc.head_offsets[0], 8 - 1);
        assert_eq!(enc.token_ids.len(), 8);
        assert_eq!(enc.len, 5);
        assert_eq!(enc.token_ids[5], PAD_ID);

        inst.tokens[2] = "never-seen".into();
        let enc = encode_instance(&inst, &vocab, 3).unwrap();
        assert_eq!(enc.token_ids.len(), 3);
        assert_eq!(enc.token_ids[2], UNK_ID);
        assert_eq!(enc.tail_pos, 2);

        inst.tokens.clear();
        assert!(matches!(encode_instance(&inst, &vocab, 3), Err(Error::Domain(_))));
    }

    fn arb_instance(rels: usize, types: usize) -> impl Strategy<Value = Instance> {
        (2usize..15, 0usize..rels, 0usize..types, 0usize..types, any::<bool>(), 0u8..3).prop_flat_map(
            move |(n, rel, ht, tt, v, pair)| {
                (Just(n), 0..n, 0..n, Just((rel, ht, tt, v, pair)))
            },
        )
        .prop_filter("distinct spans", |(_, h, t, _)| h != t)
        .prop_map(|(n, h, t, (rel, ht, tt, v, pair))| Instance {
            tokens: (0..n).map(|i| format!("tok{}", (i * 7 + pair as usize) % 11)).collect(),
            head: Mention { text: format!("h{pair}"), start: h, end: h + 1, type_id: ht },
            tail: Mention { text: format!("t{pair}"), start: t, end: t + 1, type_id: tt },
            relation: Some(rel),
            valid: if v { Some(rel % 2 == 0) } else { None },
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(insts in proptest::collection::vec(arb_instance(3, 4), 1..12)) {
            let s = schema();
            let bags = group_bags(insts, BagMode::Train).unwrap();
            let mut buf = Vec::new();
            write_instances(&mut buf, bags.iter().flat_map(|b| &b.instances), &s).unwrap();
            let back = group_bags(parse_instances(&buf[..], &s, "buf").unwrap(), BagMode::Train).unwrap();
            prop_assert_eq!(back, bags);
        }

        #[test]
        fn grouping_is_a_partition(insts in proptest::collection::vec(arb_instance(3, 4), 1..20), eval in any::<bool>()) {
            let total = insts.len();
            let mode = if eval { BagMode::Eval } else { BagMode::Train };
            let bags = group_bags(insts, mode).unwrap();
            prop_assert_eq!(bags.iter().map(Bag::len).sum::<usize>(), total);
            for b in &bags {
                prop_assert!(b.instances.iter().all(|i| i.pair() == b.pair));
            }
        }

        #[test]
        fn encoded_indices_in_range(insts in proptest::collection::vec(arb_instance(3, 4), 1..6), max_len in 1usize..12) {
            let bags = group_bags(insts, BagMode::Eval).unwrap();
            let vocab = build_vocabulary(&bags[..1], None, 3, 2, max_len, &mut Rng::new(1)).unwrap();
            for inst in bags.iter().flat_map(|b| &b.instances) {
                let enc = encode_instance(inst, &vocab, max_len).unwrap();
                prop_assert_eq!(enc.token_ids.len(), max_len);
                prop_assert!(enc.token_ids.iter().all(|&t| t < vocab.len()));
                prop_assert!(enc.head_offsets.iter().chain(&enc.tail_offsets).all(|&p| p <= 2 * max_len));
                prop_assert!(enc.head_pos < max_len && enc.tail_pos < max_len);
                prop_assert!(enc.len <= max_len && enc.len >= 1);
            }
        }
    }
}
