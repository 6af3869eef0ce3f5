//! Seeded synthetic corpora with known structure.
//!
//! * [`overfit_fixture`]: NA plus four relations, each with its own cue word
//!   and type pair; 200 training bags.
//! * [`long_tail_world`]: two relation families that share a family cue word
//!   and are told apart only by entity types. A few relations per family get
//!   very little training data.
//! * [`distractor_fixture`]: bags mixing conforming sentences with
//!   type-violating, cue-less distractors annotated `valid: false`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::constraint_graph::{build_constraint_graph, ConstraintGraph, NamedConstraint};
use crate::corpus::{write_instances, Instance, Mention, Schema, NA_RELATION, OTHERS_TYPE};
use crate::error::Result;
use crate::numerics::Rng;

/// A generated dataset with its own schema and constraint triples.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub schema: Schema,
    /// `(head_type, relation, tail_type)` by name.
    pub constraints: Vec<(String, String, String)>,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl SyntheticWorld {
    pub fn constraints_tsv(&self) -> String {
        let mut out = String::new();
        for (h, r, t) in &self.constraints {
            out.push_str(&format!("{h}\t{r}\t{t}\n"));
        }
        out
    }

    pub fn named_constraints(&self) -> Vec<NamedConstraint> {
        self.constraints
            .iter()
            .enumerate()
            .map(|(i, (h, r, t))| NamedConstraint {
                head_type: h.clone(),
                relation: r.clone(),
                tail_type: t.clone(),
                line: i + 1,
            })
            .collect()
    }

    pub fn graph(&self) -> Result<ConstraintGraph> {
        Ok(build_constraint_graph(&self.schema, &self.named_constraints())?.0)
    }

    /// Writes `schema.json`, `constraints.tsv`, `train.jsonl` and `test.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.schema.save(&dir.join("schema.json"))?;
        fs::write(dir.join("constraints.tsv"), self.constraints_tsv())?;
        for (name, set) in [("train.jsonl", &self.train), ("test.jsonl", &self.test)] {
            let mut w = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
            write_instances(&mut w, set, &self.schema)?;
            w.flush()?;
        }
        Ok(())
    }
}

const FILLERS: &[&str] = &[
    "the", "a", "of", "in", "on", "and", "was", "is", "for", "with", "at", "by", "from", "that", "this",
    "said", "year", "new", "after", "when", "also", "its", "has", "had", "were", "which", "their", "over",
    "some", "more",
];

/// One sentence with the two entity tokens and an optional cue word placed at
/// distinct random positions among filler words.
fn sentence(rng: &mut Rng, head: &str, tail: &str, cue: Option<&str>, head_type: usize, tail_type: usize) -> Instance {
    let len = 6 + rng.below(7);
    let slots = rng.sample_indices(len, if cue.is_some() { 3 } else { 2 });
    let mut tokens: Vec<String> = (0..len).map(|_| FILLERS[rng.below(FILLERS.len())].to_string()).collect();
    tokens[slots[0]] = head.to_string();
    tokens[slots[1]] = tail.to_string();
    if let Some(c) = cue {
        tokens[slots[2]] = c.to_string();
    }
    Instance {
        tokens,
        head: Mention {
            text: head.to_string(),
            start: slots[0],
            end: slots[0] + 1,
            type_id: head_type,
        },
        tail: Mention {
            text: tail.to_string(),
            start: slots[1],
            end: slots[1] + 1,
            type_id: tail_type,
        },
        relation: None,
        valid: None,
    }
}

fn names(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

const OVERFIT_TYPES: &[&str] = &["PERSON", "ORG", "GPE", "LOC", OTHERS_TYPE];
/// Relation name with its head and tail type ids in [`OVERFIT_TYPES`].
const OVERFIT_RELATIONS: &[(&str, usize, usize)] =
    &[("founded", 0, 1), ("born_in", 0, 2), ("located_in", 1, 2), ("contains", 2, 3)];

fn overfit_schema() -> (Schema, Vec<(String, String, String)>) {
    let mut relations = vec![NA_RELATION.to_string()];
    relations.extend(OVERFIT_RELATIONS.iter().map(|r| r.0.to_string()));
    let schema = Schema::new(relations, names(OVERFIT_TYPES)).expect("static schema is valid");
    let constraints = OVERFIT_RELATIONS
        .iter()
        .map(|&(r, h, t)| (OVERFIT_TYPES[h].to_string(), r.to_string(), OVERFIT_TYPES[t].to_string()))
        .collect();
    (schema, constraints)
}

fn overfit_bags(rng: &mut Rng, per_relation: usize, prefix: &str) -> Vec<Instance> {
    let n_types = OVERFIT_TYPES.len();
    let mut out = Vec::new();
    let mut bag = 0;
    for r in 0..=OVERFIT_RELATIONS.len() {
        let cue = if r == 0 { "cue_none".to_string() } else { format!("cue_{}", OVERFIT_RELATIONS[r - 1].0) };
        for _ in 0..per_relation {
            let (ht, tt) = if r == 0 {
                (rng.below(n_types), rng.below(n_types))
            } else {
                (OVERFIT_RELATIONS[r - 1].1, OVERFIT_RELATIONS[r - 1].2)
            };
            let head = format!("{prefix}h{bag}");
            let tail = format!("{prefix}t{bag}");
            for _ in 0..1 + rng.below(4) {
                let mut inst = sentence(rng, &head, &tail, Some(&cue), ht, tt);
                inst.relation = Some(r);
                out.push(inst);
            }
            bag += 1;
        }
    }
    out
}

/// NA plus four relations with distinct cue words and type pairs: 40
/// training bags per relation (200 total) and 20 test bags per relation.
/// Bags hold 1 to 4 sentences.
pub fn overfit_fixture(seed: u64) -> SyntheticWorld {
    let mut rng = Rng::new(seed);
    let (schema, constraints) = overfit_schema();
    let train = overfit_bags(&mut rng, 40, "");
    let test = overfit_bags(&mut rng, 20, "x");
    SyntheticWorld {
        schema,
        constraints,
        train,
        test,
    }
}

/// Sizes for [`long_tail_world`].
#[derive(Clone, Debug)]
pub struct LongTailConfig {
    pub families: usize,
    pub relations_per_family: usize,
    /// The last `tail_relations` of each family are long-tailed.
    pub tail_relations: usize,
    pub entity_types: usize,
    pub head_bags: usize,
    pub tail_bags: usize,
    pub test_bags: usize,
    pub na_train_bags: usize,
    pub na_test_bags: usize,
    pub max_bag_size: usize,
}

impl Default for LongTailConfig {
    fn default() -> Self {
        LongTailConfig {
            families: 2,
            relations_per_family: 14,
            tail_relations: 5,
            entity_types: 8,
            head_bags: 40,
            tail_bags: 8,
            test_bags: 6,
            na_train_bags: 60,
            na_test_bags: 30,
            max_bag_size: 3,
        }
    }
}

impl LongTailConfig {
    /// Relation ids (NA excluded) that get `tail_bags` training bags.
    pub fn tail_relation_ids(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for f in 0..self.families {
            let first = 1 + f * self.relations_per_family;
            let head = self.relations_per_family - self.tail_relations;
            out.extend(first + head..first + self.relations_per_family);
        }
        out
    }
}

/// Relations come in families. Members of a family share one cue word and
/// differ only in their (head type, tail type) pair; the same pairs are
/// reused across families. Entity strings never repeat across bags, so a
/// model that ignores entity types cannot tell family members apart.
pub fn long_tail_world(seed: u64, cfg: &LongTailConfig) -> SyntheticWorld {
    let mut rng = Rng::new(seed);
    let mut types: Vec<String> = (0..cfg.entity_types).map(|i| format!("T{i}")).collect();
    types.push(OTHERS_TYPE.to_string());
    let n_types = types.len();

    let mut pairs: Vec<(usize, usize)> = (0..cfg.entity_types)
        .flat_map(|h| (0..cfg.entity_types).map(move |t| (h, t)))
        .filter(|(h, t)| h != t)
        .collect();
    rng.shuffle(&mut pairs);
    assert!(pairs.len() >= cfg.relations_per_family, "not enough type pairs");
    pairs.truncate(cfg.relations_per_family);

    let mut relations = vec![NA_RELATION.to_string()];
    let mut constraints = Vec::new();
    // (family, type pair) per non-NA relation id - 1
    let mut members = Vec::new();
    for f in 0..cfg.families {
        for (i, &(h, t)) in pairs.iter().enumerate() {
            let name = format!("fam{f}/r{i:02}");
            constraints.push((types[h].clone(), name.clone(), types[t].clone()));
            relations.push(name);
            members.push((f, h, t));
        }
    }
    let schema = Schema::new(relations, types).expect("generated schema is valid");
    let tail: Vec<usize> = cfg.tail_relation_ids();

    let emit = |rng: &mut Rng, out: &mut Vec<Instance>, prefix: &str, bag: usize, r: usize| {
        let head = format!("{prefix}h{bag}");
        let tail_ent = format!("{prefix}t{bag}");
        let (cue, ht, tt) = if r == 0 {
            (None, rng.below(n_types), rng.below(n_types))
        } else {
            let (f, h, t) = members[r - 1];
            (Some(format!("cue_fam{f}")), h, t)
        };
        for _ in 0..1 + rng.below(cfg.max_bag_size) {
            let mut inst = sentence(rng, &head, &tail_ent, cue.as_deref(), ht, tt);
            inst.relation = Some(r);
            out.push(inst);
        }
    };

    let n_r = schema.num_relations();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut bag = 0;
    for r in 0..n_r {
        let count = match r {
            0 => cfg.na_train_bags,
            _ if tail.contains(&r) => cfg.tail_bags,
            _ => cfg.head_bags,
        };
        for _ in 0..count {
            emit(&mut rng, &mut train, "", bag, r);
            bag += 1;
        }
    }
    for r in 0..n_r {
        let count = if r == 0 { cfg.na_test_bags } else { cfg.test_bags };
        for _ in 0..count {
            emit(&mut rng, &mut test, "x", bag, r);
            bag += 1;
        }
    }
    SyntheticWorld {
        schema,
        constraints,
        train,
        test,
    }
}

/// Overfit-style bags where each non-NA bag holds 2 or 3 conforming
/// sentences (correct types, relation cue, `valid: true`) and 1 or 2
/// distractors whose type pair violates the relation's constraint and which
/// carry no cue (`valid: false`). NA bags are unannotated.
pub fn distractor_fixture(seed: u64, train_per_relation: usize, test_per_relation: usize) -> SyntheticWorld {
    let mut rng = Rng::new(seed);
    let (schema, constraints) = overfit_schema();
    let n_types = OVERFIT_TYPES.len();
    let make = |rng: &mut Rng, per_relation: usize, prefix: &str| {
        let mut out = Vec::new();
        let mut bag = 0;
        for r in 0..=OVERFIT_RELATIONS.len() {
            for _ in 0..per_relation {
                let head = format!("{prefix}h{bag}");
                let tail = format!("{prefix}t{bag}");
                bag += 1;
                if r == 0 {
                    for _ in 0..1 + rng.below(3) {
                        let (ht, tt) = (rng.below(n_types), rng.below(n_types));
                        let mut inst = sentence(rng, &head, &tail, Some("cue_none"), ht, tt);
                        inst.relation = Some(0);
                        out.push(inst);
                    }
                    continue;
                }
                let (name, ht, tt) = OVERFIT_RELATIONS[r - 1];
                let cue = format!("cue_{name}");
                let mut bag_instances = Vec::new();
                for _ in 0..2 + rng.below(2) {
                    let mut inst = sentence(rng, &head, &tail, Some(&cue), ht, tt);
                    inst.valid = Some(true);
                    bag_instances.push(inst);
                }
                for _ in 0..1 + rng.below(2) {
                    let (dh, dt) = loop {
                        let p = (rng.below(n_types), rng.below(n_types));
                        if p.0 != ht || p.1 != tt {
                            break p;
                        }
                    };
                    let mut inst = sentence(rng, &head, &tail, None, dh, dt);
                    inst.valid = Some(false);
                    bag_instances.push(inst);
                }
                rng.shuffle(&mut bag_instances);
                for mut inst in bag_instances {
                    inst.relation = Some(r);
                    out.push(inst);
                }
            }
        }
        out
    };
    let train = make(&mut rng, train_per_relation, "");
    let test = make(&mut rng, test_per_relation, "x");
    SyntheticWorld {
        schema,
        constraints,
        train,
        test,
    }
}
