//! Dataset ingestion and the in-memory knowledge graph.
//!
//! Triples are read from three tab-separated files (train, valid, test) that
//! share one vocabulary. Inverse relations are added by [`augment_inverse`],
//! which mirrors every training fact `(h, r, t)` as `(t, r⁻¹, h)` with
//! `r⁻¹ = r + |R|`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// Relation category cutoff on heads-per-tail / tails-per-head.
pub const DEFAULT_CATEGORY_CUTOFF: f64 = 1.5;

/// A single fact `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub h: EntityId,
    pub r: RelationId,
    pub t: EntityId,
}

impl Triple {
    pub const fn new(h: EntityId, r: RelationId, t: EntityId) -> Self {
        Triple { h, r, t }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.h, self.r, self.t)
    }
}

/// Field layout of a dataset line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ColumnOrder {
    /// `head<TAB>relation<TAB>tail`
    #[default]
    Hrt,
    /// `head<TAB>tail<TAB>relation`
    Htr,
}

impl FromStr for ColumnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hrt" => Ok(ColumnOrder::Hrt),
            "htr" => Ok(ColumnOrder::Htr),
            other => Err(Error::config(format!("unknown column order `{other}`"))),
        }
    }
}

/// Entity and relation name tables with dense ids.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entity_names.len() as EntityId;
        self.entity_names.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relation_names.len() as RelationId;
        self.relation_names.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), id);
        id
    }

    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id as usize]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Writes `entity2id.tsv` and `relation2id.tsv` (`name<TAB>id` per line).
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, names) in [
            ("entity2id.tsv", &self.entity_names),
            ("relation2id.tsv", &self.relation_names),
        ] {
            let path = dir.join(file);
            let mut out = String::new();
            for (i, name) in names.iter().enumerate() {
                out.push_str(name);
                out.push('\t');
                out.push_str(&i.to_string());
                out.push('\n');
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Train/valid/test triples over one vocabulary, with adjacency and
/// membership indexes.
///
/// Immutable once built; all queries take `&self`.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    vocab: Vocab,
    n_base_relations: usize,
    augmented: bool,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    out_edges: Vec<Vec<(RelationId, EntityId)>>,
    train_set: HashSet<Triple>,
    known: HashSet<Triple>,
}

impl KnowledgeGraph {
    /// Builds a graph from id triples. Entity and relation names are
    /// synthesised as `e<i>` and `r<i>`.
    pub fn from_ids(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut vocab = Vocab::new();
        for e in 0..n_entities {
            vocab.intern_entity(&format!("e{e}"));
        }
        for r in 0..n_relations {
            vocab.intern_relation(&format!("r{r}"));
        }
        for tr in train.iter().chain(&valid).chain(&test) {
            if tr.h as usize >= n_entities || tr.t as usize >= n_entities {
                return Err(Error::config(format!("triple {tr} references an unknown entity")));
            }
            if tr.r as usize >= n_relations {
                return Err(Error::config(format!("triple {tr} references an unknown relation")));
            }
        }
        Ok(Self::assemble(vocab, train, valid, test))
    }

    /// Builds a graph from named triples, interning names in order of
    /// first appearance across train, valid, test.
    pub fn from_named<S: AsRef<str>>(
        train: &[[S; 3]],
        valid: &[[S; 3]],
        test: &[[S; 3]],
    ) -> Self {
        let mut vocab = Vocab::new();
        let mut intern = |rows: &[[S; 3]]| -> Vec<Triple> {
            rows.iter()
                .map(|[h, r, t]| {
                    let h = vocab.intern_entity(h.as_ref());
                    let r = vocab.intern_relation(r.as_ref());
                    let t = vocab.intern_entity(t.as_ref());
                    Triple::new(h, r, t)
                })
                .collect()
        };
        let train = intern(train);
        let valid = intern(valid);
        let test = intern(test);
        Self::assemble(vocab, train, valid, test)
    }

    fn assemble(vocab: Vocab, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Self {
        let known = train.iter().chain(&valid).chain(&test).copied().collect();
        let train_set = train.iter().copied().collect();
        let mut g = KnowledgeGraph {
            n_base_relations: vocab.n_relations(),
            vocab,
            augmented: false,
            train,
            valid,
            test,
            out_edges: Vec::new(),
            train_set,
            known,
        };
        g.rebuild_adjacency();
        g
    }

    fn rebuild_adjacency(&mut self) {
        let mut out = vec![Vec::new(); self.vocab.n_entities()];
        for tr in &self.train {
            out[tr.h as usize].push((tr.r, tr.t));
        }
        for edges in &mut out {
            edges.sort_unstable();
        }
        self.out_edges = out;
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_entities(&self) -> usize {
        self.vocab.n_entities()
    }

    /// Relation count including inverse relations once augmented.
    pub fn n_relations(&self) -> usize {
        self.vocab.n_relations()
    }

    /// Relation count before inverse augmentation.
    pub fn n_base_relations(&self) -> usize {
        self.n_base_relations
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    /// Training triples in their original orientation (inverse facts excluded).
    pub fn base_train(&self) -> impl Iterator<Item = &Triple> {
        let n = self.n_base_relations as RelationId;
        self.train.iter().filter(move |tr| tr.r < n)
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// Outgoing `(relation, tail)` edges of `e`, sorted, one per training
    /// triple (duplicates retained).
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_edges[e as usize]
    }

    /// Distinct children of `e` via relation `r`, ascending.
    pub fn children(&self, e: EntityId, r: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        let edges = self.out_edges(e);
        let lo = edges.partition_point(|&(rr, _)| rr < r);
        let hi = edges.partition_point(|&(rr, _)| rr <= r);
        let slice = &edges[lo..hi];
        slice
            .iter()
            .enumerate()
            .filter(move |&(i, &(_, t))| i == 0 || slice[i - 1].1 != t)
            .map(|(_, &(_, t))| t)
    }

    /// Distinct relations leaving `e`, ascending.
    pub fn out_relations(&self, e: EntityId) -> impl Iterator<Item = RelationId> + '_ {
        let edges = self.out_edges(e);
        edges
            .iter()
            .enumerate()
            .filter(move |&(i, &(r, _))| i == 0 || edges[i - 1].0 != r)
            .map(|(_, &(r, _))| r)
    }

    /// Whether `tr` is a training fact (inverse facts included once augmented).
    pub fn in_train(&self, tr: &Triple) -> bool {
        self.train_set.contains(tr)
    }

    /// Whether `tr` is a known fact in any split.
    pub fn is_known(&self, tr: &Triple) -> bool {
        self.known.contains(tr)
    }

    /// Number of distinct known facts.
    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    /// Maps a relation to its inverse. Requires an augmented graph.
    pub fn inverse_of(&self, r: RelationId) -> Result<RelationId> {
        if !self.augmented {
            return Err(Error::NotAugmented);
        }
        let n = self.n_base_relations as RelationId;
        Ok(if r < n { r + n } else { r - n })
    }
}

fn read_split(path: &Path, order: ColumnOrder, vocab: &mut Vocab) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                found: fields.len(),
            });
        }
        let (h, r, t) = match order {
            ColumnOrder::Hrt => (fields[0], fields[1], fields[2]),
            ColumnOrder::Htr => (fields[0], fields[2], fields[1]),
        };
        let h = vocab.intern_entity(h);
        let r = vocab.intern_relation(r);
        let t = vocab.intern_entity(t);
        triples.push(Triple::new(h, r, t));
    }
    if triples.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Ok(triples)
}

/// Reads the three splits into a single (non-augmented) graph.
pub fn load_dataset(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    column_order: ColumnOrder,
) -> Result<KnowledgeGraph> {
    let mut vocab = Vocab::new();
    let train = read_split(train_path, column_order, &mut vocab)?;
    let valid = read_split(valid_path, column_order, &mut vocab)?;
    let test = read_split(test_path, column_order, &mut vocab)?;
    Ok(KnowledgeGraph::assemble(vocab, train, valid, test))
}

/// Adds `(t, r⁻¹, h)` for every training fact and registers the inverse of
/// every known fact for filtering.
pub fn augment_inverse(mut g: KnowledgeGraph) -> Result<KnowledgeGraph> {
    if g.augmented {
        return Err(Error::AlreadyAugmented);
    }
    let n = g.n_base_relations;
    for r in 0..n {
        let name = format!("{}^-1", g.vocab.relation_name(r as RelationId));
        if g.vocab.relation_id(&name).is_some() {
            return Err(Error::config(format!(
                "inverse relation name `{name}` collides with an existing relation"
            )));
        }
        g.vocab.intern_relation(&name);
    }
    let n = n as RelationId;
    let flip = |tr: &Triple| Triple::new(tr.t, tr.r + n, tr.h);

    let inverses: Vec<Triple> = g.train.iter().map(flip).collect();
    g.train.extend(inverses);
    g.train_set = g.train.iter().copied().collect();
    let known_inv: Vec<Triple> = g.known.iter().map(flip).collect();
    g.known.extend(known_inv);
    g.augmented = true;
    g.rebuild_adjacency();
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "1-to-1")]
    OneToOne,
    #[serde(rename = "1-to-N")]
    OneToMany,
    #[serde(rename = "N-to-1")]
    ManyToOne,
    #[serde(rename = "N-to-N")]
    ManyToMany,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::OneToOne,
        Category::OneToMany,
        Category::ManyToOne,
        Category::ManyToMany,
    ];

    pub fn from_ratios(hpt: f64, tph: f64, cutoff: f64) -> Self {
        match (hpt < cutoff, tph < cutoff) {
            (true, true) => Category::OneToOne,
            (true, false) => Category::OneToMany,
            (false, true) => Category::ManyToOne,
            (false, false) => Category::ManyToMany,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::OneToOne => "1-to-1",
            Category::OneToMany => "1-to-N",
            Category::ManyToOne => "N-to-1",
            Category::ManyToMany => "N-to-N",
        })
    }
}

/// Mapping property of one relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationCategory {
    pub category: Category,
    /// Mean number of heads per `(r, t)`.
    pub hpt: f64,
    /// Mean number of tails per `(r, h)`.
    pub tph: f64,
}

/// Classifies every base relation from the distinct original-orientation
/// training facts. Relations without training facts map to
/// [`Error::RelationAbsent`].
pub fn classify_relations(
    g: &KnowledgeGraph,
    cutoff: f64,
) -> BTreeMap<RelationId, Result<RelationCategory>> {
    let n = g.n_base_relations();
    let distinct: HashSet<Triple> = g.base_train().copied().collect();
    let mut facts = vec![0usize; n];
    let mut tails: HashSet<(RelationId, EntityId)> = HashSet::new();
    let mut heads: HashSet<(RelationId, EntityId)> = HashSet::new();
    for tr in &distinct {
        facts[tr.r as usize] += 1;
        tails.insert((tr.r, tr.t));
        heads.insert((tr.r, tr.h));
    }
    let mut rt = vec![0usize; n];
    let mut rh = vec![0usize; n];
    for &(r, _) in &tails {
        rt[r as usize] += 1;
    }
    for &(r, _) in &heads {
        rh[r as usize] += 1;
    }
    (0..n)
        .map(|r| {
            let entry = if facts[r] == 0 {
                Err(Error::RelationAbsent(r as RelationId))
            } else {
                let hpt = facts[r] as f64 / rt[r] as f64;
                let tph = facts[r] as f64 / rh[r] as f64;
                Ok(RelationCategory {
                    category: Category::from_ratios(hpt, tph, cutoff),
                    hpt,
                    tph,
                })
            };
            (r as RelationId, entry)
        })
        .collect()
}

/// Training-line count of every base relation (duplicates counted).
pub fn relation_frequencies(g: &KnowledgeGraph) -> Vec<usize> {
    let mut counts = vec![0usize; g.n_base_relations()];
    for tr in g.base_train() {
        counts[tr.r as usize] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrequencyBucket {
    #[serde(rename = "1-3")]
    UpTo3,
    #[serde(rename = "4-15")]
    UpTo15,
    #[serde(rename = "16-50")]
    UpTo50,
    #[serde(rename = "51-300")]
    UpTo300,
    #[serde(rename = ">300")]
    Over300,
}

impl FrequencyBucket {
    pub const ALL: [FrequencyBucket; 5] = [
        FrequencyBucket::UpTo3,
        FrequencyBucket::UpTo15,
        FrequencyBucket::UpTo50,
        FrequencyBucket::UpTo300,
        FrequencyBucket::Over300,
    ];
}

impl fmt::Display for FrequencyBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrequencyBucket::UpTo3 => "1-3",
            FrequencyBucket::UpTo15 => "4-15",
            FrequencyBucket::UpTo50 => "16-50",
            FrequencyBucket::UpTo300 => "51-300",
            FrequencyBucket::Over300 => ">300",
        })
    }
}

pub fn frequency_bucket(count: usize) -> Result<FrequencyBucket> {
    Ok(match count {
        0 => return Err(Error::ZeroFrequency),
        1..=3 => FrequencyBucket::UpTo3,
        4..=15 => FrequencyBucket::UpTo15,
        16..=50 => FrequencyBucket::UpTo50,
        51..=300 => FrequencyBucket::UpTo300,
        _ => FrequencyBucket::Over300,
    })
}

/// Writes one split as `head<TAB>relation<TAB>tail` lines using vocabulary names.
pub fn write_split(path: &Path, vocab: &Vocab, triples: &[Triple]) -> Result<()> {
    let mut out = Vec::new();
    for tr in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            vocab.entity_name(tr.h),
            vocab.relation_name(tr.r),
            vocab.entity_name(tr.t)
        )
        .expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
