//! Relation-path mining with path-constraint resource allocation (PCRA).
//!
//! For every entity pair linked by a training fact, all relation paths of
//! length one or two are enumerated over the (inverse-augmented) training
//! graph. Each path receives the resource `v(p|h,t)` that reaches `t` when
//! one unit starts at `h` and every node splits what it holds evenly across
//! its distinct children along the next relation of the path.
//!
//! Global relatedness `P(r|p) = P(r,p) / P(p)` is aggregated over training
//! facts, and a path is kept for a pair only if its reliability
//! `P(r|p) · v(p|h,t)` exceeds the configured floor for at least one
//! relation linking the pair. A floor of zero disables the filter.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{LeReader, LeWriter};
use crate::kgdata::{EntityId, KnowledgeGraph, RelationId};

pub const DEFAULT_RELIABILITY_FLOOR: f64 = 0.01;
pub const DEFAULT_PATH_CAP: usize = 200;

const MAGIC: &[u8; 4] = b"PTBL";
const VERSION: u32 = 1;

/// A relation path of one or two hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelPath {
    first: RelationId,
    second: Option<RelationId>,
}

impl RelPath {
    pub const fn single(r: RelationId) -> Self {
        RelPath {
            first: r,
            second: None,
        }
    }

    pub const fn pair(r1: RelationId, r2: RelationId) -> Self {
        RelPath {
            first: r1,
            second: Some(r2),
        }
    }

    pub fn len(&self) -> usize {
        1 + self.second.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        std::iter::once(self.first).chain(self.second)
    }

    /// True for the length-1 path made of exactly `r`.
    pub fn is_direct(&self, r: RelationId) -> bool {
        self.second.is_none() && self.first == r
    }

    fn write<W: Write>(&self, w: &mut LeWriter<W>) -> std::io::Result<()> {
        w.u8(self.len() as u8)?;
        w.u32(self.first)?;
        w.u32(self.second.unwrap_or(0))
    }

    fn read<R: std::io::Read>(r: &mut LeReader<R>) -> Result<Self> {
        let len = r.u8().map_err(truncated)?;
        let first = r.u32().map_err(truncated)?;
        let second = r.u32().map_err(truncated)?;
        match len {
            1 => Ok(RelPath::single(first)),
            2 => Ok(RelPath::pair(first, second)),
            n => Err(format_err(format!("path length {n}"))),
        }
    }
}

impl fmt::Display for RelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.second {
            Some(r2) => write!(f, "{},{}", self.first, r2),
            None => write!(f, "{}", self.first),
        }
    }
}

/// Every distinct relation sequence of length ≤ 2 that walks from `h` to
/// `t`, in lexicographic order, with the number of distinct walks realising it.
pub fn enumerate_paths(g: &KnowledgeGraph, h: EntityId, t: EntityId) -> Vec<(RelPath, usize)> {
    let mut found: BTreeMap<RelPath, usize> = BTreeMap::new();
    for r1 in g.out_relations(h) {
        for e in g.children(h, r1) {
            if e == t {
                *found.entry(RelPath::single(r1)).or_default() += 1;
            }
            for r2 in g.out_relations(e) {
                if g.children(e, r2).any(|c| c == t) {
                    *found.entry(RelPath::pair(r1, r2)).or_default() += 1;
                }
            }
        }
    }
    found.into_iter().collect()
}

/// Spreads each holder's resource evenly over its distinct `r`-children.
fn spread(g: &KnowledgeGraph, holders: &BTreeMap<EntityId, f64>, r: RelationId) -> BTreeMap<EntityId, f64> {
    let mut next = BTreeMap::new();
    for (&e, &rho) in holders {
        let children: Vec<EntityId> = g.children(e, r).collect();
        if children.is_empty() {
            continue;
        }
        let share = rho / children.len() as f64;
        for c in children {
            *next.entry(c).or_insert(0.0) += share;
        }
    }
    next
}

/// Resource arriving at every entity when one unit starts at `h` and
/// flows along `p`.
pub fn pcra_distribution(g: &KnowledgeGraph, h: EntityId, p: RelPath) -> BTreeMap<EntityId, f64> {
    let mut holders = BTreeMap::from([(h, 1.0)]);
    for r in p.relations() {
        holders = spread(g, &holders, r);
    }
    holders
}

/// PCRA resource `v(p|h,t)`.
pub fn pcra_resource(g: &KnowledgeGraph, h: EntityId, p: RelPath, t: EntityId) -> Result<f64> {
    match pcra_distribution(g, h, p).get(&t) {
        Some(&v) if v > 0.0 => Ok(v),
        _ => Err(Error::NoWitness {
            head: h,
            tail: t,
            path: p.to_string(),
        }),
    }
}

/// One retained path of an entity pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEntry {
    pub path: RelPath,
    /// `v(p|h,t)`
    pub resource: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub reliability_floor: f64,
    pub cap: usize,
    /// Worker threads for the build; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            reliability_floor: DEFAULT_RELIABILITY_FLOOR,
            cap: DEFAULT_PATH_CAP,
            workers: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.reliability_floor;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config(format!(
                "reliability floor must lie in [0, 1], got {f}"
            )));
        }
        if self.cap == 0 {
            return Err(Error::config("path cap must be at least 1"));
        }
        Ok(())
    }
}

/// Counts gathered while building a [`PathTable`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildSummary {
    /// Distinct entity pairs linked by a training fact.
    pub linked_pairs: usize,
    /// Pair/path combinations found before filtering.
    pub candidate_entries: usize,
    /// Entries dropped by the reliability floor.
    pub filtered_entries: usize,
    /// Entries dropped by the per-pair cap.
    pub capped_entries: usize,
}

impl BuildSummary {
    pub fn drop_rate(&self) -> f64 {
        if self.candidate_entries == 0 {
            0.0
        } else {
            (self.filtered_entries + self.capped_entries) as f64 / self.candidate_entries as f64
        }
    }
}

/// Reliable paths per entity pair plus global relatedness statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathTable {
    reliability_floor: f64,
    cap: usize,
    per_pair: HashMap<(EntityId, EntityId), Vec<PathEntry>>,
    relatedness: HashMap<(RelationId, RelPath), f64>,
    support: HashMap<RelPath, f64>,
}

/// Paths found for one linked pair, before filtering.
struct PairPaths {
    t: EntityId,
    links: Vec<RelationId>,
    paths: Vec<PathEntry>,
}

/// All length ≤ 2 paths from `h` into the tails `h` is linked to by a
/// training fact, with their PCRA resources.
fn paths_from_head(g: &KnowledgeGraph, h: EntityId) -> Vec<PairPaths> {
    let mut links: BTreeMap<EntityId, Vec<RelationId>> = BTreeMap::new();
    for &(r, t) in g.out_edges(h) {
        let rs = links.entry(t).or_default();
        if rs.last() != Some(&r) {
            rs.push(r);
        }
    }
    if links.is_empty() {
        return Vec::new();
    }
    let mut acc: BTreeMap<(EntityId, RelPath), f64> = BTreeMap::new();
    for r1 in g.out_relations(h) {
        let first: Vec<EntityId> = g.children(h, r1).collect();
        let share = 1.0 / first.len() as f64;
        for &e in &first {
            if links.contains_key(&e) {
                *acc.entry((e, RelPath::single(r1))).or_insert(0.0) += share;
            }
        }
        // Hop two is accumulated per path in the same holder order as
        // `pcra_distribution` so both routes sum identically.
        let mut second: BTreeMap<RelationId, Vec<EntityId>> = BTreeMap::new();
        for &e in &first {
            for r2 in g.out_relations(e) {
                second.entry(r2).or_default().push(e);
            }
        }
        for (r2, holders) in second {
            let p = RelPath::pair(r1, r2);
            let mut arrived: BTreeMap<EntityId, f64> = BTreeMap::new();
            for e in holders {
                let children: Vec<EntityId> = g.children(e, r2).collect();
                let w = share / children.len() as f64;
                for c in children {
                    *arrived.entry(c).or_insert(0.0) += w;
                }
            }
            for (c, v) in arrived {
                if links.contains_key(&c) {
                    acc.insert((c, p), v);
                }
            }
        }
    }

    let mut out: Vec<PairPaths> = links
        .into_iter()
        .map(|(t, links)| PairPaths {
            t,
            links,
            paths: Vec::new(),
        })
        .collect();
    for ((t, path), resource) in acc {
        let idx = out.binary_search_by_key(&t, |pp| pp.t).expect("tail is linked");
        out[idx].paths.push(PathEntry { path, resource });
    }
    out
}

impl PathTable {
    /// An empty table (plain TransR behaviour downstream).
    pub fn empty() -> Self {
        PathTable {
            reliability_floor: DEFAULT_RELIABILITY_FLOOR,
            cap: DEFAULT_PATH_CAP,
            ..Default::default()
        }
    }

    pub fn build(g: &KnowledgeGraph, cfg: &PathConfig) -> Result<(PathTable, BuildSummary)> {
        cfg.validate()?;
        let heads: Vec<EntityId> = (0..g.n_entities() as EntityId).collect();
        let run = || -> Vec<(EntityId, Vec<PairPaths>)> {
            heads
                .par_iter()
                .map(|&h| (h, paths_from_head(g, h)))
                .collect()
        };
        let per_head = if cfg.workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?
                .install(run)
        } else {
            run()
        };

        // Global statistics over training facts: each distinct fact (h,r,t)
        // contributes v(p|h,t) for every path p of (h,t) other than (r).
        let mut joint: BTreeMap<(RelationId, RelPath), f64> = BTreeMap::new();
        let mut support: BTreeMap<RelPath, f64> = BTreeMap::new();
        let mut summary = BuildSummary::default();
        for (_, pairs) in &per_head {
            for pp in pairs {
                summary.linked_pairs += 1;
                for &r in &pp.links {
                    for entry in pp.paths.iter().filter(|e| !e.path.is_direct(r)) {
                        *joint.entry((r, entry.path)).or_insert(0.0) += entry.resource;
                        *support.entry(entry.path).or_insert(0.0) += entry.resource;
                    }
                }
            }
        }
        let relatedness: HashMap<(RelationId, RelPath), f64> = joint
            .into_iter()
            .map(|((r, p), v)| ((r, p), v / support[&p]))
            .collect();

        let mut per_pair = HashMap::new();
        for (h, pairs) in per_head {
            for pp in pairs {
                summary.candidate_entries += pp.paths.len();
                let mut kept: Vec<PathEntry> = pp
                    .paths
                    .into_iter()
                    .filter(|entry| {
                        cfg.reliability_floor == 0.0
                            || pp.links.iter().any(|&r| {
                            !entry.path.is_direct(r)
                                && relatedness.get(&(r, entry.path)).copied().unwrap_or(0.0)
                                    * entry.resource
                                    > cfg.reliability_floor
                        })
                    })
                    .collect();
                let after_filter = kept.len();
                if kept.len() > cfg.cap {
                    kept.sort_by(|a, b| {
                        b.resource
                            .total_cmp(&a.resource)
                            .then_with(|| a.path.cmp(&b.path))
                    });
                    kept.truncate(cfg.cap);
                    kept.sort_by_key(|e| e.path);
                }
                summary.capped_entries += after_filter - kept.len();
                if !kept.is_empty() {
                    per_pair.insert((h, pp.t), kept);
                }
            }
        }
        summary.filtered_entries = summary.candidate_entries
            - summary.capped_entries
            - per_pair.values().map(Vec::len).sum::<usize>();

        Ok((
            PathTable {
                reliability_floor: cfg.reliability_floor,
                cap: cfg.cap,
                per_pair,
                relatedness,
                support: support.into_iter().collect(),
            },
            summary,
        ))
    }

    pub fn reliability_floor(&self) -> f64 {
        self.reliability_floor
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn is_empty(&self) -> bool {
        self.per_pair.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.per_pair.len()
    }

    pub fn n_entries(&self) -> usize {
        self.per_pair.values().map(Vec::len).sum()
    }

    /// Retained paths of `(h, t)` in path order; empty when the pair is unknown.
    pub fn paths(&self, h: EntityId, t: EntityId) -> &[PathEntry] {
        self.per_pair.get(&(h, t)).map_or(&[], Vec::as_slice)
    }

    /// `P(r|p)`; zero when `r` never co-occurs with `p`.
    pub fn relatedness(&self, r: RelationId, p: RelPath) -> f64 {
        self.relatedness.get(&(r, p)).copied().unwrap_or(0.0)
    }

    /// Paths with nonzero `P(r|p)`, most related first, ties in path order.
    pub fn related_paths(&self, r: RelationId) -> Vec<(RelPath, f64)> {
        let mut out: Vec<(RelPath, f64)> = self
            .relatedness
            .iter()
            .filter(|((rel, _), v)| *rel == r && **v > 0.0)
            .map(|((_, p), v)| (*p, *v))
            .collect();
        out.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// `P(p)`, the summed resource of `p` over training facts.
    pub fn support(&self, p: RelPath) -> f64 {
        self.support.get(&p).copied().unwrap_or(0.0)
    }

    /// `R(p|h,r,t) = P(r|p) · v(p|h,t)`.
    pub fn reliability(&self, r: RelationId, entry: &PathEntry) -> f64 {
        self.relatedness(r, entry.path) * entry.resource
    }

    /// Paths that regularise the fact `(h, r, t)` with their reliabilities.
    /// The direct path `(r)` is excluded.
    pub fn weighted_paths(
        &self,
        h: EntityId,
        r: RelationId,
        t: EntityId,
    ) -> impl Iterator<Item = (RelPath, f64)> + '_ {
        self.paths(h, t)
            .iter()
            .filter(move |e| !e.path.is_direct(r))
            .map(move |e| (e.path, self.reliability(r, e)))
    }

    fn sorted_pairs(&self) -> Vec<(&(EntityId, EntityId), &Vec<PathEntry>)> {
        let mut pairs: Vec<_> = self.per_pair.iter().collect();
        pairs.sort_unstable_by_key(|(k, _)| **k);
        pairs
    }

    /// Serialises to the `PTBL` binary format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::new(Vec::new());
        self.write_to(&mut w).expect("write to Vec");
        w.into_inner()
    }

    fn write_to<W: Write>(&self, w: &mut LeWriter<W>) -> std::io::Result<()> {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.f64(self.reliability_floor)?;
        w.u32(self.cap as u32)?;

        let pairs = self.sorted_pairs();
        w.u64(pairs.len() as u64)?;
        for (&(h, t), entries) in pairs {
            w.u32(h)?;
            w.u32(t)?;
            w.u32(entries.len() as u32)?;
            for e in entries {
                e.path.write(w)?;
                w.f64(e.resource)?;
            }
        }

        let mut rel: Vec<_> = self.relatedness.iter().collect();
        rel.sort_unstable_by_key(|(k, _)| **k);
        w.u64(rel.len() as u64)?;
        for (&(r, p), &v) in rel {
            w.u32(r)?;
            p.write(w)?;
            w.f64(v)?;
        }

        let mut sup: Vec<_> = self.support.iter().collect();
        sup.sort_unstable_by_key(|(k, _)| **k);
        w.u64(sup.len() as u64)?;
        for (p, &v) in sup {
            p.write(w)?;
            w.f64(v)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut LeReader::new(bytes))
    }

    fn read_from<R: std::io::Read>(r: &mut LeReader<R>) -> Result<Self> {
        let magic: [u8; 4] = r.array().map_err(truncated)?;
        if &magic != MAGIC {
            return Err(format_err("bad magic".into()));
        }
        let version = r.u32().map_err(truncated)?;
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let reliability_floor = r.f64().map_err(truncated)?;
        let cap = r.u32().map_err(truncated)? as usize;

        let n_pairs = r.u64().map_err(truncated)?;
        let mut per_pair = HashMap::new();
        for _ in 0..n_pairs {
            let h = r.u32().map_err(truncated)?;
            let t = r.u32().map_err(truncated)?;
            let n = r.u32().map_err(truncated)?;
            let mut entries = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let path = RelPath::read(r)?;
                let resource = r.f64().map_err(truncated)?;
                entries.push(PathEntry { path, resource });
            }
            per_pair.insert((h, t), entries);
        }

        let n_rel = r.u64().map_err(truncated)?;
        let mut relatedness = HashMap::new();
        for _ in 0..n_rel {
            let rel = r.u32().map_err(truncated)?;
            let p = RelPath::read(r)?;
            relatedness.insert((rel, p), r.f64().map_err(truncated)?);
        }

        let n_sup = r.u64().map_err(truncated)?;
        let mut support = HashMap::new();
        for _ in 0..n_sup {
            let p = RelPath::read(r)?;
            support.insert(p, r.f64().map_err(truncated)?);
        }
        if !r.at_eof().map_err(truncated)? {
            return Err(format_err("trailing bytes".into()));
        }
        Ok(PathTable {
            reliability_floor,
            cap,
            per_pair,
            relatedness,
            support,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = LeWriter::new(BufWriter::new(file));
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.into_inner().flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut LeReader::new(BufReader::new(file)))
    }

    /// Debug dump, one `h<TAB>t<TAB>r1[,r2]<TAB>v` line per entry, sorted.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (&(h, t), entries) in self.sorted_pairs() {
            for e in entries {
                out.push_str(&format!("{h}\t{t}\t{}\t{}\n", e.path, e.resource));
            }
        }
        out
    }
}

fn truncated(e: std::io::Error) -> Error {
    format_err(format!("truncated or unreadable: {e}"))
}

fn format_err(detail: String) -> Error {
    Error::Format {
        kind: "path table",
        detail,
    }
}

/// Builds a path table with the default cap.
pub fn build_path_table(g: &KnowledgeGraph, reliability_floor: f64) -> Result<PathTable> {
    let cfg = PathConfig {
        reliability_floor,
        ..PathConfig::default()
    };
    PathTable::build(g, &cfg).map(|(table, _)| table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::{augment_inverse, Triple};

    fn graph(n_e: usize, n_r: usize, edges: &[(u32, u32, u32)]) -> KnowledgeGraph {
        let train = edges.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
        KnowledgeGraph::from_ids(n_e, n_r, train, vec![], vec![]).unwrap()
    }

    #[test]
    fn enumerate_single_edge() {
        let g = graph(2, 1, &[(0, 0, 1)]);
        assert_eq!(enumerate_paths(&g, 0, 1), vec![(RelPath::single(0), 1)]);
    }

    #[test]
    fn enumerate_chain() {
        let g = graph(3, 2, &[(0, 0, 1), (1, 1, 2)]);
        assert_eq!(enumerate_paths(&g, 0, 2), vec![(RelPath::pair(0, 1), 1)]);
        assert!(enumerate_paths(&g, 2, 0).is_empty());
    }

    #[test]
    fn enumerate_diamond_counts_witnesses() {
        // a→r1→b, a→r1→c, b→r2→d, c→r2→d
        let g = graph(4, 2, &[(0, 0, 1), (0, 0, 2), (1, 1, 3), (2, 1, 3)]);
        assert_eq!(enumerate_paths(&g, 0, 3), vec![(RelPath::pair(0, 1), 2)]);
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let g = graph(3, 3, &[(0, 2, 2), (0, 1, 1), (1, 0, 2), (0, 0, 2)]);
        let paths: Vec<RelPath> = enumerate_paths(&g, 0, 2).into_iter().map(|(p, _)| p).collect();
        assert_eq!(
            paths,
            vec![RelPath::single(0), RelPath::pair(1, 0), RelPath::single(2)]
        );
    }

    #[test]
    fn pcra_hand_values() {
        let g = graph(2, 1, &[(0, 0, 1)]);
        assert_eq!(pcra_resource(&g, 0, RelPath::single(0), 1).unwrap(), 1.0);

        let g = graph(3, 1, &[(0, 0, 1), (0, 0, 2)]);
        assert_eq!(pcra_resource(&g, 0, RelPath::single(0), 1).unwrap(), 0.5);

        let g = graph(4, 2, &[(0, 0, 1), (0, 0, 2), (1, 1, 3), (2, 1, 3)]);
        assert_eq!(pcra_resource(&g, 0, RelPath::pair(0, 1), 3).unwrap(), 1.0);
    }

    #[test]
    fn pcra_without_witness_is_error() {
        let g = graph(3, 2, &[(0, 0, 1)]);
        assert!(matches!(
            pcra_resource(&g, 0, RelPath::pair(0, 1), 2),
            Err(Error::NoWitness { .. })
        ));
    }

    #[test]
    fn duplicate_edges_do_not_split_resource() {
        let g = graph(3, 1, &[(0, 0, 1), (0, 0, 1), (0, 0, 2)]);
        assert_eq!(pcra_resource(&g, 0, RelPath::single(0), 1).unwrap(), 0.5);
    }

    #[test]
    fn lone_fact_has_no_paths() {
        let g = augment_inverse(graph(2, 1, &[(0, 0, 1)])).unwrap();
        let table = build_path_table(&g, 0.01).unwrap();
        assert!(table.is_empty());
    }

    #[test]
    fn triangle_reliability() {
        // (a,r1,b), (b,r2,c), (a,r3,c)
        let g = augment_inverse(graph(3, 3, &[(0, 0, 1), (1, 1, 2), (0, 2, 2)])).unwrap();
        let table = build_path_table(&g, 0.01).unwrap();
        let p = RelPath::pair(0, 1);
        let entries = table.paths(0, 2);
        assert_eq!(entries, &[PathEntry { path: p, resource: 1.0 }]);
        assert_eq!(table.relatedness(2, p), 1.0);
        assert_eq!(table.reliability(2, &entries[0]), 1.0);
    }

    #[test]
    fn floor_bounds_are_validated() {
        let g = graph(2, 1, &[(0, 0, 1)]);
        assert!(matches!(build_path_table(&g, -0.1), Err(Error::Config(_))));
        assert!(matches!(build_path_table(&g, 1.5), Err(Error::Config(_))));
        assert!(build_path_table(&g, 1.0).is_ok());
    }

    #[test]
    fn floor_one_empties_the_table() {
        let g = augment_inverse(graph(3, 3, &[(0, 0, 1), (1, 1, 2), (0, 2, 2)])).unwrap();
        assert!(build_path_table(&g, 1.0).unwrap().is_empty());
        assert!(!build_path_table(&g, 0.0).unwrap().is_empty());
    }

    #[test]
    fn cap_keeps_highest_resource() {
        // a reaches c directly via r3 and via two 2-hop routes of different
        // resource: r1 fans out to {b, x}, r0 goes only to y.
        let g = graph(
            5,
            4,
            &[(0, 2, 2), (0, 0, 1), (0, 0, 3), (1, 1, 2), (0, 3, 4), (4, 1, 2)],
        );
        // a tiny positive floor drops the direct path, whose reliability is zero
        let cfg = PathConfig {
            reliability_floor: 1e-9,
            cap: 1,
            workers: 1,
        };
        let (table, summary) = PathTable::build(&g, &cfg).unwrap();
        assert_eq!(table.paths(0, 2).len(), 1);
        assert_eq!(table.paths(0, 2)[0].path, RelPath::pair(3, 1));
        assert_eq!(summary.capped_entries, 1);
    }

    #[test]
    fn binary_round_trip() {
        let g = augment_inverse(graph(4, 3, &[(0, 0, 1), (1, 1, 2), (0, 2, 2), (2, 0, 3)])).unwrap();
        let table = build_path_table(&g, 0.0).unwrap();
        let bytes = table.to_bytes();
        assert_eq!(&bytes[..4], b"PTBL");
        assert_eq!(PathTable::from_bytes(&bytes).unwrap(), table);
        assert!(PathTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn tsv_dump_is_sorted() {
        let g = augment_inverse(graph(3, 3, &[(0, 0, 1), (1, 1, 2), (0, 2, 2)])).unwrap();
        let table = build_path_table(&g, 0.0).unwrap();
        let tsv = table.to_tsv();
        let keys: Vec<(u32, u32)> = tsv
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap())
            })
            .collect();
        assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        assert!(tsv.lines().any(|l| l == "0\t2\t0,1\t1"));
        assert_eq!(keys.len(), table.n_entries());
    }
}
