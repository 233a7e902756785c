//! Entity-prediction evaluation.
//!
//! For each evaluation fact both the head and the tail are predicted. All
//! candidates are first ranked by the forward TransR energy; the best
//! `rerank_k` are then re-ranked by the fused score
//! `f(h,r,t) + f(t,r⁻¹,h)` where `f` is the PTransR score. Candidates outside
//! the re-ranked head keep their first-stage order behind it.
//!
//! The filtered rank is the raw rank minus the known facts (from any split)
//! ranked ahead of the gold entity, so it never exceeds the raw rank.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgdata::{
    classify_relations, frequency_bucket, relation_frequencies, Category, EntityId, FrequencyBucket,
    KnowledgeGraph, RelationId, Triple, DEFAULT_CATEGORY_CUTOFF,
};
use crate::models::{matvec, path_term, projected_energy, ModelParams};
use crate::paths::PathTable;

type IndexedRanks = Vec<(usize, [RankResult; 2])>;

pub const DEFAULT_RERANK_K: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "valid")]
    Valid,
    #[serde(rename = "test")]
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Which entity of a fact is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PredictSlot {
    #[serde(rename = "head")]
    Head,
    #[serde(rename = "tail")]
    Tail,
}

impl fmt::Display for PredictSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictSlot::Head => "head",
            PredictSlot::Tail => "tail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TiePolicy {
    /// Gold ranks after every candidate with an equal score.
    #[default]
    #[serde(rename = "pessimistic")]
    Pessimistic,
    /// Gold takes the mean position of its tie group, rounded up.
    #[serde(rename = "mean")]
    Mean,
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            "mean" => Ok(TiePolicy::Mean),
            other => Err(Error::config(format!("unknown tie policy `{other}`"))),
        }
    }
}

fn rank_from_counts(better: usize, equal: usize, policy: TiePolicy) -> usize {
    match policy {
        TiePolicy::Pessimistic => better + equal + 1,
        TiePolicy::Mean => better + (equal + 2).div_ceil(2),
    }
}

/// Rank of `scores[gold]` among `scores`, lower score ranking first.
pub fn tie_rank(scores: &[f64], gold: usize, policy: TiePolicy) -> usize {
    let g = scores[gold];
    let mut better = 0;
    let mut equal = 0;
    for (i, &s) in scores.iter().enumerate() {
        if i == gold {
            continue;
        }
        if s < g {
            better += 1;
        } else if s == g {
            equal += 1;
        }
    }
    rank_from_counts(better, equal, policy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub rerank_k: usize,
    pub tie_policy: TiePolicy,
    pub category_cutoff: f64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rerank_k: DEFAULT_RERANK_K,
            tie_policy: TiePolicy::Pessimistic,
            category_cutoff: DEFAULT_CATEGORY_CUTOFF,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub triple: Triple,
    pub slot: PredictSlot,
    pub raw_rank: usize,
    pub filtered_rank: usize,
}

/// Entities projected into the space of one relation and of its inverse.
struct RelationView {
    r: RelationId,
    r_inv: RelationId,
    d: usize,
    fwd: Vec<f64>,
    inv: Vec<f64>,
}

impl RelationView {
    fn new(params: &ModelParams, g: &KnowledgeGraph, r: RelationId) -> Result<Self> {
        let r_inv = g.inverse_of(r)?;
        let project_all = |rel: RelationId| -> Vec<f64> {
            let (d, k) = (params.relation_dim(), params.entity_dim());
            let m = params.proj(rel);
            let mut out = Vec::with_capacity(params.n_entities() * d);
            for e in 0..params.n_entities() as EntityId {
                out.extend(matvec(m, d, k, params.entity(e)));
            }
            out
        };
        Ok(RelationView {
            r,
            r_inv,
            d: params.relation_dim(),
            fwd: project_all(r),
            inv: project_all(r_inv),
        })
    }

    fn fwd(&self, e: EntityId) -> &[f64] {
        &self.fwd[e as usize * self.d..(e as usize + 1) * self.d]
    }

    fn inv(&self, e: EntityId) -> &[f64] {
        &self.inv[e as usize * self.d..(e as usize + 1) * self.d]
    }

    /// Forward TransR energy of `(h, r, t)`.
    fn first_stage(&self, params: &ModelParams, h: EntityId, t: EntityId) -> f64 {
        projected_energy(self.fwd(h), params.relation(self.r), self.fwd(t))
    }

    /// `f(h,r,t) + f(t,r⁻¹,h)` with `f` the PTransR score.
    fn fused(&self, params: &ModelParams, table: &PathTable, h: EntityId, t: EntityId) -> f64 {
        let forward = self.first_stage(params, h, t) + path_term(params, table, h, self.r, t);
        let backward = projected_energy(self.inv(t), params.relation(self.r_inv), self.inv(h))
            + path_term(params, table, t, self.r_inv, h);
        forward + backward
    }

    fn rank(
        &self,
        params: &ModelParams,
        table: &PathTable,
        g: &KnowledgeGraph,
        triple: Triple,
        slot: PredictSlot,
        cfg: &EvalConfig,
    ) -> RankResult {
        let n = params.n_entities();
        let candidate = |e: EntityId| match slot {
            PredictSlot::Head => Triple::new(e, triple.r, triple.t),
            PredictSlot::Tail => Triple::new(triple.h, triple.r, e),
        };
        let gold = match slot {
            PredictSlot::Head => triple.h,
            PredictSlot::Tail => triple.t,
        };

        let stage1: Vec<f64> = (0..n as EntityId)
            .map(|e| {
                let c = candidate(e);
                self.first_stage(params, c.h, c.t)
            })
            .collect();

        let k = cfg.rerank_k.min(n);
        let mut order: Vec<EntityId> = (0..n as EntityId).collect();
        let by_stage1 = |a: &EntityId, b: &EntityId| {
            stage1[*a as usize]
                .total_cmp(&stage1[*b as usize])
                .then(a.cmp(b))
        };
        if k < n {
            order.select_nth_unstable_by(k, by_stage1);
        }
        let mut tier_score: Vec<(u8, f64)> = stage1.iter().map(|&s| (1, s)).collect();
        for &e in &order[..k] {
            let c = candidate(e);
            tier_score[e as usize] = (0, self.fused(params, table, c.h, c.t));
        }

        let key = tier_score[gold as usize];
        let (mut better, mut equal, mut better_f, mut equal_f) = (0, 0, 0, 0);
        for e in 0..n as EntityId {
            if e == gold {
                continue;
            }
            let ke = tier_score[e as usize];
            let is_better = ke.0 < key.0 || (ke.0 == key.0 && ke.1 < key.1);
            let is_equal = ke.0 == key.0 && ke.1 == key.1;
            if !(is_better || is_equal) {
                continue;
            }
            let known = g.is_known(&candidate(e));
            if is_better {
                better += 1;
                better_f += !known as usize;
            } else {
                equal += 1;
                equal_f += !known as usize;
            }
        }
        RankResult {
            triple,
            slot,
            raw_rank: rank_from_counts(better, equal, cfg.tie_policy),
            filtered_rank: rank_from_counts(better_f, equal_f, cfg.tie_policy),
        }
    }
}

/// Ranks the gold entity of one slot of `triple` under both protocols.
pub fn rank_entities(
    params: &ModelParams,
    table: &PathTable,
    g: &KnowledgeGraph,
    triple: Triple,
    slot: PredictSlot,
    cfg: &EvalConfig,
) -> Result<RankResult> {
    if cfg.rerank_k < 1 {
        return Err(Error::config("rerank_k must be at least 1"));
    }
    let view = RelationView::new(params, g, triple.r)?;
    Ok(view.rank(params, table, g, triple, slot, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCell {
    pub category: Category,
    pub slot: PredictSlot,
    pub instances: usize,
    pub hits10_filter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCell {
    pub bucket: FrequencyBucket,
    /// Base relations whose training frequency falls in the bucket.
    pub relations: usize,
    pub instances: usize,
    pub mean_rank_raw: f64,
}

/// Aggregated metrics; hits are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub split: Split,
    pub tie_policy: TiePolicy,
    pub rerank_k: usize,
    pub instances: usize,
    pub mean_rank_raw: f64,
    pub mean_rank_filter: f64,
    pub hits10_raw: f64,
    pub hits10_filter: f64,
    pub per_category: Vec<CategoryCell>,
    pub per_frequency: Vec<FrequencyCell>,
    /// Instances whose relation has no training facts and so falls in no
    /// category or frequency cell.
    pub unclassified: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: RankReport,
    /// Head then tail result for every fact, in split order.
    pub ranks: Vec<RankResult>,
}

fn hits10(ranks: impl Iterator<Item = usize>) -> f64 {
    let (mut n, mut hit) = (0usize, 0usize);
    for r in ranks {
        n += 1;
        hit += (r <= 10) as usize;
    }
    if n == 0 {
        0.0
    } else {
        100.0 * hit as f64 / n as f64
    }
}

fn mean(ranks: impl Iterator<Item = usize>) -> f64 {
    let (mut n, mut sum) = (0usize, 0usize);
    for r in ranks {
        n += 1;
        sum += r;
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Ranks both slots of every fact in `split` and aggregates the report.
pub fn evaluate(
    params: &ModelParams,
    table: &PathTable,
    g: &KnowledgeGraph,
    split: Split,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let triples = match split {
        Split::Valid => g.valid(),
        Split::Test => g.test(),
    };
    evaluate_triples(params, table, g, split, triples, cfg)
}

/// [`evaluate`] over an explicit list of facts.
pub fn evaluate_triples(
    params: &ModelParams,
    table: &PathTable,
    g: &KnowledgeGraph,
    split: Split,
    triples: &[Triple],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if triples.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    if cfg.rerank_k < 1 {
        return Err(Error::config("rerank_k must be at least 1"));
    }
    if !g.is_augmented() {
        return Err(Error::NotAugmented);
    }

    let mut groups: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (i, tr) in triples.iter().enumerate() {
        groups.entry(tr.r).or_default().push(i);
    }
    let groups: Vec<(RelationId, Vec<usize>)> = groups.into_iter().collect();

    let run = || -> Result<IndexedRanks> {
        let per_group: Vec<Result<IndexedRanks>> = groups
            .par_iter()
            .map(|(r, idxs)| {
                let view = RelationView::new(params, g, *r)?;
                Ok(idxs
                    .par_iter()
                    .map(|&i| {
                        let tr = triples[i];
                        (
                            i,
                            [
                                view.rank(params, table, g, tr, PredictSlot::Head, cfg),
                                view.rank(params, table, g, tr, PredictSlot::Tail, cfg),
                            ],
                        )
                    })
                    .collect())
            })
            .collect();
        let mut all = Vec::with_capacity(triples.len());
        for group in per_group {
            all.extend(group?);
        }
        Ok(all)
    };
    let mut indexed = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    indexed.sort_unstable_by_key(|(i, _)| *i);
    let ranks: Vec<RankResult> = indexed.into_iter().flat_map(|(_, pair)| pair).collect();

    for rr in &ranks {
        if rr.filtered_rank > rr.raw_rank || rr.raw_rank > g.n_entities() || rr.filtered_rank == 0 {
            return Err(Error::Invariant(format!(
                "rank bounds broken for {} ({}): raw {}, filtered {}",
                rr.triple, rr.slot, rr.raw_rank, rr.filtered_rank
            )));
        }
    }

    let report = aggregate(g, split, &ranks, cfg)?;
    Ok(Evaluation { report, ranks })
}

fn aggregate(g: &KnowledgeGraph, split: Split, ranks: &[RankResult], cfg: &EvalConfig) -> Result<RankReport> {
    let categories = classify_relations(g, cfg.category_cutoff);
    let freqs = relation_frequencies(g);

    let mut cat_cells: BTreeMap<(Category, PredictSlot), Vec<usize>> = BTreeMap::new();
    for c in Category::ALL {
        for s in [PredictSlot::Head, PredictSlot::Tail] {
            cat_cells.insert((c, s), Vec::new());
        }
    }
    let mut freq_cells: BTreeMap<FrequencyBucket, Vec<usize>> =
        FrequencyBucket::ALL.iter().map(|&b| (b, Vec::new())).collect();
    let mut unclassified = 0;
    for rr in ranks {
        let r = rr.triple.r;
        match categories.get(&r) {
            Some(Ok(cat)) => {
                cat_cells
                    .get_mut(&(cat.category, rr.slot))
                    .expect("all cells present")
                    .push(rr.filtered_rank);
                let bucket = frequency_bucket(freqs[r as usize])?;
                freq_cells.get_mut(&bucket).expect("all buckets present").push(rr.raw_rank);
            }
            _ => unclassified += 1,
        }
    }
    let mut relations_per_bucket: BTreeMap<FrequencyBucket, usize> = BTreeMap::new();
    for &f in freqs.iter().filter(|&&f| f > 0) {
        *relations_per_bucket.entry(frequency_bucket(f)?).or_default() += 1;
    }

    let report = RankReport {
        split,
        tie_policy: cfg.tie_policy,
        rerank_k: cfg.rerank_k,
        instances: ranks.len(),
        mean_rank_raw: mean(ranks.iter().map(|r| r.raw_rank)),
        mean_rank_filter: mean(ranks.iter().map(|r| r.filtered_rank)),
        hits10_raw: hits10(ranks.iter().map(|r| r.raw_rank)),
        hits10_filter: hits10(ranks.iter().map(|r| r.filtered_rank)),
        per_category: cat_cells
            .into_iter()
            .map(|((category, slot), rs)| CategoryCell {
                category,
                slot,
                instances: rs.len(),
                hits10_filter: hits10(rs.into_iter()),
            })
            .collect(),
        per_frequency: freq_cells
            .into_iter()
            .map(|(bucket, rs)| FrequencyCell {
                bucket,
                relations: relations_per_bucket.get(&bucket).copied().unwrap_or(0),
                instances: rs.len(),
                mean_rank_raw: mean(rs.into_iter()),
            })
            .collect(),
        unclassified,
    };

    if report.hits10_filter < report.hits10_raw || report.mean_rank_filter > report.mean_rank_raw {
        return Err(Error::Invariant(format!(
            "filter protocol worse than raw: hits {} vs {}, mean rank {} vs {}",
            report.hits10_filter, report.hits10_raw, report.mean_rank_filter, report.mean_rank_raw
        )));
    }
    Ok(report)
}

impl RankReport {
    pub fn category_cell(&self, category: Category, slot: PredictSlot) -> &CategoryCell {
        self.per_category
            .iter()
            .find(|c| c.category == category && c.slot == slot)
            .expect("all eight category cells present")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Human-readable tables: overall metrics, per-category Hits@10
    /// (filter), per-frequency MeanRank (raw).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# split={:?} instances={} rerank_k={} ties={:?}",
            self.split, self.instances, self.rerank_k, self.tie_policy
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}{:>10}", "", "MeanRank", "", "Hits@10", "");
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}{:>10}", "", "Raw", "Filter", "Raw", "Filter");
        let _ = writeln!(
            out,
            "{:<10}{:>10.1}{:>10.1}{:>10.1}{:>10.1}",
            "model", self.mean_rank_raw, self.mean_rank_filter, self.hits10_raw, self.hits10_filter
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "Hits@10 (filter) by relation category");
        let _ = write!(out, "{:<10}", "predict");
        for c in Category::ALL {
            let _ = write!(out, "{:>10}", c.to_string());
        }
        let _ = writeln!(out);
        for slot in [PredictSlot::Head, PredictSlot::Tail] {
            let _ = write!(out, "{:<10}", slot.to_string());
            for c in Category::ALL {
                let _ = write!(out, "{:>10.1}", self.category_cell(c, slot).hits10_filter);
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "MeanRank (raw) by relation frequency in train");
        let _ = write!(out, "{:<10}", "bucket");
        for cell in &self.per_frequency {
            let _ = write!(out, "{:>10}", cell.bucket.to_string());
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<10}", "relations");
        for cell in &self.per_frequency {
            let _ = write!(out, "{:>10}", cell.relations);
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<10}", "meanrank");
        for cell in &self.per_frequency {
            let _ = write!(out, "{:>10.1}", cell.mean_rank_raw);
        }
        let _ = writeln!(out);
        out
    }
}

impl Evaluation {
    /// Per-instance ranks as CSV.
    pub fn ranks_csv(&self) -> String {
        let mut out = String::from("index,head,relation,tail,slot,raw_rank,filtered_rank\n");
        for (i, rr) in self.ranks.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                i / 2,
                rr.triple.h,
                rr.triple.r,
                rr.triple.t,
                rr.slot,
                rr.raw_rank,
                rr.filtered_rank
            );
        }
        out
    }

    /// Writes `report.txt`, `report.json` and `ranks.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.txt", self.report.to_table()),
            ("report.json", self.report.to_json()),
            ("ranks.csv", self.ranks_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
