//! Two-stage training: a TransE warm start followed by TransR or PTransR
//! minimisation with per-triple SGD, negative sampling, and constraint
//! projection after every batch.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{self, EvalConfig, Split};
use crate::kgdata::{KnowledgeGraph, RelationId, Triple};
use crate::models::{
    grad_path_energy, grad_score_transr, path_energy, project_constraints, score_transr,
    transe_distance, ModelParams, Norm, Touched,
};
use crate::paths::{PathTable, RelPath};

/// Resampling budget for one negative.
pub const MAX_NEGATIVE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "transe")]
    TransE,
    #[serde(rename = "transr")]
    TransR,
    #[serde(rename = "ptransr")]
    PTransR,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Stage::TransE),
            "transr" => Ok(Stage::TransR),
            "ptransr" => Ok(Stage::PTransR),
            other => Err(Error::config(format!("unknown stage `{other}`"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::TransE => "transe",
            Stage::TransR => "transr",
            Stage::PTransR => "ptransr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NegMode {
    #[default]
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "bernoulli")]
    Bernoulli,
}

impl FromStr for NegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "unif" => Ok(NegMode::Uniform),
            "bernoulli" | "bern" => Ok(NegMode::Bernoulli),
            other => Err(Error::config(format!("unknown negative sampling mode `{other}`"))),
        }
    }
}

impl fmt::Display for NegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegMode::Uniform => "uniform",
            NegMode::Bernoulli => "bernoulli",
        })
    }
}

/// Training hyperparameters.
///
/// `lr`, `epochs` and `margin` drive a TransE-stage run; `warm_lr` and
/// `warm_epochs` (with `margin`) drive the warm start that precedes a
/// TransR/PTransR run when no initial model is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub margin: f64,
    pub margin_triple: f64,
    pub margin_path: f64,
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub norm: Norm,
    pub neg_mode: NegMode,
    pub seed: u64,
    pub warm_lr: f64,
    pub warm_epochs: usize,
    pub workers: usize,
    pub lr_decay: bool,
    pub checkpoint_every: usize,
    pub early_stop_patience: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::PTransR,
            lr: 0.001,
            margin: 1.0,
            margin_triple: 1.0,
            margin_path: 1.0,
            entity_dim: 50,
            relation_dim: 50,
            batch_size: 4800,
            epochs: 500,
            norm: Norm::L2,
            neg_mode: NegMode::Uniform,
            seed: 1,
            warm_lr: 0.01,
            warm_epochs: 1000,
            workers: 1,
            lr_decay: false,
            checkpoint_every: 0,
            early_stop_patience: 0,
            eval_every: 10,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "stage",
    "lr",
    "margin",
    "margin_triple",
    "margin_path",
    "entity_dim",
    "relation_dim",
    "batch_size",
    "epochs",
    "norm",
    "neg_mode",
    "seed",
    "warm_lr",
    "warm_epochs",
    "workers",
    "lr_decay",
    "checkpoint_every",
    "early_stop_patience",
    "eval_every",
];

impl TrainConfig {
    /// Sets one field from its `key=value` text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "stage" => self.stage = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "margin_triple" => self.margin_triple = num(key, value)?,
            "margin_path" => self.margin_path = num(key, value)?,
            "entity_dim" | "k" => self.entity_dim = num(key, value)?,
            "relation_dim" | "d" => self.relation_dim = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "norm" => self.norm = value.parse()?,
            "neg_mode" => self.neg_mode = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "warm_lr" => self.warm_lr = num(key, value)?,
            "warm_epochs" => self.warm_epochs = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "early_stop_patience" => self.early_stop_patience = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The effective configuration in `key=value` form, one key per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match *key {
                "stage" => self.stage.to_string(),
                "lr" => self.lr.to_string(),
                "margin" => self.margin.to_string(),
                "margin_triple" => self.margin_triple.to_string(),
                "margin_path" => self.margin_path.to_string(),
                "entity_dim" => self.entity_dim.to_string(),
                "relation_dim" => self.relation_dim.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "epochs" => self.epochs.to_string(),
                "norm" => format!("{:?}", self.norm).to_lowercase(),
                "neg_mode" => self.neg_mode.to_string(),
                "seed" => self.seed.to_string(),
                "warm_lr" => self.warm_lr.to_string(),
                "warm_epochs" => self.warm_epochs.to_string(),
                "workers" => self.workers.to_string(),
                "lr_decay" => self.lr_decay.to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "early_stop_patience" => self.early_stop_patience.to_string(),
                "eval_every" => self.eval_every.to_string(),
                _ => unreachable!(),
            };
            out.push_str(&format!("{key}={value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("margin", self.margin),
            ("margin_triple", self.margin_triple),
            ("margin_path", self.margin_path),
            ("warm_lr", self.warm_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("`{name}` must be positive, got {v}")));
            }
        }
        let counts = [
            ("entity_dim", self.entity_dim),
            ("relation_dim", self.relation_dim),
            ("batch_size", self.batch_size),
            ("workers", self.workers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("`{name}` must be at least 1")));
            }
        }
        if self.stage == Stage::TransE && self.entity_dim != self.relation_dim {
            return Err(Error::config("TransE needs entity_dim == relation_dim"));
        }
        Ok(())
    }

    /// The TransE-stage configuration used for the warm start.
    pub fn warm_start(&self) -> TrainConfig {
        TrainConfig {
            stage: Stage::TransE,
            lr: self.warm_lr,
            epochs: self.warm_epochs,
            early_stop_patience: 0,
            checkpoint_every: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Head,
    Tail,
    Relation,
}

/// Which slot of a triple to corrupt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotDistribution {
    /// Head with probability `head_prob`, otherwise tail.
    Entity { head_prob: f64 },
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeSample {
    pub corrupted: Triple,
    pub slot: Slot,
}

/// Corrupts one slot of `triple`, resampling until the result is not a
/// training fact.
pub fn sample_negative<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    triple: Triple,
    dist: SlotDistribution,
    rng: &mut R,
) -> Result<NegativeSample> {
    match dist {
        SlotDistribution::Entity { head_prob } => {
            let n = g.n_entities() as u32;
            let slot = if rng.gen_bool(head_prob.clamp(0.0, 1.0)) {
                Slot::Head
            } else {
                Slot::Tail
            };
            for _ in 0..MAX_NEGATIVE_ATTEMPTS {
                let e = rng.gen_range(0..n);
                let corrupted = match slot {
                    Slot::Head => Triple::new(e, triple.r, triple.t),
                    _ => Triple::new(triple.h, triple.r, e),
                };
                if !g.in_train(&corrupted) {
                    return Ok(NegativeSample { corrupted, slot });
                }
            }
        }
        SlotDistribution::Relation => {
            let n = g.n_relations() as u32;
            if n < 2 {
                return Err(Error::SamplingExhausted(0));
            }
            for _ in 0..MAX_NEGATIVE_ATTEMPTS {
                let mut r = rng.gen_range(0..n - 1);
                if r >= triple.r {
                    r += 1;
                }
                let corrupted = Triple::new(triple.h, r, triple.t);
                if !g.in_train(&corrupted) {
                    return Ok(NegativeSample {
                        corrupted,
                        slot: Slot::Relation,
                    });
                }
            }
        }
    }
    Err(Error::SamplingExhausted(MAX_NEGATIVE_ATTEMPTS))
}

/// Per-relation head-corruption probabilities.
#[derive(Debug, Clone)]
struct HeadProbs(Vec<f64>);

impl HeadProbs {
    fn new(g: &KnowledgeGraph, mode: NegMode) -> Self {
        let n = g.n_relations();
        match mode {
            NegMode::Uniform => HeadProbs(vec![0.5; n]),
            NegMode::Bernoulli => {
                // tph / (tph + hpt) over all training facts
                let mut facts = vec![0usize; n];
                let mut heads = std::collections::HashSet::new();
                let mut tails = std::collections::HashSet::new();
                for tr in g.train() {
                    facts[tr.r as usize] += 1;
                    heads.insert((tr.r, tr.h));
                    tails.insert((tr.r, tr.t));
                }
                let mut n_heads = vec![0usize; n];
                let mut n_tails = vec![0usize; n];
                for (r, _) in heads {
                    n_heads[r as usize] += 1;
                }
                for (r, _) in tails {
                    n_tails[r as usize] += 1;
                }
                HeadProbs(
                    (0..n)
                        .map(|r| {
                            if facts[r] == 0 {
                                return 0.5;
                            }
                            let tph = facts[r] as f64 / n_heads[r] as f64;
                            let hpt = facts[r] as f64 / n_tails[r] as f64;
                            tph / (tph + hpt)
                        })
                        .collect(),
                )
            }
        }
    }

    fn entity_slot(&self, r: RelationId) -> SlotDistribution {
        SlotDistribution::Entity {
            head_prob: self.0[r as usize],
        }
    }
}

/// Statistics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-triple loss (triple hinge plus normalised path hinges).
    pub loss: f64,
    /// Triple-level hinge terms with positive loss.
    pub violations: usize,
    /// Path-level hinge terms with positive loss.
    pub path_violations: usize,
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    pub violations: usize,
    pub path_violations: usize,
    pub wall_secs: f64,
}

fn axpy(dst: &mut [f32], alpha: f64, g: &[f64]) {
    for (x, &gi) in dst.iter_mut().zip(g) {
        *x = (*x as f64 + alpha * gi) as f32;
    }
}

/// `∂‖h + r − t‖/∂h` for the chosen norm.
fn transe_grad(h: &[f32], r: &[f32], t: &[f32], norm: Norm) -> Vec<f64> {
    let diff: Vec<f64> = h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((&h, &r), &t)| h as f64 + r as f64 - t as f64)
        .collect();
    match norm {
        Norm::L1 => diff.iter().map(|x| x.signum() * (*x != 0.0) as u8 as f64).collect(),
        Norm::L2 => {
            let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|x| x / n).collect()
            }
        }
    }
}

/// One TransE hinge update. Returns the loss.
fn transe_step(
    params: &mut ModelParams,
    pos: Triple,
    neg: Triple,
    margin: f64,
    lr: f64,
    norm: Norm,
    touched: &mut Touched,
) -> f64 {
    let d_pos = transe_distance(params.entity(pos.h), params.relation(pos.r), params.entity(pos.t), norm);
    let d_neg = transe_distance(params.entity(neg.h), params.relation(neg.r), params.entity(neg.t), norm);
    let loss = margin + d_pos - d_neg;
    if loss <= 0.0 {
        return 0.0;
    }
    let gp = transe_grad(params.entity(pos.h), params.relation(pos.r), params.entity(pos.t), norm);
    let gn = transe_grad(params.entity(neg.h), params.relation(neg.r), params.entity(neg.t), norm);
    axpy(params.entity_mut(pos.h), -lr, &gp);
    axpy(params.relation_mut(pos.r), -lr, &gp);
    axpy(params.entity_mut(pos.t), lr, &gp);
    axpy(params.entity_mut(neg.h), lr, &gn);
    axpy(params.relation_mut(neg.r), lr, &gn);
    axpy(params.entity_mut(neg.t), -lr, &gn);
    touched.entities.extend([pos.h, pos.t, neg.h, neg.t]);
    touched.relations.extend([pos.r, neg.r]);
    loss
}

/// One TransR triple-level hinge update. Returns the loss.
fn transr_step(
    params: &mut ModelParams,
    pos: Triple,
    neg: Triple,
    margin: f64,
    lr: f64,
    touched: &mut Touched,
) -> f64 {
    let loss = margin + score_transr(params, pos.h, pos.r, pos.t) - score_transr(params, neg.h, neg.r, neg.t);
    if loss <= 0.0 {
        return 0.0;
    }
    let gp = grad_score_transr(params, pos.h, pos.r, pos.t);
    let gn = grad_score_transr(params, neg.h, neg.r, neg.t);
    axpy(params.entity_mut(pos.h), -lr, &gp.h);
    axpy(params.entity_mut(pos.t), -lr, &gp.t);
    axpy(params.relation_mut(pos.r), -lr, &gp.r);
    axpy(params.proj_mut(pos.r), -lr, &gp.m);
    axpy(params.entity_mut(neg.h), lr, &gn.h);
    axpy(params.entity_mut(neg.t), lr, &gn.t);
    axpy(params.relation_mut(neg.r), lr, &gn.r);
    axpy(params.proj_mut(neg.r), lr, &gn.m);
    touched.entities.extend([pos.h, pos.t, neg.h, neg.t]);
    touched.relations.extend([pos.r, neg.r]);
    touched.triples.extend([pos, neg]);
    loss
}

/// One path-level hinge update, `max{0, γ₂ + R‖p − r‖² − R‖p − r′‖²}`
/// scaled by `1/Z`. Returns the unscaled hinge.
#[allow(clippy::too_many_arguments)]
fn path_step(
    params: &mut ModelParams,
    path: RelPath,
    r: RelationId,
    r_neg: RelationId,
    reliability: f64,
    z: f64,
    margin: f64,
    lr: f64,
    touched: &mut Touched,
) -> f64 {
    let loss = margin + path_energy(params, path, r, reliability) - path_energy(params, path, r_neg, reliability);
    if loss <= 0.0 {
        return 0.0;
    }
    let step = lr / z;
    for (rel, g) in grad_path_energy(params, path, r, reliability) {
        axpy(params.relation_mut(rel), -step, &g);
        touched.relations.insert(rel);
    }
    for (rel, g) in grad_path_energy(params, path, r_neg, reliability) {
        axpy(params.relation_mut(rel), step, &g);
        touched.relations.insert(rel);
    }
    loss
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    loss: f64,
    violations: usize,
    path_violations: usize,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        self.loss += other.loss;
        self.violations += other.violations;
        self.path_violations += other.path_violations;
    }
}

/// Everything one SGD pass over a slice of triples needs read-only.
struct StepContext<'a> {
    g: &'a KnowledgeGraph,
    table: &'a PathTable,
    cfg: &'a TrainConfig,
    heads: &'a HeadProbs,
    lr: f64,
    epoch: usize,
}

impl StepContext<'_> {
    fn run<R: Rng>(
        &self,
        params: &mut ModelParams,
        triples: &[(usize, Triple)],
        rng: &mut R,
        touched: &mut Touched,
    ) -> Result<Tally> {
        let mut tally = Tally::default();
        for &(index, pos) in triples {
            let neg = sample_negative(self.g, pos, self.heads.entity_slot(pos.r), rng)?.corrupted;
            let mut loss = match self.cfg.stage {
                Stage::TransE => transe_step(params, pos, neg, self.cfg.margin, self.lr, self.cfg.norm, touched),
                Stage::TransR | Stage::PTransR => {
                    transr_step(params, pos, neg, self.cfg.margin_triple, self.lr, touched)
                }
            };
            if loss > 0.0 {
                tally.violations += 1;
            }

            if self.cfg.stage != Stage::TransE {
                let weighted: Vec<(RelPath, f64)> = self.table.weighted_paths(pos.h, pos.r, pos.t).collect();
                let z: f64 = weighted.iter().map(|&(_, rel)| rel).sum();
                if z > 0.0 {
                    for (path, rel) in weighted {
                        if rel == 0.0 {
                            loss += self.cfg.margin_path / z;
                            continue;
                        }
                        let r_neg = sample_negative(self.g, pos, SlotDistribution::Relation, rng)?
                            .corrupted
                            .r;
                        let hinge = path_step(
                            params,
                            path,
                            pos.r,
                            r_neg,
                            rel,
                            z,
                            self.cfg.margin_path,
                            self.lr,
                            touched,
                        );
                        if hinge > 0.0 {
                            tally.path_violations += 1;
                        }
                        loss += hinge / z;
                    }
                }
            }

            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    index,
                    detail: format!("{pos} vs {neg}, loss {loss}"),
                });
            }
            tally.loss += loss;
        }
        Ok(tally)
    }
}

/// Raw parameter pointer shared by hogwild workers. Workers write rows
/// without synchronisation; collisions are tolerated and make the result
/// nondeterministic.
struct Hogwild(*mut ModelParams);

unsafe impl Send for Hogwild {}
unsafe impl Sync for Hogwild {}

/// One SGD epoch of the configured stage over the shuffled training set.
pub fn train_epoch<R: Rng>(
    g: &KnowledgeGraph,
    table: &PathTable,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    let heads = HeadProbs::new(g, cfg.neg_mode);
    train_epoch_with(g, table, params, cfg, &heads, epoch, rng)
}

fn train_epoch_with<R: Rng>(
    g: &KnowledgeGraph,
    table: &PathTable,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    heads: &HeadProbs,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    let mut order: Vec<(usize, Triple)> = g.train().iter().copied().enumerate().collect();
    order.shuffle(rng);
    let lr = if cfg.lr_decay && cfg.epochs > 0 {
        cfg.lr * (1.0 - (epoch - 1) as f64 / cfg.epochs as f64)
    } else {
        cfg.lr
    };
    let ctx = StepContext {
        g,
        table,
        cfg,
        heads,
        lr,
        epoch,
    };

    let mut total = Tally::default();
    let mut touched = Touched::default();
    for batch in order.chunks(cfg.batch_size) {
        if cfg.workers <= 1 {
            total.merge(ctx.run(params, batch, rng, &mut touched)?);
        } else {
            let shard_len = batch.len().div_ceil(cfg.workers);
            let seeds: Vec<u64> = (0..cfg.workers).map(|_| rng.gen()).collect();
            let shared = Hogwild(params as *mut ModelParams);
            let results: Vec<Result<(Tally, Touched)>> = std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .chunks(shard_len)
                    .zip(&seeds)
                    .map(|(shard, &seed)| {
                        let shared = &shared;
                        let ctx = &ctx;
                        s.spawn(move || {
                            let mut local_rng = ChaCha8Rng::seed_from_u64(seed);
                            let mut local_touched = Touched::default();
                            // SAFETY: hogwild updates; rows are written
                            // concurrently without locks, element writes are
                            // plain f32 stores and the buffers never resize.
                            let params = unsafe { &mut *shared.0 };
                            ctx.run(params, shard, &mut local_rng, &mut local_touched)
                                .map(|t| (t, local_touched))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("hogwild worker panicked"))
                    .collect()
            });
            for res in results {
                let (tally, t) = res?;
                total.merge(tally);
                touched.entities.extend(t.entities);
                touched.relations.extend(t.relations);
                touched.triples.extend(t.triples);
            }
        }
        project_constraints(params, &touched);
        touched.clear();
    }

    let n = g.train().len().max(1) as f64;
    Ok(EpochStats {
        epoch,
        loss: total.loss / n,
        violations: total.violations,
        path_violations: total.path_violations,
    })
}

/// Hinge loss of fixed `(positive, negative)` pairs under the TransR energy.
pub fn frozen_triple_loss(params: &ModelParams, pairs: &[(Triple, Triple)], margin: f64) -> f64 {
    pairs
        .iter()
        .map(|(p, n)| (margin + score_transr(params, p.h, p.r, p.t) - score_transr(params, n.h, n.r, n.t)).max(0.0))
        .sum::<f64>()
        / pairs.len().max(1) as f64
}

/// Optional side effects of [`train`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Starting point for TransR/PTransR instead of an internal warm start.
    pub init: Option<ModelParams>,
    /// Directory for periodic `checkpoint-<epoch>.ptrm` files.
    pub checkpoint_dir: Option<PathBuf>,
    /// JSON-lines log, one record per epoch.
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochStats>,
    /// Epoch at which early stopping fired, if it did.
    pub stopped_early: Option<usize>,
}

struct Logger {
    file: Option<fs::File>,
    path: PathBuf,
    start: Instant,
}

impl Logger {
    fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(fs::File::create(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Ok(Logger {
            file,
            path: path.map(Path::to_owned).unwrap_or_default(),
            start: Instant::now(),
        })
    }

    fn record(&mut self, stage: Stage, stats: &EpochStats) -> Result<()> {
        if let Some(f) = &mut self.file {
            let rec = LogRecord {
                stage,
                epoch: stats.epoch,
                loss: stats.loss,
                violations: stats.violations,
                path_violations: stats.path_violations,
                wall_secs: self.start.elapsed().as_secs_f64(),
            };
            let line = serde_json::to_string(&rec).expect("log record serialises");
            writeln!(f, "{line}").map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}

fn run_stage(
    g: &KnowledgeGraph,
    table: &PathTable,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    opts: &TrainOptions,
    logger: &mut Logger,
) -> Result<(Vec<EpochStats>, Option<usize>)> {
    let heads = HeadProbs::new(g, cfg.neg_mode);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch_with(g, table, params, cfg, &heads, epoch, rng)?;
        logger.record(cfg.stage, &stats)?;
        log.push(stats);

        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                params.save(&dir.join(format!("checkpoint-{epoch}.ptrm")))?;
            }
        }

        if cfg.early_stop_patience > 0 && cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !g.valid().is_empty() {
            let eval_cfg = EvalConfig {
                rerank_k: 1,
                ..EvalConfig::default()
            };
            let report = evaluator::evaluate(params, table, g, Split::Valid, &eval_cfg)?;
            if report.report.mean_rank_raw < best {
                best = report.report.mean_rank_raw;
                best_epoch = epoch;
            } else if epoch - best_epoch >= cfg.early_stop_patience {
                return Ok((log, Some(epoch)));
            }
        }
    }
    Ok((log, None))
}

/// Trains TransE embeddings from a random start. Projections are identity.
pub fn init_transe(g: &KnowledgeGraph, cfg: &TrainConfig) -> Result<ModelParams> {
    let cfg = TrainConfig {
        stage: Stage::TransE,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::random(g.n_entities(), g.n_relations(), cfg.entity_dim, cfg.relation_dim, &mut rng);
    let mut logger = Logger::open(None)?;
    run_stage(g, &PathTable::empty(), &mut params, &cfg, &mut rng, &TrainOptions::default(), &mut logger)?;
    Ok(params)
}

/// Runs the configured stage. TransR and PTransR start from `opts.init`
/// or, failing that, from a TransE warm start (random init when
/// `entity_dim != relation_dim`). TransR ignores `table`; PTransR requires it.
pub fn train(
    g: &KnowledgeGraph,
    table: Option<&PathTable>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut logger = Logger::open(opts.log_path.as_deref())?;
    let empty = PathTable::empty();

    if cfg.stage == Stage::TransE {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ModelParams::random(g.n_entities(), g.n_relations(), cfg.entity_dim, cfg.relation_dim, &mut rng);
        let (log, stopped_early) = run_stage(g, &empty, &mut params, cfg, &mut rng, opts, &mut logger)?;
        return Ok(TrainOutcome {
            params,
            log,
            stopped_early,
        });
    }

    let table = match (cfg.stage, table) {
        (Stage::PTransR, Some(t)) => t,
        (Stage::PTransR, None) => return Err(Error::config("the PTransR stage needs a path table")),
        _ => &empty,
    };

    let mut params = match &opts.init {
        Some(init) => {
            if init.n_entities() != g.n_entities()
                || init.n_relations() != g.n_relations()
                || init.entity_dim() != cfg.entity_dim
                || init.relation_dim() != cfg.relation_dim
            {
                return Err(Error::Dimension(format!(
                    "initial model is {}x{} (k={}, d={}), graph and config need {}x{} (k={}, d={})",
                    init.n_entities(),
                    init.n_relations(),
                    init.entity_dim(),
                    init.relation_dim(),
                    g.n_entities(),
                    g.n_relations(),
                    cfg.entity_dim,
                    cfg.relation_dim
                )));
            }
            init.clone()
        }
        None if cfg.entity_dim == cfg.relation_dim => {
            let warm = cfg.warm_start();
            let mut rng = ChaCha8Rng::seed_from_u64(warm.seed);
            let mut params =
                ModelParams::random(g.n_entities(), g.n_relations(), warm.entity_dim, warm.relation_dim, &mut rng);
            run_stage(g, &empty, &mut params, &warm, &mut rng, &TrainOptions::default(), &mut logger)?;
            params
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            ModelParams::random(g.n_entities(), g.n_relations(), cfg.entity_dim, cfg.relation_dim, &mut rng)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (log, stopped_early) = run_stage(g, table, &mut params, cfg, &mut rng, opts, &mut logger)?;
    Ok(TrainOutcome {
        params,
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::augment_inverse;
    use crate::models::l2_norm;

    fn chain_graph() -> KnowledgeGraph {
        let train = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 3)];
        augment_inverse(KnowledgeGraph::from_ids(4, 1, train, vec![], vec![]).unwrap()).unwrap()
    }

    #[test]
    fn config_round_trip() {
        let text = "stage = transr\nlr=0.01 # comment\n\nentity_dim=20\nrelation_dim=20\nneg_mode=bern\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.stage, Stage::TransR);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.neg_mode, NegMode::Bernoulli);
        assert_eq!(TrainConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn config_errors() {
        assert!(TrainConfig::parse("nonsense").is_err());
        assert!(TrainConfig::parse("bogus=1").is_err());
        assert!(TrainConfig::parse("lr=abc").is_err());
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            stage: Stage::TransE,
            relation_dim: 7,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.lr, cfg.entity_dim, cfg.relation_dim), (0.001, 50, 50));
        assert_eq!((cfg.margin_triple, cfg.margin_path, cfg.batch_size), (1.0, 1.0, 4800));
        assert_eq!(cfg.epochs, 500);
        let warm = cfg.warm_start();
        assert_eq!((warm.margin, warm.lr, warm.neg_mode, warm.epochs), (1.0, 0.01, NegMode::Uniform, 1000));
    }

    #[test]
    fn tail_corruption_on_two_entities() {
        let train = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 0)];
        let g = KnowledgeGraph::from_ids(2, 1, train, vec![], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let neg = sample_negative(&g, Triple::new(0, 0, 1), SlotDistribution::Entity { head_prob: 0.0 }, &mut rng)
                .unwrap();
            assert_eq!(neg.slot, Slot::Tail);
            assert_eq!(neg.corrupted, Triple::new(0, 0, 0));
        }
    }

    #[test]
    fn relation_corruption_changes_relation() {
        let g = augment_inverse(
            KnowledgeGraph::from_ids(3, 3, vec![Triple::new(0, 0, 1), Triple::new(0, 1, 1)], vec![], vec![]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let neg = sample_negative(&g, Triple::new(0, 0, 1), SlotDistribution::Relation, &mut rng).unwrap();
            assert_eq!(neg.slot, Slot::Relation);
            assert_ne!(neg.corrupted.r, 0);
            assert_ne!(neg.corrupted.r, 1);
            assert_eq!((neg.corrupted.h, neg.corrupted.t), (0, 1));
        }
    }

    #[test]
    fn saturated_slot_exhausts() {
        // every tail corruption of (0,0,·) is a training fact
        let train = vec![Triple::new(0, 0, 0), Triple::new(0, 0, 1)];
        let g = KnowledgeGraph::from_ids(2, 1, train, vec![], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_negative(&g, Triple::new(0, 0, 1), SlotDistribution::Entity { head_prob: 0.0 }, &mut rng),
            Err(Error::SamplingExhausted(MAX_NEGATIVE_ATTEMPTS))
        ));
    }

    #[test]
    fn uniform_head_frequency() {
        let g = chain_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let mut heads = 0usize;
        for _ in 0..draws {
            let neg = sample_negative(&g, Triple::new(0, 0, 1), SlotDistribution::Entity { head_prob: 0.5 }, &mut rng)
                .unwrap();
            heads += (neg.slot == Slot::Head) as usize;
        }
        let freq = heads as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "head frequency {freq}");
        // chi-square with one degree of freedom, 99.9% critical value
        let expected = draws as f64 / 2.0;
        let chi2 = ((heads as f64 - expected).powi(2) + ((draws - heads) as f64 - expected).powi(2)) / expected;
        assert!(chi2 < 10.83, "chi2 {chi2}");
    }

    #[test]
    fn satisfied_margin_leaves_params_untouched() {
        let mut params = ModelParams::zeros(3, 1, 2, 2);
        params.entity_mut(0).copy_from_slice(&[0.0, 0.0]);
        params.entity_mut(1).copy_from_slice(&[1.0, 0.0]);
        params.entity_mut(2).copy_from_slice(&[-1.0, 1.0]);
        params.relation_mut(0).copy_from_slice(&[1.0, 0.0]);
        let before = params.clone();
        let mut touched = Touched::default();
        // E(pos) = 0, E(neg) = ‖(1,0) − (−1,1)‖² = 5 > γ₁
        let loss = transr_step(&mut params, Triple::new(0, 0, 1), Triple::new(0, 0, 2), 1.0, 0.1, &mut touched);
        assert_eq!(loss, 0.0);
        assert_eq!(params, before);
        assert!(touched.is_empty());
    }

    #[test]
    fn path_hinge_with_equal_energies() {
        // p = r0 + r1 = (1,1); r2 = (1,0), r3 = (0,1): both ‖p − r‖² = 1,
        // so with R = 0.5 both energies are 0.5 and the hinge is γ₂ = 1.
        let mut params = ModelParams::zeros(1, 4, 2, 2);
        params.relation_mut(0).copy_from_slice(&[1.0, 0.0]);
        params.relation_mut(1).copy_from_slice(&[0.0, 1.0]);
        params.relation_mut(2).copy_from_slice(&[1.0, 0.0]);
        params.relation_mut(3).copy_from_slice(&[0.0, 1.0]);
        let p = RelPath::pair(0, 1);
        assert_eq!(path_energy(&params, p, 2, 0.5), 0.5);
        assert_eq!(path_energy(&params, p, 3, 0.5), 0.5);
        let before = params.clone();
        let mut touched = Touched::default();
        let hinge = path_step(&mut params, p, 2, 3, 0.5, 1.0, 1.0, 0.1, &mut touched);
        assert_eq!(hinge, 1.0);
        assert_ne!(params, before);
        assert_eq!(touched.relations.iter().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(params.entities(), before.entities());
    }

    #[test]
    fn transe_warm_start_reduces_chain_score() {
        let g = chain_graph();
        let cfg = TrainConfig {
            entity_dim: 8,
            relation_dim: 8,
            batch_size: 2,
            epochs: 200,
            lr: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = ModelParams::random(4, 2, 8, 8, &mut rng);
        let mean = |p: &ModelParams| {
            g.train()
                .iter()
                .map(|tr| crate::models::score_transe(p, tr.h, tr.r, tr.t, Norm::L2))
                .sum::<f64>()
                / g.train().len() as f64
        };
        let trained = init_transe(&g, &cfg).unwrap();
        assert!(mean(&trained) < mean(&init), "{} !< {}", mean(&trained), mean(&init));
        for e in 0..4 {
            assert!((l2_norm(trained.entity(e)) - 1.0).abs() < 1e-5);
        }
        // identity projections: TransR energy is squared TransE distance
        for tr in g.train() {
            let d = crate::models::score_transe(&trained, tr.h, tr.r, tr.t, Norm::L2);
            assert!((score_transr(&trained, tr.h, tr.r, tr.t) - d * d).abs() < 1e-9);
        }
    }

    #[test]
    fn ptransr_requires_table() {
        let g = chain_graph();
        let cfg = TrainConfig {
            entity_dim: 4,
            relation_dim: 4,
            epochs: 1,
            warm_epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&g, None, &cfg, &TrainOptions::default()), Err(Error::Config(_))));
        let transr = TrainConfig {
            stage: Stage::TransR,
            ..cfg
        };
        assert!(train(&g, None, &transr, &TrainOptions::default()).is_ok());
    }

    #[test]
    fn init_dimension_mismatch() {
        let g = chain_graph();
        let cfg = TrainConfig {
            stage: Stage::TransR,
            entity_dim: 4,
            relation_dim: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        let opts = TrainOptions {
            init: Some(ModelParams::zeros(4, 2, 3, 3)),
            ..TrainOptions::default()
        };
        assert!(matches!(train(&g, None, &cfg, &opts), Err(Error::Dimension(_))));
    }

    #[test]
    fn log_and_checkpoints_written() {
        let g = chain_graph();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            stage: Stage::TransR,
            entity_dim: 4,
            relation_dim: 4,
            epochs: 4,
            warm_epochs: 2,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        let opts = TrainOptions {
            checkpoint_dir: Some(dir.path().join("ckpt")),
            log_path: Some(dir.path().join("log.jsonl")),
            ..TrainOptions::default()
        };
        let out = train(&g, None, &cfg, &opts).unwrap();
        assert_eq!(out.log.len(), 4);
        let log = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
        let records: Vec<LogRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 6);
        assert_eq!(records[0].stage, Stage::TransE);
        assert_eq!(records[5].stage, Stage::TransR);
        let ck = ModelParams::load(&dir.path().join("ckpt/checkpoint-4.ptrm")).unwrap();
        assert_eq!(ck, out.params);
        assert!(dir.path().join("ckpt/checkpoint-2.ptrm").exists());
    }

    #[test]
    fn multi_worker_epochs_keep_constraints() {
        let train_set: Vec<Triple> = (0..40u32).map(|i| Triple::new(i % 20, i % 3, (i * 7 + 1) % 20)).collect();
        let g = augment_inverse(KnowledgeGraph::from_ids(20, 3, train_set, vec![], vec![]).unwrap()).unwrap();
        let table = PathTable::build(&g, &crate::paths::PathConfig::default()).unwrap().0;
        let cfg = TrainConfig {
            stage: Stage::PTransR,
            entity_dim: 6,
            relation_dim: 6,
            batch_size: 16,
            epochs: 5,
            warm_epochs: 2,
            lr: 0.01,
            workers: 4,
            ..TrainConfig::default()
        };
        let out = train(&g, Some(&table), &cfg, &TrainOptions::default()).unwrap();
        assert!(out.params.is_finite());
        assert!(out.log.iter().all(|s| s.loss.is_finite()));
        for e in 0..20 {
            assert!((l2_norm(out.params.entity(e)) - 1.0).abs() < 1e-5);
        }
    }
}
