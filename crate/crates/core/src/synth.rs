//! Synthetic knowledge graphs built from composition rules.
//!
//! Every base relation is a random total function over the entities. A rule
//! `(r1, r2) -> r3` makes `r3` the composition `r2 ∘ r1`, so each `r3` fact
//! `(h, r3, t)` is witnessed by a two-hop walk `h -r1-> m -r2-> t`. A share of
//! the composed facts is held out into valid and test; random noise facts are
//! then mixed into train.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgdata::{write_split, EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRule {
    pub first: RelationId,
    pub second: RelationId,
    pub composed: RelationId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticKgSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub rules: Vec<CompositionRule>,
    /// Fraction of the final train split made of random facts, in `[0, 1)`.
    pub noise: f64,
    /// Fraction of composed facts removed from train.
    pub holdout: f64,
    /// Share of the held-out facts that go to valid rather than test.
    pub valid_share: f64,
    /// Dimension of the latent entity positions; 0 draws every base
    /// relation as an unstructured random function.
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticKgSpec {
    fn default() -> Self {
        SyntheticKgSpec {
            n_entities: 50,
            n_relations: 3,
            rules: vec![CompositionRule {
                first: 0,
                second: 1,
                composed: 2,
            }],
            noise: 0.1,
            holdout: 0.2,
            valid_share: 0.2,
            latent_dim: 0,
            seed: 1,
        }
    }
}

impl SyntheticKgSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 2 {
            return Err(Error::config("synthetic graph needs at least 2 entities"));
        }
        if self.rules.is_empty() {
            return Err(Error::config("synthetic graph needs at least one composition rule"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::config(format!("noise {} outside [0, 1)", self.noise)));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::config(format!("holdout {} outside (0, 1)", self.holdout)));
        }
        if !(0.0..1.0).contains(&self.valid_share) {
            return Err(Error::config(format!("valid share {} outside [0, 1)", self.valid_share)));
        }
        let heads: HashSet<RelationId> = self.rules.iter().map(|r| r.composed).collect();
        if heads.len() != self.rules.len() {
            return Err(Error::config("each relation may be composed by at most one rule"));
        }
        for rule in &self.rules {
            for r in [rule.first, rule.second, rule.composed] {
                if r as usize >= self.n_relations {
                    return Err(Error::config(format!(
                        "rule references relation {r} but only {} exist",
                        self.n_relations
                    )));
                }
            }
            if heads.contains(&rule.first) || heads.contains(&rule.second) {
                return Err(Error::config("rule bodies must use base relations only"));
            }
        }
        Ok(())
    }
}

/// A generated graph; ids follow the `e<i>` / `r<i>` naming of
/// [`KnowledgeGraph::from_ids`].
#[derive(Debug, Clone)]
pub struct SyntheticKg {
    pub graph: KnowledgeGraph,
    /// Number of random facts in train.
    pub noise_facts: usize,
}

impl SyntheticKg {
    /// Writes `train.tsv`, `valid.tsv` and `test.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let g = &self.graph;
        write_split(&dir.join("train.tsv"), g.vocab(), g.train())?;
        write_split(&dir.join("valid.tsv"), g.vocab(), g.valid())?;
        write_split(&dir.join("test.tsv"), g.vocab(), g.test())
    }
}

/// Entity closest to `latent[h] + offset`, excluding `h` itself.
fn nearest(latent: &[Vec<f64>], h: usize, offset: &[f64]) -> EntityId {
    let target: Vec<f64> = latent[h].iter().zip(offset).map(|(x, o)| x + o).collect();
    let dist = |e: usize| -> f64 { latent[e].iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum() };
    (0..latent.len())
        .filter(|&e| e != h)
        .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
        .expect("at least two entities") as EntityId
}

pub fn generate(spec: &SyntheticKgSpec) -> Result<SyntheticKg> {
    spec.validate()?;
    let n = spec.n_entities;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let composed: HashSet<RelationId> = spec.rules.iter().map(|r| r.composed).collect();
    let mut maps: Vec<Option<Vec<EntityId>>> = vec![None; spec.n_relations];
    let mut clean = Vec::new();
    let latent: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..spec.latent_dim).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    for r in 0..spec.n_relations as RelationId {
        if composed.contains(&r) {
            continue;
        }
        let map: Vec<EntityId> = if spec.latent_dim == 0 {
            (0..n)
                .map(|h| loop {
                    let t = rng.gen_range(0..n);
                    if t != h {
                        break t as EntityId;
                    }
                })
                .collect()
        } else {
            let offset: Vec<f64> = (0..spec.latent_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (0..n).map(|h| nearest(&latent, h, &offset)).collect()
        };
        clean.extend(map.iter().enumerate().map(|(h, &t)| Triple::new(h as EntityId, r, t)));
        maps[r as usize] = Some(map);
    }

    let mut held = Vec::new();
    for rule in &spec.rules {
        let first = maps[rule.first as usize].as_ref().expect("base relation");
        let second = maps[rule.second as usize].as_ref().expect("base relation");
        let mut facts: Vec<Triple> = (0..n)
            .map(|h| Triple::new(h as EntityId, rule.composed, second[first[h] as usize]))
            .collect();
        facts.sort_unstable();
        facts.dedup();
        facts.shuffle(&mut rng);
        let n_held = (spec.holdout * facts.len() as f64).round() as usize;
        if n_held < 2 || n_held >= facts.len() {
            return Err(Error::config(format!(
                "rule for relation {} yields {} facts; too few to hold out {} of them",
                rule.composed,
                facts.len(),
                spec.holdout
            )));
        }
        held.extend(facts.drain(..n_held));
        clean.extend(facts);
    }

    held.shuffle(&mut rng);
    let n_valid = ((spec.valid_share * held.len() as f64).round() as usize).clamp(1, held.len() - 1);
    let test = held.split_off(n_valid);
    let valid = held;

    let n_noise = (spec.noise / (1.0 - spec.noise) * clean.len() as f64).round() as usize;
    let mut taken: HashSet<Triple> = clean.iter().chain(&valid).chain(&test).copied().collect();
    let capacity = n * (n - 1) * spec.n_relations;
    if taken.len() + n_noise > capacity {
        return Err(Error::config("too few entities to place the requested noise"));
    }
    let target = clean.len() + n_noise;
    let mut train = clean;
    while train.len() < target {
        let h = rng.gen_range(0..n) as EntityId;
        let t = rng.gen_range(0..n) as EntityId;
        let r = rng.gen_range(0..spec.n_relations) as RelationId;
        let tr = Triple::new(h, r, t);
        if h != t && taken.insert(tr) {
            train.push(tr);
        }
    }
    train.shuffle(&mut rng);

    let graph = KnowledgeGraph::from_ids(n, spec.n_relations, train, valid, test)?;
    Ok(SyntheticKg {
        graph,
        noise_facts: n_noise,
    })
}
