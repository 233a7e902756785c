//! Embedding parameters and the TransE / TransR / path scoring functions.
//!
//! Parameters are stored as `f32`; every reduction accumulates in `f64`.
//! Entity vectors live in `R^k`, relation vectors in `R^d`, and each relation
//! owns a `d × k` projection matrix stored row-major.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{LeReader, LeWriter};
use crate::kgdata::{EntityId, RelationId, Triple};
use crate::paths::{PathTable, RelPath};

const MAGIC: &[u8; 4] = b"PTRM";
const VERSION: u32 = 1;

/// Slack before a unit-norm constraint is re-imposed.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::config(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k: usize,
    d: usize,
    n_entities: usize,
    n_relations: usize,
    entity: Vec<f32>,
    relation: Vec<f32>,
    proj: Vec<f32>,
}

impl ModelParams {
    /// All-zero vectors with identity projections.
    pub fn zeros(n_entities: usize, n_relations: usize, k: usize, d: usize) -> Self {
        let mut p = ModelParams {
            k,
            d,
            n_entities,
            n_relations,
            entity: vec![0.0; n_entities * k],
            relation: vec![0.0; n_relations * d],
            proj: vec![0.0; n_relations * d * k],
        };
        p.reset_projections();
        p
    }

    /// Uniform `±6/√dim` initialisation, normalised to unit length, with
    /// identity projections.
    pub fn random<R: Rng + ?Sized>(
        n_entities: usize,
        n_relations: usize,
        k: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(n_entities, n_relations, k, d);
        let be = 6.0 / (k as f32).sqrt();
        for x in &mut p.entity {
            *x = rng.gen_range(-be..be);
        }
        let br = 6.0 / (d as f32).sqrt();
        for x in &mut p.relation {
            *x = rng.gen_range(-br..br);
        }
        for e in 0..n_entities {
            normalize(p.entity_mut(e as EntityId));
        }
        for r in 0..n_relations {
            normalize(p.relation_mut(r as RelationId));
        }
        p
    }

    pub fn from_parts(
        k: usize,
        d: usize,
        entity: Vec<f32>,
        relation: Vec<f32>,
        proj: Vec<f32>,
    ) -> Result<Self> {
        if k == 0 || d == 0 || !entity.len().is_multiple_of(k) || !relation.len().is_multiple_of(d) {
            return Err(Error::Dimension(format!(
                "entity/relation buffers not divisible by k={k}, d={d}"
            )));
        }
        let n_entities = entity.len() / k;
        let n_relations = relation.len() / d;
        if proj.len() != n_relations * d * k {
            return Err(Error::Dimension(format!(
                "projection tensor has {} values, expected {}",
                proj.len(),
                n_relations * d * k
            )));
        }
        Ok(ModelParams {
            k,
            d,
            n_entities,
            n_relations,
            entity,
            relation,
            proj,
        })
    }

    /// Sets every projection to the `d × k` matrix with ones on the diagonal.
    pub fn reset_projections(&mut self) {
        self.proj.iter_mut().for_each(|x| *x = 0.0);
        let (d, k) = (self.d, self.k);
        for r in 0..self.n_relations {
            let m = &mut self.proj[r * d * k..(r + 1) * d * k];
            for i in 0..d.min(k) {
                m[i * k + i] = 1.0;
            }
        }
    }

    pub fn entity_dim(&self) -> usize {
        self.k
    }

    pub fn relation_dim(&self) -> usize {
        self.d
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn entity(&self, e: EntityId) -> &[f32] {
        let k = self.k;
        &self.entity[e as usize * k..(e as usize + 1) * k]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [f32] {
        let k = self.k;
        &mut self.entity[e as usize * k..(e as usize + 1) * k]
    }

    pub fn relation(&self, r: RelationId) -> &[f32] {
        let d = self.d;
        &self.relation[r as usize * d..(r as usize + 1) * d]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut [f32] {
        let d = self.d;
        &mut self.relation[r as usize * d..(r as usize + 1) * d]
    }

    /// Row-major `d × k` projection of `r`.
    pub fn proj(&self, r: RelationId) -> &[f32] {
        let n = self.d * self.k;
        &self.proj[r as usize * n..(r as usize + 1) * n]
    }

    pub fn proj_mut(&mut self, r: RelationId) -> &mut [f32] {
        let n = self.d * self.k;
        &mut self.proj[r as usize * n..(r as usize + 1) * n]
    }

    pub fn entities(&self) -> &[f32] {
        &self.entity
    }

    pub fn relations(&self) -> &[f32] {
        &self.relation
    }

    pub fn projections(&self) -> &[f32] {
        &self.proj
    }

    pub fn is_finite(&self) -> bool {
        self.entity
            .iter()
            .chain(&self.relation)
            .chain(&self.proj)
            .all(|x| x.is_finite())
    }

    /// `M_r e` in relation space.
    pub fn project(&self, r: RelationId, e: EntityId) -> Vec<f64> {
        matvec(self.proj(r), self.d, self.k, self.entity(e))
    }

    /// Serialises to the `PTRM` binary format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::new(Vec::new());
        self.write_to(&mut w).expect("write to Vec");
        w.into_inner()
    }

    fn write_to<W: Write>(&self, w: &mut LeWriter<W>) -> std::io::Result<()> {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.k as u32)?;
        w.u32(self.d as u32)?;
        w.u32(self.n_entities as u32)?;
        w.u32(self.n_relations as u32)?;
        w.f32_slice(&self.entity)?;
        w.f32_slice(&self.relation)?;
        w.f32_slice(&self.proj)
    }

    fn read_from<R: std::io::Read>(r: &mut LeReader<R>) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            kind: "model",
            detail,
        };
        let trunc = |e: std::io::Error| bad(format!("truncated or unreadable: {e}"));
        let magic: [u8; 4] = r.array().map_err(trunc)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().map_err(trunc)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let k = r.u32().map_err(trunc)? as usize;
        let d = r.u32().map_err(trunc)? as usize;
        let n_e = r.u32().map_err(trunc)? as usize;
        let n_r = r.u32().map_err(trunc)? as usize;
        let entity = r.f32_vec(n_e * k).map_err(trunc)?;
        let relation = r.f32_vec(n_r * d).map_err(trunc)?;
        let proj = r.f32_vec(n_r * d * k).map_err(trunc)?;
        if !r.at_eof().map_err(trunc)? {
            return Err(bad("trailing bytes".into()));
        }
        Ok(ModelParams {
            k,
            d,
            n_entities: n_e,
            n_relations: n_r,
            entity,
            relation,
            proj,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut LeReader::new(bytes))
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
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Rescales `v` to unit L2 norm unless it is already within tolerance.
/// Returns whether `v` changed.
pub(crate) fn normalize(v: &mut [f32]) -> bool {
    let n = l2_norm(v);
    if n == 0.0 || (n - 1.0).abs() <= NORM_TOLERANCE {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}

/// `m x` for a row-major `rows × cols` matrix.
pub(crate) fn matvec(m: &[f32], rows: usize, cols: usize, x: &[f32]) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            m[i * cols..(i + 1) * cols]
                .iter()
                .zip(x)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        })
        .collect()
}

/// TransE distance `‖h + r − t‖` of raw vectors.
pub fn transe_distance(h: &[f32], r: &[f32], t: &[f32], norm: Norm) -> f64 {
    let diffs = h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((&h, &r), &t)| h as f64 + r as f64 - t as f64);
    match norm {
        Norm::L1 => diffs.map(f64::abs).sum(),
        Norm::L2 => diffs.map(|x| x * x).sum::<f64>().sqrt(),
    }
}

pub fn score_transe(params: &ModelParams, h: EntityId, r: RelationId, t: EntityId, norm: Norm) -> f64 {
    assert_eq!(
        params.k, params.d,
        "TransE scoring needs equal entity and relation dimensions"
    );
    transe_distance(params.entity(h), params.relation(r), params.entity(t), norm)
}

/// `‖M h + r − M t‖²` for raw buffers; `m` is row-major `d × k`.
pub fn transr_energy(m: &[f32], d: usize, k: usize, h: &[f32], r: &[f32], t: &[f32]) -> Result<f64> {
    if m.len() != d * k || h.len() != k || t.len() != k || r.len() != d {
        return Err(Error::Dimension(format!(
            "matrix {} values, h {}, r {}, t {} for d={d}, k={k}",
            m.len(),
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(transr_residual(m, d, k, h, r, t).iter().map(|u| u * u).sum())
}

/// `u = M h + r − M t`, evaluated as `(Mh)ᵢ + rᵢ − (Mt)ᵢ` so that scoring
/// from pre-projected entities gives bitwise-identical energies.
fn transr_residual(m: &[f32], d: usize, k: usize, h: &[f32], r: &[f32], t: &[f32]) -> Vec<f64> {
    let mh = matvec(m, d, k, h);
    let mt = matvec(m, d, k, t);
    projected_residual(&mh, r, &mt)
}

pub(crate) fn projected_residual(mh: &[f64], r: &[f32], mt: &[f64]) -> Vec<f64> {
    mh.iter()
        .zip(r)
        .zip(mt)
        .map(|((&a, &b), &c)| a + b as f64 - c)
        .collect()
}

/// `‖Mh + r − Mt‖²` from pre-projected entities.
pub(crate) fn projected_energy(mh: &[f64], r: &[f32], mt: &[f64]) -> f64 {
    mh.iter()
        .zip(r)
        .zip(mt)
        .map(|((&a, &b), &c)| {
            let u = a + b as f64 - c;
            u * u
        })
        .sum()
}

/// TransR energy `E(h,r,t) = ‖M_r h + r − M_r t‖²`.
pub fn score_transr(params: &ModelParams, h: EntityId, r: RelationId, t: EntityId) -> f64 {
    transr_residual(
        params.proj(r),
        params.d,
        params.k,
        params.entity(h),
        params.relation(r),
        params.entity(t),
    )
    .iter()
    .map(|u| u * u)
    .sum()
}

/// Gradients of the TransR energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TransrGrad {
    pub h: Vec<f64>,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    /// Row-major `d × k`.
    pub m: Vec<f64>,
}

/// With `u = M h + r − M t`: `∂E/∂r = 2u`, `∂E/∂h = 2Mᵀu = −∂E/∂t`,
/// `∂E/∂M = 2u(h − t)ᵀ`.
pub fn grad_score_transr(params: &ModelParams, h: EntityId, r: RelationId, t: EntityId) -> TransrGrad {
    let (d, k) = (params.d, params.k);
    let m = params.proj(r);
    let hv = params.entity(h);
    let tv = params.entity(t);
    let u = transr_residual(m, d, k, hv, params.relation(r), tv);
    let mut gh = vec![0.0; k];
    let mut gm = vec![0.0; d * k];
    for i in 0..d {
        let two_u = 2.0 * u[i];
        let row = &m[i * k..(i + 1) * k];
        for j in 0..k {
            gh[j] += two_u * row[j] as f64;
            gm[i * k + j] = two_u * (hv[j] as f64 - tv[j] as f64);
        }
    }
    TransrGrad {
        t: gh.iter().map(|g| -g).collect(),
        h: gh,
        r: u.iter().map(|x| 2.0 * x).collect(),
        m: gm,
    }
}

/// Composed path vector `p = r₁ + r₂`.
pub fn path_vector(params: &ModelParams, p: RelPath) -> Vec<f64> {
    let mut v = vec![0.0; params.d];
    for r in p.relations() {
        for (acc, &x) in v.iter_mut().zip(params.relation(r)) {
            *acc += x as f64;
        }
    }
    v
}

fn path_distance_sq(params: &ModelParams, p: RelPath, r: RelationId) -> f64 {
    path_vector(params, p)
        .iter()
        .zip(params.relation(r))
        .map(|(&a, &b)| {
            let x = a - b as f64;
            x * x
        })
        .sum()
}

/// Path energy `E(p|h,r,t) = R · ‖p − r‖²`.
pub fn path_energy(params: &ModelParams, p: RelPath, r: RelationId, reliability: f64) -> f64 {
    if reliability == 0.0 {
        return 0.0;
    }
    reliability * path_distance_sq(params, p, r)
}

/// Gradient of `R · ‖p − r‖²` with respect to every relation vector it
/// touches, accumulated per relation (a relation may appear twice).
pub fn grad_path_energy(
    params: &ModelParams,
    p: RelPath,
    r: RelationId,
    reliability: f64,
) -> Vec<(RelationId, Vec<f64>)> {
    let diff: Vec<f64> = path_vector(params, p)
        .iter()
        .zip(params.relation(r))
        .map(|(&a, &b)| 2.0 * reliability * (a - b as f64))
        .collect();
    let mut out: Vec<(RelationId, Vec<f64>)> = Vec::with_capacity(3);
    let mut add = |rel: RelationId, sign: f64| {
        let slot = match out.iter().position(|(id, _)| *id == rel) {
            Some(i) => i,
            None => {
                out.push((rel, vec![0.0; diff.len()]));
                out.len() - 1
            }
        };
        for (g, &x) in out[slot].1.iter_mut().zip(&diff) {
            *g += sign * x;
        }
    };
    for ri in p.relations() {
        add(ri, 1.0);
    }
    add(r, -1.0);
    out
}

/// Reliability-weighted mean path energy `(1/Z) Σ_p R(p|h,r,t)‖p − r‖²`
/// with `Z = Σ_p R(p|h,r,t)`; zero when there are no paths or `Z = 0`.
pub fn path_term(params: &ModelParams, table: &PathTable, h: EntityId, r: RelationId, t: EntityId) -> f64 {
    let mut z = 0.0;
    let mut sum = 0.0;
    for (p, rel) in table.weighted_paths(h, r, t) {
        z += rel;
        sum += path_energy(params, p, r, rel);
    }
    if z > 0.0 {
        sum / z
    } else {
        0.0
    }
}

/// PTransR score: TransR energy plus the normalised path energy.
pub fn score_ptransr(
    params: &ModelParams,
    table: &PathTable,
    h: EntityId,
    r: RelationId,
    t: EntityId,
) -> f64 {
    score_transr(params, h, r, t) + path_term(params, table, h, r, t)
}

/// Rows touched by a round of SGD updates.
#[derive(Debug, Clone, Default)]
pub struct Touched {
    pub entities: BTreeSet<EntityId>,
    pub relations: BTreeSet<RelationId>,
    pub triples: Vec<Triple>,
}

impl Touched {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty() && self.triples.is_empty()
    }

    pub fn clear(&mut self) {
        self.entities.clear();
        self.relations.clear();
        self.triples.clear();
    }
}

/// Re-imposes `‖e‖ = ‖r‖ = 1` on touched rows and `‖M_r e‖ ≤ 1` on the
/// entities of touched triples by shrinking `M_r` when violated.
pub fn project_constraints(params: &mut ModelParams, touched: &Touched) {
    for &e in &touched.entities {
        normalize(params.entity_mut(e));
    }
    for &r in &touched.relations {
        normalize(params.relation_mut(r));
    }
    let (d, k) = (params.d, params.k);
    for tr in &touched.triples {
        for e in [tr.h, tr.t] {
            let n = matvec(params.proj(tr.r), d, k, params.entity(e))
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if n > 1.0 + NORM_TOLERANCE {
                for x in params.proj_mut(tr.r) {
                    *x = (*x as f64 / n) as f32;
                }
            }
        }
    }
}
