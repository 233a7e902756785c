//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use rand::Rng;

use ptransr::kgdata::{KnowledgeGraph, Triple};
use ptransr::models::{grad_path_energy, grad_score_transr, path_energy, score_ptransr, score_transr, ModelParams};
use ptransr::paths::{PathTable, RelPath};

/// Random triples over at most `max_e` entities and `max_r` relations;
/// duplicates and self-loops allowed.
pub fn random_triples<R: Rng>(rng: &mut R, max_e: usize, max_r: usize) -> (usize, usize, Vec<Triple>) {
    let n_e = rng.gen_range(2..=max_e);
    let n_r = rng.gen_range(1..=max_r);
    let n_t = rng.gen_range(1..=3 * n_e);
    let triples = (0..n_t)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..n_e) as u32,
                rng.gen_range(0..n_r) as u32,
                rng.gen_range(0..n_e) as u32,
            )
        })
        .collect();
    (n_e, n_r, triples)
}

pub fn graph_of(n_e: usize, n_r: usize, triples: Vec<Triple>) -> KnowledgeGraph {
    KnowledgeGraph::from_ids(n_e, n_r, triples, vec![], vec![]).unwrap()
}

/// Every relation sequence of length one or two.
pub fn all_paths(n_r: usize) -> Vec<RelPath> {
    let n = n_r as u32;
    let mut out: Vec<RelPath> = (0..n).map(RelPath::single).collect();
    for a in 0..n {
        for b in 0..n {
            out.push(RelPath::pair(a, b));
        }
    }
    out
}

/// Sum over every walk `h → … → t` following `path` of the product of
/// `1 / |distinct r-successors|` at each step, from the raw edge list.
pub fn walk_probability(edges: &[Triple], h: u32, path: &[u32], t: u32) -> f64 {
    let set: HashSet<(u32, u32, u32)> = edges.iter().map(|e| (e.h, e.r, e.t)).collect();
    let succ = |e: u32, r: u32| -> BTreeSet<u32> {
        set.iter().filter(|(a, b, _)| *a == e && *b == r).map(|(_, _, c)| *c).collect()
    };
    fn go(succ: &dyn Fn(u32, u32) -> BTreeSet<u32>, at: u32, rest: &[u32], t: u32) -> f64 {
        match rest.split_first() {
            None => (at == t) as u8 as f64,
            Some((&r, tail)) => {
                let next = succ(at, r);
                let share = 1.0 / next.len().max(1) as f64;
                next.into_iter().map(|c| share * go(succ, c, tail, t)).sum()
            }
        }
    }
    go(&succ, h, path, t)
}

pub fn random_params<R: Rng>(rng: &mut R, n_e: usize, n_r: usize, k: usize, d: usize) -> ModelParams {
    let mut p = ModelParams::random(n_e, n_r, k, d, rng);
    for r in 0..n_r as u32 {
        for x in p.proj_mut(r) {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    p
}

/// Central difference of `f` with respect to one `f32` coordinate. The
/// divisor is the perturbation actually representable in `f32`.
pub fn central_difference(
    params: &mut ModelParams,
    get: impl Fn(&mut ModelParams) -> &mut f32,
    f: impl Fn(&ModelParams) -> f64,
    eps: f32,
) -> f64 {
    let x0 = *get(params);
    let up = x0 + eps;
    let down = x0 - eps;
    *get(params) = up;
    let fu = f(params);
    *get(params) = down;
    let fd = f(params);
    *get(params) = x0;
    (fu - fd) / (up as f64 - down as f64)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Relative error of the full TransR gradient, concatenated over the
/// entity vectors, `r` and `M_r`. When `h == t` the two entity gradients
/// are summed since they act on the same vector.
pub fn transr_gradient_error(params: &mut ModelParams, h: u32, r: u32, t: u32) -> f64 {
    let g = grad_score_transr(params, h, r, t);
    let f = |p: &ModelParams| score_transr(p, h, r, t);
    let (k, d) = (params.entity_dim(), params.relation_dim());
    let eps = 1e-2;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let entities: Vec<(u32, Vec<f64>)> = if h == t {
        vec![(h, g.h.iter().zip(&g.t).map(|(a, b)| a + b).collect())]
    } else {
        vec![(h, g.h.clone()), (t, g.t.clone())]
    };
    for (e, grad) in entities {
        analytic.extend(grad);
        numeric.extend((0..k).map(|j| central_difference(params, |p| &mut p.entity_mut(e)[j], f, eps)));
    }
    analytic.extend(&g.r);
    numeric.extend((0..d).map(|i| central_difference(params, |p| &mut p.relation_mut(r)[i], f, eps)));
    analytic.extend(&g.m);
    numeric.extend((0..d * k).map(|i| central_difference(params, |p| &mut p.proj_mut(r)[i], f, eps)));
    relative_error(&analytic, &numeric)
}

/// Relative error of the path-energy gradient, concatenated over every
/// relation vector it touches.
pub fn path_gradient_error(params: &mut ModelParams, p: RelPath, r: u32, reliability: f64) -> f64 {
    let f = |q: &ModelParams| path_energy(q, p, r, reliability);
    let d = params.relation_dim();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (rel, grad) in grad_path_energy(params, p, r, reliability) {
        analytic.extend(grad);
        numeric.extend((0..d).map(|i| central_difference(params, |q| &mut q.relation_mut(rel)[i], f, 1e-2)));
    }
    relative_error(&analytic, &numeric)
}

/// Single-stage rank of the gold entity by `f(h,r,t) + f(t,r⁻¹,h)` over
/// all candidates, pessimistic ties, with and without known facts.
pub fn exhaustive_rank(
    params: &ModelParams,
    table: &PathTable,
    g: &KnowledgeGraph,
    tr: Triple,
    head: bool,
) -> (usize, usize) {
    let r_inv = g.inverse_of(tr.r).unwrap();
    let fused = |h: u32, t: u32| {
        score_ptransr(params, table, h, tr.r, t) + score_ptransr(params, table, t, r_inv, h)
    };
    let cand = |e: u32| if head { Triple::new(e, tr.r, tr.t) } else { Triple::new(tr.h, tr.r, e) };
    let gold = if head { tr.h } else { tr.t };
    let score = |e: u32| {
        let c = cand(e);
        fused(c.h, c.t)
    };
    let s_gold = score(gold);
    let (mut raw, mut filt) = (1, 1);
    for e in 0..g.n_entities() as u32 {
        if e == gold {
            continue;
        }
        if score(e) <= s_gold {
            raw += 1;
            if !g.is_known(&cand(e)) {
                filt += 1;
            }
        }
    }
    (raw, filt)
}
