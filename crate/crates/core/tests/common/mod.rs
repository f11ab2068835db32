//! Independent oracles shared by the integration and acceptance tests. None
//! of these call into the code paths they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use probr::model::gradcheck::randomize;
use probr::model::{grad, hard_predictions, loss, predict_tables, ModelParams, QDist, TokenFeatures, Variant};
use probr::pgm::{Assignment, LogPotentials};
use probr::reasoner::{Example, ProofGraph};
use probr::theory::{Atom, Literal, NodeKind, Statement, StatementBody, Subject, Theory, NAF_ID};
use rand::seq::SliceRandom;
use rand::Rng;

// ---------------------------------------------------------------- pgm

/// Log of the unnormalized joint, written directly from the factor tables.
pub fn brute_score(lp: &LogPotentials, a: bool, v: &[bool], e: &BTreeMap<(usize, usize), bool>) -> f64 {
    let b = |x: bool| usize::from(x);
    let mut s = lp.phi_a[b(a)];
    for (i, &vi) in v.iter().enumerate() {
        s += lp.phi_v[i][2 * b(vi) + b(a)];
    }
    for (&(i, j), &eij) in e {
        s += lp.edge(i, j)[8 * b(v[i]) + 4 * b(v[j]) + 2 * b(eij) + b(a)];
    }
    s
}

/// Every ordered pair, row-major.
pub fn ordered_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

pub fn edge_map(y: &Assignment) -> BTreeMap<(usize, usize), bool> {
    ordered_pairs(y.m()).into_iter().map(|(i, j)| ((i, j), y.edge(i, j))).collect()
}

/// Log Z by summing the joint over every assignment.
pub fn brute_log_partition(lp: &LogPotentials) -> f64 {
    let m = lp.m();
    let pairs = ordered_pairs(m);
    let bits = 1 + m + pairs.len();
    let scores: Vec<f64> = (0u64..1 << bits)
        .map(|mask| {
            let a = mask & 1 == 1;
            let v: Vec<bool> = (0..m).map(|i| mask >> (1 + i) & 1 == 1).collect();
            let e = pairs
                .iter()
                .enumerate()
                .map(|(k, &p)| (p, mask >> (1 + m + k) & 1 == 1))
                .collect();
            brute_score(lp, a, &v, &e)
        })
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln()
}

/// Which single variable to flip.
#[derive(Debug, Clone, Copy)]
pub enum Flip {
    Answer,
    Node(usize),
    Edge(usize, usize),
}

/// p(var | rest) from two full-joint evaluations.
pub fn brute_conditional(lp: &LogPotentials, y: &Assignment, var: Flip) -> [f64; 2] {
    let mut scores = [0.0; 2];
    for value in [false, true] {
        let mut a = y.a;
        let mut v = y.v.clone();
        let mut e = edge_map(y);
        match var {
            Flip::Answer => a = value,
            Flip::Node(i) => v[i] = value,
            Flip::Edge(i, j) => {
                e.insert((i, j), value);
            }
        }
        scores[usize::from(value)] = brute_score(lp, a, &v, &e);
    }
    let top = scores[0].max(scores[1]);
    let z = (scores[0] - top).exp() + (scores[1] - top).exp();
    [(scores[0] - top).exp() / z, (scores[1] - top).exp() / z]
}

// ---------------------------------------------------------------- theories

const ENTS: [&str; 3] = ["Anne", "Bob", "Carol"];
const BASE: [&str; 4] = ["big", "red", "cold", "young"];
const DERIVED: [&str; 4] = ["kind", "nice", "green", "round"];

/// A random stratified theory with at most `max_statements` statements:
/// negated conditions only mention attributes that no rule concludes.
pub fn random_theory<R: Rng>(rng: &mut R, max_statements: usize) -> Theory {
    let total = rng.gen_range(1..=max_statements);
    let n_facts = rng.gen_range(1..=total);
    let mut statements = Vec::new();
    let mut seen = BTreeSet::new();
    for _ in 0..n_facts {
        let atom = Atom::new(*ENTS.choose(rng).unwrap(), *BASE.choose(rng).unwrap());
        if seen.insert(atom.clone()) {
            statements.push(Statement::fact(format!("F{}", seen.len()), atom));
        }
    }
    for k in 0..total - n_facts {
        let subject = if rng.gen_bool(0.2) {
            Subject::Entity(ENTS.choose(rng).unwrap().to_string())
        } else {
            Subject::Someone
        };
        let head = *DERIVED.choose(rng).unwrap();
        let mut body = Vec::new();
        let mut used = BTreeSet::from([head]);
        for _ in 0..rng.gen_range(1..=3) {
            let negated = rng.gen_bool(0.3);
            let attr = if negated || rng.gen_bool(0.4) {
                *BASE.choose(rng).unwrap()
            } else {
                *DERIVED.choose(rng).unwrap()
            };
            if !used.insert(attr) {
                continue;
            }
            body.push(if negated {
                Literal::negative(subject.clone(), attr)
            } else {
                Literal::positive(subject.clone(), attr)
            });
        }
        statements.push(Statement::rule(format!("R{}", k + 1), body, Literal::positive(subject, head)));
    }
    Theory::new(statements).unwrap()
}

fn theory_entities(theory: &Theory) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in theory.statements() {
        match &s.body {
            StatementBody::Fact(a) => {
                out.insert(a.entity.clone());
            }
            StatementBody::Rule(r) => {
                for l in r.body.iter().chain([&r.head]) {
                    if let Subject::Entity(e) = &l.subject {
                        out.insert(e.clone());
                    }
                }
            }
        }
    }
    out
}

fn ground(l: &Literal, entity: &str) -> Atom {
    let e = match &l.subject {
        Subject::Someone => entity.to_string(),
        Subject::Entity(x) => x.clone(),
    };
    Atom::new(e, l.attribute.clone())
}

/// Synchronous reapply-until-fixpoint. Each round fires every rule against
/// the previous round's atoms; an atom's depth is the first round holding it.
/// `negation_base` decides negated conditions; `None` means the evolving set.
pub fn naive_closure(
    facts: &[Atom],
    rules: &[&probr::theory::Rule],
    entities: &BTreeSet<String>,
    negation_base: Option<&BTreeSet<Atom>>,
) -> BTreeMap<Atom, usize> {
    let mut depth: BTreeMap<Atom, usize> = facts.iter().map(|a| (a.clone(), 0)).collect();
    for round in 1.. {
        let known: BTreeSet<Atom> = depth.keys().cloned().collect();
        let neg = negation_base.unwrap_or(&known);
        let mut fresh = Vec::new();
        for r in rules {
            for e in entities {
                let holds = r.body.iter().all(|l| {
                    let atom = ground(l, e);
                    if l.negated {
                        !neg.contains(&atom)
                    } else {
                        known.contains(&atom)
                    }
                });
                if holds {
                    let h = ground(&r.head, e);
                    if !known.contains(&h) {
                        fresh.push(h);
                    }
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        for a in fresh {
            depth.entry(a).or_insert(round);
        }
    }
    depth
}

pub fn naive_derive(theory: &Theory) -> BTreeMap<Atom, usize> {
    let facts: Vec<Atom> = theory.statements().iter().filter_map(|s| s.as_fact().cloned()).collect();
    let rules: Vec<_> = theory.statements().iter().filter_map(|s| s.as_rule()).collect();
    naive_closure(&facts, &rules, &theory_entities(theory), None)
}

/// Re-derives `target` from the proof's own facts and rules, with negated
/// conditions judged against the full theory. Returns a reason on failure.
pub fn replay(theory: &Theory, proof: &ProofGraph, target: &Atom) -> Result<(), String> {
    let full = naive_derive(theory);
    if proof.nodes.len() == 1 && proof.nodes.contains(NAF_ID) {
        return if full.contains_key(target) {
            Err(format!("NAF proof for derivable {target:?}"))
        } else {
            Ok(())
        };
    }
    let stmts: Vec<&Statement> = proof
        .nodes
        .iter()
        .filter(|n| n.as_str() != NAF_ID)
        .map(|n| theory.get(n).ok_or_else(|| format!("unknown node {n}")))
        .collect::<Result<_, _>>()?;
    let facts: Vec<Atom> = stmts.iter().filter_map(|s| s.as_fact().cloned()).collect();
    let rules: Vec<_> = stmts.iter().filter_map(|s| s.as_rule()).collect();
    let full_set: BTreeSet<Atom> = full.keys().cloned().collect();
    let got = naive_closure(&facts, &rules, &theory_entities(theory), Some(&full_set));
    if !got.contains_key(target) {
        return Err(format!("proof does not derive {target:?}"));
    }
    let uses_negation = rules.iter().any(|r| r.body.iter().any(|l| l.negated));
    if proof.nodes.contains(NAF_ID) != uses_negation {
        return Err("NAF node present iff a negated condition is used".into());
    }
    Ok(())
}

// ---------------------------------------------------------------- proofs

/// Structural checks on a proof graph: typing of endpoints and
/// destinations, acyclicity, weak connectivity, and the single-node case.
pub fn validate(kinds: &BTreeMap<String, NodeKind>, proof: &ProofGraph) -> Result<(), String> {
    if proof.nodes.is_empty() {
        return Err("no nodes".into());
    }
    for n in &proof.nodes {
        if !kinds.contains_key(n) {
            return Err(format!("unknown node {n}"));
        }
    }
    for (i, j) in &proof.edges {
        if !proof.nodes.contains(i) || !proof.nodes.contains(j) {
            return Err(format!("edge {i}->{j} leaves the node set"));
        }
        if i == j {
            return Err(format!("self loop on {i}"));
        }
        if kinds[j] != NodeKind::Rule {
            return Err(format!("edge {i}->{j} does not end at a rule"));
        }
    }
    if proof.nodes.len() == 1 {
        return if proof.edges.is_empty() { Ok(()) } else { Err("single node with edges".into()) };
    }
    // Kahn's algorithm.
    let mut indeg: BTreeMap<&String, usize> = proof.nodes.iter().map(|n| (n, 0)).collect();
    for (_, j) in &proof.edges {
        *indeg.get_mut(j).unwrap() += 1;
    }
    let mut queue: VecDeque<&String> = indeg.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
    let mut seen = 0;
    while let Some(n) = queue.pop_front() {
        seen += 1;
        for (i, j) in &proof.edges {
            if i == n {
                let d = indeg.get_mut(j).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(j);
                }
            }
        }
    }
    if seen != proof.nodes.len() {
        return Err("cycle".into());
    }
    let start = proof.nodes.iter().next().unwrap();
    let mut reached = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for (i, j) in &proof.edges {
            for (a, b) in [(i, j), (j, i)] {
                if a == n && reached.insert(b) {
                    stack.push(b);
                }
            }
        }
    }
    if reached.len() != proof.nodes.len() {
        return Err("not weakly connected".into());
    }
    Ok(())
}

pub fn kind_map(theory: &Theory) -> BTreeMap<String, NodeKind> {
    theory.node_ids().into_iter().zip(theory.node_kinds()).collect()
}

/// Best objective over every feasible edge set on `nodes`, by exhaustive
/// enumeration of edge subsets (pruned only by acyclicity).
/// Largest node set the exhaustive search is run on; cycle pruning keeps
/// six nodes under a million leaves.
pub const BRUTE_NODE_LIMIT: usize = 6;

pub fn brute_tractable(nodes: &BTreeSet<usize>) -> bool {
    nodes.len() <= BRUTE_NODE_LIMIT
}

pub fn brute_best_edges(q: &QDist, nodes: &BTreeSet<usize>, kinds: &[NodeKind]) -> Option<f64> {
    if nodes.len() == 1 {
        return Some(0.0);
    }
    let cands: Vec<(usize, usize)> = nodes
        .iter()
        .flat_map(|&i| nodes.iter().map(move |&j| (i, j)))
        .filter(|&(i, j)| i != j && kinds[j] == NodeKind::Rule)
        .collect();
    let score = |i: usize, j: usize| {
        let p = q.edge(i, j);
        p[1].ln() - p[0].ln()
    };
    let mut best: Option<f64> = None;
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    fn creates_cycle(chosen: &[(usize, usize)], from: usize, to: usize) -> bool {
        let mut stack = vec![to];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == from {
                return true;
            }
            if seen.insert(n) {
                stack.extend(chosen.iter().filter(|e| e.0 == n).map(|e| e.1));
            }
        }
        false
    }
    fn connected(nodes: &BTreeSet<usize>, edges: &[(usize, usize)]) -> bool {
        let start = *nodes.iter().next().unwrap();
        let mut reached = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &(a, b) in edges {
                for (x, y) in [(a, b), (b, a)] {
                    if x == n && reached.insert(y) {
                        stack.push(y);
                    }
                }
            }
        }
        reached.len() == nodes.len()
    }
    fn walk(
        k: usize,
        cands: &[(usize, usize)],
        chosen: &mut Vec<(usize, usize)>,
        nodes: &BTreeSet<usize>,
        score: &dyn Fn(usize, usize) -> f64,
        best: &mut Option<f64>,
    ) {
        if k == cands.len() {
            if connected(nodes, chosen) {
                let s: f64 = chosen.iter().map(|&(i, j)| score(i, j)).sum();
                if best.map_or(true, |b| s > b) {
                    *best = Some(s);
                }
            }
            return;
        }
        walk(k + 1, cands, chosen, nodes, score, best);
        let (i, j) = cands[k];
        if !creates_cycle(chosen, i, j) {
            chosen.push((i, j));
            walk(k + 1, cands, chosen, nodes, score, best);
            chosen.pop();
        }
    }
    walk(0, &cands, &mut chosen, nodes, &score, &mut best);
    best
}

// ---------------------------------------------------------------- gradients

pub struct FdResult {
    pub max_rel: f64,
    pub checked: usize,
}

fn hard(params: &ModelParams, feats: &TokenFeatures) -> Assignment {
    hard_predictions(&predict_tables(params, feats).1)
}

/// Central differences on `count` parameters the example reaches: embedding
/// rows of its tokens plus every dense parameter. Perturbations that flip a
/// hard prediction are skipped because the loss jumps there.
pub fn finite_difference<R: Rng>(
    params: &ModelParams,
    example: &Example,
    variant: Variant,
    count: usize,
    h: f64,
    rng: &mut R,
) -> FdResult {
    let (_, g) = grad(params, example, variant).unwrap();
    let analytic = g.to_flat(params);
    let feats = TokenFeatures::new(params.config().hash_dim, &example.theory, &example.query).unwrap();
    let base = hard(params, &feats);
    let e = params.config().embed_dim;
    let emb_len = params.encoder.embedding.len();
    let mut pool: Vec<usize> = g.embedding.keys().flat_map(|&r| r * e..(r + 1) * e).collect();
    pool.extend(emb_len..params.len());
    pool.shuffle(rng);
    let mut work = params.clone();
    let mut out = FdResult { max_rel: 0.0, checked: 0 };
    for idx in pool {
        if out.checked == count {
            break;
        }
        let x = params.get(idx);
        work.set(idx, x + h);
        let plus = loss(&work, example, variant).unwrap();
        let flip_plus = hard(&work, &feats) != base;
        work.set(idx, x - h);
        let minus = loss(&work, example, variant).unwrap();
        let flip_minus = hard(&work, &feats) != base;
        work.set(idx, x);
        if flip_plus || flip_minus {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        out.max_rel = out.max_rel.max(rel);
        out.checked += 1;
    }
    out
}

pub fn random_params<R: Rng>(config: probr::model::EncoderConfig, rng: &mut R) -> ModelParams {
    let mut p = ModelParams::init(config).unwrap();
    randomize(&mut p, 0.5, rng);
    p
}
