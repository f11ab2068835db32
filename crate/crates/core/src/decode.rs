//! Inference: node selection from q, constrained edge decoding, and answer
//! prediction from the joint model.
//!
//! Edge decoding maximizes `Σ_{(i,j) ∈ E} [log q(E_ij = 1) - log q(E_ij = 0)]`
//! over edge sets that
//!
//! 1. only join selected nodes,
//! 2. end at a rule and start at a fact, NAF or rule,
//! 3. are acyclic,
//! 4. weakly connect the selected nodes when there are at least two,
//! 5. are empty when a single node is selected.
//!
//! The search is an exact branch-and-bound seeded with a greedy solution.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{predict_tables, ModelParams, QDist, TokenFeatures};
use crate::pgm::{answer_logits, num_pairs, pair_index, LogPotentials};
use crate::reasoner::ProofGraph;
use crate::theory::{NodeKind, Query, Theory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub node_threshold: f64,
    /// Above this many selected nodes only the greedy solution is used.
    pub max_nodes_exact: usize,
    /// Cap on branch-and-bound expansions before falling back to the best
    /// solution found so far.
    pub search_budget: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            node_threshold: 0.5,
            max_nodes_exact: 10,
            search_budget: 2_000_000,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.node_threshold > 0.0 && self.node_threshold < 1.0) {
            return Err(Error::Config(format!(
                "node threshold must lie in (0, 1), got {}",
                self.node_threshold
            )));
        }
        Ok(())
    }
}

/// Nodes whose `q(V_i = 1)` reaches the threshold; if none does, the single
/// most probable node (lowest index on ties).
pub fn predict_nodes(q: &QDist, cfg: &DecodeConfig) -> BTreeSet<usize> {
    let picked: BTreeSet<usize> = (0..q.m()).filter(|&i| q.q_v[i][1] >= cfg.node_threshold).collect();
    if !picked.is_empty() || q.m() == 0 {
        return picked;
    }
    let mut best = 0;
    for i in 1..q.m() {
        if q.q_v[i][1] > q.q_v[best][1] {
            best = i;
        }
    }
    BTreeSet::from([best])
}

/// Log-odds of `E_ij = 1` under q.
pub fn edge_score(q: &QDist, i: usize, j: usize) -> f64 {
    let p = q.edge(i, j);
    p[1].max(f64::MIN_POSITIVE).ln() - p[0].max(f64::MIN_POSITIVE).ln()
}

/// Ordered pairs allowed by the typing constraint, in index order.
pub fn candidate_edges(nodes: &BTreeSet<usize>, kinds: &[NodeKind]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &i in nodes {
        for &j in nodes {
            if i != j && kinds[j] == NodeKind::Rule {
                out.push((i, j));
            }
        }
    }
    out
}

/// Result of edge decoding over node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedEdges {
    pub nodes: BTreeSet<usize>,
    pub edges: BTreeSet<(usize, usize)>,
    pub score: f64,
    /// False when the greedy fallback or an exhausted budget decided the edges.
    pub exact: bool,
    /// Nodes removed because the requested set could not be connected.
    pub dropped: Vec<usize>,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn connects(nodes: &BTreeSet<usize>, edges: impl IntoIterator<Item = (usize, usize)>, m: usize) -> bool {
    let mut dsu = Dsu::new(m);
    for (a, b) in edges {
        dsu.union(a, b);
    }
    let mut roots = nodes.iter().map(|&n| dsu.find(n));
    match roots.next() {
        None => true,
        Some(r) => roots.all(|x| x == r),
    }
}

/// True when `to` can reach `from` through `adj`, i.e. adding `from -> to`
/// would close a cycle.
fn reaches(adj: &[Vec<usize>], to: usize, from: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![to];
    while let Some(n) = stack.pop() {
        if n == from {
            return true;
        }
        if std::mem::replace(&mut seen[n], true) {
            continue;
        }
        stack.extend(adj[n].iter().copied());
    }
    false
}

fn greedy(m: usize, nodes: &BTreeSet<usize>, cands: &[(usize, usize)], scores: &[f64]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = vec![false; cands.len()];
    let mut adj = vec![Vec::new(); m];
    for &k in &order {
        let (i, j) = cands[k];
        if scores[k] > 0.0 && !reaches(&adj, j, i) {
            chosen[k] = true;
            adj[i].push(j);
        }
    }
    let mut dsu = Dsu::new(m);
    for (k, &(i, j)) in cands.iter().enumerate() {
        if chosen[k] {
            dsu.union(i, j);
        }
    }
    // Joining two weak components never closes a directed cycle.
    for &k in &order {
        let (i, j) = cands[k];
        if !chosen[k] && dsu.union(i, j) {
            chosen[k] = true;
        }
    }
    debug_assert!(connects(nodes, cands.iter().zip(&chosen).filter(|(_, &c)| c).map(|(e, _)| *e), m));
    chosen
}

struct Search<'a> {
    m: usize,
    nodes: &'a BTreeSet<usize>,
    cands: &'a [(usize, usize)],
    scores: &'a [f64],
    suffix_gain: Vec<f64>,
    adj: Vec<Vec<usize>>,
    chosen: Vec<bool>,
    best: Vec<bool>,
    best_score: f64,
    expansions: u64,
    budget: u64,
    exhausted: bool,
}

impl Search<'_> {
    fn run(&mut self, k: usize, score: f64) {
        if self.exhausted {
            return;
        }
        self.expansions += 1;
        if self.expansions > self.budget {
            self.exhausted = true;
            return;
        }
        if score + self.suffix_gain[k] <= self.best_score {
            return;
        }
        // Connectivity must stay reachable with every undecided edge.
        let open = self
            .cands
            .iter()
            .enumerate()
            .filter(|&(idx, _)| idx >= k || self.chosen[idx])
            .map(|(_, e)| *e);
        if !connects(self.nodes, open, self.m) {
            return;
        }
        if k == self.cands.len() {
            self.best_score = score;
            self.best.clone_from(&self.chosen);
            return;
        }
        let (i, j) = self.cands[k];
        let s = self.scores[k];
        let can_add = !reaches(&self.adj, j, i);
        let include_first = s > 0.0;
        for include in [include_first, !include_first] {
            if include {
                if !can_add {
                    continue;
                }
                self.chosen[k] = true;
                self.adj[i].push(j);
                self.run(k + 1, score + s);
                self.adj[i].pop();
                self.chosen[k] = false;
            } else {
                self.run(k + 1, score);
            }
        }
    }
}

/// Exact decoding when affordable, otherwise greedy. `nodes` must be non-empty.
pub fn decode_edges(q: &QDist, nodes: &BTreeSet<usize>, kinds: &[NodeKind], cfg: &DecodeConfig) -> DecodedEdges {
    let m = q.m();
    let mut nodes = nodes.clone();
    let mut dropped = Vec::new();
    loop {
        let cands = candidate_edges(&nodes, kinds);
        if nodes.len() <= 1 || connects(&nodes, cands.iter().copied(), m) {
            break;
        }
        // Drop the least probable node, highest index on ties.
        let worst = *nodes
            .iter()
            .min_by(|&&a, &&b| q.q_v[a][1].total_cmp(&q.q_v[b][1]).then(b.cmp(&a)))
            .expect("non-empty");
        nodes.remove(&worst);
        dropped.push(worst);
    }
    if nodes.len() <= 1 {
        return DecodedEdges {
            nodes,
            edges: BTreeSet::new(),
            score: 0.0,
            exact: true,
            dropped,
        };
    }

    let cands = candidate_edges(&nodes, kinds);
    let scores: Vec<f64> = cands.iter().map(|&(i, j)| edge_score(q, i, j)).collect();
    let seed = greedy(m, &nodes, &cands, &scores);
    let seed_score: f64 = seed.iter().zip(&scores).filter(|(&c, _)| c).map(|(_, s)| s).sum();

    let (chosen, exact) = if nodes.len() > cfg.max_nodes_exact {
        (seed, false)
    } else {
        // Branch in decreasing score order so the bound tightens early.
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let sc: Vec<(usize, usize)> = order.iter().map(|&k| cands[k]).collect();
        let ss: Vec<f64> = order.iter().map(|&k| scores[k]).collect();
        let mut suffix_gain = vec![0.0; sc.len() + 1];
        for k in (0..sc.len()).rev() {
            suffix_gain[k] = suffix_gain[k + 1] + ss[k].max(0.0);
        }
        let mut search = Search {
            m,
            nodes: &nodes,
            cands: &sc,
            scores: &ss,
            suffix_gain,
            adj: vec![Vec::new(); m],
            chosen: vec![false; sc.len()],
            best: order.iter().map(|&k| seed[k]).collect(),
            best_score: seed_score,
            expansions: 0,
            budget: cfg.search_budget,
            exhausted: false,
        };
        search.run(0, 0.0);
        let mut chosen = vec![false; cands.len()];
        for (pos, &k) in order.iter().enumerate() {
            chosen[k] = search.best[pos];
        }
        (chosen, !search.exhausted)
    };

    let edges: BTreeSet<(usize, usize)> = cands
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(e, _)| *e)
        .collect();
    let score = cands
        .iter()
        .zip(&scores)
        .filter(|(e, _)| edges.contains(e))
        .map(|(_, s)| s)
        .sum();
    DecodedEdges {
        nodes,
        edges,
        score,
        exact,
        dropped,
    }
}

/// Objective value of an edge set.
pub fn edge_set_score(q: &QDist, edges: &BTreeSet<(usize, usize)>) -> f64 {
    edges.iter().map(|&(i, j)| edge_score(q, i, j)).sum()
}

/// Edge decoding mapped onto node ids.
pub fn decode_proof(
    q: &QDist,
    nodes: &BTreeSet<usize>,
    kinds: &[NodeKind],
    ids: &[String],
    cfg: &DecodeConfig,
) -> (ProofGraph, DecodedEdges) {
    let decoded = decode_edges(q, nodes, kinds, cfg);
    let graph = ProofGraph {
        nodes: decoded.nodes.iter().map(|&i| ids[i].clone()).collect(),
        edges: decoded
            .edges
            .iter()
            .map(|&(i, j)| (ids[i].clone(), ids[j].clone()))
            .collect(),
    };
    (graph, decoded)
}

/// Arg-max of `p(A | v̂, ê)`; a tie goes to 0.
pub fn predict_answer(lp: &LogPotentials, v: &[bool], e: &[bool]) -> Result<bool> {
    let t = answer_logits(lp, v, e)?;
    Ok(t[1] > t[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub answer: bool,
    pub proof: ProofGraph,
    pub v_hat: Vec<bool>,
    pub e_hat: Vec<bool>,
    pub exact: bool,
}

/// Node selection, constrained decoding, then the answer conditioned on the
/// decoded graph.
pub fn decode_full(
    lp: &LogPotentials,
    q: &QDist,
    ids: &[String],
    kinds: &[NodeKind],
    cfg: &DecodeConfig,
) -> Result<Prediction> {
    let m = q.m();
    if lp.m() != m || ids.len() != m || kinds.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: lp.m().min(ids.len()).min(kinds.len()),
        });
    }
    let nodes = predict_nodes(q, cfg);
    let (proof, decoded) = decode_proof(q, &nodes, kinds, ids, cfg);
    let mut v_hat = vec![false; m];
    for &i in &decoded.nodes {
        v_hat[i] = true;
    }
    let mut e_hat = vec![false; num_pairs(m)];
    for &(i, j) in &decoded.edges {
        e_hat[pair_index(m, i, j)] = true;
    }
    let answer = predict_answer(lp, &v_hat, &e_hat)?;
    Ok(Prediction {
        answer,
        proof,
        v_hat,
        e_hat,
        exact: decoded.exact,
    })
}

pub fn infer(params: &ModelParams, theory: &Theory, query: &Query, cfg: &DecodeConfig) -> Result<Prediction> {
    cfg.validate()?;
    let feats = TokenFeatures::new(params.config().hash_dim, theory, query)?;
    let (lp, q) = predict_tables(params, &feats);
    decode_full(&lp, &q, &theory.node_ids(), &theory.node_kinds(), cfg)
}
