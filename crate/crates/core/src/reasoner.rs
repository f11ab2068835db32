//! Closed-world forward chaining with negation as failure, plus extraction of
//! minimal proof graphs and reasoning depths.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::{Atom, Query, StatementBody, Theory, NAF_ID};

/// Upper bound on complete support assignments explored per query.
const MAX_SUPPORT_ASSIGNMENTS: usize = 20_000;

/// One satisfied grounding of a rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DerivationStep {
    pub rule_id: String,
    /// Positive premises, all derived.
    pub premise_atoms: Vec<Atom>,
    /// Atoms of the negated conditions, none of which is derived.
    pub naf_literals: Vec<Atom>,
}

/// How an atom is established.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Support {
    Stated(String),
    Derived(DerivationStep),
}

/// Least fixpoint of a theory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivationSet {
    pub derived: BTreeSet<Atom>,
    pub depth: BTreeMap<Atom, usize>,
    pub supports: BTreeMap<Atom, BTreeSet<Support>>,
}

impl DerivationSet {
    pub fn contains(&self, atom: &Atom) -> bool {
        self.derived.contains(atom)
    }

    pub fn depth_of(&self, atom: &Atom) -> Option<usize> {
        self.depth.get(atom).copied()
    }
}

/// Proof graph over statement ids and the reserved `NAF` id.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl ProofGraph {
    pub fn single(id: impl Into<String>) -> Self {
        Self {
            nodes: BTreeSet::from([id.into()]),
            edges: BTreeSet::new(),
        }
    }

    pub fn naf_only() -> Self {
        Self::single(NAF_ID)
    }

    pub fn from_parts<N, E, S>(nodes: N, edges: E) -> Self
    where
        N: IntoIterator<Item = S>,
        E: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges: edges.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    /// Checks node typing, acyclicity and weak connectivity against `theory`.
    pub fn validate(&self, theory: &Theory) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("proof has no nodes".into());
        }
        for n in &self.nodes {
            if n != NAF_ID && theory.get(n).is_none() {
                return Err(format!("unknown node `{n}`"));
            }
        }
        let is_rule = |id: &str| {
            theory
                .get(id)
                .is_some_and(|s| matches!(s.body, StatementBody::Rule(_)))
        };
        for (src, dst) in &self.edges {
            if !self.nodes.contains(src) || !self.nodes.contains(dst) {
                return Err(format!("edge ({src}, {dst}) leaves the node set"));
            }
            if src == dst {
                return Err(format!("self loop on {src}"));
            }
            if !is_rule(dst) {
                return Err(format!("edge ({src}, {dst}) does not end at a rule"));
            }
        }
        if self.nodes.len() == 1 {
            return if self.edges.is_empty() {
                Ok(())
            } else {
                Err("single-node proof has edges".into())
            };
        }
        if !is_acyclic(&self.nodes, &self.edges) {
            return Err("proof has a cycle".into());
        }
        if !is_weakly_connected(&self.nodes, &self.edges) {
            return Err("proof is not connected".into());
        }
        Ok(())
    }

    /// Largest number of rule nodes on any directed path.
    pub fn rule_depth(&self, theory: &Theory) -> usize {
        let is_rule =
            |id: &str| theory.get(id).is_some_and(|s| matches!(s.body, StatementBody::Rule(_)));
        let order = match topo_order(&self.nodes, &self.edges) {
            Some(o) => o,
            None => return usize::MAX,
        };
        let mut best: BTreeMap<&str, usize> = BTreeMap::new();
        for n in &order {
            let own = usize::from(is_rule(n));
            let incoming = self
                .edges
                .iter()
                .filter(|(_, d)| d == n)
                .map(|(s, _)| best[s.as_str()])
                .max()
                .unwrap_or(0);
            best.insert(n, incoming + own);
        }
        best.values().copied().max().unwrap_or(0)
    }
}

fn topo_order<'a>(
    nodes: &'a BTreeSet<String>,
    edges: &'a BTreeSet<(String, String)>,
) -> Option<Vec<&'a str>> {
    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for (_, d) in edges {
        *indeg.get_mut(d.as_str())? += 1;
    }
    let mut ready: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop() {
        order.push(n);
        for (s, d) in edges {
            if s == n {
                let e = indeg.get_mut(d.as_str())?;
                *e -= 1;
                if *e == 0 {
                    ready.push(d);
                }
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}

pub(crate) fn is_acyclic(nodes: &BTreeSet<String>, edges: &BTreeSet<(String, String)>) -> bool {
    topo_order(nodes, edges).is_some()
}

pub(crate) fn is_weakly_connected(
    nodes: &BTreeSet<String>,
    edges: &BTreeSet<(String, String)>,
) -> bool {
    let Some(start) = nodes.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start.as_str()]);
    let mut stack = vec![start.as_str()];
    while let Some(n) = stack.pop() {
        for (s, d) in edges {
            let other = if s == n {
                d.as_str()
            } else if d == n {
                s.as_str()
            } else {
                continue;
            };
            if seen.insert(other) {
                stack.push(other);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Fails when an attribute that appears negated in a rule body is also
/// concluded by some rule.
pub fn check_stratified(theory: &Theory) -> Result<()> {
    let negated: BTreeSet<&str> = theory
        .statements()
        .iter()
        .filter_map(|s| s.as_rule())
        .flat_map(|r| r.body.iter().filter(|l| l.negated).map(|l| l.attribute.as_str()))
        .collect();
    for s in theory.statements() {
        if let Some(r) = s.as_rule() {
            if negated.contains(r.head.attribute.as_str()) {
                return Err(Error::Stratification {
                    attribute: r.head.attribute.clone(),
                    rule_id: s.id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Computes the least fixpoint. Under stratification a negated condition
/// `not p` holds exactly when `p` is not a stated fact, so it can be checked
/// during chaining and agrees with the final fixpoint.
pub fn forward_chain(theory: &Theory) -> Result<DerivationSet> {
    check_stratified(theory)?;
    let entities: Vec<String> = theory.entities().into_iter().collect();

    let mut ds = DerivationSet::default();
    for s in theory.statements() {
        if let StatementBody::Fact(atom) = &s.body {
            ds.derived.insert(atom.clone());
            ds.depth.insert(atom.clone(), 0);
            ds.supports
                .entry(atom.clone())
                .or_default()
                .insert(Support::Stated(s.id.clone()));
        }
    }

    // Layered rounds: an atom first produced in round k has depth k.
    let mut round = 0;
    loop {
        round += 1;
        let mut fresh = BTreeSet::new();
        for step in satisfied_steps(theory, &entities, &ds.derived) {
            if !ds.derived.contains(&step.0) {
                fresh.insert(step.0);
            }
        }
        if fresh.is_empty() {
            break;
        }
        for atom in fresh {
            ds.depth.insert(atom.clone(), round);
            ds.derived.insert(atom);
        }
    }

    for (head, step) in satisfied_steps(theory, &entities, &ds.derived) {
        ds.supports.entry(head).or_default().insert(Support::Derived(step));
    }
    Ok(ds)
}

/// All rule groundings whose conditions hold in `known`.
fn satisfied_steps(
    theory: &Theory,
    entities: &[String],
    known: &BTreeSet<Atom>,
) -> Vec<(Atom, DerivationStep)> {
    let mut out = Vec::new();
    for s in theory.statements() {
        let Some(rule) = s.as_rule() else { continue };
        let bindings: &[String] = if rule.has_variable() { entities } else { &entities[..entities.len().min(1)] };
        for entity in bindings {
            let mut premises = Vec::new();
            let mut nafs = Vec::new();
            let mut ok = true;
            for lit in &rule.body {
                let atom = lit.ground(entity);
                if lit.negated {
                    if known.contains(&atom) {
                        ok = false;
                        break;
                    }
                    nafs.push(atom);
                } else {
                    if !known.contains(&atom) {
                        ok = false;
                        break;
                    }
                    premises.push(atom);
                }
            }
            if ok {
                out.push((
                    rule.head.ground(entity),
                    DerivationStep {
                        rule_id: s.id.clone(),
                        premise_atoms: premises,
                        naf_literals: nafs,
                    },
                ));
            }
        }
    }
    out
}

pub fn answer_query(ds: &DerivationSet, q: &Query) -> bool {
    ds.contains(&q.atom) != q.negated
}

/// Minimal proof graphs deciding `q`, sorted by node-id tuple and capped.
///
/// If the query atom is derivable the proofs are its derivations (whatever
/// the polarity of the query); otherwise the decision rests on failure and
/// the only proof is the lone `NAF` node.
pub fn extract_proofs(ds: &DerivationSet, q: &Query, cap: usize) -> Vec<ProofGraph> {
    if !ds.contains(&q.atom) {
        return vec![ProofGraph::naf_only()];
    }
    let mut graphs = BTreeSet::new();
    let mut budget = MAX_SUPPORT_ASSIGNMENTS;
    let mut chosen = BTreeMap::new();
    enumerate_supports(ds, vec![q.atom.clone()], &mut chosen, &mut budget, &mut |choice| {
        if let Some(g) = graph_from_choice(choice) {
            graphs.insert(g);
        }
    });

    let graphs: Vec<ProofGraph> = graphs.into_iter().collect();
    let mut minimal: Vec<ProofGraph> = graphs
        .iter()
        .filter(|g| {
            !graphs
                .iter()
                .any(|h| h.nodes.len() < g.nodes.len() && h.nodes.is_subset(&g.nodes))
        })
        .cloned()
        .collect();
    minimal.sort_by(|a, b| {
        (a.nodes.iter().collect::<Vec<_>>(), &a.edges).cmp(&(b.nodes.iter().collect::<Vec<_>>(), &b.edges))
    });
    minimal.truncate(cap.max(1));
    minimal
}

type Choice = BTreeMap<Atom, Support>;

fn enumerate_supports(
    ds: &DerivationSet,
    mut pending: Vec<Atom>,
    chosen: &mut Choice,
    budget: &mut usize,
    emit: &mut dyn FnMut(&Choice),
) {
    if *budget == 0 {
        return;
    }
    let atom = loop {
        match pending.pop() {
            None => {
                *budget -= 1;
                if choice_is_well_founded(chosen) {
                    emit(chosen);
                }
                return;
            }
            Some(a) if chosen.contains_key(&a) => continue,
            Some(a) => break a,
        }
    };
    let Some(supports) = ds.supports.get(&atom) else {
        return;
    };
    let stated: Vec<&Support> = supports.iter().filter(|s| matches!(s, Support::Stated(_))).collect();
    let options: Vec<&Support> = if stated.is_empty() {
        supports.iter().collect()
    } else {
        stated
    };
    for opt in options {
        let mut next = pending.clone();
        if let Support::Derived(step) = opt {
            next.extend(step.premise_atoms.iter().cloned());
        }
        chosen.insert(atom.clone(), opt.clone());
        enumerate_supports(ds, next, chosen, budget, emit);
        chosen.remove(&atom);
        if *budget == 0 {
            return;
        }
    }
}

/// The atom dependency graph induced by a choice must be acyclic.
fn choice_is_well_founded(choice: &Choice) -> bool {
    fn visit(a: &Atom, choice: &Choice, state: &mut BTreeMap<Atom, bool>) -> bool {
        match state.get(a) {
            Some(true) => return true,
            Some(false) => return false,
            None => {}
        }
        state.insert(a.clone(), false);
        if let Some(Support::Derived(step)) = choice.get(a) {
            for p in &step.premise_atoms {
                if !visit(p, choice, state) {
                    return false;
                }
            }
        }
        state.insert(a.clone(), true);
        true
    }
    let mut state = BTreeMap::new();
    choice.keys().all(|a| visit(a, choice, &mut state))
}

fn graph_from_choice(choice: &Choice) -> Option<ProofGraph> {
    let node_of = |s: &Support| match s {
        Support::Stated(id) => id.clone(),
        Support::Derived(step) => step.rule_id.clone(),
    };
    let mut g = ProofGraph::default();
    for support in choice.values() {
        g.nodes.insert(node_of(support));
        if let Support::Derived(step) = support {
            for p in &step.premise_atoms {
                g.edges.insert((node_of(choice.get(p)?), step.rule_id.clone()));
            }
            if !step.naf_literals.is_empty() {
                g.nodes.insert(NAF_ID.to_string());
                g.edges.insert((NAF_ID.to_string(), step.rule_id.clone()));
            }
        }
    }
    if g.edges.iter().any(|(s, d)| s == d) || !is_acyclic(&g.nodes, &g.edges) {
        return None;
    }
    Some(g)
}

/// A query over a theory with its closed-world answer and gold proofs.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub theory: Theory,
    pub query: Query,
    pub answer: bool,
    pub depth: usize,
    pub gold_proofs: Vec<ProofGraph>,
}

impl Example {
    /// Runs the reasoner to label `query`.
    pub fn label(id: impl Into<String>, theory: Theory, query: Query, cap: usize) -> Result<Self> {
        let ds = forward_chain(&theory)?;
        let answer = answer_query(&ds, &query);
        let gold_proofs = extract_proofs(&ds, &query, cap);
        let id = id.into();
        if gold_proofs.is_empty() {
            return Err(Error::MissingGold(id));
        }
        let depth = query_depth(&theory, &gold_proofs);
        Ok(Self {
            id,
            theory,
            query,
            answer,
            depth,
            gold_proofs,
        })
    }
}

/// Minimum over `proofs` of the rule-node count on the longest path.
pub fn query_depth(theory: &Theory, proofs: &[ProofGraph]) -> usize {
    proofs.iter().map(|p| p.rule_depth(theory)).min().unwrap_or(0)
}

/// Re-derives the query decision using only the rule nodes of `proof`.
/// Fact nodes seed the derivation; negated conditions are checked against the
/// full fixpoint.
pub fn replay_proof(theory: &Theory, ds: &DerivationSet, proof: &ProofGraph, q: &Query) -> bool {
    if proof.nodes.len() == 1 && proof.nodes.contains(NAF_ID) {
        return !ds.contains(&q.atom);
    }
    let mut known: BTreeSet<Atom> = proof
        .nodes
        .iter()
        .filter_map(|id| theory.get(id).and_then(|s| s.as_fact().cloned()))
        .collect();
    let rules: Vec<_> = proof
        .nodes
        .iter()
        .filter_map(|id| theory.get(id).and_then(|s| s.as_rule()))
        .collect();
    let entities: Vec<String> = theory.entities().into_iter().collect();
    loop {
        let mut grew = false;
        for rule in &rules {
            let bindings: &[String] = if rule.has_variable() { &entities } else { &entities[..entities.len().min(1)] };
            for e in bindings {
                let holds = rule.body.iter().all(|l| {
                    let a = l.ground(e);
                    if l.negated {
                        !ds.contains(&a)
                    } else {
                        known.contains(&a)
                    }
                });
                if holds && known.insert(rule.head.ground(e)) {
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    known.contains(&q.atom)
}
