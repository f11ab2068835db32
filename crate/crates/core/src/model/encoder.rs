//! Hashed bag-of-features text encoder with cross-sentence attention.
//!
//! Entity names are replaced by `qent` when they name the query's entity and
//! by `other` otherwise; rules only relate atoms of one subject, so nothing
//! the query depends on is lost. Each sentence is split into clauses
//! `SUBJECT is [not] ATTRIBUTE`. Words
//! contribute a bare feature and a role-tagged one (fact, condition, negated
//! condition, conclusion, query, negated query); each clause adds a literal
//! feature `subject~attribute`, and a literal about a named entity also adds
//! the generalized `someone~attribute`. Sentence features that also occur in
//! the query fire exact-match indicators typed by role and feature kind.
//!
//! Literals are also linked across sentences: a condition (or the query) is
//! linked to every fact or conclusion asserting the same attribute of a
//! unifiable subject, split by whether the condition is negated. Each row
//! pools the sentences it is linked to under each of the four link types and
//! counts how many of its literals found a link.
//!
//! ```text
//! u_s   = tanh(S [x_s, x_q, x_s * x_q, match_s] + b_S)   per sentence and the query
//! c_s   = sum_t softmax_t((A u_s + b_A) . u_t) u_t         over the other sentences
//! l_s^k = mean of u_t over the sentences linked to s by type k
//! h_s   = tanh(C [u_s, c_s, u_s * c_s, mean(u), l_s^1..l_s^4, counts_s] + b_C)
//! h_CLS = same with u_q, attending over every sentence
//! h_NAF = N h_CLS + b_N
//! ```

use std::collections::BTreeSet;

use super::nn::{axpy, dot, Linear};
use super::params::{Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::theory::{Query, Theory};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn bucket(feature: &str, hash_dim: usize) -> usize {
    (fnv1a(feature.as_bytes()) % hash_dim as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Word,
    Literal,
    General,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Word => "word",
            Kind::Literal => "lit",
            Kind::General => "glit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Token {
    role: String,
    kind: Kind,
    key: String,
}

const STRUCTURAL: [&str; 5] = ["if", "then", "and", "is", "not"];

/// Entity placeholder for the query's own entity.
pub const QUERY_ENTITY: &str = "qent";
/// Entity placeholder for every other entity.
pub const OTHER_ENTITY: &str = "other";

fn tokens(text: &str, is_query: bool, query_entity: &str) -> Vec<Token> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .map(|w| {
            if w.starts_with(|c: char| c.is_ascii_uppercase()) && w != "If" {
                if w == query_entity { QUERY_ENTITY } else { OTHER_ENTITY }.to_string()
            } else {
                w.to_ascii_lowercase()
            }
        })
        .collect();
    let is_rule = words.first().is_some_and(|w| w == "if");
    let mut role = if is_query {
        "query"
    } else if is_rule {
        "cond"
    } else {
        "fact"
    };
    let mut out = Vec::new();
    let mut clause: Vec<&str> = Vec::new();
    let flush = |clause: &mut Vec<&str>, role: &str, out: &mut Vec<Token>| {
        if clause.is_empty() {
            return;
        }
        let negated = clause.contains(&"not");
        let mut after_not = false;
        for &w in clause.iter() {
            let tagged = if after_not { format!("{role}-not") } else { role.to_string() };
            after_not = w == "not";
            out.push(Token {
                role: tagged,
                kind: Kind::Word,
                key: w.to_string(),
            });
        }
        let subject = clause[0];
        let attribute = clause[clause.len() - 1];
        let lit_role = if negated { format!("{role}-not") } else { role.to_string() };
        out.push(Token {
            role: lit_role.clone(),
            kind: Kind::Literal,
            key: format!("{subject}~{attribute}"),
        });
        if subject != "someone" {
            out.push(Token {
                role: lit_role,
                kind: Kind::General,
                key: format!("someone~{attribute}"),
            });
        }
        clause.clear();
    };
    for w in &words {
        match w.as_str() {
            "if" if is_rule => {}
            "and" => flush(&mut clause, role, &mut out),
            "then" if is_rule => {
                flush(&mut clause, role, &mut out);
                role = "concl";
            }
            _ => clause.push(w),
        }
        if matches!(w.as_str(), "if" | "and" | "then") {
            out.push(Token {
                role: role.to_string(),
                kind: Kind::Word,
                key: w.clone(),
            });
        }
    }
    flush(&mut clause, role, &mut out);
    out
}

fn feature_names(tokens: &[Token]) -> Vec<String> {
    let mut out = Vec::with_capacity(2 * tokens.len());
    for t in tokens {
        match t.kind {
            Kind::Word => {
                out.push(t.key.clone());
                out.push(format!("{}:{}", t.role, t.key));
            }
            Kind::Literal => {
                out.push(format!("lit:{}", t.key));
                out.push(format!("{}|{}", t.role, t.key));
            }
            Kind::General => out.push(format!("lit:{}", t.key)),
        }
    }
    out
}

fn match_keys(tokens: &[Token]) -> BTreeSet<&str> {
    tokens
        .iter()
        .filter(|t| !(t.kind == Kind::Word && STRUCTURAL.contains(&t.key.as_str())))
        .map(|t| t.key.as_str())
        .collect()
}

fn match_names(sentence: &[Token], query: &[Token]) -> Vec<String> {
    let keys = match_keys(query);
    sentence
        .iter()
        .filter(|t| !(t.kind == Kind::Word && STRUCTURAL.contains(&t.key.as_str())))
        .filter(|t| keys.contains(t.key.as_str()))
        .map(|t| format!("match:{}:{}", t.role, t.kind.name()))
        .collect()
}

/// Number of cross-sentence link types.
pub const LINK_TYPES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Polarity {
    Assert,
    Positive,
    Negative,
}

struct Literal<'a> {
    polarity: Polarity,
    subject: &'a str,
    attribute: &'a str,
}

fn literals(tokens: &[Token]) -> Vec<Literal<'_>> {
    tokens
        .iter()
        .filter(|t| t.kind == Kind::Literal)
        .filter_map(|t| {
            let polarity = match t.role.as_str() {
                "fact" | "concl" => Polarity::Assert,
                "cond" | "query" | "query-not" => Polarity::Positive,
                "cond-not" => Polarity::Negative,
                _ => return None,
            };
            let (subject, attribute) = t.key.split_once('~')?;
            Some(Literal {
                polarity,
                subject,
                attribute,
            })
        })
        .collect()
}

fn unifies(a: &Literal, b: &Literal) -> bool {
    let open = |s: &str| s == "someone" || s == QUERY_ENTITY;
    a.attribute == b.attribute && (a.subject == b.subject || (open(a.subject) && open(b.subject)))
}

/// Link type from a literal of the row to a literal of the target.
fn link_type(row: Polarity, target: Polarity) -> Option<usize> {
    match (row, target) {
        (Polarity::Positive, Polarity::Assert) => Some(0),
        (Polarity::Negative, Polarity::Assert) => Some(1),
        (Polarity::Assert, Polarity::Positive) => Some(2),
        (Polarity::Assert, Polarity::Negative) => Some(3),
        _ => None,
    }
}

/// Sentences linked to one row, and per link type the number of the row's
/// literals that found a link followed by the number that could.
#[derive(Debug, Clone, PartialEq)]
pub struct Links {
    pub targets: [Vec<usize>; LINK_TYPES],
    pub counts: [f64; 2 * LINK_TYPES],
}

fn links(row: &[Literal], sentences: &[Vec<Literal>], skip: Option<usize>) -> Links {
    let mut targets: [BTreeSet<usize>; LINK_TYPES] = Default::default();
    let mut counts = [0.0; 2 * LINK_TYPES];
    for lit in row {
        let mut found = [false; LINK_TYPES];
        for (t, other) in sentences.iter().enumerate() {
            if Some(t) == skip {
                continue;
            }
            for o in other {
                if let Some(k) = link_type(lit.polarity, o.polarity).filter(|_| unifies(lit, o)) {
                    targets[k].insert(t);
                    found[k] = true;
                }
            }
        }
        for k in 0..LINK_TYPES {
            let possible = link_type(lit.polarity, Polarity::Assert) == Some(k)
                || [Polarity::Positive, Polarity::Negative]
                    .iter()
                    .any(|&p| link_type(lit.polarity, p) == Some(k));
            if possible {
                counts[LINK_TYPES + k] += 1.0;
                if found[k] {
                    counts[k] += 1.0;
                }
            }
        }
    }
    Links {
        targets: targets.map(|s| s.into_iter().collect()),
        counts,
    }
}

/// Hashed feature ids of one sentence (with repetition), relative to the
/// entity the query is about.
pub fn sentence_features(text: &str, query_entity: &str, hash_dim: usize, is_query: bool) -> Vec<usize> {
    feature_names(&tokens(text, is_query, query_entity))
        .iter()
        .map(|f| bucket(f, hash_dim))
        .collect()
}

/// Feature ids for a theory and a query.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub sentences: Vec<Vec<usize>>,
    pub query: Vec<usize>,
    /// Exact-match indicator ids per sentence.
    pub matches: Vec<Vec<usize>>,
    pub query_matches: Vec<usize>,
    /// Scale applied to summed match embeddings: one over the number of
    /// distinct query keys.
    pub match_scale: f64,
    /// Cross-sentence links per sentence, then for the query.
    pub links: Vec<Links>,
}

impl TokenFeatures {
    pub fn new(hash_dim: usize, theory: &Theory, query: &Query) -> Result<Self> {
        if theory.is_empty() {
            return Err(Error::EmptyTheory);
        }
        let hash = |names: Vec<String>| -> Vec<usize> { names.iter().map(|f| bucket(f, hash_dim)).collect() };
        let entity = query.atom.entity.as_str();
        let q = tokens(&query.text, true, entity);
        let toks: Vec<Vec<Token>> = theory
            .statements()
            .iter()
            .map(|s| tokens(&s.text, false, entity))
            .collect();
        let lits: Vec<Vec<Literal>> = toks.iter().map(|t| literals(t)).collect();
        let mut all_links: Vec<Links> = lits.iter().enumerate().map(|(r, l)| links(l, &lits, Some(r))).collect();
        all_links.push(links(&literals(&q), &lits, None));
        Ok(Self {
            links: all_links,
            sentences: toks.iter().map(|t| hash(feature_names(t))).collect(),
            query: hash(feature_names(&q)),
            matches: toks.iter().map(|t| hash(match_names(t, &q))).collect(),
            query_matches: hash(match_names(&q, &q)),
            match_scale: 1.0 / match_keys(&q).len().max(1) as f64,
        })
    }

    /// Number of model nodes (statements plus NAF).
    pub fn m(&self) -> usize {
        self.sentences.len() + 1
    }
}

/// Encoder outputs. `h_node[0]` is the NAF node, `h_node[k + 1]` statement `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reps {
    pub h_cls: Vec<f64>,
    pub h_node: Vec<Vec<f64>>,
}

impl Reps {
    pub fn m(&self) -> usize {
        self.h_node.len()
    }

    /// `h_i ⊕ h_j ⊕ (h_i - h_j)`.
    pub fn pair(&self, i: usize, j: usize) -> Vec<f64> {
        let (a, b) = (&self.h_node[i], &self.h_node[j]);
        let mut out = Vec::with_capacity(3 * a.len());
        out.extend_from_slice(a);
        out.extend_from_slice(b);
        out.extend(a.iter().zip(b).map(|(x, y)| x - y));
        out
    }
}

/// One attending row: the sentence or query it belongs to and its weights
/// over the attended sentences.
#[derive(Debug, Clone)]
struct AttentionRow {
    key: Vec<f64>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    context: Vec<f64>,
}

/// Activations kept for the backward pass. Row `n` of `z`, `u`, `att` and
/// `h` is the query; rows `0..n` are the sentences.
#[derive(Debug, Clone)]
pub(crate) struct EncoderCache {
    x: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    att: Vec<AttentionRow>,
    ubar: Vec<f64>,
    /// Linked means `l^1..l^4`, concatenated per row.
    linked: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn pooled(params: &ModelParams, features: &[usize], weight: Option<f64>) -> Vec<f64> {
    let mut x = vec![0.0; params.config().embed_dim];
    if features.is_empty() {
        return x;
    }
    let w = weight.unwrap_or(1.0 / features.len() as f64);
    for &f in features {
        axpy(w, params.embedding_row(f), &mut x);
    }
    x
}

fn scatter(features: &[usize], weight: Option<f64>, dx: &[f64], grad: &mut Gradients) {
    if features.is_empty() {
        return;
    }
    let w = weight.unwrap_or(1.0 / features.len() as f64);
    for &f in features {
        axpy(w, dx, grad.embedding_row_mut(f));
    }
}

fn interact(a: &[f64], b: &[f64], extra: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(3 * a.len() + extra.len());
    z.extend_from_slice(a);
    z.extend_from_slice(b);
    z.extend(a.iter().zip(b).map(|(x, y)| x * y));
    z.extend_from_slice(extra);
    z
}

/// Splits `d[a, b, a * b, extra]` into `(da, db, dextra)`.
fn split(dz: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    let da = (0..n).map(|k| dz[k] + dz[2 * n + k] * b[k]).collect();
    let db = (0..n).map(|k| dz[n + k] + dz[2 * n + k] * a[k]).collect();
    (da, db, dz[3 * n..].to_vec())
}

fn linked_means(links: &Links, u: &[Vec<f64>], hidden: usize) -> Vec<f64> {
    let mut out = vec![0.0; LINK_TYPES * hidden];
    for (k, targets) in links.targets.iter().enumerate() {
        let slot = &mut out[k * hidden..(k + 1) * hidden];
        for &t in targets {
            axpy(1.0 / targets.len() as f64, &u[t], slot);
        }
    }
    out
}

fn context_input(u: &[f64], att: &[f64], ubar: &[f64], linked: &[f64], links: &Links) -> Vec<f64> {
    let mut extra = Vec::with_capacity(ubar.len() + linked.len() + links.counts.len());
    extra.extend_from_slice(ubar);
    extra.extend_from_slice(linked);
    extra.extend_from_slice(&links.counts);
    interact(u, att, &extra)
}

fn tanh_layer(layer: &Linear, z: &[f64]) -> Vec<f64> {
    let mut y = layer.forward(z);
    y.iter_mut().for_each(|v| *v = v.tanh());
    y
}

fn tanh_back(dy: &[f64], y: &[f64]) -> Vec<f64> {
    dy.iter().zip(y).map(|(g, a)| g * (1.0 - a * a)).collect()
}

fn attend(attention: &Linear, query: &[f64], u: &[Vec<f64>], targets: Vec<usize>) -> AttentionRow {
    let key = attention.forward(query);
    let mut context = vec![0.0; query.len()];
    if targets.is_empty() {
        return AttentionRow {
            key,
            targets,
            weights: Vec::new(),
            context,
        };
    }
    let scores: Vec<f64> = targets.iter().map(|&t| dot(&key, &u[t])).collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    for (&t, &w) in targets.iter().zip(&weights) {
        axpy(w, &u[t], &mut context);
    }
    AttentionRow {
        key,
        targets,
        weights,
        context,
    }
}

pub(crate) fn forward(params: &ModelParams, feats: &TokenFeatures) -> (Reps, EncoderCache) {
    let enc = &params.encoder;
    let n = feats.sentences.len();
    let scale = Some(feats.match_scale);

    let xq = pooled(params, &feats.query, None);
    let mut x: Vec<Vec<f64>> = feats.sentences.iter().map(|f| pooled(params, f, None)).collect();
    let mut z: Vec<Vec<f64>> = x
        .iter()
        .zip(&feats.matches)
        .map(|(xs, mf)| interact(xs, &xq, &pooled(params, mf, scale)))
        .collect();
    z.push(interact(&xq, &xq, &pooled(params, &feats.query_matches, scale)));
    x.push(xq);
    let u: Vec<Vec<f64>> = z.iter().map(|zs| tanh_layer(&enc.sentence, zs)).collect();

    let att: Vec<AttentionRow> = (0..=n)
        .map(|r| {
            let targets = (0..n).filter(|&t| t != r).collect();
            attend(&enc.attention, &u[r], &u, targets)
        })
        .collect();
    let mut ubar = vec![0.0; enc.config.hidden_dim];
    for us in &u[..n] {
        axpy(1.0 / n.max(1) as f64, us, &mut ubar);
    }
    let hd = enc.config.hidden_dim;
    let linked: Vec<Vec<f64>> = feats.links.iter().map(|l| linked_means(l, &u, hd)).collect();
    let h: Vec<Vec<f64>> = (0..=n)
        .map(|r| {
            let input = context_input(&u[r], &att[r].context, &ubar, &linked[r], &feats.links[r]);
            tanh_layer(&enc.context, &input)
        })
        .collect();
    let naf = params.naf_map.forward(&h[n]);

    let mut h_node = Vec::with_capacity(n + 1);
    h_node.push(naf);
    h_node.extend(h[..n].iter().cloned());
    let reps = Reps {
        h_cls: h[n].clone(),
        h_node,
    };
    (
        reps,
        EncoderCache {
            x,
            z,
            u,
            att,
            ubar,
            linked,
            h,
        },
    )
}

/// Backpropagates gradients on `h_cls` and `h_node` into `grad`.
pub(crate) fn backward(
    params: &ModelParams,
    feats: &TokenFeatures,
    cache: &EncoderCache,
    d_cls: &[f64],
    d_node: &[Vec<f64>],
    grad: &mut Gradients,
) {
    let enc = &params.encoder;
    let n = feats.sentences.len();
    let hd = enc.config.hidden_dim;

    let mut dh: Vec<Vec<f64>> = d_node[1..].to_vec();
    let mut dcls = d_cls.to_vec();
    let back = params.naf_map.backward(&cache.h[n], &d_node[0], &mut grad.naf_map);
    axpy(1.0, &back, &mut dcls);
    dh.push(dcls);

    // Context layer.
    let mut du = vec![vec![0.0; hd]; n + 1];
    let mut dubar = vec![0.0; hd];
    let mut dctx = Vec::with_capacity(n + 1);
    for r in 0..=n {
        let dpre = tanh_back(&dh[r], &cache.h[r]);
        let links = &feats.links[r];
        let input = context_input(&cache.u[r], &cache.att[r].context, &cache.ubar, &cache.linked[r], links);
        let dz = enc.context.backward(&input, &dpre, &mut grad.context);
        let (da, dc, dextra) = split(&dz, &cache.u[r], &cache.att[r].context);
        axpy(1.0, &da, &mut du[r]);
        axpy(1.0, &dextra[..hd], &mut dubar);
        for (k, targets) in links.targets.iter().enumerate() {
            let dl = &dextra[(1 + k) * hd..(2 + k) * hd];
            for &t in targets {
                axpy(1.0 / targets.len() as f64, dl, &mut du[t]);
            }
        }
        dctx.push(dc);
    }
    for dus in du[..n].iter_mut() {
        axpy(1.0 / n.max(1) as f64, &dubar, dus);
    }

    // Attention.
    for r in 0..=n {
        let row = &cache.att[r];
        if row.targets.is_empty() {
            continue;
        }
        let dweights: Vec<f64> = row.targets.iter().map(|&t| dot(&dctx[r], &cache.u[t])).collect();
        let mean: f64 = row.weights.iter().zip(&dweights).map(|(w, d)| w * d).sum();
        let mut dkey = vec![0.0; hd];
        for (k, &t) in row.targets.iter().enumerate() {
            let w = row.weights[k];
            let dscore = w * (dweights[k] - mean);
            axpy(w, &dctx[r], &mut du[t]);
            axpy(dscore, &row.key, &mut du[t]);
            axpy(dscore, &cache.u[t], &mut dkey);
        }
        let dq = enc.attention.backward(&cache.u[r], &dkey, &mut grad.attention);
        axpy(1.0, &dq, &mut du[r]);
    }

    // Sentence layer.
    let scale = Some(feats.match_scale);
    let xq = &cache.x[n];
    let mut dxq = vec![0.0; enc.config.embed_dim];
    for r in 0..=n {
        let dpre = tanh_back(&du[r], &cache.u[r]);
        let dz = enc.sentence.backward(&cache.z[r], &dpre, &mut grad.sentence);
        let (dx, dq, dm) = split(&dz, &cache.x[r], xq);
        if r < n {
            axpy(1.0, &dq, &mut dxq);
            scatter(&feats.sentences[r], None, &dx, grad);
            scatter(&feats.matches[r], scale, &dm, grad);
        } else {
            axpy(1.0, &dx, &mut dxq);
            axpy(1.0, &dq, &mut dxq);
            scatter(&feats.query_matches, scale, &dm, grad);
        }
    }
    scatter(&feats.query, None, &dxq, grad);
}

/// Encodes a theory and query.
pub fn encode(params: &ModelParams, theory: &Theory, query: &Query) -> Result<Reps> {
    let feats = TokenFeatures::new(params.config().hash_dim, theory, query)?;
    Ok(forward(params, &feats).0)
}
