//! Heads, the mean-field distribution q, the training objective and its
//! gradient.
//!
//! The objective is `L_qa + L_node + L_edge` (plus `L_kl` for the KL
//! variants):
//!
//! * `L_node = -Σ_i log q(V_i = v*_i)`, `L_edge = -Σ_ij log q(E_ij = e*_ij)`
//! * `L_qa = -log p(A = a* | v̂, ê)` where `(v̂, ê)` are the hard predictions of
//!   q (or the gold proof for the gold variants). No gradient flows through
//!   the arg-max.
//! * `L_kl = Σ_y KL(q(y) || p(y | ŷ_{-y}))`, conditioned on the hard
//!   predictions ŷ of q.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{self, EncoderCache, Reps, TokenFeatures};
use super::nn::{axpy, Linear, Mlp};
use super::params::{Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::pgm::{
    answer_logits, edge_logits, edge_slot, log_softmax2, node_logits, node_slot, num_pairs, pair_index, pairs,
    softmax2, Assignment, Binary, LogPotentials,
};
use crate::reasoner::Example;

/// Training objective variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `L_qa` conditioned on q's predictions.
    #[default]
    Base,
    /// `L_qa` conditioned on the gold proof.
    Gold,
    /// Base plus `L_kl`.
    Kl,
    /// Gold plus `L_kl`.
    GoldKl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Gold, Variant::Kl, Variant::GoldKl];

    pub fn uses_gold(self) -> bool {
        matches!(self, Variant::Gold | Variant::GoldKl)
    }

    pub fn uses_kl(self) -> bool {
        matches!(self, Variant::Kl | Variant::GoldKl)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Gold => "gold",
            Variant::Kl => "kl",
            Variant::GoldKl => "gold_kl",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "gold" => Ok(Variant::Gold),
            "kl" => Ok(Variant::Kl),
            "gold_kl" => Ok(Variant::GoldKl),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Mean-field marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct QDist {
    pub q_a: Binary,
    pub q_v: Vec<Binary>,
    pub q_e: Vec<Binary>,
}

impl QDist {
    pub fn uniform(m: usize) -> Self {
        Self {
            q_a: [0.5; 2],
            q_v: vec![[0.5; 2]; m],
            q_e: vec![[0.5; 2]; num_pairs(m)],
        }
    }

    pub fn m(&self) -> usize {
        self.q_v.len()
    }

    pub fn edge(&self, i: usize, j: usize) -> Binary {
        self.q_e[pair_index(self.m(), i, j)]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, p: Binary) {
        let k = pair_index(self.m(), i, j);
        self.q_e[k] = p;
    }
}

/// Per-variable arg-max of q; an exact tie goes to 0.
pub fn hard_predictions(q: &QDist) -> Assignment {
    let pick = |p: &Binary| p[1] > p[0];
    Assignment {
        a: pick(&q.q_a),
        v: q.q_v.iter().map(pick).collect(),
        e: q.q_e.iter().map(pick).collect(),
    }
}

fn check_reps(params: &ModelParams, reps: &Reps) -> Result<()> {
    let d = params.config().rep_dim();
    let bad = std::iter::once(&reps.h_cls)
        .chain(&reps.h_node)
        .find(|h| h.len() != d);
    match bad {
        Some(h) => Err(Error::DimensionMismatch {
            expected: d,
            found: h.len(),
        }),
        None => Ok(()),
    }
}

/// Log-potentials from the p heads, evaluated on explicit pair vectors.
pub fn compute_potentials(params: &ModelParams, reps: &Reps) -> Result<LogPotentials> {
    check_reps(params, reps)?;
    let h = &params.heads;
    let m = reps.m();
    let mut lp = LogPotentials::zeros(m);
    lp.phi_a.copy_from_slice(&h.answer.forward(&reps.h_cls).1);
    for (i, row) in lp.phi_v.iter_mut().enumerate() {
        row.copy_from_slice(&h.node.forward(&reps.h_node[i]).1);
    }
    for (k, (i, j)) in pairs(m).enumerate() {
        lp.phi_e[k].copy_from_slice(&h.edge.forward(&reps.pair(i, j)).1);
    }
    Ok(lp)
}

/// q from the variational heads.
pub fn compute_variational(params: &ModelParams, reps: &Reps) -> Result<QDist> {
    check_reps(params, reps)?;
    let h = &params.heads;
    let m = reps.m();
    let two = |v: Vec<f64>| softmax2([v[0], v[1]]);
    Ok(QDist {
        q_a: two(h.q_answer.forward(&reps.h_cls).1),
        q_v: reps.h_node.iter().map(|x| two(h.q_node.forward(x).1)).collect(),
        q_e: pairs(m).map(|(i, j)| two(h.q_edge.forward(&reps.pair(i, j)).1)).collect(),
    })
}

/// Potentials and q for a theory/query pair.
pub fn predict_tables(params: &ModelParams, feats: &TokenFeatures) -> (LogPotentials, QDist) {
    let (reps, _) = encoder::forward(params, feats);
    let fwd = heads_forward(params, &reps);
    (fwd.lp, fwd.q)
}

/// Gold `(a*, v*, e*)` from the first gold proof.
pub fn gold_assignment(example: &Example) -> Result<Assignment> {
    let proof = example
        .gold_proofs
        .first()
        .ok_or_else(|| Error::MissingGold(example.id.clone()))?;
    let m = example.theory.len() + 1;
    let mut y = Assignment::zeros(m);
    y.a = example.answer;
    for n in &proof.nodes {
        let i = example
            .theory
            .node_index(n)
            .ok_or_else(|| Error::UnknownNode(n.clone()))?;
        y.v[i] = true;
    }
    for (s, d) in &proof.edges {
        let i = example.theory.node_index(s).ok_or_else(|| Error::UnknownNode(s.clone()))?;
        let j = example.theory.node_index(d).ok_or_else(|| Error::UnknownNode(d.clone()))?;
        if i == j {
            return Err(Error::UnknownNode(format!("{s}->{d}")));
        }
        y.set_edge(i, j, true);
    }
    Ok(y)
}

/// Featurized example with its gold assignment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feats: TokenFeatures,
    pub gold: Assignment,
}

impl Prepared {
    pub fn new(params: &ModelParams, example: &Example) -> Result<Self> {
        let feats = TokenFeatures::new(params.config().hash_dim, &example.theory, &example.query)?;
        let gold = gold_assignment(example)?;
        if gold.m() != feats.m() {
            return Err(Error::DimensionMismatch {
                expected: feats.m(),
                found: gold.m(),
            });
        }
        Ok(Self { feats, gold })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub qa: f64,
    pub node: f64,
    pub edge: f64,
    pub kl: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.qa + self.node + self.edge + self.kl
    }
}

/// Pair-head activations computed through the split first layer: the
/// pre-activation of `W [h_i, h_j, h_i - h_j] + b` equals
/// `(W_a + W_d) h_i + (W_b - W_d) h_j + b`.
struct PairCache {
    left: Linear,
    right: Linear,
    hidden: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
}

fn pair_forward(mlp: &Mlp, h_node: &[Vec<f64>]) -> PairCache {
    let hid = mlp.hidden.rows;
    let d = mlp.hidden.cols / 3;
    let mut left = Linear::zeros(hid, d);
    let mut right = Linear::zeros(hid, d);
    for r in 0..hid {
        let w = mlp.hidden.row(r);
        for k in 0..d {
            left.weight[r * d + k] = w[k] + w[2 * d + k];
            right.weight[r * d + k] = w[d + k] - w[2 * d + k];
        }
    }
    let proj_left: Vec<Vec<f64>> = h_node.iter().map(|h| left.apply(h)).collect();
    let proj_right: Vec<Vec<f64>> = h_node.iter().map(|h| right.apply(h)).collect();
    let m = h_node.len();
    let mut hidden = Vec::with_capacity(num_pairs(m));
    let mut out = Vec::with_capacity(num_pairs(m));
    for (i, j) in pairs(m) {
        let g: Vec<f64> = (0..hid)
            .map(|r| (proj_left[i][r] + proj_right[j][r] + mlp.hidden.bias[r]).tanh())
            .collect();
        out.push(mlp.output.forward(&g));
        hidden.push(g);
    }
    PairCache {
        left,
        right,
        hidden,
        out,
    }
}

fn pair_backward(mlp: &Mlp, h_node: &[Vec<f64>], cache: &PairCache, dout: &[Vec<f64>], grad: &mut Mlp, dh: &mut [Vec<f64>]) {
    let m = h_node.len();
    let hid = mlp.hidden.rows;
    let d = mlp.hidden.cols / 3;
    let mut dl = vec![vec![0.0; hid]; m];
    let mut dr = vec![vec![0.0; hid]; m];
    for (k, (i, j)) in pairs(m).enumerate() {
        if dout[k].iter().all(|&g| g == 0.0) {
            continue;
        }
        let dpre = mlp.backward_to_hidden(&cache.hidden[k], &dout[k], grad);
        axpy(1.0, &dpre, &mut grad.hidden.bias);
        axpy(1.0, &dpre, &mut dl[i]);
        axpy(1.0, &dpre, &mut dr[j]);
    }
    let cols = mlp.hidden.cols;
    for i in 0..m {
        let h = &h_node[i];
        for r in 0..hid {
            let (a, b) = (dl[i][r], dr[i][r]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let row = &mut grad.hidden.weight[r * cols..(r + 1) * cols];
            for k in 0..d {
                row[k] += a * h[k];
                row[d + k] += b * h[k];
                row[2 * d + k] += (a - b) * h[k];
            }
        }
        axpy(1.0, &cache.left.transpose_apply(&dl[i]), &mut dh[i]);
        axpy(1.0, &cache.right.transpose_apply(&dr[i]), &mut dh[i]);
    }
}

struct HeadsForward {
    answer_h: Vec<f64>,
    q_answer_h: Vec<f64>,
    node_h: Vec<Vec<f64>>,
    q_node_h: Vec<Vec<f64>>,
    edge: PairCache,
    q_edge: PairCache,
    q_a_logits: [f64; 2],
    q_v_logits: Vec<[f64; 2]>,
    q_e_logits: Vec<[f64; 2]>,
    lp: LogPotentials,
    q: QDist,
}

fn heads_forward(params: &ModelParams, reps: &Reps) -> HeadsForward {
    let h = &params.heads;
    let m = reps.m();
    let (answer_h, phi_a) = h.answer.forward(&reps.h_cls);
    let (q_answer_h, qa) = h.q_answer.forward(&reps.h_cls);
    let mut node_h = Vec::with_capacity(m);
    let mut q_node_h = Vec::with_capacity(m);
    let mut lp = LogPotentials::zeros(m);
    let mut q_v_logits = Vec::with_capacity(m);
    for i in 0..m {
        let (hh, out) = h.node.forward(&reps.h_node[i]);
        lp.phi_v[i].copy_from_slice(&out);
        node_h.push(hh);
        let (hh, out) = h.q_node.forward(&reps.h_node[i]);
        q_v_logits.push([out[0], out[1]]);
        q_node_h.push(hh);
    }
    lp.phi_a.copy_from_slice(&phi_a);
    let edge = pair_forward(&h.edge, &reps.h_node);
    for (k, out) in edge.out.iter().enumerate() {
        lp.phi_e[k].copy_from_slice(out);
    }
    let q_edge = pair_forward(&h.q_edge, &reps.h_node);
    let q_e_logits: Vec<[f64; 2]> = q_edge.out.iter().map(|o| [o[0], o[1]]).collect();
    let q_a_logits = [qa[0], qa[1]];
    let q = QDist {
        q_a: softmax2(q_a_logits),
        q_v: q_v_logits.iter().map(|&l| softmax2(l)).collect(),
        q_e: q_e_logits.iter().map(|&l| softmax2(l)).collect(),
    };
    HeadsForward {
        answer_h,
        q_answer_h,
        node_h,
        q_node_h,
        edge,
        q_edge,
        q_a_logits,
        q_v_logits,
        q_e_logits,
        lp,
        q,
    }
}

/// Adjoint of `answer_logits`: scatters `dt` onto the potential entries it read.
fn scatter_answer(dlp: &mut LogPotentials, v: &[bool], e: &[bool], dt: [f64; 2]) {
    let m = v.len();
    for (ai, &g) in dt.iter().enumerate() {
        let a = ai == 1;
        dlp.phi_a[ai] += g;
        for i in 0..m {
            dlp.phi_v[i][node_slot(v[i], a)] += g;
        }
        for (k, (i, j)) in pairs(m).enumerate() {
            dlp.phi_e[k][edge_slot(v[i], v[j], e[k], a)] += g;
        }
    }
}

fn scatter_node(dlp: &mut LogPotentials, y: &Assignment, i: usize, dt: [f64; 2]) {
    let m = y.m();
    for (vi, &g) in dt.iter().enumerate() {
        let vi = vi == 1;
        dlp.phi_v[i][node_slot(vi, y.a)] += g;
        for j in (0..m).filter(|&j| j != i) {
            dlp.edge_mut(i, j)[edge_slot(vi, y.v[j], y.edge(i, j), y.a)] += g;
            dlp.edge_mut(j, i)[edge_slot(y.v[j], vi, y.edge(j, i), y.a)] += g;
        }
    }
}

fn scatter_edge(dlp: &mut LogPotentials, y: &Assignment, i: usize, j: usize, dt: [f64; 2]) {
    let t = dlp.edge_mut(i, j);
    t[edge_slot(y.v[i], y.v[j], false, y.a)] += dt[0];
    t[edge_slot(y.v[i], y.v[j], true, y.a)] += dt[1];
}

/// `-log softmax(logits)[target]` and its gradient with respect to `logits`.
fn nll(logits: [f64; 2], target: bool) -> (f64, [f64; 2]) {
    let lp = log_softmax2(logits);
    let p = softmax2(logits);
    let t = usize::from(target);
    let mut g = p;
    g[t] -= 1.0;
    (-lp[t], g)
}

/// `KL(q || p)` for logits `s` (q) and `t` (p), with gradients for both.
fn kl(s: [f64; 2], t: [f64; 2]) -> (f64, [f64; 2], [f64; 2]) {
    let lq = log_softmax2(s);
    let lpp = log_softmax2(t);
    let q = softmax2(s);
    let p = softmax2(t);
    let g = [lq[0] - lpp[0], lq[1] - lpp[1]];
    let value = q[0] * g[0] + q[1] * g[1];
    let ds = [q[0] * (g[0] - value), q[1] * (g[1] - value)];
    let dt = [p[0] - q[0], p[1] - q[1]];
    (value, ds, dt)
}

/// Inverted-dropout masks on the representations fed to the heads.
#[derive(Debug, Clone)]
pub(crate) struct DropoutMasks {
    cls: Vec<f64>,
    nodes: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub(crate) fn sample<R: Rng + ?Sized>(rate: f64, m: usize, dim: usize, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || -> Vec<f64> {
            (0..dim)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let cls = draw();
        let nodes = (0..m).map(|_| draw()).collect();
        Self { cls, nodes }
    }

    fn apply(&self, reps: &mut Reps) {
        mul_in_place(&mut reps.h_cls, &self.cls);
        for (h, mask) in reps.h_node.iter_mut().zip(&self.nodes) {
            mul_in_place(h, mask);
        }
    }
}

fn mul_in_place(x: &mut [f64], mask: &[f64]) {
    for (a, b) in x.iter_mut().zip(mask) {
        *a *= b;
    }
}

struct Forward {
    cache: EncoderCache,
    reps: Reps,
    heads: HeadsForward,
}

fn forward_all(params: &ModelParams, feats: &TokenFeatures, dropout: Option<&DropoutMasks>) -> Forward {
    let (mut reps, cache) = encoder::forward(params, feats);
    if let Some(masks) = dropout {
        masks.apply(&mut reps);
    }
    let heads = heads_forward(params, &reps);
    Forward { cache, reps, heads }
}

/// Objective terms and, when `want_grad`, their gradient.
pub(crate) fn evaluate(
    params: &ModelParams,
    prepared: &Prepared,
    variant: Variant,
    dropout: Option<&DropoutMasks>,
    want_grad: bool,
) -> (LossTerms, Option<Gradients>) {
    let fwd = forward_all(params, &prepared.feats, dropout);
    let hf = &fwd.heads;
    let gold = &prepared.gold;
    let m = gold.m();
    let hard = hard_predictions(&hf.q);

    let mut terms = LossTerms::default();
    let mut dlp = LogPotentials::zeros(m);
    let mut dqa = [0.0; 2];
    let mut dqv = vec![[0.0; 2]; m];
    let mut dqe = vec![[0.0; 2]; num_pairs(m)];

    for i in 0..m {
        let (l, g) = nll(hf.q_v_logits[i], gold.v[i]);
        terms.node += l;
        dqv[i] = g;
    }
    for k in 0..num_pairs(m) {
        let (l, g) = nll(hf.q_e_logits[k], gold.e[k]);
        terms.edge += l;
        dqe[k] = g;
    }

    let cond = if variant.uses_gold() { gold } else { &hard };
    let t = answer_logits(&hf.lp, &cond.v, &cond.e).expect("dimensions checked by Prepared");
    let (l, g) = nll(t, gold.a);
    terms.qa = l;
    scatter_answer(&mut dlp, &cond.v, &cond.e, g);

    if variant.uses_kl() {
        let t = answer_logits(&hf.lp, &hard.v, &hard.e).expect("dimensions checked by Prepared");
        let (l, ds, dt) = kl(hf.q_a_logits, t);
        terms.kl += l;
        axpy(1.0, &ds, &mut dqa);
        scatter_answer(&mut dlp, &hard.v, &hard.e, dt);
        for i in 0..m {
            let t = node_logits(&hf.lp, &hard, i).expect("valid node");
            let (l, ds, dt) = kl(hf.q_v_logits[i], t);
            terms.kl += l;
            axpy(1.0, &ds, &mut dqv[i]);
            scatter_node(&mut dlp, &hard, i, dt);
        }
        for (k, (i, j)) in pairs(m).enumerate() {
            let t = edge_logits(&hf.lp, &hard, i, j).expect("valid edge");
            let (l, ds, dt) = kl(hf.q_e_logits[k], t);
            terms.kl += l;
            axpy(1.0, &ds, &mut dqe[k]);
            scatter_edge(&mut dlp, &hard, i, j, dt);
        }
    }

    if !want_grad {
        return (terms, None);
    }

    let h = &params.heads;
    let mut grad = Gradients::zeros_like(params);
    let dim = params.config().rep_dim();
    let mut d_cls = vec![0.0; dim];
    let mut d_node = vec![vec![0.0; dim]; m];

    let reps = &fwd.reps;
    axpy(1.0, &h.answer.backward(&reps.h_cls, &hf.answer_h, &dlp.phi_a, &mut grad.heads.answer), &mut d_cls);
    axpy(1.0, &h.q_answer.backward(&reps.h_cls, &hf.q_answer_h, &dqa, &mut grad.heads.q_answer), &mut d_cls);
    for i in 0..m {
        let dx = h.node.backward(&reps.h_node[i], &hf.node_h[i], &dlp.phi_v[i], &mut grad.heads.node);
        axpy(1.0, &dx, &mut d_node[i]);
        let dx = h.q_node.backward(&reps.h_node[i], &hf.q_node_h[i], &dqv[i], &mut grad.heads.q_node);
        axpy(1.0, &dx, &mut d_node[i]);
    }
    let dphi_e: Vec<Vec<f64>> = dlp.phi_e.iter().map(|t| t.to_vec()).collect();
    pair_backward(&h.edge, &reps.h_node, &hf.edge, &dphi_e, &mut grad.heads.edge, &mut d_node);
    let dqe: Vec<Vec<f64>> = dqe.iter().map(|t| t.to_vec()).collect();
    pair_backward(&h.q_edge, &reps.h_node, &hf.q_edge, &dqe, &mut grad.heads.q_edge, &mut d_node);

    if let Some(masks) = dropout {
        mul_in_place(&mut d_cls, &masks.cls);
        for (d, mask) in d_node.iter_mut().zip(&masks.nodes) {
            mul_in_place(d, mask);
        }
    }
    encoder::backward(params, &prepared.feats, &fwd.cache, &d_cls, &d_node, &mut grad);
    (terms, Some(grad))
}

pub fn loss_terms(params: &ModelParams, example: &Example, variant: Variant) -> Result<LossTerms> {
    let prepared = Prepared::new(params, example)?;
    Ok(evaluate(params, &prepared, variant, None, false).0)
}

pub fn loss(params: &ModelParams, example: &Example, variant: Variant) -> Result<f64> {
    loss_terms(params, example, variant).map(|t| t.total())
}

/// Loss and its gradient with respect to every parameter.
pub fn grad(params: &ModelParams, example: &Example, variant: Variant) -> Result<(LossTerms, Gradients)> {
    let prepared = Prepared::new(params, example)?;
    let (terms, g) = evaluate(params, &prepared, variant, None, true);
    Ok((terms, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::encode;
    use crate::model::params::EncoderConfig;
    use crate::theory::{parse_query, Theory};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(seed: u64) -> EncoderConfig {
        EncoderConfig {
            hash_dim: 97,
            embed_dim: 5,
            hidden_dim: 4,
            seed,
        }
    }

    fn example(statements: &[(&str, &str)], query: &str) -> Example {
        let t = Theory::parse(statements.iter().copied()).unwrap();
        Example::label("x", t, parse_query(query).unwrap(), 8).unwrap()
    }

    fn perturb_heads(p: &mut ModelParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in [
            &mut p.heads.answer,
            &mut p.heads.node,
            &mut p.heads.edge,
            &mut p.heads.q_answer,
            &mut p.heads.q_node,
            &mut p.heads.q_edge,
        ] {
            for w in m.output.weight.iter_mut().chain(m.output.bias.iter_mut()) {
                *w = rng.gen_range(-1.0..1.0);
            }
            for w in m.hidden.weight.iter_mut() {
                *w = rng.gen_range(-0.8..0.8);
            }
        }
    }

    #[test]
    fn zero_heads_give_uniform_q_and_zero_potentials() {
        let p = ModelParams::init(small_config(1)).unwrap();
        let ex = example(&[("F1", "Alan is young."), ("R1", "If someone is young then someone is big.")], "Alan is big.");
        let reps = encode(&p, &ex.theory, &ex.query).unwrap();
        let lp = compute_potentials(&p, &reps).unwrap();
        assert!(lp.entries().all(|&x| x == 0.0));
        assert_eq!((lp.phi_v.len() * 4, lp.phi_e.len() * 16), (12, 96));
        let q = compute_variational(&p, &reps).unwrap();
        assert!(q.q_v.iter().chain(&q.q_e).chain([&q.q_a]).all(|r| *r == [0.5, 0.5]));
        assert_eq!(hard_predictions(&q), Assignment::zeros(3));
    }

    #[test]
    fn initial_loss_is_five_ln2_for_one_statement() {
        let p = ModelParams::init(small_config(2)).unwrap();
        let ex = example(&[("F1", "Alan is young.")], "Alan is young.");
        let t = loss_terms(&p, &ex, Variant::Base).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((t.node + t.edge - 4.0 * ln2).abs() < 1e-12);
        assert!((t.qa - ln2).abs() < 1e-12);
        assert!((t.total() - 5.0 * ln2).abs() < 1e-12);
    }

    #[test]
    fn split_pair_head_matches_explicit_concatenation() {
        let mut p = ModelParams::init(small_config(3)).unwrap();
        perturb_heads(&mut p, 9);
        let ex = example(
            &[("F1", "Alan is young."), ("F2", "Bob is red."), ("R1", "If someone is young then someone is big.")],
            "Alan is big.",
        );
        let feats = TokenFeatures::new(97, &ex.theory, &ex.query).unwrap();
        let (lp, q) = predict_tables(&p, &feats);
        let reps = encode(&p, &ex.theory, &ex.query).unwrap();
        let lp2 = compute_potentials(&p, &reps).unwrap();
        let q2 = compute_variational(&p, &reps).unwrap();
        for (a, b) in lp.entries().zip(lp2.entries()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in q.q_e.iter().zip(&q2.q_e) {
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn q_edge_softmax_arithmetic() {
        let p = softmax2([0.0, 4f64.ln()]);
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn hard_prediction_ties_go_to_zero() {
        let mut q = QDist::uniform(2);
        q.q_v[1] = [0.3, 0.7];
        let y = hard_predictions(&q);
        assert_eq!(y.v, vec![false, true]);
        assert!(!y.a && y.e.iter().all(|&e| !e));
    }

    #[test]
    fn kl_term_is_the_only_difference_between_gold_and_gold_kl() {
        let mut p = ModelParams::init(small_config(4)).unwrap();
        perturb_heads(&mut p, 5);
        let ex = example(&[("F1", "Alan is young."), ("R1", "If someone is not red then someone is big.")], "Alan is big.");
        let g = loss_terms(&p, &ex, Variant::Gold).unwrap();
        let gk = loss_terms(&p, &ex, Variant::GoldKl).unwrap();
        assert!(gk.kl > 0.0);
        assert_eq!((gk.qa, gk.node, gk.edge), (g.qa, g.node, g.edge));
        assert!((gk.total() - g.total() - gk.kl).abs() <= 1e-12 * gk.total().abs().max(1.0));
        let b = loss_terms(&p, &ex, Variant::Base).unwrap();
        assert_eq!((b.node, b.edge), (g.node, g.edge));
    }

    #[test]
    fn q_answer_head_gets_no_gradient_without_kl() {
        let mut p = ModelParams::init(small_config(6)).unwrap();
        perturb_heads(&mut p, 8);
        let ex = example(&[("F1", "Alan is young."), ("R1", "If someone is young then someone is big.")], "Alan is big.");
        for variant in [Variant::Base, Variant::Gold] {
            let (_, g) = grad(&p, &ex, variant).unwrap();
            let qa = &g.heads.q_answer;
            assert!(qa.hidden.weight.iter().chain(&qa.output.weight).all(|&x| x == 0.0));
        }
        let (_, g) = grad(&p, &ex, Variant::Kl).unwrap();
        assert!(g.heads.q_answer.output.weight.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn missing_gold_is_an_error() {
        let p = ModelParams::init(small_config(7)).unwrap();
        let mut ex = example(&[("F1", "Alan is young.")], "Alan is young.");
        ex.gold_proofs.clear();
        assert!(matches!(loss(&p, &ex, Variant::Base), Err(Error::MissingGold(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
    }
}
