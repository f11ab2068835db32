//! Undirected joint model over the answer variable `A`, node indicators `V_i`
//! and edge indicators `E_ij`.
//!
//! Potentials are kept in log space. Table layouts:
//!
//! * node table row `i`: index `2 * v_i + a`
//! * edge table for ordered pair `(i, j)`: index `8 * v_i + 4 * v_j + 2 * e_ij + a`
//!
//! Ordered pairs `(i, j)`, `i != j`, are laid out row-major with the diagonal
//! removed (see [`pair_index`]).

use rand::Rng;

use crate::error::{Error, Result};

/// Largest variable count accepted by the enumeration routines.
pub const MAX_EXACT_BITS: usize = 22;

/// A distribution over `{0, 1}`.
pub type Binary = [f64; 2];

pub fn num_pairs(m: usize) -> usize {
    m * m.saturating_sub(1)
}

/// Position of ordered pair `(i, j)` in an `m`-node pair table.
pub fn pair_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < m && j < m);
    i * (m - 1) + if j < i { j } else { j - 1 }
}

/// Ordered pairs in table order.
pub fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
}

#[inline]
pub fn node_slot(v: bool, a: bool) -> usize {
    2 * usize::from(v) + usize::from(a)
}

#[inline]
pub fn edge_slot(vi: bool, vj: bool, e: bool, a: bool) -> usize {
    8 * usize::from(vi) + 4 * usize::from(vj) + 2 * usize::from(e) + usize::from(a)
}

pub fn softmax2(logits: [f64; 2]) -> Binary {
    let mx = logits[0].max(logits[1]);
    let e0 = (logits[0] - mx).exp();
    let e1 = (logits[1] - mx).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

pub fn log_softmax2(logits: [f64; 2]) -> Binary {
    let lse = log_sum_exp2(logits[0], logits[1]);
    [logits[0] - lse, logits[1] - lse]
}

pub fn log_sum_exp2(x: f64, y: f64) -> f64 {
    let mx = x.max(y);
    mx + ((x - mx).exp() + (y - mx).exp()).ln()
}

/// One random variable of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    Answer,
    Node(usize),
    Edge(usize, usize),
}

/// Every variable for `m` nodes: `A`, then `V_0..V_{m-1}`, then edges in pair order.
pub fn variables(m: usize) -> impl Iterator<Item = Variable> {
    std::iter::once(Variable::Answer)
        .chain((0..m).map(Variable::Node))
        .chain(pairs(m).map(|(i, j)| Variable::Edge(i, j)))
}

pub fn num_variables(m: usize) -> usize {
    1 + m + num_pairs(m)
}

/// Full binary assignment to `(A, V, E)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub a: bool,
    pub v: Vec<bool>,
    pub e: Vec<bool>,
}

impl Assignment {
    pub fn zeros(m: usize) -> Self {
        Self {
            a: false,
            v: vec![false; m],
            e: vec![false; num_pairs(m)],
        }
    }

    /// Decodes `bits`: bit 0 is `A`, bits `1..=m` are `V`, then edges in pair order.
    pub fn from_bits(m: usize, bits: u64) -> Self {
        let bit = |k: usize| (bits >> k) & 1 == 1;
        Self {
            a: bit(0),
            v: (0..m).map(|i| bit(1 + i)).collect(),
            e: (0..num_pairs(m)).map(|k| bit(1 + m + k)).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Self {
            a: rng.gen(),
            v: (0..m).map(|_| rng.gen()).collect(),
            e: (0..num_pairs(m)).map(|_| rng.gen()).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.v.len()
    }

    pub fn num_bits(&self) -> usize {
        1 + self.v.len() + self.e.len()
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.e[pair_index(self.m(), i, j)]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, value: bool) {
        let k = pair_index(self.m(), i, j);
        self.e[k] = value;
    }

    pub fn get(&self, var: Variable) -> bool {
        match var {
            Variable::Answer => self.a,
            Variable::Node(i) => self.v[i],
            Variable::Edge(i, j) => self.edge(i, j),
        }
    }

    pub fn set(&mut self, var: Variable, value: bool) {
        match var {
            Variable::Answer => self.a = value,
            Variable::Node(i) => self.v[i] = value,
            Variable::Edge(i, j) => self.set_edge(i, j, value),
        }
    }

    fn check(&self) -> Result<()> {
        let m = self.m();
        if self.e.len() != num_pairs(m) {
            return Err(Error::DimensionMismatch {
                expected: num_pairs(m),
                found: self.e.len(),
            });
        }
        Ok(())
    }
}

/// Log-potential tables `log Φᴬ`, `log Φᵛᵢ`, `log Φᴱᵢⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPotentials {
    pub phi_a: [f64; 2],
    pub phi_v: Vec<[f64; 4]>,
    pub phi_e: Vec<[f64; 16]>,
}

impl LogPotentials {
    pub fn zeros(m: usize) -> Self {
        Self {
            phi_a: [0.0; 2],
            phi_v: vec![[0.0; 4]; m],
            phi_e: vec![[0.0; 16]; num_pairs(m)],
        }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(m: usize, scale: f64, rng: &mut R) -> Self {
        let mut lp = Self::zeros(m);
        for x in lp.entries_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
        lp
    }

    pub fn m(&self) -> usize {
        self.phi_v.len()
    }

    pub fn edge(&self, i: usize, j: usize) -> &[f64; 16] {
        &self.phi_e[pair_index(self.m(), i, j)]
    }

    pub fn edge_mut(&mut self, i: usize, j: usize) -> &mut [f64; 16] {
        let k = pair_index(self.m(), i, j);
        &mut self.phi_e[k]
    }

    pub fn entries(&self) -> impl Iterator<Item = &f64> {
        self.phi_a
            .iter()
            .chain(self.phi_v.iter().flatten())
            .chain(self.phi_e.iter().flatten())
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.phi_a
            .iter_mut()
            .chain(self.phi_v.iter_mut().flatten())
            .chain(self.phi_e.iter_mut().flatten())
    }

    pub fn len(&self) -> usize {
        2 + 4 * self.phi_v.len() + 16 * self.phi_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(|x| x.is_finite())
    }

    fn check(&self, y: &Assignment) -> Result<()> {
        let m = self.m();
        if self.phi_e.len() != num_pairs(m) {
            return Err(Error::DimensionMismatch {
                expected: num_pairs(m),
                found: self.phi_e.len(),
            });
        }
        if y.m() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: y.m(),
            });
        }
        y.check()
    }
}

/// Unnormalized log-probability of `y` under the factorization.
pub fn joint_log_score(lp: &LogPotentials, y: &Assignment) -> Result<f64> {
    lp.check(y)?;
    let m = lp.m();
    let mut score = lp.phi_a[usize::from(y.a)];
    for i in 0..m {
        score += lp.phi_v[i][node_slot(y.v[i], y.a)];
    }
    for (k, (i, j)) in pairs(m).enumerate() {
        score += lp.phi_e[k][edge_slot(y.v[i], y.v[j], y.e[k], y.a)];
    }
    Ok(score)
}

fn check_enumerable(m: usize) -> Result<usize> {
    let bits = num_variables(m);
    if bits > MAX_EXACT_BITS {
        return Err(Error::TooLarge {
            bits,
            limit: MAX_EXACT_BITS,
        });
    }
    Ok(bits)
}

/// `log Z` by enumerating every assignment.
pub fn exact_log_partition(lp: &LogPotentials) -> Result<f64> {
    let m = lp.m();
    let bits = check_enumerable(m)?;
    let scores = (0..1u64 << bits)
        .map(|mask| joint_log_score(lp, &Assignment::from_bits(m, mask)))
        .collect::<Result<Vec<f64>>>()?;
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln())
}

/// `p(var | rest of y)` from two evaluations of the full joint score.
pub fn exact_conditional(lp: &LogPotentials, y: &Assignment, var: Variable) -> Result<Binary> {
    check_enumerable(lp.m())?;
    check_variable(lp.m(), var)?;
    let mut y = y.clone();
    y.set(var, false);
    let s0 = joint_log_score(lp, &y)?;
    y.set(var, true);
    let s1 = joint_log_score(lp, &y)?;
    Ok(softmax2([s0, s1]))
}

fn check_variable(m: usize, var: Variable) -> Result<()> {
    let bad = match var {
        Variable::Answer => None,
        Variable::Node(i) => (i >= m).then_some(i),
        Variable::Edge(i, j) => {
            if i >= m {
                Some(i)
            } else if j >= m {
                Some(j)
            } else if i == j {
                Some(i)
            } else {
                None
            }
        }
    };
    match bad {
        Some(index) => Err(Error::IndexOutOfRange { index, len: m }),
        None => Ok(()),
    }
}

/// Logits of `A` given node and edge values.
pub fn answer_logits(lp: &LogPotentials, v: &[bool], e: &[bool]) -> Result<[f64; 2]> {
    let m = lp.m();
    if v.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: v.len(),
        });
    }
    if e.len() != num_pairs(m) || lp.phi_e.len() != num_pairs(m) {
        return Err(Error::DimensionMismatch {
            expected: num_pairs(m),
            found: e.len(),
        });
    }
    let mut out = [0.0; 2];
    for (a, slot) in out.iter_mut().enumerate() {
        let a = a == 1;
        let mut s = lp.phi_a[usize::from(a)];
        for i in 0..m {
            s += lp.phi_v[i][node_slot(v[i], a)];
        }
        for (k, (i, j)) in pairs(m).enumerate() {
            s += lp.phi_e[k][edge_slot(v[i], v[j], e[k], a)];
        }
        *slot = s;
    }
    Ok(out)
}

pub fn conditional_answer(lp: &LogPotentials, v: &[bool], e: &[bool]) -> Result<Binary> {
    answer_logits(lp, v, e).map(softmax2)
}

/// Logits of `V_i` from the factors that touch it.
pub fn node_logits(lp: &LogPotentials, y: &Assignment, i: usize) -> Result<[f64; 2]> {
    lp.check(y)?;
    let m = lp.m();
    check_variable(m, Variable::Node(i))?;
    let a = y.a;
    let mut out = [0.0; 2];
    for (vi, slot) in out.iter_mut().enumerate() {
        let vi = vi == 1;
        let mut s = lp.phi_v[i][node_slot(vi, a)];
        for j in (0..m).filter(|&j| j != i) {
            s += lp.edge(i, j)[edge_slot(vi, y.v[j], y.edge(i, j), a)];
            s += lp.edge(j, i)[edge_slot(y.v[j], vi, y.edge(j, i), a)];
        }
        *slot = s;
    }
    Ok(out)
}

pub fn conditional_node(lp: &LogPotentials, y: &Assignment, i: usize) -> Result<Binary> {
    node_logits(lp, y, i).map(softmax2)
}

/// Logits of `E_ij`; only the factor `Φᴱᵢⱼ` involves it.
pub fn edge_logits(lp: &LogPotentials, y: &Assignment, i: usize, j: usize) -> Result<[f64; 2]> {
    lp.check(y)?;
    check_variable(lp.m(), Variable::Edge(i, j))?;
    let t = lp.edge(i, j);
    let (vi, vj, a) = (y.v[i], y.v[j], y.a);
    Ok([t[edge_slot(vi, vj, false, a)], t[edge_slot(vi, vj, true, a)]])
}

pub fn conditional_edge(lp: &LogPotentials, y: &Assignment, i: usize, j: usize) -> Result<Binary> {
    edge_logits(lp, y, i, j).map(softmax2)
}

/// Logits of any variable given the rest of `y`.
pub fn conditional_logits(lp: &LogPotentials, y: &Assignment, var: Variable) -> Result<[f64; 2]> {
    match var {
        Variable::Answer => {
            lp.check(y)?;
            answer_logits(lp, &y.v, &y.e)
        }
        Variable::Node(i) => node_logits(lp, y, i),
        Variable::Edge(i, j) => edge_logits(lp, y, i, j),
    }
}

/// `log p_pseudo(Y = y)`: the sum of every variable's log-conditional.
pub fn pseudolikelihood_log(lp: &LogPotentials, y: &Assignment) -> Result<f64> {
    lp.check(y)?;
    let mut total = 0.0;
    for var in variables(lp.m()) {
        let lps = log_softmax2(conditional_logits(lp, y, var)?);
        total += lps[usize::from(y.get(var))];
    }
    Ok(total)
}
