//! Answer, proof and full accuracy with a per-depth breakdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoner::{Example, ProofGraph};

/// One system output, aligned by id with a gold example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub answer: bool,
    pub proof: ProofGraph,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub count: usize,
    pub qa: f64,
    pub pa: f64,
    pub fa: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub qa: f64,
    pub pa: f64,
    pub fa: f64,
    pub per_depth: BTreeMap<usize, DepthRow>,
}

#[derive(Default)]
struct Tally {
    count: usize,
    qa: usize,
    pa: usize,
    fa: usize,
}

impl Tally {
    fn add(&mut self, qa: bool, pa: bool) {
        self.count += 1;
        self.qa += usize::from(qa);
        self.pa += usize::from(pa);
        self.fa += usize::from(qa && pa);
    }

    fn row(&self) -> DepthRow {
        let frac = |k: usize| if self.count == 0 { 0.0 } else { k as f64 / self.count as f64 };
        DepthRow {
            count: self.count,
            qa: frac(self.qa),
            pa: frac(self.pa),
            fa: frac(self.fa),
        }
    }
}

/// A proof counts as correct when its node and edge id sets equal those of
/// some gold proof.
pub fn proof_correct(predicted: &ProofGraph, gold: &[ProofGraph]) -> bool {
    gold.iter().any(|g| g == predicted)
}

pub fn evaluate(predictions: &[PredictionRecord], gold: &[Example]) -> Result<Metrics> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut all = Tally::default();
    let mut by_depth: BTreeMap<usize, Tally> = BTreeMap::new();
    for (position, (p, g)) in predictions.iter().zip(gold).enumerate() {
        if p.id != g.id {
            return Err(Error::IdMismatch {
                position,
                prediction: p.id.clone(),
                gold: g.id.clone(),
            });
        }
        let qa = p.answer == g.answer;
        let pa = proof_correct(&p.proof, &g.gold_proofs);
        all.add(qa, pa);
        by_depth.entry(g.depth).or_default().add(qa, pa);
    }
    let total = all.row();
    Ok(Metrics {
        qa: total.qa,
        pa: total.pa,
        fa: total.fa,
        per_depth: by_depth.into_iter().map(|(d, t)| (d, t.row())).collect(),
    })
}

impl Metrics {
    pub fn count(&self) -> usize {
        self.per_depth.values().map(|r| r.count).sum()
    }

    /// Plain-text table with one row per depth and a total row, in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>5} {:>7} {:>7} {:>7} {:>7}", "D", "Cnt", "QA", "PA", "FA");
        for (d, r) in &self.per_depth {
            let _ = writeln!(
                out,
                "{:>5} {:>7} {:>7.1} {:>7.1} {:>7.1}",
                d,
                r.count,
                100.0 * r.qa,
                100.0 * r.pa,
                100.0 * r.fa
            );
        }
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>7.1} {:>7.1} {:>7.1}",
            "all",
            self.count(),
            100.0 * self.qa,
            100.0 * self.pa,
            100.0 * self.fa
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{Atom, Query, Statement, Theory};

    fn example(id: &str, answer: bool, depth: usize, proof: ProofGraph) -> Example {
        let theory = Theory::new(vec![Statement::fact("F1", Atom::new("Alan", "young"))]).unwrap();
        Example {
            id: id.into(),
            theory,
            query: Query::new(Atom::new("Alan", "young"), false),
            answer,
            depth,
            gold_proofs: vec![proof],
        }
    }

    #[test]
    fn counts_each_metric() {
        let f1 = ProofGraph::single("F1");
        let naf = ProofGraph::naf_only();
        let gold = vec![
            example("a", true, 0, f1.clone()),
            example("b", false, 1, naf.clone()),
            example("c", true, 1, f1.clone()),
        ];
        let preds = vec![
            PredictionRecord { id: "a".into(), answer: true, proof: f1.clone() },
            PredictionRecord { id: "b".into(), answer: true, proof: naf },
            PredictionRecord { id: "c".into(), answer: true, proof: ProofGraph::single("R1") },
        ];
        let m = evaluate(&preds, &gold).unwrap();
        assert!((m.qa - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.pa - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.fa - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.per_depth[&0].count, 1);
        assert_eq!(m.per_depth[&1].fa, 0.0);
        assert_eq!(m.per_depth[&1].qa, 0.5);
        assert_eq!(m.count(), 3);
        assert!(m.table().lines().count() == 4);
    }

    #[test]
    fn misalignment_is_reported() {
        let gold = vec![example("a", true, 0, ProofGraph::single("F1"))];
        assert!(matches!(evaluate(&[], &gold), Err(Error::LengthMismatch { .. })));
        let preds = vec![PredictionRecord { id: "z".into(), answer: true, proof: ProofGraph::single("F1") }];
        assert!(matches!(evaluate(&preds, &gold), Err(Error::IdMismatch { position: 0, .. })));
    }

    #[test]
    fn json_uses_string_depth_keys() {
        let gold = vec![example("a", true, 2, ProofGraph::single("F1"))];
        let preds = vec![PredictionRecord { id: "a".into(), answer: true, proof: ProofGraph::single("F1") }];
        let v = serde_json::to_value(evaluate(&preds, &gold).unwrap()).unwrap();
        assert_eq!(v["per_depth"]["2"]["fa"], 1.0);
        assert_eq!(v["qa"], 1.0);
    }
}
