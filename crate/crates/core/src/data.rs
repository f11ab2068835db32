//! Synthetic theories with controlled reasoning depth, and the JSON-lines
//! example format.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoner::{answer_query, extract_proofs, forward_chain, query_depth, Example, ProofGraph};
use crate::theory::{parse_query, render_query, Atom, Literal, Query, Statement, StatementKind, Subject, Theory};

/// Gold proofs kept per example.
pub const PROOF_CAP: usize = 8;
/// Theories rejected before giving up on one example.
pub const MAX_REJECTIONS: usize = 1000;

const ENTITIES: [&str; 10] = [
    "Anne", "Bob", "Charlie", "Dave", "Erin", "Fiona", "Gary", "Harry", "Alan", "Carol",
];
const ATTRIBUTES: [&str; 16] = [
    "big", "blue", "cold", "furry", "green", "kind", "nice", "quiet", "red", "rough", "round", "smart", "white",
    "young", "rich", "strong",
];
/// Chance a rule is about one named entity instead of "someone".
const GROUNDED_RULE_PROB: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_examples: usize,
    pub max_depth: usize,
    pub num_entities: usize,
    pub num_attributes: usize,
    pub facts_range: (usize, usize),
    pub rules_range: (usize, usize),
    pub max_body: usize,
    pub naf_rule_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_examples: 1000,
            max_depth: 1,
            num_entities: 2,
            num_attributes: 8,
            facts_range: (2, 5),
            rules_range: (3, 8),
            max_body: 2,
            naf_rule_fraction: 0.25,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_entities == 0 || self.num_entities > ENTITIES.len() {
            return bad(format!("num_entities must be in 1..={}", ENTITIES.len()));
        }
        if self.num_attributes < 2 || self.num_attributes > ATTRIBUTES.len() {
            return bad(format!("num_attributes must be in 2..={}", ATTRIBUTES.len()));
        }
        for (name, (lo, hi)) in [("facts_range", self.facts_range), ("rules_range", self.rules_range)] {
            if lo > hi {
                return bad(format!("{name} is empty: [{lo}, {hi}]"));
            }
        }
        if self.facts_range.0 == 0 {
            return bad("facts_range must allow at least one fact".into());
        }
        if self.max_body == 0 {
            return bad("max_body must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.naf_rule_fraction) {
            return bad("naf_rule_fraction must lie in [0, 1]".into());
        }
        let base = self.num_attributes.div_ceil(2);
        if self.facts_range.1 > self.num_entities * base {
            return bad(format!(
                "at most {} distinct facts fit {} entities",
                self.num_entities * base,
                self.num_entities
            ));
        }
        Ok(())
    }
}

fn sample_theory<R: Rng>(cfg: &GenConfig, rng: &mut R) -> Result<Theory> {
    let mut entities: Vec<&str> = ENTITIES.choose_multiple(rng, cfg.num_entities).copied().collect();
    entities.sort_unstable();
    let attributes: Vec<&str> = ATTRIBUTES.choose_multiple(rng, cfg.num_attributes).copied().collect();
    // Base attributes are stated and may be negated; derived ones head rules.
    let (base, derived) = attributes.split_at(cfg.num_attributes.div_ceil(2));

    let mut statements = Vec::new();
    let n_facts = rng.gen_range(cfg.facts_range.0..=cfg.facts_range.1);
    let mut facts = BTreeSet::new();
    while facts.len() < n_facts {
        let e = entities[rng.gen_range(0..entities.len())];
        let a = base[rng.gen_range(0..base.len())];
        facts.insert((e, a));
    }
    let mut fact_list: Vec<_> = facts.into_iter().collect();
    fact_list.shuffle(rng);
    for (k, (e, a)) in fact_list.into_iter().enumerate() {
        statements.push(Statement::fact(format!("F{}", k + 1), Atom::new(e, a)));
    }

    let n_rules = rng.gen_range(cfg.rules_range.0..=cfg.rules_range.1);
    for k in 0..n_rules {
        let subject = if rng.gen_bool(GROUNDED_RULE_PROB) {
            Subject::Entity(entities[rng.gen_range(0..entities.len())].to_string())
        } else {
            Subject::Someone
        };
        let head_attr = derived[rng.gen_range(0..derived.len())];
        let size = rng.gen_range(1..=cfg.max_body);
        let with_naf = rng.gen_bool(cfg.naf_rule_fraction);
        let mut body: Vec<Literal> = Vec::new();
        let mut used = BTreeSet::from([head_attr]);
        for slot in 0..size {
            let negated = with_naf && slot == 0;
            let pool: Vec<&str> = if negated {
                base.iter().copied().filter(|a| !used.contains(a)).collect()
            } else {
                attributes.iter().copied().filter(|a| !used.contains(a)).collect()
            };
            let Some(&attr) = pool.choose(rng) else { break };
            used.insert(attr);
            body.push(if negated {
                Literal::negative(subject.clone(), attr)
            } else {
                Literal::positive(subject.clone(), attr)
            });
        }
        statements.push(Statement::rule(
            format!("R{}", k + 1),
            body,
            Literal::positive(subject, head_attr),
        ));
    }
    Theory::new(statements)
}

/// One example whose answer is `target_answer`, with a depth drawn uniformly
/// from `0..=max_depth`.
pub fn generate_example<R: Rng>(cfg: &GenConfig, id: &str, target_answer: bool, rng: &mut R) -> Result<Example> {
    cfg.validate()?;
    let target_depth = rng.gen_range(0..=cfg.max_depth);
    for _ in 0..MAX_REJECTIONS {
        let theory = sample_theory(cfg, rng)?;
        let ds = forward_chain(&theory)?;
        let mut matches = Vec::new();
        for entity in theory.entities() {
            for attribute in theory.attributes() {
                for negated in [false, true] {
                    let query = Query::new(Atom::new(entity.clone(), attribute.clone()), negated);
                    if answer_query(&ds, &query) != target_answer {
                        continue;
                    }
                    let proofs = extract_proofs(&ds, &query, PROOF_CAP);
                    if !proofs.is_empty() && query_depth(&theory, &proofs) == target_depth {
                        matches.push((query, proofs));
                    }
                }
            }
        }
        if let Some((query, gold_proofs)) = matches.choose(rng).cloned() {
            return Ok(Example {
                id: id.to_string(),
                theory,
                query,
                answer: target_answer,
                depth: target_depth,
                gold_proofs,
            });
        }
    }
    Err(Error::ResampleExhausted(MAX_REJECTIONS))
}

pub fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `cfg.num_examples` examples; answers alternate true/false by index so each
/// file is balanced.
pub fn generate(cfg: &GenConfig) -> Result<Vec<Example>> {
    cfg.validate()?;
    (0..cfg.num_examples)
        .into_par_iter()
        .map(|index| {
            let mut rng = example_rng(cfg.seed, index);
            let id = format!("d{}-{:06}", cfg.max_depth, index);
            generate_example(cfg, &id, index % 2 == 0, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRecord {
    id: String,
    kind: StatementKind,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    id: String,
    context: Vec<ContextRecord>,
    query: String,
    answer: bool,
    depth: usize,
    proofs: Vec<ProofGraph>,
}

fn to_record(ex: &Example) -> ExampleRecord {
    ExampleRecord {
        id: ex.id.clone(),
        context: ex
            .theory
            .statements()
            .iter()
            .map(|s| ContextRecord {
                id: s.id.clone(),
                kind: s.kind(),
                text: s.text.clone(),
            })
            .collect(),
        query: render_query(&ex.query),
        answer: ex.answer,
        depth: ex.depth,
        proofs: ex.gold_proofs.clone(),
    }
}

fn from_record(rec: ExampleRecord) -> Result<Example> {
    let theory = Theory::parse(rec.context.iter().map(|c| (c.id.as_str(), c.text.as_str())))?;
    for (c, s) in rec.context.iter().zip(theory.statements()) {
        if c.kind != s.kind() {
            return Err(Error::InvalidTheory(format!("statement {} is not a {:?}", c.id, c.kind)));
        }
    }
    Ok(Example {
        id: rec.id,
        theory,
        query: parse_query(&rec.query)?,
        answer: rec.answer,
        depth: rec.depth,
        gold_proofs: rec.proofs,
    })
}

/// One serialized example, without the trailing newline.
pub fn example_to_line(ex: &Example) -> Result<String> {
    Ok(serde_json::to_string(&to_record(ex))?)
}

pub fn example_from_line(line: &str) -> Result<Example> {
    from_record(serde_json::from_str(line)?)
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for ex in examples {
        out.write_all(example_to_line(ex)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines file. Blank lines are skipped; any malformed line is
/// reported with its 1-based number.
pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = example_from_line(&line).map_err(|e| Error::Schema {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}
