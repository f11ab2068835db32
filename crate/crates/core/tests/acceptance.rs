//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    brute_best_edges, brute_conditional, finite_difference, kind_map, naive_derive, random_params, random_theory,
    replay, validate, Flip,
};
use probr::data::{example_rng, generate, generate_example, GenConfig};
use probr::decode::{decode_edges, decode_full, decode_proof, predict_nodes, DecodeConfig};
use probr::eval::Metrics;
use probr::model::gradcheck::check_example;
use probr::model::{predict_and_evaluate, train, EncoderConfig, QDist, TrainConfig, Variant};
use probr::pgm::{
    conditional_answer, conditional_edge, conditional_node, exact_conditional, exact_log_partition, num_variables,
    pair_index, pairs, pseudolikelihood_log, softmax2, Assignment, LogPotentials, Variable,
};
use probr::reasoner::{answer_query, extract_proofs, forward_chain, ProofGraph};
use probr::theory::{Atom, NodeKind, Query};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_secs), || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn conditional_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_cond, mut worst_brute, mut worst_pl) = (0.0f64, 0.0f64, 0.0f64);
    for m in [2, 3] {
        for _ in 0..100 {
            let lp = LogPotentials::random(m, 3.0, &mut rng);
            let y = Assignment::random(m, &mut rng);
            let mut rows = vec![(conditional_answer(&lp, &y.v, &y.e).unwrap(), Variable::Answer, Flip::Answer)];
            for i in 0..m {
                rows.push((conditional_node(&lp, &y, i).unwrap(), Variable::Node(i), Flip::Node(i)));
            }
            for (i, j) in pairs(m) {
                rows.push((conditional_edge(&lp, &y, i, j).unwrap(), Variable::Edge(i, j), Flip::Edge(i, j)));
            }
            let mut exact_pl = 0.0;
            for (fast, var, flip) in rows {
                let exact = exact_conditional(&lp, &y, var).unwrap();
                let brute = brute_conditional(&lp, &y, flip);
                for k in 0..2 {
                    worst_cond = worst_cond.max((fast[k] - exact[k]).abs());
                    worst_brute = worst_brute.max((fast[k] - brute[k]).abs());
                }
                exact_pl += exact[usize::from(y.get(var))].ln();
            }
            worst_pl = worst_pl.max((pseudolikelihood_log(&lp, &y).unwrap() - exact_pl).abs());
        }
    }
    ensure(worst_cond <= 1e-9, || format!("conditional error {worst_cond:e}"))?;
    ensure(worst_brute <= 1e-9, || format!("independent enumeration error {worst_brute:e}"))?;
    ensure(worst_pl <= 1e-8, || format!("pseudolikelihood error {worst_pl:e}"))?;
    within(start.elapsed(), 10)?;
    Ok(format!(
        "max conditional error {worst_cond:.1e} (independent {worst_brute:.1e}), pseudolikelihood {worst_pl:.1e}"
    ))
}

fn partition_sanity() -> Outcome {
    let mut worst = 0.0f64;
    for m in 1..=4 {
        let b = num_variables(m) as f64;
        let z = exact_log_partition(&LogPotentials::zeros(m)).unwrap();
        let expected = b * std::f64::consts::LN_2;
        let err = (z - expected).abs();
        ensure(err <= 4.0 * f64::EPSILON * expected, || format!("m={m}: {z} vs {expected}"))?;
        worst = worst.max(err);
    }
    ensure(num_variables(2) == 5, || "m=2 should have 5 variables".into())?;
    let z2 = exact_log_partition(&LogPotentials::zeros(2)).unwrap();
    ensure((z2 - 5.0 * std::f64::consts::LN_2).abs() <= 4.0 * f64::EPSILON * z2, || format!("m=2 gives {z2}"))?;
    Ok(format!("log Z = B ln 2 for m = 1..4, max error {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let gen = GenConfig {
        num_attributes: 4,
        facts_range: (1, 2),
        rules_range: (1, 1),
        ..GenConfig::default()
    };
    let (mut worst, mut fewest) = (0.0f64, usize::MAX);
    for variant in Variant::ALL {
        for k in 0..10 {
            let ex = generate_example(&gen, &format!("g{k}"), k % 2 == 0, &mut example_rng(31, k)).unwrap();
            ensure(ex.theory.len() < 4, || format!("example {k} has m > 4"))?;
            let encoder = EncoderConfig {
                hash_dim: 64,
                embed_dim: 6,
                hidden_dim: 6,
                seed: k as u64,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
            let params = random_params(encoder, &mut rng);
            let fd = finite_difference(&params, &ex, variant, 60, 1e-4, &mut rng);
            let lib = check_example(&params, &ex, variant, 60, 1e-4, &mut rng).unwrap();
            worst = worst.max(fd.max_rel).max(lib.max_rel_error);
            fewest = fewest.min(fd.checked).min(lib.checked);
        }
    }
    ensure(worst <= 1e-4, || format!("relative error {worst:e}"))?;
    ensure(fewest >= 50, || format!("only {fewest} parameters checked on some example"))?;
    within(start.elapsed(), 60)?;
    Ok(format!("4 variants x 10 examples, >= {fewest} parameters each, max relative error {worst:.1e}"))
}

fn worked_decode() -> Outcome {
    // NAF plus three sentences: s1 and s2 facts, s3 a rule.
    let m = 4;
    let kinds = [NodeKind::Naf, NodeKind::Fact, NodeKind::Fact, NodeKind::Rule];
    let ids: Vec<String> = ["NAF", "S1", "S2", "S3"].map(String::from).to_vec();
    let mut q = QDist::uniform(m);
    q.q_a = [0.2, 0.8];
    q.q_v = vec![[0.9, 0.1], [0.1, 0.9], [0.8, 0.2], [0.1, 0.9]];
    for (i, j) in pairs(m) {
        q.set_edge(i, j, [0.9, 0.1]);
    }
    q.set_edge(1, 3, [0.1, 0.9]);
    let mut lp = LogPotentials::zeros(m);
    lp.phi_a = [0.0, 1.0];
    let p = decode_full(&lp, &q, &ids, &kinds, &DecodeConfig::default()).map_err(|e| e.to_string())?;
    let on: Vec<(usize, usize)> = pairs(m).filter(|&(i, j)| p.e_hat[pair_index(m, i, j)]).collect();
    ensure(p.answer, || "A = 0".into())?;
    ensure(p.v_hat == [false, true, false, true], || format!("V = {:?}", p.v_hat))?;
    ensure(on == [(1, 3)], || format!("edges {on:?}"))?;
    ensure(p.proof == ProofGraph::from_parts(["S1", "S3"], [("S1", "S3")]), || format!("{:?}", p.proof))?;
    Ok("A = V1 = V3 = E13 = 1, every other bit 0".into())
}

fn decoder_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = DecodeConfig::default();
    let mut feasible = 0;
    for case in 0..200 {
        let m = rng.gen_range(2..=6);
        let mut kinds = vec![NodeKind::Naf];
        kinds.extend((1..m).map(|_| if rng.gen_bool(0.5) { NodeKind::Fact } else { NodeKind::Rule }));
        let mut q = QDist::uniform(m);
        for row in q.q_v.iter_mut() {
            *row = softmax2([0.0, rng.gen_range(-3.0..3.0)]);
        }
        for (i, j) in pairs(m) {
            q.set_edge(i, j, softmax2([0.0, rng.gen_range(-4.0..4.0)]));
        }
        let nodes = predict_nodes(&q, &cfg);
        let d = decode_edges(&q, &nodes, &kinds, &cfg);
        ensure(d.exact, || format!("case {case}: search not exact"))?;
        let best = brute_best_edges(&q, &d.nodes, &kinds).ok_or_else(|| format!("case {case}: infeasible"))?;
        ensure((d.score - best).abs() <= 1e-9, || format!("case {case}: {} vs {best}", d.score))?;
        if d.dropped.is_empty() {
            feasible += 1;
        } else {
            ensure(brute_best_edges(&q, &nodes, &kinds).is_none(), || format!("case {case}: dropped nodes needlessly"))?;
        }
        let names: Vec<String> = (0..m).map(|i| if i == 0 { "NAF".into() } else { format!("S{i}") }).collect();
        let by_id: BTreeMap<String, NodeKind> = names.iter().cloned().zip(kinds.iter().copied()).collect();
        let (graph, _) = decode_proof(&q, &nodes, &kinds, &names, &cfg);
        validate(&by_id, &graph).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(format!("200 instances (m <= 6) match enumeration, all proofs valid, {feasible} without node drops"))
}

fn reasoner_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut proofs = 0;
    for case in 0..500 {
        let theory = random_theory(&mut rng, 8);
        let ds = forward_chain(&theory).map_err(|e| e.to_string())?;
        let naive = naive_derive(&theory);
        ensure(ds.derived == naive.keys().cloned().collect::<BTreeSet<_>>(), || format!("theory {case}: derived sets differ"))?;
        ensure(ds.depth == naive, || format!("theory {case}: depths differ"))?;
        let kinds = kind_map(&theory);
        for entity in theory.entities() {
            for attribute in theory.attributes() {
                let atom = Atom::new(entity.clone(), attribute.clone());
                for negated in [false, true] {
                    let query = Query::new(atom.clone(), negated);
                    ensure(answer_query(&ds, &query) == (naive.contains_key(&atom) != negated), || {
                        format!("theory {case}: wrong answer")
                    })?;
                    for p in extract_proofs(&ds, &query, 8) {
                        validate(&kinds, &p).map_err(|e| format!("theory {case}: {e}"))?;
                        replay(&theory, &p, &atom).map_err(|e| format!("theory {case}: {e}"))?;
                        proofs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("500 theories match the fixpoint oracle, {proofs} proofs replayed"))
}

/// Trains on the learning benchmark; returns test metrics and the dev
/// metrics logged after each epoch.
fn learning_run() -> (Metrics, Vec<Metrics>, Duration) {
    let start = Instant::now();
    let all = generate(&GenConfig {
        num_examples: 2500,
        max_depth: 1,
        seed: 7,
        ..GenConfig::default()
    })
    .unwrap();
    let (train_set, test_set) = all.split_at(2000);
    let dev_set = generate(&GenConfig {
        num_examples: 300,
        max_depth: 1,
        seed: 9,
        ..GenConfig::default()
    })
    .unwrap();
    let out = train(train_set, &dev_set, &TrainConfig::default(), EncoderConfig::default()).unwrap();
    let test = predict_and_evaluate(&out.params, test_set, &DecodeConfig::default()).unwrap();
    let dev = out.log.into_iter().filter_map(|e| e.dev).collect();
    (test, dev, start.elapsed())
}

fn learning(test: &Metrics, elapsed: Duration) -> Outcome {
    let d0 = test.per_depth.get(&0).ok_or("no depth-0 test examples")?;
    let summary = format!(
        "test QA {:.3}, depth-0 PA {:.3} (PA {:.3}, FA {:.3}) in {:.0}s",
        test.qa,
        d0.pa,
        test.pa,
        test.fa,
        elapsed.as_secs_f64()
    );
    ensure(test.qa >= 0.90 && d0.pa >= 0.85, || summary.clone())?;
    within(elapsed, 600).map_err(|e| format!("{summary}; {e}"))?;
    Ok(summary)
}

fn metric_identities(runs: &[&Metrics]) -> Outcome {
    for (k, m) in runs.iter().enumerate() {
        ensure(m.fa <= m.qa.min(m.pa), || format!("run {k}: fa {} qa {} pa {}", m.fa, m.qa, m.pa))?;
        for (d, row) in &m.per_depth {
            ensure(row.fa <= row.qa.min(row.pa), || format!("run {k} depth {d}"))?;
        }
    }
    Ok(format!("FA <= min(QA, PA) on {} evaluation runs, overall and per depth", runs.len()))
}

fn probr(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_probr"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    for run in ["1", "2"] {
        probr(&["generate", "--depth", "1", "--num", "120", "--seed", "7", "--out", &format!("data{run}.jsonl")], d)?;
        probr(
            &["train", "--train", "data1.jsonl", "--model", &format!("model{run}.json"), "--epochs", "2", "--seed", "7"],
            d,
        )?;
    }
    let read = |f: &str| std::fs::read(d.join(f)).map_err(|e| e.to_string());
    ensure(read("data1.jsonl")? == read("data2.jsonl")?, || "dataset files differ".into())?;
    ensure(read("model1.json")? == read("model2.json")?, || "checkpoints differ".into())?;
    Ok("generate and train outputs are byte-identical across two runs".into())
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n} [{name}]: PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} [{name}]: FAIL - {detail}");
            }
        }
    };
    report(1, "conditional oracle", conditional_oracle());
    report(2, "partition sanity", partition_sanity());
    report(3, "gradient correctness", gradient_check());
    report(4, "worked decode", worked_decode());
    report(5, "decoder exactness", decoder_exactness());
    report(6, "reasoner oracle", reasoner_oracle());
    let (test, dev, elapsed) = learning_run();
    report(7, "learning analogue", learning(&test, elapsed));
    let mut runs: Vec<&Metrics> = vec![&test];
    runs.extend(dev.iter());
    report(8, "metric identities", metric_identities(&runs));
    report(9, "determinism", determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
