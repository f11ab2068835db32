use probr::data::{generate, GenConfig};
use probr::decode::{infer, DecodeConfig};
use probr::model::{predict_and_evaluate, train, EncoderConfig, TrainConfig};
use probr::theory::{parse_query, Theory};

fn corpus(num: usize, seed: u64) -> Vec<probr::reasoner::Example> {
    generate(&GenConfig {
        num_examples: num,
        max_depth: 0,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
}

#[test]
fn depth_zero_corpus_is_learned() {
    let train_set = corpus(200, 1);
    let dev_set = corpus(200, 2);
    let out = train(&train_set, &dev_set, &TrainConfig::default(), EncoderConfig::default()).unwrap();
    let dev = predict_and_evaluate(&out.params, &dev_set, &DecodeConfig::default()).unwrap();
    assert!(dev.qa >= 0.95, "dev qa {}", dev.qa);
    assert!(dev.fa <= dev.qa.min(dev.pa));
    assert_eq!(out.log.len(), TrainConfig::default().epochs);

    let theory = Theory::parse([("F1", "Alan is young."), ("F2", "Bob is kind.")]).unwrap();
    let p = infer(&out.params, &theory, &parse_query("Alan is young.").unwrap(), &DecodeConfig::default()).unwrap();
    assert!(p.answer);
    assert!(p.proof.nodes.contains("F1"));
}
