//! Beam-search correctness against an exhaustive-enumeration oracle.
//!
//! On 100 random toy models (both families, |V| <= 5, max_len <= 4), beam
//! search with width |V|^max_len must return the true optimum of the
//! length-normalized score, and beam width 1 must equal a stepwise argmax
//! walk. The width bound guarantees no hypothesis is ever pruned, so any
//! disagreement is a real bug, not sampling noise.

use apr_nn::beam::{beam_search, enumerate_optimum, greedy_decode};
use apr_nn::model::{BaselineConfig, GeneratorSpecials, ModelConfig, PatchModel};
use apr_nn::{lstm::BaselineModel, transformer::TransformerModel};

fn tiny_transformer(seed: u64, vocab_size: usize) -> TransformerModel {
    let mut config = ModelConfig::toy(vocab_size);
    config.hidden_dim = 8;
    config.attention_heads = 2;
    config.encoder_layers = 1;
    config.decoder_layers = 1;
    config.max_source_len = 8;
    config.max_target_len = 8;
    config.init_seed = seed;
    TransformerModel::build_raw(config, GeneratorSpecials { bos: 0, eos: 2 }, "oracle".into())
        .unwrap()
}

fn tiny_baseline(seed: u64, vocab_size: usize) -> BaselineModel {
    let mut config = BaselineConfig::toy(vocab_size);
    config.embedding_dim = 8;
    config.hidden_dim = 8;
    config.max_source_len = 8;
    config.max_target_len = 8;
    config.init_seed = seed;
    BaselineModel::build_raw(config, GeneratorSpecials { bos: 0, eos: 2 }, "oracle".into())
        .unwrap()
}

fn check_model(model: &dyn PatchModel, vocab_size: usize, max_len: usize, label: &str) {
    let source = vec![0u32, 1, vocab_size as u32 - 1, 2];
    let width = vocab_size.pow(max_len as u32);

    let beam = beam_search(model, &source, width, max_len, None);
    let (oracle_tokens, oracle_score) = enumerate_optimum(model, &source, max_len);
    assert!(!beam.is_empty(), "{label}: beam returned nothing");
    assert_eq!(
        beam[0].ids, oracle_tokens,
        "{label}: beam top-1 differs from exhaustive optimum"
    );
    assert!(
        (beam[0].score - oracle_score).abs() <= 1e-9 * oracle_score.abs().max(1.0),
        "{label}: score {} vs oracle {}",
        beam[0].score,
        oracle_score
    );
    for pair in beam.windows(2) {
        assert!(pair[0].score >= pair[1].score, "{label}: ranks out of order");
    }

    // Greedy equals a manual stepwise argmax walk.
    let greedy = greedy_decode(model, &source, max_len, None);
    let cache = model.encode_source(&source);
    let mut prefix = vec![model.specials().bos];
    let mut manual = Vec::new();
    for _ in 0..max_len {
        let log_probs = model.next_log_probs(&cache, &prefix);
        let argmax = log_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
            .expect("non-empty vocab")
            .0 as u32;
        prefix.push(argmax);
        manual.push(argmax);
        if argmax == model.specials().eos {
            break;
        }
    }
    assert_eq!(greedy.ids, manual, "{label}: beam=1 differs from greedy walk");
}

#[test]
fn beam_equals_exhaustive_enumeration_on_100_random_models() {
    let mut cases = 0usize;
    // 50 transformers + 50 baselines over a grid of vocab sizes, length
    // caps, and seeds.
    for seed in 0..25u64 {
        for (vocab_size, max_len) in [(4usize, 3usize), (5, 4)] {
            let model = tiny_transformer(seed * 31 + 1, vocab_size);
            check_model(&model, vocab_size, max_len, &format!("transformer seed {seed}"));
            cases += 1;
        }
    }
    for seed in 0..25u64 {
        for (vocab_size, max_len) in [(3usize, 4usize), (5, 3)] {
            let model = tiny_baseline(seed * 17 + 3, vocab_size);
            check_model(&model, vocab_size, max_len, &format!("baseline seed {seed}"));
            cases += 1;
        }
    }
    assert_eq!(cases, 100);
    println!("beam oracle: {cases} random models matched exhaustive enumeration");
}
