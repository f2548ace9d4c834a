//! Overfit oracle: both generators must reach 100% top-1 exact match on a
//! 32-pair toy copy dataset within 2,000 optimizer steps on the CPU.

use apr_core::tokenizer::{train_toy_vocab, Vocab};
use apr_nn::adam::{Adam, AdamConfig};
use apr_nn::beam::greedy_decode;
use apr_nn::data::tokenize_split;
use apr_nn::model::{BaselineConfig, ModelConfig, PatchModel};
use apr_nn::train::batch_for_step;
use apr_nn::{lstm::BaselineModel, transformer::TransformerModel, RepairPair};

fn copy_statements() -> Vec<String> {
    (0..32)
        .map(|i| format!("v{i} = f{}(v{}) ;", i % 7, (i + 3) % 32))
        .collect()
}

fn copy_pairs(vocab: &Vocab) -> Vec<RepairPair> {
    let statements = copy_statements();
    let instances: Vec<apr_core::corpus::BugInstance> = statements
        .iter()
        .enumerate()
        .map(|(i, s)| apr_core::corpus::BugInstance {
            id: format!("{i:012x}:{i}"),
            project_name: "toy".into(),
            fix_commit_sha1: format!("{i:040x}"),
            bug_type: "COPY".into(),
            source_before_fix: s.clone(),
            source_after_fix: s.clone(),
            extra: serde_json::Map::new(),
        })
        .collect();
    tokenize_split(&instances, vocab, 64, 64)
}

fn exact_match_rate(model: &dyn PatchModel, pairs: &[RepairPair]) -> f64 {
    let hits = pairs
        .iter()
        .filter(|pair| {
            let candidate = greedy_decode(model, &pair.source, 32, None);
            candidate.ids == pair.target[1..]
        })
        .count();
    hits as f64 / pairs.len() as f64
}

/// Train until the copy task is solved; returns (steps used, final rate).
fn overfit(
    model: &mut dyn PatchModel,
    pairs: &[RepairPair],
    learning_rate: f64,
    max_steps: usize,
) -> (usize, f64) {
    let mut adam = Adam::new(AdamConfig::with_learning_rate(learning_rate), model.params());
    let mut rate = 0.0;
    for step in 0..max_steps {
        let indices = batch_for_step(1234, step, pairs.len(), 8);
        let batch: Vec<RepairPair> = indices.iter().map(|&i| pairs[i].clone()).collect();
        let (stats, mut grads) = model.loss_grads(&batch, None).unwrap();
        assert!(stats.loss.is_finite(), "loss diverged at step {step}");
        grads.clip_global_norm(1.0);
        adam.step(model.params_mut(), &grads);

        if (step + 1) % 100 == 0 || step + 1 == max_steps {
            rate = exact_match_rate(model, pairs);
            if rate == 1.0 {
                return (step + 1, rate);
            }
        }
    }
    (max_steps, rate)
}

#[test]
fn transformer_overfits_copy_task_within_2000_steps() {
    let vocab = train_toy_vocab(&copy_statements(), 64).unwrap();
    let pairs = copy_pairs(&vocab);
    let mut config = ModelConfig::toy(vocab.len());
    config.init_seed = 5;
    let mut model = TransformerModel::build(&config, &vocab).unwrap();
    println!("{}", model.parameter_report());

    let (steps, rate) = overfit(&mut model, &pairs, 1e-3, 2_000);
    assert_eq!(rate, 1.0, "top-1 exact match {rate} after {steps} steps");
    println!("transformer overfit: 100% at step {steps}");
}

#[test]
fn baseline_overfits_copy_task_within_2000_steps() {
    let vocab = train_toy_vocab(&copy_statements(), 64).unwrap();
    let pairs = copy_pairs(&vocab);
    let mut config = BaselineConfig::toy(vocab.len());
    config.init_seed = 5;
    let mut model = BaselineModel::build(&config, &vocab).unwrap();
    println!("{}", model.parameter_report());

    let (steps, rate) = overfit(&mut model, &pairs, 2e-3, 2_000);
    assert_eq!(rate, 1.0, "top-1 exact match {rate} after {steps} steps");
    println!("baseline overfit: 100% at step {steps}");
}
