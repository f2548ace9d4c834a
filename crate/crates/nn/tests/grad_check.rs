//! Central-finite-difference gradient checks for both model families.
//!
//! At least 100 participating parameters per model are sampled and the
//! analytic gradient must agree with the numeric one within 1e-4 relative
//! error. f64 end to end, so the finite-difference noise floor is far
//! below the tolerance.

use apr_nn::model::{BaselineConfig, GeneratorSpecials, ModelConfig, PatchModel};
use apr_nn::{lstm::BaselineModel, transformer::TransformerModel, RepairPair};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const REL_TOLERANCE: f64 = 1e-4;
const SAMPLES: usize = 110;
const STEP: f64 = 1e-5;

fn toy_batch() -> Vec<RepairPair> {
    let make = |id: &str, source: Vec<u32>, target: Vec<u32>| RepairPair {
        id: id.into(),
        source_len: source.len(),
        target_len: target.len(),
        source_truncated: false,
        target_truncated: false,
        source,
        target,
    };
    vec![
        make("a", vec![0, 7, 12, 9, 2], vec![0, 7, 13, 9, 2]),
        make("b", vec![0, 21, 5, 2], vec![0, 21, 6, 5, 2]),
    ]
}

/// Sample >= `SAMPLES` entries that actually participate in the loss and
/// compare analytic vs central-difference gradients.
fn run_grad_check(model: &mut dyn PatchModel, seed: u64) -> (usize, f64) {
    let batch = toy_batch();
    let (_, grads) = model.loss_grads(&batch, None).unwrap();

    // Candidate entries whose gradient is large enough for a central
    // difference of the loss to resolve at f64 (the cancellation floor is
    // around |loss|*eps/h ~ 1e-10).
    let mut candidates: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (tensor_idx, id) in model.params().ids().enumerate() {
        let grad = grads.get(id);
        for ((row, col), &g) in grad.indexed_iter() {
            if g.abs() > 1e-5 {
                candidates.push((tensor_idx, row, col, g));
            }
        }
    }
    assert!(
        candidates.len() >= SAMPLES,
        "only {} participating parameters",
        candidates.len()
    );
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..candidates.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        candidates.swap(i, j);
    }
    candidates.truncate(SAMPLES);

    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0.0f64;
    for &(tensor_idx, row, col, analytic) in &candidates {
        let id = ids[tensor_idx];
        let original = model.params().value(id)[(row, col)];
        model.params_mut().value_mut(id)[(row, col)] = original + STEP;
        let plus = model.loss(&batch).unwrap().loss;
        model.params_mut().value_mut(id)[(row, col)] = original - STEP;
        let minus = model.loss(&batch).unwrap().loss;
        model.params_mut().value_mut(id)[(row, col)] = original;

        let numeric = (plus - minus) / (2.0 * STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
        assert!(
            rel <= REL_TOLERANCE,
            "tensor {tensor_idx} [{row},{col}]: analytic {analytic:e}, numeric {numeric:e}, rel {rel:e}"
        );
    }
    (candidates.len(), worst)
}

#[test]
fn transformer_gradients_match_finite_differences() {
    let mut config = ModelConfig::toy(30);
    config.hidden_dim = 16;
    config.attention_heads = 2;
    config.encoder_layers = 1;
    config.decoder_layers = 1;
    config.max_source_len = 8;
    config.max_target_len = 8;
    config.init_seed = 42;
    let mut model = TransformerModel::build_raw(
        config,
        GeneratorSpecials { bos: 0, eos: 2 },
        "grad-check".into(),
    )
    .unwrap();
    let (checked, worst) = run_grad_check(&mut model, 7);
    println!("transformer grad check: {checked} parameters, worst rel err {worst:.2e}");
}

#[test]
fn baseline_gradients_match_finite_differences() {
    let mut config = BaselineConfig::toy(30);
    config.embedding_dim = 12;
    config.hidden_dim = 14;
    config.max_source_len = 8;
    config.max_target_len = 8;
    config.init_seed = 43;
    let mut model = BaselineModel::build_raw(
        config,
        GeneratorSpecials { bos: 0, eos: 2 },
        "grad-check".into(),
    )
    .unwrap();
    let (checked, worst) = run_grad_check(&mut model, 8);
    println!("baseline grad check: {checked} parameters, worst rel err {worst:.2e}");
}
