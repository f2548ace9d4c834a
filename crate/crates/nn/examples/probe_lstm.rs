//! scratch probe for baseline convergence
use apr_core::tokenizer::{train_toy_vocab, Vocab};
use apr_nn::adam::{Adam, AdamConfig};
use apr_nn::beam::greedy_decode;
use apr_nn::data::tokenize_split;
use apr_nn::model::{BaselineConfig, PatchModel};
use apr_nn::train::batch_for_step;
use apr_nn::{lstm::BaselineModel, RepairPair};

fn copy_statements() -> Vec<String> {
    (0..32).map(|i| format!("v{i} = f{}(v{}) ;", i % 7, (i + 3) % 32)).collect()
}

fn copy_pairs(vocab: &Vocab) -> Vec<RepairPair> {
    let statements = copy_statements();
    let instances: Vec<apr_core::corpus::BugInstance> = statements.iter().enumerate()
        .map(|(i, s)| apr_core::corpus::BugInstance {
            id: format!("{i:012x}:{i}"),
            project_name: "toy".into(),
            fix_commit_sha1: format!("{i:040x}"),
            bug_type: "COPY".into(),
            source_before_fix: s.clone(),
            source_after_fix: s.clone(),
            extra: serde_json::Map::new(),
        }).collect();
    tokenize_split(&instances, vocab, 64, 64)
}

fn exact_match_rate(model: &dyn PatchModel, pairs: &[RepairPair]) -> f64 {
    let hits = pairs.iter().filter(|pair| {
        let c = greedy_decode(model, &pair.source, 32, None);
        c.ids == pair.target[1..]
    }).count();
    hits as f64 / pairs.len() as f64
}

fn main() {
    let vocab = train_toy_vocab(&copy_statements(), 64).unwrap();
    let pairs = copy_pairs(&vocab);
    println!("vocab {} seq len {}", vocab.len(), pairs[0].target.len());
    for lr in [2e-3, 5e-3, 1e-2] {
        for (e, h) in [(32usize, 64usize), (64, 96)] {
            let mut config = BaselineConfig::toy(vocab.len());
            config.embedding_dim = e;
            config.hidden_dim = h;
            config.init_seed = 5;
            let mut model = BaselineModel::build(&config, &vocab).unwrap();
            let mut adam = Adam::new(AdamConfig::with_learning_rate(lr), model.params());
            let start = std::time::Instant::now();
            let mut reached = None;
            for step in 0..2_000 {
                let indices = batch_for_step(1234, step, pairs.len(), 8);
                let batch: Vec<RepairPair> = indices.iter().map(|&i| pairs[i].clone()).collect();
                let (stats, mut grads) = model.loss_grads(&batch, None).unwrap();
                if !stats.loss.is_finite() { println!("lr {lr} e{e} h{h}: diverged at {step}"); break; }
                grads.clip_global_norm(1.0);
                adam.step(model.params_mut(), &grads);
                if (step + 1) % 200 == 0 {
                    let rate = exact_match_rate(&model, &pairs);
                    print!("[{} {:.2}] ", step + 1, rate);
                    if rate == 1.0 { reached = Some(step + 1); break; }
                }
            }
            println!("\nlr {lr} e{e} h{h}: reached={:?} elapsed {:.0?}", reached, start.elapsed());
        }
    }
}
