use std::time::Instant;
use tmt_core::corpus::{generate_corpus, VocabLayout};
use tmt_core::model::{ModelConfig, ModelParams};
use tmt_core::train::*;
use rand::SeedableRng;

fn main() {
    let vocab = VocabLayout::desk_default();
    let config = ModelConfig::desk_default(&vocab);
    let mut params = ModelParams::init(config, 0).unwrap();
    let corpus = generate_corpus(2000, 1, &vocab, (3, 12)).unwrap();
    let mut opt = tmt_core::train::AdamState::new(&params);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    // warmup
    let batch: Vec<_> = corpus.iter().take(16).collect();
    pretrain_step(&mut params, &mut opt, &batch, &vocab, 1e-4, &mut rng).unwrap();
    let t = Instant::now();
    let iters = 20;
    for i in 0..iters {
        let batch: Vec<_> = corpus.iter().skip(i * 16).take(16).collect();
        pretrain_step(&mut params, &mut opt, &batch, &vocab, 1e-4, &mut rng).unwrap();
    }
    let per_step = t.elapsed().as_secs_f64() / iters as f64;
    println!("pretrain step: {:.3}s -> 3000 steps = {:.1} min", per_step, per_step * 3000.0 / 60.0);
    let t = Instant::now();
    for i in 0..iters {
        let batch: Vec<_> = corpus.iter().skip(i * 16).take(16).collect();
        finetune_step(&mut params, &mut opt, &batch, &vocab, 1, false, 1e-4, &mut rng).unwrap();
    }
    let per_step = t.elapsed().as_secs_f64() / iters as f64;
    println!("finetune step: {:.3}s -> 1000 steps = {:.1} min", per_step, per_step * 1000.0 / 60.0);
    let t = Instant::now();
    let m = evaluate(&params, &corpus[..50], 1, &vocab).unwrap();
    println!("eval 50 examples: {:.2}s (acc {:.3})", t.elapsed().as_secs_f64(), m.speech_token_accuracy);
}
