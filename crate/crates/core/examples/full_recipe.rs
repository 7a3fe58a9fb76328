use std::time::Instant;
use tmt_core::corpus::{generate_corpus, VocabLayout};
use tmt_core::model::{ModelConfig, ModelParams};
use tmt_core::train::{evaluate, run_training, TrainConfig, TrainStage};

fn main() {
    let t0 = Instant::now();
    let vocab = VocabLayout::desk_default();
    let config = ModelConfig::desk_default(&vocab);
    let params = ModelParams::init(config, 42).unwrap();
    let train = generate_corpus(2000, 1, &vocab, (3, 12)).unwrap();
    let held_out = generate_corpus(200, 2, &vocab, (3, 12)).unwrap();

    let pre_cfg = TrainConfig {
        seed: 10,
        eval_every: 500,
        ..TrainConfig::desk_default(TrainStage::Pretrain)
    };
    let out = run_training(&pre_cfg, &train, Some(&held_out[..50]), &vocab, params, None).unwrap();
    println!("pretrain done at {:.1} min, last loss {:.4}", t0.elapsed().as_secs_f64() / 60.0, out.reports.last().unwrap().total);

    let ft_cfg = TrainConfig {
        seed: 11,
        eval_every: 250,
        ..TrainConfig::desk_default(TrainStage::Finetune)
    };
    let out2 = run_training(&ft_cfg, &train, Some(&held_out[..50]), &vocab, out.params, None).unwrap();
    println!("finetune done at {:.1} min, last loss {:.4}", t0.elapsed().as_secs_f64() / 60.0, out2.reports.last().unwrap().total);

    let t_eval = Instant::now();
    let m = evaluate(&out2.params, &held_out, 1, &vocab).unwrap();
    println!(
        "held-out: speech acc {:.4}, duration exact {:.4}, span exact {:.4} (eval {:.1}s)",
        m.speech_token_accuracy, m.duration_exact_match, m.span_exact_match,
        t_eval.elapsed().as_secs_f64()
    );
    println!("total {:.1} min", t0.elapsed().as_secs_f64() / 60.0);

    // save for reuse
    let ckpt = tmt_core::checkpoint::Checkpoint::from_params(&out2.params, &vocab, 4000, None);
    tmt_core::checkpoint::save_checkpoint(std::path::Path::new("/tmp/full_recipe.ckpt"), &ckpt).unwrap();
}
