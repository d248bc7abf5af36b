// scratch calibration harness; not part of the deliverable surface
use std::time::Instant;

use semanchor::corpus::Split;
use semanchor::datagen::{generate_corpus, GenConfig};
use semanchor::model::{DecodeMode, ModelConfig};
use semanchor::training::{fit, Ablation, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let d: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(64);
    let ablation: Ablation = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(Ablation::Full);
    let seed: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1);

    let dropout: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let corpus = generate_corpus(&GenConfig {
        seed: 20260809,
        train,
        dev: 150,
        test: 1000,
        schemas_per_kind: 6,
        ..GenConfig::default()
    })
    .unwrap();
    println!(
        "corpus: {} train, {} dev, {} test; vocab {}",
        corpus.split_len(Split::Train),
        corpus.split_len(Split::Dev),
        corpus.split_len(Split::Test),
        corpus.token_vocabulary().len()
    );

    let layers: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(3);
    let model_cfg = ModelConfig {
        d_model: d,
        heads: 4,
        encoder_layers: 2,
        decoder_layers: layers,
        ff_dim: 2 * d,
        dropout,
        max_source_len: 48,
        max_target_len: 40,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        seed,
        ablation,
        ..TrainConfig::default()
    };
    let dir = std::env::temp_dir().join(format!("semanchor_cal_{seed}_{}", std::process::id()));
    let t0 = Instant::now();
    let report = fit(&corpus, &model_cfg, &train_cfg, &dir).unwrap();
    println!(
        "train took {:.1}s; first epoch loss {:.4}, final {:.4}, best dev {:?} (epoch {})",
        t0.elapsed().as_secs_f64(),
        report.first_epoch_train_loss,
        report.final_train_loss,
        report.best_dev_exec_acc,
        report.best_epoch
    );

    let (model, _) = semanchor::checkpoint::load(&report.checkpoint_path).unwrap();
    let test: Vec<&semanchor::corpus::Example> = corpus.split(Split::Test).collect();
    let t1 = Instant::now();
    let (eval, _) =
        semanchor::analysis::evaluate_model(&model, &corpus, &test, DecodeMode::Greedy).unwrap();
    println!(
        "test eval took {:.1}s: exec_acc {:.4}, exact {:.4}, parse_fail {}, strict_halluc {}, anchor_mismatch {}",
        t1.elapsed().as_secs_f64(),
        eval.execution_accuracy,
        eval.exact_match_rate,
        eval.parse_failures,
        eval.hallucinations_strict,
        eval.hallucinations_anchor_mismatch
    );
    for (shape, stats) in &eval.per_shape {
        println!("  {shape}: {}/{}", stats.correct, stats.total);
    }
}
