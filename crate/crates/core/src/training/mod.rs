//! Multi-task training: loss assembly, self-adaptive weighting, AdamW with
//! warm-up/decay, the ablation switchboard, and the fit loop.
//!
//! Batches run in two phases. Phase one forwards every example (in
//! parallel) and reads off the raw task losses; their batch means drive the
//! task-weight update. Phase two rebuilds each example's total loss with
//! those weights and runs backward. Per-example gradients are folded in a
//! fixed order, so results are bit-identical for any thread count.

mod loss;
mod optimizer;
mod weights;

pub use loss::{task_loss, total_loss, PreparedExample};
pub use optimizer::{clip_global_norm, learning_rate, AdamW};
pub use weights::TaskWeightState;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::corpus::{Corpus, Example, Split, Vocab};
use crate::model::{ForwardOpts, ForwardTrace, Model, ModelConfig, ModelError, TaskKind};
use crate::tensor::{Graph, NodeId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("non-finite loss at epoch {epoch} step {step}; diagnostics written to {dump}")]
    NanLoss { epoch: usize, step: u64, dump: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which parts of the architecture train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Both intermediate tasks over the hierarchical aggregation.
    Full,
    /// Alignment task only.
    NoSae,
    /// Extraction task only.
    NoSaa,
    /// Both tasks read the final decoder layer; no layer weights.
    NoHierarchy,
    /// Main task only.
    Baseline,
}

impl Ablation {
    pub fn tasks(self) -> crate::model::TaskSet {
        use crate::model::TaskSet;
        match self {
            Ablation::Full => TaskSet { sae: true, saa: true, hierarchy: true },
            Ablation::NoSae => TaskSet { sae: false, saa: true, hierarchy: true },
            Ablation::NoSaa => TaskSet { sae: true, saa: false, hierarchy: true },
            Ablation::NoHierarchy => TaskSet { sae: true, saa: true, hierarchy: false },
            Ablation::Baseline => TaskSet { sae: false, saa: false, hierarchy: false },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSae => "no_sae",
            Ablation::NoSaa => "no_saa",
            Ablation::NoHierarchy => "no_hierarchy",
            Ablation::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_sae" => Ok(Ablation::NoSae),
            "no_saa" => Ok(Ablation::NoSaa),
            "no_hierarchy" => Ok(Ablation::NoHierarchy),
            "baseline" => Ok(Ablation::Baseline),
            other => Err(format!("unknown ablation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Loss-balanced task weighting; fixed 1.0 coefficients when off.
    pub self_adaptive_weighting: bool,
    /// Worker threads for within-batch parallelism; 0 uses the default
    /// pool size. Results do not depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            warmup_proportion: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            clip_norm: 1.0,
            seed: 0,
            ablation: Ablation::Full,
            self_adaptive_weighting: true,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) {
            return Err(TrainError::Config("warmup_proportion must be in [0, 1)".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log. Step records carry the raw (unweighted)
/// batch losses and the weights actually applied; epoch records carry the
/// dev metric and, with hierarchy on, the per-task layer distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricsRecord {
    Step {
        epoch: usize,
        step: u64,
        l_main: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l_sae: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l_saa: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w1: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w2: Option<f64>,
        lr: f64,
    },
    Epoch {
        epoch: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dev_exec_acc: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hier_weights: Option<BTreeMap<String, Vec<f64>>>,
        all_masked_examples: usize,
    },
}

/// Read every record of a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, TrainError> {
    let data = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| TrainError::Corpus(format!("bad metrics line: {e}")))
        })
        .collect()
}

#[derive(Debug)]
pub struct FitReport {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub best_dev_exec_acc: Option<f64>,
    pub best_epoch: usize,
    pub first_epoch_train_loss: f64,
    pub final_train_loss: f64,
}

/// Softmax of the stored layer-weight parameters, per task.
pub fn hierarchy_distributions(model: &Model) -> Option<BTreeMap<String, Vec<f64>>> {
    if !model.tasks.hierarchy {
        return None;
    }
    let mut out = BTreeMap::new();
    for task in model.tasks.active() {
        let (_, _, hier) = model.head_index(task)?;
        let idx = hier?;
        let w = model.params.get(idx).values.as_ref();
        out.insert(task.name().to_string(), softmax_vec(w));
    }
    Some(out)
}

pub fn softmax_vec(w: &[f64]) -> Vec<f64> {
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the concatenated parts
    let mut h = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Backward results fold in fixed-size chunks so gradient summation order
/// never depends on the thread count.
const GRAD_FOLD_CHUNK: usize = 8;

struct ForwardOut {
    graph: Graph,
    trace: ForwardTrace,
    main: NodeId,
    sae: Option<NodeId>,
    saa: Option<NodeId>,
    all_masked: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct TaskLosses {
    main: f64,
    sae: Option<f64>,
    saa: Option<f64>,
}

fn forward_batch(
    model: &Model,
    prepared: &[PreparedExample],
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    step: u64,
) -> Result<Vec<ForwardOut>, TrainError> {
    let tasks = model.tasks;
    batch
        .par_iter()
        .map(|&i| -> Result<ForwardOut, TrainError> {
            let prep = &prepared[i];
            let mut g = Graph::with_capacity(512);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                cfg.seed,
                0xD207,
                epoch as u64,
                step,
                i as u64,
            ]));
            let mut opts = ForwardOpts::train(&mut rng);
            let trace = model.forward(&mut g, &prep.x, &prep.y_in, &mut opts)?;
            let main = task_loss(&mut g, &trace, prep, None)?;
            let mut all_masked = 0;
            let sae = tasks
                .sae
                .then(|| {
                    if prep.all_masked(TaskKind::Sae) {
                        all_masked += 1;
                    }
                    task_loss(&mut g, &trace, prep, Some(TaskKind::Sae))
                })
                .transpose()?;
            let saa = tasks
                .saa
                .then(|| {
                    if prep.all_masked(TaskKind::Saa) {
                        all_masked += 1;
                    }
                    task_loss(&mut g, &trace, prep, Some(TaskKind::Saa))
                })
                .transpose()?;
            Ok(ForwardOut { graph: g, trace, main, sae, saa, all_masked })
        })
        .collect()
}

fn batch_losses(forwards: &[ForwardOut]) -> TaskLosses {
    let n = forwards.len() as f64;
    let mean_of = |sel: fn(&ForwardOut) -> Option<NodeId>| -> Option<f64> {
        let mut sum = 0.0;
        for f in forwards {
            sum += f.graph.scalar_value(sel(f)?);
        }
        Some(sum / n)
    };
    TaskLosses {
        main: forwards.iter().map(|f| f.graph.scalar_value(f.main)).sum::<f64>() / n,
        sae: mean_of(|f| f.sae),
        saa: mean_of(|f| f.saa),
    }
}

/// Backward every example with the batch's task weights; returns mean
/// gradients in parameter order.
fn backward_batch(
    model: &Model,
    forwards: &mut [ForwardOut],
    w1: Option<f64>,
    w2: Option<f64>,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let shapes: Vec<usize> = model.params.iter().map(|p| p.len()).collect();
    let n = forwards.len() as f64;
    let chunk_grads: Vec<Vec<Vec<f64>>> = forwards
        .par_chunks_mut(GRAD_FOLD_CHUNK)
        .map(|chunk| -> Result<Vec<Vec<f64>>, TrainError> {
            let mut acc: Vec<Vec<f64>> = shapes.iter().map(|&l| vec![0.0; l]).collect();
            for f in chunk {
                let sae = f.sae.map(|id| (id, w1.expect("weight present with task")));
                let saa = f.saa.map(|id| (id, w2.expect("weight present with task")));
                let total = total_loss(&mut f.graph, f.main, sae, saa)?;
                f.graph.backward(total)?;
                for (pi, node) in f.trace.bound.ids.iter().enumerate() {
                    if let Some(gr) = f.graph.grad(*node) {
                        for (a, g) in acc[pi].iter_mut().zip(gr) {
                            *a += g;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;

    let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&l| vec![0.0; l]).collect();
    for chunk in chunk_grads {
        for (dst, src) in grads.iter_mut().zip(chunk) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    for g in grads.iter_mut() {
        for v in g.iter_mut() {
            *v /= n;
        }
    }
    Ok(grads)
}

/// Greedy execution accuracy of the model on a set of examples.
fn dev_accuracy(
    model: &Model,
    corpus: &Corpus,
    examples: &[&Example],
) -> Result<f64, TrainError> {
    let report = crate::analysis::evaluate_model(
        model,
        corpus,
        examples,
        crate::model::DecodeMode::Greedy,
    )
    .map_err(|e| TrainError::Corpus(e.to_string()))?;
    Ok(report.0.execution_accuracy)
}

fn write_record(
    out: &mut impl Write,
    path: &Path,
    record: &MetricsRecord,
) -> Result<(), TrainError> {
    let line = serde_json::to_string(record).expect("metrics serialize");
    writeln!(out, "{line}").map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn fit(
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<FitReport, TrainError> {
    train_cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let vocab = Vocab::new(corpus.token_vocabulary());
    let tasks = train_cfg.ablation.tasks();
    let mut cfg = model_cfg.clone();
    cfg.vocab_size = 0; // resolved from the corpus vocabulary
    let mut model = Model::init(cfg, vocab, tasks, train_cfg.seed)?;

    let train_examples: Vec<&Example> = corpus.split(Split::Train).collect();
    if train_examples.is_empty() {
        return Err(TrainError::Corpus("no training examples".into()));
    }
    for ex in &train_examples {
        loss::assert_no_specials(ex)?;
    }
    let prepared: Vec<PreparedExample> = train_examples
        .iter()
        .map(|ex| PreparedExample::build(ex, &model.vocab))
        .collect::<Result<_, _>>()?;
    let max_src = prepared.iter().map(|p| p.x.len()).max().unwrap_or(0);
    let max_tgt = prepared.iter().map(|p| p.y_in.len()).max().unwrap_or(0);
    if max_src > model.config.max_source_len {
        return Err(TrainError::Config(format!(
            "max_source_len {} below corpus maximum {max_src}",
            model.config.max_source_len
        )));
    }
    if max_tgt > model.config.max_target_len + 1 {
        return Err(TrainError::Config(format!(
            "max_target_len {} below corpus maximum {}",
            model.config.max_target_len,
            max_tgt - 1
        )));
    }

    let dev_examples: Vec<&Example> = corpus.split(Split::Dev).collect();

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(
        std::fs::File::create(&metrics_path).map_err(|source| TrainError::Io {
            path: metrics_path.display().to_string(),
            source,
        })?,
    );
    let checkpoint_path = out_dir.join("checkpoint.json");

    let mut opt = AdamW::new(
        &model.params,
        train_cfg.beta1,
        train_cfg.beta2,
        train_cfg.weight_decay,
    );
    let batches_per_epoch = train_examples.len().div_ceil(train_cfg.batch_size);
    let total_steps = (train_cfg.epochs * batches_per_epoch) as u64;
    let mut sae_state = TaskWeightState::default();
    let mut saa_state = TaskWeightState::default();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(train_cfg.threads)
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;

    let mut best: Option<(f64, usize)> = None;
    let mut first_epoch_loss = f64::NAN;
    let mut last_epoch_loss = f64::NAN;
    let mut global_step: u64 = 0;

    for epoch in 1..=train_cfg.epochs {
        sae_state.epoch_start();
        saa_state.epoch_start();
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[train_cfg.seed, 0xE90C, epoch as u64]));
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_main_sum = 0.0;
        let mut epoch_all_masked = 0usize;
        for batch in order.chunks(train_cfg.batch_size) {
            global_step += 1;
            let mut forwards = pool.install(|| {
                forward_batch(&model, &prepared, batch, train_cfg, epoch, global_step)
            })?;
            let losses = batch_losses(&forwards);

            let finite = losses.main.is_finite()
                && losses.sae.map_or(true, f64::is_finite)
                && losses.saa.map_or(true, f64::is_finite);
            if !finite {
                let dump = out_dir.join("nan_dump.json");
                let detail = serde_json::json!({
                    "epoch": epoch,
                    "step": global_step,
                    "batch_examples":
                        batch.iter().map(|&i| prepared[i].id.clone()).collect::<Vec<_>>(),
                    "l_main": losses.main,
                    "l_sae": losses.sae,
                    "l_saa": losses.saa,
                });
                let _ = std::fs::write(&dump, serde_json::to_string_pretty(&detail).unwrap());
                return Err(TrainError::NanLoss {
                    epoch,
                    step: global_step,
                    dump: dump.display().to_string(),
                });
            }

            // the weights for this batch come from its own raw losses
            let adapt = train_cfg.self_adaptive_weighting;
            let w1 = losses.sae.map(|l| if adapt { sae_state.update(l) } else { 1.0 });
            let w2 = losses.saa.map(|l| if adapt { saa_state.update(l) } else { 1.0 });

            let batch_all_masked: usize = forwards.iter().map(|f| f.all_masked).sum();
            let mut grads =
                pool.install(|| backward_batch(&model, &mut forwards, w1, w2))?;
            drop(forwards);
            clip_global_norm(&mut grads, train_cfg.clip_norm);
            let lr = learning_rate(
                global_step,
                total_steps,
                train_cfg.warmup_proportion,
                train_cfg.learning_rate,
            );
            opt.step(&mut model.params, &grads, lr);

            epoch_main_sum += losses.main;
            epoch_all_masked += batch_all_masked;
            write_record(
                &mut metrics,
                &metrics_path,
                &MetricsRecord::Step {
                    epoch,
                    step: global_step,
                    l_main: losses.main,
                    l_sae: losses.sae,
                    l_saa: losses.saa,
                    w1,
                    w2,
                    lr,
                },
            )?;
        }

        let epoch_loss = epoch_main_sum / batches_per_epoch as f64;
        if epoch == 1 {
            first_epoch_loss = epoch_loss;
        }
        last_epoch_loss = epoch_loss;

        let dev_exec_acc = if dev_examples.is_empty() {
            None
        } else {
            Some(pool.install(|| dev_accuracy(&model, corpus, &dev_examples))?)
        };
        write_record(
            &mut metrics,
            &metrics_path,
            &MetricsRecord::Epoch {
                epoch,
                dev_exec_acc,
                hier_weights: hierarchy_distributions(&model),
                all_masked_examples: epoch_all_masked,
            },
        )?;

        // without a dev split the freshest epoch wins
        let score = dev_exec_acc.unwrap_or(f64::NEG_INFINITY);
        if best.map_or(true, |(s, _)| score >= s) {
            best = Some((score, epoch));
            checkpoint::save(&model, train_cfg.ablation, &checkpoint_path)?;
        }
    }
    metrics.flush().map_err(|source| TrainError::Io {
        path: metrics_path.display().to_string(),
        source,
    })?;

    let (best_score, best_epoch) = best.expect("at least one epoch ran");
    Ok(FitReport {
        checkpoint_path,
        metrics_path,
        best_dev_exec_acc: if dev_examples.is_empty() { None } else { Some(best_score) },
        best_epoch,
        first_epoch_train_loss: first_epoch_loss,
        final_train_loss: last_epoch_loss,
    })
}
