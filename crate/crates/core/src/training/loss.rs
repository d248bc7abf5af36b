//! Batch target preparation and the three cross-entropy losses.
//!
//! One teacher-forced pass serves all tasks: the decoder input is the
//! shifted main target. The main loss covers every position. The alignment
//! loss applies only at anchor positions. The extraction target is shorter
//! than the main target, so it is right-padded with ignored positions and
//! supervised on its prefix.

use crate::corpus::{Example, Vocab};
use crate::lexicon;
use crate::model::{ForwardTrace, TaskKind};
use crate::tensor::{Graph, NodeId, TensorError};

use super::TrainError;

/// Token-id views of one example, framed for teacher forcing.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub id: String,
    /// Encoder input: utterance + EOS.
    pub x: Vec<u32>,
    /// Decoder input: BOS + main.
    pub y_in: Vec<u32>,
    /// Main prediction targets: main + EOS; every position live.
    pub main_tgt: Vec<u32>,
    pub sae_tgt: Vec<u32>,
    pub sae_ignore: Vec<bool>,
    pub saa_tgt: Vec<u32>,
    pub saa_ignore: Vec<bool>,
    /// True when the framed extraction target was longer than the main
    /// target and had to be cut at the shared decoder length.
    pub sae_clamped: bool,
}

impl PreparedExample {
    pub fn build(ex: &Example, vocab: &Vocab) -> Result<PreparedExample, TrainError> {
        let encode = |seq: &crate::logical_form::TokenSeq| -> Result<Vec<u32>, TrainError> {
            vocab.encode(seq).ok_or_else(|| {
                TrainError::Corpus(format!(
                    "example {} contains a token outside the training vocabulary",
                    ex.id
                ))
            })
        };
        let mut x = encode(&ex.utterance)?;
        x.push(vocab.eos());
        let main_ids = encode(&ex.main)?;
        let mut y_in = vec![vocab.bos()];
        y_in.extend(&main_ids);
        let mut main_tgt = main_ids.clone();
        main_tgt.push(vocab.eos());
        let k = main_tgt.len();

        // extraction target: sae tokens + EOS, padded to the decoder length;
        // the loss lives on the prefix
        let mut sae_tgt = encode(&ex.sae)?;
        sae_tgt.push(vocab.eos());
        let sae_clamped = sae_tgt.len() > k;
        sae_tgt.truncate(k);
        let live = sae_tgt.len();
        sae_tgt.resize(k, vocab.pad());
        let sae_ignore: Vec<bool> = (0..k).map(|i| i >= live).collect();

        // alignment target: positionally aligned, EOS appended but never
        // scored; the loss lives exactly at anchor positions
        let mut saa_tgt = encode(&ex.saa)?;
        saa_tgt.push(vocab.eos());
        let mut saa_ignore: Vec<bool> = ex.saa_mask.iter().map(|&m| !m).collect();
        saa_ignore.push(true);
        debug_assert_eq!(saa_tgt.len(), k);
        debug_assert_eq!(saa_ignore.len(), k);

        Ok(PreparedExample {
            id: ex.id.clone(),
            x,
            y_in,
            main_tgt,
            sae_tgt,
            sae_ignore,
            saa_tgt,
            saa_ignore,
            sae_clamped,
        })
    }

    /// True when a task has no live positions (its loss is a defined zero).
    pub fn all_masked(&self, task: TaskKind) -> bool {
        match task {
            TaskKind::Sae => self.sae_ignore.iter().all(|&b| b),
            TaskKind::Saa => self.saa_ignore.iter().all(|&b| b),
        }
    }
}

/// Cross-entropy of one task over a forward trace.
pub fn task_loss(
    g: &mut Graph,
    trace: &ForwardTrace,
    prep: &PreparedExample,
    task: Option<TaskKind>,
) -> Result<NodeId, TensorError> {
    match task {
        None => {
            let live = vec![false; prep.main_tgt.len()];
            g.cross_entropy_from_logits(trace.main_logits, &prep.main_tgt, &live)
        }
        Some(TaskKind::Sae) => g.cross_entropy_from_logits(
            trace.tasks[&TaskKind::Sae].logits,
            &prep.sae_tgt,
            &prep.sae_ignore,
        ),
        Some(TaskKind::Saa) => g.cross_entropy_from_logits(
            trace.tasks[&TaskKind::Saa].logits,
            &prep.saa_tgt,
            &prep.saa_ignore,
        ),
    }
}

/// `L = L_main + w1 * L_SAE + w2 * L_SAA`; the weights are coefficients,
/// not graph nodes.
pub fn total_loss(
    g: &mut Graph,
    main: NodeId,
    sae: Option<(NodeId, f64)>,
    saa: Option<(NodeId, f64)>,
) -> Result<NodeId, TensorError> {
    let mut total = main;
    for (node, weight) in [sae, saa].into_iter().flatten() {
        let scaled = g.scale(node, weight);
        total = g.add(total, scaled)?;
    }
    Ok(total)
}

/// Specials never appear inside utterances or targets, so padding ids are
/// safe fillers.
pub fn assert_no_specials(ex: &Example) -> Result<(), TrainError> {
    for tok in ex.utterance.iter().chain(ex.main.iter()) {
        if lexicon::is_special(tok) {
            return Err(TrainError::Corpus(format!(
                "example {} contains special token {tok} in source or main target",
                ex.id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::SupervisionTargets;
    use crate::corpus::Split;
    use crate::logical_form::TokenSeq;
    use crate::schema::{db_vocabulary, Column, ColumnType, RelationalSchema, Table, TokenKind};

    fn example() -> (Example, Vocab) {
        let schema = RelationalSchema {
            tables: vec![Table {
                name: "company".into(),
                columns: vec![
                    Column { name: "name".into(), ty: ColumnType::Text },
                    Column { name: "founded".into(), ty: ColumnType::Number },
                ],
            }],
        };
        let vocab_schema = db_vocabulary(&schema);
        assert_eq!(vocab_schema.kind("company"), Some(TokenKind::Table));
        let main = TokenSeq::from_strs(&[
            "select", "name", "from", "company", "where", "founded", ">", "1990",
        ]);
        let t = SupervisionTargets::build(main, &vocab_schema);
        let ex = Example {
            id: "ex0".into(),
            utterance: TokenSeq::from_strs(&["which", "name", "of", "company"]),
            main: t.main,
            sae: t.sae,
            saa: t.saa,
            saa_mask: t.saa_mask,
            schema_ref: "s0".into(),
            split: Split::Train,
        };
        let mut corpus = crate::corpus::Corpus::default();
        corpus.examples.push(ex.clone());
        let vocab = Vocab::new(corpus.token_vocabulary());
        (ex, vocab)
    }

    #[test]
    fn framing_shapes_line_up() {
        let (ex, vocab) = example();
        let prep = PreparedExample::build(&ex, &vocab).unwrap();
        let k = ex.main.len() + 1;
        assert_eq!(prep.y_in.len(), k);
        assert_eq!(prep.main_tgt.len(), k);
        assert_eq!(prep.sae_tgt.len(), k);
        assert_eq!(prep.saa_tgt.len(), k);
        assert_eq!(prep.y_in[0], vocab.bos());
        assert_eq!(*prep.main_tgt.last().unwrap(), vocab.eos());
        assert!(!prep.sae_clamped);
        // sae: 3 anchors -> 5 content tokens + EOS live, rest ignored
        assert_eq!(prep.sae_ignore.iter().filter(|&&b| !b).count(), 6);
        // saa: live exactly at the 3 anchor positions
        assert_eq!(prep.saa_ignore.iter().filter(|&&b| !b).count(), 3);
        assert_eq!(ex.saa_mask.iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss_on_live_positions() {
        let (ex, vocab) = example();
        let prep = PreparedExample::build(&ex, &vocab).unwrap();
        let mut g = Graph::new();
        let v = 16;
        let k = prep.saa_tgt.len();
        let logits = g.leaf(vec![0.0; k * v], vec![k, v], false);
        // clamp targets into the fake vocab for this synthetic check
        let targets: Vec<u32> = prep.saa_tgt.iter().map(|&t| t % v as u32).collect();
        let loss = g
            .cross_entropy_from_logits(logits, &targets, &prep.saa_ignore)
            .unwrap();
        assert!((g.scalar_value(loss) - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_positions_cannot_influence_the_loss() {
        let (ex, vocab) = example();
        let prep = PreparedExample::build(&ex, &vocab).unwrap();
        let v = 16usize;
        let k = prep.saa_tgt.len();
        let targets: Vec<u32> = prep.saa_tgt.iter().map(|&t| t % v as u32).collect();
        let base: Vec<f64> = (0..k * v).map(|i| (i % 7) as f64 * 0.3).collect();
        let loss_of = |vals: Vec<f64>| {
            let mut g = Graph::new();
            let logits = g.leaf(vals, vec![k, v], false);
            let loss = g
                .cross_entropy_from_logits(logits, &targets, &prep.saa_ignore)
                .unwrap();
            g.scalar_value(loss)
        };
        let mut perturbed = base.clone();
        for (pos, &ig) in prep.saa_ignore.iter().enumerate() {
            if ig {
                for j in 0..v {
                    perturbed[pos * v + j] += 5.0;
                }
            }
        }
        assert_eq!(loss_of(base).to_bits(), loss_of(perturbed).to_bits());
    }

    #[test]
    fn total_loss_combines_weighted_terms() {
        let mut g = Graph::new();
        let main = g.leaf(vec![1.0], vec![1], false);
        let sae = g.leaf(vec![0.5], vec![1], false);
        let saa = g.leaf(vec![0.25], vec![1], false);
        let total = total_loss(&mut g, main, Some((sae, 1.0)), Some((saa, 1.0))).unwrap();
        assert!((g.scalar_value(total) - 1.75).abs() < 1e-15);
        let no_sae = total_loss(&mut g, main, None, Some((saa, 2.0))).unwrap();
        assert!((g.scalar_value(no_sae) - 1.5).abs() < 1e-15);
        let baseline = total_loss(&mut g, main, None, None).unwrap();
        assert_eq!(g.scalar_value(baseline), 1.0);
    }
}
