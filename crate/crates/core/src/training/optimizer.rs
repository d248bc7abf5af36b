//! AdamW with decoupled weight decay, global-norm gradient clipping, and
//! the linear warm-up / linear decay learning-rate schedule.

use crate::model::ParamStore;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Decay applies to weight matrices only, not biases, norms, or layer
    /// weights.
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, weight_decay: f64) -> AdamW {
        AdamW {
            beta1,
            beta2,
            weight_decay,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            decay: params.iter().map(|p| p.shape.len() >= 2).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, grad) in grads.iter().enumerate() {
            let (b1, b2) = (self.beta1, self.beta2);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let wd = if self.decay[idx] { self.weight_decay } else { 0.0 };
            params.update(idx, |values| {
                for j in 0..values.len() {
                    let g = grad[j];
                    m[j] = b1 * m[j] + (1.0 - b1) * g;
                    v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    values[j] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * values[j]);
                }
            });
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// Linear warm-up to the peak over `ceil(warmup_proportion * total)` steps,
/// then linear decay to zero at `total`. Steps are 1-based.
pub fn learning_rate(step: u64, total_steps: u64, warmup_proportion: f64, peak: f64) -> f64 {
    debug_assert!(step >= 1 && step <= total_steps);
    let warmup = ((warmup_proportion * total_steps as f64).ceil() as u64).max(1);
    if step <= warmup {
        peak * step as f64 / warmup as f64
    } else {
        peak * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_exactly_at_warmup_end_and_decays_to_zero() {
        let total = 100;
        let warmup = 10; // ceil(0.1 * 100)
        for step in 1..=total {
            let lr = learning_rate(step, total, 0.1, 2.0);
            if step < warmup {
                assert!(lr < 2.0);
            }
            if step == warmup {
                assert_eq!(lr, 2.0);
            }
            if step > warmup {
                assert!(lr < 2.0);
            }
        }
        assert_eq!(learning_rate(total, total, 0.1, 2.0), 0.0);
        // strictly increasing then strictly decreasing
        let lrs: Vec<f64> = (1..=total).map(|s| learning_rate(s, total, 0.1, 2.0)).collect();
        for w in lrs[..warmup as usize].windows(2) {
            assert!(w[1] > w[0]);
        }
        for w in lrs[warmup as usize..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn clip_rescales_only_above_the_threshold() {
        let mut grads = vec![vec![3.0, 4.0]]; // norm 5
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_eq!(norm, 5.0);
        let new_norm: f64 = grads[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);

        let mut small = vec![vec![0.3, 0.4]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0], vec![0.3, 0.4]);
    }

    #[test]
    fn adamw_moves_parameters_against_the_gradient() {
        use crate::corpus::Vocab;
        use crate::lexicon;
        use crate::model::{Model, ModelConfig, TaskSet};
        let mut tokens: Vec<String> = lexicon::SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.push("a".into());
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 3,
            ff_dim: 8,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let mut model = Model::init(
            cfg,
            Vocab::new(tokens),
            TaskSet { sae: false, saa: false, hierarchy: false },
            1,
        )
        .unwrap();
        let mut opt = AdamW::new(&model.params, 0.9, 0.999, 0.0);
        let before = model.params.get(0).values.as_ref().clone();
        let grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![1.0; p.len()]).collect();
        opt.step(&mut model.params, &grads, 0.1);
        let after = model.params.get(0).values.as_ref().clone();
        for (b, a) in before.iter().zip(&after) {
            assert!(a < b, "positive gradient must decrease the parameter");
        }
    }
}
