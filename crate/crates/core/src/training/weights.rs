//! Loss-balanced task weighting: each auxiliary loss is scaled by the
//! square root of its current-to-first-batch loss ratio, re-anchored at the
//! first batch of every epoch. Weights are plain coefficients, never part
//! of the gradient graph.

/// Per-task weighting state for one epoch.
#[derive(Debug, Clone, Default)]
pub struct TaskWeightState {
    first_batch_loss: Option<f64>,
}

impl TaskWeightState {
    /// Forget the stored first-batch loss; call at every epoch start.
    pub fn epoch_start(&mut self) {
        self.first_batch_loss = None;
    }

    pub fn first_batch_loss(&self) -> Option<f64> {
        self.first_batch_loss
    }

    /// Weight for the current batch. The first call of an epoch records the
    /// anchor loss and returns exactly 1; afterwards `sqrt(L_j / L_0)`. A
    /// zero anchor means the task was already solved at epoch start and
    /// pins the weight to 0.
    pub fn update(&mut self, current_batch_loss: f64) -> f64 {
        debug_assert!(current_batch_loss >= 0.0);
        match self.first_batch_loss {
            None => {
                self.first_batch_loss = Some(current_batch_loss);
                1.0
            }
            Some(first) if first == 0.0 => 0.0,
            Some(first) => (current_batch_loss / first).sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_batch_weight_is_one() {
        let mut s = TaskWeightState::default();
        assert_eq!(s.update(3.7), 1.0);
        assert_eq!(s.first_batch_loss(), Some(3.7));
    }

    #[test]
    fn quarter_loss_halves_the_weight() {
        let mut s = TaskWeightState::default();
        s.update(1.0);
        assert!((s.update(0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn doubled_loss_gives_sqrt_two() {
        let mut s = TaskWeightState::default();
        s.update(1.0);
        assert!((s.update(2.0) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn epoch_start_reanchors() {
        let mut s = TaskWeightState::default();
        s.update(4.0);
        s.update(1.0);
        s.epoch_start();
        assert_eq!(s.update(0.5), 1.0);
        assert_eq!(s.first_batch_loss(), Some(0.5));
    }

    #[test]
    fn solved_task_at_epoch_start_pins_weight_to_zero() {
        let mut s = TaskWeightState::default();
        assert_eq!(s.update(0.0), 1.0);
        assert_eq!(s.update(0.3), 0.0);
    }
}
