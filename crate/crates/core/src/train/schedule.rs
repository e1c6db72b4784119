//! Cosine-annealed learning rate and the early-stopping rule.

/// Cosine annealing from `lr0` at epoch 0 down to 0 at `max_epochs`.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64) -> f64 {
    assert!(epoch <= max_epochs, "epoch {epoch} > max_epochs {max_epochs}");
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / max_epochs as f64).cos())
}

/// What the early stopper decided after seeing a validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Strict improvement; checkpoint these weights.
    Improved,
    /// No improvement yet, keep training.
    Continue,
    /// `patience` consecutive non-improving epochs; stop.
    Stop,
}

/// Tracks the best validation loss and fires after `patience` consecutive
/// epochs without a strict improvement of at least `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1);
        Self {
            patience,
            min_delta: 1e-6,
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.since_improvement = 0;
            StopDecision::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}
