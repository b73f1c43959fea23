//! Validation-loss driven learning-rate reduction and early stopping.
//!
//! Both rules count an epoch as an improvement only when the loss falls
//! below the best seen so far by more than a tolerance.

/// Divides the learning rate by `factor` once more than `patience`
/// consecutive epochs pass without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub tolerance: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, tolerance: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            tolerance,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's validation loss and returns the learning rate to
    /// use from now on.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.tolerance {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr /= self.factor;
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs show no improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub tolerance: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, tolerance: f64) -> Self {
        EarlyStopping {
            patience,
            tolerance,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn check(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best - self.tolerance {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
