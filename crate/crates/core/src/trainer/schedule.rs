use serde::{Deserialize, Serialize};

pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

/// Reduce-on-plateau learning-rate schedule with a warm period.
///
/// Epochs up to `warm_epochs` are ignored entirely. From then on a loss
/// below `best - 1e-6` resets the counter; otherwise the counter grows and on
/// reaching `patience` the rate is multiplied by `factor` and the counter
/// restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: u32,
    pub warm_epochs: u32,
    pub best: Option<f64>,
    pub since_improvement: u32,
    pub decays: u32,
}

impl PlateauSchedule {
    pub fn new(lr_init: f64, factor: f64, patience: u32, warm_epochs: u32) -> Self {
        PlateauSchedule { lr: lr_init, factor, patience, warm_epochs, best: None, since_improvement: 0, decays: 0 }
    }

    /// Call once at the end of 1-based `epoch`; returns the rate for the next epoch.
    pub fn step(&mut self, epoch: u32, valid_loss: f64) -> f64 {
        if epoch <= self.warm_epochs {
            return self.lr;
        }
        match self.best {
            Some(b) if !(valid_loss < b - IMPROVEMENT_THRESHOLD) => {
                self.since_improvement += 1;
                if self.since_improvement >= self.patience {
                    self.lr *= self.factor;
                    self.decays += 1;
                    self.since_improvement = 0;
                }
            }
            _ => {
                self.best = Some(valid_loss);
                self.since_improvement = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_epochs(losses: &[f64]) -> Vec<u32> {
        let mut s = PlateauSchedule::new(1.0, 0.5, 2, 20);
        let mut out = Vec::new();
        for (i, &l) in losses.iter().enumerate() {
            let before = s.lr;
            if s.step(i as u32 + 1, l) < before {
                out.push(i as u32 + 1);
            }
        }
        out
    }

    #[test]
    fn improving_never_decays() {
        let l: Vec<f64> = (0..60).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert!(decay_epochs(&l).is_empty());
    }

    #[test]
    fn flat_after_warm_decays_at_23() {
        let mut l: Vec<f64> = (0..20).map(|i| 10.0 - i as f64).collect();
        l.extend(std::iter::repeat_n(0.5, 10));
        assert_eq!(decay_epochs(&l)[0], 23);
        assert_eq!(decay_epochs(&[1.0; 30])[0], 23);
    }

    #[test]
    fn warm_period_exempt() {
        assert!(decay_epochs(&[1.0; 20]).is_empty());
    }

    #[test]
    fn lr_is_power_of_factor() {
        let mut s = PlateauSchedule::new(1.5e-4, 0.5, 2, 0);
        for e in 1..=40 {
            s.step(e, 1.0);
        }
        assert_eq!(s.lr, 1.5e-4 * 0.5f64.powi(s.decays as i32));
        assert!(s.decays > 0);
    }
}
