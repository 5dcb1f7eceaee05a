/// What to do after observing one validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauAction {
    Improved,
    Wait,
    /// Multiply the learning rate by the plateau factor.
    Decay,
    Stop,
}

/// Plateau detector shared by learning-rate decay and early stopping.
///
/// A plateau is `patience` consecutive epochs without a strict improvement
/// of the best validation loss. The first plateau decays the learning rate
/// and restarts the count; the second stops training.
#[derive(Clone, Debug)]
pub struct Plateau {
    patience: usize,
    best: f64,
    stale: usize,
    decays: usize,
}

impl Plateau {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
            decays: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> PlateauAction {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return PlateauAction::Improved;
        }
        self.stale += 1;
        if self.stale < self.patience {
            return PlateauAction::Wait;
        }
        self.stale = 0;
        if self.decays == 0 {
            self.decays = 1;
            PlateauAction::Decay
        } else {
            PlateauAction::Stop
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PlateauAction::*;

    fn run(losses: &[f64], patience: usize) -> Vec<PlateauAction> {
        let mut p = Plateau::new(patience);
        losses.iter().map(|&l| p.observe(l)).collect()
    }

    #[test]
    fn decays_after_epoch_four() {
        // epochs are zero-based: the third stale epoch is epoch 4
        let actions = run(&[10.0, 9.0, 9.0, 9.0, 9.0], 3);
        assert_eq!(actions, vec![Improved, Improved, Wait, Wait, Decay]);
    }

    #[test]
    fn second_plateau_stops() {
        let actions = run(&[5.0, 5.0, 5.0, 5.0, 4.0, 4.5, 4.5, 4.5], 3);
        assert_eq!(actions, vec![Improved, Wait, Wait, Decay, Improved, Wait, Wait, Stop]);
    }

    #[test]
    fn monotone_improvement_never_decays() {
        let losses: Vec<f64> = (0..50).map(|i| 100.0 - i as f64).collect();
        assert!(run(&losses, 3).iter().all(|a| *a == Improved));
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        assert_eq!(run(&[1.0, 1.0], 1), vec![Improved, Decay]);
    }
}
