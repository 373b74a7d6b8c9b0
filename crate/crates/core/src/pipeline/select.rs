use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics logged after each training epoch (`epoch` is 1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Best validation accuracy within the first `max_epochs` epochs.
    MaxAccuracy { max_epochs: usize },
    /// Lowest validation loss, stopping once it has failed to improve for
    /// `patience` consecutive epochs.
    MinLoss { patience: usize },
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::MaxAccuracy { max_epochs: 20 }
    }
}

impl SelectionRule {
    pub fn select(&self, history: &[EpochRecord]) -> Result<Selection> {
        match *self {
            SelectionRule::MaxAccuracy { max_epochs } => select_max_accuracy(history, max_epochs),
            SelectionRule::MinLoss { patience } => select_min_loss_patience(history, patience),
        }
    }

    /// Whether training should stop after the last epoch in `history`.
    pub fn should_stop(&self, history: &[EpochRecord]) -> bool {
        match *self {
            SelectionRule::MaxAccuracy { max_epochs } => history.len() >= max_epochs,
            SelectionRule::MinLoss { patience } => min_loss_trace(history, patience).1.is_some(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub rule: SelectionRule,
    /// Chosen epoch (1-based).
    pub epoch: usize,
    /// Last epoch the rule looked at before deciding.
    pub stopped_after: usize,
}

pub fn select_max_accuracy(history: &[EpochRecord], max_epochs: usize) -> Result<Selection> {
    if history.is_empty() || max_epochs == 0 {
        return Err(Error::InvalidArgument("selection needs at least one epoch".into()));
    }
    let window = &history[..history.len().min(max_epochs)];
    let mut best = 0;
    for (i, r) in window.iter().enumerate() {
        if r.val_acc > window[best].val_acc {
            best = i;
        }
    }
    Ok(Selection {
        rule: SelectionRule::MaxAccuracy { max_epochs },
        epoch: window[best].epoch,
        stopped_after: window.last().unwrap().epoch,
    })
}

/// Walks the history; returns (index of best epoch so far, index at which
/// the patience ran out, if it did).
fn min_loss_trace(history: &[EpochRecord], patience: usize) -> (usize, Option<usize>) {
    let mut best = 0;
    let mut stale = 0;
    for (i, r) in history.iter().enumerate().skip(1) {
        if r.val_loss < history[best].val_loss {
            best = i;
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                return (best, Some(i));
            }
        }
    }
    (best, None)
}

pub fn select_min_loss_patience(history: &[EpochRecord], patience: usize) -> Result<Selection> {
    if history.is_empty() || patience == 0 {
        return Err(Error::InvalidArgument(
            "selection needs at least one epoch and patience ≥ 1".into(),
        ));
    }
    let (best, stop) = min_loss_trace(history, patience);
    Ok(Selection {
        rule: SelectionRule::MinLoss { patience },
        epoch: history[best].epoch,
        stopped_after: history[stop.unwrap_or(history.len() - 1)].epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accs(v: &[f64]) -> Vec<EpochRecord> {
        v.iter()
            .enumerate()
            .map(|(i, &a)| EpochRecord {
                epoch: i + 1,
                train_loss: 1.0,
                val_loss: 1.0,
                val_acc: a,
            })
            .collect()
    }

    fn losses(v: &[f64]) -> Vec<EpochRecord> {
        v.iter()
            .enumerate()
            .map(|(i, &l)| EpochRecord {
                epoch: i + 1,
                train_loss: l,
                val_loss: l,
                val_acc: 0.5,
            })
            .collect()
    }

    #[test]
    fn max_accuracy_rules() {
        assert_eq!(select_max_accuracy(&accs(&[0.4, 0.6, 0.5]), 20).unwrap().epoch, 2);
        assert_eq!(select_max_accuracy(&accs(&[0.6, 0.6]), 20).unwrap().epoch, 1);
        let mut v = vec![0.1; 25];
        v[22] = 0.9;
        v[7] = 0.5;
        let s = select_max_accuracy(&accs(&v), 20).unwrap();
        assert_eq!((s.epoch, s.stopped_after), (8, 20));
        assert!(select_max_accuracy(&[], 20).is_err());
    }

    #[test]
    fn min_loss_rules() {
        let h = losses(&[1.0, 0.8, 0.9, 0.95]);
        let s = select_min_loss_patience(&h, 2).unwrap();
        assert_eq!((s.epoch, s.stopped_after), (2, 4));
        assert!(SelectionRule::MinLoss { patience: 2 }.should_stop(&h));
        assert!(!SelectionRule::MinLoss { patience: 2 }.should_stop(&h[..3]));

        let s = select_min_loss_patience(&losses(&[1.0, 0.9, 0.8, 0.7, 0.6]), 2).unwrap();
        assert_eq!((s.epoch, s.stopped_after), (5, 5));

        let s = select_min_loss_patience(&losses(&[1.0, 1.1, 1.2]), 2).unwrap();
        assert_eq!((s.epoch, s.stopped_after), (1, 3));
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let s = select_min_loss_patience(&losses(&[1.0, 1.0, 1.0]), 2).unwrap();
        assert_eq!((s.epoch, s.stopped_after), (1, 3));
    }
}
