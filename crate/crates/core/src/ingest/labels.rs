use serde::{Deserialize, Serialize};

use super::MovementLabel;
use crate::error::{Error, Result};

/// `UP` above `t`, `DOWN` below `-t`, `STAY` otherwise (both boundaries
/// belong to `STAY`).
pub fn label_from_threshold(return_pct: f64, threshold: f64) -> MovementLabel {
    if return_pct > threshold {
        MovementLabel::Up
    } else if return_pct < -threshold {
        MovementLabel::Down
    } else {
        MovementLabel::Stay
    }
}

/// Symmetric thresholds 0.1, 0.2, …, 1.0 (percent).
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub down: usize,
    pub stay: usize,
    pub up: usize,
}

impl ClassDistribution {
    pub fn from_returns(returns: &[f64], threshold: f64) -> Self {
        let mut counts = [0usize; 3];
        for &r in returns {
            counts[label_from_threshold(r, threshold).index()] += 1;
        }
        ClassDistribution {
            down: counts[0],
            stay: counts[1],
            up: counts[2],
        }
    }

    pub fn total(&self) -> usize {
        self.down + self.stay + self.up
    }

    /// Majority count minus minority count.
    pub fn gap(&self) -> usize {
        let c = [self.down, self.stay, self.up];
        c.iter().max().unwrap() - c.iter().min().unwrap()
    }

    /// `(DOWN, STAY, UP)` as percentages of the total.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let n = self.total().max(1) as f64;
        (
            100.0 * self.down as f64 / n,
            100.0 * self.stay as f64 / n,
            100.0 * self.up as f64 / n,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub distribution: ClassDistribution,
}

/// Picks the grid threshold whose labels are most balanced, i.e. that
/// minimizes majority-minus-minority count. Ties go to the smaller threshold.
pub fn threshold_search(returns: &[f64], grid: &[f64]) -> Result<ThresholdChoice> {
    if returns.is_empty() {
        return Err(Error::InvalidArgument("threshold search over no returns".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(format!("grid threshold {t} must be positive")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut best: Option<ThresholdChoice> = None;
    for &t in &sorted {
        let distribution = ClassDistribution::from_returns(returns, t);
        let better = match &best {
            None => true,
            Some(b) => distribution.gap() < b.distribution.gap(),
        };
        if better {
            best = Some(ThresholdChoice {
                threshold: t,
                distribution,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
