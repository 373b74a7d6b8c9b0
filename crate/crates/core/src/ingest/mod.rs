//! Price and headline ingestion: trading-calendar alignment, movement
//! labels, preprocessing filters and stratified day subsets.

mod days;
mod headlines;
mod labels;
mod prices;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::category::Category;

pub use days::{
    assemble_days, filter_days, split_dataset, stratified_subsample, DatasetSplit, DayFilterOutcome, SplitFractions,
};
pub use headlines::{filter_headlines, load_headlines, parse_headlines, tokenize, FilterRules};
pub use labels::{default_grid, label_from_threshold, threshold_search, ClassDistribution, ThresholdChoice};
pub use prices::{compute_returns, load_prices, parse_prices, PriceSeries, ReturnBasis, Session};

/// Maximum number of headlines in one day example.
pub const HEADLINE_CAP: usize = 115;
/// Maximum number of tokens kept per headline.
pub const MAX_TOKENS: usize = 15;
/// Headlines shorter than this many characters are dropped.
pub const MIN_CHARS: usize = 20;
/// Days with fewer headlines than this in the four largest categories are dropped.
pub const MIN_DAY_HEADLINES: usize = 25;

/// Index movement between consecutive sessions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MovementLabel {
    Down,
    Stay,
    Up,
}

impl MovementLabel {
    pub const ALL: [MovementLabel; 3] = [MovementLabel::Down, MovementLabel::Stay, MovementLabel::Up];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<MovementLabel> {
        MovementLabel::ALL.get(i).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub id: String,
    pub day: NaiveDate,
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

impl Headline {
    pub fn category_or_unclassified(&self) -> Category {
        self.category.unwrap_or(Category::Unclassified)
    }
}

/// A trading session with its return, label and the headlines aligned to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDay {
    pub day: NaiveDate,
    pub return_pct: f64,
    pub label: MovementLabel,
    pub headlines: Vec<String>,
}

/// One training instance: a subset of one day's headlines plus its label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayExample {
    pub day: NaiveDate,
    pub headline_ids: Vec<String>,
    pub label: MovementLabel,
    pub subset_index: usize,
}

/// Per-rule counts of records removed or altered by preprocessing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DropReport {
    pub counts: BTreeMap<String, usize>,
}

impl DropReport {
    pub fn add(&mut self, rule: &str, n: usize) {
        *self.counts.entry(rule.to_string()).or_default() += n;
    }

    pub fn get(&self, rule: &str) -> usize {
        self.counts.get(rule).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &DropReport) {
        for (k, v) in &other.counts {
            self.add(k, *v);
        }
    }
}
