use std::collections::{BTreeMap, HashMap};

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{label_from_threshold, DayExample, DropReport, Headline, LabeledDay};
use crate::category::Category;
use crate::error::{Error, Result};
use crate::seed::mix_seed;

/// Aligns headlines to trading sessions and labels each session.
///
/// `returns` holds one entry per session except the last (see
/// [`compute_returns`](super::compute_returns)) and `last_session` is the
/// date of that final session. A headline belongs to the latest session on
/// or before its date, so news from weekends and holidays joins the
/// preceding session, whose return runs to the next open. Headlines before
/// the first session or on/after the final (unlabeled) session are dropped
/// and counted.
pub fn assemble_days(
    returns: &[(NaiveDate, f64)],
    last_session: NaiveDate,
    headlines: &[Headline],
    threshold: f64,
) -> (Vec<LabeledDay>, DropReport) {
    let mut report = DropReport::default();
    let mut per_session: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for h in headlines {
        if h.day >= last_session {
            report.add("after_last_session", 1);
            continue;
        }
        let pos = returns.partition_point(|(d, _)| *d <= h.day);
        if pos == 0 {
            report.add("before_first_session", 1);
            continue;
        }
        per_session.entry(pos - 1).or_default().push(h.id.clone());
    }
    report.add("sessions_without_headlines", returns.len() - per_session.len());
    let days = per_session
        .into_iter()
        .map(|(idx, ids)| {
            let (day, r) = returns[idx];
            LabeledDay {
                day,
                return_pct: r,
                label: label_from_threshold(r, threshold),
                headlines: ids,
            }
        })
        .collect();
    (days, report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayFilterOutcome {
    pub kept: Vec<LabeledDay>,
    pub dropped: usize,
    pub dropped_fraction: f64,
    pub top_categories: Vec<Category>,
}

/// Keeps a day only if it has at least `min_count` headlines in the four
/// most frequent topical categories of the whole corpus. If no headline
/// carries a topical category, all headlines count.
pub fn filter_days(
    days: Vec<LabeledDay>,
    headlines: &HashMap<String, Headline>,
    min_count: usize,
) -> Result<DayFilterOutcome> {
    let category_of = |id: &str| -> Result<Category> {
        headlines
            .get(id)
            .map(Headline::category_or_unclassified)
            .ok_or_else(|| Error::InvalidArgument(format!("day references unknown headline {id:?}")))
    };
    let mut totals: BTreeMap<Category, usize> = BTreeMap::new();
    for day in &days {
        for id in &day.headlines {
            let c = category_of(id)?;
            if c != Category::Unclassified {
                *totals.entry(c).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(Category, usize)> = totals.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<Category> = ranked.iter().take(4).map(|(c, _)| *c).collect();

    let total = days.len();
    let mut kept = Vec::with_capacity(total);
    for day in days {
        let mut count = 0;
        for id in &day.headlines {
            if top.is_empty() || top.contains(&category_of(id)?) {
                count += 1;
            }
        }
        if count >= min_count {
            kept.push(day);
        }
    }
    let dropped = total - kept.len();
    Ok(DayFilterOutcome {
        dropped,
        dropped_fraction: if total == 0 { 0.0 } else { dropped as f64 / total as f64 },
        kept,
        top_categories: top,
    })
}

/// Splits a day's headlines into `ceil(k / cap)` disjoint subsets of at most
/// `cap` headlines each, every subset holding each category's share to
/// within one headline. Within each category headlines are shuffled with a
/// seed derived from `seed` and the day, then dealt round-robin.
pub fn stratified_subsample(
    day: &LabeledDay,
    categories: &HashMap<String, Category>,
    cap: usize,
    seed: u64,
) -> Result<Vec<DayExample>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("subset cap must be positive".into()));
    }
    let k = day.headlines.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let subsets = k.div_ceil(cap);
    let mut strata: BTreeMap<Category, Vec<String>> = BTreeMap::new();
    for id in &day.headlines {
        let c = categories.get(id).copied().unwrap_or(Category::Unclassified);
        strata.entry(c).or_default().push(id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, day.day.num_days_from_ce() as u64));
    let mut buckets: Vec<Vec<String>> = vec![Vec::new(); subsets];
    let mut next = 0;
    for (_, mut ids) in strata {
        ids.shuffle(&mut rng);
        for id in ids {
            buckets[next % subsets].push(id);
            next += 1;
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(i, ids)| DayExample {
            day: day.day,
            headline_ids: ids,
            label: day.label,
            subset_index: i,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<DayExample>,
    pub val: Vec<DayExample>,
    pub test: Vec<DayExample>,
}

/// Splits by calendar day so every subset of a day lands in the same split.
/// Day counts are `round(n · train)`, `round(n · val)` and the remainder.
pub fn split_dataset(examples: Vec<DayExample>, fractions: SplitFractions, seed: u64) -> Result<DatasetSplit> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {train}/{val}/{test} must be in [0, 1] and sum to 1"
        )));
    }
    let mut days: Vec<NaiveDate> = examples.iter().map(|e| e.day).collect();
    days.sort();
    days.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    days.shuffle(&mut rng);

    let n = days.len();
    let n_train = ((n as f64) * train).round() as usize;
    let n_val = (((n as f64) * val).round() as usize).min(n - n_train.min(n));
    let which: HashMap<NaiveDate, u8> = days
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let s = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            (*d, s)
        })
        .collect();

    let mut split = DatasetSplit::default();
    for e in examples {
        match which[&e.day] {
            0 => split.train.push(e),
            1 => split.val.push(e),
            _ => split.test.push(e),
        }
    }
    Ok(split)
}
