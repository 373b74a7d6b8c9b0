//! Planted-signal corpora for exercising the full pipeline.
//!
//! Each trading day gets a fixed number of headlines. A small share of them
//! ("signal" headlines) contain two words from a vocabulary tied to that
//! day's movement label; the rest are built from meaningless pseudo-words.
//! Prices are generated so that the day's return lands clearly inside its
//! label's band.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::ingest::{tokenize, DayExample, Headline, MovementLabel, PriceSeries, Session};
use crate::seed::mix_seed;

const SIGNAL_WORDS: [[&str; 6]; 3] = [
    ["plunge", "slump", "tumble", "sink", "crash", "slide"],
    ["steady", "flat", "unchanged", "calm", "stable", "hold"],
    ["surge", "rally", "soar", "jump", "climb", "gain"],
];

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "mo", "ti", "ru", "sa", "ne", "lo", "vi", "pu", "da", "fe", "go", "hi", "ju", "wa", "ze", "ro", "ni",
    "qu",
];

/// Category mix of a large news corpus (share of headlines per class).
pub const CATEGORY_SHARES: [(Category, f64); 8] = [
    (Category::World, 38.96),
    (Category::Sport, 17.99),
    (Category::Business, 15.08),
    (Category::Us, 13.81),
    (Category::Unclassified, 4.37),
    (Category::Entertainment, 3.56),
    (Category::SciTech, 3.53),
    (Category::Health, 2.70),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub days: usize,
    pub headlines_per_day: usize,
    pub signal_fraction: f64,
    /// Permute the day labels after planting the signal, which leaves the
    /// signal words uninformative.
    pub shuffle_labels: bool,
    /// Give every signal headline this category (others never get it).
    pub signal_category: Option<Category>,
    pub noise_vocabulary: usize,
    pub seed: u64,
    pub start: NaiveDate,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            days: 2000,
            headlines_per_day: 30,
            signal_fraction: 0.15,
            shuffle_labels: false,
            signal_category: None,
            noise_vocabulary: 2000,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub headlines: Vec<Headline>,
    pub prices: PriceSeries,
    /// Label each headline day was generated with (after any shuffling).
    pub labels: Vec<(NaiveDate, MovementLabel)>,
    pub signal_ids: BTreeSet<String>,
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn noise_vocabulary(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words = BTreeSet::new();
    let reserved: BTreeSet<&str> = SIGNAL_WORDS.iter().flatten().copied().collect();
    while words.len() < n {
        let len = rng.random_range(2..=3);
        let w: String = (0..len).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if !reserved.contains(w.as_str()) {
            words.insert(w);
        }
    }
    words.into_iter().collect()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.days == 0 || config.headlines_per_day == 0 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs days and headlines".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.signal_fraction) {
        return Err(Error::InvalidArgument(format!(
            "signal fraction {}",
            config.signal_fraction
        )));
    }
    let max_words = SYLLABLES.len().pow(2) + SYLLABLES.len().pow(3);
    if config.noise_vocabulary < 10 || config.noise_vocabulary > max_words / 2 {
        return Err(Error::InvalidArgument(format!(
            "noise vocabulary {}",
            config.noise_vocabulary
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let vocab = noise_vocabulary(config.noise_vocabulary, &mut rng);
    let weights = WeightedIndex::new(CATEGORY_SHARES.iter().map(|(_, w)| *w)).expect("positive weights");

    let dates = business_days(config.start, config.days + 1);
    let planted: Vec<MovementLabel> = (0..config.days)
        .map(|_| MovementLabel::ALL[rng.random_range(0..3)])
        .collect();
    let mut labels = planted.clone();
    if config.shuffle_labels {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 2)));
    }

    let k = config.headlines_per_day;
    let mut headlines = Vec::with_capacity(config.days * k);
    let mut signal_ids = BTreeSet::new();
    for (d, label) in planted.iter().enumerate() {
        // Spread the signal share evenly: e.g. 15% of 30 alternates 4 and 5.
        let total = |i: usize| ((i * k) as f64 * config.signal_fraction).floor() as usize;
        let n_signal = total(d + 1) - total(d);
        let mut is_signal = vec![false; k];
        is_signal[..n_signal.min(k)].fill(true);
        is_signal.shuffle(&mut rng);
        for (i, &signal) in is_signal.iter().enumerate() {
            let n_noise = if signal {
                rng.random_range(4..=7)
            } else {
                rng.random_range(6..=9)
            };
            let mut words: Vec<&str> = (0..n_noise)
                .map(|_| vocab.choose(&mut rng).expect("vocab").as_str())
                .collect();
            if signal {
                for w in SIGNAL_WORDS[label.index()].choose_multiple(&mut rng, 2) {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, w);
                }
            }
            let category = match config.signal_category {
                Some(c) if signal => c,
                Some(c) => loop {
                    let pick = CATEGORY_SHARES[weights.sample(&mut rng)].0;
                    if pick != c {
                        break pick;
                    }
                },
                None => CATEGORY_SHARES[weights.sample(&mut rng)].0,
            };
            let mut text = words.join(" ");
            if let Some(first) = text.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            let id = format!("d{d:05}-h{i:03}");
            if signal {
                signal_ids.insert(id.clone());
            }
            headlines.push(Headline {
                id,
                day: dates[d],
                tokens: tokenize(&text),
                text,
                category: Some(category),
            });
        }
    }

    let mut sessions = Vec::with_capacity(dates.len());
    let mut open = 100.0;
    for (d, date) in dates.iter().enumerate() {
        let close = open * (1.0 + rng.random_range(-0.002..0.002));
        sessions.push(Session {
            date: *date,
            open,
            close: Some(close),
        });
        if let Some(label) = labels.get(d) {
            let centre = match label {
                MovementLabel::Down => -1.0,
                MovementLabel::Stay => 0.0,
                MovementLabel::Up => 1.0,
            };
            let r: f64 = centre + rng.random_range(-0.05..0.05);
            open *= 1.0 + r / 100.0;
        }
    }
    let prices = PriceSeries::new("SYNTH", sessions)?;
    let labels = dates.iter().copied().zip(labels).collect();
    Ok(SyntheticCorpus {
        headlines,
        prices,
        labels,
        signal_ids,
    })
}

impl SyntheticCorpus {
    /// One example per day holding all of its headlines.
    pub fn day_examples(&self) -> Vec<DayExample> {
        let mut out: Vec<DayExample> = self
            .labels
            .iter()
            .map(|(day, label)| DayExample {
                day: *day,
                headline_ids: Vec::new(),
                label: *label,
                subset_index: 0,
            })
            .collect();
        let mut slot = 0;
        for h in &self.headlines {
            while out[slot].day != h.day {
                slot += 1;
            }
            out[slot].headline_ids.push(h.id.clone());
        }
        out
    }

    /// Price table with `date,open,close` columns.
    pub fn write_prices(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let fail = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
        w.write_record(["date", "open", "close"]).map_err(fail)?;
        for s in &self.prices.sessions {
            let close = s.close.map(|c| c.to_string()).unwrap_or_default();
            w.write_record([s.date.to_string(), s.open.to_string(), close])
                .map_err(fail)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Headlines as JSON lines; `with_categories = false` omits the
    /// category field.
    pub fn write_headlines(&self, path: &Path, with_categories: bool) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for h in &self.headlines {
            let mut rec = serde_json::json!({
                "id": h.id,
                "date": h.day.to_string(),
                "text": h.text,
            });
            if let (true, Some(c)) = (with_categories, h.category) {
                rec["category"] = c.as_str().into();
            }
            writeln!(out, "{rec}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Returns (in percent) calibrated to a 30.91 / 33.61 / 35.48 split into
/// DOWN / STAY / UP at a ±0.3 threshold: exactly 3091, 3361 and 3548 of
/// 10,000 draws fall in `[-3, -0.3)`, `[-0.3, 0.3]` and `(0.3, 3]`.
pub fn calibrated_returns(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(10_000);
    out.extend((0..3091).map(|_| rng.random_range(-3.0..-0.3)));
    out.extend((0..3361).map(|_| rng.random_range(-0.3..=0.3)));
    out.extend((0..3548).map(|_| -rng.random_range(-3.0..-0.3)));
    out.shuffle(&mut rng);
    out
}
