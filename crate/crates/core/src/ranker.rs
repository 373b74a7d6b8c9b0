//! Corpus-wide relevance ranking from attention logits, category skew at the
//! top of the ranking, and blind annotation samples.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;
use std::io::Write;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::encoder::EmbeddingStore;
use crate::error::{Error, Result};
use crate::ingest::Headline;
use crate::nn::Tensor;
use crate::pipeline::Model;

/// Headlines scored per forward pass. Any value gives identical scores.
const SCORE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub headline_id: String,
    pub score: f64,
    pub category: Category,
    pub day: NaiveDate,
    /// 1 is the most relevant; 0 until ranked.
    pub rank: usize,
}

/// Scores each headline with its pre-softmax attention logit (dropout off).
pub fn score_all(model: &Model, headlines: &[Headline], store: &EmbeddingStore) -> Result<Vec<RelevanceRecord>> {
    let chunks: Vec<Vec<RelevanceRecord>> = headlines
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let dims = store.dims();
            let mut data = Vec::with_capacity(chunk.len() * dims);
            for h in chunk {
                data.extend_from_slice(store.get(&h.id)?);
            }
            let cats: Vec<Category> = chunk.iter().map(Headline::category_or_unclassified).collect();
            let logits = model.headline_logits(&Tensor::matrix(chunk.len(), dims, data)?, &cats)?;
            chunk
                .iter()
                .zip(logits)
                .map(|(h, score)| {
                    if !score.is_finite() {
                        return Err(Error::NonFinite(format!("score of headline {}", h.id)));
                    }
                    Ok(RelevanceRecord {
                        headline_id: h.id.clone(),
                        score,
                        category: h.category_or_unclassified(),
                        day: h.day,
                        rank: 0,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Higher score first; ties by day, then headline id.
fn rank_order(a: &RelevanceRecord, b: &RelevanceRecord) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.day.cmp(&b.day))
        .then_with(|| a.headline_id.cmp(&b.headline_id))
}

pub fn global_rank(mut records: Vec<RelevanceRecord>) -> Vec<RelevanceRecord> {
    records.sort_by(rank_order);
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    records
}

/// Records of one day in global order, re-ranked from 1.
pub fn day_rank(records: &[RelevanceRecord], day: NaiveDate) -> Result<Vec<RelevanceRecord>> {
    let of_day: Vec<RelevanceRecord> = records.iter().filter(|r| r.day == day).cloned().collect();
    if of_day.is_empty() {
        return Err(Error::InvalidArgument(format!("no headlines on {day}")));
    }
    Ok(global_rank(of_day))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewRow {
    pub k: usize,
    pub fraction: f64,
    pub increase_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub target: Category,
    pub total: usize,
    pub base_fraction: f64,
    pub rows: Vec<SkewRow>,
}

/// `100 · (fraction / base − 1)`.
pub fn percent_increase(fraction: f64, base: f64) -> f64 {
    100.0 * (fraction / base - 1.0)
}

/// Share of `target` among the top `k` ranked records, for each `k`,
/// against its share in the whole ranking.
pub fn skew_report(ranked: &[RelevanceRecord], target: Category, ks: &[usize]) -> Result<SkewReport> {
    let n = ranked.len();
    let hits = |k: usize| ranked[..k].iter().filter(|r| r.category == target).count();
    if n == 0 {
        return Err(Error::InvalidArgument("skew report over no records".into()));
    }
    let base = hits(n) as f64 / n as f64;
    if base == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{target} does not occur in the ranking"
        )));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
        }
        let fraction = hits(k) as f64 / k as f64;
        rows.push(SkewRow {
            k,
            fraction,
            increase_pct: percent_increase(fraction, base),
        });
    }
    Ok(SkewReport {
        target,
        total: n,
        base_fraction: base,
        rows,
    })
}

impl SkewReport {
    /// Tab-separated table with one row per rank cut.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "# target {} base {:.2}% of {}",
            self.target,
            100.0 * self.base_fraction,
            self.total
        )?;
        writeln!(out, "rank\tfraction\tincrease")?;
        for r in &self.rows {
            writeln!(out, "@{}\t{:.2}%\t{:+.2}%", r.k, 100.0 * r.fraction, r.increase_pct)?;
        }
        Ok(())
    }
}

/// Writes ranked rows `rank, score, day, category, headline_id, text`.
pub fn write_ranked(records: &[RelevanceRecord], texts: &HashMap<String, String>, out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    let io = |e: csv::Error| Error::InvalidArgument(format!("writing ranking: {e}"));
    w.write_record(["rank", "score", "day", "category", "headline_id", "text"])
        .map_err(io)?;
    for r in records {
        let text = texts.get(&r.headline_id).map(String::as_str).unwrap_or("");
        w.write_record([
            r.rank.to_string(),
            r.score.to_string(),
            r.day.to_string(),
            r.category.to_string(),
            r.headline_id.clone(),
            text.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("writing ranking: {e}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Top,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub blind_id: String,
    pub headline_id: String,
    pub sources: Vec<SampleSource>,
}

/// Top-ranked plus uniformly drawn records, deduplicated and shuffled under
/// blind ids. Reviewers see only `(blind_id, text)`; the id/source mapping
/// goes into a separate key file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSample {
    pub items: Vec<AnnotationItem>,
}

pub fn export_annotation_sample(
    ranked: &[RelevanceRecord],
    top_n: usize,
    uniform_n: usize,
    seed: u64,
) -> Result<AnnotationSample> {
    if ranked.len() < top_n {
        return Err(Error::InvalidArgument(format!(
            "{} ranked records, fewer than top_n = {top_n}",
            ranked.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources: BTreeMap<&str, Vec<SampleSource>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in ranked.iter().take(top_n) {
        order.push(&r.headline_id);
        sources.entry(&r.headline_id).or_default().push(SampleSource::Top);
    }
    for r in ranked.choose_multiple(&mut rng, uniform_n.min(ranked.len())) {
        let entry = sources.entry(&r.headline_id).or_default();
        if entry.is_empty() {
            order.push(&r.headline_id);
        }
        entry.push(SampleSource::Uniform);
    }
    order.shuffle(&mut rng);
    let width = order.len().to_string().len().max(4);
    let items = order
        .iter()
        .enumerate()
        .map(|(i, id)| AnnotationItem {
            blind_id: format!("item-{:0width$}", i + 1),
            headline_id: id.to_string(),
            sources: sources[id].clone(),
        })
        .collect();
    Ok(AnnotationSample { items })
}

impl AnnotationSample {
    /// Reviewer file: `blind_id<TAB>text`, no scores or provenance.
    pub fn write_items(&self, texts: &HashMap<String, String>, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io(std::path::Path::new("<annotation>"), e);
        writeln!(out, "blind_id\ttext").map_err(io)?;
        for item in &self.items {
            let text = texts
                .get(&item.headline_id)
                .ok_or_else(|| Error::InvalidArgument(format!("no text for headline {}", item.headline_id)))?;
            writeln!(out, "{}\t{}", item.blind_id, text.replace(['\t', '\n'], " ")).map_err(io)?;
        }
        Ok(())
    }

    /// Sealed mapping: `blind_id<TAB>headline_id<TAB>sources`.
    pub fn write_key(&self, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io(std::path::Path::new("<annotation key>"), e);
        writeln!(out, "blind_id\theadline_id\tsources").map_err(io)?;
        for item in &self.items {
            let sources: Vec<&str> = item
                .sources
                .iter()
                .map(|s| match s {
                    SampleSource::Top => "top",
                    SampleSource::Uniform => "uniform",
                })
                .collect();
            writeln!(out, "{}\t{}\t{}", item.blind_id, item.headline_id, sources.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

/// Cohen's kappa between two annotators' labels of the same items.
pub fn cohen_kappa<L: Eq + Hash>(a: &[L], b: &[L]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "kappa needs two equal, non-empty label lists (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut count_a: HashMap<&L, usize> = HashMap::new();
    let mut count_b: HashMap<&L, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *count_a.entry(x).or_default() += 1;
        *count_b.entry(y).or_default() += 1;
    }
    let labels: HashSet<&L> = count_a.keys().chain(count_b.keys()).copied().collect();
    let expected: f64 = labels
        .iter()
        .map(|l| {
            let pa = *count_a.get(l).unwrap_or(&0) as f64 / n;
            let pb = *count_b.get(l).unwrap_or(&0) as f64 / n;
            pa * pb
        })
        .sum();
    if expected >= 1.0 {
        // Both annotators used one and the same label throughout.
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, score: f64, day: u32, category: Category) -> RelevanceRecord {
        RelevanceRecord {
            headline_id: id.into(),
            score,
            category,
            day: NaiveDate::from_ymd_opt(2008, 10, day).unwrap(),
            rank: 0,
        }
    }

    #[test]
    fn ranks_follow_scores() {
        let ranked = global_rank(vec![
            rec("a", 3.0, 1, Category::World),
            rec("b", 1.0, 1, Category::World),
            rec("c", 2.0, 1, Category::World),
        ]);
        let ids: Vec<(&str, usize)> = ranked.iter().map(|r| (r.headline_id.as_str(), r.rank)).collect();
        assert_eq!(ids, vec![("a", 1), ("c", 2), ("b", 3)]);
    }

    #[test]
    fn ties_break_by_day_then_id() {
        let ranked = global_rank(vec![
            rec("z", 1.0, 2, Category::World),
            rec("b", 1.0, 1, Category::World),
            rec("a", 1.0, 1, Category::World),
        ]);
        let ids: Vec<&str> = ranked.iter().map(|r| r.headline_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "z"]);
    }

    #[test]
    fn table_four_arithmetic() {
        let inc = percent_increase(0.90, 0.1576);
        assert!((inc - 471.07).abs() < 0.1, "{inc}");
    }

    #[test]
    fn skew_rows() {
        let mut recs = Vec::new();
        for i in 0..10 {
            let c = if i < 2 { Category::Business } else { Category::World };
            recs.push(rec(&format!("h{i}"), -(i as f64), 1, c));
        }
        let ranked = global_rank(recs);
        let report = skew_report(&ranked, Category::Business, &[1, 5, 10]).unwrap();
        assert_eq!(report.base_fraction, 0.2);
        assert_eq!(report.rows[0].fraction, 1.0);
        assert!((report.rows[0].increase_pct - 400.0).abs() < 1e-9);
        assert_eq!(report.rows[2].increase_pct, 0.0);
        assert!(skew_report(&ranked, Category::Business, &[11]).is_err());
        assert!(skew_report(&ranked, Category::Health, &[5]).is_err());

        let low = skew_report(
            &global_rank(
                ranked
                    .iter()
                    .cloned()
                    .map(|mut r| {
                        r.score = -r.score;
                        r
                    })
                    .collect(),
            ),
            Category::Business,
            &[5],
        )
        .unwrap();
        assert_eq!((low.rows[0].fraction, low.rows[0].increase_pct), (0.0, -100.0));
    }

    #[test]
    fn day_rank_restricts_global_order() {
        let ranked = global_rank(vec![
            rec("a", 0.5, 1, Category::World),
            rec("b", 0.9, 2, Category::World),
            rec("c", 0.7, 1, Category::World),
        ]);
        let day1 = day_rank(&ranked, NaiveDate::from_ymd_opt(2008, 10, 1).unwrap()).unwrap();
        let ids: Vec<(&str, usize)> = day1.iter().map(|r| (r.headline_id.as_str(), r.rank)).collect();
        assert_eq!(ids, vec![("c", 1), ("a", 2)]);
        assert!(day_rank(&ranked, NaiveDate::from_ymd_opt(2008, 10, 9).unwrap()).is_err());
    }

    #[test]
    fn annotation_sample_is_deduplicated_and_blind() {
        let ranked = global_rank(
            (0..1000)
                .map(|i| rec(&format!("h{i:04}"), i as f64, 1, Category::World))
                .collect(),
        );
        let a = export_annotation_sample(&ranked, 200, 200, 7).unwrap();
        let b = export_annotation_sample(&ranked, 200, 200, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.items.len() <= 400 && a.items.len() > 200);
        let tops = a
            .items
            .iter()
            .filter(|i| i.sources.contains(&SampleSource::Top))
            .count();
        let uniform = a
            .items
            .iter()
            .filter(|i| i.sources.contains(&SampleSource::Uniform))
            .count();
        assert_eq!((tops, uniform), (200, 200));
        let ids: HashSet<&str> = a.items.iter().map(|i| i.headline_id.as_str()).collect();
        assert_eq!(ids.len(), a.items.len());

        let texts: HashMap<String, String> = ranked
            .iter()
            .map(|r| (r.headline_id.clone(), format!("text {}", r.headline_id)))
            .collect();
        let mut buf = Vec::new();
        a.write_items(&texts, &mut buf).unwrap();
        let file = String::from_utf8(buf).unwrap();
        assert_eq!(file.lines().next(), Some("blind_id\ttext"));
        assert!(!file.contains("h0999\t") && file.lines().all(|l| l.split('\t').count() == 2));

        assert!(export_annotation_sample(&ranked[..10], 200, 5, 1).is_err());
    }

    #[test]
    fn kappa_oracle() {
        // 2x2 table [[20, 5], [10, 15]]: po = 0.7, pe = 0.5, kappa = 0.4.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, n) in [(1, 1, 20), (1, 0, 5), (0, 1, 10), (0, 0, 15)] {
            for _ in 0..n {
                a.push(x);
                b.push(y);
            }
        }
        assert!((cohen_kappa(&a, &b).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(cohen_kappa(&[1], &[1, 2]).is_err());
    }
}
