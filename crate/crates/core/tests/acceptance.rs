//! Acceptance suite. Each test is one criterion and prints a single
//! `PASS`/`FAIL` line with the measured values (visible with `--nocapture`).

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use hlrel_core::category::Category;
use hlrel_core::commands::{
    cmd_ingest, cmd_score, cmd_train, IngestArgs, RunConfig, ScoreArgs, ScoreScope, SelectProtocol, TrainArgs,
    DEFAULT_KS,
};
use hlrel_core::encoder::{EmbeddingStore, HEADLINE_DIM};
use hlrel_core::ingest::{default_grid, threshold_search, Headline, MovementLabel};
use hlrel_core::manifest::Clock;
use hlrel_core::nn::{normal_init, Gradients, Graph, NodeId, ParamId, ParamStore, Tensor};
use hlrel_core::pipeline::{
    select_max_accuracy, select_min_loss_patience, train, DayBatch, EpochRecord, ExampleSet, Model, ModelConfig,
    SelectionRule, TrainConfig,
};
use hlrel_core::ranker::{global_rank, percent_increase, score_all, skew_report, RelevanceRecord};
use hlrel_core::synthetic::{calibrated_returns, generate, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {id:>2} {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this in magnitude are compared absolutely: the
/// central difference itself carries ~1e-11 rounding noise, so a relative
/// error below ~1e-6 is not measurable.
const FD_FLOOR: f64 = 1e-6;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

type LossFn<'a> = dyn Fn(&ParamStore, bool) -> (f64, Option<Gradients>) + 'a;

/// Max relative error between backprop and central differences over the
/// given coordinates (all coordinates of every parameter when `None`).
fn fd_check(store: &mut ParamStore, coords: Option<&[(ParamId, usize)]>, loss: &LossFn) -> (f64, usize) {
    let grads = loss(store, true).1.expect("analytic pass returns gradients");
    let coords: Vec<(ParamId, usize)> = match coords {
        Some(c) => c.to_vec(),
        None => store
            .iter()
            .map(|p| (store.id(&p.name).unwrap(), p.value.len()))
            .flat_map(|(id, len)| (0..len).map(move |i| (id, i)))
            .collect(),
    };
    let mut worst: f64 = 0.0;
    for &(id, i) in &coords {
        let orig = store.get(id).value.data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
        let up = loss(store, false).0;
        store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
        let down = loss(store, false).0;
        store.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads.get(id).data()[i], numeric));
    }
    (worst, coords.len())
}

/// Checks one layer. Its output is projected on a fixed random column and
/// summed, so every output entry carries a distinct weight.
fn layer_check(
    name: &str,
    params: Vec<(&str, Tensor)>,
    out_cols: usize,
    build: &dyn Fn(&mut Graph, &[ParamId]) -> NodeId,
) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = params.into_iter().map(|(n, t)| store.add(n, t).unwrap()).collect();
    let weights = normal_init(&[out_cols, 1], 1.0, 99).unwrap();
    let loss = |s: &ParamStore, want_grads: bool| {
        let mut g = Graph::new(s);
        let out = build(&mut g, &ids);
        let w = g.input(weights.clone());
        let proj = g.matmul(out, w).unwrap();
        let loss = g.sum(proj);
        let value = g.value(loss).data()[0];
        (value, want_grads.then(|| g.backward(loss).unwrap()))
    };
    let (err, n) = fd_check(&mut store, None, &loss);
    println!("  {name:<22} {n:>5} coords  max rel err {err:.2e}");
    err
}

fn model_loss<'a>(
    batch: &'a DayBatch,
    config: &'a ModelConfig,
    seed: u64,
) -> impl Fn(&ParamStore, bool) -> (f64, Option<Gradients>) + 'a {
    move |s: &ParamStore, want_grads: bool| {
        let m = Model::from_params(config.clone(), s.clone()).unwrap();
        let (l, g) = m.loss_and_gradients(batch, Some(seed)).unwrap();
        (l, want_grads.then_some(g))
    }
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    normal_init(shape, 1.0, seed).unwrap()
}

fn day_batch(rows: &Tensor, cats: &[Category], cap: usize, label: MovementLabel) -> DayBatch {
    let slices: Vec<&[f64]> = (0..rows.rows()).map(|i| rows.row(i)).collect();
    DayBatch::new(&slices, cats, cap, Some(label)).unwrap()
}

#[test]
fn c01_gradient_oracle() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut track = |e: f64| worst = worst.max(e);

    track(layer_check(
        "dense",
        vec![
            ("x", rand_t(&[3, 5], 1)),
            ("w", rand_t(&[5, 4], 2)),
            ("b", rand_t(&[4], 3)),
        ],
        4,
        &|g, p| {
            let (x, w, b) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
            g.dense(x, w, b).unwrap()
        },
    ));
    track(layer_check("elu", vec![("x", rand_t(&[3, 6], 4))], 6, &|g, p| {
        let x = g.param(p[0]);
        g.elu(x).unwrap()
    }));
    track(layer_check("tanh", vec![("x", rand_t(&[3, 6], 5))], 6, &|g, p| {
        let x = g.param(p[0]);
        g.tanh(x)
    }));
    track(layer_check(
        "layer_norm",
        vec![
            ("x", rand_t(&[3, 7], 6)),
            ("gain", rand_t(&[7], 7)),
            ("bias", rand_t(&[7], 8)),
        ],
        7,
        &|g, p| {
            let (x, gain, bias) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
            g.layer_norm(x, gain, bias, 1e-5).unwrap()
        },
    ));
    track(layer_check("softmax", vec![("x", rand_t(&[3, 5], 9))], 5, &|g, p| {
        let x = g.param(p[0]);
        g.softmax_rows(x).unwrap()
    }));
    track(layer_check(
        "softmax+cross_entropy",
        vec![("x", rand_t(&[4, 3], 10))],
        1,
        &|g, p| {
            let x = g.param(p[0]);
            let probs = g.softmax_rows(x).unwrap();
            g.cross_entropy_rows(probs, &[0, 2, 1, 2]).unwrap()
        },
    ));
    track(layer_check("dropout", vec![("x", rand_t(&[3, 8], 11))], 8, &|g, p| {
        let x = g.param(p[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        g.dropout(x, 0.25, Some(&mut rng)).unwrap()
    }));
    track(layer_check(
        "category embedding",
        vec![("x", rand_t(&[3, 4], 12)), ("table", rand_t(&[8, 3], 13))],
        7,
        &|g, p| {
            let (x, table) = (g.param(p[0]), g.param(p[1]));
            let hc = g.gather_rows(table, &[0, 5, 0]).unwrap();
            g.concat_cols(x, hc).unwrap()
        },
    ));
    track(layer_check(
        "masked attention",
        vec![
            ("hp", rand_t(&[3, 4], 14)),
            ("w", rand_t(&[4, 4], 15)),
            ("b", rand_t(&[4], 16)),
            ("u", rand_t(&[4, 1], 17)),
        ],
        4,
        &|g, p| {
            let (hp, w, b, u) = (g.param(p[0]), g.param(p[1]), g.param(p[2]), g.param(p[3]));
            let pre = g.dense(hp, w, b).unwrap();
            let t = g.tanh(pre);
            let s = g.matmul(t, u).unwrap();
            let row = g.reshape(s, &[1, 3]).unwrap();
            let wide = g.scatter_cols_masked(row, &[0, 2, 5], 7).unwrap();
            let alphas = g.softmax_rows(wide).unwrap();
            let real = g.gather_cols(alphas, &[0, 2, 5]).unwrap();
            g.matmul(real, hp).unwrap()
        },
    ));

    // Whole network, every parameter, at reduced width.
    let small = ModelConfig {
        headline_dim: 12,
        category_dim: 4,
        hidden_dim: 6,
        cap: 5,
        ..ModelConfig::default()
    };
    let rows = rand_t(&[3, 12], 20);
    let cats = [Category::Business, Category::World, Category::Business];
    let batch = day_batch(&rows, &cats, small.cap, MovementLabel::Stay);
    let model = Model::init(small, 21).unwrap();
    let mut store = model.params().clone();
    let (err, n) = fd_check(&mut store, None, &model_loss(&batch, model.config(), 5));
    println!("  {:<22} {n:>5} coords  max rel err {err:.2e}", "network (reduced)");
    track(err);

    // Full-size network on a 3-headline day: every coordinate of the small
    // parameter groups plus a random sample of the large matrices.
    let full = Model::init(ModelConfig::default(), 22).unwrap();
    let rows = rand_t(&[3, HEADLINE_DIM], 23);
    let batch = day_batch(&rows, &cats, 115, MovementLabel::Up);
    let mut store = full.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut coords = Vec::new();
    for p in store.iter() {
        let id = store.id(&p.name).unwrap();
        let len = p.value.len();
        if len <= 300 {
            coords.extend((0..len).map(|i| (id, i)));
        } else {
            coords.extend((0..150).map(|_| (id, rng.random_range(0..len))));
        }
    }
    let (err, n) = fd_check(&mut store, Some(&coords), &model_loss(&batch, full.config(), 6));
    println!("  {:<22} {n:>5} coords  max rel err {err:.2e}", "network (full size)");
    track(err);

    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient oracle",
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} (< 1e-4), {secs:.1}s (< 60s)"),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn c02_attention_contract() {
    let model = Model::init(ModelConfig::default(), 31).unwrap();
    let rows = rand_t(&[7, HEADLINE_DIM], 32);
    let cats = [
        Category::World,
        Category::Business,
        Category::Sport,
        Category::Us,
        Category::Business,
        Category::Health,
        Category::Unclassified,
    ];
    let batch = day_batch(&rows, &cats, 115, MovementLabel::Down);
    let out = model.forward_day(&batch).unwrap();
    let sum: f64 = out.alphas[..7].iter().sum();
    let masked_zero = out.alphas[7..].iter().all(|&a| a == 0.0);

    // Garbage in the padding must change neither outputs nor gradients.
    let mut noisy = batch.clone();
    for r in 7..115 {
        for v in noisy.headlines.row_mut(r) {
            *v = 1e3;
        }
        noisy.categories[r] = Category::Business;
    }
    let (l1, g1) = model.loss_and_gradients(&batch, Some(1)).unwrap();
    let (l2, g2) = model.loss_and_gradients(&noisy, Some(1)).unwrap();
    let padding_inert = l1 == l2 && g1 == g2 && model.forward_day(&noisy).unwrap() == out;

    // Reverse the headlines and scatter them over the slots.
    let slots = [100, 3, 57, 0, 114, 20, 9];
    let mut perm = DayBatch {
        headlines: Tensor::zeros(&[115, HEADLINE_DIM]),
        categories: vec![Category::Unclassified; 115],
        mask: vec![false; 115],
        label: batch.label,
    };
    for (i, &slot) in slots.iter().enumerate() {
        let src = 6 - i;
        perm.headlines.row_mut(slot).copy_from_slice(rows.row(src));
        perm.categories[slot] = cats[src];
        perm.mask[slot] = true;
    }
    let permuted = model.forward_day(&perm).unwrap();
    let perm_diff = out
        .probs
        .iter()
        .zip(&permuted.probs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    verdict(
        2,
        "attention contract",
        (sum - 1.0).abs() <= 1e-12 && masked_zero && padding_inert && perm_diff < 1e-9,
        format!(
            "|Σα−1| = {:.1e}, masked α all zero: {masked_zero}, padding inert: {padding_inert}, permutation Δp = {perm_diff:.1e}",
            (sum - 1.0).abs()
        ),
    );
}

// ---------------------------------------------------------------------------
// Planted-signal experiments

struct PlantedOutcome {
    val_acc: f64,
    top100_signal: f64,
    base: f64,
    epochs_run: usize,
    secs: f64,
}

fn planted_experiment(shuffle_labels: bool) -> PlantedOutcome {
    let start = Instant::now();
    let corpus = generate(&SyntheticConfig {
        days: 2000,
        headlines_per_day: 30,
        signal_fraction: 0.15,
        shuffle_labels,
        seed: 7,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let store = EmbeddingStore::hashed(
        corpus.headlines.iter().map(|h| (h.id.as_str(), h.tokens.as_slice())),
        HEADLINE_DIM,
        11,
    )
    .unwrap();
    let categories: HashMap<String, Category> = corpus
        .headlines
        .iter()
        .map(|h| (h.id.clone(), h.category_or_unclassified()))
        .collect();
    let examples = corpus.day_examples();
    let (train_ex, val_ex) = examples.split_at(1400);
    let set = |ex| ExampleSet {
        examples: ex,
        store: &store,
        categories: &categories,
        cap: 115,
    };
    let config = TrainConfig {
        epochs: 20,
        seed: 5,
        selection: SelectionRule::MinLoss { patience: 2 },
        ..TrainConfig::default()
    };
    let model = Model::init(ModelConfig::default(), 3).unwrap();
    let run = train(model, &set(train_ex), &set(val_ex), &config).unwrap();
    let chosen = run.selected.metadata.selection.clone().unwrap();
    for r in &run.history {
        println!(
            "  epoch {:>2} train_loss {:.4} val_loss {:.4} val_acc {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc
        );
    }

    let val_days: HashSet<_> = val_ex.iter().map(|e| e.day).collect();
    let val_headlines: Vec<Headline> = corpus
        .headlines
        .iter()
        .filter(|h| val_days.contains(&h.day))
        .cloned()
        .collect();
    let ranked = global_rank(score_all(&run.selected.model, &val_headlines, &store).unwrap());
    let is_signal = |r: &RelevanceRecord| corpus.signal_ids.contains(&r.headline_id);
    let top = ranked[..100].iter().filter(|r| is_signal(r)).count() as f64 / 100.0;
    let base = ranked.iter().filter(|r| is_signal(r)).count() as f64 / ranked.len() as f64;
    PlantedOutcome {
        val_acc: run.history[chosen.epoch - 1].val_acc,
        top100_signal: top,
        base,
        epochs_run: run.history.len(),
        secs: start.elapsed().as_secs_f64(),
    }
}

#[test]
fn c03_planted_signal_ranking() {
    let o = planted_experiment(false);
    let skew = percent_increase(o.top100_signal, o.base);
    verdict(
        3,
        "planted-signal ranking",
        o.val_acc >= 0.90 && o.top100_signal >= 0.90 && skew >= 500.0 && o.epochs_run <= 20 && o.secs < 600.0,
        format!(
            "val_acc {:.4} (≥ 0.90), top-100 signal {:.0}% (≥ 90%), skew {skew:+.2}% over base {:.2}%, {} epochs, {:.0}s",
            o.val_acc,
            100.0 * o.top100_signal,
            100.0 * o.base,
            o.epochs_run,
            o.secs
        ),
    );
}

#[test]
fn c04_null_signal_control() {
    let o = planted_experiment(true);
    let acc_ok = (o.val_acc - 1.0 / 3.0).abs() <= 0.05;
    let top_ok = (o.top100_signal - 0.15).abs() <= 0.10;
    verdict(
        4,
        "null-signal control",
        acc_ok && top_ok && o.epochs_run <= 20,
        format!(
            "val_acc {:.4} (33% ± 5), top-100 signal {:.0}% (15% ± 10), base {:.2}%, {} epochs, {:.0}s",
            o.val_acc,
            100.0 * o.top100_signal,
            100.0 * o.base,
            o.epochs_run,
            o.secs
        ),
    );
}

// ---------------------------------------------------------------------------

/// Exhaustive search written independently of the library: counts each
/// class directly and keeps the first grid point with the smallest gap.
fn brute_force_threshold(returns: &[f64], grid: &[f64]) -> f64 {
    let mut best_t = f64::NAN;
    let mut best_gap = usize::MAX;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &sorted {
        let up = returns.iter().filter(|&&r| r > t).count();
        let down = returns.iter().filter(|&&r| r < -t).count();
        let stay = returns.len() - up - down;
        let gap = up.max(down).max(stay) - up.min(down).min(stay);
        if gap < best_gap {
            best_gap = gap;
            best_t = t;
        }
    }
    best_t
}

#[test]
fn c05_threshold_search_oracle() {
    let start = Instant::now();
    let grid = default_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut mismatches = 0;
    for series in 0..1000 {
        let scale = rng.random_range(0.1..2.0);
        let drift = rng.random_range(-0.3..0.3);
        let returns: Vec<f64> = (0..500)
            .map(|_| {
                let r: f64 = drift + scale * (rng.random::<f64>() - 0.5) * 4.0;
                // Every third series sits on the grid to exercise boundaries and ties.
                if series % 3 == 0 {
                    (r * 10.0).round() / 10.0
                } else {
                    r
                }
            })
            .collect();
        let got = threshold_search(&returns, &grid).unwrap().threshold;
        if got != brute_force_threshold(&returns, &grid) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        "threshold-search oracle",
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches over 1000 series of 500, {secs:.2}s"),
    );
}

#[test]
fn c06_calibrated_class_distribution() {
    let returns = calibrated_returns(61);
    let choice = threshold_search(&returns, &default_grid()).unwrap();
    let (down, stay, up) = choice.distribution.percentages();
    let close = (down - 30.91).abs() <= 0.5 && (stay - 33.61).abs() <= 0.5 && (up - 35.48).abs() <= 0.5;
    verdict(
        6,
        "calibrated class distribution",
        choice.threshold == 0.3 && close,
        format!("t = {}, DOWN/STAY/UP = {down:.2}/{stay:.2}/{up:.2}%", choice.threshold),
    );
}

#[test]
fn c07_score_globality() {
    let model = Model::init(ModelConfig::default(), 71).unwrap();
    let corpus = generate(&SyntheticConfig {
        days: 6,
        seed: 72,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let store = EmbeddingStore::hashed(
        corpus.headlines.iter().map(|h| (h.id.as_str(), h.tokens.as_slice())),
        HEADLINE_DIM,
        73,
    )
    .unwrap();
    let probe = corpus.headlines[40].clone();

    // Context A: the probe's own day. Context B: moved into another day,
    // among different headlines and at another position.
    let in_day = |day_idx: usize, extra: Option<&Headline>| {
        let mut hs: Vec<Headline> = corpus.headlines[day_idx * 30..(day_idx + 1) * 30].to_vec();
        if let Some(p) = extra {
            let mut p = p.clone();
            p.day = hs[0].day;
            hs.insert(17, p);
        }
        hs
    };
    let score_of = |hs: &[Headline]| {
        score_all(&model, hs, &store)
            .unwrap()
            .into_iter()
            .find(|r| r.headline_id == probe.id)
            .unwrap()
            .score
    };
    let a = score_of(&in_day(1, None));
    let b = score_of(&in_day(4, Some(&probe)));
    let c = score_of(std::slice::from_ref(&probe));
    let all = score_of(&corpus.headlines);

    // Same for the logits exposed by the day forward pass.
    let logits_in = |hs: &[Headline]| {
        let rows: Vec<&[f64]> = hs.iter().map(|h| store.get(&h.id).unwrap()).collect();
        let cats: Vec<Category> = hs.iter().map(Headline::category_or_unclassified).collect();
        let batch = DayBatch::new(&rows, &cats, 115, None).unwrap();
        let pos = hs.iter().position(|h| h.id == probe.id).unwrap();
        model.forward_day(&batch).unwrap().logits[pos]
    };
    let d = logits_in(&in_day(1, None));
    let e = logits_in(&in_day(4, Some(&probe)));

    let bits: HashSet<u64> = [a, b, c, all, d, e].iter().map(|v| v.to_bits()).collect();
    verdict(
        7,
        "score globality",
        bits.len() == 1,
        format!(
            "probe logit across 6 contexts: {} distinct bit pattern(s), value {a}",
            bits.len()
        ),
    );
}

#[test]
fn c08_skew_arithmetic() {
    let direct = percent_increase(0.90, 0.1576);
    // 10,000 records with 1,576 business headlines, 9 of them in the top 10.
    let mut records = Vec::new();
    for i in 0..10_000usize {
        let business = if i < 10 { i < 9 } else { i < 10 + 1576 - 9 };
        records.push(RelevanceRecord {
            headline_id: format!("h{i:05}"),
            score: -(i as f64),
            category: if business { Category::Business } else { Category::World },
            day: chrono::NaiveDate::from_ymd_opt(2008, 10, 3).unwrap(),
            rank: 0,
        });
    }
    let report = skew_report(&global_rank(records), Category::Business, &[10]).unwrap();
    let via_report = report.rows[0].increase_pct;
    verdict(
        8,
        "skew-report arithmetic",
        (direct - 471.07).abs() <= 0.1 && (via_report - 471.07).abs() <= 0.1 && report.base_fraction == 0.1576,
        format!("increase {direct:+.4}% direct, {via_report:+.4}% from report (471.07 ± 0.1)"),
    );
}

fn collect_files(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            out.push((rel, std::fs::read(&path).unwrap()));
        }
    }
}

fn pipeline_run(raw: &std::path::Path, root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let clock = Clock::Fixed(1_700_000_000);
    let mut config = RunConfig {
        seed: 17,
        ..RunConfig::default()
    };
    config.training.epochs = 3;
    config.training.select = SelectProtocol::MinLoss;
    cmd_ingest(&IngestArgs {
        prices: raw.join("prices.csv"),
        headlines: raw.join("headlines.jsonl"),
        out_dir: root.join("data"),
        config: config.clone(),
        categorizer: None,
        clock,
    })
    .unwrap();
    cmd_train(&TrainArgs {
        data_dir: root.join("data"),
        out_dir: root.join("model"),
        config,
        embeddings: None,
        clock,
    })
    .unwrap();
    cmd_score(&ScoreArgs {
        model: root.join("model/model.ckpt"),
        data_dir: root.join("data"),
        out_dir: root.join("score"),
        scope: ScoreScope::Test,
        target: Category::Business,
        ks: DEFAULT_KS.to_vec(),
        embeddings: None,
        clock,
    })
    .unwrap();
    let mut files = Vec::new();
    collect_files(root, root, &mut files);
    files.sort();
    files
}

#[test]
fn c09_end_to_end_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    let corpus = generate(&SyntheticConfig {
        days: 60,
        headlines_per_day: 40,
        seed: 91,
        ..SyntheticConfig::default()
    })
    .unwrap();
    corpus.write_prices(&raw.join("prices.csv")).unwrap();
    corpus.write_headlines(&raw.join("headlines.jsonl"), true).unwrap();

    let first = pipeline_run(&raw, &tmp.path().join("run1"));
    let second = pipeline_run(&raw, &tmp.path().join("run2"));
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    verdict(
        9,
        "end-to-end determinism",
        names == second.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>()
            && differing.is_empty()
            && names.iter().filter(|n| n.ends_with("manifest.json")).count() == 3,
        format!("{} files compared, differing: {differing:?}", names.len()),
    );
}

#[test]
fn c10_selection_protocols() {
    let hist = |accs: &[f64], losses: &[f64]| -> Vec<EpochRecord> {
        (0..accs.len().max(losses.len()))
            .map(|i| EpochRecord {
                epoch: i + 1,
                train_loss: 0.0,
                val_loss: *losses.get(i).unwrap_or(&1.0),
                val_acc: *accs.get(i).unwrap_or(&0.0),
            })
            .collect()
    };
    let mut twenty_five = vec![0.3; 25];
    twenty_five[3] = 0.5;
    twenty_five[21] = 0.9;
    let max_acc = [
        (select_max_accuracy(&hist(&[0.4, 0.6, 0.5], &[]), 20).unwrap().epoch, 2),
        (select_max_accuracy(&hist(&[0.6, 0.6], &[]), 20).unwrap().epoch, 1),
        (select_max_accuracy(&hist(&twenty_five, &[]), 20).unwrap().epoch, 4),
    ];
    let trace = |losses: &[f64]| {
        let s = select_min_loss_patience(&hist(&[], losses), 2).unwrap();
        (s.stopped_after, s.epoch)
    };
    let decreasing: Vec<f64> = (0..20).map(|i| 1.0 - i as f64 * 0.01).collect();
    let min_loss = [
        (trace(&[1.0, 0.8, 0.9, 0.95]), (4, 2)),
        (trace(&decreasing), (20, 20)),
        (trace(&[1.0, 1.1, 1.2]), (3, 1)),
    ];
    let ok = max_acc.iter().all(|(a, b)| a == b) && min_loss.iter().all(|(a, b)| a == b);
    verdict(
        10,
        "selection protocols",
        ok,
        format!(
            "max-acc epochs {:?}, min-loss (stop, chosen) {:?}",
            max_acc.map(|p| p.0),
            min_loss.map(|p| p.0)
        ),
    );
}
