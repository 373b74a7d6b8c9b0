//! End-to-end commands. Each reads its inputs, writes artifacts under an
//! output directory and finishes with a manifest listing their digests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::categorizer::{train_categorizer, CategorizerConfig, CategorizerReport, CategoryModel};
use crate::category::Category;
use crate::encoder::{hash_encode, load_embeddings_with_dim, EmbeddingStore, Provenance};
use crate::error::{Error, Result};
use crate::ingest::{
    assemble_days, compute_returns, default_grid, filter_days, filter_headlines, load_headlines, load_prices,
    split_dataset, stratified_subsample, threshold_search, tokenize, ClassDistribution, DayExample, DropReport,
    FilterRules, Headline, ReturnBasis, SplitFractions, HEADLINE_CAP, MAX_TOKENS, MIN_CHARS, MIN_DAY_HEADLINES,
};
use crate::manifest::{Clock, OutputDir, RunManifest};
use crate::nn::AdamWConfig;
use crate::pipeline::{train, ExampleSet, Model, ModelConfig, SelectionRule, TrainConfig, TrainedModel};
use crate::ranker::{
    export_annotation_sample, global_rank, score_all, skew_report, write_ranked, RelevanceRecord, SkewReport,
};
use crate::seed::mix_seed;

pub const HEADLINES_FILE: &str = "headlines.jsonl";
pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const DAYS_FILE: &str = "labeled_days.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";
pub const RANKED_FILE: &str = "ranked.tsv";

/// Rank cuts reported by `score` unless others are requested.
pub const DEFAULT_KS: [usize; 4] = [10, 100, 1000, 2500];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectProtocol {
    #[default]
    MaxAcc,
    MinLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub select: SelectProtocol,
    pub patience: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 20,
            batch_size: 15,
            warmup_fraction: 0.1,
            select: SelectProtocol::MaxAcc,
            patience: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    #[default]
    Hashed,
    Precomputed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub mode: EncoderMode,
    /// Seed of the feature-hashing encoder; independent of the run seed so
    /// that vectors stay fixed while training seeds vary.
    pub hash_seed: u64,
    pub embeddings: Option<PathBuf>,
}

/// Settings shared by all commands, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub index_name: String,
    /// Fixed label threshold in percent; searched over `search_grid` if absent.
    pub threshold: Option<f64>,
    pub search_grid: Vec<f64>,
    pub return_basis: ReturnBasis,
    pub cap: usize,
    pub max_tokens: usize,
    pub min_chars: usize,
    pub min_day_headlines: usize,
    pub split: SplitFractions,
    pub target_category: Category,
    pub encoder: EncoderSection,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub training: TrainingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            index_name: "INDEX".into(),
            threshold: None,
            search_grid: default_grid(),
            return_basis: ReturnBasis::default(),
            cap: HEADLINE_CAP,
            max_tokens: MAX_TOKENS,
            min_chars: MIN_CHARS,
            min_day_headlines: MIN_DAY_HEADLINES,
            split: SplitFractions::default(),
            target_category: Category::Business,
            encoder: EncoderSection::default(),
            model: ModelConfig::default(),
            optimizer: AdamWConfig::default(),
            training: TrainingSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, path)
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.cap == 0 || self.max_tokens == 0 {
            return bad("cap and max_tokens must be positive".into());
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("threshold {t} must be positive"));
            }
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 || self.training.patience == 0 {
            return bad("epochs, batch_size and patience must be positive".into());
        }
        if self.model.classes != 3 {
            return bad("the movement classifier has exactly three classes".into());
        }
        Ok(())
    }

    pub fn selection_rule(&self) -> SelectionRule {
        match self.training.select {
            SelectProtocol::MaxAcc => SelectionRule::MaxAccuracy {
                max_epochs: self.training.epochs,
            },
            SelectProtocol::MinLoss => SelectionRule::MinLoss {
                patience: self.training.patience,
            },
        }
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            cap: self.cap,
            ..self.model.clone()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: mix_seed(self.seed, 102),
            warmup_fraction: self.training.warmup_fraction,
            optimizer: self.optimizer.clone(),
            selection: self.selection_rule(),
        }
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitExample {
    pub split: SplitName,
    #[serde(flatten)]
    pub example: DayExample,
}

/// An ingested dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub headlines: Vec<Headline>,
    pub examples: Vec<SplitExample>,
}

pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            dir: dir.to_path_buf(),
            headlines: read_json_lines(&dir.join(HEADLINES_FILE))?,
            examples: read_json_lines(&dir.join(EXAMPLES_FILE))?,
        })
    }

    pub fn split(&self, name: SplitName) -> Vec<DayExample> {
        self.examples
            .iter()
            .filter(|e| e.split == name)
            .map(|e| e.example.clone())
            .collect()
    }

    pub fn categories(&self) -> HashMap<String, Category> {
        self.headlines
            .iter()
            .map(|h| (h.id.clone(), h.category_or_unclassified()))
            .collect()
    }

    fn record_inputs(&self, out: &mut OutputDir) -> Result<()> {
        out.record_input(&self.dir.join(HEADLINES_FILE))?;
        out.record_input(&self.dir.join(EXAMPLES_FILE))
    }
}

/// Headline vectors for a dataset: feature-hashed from tokens, or read from
/// a precomputed file that must cover every headline.
pub fn build_store(config: &RunConfig, headlines: &[Headline], embeddings: Option<&Path>) -> Result<EmbeddingStore> {
    let dims = config.model.headline_dim;
    let path = embeddings.or(config.encoder.embeddings.as_deref());
    match (config.encoder.mode, path) {
        (EncoderMode::Hashed, None) => EmbeddingStore::hashed(
            headlines.iter().map(|h| (h.id.as_str(), h.tokens.as_slice())),
            dims,
            config.encoder.hash_seed,
        ),
        (_, Some(path)) => {
            let store = load_embeddings_with_dim(path, dims)?;
            if let Some(h) = headlines.iter().find(|h| !store.contains(&h.id)) {
                return Err(Error::MissingEmbedding(h.id.clone()));
            }
            Ok(store)
        }
        (EncoderMode::Precomputed, None) => Err(Error::InvalidArgument(
            "precomputed encoder mode needs an embeddings file".into(),
        )),
    }
}

#[derive(Clone, Debug)]
pub struct IngestArgs {
    pub prices: PathBuf,
    pub headlines: PathBuf,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    /// Re-categorize every headline with this model instead of trusting the
    /// file's category field.
    pub categorizer: Option<PathBuf>,
    pub clock: Clock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub threshold: f64,
    pub searched: bool,
    pub distribution: ClassDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub threshold: ThresholdRecord,
    pub days_kept: usize,
    pub days_dropped: usize,
    pub dropped_fraction: f64,
    pub top_categories: Vec<Category>,
    pub examples: BTreeMap<String, usize>,
    pub drops: DropReport,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<(IngestSummary, RunManifest)> {
    let config = &args.config;
    config.validate()?;
    let prices = load_prices(&args.prices, &config.index_name)?;
    let raw = load_headlines(&args.headlines)?;
    if prices.len() < 2 {
        return Err(Error::Validation {
            path: args.prices.clone(),
            message: "at least two sessions are needed to compute a return".into(),
        });
    }

    let rules = FilterRules {
        min_chars: config.min_chars,
        max_tokens: config.max_tokens,
    };
    let (mut headlines, mut drops) = filter_headlines(raw, rules);
    if let Some(path) = &args.categorizer {
        let model = CategoryModel::load(path)?;
        for h in &mut headlines {
            let hv = hash_encode(&h.tokens, model.dims(), config.encoder.hash_seed)?;
            h.category = Some(model.predict(&hv)?);
        }
    }

    let returns = compute_returns(&prices, config.return_basis)?;
    let values: Vec<f64> = returns.iter().map(|(_, r)| *r).collect();
    let threshold = match config.threshold {
        Some(t) => ThresholdRecord {
            threshold: t,
            searched: false,
            distribution: ClassDistribution::from_returns(&values, t),
        },
        None => {
            let choice = threshold_search(&values, &config.search_grid)?;
            ThresholdRecord {
                threshold: choice.threshold,
                searched: true,
                distribution: choice.distribution,
            }
        }
    };

    let last_session = prices.sessions.last().expect("two sessions").date;
    let (days, day_drops) = assemble_days(&returns, last_session, &headlines, threshold.threshold);
    drops.merge(&day_drops);
    let by_id: HashMap<String, Headline> = headlines.iter().map(|h| (h.id.clone(), h.clone())).collect();
    let outcome = filter_days(days, &by_id, config.min_day_headlines)?;
    drops.add("days_below_minimum", outcome.dropped);
    if outcome.kept.is_empty() {
        return Err(Error::Validation {
            path: args.headlines.clone(),
            message: "no trading day has enough headlines".into(),
        });
    }

    let categories: HashMap<String, Category> = headlines
        .iter()
        .map(|h| (h.id.clone(), h.category_or_unclassified()))
        .collect();
    let mut examples = Vec::new();
    for day in &outcome.kept {
        examples.extend(stratified_subsample(
            day,
            &categories,
            config.cap,
            mix_seed(config.seed, 201),
        )?);
    }
    let split = split_dataset(examples, config.split, mix_seed(config.seed, 202))?;

    let kept_ids: HashSet<&str> = outcome
        .kept
        .iter()
        .flat_map(|d| d.headlines.iter().map(String::as_str))
        .collect();
    let kept_headlines: Vec<&Headline> = headlines.iter().filter(|h| kept_ids.contains(h.id.as_str())).collect();

    let mut rows = Vec::new();
    for (name, part) in [
        (SplitName::Train, &split.train),
        (SplitName::Val, &split.val),
        (SplitName::Test, &split.test),
    ] {
        rows.extend(part.iter().map(|e| SplitExample {
            split: name,
            example: e.clone(),
        }));
    }

    let mut out = OutputDir::create(&args.out_dir)?;
    out.record_input(&args.prices)?;
    out.record_input(&args.headlines)?;
    if let Some(path) = &args.categorizer {
        out.record_input(path)?;
    }
    out.write_json_lines(HEADLINES_FILE, &kept_headlines)?;
    out.write_json_lines(DAYS_FILE, &outcome.kept)?;
    out.write_json_lines(EXAMPLES_FILE, &rows)?;
    out.write_json("drop_report.json", &drops)?;
    out.write_json("threshold.json", &threshold)?;

    let summary = IngestSummary {
        threshold,
        days_kept: outcome.kept.len(),
        days_dropped: outcome.dropped,
        dropped_fraction: outcome.dropped_fraction,
        top_categories: outcome.top_categories.clone(),
        examples: BTreeMap::from([
            ("train".to_string(), split.train.len()),
            ("val".to_string(), split.val.len()),
            ("test".to_string(), split.test.len()),
        ]),
        drops,
    };
    out.write_json("summary.json", &summary)?;
    let manifest = out.finish("ingest", config.seed, config.snapshot()?, args.clock)?;
    Ok((summary, manifest))
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    pub embeddings: Option<PathBuf>,
    pub clock: Clock,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(TrainedModel, RunManifest)> {
    let config = &args.config;
    config.validate()?;
    let data = Dataset::load(&args.data_dir)?;
    let store = build_store(config, &data.headlines, args.embeddings.as_deref())?;
    let categories = data.categories();
    let (train_ex, val_ex) = (data.split(SplitName::Train), data.split(SplitName::Val));
    if train_ex.is_empty() || val_ex.is_empty() {
        return Err(Error::Validation {
            path: data.dir.join(EXAMPLES_FILE),
            message: format!(
                "{} train and {} val examples; both must be non-empty",
                train_ex.len(),
                val_ex.len()
            ),
        });
    }
    let set = |ex| ExampleSet {
        examples: ex,
        store: &store,
        categories: &categories,
        cap: config.cap,
    };
    let model = Model::init(config.model_config(), mix_seed(config.seed, 101))?;
    let run = train(model, &set(&train_ex), &set(&val_ex), &config.train_config())?;

    let mut out = OutputDir::create(&args.out_dir)?;
    data.record_inputs(&mut out)?;
    if let Some(path) = args.embeddings.as_deref().or(config.encoder.embeddings.as_deref()) {
        out.record_input(path)?;
    }
    out.write_json_lines("epoch_log.jsonl", &run.history)?;
    let model_config = config.model_config();
    for ckpt in &run.checkpoints {
        let epoch = ckpt.record.epoch;
        let snapshot = TrainedModel {
            model: Model::from_params(model_config.clone(), ckpt.params.clone())?,
            metadata: crate::pipeline::ModelMetadata {
                history: run.history[..epoch].to_vec(),
                encoder: Some(store.provenance().clone()),
                selection: None,
                ..run.selected.metadata.clone()
            },
        };
        out.write(
            &format!("checkpoints/epoch_{epoch:02}.ckpt"),
            &checkpoint_bytes(&snapshot)?,
        )?;
    }
    let mut selected = run.selected;
    selected.metadata.encoder = Some(store.provenance().clone());
    out.write(MODEL_FILE, &checkpoint_bytes(&selected)?)?;
    out.write_json("selection.json", &selected.metadata.selection)?;
    let manifest = out.finish("train", config.seed, config.snapshot()?, args.clock)?;
    Ok((selected, manifest))
}

fn checkpoint_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    model.write_to(&mut buf)?;
    Ok(buf)
}

/// Which examples' headlines to score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScope {
    Train,
    Val,
    #[default]
    Test,
    All,
}

#[derive(Clone, Debug)]
pub struct ScoreArgs {
    pub model: PathBuf,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub scope: ScoreScope,
    pub target: Category,
    pub ks: Vec<usize>,
    pub embeddings: Option<PathBuf>,
    pub clock: Clock,
}

/// Caps every `k` at `n` and drops the duplicates this creates.
pub fn clip_ks(ks: &[usize], n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &k in ks {
        let k = k.min(n);
        if k > 0 && !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ScoreConfig {
    scope: ScoreScope,
    target: Category,
    ks: Vec<usize>,
    model: crate::pipeline::ModelMetadata,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(Vec<RelevanceRecord>, SkewReport, RunManifest)> {
    let trained = TrainedModel::load(&args.model)?;
    let data = Dataset::load(&args.data_dir)?;
    let wanted: HashSet<&str> = data
        .examples
        .iter()
        .filter(|e| match args.scope {
            ScoreScope::All => true,
            ScoreScope::Train => e.split == SplitName::Train,
            ScoreScope::Val => e.split == SplitName::Val,
            ScoreScope::Test => e.split == SplitName::Test,
        })
        .flat_map(|e| e.example.headline_ids.iter().map(String::as_str))
        .collect();
    let headlines: Vec<Headline> = data
        .headlines
        .iter()
        .filter(|h| wanted.contains(h.id.as_str()))
        .cloned()
        .collect();
    if headlines.is_empty() {
        return Err(Error::Validation {
            path: data.dir.join(EXAMPLES_FILE),
            message: format!("no headlines in the {:?} split", args.scope),
        });
    }

    let dims = trained.model.config().headline_dim;
    let store = match (&trained.metadata.encoder, &args.embeddings) {
        (_, Some(path)) => load_embeddings_with_dim(path, dims)?,
        (Some(Provenance::Hashed { seed }), None) => EmbeddingStore::hashed(
            headlines.iter().map(|h| (h.id.as_str(), h.tokens.as_slice())),
            dims,
            *seed,
        )?,
        _ => {
            return Err(Error::InvalidArgument(
                "model was trained on precomputed embeddings; pass the embeddings file".into(),
            ))
        }
    };
    let ranked = global_rank(score_all(&trained.model, &headlines, &store)?);
    let ks = clip_ks(&args.ks, ranked.len());
    let report = skew_report(&ranked, args.target, &ks)?;

    let texts: HashMap<String, String> = headlines.iter().map(|h| (h.id.clone(), h.text.clone())).collect();
    let mut out = OutputDir::create(&args.out_dir)?;
    out.record_input(&args.model)?;
    data.record_inputs(&mut out)?;
    if let Some(path) = &args.embeddings {
        out.record_input(path)?;
    }
    let mut tsv = Vec::new();
    write_ranked(&ranked, &texts, &mut tsv)?;
    out.write(RANKED_FILE, &tsv)?;
    let mut table = Vec::new();
    report
        .write_table(&mut table)
        .map_err(|e| Error::io(args.out_dir.join("skew.tsv"), e))?;
    out.write("skew.tsv", &table)?;
    out.write_json("skew.json", &report)?;
    let snapshot = serde_json::to_value(ScoreConfig {
        scope: args.scope,
        target: args.target,
        ks: args.ks.clone(),
        model: trained.metadata.clone(),
    })?;
    let seed = trained.metadata.training.as_ref().map_or(0, |t| t.seed);
    let manifest = out.finish("score", seed, snapshot, args.clock)?;
    Ok((ranked, report, manifest))
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    pub embeddings: Option<PathBuf>,
    pub clock: Clock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Category name, or `all`.
    pub category: String,
    pub train_examples: usize,
    pub val_examples: usize,
    /// `None` when the category has no examples in one of the splits.
    pub max_val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Keeps only the headlines of `category`; examples left empty are dropped.
fn restrict(
    examples: &[DayExample],
    categories: &HashMap<String, Category>,
    category: Option<Category>,
) -> Vec<DayExample> {
    examples
        .iter()
        .filter_map(|e| {
            let ids: Vec<String> = e
                .headline_ids
                .iter()
                .filter(|id| category.is_none_or(|c| categories.get(*id) == Some(&c)))
                .cloned()
                .collect();
            (!ids.is_empty()).then(|| DayExample {
                headline_ids: ids,
                ..e.clone()
            })
        })
        .collect()
}

/// Trains one model per topical category (and one on everything) and
/// reports each one's best validation accuracy over the epoch budget.
pub fn cmd_eval(args: &EvalArgs) -> Result<(Vec<EvalRow>, RunManifest)> {
    let config = &args.config;
    config.validate()?;
    let data = Dataset::load(&args.data_dir)?;
    if data.headlines.iter().all(|h| h.category.is_none()) {
        return Err(Error::Validation {
            path: data.dir.join(HEADLINES_FILE),
            message: "headlines carry no category field".into(),
        });
    }
    let store = build_store(config, &data.headlines, args.embeddings.as_deref())?;
    let categories = data.categories();
    let (train_ex, val_ex) = (data.split(SplitName::Train), data.split(SplitName::Val));
    let train_config = TrainConfig {
        selection: SelectionRule::MaxAccuracy {
            max_epochs: config.training.epochs,
        },
        ..config.train_config()
    };

    let groups = Category::TOPICAL.iter().map(|c| Some(*c)).chain([None]);
    let mut rows = Vec::new();
    for group in groups {
        let name = group.map_or("all".to_string(), |c| c.to_string());
        let tr = restrict(&train_ex, &categories, group);
        let va = restrict(&val_ex, &categories, group);
        let mut row = EvalRow {
            category: name,
            train_examples: tr.len(),
            val_examples: va.len(),
            max_val_acc: None,
            best_epoch: None,
        };
        if !tr.is_empty() && !va.is_empty() {
            let set = |ex| ExampleSet {
                examples: ex,
                store: &store,
                categories: &categories,
                cap: config.cap,
            };
            let model = Model::init(config.model_config(), mix_seed(config.seed, 101))?;
            let run = train(model, &set(&tr), &set(&va), &train_config)?;
            let selection = run.selected.metadata.selection.expect("train records a selection");
            row.max_val_acc = Some(run.history[selection.epoch - 1].val_acc);
            row.best_epoch = Some(selection.epoch);
        } else {
            log::warn!("category {} has no train or validation examples", row.category);
        }
        rows.push(row);
    }

    let mut table = String::from("category\ttrain_examples\tval_examples\tmax_val_acc\n");
    for r in &rows {
        let acc = r
            .max_val_acc
            .map_or("absent".to_string(), |a| format!("{:.2}", 100.0 * a));
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.category, r.train_examples, r.val_examples, acc
        ));
    }
    let mut out = OutputDir::create(&args.out_dir)?;
    data.record_inputs(&mut out)?;
    out.write("eval.tsv", table.as_bytes())?;
    out.write_json("eval.json", &rows)?;
    let manifest = out.finish("eval", config.seed, config.snapshot()?, args.clock)?;
    Ok((rows, manifest))
}

#[derive(Clone, Debug)]
pub struct CategorizerArgs {
    /// `class<TAB>text` lines.
    pub labeled: PathBuf,
    pub out_dir: PathBuf,
    pub config: CategorizerConfig,
    pub dims: usize,
    pub hash_seed: u64,
    pub max_tokens: usize,
    pub clock: Clock,
}

/// Trains the topic classifier on feature-hashed headline text.
pub fn cmd_train_categorizer(args: &CategorizerArgs) -> Result<(CategorizerReport, RunManifest)> {
    let rows = crate::categorizer::load_labeled(&args.labeled)?;
    let mut labeled = Vec::with_capacity(rows.len());
    for (class, text) in &rows {
        let mut tokens = tokenize(text);
        tokens.truncate(args.max_tokens);
        if tokens.is_empty() {
            continue;
        }
        labeled.push((hash_encode(&tokens, args.dims, args.hash_seed)?, *class));
    }
    let (model, report) = train_categorizer(&labeled, &args.config)?;
    let mut out = OutputDir::create(&args.out_dir)?;
    out.record_input(&args.labeled)?;
    let mut buf = Vec::new();
    model.write_to(&mut buf)?;
    out.write("categorizer.ckpt", &buf)?;
    out.write_json("categorizer_report.json", &report)?;
    let snapshot = serde_json::json!({
        "categorizer": args.config,
        "dims": args.dims,
        "hash_seed": args.hash_seed,
        "max_tokens": args.max_tokens,
    });
    let manifest = out.finish("train-categorizer", args.config.seed, snapshot, args.clock)?;
    Ok((report, manifest))
}

/// Reads a ranking written by `score` back into records and texts.
pub fn read_ranked(path: &Path) -> Result<(Vec<RelevanceRecord>, HashMap<String, String>)> {
    #[derive(Deserialize)]
    struct Row {
        rank: usize,
        score: f64,
        day: chrono::NaiveDate,
        category: Category,
        headline_id: String,
        text: String,
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut records = Vec::new();
    let mut texts = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        texts.insert(row.headline_id.clone(), row.text);
        records.push(RelevanceRecord {
            headline_id: row.headline_id,
            score: row.score,
            category: row.category,
            day: row.day,
            rank: row.rank,
        });
    }
    records.sort_by_key(|r| r.rank);
    Ok((records, texts))
}

#[derive(Clone, Debug)]
pub struct AnnotationArgs {
    pub ranked: PathBuf,
    pub out_dir: PathBuf,
    pub top_n: usize,
    pub uniform_n: usize,
    pub seed: u64,
    pub clock: Clock,
}

pub fn cmd_export_annotation(args: &AnnotationArgs) -> Result<RunManifest> {
    let (ranked, texts) = read_ranked(&args.ranked)?;
    let sample = export_annotation_sample(&ranked, args.top_n, args.uniform_n, args.seed)?;
    let mut out = OutputDir::create(&args.out_dir)?;
    out.record_input(&args.ranked)?;
    let mut items = Vec::new();
    sample.write_items(&texts, &mut items)?;
    out.write("annotation_items.tsv", &items)?;
    let mut key = Vec::new();
    sample.write_key(&mut key)?;
    out.write("annotation_key.tsv", &key)?;
    let snapshot = serde_json::json!({ "top_n": args.top_n, "uniform_n": args.uniform_n });
    out.finish("export-annotation", args.seed, snapshot, args.clock)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_are_clipped_and_deduplicated() {
        assert_eq!(clip_ks(&DEFAULT_KS, 500), vec![10, 100, 500]);
        assert_eq!(clip_ks(&DEFAULT_KS, 10_000), vec![10, 100, 1000, 2500]);
        assert_eq!(clip_ks(&DEFAULT_KS, 5), vec![5]);
    }

    #[test]
    fn config_parses_partial_toml() {
        let text = r#"
seed = 9
index_name = "SPX"
search_grid = [0.2, 0.3]

[training]
epochs = 3
select = "min-loss"
"#;
        let c = RunConfig::from_toml(text, Path::new("run.toml")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.batch_size, 15);
        assert_eq!(c.selection_rule(), SelectionRule::MinLoss { patience: 2 });
        assert_eq!(c.cap, 115);

        let err = RunConfig::from_toml("sed = 1\n", Path::new("run.toml")).unwrap_err();
        assert!(err.to_string().contains("run.toml"), "{err}");
    }

    #[test]
    fn restrict_drops_empty_examples() {
        let ex = DayExample {
            day: chrono::NaiveDate::from_ymd_opt(2008, 10, 3).unwrap(),
            headline_ids: vec!["a".into(), "b".into()],
            label: crate::ingest::MovementLabel::Up,
            subset_index: 0,
        };
        let cats = HashMap::from([
            ("a".to_string(), Category::Business),
            ("b".to_string(), Category::World),
        ]);
        let r = restrict(std::slice::from_ref(&ex), &cats, Some(Category::Business));
        assert_eq!(r[0].headline_ids, vec!["a"]);
        assert!(restrict(std::slice::from_ref(&ex), &cats, Some(Category::Health)).is_empty());
        assert_eq!(restrict(&[ex], &cats, None)[0].headline_ids.len(), 2);
    }
}
