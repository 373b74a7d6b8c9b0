//! Linear softmax topic classifier over headline vectors.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::nn::{he_init, softmax, AdamWConfig, Graph, OptimizerState, ParamStore, Schedule, Tensor};
use crate::seed::mix_seed;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategorizerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub holdout_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for CategorizerConfig {
    fn default() -> Self {
        CategorizerConfig {
            epochs: 20,
            batch_size: 32,
            dropout: 0.25,
            holdout_fraction: 0.2,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            optimizer: AdamWConfig {
                learning_rate: 1e-2,
                ..AdamWConfig::default()
            },
        }
    }
}

/// Held-out quality of a trained categorizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorizerReport {
    pub train_size: usize,
    pub holdout_size: usize,
    pub macro_f1: f64,
    /// F1 per class that occurs in the held-out labels or predictions.
    pub per_class_f1: Vec<(Category, f64)>,
}

/// Softmax over the seven topical classes. A headline gets the argmax class
/// when that class has probability at least `threshold`, otherwise
/// [`Category::Unclassified`].
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryModel {
    weight: Tensor,
    bias: Tensor,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    threshold: f64,
    classes: Vec<Category>,
}

impl CategoryModel {
    pub fn new(weight: Tensor, bias: Tensor, threshold: f64) -> Result<Self> {
        let k = Category::TOPICAL.len();
        if weight.shape().len() != 2 || weight.cols() != k || bias.shape() != [k] {
            return Err(Error::Shape(format!(
                "categorizer weight {:?} / bias {:?}, expected [d, {k}] / [{k}]",
                weight.shape(),
                bias.shape()
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(CategoryModel {
            weight,
            bias,
            threshold,
        })
    }

    pub fn dims(&self) -> usize {
        self.weight.rows()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Class probabilities in [`Category::TOPICAL`] order.
    pub fn probabilities(&self, hv: &[f64]) -> Result<Vec<f64>> {
        if hv.len() != self.dims() {
            return Err(Error::Shape(format!(
                "vector of {} dims, categorizer expects {}",
                hv.len(),
                self.dims()
            )));
        }
        let x = Tensor::matrix(1, hv.len(), hv.to_vec())?;
        let logits = crate::nn::dense(&x, &self.weight, &self.bias)?;
        Ok(softmax(&logits, 1)?.into_data())
    }

    pub fn predict(&self, hv: &[f64]) -> Result<Category> {
        Ok(decide(&self.probabilities(hv)?, self.threshold))
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut store = ParamStore::new();
        store.add("weight", self.weight.clone())?;
        store.add("bias", self.bias.clone())?;
        let meta = serde_json::to_string(&Meta {
            threshold: self.threshold,
            classes: Category::TOPICAL.to_vec(),
        })?;
        store
            .write_to(out, &meta)
            .map_err(|e| Error::io(Path::new("<categorizer>"), e))
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let (store, meta) = ParamStore::read_from(input)?;
        let meta: Meta = serde_json::from_str(&meta)?;
        if meta.classes != Category::TOPICAL {
            return Err(Error::InvalidArgument("categorizer class order does not match".into()));
        }
        let get = |name: &str| {
            store
                .by_name(name)
                .map(|p| p.value.clone())
                .ok_or_else(|| Error::InvalidArgument(format!("categorizer checkpoint lacks {name}")))
        };
        CategoryModel::new(get("weight")?, get("bias")?, meta.threshold)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        CategoryModel::read_from(std::io::BufReader::new(file))
    }
}

/// Applies the confidence threshold to topical-class probabilities.
/// The boundary is inclusive: a top probability equal to `threshold` still
/// picks the class.
pub fn decide(probs: &[f64], threshold: f64) -> Category {
    let best = crate::pipeline::argmax(probs);
    if probs.get(best).is_some_and(|&p| p >= threshold) {
        Category::TOPICAL[best]
    } else {
        Category::Unclassified
    }
}

pub fn predict_category(model: &CategoryModel, hv: &[f64]) -> Result<Category> {
    model.predict(hv)
}

/// Trains on a shuffled 80% of `labeled` and reports macro F1 (argmax
/// decisions) on the remaining 20%.
pub fn train_categorizer(
    labeled: &[(Vec<f64>, Category)],
    config: &CategorizerConfig,
) -> Result<(CategoryModel, CategorizerReport)> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("categorizer training set is empty".into()));
    }
    if let Some((_, c)) = labeled.iter().find(|(_, c)| *c == Category::Unclassified) {
        return Err(Error::InvalidArgument(format!("{c} is not a trainable class")));
    }
    let first = labeled[0].1;
    if labeled.iter().all(|(_, c)| *c == first) {
        return Err(Error::InvalidArgument(format!(
            "only one class ({first}) in training data"
        )));
    }
    let dims = labeled[0].0.len();
    if dims == 0 || labeled.iter().any(|(v, _)| v.len() != dims) {
        return Err(Error::Shape(
            "categorizer inputs must share a positive dimension".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument("invalid categorizer configuration".into()));
    }

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1)));
    let holdout_n = (labeled.len() as f64 * config.holdout_fraction).round() as usize;
    let holdout_n = holdout_n.min(labeled.len() - 1);
    let (holdout, train_idx) = order.split_at(holdout_n);

    let k = Category::TOPICAL.len();
    let mut params = ParamStore::new();
    let w_id = params.add("weight", he_init(&[dims, k], dims, mix_seed(config.seed, 2))?)?;
    let b_id = params.add("bias", Tensor::zeros(&[k]))?;
    let steps = train_idx.len().div_ceil(config.batch_size) * config.epochs;
    let mut opt = OptimizerState::new(
        config.optimizer.clone(),
        Schedule::with_warmup_fraction(steps, 0.1),
        &params,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 3));
    let mut shuffled = train_idx.to_vec();
    for _ in 0..config.epochs {
        shuffled.shuffle(&mut rng);
        for chunk in shuffled.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * dims);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend_from_slice(&labeled[i].0);
                labels.push(labeled[i].1.index());
            }
            let grads = {
                let mut g = Graph::new(&params);
                let x = g.input(Tensor::matrix(chunk.len(), dims, data)?);
                let x = g.dropout(x, config.dropout, Some(&mut rng))?;
                let w = g.param(w_id);
                let b = g.param(b_id);
                let logits = g.dense(x, w, b)?;
                let probs = g.softmax_rows(logits)?;
                let loss = g.cross_entropy_rows(probs, &labels)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("categorizer loss {value}")));
                }
                g.backward(loss)?
            };
            params.zero_grads();
            params.accumulate(&grads, 1.0)?;
            opt.step(&mut params)?;
        }
    }

    let model = CategoryModel::new(
        params.get(w_id).value.clone(),
        params.get(b_id).value.clone(),
        config.threshold,
    )?;
    let mut truth = Vec::with_capacity(holdout.len());
    let mut predicted = Vec::with_capacity(holdout.len());
    for &i in holdout {
        truth.push(labeled[i].1);
        predicted.push(Category::TOPICAL[crate::pipeline::argmax(&model.probabilities(&labeled[i].0)?)]);
    }
    let per_class_f1 = per_class_f1(&truth, &predicted);
    let macro_f1 = if per_class_f1.is_empty() {
        0.0
    } else {
        per_class_f1.iter().map(|(_, f)| f).sum::<f64>() / per_class_f1.len() as f64
    };
    let report = CategorizerReport {
        train_size: train_idx.len(),
        holdout_size: holdout.len(),
        macro_f1,
        per_class_f1,
    };
    Ok((model, report))
}

/// F1 of every class that appears in `truth` or `predicted`.
pub fn per_class_f1(truth: &[Category], predicted: &[Category]) -> Vec<(Category, f64)> {
    let mut out = Vec::new();
    for c in Category::ALL {
        let tp = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| **t == c && **p == c)
            .count();
        let fp = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| **t != c && **p == c)
            .count();
        let fn_ = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| **t == c && **p != c)
            .count();
        if tp + fp + fn_ == 0 {
            continue;
        }
        out.push((c, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64));
    }
    out
}

/// Reads `class<TAB>headline text` lines. Blank lines are skipped.
pub fn load_labeled(path: &Path) -> Result<Vec<(Category, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (class, headline) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected class<TAB>text"))?;
        let class: Category = class
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?;
        out.push((class, headline.trim().to_string()));
    }
    Ok(out)
}
