use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::encoder::{CategoryTable, EmbeddingStore, CATEGORY_DIM, HEADLINE_DIM};
use crate::error::{Error, Result};
use crate::ingest::{DayExample, MovementLabel, HEADLINE_CAP};
use crate::nn::{he_init, Gradients, Graph, NodeId, ParamId, ParamStore, Tensor, LAYER_NORM_EPS};
use crate::seed::mix_seed;

/// Layer sizes and regularization of the relevance network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub headline_dim: usize,
    pub category_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            headline_dim: HEADLINE_DIM,
            category_dim: CATEGORY_DIM,
            hidden_dim: 100,
            classes: 3,
            dropout: 0.25,
            layer_norm_eps: LAYER_NORM_EPS,
            cap: HEADLINE_CAP,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.headline_dim + self.category_dim
    }
}

/// Headlines of one day example, zero-padded to `cap` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DayBatch {
    pub headlines: Tensor,
    pub categories: Vec<Category>,
    /// `true` for real headlines, `false` for padding.
    pub mask: Vec<bool>,
    pub label: Option<MovementLabel>,
}

impl DayBatch {
    pub fn new(rows: &[&[f64]], categories: &[Category], cap: usize, label: Option<MovementLabel>) -> Result<Self> {
        if rows.len() != categories.len() {
            return Err(Error::Shape(format!(
                "{} headline rows with {} categories",
                rows.len(),
                categories.len()
            )));
        }
        if rows.is_empty() || rows.len() > cap {
            return Err(Error::InvalidArgument(format!(
                "day batch needs 1..={cap} headlines, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].len();
        let mut data = vec![0.0; cap * dim];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape("ragged headline rows".into()));
            }
            data[i * dim..(i + 1) * dim].copy_from_slice(r);
        }
        let mut cats = categories.to_vec();
        cats.resize(cap, Category::Unclassified);
        let mut mask = vec![true; rows.len()];
        mask.resize(cap, false);
        Ok(DayBatch {
            headlines: Tensor::matrix(cap, dim, data)?,
            categories: cats,
            mask,
            label,
        })
    }

    pub fn from_example(
        example: &DayExample,
        store: &EmbeddingStore,
        categories: &dyn Fn(&str) -> Category,
        cap: usize,
    ) -> Result<Self> {
        let rows = example
            .headline_ids
            .iter()
            .map(|id| store.get(id))
            .collect::<Result<Vec<_>>>()?;
        let cats: Vec<Category> = example.headline_ids.iter().map(|id| categories(id)).collect();
        DayBatch::new(&rows, &cats, cap, Some(example.label))
    }

    pub fn cap(&self) -> usize {
        self.mask.len()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Result of running the network on one day with dropout disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct DayOutput {
    /// DOWN / STAY / UP probabilities.
    pub probs: Vec<f64>,
    /// Unnormalized attention score per position; `-inf` at padding.
    pub logits: Vec<f64>,
    /// Attention weights; exactly 0 at padding.
    pub alphas: Vec<f64>,
    pub day_vector: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Ids {
    category: ParamId,
    input_gain: ParamId,
    input_bias: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    att_w: ParamId,
    att_b: ParamId,
    att_u: ParamId,
    day_gain: ParamId,
    day_bias: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

struct DayNodes {
    probs: NodeId,
    wide_logits: NodeId,
    alphas: NodeId,
    day_vector: NodeId,
}

/// The headline-set classifier whose attention scores double as relevance
/// scores:
///
/// ```text
/// h_i   = headline_i ⊕ embed(category_i)
/// hp_i  = dropout(elu(W_p · norm(h_i) + b_p))
/// s_i   = tanh(W_a · hp_i + b_a) · u        (relevance logit)
/// α     = softmax(s) over real headlines
/// probs = softmax(W_o · norm(Σ α_i hp_i) + b_o)
/// ```
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

const PARAM_NAMES: [&str; 12] = [
    "category_embedding",
    "input_norm.gain",
    "input_norm.bias",
    "projection.weight",
    "projection.bias",
    "attention.weight",
    "attention.bias",
    "attention.context",
    "day_norm.gain",
    "day_norm.bias",
    "output.weight",
    "output.bias",
];

impl Model {
    /// He-initialized weights, zero biases, unit norm gains and a
    /// `N(0, 1/√dim)` category table, all derived from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.hidden_dim == 0 || config.headline_dim == 0 || config.classes == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {}", config.dropout)));
        }
        let (d_in, d_h, k) = (config.input_dim(), config.hidden_dim, config.classes);
        let s = |tag| mix_seed(seed, tag);
        let tensors = [
            CategoryTable::init(config.category_dim, s(1))?.into_tensor(),
            Tensor::filled(&[d_in], 1.0),
            Tensor::zeros(&[d_in]),
            he_init(&[d_in, d_h], d_in, s(2))?,
            Tensor::zeros(&[d_h]),
            he_init(&[d_h, d_h], d_h, s(3))?,
            Tensor::zeros(&[d_h]),
            he_init(&[d_h, 1], d_h, s(4))?,
            Tensor::filled(&[d_h], 1.0),
            Tensor::zeros(&[d_h]),
            he_init(&[d_h, k], d_h, s(5))?,
            Tensor::zeros(&[k]),
        ];
        let mut params = ParamStore::new();
        for (name, t) in PARAM_NAMES.iter().zip(tensors) {
            params.add(name, t)?;
        }
        Model::from_params(config, params)
    }

    /// Rebuilds a model around an existing parameter store, checking that
    /// every expected parameter is present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let (d_in, d_h, k) = (config.input_dim(), config.hidden_dim, config.classes);
        let expected: [Vec<usize>; 12] = [
            vec![Category::ALL.len(), config.category_dim],
            vec![d_in],
            vec![d_in],
            vec![d_in, d_h],
            vec![d_h],
            vec![d_h, d_h],
            vec![d_h],
            vec![d_h, 1],
            vec![d_h],
            vec![d_h],
            vec![d_h, k],
            vec![k],
        ];
        let mut found = Vec::with_capacity(12);
        for (name, shape) in PARAM_NAMES.iter().zip(expected) {
            let id = params
                .id(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
            if params.get(id).value.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    params.get(id).value.shape()
                )));
            }
            found.push(id);
        }
        let ids = Ids {
            category: found[0],
            input_gain: found[1],
            input_bias: found[2],
            proj_w: found[3],
            proj_b: found[4],
            att_w: found[5],
            att_b: found[6],
            att_u: found[7],
            day_gain: found[8],
            day_bias: found[9],
            out_w: found[10],
            out_b: found[11],
        };
        Ok(Model { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn check_rows(&self, rows: &Tensor) -> Result<()> {
        if rows.cols() != self.config.headline_dim {
            return Err(Error::Shape(format!(
                "headline vectors of width {}, model expects {}",
                rows.cols(),
                self.config.headline_dim
            )));
        }
        Ok(())
    }

    /// `norm → dense → elu → dropout` on concatenated headline/category rows.
    fn project_node(&self, g: &mut Graph, h: NodeId, rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let gain = g.param(self.ids.input_gain);
        let bias = g.param(self.ids.input_bias);
        let normed = g.layer_norm(h, gain, bias, self.config.layer_norm_eps)?;
        let w = g.param(self.ids.proj_w);
        let b = g.param(self.ids.proj_b);
        let z = g.dense(normed, w, b)?;
        let a = g.elu(z)?;
        g.dropout(a, self.config.dropout, rng)
    }

    fn encode_rows(
        &self,
        g: &mut Graph,
        rows: Tensor,
        categories: &[Category],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let x = g.input(rows);
        let table = g.param(self.ids.category);
        let idx: Vec<usize> = categories.iter().map(|c| c.index()).collect();
        let hc = g.gather_rows(table, &idx)?;
        let h = g.concat_cols(x, hc)?;
        self.project_node(g, h, rng)
    }

    /// `tanh(W_a · hp + b_a) · u` for each row of `hp`; shape `r × 1`.
    fn attention_logits(&self, g: &mut Graph, hp: NodeId) -> Result<NodeId> {
        let w = g.param(self.ids.att_w);
        let b = g.param(self.ids.att_b);
        let u = g.param(self.ids.att_u);
        let pre = g.dense(hp, w, b)?;
        let t = g.tanh(pre);
        g.matmul(t, u)
    }

    /// Masked attention pooling of projected rows `hp` (one row per real
    /// position in `positions`) into a `1 × hidden` day vector.
    fn attend(&self, g: &mut Graph, hp: NodeId, positions: &[usize], cap: usize) -> Result<(NodeId, NodeId, NodeId)> {
        let logits = self.attention_logits(g, hp)?;
        let row = g.reshape(logits, &[1, positions.len()])?;
        let wide = g.scatter_cols_masked(row, positions, cap)?;
        let alphas = g.softmax_rows(wide)?;
        let real = g.gather_cols(alphas, positions)?;
        let day = g.matmul(real, hp)?;
        Ok((day, wide, alphas))
    }

    fn build_day(&self, g: &mut Graph, batch: &DayBatch, rng: Option<&mut ChaCha8Rng>) -> Result<DayNodes> {
        self.check_rows(&batch.headlines)?;
        if batch.categories.len() != batch.cap() || batch.headlines.rows() != batch.cap() {
            return Err(Error::Shape("day batch fields disagree on length".into()));
        }
        let positions = batch.positions();
        if positions.is_empty() {
            return Err(Error::InvalidArgument("day batch has no unmasked headline".into()));
        }
        let dim = batch.headlines.cols();
        let mut data = Vec::with_capacity(positions.len() * dim);
        for &p in &positions {
            data.extend_from_slice(batch.headlines.row(p));
        }
        let rows = Tensor::matrix(positions.len(), dim, data)?;
        let cats: Vec<Category> = positions.iter().map(|&p| batch.categories[p]).collect();

        let hp = self.encode_rows(g, rows, &cats, rng)?;
        let (day, wide, alphas) = self.attend(g, hp, &positions, batch.cap())?;
        let gain = g.param(self.ids.day_gain);
        let bias = g.param(self.ids.day_bias);
        let normed = g.layer_norm(day, gain, bias, self.config.layer_norm_eps)?;
        let w = g.param(self.ids.out_w);
        let b = g.param(self.ids.out_b);
        let out = g.dense(normed, w, b)?;
        let probs = g.softmax_rows(out)?;
        Ok(DayNodes {
            probs,
            wide_logits: wide,
            alphas,
            day_vector: day,
        })
    }

    /// Inference pass over one day.
    pub fn forward_day(&self, batch: &DayBatch) -> Result<DayOutput> {
        let mut g = Graph::new(&self.params);
        let nodes = self.build_day(&mut g, batch, None)?;
        Ok(DayOutput {
            probs: g.value(nodes.probs).data().to_vec(),
            logits: g.value(nodes.wide_logits).data().to_vec(),
            alphas: g.value(nodes.alphas).data().to_vec(),
            day_vector: g.value(nodes.day_vector).data().to_vec(),
        })
    }

    /// Cross-entropy of the batch label and its parameter gradients.
    /// `dropout_seed` enables dropout with that seed; `None` disables it.
    pub fn loss_and_gradients(&self, batch: &DayBatch, dropout_seed: Option<u64>) -> Result<(f64, Gradients)> {
        let label = batch
            .label
            .ok_or_else(|| Error::InvalidArgument("training batch without a label".into()))?;
        let mut g = Graph::new(&self.params);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let nodes = self.build_day(&mut g, batch, rng.as_mut())?;
        let loss = g.cross_entropy_rows(nodes.probs, &[label.index()])?;
        let value = g.value(loss).data()[0];
        Ok((value, g.backward(loss)?))
    }

    /// Loss without gradients (dropout off).
    pub fn loss(&self, batch: &DayBatch) -> Result<f64> {
        let label = batch
            .label
            .ok_or_else(|| Error::InvalidArgument("batch without a label".into()))?;
        let out = self.forward_day(batch)?;
        crate::nn::cross_entropy(&Tensor::vector(out.probs), label.index())
    }

    /// Relevance logits of individual headlines (dropout off). Each row is
    /// computed independently, so a headline's score does not depend on
    /// which other headlines are passed alongside it.
    pub fn headline_logits(&self, rows: &Tensor, categories: &[Category]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        if rows.rows() != categories.len() {
            return Err(Error::Shape("one category per headline row required".into()));
        }
        let mut g = Graph::new(&self.params);
        let hp = self.encode_rows(&mut g, rows.clone(), categories, None)?;
        let logits = self.attention_logits(&mut g, hp)?;
        Ok(g.value(logits).data().to_vec())
    }

    /// Projection of already-concatenated `headline ⊕ category` rows.
    /// `dropout_seed` enables dropout.
    pub fn project(&self, h: &Tensor, dropout_seed: Option<u64>) -> Result<Tensor> {
        if h.cols() != self.config.input_dim() {
            return Err(Error::Shape(format!(
                "projection input width {}, expected {}",
                h.cols(),
                self.config.input_dim()
            )));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(h.clone());
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let out = self.project_node(&mut g, x, rng.as_mut())?;
        Ok(g.value(out).clone())
    }

    /// Attention over already-projected rows (`cap × hidden`): returns the
    /// pooled day vector, the weights and the `-inf`-masked logits.
    pub fn attention_forward(&self, projected: &Tensor, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if projected.rows() != mask.len() || projected.cols() != self.config.hidden_dim {
            return Err(Error::Shape("projected rows disagree with mask or hidden width".into()));
        }
        let positions: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        if positions.is_empty() {
            return Err(Error::InvalidArgument("all positions masked".into()));
        }
        let d = projected.cols();
        let mut data = Vec::with_capacity(positions.len() * d);
        for &p in &positions {
            data.extend_from_slice(projected.row(p));
        }
        let mut g = Graph::new(&self.params);
        let hp = g.input(Tensor::matrix(positions.len(), d, data)?);
        let (day, wide, alphas) = self.attend(&mut g, hp, &positions, mask.len())?;
        Ok((
            g.value(day).data().to_vec(),
            g.value(alphas).data().to_vec(),
            g.value(wide).data().to_vec(),
        ))
    }
}

/// Index of the largest probability (first on ties).
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
