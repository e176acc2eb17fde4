//! Bernoulli exponential-family embeddings over baskets.
//!
//! Every product has an embedding `rho` and a context vector `alpha`. For a
//! basket and a target item `i`, the context is the pooled `alpha` of the
//! other items, and the presence of `i` is modelled as a Bernoulli draw with
//! natural parameter `rho_i . ctx`. Absent items are approximated with
//! negative samples drawn from the unigram^0.75 distribution. The per-pair
//! objective is
//!
//! ```text
//! log s(rho_i . ctx) + sum_k log(1 - s(rho_k . ctx)) - lambda (|rho_i|^2 + sum_k |rho_k|^2)
//! ```
//!
//! maximised with Adagrad-scaled stochastic gradient ascent.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Trip};
use crate::linalg::{axpy, dot, Matrix};
use crate::seed;
use crate::store::EmbeddingTable;
use crate::{Error, Result};

const ADAGRAD_EPS: f64 = 1e-8;
const MAX_NEGATIVE_TRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Sum,
}

impl Pooling {
    /// Weight of each context item's `alpha` in the pooled context.
    pub fn weight(self, n_context: usize) -> f64 {
        match self {
            Pooling::Mean => 1.0 / n_context as f64,
            Pooling::Sum => 1.0,
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            _ => Err(Error::config("pooling", format!("expected mean or sum, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub n_negative: usize,
    /// Adagrad base learning rate.
    pub learning_rate: f64,
    pub l2_lambda: f64,
    /// Half-width of the uniform initialisation; `None` means `0.1 / sqrt(dim)`.
    pub init_scale: Option<f64>,
    pub seed: u64,
    pub pooling: Pooling,
    /// Products seen in fewer retained trips are left out of the vocabulary.
    pub min_count: usize,
    /// 1 runs the deterministic single-threaded trainer; more threads apply
    /// unsynchronised (Hogwild) updates and are not reproducible.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            epochs: 20,
            n_negative: 10,
            learning_rate: 0.05,
            l2_lambda: 1e-5,
            init_scale: None,
            seed: 0,
            pooling: Pooling::Mean,
            min_count: 5,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        if self.n_negative < 1 {
            return Err(Error::config("n_negative", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::config("l2_lambda", "must be non-negative"));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("init_scale", "must be positive"));
            }
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
            .unwrap_or_else(|| 0.1 / (self.dim as f64).sqrt())
    }
}

/// Product embeddings `rho` and context vectors `alpha` sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    pub rho: Matrix,
    pub alpha: Matrix,
}

impl EmbeddingPair {
    pub fn new(ids: Vec<u64>, rho: Matrix, alpha: Matrix) -> Result<Self> {
        if rho.rows() != ids.len() || rho.rows() != alpha.rows() || rho.cols() != alpha.cols() {
            return Err(Error::InvalidArgument(
                "rho and alpha must have identical shape with one row per id".into(),
            ));
        }
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        if index.len() != ids.len() {
            return Err(Error::InvalidArgument("duplicate id in vocabulary".into()));
        }
        Ok(EmbeddingPair {
            ids,
            index,
            rho,
            alpha,
        })
    }

    pub fn from_tables(rho: &EmbeddingTable, alpha: &EmbeddingTable) -> Result<Self> {
        if rho.ids() != alpha.ids() {
            return Err(Error::InvalidArgument(
                "rho and alpha tables have different ids".into(),
            ));
        }
        Self::new(rho.ids().to_vec(), rho.matrix().clone(), alpha.matrix().clone())
    }

    pub fn load(rho_path: &Path, alpha_path: &Path) -> Result<Self> {
        Self::from_tables(
            &EmbeddingTable::load(rho_path)?,
            &EmbeddingTable::load(alpha_path)?,
        )
    }

    pub fn save(&self, rho_path: &Path, alpha_path: &Path) -> Result<()> {
        self.rho_table().save(rho_path)?;
        self.alpha_table().save(alpha_path)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rho.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn rho_of(&self, id: u64) -> Option<&[f64]> {
        self.row_of(id).map(|r| self.rho.row(r))
    }

    pub fn alpha_of(&self, id: u64) -> Option<&[f64]> {
        self.row_of(id).map(|r| self.alpha.row(r))
    }

    pub fn rho_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.ids.clone(), self.rho.clone()).expect("ids validated")
    }

    pub fn alpha_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.ids.clone(), self.alpha.clone()).expect("ids validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-pair objective, evaluated before each pair's update.
    pub mean_objective: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_time_secs: f64,
    pub rho_norm: f64,
    pub alpha_norm: f64,
    pub vocab_size: usize,
    pub n_trips: usize,
    pub dim: usize,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log s(x)` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

/// Pooled `alpha` over the trip's items other than `target`.
pub fn context_vector(trip: &Trip, target: u64, pair: &EmbeddingPair, pooling: Pooling) -> Result<Vec<f64>> {
    if !trip.items.contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "product {target} is not in trip {}",
            trip.trip_id
        )));
    }
    if trip.items.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "trip {} has no context for product {target}",
            trip.trip_id
        )));
    }
    let w = pooling.weight(trip.items.len() - 1);
    let mut ctx = vec![0.0; pair.dim()];
    for &j in trip.items.iter().filter(|&&j| j != target) {
        let a = pair
            .alpha_of(j)
            .ok_or_else(|| Error::InvalidArgument(format!("product {j} has no embedding")))?;
        axpy(w, a, &mut ctx);
    }
    Ok(ctx)
}

/// Per-pair objective for a target embedding, a pooled context and negatives.
pub fn pair_objective(rho_i: &[f64], ctx: &[f64], negatives: &[&[f64]], lambda: f64) -> f64 {
    let mut obj = log_sigmoid(dot(rho_i, ctx)) - lambda * dot(rho_i, rho_i);
    for rho_k in negatives {
        obj += log_sigmoid(-dot(rho_k, ctx)) - lambda * dot(rho_k, rho_k);
    }
    obj
}

/// Gradients of [`pair_objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub objective: f64,
    pub rho_target: Vec<f64>,
    pub rho_negatives: Vec<Vec<f64>>,
    /// Gradient with respect to the pooled context. Each context item's
    /// `alpha` receives this times its pooling weight.
    pub context: Vec<f64>,
}

/// Writes gradients into the provided buffers and returns the objective.
/// `negatives` is a flat `n_neg x d` slice; `neg_grads` has the same shape.
fn accumulate_gradients(
    rho_t: &[f64],
    ctx: &[f64],
    negatives: &[f64],
    lambda: f64,
    grad_t: &mut [f64],
    neg_grads: &mut [f64],
    ctx_grad: &mut [f64],
) -> f64 {
    let d = ctx.len();
    let s = dot(rho_t, ctx);
    let g_pos = 1.0 - sigmoid(s);
    let mut obj = log_sigmoid(s) - lambda * dot(rho_t, rho_t);
    for c in 0..d {
        grad_t[c] = g_pos * ctx[c] - 2.0 * lambda * rho_t[c];
        ctx_grad[c] = g_pos * rho_t[c];
    }
    for (rho_k, g_k) in negatives.chunks_exact(d).zip(neg_grads.chunks_exact_mut(d)) {
        let sk = dot(rho_k, ctx);
        let sig = sigmoid(sk);
        obj += log_sigmoid(-sk) - lambda * dot(rho_k, rho_k);
        for c in 0..d {
            g_k[c] = -sig * ctx[c] - 2.0 * lambda * rho_k[c];
            ctx_grad[c] -= sig * rho_k[c];
        }
    }
    obj
}

pub fn pair_gradient(rho_i: &[f64], ctx: &[f64], negatives: &[&[f64]], lambda: f64) -> PairGradient {
    let d = ctx.len();
    let flat: Vec<f64> = negatives.iter().flat_map(|n| n.iter().copied()).collect();
    let mut rho_target = vec![0.0; d];
    let mut neg = vec![0.0; flat.len()];
    let mut context = vec![0.0; d];
    let objective = accumulate_gradients(rho_i, ctx, &flat, lambda, &mut rho_target, &mut neg, &mut context);
    PairGradient {
        objective,
        rho_target,
        rho_negatives: neg.chunks_exact(d.max(1)).map(<[f64]>::to_vec).collect(),
        context,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Rho,
    Alpha,
}

/// Parameter storage the update step reads from and writes to.
pub trait ParamStore {
    fn dim(&self) -> usize;
    fn read(&self, which: Param, row: usize, out: &mut [f64]);
    /// Adagrad ascent step on one row.
    fn ascend(&mut self, which: Param, row: usize, grad: &[f64], lr: f64);
}

/// Embeddings plus Adagrad accumulators.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub pair: EmbeddingPair,
    rho_acc: Matrix,
    alpha_acc: Matrix,
}

impl TrainState {
    pub fn new(pair: EmbeddingPair) -> Self {
        let (v, d) = (pair.len(), pair.dim());
        TrainState {
            pair,
            rho_acc: Matrix::zeros(v, d),
            alpha_acc: Matrix::zeros(v, d),
        }
    }
}

#[inline]
fn adagrad(x: &mut [f64], acc: &mut [f64], grad: &[f64], lr: f64) {
    for ((x, a), g) in x.iter_mut().zip(acc.iter_mut()).zip(grad) {
        *a += g * g;
        *x += lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
}

impl ParamStore for TrainState {
    fn dim(&self) -> usize {
        self.pair.dim()
    }

    fn read(&self, which: Param, row: usize, out: &mut [f64]) {
        let m = match which {
            Param::Rho => &self.pair.rho,
            Param::Alpha => &self.pair.alpha,
        };
        out.copy_from_slice(m.row(row));
    }

    fn ascend(&mut self, which: Param, row: usize, grad: &[f64], lr: f64) {
        let (m, acc) = match which {
            Param::Rho => (&mut self.pair.rho, &mut self.rho_acc),
            Param::Alpha => (&mut self.pair.alpha, &mut self.alpha_acc),
        };
        adagrad(m.row_mut(row), acc.row_mut(row), grad, lr);
    }
}

/// Scratch buffers reused across update steps.
#[derive(Debug, Clone)]
pub struct StepScratch {
    ctx: Vec<f64>,
    tmp: Vec<f64>,
    rho_t: Vec<f64>,
    grad_t: Vec<f64>,
    ctx_grad: Vec<f64>,
    negs: Vec<f64>,
    neg_grads: Vec<f64>,
}

impl StepScratch {
    pub fn new(dim: usize) -> Self {
        StepScratch {
            ctx: vec![0.0; dim],
            tmp: vec![0.0; dim],
            rho_t: vec![0.0; dim],
            grad_t: vec![0.0; dim],
            ctx_grad: vec![0.0; dim],
            negs: Vec::new(),
            neg_grads: Vec::new(),
        }
    }
}

/// One stochastic ascent step for `items[target_pos]` against `negatives`.
///
/// `items` and `negatives` are vocabulary rows. Returns the pair objective at
/// the parameters before the update. A non-finite objective or gradient
/// leaves the parameters untouched and returns an error.
#[allow(clippy::too_many_arguments)]
pub fn gradient_step<S: ParamStore>(
    store: &mut S,
    scratch: &mut StepScratch,
    items: &[usize],
    target_pos: usize,
    negatives: &[usize],
    learning_rate: f64,
    lambda: f64,
    pooling: Pooling,
) -> Result<f64> {
    let d = store.dim();
    if items.len() < 2 {
        return Err(Error::InvalidArgument("basket has no context".into()));
    }
    let target = items[target_pos];
    let w = pooling.weight(items.len() - 1);

    scratch.ctx.fill(0.0);
    for (p, &j) in items.iter().enumerate() {
        if p != target_pos {
            store.read(Param::Alpha, j, &mut scratch.tmp);
            axpy(w, &scratch.tmp, &mut scratch.ctx);
        }
    }
    store.read(Param::Rho, target, &mut scratch.rho_t);
    scratch.negs.resize(negatives.len() * d, 0.0);
    scratch.neg_grads.resize(negatives.len() * d, 0.0);
    for (k, &row) in negatives.iter().enumerate() {
        store.read(Param::Rho, row, &mut scratch.negs[k * d..(k + 1) * d]);
    }

    let obj = accumulate_gradients(
        &scratch.rho_t,
        &scratch.ctx,
        &scratch.negs,
        lambda,
        &mut scratch.grad_t,
        &mut scratch.neg_grads,
        &mut scratch.ctx_grad,
    );
    let finite = obj.is_finite()
        && scratch.grad_t.iter().all(|x| x.is_finite())
        && scratch.neg_grads.iter().all(|x| x.is_finite())
        && scratch.ctx_grad.iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFinite(format!(
            "gradient for target row {target} (objective {obj})"
        )));
    }

    store.ascend(Param::Rho, target, &scratch.grad_t, learning_rate);
    for (k, &row) in negatives.iter().enumerate() {
        store.ascend(Param::Rho, row, &scratch.neg_grads[k * d..(k + 1) * d], learning_rate);
    }
    scratch.ctx_grad.iter_mut().for_each(|g| *g *= w);
    for (p, &j) in items.iter().enumerate() {
        if p != target_pos {
            store.ascend(Param::Alpha, j, &scratch.ctx_grad, learning_rate);
        }
    }
    Ok(obj)
}

/// A (basket, target, negatives) triple over vocabulary rows, used by the
/// full-batch helpers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub items: Vec<usize>,
    pub target_pos: usize,
    pub negatives: Vec<usize>,
}

/// Summed objective and gradients over a fixed set of instances.
pub fn batch_gradient(
    pair: &EmbeddingPair,
    instances: &[Instance],
    lambda: f64,
    pooling: Pooling,
) -> (f64, Matrix, Matrix) {
    let d = pair.dim();
    let mut g_rho = Matrix::zeros(pair.len(), d);
    let mut g_alpha = Matrix::zeros(pair.len(), d);
    let mut total = 0.0;
    for inst in instances {
        let w = pooling.weight(inst.items.len() - 1);
        let mut ctx = vec![0.0; d];
        for (p, &j) in inst.items.iter().enumerate() {
            if p != inst.target_pos {
                axpy(w, pair.alpha.row(j), &mut ctx);
            }
        }
        let target = inst.items[inst.target_pos];
        let negs: Vec<&[f64]> = inst.negatives.iter().map(|&k| pair.rho.row(k)).collect();
        let g = pair_gradient(pair.rho.row(target), &ctx, &negs, lambda);
        total += g.objective;
        axpy(1.0, &g.rho_target, g_rho.row_mut(target));
        for (&k, gk) in inst.negatives.iter().zip(&g.rho_negatives) {
            axpy(1.0, gk, g_rho.row_mut(k));
        }
        for (p, &j) in inst.items.iter().enumerate() {
            if p != inst.target_pos {
                axpy(w, &g.context, g_alpha.row_mut(j));
            }
        }
    }
    (total, g_rho, g_alpha)
}

/// Draws negatives from unigram^0.75, never returning a row of the current basket.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
    n: usize,
}

impl NegativeSampler {
    pub fn new(counts: &[usize]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidArgument(format!("negative sampling weights: {e}")))?;
        Ok(NegativeSampler {
            dist,
            n: counts.len(),
        })
    }

    /// `exclude` must be sorted.
    pub fn sample(&self, rng: &mut impl rand::Rng, exclude: &[usize]) -> usize {
        for _ in 0..MAX_NEGATIVE_TRIES {
            let k = self.dist.sample(rng);
            if exclude.binary_search(&k).is_err() {
                return k;
            }
        }
        // Heavy rows all in the basket: fall back to uniform over the rest.
        loop {
            let k = rng.random_range(0..self.n);
            if exclude.binary_search(&k).is_err() {
                return k;
            }
        }
    }
}

/// Training data mapped onto vocabulary rows.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// Vocabulary product ids, ascending.
    pub ids: Vec<u64>,
    /// Retained-trip count per vocabulary row.
    pub counts: Vec<usize>,
    /// Baskets as ascending row lists, each with at least two rows.
    pub baskets: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn build(corpus: &Corpus, min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for t in &corpus.trips {
            for &p in &t.items {
                *counts.entry(p).or_default() += 1;
            }
        }
        counts.retain(|_, c| *c >= min_count);
        let ids: Vec<u64> = counts.keys().copied().collect();
        let rows: HashMap<u64, usize> = ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        let baskets: Vec<Vec<usize>> = corpus
            .trips
            .iter()
            .map(|t| t.items.iter().filter_map(|p| rows.get(p).copied()).collect::<Vec<_>>())
            .filter(|b| b.len() >= 2)
            .collect();
        if ids.is_empty() || baskets.is_empty() {
            return Err(Error::Empty(
                "no trips with at least two in-vocabulary items to train on".into(),
            ));
        }
        Ok(TrainingSet {
            ids,
            counts: counts.into_values().collect(),
            baskets,
        })
    }

    pub fn max_basket(&self) -> usize {
        self.baskets.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Uniform(-scale, scale) initialisation, `rho` rows first then `alpha`.
pub fn initialize(ids: Vec<u64>, config: &TrainConfig) -> EmbeddingPair {
    let mut rng = seed::rng(config.seed);
    let s = config.init_scale();
    let n = ids.len() * config.dim;
    let mut draw = |_| rng.random_range(-s..s);
    let rho: Vec<f64> = (0..n).map(&mut draw).collect();
    let alpha: Vec<f64> = (0..n).map(&mut draw).collect();
    let v = ids.len();
    EmbeddingPair::new(
        ids,
        Matrix::from_vec(v, config.dim, rho),
        Matrix::from_vec(v, config.dim, alpha),
    )
    .expect("shapes match")
}

/// Trains embeddings on every retained trip of `corpus`.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<(EmbeddingPair, TrainReport)> {
    config.validate()?;
    let set = TrainingSet::build(corpus, config.min_count)?;
    train_on(&set, config)
}

pub fn train_on(set: &TrainingSet, config: &TrainConfig) -> Result<(EmbeddingPair, TrainReport)> {
    config.validate()?;
    let needed = config.n_negative + set.max_basket();
    if set.ids.len() < needed {
        return Err(Error::config(
            "n_negative",
            format!(
                "vocabulary of {} products is smaller than n_negative + largest basket ({needed})",
                set.ids.len()
            ),
        ));
    }
    let start = Instant::now();
    let sampler = NegativeSampler::new(&set.counts)?;
    let mut state = TrainState::new(initialize(set.ids.clone(), config));
    // Initialisation draws from the raw seed; shuffling and negatives from a derived stream.
    let mut rng = seed::rng(seed::stream_seed(config.seed, 1));

    let mut pairs: Vec<(u32, u16)> = set
        .baskets
        .iter()
        .enumerate()
        .flat_map(|(t, b)| (0..b.len()).map(move |p| (t as u32, p as u16)))
        .collect();

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let total = if config.threads <= 1 {
            run_sequential(&mut state, set, &pairs, &sampler, &mut rng, config)
        } else {
            let epoch_seed = seed::stream_seed(config.seed, 2 + epoch as u64);
            run_hogwild(&mut state, set, &pairs, &sampler, epoch_seed, config)
        }
        .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
        let mean_objective = total / pairs.len() as f64;
        log::info!("epoch {epoch}: mean objective {mean_objective:.6}");
        epochs.push(EpochStats {
            epoch,
            mean_objective,
            n_pairs: pairs.len(),
        });
    }

    let pair = state.pair;
    let report = TrainReport {
        epochs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        rho_norm: pair.rho.norm(),
        alpha_norm: pair.alpha.norm(),
        vocab_size: pair.len(),
        n_trips: set.baskets.len(),
        dim: pair.dim(),
    };
    Ok((pair, report))
}

fn run_pairs<S: ParamStore>(
    store: &mut S,
    set: &TrainingSet,
    pairs: &[(u32, u16)],
    sampler: &NegativeSampler,
    rng: &mut impl rand::Rng,
    config: &TrainConfig,
) -> Result<f64> {
    let mut scratch = StepScratch::new(config.dim);
    let mut negatives = vec![0usize; config.n_negative];
    let mut total = 0.0;
    for &(t, p) in pairs {
        let basket = &set.baskets[t as usize];
        for n in negatives.iter_mut() {
            *n = sampler.sample(rng, basket);
        }
        total += gradient_step(
            store,
            &mut scratch,
            basket,
            p as usize,
            &negatives,
            config.learning_rate,
            config.l2_lambda,
            config.pooling,
        )?;
    }
    Ok(total)
}

fn run_sequential(
    state: &mut TrainState,
    set: &TrainingSet,
    pairs: &[(u32, u16)],
    sampler: &NegativeSampler,
    rng: &mut seed::Rng,
    config: &TrainConfig,
) -> Result<f64> {
    run_pairs(state, set, pairs, sampler, rng, config)
}

/// Parameters shared between Hogwild workers. Rows are read and written with
/// relaxed atomics, so concurrent updates may interleave or be lost.
struct SharedParams {
    dim: usize,
    rho: Vec<AtomicU64>,
    alpha: Vec<AtomicU64>,
    rho_acc: Vec<AtomicU64>,
    alpha_acc: Vec<AtomicU64>,
}

fn to_atomic(m: &Matrix) -> Vec<AtomicU64> {
    m.as_slice().iter().map(|x| AtomicU64::new(x.to_bits())).collect()
}

fn from_atomic(src: &[AtomicU64], dst: &mut Matrix) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src) {
        *d = f64::from_bits(s.load(Ordering::Relaxed));
    }
}

#[derive(Clone, Copy)]
struct SharedHandle<'a>(&'a SharedParams);

impl ParamStore for SharedHandle<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn read(&self, which: Param, row: usize, out: &mut [f64]) {
        let src = match which {
            Param::Rho => &self.0.rho,
            Param::Alpha => &self.0.alpha,
        };
        let d = self.0.dim;
        for (o, a) in out.iter_mut().zip(&src[row * d..(row + 1) * d]) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn ascend(&mut self, which: Param, row: usize, grad: &[f64], lr: f64) {
        let (m, acc) = match which {
            Param::Rho => (&self.0.rho, &self.0.rho_acc),
            Param::Alpha => (&self.0.alpha, &self.0.alpha_acc),
        };
        let d = self.0.dim;
        let range = row * d..(row + 1) * d;
        for ((x, a), g) in m[range.clone()].iter().zip(&acc[range]).zip(grad) {
            let acc_v = f64::from_bits(a.load(Ordering::Relaxed)) + g * g;
            a.store(acc_v.to_bits(), Ordering::Relaxed);
            let x_v = f64::from_bits(x.load(Ordering::Relaxed)) + lr * g / (acc_v.sqrt() + ADAGRAD_EPS);
            x.store(x_v.to_bits(), Ordering::Relaxed);
        }
    }
}

fn run_hogwild(
    state: &mut TrainState,
    set: &TrainingSet,
    pairs: &[(u32, u16)],
    sampler: &NegativeSampler,
    epoch_seed: u64,
    config: &TrainConfig,
) -> Result<f64> {
    let shared = SharedParams {
        dim: config.dim,
        rho: to_atomic(&state.pair.rho),
        alpha: to_atomic(&state.pair.alpha),
        rho_acc: to_atomic(&state.rho_acc),
        alpha_acc: to_atomic(&state.alpha_acc),
    };
    let chunk = pairs.len().div_ceil(config.threads).max(1);
    let totals: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .enumerate()
            .map(|(i, part)| {
                let mut handle = SharedHandle(&shared);
                s.spawn(move || {
                    let mut rng = seed::rng(seed::stream_seed(epoch_seed, i as u64));
                    run_pairs(&mut handle, set, part, sampler, &mut rng, config)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    // Workers have joined, so nobody observes the parameters mid-update.
    from_atomic(&shared.rho, &mut state.pair.rho);
    from_atomic(&shared.alpha, &mut state.pair.alpha);
    from_atomic(&shared.rho_acc, &mut state.rho_acc);
    from_atomic(&shared.alpha_acc, &mut state.alpha_acc);
    totals.into_iter().sum()
}
