//! Comparison rankers sharing one interface with the embedding model.
//!
//! Every [`Ranker`] scores the whole catalog for a context; the ranking is
//! the catalog sorted by descending score with ties broken by ascending
//! content id (see [`order_by_score`]).

mod widedeep;

pub use widedeep::{
    load_wide_deep, read_wide_deep, save_wide_deep, write_wide_deep, CrossFeature, WideDeep, WideDeepConfig,
    WideDeepLog,
};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::features::{AttrSource, AttrValue, Catalog, FeatureError, ViewingEvent, DAY_OF_WEEK, TIME_SLOT};
use crate::model::{order_by_score, ContentIndex, JcceModel, ModelError};
use crate::tensor::{RngState, TensorError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{0} ranker used before fit")]
    NotFitted(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("wide & deep training diverged (non-finite loss) in epoch {epoch} at learning rate {learning_rate}")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("corrupt wide & deep file: {0}")]
    Corrupt(String),
    #[error("unsupported wide & deep file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// "Fit on train, rank for a context."
///
/// `nonce` identifies the query; only rankers with per-query randomness use
/// it, and then as the sole source of that randomness.
pub trait Ranker: Sync {
    fn name(&self) -> &str;

    fn catalog(&self) -> &Catalog;

    /// One score per catalog item in content-id order; higher is better.
    fn scores(&self, context: &dyn AttrSource, nonce: u64) -> Result<Vec<f64>>;

    /// Full catalog ranking (content ids, best first).
    fn rank(&self, context: &dyn AttrSource, nonce: u64) -> Result<Vec<usize>> {
        Ok(order_by_score(&self.scores(context, nonce)?))
    }
}

/// Uniform random permutation of `0..n`.
pub fn random_rank(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    ids
}

/// Ranks content uniformly at random, independently per query.
#[derive(Debug, Clone)]
pub struct RandomRanker {
    catalog: Catalog,
    seed: u64,
}

impl RandomRanker {
    pub fn new(catalog: Catalog, seed: u64) -> Self {
        RandomRanker { catalog, seed }
    }

    fn query_rng(&self, nonce: u64) -> RngState {
        // splitmix64 finaliser keeps neighbouring nonces decorrelated.
        let mut z = self.seed ^ nonce.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngState::seed_from(z ^ (z >> 31))
    }
}

impl Ranker for RandomRanker {
    fn name(&self) -> &str {
        "random"
    }

    fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn scores(&self, _context: &dyn AttrSource, nonce: u64) -> Result<Vec<f64>> {
        let n = self.catalog.len();
        let perm = random_rank(n, &mut self.query_rng(nonce));
        let mut scores = vec![0.0; n];
        for (pos, &id) in perm.iter().enumerate() {
            scores[id] = (n - pos) as f64;
        }
        Ok(scores)
    }
}

fn genre_counts(catalog: &Catalog, events: &[ViewingEvent]) -> Vec<u64> {
    let mut counts = vec![0u64; catalog.len()];
    for e in events {
        if let Some(id) = catalog.id_of(&e.genre) {
            counts[id] += 1;
        }
    }
    counts
}

fn as_scores(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|&c| c as f64).collect()
}

/// Global popularity in the training data; the same list for every context.
#[derive(Debug, Clone)]
pub struct Toppop {
    catalog: Catalog,
    counts: Option<Vec<u64>>,
}

impl Toppop {
    pub fn new(catalog: Catalog) -> Self {
        Toppop { catalog, counts: None }
    }

    pub fn fit(&mut self, train: &[ViewingEvent]) {
        self.counts = Some(genre_counts(&self.catalog, train));
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }
}

impl Ranker for Toppop {
    fn name(&self) -> &str {
        "toppop"
    }

    fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn scores(&self, _context: &dyn AttrSource, _nonce: u64) -> Result<Vec<f64>> {
        self.counts
            .as_deref()
            .map(as_scores)
            .ok_or(BaselineError::NotFitted("toppop"))
    }
}

/// Popularity within the query's (day of week, time slot) cell, falling
/// back to global popularity for cells never seen in training.
#[derive(Debug, Clone)]
pub struct ToppopTemporal {
    catalog: Catalog,
    fitted: Option<(Vec<u64>, HashMap<(String, String), Vec<u64>>)>,
}

fn cell_of(src: &dyn AttrSource) -> Option<(String, String)> {
    let single = |name| match src.attr(name)? {
        AttrValue::Single(s) => Some(s.to_string()),
        AttrValue::Multi(_) => None,
    };
    Some((single(DAY_OF_WEEK)?, single(TIME_SLOT)?))
}

impl ToppopTemporal {
    pub fn new(catalog: Catalog) -> Self {
        ToppopTemporal { catalog, fitted: None }
    }

    pub fn fit(&mut self, train: &[ViewingEvent]) {
        let global = genre_counts(&self.catalog, train);
        let mut cells: HashMap<(String, String), Vec<u64>> = HashMap::new();
        for e in train {
            let (Some(cell), Some(id)) = (cell_of(e), self.catalog.id_of(&e.genre)) else { continue };
            cells.entry(cell).or_insert_with(|| vec![0; self.catalog.len()])[id] += 1;
        }
        self.fitted = Some((global, cells));
    }

    pub fn cell_count(&self) -> usize {
        self.fitted.as_ref().map_or(0, |(_, c)| c.len())
    }
}

impl Ranker for ToppopTemporal {
    fn name(&self) -> &str {
        "toppop_temporal"
    }

    fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn scores(&self, context: &dyn AttrSource, _nonce: u64) -> Result<Vec<f64>> {
        let (global, cells) = self.fitted.as_ref().ok_or(BaselineError::NotFitted("toppop_temporal"))?;
        let counts = cell_of(context).and_then(|c| cells.get(&c)).unwrap_or(global);
        Ok(as_scores(counts))
    }
}

/// The embedding model behind the [`Ranker`] interface.
pub struct JcceRanker {
    name: String,
    model: JcceModel,
    index: ContentIndex,
}

impl JcceRanker {
    pub fn new(name: &str, model: JcceModel) -> Result<Self> {
        let index = crate::model::precompute_content_embeddings(&model)?;
        Ok(JcceRanker {
            name: name.to_string(),
            model,
            index,
        })
    }

    pub fn model(&self) -> &JcceModel {
        &self.model
    }

    pub fn index(&self) -> &ContentIndex {
        &self.index
    }
}

impl Ranker for JcceRanker {
    fn name(&self) -> &str {
        &self.name
    }

    fn catalog(&self) -> &Catalog {
        self.model.space.catalog()
    }

    fn scores(&self, context: &dyn AttrSource, _nonce: u64) -> Result<Vec<f64>> {
        Ok(self.index.scores(&self.model.context_embedding(context)?)?)
    }
}
