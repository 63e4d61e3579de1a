use std::cmp::Ordering;

use serde::Serialize;

use super::{JcceModel, ModelError, Result};
use crate::features::{AttrSource, SparseVec};
use crate::tensor::Tensor;

/// One entry of a ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    pub content_id: usize,
    pub score: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`. Either vector being zero is an
/// error rather than a silent zero score.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ModelError::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(ModelError::ZeroNorm("first"));
    }
    if nb == 0.0 {
        return Err(ModelError::ZeroNorm("second"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between a context and a content input.
pub fn score(model: &JcceModel, context: &SparseVec, content: &SparseVec) -> Result<f64> {
    let c = model.context.embed_one(&model.store, context)?;
    let i = model.content.embed_one(&model.store, content)?;
    cosine(&c, &i).map_err(|e| match e {
        ModelError::ZeroNorm("first") => ModelError::ZeroNorm("context"),
        ModelError::ZeroNorm(_) => ModelError::ZeroNorm("content"),
        other => other,
    })
}

/// Content embeddings of the whole catalog, computed once.
///
/// Row `k` is the inference-mode embedding of catalog item `k`, so the row
/// index is the content id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentIndex {
    embeddings: Tensor,
    norms: Vec<f64>,
}

pub fn precompute_content_embeddings(model: &JcceModel) -> Result<ContentIndex> {
    let catalog = model.space.catalog();
    if catalog.is_empty() {
        return Err(ModelError::Config("catalog is empty".into()));
    }
    let inputs: Vec<SparseVec> = (0..catalog.len())
        .map(|k| model.space.encode_catalog_item(k))
        .collect::<std::result::Result<_, _>>()?;
    let refs: Vec<&SparseVec> = inputs.iter().collect();
    ContentIndex::new(model.embed_contents(&refs)?)
}

impl ContentIndex {
    pub fn new(embeddings: Tensor) -> Result<Self> {
        let norms: Vec<f64> = (0..embeddings.rows()).map(|k| norm(embeddings.row(k))).collect();
        if norms.contains(&0.0) {
            return Err(ModelError::ZeroNorm("content"));
        }
        Ok(ContentIndex { embeddings, norms })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    /// Cosine of `query` against every catalog row, in content-id order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.embed_dim() {
            return Err(ModelError::Dimension {
                expected: self.embed_dim(),
                actual: query.len(),
            });
        }
        let nq = norm(query);
        if nq == 0.0 {
            return Err(ModelError::ZeroNorm("context"));
        }
        Ok((0..self.len())
            .map(|k| (dot(query, self.embeddings.row(k)) / (nq * self.norms[k])).clamp(-1.0, 1.0))
            .collect())
    }

    /// Full catalog ranking for an embedded context.
    pub fn rank(&self, query: &[f64]) -> Result<Vec<Ranked>> {
        let scores = self.scores(query)?;
        Ok(order_by_score(&scores)
            .into_iter()
            .map(|k| Ranked {
                content_id: k,
                score: scores[k],
            })
            .collect())
    }
}

/// Content ids sorted by descending score, ties by ascending id.
pub fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

/// 1-based position of `target` in [`order_by_score`] without sorting.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Encodes a context, embeds it, and ranks the whole catalog.
pub fn recommend(model: &JcceModel, context: &dyn AttrSource, index: &ContentIndex) -> Result<Vec<Ranked>> {
    index.rank(&model.context_embedding(context)?)
}
