use rand::seq::index::sample;
use rand::Rng;

use super::{ModelError, Result};
use crate::tensor::RngState;

/// Training events grouped by content id.
#[derive(Debug, Clone)]
pub struct GenreIndex {
    // (content id, event indices), only genres with at least one event.
    groups: Vec<(usize, Vec<usize>)>,
}

impl GenreIndex {
    /// `content_ids[k]` is the content id of event `k`.
    pub fn new(content_ids: &[usize]) -> Self {
        let mut by_id: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (k, &c) in content_ids.iter().enumerate() {
            by_id.entry(c).or_default().push(k);
        }
        GenreIndex {
            groups: by_id.into_iter().collect(),
        }
    }

    pub fn distinct_genres(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[(usize, Vec<usize>)] {
        &self.groups
    }
}

/// Draws `n` distinct genres uniformly without replacement and one training
/// event uniformly from each. Returns the event indices; their contents are
/// pairwise distinct by construction.
pub fn sample_batch(index: &GenreIndex, n: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    let g = index.distinct_genres();
    if n > g {
        return Err(ModelError::Config(format!(
            "batch needs {n} distinct genres but training data has only {g}; lower the batch size"
        )));
    }
    Ok(sample(rng, g, n)
        .into_iter()
        .map(|gi| {
            let events = &index.groups[gi].1;
            events[rng.random_range(0..events.len())]
        })
        .collect())
}

/// Deterministic partition of all events into batches with unique genres:
/// round `r` takes the `r`-th event of every genre that has one, and each
/// round is cut into chunks of at most `n`. Chunks of a single pair are
/// dropped since they carry no contrastive signal.
pub fn exhaustive_batches(index: &GenreIndex, n: usize) -> Vec<Vec<usize>> {
    let rounds = index.groups.iter().map(|(_, e)| e.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        let round: Vec<usize> = index.groups.iter().filter_map(|(_, e)| e.get(r).copied()).collect();
        for chunk in round.chunks(n.max(2)) {
            if chunk.len() >= 2 {
                out.push(chunk.to_vec());
            }
        }
    }
    out
}
