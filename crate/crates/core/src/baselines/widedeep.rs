//! Wide & Deep scorer: a linear model over context × genre crosses plus an
//! MLP over the concatenated context and content inputs, trained with
//! binary cross-entropy against sampled unobserved pairs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineError, Ranker, Result};
use crate::features::{AttrSource, Catalog, FeatureSpace, Side, SparseVec, ViewingEvent};
use crate::model::Layer;
use crate::tensor::{AdamState, NodeId, ParamId, ParamStore, RngState, SparseRows, Tape, Tensor};

const FORMAT_TAG: &str = "jcce-widedeep";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WideDeepConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    /// Context attribute groups; each group is crossed with the genre.
    pub crosses: Vec<Vec<String>>,
    pub seed: u64,
}

impl Default for WideDeepConfig {
    fn default() -> Self {
        WideDeepConfig {
            hidden: vec![250, 250],
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 5,
            negatives_per_positive: 1,
            crosses: vec![
                vec!["viewer_ids".into()],
                vec!["day_of_week".into(), "time_slot".into()],
            ],
            seed: 0,
        }
    }
}

impl WideDeepConfig {
    pub fn validate(&self, space: &FeatureSpace) -> Result<()> {
        let bad = |m: &str| Err(BaselineError::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("wide & deep hidden widths must be nonempty and positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("wide & deep dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("wide & deep learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.negatives_per_positive == 0 {
            return bad("wide & deep batch_size, epochs and negatives_per_positive must be positive");
        }
        for group in &self.crosses {
            if group.is_empty() {
                return bad("empty cross-feature group");
            }
            for name in group {
                match space.schema().get(name) {
                    Some(a) if a.side == Side::Context => {}
                    _ => return Err(BaselineError::Config(format!("cross attribute {name:?} is not a context attribute"))),
                }
            }
        }
        Ok(())
    }
}

/// A context attribute tuple crossed with the genre, with an exact
/// vocabulary of the tuples observed in training and one OOV slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CrossFile", into = "CrossFile")]
pub struct CrossFeature {
    pub name: String,
    pub attributes: Vec<String>,
    parts: Vec<Vec<String>>,
    pairs: Vec<(usize, usize)>,
    part_index: HashMap<Vec<String>, usize>,
    pair_index: HashMap<(usize, usize), usize>,
}

#[derive(Serialize, Deserialize)]
struct CrossFile {
    name: String,
    attributes: Vec<String>,
    parts: Vec<Vec<String>>,
    pairs: Vec<(usize, usize)>,
}

impl From<CrossFile> for CrossFeature {
    fn from(f: CrossFile) -> Self {
        CrossFeature::from_parts(f.name, f.attributes, f.parts, f.pairs)
    }
}

impl From<CrossFeature> for CrossFile {
    fn from(c: CrossFeature) -> Self {
        CrossFile {
            name: c.name,
            attributes: c.attributes,
            parts: c.parts,
            pairs: c.pairs,
        }
    }
}

impl CrossFeature {
    fn from_parts(name: String, attributes: Vec<String>, parts: Vec<Vec<String>>, pairs: Vec<(usize, usize)>) -> Self {
        let part_index = parts.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let pair_index = pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        CrossFeature {
            name,
            attributes,
            parts,
            pairs,
            part_index,
            pair_index,
        }
    }

    /// Builds the tuple vocabulary from (context, genre id) observations.
    pub fn fit<'a>(
        attributes: &[String],
        space: &FeatureSpace,
        observations: impl IntoIterator<Item = (&'a dyn AttrSource, usize)>,
    ) -> Self {
        let name = format!("{}_x_genre", attributes.join("_"));
        let mut raw = Vec::new();
        let mut parts = BTreeSet::new();
        for (src, g) in observations {
            for t in tuples(attributes, space, src) {
                parts.insert(t.clone());
                raw.push((t, g));
            }
        }
        let parts: Vec<Vec<String>> = parts.into_iter().collect();
        let part_index: HashMap<&Vec<String>, usize> = parts.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let pairs: BTreeSet<(usize, usize)> = raw.iter().map(|(t, g)| (part_index[t], *g)).collect();
        CrossFeature::from_parts(name, attributes.to_vec(), parts, pairs.into_iter().collect())
    }

    /// Number of sparse slots, OOV included.
    pub fn dim(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn vocabulary_size(&self) -> usize {
        self.pairs.len()
    }

    /// Context-side tuple ids of `src`; `None` marks a tuple never seen.
    fn part_ids(&self, space: &FeatureSpace, src: &dyn AttrSource) -> Vec<Option<usize>> {
        tuples(&self.attributes, space, src)
            .iter()
            .map(|t| self.part_index.get(t).copied())
            .collect()
    }

    /// Slot of (part, genre); unseen tuples share the OOV slot.
    fn slot(&self, part: Option<usize>, genre: usize) -> usize {
        part.and_then(|p| self.pair_index.get(&(p, genre)).copied())
            .unwrap_or(self.pairs.len())
    }
}

/// Cartesian product of the attribute members (multi-valued attributes
/// contribute one tuple per member). Missing attributes yield no tuples.
fn tuples(attributes: &[String], space: &FeatureSpace, src: &dyn AttrSource) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::new()];
    for name in attributes {
        let Some(value) = src.attr(name) else { return Vec::new() };
        let kind = space.schema().get(name).map(|a| a.kind).unwrap_or(crate::features::AttrKind::Categorical);
        let members = value.members(kind);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                members.iter().map(move |m| {
                    let mut t = prefix.clone();
                    t.push(m.to_string());
                    t
                })
            })
            .collect();
    }
    out
}

/// Draws genres never observed with an event's exact context key.
struct NegativeSampler {
    keys: Vec<usize>,
    observed: HashSet<(usize, usize)>,
    saturated: Vec<bool>,
    catalog_len: usize,
}

impl NegativeSampler {
    fn new(events: &[ViewingEvent], genres: &[usize], schema: &crate::features::Schema, catalog_len: usize) -> Self {
        let mut key_ids: HashMap<String, usize> = HashMap::new();
        let keys: Vec<usize> = events
            .iter()
            .map(|e| {
                let n = key_ids.len();
                *key_ids.entry(e.context_key(schema)).or_insert(n)
            })
            .collect();
        let observed: HashSet<(usize, usize)> = keys.iter().copied().zip(genres.iter().copied()).collect();
        let mut per_key = vec![0usize; key_ids.len()];
        for &(k, _) in &observed {
            per_key[k] += 1;
        }
        NegativeSampler {
            keys,
            observed,
            saturated: per_key.into_iter().map(|n| n >= catalog_len).collect(),
            catalog_len,
        }
    }

    /// `None` when event `k`'s context has been seen with every genre.
    fn sample(&self, k: usize, rng: &mut RngState) -> Option<usize> {
        let key = self.keys[k];
        if self.saturated[key] {
            return None;
        }
        loop {
            let cand = rng.random_range(0..self.catalog_len);
            if !self.observed.contains(&(key, cand)) {
                return Some(cand);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WideDeepLog {
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideDeep {
    config: WideDeepConfig,
    space: FeatureSpace,
    crosses: Vec<CrossFeature>,
    wide_offsets: Vec<usize>,
    wide_dim: usize,
    deep: Vec<Layer>,
    wide: ParamId,
    store: ParamStore,
}

/// Per-context precomputation reused across candidate genres.
struct ContextInput {
    deep: SparseVec,
    parts: Vec<Vec<Option<usize>>>,
}

impl WideDeep {
    fn init(config: WideDeepConfig, space: FeatureSpace, crosses: Vec<CrossFeature>, rng: &mut RngState) -> Self {
        let mut wide_offsets = Vec::with_capacity(crosses.len());
        let mut wide_dim = 0;
        for c in &crosses {
            wide_offsets.push(wide_dim);
            wide_dim += c.dim();
        }
        let mut store = ParamStore::new();
        let mut widths = vec![space.context_dim() + space.content_dim()];
        widths.extend(&config.hidden);
        widths.push(1);
        let deep = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect();
                Layer {
                    weight: store.add(Tensor::from_vec(w[0], w[1], data).expect("sized")),
                    bias: store.add(Tensor::zeros(1, w[1])),
                }
            })
            .collect();
        let wide = store.add(Tensor::zeros(wide_dim.max(1), 1));
        WideDeep {
            config,
            space,
            crosses,
            wide_offsets,
            wide_dim: wide_dim.max(1),
            deep,
            wide,
            store,
        }
    }

    pub fn config(&self) -> &WideDeepConfig {
        &self.config
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn crosses(&self) -> &[CrossFeature] {
        &self.crosses
    }

    fn context_input(&self, src: &dyn AttrSource) -> Result<ContextInput> {
        Ok(ContextInput {
            deep: self.space.encode_context(src)?,
            parts: self.crosses.iter().map(|c| c.part_ids(&self.space, src)).collect(),
        })
    }

    fn push_example(
        &self,
        ctx: &ContextInput,
        content: &SparseVec,
        genre: usize,
        deep: &mut SparseRows,
        wide: &mut SparseRows,
    ) -> Result<()> {
        let offset = self.space.context_dim();
        let (mut idx, mut val): (Vec<usize>, Vec<f64>) = ctx.deep.entries().iter().copied().unzip();
        for &(i, v) in content.entries() {
            idx.push(offset + i);
            val.push(v);
        }
        deep.push_row(&idx, &val)?;
        let mut slots: Vec<usize> = Vec::new();
        for (k, cross) in self.crosses.iter().enumerate() {
            for &p in &ctx.parts[k] {
                slots.push(self.wide_offsets[k] + cross.slot(p, genre));
            }
        }
        slots.sort_unstable();
        slots.dedup();
        let ones = vec![1.0; slots.len()];
        wide.push_row(&slots, &ones)?;
        Ok(())
    }

    fn forward(
        &self,
        tape: &mut Tape,
        deep_rows: SparseRows,
        wide_rows: SparseRows,
        training: bool,
        rng: &mut RngState,
    ) -> Result<NodeId> {
        let last = self.deep.len() - 1;
        let mut h = None;
        for (i, layer) in self.deep.iter().enumerate() {
            let w = tape.param(layer.weight);
            let b = tape.param(layer.bias);
            let z = match h {
                None => tape.sparse_matmul(deep_rows.clone(), w)?,
                Some(prev) => tape.matmul(prev, w)?,
            };
            let z = tape.add_row(z, b)?;
            h = Some(if i == last {
                z
            } else {
                let a = tape.relu(z);
                tape.dropout(a, self.config.dropout, training, rng)?
            });
        }
        let wide = tape.param(self.wide);
        let wz = tape.sparse_matmul(wide_rows, wide)?;
        Ok(tape.add(h.expect("at least one layer"), wz)?)
    }

    /// Inference logits of `genres` (content ids) for one context.
    pub fn logits(&self, context: &dyn AttrSource, genres: &[usize]) -> Result<Vec<f64>> {
        let ctx = self.context_input(context)?;
        let mut deep = SparseRows::new(self.space.context_dim() + self.space.content_dim());
        let mut wide = SparseRows::new(self.wide_dim);
        for &g in genres {
            if g >= self.space.catalog().len() {
                return Err(BaselineError::Config(format!("content id {g} is outside the catalog")));
            }
            let content = self.space.encode_catalog_item(g)?;
            self.push_example(&ctx, &content, g, &mut deep, &mut wide)?;
        }
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, deep, wide, false, &mut RngState::seed_from(0))?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Trains on observed events (positives) against sampled negatives.
    pub fn train(events: &[ViewingEvent], space: FeatureSpace, config: WideDeepConfig) -> Result<(Self, WideDeepLog)> {
        Self::train_with_progress(events, space, config, |_, _| {})
    }

    pub fn train_with_progress(
        events: &[ViewingEvent],
        space: FeatureSpace,
        config: WideDeepConfig,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<(Self, WideDeepLog)> {
        config.validate(&space)?;
        if events.is_empty() {
            return Err(BaselineError::Config("no training events".into()));
        }
        let catalog_len = space.catalog().len();
        let genres: Vec<usize> = events
            .iter()
            .map(|e| {
                space
                    .catalog()
                    .id_of(&e.genre)
                    .ok_or_else(|| BaselineError::Config(format!("training genre {:?} is not in the catalog", e.genre)))
            })
            .collect::<Result<_>>()?;
        let crosses = config
            .crosses
            .iter()
            .map(|attrs| {
                CrossFeature::fit(
                    attrs,
                    &space,
                    events.iter().zip(&genres).map(|(e, &g)| (e as &dyn AttrSource, g)),
                )
            })
            .collect();
        let seed = config.seed;
        let mut model = WideDeep::init(config, space, crosses, &mut RngState::derived(seed, "widedeep/init"));

        let contexts: Vec<ContextInput> = events.iter().map(|e| model.context_input(e)).collect::<Result<_>>()?;
        let contents: Vec<SparseVec> = (0..catalog_len)
            .map(|g| model.space.encode_catalog_item(g))
            .collect::<std::result::Result<_, _>>()?;

        let sampler = NegativeSampler::new(events, &genres, model.space.schema(), catalog_len);
        let mut neg_rng = RngState::derived(seed, "widedeep/negatives");
        let mut shuffle_rng = RngState::derived(seed, "widedeep/shuffle");
        let mut dropout_rng = RngState::derived(seed, "widedeep/dropout");
        let mut adam = AdamState::new(model.config.learning_rate);
        let mut log = WideDeepLog::default();
        let deep_dim = model.space.context_dim() + model.space.content_dim();

        for epoch in 1..=model.config.epochs {
            let mut examples: Vec<(usize, usize, f64)> = Vec::with_capacity(events.len() * 2);
            for (k, &g) in genres.iter().enumerate() {
                examples.push((k, g, 1.0));
                for _ in 0..model.config.negatives_per_positive {
                    if let Some(neg) = sampler.sample(k, &mut neg_rng) {
                        examples.push((k, neg, 0.0));
                    }
                }
            }
            examples.shuffle(&mut shuffle_rng);

            let mut total = 0.0;
            let mut batches = 0;
            for batch in examples.chunks(model.config.batch_size) {
                let mut deep = SparseRows::new(deep_dim);
                let mut wide = SparseRows::new(model.wide_dim);
                for &(k, g, _) in batch {
                    model.push_example(&contexts[k], &contents[g], g, &mut deep, &mut wide)?;
                }
                let targets: Vec<f64> = batch.iter().map(|b| b.2).collect();
                let grads = {
                    let mut tape = Tape::new(&model.store);
                    let logits = model.forward(&mut tape, deep, wide, true, &mut dropout_rng)?;
                    let loss = tape.bce_with_logits(logits, targets)?;
                    let value = tape.value(loss).item()?;
                    if !value.is_finite() {
                        return Err(BaselineError::Divergence {
                            epoch,
                            learning_rate: model.config.learning_rate,
                        });
                    }
                    total += value;
                    batches += 1;
                    tape.backward(loss)?
                };
                model.store.set_grads(grads)?;
                adam.step(&mut model.store)?;
            }
            let mean = total / batches as f64;
            on_epoch(epoch, mean);
            log.losses.push(mean);
        }
        model.store.zero_grads();
        Ok((model, log))
    }
}

impl Ranker for WideDeep {
    fn name(&self) -> &str {
        "wide_deep"
    }

    fn catalog(&self) -> &Catalog {
        self.space.catalog()
    }

    fn scores(&self, context: &dyn AttrSource, _nonce: u64) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.space.catalog().len()).collect();
        self.logits(context, &all)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WideDeepFile {
    format: String,
    version: u32,
    config: WideDeepConfig,
    feature_space: FeatureSpace,
    crosses: Vec<CrossFeature>,
    deep: Vec<LayerFile>,
    wide: Vec<f64>,
}

pub fn write_wide_deep<W: Write>(model: &WideDeep, mut out: W) -> Result<()> {
    let file = WideDeepFile {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        config: model.config.clone(),
        feature_space: model.space.clone(),
        crosses: model.crosses.clone(),
        deep: model
            .deep
            .iter()
            .map(|l| {
                let w = model.store.value(l.weight);
                LayerFile {
                    rows: w.rows(),
                    cols: w.cols(),
                    weight: w.data().to_vec(),
                    bias: model.store.value(l.bias).data().to_vec(),
                }
            })
            .collect(),
        wide: model.store.value(model.wide).data().to_vec(),
    };
    serde_json::to_writer(&mut out, &file).map_err(|e| BaselineError::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_wide_deep<R: Read>(mut input: R) -> Result<WideDeep> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| BaselineError::Corrupt(e.to_string()))?;
    let header: serde_json::Value = serde_json::from_str(&text).map_err(|e| BaselineError::Corrupt(e.to_string()))?;
    if header.get("format").and_then(|v| v.as_str()) != Some(FORMAT_TAG) {
        return Err(BaselineError::Corrupt("not a wide & deep file".into()));
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(BaselineError::Version {
                found: v as u32,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(BaselineError::Corrupt("missing version".into())),
    }
    let file: WideDeepFile = serde_json::from_str(&text).map_err(|e| BaselineError::Corrupt(e.to_string()))?;
    file.feature_space.validate()?;
    file.config.validate(&file.feature_space)?;
    let mut model = WideDeep::init(file.config, file.feature_space, file.crosses, &mut RngState::seed_from(0));
    if model.deep.len() != file.deep.len() {
        return Err(BaselineError::Corrupt("deep layer count mismatch".into()));
    }
    for (layer, lf) in model.deep.clone().iter().zip(file.deep) {
        let shape = model.store.value(layer.weight).shape();
        if shape != (lf.rows, lf.cols) || lf.weight.len() != lf.rows * lf.cols || lf.bias.len() != lf.cols {
            return Err(BaselineError::Corrupt(format!("deep layer shape {:?} does not match {shape:?}", (lf.rows, lf.cols))));
        }
        *model.store.value_mut(layer.weight) = Tensor::from_vec(lf.rows, lf.cols, lf.weight)?;
        *model.store.value_mut(layer.bias) = Tensor::from_vec(1, lf.cols, lf.bias)?;
    }
    if file.wide.len() != model.wide_dim {
        return Err(BaselineError::Corrupt("wide weight length mismatch".into()));
    }
    *model.store.value_mut(model.wide) = Tensor::from_vec(model.wide_dim, 1, file.wide)?;
    if model.store.params().iter().any(|p| !p.value.is_finite()) {
        return Err(BaselineError::Corrupt("non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save_wide_deep(model: &WideDeep, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_wide_deep(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_wide_deep(path: &Path) -> Result<WideDeep> {
    read_wide_deep(std::fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{testutil::event, Schema};
    use crate::tensor::finite_diff_check;

    /// Four genres; each is watched only by its own viewer.
    fn toy() -> (Vec<ViewingEvent>, FeatureSpace) {
        let mut events = Vec::new();
        for rep in 0..10 {
            for g in 0..4 {
                let mut e = event(&format!("g{g}"), "t");
                e.viewer_ids = [format!("v{g}")].into_iter().collect();
                e.household_id = format!("h{}", (g + rep) % 3);
                events.push(e);
            }
        }
        let space = FeatureSpace::fit(&events, &Schema::default_tv()).unwrap();
        (events, space)
    }

    fn small_cfg() -> WideDeepConfig {
        WideDeepConfig {
            hidden: vec![8, 8],
            dropout: 0.0,
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 1,
            ..WideDeepConfig::default()
        }
    }

    #[test]
    fn zero_logit_is_half() {
        assert_eq!(crate::tensor::sigmoid(0.0), 0.5);
    }

    #[test]
    fn cross_vocabulary_and_oov() {
        let (events, space) = toy();
        let attrs = vec!["viewer_ids".to_string()];
        let cross = CrossFeature::fit(&attrs, &space, events.iter().map(|e| (e as &dyn AttrSource, 0)));
        assert_eq!(cross.vocabulary_size(), 4);
        let parts = cross.part_ids(&space, &events[0]);
        assert_eq!(parts.len(), 1);
        assert!(cross.slot(parts[0], 0) < 4);
        assert_eq!(cross.slot(parts[0], 3), 4);
        assert_eq!(cross.slot(None, 0), 4);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let (events, space) = toy();
        let (mut model, _) = WideDeep::train(&events, space, small_cfg()).unwrap();
        let ctx: Vec<ContextInput> = events[..3].iter().map(|e| model.context_input(e).unwrap()).collect();
        let contents: Vec<SparseVec> = (0..4).map(|g| model.space.encode_catalog_item(g).unwrap()).collect();
        let examples = [(0, 0, 1.0), (1, 2, 0.0), (2, 2, 1.0), (0, 3, 0.0)];
        let deep_dim = model.space.context_dim() + model.space.content_dim();
        let mut deep = SparseRows::new(deep_dim);
        let mut wide = SparseRows::new(model.wide_dim);
        for &(k, g, _) in &examples {
            model.push_example(&ctx[k], &contents[g], g, &mut deep, &mut wide).unwrap();
        }
        let targets: Vec<f64> = examples.iter().map(|e| e.2).collect();
        let probe = model.clone();
        let report = finite_diff_check(&mut model.store, 1e-5, |tape| {
            let logits = probe
                .forward(tape, deep.clone(), wide.clone(), false, &mut RngState::seed_from(0))
                .map_err(|e| crate::tensor::TensorError::Contract(e.to_string()))?;
            tape.bce_with_logits(logits, targets.clone())
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.compared > 100);
    }

    #[test]
    fn negatives_never_hit_observed_pairs() {
        let (mut events, space) = toy();
        // One context seen with three of the four genres.
        for g in 1..3 {
            let mut e = events[0].clone();
            e.genre = format!("g{g}");
            events.push(e);
        }
        let schema = space.schema();
        let genres: Vec<usize> = events.iter().map(|e| space.catalog().id_of(&e.genre).unwrap()).collect();
        let sampler = NegativeSampler::new(&events, &genres, schema, 4);
        let mut rng = RngState::seed_from(4);
        for k in 0..events.len() {
            let key = events[k].context_key(schema);
            for _ in 0..50 {
                let neg = sampler.sample(k, &mut rng).unwrap();
                assert!(!events.iter().zip(&genres).any(|(e, &g)| g == neg && e.context_key(schema) == key));
            }
        }
        assert_eq!(sampler.sample(0, &mut rng), Some(3));
        // Saturated key: no negative exists.
        let mut all = events[..1].to_vec();
        for g in 1..4 {
            let mut e = events[0].clone();
            e.genre = format!("g{g}");
            all.push(e);
        }
        let all_genres: Vec<usize> = (0..4).collect();
        assert_eq!(NegativeSampler::new(&all, &all_genres, schema, 4).sample(0, &mut rng), None);
    }

    #[test]
    fn training_logs_finite_losses_and_ranks_catalog() {
        let (events, space) = toy();
        let cfg = WideDeepConfig {
            epochs: 3,
            ..small_cfg()
        };
        let (model, log) = WideDeep::train(&events, space, cfg).unwrap();
        assert_eq!(log.losses.len(), 3);
        assert!(log.losses.iter().all(|l| l.is_finite()));
        let mut r = model.rank(&events[0], 0).unwrap();
        r.sort();
        assert_eq!(r, vec![0, 1, 2, 3]);
    }

    #[test]
    fn separable_toy_is_learned() {
        let (events, space) = toy();
        let cfg = WideDeepConfig {
            epochs: 300,
            learning_rate: 0.01,
            ..small_cfg()
        };
        let (model, _) = WideDeep::train(&events, space, cfg).unwrap();
        let mut correct = 0;
        let mut total = 0;
        for e in &events {
            let logits = model.logits(e, &[0, 1, 2, 3]).unwrap();
            let pos = model.space.catalog().id_of(&e.genre).unwrap();
            for (g, l) in logits.iter().enumerate() {
                correct += ((*l > 0.0) == (g == pos)) as usize;
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn file_round_trip() {
        let (events, space) = toy();
        let (model, _) = WideDeep::train(&events, space, small_cfg()).unwrap();
        let mut buf = Vec::new();
        write_wide_deep(&model, &mut buf).unwrap();
        let back = read_wide_deep(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert!(matches!(read_wide_deep(&buf[..buf.len() / 2]), Err(BaselineError::Corrupt(_))));
    }
}
