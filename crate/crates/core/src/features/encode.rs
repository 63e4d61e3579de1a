//! Sparse one-hot / multi-hot encoding of contexts and contents.
//!
//! Each side of the schema is laid out as consecutive blocks in schema order.
//! A categorical block has `cardinality + 1` slots, the last one absorbing
//! unseen values; a binary block has a single slot that is set when true.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::event::{parse_binary, AttrSource, AttrValue, ContentRef, ViewingEvent};
use super::schema::{AttrKind, Schema, Side};
use super::vocab::{build_vocabularies, Vocabularies};
use super::{FeatureError, Result};
use crate::tensor::SparseRows;

/// Sparse vector with strictly increasing indices and finite nonzero values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(FeatureError::Config("sparse indices must be strictly increasing".into()));
            }
        }
        for &(i, v) in &entries {
            if i >= dim {
                return Err(FeatureError::Config(format!("sparse index {i} out of bounds for dim {dim}")));
            }
            if !v.is_finite() || v == 0.0 {
                return Err(FeatureError::Config(format!("sparse value {v} must be finite and nonzero")));
            }
        }
        Ok(SparseVec { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVec { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            d[i] = v;
        }
        d
    }
}

/// Stacks sparse vectors of a common dimension into a batch.
pub fn to_rows<'a, I>(dim: usize, vecs: I) -> Result<SparseRows>
where
    I: IntoIterator<Item = &'a SparseVec>,
{
    let mut rows = SparseRows::new(dim);
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for v in vecs {
        if v.dim != dim {
            return Err(FeatureError::Config(format!(
                "input dimension {} does not match encoder dimension {dim}",
                v.dim
            )));
        }
        idx.clear();
        val.clear();
        for &(i, x) in &v.entries {
            idx.push(i);
            val.push(x);
        }
        rows.push_row(&idx, &val)
            .map_err(|e| FeatureError::Config(e.to_string()))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub kind: AttrKind,
    pub offset: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl Layout {
    fn build(schema: &Schema, vocabs: &Vocabularies, side: Side) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for a in schema.side(side) {
            let size = match a.kind {
                AttrKind::Binary => 1,
                _ => {
                    vocabs
                        .get(&a.name)
                        .ok_or_else(|| FeatureError::Schema(format!("no vocabulary for {:?}", a.name)))?
                        .cardinality()
                        + 1
                }
            };
            blocks.push(Block {
                name: a.name.clone(),
                kind: a.kind,
                offset,
                size,
            });
            offset += size;
        }
        Ok(Layout { blocks, dim: offset })
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub genre: String,
    pub top_genre: String,
}

/// All recommendable content, ordered by genre name. A content id is the
/// position in this list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub items: Vec<CatalogItem>,
}

impl Catalog {
    pub fn from_events(events: &[ViewingEvent]) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for e in events {
            match map.insert(&e.genre, &e.top_genre) {
                Some(prev) if prev != e.top_genre => {
                    return Err(FeatureError::InvalidValue {
                        attribute: "top_genre".into(),
                        value: format!("genre {:?} belongs to both {prev:?} and {:?}", e.genre, e.top_genre),
                    })
                }
                _ => {}
            }
        }
        Ok(Catalog {
            items: map
                .into_iter()
                .map(|(g, t)| CatalogItem {
                    genre: g.to_string(),
                    top_genre: t.to_string(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn id_of(&self, genre: &str) -> Option<usize> {
        self.items.binary_search_by(|i| i.genre.as_str().cmp(genre)).ok()
    }

    pub fn genre(&self, id: usize) -> &str {
        &self.items[id].genre
    }
}

/// Schema + vocabularies + catalog: everything needed to turn events and
/// queries into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpaceRepr", into = "SpaceRepr")]
pub struct FeatureSpace {
    schema: Schema,
    vocabs: Vocabularies,
    catalog: Catalog,
    context: Layout,
    content: Layout,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    schema: Schema,
    vocabularies: Vocabularies,
    catalog: Catalog,
}

impl From<SpaceRepr> for FeatureSpace {
    fn from(r: SpaceRepr) -> Self {
        // Layout construction only fails on a vocabulary/schema mismatch,
        // which a model file produced by `save` cannot contain; corrupt files
        // are caught by the validation in `FeatureSpace::validate`.
        let context = Layout::build(&r.schema, &r.vocabularies, Side::Context).unwrap_or(Layout {
            blocks: Vec::new(),
            dim: 0,
        });
        let content = Layout::build(&r.schema, &r.vocabularies, Side::Content).unwrap_or(Layout {
            blocks: Vec::new(),
            dim: 0,
        });
        FeatureSpace {
            schema: r.schema,
            vocabs: r.vocabularies,
            catalog: r.catalog,
            context,
            content,
        }
    }
}

impl From<FeatureSpace> for SpaceRepr {
    fn from(s: FeatureSpace) -> Self {
        SpaceRepr {
            schema: s.schema,
            vocabularies: s.vocabs,
            catalog: s.catalog,
        }
    }
}

impl FeatureSpace {
    pub fn new(schema: Schema, vocabs: Vocabularies, catalog: Catalog) -> Result<Self> {
        schema.validate()?;
        let context = Layout::build(&schema, &vocabs, Side::Context)?;
        let content = Layout::build(&schema, &vocabs, Side::Content)?;
        let space = FeatureSpace {
            schema,
            vocabs,
            catalog,
            context,
            content,
        };
        space.validate()?;
        Ok(space)
    }

    /// Vocabularies and catalog from training events.
    pub fn fit(events: &[ViewingEvent], schema: &Schema) -> Result<Self> {
        let vocabs = build_vocabularies(events, schema)?;
        let catalog = Catalog::from_events(events)?;
        Self::new(schema.clone(), vocabs, catalog)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = Layout::build(&self.schema, &self.vocabs, Side::Context)?;
        let cnt = Layout::build(&self.schema, &self.vocabs, Side::Content)?;
        if ctx != self.context || cnt != self.content {
            return Err(FeatureError::Schema("layout does not match vocabularies".into()));
        }
        if self.catalog.is_empty() {
            return Err(FeatureError::Schema("empty catalog".into()));
        }
        let genres = self.vocabs.get(super::GENRE).expect("schema has genre");
        for item in &self.catalog.items {
            if genres.index_of(&item.genre).is_none() {
                return Err(FeatureError::Schema(format!("catalog genre {:?} not in vocabulary", item.genre)));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn vocabularies(&self) -> &Vocabularies {
        &self.vocabs
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn context_layout(&self) -> &Layout {
        &self.context
    }

    pub fn content_layout(&self) -> &Layout {
        &self.content
    }

    /// |C|
    pub fn context_dim(&self) -> usize {
        self.context.dim
    }

    /// |I|
    pub fn content_dim(&self) -> usize {
        self.content.dim
    }

    pub fn encode_context(&self, src: &dyn AttrSource) -> Result<SparseVec> {
        self.encode(&self.context, src)
    }

    pub fn encode_content(&self, src: &dyn AttrSource) -> Result<SparseVec> {
        self.encode(&self.content, src)
    }

    pub fn encode_catalog_item(&self, id: usize) -> Result<SparseVec> {
        let item = &self.catalog.items[id];
        self.encode_content(&ContentRef {
            genre: &item.genre,
            top_genre: &item.top_genre,
        })
    }

    fn encode(&self, layout: &Layout, src: &dyn AttrSource) -> Result<SparseVec> {
        let mut entries = Vec::new();
        let mut members = Vec::new();
        for block in &layout.blocks {
            // Absent attributes leave their block empty.
            let Some(value) = src.attr(&block.name) else { continue };
            match block.kind {
                AttrKind::Binary => {
                    let raw = match &value {
                        AttrValue::Single(s) => *s,
                        AttrValue::Multi(_) => {
                            return Err(FeatureError::InvalidValue {
                                attribute: block.name.clone(),
                                value: "<multiple values>".into(),
                            })
                        }
                    };
                    if parse_binary(&block.name, raw)? {
                        entries.push((block.offset, 1.0));
                    }
                }
                kind => {
                    let vocab = self.vocabs.get(&block.name).expect("layout built from vocabularies");
                    members.clear();
                    for m in value.members(kind) {
                        members.push(vocab.index_of(m).unwrap_or(vocab.oov_index()));
                    }
                    if kind == AttrKind::MultiCategorical && members.is_empty() {
                        return Err(FeatureError::InvalidValue {
                            attribute: block.name.clone(),
                            value: String::new(),
                        });
                    }
                    members.sort_unstable();
                    members.dedup();
                    entries.extend(members.iter().map(|&i| (block.offset + i, 1.0)));
                }
            }
        }
        SparseVec::new(layout.dim, entries)
    }
}
