use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::event::{parse_binary, AttrSource, ViewingEvent};
use super::schema::{AttrKind, Schema};
use super::{FeatureError, Result};

/// Dense index map for one categorical attribute. Index `cardinality()` is
/// reserved for out-of-vocabulary values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CategoryRepr", into = "CategoryRepr")]
pub struct CategoryMap {
    values: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CategoryRepr {
    values: Vec<String>,
    counts: Vec<u64>,
}

impl From<CategoryRepr> for CategoryMap {
    fn from(r: CategoryRepr) -> Self {
        let index = r.values.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        CategoryMap {
            values: r.values,
            counts: r.counts,
            index,
        }
    }
}

impl From<CategoryMap> for CategoryRepr {
    fn from(m: CategoryMap) -> Self {
        CategoryRepr {
            values: m.values,
            counts: m.counts,
        }
    }
}

impl CategoryMap {
    fn from_counts(counts: BTreeMap<String, u64>) -> Self {
        let (values, counts): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        CategoryRepr { values, counts }.into()
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.index.get(value).copied()
    }

    pub fn oov_index(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, index: usize) -> Option<&str> {
        self.values.get(index).map(String::as_str)
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }
}

/// Vocabularies for every categorical and multi-categorical attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub maps: BTreeMap<String, CategoryMap>,
}

impl Vocabularies {
    pub fn get(&self, attribute: &str) -> Option<&CategoryMap> {
        self.maps.get(attribute)
    }
}

/// Indexes every observed value, sorted lexicographically.
pub fn build_vocabularies(events: &[ViewingEvent], schema: &Schema) -> Result<Vocabularies> {
    if events.is_empty() {
        return Err(FeatureError::Config("cannot build vocabularies from zero events".into()));
    }
    let mut counts: BTreeMap<&str, BTreeMap<String, u64>> = BTreeMap::new();
    for a in &schema.attributes {
        if a.kind != AttrKind::Binary {
            counts.insert(a.name.as_str(), BTreeMap::new());
        }
    }
    for (position, event) in events.iter().enumerate() {
        for a in &schema.attributes {
            let value = event.attr(&a.name).ok_or_else(|| FeatureError::MissingAttribute {
                attribute: a.name.clone(),
                position,
            })?;
            match a.kind {
                AttrKind::Binary => {
                    if let super::AttrValue::Single(v) = value {
                        parse_binary(&a.name, v)?;
                    }
                }
                kind => {
                    let map = counts.get_mut(a.name.as_str()).expect("initialised above");
                    for m in value.members(kind) {
                        *map.entry(m.to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    Ok(Vocabularies {
        maps: counts
            .into_iter()
            .map(|(k, v)| (k.to_string(), CategoryMap::from_counts(v)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::testutil::event;

    #[test]
    fn genres_sorted() {
        let schema = Schema::default_tv();
        let events = vec![event("news", "news"), event("drama", "drama")];
        let v = build_vocabularies(&events, &schema).unwrap();
        let g = v.get("genre").unwrap();
        assert_eq!(g.index_of("drama"), Some(0));
        assert_eq!(g.index_of("news"), Some(1));
        assert_eq!(g.oov_index(), 2);
    }

    #[test]
    fn single_event_cardinalities() {
        let schema = Schema::default_tv();
        let e = event("news", "news");
        let v = build_vocabularies(std::slice::from_ref(&e), &schema).unwrap();
        assert_eq!(v.get("viewer_ids").unwrap().cardinality(), e.viewer_ids.len());
        for name in ["household_id", "day_of_week", "time_slot", "genre", "top_genre"] {
            assert_eq!(v.get(name).unwrap().cardinality(), 1, "{name}");
        }
        assert!(v.get("weekend").is_none());
    }

    #[test]
    fn deterministic() {
        let schema = Schema::default_tv();
        let events = vec![event("b", "x"), event("a", "x"), event("c", "y")];
        assert_eq!(
            build_vocabularies(&events, &schema).unwrap(),
            build_vocabularies(&events, &schema).unwrap()
        );
    }

    #[test]
    fn missing_attribute_names_position() {
        let schema = Schema::default_tv();
        let mut bad = event("a", "x");
        bad.attrs.remove("region");
        let err = build_vocabularies(&[event("a", "x"), bad], &schema).unwrap_err();
        match err {
            FeatureError::MissingAttribute { attribute, position } => {
                assert_eq!(attribute, "region");
                assert_eq!(position, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counts_recorded() {
        let schema = Schema::default_tv();
        let events = vec![event("a", "x"), event("a", "x"), event("b", "x")];
        let v = build_vocabularies(&events, &schema).unwrap();
        let g = v.get("genre").unwrap();
        assert_eq!(g.count(g.index_of("a").unwrap()), 2);
        assert_eq!(g.count(g.index_of("b").unwrap()), 1);
    }

    #[test]
    fn serde_rebuilds_index() {
        let schema = Schema::default_tv();
        let v = build_vocabularies(&[event("a", "x"), event("b", "y")], &schema).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabularies = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.get("genre").unwrap().index_of("b"), Some(1));
    }
}
