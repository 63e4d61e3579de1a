use chrono::{DateTime, Utc};
use std::collections::{BTreeMap, BTreeSet};

use super::schema::{AttrKind, Schema, GENRE, HOUSEHOLD_ID, TOP_GENRE, VIEWER_IDS};
use super::{FeatureError, Result};

/// One logged (context, content) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewingEvent {
    pub timestamp: DateTime<Utc>,
    pub household_id: String,
    pub viewer_ids: BTreeSet<String>,
    pub duration_minutes: u32,
    /// Remaining context attributes keyed by schema name.
    pub attrs: BTreeMap<String, String>,
    pub genre: String,
    pub top_genre: String,
}

impl ViewingEvent {
    pub fn check(&self) -> Result<()> {
        if self.viewer_ids.is_empty() {
            return Err(FeatureError::InvalidValue {
                attribute: VIEWER_IDS.into(),
                value: String::new(),
            });
        }
        if self.duration_minutes < 1 {
            return Err(FeatureError::InvalidValue {
                attribute: "duration_min".into(),
                value: self.duration_minutes.to_string(),
            });
        }
        Ok(())
    }

    /// Key identifying the exact context of this event (every context
    /// attribute value, in schema order).
    pub fn context_key(&self, schema: &Schema) -> String {
        let mut key = String::new();
        for a in schema.side(super::Side::Context) {
            match self.attr(&a.name) {
                Some(AttrValue::Single(s)) => key.push_str(s),
                Some(AttrValue::Multi(v)) => key.push_str(&v.join("|")),
                None => {}
            }
            key.push('\u{1f}');
        }
        key
    }
}

/// A borrowed attribute value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrValue<'a> {
    Single(&'a str),
    Multi(Vec<&'a str>),
}

impl<'a> AttrValue<'a> {
    /// Member values; a single value of a multi-categorical attribute is
    /// split on `|`.
    pub fn members(&self, kind: AttrKind) -> Vec<&'a str> {
        match self {
            AttrValue::Single(s) if kind == AttrKind::MultiCategorical => {
                s.split('|').filter(|m| !m.is_empty()).collect()
            }
            AttrValue::Single(s) => vec![s],
            AttrValue::Multi(v) => v.clone(),
        }
    }
}

/// Anything that can answer "what is the value of attribute `name`".
pub trait AttrSource {
    fn attr(&self, name: &str) -> Option<AttrValue<'_>>;
}

impl AttrSource for ViewingEvent {
    fn attr(&self, name: &str) -> Option<AttrValue<'_>> {
        match name {
            HOUSEHOLD_ID => Some(AttrValue::Single(&self.household_id)),
            VIEWER_IDS => Some(AttrValue::Multi(self.viewer_ids.iter().map(String::as_str).collect())),
            GENRE => Some(AttrValue::Single(&self.genre)),
            TOP_GENRE => Some(AttrValue::Single(&self.top_genre)),
            other => self.attrs.get(other).map(|v| AttrValue::Single(v)),
        }
    }
}

/// Ad-hoc context given as raw `name -> value` strings, as received from the
/// command line or an HTTP request. Multi-valued attributes are `|`-separated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextQuery(pub BTreeMap<String, String>);

impl ContextQuery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: &str) -> Self {
        self.0.insert(name.to_string(), value.to_string());
        self
    }

    /// Parses `name=value` pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<Self> {
        let mut q = ContextQuery::new();
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| FeatureError::Config(format!("expected name=value, got {p:?}")))?;
            q.0.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(q)
    }

    /// Rejects names that are not context attributes of `schema`.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for name in self.0.keys() {
            match schema.get(name) {
                Some(a) if a.side == super::Side::Context => {}
                _ => return Err(FeatureError::UnknownAttribute(name.clone())),
            }
        }
        Ok(())
    }

    /// Context of an observed event as a query.
    pub fn from_event(event: &ViewingEvent, schema: &Schema) -> Self {
        let mut q = ContextQuery::new();
        for a in schema.side(super::Side::Context) {
            if let Some(v) = event.attr(&a.name) {
                q.0.insert(a.name.clone(), v.members(a.kind).join("|"));
            }
        }
        q
    }
}

impl AttrSource for ContextQuery {
    fn attr(&self, name: &str) -> Option<AttrValue<'_>> {
        self.0.get(name).map(|v| AttrValue::Single(v))
    }
}

/// Content described by its genre and top-level genre.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentRef<'a> {
    pub genre: &'a str,
    pub top_genre: &'a str,
}

impl AttrSource for ContentRef<'_> {
    fn attr(&self, name: &str) -> Option<AttrValue<'_>> {
        match name {
            GENRE => Some(AttrValue::Single(self.genre)),
            TOP_GENRE => Some(AttrValue::Single(self.top_genre)),
            _ => None,
        }
    }
}

pub(crate) fn parse_binary(attribute: &str, value: &str) -> Result<bool> {
    match value {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(FeatureError::InvalidValue {
            attribute: attribute.to_string(),
            value: value.to_string(),
        }),
    }
}
