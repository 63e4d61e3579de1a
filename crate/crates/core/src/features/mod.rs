//! Viewing events and their encoding into sparse model inputs.
//!
//! A [`Schema`] declares the attributes of an event and which side (context
//! or content) they belong to. [`FeatureSpace::fit`] indexes training events
//! and afterwards encodes any event or ad-hoc [`ContextQuery`] into a
//! [`SparseVec`]. This module also owns the event-log CSV format and the
//! preparation steps applied before training: [`filter_events`] and
//! [`temporal_split`].

mod csvio;
mod encode;
mod event;
mod schema;
mod vocab;

pub use csvio::{load_events, read_events, save_events, write_events};
pub use encode::{to_rows, Block, Catalog, CatalogItem, FeatureSpace, Layout, SparseVec};
pub use event::{AttrSource, AttrValue, ContentRef, ContextQuery, ViewingEvent};
pub use schema::{
    AttrKind, AttributeDef, Schema, Side, DAY_OF_WEEK, GENRE, HOUSEHOLD_ID, TIME_SLOT, TOP_GENRE, VIEWER_IDS,
};
pub use vocab::{build_vocabularies, CategoryMap, Vocabularies};

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("event {position} has no value for attribute {attribute:?}")]
    MissingAttribute { attribute: String, position: usize },
    #[error("invalid value {value:?} for attribute {attribute:?}")]
    InvalidValue { attribute: String, value: String },
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Minimum viewing duration in minutes; shorter events are treated as
/// non-engagement.
pub const MIN_DURATION_MINUTES: u32 = 3;

/// Drops events shorter than `min_duration` minutes, then drops every event
/// whose genre has fewer than `min_content_count` remaining observations.
/// Order is preserved.
pub fn filter_events(events: Vec<ViewingEvent>, min_duration: u32, min_content_count: usize) -> Vec<ViewingEvent> {
    let kept: Vec<ViewingEvent> = events
        .into_iter()
        .filter(|e| e.duration_minutes >= min_duration)
        .collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &kept {
        *counts.entry(e.genre.as_str()).or_insert(0) += 1;
    }
    let rare: std::collections::HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c < min_content_count)
        .map(|(g, _)| g.to_string())
        .collect();
    kept.into_iter().filter(|e| !rare.contains(&e.genre)).collect()
}

/// Sorts by timestamp (stable) and puts the first `⌊fraction·n⌋` events in
/// the training set, the rest in the test set.
pub fn temporal_split(
    mut events: Vec<ViewingEvent>,
    train_fraction: f64,
) -> Result<(Vec<ViewingEvent>, Vec<ViewingEvent>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FeatureError::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    events.sort_by_key(|e| e.timestamp);
    let n_train = (train_fraction * events.len() as f64).floor() as usize;
    let test = events.split_off(n_train);
    Ok((events, test))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::ViewingEvent;
    use chrono::{TimeZone, Utc};

    pub fn event(genre: &str, top: &str) -> ViewingEvent {
        let attrs = [
            ("n_viewers", "1"),
            ("child_present", "0"),
            ("day_of_week", "Mon"),
            ("time_slot", "20:00"),
            ("weekend", "0"),
            ("region", "r1"),
            ("household_size", "2"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        ViewingEvent {
            timestamp: Utc.with_ymd_and_hms(2018, 6, 4, 20, 0, 0).unwrap(),
            household_id: "h1".into(),
            viewer_ids: ["u1".to_string()].into_iter().collect(),
            duration_minutes: 30,
            attrs,
            genre: genre.into(),
            top_genre: top.into(),
        }
    }
}
