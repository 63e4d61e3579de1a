//! Shared fixtures for integration tests.
#![allow(dead_code)]

use jcce::datagen::{generate, genre_names, GenConfig, SlotRule};
use jcce::features::{filter_events, temporal_split, FeatureSpace, Schema, ViewingEvent, MIN_DURATION_MINUTES};
use jcce::model::{train, EncoderConfig, JcceModel, TrainConfig};

pub const PLANTED_SLOT: &str = "20:00";

/// Fully habitual data where every 20:00 draw is genre 5.
pub fn planted_config(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        n_households: 30,
        n_days: 14,
        habit_strength: 1.0,
        slot_rules: vec![SlotRule { slot: 40, genre: 5 }],
        ..GenConfig::default()
    }
}

pub fn planted_genre() -> String {
    genre_names(64, 8)[5].0.clone()
}

pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: vec![64, 64],
        out_dim: 16,
        ..EncoderConfig::default()
    }
}

pub fn planted_split(seed: u64) -> (Vec<ViewingEvent>, Vec<ViewingEvent>) {
    let events = filter_events(generate(&planted_config(seed)).unwrap(), MIN_DURATION_MINUTES, 1);
    temporal_split(events, 0.9).unwrap()
}

pub fn planted_model(seed: u64) -> JcceModel {
    let (train_events, _) = planted_split(seed);
    let space = FeatureSpace::fit(&train_events, &Schema::default_tv()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 15,
        seed,
        ..TrainConfig::default()
    };
    train(&train_events, space, small_encoder(), small_encoder(), &cfg).unwrap().0
}
