//! Statistical properties of the synthetic generator at full scale.

use std::collections::HashMap;

use jcce::datagen::{generate, genre_names, GenConfig};
use jcce::features::ViewingEvent;

/// Upper 1% point of χ² with 63 degrees of freedom.
const CHI2_63_P01: f64 = 92.010;

fn share(events: &[&ViewingEvent], pred: impl Fn(&ViewingEvent) -> bool) -> f64 {
    events.iter().filter(|e| pred(e)).count() as f64 / events.len() as f64
}

#[test]
fn marginals_are_uniform_without_habit() {
    let cfg = GenConfig {
        habit_strength: 0.0,
        n_days: 45,
        ..GenConfig::default()
    };
    let events = generate(&cfg).unwrap();
    assert!(events.len() >= 100_000, "{} events", events.len());
    let mut counts: HashMap<&str, f64> = HashMap::new();
    for e in &events {
        *counts.entry(e.genre.as_str()).or_default() += 1.0;
    }
    assert_eq!(counts.len(), 64);
    let expected = events.len() as f64 / 64.0;
    let chi2: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_63_P01, "χ² = {chi2:.1}");
}

#[test]
fn children_watch_more_childrens_genres() {
    let events = generate(&GenConfig::default()).unwrap();
    assert!(events.len() >= 50_000);
    let (with, without): (Vec<&ViewingEvent>, Vec<&ViewingEvent>) =
        events.iter().partition(|e| e.attrs["child_present"] == "1");
    let kids = |e: &ViewingEvent| e.top_genre == "childrens";
    let (a, b) = (share(&with, kids), share(&without, kids));
    assert!(a > b, "child present {a:.3} vs absent {b:.3}");
}

#[test]
fn conjunction_genre_needs_both_conditions() {
    let events = generate(&GenConfig::default()).unwrap();
    let special = genre_names(64, 8)[6].0.clone();
    let cell = |child: &str, weekend: &str| -> f64 {
        let sel: Vec<&ViewingEvent> = events
            .iter()
            .filter(|e| e.attrs["child_present"] == child && e.attrs["weekend"] == weekend)
            .collect();
        share(&sel, |e| e.genre == special)
    };
    let both = cell("1", "1");
    for (c, w) in [("0", "0"), ("0", "1"), ("1", "0")] {
        let other = cell(c, w);
        assert!(both > 5.0 * other, "both {both:.3} vs child={c} weekend={w} {other:.3}");
    }

    // Without the flag the genre is ordinary.
    let plain = generate(&GenConfig {
        nonlinear_interaction: false,
        ..GenConfig::default()
    })
    .unwrap();
    let n = plain
        .iter()
        .filter(|e| e.attrs["child_present"] == "1" && e.attrs["weekend"] == "1")
        .count() as f64;
    let hits = plain
        .iter()
        .filter(|e| e.attrs["child_present"] == "1" && e.attrs["weekend"] == "1" && e.genre == special)
        .count() as f64;
    assert!(hits / n < both / 5.0);
}
