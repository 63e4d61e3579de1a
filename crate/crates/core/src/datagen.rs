//! Synthetic viewing logs with planted context → genre structure.
//!
//! Each event's genre is drawn, with probability `habit_strength`, from a
//! structured choice and otherwise uniformly from the whole catalog. The
//! structured choice mixes three sources:
//!
//! * a per-(daypart, weekday/weekend) genre affinity,
//! * a children's-genre boost when a child is among the viewers,
//! * per-household tastes that differ between daytime and evening.
//!
//! With `nonlinear_interaction`, one genre is strongly preferred only when a
//! child is watching on a weekend. Neither condition alone favours it, so a
//! model that is additive in its inputs cannot represent it.

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::features::ViewingEvent;
use crate::tensor::RngState;

#[derive(Debug, Error, PartialEq)]
#[error("invalid generator config: {0}")]
pub struct GenConfigError(String);

/// Forces every structured draw in `slot` to `genre` (index into the
/// generated genre list).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRule {
    pub slot: u32,
    pub genre: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n_households: usize,
    pub max_adults: usize,
    pub child_household_share: f64,
    pub max_children: usize,
    pub n_days: usize,
    pub n_genres: usize,
    pub n_top_genres: usize,
    pub n_regions: usize,
    pub events_per_household_per_day: f64,
    pub habit_strength: f64,
    pub nonlinear_interaction: bool,
    /// Adds events shorter than three minutes.
    pub noise_events: bool,
    pub start_date: NaiveDate,
    pub slot_rules: Vec<SlotRule>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 42,
            n_households: 200,
            max_adults: 3,
            child_household_share: 0.4,
            max_children: 2,
            n_days: 60,
            n_genres: 64,
            n_top_genres: 8,
            n_regions: 12,
            events_per_household_per_day: 12.5,
            habit_strength: 0.8,
            nonlinear_interaction: true,
            noise_events: false,
            start_date: NaiveDate::from_ymd_opt(2018, 6, 1).expect("valid date"),
            slot_rules: Vec::new(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenConfigError> {
        let fail = |m: &str| Err(GenConfigError(m.to_string()));
        if self.n_top_genres < 1 || self.n_genres < self.n_top_genres {
            return fail("need n_genres >= n_top_genres >= 1");
        }
        if !(0.0..=1.0).contains(&self.habit_strength) {
            return fail("habit_strength must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.child_household_share) {
            return fail("child_household_share must lie in [0, 1]");
        }
        if self.n_households == 0 || self.n_days == 0 || self.max_adults == 0 || self.n_regions == 0 {
            return fail("households, days, adults and regions must be positive");
        }
        if !(self.events_per_household_per_day > 0.0) {
            return fail("events_per_household_per_day must be positive");
        }
        for r in &self.slot_rules {
            if r.slot >= SLOTS_PER_DAY || r.genre >= self.n_genres {
                return fail("slot rule out of range");
            }
        }
        Ok(())
    }
}

pub const SLOTS_PER_DAY: u32 = 48;
const DAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
const TOP_NAMES: [&str; 8] = [
    "childrens",
    "news",
    "drama",
    "entertainment",
    "sport",
    "documentaries",
    "films",
    "music",
];

pub fn top_genre_name(k: usize) -> String {
    TOP_NAMES.get(k).map_or_else(|| format!("top{k:02}"), |s| s.to_string())
}

/// Genre `i` belongs to top-level genre `i mod n_top`.
pub fn genre_names(n_genres: usize, n_top: usize) -> Vec<(String, String)> {
    (0..n_genres)
        .map(|i| {
            let top = top_genre_name(i % n_top);
            (format!("{top}-{:02}", i / n_top), top)
        })
        .collect()
}

/// `"HH:MM"` label of a half-hour slot.
pub fn slot_label(slot: u32) -> String {
    format!("{:02}:{:02}", slot / 2, (slot % 2) * 30)
}

pub fn parse_slot_label(label: &str) -> Option<u32> {
    let (h, m) = label.split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && (m == 0 || m == 30)).then_some(h * 2 + m / 30)
}

/// Coarse time-of-day bucket used for the planted affinities.
pub fn daypart(slot: u32) -> usize {
    match slot / 2 {
        0..=5 => 0,
        6..=9 => 1,
        10..=15 => 2,
        16..=18 => 3,
        19..=22 => 4,
        _ => 5,
    }
}

const N_DAYPARTS: usize = 6;

fn slot_weight(slot: u32) -> f64 {
    match slot / 2 {
        0..=5 => 0.15,
        6..=8 => 1.0,
        9..=15 => 0.7,
        16..=17 => 1.2,
        18..=22 => 3.0,
        _ => 1.0,
    }
}

struct Household {
    id: String,
    adults: Vec<String>,
    children: Vec<String>,
    region: String,
    // Favourite genres for daytime (before 18:00) and evening.
    day_taste: [usize; 2],
    evening_taste: [usize; 2],
    kids_favourite: usize,
}

struct Structure {
    genres: Vec<(String, String)>,
    children_genres: Vec<usize>,
    // (daypart, weekend) → ranked genres with weights.
    affinity: Vec<Vec<(usize, f64)>>,
    conjunction_genre: usize,
    // Household favourites dealt from shuffled copies of the genre list, so
    // every genre is someone's favourite about equally often.
    taste_deck: Vec<usize>,
}

impl Structure {
    fn new(cfg: &GenConfig, rng: &mut RngState) -> Self {
        let genres = genre_names(cfg.n_genres, cfg.n_top_genres);
        let children_genres: Vec<usize> = (0..cfg.n_genres).filter(|g| g % cfg.n_top_genres == 0).collect();
        // A films genre when available, otherwise the last genre.
        let conjunction_genre = (0..cfg.n_genres)
            .find(|g| cfg.n_top_genres > 6 && g % cfg.n_top_genres == 6)
            .unwrap_or(cfg.n_genres - 1);
        // The conjunction genre has its own mechanism and stays out of the
        // general pools; children's genres join the slot affinities but not
        // household tastes (children have their own favourites). This keeps
        // every genre's marginal share similar.
        let pool = |exclude_children: bool| {
            let p: Vec<usize> = (0..cfg.n_genres)
                .filter(|g| *g != conjunction_genre && !(exclude_children && children_genres.contains(g)))
                .collect();
            if p.is_empty() {
                (0..cfg.n_genres).collect()
            } else {
                p
            }
        };
        // Each (daypart, weekend) cell favours its own run of genres from one
        // shuffled order. Run lengths are proportional to the cell's share of
        // viewing, so every genre receives a similar amount of affinity mass.
        let mut order = pool(false);
        order.shuffle(rng);
        let n_general = order.len();
        let cells = N_DAYPARTS * 2;
        let mut traffic = vec![0.0; cells];
        for slot in 0..SLOTS_PER_DAY {
            let d = daypart(slot);
            traffic[d * 2] += 5.0 * slot_weight(slot);
            traffic[d * 2 + 1] += 2.0 * slot_weight(slot);
        }
        let total: f64 = traffic.iter().sum();
        let mut cum = 0.0;
        let mut prev = 0;
        let affinity = traffic
            .iter()
            .map(|t| {
                cum += t;
                let end = ((cum / total) * n_general as f64).round() as usize;
                let run: Vec<usize> = if end > prev {
                    order[prev..end].to_vec()
                } else {
                    vec![order[prev.min(n_general - 1)]]
                };
                prev = end.max(prev);
                let k = run.len();
                run.into_iter()
                    .enumerate()
                    .map(|(j, g)| (g, 1.0 - 0.5 * j as f64 / (k.max(2) - 1) as f64))
                    .collect()
            })
            .collect();
        let mut taste_deck = Vec::with_capacity(4 * cfg.n_households + cfg.n_genres);
        while taste_deck.len() < 4 * cfg.n_households {
            let mut perm = pool(true);
            perm.shuffle(rng);
            taste_deck.extend(perm);
        }
        Structure {
            genres,
            children_genres,
            affinity,
            conjunction_genre,
            taste_deck,
        }
    }
}

fn weighted<R: Rng>(rng: &mut R, items: &[(usize, f64)]) -> usize {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for &(g, w) in items {
        if u < w {
            return g;
        }
        u -= w;
    }
    items.last().expect("nonempty").0
}

fn household(cfg: &GenConfig, st: &Structure, index: usize, rng: &mut RngState) -> Household {
    let id = format!("h{index:04}");
    let n_adults = rng.random_range(1..=cfg.max_adults);
    let n_children = if cfg.max_children > 0 && rng.random::<f64>() < cfg.child_household_share {
        rng.random_range(1..=cfg.max_children)
    } else {
        0
    };
    let deal = &st.taste_deck[4 * index..4 * index + 4];
    let day_taste = [deal[0], deal[1]];
    let evening_taste = [deal[2], deal[3]];
    let kids: Vec<usize> = (0..cfg.n_genres).filter(|g| g % cfg.n_top_genres == 0).collect();
    let kids_favourite = *kids.choose(rng).expect("at least one children's genre");
    Household {
        adults: (1..=n_adults).map(|a| format!("{id}-a{a}")).collect(),
        children: (1..=n_children).map(|c| format!("{id}-c{c}")).collect(),
        region: format!("r{:02}", rng.random_range(0..cfg.n_regions)),
        id,
        day_taste,
        evening_taste,
        kids_favourite,
    }
}

fn size_band(n: usize) -> &'static str {
    match n {
        0 | 1 => "1",
        2 => "2",
        3 | 4 => "3-4",
        _ => "5+",
    }
}

fn viewers_band(n: usize) -> &'static str {
    match n {
        0 | 1 => "1",
        2 => "2",
        _ => "3+",
    }
}

#[allow(clippy::too_many_arguments)]
fn choose_genre(
    cfg: &GenConfig,
    st: &Structure,
    hh: &Household,
    slot: u32,
    weekend: bool,
    child_present: bool,
    rng: &mut RngState,
) -> usize {
    if rng.random::<f64>() >= cfg.habit_strength {
        return rng.random_range(0..cfg.n_genres);
    }
    if let Some(rule) = cfg.slot_rules.iter().find(|r| r.slot == slot) {
        return rule.genre;
    }
    if cfg.nonlinear_interaction && weekend && child_present && rng.random::<f64>() < 0.4 {
        return st.conjunction_genre;
    }
    let u = rng.random::<f64>();
    if child_present && u < 0.3 {
        if rng.random::<f64>() < 0.5 {
            hh.kids_favourite
        } else {
            *st.children_genres.choose(rng).expect("nonempty")
        }
    } else if u < 0.55 {
        let cell = daypart(slot) * 2 + weekend as usize;
        weighted(rng, &st.affinity[cell])
    } else {
        let taste = if slot < 36 { &hh.day_taste } else { &hh.evening_taste };
        taste[(rng.random::<f64>() < 0.35) as usize]
    }
}

/// Generates the full event log, sorted by timestamp.
pub fn generate(cfg: &GenConfig) -> Result<Vec<ViewingEvent>, GenConfigError> {
    cfg.validate()?;
    let st = Structure::new(cfg, &mut RngState::derived(cfg.seed, "datagen/structure"));
    let slot_weights: Vec<(usize, f64)> = (0..SLOTS_PER_DAY).map(|s| (s as usize, slot_weight(s))).collect();
    let per_day = Poisson::new(cfg.events_per_household_per_day).map_err(|e| GenConfigError(e.to_string()))?;
    let start: DateTime<Utc> = cfg
        .start_date
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc();

    let mut events = Vec::new();
    for h in 0..cfg.n_households {
        let mut rng = RngState::derived(cfg.seed, &format!("datagen/household/{h}"));
        let hh = household(cfg, &st, h, &mut rng);
        let size = size_band(hh.adults.len() + hh.children.len());
        for day in 0..cfg.n_days {
            let date = start + Duration::days(day as i64);
            let dow = date.weekday().num_days_from_monday() as usize;
            let weekend = dow >= 5;
            let n = per_day.sample(&mut rng) as usize;
            for _ in 0..n {
                let slot = weighted(&mut rng, &slot_weights) as u32;
                let hour = slot / 2;
                let mut viewers = BTreeSet::new();
                let kid_hours = (7..=20).contains(&hour);
                let kid_prob = if weekend { 0.7 } else { 0.5 };
                if !hh.children.is_empty() && kid_hours && rng.random::<f64>() < kid_prob {
                    viewers.insert(hh.children.choose(&mut rng).expect("nonempty").clone());
                    for a in &hh.adults {
                        if rng.random::<f64>() < 0.4 {
                            viewers.insert(a.clone());
                        }
                    }
                } else {
                    viewers.insert(hh.adults.choose(&mut rng).expect("nonempty").clone());
                    for a in &hh.adults {
                        if rng.random::<f64>() < 0.25 {
                            viewers.insert(a.clone());
                        }
                    }
                }
                let child_present = viewers.iter().any(|v| hh.children.contains(v));
                let genre = choose_genre(cfg, &st, &hh, slot, weekend, child_present, &mut rng);
                let minute = rng.random_range(0..30);
                let timestamp = date + Duration::minutes(slot as i64 * 30 + minute);
                let duration = rng.random_range(3..=120);
                let attrs: BTreeMap<String, String> = [
                    ("n_viewers", viewers_band(viewers.len()).to_string()),
                    ("child_present", (child_present as u8).to_string()),
                    ("day_of_week", DAYS[dow].to_string()),
                    ("time_slot", slot_label(slot)),
                    ("weekend", (weekend as u8).to_string()),
                    ("region", hh.region.clone()),
                    ("household_size", size.to_string()),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
                let (g, top) = &st.genres[genre];
                let event = ViewingEvent {
                    timestamp,
                    household_id: hh.id.clone(),
                    viewer_ids: viewers,
                    duration_minutes: duration,
                    attrs,
                    genre: g.clone(),
                    top_genre: top.clone(),
                };
                if cfg.noise_events && rng.random::<f64>() < 0.1 {
                    let mut short = event.clone();
                    short.duration_minutes = rng.random_range(1..=2);
                    short.timestamp += Duration::minutes(1);
                    events.push(short);
                }
                events.push(event);
            }
        }
    }
    events.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.household_id.cmp(&b.household_id))
    });
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{filter_events, MIN_DURATION_MINUTES};

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            seed,
            n_households: 20,
            n_days: 7,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn events_satisfy_invariants() {
        let events = generate(&small(1)).unwrap();
        assert!(!events.is_empty());
        let genres = genre_names(64, 8);
        for e in &events {
            e.check().unwrap();
            assert!(e.duration_minutes >= 3 && e.duration_minutes <= 120);
            let (_, top) = genres.iter().find(|(g, _)| *g == e.genre).unwrap();
            assert_eq!(*top, e.top_genre);
        }
        assert!(events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn passes_filter_unchanged_without_noise() {
        let events = generate(&small(2)).unwrap();
        assert_eq!(filter_events(events.clone(), MIN_DURATION_MINUTES, 1), events);
    }

    #[test]
    fn noise_switch_produces_short_events() {
        let cfg = GenConfig {
            noise_events: true,
            ..small(2)
        };
        let events = generate(&cfg).unwrap();
        assert!(events.iter().any(|e| e.duration_minutes < 3));
        let filtered = filter_events(events, MIN_DURATION_MINUTES, 1);
        assert!(filtered.iter().all(|e| e.duration_minutes >= 3));
    }

    #[test]
    fn planted_slot_rule_is_absolute_at_full_habit() {
        let cfg = GenConfig {
            habit_strength: 1.0,
            slot_rules: vec![SlotRule { slot: 40, genre: 5 }],
            ..small(9)
        };
        let planted = &genre_names(64, 8)[5].0;
        let events = generate(&cfg).unwrap();
        let in_slot: Vec<_> = events.iter().filter(|e| e.attrs["time_slot"] == "20:00").collect();
        assert!(in_slot.len() > 20);
        assert!(in_slot.iter().all(|e| &e.genre == planted));
    }

    #[test]
    fn config_validation() {
        let bad = GenConfig {
            n_genres: 4,
            n_top_genres: 5,
            ..GenConfig::default()
        };
        assert!(generate(&bad).is_err());
        let bad = GenConfig {
            habit_strength: 1.5,
            ..GenConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn slot_labels_round_trip() {
        for s in 0..SLOTS_PER_DAY {
            assert_eq!(parse_slot_label(&slot_label(s)), Some(s));
        }
        assert_eq!(slot_label(39), "19:30");
        assert_eq!(parse_slot_label("19:15"), None);
    }

    #[test]
    fn default_scale_is_desk_sized() {
        let cfg = GenConfig::default();
        let expected = cfg.n_households as f64 * cfg.n_days as f64 * cfg.events_per_household_per_day;
        assert!((140_000.0..160_000.0).contains(&expected));
    }
}
