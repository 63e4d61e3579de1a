//! Event-log CSV.
//!
//! Columns: `timestamp` (RFC 3339, UTC), `household_id`, `viewer_ids`
//! (`|`-separated), `duration_min`, one column per remaining schema
//! attribute in schema order, `genre`, `top_genre`.

use chrono::{DateTime, SecondsFormat, Utc};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use super::event::ViewingEvent;
use super::schema::Schema;
use super::{FeatureError, Result};

const TIMESTAMP: &str = "timestamp";
const DURATION: &str = "duration_min";

fn header(schema: &Schema) -> Vec<String> {
    let mut cols = vec![
        TIMESTAMP.to_string(),
        super::HOUSEHOLD_ID.to_string(),
        super::VIEWER_IDS.to_string(),
        DURATION.to_string(),
    ];
    cols.extend(schema.extra_attributes().map(|a| a.name.clone()));
    cols.push(super::GENRE.to_string());
    cols.push(super::TOP_GENRE.to_string());
    cols
}

pub fn write_events<W: Write>(events: &[ViewingEvent], schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let cols = header(schema);
    w.write_record(&cols)?;
    let extras: Vec<&str> = schema.extra_attributes().map(|a| a.name.as_str()).collect();
    for (position, e) in events.iter().enumerate() {
        e.check()?;
        if let Some(v) = e.viewer_ids.iter().find(|v| v.contains('|') || v.is_empty()) {
            return Err(FeatureError::InvalidValue {
                attribute: super::VIEWER_IDS.into(),
                value: v.clone(),
            });
        }
        let mut rec: Vec<String> = Vec::with_capacity(cols.len());
        rec.push(e.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true));
        rec.push(e.household_id.clone());
        rec.push(e.viewer_ids.iter().cloned().collect::<Vec<_>>().join("|"));
        rec.push(e.duration_minutes.to_string());
        for name in &extras {
            let v = e.attrs.get(*name).ok_or_else(|| FeatureError::MissingAttribute {
                attribute: name.to_string(),
                position,
            })?;
            rec.push(v.clone());
        }
        rec.push(e.genre.clone());
        rec.push(e.top_genre.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_events(events: &[ViewingEvent], schema: &Schema, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_events(events, schema, std::io::BufWriter::new(f))
}

pub fn read_events<R: Read>(input: R, schema: &Schema) -> Result<Vec<ViewingEvent>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = header(schema);
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    for col in &found {
        if !expected.contains(col) {
            return Err(FeatureError::UnknownColumn(col.clone()));
        }
    }
    let mut pos = BTreeMap::new();
    for col in &expected {
        let i = found
            .iter()
            .position(|c| c == col)
            .ok_or_else(|| FeatureError::MissingColumn(col.clone()))?;
        pos.insert(col.as_str(), i);
    }
    let extras: Vec<&str> = schema.extra_attributes().map(|a| a.name.as_str()).collect();

    let mut events = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            FeatureError::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| FeatureError::Parse { line, message };
        let field = |name: &str| rec.get(pos[name]).unwrap_or("");

        let timestamp = DateTime::parse_from_rfc3339(field(TIMESTAMP))
            .map_err(|e| err(format!("bad timestamp {:?}: {e}", field(TIMESTAMP))))?
            .with_timezone(&Utc);
        let household_id = field(super::HOUSEHOLD_ID).to_string();
        if household_id.is_empty() {
            return Err(err("empty household_id".into()));
        }
        let viewer_ids: BTreeSet<String> = field(super::VIEWER_IDS)
            .split('|')
            .filter(|v| !v.is_empty())
            .map(str::to_string)
            .collect();
        if viewer_ids.is_empty() {
            return Err(err("empty viewer list".into()));
        }
        let duration_minutes: u32 = field(DURATION)
            .parse()
            .map_err(|_| err(format!("bad duration {:?}", field(DURATION))))?;
        if duration_minutes < 1 {
            return Err(err("duration must be at least one minute".into()));
        }
        let attrs = extras
            .iter()
            .map(|name| (name.to_string(), field(name).to_string()))
            .collect();
        let genre = field(super::GENRE).to_string();
        let top_genre = field(super::TOP_GENRE).to_string();
        if genre.is_empty() || top_genre.is_empty() {
            return Err(err("empty genre or top_genre".into()));
        }
        events.push(ViewingEvent {
            timestamp,
            household_id,
            viewer_ids,
            duration_minutes,
            attrs,
            genre,
            top_genre,
        });
    }
    Ok(events)
}

pub fn load_events(path: &Path, schema: &Schema) -> Result<Vec<ViewingEvent>> {
    let f = std::fs::File::open(path)?;
    read_events(std::io::BufReader::new(f), schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::testutil::event;
    use proptest::prelude::*;

    fn header_line() -> String {
        header(&Schema::default_tv()).join(",")
    }

    #[test]
    fn pipe_separated_viewers() {
        let csv = format!(
            "{}\n2018-06-04T20:00:00Z,h1,u1|u2,30,2,0,Mon,20:00,0,r1,2,drama-1,drama\n",
            header_line()
        );
        let events = read_events(csv.as_bytes(), &Schema::default_tv()).unwrap();
        let expected: BTreeSet<String> = ["u1", "u2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(events[0].viewer_ids, expected);
    }

    #[test]
    fn empty_viewer_list_is_parse_error() {
        let csv = format!(
            "{}\n2018-06-04T20:00:00Z,h1,u1,30,1,0,Mon,20:00,0,r1,2,a,x\n2018-06-04T20:00:00Z,h1,,30,1,0,Mon,20:00,0,r1,2,a,x\n",
            header_line()
        );
        match read_events(csv.as_bytes(), &Schema::default_tv()) {
            Err(FeatureError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_column_rejected() {
        let csv = format!("{},extra\n", header_line());
        assert!(matches!(
            read_events(csv.as_bytes(), &Schema::default_tv()),
            Err(FeatureError::UnknownColumn(c)) if c == "extra"
        ));
    }

    #[test]
    fn missing_column_rejected() {
        let csv = "timestamp,household_id\n";
        assert!(matches!(
            read_events(csv.as_bytes(), &Schema::default_tv()),
            Err(FeatureError::MissingColumn(_))
        ));
    }

    #[test]
    fn malformed_duration_reports_line() {
        let csv = format!(
            "{}\n2018-06-04T20:00:00Z,h1,u1,abc,1,0,Mon,20:00,0,r1,2,a,x\n",
            header_line()
        );
        match read_events(csv.as_bytes(), &Schema::default_tv()) {
            Err(FeatureError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("duration"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_event() -> impl Strategy<Value = ViewingEvent> {
        (
            0i64..2_000_000_000,
            "[a-z0-9]{1,6}",
            prop::collection::btree_set("[a-z0-9,\" ]{1,5}", 1..4),
            1u32..500,
            "[A-Za-z ,]{0,6}",
            "[a-z-]{1,8}",
        )
            .prop_map(|(ts, hh, viewers, dur, region, genre)| {
                let mut e = event(&genre, "top");
                e.timestamp = DateTime::from_timestamp(ts, 0).unwrap();
                e.household_id = hh;
                e.viewer_ids = viewers;
                e.duration_minutes = dur;
                e.attrs.insert("region".into(), region);
                e
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(events in prop::collection::vec(arb_event(), 0..20)) {
            let schema = Schema::default_tv();
            let mut buf = Vec::new();
            write_events(&events, &schema, &mut buf).unwrap();
            let back = read_events(buf.as_slice(), &schema).unwrap();
            prop_assert_eq!(back, events);
        }
    }
}
