use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;

use super::{FeatureError, Result};

pub const HOUSEHOLD_ID: &str = "household_id";
pub const VIEWER_IDS: &str = "viewer_ids";
pub const GENRE: &str = "genre";
pub const TOP_GENRE: &str = "top_genre";
pub const DAY_OF_WEEK: &str = "day_of_week";
pub const TIME_SLOT: &str = "time_slot";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Categorical,
    MultiCategorical,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Context,
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttrKind,
    pub side: Side,
}

impl AttributeDef {
    pub fn new(name: &str, kind: AttrKind, side: Side) -> Self {
        AttributeDef {
            name: name.to_string(),
            kind,
            side,
        }
    }
}

/// Ordered attribute list. The order fixes the sparse index layout of both
/// context and content vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub version: String,
    pub attributes: Vec<AttributeDef>,
}

impl Schema {
    pub fn new(version: &str, attributes: Vec<AttributeDef>) -> Result<Self> {
        let s = Schema {
            version: version.to_string(),
            attributes,
        };
        s.validate()?;
        Ok(s)
    }

    /// Nine context attributes plus genre and top-level genre.
    pub fn default_tv() -> Self {
        use AttrKind::*;
        use Side::*;
        Schema::new(
            "tv-v1",
            vec![
                AttributeDef::new(HOUSEHOLD_ID, Categorical, Context),
                AttributeDef::new(VIEWER_IDS, MultiCategorical, Context),
                AttributeDef::new("n_viewers", Categorical, Context),
                AttributeDef::new("child_present", Binary, Context),
                AttributeDef::new(DAY_OF_WEEK, Categorical, Context),
                AttributeDef::new(TIME_SLOT, Categorical, Context),
                AttributeDef::new("weekend", Binary, Context),
                AttributeDef::new("region", Categorical, Context),
                AttributeDef::new("household_size", Categorical, Context),
                AttributeDef::new(GENRE, Categorical, Content),
                AttributeDef::new(TOP_GENRE, Categorical, Content),
            ],
        )
        .expect("default schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            if a.name.is_empty() {
                return Err(FeatureError::Schema("empty attribute name".into()));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(FeatureError::Schema(format!("duplicate attribute {:?}", a.name)));
            }
            let fixed_side = match a.name.as_str() {
                HOUSEHOLD_ID | VIEWER_IDS => Some(Side::Context),
                GENRE | TOP_GENRE => Some(Side::Content),
                _ => None,
            };
            if let Some(side) = fixed_side {
                if a.side != side {
                    return Err(FeatureError::Schema(format!("{} must be a {side:?} attribute", a.name)));
                }
            }
            if a.name == VIEWER_IDS && a.kind != AttrKind::MultiCategorical {
                return Err(FeatureError::Schema(format!("{VIEWER_IDS} must be multi_categorical")));
            }
            if (a.name == GENRE || a.name == TOP_GENRE || a.name == HOUSEHOLD_ID)
                && a.kind != AttrKind::Categorical
            {
                return Err(FeatureError::Schema(format!("{} must be categorical", a.name)));
            }
            if a.side == Side::Content && a.name != GENRE && a.name != TOP_GENRE {
                return Err(FeatureError::Schema(format!(
                    "content attribute {:?} is not derivable from the catalog; only {GENRE} and {TOP_GENRE} are supported",
                    a.name
                )));
            }
        }
        if !self.attributes.iter().any(|a| a.name == GENRE) {
            return Err(FeatureError::Schema(format!("schema must contain {GENRE:?}")));
        }
        if !self.attributes.iter().any(|a| a.side == Side::Context) {
            return Err(FeatureError::Schema("schema needs at least one context attribute".into()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn side(&self, side: Side) -> impl Iterator<Item = &AttributeDef> {
        self.attributes.iter().filter(move |a| a.side == side)
    }

    /// Context attributes stored in [`ViewingEvent::attrs`](super::ViewingEvent),
    /// i.e. everything except the fixed event columns.
    pub fn extra_attributes(&self) -> impl Iterator<Item = &AttributeDef> {
        self.attributes
            .iter()
            .filter(|a| !matches!(a.name.as_str(), HOUSEHOLD_ID | VIEWER_IDS | GENRE | TOP_GENRE))
    }

    /// Stable hex digest of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&json);
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_nine_plus_two() {
        let s = Schema::default_tv();
        assert_eq!(s.side(Side::Context).count(), 9);
        assert_eq!(s.side(Side::Content).count(), 2);
        assert_eq!(s.extra_attributes().count(), 7);
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Schema::new(
            "x",
            vec![
                AttributeDef::new("a", AttrKind::Categorical, Side::Context),
                AttributeDef::new("a", AttrKind::Binary, Side::Context),
                AttributeDef::new(GENRE, AttrKind::Categorical, Side::Content),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, FeatureError::Schema(_)));
    }

    #[test]
    fn needs_both_sides() {
        assert!(Schema::new("x", vec![AttributeDef::new(GENRE, AttrKind::Categorical, Side::Content)]).is_err());
        assert!(Schema::new("x", vec![AttributeDef::new("a", AttrKind::Binary, Side::Context)]).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Schema::default_tv();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.version = "tv-v2".into();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn json_round_trip() {
        let s = Schema::default_tv();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"multi_categorical\""));
        let back: Schema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
