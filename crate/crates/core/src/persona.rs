//! Onboarding preferences and the response-style prompt they compile to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const PREFERENCES_SCHEMA_VERSION: u32 = 1;
const CATALOG_JSON: &str = include_str!("../data/catalog.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid `{field}`: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

fn reject(field: impl Into<String>, message: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.into(),
        message: message.into(),
    }
}

/// Picker options shared by the engine and the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub appearance: BTreeMap<String, Vec<String>>,
    pub backgrounds: Vec<String>,
    pub age_bands: Vec<String>,
    pub traits: Vec<String>,
}

impl Catalog {
    pub fn builtin() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| serde_json::from_str(CATALOG_JSON).expect("built-in catalog is valid JSON"))
    }

    pub fn raw_json() -> &'static str {
        CATALOG_JSON
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeBand {
    Child,
    Teen,
    YoungAdult,
    #[default]
    Adult,
    Senior,
}

impl AgeBand {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "child" => Self::Child,
            "teen" => Self::Teen,
            "young_adult" => Self::YoungAdult,
            "adult" => Self::Adult,
            "senior" => Self::Senior,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Child => "child",
            Self::Teen => "teen",
            Self::YoungAdult => "young_adult",
            Self::Adult => "adult",
            Self::Senior => "senior",
        }
    }

    /// Noun used in image prompts.
    pub fn noun(self) -> &'static str {
        match self {
            Self::Child => "child",
            Self::Teen => "teenager",
            Self::YoungAdult => "young adult",
            Self::Adult => "adult",
            Self::Senior => "older person",
        }
    }
}

/// Chatbot personality traits. Declaration order is the canonical precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Empathetic,
    Friendly,
    Detailed,
    Direct,
    Humorous,
    Calm,
}

impl Trait {
    pub const ALL: [Trait; 6] = [
        Trait::Empathetic,
        Trait::Friendly,
        Trait::Detailed,
        Trait::Direct,
        Trait::Humorous,
        Trait::Calm,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Empathetic => "empathetic",
            Self::Friendly => "friendly",
            Self::Detailed => "detailed",
            Self::Direct => "direct",
            Self::Humorous => "humorous",
            Self::Calm => "calm",
        }
    }

    pub fn directive(self) -> &'static str {
        match self {
            Self::Empathetic => "Respond with warmth and empathy; acknowledge the user's feelings before anything else.",
            Self::Friendly => "Keep a friendly, casual tone, like a close friend checking in.",
            Self::Detailed => "Give thoughtful, detailed answers that explore the situation from several angles.",
            Self::Direct => "Be direct and concise; get to the point in one or two sentences.",
            Self::Humorous => "Add light, gentle humor where it fits, never at the user's expense.",
            Self::Calm => "Use a calm, steady voice that helps the user slow down and breathe.",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const EXPRESSIVENESS_DIRECTIVES: [&str; 5] = [
    "Keep emotional language minimal and matter-of-fact.",
    "Express emotion sparingly and gently.",
    "Balance emotional expression with practical reflection.",
    "Be openly expressive about emotions and mirror the user's feelings.",
    "Be highly emotional and expressive, naming and validating every feeling the user shares.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preferences {
    pub schema_version: u32,
    pub user_id: String,
    pub age_band: AgeBand,
    pub appearance: BTreeMap<String, String>,
    pub background_aesthetic: String,
    pub traits: BTreeSet<Trait>,
    pub emotional_expressiveness: u8,
}

impl Default for Preferences {
    fn default() -> Self {
        Self {
            schema_version: PREFERENCES_SCHEMA_VERSION,
            user_id: String::new(),
            age_band: AgeBand::Adult,
            appearance: BTreeMap::new(),
            background_aesthetic: "cozy-room".to_string(),
            traits: BTreeSet::from([Trait::Friendly]),
            emotional_expressiveness: 3,
        }
    }
}

fn as_str<'a>(value: &'a Value, field: &str) -> Result<&'a str, ValidationError> {
    value
        .as_str()
        .ok_or_else(|| reject(field, "expected a string"))
}

/// Validates a raw JSON payload into [`Preferences`], filling defaults for
/// absent (or null) fields.
pub fn validate_preferences(raw: &Value) -> Result<Preferences, ValidationError> {
    let empty = Map::new();
    let obj = match raw {
        Value::Null => &empty,
        Value::Object(m) => m,
        _ => return Err(reject("preferences", "expected a JSON object")),
    };
    let catalog = Catalog::builtin();
    let mut prefs = Preferences::default();

    for (key, value) in obj {
        if value.is_null() {
            continue;
        }
        match key.as_str() {
            "schema_version" => {
                let v = value
                    .as_u64()
                    .ok_or_else(|| reject(key, "expected an integer"))?;
                if v != u64::from(PREFERENCES_SCHEMA_VERSION) {
                    return Err(reject(key, format!("unsupported schema version {v}")));
                }
            }
            "user_id" => prefs.user_id = as_str(value, key)?.to_string(),
            "age_band" => {
                let s = as_str(value, key)?;
                prefs.age_band = AgeBand::parse(s)
                    .ok_or_else(|| reject(key, format!("unknown age band `{s}`")))?;
            }
            "appearance" => {
                let map = value
                    .as_object()
                    .ok_or_else(|| reject(key, "expected an object"))?;
                for (attr, v) in map {
                    let field = format!("appearance.{attr}");
                    let options = catalog
                        .appearance
                        .get(attr)
                        .ok_or_else(|| reject(&field, format!("unknown attribute `{attr}`")))?;
                    let v = as_str(v, &field)?;
                    if !options.iter().any(|o| o == v) {
                        return Err(reject(&field, format!("`{v}` is not in the catalog")));
                    }
                    prefs.appearance.insert(attr.clone(), v.to_string());
                }
            }
            "background_aesthetic" => {
                let s = as_str(value, key)?;
                if !catalog.backgrounds.iter().any(|b| b == s) {
                    return Err(reject(key, format!("`{s}` is not in the catalog")));
                }
                prefs.background_aesthetic = s.to_string();
            }
            "traits" => {
                let list = value
                    .as_array()
                    .ok_or_else(|| reject(key, "expected an array"))?;
                let mut traits = BTreeSet::new();
                for t in list {
                    let s = as_str(t, key)?;
                    traits.insert(Trait::parse(s).ok_or_else(|| reject(key, format!("unknown trait `{s}`")))?);
                }
                if traits.contains(&Trait::Detailed) && traits.contains(&Trait::Direct) {
                    return Err(reject(key, "`detailed` and `direct` are mutually exclusive"));
                }
                if !traits.is_empty() {
                    prefs.traits = traits;
                }
            }
            "emotional_expressiveness" => {
                let level = value
                    .as_i64()
                    .filter(|l| (1..=5).contains(l))
                    .ok_or_else(|| reject(key, "expected an integer in 1..=5"))?;
                prefs.emotional_expressiveness = level as u8;
            }
            other => return Err(reject(other, "unknown field")),
        }
    }
    Ok(prefs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePrompt {
    pub fragments: Vec<String>,
    pub trait_order: Vec<Trait>,
}

impl StylePrompt {
    pub fn render(&self) -> String {
        self.fragments.join("\n")
    }
}

/// One directive per trait in precedence order, then the expressiveness line.
pub fn compose_style_prompt(prefs: &Preferences) -> StylePrompt {
    let trait_order: Vec<Trait> = prefs.traits.iter().copied().collect();
    let mut fragments: Vec<String> = trait_order.iter().map(|t| t.directive().to_string()).collect();
    let level = prefs.emotional_expressiveness.clamp(1, 5) as usize;
    fragments.push(EXPRESSIVENESS_DIRECTIVES[level - 1].to_string());
    StylePrompt {
        fragments,
        trait_order,
    }
}
