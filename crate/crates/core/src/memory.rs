//! Memory strength scoring.
//!
//! A fragment's strength is a normalized weighted average of emotional
//! intensity `E`, recall frequency `R` and contextual relevance `C`, attenuated
//! by an exponential forgetting curve `d(dt) = exp(-lambda * dt)`:
//!
//! ```text
//! S = d(dt) * (w_E*E + w_R*R + w_C*C) / (w_E + w_R + w_C)
//! ```
//!
//! All functions take the evaluation time explicitly; nothing here reads the
//! wall clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds in one day.
pub const MS_PER_DAY: f64 = 86_400_000.0;

/// Recall count at which `R` saturates at 1.
pub const RECALL_CAP: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> MemoryError {
    MemoryError::InvalidArgument {
        field,
        message: message.into(),
    }
}

/// Unix epoch milliseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_days(days: f64) -> Self {
        Timestamp((days * MS_PER_DAY).round() as i64)
    }

    pub fn plus_days(self, days: f64) -> Self {
        Timestamp(self.0 + (days * MS_PER_DAY).round() as i64)
    }

    pub fn plus_minutes(self, minutes: i64) -> Self {
        Timestamp(self.0 + minutes * 60_000)
    }

    /// Fractional days from `earlier` to `self`; negative if `earlier` is later.
    pub fn days_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MS_PER_DAY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub w_e: f64,
    pub w_r: f64,
    pub w_c: f64,
    /// Decay rate per day.
    pub lambda: f64,
    /// Short-term window length in days.
    pub short_term_window: f64,
    pub forget_threshold: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            w_e: 1.0,
            w_r: 1.0,
            w_c: 1.0,
            lambda: default_lambda(),
            short_term_window: 6.0,
            forget_threshold: 0.05,
        }
    }
}

/// `ln(4) / 6`: strength loses 75% over the six-day short-term window.
pub fn default_lambda() -> f64 {
    4f64.ln() / 6.0
}

impl ScoringParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        for (field, w) in [("w_e", self.w_e), ("w_r", self.w_r), ("w_c", self.w_c)] {
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(field, format!("weight must be non-negative, got {w}")));
            }
        }
        let total = self.w_e + self.w_r + self.w_c;
        if total.is_nan() || total <= 0.0 {
            return Err(invalid("weights", "weights must have a positive sum"));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if self.short_term_window.is_nan() || self.short_term_window <= 0.0 {
            return Err(invalid(
                "short_term_window",
                format!("must be positive, got {}", self.short_term_window),
            ));
        }
        if !(0.0..1.0).contains(&self.forget_threshold) {
            return Err(invalid(
                "forget_threshold",
                format!("must be in [0, 1), got {}", self.forget_threshold),
            ));
        }
        Ok(())
    }

    fn weight_sum(&self) -> f64 {
        self.w_e + self.w_r + self.w_c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emotion {
    pub label: String,
    pub intensity: f64,
}

impl Emotion {
    pub fn new(label: impl Into<String>, intensity: f64) -> Self {
        Self {
            label: label.into(),
            intensity,
        }
    }
}

/// Peak intensity over `emotions`, or 0 when there are none.
pub fn peak_intensity(emotions: &[Emotion]) -> f64 {
    emotions
        .iter()
        .map(|e| e.intensity)
        .fold(0.0, f64::max)
}

/// The highest-intensity emotion; ties go to the alphabetically first label.
pub fn top_emotion(emotions: &[Emotion]) -> Option<&Emotion> {
    emotions.iter().min_by(|a, b| {
        b.intensity
            .total_cmp(&a.intensity)
            .then_with(|| a.label.cmp(&b.label))
    })
}

/// One stored episodic memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFragment {
    pub id: String,
    pub user_id: String,
    pub event_summary: String,
    pub emotions: Vec<Emotion>,
    pub emotional_intensity: f64,
    pub recall_count: u32,
    pub last_recalled_at: Option<Timestamp>,
    pub contextual_relevance: f64,
    pub created_at: Timestamp,
    pub hashtags: Vec<String>,
    #[serde(default)]
    pub people: Vec<String>,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub places: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl MemoryFragment {
    /// Builds a fragment with `E` derived from `emotions` and no recalls.
    pub fn new(
        id: impl Into<String>,
        user_id: impl Into<String>,
        event_summary: impl Into<String>,
        emotions: Vec<Emotion>,
        contextual_relevance: f64,
        created_at: Timestamp,
    ) -> Self {
        let emotional_intensity = peak_intensity(&emotions);
        Self {
            id: id.into(),
            user_id: user_id.into(),
            event_summary: event_summary.into(),
            emotions,
            emotional_intensity,
            recall_count: 0,
            last_recalled_at: None,
            contextual_relevance,
            created_at,
            hashtags: Vec::new(),
            people: Vec::new(),
            objects: Vec::new(),
            places: Vec::new(),
            embedding: None,
        }
    }

    /// Normalized recall frequency `R = min(1, recall_count / RECALL_CAP)`.
    pub fn recall_frequency(&self) -> f64 {
        recall_frequency(self.recall_count)
    }

    pub fn age_days(&self, now: Timestamp) -> Result<f64, MemoryError> {
        if now < self.created_at {
            return Err(invalid(
                "now",
                format!(
                    "evaluation time {} precedes creation time {}",
                    now.0, self.created_at.0
                ),
            ));
        }
        Ok(now.days_since(self.created_at))
    }
}

pub fn recall_frequency(recall_count: u32) -> f64 {
    (recall_count as f64 / RECALL_CAP as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryTerm {
    ShortTerm,
    LongTerm,
}

/// `exp(-lambda * delta_t)`, with `delta_t` in days.
pub fn decay_factor(delta_t: f64, params: &ScoringParams) -> Result<f64, MemoryError> {
    decay_with_rate(delta_t, params.lambda)
}

pub fn decay_with_rate(delta_t: f64, lambda: f64) -> Result<f64, MemoryError> {
    if delta_t.is_nan() || delta_t < 0.0 {
        return Err(invalid(
            "delta_t",
            format!("elapsed time must be non-negative, got {delta_t}"),
        ));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    Ok((-lambda * delta_t).exp())
}

/// Strength from raw components. `E`, `R`, `C` are expected in `[0, 1]`.
pub fn strength_from_parts(
    emotional_intensity: f64,
    recall_frequency: f64,
    contextual_relevance: f64,
    age_days: f64,
    params: &ScoringParams,
) -> Result<f64, MemoryError> {
    let decay = decay_factor(age_days, params)?;
    let weighted = params.w_e * emotional_intensity
        + params.w_r * recall_frequency
        + params.w_c * contextual_relevance;
    Ok(decay * weighted / params.weight_sum())
}

pub fn memory_strength(
    fragment: &MemoryFragment,
    params: &ScoringParams,
    now: Timestamp,
) -> Result<f64, MemoryError> {
    let age = fragment.age_days(now)?;
    strength_from_parts(
        fragment.emotional_intensity,
        fragment.recall_frequency(),
        fragment.contextual_relevance,
        age,
        params,
    )
}

/// Returns a copy of `fragment` with one more recall recorded at `now`.
pub fn register_recall(
    fragment: &MemoryFragment,
    now: Timestamp,
) -> Result<MemoryFragment, MemoryError> {
    fragment.age_days(now)?;
    let mut out = fragment.clone();
    out.recall_count = out.recall_count.saturating_add(1);
    out.last_recalled_at = Some(now);
    Ok(out)
}

/// Short-term iff the fragment is at most `short_term_window` days old.
pub fn classify_term(
    fragment: &MemoryFragment,
    params: &ScoringParams,
    now: Timestamp,
) -> Result<MemoryTerm, MemoryError> {
    let age = fragment.age_days(now)?;
    Ok(if age <= params.short_term_window {
        MemoryTerm::ShortTerm
    } else {
        MemoryTerm::LongTerm
    })
}
