//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic is testable without a JS host.

use journal_core::memory::{
    decay_with_rate, strength_from_parts, recall_frequency, Emotion, MemoryFragment, ScoringParams, Timestamp,
};
use journal_core::retrieval::{select_memories, HashedBagOfWords, RetrievalQuery};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// `[[t, d(t)], ..]` for `t = 0, step, .., horizon`.
pub fn decay_points(lambda: f64, horizon: f64, step: f64) -> Result<Vec<[f64; 2]>, String> {
    if !(horizon.is_finite() && horizon > 0.0) || !(step.is_finite() && step > 0.0) {
        return Err("horizon and step must be positive".into());
    }
    let n = (horizon / step + 1e-9).floor() as usize;
    if n > 10_000 {
        return Err("too many points".into());
    }
    (0..=n)
        .map(|i| {
            let t = i as f64 * step;
            decay_with_rate(t, lambda).map(|d| [t, d]).map_err(|e| e.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct StrengthInput {
    pub e: f64,
    pub recall_count: u32,
    pub c: f64,
    pub age_days: f64,
    pub w_e: f64,
    pub w_r: f64,
    pub w_c: f64,
    pub lambda: f64,
}

pub fn strength(input: &StrengthInput) -> Result<f64, String> {
    let params = ScoringParams {
        w_e: input.w_e,
        w_r: input.w_r,
        w_c: input.w_c,
        lambda: input.lambda,
        ..ScoringParams::default()
    };
    params.validate().map_err(|e| e.to_string())?;
    if !(0.0..=1.0).contains(&input.e) || !(0.0..=1.0).contains(&input.c) {
        return Err("E and C must lie in [0, 1]".into());
    }
    strength_from_parts(input.e, recall_frequency(input.recall_count), input.c, input.age_days, &params)
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DemoMemory {
    pub id: String,
    pub summary: String,
    #[serde(default)]
    pub emotion: Option<String>,
    #[serde(default)]
    pub intensity: f64,
    #[serde(default)]
    pub recall_count: u32,
    #[serde(default)]
    pub relevance: f64,
    pub age_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRank {
    pub id: String,
    pub summary: String,
    pub similarity: f64,
    pub strength: f64,
    pub combined: f64,
    pub term: String,
}

/// Ranks `memories` against `query` as the engine's retrieval stage would.
pub fn rank(memories: &[DemoMemory], query: &str, k: usize) -> Result<Vec<DemoRank>, String> {
    let now = Timestamp::from_days(1000.0);
    let corpus: Vec<MemoryFragment> = memories
        .iter()
        .map(|m| {
            if !(m.age_days.is_finite() && m.age_days >= 0.0) {
                return Err(format!("memory `{}`: age_days must be non-negative", m.id));
            }
            let emotions = m
                .emotion
                .iter()
                .map(|label| Emotion::new(label.clone(), m.intensity.clamp(0.0, 1.0)))
                .collect();
            let mut f = MemoryFragment::new(
                m.id.clone(),
                "demo",
                m.summary.clone(),
                emotions,
                m.relevance.clamp(0.0, 1.0),
                now.plus_days(-m.age_days),
            );
            f.recall_count = m.recall_count;
            Ok(f)
        })
        .collect::<Result<_, String>>()?;
    let mut q = RetrievalQuery::new("demo", query, now);
    q.k = k;
    let ranked = select_memories(&q, &corpus, &ScoringParams::default(), &HashedBagOfWords::default())
        .map_err(|e| e.to_string())?;
    Ok(ranked
        .into_iter()
        .map(|r| {
            let summary = corpus
                .iter()
                .find(|f| f.id == r.fragment_id)
                .map(|f| f.event_summary.clone())
                .unwrap_or_default();
            DemoRank {
                summary,
                id: r.fragment_id,
                similarity: r.similarity,
                strength: r.strength,
                combined: r.combined,
                term: match r.term {
                    journal_core::memory::MemoryTerm::ShortTerm => "short-term".into(),
                    journal_core::memory::MemoryTerm::LongTerm => "long-term".into(),
                },
            }
        })
        .collect())
}

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

/// JSON array of `[t, d]` pairs.
#[wasm_bindgen(js_name = decayCurve)]
pub fn decay_curve(lambda: f64, horizon: f64, step: f64) -> Result<String, JsValue> {
    let points = decay_points(lambda, horizon, step).map_err(js_err)?;
    serde_json::to_string(&points).map_err(|e| js_err(e.to_string()))
}

#[wasm_bindgen(js_name = defaultLambda)]
pub fn default_lambda() -> f64 {
    journal_core::memory::default_lambda()
}

/// Takes a JSON object with `e, recall_count, c, age_days, w_e, w_r, w_c, lambda`.
#[wasm_bindgen(js_name = memoryStrength)]
pub fn memory_strength(input_json: &str) -> Result<f64, JsValue> {
    let input: StrengthInput = serde_json::from_str(input_json).map_err(|e| js_err(e.to_string()))?;
    strength(&input).map_err(js_err)
}

/// Takes a JSON array of memories and returns the ranked top `k` as JSON.
#[wasm_bindgen(js_name = rankMemories)]
pub fn rank_memories(memories_json: &str, query: &str, k: usize) -> Result<String, JsValue> {
    let memories: Vec<DemoMemory> = serde_json::from_str(memories_json).map_err(|e| js_err(e.to_string()))?;
    let ranked = rank(&memories, query, k).map_err(js_err)?;
    serde_json::to_string(&ranked).map_err(|e| js_err(e.to_string()))
}
