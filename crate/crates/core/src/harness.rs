//! Scripted session runs, decay sweeps, and the retrieval oracle check.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{Engine, EngineError};
use crate::memory::{decay_with_rate, Emotion, MemoryFragment, ScoringParams, Timestamp};
use crate::retrieval::{brute_force_select, select_memories, Embedder, RankedMemory, RetrievalQuery};
use crate::store::FragmentFilter;
use crate::templater::DiaryEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptTurn {
    pub text: String,
    /// Virtual time in milliseconds since the epoch.
    pub at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptExpectations {
    #[serde(default)]
    pub diary_hashtags: Option<Vec<String>>,
    #[serde(default)]
    pub min_citations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionScript {
    /// Preferences for a new user. Ignored when `user_id` is set.
    #[serde(default)]
    pub preferences: Option<Value>,
    /// Run against an existing user.
    #[serde(default)]
    pub user_id: Option<String>,
    pub turns: Vec<ScriptTurn>,
    /// When the session closes; defaults to the last turn's time.
    #[serde(default)]
    pub close_at: Option<Timestamp>,
    #[serde(default)]
    pub expect: Option<ScriptExpectations>,
}

impl SessionScript {
    pub fn validate(&self) -> Result<(), EngineError> {
        let invalid = |field: String, message: &str| EngineError::InvalidArgument {
            field: Some(field),
            message: message.to_string(),
        };
        if self.turns.is_empty() {
            return Err(invalid("turns".into(), "script needs at least one turn"));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(invalid(format!("turns[{i}].text"), "must be non-empty"));
            }
            if i > 0 && turn.at <= self.turns[i - 1].at {
                return Err(invalid(format!("turns[{i}].at"), "timestamps must be strictly increasing"));
            }
        }
        if let Some(close) = self.close_at {
            if close < self.turns[self.turns.len() - 1].at {
                return Err(invalid("close_at".into(), "must not precede the last turn"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReport {
    pub at: Timestamp,
    pub text: String,
    pub reply: String,
    pub cited_memory_ids: Vec<String>,
    pub ranked: Vec<RankedMemory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub close_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub user_id: String,
    pub session_id: String,
    pub turns: Vec<TurnReport>,
    pub diary: DiaryEntry,
    pub new_fragment_ids: Vec<String>,
    /// The user's stored fragments after the session closed.
    pub fragments: Vec<MemoryFragment>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assertions: Vec<Assertion>,
    /// Wall-clock measurements; omitted unless requested since they vary run to run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// Runs `script` through the engine on its virtual clock.
pub fn simulate(engine: &Engine, script: &SessionScript, with_timings: bool) -> Result<SimulationReport, EngineError> {
    script.validate()?;
    let started = Instant::now();
    let first_at = script.turns[0].at;
    let user_id = match &script.user_id {
        Some(id) => {
            engine.get_preferences(id)?;
            id.clone()
        }
        None => {
            let prefs = script.preferences.clone().unwrap_or(Value::Null);
            engine.create_user(&prefs, first_at)?.user_id
        }
    };
    let session = engine.open_session(&user_id, first_at)?;
    let mut turns = Vec::with_capacity(script.turns.len());
    for turn in &script.turns {
        let out = engine.post_message(&session.session_id, &turn.text, turn.at)?;
        turns.push(TurnReport {
            at: turn.at,
            text: turn.text.clone(),
            reply: out.reply,
            cited_memory_ids: out.cited_memory_ids,
            ranked: out.ranked,
        });
    }
    let close_at = script.close_at.unwrap_or(script.turns[script.turns.len() - 1].at);
    let close_started = Instant::now();
    let closed = engine.close_session(&session.session_id, close_at)?;
    let close_ms = close_started.elapsed().as_secs_f64() * 1e3;
    let fragments = engine
        .store()
        .get_fragments(&user_id, &FragmentFilter::default(), &engine.config().params, close_at)?;

    let mut assertions = Vec::new();
    if let Some(expect) = &script.expect {
        if let Some(tags) = &expect.diary_hashtags {
            assertions.push(Assertion {
                name: "diary_hashtags".into(),
                passed: &closed.diary.hashtags == tags,
            });
        }
        if let Some(min) = expect.min_citations {
            let total: usize = turns.iter().map(|t| t.cited_memory_ids.len()).sum();
            assertions.push(Assertion {
                name: "min_citations".into(),
                passed: total >= min,
            });
        }
    }

    Ok(SimulationReport {
        user_id,
        session_id: session.session_id,
        turns,
        diary: closed.diary,
        new_fragment_ids: closed.new_fragment_ids,
        fragments,
        warnings: closed.warnings,
        assertions,
        timings: with_timings.then(|| Timings {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            close_ms,
        }),
    })
}

/// CSV of `lambda,delta_t,decay` for each rate over `0, step, 2·step, ..,
/// horizon`. Day 6 is always included when it lies inside the horizon.
pub fn decay_sweep(lambdas: &[f64], horizon: f64, step: f64) -> Result<String, EngineError> {
    let invalid = |field: &str, message: &str| EngineError::InvalidArgument {
        field: Some(field.to_string()),
        message: message.to_string(),
    };
    if lambdas.is_empty() {
        return Err(invalid("lambdas", "at least one rate is required"));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l <= 0.0) {
        return Err(invalid("lambdas", "rates must be positive"));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(invalid("horizon", "must be positive"));
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(invalid("step", "must be positive"));
    }
    let n = (horizon / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(invalid("step", "too many rows for this horizon"));
    }
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if horizon >= 6.0 && !grid.iter().any(|&t| (t - 6.0).abs() < 1e-12) {
        grid.push(6.0);
        grid.sort_by(f64::total_cmp);
    }
    let mut csv = String::from("lambda,delta_t,decay\n");
    for &lambda in lambdas {
        for &t in &grid {
            let d = decay_with_rate(t, lambda).map_err(EngineError::from)?;
            writeln!(csv, "{lambda},{t},{d}").expect("writing to a String");
        }
    }
    Ok(csv)
}

const CORPUS_WORDS: &[&str] = &[
    "beach", "school", "exam", "friend", "mom", "dinner", "rain", "bike", "park", "concert", "outfit", "car",
    "dog", "birthday", "cake", "library", "train", "movie", "garden", "coffee",
];
const CORPUS_LABELS: &[&str] = &["joy", "sadness", "anger", "fear", "pride", "calm"];

/// A random corpus with deliberate duplicates (same text, time, and scores)
/// so tie-breaking is exercised.
pub fn random_corpus(rng: &mut impl Rng, size: usize, now: Timestamp, embedder: &dyn Embedder) -> Vec<MemoryFragment> {
    let mut corpus: Vec<MemoryFragment> = Vec::with_capacity(size);
    for i in 0..size {
        let id = format!("f{i:04}");
        if i > 0 && rng.random_bool(0.15) {
            let mut twin = corpus[rng.random_range(0..corpus.len())].clone();
            twin.id = id;
            corpus.push(twin);
            continue;
        }
        let words: Vec<&str> = (0..rng.random_range(2..6))
            .map(|_| *CORPUS_WORDS.choose(rng).expect("non-empty"))
            .collect();
        let emotions = (0..rng.random_range(0..3))
            .map(|_| Emotion::new(*CORPUS_LABELS.choose(rng).expect("non-empty"), rng.random_range(0.0..=1.0)))
            .collect();
        let age_days = if rng.random_bool(0.1) {
            6.0
        } else {
            rng.random_range(0.0..40.0)
        };
        let mut f = MemoryFragment::new(
            id,
            "oracle",
            words.join(" "),
            emotions,
            rng.random_range(0.0..=1.0),
            Timestamp(now.0 - (age_days * crate::memory::MS_PER_DAY) as i64),
        );
        f.recall_count = rng.random_range(0..15);
        if rng.random_bool(0.5) {
            f.embedding = embedder.embed(&crate::retrieval::fragment_text(&f)).ok();
        }
        corpus.push(f);
    }
    corpus
}

pub fn random_query_text(rng: &mut impl Rng) -> String {
    (0..rng.random_range(1..5))
        .map(|_| *CORPUS_WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub corpora: usize,
    pub fragments: usize,
    pub mismatches: Vec<String>,
    pub max_score_diff: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares [`select_memories`] with [`brute_force_select`] over seeded random
/// corpora of up to `max_size` fragments.
pub fn oracle_check(
    corpora: usize,
    seed: u64,
    max_size: usize,
    params: &ScoringParams,
    embedder: &dyn Embedder,
) -> Result<OracleReport, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let now = Timestamp::from_days(100.0);
    let mut report = OracleReport {
        corpora,
        fragments: 0,
        mismatches: Vec::new(),
        max_score_diff: 0.0,
    };
    for c in 0..corpora {
        let size = rng.random_range(0..=max_size);
        let corpus = random_corpus(&mut rng, size, now, embedder);
        report.fragments += corpus.len();
        let mut query = RetrievalQuery::new("oracle", random_query_text(&mut rng), now);
        query.k = rng.random_range(1..=10);
        let fast = select_memories(&query, &corpus, params, embedder)?;
        let slow = brute_force_select(&query, &corpus, params, embedder)?;
        let fast_ids: Vec<&str> = fast.iter().map(|r| r.fragment_id.as_str()).collect();
        let slow_ids: Vec<&str> = slow.iter().map(|r| r.fragment_id.as_str()).collect();
        if fast_ids != slow_ids {
            report
                .mismatches
                .push(format!("corpus {c}: ids {fast_ids:?} != {slow_ids:?}"));
            continue;
        }
        for (a, b) in fast.iter().zip(&slow) {
            let diff = (a.combined - b.combined)
                .abs()
                .max((a.similarity - b.similarity).abs())
                .max((a.strength - b.strength).abs());
            report.max_score_diff = report.max_score_diff.max(diff);
            if diff > 1e-12 || a.term != b.term {
                report
                    .mismatches
                    .push(format!("corpus {c}: scores for `{}` differ by {diff:e}", a.fragment_id));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::EmotionLexicon;
    use crate::memory::default_lambda;
    use crate::engine::{Backends, EngineConfig};
    use crate::retrieval::HashedBagOfWords;
    use crate::store::Store;
    use crate::templater::Templates;
    use std::sync::Arc;

    fn engine(dir: &std::path::Path, seed: u64) -> Engine {
        Engine::new(
            Arc::new(Store::open(dir).unwrap()),
            EngineConfig::default(),
            Backends::mock(EmotionLexicon::builtin()),
            Templates::builtin(),
            seed,
        )
        .unwrap()
    }

    fn script(start: Timestamp) -> SessionScript {
        SessionScript {
            preferences: None,
            user_id: None,
            turns: vec![
                ScriptTurn { text: "I baked a birthday cake for my sister".into(), at: start },
                ScriptTurn { text: "She was so happy with the cake".into(), at: start.plus_minutes(2) },
            ],
            close_at: None,
            expect: None,
        }
    }

    #[test]
    fn script_validation() {
        let mut s = script(Timestamp(0));
        s.turns[1].at = Timestamp(0);
        assert!(matches!(s.validate(), Err(EngineError::InvalidArgument { field: Some(f), .. }) if f == "turns[1].at"));
        let mut s = script(Timestamp(0));
        s.turns[0].text = "  ".into();
        assert!(s.validate().is_err());
        let parsed: Result<SessionScript, _> = serde_json::from_str(r#"{"turns": [], "bogus": 1}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn same_seed_gives_identical_reports() {
        let runs: Vec<String> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let report = simulate(&engine(dir.path(), 42), &script(Timestamp(0)), false).unwrap();
                serde_json::to_string(&report).unwrap()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
        assert!(!runs[0].contains("timings"));
    }

    #[test]
    fn second_run_six_days_later_sees_boundary_memories() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(dir.path(), 1);
        let first = simulate(&e, &script(Timestamp(0)), false).unwrap();
        let mut second = script(first.fragments[0].created_at.plus_days(6.0));
        second.user_id = Some(first.user_id.clone());
        let report = simulate(&e, &second, false).unwrap();
        let ranked = &report.turns[0].ranked;
        assert_eq!(ranked[0].fragment_id, first.new_fragment_ids[0]);
        assert_eq!(ranked[0].term, crate::memory::MemoryTerm::ShortTerm);
        assert_ne!(report.diary.id, first.diary.id);
        assert!(report.fragments.len() > first.fragments.len());
    }

    #[test]
    fn sweep_contains_calibration_row_and_decreases() {
        let csv = decay_sweep(&[default_lambda(), 0.5], 10.0, 4.0).unwrap();
        let rows: Vec<(f64, f64, f64)> = csv
            .lines()
            .skip(1)
            .map(|l| {
                let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
                (v[0], v[1], v[2])
            })
            .collect();
        assert!(rows
            .iter()
            .any(|&(l, t, d)| l == default_lambda() && t == 6.0 && (d - 0.25).abs() < 1e-12));
        assert!(rows.iter().filter(|r| r.1 == 0.0).all(|r| r.2 == 1.0));
        for lambda in [default_lambda(), 0.5] {
            let series: Vec<f64> = rows.iter().filter(|r| r.0 == lambda).map(|r| r.2).collect();
            assert!(series.windows(2).all(|w| w[1] < w[0]));
        }
        assert!(decay_sweep(&[0.0], 1.0, 1.0).is_err());
        assert!(decay_sweep(&[0.1], -1.0, 1.0).is_err());
        assert!(decay_sweep(&[0.1], 1.0, 0.0).is_err());
    }

    #[test]
    fn oracle_check_small_run() {
        let report = oracle_check(10, 3, 60, &ScoringParams::default(), &HashedBagOfWords::default()).unwrap();
        assert!(report.passed(), "{:?}", report.mismatches);
    }
}
