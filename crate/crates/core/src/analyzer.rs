//! Event-emotion analysis of a session's dialogue buffer.
//!
//! A buffer is split into events (segments of user turns) and each segment is
//! turned into an [`EventRecord`] by an [`ExtractionBackend`]. Backend output is
//! untrusted and always passes through [`sanitize`]. When the backend fails the
//! lexicon-driven [`fallback_extract`] takes over.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{Emotion, Timestamp};
use crate::text::{capitalize, content_words, stem, tokenize};

/// Gap between user turns that always starts a new event.
pub const SEGMENT_GAP_MS: i64 = 30 * 60 * 1000;
pub const MAX_HASHTAGS: usize = 8;
pub const FALLBACK_HASHTAGS: usize = 3;
pub const SALIENCE_FLOOR: f64 = 0.2;
const SUMMARY_WORDS: usize = 40;

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzerError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid dialogue buffer: {0}")]
    InvalidBuffer(String),
    #[error("extraction failed: {0}")]
    Extraction(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub at: Timestamp,
}

/// Temporary per-session store of dialogue turns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialogueBuffer {
    pub session_id: String,
    pub turns: Vec<Turn>,
}

impl DialogueBuffer {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
        }
    }

    pub fn push(&mut self, speaker: Speaker, text: &str, at: Timestamp) -> Result<(), AnalyzerError> {
        if text.trim().is_empty() {
            return Err(AnalyzerError::EmptyInput("turn text"));
        }
        if let Some(last) = self.turns.last() {
            if at < last.at {
                return Err(AnalyzerError::InvalidBuffer(format!(
                    "turn at {} precedes previous turn at {}",
                    at.0, last.at.0
                )));
            }
        }
        self.turns.push(Turn {
            speaker,
            text: text.to_string(),
            at,
        });
        Ok(())
    }

    pub fn user_turn_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::User)
            .map(|(i, _)| i)
    }

    pub fn has_user_turn(&self) -> bool {
        self.user_turn_indices().next().is_some()
    }

    /// Text of the last `n` user turns, oldest first, joined by newlines.
    pub fn recent_user_text(&self, n: usize) -> String {
        let mut recent: Vec<&str> = self
            .turns
            .iter()
            .rev()
            .filter(|t| t.speaker == Speaker::User)
            .take(n)
            .map(|t| t.text.as_str())
            .collect();
        recent.reverse();
        recent.join("\n")
    }

    fn validate(&self) -> Result<(), AnalyzerError> {
        if self.turns.iter().any(|t| t.text.trim().is_empty()) {
            return Err(AnalyzerError::InvalidBuffer("turn with empty text".into()));
        }
        if self.turns.windows(2).any(|w| w[1].at < w[0].at) {
            return Err(AnalyzerError::InvalidBuffer(
                "turn timestamps must be non-decreasing".into(),
            ));
        }
        if !self.has_user_turn() {
            return Err(AnalyzerError::EmptyInput("buffer has no user turns"));
        }
        Ok(())
    }

    /// User text inside `segment`, one turn per line. Agent turns are excluded.
    pub fn segment_text(&self, segment: &Range<usize>) -> String {
        self.turns[segment.clone()]
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.text.trim())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Backend,
    Fallback,
}

/// Structured metadata for one segmented event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_summary: String,
    pub emotions: Vec<Emotion>,
    pub people: Vec<String>,
    pub objects: Vec<String>,
    pub places: Vec<String>,
    pub hashtags: Vec<String>,
    pub occurred_at: Timestamp,
    pub source_turn_indices: Vec<usize>,
    pub salience: f64,
    pub provenance: Provenance,
}

/// What an extraction backend returns for a block of user text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractedFields {
    #[serde(default)]
    pub event_summary: Option<String>,
    #[serde(default)]
    pub emotions: Vec<Emotion>,
    #[serde(default)]
    pub people: Vec<String>,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub places: Vec<String>,
    #[serde(default)]
    pub hashtags: Vec<String>,
    #[serde(default)]
    pub salience: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    /// The backend could not produce usable output; the caller should fall back.
    #[error("extraction backend asked for fallback: {0}")]
    Fallback(String),
    #[error("extraction backend unavailable: {0}")]
    Unavailable(String),
}

pub trait ExtractionBackend: Send + Sync {
    fn extract(&self, text: &str) -> Result<ExtractedFields, ExtractionError>;

    /// Whether `next` starts a new topic after `previous`. `None` defers to the
    /// lexical-overlap heuristic.
    fn topic_shift(&self, _previous: &str, _next: &str) -> Option<bool> {
        None
    }
}

/// Deterministic backend backed by an emotion lexicon.
#[derive(Debug, Clone)]
pub struct LexiconExtractor(pub EmotionLexicon);

impl ExtractionBackend for LexiconExtractor {
    fn extract(&self, text: &str) -> Result<ExtractedFields, ExtractionError> {
        fallback_extract(text, &self.0).map_err(|e| ExtractionError::Fallback(e.to_string()))
    }
}

/// Returns the same fields for every input.
#[derive(Debug, Clone)]
pub struct CannedExtractor(pub ExtractedFields);

impl ExtractionBackend for CannedExtractor {
    fn extract(&self, _text: &str) -> Result<ExtractedFields, ExtractionError> {
        Ok(self.0.clone())
    }
}

/// Keyword to (label, base intensity).
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionLexicon {
    entries: BTreeMap<String, (String, f64)>,
}

impl EmotionLexicon {
    /// Parses `keyword<TAB>label<TAB>intensity` lines; `#` starts a comment.
    pub fn parse(source: &str) -> Result<Self, AnalyzerError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| AnalyzerError::Lexicon {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [keyword, label, intensity] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let keyword = keyword.trim().to_lowercase();
            let label = label.trim();
            if keyword.is_empty() || label.is_empty() {
                return Err(err("keyword and label must be non-empty".into()));
            }
            let intensity: f64 = intensity
                .trim()
                .parse()
                .map_err(|_| err(format!("bad intensity `{}`", intensity.trim())))?;
            if !(intensity > 0.0 && intensity <= 1.0) {
                return Err(err(format!("intensity {intensity} outside (0, 1]")));
            }
            if entries
                .insert(keyword.clone(), (label.to_string(), intensity))
                .is_some()
            {
                return Err(err(format!("duplicate keyword `{keyword}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("built-in lexicon is well formed")
    }

    pub fn from_entries<'a>(
        entries: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    ) -> Result<Self, AnalyzerError> {
        let source = entries
            .into_iter()
            .map(|(k, l, i)| format!("{k}\t{l}\t{i}"))
            .collect::<Vec<_>>()
            .join("\n");
        Self::parse(&source)
    }

    pub fn lookup(&self, keyword: &str) -> Option<(&str, f64)> {
        self.entries.get(keyword).map(|(l, i)| (l.as_str(), *i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const PEOPLE: &[&str] = &[
    "aunt", "boss", "boyfriend", "brother", "classmate", "classmates", "coach", "coworker",
    "cousin", "dad", "daughter", "family", "father", "friend", "friends", "girlfriend",
    "grandma", "grandpa", "husband", "mom", "mother", "neighbor", "parents", "partner",
    "roommate", "sister", "son", "teacher", "uncle", "wife",
];

const PLACES: &[&str] = &[
    "beach", "cafe", "campus", "church", "city", "class", "classroom", "gym", "home", "hospital",
    "house", "kitchen", "library", "mall", "office", "park", "puddle", "restaurant", "room",
    "school", "station", "store", "street", "work",
];

/// Lexicon-driven extraction used when no model backend is available.
///
/// Emotions are lexicon hits deduplicated by label (max intensity, first
/// occurrence order). Hashtags are the most frequent content words, CamelCased.
/// Salience is `min(1, 0.2 + 0.2 * distinct labels)`.
pub fn fallback_extract(text: &str, lexicon: &EmotionLexicon) -> Result<ExtractedFields, AnalyzerError> {
    if text.trim().is_empty() {
        return Err(AnalyzerError::EmptyInput("text"));
    }

    let mut emotions: Vec<Emotion> = Vec::new();
    for token in tokenize(text) {
        if let Some((label, intensity)) = lexicon.lookup(&token) {
            match emotions.iter_mut().find(|e| e.label == label) {
                Some(existing) => existing.intensity = existing.intensity.max(intensity),
                None => emotions.push(Emotion::new(label, intensity)),
            }
        }
    }

    let words = content_words(text);
    let ranked = rank_by_frequency(&words);
    let people = pick(&words, |w| PEOPLE.contains(&w));
    let places = pick(&words, |w| PLACES.contains(&w));
    let objects: Vec<String> = ranked
        .iter()
        .filter(|w| {
            !PEOPLE.contains(&w.as_str())
                && !PLACES.contains(&w.as_str())
                && lexicon.lookup(w).is_none()
        })
        .take(FALLBACK_HASHTAGS)
        .cloned()
        .collect();
    let hashtags = ranked
        .iter()
        .take(FALLBACK_HASHTAGS)
        .filter_map(|w| normalize_hashtag(w))
        .collect();

    let salience = (SALIENCE_FLOOR + 0.2 * emotions.len() as f64).min(1.0);
    Ok(ExtractedFields {
        event_summary: Some(summarize(text)),
        emotions,
        people,
        objects,
        places,
        hashtags,
        salience,
    })
}

/// Distinct words by descending count; ties keep first-occurrence order.
fn rank_by_frequency(words: &[String]) -> Vec<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, w) in words.iter().enumerate() {
        counts.entry(w).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.into_iter().map(|(w, _)| w.to_string()).collect()
}

fn pick(words: &[String], keep: impl Fn(&str) -> bool) -> Vec<String> {
    let mut seen = HashSet::new();
    words
        .iter()
        .filter(|w| keep(w) && seen.insert(w.as_str()))
        .cloned()
        .collect()
}

fn summarize(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= SUMMARY_WORDS {
        words.join(" ")
    } else {
        format!("{}...", words[..SUMMARY_WORDS].join(" "))
    }
}

/// CamelCases `raw` into `#[A-Za-z0-9]+`, or `None` if nothing survives.
pub fn normalize_hashtag(raw: &str) -> Option<String> {
    let body: String = raw
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|part| !part.is_empty())
        .map(capitalize)
        .collect();
    (!body.is_empty()).then(|| format!("#{body}"))
}

/// Normalizes and deduplicates (case-insensitively) a list of hashtags.
pub fn normalize_hashtags<'a>(raw: impl IntoIterator<Item = &'a str>, cap: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.into_iter()
        .filter_map(normalize_hashtag)
        .filter(|tag| seen.insert(tag.to_lowercase()))
        .take(cap)
        .collect()
}

fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

fn clean_list(items: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
        .collect()
}

/// Forces backend output into the record invariants: unit-interval numbers,
/// one emotion per label, normalized and capped hashtags.
pub fn sanitize(fields: ExtractedFields, fallback_summary: &str) -> ExtractedFields {
    let mut emotions: Vec<Emotion> = Vec::new();
    for e in fields.emotions {
        let label = e.label.trim().to_lowercase();
        if label.is_empty() {
            continue;
        }
        let intensity = clamp_unit(e.intensity);
        match emotions.iter_mut().find(|x| x.label == label) {
            Some(existing) => existing.intensity = existing.intensity.max(intensity),
            None => emotions.push(Emotion::new(label, intensity)),
        }
    }
    let summary = fields
        .event_summary
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| summarize(fallback_summary));
    ExtractedFields {
        event_summary: Some(summary),
        emotions,
        people: clean_list(&fields.people),
        objects: clean_list(&fields.objects),
        places: clean_list(&fields.places),
        hashtags: normalize_hashtags(fields.hashtags.iter().map(String::as_str), MAX_HASHTAGS),
        salience: clamp_unit(fields.salience),
    }
}

fn starts_with_continuation(text: &str) -> bool {
    const CUES: &[&str] = &[
        "it", "that", "this", "and", "but", "so", "then", "because", "also", "which", "anyway",
        "after", "afterwards", "later",
    ];
    tokenize(text)
        .first()
        .is_some_and(|first| CUES.contains(&first.as_str()))
}

fn lexical_shift(segment_vocab: &HashSet<String>, next: &str) -> bool {
    let words: Vec<String> = content_words(next).iter().map(|w| stem(w).to_string()).collect();
    if words.len() < 3 || starts_with_continuation(next) {
        return false;
    }
    !words.iter().any(|w| segment_vocab.contains(w))
}

/// Splits the buffer's user turns into events.
///
/// A new event starts when the gap since the previous user turn exceeds 30
/// minutes, or when the topic shifts. The backend's `topic_shift` answers first;
/// otherwise a turn with three or more content words sharing none with the
/// current event (and not opening with a continuation cue) counts as a shift.
pub fn segment_events(
    buffer: &DialogueBuffer,
    backend: Option<&dyn ExtractionBackend>,
) -> Result<Vec<Range<usize>>, AnalyzerError> {
    if buffer.turns.is_empty() {
        return Err(AnalyzerError::EmptyInput("dialogue buffer"));
    }
    buffer.validate()?;

    let mut segments = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_user: usize = 0;
    let mut vocab: HashSet<String> = HashSet::new();

    for idx in buffer.user_turn_indices() {
        let turn = &buffer.turns[idx];
        let Some(seg_start) = start else {
            start = Some(idx);
            last_user = idx;
            vocab.extend(content_words(&turn.text).iter().map(|w| stem(w).to_string()));
            continue;
        };
        let prev = &buffer.turns[last_user];
        let gap = turn.at.0 - prev.at.0 > SEGMENT_GAP_MS;
        let shift = gap
            || backend
                .and_then(|b| b.topic_shift(&prev.text, &turn.text))
                .unwrap_or_else(|| lexical_shift(&vocab, &turn.text));
        if shift {
            segments.push(seg_start..last_user + 1);
            start = Some(idx);
            vocab.clear();
        }
        vocab.extend(content_words(&turn.text).iter().map(|w| stem(w).to_string()));
        last_user = idx;
    }
    if let Some(seg_start) = start {
        segments.push(seg_start..last_user + 1);
    }
    Ok(segments)
}

/// Builds the event record for `segment`.
///
/// Backend failure falls back to the lexicon when `fallback` is given and is
/// an error otherwise.
pub fn extract_metadata(
    buffer: &DialogueBuffer,
    segment: &Range<usize>,
    backend: &dyn ExtractionBackend,
    fallback: Option<&EmotionLexicon>,
) -> Result<EventRecord, AnalyzerError> {
    if segment.start >= segment.end || segment.end > buffer.turns.len() {
        return Err(AnalyzerError::InvalidBuffer(format!(
            "segment {segment:?} outside buffer of {} turns",
            buffer.turns.len()
        )));
    }
    let source_turn_indices: Vec<usize> = segment
        .clone()
        .filter(|&i| buffer.turns[i].speaker == Speaker::User)
        .collect();
    let Some(&first_user) = source_turn_indices.first() else {
        return Err(AnalyzerError::EmptyInput("segment has no user turns"));
    };
    let text = buffer.segment_text(segment);

    let (fields, provenance) = match backend.extract(&text) {
        Ok(fields) => (fields, Provenance::Backend),
        Err(err) => match fallback {
            Some(lexicon) => {
                log::warn!("extraction backend failed, using lexicon fallback: {err}");
                (fallback_extract(&text, lexicon)?, Provenance::Fallback)
            }
            None => return Err(AnalyzerError::Extraction(err.to_string())),
        },
    };
    let fields = sanitize(fields, &text);

    Ok(EventRecord {
        event_summary: fields.event_summary.unwrap_or_default(),
        emotions: fields.emotions,
        people: fields.people,
        objects: fields.objects,
        places: fields.places,
        hashtags: fields.hashtags,
        occurred_at: buffer.turns[first_user].at,
        source_turn_indices,
        salience: fields.salience,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_lexicon() -> EmotionLexicon {
        EmotionLexicon::from_entries([
            ("upset", "frustration", 0.7),
            ("sad", "sadness", 0.6),
            ("happy", "joy", 0.7),
            ("ruined", "frustration", 0.6),
            ("scared", "fear", 0.8),
            ("proud", "pride", 0.8),
        ])
        .unwrap()
    }

    fn buffer(turns: &[(Speaker, &str, i64)]) -> DialogueBuffer {
        let mut b = DialogueBuffer::new("s");
        for (speaker, text, minute) in turns {
            b.push(*speaker, text, Timestamp(0).plus_minutes(*minute)).unwrap();
        }
        b
    }

    struct Failing;
    impl ExtractionBackend for Failing {
        fn extract(&self, _: &str) -> Result<ExtractedFields, ExtractionError> {
            Err(ExtractionError::Unavailable("down".into()))
        }
    }

    #[test]
    fn builtin_lexicon_loads() {
        let lex = EmotionLexicon::builtin();
        assert!(lex.len() >= 40);
        assert_eq!(lex.lookup("upset"), Some(("frustration", 0.7)));
    }

    #[test]
    fn lexicon_rejects_bad_lines() {
        assert!(matches!(
            EmotionLexicon::parse("a\tjoy\t0.5\na\tjoy\t0.6"),
            Err(AnalyzerError::Lexicon { line: 2, .. })
        ));
        assert!(EmotionLexicon::parse("a\tjoy\t0").is_err());
        assert!(EmotionLexicon::parse("a\tjoy\t1.5").is_err());
        assert!(EmotionLexicon::parse("a joy 0.5").is_err());
        assert!(EmotionLexicon::parse("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn fallback_hand_computed_example() {
        let out = fallback_extract("I was so upset and sad", &fixture_lexicon()).unwrap();
        assert_eq!(
            out.emotions,
            vec![Emotion::new("frustration", 0.7), Emotion::new("sadness", 0.6)]
        );
        assert!((out.salience - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fallback_without_hits_has_floor_salience() {
        let out = fallback_extract("We walked along the river", &fixture_lexicon()).unwrap();
        assert!(out.emotions.is_empty());
        assert_eq!(out.salience, 0.2);
    }

    #[test]
    fn fallback_dedups_by_label() {
        let out = fallback_extract("upset upset, ruined and upset", &fixture_lexicon()).unwrap();
        assert_eq!(out.emotions, vec![Emotion::new("frustration", 0.7)]);
    }

    #[test]
    fn fallback_rejects_empty_text() {
        assert_eq!(
            fallback_extract("   ", &fixture_lexicon()),
            Err(AnalyzerError::EmptyInput("text"))
        );
    }

    #[test]
    fn fallback_hashtags_follow_frequency() {
        let out = fallback_extract(
            "The laundry pile grew. Laundry again, laundry forever. My outfit, my outfit. A bus.",
            &fixture_lexicon(),
        )
        .unwrap();
        assert_eq!(out.hashtags, vec!["#Laundry", "#Outfit", "#Pile"]);
    }

    #[test]
    fn fallback_finds_people_and_places() {
        let out = fallback_extract("My mom drove me to school and my friend waited", &fixture_lexicon()).unwrap();
        assert_eq!(out.people, vec!["mom", "friend"]);
        assert_eq!(out.places, vec!["school"]);
    }

    #[test]
    fn hashtag_normalization() {
        assert_eq!(normalize_hashtag("favorite outfit").as_deref(), Some("#FavoriteOutfit"));
        assert_eq!(normalize_hashtag("#Upset").as_deref(), Some("#Upset"));
        assert_eq!(normalize_hashtag("#laundry-day!").as_deref(), Some("#LaundryDay"));
        assert_eq!(normalize_hashtag("# !!"), None);
        let tags = normalize_hashtags(["upset", "#Upset", "a", "b", "c", "d", "e", "f", "g", "h"], 8);
        assert_eq!(tags.len(), 8);
        assert_eq!(tags[0], "#Upset");
    }

    #[test]
    fn single_turn_is_one_segment() {
        let b = buffer(&[(Speaker::User, "hello there", 0)]);
        assert_eq!(segment_events(&b, None).unwrap(), vec![0..1]);
    }

    #[test]
    fn long_gap_splits() {
        let b = buffer(&[
            (Speaker::User, "I baked bread this morning", 0),
            (Speaker::Agent, "Nice!", 1),
            (Speaker::User, "The bread came out great", 120),
        ]);
        assert_eq!(segment_events(&b, None).unwrap(), vec![0..1, 2..3]);
    }

    #[test]
    fn topic_shift_splits() {
        let b = buffer(&[
            (Speaker::User, "My piano recital went perfectly tonight", 0),
            (Speaker::User, "Separately, grocery prices keep climbing everywhere", 2),
        ]);
        assert_eq!(segment_events(&b, None).unwrap(), vec![0..1, 1..2]);
    }

    #[test]
    fn backend_topic_signal_overrides_heuristic() {
        struct NeverShift;
        impl ExtractionBackend for NeverShift {
            fn extract(&self, _: &str) -> Result<ExtractedFields, ExtractionError> {
                Ok(ExtractedFields::default())
            }
            fn topic_shift(&self, _: &str, _: &str) -> Option<bool> {
                Some(false)
            }
        }
        let b = buffer(&[
            (Speaker::User, "My piano recital went perfectly tonight", 0),
            (Speaker::User, "Separately, grocery prices keep climbing everywhere", 2),
        ]);
        assert_eq!(segment_events(&b, Some(&NeverShift)).unwrap(), vec![0..2]);
    }

    #[test]
    fn car_splash_conversation_is_one_event() {
        let b = buffer(&[
            (Speaker::User, "On my way to school a car drove through a puddle and splashed dirty water all over me.", 0),
            (Speaker::Agent, "Oh no, that sounds awful. What happened next?", 1),
            (Speaker::User, "The water ruined my favorite outfit. I was so upset.", 2),
            (Speaker::Agent, "I'm sorry. That outfit sounds special.", 3),
            (Speaker::User, "I felt sad all day and had to do laundry at home to save the outfit.", 5),
        ]);
        assert_eq!(segment_events(&b, None).unwrap(), vec![0..5]);
    }

    #[test]
    fn segmentation_rejects_empty_buffers() {
        assert_eq!(
            segment_events(&DialogueBuffer::new("s"), None),
            Err(AnalyzerError::EmptyInput("dialogue buffer"))
        );
        let agent_only = buffer(&[(Speaker::Agent, "hi", 0)]);
        assert!(matches!(segment_events(&agent_only, None), Err(AnalyzerError::EmptyInput(_))));
    }

    #[test]
    fn push_rejects_out_of_order_and_empty_turns() {
        let mut b = DialogueBuffer::new("s");
        b.push(Speaker::User, "hi", Timestamp(10)).unwrap();
        assert!(b.push(Speaker::User, "again", Timestamp(5)).is_err());
        assert!(b.push(Speaker::User, "  ", Timestamp(20)).is_err());
    }

    #[test]
    fn canned_backend_passes_through_with_buffer_time() {
        let canned = ExtractedFields {
            event_summary: Some("ruined outfit".into()),
            emotions: vec![Emotion::new("frustration", 0.8), Emotion::new("sadness", 0.6)],
            people: vec![],
            objects: vec!["outfit".into(), "car".into()],
            places: vec!["street".into()],
            hashtags: vec!["#FavoriteOutfit".into(), "#Upset".into(), "#Laundry".into()],
            salience: 0.7,
        };
        let b = buffer(&[
            (Speaker::Agent, "How was your day?", 0),
            (Speaker::User, "A car splashed water and ruined my favorite outfit", 3),
        ]);
        let rec = extract_metadata(&b, &(1..2), &CannedExtractor(canned.clone()), None).unwrap();
        assert_eq!(rec.occurred_at, Timestamp(0).plus_minutes(3));
        assert_eq!(rec.event_summary, "ruined outfit");
        assert_eq!(rec.emotions, canned.emotions);
        assert_eq!(rec.hashtags, canned.hashtags);
        assert_eq!(rec.objects, canned.objects);
        assert_eq!(rec.salience, 0.7);
        assert_eq!(rec.source_turn_indices, vec![1]);
        assert_eq!(rec.provenance, Provenance::Backend);
    }

    #[test]
    fn failing_backend_falls_back_or_errors() {
        let b = buffer(&[(Speaker::User, "We strolled past the old bridge", 0)]);
        let rec = extract_metadata(&b, &(0..1), &Failing, Some(&fixture_lexicon())).unwrap();
        assert_eq!(rec.provenance, Provenance::Fallback);
        assert!(rec.emotions.is_empty());
        assert_eq!(rec.salience, 0.2);
        assert!(matches!(
            extract_metadata(&b, &(0..1), &Failing, None),
            Err(AnalyzerError::Extraction(_))
        ));
    }

    #[test]
    fn agent_turns_do_not_contribute() {
        let b = buffer(&[
            (Speaker::User, "We strolled past the old bridge", 0),
            (Speaker::Agent, "You sound so happy and proud!", 1),
        ]);
        let rec = extract_metadata(&b, &(0..2), &LexiconExtractor(fixture_lexicon()), None).unwrap();
        assert!(rec.emotions.is_empty());
        assert_eq!(rec.source_turn_indices, vec![0]);
    }

    #[test]
    fn backend_output_is_clamped() {
        let wild = ExtractedFields {
            emotions: vec![
                Emotion::new("Joy", 3.0),
                Emotion::new("joy", 0.2),
                Emotion::new("fear", -1.0),
                Emotion::new("anger", f64::NAN),
            ],
            hashtags: vec!["not valid!".into(), "#ok".into()],
            salience: 1.7,
            ..Default::default()
        };
        let b = buffer(&[(Speaker::User, "text", 0)]);
        let rec = extract_metadata(&b, &(0..1), &CannedExtractor(wild), None).unwrap();
        assert_eq!(
            rec.emotions,
            vec![Emotion::new("joy", 1.0), Emotion::new("fear", 0.0), Emotion::new("anger", 0.0)]
        );
        assert_eq!(rec.salience, 1.0);
        assert_eq!(rec.hashtags, vec!["#NotValid", "#Ok"]);
        assert_eq!(rec.event_summary, "text");
    }

    fn turn_strategy() -> impl Strategy<Value = (bool, String, i64)> {
        (
            any::<bool>(),
            proptest::sample::select(vec![
                "the bus was late again",
                "my cat knocked over the plant",
                "exam results came back today",
                "it was fine",
                "dinner with grandma at home",
                "so upset about the exam",
                "the concert tickets sold out instantly",
            ])
            .prop_map(String::from),
            0i64..90,
        )
    }

    proptest! {
        #[test]
        fn segments_cover_user_turns(turns in proptest::collection::vec(turn_strategy(), 1..25)) {
            let mut b = DialogueBuffer::new("p");
            let mut minute = 0;
            for (user, text, gap) in &turns {
                minute += gap;
                let speaker = if *user { Speaker::User } else { Speaker::Agent };
                b.push(speaker, text, Timestamp(0).plus_minutes(minute)).unwrap();
            }
            prop_assume!(b.has_user_turn());
            let segments = segment_events(&b, None).unwrap();
            let mut covered = Vec::new();
            for w in segments.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for s in &segments {
                covered.extend(s.clone().filter(|&i| b.turns[i].speaker == Speaker::User));
            }
            prop_assert_eq!(covered, b.user_turn_indices().collect::<Vec<_>>());
        }

        #[test]
        fn hashtags_always_match_pattern(raw in proptest::collection::vec(".{0,20}", 0..20)) {
            let tags = normalize_hashtags(raw.iter().map(String::as_str), MAX_HASHTAGS);
            prop_assert!(tags.len() <= MAX_HASHTAGS);
            for t in tags {
                prop_assert!(t.len() > 1 && t.starts_with('#'));
                prop_assert!(t[1..].chars().all(|c| c.is_ascii_alphanumeric()));
            }
        }

        #[test]
        fn fallback_is_deterministic(text in "[a-z ]{1,80}") {
            prop_assume!(!text.trim().is_empty());
            let lex = fixture_lexicon();
            prop_assert_eq!(fallback_extract(&text, &lex).unwrap(), fallback_extract(&text, &lex).unwrap());
        }
    }
}
