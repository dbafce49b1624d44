//! Session pipeline: conversation turns with memory recall, and diary
//! composition when a session closes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analyzer::{
    extract_metadata, segment_events, AnalyzerError, DialogueBuffer, EmotionLexicon, EventRecord,
    ExtractionBackend, LexiconExtractor, Speaker, Turn,
};
use crate::memory::{register_recall, top_emotion, MemoryError, MemoryFragment, ScoringParams, Timestamp};
use crate::persona::{compose_style_prompt, validate_preferences, Preferences, ValidationError};
use crate::providers::{
    chat_complete, generate_image, ChatProvider, ChatRequest, ChatTask, ImageProvider, MockChat, MockImage,
    ProviderError, RecalledMemory, RetryPolicy, Sleeper, ThreadSleeper,
};
use crate::retrieval::{
    fragment_text, select_memories, Embedder, HashedBagOfWords, RankedMemory, RetrievalError, RetrievalQuery,
    DEFAULT_CONTEXT_TURNS, DEFAULT_K,
};
use crate::store::{FragmentFilter, Store, StoreError, UserRecord};
use crate::templater::{
    build_diary_prompt_with_memories, build_image_prompt, compose_entry, top_salience_event, DiaryEntry,
    TemplateError, Templates,
};

/// Earlier turns sent along with each reply request.
const DIALOGUE_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid argument{}: {message}", field.as_deref().map(|f| format!(" `{f}`")).unwrap_or_default())]
    InvalidArgument { field: Option<String>, message: String },
    #[error("{what} `{id}` not found")]
    NotFound { what: &'static str, id: String },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Provider(ProviderError),
    #[error("storage error: {0}")]
    Storage(String),
}

impl EngineError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        EngineError::InvalidArgument {
            field: Some(field.into()),
            message: message.into(),
        }
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { what, id } => EngineError::NotFound { what, id },
            StoreError::InvalidArgument(m) => EngineError::InvalidArgument { field: None, message: m },
            other => EngineError::Storage(other.to_string()),
        }
    }
}

impl From<ValidationError> for EngineError {
    fn from(e: ValidationError) -> Self {
        EngineError::invalid(e.field, e.message)
    }
}

impl From<MemoryError> for EngineError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::InvalidArgument { field, message } => EngineError::invalid(field, message),
        }
    }
}

impl From<RetrievalError> for EngineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::InvalidArgument { field, message } => EngineError::invalid(field, message),
            RetrievalError::Memory(m) => m.into(),
        }
    }
}

impl From<AnalyzerError> for EngineError {
    fn from(e: AnalyzerError) -> Self {
        match e {
            AnalyzerError::EmptyInput(what) => EngineError::InvalidArgument {
                field: None,
                message: format!("empty input: {what}"),
            },
            AnalyzerError::InvalidBuffer(m) => EngineError::InvalidArgument { field: None, message: m },
            other => EngineError::Storage(other.to_string()),
        }
    }
}

impl From<TemplateError> for EngineError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::InvalidArgument { field, message } => EngineError::invalid(field, message),
            other => EngineError::Storage(other.to_string()),
        }
    }
}

impl From<ProviderError> for EngineError {
    fn from(e: ProviderError) -> Self {
        EngineError::Provider(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub params: ScoringParams,
    pub k: usize,
    pub context_turns: usize,
    pub image_enabled: bool,
    /// Feed memories related to the session into the diary prompt.
    pub diary_includes_memories: bool,
    pub chat_retry: RetryPolicy,
    pub image_retry: RetryPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            params: ScoringParams::default(),
            k: DEFAULT_K,
            context_turns: DEFAULT_CONTEXT_TURNS,
            image_enabled: true,
            diary_includes_memories: false,
            chat_retry: RetryPolicy::default(),
            image_retry: RetryPolicy::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.params.validate()?;
        if self.k == 0 {
            return Err(EngineError::invalid("k", "must be at least 1"));
        }
        if self.context_turns == 0 {
            return Err(EngineError::invalid("context_turns", "must be at least 1"));
        }
        Ok(())
    }
}

/// External collaborators the engine talks to.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatProvider>,
    pub image: Arc<dyn ImageProvider>,
    pub extractor: Arc<dyn ExtractionBackend>,
    /// Used when the extractor fails. `None` turns extractor failures into errors.
    pub fallback_lexicon: Option<EmotionLexicon>,
    pub embedder: Arc<dyn Embedder>,
    pub sleeper: Arc<dyn Sleeper>,
}

impl Backends {
    /// Deterministic mocks throughout, extraction by lexicon.
    pub fn mock(lexicon: EmotionLexicon) -> Self {
        Self {
            chat: Arc::new(MockChat::default()),
            image: Arc::new(MockImage::default()),
            extractor: Arc::new(LexiconExtractor(lexicon.clone())),
            fallback_lexicon: Some(lexicon),
            embedder: Arc::new(HashedBagOfWords::default()),
            sleeper: Arc::new(ThreadSleeper),
        }
    }
}

/// Seeded source of opaque identifiers.
#[derive(Debug)]
pub struct IdGenerator {
    rng: ChaCha8Rng,
}

impl IdGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next(&mut self, prefix: &str) -> String {
        format!("{prefix}-{:016x}", self.rng.next_u64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub buffer: DialogueBuffer,
    pub state: SessionState,
    pub opened_at: Timestamp,
}

/// A recalled memory as shown next to a reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedMemory {
    pub id: String,
    pub event_summary: String,
    pub top_emotion: Option<String>,
    pub age_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub reply: String,
    pub cited_memory_ids: Vec<String>,
    pub ranked: Vec<RankedMemory>,
    pub cited_memories: Vec<CitedMemory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseOutcome {
    pub diary: DiaryEntry,
    pub new_fragment_ids: Vec<String>,
    pub warnings: Vec<String>,
}

pub struct Engine {
    store: Arc<Store>,
    config: EngineConfig,
    backends: Backends,
    templates: Templates,
    ids: Mutex<IdGenerator>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Engine {
    pub fn new(
        store: Arc<Store>,
        config: EngineConfig,
        backends: Backends,
        templates: Templates,
        seed: u64,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            store,
            config,
            backends,
            templates,
            ids: Mutex::new(IdGenerator::new(seed)),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Draws ids until `taken` reports a free one.
    fn fresh_id(
        &self,
        prefix: &str,
        mut taken: impl FnMut(&str) -> Result<bool, EngineError>,
    ) -> Result<String, EngineError> {
        loop {
            let id = self.ids.lock().unwrap().next(prefix);
            if !taken(&id)? {
                return Ok(id);
            }
        }
    }

    pub fn create_user(&self, preferences: &Value, now: Timestamp) -> Result<UserRecord, EngineError> {
        let mut prefs = validate_preferences(preferences)?;
        let user_id = if prefs.user_id.is_empty() {
            self.fresh_id("user", |id| Ok(self.store.user_exists(id)))?
        } else {
            crate::store::validate_user_id(&prefs.user_id)
                .map_err(|_| EngineError::invalid("user_id", "must be 1-64 characters of [A-Za-z0-9_-]"))?;
            if self.store.user_exists(&prefs.user_id) {
                return Err(EngineError::Conflict(format!("user `{}` already exists", prefs.user_id)));
            }
            prefs.user_id.clone()
        };
        prefs.user_id = user_id.clone();
        let record = UserRecord {
            user_id,
            preferences: prefs,
            created_at: now,
        };
        self.store.put_profile(&record)?;
        Ok(record)
    }

    pub fn get_preferences(&self, user_id: &str) -> Result<Preferences, EngineError> {
        Ok(self.store.get_profile(user_id)?.preferences)
    }

    pub fn put_preferences(&self, user_id: &str, preferences: &Value) -> Result<Preferences, EngineError> {
        let existing = self.store.get_profile(user_id)?;
        let mut prefs = validate_preferences(preferences)?;
        if !prefs.user_id.is_empty() && prefs.user_id != user_id {
            return Err(EngineError::invalid("user_id", "does not match the path"));
        }
        prefs.user_id = user_id.to_string();
        self.store.put_profile(&UserRecord {
            preferences: prefs.clone(),
            ..existing
        })?;
        Ok(prefs)
    }

    pub fn open_session(&self, user_id: &str, now: Timestamp) -> Result<Session, EngineError> {
        self.store.get_profile(user_id)?;
        let mut sessions = self.sessions.lock().unwrap();
        let session_id = self.fresh_id("session", |id| Ok(sessions.contains_key(id)))?;
        let session = Session {
            session_id: session_id.clone(),
            user_id: user_id.to_string(),
            buffer: DialogueBuffer::new(session_id.clone()),
            state: SessionState::Open,
            opened_at: now,
        };
        sessions.insert(session_id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<Session>>, EngineError> {
        self.sessions
            .lock()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| EngineError::NotFound {
                what: "session",
                id: session_id.to_string(),
            })
    }

    pub fn get_session(&self, session_id: &str) -> Result<Session, EngineError> {
        Ok(self.session(session_id)?.lock().unwrap().clone())
    }

    fn all_fragments(&self, user_id: &str, now: Timestamp) -> Result<Vec<MemoryFragment>, EngineError> {
        Ok(self
            .store
            .get_fragments(user_id, &FragmentFilter::default(), &self.config.params, now)?)
    }

    /// Handles one user message. Messages within a session are serialized.
    ///
    /// The user turn is recorded before anything else, so it survives a
    /// provider failure; recalls are only registered once a reply exists.
    pub fn post_message(&self, session_id: &str, text: &str, now: Timestamp) -> Result<MessageOutcome, EngineError> {
        if text.trim().is_empty() {
            return Err(EngineError::invalid("text", "must be non-empty"));
        }
        let session = self.session(session_id)?;
        let mut session = session.lock().unwrap();
        if session.state == SessionState::Closed {
            return Err(EngineError::Conflict(format!("session `{session_id}` is closed")));
        }
        if session.buffer.turns.last().is_some_and(|t| now < t.at) {
            return Err(EngineError::invalid("now", "precedes the previous turn"));
        }
        let user_id = session.user_id.clone();
        let prefs = self.get_preferences(&user_id)?;
        session.buffer.push(Speaker::User, text, now)?;

        let corpus = self.all_fragments(&user_id, now)?;
        let mut query = RetrievalQuery::new(
            user_id.clone(),
            session.buffer.recent_user_text(self.config.context_turns),
            now,
        );
        query.k = self.config.k;
        let ranked = select_memories(&query, &corpus, &self.config.params, self.backends.embedder.as_ref())?;

        let by_id: HashMap<&str, &MemoryFragment> = corpus.iter().map(|f| (f.id.as_str(), f)).collect();
        let cited_memories: Vec<CitedMemory> = ranked
            .iter()
            .map(|r| {
                let f = by_id[r.fragment_id.as_str()];
                Ok(CitedMemory {
                    id: f.id.clone(),
                    event_summary: f.event_summary.clone(),
                    top_emotion: top_emotion(&f.emotions).map(|e| e.label.clone()),
                    age_days: f.age_days(now)?,
                })
            })
            .collect::<Result<_, MemoryError>>()?;

        let turns = &session.buffer.turns;
        let window_start = turns.len().saturating_sub(DIALOGUE_WINDOW + 1);
        let request = ChatRequest {
            task: ChatTask::Reply,
            style_fragments: compose_style_prompt(&prefs).fragments,
            retrieved_memories: cited_memories
                .iter()
                .map(|c| RecalledMemory {
                    event_summary: c.event_summary.clone(),
                    top_emotion: c.top_emotion.clone(),
                    age_days: c.age_days,
                })
                .collect(),
            dialogue_window: turns[window_start..turns.len() - 1].to_vec(),
            user_message: text.to_string(),
        };
        let reply = chat_complete(
            self.backends.chat.as_ref(),
            &request,
            &self.config.chat_retry,
            self.backends.sleeper.as_ref(),
        )?;

        let cited_memory_ids: Vec<String> = ranked.iter().map(|r| r.fragment_id.clone()).collect();
        self.store.update_fragments(&user_id, &cited_memory_ids, |f| {
            register_recall(f, now).map_err(|e| StoreError::InvalidArgument(e.to_string()))
        })?;
        session.buffer.push(Speaker::Agent, &reply, now)?;

        Ok(MessageOutcome {
            reply,
            cited_memory_ids,
            ranked,
            cited_memories,
        })
    }

    /// Turns the session into stored fragments and one diary entry.
    ///
    /// Nothing is persisted unless the diary text was generated; a failed
    /// image only drops `image_ref` and adds a warning.
    pub fn close_session(&self, session_id: &str, now: Timestamp) -> Result<CloseOutcome, EngineError> {
        let session = self.session(session_id)?;
        let mut session = session.lock().unwrap();
        if session.state == SessionState::Closed {
            return Err(EngineError::Conflict(format!("session `{session_id}` is already closed")));
        }
        if !session.buffer.has_user_turn() {
            return Err(EngineError::InvalidState(format!("session `{session_id}` has no user turns")));
        }
        if session.buffer.turns.last().is_some_and(|t| now < t.at) {
            return Err(EngineError::invalid("now", "precedes the last turn"));
        }
        let user_id = session.user_id.clone();
        let prefs = self.get_preferences(&user_id)?;
        let extractor = self.backends.extractor.as_ref();

        let segments = segment_events(&session.buffer, Some(extractor))?;
        let events: Vec<EventRecord> = segments
            .iter()
            .map(|s| extract_metadata(&session.buffer, s, extractor, self.backends.fallback_lexicon.as_ref()))
            .collect::<Result<_, _>>()?;

        let mut fragments = Vec::with_capacity(events.len());
        for event in &events {
            let id = self.fresh_id("mem", |id| {
                Ok(self.store.fragment_exists(&user_id, id)? || fragments.iter().any(|f: &MemoryFragment| f.id == id))
            })?;
            let mut f = MemoryFragment::new(
                id,
                user_id.clone(),
                event.event_summary.clone(),
                event.emotions.clone(),
                event.salience,
                event.occurred_at,
            );
            f.hashtags = event.hashtags.clone();
            f.people = event.people.clone();
            f.objects = event.objects.clone();
            f.places = event.places.clone();
            f.embedding = Some(self.backends.embedder.embed(&fragment_text(&f))?);
            fragments.push(f);
        }

        let related = if self.config.diary_includes_memories {
            self.related_summaries(&user_id, &session.buffer, now)?
        } else {
            Vec::new()
        };
        let style = compose_style_prompt(&prefs);
        let diary_prompt = build_diary_prompt_with_memories(&events, &prefs, &style, &related, &self.templates)?;
        let request = ChatRequest {
            task: ChatTask::Diary,
            style_fragments: style.fragments.clone(),
            retrieved_memories: Vec::new(),
            dialogue_window: Vec::<Turn>::new(),
            user_message: diary_prompt,
        };
        let diary_text = chat_complete(
            self.backends.chat.as_ref(),
            &request,
            &self.config.chat_retry,
            self.backends.sleeper.as_ref(),
        )?;

        let mut warnings = Vec::new();
        let top = top_salience_event(&events).expect("segmentation yields at least one event");
        let image_prompt = build_image_prompt(top, &prefs, &self.templates)?;
        let image_ref = if self.config.image_enabled {
            match generate_image(
                self.backends.image.as_ref(),
                &image_prompt,
                &self.config.image_retry,
                self.backends.sleeper.as_ref(),
            ) {
                Ok(r) => Some(r),
                Err(e) => {
                    let w = format!("image generation failed, diary saved without image: {e}");
                    log::warn!("{w}");
                    warnings.push(w);
                    None
                }
            }
        } else {
            None
        };

        let sources: Vec<(String, EventRecord)> = fragments.iter().map(|f| f.id.clone()).zip(events).collect();
        let diary_id = self.fresh_id("diary", |id| Ok(self.store.diary_exists(&user_id, id)?))?;
        let diary = compose_entry(diary_id, user_id.clone(), &diary_text, &image_prompt, image_ref, &sources, now)?;

        for f in &fragments {
            self.store.put_fragment(f)?;
        }
        self.store.put_diary(&diary)?;
        session.state = SessionState::Closed;

        Ok(CloseOutcome {
            diary,
            new_fragment_ids: fragments.into_iter().map(|f| f.id).collect(),
            warnings,
        })
    }

    /// Summaries of stored memories related to the whole session, for the
    /// diary prompt. Does not count as a recall.
    fn related_summaries(
        &self,
        user_id: &str,
        buffer: &DialogueBuffer,
        now: Timestamp,
    ) -> Result<Vec<String>, EngineError> {
        let corpus = self.all_fragments(user_id, now)?;
        let text = buffer.recent_user_text(usize::MAX);
        let mut query = RetrievalQuery::new(user_id, text, now);
        query.k = self.config.k;
        let ranked = select_memories(&query, &corpus, &self.config.params, self.backends.embedder.as_ref())?;
        Ok(ranked
            .iter()
            .filter_map(|r| corpus.iter().find(|f| f.id == r.fragment_id))
            .map(|f| f.event_summary.clone())
            .collect())
    }
}
