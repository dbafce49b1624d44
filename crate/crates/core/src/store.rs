//! Durable per-user storage in JSON-lines files.
//!
//! Layout: `<data_dir>/<user_id>/{profile,fragments,diaries}.jsonl`. Every line
//! carries a `schema_version`. Files only ever grow, and each write lands as a
//! whole new file (temp file, fsync, rename), so a crash leaves either the old
//! or the new content. Fragment recall updates are appended as new versions;
//! the last line for an id wins on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::memory::{classify_term, memory_strength, MemoryFragment, MemoryTerm, ScoringParams, Timestamp};
use crate::persona::Preferences;
use crate::templater::DiaryEntry;

pub const SCHEMA_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "PERSODE_DATA_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("{what} `{id}` not found")]
    NotFound { what: &'static str, id: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("storage I/O error: {0}")]
    Io(String),
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("{path}:{line}: schema_version {version} is newer than supported version {SCHEMA_VERSION}")]
    UnsupportedVersion { path: String, line: usize, version: u64 },
    #[error("recall_count for fragment `{id}` would decrease from {stored} to {attempted}")]
    NonMonotoneRecall { id: String, stored: u32, attempted: u32 },
    #[error("injected failure after temp write")]
    Injected,
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub preferences: Preferences,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Profile,
    Fragments,
    Diaries,
}

impl Kind {
    fn file_name(self) -> &'static str {
        match self {
            Kind::Profile => "profile.jsonl",
            Kind::Fragments => "fragments.jsonl",
            Kind::Diaries => "diaries.jsonl",
        }
    }
}

/// Test hook for crash simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// Write the temp file, then fail before renaming it into place.
    AfterTempWrite,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FragmentFilter {
    pub min_strength: Option<f64>,
    pub term: Option<MemoryTerm>,
    pub since: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiaryPage {
    pub entries: Vec<DiaryEntry>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    /// Pass back to page through the same snapshot while new entries arrive.
    pub snapshot: usize,
}

#[derive(Debug, Default)]
struct UserState {
    profile: Option<UserRecord>,
    fragments: Vec<MemoryFragment>,
    fragment_index: HashMap<String, usize>,
    diaries: Vec<DiaryEntry>,
}

impl UserState {
    fn upsert_fragment(&mut self, fragment: MemoryFragment) {
        match self.fragment_index.get(&fragment.id) {
            Some(&i) => self.fragments[i] = fragment,
            None => {
                self.fragment_index.insert(fragment.id.clone(), self.fragments.len());
                self.fragments.push(fragment);
            }
        }
    }
}

#[derive(Serialize)]
struct VersionedRef<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

pub fn validate_user_id(user_id: &str) -> Result<(), StoreError> {
    let ok = !user_id.is_empty()
        && user_id.len() <= 64
        && user_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidArgument(format!(
            "user id `{user_id}` must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}

/// Serializes one record as a versioned JSONL line (with trailing newline).
pub fn encode_line<T: Serialize>(record: &T) -> Result<String, StoreError> {
    let mut line = serde_json::to_string(&VersionedRef {
        schema_version: SCHEMA_VERSION,
        record,
    })
    .map_err(|e| StoreError::Io(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

/// Parses one versioned line; rejects versions newer than [`SCHEMA_VERSION`].
pub fn decode_line<T: DeserializeOwned>(line: &str, path: &str, line_no: usize) -> Result<T, StoreError> {
    let corrupt = |message: String| StoreError::Corrupt {
        path: path.to_string(),
        line: line_no,
        message,
    };
    let mut value: Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| corrupt("expected a JSON object".into()))?;
    let version = obj
        .remove("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("missing schema_version".into()))?;
    if version > u64::from(SCHEMA_VERSION) {
        return Err(StoreError::UnsupportedVersion {
            path: path.to_string(),
            line: line_no,
            version,
        });
    }
    serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
}

/// Loaded records plus any warnings about skipped lines.
fn read_records<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<String>), StoreError> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), Vec::new())),
        Err(e) => return Err(e.into()),
    };
    let display = path.display().to_string();
    let complete = content.ends_with('\n');
    let lines: Vec<&str> = content.lines().collect();
    let mut records = Vec::with_capacity(lines.len());
    let mut warnings = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match decode_line(line, &display, i + 1) {
            Ok(r) => records.push(r),
            Err(StoreError::Corrupt { message, .. }) if i + 1 == lines.len() && !complete => {
                let w = format!("{display}:{}: skipping truncated trailing line ({message})", i + 1);
                log::warn!("{w}");
                warnings.push(w);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((records, warnings))
}

pub struct Store {
    root: PathBuf,
    users: Mutex<HashMap<String, Arc<Mutex<UserState>>>>,
    fail_point: Mutex<Option<FailPoint>>,
    warnings: Mutex<Vec<String>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            users: Mutex::new(HashMap::new()),
            fail_point: Mutex::new(None),
            warnings: Mutex::new(Vec::new()),
        })
    }

    /// `$PERSODE_DATA_DIR` if set, else `default`.
    pub fn data_dir_from_env(default: impl Into<PathBuf>) -> PathBuf {
        std::env::var_os(DATA_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| default.into())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Arms a one-shot failure for the next file write.
    pub fn inject_failure(&self, point: FailPoint) {
        *self.fail_point.lock().unwrap() = Some(point);
    }

    /// Warnings collected while loading files (e.g. skipped truncated lines).
    pub fn load_warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().clone()
    }

    fn user_dir(&self, user_id: &str) -> PathBuf {
        self.root.join(user_id)
    }

    fn path(&self, user_id: &str, kind: Kind) -> PathBuf {
        self.user_dir(user_id).join(kind.file_name())
    }

    fn state(&self, user_id: &str) -> Result<Arc<Mutex<UserState>>, StoreError> {
        validate_user_id(user_id)?;
        let mut users = self.users.lock().unwrap();
        if let Some(s) = users.get(user_id) {
            return Ok(s.clone());
        }
        let state = self.load_user(user_id)?;
        let state = Arc::new(Mutex::new(state));
        users.insert(user_id.to_string(), state.clone());
        Ok(state)
    }

    fn load_user(&self, user_id: &str) -> Result<UserState, StoreError> {
        let mut state = UserState::default();
        let dir = self.user_dir(user_id);
        if !dir.exists() {
            return Ok(state);
        }
        for kind in [Kind::Profile, Kind::Fragments, Kind::Diaries] {
            let tmp = self.path(user_id, kind).with_extension("jsonl.tmp");
            if tmp.exists() {
                log::warn!("removing stale temp file {}", tmp.display());
                let _ = fs::remove_file(&tmp);
            }
        }
        let mut warnings = Vec::new();
        let (profiles, w) = read_records::<UserRecord>(&self.path(user_id, Kind::Profile))?;
        warnings.extend(w);
        state.profile = profiles.into_iter().last();
        let (fragments, w) = read_records::<MemoryFragment>(&self.path(user_id, Kind::Fragments))?;
        warnings.extend(w);
        for f in fragments {
            state.upsert_fragment(f);
        }
        let (diaries, w) = read_records::<DiaryEntry>(&self.path(user_id, Kind::Diaries))?;
        warnings.extend(w);
        state.diaries = diaries;
        self.warnings.lock().unwrap().extend(warnings);
        Ok(state)
    }

    /// Appends `line` by writing the whole new file next to the old one and
    /// renaming it into place.
    fn append_line(&self, user_id: &str, kind: Kind, line: &str) -> Result<(), StoreError> {
        let dir = self.user_dir(user_id);
        fs::create_dir_all(&dir)?;
        let path = self.path(user_id, kind);
        let tmp = path.with_extension("jsonl.tmp");
        let mut content = match fs::read(&path) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if !content.is_empty() && !content.ends_with(b"\n") {
            // Drop a torn trailing line left by an earlier crash.
            let keep = content.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            content.truncate(keep);
        }
        content.extend_from_slice(line.as_bytes());
        {
            let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(&tmp)?;
            f.write_all(&content)?;
            f.sync_all()?;
        }
        if self.fail_point.lock().unwrap().take() == Some(FailPoint::AfterTempWrite) {
            return Err(StoreError::Injected);
        }
        fs::rename(&tmp, &path)?;
        if let Ok(d) = File::open(&dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    /// Creates or replaces a user's profile. Last write wins.
    pub fn put_profile(&self, record: &UserRecord) -> Result<(), StoreError> {
        let state = self.state(&record.user_id)?;
        let mut state = state.lock().unwrap();
        self.append_line(&record.user_id, Kind::Profile, &encode_line(record)?)?;
        state.profile = Some(record.clone());
        Ok(())
    }

    pub fn get_profile(&self, user_id: &str) -> Result<UserRecord, StoreError> {
        let state = self.state(user_id)?;
        let state = state.lock().unwrap();
        state.profile.clone().ok_or_else(|| StoreError::NotFound {
            what: "user",
            id: user_id.to_string(),
        })
    }

    pub fn user_exists(&self, user_id: &str) -> bool {
        self.get_profile(user_id).is_ok()
    }

    fn require_user(state: &UserState, user_id: &str) -> Result<(), StoreError> {
        if state.profile.is_none() {
            return Err(StoreError::NotFound {
                what: "user",
                id: user_id.to_string(),
            });
        }
        Ok(())
    }

    /// Stores a fragment, or a newer version of one. Recall counts may not go down.
    pub fn put_fragment(&self, fragment: &MemoryFragment) -> Result<String, StoreError> {
        if fragment.id.is_empty() {
            return Err(StoreError::InvalidArgument("fragment id must be non-empty".into()));
        }
        let state = self.state(&fragment.user_id)?;
        let mut state = state.lock().unwrap();
        Self::require_user(&state, &fragment.user_id)?;
        if let Some(&i) = state.fragment_index.get(&fragment.id) {
            let stored = state.fragments[i].recall_count;
            if fragment.recall_count < stored {
                return Err(StoreError::NonMonotoneRecall {
                    id: fragment.id.clone(),
                    stored,
                    attempted: fragment.recall_count,
                });
            }
        }
        self.append_line(&fragment.user_id, Kind::Fragments, &encode_line(fragment)?)?;
        state.upsert_fragment(fragment.clone());
        Ok(fragment.id.clone())
    }

    /// Applies `update` to stored fragments under the user's write lock and
    /// persists each changed version.
    pub fn update_fragments(
        &self,
        user_id: &str,
        ids: &[String],
        mut update: impl FnMut(&MemoryFragment) -> Result<MemoryFragment, StoreError>,
    ) -> Result<Vec<MemoryFragment>, StoreError> {
        let state = self.state(user_id)?;
        let mut state = state.lock().unwrap();
        Self::require_user(&state, user_id)?;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let i = *state.fragment_index.get(id).ok_or_else(|| StoreError::NotFound {
                what: "fragment",
                id: id.clone(),
            })?;
            let next = update(&state.fragments[i])?;
            if next.id != *id || next.recall_count < state.fragments[i].recall_count {
                return Err(StoreError::NonMonotoneRecall {
                    id: id.clone(),
                    stored: state.fragments[i].recall_count,
                    attempted: next.recall_count,
                });
            }
            self.append_line(user_id, Kind::Fragments, &encode_line(&next)?)?;
            state.fragments[i] = next.clone();
            out.push(next);
        }
        Ok(out)
    }

    /// Snapshot of the user's fragments matching `filter`, oldest first.
    pub fn get_fragments(
        &self,
        user_id: &str,
        filter: &FragmentFilter,
        params: &ScoringParams,
        now: Timestamp,
    ) -> Result<Vec<MemoryFragment>, StoreError> {
        let state = self.state(user_id)?;
        let snapshot = {
            let state = state.lock().unwrap();
            Self::require_user(&state, user_id)?;
            state.fragments.clone()
        };
        let mut out = Vec::with_capacity(snapshot.len());
        for f in snapshot {
            if filter.since.is_some_and(|since| f.created_at < since) {
                continue;
            }
            if filter.min_strength.is_some() || filter.term.is_some() {
                if f.created_at > now {
                    continue;
                }
                if let Some(min) = filter.min_strength {
                    let s = memory_strength(&f, params, now).map_err(|e| StoreError::InvalidArgument(e.to_string()))?;
                    if s < min {
                        continue;
                    }
                }
                if let Some(term) = filter.term {
                    if classify_term(&f, params, now).map_err(|e| StoreError::InvalidArgument(e.to_string()))? != term {
                        continue;
                    }
                }
            }
            out.push(f);
        }
        out.sort_by_key(|f| f.created_at);
        Ok(out)
    }

    pub fn get_fragment(&self, user_id: &str, id: &str) -> Result<MemoryFragment, StoreError> {
        let state = self.state(user_id)?;
        let state = state.lock().unwrap();
        Self::require_user(&state, user_id)?;
        state
            .fragment_index
            .get(id)
            .map(|&i| state.fragments[i].clone())
            .ok_or_else(|| StoreError::NotFound {
                what: "fragment",
                id: id.to_string(),
            })
    }

    pub fn fragment_exists(&self, user_id: &str, id: &str) -> Result<bool, StoreError> {
        let state = self.state(user_id)?;
        let state = state.lock().unwrap();
        Ok(state.fragment_index.contains_key(id))
    }

    pub fn diary_exists(&self, user_id: &str, id: &str) -> Result<bool, StoreError> {
        let state = self.state(user_id)?;
        let state = state.lock().unwrap();
        Ok(state.diaries.iter().any(|d| d.id == id))
    }

    pub fn put_diary(&self, entry: &DiaryEntry) -> Result<(), StoreError> {
        if entry.source_event_ids.is_empty() {
            return Err(StoreError::InvalidArgument("diary entry needs source events".into()));
        }
        let state = self.state(&entry.user_id)?;
        let mut state = state.lock().unwrap();
        Self::require_user(&state, &entry.user_id)?;
        self.append_line(&entry.user_id, Kind::Diaries, &encode_line(entry)?)?;
        state.diaries.push(entry.clone());
        Ok(())
    }

    /// One page (1-based) of diaries, newest first. `snapshot` pins the set of
    /// entries considered so later inserts do not shift earlier pages.
    pub fn list_diaries(
        &self,
        user_id: &str,
        page: usize,
        page_size: usize,
        snapshot: Option<usize>,
    ) -> Result<DiaryPage, StoreError> {
        if page_size < 1 {
            return Err(StoreError::InvalidArgument("page_size must be at least 1".into()));
        }
        if page < 1 {
            return Err(StoreError::InvalidArgument("page must be at least 1".into()));
        }
        let state = self.state(user_id)?;
        let state = state.lock().unwrap();
        Self::require_user(&state, user_id)?;
        let visible = snapshot.unwrap_or(state.diaries.len());
        if visible > state.diaries.len() {
            return Err(StoreError::InvalidArgument(format!("unknown snapshot token {visible}")));
        }
        let mut order: Vec<usize> = (0..visible).collect();
        order.sort_by(|&a, &b| {
            state.diaries[b]
                .created_at
                .cmp(&state.diaries[a].created_at)
                .then(b.cmp(&a))
        });
        let entries = order
            .into_iter()
            .skip((page - 1).saturating_mul(page_size))
            .take(page_size)
            .map(|i| state.diaries[i].clone())
            .collect();
        Ok(DiaryPage {
            entries,
            page,
            page_size,
            total: visible,
            snapshot: visible,
        })
    }
}
