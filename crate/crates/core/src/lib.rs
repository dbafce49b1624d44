//! Journaling engine: episodic memory scoring and retrieval, event-emotion
//! analysis of dialogue, persona preferences, and diary/image prompt
//! compilation, backed by an append-only JSONL store.

pub mod analyzer;
pub mod engine;
pub mod harness;
pub mod memory;
pub mod text;
pub mod persona;
pub mod providers;
pub mod retrieval;
pub mod store;
pub mod templater;
