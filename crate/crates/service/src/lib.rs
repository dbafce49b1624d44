//! HTTP service and command-line front end for the journaling engine.

pub mod api;
pub mod config;
pub mod http_providers;

use std::sync::Arc;

use journal_core::analyzer::{EmotionLexicon, LexiconExtractor};
use journal_core::engine::{Backends, Engine, EngineError};
use journal_core::providers::{Limited, LlmExtractor, ThreadSleeper};
use journal_core::retrieval::HashedBagOfWords;
use journal_core::store::Store;
use journal_core::templater::Templates;

use crate::config::ServiceConfig;
use crate::http_providers::{HttpChat, HttpImage};

/// Mock or HTTP-backed collaborators, per `config.mock_providers`.
///
/// Builds blocking HTTP clients, so call this outside an async runtime.
pub fn backends(config: &ServiceConfig) -> Result<Backends, EngineError> {
    let lexicon = EmotionLexicon::builtin();
    if config.mock_providers {
        return Ok(Backends::mock(lexicon));
    }
    let chat = Arc::new(Limited::new(
        HttpChat::new(config.chat.clone(), &config.chat_model)?,
        config.chat.max_concurrency,
    ));
    let image = Arc::new(Limited::new(
        HttpImage::new(config.image.clone(), &config.image_model)?,
        config.image.max_concurrency,
    ));
    let extractor: Arc<dyn journal_core::analyzer::ExtractionBackend> = if config.llm_extraction {
        Arc::new(LlmExtractor::new(
            Limited::new(
                HttpChat::new(config.chat.clone(), &config.chat_model)?,
                config.chat.max_concurrency,
            ),
            config.chat.retry_policy(),
        ))
    } else {
        Arc::new(LexiconExtractor(lexicon.clone()))
    };
    Ok(Backends {
        chat,
        image,
        extractor,
        fallback_lexicon: Some(lexicon),
        embedder: Arc::new(HashedBagOfWords::default()),
        sleeper: Arc::new(ThreadSleeper),
    })
}

pub fn build_engine(config: &ServiceConfig) -> Result<Engine, EngineError> {
    let store = Store::open(&config.data_dir)?;
    Engine::new(
        Arc::new(store),
        config.engine.clone(),
        backends(config)?,
        Templates::builtin(),
        config.seed,
    )
}
