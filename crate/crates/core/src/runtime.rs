//! Assemble corpus, retrieval, gateway and executor from a [`Config`].

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::config::{Config, ConfigError, EmbeddingBackend, RetrievalPool, SplitMethod};
use crate::corpus::{
    load_corpus, load_schema_context, load_vocabulary, split_by_tags, split_corpus, Corpus, CorpusError,
};
use crate::executor::{ExecError, Executor, ExecutorConfig, Mode};
use crate::llm::{
    CassetteBackend, ChatBackend, Gateway, GatewayError, LiveBackend, LiveConfig, RecordingBackend, TOKEN_ENV,
};
use crate::strategies::{Deps, Retriever, Templates, STATIC_EXAMPLES};
use crate::vector::{
    build_index, Embedder, FixtureEmbedder, HashingEmbedder, HttpEmbedder, RecordingEmbedder, VectorError, VectorIndex,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Executor(#[from] ExecError),
    #[error("{what} not found: {}", path.display())]
    NotFound { what: &'static str, path: PathBuf },
    #[error("live mode needs the {TOKEN_ENV} environment variable")]
    MissingToken,
    #[error("{0} is not configured")]
    MissingEndpoint(&'static str),
    #[error("cannot read templates: {0}")]
    Templates(std::io::Error),
}

impl RuntimeError {
    /// Upstream service missing or unreachable, as opposed to bad input.
    pub fn is_backend_unavailable(&self) -> bool {
        matches!(
            self,
            RuntimeError::MissingToken
                | RuntimeError::MissingEndpoint(_)
                | RuntimeError::Vector(VectorError::BackendUnavailable(_))
                | RuntimeError::Gateway(
                    GatewayError::Unreachable(_) | GatewayError::Unauthorized | GatewayError::Timeout
                )
                | RuntimeError::Executor(ExecError::Transport(_))
        )
    }
}

/// Everything a generation or evaluation needs, built once per process (or reload).
pub struct Runtime {
    pub config: Config,
    pub mode: Mode,
    pub corpus: Arc<Corpus>,
    pub dev: Arc<Corpus>,
    pub test: Arc<Corpus>,
    pub deps: Deps,
    pub executor: Executor,
    /// Why retrieval is unavailable, when it is.
    pub retrieval_error: Option<String>,
}

fn require(path: &Path, what: &'static str) -> Result<(), RuntimeError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(RuntimeError::NotFound {
            what,
            path: path.to_path_buf(),
        })
    }
}

pub fn split(config: &Config, corpus: &Corpus) -> Result<(Corpus, Corpus), CorpusError> {
    match config.run.split {
        SplitMethod::Tags => Ok(split_by_tags(corpus)),
        SplitMethod::Random => split_corpus(corpus, config.run.test_fraction, config.run.seed),
    }
}

/// Embedding backend for `mode`: HTTP when live, fixture replay in cassette mode.
pub fn embedder(config: &Config, mode: Mode) -> Result<Arc<dyn Embedder>, RuntimeError> {
    let e = &config.embedding;
    if e.backend == EmbeddingBackend::Hashing {
        return Ok(Arc::new(HashingEmbedder::new(e.dimension)));
    }
    let http = || {
        if e.endpoint.is_empty() {
            return Err(RuntimeError::MissingEndpoint("embedding.endpoint"));
        }
        Ok(HttpEmbedder::new(
            &e.endpoint,
            &e.model,
            e.dimension,
            Duration::from_secs(e.timeout_secs),
        ))
    };
    Ok(match mode {
        Mode::Live => Arc::new(http()?),
        Mode::Record => Arc::new(RecordingEmbedder::new(http()?, &e.fixture)),
        Mode::Cassette => {
            require(&e.fixture, "embedding fixture")?;
            Arc::new(FixtureEmbedder::load(&e.fixture, &e.model, e.dimension)?)
        }
    })
}

/// Chat backend for `mode`; live and record modes need `token`.
pub fn chat_backend(config: &Config, mode: Mode, token: Option<String>) -> Result<Arc<dyn ChatBackend>, RuntimeError> {
    let live = || {
        let token = token
            .clone()
            .filter(|t| !t.is_empty())
            .ok_or(RuntimeError::MissingToken)?;
        if config.llm.endpoint.is_empty() {
            return Err(RuntimeError::MissingEndpoint("llm.endpoint"));
        }
        Ok(LiveBackend::new(LiveConfig {
            endpoint: config.llm.endpoint.clone(),
            token: Some(token),
            timeout: config.llm_timeout(),
        }))
    };
    Ok(match mode {
        Mode::Live => Arc::new(live()?),
        Mode::Record => Arc::new(RecordingBackend::new(live()?, &config.llm.cassette)?),
        Mode::Cassette => {
            require(&config.llm.cassette, "LLM cassette")?;
            Arc::new(CassetteBackend::load(&config.llm.cassette)?)
        }
    })
}

pub fn executor(config: &Config, mode: Mode) -> Result<Executor, RuntimeError> {
    let live = ExecutorConfig {
        rest_base: config.api.rest_base.clone(),
        graphql_url: config.api.graphql_url.clone(),
        timeout: Duration::from_secs(config.api.timeout_secs),
        rate_per_sec: config.api.rate_per_sec,
    };
    Ok(match mode {
        Mode::Live => Executor::live(live),
        Mode::Record => Executor::record(live, &config.api.cassette)?,
        Mode::Cassette => {
            require(&config.api.cassette, "API cassette")?;
            Executor::cassette_file(&config.api.cassette)?
        }
    })
}

pub fn load_corpus_checked(path: &Path) -> Result<Corpus, RuntimeError> {
    require(path, "corpus")?;
    Ok(load_corpus(path)?)
}

/// Load the persisted index if it matches the embedder and covers `pool`, else build one over `corpus`.
pub async fn index_for(
    config: &Config,
    corpus: &Corpus,
    pool: &Corpus,
    embedder: &dyn Embedder,
) -> Result<VectorIndex, VectorError> {
    if config.rag.index.is_file() {
        let index = VectorIndex::load(&config.rag.index)?;
        let covers = pool.iter().all(|e| index.vector(&e.id).is_some());
        if index.backend_id() == embedder.backend_id() && index.dimension() == embedder.dimension() && covers {
            return Ok(index);
        }
        tracing::warn!(path = %config.rag.index.display(), "stored index is stale, rebuilding in memory");
    }
    build_index(corpus, embedder, 32, 4).await
}

impl Runtime {
    /// Build with the token from the environment.
    pub async fn build(config: Config, mode: Mode) -> Result<Self, RuntimeError> {
        let token = std::env::var(TOKEN_ENV).ok();
        Self::build_with_token(config, mode, token).await
    }

    pub async fn build_with_token(config: Config, mode: Mode, token: Option<String>) -> Result<Self, RuntimeError> {
        // Fail on missing data before touching any backend.
        load_corpus_checked(&config.data.corpus)?;
        require(&config.data.vocabulary, "vocabulary")?;
        require(&config.data.schema, "schema")?;
        let backend = chat_backend(&config, mode, token)?;
        let executor = executor(&config, mode)?;
        Self::assemble(config, mode, backend, executor).await
    }

    /// Build around an explicit chat backend and executor; data files and
    /// retrieval still come from `config`.
    pub async fn assemble(
        config: Config,
        mode: Mode,
        backend: Arc<dyn ChatBackend>,
        executor: Executor,
    ) -> Result<Self, RuntimeError> {
        let corpus = load_corpus_checked(&config.data.corpus)?;
        require(&config.data.vocabulary, "vocabulary")?;
        require(&config.data.schema, "schema")?;
        let vocab = load_vocabulary(&config.data.vocabulary)?;
        let (dev, test) = split(&config, &corpus)?;
        let schema = load_schema_context(&config.data.schema)?.with_examples_from(&dev, STATIC_EXAMPLES);
        let templates = match &config.data.templates {
            Some(dir) => Templates::load_dir(dir).map_err(RuntimeError::Templates)?,
            None => Templates::default(),
        };
        let pool = match config.rag.pool {
            RetrievalPool::Dev => dev.clone(),
            RetrievalPool::All => corpus.clone(),
        };
        let gateway = Gateway::new(backend, config.llm.max_in_flight);

        let (retriever, retrieval_error) = match embedder(&config, mode) {
            Ok(embedder) => match index_for(&config, &corpus, &pool, embedder.as_ref()).await {
                Ok(index) => (
                    Some(Retriever {
                        index: Arc::new(index),
                        embedder,
                    }),
                    None,
                ),
                Err(e) => (None, Some(e.to_string())),
            },
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(e) = &retrieval_error {
            tracing::warn!(error = %e, "retrieval unavailable; rag and agentic strategies will fail");
        }

        let deps = Deps {
            pool: Arc::new(pool),
            vocab: Arc::new(vocab),
            schema: Arc::new(schema),
            templates: Arc::new(templates),
            retriever,
            gateway,
            k: config.rag.k,
            agent1_model: config.llm.agent1_model.clone(),
        };
        Ok(Self {
            mode,
            corpus: Arc::new(corpus),
            dev: Arc::new(dev),
            test: Arc::new(test),
            deps,
            executor,
            retrieval_error,
            config,
        })
    }
}
