//! Session service: ingests 4-channel swallow recordings, scores them with a
//! trained checkpoint and serves sessions, waveforms and Health Index trends
//! over HTTP+JSON.

pub mod api;
pub mod error;
pub mod live;
pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use swallow_core::classifier::Checkpoint;
use swallow_core::dsp::{PreprocessConfig, Preprocessor};

pub use api::router;
pub use error::{ApiError, ErrorBody};
pub use store::{OpenReport, SessionRecord, Store, StoreError};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub model_path: Option<PathBuf>,
    /// Simulated-clock multiplier for live recordings.
    pub live_speed: f64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), model_path: None, live_speed: 1.0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot load model: {0}")]
    Model(#[from] swallow_core::Error),
}

pub struct AppState {
    pub store: Store,
    pub model: Option<Checkpoint>,
    pub preprocessor: Preprocessor,
    pub sample_rate_hz: f64,
    pub live_speed: f64,
    pub(crate) jobs: Mutex<HashMap<String, api::Job>>,
    pub(crate) live: tokio::sync::Mutex<Option<live::LiveRecording>>,
}

impl AppState {
    /// Opens the store and loads the checkpoint, if any. Envelopes use the
    /// checkpoint's preprocessing so display and scoring agree.
    pub fn open(cfg: &ServiceConfig) -> Result<(Arc<Self>, OpenReport), ServiceError> {
        let model = cfg.model_path.as_deref().map(Checkpoint::load).transpose()?;
        let pre_cfg = model.as_ref().map_or_else(PreprocessConfig::default, |m| m.preprocess.clone());
        let preprocessor = Preprocessor::new(&pre_cfg)?;
        let (store, report) = Store::open(&cfg.data_dir)?;
        let state = Self {
            store,
            model,
            preprocessor,
            sample_rate_hz: pre_cfg.fs_hz,
            live_speed: cfg.live_speed,
            jobs: Mutex::new(HashMap::new()),
            live: tokio::sync::Mutex::new(None),
        };
        Ok((Arc::new(state), report))
    }
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
/// Every acknowledged write is already synced, so nothing is left to flush.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
