#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use swallow_core::classifier::{build_network, train, Checkpoint, ModelConfig, TrainConfig};
use swallow_core::dsp::{PreprocessConfig, Preprocessor};
use swallow_core::signal::{make_corpus, CorpusRecord, LabeledDataset};
use swallow_service::{serve, AppState, ServiceConfig};
use tokio::sync::oneshot;

pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(cfg: ServiceConfig) -> Self {
        let (state, _) = AppState::open(&cfg).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, Arc::clone(&state), async {
            let _ = rx.await;
        }));
        Self { base, state, stop: Some(tx), task: Some(task) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn shutdown(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap();
    }
}

pub fn corpus() -> &'static LabeledDataset {
    static C: OnceLock<LabeledDataset> = OnceLock::new();
    C.get_or_init(|| make_corpus(3, 3, 6, 77).unwrap())
}

pub fn record(i: usize) -> CorpusRecord {
    CorpusRecord::from_item(&corpus().items[i])
}

/// A small model trained once per test binary and written to `dir`.
pub fn trained_checkpoint(dir: &Path) -> PathBuf {
    static CK: OnceLock<Checkpoint> = OnceLock::new();
    let ck = CK.get_or_init(|| {
        let pre = Preprocessor::new(&PreprocessConfig::default()).unwrap();
        let net = build_network(&ModelConfig { seed: 3, ..Default::default() }).unwrap();
        let tc = TrainConfig { iterations: 30, batch_size: 6, val_fraction: 0.34, seed: 1, ..Default::default() };
        let out = train(&net, &pre, corpus(), &tc).unwrap();
        Checkpoint::new(out.network, PreprocessConfig::default(), Some(tc.seed))
    });
    let path = dir.join("model.json");
    ck.save(&path).unwrap();
    path
}
