#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use swallow_core::signal::{make_corpus, CorpusRecord};
use swallow_service::store::Store;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_swallow")
}

pub fn swallow(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn swallow")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub struct ServeChild {
    pub child: Child,
    pub base: String,
}

impl ServeChild {
    pub fn start(data_dir: &Path, model: Option<&Path>) -> Self {
        let mut cmd = Command::new(bin());
        cmd.args(["serve", "--port", "0", "--data-dir"]).arg(data_dir);
        if let Some(m) = model {
            cmd.arg("--model").arg(m);
        }
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::null()).spawn().expect("spawn serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
        Self { child, base }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn signal(&self, sig: &str) {
        let ok = Command::new("kill").args(["-s", sig, &self.child.id().to_string()]).status().unwrap().success();
        assert!(ok, "kill -s {sig} failed");
    }

    /// Sends SIGTERM and returns the exit code.
    pub fn terminate(mut self) -> Option<i32> {
        self.signal("TERM");
        self.child.wait().unwrap().code()
    }
}

impl Drop for ServeChild {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn payloads(n: usize) -> Vec<serde_json::Value> {
    let ds = make_corpus(2, 2, n.div_ceil(4).max(1), 5).unwrap();
    ds.items.iter().take(n).map(|i| serde_json::to_value(CorpusRecord::from_item(i)).unwrap()).collect()
}

#[derive(Debug, Default)]
pub struct CrashReport {
    pub rounds: usize,
    pub acknowledged: usize,
    pub visible: usize,
    pub missing_acknowledged: Vec<String>,
    pub unreadable: Vec<String>,
    pub torn_bytes_dropped: u64,
    pub leftover_files: usize,
    pub clean_exits: usize,
}

impl CrashReport {
    pub fn consistent(&self) -> bool {
        self.missing_acknowledged.is_empty() && self.unreadable.is_empty() && self.leftover_files == 0
    }
}

/// Kills a serving process with `sig` while several clients are ingesting,
/// `rounds` times over the same data directory, then audits the store.
pub fn crash_consistency(dir: &Path, rounds: usize, sig: &str) -> CrashReport {
    let bodies = Arc::new(payloads(8));
    let acked = Arc::new(Mutex::new(Vec::<String>::new()));
    let mut report = CrashReport { rounds, ..Default::default() };
    for round in 0..rounds {
        let srv = ServeChild::start(dir, None);
        let stop = Arc::new(AtomicBool::new(false));
        let workers: Vec<_> = (0..4)
            .map(|w| {
                let (url, bodies, acked, stop) = (srv.url("/sessions"), bodies.clone(), acked.clone(), stop.clone());
                thread::spawn(move || {
                    let c = reqwest::blocking::Client::builder().timeout(Duration::from_secs(5)).build().unwrap();
                    let mut k = w;
                    while !stop.load(Ordering::SeqCst) {
                        k += 1;
                        match c.post(&url).json(&bodies[k % bodies.len()]).send() {
                            Ok(r) if r.status().as_u16() == 201 => {
                                let v: serde_json::Value = r.json().unwrap();
                                acked.lock().unwrap().push(v["session_id"].as_str().unwrap().to_string());
                            }
                            Ok(r) => panic!("unexpected status {}", r.status()),
                            Err(_) => break,
                        }
                    }
                })
            })
            .collect();
        // Let a few writes land, then pull the plug mid-stream.
        let target = acked.lock().unwrap().len() + 6 + 3 * round;
        let t0 = Instant::now();
        while acked.lock().unwrap().len() < target && t0.elapsed() < Duration::from_secs(30) {
            thread::sleep(Duration::from_millis(2));
        }
        srv.signal(sig);
        let mut srv = srv;
        let status = srv.child.wait().unwrap();
        if status.success() {
            report.clean_exits += 1;
        }
        stop.store(true, Ordering::SeqCst);
        for w in workers {
            w.join().unwrap();
        }
    }
    let acked = acked.lock().unwrap().clone();
    let (store, open) = Store::open(dir).unwrap();
    report.acknowledged = acked.len();
    report.visible = store.len();
    report.torn_bytes_dropped = open.torn_bytes_dropped;
    report.missing_acknowledged = acked.iter().filter(|id| store.get(id).is_none()).cloned().collect();
    let all = store.query(&swallow_service::store::SessionQuery { limit: usize::MAX, ..Default::default() });
    report.unreadable = all.items.iter().filter(|r| store.load_segment(&r.session_id).is_err()).map(|r| r.session_id.clone()).collect();
    report.leftover_files = std::fs::read_dir(dir.join("blobs"))
        .unwrap()
        .filter(|e| {
            let p = e.as_ref().unwrap().path();
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            p.extension().is_none_or(|x| x != "bin") || store.get(&id).is_none()
        })
        .count();
    report
}
