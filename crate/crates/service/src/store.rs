//! File-backed session store.
//!
//! ```text
//! <data-dir>/index.jsonl      one JSON object per line, append-only
//! <data-dir>/blobs/<id>.bin   raw 4-channel samples of one session
//! ```
//!
//! A session becomes visible only after its blob has been synced and renamed
//! into place and its index line has been synced. On open, a torn final
//! index line is cut off and index entries whose blob is missing or does not
//! match its recorded hash are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swallow_core::acquisition::DecodeStats;
use swallow_core::signal::{Label, SignalSegment, Volume};

const INDEX_FILE: &str = "index.jsonl";
const BLOB_DIR: &str = "blobs";
const BLOB_MAGIC: &[u8; 4] = b"SWB1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("session {0} not found")]
    NotFound(String),
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Everything the service knows about a session except the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub subject_id: String,
    pub recorded_at: DateTime<Utc>,
    pub ingested_at: DateTime<Utc>,
    pub volume_ml: Option<Volume>,
    pub label: Option<Label>,
    pub sample_rate_hz: f64,
    pub samples: usize,
    pub channels: usize,
    /// Peak of each channel's RMS envelope, in mV.
    pub envelope_peak_mv: Vec<f64>,
    pub decode: Option<DecodeStats>,
    pub blob_sha256: String,
    pub health_index: Option<f64>,
    pub p_patient: Option<f64>,
    pub model_version: Option<String>,
    pub scored_at: Option<DateTime<Utc>>,
}

/// Input to [`Store::insert`].
#[derive(Debug, Clone)]
pub struct NewSession {
    pub subject_id: String,
    pub recorded_at: DateTime<Utc>,
    pub volume_ml: Option<Volume>,
    pub label: Option<Label>,
    pub segment: SignalSegment,
    pub envelope_peak_mv: Vec<f64>,
    pub decode: Option<DecodeStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum IndexEntry {
    Put(SessionRecord),
    Score {
        session_id: String,
        health_index: f64,
        p_patient: f64,
        model_version: String,
        scored_at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpenReport {
    pub sessions: usize,
    pub torn_bytes_dropped: u64,
    pub entries_without_blob: usize,
    pub orphan_files_removed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionQuery {
    pub subject_id: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub limit: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub items: Vec<SessionRecord>,
    pub total: usize,
    pub limit: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendPoint {
    pub session_id: String,
    pub recorded_at: DateTime<Utc>,
    pub health_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub sessions: usize,
    pub scored: usize,
    pub last_recorded_at: DateTime<Utc>,
}

struct Writer {
    index: File,
    len: u64,
    last_id: (i64, u32),
}

#[derive(Default)]
struct Inner {
    sessions: BTreeMap<String, SessionRecord>,
}

pub struct Store {
    dir: PathBuf,
    writer: Mutex<Writer>,
    inner: RwLock<Inner>,
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

fn encode_blob(seg: &SignalSegment) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + seg.channel_count() * seg.len() * 8);
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&seg.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(seg.channel_count() as u32).to_le_bytes());
    out.extend_from_slice(&(seg.len() as u32).to_le_bytes());
    for ch in &seg.channels {
        for v in ch {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_blob(bytes: &[u8]) -> Option<SignalSegment> {
    if bytes.len() < 20 || &bytes[..4] != BLOB_MAGIC {
        return None;
    }
    let fs = f64::from_le_bytes(bytes[4..12].try_into().ok()?);
    let channels = u32::from_le_bytes(bytes[12..16].try_into().ok()?) as usize;
    let len = u32::from_le_bytes(bytes[16..20].try_into().ok()?) as usize;
    let body = &bytes[20..];
    if body.len() != channels * len * 8 {
        return None;
    }
    let data: Vec<Vec<f64>> = body
        .chunks_exact(len * 8)
        .map(|c| c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        .collect();
    SignalSegment::new(fs, if len == 0 { vec![Vec::new(); channels] } else { data }).ok()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Ids sort by creation time: 13 hex digits of milliseconds, then a
/// 4-digit counter for ids made within the same millisecond.
fn format_id(ms: i64, seq: u32) -> String {
    format!("{ms:013x}{seq:04x}")
}

fn parse_id(id: &str) -> Option<(i64, u32)> {
    if id.len() != 17 {
        return None;
    }
    Some((i64::from_str_radix(&id[..13], 16).ok()?, u32::from_str_radix(&id[13..], 16).ok()?))
}

impl Store {
    /// Opens or creates a store, repairing a torn index tail.
    pub fn open(dir: impl Into<PathBuf>) -> StoreResult<(Self, OpenReport)> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(BLOB_DIR))?;
        let index_path = dir.join(INDEX_FILE);
        let mut index = OpenOptions::new().create(true).read(true).append(true).open(&index_path)?;
        let mut bytes = Vec::new();
        index.read_to_end(&mut bytes)?;

        let mut report = OpenReport::default();
        let mut inner = Inner::default();
        let mut good_len = 0usize;
        let mut pos = 0usize;
        while pos < bytes.len() {
            let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                break;
            };
            let line = &bytes[pos..pos + nl];
            let next = pos + nl + 1;
            if line.iter().all(u8::is_ascii_whitespace) {
                pos = next;
                good_len = next;
                continue;
            }
            let entry: IndexEntry = match serde_json::from_slice(line) {
                Ok(e) => e,
                // A complete but unreadable line is only tolerated as the tail.
                Err(e) if bytes[next..].iter().all(u8::is_ascii_whitespace) => {
                    tracing::warn!("dropping unreadable final index line: {e}");
                    break;
                }
                Err(e) => return Err(StoreError::Corrupt(format!("index line at byte {pos}: {e}"))),
            };
            match entry {
                IndexEntry::Put(rec) => {
                    let ok = fs::read(dir.join(BLOB_DIR).join(format!("{}.bin", rec.session_id)))
                        .map(|b| sha256_hex(&b) == rec.blob_sha256)
                        .unwrap_or(false);
                    if ok {
                        inner.sessions.insert(rec.session_id.clone(), rec);
                    } else {
                        report.entries_without_blob += 1;
                    }
                }
                IndexEntry::Score { session_id, health_index, p_patient, model_version, scored_at } => {
                    if let Some(r) = inner.sessions.get_mut(&session_id) {
                        r.health_index = Some(health_index);
                        r.p_patient = Some(p_patient);
                        r.model_version = Some(model_version);
                        r.scored_at = Some(scored_at);
                    }
                }
            }
            pos = next;
            good_len = next;
        }
        if good_len < bytes.len() {
            report.torn_bytes_dropped = (bytes.len() - good_len) as u64;
            index.set_len(good_len as u64)?;
            index.sync_all()?;
        }

        // Blobs that never made it into the index, and interrupted temp files.
        for entry in fs::read_dir(dir.join(BLOB_DIR))? {
            let path = entry?.path();
            let known = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".bin"))
                .is_some_and(|id| inner.sessions.contains_key(id));
            if !known {
                fs::remove_file(&path)?;
                report.orphan_files_removed += 1;
            }
        }

        report.sessions = inner.sessions.len();
        let last_id = inner.sessions.keys().filter_map(|k| parse_id(k)).max().unwrap_or((0, 0));
        let store = Self {
            dir,
            writer: Mutex::new(Writer { index, len: good_len as u64, last_id }),
            inner: RwLock::new(inner),
        };
        Ok((store, report))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn blob_path(&self, id: &str) -> PathBuf {
        self.dir.join(BLOB_DIR).join(format!("{id}.bin"))
    }

    fn append(w: &mut Writer, entry: &IndexEntry) -> StoreResult<()> {
        let mut line = serde_json::to_vec(entry).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        line.push(b'\n');
        let res = w.index.write_all(&line).and_then(|_| w.index.sync_data());
        if let Err(e) = res {
            // Leave no partial line behind for the next append to follow.
            let _ = w.index.set_len(w.len);
            return Err(e.into());
        }
        w.len += line.len() as u64;
        Ok(())
    }

    /// Persists a session and returns its record once it is durable.
    pub fn insert(&self, new: NewSession) -> StoreResult<SessionRecord> {
        let mut w = self.writer.lock().expect("store writer poisoned");
        let now = Utc::now();
        let ms = now.timestamp_millis();
        let (last_ms, last_seq) = w.last_id;
        let id_parts = match (ms > last_ms, last_seq) {
            (true, _) => (ms, 0),
            (false, 0xffff) => (last_ms + 1, 0),
            (false, _) => (last_ms, last_seq + 1),
        };
        let session_id = format_id(id_parts.0, id_parts.1);

        let blob = encode_blob(&new.segment);
        let tmp = self.dir.join(BLOB_DIR).join(format!("{session_id}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&blob)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.blob_path(&session_id))?;
        sync_dir(&self.dir.join(BLOB_DIR))?;

        let rec = SessionRecord {
            session_id: session_id.clone(),
            subject_id: new.subject_id,
            recorded_at: new.recorded_at,
            ingested_at: now,
            volume_ml: new.volume_ml,
            label: new.label,
            sample_rate_hz: new.segment.sample_rate_hz,
            samples: new.segment.len(),
            channels: new.segment.channel_count(),
            envelope_peak_mv: new.envelope_peak_mv,
            decode: new.decode,
            blob_sha256: sha256_hex(&blob),
            health_index: None,
            p_patient: None,
            model_version: None,
            scored_at: None,
        };
        if let Err(e) = Self::append(&mut w, &IndexEntry::Put(rec.clone())) {
            let _ = fs::remove_file(self.blob_path(&session_id));
            return Err(e);
        }
        w.last_id = id_parts;
        self.inner.write().expect("store state poisoned").sessions.insert(session_id, rec.clone());
        Ok(rec)
    }

    /// Records a score. Re-scoring with the same model and value is a no-op.
    pub fn set_score(&self, id: &str, health_index: f64, p_patient: f64, model_version: &str) -> StoreResult<SessionRecord> {
        let mut w = self.writer.lock().expect("store writer poisoned");
        let existing = self.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if existing.model_version.as_deref() == Some(model_version) && existing.health_index == Some(health_index) {
            return Ok(existing);
        }
        let scored_at = Utc::now();
        Self::append(
            &mut w,
            &IndexEntry::Score {
                session_id: id.to_string(),
                health_index,
                p_patient,
                model_version: model_version.to_string(),
                scored_at,
            },
        )?;
        let mut inner = self.inner.write().expect("store state poisoned");
        let r = inner.sessions.get_mut(id).expect("session vanished under the writer lock");
        r.health_index = Some(health_index);
        r.p_patient = Some(p_patient);
        r.model_version = Some(model_version.to_string());
        r.scored_at = Some(scored_at);
        Ok(r.clone())
    }

    pub fn get(&self, id: &str) -> Option<SessionRecord> {
        self.inner.read().expect("store state poisoned").sessions.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store state poisoned").sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_segment(&self, id: &str) -> StoreResult<SignalSegment> {
        let rec = self.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let bytes = fs::read(self.blob_path(id))?;
        if sha256_hex(&bytes) != rec.blob_sha256 {
            return Err(StoreError::Corrupt(format!("blob of session {id} does not match its hash")));
        }
        decode_blob(&bytes).ok_or_else(|| StoreError::Corrupt(format!("blob of session {id} is malformed")))
    }

    /// Newest first; ties broken by ascending id. `from` is inclusive and
    /// `to` exclusive.
    pub fn query(&self, q: &SessionQuery) -> Page {
        let inner = self.inner.read().expect("store state poisoned");
        let mut hits: Vec<&SessionRecord> = inner
            .sessions
            .values()
            .filter(|r| q.subject_id.as_ref().is_none_or(|s| &r.subject_id == s))
            .filter(|r| q.from.is_none_or(|t| r.recorded_at >= t))
            .filter(|r| q.to.is_none_or(|t| r.recorded_at < t))
            .collect();
        hits.sort_by(|a, b| b.recorded_at.cmp(&a.recorded_at).then_with(|| a.session_id.cmp(&b.session_id)));
        Page {
            total: hits.len(),
            items: hits.into_iter().skip(q.offset).take(q.limit).cloned().collect(),
            limit: q.limit,
            offset: q.offset,
        }
    }

    /// Scored sessions of a subject, oldest first; `None` for an unknown subject.
    pub fn trend(&self, subject_id: &str) -> Option<Vec<TrendPoint>> {
        let inner = self.inner.read().expect("store state poisoned");
        let mine: Vec<&SessionRecord> = inner.sessions.values().filter(|r| r.subject_id == subject_id).collect();
        if mine.is_empty() {
            return None;
        }
        let mut pts: Vec<TrendPoint> = mine
            .into_iter()
            .filter_map(|r| {
                r.health_index.map(|h| TrendPoint {
                    session_id: r.session_id.clone(),
                    recorded_at: r.recorded_at,
                    health_index: h,
                })
            })
            .collect();
        pts.sort_by(|a, b| a.recorded_at.cmp(&b.recorded_at).then_with(|| a.session_id.cmp(&b.session_id)));
        Some(pts)
    }

    pub fn subjects(&self) -> Vec<SubjectSummary> {
        let inner = self.inner.read().expect("store state poisoned");
        let ids: BTreeSet<&str> = inner.sessions.values().map(|r| r.subject_id.as_str()).collect();
        ids.into_iter()
            .map(|s| {
                let mine: Vec<&SessionRecord> = inner.sessions.values().filter(|r| r.subject_id == s).collect();
                SubjectSummary {
                    subject_id: s.to_string(),
                    sessions: mine.len(),
                    scored: mine.iter().filter(|r| r.health_index.is_some()).count(),
                    last_recorded_at: mine.iter().map(|r| r.recorded_at).max().expect("subject has sessions"),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let seg = SignalSegment::new(250.0, vec![vec![0.1, -2.5e-300, f64::MAX], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(decode_blob(&encode_blob(&seg)).unwrap(), seg);
        let mut bad = encode_blob(&seg);
        bad.pop();
        assert!(decode_blob(&bad).is_none());
    }

    #[test]
    fn ids_sort_by_time() {
        assert!(format_id(5, 1) < format_id(5, 2));
        assert!(format_id(5, 0xffff) < format_id(6, 0));
        assert_eq!(parse_id(&format_id(1_700_000_000_000, 3)), Some((1_700_000_000_000, 3)));
    }
}
