use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{add_noise, synth_swallow, NoiseConfig, SubjectKind, SubjectProfile, Volume};
use super::SignalSegment;
use crate::error::{invalid, Error, Result};
use crate::CHANNEL_COUNT;

/// Binary class label: 0 = healthy, 1 = patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Healthy,
    Patient,
}

impl Label {
    pub fn is_patient(self) -> bool {
        self == Label::Patient
    }

    /// Regression target for the sigmoid output.
    pub fn target(self) -> f64 {
        if self.is_patient() {
            1.0
        } else {
            0.0
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Healthy),
            1 => Ok(Label::Patient),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl From<SubjectKind> for Label {
    fn from(k: SubjectKind) -> Self {
        match k {
            SubjectKind::Healthy => Label::Healthy,
            SubjectKind::Dysphagic => Label::Patient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub segment: SignalSegment,
    pub label: Label,
    pub volume: Volume,
    pub subject_id: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub items: Vec<LabeledItem>,
    pub split_seed: u64,
}

/// One line of the JSON-lines corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub subject_id: String,
    pub label: Label,
    pub volume_ml: Volume,
    pub fs: f64,
    pub channels: Vec<Vec<f64>>,
}

impl CorpusRecord {
    pub fn into_item(self) -> Result<LabeledItem> {
        if self.channels.len() != CHANNEL_COUNT {
            return invalid(format!(
                "expected {CHANNEL_COUNT} channels, got {}",
                self.channels.len()
            ));
        }
        Ok(LabeledItem {
            segment: SignalSegment::new(self.fs, self.channels)?,
            label: self.label,
            volume: self.volume_ml,
            subject_id: self.subject_id,
        })
    }

    pub fn from_item(item: &LabeledItem) -> Self {
        Self {
            subject_id: item.subject_id.clone(),
            label: item.label,
            volume_ml: item.volume,
            fs: item.segment.sample_rate_hz,
            channels: item.segment.channels.clone(),
        }
    }
}

/// Knobs for [`make_corpus_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub segment_duration_s: f64,
    pub fs_hz: f64,
    pub noise: NoiseConfig,
    /// Relative spread of per-subject amplitude, duration and gains around
    /// the class means.
    pub subject_spread: f64,
    /// Use this volume for every event instead of rotating 5/10/15 mL.
    pub fixed_volume: Option<Volume>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            segment_duration_s: 4.0,
            fs_hz: crate::DEFAULT_SAMPLE_RATE_HZ,
            noise: NoiseConfig::default(),
            subject_spread: 0.15,
            fixed_volume: None,
        }
    }
}

/// Draws one subject's profile around the class mean.
pub fn sample_profile(kind: SubjectKind, spread: f64, rng: &mut impl Rng) -> SubjectProfile {
    let mut p = SubjectProfile::for_kind(kind);
    let mut jitter = |v: f64| v * (1.0 + spread * rng.random_range(-1.0..=1.0));
    p.burst_amplitude_mv = jitter(p.burst_amplitude_mv);
    p.event_duration_s = jitter(p.event_duration_s);
    for g in &mut p.per_channel_gain {
        *g = jitter(*g);
    }
    p
}

pub fn make_corpus(
    n_healthy_subjects: usize,
    n_patient_subjects: usize,
    events_per_subject: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    make_corpus_with(
        n_healthy_subjects,
        n_patient_subjects,
        events_per_subject,
        seed,
        &CorpusConfig::default(),
    )
}

/// Builds a labelled corpus of noisy swallow recordings. Subject ids are
/// `H01..` for healthy and `P01..` for patient subjects; volumes rotate
/// through 5/10/15 mL per subject.
pub fn make_corpus_with(
    n_healthy_subjects: usize,
    n_patient_subjects: usize,
    events_per_subject: usize,
    seed: u64,
    cfg: &CorpusConfig,
) -> Result<LabeledDataset> {
    if n_healthy_subjects == 0 || n_patient_subjects == 0 || events_per_subject == 0 {
        return invalid("subject and event counts must all be at least 1");
    }
    if !(0.0..1.0).contains(&cfg.subject_spread) {
        return invalid(format!("subject spread must lie in [0, 1), got {}", cfg.subject_spread));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n_healthy_subjects)
        .map(|i| (SubjectKind::Healthy, format!("H{:02}", i + 1)))
        .chain((0..n_patient_subjects).map(|i| (SubjectKind::Dysphagic, format!("P{:02}", i + 1))));

    let mut items = Vec::with_capacity((n_healthy_subjects + n_patient_subjects) * events_per_subject);
    for (s_idx, (kind, subject_id)) in subjects.enumerate() {
        let profile = sample_profile(kind, cfg.subject_spread, &mut rng);
        for e in 0..events_per_subject {
            let volume = cfg.fixed_volume.unwrap_or(Volume::ALL[(s_idx + e) % Volume::ALL.len()]);
            let clean = synth_swallow(&profile, volume, cfg.segment_duration_s, cfg.fs_hz, rng.next_u64())?;
            let segment = add_noise(&clean, &cfg.noise, rng.next_u64())?;
            items.push(LabeledItem {
                segment,
                label: kind.into(),
                volume,
                subject_id: subject_id.clone(),
            });
        }
    }
    Ok(LabeledDataset {
        items,
        split_seed: seed,
    })
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.subject_id.as_str()).collect()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.items.iter().filter(|i| i.label == label).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            split_seed: self.split_seed,
        }
    }

    /// Splits item indices into (train, validation) so that no subject lands
    /// on both sides. Each class contributes `max(1, round(val_fraction * n))`
    /// of its subjects to validation, chosen by `split_seed`; a class with a
    /// single subject stays entirely in training.
    pub fn split_by_subject(&self, val_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return invalid(format!("validation fraction must lie in (0, 1), got {val_fraction}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.split_seed);
        let mut val_subjects = BTreeSet::new();
        for label in [Label::Healthy, Label::Patient] {
            let mut subs: Vec<&str> = self
                .items
                .iter()
                .filter(|i| i.label == label)
                .map(|i| i.subject_id.as_str())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if subs.len() < 2 {
                continue;
            }
            subs.shuffle(&mut rng);
            let k = ((val_fraction * subs.len() as f64).round() as usize).clamp(1, subs.len() - 1);
            val_subjects.extend(subs.into_iter().take(k));
        }
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..self.items.len()).partition(|&i| val_subjects.contains(self.items[i].subject_id.as_str()));
        Ok((train, val))
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for item in &self.items {
            serde_json::to_writer(&mut w, &CorpusRecord::from_item(item))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a JSON-lines corpus; blank lines are skipped, any malformed line
    /// is an error naming its line number.
    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("corpus line {}: {e}", n + 1)))?;
            items.push(
                rec.into_item()
                    .map_err(|e| Error::Format(format!("corpus line {}: {e}", n + 1)))?,
            );
        }
        Ok(Self { items, split_seed: 0 })
    }
}
