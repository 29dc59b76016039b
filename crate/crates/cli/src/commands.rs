//! Subcommand implementations, one function per command.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swallow_core::acquisition::{frame_bytes_to_record, read_frame_file, record_to_frame_bytes, AdcConfig, DecodeStats};
use swallow_core::classifier::{
    build_2d_network, build_network, compare_models, encode_dataset, evaluate, gradient_check, train as train_net,
    Checkpoint, Confusion, GradCheckConfig, Metrics, Mode, Model2dConfig, ModelConfig, Network, TrainConfig,
};
use swallow_core::dsp::{Biquad, PreprocessConfig, Preprocessor, Stage};
use swallow_core::signal::{make_corpus, make_corpus_with, CorpusConfig, CorpusRecord, Label, LabeledDataset, SignalSegment, Volume};

use crate::manifest::{self, FileDigest, Recorder, RunManifest};
use crate::{
    required, write_file, CliError, CliResult, CompareArgs, DecodeFramesArgs, EncodeFramesArgs, EvalArgs,
    GradcheckArgs, PreprocessArgs, SimulateArgs, TrainArgs,
};

fn manifest_at(explicit: Option<&Path>, primary: &Path, is_dir: bool) -> PathBuf {
    explicit.map_or_else(|| manifest::default_path(primary, is_dir), Path::to_path_buf)
}

pub fn load_corpus(path: &Path) -> CliResult<LabeledDataset> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let ds = LabeledDataset::read_jsonl(BufReader::new(f))?;
    if ds.is_empty() {
        return Err(CliError::Validation(format!("{}: corpus is empty", path.display())));
    }
    Ok(ds)
}

fn to_json(v: &impl Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Internal(e.to_string()))
}

fn read_train_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let Some(p) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(p).map_err(|e| CliError::io(p.display(), e))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}

fn build_arch(arch: &str, seed: u64) -> CliResult<Network> {
    Ok(match arch {
        "1d" => build_network(&ModelConfig { seed, ..Default::default() })?,
        "2d" => build_2d_network(&Model2dConfig { seed, ..Default::default() })?,
        other => return Err(CliError::Usage(format!("unknown architecture '{other}' (expected 1d or 2d)"))),
    })
}

pub fn simulate(mut a: SimulateArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let defaults = CorpusConfig::default();
    let healthy = *a.healthy.get_or_insert(7);
    let patient = *a.patient.get_or_insert(7);
    let events = *a.events.get_or_insert(20);
    let seed = *a.seed.get_or_insert(0);
    let cfg = CorpusConfig {
        segment_duration_s: *a.duration_s.get_or_insert(defaults.segment_duration_s),
        subject_spread: *a.spread.get_or_insert(defaults.subject_spread),
        fixed_volume: a.volume,
        ..defaults
    };
    let out = required(&a.out, "out")?;
    let mut rec = Recorder::new("simulate", argv);
    rec.seed("corpus", seed);

    let ds = make_corpus_with(healthy, patient, events, seed, &cfg)?;
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf)?;
    write_file(&out, &buf)?;
    rec.output(&out);
    if let Some(dir) = &a.frames_dir {
        let adc = AdcConfig { sample_rate_hz: cfg.fs_hz, ..Default::default() };
        for (i, item) in ds.items.iter().enumerate() {
            let p = dir.join(format!("{i:04}_{}.bin", item.subject_id));
            write_file(&p, &record_to_frame_bytes(&CorpusRecord::from_item(item), &adc)?)?;
            rec.output(&p);
        }
    }
    rec.finish(&a, &manifest_at(manifest_path, &out, false))?;
    println!("wrote {} events ({healthy} healthy, {patient} patient subjects) to {}", ds.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighpassReport {
    pub order: usize,
    pub cutoff_hz: f64,
    pub overall_gain: f64,
    pub sections: Vec<Biquad>,
    /// |H| at the cutoff; 1/sqrt(2) for a Butterworth design.
    pub magnitude_at_cutoff: f64,
    pub dc_gain: f64,
    pub nyquist_gain: f64,
    pub max_pole_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotchReport {
    pub f0_hz: f64,
    pub q: f64,
    pub section: Biquad,
    pub magnitude_at_f0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub fs_hz: f64,
    pub stages: Vec<Stage>,
    pub rms_window_ms: f64,
    pub highpass: HighpassReport,
    pub notch: NotchReport,
}

impl FilterReport {
    pub fn new(pre: &Preprocessor) -> Self {
        let cfg = pre.config();
        let hp = pre.highpass_filter();
        let notch = pre.notch_filter();
        let fs = cfg.fs_hz;
        Self {
            fs_hz: fs,
            stages: cfg.stages.clone(),
            rms_window_ms: cfg.rms_window_ms,
            highpass: HighpassReport {
                order: hp.order(),
                cutoff_hz: cfg.hp_cutoff_hz,
                overall_gain: hp.overall_gain,
                sections: hp.sections.clone(),
                magnitude_at_cutoff: hp.magnitude(cfg.hp_cutoff_hz, fs),
                dc_gain: hp.magnitude(0.0, fs),
                nyquist_gain: hp.magnitude(fs / 2.0, fs),
                max_pole_radius: hp.poles().iter().map(|p| p.norm()).fold(0.0, f64::max),
            },
            notch: NotchReport {
                f0_hz: cfg.notch_hz,
                q: cfg.notch_q,
                section: *notch,
                magnitude_at_f0: notch.magnitude(cfg.notch_hz, fs),
            },
        }
    }
}

pub fn preprocess(mut a: PreprocessArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let d = PreprocessConfig::default();
    let cfg = PreprocessConfig {
        hp_order: *a.hp_order.get_or_insert(d.hp_order),
        hp_cutoff_hz: *a.hp_cutoff_hz.get_or_insert(d.hp_cutoff_hz),
        rms_window_ms: *a.rms_window_ms.get_or_insert(d.rms_window_ms),
        notch_hz: *a.notch_hz.get_or_insert(d.notch_hz),
        notch_q: *a.notch_q.get_or_insert(d.notch_q),
        fs_hz: *a.fs_hz.get_or_insert(d.fs_hz),
        ..d
    };
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    cfg.validate()?;
    let pre = Preprocessor::new(&cfg)?;
    let mut rec = Recorder::new("preprocess", argv);
    rec.input(&input);

    let segments: Vec<(usize, SignalSegment)> = if input.extension().is_some_and(|e| e == "jsonl") {
        let ds = load_corpus(&input)?;
        match a.event {
            Some(i) if i >= ds.len() => {
                return Err(CliError::Validation(format!("event {i} out of range (corpus has {})", ds.len())));
            }
            Some(i) => vec![(i, ds.items[i].segment.clone())],
            None => ds.items.into_iter().map(|it| it.segment).enumerate().collect(),
        }
    } else {
        let f = fs::File::open(&input).map_err(|e| CliError::io(input.display(), e))?;
        let adc = AdcConfig { sample_rate_hz: cfg.fs_hz, ..Default::default() };
        let (seg, stats) = read_frame_file(f, &adc)?;
        if stats.frames == 0 {
            return Err(CliError::Validation(format!("{}: no valid frames", input.display())));
        }
        vec![(0, seg)]
    };
    fs::create_dir_all(&out).map_err(|e| CliError::io(out.display(), e))?;
    for (i, seg) in &segments {
        let p = out.join(format!("envelope_{i:04}.csv"));
        write_file(&p, pre.run(seg)?.to_csv().as_bytes())?;
        rec.output(&p);
    }
    let report = FilterReport::new(&pre);
    let p = out.join("filter_report.json");
    write_file(&p, to_json(&report)?.as_bytes())?;
    rec.output(&p);
    rec.finish(&(&a, &cfg), &manifest_at(manifest_path, &out, true))?;
    println!(
        "{} envelope file(s) in {}; |H({} Hz)| = {:.6}",
        segments.len(),
        out.display(),
        cfg.hp_cutoff_hz,
        report.highpass.magnitude_at_cutoff
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainResolved<'a> {
    args: &'a TrainArgs,
    train: &'a TrainConfig,
    preprocess: &'a PreprocessConfig,
}

fn merged_train_config(file: Option<&Path>, it: Option<usize>, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut tc = read_train_config(file)?;
    if let Some(v) = it {
        tc.iterations = v;
    }
    if let Some(v) = seed {
        tc.seed = v;
    }
    Ok(tc)
}

pub fn train(mut a: TrainArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let corpus = required(&a.corpus, "corpus")?;
    let ck_path = required(&a.checkpoint, "checkpoint")?;
    let mut tc = merged_train_config(a.train_config.as_deref(), a.iterations, a.seed)?;
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        tc.momentum = v;
    }
    if let Some(v) = a.val_fraction {
        tc.val_fraction = v;
    }
    tc.validate()?;
    let arch = a.arch.get_or_insert_with(|| "1d".into()).clone();
    let model_seed = *a.model_seed.get_or_insert(0);
    let log_path = a.log.get_or_insert_with(|| manifest::with_suffix(&ck_path, ".log.csv")).clone();

    let mut rec = Recorder::new("train", argv);
    rec.input(&corpus);
    rec.seed("train", tc.seed);
    rec.seed("model", model_seed);
    let ds = load_corpus(&corpus)?;
    let pre_cfg = PreprocessConfig::default();
    let pre = Preprocessor::new(&pre_cfg)?;
    let net = build_arch(&arch, model_seed)?;
    let outcome = train_net(&net, &pre, &ds, &tc)?;
    let ck = Checkpoint::new(outcome.network, pre_cfg.clone(), Some(tc.seed));
    write_file(&ck_path, ck.to_json()?.as_bytes())?;
    rec.output(&ck_path);
    write_file(&log_path, outcome.log.to_csv().as_bytes())?;
    rec.output(&log_path);
    rec.finish(&TrainResolved { args: &a, train: &tc, preprocess: &pre_cfg }, &manifest_at(manifest_path, &ck_path, false))?;

    let best = &outcome.log.epochs[outcome.log.best_epoch];
    println!(
        "{arch}: best epoch {} of {}, val loss {:.4}, val accuracy {:.3}; model {}",
        outcome.log.best_epoch,
        tc.iterations,
        best.val_loss,
        best.val_accuracy,
        &ck.model_version[..12]
    );
    Ok(())
}

/// Metrics JSON written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub model_version: Option<String>,
}

impl EvalReport {
    pub fn new(m: &Metrics, items: usize, model_version: Option<String>) -> Self {
        Self {
            items,
            threshold: m.threshold,
            accuracy: m.accuracy,
            auc: m.auc,
            precision: m.precision,
            sensitivity: m.recall,
            f1: m.f1,
            confusion: m.confusion,
            model_version,
        }
    }
}

/// `score,label` rows; a header line is allowed.
fn read_scores(path: &Path) -> CliResult<(Vec<f64>, Vec<bool>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("score")) {
            continue;
        }
        let bad = || CliError::Validation(format!("{}:{}: expected 'score,label'", path.display(), n + 1));
        let (s, l) = line.split_once(',').ok_or_else(bad)?;
        scores.push(s.trim().parse::<f64>().map_err(|_| bad())?);
        labels.push(match l.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        });
    }
    Ok((scores, labels))
}

pub fn eval(mut a: EvalArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let threshold = *a.threshold.get_or_insert(0.5);
    let out = required(&a.out, "out")?;
    let mut rec = Recorder::new("eval", argv);
    let (metrics, items, version) = if let Some(p) = &a.scores {
        rec.input(p);
        let (scores, labels) = read_scores(p)?;
        (Metrics::from_scores(&scores, &labels, threshold)?, scores.len(), None)
    } else {
        let corpus = required(&a.corpus, "corpus")?;
        let ck_path = required(&a.checkpoint, "checkpoint")?;
        rec.input(&corpus);
        rec.input(&ck_path);
        let ck = Checkpoint::load(&ck_path)?;
        let ds = load_corpus(&corpus)?;
        let ev = evaluate(&ck.network, &ck.preprocessor()?, &ds, threshold)?;
        (ev.metrics, ds.len(), Some(ck.model_version))
    };
    let report = EvalReport::new(&metrics, items, version);
    write_file(&out, to_json(&report)?.as_bytes())?;
    rec.output(&out);
    rec.finish(&a, &manifest_at(manifest_path, &out, false))?;
    println!(
        "{items} items: accuracy {:.4}, AUC {:.4}, precision {:.4}, sensitivity {:.4}, F1 {:.4}",
        report.accuracy, report.auc, report.precision, report.sensitivity, report.f1
    );
    Ok(())
}

pub fn compare(mut a: CompareArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let corpus = required(&a.corpus, "corpus")?;
    let out = required(&a.out, "out")?;
    let tc = merged_train_config(a.train_config.as_deref(), a.iterations, a.seed)?;
    tc.validate()?;
    let model_seed = *a.model_seed.get_or_insert(0);
    let threshold = *a.threshold.get_or_insert(0.5);
    let mut rec = Recorder::new("compare", argv);
    rec.input(&corpus);
    rec.seed("train", tc.seed);
    rec.seed("model", model_seed);

    let ds = load_corpus(&corpus)?;
    let pre_cfg = PreprocessConfig::default();
    let report = compare_models(
        &ds,
        &Preprocessor::new(&pre_cfg)?,
        &ModelConfig { seed: model_seed, ..Default::default() },
        &Model2dConfig { seed: model_seed, ..Default::default() },
        &tc,
        threshold,
    )?;
    write_file(&out, to_json(&report)?.as_bytes())?;
    rec.output(&out);
    let table = report.to_table();
    let table_path = manifest::with_suffix(&out, ".txt");
    write_file(&table_path, table.as_bytes())?;
    rec.output(&table_path);
    rec.finish(&TrainResolved { args: &TrainArgs::default(), train: &tc, preprocess: &pre_cfg }, &manifest_at(manifest_path, &out, false))
        .map(|_| ())?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct GradcheckResolved<'a> {
    args: &'a GradcheckArgs,
    check: &'a GradCheckConfig,
}

pub fn gradcheck(mut a: GradcheckArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let d = GradCheckConfig::default();
    let arch = a.arch.get_or_insert_with(|| "1d".into()).clone();
    let batch = *a.batch.get_or_insert(4);
    let seed = *a.seed.get_or_insert(0);
    let tolerance = *a.tolerance.get_or_insert(1e-4);
    let mode = match a.mode.get_or_insert_with(|| "train".into()).as_str() {
        "train" => Mode::Train,
        "infer" => Mode::Infer,
        other => return Err(CliError::Usage(format!("unknown mode '{other}' (expected train or infer)"))),
    };
    let cfg = GradCheckConfig {
        epsilon: *a.epsilon.get_or_insert(d.epsilon),
        params: *a.params.get_or_insert(d.params),
        seed,
        mode,
        ..d
    };
    if batch == 0 {
        return Err(CliError::Validation("batch must be at least 1".into()));
    }
    let mut rec = Recorder::new("gradcheck", argv);
    rec.seed("model", seed);
    let ds = match &a.corpus {
        Some(p) => {
            rec.input(p);
            load_corpus(p)?
        }
        None => make_corpus(1, 1, batch.div_ceil(2), seed)?,
    };
    // Alternate classes so a small batch still holds both labels.
    let (mut h, mut p): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.items[i].label == Label::Healthy);
    let mut picks = Vec::new();
    while picks.len() < batch && (!h.is_empty() || !p.is_empty()) {
        for side in [&mut h, &mut p] {
            if picks.len() < batch && !side.is_empty() {
                picks.push(side.remove(0));
            }
        }
    }
    let net = build_arch(&arch, seed)?;
    let set = encode_dataset(&net, &Preprocessor::new(&PreprocessConfig::default())?, &ds.subset(&picks))?;
    let report = gradient_check(&net, &set.xs, &set.ys, &cfg)?;
    let json = to_json(&report)?;
    print!("{json}");
    if let Some(out) = &a.out {
        write_file(out, json.as_bytes())?;
        rec.output(out);
        rec.finish(&GradcheckResolved { args: &a, check: &cfg }, &manifest_at(manifest_path, out, false))?;
    }
    if report.checked == 0 {
        return Err(CliError::Validation("no parameter could be checked".into()));
    }
    if report.max_rel_error >= tolerance {
        return Err(CliError::Validation(format!(
            "max relative error {:.3e} is not below {tolerance:e}",
            report.max_rel_error
        )));
    }
    eprintln!("max relative error {:.3e} over {} parameters", report.max_rel_error, report.checked);
    Ok(())
}

pub fn encode_frames(mut a: EncodeFramesArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let event = *a.event.get_or_insert(0);
    let mut rec = Recorder::new("encode-frames", argv);
    rec.input(&input);
    let ds = load_corpus(&input)?;
    let item = ds
        .items
        .get(event)
        .ok_or_else(|| CliError::Validation(format!("event {event} out of range (corpus has {})", ds.len())))?;
    let adc = AdcConfig { sample_rate_hz: item.segment.sample_rate_hz, ..Default::default() };
    let bytes = record_to_frame_bytes(&CorpusRecord::from_item(item), &adc)?;
    write_file(&out, &bytes)?;
    rec.output(&out);
    rec.finish(&a, &manifest_at(manifest_path, &out, false))?;
    println!("{} frames ({} bytes) to {}", item.segment.len(), bytes.len(), out.display());
    Ok(())
}

pub fn decode_frames(mut a: DecodeFramesArgs, manifest_path: Option<&Path>, argv: &[String]) -> CliResult<()> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let subject = a.subject_id.get_or_insert_with(|| "S01".into()).clone();
    let label = Label::try_from(*a.label.get_or_insert(0)).map_err(CliError::Usage)?;
    let volume = *a.volume.get_or_insert(Volume::Ml10);
    let fs_hz = *a.fs_hz.get_or_insert(swallow_core::DEFAULT_SAMPLE_RATE_HZ);
    let mut rec = Recorder::new("decode-frames", argv);
    rec.input(&input);
    let bytes = fs::read(&input).map_err(|e| CliError::io(input.display(), e))?;
    let adc = AdcConfig { sample_rate_hz: fs_hz, ..Default::default() };
    let (record, stats): (CorpusRecord, DecodeStats) = frame_bytes_to_record(&bytes, &adc, &subject, label, volume)?;
    let line = serde_json::to_string(&record).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
    write_file(&out, line.as_bytes())?;
    rec.output(&out);
    rec.finish(&a, &manifest_at(manifest_path, &out, false))?;
    println!(
        "{} frames decoded, {} bytes discarded in {} resync events",
        stats.frames, stats.bytes_discarded, stats.resync_events
    );
    Ok(())
}

pub fn replay(path: &Path) -> CliResult<()> {
    let m = RunManifest::load(path)?;
    let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { m.cwd.join(p) };
    for input in &m.inputs {
        let now = FileDigest::of(&at(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Validation(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let here = std::env::current_dir().map_err(|e| CliError::io("current directory", e))?;
    let moved = here != m.cwd;
    if moved {
        std::env::set_current_dir(&m.cwd).map_err(|e| CliError::io(m.cwd.display(), e))?;
    }
    let result = crate::run(&m.argv);
    if moved {
        std::env::set_current_dir(&here).map_err(|e| CliError::io(here.display(), e))?;
    }
    result?;
    let mut differ = Vec::new();
    for o in &m.outputs {
        if FileDigest::of(&at(&o.path))?.sha256 != o.sha256 {
            differ.push(o.path.display().to_string());
        }
    }
    if !differ.is_empty() {
        return Err(CliError::Validation(format!("replay produced different output: {}", differ.join(", "))));
    }
    println!("replayed '{}': {} output(s) identical", m.command, m.outputs.len());
    Ok(())
}
