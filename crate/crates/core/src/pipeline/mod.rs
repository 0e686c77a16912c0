//! Batch pipeline: fragmenting, autoencoder training, compression, detector
//! training, evaluation with alerts, anomaly injection and explanation.
//!
//! Every stage reads and writes fixed file names inside the output
//! directory, guarded by a lock file.

mod config;

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pcapae_nn::checkpoint::Checkpoint;
use pcapae_nn::Tensor;
use rayon::prelude::*;

use crate::detect::{
    classify, Detector, DetectorKind, IsolationForest, Lof, NaiveThreshold, Ocsvm,
};
use crate::explain::{lrp_relevance, render_heatmap};
use crate::fragment::{fragment, read_store, windows, write_store, FragmentStore, SequenceWindow};
use crate::metrics::{compute_metrics, confusion, resolve_code_labels, write_report, ReportRow};
use crate::model::{
    compress, fragment_tensor, read_codes, reconstruction_losses, train, write_codes, AutoEncoder,
    ModelMeta,
};
use crate::traffic::labels::Address;
use crate::traffic::{
    inject_anomalies, read_labels, read_pcap, write_labels, write_pcap, FlowKey, InjectionSpec,
    InjectionTarget,
};
use crate::{Error, Result};

pub use config::{PipelineConfig, DEFAULT_OUT, KEYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fragment,
    TrainAe,
    Compress,
    TrainAd,
    Evaluate,
    Inject,
    Explain,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Fragment,
        Stage::TrainAe,
        Stage::Compress,
        Stage::TrainAd,
        Stage::Evaluate,
        Stage::Inject,
        Stage::Explain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fragment => "fragment",
            Stage::TrainAe => "train-ae",
            Stage::Compress => "compress",
            Stage::TrainAd => "train-ad",
            Stage::Evaluate => "evaluate",
            Stage::Inject => "inject",
            Stage::Explain => "explain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// File layout of an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    pub fn store(&self) -> PathBuf {
        self.dir.join("fragments.pae")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.paew")
    }
    pub fn loss_trace(&self) -> PathBuf {
        self.dir.join("loss_trace.csv")
    }
    pub fn codes(&self) -> PathBuf {
        self.dir.join("codes.paec")
    }
    pub fn detector(&self) -> PathBuf {
        self.dir.join("detector.paew")
    }
    /// Detector fit time, kept apart so the detector file is reproducible.
    pub fn fit_time(&self) -> PathBuf {
        self.dir.join("detector_t2f.txt")
    }
    pub fn alerts(&self) -> PathBuf {
        self.dir.join("alerts.tsv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn heatmaps(&self) -> PathBuf {
        self.dir.join("heatmaps")
    }
    pub fn injected_pcap(&self) -> PathBuf {
        self.dir.join("injected.pcap")
    }
    pub fn injected_labels(&self) -> PathBuf {
        self.dir.join("injected.labels")
    }
    pub fn lock(&self) -> PathBuf {
        self.dir.join(".pcapae.lock")
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(artifacts: &Artifacts) -> Result<Self> {
        fs::create_dir_all(&artifacts.dir)?;
        let path = artifacts.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One flagged window.
#[derive(Debug, Clone, PartialEq)]
pub struct Alert {
    pub window: usize,
    pub frames: Vec<u64>,
    pub score: f64,
    pub loss: f64,
    pub heatmap: PathBuf,
}

impl Alert {
    pub fn to_line(&self) -> String {
        let frames: Vec<String> = self.frames.iter().map(u64::to_string).collect();
        format!(
            "{}\t{}\t{:e}\t{:e}\t{}",
            self.window,
            frames.join(","),
            self.score,
            self.loss,
            self.heatmap.display()
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad =
            |what: &str| Error::UnsupportedFormat(format!("alert line has a bad {what}: {line}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("field count"));
        }
        let frames = f[1]
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("frame id")))
            .collect::<Result<Vec<u64>>>()?;
        Ok(Alert {
            window: f[0].parse().map_err(|_| bad("window index"))?,
            frames,
            score: f[2].parse().map_err(|_| bad("score"))?,
            loss: f[3].parse().map_err(|_| bad("loss"))?,
            heatmap: PathBuf::from(f[4]),
        })
    }
}

pub fn read_alerts(path: impl AsRef<Path>) -> Result<Vec<Alert>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(Alert::parse_line)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub written: Vec<PathBuf>,
    pub summary: String,
}

pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<StageReport> {
    config.validate()?;
    let arts = Artifacts::new(&config.out);
    let _lock = DirLock::acquire(&arts)?;
    match stage {
        Stage::Fragment => run_fragment(config, &arts),
        Stage::TrainAe => run_train_ae(config, &arts),
        Stage::Compress => run_compress(config, &arts),
        Stage::TrainAd => run_train_ad(config, &arts),
        Stage::Evaluate => run_evaluate(config, &arts),
        Stage::Inject => run_inject(config, &arts),
        Stage::Explain => run_explain(config, &arts),
    }
}

fn existing(path: &Path, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::MissingArtifact(format!("{what} {}", path.display())))
    }
}

fn configured(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    match path {
        Some(p) => existing(p, key),
        None => Err(Error::MissingArtifact(format!(
            "{key} (set `{key}=` in the config)"
        ))),
    }
}

fn load_model(arts: &Artifacts) -> Result<(AutoEncoder<f32>, ModelMeta)> {
    let path = existing(&arts.model(), "model checkpoint")?;
    AutoEncoder::from_checkpoint(&Checkpoint::read(path)?)
}

fn load_store(arts: &Artifacts) -> Result<FragmentStore> {
    read_store(existing(&arts.store(), "fragment store")?)
}

fn report(stage: Stage, written: Vec<PathBuf>, summary: String) -> Result<StageReport> {
    Ok(StageReport {
        stage,
        written,
        summary,
    })
}

fn run_fragment(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    let pcap = configured(&config.pcap, "pcap")?;
    let frames = read_pcap(&pcap)?;
    let store = fragment(&frames, config.mode);
    write_store(&store, arts.store())?;
    let summary = format!(
        "{} frames -> {} {} fragments ({} skipped)",
        frames.len(),
        store.len(),
        store.mode.name(),
        store.skipped_frames
    );
    report(Stage::Fragment, vec![arts.store()], summary)
}

fn run_train_ae(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    let store = load_store(arts)?;
    let tc = config.train_config();
    let (model, rep) = train(&tc, &store)?;
    let meta = ModelMeta {
        mode: store.mode,
        n: tc.n,
        epoch: tc.epochs,
        seed: tc.seed,
        loss: tc.loss,
    };
    model.to_checkpoint(&meta).write(arts.model())?;
    let mut trace = String::from("epoch,loss\n");
    for (i, l) in rep.epoch_losses.iter().enumerate() {
        let _ = writeln!(trace, "{},{l:e}", i + 1);
    }
    fs::write(arts.loss_trace(), trace)?;
    let summary = match rep.epoch_losses.last() {
        Some(l) => format!(
            "{} epochs over {} windows, final loss {l:.6}",
            tc.epochs,
            store.len() + 1 - tc.n
        ),
        None => "0 epochs: initial weights saved".to_string(),
    };
    report(
        Stage::TrainAe,
        vec![arts.model(), arts.loss_trace()],
        summary,
    )
}

fn run_compress(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    if config.raw {
        return report(
            Stage::Compress,
            Vec::new(),
            "raw mode: compression bypassed".into(),
        );
    }
    let (model, meta) = load_model(arts)?;
    let store = load_store(arts)?;
    let codes = compress(&model, &store, meta.n)?;
    write_codes(&codes, arts.codes())?;
    report(
        Stage::Compress,
        vec![arts.codes()],
        format!(
            "{} fragments -> {} codes (n = {})",
            store.len(),
            codes.len(),
            meta.n
        ),
    )
}

/// The last fragment of every window as a flat normalized vector.
fn raw_features(store: &FragmentStore, wins: &[SequenceWindow]) -> Vec<Vec<f64>> {
    wins.iter()
        .map(|w| {
            store.fragments[w.last()]
                .normalized()
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect()
}

fn fit_detector(config: &PipelineConfig, data: &[Vec<f64>]) -> Result<Detector> {
    Ok(match config.detector {
        DetectorKind::IForest => {
            Detector::IForest(IsolationForest::fit(data, config.iforest, config.seed)?)
        }
        DetectorKind::Lof => Detector::Lof(Lof::fit(data, config.lof)?),
        DetectorKind::Ocsvm => Detector::Ocsvm(Ocsvm::fit(data, config.ocsvm)?),
        DetectorKind::Naive => {
            let losses: Vec<f64> = data.iter().map(|x| x[0]).collect();
            Detector::Naive(NaiveThreshold::fit(&losses, config.naive_nu)?)
        }
    })
}

fn run_train_ad(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    let data: Vec<Vec<f64>> = match (config.detector, config.raw) {
        (DetectorKind::Naive, _) => {
            let (model, meta) = load_model(arts)?;
            let store = load_store(arts)?;
            reconstruction_losses(&model, &store, meta.n, meta.loss)?
                .into_iter()
                .map(|l| vec![l])
                .collect()
        }
        (_, true) => {
            let (_, meta) = load_model(arts)?;
            let store = load_store(arts)?;
            raw_features(&store, &windows(store.len(), meta.n)?)
        }
        (_, false) => read_codes(existing(&arts.codes(), "code dataset")?)?.features(),
    };
    let start = Instant::now();
    let detector = fit_detector(config, &data)?;
    let t2f = start.elapsed().as_secs_f64();
    detector.write(arts.detector())?;
    fs::write(arts.fit_time(), format!("{t2f:.6}\n"))?;
    report(
        Stage::TrainAd,
        vec![arts.detector(), arts.fit_time()],
        format!(
            "{} fitted on {} samples in {t2f:.3} s, threshold {:e}",
            detector.kind().name(),
            data.len(),
            detector.threshold()
        ),
    )
}

fn heatmap_stem(arts: &Artifacts, window: usize) -> PathBuf {
    arts.heatmaps().join(format!("window_{window:06}"))
}

fn run_evaluate(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    let (model, meta) = load_model(arts)?;
    let detector = Detector::read(existing(&arts.detector(), "detector")?)?;
    let frames = read_pcap(configured(&config.test_pcap, "test_pcap")?)?;
    let labels = read_labels(configured(&config.test_labels, "test_labels")?)?;
    let t2f = fs::read_to_string(arts.fit_time())
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0.0);

    let store = fragment(&frames, meta.mode);
    let wins = windows(store.len(), meta.n)?;
    if wins.is_empty() {
        return Err(Error::InsufficientData(format!(
            "test trace gives {} fragments, fewer than n = {}",
            store.len(),
            meta.n
        )));
    }
    let provenance: Vec<Vec<u64>> = wins
        .iter()
        .map(|w| store.window_frames(*w).into_iter().collect())
        .collect();
    let truth = resolve_code_labels(provenance.iter().map(Vec::as_slice), &labels)?;

    let start = Instant::now();
    let losses = reconstruction_losses(&model, &store, meta.n, meta.loss)?;
    let features: Vec<Vec<f64>> = match (detector.kind(), config.raw) {
        (DetectorKind::Naive, _) => losses.iter().map(|&l| vec![l]).collect(),
        (_, true) => raw_features(&store, &wins),
        (_, false) => compress(&model, &store, meta.n)?.features(),
    };
    let scores = detector.score_all(&features)?;
    let flagged = classify(&scores, detector.threshold(), detector.polarity());
    let t2t = start.elapsed().as_secs_f64();

    let counts = confusion(&flagged, &truth)?;
    let metrics = compute_metrics(counts, t2f, t2t);
    let name = if config.raw && detector.kind() != DetectorKind::Naive {
        format!("{}_raw", detector.kind().name())
    } else {
        detector.kind().name().to_string()
    };
    write_report(
        arts.metrics(),
        &[ReportRow {
            detector: name,
            fragment_mode: meta.mode.name().to_string(),
            n: meta.n,
            metrics,
        }],
    )?;

    let hits: Vec<usize> = (0..wins.len()).filter(|&i| flagged[i]).collect();
    if !hits.is_empty() {
        fs::create_dir_all(arts.heatmaps())?;
    }
    let tensors: Vec<Tensor<f32>> = store.fragments.iter().map(fragment_tensor).collect();
    let alerts = hits
        .par_iter()
        .map(|&i| {
            let w = wins[i];
            let map = lrp_relevance(&model, &tensors[w.range()], i, &config.lrp)?;
            let heatmap = render_heatmap(&map, &store.fragments[w.last()], heatmap_stem(arts, i))?;
            Ok(Alert {
                window: i,
                frames: provenance[i].clone(),
                score: scores[i],
                loss: losses[i],
                heatmap,
            })
        })
        .collect::<Result<Vec<Alert>>>()?;
    let text: String = alerts.iter().map(|a| a.to_line() + "\n").collect();
    fs::write(arts.alerts(), text)?;

    report(
        Stage::Evaluate,
        vec![arts.alerts(), arts.metrics()],
        format!(
            "{} windows, {} alerts: PR {:.2} % RC {:.2} % F1 {:.4} FPR {:.4}",
            wins.len(),
            alerts.len(),
            metrics.pr,
            metrics.rc,
            metrics.f1,
            metrics.fpr
        ),
    )
}

/// `host:<ip|mac>` or a flow in `FlowKey` display form.
pub fn parse_target(s: &str) -> Result<InjectionTarget> {
    if let Some(addr) = s.strip_prefix("host:") {
        return Ok(InjectionTarget::Host(addr.parse::<Address>()?));
    }
    s.parse::<FlowKey>()
        .map(InjectionTarget::Flow)
        .map_err(|e| Error::Config {
            key: "target".into(),
            message: e,
        })
}

fn run_inject(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    let frames = read_pcap(configured(&config.pcap, "pcap")?)?;
    let target = match &config.target {
        Some(t) => parse_target(t)?,
        None => {
            return Err(Error::Config {
                key: "target".into(),
                message: "required by the inject stage".into(),
            })
        }
    };
    let (first, last) = match (frames.first(), frames.last()) {
        (Some(a), Some(b)) => (a.timestamp_us, b.timestamp_us),
        _ => return Err(Error::EmptyTrace),
    };
    let span = last - first;
    let spec = InjectionSpec {
        kind: config.attack,
        target,
        intensity: config.intensity,
        start_us: config.start_us.unwrap_or(first + span / 3),
        end_us: config.end_us.unwrap_or(first + 2 * span / 3),
        seed: config.seed,
    };
    let (out, labels) = inject_anomalies(&frames, &spec)?;
    write_pcap(&out, arts.injected_pcap())?;
    write_labels(&labels, arts.injected_labels())?;
    let anomalous = labels.iter().filter(|&&l| l).count();
    report(
        Stage::Inject,
        vec![arts.injected_pcap(), arts.injected_labels()],
        format!(
            "{} frames in, {} out, {anomalous} labelled anomalous",
            frames.len(),
            out.len()
        ),
    )
}

fn run_explain(config: &PipelineConfig, arts: &Artifacts) -> Result<StageReport> {
    let (model, meta) = load_model(arts)?;
    if config.explain_windows.is_empty() {
        return Err(Error::Config {
            key: "explain_windows".into(),
            message: "list at least one window index".into(),
        });
    }
    let store = match &config.test_pcap {
        Some(p) => fragment(&read_pcap(existing(p, "test_pcap")?)?, meta.mode),
        None => load_store(arts)?,
    };
    let wins = windows(store.len(), meta.n)?;
    let tensors: Vec<Tensor<f32>> = store.fragments.iter().map(fragment_tensor).collect();
    fs::create_dir_all(arts.heatmaps())?;
    let written = config
        .explain_windows
        .par_iter()
        .map(|&i| {
            let w = *wins.get(i).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "window {i} out of range: {} windows available",
                    wins.len()
                ))
            })?;
            let map = lrp_relevance(&model, &tensors[w.range()], i, &config.lrp)?;
            render_heatmap(&map, &store.fragments[w.last()], heatmap_stem(arts, i))
        })
        .collect::<Result<Vec<PathBuf>>>()?;
    let summary = format!("{} heatmaps written", written.len());
    report(Stage::Explain, written, summary)
}
