//! Shared service state: loaded artifacts, metric registry, annotation
//! store and retraining jobs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use arc_swap::ArcSwap;
use serde::Serialize;
use tokio::sync::Semaphore;

use scatsim_core::config::{check_fingerprint, RunConfig};
use scatsim_core::corpus::{expand_clusters, Corpus, CANONICAL_STIMULI};
use scatsim_core::features::{FeatureStore, Gaussianizer};
use scatsim_core::metric::MetricMatrix;
use scatsim_core::perceptual::{annotation_to_graph, Annotation};
use scatsim_core::pipeline::{consensus_graph, covered_subset, fit_gaussianizer, train_metric, Extractor};
use scatsim_core::retrieval::{evaluate, EvalReport};
use scatsim_core::{Error, Result};

pub const IDENTITY: &str = "identity";
pub const CONSENSUS: &str = "consensus";

/// An immutable snapshot; writers publish a modified copy.
#[derive(Clone, Default)]
pub struct Session {
    pub corpus: Option<Arc<Corpus>>,
    /// Gaussianized rows.
    pub store: Option<Arc<FeatureStore>>,
    pub gaussianizer: Option<Arc<Gaussianizer>>,
    pub metrics: BTreeMap<String, Arc<MetricMatrix>>,
    pub annotations: BTreeMap<String, Annotation>,
    /// Submissions per subject, including the active one.
    pub versions: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobInfo {
    pub id: String,
    pub subject: String,
    pub status: JobStatus,
    pub error: Option<String>,
    pub report: Option<EvalReport>,
}

pub struct AppState {
    pub config: RunConfig,
    pub stimuli: Vec<String>,
    pub session: ArcSwap<Session>,
    pub jobs: Mutex<BTreeMap<String, JobInfo>>,
    job_counter: AtomicU64,
    extractor: OnceLock<std::result::Result<Arc<Extractor>, String>>,
    job_gate: Option<Arc<Semaphore>>,
}

impl AppState {
    pub fn new(config: RunConfig) -> Result<Self> {
        let session = load_session(&config)?;
        let stimuli = config
            .service
            .stimuli
            .clone()
            .unwrap_or_else(|| CANONICAL_STIMULI.iter().map(|s| s.to_string()).collect());
        Ok(AppState {
            config,
            stimuli,
            session: ArcSwap::from_pointee(session),
            jobs: Mutex::new(BTreeMap::new()),
            job_counter: AtomicU64::new(0),
            extractor: OnceLock::new(),
            job_gate: None,
        })
    }

    /// Retraining jobs wait for a permit on `gate` before they start.
    pub fn with_job_gate(mut self, gate: Arc<Semaphore>) -> Self {
        self.job_gate = Some(gate);
        self
    }

    pub fn snapshot(&self) -> Arc<Session> {
        self.session.load_full()
    }

    pub fn extractor(&self) -> Result<Arc<Extractor>> {
        self.extractor
            .get_or_init(|| {
                Extractor::new(&self.config.analysis)
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(Error::InvalidParameter)
    }

    pub fn next_job_id(&self) -> String {
        format!("job-{}", self.job_counter.fetch_add(1, Ordering::SeqCst) + 1)
    }

    pub fn job_gate(&self) -> Option<Arc<Semaphore>> {
        self.job_gate.clone()
    }

    /// Stores the annotation, archiving any previous one of the subject.
    pub fn submit_annotation(&self, annotation: Annotation) -> Result<u32> {
        annotation.validate(&self.stimuli)?;
        check_subject(&annotation.subject)?;
        let subject = annotation.subject.clone();
        let version = self.snapshot().versions.get(&subject).copied().unwrap_or(0) + 1;
        if let Some(dir) = &self.config.service.annotations_dir {
            std::fs::create_dir_all(dir)?;
            let active = dir.join(format!("{subject}.json"));
            if active.exists() {
                std::fs::rename(&active, dir.join(format!("{subject}.v{}.json", version - 1)))?;
            }
            std::fs::write(&active, serde_json::to_vec_pretty(&annotation)?)?;
        }
        self.session.rcu(|s| {
            let mut s = Session::clone(s);
            s.annotations.insert(subject.clone(), annotation.clone());
            s.versions.insert(subject.clone(), version);
            s
        });
        Ok(version)
    }

    /// Trains the metric of `subject` (or the consensus) and registers it.
    pub fn run_retrain(&self, subject: &str) -> Result<EvalReport> {
        let session = self.snapshot();
        let corpus = session
            .corpus
            .clone()
            .ok_or_else(|| Error::InvalidInput("no corpus loaded".into()))?;
        let store = session
            .store
            .clone()
            .ok_or_else(|| Error::InvalidInput("no feature store loaded".into()))?;
        let graph = if subject == CONSENSUS {
            let all: Vec<Annotation> = session.annotations.values().cloned().collect();
            consensus_graph(&all, &self.stimuli, self.config.lmnn.seed)?
        } else {
            let a = session
                .annotations
                .get(subject)
                .ok_or_else(|| Error::UnknownId(subject.to_string()))?;
            annotation_to_graph(a, &self.stimuli)?
        };
        let clips = expand_clusters(&graph, &corpus)?;
        let train = covered_subset(&store, &clips)?;
        let metric = train_metric(&train, &clips, subject, &self.config.lmnn)?;
        let report = evaluate(&train, &metric, &[(subject.to_string(), clips)], self.config.retrieval.rank)?;
        if let Some(dir) = &self.config.service.metrics_dir {
            std::fs::create_dir_all(dir)?;
            metric.write(&dir.join(format!("{subject}.scl")))?;
        }
        let metric = Arc::new(metric);
        self.session.rcu(|s| {
            let mut s = Session::clone(s);
            s.metrics.insert(subject.to_string(), metric.clone());
            s
        });
        Ok(report)
    }
}

/// Subject ids become file names, so they are kept to a safe alphabet.
pub fn check_subject(subject: &str) -> Result<()> {
    let ok = !subject.is_empty()
        && subject.len() <= 64
        && subject.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && subject != CONSENSUS
        && subject != IDENTITY;
    if ok {
        Ok(())
    } else {
        Err(Error::Annotation(format!(
            "subject id {subject:?} must be 1-64 letters, digits, '_' or '-', and not a reserved name"
        )))
    }
}

fn load_session(cfg: &RunConfig) -> Result<Session> {
    let svc = &cfg.service;
    let mut session = Session::default();
    if let Some(m) = &svc.manifest {
        session.corpus = Some(Arc::new(Corpus::read_manifest(m)?));
    }
    if let Some(path) = &svc.store {
        let raw = FeatureStore::read(path)?;
        check_fingerprint(&cfg.analysis.fingerprint(), &raw.fingerprint)?;
        let g = match &svc.gaussianizer {
            Some(gp) => Gaussianizer::read(gp)?,
            None => {
                log::warn!("no Gaussianizer configured; fitting one on the loaded store");
                fit_gaussianizer(&raw, &cfg.analysis)?
            }
        };
        let store = g.apply(&raw)?;
        session
            .metrics
            .insert(IDENTITY.into(), Arc::new(MetricMatrix::identity(store.fingerprint.clone(), store.dimension())));
        if let Some(dir) = &svc.metrics_dir {
            for (name, m) in load_metrics(dir)? {
                if m.fingerprint == store.fingerprint && m.dimension == store.dimension() {
                    session.metrics.insert(name, Arc::new(m));
                } else {
                    log::warn!("metric {name:?} was trained on other features; skipped");
                }
            }
        }
        session.store = Some(Arc::new(store));
        session.gaussianizer = Some(Arc::new(g));
    }
    if let Some(dir) = &svc.annotations_dir {
        let (annotations, versions) = load_annotations(dir)?;
        session.annotations = annotations;
        session.versions = versions;
    }
    Ok(session)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn load_metrics(dir: &Path) -> Result<Vec<(String, MetricMatrix)>> {
    sorted_files(dir, "scl")?
        .into_iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((name, MetricMatrix::read(&p)?))
        })
        .collect()
}

type AnnotationStore = (BTreeMap<String, Annotation>, BTreeMap<String, u32>);

fn load_annotations(dir: &Path) -> Result<AnnotationStore> {
    let mut active = BTreeMap::new();
    let mut versions: BTreeMap<String, u32> = BTreeMap::new();
    for p in sorted_files(dir, "json")? {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        match stem.split_once('.') {
            None => {
                let a = Annotation::read(&p)?;
                *versions.entry(a.subject.clone()).or_default() += 1;
                active.insert(a.subject.clone(), a);
            }
            Some((subject, _)) => *versions.entry(subject.to_string()).or_default() += 1,
        }
    }
    Ok((active, versions))
}
