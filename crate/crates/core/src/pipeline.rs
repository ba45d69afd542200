//! Glue between the stages: feature extraction over a corpus, Gaussianizer
//! fitting, metric training and the ablation matrix.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{clip_from_samples, load_clip, read_wav_bytes, AudioClip};
use crate::config::{AnalysisConfig, FeatureKind, LmnnConfig};
use crate::corpus::{Corpus, Imt};
use crate::error::{Error, Result};
use crate::features::{FeatureStore, Gaussianizer};
use crate::metric::{train_lmnn, MetricMatrix};
use crate::mfcc::{gram_path_names, mfcc, mfcc_gram, mfcc_path_names, MfccConfig};
use crate::perceptual::{
    annotation_to_graph, build_hypergraph, partition_hypergraph, Annotation, ClusterGraph,
};
use crate::retrieval::{evaluate, EvalReport, RankedResult};
use crate::scattering::ScatteringNetwork;

enum Engine {
    Scattering(Box<ScatteringNetwork>),
    Mfcc { config: MfccConfig, gram: bool },
}

/// Turns clips into feature rows for one analysis configuration.
pub struct Extractor {
    config: AnalysisConfig,
    fingerprint: String,
    engine: Engine,
    paths: Vec<String>,
}

impl Extractor {
    pub fn new(config: &AnalysisConfig) -> Result<Self> {
        config.validate()?;
        let (engine, paths) = match config.features.variant() {
            Some(variant) => {
                let net = ScatteringNetwork::new(&config.scattering(), variant)?;
                let paths = net.paths().iter().map(|p| p.to_string()).collect();
                (Engine::Scattering(Box::new(net)), paths)
            }
            None => {
                let mc = MfccConfig {
                    frame: config.mfcc_frame,
                    hop: config.mfcc_hop,
                    bands: config.mel_bands,
                };
                let gram = config.features == FeatureKind::MfccGram;
                let paths = if gram {
                    gram_path_names(mc.bands)
                } else {
                    mfcc_path_names(mc.bands)
                };
                (Engine::Mfcc { config: mc, gram }, paths)
            }
        };
        Ok(Extractor {
            config: config.clone(),
            fingerprint: config.fingerprint(),
            engine,
            paths,
        })
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn features(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        match &self.engine {
            Engine::Scattering(net) => Ok(net.transform(clip)?.values),
            Engine::Mfcc { config, gram } => {
                let frames = mfcc(clip, config)?;
                Ok(if *gram { mfcc_gram(&frames) } else { frames.mean() })
            }
        }
    }

    pub fn load(&self, path: &Path, id: &str) -> Result<AudioClip> {
        load_clip(path, id, self.config.sample_rate, self.config.normalize)
    }

    /// Decodes WAV bytes, resamples, and returns the raw feature row.
    pub fn wav_features(&self, bytes: &[u8], id: &str) -> Result<Vec<f64>> {
        let (samples, rate) = read_wav_bytes(bytes)?;
        let clip = clip_from_samples(samples, rate, id, self.config.sample_rate, self.config.normalize)?;
        self.features(&clip)
    }

    pub fn samples_clip(&self, samples: Vec<f64>, rate: u32, id: &str) -> Result<AudioClip> {
        clip_from_samples(samples, rate, id, self.config.sample_rate, self.config.normalize)
    }

    pub fn extract_clips(&self, clips: &[AudioClip]) -> Result<FeatureStore> {
        let rows = clips
            .par_iter()
            .map(|c| Ok((c.id.clone(), self.features(c)?)))
            .collect::<Result<Vec<_>>>()?;
        FeatureStore::new(self.fingerprint.clone(), self.paths.clone(), rows)
    }

    pub fn extract(&self, corpus: &Corpus) -> Result<FeatureStore> {
        let rows = corpus
            .entries
            .par_iter()
            .map(|e| {
                let clip = self.load(&corpus.resolve(e), &e.id)?;
                Ok((e.id.clone(), self.features(&clip)?))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureStore::new(self.fingerprint.clone(), self.paths.clone(), rows)
    }
}

/// MFCC-based rows can be negative, so they are only standardized.
pub fn fit_gaussianizer(store: &FeatureStore, config: &AnalysisConfig) -> Result<Gaussianizer> {
    let log = config.features.variant().is_some();
    Gaussianizer::fit(store, config.epsilon, log)
}

pub fn train_metric(
    store: &FeatureStore,
    graph: &ClusterGraph,
    graph_name: &str,
    cfg: &LmnnConfig,
) -> Result<MetricMatrix> {
    let labels = graph.labels_for(&store.ids)?;
    train_lmnn(store, &labels, graph_name, cfg)
}

/// The rows of `store` that `graph` covers. Clips outside every cluster
/// take no part in training or evaluation.
pub fn covered_subset(store: &FeatureStore, graph: &ClusterGraph) -> Result<FeatureStore> {
    let vertices: std::collections::HashSet<String> = graph.vertices().into_iter().collect();
    let ids: Vec<String> = store.ids.iter().filter(|id| vertices.contains(*id)).cloned().collect();
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "the cluster graph covers {} stored clips; need at least two",
            ids.len()
        )));
    }
    store.subset(&ids)
}

/// Consensus of several subjects' stimulus graphs, with as many clusters
/// as the most fine-grained subject used.
pub fn consensus_graph(annotations: &[Annotation], stimuli: &[String], seed: u64) -> Result<ClusterGraph> {
    if annotations.is_empty() {
        return Err(Error::InvalidInput("consensus needs at least one annotation".into()));
    }
    let graphs = annotations
        .iter()
        .map(|a| Ok((a.subject.clone(), annotation_to_graph(a, stimuli)?)))
        .collect::<Result<Vec<_>>>()?;
    let c0 = graphs.iter().map(|(_, g)| g.cluster_count()).max().unwrap_or(1);
    let h = build_hypergraph(&graphs)?;
    Ok(partition_hypergraph(&h, c0, seed)?.graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub rank: usize,
    pub id: String,
    pub distance: f64,
    pub imt: Option<Imt>,
}

/// What both the command line and the HTTP API print for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub query: Option<String>,
    pub metric: String,
    pub rank: usize,
    pub results: Vec<QueryHit>,
}

impl QueryResponse {
    pub fn new(result: RankedResult, metric: &str, rank: usize, corpus: Option<&Corpus>) -> Self {
        QueryResponse {
            query: result.query,
            metric: metric.to_string(),
            rank,
            results: result
                .results
                .into_iter()
                .enumerate()
                .map(|(k, n)| QueryHit {
                    rank: k + 1,
                    imt: corpus.and_then(|c| c.get(&n.id)).map(|e| e.imt.clone()),
                    id: n.id,
                    distance: n.distance,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("query response serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCase {
    pub name: String,
    pub analysis: AnalysisConfig,
    /// Train LMNN, or keep the identity metric.
    pub learned: bool,
}

/// The reference system and its standard comparisons: identity metric,
/// separable scattering, a 25 ms time scale, MFCC and MFCC-Gram.
pub fn standard_ablation(base: &AnalysisConfig) -> Vec<AblationCase> {
    let jtfs = AnalysisConfig {
        features: FeatureKind::Jtfs,
        ..base.clone()
    };
    let with = |name: &str, learned: bool, f: &dyn Fn(&mut AnalysisConfig)| {
        let mut a = jtfs.clone();
        f(&mut a);
        AblationCase {
            name: name.into(),
            analysis: a,
            learned,
        }
    };
    vec![
        with("jtfs", true, &|_| {}),
        with("jtfs-identity", false, &|_| {}),
        with("separable", true, &|a| a.features = FeatureKind::Separable),
        with("jtfs-25ms", true, &|a| a.time_constant = 0.025),
        with("mfcc", true, &|a| a.features = FeatureKind::Mfcc),
        with("mfcc-gram", true, &|a| a.features = FeatureKind::MfccGram),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub features: FeatureKind,
    pub time_constant: f64,
    pub learned: bool,
    pub dimension: usize,
    pub report: EvalReport,
    pub seconds: f64,
}

/// Runs every case on the same clips. Features are computed once per
/// distinct analysis configuration.
pub fn run_ablation(
    clips: &[AudioClip],
    graphs: &[(String, ClusterGraph)],
    train_graph: &ClusterGraph,
    cases: &[AblationCase],
    lmnn: &LmnnConfig,
    rank: usize,
) -> Result<Vec<AblationResult>> {
    let mut cache: HashMap<String, (FeatureStore, f64)> = HashMap::new();
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let fp = case.analysis.fingerprint();
        if !cache.contains_key(&fp) {
            let t = Instant::now();
            let raw = Extractor::new(&case.analysis)?.extract_clips(clips)?;
            let g = fit_gaussianizer(&raw, &case.analysis)?;
            cache.insert(fp.clone(), (g.apply(&raw)?, t.elapsed().as_secs_f64()));
        }
        let (store, extract_secs) = &cache[&fp];
        let start = Instant::now();
        let metric = if case.learned {
            train_metric(store, train_graph, "train", lmnn)?
        } else {
            MetricMatrix::identity(store.fingerprint.clone(), store.dimension())
        };
        let report = evaluate(store, &metric, graphs, rank)?;
        log::info!("{}: AP@{rank} = {:.4}", case.name, report.average_precision);
        out.push(AblationResult {
            name: case.name.clone(),
            features: case.analysis.features,
            time_constant: case.analysis.time_constant,
            learned: case.learned,
            dimension: store.dimension(),
            report,
            seconds: start.elapsed().as_secs_f64() + extract_secs,
        });
    }
    Ok(out)
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("name,features,time_constant,learned,dimension,ap,std,seconds\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.3}\n",
            r.name,
            r.features,
            r.time_constant,
            r.learned,
            r.dimension,
            r.report.average_precision,
            r.report.std,
            r.seconds
        ));
    }
    s
}

pub fn find_case<'a>(results: &'a [AblationResult], name: &str) -> Result<&'a AblationResult> {
    results
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("no ablation case {name:?}")))
}
