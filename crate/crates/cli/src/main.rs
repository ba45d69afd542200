//! `scatsim`: batch front end for extraction, metric learning, evaluation,
//! retrieval, the ablation matrix and the HTTP service.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scatsim_core::config::{check_fingerprint, FeatureKind, RunConfig};
use scatsim_core::corpus::{expand_clusters, split_corpus, Corpus};
use scatsim_core::features::{FeatureStore, Gaussianizer};
use scatsim_core::metric::MetricMatrix;
use scatsim_core::perceptual::{Annotation, ClusterGraph};
use scatsim_core::pipeline::{
    ablation_csv, consensus_graph, covered_subset, fit_gaussianizer, run_ablation, standard_ablation,
    train_metric, Extractor, QueryResponse,
};
use scatsim_core::retrieval::{evaluate, SearchIndex};
use scatsim_core::scattering::rate_scale_slice;
use scatsim_core::synth::{make_synthetic_corpus, PlantedCorpusSpec};
use scatsim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "scatsim", version, about = "Timbre similarity from joint time-frequency scattering")]
struct Cli {
    /// TOML run configuration; command flags override it.
    #[arg(long, global = true, env = "SCATTER_SIM_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for extraction (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct AnalysisFlags {
    /// jtfs, separable, mfcc or mfcc-gram.
    #[arg(long)]
    features: Option<String>,
    /// Averaging time scale in milliseconds.
    #[arg(long = "T", value_name = "MS")]
    time_constant: Option<f64>,
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Args)]
struct StoreArgs {
    /// Raw feature store (.scf).
    #[arg(long)]
    store: PathBuf,
    /// Gaussianizer (.scg); fitted on the store when omitted.
    #[arg(long)]
    gaussianizer: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted synthetic corpus: WAVs, manifest and cluster graph.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// JSON corpus description; defaults to four AM/chirp clusters.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        clips_per_cluster: Option<usize>,
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Compute a feature store for every clip of a corpus.
    Extract {
        /// Manifest (JSON lines) or a directory of WAV files.
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        analysis: AnalysisFlags,
    },
    /// Fit the log compression and standardization of a store.
    Gaussianize {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge annotation files into one consensus stimulus graph.
    Consensus {
        annotations: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Carry a stimulus graph over to every corpus clip of the same IMT.
    Expand {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified train/test split of a clip graph.
    Split {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Learn a metric with LMNN on the clips a graph covers.
    Train {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the identity metric instead of training.
        #[arg(long)]
        identity: bool,
    },
    /// Average precision at rank R against one or more graphs.
    Evaluate {
        #[command(flatten)]
        store: StoreArgs,
        /// Metric file, or `identity`.
        #[arg(long, default_value = "identity")]
        metric: String,
        #[arg(long, required = true)]
        graph: Vec<PathBuf>,
        #[arg(long)]
        rank: Option<usize>,
        /// Report JSON; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Nearest neighbors of a stored clip or a WAV file.
    Query {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, default_value = "identity")]
        metric: String,
        #[arg(long, conflicts_with = "wav", required_unless_present = "wav")]
        id: Option<String>,
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long)]
        rank: Option<usize>,
        /// Corpus manifest for IMT metadata in the results.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Rate-scale energy of one clip as CSV.
    RateScale {
        wav: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisFlags,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// The standard feature/metric comparison on one corpus.
    Ablate {
        corpus: PathBuf,
        /// Evaluation graph over clip ids.
        #[arg(long)]
        graph: PathBuf,
        /// Training graph; defaults to the evaluation graph.
        #[arg(long)]
        train_graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[command(flatten)]
        analysis: AnalysisFlags,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_flags(cfg: &mut RunConfig, flags: &AnalysisFlags) -> Result<()> {
    if let Some(f) = &flags.features {
        cfg.analysis.features = f.parse::<FeatureKind>()?;
    }
    if let Some(t) = flags.time_constant {
        cfg.analysis.time_constant = t / 1000.0;
    }
    if let Some(sr) = flags.sample_rate {
        cfg.analysis.sample_rate = sr;
    }
    cfg.analysis.validate()
}

/// Writes the merged configuration next to an artifact.
fn archive_config(cfg: &RunConfig, artifact: &Path) -> Result<()> {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".config.toml");
    std::fs::write(PathBuf::from(name), cfg.to_toml())?;
    Ok(())
}

fn open_corpus(path: &Path) -> Result<Corpus> {
    if path.is_dir() {
        Corpus::scan(path)
    } else {
        Corpus::read_manifest(path)
    }
}

fn graph_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("graph")
        .to_string()
}

/// The Gaussianized store, and the Gaussianizer used for external rows.
fn gaussianized(args: &StoreArgs, cfg: &RunConfig) -> Result<(FeatureStore, Gaussianizer)> {
    let raw = FeatureStore::read(&args.store)?;
    let g = match &args.gaussianizer {
        Some(p) => Gaussianizer::read(p)?,
        None => fit_gaussianizer(&raw, &analysis_of(&args.store, cfg)?.analysis)?,
    };
    Ok((g.apply(&raw)?, g))
}

/// The configuration archived beside `artifact`, else `cfg`.
fn analysis_of(artifact: &Path, cfg: &RunConfig) -> Result<RunConfig> {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".config.toml");
    let archived = PathBuf::from(name);
    if archived.exists() {
        let mut merged = RunConfig::load(&archived)?;
        merged.lmnn = cfg.lmnn.clone();
        merged.retrieval = cfg.retrieval.clone();
        merged.service = cfg.service.clone();
        Ok(merged)
    } else {
        Ok(cfg.clone())
    }
}

fn load_metric(spec: &str, store: &FeatureStore) -> Result<MetricMatrix> {
    if spec == "identity" {
        Ok(MetricMatrix::identity(store.fingerprint.clone(), store.dimension()))
    } else {
        let m = MetricMatrix::read(Path::new(spec))?;
        check_fingerprint(&m.fingerprint, &store.fingerprint)?;
        Ok(m)
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("--jobs: {e}")))?;
    }
    let mut cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Synth {
            out,
            seed,
            spec,
            clips_per_cluster,
            sample_rate,
        } => {
            let mut s: PlantedCorpusSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => PlantedCorpusSpec::default(),
            };
            if let Some(n) = clips_per_cluster {
                s.clips_per_cluster = n;
            }
            if let Some(sr) = sample_rate {
                s.sample_rate = sr;
            }
            let (corpus, graph) = make_synthetic_corpus(&s, seed, &out)?;
            log::info!(
                "wrote {} clips in {} clusters to {}",
                corpus.len(),
                graph.cluster_count(),
                out.display()
            );
        }
        Command::Extract {
            corpus,
            out,
            analysis,
        } => {
            apply_flags(&mut cfg, &analysis)?;
            let corpus = open_corpus(&corpus)?;
            let extractor = Extractor::new(&cfg.analysis)?;
            log::info!(
                "extracting {} features ({} paths) from {} clips",
                cfg.analysis.features,
                extractor.paths().len(),
                corpus.len()
            );
            let store = extractor.extract(&corpus)?;
            store.write(&out)?;
            archive_config(&cfg, &out)?;
        }
        Command::Gaussianize { store, out } => {
            let cfg = analysis_of(&store, &cfg)?;
            let raw = FeatureStore::read(&store)?;
            check_fingerprint(&cfg.analysis.fingerprint(), &raw.fingerprint)?;
            let g = fit_gaussianizer(&raw, &cfg.analysis)?;
            log::info!("Lipschitz bound of the Gaussianizer: {:.3e}", g.lipschitz());
            g.write(&out)?;
            archive_config(&cfg, &out)?;
        }
        Command::Consensus {
            annotations,
            out,
            seed,
        } => {
            let stimuli = cfg.service.stimuli.clone().unwrap_or_else(|| {
                scatsim_core::corpus::CANONICAL_STIMULI.iter().map(|s| s.to_string()).collect()
            });
            let mut all = Vec::new();
            for p in &annotations {
                if p.is_dir() {
                    let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|f| f.extension().is_some_and(|x| x == "json"))
                        .filter(|f| !f.file_stem().and_then(|s| s.to_str()).unwrap_or("").contains('.'))
                        .collect();
                    files.sort();
                    for f in files {
                        all.push(Annotation::read(&f)?);
                    }
                } else {
                    all.push(Annotation::read(p)?);
                }
            }
            let graph = consensus_graph(&all, &stimuli, seed.unwrap_or(cfg.lmnn.seed))?;
            log::info!("consensus of {} subjects: {} clusters", all.len(), graph.cluster_count());
            graph.write(&out)?;
        }
        Command::Expand { graph, corpus, out } => {
            let g = ClusterGraph::read(&graph)?;
            let c = open_corpus(&corpus)?;
            let expanded = expand_clusters(&g, &c)?;
            log::info!("expanded to {} clips", expanded.vertex_count());
            expanded.write(&out)?;
        }
        Command::Split {
            graph,
            fraction,
            seed,
            train_out,
            test_out,
        } => {
            let (train, test) = split_corpus(&ClusterGraph::read(&graph)?, fraction, seed)?;
            train.write(&train_out)?;
            test.write(&test_out)?;
        }
        Command::Train {
            store,
            graph,
            out,
            identity,
        } => {
            let (s, _) = gaussianized(&store, &cfg)?;
            let g = ClusterGraph::read(&graph)?;
            let train = covered_subset(&s, &g)?;
            let metric = if identity {
                MetricMatrix::identity(train.fingerprint.clone(), train.dimension())
            } else {
                train_metric(&train, &g, &graph_name(&graph), &cfg.lmnn)?
            };
            metric.write(&out)?;
            archive_config(&cfg, &out)?;
        }
        Command::Evaluate {
            store,
            metric,
            graph,
            rank,
            out,
            csv,
        } => {
            let (s, _) = gaussianized(&store, &cfg)?;
            let m = load_metric(&metric, &s)?;
            let graphs = graph
                .iter()
                .map(|p| Ok((graph_name(p), ClusterGraph::read(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut covered: Option<HashSet<String>> = None;
            for (_, g) in &graphs {
                let v: HashSet<String> = g.vertices().into_iter().collect();
                covered = Some(match covered {
                    None => v,
                    Some(c) => c.intersection(&v).cloned().collect(),
                });
            }
            let covered = covered.unwrap_or_default();
            let ids: Vec<String> = s.ids.iter().filter(|id| covered.contains(*id)).cloned().collect();
            let subset = s.subset(&ids)?;
            let report = evaluate(&subset, &m, &graphs, rank.unwrap_or(cfg.retrieval.rank))?;
            log::info!("AP@{} = {:.4}", report.rank, report.average_precision);
            write_or_print(&out, &report.to_json())?;
            if let Some(c) = csv {
                std::fs::write(c, report.to_csv())?;
            }
        }
        Command::Query {
            store,
            metric,
            id,
            wav,
            rank,
            manifest,
        } => {
            let (s, g) = gaussianized(&store, &cfg)?;
            let m = load_metric(&metric, &s)?;
            let rank = rank.unwrap_or(cfg.retrieval.rank);
            if rank == 0 {
                return Err(Error::InvalidParameter("rank must be at least 1".into()));
            }
            let index = SearchIndex::new(&s, &m)?;
            let result = match (id, wav) {
                (Some(id), _) => index.query_id(&id, rank)?,
                (None, Some(w)) => {
                    let analysis = analysis_of(&store.store, &cfg)?.analysis;
                    let raw = Extractor::new(&analysis)?.wav_features(&std::fs::read(w)?, "query")?;
                    index.query_row(&g.apply_row(&raw)?, rank)?
                }
                (None, None) => unreachable!("clap requires --id or --wav"),
            };
            let corpus = manifest.as_deref().map(Corpus::read_manifest).transpose()?;
            let name = if metric == "identity" { "identity".to_string() } else { graph_name(Path::new(&metric)) };
            println!("{}", QueryResponse::new(result, &name, rank, corpus.as_ref()).to_json());
        }
        Command::RateScale { wav, out, analysis } => {
            apply_flags(&mut cfg, &analysis)?;
            let ex = Extractor::new(&cfg.analysis)?;
            let clip = ex.load(&wav, &graph_name(&wav))?;
            let slice = rate_scale_slice(&clip, &cfg.analysis.scattering())?;
            let (rate, scale) = slice.argmax();
            log::info!("peak at {rate} Hz, {scale} c/o");
            write_or_print(&out, slice.to_csv().trim_end())?;
        }
        Command::Serve { bind } => {
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(scatsim_service::serve(cfg))?;
        }
        Command::Ablate {
            corpus,
            graph,
            train_graph,
            out,
            rank,
            analysis,
        } => {
            apply_flags(&mut cfg, &analysis)?;
            let c = open_corpus(&corpus)?;
            let ex = Extractor::new(&cfg.analysis)?;
            let clips = c
                .entries
                .iter()
                .map(|e| ex.load(&c.resolve(e), &e.id))
                .collect::<Result<Vec<_>>>()?;
            let eval = ClusterGraph::read(&graph)?;
            let train = match &train_graph {
                Some(p) => ClusterGraph::read(p)?,
                None => eval.clone(),
            };
            let results = run_ablation(
                &clips,
                &[(graph_name(&graph), eval)],
                &train,
                &standard_ablation(&cfg.analysis),
                &cfg.lmnn,
                rank.unwrap_or(cfg.retrieval.rank),
            )?;
            let table = ablation_csv(&results);
            eprint!("{table}");
            std::fs::write(&out, table)?;
        }
    }
    Ok(())
}
