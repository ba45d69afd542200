//! Instrument-mute-technique (IMT) names, corpus manifests, cluster
//! expansion from stimuli to clips, and stratified splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perceptual::ClusterGraph;

pub const INSTRUMENTS: [&str; 16] = [
    "Vn", "Va", "Vc", "Cb", "Hp", "Gtr", "Acc", "Fl", "BbCl", "ASax", "Ob", "Bn", "TpC", "Hn",
    "TTbn", "BBTb",
];

pub const MUTES: [&str; 5] = ["S", "C", "H", "W", "SP"];

pub const DYNAMICS: [&str; 5] = ["pp", "p", "mf", "f", "ff"];

/// The 78 stimuli of the listening test, one per IMT.
pub const CANONICAL_STIMULI: [&str; 78] = [
    "ASax-key-cl-C4-p",
    "ASax-ord-C4-mf",
    "ASax-ord-hi-reg-C6-mf",
    "ASax-slap-C4-mf",
    "ASax-slap-unp-C4-p",
    "BbCl-key-cl-C4-pp",
    "BbCl-ord-hi-reg-A6-ff",
    "BBTb-explo-slap-C#1-mf",
    "BBTb-pdl-tone-F1-mf",
    "BBTb-slap-F1-mf",
    "BBTb-slap-unp-mf-1",
    "Bn-key-cl-C3-mf",
    "Bn-ord-C4-mf",
    "Cb-pizz-bartok-C4-ff-1c",
    "Cb-pizz-lv-C4-mf-1c",
    "Cb-pizz-sec-C4-mf-1c",
    "Cb-pont-C4-mf-1c",
    "Fl-key-cl-C4-f",
    "Fl-ord-C4-mf",
    "Fl-tng-ram-C4-mf",
    "Gtr-ord-C4-mf-2c",
    "Gtr-ord-hi-reg-E5-mf-3c",
    "Gtr-pizz-bartok-C4-ff-2c",
    "Gtr-pizz-C4-mf-2c",
    "Hn-ord-C4-mf",
    "Hn-slap-C4-mf",
    "Hp-harm-fngr-C4-f",
    "Hp-ord-C4-m4",
    "Hp-pizz-bartok-C4-mf",
    "Hp-xyl-C4-p",
    "Ob-blow-no-reed-C4",
    "Ob-key-cl-C4-pp",
    "Ob-ord-C4-mf",
    "TpC-ord-C4-mf",
    "TpC-pdl-tone-F3-mf",
    "TpC-slap-C4-p",
    "TpC+C-ord-C4-mf",
    "TpC+H-ord-C4-mf",
    "TpC+S-ord-C4-mf",
    "TpC+W-ord-closed-C4-mf",
    "TpC+W-ord-open-C4-mf",
    "TTbn-ord-C4-mf",
    "TTbn+C-ord-C4-mf",
    "TTbn+H-ord-C4-mf",
    "TTbn+S-ord-C4-mf",
    "TTbn+W-ord-closed-C4-mf",
    "TTbn+W-ord-open-C4-mf",
    "Va-art-harm-C5-mf-4c",
    "Va-legno-batt-C4-mf-3c",
    "Va-ord-C4-mf-3c",
    "Va-pizz-bartok-C4-ff-3c",
    "Va-pizz-lv-C4-mf-3c",
    "Va-pizz-sec-C4-mf-3c",
    "Va-pont-C4-mf-3c",
    "Va+S-ord-C3-mf-3c",
    "Va+SP-ord-D4-mf-2c",
    "Vc-art-harm-C4-mf",
    "Vc-legno-batt-C4-mf-1c",
    "Vc-legno-tratto-C4-mf-1c",
    "Vc-nonvib-C4-mf-1c",
    "Vc-ord-C4-mf-1c",
    "Vc-pizz-bartok-C4-ff-1c",
    "Vc-pizz-lv-C4-mf-1c",
    "Vc-pizz-sec-C4-mf-1c",
    "Vc-pont-C4-mf-2c",
    "Vc-tasto-C4-mf-1c",
    "Vc+S-ord-C4-mf-1c",
    "Vc+SP-ord-C4-mf-1c",
    "Vn-art-harm-G5-mf-4c",
    "Vn-legno-batt-C4-mf-4c",
    "Vn-nonvib-C4-mf-4c",
    "Vn-ord-C4-mf-4c",
    "Vn-pizz-bartok-C4-ff-4c",
    "Vn-pizz-lv-C4-mf-4c",
    "Vn-pizz-sec-C4-mf-4c",
    "Vn-pont-C4-mf-4c",
    "Vn+S-ord-C4-mf-4c",
    "Vn+SP-ord-C4-mf-4c",
];

/// Parsed SOL-style file name such as `TpC+S-ord-C4-mf`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Imt {
    pub instrument: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mute: Option<String>,
    pub technique: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string: Option<u8>,
    /// Trailing tokens the grammar does not cover, kept verbatim (e.g. the
    /// `m4` of `Hp-ord-C4-m4`, or SOL take numbers).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suffix: Vec<String>,
}

/// What stays fixed when pitch and dynamics vary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImtKey {
    pub instrument: String,
    pub mute: Option<String>,
    pub technique: String,
}

impl Imt {
    pub fn key(&self) -> ImtKey {
        ImtKey {
            instrument: self.instrument.clone(),
            mute: self.mute.clone(),
            technique: self.technique.clone(),
        }
    }
}

fn is_pitch(token: &str) -> bool {
    let b = token.as_bytes();
    if b.is_empty() || !(b'A'..=b'G').contains(&b[0]) {
        return false;
    }
    let mut i = 1;
    if i < b.len() && (b[i] == b'#' || b[i] == b'b') {
        i += 1;
    }
    i < b.len() && b[i..].iter().all(u8::is_ascii_digit)
}

fn string_number(token: &str) -> Option<u8> {
    token.strip_suffix('c')?.parse().ok()
}

/// Parses a stimulus or file name (an extension, if any, is dropped).
pub fn parse_imt_name(name: &str) -> Result<Imt> {
    let base = Path::new(name)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    let stem = base
        .strip_suffix(".wav")
        .or_else(|| base.strip_suffix(".WAV"))
        .unwrap_or(base);
    let mut tokens = stem.split('-');
    let head = tokens
        .next()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::InvalidInput(format!("empty IMT name {name:?}")))?;
    let (instrument, mute) = match head.split_once('+') {
        Some((i, m)) => (i, Some(m)),
        None => (head, None),
    };
    if !INSTRUMENTS.contains(&instrument) {
        return Err(Error::UnknownInstrument(instrument.to_string()));
    }
    if let Some(m) = mute {
        if !MUTES.contains(&m) {
            return Err(Error::InvalidInput(format!("unknown mute code {m:?} in {name:?}")));
        }
    }

    let rest: Vec<&str> = tokens.collect();
    let mut i = 0;
    let mut technique = Vec::new();
    while i < rest.len() && !is_pitch(rest[i]) && !DYNAMICS.contains(&rest[i]) && string_number(rest[i]).is_none() {
        technique.push(rest[i]);
        i += 1;
    }
    if technique.is_empty() {
        return Err(Error::InvalidInput(format!("missing playing technique in {name:?}")));
    }
    let mut imt = Imt {
        instrument: instrument.to_string(),
        mute: mute.map(str::to_string),
        technique: technique.join("-"),
        pitch: None,
        dynamics: None,
        string: None,
        suffix: Vec::new(),
    };
    if i < rest.len() && is_pitch(rest[i]) {
        imt.pitch = Some(rest[i].to_string());
        i += 1;
    }
    if i < rest.len() && DYNAMICS.contains(&rest[i]) {
        imt.dynamics = Some(rest[i].to_string());
        i += 1;
    }
    if i < rest.len() {
        if let Some(s) = string_number(rest[i]) {
            imt.string = Some(s);
            i += 1;
        }
    }
    imt.suffix = rest[i..].iter().map(|t| t.to_string()).collect();
    Ok(imt)
}

pub fn render_imt_name(imt: &Imt) -> String {
    let mut out = imt.instrument.clone();
    if let Some(m) = &imt.mute {
        out.push('+');
        out.push_str(m);
    }
    out.push('-');
    out.push_str(&imt.technique);
    for part in [&imt.pitch, &imt.dynamics].into_iter().flatten() {
        out.push('-');
        out.push_str(part);
    }
    if let Some(s) = imt.string {
        out.push_str(&format!("-{s}c"));
    }
    for t in &imt.suffix {
        out.push('-');
        out.push_str(t);
    }
    out
}

impl fmt::Display for Imt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_imt_name(self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub path: PathBuf,
    pub imt: Imt,
}

/// Audio clips with parsed metadata, ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>, mut entries: Vec<CorpusEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput(format!("duplicate clip id {:?}", w[0].id)));
        }
        Ok(Corpus {
            root: root.into(),
            entries,
        })
    }

    /// Recursively collects `.wav` files under `root`. Files whose names do
    /// not parse (e.g. percussion) are skipped with a warning.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
                {
                    files.push(path);
                }
            }
        }
        files.sort();
        let mut entries = Vec::new();
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            match parse_imt_name(&stem) {
                Ok(imt) => entries.push(CorpusEntry {
                    id: stem,
                    path: path.strip_prefix(root).unwrap_or(&path).to_path_buf(),
                    imt,
                }),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Corpus::new(root, entries)
    }

    pub fn resolve(&self, entry: &CorpusEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a JSON-lines manifest; relative paths resolve against the
    /// manifest's directory.
    pub fn read_manifest(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (n, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CorpusEntry = serde_json::from_str(&line).map_err(|e| {
                Error::Format(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Corpus::new(root, entries)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Maps a cluster graph over stimuli onto every corpus clip that shares the
/// stimulus' instrument, mute and technique. A stimulus is either a corpus
/// clip id or an IMT name.
pub fn expand_clusters(stimulus_graph: &ClusterGraph, corpus: &Corpus) -> Result<ClusterGraph> {
    let mut key_cluster: HashMap<ImtKey, usize> = HashMap::new();
    let mut vertex_keys = Vec::new();
    for (c, cluster) in stimulus_graph.clusters.iter().enumerate() {
        for name in cluster {
            let key = match corpus.get(name) {
                Some(e) => e.imt.key(),
                None => parse_imt_name(name)?.key(),
            };
            if let Some(&prev) = key_cluster.get(&key) {
                if prev != c {
                    return Err(Error::InvalidInput(format!(
                        "stimuli sharing the IMT of {name:?} sit in different clusters"
                    )));
                }
            }
            key_cluster.insert(key.clone(), c);
            vertex_keys.push((name.clone(), key));
        }
    }
    let mut clusters: Vec<Vec<String>> = vec![Vec::new(); stimulus_graph.clusters.len()];
    let mut hits: HashMap<&ImtKey, usize> = HashMap::new();
    for entry in &corpus.entries {
        let key = entry.imt.key();
        if let Some(&c) = key_cluster.get(&key) {
            clusters[c].push(entry.id.clone());
            *hits.entry(key_cluster.get_key_value(&key).unwrap().0).or_default() += 1;
        }
    }
    let unmatched: Vec<&str> = vertex_keys
        .iter()
        .filter(|(_, k)| !hits.contains_key(k))
        .map(|(n, _)| n.as_str())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no corpus clip matches stimuli: {}",
            unmatched.join(", ")
        )));
    }
    ClusterGraph::new(clusters)
}

/// Stratified split: each cluster sends `round(fraction * size)` members to
/// the test side, always keeping at least one in training.
pub fn split_corpus(
    graph: &ClusterGraph,
    fraction: f64,
    seed: u64,
) -> Result<(ClusterGraph, ClusterGraph)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for cluster in &graph.clusters {
        let mut members = cluster.clone();
        members.sort();
        members.shuffle(&mut rng);
        let mut n_test = (fraction * members.len() as f64).round() as usize;
        if n_test >= members.len() {
            if members.len() == 1 {
                log::warn!("singleton cluster {:?} kept in training", members[0]);
            }
            n_test = members.len() - 1;
        }
        let (t, r) = members.split_at(n_test);
        let mut t = t.to_vec();
        let mut r = r.to_vec();
        t.sort();
        r.sort();
        if !t.is_empty() {
            test.push(t);
        }
        train.push(r);
    }
    Ok((ClusterGraph::new(train)?, ClusterGraph::new(test)?))
}

/// Counts clips per IMT key; handy for corpus summaries.
pub fn imt_histogram(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for e in &corpus.entries {
        let key = e.imt.key();
        let label = render_imt_name(&Imt {
            instrument: key.instrument,
            mute: key.mute,
            technique: key.technique,
            pitch: None,
            dynamics: None,
            string: None,
            suffix: Vec::new(),
        });
        *hist.entry(label).or_default() += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_muted_trumpet() {
        let imt = parse_imt_name("TpC+S-ord-C4-mf").unwrap();
        assert_eq!(imt.instrument, "TpC");
        assert_eq!(imt.mute.as_deref(), Some("S"));
        assert_eq!(imt.technique, "ord");
        assert_eq!(imt.pitch.as_deref(), Some("C4"));
        assert_eq!(imt.dynamics.as_deref(), Some("mf"));
        assert_eq!(imt.string, None);
    }

    #[test]
    fn parses_string_number() {
        let imt = parse_imt_name("Vn-pont-C4-mf-4c").unwrap();
        assert_eq!(imt.mute, None);
        assert_eq!(imt.technique, "pont");
        assert_eq!(imt.string, Some(4));
    }

    #[test]
    fn rejects_unknown_instrument() {
        match parse_imt_name("Xx-ord-C4-mf") {
            Err(Error::UnknownInstrument(code)) => assert_eq!(code, "Xx"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn irregular_names_keep_leftovers() {
        let tuba = parse_imt_name("BBTb-slap-unp-mf-1").unwrap();
        assert_eq!(tuba.technique, "slap-unp");
        assert_eq!(tuba.pitch, None);
        assert_eq!(tuba.dynamics.as_deref(), Some("mf"));
        assert_eq!(tuba.suffix, vec!["1"]);
        let harp = parse_imt_name("Hp-ord-C4-m4").unwrap();
        assert_eq!(harp.dynamics, None);
        assert_eq!(harp.suffix, vec!["m4"]);
        let oboe = parse_imt_name("Ob-blow-no-reed-C4").unwrap();
        assert_eq!(oboe.technique, "blow-no-reed");
        let wah = parse_imt_name("TTbn+W-ord-closed-C4-mf").unwrap();
        assert_eq!(wah.technique, "ord-closed");
        let sharp = parse_imt_name("BBTb-explo-slap-C#1-mf.wav").unwrap();
        assert_eq!(sharp.pitch.as_deref(), Some("C#1"));
    }

    #[test]
    fn canonical_names_round_trip_and_have_distinct_keys() {
        let mut keys = std::collections::HashSet::new();
        for name in CANONICAL_STIMULI {
            let imt = parse_imt_name(name).unwrap();
            assert_eq!(render_imt_name(&imt), name);
            assert!(keys.insert(imt.key()), "duplicate key for {name}");
        }
    }

    fn corpus_with_copies(copies: usize) -> Corpus {
        let mut entries = Vec::new();
        for name in CANONICAL_STIMULI {
            let base = parse_imt_name(name).unwrap();
            for k in 0..copies {
                let mut imt = base.clone();
                imt.pitch = Some(format!("C{}", 2 + k));
                let id = render_imt_name(&imt);
                entries.push(CorpusEntry {
                    id: format!("{id}#{k}"),
                    path: PathBuf::from(format!("{id}.wav")),
                    imt,
                });
            }
        }
        Corpus::new("/data", entries).unwrap()
    }

    fn stimulus_graph(n_clusters: usize) -> ClusterGraph {
        let mut clusters = vec![Vec::new(); n_clusters];
        for (i, name) in CANONICAL_STIMULI.iter().enumerate() {
            clusters[i % n_clusters].push(name.to_string());
        }
        ClusterGraph::new(clusters).unwrap()
    }

    #[test]
    fn expansion_triples_cluster_sizes() {
        let g = stimulus_graph(19);
        let expanded = expand_clusters(&g, &corpus_with_copies(3)).unwrap();
        assert_eq!(expanded.clusters.len(), 19);
        for (a, b) in g.clusters.iter().zip(&expanded.clusters) {
            assert_eq!(b.len(), 3 * a.len());
        }
    }

    #[test]
    fn expansion_on_canonical_corpus_is_identity() {
        let g = stimulus_graph(7);
        let entries = CANONICAL_STIMULI
            .iter()
            .map(|n| CorpusEntry {
                id: n.to_string(),
                path: PathBuf::from(format!("{n}.wav")),
                imt: parse_imt_name(n).unwrap(),
            })
            .collect();
        let corpus = Corpus::new("/data", entries).unwrap();
        let expanded = expand_clusters(&g, &corpus).unwrap();
        for (a, b) in g.clusters.iter().zip(&expanded.clusters) {
            let mut a = a.clone();
            a.sort();
            let mut b = b.clone();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn expansion_reports_unmatched_stimuli() {
        let g = stimulus_graph(3);
        let mut corpus = corpus_with_copies(1);
        corpus.entries.retain(|e| e.imt.instrument != "Hn");
        let err = expand_clusters(&g, &corpus).unwrap_err().to_string();
        assert!(err.contains("Hn-ord-C4-mf") && err.contains("Hn-slap-C4-mf"), "{err}");
    }

    #[test]
    fn clip_ids_work_as_stimuli() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::synth::PlantedCorpusSpec {
            sample_rate: 8000,
            duration: 0.1,
            clips_per_cluster: 3,
            ..Default::default()
        };
        let (corpus, truth) = crate::synth::make_synthetic_corpus(&spec, 1, dir.path()).unwrap();
        let stimuli = ClusterGraph::new(truth.clusters.iter().map(|c| vec![c[0].clone()]).collect()).unwrap();
        let expanded = expand_clusters(&stimuli, &corpus).unwrap();
        assert!(expanded.same_partition(&truth));
    }

    #[test]
    fn stratified_split_counts() {
        let clusters: Vec<Vec<String>> = (0..10)
            .map(|c| (0..10).map(|i| format!("c{c}-{i}")).collect())
            .collect();
        let g = ClusterGraph::new(clusters).unwrap();
        let (train, test) = split_corpus(&g, 0.3, 7).unwrap();
        assert_eq!(test.clusters.len(), 10);
        for t in &test.clusters {
            assert_eq!(t.len(), 3);
        }
        assert_eq!(train.vertex_count(), 70);
        let again = split_corpus(&g, 0.3, 7).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, test);
        let train_ids: std::collections::HashSet<_> = train.vertices().into_iter().collect();
        assert!(test.vertices().iter().all(|v| !train_ids.contains(v)));
        assert!(split_corpus(&g, 1.0, 7).is_err());
    }

    #[test]
    fn singleton_clusters_stay_in_training() {
        let g = ClusterGraph::new(vec![vec!["a".into()], vec!["b".into(), "c".into()]]).unwrap();
        let (train, test) = split_corpus(&g, 0.5, 1).unwrap();
        assert_eq!(train.vertex_count(), 2);
        assert_eq!(test.vertex_count(), 1);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = corpus_with_copies(2);
        let path = dir.path().join("manifest.jsonl");
        corpus.write_manifest(&path).unwrap();
        let back = Corpus::read_manifest(&path).unwrap();
        assert_eq!(back.entries, corpus.entries);
        assert_eq!(back.root, dir.path());
    }
}
