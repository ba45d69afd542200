//! Free-sorting annotations, cluster graphs, the judgment hypergraph and
//! its consensus partition.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// A partition of ids into disjoint, nonempty clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub clusters: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl ClusterGraph {
    pub fn new(clusters: Vec<Vec<String>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, c) in clusters.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidInput(format!("cluster {i} is empty")));
            }
            for v in c {
                if !seen.insert(v.as_str()) {
                    return Err(Error::InvalidInput(format!("vertex {v:?} appears twice")));
                }
            }
        }
        Ok(ClusterGraph {
            clusters,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// All vertices in ascending order.
    pub fn vertices(&self) -> Vec<String> {
        let mut v: Vec<String> = self.clusters.iter().flatten().cloned().collect();
        v.sort();
        v
    }

    pub fn vertex_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_index(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (c, cluster) in self.clusters.iter().enumerate() {
            for v in cluster {
                map.insert(v.as_str(), c);
            }
        }
        map
    }

    /// Cluster label of each id, or an error naming the first missing id.
    pub fn labels_for(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index = self.cluster_index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect()
    }

    /// True when both graphs partition the same vertices identically,
    /// regardless of cluster order.
    pub fn same_partition(&self, other: &ClusterGraph) -> bool {
        let canon = |g: &ClusterGraph| {
            let mut cs: Vec<Vec<String>> = g
                .clusters
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.sort();
                    c
                })
                .collect();
            cs.sort();
            cs
        };
        canon(self) == canon(other)
    }

    /// Restricts the graph to `keep`, dropping clusters that become empty.
    pub fn restrict(&self, keep: &HashSet<&str>) -> ClusterGraph {
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                c.iter()
                    .filter(|v| keep.contains(v.as_str()))
                    .cloned()
                    .collect::<Vec<_>>()
            })
            .filter(|c| !c.is_empty())
            .collect();
        ClusterGraph {
            clusters,
            provenance: self.provenance.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: ClusterGraph = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let provenance = raw.provenance.clone();
        let mut g = ClusterGraph::new(raw.clusters)?;
        g.provenance = provenance;
        Ok(g)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn unique_map<'de, D>(deserializer: D) -> std::result::Result<BTreeMap<String, String>, D::Error>
where
    D: Deserializer<'de>,
{
    struct UniqueMap;
    impl<'de> Visitor<'de> for UniqueMap {
        type Value = BTreeMap<String, String>;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map from stimulus id to color token")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
            let mut map = BTreeMap::new();
            while let Some((k, v)) = access.next_entry::<String, String>()? {
                if map.contains_key(&k) {
                    return Err(serde::de::Error::custom(format!("duplicate stimulus {k:?}")));
                }
                map.insert(k, v);
            }
            Ok(map)
        }
    }
    deserializer.deserialize_map(UniqueMap)
}

/// One participant's color assignment over the stimuli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub subject: String,
    #[serde(deserialize_with = "unique_map")]
    pub assignments: BTreeMap<String, String>,
}

impl Annotation {
    /// Checks that exactly the given stimuli are labeled.
    pub fn validate(&self, stimuli: &[String]) -> Result<()> {
        if self.subject.trim().is_empty() {
            return Err(Error::Annotation("subject id is empty".into()));
        }
        let expected: HashSet<&str> = stimuli.iter().map(String::as_str).collect();
        let mut missing: Vec<&str> = stimuli
            .iter()
            .map(String::as_str)
            .filter(|s| !self.assignments.contains_key(*s))
            .collect();
        missing.sort();
        if !missing.is_empty() {
            return Err(Error::Annotation(format!(
                "missing stimuli: {}",
                missing.join(", ")
            )));
        }
        let extra: Vec<&str> = self
            .assignments
            .keys()
            .map(String::as_str)
            .filter(|k| !expected.contains(k))
            .collect();
        if !extra.is_empty() {
            return Err(Error::Annotation(format!(
                "unknown stimuli: {}",
                extra.join(", ")
            )));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Annotation(format!("{}: {e}", path.display())))
    }
}

/// Color classes become clusters, ordered by their smallest stimulus id,
/// so renaming colors never changes the result.
pub fn annotation_to_graph(annotation: &Annotation, stimuli: &[String]) -> Result<ClusterGraph> {
    annotation.validate(stimuli)?;
    let mut by_color: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (stim, color) in &annotation.assignments {
        by_color.entry(color).or_default().push(stim.clone());
    }
    let mut clusters: Vec<Vec<String>> = by_color.into_values().collect();
    clusters.sort_by(|a, b| a[0].cmp(&b[0]));
    ClusterGraph::new(clusters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub subject: String,
    /// Indices into the hypergraph's vertex list, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub vertices: Vec<String>,
    pub edges: Vec<Hyperedge>,
}

/// One hyperedge per cluster per subject. Every graph must cover the same
/// vertex set.
pub fn build_hypergraph(graphs: &[(String, ClusterGraph)]) -> Result<Hypergraph> {
    let (_, first) = graphs
        .first()
        .ok_or_else(|| Error::InvalidInput("no cluster graphs to aggregate".into()))?;
    let vertices = first.vertices();
    let index: HashMap<&str, usize> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let mut edges = Vec::new();
    for (subject, g) in graphs {
        if g.vertices() != vertices {
            return Err(Error::InvalidInput(format!(
                "subject {subject:?} annotated a different stimulus set"
            )));
        }
        for cluster in &g.clusters {
            let mut members: Vec<usize> = cluster.iter().map(|v| index[v.as_str()]).collect();
            members.sort_unstable();
            edges.push(Hyperedge {
                subject: subject.clone(),
                members,
            });
        }
    }
    Ok(Hypergraph { vertices, edges })
}

const IMBALANCE_WEIGHT: f64 = 0.5;
const RESTARTS: u64 = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusPartition {
    pub graph: ClusterGraph,
    /// Final objective: connectivity-minus-one cut plus imbalance penalty.
    pub objective: f64,
    pub cut: f64,
    /// Objective after seeding and after every refinement pass of the
    /// winning restart.
    pub trace: Vec<f64>,
    pub seed: u64,
}

struct Partitioner<'a> {
    n: usize,
    k: usize,
    /// Penalty weight per squared size-fraction deviation.
    balance: f64,
    /// Distinct hyperedges of size >= 2 with their multiplicities.
    edges: Vec<(&'a [usize], f64)>,
    incident: Vec<Vec<usize>>,
}

struct State {
    label: Vec<usize>,
    sizes: Vec<usize>,
    pins: Vec<Vec<u32>>,
}

impl<'a> Partitioner<'a> {
    fn new(h: &'a Hypergraph, k: usize) -> Self {
        let mut counts: BTreeMap<&[usize], f64> = BTreeMap::new();
        for e in &h.edges {
            if e.members.len() >= 2 {
                *counts.entry(e.members.as_slice()).or_default() += 1.0;
            }
        }
        let edges: Vec<(&[usize], f64)> = counts.into_iter().collect();
        let mut incident = vec![Vec::new(); h.vertices.len()];
        for (i, (members, _)) in edges.iter().enumerate() {
            for &v in *members {
                incident[v].push(i);
            }
        }
        let subjects = h.edges.iter().map(|e| e.subject.as_str()).collect::<HashSet<_>>().len();
        Partitioner {
            n: h.vertices.len(),
            k,
            balance: IMBALANCE_WEIGHT * (subjects * h.vertices.len()) as f64,
            edges,
            incident,
        }
    }

    fn state(&self, label: Vec<usize>) -> State {
        let mut sizes = vec![0; self.k];
        for &l in &label {
            sizes[l] += 1;
        }
        let mut pins = vec![vec![0u32; self.k]; self.edges.len()];
        for (i, (members, _)) in self.edges.iter().enumerate() {
            for &v in *members {
                pins[i][label[v]] += 1;
            }
        }
        State { label, sizes, pins }
    }

    fn imbalance_term(&self, size: usize) -> f64 {
        let d = size as f64 / self.n as f64 - 1.0 / self.k as f64;
        self.balance * d * d
    }

    fn cut(&self, s: &State) -> f64 {
        self.edges
            .iter()
            .zip(&s.pins)
            .map(|((_, w), p)| w * (p.iter().filter(|&&c| c > 0).count() as f64 - 1.0))
            .sum()
    }

    fn objective(&self, s: &State) -> f64 {
        self.cut(s) + s.sizes.iter().map(|&c| self.imbalance_term(c)).sum::<f64>()
    }

    /// Change in objective when `v` moves to cluster `to`.
    fn delta(&self, s: &State, v: usize, to: usize) -> f64 {
        let from = s.label[v];
        let mut d = 0.0;
        for &e in &self.incident[v] {
            let w = self.edges[e].1;
            if s.pins[e][to] == 0 {
                d += w;
            }
            if s.pins[e][from] == 1 {
                d -= w;
            }
        }
        d += self.imbalance_term(s.sizes[from] - 1) - self.imbalance_term(s.sizes[from])
            + self.imbalance_term(s.sizes[to] + 1)
            - self.imbalance_term(s.sizes[to]);
        d
    }

    fn apply(&self, s: &mut State, v: usize, to: usize) {
        let from = s.label[v];
        for &e in &self.incident[v] {
            s.pins[e][from] -= 1;
            s.pins[e][to] += 1;
        }
        s.sizes[from] -= 1;
        s.sizes[to] += 1;
        s.label[v] = to;
    }

    fn seed(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        const UNSET: usize = usize::MAX;
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        order.shuffle(rng);
        order.sort_by_key(|&e| std::cmp::Reverse(self.edges[e].0.len()));
        let mut label = vec![UNSET; self.n];
        let mut sizes = vec![0usize; self.k];
        let smallest = |sizes: &[usize], rng: &mut ChaCha8Rng| {
            let min = *sizes.iter().min().unwrap();
            let candidates: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] == min).collect();
            *candidates.choose(rng).unwrap()
        };
        for e in order {
            let members = self.edges[e].0;
            let mut votes = vec![0usize; self.k];
            for &v in members {
                if label[v] != UNSET {
                    votes[label[v]] += 1;
                }
            }
            let (best, &count) = votes
                .iter()
                .enumerate()
                .max_by_key(|&(c, n)| (*n, std::cmp::Reverse(c)))
                .unwrap();
            let target = if 2 * count >= members.len() && count > 0 {
                best
            } else {
                smallest(&sizes, rng)
            };
            for &v in members {
                if label[v] == UNSET {
                    label[v] = target;
                    sizes[target] += 1;
                }
            }
        }
        let mut loose: Vec<usize> = (0..self.n).filter(|&v| label[v] == UNSET).collect();
        loose.shuffle(rng);
        for v in loose {
            let c = smallest(&sizes, rng);
            label[v] = c;
            sizes[c] += 1;
        }
        // Fill empty clusters from the largest ones.
        while let Some(empty) = (0..self.k).find(|&c| sizes[c] == 0) {
            let largest = (0..self.k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
            let mut members: Vec<usize> = (0..self.n).filter(|&v| label[v] == largest).collect();
            members.shuffle(rng);
            label[members[0]] = empty;
            sizes[largest] -= 1;
            sizes[empty] += 1;
        }
        label
    }

    /// One Fiduccia-Mattheyses pass: move every vertex once, greedily by
    /// best gain, then keep the best prefix. Returns true if it improved.
    fn pass(&self, s: &mut State) -> bool {
        let start = self.objective(s);
        let mut locked = vec![false; self.n];
        let mut moves: Vec<(usize, usize)> = Vec::new();
        let mut current = start;
        let mut best = start;
        let mut best_len = 0;
        loop {
            let mut choice: Option<(f64, usize, usize)> = None;
            for v in 0..self.n {
                if locked[v] || s.sizes[s.label[v]] == 1 {
                    continue;
                }
                for to in 0..self.k {
                    if to == s.label[v] {
                        continue;
                    }
                    let d = self.delta(s, v, to);
                    if choice.is_none_or(|(bd, _, _)| d < bd - 1e-12) {
                        choice = Some((d, v, to));
                    }
                }
            }
            let Some((d, v, to)) = choice else { break };
            moves.push((v, s.label[v]));
            self.apply(s, v, to);
            locked[v] = true;
            current += d;
            if current < best - 1e-12 {
                best = current;
                best_len = moves.len();
            }
        }
        for &(v, from) in moves[best_len..].iter().rev() {
            self.apply(s, v, from);
        }
        best < start - 1e-12
    }

    fn run(&self, seed: u64) -> (Vec<usize>, f64, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.state(self.seed(&mut rng));
        let mut trace = vec![self.objective(&s)];
        while self.pass(&mut s) {
            trace.push(self.objective(&s));
        }
        let j = self.objective(&s);
        (s.label, j, trace)
    }
}

/// Consensus partition of the hypergraph into exactly `c0` nonempty
/// clusters. The objective is the connectivity-minus-one cut plus
/// `0.5 * K * n * sum_c (|c|/n - 1/c0)^2` for `K` subjects and `n` vertices.
/// A single move changes the penalty by less than `K`, so a cluster every
/// subject agrees on is never split for balance alone.
pub fn partition_hypergraph(h: &Hypergraph, c0: usize, seed: u64) -> Result<ConsensusPartition> {
    let n = h.vertices.len();
    if c0 < 1 || c0 > n {
        return Err(Error::InvalidParameter(format!(
            "cluster count {c0} outside 1..={n}"
        )));
    }
    let p = Partitioner::new(h, c0);
    let runs: Vec<(u64, Vec<usize>, f64, Vec<f64>)> = (0..RESTARTS)
        .into_par_iter()
        .map(|r| {
            let s = seed.wrapping_add(r);
            let (label, j, trace) = p.run(s);
            (s, label, j, trace)
        })
        .collect();
    let (best_seed, label, objective, trace) = runs
        .into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    let state = p.state(label.clone());
    let cut = p.cut(&state);
    let mut clusters = vec![Vec::new(); c0];
    for (v, &l) in label.iter().enumerate() {
        clusters[l].push(h.vertices[v].clone());
    }
    clusters.sort_by(|a, b| a[0].cmp(&b[0]));
    let graph = ClusterGraph::new(clusters)?.with_provenance(serde_json::json!({
        "C0": c0,
        "seed0": seed,
        "restarts": RESTARTS,
        "best_seed": best_seed,
        "J": objective,
    }));
    Ok(ConsensusPartition {
        graph,
        objective,
        cut,
        trace,
        seed: best_seed,
    })
}

/// True if no single-vertex move lowers the objective (moves that would
/// empty a cluster are not allowed).
pub fn is_local_minimum(h: &Hypergraph, graph: &ClusterGraph) -> Result<bool> {
    let p = Partitioner::new(h, graph.cluster_count());
    let labels = graph.labels_for(&h.vertices)?;
    let s = p.state(labels);
    for v in 0..p.n {
        if s.sizes[s.label[v]] == 1 {
            continue;
        }
        for to in 0..p.k {
            if to != s.label[v] && p.delta(&s, v, to) < -1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Objective value of an arbitrary partition of the hypergraph's vertices.
pub fn partition_objective(h: &Hypergraph, graph: &ClusterGraph) -> Result<f64> {
    let p = Partitioner::new(h, graph.cluster_count());
    let s = p.state(graph.labels_for(&h.vertices)?);
    Ok(p.objective(&s))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Histograms of cluster counts and cluster sizes over a set of graphs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStats {
    pub cluster_counts: BTreeMap<usize, usize>,
    pub cluster_sizes: BTreeMap<usize, usize>,
}

impl ClusterStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("histogram,value,count\n");
        for (k, v) in &self.cluster_counts {
            out.push_str(&format!("clusters,{k},{v}\n"));
        }
        for (k, v) in &self.cluster_sizes {
            out.push_str(&format!("size,{k},{v}\n"));
        }
        out
    }

    pub fn min_clusters(&self) -> Option<usize> {
        self.cluster_counts.keys().next().copied()
    }

    pub fn max_clusters(&self) -> Option<usize> {
        self.cluster_counts.keys().next_back().copied()
    }
}

pub fn cluster_stats(graphs: &[ClusterGraph]) -> Result<ClusterStats> {
    if graphs.is_empty() {
        return Err(Error::InvalidInput("no cluster graphs".into()));
    }
    let mut stats = ClusterStats {
        cluster_counts: BTreeMap::new(),
        cluster_sizes: BTreeMap::new(),
    };
    for g in graphs {
        *stats.cluster_counts.entry(g.cluster_count()).or_default() += 1;
        for c in &g.clusters {
            *stats.cluster_sizes.entry(c.len()).or_default() += 1;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn stimuli(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    fn annotate(subject: &str, stim: &[String], color: impl Fn(usize) -> String) -> Annotation {
        Annotation {
            subject: subject.into(),
            assignments: stim.iter().enumerate().map(|(i, s)| (s.clone(), color(i))).collect(),
        }
    }

    #[test]
    fn one_color_and_all_colors() {
        let stim = stimuli(78);
        let g = annotation_to_graph(&annotate("a", &stim, |_| "c00".into()), &stim).unwrap();
        assert_eq!(g.cluster_count(), 1);
        assert_eq!(g.clusters[0].len(), 78);
        let g = annotation_to_graph(&annotate("a", &stim, |i| format!("x{i}")), &stim).unwrap();
        assert_eq!(g.cluster_count(), 78);
    }

    #[test]
    fn color_renaming_is_irrelevant() {
        let stim = stimuli(20);
        let a = annotate("a", &stim, |i| format!("c{}", i % 4));
        let b = annotate("a", &stim, |i| format!("z{}", 3 - i % 4));
        assert_eq!(
            annotation_to_graph(&a, &stim).unwrap(),
            annotation_to_graph(&b, &stim).unwrap()
        );
    }

    #[test]
    fn missing_and_duplicate_stimuli_are_rejected() {
        let stim = stimuli(5);
        let mut a = annotate("a", &stim, |_| "c".into());
        a.assignments.remove("s03");
        let err = annotation_to_graph(&a, &stim).unwrap_err().to_string();
        assert!(err.contains("s03"));
        let dup = r#"{"subject":"a","assignments":{"s00":"c","s00":"d"}}"#;
        assert!(serde_json::from_str::<Annotation>(dup).is_err());
    }

    #[test]
    fn hyperedge_count() {
        let stim = stimuli(12);
        let g1 = annotation_to_graph(&annotate("a", &stim, |i| format!("{}", i % 3)), &stim).unwrap();
        let g2 = annotation_to_graph(&annotate("b", &stim, |i| format!("{}", i % 4)), &stim).unwrap();
        let h = build_hypergraph(&[("a".into(), g1.clone()), ("b".into(), g2)]).unwrap();
        assert_eq!(h.edges.len(), 7);
        let other = ClusterGraph::new(vec![stimuli(11)]).unwrap();
        assert!(build_hypergraph(&[("a".into(), g1), ("c".into(), other)]).is_err());
    }

    fn planted(n_clusters: usize, size: usize) -> Vec<Vec<String>> {
        (0..n_clusters)
            .map(|c| (0..size).map(|i| format!("v{:03}", c * size + i)).collect())
            .collect()
    }

    #[test]
    fn single_subject_is_recovered_with_zero_cut() {
        let truth = ClusterGraph::new(vec![
            (0..3).map(|i| format!("a{i}")).collect(),
            (0..9).map(|i| format!("b{i}")).collect(),
            (0..5).map(|i| format!("c{i}")).collect(),
            vec!["d0".into()],
        ])
        .unwrap();
        let h = build_hypergraph(&[("s".into(), truth.clone())]).unwrap();
        let out = partition_hypergraph(&h, 4, 3).unwrap();
        assert_eq!(out.cut, 0.0);
        assert!(out.graph.same_partition(&truth));
    }

    #[test]
    fn identical_partitions_yield_themselves() {
        let truth = ClusterGraph::new(planted(5, 6)).unwrap();
        let graphs: Vec<(String, ClusterGraph)> =
            (0..7).map(|k| (format!("s{k}"), truth.clone())).collect();
        let h = build_hypergraph(&graphs).unwrap();
        assert_eq!(h.edges.len(), 35);
        let out = partition_hypergraph(&h, 5, 0).unwrap();
        assert!(out.graph.same_partition(&truth));
        assert!(is_local_minimum(&h, &out.graph).unwrap());
    }

    #[test]
    fn objective_trace_is_monotone_and_result_is_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stim = stimuli(40);
        let graphs: Vec<(String, ClusterGraph)> = (0..6)
            .map(|k| {
                let c = rng.random_range(2..8);
                let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..c)).collect();
                let a = annotate(&format!("s{k}"), &stim, |i| format!("c{}", labels[i]));
                (a.subject.clone(), annotation_to_graph(&a, &stim).unwrap())
            })
            .collect();
        let h = build_hypergraph(&graphs).unwrap();
        let out = partition_hypergraph(&h, 7, 5).unwrap();
        assert_eq!(out.graph.cluster_count(), 7);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(is_local_minimum(&h, &out.graph).unwrap());
        let again = partition_hypergraph(&h, 7, 5).unwrap();
        assert_eq!(again.graph, out.graph);
        assert!((partition_objective(&h, &out.graph).unwrap() - out.objective).abs() < 1e-9);
        assert!(partition_hypergraph(&h, 0, 1).is_err());
        assert!(partition_hypergraph(&h, 41, 1).is_err());
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        // Classic example: ARI of these two labelings is 0.24242...
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &b) - 0.242_424_242_424).abs() < 1e-9);
    }

    #[test]
    fn stats_histograms() {
        let g = ClusterGraph::new(vec![stimuli(78)]).unwrap();
        let s = cluster_stats(&[g]).unwrap();
        assert_eq!(s.cluster_sizes, BTreeMap::from([(78, 1)]));
        assert_eq!(s.min_clusters(), Some(1));
        assert!(s.to_csv().contains("size,78,1"));
        assert!(cluster_stats(&[]).is_err());
    }

    #[test]
    fn graph_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = ClusterGraph::new(planted(3, 4))
            .unwrap()
            .with_provenance(serde_json::json!({"C0": 3}));
        let path = dir.path().join("g.json");
        g.write(&path).unwrap();
        assert_eq!(ClusterGraph::read(&path).unwrap(), g);
        std::fs::write(&path, r#"{"clusters": [["a"], ["a"]]}"#).unwrap();
        assert!(ClusterGraph::read(&path).is_err());
    }
}
