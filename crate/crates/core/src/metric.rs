//! Large-margin nearest-neighbor metric learning.

use std::path::Path;
use std::sync::{Arc, Mutex};

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, State, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::LmnnConfig;
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::format;

const METRIC_MAGIC: &[u8; 4] = b"SCL1";

/// Fixed Euclidean target neighbors, as row indices of the store they were
/// built from. Rows are sorted by clip id, so index order is id order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    pub neighbors: Vec<Vec<usize>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Indices of the `k` smallest entries of `d` (excluding `skip`), ordered by
/// distance then index.
fn smallest(d: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len()).filter(|&j| keep(j)).collect();
    let cmp = |a: &usize, b: &usize| d[*a].total_cmp(&d[*b]).then(a.cmp(b));
    if idx.len() > k {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

pub fn target_neighbors(store: &FeatureStore, r: usize) -> Result<NeighborIndex> {
    if r == 0 {
        return Err(Error::InvalidParameter("need at least one target neighbor".into()));
    }
    let n = store.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least two samples, got {n}")));
    }
    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = store.row(i);
            let d: Vec<f64> = (0..n).map(|j| sq_dist(x, store.row(j))).collect();
            smallest(&d, r.min(n - 1), |j| j != i)
        })
        .collect();
    Ok(NeighborIndex { neighbors })
}

/// Number of (anchor, target, impostor-candidate) triplets: every target
/// neighbor paired with every sample of another cluster.
pub fn count_triplets(labels: &[usize], nbrs: &NeighborIndex) -> usize {
    nbrs.neighbors
        .iter()
        .enumerate()
        .map(|(i, ys)| ys.len() * labels.iter().filter(|&&c| c != labels[i]).count())
        .sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub graph: String,
    pub neighbors: usize,
    pub samples: usize,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<f64>,
    pub seed: u64,
    pub identity: bool,
}

/// The learned `P x P` map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    pub fingerprint: String,
    pub dimension: usize,
    pub values: Vec<f64>,
    pub provenance: TrainingProvenance,
}

#[derive(Serialize, Deserialize)]
struct MetricHeader {
    #[serde(rename = "P")]
    dimension: usize,
    fingerprint: String,
    provenance: TrainingProvenance,
}

impl MetricMatrix {
    pub fn identity(fingerprint: impl Into<String>, p: usize) -> Self {
        let mut values = vec![0.0; p * p];
        for i in 0..p {
            values[i * p + i] = 1.0;
        }
        MetricMatrix {
            fingerprint: fingerprint.into(),
            dimension: p,
            values,
            provenance: TrainingProvenance {
                identity: true,
                ..Default::default()
            },
        }
    }

    pub fn from_array(fingerprint: impl Into<String>, l: &Array2<f64>) -> Self {
        MetricMatrix {
            fingerprint: fingerprint.into(),
            dimension: l.nrows(),
            values: l.iter().copied().collect(),
            provenance: TrainingProvenance::default(),
        }
    }

    pub fn array(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.dimension, self.dimension), &self.values).expect("square")
    }

    pub fn is_identity(&self) -> bool {
        let p = self.dimension;
        self.values
            .iter()
            .enumerate()
            .all(|(k, &v)| v == if k / p == k % p { 1.0 } else { 0.0 })
    }

    pub fn check_dimension(&self, p: usize) -> Result<()> {
        if p == self.dimension {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: p,
            })
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dimension(x.len())?;
        Ok(self
            .values
            .chunks_exact(self.dimension)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Every store row mapped through `L`, row-major.
    pub fn project(&self, store: &FeatureStore) -> Result<Vec<f64>> {
        self.check_dimension(store.dimension())?;
        if self.is_identity() {
            return Ok(store.values.clone());
        }
        let x = ArrayView2::from_shape((store.len(), store.dimension()), &store.values).expect("row-major");
        Ok(x.dot(&self.array().t()).iter().copied().collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        format::write(path, METRIC_MAGIC, &self.header(), &self.values)
    }

    fn header(&self) -> MetricHeader {
        MetricHeader {
            dimension: self.dimension,
            fingerprint: self.fingerprint.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, values): (MetricHeader, Vec<f64>) = format::read(path, METRIC_MAGIC)?;
        if values.len() != h.dimension * h.dimension {
            return Err(Error::Format("metric payload is not P x P".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("metric has non-finite entries".into()));
        }
        Ok(MetricMatrix {
            fingerprint: h.fingerprint,
            dimension: h.dimension,
            values,
            provenance: h.provenance,
        })
    }
}

pub fn metric_distance(l: &MetricMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(l.apply(&d)?.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Loss terms at one `L`, plus the pair weights that define its gradient.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub pull: f64,
    pub push: f64,
    pub active: usize,
    /// `(i, j, w)`: the gradient is `2 L sum w (x_i - x_j)(x_i - x_j)^T`.
    pairs: Vec<(usize, usize, f64)>,
}

/// Training problem: standardized rows, cluster labels and frozen targets.
pub struct Lmnn<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    nbrs: &'a NeighborIndex,
    margin: f64,
    negative_cap: Option<usize>,
}

impl<'a> Lmnn<'a> {
    pub fn new(
        store: &'a FeatureStore,
        labels: &'a [usize],
        nbrs: &'a NeighborIndex,
        cfg: &LmnnConfig,
    ) -> Result<Self> {
        let n = store.len();
        if labels.len() != n || nbrs.neighbors.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} samples but {} labels and {} neighbor lists",
                labels.len(),
                nbrs.neighbors.len()
            )));
        }
        let x = ArrayView2::from_shape((n, store.dimension()), &store.values).expect("row-major");
        Ok(Lmnn {
            x,
            labels,
            nbrs,
            margin: cfg.margin,
            negative_cap: (n >= cfg.exact_below).then_some(cfg.negative_cap),
        })
    }

    pub fn dimension(&self) -> usize {
        self.x.ncols()
    }

    pub fn objective(&self, l: &Array2<f64>) -> Objective {
        let z = self.x.dot(&l.t());
        let n = z.nrows();
        let zrow = |i: usize| z.row(i);
        let d = |i: usize, j: usize| {
            zrow(i)
                .iter()
                .zip(zrow(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let per_anchor: Vec<(f64, f64, usize, Vec<(usize, usize, f64)>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let targets = &self.nbrs.neighbors[i];
                let dt: Vec<f64> = targets.iter().map(|&j| d(i, j)).collect();
                let mut negatives: Vec<usize> = (0..n).filter(|&k| self.labels[k] != self.labels[i]).collect();
                let dall: Vec<f64> = (0..n)
                    .map(|k| if self.labels[k] != self.labels[i] { d(i, k) } else { 0.0 })
                    .collect();
                if let Some(cap) = self.negative_cap {
                    let neg = negatives.clone();
                    negatives = smallest(&dall, cap, |k| neg.binary_search(&k).is_ok());
                }
                let pull: f64 = dt.iter().sum();
                let mut push = 0.0;
                let mut active = 0;
                let mut per_target = vec![0usize; targets.len()];
                let mut per_negative = vec![0usize; negatives.len()];
                for (t, &dij) in dt.iter().enumerate() {
                    for (m, &k) in negatives.iter().enumerate() {
                        let h = self.margin + dij - dall[k];
                        if h > 0.0 {
                            push += h;
                            active += 1;
                            per_target[t] += 1;
                            per_negative[m] += 1;
                        }
                    }
                }
                let mut pairs = Vec::with_capacity(targets.len() + active.min(negatives.len()));
                for (t, &j) in targets.iter().enumerate() {
                    pairs.push((i, j, 0.5 * (1 + per_target[t]) as f64));
                }
                for (m, &k) in negatives.iter().enumerate() {
                    if per_negative[m] > 0 {
                        pairs.push((i, k, -0.5 * per_negative[m] as f64));
                    }
                }
                (pull, push, active, pairs)
            })
            .collect();
        let mut obj = Objective {
            loss: 0.0,
            pull: 0.0,
            push: 0.0,
            active: 0,
            pairs: Vec::new(),
        };
        for (pull, push, active, pairs) in per_anchor {
            obj.pull += pull;
            obj.push += push;
            obj.active += active;
            obj.pairs.extend(pairs);
        }
        obj.loss = 0.5 * obj.pull + 0.5 * obj.push;
        obj
    }

    /// `dE/dL = 2 (X L^T)^T A X`, where `A X` gathers the weighted pair
    /// differences.
    pub fn gradient(&self, l: &Array2<f64>, obj: &Objective) -> Array2<f64> {
        let (n, p) = self.x.dim();
        let mut ax = Array2::<f64>::zeros((n, p));
        for &(i, j, w) in &obj.pairs {
            for c in 0..p {
                let diff = w * (self.x[[i, c]] - self.x[[j, c]]);
                ax[[i, c]] += diff;
                ax[[j, c]] -= diff;
            }
        }
        let z = self.x.dot(&l.t());
        z.t().dot(&ax) * 2.0
    }
}

struct Problem<'a, 'b> {
    lmnn: &'b Lmnn<'a>,
    p: usize,
}

impl Problem<'_, '_> {
    fn matrix(&self, v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((self.p, self.p), v.to_vec()).expect("P x P")
    }
}

impl CostFunction for Problem<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.lmnn.objective(&self.matrix(v)).loss)
    }
}

impl Gradient for Problem<'_, '_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, v: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let l = self.matrix(v);
        let obj = self.lmnn.objective(&l);
        Ok(self.lmnn.gradient(&l, &obj).into_raw_vec_and_offset().0)
    }
}

#[derive(Clone, Default)]
struct Trace(Arc<Mutex<Vec<f64>>>);

impl<I: State<Float = f64>> Observe<I> for Trace {
    fn observe_iter(&mut self, state: &I, _kv: &KV) -> std::result::Result<(), argmin::core::Error> {
        self.0.lock().expect("trace lock").push(state.get_cost());
        Ok(())
    }
}

/// L-BFGS from the identity with a More-Thuente line search, whose
/// sufficient-decrease condition keeps the loss trace non-increasing.
pub fn train_lmnn(
    store: &FeatureStore,
    labels: &[usize],
    graph_name: &str,
    cfg: &LmnnConfig,
) -> Result<MetricMatrix> {
    let nbrs = target_neighbors(store, cfg.neighbors)?;
    let lmnn = Lmnn::new(store, labels, &nbrs, cfg)?;
    let p = lmnn.dimension();
    let eye = Array2::<f64>::eye(p);
    let initial = lmnn.objective(&eye).loss;
    if !initial.is_finite() {
        return Err(Error::Numeric(format!("initial LMNN loss is {initial}")));
    }
    let mut l = eye;
    let mut trace = vec![initial];
    let mut iterations = 0;
    if initial > 0.0 && cfg.max_iterations > 0 {
        let numeric = |e: argmin::core::Error| Error::Numeric(format!("LMNN: {e}"));
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), cfg.memory)
            .with_tolerance_cost(cfg.tolerance * initial)
            .map_err(numeric)?;
        let observer = Trace::default();
        let res = Executor::new(Problem { lmnn: &lmnn, p }, solver)
            .configure(|s| s.param(l.iter().copied().collect()).max_iters(cfg.max_iterations as u64))
            .add_observer(observer.clone(), ObserverMode::Always)
            .run()
            .map_err(numeric)?;
        let state = res.state();
        iterations = state.get_iter() as usize;
        let best = state
            .get_best_param()
            .ok_or_else(|| Error::Numeric("LMNN returned no parameters".into()))?;
        if best.iter().any(|v| !v.is_finite()) || !state.get_best_cost().is_finite() {
            return Err(Error::Numeric(format!("LMNN diverged (loss {})", state.get_best_cost())));
        }
        l = Array2::from_shape_vec((p, p), best.clone()).expect("P x P");
        trace.extend(observer.0.lock().expect("trace lock").iter().copied());
        log::debug!("lmnn: {iterations} iterations, {:?}", state.get_termination_reason());
    }
    let final_loss = lmnn.objective(&l).loss;
    let mut m = MetricMatrix::from_array(store.fingerprint.clone(), &l);
    m.provenance = TrainingProvenance {
        graph: graph_name.to_string(),
        neighbors: cfg.neighbors,
        samples: store.len(),
        iterations,
        initial_loss: initial,
        final_loss,
        trace,
        seed: cfg.seed,
        identity: false,
    };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn store_from(rows: Vec<Vec<f64>>) -> FeatureStore {
        let p = rows[0].len();
        FeatureStore::new(
            "fp",
            (0..p).map(|j| format!("p{j}")).collect(),
            rows.into_iter().enumerate().map(|(i, r)| (format!("s{i:04}"), r)).collect(),
        )
        .unwrap()
    }

    fn gaussian_clusters(centers: &[Vec<f64>], per: usize, spread: f64, seed: u64) -> (FeatureStore, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(
                    center
                        .iter()
                        .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
                labels.push(c);
            }
        }
        (store_from(rows), labels)
    }

    fn ap_at(store: &FeatureStore, labels: &[usize], l: &MetricMatrix, r: usize) -> f64 {
        let z = l.project(store).unwrap();
        let p = store.dimension();
        let n = store.len();
        let mut total = 0.0;
        for i in 0..n {
            let d: Vec<f64> = (0..n).map(|j| sq_dist(&z[i * p..(i + 1) * p], &z[j * p..(j + 1) * p])).collect();
            let hits = smallest(&d, r, |j| j != i).iter().filter(|&&j| labels[j] == labels[i]).count();
            total += hits as f64 / r as f64;
        }
        total / n as f64
    }

    #[test]
    fn collinear_neighbors() {
        let s = store_from(vec![vec![0.0], vec![1.0], vec![3.0]]);
        let nb = target_neighbors(&s, 1).unwrap();
        assert_eq!(nb.neighbors, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn neighbors_are_not_symmetric() {
        let s = store_from(vec![vec![0.0], vec![1.0], vec![1.9], vec![10.0]]);
        let nb = target_neighbors(&s, 1).unwrap();
        assert_eq!(nb.neighbors, vec![vec![1], vec![2], vec![1], vec![2]]);
        assert!(!nb.neighbors[1].contains(&0));
    }

    #[test]
    fn ties_go_to_the_smaller_id() {
        let s = store_from(vec![vec![-1.0], vec![0.0], vec![1.0]]);
        assert_eq!(target_neighbors(&s, 1).unwrap().neighbors[1], vec![0]);
        assert!(target_neighbors(&store_from(vec![vec![0.0]]), 1).is_err());
    }

    #[test]
    fn neighbors_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = store_from(rows.clone());
        let nb = target_neighbors(&s, 5).unwrap();
        for i in 0..200 {
            let mut all: Vec<(f64, usize)> = (0..200)
                .filter(|&j| j != i)
                .map(|j| (rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum(), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = all[..5].iter().map(|t| t.1).collect();
            assert_eq!(nb.neighbors[i], expect);
        }
    }

    #[test]
    fn triplet_count_matches_enumeration() {
        let (s, labels) = gaussian_clusters(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], 15, 0.5, 2);
        let nb = target_neighbors(&s, 5).unwrap();
        let mut brute = 0;
        for x in 0..45 {
            for y in 0..45 {
                for z in 0..45 {
                    if nb.neighbors[x].contains(&y) && labels[z] != labels[x] {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(count_triplets(&labels, &nb), brute);
        let cfg = LmnnConfig::default();
        let obj = Lmnn::new(&s, &labels, &nb, &cfg).unwrap().objective(&Array2::zeros((2, 2)));
        assert_eq!(obj.pull, 0.0);
        assert_eq!(obj.active, brute);
        assert_eq!(obj.loss, 0.5 * brute as f64);
    }

    #[test]
    fn one_cluster_has_no_push() {
        let (s, _) = gaussian_clusters(&[vec![0.0; 3]], 12, 1.0, 3);
        let labels = vec![0; 12];
        let nb = target_neighbors(&s, 3).unwrap();
        let obj = Lmnn::new(&s, &labels, &nb, &LmnnConfig::default()).unwrap().objective(&Array2::eye(3));
        assert_eq!(obj.push, 0.0);
        assert!(obj.pull > 0.0);
    }

    fn finite_difference_error(seed: u64) -> f64 {
        let (s, labels) = gaussian_clusters(&[vec![0.0; 4], vec![0.8; 4]], 10, 0.7, seed);
        let nb = target_neighbors(&s, 3).unwrap();
        let cfg = LmnnConfig::default();
        let prob = Lmnn::new(&s, &labels, &nb, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let l = Array2::from_shape_fn((4, 4), |(i, j)| {
            (if i == j { 1.0 } else { 0.0 }) + 0.3 * rng.random_range(-1.0..1.0)
        });
        let obj = prob.objective(&l);
        let g = prob.gradient(&l, &obj);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let mut lp = l.clone();
                lp[[a, b]] += h;
                let mut lm = l.clone();
                lm[[a, b]] -= h;
                let (op, om) = (prob.objective(&lp), prob.objective(&lm));
                // Skip coordinates where the active set changes inside the stencil.
                if op.active != obj.active || om.active != obj.active {
                    continue;
                }
                let fd = (op.loss - om.loss) / (2.0 * h);
                worst = worst.max((fd - g[[a, b]]).abs() / g[[a, b]].abs().max(1e-3));
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = finite_difference_error(4);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn training_separates_planted_clusters() {
        let (s, labels) = gaussian_clusters(&[vec![0.0; 10], vec![2.0; 10]], 20, 1.0, 5);
        let cfg = LmnnConfig::default();
        let m = train_lmnn(&s, &labels, "planted", &cfg).unwrap();
        let t = &m.provenance.trace;
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.provenance.final_loss <= m.provenance.initial_loss);
        assert_eq!(ap_at(&s, &labels, &m, 5), 1.0);
    }

    #[test]
    fn separated_data_stays_put() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..6 {
                rows.push(vec![10.0 * c as f64, 0.0]);
                labels.push(c);
            }
        }
        let s = store_from(rows);
        let m = train_lmnn(&s, &labels, "sep", &LmnnConfig::default()).unwrap();
        assert!(m.provenance.iterations <= 5);
        assert_eq!(ap_at(&s, &labels, &m, 5), 1.0);
    }

    #[test]
    fn noise_dimensions_are_downweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0), (8.0, 8.0)];
        for (c, &(a, b)) in centers.iter().enumerate() {
            for _ in 0..15 {
                let mut r = vec![a + 0.3 * rng.sample::<f64, _>(StandardNormal), b + 0.3 * rng.sample::<f64, _>(StandardNormal)];
                r.extend((0..48).map(|_| rng.sample::<f64, _>(StandardNormal)));
                rows.push(r);
                labels.push(c);
            }
        }
        let s = store_from(rows);
        let m = train_lmnn(&s, &labels, "noise", &LmnnConfig::default()).unwrap();
        let l = m.array();
        let col = |j: usize| l.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        let info = (col(0) + col(1)) / 2.0;
        let noise = (2..50).map(col).sum::<f64>() / 48.0;
        assert!(noise < 0.5 * info, "noise {noise} info {info}");
    }

    #[test]
    fn scaling_l_keeps_rankings() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = store_from(rows);
        let l = Array2::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
        let a = MetricMatrix::from_array("fp", &l);
        let b = MetricMatrix::from_array("fp", &(&l * 2.0));
        for i in 0..30 {
            let rank = |m: &MetricMatrix| {
                let d: Vec<f64> = (0..30).map(|j| metric_distance(m, s.row(i), s.row(j)).unwrap()).collect();
                smallest(&d, 29, |j| j != i)
            };
            assert_eq!(rank(&a), rank(&b));
            let d1 = metric_distance(&a, s.row(i), s.row(0)).unwrap();
            let d2 = metric_distance(&b, s.row(i), s.row(0)).unwrap();
            assert!((d2 - 2.0 * d1).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = Array2::from_shape_fn((5, 5), |_| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut direct = 0.0;
        for r in 0..5 {
            let v: f64 = (0..5).map(|c| l[[r, c]] * (x[c] - y[c])).sum();
            direct += v * v;
        }
        let m = MetricMatrix::from_array("fp", &l);
        assert!((metric_distance(&m, &x, &y).unwrap() - direct.sqrt()).abs() < 1e-12);
        let id = MetricMatrix::identity("fp", 5);
        let eu = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((metric_distance(&id, &x, &y).unwrap() - eu).abs() < 1e-15);
        assert!(metric_distance(&id, &x, &y[..4]).is_err());
    }

    #[test]
    fn metric_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (s, labels) = gaussian_clusters(&[vec![0.0; 3], vec![2.0; 3]], 8, 1.0, 9);
        let m = train_lmnn(&s, &labels, "g", &LmnnConfig::default()).unwrap();
        let path = dir.path().join("m.scl");
        m.write(&path).unwrap();
        assert_eq!(MetricMatrix::read(&path).unwrap(), m);
    }
}
