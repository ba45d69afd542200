//! Feature stores and the median-log Gaussianizer.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::check_fingerprint;
use crate::error::{Error, Result};
use crate::format;

const STORE_MAGIC: &[u8; 4] = b"SCF1";
const GAUSSIANIZER_MAGIC: &[u8; 4] = b"SCG1";
/// Standard deviations are floored here so constant columns stay finite.
pub const STD_FLOOR: f64 = 1e-12;

/// Row-major matrix of clip features, rows sorted by clip id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub fingerprint: String,
    pub paths: Vec<String>,
    pub ids: Vec<String>,
    pub values: Vec<f64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    fingerprint: String,
    paths: Vec<String>,
    ids: Vec<String>,
    rows: usize,
    dimension: usize,
}

impl FeatureStore {
    pub fn new(
        fingerprint: impl Into<String>,
        paths: Vec<String>,
        mut rows: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let p = paths.len();
        if let Some((id, r)) = rows.iter().find(|(_, r)| r.len() != p) {
            return Err(Error::InvalidInput(format!(
                "row {id:?} has {} values for {p} paths",
                r.len()
            )));
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput(format!("duplicate row id {:?}", w[0].0)));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * p);
        for (id, r) in rows {
            ids.push(id);
            values.extend(r);
        }
        Ok(Self::from_parts(fingerprint.into(), paths, ids, values))
    }

    fn from_parts(fingerprint: String, paths: Vec<String>, ids: Vec<String>, values: Vec<f64>) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        FeatureStore {
            fingerprint,
            paths,
            ids,
            values,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.paths.len()
    }

    /// Clip ids in row order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dimension();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row_by_id(&self, id: &str) -> Result<&[f64]> {
        self.position(id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dimension().max(1)).take(self.len())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Rows for `ids` (in sorted order); unknown ids are an error.
    pub fn subset(&self, ids: &[String]) -> Result<FeatureStore> {
        let rows = ids
            .iter()
            .map(|id| Ok((id.clone(), self.row_by_id(id)?.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        FeatureStore::new(self.fingerprint.clone(), self.paths.clone(), rows)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        format::encode(STORE_MAGIC, &self.header(), &self.values)
    }

    fn header(&self) -> StoreHeader {
        StoreHeader {
            fingerprint: self.fingerprint.clone(),
            paths: self.paths.clone(),
            ids: self.ids.clone(),
            rows: self.len(),
            dimension: self.dimension(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        format::write(path, STORE_MAGIC, &self.header(), &self.values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, values): (StoreHeader, Vec<f64>) = format::read(path, STORE_MAGIC)?;
        Self::from_header(h, values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values): (StoreHeader, Vec<f64>) = format::decode(STORE_MAGIC, bytes)?;
        Self::from_header(h, values)
    }

    fn from_header(h: StoreHeader, values: Vec<f64>) -> Result<Self> {
        if h.paths.len() != h.dimension || h.ids.len() != h.rows || values.len() != h.rows * h.dimension {
            return Err(Error::Format("feature store header disagrees with its payload".into()));
        }
        if h.ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("feature store rows are not sorted by unique id".into()));
        }
        Ok(Self::from_parts(h.fingerprint, h.paths, h.ids, values))
    }
}

/// Per-path median-log compression followed by standardization, with all
/// statistics taken from a training store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussianizer {
    pub fingerprint: String,
    pub paths: Vec<String>,
    pub epsilon: f64,
    /// When false the map is plain standardization (used for features that
    /// can be negative, such as MFCCs).
    pub log_compression: bool,
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Paths whose training median is zero while some value is not; they
    /// are mapped to zero.
    pub zeroed: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GaussianizerHeader {
    fingerprint: String,
    paths: Vec<String>,
    epsilon: f64,
    log_compression: bool,
    zeroed: Vec<usize>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Gaussianizer {
    pub fn fit(train: &FeatureStore, epsilon: f64, log_compression: bool) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if train.is_empty() {
            return Err(Error::InvalidInput("cannot fit a Gaussianizer on an empty store".into()));
        }
        let p = train.dimension();
        let columns: Vec<Vec<f64>> = (0..p).into_par_iter().map(|j| train.column(j)).collect();
        let medians: Vec<f64> = columns.iter().map(|c| median(c)).collect();
        let mut g = Gaussianizer {
            fingerprint: train.fingerprint.clone(),
            paths: train.paths.clone(),
            epsilon,
            log_compression,
            medians,
            means: vec![0.0; p],
            stds: vec![1.0; p],
            zeroed: Vec::new(),
        };
        if log_compression {
            if let Some(j) = (0..p).find(|&j| g.medians[j] < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "path {} has a negative median; log compression needs nonnegative features",
                    g.paths[j]
                )));
            }
            for (j, col) in columns.iter().enumerate() {
                if g.medians[j] == 0.0 && col.iter().any(|&v| v != 0.0) {
                    log::warn!("path {} has a zero median on the training set; it is zeroed", g.paths[j]);
                    g.zeroed.push(j);
                }
            }
        }
        let n = train.len() as f64;
        for (j, col) in columns.iter().enumerate() {
            let t: Vec<f64> = col.iter().map(|&v| g.compress(j, v)).collect();
            let mean = t.iter().sum::<f64>() / n;
            let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            g.means[j] = mean;
            g.stds[j] = var.sqrt().max(STD_FLOOR);
        }
        Ok(g)
    }

    #[inline]
    fn compress(&self, j: usize, v: f64) -> f64 {
        if !self.log_compression {
            v
        } else if self.medians[j] > 0.0 {
            (v / (self.epsilon * self.medians[j])).ln_1p()
        } else {
            0.0
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.paths.len() {
            return Err(Error::DimensionMismatch {
                expected: self.paths.len(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &v)| (self.compress(j, v) - self.means[j]) / self.stds[j])
            .collect())
    }

    pub fn apply(&self, store: &FeatureStore) -> Result<FeatureStore> {
        check_fingerprint(&self.fingerprint, &store.fingerprint)?;
        if store.paths != self.paths {
            return Err(Error::InvalidInput("store and Gaussianizer path lists differ".into()));
        }
        let p = store.dimension();
        let values: Vec<f64> = store
            .values
            .par_chunks(p.max(1))
            .map(|r| self.apply_row(r).expect("dimension checked"))
            .flatten()
            .collect();
        Ok(FeatureStore::from_parts(
            store.fingerprint.clone(),
            store.paths.clone(),
            store.ids.clone(),
            values,
        ))
    }

    /// Lipschitz constant of the map: `max_p 1 / (eps mu(p) std(p))` with
    /// log compression, `max_p 1 / std(p)` without.
    pub fn lipschitz(&self) -> f64 {
        (0..self.paths.len())
            .filter(|j| !self.zeroed.contains(j))
            .map(|j| {
                if !self.log_compression {
                    1.0 / self.stds[j]
                } else if self.medians[j] > 0.0 {
                    1.0 / (self.epsilon * self.medians[j] * self.stds[j])
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    fn header(&self) -> GaussianizerHeader {
        GaussianizerHeader {
            fingerprint: self.fingerprint.clone(),
            paths: self.paths.clone(),
            epsilon: self.epsilon,
            log_compression: self.log_compression,
            zeroed: self.zeroed.clone(),
        }
    }

    fn payload(&self) -> Vec<f64> {
        let mut v = self.medians.clone();
        v.extend(&self.means);
        v.extend(&self.stds);
        v
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        format::write(path, GAUSSIANIZER_MAGIC, &self.header(), &self.payload())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, v): (GaussianizerHeader, Vec<f64>) = format::read(path, GAUSSIANIZER_MAGIC)?;
        let p = h.paths.len();
        if v.len() != 3 * p {
            return Err(Error::Format("Gaussianizer payload size disagrees with its header".into()));
        }
        Ok(Gaussianizer {
            fingerprint: h.fingerprint,
            paths: h.paths,
            epsilon: h.epsilon,
            log_compression: h.log_compression,
            medians: v[..p].to_vec(),
            means: v[p..2 * p].to_vec(),
            stds: v[2 * p..].to_vec(),
            zeroed: h.zeroed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal};

    fn store(rows: Vec<Vec<f64>>) -> FeatureStore {
        let p = rows[0].len();
        FeatureStore::new(
            "fp",
            (0..p).map(|j| format!("p{j}")).collect(),
            rows.into_iter().enumerate().map(|(i, r)| (format!("r{i:03}"), r)).collect(),
        )
        .unwrap()
    }

    fn lognormal_store(n: usize, p: usize, seed: u64) -> FeatureStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                (0..p)
                    .map(|j| LogNormal::new(j as f64 * 0.1 - 2.0, 1.0).unwrap().sample(&mut rng))
                    .collect()
            })
            .collect();
        store(rows)
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn constant_column_maps_to_log_two() {
        let s = store(vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]]);
        let g = Gaussianizer::fit(&s, 1.0, true).unwrap();
        assert_eq!(g.medians, vec![5.0, 2.0]);
        assert!((g.means[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g.stds[0], STD_FLOOR);
        // A row sitting at every median compresses to log 2 before centering.
        let t = g.apply_row(&[5.0, 2.0]).unwrap();
        assert!((t[1] * g.stds[1] + g.means[1] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn training_columns_are_standardized() {
        let s = lognormal_store(200, 30, 1);
        let g = Gaussianizer::fit(&s, 1.0, true).unwrap();
        let t = g.apply(&s).unwrap();
        for j in 0..t.dimension() {
            let c = t.column(j);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6);
        }
    }

    fn skewness(c: &[f64]) -> f64 {
        let n = c.len() as f64;
        let m = c.iter().sum::<f64>() / n;
        let m2 = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = c.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        m3 / m2.powf(1.5)
    }

    #[test]
    fn compression_reduces_skewness() {
        let s = lognormal_store(500, 100, 2);
        let t = Gaussianizer::fit(&s, 1.0, true).unwrap().apply(&s).unwrap();
        let better = (0..100)
            .filter(|&j| skewness(&t.column(j)).abs() < skewness(&s.column(j)).abs())
            .count();
        assert!(better >= 80, "{better}");
    }

    #[test]
    fn nonexpansive_with_stated_constant() {
        let s = lognormal_store(100, 20, 3);
        let g = Gaussianizer::fit(&s, 1.0, true).unwrap();
        let c = g.lipschitz();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (i, k) = (rng.random_range(0..100), rng.random_range(0..100));
            let (x, y) = (s.row(i), s.row(k));
            let (tx, ty) = (g.apply_row(x).unwrap(), g.apply_row(y).unwrap());
            let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            assert!(d(&tx, &ty) <= c * d(x, y) + 1e-12);
        }
    }

    #[test]
    fn monotone_per_path() {
        let s = lognormal_store(50, 5, 5);
        let g = Gaussianizer::fit(&s, 0.5, true).unwrap();
        let lo = g.apply_row(&[0.1; 5]).unwrap();
        let hi = g.apply_row(&[0.2; 5]).unwrap();
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
    }

    #[test]
    fn zero_median_paths_are_zeroed() {
        let s = store(vec![vec![0.0, 1.0], vec![0.0, 2.0], vec![3.0, 3.0]]);
        let g = Gaussianizer::fit(&s, 1.0, true).unwrap();
        assert_eq!(g.zeroed, vec![0]);
        let t = g.apply(&s).unwrap();
        assert!(t.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_epsilon_and_mismatches() {
        let s = lognormal_store(10, 3, 6);
        assert!(Gaussianizer::fit(&s, 0.0, true).is_err());
        let g = Gaussianizer::fit(&s, 1.0, true).unwrap();
        let mut other = lognormal_store(10, 3, 6);
        other.fingerprint = "different".into();
        assert!(matches!(g.apply(&other), Err(Error::FingerprintMismatch { .. })));
        assert!(g.apply_row(&[1.0]).is_err());
    }

    #[test]
    fn without_log_it_only_standardizes() {
        let s = store(vec![vec![-1.0], vec![1.0]]);
        let g = Gaussianizer::fit(&s, 1.0, false).unwrap();
        assert_eq!(g.apply_row(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(g.lipschitz(), 1.0);
    }

    #[test]
    fn files_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = lognormal_store(7, 4, 7);
        s.write(&dir.path().join("s.scf")).unwrap();
        assert_eq!(FeatureStore::read(&dir.path().join("s.scf")).unwrap(), s);
        let g = Gaussianizer::fit(&s, 1.0, true).unwrap();
        g.write(&dir.path().join("g.scg")).unwrap();
        assert_eq!(Gaussianizer::read(&dir.path().join("g.scg")).unwrap(), g);
        assert!(Gaussianizer::read(&dir.path().join("s.scf")).is_err());
    }

    #[test]
    fn rows_sorted_and_unique() {
        let s = FeatureStore::new("f", vec!["a".into()], vec![("b".into(), vec![2.0]), ("a".into(), vec![1.0])]).unwrap();
        assert_eq!(s.ids, vec!["a", "b"]);
        assert_eq!(s.row_by_id("b").unwrap(), &[2.0]);
        assert!(FeatureStore::new("f", vec!["a".into()], vec![("a".into(), vec![1.0]), ("a".into(), vec![1.0])]).is_err());
        assert!(FeatureStore::new("f", vec!["a".into()], vec![("a".into(), vec![1.0, 2.0])]).is_err());
    }
}
