//! Exact nearest-neighbor queries under a learned metric and the
//! precision-at-rank evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::check_fingerprint;
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::metric::MetricMatrix;
use crate::perceptual::ClusterGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    /// Stored clip id, or `None` for an external row.
    pub query: Option<String>,
    pub results: Vec<Neighbor>,
}

/// A store projected once through `L`; every query is an exact scan.
pub struct SearchIndex<'a> {
    store: &'a FeatureStore,
    metric: &'a MetricMatrix,
    projected: Vec<f64>,
}

impl<'a> SearchIndex<'a> {
    pub fn new(store: &'a FeatureStore, metric: &'a MetricMatrix) -> Result<Self> {
        check_fingerprint(&metric.fingerprint, &store.fingerprint)?;
        let projected = metric.project(store)?;
        Ok(SearchIndex {
            store,
            metric,
            projected,
        })
    }

    pub fn store(&self) -> &FeatureStore {
        self.store
    }

    fn projected_row(&self, i: usize) -> &[f64] {
        let p = self.metric.dimension;
        &self.projected[i * p..(i + 1) * p]
    }

    /// Indices and squared distances of the `r` closest rows to `z`, ties
    /// broken by id (row order).
    fn top(&self, z: &[f64], r: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = (0..self.store.len())
            .filter(|&j| Some(j) != skip)
            .map(|j| {
                let dist = self
                    .projected_row(j)
                    .iter()
                    .zip(z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (j, dist)
            })
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if d.len() > r {
            d.select_nth_unstable_by(r, cmp);
            d.truncate(r);
        }
        d.sort_by(cmp);
        d
    }

    fn ranked(&self, query: Option<String>, top: Vec<(usize, f64)>) -> RankedResult {
        RankedResult {
            query,
            results: top
                .into_iter()
                .map(|(j, d)| Neighbor {
                    id: self.store.ids[j].clone(),
                    distance: d.sqrt(),
                })
                .collect(),
        }
    }

    fn check_rank(r: usize) -> Result<()> {
        if r == 0 {
            Err(Error::InvalidParameter("rank must be at least 1".into()))
        } else {
            Ok(())
        }
    }

    /// Neighbors of a stored clip, excluding the clip itself.
    pub fn query_id(&self, id: &str, r: usize) -> Result<RankedResult> {
        Self::check_rank(r)?;
        let i = self
            .store
            .position(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let top = self.top(self.projected_row(i), r, Some(i));
        Ok(self.ranked(Some(id.to_string()), top))
    }

    /// Neighbors of an external, already Gaussianized feature row.
    pub fn query_row(&self, row: &[f64], r: usize) -> Result<RankedResult> {
        Self::check_rank(r)?;
        let z = self.metric.apply(row)?;
        Ok(self.ranked(None, self.top(&z, r, None)))
    }

    /// Top-`r` row indices for every stored clip used as a query.
    pub fn all_queries(&self, r: usize) -> Result<Vec<Vec<usize>>> {
        Self::check_rank(r)?;
        Ok((0..self.store.len())
            .into_par_iter()
            .map(|i| {
                self.top(self.projected_row(i), r, Some(i))
                    .into_iter()
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect())
    }
}

pub fn knn_query(store: &FeatureStore, metric: &MetricMatrix, id: &str, r: usize) -> Result<RankedResult> {
    SearchIndex::new(store, metric)?.query_id(id, r)
}

/// Fraction of the `r` results that share the query's cluster. Results
/// shorter than `r` still divide by `r`.
pub fn precision_at_r(result: &RankedResult, graph: &ClusterGraph, r: usize) -> Result<f64> {
    let index = graph.cluster_index();
    let q = result
        .query
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("precision needs a stored query".into()))?;
    let c = index
        .get(q)
        .ok_or_else(|| Error::InvalidInput(format!("query {q:?} is not in the cluster graph")))?;
    let hits = result
        .results
        .iter()
        .take(r)
        .filter(|n| index.get(n.id.as_str()) == Some(c))
        .count();
    Ok(hits as f64 / r as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrecision {
    pub subject: String,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rank: usize,
    pub queries: usize,
    pub subjects: Vec<SubjectPrecision>,
    /// Mean precision over subjects.
    pub average_precision: f64,
    /// Sample standard deviation across subjects (0 for one subject).
    pub std: f64,
    pub provenance: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,precision\n");
        for s in &self.subjects {
            out.push_str(&format!("{},{}\n", s.subject, s.precision));
        }
        out
    }
}

/// Precision at rank `r` per subject graph, each stored clip used once as a
/// query against all the others.
pub fn evaluate(
    store: &FeatureStore,
    metric: &MetricMatrix,
    graphs: &[(String, ClusterGraph)],
    r: usize,
) -> Result<EvalReport> {
    if graphs.is_empty() {
        return Err(Error::InvalidInput("no cluster graphs to evaluate against".into()));
    }
    if store.len() < 2 {
        return Err(Error::InvalidInput("need at least two clips".into()));
    }
    let index = SearchIndex::new(store, metric)?;
    let tops = index.all_queries(r)?;
    let mut subjects = Vec::with_capacity(graphs.len());
    for (name, g) in graphs {
        let labels = g
            .labels_for(&store.ids)
            .map_err(|e| Error::InvalidInput(format!("graph {name:?} does not cover the store: {e}")))?;
        let total: f64 = tops
            .iter()
            .enumerate()
            .map(|(i, top)| top.iter().filter(|&&j| labels[j] == labels[i]).count() as f64 / r as f64)
            .sum();
        subjects.push(SubjectPrecision {
            subject: name.clone(),
            precision: total / store.len() as f64,
        });
    }
    let k = subjects.len() as f64;
    let ap = subjects.iter().map(|s| s.precision).sum::<f64>() / k;
    let std = if subjects.len() > 1 {
        (subjects.iter().map(|s| (s.precision - ap).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        rank: r,
        queries: store.len(),
        subjects,
        average_precision: ap,
        std,
        provenance: serde_json::json!({
            "fingerprint": store.fingerprint,
            "metric": metric.provenance,
        }),
    })
}
