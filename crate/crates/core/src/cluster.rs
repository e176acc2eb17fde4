//! Clustering of pooled embeddings and per-cluster analysis.
//!
//! Clusters come from Lloyd's k-means with k-means++ seeding. Each cluster is
//! then scored by looking at nearest-neighbour pairs inside it: a pair is
//! *true* when the two owners share at least one purchased product and
//! *fake* otherwise, and the cluster score is `true / (true + fake)`. The
//! profile of a cluster is its most frequent departments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::ann::{AnnForest, QueryParams};
use crate::corpus::{Catalog, UNKNOWN_DEPARTMENT};
use crate::linalg::{axpy, squared_euclidean, Matrix};
use crate::seed;
use crate::store::EmbeddingTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Independent k-means++ starts; the lowest final objective wins.
    pub n_init: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 5,
            max_iter: 100,
            n_init: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Matrix,
    /// Cluster of each input row, in input order.
    pub assignment: Vec<usize>,
    pub n_iterations: usize,
    /// Sum of squared distances to assigned centroids after each iteration.
    pub objective_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Owner ids per cluster, in input order.
    pub fn members(&self, ids: &[u64]) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.k()];
        for (&id, &c) in ids.iter().zip(&self.assignment) {
            out[c].push(id);
        }
        out
    }
}

fn nearest_centroid(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_euclidean(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_rows(points: &Matrix) -> usize {
    points
        .iter_rows()
        .map(|r| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut seed::Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // All mass zero: only duplicates of chosen centres remain.
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).copy_from_slice(points.row(next));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_euclidean(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd's k-means over the rows of `points`, best of `n_init` seeded starts.
///
/// Each start runs until the assignment stops changing or `max_iter` iterations. An
/// empty cluster takes the point farthest from its own centroid (among
/// clusters with more than one member). Assignment ties go to the lowest
/// cluster index.
pub fn kmeans(points: &Matrix, params: KMeansParams) -> Result<KMeansResult> {
    let n = points.rows();
    if params.k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    if params.max_iter == 0 {
        return Err(Error::config("max_iter", "must be at least 1"));
    }
    if params.k > n {
        return Err(Error::config("k", format!("{} clusters requested for {n} points", params.k)));
    }
    if params.k > distinct_rows(points) {
        return Err(Error::config("k", "exceeds the number of distinct points"));
    }
    if params.n_init == 0 {
        return Err(Error::config("n_init", "must be at least 1"));
    }
    let mut best: Option<KMeansResult> = None;
    for run in 0..params.n_init {
        let mut rng = seed::rng(seed::stream_seed(params.seed, run as u64));
        let result = lloyd(points, params.k, params.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| result.objective() < b.objective()) {
            best = Some(result);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn lloyd(points: &Matrix, k: usize, max_iter: usize, rng: &mut seed::Rng) -> KMeansResult {
    let n = points.rows();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut n_iterations = 0;

    for _ in 0..max_iter {
        n_iterations += 1;
        let nearest: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest_centroid(points.row(i), &centroids))
            .collect();
        let mut changed = false;
        for (a, &(c, _)) in assignment.iter_mut().zip(&nearest) {
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&i, &j| {
                    let di = squared_euclidean(points.row(i), centroids.row(assignment[i]));
                    let dj = squared_euclidean(points.row(j), centroids.row(assignment[j]));
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .expect("k <= n leaves a cluster with two members");
            counts[assignment[donor]] -= 1;
            assignment[donor] = empty;
            counts[empty] = 1;
            changed = true;
        }

        let mut sums = Matrix::zeros(k, points.cols());
        for (i, &a) in assignment.iter().enumerate() {
            axpy(1.0, points.row(i), sums.row_mut(a));
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|x| *x *= inv);
        }
        centroids = sums;
        let objective: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &a)| squared_euclidean(points.row(i), centroids.row(a)))
            .sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(
                objective <= prev + 1e-9 * prev.abs().max(1.0),
                "k-means objective increased: {prev} -> {objective}"
            );
        }
        trace.push(objective);
        if !changed {
            break;
        }
    }

    KMeansResult {
        centroids,
        assignment,
        n_iterations,
        objective_trace: trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairScore {
    pub true_pairs: u64,
    pub fake_pairs: u64,
    /// `None` when the cluster produced no pairs.
    pub cluster_score: Option<f64>,
}

pub fn cluster_score(true_pairs: u64, fake_pairs: u64) -> Option<f64> {
    let total = true_pairs + fake_pairs;
    (total > 0).then(|| true_pairs as f64 / total as f64)
}

fn share_item(a: &[u64], b: &[u64]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Up to `n` nearest neighbours of `id` that belong to the same cluster.
fn in_cluster_neighbors(
    id: u64,
    forest: &AnnForest,
    cluster_of: &HashMap<u64, usize>,
    n: usize,
) -> Result<Vec<u64>> {
    let q = forest
        .vector(id)
        .ok_or_else(|| Error::InvalidArgument(format!("owner {id} is not in the index")))?;
    if q.iter().all(|&x| x == 0.0) {
        return Ok(Vec::new());
    }
    let own = cluster_of[&id];
    let mut k = (2 * (n + 1)).min(forest.len());
    loop {
        let found: Vec<u64> = forest
            .query(&q, QueryParams::new(k))?
            .into_iter()
            .filter(|nb| nb.id != id && cluster_of.get(&nb.id) == Some(&own))
            .take(n)
            .map(|nb| nb.id)
            .collect();
        if found.len() >= n || k >= forest.len() {
            return Ok(found);
        }
        k = (k * 4).min(forest.len());
    }
}

/// Counts ordered (member, neighbour) pairs inside one cluster.
///
/// `item_sets` holds each owner's sorted, deduplicated products.
pub fn pair_score(
    members: &[u64],
    item_sets: &BTreeMap<u64, Vec<u64>>,
    forest: &AnnForest,
    cluster_of: &HashMap<u64, usize>,
    neighbors_per_point: usize,
) -> Result<PairScore> {
    let empty = Vec::new();
    let per_member: Vec<Result<(u64, u64)>> = members
        .par_iter()
        .map(|&m| {
            let mine = item_sets.get(&m).unwrap_or(&empty);
            let mut t = 0;
            let mut f = 0;
            for nb in in_cluster_neighbors(m, forest, cluster_of, neighbors_per_point)? {
                if share_item(mine, item_sets.get(&nb).unwrap_or(&empty)) {
                    t += 1;
                } else {
                    f += 1;
                }
            }
            Ok((t, f))
        })
        .collect();
    let (mut true_pairs, mut fake_pairs) = (0, 0);
    for r in per_member {
        let (t, f) = r?;
        true_pairs += t;
        fake_pairs += f;
    }
    Ok(PairScore {
        true_pairs,
        fake_pairs,
        cluster_score: cluster_score(true_pairs, fake_pairs),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DepartmentCount {
    pub department: String,
    pub count: usize,
}

/// Most frequent departments over the multiset of products bought by `members`.
/// Ties are ordered by department name.
pub fn profile(
    members: &[u64],
    purchases: &BTreeMap<u64, Vec<u64>>,
    catalog: &Catalog,
    top_n: usize,
) -> Vec<DepartmentCount> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        for p in purchases.get(m).into_iter().flatten() {
            let dept = catalog
                .get(p)
                .map(|x| x.department.as_str())
                .unwrap_or(UNKNOWN_DEPARTMENT);
            *counts.entry(dept).or_default() += 1;
        }
    }
    let mut ranked: Vec<DepartmentCount> = counts
        .into_iter()
        .map(|(department, count)| DepartmentCount {
            department: department.to_string(),
            count,
        })
        .collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.department.cmp(&b.department)));
    ranked.truncate(top_n);
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    /// 1-based.
    pub cluster_id: usize,
    pub size: usize,
    pub true_pairs: u64,
    pub fake_pairs: u64,
    pub cluster_score: Option<f64>,
    pub top_departments: Vec<DepartmentCount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisParams {
    pub neighbors_per_point: usize,
    pub top_n: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            neighbors_per_point: 10,
            top_n: 3,
        }
    }
}

/// Pair scores and department profiles for every cluster.
pub fn analyze(
    points: &EmbeddingTable,
    result: &KMeansResult,
    forest: &AnnForest,
    item_sets: &BTreeMap<u64, Vec<u64>>,
    purchases: &BTreeMap<u64, Vec<u64>>,
    catalog: &Catalog,
    params: AnalysisParams,
) -> Result<Vec<ClusterReport>> {
    let cluster_of: HashMap<u64, usize> = points
        .ids()
        .iter()
        .copied()
        .zip(result.assignment.iter().copied())
        .collect();
    result
        .members(points.ids())
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let ps = pair_score(members, item_sets, forest, &cluster_of, params.neighbors_per_point)?;
            Ok(ClusterReport {
                cluster_id: c + 1,
                size: members.len(),
                true_pairs: ps.true_pairs,
                fake_pairs: ps.fake_pairs,
                cluster_score: ps.cluster_score,
                top_departments: profile(members, purchases, catalog, params.top_n),
            })
        })
        .collect()
}

/// CSV with header `cluster_id,size,true_pairs,fake_pairs,cluster_score,dept1,...,deptN`.
pub fn reports_to_csv(reports: &[ClusterReport], top_n: usize) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<String> = ["cluster_id", "size", "true_pairs", "fake_pairs", "cluster_score"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=top_n).map(|i| format!("dept{i}")));
    w.write_record(&header).expect("in-memory write");
    for r in reports {
        let mut row = vec![
            r.cluster_id.to_string(),
            r.size.to_string(),
            r.true_pairs.to_string(),
            r.fake_pairs.to_string(),
            r.cluster_score.map(|s| format!("{s:.12}")).unwrap_or_default(),
        ];
        row.extend((0..top_n).map(|i| {
            r.top_departments
                .get(i)
                .map(|d| d.department.clone())
                .unwrap_or_default()
        }));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 input")
}

pub fn write_reports(reports: &[ClusterReport], top_n: usize, csv_path: &Path, json_path: Option<&Path>) -> Result<()> {
    std::fs::write(csv_path, reports_to_csv(reports, top_n)).map_err(|e| Error::io(csv_path, e))?;
    if let Some(p) = json_path {
        let f = File::create(p).map_err(|e| Error::io(p, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, reports).map_err(|e| Error::io(p, e.into()))?;
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
