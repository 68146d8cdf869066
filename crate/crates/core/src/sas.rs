//! Scaffold-aware sampling: cluster active scaffolds by fingerprint, weight
//! clusters by inverse frequency and draw a scaffold library.

use std::io::Write;
use std::ops::RangeInclusive;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{to_smiles, MolGraph};
use crate::fingerprint::Fingerprint;
use crate::hash::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SasConfig {
    pub radius: u32,
    pub nbits: usize,
    /// Smallest and largest k tried; `k_max = None` means min(20, m - 1).
    pub k_min: usize,
    pub k_max: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub epsilon: f64,
    /// Library size as a fraction of the training-set size.
    pub library_fraction: f64,
}

impl Default for SasConfig {
    fn default() -> Self {
        SasConfig {
            radius: 2,
            nbits: 1024,
            k_min: 2,
            k_max: None,
            restarts: 10,
            max_iter: 100,
            tol: 1e-6,
            epsilon: 1e-8,
            library_fraction: 0.1,
        }
    }
}

impl SasConfig {
    pub fn k_range(&self, m: usize) -> RangeInclusive<usize> {
        let hi = self.k_max.unwrap_or(20).min(m.saturating_sub(1));
        self.k_min..=hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Mean silhouette; `None` for the single-cluster fallback.
    pub silhouette: Option<f64>,
    /// Mean silhouette of the best restart for every k tried.
    pub silhouette_by_k: Vec<(usize, f64)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SasError {
    #[error("need at least 3 scaffolds to cluster, got {0}")]
    TooFewScaffolds(usize),
    #[error("fingerprint widths differ")]
    WidthMismatch,
    #[error("k range {lo}..={hi} is not within [2, {max}]")]
    BadRange { lo: usize, hi: usize, max: usize },
    #[error("all fingerprints are identical; falling back to a single cluster")]
    DegenerateInput(Box<ClusterModel>),
    #[error("library size must be at least 1")]
    EmptyRequest,
    #[error("library sampling needs at least one scaffold")]
    NoScaffolds,
}

/// Squared Euclidean distance between a 0/1 point and a real centroid, given
/// the point's set bits and the centroid's squared norm.
fn sq_dist(ones: &[usize], centroid: &[f64], centroid_sq: f64) -> f64 {
    let dot: f64 = ones.iter().map(|&i| centroid[i]).sum();
    (ones.len() as f64 - 2.0 * dot + centroid_sq).max(0.0)
}

struct Points {
    ones: Vec<Vec<usize>>,
    width: usize,
}

impl Points {
    fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.width];
        for &b in &self.ones[i] {
            v[b] = 1.0;
        }
        v
    }
}

struct Fit {
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
}

fn nearest(p: &[usize], centroids: &[Vec<f64>], norms: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, (cen, &nrm)) in centroids.iter().zip(norms).enumerate() {
        let d = sq_dist(p, cen, nrm);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn norms(centroids: &[Vec<f64>]) -> Vec<f64> {
    centroids.iter().map(|c| c.iter().map(|x| x * x).sum()).collect()
}

fn kmeans_pp(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = points.ones.len();
    let mut centroids = vec![points.dense(rng.random_range(0..m))];
    let mut d2: Vec<f64> = {
        let nrm = norms(&centroids);
        points.ones.iter().map(|p| sq_dist(p, &centroids[0], nrm[0])).collect()
    };
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on a zero-distance tail
            while d2[idx] == 0.0 {
                idx -= 1;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        let c = points.dense(pick);
        let nrm: f64 = c.iter().map(|x| x * x).sum();
        for (i, p) in points.ones.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c, nrm));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &Points, k: usize, cfg: &SasConfig, rng: &mut ChaCha8Rng) -> Fit {
    let m = points.ones.len();
    let mut centroids = kmeans_pp(points, k, rng);
    let mut assignments = vec![0; m];
    let mut dist = vec![0.0; m];
    for _ in 0..cfg.max_iter {
        let nrm = norms(&centroids);
        for i in 0..m {
            let (c, d) = nearest(&points.ones[i], &centroids, &nrm);
            assignments[i] = c;
            dist[i] = d;
        }
        fill_empty_clusters(k, &mut assignments, &mut dist);
        let mut next = vec![vec![0.0; points.width]; k];
        let mut sizes = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            sizes[c] += 1;
            for &b in &points.ones[i] {
                next[c][b] += 1.0;
            }
        }
        for (c, row) in next.iter_mut().enumerate() {
            let s = sizes[c] as f64;
            row.iter_mut().for_each(|x| *x /= s);
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < cfg.tol {
            break;
        }
    }
    let nrm = norms(&centroids);
    let mut inertia = 0.0;
    for i in 0..m {
        let (c, d) = nearest(&points.ones[i], &centroids, &nrm);
        assignments[i] = c;
        dist[i] = d;
        inertia += d;
    }
    fill_empty_clusters(k, &mut assignments, &mut dist);
    Fit {
        centroids,
        assignments,
        inertia,
    }
}

/// Moves the point farthest from its centroid (among clusters with more than
/// one member) into each empty cluster.
fn fill_empty_clusters(k: usize, assignments: &mut [usize], dist: &mut [f64]) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignments.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..assignments.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
            .expect("fewer points than clusters");
        assignments[donor] = empty;
        dist[donor] = 0.0;
    }
}

fn xor_dist(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let inter = a.ones().filter(|&i| b.get(i)).count();
    ((a.popcount() as usize + b.popcount() as usize - 2 * inter) as f64).sqrt()
}

/// Mean silhouette under Euclidean distance on the 0/1 vectors. A point whose
/// own cluster is a singleton scores 0.
///
/// Panics unless there are at least two clusters and ids are `0..k` with
/// every cluster nonempty.
pub fn silhouette(points: &[Fingerprint], assignments: &[usize]) -> f64 {
    let n = points.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| xor_dist(&points[i], &points[j])).collect())
        .collect();
    silhouette_from_distances(&dist, assignments)
}

pub fn silhouette_from_distances(dist: &[Vec<f64>], assignments: &[usize]) -> f64 {
    let n = assignments.len();
    let k = assignments.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    assert!(
        k >= 2 && sizes.iter().all(|&s| s > 0),
        "silhouette needs at least two nonempty clusters"
    );
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += dist[i][j];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// K-means (k-means++ seeding, restarts in parallel) for every k in
/// `k_range`; returns the model with the highest mean silhouette, preferring
/// the smaller k on ties.
pub fn cluster_scaffolds(
    fps: &[Fingerprint],
    k_range: RangeInclusive<usize>,
    cfg: &SasConfig,
    seed: u64,
) -> Result<ClusterModel, SasError> {
    let m = fps.len();
    if m < 3 {
        return Err(SasError::TooFewScaffolds(m));
    }
    let width = fps[0].nbits();
    if fps.iter().any(|f| f.nbits() != width) {
        return Err(SasError::WidthMismatch);
    }
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > m - 1 || lo > hi {
        return Err(SasError::BadRange { lo, hi, max: m - 1 });
    }
    let points = Points {
        ones: fps.iter().map(|f| f.ones().collect()).collect(),
        width,
    };
    let mut distinct = points.ones.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() == 1 {
        let centroid = points.dense(0);
        return Err(SasError::DegenerateInput(Box::new(ClusterModel {
            k: 1,
            centroids: vec![centroid],
            assignments: vec![0; m],
            silhouette: None,
            silhouette_by_k: Vec::new(),
        })));
    }
    let dist: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..m).map(|j| xor_dist(&fps[i], &fps[j])).collect())
        .collect();

    let mut best: Option<ClusterModel> = None;
    let mut by_k = Vec::new();
    for k in lo..=hi.min(distinct.len()) {
        let fit = (0..cfg.restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "kmeans", (k * 1000 + r) as u64));
                (r, lloyd(&points, k, cfg, &mut rng))
            })
            .collect::<Vec<_>>()
            .into_iter()
            .min_by(|(ra, a), (rb, b)| a.inertia.total_cmp(&b.inertia).then(ra.cmp(rb)))
            .map(|(_, f)| f)
            .expect("at least one restart");
        let s = silhouette_from_distances(&dist, &fit.assignments);
        log::debug!("k={k}: inertia {:.4}, silhouette {s:.4}", fit.inertia);
        by_k.push((k, s));
        if best
            .as_ref()
            .is_none_or(|b| s > b.silhouette.unwrap_or(f64::NEG_INFINITY))
        {
            best = Some(ClusterModel {
                k,
                centroids: fit.centroids,
                assignments: fit.assignments,
                silhouette: Some(s),
                silhouette_by_k: Vec::new(),
            });
        }
    }
    let mut best = best.expect("k range is nonempty");
    best.silhouette_by_k = by_k;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Inverse-frequency cluster weights `1 / (count + epsilon)` normalized to
/// probabilities. Cluster ids must cover `0..k` with no gaps.
pub fn sampling_weights(assignments: &[usize], epsilon: f64) -> SamplingWeights {
    assert!(!assignments.is_empty(), "assignments must be nonempty");
    let k = assignments.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    for &c in assignments {
        counts[c] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0), "cluster ids must be contiguous");
    let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / (c as f64 + epsilon)).collect();
    let total: f64 = weights.iter().sum();
    let probabilities = weights.iter().map(|w| w / total).collect();
    SamplingWeights {
        counts,
        weights,
        probabilities,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub scaffold: MolGraph,
    pub cluster_id: usize,
    /// Index of the scaffold in the clustered list.
    pub source: usize,
    pub source_label: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaffoldLibrary {
    pub entries: Vec<LibraryEntry>,
}

impl ScaffoldLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes `scaffold_smiles,cluster_id,source_label`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["scaffold_smiles", "cluster_id", "source_label"])?;
        for e in &self.entries {
            let smiles = to_smiles(&e.scaffold, true).unwrap_or_default();
            out.write_record([smiles, e.cluster_id.to_string(), e.source_label.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// round(fraction × train size), at least 1.
pub fn library_size(train_size: usize, fraction: f64) -> usize {
    ((train_size as f64 * fraction).round() as usize).max(1)
}

/// Draws `n` entries with replacement: a cluster by `weights`, then a member
/// of that cluster uniformly. `scaffolds[i]` pairs with `model.assignments[i]`.
pub fn sample_library(
    scaffolds: &[(MolGraph, u8)],
    model: &ClusterModel,
    weights: &SamplingWeights,
    n: usize,
    seed: u64,
) -> Result<ScaffoldLibrary, SasError> {
    if n == 0 {
        return Err(SasError::EmptyRequest);
    }
    if scaffolds.is_empty() {
        return Err(SasError::NoScaffolds);
    }
    assert_eq!(scaffolds.len(), model.assignments.len());
    let mut members = vec![Vec::new(); weights.probabilities.len()];
    for (i, &c) in model.assignments.iter().enumerate() {
        members[c].push(i);
    }
    let clusters = WeightedIndex::new(&weights.probabilities).expect("probabilities are valid");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sas-library", 0));
    let entries = (0..n)
        .map(|_| {
            let c = clusters.sample(&mut rng);
            let pool = &members[c];
            let i = pool[rng.random_range(0..pool.len())];
            LibraryEntry {
                scaffold: scaffolds[i].0.clone(),
                cluster_id: c,
                source: i,
                source_label: scaffolds[i].1,
            }
        })
        .collect();
    Ok(ScaffoldLibrary { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::fingerprint::Fingerprint;

    fn blobs() -> Vec<Fingerprint> {
        // two base patterns far apart, each perturbed by at most two flips
        let a: Vec<usize> = (0..20).collect();
        let b: Vec<usize> = (40..60).collect();
        let mut out = Vec::new();
        for (base, offset) in [(&a, 0usize), (&b, 40)] {
            for i in 0..10 {
                let mut bits = base.clone();
                if i % 2 == 1 {
                    bits.retain(|&x| x != offset + i);
                }
                if i % 3 == 0 {
                    bits.push(offset + 20 + i);
                }
                out.push(Fingerprint::from_ones(128, 2, bits));
            }
        }
        out
    }

    #[test]
    fn separates_two_blobs() {
        let fps = blobs();
        let model = cluster_scaffolds(&fps, 2..=5, &SasConfig::default(), 7).unwrap();
        assert_eq!(model.k, 2);
        let first = model.assignments[0];
        assert!(model.assignments[..10].iter().all(|&c| c == first));
        assert!(model.assignments[10..].iter().all(|&c| c != first));
        for &(_, s) in &model.silhouette_by_k {
            assert!(model.silhouette.unwrap() >= s);
        }
    }

    #[test]
    fn reproducible_under_seed() {
        let fps = blobs();
        let cfg = SasConfig::default();
        assert_eq!(
            cluster_scaffolds(&fps, 2..=6, &cfg, 3).unwrap(),
            cluster_scaffolds(&fps, 2..=6, &cfg, 3).unwrap()
        );
    }

    #[test]
    fn identical_points_are_degenerate() {
        let fps = vec![Fingerprint::from_ones(64, 2, [1, 2]); 5];
        match cluster_scaffolds(&fps, 2..=4, &SasConfig::default(), 0) {
            Err(SasError::DegenerateInput(m)) => {
                assert_eq!(m.k, 1);
                assert_eq!(m.assignments, vec![0; 5]);
                assert!(m.silhouette.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn three_points_two_clusters() {
        let fps = vec![
            Fingerprint::from_ones(64, 2, [1]),
            Fingerprint::from_ones(64, 2, [1, 2]),
            Fingerprint::from_ones(64, 2, [30, 31, 32]),
        ];
        let m = cluster_scaffolds(&fps, 2..=2, &SasConfig::default(), 1).unwrap();
        assert_eq!(m.k, 2);
        let mut ids = m.assignments.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn range_checks() {
        let fps = blobs();
        let cfg = SasConfig::default();
        assert!(matches!(
            cluster_scaffolds(&fps[..2], 2..=2, &cfg, 0),
            Err(SasError::TooFewScaffolds(2))
        ));
        assert!(matches!(
            cluster_scaffolds(&fps, 1..=3, &cfg, 0),
            Err(SasError::BadRange { .. })
        ));
        assert_eq!(cfg.k_range(8), 2..=7);
        assert_eq!(cfg.k_range(100), 2..=20);
    }

    #[test]
    fn silhouette_conventions() {
        let p = vec![Fingerprint::from_ones(8, 2, [0]), Fingerprint::from_ones(8, 2, [1])];
        assert_eq!(silhouette(&p, &[0, 1]), 0.0);
        // point 0 sits at distance 1 from both clusters
        let d = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0], vec![1.0, 2.0, 0.0]];
        let s = silhouette_from_distances(&d, &[0, 0, 1]);
        // point 0: a = 1, b = 1 -> 0; point 1: a = 1, b = 2 -> 0.5; point 2 singleton -> 0
        assert!((s - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn silhouette_brute_force_six_points() {
        let pts: Vec<Fingerprint> = [
            vec![0, 1, 2, 3],
            vec![0, 1, 2],
            vec![0, 1, 2, 3, 4],
            vec![20, 21, 22, 23],
            vec![20, 21, 22],
            vec![20, 21, 22, 23, 24],
        ]
        .into_iter()
        .map(|b| Fingerprint::from_ones(32, 2, b))
        .collect();
        let assign = [0, 0, 0, 1, 1, 1];
        // within a blob distances are 1,1,2; across blobs |x xor y| = |x|+|y|
        let within = [
            (1.0 + 1.0) / 2.0,
            (1.0 + 2.0f64.sqrt()) / 2.0,
            (1.0 + 2.0f64.sqrt()) / 2.0,
        ];
        let sizes = [4.0, 3.0, 5.0];
        let mut expected = 0.0;
        for i in 0..3 {
            let b: f64 = sizes.iter().map(|&s: &f64| (sizes[i] + s).sqrt()).sum::<f64>() / 3.0;
            expected += (b - within[i]) / b.max(within[i]);
        }
        expected = 2.0 * expected / 6.0;
        assert!((silhouette(&pts, &assign) - expected).abs() < 1e-12);
        assert!(expected > 0.5);
    }

    #[test]
    fn weights_follow_inverse_counts() {
        let w = sampling_weights(&[0, 0, 0, 1], 1e-8);
        assert_eq!(w.counts, vec![3, 1]);
        assert_eq!(w.weights[0], 1.0 / (3.0 + 1e-8));
        assert!((w.probabilities[0] - 0.25).abs() < 1e-8);
        assert!((w.probabilities[1] - 0.75).abs() < 1e-8);
        let even = sampling_weights(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 1e-8);
        assert_eq!(even.probabilities, vec![0.5, 0.5]);
        assert_eq!(sampling_weights(&[0, 0], 1e-8).probabilities, vec![1.0]);
    }

    fn toy_scaffolds() -> Vec<(MolGraph, u8)> {
        ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CC1"]
            .iter()
            .map(|s| (parse_smiles(s).unwrap(), 1))
            .collect()
    }

    fn toy_model(assignments: Vec<usize>) -> ClusterModel {
        ClusterModel {
            k: assignments.iter().max().unwrap() + 1,
            centroids: Vec::new(),
            assignments,
            silhouette: None,
            silhouette_by_k: Vec::new(),
        }
    }

    #[test]
    fn sampling_single_cluster_and_zero_request() {
        let scaf = toy_scaffolds();
        let model = toy_model(vec![0; 4]);
        let w = sampling_weights(&model.assignments, 1e-8);
        let lib = sample_library(&scaf, &model, &w, 50, 1).unwrap();
        assert_eq!(lib.len(), 50);
        assert!(lib.entries.iter().all(|e| e.cluster_id == 0));
        assert_eq!(sample_library(&scaf, &model, &w, 0, 1), Err(SasError::EmptyRequest));
    }

    #[test]
    fn library_csv_header() {
        let scaf = toy_scaffolds();
        let model = toy_model(vec![0, 0, 0, 1]);
        let w = sampling_weights(&model.assignments, 1e-8);
        let lib = sample_library(&scaf, &model, &w, 3, 9).unwrap();
        let mut buf = Vec::new();
        lib.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scaffold_smiles,cluster_id,source_label\n"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(library_size(2000, 0.1), 200);
        assert_eq!(library_size(3, 0.1), 1);
    }
}
