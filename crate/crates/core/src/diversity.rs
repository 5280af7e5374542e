//! Question diversity of a source dataset: k-means clustering, silhouette
//! coefficient and normalized cluster entropy.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SampleSet;
use crate::rng;
use crate::stats::{normalized_field, FieldKind};

pub const DEFAULT_K: usize = 10;
pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub silhouette: f64,
    pub entropy: f64,
    pub total: f64,
}

impl DiversityScore {
    pub fn new(silhouette: f64, entropy: f64) -> Self {
        DiversityScore {
            silhouette,
            entropy,
            total: silhouette + entropy,
        }
    }
}

/// How the per-example vector fed to clustering is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldPolicy {
    /// Normalized question embedding.
    #[default]
    Question,
    /// Mean of the three normalized field embeddings.
    Mean,
}

impl FieldPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldPolicy::Question => "question",
            FieldPolicy::Mean => "mean",
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    // +0.0 and -0.0 compare equal, so canonicalize before hashing bits.
    points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len() as u64;
    let mut centroids = vec![points[rng::below(rng, n) as usize].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("a distinct point remains");
        let target = rng::unit(rng) * total;
        let mut acc = 0.0;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if d > 0.0 && acc > target {
                pick = i;
                break;
            }
        }
        let chosen = points[pick].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

fn recompute(points: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0; k];
    for (p, &l) in points.iter().zip(labels) {
        sizes[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&sizes) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    (sums, sizes)
}

/// Moves the point farthest from its own centroid (taken from a cluster with
/// more than one member) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>], sizes: &mut [usize]) -> bool {
    let mut changed = false;
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let l = labels[i];
            if sizes[l] > 1 {
                let d = sq_dist(p, &centroids[l]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let i = far.expect("fewer clusters than points");
        sizes[labels[i]] -= 1;
        labels[i] = empty;
        sizes[empty] = 1;
        centroids[empty] = points[i].clone();
        changed = true;
    }
    changed
}

/// Lloyd's k-means with k-means++ seeding. `k` is clamped to the number of
/// distinct points; the result never has an empty cluster.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if points.is_empty() || k == 0 {
        return Err(Error::EmptyInput);
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InconsistentAssignment("points differ in dimension".into()));
    }
    let k = k.min(distinct_count(points));
    let mut rng = rng::stream(seed, rng::STREAM_KMEANS);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut sizes;

    for _ in 0..MAX_ITERATIONS {
        labels = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
        let (mut next, mut next_sizes) = recompute(points, &labels, k, dim);
        repair_empty(points, &mut labels, &mut next, &mut next_sizes);
        let shift = centroids.iter().zip(&next).map(|(a, b)| dist(a, b)).fold(0.0, f64::max);
        centroids = next;
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }

    // Final assignment against the converged centroids.
    labels = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
    (centroids, sizes) = recompute(points, &labels, k, dim);
    if repair_empty(points, &mut labels, &mut centroids, &mut sizes) {
        (centroids, sizes) = recompute(points, &labels, k, dim);
    }
    Ok(ClusterAssignment {
        k,
        labels,
        centroids,
        sizes,
    })
}

fn check_assignment(points: &[Vec<f64>], a: &ClusterAssignment) -> Result<()> {
    if a.labels.len() != points.len() {
        return Err(Error::InconsistentAssignment(format!(
            "{} labels for {} points",
            a.labels.len(),
            points.len()
        )));
    }
    if a.sizes.len() != a.k {
        return Err(Error::InconsistentAssignment(format!(
            "{} sizes for k = {}",
            a.sizes.len(),
            a.k
        )));
    }
    let mut counts = vec![0; a.k];
    for &l in &a.labels {
        if l >= a.k {
            return Err(Error::InconsistentAssignment(format!("label {l} >= k = {}", a.k)));
        }
        counts[l] += 1;
    }
    if counts != a.sizes {
        return Err(Error::InconsistentAssignment("sizes do not match labels".into()));
    }
    Ok(())
}

/// Mean silhouette `(b - a) / max(a, b)` with Euclidean distances.
/// Points in singleton clusters score 0, and a single cluster scores 0.
pub fn silhouette(points: &[Vec<f64>], assignment: &ClusterAssignment) -> Result<f64> {
    check_assignment(points, assignment)?;
    let k = assignment.k;
    let occupied = assignment.sizes.iter().filter(|&&s| s > 0).count();
    if occupied <= 1 {
        return Ok(0.0);
    }
    let labels = &assignment.labels;
    let sizes = &assignment.sizes;
    let per_point: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, q) in points.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += dist(p, q);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    let mean = per_point.iter().sum::<f64>() / points.len() as f64;
    Ok(mean.clamp(-1.0, 1.0))
}

/// Shannon entropy of the cluster proportions divided by `ln k`, where `k`
/// counts non-empty clusters.
pub fn normalized_entropy(assignment: &ClusterAssignment) -> f64 {
    let sizes: Vec<usize> = assignment.sizes.iter().copied().filter(|&s| s > 0).collect();
    if sizes.len() <= 1 {
        return 0.0;
    }
    if sizes.iter().all(|&s| s == sizes[0]) {
        return 1.0;
    }
    let n: usize = sizes.iter().sum();
    let h: f64 = sizes
        .iter()
        .map(|&s| {
            let p = s as f64 / n as f64;
            -p * p.ln()
        })
        .sum();
    (h / (sizes.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Builds the clustering vector for each record.
pub fn clustering_points(set: &SampleSet, policy: FieldPolicy) -> Vec<Vec<f64>> {
    set.records()
        .iter()
        .map(|r| match policy {
            FieldPolicy::Question => normalized_field(r, FieldKind::Question),
            FieldPolicy::Mean => {
                let fields = FieldKind::ALL.map(|f| normalized_field(r, f));
                (0..set.embedding_dim())
                    .map(|d| (fields[0][d] + fields[1][d] + fields[2][d]) / 3.0)
                    .collect()
            }
        })
        .collect()
}

pub fn diversity_score(set: &SampleSet, k: usize, seed: u64, policy: FieldPolicy) -> Result<DiversityScore> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(set.dataset_id().to_string()));
    }
    let points = clustering_points(set, policy);
    let assignment = kmeans(&points, k, seed)?;
    Ok(DiversityScore::new(
        silhouette(&points, &assignment)?,
        normalized_entropy(&assignment),
    ))
}
