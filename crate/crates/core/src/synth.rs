//! Synthetic worlds with planted structure.
//!
//! Each dataset gets a direction per field in the plane spanned by the
//! first two axes, at a configurable angle from axis 0. Question embeddings
//! are spread over `clusters` points offset from the question direction
//! along the vertices of a regular simplex living in axes `2..`, so cluster
//! structure never leaks into the similarity plane. With `jitter = 0` every
//! record in a cluster is identical, which makes the diversity score and
//! every similarity available in closed form; the planted influence matrix
//! is built from those closed forms, never from the generated records.
//!
//! Planted improvements are `scale * M * exp(noise * eps)` with standard
//! normal `eps`, negated when `reverse` is set.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::DEFAULT_K;
use crate::error::{Error, Result};
use crate::ingest::{SampleRecord, SampleSet};
use crate::matrix::{LabeledMatrix, NumberFormat};
use crate::metric::{ablated_matrix, DatasetSummary, Factor};
use crate::rank::{two_way_eval, TauReport};
use crate::rng;
use crate::selection::allocate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPlan {
    pub clusters: usize,
    /// Relative cluster sizes; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_weights: Option<Vec<f64>>,
    /// Distance of each cluster centre from the question direction.
    pub spread: f64,
    /// Log-probability given to every answer token.
    pub mean_logprob: f64,
    pub question_angle: f64,
    pub answer_angle: f64,
    pub image_angle: f64,
}

fn default_answer_tokens() -> usize {
    4
}

fn default_scale() -> f64 {
    0.1
}

fn default_cluster_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n_datasets: usize,
    pub records_per_dataset: usize,
    pub embedding_dim: usize,
    #[serde(default = "default_answer_tokens")]
    pub answer_tokens: usize,
    /// Standard deviation of the log-normal noise on planted improvements.
    pub noise: f64,
    /// Standard deviation of per-record Gaussian noise on embeddings.
    #[serde(default)]
    pub jitter: f64,
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub reverse: bool,
    /// Clustering `k` the planted diversity assumes; bounds `clusters`.
    #[serde(default = "default_cluster_k")]
    pub cluster_k: usize,
    /// Explicit per-dataset parameters; drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datasets: Option<Vec<DatasetPlan>>,
}

impl WorldSpec {
    pub fn new(n_datasets: usize, records_per_dataset: usize, embedding_dim: usize, noise: f64, seed: u64) -> Self {
        WorldSpec {
            n_datasets,
            records_per_dataset,
            embedding_dim,
            answer_tokens: default_answer_tokens(),
            noise,
            jitter: 0.0,
            seed,
            scale: default_scale(),
            reverse: false,
            cluster_k: DEFAULT_K,
            datasets: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: WorldSpec = serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// A world in which only `signal` differs between datasets; every other
    /// factor is identical for all of them.
    pub fn single_signal(signal: Factor, n_datasets: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::STREAM_SYNTH);
        let mut draws: Vec<f64> = (0..n_datasets).map(|_| rng::unit(&mut rng)).collect();
        let records = 240;
        let plans = draws
            .drain(..)
            .enumerate()
            .map(|(d, u)| {
                let mut plan = DatasetPlan {
                    clusters: 4,
                    cluster_weights: None,
                    spread: 0.8,
                    mean_logprob: -1.0,
                    question_angle: 0.4,
                    answer_angle: 0.4,
                    image_angle: 0.4,
                };
                match signal {
                    Factor::QSim => plan.question_angle = 1.4 * u,
                    Factor::ASim => plan.answer_angle = 1.4 * u,
                    Factor::ISim => plan.image_angle = 1.4 * u,
                    Factor::Ppl => plan.mean_logprob = -0.1 - 2.5 * u,
                    Factor::Div => {
                        // Sizes (n - 2b, b, b) with b shrinking from n/3 keep
                        // every cluster below half the records.
                        plan.clusters = 3;
                        let b = (records / 3 - d).max(records / 4 + 1) as f64;
                        plan.cluster_weights = Some(vec![records as f64 - 2.0 * b, b, b]);
                    }
                }
                plan
            })
            .collect();
        WorldSpec {
            datasets: Some(plans),
            ..WorldSpec::new(n_datasets, records, 8, 0.0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_datasets < 2 {
            return bad("n_datasets must be at least 2".into());
        }
        if self.records_per_dataset == 0 || self.answer_tokens == 0 {
            return bad("records_per_dataset and answer_tokens must be positive".into());
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2".into());
        }
        for (name, v) in [("noise", self.noise), ("jitter", self.jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive".into());
        }
        if self.cluster_k == 0 {
            return bad("cluster_k must be positive".into());
        }
        let Some(plans) = &self.datasets else {
            if self.embedding_dim < 4 {
                return bad("random plans need embedding_dim >= 4".into());
            }
            return Ok(());
        };
        if plans.len() != self.n_datasets {
            return bad(format!(
                "{} dataset plans for n_datasets = {}",
                plans.len(),
                self.n_datasets
            ));
        }
        for (d, p) in plans.iter().enumerate() {
            if p.clusters == 0 || p.clusters > self.cluster_k || p.clusters > self.records_per_dataset {
                return bad(format!(
                    "dataset {d}: clusters must be in 1..={}",
                    self.cluster_k.min(self.records_per_dataset)
                ));
            }
            if p.clusters > 1 && self.embedding_dim < 2 + p.clusters {
                return bad(format!(
                    "dataset {d}: embedding_dim must be at least {}",
                    2 + p.clusters
                ));
            }
            if let Some(w) = &p.cluster_weights {
                if w.len() != p.clusters || w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return bad(format!(
                        "dataset {d}: cluster_weights must be {} positive numbers",
                        p.clusters
                    ));
                }
            }
            if !(p.spread >= 0.0 && p.spread.is_finite()) {
                return bad(format!("dataset {d}: spread must be finite and >= 0"));
            }
            if !(p.mean_logprob <= 0.0 && p.mean_logprob.is_finite()) {
                return bad(format!("dataset {d}: mean_logprob must be finite and <= 0"));
            }
            for a in [p.question_angle, p.answer_angle, p.image_angle] {
                if !(0.0..=PI).contains(&a) {
                    return bad(format!("dataset {d}: angles must lie in [0, pi]"));
                }
            }
        }
        Ok(())
    }

    /// The explicit plans, or plans drawn from the seed.
    pub fn plans(&self) -> Vec<DatasetPlan> {
        if let Some(p) = &self.datasets {
            return p.clone();
        }
        let mut rng = rng::stream(self.seed, rng::STREAM_SYNTH);
        let max_clusters = self
            .cluster_k
            .min(self.embedding_dim - 2)
            .min(self.records_per_dataset)
            .max(2);
        (0..self.n_datasets)
            .map(|_| {
                let clusters = 2 + rng::below(&mut rng, (max_clusters - 1) as u64) as usize;
                let weights = (0..clusters).map(|_| 0.5 + rng::unit(&mut rng)).collect();
                DatasetPlan {
                    clusters,
                    cluster_weights: Some(weights),
                    spread: 0.3 + 1.2 * rng::unit(&mut rng),
                    mean_logprob: -0.2 - 2.8 * rng::unit(&mut rng),
                    question_angle: 1.2 * rng::unit(&mut rng),
                    answer_angle: 1.2 * rng::unit(&mut rng),
                    image_angle: 1.2 * rng::unit(&mut rng),
                }
            })
            .collect()
    }

    pub fn dataset_id(d: usize) -> String {
        format!("d{d:02}")
    }
}

/// Planted geometry and statistics of one dataset.
#[derive(Debug, Clone)]
struct Planted {
    sizes: Vec<usize>,
    offsets: Vec<Vec<f64>>,
    directions: [Vec<f64>; 3],
    centroids: [Vec<f64>; 3],
    perplexity: f64,
    diversity: f64,
}

fn direction(angle: f64, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = angle.cos();
    v[1] = angle.sin();
    v
}

/// Unit vectors `u_j` on a regular simplex centred at the origin, in axes
/// `2..2 + clusters`. They cancel only under equal weights.
fn simplex_offsets(clusters: usize, dim: usize) -> Vec<Vec<f64>> {
    if clusters < 2 {
        return vec![vec![0.0; dim]];
    }
    let c = clusters as f64;
    let norm = (c / (c - 1.0)).sqrt();
    (0..clusters)
        .map(|j| {
            let mut v = vec![0.0; dim];
            for m in 0..clusters {
                let e = if m == j { 1.0 } else { 0.0 };
                v[2 + m] = norm * (e - 1.0 / c);
            }
            v
        })
        .collect()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unit vectors in axes 2 and 3 whose `shares`-weighted sum is zero: the
/// edge directions of a polygon inscribed in a circle with edge lengths
/// `shares`. Needs every share strictly below half the total.
fn balanced_offsets(shares: &[f64], dim: usize) -> Option<Vec<Vec<f64>>> {
    if shares.len() < 3 || dim < 4 {
        return None;
    }
    let total: f64 = shares.iter().sum();
    let (big, &max) = shares.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if max >= 0.5 * total {
        return None;
    }
    let arc = |w: f64, r: f64| 2.0 * (w / (2.0 * r)).min(1.0).asin();
    let others = |r: f64| -> f64 {
        shares
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != big)
            .map(|(_, &w)| arc(w, r))
            .sum()
    };
    let r_min = max / 2.0;
    let r_max = total;
    // Centre inside the polygon iff the arcs reach a full turn at the
    // smallest admissible radius.
    let radius = if others(r_min) + PI >= 2.0 * PI {
        bisect(r_min, r_max, |r| others(r) + arc(max, r) - 2.0 * PI)
    } else {
        bisect(r_min, r_max, |r| arc(max, r) - others(r))
    };
    // Walk the non-maximal edges around the circle; the closing edge back
    // to the start is the maximal one.
    let mut offsets = vec![vec![0.0; dim]; shares.len()];
    let mut angle = 0.0f64;
    let start = (radius, 0.0);
    let mut at = start;
    for (j, &w) in shares.iter().enumerate() {
        if j == big {
            continue;
        }
        angle += arc(w, radius);
        let next = (radius * angle.cos(), radius * angle.sin());
        let (dx, dy) = (next.0 - at.0, next.1 - at.1);
        let len = dx.hypot(dy);
        offsets[j][2] = dx / len;
        offsets[j][3] = dy / len;
        at = next;
    }
    let (dx, dy) = (start.0 - at.0, start.1 - at.1);
    let len = dx.hypot(dy);
    offsets[big][2] = dx / len;
    offsets[big][3] = dy / len;
    Some(offsets)
}

fn plant(spec: &WorldSpec, plan: &DatasetPlan) -> Result<Planted> {
    let dim = spec.embedding_dim;
    let n = spec.records_per_dataset;
    let weights: BTreeMap<String, f64> = match &plan.cluster_weights {
        Some(w) => w.iter().enumerate().map(|(j, &x)| (format!("c{j:03}"), x)).collect(),
        None => (0..plan.clusters).map(|j| (format!("c{j:03}"), 1.0)).collect(),
    };
    let sizes: Vec<usize> = allocate(&weights, n as u64, false)?
        .into_values()
        .map(|s| s as usize)
        .collect();
    if sizes.contains(&0) {
        return Err(Error::InvalidSpec(format!(
            "a cluster receives no records with {n} records per dataset"
        )));
    }
    let shares: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
    let offsets = balanced_offsets(&shares, dim).unwrap_or_else(|| simplex_offsets(plan.clusters, dim));
    let directions = [plan.question_angle, plan.answer_angle, plan.image_angle].map(|a| direction(a, dim));

    // Closed-form question centroid: every cluster point has norm
    // sqrt(1 + spread^2) because the offset is orthogonal to the direction.
    let shrink = (1.0 + plan.spread * plan.spread).sqrt();
    let mut q_centroid = vec![0.0; dim];
    for (size, offset) in sizes.iter().zip(&offsets) {
        let share = *size as f64 / n as f64;
        for (c, (d, o)) in q_centroid.iter_mut().zip(directions[0].iter().zip(offset)) {
            *c += share * (d + plan.spread * o) / shrink;
        }
    }
    let centroids = [q_centroid, directions[1].clone(), directions[2].clone()];

    // Distinct cluster points exist only with spread > 0. Each point in a
    // cluster of two or more has silhouette exactly 1; singletons score 0.
    let diversity = if plan.clusters < 2 || plan.spread == 0.0 {
        0.0
    } else {
        let in_groups: usize = sizes.iter().filter(|&&s| s >= 2).sum();
        let sil = in_groups as f64 / n as f64;
        let h = if sizes.iter().all(|&s| s == sizes[0]) {
            1.0
        } else {
            let raw: f64 = sizes
                .iter()
                .map(|&s| {
                    let p = s as f64 / n as f64;
                    -p * p.ln()
                })
                .sum();
            raw / (sizes.len() as f64).ln()
        };
        sil + h
    };
    Ok(Planted {
        sizes,
        offsets,
        directions,
        centroids,
        perplexity: (-plan.mean_logprob).exp(),
        diversity,
    })
}

fn records_for(spec: &WorldSpec, d: usize, plan: &DatasetPlan, planted: &Planted) -> Vec<SampleRecord> {
    let dim = spec.embedding_dim;
    let id = WorldSpec::dataset_id(d);
    let mut rng = rng::stream(spec.seed, rng::STREAM_SYNTH + 1 + d as u64);
    let mut jittered = |base: &[f64]| -> Vec<f64> {
        if spec.jitter == 0.0 {
            return base.to_vec();
        }
        base.iter()
            .map(|x| {
                let g: f64 = StandardNormal.sample(&mut rng);
                x + spec.jitter * g
            })
            .collect()
    };
    let mut out = Vec::with_capacity(spec.records_per_dataset);
    for (j, &size) in planted.sizes.iter().enumerate() {
        let centre: Vec<f64> = (0..dim)
            .map(|i| planted.directions[0][i] + plan.spread * planted.offsets[j][i])
            .collect();
        for _ in 0..size {
            let r = out.len();
            out.push(SampleRecord {
                id: format!("{id}-{r:05}"),
                q_emb: jittered(&centre),
                a_emb: jittered(&planted.directions[1]),
                i_emb: jittered(&planted.directions[2]),
                ans_logprobs: vec![plan.mean_logprob; spec.answer_tokens],
                question_text: None,
                answer_text: None,
                producer: None,
            });
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A generated world held in memory.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub sets: Vec<SampleSet>,
    /// Closed-form influence scores from the planted parameters.
    pub planted_scores: LabeledMatrix,
    /// Planted ground-truth improvements.
    pub observed: LabeledMatrix,
}

impl World {
    pub fn ids(&self) -> Vec<String> {
        (0..self.spec.n_datasets).map(WorldSpec::dataset_id).collect()
    }
}

pub fn build_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let plans = spec.plans();
    let planted: Vec<Planted> = plans.iter().map(|p| plant(spec, p)).collect::<Result<_>>()?;
    let sets = plans
        .par_iter()
        .zip(&planted)
        .enumerate()
        .map(|(d, (plan, p))| {
            SampleSet::new(
                WorldSpec::dataset_id(d),
                spec.embedding_dim,
                records_for(spec, d, plan, p),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let n = spec.n_datasets;
    let mut scores = vec![vec![0.0; n]; n];
    for (s, ps) in planted.iter().enumerate() {
        for (t, pt) in planted.iter().enumerate() {
            let mut m = 1.0;
            for f in 0..3 {
                m *= dot(&ps.centroids[f], &pt.centroids[f]);
            }
            m *= ps.perplexity;
            m *= ps.diversity;
            scores[s][t] = m / pt.perplexity;
        }
    }
    let mut rng = rng::stream(spec.seed, rng::STREAM_SYNTH + 1 + n as u64);
    let sign = if spec.reverse { -1.0 } else { 1.0 };
    let deltas = scores
        .iter()
        .map(|row| {
            row.iter()
                .map(|&m| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    sign * spec.scale * m * (spec.noise * eps).exp()
                })
                .collect()
        })
        .collect();
    let ids: Vec<String> = (0..n).map(WorldSpec::dataset_id).collect();
    Ok(World {
        spec: spec.clone(),
        sets,
        planted_scores: LabeledMatrix::new(ids.clone(), ids.clone(), scores)?,
        observed: LabeledMatrix::new(ids.clone(), ids, deltas)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWorld {
    pub manifest_path: PathBuf,
    pub observed_path: PathBuf,
    pub observed: LabeledMatrix,
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, one `<id>.jsonl` per dataset and the planted
/// improvements as `observed.csv` into `out_dir`.
pub fn generate_world(spec: &WorldSpec, out_dir: &Path) -> Result<GeneratedWorld> {
    let world = build_world(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for set in &world.sets {
        let file = format!("{}.jsonl", set.dataset_id());
        let mut body = String::new();
        for r in set.records() {
            body.push_str(&serde_json::to_string(r).expect("records serialize"));
            body.push('\n');
        }
        write(&out_dir.join(&file), &body)?;
        entries.push(serde_json::json!({
            "id": set.dataset_id(), "role": "both", "samples_path": file, "split": "train",
        }));
    }
    let manifest = serde_json::json!({ "embedding_dim": spec.embedding_dim, "datasets": entries });
    let manifest_path = out_dir.join("manifest.json");
    write(
        &manifest_path,
        &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"),
    )?;
    let observed_path = out_dir.join("observed.csv");
    write(&observed_path, &world.observed.to_csv_string(NumberFormat::RoundTrip))?;
    Ok(GeneratedWorld {
        manifest_path,
        observed_path,
        observed: world.observed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dropped: Option<Factor>,
    pub report: TauReport,
}

/// Re-evaluates the two-way tau once with the full score and once per
/// single dropped factor.
pub fn ablation_sweep(
    summaries: &[DatasetSummary],
    observed: &LabeledMatrix,
    drops: &[Factor],
    exclude_diagonal: bool,
) -> Result<Vec<AblationRow>> {
    std::iter::once(None)
        .chain(drops.iter().copied().map(Some))
        .map(|dropped| {
            let drop: Vec<Factor> = dropped.into_iter().collect();
            let predicted = ablated_matrix(summaries, observed.sources(), observed.targets(), &drop)?;
            Ok(AblationRow {
                dropped,
                report: two_way_eval(&predicted, observed, exclude_diagonal)?,
            })
        })
        .collect()
}
