//! Dataset-level and instance-level influence scores.
//!
//! The dataset score multiplies three cross-dataset similarities, the
//! source perplexity and the source diversity, then divides by the target
//! perplexity. The instance score applies the same product to a single
//! record without the diversity factor.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::{diversity_score, DiversityScore, FieldPolicy, DEFAULT_K};
use crate::error::{Error, Result};
use crate::ingest::{Role, SampleRecord, SampleSet};
use crate::matrix::LabeledMatrix;
use crate::stats::{dataset_perplexity, dot, field_centroid, normalized_field, sample_mean_logprob, FieldKind};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub k: usize,
    pub seed: u64,
    pub field_policy: FieldPolicy,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            k: DEFAULT_K,
            seed: 42,
            field_policy: FieldPolicy::Question,
        }
    }
}

impl SummaryConfig {
    pub fn fingerprint(&self) -> String {
        format!(
            "v{FORMAT_VERSION};k={};seed={};policy={}",
            self.k,
            self.seed,
            self.field_policy.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub question: Vec<f64>,
    pub answer: Vec<f64>,
    pub image: Vec<f64>,
}

impl Centroids {
    pub fn get(&self, field: FieldKind) -> &[f64] {
        match field {
            FieldKind::Question => &self.question,
            FieldKind::Answer => &self.answer,
            FieldKind::Image => &self.image,
        }
    }
}

/// Everything the influence score needs to know about one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub format_version: String,
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub n: usize,
    pub embedding_dim: usize,
    pub centroids: Centroids,
    pub perplexity: f64,
    pub diversity: DiversityScore,
    pub config: SummaryConfig,
    pub config_fingerprint: String,
}

impl DatasetSummary {
    /// Parses and checks a serialized summary.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let s: DatasetSummary = serde_json::from_str(text).map_err(|e| Error::MalformedSummary(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::MalformedSummary(format!("{}: {m}", self.dataset_id)));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.perplexity > 0.0 && self.perplexity.is_finite()) {
            return bad("perplexity must be positive and finite");
        }
        for f in FieldKind::ALL {
            let c = self.centroids.get(f);
            if c.len() != self.embedding_dim || c.iter().any(|x| !x.is_finite()) {
                return bad("centroid dimension or values invalid");
            }
        }
        let d = &self.diversity;
        if !(d.silhouette.is_finite() && d.entropy.is_finite()) || d.total != d.silhouette + d.entropy {
            return bad("diversity fields inconsistent");
        }
        if self.config_fingerprint != self.config.fingerprint() {
            return bad("config_fingerprint does not match config");
        }
        Ok(())
    }
}

pub fn summarize(set: &SampleSet, config: &SummaryConfig) -> Result<DatasetSummary> {
    Ok(DatasetSummary {
        format_version: FORMAT_VERSION.to_string(),
        dataset_id: set.dataset_id().to_string(),
        role: None,
        n: set.len(),
        embedding_dim: set.embedding_dim(),
        centroids: Centroids {
            question: field_centroid(set, FieldKind::Question)?,
            answer: field_centroid(set, FieldKind::Answer)?,
            image: field_centroid(set, FieldKind::Image)?,
        },
        perplexity: dataset_perplexity(set)?,
        diversity: diversity_score(set, config.k, config.seed, config.field_policy)?,
        config: *config,
        config_fingerprint: config.fingerprint(),
    })
}

/// A multiplicative factor of the dataset score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    QSim,
    ASim,
    ISim,
    Ppl,
    Div,
}

impl Factor {
    pub const ALL: [Factor; 5] = [Factor::QSim, Factor::ASim, Factor::ISim, Factor::Ppl, Factor::Div];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::QSim => "qsim",
            Factor::ASim => "asim",
            Factor::ISim => "isim",
            Factor::Ppl => "ppl",
            Factor::Div => "div",
        }
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Factor::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown factor {s:?}")))
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

/// The dataset score with every factor in `drop` replaced by 1. Dropping
/// `Ppl` removes the source/target perplexity ratio as a whole.
pub fn ablated_score(source: &DatasetSummary, target: &DatasetSummary, drop: &[Factor]) -> Result<f64> {
    check_dims(source.embedding_dim, target.embedding_dim)?;
    let keep = |f| !drop.contains(&f);
    let sim = |f| dot(source.centroids.get(f), target.centroids.get(f));
    let mut score = 1.0;
    if keep(Factor::QSim) {
        score *= sim(FieldKind::Question);
    }
    if keep(Factor::ASim) {
        score *= sim(FieldKind::Answer);
    }
    if keep(Factor::ISim) {
        score *= sim(FieldKind::Image);
    }
    if keep(Factor::Ppl) {
        score *= source.perplexity;
    }
    if keep(Factor::Div) {
        score *= source.diversity.total;
    }
    if keep(Factor::Ppl) {
        score /= target.perplexity;
    }
    Ok(score)
}

pub fn influence_score(source: &DatasetSummary, target: &DatasetSummary) -> Result<f64> {
    ablated_score(source, target, &[])
}

/// Score of a single candidate record against a target dataset.
pub fn instance_score(record: &SampleRecord, target: &DatasetSummary) -> Result<f64> {
    for f in FieldKind::ALL {
        check_dims(record.field(f).len(), target.embedding_dim)?;
    }
    let sim = |f| dot(&normalized_field(record, f), target.centroids.get(f));
    let ppl = (-sample_mean_logprob(record)).exp();
    let mut score = 1.0;
    score *= sim(FieldKind::Question);
    score *= sim(FieldKind::Answer);
    score *= sim(FieldKind::Image);
    score *= ppl;
    Ok(score / target.perplexity)
}

/// Scores every (source, target) pair, diagonal included.
pub fn influence_matrix(summaries: &[DatasetSummary], sources: &[String], targets: &[String]) -> Result<LabeledMatrix> {
    ablated_matrix(summaries, sources, targets, &[])
}

pub fn ablated_matrix(
    summaries: &[DatasetSummary],
    sources: &[String],
    targets: &[String],
    drop: &[Factor],
) -> Result<LabeledMatrix> {
    let by_id: BTreeMap<&str, &DatasetSummary> = summaries.iter().map(|s| (s.dataset_id.as_str(), s)).collect();
    let lookup = |id: &String| {
        by_id
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::UnknownDatasetId(id.clone()))
    };
    let rows: Vec<&DatasetSummary> = sources.iter().map(lookup).collect::<Result<_>>()?;
    let cols: Vec<&DatasetSummary> = targets.iter().map(lookup).collect::<Result<_>>()?;
    let values = rows
        .par_iter()
        .map(|s| {
            cols.iter()
                .map(|t| ablated_score(s, t, drop))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledMatrix::new(sources.to_vec(), targets.to_vec(), values)
}
