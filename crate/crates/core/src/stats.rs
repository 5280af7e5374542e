//! Multimodal perplexity and cross-dataset expected cosine similarity.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SampleRecord, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Question,
    Answer,
    Image,
}

impl FieldKind {
    pub const ALL: [FieldKind; 3] = [FieldKind::Question, FieldKind::Answer, FieldKind::Image];

    pub fn json_name(self) -> &'static str {
        match self {
            FieldKind::Question => "q_emb",
            FieldKind::Answer => "a_emb",
            FieldKind::Image => "i_emb",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.json_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTriple {
    pub q_sim: f64,
    pub a_sim: f64,
    pub i_sim: f64,
}

impl SimilarityTriple {
    pub fn get(&self, field: FieldKind) -> f64 {
        match field {
            FieldKind::Question => self.q_sim,
            FieldKind::Answer => self.a_sim,
            FieldKind::Image => self.i_sim,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Mean natural-log probability over a record's answer tokens.
pub fn sample_mean_logprob(record: &SampleRecord) -> f64 {
    let lp = &record.ans_logprobs;
    lp.iter().sum::<f64>() / lp.len() as f64
}

/// `exp(-mean_records(mean_tokens(log p)))`: tokens are averaged within each
/// record first, then records are averaged with equal weight.
pub fn dataset_perplexity(set: &SampleSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(set.dataset_id().to_string()));
    }
    let total: f64 = set.records().iter().map(sample_mean_logprob).sum();
    Ok((-total / set.len() as f64).exp())
}

pub fn normalized_field(record: &SampleRecord, field: FieldKind) -> Vec<f64> {
    l2_normalize(record.field(field))
}

/// Mean of the unit-normalized field embeddings.
pub fn field_centroid(set: &SampleSet, field: FieldKind) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(set.dataset_id().to_string()));
    }
    let mut acc = vec![0.0; set.embedding_dim()];
    for record in set.records() {
        let v = record.field(field);
        let n = norm(v);
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / n;
        }
    }
    let count = set.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

/// Cosine similarity between independently drawn items of `a` and `b`,
/// evaluated as the dot product of the two field centroids.
pub fn expected_cosine(a: &SampleSet, b: &SampleSet, field: FieldKind) -> Result<f64> {
    if a.embedding_dim() != b.embedding_dim() {
        return Err(Error::DimensionMismatch {
            left: a.embedding_dim(),
            right: b.embedding_dim(),
        });
    }
    Ok(dot(&field_centroid(a, field)?, &field_centroid(b, field)?))
}

/// Quadratic reference for [`expected_cosine`]: averages the cosine of every
/// cross-set pair computed from the raw embeddings.
pub fn pairwise_expected_cosine_oracle(a: &SampleSet, b: &SampleSet, field: FieldKind) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyDataset(a.dataset_id().to_string()));
    }
    if b.is_empty() {
        return Err(Error::EmptyDataset(b.dataset_id().to_string()));
    }
    let mut total = 0.0;
    for u in a.records() {
        for v in b.records() {
            let (u, v) = (u.field(field), v.field(field));
            let uv: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let uu: f64 = u.iter().map(|x| x * x).sum();
            let vv: f64 = v.iter().map(|x| x * x).sum();
            total += uv / (uu.sqrt() * vv.sqrt());
        }
    }
    Ok(total / (a.len() * b.len()) as f64)
}

pub fn similarity_triple(source: &SampleSet, target: &SampleSet) -> Result<SimilarityTriple> {
    Ok(SimilarityTriple {
        q_sim: expected_cosine(source, target, FieldKind::Question)?,
        a_sim: expected_cosine(source, target, FieldKind::Answer)?,
        i_sim: expected_cosine(source, target, FieldKind::Image)?,
    })
}
