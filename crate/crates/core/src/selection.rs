//! Budgeted reweighting of source datasets and score-guided selection of
//! individual candidate records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SampleRecord, SampleSet};
use crate::metric::{instance_score, DatasetSummary};
use crate::rng;
use crate::FORMAT_VERSION;

/// Resolution used when comparing quota remainders, so that remainders
/// differing only by floating-point noise count as ties.
const REMAINDER_QUANTUM: f64 = 1e-9;

/// Splits `budget` across sources in proportion to their scores using
/// largest-remainder apportionment. Leftover units go to the largest
/// remainders, ties broken by ascending source id.
///
/// With `floor_negatives`, negative scores are treated as 0; otherwise a
/// negative score is an error.
pub fn allocate(scores: &BTreeMap<String, f64>, budget: u64, floor_negatives: bool) -> Result<BTreeMap<String, u64>> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let mut weights = Vec::with_capacity(scores.len());
    for (id, &s) in scores {
        if !s.is_finite() {
            return Err(Error::InvalidScore {
                id: id.clone(),
                reason: "not finite".into(),
            });
        }
        if s < 0.0 && !floor_negatives {
            return Err(Error::InvalidScore {
                id: id.clone(),
                reason: format!("negative score {s}"),
            });
        }
        weights.push((id, s.max(0.0)));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::AllScoresNonPositive);
    }

    let n = budget as f64;
    let mut counts = BTreeMap::new();
    let mut leftovers = Vec::new();
    let mut assigned = 0u64;
    for &(id, w) in &weights {
        let quota = n * (w / total);
        let base = (quota + REMAINDER_QUANTUM * quota.max(1.0)).floor();
        let remainder = (quota - base).max(0.0);
        let base = base as u64;
        assigned += base;
        counts.insert(id.clone(), base);
        if w > 0.0 {
            leftovers.push(((remainder / REMAINDER_QUANTUM).round() as i64, id));
        }
    }
    // Largest remainder first; BTreeMap iteration already sorted ids.
    leftovers.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let missing = budget.saturating_sub(assigned);
    for (_, id) in leftovers.iter().cycle().take(missing as usize) {
        *counts.get_mut(*id).expect("id from scores") += 1;
    }
    debug_assert_eq!(counts.values().sum::<u64>(), budget);
    Ok(counts)
}

/// What to do when a source has fewer records than its quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortPoolPolicy {
    #[default]
    ErrorIfShort,
    /// Take the whole pool, then draw the remainder with replacement.
    WithReplacementTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub format_version: String,
    pub target_id: String,
    pub budget: u64,
    pub seed: u64,
    pub per_source: BTreeMap<String, u64>,
    pub sampled_ids: BTreeMap<String, Vec<String>>,
}

/// Uniform draw of `count` distinct indices in `0..len`: the first `count`
/// positions of a Fisher–Yates shuffle over file order.
fn fisher_yates_prefix(len: usize, count: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..count.min(len) {
        let j = i + rng::below(rng, (len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(count.min(len));
    idx
}

/// Draws each source's quota from its records. Each source gets its own
/// random stream keyed by `(seed, source id)`.
pub fn sample_allocation(
    target_id: &str,
    counts: &BTreeMap<String, u64>,
    sources: &BTreeMap<String, SampleSet>,
    seed: u64,
    policy: ShortPoolPolicy,
) -> Result<AllocationPlan> {
    let mut sampled_ids = BTreeMap::new();
    for (id, &count) in counts {
        if count == 0 {
            sampled_ids.insert(id.clone(), Vec::new());
            continue;
        }
        let set = sources.get(id).ok_or_else(|| Error::UnknownDatasetId(id.clone()))?;
        let records = set.records();
        let want = count as usize;
        if want > records.len() && policy == ShortPoolPolicy::ErrorIfShort {
            return Err(Error::InsufficientPool {
                source_id: id.clone(),
                requested: count,
                available: records.len(),
            });
        }
        let mut rng = rng::keyed_stream(seed, id);
        let mut picks = fisher_yates_prefix(records.len(), want, &mut rng);
        while picks.len() < want {
            picks.push(rng::below(&mut rng, records.len() as u64) as usize);
        }
        sampled_ids.insert(id.clone(), picks.into_iter().map(|i| records[i].id.clone()).collect());
    }
    Ok(AllocationPlan {
        format_version: FORMAT_VERSION.to_string(),
        target_id: target_id.to_string(),
        budget: counts.values().sum(),
        seed,
        per_source: counts.clone(),
        sampled_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "parameter", rename_all = "snake_case")]
pub enum SelectionMode {
    TopK(usize),
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedItem {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSet {
    pub format_version: String,
    pub target_id: String,
    #[serde(flatten)]
    pub mode: SelectionMode,
    pub pool_size: usize,
    /// Sorted by score descending, then id ascending.
    pub items: Vec<SelectedItem>,
}

impl SelectedSet {
    /// Selected item counts per producer tag; untagged items are omitted.
    pub fn producer_composition(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in self.items.iter().filter_map(|i| i.producer.as_ref()) {
            *out.entry(p.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Scores every candidate against the target and keeps the top `K` or all
/// scores at or above a threshold.
pub fn select_instances(pool: &[SampleRecord], target: &DatasetSummary, mode: SelectionMode) -> Result<SelectedSet> {
    match mode {
        SelectionMode::TopK(0) => return Err(Error::InvalidParameter("K must be at least 1".into())),
        SelectionMode::Threshold(t) if !t.is_finite() => {
            return Err(Error::InvalidParameter("threshold must be finite".into()))
        }
        _ => {}
    }
    let mut items = pool
        .iter()
        .map(|r| {
            Ok(SelectedItem {
                id: r.id.clone(),
                score: instance_score(r, target)?,
                producer: r.producer.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    match mode {
        SelectionMode::TopK(k) => items.truncate(k),
        SelectionMode::Threshold(t) => items.retain(|i| i.score >= t),
    }
    Ok(SelectedSet {
        format_version: FORMAT_VERSION.to_string(),
        target_id: target.dataset_id.clone(),
        mode,
        pool_size: pool.len(),
        items,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRules {
    pub max_answer_tokens: usize,
    pub special_tokens: Vec<String>,
}

impl ValidityRules {
    pub fn new(max_answer_tokens: usize) -> Self {
        ValidityRules {
            max_answer_tokens,
            special_tokens: ["<image>", "<|", "|>", "</s>", "<s>", "<unk>", "<pad>"]
                .map(String::from)
                .to_vec(),
        }
    }

    fn rejects(&self, r: &SampleRecord) -> Option<&'static str> {
        let texts = [&r.question_text, &r.answer_text];
        if texts.iter().any(|t| t.as_deref().is_some_and(|s| s.trim().is_empty())) {
            return Some("empty text");
        }
        if r.ans_logprobs.len() > self.max_answer_tokens {
            return Some("answer too long");
        }
        let special = texts
            .iter()
            .filter_map(|t| t.as_deref())
            .any(|s| self.special_tokens.iter().any(|tok| s.contains(tok.as_str())));
        special.then_some("special token")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPool {
    pub kept: Vec<SampleRecord>,
    pub dropped: Vec<(String, &'static str)>,
}

/// Drops records with empty text fields, overlong answers, or special-token
/// markup in their text. Order is preserved.
pub fn validity_filter(pool: &SampleSet, rules: &ValidityRules) -> FilteredPool {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in pool.records() {
        match rules.rejects(r) {
            Some(reason) => dropped.push((r.id.clone(), reason)),
            None => kept.push(r.clone()),
        }
    }
    FilteredPool { kept, dropped }
}
