//! Relative improvement, Kendall's tau-b, and the two-way ranking protocol
//! that compares predicted influence against observed improvements.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LabeledMatrix;
use crate::FORMAT_VERSION;

/// `(tuned - base) / base`, as a fraction.
pub fn relative_improvement(base: f64, tuned: f64) -> Result<f64> {
    if base == 0.0 {
        return Err(Error::ZeroBaseScore);
    }
    Ok((tuned - base) / base)
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite inputs")
}

/// Merge sort that returns the number of inversions (swaps an insertion
/// sort would perform).
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if cmp(v[j], v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Sum of `t(t-1)/2` over runs of equal values in a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));

    let total = (n as u64) * (n as u64 - 1) / 2;
    let x_ties = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let joint_ties = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let y_ties = tied_pairs(&ys);

    if x_ties == total || y_ties == total {
        return Err(Error::DegenerateInput("all values tied".into()));
    }
    // concordant - discordant
    let numer = total as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    // Integer product keeps tau exactly +-1 for perfectly (anti-)aligned input.
    let denom = ((u128::from(total - x_ties) * u128::from(total - y_ties)) as f64).sqrt();
    Ok((numer / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Target,
    Source,
}

/// A row or column whose tau is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateEntry {
    pub axis: Axis,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub format_version: String,
    pub exclude_diagonal: bool,
    /// Rank agreement over sources, one entry per target.
    pub per_target: BTreeMap<String, f64>,
    /// Rank agreement over targets, one entry per source.
    pub per_source: BTreeMap<String, f64>,
    pub mean_target: f64,
    pub mean_source: f64,
    #[serde(rename = "final")]
    pub final_tau: f64,
    pub degenerate: Vec<DegenerateEntry>,
}

impl TauReport {
    pub fn warning_count(&self) -> usize {
        self.degenerate.len()
    }
}

fn same_ids(a: &[String], b: &[String]) -> Result<()> {
    for id in a {
        if !b.contains(id) {
            return Err(Error::IdMismatch(id.clone()));
        }
    }
    for id in b {
        if !a.contains(id) {
            return Err(Error::IdMismatch(id.clone()));
        }
    }
    Ok(())
}

/// Taus for each row of `predicted` against the same row of `observed`.
/// Both matrices share ids and ordering.
fn row_taus(
    predicted: &LabeledMatrix,
    observed: &LabeledMatrix,
    exclude_diagonal: bool,
    axis: Axis,
    taus: &mut BTreeMap<String, f64>,
    ordered: &mut Vec<f64>,
    degenerate: &mut Vec<DegenerateEntry>,
) {
    for (i, row_id) in predicted.sources().iter().enumerate() {
        let keep: Vec<usize> = (0..predicted.targets().len())
            .filter(|&j| !(exclude_diagonal && predicted.targets()[j] == *row_id))
            .collect();
        let p: Vec<f64> = keep.iter().map(|&j| predicted.values()[i][j]).collect();
        let o: Vec<f64> = keep.iter().map(|&j| observed.values()[i][j]).collect();
        match kendall_tau(&p, &o) {
            Ok(t) => {
                taus.insert(row_id.clone(), t);
                ordered.push(t);
            }
            Err(e) => degenerate.push(DegenerateEntry {
                axis,
                id: row_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per-target taus rank sources within each column; per-source taus rank
/// targets within each row. Rows or columns with an undefined tau are
/// listed in `degenerate` and left out of the means; a mean over no entries
/// is 0.
pub fn two_way_eval(predicted: &LabeledMatrix, observed: &LabeledMatrix, exclude_diagonal: bool) -> Result<TauReport> {
    same_ids(predicted.sources(), observed.sources())?;
    same_ids(predicted.targets(), observed.targets())?;
    let predicted = predicted.reindex(observed.sources(), observed.targets())?;

    let mut degenerate = Vec::new();
    let mut per_target = BTreeMap::new();
    let mut target_taus = Vec::new();
    row_taus(
        &predicted.transpose(),
        &observed.transpose(),
        exclude_diagonal,
        Axis::Target,
        &mut per_target,
        &mut target_taus,
        &mut degenerate,
    );
    let mut per_source = BTreeMap::new();
    let mut source_taus = Vec::new();
    row_taus(
        &predicted,
        observed,
        exclude_diagonal,
        Axis::Source,
        &mut per_source,
        &mut source_taus,
        &mut degenerate,
    );
    let mean_target = mean(&target_taus);
    let mean_source = mean(&source_taus);
    Ok(TauReport {
        format_version: FORMAT_VERSION.to_string(),
        exclude_diagonal,
        per_target,
        per_source,
        mean_target,
        mean_source,
        final_tau: (mean_target + mean_source) / 2.0,
        degenerate,
    })
}
