//! Rank-aggregation filter for generated data pairs.
//!
//! Each pair carries visual scores (CLIP-I, DINO), a vision-language judge
//! score and a description-based score. Each of the three channels is ranked
//! separately (rank 1 = most similar) and the final rank is the mean of the
//! three channel ranks.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of pairs kept by default.
pub const DEFAULT_TOP_FRACTION: f64 = 0.245;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    pub clip_i: f64,
    pub dino: f64,
    pub s_vlm: f64,
    pub s_ds: f64,
}

impl ScoreRecord {
    fn check(&self) -> Result<()> {
        let scores = [self.clip_i, self.dino, self.s_vlm, self.s_ds];
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidRecord(format!("non-finite score in pair {:?}", self.pair_id)));
        }
        if !(-1.0..=1.0).contains(&self.clip_i) || !(-1.0..=1.0).contains(&self.dino) {
            return Err(Error::InvalidRecord(format!(
                "clip_i and dino of pair {:?} must lie in [-1, 1]",
                self.pair_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub pair_id: String,
    pub r_v: f64,
    pub r_vlm: f64,
    pub r_ds: f64,
    pub rank: f64,
}

fn validate(records: &[ScoreRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        r.check()?;
        if !seen.insert(r.pair_id.as_str()) {
            return Err(Error::InvalidRecord(format!("duplicate pair_id {:?}", r.pair_id)));
        }
    }
    Ok(())
}

fn min_max_normalize(values: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let (lo, hi) = values.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        values.map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        values.map(|_| 0.5).collect()
    }
}

/// Visual score per record: mean of min-max normalized CLIP-I and DINO.
/// A constant channel normalizes to 0.5.
pub fn combine_visual(records: &[ScoreRecord]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let clip = min_max_normalize(records.iter().map(|r| r.clip_i));
    let dino = min_max_normalize(records.iter().map(|r| r.dino));
    Ok(clip.iter().zip(&dino).map(|(c, d)| (c + d) / 2.0).collect())
}

/// Descending fractional ranks: the largest value gets 1 and tied values
/// share the mean of the positions they occupy.
pub fn fractional_rank(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end, averaged.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn by_rank_then_id(a: &RankedRecord, b: &RankedRecord) -> Ordering {
    a.rank.total_cmp(&b.rank).then_with(|| a.pair_id.cmp(&b.pair_id))
}

/// Ranks every channel and returns records sorted by mean rank, ties broken
/// by `pair_id`.
pub fn aggregate(records: &[ScoreRecord]) -> Result<Vec<RankedRecord>> {
    validate(records)?;
    let r_v = fractional_rank(&combine_visual(records)?);
    let r_vlm = fractional_rank(&records.iter().map(|r| r.s_vlm).collect::<Vec<_>>());
    let r_ds = fractional_rank(&records.iter().map(|r| r.s_ds).collect::<Vec<_>>());

    let mut ranked: Vec<RankedRecord> = records
        .iter()
        .enumerate()
        .map(|(i, r)| RankedRecord {
            pair_id: r.pair_id.clone(),
            r_v: r_v[i],
            r_vlm: r_vlm[i],
            r_ds: r_ds[i],
            rank: (r_v[i] + r_vlm[i] + r_ds[i]) / 3.0,
        })
        .collect();
    ranked.sort_by(by_rank_then_id);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionPolicy {
    TopK(usize),
    /// Keeps `floor(n * fraction)` records.
    TopFraction(f64),
    /// Keeps records whose mean rank is at most the threshold.
    RankThreshold(f64),
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::TopFraction(DEFAULT_TOP_FRACTION)
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionPolicy::TopK(_) => Ok(()),
            SelectionPolicy::TopFraction(f) if (0.0..=1.0).contains(&f) => Ok(()),
            SelectionPolicy::TopFraction(f) => Err(Error::BadPolicy(format!("fraction {f} outside [0, 1]"))),
            SelectionPolicy::RankThreshold(t) if t.is_finite() => Ok(()),
            SelectionPolicy::RankThreshold(t) => Err(Error::BadPolicy(format!("rank threshold {t} is not finite"))),
        }
    }
}

/// Number of leading records of an aggregate-sorted list kept by `policy`.
pub fn kept_count(ranked: &[RankedRecord], policy: SelectionPolicy) -> Result<usize> {
    policy.validate()?;
    Ok(match policy {
        SelectionPolicy::TopK(k) => k.min(ranked.len()),
        SelectionPolicy::TopFraction(f) => ((ranked.len() as f64 * f).floor() as usize).min(ranked.len()),
        SelectionPolicy::RankThreshold(t) => ranked.partition_point(|r| r.rank <= t),
    })
}

/// Pair ids kept by `policy`, in rank order. `ranked` must be the output of
/// [`aggregate`].
pub fn select(ranked: &[RankedRecord], policy: SelectionPolicy) -> Result<Vec<String>> {
    let n = kept_count(ranked, policy)?;
    Ok(ranked[..n].iter().map(|r| r.pair_id.clone()).collect())
}

/// Output line: a ranked record plus its selection flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOutput {
    #[serde(flatten)]
    pub record: RankedRecord,
    pub kept: bool,
}

pub fn ranked_outputs(ranked: Vec<RankedRecord>, policy: SelectionPolicy) -> Result<Vec<RankedOutput>> {
    let n = kept_count(&ranked, policy)?;
    Ok(ranked.into_iter().enumerate().map(|(i, record)| RankedOutput { record, kept: i < n }).collect())
}

/// Parses score JSONL. Blank lines are skipped; errors name the 1-based line.
pub fn read_scores(reader: impl BufRead) -> std::result::Result<Vec<ScoreRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?;
        rec.check().map_err(|e| (i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
