//! Per-position comparison of a baseline audit against a refined one.
//!
//! Audits are matched by position id, so every report is invariant to the
//! order in which positions are listed.

mod token_class;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin::{median, MarginRecord};

pub use token_class::{classify_token, function_words, TokenClass};

/// Pairs of (baseline, polished) records, ordered by position id.
fn align<'a>(
    baseline: &'a [MarginRecord],
    polished: &'a [MarginRecord],
) -> Result<Vec<(&'a MarginRecord, &'a MarginRecord)>> {
    if baseline.len() != polished.len() {
        return Err(Error::data(format!(
            "audits differ in length: {} vs {}",
            baseline.len(),
            polished.len()
        )));
    }
    let mut b: Vec<&MarginRecord> = baseline.iter().collect();
    let mut p: Vec<&MarginRecord> = polished.iter().collect();
    b.sort_by_key(|r| r.position);
    p.sort_by_key(|r| r.position);
    for (x, y) in b.iter().zip(&p) {
        if x.position != y.position || x.target != y.target {
            return Err(Error::data(format!(
                "audits disagree at position {} (target {} vs position {} target {})",
                x.position, x.target, y.position, y.target
            )));
        }
    }
    if b.windows(2).any(|w| w[0].position == w[1].position) {
        return Err(Error::data("audit lists a position twice"));
    }
    Ok(b.into_iter().zip(p).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    Unchanged,
    WrongToRight,
    RightToWrong,
    /// Wrong before and after, with a different top-1.
    WrongToWrong,
}

pub fn transition(base: &MarginRecord, pol: &MarginRecord) -> Transition {
    match (base.top1 == pol.top1, base.correct, pol.correct) {
        (true, _, _) => Transition::Unchanged,
        (false, false, true) => Transition::WrongToRight,
        (false, true, false) => Transition::RightToWrong,
        _ => Transition::WrongToWrong,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnReport {
    pub total: usize,
    /// Positions whose top-1 changed.
    pub churned: usize,
    pub w2r: usize,
    pub r2w: usize,
    pub w2w: usize,
    /// `w2r / r2w`; absent when nothing went right-to-wrong.
    pub flip_ratio: Option<f64>,
    pub net_corrected: i64,
}

pub fn churn_report(baseline: &[MarginRecord], polished: &[MarginRecord]) -> Result<ChurnReport> {
    let pairs = align(baseline, polished)?;
    let (mut w2r, mut r2w, mut w2w) = (0, 0, 0);
    for (b, p) in &pairs {
        match transition(b, p) {
            Transition::WrongToRight => w2r += 1,
            Transition::RightToWrong => r2w += 1,
            Transition::WrongToWrong => w2w += 1,
            Transition::Unchanged => {}
        }
    }
    Ok(ChurnReport {
        total: pairs.len(),
        churned: w2r + r2w + w2w,
        w2r,
        r2w,
        w2w,
        flip_ratio: (r2w > 0).then(|| w2r as f64 / r2w as f64),
        net_corrected: w2r as i64 - r2w as i64,
    })
}

/// Positions that kept their top-1 but changed runner-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub total: usize,
    pub rotated: usize,
    pub rotated_wider: usize,
    /// Mean polished − baseline margin over rotated positions; 0 when none rotated.
    pub mean_margin_delta: f64,
}

pub fn rotation_report(baseline: &[MarginRecord], polished: &[MarginRecord]) -> Result<RotationReport> {
    let pairs = align(baseline, polished)?;
    let deltas: Vec<f64> = pairs
        .iter()
        .filter(|(b, p)| b.top1 == p.top1 && b.top2 != p.top2)
        .map(|(b, p)| p.margin - b.margin)
        .collect();
    Ok(RotationReport {
        total: pairs.len(),
        rotated: deltas.len(),
        rotated_wider: deltas.iter().filter(|&&d| d > 0.0).count(),
        mean_margin_delta: if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<f64>() / deltas.len() as f64
        },
    })
}

/// Lower edges of the margin bands after the first, in logit units.
pub const BAND_EDGES: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    /// Exclusive upper edge; `None` for the open top band.
    pub hi: Option<f64>,
    pub count: usize,
    pub correct: usize,
    /// `None` for an empty band.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    pub edges: Vec<f64>,
    pub bands: Vec<Band>,
    pub total: usize,
    pub overall_accuracy: f64,
}

/// Index of the half-open band `[lo, hi)` holding `margin`.
pub fn band_index(margin: f64) -> usize {
    BAND_EDGES.partition_point(|&e| e <= margin)
}

pub fn band_accuracy(audit: &[MarginRecord]) -> Result<BandTable> {
    if audit.is_empty() {
        return Err(Error::usage("band accuracy of an empty audit"));
    }
    let mut counts = [(0usize, 0usize); BAND_EDGES.len() + 1];
    for r in audit {
        let slot = &mut counts[band_index(r.margin)];
        slot.0 += 1;
        slot.1 += r.correct as usize;
    }
    let bands = counts
        .iter()
        .enumerate()
        .map(|(i, &(count, correct))| Band {
            lo: if i == 0 { 0.0 } else { BAND_EDGES[i - 1] },
            hi: BAND_EDGES.get(i).copied(),
            count,
            correct,
            accuracy: (count > 0).then(|| correct as f64 / count as f64),
        })
        .collect();
    let correct = audit.iter().filter(|r| r.correct).count();
    Ok(BandTable {
        edges: BAND_EDGES.to_vec(),
        bands,
        total: audit.len(),
        overall_accuracy: correct as f64 / audit.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub total: usize,
    /// Percentage (0–100) of positions whose margin grew.
    pub pct_wider: f64,
    pub mean_delta: f64,
    /// Nearest-rank median of the per-position deltas.
    pub median_delta: f64,
}

pub fn expansion_report(baseline: &[MarginRecord], polished: &[MarginRecord]) -> Result<ExpansionReport> {
    let pairs = align(baseline, polished)?;
    if pairs.is_empty() {
        return Err(Error::usage("expansion report of empty audits"));
    }
    let deltas: Vec<f64> = pairs.iter().map(|(b, p)| p.margin - b.margin).collect();
    let n = deltas.len() as f64;
    Ok(ExpansionReport {
        total: deltas.len(),
        pct_wider: 100.0 * deltas.iter().filter(|&&d| d > 0.0).count() as f64 / n,
        mean_delta: deltas.iter().sum::<f64>() / n,
        median_delta: median(&deltas).unwrap_or(0.0),
    })
}

/// Occurrences of each target id in an audit.
pub fn target_counts(audit: &[MarginRecord]) -> BTreeMap<u32, u64> {
    let mut counts = BTreeMap::new();
    for r in audit {
        *counts.entry(r.target).or_insert(0) += 1;
    }
    counts
}

/// Frequency buckets by target occurrence count: `(label, min, max inclusive)`.
pub const FREQUENCY_BUCKETS: [(&str, u64, Option<u64>); 5] = [
    ("1", 1, Some(1)),
    ("2-4", 2, Some(4)),
    ("5-19", 5, Some(19)),
    ("20-99", 20, Some(99)),
    ("100+", 100, None),
];

pub fn frequency_bucket(count: u64) -> Option<usize> {
    FREQUENCY_BUCKETS
        .iter()
        .position(|&(_, lo, hi)| count >= lo && hi.is_none_or(|h| count <= h))
}

/// Correction counts for one group of positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub positions: usize,
    pub baseline_accuracy: Option<f64>,
    pub polished_accuracy: Option<f64>,
    /// Polished minus baseline accuracy.
    pub delta: Option<f64>,
    pub w2r: usize,
    pub r2w: usize,
    pub net: i64,
    /// `net / total net` across all groups; absent when the total is zero.
    pub share_of_net: Option<f64>,
}

#[derive(Default)]
struct Tally {
    positions: usize,
    base_correct: usize,
    pol_correct: usize,
    w2r: usize,
    r2w: usize,
}

impl Tally {
    fn add(&mut self, b: &MarginRecord, p: &MarginRecord) {
        self.positions += 1;
        self.base_correct += b.correct as usize;
        self.pol_correct += p.correct as usize;
        match transition(b, p) {
            Transition::WrongToRight => self.w2r += 1,
            Transition::RightToWrong => self.r2w += 1,
            _ => {}
        }
    }

    fn net(&self) -> i64 {
        self.w2r as i64 - self.r2w as i64
    }

    fn finish(&self, label: &str, total_net: i64) -> GroupStats {
        let acc = |c: usize| (self.positions > 0).then(|| c as f64 / self.positions as f64);
        let (ba, pa) = (acc(self.base_correct), acc(self.pol_correct));
        GroupStats {
            label: label.to_string(),
            positions: self.positions,
            baseline_accuracy: ba,
            polished_accuracy: pa,
            delta: ba.zip(pa).map(|(b, p)| p - b),
            w2r: self.w2r,
            r2w: self.r2w,
            net: self.net(),
            share_of_net: (total_net != 0).then(|| self.net() as f64 / total_net as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBuckets {
    pub buckets: Vec<GroupStats>,
    pub total_net: i64,
}

/// Accuracy change and share of net corrections by how often each target
/// occurs (`target_counts`, usually from [`target_counts`] on the same audit).
pub fn frequency_audit(
    baseline: &[MarginRecord],
    polished: &[MarginRecord],
    target_counts: &HashMap<u32, u64>,
) -> Result<FrequencyBuckets> {
    let pairs = align(baseline, polished)?;
    let mut tallies: Vec<Tally> = FREQUENCY_BUCKETS.iter().map(|_| Tally::default()).collect();
    for (b, p) in &pairs {
        let count = *target_counts
            .get(&b.target)
            .ok_or_else(|| Error::data(format!("no frequency count for target {}", b.target)))?;
        let bucket = frequency_bucket(count).ok_or_else(|| {
            Error::data(format!("target {} has count 0 but occurs in the audit", b.target))
        })?;
        tallies[bucket].add(b, p);
    }
    let total_net = tallies.iter().map(Tally::net).sum();
    Ok(FrequencyBuckets {
        buckets: tallies
            .iter()
            .zip(FREQUENCY_BUCKETS)
            .map(|(t, (label, _, _))| t.finish(label, total_net))
            .collect(),
        total_net,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAudit {
    /// Structural, numeric, function word, entity-like, content word.
    pub classes: Vec<GroupStats>,
    /// Fragment/other, kept out of the main table.
    pub fragment: GroupStats,
    /// Net corrections over every position, fragments included.
    pub total_net: i64,
}

/// Net corrections per token class of the target; `token_texts[i]` is the
/// decoded text of the target at position id `i`.
pub fn class_audit(
    baseline: &[MarginRecord],
    polished: &[MarginRecord],
    token_texts: &[String],
) -> Result<ClassAudit> {
    let pairs = align(baseline, polished)?;
    let mut tallies: Vec<Tally> = TokenClass::ALL.iter().map(|_| Tally::default()).collect();
    for (b, p) in &pairs {
        let text = token_texts.get(b.position).ok_or_else(|| {
            Error::data(format!("no token text for position {}", b.position))
        })?;
        let class = classify_token(text);
        let slot = TokenClass::ALL.iter().position(|&c| c == class).expect("listed");
        tallies[slot].add(b, p);
    }
    let total_net: i64 = tallies.iter().map(Tally::net).sum();
    let mut rows: Vec<GroupStats> = tallies
        .iter()
        .zip(TokenClass::ALL)
        .map(|(t, c)| t.finish(c.as_str(), total_net))
        .collect();
    let fragment = rows.pop().expect("six classes");
    Ok(ClassAudit {
        classes: rows,
        fragment,
        total_net,
    })
}
