//! AUC, session-grouped AUC and clustering agreement scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("AUC is undefined: {positives} positives and {negatives} negatives")]
    UndefinedAuc { positives: usize, negatives: usize },
    #[error("GAUC is undefined: none of the {sessions} sessions has both classes")]
    UndefinedGauc { sessions: usize },
    #[error("score at {0} is not finite")]
    NonFiniteScore(usize),
    #[error("label at {index} is {value}, expected 0 or 1")]
    BadLabel { index: usize, value: u8 },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("no records")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord<'a> {
    pub score: f64,
    pub label: u8,
    pub session_id: &'a str,
}

/// Mann–Whitney AUC with half credit for tied scores, `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        if !s.is_finite() {
            return Err(MetricError::NonFiniteScore(i));
        }
        if y > 1 {
            return Err(MetricError::BadLabel { index: i, value: y });
        }
    }
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // walk tie groups from low to high score
    let mut negatives_below = 0u64;
    let mut twice_credit = 0u64;
    let mut positives = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        let (mut pos, mut neg) = (0u64, 0u64);
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if labels[order[end]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            end += 1;
        }
        twice_credit += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        positives += pos;
        start = end;
    }
    if positives == 0 || negatives_below == 0 {
        return Err(MetricError::UndefinedAuc {
            positives: positives as usize,
            negatives: negatives_below as usize,
        });
    }
    Ok(twice_credit as f64 / (2.0 * positives as f64 * negatives_below as f64))
}

pub fn auc_records(records: &[EvalRecord<'_>]) -> Result<f64, MetricError> {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    auc(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gauc {
    pub value: f64,
    pub sessions_used: usize,
    pub sessions_skipped: usize,
}

/// Impression-weighted mean of per-session AUCs. Sessions with a single class
/// have no AUC; they are skipped and left out of both sums.
pub fn gauc(records: &[EvalRecord<'_>]) -> Result<Gauc, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sessions: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for r in records {
        let entry = sessions.entry(r.session_id).or_default();
        entry.0.push(r.score);
        entry.1.push(r.label);
    }
    let mut weighted = 0.0;
    let mut impressions = 0usize;
    let (mut used, mut skipped) = (0, 0);
    let mut last = 0.0;
    for (scores, labels) in sessions.values() {
        match auc(scores, labels) {
            Ok(a) => {
                last = a;
                weighted += scores.len() as f64 * a;
                impressions += scores.len();
                used += 1;
            }
            Err(MetricError::UndefinedAuc { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(MetricError::UndefinedGauc { sessions: skipped });
    }
    // with one usable session the weighted mean is that session's AUC;
    // returning it directly avoids the rounding of n * a / n
    let value = if used == 1 { last } else { weighted / impressions as f64 };
    Ok(Gauc {
        value,
        sessions_used: used,
        sessions_skipped: skipped,
    })
}

fn contingency(assigned: &[usize], planted: &[usize]) -> Result<BTreeMap<(usize, usize), usize>, MetricError> {
    if assigned.len() != planted.len() {
        return Err(MetricError::Length(assigned.len(), planted.len()));
    }
    if assigned.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut table = BTreeMap::new();
    for (&a, &p) in assigned.iter().zip(planted) {
        *table.entry((a, p)).or_insert(0) += 1;
    }
    Ok(table)
}

/// Fraction of points whose assigned cluster's majority planted label matches
/// their own.
pub fn cluster_purity(assigned: &[usize], planted: &[usize]) -> Result<f64, MetricError> {
    let table = contingency(assigned, planted)?;
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(a, _), &count) in &table {
        let slot = best.entry(a).or_insert(0);
        *slot = (*slot).max(count);
    }
    Ok(best.values().sum::<usize>() as f64 / assigned.len() as f64)
}

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. Returns 1.0 when both partitions are trivial in the
/// same way (the index is 0/0 there).
pub fn adjusted_rand(assigned: &[usize], planted: &[usize]) -> Result<f64, MetricError> {
    let table = contingency(assigned, planted)?;
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    let mut index = 0.0;
    for (&(a, p), &count) in &table {
        *rows.entry(a).or_insert(0) += count;
        *cols.entry(p).or_insert(0) += count;
        index += pairs(count);
    }
    let sum_rows: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(assigned.len());
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Evaluation summary with fixed JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub sessions_used: usize,
    pub sessions_skipped: usize,
    pub logloss: f64,
    /// AUC per observed domain; domains with one class are absent.
    pub per_domain_auc: BTreeMap<usize, f64>,
    pub per_domain_count: BTreeMap<usize, usize>,
    pub purity: Option<f64>,
    pub adjusted_rand: Option<f64>,
}

/// Inputs for [`MetricReport::compute`], one entry per scored instance.
pub struct EvalBatch<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
    pub sessions: &'a [&'a str],
    pub domains: &'a [usize],
    /// `(assigned, planted)` cluster labels when both are known.
    pub clusters: Option<(&'a [usize], &'a [usize])>,
}

impl MetricReport {
    pub fn compute(batch: &EvalBatch<'_>) -> Result<Self, MetricError> {
        let n = batch.scores.len();
        for len in [batch.labels.len(), batch.sessions.len(), batch.domains.len()] {
            if len != n {
                return Err(MetricError::Length(n, len));
            }
        }
        if n == 0 {
            return Err(MetricError::Empty);
        }
        let auc_value = match auc(batch.scores, batch.labels) {
            Ok(v) => Some(v),
            Err(MetricError::UndefinedAuc { .. }) => None,
            Err(e) => return Err(e),
        };
        let records: Vec<EvalRecord<'_>> = (0..n)
            .map(|i| EvalRecord {
                score: batch.scores[i],
                label: batch.labels[i],
                session_id: batch.sessions[i],
            })
            .collect();
        let (gauc_value, used, skipped) = match gauc(&records) {
            Ok(g) => (Some(g.value), g.sessions_used, g.sessions_skipped),
            Err(MetricError::UndefinedGauc { sessions }) => (None, 0, sessions),
            Err(e) => return Err(e),
        };

        let mut by_domain: BTreeMap<usize, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
        for i in 0..n {
            let e = by_domain.entry(batch.domains[i]).or_default();
            e.0.push(batch.scores[i]);
            e.1.push(batch.labels[i]);
        }
        let mut per_domain_auc = BTreeMap::new();
        let mut per_domain_count = BTreeMap::new();
        for (domain, (s, y)) in &by_domain {
            per_domain_count.insert(*domain, s.len());
            if let Ok(a) = auc(s, y) {
                per_domain_auc.insert(*domain, a);
            }
        }

        // scores are probabilities here; clamp only to keep the log finite
        let logloss = batch
            .scores
            .iter()
            .zip(batch.labels)
            .map(|(&p, &y)| {
                let p = p.clamp(1e-15, 1.0 - 1e-15);
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / n as f64;

        let (purity, ari) = match batch.clusters {
            Some((assigned, planted)) => (
                Some(cluster_purity(assigned, planted)?),
                Some(adjusted_rand(assigned, planted)?),
            ),
            None => (None, None),
        };

        Ok(Self {
            records: n,
            auc: auc_value,
            gauc: gauc_value,
            sessions_used: used,
            sessions_skipped: skipped,
            logloss,
            per_domain_auc,
            per_domain_count,
            purity,
            adjusted_rand: ari,
        })
    }
}
