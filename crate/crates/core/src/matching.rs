//! Weighted atom similarity, thresholded greedy matching, and the recall /
//! precision metrics computed over the critical gold subset.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::atom::{GoldAtom, SemanticAtom};
use crate::normalize::{normalize_atom, AliasTable, NormValue, NormalizedAtom};

pub const DEFAULT_THRESHOLD: f64 = 0.72;
pub const DEFAULT_SWEEP: [f64; 3] = [0.65, 0.72, 0.80];

/// Similarities are rounded to this grid so that weight sums compare exactly
/// against decimal thresholds.
const SIMILARITY_GRID: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid similarity weights: {0}")]
    InvalidWeights(String),
    #[error("no critical gold atoms; recall is undefined")]
    NoCriticalAtoms,
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("{flags} matched flags but {weights} weights")]
    LengthMismatch { flags: usize, weights: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub subject: f64,
    pub predicate: f64,
    pub value: f64,
    #[serde(rename = "type")]
    pub atom_type: f64,
    /// Zero unless scope-inclusive scoring is requested explicitly.
    #[serde(default)]
    pub scope: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            subject: 0.40,
            predicate: 0.20,
            value: 0.30,
            atom_type: 0.10,
            scope: 0.0,
        }
    }
}

impl SimilarityWeights {
    pub fn new(
        subject: f64,
        predicate: f64,
        value: f64,
        atom_type: f64,
        scope: f64,
    ) -> Result<Self, MatchError> {
        let w = SimilarityWeights {
            subject,
            predicate,
            value,
            atom_type,
            scope,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        let parts = [self.subject, self.predicate, self.value, self.atom_type, self.scope];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MatchError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MatchError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

fn value_score(a: &NormValue, b: &NormValue) -> f64 {
    fn as_set(v: &NormValue) -> Option<BTreeSet<&str>> {
        match v {
            NormValue::List(items) => Some(items.iter().map(String::as_str).collect()),
            NormValue::Token(t) => Some(std::iter::once(t.as_str()).collect()),
            _ => None,
        }
    }
    let either_list = matches!(a, NormValue::List(_)) || matches!(b, NormValue::List(_));
    if !either_list {
        return if a == b { 1.0 } else { 0.0 };
    }
    match (as_set(a), as_set(b)) {
        (Some(x), Some(y)) => {
            let union = x.union(&y).count();
            if union == 0 {
                1.0
            } else {
                x.intersection(&y).count() as f64 / union as f64
            }
        }
        _ => 0.0,
    }
}

fn indicator(equal: bool) -> f64 {
    if equal {
        1.0
    } else {
        0.0
    }
}

/// Weighted sum of per-field scores: binary equality on subject, predicate,
/// type (and scope, when weighted); Jaccard overlap when a value is a list.
pub fn similarity(g: &NormalizedAtom, d: &NormalizedAtom, w: &SimilarityWeights) -> f64 {
    let raw = w.subject * indicator(g.subject == d.subject)
        + w.predicate * indicator(g.predicate == d.predicate)
        + w.value * value_score(&g.value, &d.value)
        + w.atom_type * indicator(g.atom_type == d.atom_type)
        + w.scope * indicator(g.scope == d.scope);
    ((raw * SIMILARITY_GRID).round() / SIMILARITY_GRID).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gold: usize,
    pub decoded: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub threshold: f64,
    /// Ordered by gold index.
    pub pairs: Vec<MatchPair>,
    pub unmatched_gold: Vec<usize>,
    pub unmatched_decoded: Vec<usize>,
    pub critical_total: usize,
    pub critical_matched: usize,
    pub decoded_total: usize,
    pub car: f64,
    pub war: f64,
    pub precision: f64,
    /// Set when there were no decoded atoms and precision is 1 by convention.
    pub precision_vacuous: bool,
    /// Informational recall over every gold atom, critical or not.
    pub recall_all: f64,
}

pub fn compute_car(matched: usize, critical_total: usize) -> Result<f64, MatchError> {
    if critical_total == 0 {
        return Err(MatchError::NoCriticalAtoms);
    }
    Ok(matched as f64 / critical_total as f64)
}

/// Criticality-weighted recall over the critical atoms.
pub fn compute_war(matched: &[bool], weights: &[u8]) -> Result<f64, MatchError> {
    if matched.len() != weights.len() {
        return Err(MatchError::LengthMismatch {
            flags: matched.len(),
            weights: weights.len(),
        });
    }
    if matched.is_empty() {
        return Err(MatchError::NoCriticalAtoms);
    }
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    if total == 0 {
        return Err(MatchError::NoCriticalAtoms);
    }
    let hit: u64 = matched
        .iter()
        .zip(weights)
        .filter(|(m, _)| **m)
        .map(|(_, &w)| u64::from(w))
        .sum();
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    pub value: f64,
    pub vacuous: bool,
}

pub fn compute_precision(matched: usize, decoded_total: usize) -> Precision {
    if decoded_total == 0 {
        Precision {
            value: 1.0,
            vacuous: true,
        }
    } else {
        Precision {
            value: matched as f64 / decoded_total as f64,
            vacuous: false,
        }
    }
}

/// A gold atom already reduced to comparison form.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGold {
    pub atom: NormalizedAtom,
    pub criticality: u8,
    pub is_critical: bool,
}

pub fn prepare_gold(gold: &[GoldAtom], table: &AliasTable) -> Vec<ScoredGold> {
    gold.iter()
        .map(|g| ScoredGold {
            atom: normalize_atom(&g.atom, table),
            criticality: g.criticality,
            is_critical: g.is_critical,
        })
        .collect()
}

pub fn prepare_decoded(decoded: &[SemanticAtom], table: &AliasTable) -> Vec<NormalizedAtom> {
    decoded.iter().map(|d| normalize_atom(d, table)).collect()
}

fn check_threshold(threshold: f64) -> Result<(), MatchError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(MatchError::InvalidThreshold(threshold))
    }
}

/// Greedy matching over normalized atoms.
///
/// Every (gold, decoded) pair at or above `threshold` is ranked by
/// similarity (descending), then gold criticality (descending), then gold
/// index, then decoded index; pairs are accepted in that order whenever both
/// sides are still unused. Raising the threshold only removes a suffix of the
/// ranking, so matched pairs at a higher threshold are always a subset of the
/// pairs at a lower one.
pub fn match_prepared(
    gold: &[ScoredGold],
    decoded: &[NormalizedAtom],
    threshold: f64,
    w: &SimilarityWeights,
) -> Result<MatchReport, MatchError> {
    check_threshold(threshold)?;
    w.validate()?;

    let mut candidates = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (di, d) in decoded.iter().enumerate() {
            let s = similarity(&g.atom, d, w);
            if s >= threshold {
                candidates.push((s, g.criticality, gi, di));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut gold_used = vec![false; gold.len()];
    let mut decoded_used = vec![false; decoded.len()];
    let mut pairs = Vec::new();
    for (s, _, gi, di) in candidates {
        if gold_used[gi] || decoded_used[di] {
            continue;
        }
        gold_used[gi] = true;
        decoded_used[di] = true;
        pairs.push(MatchPair {
            gold: gi,
            decoded: di,
            similarity: s,
        });
    }
    pairs.sort_by_key(|p| p.gold);

    build_report(gold, decoded.len(), threshold, pairs)
}

/// Assemble metrics for a fixed set of pairs.
pub fn build_report(
    gold: &[ScoredGold],
    decoded_total: usize,
    threshold: f64,
    pairs: Vec<MatchPair>,
) -> Result<MatchReport, MatchError> {
    let mut gold_matched = vec![false; gold.len()];
    let mut decoded_matched = vec![false; decoded_total];
    for p in &pairs {
        gold_matched[p.gold] = true;
        decoded_matched[p.decoded] = true;
    }

    let (flags, weights): (Vec<bool>, Vec<u8>) = gold
        .iter()
        .zip(&gold_matched)
        .filter(|(g, _)| g.is_critical)
        .map(|(g, m)| (*m, g.criticality))
        .unzip();
    let critical_matched = flags.iter().filter(|m| **m).count();
    let car = compute_car(critical_matched, flags.len())?;
    let war = compute_war(&flags, &weights)?;
    let precision = compute_precision(critical_matched, decoded_total);
    let recall_all = if gold.is_empty() {
        0.0
    } else {
        pairs.len() as f64 / gold.len() as f64
    };

    Ok(MatchReport {
        threshold,
        unmatched_gold: (0..gold.len()).filter(|&i| !gold_matched[i]).collect(),
        unmatched_decoded: (0..decoded_total).filter(|&i| !decoded_matched[i]).collect(),
        pairs,
        critical_total: flags.len(),
        critical_matched,
        decoded_total,
        car,
        war,
        precision: precision.value,
        precision_vacuous: precision.vacuous,
        recall_all,
    })
}

pub fn match_atoms(
    gold: &[GoldAtom],
    decoded: &[SemanticAtom],
    threshold: f64,
    w: &SimilarityWeights,
    table: &AliasTable,
) -> Result<MatchReport, MatchError> {
    check_threshold(threshold)?;
    match_prepared(
        &prepare_gold(gold, table),
        &prepare_decoded(decoded, table),
        threshold,
        w,
    )
}

/// One report per threshold, in the order given.
pub fn sensitivity_sweep(
    gold: &[GoldAtom],
    decoded: &[SemanticAtom],
    thresholds: &[f64],
    w: &SimilarityWeights,
    table: &AliasTable,
) -> Result<Vec<MatchReport>, MatchError> {
    if thresholds.is_empty() {
        return Err(MatchError::EmptyThresholds);
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let gold = prepare_gold(gold, table);
    let decoded = prepare_decoded(decoded, table);
    thresholds
        .iter()
        .map(|&t| match_prepared(&gold, &decoded, t, w))
        .collect()
}
