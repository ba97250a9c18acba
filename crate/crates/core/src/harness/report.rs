//! Aggregation of per-case scores into report tables.
//!
//! Every mean here is an unweighted arithmetic mean over cases. Records whose
//! precision is vacuous (nothing decoded) are left out of the precision mean
//! and counted instead; they still contribute to CAR and WAR.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::pipeline::{ScoreFile, TokenRow};
use super::{HarnessError, Stage};
use crate::case::Regime;

/// One case's contribution to an aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseValues {
    pub case_id: String,
    pub o200k_gain: f64,
    pub cl100k_gain: f64,
    pub o200k_gain_amortized: f64,
    pub cl100k_gain_amortized: f64,
    pub car: f64,
    pub war: f64,
    /// `None` when precision was vacuous.
    pub precision: Option<f64>,
    pub decode_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub regime: Regime,
    pub threshold: f64,
    pub cases: usize,
    pub o200k_gain: f64,
    pub cl100k_gain: f64,
    pub o200k_gain_amortized: f64,
    pub cl100k_gain_amortized: f64,
    pub car: f64,
    pub war: f64,
    /// `None` when every case had vacuous precision.
    pub precision: Option<f64>,
    pub precision_excluded: usize,
    pub decode_failures: usize,
    pub per_case: Vec<CaseValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub regime: Regime,
    pub threshold: f64,
    pub cases: usize,
    pub car: f64,
    pub war: f64,
    pub precision: Option<f64>,
    pub precision_excluded: usize,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn precision_of(s: &ScoreFile) -> Option<f64> {
    (!s.report.precision_vacuous).then_some(s.report.precision)
}

/// One row per regime at `threshold`, in regime order.
pub fn aggregate(scores: &[ScoreFile], tokens: &[TokenRow], threshold: f64) -> Result<Vec<AggregateRow>, HarnessError> {
    let token_of: BTreeMap<(&str, Regime), &TokenRow> =
        tokens.iter().map(|t| ((t.case_id.as_str(), t.regime), t)).collect();
    let mut by_regime: BTreeMap<Regime, Vec<CaseValues>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.threshold == threshold) {
        let t = token_of.get(&(s.case_id.as_str(), s.regime)).ok_or_else(|| HarnessError::Stage {
            stage: Stage::Aggregate,
            message: format!("no token counts for {} / {}", s.case_id, s.regime),
        })?;
        by_regime.entry(s.regime).or_default().push(CaseValues {
            case_id: s.case_id.clone(),
            o200k_gain: t.o200k_gain,
            cl100k_gain: t.cl100k_gain,
            o200k_gain_amortized: t.o200k_gain_amortized,
            cl100k_gain_amortized: t.cl100k_gain_amortized,
            car: s.report.car,
            war: s.report.war,
            precision: precision_of(s),
            decode_failed: s.decode_failed,
        });
    }
    Ok(by_regime
        .into_iter()
        .map(|(regime, mut per_case)| {
            per_case.sort_by(|a, b| a.case_id.cmp(&b.case_id));
            let col = |f: fn(&CaseValues) -> f64| mean(&per_case.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
            let precisions: Vec<f64> = per_case.iter().filter_map(|c| c.precision).collect();
            AggregateRow {
                regime,
                threshold,
                cases: per_case.len(),
                o200k_gain: col(|c| c.o200k_gain),
                cl100k_gain: col(|c| c.cl100k_gain),
                o200k_gain_amortized: col(|c| c.o200k_gain_amortized),
                cl100k_gain_amortized: col(|c| c.cl100k_gain_amortized),
                car: col(|c| c.car),
                war: col(|c| c.war),
                precision: mean(&precisions),
                precision_excluded: per_case.len() - precisions.len(),
                decode_failures: per_case.iter().filter(|c| c.decode_failed).count(),
                per_case,
            }
        })
        .collect())
}

/// One row per (regime, threshold), regime-major.
pub fn sensitivity(scores: &[ScoreFile]) -> Vec<SensitivityRow> {
    let mut groups: BTreeMap<(Regime, u64), Vec<&ScoreFile>> = BTreeMap::new();
    for s in scores {
        groups.entry((s.regime, s.threshold.to_bits())).or_default().push(s);
    }
    let mut rows: Vec<SensitivityRow> = groups
        .into_iter()
        .map(|((regime, bits), group)| {
            let precisions: Vec<f64> = group.iter().filter_map(|s| precision_of(s)).collect();
            SensitivityRow {
                regime,
                threshold: f64::from_bits(bits),
                cases: group.len(),
                car: mean(&group.iter().map(|s| s.report.car).collect::<Vec<_>>()).unwrap_or(0.0),
                war: mean(&group.iter().map(|s| s.report.war).collect::<Vec<_>>()).unwrap_or(0.0),
                precision: mean(&precisions),
                precision_excluded: group.len() - precisions.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.regime.cmp(&b.regime).then(a.threshold.total_cmp(&b.threshold)));
    rows
}

/// Regimes at `threshold` ordered by mean WAR, best first; ties keep regime order.
pub fn ordering_by_war(rows: &[SensitivityRow], threshold: f64) -> Vec<Regime> {
    let mut at: Vec<&SensitivityRow> = rows.iter().filter(|r| r.threshold == threshold).collect();
    at.sort_by(|a, b| b.war.total_cmp(&a.war).then(a.regime.cmp(&b.regime)));
    at.into_iter().map(|r| r.regime).collect()
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<f64>, missing: &str) -> String {
    x.map(num).unwrap_or_else(|| missing.to_string())
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "regime,threshold,cases,o200k_gain,cl100k_gain,o200k_gain_amortized,cl100k_gain_amortized,car,war,precision,precision_excluded,decode_failures\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.regime,
            r.threshold,
            r.cases,
            num(r.o200k_gain),
            num(r.cl100k_gain),
            num(r.o200k_gain_amortized),
            num(r.cl100k_gain_amortized),
            num(r.car),
            num(r.war),
            opt(r.precision, ""),
            r.precision_excluded,
            r.decode_failures
        );
    }
    out
}

/// Per-case values behind each aggregate row, for audit.
pub fn per_case_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "regime,case_id,o200k_gain,cl100k_gain,o200k_gain_amortized,cl100k_gain_amortized,car,war,precision,decode_failed\n",
    );
    for r in rows {
        for c in &r.per_case {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.regime,
                c.case_id,
                num(c.o200k_gain),
                num(c.cl100k_gain),
                num(c.o200k_gain_amortized),
                num(c.cl100k_gain_amortized),
                num(c.car),
                num(c.war),
                opt(c.precision, ""),
                c.decode_failed
            );
        }
    }
    out
}

pub fn aggregate_markdown(rows: &[AggregateRow]) -> String {
    let threshold = rows.first().map(|r| r.threshold).unwrap_or_default();
    let excluded: usize = rows.iter().map(|r| r.precision_excluded).sum();
    let mut out = String::from("# Round-trip results\n\n");
    let _ = writeln!(
        out,
        "Match threshold {threshold}. Every column is an unweighted arithmetic mean over cases; \
         per-case values are in `per_case.csv`. Amortized gains add each dictionary header's tokens, \
         split evenly across the representations that use it.\n"
    );
    out.push_str("| regime | cases | o200k gain | cl100k gain | o200k gain (dict-amortized) | cl100k gain (dict-amortized) | CAR | WAR | precision¹ | decode failures |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.regime,
            r.cases,
            num(r.o200k_gain),
            num(r.cl100k_gain),
            num(r.o200k_gain_amortized),
            num(r.cl100k_gain_amortized),
            num(r.car),
            num(r.war),
            opt(r.precision, "n/a"),
            r.decode_failures
        );
    }
    let _ = writeln!(
        out,
        "\n¹ Records with nothing decoded have vacuous precision and are excluded from the precision mean \
         ({excluded} excluded in total). They still count towards CAR and WAR.\n\n\
         Prose representations are generated from the gold atoms by a fixed template."
    );
    out
}

/// Two-column plot data: o200k gain against WAR.
pub fn tradeoff_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("regime,o200k_gain,war\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.regime, num(r.o200k_gain), num(r.war));
    }
    out
}

pub fn sensitivity_csv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("regime,threshold,cases,car,war,precision,precision_excluded\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.regime,
            r.threshold,
            r.cases,
            num(r.car),
            num(r.war),
            opt(r.precision, ""),
            r.precision_excluded
        );
    }
    out
}

pub fn sensitivity_markdown(rows: &[SensitivityRow]) -> String {
    let mut thresholds: Vec<f64> = rows.iter().map(|r| r.threshold).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut out = String::from("# Threshold sensitivity\n\nUnweighted means over cases.\n\n");
    out.push_str("| regime | threshold | cases | CAR | WAR | precision |\n|---|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.regime,
            r.threshold,
            r.cases,
            num(r.car),
            num(r.war),
            opt(r.precision, "n/a")
        );
    }
    out.push_str("\nRegimes by mean WAR, best first:\n\n");
    let orderings: Vec<Vec<Regime>> = thresholds.iter().map(|&t| ordering_by_war(rows, t)).collect();
    for (t, order) in thresholds.iter().zip(&orderings) {
        let names: Vec<&str> = order.iter().map(|r| r.as_str()).collect();
        let _ = writeln!(out, "- {t}: {}", names.join(" > "));
    }
    let stable = orderings.windows(2).all(|w| w[0] == w[1]);
    let _ = writeln!(
        out,
        "\nThe WAR ordering is {} across thresholds.",
        if stable { "stable" } else { "not stable" }
    );
    out
}
