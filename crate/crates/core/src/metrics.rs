//! hit@K and mAP@K over model-level rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GroundTruthMap;
use crate::exec::Execution;
use crate::retrieval::RankedResult;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("query has no ground-truth positives")]
    ZeroPositives,
    #[error("no ground truth for query {0}")]
    MissingGroundTruth(String),
    #[error("invalid metric config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub k: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { k: 100 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.k == 0 {
            return Err(MetricsError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Average precision truncated at rank `k`, normalized by
/// `min(total_positives, k)`.
pub fn ap_at_k<S: AsRef<str>>(
    ranking: &[S],
    positives: &BTreeSet<String>,
    k: usize,
    total_positives: usize,
) -> Result<f64, MetricsError> {
    if total_positives == 0 {
        return Err(MetricsError::ZeroPositives);
    }
    let n = total_positives.min(k) as f64;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in ranking.iter().take(k).enumerate() {
        if positives.contains(item.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / n)
}

pub fn hit_at_k<S: AsRef<str>>(ranking: &[S], positives: &BTreeSet<String>, k: usize) -> bool {
    ranking.iter().take(k).any(|m| positives.contains(m.as_ref()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerQueryResult {
    pub query_id: String,
    pub ranked_model_ids: Vec<String>,
    /// 1-based ranks of positives within the top K.
    pub positive_ranks: Vec<usize>,
    pub ap_at_k: f64,
    pub hit: u8,
    /// Positive count used for normalization, capped at K.
    pub total_positives: usize,
}

impl PerQueryResult {
    pub fn score(query_id: &str, ranking: &[String], positives: &BTreeSet<String>, k: usize) -> Result<Self, MetricsError> {
        let ap = ap_at_k(ranking, positives, k, positives.len())?;
        let top: Vec<String> = ranking.iter().take(k).cloned().collect();
        let positive_ranks = top
            .iter()
            .enumerate()
            .filter(|(_, m)| positives.contains(m.as_str()))
            .map(|(i, _)| i + 1)
            .collect::<Vec<_>>();
        Ok(Self {
            query_id: query_id.to_string(),
            hit: u8::from(!positive_ranks.is_empty()),
            ranked_model_ids: top,
            positive_ranks,
            ap_at_k: ap,
            total_positives: positives.len().min(k),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub queries: usize,
    pub hit_at_k: f64,
    pub map_at_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: MetricConfig,
    pub per_query: Vec<PerQueryResult>,
    pub hit_at_k: f64,
    pub map_at_k: f64,
    /// Queries dropped because their ground truth is empty.
    pub excluded_queries: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen: Option<SplitScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen: Option<SplitScores>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per scored query.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,hit,ap_at_k,total_positives,positive_ranks\n");
        for q in &self.per_query {
            let ranks: Vec<String> = q.positive_ranks.iter().map(|r| r.to_string()).collect();
            let _ = writeln!(out, "{},{},{:.6},{},{}", csv_field(&q.query_id), q.hit, q.ap_at_k, q.total_positives, ranks.join(" "));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn summarize<'a>(rows: impl Iterator<Item = &'a PerQueryResult>) -> SplitScores {
    let (mut n, mut hit, mut ap) = (0usize, 0.0, 0.0);
    for r in rows {
        n += 1;
        hit += r.hit as f64;
        ap += r.ap_at_k;
    }
    let d = n.max(1) as f64;
    SplitScores { queries: n, hit_at_k: hit / d, map_at_k: ap / d }
}

/// Scores every result against `ground_truth`. Queries whose ground truth is
/// empty are excluded and listed. With `seen_models`, queries are also split
/// by whether any positive model was seen in training.
pub fn evaluate(
    results: &[RankedResult],
    ground_truth: &GroundTruthMap,
    config: &MetricConfig,
    seen_models: Option<&BTreeSet<String>>,
    exec: Execution,
) -> Result<EvalReport, MetricsError> {
    config.validate()?;
    for r in results {
        if ground_truth.get(&r.query_id).is_none() {
            return Err(MetricsError::MissingGroundTruth(r.query_id.clone()));
        }
    }
    let scored = exec.map(results, |r| {
        let positives = ground_truth.get(&r.query_id).expect("checked above");
        let ranking: Vec<String> = r.results.iter().map(|e| e.model_id.clone()).collect();
        PerQueryResult::score(&r.query_id, &ranking, positives, config.k).ok()
    });
    let mut per_query = Vec::new();
    let mut excluded_queries = Vec::new();
    for (r, s) in results.iter().zip(scored) {
        match s {
            Some(row) => per_query.push(row),
            None => {
                log::warn!("query {} has empty ground truth, excluded", r.query_id);
                excluded_queries.push(r.query_id.clone());
            }
        }
    }
    let all = summarize(per_query.iter());
    let (seen, unseen) = match seen_models {
        Some(seen_set) => {
            let is_seen: BTreeMap<&str, bool> = per_query
                .iter()
                .map(|q| {
                    let gt = ground_truth.get(&q.query_id).expect("checked above");
                    (q.query_id.as_str(), gt.iter().any(|m| seen_set.contains(m)))
                })
                .collect();
            (
                Some(summarize(per_query.iter().filter(|q| is_seen[q.query_id.as_str()]))),
                Some(summarize(per_query.iter().filter(|q| !is_seen[q.query_id.as_str()]))),
            )
        }
        None => (None, None),
    };
    Ok(EvalReport {
        config: config.clone(),
        hit_at_k: all.hit_at_k,
        map_at_k: all.map_at_k,
        per_query,
        excluded_queries,
        seen,
        unseen,
    })
}
