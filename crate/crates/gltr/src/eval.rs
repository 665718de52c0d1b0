//! Retrieval evaluation: Euclidean ranking, CMC curves and mAP.
//!
//! Ranking order is computed on squared distances (the ordering is the same
//! either way); anything reported as a distance is the true Euclidean value.
//! Queries left with no relevant gallery item after filtering are excluded
//! from both metric denominators and surfaced in the report.

use crate::error::{GltrError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub person_id: u32,
    pub camera_id: u32,
    pub vector: Vec<f64>,
}

/// Gallery indices sorted by ascending Euclidean distance to the query.
/// Ties break toward the lower gallery index.
pub fn euclidean_rank(query: &EmbeddingRecord, gallery: &[EmbeddingRecord]) -> Result<Vec<usize>> {
    Ok(rank_by_distance(&query.vector, gallery, |_| true)?
        .into_iter()
        .map(|(idx, _)| idx)
        .collect())
}

/// Like [`euclidean_rank`] but also returns the true (square-rooted)
/// distances in rank order.
pub fn euclidean_rank_with_distances(
    query: &EmbeddingRecord,
    gallery: &[EmbeddingRecord],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let ranked = rank_by_distance(&query.vector, gallery, |_| true)?;
    let indices = ranked.iter().map(|(i, _)| *i).collect();
    let distances = ranked.iter().map(|(_, d2)| d2.sqrt()).collect();
    Ok((indices, distances))
}

fn rank_by_distance(
    query: &[f64],
    gallery: &[EmbeddingRecord],
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(GltrError::EmptyInput("gallery is empty".into()));
    }
    let mut ranked = Vec::new();
    for (idx, item) in gallery.iter().enumerate() {
        if item.vector.len() != query.len() {
            return Err(GltrError::DimensionMismatch(format!(
                "query has {} dims, gallery item {idx} has {}",
                query.len(),
                item.vector.len()
            )));
        }
        if !keep(idx) {
            continue;
        }
        let d2: f64 = query
            .iter()
            .zip(&item.vector)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        ranked.push((idx, d2));
    }
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Outcome of ranking one query: relevance flags of the surviving gallery
/// items, in rank order.
pub type RankedRelevance = Vec<bool>;

#[derive(Debug, Clone)]
pub struct CmcResult {
    /// cmc[k-1] = fraction of evaluated queries whose first relevant item
    /// appears at rank <= k.
    pub cmc: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
    /// True when the requested K_max exceeded the longest ranking and was
    /// clamped.
    pub clamped: bool,
}

/// Rank-k accuracy over all queries that still have at least one relevant
/// item; the rest are skipped and counted.
pub fn cmc_curve(rankings: &[RankedRelevance], k_max: usize) -> Result<CmcResult> {
    if rankings.is_empty() {
        return Err(GltrError::EmptyInput("no queries to evaluate".into()));
    }
    let longest = rankings.iter().map(|r| r.len()).max().unwrap_or(0);
    let clamped = k_max > longest;
    let k_max = k_max.min(longest).max(1);

    let mut hits = vec![0usize; k_max];
    let mut evaluated = 0;
    let mut skipped = 0;
    for ranking in rankings {
        match ranking.iter().position(|&rel| rel) {
            None => skipped += 1,
            Some(first) => {
                evaluated += 1;
                if first < k_max {
                    hits[first] += 1;
                }
            }
        }
    }
    let mut cmc = Vec::with_capacity(k_max);
    let mut cum = 0usize;
    for h in hits {
        cum += h;
        cmc.push(if evaluated > 0 {
            cum as f64 / evaluated as f64
        } else {
            0.0
        });
    }
    Ok(CmcResult { cmc, evaluated, skipped, clamped })
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub map: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Mean average precision. AP of one query is the mean over its relevant
/// ranks p of (relevant items in the top p) / p.
pub fn mean_ap(rankings: &[RankedRelevance]) -> Result<MapResult> {
    if rankings.is_empty() {
        return Err(GltrError::EmptyInput("no queries to evaluate".into()));
    }
    let mut ap_sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for ranking in rankings {
        let total_relevant = ranking.iter().filter(|&&r| r).count();
        if total_relevant == 0 {
            skipped += 1;
            continue;
        }
        let mut seen = 0usize;
        let mut ap = 0.0;
        for (pos, &rel) in ranking.iter().enumerate() {
            if rel {
                seen += 1;
                ap += seen as f64 / (pos + 1) as f64;
            }
        }
        ap_sum += ap / total_relevant as f64;
        evaluated += 1;
    }
    Ok(MapResult {
        map: if evaluated > 0 { ap_sum / evaluated as f64 } else { 0.0 },
        evaluated,
        skipped,
    })
}

/// Gallery filtering rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    /// Drop gallery items that share both person and camera with the query.
    pub cross_camera_only: bool,
    /// Largest rank reported in the CMC curve (clamped to the gallery size).
    pub k_max: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self { cross_camera_only: true, k_max: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub num_queries_evaluated: usize,
    pub skipped_queries: usize,
    pub k_max_clamped: bool,
    /// Reserved: this artifact applies no re-ranking or other
    /// post-processing to the rankings.
    pub post_processing: &'static str,
}

impl EvalReport {
    /// Rank-k accuracy, clamping k to the computed curve.
    pub fn rank_at(&self, k: usize) -> f64 {
        let k = k.clamp(1, self.cmc.len());
        self.cmc[k - 1]
    }

    pub fn rank1(&self) -> f64 {
        self.rank_at(1)
    }

    /// JSON document with the usual table columns.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            rank1: f64,
            rank5: f64,
            rank10: f64,
            rank20: f64,
            #[serde(rename = "mAP")]
            map: f64,
            num_queries: usize,
            skipped_queries: usize,
            post_processing: &'static str,
        }
        serde_json::to_string_pretty(&Doc {
            rank1: self.rank_at(1),
            rank5: self.rank_at(5),
            rank10: self.rank_at(10),
            rank20: self.rank_at(20),
            map: self.map,
            num_queries: self.num_queries_evaluated,
            skipped_queries: self.skipped_queries,
            post_processing: self.post_processing,
        })
        .expect("report serialization cannot fail")
    }
}

/// Rank every query against the gallery and compute CMC + mAP.
///
/// Relevance is same person_id. With `cross_camera_only`, gallery items
/// sharing both person and camera with the query are dropped from that
/// query's ranking. When `queries` and `gallery` are literally the same
/// slice, a query never ranks against its own record (self-match exclusion);
/// value-equal records loaded separately are kept, by design.
pub fn evaluate(
    queries: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(GltrError::EmptyInput("query set is empty".into()));
    }
    if gallery.is_empty() {
        return Err(GltrError::EmptyInput("gallery set is empty".into()));
    }
    let same_collection =
        std::ptr::eq(queries.as_ptr(), gallery.as_ptr()) && queries.len() == gallery.len();

    let mut rankings: Vec<RankedRelevance> = Vec::with_capacity(queries.len());
    for (qi, query) in queries.iter().enumerate() {
        let keep = |gi: usize| {
            if same_collection && gi == qi {
                return false;
            }
            let item = &gallery[gi];
            !(protocol.cross_camera_only
                && item.person_id == query.person_id
                && item.camera_id == query.camera_id)
        };
        let ranked = rank_by_distance(&query.vector, gallery, keep)?;
        rankings.push(
            ranked
                .into_iter()
                .map(|(gi, _)| gallery[gi].person_id == query.person_id)
                .collect(),
        );
    }

    let cmc = cmc_curve(&rankings, protocol.k_max)?;
    let map = mean_ap(&rankings)?;
    debug_assert_eq!(cmc.evaluated, map.evaluated);
    Ok(EvalReport {
        cmc: cmc.cmc,
        map: map.map,
        num_queries_evaluated: cmc.evaluated,
        skipped_queries: cmc.skipped,
        k_max_clamped: cmc.clamped,
        post_processing: "none",
    })
}
