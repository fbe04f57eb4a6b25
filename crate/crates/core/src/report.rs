//! Descriptive statistics: length-binned rethinking counts, length/rethink
//! rank correlation, rethinking usage of generated solutions, and selection
//! overlap. Everything is emitted as plain tables; plotting happens outside.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ranking::Selection;
use crate::trace::{count_rethinking, MatchMode, RethinkLexicon, TraceMetrics};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("need at least {min} records with traces, got {got}")]
    TooFewRecords { min: usize, got: usize },
    #[error("correlation undefined: {0} is constant")]
    ConstantSeries(&'static str),
    #[error("selections come from different pools ({left} vs {right})")]
    PoolMismatch { left: String, right: String },
    #[error("n_bins must be at least 2")]
    TooFewBins,
}

#[derive(Debug, Clone, Serialize)]
pub struct BinStats {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub mean_keyword_counts: BTreeMap<String, f64>,
    pub mean_rethink_total: f64,
    pub mean_rethink_density: f64,
}

/// Equal-population length bins with per-bin keyword means.
#[derive(Debug, Clone, Serialize)]
pub struct BinnedStats {
    pub bin_edges: Vec<usize>,
    pub per_bin: Vec<BinStats>,
    pub total_records: usize,
}

/// Bins records with traces into token-length quantiles and reports mean
/// rethinking counts per bin. Duplicate quantile edges collapse, so a
/// degenerate length distribution yields fewer (possibly one) effective
/// bins with a warning.
pub fn length_binned_rethink(
    metrics: &[TraceMetrics],
    n_bins: usize,
) -> Result<BinnedStats, ReportError> {
    if n_bins < 2 {
        return Err(ReportError::TooFewBins);
    }
    let with_trace: Vec<&TraceMetrics> = metrics.iter().filter(|m| m.has_trace).collect();
    if with_trace.len() < n_bins {
        return Err(ReportError::TooFewRecords {
            min: n_bins,
            got: with_trace.len(),
        });
    }
    let mut lengths: Vec<usize> = with_trace.iter().map(|m| m.token_len).collect();
    lengths.sort_unstable();
    let n = lengths.len();

    // Nearest-rank quantile edges, deduplicated.
    let mut edges: Vec<usize> = Vec::with_capacity(n_bins + 1);
    edges.push(lengths[0]);
    for i in 1..=n_bins {
        let idx = ((i * n) / n_bins).saturating_sub(1).min(n - 1);
        edges.push(lengths[idx]);
    }
    edges.dedup();
    if edges.len() < 2 {
        // all lengths identical: a single one-value bin
        edges.push(edges[0]);
    }
    let effective_bins = edges.len() - 1;
    if effective_bins < n_bins {
        log::warn!(
            "degenerate length distribution: {effective_bins} effective bin(s) instead of {n_bins}"
        );
    }

    let mut assigned: Vec<Vec<&TraceMetrics>> = vec![Vec::new(); effective_bins];
    for m in &with_trace {
        let len = m.token_len;
        // first bin is [e0, e1]; later bins are (e_i, e_{i+1}]
        let mut bin = effective_bins - 1;
        for b in 0..effective_bins {
            let lower_ok = if b == 0 { len >= edges[0] } else { len > edges[b] };
            if lower_ok && len <= edges[b + 1] {
                bin = b;
                break;
            }
        }
        assigned[bin].push(m);
    }

    let keywords: BTreeSet<&String> = with_trace
        .iter()
        .flat_map(|m| m.keyword_counts.keys())
        .collect();
    let per_bin: Vec<BinStats> = assigned
        .iter()
        .enumerate()
        .map(|(b, members)| {
            let count = members.len();
            let denom = count.max(1) as f64;
            let mean_keyword_counts: BTreeMap<String, f64> = keywords
                .iter()
                .map(|&kw| {
                    let sum: usize = members
                        .iter()
                        .map(|m| m.keyword_counts.get(kw).copied().unwrap_or(0))
                        .sum();
                    (kw.clone(), sum as f64 / denom)
                })
                .collect();
            let total_sum: usize = members.iter().map(|m| m.rethink_total).sum();
            let density_sum: f64 = members.iter().map(|m| m.rethink_density).sum();
            BinStats {
                lo: edges[b],
                hi: edges[b + 1],
                count,
                mean_keyword_counts,
                mean_rethink_total: total_sum as f64 / denom,
                mean_rethink_density: density_sum / denom,
            }
        })
        .collect();

    Ok(BinnedStats {
        bin_edges: edges,
        per_bin,
        total_records: with_trace.len(),
    })
}

/// Spearman rank correlation between trace token length and total
/// rethinking count, with average ranks for ties.
pub fn length_rethink_correlation(metrics: &[TraceMetrics]) -> Result<f64, ReportError> {
    let pairs: Vec<(f64, f64)> = metrics
        .iter()
        .filter(|m| m.has_trace && m.token_len > 0)
        .map(|m| (m.token_len as f64, m.rethink_total as f64))
        .collect();
    if pairs.len() < 10 {
        return Err(ReportError::TooFewRecords {
            min: 10,
            got: pairs.len(),
        });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    spearman(&xs, &ys)
}

/// Spearman rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, ReportError> {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // tied block [i, j]: average of 1-based ranks
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, ReportError> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(ReportError::ConstantSeries("x"));
    }
    if var_y == 0.0 {
        return Err(ReportError::ConstantSeries("y"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Rethinking statistics for one group of generated solutions.
#[derive(Debug, Clone, Serialize)]
pub struct GroupRethinkStats {
    pub group: String,
    pub n_solutions: usize,
    pub keyword_totals: BTreeMap<String, usize>,
    pub rethink_total: usize,
    pub mean_per_solution: BTreeMap<String, f64>,
    pub mean_rethink_per_solution: f64,
    pub mean_chars: f64,
    pub mean_words: f64,
}

/// Keyword usage of generated solutions, grouped by model or config, with
/// output lengths reported alongside. Totals and per-solution means are both
/// emitted.
pub fn generation_rethink_stats(
    groups: &[(String, Vec<String>)],
    lexicon: &RethinkLexicon,
) -> Vec<GroupRethinkStats> {
    let wb = RethinkLexicon {
        keywords: lexicon.keywords.clone(),
        match_mode: MatchMode::WordBoundary,
    };
    groups
        .iter()
        .map(|(name, solutions)| {
            let mut keyword_totals: BTreeMap<String, usize> =
                wb.keywords.iter().map(|k| (k.clone(), 0)).collect();
            let mut char_sum = 0usize;
            let mut word_sum = 0usize;
            for solution in solutions {
                for (kw, count) in count_rethinking(solution, &wb) {
                    *keyword_totals.get_mut(&kw).expect("lexicon keyword") += count;
                }
                char_sum += solution.chars().count();
                word_sum += solution.split_whitespace().count();
            }
            let n = solutions.len();
            let denom = n.max(1) as f64;
            let rethink_total: usize = keyword_totals.values().sum();
            let mean_per_solution: BTreeMap<String, f64> = keyword_totals
                .iter()
                .map(|(k, &v)| (k.clone(), v as f64 / denom))
                .collect();
            GroupRethinkStats {
                group: name.clone(),
                n_solutions: n,
                rethink_total,
                mean_rethink_per_solution: rethink_total as f64 / denom,
                keyword_totals,
                mean_per_solution,
                mean_chars: char_sum as f64 / denom,
                mean_words: word_sum as f64 / denom,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub pair: (String, String),
    pub jaccard: f64,
    pub shared: usize,
    pub size_a: usize,
    pub size_b: usize,
}

/// Exact set overlap between two selections over the same pool.
pub fn selection_overlap(a: &Selection, b: &Selection) -> Result<OverlapReport, ReportError> {
    if a.pool_hash != b.pool_hash {
        return Err(ReportError::PoolMismatch {
            left: a.pool_hash.clone(),
            right: b.pool_hash.clone(),
        });
    }
    let set_a: BTreeSet<&str> = a.ids.iter().map(|i| i.as_str()).collect();
    let set_b: BTreeSet<&str> = b.ids.iter().map(|i| i.as_str()).collect();
    let shared = set_a.intersection(&set_b).count();
    let union = set_a.union(&set_b).count();
    let jaccard = if union == 0 {
        1.0
    } else {
        shared as f64 / union as f64
    };
    Ok(OverlapReport {
        pair: (a.manifest_hash.clone(), b.manifest_hash.clone()),
        jaccard,
        shared,
        size_a: set_a.len(),
        size_b: set_b.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RecordId;
    use crate::ranking::{select_top_k, KSpec, SelectionSpec, Strategy};

    fn metric(token_len: usize, waits: usize) -> TraceMetrics {
        let mut keyword_counts = BTreeMap::new();
        keyword_counts.insert("Wait".to_string(), waits);
        TraceMetrics {
            has_trace: true,
            malformed: false,
            char_len: token_len * 4,
            word_len: token_len,
            token_len,
            step_count: waits.max(1),
            prefix_counts: keyword_counts.clone(),
            rethink_total: waits,
            rethink_density: waits as f64 / waits.max(1) as f64,
            keyword_counts,
        }
    }

    #[test]
    fn binned_means_increase_with_constructed_lengths() {
        // trace of length 100*i contains exactly i keywords
        let metrics: Vec<TraceMetrics> = (1..=50).map(|i| metric(100 * i, i)).collect();
        let stats = length_binned_rethink(&metrics, 5).unwrap();
        assert_eq!(stats.per_bin.len(), 5);
        assert_eq!(stats.total_records, 50);
        let counts: usize = stats.per_bin.iter().map(|b| b.count).sum();
        assert_eq!(counts, 50);
        let means: Vec<f64> = stats.per_bin.iter().map(|b| b.mean_rethink_total).collect();
        for pair in means.windows(2) {
            assert!(pair[1] > pair[0], "means not increasing: {means:?}");
        }
    }

    #[test]
    fn binned_degenerate_lengths_collapse_to_one_bin() {
        let metrics: Vec<TraceMetrics> = (0..20).map(|_| metric(500, 3)).collect();
        let stats = length_binned_rethink(&metrics, 4).unwrap();
        assert_eq!(stats.per_bin.len(), 1);
        assert_eq!(stats.per_bin[0].count, 20);
    }

    #[test]
    fn binned_too_few_records_errors() {
        let metrics: Vec<TraceMetrics> = (0..3).map(|i| metric(i + 1, 0)).collect();
        let err = length_binned_rethink(&metrics, 5).unwrap_err();
        assert!(matches!(err, ReportError::TooFewRecords { min: 5, .. }));
    }

    #[test]
    fn bin_counts_always_sum_to_total() {
        for n_bins in 2..=8 {
            let metrics: Vec<TraceMetrics> =
                (0..37).map(|i| metric((i * 13) % 50 + 1, i % 5)).collect();
            let stats = length_binned_rethink(&metrics, n_bins).unwrap();
            let sum: usize = stats.per_bin.iter().map(|b| b.count).sum();
            assert_eq!(sum, 37, "n_bins = {n_bins}");
        }
    }

    #[test]
    fn correlation_perfect_and_reversed() {
        let inc: Vec<TraceMetrics> = (1..=12).map(|i| metric(i * 10, i)).collect();
        assert!((length_rethink_correlation(&inc).unwrap() - 1.0).abs() < 1e-12);
        let dec: Vec<TraceMetrics> = (1..=12).map(|i| metric(i * 10, 13 - i)).collect();
        assert!((length_rethink_correlation(&dec).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_five_point_hand_case() {
        // lengths 1..5 with counts [2,1,4,3,5]: rank displacement d = (1,1,1,1,0),
        // sum d^2 = 4, rho = 1 - 6*4/(5*24) = 0.8
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 5.0];
        let rho = spearman(&xs, &ys).unwrap();
        assert!((rho - 0.8).abs() < 1e-12, "got {rho}");
    }

    #[test]
    fn correlation_with_ties_uses_average_ranks() {
        // frozen against scipy.stats.spearmanr([1,2,2,4], [1,3,2,4])
        let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.9486832980505139).abs() < 1e-12, "got {rho}");
    }

    #[test]
    fn correlation_constant_series_errors() {
        let metrics: Vec<TraceMetrics> = (0..12).map(|_| metric(100, 3)).collect();
        assert!(matches!(
            length_rethink_correlation(&metrics),
            Err(ReportError::ConstantSeries(_))
        ));
    }

    #[test]
    fn correlation_invariant_under_monotone_transform() {
        let xs: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 3.7).sin() + x).collect();
        let base = spearman(&xs, &ys).unwrap();
        let squashed: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let transformed = spearman(&squashed, &ys).unwrap();
        assert!((base - transformed).abs() < 1e-12);
    }

    #[test]
    fn generation_stats_zero_hits() {
        let lex = RethinkLexicon::default();
        let groups = vec![("quiet".to_string(), vec!["nothing here".to_string()])];
        let stats = generation_rethink_stats(&groups, &lex);
        assert_eq!(stats[0].rethink_total, 0);
        assert!(stats[0].keyword_totals.values().all(|&v| v == 0));
    }

    #[test]
    fn generation_stats_doubled_counts_double() {
        let lex = RethinkLexicon::default();
        let one = vec!["Wait no. However yes. Maybe.".to_string()];
        let two = vec![
            "Wait no. However yes. Maybe.".to_string(),
            "Wait again. However twice. Maybe more.".to_string(),
        ];
        let stats = generation_rethink_stats(
            &[("one".to_string(), one), ("two".to_string(), two)],
            &lex,
        );
        for kw in ["Wait", "However", "Maybe"] {
            assert_eq!(stats[1].keyword_totals[kw], 2 * stats[0].keyword_totals[kw]);
        }
        assert!(stats[0].mean_chars > 0.0);
        assert!(stats[0].mean_words > 0.0);
    }

    fn selection_of(ids: &[&str], pool: &[&str], seed: u64) -> Selection {
        let scores: BTreeMap<RecordId, f64> = pool
            .iter()
            .map(|s| {
                let boost = if ids.contains(s) { 100.0 } else { 0.0 };
                (RecordId::new(*s), boost - s.len() as f64)
            })
            .collect();
        let spec = SelectionSpec::new(Strategy::Difficult, KSpec::Count(ids.len())).with_seed(seed);
        select_top_k(&scores, spec, false).unwrap()
    }

    #[test]
    fn overlap_identical_and_disjoint() {
        let pool = ["a", "b", "c", "d"];
        let sel1 = selection_of(&["a", "b"], &pool, 1);
        let sel2 = selection_of(&["a", "b"], &pool, 2);
        let report = selection_overlap(&sel1, &sel2).unwrap();
        assert_eq!(report.jaccard, 1.0);

        let sel3 = selection_of(&["c", "d"], &pool, 3);
        let report = selection_overlap(&sel1, &sel3).unwrap();
        assert_eq!(report.jaccard, 0.0);
    }

    #[test]
    fn overlap_partial_third() {
        // |A| = |B| = 10, |A ∩ B| = 5 → 5/15
        let pool: Vec<String> = (0..30).map(|i| format!("r{i:02}")).collect();
        let pool_refs: Vec<&str> = pool.iter().map(|s| s.as_str()).collect();
        let a: Vec<&str> = pool_refs[0..10].to_vec();
        let b: Vec<&str> = pool_refs[5..15].to_vec();
        let sel_a = selection_of(&a, &pool_refs, 1);
        let sel_b = selection_of(&b, &pool_refs, 2);
        let report = selection_overlap(&sel_a, &sel_b).unwrap();
        assert_eq!(report.shared, 5);
        assert!((report.jaccard - 5.0 / 15.0).abs() < 1e-12);
        // symmetry
        let flipped = selection_overlap(&sel_b, &sel_a).unwrap();
        assert_eq!(flipped.jaccard, report.jaccard);
    }

    #[test]
    fn overlap_rejects_different_pools() {
        let sel1 = selection_of(&["a"], &["a", "b"], 1);
        let sel2 = selection_of(&["a"], &["a", "c"], 1);
        assert!(matches!(
            selection_overlap(&sel1, &sel2),
            Err(ReportError::PoolMismatch { .. })
        ));
    }
}
