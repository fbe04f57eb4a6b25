//! Rank construction, weighted joint ranking, and the selection strategies.
//!
//! Rank 1 is the most difficult / longest record. The joint score
//! `w * rank_d + (1 - w) * rank_l` is therefore lower-is-better, and taking
//! the K smallest joint scores makes w = 0 degenerate to the longest-trace
//! selector and w = 1 to the difficulty selector. Ties break everywhere by
//! ascending record id so identical inputs give identical selections on any
//! platform.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RecordId;
use crate::hash::digest_hex;
use crate::trace::LengthUnit;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("no values to rank")]
    Empty,
    #[error("missing values for {count} ids (first: {first})")]
    MissingValues { count: usize, first: String },
    #[error("rank id sets differ: {only_left} ids only in left, {only_right} only in right (e.g. {example})")]
    IdSetMismatch {
        only_left: usize,
        only_right: usize,
        example: String,
    },
    #[error("requested K = {k} exceeds pool size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("weight {0} outside [0, 1]")]
    BadWeight(f64),
}

/// Per-record view of the two ranks and their weighted combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub record_id: RecordId,
    pub rank_d: u32,
    pub rank_l: u32,
    pub joint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Joint,
    Longest,
    Middle,
    Shortest,
    Difficult,
    Easy,
    Random,
    Diverse,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Longest => "longest",
            Strategy::Middle => "middle",
            Strategy::Shortest => "shortest",
            Strategy::Difficult => "difficult",
            Strategy::Easy => "easy",
            Strategy::Random => "random",
            Strategy::Diverse => "diverse",
        }
    }
}

/// Subset size: a fraction of the pool or an absolute count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KSpec {
    Fraction(f64),
    Count(usize),
}

impl KSpec {
    /// K = floor(fraction * N), at least 1; counts are taken literally.
    pub fn resolve(&self, n: usize) -> Result<usize, RankError> {
        match *self {
            KSpec::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(RankError::BadFraction(f));
                }
                Ok(((f * n as f64).floor() as usize).max(1).min(n))
            }
            KSpec::Count(k) => {
                if k == 0 || k > n {
                    return Err(RankError::KTooLarge { k, n });
                }
                Ok(k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub strategy: Strategy,
    pub k: KSpec,
    pub w: f64,
    pub seed: u64,
    pub length_unit: LengthUnit,
    /// Fixed tie-break rule, recorded for provenance.
    pub tie_break: String,
}

impl SelectionSpec {
    pub fn new(strategy: Strategy, k: KSpec) -> Self {
        SelectionSpec {
            strategy,
            k,
            w: 0.25,
            seed: 0,
            length_unit: LengthUnit::Tokens,
            tie_break: "ascending-id".into(),
        }
    }

    pub fn with_w(mut self, w: f64) -> Self {
        self.w = w;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn canonical_string(&self) -> String {
        let k = match self.k {
            KSpec::Fraction(f) => format!("fraction={f}"),
            KSpec::Count(c) => format!("count={c}"),
        };
        format!(
            "strategy={};{};w={};seed={};unit={:?};tie_break={}",
            self.strategy.name(),
            k,
            self.w,
            self.seed,
            self.length_unit,
            self.tie_break
        )
    }
}

/// An ordered selection plus the spec and pool digest that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub spec: SelectionSpec,
    pub ids: Vec<RecordId>,
    pub pool_hash: String,
    pub manifest_hash: String,
}

impl Selection {
    fn build(spec: SelectionSpec, ids: Vec<RecordId>, pool_ids: &BTreeSet<&RecordId>) -> Selection {
        let pool_hash = hash_pool_ids(pool_ids);
        let manifest_hash = digest_hex(&[&spec.canonical_string(), &pool_hash]);
        Selection {
            spec,
            ids,
            pool_hash,
            manifest_hash,
        }
    }
}

fn hash_pool_ids(pool_ids: &BTreeSet<&RecordId>) -> String {
    let parts: Vec<&str> = pool_ids.iter().map(|id| id.as_str()).collect();
    digest_hex(&parts)
}

/// Ranks ids by value, descending: rank 1 is the largest value. Ties break
/// by ascending id. The output is always a bijection onto 1..=N.
pub fn rank_by(values: &BTreeMap<RecordId, f64>) -> Result<BTreeMap<RecordId, u32>, RankError> {
    if values.is_empty() {
        return Err(RankError::Empty);
    }
    let mut entries: Vec<(&RecordId, f64)> = values.iter().map(|(id, &v)| (id, v)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), (i + 1) as u32))
        .collect())
}

/// Elementwise `w * rank_d + (1 - w) * rank_l`. Lower is better.
pub fn joint_rank(
    rank_d: &BTreeMap<RecordId, u32>,
    rank_l: &BTreeMap<RecordId, u32>,
    w: f64,
) -> Result<BTreeMap<RecordId, f64>, RankError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(RankError::BadWeight(w));
    }
    check_same_ids(rank_d, rank_l)?;
    Ok(rank_d
        .iter()
        .map(|(id, &rd)| {
            let rl = rank_l[id];
            (id.clone(), w * rd as f64 + (1.0 - w) * rl as f64)
        })
        .collect())
}

/// Builds the full per-record rank table for export.
pub fn joint_entries(
    rank_d: &BTreeMap<RecordId, u32>,
    rank_l: &BTreeMap<RecordId, u32>,
    w: f64,
) -> Result<Vec<RankEntry>, RankError> {
    let joint = joint_rank(rank_d, rank_l, w)?;
    let mut entries: Vec<RankEntry> = joint
        .iter()
        .map(|(id, &j)| RankEntry {
            record_id: id.clone(),
            rank_d: rank_d[id],
            rank_l: rank_l[id],
            joint: j,
        })
        .collect();
    entries.sort_by(|a, b| a.joint.total_cmp(&b.joint).then_with(|| a.record_id.cmp(&b.record_id)));
    Ok(entries)
}

fn check_same_ids<A, B>(
    left: &BTreeMap<RecordId, A>,
    right: &BTreeMap<RecordId, B>,
) -> Result<(), RankError> {
    let only_left: Vec<&RecordId> = left.keys().filter(|id| !right.contains_key(*id)).collect();
    let only_right: Vec<&RecordId> = right.keys().filter(|id| !left.contains_key(*id)).collect();
    if only_left.is_empty() && only_right.is_empty() {
        return Ok(());
    }
    let example = only_left
        .first()
        .or(only_right.first())
        .map(|id| id.to_string())
        .unwrap_or_default();
    Err(RankError::IdSetMismatch {
        only_left: only_left.len(),
        only_right: only_right.len(),
        example,
    })
}

/// Takes the K best-scoring ids, ordered by priority.
pub fn select_top_k(
    scores: &BTreeMap<RecordId, f64>,
    spec: SelectionSpec,
    lower_is_better: bool,
) -> Result<Selection, RankError> {
    if scores.is_empty() {
        return Err(RankError::Empty);
    }
    let k = spec.k.resolve(scores.len())?;
    let mut entries: Vec<(&RecordId, f64)> = scores.iter().map(|(id, &v)| (id, v)).collect();
    entries.sort_by(|a, b| {
        let ord = if lower_is_better {
            a.1.total_cmp(&b.1)
        } else {
            b.1.total_cmp(&a.1)
        };
        ord.then_with(|| a.0.cmp(b.0))
    });
    let ids: Vec<RecordId> = entries.iter().take(k).map(|(id, _)| (*id).clone()).collect();
    let pool: BTreeSet<&RecordId> = scores.keys().collect();
    Ok(Selection::build(spec, ids, &pool))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthBand {
    Longest,
    Middle,
    Shortest,
}

/// Length-band selectors over the descending-length order: longest takes the
/// top K, shortest the bottom K (shortest first), middle the K-wide window
/// starting at floor((N - K) / 2).
pub fn select_length_band(
    lengths: &BTreeMap<RecordId, f64>,
    band: LengthBand,
    spec: SelectionSpec,
) -> Result<Selection, RankError> {
    if lengths.is_empty() {
        return Err(RankError::Empty);
    }
    let k = spec.k.resolve(lengths.len())?;
    let mut entries: Vec<(&RecordId, f64)> = lengths.iter().map(|(id, &v)| (id, v)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n = entries.len();
    let ids: Vec<RecordId> = match band {
        LengthBand::Longest => entries[..k].iter().map(|(id, _)| (*id).clone()).collect(),
        LengthBand::Middle => {
            let start = (n - k) / 2;
            entries[start..start + k]
                .iter()
                .map(|(id, _)| (*id).clone())
                .collect()
        }
        LengthBand::Shortest => entries[n - k..]
            .iter()
            .rev()
            .map(|(id, _)| (*id).clone())
            .collect(),
    };
    let pool: BTreeSet<&RecordId> = lengths.keys().collect();
    Ok(Selection::build(spec, ids, &pool))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifficultyBand {
    Difficult,
    Easy,
}

pub fn select_difficulty_band(
    scores: &BTreeMap<RecordId, f64>,
    band: DifficultyBand,
    spec: SelectionSpec,
) -> Result<Selection, RankError> {
    if scores.is_empty() {
        return Err(RankError::Empty);
    }
    let k = spec.k.resolve(scores.len())?;
    let mut entries: Vec<(&RecordId, f64)> = scores.iter().map(|(id, &v)| (id, v)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n = entries.len();
    let ids: Vec<RecordId> = match band {
        DifficultyBand::Difficult => entries[..k].iter().map(|(id, _)| (*id).clone()).collect(),
        DifficultyBand::Easy => entries[n - k..]
            .iter()
            .rev()
            .map(|(id, _)| (*id).clone())
            .collect(),
    };
    let pool: BTreeSet<&RecordId> = scores.keys().collect();
    Ok(Selection::build(spec, ids, &pool))
}

/// Uniform sample without replacement.
///
/// The generator is pinned: ChaCha8 seeded with the spec seed, driven by a
/// local unbiased bounded-draw (Lemire rejection), over the ascending-id
/// ordering of the pool. No library sampling routine is involved, so the
/// output is reproducible across platforms and dependency upgrades.
pub fn select_random(
    pool_ids: &BTreeSet<RecordId>,
    spec: SelectionSpec,
) -> Result<Selection, RankError> {
    if pool_ids.is_empty() {
        return Err(RankError::Empty);
    }
    let k = spec.k.resolve(pool_ids.len())?;
    let mut ids: Vec<RecordId> = pool_ids.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    partial_fisher_yates(&mut ids, k, &mut rng);
    ids.truncate(k);
    let pool: BTreeSet<&RecordId> = pool_ids.iter().collect();
    Ok(Selection::build(spec, ids, &pool))
}

/// Round-robin over categories in lexicographic order, drawing uniformly
/// without replacement inside each category; exhausted categories drop out.
/// Records without a category group under "uncategorized".
pub fn select_diverse(
    categories: &BTreeMap<RecordId, Option<String>>,
    spec: SelectionSpec,
) -> Result<Selection, RankError> {
    if categories.is_empty() {
        return Err(RankError::Empty);
    }
    let k = spec.k.resolve(categories.len())?;
    let mut groups: BTreeMap<String, Vec<RecordId>> = BTreeMap::new();
    for (id, category) in categories {
        let key = category.clone().unwrap_or_else(|| "uncategorized".to_string());
        groups.entry(key).or_default().push(id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut shuffled: Vec<Vec<RecordId>> = Vec::with_capacity(groups.len());
    for (_, mut ids) in groups {
        ids.sort();
        full_fisher_yates(&mut ids, &mut rng);
        shuffled.push(ids);
    }
    let mut selected = Vec::with_capacity(k);
    let mut cursors = vec![0usize; shuffled.len()];
    'outer: loop {
        let mut progressed = false;
        for (group, cursor) in shuffled.iter().zip(cursors.iter_mut()) {
            if *cursor < group.len() {
                selected.push(group[*cursor].clone());
                *cursor += 1;
                progressed = true;
                if selected.len() == k {
                    break 'outer;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    let pool: BTreeSet<&RecordId> = categories.keys().collect();
    Ok(Selection::build(spec, selected, &pool))
}

fn partial_fisher_yates(ids: &mut [RecordId], k: usize, rng: &mut ChaCha8Rng) {
    let n = ids.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = i + bounded_draw(rng, (n - i) as u64) as usize;
        ids.swap(i, j);
    }
}

fn full_fisher_yates(ids: &mut [RecordId], rng: &mut ChaCha8Rng) {
    let n = ids.len();
    if n < 2 {
        return;
    }
    partial_fisher_yates(ids, n - 1, rng);
}

/// Unbiased draw in [0, bound) via Lemire's widening-multiply rejection.
fn bounded_draw(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (bound as u128);
        let low = m as u64;
        if low >= bound {
            return (m >> 64) as u64;
        }
        // reject only in the biased sliver
        let threshold = bound.wrapping_neg() % bound;
        if low >= threshold {
            return (m >> 64) as u64;
        }
    }
}
