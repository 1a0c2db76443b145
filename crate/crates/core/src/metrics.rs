//! Top-N ranking metrics: Precision@N, AP@N / MAP@N, DCG@N / NDCG@N, degree
//! buckets for cold-user analysis and cross-fold confidence intervals.
//!
//! Relevance is binary, so the DCG gain `2^rel − 1` is just `rel`.

use std::cmp::Ordering;

use crate::sparse::SparseInteractions;

/// Default training-degree bucket edges.
pub const DEFAULT_BUCKET_EDGES: [usize; 4] = [5, 20, 50, 200];

/// Anything that scores every item for a user.
pub trait Scorer {
    fn scores(&self, user: usize) -> Vec<f64>;
}

/// Top-N recommendations for one user, best first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<u32>,
}

/// Indices of the `n` highest scores outside `train_positives` (sorted),
/// ties broken by ascending index.
pub fn rank_top_n(scores: &[f64], train_positives: &[u32], n: usize) -> Vec<u32> {
    let mut candidates: Vec<u32> = Vec::with_capacity(scores.len());
    let mut blocked = train_positives.iter().peekable();
    for i in 0..scores.len() as u32 {
        while blocked.peek().is_some_and(|&&b| b < i) {
            blocked.next();
        }
        if blocked.peek() != Some(&&i) {
            candidates.push(i);
        }
    }
    let better = |a: &u32, b: &u32| -> Ordering {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    if n < candidates.len() {
        candidates.select_nth_unstable_by(n, better);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(better);
    candidates
}

pub fn precision_at(list: &[u32], test_positives: &[u32], n: usize) -> f64 {
    let hits = list.iter().take(n).filter(|i| test_positives.binary_search(i).is_ok()).count();
    hits as f64 / n as f64
}

/// AP@N with denominator `min(N, |test|)`. `None` when the test set is empty.
pub fn average_precision(list: &[u32], test_positives: &[u32], n: usize) -> Option<f64> {
    if test_positives.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, item) in list.iter().take(n).enumerate() {
        if test_positives.binary_search(item).is_ok() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n.min(test_positives.len()) as f64)
}

/// NDCG@N; the ideal list places `min(N, |test|)` hits first.
pub fn ndcg(list: &[u32], test_positives: &[u32], n: usize) -> Option<f64> {
    if test_positives.is_empty() {
        return None;
    }
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = list
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, item)| test_positives.binary_search(item).is_ok())
        .map(|(rank, _)| discount(rank))
        .sum();
    let idcg: f64 = (0..n.min(test_positives.len())).map(discount).sum();
    Some(dcg / idcg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub train_count: usize,
    pub ap: f64,
    pub ndcg: f64,
}

/// Half-open training-degree interval `[lo, hi)`; `hi = None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bucket {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Bucket {
    pub fn contains(&self, count: usize) -> bool {
        count >= self.lo && self.hi.is_none_or(|h| count < h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("[{},{})", self.lo, h),
            None => format!("[{},inf)", self.lo),
        }
    }
}

/// Intervals from strictly increasing edges: `[e0,e1), …, [e_last, ∞)`.
pub fn buckets_from_edges(edges: &[usize]) -> Option<Vec<Bucket>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return None;
    }
    Some(
        edges
            .iter()
            .enumerate()
            .map(|(j, &lo)| Bucket {
                lo,
                hi: edges.get(j + 1).copied(),
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketReport {
    pub bucket: Bucket,
    /// `None` when no evaluable user falls in the bucket.
    pub means: Option<(f64, f64)>,
    pub users: usize,
}

/// Per-bucket MAP / NDCG means; returns `None` for invalid edges.
pub fn bucket_by_degree(per_user: &[UserMetrics], edges: &[usize]) -> Option<Vec<BucketReport>> {
    let buckets = buckets_from_edges(edges)?;
    Some(
        buckets
            .into_iter()
            .map(|bucket| {
                let members: Vec<&UserMetrics> =
                    per_user.iter().filter(|m| bucket.contains(m.train_count)).collect();
                let means = (!members.is_empty()).then(|| {
                    let k = members.len() as f64;
                    (
                        members.iter().map(|m| m.ap).sum::<f64>() / k,
                        members.iter().map(|m| m.ndcg).sum::<f64>() / k,
                    )
                });
                BucketReport {
                    bucket,
                    means,
                    users: members.len(),
                }
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub cutoff: usize,
    pub map: f64,
    pub ndcg: f64,
    /// Users with a nonempty test set only.
    pub per_user: Vec<UserMetrics>,
    pub buckets: Vec<BucketReport>,
}

/// Scores every user with a nonempty test row and reports each cutoff.
pub fn evaluate(
    scorer: &dyn Scorer,
    train: &SparseInteractions,
    test: &SparseInteractions,
    cutoffs: &[usize],
    bucket_edges: &[usize],
) -> Vec<MetricsReport> {
    let max_n = cutoffs.iter().copied().max().unwrap_or(0);
    let mut per_cutoff: Vec<Vec<UserMetrics>> = vec![Vec::new(); cutoffs.len()];
    for u in 0..train.n_users() {
        let truth = test.ratings_of(u);
        if truth.is_empty() {
            continue;
        }
        let seen = train.ratings_of(u);
        let list = rank_top_n(&scorer.scores(u), seen, max_n);
        for (slot, &n) in per_cutoff.iter_mut().zip(cutoffs) {
            slot.push(UserMetrics {
                user: u,
                train_count: seen.len(),
                ap: average_precision(&list, truth, n).expect("nonempty test row"),
                ndcg: ndcg(&list, truth, n).expect("nonempty test row"),
            });
        }
    }
    cutoffs
        .iter()
        .zip(per_cutoff)
        .map(|(&cutoff, per_user)| {
            let k = per_user.len().max(1) as f64;
            MetricsReport {
                cutoff,
                map: per_user.iter().map(|m| m.ap).sum::<f64>() / k,
                ndcg: per_user.iter().map(|m| m.ndcg).sum::<f64>() / k,
                buckets: bucket_by_degree(&per_user, bucket_edges).unwrap_or_default(),
                per_user,
            }
        })
        .collect()
}

/// Mean and 95% half-width `1.96 · s / √len` (sample standard deviation).
/// The half-width is `None` with fewer than two values.
pub fn mean_ci95(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k.max(1.0);
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Some(1.96 * var.sqrt() / k.sqrt()))
}

/// Sample standard deviation (0 for fewer than two values).
pub fn sample_std(values: &[f64]) -> f64 {
    match mean_ci95(values) {
        (_, Some(ci)) => ci * (values.len() as f64).sqrt() / 1.96,
        _ => 0.0,
    }
}
