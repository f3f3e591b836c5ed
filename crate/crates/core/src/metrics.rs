//! Ranking accuracy and diversity metrics, an exhaustive list oracle, MMR and
//! a few statistics helpers.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A ranked list with binary relevance grades, feature vectors and intent
/// labels. The pool (the candidate set the list was drawn from) defaults to
/// the list itself; it supplies the relevant-item count for MAP, the ideal
/// ordering for NDCG and the intent distribution for ERR-IA.
#[derive(Clone, Debug, PartialEq)]
pub struct JudgedList {
    pub grades: Vec<u8>,
    pub features: Vec<Vec<f64>>,
    pub intents: Vec<i64>,
    pub pool_grades: Option<Vec<u8>>,
    pub pool_intents: Option<Vec<i64>>,
}

impl JudgedList {
    pub fn new(grades: Vec<u8>, features: Vec<Vec<f64>>, intents: Vec<i64>) -> Self {
        Self {
            grades,
            features,
            intents,
            pool_grades: None,
            pool_intents: None,
        }
    }

    pub fn with_pool(mut self, grades: Vec<u8>, intents: Vec<i64>) -> Self {
        self.pool_grades = Some(grades);
        self.pool_intents = Some(intents);
        self
    }

    fn pool_grades(&self) -> &[u8] {
        self.pool_grades.as_deref().unwrap_or(&self.grades)
    }

    fn pool_intents(&self) -> &[i64] {
        self.pool_intents.as_deref().unwrap_or(&self.intents)
    }
}

/// Average precision at `k`, normalized by `min(k, #relevant in pool)`.
pub fn map_at_k(list: &JudgedList, k: usize) -> f64 {
    let total = list.pool_grades().iter().filter(|&&g| g > 0).count();
    let denom = k.min(total);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &g) in list.grades.iter().take(k).enumerate() {
        if g > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

fn dcg(grades: impl Iterator<Item = u8>) -> f64 {
    let mut s = 0.0;
    for (i, g) in grades.enumerate() {
        s += f64::from(g) / ((i + 2) as f64).log2();
    }
    s
}

/// NDCG at `k` with linear gain and `1/log2(i+1)` discount.
pub fn ndcg_at_k(list: &JudgedList, k: usize) -> f64 {
    let mut ideal: Vec<u8> = list.pool_grades().to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(list.grades.iter().copied().take(k)) / idcg
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Mean cosine distance over unordered pairs of the top `k` items.
pub fn ilad_at_k(list: &JudgedList, k: usize) -> Result<f64> {
    let k = k.min(list.features.len());
    if k < 2 {
        return Err(Error::Invalid("ILAD needs at least two items".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            sum += 1.0 - cosine(&list.features[i], &list.features[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Satisfaction probability of a binary grade: `(2^g − 1) / 2^g_max` with
/// `g_max = 1`.
pub fn err_satisfaction(grade: u8) -> f64 {
    (2f64.powi(i32::from(grade)) - 1.0) / 2.0
}

/// Intent-aware expected reciprocal rank at `k`, with `p(t)` uniform over the
/// intents present in the pool.
pub fn err_ia_at_k(list: &JudgedList, k: usize) -> f64 {
    let sat: Vec<f64> = list.grades.iter().map(|&g| err_satisfaction(g)).collect();
    err_ia_soft(&sat, &list.intents, list.pool_intents(), k)
}

/// ERR-IA with given per-position satisfaction probabilities.
pub fn err_ia_soft(satisfaction: &[f64], intents: &[i64], pool_intents: &[i64], k: usize) -> f64 {
    let pool: BTreeSet<i64> = pool_intents.iter().copied().collect();
    if pool.is_empty() {
        return 0.0;
    }
    let p = 1.0 / pool.len() as f64;
    let mut total = 0.0;
    for t in pool {
        let mut not_yet = 1.0;
        let mut inner = 0.0;
        for (i, (&r, &intent)) in satisfaction.iter().zip(intents).enumerate().take(k) {
            if intent != t {
                continue;
            }
            inner += 1.0 / (i + 1) as f64 * r * not_yet;
            not_yet *= 1.0 - r;
        }
        total += p * inner;
    }
    total
}

/// Number of ordered `n`-arrangements of `m` items, saturating.
pub fn arrangements(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    (m - n + 1..=m).fold(1u128, |acc, x| acc.saturating_mul(x as u128))
}

pub const ORACLE_BUDGET: u128 = 1_000_000;

/// Exhaustive argmax of `reward` over every ordered `n`-arrangement of
/// `0..m`. Arrangements are visited in lexicographic order and only a strictly
/// larger reward replaces the incumbent, so ties go to the lexicographically
/// smallest sequence.
pub fn oracle_best_list(m: usize, n: usize, mut reward: impl FnMut(&[usize]) -> f64) -> Result<(Vec<usize>, f64)> {
    if n == 0 || n > m {
        return Err(Error::Invalid(format!("need 1 <= n <= m, got n={n} m={m}")));
    }
    let count = arrangements(m, n);
    if count > ORACLE_BUDGET {
        return Err(Error::Budget {
            count,
            budget: ORACLE_BUDGET,
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut prefix = Vec::with_capacity(n);
    let mut used = vec![false; m];
    fn rec(
        m: usize,
        n: usize,
        prefix: &mut Vec<usize>,
        used: &mut [bool],
        reward: &mut dyn FnMut(&[usize]) -> f64,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if prefix.len() == n {
            let r = reward(prefix);
            if best.as_ref().is_none_or(|(_, b)| r > *b) {
                *best = Some((prefix.clone(), r));
            }
            return;
        }
        for i in 0..m {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(m, n, prefix, used, reward, best);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    rec(m, n, &mut prefix, &mut used, &mut reward, &mut best);
    Ok(best.expect("at least one arrangement"))
}

/// Maximal marginal relevance: greedily picks the item maximizing
/// `λ·rel(i) − (1−λ)·max_{j selected} cos(i, j)`; ties go to the lower index.
pub fn mmr_rerank(features: &[Vec<f64>], relevance: &[f64], lambda: f64, n: usize) -> Result<Vec<usize>> {
    if features.len() != relevance.len() {
        return Err(Error::Invalid("features and relevance differ in length".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let n = n.min(relevance.len());
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    while chosen.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..relevance.len() {
            if chosen.contains(&i) {
                continue;
            }
            let redundancy = chosen
                .iter()
                .map(|&j| cosine(&features[i], &features[j]))
                .fold(f64::NEG_INFINITY, f64::max);
            let redundancy = if chosen.is_empty() { 0.0 } else { redundancy };
            let score = lambda * relevance[i] - (1.0 - lambda) * redundancy;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        chosen.push(best.expect("an unchosen item remains").0);
    }
    Ok(chosen)
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Spearman rank correlation (0 when either side is constant).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    pearson(&ranks(a), &ranks(b))
}

/// Area under the ROC curve with tied scores counted as half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let r = ranks(scores);
    let pos_rank_sum: f64 = r.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(g: &[u8]) -> JudgedList {
        JudgedList::new(g.to_vec(), vec![], vec![0; g.len()])
    }

    #[test]
    fn map_examples() {
        assert_eq!(map_at_k(&rel(&[1, 1, 1]), 3), 1.0);
        assert_eq!(map_at_k(&rel(&[0, 0, 0]), 3), 0.0);
        assert!((map_at_k(&rel(&[1, 0, 1]), 3) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&rel(&[1, 1, 0, 0]), 4), 1.0);
        assert_eq!(ndcg_at_k(&rel(&[0, 0]), 2), 0.0);
        assert!((ndcg_at_k(&rel(&[0, 1]), 2) - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn ilad_examples() {
        let same = JudgedList::new(vec![0; 3], vec![vec![1.0, 2.0]; 3], vec![0; 3]);
        assert!(ilad_at_k(&same, 3).unwrap().abs() < 1e-15);
        let ortho = JudgedList::new(vec![0; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0; 2]);
        assert_eq!(ilad_at_k(&ortho, 2).unwrap(), 1.0);
        let skew = JudgedList::new(vec![0; 2], vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![0; 2]);
        assert!((ilad_at_k(&skew, 2).unwrap() - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!(ilad_at_k(&skew, 1).is_err());
    }

    #[test]
    fn zero_vectors_have_zero_similarity() {
        let l = JudgedList::new(vec![0; 2], vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0; 2]);
        assert_eq!(ilad_at_k(&l, 2).unwrap(), 1.0);
    }

    #[test]
    fn err_ia_examples() {
        assert_eq!(err_ia_at_k(&rel(&[1, 1]), 2), 0.625);
        assert_eq!(err_ia_at_k(&rel(&[0, 0, 0]), 3), 0.0);
        let two = JudgedList::new(vec![1, 1], vec![], vec![0, 1]);
        assert_eq!(err_ia_at_k(&two, 2), 0.375);
    }

    #[test]
    fn oracle_examples() {
        let table = [0.3, 0.9, 0.1];
        let (best, r) = oracle_best_list(3, 1, |l| table[l[0]]).unwrap();
        assert_eq!((best, r), (vec![1], 0.9));
        let (best, _) = oracle_best_list(4, 3, |_| 1.0).unwrap();
        assert_eq!(best, vec![0, 1, 2]);
        assert!(matches!(oracle_best_list(20, 10, |_| 0.0), Err(Error::Budget { .. })));
    }

    #[test]
    fn mmr_examples() {
        let f = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]];
        assert_eq!(mmr_rerank(&f, &[0.2, 0.9, 0.5, 0.4], 1.0, 4).unwrap(), vec![1, 2, 3, 0]);
        // duplicates 0 and 1 never adjacent under pure diversity
        let order = mmr_rerank(&f, &[0.9, 0.8, 0.1, 0.1], 0.0, 4).unwrap();
        assert_eq!(order, vec![0, 2, 3, 1]);
        let p0 = order.iter().position(|&i| i == 0);
        let p1 = order.iter().position(|&i| i == 1);
        if let (Some(a), Some(b)) = (p0, p1) {
            assert!(a.abs_diff(b) > 1);
        }
    }

    #[test]
    fn spearman_and_auc() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(auc(&[0.5], &[true]), None);
    }
}
