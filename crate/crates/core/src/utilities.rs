//! Business utilities over page batches, preference sampling and reward
//! scalarization.
//!
//! Each utility has two forms: a batch value computed straight from its
//! formula, and per-page terms whose mean is that batch value. Batch-level
//! gates (`RatioInBatch`, `PosInBatch`) are evaluated once over the whole batch
//! and shared by every page term; training uses the page terms as per-sample
//! rewards.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GroupField, Item};
use crate::error::{invalid, Error, Result};
use crate::metrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Strict,
    Gated,
    Positional,
    Diversity,
    Ordering,
    Engagement,
    /// Soft ERR-IA over group intents, with satisfaction taken from the
    /// evaluator's click predictions (see [`relative_satisfaction`]).
    IntentDiversity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySpec {
    pub name: String,
    pub kind: UtilityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_field: Option<GroupField>,
    /// Label that marks membership of the protected group (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_value: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_p: Option<f64>,
    /// Diversity window; absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Group label (as a string) → priority. Labels missing from the map get
    /// priority 0; without a map the label itself is the priority.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_map: Option<BTreeMap<String, i64>>,
    pub w_max: f64,
}

impl UtilitySpec {
    pub fn new(name: &str, kind: UtilityKind, w_max: f64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            group_field: None,
            group_value: None,
            t_e: None,
            t_p: None,
            window: None,
            priority_map: None,
            w_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_max) {
            return invalid(format!("{}: w_max {} outside [0, 1]", self.name, self.w_max));
        }
        let needs_group = !matches!(self.kind, UtilityKind::Engagement);
        if needs_group && self.group_field.is_none() {
            return invalid(format!("{}: group_field is required", self.name));
        }
        if matches!(self.kind, UtilityKind::Strict | UtilityKind::Gated | UtilityKind::Positional) {
            match self.t_e {
                Some(t) if (0.0..=1.0).contains(&t) => {}
                _ => return invalid(format!("{}: t_e in [0, 1] is required", self.name)),
            }
        }
        if self.kind == UtilityKind::Positional {
            match self.t_p {
                Some(t) if t >= 1.0 => {}
                _ => return invalid(format!("{}: t_p >= 1 is required", self.name)),
            }
        }
        if self.window == Some(0) {
            return invalid(format!("{}: window must be positive", self.name));
        }
        Ok(())
    }

    fn field(&self) -> Result<GroupField> {
        self.group_field
            .ok_or_else(|| Error::Invalid(format!("{}: group_field is required", self.name)))
    }

    pub fn is_member(&self, item: &Item) -> Result<bool> {
        Ok(item.group(self.field()?) == self.group_value.unwrap_or(1))
    }

    pub fn priority(&self, item: &Item) -> Result<i64> {
        let label = item.group(self.field()?);
        Ok(match &self.priority_map {
            Some(map) => map.get(&label.to_string()).copied().unwrap_or(0),
            None => label,
        })
    }
}

/// A page: the ordered items shown plus the candidate pool they came from.
#[derive(Clone, Copy, Debug)]
pub struct PageRef<'a> {
    pub items: &'a [&'a Item],
    pub pool: &'a [Item],
}

fn check_batch<T>(pages: &[Vec<T>]) -> Result<usize> {
    let first = pages.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let len = first.len();
    if len == 0 {
        return invalid("empty page");
    }
    if pages.iter().any(|p| p.len() != len) {
        return invalid("pages in a batch must have equal length");
    }
    Ok(len)
}

fn count(page: &[bool]) -> usize {
    page.iter().filter(|&&m| m).count()
}

/// Share of group slots over the whole batch.
pub fn ratio_in_batch(pages: &[Vec<bool>]) -> Result<f64> {
    let len = check_batch(pages)?;
    let total: usize = pages.iter().map(|p| count(p)).sum();
    Ok(total as f64 / (pages.len() * len) as f64)
}

/// Mean 1-based position of group items over the batch; `None` without any.
pub fn pos_in_batch(pages: &[Vec<bool>]) -> Result<Option<f64>> {
    check_batch(pages)?;
    let mut pos_sum = 0usize;
    let mut n = 0usize;
    for p in pages {
        for (i, &m) in p.iter().enumerate() {
            if m {
                pos_sum += i + 1;
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| pos_sum as f64 / n as f64))
}

fn page_violates_ratio(page: &[bool], t_e: f64) -> bool {
    count(page) as f64 / page.len() as f64 <= t_e
}

/// `None` for pages without group items.
fn page_mean_pos(page: &[bool]) -> Option<f64> {
    let (mut s, mut n) = (0usize, 0usize);
    for (i, &m) in page.iter().enumerate() {
        if m {
            s += i + 1;
            n += 1;
        }
    }
    (n > 0).then(|| s as f64 / n as f64)
}

/// Strict flow control: minus the share of pages whose group ratio is at most
/// `t_e`.
pub fn flow_control_strict(pages: &[Vec<bool>], t_e: f64) -> Result<f64> {
    check_batch(pages)?;
    let violating = pages.iter().filter(|p| page_violates_ratio(p, t_e)).count();
    Ok(-(violating as f64) / pages.len() as f64 + 0.0)
}

/// Strict flow control gated by the batch-level ratio.
pub fn flow_control_gated(pages: &[Vec<bool>], t_e: f64) -> Result<f64> {
    if ratio_in_batch(pages)? > t_e {
        return Ok(0.0);
    }
    flow_control_strict(pages, t_e)
}

/// Gated ratio term plus a gated mean-position term.
pub fn flow_control_positional(pages: &[Vec<bool>], t_e: f64, t_p: f64) -> Result<f64> {
    let ratio_part = flow_control_gated(pages, t_e)?;
    let pos_gate = matches!(pos_in_batch(pages)?, Some(p) if p >= t_p);
    let pos_term = if pos_gate {
        let late = pages
            .iter()
            .filter(|p| matches!(page_mean_pos(p), Some(m) if m >= t_p))
            .count();
        late as f64 / pages.len() as f64
    } else {
        0.0
    };
    Ok(ratio_part - pos_term + 0.0)
}

/// Per-page terms of the three flow-control utilities.
pub fn flow_control_terms(kind: UtilityKind, pages: &[Vec<bool>], t_e: f64, t_p: f64) -> Result<Vec<f64>> {
    check_batch(pages)?;
    let ratio_gate = match kind {
        UtilityKind::Strict => true,
        UtilityKind::Gated | UtilityKind::Positional => ratio_in_batch(pages)? <= t_e,
        other => return invalid(format!("{other:?} is not a flow-control utility")),
    };
    let pos_gate = kind == UtilityKind::Positional && matches!(pos_in_batch(pages)?, Some(p) if p >= t_p);
    Ok(pages
        .iter()
        .map(|p| {
            let mut v = 0.0;
            if ratio_gate && page_violates_ratio(p, t_e) {
                v -= 1.0;
            }
            if pos_gate && matches!(page_mean_pos(p), Some(m) if m >= t_p) {
                v -= 1.0;
            }
            v
        })
        .collect())
}

fn fresh_count(page: &[i64], window: Option<usize>) -> usize {
    (0..page.len())
        .filter(|&i| {
            let start = window.map_or(0, |w| i.saturating_sub(w));
            !page[start..i].contains(&page[i])
        })
        .count()
}

/// Share of items whose group does not occur in the preceding window.
pub fn diversity(pages: &[Vec<i64>], window: Option<usize>) -> Result<f64> {
    let len = check_batch(pages)?;
    let fresh: usize = pages.iter().map(|p| fresh_count(p, window)).sum();
    Ok(fresh as f64 / (pages.len() * len) as f64)
}

pub fn diversity_terms(pages: &[Vec<i64>], window: Option<usize>) -> Result<Vec<f64>> {
    let len = check_batch(pages)?;
    Ok(pages.iter().map(|p| fresh_count(p, window) as f64 / len as f64).collect())
}

fn ordered_pairs(page: &[i64]) -> usize {
    let mut c = 0;
    for i in 0..page.len() {
        for j in i + 1..page.len() {
            if page[i] >= page[j] {
                c += 1;
            }
        }
    }
    c
}

/// Share of position pairs `i < j` with `priority_i ≥ priority_j`, averaged
/// over pages. Input pages hold priorities.
pub fn group_ordering(pages: &[Vec<i64>]) -> Result<f64> {
    let terms = ordering_terms(pages)?;
    let mut total = 0.0;
    for t in &terms {
        total += t;
    }
    Ok(total / pages.len() as f64)
}

pub fn ordering_terms(pages: &[Vec<i64>]) -> Result<Vec<f64>> {
    let len = check_batch(pages)?;
    if len < 2 {
        return invalid("group ordering needs pages of at least 2 slots");
    }
    let pairs = (len * (len - 1) / 2) as f64;
    Ok(pages.iter().map(|p| ordered_pairs(p) as f64 / pairs).collect())
}

/// Mean of per-position click probabilities.
pub fn engagement_utility(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return invalid("engagement of an empty list");
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

/// `R_w = Σ w_i U_i`.
pub fn scalarize(u: &[f64], w: &[f64]) -> Result<f64> {
    if u.len() != w.len() {
        return invalid(format!("{} utilities but {} weights", u.len(), w.len()));
    }
    Ok(u.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Independent `w_i ~ U(0, cap_i)`.
pub fn sample_preference_with(caps: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    caps.iter()
        .map(|&c| if c > 0.0 { rng.random_range(0.0..=c) } else { 0.0 })
        .collect()
}

pub fn sample_preference(caps: &[f64], seed: u64) -> Vec<f64> {
    sample_preference_with(caps, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `ERR_IA@i − ERR_IA@(i−1)` for 1-based `i`.
pub fn diversity_step_reward(list: &metrics::JudgedList, i: usize) -> Result<f64> {
    if i == 0 || i > list.grades.len() {
        return invalid(format!("step {i} outside 1..={}", list.grades.len()));
    }
    let prev = if i == 1 { 0.0 } else { metrics::err_ia_at_k(list, i - 1) };
    Ok(metrics::err_ia_at_k(list, i) - prev)
}

fn memberships(spec: &UtilitySpec, pages: &[PageRef]) -> Result<Vec<Vec<bool>>> {
    pages
        .iter()
        .map(|p| p.items.iter().map(|it| spec.is_member(it)).collect())
        .collect()
}

fn labels(spec: &UtilitySpec, pages: &[PageRef]) -> Result<Vec<Vec<i64>>> {
    let f = spec.field()?;
    Ok(pages
        .iter()
        .map(|p| p.items.iter().map(|it| it.group(f)).collect())
        .collect())
}

fn priorities(spec: &UtilitySpec, pages: &[PageRef]) -> Result<Vec<Vec<i64>>> {
    pages
        .iter()
        .map(|p| p.items.iter().map(|it| spec.priority(it)).collect())
        .collect()
}

/// Satisfaction used by the intent-diversity kind: half the predicted click
/// probability relative to the batch mean at the same position, capped at 1.
/// An average item scores 0.5, the value of a relevant binary grade.
pub fn relative_satisfaction(predictions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let len = predictions.first().map_or(0, Vec::len);
    if predictions.iter().any(|p| p.len() != len) {
        return invalid("pages of different lengths");
    }
    let mut mean = vec![0.0; len];
    for p in predictions {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= predictions.len() as f64;
    }
    Ok(predictions
        .iter()
        .map(|p| {
            p.iter()
                .zip(&mean)
                .map(|(&v, &m)| if m > 0.0 { (0.5 * v / m).min(1.0) } else { 0.5 })
                .collect()
        })
        .collect())
}

fn intent_terms(spec: &UtilitySpec, pages: &[PageRef], predictions: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    let preds = predictions_for(spec, pages, predictions)?;
    let sat = relative_satisfaction(preds)?;
    let f = spec.field()?;
    pages
        .iter()
        .zip(&sat)
        .map(|(p, sat)| {
            if sat.len() != p.items.len() {
                return invalid(format!("{}: {} predictions for {} slots", spec.name, sat.len(), p.items.len()));
            }
            let intents: Vec<i64> = p.items.iter().map(|it| it.group(f)).collect();
            let pool: Vec<i64> = p.pool.iter().map(|it| it.group(f)).collect();
            Ok(metrics::err_ia_soft(sat, &intents, &pool, p.items.len()))
        })
        .collect()
}

fn predictions_for<'a>(spec: &UtilitySpec, pages: &[PageRef], predictions: Option<&'a [Vec<f64>]>) -> Result<&'a [Vec<f64>]> {
    match predictions {
        Some(p) if p.len() == pages.len() => Ok(p),
        _ => invalid(format!("{}: click predictions missing for the batch", spec.name)),
    }
}

/// Per-page terms of one utility. `predictions` holds the evaluator's
/// per-position click probabilities of each page; the engagement and
/// intent-diversity kinds need them.
pub fn page_terms(spec: &UtilitySpec, pages: &[PageRef], predictions: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    if pages.is_empty() {
        return invalid("empty batch");
    }
    match spec.kind {
        UtilityKind::Strict | UtilityKind::Gated | UtilityKind::Positional => flow_control_terms(
            spec.kind,
            &memberships(spec, pages)?,
            spec.t_e.unwrap_or(0.0),
            spec.t_p.unwrap_or(1.0),
        ),
        UtilityKind::Diversity => diversity_terms(&labels(spec, pages)?, spec.window),
        UtilityKind::Ordering => ordering_terms(&priorities(spec, pages)?),
        UtilityKind::Engagement => predictions_for(spec, pages, predictions)?
            .iter()
            .map(|p| engagement_utility(p))
            .collect(),
        UtilityKind::IntentDiversity => intent_terms(spec, pages, predictions),
    }
}

/// Batch value of one utility, straight from its formula.
pub fn batch_value(spec: &UtilitySpec, pages: &[PageRef], predictions: Option<&[Vec<f64>]>) -> Result<f64> {
    if pages.is_empty() {
        return invalid("empty batch");
    }
    let t_e = spec.t_e.unwrap_or(0.0);
    match spec.kind {
        UtilityKind::Strict => flow_control_strict(&memberships(spec, pages)?, t_e),
        UtilityKind::Gated => flow_control_gated(&memberships(spec, pages)?, t_e),
        UtilityKind::Positional => flow_control_positional(&memberships(spec, pages)?, t_e, spec.t_p.unwrap_or(1.0)),
        UtilityKind::Diversity => diversity(&labels(spec, pages)?, spec.window),
        UtilityKind::Ordering => group_ordering(&priorities(spec, pages)?),
        UtilityKind::Engagement | UtilityKind::IntentDiversity => {
            let terms = page_terms(spec, pages, predictions)?;
            Ok(terms.iter().sum::<f64>() / terms.len() as f64)
        }
    }
}

/// Per-page terms of every utility: `out[u][p]`.
pub fn all_page_terms(specs: &[UtilitySpec], pages: &[PageRef], predictions: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
    specs.iter().map(|s| page_terms(s, pages, predictions)).collect()
}

/// Utility vector of a batch, aligned with `specs`.
pub fn utility_vector(specs: &[UtilitySpec], pages: &[PageRef], predictions: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    specs.iter().map(|s| batch_value(s, pages, predictions)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(flags: &[u8]) -> Vec<bool> {
        flags.iter().map(|&f| f == 1).collect()
    }

    #[test]
    fn strict_examples() {
        assert_eq!(flow_control_strict(&[page(&[1, 1, 0, 0])], 0.2).unwrap(), 0.0);
        assert_eq!(flow_control_strict(&[page(&[0, 0]), page(&[0, 0])], 0.2).unwrap(), -1.0);
        let b = [page(&[1, 0, 0, 0]), page(&[1, 1, 1, 0])];
        assert_eq!(flow_control_strict(&b, 0.5).unwrap(), -0.5);
    }

    #[test]
    fn gated_examples() {
        // batch ratio 0.625 > 0.5 although page one violates
        let closed = [page(&[1, 0, 0, 0]), page(&[1, 1, 1, 1])];
        assert_eq!(flow_control_gated(&closed, 0.5).unwrap(), 0.0);
        let b = [page(&[1, 0, 0, 0]), page(&[1, 1, 1, 0])];
        assert_eq!(flow_control_gated(&b, 0.5).unwrap(), -0.5);
        assert_eq!(flow_control_gated(&[page(&[0, 0, 0])], 0.0).unwrap(), -1.0);
    }

    #[test]
    fn positional_examples() {
        let early = [page(&[1, 0, 0, 0]), page(&[1, 1, 0, 0])];
        let terms = flow_control_terms(UtilityKind::Positional, &early, 0.0, 2.0).unwrap();
        assert_eq!(terms, vec![0.0, 0.0]);
        // ratio 0.5 > t_e=0.4 closes the ratio gate, leaving the position term
        assert_eq!(flow_control_positional(&[page(&[0, 0, 1, 1])], 0.4, 3.0).unwrap(), -1.0);
        // batch mean position (1+2+4)/3 < 3 closes the position gate
        let gate = [page(&[1, 1, 0, 0]), page(&[0, 0, 0, 1])];
        assert_eq!(flow_control_positional(&gate, 0.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn positional_ignores_pages_without_group_items() {
        let b = [page(&[0, 0, 0, 0]), page(&[0, 0, 1, 1])];
        let t = flow_control_terms(UtilityKind::Positional, &b, 0.0, 3.0).unwrap();
        assert_eq!(t, vec![0.0, -1.0]);
    }

    #[test]
    fn diversity_examples() {
        let p = vec![vec![0, 1, 0, 2]];
        assert_eq!(diversity(&[vec![0, 1, 2, 3]], None).unwrap(), 1.0);
        assert_eq!(diversity(&p, None).unwrap(), 0.75);
        assert_eq!(diversity(&p, Some(1)).unwrap(), 1.0);
    }

    #[test]
    fn ordering_examples() {
        assert_eq!(group_ordering(&[vec![2, 2, 1, 1]]).unwrap(), 1.0);
        assert_eq!(group_ordering(&[vec![1, 1, 2, 2]]).unwrap(), 2.0 / 6.0);
        assert_eq!(group_ordering(&[vec![3, 3, 3]]).unwrap(), 1.0);
        assert!(group_ordering(&[vec![1]]).is_err());
    }

    #[test]
    fn scalarize_examples() {
        assert_eq!(scalarize(&[0.3, 0.9], &[0.0, 1.0]).unwrap(), 0.9);
        assert_eq!(scalarize(&[0.3, 0.9], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((scalarize(&[-1.0, 0.6], &[0.5, 0.2]).unwrap() + 0.38).abs() < 1e-15);
        assert!(scalarize(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn engagement_examples() {
        assert_eq!(engagement_utility(&[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(engagement_utility(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((engagement_utility(&[0.2, 0.4, 0.9]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn preference_sampling() {
        assert_eq!(sample_preference(&[0.0, 0.0], 3), vec![0.0, 0.0]);
        assert_eq!(sample_preference(&[1.0, 0.4], 3), sample_preference(&[1.0, 0.4], 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| sample_preference_with(&[1.0], &mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(flow_control_strict(&[], 0.1).is_err());
        assert!(flow_control_gated(&[], 0.1).is_err());
        assert!(flow_control_positional(&[], 0.1, 2.0).is_err());
    }

    #[test]
    fn step_reward_example() {
        let l = metrics::JudgedList::new(vec![1, 1], vec![], vec![0, 0]);
        assert_eq!(diversity_step_reward(&l, 1).unwrap(), 0.5);
        assert_eq!(diversity_step_reward(&l, 2).unwrap(), 0.125);
        assert!(diversity_step_reward(&l, 3).is_err());
        assert!(diversity_step_reward(&l, 0).is_err());
    }
}
