//! Set-relative feature augmentation shared by the actor and the evaluator.

use crate::data::{ContentType, Item};

/// Columns appended to an item's raw features: CTR rank within the set, CTR
/// z-score within the set, one-hot content type, cold flag, new flag.
pub const AUGMENT_EXTRA: usize = 2 + ContentType::ALL.len() + 2;

/// Normalized CTR rank `(rank − 1)/(M − 1)` (0 for a single item); higher CTR
/// ranks first and ties go to the smaller id.
pub fn ctr_ranks(items: &[Item]) -> Vec<f64> {
    let m = items.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .ctr
            .total_cmp(&items[a].ctr)
            .then(items[a].id.cmp(&items[b].id))
    });
    let mut out = vec![0.0; m];
    if m > 1 {
        for (rank, &i) in order.iter().enumerate() {
            out[i] = rank as f64 / (m - 1) as f64;
        }
    }
    out
}

/// CTR z-scores within the set (population deviation; 0 when constant).
/// Moments are summed in id order, so the result does not depend on how the
/// set is listed.
pub fn ctr_zscores(items: &[Item]) -> Vec<f64> {
    let n = items.len() as f64;
    let mut sorted: Vec<&Item> = items.iter().collect();
    sorted.sort_by_key(|i| i.id);
    let mean = sorted.iter().map(|i| i.ctr).sum::<f64>() / n;
    let var = sorted.iter().map(|i| (i.ctr - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    items
        .iter()
        .map(|i| if sd > 0.0 { (i.ctr - mean) / sd } else { 0.0 })
        .collect()
}

/// Raw features followed by the [`AUGMENT_EXTRA`] set-relative columns.
pub fn augment_features(items: &[Item]) -> Vec<Vec<f64>> {
    if items.is_empty() {
        return Vec::new();
    }
    let ranks = ctr_ranks(items);
    let z = ctr_zscores(items);
    items
        .iter()
        .enumerate()
        .map(|(k, it)| {
            let mut row = Vec::with_capacity(it.features.len() + AUGMENT_EXTRA);
            row.extend_from_slice(&it.features);
            row.push(ranks[k]);
            row.push(z[k]);
            for ct in ContentType::ALL {
                row.push(if it.ctype == ct { 1.0 } else { 0.0 });
            }
            row.push(f64::from(u8::from(it.cold)));
            row.push(f64::from(u8::from(it.new)));
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(ctrs: &[f64]) -> Vec<Item> {
        ctrs.iter()
            .enumerate()
            .map(|(i, &ctr)| Item {
                id: i as u64,
                seller: 0,
                category: 0,
                ctype: ContentType::Image,
                prio: 0,
                cold: false,
                new: true,
                ctr,
                features: vec![1.0],
            })
            .collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(ctr_ranks(&items(&[0.3, 0.1, 0.2])), vec![0.0, 1.0, 0.5]);
        assert_eq!(ctr_ranks(&items(&[0.3])), vec![0.0]);
        assert_eq!(ctr_ranks(&items(&[0.2, 0.2, 0.2])), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn layout_and_width() {
        let rows = augment_features(&items(&[0.3, 0.1]));
        assert_eq!(rows[0].len(), 1 + AUGMENT_EXTRA);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&rows[0], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]), "{:?}", rows[0]);
        assert!(close(&rows[1], &[1.0, 1.0, -1.0, 0.0, 1.0, 0.0, 0.0, 1.0]), "{:?}", rows[1]);
    }

    #[test]
    fn constant_ctr_has_zero_zscore() {
        assert_eq!(ctr_zscores(&items(&[0.4, 0.4])), vec![0.0, 0.0]);
    }
}
