use proptest::prelude::*;
use steerank_autodiff::{Tape, Tensor};

fn column_sums(rows: &[Vec<f64>]) -> Vec<u64> {
    let t = Tape::new();
    let x = t.constant(Tensor::from_rows(rows).unwrap());
    let s = t.sum_rows(x).unwrap();
    let out = t.value(s).data().iter().map(|v| v.to_bits()).collect();
    out
}

#[test]
fn column_sums_match_plain_addition_on_exact_values() {
    let rows = vec![vec![1.0, -2.0], vec![0.5, 4.0], vec![3.25, 0.0]];
    let t = Tape::new();
    let x = t.constant(Tensor::from_rows(&rows).unwrap());
    let s = t.sum_rows(x).unwrap();
    assert_eq!(t.value(s).data(), &[4.75, 2.0]);
}

proptest! {
    #[test]
    fn column_sums_ignore_row_order(
        rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..12),
        rot in 0usize..12,
    ) {
        let mut shuffled = rows.clone();
        let k = rot % rows.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(column_sums(&rows), column_sums(&shuffled));
    }
}
