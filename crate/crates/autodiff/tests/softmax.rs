use proptest::prelude::*;
use steerank_autodiff::{masked_softmax, DiffError};

#[test]
fn uniform_logits() {
    assert_eq!(masked_softmax(&[0.0; 4], &[true; 4]).unwrap(), vec![0.25; 4]);
}

#[test]
fn single_survivor() {
    let p = masked_softmax(&[5.0, -3.0, 7.0], &[false, true, false]).unwrap();
    assert_eq!(p, vec![0.0, 1.0, 0.0]);
}

#[test]
fn analytic_two_way() {
    let p = masked_softmax(&[0.0, 2f64.ln()], &[true, true]).unwrap();
    assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn all_masked_is_infeasible() {
    assert!(matches!(
        masked_softmax(&[1.0, 2.0], &[false, false]),
        Err(DiffError::NoFeasibleAction)
    ));
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(matches!(masked_softmax(&[1.0], &[true, true]), Err(DiffError::Shape(_))));
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-30.0f64..30.0, n),
            prop::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(l, mut m, forced)| {
                m[forced] = true;
                (l, m)
            })
    })
}

proptest! {
    #[test]
    fn sums_to_one_with_exact_zeros((logits, mask) in case()) {
        let p = masked_softmax(&logits, &mask).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (pi, ok) in p.iter().zip(&mask) {
            if *ok { prop_assert!(*pi > 0.0) } else { prop_assert_eq!(*pi, 0.0) }
        }
    }

    #[test]
    fn shift_invariant((logits, mask) in case(), c in -50.0f64..50.0) {
        let p = masked_softmax(&logits, &mask).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        let q = masked_softmax(&shifted, &mask).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_logits_are_ignored((logits, mask) in case(), junk in -100.0f64..100.0) {
        let p = masked_softmax(&logits, &mask).unwrap();
        let altered: Vec<f64> = logits.iter().zip(&mask).map(|(&z, &ok)| if ok { z } else { junk }).collect();
        prop_assert_eq!(p, masked_softmax(&altered, &mask).unwrap());
    }
}
