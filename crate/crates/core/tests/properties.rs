mod common;

use common::{random_dag, random_set, rng};
use proptest::prelude::*;
use srsched::dag::validate_dag;
use srsched::estimator::{estimate_batched, estimate_sequential, AnchorSet};
use srsched::scheduler::{ablated_dag, greedy_select_with, pack_bits, unpack_bits, Ablation, Budget, GreedyMode};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_dags_are_valid(seed in any::<u64>(), frames in 1usize..10) {
        let d = random_dag(&mut rng(seed), frames, 3, 5);
        let report = validate_dag(&d);
        prop_assert!(report.all_passed(), "{report}");
        prop_assert!(validate_dag(&ablated_dag(&d, Ablation::NoWeight)).all_passed());
    }

    #[test]
    fn batched_equals_sequential(seed in any::<u64>(), frames in 1usize..10, sets in 1usize..12) {
        let mut r = rng(seed);
        let d = random_dag(&mut r, frames, 3, 5);
        let a: Vec<AnchorSet> = (0..sets).map(|_| random_set(&mut r, d.num_patches())).collect();
        let b = estimate_batched(&d, &a).unwrap();
        for (s, e) in a.iter().zip(&b) {
            prop_assert_eq!(&estimate_sequential(&d, s).unwrap(), e);
        }
    }

    #[test]
    fn more_anchors_never_more_error(seed in any::<u64>(), frames in 1usize..10) {
        let mut r = rng(seed);
        let d = random_dag(&mut r, frames, 3, 5);
        let small = random_set(&mut r, d.num_patches());
        let mut big = small.clone();
        for id in random_set(&mut r, d.num_patches()).iter() {
            big.insert(id);
        }
        let (es, eb) = (estimate_sequential(&d, &small).unwrap(), estimate_sequential(&d, &big).unwrap());
        for (x, y) in es.flat().iter().zip(eb.flat()) {
            prop_assert!(y <= *x + 1e-12 * x.abs());
        }
    }

    #[test]
    fn greedy_modes_agree(seed in any::<u64>(), frames in 1usize..8, k in 0usize..8, batch in 1usize..40) {
        let d = random_dag(&mut rng(seed), frames, 3, 5);
        let k = k.min(d.num_patches());
        let v = greedy_select_with(&d, k, GreedyMode::Vanilla).unwrap();
        prop_assert_eq!(&greedy_select_with(&d, k, GreedyMode::Batched(batch)).unwrap(), &v);
        prop_assert!(v.1.is_non_increasing());
        prop_assert_eq!(v.0.count(), k);
    }

    #[test]
    fn anchor_bits_round_trip(seed in any::<u64>(), len in 0usize..200) {
        let a = random_set(&mut rng(seed), len);
        let bytes = pack_bits(&a);
        prop_assert_eq!(bytes.len(), len.div_ceil(8));
        prop_assert_eq!(unpack_bits(&bytes, len).unwrap(), a);
    }

    #[test]
    fn ratio_budget_floors(total in 1usize..5000, pct in 0u32..=100) {
        let k = Budget::Ratio(pct as f64 / 100.0).resolve(total).unwrap();
        prop_assert_eq!(k, total * pct as usize / 100);
        prop_assert_eq!(format!("{pct}%").parse::<Budget>().unwrap().resolve(total).unwrap(), k);
    }
}
