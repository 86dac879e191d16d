use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use longvit_core::attention::{
    mixing_weights, multihead_dilated_attention, oracle_masked_dense, select_indices,
    AttentionWeights, DilationSchedule,
};
use longvit_core::image::{interpolate_pos_embed, PosEmbedTable};
use longvit_core::init::normal;
use longvit_core::seqpar::{distributed_forward, partition};
use longvit_core::tasks::{auc_binary, kfold_split};
use longvit_core::tensor::{read_checkpoint, write_checkpoint, Tensor};
use longvit_core::verify::random_schedule;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_tiles_the_sequence(n in 1usize..5000, workers in 1usize..17) {
        prop_assume!(workers <= n);
        let p = partition(n, workers).unwrap();
        prop_assert_eq!(p.workers(), workers);
        prop_assert_eq!(p.ranges[0].start, 0);
        prop_assert_eq!(p.ranges.last().unwrap().end, n);
        for w in p.ranges.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        let lens: Vec<usize> = (0..workers).map(|w| p.local_len(w)).collect();
        prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        for t in [0, n / 2, n - 1] {
            prop_assert!(p.ranges[p.owner(t)].contains(&t));
        }
    }

    #[test]
    fn selected_positions_share_a_residue(
        start_seg in 0usize..8,
        log_w in 0u32..8,
        log_r in 0u32..5,
        offset in 0usize..32,
        n in 1usize..600,
    ) {
        let (w, r) = (1usize << log_w, 1usize << log_r.min(log_w));
        let start = start_seg * w;
        let idx = select_indices(start, w, r, offset, n);
        let end = (start + w).min(n);
        let expected = (start..end).filter(|i| (i - start) % r == offset % r).count();
        prop_assert_eq!(idx.len(), expected);
        prop_assert!(idx.windows(2).all(|p| p[0] + r == p[1]));
        prop_assert!(idx.iter().all(|&i| i >= start && i < end && (i - start) % r == offset % r));
    }

    #[test]
    fn mixing_weights_form_a_distribution(
        parts in prop::collection::vec((-30.0f64..30.0, prop_oneof![Just(0.0), 0.01f64..50.0]), 1..6),
    ) {
        prop_assume!(parts.iter().any(|p| p.1 > 0.0));
        let a = mixing_weights(&parts);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (w, p) in a.iter().zip(&parts) {
            prop_assert!(*w >= 0.0);
            if p.1 == 0.0 {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn folds_are_balanced_within_each_stratum(
        strata in prop::collection::vec(0usize..3, 10..120),
        k in 2usize..10,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= strata.len());
        let folds = kfold_split(&strata, k, seed).unwrap();
        prop_assert_eq!(&folds, &kfold_split(&strata, k, seed).unwrap());
        let mut sizes = vec![0usize; k];
        for &f in &folds {
            prop_assert!(f < k);
            sizes[f] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for s in 0..3 {
            let mut per = vec![0usize; k];
            for (i, &f) in folds.iter().enumerate() {
                if strata[i] == s {
                    per[f] += 1;
                }
            }
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn interpolation_stays_within_the_table_range(
        native in (1usize..6, 1usize..6),
        target in (1usize..9, 1usize..9),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = PosEmbedTable::random(native, 4, 1.0, &mut rng);
        let out = interpolate_pos_embed(&table, target).unwrap();
        prop_assert_eq!(out.shape(), &[target.0 * target.1, 4][..]);
        for c in 0..4 {
            let col = (0..table.table.rows()).map(|r| table.table.at2(r, c));
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            for r in 0..out.rows() {
                let v = out.at2(r, c);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn schedule_text_round_trips(seed in any::<u64>(), n in 2usize..4096) {
        let s = random_schedule(n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(s.to_string().parse::<DilationSchedule>().unwrap(), s);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(
        values in prop::collection::vec(prop::num::f64::ANY, 1..40),
        cols in 1usize..5,
    ) {
        let rows = values.len() / cols;
        prop_assume!(rows > 0);
        let t = Tensor::new(vec![rows, cols], values[..rows * cols].to_vec()).unwrap();
        let params = BTreeMap::from([("b".to_string(), Tensor::scalar(1.5)), ("a.w".to_string(), t)]);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &params).unwrap();
        let back = read_checkpoint(bytes.as_slice(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.keys().collect::<Vec<_>>(), params.keys().collect::<Vec<_>>());
        for (k, v) in &params {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[k]), bits(v));
            prop_assert_eq!(back[k].shape(), v.shape());
        }
    }

    #[test]
    fn auc_ignores_monotone_rescaling(scores in prop::collection::vec(0u8..20, 4..60), seed in any::<u64>()) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let a = auc_binary(&s, &labels).unwrap();
        let warped: Vec<f64> = s.iter().map(|v| (v * 0.3).exp() - 7.0).collect();
        prop_assert_eq!(auc_binary(&warped, &labels).unwrap(), a);
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc_binary(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparse_attention_matches_masked_oracle(n in 1usize..200, heads in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = random_schedule(n, &mut rng);
        let w = AttentionWeights::random_with_bias(heads * 3, heads, 0.4, &mut rng).unwrap();
        let x = normal(&[n, heads * 3], 1.0, &mut rng);
        let fast = multihead_dilated_attention(&x, &w, &sched).unwrap();
        let slow = oracle_masked_dense(&x, &w, &sched).unwrap();
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-10);
    }

    #[test]
    fn distributed_matches_single_node(n in 8usize..300, workers in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = random_schedule(n, &mut rng);
        let w = AttentionWeights::random_with_bias(8, 2, 0.4, &mut rng).unwrap();
        let x = normal(&[n, 8], 1.0, &mut rng);
        let single = multihead_dilated_attention(&x, &w, &sched).unwrap();
        let (out, log) = distributed_forward(&x, &w, &sched, workers).unwrap();
        prop_assert_eq!(out.data(), single.data());
        if workers == 1 {
            prop_assert!(log.records.is_empty());
        }
    }
}
