use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempo_hcl::contrastive::ProjectionHead;
use tempo_hcl::encoder::{global_avg_pool, Pathway, Tap};
use tempo_hcl::icm::{compute_icm, min_max};
use tempo_hcl::memory_bank::MemoryBank;
use tempo_hcl::probe::Split;
use tempo_hcl::synth_data::{fast_indices, make_tempo_pair, slow_indices, RawClip};
use tempo_hcl::tensor::{l2_norm, normalize_in_place, Tensor};

fn tempo() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![Just(1usize), Just(2), Just(4), Just(8), Just(16), Just(32), Just(64)].prop_flat_map(|tau| {
        let alphas: Vec<usize> = (1..=tau).filter(|a| tau % a == 0).collect();
        (Just(tau), proptest::sample::select(alphas))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn slow_frames_are_a_subset_of_fast_frames((tau, alpha) in tempo()) {
        let slow = slow_indices(tau);
        let fast = fast_indices(tau, alpha);
        prop_assert_eq!(slow.len(), 64 / tau);
        prop_assert_eq!(fast.len(), alpha * 64 / tau);
        prop_assert!(slow.iter().all(|i| fast.contains(i)));
        prop_assert!(fast.iter().all(|&i| i < 64));
        for (j, &i) in slow.iter().enumerate() {
            prop_assert_eq!(fast[j * alpha], i);
        }
    }

    #[test]
    fn tempo_pair_gathers_the_indexed_frames((tau, alpha) in tempo(), start in 0usize..5) {
        let data: Vec<f32> = (0..64 * 2).map(|v| v as f32).collect();
        let raw = RawClip { frames: Tensor::from_vec(&[64, 1, 1, 2], data).unwrap(), instance_id: 3, start_frame: start };
        let pair = make_tempo_pair(&raw, tau, alpha).unwrap();
        for (j, &i) in fast_indices(tau, alpha).iter().enumerate() {
            prop_assert_eq!(pair.fast.slab(j), raw.frames.slab(i));
        }
        for (j, &i) in slow_indices(tau).iter().enumerate() {
            prop_assert_eq!(pair.slow.slab(j), raw.frames.slab(i));
        }
    }

    #[test]
    fn bank_rows_stay_unit_norm(
        seed in any::<u64>(),
        momentum in 0.0f64..0.99,
        rows in proptest::collection::vec(-2.0f32..2.0, 3 * 6),
    ) {
        let mut bank = MemoryBank::<f32>::init_for(10, 6, seed, Pathway::Fast, Tap::Res4, momentum).unwrap();
        prop_assume!(rows.chunks(6).all(|r| l2_norm(r) > 1e-2));
        let mut rows = rows;
        rows.chunks_mut(6).for_each(|r| { normalize_in_place(r); });
        bank.update(&[1, 4, 7], &Tensor::from_vec(&[3, 6], rows).unwrap()).unwrap();
        for i in 0..bank.len() {
            prop_assert!((l2_norm(bank.row(i).unwrap()) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover(n in 2usize..400, frac in 0.05f64..0.9, seed in any::<u64>()) {
        let split = Split::random(n, frac, seed).unwrap();
        split.check_disjoint().unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split, Split::random(n, frac, seed).unwrap());
    }

    #[test]
    fn correspondence_values_are_bounded(
        act in proptest::collection::vec(-3.0f64..3.0, 4 * 2 * 3 * 3),
        reference in proptest::collection::vec(-1.0f64..1.0, 5),
        head_seed in any::<u64>(),
    ) {
        let act = Tensor::from_vec(&[4, 2, 3, 3], act).unwrap();
        let head = ProjectionHead::<f64>::new("h", 4, 5, &mut ChaCha8Rng::seed_from_u64(head_seed));
        prop_assume!(l2_norm(&reference) > 1e-3);
        let cos = compute_icm(&act, &reference, Some(&head), true).unwrap();
        prop_assert_eq!(cos.shape(), &[2, 3, 3]);
        prop_assert!(cos.data().iter().all(|v| (-1.0 - 1e-9..=1.0 + 1e-9).contains(v)));
        let scaled = min_max(&cos);
        prop_assert!(scaled.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let raw = compute_icm(&act, &reference, Some(&head), false).unwrap();
        prop_assert_eq!(raw.shape(), cos.shape());
    }

    #[test]
    fn pooling_is_the_spatiotemporal_mean(act in proptest::collection::vec(-5.0f64..5.0, 3 * 2 * 2 * 4)) {
        let t = Tensor::from_vec(&[3, 2, 2, 4], act.clone()).unwrap();
        let pooled = global_avg_pool(&t).unwrap();
        for (c, p) in pooled.iter().enumerate() {
            let mean = act[c * 16..(c + 1) * 16].iter().sum::<f64>() / 16.0;
            prop_assert!((p - mean).abs() < 1e-12);
        }
    }
}
