use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dualchain::kgdata::{
    bern_stats, parse_triplets, sample_negative, synthetic_dataset, tokenize, Split, Triplet, Vocab,
};
use dualchain::numerics::{ops, Tensor};
use dualchain::trainer::{lr_schedule, project_embeddings, Checkpoint, TrainConfig, Trainer};

fn small_checkpoint_bytes() -> Vec<u8> {
    let data = synthetic_dataset(6, 2, 12, 1);
    let config = TrainConfig {
        k: 6,
        n_k: 2,
        d_g: 4,
        n_b: 6,
        epochs: 1,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::<f32>::new(config, &data).unwrap();
    t.train(&data, Some(1), |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_trainer(&t, &data, false).save(&path).unwrap();
    std::fs::read(path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_is_a_distribution(mut row in prop::collection::vec(-700.0f64..700.0, 1..64)) {
        ops::softmax_in_place(&mut row);
        let sum: f64 = row.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn conv_output_width(k in 3usize..400, n_k in 1usize..5) {
        let m = Tensor::<f64>::full(&[3, k], 0.5);
        let kernels = Tensor::full(&[n_k, 9], 1.0);
        let out = ops::conv_stride3(&m, &kernels, &vec![0.0; n_k]).unwrap();
        prop_assert_eq!(out.shape(), &[n_k, (k - 3) / 3 + 1][..]);
        prop_assert!(out.data().iter().all(|&x| (x - 4.5).abs() < 1e-12));
    }

    #[test]
    fn projection_caps_norms_and_keeps_short_rows(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..10)) {
        let flat: Vec<f64> = rows.concat();
        let mut t = Tensor::from_vec(&[rows.len(), 4], flat).unwrap();
        project_embeddings(&mut t);
        for (before, after) in rows.iter().zip(t.data().chunks(4)) {
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm(after) <= 1.0 + 1e-12);
            if norm(before) <= 1.0 {
                prop_assert_eq!(before.as_slice(), after);
            }
        }
    }

    #[test]
    fn learning_rate_never_increases(lr0 in 1e-5f64..1.0, decay in 0.5f64..=1.0, epoch in 0usize..5000) {
        prop_assert!(lr_schedule(epoch + 1, lr0, decay) <= lr_schedule(epoch, lr0, decay));
        prop_assert_eq!(lr_schedule(0, lr0, decay), lr0);
    }

    #[test]
    fn triplet_files_round_trip(raw in prop::collection::vec(("[a-z]{1,4}", "[A-Z]{1,3}", "[a-z]{1,4}"), 1..30)) {
        let text: String = raw.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
        let mut vocab = Vocab::new();
        let (set, report) = parse_triplets(text.as_bytes(), &mut vocab, Split::Train).unwrap();
        let mut unique = raw.clone();
        let mut seen = std::collections::HashSet::new();
        unique.retain(|x| seen.insert(x.clone()));
        prop_assert_eq!(set.len(), unique.len());
        prop_assert_eq!(report.duplicates, raw.len() - unique.len());
        for (t, (h, r, tail)) in set.iter().zip(&unique) {
            prop_assert_eq!(vocab.entity_name(t.h), h.as_str());
            prop_assert_eq!(vocab.relation_name(t.r), r.as_str());
            prop_assert_eq!(vocab.entity_name(t.t), tail.as_str());
        }
    }

    #[test]
    fn negatives_change_one_side_and_avoid_positives(seed in 0u64..1000) {
        let data = synthetic_dataset(15, 3, 40, seed);
        let stats = bern_stats(&data.train, 3).unwrap();
        let known = data.sampling_index();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &p in &data.train.triplets {
            let n: Triplet = sample_negative(p, &stats, 15, &known, &mut rng).unwrap();
            prop_assert!(!known.contains(&n));
            prop_assert_eq!(n.r, p.r);
            prop_assert!((n.h == p.h) != (n.t == p.t));
        }
    }

    #[test]
    fn tokenizing_is_idempotent(text in "[ -~]{0,60}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        prop_assert!(once.iter().all(|w| !w.is_empty() && w.chars().all(|c| !c.is_uppercase())));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn damaged_checkpoints_are_errors_not_panics(cut in 0usize..10_000, flip in 0usize..10_000, bits in 1u8..=255) {
        let bytes = small_checkpoint_bytes();
        let cut = cut % bytes.len();
        prop_assert!(Checkpoint::<f32>::from_bytes(&bytes[..cut]).is_err());
        let mut flipped = bytes.clone();
        let at = flip % flipped.len();
        flipped[at] ^= bits;
        // A flipped tensor byte still parses; anything else must not panic.
        let _ = Checkpoint::<f32>::from_bytes(&flipped);
        prop_assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }
}
