//! Property tests for the similarity, loss, AUC, ground-truth, optimizer and file-format invariants.

use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;

use ssmnet::eval::roc_auc_scores;
use ssmnet::ingest::{
    decode_ssmf, encode_ssmf, read_beats, write_beats, BeatGrid, BeatSource, Segment, SegmentAnnotation,
};
use ssmnet::loss::{weighted_bce, weighted_bce_grad, LossConfig, Normalize};
use ssmnet::optim::{madgrad_step, MadgradConfig, MadgradState};
use ssmnet::ssm::{ground_truth_ssm, pgm_bytes, similarity_backward, similarity_matrix, BinarySSM, SimilarityMatrix};

fn normalized(rows: Vec<Vec<f64>>) -> Option<Array2<f64>> {
    let dim = rows[0].len();
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in &rows {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-3 {
            return None;
        }
        flat.extend(r.iter().map(|v| v / n));
    }
    Array2::from_shape_vec((rows.len(), dim), flat).ok()
}

fn embeddings() -> impl Strategy<Value = Array2<f64>> {
    (2usize..8, 2usize..12).prop_flat_map(|(t, d)| {
        vec(vec(-1.0f64..1.0, d), t).prop_filter_map("near-zero row", normalized)
    })
}

fn labels(max_t: usize) -> impl Strategy<Value = Vec<usize>> {
    vec(0usize..3, 2..max_t)
}

fn sum_cfg() -> LossConfig {
    LossConfig {
        normalize: Normalize::Sum,
        ..LossConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn similarity_is_half_shifted_cosine(e in embeddings()) {
        let s = similarity_matrix(e.view()).unwrap();
        let v = s.values();
        for i in 0..e.nrows() {
            prop_assert_eq!(v[[i, i]], 1.0);
            for j in 0..e.nrows() {
                prop_assert_eq!(v[[i, j]], v[[j, i]]);
                let cos = e.row(i).dot(&e.row(j));
                prop_assert!((v[[i, j]] - (1.0 + cos) / 2.0).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&v[[i, j]]));
            }
        }
    }

    #[test]
    fn similarity_rejects_non_unit_rows(e in embeddings(), scale in 1.01f64..3.0) {
        let scaled = e.mapv(|v| v * scale);
        prop_assert!(similarity_matrix(scaled.view()).is_err());
    }

    #[test]
    fn similarity_backward_matches_directional_derivative(
        e in embeddings(),
        seed_grad in vec(-1.0f64..1.0, 64),
        dir in vec(-1.0f64..1.0, 96),
    ) {
        // d/dh <G, Ŝ(e + h·D)> at h = 0, with Ŝ written as 1 − ¼‖e_i − e_j‖² on raw rows
        let t = e.nrows();
        let d = e.ncols();
        let g = Array2::from_shape_fn((t, t), |(i, j)| seed_grad[(i * t + j) % 64]);
        let dirm = Array2::from_shape_fn((t, d), |(i, k)| dir[(i * d + k) % 96]);
        let raw = |x: &Array2<f64>| {
            let mut f = 0.0;
            for i in 0..t {
                for j in 0..t {
                    let diff = &x.row(i) - &x.row(j);
                    f += g[[i, j]] * (1.0 - 0.25 * diff.dot(&diff));
                }
            }
            f
        };
        let h = 1e-6;
        let numeric = (raw(&(&e + &(&dirm * h))) - raw(&(&e - &(&dirm * h)))) / (2.0 * h);
        let analytic = (similarity_backward(e.view(), g.view()).unwrap() * &dirm).sum();
        prop_assert!((numeric - analytic).abs() < 1e-6 * (1.0 + analytic.abs()), "{numeric} vs {analytic}");
    }

    #[test]
    fn loss_is_non_negative_and_zero_only_near_a_perfect_match(l in labels(9), p in vec(0.0f64..=1.0, 81)) {
        let t = l.len();
        let gt = BinarySSM::from_labels(&l).unwrap();
        let est = SimilarityMatrix::new(Array2::from_shape_fn((t, t), |(i, j)| p[i * 9 + j])).unwrap();
        let v = weighted_bce(&est, &gt, &sum_cfg()).unwrap();
        prop_assert!(v.total >= 0.0);
        prop_assert!((v.per_pair_mean - v.total / (t * t) as f64).abs() < 1e-12);
        let perfect = SimilarityMatrix::new(gt.to_real::<f64>()).unwrap();
        let best = weighted_bce(&perfect, &gt, &sum_cfg()).unwrap().total;
        prop_assert!(best <= v.total + 1e-12);
        prop_assert!(best < 1e-4);
    }

    #[test]
    fn loss_gradient_matches_finite_differences(l in vec(0usize..2, 4), p in vec(0.01f64..0.99, 16)) {
        let gt = BinarySSM::from_labels(&l).unwrap();
        let base = Array2::from_shape_vec((4, 4), p).unwrap();
        for normalize in [Normalize::Sum, Normalize::Mean] {
            let cfg = LossConfig { normalize, ..LossConfig::default() };
            let objective = |m: &Array2<f64>| {
                let v = weighted_bce(&SimilarityMatrix::new(m.clone()).unwrap(), &gt, &cfg).unwrap();
                v.objective()
            };
            let grad = weighted_bce_grad(&SimilarityMatrix::new(base.clone()).unwrap(), &gt, &cfg).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let h = 1e-6;
                    let mut up = base.clone();
                    up[[i, j]] += h;
                    let mut down = base.clone();
                    down[[i, j]] -= h;
                    let numeric = (objective(&up) - objective(&down)) / (2.0 * h);
                    let err = (numeric - grad[[i, j]]).abs() / numeric.abs().max(grad[[i, j]].abs()).max(1e-8);
                    prop_assert!(err < 1e-6, "({i},{j}) {:?}: {numeric} vs {}", normalize, grad[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn loss_is_symmetric_under_transposition(l in labels(8), p in vec(0.0f64..=1.0, 64)) {
        let t = l.len();
        let gt = BinarySSM::from_labels(&l).unwrap();
        let m = Array2::from_shape_fn((t, t), |(i, j)| p[i * 8 + j]);
        let a = weighted_bce(&SimilarityMatrix::new(m.clone()).unwrap(), &gt, &sum_cfg()).unwrap().total;
        let b = weighted_bce(&SimilarityMatrix::new(m.t().to_owned()).unwrap(), &gt, &sum_cfg()).unwrap().total;
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn loss_moves_towards_the_ground_truth(l in labels(8), p in vec(0.05f64..0.9, 64), i in 0usize..8, j in 0usize..8) {
        let t = l.len();
        let (i, j) = (i % t, j % t);
        let gt = BinarySSM::from_labels(&l).unwrap();
        let m = Array2::from_shape_fn((t, t), |(a, b)| p[a * 8 + b]);
        let mut raised = m.clone();
        raised[[i, j]] += 0.05;
        let before = weighted_bce(&SimilarityMatrix::new(m).unwrap(), &gt, &sum_cfg()).unwrap().total;
        let after = weighted_bce(&SimilarityMatrix::new(raised).unwrap(), &gt, &sum_cfg()).unwrap().total;
        if gt.values()[[i, j]] == 1 {
            prop_assert!(after < before);
        } else {
            prop_assert!(after > before);
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms(l in labels(10), p in vec(0.0f64..1.0, 100), k in 0u32..6) {
        let t = l.len();
        let gt = BinarySSM::from_labels(&l).unwrap();
        prop_assume!(!gt.is_single_class());
        let scores = Array2::from_shape_fn((t, t), |(i, j)| (p[i * 10 + j] * 8.0).floor() / 8.0);
        let base = roc_auc_scores(gt.values(), &scores);
        if base.is_err() {
            // every scored pair falls in one class
            return Ok(());
        }
        let base = base.unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        let transformed = scores.mapv(|s| (3.0 * s).exp() + s.powi(2 * k as i32 + 1) - 7.0);
        prop_assert_eq!(roc_auc_scores(gt.values(), &transformed).unwrap(), base);
        let flipped = scores.mapv(|s| -s);
        prop_assert!((roc_auc_scores(gt.values(), &flipped).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_scores_itself_perfectly(l in labels(12)) {
        let t = l.len();
        let gt = BinarySSM::from_labels(&l).unwrap();
        let scores = gt.to_real::<f64>();
        match roc_auc_scores(gt.values(), &scores) {
            Ok(a) => prop_assert_eq!(a, 1.0),
            Err(_) => {
                let upper: Vec<u8> = (0..t).flat_map(|i| (i + 1..t).map(move |j| (i, j))).map(|(i, j)| gt.values()[[i, j]]).collect();
                prop_assert!(upper.iter().all(|&v| v == upper[0]));
            }
        }
    }

    #[test]
    fn ground_truth_ignores_label_names(
        lens in vec(0.5f64..4.0, 2..7),
        ids in vec(0usize..4, 7),
        names in Just(["verse", "chorus", "bridge", "solo"]).prop_shuffle(),
        period in 0.2f64..0.7,
    ) {
        let mut t = 0.0;
        let mut segs = Vec::new();
        let mut renamed = Vec::new();
        for (k, len) in lens.iter().enumerate() {
            let seg = Segment { start: t, end: t + len, label: format!("L{}", ids[k]) };
            renamed.push(Segment { label: names[ids[k]].to_string(), ..seg.clone() });
            segs.push(seg);
            t += len;
        }
        let n = ((t / period) as usize).max(5);
        let beats = BeatGrid::new((0..n).map(|k| (k as f64 + 0.5) * period).collect(), BeatSource::File).unwrap();
        let a = ground_truth_ssm(&SegmentAnnotation::new(segs).unwrap(), &beats).unwrap();
        let b = ground_truth_ssm(&SegmentAnnotation::new(renamed).unwrap(), &beats).unwrap();
        prop_assert_eq!(a.values(), b.values());
        let v = a.values();
        for i in 0..n {
            prop_assert_eq!(v[[i, i]], 1);
            for j in 0..n {
                prop_assert_eq!(v[[i, j]], v[[j, i]]);
                for k in 0..n {
                    if v[[i, j]] == 1 && v[[j, k]] == 1 {
                        prop_assert_eq!(v[[i, k]], 1);
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_is_clamped_positive_fraction(l in vec(0usize..6, 1..20)) {
        let gt = BinarySSM::from_labels(&l).unwrap();
        let t = l.len() as f64;
        let ones = gt.values().iter().filter(|&&v| v == 1).count() as f64;
        prop_assert_eq!(gt.lambda_raw(), ones / (t * t));
        prop_assert!((0.05..=0.95).contains(&gt.lambda()));
    }

    #[test]
    fn madgrad_zero_gradient_is_a_fixed_point(
        x in vec(-10.0f64..10.0, 1..40),
        lr in 1e-5f64..1.0,
        momentum in 0.0f64..0.99,
        steps in 1usize..20,
    ) {
        let cfg = MadgradConfig { learning_rate: lr, momentum, weight_decay: 0.0, eps: 1e-6 };
        let mut y = x.clone();
        let mut state = MadgradState::new(&y);
        for _ in 0..steps {
            madgrad_step(&mut y, &vec![0.0; x.len()], &mut state, &cfg).unwrap();
        }
        prop_assert!(y.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn madgrad_rejects_non_finite_gradients_untouched(x in vec(-1.0f64..1.0, 2..10), bad in 0usize..10) {
        let cfg = MadgradConfig::default();
        let mut y = x.clone();
        let mut state = MadgradState::new(&y);
        madgrad_step(&mut y, &vec![0.1; x.len()], &mut state, &cfg).unwrap();
        let (y0, s0) = (y.clone(), state.clone());
        let mut g = vec![0.1; x.len()];
        g[bad % x.len()] = f64::NAN;
        prop_assert!(madgrad_step(&mut y, &g, &mut state, &cfg).is_err());
        prop_assert_eq!(y, y0);
        prop_assert_eq!(state, s0);
    }

    #[test]
    fn ssmf_round_trip(rows in 1usize..10, cols in 1usize..10, data in vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 100)) {
        let m = Array2::from_shape_fn((rows, cols), |(i, j)| data[i * 10 + j]);
        let back = decode_ssmf(&encode_ssmf(&m)).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        prop_assert!(back.iter().zip(&m).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn ssmf_detects_header_corruption(data in vec(-1.0f32..1.0, 12), at in 0usize..16, flip in 1u8..=255) {
        // the payload carries no checksum; magic, version and dimensions are validated
        let m = Array2::from_shape_vec((3, 4), data).unwrap();
        let mut bytes = encode_ssmf(&m);
        let k = at;
        bytes[k] ^= flip;
        prop_assert!(decode_ssmf(&bytes).is_err());
    }

    #[test]
    fn beats_round_trip(gaps in vec(1e-3f64..2.0, 5..60), offset in 0.0f64..10.0) {
        let mut t = offset;
        let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
        let grid = BeatGrid::new(times, BeatSource::File).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.beats");
        write_beats(&path, &grid).unwrap();
        let back = read_beats(&path).unwrap();
        prop_assert!(back.times().iter().zip(grid.times()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.len(), grid.len());
    }

    #[test]
    fn pgm_pixels_round_half_up(v in vec(0.0f64..=1.0, 1..30)) {
        let n = v.len();
        let m = Array2::from_shape_vec((1, n), v.clone()).unwrap();
        let bytes = pgm_bytes(m.view());
        let header = format!("P5\n{n} 1\n255\n");
        prop_assert!(bytes.starts_with(header.as_bytes()));
        let px = &bytes[header.len()..];
        for (p, x) in px.iter().zip(&v) {
            prop_assert_eq!(*p as f64, (255.0 * x + 0.5).floor());
        }
    }
}
