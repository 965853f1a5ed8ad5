use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sociolex_core::embedshift::*;
use sociolex_core::estimation::pearson;
use sociolex_core::synth::{self, AssociationSpec};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    gaussian(d, d, seed).qr().q()
}

fn space_from(m: &DMatrix<f64>, period: &str) -> EmbeddingSpace {
    let words = (0..m.nrows()).map(|i| format!("t{i}")).collect();
    let rows = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    EmbeddingSpace::from_rows(period, words, rows).unwrap()
}

fn strings(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

#[test]
fn gradient_matches_central_differences() {
    let (v, d) = (10, 6);
    let input = gaussian(v, d, 1) * 0.3;
    let output = gaussian(v, d, 2) * 0.3;
    let ex = CbowExample {
        context: vec![1, 3, 4, 7],
        target: 2,
        negatives: vec![0, 5, 9, 5, 8],
    };
    let (g_in, g_out) = cbow_gradients(&input, &output, &ex);
    let h = 1e-5;
    let check = |analytic: &DMatrix<f64>, which: usize| {
        for i in 0..v {
            for j in 0..d {
                let (mut inp, mut out) = (input.clone(), output.clone());
                let (mut inm, mut outm) = (input.clone(), output.clone());
                if which == 0 {
                    inp[(i, j)] += h;
                    inm[(i, j)] -= h;
                } else {
                    out[(i, j)] += h;
                    outm[(i, j)] -= h;
                }
                let numeric = (cbow_loss(&inp, &out, &ex) - cbow_loss(&inm, &outm, &ex)) / (2.0 * h);
                let a = analytic[(i, j)];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < 1e-4 || (a - numeric).abs() < 1e-9,
                    "({i},{j}) {a} vs {numeric}"
                );
            }
        }
    };
    check(&g_in, 0);
    check(&g_out, 1);
    assert!(g_in.row(0).iter().all(|&x| x == 0.0));
}

fn small_params() -> TrainParams {
    TrainParams {
        dim: 24,
        epochs: 4,
        min_tokens: 10_000,
        ..TrainParams::default()
    }
}

#[test]
fn exclusive_cooccurrence_gives_positive_association() {
    let poles = PoleSets::terms();
    let corpus = synth::association_corpus(&AssociationSpec::new(poles.clone(), "dude", 1.0, 300_000, 3));
    let space = train_embeddings(&corpus, &small_params(), 7, "2015").unwrap();
    let a = association_difference(&space, "dude", &poles).unwrap();
    assert!(a.difference > 0.0, "{}", a.difference);
    let b = association_difference(&space, "dude", &poles.swapped()).unwrap();
    assert_eq!(b.difference, -a.difference);

    let meta = space.meta.as_ref().unwrap();
    assert_eq!(meta.epoch_loss.len(), 4);
    assert!(meta.epoch_loss.last() < meta.epoch_loss.first());
}

#[test]
fn single_thread_training_is_bit_deterministic() {
    let poles = PoleSets::terms();
    let corpus = synth::association_corpus(&AssociationSpec::new(poles.clone(), "dude", 0.7, 50_000, 1));
    let p = TrainParams {
        epochs: 2,
        ..small_params()
    };
    let a = train_embeddings(&corpus, &p, 5, "x").unwrap();
    let b = train_embeddings(&corpus, &p, 5, "x").unwrap();
    assert_eq!(a, b);
    let da = association_difference(&a, "dude", &poles).unwrap().difference;
    let db = association_difference(&b, "dude", &poles).unwrap().difference;
    assert!((da - db).abs() < 1e-6);
}

#[test]
fn zero_epochs_is_an_error() {
    let docs = vec![strings(&["a", "b", "c"]); 10];
    let p = TrainParams {
        epochs: 0,
        ..TrainParams::default()
    };
    assert!(matches!(
        train_embeddings(&docs, &p, 0, "x"),
        Err(EmbedError::NoTraining)
    ));
}

fn orthonormal_space() -> (EmbeddingSpace, PoleSets) {
    // Six pole words on the first six axes, the target on axis 0.
    let mut words = strings(&["a0", "a1", "a2", "b0", "b1", "b2"]);
    let mut rows: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..8).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    words.push("t".into());
    rows.push(rows[0].clone());
    words.push("o".into());
    rows.push((0..8).map(|j| (j >= 6) as u8 as f64).collect());
    let poles = PoleSets::new("toy", strings(&["a0", "a1", "a2"]), strings(&["b0", "b1", "b2"])).unwrap();
    (EmbeddingSpace::from_rows("x", words, rows).unwrap(), poles)
}

#[test]
fn target_equal_to_pole_member() {
    let (space, poles) = orthonormal_space();
    let a = association_difference(&space, "t", &poles).unwrap();
    assert!((a.difference - 1.0 / 3.0).abs() < 1e-15);
    assert!(a.missing.is_empty());
}

#[test]
fn orthogonal_target_is_neutral() {
    let (space, poles) = orthonormal_space();
    assert_eq!(association_difference(&space, "o", &poles).unwrap().difference, 0.0);
}

#[test]
fn three_dimensional_hand_calculation() {
    let space = EmbeddingSpace::from_rows(
        "x",
        strings(&["t", "m1", "m2", "f1", "f2"]),
        vec![
            vec![1.0, 2.0, 2.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 3.0, 4.0],
            vec![0.0, 0.0, 2.0],
            vec![2.0, 2.0, 1.0],
        ],
    )
    .unwrap();
    let poles = PoleSets::new("toy", strings(&["m1", "m2"]), strings(&["f1", "f2"])).unwrap();
    // |t| = 3. cos(t,m1) = 1/3, cos(t,m2) = 14/15, cos(t,f1) = 2/3, cos(t,f2) = 8/9.
    let want = (1.0 / 3.0 + 14.0 / 15.0) / 2.0 - (2.0 / 3.0 + 8.0 / 9.0) / 2.0;
    let got = association_difference(&space, "t", &poles).unwrap().difference;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn out_of_vocabulary_and_coverage_errors() {
    let (space, poles) = orthonormal_space();
    assert!(matches!(
        association_difference(&space, "zz", &poles),
        Err(EmbedError::OutOfVocabulary(_))
    ));
    let sparse = PoleSets::new("toy", strings(&["a0", "q1", "q2"]), strings(&["b0"])).unwrap();
    match association_difference(&space, "t", &sparse) {
        Err(EmbedError::PoleCoverage { missing, .. }) => assert_eq!(missing, ["q1", "q2"]),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn swap_negates_and_rotation_preserves(seed in 0u64..1000, d in 3usize..12) {
        let m = gaussian(12, d, seed);
        let space = space_from(&m, "x");
        let poles = PoleSets::new("p", strings(&["t1", "t2", "t3"]), strings(&["t4", "t5", "t6", "t7"])).unwrap();
        let a = association_difference(&space, "t0", &poles).unwrap().difference;
        prop_assert!((-2.0..=2.0).contains(&a));
        prop_assert_eq!(association_difference(&space, "t0", &poles.swapped()).unwrap().difference, -a);
        let rotated = space.transformed(&random_orthogonal(d, seed + 1)).unwrap();
        let b = association_difference(&rotated, "t0", &poles).unwrap().difference;
        prop_assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn cosine_is_symmetric(seed in 0u64..1000) {
        let m = gaussian(2, 7, seed);
        let (x, y): (Vec<f64>, Vec<f64>) = (m.row(0).iter().copied().collect(), m.row(1).iter().copied().collect());
        prop_assert_eq!(cosine(&x, &y), cosine(&y, &x));
        prop_assert!((cosine(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn procrustes_never_increases_objective(seed in 0u64..1000, d in 2usize..10) {
        let a = space_from(&gaussian(d + 5, d, seed), "a");
        let b = space_from(&gaussian(d + 5, d, seed + 7), "b");
        let al = procrustes_align(&a, &b, None).unwrap();
        prop_assert!(al.residual_after <= al.residual_before + 1e-12);
        let wtw = al.w.transpose() * &al.w;
        prop_assert!((wtw - DMatrix::identity(d, d)).abs().max() < 1e-8);
    }
}

#[test]
fn runs_one_gives_degenerate_interval() {
    let poles = PoleSets::terms();
    let periods = synth::drift_corpus(&poles, "dude", &[("2014", 0.5), ("2015", 0.5)], 40_000, 2);
    let params = SeriesParams {
        runs: 1,
        train: TrainParams {
            epochs: 1,
            ..small_params()
        },
        resamples: 200,
        ..SeriesParams::default()
    };
    for p in association_series(&periods, "dude", &poles, &params).unwrap() {
        assert_eq!(p.ci_low, p.difference);
        assert_eq!(p.ci_high, p.difference);
        assert_eq!(p.run_values, [p.difference]);
    }
}

#[test]
fn series_needs_two_periods_and_enough_tokens() {
    let poles = PoleSets::terms();
    let periods = synth::drift_corpus(&poles, "dude", &[("2014", 0.5)], 20_000, 2);
    assert!(matches!(
        association_series(&periods, "dude", &poles, &SeriesParams::default()),
        Err(EmbedError::TooFewPeriods { .. })
    ));
    let periods = synth::drift_corpus(&poles, "dude", &[("2014", 0.5), ("2015", 0.5)], 20_000, 2);
    assert!(matches!(
        association_series(&periods, "dude", &poles, &SeriesParams::default()),
        Err(EmbedError::InsufficientTokens { .. })
    ));
}

#[test]
fn planted_drift_is_increasing() {
    let poles = PoleSets::terms();
    let periods = synth::drift_corpus(
        &poles,
        "dude",
        &[("2014", 0.1), ("2015", 0.5), ("2016", 0.9)],
        400_000,
        9,
    );
    let params = SeriesParams {
        runs: 2,
        train: small_params(),
        resamples: 200,
        seed: 3,
        ..SeriesParams::default()
    };
    let pts = association_series(&periods, "dude", &poles, &params).unwrap();
    let ys: Vec<f64> = pts.iter().map(|p| p.difference).collect();
    assert!(ys.windows(2).all(|w| w[0] < w[1]), "{ys:?}");
    assert!(pts
        .iter()
        .all(|p| p.ci_low <= p.difference && p.difference <= p.ci_high));
    let r = pearson(&[0.0, 1.0, 2.0], &ys).unwrap().r;
    assert!(r > 0.9, "r = {r}");

    let mut buf = Vec::new();
    write_series_csv(&mut buf, &pts).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("year,target,diff,ci_low,ci_high\n2014,dude,"));
}

#[test]
fn procrustes_recovers_exact_rotation() {
    for (d, seed) in [(10, 1), (50, 2), (300, 3)] {
        let a = gaussian(d + 40, d, seed);
        let r = random_orthogonal(d, seed + 100);
        let al = procrustes_align(&space_from(&a, "a"), &space_from(&(&a * &r), "b"), None).unwrap();
        assert!((&al.w - &r).norm() < 1e-6, "d = {d}");
    }
}

#[test]
fn procrustes_identity_on_equal_spaces() {
    let a = space_from(&gaussian(30, 8, 4), "a");
    let al = procrustes_align(&a, &a, None).unwrap();
    assert!((al.w - DMatrix::<f64>::identity(8, 8)).abs().max() < 1e-8);
}

#[test]
fn noisy_rotation_keeps_anchors_aligned() {
    let d = 20;
    let a = gaussian(200, d, 5);
    let noise = gaussian(200, d, 6) * 0.01;
    let b = &a * random_orthogonal(d, 7) + noise;
    let (sa, sb) = (space_from(&a, "2013"), space_from(&b, "2014"));
    let anchors: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
    let rep = anchor_stability(&sa, &sb, &anchors, None).unwrap();
    assert!(rep.min > 0.99, "{}", rep.min);
    assert_eq!(rep.pair, "2013-2014");
    let mut buf = Vec::new();
    rep.write_csv(&mut buf, true).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("word,year_pair,cosine\nt0,2013-2014,"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn anchors_on_identical_and_rotated_spaces() {
    let a = gaussian(40, 6, 9);
    let sa = space_from(&a, "a");
    let anchors: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    let same = anchor_stability(&sa, &sa, &anchors, None).unwrap();
    assert!(same.cosines.iter().all(|(_, c)| (c - 1.0).abs() < 1e-12));
    let rotated = space_from(&(&a * random_orthogonal(6, 10)), "b");
    let rot = anchor_stability(&sa, &rotated, &anchors, None).unwrap();
    assert!(rot.cosines.iter().all(|(_, c)| (c - 1.0).abs() < 1e-6));
    assert!(matches!(
        anchor_stability(&sa, &rotated, &strings(&["missing"]), None),
        Err(EmbedError::OutOfVocabulary(_))
    ));
}
