use fairdcov::dcov::{
    ccdcov, ccdcov_decompose, dcov2_expanded, dcov2_streaming, dcov2_unbiased, jdcov2,
    jdcov2_product_form, u_centred_of,
};
use fairdcov::fairness::{js_divergence, permutation_p_value, uf_metric, BinningSpec, SubgroupKey};
use fairdcov::pipeline::{stratified_split, SplitPlan};
use fairdcov::scoring::{rps, wilcoxon_one_sided, DiscreteForecast, PairedScores};
use fairdcov::SampleBlock;
use proptest::collection::vec;
use proptest::prelude::*;

fn rows(n: std::ops::RangeInclusive<usize>, p: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    n.prop_flat_map(move |n| vec(vec(-10.0..10.0f64, p), n))
}

fn pair(p: usize, q: usize) -> impl Strategy<Value = (SampleBlock, SampleBlock)> {
    (6usize..30).prop_flat_map(move |n| {
        (
            vec(vec(-10.0..10.0f64, p), n),
            vec(vec(-10.0..10.0f64, q), n),
        )
            .prop_map(|(a, b)| {
                (
                    SampleBlock::from_rows(&a).unwrap(),
                    SampleBlock::from_rows(&b).unwrap(),
                )
            })
    })
}

fn triple() -> impl Strategy<Value = Vec<SampleBlock>> {
    (6usize..25).prop_flat_map(|n| {
        (vec(-5.0..5.0f64, n), vec(0u32..2, n), vec(0u32..3, n)).prop_map(|(y, a, b)| {
            let one_hot: Vec<Vec<f64>> = b
                .iter()
                .map(|&v| (0..3).map(|k| f64::from(u8::from(v == k))).collect())
                .collect();
            vec![
                SampleBlock::from_column(&y).unwrap(),
                SampleBlock::from_column(&a.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
                    .unwrap(),
                SampleBlock::from_rows(&one_hot).unwrap(),
            ]
        })
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn u_centred_rows_sum_to_zero(r in rows(4..=30, 2)) {
        let u = u_centred_of(&SampleBlock::from_rows(&r).unwrap()).unwrap();
        let scale = u.entries().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for row in u.entries().rows() {
            prop_assert!(row.sum().abs() <= 1e-9 * scale * r.len() as f64);
        }
        for i in 0..u.n() {
            prop_assert_eq!(u.entries()[[i, i]], 0.0);
        }
    }

    #[test]
    fn dcov_is_symmetric((x, y) in pair(2, 1)) {
        prop_assert!(close(dcov2_unbiased(&x, &y).unwrap(), dcov2_unbiased(&y, &x).unwrap(), 1e-12));
    }

    #[test]
    fn dcov_matches_expanded_and_streaming((x, y) in pair(1, 3)) {
        let u = dcov2_unbiased(&x, &y).unwrap();
        prop_assert!(close(u, dcov2_expanded(&x, &y).unwrap(), 1e-9));
        prop_assert!(close(u, dcov2_streaming(&x, &y).unwrap(), 1e-9));
    }

    #[test]
    fn dcov_scales_and_ignores_shifts((x, y) in pair(1, 1), c in 0.1..5.0f64, shift in -20.0..20.0f64) {
        let moved = SampleBlock::new(x.values().mapv(|v| c * v + shift)).unwrap();
        prop_assert!(close(dcov2_unbiased(&moved, &y).unwrap(), c * dcov2_unbiased(&x, &y).unwrap(), 1e-8));
    }

    #[test]
    fn joint_row_permutation_preserves_dcov((x, y) in pair(2, 2), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..x.n()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = dcov2_unbiased(&x, &y).unwrap();
        let b = dcov2_unbiased(&x.permute_rows(&perm), &y.permute_rows(&perm)).unwrap();
        prop_assert!(close(a, b, 1e-9));
    }

    #[test]
    fn ccdcov_terms_add_up(blocks in triple()) {
        let dec = ccdcov_decompose(&blocks[0], &blocks[1..]).unwrap();
        let sum = dec.marginal_terms.iter().sum::<f64>() + dec.eta;
        prop_assert!(close(sum, dec.total, 1e-10));
        prop_assert!(close(ccdcov(&blocks[0], &blocks[1..]).unwrap(), dec.total, 1e-8));
    }

    #[test]
    fn jdcov_product_form_agrees(blocks in triple()) {
        prop_assert!(close(jdcov2(&blocks).unwrap(), jdcov2_product_form(&blocks).unwrap(), 1e-8));
    }

    #[test]
    fn permutation_p_is_bounded(t0 in -5.0..5.0f64, reps in vec(-5.0..5.0f64, 1..300)) {
        let p = permutation_p_value(t0, &reps);
        prop_assert!(p >= 1.0 / (reps.len() + 1) as f64 && p <= 1.0);
    }

    #[test]
    fn rps_is_bounded_and_zero_at_point_mass(w in vec(0.01..1.0f64, 2..6), obs in 0usize..6) {
        let k = w.len();
        let obs = obs % k;
        let total: f64 = w.iter().sum();
        let f = DiscreteForecast::new(w.iter().map(|v| v / total).collect()).unwrap();
        let s = rps(&f, obs).unwrap();
        prop_assert!((0.0..=(k - 1) as f64).contains(&s));
        let mut point = vec![0.0; k];
        point[obs] = 1.0;
        prop_assert_eq!(rps(&DiscreteForecast::new(point).unwrap(), obs).unwrap(), 0.0);
    }

    #[test]
    fn subgroup_metrics_are_bounded(yhat in vec(0.0..1.0f64, 10..200), seed in any::<u64>()) {
        let labels: Vec<u32> = (0..yhat.len()).map(|i| ((seed >> (i % 60)) & 1) as u32).collect();
        let keys = SubgroupKey::zip(&[labels]).unwrap();
        let jsd = js_divergence(&yhat, &keys, &BinningSpec::default()).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&jsd));
        let uf = uf_metric(&yhat, &keys).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&uf));
    }

    #[test]
    fn wilcoxon_p_is_a_probability(base in vec(-1.0..1.0f64, 1..40), shift in -0.5..0.5f64) {
        let reg: Vec<f64> = base.iter().enumerate().map(|(i, b)| b + shift * (i % 3) as f64).collect();
        let w = wilcoxon_one_sided(&PairedScores::new(base, reg).unwrap());
        prop_assert!((0.0..=1.0).contains(&w.p_value));
    }

    #[test]
    fn stratified_split_partitions_rows(labels in vec(0u32..4, 20..300), seed in any::<u64>()) {
        let strata = SubgroupKey::zip(std::slice::from_ref(&labels)).unwrap();
        let plan = SplitPlan { train_fraction: 0.7, subtrain_fraction: 0.6, seed };
        let s = stratified_split(&strata, &plan).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let mut inner: Vec<usize> = s.subtrain.iter().chain(&s.validation).copied().collect();
        inner.sort_unstable();
        prop_assert_eq!(inner, s.train.clone());
    }
}
