use proptest::prelude::*;

use robust_agg::aggregation::{
    aggregate_cwtm, aggregate_smea, check_robustness, kappa_cwtm, kappa_smea, trimmed_mean,
    GradientBatch, OpNorm, RobustnessSpec,
};
use robust_agg::analysis::{theorem_bound, BoundQuery, Theorem};
use robust_agg::linalg::{binomial, enumerate_subsets, max_eigenvalue_sym, SquareMatrix, Vector};
use robust_agg::losses::ProjectionDomain;

/// `n` vectors of dimension `d` with entries in `[-3, 3]`.
fn batch_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (3usize..=8, 1usize..=3).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n),
            0..(n + 1) / 2,
        )
    })
}

fn to_batch(rows: &[Vec<f64>]) -> GradientBatch {
    GradientBatch::new(
        rows.iter()
            .map(|r| Vector::new(r.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
    a.distance(b) <= tol * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregators_ignore_input_order((rows, f) in batch_strategy(), rot in 0usize..8) {
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        let (a, b) = (to_batch(&rows), to_batch(&shuffled));
        let cw = (aggregate_cwtm(&a, f).unwrap(), aggregate_cwtm(&b, f).unwrap());
        prop_assert!(close(&cw.0.aggregate, &cw.1.aggregate, 1e-12));
        let sm = (aggregate_smea(&a, f).unwrap(), aggregate_smea(&b, f).unwrap());
        prop_assert!(close(&sm.0.aggregate, &sm.1.aggregate, 1e-9));
    }

    #[test]
    fn cwtm_commutes_with_translation(
        (rows, f) in batch_strategy(),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let d = rows[0].len();
        let shift = Vector::new(shift[..d].to_vec()).unwrap();
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(shift.as_slice()).map(|(x, s)| x + s).collect())
            .collect();
        let base = aggregate_cwtm(&to_batch(&rows), f).unwrap().aggregate;
        let mut expected = base.clone();
        expected.axpy(1.0, &shift);
        let got = aggregate_cwtm(&to_batch(&moved), f).unwrap().aggregate;
        prop_assert!(close(&got, &expected, 1e-12));
    }

    #[test]
    fn both_rules_certify((rows, f) in batch_strategy()) {
        let batch = to_batch(&rows);
        let n = rows.len();
        let smea = aggregate_smea(&batch, f).unwrap().aggregate;
        let spec = RobustnessSpec { f, kappa: kappa_smea(n, f).unwrap(), norm: OpNorm::Spectral };
        prop_assert!(check_robustness(&batch, &smea, &spec).unwrap().passed);
        let cwtm = aggregate_cwtm(&batch, f).unwrap().aggregate;
        let spec = RobustnessSpec { f, kappa: kappa_cwtm(n, f).unwrap(), norm: OpNorm::Trace };
        prop_assert!(check_robustness(&batch, &cwtm, &spec).unwrap().passed);
    }

    #[test]
    fn smea_output_is_a_selected_subset_mean((rows, f) in batch_strategy()) {
        let batch = to_batch(&rows);
        let out = aggregate_smea(&batch, f).unwrap();
        let sel = out.selected.unwrap();
        prop_assert_eq!(sel.len(), rows.len() - f);
        let mean = Vector::mean_of(sel.indices().iter().map(|&i| &batch.vectors()[i])).unwrap();
        prop_assert!(close(&out.aggregate, &mean, 1e-12));
    }

    #[test]
    fn trimmed_mean_stays_in_range(
        values in prop::collection::vec(-10.0f64..10.0, 1..12),
        f_seed in 0usize..6,
    ) {
        let n = values.len();
        let f = f_seed % n.div_ceil(2);
        let tm = trimmed_mean(&values, f).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(tm >= sorted[f] - 1e-12 && tm <= sorted[n - 1 - f] + 1e-12);
        let raised: Vec<f64> = values.iter().map(|x| x + 1.0).collect();
        prop_assert!(trimmed_mean(&raised, f).unwrap() >= tm);
    }

    #[test]
    fn projections_do_not_expand(
        a in prop::collection::vec(-5.0f64..5.0, 2),
        b in prop::collection::vec(-5.0f64..5.0, 2),
        dir in prop::collection::vec(-1.0f64..1.0, 2),
        radius in 0.1f64..4.0,
    ) {
        let (a, b) = (Vector::new(a).unwrap(), Vector::new(b).unwrap());
        let ball = ProjectionDomain::ball(radius).unwrap();
        let (pa, pb) = (ball.project(&a), ball.project(&b));
        prop_assert!(pa.norm() <= radius * (1.0 + 1e-12));
        prop_assert!(pa.distance(&pb) <= a.distance(&b) + 1e-12);
        prop_assert!(close(&ball.project(&pa), &pa, 1e-12));
        let dir = Vector::new(dir).unwrap();
        prop_assume!(dir.norm() > 1e-3);
        let ray = ProjectionDomain::ray(dir).unwrap();
        let (ra, rb) = (ray.project(&a), ray.project(&b));
        prop_assert!(ra.distance(&rb) <= a.distance(&b) + 1e-12);
        prop_assert!(close(&ray.project(&ra), &ra, 1e-12));
    }

    #[test]
    fn convex_bounds_grow_with_f_and_horizon(n in 5usize..30, steps in 1usize..20, m in 1usize..5) {
        let bound = |th: Theorem, f: usize, steps: usize| {
            let mut q = BoundQuery::new(th, 1.0, 1.0, steps, n, f, m);
            q.gamma = Some(0.5);
            q.kappa = Some(if f == 0 { 0.0 } else { kappa_smea(n, f).unwrap() });
            theorem_bound(&q).unwrap().value
        };
        for th in [Theorem::ByzConvex, Theorem::PoisSmeaConvex] {
            for f in 0..(n - 1) / 2 {
                prop_assert!(bound(th, f + 1, steps) >= bound(th, f, steps));
                prop_assert!(bound(th, f, steps + 1) >= bound(th, f, steps));
            }
        }
        for f in 0..(n + 1) / 2 {
            let (byz, pois) = (bound(Theorem::ByzConvex, f, steps), bound(Theorem::PoisSmeaConvex, f, steps));
            prop_assert!(byz >= pois * (1.0 - 1e-12));
        }
    }

    #[test]
    fn subsets_are_lexicographic_and_complete(n in 1usize..12, k_seed in 0usize..12) {
        let k = 1 + k_seed % n;
        let all: Vec<Vec<usize>> = enumerate_subsets(n, k)
            .unwrap()
            .map(|s| s.indices().to_vec())
            .collect();
        prop_assert_eq!(all.len() as u64, binomial(n, k));
        for w in all.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for s in &all {
            prop_assert_eq!(s.len(), k);
            prop_assert!(s.windows(2).all(|p| p[0] < p[1]) && s.iter().all(|&i| i < n));
        }
    }

    #[test]
    fn top_eigenvalue_dominates_rayleigh_quotients(
        entries in prop::collection::vec(-2.0f64..2.0, 9),
        probe in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        // B·Bᵀ is symmetric positive semidefinite.
        let b = |i: usize, j: usize| entries[3 * i + j];
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| (0..3).map(|k| b(i, k) * b(j, k)).sum()).collect())
            .collect();
        let m = SquareMatrix::from_rows(&rows).unwrap();
        let lam = max_eigenvalue_sym(&m).unwrap();
        prop_assert!(lam <= m.trace() + 1e-9);
        let norm_sq: f64 = probe.iter().map(|x| x * x).sum();
        prop_assume!(norm_sq > 1e-6);
        let rq = m.quadratic_form(&probe) / norm_sq;
        prop_assert!(rq <= lam + 1e-9 * (1.0 + lam));
    }
}
