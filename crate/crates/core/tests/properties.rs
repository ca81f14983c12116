//! Algebraic invariants checked on random inputs.

use btd_core::io::{read_factors, read_tensor, write_factors, write_tensor};
use btd_core::linalg::Cholesky;
use btd_core::mm::GroupSparseLs;
use btd_core::multilinear::{p_matrix, q_matrix};
use btd_core::{
    build_s, estimate_ranks, frontal_slice_model, init_online, prune, reconstruct, BlockLayout, BtdFactors,
    OnlineConfig, Tensor3, UnfoldingMode,
};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rows: usize, cols: usize, g: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut *g))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn layouts() -> impl Strategy<Value = BlockLayout> {
    prop::collection::vec(1usize..=4, 1..=6).prop_map(|w| BlockLayout::from_widths(w).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=6, 1usize..=6, 1usize..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(d in dims(), seed in any::<u64>()) {
        let mut g = rng(seed);
        let x = Tensor3::from_fn(d, |_, _, _| StandardNormal.sample(&mut g));
        for mode in UnfoldingMode::ALL {
            let m = x.unfold(mode);
            prop_assert_eq!(Tensor3::fold(m.view(), mode, d).unwrap(), x.clone());
        }
    }

    #[test]
    fn unfoldings_factor_through_khatri_rao(d in dims(), layout in layouts(), seed in any::<u64>()) {
        let f = BtdFactors::random(d, layout, &mut rng(seed));
        let x = reconstruct(&f);
        let scale = 1.0 + x.frobenius_norm();
        prop_assert!(max_abs_diff(&x.unfold(UnfoldingMode::Mode1), &f.a.dot(&p_matrix(&f).t())) <= 1e-10 * scale);
        prop_assert!(max_abs_diff(&x.unfold(UnfoldingMode::Mode2), &f.b.dot(&q_matrix(&f).t())) <= 1e-10 * scale);
        let s = build_s(&f.a.view(), &f.b.view(), f.layout()).unwrap();
        prop_assert!(max_abs_diff(&x.unfold(UnfoldingMode::Mode3), &f.c.dot(&s.t())) <= 1e-10 * scale);
    }

    #[test]
    fn single_column_blocks_are_a_cpd(d in dims(), r in 1usize..=6, seed in any::<u64>()) {
        let f = BtdFactors::random(d, BlockLayout::uniform(1, r).unwrap(), &mut rng(seed));
        let x = reconstruct(&f);
        for i in 0..d.0 {
            for j in 0..d.1 {
                for k in 0..d.2 {
                    let v: f64 = (0..r).map(|q| f.a[[i, q]] * f.b[[j, q]] * f.c[[k, q]]).sum();
                    prop_assert!((x.get(i, j, k) - v).abs() <= 1e-12 * (1.0 + v.abs()));
                }
            }
        }
    }

    #[test]
    fn frontal_slices_match_reconstruction(d in dims(), layout in layouts(), seed in any::<u64>()) {
        let f = BtdFactors::random(d, layout, &mut rng(seed));
        let x = reconstruct(&f);
        for k in 0..d.2 {
            let model = frontal_slice_model(&f.a.view(), &f.b.view(), &f.c.row(k), f.layout()).unwrap();
            prop_assert!(max_abs_diff(&model, &x.slice(k).to_owned()) <= 1e-12 * (1.0 + x.frobenius_norm()));
        }
    }

    #[test]
    fn reconstruction_is_linear_in_c(d in dims(), layout in layouts(), seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let f = BtdFactors::random(d, layout, &mut rng(seed));
        let scaled = BtdFactors::with_layout(f.a.clone(), f.b.clone(), &f.c * alpha, f.layout().clone()).unwrap();
        let lhs = reconstruct(&scaled);
        let rhs = reconstruct(&f).scale(alpha);
        prop_assert!(lhs.add_scaled(-1.0, &rhs).unwrap().frobenius_norm() <= 1e-12 * (1.0 + rhs.frobenius_norm()));
    }

    #[test]
    fn cholesky_solves_spd_systems(n in 1usize..=12, seed in any::<u64>()) {
        let mut g = rng(seed);
        let h = gaussian(n + 2, n, &mut g);
        let m = h.t().dot(&h) + Array2::<f64>::eye(n);
        let b = gaussian(3, n, &mut g);
        let x = Cholesky::factor(&m.view()).unwrap().solve_right(&b.view());
        prop_assert!(max_abs_diff(&x.dot(&m), &b) <= 1e-9 * (1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max)));
    }

    #[test]
    fn binary_formats_round_trip(d in dims(), layout in layouts(), seed in any::<u64>()) {
        let f = BtdFactors::random(d, layout, &mut rng(seed));
        let x = reconstruct(&f);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &x).unwrap();
        prop_assert_eq!(buf.len(), 24 + 8 * x.len());
        prop_assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), x);
        let mut buf = Vec::new();
        write_factors(&mut buf, &f).unwrap();
        prop_assert_eq!(read_factors(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn pruning_is_idempotent(d in dims(), layout in layouts(), seed in any::<u64>(), kill in any::<u64>()) {
        let mut f = BtdFactors::random(d, layout, &mut rng(seed));
        // Zero a pseudo-random subset of columns.
        for c in 0..f.layout().columns() {
            if (kill >> (c % 64)) & 1 == 1 {
                f.a.column_mut(c).fill(0.0);
                f.b.column_mut(c).fill(0.0);
            }
        }
        let est = estimate_ranks(&f, 1e-2).unwrap();
        prop_assume!(!est.degenerate);
        let pruned = prune(&f, &est).unwrap();
        // The change is bounded by the dropped rank-one terms a_c ∘ b_c ∘ c_r.
        let norm = |v: ndarray::ArrayView1<'_, f64>| v.dot(&v).sqrt();
        let dropped: f64 = (0..f.layout().columns())
            .filter(|c| !est.kept_columns.iter().flatten().any(|k| k == c))
            .map(|c| norm(f.a.column(c)) * norm(f.b.column(c)) * norm(f.c.column(f.layout().block_of(c))))
            .sum();
        prop_assert!(reconstruct(&pruned).add_scaled(-1.0, &reconstruct(&f)).unwrap().frobenius_norm()
            <= dropped + 1e-12 * (1.0 + reconstruct(&f).frobenius_norm()));
        let again = estimate_ranks(&pruned, 1e-2).unwrap();
        prop_assert_eq!(&again.l_hat, &est.l_hat);
        prop_assert_eq!(prune(&pruned, &again).unwrap(), pruned);
    }

    /// The surrogate touches the objective at its expansion point and lies
    /// above it everywhere else.
    #[test]
    fn surrogate_touches_and_dominates(
        seed in any::<u64>(),
        n in 1usize..=5,
        p in 1usize..=5,
        t in 1usize..=12,
        penalty in 0.0f64..20.0,
        radius in prop::sample::select(vec![1e-3, 1e-1, 1.0, 10.0]),
    ) {
        let mut g = rng(seed);
        let z = gaussian(t, n, &mut g);
        let m = gaussian(t, p, &mut g);
        let w = Array1::from_shape_simple_fn(t, || 0.5f64.powf(StandardNormal.sample(&mut g)));
        let offsets = gaussian(1, p, &mut g).index_axis(Axis(0), 0).mapv(|v: f64| v * v);
        let prob = GroupSparseLs::new(z, m, Some(w), penalty, offsets, 1e-8).unwrap();
        let x0 = gaussian(n, p, &mut g);
        let sur = prob.surrogate_at(&x0.view()).unwrap();
        let f0 = prob.value(&x0.view()).unwrap();
        prop_assert!((sur.value(&x0.view()).unwrap() - f0).abs() <= 1e-12 * (1.0 + f0.abs()));
        let dir = gaussian(n, p, &mut g);
        let dir = &dir / dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x = &x0 + &(dir * radius);
        let (fx, gx) = (prob.value(&x.view()).unwrap(), sur.value(&x.view()).unwrap());
        prop_assert!(gx - fx >= -1e-9 * (1.0 + fx.abs()), "g = {gx}, f = {fx}");
        let xm = sur.minimizer().unwrap();
        prop_assert!(prob.value(&xm.view()).unwrap() <= f0 + 1e-9 * (1.0 + f0.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The streaming state has the closed-form size and keeps it.
    #[test]
    fn online_state_size_is_constant(
        seed in any::<u64>(),
        (i, j) in (2usize..=6, 2usize..=6),
        layout in layouts(),
        steps in 1usize..=30,
    ) {
        let mut g = rng(seed);
        let warm = 4;
        let f = BtdFactors::random((i, j, warm), layout.clone(), &mut g);
        let y = reconstruct(&f);
        let cfg = OnlineConfig::new(0.95, 0.1, 0.1, layout.blocks(), 1);
        let mut state = init_online(&y, &f, &cfg).unwrap();
        let expected = btd_core::state_scalar_count(i, j, layout.columns(), layout.blocks());
        prop_assert_eq!(state.scalar_count(), expected);
        for _ in 0..steps {
            let slice = gaussian(i, j, &mut g);
            state.step(&slice.view()).unwrap();
            prop_assert_eq!(state.scalar_count(), expected);
        }
    }
}
