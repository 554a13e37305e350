//! Property tests for the structural invariants: bilinearity, adjointness,
//! smoothing limits, partition of unity, and serial/parallel agreement.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gocor::objective::{
    conv_apply, eval_weight_fn, query_loss, reference_loss, rho_basis, sigma_eta, sigma_eta_prime,
    DistanceField, ObjectiveParams, QueryObjectiveParams, ReferenceObjectiveParams, WeightFunction,
};
use gocor::{
    corr_adjoint, correlate, exec, run_gocor, total_loss, CorrespondenceVolume, FeatureMap,
    InitializerConfig, SolverConfig, VolumeKind,
};

fn map_from_seed(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(h, w, d, data).unwrap()
}

fn volume_from_seed(h: usize, w: usize, kind: VolumeKind, seed: u64) -> CorrespondenceVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vol = CorrespondenceVolume::zeros(h, w, kind);
    for v in vol.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    vol
}

fn kind_strategy() -> impl Strategy<Value = VolumeKind> {
    prop_oneof![
        Just(VolumeKind::Global),
        (0usize..=3).prop_map(|radius| VolumeKind::Local { radius }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn correlation_is_bilinear_in_the_filter(
        h in 1usize..=5,
        w in 1usize..=5,
        d in 1usize..=4,
        kind in kind_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let w1 = map_from_seed(h, w, d, seed);
        let w2 = map_from_seed(h, w, d, seed + 1);
        let f = map_from_seed(h, w, d, seed + 2);
        let mut combo = FeatureMap::zeros(h, w, d);
        combo.axpy(a, &w1).unwrap();
        combo.axpy(b, &w2).unwrap();
        let lhs = correlate(&combo, &f, kind).unwrap();
        let c1 = correlate(&w1, &f, kind).unwrap();
        let c2 = correlate(&w2, &f, kind).unwrap();
        for ((&l, &x), &y) in lhs.data().iter().zip(c1.data()).zip(c2.data()) {
            let expect = a * x + b * y;
            let scale = expect.abs().max(1.0);
            prop_assert!((l - expect).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn adjoint_identity_holds(
        h in 1usize..=6,
        w in 1usize..=6,
        d in 1usize..=5,
        kind in kind_strategy(),
        seed in 0u64..1000,
    ) {
        let wmap = map_from_seed(h, w, d, seed);
        let fmap = map_from_seed(h, w, d, seed + 7);
        let corr = correlate(&wmap, &fmap, kind).unwrap();
        let v = volume_from_seed(h, w, kind, seed + 11);
        let g = corr_adjoint(&v, &fmap).unwrap();
        let lhs = corr.dot(&v).unwrap();
        let rhs = wmap.dot(&g).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }

    #[test]
    fn local_matches_global_when_radius_covers_grid(
        h in 1usize..=5,
        w in 1usize..=5,
        d in 1usize..=4,
        seed in 0u64..1000,
    ) {
        let wmap = map_from_seed(h, w, d, seed);
        let fmap = map_from_seed(h, w, d, seed + 3);
        let radius = h.max(w) - 1;
        let local = correlate(&wmap, &fmap, VolumeKind::Local { radius }).unwrap();
        let global = correlate(&wmap, &fmap, VolumeKind::Global).unwrap();
        for i in 0..h {
            for j in 0..w {
                for k in 0..h {
                    for l in 0..w {
                        let dk = k as isize - i as isize;
                        let dl = l as isize - j as isize;
                        prop_assert_eq!(
                            local.value(i, j, dk, dl).unwrap(),
                            global.value(i, j, k as isize, l as isize).unwrap()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sigma_smoothing_converges_pointwise(
        c in -5.0f64..5.0,
        vp in 0.0f64..3.0,
        vn in 0.0f64..3.0,
    ) {
        let eta = 0.001;
        let gap = (sigma_eta(c, vp, vn, eta) - sigma_eta(c, vp, vn, 0.0)).abs();
        prop_assert!(gap <= 0.5 * (vp + vn) * eta + 1e-15);
    }

    #[test]
    fn sigma_prime_matches_finite_differences(
        c in -4.0f64..4.0,
        vp in 0.0f64..3.0,
        vn in 0.0f64..3.0,
        eta in 0.01f64..1.0,
    ) {
        let h = 1e-6;
        let fd = (sigma_eta(c + h, vp, vn, eta) - sigma_eta(c - h, vp, vn, eta)) / (2.0 * h);
        let an = sigma_eta_prime(c, vp, vn, eta);
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
    }

    #[test]
    fn basis_partition_of_unity(d in 0.0f64..4.5, n in 2usize..=12) {
        let delta = 0.5;
        let top = (n - 1) as f64 * delta;
        let sum: f64 = (0..n).map(|k| rho_basis(d.min(top), k, n, delta).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn total_loss_nonnegative_and_zero_only_when_residuals_vanish(
        h in 1usize..=4,
        w in 1usize..=4,
        d in 1usize..=3,
        lambda in 0.0f64..1.0,
        seed in 0u64..500,
    ) {
        let f_r = map_from_seed(h, w, d, seed);
        let f_q = map_from_seed(h, w, d, seed + 5);
        let wmap = map_from_seed(h, w, d, seed + 9);
        let params = ObjectiveParams {
            reference: ReferenceObjectiveParams::paper_init(),
            query: QueryObjectiveParams::seeded(3, 2, 2, seed).unwrap(),
        };
        let loss = total_loss(&wmap, &f_r, &f_q, &params, lambda, VolumeKind::Global, true).unwrap();
        prop_assert!(loss >= 0.0);
        let parts = reference_loss(&wmap, &f_r, &params.reference, VolumeKind::Global).unwrap()
            + query_loss(&wmap, &f_q, &params.query, VolumeKind::Global).unwrap()
            + lambda * lambda * wmap.norm_sq();
        if loss == 0.0 {
            prop_assert_eq!(parts, 0.0);
        }
    }
}

/// Weight-field evaluation agrees with direct weight-function evaluation on
/// every distance the geometry can produce.
#[test]
fn weight_field_consistent_with_direct_evaluation() {
    let wf = WeightFunction::gaussian_target(10, 0.5);
    for kind in [VolumeKind::Global, VolumeKind::Local { radius: 2 }] {
        let df = DistanceField::new(5, 4, kind);
        let field = eval_weight_fn(&wf, &df);
        let vol = field.to_volume();
        for i in 0..5 {
            for j in 0..4 {
                let slice = vol.slice(i, j);
                match kind {
                    VolumeKind::Global => {
                        for k in 0..5isize {
                            for l in 0..4isize {
                                let d = df.value(i, j, k, l).unwrap();
                                assert_eq!(slice[(k * 4 + l) as usize], wf.eval(d));
                            }
                        }
                    }
                    VolumeKind::Local { radius } => {
                        let side = (2 * radius + 1) as isize;
                        for k in -(radius as isize)..=radius as isize {
                            for l in -(radius as isize)..=radius as isize {
                                let d = df.value(i, j, k, l).unwrap();
                                let cell = ((k + radius as isize) * side + l + radius as isize)
                                    as usize;
                                assert_eq!(slice[cell], wf.eval(d));
                            }
                        }
                    }
                }
            }
        }
    }
}

/// The parallel path and the forced-serial path produce bitwise identical
/// results for every kernel (disjoint output chunks, fixed reduction order).
#[test]
fn parallel_and_serial_agree_bitwise() {
    let f_r = map_from_seed(9, 7, 5, 41);
    let f_q = map_from_seed(9, 7, 5, 42);
    let params = ObjectiveParams {
        reference: ReferenceObjectiveParams::paper_init(),
        query: QueryObjectiveParams::seeded(3, 3, 3, 43).unwrap(),
    };
    let cfg = SolverConfig {
        mode: VolumeKind::Global,
        num_iter: 3,
        lambda: 0.2,
        use_query: true,
        curvature_scale: 2.0,
    };
    let run = || {
        let vol = correlate(&f_r, &f_q, cfg.mode).unwrap();
        let conv = conv_apply(&params.query, &vol);
        let (w, trace) = run_gocor(
            &f_r,
            &f_q,
            &params,
            &cfg,
            &InitializerConfig::context_aware(),
        )
        .unwrap();
        (vol, conv, w, trace)
    };
    exec::set_serial(false);
    let parallel = run();
    exec::set_serial(true);
    let serial = run();
    exec::set_serial(false);
    assert_eq!(parallel.0.data(), serial.0.data());
    assert_eq!(parallel.1.data(), serial.1.data());
    assert_eq!(parallel.2.data(), serial.2.data());
    assert_eq!(parallel.3, serial.3);
}
