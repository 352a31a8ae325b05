mod common;

use knotmpc::condense::{
    build_large, build_small, extract_first_input, extract_inputs, param_prediction_matrices,
    prediction_matrices, Formulation,
};
use knotmpc::param::{expand, KnotSchedule, KnotTrajectory};
use knotmpc::qp::{solve_qp, QpSettings};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn solve_inputs(
    form: &Formulation,
    spec: &knotmpc::condense::MpcSpec,
    x0: &DVector<f64>,
) -> DMatrix<f64> {
    let prob = form.build(spec, x0).unwrap();
    let sol = solve_qp(&prob, None, &QpSettings::default()).unwrap();
    assert!(sol.is_solved(), "{} status {}", form.name(), sol.status);
    extract_inputs(&sol, form, spec).unwrap()
}

#[test]
fn fifty_random_specs_agree_across_formulations() {
    for seed in 0..50 {
        let (spec, x0) = common::random_spec(seed, 8, 3, 30);
        let t = spec.horizon();
        let large = solve_inputs(&Formulation::Large, &spec, &x0);
        let small = solve_inputs(&Formulation::Small, &spec, &x0);
        assert!(
            (&large - &small).amax() < 1e-5,
            "seed {seed}: {}",
            (&large - &small).amax()
        );
        for form in [
            Formulation::LargeParam { knots: t },
            Formulation::SmallParam { knots: t },
        ] {
            let u = solve_inputs(&form, &spec, &x0);
            assert!((&u - &small).amax() < 1e-5, "seed {seed} {}", form.name());
        }
    }
}

#[test]
fn bounds_are_active_in_some_random_specs() {
    let mut active = 0;
    for seed in 0..50 {
        let (spec, x0) = common::random_spec(seed, 8, 3, 30);
        let u = solve_inputs(&Formulation::Small, &spec, &x0);
        let hit = (0..u.nrows()).any(|k| {
            (0..u.ncols()).any(|j| {
                (u[(k, j)] - spec.u_max()[j]).abs() < 1e-6
                    || (u[(k, j)] - spec.u_min()[j]).abs() < 1e-6
            })
        });
        active += usize::from(hit);
    }
    assert!(
        active > 5 && active < 50,
        "{active} of 50 specs had active bounds"
    );
}

#[test]
fn first_input_extraction_matches_full_sequence() {
    let (spec, x0) = common::random_spec(77, 4, 2, 12);
    for form in [
        Formulation::Large,
        Formulation::Small,
        Formulation::LargeParam { knots: 3 },
        Formulation::SmallParam { knots: 3 },
    ] {
        let prob = form.build(&spec, &x0).unwrap();
        let sol = solve_qp(&prob, None, &QpSettings::default()).unwrap();
        let first = extract_first_input(&sol, &form, &spec).unwrap();
        let all = extract_inputs(&sol, &form, &spec).unwrap();
        assert_eq!(first, all.row(0).transpose());
    }
}

#[test]
fn parameterized_large_and_small_agree_for_every_knot_count() {
    for seed in 100..110 {
        let (spec, x0) = common::random_spec(seed, 6, 2, 20);
        for p in 1..=spec.horizon() {
            let a = solve_inputs(&Formulation::LargeParam { knots: p }, &spec, &x0);
            let b = solve_inputs(&Formulation::SmallParam { knots: p }, &spec, &x0);
            assert!((&a - &b).amax() < 1e-5, "seed {seed} p {p}");
        }
    }
}

#[test]
fn size_laws_hold_for_long_horizons() {
    let (spec, x0) = common::random_spec(3, 4, 2, 2);
    let (n, m) = (spec.state_dim(), spec.input_dim());
    for t in [10, 50, 100, 400] {
        let mut s = spec.clone();
        s.set_horizon(t).unwrap();
        let large = build_large(&s, &x0).unwrap();
        assert_eq!(large.num_vars(), n * (t + 1) + t * m + 1);
        assert_eq!(large.num_constraints(), n * (t + 1) + 1 + t * m);
        let small = build_small(&s, &x0).unwrap();
        assert_eq!((small.num_vars(), small.num_constraints()), (t * m, t * m));
        for p in [2, 5] {
            let sp = Formulation::SmallParam { knots: p }.build(&s, &x0).unwrap();
            assert_eq!((sp.num_vars(), sp.num_constraints()), (m * p, m * p));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn prediction_matches_rollout(seed in any::<u64>()) {
        let (spec, x0) = common::random_spec(seed, 8, 3, 30);
        let mut r = common::rng(seed ^ 0xabc);
        let t = spec.horizon();
        let m = spec.input_dim();
        let z = common::uniform_vector(&mut r, t * m, 2.0);
        let pm = prediction_matrices(spec.model(), t, &x0).unwrap();
        let pred = &pm.s * &z + &pm.v;
        let inputs: Vec<DVector<f64>> = (0..t).map(|k| z.rows(k * m, m).into_owned()).collect();
        let states = spec.model().rollout(&x0, &inputs);
        for k in 1..=t {
            let diff = (pred.rows((k - 1) * spec.state_dim(), spec.state_dim()) - &states[k]).amax();
            prop_assert!(diff < 1e-9 * (1.0 + states[k].amax()), "k={} diff={}", k, diff);
        }
    }

    #[test]
    fn param_prediction_matches_expanded_rollout(seed in any::<u64>(), p_frac in 0.0f64..1.0) {
        let (spec, x0) = common::random_spec(seed, 6, 3, 25);
        let t = spec.horizon();
        let m = spec.input_dim();
        let p = 1 + ((t - 1) as f64 * p_frac) as usize;
        let sched = KnotSchedule::new(t, p).unwrap();
        let mut r = common::rng(seed);
        let knots = common::uniform_matrix(&mut r, p, m, 2.0);
        let traj = KnotTrajectory::new(knots.clone());
        let u = expand(&traj, &sched).unwrap();
        let inputs: Vec<DVector<f64>> = (0..t).map(|k| u.row(k).transpose()).collect();
        let states = spec.model().rollout(&x0, &inputs);
        let pm = param_prediction_matrices(spec.model(), &sched, &x0).unwrap();
        let flat = DVector::from_row_slice(knots.transpose().as_slice());
        let pred = &pm.s * flat + &pm.v;
        let n = spec.state_dim();
        for k in 1..=t {
            prop_assert!((pred.rows((k - 1) * n, n) - &states[k]).amax() < 1e-9 * (1.0 + states[k].amax()));
        }
    }
}
