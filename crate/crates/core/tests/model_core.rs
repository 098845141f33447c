use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tendonid::dataset::Dataset;
use tendonid::model::*;
use tendonid::plantsim::{make_random_arx, make_random_lti, make_sparse_nonlinear_truth, prbs_signal};
use tendonid::sindyc::SindyModel;
use tendonid::Error;

/// Evaluates a library term from its printed name only.
fn eval_named(name: &str, x: &[f64], u: &[f64]) -> f64 {
    fn var(tok: &str, x: &[f64], u: &[f64]) -> f64 {
        let (base, exp) = match tok.split_once('^') {
            Some((b, e)) => (b, e.parse::<i32>().unwrap()),
            None => (tok, 1),
        };
        let idx: usize = base[1..].parse::<usize>().unwrap() - 1;
        let v = if base.starts_with('x') { x[idx] } else { u[idx] };
        v.powi(exp)
    }
    if name == "1" {
        return 1.0;
    }
    if let Some(inner) = name.strip_prefix("sin(") {
        return var(inner.trim_end_matches(')'), x, u).sin();
    }
    if let Some(inner) = name.strip_prefix("cos(") {
        return var(inner.trim_end_matches(')'), x, u).cos();
    }
    name.split('*').map(|t| var(t, x, u)).product()
}

fn naive_sindy(model: &SindyModel, u: &DMatrix<f64>, x0: &[f64]) -> DMatrix<f64> {
    let names = model.library().names();
    let q = model.num_outputs();
    let mut out = DMatrix::zeros(u.nrows(), q);
    let mut x = x0.to_vec();
    for k in 0..u.nrows() {
        for i in 0..q {
            out[(k, i)] = x[i];
        }
        let uk: Vec<f64> = u.row(k).iter().copied().collect();
        let mut next = vec![0.0; q];
        for (t, name) in names.iter().enumerate() {
            let v = eval_named(name, &x, &uk);
            for i in 0..q {
                next[i] += model.xi()[(t, i)] * v;
            }
        }
        x = next;
    }
    out
}

#[test]
fn sindy_simulation_matches_naive_interpreter() {
    for seed in 0..10 {
        let model = make_sparse_nonlinear_truth(seed).unwrap();
        let u = prbs_signal(seed + 100, 200, 1, 1.0, 3);
        let x0 = [0.1, -0.05];
        let fast = model.simulate(&u, &DVector::from_column_slice(&x0)).unwrap();
        let slow = naive_sindy(&model, &u, &x0);
        assert!((fast - slow).amax() < 1e-12, "seed {seed}");
    }
}

#[test]
fn arx_free_run_reproduces_its_own_data() {
    for seed in 0..5 {
        let truth = make_random_arx(seed, 2, 2, 4).unwrap();
        let lag = truth.max_lag();
        let u = prbs_signal(seed, 300, 2, 1.0, 1);
        // independent generation through the one-step map
        let mut y = DMatrix::zeros(300, 2);
        for k in 0..lag {
            y[(k, 0)] = 0.1 * k as f64;
            y[(k, 1)] = -0.05 * k as f64;
        }
        for k in lag..300 {
            let next = truth
                .one_step(&y.rows(k - lag, lag).clone_owned(), &u.rows(k - lag, lag).clone_owned())
                .unwrap();
            y.row_mut(k).copy_from(&next.transpose());
        }
        let sim = simulate_matrix(
            &ModelKind::Arx(truth.clone()),
            &u,
            &InitialCondition::OutputWindow(y.rows(0, lag).clone_owned()),
        )
        .unwrap();
        assert!((sim - &y).amax() < 1e-9, "seed {seed}");
    }
}

#[test]
fn fit_hand_case_and_identities() {
    let y = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
    let yh = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
    let r = fit_percent(&y, &yh).unwrap();
    assert!((r.mean_fit - 100.0 * (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
    assert!((r.mean_fit - 29.289).abs() < 1e-3);
    let mean = DMatrix::from_element(3, 1, 1.0);
    assert!(fit_percent(&y, &mean).unwrap().mean_fit.abs() < 1e-12);
    assert!(matches!(fit_percent(&mean, &y), Err(Error::Data(_)) | Err(Error::Numeric(_))));
}

#[test]
fn save_and_load_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let kinds: Vec<ModelKind> = vec![
        make_random_lti(4, 3, 2, 2).unwrap().into(),
        make_random_arx(4, 2, 3, 5).unwrap().into(),
        make_sparse_nonlinear_truth(4).unwrap().into(),
    ];
    for (i, m) in kinds.into_iter().enumerate() {
        let path = dir.path().join(format!("m{i}.json"));
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}

#[test]
fn validation_on_generating_data_is_perfect() {
    let ss = make_random_lti(8, 3, 2, 2).unwrap();
    let u = prbs_signal(8, 300, 2, 1.0, 2);
    let y = ss.simulate(&u, &DVector::from_vec(vec![0.5, -0.5, 0.2])).unwrap();
    let ds = Dataset::from_matrices(0.03, u, y).unwrap();
    let model = ModelKind::StateSpace(ss);
    let init = initial_condition_from_data(&model, &ds).unwrap();
    let sim = simulate_matrix(&model, ds.u(), &init).unwrap();
    assert!(fit_percent(ds.y(), &sim).unwrap().mean_fit > 99.9);
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn superposition(seed in 0u64..1000, u1 in matrix(40, 2), u2 in matrix(40, 2)) {
        let ss = make_random_lti(seed, 3, 2, 2).unwrap();
        let x0 = DVector::zeros(3);
        let a = ss.simulate(&u1, &x0).unwrap();
        let b = ss.simulate(&u2, &x0).unwrap();
        let ab = ss.simulate(&(&u1 + &u2), &x0).unwrap();
        prop_assert!((ab - a - b).amax() < 1e-9);
    }

    #[test]
    fn fit_is_affine_invariant(
        y in matrix(30, 2),
        noise in matrix(30, 2),
        scale in prop::array::uniform2(prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]),
        offset in prop::array::uniform2(-10.0f64..10.0),
    ) {
        let yh = &y + noise * 0.3;
        let map = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), 2, |i, j| scale[j] * m[(i, j)] + offset[j]);
        let f0 = fit_percent(&y, &yh).unwrap();
        let f1 = fit_percent(&map(&y), &map(&yh)).unwrap();
        for j in 0..2 {
            prop_assert!((f0.per_channel_fit[j] - f1.per_channel_fit[j]).abs() < 1e-9);
        }
        let mean = (f0.per_channel_fit[0] + f0.per_channel_fit[1]) / 2.0;
        prop_assert!((f0.mean_fit - mean).abs() < 1e-12);
    }

    #[test]
    fn self_fit_is_exactly_100(y in matrix(20, 3)) {
        let r = fit_percent(&y, &y).unwrap();
        for f in r.per_channel_fit {
            prop_assert!((f - 100.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_bitwise(seed in 0u64..500) {
        let m: ModelKind = make_random_lti(seed, 4, 2, 2).unwrap().into();
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }
}
