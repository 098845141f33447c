//! Seeded random systems with known ground truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arx::ArxModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::sindyc::{Library, LibrarySpec, SindyModel, Term};

const MAX_ATTEMPTS: usize = 100;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random stable `(A, B, C, D)`: spectral radius of `A` rescaled to a random
/// value in [0.5, 0.95], controllable and observable by SVD rank checks.
pub fn make_random_lti(seed: u64, n: usize, p: usize, q: usize) -> Result<StateSpaceModel> {
    if n == 0 || p == 0 || q == 0 {
        return Err(Error::Config("random LTI dimensions must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let mut a = gaussian(&mut rng, n, n);
        let rho = linalg::spectral_radius(&a);
        if rho == 0.0 {
            continue;
        }
        let target = rng.random_range(0.5..0.95);
        a *= target / rho;
        let b = gaussian(&mut rng, n, p);
        let c = gaussian(&mut rng, q, n);
        let d = gaussian(&mut rng, q, p) * 0.5;
        let ctrb = linalg::controllability_matrix(&a, &b);
        let obsv = linalg::observability_matrix(&a, &c, n);
        if linalg::numerical_rank(&ctrb, 1e-8)? == n && linalg::numerical_rank(&obsv, 1e-8)? == n {
            return StateSpaceModel::new(a, b, c, d, 1.0);
        }
    }
    Err(Error::Numeric(format!("no minimal random LTI found in {MAX_ATTEMPTS} attempts")))
}

/// Block companion matrix of `I + A₁z⁻¹ + … + Aₙz⁻ⁿ` built from ARX `a`
/// coefficients; its eigenvalues are the model poles.
fn arx_companion(q: usize, a: &[Vec<Vec<f64>>], order: usize) -> DMatrix<f64> {
    let mut comp = DMatrix::zeros(q * order, q * order);
    for i in 0..q {
        for j in 0..q {
            for (l, c) in a[i][j].iter().enumerate() {
                comp[(i, l * q + j)] = -c;
            }
        }
    }
    for r in q..q * order {
        comp[(r, r - q)] = 1.0;
    }
    comp
}

/// Random stable MIMO ARX model with orders drawn from `1..=max_order`
/// (`nk = 1`); poles are scaled into a disc of radius 0.9.
pub fn make_random_arx(seed: u64, q: usize, p: usize, max_order: usize) -> Result<ArxModel> {
    if q == 0 || p == 0 || max_order == 0 {
        return Err(Error::Config("random ARX dimensions and order must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na: Vec<Vec<usize>> = (0..q).map(|_| (0..q).map(|_| rng.random_range(1..=max_order)).collect()).collect();
    let nb: Vec<Vec<usize>> = (0..q).map(|_| (0..p).map(|_| rng.random_range(1..=max_order)).collect()).collect();
    let nk = vec![vec![1; p]; q];
    let mut a: Vec<Vec<Vec<f64>>> = na
        .iter()
        .map(|row| row.iter().map(|&n| (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).collect())
        .collect();
    let b: Vec<Vec<Vec<f64>>> = nb
        .iter()
        .map(|row| row.iter().map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    let order = na.iter().flatten().copied().max().unwrap_or(1);
    let rho = linalg::spectral_radius(&arx_companion(q, &a, order));
    if rho > 0.9 {
        // scaling a_l by s^l scales every pole by s
        let s = 0.9 / rho;
        for coeffs in a.iter_mut().flatten() {
            for (l, c) in coeffs.iter_mut().enumerate() {
                *c *= s.powi(l as i32 + 1);
            }
        }
    }
    ArxModel::new(na, nb, nk, a, b, 1.0)
}

/// Library used by [`make_sparse_nonlinear_truth`]: the default library.
pub fn truth_library_spec() -> LibrarySpec {
    LibrarySpec::default()
}

fn is_candidate(t: &Term) -> bool {
    match t {
        Term::State(_) | Term::Input(_) | Term::StateInput(_, _) | Term::Sin(_) => true,
        Term::StateMonomial(e) => e.iter().filter(|&&k| k > 0).count() == 1,
        _ => false,
    }
}

/// True when the library evaluated along the trajectory has full column
/// rank, i.e. the input excites every term.
fn identifiable(lib: &Library, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<bool> {
    let mut theta = lib.evaluate(x, u)?;
    for mut col in theta.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 {
            return Ok(false);
        }
        col.unscale_mut(n);
    }
    Ok(linalg::numerical_rank(&theta, 1e-8)? == lib.len())
}

/// Two-state, one-input sparse map with at most six active terms drawn from
/// {x, x², x·u, sin x, u}, coefficient magnitudes in [0.1, 0.5], contractive
/// at the origin, bounded under a unit PRBS test input, and identifiable
/// from that input.
pub fn make_sparse_nonlinear_truth(seed: u64) -> Result<SindyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lib = Library::new(truth_library_spec(), 2, 1)?;
    let candidates: Vec<usize> = lib.terms().iter().enumerate().filter(|(_, t)| is_candidate(t)).map(|(i, _)| i).collect();
    for attempt in 0..MAX_ATTEMPTS {
        let count = rng.random_range(2..=6);
        let mut xi = DMatrix::zeros(lib.len(), 2);
        let mut placed = 0;
        while placed < count {
            let term = candidates[rng.random_range(0..candidates.len())];
            let out = rng.random_range(0..2);
            if xi[(term, out)] != 0.0 {
                continue;
            }
            let mag = rng.random_range(0.1..0.5);
            xi[(term, out)] = if rng.random::<bool>() { mag } else { -mag };
            placed += 1;
        }
        // every state must be driven by something
        if (0..2).any(|c| xi.column(c).iter().all(|&v| v == 0.0)) {
            continue;
        }
        let model = SindyModel::new(lib.clone(), xi, 0.0, vec![1.0; lib.len()], 1.0)?;
        let (jx, _) = model.jacobians(&[0.0, 0.0], &[0.0]);
        let smax = linalg::svd_sorted(&jx)?.s[0];
        if smax >= 1.0 {
            continue;
        }
        let u = prbs_signal(seed.wrapping_add(attempt as u64 + 1), 400, 1, 1.0, 1);
        match model.simulate(&u, &DVector::zeros(2)) {
            Ok(x) if x.iter().all(|v| v.abs() < 10.0) && identifiable(&lib, &x, &u)? => return Ok(model),
            _ => continue,
        }
    }
    Err(Error::Numeric(format!("no admissible sparse truth found in {MAX_ATTEMPTS} attempts")))
}

/// `m × p` random binary ±`amplitude` signal, each level held for `hold` samples.
pub fn prbs_signal(seed: u64, m: usize, p: usize, amplitude: f64, hold: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hold = hold.max(1);
    let mut out = DMatrix::zeros(m, p);
    let mut level = vec![0.0; p];
    for k in 0..m {
        if k % hold == 0 {
            for l in level.iter_mut() {
                *l = if rng.random::<bool>() { amplitude } else { -amplitude };
            }
        }
        for (c, l) in level.iter().enumerate() {
            out[(k, c)] = *l;
        }
    }
    out
}
