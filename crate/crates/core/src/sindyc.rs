//! Sparse identification of a discrete one-step map `x' = Θ(x, u) Ξ`.
//!
//! Library columns come in a fixed order: constant, linear states, linear
//! inputs, state monomials of degree ≥ 2 (graded lexicographic), input
//! monomials of degree ≥ 2, state·input products (state-major), then
//! `sin(x_i)` for every state followed by `cos(x_i)`.
//!
//! [`identify_sindyc`] scales every library column to unit Euclidean norm
//! before thresholding, so `lambda` is compared against *normalized*
//! coefficients `|ξ_j| · ‖θ_j‖`. The stored `Ξ` is in original units and
//! the per-column scales are kept in the model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::model::check_bounded;

/// Sparsity threshold that balanced sparsity and accuracy on the robot data.
pub const DEFAULT_LAMBDA: f64 = 0.0035;
pub const MAX_STLS_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibrarySpec {
    pub include_constant: bool,
    pub poly_degree_state: u32,
    pub include_state_input_products: bool,
    pub poly_degree_input: u32,
    pub include_trig: bool,
}

impl Default for LibrarySpec {
    /// constant + linear(x, u) + quadratic(x) + x·u + sin/cos(x)
    fn default() -> Self {
        LibrarySpec {
            include_constant: true,
            poly_degree_state: 2,
            include_state_input_products: true,
            poly_degree_input: 1,
            include_trig: true,
        }
    }
}

impl LibrarySpec {
    pub fn linear() -> Self {
        LibrarySpec {
            include_constant: false,
            poly_degree_state: 1,
            include_state_input_products: false,
            poly_degree_input: 1,
            include_trig: false,
        }
    }
}

/// One library column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Constant,
    State(usize),
    Input(usize),
    /// Exponents per state, total degree ≥ 2.
    StateMonomial(Vec<u32>),
    /// Exponents per input, total degree ≥ 2.
    InputMonomial(Vec<u32>),
    StateInput(usize, usize),
    Sin(usize),
    Cos(usize),
}

fn monomial_name(exps: &[u32], var: char) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| if e == 1 { format!("{var}{}", i + 1) } else { format!("{var}{}^{e}", i + 1) })
        .collect();
    parts.join("*")
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Constant => "1".into(),
            Term::State(i) => format!("x{}", i + 1),
            Term::Input(j) => format!("u{}", j + 1),
            Term::StateMonomial(e) => monomial_name(e, 'x'),
            Term::InputMonomial(e) => monomial_name(e, 'u'),
            Term::StateInput(i, j) => format!("x{}*u{}", i + 1, j + 1),
            Term::Sin(i) => format!("sin(x{})", i + 1),
            Term::Cos(i) => format!("cos(x{})", i + 1),
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Term::Constant => 1.0,
            Term::State(i) => x[*i],
            Term::Input(j) => u[*j],
            Term::StateMonomial(e) => e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product(),
            Term::InputMonomial(e) => e.iter().zip(u).map(|(&k, v)| v.powi(k as i32)).product(),
            Term::StateInput(i, j) => x[*i] * u[*j],
            Term::Sin(i) => x[*i].sin(),
            Term::Cos(i) => x[*i].cos(),
        }
    }

    /// Adds `scale · ∂term/∂x` to `dx` and `scale · ∂term/∂u` to `du`.
    fn accumulate_gradient(&self, x: &[f64], u: &[f64], scale: f64, dx: &mut [f64], du: &mut [f64]) {
        let mono_grad = |e: &[u32], v: &[f64], out: &mut [f64]| {
            for (k, &ek) in e.iter().enumerate() {
                if ek == 0 {
                    continue;
                }
                let mut g = ek as f64 * v[k].powi(ek as i32 - 1);
                for (l, &el) in e.iter().enumerate() {
                    if l != k {
                        g *= v[l].powi(el as i32);
                    }
                }
                out[k] += scale * g;
            }
        };
        match self {
            Term::Constant => {}
            Term::State(i) => dx[*i] += scale,
            Term::Input(j) => du[*j] += scale,
            Term::StateMonomial(e) => mono_grad(e, x, dx),
            Term::InputMonomial(e) => mono_grad(e, u, du),
            Term::StateInput(i, j) => {
                dx[*i] += scale * u[*j];
                du[*j] += scale * x[*i];
            }
            Term::Sin(i) => dx[*i] += scale * x[*i].cos(),
            Term::Cos(i) => dx[*i] -= scale * x[*i].sin(),
        }
    }
}

/// Exponent vectors of total degree `d` in `n` variables, graded-lex order
/// (`x1^2, x1*x2, x2^2` for n = d = 2).
fn monomials(n: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n - 1 {
            prefix.push(d);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=d).rev() {
            prefix.push(e);
            rec(n, d - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, d, &mut Vec::new(), &mut out);
    }
    out
}

/// Ordered candidate-function library for `q` states and `p` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    spec: LibrarySpec,
    num_states: usize,
    num_inputs: usize,
    terms: Vec<Term>,
}

impl Library {
    pub fn new(spec: LibrarySpec, num_states: usize, num_inputs: usize) -> Result<Self> {
        let mut terms = Vec::new();
        if spec.include_constant {
            terms.push(Term::Constant);
        }
        if spec.poly_degree_state >= 1 {
            terms.extend((0..num_states).map(Term::State));
        }
        if spec.poly_degree_input >= 1 {
            terms.extend((0..num_inputs).map(Term::Input));
        }
        for d in 2..=spec.poly_degree_state {
            terms.extend(monomials(num_states, d).into_iter().map(Term::StateMonomial));
        }
        for d in 2..=spec.poly_degree_input {
            terms.extend(monomials(num_inputs, d).into_iter().map(Term::InputMonomial));
        }
        if spec.include_state_input_products {
            for i in 0..num_states {
                terms.extend((0..num_inputs).map(|j| Term::StateInput(i, j)));
            }
        }
        if spec.include_trig {
            terms.extend((0..num_states).map(Term::Sin));
            terms.extend((0..num_states).map(Term::Cos));
        }
        if terms.is_empty() {
            return Err(Error::Config("function library is empty; enable at least one term class".into()));
        }
        Ok(Library { spec, num_states, num_inputs, terms })
    }

    pub fn spec(&self) -> &LibrarySpec {
        &self.spec
    }
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }
    pub fn len(&self) -> usize {
        self.terms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }
    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(Term::name).collect()
    }

    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(x, u);
        }
    }

    /// Θ(X, U): one row per sample.
    pub fn evaluate(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != u.nrows() {
            return Err(Error::Dimension(format!("X has {} rows, U has {}", x.nrows(), u.nrows())));
        }
        if x.ncols() != self.num_states || u.ncols() != self.num_inputs {
            return Err(Error::Dimension("library evaluated with wrong state/input count".into()));
        }
        let m = x.nrows();
        let mut theta = DMatrix::zeros(m, self.len());
        let mut row = vec![0.0; self.len()];
        let mut xr = vec![0.0; self.num_states];
        let mut ur = vec![0.0; self.num_inputs];
        for k in 0..m {
            xr.iter_mut().zip(x.row(k).iter()).for_each(|(d, s)| *d = *s);
            ur.iter_mut().zip(u.row(k).iter()).for_each(|(d, s)| *d = *s);
            self.eval_into(&xr, &ur, &mut row);
            for (c, v) in row.iter().enumerate() {
                theta[(k, c)] = *v;
            }
        }
        Ok(theta)
    }
}

/// Builds Θ(X, U) and its column descriptors; fails if the library has at
/// least as many columns as there are samples.
pub fn build_library(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    spec: &LibrarySpec,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let lib = Library::new(*spec, x.ncols(), u.ncols())?;
    if lib.len() >= x.nrows() {
        return Err(Error::Data(format!(
            "library has {} terms but only {} samples",
            lib.len(),
            x.nrows()
        )));
    }
    Ok((lib.evaluate(x, u)?, lib.names()))
}

/// Diagnostics from a thresholded least-squares run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StlsReport {
    /// Iterations used per output column.
    pub iterations: Vec<usize>,
    /// Output columns whose active set became empty (all-zero dynamics).
    pub empty_columns: Vec<usize>,
    /// Library columns dropped from an active set as linearly dependent.
    pub rank_warnings: Vec<String>,
    /// True when some column hit the iteration cap before its active set settled.
    pub hit_iteration_cap: bool,
}

/// Sequential thresholded least squares, independently per column of `x_next`.
pub fn stls(theta: &DMatrix<f64>, x_next: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, StlsReport)> {
    let (m, t) = theta.shape();
    if x_next.nrows() != m {
        return Err(Error::Dimension(format!("Θ has {m} rows, X' has {}", x_next.nrows())));
    }
    if m <= t {
        return Err(Error::Data(format!("STLS needs more samples ({m}) than terms ({t})")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut xi = DMatrix::zeros(t, x_next.ncols());
    let mut report = StlsReport::default();

    for col in 0..x_next.ncols() {
        let target = x_next.columns(col, 1).clone_owned();
        let mut active: Vec<usize> = (0..t).collect();
        let mut coeffs = vec![0.0; t];
        let mut iters = 0;
        let mut settled = false;
        while iters < MAX_STLS_ITERATIONS {
            iters += 1;
            let sub = theta.select_columns(active.iter());
            let sol = linalg::lstsq(&sub, &target, RANK_TOL);
            for &d in &sol.dropped {
                report
                    .rank_warnings
                    .push(format!("output {}: column {} dependent, dropped", col + 1, active[d]));
            }
            coeffs.iter_mut().for_each(|c| *c = 0.0);
            for (k, &j) in active.iter().enumerate() {
                coeffs[j] = sol.coeffs[(k, 0)];
            }
            let keep: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&j| coeffs[j] != 0.0 && coeffs[j].abs() >= lambda)
                .collect();
            if keep.len() == active.len() {
                settled = true;
                break;
            }
            active = keep;
            if active.is_empty() {
                coeffs.iter_mut().for_each(|c| *c = 0.0);
                settled = true;
                break;
            }
        }
        if !settled {
            report.hit_iteration_cap = true;
            let sub = theta.select_columns(active.iter());
            let sol = linalg::lstsq(&sub, &target, RANK_TOL);
            coeffs.iter_mut().for_each(|c| *c = 0.0);
            for (k, &j) in active.iter().enumerate() {
                coeffs[j] = sol.coeffs[(k, 0)];
            }
        }
        // final re-threshold pass
        for c in coeffs.iter_mut() {
            if c.abs() < lambda {
                *c = 0.0;
            }
        }
        if coeffs.iter().all(|&c| c == 0.0) {
            report.empty_columns.push(col);
        }
        report.iterations.push(iters);
        for (j, c) in coeffs.into_iter().enumerate() {
            xi[(j, col)] = c;
        }
    }
    for w in &report.rank_warnings {
        log::warn!("stls: {w}");
    }
    Ok((xi, report))
}

/// Identified sparse one-step map.
#[derive(Debug, Clone, PartialEq)]
pub struct SindyModel {
    library: Library,
    xi: DMatrix<f64>,
    lambda: f64,
    /// Column norms used when thresholding (1.0 when none were applied).
    threshold_scales: Vec<f64>,
    sample_time_s: f64,
}

impl SindyModel {
    pub fn new(
        library: Library,
        xi: DMatrix<f64>,
        lambda: f64,
        threshold_scales: Vec<f64>,
        sample_time_s: f64,
    ) -> Result<Self> {
        if xi.nrows() != library.len() || xi.ncols() != library.num_states() {
            return Err(Error::Dimension(format!(
                "Ξ is {}×{}, library needs {}×{}",
                xi.nrows(),
                xi.ncols(),
                library.len(),
                library.num_states()
            )));
        }
        if threshold_scales.len() != library.len() {
            return Err(Error::Dimension("one threshold scale per library term required".into()));
        }
        if !linalg::all_finite(&xi) {
            return Err(Error::Numeric("Ξ has non-finite entries".into()));
        }
        if !(sample_time_s > 0.0) {
            return Err(Error::Data(format!("sample time must be positive, got {sample_time_s}")));
        }
        Ok(SindyModel { library, xi, lambda, threshold_scales, sample_time_s })
    }

    pub fn library(&self) -> &Library {
        &self.library
    }
    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn threshold_scales(&self) -> &[f64] {
        &self.threshold_scales
    }
    pub fn sample_time_s(&self) -> f64 {
        self.sample_time_s
    }
    pub fn num_outputs(&self) -> usize {
        self.library.num_states()
    }
    pub fn num_inputs(&self) -> usize {
        self.library.num_inputs()
    }

    pub fn active_terms(&self) -> usize {
        (0..self.xi.nrows()).filter(|&r| self.xi.row(r).iter().any(|&v| v != 0.0)).count()
    }

    pub fn nonzeros(&self) -> usize {
        self.xi.iter().filter(|&&v| v != 0.0).count()
    }

    /// `x_{k+1} = Θ(x_k, u_k) Ξ`
    pub fn step(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let mut row = vec![0.0; self.library.len()];
        self.library.eval_into(x, u, &mut row);
        let theta = DVector::from_vec(row);
        self.xi.tr_mul(&theta)
    }

    /// `(∂x'/∂x, ∂x'/∂u)` of the one-step map at `(x, u)`.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let q = self.num_outputs();
        let p = self.num_inputs();
        let mut jx = DMatrix::zeros(q, q);
        let mut ju = DMatrix::zeros(q, p);
        let mut dx = vec![0.0; q];
        let mut du = vec![0.0; p];
        for out in 0..q {
            dx.iter_mut().for_each(|v| *v = 0.0);
            du.iter_mut().for_each(|v| *v = 0.0);
            for (t, term) in self.library.terms().iter().enumerate() {
                let c = self.xi[(t, out)];
                if c != 0.0 {
                    term.accumulate_gradient(x, u, c, &mut dx, &mut du);
                }
            }
            for i in 0..q {
                jx[(out, i)] = dx[i];
            }
            for j in 0..p {
                ju[(out, j)] = du[j];
            }
        }
        (jx, ju)
    }

    /// Free run from `x0`; row k of the result is `x_k`.
    pub fn simulate(&self, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let q = self.num_outputs();
        if u.ncols() != self.num_inputs() {
            return Err(Error::Dimension(format!(
                "input has {} channels, model expects {}",
                u.ncols(),
                self.num_inputs()
            )));
        }
        if x0.len() != q {
            return Err(Error::Dimension(format!("initial state has {} entries, expected {q}", x0.len())));
        }
        let m = u.nrows();
        let mut out = DMatrix::zeros(m, q);
        let mut x: Vec<f64> = x0.iter().copied().collect();
        let mut uk = vec![0.0; self.num_inputs()];
        for k in 0..m {
            check_bounded(k, x.iter())?;
            for (i, v) in x.iter().enumerate() {
                out[(k, i)] = *v;
            }
            uk.iter_mut().zip(u.row(k).iter()).for_each(|(d, s)| *d = *s);
            let next = self.step(&x, &uk);
            x.iter_mut().zip(next.iter()).for_each(|(d, s)| *d = *s);
        }
        Ok(out)
    }
}

/// Fits `y_{k+1} = Θ(y_k, u_k) Ξ` with unit-norm column scaling and STLS.
pub fn identify_sindyc_with_report(
    ds: &Dataset,
    spec: &LibrarySpec,
    lambda: f64,
) -> Result<(SindyModel, StlsReport)> {
    let m = ds.len();
    let x = ds.y().rows(0, m - 1).clone_owned();
    let u = ds.u().rows(0, m - 1).clone_owned();
    let x_next = ds.y().rows(1, m - 1).clone_owned();
    let (mut theta, _) = build_library(&x, &u, spec)?;
    let lib = Library::new(*spec, ds.num_outputs(), ds.num_inputs())?;

    let scales: Vec<f64> = (0..theta.ncols())
        .map(|c| {
            let n = theta.column(c).norm();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    for (c, s) in scales.iter().enumerate() {
        theta.column_mut(c).unscale_mut(*s);
    }
    let (xi_norm, report) = stls(&theta, &x_next, lambda)?;
    let mut xi = xi_norm;
    for (r, s) in scales.iter().enumerate() {
        xi.row_mut(r).unscale_mut(*s);
    }
    let model = SindyModel::new(lib, xi, lambda, scales, ds.sample_time_s())?;
    Ok((model, report))
}

pub fn identify_sindyc(ds: &Dataset, spec: &LibrarySpec, lambda: f64) -> Result<SindyModel> {
    identify_sindyc_with_report(ds, spec, lambda).map(|(m, _)| m)
}
