//! Dense strictly convex QP solver: Goldfarb–Idnani dual active set.
//!
//! Solves `min ½ zᵀHz + gᵀz  s.t.  A z ≤ b`. Starts from the unconstrained
//! minimizer and adds the most violated constraint each outer iteration,
//! keeping `J = L⁻ᵀQ` and the triangular factor `R` of the active normals up
//! to date with Givens rotations.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default KKT acceptance tolerance.
pub const KKT_TOL: f64 = 1e-8;
const VIOLATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Rows of `A z ≤ b`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Qp {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Qp { h, g, a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }

    /// `lo ≤ z ≤ hi` as `2n` inequality rows; infinite bounds are skipped.
    pub fn with_box(h: DMatrix<f64>, g: DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Self {
        let n = g.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            if hi[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                rhs.push(hi[i]);
            }
            if lo[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-lo[i]);
            }
        }
        let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Qp { h, g, a, b: DVector::from_vec(rhs) }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.shape() != (n, n) || self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::Dimension(format!(
                "QP shapes: H {:?}, g {}, A {:?}, b {}",
                self.h.shape(),
                n,
                self.a.shape(),
                self.b.len()
            )));
        }
        if !linalg::all_finite(&self.h) || !self.g.iter().all(|v| v.is_finite()) || !linalg::all_finite(&self.a) {
            return Err(Error::Numeric("QP data contains non-finite values".into()));
        }
        if self.b.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("QP bound is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖Hz + g + Aᵀλ‖∞`
    pub stationarity: f64,
    /// `max(0, max(Az − b))`
    pub primal: f64,
    /// `max |λᵢ (bᵢ − Aᵢz)|`
    pub complementarity: f64,
    /// `max(0, −min λ)`
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// One multiplier per inequality row, zero when inactive.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    /// Indices of constraints in the final active set.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

pub fn kkt_residuals(qp: &Qp, z: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let stat = &qp.h * z + &qp.g + qp.a.tr_mul(lambda);
    let slack = &qp.b - &qp.a * z;
    let mut r = KktResiduals { stationarity: stat.amax(), ..Default::default() };
    for i in 0..qp.num_constraints() {
        r.primal = r.primal.max(-slack[i]);
        if slack[i].is_finite() {
            r.complementarity = r.complementarity.max((lambda[i] * slack[i]).abs());
        }
        r.dual = r.dual.max(-lambda[i]);
    }
    r
}

/// Upper-triangular solve on the leading `q × q` block of `r`.
fn solve_upper(r: &DMatrix<f64>, d: &[f64], q: usize) -> Vec<f64> {
    let mut x = vec![0.0; q];
    for i in (0..q).rev() {
        let mut s = d[i];
        for k in i + 1..q {
            s -= r[(i, k)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

fn rotate_columns(j: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..j.nrows() {
        let (x, y) = (j[(row, a)], j[(row, b)]);
        j[(row, a)] = c * x + s * y;
        j[(row, b)] = -s * x + c * y;
    }
}

/// Factor state of the active set.
struct Factors {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

impl Factors {
    /// Appends the constraint whose transformed normal is `d = Jᵀn`.
    fn add(&mut self, mut d: Vec<f64>) {
        let n = d.len();
        for k in (self.q + 1..n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let h = d[k - 1].hypot(d[k]);
            let (c, s) = (d[k - 1] / h, d[k] / h);
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
    }

    /// Removes active constraint at position `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let (x, y) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * x + s * y;
                self.r[(k + 1, col)] = -s * x + c * y;
            }
            rotate_columns(&mut self.j, k, k + 1, c, s);
        }
        self.q -= 1;
    }
}

pub fn solve_qp(qp: &Qp) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let m = qp.num_constraints();
    let chol = Cholesky::new(qp.h.clone()).ok_or_else(|| Error::Numeric("QP Hessian is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let mut f = Factors { j: linv.transpose(), r: DMatrix::zeros(n, n), q: 0 };
    let mut z = -chol.solve(&qp.g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 10 * (n + m) + 100;
    let mut iterations = 0;
    // normals in ≥ form: nᵢ = −Aᵢ, rhs −bᵢ, slack sᵢ = bᵢ − Aᵢz
    let slack = |z: &DVector<f64>, i: usize| qp.b[i] - qp.a.row(i).dot(&z.transpose());

    loop {
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&z, i);
            let tol = VIOLATION_TOL * (1.0 + qp.b[i].abs());
            if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((p, _)) = worst else { break };
        let np: DVector<f64> = -qp.a.row(p).transpose();
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Numeric(format!("QP iteration limit {max_iter} reached")));
            }
            let d: Vec<f64> = f.j.tr_mul(&np).iter().copied().collect();
            let mut step = DVector::zeros(n);
            for k in f.q..n {
                step.axpy(d[k], &f.j.column(k), 1.0);
            }
            let r = solve_upper(&f.r, &d, f.q);
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, rk) in r.iter().enumerate() {
                if *rk > 0.0 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = step.dot(&np);
            let scale = 1.0 + np.norm() * step.norm();
            let t2 = if step.amax() <= 1e-14 * (1.0 + z.amax()) || zn <= 1e-14 * scale {
                f64::INFINITY
            } else {
                -slack(&z, p) / zn
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::Infeasible(format!("constraint {p} cannot be satisfied with the active set")));
            }
            let t = t1.min(t2);
            for (k, rk) in r.iter().enumerate() {
                u[k] -= t * rk;
            }
            u_plus += t;
            if t2.is_finite() {
                z.axpy(t, &step, 1.0);
            }
            if t2 <= t1 {
                f.add(d);
                active.push(p);
                u.push(u_plus);
                break;
            }
            let l = drop_at.expect("finite partial step has a blocking constraint");
            f.drop(l);
            active.remove(l);
            u.remove(l);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = u[k].max(0.0);
    }
    let kkt = kkt_residuals(qp, &z, &multipliers);
    let objective = qp.objective(&z);
    Ok(QpSolution { z, multipliers, objective, active, iterations, kkt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_matches_newton_step() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = DVector::from_vec(vec![1.0, 2.0]);
        let sol = solve_qp(&Qp::unconstrained(h.clone(), g.clone())).unwrap();
        let expect = -h.lu().solve(&g).unwrap();
        assert!((sol.z - expect).amax() < 1e-12);
    }

    #[test]
    fn scalar_clipping() {
        // (x − 2)² = ½·2x² − 4x + 4
        let qp = Qp {
            h: DMatrix::from_element(1, 1, 2.0),
            g: DVector::from_element(1, -4.0),
            a: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 1.0),
        };
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-14);
        assert!((sol.multipliers[0] - 2.0).abs() < 1e-12);
        assert!(sol.kkt.max() < 1e-12);
    }

    #[test]
    fn inconsistent_bounds_are_infeasible() {
        let qp = Qp {
            h: DMatrix::identity(1, 1),
            g: DVector::zeros(1),
            a: DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            b: DVector::from_vec(vec![-1.0, -1.0]),
        };
        assert!(matches!(solve_qp(&qp), Err(Error::Infeasible(_))));
    }

    #[test]
    fn redundant_constraints() {
        // the same bound twice plus a dominated one
        let qp = Qp {
            h: DMatrix::identity(2, 2),
            g: DVector::from_vec(vec![-3.0, -3.0]),
            a: DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]),
            b: DVector::from_vec(vec![2.0, 2.0, 4.0]),
        };
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-12 && (sol.z[1] - 1.0).abs() < 1e-12);
        assert!(sol.kkt.primal < 1e-12 && sol.kkt.stationarity < 1e-10);
    }

    #[test]
    fn drops_constraint_that_becomes_inactive() {
        // min ‖z − (1, −1)‖² s.t. z₁ + z₂ ≥ 1 (as −z₁ − z₂ ≤ −1), z₂ ≥ 0 (as −z₂ ≤ 0)
        let qp = Qp {
            h: DMatrix::identity(2, 2) * 2.0,
            g: DVector::from_vec(vec![-2.0, 2.0]),
            a: DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, -1.0]),
            b: DVector::from_vec(vec![-1.0, 0.0]),
        };
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-12 && sol.z[1].abs() < 1e-12, "{}", sol.z);
        assert!(sol.kkt.max() < 1e-10);
    }
}
