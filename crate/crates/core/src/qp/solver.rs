//! Dual active-set method of Goldfarb and Idnani for strictly convex QPs
//! `min 1/2 x'Hx + g'x  s.t.  A x <= b`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal shift tried once when `H` fails to factor.
pub const REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `A`, zero for inactive rows; `Hx + g + A'lambda = 0`.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    /// `1/2 x'Hx + g'x`
    pub objective: f64,
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `max |Hx + g + A'lambda|`
    pub stationarity: f64,
    /// `max(0, max(Ax - b))`
    pub primal: f64,
    /// `max(0, -min lambda)`
    pub dual: f64,
    /// `max |lambda_i (Ax - b)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> KktResiduals {
    let grad = h * x + g + a.transpose() * lambda;
    let slack = a * x - b;
    KktResiduals {
        stationarity: grad.abs().max(),
        primal: slack.iter().fold(0.0, |m, &s| m.max(s)),
        dual: lambda.iter().fold(0.0, |m, &l| m.max(-l)),
        complementarity: slack
            .iter()
            .zip(lambda.iter())
            .fold(0.0, |m, (s, l)| m.max((s * l).abs())),
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = libm::hypot(a, b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

/// Rotates columns `i` and `j` of `m`: `(ci, cj) <- (c ci + s cj, -s ci + c cj)`.
fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (t1, t2) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = c * t1 + s * t2;
        m[(k, j)] = -s * t1 + c * t2;
    }
}

struct Factor {
    /// `J = L^{-T}`, rotated so that `J' N_active = [R; 0]`.
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    fn add(&mut self, mut d: DVector<f64>) {
        let n = d.len();
        let q = self.q;
        for k in (q + 1..n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if s == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
    }

    fn drop(&mut self, l: usize) {
        let q = self.q;
        for c in l..q - 1 {
            for i in 0..q {
                self.r[(i, c)] = self.r[(i, c + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (c, s, h) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            if s == 0.0 {
                continue;
            }
            self.r[(k, k)] = h;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..q - 1 {
                let (t1, t2) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * t1 + s * t2;
                self.r[(k + 1, col)] = -s * t1 + c * t2;
            }
            rotate_columns(&mut self.j, k, k + 1, c, s);
        }
        self.q -= 1;
    }

    /// `R^{-1} d[0..q]`
    fn dual_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.q;
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

/// Solves the QP to primal feasibility `tol` (on unit-normalized rows).
///
/// Returns [`Error::Infeasible`] when the dual is unbounded and
/// [`Error::MaxIterations`] if the active set fails to settle.
pub fn solve_dense_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
) -> Result<QpSolution> {
    let n = h.nrows();
    let m = a.nrows();
    if h.ncols() != n || g.len() != n || (m > 0 && a.ncols() != n) || b.len() != m {
        return Err(Error::dim(format!(
            "QP data: H {:?}, g {}, A {:?}, b {}",
            h.shape(),
            g.len(),
            a.shape(),
            b.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::param("QP tolerance must be positive"));
    }

    // rows as n_i' x >= c_i with unit n_i
    let mut normals = DMatrix::zeros(n, m);
    let mut rhs = DVector::zeros(m);
    let mut scale = vec![0.0; m];
    let mut usable = vec![true; m];
    for i in 0..m {
        let norm = a.row(i).norm();
        if norm == 0.0 {
            if b[i] < -tol {
                return Err(Error::Infeasible);
            }
            usable[i] = false;
            continue;
        }
        scale[i] = norm;
        normals.set_column(i, &(-a.row(i).transpose() / norm));
        rhs[i] = -b[i] / norm;
    }

    let (chol, regularized) = match h.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let shifted = h + DMatrix::identity(n, n) * REGULARIZATION;
            (shifted.cholesky().ok_or(Error::NotPositiveDefinite)?, true)
        }
    };
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite)?;
    let mut fac = Factor {
        j: linv.transpose(),
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    let mut x = chol.solve(&(-g));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];

    let max_iter = 10 * (n + m) + 100;
    let mut iterations = 0;
    let violation = |x: &DVector<f64>, i: usize| normals.column(i).dot(x) - rhs[i];

    loop {
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if !usable[i] || is_active[i] {
                continue;
            }
            let s = violation(&x, i);
            if s < -tol && worst.map_or(true, |(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((p, mut sp)) = worst else { break };
        let np = normals.column(p).into_owned();
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::MaxIterations {
                    iterations,
                    violation: -sp,
                });
            }
            let q = fac.q;
            let d = fac.j.transpose() * &np;
            let d2_norm = d.rows(q, n - q).norm();
            let z = if q < n {
                fac.j.columns(q, n - q) * d.rows(q, n - q)
            } else {
                DVector::zeros(n)
            };
            let r = fac.dual_direction(&d);

            let mut t1 = f64::INFINITY;
            let mut leave = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let ratio = u_plus[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        leave = Some(k);
                    }
                }
            }
            let dependent = d2_norm <= 1e-12 * d.norm().max(1.0);
            let t2 = if dependent {
                f64::INFINITY
            } else {
                (-sp / z.dot(&np)).max(0.0)
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible);
            }
            for k in 0..q {
                u_plus[k] -= t * r[k];
            }
            u_plus[q] += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                fac.add(d);
                active.push(p);
                is_active[p] = true;
                u = u_plus;
                break;
            }
            let k = leave.expect("partial step has a leaving constraint");
            is_active[active[k]] = false;
            active.remove(k);
            u_plus.remove(k);
            fac.drop(k);
            sp = violation(&x, p);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = u[k] / scale[i];
    }
    let objective = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
    Ok(QpSolution {
        x,
        multipliers,
        active,
        iterations,
        objective,
        regularized,
    })
}
