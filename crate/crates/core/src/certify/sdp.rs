//! Minimum fidelity over all PSD completions of the Gram block.
//!
//! With `w_i = sqrt(p_i)` and `M = diag(w) C diag(w)` the problem becomes a
//! correlation-matrix program
//!
//! ```text
//! minimize  <W, C>       W = w w^T / 4
//! s.t.      C_ii = 1,  C_{i,i+1} >= l_i = L_i / (w_i w_{i+1}),  C PSD
//! ```
//!
//! and is solved through its dual
//!
//! ```text
//! maximize  sum(y) + 2 sum(z_e l_e)
//! s.t.      S = W - Diag(y) - sum z_e (e_i e_j^T + e_j e_i^T) PSD,  z >= 0
//! ```
//!
//! with a log-barrier Newton method. Every iterate is strictly dual feasible,
//! so the returned value is a lower bound on the primal optimum whether or
//! not the solver fully converges. Indices with `p_i = 0` force a zero row
//! in `M` and are dropped.
//!
//! The edge multipliers are additionally boxed, `z_e <= Z_MAX`. When some
//! `l_e = 1` the primal has no interior and the plain barrier is unbounded
//! along Laplacian directions (adding `c (e_i - e_j)(e_i - e_j)^T` to `S`
//! costs nothing in the objective); the box removes that recession. A
//! restricted dual is still a dual, so soundness is unaffected, and the
//! optimal multipliers of the inputs seen in practice are orders of
//! magnitude below the box.

use serde::{Deserialize, Serialize};

use super::{CertifyError, DensityElementBounds};
use crate::framing::DIM;
use crate::linalg::Dense;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct SdpBound<T> {
    /// Dual objective at the last iterate, clamped at zero.
    pub value: T,
    /// Duality-gap estimate at the last barrier parameter.
    pub gap: T,
    /// Near-optimal completion `M` (primal estimate from the barrier).
    pub completion: [[T; DIM]; DIM],
    /// Newton steps taken.
    pub iterations: u32,
    pub converged: bool,
}

const MAX_NEWTON_PER_STAGE: u32 = 200;
const MAX_STAGES: u32 = 40;
const BARRIER_GROWTH: f64 = 10.0;
const Z_MAX: f64 = 50.0;

/// One dual variable: its objective coefficient and the entries of dS/dx.
struct Var<T> {
    b: T,
    d_s: Vec<(usize, usize)>,
    positive: bool,
}

struct Problem<T> {
    w_mat: Dense<T>,
    vars: Vec<Var<T>>,
    z_max: T,
}

impl<T: Scalar> Problem<T> {
    fn slack(&self, x: &[T]) -> Dense<T> {
        let mut s = self.w_mat.clone();
        for (v, &xv) in self.vars.iter().zip(x) {
            for &(r, c) in &v.d_s {
                s[(r, c)] -= xv;
            }
        }
        s
    }

    fn objective(&self, x: &[T]) -> T {
        self.vars
            .iter()
            .zip(x)
            .fold(T::zero(), |acc, (v, &xv)| acc + v.b * xv)
    }

    /// Barrier value `t b^T x + log det S + sum log z`, or `None` outside the
    /// interior.
    fn barrier(&self, x: &[T], t: T) -> Option<(T, Dense<T>)> {
        let mut phi = t * self.objective(x);
        for (v, &xv) in self.vars.iter().zip(x) {
            if v.positive {
                if !(xv > T::zero() && xv < self.z_max) {
                    return None;
                }
                phi += xv.ln() + (self.z_max - xv).ln();
            }
        }
        let ch = self.slack(x).cholesky()?;
        phi += ch.log_det();
        phi.is_finite().then(|| (phi, ch.inverse()))
    }

    /// Gradient and negated Hessian of the barrier at `x`; `xs = S^-1`.
    fn newton_system(&self, x: &[T], t: T, xs: &Dense<T>) -> (Vec<T>, Dense<T>) {
        let nv = self.vars.len();
        let mut g = vec![T::zero(); nv];
        let mut h = Dense::zeros(nv);
        for (k, v) in self.vars.iter().enumerate() {
            // dS/dx_k = -sum e_r e_c^T
            let mut gk = t * v.b;
            for &(r, c) in &v.d_s {
                gk -= xs[(c, r)];
            }
            if v.positive {
                gk += T::one() / x[k] - T::one() / (self.z_max - x[k]);
            }
            g[k] = gk;
            for (l, u) in self.vars.iter().enumerate().skip(k) {
                let mut hkl = T::zero();
                for &(r1, c1) in &v.d_s {
                    for &(r2, c2) in &u.d_s {
                        hkl += xs[(c1, r2)] * xs[(c2, r1)];
                    }
                }
                if k == l && v.positive {
                    let u = self.z_max - x[k];
                    hkl += T::one() / (x[k] * x[k]) + T::one() / (u * u);
                }
                h[(k, l)] = hkl;
                h[(l, k)] = hkl;
            }
        }
        (g, h)
    }
}

/// Cholesky factor of `h`, adding the smallest multiple of the identity
/// (relative to the diagonal) that makes it numerically definite. Deep in
/// the barrier path the Hessian is dominated by a near rank-one `S^-1`; the
/// shifted system still gives an ascent direction.
fn regularized_cholesky<T: Scalar>(mut h: Dense<T>) -> Option<crate::linalg::Cholesky<T>> {
    if let Some(c) = h.cholesky() {
        return Some(c);
    }
    let n = h.dim();
    let scale = (0..n).fold(T::zero(), |m, i| m.max(h[(i, i)].abs()));
    let mut mu = scale * T::epsilon() * T::lit(16.0);
    let mut added = T::zero();
    for _ in 0..30 {
        for i in 0..n {
            h[(i, i)] += mu - added;
        }
        added = mu;
        if let Some(c) = h.cholesky() {
            return Some(c);
        }
        mu *= T::lit(10.0);
    }
    None
}

fn admissibility_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon().sqrt())
}

fn check_bounds<T: Scalar>(b: &DensityElementBounds<T>) -> Result<(), CertifyError> {
    let tol = admissibility_tolerance::<T>();
    if !b.p.iter().chain(b.l.iter()).all(|x| x.is_finite()) {
        return Err(CertifyError::Infeasible("non-finite bound".into()));
    }
    if let Some(i) = b.p.iter().position(|&x| x < -tol) {
        return Err(CertifyError::Infeasible(format!("p_{i} is negative")));
    }
    let sum = b.p.iter().fold(T::zero(), |s, &x| s + x);
    if sum > T::one() + tol {
        return Err(CertifyError::Infeasible(format!(
            "diagonal sums to {:?} > 1",
            sum
        )));
    }
    for i in 0..DIM - 1 {
        let cap = (b.p[i].max(T::zero()) * b.p[i + 1].max(T::zero())).sqrt();
        if b.l[i] > cap + tol {
            return Err(CertifyError::Infeasible(format!(
                "L_{i} = {:?} exceeds sqrt(p_{i} p_{}) = {:?}",
                b.l[i],
                i + 1,
                cap
            )));
        }
    }
    Ok(())
}

/// Minimum of `1/4 sum_ij M_ij` over real symmetric PSD `M` with
/// `M_ii = p_i` and `M_{i,i+1} >= L_i` (i = 0..2), as a certified lower bound.
/// `L_3` is ignored.
pub fn fidelity_lower_bound_sdp<T: Scalar>(
    bounds: &DensityElementBounds<T>,
) -> Result<SdpBound<T>, CertifyError> {
    check_bounds(bounds)?;
    let active: Vec<usize> = (0..DIM).filter(|&i| bounds.p[i] > T::zero()).collect();
    let n = active.len();
    let mut completion = [[T::zero(); DIM]; DIM];
    if n == 0 {
        return Ok(SdpBound {
            value: T::zero(),
            gap: T::zero(),
            completion,
            iterations: 0,
            converged: true,
        });
    }
    let w: Vec<T> = active.iter().map(|&i| bounds.p[i].sqrt()).collect();
    let quarter = T::lit(0.25);
    let mut w_mat = Dense::zeros(n);
    for a in 0..n {
        for c in 0..n {
            w_mat[(a, c)] = quarter * w[a] * w[c];
        }
    }

    let mut vars: Vec<Var<T>> = (0..n)
        .map(|a| Var {
            b: T::one(),
            d_s: vec![(a, a)],
            positive: false,
        })
        .collect();
    for a in 0..n.saturating_sub(1) {
        if active[a + 1] != active[a] + 1 {
            continue;
        }
        let ell = (bounds.l[active[a]] / (w[a] * w[a + 1])).min(T::one());
        if ell <= -T::one() {
            // implied by positivity
            continue;
        }
        vars.push(Var {
            b: T::lit(2.0) * ell,
            d_s: vec![(a, a + 1), (a + 1, a)],
            positive: true,
        });
    }
    let problem = Problem {
        w_mat,
        vars,
        z_max: T::lit(Z_MAX),
    };
    let nv = problem.vars.len();
    let edges = nv - n;

    // Strictly feasible start: unit edge multipliers, diagonal dominance.
    let mut x = vec![T::zero(); nv];
    for (k, v) in problem.vars.iter().enumerate() {
        if v.positive {
            x[k] = T::one();
        }
    }
    for a in 0..n {
        let row: T = (0..n).fold(T::zero(), |s, c| s + problem.w_mat[(a, c)].abs());
        x[a] = -(T::lit(3.0) + row);
    }

    let tol = T::solver_tolerance();
    let barrier_params = T::from_count((n + 2 * edges) as u64);
    let mut t = barrier_params;
    let mut iterations = 0u32;
    let mut converged = false;
    let mut stalled = false;
    let (mut phi, mut xs) = problem
        .barrier(&x, t)
        .expect("diagonally dominant start is interior");
    'stages: for _ in 0..MAX_STAGES {
        for _ in 0..MAX_NEWTON_PER_STAGE {
            let (g, h) = problem.newton_system(&x, t, &xs);
            let Some(ch) = regularized_cholesky(h) else {
                stalled = true;
                break 'stages;
            };
            let d = ch.solve(&g);
            let decrement = g.iter().zip(&d).fold(T::zero(), |s, (&a, &b)| s + a * b);
            if decrement <= T::lit(1e-10) {
                break;
            }
            iterations += 1;
            let mut alpha = T::one();
            let accepted = loop {
                let trial: Vec<T> = x.iter().zip(&d).map(|(&xi, &di)| xi + alpha * di).collect();
                if let Some((phi_t, xs_t)) = problem.barrier(&trial, t) {
                    if phi_t >= phi + T::lit(0.01) * alpha * decrement {
                        break Some((trial, phi_t, xs_t));
                    }
                }
                alpha *= T::lit(0.5);
                if alpha < T::lit(1e-12) {
                    break None;
                }
            };
            match accepted {
                Some((trial, phi_t, xs_t)) => {
                    x = trial;
                    phi = phi_t;
                    xs = xs_t;
                }
                // Rounding in the barrier value hides any further gain. Close
                // to the central path that only ends the stage.
                None if decrement < T::lit(1e-2) => break,
                None => {
                    stalled = true;
                    break 'stages;
                }
            }
        }
        if barrier_params / t <= tol {
            converged = true;
            break;
        }
        t *= T::lit(BARRIER_GROWTH);
        match problem.barrier(&x, t) {
            Some((p, s)) => {
                phi = p;
                xs = s;
            }
            None => break,
        }
    }
    if stalled {
        // The last accepted iterate is still strictly feasible.
        t = t.max(T::one());
        converged = barrier_params / t <= T::lit(100.0) * tol;
    }

    for a in 0..n {
        for c in 0..n {
            completion[active[a]][active[c]] = w[a] * w[c] * xs[(a, c)] / t;
        }
    }
    Ok(SdpBound {
        value: problem.objective(&x).max(T::zero()),
        gap: barrier_params / t,
        completion,
        iterations,
        converged,
    })
}
