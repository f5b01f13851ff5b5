//! Dense convex QP: `min ½ xᵀHx + cᵀx  s.t.  Gx ≤ h` with `H ⪰ 0`.
//!
//! Mehrotra predictor-corrector interior point, followed by a polish step
//! that re-solves the KKT system on the identified active set. The polished
//! point is kept only when it is primal and dual feasible and improves the
//! KKT residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Primal solution and constraint multipliers of one KKT solve.
type PrimalDual = (DVector<f64>, DVector<f64>);

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol_stationarity: f64,
    pub tol_feasibility: f64,
    pub tol_gap: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_stationarity: 1e-9,
            tol_feasibility: 1e-10,
            tol_gap: 1e-11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub polished: bool,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, c: DVector<f64>, g: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = c.len();
        if h.nrows() != n || h.ncols() != n || g.ncols() != n || g.nrows() != b.len() {
            return Err(Error::domain("inconsistent QP dimensions"));
        }
        Ok(Self { h, c, g, b })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// Max-norm of stationarity and of the natural complementarity residual
    /// `min(s, z)`, which also measures primal and dual infeasibility.
    pub fn kkt_residual(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let stat = (&self.h * x + &self.c + self.g.transpose() * z).amax();
        let slack = &self.b - &self.g * x;
        slack
            .iter()
            .zip(z.iter())
            .fold(stat, |worst, (s, zi)| worst.max(s.min(*zi).abs()))
    }

    pub fn solve(&self) -> Result<QpSolution> {
        self.solve_with(&QpOptions::default())
    }

    pub fn solve_with(&self, opts: &QpOptions) -> Result<QpSolution> {
        let m = self.b.len();
        let gt = self.g.transpose();
        let (mut x, mut s, mut z) = self.starting_point();
        let mut iterations = 0;
        let scale_d = 1.0 + self.c.amax();
        let scale_p = 1.0 + self.b.amax();
        let mut best_iterate = (x.clone(), s.clone(), z.clone(), f64::INFINITY);
        let mut since_best = 0;

        if m > 0 {
            loop {
                let rd = &self.h * &x + &self.c + &gt * &z;
                let rp = &self.g * &x + &s - &self.b;
                let mu = s.dot(&z) / m as f64;
                let r = self.kkt_residual(&x, &z);
                if r < best_iterate.3 {
                    best_iterate = (x.clone(), s.clone(), z.clone(), r);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                // weakly active constraints converge in the natural residual
                // only as sqrt(mu), so it is part of the stopping rule
                if rd.amax() <= opts.tol_stationarity * scale_d
                    && rp.amax() <= opts.tol_feasibility * scale_p
                    && mu <= opts.tol_gap * scale_d
                    && r <= opts.tol_stationarity * scale_d
                {
                    break;
                }
                // past the gap tolerance the normal equations lose accuracy
                // and further steps only wander
                let stalled = since_best >= 5 && mu <= opts.tol_gap * scale_d;
                if iterations >= opts.max_iter || mu < 1e-30 * scale_d || stalled {
                    break;
                }
                iterations += 1;

                let w = z.component_div(&s);
                let mut normal = self.h.clone();
                for i in 0..m {
                    let row = self.g.row(i);
                    normal += row.transpose() * row * w[i];
                }
                let factor = Factor::new(normal);

                let direction = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
                    let rc_over_s = rc.component_div(&s);
                    let rhs = -&rd - &gt * (w.component_mul(&rp) - &rc_over_s);
                    let dx = factor.solve(&rhs)?;
                    let dz = w.component_mul(&(&self.g * &dx + &rp)) - rc_over_s;
                    let ds = -(rc + s.component_mul(&dz)).component_div(&z);
                    Some((dx, ds, dz))
                };

                let rc_aff = s.component_mul(&z);
                let Some((_, ds_a, dz_a)) = direction(&rc_aff) else {
                    return Err(Error::numerical("singular normal equations", rd.amax()));
                };
                let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
                let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
                let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
                let rc = rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
                let Some((dx, ds, dz)) = direction(&rc) else {
                    return Err(Error::numerical("singular normal equations", rd.amax()));
                };
                let step = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
                x += &dx * step;
                s += &ds * step;
                z += &dz * step;
            }
        } else {
            let factor = Factor::new(self.h.clone());
            x = factor
                .solve(&(-&self.c))
                .ok_or_else(|| Error::numerical("unconstrained QP is not strictly convex", f64::NAN))?;
        }

        let mut polished = false;
        let (best, residual) = if m > 0 {
            let (bx, bs, bz, br) = best_iterate;
            let candidates = [self.polish(&s, &z), self.polish(&bs, &bz)];
            let mut best = ((bx, bz), br);
            for (px, pz) in candidates.into_iter().flatten() {
                let r = self.kkt_residual(&px, &pz);
                if r < best.1 {
                    best = ((px, pz), r);
                    polished = true;
                }
            }
            best
        } else {
            let r = self.kkt_residual(&x, &z);
            ((x, z), r)
        };
        if !residual.is_finite() || residual > 1e-6 {
            return Err(Error::numerical("QP did not converge", residual));
        }
        let objective = self.objective(&best.0);
        Ok(QpSolution {
            x: best.0,
            multipliers: best.1,
            objective,
            iterations,
            kkt_residual: residual,
            polished,
        })
    }

    /// Least-squares start `min ½xᵀHx + cᵀx + ½‖Gx - b‖²` with the slacks and
    /// multipliers shifted into the positive orthant.
    fn starting_point(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.c.len();
        let m = self.b.len();
        let gt = self.g.transpose();
        let normal = &self.h + &gt * &self.g;
        let x = Factor::new(normal)
            .solve(&(&gt * &self.b - &self.c))
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| DVector::zeros(n));
        if m == 0 {
            return (x, DVector::zeros(0), DVector::zeros(0));
        }
        let r = &self.b - &self.g * &x;
        let shift = |v: DVector<f64>| {
            let lo = v.min();
            if lo < 0.0 {
                v.add_scalar(1.0 - lo)
            } else {
                v.add_scalar(1.0)
            }
        };
        let s = shift(r.clone());
        let z = shift(-r);
        (x, s, z)
    }

    /// Re-solves the KKT system with the constraints where `z > s` held as
    /// equalities, then corrects the guess with active-set moves.
    fn polish(&self, s: &DVector<f64>, z: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let by_ratio: Vec<usize> = (0..s.len()).filter(|&i| z[i] > s[i]).collect();
        // constraints with both s and z small are ambiguous; also try them all as active
        let tiny = 1e-6 * (1.0 + s.amax());
        let loose: Vec<usize> = (0..s.len()).filter(|&i| z[i] > s[i] || s[i] < tiny).collect();
        let mut best: Option<(PrimalDual, f64)> = None;
        for mut active in [by_ratio, loose] {
            active.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
            if let Some((px, pz)) = self.refine_active(active) {
                let r = self.kkt_residual(&px, &pz);
                if best.as_ref().is_none_or(|b| r < b.1) {
                    best = Some(((px, pz), r));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// Primal-dual active-set iterations from an initial guess: add the most
    /// violated inactive row or drop the most negative multiplier until the
    /// equality-constrained solution is primal and dual feasible. Rows are
    /// kept linearly independent, earlier rows taking priority.
    fn refine_active(&self, active: Vec<usize>) -> Option<(DVector<f64>, DVector<f64>)> {
        let m = self.b.len();
        let tol_p = 1e-10 * (1.0 + self.b.amax());
        let tol_d = 1e-10 * (1.0 + self.c.amax());
        let mut active = self.independent_rows(&active);
        for _ in 0..(2 * m + 4) {
            let (px, pz) = self.solve_active(&active)?;
            let slack = &self.b - &self.g * &px;
            let violated = (0..m)
                .filter(|i| !active.contains(i) && slack[*i] < -tol_p)
                .min_by(|&a, &b| slack[a].total_cmp(&slack[b]));
            if let Some(i) = violated {
                let mut grown = active.clone();
                grown.push(i);
                let kept = self.independent_rows(&grown);
                if kept.len() == active.len() {
                    // dependent on the current rows: the guess cannot be repaired
                    return None;
                }
                active = kept;
                continue;
            }
            let negative = (0..active.len())
                .filter(|&r| pz[active[r]] < -tol_d)
                .min_by(|&a, &b| pz[active[a]].total_cmp(&pz[active[b]]));
            if let Some(r) = negative {
                active.remove(r);
                continue;
            }
            return Some((px, pz.map(|v| v.max(0.0))));
        }
        None
    }

    /// Greedy Gram-Schmidt selection of linearly independent rows of `G`.
    fn independent_rows(&self, order: &[usize]) -> Vec<usize> {
        let n = self.c.len();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut keep = Vec::new();
        for &i in order {
            let row = self.g.row(i).transpose();
            let norm = row.norm();
            if norm == 0.0 {
                continue;
            }
            let mut v = row.clone();
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dot(&v);
                    v -= q * proj;
                }
            }
            let r = v.norm();
            if r > 1e-9 * norm && basis.len() < n {
                basis.push(v / r);
                keep.push(i);
            }
        }
        keep
    }

    /// KKT solution with the rows in `active` held as equalities.
    fn solve_active(&self, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.c.len();
        let m = self.b.len();
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.c));
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.g[(i, j)];
                kkt[(j, n + r)] = self.g[(i, j)];
            }
            rhs[n + r] = self.b[i];
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let px = sol.rows(0, n).into_owned();
        let mut pz = DVector::zeros(m);
        for (r, &i) in active.iter().enumerate() {
            pz[i] = sol[n + r];
        }
        Some((px, pz))
    }
}

/// Cholesky with an LU fallback for semidefinite normal matrices.
enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(m: DMatrix<f64>) -> Self {
        match m.clone().cholesky() {
            Some(c) => Factor::Chol(c),
            None => {
                let n = m.nrows();
                let scale = m.amax().max(1.0);
                let reg = m + DMatrix::identity(n, n) * (1e-13 * scale);
                match reg.clone().cholesky() {
                    Some(c) => Factor::Chol(c),
                    None => Factor::Lu(reg.lu()),
                }
            }
        }
    }

    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Chol(c) => Some(c.solve(b)),
            Factor::Lu(lu) => lu.solve(b),
        }
    }
}

/// Largest `a ∈ (0, 1]` keeping `v + a dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&vi, &d)| -vi / d)
        .fold(1.0, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_projection() {
        // min (x-3)^2 + (y+1)^2 s.t. 0 <= x,y <= 2  =>  (2, 0)
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let c = DVector::from_vec(vec![-6.0, 2.0]);
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![2.0, 0.0, 2.0, 0.0]);
        let sol = QpProblem::new(h, c, g, b).unwrap().solve().unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-10);
        assert!(sol.x[1].abs() < 1e-10);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn semidefinite_with_linear_penalty() {
        // min x^2 + 100 ξ  s.t. 1 - x <= ξ, ξ >= 0  =>  x = 1, ξ = 0 (since 2x = 2 < 100)
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![0.0, 100.0]);
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, 0.0]);
        let sol = QpProblem::new(h, c, g, b).unwrap().solve().unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!(sol.x[1].abs() < 1e-9);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn contradictory_soft_constraints_split_violation() {
        // min 0.001 x^2 + 1e6 (ξ1 + ξ2)  s.t. x <= -1 + ξ1, -x <= -1 + ξ2
        // any x in [-1, 1] has ξ1 + ξ2 = 2; the quadratic picks x = 0.
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.002, 0.0, 0.0]));
        let c = DVector::from_vec(vec![0.0, 1e6, 1e6]);
        let g = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, -1.0, 0.0, -1.0, 0.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
        );
        let b = DVector::from_vec(vec![-1.0, -1.0, 0.0, 0.0]);
        let sol = QpProblem::new(h, c, g, b).unwrap().solve().unwrap();
        assert!((sol.x[1] + sol.x[2] - 2.0).abs() < 1e-7);
        assert!(sol.x[0].abs() < 1e-4);
    }
}
