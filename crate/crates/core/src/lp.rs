//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min cᵀx  s.t.  A_eq x = b_eq,  A_ub x ≤ b_ub,  x ≥ 0` with Bland's
//! rule, which cannot cycle. Intended for problems with tens of variables:
//! the transport-plan and dual-certificate checks in [`crate::risk`].

use crate::error::{Error, Result};

const EPS: f64 = 1e-11;

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub ub: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new(cost: Vec<f64>) -> Self {
        Self {
            cost,
            ..Default::default()
        }
    }

    pub fn eq(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.eq.push((row, rhs));
        self
    }

    pub fn ub(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.ub.push((row, rhs));
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.cost.len();
        if self.eq.iter().chain(&self.ub).any(|(r, _)| r.len() != n) {
            return Err(Error::domain("constraint row length does not match the cost vector"));
        }
        let n_slack = self.ub.len();
        let m = self.eq.len() + n_slack;
        let n_art = m;
        let width = n + n_slack + n_art + 1;

        // rows: [x | slack | artificial | rhs]
        let mut t = vec![vec![0.0; width]; m];
        for (i, (row, rhs)) in self.eq.iter().chain(&self.ub).enumerate() {
            t[i][..n].copy_from_slice(row);
            if i >= self.eq.len() {
                t[i][n + i - self.eq.len()] = 1.0;
            }
            t[i][width - 1] = *rhs;
            if *rhs < 0.0 {
                t[i].iter_mut().for_each(|v| *v = -*v);
            }
            t[i][n + n_slack + i] = 1.0;
        }
        let mut basis: Vec<usize> = (0..m).map(|i| n + n_slack + i).collect();

        let mut phase1 = vec![0.0; width - 1];
        phase1[n + n_slack..].iter_mut().for_each(|v| *v = 1.0);
        let mut iterations = run_simplex(&mut t, &mut basis, &phase1, width - 1)?;
        let infeas: f64 = basis
            .iter()
            .zip(&t)
            .filter(|(&b, _)| b >= n + n_slack)
            .map(|(_, row)| row[width - 1])
            .sum();
        if infeas > 1e-8 {
            return Err(Error::numerical("linear program is infeasible", infeas));
        }
        // pivot remaining (zero-valued) artificials out of the basis where possible
        for i in 0..m {
            if basis[i] >= n + n_slack {
                if let Some(j) = (0..n + n_slack).find(|&j| t[i][j].abs() > 1e-9) {
                    pivot(&mut t, &mut basis, i, j);
                }
            }
        }
        let mut phase2 = vec![0.0; width - 1];
        phase2[..n].copy_from_slice(&self.cost);
        iterations += run_simplex(&mut t, &mut basis, &phase2, n + n_slack)?;

        let mut x = vec![0.0; n];
        for (i, &b) in basis.iter().enumerate() {
            if b < n {
                x[b] = t[i][width - 1];
            }
        }
        let objective = x.iter().zip(&self.cost).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective,
            iterations,
        })
    }
}

/// Runs simplex iterations with entering columns restricted to `0..allowed`.
fn run_simplex(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) -> Result<usize> {
    let width = t.first().map_or(1, Vec::len);
    let rhs = width - 1;
    for iter in 0..10_000 {
        // reduced costs: c_j - c_Bᵀ B⁻¹ a_j
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = basis.iter().zip(t.iter()).map(|(&b, row)| cost[b] * row[j]).sum();
            cost[j] - z < -EPS
        });
        let Some(j) = entering else {
            return Ok(iter);
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[j] > EPS {
                let ratio = row[rhs] / row[j];
                match leave {
                    Some((li, lr)) if ratio > lr + EPS || (ratio > lr - EPS && basis[i] > basis[li]) => {}
                    _ => leave = Some((i, ratio)),
                }
            }
        }
        let Some((i, _)) = leave else {
            return Err(Error::numerical("linear program is unbounded", f64::INFINITY));
        };
        pivot(t, basis, i, j);
    }
    Err(Error::numerical("simplex iteration limit reached", f64::NAN))
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], i: usize, j: usize) {
    let p = t[i][j];
    t[i].iter_mut().for_each(|v| *v /= p);
    let pivot_row = t[i].clone();
    for (k, row) in t.iter_mut().enumerate() {
        if k != i && row[j] != 0.0 {
            let f = row[j];
            row.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
        }
    }
    basis[i] = j;
}
