//! Nonnegative l1 minimization under a residual-norm budget:
//!
//! ```text
//! minimize    Σ_k s_k
//! subject to  ‖F s + σ² w − r‖₂ ≤ ε_d,   s ≥ 0,   σ² ≥ 0
//! ```
//!
//! With `ε_d = 0` the constraint becomes the linear system `F s + σ² w = r`,
//! which is reduced to its row space before solving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ipm::{solve, ConeProgram, Equality, LinearBlock, SocBlock, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocpProblem {
    /// Dictionary, one column per candidate spike.
    pub f_est: DMatrix<C64>,
    pub r: Vec<C64>,
    /// Noise direction; `None` drops the noise-power variable.
    pub w: Option<Vec<C64>>,
    pub epsilon_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocpSolution {
    /// Amplitudes; nonnegative for [`solve_l1_socp`], signed for
    /// [`solve_l1_socp_signed`].
    pub s0: Vec<f64>,
    /// 0 when the problem has no noise direction.
    pub sigma2: f64,
    /// `‖F s₀ + σ² w − r‖₂`
    pub residual: f64,
    /// `‖s₀‖₁`
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl SocpProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.r.len();
        if self.f_est.ncols() == 0 {
            return Err(Error::InvalidArgument("dictionary has no columns".into()));
        }
        if self.f_est.nrows() != n {
            return Err(Error::InvalidArgument(format!(
                "dictionary has {} rows, measurement has {n}",
                self.f_est.nrows()
            )));
        }
        if let Some(w) = &self.w {
            if w.len() != n {
                return Err(Error::InvalidArgument("w and r differ in length".into()));
            }
        }
        if !(self.epsilon_d >= 0.0 && self.epsilon_d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon_d = {} must be finite and nonnegative",
                self.epsilon_d
            )));
        }
        Ok(())
    }

    /// `‖F s + σ² w − r‖₂`
    pub fn residual_norm(&self, s: &[f64], sigma2: f64) -> f64 {
        (0..self.r.len())
            .map(|i| {
                let mut v = -self.r[i];
                for (k, &sk) in s.iter().enumerate() {
                    v += self.f_est[(i, k)] * sk;
                }
                if let Some(w) = &self.w {
                    v += w[i] * sigma2;
                }
                v.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Real form `B y ≈ b` with every variable nonnegative and cost `cost`.
struct RealForm {
    b_mat: DMatrix<f64>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
}

fn pack(v: &[C64]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

fn real_form(p: &SocpProblem, signed: bool) -> RealForm {
    let n = p.r.len();
    let k = p.f_est.ncols();
    let amp_cols = if signed { 2 * k } else { k };
    let m = amp_cols + usize::from(p.w.is_some());
    let mut b_mat = DMatrix::zeros(2 * n, m);
    for i in 0..n {
        for j in 0..k {
            let f = p.f_est[(i, j)];
            b_mat[(2 * i, j)] = f.re;
            b_mat[(2 * i + 1, j)] = f.im;
            if signed {
                b_mat[(2 * i, k + j)] = -f.re;
                b_mat[(2 * i + 1, k + j)] = -f.im;
            }
        }
        if let Some(w) = &p.w {
            b_mat[(2 * i, amp_cols)] = w[i].re;
            b_mat[(2 * i + 1, amp_cols)] = w[i].im;
        }
    }
    let mut cost = vec![1.0; amp_cols];
    if p.w.is_some() {
        cost.push(0.0);
    }
    RealForm {
        b_mat,
        rhs: pack(&p.r),
        cost,
    }
}

fn nonneg_rows(m: usize) -> LinearBlock {
    let mut lin = LinearBlock::default();
    for j in 0..m {
        lin.push(vec![(j, -1.0)], 0.0);
    }
    lin
}

fn options(tol: f64) -> SolverOptions {
    SolverOptions {
        feastol: tol,
        abstol: tol,
        reltol: tol,
        ..SolverOptions::default()
    }
}

/// `min ‖B y − b‖₂` over `y ≥ 0`.
fn min_residual(f: &RealForm, tol: f64) -> Result<(Vec<f64>, f64)> {
    let (rows, m) = f.b_mat.shape();
    let mut g = DMatrix::zeros(rows + 1, m + 1);
    g[(0, m)] = -1.0;
    g.view_mut((1, 0), (rows, m)).copy_from(&f.b_mat);
    let mut h = vec![0.0];
    h.extend_from_slice(&f.rhs);
    let mut c = vec![0.0; m + 1];
    c[m] = 1.0;
    let prog = ConeProgram {
        c,
        lin: nonneg_rows(m),
        soc: vec![SocBlock { g, h }],
        psd: vec![],
        eq: None,
    };
    let sol = solve(&prog, &options(tol))?;
    let y: Vec<f64> = sol.x[..m].iter().map(|v| v.max(0.0)).collect();
    let res = (&f.b_mat * DVector::from_column_slice(&y) - DVector::from_column_slice(&f.rhs)).norm();
    Ok((y, res))
}

/// Either the solution vector or an infeasibility/solver error.
fn solve_real(f: &RealForm, eps: f64, tol: f64) -> Result<(Vec<f64>, SolveStatus, usize)> {
    let (rows, m) = f.b_mat.shape();
    let rhs_norm = f.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm <= eps {
        return Ok((vec![0.0; m], SolveStatus::Optimal, 0));
    }

    let prog = if eps > 0.0 {
        let mut g = DMatrix::zeros(rows + 1, m);
        g.view_mut((1, 0), (rows, m)).copy_from(&f.b_mat);
        let mut h = vec![eps];
        h.extend_from_slice(&f.rhs);
        ConeProgram {
            c: f.cost.clone(),
            lin: nonneg_rows(m),
            soc: vec![SocBlock { g, h }],
            psd: vec![],
            eq: None,
        }
    } else {
        match reduce_equalities(f, tol)? {
            Reduced::Unique(y) => return Ok((y, SolveStatus::Optimal, 0)),
            Reduced::System(eq) => ConeProgram {
                c: f.cost.clone(),
                lin: nonneg_rows(m),
                soc: vec![],
                psd: vec![],
                eq: Some(eq),
            },
        }
    };

    let sol = solve(&prog, &options(tol))?;
    if sol.status == SolveStatus::Optimal || sol.within(100.0 * tol) {
        return Ok((sol.x, sol.status, sol.iterations));
    }
    let (_, min_res) = min_residual(f, tol)?;
    let slack = 1e3 * tol * rhs_norm.max(1.0);
    if min_res > eps + slack {
        return Err(Error::Infeasible {
            budget: eps,
            min_residual: min_res,
        });
    }
    if eps == 0.0 {
        // A unique nonnegative solution leaves the equality form without an
        // interior; a budget at solver precision restores one.
        return solve_real(f, (2.0 * min_res).max(tol * rhs_norm.max(1.0)).min(slack), tol);
    }
    Err(Error::SolverFailure {
        status: sol.status,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
    })
}

enum Reduced {
    Unique(Vec<f64>),
    System(Equality),
}

/// Check `B y = b` for consistency and nonnegative solvability, then keep a
/// full-row-rank equivalent system.
fn reduce_equalities(f: &RealForm, tol: f64) -> Result<Reduced> {
    let m = f.b_mat.ncols();
    let svd = f.b_mat.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let smax = svd.singular_values.max();
    let rank_tol = 1e-10 * smax.max(1e-300) * (f.b_mat.nrows().max(m) as f64);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rank_tol)
        .collect();
    let b = DVector::from_column_slice(&f.rhs);
    let bnorm = b.norm().max(1.0);

    let mut proj = DVector::zeros(b.len());
    for &i in &keep {
        let ui = u.column(i);
        proj += ui * ui.dot(&b);
    }
    let inconsistency = (&b - &proj).norm();
    let infeasible = |min_residual: f64| Error::Infeasible {
        budget: 0.0,
        min_residual,
    };
    if inconsistency > 1e-9 * bnorm {
        let (_, res) = min_residual(f, tol)?;
        return Err(infeasible(res.max(inconsistency)));
    }

    if keep.len() == m {
        let mut y = DVector::zeros(m);
        for &i in &keep {
            y += vt.row(i).transpose() * (u.column(i).dot(&b) / svd.singular_values[i]);
        }
        if y.iter().all(|&v| v >= -1e-9 * bnorm) {
            return Ok(Reduced::Unique(y.iter().map(|v| v.max(0.0)).collect()));
        }
        let (_, res) = min_residual(f, tol)?;
        return Err(infeasible(res));
    }

    let a = DMatrix::from_fn(keep.len(), m, |r, c| vt[(keep[r], c)] * svd.singular_values[keep[r]]);
    let rhs = keep.iter().map(|&i| u.column(i).dot(&b)).collect();
    Ok(Reduced::System(Equality { a, b: rhs }))
}

fn finish(p: &SocpProblem, y: &[f64], signed: bool, status: SolveStatus, iterations: usize) -> SocpSolution {
    let k = p.f_est.ncols();
    let s0: Vec<f64> = if signed {
        (0..k).map(|j| y[j] - y[k + j]).collect()
    } else {
        y[..k].iter().map(|v| v.max(0.0)).collect()
    };
    let amp_cols = if signed { 2 * k } else { k };
    let sigma2 = if p.w.is_some() { y[amp_cols].max(0.0) } else { 0.0 };
    SocpSolution {
        residual: p.residual_norm(&s0, sigma2),
        objective: s0.iter().map(|v| v.abs()).sum(),
        s0,
        sigma2,
        status,
        iterations,
    }
}

/// Nonnegative amplitudes.
pub fn solve_l1_socp(p: &SocpProblem, tol: f64) -> Result<SocpSolution> {
    p.validate()?;
    let f = real_form(p, false);
    let (y, status, it) = solve_real(&f, p.epsilon_d, tol)?;
    Ok(finish(p, &y, false, status, it))
}

/// Signed amplitudes via `s = s⁺ − s⁻`; the noise power stays nonnegative.
pub fn solve_l1_socp_signed(p: &SocpProblem, tol: f64) -> Result<SocpSolution> {
    p.validate()?;
    let f = real_form(p, true);
    let (y, status, it) = solve_real(&f, p.epsilon_d, tol)?;
    Ok(finish(p, &y, true, status, it))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn atoms(fc: usize, taus: &[f64]) -> DMatrix<C64> {
        let fc = fc as i64;
        DMatrix::from_fn((2 * fc + 1) as usize, taus.len(), |i, k| {
            C64::from_polar(1.0, -2.0 * PI * (i as i64 - fc) as f64 * taus[k])
        })
    }

    fn lag0(fc: usize) -> Vec<C64> {
        let mut w = vec![C64::new(0.0, 0.0); 2 * fc + 1];
        w[fc] = C64::new(1.0, 0.0);
        w
    }

    fn combine(f: &DMatrix<C64>, s: &[f64]) -> Vec<C64> {
        (0..f.nrows())
            .map(|i| (0..f.ncols()).map(|k| f[(i, k)] * s[k]).sum())
            .collect()
    }

    #[test]
    fn single_column_exact() {
        let f = atoms(17, &[0.3]);
        let r = combine(&f, &[1.7]);
        let p = SocpProblem {
            f_est: f,
            r,
            w: Some(lag0(17)),
            epsilon_d: 0.0,
        };
        let sol = solve_l1_socp(&p, 1e-9).unwrap();
        assert!((sol.s0[0] - 1.7).abs() < 1e-9);
        assert!(sol.sigma2.abs() < 1e-9);
        assert!(sol.residual < 1e-9);
    }

    #[test]
    fn noise_only() {
        let f = atoms(17, &[0.1, 0.4, 0.77]);
        let r: Vec<C64> = lag0(17).iter().map(|v| v * 0.8).collect();
        let p = SocpProblem {
            f_est: f,
            r,
            w: Some(lag0(17)),
            epsilon_d: 0.0,
        };
        let sol = solve_l1_socp(&p, 1e-9).unwrap();
        assert!(sol.s0.iter().all(|v| v.abs() < 1e-8), "{:?}", sol.s0);
        assert!((sol.sigma2 - 0.8).abs() < 1e-8);
    }

    #[test]
    fn spurious_columns_get_zero() {
        let f = atoms(17, &[0.1, 0.2, 0.5, 0.52, 0.9]);
        let truth = [1.0, 0.0, 2.0, 0.0, 0.5];
        let r = combine(&f, &truth);
        let p = SocpProblem {
            f_est: f,
            r,
            w: Some(lag0(17)),
            epsilon_d: 0.0,
        };
        let sol = solve_l1_socp(&p, 1e-9).unwrap();
        for (a, b) in sol.s0.iter().zip(truth) {
            assert!((a - b).abs() < 1e-7, "{:?}", sol.s0);
        }
    }

    #[test]
    fn budget_constraint_active() {
        let fc = 7;
        let f = atoms(fc, &[0.25, 0.6]);
        let r = combine(&f, &[2.0, 1.0]);
        let eps = 0.5;
        let p = SocpProblem {
            f_est: f,
            r,
            w: None,
            epsilon_d: eps,
        };
        let sol = solve_l1_socp(&p, 1e-9).unwrap();
        assert!(sol.residual <= eps + 1e-7);
        assert!((sol.residual - eps).abs() < 1e-5);
        // shrinkage reduces the l1 norm below the exact fit
        assert!(sol.objective < 3.0);
    }

    #[test]
    fn zero_is_feasible_when_budget_exceeds_signal() {
        let f = atoms(3, &[0.25]);
        let r = combine(&f, &[0.1]);
        let p = SocpProblem {
            f_est: f,
            r,
            w: None,
            epsilon_d: 10.0,
        };
        let sol = solve_l1_socp(&p, 1e-9).unwrap();
        assert_eq!(sol.s0, vec![0.0]);
    }

    #[test]
    fn infeasible_budget_reports_min_residual() {
        let f = atoms(5, &[0.25]);
        // negative amplitude cannot be matched by s >= 0
        let r = combine(&f, &[-1.0]);
        let p = SocpProblem {
            f_est: f.clone(),
            r: r.clone(),
            w: None,
            epsilon_d: 0.0,
        };
        match solve_l1_socp(&p, 1e-9) {
            Err(Error::Infeasible { min_residual, .. }) => {
                assert!((min_residual - 11f64.sqrt()).abs() < 1e-5, "{min_residual}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        let p = SocpProblem {
            epsilon_d: 1.0,
            ..p
        };
        assert!(matches!(solve_l1_socp(&p, 1e-9), Err(Error::Infeasible { .. })));

        let signed = SocpProblem {
            f_est: f,
            r,
            w: None,
            epsilon_d: 0.0,
        };
        let sol = solve_l1_socp_signed(&signed, 1e-9).unwrap();
        assert!((sol.s0[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_empty_dictionary() {
        let p = SocpProblem {
            f_est: DMatrix::zeros(3, 0),
            r: vec![C64::new(0.0, 0.0); 3],
            w: None,
            epsilon_d: 0.0,
        };
        assert!(solve_l1_socp(&p, 1e-7).is_err());
    }
}
