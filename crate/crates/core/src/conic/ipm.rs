//! Primal-dual interior-point method for
//!
//! ```text
//! minimize    cᵀx
//! subject to  G x + s = h,  A x = b,  s ∈ K
//! ```
//!
//! with `K` a product of a nonnegative orthant, second-order cones and
//! Hermitian PSD cones. Nesterov–Todd scaling and Mehrotra
//! predictor-corrector steps; the Newton system is reduced to the normal
//! equations `Gᵀ W⁻¹W⁻ᵀ G` and solved by Cholesky.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::cones::{max_step, ConeDims, ConeVec, Scaling};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    /// Step length collapsed before the tolerances were met.
    Stalled,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 200,
            feastol: 1e-7,
            abstol: 1e-7,
            reltol: 1e-7,
        }
    }
}

/// Nonnegative rows `g_rᵀ x + s_r = h_r`, `s_r ≥ 0`, stored sparsely.
#[derive(Debug, Clone, Default)]
pub struct LinearBlock {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub h: Vec<f64>,
}

impl LinearBlock {
    pub fn push(&mut self, row: Vec<(usize, f64)>, h: f64) {
        self.rows.push(row);
        self.h.push(h);
    }
}

/// `G x + s = h` with `s` in one second-order cone; `G` is dense.
#[derive(Debug, Clone)]
pub struct SocBlock {
    pub g: DMatrix<f64>,
    pub h: Vec<f64>,
}

/// `Σ_j x_j G_j + S = H` with `S` Hermitian PSD. Each `G_j` is a list of
/// `(row, col, value)` entries covering both triangles.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub size: usize,
    pub cols: Vec<Vec<(usize, usize, C64)>>,
    pub h: DMatrix<C64>,
}

impl PsdBlock {
    pub fn new(size: usize, num_vars: usize) -> Self {
        PsdBlock {
            size,
            cols: vec![Vec::new(); num_vars],
            h: DMatrix::zeros(size, size),
        }
    }

    /// Add `val` at `(i, j)` and its conjugate at `(j, i)`.
    pub fn add_hermitian(&mut self, var: usize, i: usize, j: usize, val: C64) {
        if i == j {
            self.cols[var].push((i, i, C64::new(val.re, 0.0)));
        } else {
            self.cols[var].push((i, j, val));
            self.cols[var].push((j, i, val.conj()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct Equality {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConeProgram {
    pub c: Vec<f64>,
    pub lin: LinearBlock,
    pub soc: Vec<SocBlock>,
    pub psd: Vec<PsdBlock>,
    pub eq: Option<Equality>,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: ConeVec,
    pub z: ConeVec,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Relative primal infeasibility.
    pub primal_residual: f64,
    /// Relative dual infeasibility.
    pub dual_residual: f64,
    /// `sᵀz`
    pub gap: f64,
}

impl ConeSolution {
    pub fn relative_gap(&self) -> f64 {
        let scale = self.primal_objective.abs().max(self.dual_objective.abs());
        if scale > 0.0 {
            self.gap / scale
        } else {
            f64::INFINITY
        }
    }

    /// Residuals and gap within `tol` regardless of the reported status.
    pub fn within(&self, tol: f64) -> bool {
        self.primal_residual <= tol
            && self.dual_residual <= tol
            && (self.gap <= tol || self.relative_gap() <= tol)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ConeProgram {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn dims(&self) -> ConeDims {
        ConeDims {
            lin: self.lin.rows.len(),
            soc: self.soc.iter().map(|b| b.h.len()).collect(),
            psd: self.psd.iter().map(|b| b.size).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.lin.rows.len() != self.lin.h.len() {
            return bad("linear block: rows and h differ in length".into());
        }
        if self.lin.rows.iter().flatten().any(|&(j, _)| j >= n) {
            return bad("linear block references unknown variable".into());
        }
        for b in &self.soc {
            if b.h.is_empty() || b.g.nrows() != b.h.len() || b.g.ncols() != n {
                return bad("second-order block has inconsistent shape".into());
            }
        }
        for b in &self.psd {
            if b.cols.len() != n || b.h.nrows() != b.size || b.h.ncols() != b.size {
                return bad("PSD block has inconsistent shape".into());
            }
            if b.cols.iter().flatten().any(|&(i, j, _)| i >= b.size || j >= b.size) {
                return bad("PSD entry out of range".into());
            }
        }
        if let Some(eq) = &self.eq {
            if eq.a.ncols() != n || eq.a.nrows() != eq.b.len() {
                return bad("equality block has inconsistent shape".into());
            }
        }
        if self.dims().degree() == 0 {
            return bad("program has no cone constraints".into());
        }
        Ok(())
    }

    fn h_vec(&self) -> ConeVec {
        ConeVec {
            lin: self.lin.h.clone(),
            soc: self.soc.iter().map(|b| b.h.clone()).collect(),
            psd: self.psd.iter().map(|b| b.h.clone()).collect(),
        }
    }

    fn b_vec(&self) -> Vec<f64> {
        self.eq.as_ref().map(|e| e.b.clone()).unwrap_or_default()
    }

    pub fn g_mul(&self, x: &[f64]) -> ConeVec {
        let lin = self
            .lin
            .rows
            .iter()
            .map(|row| row.iter().map(|&(j, g)| g * x[j]).sum())
            .collect();
        let xv = DVector::from_column_slice(x);
        let soc = self
            .soc
            .iter()
            .map(|b| (&b.g * &xv).iter().copied().collect())
            .collect();
        let psd = self
            .psd
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.size, b.size);
                for (col, &xj) in b.cols.iter().zip(x) {
                    if xj == 0.0 {
                        continue;
                    }
                    for &(i, k, g) in col {
                        m[(i, k)] += g * xj;
                    }
                }
                m
            })
            .collect();
        ConeVec { lin, soc, psd }
    }

    pub fn gt_mul(&self, z: &ConeVec) -> Vec<f64> {
        let n = self.num_vars();
        let mut out = vec![0.0; n];
        for (row, &zr) in self.lin.rows.iter().zip(&z.lin) {
            for &(j, g) in row {
                out[j] += g * zr;
            }
        }
        for (b, zs) in self.soc.iter().zip(&z.soc) {
            let zv = DVector::from_column_slice(zs);
            let t = b.g.tr_mul(&zv);
            for (o, v) in out.iter_mut().zip(t.iter()) {
                *o += v;
            }
        }
        for (b, zm) in self.psd.iter().zip(&z.psd) {
            for (o, col) in out.iter_mut().zip(&b.cols) {
                *o += col
                    .iter()
                    .map(|&(i, k, g)| g.re * zm[(i, k)].re + g.im * zm[(i, k)].im)
                    .sum::<f64>();
            }
        }
        out
    }

    fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        match &self.eq {
            Some(e) => (&e.a * DVector::from_column_slice(x)).iter().copied().collect(),
            None => Vec::new(),
        }
    }

    fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        match &self.eq {
            Some(e) => e.a.tr_mul(&DVector::from_column_slice(y)).iter().copied().collect(),
            None => vec![0.0; self.num_vars()],
        }
    }

    /// `Gᵀ W⁻¹ W⁻ᵀ G`
    fn normal_matrix(&self, w: &Scaling) -> DMatrix<f64> {
        let n = self.num_vars();
        let mut h = DMatrix::<f64>::zeros(n, n);

        for (row, d) in self.lin.rows.iter().zip(w.lin_weights()) {
            let inv = 1.0 / (d * d);
            for &(i, gi) in row {
                for &(j, gj) in row {
                    h[(i, j)] += inv * gi * gj;
                }
            }
        }

        for (k, b) in self.soc.iter().enumerate() {
            let m = w.soc_winv_dense(k, &b.g);
            h += m.tr_mul(&m);
        }

        for (k, b) in self.psd.iter().enumerate() {
            let p = w.psd_p(k);
            let size = b.size;
            let mut y = vec![C64::new(0.0, 0.0); size * size];
            for (jb, colb) in b.cols.iter().enumerate() {
                if colb.is_empty() {
                    continue;
                }
                y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                // Y = P G_b P, accumulated one entry at a time.
                for &(r, c, g) in colb {
                    let pcol = p.column(r);
                    for q in 0..size {
                        // P[c, q] = conj(P[q, c])
                        let coef = g * p[(q, c)].conj();
                        if coef.re == 0.0 && coef.im == 0.0 {
                            continue;
                        }
                        let dst = &mut y[q * size..(q + 1) * size];
                        for (d, pv) in dst.iter_mut().zip(pcol.iter()) {
                            *d += pv * coef;
                        }
                    }
                }
                for (ja, cola) in b.cols.iter().enumerate().take(jb + 1) {
                    let v: f64 = cola
                        .iter()
                        .map(|&(r, c, g)| {
                            let yv = y[c * size + r];
                            g.re * yv.re + g.im * yv.im
                        })
                        .sum();
                    h[(ja, jb)] += v;
                    if ja != jb {
                        h[(jb, ja)] += v;
                    }
                }
            }
        }
        h
    }
}

struct Kkt<'a> {
    prog: &'a ConeProgram,
    w: &'a Scaling,
    chol: Cholesky<f64, Dyn>,
    /// `(H⁻¹Aᵀ, chol(A H⁻¹ Aᵀ))` when equalities are present.
    schur: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

fn regularized_cholesky(mut h: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut delta = 0.0;
    for _ in 0..6 {
        if let Some(c) = Cholesky::new(h.clone()) {
            return Some(c);
        }
        let next = if delta == 0.0 { 1e-13 * scale } else { delta * 100.0 };
        for i in 0..n {
            h[(i, i)] += next - delta;
        }
        delta = next;
    }
    None
}

impl<'a> Kkt<'a> {
    fn factor(prog: &'a ConeProgram, w: &'a Scaling) -> Option<Self> {
        let mut h = prog.normal_matrix(w);
        if let Some(eq) = &prog.eq {
            h += eq.a.tr_mul(&eq.a);
        }
        let chol = regularized_cholesky(h)?;
        let schur = match &prog.eq {
            Some(eq) if eq.a.nrows() > 0 => {
                let hinv_at = chol.solve(&eq.a.transpose());
                let s = &eq.a * &hinv_at;
                let s = (&s + s.transpose()) * 0.5;
                Some((hinv_at, regularized_cholesky(s)?))
            }
            _ => None,
        };
        Some(Kkt {
            prog,
            w,
            chol,
            schur,
        })
    }

    /// Solve `[0 Aᵀ Gᵀ; A 0 0; G 0 −WᵀW] [ux; uy; uz] = [bx; by; bz]` with
    /// a few rounds of iterative refinement on the full system.
    fn solve(&self, bx: &[f64], by: &[f64], bz: &ConeVec) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let (mut ux, mut uy, mut uz) = self.solve_once(bx, by, bz);
        let scale = norm(bx).max(norm(by)).max(bz.norm()).max(1e-300);
        let mut last = f64::INFINITY;
        for _ in 0..3 {
            let (ex, ey, ez) = self.residual(bx, by, bz, &ux, &uy, &uz);
            let err = norm(&ex).max(norm(&ey)).max(ez.norm());
            if !(err > 1e-14 * scale) || err >= 0.5 * last {
                break;
            }
            last = err;
            let (cx, cy, cz) = self.solve_once(&ex, &ey, &ez);
            ux.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            uy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            uz.axpy(1.0, &cz);
        }
        (ux, uy, uz)
    }

    #[allow(clippy::type_complexity)]
    fn residual(
        &self,
        bx: &[f64],
        by: &[f64],
        bz: &ConeVec,
        ux: &[f64],
        uy: &[f64],
        uz: &ConeVec,
    ) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let gtz = self.prog.gt_mul(uz);
        let aty = self.prog.at_mul(uy);
        let ex = (0..bx.len()).map(|i| bx[i] - gtz[i] - aty[i]).collect();
        let ax = self.prog.a_mul(ux);
        let ey = by.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut ez = bz.clone();
        ez.axpy(-1.0, &self.prog.g_mul(ux));
        ez.axpy(1.0, &self.w.apply_wt(&self.w.apply_w(uz)));
        (ex, ey, ez)
    }

    fn solve_once(&self, bx: &[f64], by: &[f64], bz: &ConeVec) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let t = self.w.apply_winv_wint(bz);
        let gt = self.prog.gt_mul(&t);
        let mut rhs: Vec<f64> = bx.iter().zip(&gt).map(|(a, b)| a + b).collect();
        let (ux, uy): (Vec<f64>, Vec<f64>) = match (&self.schur, &self.prog.eq) {
            (Some((hinv_at, schol)), Some(eq)) => {
                let aty = eq.a.tr_mul(&DVector::from_column_slice(by));
                for (r, v) in rhs.iter_mut().zip(aty.iter()) {
                    *r += v;
                }
                let rv = DVector::from_vec(rhs);
                let hr = self.chol.solve(&rv);
                let ahr = &eq.a * &hr - DVector::from_column_slice(by);
                let uy = schol.solve(&ahr);
                let ux = hr - hinv_at * &uy;
                (ux.iter().copied().collect(), uy.iter().copied().collect())
            }
            _ => {
                let ux = self.chol.solve(&DVector::from_vec(rhs));
                (ux.iter().copied().collect(), vec![0.0; by.len()])
            }
        };
        let mut gx = self.prog.g_mul(&ux);
        gx.axpy(-1.0, bz);
        let uz = self.w.apply_winv_wint(&gx);
        (ux, uy, uz)
    }
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: ConeVec,
    pcost: f64,
    dcost: f64,
    gap: f64,
    pres: f64,
    dres: f64,
}

pub fn solve(prog: &ConeProgram, opts: &SolverOptions) -> Result<ConeSolution> {
    prog.validate()?;
    let dims = prog.dims();
    let degree = dims.degree() as f64;
    let n = prog.num_vars();
    let h = prog.h_vec();
    let b = prog.b_vec();
    let p = b.len();
    let resx0 = norm(&prog.c).max(1.0);
    let resy0 = norm(&b).max(1.0);
    let resz0 = h.norm().max(1.0);

    let ident = Scaling::identity(&dims);
    let kkt = Kkt::factor(prog, &ident)
        .ok_or_else(|| Error::Linalg("initial normal matrix is singular".into()))?;
    let (mut x, _, mut s) = kkt.solve(&vec![0.0; n], &b, &h);
    s.scale(-1.0);
    let negc: Vec<f64> = prog.c.iter().map(|v| -v).collect();
    let (_, mut y, mut z) = kkt.solve(&negc, &vec![0.0; p], &ConeVec::zeros(&dims));
    for v in [&mut s, &mut z] {
        let t = -v.interior_margin();
        if t >= -1e-8 * v.norm().max(1.0) {
            v.add_identity(1.0 + t);
        }
    }

    let residuals = |x: &[f64], y: &[f64], s: &ConeVec, z: &ConeVec| -> Residuals {
        let gtz = prog.gt_mul(z);
        let aty = prog.at_mul(y);
        let rx: Vec<f64> = (0..n).map(|i| prog.c[i] + gtz[i] + aty[i]).collect();
        let ax = prog.a_mul(x);
        let ry: Vec<f64> = ax.iter().zip(&b).map(|(a, bi)| a - bi).collect();
        let mut rz = prog.g_mul(x);
        rz.axpy(1.0, s);
        rz.axpy(-1.0, &h);
        let pcost: f64 = prog.c.iter().zip(x).map(|(c, v)| c * v).sum();
        let dcost = -b.iter().zip(y).map(|(bi, yi)| bi * yi).sum::<f64>() - h.dot(z);
        Residuals {
            pres: (norm(&ry) / resy0).max(rz.norm() / resz0),
            dres: norm(&rx) / resx0,
            gap: s.dot(z),
            rx,
            ry,
            rz,
            pcost,
            dcost,
        }
    };

    let finish = |x: Vec<f64>,
                  y: Vec<f64>,
                  s: ConeVec,
                  z: ConeVec,
                  r: &Residuals,
                  status: SolveStatus,
                  it: usize| {
        ConeSolution {
            x,
            y,
            s,
            z,
            status,
            iterations: it,
            primal_objective: r.pcost,
            dual_objective: r.dcost,
            primal_residual: r.pres,
            dual_residual: r.dres,
            gap: r.gap,
        }
    };

    // Best iterate so far, by residuals and gap measured against the
    // tolerances; returned whenever the method stops short of them.
    let mut best: Option<(f64, ConeSolution)> = None;
    let give_up = |best: Option<(f64, ConeSolution)>, status: SolveStatus, it: usize| {
        let (_, mut sol) = best.expect("best iterate is recorded before any exit");
        sol.status = status;
        sol.iterations = it;
        Ok(sol)
    };

    for it in 0..=opts.max_iters {
        let r = residuals(&x, &y, &s, &z);
        let scale = r.pcost.abs().max(r.dcost.abs());
        let relgap = if scale > 0.0 { r.gap / scale } else { f64::INFINITY };
        if r.pres <= opts.feastol
            && r.dres <= opts.feastol
            && (r.gap <= opts.abstol || relgap <= opts.reltol)
        {
            return Ok(finish(x, y, s, z, &r, SolveStatus::Optimal, it));
        }
        let merit = (r.pres / opts.feastol)
            .max(r.dres / opts.feastol)
            .max((r.gap / opts.abstol).min(relgap / opts.reltol));
        let merit = if merit.is_nan() { f64::INFINITY } else { merit };
        match &best {
            Some((m, _)) if *m <= merit => {
                if merit > 100.0 * m && *m < 1e4 {
                    // Residuals grew well past the best point: roundoff has
                    // taken over.
                    return give_up(best, SolveStatus::Stalled, it);
                }
            }
            _ => {
                let snap = finish(x.clone(), y.clone(), s.clone(), z.clone(), &r, SolveStatus::Stalled, it);
                best = Some((merit, snap));
            }
        }
        if it == opts.max_iters {
            return give_up(best, SolveStatus::MaxIterations, it);
        }

        let Some(w) = Scaling::nt(&s, &z) else {
            return give_up(best, SolveStatus::NumericalFailure, it);
        };
        let Some(kkt) = Kkt::factor(prog, &w) else {
            return give_up(best, SolveStatus::NumericalFailure, it);
        };
        let lam = &w.lambda;

        // Predictor.
        let negrx: Vec<f64> = r.rx.iter().map(|v| -v).collect();
        let negry: Vec<f64> = r.ry.iter().map(|v| -v).collect();
        let mut bz = s.clone();
        bz.axpy(-1.0, &r.rz);
        let (_, _, dza) = kkt.solve(&negrx, &negry, &bz);
        let dzs_a = w.apply_w(&dza);
        let mut dss_a = lam.clone();
        dss_a.scale(-1.0);
        dss_a.axpy(-1.0, &dzs_a);
        let alpha_aff = 1f64
            .min(max_step(lam, &dss_a))
            .min(max_step(lam, &dzs_a));
        let sigma = (1.0 - alpha_aff).clamp(0.0, 1.0).powi(3);
        let mu = r.gap / degree;

        // Corrector.
        let mut rc = lam.jordan(lam);
        rc.axpy(1.0, &dss_a.jordan(&dzs_a));
        rc.scale(-1.0);
        rc.add_identity(sigma * mu);
        let ds_lam = w.lambda_solve(&rc);
        let f = 1.0 - sigma;
        let bx: Vec<f64> = r.rx.iter().map(|v| -f * v).collect();
        let by: Vec<f64> = r.ry.iter().map(|v| -f * v).collect();
        let mut bz = w.apply_wt(&ds_lam);
        bz.scale(-1.0);
        bz.axpy(-f, &r.rz);
        let (dx, dy, dz) = kkt.solve(&bx, &by, &bz);
        let dzs = w.apply_w(&dz);
        let mut dss = ds_lam;
        dss.axpy(-1.0, &dzs);
        let amax = max_step(lam, &dss).min(max_step(lam, &dzs));
        let alpha = (0.99 * amax).min(1.0);
        let ds = w.apply_wt(&dss);

        if !(alpha > 1e-12) || !ds.is_finite() || !dz.is_finite() {
            let status = if alpha.is_finite() && ds.is_finite() && dz.is_finite() {
                SolveStatus::Stalled
            } else {
                SolveStatus::NumericalFailure
            };
            return give_up(best, status, it);
        }

        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += alpha * d;
        }
        for (yi, d) in y.iter_mut().zip(&dy) {
            *yi += alpha * d;
        }
        s.axpy(alpha, &ds);
        z.axpy(alpha, &dz);
        for m in s.psd.iter_mut().chain(z.psd.iter_mut()) {
            let sym = (&*m + m.adjoint()) * C64::new(0.5, 0.0);
            *m = sym;
        }
    }
    unreachable!("loop returns on the final iteration")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin_only(c: Vec<f64>, rows: Vec<Vec<(usize, f64)>>, h: Vec<f64>) -> ConeProgram {
        ConeProgram {
            c,
            lin: LinearBlock { rows, h },
            soc: vec![],
            psd: vec![],
            eq: None,
        }
    }

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  →  (1.6, 1.2)
        let prog = lin_only(
            vec![-1.0, -1.0],
            vec![
                vec![(0, 1.0), (1, 2.0)],
                vec![(0, 3.0), (1, 1.0)],
                vec![(0, -1.0)],
                vec![(1, -1.0)],
            ],
            vec![4.0, 6.0, 0.0, 0.0],
        );
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.6).abs() < 1e-6 && (sol.x[1] - 1.2).abs() < 1e-6);
        assert!((sol.primal_objective + 2.8).abs() < 1e-6);
        assert!((sol.dual_objective + 2.8).abs() < 1e-6);
    }

    #[test]
    fn lp_with_equality() {
        // min x0 + 2 x1 + 3 x2  s.t.  x0 + x1 + x2 = 1, x >= 0  →  x = e0
        let mut prog = lin_only(
            vec![1.0, 2.0, 3.0],
            vec![vec![(0, -1.0)], vec![(1, -1.0)], vec![(2, -1.0)]],
            vec![0.0; 3],
        );
        prog.eq = Some(Equality {
            a: DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
            b: vec![1.0],
        });
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.y[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn socp_projection() {
        // min t  s.t. ‖x − a‖ <= t with x0 + x1 = 0 → distance from a to the line.
        let a = [3.0, 1.0];
        let mut g = DMatrix::zeros(3, 3);
        g[(0, 2)] = -1.0;
        g[(1, 0)] = 1.0;
        g[(2, 1)] = 1.0;
        let prog = ConeProgram {
            c: vec![0.0, 0.0, 1.0],
            lin: LinearBlock::default(),
            soc: vec![SocBlock {
                g,
                h: vec![0.0, a[0], a[1]],
            }],
            psd: vec![],
            eq: Some(Equality {
                a: DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]),
                b: vec![0.0],
            }),
        };
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let want = (a[0] + a[1]) / 2f64.sqrt();
        assert!((sol.x[2] - want).abs() < 1e-6, "{}", sol.x[2]);
        assert!((sol.x[0] - 1.0).abs() < 1e-5 && (sol.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn hermitian_sdp_max_eigenvalue() {
        // min t s.t. t I − M ⪰ 0  →  λmax(M) for a complex Hermitian M.
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(2.0, 0.0),
                C64::new(1.0, 1.0),
                C64::new(1.0, -1.0),
                C64::new(1.0, 0.0),
            ],
        );
        let mut blk = PsdBlock::new(2, 1);
        blk.add_hermitian(0, 0, 0, C64::new(-1.0, 0.0));
        blk.add_hermitian(0, 1, 1, C64::new(-1.0, 0.0));
        blk.h = -m.clone();
        let prog = ConeProgram {
            c: vec![1.0],
            lin: LinearBlock::default(),
            soc: vec![],
            psd: vec![blk],
            eq: None,
        };
        let sol = solve(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let lmax = m.symmetric_eigen().eigenvalues.max();
        assert!((sol.x[0] - lmax).abs() < 1e-6, "{} vs {lmax}", sol.x[0]);
        // dual: trace-one PSD matrix aligned with the top eigenvector
        let zd = &sol.z.psd[0];
        assert!((zd[(0, 0)].re + zd[(1, 1)].re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normal_matrix_matches_dense_definition() {
        // Compare the structured Gᵀ W⁻¹W⁻ᵀ G against column-by-column application.
        let mut blk = PsdBlock::new(3, 3);
        blk.add_hermitian(0, 0, 0, C64::new(1.0, 0.0));
        blk.add_hermitian(0, 1, 0, C64::new(0.5, -0.2));
        blk.add_hermitian(1, 2, 1, C64::new(0.0, 1.0));
        blk.add_hermitian(2, 2, 2, C64::new(-1.0, 0.0));
        blk.add_hermitian(2, 0, 2, C64::new(0.3, 0.3));
        let prog = ConeProgram {
            c: vec![0.0; 3],
            lin: LinearBlock {
                rows: vec![vec![(0, 1.0), (2, -2.0)]],
                h: vec![1.0],
            },
            soc: vec![SocBlock {
                g: DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1),
                h: vec![1.0, 0.0, 0.0],
            }],
            psd: vec![blk],
            eq: None,
        };
        let dims = prog.dims();
        let mut s = ConeVec::identity(&dims);
        s.lin[0] = 2.0;
        s.soc[0] = vec![2.0, 0.5, -0.3];
        s.psd[0][(0, 1)] = C64::new(0.2, 0.1);
        s.psd[0][(1, 0)] = C64::new(0.2, -0.1);
        let mut z = ConeVec::identity(&dims);
        z.lin[0] = 0.7;
        z.soc[0] = vec![1.5, -0.2, 0.4];
        z.psd[0][(2, 1)] = C64::new(-0.3, 0.2);
        z.psd[0][(1, 2)] = C64::new(-0.3, -0.2);
        let w = Scaling::nt(&s, &z).unwrap();
        let h = prog.normal_matrix(&w);
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            let col = prog.gt_mul(&w.apply_winv_wint(&prog.g_mul(&e)));
            for i in 0..3 {
                assert!((h[(i, j)] - col[i]).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let prog = lin_only(vec![1.0], vec![vec![(3, 1.0)]], vec![0.0]);
        assert!(solve(&prog, &SolverOptions::default()).is_err());
    }
}
