//! Cone algebra for the product cone `R₊^l × Π SOC × Π H₊` (Hermitian PSD).
//!
//! PSD components are kept as full Hermitian matrices with the inner product
//! `Re tr(X* Y)`.

use nalgebra::{Cholesky, DMatrix};

use crate::C64;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConeDims {
    pub lin: usize,
    pub soc: Vec<usize>,
    pub psd: Vec<usize>,
}

impl ConeDims {
    /// Barrier degree: one per nonnegative coordinate and per SOC, `n` per
    /// `n × n` PSD block.
    pub fn degree(&self) -> usize {
        self.lin + self.soc.len() + self.psd.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeVec {
    pub lin: Vec<f64>,
    pub soc: Vec<Vec<f64>>,
    pub psd: Vec<DMatrix<C64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hdot(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn lambda_min(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

impl ConeVec {
    pub fn zeros(d: &ConeDims) -> Self {
        ConeVec {
            lin: vec![0.0; d.lin],
            soc: d.soc.iter().map(|&k| vec![0.0; k]).collect(),
            psd: d.psd.iter().map(|&k| DMatrix::zeros(k, k)).collect(),
        }
    }

    pub fn identity(d: &ConeDims) -> Self {
        let mut v = Self::zeros(d);
        v.add_identity(1.0);
        v
    }

    pub fn dot(&self, o: &Self) -> f64 {
        dot(&self.lin, &o.lin)
            + self.soc.iter().zip(&o.soc).map(|(a, b)| dot(a, b)).sum::<f64>()
            + self.psd.iter().zip(&o.psd).map(|(a, b)| hdot(a, b)).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, a: f64, o: &Self) {
        for (x, y) in self.lin.iter_mut().zip(&o.lin) {
            *x += a * y;
        }
        for (xs, ys) in self.soc.iter_mut().zip(&o.soc) {
            for (x, y) in xs.iter_mut().zip(ys) {
                *x += a * y;
            }
        }
        for (xs, ys) in self.psd.iter_mut().zip(&o.psd) {
            xs.zip_apply(ys, |x, y| *x += y * a);
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.lin.iter_mut().for_each(|x| *x *= a);
        self.soc.iter_mut().flatten().for_each(|x| *x *= a);
        self.psd.iter_mut().for_each(|m| *m *= C64::new(a, 0.0));
    }

    pub fn add_identity(&mut self, t: f64) {
        self.lin.iter_mut().for_each(|x| *x += t);
        for v in &mut self.soc {
            v[0] += t;
        }
        for m in &mut self.psd {
            for i in 0..m.nrows() {
                m[(i, i)] += t;
            }
        }
    }

    /// Largest `t` with `self − t·e` in the cone (negative when outside).
    pub fn interior_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for &x in &self.lin {
            m = m.min(x);
        }
        for v in &self.soc {
            m = m.min(v[0] - norm(&v[1..]));
        }
        for p in &self.psd {
            m = m.min(lambda_min(p));
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.lin.iter().all(|x| x.is_finite())
            && self.soc.iter().flatten().all(|x| x.is_finite())
            && self.psd.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Jordan product `u ∘ v`.
    pub fn jordan(&self, o: &Self) -> Self {
        ConeVec {
            lin: self.lin.iter().zip(&o.lin).map(|(a, b)| a * b).collect(),
            soc: self
                .soc
                .iter()
                .zip(&o.soc)
                .map(|(u, v)| {
                    let mut out = Vec::with_capacity(u.len());
                    out.push(dot(u, v));
                    out.extend(u[1..].iter().zip(&v[1..]).map(|(a, b)| u[0] * b + v[0] * a));
                    out
                })
                .collect(),
            psd: self
                .psd
                .iter()
                .zip(&o.psd)
                .map(|(a, b)| {
                    let ab = a * b;
                    (&ab + ab.adjoint()) * C64::new(0.5, 0.0)
                })
                .collect(),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Largest `α` (possibly infinite) with `lambda + α·d` in the cone, for
/// `lambda` in the interior.
pub fn max_step(lambda: &ConeVec, d: &ConeVec) -> f64 {
    let mut alpha = f64::INFINITY;
    for (&l, &di) in lambda.lin.iter().zip(&d.lin) {
        if di < 0.0 {
            alpha = alpha.min(-l / di);
        }
    }
    for (l, di) in lambda.soc.iter().zip(&d.soc) {
        alpha = alpha.min(soc_step(l, di));
    }
    for (l, di) in lambda.psd.iter().zip(&d.psd) {
        alpha = alpha.min(psd_step(l, di));
    }
    alpha
}

fn soc_step(l: &[f64], d: &[f64]) -> f64 {
    // f(α) = (l0 + α d0)² − ‖l1 + α d1‖² = a α² + 2 b α + c, c > 0.
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let b = l[0] * d[0] - dot(&l[1..], &d[1..]);
    let c = (l[0] - norm(&l[1..])) * (l[0] + norm(&l[1..]));
    // The boundary is also reached when l0 + α d0 hits zero with l1 + α d1
    // = 0, which the quadratic covers.
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            return -c / (2.0 * b);
        }
        return f64::INFINITY;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        // f never vanishes; sign of f stays positive (a > 0).
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    // Roots of a α² + 2bα + c: (−b ± sq)/a, computed stably.
    let q = -(b + b.signum() * sq);
    let r1 = if q != 0.0 { q / a } else { f64::INFINITY };
    let r2 = if q != 0.0 { c / q } else { f64::INFINITY };
    let mut best = f64::INFINITY;
    for r in [r1, r2] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}

fn psd_step(l: &DMatrix<C64>, d: &DMatrix<C64>) -> f64 {
    let n = l.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let Some(ch) = Cholesky::new(l.clone()) else {
        return 0.0;
    };
    let lower = ch.l();
    let Some(x) = lower.solve_lower_triangular(d) else {
        return 0.0;
    };
    // L⁻¹ D L⁻*
    let Some(y) = lower.solve_lower_triangular(&x.adjoint()) else {
        return 0.0;
    };
    let y = (&y + y.adjoint()) * C64::new(0.5, 0.0);
    let emin = lambda_min(&y);
    if emin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / emin
    }
}

#[derive(Debug, Clone)]
struct SocScaling {
    beta: f64,
    w: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PsdScaling {
    r: DMatrix<C64>,
    rinv: DMatrix<C64>,
    /// `(R R*)⁻¹ = R⁻* R⁻¹`
    p: DMatrix<C64>,
    lambda: Vec<f64>,
}

/// Nesterov–Todd scaling `W` with `W z = W⁻ᵀ s = λ`.
#[derive(Debug, Clone)]
pub struct Scaling {
    lin: Vec<f64>,
    soc: Vec<SocScaling>,
    psd: Vec<PsdScaling>,
    pub lambda: ConeVec,
}

/// `H(w) v` (or its inverse) for a hyperbolic unit vector `w`
/// (`w0² − ‖w1‖² = 1`).
fn hyp_apply(w: &[f64], v: &[f64], inverse: bool) -> Vec<f64> {
    let sign = if inverse { -1.0 } else { 1.0 };
    let d = dot(&w[1..], &v[1..]);
    let coef = sign * v[0] + d / (1.0 + w[0]);
    let mut out = Vec::with_capacity(v.len());
    out.push(w[0] * v[0] + sign * d);
    out.extend(v[1..].iter().zip(&w[1..]).map(|(vi, wi)| vi + wi * coef));
    out
}

fn soc_det_sqrt(v: &[f64]) -> Option<f64> {
    let n1 = norm(&v[1..]);
    let prod = (v[0] - n1) * (v[0] + n1);
    (v[0] > 0.0 && prod > 0.0).then(|| prod.sqrt())
}

impl Scaling {
    pub fn identity(d: &ConeDims) -> Self {
        Scaling {
            lin: vec![1.0; d.lin],
            soc: d
                .soc
                .iter()
                .map(|&k| {
                    let mut w = vec![0.0; k];
                    w[0] = 1.0;
                    SocScaling { beta: 1.0, w }
                })
                .collect(),
            psd: d
                .psd
                .iter()
                .map(|&k| PsdScaling {
                    r: DMatrix::identity(k, k),
                    rinv: DMatrix::identity(k, k),
                    p: DMatrix::identity(k, k),
                    lambda: vec![1.0; k],
                })
                .collect(),
            lambda: ConeVec::identity(d),
        }
    }

    /// `None` when `s` or `z` is not strictly interior.
    pub fn nt(s: &ConeVec, z: &ConeVec) -> Option<Self> {
        let mut lin = Vec::with_capacity(s.lin.len());
        let mut lam_lin = Vec::with_capacity(s.lin.len());
        for (&si, &zi) in s.lin.iter().zip(&z.lin) {
            if !(si > 0.0 && zi > 0.0) {
                return None;
            }
            lin.push((si / zi).sqrt());
            lam_lin.push((si * zi).sqrt());
        }

        let mut soc = Vec::with_capacity(s.soc.len());
        let mut lam_soc = Vec::with_capacity(s.soc.len());
        for (sv, zv) in s.soc.iter().zip(&z.soc) {
            let sn = soc_det_sqrt(sv)?;
            let zn = soc_det_sqrt(zv)?;
            let sh: Vec<f64> = sv.iter().map(|x| x / sn).collect();
            let zh: Vec<f64> = zv.iter().map(|x| x / zn).collect();
            let gamma = ((1.0 + dot(&sh, &zh)) / 2.0).sqrt();
            let mut w = Vec::with_capacity(sv.len());
            w.push((sh[0] + zh[0]) / (2.0 * gamma));
            w.extend(sh[1..].iter().zip(&zh[1..]).map(|(a, b)| (a - b) / (2.0 * gamma)));
            let beta = (sn / zn).sqrt();
            let lam: Vec<f64> = hyp_apply(&w, zv, false).iter().map(|x| beta * x).collect();
            soc.push(SocScaling { beta, w });
            lam_soc.push(lam);
        }

        let mut psd = Vec::with_capacity(s.psd.len());
        let mut lam_psd = Vec::with_capacity(s.psd.len());
        for (sm, zm) in s.psd.iter().zip(&z.psd) {
            let n = sm.nrows();
            let ls = Cholesky::new(sm.clone())?.l();
            let lz = Cholesky::new(zm.clone())?.l();
            let svd = (lz.adjoint() * &ls).svd(false, true);
            let vt = svd.v_t?;
            let sv = svd.singular_values;
            if sv.iter().any(|&x| !(x > 0.0)) {
                return None;
            }
            let v = vt.adjoint();
            let ls_inv = ls.solve_lower_triangular(&DMatrix::identity(n, n))?;
            let mut r = &ls * &v;
            let mut rinv = &vt * &ls_inv;
            for k in 0..n {
                let a = sv[k].sqrt();
                r.column_mut(k).scale_mut(1.0 / a);
                rinv.row_mut(k).scale_mut(a);
            }
            let p = rinv.adjoint() * &rinv;
            let lambda: Vec<f64> = sv.iter().copied().collect();
            lam_psd.push(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                lambda.iter().map(|&x| C64::new(x, 0.0)),
            )));
            psd.push(PsdScaling { r, rinv, p, lambda });
        }

        Some(Scaling {
            lin,
            soc,
            psd,
            lambda: ConeVec {
                lin: lam_lin,
                soc: lam_soc,
                psd: lam_psd,
            },
        })
    }

    /// `W v`
    pub fn apply_w(&self, v: &ConeVec) -> ConeVec {
        ConeVec {
            lin: v.lin.iter().zip(&self.lin).map(|(x, d)| x * d).collect(),
            soc: v
                .soc
                .iter()
                .zip(&self.soc)
                .map(|(x, s)| hyp_apply(&s.w, x, false).into_iter().map(|y| y * s.beta).collect())
                .collect(),
            psd: v
                .psd
                .iter()
                .zip(&self.psd)
                .map(|(x, s)| s.r.adjoint() * x * &s.r)
                .collect(),
        }
    }

    /// `Wᵀ v`
    pub fn apply_wt(&self, v: &ConeVec) -> ConeVec {
        let mut out = self.apply_w_sym(v, false);
        out.psd = v
            .psd
            .iter()
            .zip(&self.psd)
            .map(|(x, s)| &s.r * x * s.r.adjoint())
            .collect();
        out
    }

    /// `W⁻¹ v`
    pub fn apply_winv(&self, v: &ConeVec) -> ConeVec {
        let mut out = self.apply_w_sym(v, true);
        out.psd = v
            .psd
            .iter()
            .zip(&self.psd)
            .map(|(x, s)| s.rinv.adjoint() * x * &s.rinv)
            .collect();
        out
    }

    /// `W⁻ᵀ v`
    pub fn apply_wint(&self, v: &ConeVec) -> ConeVec {
        let mut out = self.apply_w_sym(v, true);
        out.psd = v
            .psd
            .iter()
            .zip(&self.psd)
            .map(|(x, s)| &s.rinv * x * s.rinv.adjoint())
            .collect();
        out
    }

    /// `W⁻¹ W⁻ᵀ v`
    pub fn apply_winv_wint(&self, v: &ConeVec) -> ConeVec {
        let mut out = self.apply_w_sym(&self.apply_w_sym(v, true), true);
        out.psd = v
            .psd
            .iter()
            .zip(&self.psd)
            .map(|(x, s)| &s.p * x * &s.p)
            .collect();
        out
    }

    /// Linear and SOC parts, where `W` is symmetric. PSD part left empty.
    fn apply_w_sym(&self, v: &ConeVec, inverse: bool) -> ConeVec {
        ConeVec {
            lin: v
                .lin
                .iter()
                .zip(&self.lin)
                .map(|(x, d)| if inverse { x / d } else { x * d })
                .collect(),
            soc: v
                .soc
                .iter()
                .zip(&self.soc)
                .map(|(x, s)| {
                    let f = if inverse { 1.0 / s.beta } else { s.beta };
                    hyp_apply(&s.w, x, inverse).into_iter().map(|y| y * f).collect()
                })
                .collect(),
            psd: Vec::new(),
        }
    }

    /// Solve `λ ∘ v = r` for `v`.
    pub fn lambda_solve(&self, r: &ConeVec) -> ConeVec {
        let lam = &self.lambda;
        ConeVec {
            lin: r.lin.iter().zip(&lam.lin).map(|(a, l)| a / l).collect(),
            soc: r
                .soc
                .iter()
                .zip(&lam.soc)
                .map(|(d, l)| {
                    let det = (l[0] - norm(&l[1..])) * (l[0] + norm(&l[1..]));
                    let v0 = (l[0] * d[0] - dot(&l[1..], &d[1..])) / det;
                    let mut out = Vec::with_capacity(d.len());
                    out.push(v0);
                    out.extend(d[1..].iter().zip(&l[1..]).map(|(di, li)| (di - v0 * li) / l[0]));
                    out
                })
                .collect(),
            psd: r
                .psd
                .iter()
                .zip(&self.psd)
                .map(|(d, s)| {
                    DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| {
                        d[(i, j)] * (2.0 / (s.lambda[i] + s.lambda[j]))
                    })
                })
                .collect(),
        }
    }

    /// Linear-block weights `d` (so `W = diag(d)` there).
    pub(crate) fn lin_weights(&self) -> &[f64] {
        &self.lin
    }

    /// `W⁻¹ G` for a dense SOC block `G` (rows = cone coordinates).
    pub(crate) fn soc_winv_dense(&self, block: usize, g: &DMatrix<f64>) -> DMatrix<f64> {
        let s = &self.soc[block];
        let w0 = s.w[0];
        let w1 = nalgebra::DVector::from_column_slice(&s.w[1..]);
        let g0 = g.row(0).clone_owned();
        let g1 = g.rows(1, g.nrows() - 1);
        let v = w1.transpose() * g1; // 1 × nvar
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        out.row_mut(0).copy_from(&((&g0 * w0 - &v) / s.beta));
        let coef = (&v / (1.0 + w0) - &g0) / s.beta;
        let mut rest = g1.clone_owned() / s.beta;
        rest += &w1 * coef;
        out.rows_mut(1, g.nrows() - 1).copy_from(&rest);
        out
    }

    pub(crate) fn psd_p(&self, block: usize) -> &DMatrix<C64> {
        &self.psd[block].p
    }
}
