//! Toeplitz SDP for total-variation minimization over spike trains on `[0, 1)`.
//!
//! The program handed to the interior-point solver is
//!
//! ```text
//! minimize    (v₀ + t) / 2
//! subject to  [[T(v), x], [x*, t]] ⪰ 0
//!             ‖r − x − σ² w‖₂ ≤ ε        (x + σ² w = r when ε = 0)
//!             σ² ≥ 0                      (only when w is given)
//! ```
//!
//! Its conic dual is the certificate problem
//! `max Re⟨u, r⟩ − ε‖u‖₂` s.t. `[[Q, u], [u*, 1]] ⪰ 0`, `Σᵢ Q_{i+j,i} = δ_j`,
//! `Re⟨u, w⟩ ≤ 0`, and `(Q, u)` is read off the dual PSD multiplier.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cones::lambda_min;
use super::ipm::{solve, ConeProgram, Equality, LinearBlock, PsdBlock, SocBlock, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    /// Measurement over lags `-f_c..=f_c`.
    pub r: Vec<C64>,
    /// Noise direction; `None` drops the noise-power variable (known-noise
    /// or noiseless problems).
    pub w: Option<Vec<C64>>,
    pub epsilon: f64,
    pub f_c: usize,
}

impl SdpProblem {
    pub fn new(r: Vec<C64>, w: Option<Vec<C64>>, epsilon: f64) -> Result<Self> {
        if r.len() % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "measurement length {} is not 2 f_c + 1",
                r.len()
            )));
        }
        let p = SdpProblem {
            f_c: r.len() / 2,
            r,
            w,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = 2 * self.f_c + 1;
        if self.f_c == 0 || self.r.len() != n {
            return Err(Error::InvalidArgument(format!(
                "measurement length {} does not match f_c = {}",
                self.r.len(),
                self.f_c
            )));
        }
        if let Some(w) = &self.w {
            if w.len() != n {
                return Err(Error::InvalidArgument("w and r differ in length".into()));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {} must be finite and nonnegative",
                self.epsilon
            )));
        }
        if self.r.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("measurement is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateResiduals {
    /// `max(0, −λmin([[Q, u], [u*, 1]]))`
    pub psd_violation: f64,
    /// `max_j |Σᵢ Q_{i+j,i} − δ_j|`
    pub trace_violation: f64,
    /// `max(0, Re⟨u, w⟩)`
    pub w_violation: f64,
}

impl CertificateResiduals {
    pub fn max(&self) -> f64 {
        self.psd_violation.max(self.trace_violation).max(self.w_violation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub f_c: usize,
    /// Coefficients `u_n`, `n = -f_c..=f_c`.
    pub u: Vec<C64>,
    pub q: DMatrix<C64>,
    /// `Re⟨u, r⟩ − ε‖u‖₂`
    pub value: f64,
    /// Objective of the primal iterate; equals `value` at optimality.
    pub primal_value: f64,
    pub residuals: CertificateResiduals,
    /// Noise power carried by the primal iterate (problems with `w` only).
    pub noise_power: Option<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl DualCertificate {
    /// `p(τ) = Σ_n u_n e^{j2πnτ}`.
    pub fn polynomial(&self, tau: f64) -> C64 {
        dual_polynomial_value(&self.u, tau)
    }
}

pub(crate) fn dual_polynomial_value(u: &[C64], tau: f64) -> C64 {
    let fc = (u.len() / 2) as i64;
    // Horner in z = e^{j2πτ}, then shift by z^{-f_c}.
    let z = C64::from_polar(1.0, 2.0 * PI * tau);
    let mut acc = C64::new(0.0, 0.0);
    for c in u.iter().rev() {
        acc = acc * z + c;
    }
    acc * C64::from_polar(1.0, -2.0 * PI * tau * fc as f64)
}

pub fn certificate_residuals(u: &[C64], q: &DMatrix<C64>, w: Option<&[C64]>) -> CertificateResiduals {
    let n = u.len();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(q);
    for i in 0..n {
        m[(i, n)] = u[i];
        m[(n, i)] = u[i].conj();
    }
    m[(n, n)] = C64::new(1.0, 0.0);
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let psd_violation = (-lambda_min(&m)).max(0.0);
    let mut trace_violation: f64 = 0.0;
    for j in 0..n {
        let s: C64 = (0..n - j).map(|i| q[(i + j, i)]).sum();
        let target = if j == 0 { 1.0 } else { 0.0 };
        trace_violation = trace_violation.max((s - target).norm());
    }
    let w_violation = w
        .map(|w| u.iter().zip(w).map(|(a, b)| (a.conj() * b).re).sum::<f64>().max(0.0))
        .unwrap_or(0.0);
    CertificateResiduals {
        psd_violation,
        trace_violation,
        w_violation,
    }
}

struct Layout {
    n: usize,
    with_w: bool,
}

impl Layout {
    fn v_re(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            2 * k - 1
        }
    }
    fn v_im(&self, k: usize) -> usize {
        2 * k
    }
    fn t(&self) -> usize {
        2 * self.n - 1
    }
    fn x_re(&self, i: usize) -> usize {
        2 * self.n + 2 * i
    }
    fn x_im(&self, i: usize) -> usize {
        2 * self.n + 2 * i + 1
    }
    fn sigma2(&self) -> usize {
        4 * self.n
    }
    fn num_vars(&self) -> usize {
        4 * self.n + usize::from(self.with_w)
    }
}

fn build_program(p: &SdpProblem) -> (ConeProgram, Layout) {
    let n = p.r.len();
    let lay = Layout {
        n,
        with_w: p.w.is_some(),
    };
    let nv = lay.num_vars();
    let mut c = vec![0.0; nv];
    c[lay.v_re(0)] = 0.5;
    c[lay.t()] = 0.5;

    let one = C64::new(-1.0, 0.0);
    let jay = C64::new(0.0, -1.0);
    let mut psd = PsdBlock::new(n + 1, nv);
    for i in 0..n {
        psd.add_hermitian(lay.v_re(0), i, i, one);
    }
    for k in 1..n {
        for i in k..n {
            psd.add_hermitian(lay.v_re(k), i, i - k, one);
            psd.add_hermitian(lay.v_im(k), i, i - k, jay);
        }
    }
    psd.add_hermitian(lay.t(), n, n, one);
    for i in 0..n {
        psd.add_hermitian(lay.x_re(i), i, n, one);
        psd.add_hermitian(lay.x_im(i), i, n, jay);
    }

    let mut lin = LinearBlock::default();
    if lay.with_w {
        lin.push(vec![(lay.sigma2(), -1.0)], 0.0);
    }

    let mut soc = Vec::new();
    let mut eq = None;
    if p.epsilon > 0.0 {
        let mut g = DMatrix::zeros(2 * n + 1, nv);
        let mut h = Vec::with_capacity(2 * n + 1);
        h.push(p.epsilon);
        for i in 0..n {
            h.push(p.r[i].re);
            h.push(p.r[i].im);
            g[(1 + 2 * i, lay.x_re(i))] = 1.0;
            g[(2 + 2 * i, lay.x_im(i))] = 1.0;
            if let Some(w) = &p.w {
                g[(1 + 2 * i, lay.sigma2())] = w[i].re;
                g[(2 + 2 * i, lay.sigma2())] = w[i].im;
            }
        }
        soc.push(SocBlock { g, h });
    } else {
        let mut a = DMatrix::zeros(2 * n, nv);
        let mut b = Vec::with_capacity(2 * n);
        for i in 0..n {
            a[(2 * i, lay.x_re(i))] = 1.0;
            a[(2 * i + 1, lay.x_im(i))] = 1.0;
            if let Some(w) = &p.w {
                a[(2 * i, lay.sigma2())] = w[i].re;
                a[(2 * i + 1, lay.sigma2())] = w[i].im;
            }
            b.push(p.r[i].re);
            b.push(p.r[i].im);
        }
        eq = Some(Equality { a, b });
    }

    (
        ConeProgram {
            c,
            lin,
            soc,
            psd: vec![psd],
            eq,
        },
        lay,
    )
}

/// Solve with residual and gap tolerance `tol`.
pub fn solve_dual_sdp(p: &SdpProblem, tol: f64) -> Result<DualCertificate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be positive")));
    }
    let opts = SolverOptions {
        feastol: tol,
        abstol: tol,
        reltol: tol,
        ..SolverOptions::default()
    };
    solve_dual_sdp_with(p, &opts)
}

pub fn solve_dual_sdp_with(p: &SdpProblem, opts: &SolverOptions) -> Result<DualCertificate> {
    p.validate()?;
    let (prog, lay) = build_program(p);
    let sol = solve(&prog, opts)?;
    // Accept a stalled iterate only when it is close to the requested accuracy.
    if sol.status != SolveStatus::Optimal && !sol.within(100.0 * opts.feastol) {
        return Err(Error::SolverFailure {
            status: sol.status,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
        });
    }
    let n = lay.n;
    let zd = &sol.z.psd[0];
    let kappa = zd[(n, n)].re;
    if !(kappa > 0.0) {
        return Err(Error::Linalg("dual multiplier has no mass on t".into()));
    }
    let q = zd.view((0, 0), (n, n)).map(|v| v / kappa);
    let u: Vec<C64> = (0..n).map(|i| -zd[(i, n)] / kappa).collect();
    let unorm = u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let value = u.iter().zip(&p.r).map(|(a, b)| (a.conj() * b).re).sum::<f64>() - p.epsilon * unorm;
    let residuals = certificate_residuals(&u, &q, p.w.as_deref());
    Ok(DualCertificate {
        f_c: p.f_c,
        u,
        q,
        value,
        primal_value: sol.primal_objective,
        residuals,
        noise_power: lay.with_w.then(|| sol.x[lay.sigma2()].max(0.0)),
        status: sol.status,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spikes(fc: usize, taus: &[f64], amps: &[f64]) -> Vec<C64> {
        let fc = fc as i64;
        (-fc..=fc)
            .map(|n| {
                taus.iter()
                    .zip(amps)
                    .map(|(&t, &a)| C64::from_polar(a, -2.0 * PI * n as f64 * t))
                    .sum()
            })
            .collect()
    }

    fn lag0(fc: usize) -> Vec<C64> {
        let mut w = vec![C64::new(0.0, 0.0); 2 * fc + 1];
        w[fc] = C64::new(1.0, 0.0);
        w
    }

    #[test]
    fn zero_measurement() {
        let p = SdpProblem::new(vec![C64::new(0.0, 0.0); 35], None, 1.0).unwrap();
        let cert = solve_dual_sdp(&p, 1e-7).unwrap();
        assert!(cert.value.abs() < 1e-6, "{}", cert.value);
        assert!(cert.primal_value.abs() < 1e-6);
    }

    #[test]
    fn single_spike_known_noise() {
        let r = spikes(17, &[0.25], &[2.0]);
        let p = SdpProblem::new(r, None, 0.0).unwrap();
        let cert = solve_dual_sdp(&p, 1e-7).unwrap();
        assert_eq!(cert.status, SolveStatus::Optimal);
        assert!((cert.value - 2.0).abs() < 1e-5, "{}", cert.value);
        assert!((cert.polynomial(0.25).norm() - 1.0).abs() < 1e-4);
        assert!(cert.residuals.max() < 1e-6, "{:?}", cert.residuals);
    }

    #[test]
    fn two_spikes_unknown_noise_interpolates() {
        let fc = 17;
        let mut r = spikes(fc, &[0.2, 0.61], &[1.0, 1.5]);
        r[fc] += 0.7;
        let p = SdpProblem::new(r, Some(lag0(fc)), 0.0).unwrap();
        let cert = solve_dual_sdp(&p, 1e-8).unwrap();
        assert!((cert.value - 2.5).abs() < 1e-4, "{}", cert.value);
        for t in [0.2, 0.61] {
            assert!((cert.polynomial(t).norm() - 1.0).abs() < 1e-4);
            // positive amplitudes: p(τ_k) = +1
            assert!((cert.polynomial(t) - C64::new(1.0, 0.0)).norm() < 1e-3);
        }
        assert!((cert.noise_power.unwrap() - 0.7).abs() < 1e-4);
        assert!(cert.residuals.w_violation < 1e-7);
    }

    #[test]
    fn polynomial_bounded_by_one() {
        let fc = 17;
        let mut r = spikes(fc, &[0.1, 0.45, 0.8], &[1.0, 0.4, 2.0]);
        // deterministic perturbation
        for (i, v) in r.iter_mut().enumerate() {
            *v += C64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()) * 0.05;
        }
        let p = SdpProblem::new(r, Some(lag0(fc)), 0.2).unwrap();
        let cert = solve_dual_sdp(&p, 1e-8).unwrap();
        let sup = (0..20_000)
            .map(|k| cert.polynomial(k as f64 / 20_000.0).norm())
            .fold(0.0, f64::max);
        assert!(sup <= 1.0 + 1e-6, "sup |p| = {sup}");
        assert!((cert.value - cert.primal_value).abs() < 1e-5 * cert.value.abs().max(1.0));
    }

    #[test]
    fn positively_homogeneous() {
        let fc = 7;
        let r = spikes(fc, &[0.3, 0.7], &[1.0, 0.5]);
        let a = solve_dual_sdp(&SdpProblem::new(r.clone(), None, 0.1).unwrap(), 1e-8).unwrap();
        let r3: Vec<C64> = r.iter().map(|v| v * 3.0).collect();
        let b = solve_dual_sdp(&SdpProblem::new(r3, None, 0.3).unwrap(), 1e-8).unwrap();
        assert!((b.value - 3.0 * a.value).abs() < 1e-5 * b.value);
    }

    #[test]
    fn polynomial_examples() {
        let mut u = vec![C64::new(0.0, 0.0); 3];
        u[1] = C64::new(1.0, 0.0);
        assert!((dual_polynomial_value(&u, 0.37) - C64::new(1.0, 0.0)).norm() < 1e-15);
        let u = vec![C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)];
        for t in [0.0, 0.1, 0.33] {
            let want = (2.0 * PI * t).cos();
            assert!((dual_polynomial_value(&u, t) - C64::new(want, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn json_round_trip() {
        let r = spikes(3, &[0.25], &[1.0]);
        let p = SdpProblem::new(r, Some(lag0(3)), 0.5).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<SdpProblem>(&s).unwrap(), p);
        let cert = solve_dual_sdp(&p, 1e-7).unwrap();
        let s = serde_json::to_string(&cert).unwrap();
        assert_eq!(serde_json::from_str::<DualCertificate>(&s).unwrap(), cert);
    }

    #[test]
    fn rejects_invalid() {
        assert!(SdpProblem::new(vec![C64::new(1.0, 0.0); 4], None, 0.0).is_err());
        assert!(SdpProblem::new(vec![C64::new(1.0, 0.0); 3], None, -1.0).is_err());
        assert!(SdpProblem::new(vec![C64::new(1.0, 0.0); 1], None, 0.0).is_err());
    }
}
