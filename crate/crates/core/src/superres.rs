//! Gridless spike recovery on the virtual ULA: dual SDP, support extraction
//! from the dual polynomial, and amplitude refinement on the found support.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coarray::{tau_to_doa, wrap_tau, NoisePowerMode, VirtualMeasurement};
use crate::conic::sdp::dual_polynomial_value;
use crate::conic::{
    solve_dual_sdp, solve_l1_socp, DualCertificate, SdpProblem, SocpProblem, SolveStatus,
};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsrOptions {
    /// Roots with `||z| − 1|` below this are treated as on the unit circle.
    pub unit_circle_tol: f64,
    /// Support points need `|p(τ)| ≥ 1 − magnitude_tol`.
    pub magnitude_tol: f64,
    /// Amplitudes below `prune_frac · max` are dropped from `spikes`.
    pub prune_frac: f64,
    /// Interior-point tolerance for both conic solves.
    pub solver_tol: f64,
}

impl Default for CsrOptions {
    fn default() -> Self {
        CsrOptions {
            unit_circle_tol: 1e-2,
            magnitude_tol: 1e-3,
            prune_frac: 0.01,
            solver_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub tau: f64,
    pub sin_theta: f64,
    pub amplitude: f64,
}

impl Spike {
    pub fn doa_degrees(&self) -> f64 {
        self.sin_theta.asin().to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Dual SDP value; `None` for on-grid estimates.
    pub dual_value: Option<f64>,
    pub refinement_residual: f64,
    pub sdp_status: Option<SolveStatus>,
    pub sdp_iterations: usize,
    /// Support points mapped outside `[-1, 1]` (only possible for
    /// `d/λ < 1/2`); they are refined but not reported as spikes.
    pub spurious_roots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Retained spikes sorted by `sin_theta`.
    pub spikes: Vec<Spike>,
    /// Every refined candidate before pruning, sorted by `sin_theta`.
    pub candidates: Vec<Spike>,
    /// Noise power from the refinement. In known-noise mode this is the
    /// supplied value plus whatever excess the refinement attributes to noise.
    pub noise_power_est: f64,
    /// Noise power supplied by the caller, if any.
    pub noise_power_known: Option<f64>,
    pub certificate: Option<DualCertificate>,
    pub diagnostics: Diagnostics,
}

impl SpectrumEstimate {
    pub fn sin_thetas(&self) -> Vec<f64> {
        self.spikes.iter().map(|s| s.sin_theta).collect()
    }

    /// Candidate amplitudes in descending order (input for CSORTE).
    pub fn candidate_amplitudes(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.candidates.iter().map(|s| s.amplitude).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        a
    }
}

impl fmt::Display for SpectrumEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>4}  {:>10}  {:>9}  {:>11}", "#", "sin(theta)", "degrees", "power")?;
        for (i, s) in self.spikes.iter().enumerate() {
            writeln!(
                f,
                "{:>4}  {:>10.6}  {:>9.4}  {:>11.5e}",
                i + 1,
                s.sin_theta,
                s.doa_degrees(),
                s.amplitude
            )?;
        }
        write!(f, "noise power {:.5e}", self.noise_power_est)?;
        if let Some(v) = self.diagnostics.dual_value {
            write!(f, "   dual value {v:.6}")?;
        }
        write!(f, "   residual {:.4e}", self.diagnostics.refinement_residual)
    }
}

/// `p(τ) = Σ_n u_n e^{j2πnτ}` for `n = -f_c..=f_c`.
pub fn dual_polynomial(u: &[C64], tau: f64) -> C64 {
    dual_polynomial_value(u, tau)
}

pub fn dual_polynomial_grid(u: &[C64], taus: &[f64]) -> Vec<C64> {
    taus.iter().map(|&t| dual_polynomial_value(u, t)).collect()
}

/// `(p, p', p'')` with derivatives in `τ`.
fn poly_derivs(u: &[C64], tau: f64) -> (C64, C64, C64) {
    let fc = (u.len() / 2) as i64;
    let mut p = C64::new(0.0, 0.0);
    let mut d1 = C64::new(0.0, 0.0);
    let mut d2 = C64::new(0.0, 0.0);
    for (i, &c) in u.iter().enumerate() {
        let n = (i as i64 - fc) as f64;
        let e = C64::from_polar(1.0, 2.0 * PI * n * tau) * c;
        let k = C64::new(0.0, 2.0 * PI * n);
        p += e;
        d1 += e * k;
        d2 += e * k * k;
    }
    (p, d1, d2)
}

/// Newton ascent on `|p(τ)|²`, each step clamped to `max_step`.
fn polish(u: &[C64], mut tau: f64, max_step: f64) -> f64 {
    for _ in 0..30 {
        let (p, d1, d2) = poly_derivs(u, tau);
        let g = 2.0 * (p.conj() * d1).re;
        let h = 2.0 * (d1.norm_sqr() + (p.conj() * d2).re);
        if !(h < 0.0) {
            break;
        }
        let step = (-g / h).clamp(-max_step, max_step);
        tau += step;
        if step.abs() < 1e-14 {
            break;
        }
    }
    tau.rem_euclid(1.0)
}

fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Roots of `Σ_j a_j z^j` via companion-matrix eigenvalues.
pub(crate) fn poly_roots(coef: &[C64]) -> Vec<C64> {
    let scale = coef.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let hi = match coef.iter().rposition(|c| c.norm() > 1e-14 * scale) {
        Some(h) => h,
        None => return Vec::new(),
    };
    let lo = coef.iter().position(|c| c.norm() > 1e-14 * scale).unwrap_or(0);
    let a = &coef[lo..=hi];
    let d = a.len() - 1;
    let mut roots = vec![C64::new(0.0, 0.0); lo];
    if d == 0 {
        return roots;
    }
    let lead = a[d];
    let mut comp = DMatrix::<C64>::zeros(d, d);
    for j in 0..d {
        comp[(0, j)] = -a[d - 1 - j] / lead;
    }
    for i in 1..d {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    if let Some(ev) = nalgebra::Schur::new(comp).eigenvalues() {
        roots.extend(ev.iter().copied());
    }
    roots
}

/// Support points of a dual certificate: the points where `|p(τ)| = 1`.
pub fn find_support(
    cert: &DualCertificate,
    unit_circle_tol: f64,
    magnitude_tol: f64,
) -> Result<Vec<f64>> {
    find_support_from_u(&cert.u, unit_circle_tol, magnitude_tol)
}

pub fn find_support_from_u(u: &[C64], unit_circle_tol: f64, magnitude_tol: f64) -> Result<Vec<f64>> {
    let n = u.len();
    let fc = n / 2;
    let unorm = u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if unorm < 1e-9 {
        return Ok(Vec::new());
    }
    // |p|² = Σ_k c_k z^k with c_k = Σ_n u_n conj(u_{n−k}); coefficients of
    // z^{2f_c}(1 − |p|²) for k = −2f_c..=2f_c.
    let deg = 4 * fc;
    let mut coef = vec![C64::new(0.0, 0.0); deg + 1];
    for (i, &ui) in u.iter().enumerate() {
        for (j, &uj) in u.iter().enumerate() {
            // k = i − j, position k + 2fc
            coef[i + 2 * fc - j] -= ui * uj.conj();
        }
    }
    coef[2 * fc] += 1.0;
    let cmax = coef.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if cmax < 1e-9 {
        return Err(Error::DegenerateCertificate);
    }

    let mut angles: Vec<f64> = poly_roots(&coef)
        .into_iter()
        .filter(|z| (z.norm() - 1.0).abs() < unit_circle_tol)
        .map(|z| (z.arg() / (2.0 * PI)).rem_euclid(1.0))
        .collect();
    angles.sort_by(f64::total_cmp);

    // Pair neighbouring roots (a double root splits into z, 1/z̄ under
    // perturbation); unmatched roots are kept as they are.
    let pair_tol = 1.0 / (8.0 * n as f64);
    let mut seeds = Vec::new();
    let mut i = 0;
    while i < angles.len() {
        if i + 1 < angles.len() && circ_dist(angles[i], angles[i + 1]) < pair_tol {
            let mid = angles[i] + 0.5 * (angles[i + 1] - angles[i]);
            seeds.push(mid);
            i += 2;
        } else {
            seeds.push(angles[i]);
            i += 1;
        }
    }
    // wrap-around pair between the last and first angle
    if seeds.len() >= 2 && angles.len() >= 2 {
        let (first, last) = (angles[0], angles[angles.len() - 1]);
        if circ_dist(first, last) < pair_tol && (last - first) > 0.5 {
            seeds.pop();
            seeds[0] = (last + 0.5 * circ_dist(first, last)).rem_euclid(1.0);
        }
    }

    let step = 1.0 / (4.0 * n as f64);
    let mut support: Vec<f64> = seeds
        .into_iter()
        .map(|t| polish(u, t, step))
        .filter(|&t| dual_polynomial_value(u, t).norm() >= 1.0 - magnitude_tol)
        .collect();
    support.sort_by(f64::total_cmp);
    support.dedup_by(|a, b| circ_dist(*a, *b) < 1e-7);
    if support.len() >= 2 && circ_dist(support[0], support[support.len() - 1]) < 1e-7 {
        support.pop();
    }
    Ok(support)
}

/// Vandermonde dictionary `F[n, k] = e^{-j2π n τ_k}`, `n = -f_c..=f_c`.
pub fn atom_matrix(f_c: usize, taus: &[f64]) -> DMatrix<C64> {
    let fc = f_c as i64;
    DMatrix::from_fn(2 * f_c + 1, taus.len(), |i, k| {
        C64::from_polar(1.0, -2.0 * PI * (i as i64 - fc) as f64 * taus[k])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// Amplitudes for every input location (not pruned).
    pub amplitudes: Vec<f64>,
    /// Input locations kept after pruning.
    pub kept: Vec<usize>,
    pub sigma2: f64,
    pub residual: f64,
}

/// Nonnegative amplitudes and noise power on a fixed support.
///
/// With unknown noise `σ² ≥ 0` is a variable of the fit. With known noise
/// the amplitudes are fitted without the `w` column (otherwise the free
/// `σ²` soaks up lag 0 and a large `epsilon_d` admits `s = 0`), and `σ²` is
/// re-estimated afterwards as the projection of the residual onto `w`.
///
/// `epsilon_d = 0` asks for an exact fit; since support points carry the
/// root finder's error (inherited from the SDP tolerance), an exact fit that
/// misses by less than `1e-3‖r‖` is accepted at its minimal residual.
pub fn refine(
    vm: &VirtualMeasurement,
    taus: &[f64],
    epsilon_d: f64,
    prune_frac: f64,
    tol: f64,
) -> Result<Refinement> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("refinement needs at least one location".into()));
    }
    let mut p = SocpProblem {
        f_est: atom_matrix(vm.f_c, taus),
        r: vm.r.clone(),
        w: vm.noise_direction().map(|w| w.to_vec()),
        epsilon_d,
    };
    let sol = match solve_l1_socp(&p, tol) {
        Err(Error::Infeasible { min_residual, .. }) => {
            let rnorm = vm.r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if epsilon_d == 0.0 && min_residual <= 1e-3 * rnorm.max(1.0) {
                p.epsilon_d = min_residual * (1.0 + 1e-6) + 1e-12;
                solve_l1_socp(&p, tol)?
            } else {
                return Err(Error::Infeasible {
                    budget: epsilon_d,
                    min_residual,
                });
            }
        }
        other => other?,
    };
    let amax = sol.s0.iter().copied().fold(0.0, f64::max);
    let kept = (0..taus.len())
        .filter(|&k| amax > 0.0 && sol.s0[k] >= prune_frac * amax)
        .collect();
    let sigma2 = match p.w {
        Some(_) => sol.sigma2,
        None => residual_noise_power(vm, &p.f_est, &sol.s0),
    };
    Ok(Refinement {
        amplitudes: sol.s0,
        kept,
        sigma2,
        residual: sol.residual,
    })
}

/// Least-squares noise power left in `r − F·s` along `w`, clipped at zero.
pub(crate) fn residual_noise_power(vm: &VirtualMeasurement, f_est: &DMatrix<C64>, s: &[f64]) -> f64 {
    let fs = f_est * DVector::from_iterator(s.len(), s.iter().map(|&a| C64::new(a, 0.0)));
    let (mut num, mut den) = (0.0, 0.0);
    for (i, w) in vm.w.iter().enumerate() {
        num += (w.conj() * (vm.r[i] - fs[i])).re;
        den += w.norm_sqr();
    }
    if den > 0.0 { (num / den).max(0.0) } else { 0.0 }
}

fn zero_certificate(f_c: usize, w: Option<&[C64]>) -> DualCertificate {
    let n = 2 * f_c + 1;
    let q = DMatrix::identity(n, n) / C64::new(n as f64, 0.0);
    let u = vec![C64::new(0.0, 0.0); n];
    DualCertificate {
        f_c,
        residuals: crate::conic::certificate_residuals(&u, &q, w),
        u,
        q,
        value: 0.0,
        primal_value: 0.0,
        noise_power: w.map(|_| 0.0),
        status: SolveStatus::Optimal,
        iterations: 0,
    }
}

fn make_spike(tau: f64, d_over_lambda: f64, amplitude: f64) -> (Spike, bool) {
    let t = wrap_tau(tau, d_over_lambda);
    let m = tau_to_doa(t, d_over_lambda);
    (
        Spike {
            tau: t,
            sin_theta: m.sin_theta,
            amplitude,
        },
        m.is_spurious(1e-6),
    )
}

pub fn csr_estimate(vm: &VirtualMeasurement, epsilon: f64, epsilon_d: f64) -> Result<SpectrumEstimate> {
    csr_estimate_with(vm, epsilon, epsilon_d, &CsrOptions::default())
}

pub fn csr_estimate_with(
    vm: &VirtualMeasurement,
    epsilon: f64,
    epsilon_d: f64,
    opts: &CsrOptions,
) -> Result<SpectrumEstimate> {
    if !(epsilon >= 0.0) || !(epsilon_d >= epsilon) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= epsilon <= epsilon_d, got epsilon = {epsilon}, epsilon_d = {epsilon_d}"
        )));
    }
    let known = match vm.mode {
        NoisePowerMode::Known(s2) => Some(s2),
        NoisePowerMode::Unknown => None,
    };
    let w = vm.noise_direction().map(|w| w.to_vec());
    let rnorm = vm.r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();

    let (cert, support) = if rnorm <= epsilon {
        (zero_certificate(vm.f_c, w.as_deref()), Vec::new())
    } else {
        let prob = SdpProblem::new(vm.r.clone(), w, epsilon)?;
        let cert = solve_dual_sdp(&prob, opts.solver_tol)?;
        let support = find_support(&cert, opts.unit_circle_tol, opts.magnitude_tol)?;
        (cert, support)
    };

    let mut spikes = Vec::new();
    let mut candidates = Vec::new();
    let mut spurious_roots = 0;
    let (sigma2, residual) = if support.is_empty() {
        let s2 = cert.noise_power.unwrap_or(0.0);
        (s2, rnorm)
    } else {
        let refined = refine(vm, &support, epsilon_d, opts.prune_frac, opts.solver_tol)?;
        for (k, &t) in support.iter().enumerate() {
            let (spike, spurious) = make_spike(t, vm.d_over_lambda, refined.amplitudes[k]);
            if spurious {
                spurious_roots += 1;
                continue;
            }
            candidates.push(spike);
            if refined.kept.contains(&k) {
                spikes.push(spike);
            }
        }
        (refined.sigma2, refined.residual)
    };
    spikes.sort_by(|a, b| a.sin_theta.total_cmp(&b.sin_theta));
    candidates.sort_by(|a, b| a.sin_theta.total_cmp(&b.sin_theta));

    Ok(SpectrumEstimate {
        spikes,
        candidates,
        noise_power_est: sigma2 + known.unwrap_or(0.0),
        noise_power_known: known,
        diagnostics: Diagnostics {
            dual_value: Some(cert.value),
            refinement_residual: residual,
            sdp_status: Some(cert.status),
            sdp_iterations: cert.iterations,
            spurious_roots,
        },
        certificate: Some(cert),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarray::{doa_to_tau, to_super_resolution, virtualize, CombineRule};
    use crate::geometry::ArrayGeometry;
    use crate::sim::{exact_covariance, SourceScene};

    fn measurement(doas: &[f64], powers: &[f64], noise: f64, mode: NoisePowerMode) -> VirtualMeasurement {
        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        let scene = SourceScene::new(doas.to_vec(), powers.to_vec(), noise).unwrap();
        let r = exact_covariance(&g, &scene).unwrap();
        let z = virtualize(&r, &g, CombineRule::Average).unwrap();
        to_super_resolution(&z, 0.5, mode)
    }

    #[test]
    fn polynomial_cosine_support() {
        let u = vec![C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)];
        let s = find_support_from_u(&u, 1e-2, 1e-3).unwrap();
        assert_eq!(s.len(), 2, "{s:?}");
        assert!(circ_dist(s[0], 0.0) < 1e-9 && (s[1] - 0.5).abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn degenerate_and_zero_certificates() {
        let mut u = vec![C64::new(0.0, 0.0); 5];
        u[2] = C64::new(0.0, 1.0);
        assert!(matches!(
            find_support_from_u(&u, 1e-2, 1e-3),
            Err(Error::DegenerateCertificate)
        ));
        let zero = vec![C64::new(0.0, 0.0); 5];
        assert!(find_support_from_u(&zero, 1e-2, 1e-3).unwrap().is_empty());
    }

    #[test]
    fn grid_evaluation_matches_pointwise() {
        let u: Vec<C64> = (0..7).map(|i| C64::new(i as f64 * 0.1, -(i as f64) * 0.05)).collect();
        let taus = [0.0, 0.13, 0.5, 0.91];
        let g = dual_polynomial_grid(&u, &taus);
        for (k, &t) in taus.iter().enumerate() {
            let direct: C64 = (0..7)
                .map(|i| u[i] * C64::from_polar(1.0, 2.0 * PI * (i as f64 - 3.0) * t))
                .sum();
            assert!((g[k] - direct).norm() < 1e-13);
        }
    }

    #[test]
    fn single_spike_noiseless() {
        let vm = measurement(&[0.5], &[1.0], 0.0, NoisePowerMode::Known(0.0));
        let est = csr_estimate(&vm, 0.0, 0.0).unwrap();
        assert_eq!(est.spikes.len(), 1, "{est}");
        assert!((est.spikes[0].sin_theta - 0.5).abs() < 1e-6);
        assert!((est.spikes[0].amplitude - 1.0).abs() < 1e-6);
        assert!((est.spikes[0].tau - 0.25).abs() < 1e-6);
    }

    #[test]
    fn two_spikes_unknown_noise() {
        let vm = measurement(&[-0.3, 0.4], &[1.0, 2.0], 0.5, NoisePowerMode::Unknown);
        let est = csr_estimate(&vm, 0.0, 0.0).unwrap();
        assert_eq!(est.spikes.len(), 2, "{est}");
        assert!((est.spikes[0].sin_theta + 0.3).abs() < 1e-5);
        assert!((est.spikes[1].sin_theta - 0.4).abs() < 1e-5);
        assert!((est.spikes[1].amplitude - 2.0).abs() < 1e-4);
        assert!((est.noise_power_est - 0.5).abs() < 1e-4);
        for s in &est.spikes {
            assert!((est.certificate.as_ref().unwrap().polynomial(s.tau).norm() - 1.0).abs() < 1e-3);
            assert_eq!(s.sin_theta, tau_to_doa(s.tau, 0.5).sin_theta);
        }
    }

    #[test]
    fn refine_zeroes_spurious_locations() {
        let vm = measurement(&[-0.3, 0.4], &[1.0, 2.0], 0.0, NoisePowerMode::Known(0.0));
        let taus = [doa_to_tau(-0.3, 0.5), 0.1, doa_to_tau(0.4, 0.5), 0.9];
        let r = refine(&vm, &taus, 0.0, 0.01, 1e-9).unwrap();
        assert!((r.amplitudes[0] - 1.0).abs() < 1e-7);
        assert!((r.amplitudes[2] - 2.0).abs() < 1e-7);
        assert!(r.amplitudes[1].abs() < 1e-8 && r.amplitudes[3].abs() < 1e-8);
        assert_eq!(r.kept, vec![0, 2]);
    }

    #[test]
    fn budget_above_signal_gives_empty_estimate() {
        let vm = measurement(&[0.1], &[0.01], 0.0, NoisePowerMode::Known(0.0));
        let est = csr_estimate(&vm, 10.0, 20.0).unwrap();
        assert!(est.spikes.is_empty());
        assert!(csr_estimate(&vm, 1.0, 0.5).is_err());
    }

    #[test]
    fn estimate_json_and_display() {
        let vm = measurement(&[0.2], &[1.0], 0.1, NoisePowerMode::Unknown);
        let est = csr_estimate(&vm, 0.0, 0.0).unwrap();
        let s = serde_json::to_string(&est).unwrap();
        let back: SpectrumEstimate = serde_json::from_str(&s).unwrap();
        assert_eq!(back, est);
        let table = est.to_string();
        assert!(table.contains("sin(theta)") && table.contains("0.200000"));
    }
}
