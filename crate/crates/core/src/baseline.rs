//! Subspace and on-grid baselines on the coarray vector: spatial-smoothing
//! MUSIC, root-MUSIC and nonnegative basis pursuit over a `sinθ` grid.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coarray::{doa_to_tau, CoarrayVector, NoisePowerMode, VirtualMeasurement};
use crate::conic::{solve_l1_socp, SocpProblem};
use crate::error::{Error, Result};
use crate::superres::{atom_matrix, poly_roots, Diagnostics, Spike, SpectrumEstimate};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCovariance {
    pub rss: DMatrix<C64>,
    pub f_c: usize,
}

impl SmoothedCovariance {
    pub fn dim(&self) -> usize {
        self.f_c + 1
    }

    /// Eigenvalues (descending) and matching eigenvectors as columns.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<C64>) {
        let eig = self.rss.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }

    fn noise_subspace(&self, k: usize) -> Result<DMatrix<C64>> {
        if k == 0 || k > self.f_c {
            return Err(Error::InvalidArgument(format!(
                "source count {k} must lie in 1..={}",
                self.f_c
            )));
        }
        let (_, v) = self.eigen();
        Ok(v.columns(k, self.dim() - k).into_owned())
    }
}

/// Forward spatial smoothing: `Rss = (1/(f_c+1)) Σ_i z_i z_i*` with
/// `z_i = z̃(i − f_c ..= i)`.
pub fn spatial_smooth(z: &CoarrayVector) -> Result<SmoothedCovariance> {
    let fc = z.f_c;
    if fc == 0 {
        return Err(Error::InvalidArgument("spatial smoothing needs f_c >= 1".into()));
    }
    let m = fc + 1;
    let mut rss = DMatrix::<C64>::zeros(m, m);
    for i in 0..m {
        let zi: Vec<C64> = (0..m).map(|a| z.at(i as i64 - fc as i64 + a as i64)).collect();
        for a in 0..m {
            for b in 0..m {
                rss[(a, b)] += zi[a] * zi[b].conj();
            }
        }
    }
    rss /= C64::new(m as f64, 0.0);
    Ok(SmoothedCovariance { rss, f_c: fc })
}

fn ula_steering(m: usize, sin_theta: f64, d_over_lambda: f64) -> impl Iterator<Item = C64> {
    let w = 2.0 * PI * d_over_lambda * sin_theta;
    (0..m).map(move |a| C64::from_polar(1.0, w * a as f64))
}

/// MUSIC pseudospectrum `1/‖E_n* a(θ)‖²` on `grid` (values of `sinθ`),
/// normalized to a maximum of 1.
pub fn music_spectrum(
    rss: &SmoothedCovariance,
    k: usize,
    grid: &[f64],
    d_over_lambda: f64,
) -> Result<Vec<f64>> {
    let en = rss.noise_subspace(k)?;
    let m = rss.dim();
    let mut vals: Vec<f64> = grid
        .iter()
        .map(|&s| {
            let a: Vec<C64> = ula_steering(m, s, d_over_lambda).collect();
            let mut acc = 0.0;
            for c in 0..en.ncols() {
                let p: C64 = (0..m).map(|r| en[(r, c)].conj() * a[r]).sum();
                acc += p.norm_sqr();
            }
            1.0 / acc.max(f64::MIN_POSITIVE)
        })
        .collect();
    let max = vals.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        vals.iter_mut().for_each(|v| *v /= max);
    }
    Ok(vals)
}

/// Uniform `sinθ` grid from −1 to 1 (inclusive) with the given step.
pub fn sin_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || step > 2.0 {
        return Err(Error::InvalidArgument(format!("grid step {step} must lie in (0, 2]")));
    }
    let n = (2.0 / step).round() as usize;
    Ok((0..=n).map(|i| if i == n { 1.0 } else { -1.0 + i as f64 * step }).collect())
}

pub fn write_spectrum_csv<W: Write>(out: W, grid: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sin_theta", "value"])?;
    for (s, v) in grid.iter().zip(values) {
        w.write_record([format!("{s:.6}"), format!("{v:.10e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootMusicRoot {
    pub sin_theta: f64,
    pub modulus: f64,
}

/// Roots of the noise-subspace polynomial inside the unit disk, closest to
/// the circle first.
pub fn root_music_roots(rss: &SmoothedCovariance, k: usize, d_over_lambda: f64) -> Result<Vec<RootMusicRoot>> {
    let en = rss.noise_subspace(k)?;
    let c = &en * en.adjoint();
    let m = rss.dim();
    let fc = rss.f_c;
    // a(z)* C a(z) on |z| = 1 gives Σ_k (Σ_{b−a=k} C_ab) z^k, k = −f_c..=f_c
    let mut coef = vec![C64::new(0.0, 0.0); 2 * fc + 1];
    for a in 0..m {
        for b in 0..m {
            coef[b + fc - a] += c[(a, b)];
        }
    }
    let mut roots = poly_roots(&coef);
    if roots.len() < k {
        return Err(Error::Linalg("root-MUSIC polynomial has too few roots".into()));
    }
    roots.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    // roots come in reciprocal pairs; the smaller half lies inside the disk
    let mut inside: Vec<C64> = roots[..roots.len() / 2].to_vec();
    inside.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    Ok(inside
        .into_iter()
        .map(|z| RootMusicRoot {
            sin_theta: (z.arg() / (2.0 * PI * d_over_lambda)).clamp(-1.0, 1.0),
            modulus: z.norm(),
        })
        .collect())
}

/// `k` source directions (`sinθ`, ascending) from root-MUSIC.
pub fn root_music(rss: &SmoothedCovariance, k: usize, d_over_lambda: f64) -> Result<Vec<f64>> {
    let roots = root_music_roots(rss, k, d_over_lambda)?;
    if roots.len() < k {
        return Err(Error::Linalg(format!(
            "root-MUSIC found {} roots inside the unit disk, need {k}",
            roots.len()
        )));
    }
    let mut s: Vec<f64> = roots[..k].iter().map(|r| r.sin_theta).collect();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsrOptions {
    pub prune_frac: f64,
    pub solver_tol: f64,
}

impl Default for DsrOptions {
    fn default() -> Self {
        DsrOptions {
            prune_frac: 0.01,
            solver_tol: 1e-7,
        }
    }
}

/// Nonnegative basis pursuit over a uniform `sinθ` grid.
pub fn dsr_estimate(vm: &VirtualMeasurement, grid_step: f64, epsilon: f64) -> Result<SpectrumEstimate> {
    dsr_estimate_with(vm, grid_step, epsilon, &DsrOptions::default())
}

pub fn dsr_estimate_with(
    vm: &VirtualMeasurement,
    grid_step: f64,
    epsilon: f64,
    opts: &DsrOptions,
) -> Result<SpectrumEstimate> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let grid = sin_grid(grid_step)?;
    let taus: Vec<f64> = grid.iter().map(|&s| doa_to_tau(s, vm.d_over_lambda)).collect();
    let p = SocpProblem {
        f_est: atom_matrix(vm.f_c, &taus),
        r: vm.r.clone(),
        w: vm.noise_direction().map(|w| w.to_vec()),
        epsilon_d: epsilon,
    };
    let sol = solve_l1_socp(&p, opts.solver_tol)?;
    let sigma2 = match p.w {
        Some(_) => sol.sigma2,
        None => crate::superres::residual_noise_power(vm, &p.f_est, &sol.s0),
    };
    let amax = sol.s0.iter().copied().fold(0.0, f64::max);
    let mut spikes = Vec::new();
    let mut candidates = Vec::new();
    for (g, &a) in sol.s0.iter().enumerate() {
        let spike = Spike {
            tau: taus[g],
            sin_theta: grid[g],
            amplitude: a,
        };
        if a > 1e-9 * amax {
            candidates.push(spike);
        }
        if amax > 0.0 && a >= opts.prune_frac * amax {
            spikes.push(spike);
        }
    }
    let known = match vm.mode {
        NoisePowerMode::Known(s2) => Some(s2),
        NoisePowerMode::Unknown => None,
    };
    Ok(SpectrumEstimate {
        spikes,
        candidates,
        noise_power_est: sigma2 + known.unwrap_or(0.0),
        noise_power_known: known,
        certificate: None,
        diagnostics: Diagnostics {
            dual_value: None,
            refinement_residual: sol.residual,
            sdp_status: None,
            sdp_iterations: sol.iterations,
            spurious_roots: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarray::{to_super_resolution, virtualize, CombineRule};
    use crate::geometry::ArrayGeometry;
    use crate::sim::{exact_covariance, SourceScene};

    fn coarray(doas: &[f64], noise: f64) -> CoarrayVector {
        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        let scene = SourceScene::equal_power(doas.to_vec(), 1.0, noise).unwrap();
        let r = exact_covariance(&g, &scene).unwrap();
        virtualize(&r, &g, CombineRule::Average).unwrap()
    }

    fn is_hermitian(m: &DMatrix<C64>, tol: f64) -> bool {
        (m - m.adjoint()).iter().all(|d| d.norm() <= tol)
    }

    #[test]
    fn smoothing_is_hermitian_with_signal_rank() {
        let doas: Vec<f64> = (0..5).map(|i| -0.8 + 0.37 * i as f64).collect();
        let rss = spatial_smooth(&coarray(&doas, 0.0)).unwrap();
        assert!(is_hermitian(&rss.rss, 1e-12));
        let ev = rss.eigenvalues();
        assert!(ev[4] > 1e-3, "{ev:?}");
        assert!(ev[5].abs() < 1e-9 * ev[0], "{ev:?}");
    }

    #[test]
    fn lag_zero_indicator_gives_scaled_identity() {
        // every subvector holds lag 0 once, at a different offset
        let mut values = vec![C64::new(0.0, 0.0); 7];
        values[3] = C64::new(1.0, 0.0);
        let rss = spatial_smooth(&CoarrayVector { values, f_c: 3 }).unwrap();
        let expect = DMatrix::<C64>::identity(4, 4) * C64::new(0.25, 0.0);
        assert!((rss.rss - expect).norm() < 1e-15);
        assert!(spatial_smooth(&CoarrayVector { values: vec![C64::new(1.0, 0.0)], f_c: 0 }).is_err());
    }

    #[test]
    fn root_music_exact_single_source() {
        let rss = spatial_smooth(&coarray(&[0.3], 0.0)).unwrap();
        let s = root_music(&rss, 1, 0.5).unwrap();
        assert!((s[0] - 0.3).abs() < 1e-8, "{s:?}");
    }

    #[test]
    fn root_music_extra_roots_sit_off_circle() {
        let rss = spatial_smooth(&coarray(&[-0.4, 0.3], 0.0)).unwrap();
        let roots = root_music_roots(&rss, 4, 0.5).unwrap();
        assert!(roots[0].modulus > 1.0 - 1e-6 && roots[1].modulus > 1.0 - 1e-6);
        assert!(roots[2].modulus < 0.99, "{roots:?}");
    }

    #[test]
    fn music_peak_and_scale_invariance() {
        let rss = spatial_smooth(&coarray(&[0.3], 0.1)).unwrap();
        let grid = sin_grid(0.005).unwrap();
        assert_eq!(grid.len(), 401);
        let p = music_spectrum(&rss, 1, &grid, 0.5).unwrap();
        let imax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert!((grid[imax] - 0.3).abs() <= 0.0025 + 1e-12);
        assert!((p[imax] - 1.0).abs() < 1e-12);
        let scaled = SmoothedCovariance {
            rss: &rss.rss * C64::new(7.5, 0.0),
            f_c: rss.f_c,
        };
        let q = music_spectrum(&scaled, 1, &grid, 0.5).unwrap();
        assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(music_spectrum(&rss, 18, &grid, 0.5).is_err());
    }

    #[test]
    fn spectrum_csv_layout() {
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[-1.0, 0.0], &[0.5, 1.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("sin_theta,value"));
    }

    #[test]
    fn dsr_on_grid_source_is_exact() {
        let z = coarray(&[0.25], 0.0);
        let vm = to_super_resolution(&z, 0.5, NoisePowerMode::Known(0.0));
        let est = dsr_estimate(&vm, 0.005, 0.0).unwrap();
        assert_eq!(est.spikes.len(), 1, "{est}");
        assert!((est.spikes[0].sin_theta - 0.25).abs() < 1e-12);
        assert!((est.spikes[0].amplitude - 1.0).abs() < 1e-5);
    }

    #[test]
    fn dsr_off_grid_source_spreads() {
        let z = coarray(&[0.2525], 0.0);
        let vm = to_super_resolution(&z, 0.5, NoisePowerMode::Known(0.0));
        assert!(matches!(dsr_estimate(&vm, 0.005, 0.0), Err(Error::Infeasible { .. })));
        let est = dsr_estimate(&vm, 0.005, 0.05).unwrap();
        assert!(est.spikes.len() >= 2, "{est}");
        assert!(est.spikes.iter().any(|s| (s.sin_theta - 0.25).abs() < 1e-9));
        assert!(est.spikes.iter().any(|s| (s.sin_theta - 0.255).abs() < 1e-9));
    }
}
