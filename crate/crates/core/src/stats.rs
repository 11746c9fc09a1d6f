//! Monte Carlo checks of the Gaussian concentration bounds behind the
//! coarray noise model, plus the Fejér-kernel smoothed error metric.

use std::f64::consts::PI;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarray::doa_to_tau;
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::sim::{complex_normal, derive_seed, rng_from_seed, SourceScene};
use crate::superres::SpectrumEstimate;
use crate::C64;

pub const MIN_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheckReport {
    pub label: String,
    pub epsilon_grid: Vec<f64>,
    pub empirical_freq: Vec<f64>,
    pub bound_values: Vec<f64>,
    pub trials: usize,
    /// `empirical ≤ bound + 3·sqrt(b(1−b)/trials)` with `b = min(bound, 1)`.
    pub passed: Vec<bool>,
    /// False where `ε` lies outside the bound's stated range.
    pub in_validity: Vec<bool>,
}

impl TailCheckReport {
    fn build(label: &str, eps: &[f64], stats: &[f64], bound: impl Fn(f64) -> f64, valid: impl Fn(f64) -> bool) -> Self {
        let trials = stats.len();
        let mut empirical_freq = Vec::with_capacity(eps.len());
        let mut bound_values = Vec::with_capacity(eps.len());
        let mut passed = Vec::with_capacity(eps.len());
        for &e in eps {
            let freq = stats.iter().filter(|&&s| s >= e).count() as f64 / trials as f64;
            let b = bound(e);
            let bc = b.min(1.0);
            let slack = 3.0 * (bc * (1.0 - bc) / trials as f64).sqrt();
            empirical_freq.push(freq);
            bound_values.push(b);
            passed.push(freq <= b + slack);
        }
        TailCheckReport {
            label: label.to_string(),
            epsilon_grid: eps.to_vec(),
            empirical_freq,
            bound_values,
            trials,
            passed,
            in_validity: eps.iter().map(|&e| valid(e)).collect(),
        }
    }

    /// Every grid point inside the validity range passed.
    pub fn all_passed(&self) -> bool {
        self.passed.iter().zip(&self.in_validity).all(|(&p, &v)| p || !v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "epsilon", "empirical", "bound", "passed", "in_validity"])?;
        for i in 0..self.epsilon_grid.len() {
            w.write_record([
                self.label.clone(),
                format!("{:.6e}", self.epsilon_grid[i]),
                format!("{:.6e}", self.empirical_freq[i]),
                format!("{:.6e}", self.bound_values[i]),
                self.passed[i].to_string(),
                self.in_validity[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_common(t: usize, eps: &[f64], trials: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument("epsilon grid must be nonnegative".into()));
    }
    Ok(())
}

fn run_trials(trials: usize, seed: u64, f: impl Fn(u64) -> f64 + Sync) -> Vec<f64> {
    (0..trials as u64).into_par_iter().map(|i| f(derive_seed(seed, i))).collect()
}

/// `n` points spaced geometrically from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

pub fn xy_tail_bound(t: usize, sx: f64, sy: f64, eps: f64) -> f64 {
    let p = sx * sy;
    if p == 0.0 {
        return if eps > 0.0 { 0.0 } else { 8.0 };
    }
    8.0 * (-eps * eps / (16.0 * p * (t as f64 * p + eps / 4.0))).exp()
}

pub fn xx_tail_bound(t: usize, sx: f64, eps: f64) -> f64 {
    4.0 * (-eps * eps / (16.0 * t as f64 * sx.powi(4))).exp()
}

pub fn real_square_bound(t: usize, s: f64, eps: f64) -> f64 {
    2.0 * (-eps * eps / (16.0 * s.powi(4) * t as f64)).exp()
}

/// Frequency of `|Σ_t x(t) y*(t)| ≥ ε` for independent `CN(0, σx²)`,
/// `CN(0, σy²)` sequences against `8exp(−ε²/(16σxσy(Tσxσy + ε/4)))`.
pub fn tail_check_xy(t: usize, sx: f64, sy: f64, eps: &[f64], trials: usize, seed: u64) -> Result<TailCheckReport> {
    check_common(t, eps, trials)?;
    let stats = run_trials(trials, seed, |s| {
        let mut rng = rng_from_seed(s);
        let mut acc = C64::new(0.0, 0.0);
        for _ in 0..t {
            let x = complex_normal(&mut rng, sx * sx);
            let y = complex_normal(&mut rng, sy * sy);
            acc += x * y.conj();
        }
        acc.norm()
    });
    Ok(TailCheckReport::build("xy", eps, &stats, |e| xy_tail_bound(t, sx, sy, e), |_| true))
}

pub fn default_xy_grid(t: usize, sx: f64, sy: f64) -> Vec<f64> {
    let base = (t as f64).sqrt() * sx * sy;
    geometric_grid(0.5 * base, 10.0 * base, 10)
}

/// Frequency of `|Σ_t |x(t)|² − Tσx²| ≥ ε` against `4exp(−ε²/(16Tσx⁴))`,
/// valid for `ε ≤ 4σx²T`.
pub fn tail_check_xx(t: usize, sx: f64, eps: &[f64], trials: usize, seed: u64) -> Result<TailCheckReport> {
    check_common(t, eps, trials)?;
    let v = sx * sx;
    let stats = run_trials(trials, seed, |s| {
        let mut rng = rng_from_seed(s);
        let sum: f64 = (0..t).map(|_| complex_normal(&mut rng, v).norm_sqr()).sum();
        (sum - t as f64 * v).abs()
    });
    let limit = 4.0 * v * t as f64;
    Ok(TailCheckReport::build("xx", eps, &stats, |e| xx_tail_bound(t, sx, e), |e| e <= limit))
}

/// Real counterpart: `|Σ_t x(t)² − Tσ²| ≥ ε` for `N(0, σ²)` against
/// `2exp(−ε²/(16σ⁴T))`, valid for `ε ≤ 4σ²T`.
pub fn tail_check_real_square(t: usize, s: f64, eps: &[f64], trials: usize, seed: u64) -> Result<TailCheckReport> {
    check_common(t, eps, trials)?;
    let stats = run_trials(trials, seed, |sd| {
        let mut rng = rng_from_seed(sd);
        let sum: f64 = (0..t)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                (s * g).powi(2)
            })
            .sum();
        (sum - t as f64 * s * s).abs()
    });
    let limit = 4.0 * s * s * t as f64;
    Ok(TailCheckReport::build("real-square", eps, &stats, |e| real_square_bound(t, s, e), |e| e <= limit))
}

/// Grid for the squared-sum checks: `√T·σ²` up to the validity limit `4σ²T`.
pub fn default_square_grid(t: usize, s: f64) -> Vec<f64> {
    let v = s * s;
    geometric_grid((t as f64).sqrt() * v, 4.0 * v * t as f64, 10)
}

/// Rates `C_1..C_4` of the coarray error tail bound for `K` sources of power
/// `σ_s²` in noise of power `σ²`.
pub fn emn_constants(eps: f64, source_power: f64, noise_power: f64, k: usize) -> [f64; 4] {
    let kk = (k * k.saturating_sub(1)) as f64;
    let ss = source_power.sqrt();
    let s = noise_power.sqrt();
    let e2 = eps * eps;
    let ratio = |den: f64| if den == 0.0 { f64::INFINITY } else { e2 / den };
    [
        ratio(16.0 * source_power * kk * (16.0 * source_power * kk + eps)),
        ratio(16.0 * ss * s * k as f64 * (16.0 * ss * s * k as f64 + eps)),
        ratio(16.0 * noise_power * (16.0 * noise_power + eps)),
        ratio(256.0 * noise_power * noise_power),
    ]
}

/// Composite bound on `Pr(|E_mn| ≥ ε)`.
pub fn emn_bound(eps: f64, source_power: f64, noise_power: f64, k: usize, t: usize, diagonal: bool) -> f64 {
    let c = emn_constants(eps, source_power, noise_power, k);
    let t = t as f64;
    let term = |w: f64, c: f64| if c.is_infinite() { 0.0 } else { w * (-c * t).exp() };
    let last = if diagonal { term(4.0, c[3]) } else { term(8.0, c[2]) };
    term(8.0, c[0]) + term(16.0, c[1]) + last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmnTailReport {
    pub off_diagonal: TailCheckReport,
    pub diagonal: TailCheckReport,
    /// Sensor index pairs used for each report.
    pub off_diagonal_pair: (usize, usize),
    pub diagonal_index: usize,
    /// `C_1..C_4` strictly increase along the grid (where finite and nonzero).
    pub constants_increasing: bool,
}

impl EmnTailReport {
    pub fn all_passed(&self) -> bool {
        self.off_diagonal.all_passed() && self.diagonal.all_passed() && self.constants_increasing
    }
}

/// Tail of the sample-covariance error entry
/// `E_mn = R̂_mn − Σ_i A_mi A_ni* p̂_i − σ²δ_mn` (with `p̂_i` the sample
/// source powers) for one off-diagonal and one diagonal entry.
pub fn emn_tail_check(
    geom: &ArrayGeometry,
    scene: &SourceScene,
    t: usize,
    eps: &[f64],
    trials: usize,
    seed: u64,
) -> Result<EmnTailReport> {
    check_common(t, eps, trials)?;
    let k = scene.num_sources();
    if k == 0 || scene.powers.len() != k || scene.doas.iter().any(|d| !(d.abs() <= 1.0)) {
        return Err(Error::InvalidScene("need at least one source with sinθ in [-1, 1]".into()));
    }
    if !(scene.noise_power >= 0.0) || scene.powers.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidScene("powers must be nonnegative".into()));
    }
    let sp = scene.powers.first().copied().unwrap_or(0.0);
    if scene.powers.iter().any(|&p| p != sp) {
        return Err(Error::InvalidScene("error-entry bound assumes equal source powers".into()));
    }
    let noise = scene.noise_power;
    let a = geom.steering_matrix(&scene.doas)?;
    let (m, n) = (0, geom.num_sensors() - 1);
    let stats: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i));
            let mut r_mn = C64::new(0.0, 0.0);
            let mut r_mm = 0.0;
            let mut pow = vec![0.0; k];
            for _ in 0..t {
                let s: Vec<C64> = (0..k).map(|_| complex_normal(&mut rng, sp)).collect();
                let em = complex_normal(&mut rng, noise);
                let en = complex_normal(&mut rng, noise);
                let mut xm = em;
                let mut xn = en;
                for (j, sj) in s.iter().enumerate() {
                    xm += a[(m, j)] * sj;
                    xn += a[(n, j)] * sj;
                    pow[j] += sj.norm_sqr();
                }
                r_mn += xm * xn.conj();
                r_mm += xm.norm_sqr();
            }
            let tf = t as f64;
            let mut e_mn = r_mn / tf;
            let mut e_mm = r_mm / tf - noise;
            for j in 0..k {
                let pj = pow[j] / tf;
                e_mn -= a[(m, j)] * a[(n, j)].conj() * pj;
                e_mm -= a[(m, j)].norm_sqr() * pj;
            }
            (e_mn.norm(), e_mm.abs())
        })
        .collect();
    let off: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let diag: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let off_diagonal = TailCheckReport::build("emn-off-diagonal", eps, &off, |e| emn_bound(e, sp, noise, k, t, false), |_| true);
    let diagonal = TailCheckReport::build(
        "emn-diagonal",
        eps,
        &diag,
        |e| emn_bound(e, sp, noise, k, t, true),
        |e| e <= 16.0 * noise,
    );

    let mut sorted = eps.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let cs: Vec<[f64; 4]> = sorted.iter().map(|&e| emn_constants(e, sp, noise, k)).collect();
    let constants_increasing = cs.windows(2).all(|w| {
        (0..4).all(|i| {
            let (a, b) = (w[0][i], w[1][i]);
            !(a.is_finite() && b.is_finite() && b > 0.0) || b > a
        })
    });
    Ok(EmnTailReport {
        off_diagonal,
        diagonal,
        off_diagonal_pair: (m, n),
        diagonal_index: m,
        constants_increasing,
    })
}

/// `ε` grid for the error-entry check: up to the diagonal validity limit `16σ²`.
pub fn default_emn_grid(noise_power: f64) -> Vec<f64> {
    let hi = 16.0 * noise_power.max(f64::MIN_POSITIVE);
    (1..=10).map(|i| hi * i as f64 / 10.0).collect()
}

/// Fejér kernel `(1/(f_h+1))·(sin(π(f_h+1)t)/sin(πt))²`, equal to `f_h+1`
/// at integer `t`.
pub fn fejer_kernel(f_h: usize, t: f64) -> f64 {
    let s = (PI * t).sin();
    if s.abs() < 1e-7 {
        return fejer_kernel_sum(f_h, t);
    }
    let n = (f_h + 1) as f64;
    let q = (PI * n * t).sin() / s;
    q * q / n
}

/// Coefficient form `(1/(f_h+1))·Σ_{|k|≤f_h} (f_h+1−|k|) e^{j2πkt}`.
pub fn fejer_kernel_sum(f_h: usize, t: f64) -> f64 {
    let n = (f_h + 1) as f64;
    let mut acc = n;
    for k in 1..=f_h {
        acc += 2.0 * (n - k as f64) * (2.0 * PI * k as f64 * t).cos();
    }
    acc / n
}

/// `∫₀¹ |Σ_k a_k K_h(t−τ_k) − Σ_j b_j K_h(t−τ_j)| dt` by the rectangle rule
/// on `grid_points` uniform nodes.
pub fn smoothed_l1_distance(a: &[(f64, f64)], b: &[(f64, f64)], f_h: usize, grid_points: usize) -> f64 {
    let n = grid_points.max(1);
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let fa: f64 = a.iter().map(|&(tau, w)| w * fejer_kernel(f_h, t - tau)).sum();
            let fb: f64 = b.iter().map(|&(tau, w)| w * fejer_kernel(f_h, t - tau)).sum();
            (fa - fb).abs()
        })
        .sum::<f64>()
        / n as f64
}

/// Smoothed L1 distance between the reported spikes and the true spike train.
pub fn smoothed_l1_error(
    est: &SpectrumEstimate,
    truth: &SourceScene,
    d_over_lambda: f64,
    f_h: usize,
    grid_points: usize,
) -> Result<f64> {
    if f_h == 0 || grid_points == 0 {
        return Err(Error::InvalidArgument("need f_h >= 1 and grid_points >= 1".into()));
    }
    let a: Vec<(f64, f64)> = est.spikes.iter().map(|s| (s.tau, s.amplitude)).collect();
    let b: Vec<(f64, f64)> = truth
        .doas
        .iter()
        .zip(&truth.powers)
        .map(|(&s, &p)| (doa_to_tau(s, d_over_lambda), p))
        .collect();
    Ok(smoothed_l1_distance(&a, &b, f_h, grid_points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn xy_trivial_cases() {
        let r = tail_check_xy(10, 1.0, 0.0, &[0.5, 1.0], 1000, 1).unwrap();
        assert!(r.empirical_freq.iter().all(|&f| f == 0.0));
        assert!(r.all_passed());
        let r = tail_check_xy(10, 1.0, 1.0, &[0.01], 1000, 1).unwrap();
        assert!(r.bound_values[0] >= 1.0 && r.passed[0]);
        assert!(tail_check_xy(10, 1.0, 1.0, &[1.0], 999, 1).is_err());
    }

    #[test]
    fn xx_zero_epsilon_and_validity() {
        let r = tail_check_xx(20, 1.0, &[0.0, 81.0], 1000, 2).unwrap();
        assert_eq!(r.empirical_freq[0], 1.0);
        assert_eq!(r.bound_values[0], 4.0);
        assert!(r.passed[0]);
        assert_eq!(r.in_validity, vec![true, false]);
    }

    #[test]
    fn frequencies_nonincreasing() {
        let g = default_xy_grid(50, 1.0, 2.0);
        let r = tail_check_xy(50, 1.0, 2.0, &g, 2000, 3).unwrap();
        assert!(r.empirical_freq.windows(2).all(|w| w[1] <= w[0]));
        let again = tail_check_xy(50, 1.0, 2.0, &g, 2000, 3).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn emn_zero_scene_and_unequal_powers() {
        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        let s = SourceScene {
            doas: vec![0.1, 0.5],
            powers: vec![0.0, 0.0],
            noise_power: 0.0,
        };
        let r = emn_tail_check(&g, &s, 10, &[0.1, 1.0], 1000, 4).unwrap();
        assert!(r.off_diagonal.empirical_freq.iter().all(|&f| f == 0.0));
        assert!(r.diagonal.empirical_freq.iter().all(|&f| f == 0.0));
        let s = SourceScene::new(vec![0.1, 0.5], vec![1.0, 2.0], 1.0).unwrap();
        assert!(emn_tail_check(&g, &s, 10, &[1.0], 1000, 4).is_err());
    }

    #[test]
    fn c1_increases() {
        let c: Vec<f64> = (1..20).map(|i| emn_constants(i as f64 * 0.5, 1.0, 0.5, 3)[0]).collect();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fejer_basics() {
        for fh in [1, 5, 18, 40] {
            assert_eq!(fejer_kernel(fh, 0.0), (fh + 1) as f64);
            assert!((fejer_kernel(fh, 1.0) - (fh + 1) as f64).abs() < 1e-9);
            let n = 4 * (fh + 1);
            let integral: f64 = (0..n).map(|i| fejer_kernel(fh, i as f64 / n as f64)).sum::<f64>() / n as f64;
            assert!((integral - 1.0).abs() < 1e-8, "{fh}: {integral}");
        }
    }

    #[test]
    fn fejer_forms_agree() {
        let mut rng = rng_from_seed(9);
        for _ in 0..1000 {
            let t: f64 = rng.random_range(-2.0..2.0);
            let fh = rng.random_range(1..40);
            let (a, b) = (fejer_kernel(fh, t), fejer_kernel_sum(fh, t));
            assert!((a - b).abs() < 1e-10, "{fh} {t}: {a} vs {b}");
        }
    }

    #[test]
    fn smoothed_error_of_single_amplitude_error() {
        let a = [(0.3, 1.5)];
        let b = [(0.3, 1.0)];
        let d = smoothed_l1_distance(&a, &b, 20, 4096);
        assert!((d - 0.5).abs() < 1e-9, "{d}");
        assert_eq!(smoothed_l1_distance(&a, &a, 20, 512), 0.0);
    }

    fn train() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..2.0), 0..4)
    }

    proptest! {
        #[test]
        fn fejer_symmetric_nonnegative(fh in 1usize..40, t in -1.0f64..1.0) {
            let k = fejer_kernel(fh, t);
            prop_assert!(k >= 0.0);
            prop_assert!((k - fejer_kernel(fh, -t)).abs() < 1e-9);
            prop_assert!((k - fejer_kernel(fh, 1.0 - t)).abs() < 1e-8);
        }

        #[test]
        fn smoothed_distance_is_pseudometric(a in train(), b in train(), c in train()) {
            let d = |x: &[(f64, f64)], y: &[(f64, f64)]| smoothed_l1_distance(x, y, 10, 256);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
    }
}
