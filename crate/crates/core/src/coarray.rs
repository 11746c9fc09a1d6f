//! Sample covariance, coarray vectorization and the change of variables that
//! turns the virtual ULA measurement into a line-spectrum problem on `[0, 1)`.
//!
//! After virtualization the coarray vector satisfies
//! `z̃(n) = Σ_k σ_k² e^{j2π n (d/λ) sinθ_k} + σ² [n = 0]` for `|n| ≤ f_c`.
//! Multiplying by `e^{-j2π n d/λ}` maps each source to a spike at
//! `τ_k = (d/λ)(1 − sinθ_k)`, so `r(n) = Σ_k σ_k² e^{-j2π n τ_k}`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::sim::SnapshotMatrix;
use crate::C64;

/// How repeated coarray lags are folded into one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    /// Mean over every sensor pair observing the lag.
    #[default]
    Average,
    /// One representative per lag (first pair in sensor order).
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePowerMode {
    /// Noise power is subtracted from lag 0 before estimation.
    Known(f64),
    /// Noise power is a free variable of the estimator.
    #[default]
    Unknown,
}

/// Coarray vector over lags `-f_c..=f_c`; `values[n + f_c]` holds lag `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarrayVector {
    pub values: Vec<C64>,
    pub f_c: usize,
}

impl CoarrayVector {
    pub fn at(&self, lag: i64) -> C64 {
        self.values[(lag + self.f_c as i64) as usize]
    }

    /// `max_n |z̃(-n) − conj(z̃(n))|`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let fc = self.f_c as i64;
        (0..=fc)
            .map(|n| (self.at(-n) - self.at(n).conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// `(1/T) Σ_t x(t) x(t)^H`.
pub fn sample_covariance(x: &SnapshotMatrix) -> DMatrix<C64> {
    let t = x.num_snapshots() as f64;
    let mut r = &x.data * x.data.adjoint();
    r.unscale_mut(t);
    // Exact Hermitian symmetry regardless of summation order.
    let n = r.nrows();
    for i in 0..n {
        r[(i, i)] = C64::new(r[(i, i)].re, 0.0);
        for j in 0..i {
            let v = (r[(i, j)] + r[(j, i)].conj()) * 0.5;
            r[(i, j)] = v;
            r[(j, i)] = v.conj();
        }
    }
    r
}

/// Fold covariance entries with equal position difference onto the
/// consecutive lag range `-f_c..=f_c`.
pub fn virtualize(
    r: &DMatrix<C64>,
    geom: &ArrayGeometry,
    combine: CombineRule,
) -> Result<CoarrayVector> {
    let pos = geom.positions();
    if r.nrows() != pos.len() || r.ncols() != pos.len() {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, geometry has {} sensors",
            r.nrows(),
            r.ncols(),
            pos.len()
        )));
    }
    let f_c = geom.difference_set().f_c;
    if f_c == 0 {
        return Err(Error::InvalidGeometry(
            "coarray has no consecutive lags beyond 0".into(),
        ));
    }
    let len = 2 * f_c + 1;
    let mut sum = vec![C64::new(0.0, 0.0); len];
    let mut count = vec![0usize; len];
    for (i, &pi) in pos.iter().enumerate() {
        for (j, &pj) in pos.iter().enumerate() {
            let lag = pi - pj;
            if lag.unsigned_abs() as usize > f_c {
                continue;
            }
            let idx = (lag + f_c as i64) as usize;
            match combine {
                CombineRule::Average => {
                    sum[idx] += r[(i, j)];
                    count[idx] += 1;
                }
                CombineRule::First => {
                    if count[idx] == 0 {
                        sum[idx] = r[(i, j)];
                        count[idx] = 1;
                    }
                }
            }
        }
    }
    let values = sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| s / c as f64)
        .collect();
    Ok(CoarrayVector { values, f_c })
}

/// Line-spectrum measurement `r` with its noise direction `w`, both indexed
/// by lag `-f_c..=f_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasurementDoc", into = "MeasurementDoc")]
pub struct VirtualMeasurement {
    pub r: Vec<C64>,
    pub w: Vec<C64>,
    pub f_c: usize,
    pub d_over_lambda: f64,
    pub mode: NoisePowerMode,
}

impl VirtualMeasurement {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Noise direction for the estimator: present only when the noise power
    /// is a free variable.
    pub fn noise_direction(&self) -> Option<&[C64]> {
        match self.mode {
            NoisePowerMode::Unknown => Some(&self.w),
            NoisePowerMode::Known(_) => None,
        }
    }

    /// Undo the modulation (and the known-noise subtraction) to get `z̃` back.
    pub fn to_coarray(&self) -> CoarrayVector {
        let fc = self.f_c as i64;
        let known = match self.mode {
            NoisePowerMode::Known(s2) => s2,
            NoisePowerMode::Unknown => 0.0,
        };
        let values = (-fc..=fc)
            .zip(&self.r)
            .map(|(n, &r)| {
                let z = C64::from_polar(1.0, 2.0 * PI * n as f64 * self.d_over_lambda) * r;
                if n == 0 { z + known } else { z }
            })
            .collect();
        CoarrayVector { values, f_c: self.f_c }
    }
}

#[derive(Serialize, Deserialize)]
struct MeasurementDoc {
    lag_min: i64,
    lag_max: i64,
    d_over_lambda: f64,
    mode: NoisePowerMode,
    /// Interleaved `[re0, im0, re1, im1, ...]`.
    r: Vec<f64>,
    w: Vec<f64>,
}

fn interleave(v: &[C64]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

fn deinterleave(v: &[f64]) -> Result<Vec<C64>> {
    if v.len() % 2 != 0 {
        return Err(Error::InvalidArgument(
            "interleaved complex array has odd length".into(),
        ));
    }
    Ok(v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
}

impl From<VirtualMeasurement> for MeasurementDoc {
    fn from(m: VirtualMeasurement) -> Self {
        MeasurementDoc {
            lag_min: -(m.f_c as i64),
            lag_max: m.f_c as i64,
            d_over_lambda: m.d_over_lambda,
            mode: m.mode,
            r: interleave(&m.r),
            w: interleave(&m.w),
        }
    }
}

impl TryFrom<MeasurementDoc> for VirtualMeasurement {
    type Error = Error;

    fn try_from(doc: MeasurementDoc) -> Result<Self> {
        if doc.lag_min != -doc.lag_max || doc.lag_max < 0 {
            return Err(Error::InvalidArgument(format!(
                "lag range [{}, {}] is not symmetric",
                doc.lag_min, doc.lag_max
            )));
        }
        let f_c = doc.lag_max as usize;
        let r = deinterleave(&doc.r)?;
        let w = deinterleave(&doc.w)?;
        if r.len() != 2 * f_c + 1 || w.len() != r.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} lags, got r: {}, w: {}",
                2 * f_c + 1,
                r.len(),
                w.len()
            )));
        }
        Ok(VirtualMeasurement {
            r,
            w,
            f_c,
            d_over_lambda: doc.d_over_lambda,
            mode: doc.mode,
        })
    }
}

pub fn to_super_resolution(
    z: &CoarrayVector,
    d_over_lambda: f64,
    mode: NoisePowerMode,
) -> VirtualMeasurement {
    let fc = z.f_c as i64;
    let mut r = Vec::with_capacity(z.values.len());
    let mut w = Vec::with_capacity(z.values.len());
    for n in -fc..=fc {
        let phase = C64::from_polar(1.0, -2.0 * PI * n as f64 * d_over_lambda);
        let w_tilde = if n == 0 { 1.0 } else { 0.0 };
        let noise = match mode {
            NoisePowerMode::Known(s2) => s2 * w_tilde,
            NoisePowerMode::Unknown => 0.0,
        };
        r.push(phase * (z.at(n) - noise));
        w.push(phase * w_tilde);
    }
    VirtualMeasurement {
        r,
        w,
        f_c: z.f_c,
        d_over_lambda,
        mode,
    }
}

/// Spike location for a direction: `τ = (d/λ)(1 − sinθ)`.
pub fn doa_to_tau(sin_theta: f64, d_over_lambda: f64) -> f64 {
    d_over_lambda * (1.0 - sin_theta)
}

/// Direction recovered from a spike location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauToDoa {
    /// `1 − τ/(d/λ)`, clipped to `[-1, 1]`.
    pub sin_theta: f64,
    /// Distance the unclipped value lay outside `[-1, 1]` (0 when inside).
    pub clip_distance: f64,
}

impl TauToDoa {
    pub fn is_spurious(&self, tol: f64) -> bool {
        self.clip_distance > tol
    }
}

pub fn tau_to_doa(tau: f64, d_over_lambda: f64) -> TauToDoa {
    let raw = 1.0 - tau / d_over_lambda;
    let sin_theta = raw.clamp(-1.0, 1.0);
    TauToDoa {
        sin_theta,
        clip_distance: (raw - sin_theta).abs(),
    }
}

/// Bring a root-finder location in `[0, 1)` to the representative closest to
/// the physical interval `[0, 2·d/λ]` (identity when `d/λ = 1/2`).
pub fn wrap_tau(tau: f64, d_over_lambda: f64) -> f64 {
    let t = tau.rem_euclid(1.0);
    let hi = 2.0 * d_over_lambda;
    if t <= hi {
        return t;
    }
    let below = t - 1.0;
    if (t - hi) <= -below {
        t
    } else {
        below
    }
}
