//! Source-number detection with SORTE on eigenvalues and on CSR amplitudes.

use serde::{Deserialize, Serialize};

use crate::baseline::SmoothedCovariance;
use crate::error::{Error, Result};
use crate::superres::{Spike, SpectrumEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMethod {
    Sorte,
    SorteEig,
    Csorte,
}

/// How sequence values enter the differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SorteConvention {
    /// `∇s[i] = s[i]² − s[i+1]²` (amplitude input).
    #[default]
    Squared,
    /// `∇s[i] = s[i] − s[i+1]` (power input such as eigenvalues).
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub k_hat: usize,
    /// `SORTE(i)` for `i = 1..=L−2`; `+∞` is written as `null` in JSON.
    #[serde(with = "inf_as_null")]
    pub gap_values: Vec<f64>,
    pub method: DetectionMethod,
    /// For CSORTE, the `k_hat` largest spikes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<Spike>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let o: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let o = Vec::<Option<f64>>::deserialize(d)?;
        Ok(o.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `SORTE(i) = var[i+1]/var[i]` (1-based `i = 1..=L−2`), `+∞` when
/// `var[i] = 0`, where `var[i]` is the population variance of `∇s[i..L−1]`.
pub fn sorte_gaps(values: &[f64], convention: SorteConvention) -> Vec<f64> {
    let l = values.len();
    if l < 3 {
        return Vec::new();
    }
    let grad: Vec<f64> = values
        .windows(2)
        .map(|w| match convention {
            SorteConvention::Squared => w[0] * w[0] - w[1] * w[1],
            SorteConvention::Direct => w[0] - w[1],
        })
        .collect();
    // var[i] for 1-based i = 1..=L−1 lives at var[i − 1]
    let var: Vec<f64> = (0..grad.len()).map(|i| population_variance(&grad[i..])).collect();
    (0..l - 2)
        .map(|i| if var[i] == 0.0 { f64::INFINITY } else { var[i + 1] / var[i] })
        .collect()
}

/// SORTE on a descending nonnegative sequence.
///
/// The last ratio `SORTE(L−2)` always has a single-element numerator
/// variance of zero, so the argmin runs over `i ≤ max(1, L−3)`; ties go to
/// the smallest `i`. Sequences of length ≤ 2 return `K̂ = L`.
pub fn sorte_with(values: &[f64], convention: SorteConvention) -> Result<DetectionResult> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("SORTE needs a nonempty sequence".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("SORTE input must be finite and nonnegative, got {v}")));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("SORTE input must be sorted descending".into()));
    }
    let l = values.len();
    let gap_values = sorte_gaps(values, convention);
    let k_hat = if l <= 2 {
        l
    } else {
        let last = (l - 3).max(1);
        let mut best = 1;
        for i in 2..=last {
            if gap_values[i - 1] < gap_values[best - 1] {
                best = i;
            }
        }
        best
    };
    Ok(DetectionResult {
        k_hat,
        gap_values,
        method: DetectionMethod::Sorte,
        detections: Vec::new(),
    })
}

pub fn sorte(values: &[f64]) -> Result<DetectionResult> {
    sorte_with(values, SorteConvention::Squared)
}

/// CSORTE on the un-pruned refinement amplitudes.
///
/// Amplitudes below `1e-6·max` are set to zero and three zeros are appended
/// so the noise floor contributes differences even when the refinement left
/// no spurious candidates.
pub fn csorte(spectrum: &SpectrumEstimate) -> Result<DetectionResult> {
    let mut spikes: Vec<Spike> = spectrum.candidates.clone();
    spikes.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    let amax = spikes.first().map_or(0.0, |s| s.amplitude.max(0.0));
    let mut amps: Vec<f64> = spikes
        .iter()
        .map(|s| if s.amplitude >= 1e-6 * amax { s.amplitude } else { 0.0 })
        .collect();
    let nonzero = amps.iter().filter(|&&a| a > 0.0).count();
    let (k_hat, gap_values) = if nonzero <= 2 {
        (nonzero, sorte_gaps(&amps, SorteConvention::Squared))
    } else {
        amps.extend([0.0; 3]);
        let r = sorte_with(&amps, SorteConvention::Squared)?;
        (r.k_hat, r.gap_values)
    };
    let mut detections = spikes[..k_hat].to_vec();
    detections.sort_by(|a, b| a.sin_theta.total_cmp(&b.sin_theta));
    Ok(DetectionResult {
        k_hat,
        gap_values,
        method: DetectionMethod::Csorte,
        detections,
    })
}

/// SORTE on the smoothed-covariance eigenvalues (used directly as powers).
pub fn sorte_eigen(rss: &SmoothedCovariance) -> Result<DetectionResult> {
    sorte_eigen_with(rss, SorteConvention::Direct)
}

pub fn sorte_eigen_with(rss: &SmoothedCovariance, convention: SorteConvention) -> Result<DetectionResult> {
    let ev = rss.eigenvalues();
    // values under the numerical-rank threshold are roundoff, not noise floor
    let floor = ev.first().copied().unwrap_or(0.0).max(0.0) * ev.len() as f64 * 16.0 * f64::EPSILON;
    let ev: Vec<f64> = ev.into_iter().map(|v| if v > floor { v } else { 0.0 }).collect();
    let mut r = sorte_with(&ev, convention)?;
    r.method = DetectionMethod::SorteEig;
    Ok(r)
}
