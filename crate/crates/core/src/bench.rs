//! Monte Carlo experiment harness: accuracy, detection and resolution sweeps
//! over the estimators in this crate, with CSV and JSON manifest output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{dsr_estimate, music_spectrum, root_music, sin_grid, spatial_smooth, SmoothedCovariance};
use crate::coarray::{doa_to_tau, sample_covariance, to_super_resolution, virtualize, CombineRule, CoarrayVector, NoisePowerMode};
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::order::{csorte, sorte_eigen};
use crate::sim::{derive_seed, exact_covariance, generate_snapshots, rng_from_seed, SourceScene};
use crate::superres::{csr_estimate, dual_polynomial_grid, SpectrumEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Csr,
    Dsr,
    Music,
    RootMusic,
    /// Root-MUSIC with the source count taken from eigenvalue SORTE.
    RootMusicSorte,
    Csorte,
    SorteEig,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Csr => "csr",
            Method::Dsr => "dsr",
            Method::Music => "music",
            Method::RootMusic => "root-music",
            Method::RootMusicSorte => "root-music-sorte",
            Method::Csorte => "csorte",
            Method::SorteEig => "sorte-eig",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub m: u32,
    pub n: u32,
    pub d_over_lambda: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            m: 3,
            n: 5,
            d_over_lambda: 0.5,
        }
    }
}

impl GeometrySpec {
    pub fn build(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::coprime(self.m, self.n, self.d_over_lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SceneSpec {
    SinTheta { values: Vec<f64> },
    Degrees { values: Vec<f64> },
    /// `k` directions equally spaced in `sinθ` over `[-span, span]`.
    Uniform {
        k: usize,
        #[serde(default = "default_span")]
        span: f64,
    },
    /// `k` directions drawn per trial with pairwise `sinθ` gaps of at least
    /// `min_separation`.
    Random { k: usize, min_separation: f64 },
}

fn default_span() -> f64 {
    0.9
}

/// The 15-source scene used for the accuracy and degrees-of-freedom runs.
pub const FIFTEEN_SOURCES: [f64; 15] = [
    -0.8876, -0.7624, -0.6326, -0.5096, -0.3818, -0.2552, -0.1324, -0.0046, 0.1206, 0.2414, 0.3692,
    0.4972, 0.6208, 0.7454, 0.8704,
];

impl SceneSpec {
    pub fn num_sources(&self) -> usize {
        match self {
            SceneSpec::SinTheta { values } | SceneSpec::Degrees { values } => values.len(),
            SceneSpec::Uniform { k, .. } | SceneSpec::Random { k, .. } => *k,
        }
    }

    /// Sorted `sinθ` values for one trial.
    pub fn draw(&self, seed: u64) -> Result<Vec<f64>> {
        let mut v = match self {
            SceneSpec::SinTheta { values } => values.clone(),
            SceneSpec::Degrees { values } => values.iter().map(|d| d.to_radians().sin()).collect(),
            SceneSpec::Uniform { k, span } => uniform_scene(*k, *span),
            SceneSpec::Random { k, min_separation } => random_scene(*k, *min_separation, seed)?,
        };
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

pub fn uniform_scene(k: usize, span: f64) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| -span + 2.0 * span * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Rejection draw of `k` directions in `[-0.95, 0.95]` with a minimum gap.
pub fn random_scene(k: usize, min_separation: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    for _ in 0..10_000 {
        let mut v: Vec<f64> = (0..k).map(|_| rng.random_range(-0.95..0.95)).collect();
        v.sort_by(f64::total_cmp);
        if v.windows(2).all(|w| w[1] - w[0] >= min_separation) {
            return Ok(v);
        }
    }
    Err(Error::InvalidScene(format!(
        "could not place {k} sources with separation {min_separation}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EpsilonPolicy {
    Absolute { epsilon: f64, epsilon_d: f64 },
    /// `ε = epsilon_mult·σ`, `ε_d = epsilon_d_mult·ε`.
    NoiseScaled { epsilon_mult: f64, epsilon_d_mult: f64 },
}

impl EpsilonPolicy {
    pub fn resolve(&self, sigma: f64) -> (f64, f64) {
        match *self {
            EpsilonPolicy::Absolute { epsilon, epsilon_d } => (epsilon, epsilon_d),
            EpsilonPolicy::NoiseScaled {
                epsilon_mult,
                epsilon_d_mult,
            } => {
                let e = epsilon_mult * sigma;
                (e, epsilon_d_mult * e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "kebab-case")]
pub enum SweepAxis {
    SnrDb(Vec<f64>),
    Snapshots(Vec<usize>),
    Sources(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModeSpec {
    /// Noise power subtracted before the SDP (true or estimated value).
    #[default]
    Known,
    /// Noise power left free in the SDP. Not identifiable for dense, nearly
    /// equispaced scenes: a comb of `2f_c+1` equal spikes looks like lag-0 noise.
    Unknown,
}

/// One experiment. DSR uses `ε_d` from the policy as its fit budget; MUSIC
/// and root-MUSIC receive the true source count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub geometry: GeometrySpec,
    pub scene: SceneSpec,
    /// Snapshots per trial; 0 uses the exact covariance.
    pub snapshots: usize,
    /// Per-source SNR with unit source power; `None` is noiseless.
    pub snr_db: Option<f64>,
    pub methods: Vec<Method>,
    pub epsilon: EpsilonPolicy,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_mode: NoiseModeSpec,
    /// Use the smallest sample-covariance eigenvalue as the noise power for
    /// `ε` scaling and known-noise mode instead of the true value.
    #[serde(default)]
    pub estimate_noise: bool,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub combine: CombineRule,
    /// Resolution radius in degrees; set for resolution runs.
    #[serde(default)]
    pub resolution_deg: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepAxis>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_trials() -> usize {
    1
}

fn default_grid_step() -> f64 {
    0.005
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("method list is empty".into()));
        }
        let (e, ed) = self.epsilon.resolve(1.0);
        if !(e >= 0.0 && ed >= 0.0) {
            return Err(Error::InvalidArgument("epsilon policy must give nonnegative budgets".into()));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::InvalidArgument("grid_step must be positive".into()));
        }
        self.geometry.build()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Per-sensor noise power for unit-power sources.
    pub fn noise_power(&self) -> f64 {
        self.snr_db.map_or(0.0, |s| 10f64.powf(-s / 10.0))
    }
}

/// Order-preserving minimum-cost matching of sorted estimates to sorted
/// truths on `|Δ sinθ|`; optimal for this one-dimensional cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(truth index, estimate index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub mean_error: Option<f64>,
    pub misses: usize,
    pub false_alarms: usize,
}

pub fn match_estimates(truth: &[f64], estimates: &[f64]) -> Matching {
    let mut t: Vec<(usize, f64)> = truth.iter().copied().enumerate().collect();
    let mut e: Vec<(usize, f64)> = estimates.iter().copied().enumerate().collect();
    t.sort_by(|a, b| a.1.total_cmp(&b.1));
    e.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (nt, ne) = (t.len(), e.len());
    let m = nt.min(ne);
    // cost[i][j]: best cost matching m' = min(i, j) pairs among the first i
    // truths and j estimates, where every item of the shorter list is used.
    let inf = f64::INFINITY;
    let mut cost = vec![vec![inf; ne + 1]; nt + 1];
    for i in 0..=nt {
        for j in 0..=ne {
            if i == 0 || j == 0 {
                // the shorter list must be fully used, so a zero prefix of it is free
                cost[i][j] = if (nt <= ne && i == 0) || (ne < nt && j == 0) { 0.0 } else { inf };
                continue;
            }
            let pair = cost[i - 1][j - 1] + (t[i - 1].1 - e[j - 1].1).abs();
            let skip = if nt <= ne { cost[i][j - 1] } else { cost[i - 1][j] };
            cost[i][j] = pair.min(skip);
        }
    }
    let mut pairs = Vec::with_capacity(m);
    let (mut i, mut j) = (nt, ne);
    while i > 0 && j > 0 {
        let pair = cost[i - 1][j - 1] + (t[i - 1].1 - e[j - 1].1).abs();
        if cost[i][j] == pair {
            pairs.push((t[i - 1].0, e[j - 1].0));
            i -= 1;
            j -= 1;
        } else if nt <= ne {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    pairs.reverse();
    let mean_error = (!pairs.is_empty())
        .then(|| pairs.iter().map(|&(a, b)| (truth[a] - estimates[b]).abs()).sum::<f64>() / pairs.len() as f64);
    Matching {
        misses: nt - pairs.len(),
        false_alarms: ne - pairs.len(),
        pairs,
        mean_error,
    }
}

/// Exactly one estimate within `radius_deg` of each of the two truths.
pub fn is_resolved(truth: &[f64], estimates: &[f64], radius_deg: f64) -> bool {
    if truth.len() != 2 {
        return false;
    }
    let deg = |s: f64| s.clamp(-1.0, 1.0).asin().to_degrees();
    truth.iter().all(|&t| {
        estimates
            .iter()
            .filter(|&&e| (deg(e) - deg(t)).abs() <= radius_deg)
            .count()
            == 1
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub point: usize,
    /// Swept value at this point (SNR, T or K).
    pub param: f64,
    pub trial: usize,
    pub method: Method,
    pub k_true: usize,
    pub k_hat: Option<usize>,
    pub estimates: Vec<f64>,
    pub mean_error: Option<f64>,
    pub misses: usize,
    pub false_alarms: usize,
    pub detected: Option<bool>,
    pub resolved: Option<bool>,
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub point: usize,
    pub param: f64,
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    pub detection_prob: Option<f64>,
    pub resolution_prob: Option<f64>,
    pub mean_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn aggregate(&self, param: f64, method: Method) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.param == param && a.method == method)
    }

    pub fn records_for(&self, param: f64, method: Method) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(move |r| r.param == param && r.method == method)
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn recompute_aggregates(records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(usize, Method)> = records.iter().map(|r| (r.point, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(point, method)| {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.point == point && r.method == method).collect();
            let mut errs: Vec<f64> = rs.iter().filter_map(|r| r.mean_error).collect();
            let mean_error = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            let frac = |f: &dyn Fn(&TrialRecord) -> Option<bool>| {
                let v: Vec<bool> = rs.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64)
            };
            Aggregate {
                point,
                param: rs[0].param,
                method,
                trials: rs.len(),
                failures: rs.iter().filter(|r| r.failure.is_some()).count(),
                mean_error,
                median_error: median(&mut errs),
                detection_prob: frac(&|r| r.detected),
                resolution_prob: frac(&|r| r.resolved),
                mean_wall_time_s: rs.iter().map(|r| r.wall_time_s).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect()
}

/// Indices of the `k` largest local maxima of a sampled spectrum.
pub fn spectrum_peaks(values: &[f64], k: usize) -> Vec<usize> {
    let n = values.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] > values[i - 1];
            let right = i + 1 == n || values[i] >= values[i + 1];
            left && right
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    peaks.truncate(k);
    peaks.sort();
    peaks
}

struct PointSetup {
    param: f64,
    cfg: ExperimentConfig,
}

fn sweep_points(cfg: &ExperimentConfig) -> Vec<PointSetup> {
    let base = |param: f64| PointSetup { param, cfg: cfg.clone() };
    match &cfg.sweep {
        None => vec![base(cfg.snr_db.unwrap_or(f64::INFINITY))],
        Some(SweepAxis::SnrDb(v)) => v
            .iter()
            .map(|&s| {
                let mut p = base(s);
                p.cfg.snr_db = Some(s);
                p
            })
            .collect(),
        Some(SweepAxis::Snapshots(v)) => v
            .iter()
            .map(|&t| {
                let mut p = base(t as f64);
                p.cfg.snapshots = t;
                p
            })
            .collect(),
        Some(SweepAxis::Sources(v)) => v
            .iter()
            .map(|&k| {
                let mut p = base(k as f64);
                p.cfg.scene = match &cfg.scene {
                    SceneSpec::Random { min_separation, .. } => SceneSpec::Random {
                        k,
                        min_separation: *min_separation,
                    },
                    SceneSpec::Uniform { span, .. } => SceneSpec::Uniform { k, span: *span },
                    _ => SceneSpec::Uniform { k, span: default_span() },
                };
                p
            })
            .collect(),
    }
}

/// Everything derived from one trial's data that the estimators consume.
pub struct TrialData {
    pub truth: Vec<f64>,
    pub coarray: CoarrayVector,
    pub noise_power: f64,
    pub epsilon: f64,
    pub epsilon_d: f64,
    pub mode: NoisePowerMode,
}

pub fn trial_data(cfg: &ExperimentConfig, seed: u64) -> Result<TrialData> {
    let geom = cfg.geometry.build()?;
    let truth = cfg.scene.draw(derive_seed(seed, u64::MAX))?;
    let true_noise = cfg.noise_power();
    let scene = SourceScene::equal_power(truth.clone(), 1.0, true_noise)?;
    let r = if cfg.snapshots == 0 {
        exact_covariance(&geom, &scene)?
    } else {
        sample_covariance(&generate_snapshots(&geom, &scene, cfg.snapshots, seed)?)
    };
    let noise_power = if cfg.estimate_noise {
        r.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
    } else {
        true_noise
    };
    let coarray = virtualize(&r, &geom, cfg.combine)?;
    let (epsilon, epsilon_d) = cfg.epsilon.resolve(noise_power.sqrt());
    let mode = match cfg.noise_mode {
        NoiseModeSpec::Unknown => NoisePowerMode::Unknown,
        NoiseModeSpec::Known => NoisePowerMode::Known(noise_power),
    };
    Ok(TrialData {
        truth,
        coarray,
        noise_power,
        epsilon,
        epsilon_d,
        mode,
    })
}

struct MethodOutput {
    estimates: Vec<f64>,
    k_hat: Option<usize>,
}

fn run_method(
    method: Method,
    cfg: &ExperimentConfig,
    data: &TrialData,
    csr_cache: &mut Option<std::result::Result<SpectrumEstimate, String>>,
    rss_cache: &mut Option<std::result::Result<SmoothedCovariance, String>>,
) -> Result<MethodOutput> {
    let d = cfg.geometry.d_over_lambda;
    let k = data.truth.len();
    let vm = to_super_resolution(&data.coarray, d, data.mode);
    let csr = |cache: &mut Option<std::result::Result<SpectrumEstimate, String>>| -> Result<SpectrumEstimate> {
        if cache.is_none() {
            *cache = Some(csr_estimate(&vm, data.epsilon, data.epsilon_d).map_err(|e| e.to_string()));
        }
        cache.clone().unwrap().map_err(Error::InvalidArgument)
    };
    let rss = |cache: &mut Option<std::result::Result<SmoothedCovariance, String>>| -> Result<SmoothedCovariance> {
        if cache.is_none() {
            *cache = Some(spatial_smooth(&data.coarray).map_err(|e| e.to_string()));
        }
        cache.clone().unwrap().map_err(Error::InvalidArgument)
    };
    let known_k = || -> Result<usize> {
        if k == 0 {
            Err(Error::InvalidArgument("subspace methods need at least one source".into()))
        } else {
            Ok(k)
        }
    };
    Ok(match method {
        Method::Csr => {
            let est = csr(csr_cache)?;
            MethodOutput {
                k_hat: Some(est.spikes.len()),
                estimates: est.sin_thetas(),
            }
        }
        Method::Csorte => {
            let det = csorte(&csr(csr_cache)?)?;
            MethodOutput {
                k_hat: Some(det.k_hat),
                estimates: det.detections.iter().map(|s| s.sin_theta).collect(),
            }
        }
        Method::Dsr => {
            let est = dsr_estimate(&vm, cfg.grid_step, data.epsilon_d)?;
            MethodOutput {
                k_hat: Some(est.spikes.len()),
                estimates: est.sin_thetas(),
            }
        }
        Method::Music => {
            let rss = rss(rss_cache)?;
            let grid = sin_grid(cfg.grid_step)?;
            let spec = music_spectrum(&rss, known_k()?, &grid, d)?;
            MethodOutput {
                k_hat: None,
                estimates: spectrum_peaks(&spec, k).into_iter().map(|i| grid[i]).collect(),
            }
        }
        Method::RootMusic => MethodOutput {
            k_hat: None,
            estimates: root_music(&rss(rss_cache)?, known_k()?, d)?,
        },
        Method::RootMusicSorte => {
            let rss = rss(rss_cache)?;
            let kh = sorte_eigen(&rss)?.k_hat.clamp(1, rss.f_c);
            MethodOutput {
                k_hat: Some(kh),
                estimates: root_music(&rss, kh, d)?,
            }
        }
        Method::SorteEig => MethodOutput {
            k_hat: Some(sorte_eigen(&rss(rss_cache)?)?.k_hat),
            estimates: Vec::new(),
        },
    })
}

fn run_trial(point: usize, setup: &PointSetup, trial: usize) -> Vec<TrialRecord> {
    let cfg = &setup.cfg;
    let seed = derive_seed(derive_seed(cfg.seed, point as u64), trial as u64);
    let k_true = cfg.scene.num_sources();
    let data = trial_data(cfg, seed);
    let mut csr_cache = None;
    let mut rss_cache = None;
    cfg.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let out = data
                .as_ref()
                .map_err(|e| Error::InvalidArgument(e.to_string()))
                .and_then(|d| run_method(method, cfg, d, &mut csr_cache, &mut rss_cache));
            let wall_time_s = start.elapsed().as_secs_f64();
            let mut rec = TrialRecord {
                point,
                param: setup.param,
                trial,
                method,
                k_true,
                k_hat: None,
                estimates: Vec::new(),
                mean_error: None,
                misses: k_true,
                false_alarms: 0,
                detected: None,
                resolved: None,
                failure: None,
                wall_time_s,
            };
            match (out, data.as_ref()) {
                (Ok(o), Ok(d)) => {
                    rec.detected = o.k_hat.map(|kh| kh == k_true);
                    rec.k_hat = o.k_hat;
                    if method != Method::SorteEig {
                        let m = match_estimates(&d.truth, &o.estimates);
                        rec.mean_error = m.mean_error;
                        rec.misses = m.misses;
                        rec.false_alarms = m.false_alarms;
                        rec.resolved = cfg.resolution_deg.map(|r| is_resolved(&d.truth, &o.estimates, r));
                    } else {
                        rec.misses = 0;
                    }
                    rec.estimates = o.estimates;
                }
                (Err(e), _) => {
                    rec.failure = Some(e.to_string());
                    if method != Method::SorteEig {
                        rec.resolved = cfg.resolution_deg.map(|_| false);
                    }
                    if matches!(method, Method::Csorte | Method::SorteEig | Method::RootMusicSorte) {
                        rec.detected = Some(false);
                    }
                }
                (Ok(_), Err(_)) => unreachable!("method ran without trial data"),
            }
            rec
        })
        .collect()
}

/// Run every sweep point × trial × method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let points = sweep_points(cfg);
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let mut records: Vec<TrialRecord> = jobs
        .par_iter()
        .flat_map_iter(|&(p, t)| run_trial(p, &points[p], t))
        .collect();
    records.sort_by(|a, b| (a.point, a.trial, a.method).cmp(&(b.point, b.trial, b.method)));
    let aggregates = recompute_aggregates(&records);
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        aggregates,
    })
}

/// Accuracy over an SNR or snapshot sweep (or a single point).
pub fn run_accuracy_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if matches!(cfg.sweep, Some(SweepAxis::Sources(_))) {
        return Err(Error::InvalidArgument("accuracy sweeps run over SNR or snapshots".into()));
    }
    run_experiment(cfg)
}

/// Detection probability over source counts (default 11..=17).
pub fn run_detection_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut c = cfg.clone();
    match &c.sweep {
        Some(SweepAxis::Sources(_)) => {}
        None => c.sweep = Some(SweepAxis::Sources((11..=17).collect())),
        Some(_) => return Err(Error::InvalidArgument("detection sweeps run over source counts".into())),
    }
    run_experiment(&c)
}

/// Two-source resolution probability (default radius 0.3°).
pub fn run_resolution(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.scene.num_sources() != 2 {
        return Err(Error::InvalidScene("resolution runs need exactly two sources".into()));
    }
    let mut c = cfg.clone();
    c.resolution_deg.get_or_insert(0.3);
    run_experiment(&c)
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn fmt_err(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.9e}"))
}

pub fn write_records_csv<W: std::io::Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "point", "param", "trial", "method", "k_true", "k_hat", "mean_error", "misses", "false_alarms", "detected",
        "resolved", "estimates", "failure",
    ])?;
    for r in records {
        let est: Vec<String> = r.estimates.iter().map(|e| format!("{e:.9}")).collect();
        w.write_record([
            r.point.to_string(),
            r.param.to_string(),
            r.trial.to_string(),
            r.method.name().to_string(),
            r.k_true.to_string(),
            fmt_opt(r.k_hat),
            fmt_err(r.mean_error),
            r.misses.to_string(),
            r.false_alarms.to_string(),
            fmt_opt(r.detected),
            fmt_opt(r.resolved),
            est.join(";"),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates_csv<W: std::io::Write>(out: W, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "point", "param", "method", "trials", "failures", "mean_error", "median_error", "detection_prob",
        "resolution_prob",
    ])?;
    for a in aggregates {
        w.write_record([
            a.point.to_string(),
            a.param.to_string(),
            a.method.name().to_string(),
            a.trials.to_string(),
            a.failures.to_string(),
            fmt_err(a.mean_error),
            fmt_err(a.median_error),
            fmt_opt(a.detection_prob),
            fmt_opt(a.resolution_prob),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall times live in their own file so the other outputs stay
/// byte-identical across reruns.
pub fn write_timing_csv<W: std::io::Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point", "trial", "method", "wall_time_s"])?;
    for r in records {
        w.write_record([
            r.point.to_string(),
            r.trial.to_string(),
            r.method.name().to_string(),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
    pub aggregates: Vec<Aggregate>,
}

/// Write `<name>_records.csv`, `<name>_aggregates.csv`, `<name>_timing.csv`
/// and `<name>_manifest.json` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &result.config.name;
    let paths: Vec<PathBuf> = ["records.csv", "aggregates.csv", "timing.csv", "manifest.json"]
        .iter()
        .map(|s| dir.join(format!("{name}_{s}")))
        .collect();
    write_records_csv(fs::File::create(&paths[0])?, &result.records)?;
    write_aggregates_csv(fs::File::create(&paths[1])?, &result.aggregates)?;
    write_timing_csv(fs::File::create(&paths[2])?, &result.records)?;
    let manifest = Manifest {
        name: name.clone(),
        config_hash: result.config.hash(),
        seed: result.config.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        files: paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
        config: result.config.clone(),
        aggregates: result.aggregates.clone(),
    };
    fs::write(&paths[3], serde_json::to_string_pretty(&manifest)?)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedSpectrum {
    pub method: Method,
    pub grid: Vec<f64>,
    /// Normalized to a maximum of 1.
    pub values: Vec<f64>,
    /// `(sinθ, amplitude)`; amplitude is the spectrum value for MUSIC.
    pub spikes: Vec<(f64, f64)>,
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
    v
}

/// Plot data from the first trial of `cfg` for one method. For CSR the
/// spectrum column is `|p|` of the dual polynomial on the `sinθ` grid.
pub fn export_spectrum(cfg: &ExperimentConfig, method: Method) -> Result<ExportedSpectrum> {
    cfg.validate()?;
    let seed = derive_seed(derive_seed(cfg.seed, 0), 0);
    let data = trial_data(cfg, seed)?;
    let d = cfg.geometry.d_over_lambda;
    let grid = sin_grid(cfg.grid_step)?;
    let vm = to_super_resolution(&data.coarray, d, data.mode);
    let k = data.truth.len().max(1);
    let (values, spikes) = match method {
        Method::Csr | Method::Csorte => {
            let est = csr_estimate(&vm, data.epsilon, data.epsilon_d)?;
            let taus: Vec<f64> = grid.iter().map(|&s| doa_to_tau(s, d)).collect();
            let vals = match &est.certificate {
                Some(c) => dual_polynomial_grid(&c.u, &taus).iter().map(|p| p.norm()).collect(),
                None => vec![0.0; grid.len()],
            };
            let spikes = if method == Method::Csorte {
                csorte(&est)?.detections
            } else {
                est.spikes.clone()
            };
            (vals, spikes.iter().map(|s| (s.sin_theta, s.amplitude)).collect())
        }
        Method::Dsr => {
            let est = dsr_estimate(&vm, cfg.grid_step, data.epsilon_d)?;
            let mut vals = vec![0.0; grid.len()];
            for s in &est.candidates {
                if let Some(i) = grid.iter().position(|&g| g == s.sin_theta) {
                    vals[i] = s.amplitude;
                }
            }
            (vals, est.spikes.iter().map(|s| (s.sin_theta, s.amplitude)).collect())
        }
        Method::Music | Method::RootMusic | Method::RootMusicSorte | Method::SorteEig => {
            let rss = spatial_smooth(&data.coarray)?;
            let kk = if method == Method::RootMusicSorte || method == Method::SorteEig {
                sorte_eigen(&rss)?.k_hat.clamp(1, rss.f_c)
            } else {
                k.min(rss.f_c)
            };
            let vals = music_spectrum(&rss, kk, &grid, d)?;
            let spikes = if method == Method::RootMusic || method == Method::RootMusicSorte {
                root_music(&rss, kk, d)?.into_iter().map(|s| (s, 1.0)).collect()
            } else {
                spectrum_peaks(&vals, kk).into_iter().map(|i| (grid[i], vals[i])).collect()
            };
            (vals, spikes)
        }
    };
    Ok(ExportedSpectrum {
        method,
        grid,
        values: normalize(values),
        spikes,
    })
}

/// Write `<name>_<method>_spectrum.csv` and `<name>_<method>_spikes.csv`.
pub fn write_spectrum_files(cfg: &ExperimentConfig, spec: &ExportedSpectrum, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stem = format!("{}_{}", cfg.name, spec.method.name());
    let sp = dir.join(format!("{stem}_spectrum.csv"));
    crate::baseline::write_spectrum_csv(fs::File::create(&sp)?, &spec.grid, &spec.values)?;
    let kp = dir.join(format!("{stem}_spikes.csv"));
    let mut w = csv::Writer::from_writer(fs::File::create(&kp)?);
    w.write_record(["sin_theta", "degrees", "amplitude"])?;
    for &(s, a) in &spec.spikes {
        w.write_record([
            format!("{s:.9}"),
            format!("{:.6}", s.clamp(-1.0, 1.0).asin().to_degrees()),
            format!("{a:.9e}"),
        ])?;
    }
    w.flush()?;
    Ok(vec![sp, kp])
}
