//! Narrowband snapshot simulation: `x(t) = A s(t) + e(t)` with independent
//! circularly-symmetric complex Gaussian sources and white noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::C64;

/// Ground-truth directions (as `sinθ`), linear source powers and noise power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScene {
    pub doas: Vec<f64>,
    pub powers: Vec<f64>,
    pub noise_power: f64,
}

impl SourceScene {
    pub fn new(doas: Vec<f64>, powers: Vec<f64>, noise_power: f64) -> Result<Self> {
        let scene = Self {
            doas,
            powers,
            noise_power,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Every source at the same linear `power`.
    pub fn equal_power(doas: Vec<f64>, power: f64, noise_power: f64) -> Result<Self> {
        let powers = vec![power; doas.len()];
        Self::new(doas, powers, noise_power)
    }

    /// Unit-power sources with noise power `10^(-snr_db/10)`.
    pub fn from_snr_db(doas: Vec<f64>, snr_db: f64) -> Result<Self> {
        Self::equal_power(doas, 1.0, 10f64.powf(-snr_db / 10.0))
    }

    pub fn num_sources(&self) -> usize {
        self.doas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.doas.len() != self.powers.len() {
            return Err(Error::InvalidScene(format!(
                "{} directions but {} powers",
                self.doas.len(),
                self.powers.len()
            )));
        }
        if let Some(d) = self.doas.iter().find(|d| !(d.abs() <= 1.0)) {
            return Err(Error::InvalidScene(format!("sin(theta) = {d} outside [-1, 1]")));
        }
        if let Some(p) = self.powers.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidScene(format!("source power {p} must be positive")));
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return Err(Error::InvalidScene(format!(
                "noise power {} must be nonnegative",
                self.noise_power
            )));
        }
        let mut sorted = self.doas.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidScene("directions must be distinct".into()));
        }
        Ok(())
    }
}

/// `#sensors × T` block of snapshots together with the seed that produced it.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    pub data: DMatrix<C64>,
    pub seed: u64,
}

impl SnapshotMatrix {
    pub fn num_snapshots(&self) -> usize {
        self.data.ncols()
    }
}

/// Seed for trial `index` of an experiment with base seed `base`
/// (SplitMix64 finalizer, so neighbouring trials get unrelated streams).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw from `CN(0, power)`: real and imaginary parts each `N(0, power/2)`.
pub fn complex_normal<R: rand::Rng>(rng: &mut R, power: f64) -> C64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn generate_snapshots(
    geom: &ArrayGeometry,
    scene: &SourceScene,
    num_snapshots: usize,
    seed: u64,
) -> Result<SnapshotMatrix> {
    scene.validate()?;
    if num_snapshots == 0 {
        return Err(Error::InvalidArgument("need at least one snapshot".into()));
    }
    let a = geom.steering_matrix(&scene.doas)?;
    let l = geom.num_sensors();
    let k = scene.num_sources();
    let mut rng = rng_from_seed(seed);
    let mut data = DMatrix::<C64>::zeros(l, num_snapshots);
    let mut s = vec![C64::new(0.0, 0.0); k];
    for t in 0..num_snapshots {
        for (sk, &p) in s.iter_mut().zip(&scene.powers) {
            *sk = complex_normal(&mut rng, p);
        }
        for row in 0..l {
            let mut acc = complex_normal(&mut rng, scene.noise_power);
            for (col, sk) in s.iter().enumerate() {
                acc += a[(row, col)] * sk;
            }
            data[(row, t)] = acc;
        }
    }
    Ok(SnapshotMatrix { data, seed })
}

/// `Σ_k σ_k² a(θ_k) a(θ_k)^H + σ² I`.
pub fn exact_covariance(geom: &ArrayGeometry, scene: &SourceScene) -> Result<DMatrix<C64>> {
    scene.validate()?;
    let a = geom.steering_matrix(&scene.doas)?;
    let l = geom.num_sensors();
    let mut r = DMatrix::<C64>::identity(l, l) * C64::new(scene.noise_power, 0.0);
    for (k, &p) in scene.powers.iter().enumerate() {
        let col = a.column(k);
        r += (&col * col.adjoint()) * C64::new(p, 0.0);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> ArrayGeometry {
        ArrayGeometry::coprime(3, 5, 0.5).unwrap()
    }

    #[test]
    fn noiseless_single_snapshot_is_scaled_steering_vector() {
        let g = geom();
        let scene = SourceScene::new(vec![0.3], vec![1.0], 0.0).unwrap();
        let x = generate_snapshots(&g, &scene, 1, 7).unwrap();
        let a = g.steering_matrix(&[0.3]).unwrap();
        let scale = x.data[(0, 0)] / a[(0, 0)];
        for l in 0..g.num_sensors() {
            assert!((x.data[(l, 0)] - a[(l, 0)] * scale).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = geom();
        let scene = SourceScene::new(vec![0.1, -0.4], vec![1.0, 2.0], 0.5).unwrap();
        let a = generate_snapshots(&g, &scene, 20, 99).unwrap();
        let b = generate_snapshots(&g, &scene, 20, 99).unwrap();
        assert_eq!(a.data, b.data);
        let c = generate_snapshots(&g, &scene, 20, 100).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn sensor_power_matches_model() {
        let g = geom();
        let scene = SourceScene::new(vec![0.2], vec![2.0], 1.0).unwrap();
        let x = generate_snapshots(&g, &scene, 100_000, 5).unwrap();
        let p: f64 = x.data.row(0).iter().map(|v| v.norm_sqr()).sum::<f64>() / 100_000.0;
        assert!((p - 3.0).abs() / 3.0 < 0.03, "power {p}");
    }

    #[test]
    fn circular_noise_components() {
        let g = ArrayGeometry::custom(vec![0], 0.5).unwrap();
        let scene = SourceScene::new(vec![], vec![], 2.0).unwrap();
        let x = generate_snapshots(&g, &scene, 50_000, 1).unwrap();
        let n = 50_000.0;
        let vr: f64 = x.data.iter().map(|v| v.re * v.re).sum::<f64>() / n;
        let vi: f64 = x.data.iter().map(|v| v.im * v.im).sum::<f64>() / n;
        assert!((vr - 1.0).abs() < 0.03 && (vi - 1.0).abs() < 0.03, "{vr} {vi}");
    }

    #[test]
    fn exact_covariance_cases() {
        let g = geom();
        let l = g.num_sensors();
        let empty = SourceScene::new(vec![], vec![], 0.7).unwrap();
        let r = exact_covariance(&g, &empty).unwrap();
        assert!((r - DMatrix::<C64>::identity(l, l) * C64::new(0.7, 0.0)).norm() < 1e-14);

        let one = SourceScene::new(vec![0.0], vec![2.0], 1.0).unwrap();
        let r = exact_covariance(&g, &one).unwrap();
        for i in 0..l {
            for j in 0..l {
                let want = 2.0 + if i == j { 1.0 } else { 0.0 };
                assert!((r[(i, j)] - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_covariance_rank() {
        let g = geom();
        let scene = SourceScene::new(vec![-0.5, 0.1, 0.6], vec![1.0, 2.0, 0.5], 0.3).unwrap();
        let r = exact_covariance(&g, &scene).unwrap();
        let l = g.num_sensors();
        let signal = &r - DMatrix::<C64>::identity(l, l) * C64::new(0.3, 0.0);
        let eig = signal.symmetric_eigen();
        let nonzero = eig.eigenvalues.iter().filter(|v| v.abs() > 1e-9).count();
        assert_eq!(nonzero, 3);
        let min = r.symmetric_eigen().eigenvalues.min();
        assert!(min >= 0.3 - 1e-10);
    }

    #[test]
    fn scene_validation() {
        assert!(SourceScene::new(vec![0.1], vec![1.0, 2.0], 1.0).is_err());
        assert!(SourceScene::new(vec![0.1, 0.1], vec![1.0, 2.0], 1.0).is_err());
        assert!(SourceScene::new(vec![1.1], vec![1.0], 1.0).is_err());
        assert!(SourceScene::new(vec![0.1], vec![0.0], 1.0).is_err());
        assert!(SourceScene::new(vec![0.1], vec![1.0], -1.0).is_err());
        let s = SourceScene::from_snr_db(vec![0.0], -10.0).unwrap();
        assert!((s.noise_power - 10.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ_across_trials() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
    }
}
