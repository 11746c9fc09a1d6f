//! Co-prime array geometry and its difference coarray.
//!
//! Positions are stored as exact integers in units of the base spacing `d`.
//! A co-prime pair `(M, N)` places `N` sensors at `M·n` and `2M` sensors at
//! `N·m`; both subarrays start at the origin, so the physical array has
//! `2M + N − 1` distinct sensors even though it is usually quoted as `2M + N`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryDoc", into = "GeometryDoc")]
pub struct ArrayGeometry {
    positions: Vec<i64>,
    d_over_lambda: f64,
    coprime: Option<(u32, u32)>,
}

/// On-disk form: `{M, N, d_over_lambda, positions[]}`.
#[derive(Serialize, Deserialize)]
struct GeometryDoc {
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    m: Option<u32>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    n: Option<u32>,
    d_over_lambda: f64,
    #[serde(default)]
    positions: Vec<i64>,
}

impl TryFrom<GeometryDoc> for ArrayGeometry {
    type Error = Error;

    fn try_from(doc: GeometryDoc) -> Result<Self> {
        match (doc.m, doc.n) {
            (Some(m), Some(n)) => {
                let geom = ArrayGeometry::coprime(m, n, doc.d_over_lambda)?;
                if !doc.positions.is_empty() {
                    let mut given = doc.positions.clone();
                    given.sort_unstable();
                    if given != geom.positions {
                        return Err(Error::InvalidGeometry(format!(
                            "positions {:?} do not match co-prime ({m}, {n}) layout {:?}",
                            doc.positions, geom.positions
                        )));
                    }
                }
                Ok(geom)
            }
            (None, None) => ArrayGeometry::custom(doc.positions, doc.d_over_lambda),
            _ => Err(Error::InvalidGeometry(
                "M and N must be given together".into(),
            )),
        }
    }
}

impl From<ArrayGeometry> for GeometryDoc {
    fn from(g: ArrayGeometry) -> Self {
        GeometryDoc {
            m: g.coprime.map(|c| c.0),
            n: g.coprime.map(|c| c.1),
            d_over_lambda: g.d_over_lambda,
            positions: g.positions,
        }
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn check_spacing(d_over_lambda: f64) -> Result<()> {
    if !(d_over_lambda > 0.0 && d_over_lambda <= 0.5) {
        return Err(Error::InvalidGeometry(format!(
            "d/lambda must lie in (0, 0.5], got {d_over_lambda}"
        )));
    }
    Ok(())
}

impl ArrayGeometry {
    /// Co-prime layout `{M·n : n < N} ∪ {N·m : m < 2M}`.
    pub fn coprime(m: u32, n: u32, d_over_lambda: f64) -> Result<Self> {
        if m < 1 || n < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need M >= 1 and N >= 2, got ({m}, {n})"
            )));
        }
        if gcd(m, n) != 1 {
            return Err(Error::InvalidGeometry(format!(
                "({m}, {n}) are not co-prime"
            )));
        }
        check_spacing(d_over_lambda)?;
        let mut positions: Vec<i64> = (0..n as i64)
            .map(|k| m as i64 * k)
            .chain((0..2 * m as i64).map(|k| n as i64 * k))
            .collect();
        positions.sort_unstable();
        positions.dedup();
        Ok(Self {
            positions,
            d_over_lambda,
            coprime: Some((m, n)),
        })
    }

    /// Arbitrary linear array; positions are deduplicated and sorted.
    pub fn custom(mut positions: Vec<i64>, d_over_lambda: f64) -> Result<Self> {
        check_spacing(d_over_lambda)?;
        if positions.is_empty() {
            return Err(Error::InvalidGeometry("no sensors".into()));
        }
        positions.sort_unstable();
        let before = positions.len();
        positions.dedup();
        if positions.len() != before {
            return Err(Error::InvalidGeometry("duplicate sensor positions".into()));
        }
        Ok(Self {
            positions,
            d_over_lambda,
            coprime: None,
        })
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn d_over_lambda(&self) -> f64 {
        self.d_over_lambda
    }

    pub fn coprime_pair(&self) -> Option<(u32, u32)> {
        self.coprime
    }

    /// Number of physically distinct sensors.
    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    /// Sensor count as usually quoted for co-prime arrays (`2M + N`, counting
    /// the shared origin twice). Equals [`num_sensors`](Self::num_sensors)
    /// for custom geometries.
    pub fn nominal_sensor_count(&self) -> usize {
        match self.coprime {
            Some((m, n)) => (2 * m + n) as usize,
            None => self.positions.len(),
        }
    }

    pub fn difference_set(&self) -> LagSet {
        let mut lags = BTreeMap::new();
        for &a in &self.positions {
            for &b in &self.positions {
                *lags.entry(a - b).or_insert(0usize) += 1;
            }
        }
        let mut f_c = 0i64;
        while lags.contains_key(&(f_c + 1)) {
            f_c += 1;
        }
        LagSet {
            lags,
            f_c: f_c as usize,
        }
    }

    /// Steering matrix with entry `(l, k) = exp(j·2π·(d/λ)·p_l·sinθ_k)`.
    pub fn steering_matrix(&self, sin_doas: &[f64]) -> Result<DMatrix<C64>> {
        if let Some(bad) = sin_doas.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "sin(theta) = {bad} outside [-1, 1]"
            )));
        }
        let k = 2.0 * PI * self.d_over_lambda;
        Ok(DMatrix::from_fn(self.positions.len(), sin_doas.len(), |l, s| {
            C64::from_polar(1.0, k * self.positions[l] as f64 * sin_doas[s])
        }))
    }
}

/// Multiset of pairwise position differences.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSet {
    /// lag -> multiplicity
    pub lags: BTreeMap<i64, usize>,
    /// Largest `L` with every lag in `[-L, L]` present.
    pub f_c: usize,
}

impl LagSet {
    pub fn multiplicity(&self, lag: i64) -> usize {
        self.lags.get(&lag).copied().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.lags
            .iter()
            .all(|(&l, &c)| self.lags.get(&-l).copied() == Some(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coprime_3_5_positions() {
        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        assert_eq!(g.positions(), &[0, 3, 5, 6, 9, 10, 12, 15, 20, 25]);
        assert_eq!(g.num_sensors(), 10);
        assert_eq!(g.nominal_sensor_count(), 11);
    }

    #[test]
    fn degenerate_ula() {
        let g = ArrayGeometry::coprime(1, 2, 0.5).unwrap();
        assert_eq!(g.positions(), &[0, 1, 2]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ArrayGeometry::coprime(2, 4, 0.5).is_err());
        assert!(ArrayGeometry::coprime(3, 5, 0.51).is_err());
        assert!(ArrayGeometry::coprime(3, 5, 0.0).is_err());
        assert!(ArrayGeometry::coprime(0, 5, 0.5).is_err());
        assert!(ArrayGeometry::custom(vec![0, 1, 1], 0.5).is_err());
    }

    #[test]
    fn cutoff_frequencies() {
        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        assert_eq!(g.difference_set().f_c, 17);

        let g = ArrayGeometry::coprime(2, 3, 0.5).unwrap();
        let lags = g.difference_set();
        assert_eq!(lags.f_c, 7);
        assert_eq!(lags.multiplicity(8), 0);

        let g = ArrayGeometry::custom(vec![0], 0.5).unwrap();
        let lags = g.difference_set();
        assert_eq!(lags.f_c, 0);
        assert_eq!(lags.lags.len(), 1);
    }

    /// Brute-force enumeration, independent of `difference_set`.
    fn brute_force_fc(positions: &[i64]) -> usize {
        let mut l = 0usize;
        loop {
            let next = (l + 1) as i64;
            let has = |lag: i64| {
                positions
                    .iter()
                    .any(|&a| positions.iter().any(|&b| a - b == lag))
            };
            if has(next) && has(-next) {
                l += 1;
            } else {
                return l;
            }
        }
    }

    #[test]
    fn cutoff_at_least_mn() {
        for m in 1..=6u32 {
            for n in 2..=9u32 {
                if gcd(m, n) != 1 {
                    continue;
                }
                let g = ArrayGeometry::coprime(m, n, 0.5).unwrap();
                let lags = g.difference_set();
                assert_eq!(lags.f_c, brute_force_fc(g.positions()), "({m},{n})");
                assert!(lags.f_c >= (m * n) as usize, "({m},{n}) f_c={}", lags.f_c);
                assert!(lags.is_symmetric());
                assert_eq!(lags.multiplicity(0), g.num_sensors());
            }
        }
    }

    #[test]
    fn steering_entries() {
        let g = ArrayGeometry::custom(vec![0, 1], 0.5).unwrap();
        let a = g.steering_matrix(&[0.0, 1.0]).unwrap();
        assert!((a[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[(1, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[(1, 1)] - C64::new(-1.0, 0.0)).norm() < 1e-15);

        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        let a = g.steering_matrix(&[0.5]).unwrap();
        let idx = g.positions().iter().position(|&p| p == 3).unwrap();
        let want = C64::from_polar(1.0, 1.5 * PI);
        assert!((a[(idx, 0)] - want).norm() < 1e-12);
        let norm = a.column(0).norm();
        assert!((norm - (g.num_sensors() as f64).sqrt()).abs() < 1e-12);

        assert!(g.steering_matrix(&[1.2]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"M\":3"));
        let back: ArrayGeometry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);

        let bad = r#"{"M":3,"N":5,"d_over_lambda":0.5,"positions":[0,1]}"#;
        assert!(serde_json::from_str::<ArrayGeometry>(bad).is_err());
        let custom = r#"{"d_over_lambda":0.25,"positions":[4,0,1]}"#;
        let c: ArrayGeometry = serde_json::from_str(custom).unwrap();
        assert_eq!(c.positions(), &[0, 1, 4]);
    }
}
