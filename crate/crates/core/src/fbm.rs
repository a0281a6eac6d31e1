//! Fractional Brownian motion on a uniform grid.
//!
//! Paths are built from fractional Gaussian noise (the increment sequence),
//! which is stationary with autocovariance
//!
//! ```text
//! γ(k) = (Δ^{2H} / 2) (|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H})
//! ```
//!
//! The production sampler is the circulant embedding of this sequence
//! (exact, `O(n log n)`); a Cholesky sampler (exact, `O(n³)`) is kept for
//! cross-validation and as the fallback when the embedding fails numerically.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::DriftSpec;
use crate::rng::{RngStream, StreamPurpose};

pub const HURST_MIN: f64 = 0.01;
pub const HURST_MAX: f64 = 0.99;

/// Largest grid the Cholesky sampler accepts.
pub const EXACT_SAMPLER_LIMIT: usize = 4096;

/// Relative tolerance for negative circulant eigenvalues.
const EMBEDDING_TOLERANCE: f64 = 1e-8;

/// Hurst index, restricted to `[0.01, 0.99]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstIndex(f64);

impl HurstIndex {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (HURST_MIN..=HURST_MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidHurst(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1/2 − H`, the exponent of both kernel factors.
    pub fn kernel_exponent(self) -> f64 {
        0.5 - self.0
    }
}

impl TryFrom<f64> for HurstIndex {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<HurstIndex> for f64 {
    fn from(h: HurstIndex) -> f64 {
        h.0
    }
}

/// Uniform time grid `t_j = j·step`, `j = 0..=count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid {
    step: f64,
    count: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    step: f64,
    count: usize,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid::new(raw.step, raw.count)
    }
}

impl Grid {
    pub fn new(step: f64, count: usize) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "step must be positive, got {step}"
            )));
        }
        if count < 2 {
            return Err(Error::InvalidGrid(format!(
                "count must be at least 2, got {count}"
            )));
        }
        Ok(Self { step, count })
    }

    /// Grid with `count` steps covering `[0, horizon]`.
    pub fn from_horizon(horizon: f64, count: usize) -> Result<Self> {
        Self::new(horizon / count as f64, count)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of increments; the grid has `count + 1` points.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.count + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.step
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.count)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.count).map(|j| self.time(j)).collect()
    }

    /// Midpoint of the `j`-th subinterval `[t_j, t_{j+1}]`.
    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.step
    }
}

/// Identifies one reproducible path: the same seed always yields the same bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub master_seed: u64,
    pub replicate_index: u64,
}

impl Seed {
    pub fn new(master_seed: u64, replicate_index: u64) -> Self {
        Self {
            master_seed,
            replicate_index,
        }
    }

    pub fn noise_stream(self) -> RngStream {
        RngStream::new(self.master_seed, self.replicate_index, StreamPurpose::Noise)
    }
}

/// A discretized observation path with its change-point metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Change point τ; `f64::INFINITY` means the change never happens.
    pub change_point: f64,
    pub drift: Option<DriftSpec>,
}

impl SamplePath {
    /// Wraps observed values. `values[0]` must be 0 and the length must match the grid.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "path has {} values but the grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::Domain(format!(
                "path must start at 0, got {}",
                values[0]
            )));
        }
        Ok(Self {
            grid,
            values,
            change_point: f64::INFINITY,
            drift: None,
        })
    }

    fn from_increments(grid: Grid, increments: &[f64]) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        values.push(acc);
        for dx in &increments[..grid.count()] {
            acc += dx;
            values.push(acc);
        }
        Self {
            grid,
            values,
            change_point: f64::INFINITY,
            drift: None,
        }
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Autocovariance of fractional Gaussian noise at `lag` for increments of width `step`.
pub fn fgn_autocovariance(hurst: HurstIndex, lag: usize, step: f64) -> f64 {
    let two_h = 2.0 * hurst.value();
    let k = lag as f64;
    let below = if lag == 0 { 1.0 } else { (k - 1.0).powf(two_h) };
    0.5 * step.powf(two_h) * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + below)
}

/// Circulant-embedding sampler with precomputed eigenvalues for one `(H, grid)`.
///
/// The noise is generated on `count.next_power_of_two()` increments and
/// truncated, so grids sharing a power-of-two bucket see identical prefixes
/// for the same seed.
pub struct CirculantSampler {
    hurst: HurstIndex,
    grid: Grid,
    /// `sqrt(λ_k / L)` for the embedding of length `L`.
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantSampler")
            .field("hurst", &self.hurst)
            .field("grid", &self.grid)
            .field("embedding_len", &self.scale.len())
            .finish()
    }
}

impl CirculantSampler {
    pub fn new(hurst: HurstIndex, grid: Grid) -> Result<Self> {
        let m = grid.count().next_power_of_two();
        let len = 2 * m;
        let mut row: Vec<Complex<f64>> = Vec::with_capacity(len);
        for k in 0..=m {
            row.push(Complex::new(fgn_autocovariance(hurst, k, grid.step()), 0.0));
        }
        for k in (1..m).rev() {
            row.push(Complex::new(fgn_autocovariance(hurst, k, grid.step()), 0.0));
        }

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        fft.process(&mut row);

        let max = row.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min < -EMBEDDING_TOLERANCE * max {
            return Err(Error::EmbeddingNotPsd {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        let scale = row
            .iter()
            .map(|z| (z.re.max(0.0) / len as f64).sqrt())
            .collect();

        Ok(Self {
            hurst,
            grid,
            scale,
            fft,
        })
    }

    pub fn hurst(&self) -> HurstIndex {
        self.hurst
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Draws `grid.count()` fGn increments from `rng`.
    pub fn increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.grid.count());
        buf.into_iter().map(|z| z.re).collect()
    }

    pub fn sample(&self, seed: Seed) -> SamplePath {
        let mut stream = seed.noise_stream();
        let inc = self.increments(stream.rng());
        SamplePath::from_increments(self.grid, &inc)
    }
}

/// Cholesky sampler of the full increment covariance matrix.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    grid: Grid,
    lower: DMatrix<f64>,
}

impl ExactSampler {
    pub fn new(hurst: HurstIndex, grid: Grid) -> Result<Self> {
        let n = grid.count();
        if n > EXACT_SAMPLER_LIMIT {
            return Err(Error::SizeLimitExceeded {
                count: n,
                limit: EXACT_SAMPLER_LIMIT,
            });
        }
        let gamma: Vec<f64> = (0..n)
            .map(|k| fgn_autocovariance(hurst, k, grid.step()))
            .collect();
        let cov = DMatrix::from_fn(n, n, |i, j| gamma[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or_else(|| {
            Error::Domain("fGn covariance matrix is not positive definite".into())
        })?;
        Ok(Self {
            grid,
            lower: chol.unpack(),
        })
    }

    pub fn increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.grid.count();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.lower * z).iter().copied().collect()
    }

    pub fn sample(&self, seed: Seed) -> SamplePath {
        let mut stream = seed.noise_stream();
        let inc = self.increments(stream.rng());
        SamplePath::from_increments(self.grid, &inc)
    }
}

/// Circulant sampler with Cholesky fallback when the embedding fails.
#[derive(Debug)]
pub enum FbmSampler {
    Circulant(CirculantSampler),
    Exact(ExactSampler),
}

impl FbmSampler {
    pub fn new(hurst: HurstIndex, grid: Grid) -> Result<Self> {
        match CirculantSampler::new(hurst, grid) {
            Ok(s) => Ok(Self::Circulant(s)),
            Err(Error::EmbeddingNotPsd { min_eigenvalue, .. }) => {
                log::warn!(
                    "circulant embedding failed (min eigenvalue {min_eigenvalue:e}); using Cholesky sampler"
                );
                Ok(Self::Exact(ExactSampler::new(hurst, grid)?))
            }
            Err(e) => Err(e),
        }
    }

    pub fn increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Circulant(s) => s.increments(rng),
            Self::Exact(s) => s.increments(rng),
        }
    }

    pub fn path<R: Rng + ?Sized>(&self, grid: Grid, rng: &mut R) -> SamplePath {
        SamplePath::from_increments(grid, &self.increments(rng))
    }
}

/// Samples an fBm path by circulant embedding.
pub fn sample_fbm(hurst: HurstIndex, grid: Grid, seed: Seed) -> Result<SamplePath> {
    Ok(CirculantSampler::new(hurst, grid)?.sample(seed))
}

/// Samples an fBm path from the Cholesky factor of the increment covariance.
pub fn sample_fbm_exact(hurst: HurstIndex, grid: Grid, seed: Seed) -> Result<SamplePath> {
    Ok(ExactSampler::new(hurst, grid)?.sample(seed))
}

/// Adds the post-change drift `∫_0^t μ_s ds` to a pre-change path.
///
/// Only `τ = 0` (change at the origin) and `τ = ∞` (no change) are supported.
/// Polynomial drift uses its closed-form integral; state-dependent drifts
/// `μ_s = b(ξ_s)` are integrated by explicit Euler along the realized path.
pub fn inject_drift(path: &SamplePath, drift: &DriftSpec, tau: f64) -> Result<SamplePath> {
    if tau.is_infinite() && tau > 0.0 {
        let mut out = path.clone();
        out.change_point = f64::INFINITY;
        return Ok(out);
    }
    if tau != 0.0 {
        return Err(Error::UnsupportedTau(tau));
    }
    drift.validate()?;

    let grid = path.grid;
    let values = match *drift {
        DriftSpec::Polynomial { theta, alpha } => path
            .values
            .iter()
            .enumerate()
            .map(|(j, &x)| x + theta * grid.time(j).powf(alpha + 1.0) / (alpha + 1.0))
            .collect(),
        _ => {
            let h = grid.step();
            let mut out = Vec::with_capacity(grid.len());
            let mut x = 0.0;
            out.push(x);
            for w in path.values.windows(2) {
                x += drift.rate(0.0, x) * h + (w[1] - w[0]);
                out.push(x);
            }
            out
        }
    };

    Ok(SamplePath {
        grid,
        values,
        change_point: 0.0,
        drift: Some(*drift),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hurst(h: f64) -> HurstIndex {
        HurstIndex::new(h).unwrap()
    }

    #[test]
    fn hurst_guard() {
        assert!(HurstIndex::new(0.0).is_err());
        assert!(HurstIndex::new(0.005).is_err());
        assert!(HurstIndex::new(0.995).is_err());
        assert!(HurstIndex::new(f64::NAN).is_err());
        assert!(HurstIndex::new(0.01).is_ok());
        assert!(HurstIndex::new(0.99).is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0.0, 10).is_err());
        assert!(Grid::new(-1.0, 10).is_err());
        assert!(Grid::new(0.1, 1).is_err());
        let g = Grid::new(0.1, 10).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.time(0), 0.0);
        assert_relative_eq!(g.horizon(), 1.0);
    }

    #[test]
    fn autocovariance_examples() {
        assert_eq!(fgn_autocovariance(hurst(0.5), 0, 1.0), 1.0);
        assert_eq!(fgn_autocovariance(hurst(0.5), 3, 1.0), 0.0);
        // (2^1.5 - 2) / 2
        assert_relative_eq!(
            fgn_autocovariance(hurst(0.75), 1, 1.0),
            0.414_213_562_373_095_05,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            fgn_autocovariance(hurst(0.5), 0, 0.01),
            0.01,
            max_relative = 1e-14
        );
    }

    #[test]
    fn paths_start_at_zero_and_are_deterministic() {
        let g = Grid::new(0.01, 1024).unwrap();
        let a = sample_fbm(hurst(0.7), g, Seed::new(11, 2)).unwrap();
        let b = sample_fbm(hurst(0.7), g, Seed::new(11, 2)).unwrap();
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a.values.len(), 1025);
        assert_eq!(a, b);
        let c = sample_fbm(hurst(0.7), g, Seed::new(11, 3)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn same_bucket_grids_share_prefix() {
        let short = Grid::new(0.01, 300).unwrap();
        let long = Grid::new(0.01, 500).unwrap();
        let a = sample_fbm(hurst(0.3), short, Seed::new(5, 0)).unwrap();
        let b = sample_fbm(hurst(0.3), long, Seed::new(5, 0)).unwrap();
        assert_eq!(a.values[..], b.values[..301]);
    }

    #[test]
    fn exact_sampler_size_guard() {
        let g = Grid::new(0.001, EXACT_SAMPLER_LIMIT + 1).unwrap();
        assert!(matches!(
            sample_fbm_exact(hurst(0.5), g, Seed::new(0, 0)),
            Err(Error::SizeLimitExceeded { .. })
        ));
    }

    #[test]
    fn exact_sampler_at_half_is_iid_scaled() {
        let g = Grid::new(0.25, 64).unwrap();
        let s = ExactSampler::new(hurst(0.5), g).unwrap();
        let expected = DMatrix::<f64>::identity(64, 64) * 0.5;
        assert!((&s.lower - expected).abs().max() < 1e-14);
    }

    #[test]
    fn drift_injection_examples() {
        let g = Grid::new(0.1, 10).unwrap();
        let zero = SamplePath::new(g, vec![0.0; 11]).unwrap();
        let unit = DriftSpec::Polynomial {
            theta: 1.0,
            alpha: 0.0,
        };
        let out = inject_drift(&zero, &unit, 0.0).unwrap();
        assert_relative_eq!(out.values[10], 1.0, max_relative = 1e-14);
        assert_eq!(out.change_point, 0.0);

        let path = sample_fbm(hurst(0.6), g, Seed::new(1, 1)).unwrap();
        let none = DriftSpec::Polynomial {
            theta: 0.0,
            alpha: 0.5,
        };
        assert_eq!(inject_drift(&path, &none, 0.0).unwrap().values, path.values);
        assert_eq!(
            inject_drift(&path, &unit, f64::INFINITY).unwrap().values,
            path.values
        );
        assert!(matches!(
            inject_drift(&path, &unit, 2.0),
            Err(Error::UnsupportedTau(_))
        ));
    }

    #[test]
    fn euler_drift_on_zero_noise_follows_ode() {
        // ξ' = c0 + c1 ξ with zero noise: explicit Euler matches (1+c1 h)^n recursion.
        let g = Grid::new(0.01, 100).unwrap();
        let zero = SamplePath::new(g, vec![0.0; 101]).unwrap();
        let drift = DriftSpec::Affine { c0: 0.5, c1: -0.8 };
        let out = inject_drift(&zero, &drift, 0.0).unwrap();
        let mut x = 0.0;
        for j in 0..100 {
            x = x + (0.5 - 0.8 * x) * 0.01;
            assert_relative_eq!(out.values[j + 1], x, max_relative = 1e-14);
        }
        // Continuous solution 0.625 (1 - e^{-0.8 t}) at t = 1, first-order close.
        assert!((out.values[100] - 0.625 * (1.0 - (-0.8f64).exp())).abs() < 2e-3);
    }
}
