//! The fundamental martingale of fBm and its discretization.
//!
//! For the kernel `k_H(t,s) = c_H⁻¹ s^{1/2−H} (t−s)^{1/2−H}` the transform
//! `ζ_t = ∫_0^t k_H(t,s) σ(s)⁻¹ dξ_s` of an fBm path is a Gaussian martingale
//! with `⟨ζ⟩_t = λ_H⁻¹ t^{2−2H}`.
//!
//! Both kernel factors are singular at the ends of `[0, t]` when `H > 1/2`.
//! The discretization replaces each factor by its exact average over a grid
//! cell, which keeps the separable form (hence the fast convolution path)
//! and reduces to weight 1 everywhere at `H = 1/2`:
//!
//! ```text
//! ζ_{t_n} ≈ c_H⁻¹ Σ_{j<n} K_j · K_{n−1−j} · Δξ_j / σ(s_j*),
//! K_i = Δ⁻¹ ∫_{iΔ}^{(i+1)Δ} r^{1/2−H} dr
//! ```

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fbm::{Grid, HurstIndex, SamplePath};

/// The constants `c_H` and `λ_H` of the fundamental martingale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracConstants {
    pub c_h: f64,
    pub lambda_h: f64,
}

/// `c_H = 2H Γ(3/2−H) Γ(H+1/2)`, `λ_H = 2H Γ(3−2H) Γ(H+1/2) / Γ(3/2−H)`.
pub fn frac_constants(hurst: HurstIndex) -> FracConstants {
    let h = hurst.value();
    let g_a = gamma(1.5 - h);
    let g_b = gamma(h + 0.5);
    FracConstants {
        c_h: 2.0 * h * g_a * g_b,
        lambda_h: 2.0 * h * gamma(3.0 - 2.0 * h) * g_b / g_a,
    }
}

/// Pointwise kernel `k_H(t,s)` for `0 < s < t`.
pub fn kernel_k(hurst: HurstIndex, t: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!(
            "kernel needs 0 < s < t, got s = {s}, t = {t}"
        )));
    }
    let e = hurst.kernel_exponent();
    let c = frac_constants(hurst).c_h;
    Ok(s.powf(e) * (t - s).powf(e) / c)
}

/// `⟨ζ⟩_t = λ_H⁻¹ t^{2−2H}` at every grid time.
pub fn quadratic_variation(hurst: HurstIndex, grid: Grid) -> Vec<f64> {
    let lambda = frac_constants(hurst).lambda_h;
    let p = 2.0 - 2.0 * hurst.value();
    (0..=grid.count())
        .map(|j| grid.time(j).powf(p) / lambda)
        .collect()
}

/// Deterministic, strictly positive volatility `σ(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum VolatilitySpec {
    Constant {
        value: f64,
    },
    /// Values at the grid times `t_0..=t_n`; linear between them.
    Tabulated {
        values: Vec<f64>,
    },
}

impl Default for VolatilitySpec {
    fn default() -> Self {
        Self::Constant { value: 1.0 }
    }
}

impl VolatilitySpec {
    pub fn validate(&self, grid: Grid) -> Result<()> {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        match self {
            Self::Constant { value } if bad(*value) => Err(Error::Domain(format!(
                "volatility must be positive, got {value}"
            ))),
            Self::Tabulated { values } if values.len() != grid.len() => Err(Error::GridMismatch),
            Self::Tabulated { values } if values.iter().any(|&v| bad(v)) => Err(Error::Domain(
                "tabulated volatility must be positive everywhere".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Self::Constant { value } => Some(*value),
            Self::Tabulated { .. } => None,
        }
    }

    /// σ at the origin.
    pub fn initial(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Tabulated { values } => values[0],
        }
    }

    /// σ at the midpoint of subinterval `j`.
    pub fn at_cell(&self, j: usize) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Tabulated { values } => 0.5 * (values[j] + values[j + 1]),
        }
    }

    /// Scales the increments of a pre-change path: `Δξ_j ← σ(s_j*) Δξ_j`.
    pub fn modulate(&self, path: &SamplePath) -> SamplePath {
        if self.constant_value() == Some(1.0) {
            return path.clone();
        }
        let mut out = path.clone();
        let mut acc = 0.0;
        for (j, w) in path.values.windows(2).enumerate() {
            acc += self.at_cell(j) * (w[1] - w[0]);
            out.values[j + 1] = acc;
        }
        out
    }
}

/// Discretized fundamental martingale with its closed-form quadratic variation.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTrace {
    pub grid: Grid,
    pub zeta: Vec<f64>,
    pub qv: Vec<f64>,
}

/// Cell average of `r^e` over `[iΔ, (i+1)Δ]`, without the `Δ^e` factor.
fn cell_average(i: usize, e: f64) -> f64 {
    let p = e + 1.0;
    if e == 0.0 {
        1.0
    } else if i == 0 {
        1.0 / p
    } else {
        let x = i as f64;
        x.powf(p) * (p * (1.0 / x).ln_1p()).exp_m1() / p
    }
}

/// Precomputed kernel weights and spectrum for one `(H, grid)`.
///
/// [`KernelConvolver::apply`] evaluates
/// `r_n = c_H⁻¹ Σ_{j<n} K_j K_{n−1−j} w_j` for every `n` by FFT convolution;
/// [`KernelConvolver::apply_direct`] computes the same sums in `O(n²)`.
pub struct KernelConvolver {
    hurst: HurstIndex,
    grid: Grid,
    constants: FracConstants,
    cells: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for KernelConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelConvolver")
            .field("hurst", &self.hurst)
            .field("grid", &self.grid)
            .field("fft_len", &self.spectrum.len())
            .finish()
    }
}

impl KernelConvolver {
    pub fn new(hurst: HurstIndex, grid: Grid) -> Self {
        let n = grid.count();
        let e = hurst.kernel_exponent();
        let scale = grid.step().powf(e);
        let cells: Vec<f64> = (0..n).map(|i| scale * cell_average(i, e)).collect();

        let len = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum = vec![Complex::new(0.0, 0.0); len];
        for (slot, &k) in spectrum.iter_mut().zip(&cells) {
            slot.re = k;
        }
        forward.process(&mut spectrum);

        Self {
            hurst,
            grid,
            constants: frac_constants(hurst),
            cells,
            spectrum,
            forward,
            inverse,
        }
    }

    pub fn hurst(&self) -> HurstIndex {
        self.hurst
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn constants(&self) -> FracConstants {
        self.constants
    }

    /// Cell-averaged kernel weight for subinterval `j` at time `t_n` (`j < n`).
    pub fn weight(&self, n: usize, j: usize) -> f64 {
        self.cells[j] * self.cells[n - 1 - j] / self.constants.c_h
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.grid.count();
        debug_assert_eq!(w.len(), n);
        let len = self.spectrum.len();
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        for ((slot, &k), &x) in buf.iter_mut().zip(&self.cells).zip(w) {
            slot.re = k * x;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);

        let norm = 1.0 / (len as f64 * self.constants.c_h);
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        out.extend(buf[..n].iter().map(|z| z.re * norm));
        out
    }

    pub fn apply_direct(&self, w: &[f64]) -> Vec<f64> {
        let n = self.grid.count();
        debug_assert_eq!(w.len(), n);
        let lifted: Vec<f64> = self.cells.iter().zip(w).map(|(k, x)| k * x).collect();
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        for m in 1..=n {
            let acc: f64 = lifted[..m]
                .iter()
                .zip(self.cells[..m].iter().rev())
                .map(|(a, k)| a * k)
                .sum();
            out.push(acc / self.constants.c_h);
        }
        out
    }

    fn normalized_increments(&self, path: &SamplePath, sigma: &VolatilitySpec) -> Result<Vec<f64>> {
        if path.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        sigma.validate(self.grid)?;
        Ok(path
            .values
            .windows(2)
            .enumerate()
            .map(|(j, w)| (w[1] - w[0]) / sigma.at_cell(j))
            .collect())
    }

    /// Fast transform of a path (FFT convolution).
    pub fn transform(&self, path: &SamplePath, sigma: &VolatilitySpec) -> Result<MartingaleTrace> {
        let a = self.normalized_increments(path, sigma)?;
        Ok(MartingaleTrace {
            grid: self.grid,
            zeta: self.apply(&a),
            qv: quadratic_variation(self.hurst, self.grid),
        })
    }

    /// Direct `O(n²)` transform of a path.
    pub fn transform_direct(
        &self,
        path: &SamplePath,
        sigma: &VolatilitySpec,
    ) -> Result<MartingaleTrace> {
        let a = self.normalized_increments(path, sigma)?;
        Ok(MartingaleTrace {
            grid: self.grid,
            zeta: self.apply_direct(&a),
            qv: quadratic_variation(self.hurst, self.grid),
        })
    }
}

/// Fundamental martingale of an observed path, evaluated directly in `O(n²)`.
pub fn fundamental_transform(
    path: &SamplePath,
    hurst: HurstIndex,
    sigma: &VolatilitySpec,
) -> Result<MartingaleTrace> {
    KernelConvolver::new(hurst, path.grid).transform_direct(path, sigma)
}

/// Same transform as [`fundamental_transform`], by FFT convolution in `O(n log n)`.
pub fn fundamental_transform_fast(
    path: &SamplePath,
    hurst: HurstIndex,
    sigma: &VolatilitySpec,
) -> Result<MartingaleTrace> {
    KernelConvolver::new(hurst, path.grid).transform(path, sigma)
}
