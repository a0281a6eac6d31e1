//! The `Q` process and the log-likelihood ratio of a post-change drift.
//!
//! With `ψ_t = ∫_0^t k_H(t,s) μ_s σ(s)⁻¹ ds`, the process
//! `Q_t = dψ_t / d⟨ζ⟩_t` turns the drift into the martingale clock, and
//!
//! ```text
//! u_t = ∫_0^t Q_s dζ_s − ½ ∫_0^t Q_s² d⟨ζ⟩_s,    ⟨u⟩_t = ∫_0^t Q_s² d⟨ζ⟩_s.
//! ```
//!
//! For polynomial drift `μ_t = θ t^α` everything is closed form:
//! `Q_t = θ d_{H,α} t^α` and `⟨u⟩_t = θ² v_{H,α} t^{2−2H+2α}`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fbm::{Grid, HurstIndex, SamplePath};
use crate::transform::{KernelConvolver, MartingaleTrace, VolatilitySpec};

/// Post-change drift family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DriftSpec {
    /// `μ_t = θ t^α`, `α > −1`.
    Polynomial { theta: f64, alpha: f64 },
    /// `μ_t = b(ξ_t)` with `b(x) = c0 + c1 x` (fractional Ornstein–Uhlenbeck).
    Affine { c0: f64, c1: f64 },
    /// `μ_t = b(ξ_t)` with `b(x) = c0 + c1 x + (|x| ∧ 1)^a`, `a ∈ [0, 1)`.
    BoundedPower { c0: f64, c1: f64, a: f64 },
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            Self::Polynomial { theta, alpha } => {
                if !finite(&[theta, alpha]) || alpha <= -1.0 {
                    return Err(Error::Domain(format!(
                        "polynomial drift needs finite theta and alpha > -1, got theta = {theta}, alpha = {alpha}"
                    )));
                }
            }
            Self::Affine { c0, c1 } => {
                if !finite(&[c0, c1]) {
                    return Err(Error::Domain(
                        "affine drift coefficients must be finite".into(),
                    ));
                }
            }
            Self::BoundedPower { c0, c1, a } => {
                if !finite(&[c0, c1, a]) || !(0.0..1.0).contains(&a) {
                    return Err(Error::Domain(format!(
                        "bounded-power drift needs finite coefficients and a in [0, 1), got a = {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when μ depends on the observed path rather than on time alone.
    pub fn is_state_dependent(&self) -> bool {
        !matches!(self, Self::Polynomial { .. })
    }

    /// Drift rate `μ` at time `t` and state `x`.
    pub fn rate(&self, t: f64, x: f64) -> f64 {
        match *self {
            Self::Polynomial { theta, alpha } => {
                if theta == 0.0 {
                    0.0
                } else {
                    theta * t.powf(alpha)
                }
            }
            Self::Affine { c0, c1 } => c0 + c1 * x,
            Self::BoundedPower { c0, c1, a } => c0 + c1 * x + x.abs().min(1.0).powf(a),
        }
    }

    /// Warns when the polynomial exponent violates `α + 1 > H`, under which
    /// `⟨u⟩_t` stays bounded and the detector is no longer guaranteed optimal.
    pub fn optimality_warning(&self, hurst: HurstIndex) -> Option<String> {
        match *self {
            Self::Polynomial { alpha, .. } if alpha + 1.0 <= hurst.value() => Some(format!(
                "alpha + 1 = {} does not exceed H = {}; the energy condition fails",
                alpha + 1.0,
                hurst.value()
            )),
            _ => None,
        }
    }

    /// True when `⟨u⟩_t` grows linearly in `t` (polynomial with `α = H − 1/2`).
    pub fn is_linear_energy(&self, hurst: HurstIndex) -> bool {
        matches!(*self, Self::Polynomial { theta, alpha }
            if theta != 0.0 && (alpha - (hurst.value() - 0.5)).abs() < 1e-12)
    }
}

/// Closed-form coefficients of the polynomial-drift case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyCoefficients {
    /// `Q_t = d · t^α`.
    pub d: f64,
    /// `∫_0^t Q_s² d⟨ζ⟩_s = v · t^{2−2H+2α}`.
    pub v: f64,
}

pub fn poly_coefficients(hurst: HurstIndex, alpha: f64) -> Result<PolyCoefficients> {
    let h = hurst.value();
    let a1 = 1.5 - h + alpha;
    let a2 = 3.0 - 2.0 * h + alpha;
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(Error::Domain(format!(
            "Gamma arguments must be positive: 3/2-H+alpha = {a1}, 3-2H+alpha = {a2}"
        )));
    }
    let d = gamma(3.0 - 2.0 * h) * gamma(a1) / (gamma(a2) * gamma(1.5 - h))
        * (2.0 - 2.0 * h + alpha)
        / (2.0 - 2.0 * h);
    let lambda = crate::transform::frac_constants(hurst).lambda_h;
    let v = d * d / lambda * (1.0 - h) / (1.0 - h + alpha);
    if !(d.is_finite() && v.is_finite()) {
        return Err(Error::Domain(format!(
            "coefficients are not finite for H = {h}, alpha = {alpha}"
        )));
    }
    Ok(PolyCoefficients { d, v })
}

/// `Q` at the grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct QTrace {
    pub grid: Grid,
    pub q: Vec<f64>,
    /// `Q` diverges at `t = 0`; `q[0]` holds 0 in its place.
    pub singular_origin: bool,
}

/// Closed-form `Q_t = θ d_{H,α} t^α`.
pub fn q_process_poly(hurst: HurstIndex, theta: f64, alpha: f64, grid: Grid) -> Result<QTrace> {
    let coeff = poly_coefficients(hurst, alpha)?;
    let amp = theta * coeff.d;
    let mut q: Vec<f64> = (0..=grid.count())
        .map(|j| amp * grid.time(j).powf(alpha))
        .collect();
    let singular_origin = alpha < 0.0 && theta != 0.0;
    q[0] = if alpha == 0.0 { amp } else { 0.0 };
    Ok(QTrace {
        grid,
        q,
        singular_origin,
    })
}

/// `Q` by quadrature of `ψ` and differentiation in the `⟨ζ⟩` clock.
pub fn q_process_numeric(
    drift: &DriftSpec,
    path: &SamplePath,
    hurst: HurstIndex,
    sigma: &VolatilitySpec,
) -> Result<QTrace> {
    let conv = KernelConvolver::new(hurst, path.grid);
    q_process_numeric_with(&conv, drift, path, sigma)
}

/// [`q_process_numeric`] reusing a precomputed convolver.
///
/// `ψ(t_n)` is the cell-averaged kernel sum of `μ(s_j*) Δ / σ(s_j*)`, with
/// state-dependent drifts evaluated at the path midpoint of each cell, so
/// `q[n]` only uses the path up to `t_n`. The derivative is the three-point
/// backward difference on the nonuniform `⟨ζ⟩` nodes (two-point at `n = 1`),
/// and `q[0] = μ_0 / σ(0)` because `Q_t → μ_0` for continuous drift.
pub fn q_process_numeric_with(
    conv: &KernelConvolver,
    drift: &DriftSpec,
    path: &SamplePath,
    sigma: &VolatilitySpec,
) -> Result<QTrace> {
    drift.validate()?;
    let grid = conv.grid();
    if path.grid != grid {
        return Err(Error::GridMismatch);
    }
    sigma.validate(grid)?;

    let h = grid.step();
    let weights: Vec<f64> = path
        .values
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let mid_x = 0.5 * (w[0] + w[1]);
            drift.rate(grid.midpoint(j), mid_x) * h / sigma.at_cell(j)
        })
        .collect();
    let psi = conv.apply(&weights);
    let qv = crate::transform::quadratic_variation(conv.hurst(), grid);

    let n = grid.count();
    let mut q = vec![0.0; n + 1];
    q[1] = (psi[1] - psi[0]) / (qv[1] - qv[0]);
    for k in 2..=n {
        let (x0, x1, x2) = (qv[k - 2], qv[k - 1], qv[k]);
        let (f0, f1, f2) = (psi[k - 2], psi[k - 1], psi[k]);
        q[k] = f0 * (x2 - x1) / ((x0 - x1) * (x0 - x2))
            + f1 * (x2 - x0) / ((x1 - x0) * (x1 - x2))
            + f2 * ((x2 - x0) + (x2 - x1)) / ((x2 - x0) * (x2 - x1));
    }

    let mu0 = drift.rate(0.0, path.values[0]);
    let singular_origin = !mu0.is_finite();
    q[0] = if singular_origin {
        0.0
    } else {
        mu0 / sigma.initial()
    };
    Ok(QTrace {
        grid,
        q,
        singular_origin,
    })
}

/// Discretized log-likelihood ratio and its quadratic variation.
#[derive(Debug, Clone, PartialEq)]
pub struct LLRTrace {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub qv_u: Vec<f64>,
}

/// Left-point (Itô) sums for `u` and `⟨u⟩`.
pub fn llr_trace(q: &QTrace, m: &MartingaleTrace) -> Result<LLRTrace> {
    if q.grid != m.grid || q.q.len() != m.zeta.len() {
        return Err(Error::GridMismatch);
    }
    let n = q.grid.count();
    let mut u = Vec::with_capacity(n + 1);
    let mut qv_u = Vec::with_capacity(n + 1);
    let (mut acc_u, mut acc_qv) = (0.0, 0.0);
    u.push(acc_u);
    qv_u.push(acc_qv);
    for j in 0..n {
        let qj = q.q[j];
        let energy = qj * qj * (m.qv[j + 1] - m.qv[j]);
        acc_u += qj * (m.zeta[j + 1] - m.zeta[j]) - 0.5 * energy;
        acc_qv += energy;
        u.push(acc_u);
        qv_u.push(acc_qv);
    }
    Ok(LLRTrace {
        grid: q.grid,
        u,
        qv_u,
    })
}

/// `⟨u⟩_t = θ² v_{H,α} t^{2−2H+2α}` for polynomial drift.
pub fn energy_growth(hurst: HurstIndex, theta: f64, alpha: f64, t: f64) -> Result<f64> {
    let h = hurst.value();
    if alpha <= h - 1.0 {
        return Err(Error::Domain(format!(
            "alpha = {alpha} must exceed H - 1 = {} for unbounded energy",
            h - 1.0
        )));
    }
    let coeff = poly_coefficients(hurst, alpha)?;
    Ok(theta * theta * coeff.v * t.powf(2.0 - 2.0 * h + 2.0 * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{inject_drift, sample_fbm, Seed};
    use crate::transform::fundamental_transform;
    use approx::assert_relative_eq;

    fn hurst(h: f64) -> HurstIndex {
        HurstIndex::new(h).unwrap()
    }

    #[test]
    fn coefficients_match_high_precision_values() {
        let c = poly_coefficients(hurst(0.5), 0.0).unwrap();
        assert_relative_eq!(c.d, 1.0, max_relative = 1e-14);
        assert_relative_eq!(c.v, 1.0, max_relative = 1e-14);

        // 30-digit reference values: (H, alpha, d, v).
        let table = [
            (0.75, 0.25, 1.180_340_599_016_096_2, 0.708_453_266_611_229_1),
            (0.3, 0.0, 1.0, 1.058_161_039_302_343_5),
            (0.3, -0.2, 1.052_465_246_244_804_2, 1.640_949_932_369_975_8),
            (0.3, 0.25, 0.950_821_732_455_096_05, 0.704_894_952_998_565_6),
            (0.75, 0.0, 1.0, 1.017_013_018_002_417_6),
            (0.5, 0.25, 1.0, 0.666_666_666_666_666_6),
        ];
        for (h, a, d, v) in table {
            let c = poly_coefficients(hurst(h), a).unwrap();
            assert_relative_eq!(c.d, d, max_relative = 1e-13);
            assert_relative_eq!(c.v, v, max_relative = 1e-13);
        }
    }

    #[test]
    fn d_is_one_at_zero_exponent() {
        for i in 1..=99 {
            let c = poly_coefficients(hurst(i as f64 / 100.0), 0.0).unwrap();
            assert_relative_eq!(c.d, 1.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn coefficient_domain_errors() {
        assert!(poly_coefficients(hurst(0.3), -1.3).is_err());
        // alpha = H - 1 makes v infinite.
        assert!(poly_coefficients(hurst(0.5), -0.5).is_err());
    }

    #[test]
    fn poly_q_examples() {
        let g = Grid::new(0.1, 10).unwrap();
        let q = q_process_poly(hurst(0.5), 0.7, 0.0, g).unwrap();
        assert!(q.q.iter().all(|&x| (x - 0.7).abs() < 1e-14));
        let z = q_process_poly(hurst(0.3), 0.0, 0.25, g).unwrap();
        assert!(z.q.iter().all(|&x| x == 0.0));
        let q = q_process_poly(hurst(0.75), 1.0, 0.25, g).unwrap();
        assert_relative_eq!(q.q[10], 1.180_340_599_016_096_2, max_relative = 1e-13);
        assert_eq!(q.q[0], 0.0);
        let s = q_process_poly(hurst(0.3), 1.0, -0.2, g).unwrap();
        assert!(s.singular_origin);
        assert_eq!(s.q[0], 0.0);
    }

    #[test]
    fn numeric_q_zero_drift() {
        let g = Grid::new(0.01, 100).unwrap();
        let path = sample_fbm(hurst(0.6), g, Seed::new(0, 0)).unwrap();
        let drift = DriftSpec::Polynomial {
            theta: 0.0,
            alpha: 0.5,
        };
        let q = q_process_numeric(&drift, &path, hurst(0.6), &VolatilitySpec::default()).unwrap();
        assert!(q.q.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn numeric_q_at_half_tracks_state_drift() {
        // At H = 1/2 the kernel is 1 and the clock is t, so Q follows b(ξ) at cell midpoints.
        let g = Grid::new(0.001, 2000).unwrap();
        let noise = sample_fbm(hurst(0.5), g, Seed::new(4, 1)).unwrap();
        let drift = DriftSpec::Affine { c0: 0.5, c1: -0.8 };
        let path = inject_drift(&noise, &drift, 0.0).unwrap();
        let q = q_process_numeric(&drift, &path, hurst(0.5), &VolatilitySpec::default()).unwrap();
        assert_relative_eq!(q.q[0], 0.5);
        for k in 2..=2000 {
            let b = |j: usize| drift.rate(0.0, 0.5 * (path.values[j] + path.values[j + 1]));
            // Three-point stencil on a uniform clock: 1.5 b_{k-1} - 0.5 b_{k-2}.
            let expected = 1.5 * b(k - 1) - 0.5 * b(k - 2);
            assert!((q.q[k] - expected).abs() < 1e-9, "k = {k}");
        }
    }

    #[test]
    fn llr_zero_q() {
        let g = Grid::new(0.01, 50).unwrap();
        let path = sample_fbm(hurst(0.4), g, Seed::new(8, 8)).unwrap();
        let m = fundamental_transform(&path, hurst(0.4), &VolatilitySpec::default()).unwrap();
        let q = QTrace {
            grid: g,
            q: vec![0.0; 51],
            singular_origin: false,
        };
        let l = llr_trace(&q, &m).unwrap();
        assert!(l.u.iter().all(|&x| x == 0.0));
        assert!(l.qv_u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn llr_classical_reduction() {
        let g = Grid::new(0.005, 400).unwrap();
        let mu = 1.3;
        let path = sample_fbm(hurst(0.5), g, Seed::new(21, 0)).unwrap();
        let m = fundamental_transform(&path, hurst(0.5), &VolatilitySpec::default()).unwrap();
        let q = q_process_poly(hurst(0.5), mu, 0.0, g).unwrap();
        let l = llr_trace(&q, &m).unwrap();
        for j in 0..=400 {
            let t = g.time(j);
            let expected = mu * path.values[j] - 0.5 * mu * mu * t;
            assert!((l.u[j] - expected).abs() < 1e-11, "j = {j}");
            assert_relative_eq!(
                l.qv_u[j],
                mu * mu * t,
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn llr_grid_mismatch() {
        let g = Grid::new(0.01, 10).unwrap();
        let other = Grid::new(0.02, 10).unwrap();
        let m = MartingaleTrace {
            grid: other,
            zeta: vec![0.0; 11],
            qv: vec![0.0; 11],
        };
        let q = QTrace {
            grid: g,
            q: vec![0.0; 11],
            singular_origin: false,
        };
        assert!(matches!(llr_trace(&q, &m), Err(Error::GridMismatch)));
    }

    #[test]
    fn energy_examples() {
        for t in [0.5, 1.0, 3.0] {
            assert_relative_eq!(
                energy_growth(hurst(0.5), 1.0, 0.0, t).unwrap(),
                t,
                max_relative = 1e-14
            );
        }
        assert_eq!(energy_growth(hurst(0.3), 0.0, 0.1, 2.0).unwrap(), 0.0);
        assert_relative_eq!(
            energy_growth(hurst(0.75), 1.0, 0.25, 2.0).unwrap(),
            2.0 * 0.708_453_266_611_229_1,
            max_relative = 1e-13
        );
        assert!(energy_growth(hurst(0.6), 1.0, -0.4, 1.0).is_err());
    }

    #[test]
    fn drift_validation_and_warning() {
        assert!(DriftSpec::Polynomial {
            theta: 1.0,
            alpha: -1.0
        }
        .validate()
        .is_err());
        assert!(DriftSpec::BoundedPower {
            c0: 0.0,
            c1: 1.0,
            a: 1.0
        }
        .validate()
        .is_err());
        assert!(DriftSpec::BoundedPower {
            c0: 0.0,
            c1: 1.0,
            a: 0.0
        }
        .validate()
        .is_ok());
        let d = DriftSpec::Polynomial {
            theta: 1.0,
            alpha: -0.8,
        };
        assert!(d.optimality_warning(hurst(0.3)).is_some());
        assert!(d.optimality_warning(hurst(0.1)).is_none());
    }
}
