//! CUSUM change detection for fractional Brownian motion and fractional
//! diffusion-type observations.
//!
//! The pipeline runs in five stages, one module each:
//!
//! 1. [`fbm`]: exact fBm sampling on a uniform grid and post-change drift injection.
//! 2. [`transform`]: the fundamental martingale `ζ_t = ∫ k_H(t,s) σ(s)⁻¹ dξ_s`
//!    with its deterministic quadratic variation `λ_H⁻¹ t^{2-2H}`.
//! 3. [`likelihood`]: the `Q` process and the log-likelihood ratio
//!    `u_t = ∫ Q dζ − ½ ∫ Q² d⟨ζ⟩`.
//! 4. [`cusum`]: the CUSUM statistic `y_t = u_t − inf_{s≤t} u_s`, its stopping
//!    rule, threshold calibration from `h(c) = γ`, and the closed-form
//!    characteristics `g(c)`, `h(c)`.
//! 5. [`harness`]: seeded, parallel Monte Carlo estimation of the detector's
//!    operating characteristics against those closed forms.
//!
//! ```
//! use fraccusum::cusum::{calibrate_threshold, h_fn, FalseAlarmBudget};
//!
//! let c = calibrate_threshold(FalseAlarmBudget::new(5.0).unwrap());
//! assert!((h_fn(c.value()).unwrap() - 5.0).abs() < 1e-12 * 5.0);
//! ```

pub mod cli;
pub mod cusum;
pub mod error;
pub mod fbm;
pub mod harness;
pub mod likelihood;
pub mod rng;
pub mod stats;
pub mod transform;
pub mod validate;

pub use error::{Error, Result};
