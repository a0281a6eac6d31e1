//! CUSUM statistic, stopping rule and closed-form operating characteristics.
//!
//! The detector tracks `y_t = u_t − m_t` with `m_t = inf_{s≤t} u_s` and
//! alarms at `S_c = inf{t : y_t ≥ c}`. In continuous time the K-L
//! characteristics of `S_c` are
//!
//! ```text
//! ½ E_0[⟨u⟩_{S_c}] = g(c) = e^{−c} + c − 1     (worst-case detection divergence)
//! ½ E_∞[⟨u⟩_{S_c}] = h(c) = e^{c} − c − 1      (false-alarm divergence)
//! ```
//!
//! so the threshold for a false-alarm budget `γ` solves `h(c) = γ`.
//!
//! Two monitors are provided. [`cusum_run`] checks the statistic at grid
//! times only; on a grid `y` jumps past `c` and the running minimum misses
//! excursions between grid points, which inflates both characteristics.
//! [`cusum_run_bridged`] treats `u` between grid points as a Brownian bridge
//! in its own clock `⟨u⟩` (exact for deterministic `Q`) and samples the
//! intra-step minimum and crossing event, recovering continuous monitoring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::HurstIndex;
use crate::likelihood::{poly_coefficients, LLRTrace};

/// Below this argument `g` and `h` are summed from their Taylor series.
const SERIES_CUTOFF: f64 = 0.1;

/// Alarm threshold `c > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Self(c))
        } else {
            Err(Error::Domain(format!(
                "threshold must be positive, got {c}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        Self::new(c)
    }
}

impl From<Threshold> for f64 {
    fn from(c: Threshold) -> f64 {
        c.0
    }
}

/// K-L false-alarm budget `γ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FalseAlarmBudget(f64);

impl FalseAlarmBudget {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::Domain(format!(
                "gamma must be positive, got {gamma}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FalseAlarmBudget {
    type Error = Error;
    fn try_from(g: f64) -> Result<Self> {
        Self::new(g)
    }
}

impl From<FalseAlarmBudget> for f64 {
    fn from(g: FalseAlarmBudget) -> f64 {
        g.0
    }
}

/// Σ_{k≥2} s^k x^k / k! for small x, with s = ±1.
fn exp_tail(x: f64, sign: f64) -> f64 {
    let mut term = 0.5 * x * x;
    let mut sum = term;
    let mut k = 2.0;
    while term.abs() > 1e-18 * sum.abs() {
        k += 1.0;
        term *= sign * x / k;
        sum += term;
    }
    sum
}

/// `g(x) = e^{−x} + x − 1`.
pub fn g_fn(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("g is defined for x >= 0, got {x}")));
    }
    Ok(if x < SERIES_CUTOFF {
        exp_tail(x, -1.0)
    } else {
        (-x).exp_m1() + x
    })
}

/// `h(x) = e^{x} − x − 1`.
pub fn h_fn(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("h is defined for x >= 0, got {x}")));
    }
    Ok(if x < SERIES_CUTOFF {
        exp_tail(x, 1.0)
    } else {
        x.exp_m1() - x
    })
}

fn h_unchecked(x: f64) -> f64 {
    h_fn(x).unwrap_or(f64::NAN)
}

/// Solves `h(c) = γ` by Newton's method inside a doubling bracket.
///
/// `h` is convex and strictly increasing on `(0, ∞)`, so after the first
/// step the iterates approach the root from above; a bisection step replaces
/// any Newton step that leaves the bracket.
pub fn calibrate_threshold(budget: FalseAlarmBudget) -> Threshold {
    let gamma = budget.value();
    let target = 1e-14 * gamma;

    let mut lo = 0.0;
    let mut hi = (2.0 * gamma).sqrt().max(1e-300);
    while h_unchecked(hi) < gamma {
        lo = hi;
        hi *= 2.0;
    }

    let mut c = (1.0 + gamma).ln().clamp(lo, hi);
    for _ in 0..200 {
        let f = h_unchecked(c) - gamma;
        if f.abs() <= target {
            break;
        }
        if f > 0.0 {
            hi = c;
        } else {
            lo = c;
        }
        let slope = c.exp_m1();
        let newton = c - f / slope;
        c = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Threshold(c)
}

/// `(g(c), h(c))`: worst-case K-L detection divergence and K-L false-alarm divergence.
pub fn theoretical_characteristics(c: Threshold) -> (f64, f64) {
    let x = c.value();
    (g_fn(x).unwrap_or(f64::NAN), h_fn(x).unwrap_or(f64::NAN))
}

/// Real-time delay and false-alarm period when `⟨u⟩_t = κ t`.
///
/// Applies to polynomial drift `θ t^{H−1/2}`, where `κ = θ² v_{H,H−1/2}`;
/// returns `(2 g(c) / κ, 2 h(c) / κ)`.
pub fn lorden_characteristics_poly(
    hurst: HurstIndex,
    theta: f64,
    c: Threshold,
) -> Result<(f64, f64)> {
    if theta == 0.0 {
        return Err(Error::DivisionByZero(
            "zero drift amplitude gives zero information rate".into(),
        ));
    }
    let coeff = poly_coefficients(hurst, hurst.value() - 0.5)?;
    let kappa = theta * theta * coeff.v;
    let (g, h) = theoretical_characteristics(c);
    Ok((2.0 * g / kappa, 2.0 * h / kappa))
}

/// Outcome of running the CUSUM monitor over one trace.
///
/// `y` and `running_min` cover indices `0..=stop_index` when the monitor
/// stopped and the whole trace otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub stopped: bool,
    pub stop_index: Option<usize>,
    pub stop_time: Option<f64>,
    pub y: Vec<f64>,
    pub running_min: Vec<f64>,
    /// `y` at the alarm minus `c`.
    pub overshoot: Option<f64>,
    /// `⟨u⟩` at the alarm.
    pub qv_at_stop: Option<f64>,
    /// `u` at the alarm.
    pub u_at_stop: Option<f64>,
}

impl DetectionResult {
    fn finish(
        llr: &LLRTrace,
        c: f64,
        y: Vec<f64>,
        running_min: Vec<f64>,
        stop: Option<usize>,
    ) -> Self {
        match stop {
            Some(k) => Self {
                stopped: true,
                stop_index: Some(k),
                stop_time: Some(llr.grid.time(k)),
                overshoot: Some(y[k] - c),
                qv_at_stop: Some(llr.qv_u[k]),
                u_at_stop: Some(llr.u[k]),
                y,
                running_min,
            },
            None => Self {
                stopped: false,
                stop_index: None,
                stop_time: None,
                overshoot: None,
                qv_at_stop: None,
                u_at_stop: None,
                y,
                running_min,
            },
        }
    }
}

/// Grid-monitored CUSUM: alarms at the first grid index with `y ≥ c`.
pub fn cusum_run(llr: &LLRTrace, c: Threshold) -> DetectionResult {
    let c = c.value();
    let n = llr.u.len();
    let mut y = Vec::with_capacity(n);
    let mut running_min = Vec::with_capacity(n);
    let mut m = f64::INFINITY;
    let mut stop = None;
    for (k, &u) in llr.u.iter().enumerate() {
        m = m.min(u);
        running_min.push(m);
        y.push(u - m);
        if u - m >= c {
            stop = Some(k);
            break;
        }
    }
    DetectionResult::finish(llr, c, y, running_min, stop)
}

/// Minimum of a Brownian bridge from `a` to `b` with variance `s2`, given a uniform in `(0, 1]`.
fn bridge_minimum(a: f64, b: f64, s2: f64, uniform: f64) -> f64 {
    let d = b - a;
    0.5 * (a + b - (d * d - 2.0 * s2 * uniform.ln()).sqrt())
}

/// Continuity-corrected CUSUM.
///
/// Between grid points `u` is treated as a Brownian bridge with variance
/// `⟨u⟩_{k+1} − ⟨u⟩_k`. For each step it draws two uniforms from `rng`: one
/// decides whether the bridge crosses `m_k + c` (probability
/// `exp(−2(L−a)(L−b)/s²)`), the other samples the bridge minimum that
/// updates the running minimum. The alarm is raised at the grid time that
/// ends the crossing step, so `overshoot` can be negative. Exactly two
/// uniforms are consumed per monitored step.
pub fn cusum_run_bridged<R: Rng + ?Sized>(
    llr: &LLRTrace,
    c: Threshold,
    rng: &mut R,
) -> DetectionResult {
    let c = c.value();
    let n = llr.u.len();
    let mut y = Vec::with_capacity(n);
    let mut running_min = Vec::with_capacity(n);
    let mut m = llr.u[0];
    running_min.push(m);
    y.push(0.0);
    let mut stop = None;

    for k in 0..n - 1 {
        let (a, b) = (llr.u[k], llr.u[k + 1]);
        let s2 = (llr.qv_u[k + 1] - llr.qv_u[k]).max(0.0);
        let cross_draw: f64 = rng.random();
        let min_draw = 1.0 - rng.random::<f64>();

        let level = m + c;
        let crossed =
            b >= level || (s2 > 0.0 && cross_draw < (-2.0 * (level - a) * (level - b) / s2).exp());
        let low = if s2 > 0.0 {
            bridge_minimum(a, b, s2, min_draw)
        } else {
            a.min(b)
        };
        if crossed {
            m = m.min(b);
            running_min.push(m);
            y.push(b - m);
            stop = Some(k + 1);
            break;
        }
        m = m.min(low).min(b);
        running_min.push(m);
        y.push(b - m);
    }
    DetectionResult::finish(llr, c, y, running_min, stop)
}
