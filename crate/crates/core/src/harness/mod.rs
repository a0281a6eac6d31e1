//! Seeded, parallel Monte Carlo experiments for the detector.
//!
//! Each replicate runs the full pipeline (sample fBm, inject the drift for
//! the regime, transform, `Q`, log-likelihood ratio, CUSUM) on its own
//! random streams keyed by replicate index. Results are collected in index
//! order, so reports are identical for any worker count.

mod report;

pub use report::{
    canonical_json, read_report, replicates_csv, to_json, write_report, Estimand, ExperimentReport,
    ReplicateSummary, ReportFormat,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::{
    calibrate_threshold, cusum_run, cusum_run_bridged, theoretical_characteristics,
    DetectionResult, FalseAlarmBudget, Threshold,
};
use crate::error::{Error, Result};
use crate::fbm::{inject_drift, FbmSampler, Grid, HurstIndex};
use crate::likelihood::{
    llr_trace, poly_coefficients, q_process_numeric_with, q_process_poly, DriftSpec, QTrace,
};
use crate::rng::{RngStream, StreamPurpose};
use crate::transform::{KernelConvolver, VolatilitySpec};

/// Which law generates the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// τ = ∞: the change never happens.
    PreChange,
    /// τ = 0: post-change law from the start (the worst case for CUSUM).
    PostChangeAtZero,
}

impl Regime {
    pub fn tau(self) -> f64 {
        match self {
            Regime::PreChange => f64::INFINITY,
            Regime::PostChangeAtZero => 0.0,
        }
    }
}

/// How the CUSUM statistic is monitored between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Check `y ≥ c` at grid times only.
    Grid,
    /// Brownian-bridge continuity correction in the `⟨u⟩` clock.
    #[default]
    Bridge,
}

/// Threshold given directly or calibrated from a false-alarm budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSetting {
    Threshold(Threshold),
    Gamma(FalseAlarmBudget),
}

impl DetectorSetting {
    pub fn threshold(self) -> Threshold {
        match self {
            Self::Threshold(c) => c,
            Self::Gamma(budget) => calibrate_threshold(budget),
        }
    }
}

fn default_workers() -> usize {
    1
}

/// One Monte Carlo batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hurst: HurstIndex,
    pub regime: Regime,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub monitoring: Monitoring,
    /// Grid extent; must equal `grid.step * grid.count` when given.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Execution-only; never echoed into reports.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
    pub grid: Grid,
    pub drift: DriftSpec,
    #[serde(default)]
    pub sigma: VolatilitySpec,
    pub detector: DetectorSetting,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(horizon) = self.horizon {
            let extent = self.grid.horizon();
            let gap = (horizon - extent).abs();
            if gap.is_nan() || gap > 1e-9 * extent.max(1.0) {
                return Err(Error::Config(format!(
                    "horizon {horizon} does not match grid extent {extent} (step {} x count {})",
                    self.grid.step(),
                    self.grid.count()
                )));
            }
        }
        self.drift
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.sigma
            .validate(self.grid)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Slope `κ` of `⟨u⟩_t = κ t` when the energy is linear in time.
    pub fn information_rate(&self) -> Option<f64> {
        let sigma = self.sigma.constant_value()?;
        match self.drift {
            DriftSpec::Polynomial { theta, alpha } if self.drift.is_linear_energy(self.hurst) => {
                let v = poly_coefficients(self.hurst, alpha).ok()?.v;
                Some(theta * theta * v / (sigma * sigma))
            }
            _ => None,
        }
    }

    /// The config as it appears in reports.
    fn echo(&self) -> Self {
        let mut echo = self.clone();
        echo.workers = default_workers();
        echo.horizon = Some(self.grid.horizon());
        echo
    }
}

/// Per-batch precomputation shared by all replicates.
struct Pipeline<'a> {
    config: &'a ExperimentConfig,
    sampler: FbmSampler,
    conv: KernelConvolver,
    closed_q: Option<QTrace>,
    threshold: Threshold,
}

impl<'a> Pipeline<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let sampler = FbmSampler::new(config.hurst, config.grid)?;
        let conv = KernelConvolver::new(config.hurst, config.grid);
        let closed_q = match (config.drift, config.sigma.constant_value()) {
            (DriftSpec::Polynomial { theta, alpha }, Some(sigma)) => {
                let mut q = q_process_poly(config.hurst, theta, alpha, config.grid)?;
                for x in &mut q.q {
                    *x /= sigma;
                }
                Some(q)
            }
            _ => None,
        };
        Ok(Self {
            config,
            sampler,
            conv,
            closed_q,
            threshold: config.detector.threshold(),
        })
    }

    fn detect(&self, index: u64) -> Result<DetectionResult> {
        let cfg = self.config;
        let mut noise = RngStream::new(cfg.master_seed, index, StreamPurpose::Noise);
        let base = cfg
            .sigma
            .modulate(&self.sampler.path(cfg.grid, noise.rng()));
        let path = match cfg.regime {
            Regime::PreChange => base,
            Regime::PostChangeAtZero => inject_drift(&base, &cfg.drift, 0.0)?,
        };
        let m = self.conv.transform(&path, &cfg.sigma)?;
        let q = match &self.closed_q {
            Some(q) => q.clone(),
            None => q_process_numeric_with(&self.conv, &cfg.drift, &path, &cfg.sigma)?,
        };
        let llr = llr_trace(&q, &m)?;
        if let Some(k) = llr.u.iter().position(|u| !u.is_finite()) {
            return Err(Error::Domain(format!(
                "log-likelihood ratio is not finite at step {k}"
            )));
        }
        Ok(match cfg.monitoring {
            Monitoring::Grid => cusum_run(&llr, self.threshold),
            Monitoring::Bridge => {
                let mut bridge = RngStream::new(cfg.master_seed, index, StreamPurpose::Bridge);
                cusum_run_bridged(&llr, self.threshold, bridge.rng())
            }
        })
    }

    fn replicate(&self, index: u64) -> ReplicateSummary {
        match self.detect(index) {
            Ok(r) => ReplicateSummary {
                index,
                stopped: r.stopped,
                stop_index: r.stop_index,
                stop_time: r.stop_time,
                half_qv_at_stop: r.qv_at_stop.map(|q| 0.5 * q),
                u_at_stop: r.u_at_stop,
                overshoot: r.overshoot,
                error: None,
            },
            Err(e) => {
                log::warn!("replicate {index} failed: {e}");
                ReplicateSummary::failed(index, e.to_string())
            }
        }
    }
}

/// Runs a batch and aggregates its estimands.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if let Some(w) = config.drift.optimality_warning(config.hurst) {
        log::warn!("{w}");
    }
    let pipeline = Pipeline::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let replicates: Vec<ReplicateSummary> = pool.install(|| {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|i| pipeline.replicate(i))
            .collect()
    });
    Ok(aggregate(config, pipeline.threshold, replicates))
}

fn aggregate(
    config: &ExperimentConfig,
    threshold: Threshold,
    mut replicates: Vec<ReplicateSummary>,
) -> ExperimentReport {
    replicates.sort_by_key(|r| r.index);
    let (g, h) = theoretical_characteristics(threshold);
    let stopped: Vec<&ReplicateSummary> = replicates.iter().filter(|r| r.stopped).collect();
    let n_failed = replicates.iter().filter(|r| r.error.is_some()).count();
    let completed = replicates.len() - n_failed;
    let censor_rate = if completed == 0 {
        1.0
    } else {
        (completed - stopped.len()) as f64 / completed as f64
    };

    let collect = |f: &dyn Fn(&ReplicateSummary) -> Option<f64>| -> Vec<f64> {
        stopped.iter().filter_map(|r| f(r)).collect()
    };
    let half_qv = collect(&|r| r.half_qv_at_stop);
    let u = collect(&|r| r.u_at_stop);
    let times = collect(&|r| r.stop_time);
    let overshoot = collect(&|r| r.overshoot);
    let rate = config.information_rate();

    let estimands = match config.regime {
        Regime::PreChange => {
            let neg_u: Vec<f64> = u.iter().map(|x| -x).collect();
            let gap: Vec<f64> = neg_u.iter().zip(&half_qv).map(|(a, b)| a - b).collect();
            vec![
                Estimand::from_samples("half_qv_at_stop", &half_qv, Some(h)),
                Estimand::from_samples("neg_u_at_stop", &neg_u, Some(h)),
                Estimand::from_samples("wald_gap", &gap, Some(0.0)),
                Estimand::from_samples("stop_time", &times, rate.map(|k| 2.0 * h / k)),
                Estimand::from_samples("overshoot", &overshoot, None),
            ]
        }
        Regime::PostChangeAtZero => {
            let gap: Vec<f64> = u.iter().zip(&half_qv).map(|(a, b)| a - b).collect();
            vec![
                Estimand::from_samples("half_qv_at_stop", &half_qv, Some(g)),
                Estimand::from_samples("u_at_stop", &u, Some(g)),
                Estimand::from_samples("wald_gap", &gap, Some(0.0)),
                Estimand::from_samples("stop_time", &times, rate.map(|k| 2.0 * g / k)),
                Estimand::from_samples("overshoot", &overshoot, None),
            ]
        }
    };

    ExperimentReport {
        config: config.echo(),
        threshold: threshold.value(),
        theory_g: g,
        theory_h: h,
        n_replicates: replicates.len(),
        n_stopped: stopped.len(),
        n_failed,
        censor_rate,
        estimands,
        replicates,
    }
}

/// True when reports for 1, 2 and all available workers serialize identically.
pub fn scheduling_invariance_check(config: &ExperimentConfig) -> Result<bool> {
    let max = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let mut reference: Option<String> = None;
    for workers in [1, 2, max.max(2)] {
        let mut cfg = config.clone();
        cfg.workers = workers;
        let json = canonical_json(&run_experiment(&cfg)?)?;
        match &reference {
            None => reference = Some(json),
            Some(r) if *r != json => return Ok(false),
            Some(_) => {}
        }
    }
    Ok(true)
}
