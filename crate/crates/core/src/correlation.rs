//! Two-time cross-correlation between the observed and unobserved records.
//!
//! Records are summed over bins of width `bin_width` inside the steady-state
//! window. For a lag `tau = m * bin_width` the estimator is the covariance of
//! `B_O[b + m]` and `B_U[b]` averaged over bins and trajectories, divided by
//! `bin_width^2` and by the rms current of each channel, `sqrt(E[dJ^2] / dt)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

use crate::dynamics::{ModelParams, Setup};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::states::QubitState;
use crate::unraveling::generate_true_trajectory;

/// Significance, in standard errors, required at each lag for a nonzero verdict.
pub const NONZERO_SIGMAS: f64 = 5.0;
/// Number of consecutive significant lags required for a nonzero verdict.
pub const NONZERO_RUN: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorConfig {
    pub params: ModelParams,
    pub rho0: QubitState,
    pub n_trajectories: usize,
    pub window: (f64, f64),
    pub bin_width: f64,
    pub master_seed: u64,
}

impl CorrelatorConfig {
    pub fn new(params: ModelParams, n_trajectories: usize, master_seed: u64) -> Self {
        Self {
            params,
            rho0: QubitState::ground(),
            n_trajectories,
            window: (2.0, params.t_f),
            bin_width: 0.1,
            master_seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelatorSeries {
    pub d_o: Setup,
    pub d_u: Setup,
    pub tau: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_trajectories: usize,
}

impl CorrelatorSeries {
    pub fn label(&self) -> String {
        format!("{}{}", self.d_o, self.d_u)
    }
}

/// Verdict of [`classify_pair`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairClass {
    Zero,
    Nonzero,
}

impl fmt::Display for PairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairClass::Zero => "zero",
            PairClass::Nonzero => "nonzero",
        })
    }
}

/// Symmetric lag grid `-tau_max..=tau_max` in steps of `bin_width`.
pub fn tau_grid(tau_max: f64, bin_width: f64) -> Vec<f64> {
    let m = (tau_max / bin_width).round() as i64;
    (-m..=m).map(|i| i as f64 * bin_width).collect()
}

struct TrajectoryMoments {
    lagged: Vec<f64>,
    mean_o: f64,
    mean_u: f64,
    sq_o: f64,
    sq_u: f64,
}

/// Estimates the normalised correlator of the observed setup `d_o` at `t + tau`
/// with the unobserved setup `d_u` at `t`, on the lags `taus`.
pub fn two_time_correlator(
    d_o: Setup,
    d_u: Setup,
    cfg: &CorrelatorConfig,
    taus: &[f64],
) -> Result<CorrelatorSeries> {
    let p = &cfg.params;
    p.validate()?;
    if cfg.n_trajectories < 2 {
        return Err(Error::config(
            "n_trajectories",
            "need at least two trajectories",
        ));
    }
    let (w0, w1) = cfg.window;
    if !(w0 >= p.t_i && w1 <= p.t_f + 1e-12 && w0 < w1) {
        return Err(Error::config(
            "correlator.window",
            format!("[{w0}, {w1}] must lie inside [{}, {}]", p.t_i, p.t_f),
        ));
    }
    let max_tau = taus.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if w1 - w0 < max_tau {
        return Err(Error::WindowTooShort {
            start: w0,
            end: w1,
            tau: max_tau,
        });
    }
    let bin_steps = (cfg.bin_width / p.dt).round() as usize;
    if bin_steps == 0 || ((bin_steps as f64) * p.dt - cfg.bin_width).abs() > 1e-9 * cfg.bin_width {
        return Err(Error::config(
            "correlator.bin_width",
            "must be a positive multiple of dt",
        ));
    }
    let lags: Vec<i64> = taus
        .iter()
        .map(|t| {
            let m = t / cfg.bin_width;
            if (m - m.round()).abs() > 1e-6 {
                Err(Error::config(
                    "correlator.tau",
                    format!("lag {t} is not a multiple of the bin width"),
                ))
            } else {
                Ok(m.round() as i64)
            }
        })
        .collect::<Result<_>>()?;
    let s0 = ((w0 - p.t_i) / p.dt).round() as usize;
    let s1 = ((w1 - p.t_i) / p.dt).round() as usize;
    let n_bins = (s1 - s0) / bin_steps;
    let sim = ModelParams {
        t_f: p.t_i + s1 as f64 * p.dt,
        ..*p
    };
    let n_sim = sim.n_steps();
    let pair_index = 3 * d_o as u64 + d_u as u64;

    let moments: Vec<TrajectoryMoments> = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(cfg.master_seed, Domain::Correlator, j as u64, pair_index);
            let traj =
                generate_true_trajectory(d_o, d_u, &cfg.rho0, &sim, n_sim, j as u64, &mut rng)?;
            let bin = |rec: &[f64]| -> Vec<f64> {
                (0..n_bins)
                    .map(|b| {
                        rec[s0 + b * bin_steps..s0 + (b + 1) * bin_steps]
                            .iter()
                            .sum()
                    })
                    .collect()
            };
            let bo = bin(&traj.record_o.outcomes);
            let bu = bin(&traj.record_v.outcomes);
            let window_o = &traj.record_o.outcomes[s0..s0 + n_bins * bin_steps];
            let window_u = &traj.record_v.outcomes[s0..s0 + n_bins * bin_steps];
            let lagged = lags
                .iter()
                .map(|&m| {
                    let (mut s, mut count) = (0.0, 0usize);
                    for b in 0..n_bins as i64 {
                        let bo_idx = b + m;
                        if bo_idx >= 0 && bo_idx < n_bins as i64 {
                            s += bo[bo_idx as usize] * bu[b as usize];
                            count += 1;
                        }
                    }
                    s / count as f64
                })
                .collect();
            Ok(TrajectoryMoments {
                lagged,
                mean_o: bo.iter().sum::<f64>() / n_bins as f64,
                mean_u: bu.iter().sum::<f64>() / n_bins as f64,
                sq_o: window_o.iter().map(|x| x * x).sum::<f64>() / window_o.len() as f64,
                sq_u: window_u.iter().map(|x| x * x).sum::<f64>() / window_u.len() as f64,
            })
        })
        .collect::<Result<_>>()?;

    let n = moments.len() as f64;
    let mean_o = moments.iter().map(|m| m.mean_o).sum::<f64>() / n;
    let mean_u = moments.iter().map(|m| m.mean_u).sum::<f64>() / n;
    let rms_o = (moments.iter().map(|m| m.sq_o).sum::<f64>() / n / p.dt).sqrt();
    let rms_u = (moments.iter().map(|m| m.sq_u).sum::<f64>() / n / p.dt).sqrt();
    let norm = cfg.bin_width * cfg.bin_width * rms_o * rms_u;

    let mut value = Vec::with_capacity(lags.len());
    let mut stderr = Vec::with_capacity(lags.len());
    for l in 0..lags.len() {
        // Linearised per-trajectory contributions to the covariance estimate.
        let contrib: Vec<f64> = moments
            .iter()
            .map(|m| m.lagged[l] - mean_o * m.mean_u - mean_u * m.mean_o)
            .collect();
        let c = contrib.iter().sum::<f64>() / n + mean_o * mean_u;
        let avg = contrib.iter().sum::<f64>() / n;
        let var = contrib.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1.0);
        value.push(c / norm);
        stderr.push((var / n).sqrt() / norm);
    }
    Ok(CorrelatorSeries {
        d_o,
        d_u,
        tau: taus.to_vec(),
        value,
        stderr,
        n_trajectories: cfg.n_trajectories,
    })
}

/// Nonzero when at least [`NONZERO_RUN`] consecutive lags are each
/// [`NONZERO_SIGMAS`] standard errors away from zero.
pub fn classify_pair(series: &CorrelatorSeries) -> PairClass {
    let mut run = 0;
    for (v, se) in series.value.iter().zip(&series.stderr) {
        if *se > 0.0 && (v / se).abs() >= NONZERO_SIGMAS {
            run += 1;
            if run >= NONZERO_RUN {
                return PairClass::Nonzero;
            }
        } else {
            run = 0;
        }
    }
    PairClass::Zero
}

/// Expected classification for every pair of setups: only the pairs that mix
/// the x quadrature with a mirror-invariant record are uncorrelated.
pub fn reference_class(d_o: Setup, d_u: Setup) -> PairClass {
    if (d_o == Setup::X) != (d_u == Setup::X) {
        PairClass::Zero
    } else {
        PairClass::Nonzero
    }
}

/// Writes correlators as CSV with columns `pair,tau,value,stderr`.
pub fn write_correlators_csv<W: Write>(series: &[CorrelatorSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "tau", "value", "stderr"])?;
    for s in series {
        let label = s.label();
        for ((t, v), e) in s.tau.iter().zip(&s.value).zip(&s.stderr) {
            w.write_record([
                label.clone(),
                crate::fmt_f64(*t),
                crate::fmt_f64(*v),
                crate::fmt_f64(*e),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
