//! Configuration, the combo sweep, and everything written to the output directory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{
    alpha_coefficient, conjecture_report, delta_rho, paired_difference, smoothing_powers,
    strange_regime_check, write_powers_csv, AlphaSeries, Bootstrap, Combo, ConjectureReport,
    Estimate, PowerSeries, StrangeVerdict, Thresholds,
};
use crate::correlation::{
    classify_pair, reference_class, tau_grid, two_time_correlator, write_correlators_csv,
    CorrelatorConfig, CorrelatorSeries, PairClass, NONZERO_RUN, NONZERO_SIGMAS,
};
use crate::dynamics::{ModelParams, Setup};
use crate::error::{Error, Result};
use crate::filtering::filter;
use crate::rng::{stream, Domain};
use crate::smoothing::{backward_effect, smooth_with_effect, SamplerOptions};
use crate::states::{fidelity, hs_inner, purity, trace, trsd, BlochVector, QubitState};
use crate::unraveling::{generate_true_trajectory, write_trajectory_csv, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComboSelection {
    Named(String),
    List(Vec<Combo>),
}

impl ComboSelection {
    pub fn resolve(&self) -> Result<Vec<Combo>> {
        let mut out = match self {
            ComboSelection::Named(s) if s.eq_ignore_ascii_case("all27") => Combo::all27(),
            ComboSelection::Named(s) => s
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(str::parse)
                .collect::<Result<Vec<_>>>()?,
            ComboSelection::List(v) => v.clone(),
        };
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::config("combos", "no combos selected"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelatorSettings {
    pub enabled: bool,
    pub n_trajectories: usize,
    pub window: [f64; 2],
    pub tau_max: f64,
    pub bin_width: f64,
}

impl Default for CorrelatorSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            n_trajectories: 4000,
            window: [2.0, 8.0],
            tau_max: 2.0,
            bin_width: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub gamma: f64,
    pub omega_over_gamma: f64,
    pub dt: f64,
    pub t_total: f64,
    pub n_true_trajectories: usize,
    pub n_hypothetical: usize,
    pub ss_window: [f64; 2],
    pub master_seed: u64,
    pub combos: ComboSelection,
    pub output_dir: PathBuf,
    /// Integration steps between stored time points.
    pub output_stride: usize,
    /// Bloch vector of the pure initial state.
    pub initial_bloch: [f64; 3],
    pub n_bootstrap: usize,
    pub resample_threshold: f64,
    pub correlator: CorrelatorSettings,
    pub thresholds: Thresholds,
    pub dump_trajectories: bool,
    /// Refuse to run above this many Kraus applications.
    pub budget: Option<f64>,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            omega_over_gamma: 5.0,
            dt: 1e-3,
            t_total: 8.0,
            n_true_trajectories: 3000,
            n_hypothetical: 10_000,
            ss_window: [4.5, 6.0],
            master_seed: 0,
            combos: ComboSelection::Named("all27".into()),
            output_dir: PathBuf::from("qsmooth-out"),
            output_stride: 10,
            initial_bloch: [0.0, 0.0, -1.0],
            n_bootstrap: 500,
            resample_threshold: 0.5,
            correlator: CorrelatorSettings::default(),
            thresholds: Thresholds::default(),
            dump_trajectories: false,
            budget: None,
            threads: None,
        }
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

impl ExperimentConfig {
    /// Laptop-scale ensemble sizes.
    pub fn desk() -> Self {
        Self {
            n_true_trajectories: 300,
            n_hypothetical: 1000,
            ..Self::default()
        }
    }

    /// Parses a config document, or the `config` member of a run manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("code_version").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            Error::config(
                unknown_field(&msg).unwrap_or_else(|| "<document>".into()),
                msg,
            )
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            gamma: self.gamma,
            omega: self.omega_over_gamma * self.gamma,
            dt: self.dt,
            t_i: 0.0,
            t_f: self.t_total,
        }
    }

    pub fn initial_state(&self) -> Result<QubitState> {
        let [x, y, z] = self.initial_bloch;
        let s = QubitState::from_bloch(BlochVector::new(x, y, z))
            .map_err(|e| Error::config("initial_bloch", e.to_string()))?;
        if !s.is_pure() {
            return Err(Error::config(
                "initial_bloch",
                "initial state must be pure (|b| = 1)",
            ));
        }
        Ok(s)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if self.output_stride == 0 {
            return Err(Error::config("output_stride", "must be positive"));
        }
        TimeGrid::new(&self.params(), self.output_stride)
            .map_err(|e| Error::config("output_stride", e.to_string()))
    }

    /// Checks every invariant of the configuration without running anything.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive, got {v}")))
            }
        };
        positive("gamma", self.gamma)?;
        positive("dt", self.dt)?;
        positive("t_total", self.t_total)?;
        if !(self.omega_over_gamma >= 0.0 && self.omega_over_gamma.is_finite()) {
            return Err(Error::config("omega_over_gamma", "must be non-negative"));
        }
        self.params()
            .validate()
            .map_err(|e| Error::config("dt", e.to_string()))?;
        if self.n_true_trajectories < 2 {
            return Err(Error::config(
                "n_true_trajectories",
                "need at least two records",
            ));
        }
        if self.n_hypothetical == 0 {
            return Err(Error::config("n_hypothetical", "must be positive"));
        }
        if self.n_bootstrap < 2 {
            return Err(Error::config("n_bootstrap", "need at least two resamples"));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::config("resample_threshold", "must lie in (0, 1]"));
        }
        let [w0, w1] = self.ss_window;
        if !(w0 >= 0.0 && w0 < w1 && w1 <= self.t_total) {
            return Err(Error::config(
                "ss_window",
                format!(
                    "[{w0}, {w1}] must be an interval inside [0, {}]",
                    self.t_total
                ),
            ));
        }
        let grid = self.grid()?;
        if grid.window_indices(w0, w1).is_empty() {
            return Err(Error::config("ss_window", "contains no output time points"));
        }
        self.initial_state()?;
        self.combos.resolve()?;
        let t = &self.thresholds;
        if !(t.small > 0.0 && t.small <= t.large && t.c4_tolerance > 0.0) {
            return Err(Error::config(
                "thresholds",
                "need 0 < small <= large and c4_tolerance > 0",
            ));
        }
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::config("threads", "must be positive"));
            }
        }
        if let Some(b) = self.budget {
            positive("budget", b)?;
        }
        if self.correlator.enabled {
            let c = &self.correlator;
            if c.n_trajectories < 2 {
                return Err(Error::config(
                    "correlator.n_trajectories",
                    "need at least two",
                ));
            }
            let [c0, c1] = c.window;
            if !(c0 >= 0.0 && c0 < c1 && c1 <= self.t_total + 1e-12) {
                return Err(Error::config(
                    "correlator.window",
                    "must lie inside [0, t_total]",
                ));
            }
            positive("correlator.bin_width", c.bin_width)?;
            if !(c.tau_max >= 0.0) {
                return Err(Error::config("correlator.tau_max", "must be non-negative"));
            }
            if c1 - c0 < c.tau_max {
                return Err(Error::WindowTooShort {
                    start: c0,
                    end: c1,
                    tau: c.tau_max,
                });
            }
        }
        Ok(())
    }

    /// Groups the selected combos by observed and true setup. Every group also
    /// smooths with the valid setup, which the wrong combos are compared against.
    pub fn plan(&self) -> Result<Vec<GroupPlan>> {
        let mut groups: BTreeMap<(Setup, Setup), Vec<Setup>> = BTreeMap::new();
        for c in self.combos.resolve()? {
            let e = groups.entry((c.d_o, c.d_v)).or_default();
            e.push(c.d_u);
            e.push(c.d_v);
        }
        Ok(groups
            .into_iter()
            .map(|((d_o, d_v), mut d_us)| {
                d_us.sort();
                d_us.dedup();
                GroupPlan { d_o, d_v, d_us }
            })
            .collect())
    }

    pub fn estimate(&self) -> Result<CostReport> {
        let plan = self.plan()?;
        let n_steps = self.params().n_steps() as f64;
        let n_true = self.n_true_trajectories as f64;
        let per_combo = n_true * self.n_hypothetical as f64 * n_steps;
        let smoothing_runs: usize = plan.iter().map(|g| g.d_us.len()).sum();
        let true_and_filter = plan.len() as f64 * n_true * n_steps * 4.0;
        let correlator = if self.correlator.enabled {
            9.0 * self.correlator.n_trajectories as f64 * n_steps * 2.0
        } else {
            0.0
        };
        let n_points = (self.params().n_steps() / self.output_stride.max(1) + 1) as f64;
        // States kept per record: truth, filter, one smoothed series per assumed setup.
        let per_group = plan.iter().map(|g| g.d_us.len() + 2).max().unwrap_or(0) as f64;
        let memory_bytes = n_true * n_points * per_group * 64.0
            + self.n_hypothetical as f64 * 48.0 * rayon::current_num_threads() as f64
            + self.n_bootstrap as f64 * n_true * 4.0 * plan.len() as f64;
        Ok(CostReport {
            kraus_per_combo: per_combo,
            smoothing_runs,
            total_kraus: per_combo * smoothing_runs as f64 + true_and_filter + correlator,
            memory_bytes,
        })
    }

    fn check_budget(&self) -> Result<CostReport> {
        let cost = self.estimate()?;
        if let Some(budget) = self.budget {
            if cost.total_kraus > budget {
                return Err(Error::OverBudget {
                    estimate: cost.total_kraus,
                    budget,
                });
            }
        }
        Ok(cost)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPlan {
    pub d_o: Setup,
    pub d_v: Setup,
    pub d_us: Vec<Setup>,
}

impl GroupPlan {
    fn key(&self) -> u64 {
        3 * setup_index(self.d_o) + setup_index(self.d_v)
    }
}

fn setup_index(s: Setup) -> u64 {
    match s {
        Setup::N => 0,
        Setup::X => 1,
        Setup::Y => 2,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    /// `n_true * n_hyp * n_steps`, the hypothetical-record steps of one combo.
    pub kraus_per_combo: f64,
    pub smoothing_runs: usize,
    pub total_kraus: f64,
    pub memory_bytes: f64,
}

/// Exact-identity residuals and state-validity checks collected over one group.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct GroupChecks {
    /// Largest `|S - (P - 2F + 1)|` over every estimate, record and time.
    pub identity_residual: f64,
    /// Largest `|Tr[delta rho]|`.
    pub delta_trace: f64,
    pub min_true_purity: f64,
    /// Largest `|x|` of filtered and smoothed states; only meaningful when the
    /// observed setup and initial state are mirror symmetric.
    pub max_abs_x: f64,
}

impl GroupChecks {
    fn merge(self, o: GroupChecks) -> GroupChecks {
        GroupChecks {
            identity_residual: self.identity_residual.max(o.identity_residual),
            delta_trace: self.delta_trace.max(o.delta_trace),
            min_true_purity: self.min_true_purity.min(o.min_true_purity),
            max_abs_x: self.max_abs_x.max(o.max_abs_x),
        }
    }
}

/// Window averages of one combo, with the statistical cross-checks of the
/// fidelity and purity powers against their state-deviation forms.
#[derive(Debug, Clone, Serialize)]
pub struct ComboSummary {
    pub combo: Combo,
    pub r_s: Estimate,
    pub r_f: Estimate,
    pub r_p: Estimate,
    /// `E[S(rho_S, rho_T)]` over the window.
    pub cost: Estimate,
    pub alpha: f64,
    pub alpha_stderr: f64,
    pub alpha_sq: f64,
    pub alpha_sq_stderr: f64,
    /// `R_P - E Tr[dU^2]` and `R_F - E Tr[dU dV]`, zero in expectation.
    pub r_p_delta_gap: Estimate,
    pub r_f_delta_gap: Estimate,
    /// Largest `|R_S - (2 R_F - R_P)|` over the time grid.
    pub power_identity_residual: f64,
    pub ess_min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationEntry {
    pub pair: String,
    pub class: PairClass,
    pub reference: PairClass,
    pub max_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub window: [f64; 2],
    pub classification_rule: String,
    pub classification_source: String,
    pub classification: Vec<ClassificationEntry>,
    pub groups: BTreeMap<String, GroupChecks>,
    pub combos: Vec<ComboSummary>,
    pub strange: Vec<StrangeVerdict>,
    pub conjectures: ConjectureReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub code_version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
}

/// Everything computed for one observed/true setup pair.
#[derive(Debug, Clone)]
pub struct GroupResult {
    pub plan: GroupPlan,
    pub powers: Vec<PowerSeries>,
    pub alphas: Vec<AlphaSeries>,
    pub summaries: Vec<ComboSummary>,
    pub checks: GroupChecks,
    pub bootstrap: Bootstrap,
}

struct RecordOut {
    truth: Vec<QubitState>,
    filtered: Vec<QubitState>,
    smoothed: Vec<Vec<QubitState>>,
    ess: Vec<Vec<f64>>,
    checks: GroupChecks,
}

fn record_checks(
    truth: &[QubitState],
    filtered: &[QubitState],
    smoothed: &[Vec<QubitState>],
    mirror: bool,
) -> GroupChecks {
    let mut c = GroupChecks {
        min_true_purity: f64::INFINITY,
        ..GroupChecks::default()
    };
    for (k, t) in truth.iter().enumerate() {
        c.min_true_purity = c.min_true_purity.min(purity(t));
        let f = &filtered[k];
        let mut all = vec![f];
        all.extend(smoothed.iter().map(|s| &s[k]));
        for est in all {
            let residual = trsd(est, t) - (purity(est) - 2.0 * fidelity(est, t) + 1.0);
            c.identity_residual = c.identity_residual.max(residual.abs());
            if mirror {
                c.max_abs_x = c.max_abs_x.max(est.bloch().x.abs());
            }
        }
        for s in smoothed {
            let d = s[k].matrix() - f.matrix();
            c.delta_trace = c.delta_trace.max(trace(&d).norm());
        }
    }
    c
}

/// Simulates, filters and smooths every record of one group.
pub fn run_group(
    cfg: &ExperimentConfig,
    plan: &GroupPlan,
    dump_dir: Option<&Path>,
) -> Result<GroupResult> {
    let p = cfg.params();
    let rho0 = cfg.initial_state()?;
    let stride = cfg.output_stride;
    let grid = cfg.grid()?;
    let window = (cfg.ss_window[0], cfg.ss_window[1]);
    let opts = SamplerOptions {
        n_samples: cfg.n_hypothetical,
        stride,
        resample_threshold: cfg.resample_threshold,
        keep_records: false,
    };
    let key = plan.key();
    let mirror = plan.d_o.is_mirror_invariant() && rho0.bloch().x == 0.0;
    let outs: Vec<RecordOut> = (0..cfg.n_true_trajectories)
        .into_par_iter()
        .map(|r| -> Result<RecordOut> {
            let mut rng = stream(cfg.master_seed, Domain::TrueTrajectory, r as u64, key);
            let traj = generate_true_trajectory(
                plan.d_o, plan.d_v, &rho0, &p, stride, r as u64, &mut rng,
            )?;
            if let Some(dir) = dump_dir {
                let path = dir.join(format!("traj_{}{}_{r:05}.csv", plan.d_o, plan.d_v));
                write_trajectory_csv(&traj, BufWriter::new(File::create(path)?))?;
            }
            let filtered = filter(&traj.record_o, &rho0, &p, stride)?;
            let effect = backward_effect(&traj.record_o, &p, stride)?;
            let mut smoothed = Vec::with_capacity(plan.d_us.len());
            let mut ess = Vec::with_capacity(plan.d_us.len());
            for &d_u in &plan.d_us {
                let mut rng = stream(
                    cfg.master_seed,
                    Domain::Hypothetical,
                    r as u64,
                    key * 8 + setup_index(d_u),
                );
                let s =
                    smooth_with_effect(&traj.record_o, d_u, &rho0, &p, &opts, &effect, &mut rng)?;
                smoothed.push(s.states);
                ess.push(s.ess);
            }
            let checks = record_checks(&traj.states, &filtered, &smoothed, mirror);
            Ok(RecordOut {
                truth: traj.states,
                filtered,
                smoothed,
                ess,
                checks,
            })
        })
        .collect::<Result<_>>()?;

    let checks = outs
        .iter()
        .map(|o| o.checks)
        .reduce(GroupChecks::merge)
        .unwrap_or_default();
    let boot = Bootstrap::new(outs.len(), cfg.n_bootstrap, cfg.master_seed, key);
    let t_grid = grid.times();
    let truths: Vec<_> = outs.iter().map(|o| o.truth.clone()).collect();
    let filtered: Vec<_> = outs.iter().map(|o| o.filtered.clone()).collect();
    let deltas: Vec<Vec<Vec<_>>> = (0..plan.d_us.len())
        .map(|u| {
            outs.iter()
                .map(|o| delta_rho(&o.smoothed[u], &o.filtered))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let v_idx = plan
        .d_us
        .iter()
        .position(|&u| u == plan.d_v)
        .expect("plan always contains the valid setup");

    let mut powers = Vec::new();
    let mut alphas = Vec::new();
    let mut summaries = Vec::new();
    for (u, &d_u) in plan.d_us.iter().enumerate() {
        let combo = Combo::new(plan.d_o, plan.d_v, d_u);
        let smoothed: Vec<_> = outs.iter().map(|o| o.smoothed[u].clone()).collect();
        let mut ps =
            smoothing_powers(combo, &t_grid, &truths, &filtered, &smoothed, window, &boot)?;
        let alpha = alpha_coefficient(&t_grid, &deltas[v_idx], &deltas[u], window, &boot)?;
        ps.alpha = alpha.alpha.clone();
        ps.ess_mean = (0..t_grid.len())
            .map(|k| outs.iter().map(|o| o.ess[u][k]).sum::<f64>() / outs.len() as f64)
            .collect();

        let idx = ps.window_indices().to_vec();
        let per_record = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            (0..outs.len())
                .map(|r| idx.iter().map(|&k| f(r, k)).sum::<f64>() / idx.len() as f64)
                .collect()
        };
        let dd = per_record(&|r, k| hs_inner(&deltas[u][r][k], &deltas[u][r][k]));
        let dv = per_record(&|r, k| hs_inner(&deltas[u][r][k], &deltas[v_idx][r][k]));
        let power_identity_residual = (0..t_grid.len())
            .map(|k| (ps.r_s[k] - (2.0 * ps.r_f[k] - ps.r_p[k])).abs())
            .fold(0.0, f64::max);
        summaries.push(ComboSummary {
            combo,
            r_s: ps.window_r_s,
            r_f: ps.window_r_f,
            r_p: ps.window_r_p,
            cost: ps.window_cost,
            alpha: alpha.time_average,
            alpha_stderr: alpha.stderr,
            alpha_sq: alpha.alpha_sq_time_average,
            alpha_sq_stderr: alpha.alpha_sq_stderr,
            r_p_delta_gap: paired_difference(&ps.per_record.r_p, &dd, &boot),
            r_f_delta_gap: paired_difference(&ps.per_record.r_f, &dv, &boot),
            power_identity_residual,
            ess_min: ps.ess_mean.iter().cloned().fold(f64::INFINITY, f64::min),
        });
        powers.push(ps);
        alphas.push(alpha);
    }
    Ok(GroupResult {
        plan: plan.clone(),
        powers,
        alphas,
        summaries,
        checks,
        bootstrap: boot,
    })
}

/// Correlators for all nine setup pairs.
pub fn run_correlators(cfg: &ExperimentConfig) -> Result<Vec<CorrelatorSeries>> {
    let c = &cfg.correlator;
    let corr_cfg = CorrelatorConfig {
        params: cfg.params(),
        rho0: cfg.initial_state()?,
        n_trajectories: c.n_trajectories,
        window: (c.window[0], c.window[1]),
        bin_width: c.bin_width,
        master_seed: cfg.master_seed,
    };
    let taus = tau_grid(c.tau_max, c.bin_width);
    let mut out = Vec::with_capacity(9);
    for d_o in Setup::ALL {
        for d_u in Setup::ALL {
            out.push(two_time_correlator(d_o, d_u, &corr_cfg, &taus)?);
        }
    }
    Ok(out)
}

pub fn classification(series: &[CorrelatorSeries]) -> Vec<ClassificationEntry> {
    series
        .iter()
        .map(|s| ClassificationEntry {
            pair: s.label(),
            class: classify_pair(s),
            reference: reference_class(s.d_o, s.d_u),
            max_sigma: s
                .value
                .iter()
                .zip(&s.stderr)
                .map(|(v, e)| (v / e).abs())
                .filter(|z| z.is_finite())
                .fold(0.0, f64::max),
        })
        .collect()
}

fn classification_rule() -> String {
    format!(
        "nonzero iff at least {NONZERO_RUN} consecutive lags have |value| >= {NONZERO_SIGMAS} stderr"
    )
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("threads", e.to_string()))?
            .install(f),
        None => f(),
    }
}

/// Writes the correlators and their classification into `cfg.output_dir`.
pub fn run_correlators_only(cfg: &ExperimentConfig) -> Result<Vec<ClassificationEntry>> {
    cfg.validate()?;
    if !cfg.correlator.enabled {
        return Err(Error::config(
            "correlator.enabled",
            "correlators are disabled",
        ));
    }
    with_threads(cfg.threads, || {
        fs::create_dir_all(&cfg.output_dir)?;
        let series = run_correlators(cfg)?;
        write_correlators_csv(
            &series,
            BufWriter::new(File::create(cfg.output_dir.join("correlators.csv"))?),
        )?;
        let classes = classification(&series);
        let doc = serde_json::json!({
            "classification_rule": classification_rule(),
            "n_trajectories": cfg.correlator.n_trajectories,
            "classification": classes,
        });
        fs::write(
            cfg.output_dir.join("classification.json"),
            serde_json::to_string_pretty(&doc)?,
        )?;
        Ok(classes)
    })
}

/// Outcome of a full run, also written to `report.json`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub output_dir: PathBuf,
    pub report: Report,
    pub groups: Vec<GroupResult>,
    pub correlators: Vec<CorrelatorSeries>,
}

/// Runs the whole sweep and writes every artifact into `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    cfg.check_budget()?;
    with_threads(cfg.threads, || run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let dump_dir = if cfg.dump_trajectories {
        let d = dir.join("trajectories");
        fs::create_dir_all(&d)?;
        Some(d)
    } else {
        None
    };
    let mut files = Vec::new();
    let mut groups = Vec::new();
    for plan in cfg.plan()? {
        log::info!(
            "smoothing group {}{} with {:?}",
            plan.d_o,
            plan.d_v,
            plan.d_us
        );
        let g = run_group(cfg, &plan, dump_dir.as_deref())?;
        for ps in &g.powers {
            let name = format!("powers_{}.csv", ps.combo);
            write_powers_csv(ps, BufWriter::new(File::create(dir.join(&name))?))?;
            files.push(name);
        }
        groups.push(g);
    }

    let correlators = if cfg.correlator.enabled {
        log::info!("estimating correlators");
        let series = run_correlators(cfg)?;
        write_correlators_csv(
            &series,
            BufWriter::new(File::create(dir.join("correlators.csv"))?),
        )?;
        files.push("correlators.csv".into());
        series
    } else {
        Vec::new()
    };
    let classes = classification(&correlators);
    let (class_of, source): (Box<dyn Fn(Setup, Setup) -> PairClass>, &str) = if classes.is_empty() {
        (Box::new(reference_class), "reference")
    } else {
        let table = classes.clone();
        (
            Box::new(move |o: Setup, u: Setup| {
                let label = format!("{o}{u}");
                table
                    .iter()
                    .find(|c| c.pair == label)
                    .map_or(reference_class(o, u), |c| c.class)
            }),
            "correlators",
        )
    };

    let mut strange = Vec::new();
    for g in &groups {
        let valid = g
            .powers
            .iter()
            .find(|p| p.combo.is_valid())
            .expect("valid combo in group");
        for (ps, alpha) in g.powers.iter().zip(&g.alphas) {
            if !ps.combo.is_valid() {
                strange.push(strange_regime_check(valid, ps, alpha, &g.bootstrap));
            }
        }
    }
    let all_powers: Vec<PowerSeries> = groups
        .iter()
        .flat_map(|g| g.powers.iter().cloned())
        .collect();
    let conjectures = conjecture_report(&all_powers, &strange, &class_of, cfg.thresholds, |c| {
        groups
            .iter()
            .find(|g| g.plan.d_o == c.d_o && g.plan.d_v == c.d_v)
            .expect("combo belongs to a group")
            .bootstrap
            .clone()
    })?;
    let report = Report {
        window: cfg.ss_window,
        classification_rule: classification_rule(),
        classification_source: source.into(),
        classification: classes,
        groups: groups
            .iter()
            .map(|g| (format!("{}{}", g.plan.d_o, g.plan.d_v), g.checks))
            .collect(),
        combos: groups
            .iter()
            .flat_map(|g| g.summaries.iter().cloned())
            .collect(),
        strange,
        conjectures,
    };
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    files.push("report.json".into());
    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        config: cfg.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(RunOutput {
        output_dir: dir,
        report,
        groups,
        correlators,
    })
}
