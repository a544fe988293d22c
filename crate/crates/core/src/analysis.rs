//! Smoothing powers, state deviations, the alpha coefficient, and the verdicts
//! built on them.
//!
//! All expectations are averages over observed records. Error bars come from a
//! nonparametric bootstrap over records; every series computed from the same
//! records shares the same resampling indices, which makes paired differences
//! meaningful.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::correlation::PairClass;
use crate::dynamics::Setup;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::states::{fidelity, hs_inner, purity, trsd, Mat2, QubitState};

/// An observed setup, the setup actually used on the unobserved channel, and the
/// setup assumed for it by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combo {
    pub d_o: Setup,
    pub d_v: Setup,
    pub d_u: Setup,
}

impl Combo {
    pub fn new(d_o: Setup, d_v: Setup, d_u: Setup) -> Self {
        Self { d_o, d_v, d_u }
    }

    pub fn all27() -> Vec<Combo> {
        let mut out = Vec::with_capacity(27);
        for d_o in Setup::ALL {
            for d_v in Setup::ALL {
                for d_u in Setup::ALL {
                    out.push(Combo::new(d_o, d_v, d_u));
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.d_u == self.d_v
    }

    /// The valid-smoothing combo sharing this one's observed and true setups.
    pub fn valid(&self) -> Combo {
        Combo::new(self.d_o, self.d_v, self.d_v)
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.d_o, self.d_v, self.d_u)
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let letters: Vec<char> = t.chars().filter(|ch| *ch != 'd').collect();
        if letters.len() != 3 || ![0, 3].contains(&t.chars().filter(|ch| *ch == 'd').count()) {
            return Err(Error::config("combos", format!("cannot parse combo `{s}`")));
        }
        let parse = |ch: char| {
            Setup::from_str(&ch.to_string())
                .map_err(|_| Error::config("combos", format!("unknown setup in `{s}`")))
        };
        Ok(Combo::new(
            parse(letters[0])?,
            parse(letters[1])?,
            parse(letters[2])?,
        ))
    }
}

impl Serialize for Combo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Combo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Bootstrap resampling indices over observed records.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    n_records: usize,
    draws: Vec<Vec<u32>>,
}

impl Bootstrap {
    pub fn new(n_records: usize, n_resamples: usize, master_seed: u64, key: u64) -> Self {
        let mut rng = stream(master_seed, Domain::Bootstrap, key, 0);
        let draws = (0..n_resamples)
            .map(|_| {
                (0..n_records)
                    .map(|_| rng.random_range(0..n_records as u32))
                    .collect()
            })
            .collect();
        Self { n_records, draws }
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    /// Standard error of the mean of `values` (one per record).
    pub fn stderr(&self, values: &[f64]) -> f64 {
        self.stderr_of(|idx| {
            idx.iter().map(|&i| values[i as usize]).sum::<f64>() / idx.len() as f64
        })
    }

    /// Standard error of an arbitrary statistic of the resampled records.
    pub fn stderr_of<F: Fn(&[u32]) -> f64>(&self, stat: F) -> f64 {
        let vals: Vec<f64> = self
            .draws
            .iter()
            .map(|d| stat(d))
            .filter(|v| v.is_finite())
            .collect();
        let n = vals.len();
        if n < 2 {
            return f64::NAN;
        }
        let m = vals.iter().sum::<f64>() / n as f64;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// Per-time standard errors of the mean of a record-major table.
    pub fn stderr_series(&self, table: &[Vec<f64>]) -> Vec<f64> {
        let n_t = table.first().map_or(0, Vec::len);
        let mut sum = vec![0.0; n_t];
        let mut sum2 = vec![0.0; n_t];
        let mut acc = vec![0.0; n_t];
        for d in &self.draws {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &i in d {
                for (a, v) in acc.iter_mut().zip(&table[i as usize]) {
                    *a += v;
                }
            }
            for k in 0..n_t {
                let m = acc[k] / d.len() as f64;
                sum[k] += m;
                sum2[k] += m * m;
            }
        }
        let b = self.draws.len() as f64;
        (0..n_t)
            .map(|k| {
                let m = sum[k] / b;
                ((sum2[k] / b - m * m) * b / (b - 1.0)).max(0.0).sqrt()
            })
            .collect()
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Mean in units of its standard error.
    pub fn z(&self) -> f64 {
        self.mean / self.stderr
    }
}

/// Per-record averages over the steady-state window.
#[derive(Debug, Clone, Default)]
pub struct RecordWindow {
    pub r_s: Vec<f64>,
    pub r_f: Vec<f64>,
    pub r_p: Vec<f64>,
    /// `S(rho_S, rho_T)` of the smoothed state itself.
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerSeries {
    pub combo: Combo,
    pub t_grid: Vec<f64>,
    pub r_s: Vec<f64>,
    pub r_s_err: Vec<f64>,
    pub r_f: Vec<f64>,
    pub r_f_err: Vec<f64>,
    pub r_p: Vec<f64>,
    pub r_p_err: Vec<f64>,
    pub n_obs_records: usize,
    pub window: (f64, f64),
    pub window_r_s: Estimate,
    pub window_r_f: Estimate,
    pub window_r_p: Estimate,
    pub window_cost: Estimate,
    /// Alpha coefficient against the valid smoothing, filled in by the caller.
    pub alpha: Vec<f64>,
    /// Mean effective sample size of the smoothing weights, filled in by the caller.
    pub ess_mean: Vec<f64>,
    #[serde(skip)]
    pub per_record: RecordWindow,
    #[serde(skip)]
    window_idx: Vec<usize>,
}

impl PowerSeries {
    pub fn window_indices(&self) -> &[usize] {
        &self.window_idx
    }
}

fn check_shapes(n_t: usize, sets: &[&[Vec<QubitState>]]) -> Result<usize> {
    let n_rec = sets[0].len();
    for s in sets {
        if s.len() != n_rec {
            return Err(Error::GridMismatch(format!(
                "{} records vs {} records",
                s.len(),
                n_rec
            )));
        }
        if let Some(bad) = s.iter().find(|r| r.len() != n_t) {
            return Err(Error::GridMismatch(format!(
                "series of length {} on a grid of {} points",
                bad.len(),
                n_t
            )));
        }
    }
    if n_rec == 0 {
        return Err(Error::GridMismatch("no records".into()));
    }
    Ok(n_rec)
}

/// Indices of `t_grid` inside `window`.
pub fn window_indices(t_grid: &[f64], window: (f64, f64)) -> Vec<usize> {
    let eps = 1e-9;
    t_grid
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= window.0 - eps && t <= window.1 + eps)
        .map(|(k, _)| k)
        .collect()
}

fn mean_over(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&k| values[k]).sum::<f64>() / idx.len() as f64
}

fn column_means(table: &[Vec<f64>]) -> Vec<f64> {
    let n = table.len() as f64;
    let mut out = vec![0.0; table[0].len()];
    for row in table {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// The three smoothing powers of `smoothed` relative to `filtered`, measured
/// against the true states, with bootstrap errors.
pub fn smoothing_powers(
    combo: Combo,
    t_grid: &[f64],
    true_states: &[Vec<QubitState>],
    filtered: &[Vec<QubitState>],
    smoothed: &[Vec<QubitState>],
    window: (f64, f64),
    boot: &Bootstrap,
) -> Result<PowerSeries> {
    let n_t = t_grid.len();
    let n_rec = check_shapes(n_t, &[true_states, filtered, smoothed])?;
    if boot.n_records() != n_rec {
        return Err(Error::GridMismatch(
            "bootstrap built for a different ensemble".into(),
        ));
    }
    let idx = window_indices(t_grid, window);
    if idx.is_empty() {
        return Err(Error::config(
            "ss_window",
            "no grid points inside the window",
        ));
    }
    let mut s_tab = Vec::with_capacity(n_rec);
    let mut f_tab = Vec::with_capacity(n_rec);
    let mut p_tab = Vec::with_capacity(n_rec);
    let mut per_record = RecordWindow::default();
    for r in 0..n_rec {
        let (mut s_row, mut f_row, mut p_row) = (vec![0.0; n_t], vec![0.0; n_t], vec![0.0; n_t]);
        let mut cost = vec![0.0; n_t];
        for k in 0..n_t {
            let t = &true_states[r][k];
            let (fs, ss) = (&filtered[r][k], &smoothed[r][k]);
            cost[k] = trsd(ss, t);
            s_row[k] = trsd(fs, t) - cost[k];
            f_row[k] = fidelity(ss, t) - fidelity(fs, t);
            p_row[k] = purity(ss) - purity(fs);
        }
        per_record.r_s.push(mean_over(&s_row, &idx));
        per_record.r_f.push(mean_over(&f_row, &idx));
        per_record.r_p.push(mean_over(&p_row, &idx));
        per_record.cost.push(mean_over(&cost, &idx));
        s_tab.push(s_row);
        f_tab.push(f_row);
        p_tab.push(p_row);
    }
    let est = |v: &[f64]| Estimate {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        stderr: boot.stderr(v),
    };
    Ok(PowerSeries {
        combo,
        t_grid: t_grid.to_vec(),
        r_s: column_means(&s_tab),
        r_s_err: boot.stderr_series(&s_tab),
        r_f: column_means(&f_tab),
        r_f_err: boot.stderr_series(&f_tab),
        r_p: column_means(&p_tab),
        r_p_err: boot.stderr_series(&p_tab),
        n_obs_records: n_rec,
        window,
        window_r_s: est(&per_record.r_s),
        window_r_f: est(&per_record.r_f),
        window_r_p: est(&per_record.r_p),
        window_cost: est(&per_record.cost),
        alpha: vec![f64::NAN; n_t],
        ess_mean: vec![f64::NAN; n_t],
        per_record,
        window_idx: idx,
    })
}

/// Window-averaged paired difference `a - b` over the same records.
pub fn paired_difference(a: &[f64], b: &[f64], boot: &Bootstrap) -> Estimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate {
        mean: d.iter().sum::<f64>() / d.len() as f64,
        stderr: boot.stderr(&d),
    }
}

/// Elementwise `smoothed - filtered` for one record.
pub fn delta_rho(smoothed: &[QubitState], filtered: &[QubitState]) -> Result<Vec<Mat2>> {
    if smoothed.len() != filtered.len() {
        return Err(Error::GridMismatch(format!(
            "{} smoothed vs {} filtered states",
            smoothed.len(),
            filtered.len()
        )));
    }
    Ok(smoothed
        .iter()
        .zip(filtered)
        .map(|(s, f)| s.matrix() - f.matrix())
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaSeries {
    pub t_grid: Vec<f64>,
    /// NaN where either purity power vanishes.
    pub alpha: Vec<f64>,
    pub time_average: f64,
    pub stderr: f64,
    pub alpha_sq_time_average: f64,
    pub alpha_sq_stderr: f64,
}

/// `alpha(t) = E Tr[dW dV] / sqrt(E Tr[dW^2] E Tr[dV^2])` from the state
/// deviations of the valid (`delta_v`) and assumed (`delta_w`) smoothing.
pub fn alpha_coefficient(
    t_grid: &[f64],
    delta_v: &[Vec<Mat2>],
    delta_w: &[Vec<Mat2>],
    window: (f64, f64),
    boot: &Bootstrap,
) -> Result<AlphaSeries> {
    let n_t = t_grid.len();
    if delta_v.len() != delta_w.len() || delta_v.is_empty() {
        return Err(Error::GridMismatch(
            "deviation ensembles differ in size".into(),
        ));
    }
    if delta_v.iter().chain(delta_w).any(|r| r.len() != n_t) {
        return Err(Error::GridMismatch(
            "deviation series off the time grid".into(),
        ));
    }
    let n_rec = delta_v.len();
    let mut cross = vec![vec![0.0; n_t]; n_rec];
    let mut vv = vec![vec![0.0; n_t]; n_rec];
    let mut ww = vec![vec![0.0; n_t]; n_rec];
    for r in 0..n_rec {
        for k in 0..n_t {
            let (v, w) = (&delta_v[r][k], &delta_w[r][k]);
            cross[r][k] = hs_inner(w, v);
            vv[r][k] = hs_inner(v, v);
            ww[r][k] = hs_inner(w, w);
        }
    }
    let ratio = |c: f64, a: f64, b: f64| {
        if a > 0.0 && b > 0.0 {
            c / (a.sqrt() * b.sqrt())
        } else {
            f64::NAN
        }
    };
    let (mc, mv, mw) = (column_means(&cross), column_means(&vv), column_means(&ww));
    let alpha: Vec<f64> = (0..n_t).map(|k| ratio(mc[k], mw[k], mv[k])).collect();
    let idx = window_indices(t_grid, window);
    let window_avg = |f: &dyn Fn(usize) -> f64, pow: i32| {
        let vals: Vec<f64> = idx
            .iter()
            .map(|&k| f(k).powi(pow))
            .filter(|v| v.is_finite())
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let resampled = |d: &[u32], pow: i32| {
        let m = d.len() as f64;
        window_avg(
            &|k| {
                let (mut c, mut a, mut b) = (0.0, 0.0, 0.0);
                for &i in d {
                    let i = i as usize;
                    c += cross[i][k];
                    a += ww[i][k];
                    b += vv[i][k];
                }
                ratio(c / m, a / m, b / m)
            },
            pow,
        )
    };
    Ok(AlphaSeries {
        t_grid: t_grid.to_vec(),
        time_average: window_avg(&|k| alpha[k], 1),
        stderr: boot.stderr_of(|d| resampled(d, 1)),
        alpha_sq_time_average: window_avg(&|k| alpha[k], 2),
        alpha_sq_stderr: boot.stderr_of(|d| resampled(d, 2)),
        alpha,
    })
}

/// Outcome of [`strange_regime_check`].
#[derive(Debug, Clone, Serialize)]
pub struct StrangeVerdict {
    pub combo: Combo,
    /// `R_P^dV / R_P^dW` over the window.
    pub purity_ratio: Estimate,
    pub alpha: f64,
    /// `min(alpha^2, 1 / (4 alpha^2))`.
    pub bound: f64,
    pub condition_holds: bool,
    pub negative_rs: bool,
    pub rs_significance: f64,
    pub rf_exceeds_valid: bool,
    pub rf_significance: f64,
    pub observed_strange: bool,
    pub consistent: bool,
    /// Ratio at most one half, necessary for both strange outcomes.
    pub half_flag: bool,
    /// Ratio at most one quarter, sufficient when `alpha^2` lies in `[1/4, 1]`.
    pub quarter_flag: bool,
}

/// Compares the predicted strange regime with the observed one over the
/// window. Both series must come from the same observed records as `boot`.
pub fn strange_regime_check(
    power_v: &PowerSeries,
    power_w: &PowerSeries,
    alpha: &AlphaSeries,
    boot: &Bootstrap,
) -> StrangeVerdict {
    let pv = &power_v.per_record.r_p;
    let pw = &power_w.per_record.r_p;
    let mean =
        |v: &[f64], d: &[u32]| d.iter().map(|&i| v[i as usize]).sum::<f64>() / d.len() as f64;
    let ratio = power_v.window_r_p.mean / power_w.window_r_p.mean;
    let ratio_se = boot.stderr_of(|d| mean(pv, d) / mean(pw, d));
    let a = alpha.time_average;
    let a2 = a * a;
    let bound = a2.min(1.0 / (4.0 * a2));
    let condition_holds = ratio < bound;

    let rs = power_w.window_r_s;
    let rf_diff = paired_difference(&power_w.per_record.r_f, &power_v.per_record.r_f, boot);
    let negative_rs = rs.mean < 0.0;
    let rf_exceeds_valid = rf_diff.mean > 0.0;
    let observed_strange = negative_rs && rf_exceeds_valid;
    let marginal =
        rs.z().abs() < 2.0 || rf_diff.z().abs() < 2.0 || (ratio - bound).abs() < 2.0 * ratio_se;
    StrangeVerdict {
        combo: power_w.combo,
        purity_ratio: Estimate {
            mean: ratio,
            stderr: ratio_se,
        },
        alpha: a,
        bound,
        condition_holds,
        negative_rs,
        rs_significance: -rs.z(),
        rf_exceeds_valid,
        rf_significance: rf_diff.z(),
        observed_strange,
        consistent: condition_holds == observed_strange || marginal,
        half_flag: ratio <= 0.5,
        quarter_flag: ratio <= 0.25,
    }
}

/// Conjecture label of a wrong-smoothing combo from the correlation classes of
/// the observed record with the true and the assumed unobserved setups.
pub fn conjecture_label(
    combo: Combo,
    class: impl Fn(Setup, Setup) -> PairClass,
) -> Option<&'static str> {
    if combo.is_valid() {
        return None;
    }
    let v = class(combo.d_o, combo.d_v) == PairClass::Nonzero;
    let w = class(combo.d_o, combo.d_u) == PairClass::Nonzero;
    Some(match (v, w) {
        (false, false) => "C1",
        (false, true) => "C2",
        (true, false) => "C3",
        (true, true) => "C4",
    })
}

/// Relative thresholds for "small" and "large" window-averaged powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub small: f64,
    pub large: f64,
    /// Allowed relative gap between wrong and valid powers for C4.
    pub c4_tolerance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            small: 0.25,
            large: 0.5,
            c4_tolerance: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjectureEntry {
    pub combo: Combo,
    pub label: Option<String>,
    pub r_s: Estimate,
    pub r_f: Estimate,
    pub r_p: Estimate,
    pub valid_r_s: Estimate,
    pub valid_r_f: Estimate,
    pub valid_r_p: Estimate,
    /// Paired `R_S^dW - R_S^dV` and `R_F^dW - R_F^dV`.
    pub diff_r_s: Estimate,
    pub diff_r_f: Estimate,
    pub large: bool,
    pub pass: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strange: Option<StrangeVerdict>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjectureReport {
    pub thresholds: Thresholds,
    pub max_valid_power: f64,
    pub entries: Vec<ConjectureEntry>,
}

/// Labels every combo and checks it against its conjecture. `powers` must hold
/// the valid combo for every wrong combo it contains; `boots` maps each combo to
/// the bootstrap of its observed ensemble.
pub fn conjecture_report(
    powers: &[PowerSeries],
    strange: &[StrangeVerdict],
    class: impl Fn(Setup, Setup) -> PairClass,
    thresholds: Thresholds,
    boot_for: impl Fn(Combo) -> Bootstrap,
) -> Result<ConjectureReport> {
    let find = |c: Combo| {
        powers.iter().find(|p| p.combo == c).ok_or_else(|| {
            Error::config(
                "combos",
                format!("missing valid smoothing {c} for comparison"),
            )
        })
    };
    let max_valid_power = powers
        .iter()
        .filter(|p| p.combo.is_valid())
        .map(|p| p.window_r_p.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut entries = Vec::with_capacity(powers.len());
    for pw in powers {
        let pv = find(pw.combo.valid())?;
        let boot = boot_for(pw.combo);
        let diff_r_s = paired_difference(&pw.per_record.r_s, &pv.per_record.r_s, &boot);
        let diff_r_f = paired_difference(&pw.per_record.r_f, &pv.per_record.r_f, &boot);
        let label = conjecture_label(pw.combo, &class);
        let small = thresholds.small * max_valid_power;
        let large_cut = thresholds.large * max_valid_power;
        let large = pw.window_r_s.mean >= large_cut && pw.window_r_f.mean >= large_cut;
        let (pass, detail) = match label {
            None => {
                let comb =
                    |a: &Estimate, b: &Estimate| (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
                let gap_sf = (pw.window_r_s.mean - pw.window_r_f.mean).abs();
                let gap_fp = (pw.window_r_f.mean - pw.window_r_p.mean).abs();
                let ok = gap_sf <= 3.0 * comb(&pw.window_r_s, &pw.window_r_f)
                    && gap_fp <= 3.0 * comb(&pw.window_r_f, &pw.window_r_p);
                (
                    ok,
                    format!("valid smoothing: |R_S-R_F| = {gap_sf:.3e}, |R_F-R_P| = {gap_fp:.3e}"),
                )
            }
            Some("C1") => {
                let worst = [pw.window_r_s, pw.window_r_f, pv.window_r_s, pv.window_r_f]
                    .iter()
                    .map(|e| e.mean.abs())
                    .fold(0.0, f64::max);
                (
                    worst < small,
                    format!("largest power {worst:.3e} vs small cut {small:.3e}"),
                )
            }
            Some("C2") => {
                let ok = diff_r_s.mean <= 2.0 * diff_r_s.stderr;
                let s = strange.iter().find(|s| s.combo == pw.combo);
                let flags = s.map_or(String::from("no strange check"), |s| {
                    format!(
                        "strange observed {}, predicted {}",
                        s.observed_strange, s.condition_holds
                    )
                });
                (
                    ok,
                    format!(
                        "R_S^dW - R_S^dV = {:.3e} ({:.1} se); {flags}",
                        diff_r_s.mean,
                        diff_r_s.z()
                    ),
                )
            }
            Some("C3") => {
                let ok = diff_r_s.z() <= -2.0 && diff_r_f.z() <= -2.0;
                (
                    ok,
                    format!(
                        "wrong minus valid: R_S {:.1} se, R_F {:.1} se",
                        diff_r_s.z(),
                        diff_r_f.z()
                    ),
                )
            }
            Some(_) => {
                let tol = thresholds.c4_tolerance;
                let rel_s = diff_r_s.mean.abs() / pv.window_r_s.mean;
                let rel_f = diff_r_f.mean.abs() / pv.window_r_f.mean;
                let ok = pv.window_r_s.mean > 0.0 && rel_s <= tol && rel_f <= tol;
                (
                    ok,
                    format!("relative gaps R_S {rel_s:.3}, R_F {rel_f:.3}; large {large}"),
                )
            }
        };
        entries.push(ConjectureEntry {
            combo: pw.combo,
            label: label.map(String::from),
            r_s: pw.window_r_s,
            r_f: pw.window_r_f,
            r_p: pw.window_r_p,
            valid_r_s: pv.window_r_s,
            valid_r_f: pv.window_r_f,
            valid_r_p: pv.window_r_p,
            diff_r_s,
            diff_r_f,
            large,
            pass,
            detail,
            strange: strange.iter().find(|s| s.combo == pw.combo).cloned(),
        });
    }
    Ok(ConjectureReport {
        thresholds,
        max_valid_power,
        entries,
    })
}

/// Writes a power series as CSV with columns
/// `t,R_S,R_S_err,R_F,R_F_err,R_P,R_P_err,alpha,ess_mean`.
pub fn write_powers_csv<W: Write>(p: &PowerSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t", "R_S", "R_S_err", "R_F", "R_F_err", "R_P", "R_P_err", "alpha", "ess_mean",
    ])?;
    for k in 0..p.t_grid.len() {
        let row = [
            p.t_grid[k],
            p.r_s[k],
            p.r_s_err[k],
            p.r_f[k],
            p.r_f_err[k],
            p.r_p[k],
            p.r_p_err[k],
            p.alpha[k],
            p.ess_mean[k],
        ];
        w.write_record(row.iter().map(|v| crate::fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}
