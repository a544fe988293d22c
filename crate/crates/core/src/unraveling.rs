//! Joint generation of observed and unobserved records together with the pure
//! state conditioned on both.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dynamics::{ChannelKraus, ModelParams, Setup};
use crate::error::{Error, Result};
use crate::states::{c, Ket, Mat2, QubitState};

/// Output grid: every `stride`-th integration step, including both end points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_i: f64,
    pub dt: f64,
    pub stride: usize,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(p: &ModelParams, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("output_stride", "must be at least 1"));
        }
        let n_steps = p.n_steps();
        if !n_steps.is_multiple_of(stride) {
            return Err(Error::config(
                "output_stride",
                format!("{stride} does not divide the {n_steps} integration steps"),
            ));
        }
        Ok(Self {
            t_i: p.t_i,
            dt: p.dt,
            stride,
            n_points: n_steps / stride + 1,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_i + (k * self.stride) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.time(k)).collect()
    }

    /// Grid indices whose times fall inside `[start, end]`.
    pub fn window_indices(&self, start: f64, end: f64) -> Vec<usize> {
        let eps = 1e-9 * self.dt;
        (0..self.n_points)
            .filter(|&k| {
                let t = self.time(k);
                t >= start - eps && t <= end + eps
            })
            .collect()
    }
}

/// Outcomes of one channel, one entry per integration step. Counting records
/// hold `0`/`1`; homodyne records hold the current increment `dJ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub setup: Setup,
    pub dt: f64,
    pub outcomes: Vec<f64>,
}

impl MeasurementRecord {
    pub fn new(setup: Setup, dt: f64, outcomes: Vec<f64>) -> Result<Self> {
        if setup == Setup::N {
            if let Some(bad) = outcomes.iter().find(|&&o| o != 0.0 && o != 1.0) {
                return Err(Error::InvalidOutcome {
                    setup: 'N',
                    outcome: *bad,
                });
            }
        }
        Ok(Self {
            setup,
            dt,
            outcomes,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Checks the record against the integration parameters.
    pub fn check_compatible(&self, p: &ModelParams) -> Result<()> {
        if (self.dt - p.dt).abs() > 1e-12 * p.dt {
            return Err(Error::RecordMismatch(format!(
                "record dt {} differs from model dt {}",
                self.dt, p.dt
            )));
        }
        if self.outcomes.len() != p.n_steps() {
            return Err(Error::RecordMismatch(format!(
                "record has {} steps, model expects {}",
                self.outcomes.len(),
                p.n_steps()
            )));
        }
        Ok(())
    }
}

/// A pure state conditioned on both records, sampled on a [`TimeGrid`].
#[derive(Debug, Clone)]
pub struct TrueTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<QubitState>,
    pub record_o: MeasurementRecord,
    pub record_v: MeasurementRecord,
    pub seed: u64,
}

/// A ket representative of a pure density matrix.
pub fn ket_from_pure(rho: &QubitState) -> Ket {
    let m = rho.matrix();
    // The column with the larger norm is proportional to the state vector.
    let c0 = m.column(0).into_owned();
    let c1 = m.column(1).into_owned();
    let v = if c0.norm_squared() >= c1.norm_squared() {
        c0
    } else {
        c1
    };
    v.unscale(v.norm())
}

/// Single-channel step operating on kets, shared by every sampler.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KetChannel {
    pub kraus: ChannelKraus,
    pub dt: f64,
    sqrt_dt: f64,
}

impl KetChannel {
    pub fn new(setup: Setup, p: &ModelParams, include_hamiltonian: bool) -> Self {
        Self {
            kraus: ChannelKraus::new(setup, p, include_hamiltonian),
            dt: p.dt,
            sqrt_dt: p.dt.sqrt(),
        }
    }

    /// Measurement operator for an outcome recorded on this channel.
    #[inline]
    pub fn operator(&self, outcome: f64) -> Mat2 {
        if self.kraus.setup == Setup::N {
            if outcome == 0.0 {
                self.kraus.base
            } else {
                self.kraus.jump
            }
        } else {
            self.kraus.base + self.kraus.op * c(outcome, 0.0)
        }
    }

    /// Draws an outcome from its actual distribution given the normalised ket and
    /// returns it with the normalised post-measurement ket.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, psi: &Ket, rng: &mut R) -> (f64, Ket) {
        let (outcome, next) = if self.kraus.setup == Setup::N {
            let quiet = self.kraus.base * psi;
            let click = self.kraus.jump * psi;
            let p0 = quiet.norm_squared();
            let p1 = click.norm_squared();
            let u: f64 = rng.random();
            if u * (p0 + p1) < p1 {
                (1.0, click)
            } else {
                (0.0, quiet)
            }
        } else {
            let opsi = self.kraus.op * psi;
            let mean = 2.0 * psi.dotc(&opsi).re;
            let xi: f64 = rng.sample(StandardNormal);
            let dj = mean * self.dt + self.sqrt_dt * xi;
            (dj, self.kraus.base * psi + opsi * c(dj, 0.0))
        };
        let n = next.norm();
        (outcome, next.unscale(n))
    }
}

/// Samples a pair of records with the correct joint statistics and the pure state
/// conditioned on both. The observed channel's step is applied first and carries
/// the Hamiltonian.
pub fn generate_true_trajectory<R: Rng + ?Sized>(
    d_o: Setup,
    d_v: Setup,
    rho0: &QubitState,
    p: &ModelParams,
    stride: usize,
    seed: u64,
    rng: &mut R,
) -> Result<TrueTrajectory> {
    p.validate()?;
    if !rho0.is_pure() {
        return Err(Error::InvalidParams("initial state must be pure".into()));
    }
    let grid = TimeGrid::new(p, stride)?;
    let n_steps = p.n_steps();
    let obs = KetChannel::new(d_o, p, true);
    let hid = KetChannel::new(d_v, p, false);
    let mut psi = ket_from_pure(rho0);
    let mut out_o = Vec::with_capacity(n_steps);
    let mut out_v = Vec::with_capacity(n_steps);
    let mut states = Vec::with_capacity(grid.n_points);
    states.push(QubitState::from_ket(&psi));
    for step in 0..n_steps {
        let (o, next) = obs.sample(&psi, rng);
        let (v, next) = hid.sample(&next, rng);
        psi = next;
        out_o.push(o);
        out_v.push(v);
        if (step + 1) % stride == 0 {
            let s = QubitState::from_ket(&psi);
            let purity = crate::states::purity(&s);
            if !purity.is_finite() || purity < 1.0 - 1e-4 {
                return Err(Error::IntegrationFailure { step, purity });
            }
            states.push(s);
        }
    }
    Ok(TrueTrajectory {
        grid,
        states,
        record_o: MeasurementRecord::new(d_o, p.dt, out_o)?,
        record_v: MeasurementRecord::new(d_v, p.dt, out_v)?,
        seed,
    })
}

/// Writes a trajectory as CSV with columns
/// `step,t,outcome_O,outcome_V,x_T,y_T,z_T`, one row per grid point. The outcome
/// columns hold the record summed over the `stride` steps that follow `t`
/// (empty on the final row).
pub fn write_trajectory_csv<W: Write>(traj: &TrueTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "t", "outcome_O", "outcome_V", "x_T", "y_T", "z_T"])?;
    let stride = traj.grid.stride;
    for (k, s) in traj.states.iter().enumerate() {
        let b = s.bloch();
        let start = k * stride;
        let (o, v) = if start < traj.record_o.len() {
            let o: f64 = traj.record_o.outcomes[start..start + stride].iter().sum();
            let v: f64 = traj.record_v.outcomes[start..start + stride].iter().sum();
            (crate::fmt_f64(o), crate::fmt_f64(v))
        } else {
            (String::new(), String::new())
        };
        w.write_record([
            start.to_string(),
            crate::fmt_f64(traj.grid.time(k)),
            o,
            v,
            crate::fmt_f64(b.x),
            crate::fmt_f64(b.y),
            crate::fmt_f64(b.z),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{lindblad_step, steady_state};
    use crate::rng::{stream, Domain};
    use crate::states::purity;

    fn params(omega: f64) -> ModelParams {
        ModelParams {
            omega,
            t_f: 2.0,
            ..ModelParams::default()
        }
    }

    #[test]
    fn dark_state_stays_dark() {
        let p = params(0.0);
        let mut rng = stream(1, Domain::TrueTrajectory, 0, 0);
        let traj = generate_true_trajectory(
            Setup::N,
            Setup::N,
            &QubitState::ground(),
            &p,
            10,
            0,
            &mut rng,
        )
        .unwrap();
        assert!(traj.record_o.outcomes.iter().all(|&o| o == 0.0));
        assert!(traj.record_v.outcomes.iter().all(|&o| o == 0.0));
        for s in &traj.states {
            assert!((s.bloch().z + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn purity_is_preserved() {
        let p = params(5.0);
        for (i, (a, b)) in [
            (Setup::X, Setup::Y),
            (Setup::N, Setup::X),
            (Setup::Y, Setup::N),
        ]
        .into_iter()
        .enumerate()
        {
            let mut rng = stream(2, Domain::TrueTrajectory, i as u64, 0);
            let traj =
                generate_true_trajectory(a, b, &QubitState::ground(), &p, 1, 0, &mut rng).unwrap();
            let min = traj.states.iter().map(purity).fold(f64::INFINITY, f64::min);
            assert!(min >= 1.0 - 1e-6, "{a}{b}: {min}");
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let p = params(5.0);
        let run = || {
            let mut rng = stream(9, Domain::TrueTrajectory, 4, 0);
            generate_true_trajectory(
                Setup::Y,
                Setup::X,
                &QubitState::ground(),
                &p,
                5,
                9,
                &mut rng,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.record_o, b.record_o);
        assert_eq!(a.record_v, b.record_v);
        assert!(a.states.iter().zip(&b.states).all(|(x, y)| x == y));
    }

    #[test]
    fn ensemble_average_follows_master_equation() {
        let p = params(5.0);
        let stride = 100;
        let n = 2000;
        let grid = TimeGrid::new(&p, stride).unwrap();
        let mut sum = vec![[0.0f64; 3]; grid.n_points];
        let mut sum2 = vec![[0.0f64; 3]; grid.n_points];
        for i in 0..n {
            let mut rng = stream(3, Domain::TrueTrajectory, i, 0);
            let traj = generate_true_trajectory(
                Setup::N,
                Setup::Y,
                &QubitState::ground(),
                &p,
                stride,
                0,
                &mut rng,
            )
            .unwrap();
            for (k, s) in traj.states.iter().enumerate() {
                let b = s.bloch();
                for (j, v) in [b.x, b.y, b.z].into_iter().enumerate() {
                    sum[k][j] += v;
                    sum2[k][j] += v * v;
                }
            }
        }
        let mut rho = QubitState::ground();
        for k in 0..grid.n_points {
            if k > 0 {
                for _ in 0..stride {
                    rho = lindblad_step(&rho, &p).unwrap();
                }
            }
            let b = rho.bloch();
            for (j, v) in [b.x, b.y, b.z].into_iter().enumerate() {
                let mean = sum[k][j] / n as f64;
                let var = (sum2[k][j] / n as f64 - mean * mean).max(0.0);
                let se = (var / n as f64).sqrt();
                // Euler reference carries an O(dt) bias on top of the sampling error.
                assert!(
                    (mean - v).abs() <= 3.0 * se + 5e-3,
                    "k={k} j={j}: {mean} vs {v} (se {se})"
                );
            }
        }
    }

    #[test]
    fn click_rate_matches_steady_state() {
        let p = ModelParams {
            t_f: 6.0,
            ..ModelParams::default()
        };
        let ss = steady_state(&p).unwrap();
        let excited = 0.5 * (1.0 + ss.bloch().z);
        let expected = 0.5 * p.gamma * excited;
        let (lo, hi) = (4500usize, 6000usize);
        let n = 400;
        let mut rates = Vec::new();
        for i in 0..n {
            let mut rng = stream(4, Domain::TrueTrajectory, i, 0);
            let traj = generate_true_trajectory(
                Setup::N,
                Setup::N,
                &QubitState::ground(),
                &p,
                100,
                0,
                &mut rng,
            )
            .unwrap();
            for rec in [&traj.record_o, &traj.record_v] {
                let clicks: f64 = rec.outcomes[lo..hi].iter().sum();
                rates.push(clicks / ((hi - lo) as f64 * p.dt));
            }
        }
        let m = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / m;
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "{mean} vs {expected} ± {se}"
        );
    }

    #[test]
    fn homodyne_increments_have_unit_variance_per_dt() {
        let p = params(5.0);
        let mut acc = 0.0;
        let mut count = 0usize;
        for i in 0..50 {
            let mut rng = stream(5, Domain::TrueTrajectory, i, 0);
            let traj = generate_true_trajectory(
                Setup::X,
                Setup::Y,
                &QubitState::ground(),
                &p,
                100,
                0,
                &mut rng,
            )
            .unwrap();
            for rec in [&traj.record_o, &traj.record_v] {
                acc += rec.outcomes.iter().map(|d| d * d).sum::<f64>();
                count += rec.len();
            }
        }
        let ratio = acc / count as f64 / p.dt;
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn csv_dump_has_documented_header() {
        let p = params(5.0);
        let mut rng = stream(6, Domain::TrueTrajectory, 0, 0);
        let traj = generate_true_trajectory(
            Setup::Y,
            Setup::N,
            &QubitState::ground(),
            &p,
            500,
            0,
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,t,outcome_O,outcome_V,x_T,y_T,z_T\n"));
        assert_eq!(text.lines().count(), 1 + traj.grid.n_points);
    }

    #[test]
    fn rejects_mixed_initial_state() {
        let p = params(5.0);
        let mut rng = stream(7, Domain::TrueTrajectory, 0, 0);
        assert!(generate_true_trajectory(
            Setup::N,
            Setup::N,
            &QubitState::maximally_mixed(),
            &p,
            10,
            0,
            &mut rng
        )
        .is_err());
    }
}
