//! The filtered state: conditioned on the past observed record only.

use crate::dynamics::{psd_repair, AveragedChannel, ModelParams};
use crate::error::{Error, Result};
use crate::states::{trace, QubitState};
use crate::unraveling::{KetChannel, MeasurementRecord, TimeGrid};

/// Filtered states on the output grid plus the log-likelihood of the whole record
/// relative to the ostensible outcome distribution.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub grid: TimeGrid,
    pub states: Vec<QubitState>,
    pub log_likelihood: f64,
}

/// Runs the filter and returns the states on the output grid.
pub fn filter(
    record_o: &MeasurementRecord,
    rho0: &QubitState,
    p: &ModelParams,
    stride: usize,
) -> Result<Vec<QubitState>> {
    Ok(filter_with_likelihood(record_o, rho0, p, stride)?.states)
}

pub fn filter_with_likelihood(
    record_o: &MeasurementRecord,
    rho0: &QubitState,
    p: &ModelParams,
    stride: usize,
) -> Result<FilterOutput> {
    p.validate()?;
    record_o.check_compatible(p)?;
    let grid = TimeGrid::new(p, stride)?;
    let obs = KetChannel::new(record_o.setup, p, true);
    let hidden = AveragedChannel::new(p);
    let mut rho = *rho0.matrix();
    let mut states = Vec::with_capacity(grid.n_points);
    states.push(*rho0);
    let mut log_likelihood = 0.0;
    for (step, &o) in record_o.outcomes.iter().enumerate() {
        let k = obs.operator(o);
        let m = k * rho * k.adjoint();
        let l = trace(&m).re;
        if !(l > 1e-300) || !l.is_finite() {
            return Err(Error::InconsistentRecord {
                step,
                likelihood: l,
            });
        }
        log_likelihood += l.ln();
        let next = hidden.apply(&m.unscale(l));
        rho = psd_repair(&next)?;
        if (step + 1) % stride == 0 {
            states.push(QubitState::from_matrix_unchecked(rho));
        }
    }
    Ok(FilterOutput {
        grid,
        states,
        log_likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{lindblad_step, Setup};
    use crate::rng::{stream, Domain};
    use crate::states::{purity, BlochVector};
    use crate::unraveling::generate_true_trajectory;

    fn params() -> ModelParams {
        ModelParams {
            t_f: 2.0,
            ..ModelParams::default()
        }
    }

    #[test]
    fn dark_record_keeps_ground_state() {
        let p = ModelParams {
            omega: 0.0,
            ..params()
        };
        let rec = MeasurementRecord::new(Setup::N, p.dt, vec![0.0; p.n_steps()]).unwrap();
        let out = filter(&rec, &QubitState::ground(), &p, 100).unwrap();
        for s in out {
            assert!((s.bloch().z + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn click_from_ground_is_inconsistent() {
        let p = ModelParams {
            omega: 0.0,
            ..params()
        };
        let mut o = vec![0.0; p.n_steps()];
        o[3] = 1.0;
        let rec = MeasurementRecord::new(Setup::N, p.dt, o).unwrap();
        match filter(&rec, &QubitState::ground(), &p, 1) {
            Err(Error::InconsistentRecord { step, .. }) => assert_eq!(step, 3),
            other => panic!("expected inconsistency, got {other:?}"),
        }
    }

    #[test]
    fn filtered_states_are_valid_and_mixed() {
        let p = params();
        for (i, (a, b)) in [
            (Setup::N, Setup::X),
            (Setup::X, Setup::Y),
            (Setup::Y, Setup::N),
        ]
        .into_iter()
        .enumerate()
        {
            let mut rng = stream(11, Domain::TrueTrajectory, i as u64, 0);
            let traj =
                generate_true_trajectory(a, b, &QubitState::ground(), &p, 1, 0, &mut rng).unwrap();
            let f = filter(&traj.record_o, &QubitState::ground(), &p, 10).unwrap();
            assert_eq!(f.len(), traj.grid.n_points / 10 + 1);
            for s in &f {
                assert!(s.min_eigenvalue() >= -1e-12);
                assert!((s.trace() - 1.0).abs() < 1e-12);
            }
            assert!(purity(f.last().unwrap()) < 1.0 - 1e-3);
        }
    }

    #[test]
    fn mirror_invariant_setups_keep_x_zero() {
        let p = params();
        for (i, d_o) in [Setup::N, Setup::Y].into_iter().enumerate() {
            let mut rng = stream(12, Domain::TrueTrajectory, i as u64, 0);
            let traj =
                generate_true_trajectory(d_o, Setup::X, &QubitState::ground(), &p, 1, 0, &mut rng)
                    .unwrap();
            let rho0 = QubitState::from_bloch(BlochVector::new(0.0, 0.3, -0.5)).unwrap();
            let f = filter(&traj.record_o, &rho0, &p, 1).unwrap();
            let worst = f.iter().map(|s| s.bloch().x.abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-10, "{d_o}: {worst}");
        }
    }

    #[test]
    fn averaged_filter_follows_master_equation() {
        let p = params();
        let stride = 200;
        let n = 1500;
        let n_points = p.n_steps() / stride + 1;
        let mut mean = vec![[0.0f64; 3]; n_points];
        for i in 0..n {
            let mut rng = stream(13, Domain::TrueTrajectory, i, 0);
            let traj = generate_true_trajectory(
                Setup::Y,
                Setup::N,
                &QubitState::ground(),
                &p,
                stride,
                0,
                &mut rng,
            )
            .unwrap();
            let f = filter(&traj.record_o, &QubitState::ground(), &p, stride).unwrap();
            for (k, s) in f.iter().enumerate() {
                let b = s.bloch();
                mean[k][0] += b.x / n as f64;
                mean[k][1] += b.y / n as f64;
                mean[k][2] += b.z / n as f64;
            }
        }
        let mut rho = QubitState::ground();
        for (k, m) in mean.iter().enumerate() {
            if k > 0 {
                for _ in 0..stride {
                    rho = lindblad_step(&rho, &p).unwrap();
                }
            }
            let b = rho.bloch();
            for (est, exact) in m.iter().zip([b.x, b.y, b.z]) {
                assert!((est - exact).abs() < 0.03, "k={k}: {est} vs {exact}");
            }
        }
    }

    #[test]
    fn rejects_wrong_length_record() {
        let p = params();
        let rec = MeasurementRecord::new(Setup::X, p.dt, vec![0.0; 10]).unwrap();
        assert!(matches!(
            filter(&rec, &QubitState::ground(), &p, 1),
            Err(Error::RecordMismatch(_))
        ));
    }
}
