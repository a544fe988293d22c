//! Master-equation evolution and the per-step measurement operations for the
//! three detector setups.
//!
//! Both output channels carry `c = sqrt(gamma/2) sigma_-`; a homodyne setup with
//! local-oscillator phase `phi` uses `c exp(-i phi)`. One time step of a monitored
//! channel is the trace-decreasing operation `rho -> K rho K^dag` with
//!
//! * photon counting: `K_0 = 1 - i H dt - c^dag c dt / 2`, `K_1 = sqrt(dt) c`;
//! * homodyne: `K_dJ = 1 - i H dt - c^dag c dt / 2 + dJ c`, with `dJ` measured
//!   against the ostensible distribution `Normal(0, dt)`.
//!
//! Averaging any of these over outcomes gives the same completely positive map
//! `A(rho) = K_0 rho K_0^dag + dt c rho c^dag` (without `H`), which is what the
//! filter and the backward effect use for the channel nobody records.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::states::{c, hermitian_eigenvalues, sigma_minus, sigma_x, trace, Mat2, QubitState};

/// Negative eigenvalues smaller than this in magnitude are clipped; larger ones abort.
pub const PSD_REPAIR_TOL: f64 = 1e-9;

/// Physical and discretisation parameters of the driven, decaying qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Total decay rate; each channel carries half of it.
    pub gamma: f64,
    /// Rabi frequency of the drive about the x axis.
    pub omega: f64,
    pub dt: f64,
    pub t_i: f64,
    pub t_f: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            omega: 5.0,
            dt: 1e-3,
            t_i: 0.0,
            t_f: 8.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !self.omega.is_finite() || self.omega < 0.0 {
            return bad(format!("omega must be non-negative, got {}", self.omega));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.gamma * self.dt / 2.0 > 0.01 + 1e-12 {
            return bad(format!(
                "gamma*dt/2 = {} exceeds 0.01; reduce dt",
                self.gamma * self.dt / 2.0
            ));
        }
        if !(self.t_f > self.t_i) {
            return bad(format!("t_f ({}) must exceed t_i ({})", self.t_f, self.t_i));
        }
        Ok(())
    }

    /// Number of integration steps covering `[t_i, t_f)`.
    pub fn n_steps(&self) -> usize {
        ((self.t_f - self.t_i) / self.dt).round() as usize
    }

    pub fn hamiltonian(&self) -> Mat2 {
        sigma_x().scale(0.5 * self.omega)
    }

    /// Lindblad operator shared by both output channels before any phase factor.
    pub fn channel_operator(&self) -> Mat2 {
        sigma_minus().scale((0.5 * self.gamma).sqrt())
    }
}

/// Detector on one output channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setup {
    /// Photon counting.
    N,
    /// Homodyne detection of the x quadrature.
    X,
    /// Homodyne detection of the y quadrature.
    Y,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::N, Setup::X, Setup::Y];

    pub fn symbol(self) -> char {
        match self {
            Setup::N => 'N',
            Setup::X => 'X',
            Setup::Y => 'Y',
        }
    }

    pub fn is_diffusive(self) -> bool {
        !matches!(self, Setup::N)
    }

    /// Local-oscillator phase for the homodyne setups.
    pub fn phase(self) -> f64 {
        match self {
            Setup::Y => FRAC_PI_2,
            _ => 0.0,
        }
    }

    /// Lindblad operator this setup unravels, including the homodyne phase.
    pub fn lindblad_operator(self, p: &ModelParams) -> Mat2 {
        let phase = Complex64::from_polar(1.0, -self.phase());
        p.channel_operator() * phase
    }

    /// Whether records of this setup are unchanged by the reflection `x -> -x`.
    pub fn is_mirror_invariant(self) -> bool {
        !matches!(self, Setup::X)
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.symbol())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix('d').unwrap_or(t);
        match t {
            "N" | "n" => Ok(Setup::N),
            "X" | "x" => Ok(Setup::X),
            "Y" | "y" => Ok(Setup::Y),
            _ => Err(Error::config("setup", format!("unknown setup `{s}`"))),
        }
    }
}

/// `D[c] rho = c rho c^dag - {c^dag c, rho} / 2`.
pub fn dissipator(op: &Mat2, rho: &Mat2) -> Mat2 {
    let cdc = op.adjoint() * op;
    op * rho * op.adjoint() - (cdc * rho + rho * cdc).scale(0.5)
}

/// Adjoint of the dissipator acting on an effect: `c^dag E c - {c^dag c, E} / 2`.
pub fn dissipator_adjoint(op: &Mat2, effect: &Mat2) -> Mat2 {
    let cdc = op.adjoint() * op;
    op.adjoint() * effect * op - (cdc * effect + effect * cdc).scale(0.5)
}

/// Right-hand side of the two-channel master equation.
pub fn lindblad_rhs(rho: &Mat2, p: &ModelParams) -> Mat2 {
    let h = p.hamiltonian();
    let i = c(0.0, 1.0);
    let cop = p.channel_operator();
    (h * rho - rho * h) * (-i) + dissipator(&cop, rho).scale(2.0)
}

/// Clips small negative eigenvalues and renormalises the trace.
///
/// Violations below `-PSD_REPAIR_TOL` are reported as errors instead of repaired.
pub fn psd_repair(m: &Mat2) -> Result<Mat2> {
    let herm = (m + m.adjoint()).scale(0.5);
    let tr = trace(&herm).re;
    let herm = herm.unscale(tr);
    let (lo, _) = hermitian_eigenvalues(&herm);
    if lo >= 0.0 {
        return Ok(herm);
    }
    if lo < -PSD_REPAIR_TOL {
        return Err(Error::NotPositive(lo));
    }
    log::debug!("clipping eigenvalue {lo:e}");
    // Project onto the eigenvector of the largest eigenvalue: for a qubit with
    // one negative eigenvalue that is the clipped, renormalised matrix.
    let shifted = herm - Mat2::identity().scale(lo);
    let mut v = shifted.column(0).into_owned();
    if v.norm_squared() < shifted.column(1).norm_squared() {
        v = shifted.column(1).into_owned();
    }
    Ok(QubitState::from_ket(&v).matrix().to_owned())
}

/// One first-order step of the master equation in Kraus form,
/// `K_0 rho K_0^dag + dt (c rho c^dag + c rho c^dag)` with
/// `K_0 = 1 - i H dt - c^dag c dt`. It agrees with the Euler step to O(dt^2) and
/// stays positive; the trace is renormalised afterwards.
pub fn lindblad_step(rho: &QubitState, p: &ModelParams) -> Result<QubitState> {
    let op = p.channel_operator();
    let k0 = Mat2::identity() - p.hamiltonian() * c(0.0, p.dt) - (op.adjoint() * op).scale(p.dt);
    let m = rho.matrix();
    let next = k0 * m * k0.adjoint() + (op * m * op.adjoint()).scale(2.0 * p.dt);
    Ok(QubitState::from_matrix_unchecked(psd_repair(&next)?))
}

/// Kronecker product of two 2x2 matrices.
fn kron(a: &Mat2, b: &Mat2) -> Matrix4<Complex64> {
    Matrix4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// Superoperator matrix of the master equation acting on column-stacked density
/// matrices.
pub fn liouvillian(p: &ModelParams) -> Matrix4<Complex64> {
    let id = Mat2::identity();
    let h = p.hamiltonian();
    let i = c(0.0, 1.0);
    let mut l = (kron(&id, &h) - kron(&h.transpose(), &id)) * (-i);
    let op = p.channel_operator();
    let cdc = op.adjoint() * op;
    let single =
        kron(&op.conjugate(), &op) - (kron(&id, &cdc) + kron(&cdc.transpose(), &id)).scale(0.5);
    l += single.scale(2.0);
    l
}

/// Fixed point of the master equation, from the null space of the Liouvillian.
pub fn steady_state(p: &ModelParams) -> Result<QubitState> {
    if !(p.gamma > 0.0) {
        return Err(Error::InvalidParams(
            "steady state requires gamma > 0".into(),
        ));
    }
    let l = liouvillian(p);
    let mut sv: Vec<f64> = l.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = sv[3].max(1.0);
    if sv[1] < 1e-10 * scale {
        return Err(Error::NonUniqueSteadyState(sv[1]));
    }
    // Replace one equation with the trace condition rho_00 + rho_11 = 1.
    let mut a = l;
    let one = c(1.0, 0.0);
    let zero = c(0.0, 0.0);
    for col in 0..4 {
        a[(0, col)] = zero;
    }
    a[(0, 0)] = one;
    a[(0, 3)] = one;
    let mut rhs = Vector4::from_element(zero);
    rhs[0] = one;
    let x = a.lu().solve(&rhs).ok_or(Error::NonUniqueSteadyState(0.0))?;
    let m = Mat2::new(x[0], x[2], x[1], x[3]);
    let m = (m + m.adjoint()).scale(0.5);
    Ok(QubitState::from_matrix_unchecked(psd_repair(&m)?))
}

/// Jump superoperator `c rho c^dag / Tr[c rho c^dag] - rho`.
pub fn superop_g(op: &Mat2, rho: &QubitState) -> Result<Mat2> {
    let m = rho.matrix();
    let jumped = op * m * op.adjoint();
    let norm = trace(&jumped).re;
    if norm <= 1e-14 {
        return Err(Error::DarkStateJump(norm));
    }
    Ok(jumped.unscale(norm) - m)
}

/// Diffusive backaction superoperator `c rho + rho c^dag - Tr[c rho + rho c^dag] rho`.
pub fn superop_h(op: &Mat2, rho: &QubitState) -> Mat2 {
    let m = rho.matrix();
    let a = op * m + m * op.adjoint();
    let t = trace(&a);
    a - m * t
}

/// Kraus operators of one channel for a single time step.
#[derive(Debug, Clone, Copy)]
pub struct ChannelKraus {
    pub setup: Setup,
    /// Lindblad operator including the homodyne phase.
    pub op: Mat2,
    /// No-click operator, or the outcome-independent part of the homodyne operator.
    pub base: Mat2,
    /// Click operator `sqrt(dt) c`.
    pub jump: Mat2,
}

impl ChannelKraus {
    pub fn new(setup: Setup, p: &ModelParams, include_hamiltonian: bool) -> Self {
        let op = setup.lindblad_operator(p);
        let cdc = op.adjoint() * op;
        let mut base = Mat2::identity() - cdc.scale(0.5 * p.dt);
        if include_hamiltonian {
            base -= p.hamiltonian() * c(0.0, p.dt);
        }
        Self {
            setup,
            op,
            base,
            jump: op.scale(p.dt.sqrt()),
        }
    }

    /// Measurement operator for an outcome (`0`/`1` for counting, the current
    /// increment `dJ` for homodyne).
    pub fn operator(&self, outcome: f64) -> Result<Mat2> {
        match self.setup {
            Setup::N if outcome == 0.0 => Ok(self.base),
            Setup::N if outcome == 1.0 => Ok(self.jump),
            Setup::N => Err(Error::InvalidOutcome {
                setup: 'N',
                outcome,
            }),
            _ if outcome.is_finite() => Ok(self.base + self.op * c(outcome, 0.0)),
            s => Err(Error::InvalidOutcome {
                setup: s.symbol(),
                outcome,
            }),
        }
    }
}

/// The outcome-averaged operation of an unrecorded channel,
/// `A(rho) = K_0 rho K_0^dag + dt c rho c^dag`.
#[derive(Debug, Clone, Copy)]
pub struct AveragedChannel {
    k0: Mat2,
    jump: Mat2,
}

impl AveragedChannel {
    pub fn new(p: &ModelParams) -> Self {
        let op = p.channel_operator();
        Self {
            k0: Mat2::identity() - (op.adjoint() * op).scale(0.5 * p.dt),
            jump: op.scale(p.dt.sqrt()),
        }
    }

    pub fn apply(&self, rho: &Mat2) -> Mat2 {
        self.k0 * rho * self.k0.adjoint() + self.jump * rho * self.jump.adjoint()
    }

    pub fn apply_adjoint(&self, effect: &Mat2) -> Mat2 {
        self.k0.adjoint() * effect * self.k0 + self.jump.adjoint() * effect * self.jump
    }
}

/// Applies one step of a monitored channel to `rho`, returning the unnormalised
/// result whose trace is the outcome likelihood (relative to the ostensible
/// distribution for homodyne outcomes).
///
/// With `include_other_channel` the outcome-averaged operation of the second
/// channel follows the measurement.
pub fn kraus_step(
    rho: &QubitState,
    setup: Setup,
    outcome: f64,
    p: &ModelParams,
    include_hamiltonian: bool,
    include_other_channel: bool,
) -> Result<Mat2> {
    let k = ChannelKraus::new(setup, p, include_hamiltonian).operator(outcome)?;
    let mut out = k * rho.matrix() * k.adjoint();
    if include_other_channel {
        out = AveragedChannel::new(p).apply(&out);
    }
    Ok(out)
}
