//! Smoothed states for an assumed unraveling of the unobserved channel.
//!
//! Hypothetical unobserved records are drawn sequentially: at each step the
//! observed outcome's likelihood multiplies the particle's weight, then the
//! unobserved outcome is drawn from its conditional distribution. Weighted
//! particles therefore target the posterior over past unobserved records given
//! the past observed record. Multiplying by `Tr[E rho]` with the backward effect
//! `E` of the future observed record turns them into the smoothing posterior.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{AveragedChannel, ChannelKraus, ModelParams, Setup};
use crate::error::{Error, Result};
use crate::states::{c, trace, Ket, Mat2, QubitState};
use crate::unraveling::{ket_from_pure, KetChannel, MeasurementRecord, TimeGrid};

/// Largest number of steps accepted by [`brute_force_smooth`].
pub const MAX_ENUMERATION_STEPS: usize = 16;

/// Backward effect operators on the output grid, stored with unit trace. The
/// actual operator at grid index `k` is `exp(log_scale[k]) * effects[k]`.
#[derive(Debug, Clone)]
pub struct BackwardEffect {
    pub grid: TimeGrid,
    pub effects: Vec<Mat2>,
    pub log_scale: Vec<f64>,
}

impl BackwardEffect {
    /// The un-rescaled operator at grid index `k`.
    pub fn effect(&self, k: usize) -> Mat2 {
        self.effects[k].scale(self.log_scale[k].exp())
    }
}

/// Propagates the identity backwards through the observed record, averaging over
/// the unobserved channel.
pub fn backward_effect(
    record_o: &MeasurementRecord,
    p: &ModelParams,
    stride: usize,
) -> Result<BackwardEffect> {
    p.validate()?;
    record_o.check_compatible(p)?;
    let grid = TimeGrid::new(p, stride)?;
    let kraus = ChannelKraus::new(record_o.setup, p, true);
    let hidden = AveragedChannel::new(p);
    let n = record_o.len();
    let mut effects = vec![Mat2::zeros(); grid.n_points];
    let mut log_scale = vec![0.0; grid.n_points];
    let mut e = Mat2::identity().scale(0.5);
    let mut log = 2f64.ln();
    effects[grid.n_points - 1] = e;
    log_scale[grid.n_points - 1] = log;
    for step in (0..n).rev() {
        let k = kraus.operator(record_o.outcomes[step])?;
        let next = k.adjoint() * hidden.apply_adjoint(&e) * k;
        let tr = trace(&next).re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InconsistentRecord {
                step,
                likelihood: tr,
            });
        }
        e = (next + next.adjoint()).scale(0.5 / tr);
        log += tr.ln();
        if step % stride == 0 {
            let g = step / stride;
            effects[g] = e;
            log_scale[g] = log;
        }
    }
    Ok(BackwardEffect {
        grid,
        effects,
        log_scale,
    })
}

/// Tuning of the hypothetical-record sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    pub n_samples: usize,
    pub stride: usize,
    /// Resample when the forward effective sample size drops below this fraction
    /// of `n_samples`. Zero disables resampling.
    pub resample_threshold: f64,
    /// Keep each particle's full hypothetical record.
    pub keep_records: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            stride: 1,
            resample_threshold: 0.5,
            keep_records: false,
        }
    }
}

/// Weighted hypothetical records, stored as the pure states they induce on the
/// output grid.
#[derive(Debug, Clone)]
pub struct SmoothingEnsemble {
    pub assumed_setup: Setup,
    pub grid: TimeGrid,
    /// `kets[k][i]`: normalised state of particle `i` at grid index `k`.
    pub kets: Vec<Vec<Ket>>,
    /// Forward (past-likelihood) log-weights, same layout as `kets`.
    pub log_weights: Vec<Vec<f64>>,
    pub forward_ess: Vec<f64>,
    /// Full hypothetical records of the final particles, if requested.
    pub records: Option<Vec<Vec<f64>>>,
    symmetric: bool,
}

impl SmoothingEnsemble {
    pub fn n_samples(&self) -> usize {
        self.kets.first().map_or(0, Vec::len)
    }

    /// Smoothed states obtained by reweighting with the backward effect.
    pub fn smoothed(&self, effect: &BackwardEffect) -> Result<SmoothedSeries> {
        if effect.grid != self.grid {
            return Err(Error::GridMismatch(
                "backward effect and ensemble use different grids".into(),
            ));
        }
        let mut states = Vec::with_capacity(self.grid.n_points);
        let mut ess = Vec::with_capacity(self.grid.n_points);
        for k in 0..self.grid.n_points {
            let max = self.log_weights[k]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = self.log_weights[k]
                .iter()
                .map(|l| (l - max).exp())
                .collect();
            let (s, e) =
                weighted_estimate(&self.kets[k], &w, &effect.effects[k], self.symmetric, k)?;
            states.push(s);
            ess.push(e);
        }
        Ok(SmoothedSeries {
            grid: self.grid,
            states,
            ess,
        })
    }
}

/// Smoothed states on the output grid with the effective sample size of the
/// smoothing weights at each point.
#[derive(Debug, Clone)]
pub struct SmoothedSeries {
    pub grid: TimeGrid,
    pub states: Vec<QubitState>,
    pub ess: Vec<f64>,
}

/// Whether the smoothed state is invariant under the `x -> -x` reflection, in
/// which case the estimate is symmetrised.
fn mirror_symmetric(d_o: Setup, rho0: &QubitState) -> bool {
    d_o.is_mirror_invariant() && rho0.bloch().x.abs() < 1e-12
}

#[inline]
fn expectation(e: &Mat2, a: Complex64, b: Complex64) -> f64 {
    e[(0, 0)].re * a.norm_sqr() + e[(1, 1)].re * b.norm_sqr() + 2.0 * (a.conj() * e[(0, 1)] * b).re
}

fn weighted_estimate(
    kets: &[Ket],
    w: &[f64],
    e: &Mat2,
    symmetric: bool,
    k: usize,
) -> Result<(QubitState, f64)> {
    let (mut s, mut s2, mut p00, mut p11) = (0.0, 0.0, 0.0, 0.0);
    let mut p01 = Complex64::new(0.0, 0.0);
    for (psi, &wi) in kets.iter().zip(w) {
        let (a, b) = (psi[0], psi[1]);
        let v = wi * expectation(e, a, b).max(0.0);
        s += v;
        s2 += v * v;
        p00 += v * a.norm_sqr();
        p11 += v * b.norm_sqr();
        p01 += a * b.conj() * v;
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateEnsemble(k));
    }
    let tr = p00 + p11;
    let mut off = p01 / tr;
    if symmetric {
        off = c(0.0, off.im);
    }
    let m = Mat2::new(c(p00 / tr, 0.0), off, off.conj(), c(p11 / tr, 0.0));
    Ok((QubitState::from_matrix_unchecked(m), s * s / s2))
}

/// Scratch state of the sequential sampler, stored as separate real arrays so
/// the per-step update vectorises.
struct Particles {
    ar: Vec<f64>,
    ai: Vec<f64>,
    br: Vec<f64>,
    bi: Vec<f64>,
    w: Vec<f64>,
    log_offset: f64,
    records: Option<Vec<Vec<f64>>>,
}

impl Particles {
    fn new(psi: &Ket, n: usize, keep: Option<usize>) -> Self {
        Self {
            ar: vec![psi[0].re; n],
            ai: vec![psi[0].im; n],
            br: vec![psi[1].re; n],
            bi: vec![psi[1].im; n],
            w: vec![1.0; n],
            log_offset: 0.0,
            records: keep.map(|len| vec![Vec::with_capacity(len); n]),
        }
    }

    fn ket(&self, i: usize) -> Ket {
        Ket::new(c(self.ar[i], self.ai[i]), c(self.br[i], self.bi[i]))
    }

    /// Systematic resampling; afterwards all weights are equal.
    fn resample<R: Rng + ?Sized>(&mut self, total: f64, rng: &mut R) {
        let n = self.w.len();
        let step = total / n as f64;
        let mut u = rng.random::<f64>() * step;
        let mut acc = 0.0;
        let mut ancestors = Vec::with_capacity(n);
        for i in 0..n {
            acc += self.w[i];
            while u < acc && ancestors.len() < n {
                ancestors.push(i);
                u += step;
            }
        }
        // Rounding can leave the last slots unfilled.
        let last = self.w.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1);
        ancestors.resize(n, last);
        for v in [&mut self.ar, &mut self.ai, &mut self.br, &mut self.bi] {
            *v = ancestors.iter().map(|&i| v[i]).collect();
        }
        if let Some(rec) = &self.records {
            self.records = Some(ancestors.iter().map(|&i| rec[i].clone()).collect());
        }
        self.log_offset += step.ln();
        self.w.iter_mut().for_each(|w| *w = 1.0);
    }
}

/// Per-step constants of the joint update. The unobserved operators are
/// `diag(beta, 1)` and `kappa |g><e|` for every setup.
struct StepConsts {
    k: [f64; 8],
    beta: f64,
    beta2: f64,
    kr: f64,
    ki: f64,
    click_prob: f64,
    dt: f64,
    sqrt_dt: f64,
}

/// Photon-counting unobserved channel; `draws` holds one uniform per particle
/// and receives the outcomes. Returns the sum and sum of squares of the weights.
fn step_counting(parts: &mut Particles, draws: &mut [f64], s: &StepConsts) -> (f64, f64) {
    let [k00r, k00i, k01r, k01i, k10r, k10i, k11r, k11i] = s.k;
    let (mut sum, mut sum2) = (0.0, 0.0);
    let it = parts
        .ar
        .iter_mut()
        .zip(parts.ai.iter_mut())
        .zip(parts.br.iter_mut())
        .zip(parts.bi.iter_mut())
        .zip(parts.w.iter_mut())
        .zip(draws.iter_mut());
    for (((((ar, ai), br), bi), w), u) in it {
        let (a0r, a0i, b0r, b0i) = (*ar, *ai, *br, *bi);
        let xr = k00r * a0r - k00i * a0i + k01r * b0r - k01i * b0i;
        let xi = k00r * a0i + k00i * a0r + k01r * b0i + k01i * b0r;
        let yr = k10r * a0r - k10i * a0i + k11r * b0r - k11i * b0i;
        let yi = k10r * a0i + k10i * a0r + k11r * b0i + k11i * b0r;
        let na = xr * xr + xi * xi;
        let nb = yr * yr + yi * yi;
        let p1 = s.click_prob * na;
        let mass = s.beta2 * na + nb + p1;
        let click = *u * mass < p1;
        let (nar, nai, nbr, nbi, norm2) = if click {
            (
                0.0,
                0.0,
                s.kr * xr - s.ki * xi,
                s.kr * xi + s.ki * xr,
                p1 / s.dt,
            )
        } else {
            (s.beta * xr, s.beta * xi, yr, yi, mass - p1)
        };
        // A particle that cannot produce the observed outcome collapses to zero.
        let inv = norm2.max(f64::MIN_POSITIVE).sqrt().recip();
        *ar = nar * inv;
        *ai = nai * inv;
        *br = nbr * inv;
        *bi = nbi * inv;
        *u = if click { 1.0 } else { 0.0 };
        let wn = *w * mass;
        *w = wn;
        sum += wn;
        sum2 += wn * wn;
    }
    (sum, sum2)
}

/// Homodyne unobserved channel with local-oscillator phase folded into `kappa`;
/// `draws` holds one standard normal per particle and receives the increments.
fn step_homodyne(parts: &mut Particles, draws: &mut [f64], s: &StepConsts) -> (f64, f64) {
    let [k00r, k00i, k01r, k01i, k10r, k10i, k11r, k11i] = s.k;
    let (mut sum, mut sum2) = (0.0, 0.0);
    let it = parts
        .ar
        .iter_mut()
        .zip(parts.ai.iter_mut())
        .zip(parts.br.iter_mut())
        .zip(parts.bi.iter_mut())
        .zip(parts.w.iter_mut())
        .zip(draws.iter_mut());
    for (((((ar, ai), br), bi), w), xi_draw) in it {
        let (a0r, a0i, b0r, b0i) = (*ar, *ai, *br, *bi);
        let xr = k00r * a0r - k00i * a0i + k01r * b0r - k01i * b0i;
        let xi = k00r * a0i + k00i * a0r + k01r * b0i + k01i * b0r;
        let yr = k10r * a0r - k10i * a0i + k11r * b0r - k11i * b0i;
        let yi = k10r * a0i + k10i * a0r + k11r * b0i + k11i * b0r;
        let na = xr * xr + xi * xi;
        let nb = yr * yr + yi * yi;
        let l = na + nb;
        let mass = s.beta2 * na + nb + s.click_prob * na;
        let kar = s.kr * xr - s.ki * xi;
        let kai = s.kr * xi + s.ki * xr;
        let mean = 2.0 * (yr * kar + yi * kai) / l.max(f64::MIN_POSITIVE);
        let dj = mean * s.dt + s.sqrt_dt * *xi_draw;
        let (nar, nai) = (s.beta * xr, s.beta * xi);
        let (nbr, nbi) = (yr + kar * dj, yi + kai * dj);
        let norm2 = nar * nar + nai * nai + nbr * nbr + nbi * nbi;
        // A particle that cannot produce the observed outcome collapses to zero.
        let inv = norm2.max(f64::MIN_POSITIVE).sqrt().recip();
        *ar = nar * inv;
        *ai = nai * inv;
        *br = nbr * inv;
        *bi = nbi * inv;
        *xi_draw = dj;
        let wn = *w * mass;
        *w = wn;
        sum += wn;
        sum2 += wn * wn;
    }
    (sum, sum2)
}

/// Runs the sequential sampler, calling `visit(k, particles)` at every grid point.
fn run_sampler<R, F>(
    record_o: &MeasurementRecord,
    d_u: Setup,
    rho0: &QubitState,
    p: &ModelParams,
    opts: &SamplerOptions,
    rng: &mut R,
    mut visit: F,
) -> Result<Option<Vec<Vec<f64>>>>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &Particles) -> Result<()>,
{
    p.validate()?;
    record_o.check_compatible(p)?;
    if opts.n_samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if !rho0.is_pure() {
        return Err(Error::InvalidParams(
            "hypothetical records require a pure initial state".into(),
        ));
    }
    TimeGrid::new(p, opts.stride)?;
    let n = opts.n_samples;
    let mut parts = Particles::new(
        &ket_from_pure(rho0),
        n,
        opts.keep_records.then_some(record_o.len()),
    );
    visit(0, &parts)?;

    let obs = KetChannel::new(record_o.setup, p, true);
    let hid = ChannelKraus::new(d_u, p, false);
    debug_assert!(hid.base[(0, 1)].norm() == 0.0 && hid.base[(1, 0)].norm() == 0.0);
    debug_assert!((hid.base[(1, 1)] - c(1.0, 0.0)).norm() == 0.0);
    debug_assert!(hid.op[(0, 0)].norm() + hid.op[(0, 1)].norm() + hid.op[(1, 1)].norm() == 0.0);
    let kappa = hid.op[(1, 0)];
    let beta = hid.base[(0, 0)].re;
    let mut consts = StepConsts {
        k: [0.0; 8],
        beta,
        beta2: beta * beta,
        kr: kappa.re,
        ki: kappa.im,
        click_prob: p.dt * kappa.norm_sqr(),
        dt: p.dt,
        sqrt_dt: p.dt.sqrt(),
    };
    let threshold = opts.resample_threshold * n as f64;
    let mut draws = vec![0.0; n];

    for (step, &o) in record_o.outcomes.iter().enumerate() {
        let ko = obs.operator(o);
        consts.k = [
            ko[(0, 0)].re,
            ko[(0, 0)].im,
            ko[(0, 1)].re,
            ko[(0, 1)].im,
            ko[(1, 0)].re,
            ko[(1, 0)].im,
            ko[(1, 1)].re,
            ko[(1, 1)].im,
        ];
        let (sum, sum2) = if d_u == Setup::N {
            draws.iter_mut().for_each(|d| *d = rng.random());
            step_counting(&mut parts, &mut draws, &consts)
        } else {
            draws
                .iter_mut()
                .for_each(|d| *d = rng.sample(StandardNormal));
            step_homodyne(&mut parts, &mut draws, &consts)
        };
        if let Some(rec) = parts.records.as_mut() {
            rec.iter_mut().zip(&draws).for_each(|(r, &u)| r.push(u));
        }
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InconsistentRecord {
                step,
                likelihood: sum,
            });
        }
        if sum * sum < threshold * sum2 {
            parts.resample(sum, rng);
        } else {
            let mean = sum / n as f64;
            if !(1e-100..=1e100).contains(&mean) {
                parts.w.iter_mut().for_each(|w| *w /= mean);
                parts.log_offset += mean.ln();
            }
        }
        if (step + 1) % opts.stride == 0 {
            visit((step + 1) / opts.stride, &parts)?;
        }
    }
    Ok(parts.records.take())
}

/// Draws `n_samples` hypothetical unobserved records under the assumed setup
/// `d_u` and stores the ensemble on the output grid.
pub fn sample_hypothetical_records<R: Rng + ?Sized>(
    record_o: &MeasurementRecord,
    d_u: Setup,
    rho0: &QubitState,
    p: &ModelParams,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<SmoothingEnsemble> {
    let grid = TimeGrid::new(p, opts.stride)?;
    let mut kets = Vec::with_capacity(grid.n_points);
    let mut log_weights = Vec::with_capacity(grid.n_points);
    let mut forward_ess = Vec::with_capacity(grid.n_points);
    let records = run_sampler(record_o, d_u, rho0, p, opts, rng, |_, parts| {
        kets.push((0..parts.w.len()).map(|i| parts.ket(i)).collect());
        log_weights.push(parts.w.iter().map(|w| w.ln() + parts.log_offset).collect());
        let s: f64 = parts.w.iter().sum();
        let s2: f64 = parts.w.iter().map(|w| w * w).sum();
        forward_ess.push(s * s / s2);
        Ok(())
    })?;
    Ok(SmoothingEnsemble {
        assumed_setup: d_u,
        grid,
        kets,
        log_weights,
        forward_ess,
        records,
        symmetric: mirror_symmetric(record_o.setup, rho0),
    })
}

/// Smoothed states for the observed record under the assumed unobserved setup
/// `d_u`, without storing the ensemble.
pub fn smooth<R: Rng + ?Sized>(
    record_o: &MeasurementRecord,
    d_u: Setup,
    rho0: &QubitState,
    p: &ModelParams,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<SmoothedSeries> {
    let effect = backward_effect(record_o, p, opts.stride)?;
    smooth_with_effect(record_o, d_u, rho0, p, opts, &effect, rng)
}

/// As [`smooth`], reusing a precomputed backward effect.
pub fn smooth_with_effect<R: Rng + ?Sized>(
    record_o: &MeasurementRecord,
    d_u: Setup,
    rho0: &QubitState,
    p: &ModelParams,
    opts: &SamplerOptions,
    effect: &BackwardEffect,
    rng: &mut R,
) -> Result<SmoothedSeries> {
    let grid = TimeGrid::new(p, opts.stride)?;
    if effect.grid != grid {
        return Err(Error::GridMismatch(
            "backward effect and sampler use different grids".into(),
        ));
    }
    let symmetric = mirror_symmetric(record_o.setup, rho0);
    let mut states = Vec::with_capacity(grid.n_points);
    let mut ess = Vec::with_capacity(grid.n_points);
    let mut kets = Vec::new();
    let opts = SamplerOptions {
        keep_records: false,
        ..*opts
    };
    run_sampler(record_o, d_u, rho0, p, &opts, rng, |k, parts| {
        kets.clear();
        kets.extend((0..parts.w.len()).map(|i| parts.ket(i)));
        let (s, e) = weighted_estimate(&kets, &parts.w, &effect.effects[k], symmetric, k)?;
        states.push(s);
        ess.push(e);
        Ok(())
    })?;
    Ok(SmoothedSeries { grid, states, ess })
}

/// Exact smoothed states for a short record with photon-counting unobserved
/// channel, by summing over every possible unobserved record. Returns one state
/// per integration step, including the initial one.
pub fn brute_force_smooth(
    record_o: &MeasurementRecord,
    d_u: Setup,
    rho0: &QubitState,
    p: &ModelParams,
) -> Result<Vec<QubitState>> {
    if d_u != Setup::N {
        return Err(Error::EnumerationSetup);
    }
    let n = record_o.len();
    if n > MAX_ENUMERATION_STEPS {
        return Err(Error::TooManySteps(n));
    }
    p.validate()?;
    record_o.check_compatible(p)?;
    let obs = ChannelKraus::new(record_o.setup, p, true);
    let hid = ChannelKraus::new(Setup::N, p, false);
    let ops: Vec<[Mat2; 2]> = record_o
        .outcomes
        .iter()
        .map(|&o| {
            let k = obs.operator(o)?;
            Ok([hid.base * k, hid.jump * k])
        })
        .collect::<Result<_>>()?;
    let psi0 = ket_from_pure(rho0);
    let mut acc = vec![Mat2::zeros(); n + 1];
    let mut total = 0.0;
    let mut path = vec![psi0; n + 1];
    for mask in 0u32..(1u32 << n) {
        for s in 0..n {
            let u = ((mask >> s) & 1) as usize;
            path[s + 1] = ops[s][u] * path[s];
        }
        let prob = path[n].norm_squared();
        if prob == 0.0 {
            continue;
        }
        total += prob;
        for (k, psi) in path.iter().enumerate() {
            let nk = psi.norm_squared();
            if nk > 0.0 {
                acc[k] += (psi * psi.adjoint()).scale(prob / nk);
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::InconsistentRecord {
            step: n,
            likelihood: total,
        });
    }
    Ok(acc
        .into_iter()
        .map(|m| QubitState::from_matrix_unchecked(m.unscale(total)))
        .collect())
}
