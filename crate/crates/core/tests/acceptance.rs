//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Runs the desk-scale sweep (300 true records, 1000 hypothetical records,
//! dt = 1e-3, 8 decay times) once and evaluates every criterion on it, plus the
//! small dedicated checks for the enumeration oracle, consistency and
//! determinism. Takes roughly half an hour on one core.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use qsmooth::analysis::{paired_difference, Combo};
use qsmooth::dynamics::{psd_repair, AveragedChannel, ChannelKraus};
use qsmooth::experiment::{run, ComboSelection, CorrelatorSettings, ExperimentConfig, RunOutput};
use qsmooth::rng::{stream, Domain};
use qsmooth::states::{Ket, Mat2};
use qsmooth::unraveling::ket_from_pure;
use qsmooth::{
    backward_effect, brute_force_smooth, filter, generate_true_trajectory, smooth,
    MeasurementRecord, ModelParams, QubitState, SamplerOptions, Setup,
};

struct Outcome {
    name: &'static str,
    pass: bool,
    details: Vec<String>,
}

fn outcome(name: &'static str, details: Vec<(bool, String)>) -> Outcome {
    Outcome {
        name,
        pass: details.iter().all(|(ok, _)| *ok),
        details: details
            .into_iter()
            .map(|(ok, d)| format!("{} {d}", if ok { "ok  " } else { "FAIL" }))
            .collect(),
    }
}

fn out_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn desk_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        master_seed: 20_240_601,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::desk()
    }
}

fn combo(s: &str) -> Combo {
    s.parse().unwrap()
}

fn find(
    out: &RunOutput,
    c: Combo,
) -> (
    &qsmooth::analysis::PowerSeries,
    &qsmooth::experiment::GroupResult,
) {
    let g = out
        .groups
        .iter()
        .find(|g| g.plan.d_o == c.d_o && g.plan.d_v == c.d_v)
        .expect("group computed");
    (
        g.powers
            .iter()
            .find(|p| p.combo == c)
            .expect("combo computed"),
        g,
    )
}

fn wrong_combos() -> Vec<Combo> {
    Combo::all27()
        .into_iter()
        .filter(|c| !c.is_valid())
        .collect()
}

fn identities(out: &RunOutput) -> Outcome {
    let mut d = Vec::new();
    let worst_sample = out
        .report
        .groups
        .values()
        .map(|g| g.identity_residual)
        .fold(0.0, f64::max);
    d.push((
        worst_sample <= 1e-12,
        format!("max |S - (P - 2F + 1)| over all samples and times = {worst_sample:.2e}"),
    ));
    let worst_power = out
        .report
        .combos
        .iter()
        .map(|c| c.power_identity_residual)
        .fold(0.0, f64::max);
    d.push((
        worst_power <= 1e-12,
        format!("max |R_S - (2 R_F - R_P)| over 27 combos and all times = {worst_power:.2e}"),
    ));
    outcome("exact identity suite", d)
}

fn joint_ops(rec: &MeasurementRecord, p: &ModelParams) -> Vec<[Mat2; 2]> {
    let obs = ChannelKraus::new(rec.setup, p, true);
    let hid = ChannelKraus::new(Setup::N, p, false);
    rec.outcomes
        .iter()
        .map(|&o| {
            let k = obs.operator(o).unwrap();
            [hid.base * k, hid.jump * k]
        })
        .collect()
}

fn path_ket(ops: &[[Mat2; 2]], psi: Ket, from: usize, mask: u32, len: usize) -> Ket {
    let mut v = psi;
    for s in 0..len {
        v = ops[from + s][((mask >> s) & 1) as usize] * v;
    }
    v
}

fn oracle() -> Outcome {
    let p = ModelParams {
        dt: 0.02,
        t_f: 0.1,
        ..ModelParams::default()
    };
    let rec = MeasurementRecord::new(Setup::N, p.dt, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let rho0 = QubitState::excited();
    let exact = brute_force_smooth(&rec, Setup::N, &rho0, &p).unwrap();
    let mut d = Vec::new();

    let ops = joint_ops(&rec, &p);
    let effect = backward_effect(&rec, &p, 1).unwrap();
    let psi0 = ket_from_pure(&rho0);
    let mut worst = 0.0f64;
    for k in 0..=rec.len() {
        for mask in 0u32..(1 << k) {
            let v = path_ket(&ops, psi0, 0, mask, k);
            if v.norm_squared() == 0.0 {
                continue;
            }
            let v = v.unscale(v.norm());
            let m = rec.len() - k;
            let future: f64 = (0u32..(1 << m))
                .map(|f| path_ket(&ops, v, k, f, m).norm_squared())
                .sum();
            let from_effect = (v.adjoint() * effect.effect(k) * v)[(0, 0)].re;
            worst = worst.max((from_effect - future).abs() / future.max(1e-300));
        }
    }
    d.push((
        worst <= 1e-10,
        format!("backward-effect weights vs enumeration: max relative error {worst:.2e}"),
    ));

    let reps = 40;
    let opts = SamplerOptions {
        n_samples: 1000,
        ..SamplerOptions::default()
    };
    let runs: Vec<Vec<QubitState>> = (0..reps)
        .map(|r| {
            let mut rng = stream(7, Domain::Hypothetical, r, 0);
            smooth(&rec, Setup::N, &rho0, &p, &opts, &mut rng)
                .unwrap()
                .states
        })
        .collect();
    let mut ratio = 0.0f64;
    for k in 0..=rec.len() {
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            for part in [|z: Complex64| z.re, |z: Complex64| z.im] {
                let xs: Vec<f64> = runs.iter().map(|r| part(r[k].matrix()[(i, j)])).collect();
                let m = xs.iter().sum::<f64>() / reps as f64;
                let sd =
                    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
                let dev = (xs[0] - part(exact[k].matrix()[(i, j)])).abs();
                ratio = ratio.max(dev / sd.max(1e-6));
            }
        }
    }
    d.push((
        ratio < 3.0,
        format!("n = 1e3: max deviation / s.e. = {ratio:.2}"),
    ));

    let big = SamplerOptions {
        n_samples: 200_000,
        ..SamplerOptions::default()
    };
    let mut rng = stream(8, Domain::Hypothetical, 0, 0);
    let mc = smooth(&rec, Setup::N, &rho0, &p, &big, &mut rng).unwrap();
    let dev = (0..=rec.len())
        .map(|k| {
            (mc.states[k].matrix() - exact[k].matrix())
                .iter()
                .fold(0.0f64, |a, z| a.max(z.norm()))
        })
        .fold(0.0, f64::max);
    d.push((
        dev < 1e-3,
        format!("n = 2e5: max elementwise deviation = {dev:.2e}"),
    ));
    outcome("oracle equivalence", d)
}

fn valid_equality(out: &RunOutput) -> Outcome {
    let mut d = Vec::new();
    for c in Combo::all27().into_iter().filter(Combo::is_valid) {
        let (ps, _) = find(out, c);
        let mut worst = 0.0f64;
        for &k in ps.window_indices() {
            let sf = (ps.r_s[k] - ps.r_f[k]).abs() / ps.r_s_err[k].hypot(ps.r_f_err[k]);
            let fp = (ps.r_f[k] - ps.r_p[k]).abs() / ps.r_f_err[k].hypot(ps.r_p_err[k]);
            worst = worst.max(sf).max(fp);
        }
        d.push((
            worst <= 3.0,
            format!("{c}: max gap / combined s.e. over window = {worst:.2}"),
        ));
    }
    outcome("valid-smoothing equality", d)
}

fn table1(out: &RunOutput) -> Outcome {
    let d = out
        .report
        .classification
        .iter()
        .map(|c| {
            (
                c.class == c.reference,
                format!(
                    "{}: {} (expected {}, max |z| = {:.1})",
                    c.pair, c.class, c.reference, c.max_sigma
                ),
            )
        })
        .collect::<Vec<_>>();
    let mut o = outcome("Table-1 reproduction", d);
    o.pass &= out.report.classification.len() == 9;
    o
}

fn optimality(out: &RunOutput) -> Outcome {
    let d = wrong_combos()
        .into_iter()
        .map(|c| {
            let (pw, g) = find(out, c);
            let (pv, _) = find(out, c.valid());
            let diff = paired_difference(&pv.per_record.cost, &pw.per_record.cost, &g.bootstrap);
            (
                diff.mean <= 2.0 * diff.stderr,
                format!(
                    "{c}: E S(valid) - E S(wrong) = {:+.4e} ({:+.2} s.e.)",
                    diff.mean,
                    diff.z()
                ),
            )
        })
        .collect();
    outcome("optimality ordering", d)
}

fn strange(out: &RunOutput) -> Outcome {
    let mut d = Vec::new();
    for name in ["dYdXdY", "dYdXdN", "dNdXdY", "dNdXdN"] {
        let v = out
            .report
            .strange
            .iter()
            .find(|s| s.combo == combo(name))
            .unwrap();
        d.push((
            v.rs_significance >= 2.0 && v.rf_significance >= 2.0,
            format!(
                "{name}: R_S^dW < 0 at {:.2} s.e., R_F^dW > R_F^dV at {:.2} s.e.",
                v.rs_significance, v.rf_significance
            ),
        ));
    }
    for v in &out.report.strange {
        d.push((
            v.consistent,
            format!(
                "{}: ratio {:.3} ({:.3}) vs bound {:.3}, predicted {}, observed {}",
                v.combo,
                v.purity_ratio.mean,
                v.purity_ratio.stderr,
                v.bound,
                v.condition_holds,
                v.observed_strange
            ),
        ));
    }
    outcome("strange-regime reproduction", d)
}

fn conjectures(out: &RunOutput) -> Outcome {
    let entries: BTreeMap<String, _> = out
        .report
        .conjectures
        .entries
        .iter()
        .map(|e| (e.combo.to_string(), e))
        .collect();
    let max_valid = out.report.conjectures.max_valid_power;
    let small = out.report.conjectures.thresholds.small * max_valid;
    let mut d = Vec::new();
    for name in ["dXdYdN", "dXdNdY"] {
        let e = entries[name];
        let worst = [e.r_s.mean, e.r_f.mean]
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        d.push((
            e.label.as_deref() == Some("C1") && worst < small,
            format!("{name} (C1): max(|R_S|, |R_F|) = {worst:.4} vs small cut {small:.4}"),
        ));
    }
    for name in ["dYdYdN", "dNdNdY", "dYdNdY", "dNdYdN"] {
        let e = entries[name];
        let rs = (e.r_s.mean - e.valid_r_s.mean).abs() / e.valid_r_s.mean;
        let rf = (e.r_f.mean - e.valid_r_f.mean).abs() / e.valid_r_f.mean;
        d.push((
            e.label.as_deref() == Some("C4") && rs <= 0.5 && rf <= 0.5,
            format!("{name} (C4): relative gap R_S {rs:.3}, R_F {rf:.3}"),
        ));
    }
    for (name, e) in &entries {
        if e.label.as_deref() == Some("C3") {
            d.push((
                e.diff_r_s.z() <= -2.0 && e.diff_r_f.z() <= -2.0,
                format!(
                    "{name} (C3): R^dW - R^dV = {:+.4} ({:+.2} s.e.) for S, {:+.4} ({:+.2} s.e.) for F",
                    e.diff_r_s.mean,
                    e.diff_r_s.z(),
                    e.diff_r_f.mean,
                    e.diff_r_f.z()
                ),
            ));
        }
    }
    outcome("conjecture grid", d)
}

fn alpha(out: &RunOutput) -> Outcome {
    let mut d = Vec::new();
    for c in wrong_combos() {
        let s = out.report.combos.iter().find(|s| s.combo == c).unwrap();
        let tol = 2.0 * s.alpha_sq_stderr;
        d.push((
            s.alpha_sq >= 0.5 - tol && s.alpha_sq <= 1.0 + tol,
            format!(
                "{c}: window alpha^2 = {:.3} ({:.3})",
                s.alpha_sq, s.alpha_sq_stderr
            ),
        ));
    }
    for g in &out.groups {
        let v = g.plan.d_us.iter().position(|&u| u == g.plan.d_v).unwrap();
        let worst = g.alphas[v]
            .alpha
            .iter()
            .filter(|a| a.is_finite())
            .map(|a| (a - 1.0).abs())
            .fold(0.0, f64::max);
        d.push((
            worst <= 1e-12,
            format!(
                "{}{}{} self-test: max |alpha - 1| = {worst:.1e}",
                g.plan.d_o, g.plan.d_v, g.plan.d_v
            ),
        ));
    }
    outcome("alpha statistics", d)
}

fn future_average(d_o: Setup, d_v: Setup, d_u: Setup, seed: u64) -> (bool, String) {
    let p = ModelParams {
        t_f: 2.0,
        ..ModelParams::default()
    };
    let (stride, split) = (10, 1000);
    let rho0 = QubitState::ground();
    let mut rng = stream(seed, Domain::TrueTrajectory, 0, 0);
    let traj = generate_true_trajectory(d_o, d_v, &rho0, &p, stride, 0, &mut rng).unwrap();
    let filt = filter(&traj.record_o, &rho0, &p, stride).unwrap();
    let rho_f = *filt[split / stride].matrix();
    let obs = ChannelKraus::new(d_o, &p, true);
    let avg = AveragedChannel::new(&p);
    let opts = SamplerOptions {
        n_samples: 400,
        stride,
        ..SamplerOptions::default()
    };
    let n = 400;
    let mut sums = [[0.0f64; 2]; 3];
    for j in 0..n {
        let mut rng = stream(seed, Domain::Hypothetical, j, 1);
        let mut rho = rho_f;
        let mut outcomes = traj.record_o.outcomes[..split].to_vec();
        for _ in split..p.n_steps() {
            let o = if d_o == Setup::N {
                let k1 = obs.operator(1.0).unwrap();
                f64::from(u8::from(
                    rng.random::<f64>() < (k1 * rho * k1.adjoint()).trace().re,
                ))
            } else {
                let mean = (obs.op * rho + rho * obs.op.adjoint()).trace().re;
                mean * p.dt + p.dt.sqrt() * rng.sample::<f64, _>(StandardNormal)
            };
            let k = obs.operator(o).unwrap();
            let m = k * rho * k.adjoint();
            rho = psd_repair(&avg.apply(&m.unscale(m.trace().re))).unwrap();
            outcomes.push(o);
        }
        let rec = MeasurementRecord::new(d_o, p.dt, outcomes).unwrap();
        let b = smooth(&rec, d_u, &rho0, &p, &opts, &mut rng)
            .unwrap()
            .states[split / stride]
            .bloch();
        for (s, v) in sums.iter_mut().zip([b.x, b.y, b.z]) {
            s[0] += v;
            s[1] += v * v;
        }
    }
    let fb = filt[split / stride].bloch();
    let mut worst = 0.0f64;
    for (s, target) in sums.iter().zip([fb.x, fb.y, fb.z]) {
        let m = s[0] / n as f64;
        let var = (s[1] / n as f64 - m * m) * n as f64 / (n - 1) as f64;
        let se = (var / n as f64).sqrt().max(1e-9);
        worst = worst.max((m - target).abs() / se);
    }
    (
        worst <= 3.0,
        format!("{d_o}{d_v}{d_u}: future-averaged smoothed state vs filter, max deviation {worst:.2} s.e."),
    )
}

fn consistency(out: &RunOutput) -> Outcome {
    let mut d = vec![
        future_average(Setup::Y, Setup::X, Setup::X, 31),
        future_average(Setup::Y, Setup::X, Setup::Y, 32),
        future_average(Setup::N, Setup::N, Setup::N, 33),
        future_average(Setup::N, Setup::Y, Setup::X, 34),
    ];
    let g = &out.report.groups;
    let tr = g.values().map(|c| c.delta_trace).fold(0.0, f64::max);
    d.push((tr <= 1e-12, format!("max |Tr delta rho| = {tr:.2e}")));
    let pur = g.values().map(|c| c.min_true_purity).fold(1.0, f64::min);
    d.push((
        pur >= 1.0 - 1e-6,
        format!("min true-state purity = {pur:.12}"),
    ));
    let x = g
        .iter()
        .filter(|(k, _)| !k.starts_with("dX"))
        .map(|(_, c)| c.max_abs_x)
        .fold(0.0, f64::max);
    d.push((
        x <= 1e-10,
        format!("max |x| of filtered and smoothed states for dO in {{N, Y}} = {x:.2e}"),
    ));
    outcome("consistency suite", d)
}

fn determinism() -> Outcome {
    let root = out_root().join("determinism");
    let cfg = |name: &str, threads: usize| ExperimentConfig {
        n_true_trajectories: 16,
        n_hypothetical: 100,
        master_seed: 5,
        combos: ComboSelection::Named("dYdXdY,dNdYdN,dXdXdX".into()),
        output_dir: root.join(name),
        threads: Some(threads),
        dump_trajectories: true,
        correlator: CorrelatorSettings {
            n_trajectories: 100,
            ..Default::default()
        },
        ..ExperimentConfig::desk()
    };
    let _ = fs::remove_dir_all(&root);
    let mut d = Vec::new();
    let a = run(&cfg("a", 1)).unwrap().output_dir;
    let b = run(&cfg("b", 4)).unwrap().output_dir;
    let c = run(&cfg("c", 1)).unwrap().output_dir;
    let files = |dir: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = Vec::new();
        for sub in [dir.to_path_buf(), dir.join("trajectories")] {
            for e in fs::read_dir(&sub).unwrap() {
                let path = e.unwrap().path();
                if path.extension().is_some_and(|x| x == "csv") {
                    v.push((
                        path.strip_prefix(dir).unwrap().display().to_string(),
                        fs::read(&path).unwrap(),
                    ));
                }
            }
        }
        v.sort();
        v
    };
    let fa = files(&a);
    d.push((fa.len() > 10, format!("{} CSV files per run", fa.len())));
    d.push((
        fa == files(&b),
        "1 thread vs 4 threads: byte-identical".into(),
    ));
    d.push((
        fa == files(&c),
        "repeat with the same seed: byte-identical".into(),
    ));
    outcome("determinism", d)
}

fn main() {
    let start = Instant::now();
    let dir = out_root().join("desk");
    let _ = fs::remove_dir_all(&dir);
    eprintln!("acceptance: desk-scale sweep into {}", dir.display());
    let out = run(&desk_config(&dir)).expect("desk-scale sweep");
    eprintln!(
        "acceptance: sweep finished after {:.0} s",
        start.elapsed().as_secs_f64()
    );

    let results = vec![
        identities(&out),
        oracle(),
        valid_equality(&out),
        table1(&out),
        optimality(&out),
        strange(&out),
        conjectures(&out),
        alpha(&out),
        consistency(&out),
        determinism(),
    ];
    for r in &results {
        println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
        for d in &r.details {
            println!("    {d}");
        }
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!(
        "{passed}/{} criteria passed in {:.0} s (artifacts in {})",
        results.len(),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
}
