//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skewless::clock::{ClockState, ProtocolParams};
use skewless::experiment::{self, ExperimentPreset, LOOP_TAU_BOUND, STAR_TAU_BOUND};
use skewless::metrics::{self, Window};
use skewless::sim::{self, SimulationConfig};
use skewless::stability::{self, Verdict};
use skewless::topology::{self, build_laplacian, families, Edge, Topology};

fn verdict_line(id: &str, passed: bool, detail: &str) {
    // written to the raw handle so the line survives output capture
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{} {id}: {detail}", if passed { "PASS" } else { "FAIL" });
}

fn conclude(id: &str, passed: bool, detail: String) {
    verdict_line(id, passed, &detail);
    assert!(passed, "{id}: {detail}");
}

fn skews(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| 1.0 + rng.gen_range(-1e-4..=1e-4)).collect()
}

/// Gains drawn so that both sides of every synchronization condition occur.
fn random_params(rng: &mut ChaCha8Rng) -> ProtocolParams {
    let k1 = rng.gen_range(0.05..2.0);
    let k2 = rng.gen_range(0.05..2.0);
    let p = rng.gen_range(0.05..1.95);
    let tau = 10f64.powf(rng.gen_range(-2.0..0.0));
    ProtocolParams::new(k1, k2, p, tau, 0.7).unwrap()
}

/// Gains with `0 < kappa1 - kappa2 < min(kappa1, 2 kappa1 / 3p)`.
fn random_synchronizing_gains(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    loop {
        let k1: f64 = rng.gen_range(0.1..1.5);
        let p = rng.gen_range(0.1..1.9);
        let dk = rng.gen_range(0.01..0.9) * (2.0 * k1 / (3.0 * p)).min(k1);
        let k2 = k1 - dk;
        if k2 > 0.01 {
            return (k1, k2, p);
        }
    }
}

fn random_family_topology(rng: &mut ChaCha8Rng, max_n: usize) -> Topology {
    let fam = families::Family::ALL[rng.gen_range(0..3)];
    let n = rng.gen_range(2..=max_n);
    families::random(fam, n, rng)
}

/// A random stable, jitter-free configuration whose slowest decaying mode
/// is below `max_margin`, with the spectral margin it achieved.
fn random_stable_config(rng: &mut ChaCha8Rng, t0: f64, max_margin: f64) -> (SimulationConfig, f64) {
    loop {
        let t = random_family_topology(rng, 6);
        let n = t.n();
        let r = skews(n, rng);
        let (k1, k2, p) = random_synchronizing_gains(rng);
        let tau = rng.gen_range(0.05..1.0);
        let params = ProtocolParams::new(k1, k2, p, tau, 0.7).unwrap();
        let rep = stability::full_stability_report(&t, &r, &params).unwrap();
        if rep.verdict != Verdict::Stable || rep.spectral_margin > max_margin {
            continue;
        }
        let initial = (0..n)
            .map(|i| {
                ClockState::with_state(
                    i,
                    r[i],
                    t0 + rng.gen_range(-0.01..0.01),
                    1.0 + rng.gen_range(-1e-4..1e-4),
                    rng.gen_range(-1e-4..1e-4),
                )
                .unwrap()
            })
            .collect();
        let mut cfg = SimulationConfig::new(t, params, initial, 1, 0);
        cfg.t0 = t0;
        return (cfg, rep.spectral_margin);
    }
}

#[test]
fn ac01_experiment_one_stability_boundary() {
    let start = Instant::now();
    let star = experiment::analyze(&ExperimentPreset::Exp1Star.config(1).unwrap()).unwrap();
    let lp = experiment::analyze(&ExperimentPreset::Exp1LoopUnstable.config(1).unwrap()).unwrap();
    let star_bound = star.stability.tau_bound.unwrap();
    let loop_bound = lp.stability.tau_bound.unwrap();
    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    let bounds_ok = rel(star_bound, STAR_TAU_BOUND) <= 1e-3 && rel(loop_bound, LOOP_TAU_BOUND) <= 1e-3;

    let converged = |p: ExperimentPreset| {
        let trace = sim::run(&p.config(1).unwrap()).unwrap();
        let c = metrics::detect_convergence(&trace, experiment::CONVERGED_SPREAD, experiment::CONVERGED_HOLD);
        (c.converged, trace.status)
    };
    let (star_conv, star_status) = converged(ExperimentPreset::Exp1Star);
    let unstable = sim::run(&ExperimentPreset::Exp1LoopUnstable.config(1).unwrap()).unwrap();
    let (fixed_conv, fixed_status) = converged(ExperimentPreset::Exp1LoopFixed);
    let elapsed = start.elapsed();
    let passed =
        bounds_ok && star_conv && unstable.diverged() && fixed_conv && elapsed < Duration::from_secs(5);
    conclude(
        "AC1 experiment-1 stability boundary",
        passed,
        format!(
            "tau bounds {star_bound:.6} s / {loop_bound:.6} s; star {star_status:?} converged={star_conv}; \
             loop tau=1 {:?}; loop tau=0.5 {fixed_status:?} converged={fixed_conv}; {elapsed:.2?}",
            unstable.status
        ),
    );
}

#[test]
fn ac02_analytic_matches_spectral() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let (mut checked, mut agree, mut stable, mut skipped) = (0, 0, 0, 0);
    let mut first_mismatch = None;
    while checked < 1000 {
        let t = random_family_topology(&mut rng, 8);
        let r = skews(t.n(), &mut rng);
        let params = random_params(&mut rng);
        let rep = stability::full_stability_report(&t, &r, &params).unwrap();
        assert!(rep.all_real_spectrum, "families have real spectra");
        if (rep.spectral_margin - 1.0).abs() <= 1e-6 {
            skipped += 1;
            continue;
        }
        checked += 1;
        if rep.spectral_verdict == Verdict::Stable {
            stable += 1;
        }
        if rep.analytic_verdict == Some(rep.spectral_verdict) {
            agree += 1;
        } else if first_mismatch.is_none() {
            first_mismatch = Some(format!("{params:?} margin {}", rep.spectral_margin));
        }
    }
    let elapsed = start.elapsed();
    conclude(
        "AC2 analytic vs spectral verdicts",
        agree == checked && elapsed < Duration::from_secs(60),
        format!(
            "{agree}/{checked} agree ({stable} stable, {skipped} in boundary band skipped); {elapsed:.2?}{}",
            first_mismatch.map(|m| format!("; first mismatch {m}")).unwrap_or_default()
        ),
    );
}

#[test]
fn ac03_hermite_biehler_matches_roots() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let (mut checked, mut agree, mut stable) = (0, 0, 0);
    while checked < 10_000 {
        let k1 = rng.gen_range(0.01..2.0);
        let k2 = rng.gen_range(0.01..2.0);
        let p = rng.gen_range(0.01..1.99);
        let nu = rng.gen_range(1e-3..3.0);
        let params = ProtocolParams::new(k1, k2, p, 1.0, 0.7).unwrap();
        let roots = stability::companion_roots(nu.into(), &params);
        let rho = roots.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if (rho - 1.0).abs() <= 1e-8 {
            continue;
        }
        checked += 1;
        let by_roots = rho < 1.0;
        stable += by_roots as usize;
        agree += (stability::hermite_biehler_schur_test(nu, &params) == by_roots) as usize;
    }
    let elapsed = start.elapsed();
    conclude(
        "AC3 Hermite-Biehler vs companion roots",
        agree == checked && elapsed < Duration::from_secs(10),
        format!("{agree}/{checked} agree ({stable} Schur); {elapsed:.2?}"),
    );
}

#[test]
fn ac04_factorization_and_unit_multiplicity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let mut worst: f64 = 0.0;
    let mut factor_ok = 0;
    let mut iff_ok = 0;
    let total = 200;
    for it in 0..total {
        let base = random_family_topology(&mut rng, 6);
        let (k1, mut k2, mut p) = random_synchronizing_gains(&mut rng);
        let tau = rng.gen_range(0.05..1.0);
        // every fourth instance breaks one of the three conditions
        let t = match it % 8 {
            1 => {
                k2 = k1;
                base
            }
            3 => {
                p = 0.0;
                base
            }
            5 => {
                let n = base.n();
                let mut edges = base.edges().to_vec();
                edges.extend(base.edges().iter().map(|e| Edge { from: e.from + n, to: e.to + n, alpha: e.alpha }));
                Topology::new(2 * n, edges, None).unwrap()
            }
            _ => base,
        };
        let params = ProtocolParams::new(k1, k2, p, tau, 0.7).unwrap();
        let r = skews(t.n(), &mut rng);
        let chk = stability::lemma1_check(&build_laplacian(&t), &r, &params).unwrap();
        worst = worst.max(chk.factorization_residual);
        factor_ok += (chk.factorization_residual <= 1e-7) as usize;
        let conditions = t.connectivity().unwrap().is_connected() && k1 != k2 && p > 0.0;
        iff_ok += ((chk.multiplicity_of_one == 2) == conditions) as usize;
    }
    let elapsed = start.elapsed();
    conclude(
        "AC4 unit-eigenvalue factorization and unit multiplicity",
        factor_ok == total && iff_ok == total && elapsed < Duration::from_secs(30),
        format!(
            "factorization within 1e-7 on {factor_ok}/{total} (worst {worst:.2e}); multiplicity iff on {iff_ok}/{total}; {elapsed:.2?}"
        ),
    );
}

#[test]
fn ac05_jordan_chain_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = random_family_topology(&mut rng, 6);
        let r = skews(t.n(), &mut rng);
        let (k1, k2, p) = random_synchronizing_gains(&mut rng);
        let params = ProtocolParams::new(k1, k2, p, rng.gen_range(0.05..1.0), 0.7).unwrap();
        let l = build_laplacian(&t);
        let xi = topology::left_null_vector(&l).unwrap();
        let chain = stability::jordan_chain(&l, &r, &params, &xi).unwrap();
        let sys = stability::assemble_system_matrix(&l, &r, &params).unwrap();
        worst = worst.max(chain.residuals(&sys, &params).max());
    }
    conclude("AC5 Jordan-chain residuals", worst < 1e-9, format!("worst residual {worst:.2e} over 200 instances"));
}

/// Rows needed for the slowest transient to shrink by `1e-15`.
fn horizon(margin: f64) -> usize {
    ((1e-15f64).ln() / margin.ln() * 1.5).ceil() as usize + 200
}

#[test]
fn ac06_fixed_point_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let t0 = 100.0;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let (mut cfg, margin) = random_stable_config(&mut rng, t0, 0.98);
        cfg.steps = horizon(margin);
        let trace = sim::run(&cfg).unwrap();
        let pred = experiment::analyze(&cfg).unwrap().predicted.unwrap();
        let fit = metrics::fit_synchronized_line(&trace, Window::tail(&trace, 100)).unwrap();
        let rel_r = ((fit.r_hat - pred.r_star) / pred.r_star).abs();
        let rel_x = ((fit.x_hat - pred.x_star) / pred.x_star).abs();
        worst_rel = worst_rel.max(rel_r).max(rel_x);
    }

    // leader clock started on true time: the network settles on it
    let mut worst_leader: f64 = 0.0;
    for _ in 0..20 {
        let (mut cfg, margin) = loop {
            let (cfg, m) = random_stable_config(&mut rng, t0, 0.98);
            if cfg.topology.leaders() == [0] {
                break (cfg, m);
            }
        };
        let r0 = cfg.initial[0].r;
        cfg.initial[0] = ClockState::with_state(0, r0, t0, 1.0 / r0, 0.0).unwrap();
        cfg.steps = horizon(margin);
        let trace = sim::run(&cfg).unwrap();
        let fit = metrics::fit_synchronized_line(&trace, Window::tail(&trace, 100)).unwrap();
        worst_leader = worst_leader.max((fit.r_hat - 1.0).abs()).max((fit.x_hat - t0).abs());
    }
    conclude(
        "AC6 synchronized line matches prediction",
        worst_rel <= 1e-6 && worst_leader <= 1e-9,
        format!("worst relative error {worst_rel:.2e} over 100 configs; leader-anchored worst {worst_leader:.2e}"),
    );
}

#[test]
fn ac07_naive_skew_scheme_oscillates() {
    let cfg = ExperimentPreset::NaiveInstability.config(0).unwrap();
    let trace = sim::run(&cfg).unwrap();
    let w = |(a, b): (usize, usize)| Window::new(a, b + 1);
    let osc =
        metrics::oscillation(&trace, 1, w(experiment::NAIVE_EARLY), w(experiment::NAIVE_LATE)).unwrap();
    let again = sim::run(&cfg).unwrap();
    conclude(
        "AC7 naive skew correction diverges",
        osc.growth_ratio >= 2.0 && osc.sign_changes >= 2 && again == trace,
        format!(
            "peak {:.3e} s over steps 150-200 vs {:.3e} s over 25-75 (ratio {:.1}), {} sign changes",
            osc.late_peak, osc.early_peak, osc.growth_ratio, osc.sign_changes
        ),
    );
}

#[test]
fn ac08_jitter_filtering_improves_with_neighbours() {
    let start = Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];
    let ks: Vec<f64> = (0..=4).map(|k| k as f64).collect();
    let mut k0 = Vec::new();
    let mut k4 = Vec::new();
    let mut negative = 0;
    let mut rhos = Vec::new();
    for seed in seeds {
        let dev: Vec<f64> = (0..=4)
            .map(|k| {
                let trace = sim::run_experiment_two(k, experiment::EXP2_JITTER_MAX, seed).unwrap();
                assert!(!trace.diverged());
                metrics::mean_relative_deviation(&trace, Window::steady_state(&trace)).unwrap()
            })
            .collect();
        k0.push(dev[0]);
        k4.push(dev[4]);
        let rho = metrics::spearman(&ks, &dev);
        negative += (rho < 0.0) as usize;
        rhos.push(rho);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&k0) / mean(&k4);
    let elapsed = start.elapsed();
    conclude(
        "AC8 experiment-2 jitter filtering",
        ratio >= 2.0 && negative >= 4 && elapsed < Duration::from_secs(60),
        format!(
            "mean sqrt_S_n K=0 {:.3e} s, K=4 {:.3e} s, ratio {ratio:.2}; Spearman {rhos:.2?} ({negative}/5 negative); {elapsed:.2?}",
            mean(&k0),
            mean(&k4)
        ),
    );
}

#[test]
fn ac09_simulator_matches_matrix_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (mut cfg, _) = random_stable_config(&mut rng, 0.0, 0.999);
        cfg.steps = 1000;
        let trace = sim::run(&cfg).unwrap();
        let n = cfg.topology.n();
        let r: Vec<f64> = cfg.initial.iter().map(|s| s.r).collect();
        let a = stability::assemble_system_matrix(&build_laplacian(&cfg.topology), &r, &cfg.params).unwrap();
        let mut z = DVector::from_iterator(
            3 * n,
            cfg.initial.iter().map(|s| s.x).chain(cfg.initial.iter().map(|s| s.s)).chain(cfg.initial.iter().map(|s| s.y)),
        );
        let reference = trace.reference;
        for k in 1..=cfg.steps {
            z = a.apply(&z);
            for i in 0..n {
                let off = z[i] - z[reference];
                worst = worst.max((off - trace.offset(k, i)).abs());
            }
        }
    }
    conclude(
        "AC9 simulator equals matrix iteration",
        worst <= 1e-9,
        format!("worst offset difference {worst:.2e} s over 20 configs x 1000 steps"),
    );
}

#[test]
fn ac10_identical_seeds_identical_csv() {
    let csv = |p: ExperimentPreset, seed| {
        let trace = sim::run(&p.config(seed).unwrap()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        buf
    };
    let mut all_equal = true;
    let mut bytes = 0;
    for p in [ExperimentPreset::Exp2Wheel(2), ExperimentPreset::Exp1LoopUnstable] {
        let a = csv(p, 17);
        let b = csv(p, 17);
        bytes += a.len();
        all_equal &= a == b;
    }
    let differs = csv(ExperimentPreset::Exp2Wheel(2), 18) != csv(ExperimentPreset::Exp2Wheel(2), 17);
    conclude(
        "AC10 deterministic trace CSV",
        all_equal && differs,
        format!("two runs byte-identical over {bytes} bytes; a different seed changes the trace: {differs}"),
    );
}
