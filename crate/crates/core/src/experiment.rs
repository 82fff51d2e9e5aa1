//! Canned experiments, analysis and run reports.

use serde::{Deserialize, Serialize};

use crate::clock::{BaselineKind, BaselineScheme, ClockState, ProtocolParams};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsSummary, Oscillation, Window};
use crate::sim::{self, NodeScheme, RunStatus, SimulationConfig, Trace, TopologyEvent};
use crate::stability::{self, FixedPointPrediction, StabilityReport, Verdict};
use crate::topology::{self, Topology};

pub const REPORT_VERSION: u32 = 1;

/// Published poll-interval bounds of the reference topologies, seconds.
pub const STAR_TAU_BOUND: f64 = 1.2717;
pub const LOOP_TAU_BOUND: f64 = 0.8478;
pub const TAU_BOUND_TOLERANCE: f64 = 1e-3;

/// Convergence criterion used by the experiment checks.
pub const CONVERGED_SPREAD: f64 = 10e-6;
pub const CONVERGED_HOLD: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub version: u32,
    /// Step of the last topology event applied before analysis, if any.
    pub analysed_after_step: Option<usize>,
    pub stability: StabilityReport,
    pub predicted: Option<FixedPointPrediction>,
}

/// Topology in force once every event of `cfg` has fired.
pub fn final_topology(cfg: &SimulationConfig) -> Result<(Topology, Option<usize>)> {
    let mut events: Vec<&TopologyEvent> = cfg.events.iter().collect();
    events.sort_by_key(|ev| ev.step);
    match events.last() {
        Some(ev) => Ok((cfg.topology.with_edges(ev.edges.clone())?, Some(ev.step))),
        None => Ok((cfg.topology.clone(), None)),
    }
}

/// Stability of the skewless dynamics on the final topology, and the
/// predicted synchronized line when the run has no topology events.
pub fn analyze(cfg: &SimulationConfig) -> Result<AnalysisReport> {
    let (t, after) = final_topology(cfg)?;
    let r: Vec<f64> = cfg.initial.iter().map(|s| s.r).collect();
    let mut stability = stability::full_stability_report(&t, &r, &cfg.params)?;
    if cfg.schemes.iter().any(|s| *s != NodeScheme::Skewless) {
        stability.diagnostics.push("some nodes run a baseline scheme; the analysis covers the skewless rule".into());
    }
    let predicted = match (&stability.xi, stability.gamma, after) {
        (Some(xi), Some(gamma), None) => {
            let xi = nalgebra::DVector::from_column_slice(xi);
            let col = |f: fn(&ClockState) -> f64| cfg.initial.iter().map(f).collect::<Vec<_>>();
            Some(stability::predict_fixed_point(
                &col(|s| s.x),
                &col(|s| s.s),
                &col(|s| s.y),
                &r,
                &xi,
                gamma,
                &cfg.params,
            )?)
        }
        _ => None,
    };
    Ok(AnalysisReport { version: REPORT_VERSION, analysed_after_step: after, stability, predicted })
}

/// Exit status of an analysis: 0 Stable, 2 Unstable, 3 NotCovered.
pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Stable => 0,
        Verdict::Unstable => 2,
        Verdict::NotCovered => 3,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, detail }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    /// Preset fields replaced on the command line.
    pub overrides: Vec<String>,
    pub status: RunStatus,
    pub metrics: MetricsSummary,
    pub oscillation: Option<Oscillation>,
    pub analysis: AnalysisReport,
    pub checks: Vec<Check>,
}

impl SimulationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Oscillation of the node whose offset ends largest, comparing the second
/// and last fifths of the recorded rows.
pub fn default_oscillation(trace: &Trace) -> Option<Oscillation> {
    let rows = trace.rows();
    if rows < 10 || trace.n < 2 {
        return None;
    }
    let early = Window::new(rows / 5, 2 * rows / 5);
    let late = Window::new(4 * rows / 5, rows);
    worst_node_oscillation(trace, early, late)
}

fn worst_node_oscillation(trace: &Trace, early: Window, late: Window) -> Option<Oscillation> {
    (0..trace.n)
        .filter(|i| *i != trace.reference)
        .filter_map(|i| metrics::oscillation(trace, i, early, late).ok())
        .max_by(|a, b| a.late_peak.total_cmp(&b.late_peak))
}

pub fn simulation_report(cfg: &SimulationConfig, trace: &Trace) -> Result<SimulationReport> {
    Ok(SimulationReport {
        version: REPORT_VERSION,
        preset: None,
        seed: cfg.seed,
        overrides: Vec::new(),
        status: trace.status,
        metrics: metrics::summarize(trace)?,
        oscillation: default_oscillation(trace),
        analysis: analyze(cfg)?,
        checks: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentPreset {
    Exp1Star,
    Exp1LoopUnstable,
    Exp1LoopFixed,
    Exp2Wheel(usize),
    NaiveInstability,
}

pub const DEFAULT_SEED: u64 = 1;
pub const EXP2_JITTER_MAX: f64 = 10e-3;

/// Early and late windows (inclusive steps) of the naive-scheme check.
pub const NAIVE_EARLY: (usize, usize) = (25, 75);
pub const NAIVE_LATE: (usize, usize) = (150, 200);
pub const NAIVE_GAIN: f64 = 0.1;

impl ExperimentPreset {
    pub const EXP1: [ExperimentPreset; 3] =
        [ExperimentPreset::Exp1Star, ExperimentPreset::Exp1LoopUnstable, ExperimentPreset::Exp1LoopFixed];

    pub fn exp2_sweep() -> Vec<ExperimentPreset> {
        (0..=4).map(ExperimentPreset::Exp2Wheel).collect()
    }

    /// Presets named by `name`; `exp1` and `exp2` expand to suites.
    pub fn parse(name: &str) -> Option<Vec<ExperimentPreset>> {
        let one = |p| Some(vec![p]);
        match name {
            "exp1" => Some(Self::EXP1.to_vec()),
            "exp2" => Some(Self::exp2_sweep()),
            "exp1-star" => one(ExperimentPreset::Exp1Star),
            "exp1-loop-unstable" => one(ExperimentPreset::Exp1LoopUnstable),
            "exp1-loop-fixed" => one(ExperimentPreset::Exp1LoopFixed),
            "naive-instability" => one(ExperimentPreset::NaiveInstability),
            _ => {
                let k: usize = name.strip_prefix("exp2-wheel-")?.parse().ok()?;
                (k <= 4).then(|| vec![ExperimentPreset::Exp2Wheel(k)])
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ExperimentPreset::Exp1Star => "exp1-star".into(),
            ExperimentPreset::Exp1LoopUnstable => "exp1-loop-unstable".into(),
            ExperimentPreset::Exp1LoopFixed => "exp1-loop-fixed".into(),
            ExperimentPreset::Exp2Wheel(k) => format!("exp2-wheel-{k}"),
            ExperimentPreset::NaiveInstability => "naive-instability".into(),
        }
    }

    pub fn config(&self, seed: u64) -> Result<SimulationConfig> {
        match *self {
            ExperimentPreset::Exp1Star => {
                let t = topology::default_weights(&topology::make_star(1), 0.7)?;
                let initial = vec![ClockState::new(0, 1.0, 0.0)?, ClockState::new(1, 1.0 + 1e-5, 10e-3)?];
                Ok(SimulationConfig::new(t, ProtocolParams::default_gains(1.0, 0.7)?, initial, 300, seed))
            }
            ExperimentPreset::Exp1LoopUnstable => exp1_loop(1.0, 600, seed),
            ExperimentPreset::Exp1LoopFixed => exp1_loop(0.5, 1200, seed),
            ExperimentPreset::Exp2Wheel(k) => sim::experiment_two_config(k, EXP2_JITTER_MAX, seed),
            ExperimentPreset::NaiveInstability => {
                let t = topology::default_weights(&topology::make_star(1), 0.7)?;
                let initial = vec![ClockState::new(0, 1.0, 0.0)?, ClockState::new(1, 1.0, 1e-3)?];
                let mut cfg = SimulationConfig::new(t, ProtocolParams::default_gains(1.0, 0.7)?, initial, 500, seed);
                cfg.schemes[1] = NodeScheme::Baseline(BaselineScheme::new(BaselineKind::NaiveSkew, NAIVE_GAIN, 0.0)?);
                Ok(cfg)
            }
        }
    }

    pub fn run(&self, seed: Option<u64>) -> Result<PresetOutcome> {
        let used = seed.unwrap_or(DEFAULT_SEED);
        let cfg = self.config(used)?;
        let trace = sim::run(&cfg)?;
        let mut report = simulation_report(&cfg, &trace)?;
        report.preset = Some(self.name());
        if seed.is_some_and(|s| s != DEFAULT_SEED) {
            report.overrides.push(format!("seed={used}"));
        }
        if *self == ExperimentPreset::NaiveInstability {
            let w = |(a, b): (usize, usize)| Window::new(a, (b + 1).min(trace.rows()));
            report.oscillation = worst_node_oscillation(&trace, w(NAIVE_EARLY), w(NAIVE_LATE));
        }
        report.checks = self.checks(&report, &trace);
        Ok(PresetOutcome { preset: *self, config: cfg, trace, report })
    }

    fn checks(&self, rep: &SimulationReport, trace: &Trace) -> Vec<Check> {
        let st = &rep.analysis.stability;
        let bound = |expected: f64| {
            let got = st.tau_bound.unwrap_or(f64::NAN);
            Check::new(
                "tau bound",
                ((got - expected) / expected).abs() <= TAU_BOUND_TOLERANCE,
                format!("{got:.6} s vs {expected} s"),
            )
        };
        let verdict = |v: Verdict| Check::new("analysis verdict", st.verdict == v, format!("{:?}", st.verdict));
        let converged = || {
            let c = metrics::detect_convergence(trace, CONVERGED_SPREAD, CONVERGED_HOLD);
            Check::new("converged", c.converged, format!("first step {:?}", c.first_step))
        };
        let diverged = || Check::new("diverged", trace.diverged(), format!("{:?}", trace.status));
        match self {
            ExperimentPreset::Exp1Star => {
                let c = metrics::detect_convergence(trace, CONVERGED_SPREAD, CONVERGED_HOLD);
                vec![
                    verdict(Verdict::Stable),
                    bound(STAR_TAU_BOUND),
                    Check::new(
                        "converged before step 300",
                        c.first_step.is_some_and(|k| k < 300),
                        format!("first step {:?}", c.first_step),
                    ),
                ]
            }
            ExperimentPreset::Exp1LoopUnstable => {
                vec![verdict(Verdict::Unstable), bound(LOOP_TAU_BOUND), diverged()]
            }
            ExperimentPreset::Exp1LoopFixed => vec![verdict(Verdict::Stable), converged()],
            ExperimentPreset::Exp2Wheel(_) => vec![
                verdict(Verdict::Stable),
                Check::new("completed", !trace.diverged(), format!("{:?}", trace.status)),
            ],
            ExperimentPreset::NaiveInstability => {
                let osc = rep.oscillation;
                vec![
                    Check::new(
                        "envelope growth >= 2",
                        osc.is_some_and(|o| o.growth_ratio >= 2.0),
                        format!("ratio {:?}", osc.map(|o| o.growth_ratio)),
                    ),
                    Check::new(
                        "sign alternates",
                        osc.is_some_and(|o| o.sign_changes >= 2),
                        format!("{:?} sign changes", osc.map(|o| o.sign_changes)),
                    ),
                    diverged(),
                ]
            }
        }
    }
}

/// Experiment-1 network: leader 0, client 1 on the leader, and a third node
/// that free-runs until it joins at 60 s, forming a timing loop with client 1.
fn exp1_loop(tau: f64, steps: usize, seed: u64) -> Result<SimulationConfig> {
    let before = topology::default_weights(&Topology::from_pairs(3, &[(1, 0)], None)?, 0.7)?;
    let after = topology::default_weights(&topology::make_two_client_loop(), 0.7)?;
    let initial = vec![
        ClockState::new(0, 1.0, 0.0)?,
        ClockState::new(1, 1.0 + 1e-5, 10e-3)?,
        ClockState::new(2, 1.0 - 2e-5, -50e-3)?,
    ];
    let join_step = (60.0 / tau).round() as usize;
    let mut cfg = SimulationConfig::new(before, ProtocolParams::default_gains(tau, 0.7)?, initial, steps, seed);
    cfg.events.push(TopologyEvent { step: join_step, edges: after.edges().to_vec() });
    Ok(cfg)
}

pub struct PresetOutcome {
    pub preset: ExperimentPreset,
    pub config: SimulationConfig,
    pub trace: Trace,
    pub report: SimulationReport,
}

/// Monotone-trend check over a jitter sweep ordered by `K`.
pub fn sweep_check(outcomes: &[PresetOutcome]) -> Result<Check> {
    let mut ks = Vec::new();
    let mut dev = Vec::new();
    for o in outcomes {
        match o.preset {
            ExperimentPreset::Exp2Wheel(k) => {
                ks.push(k as f64);
                dev.push(o.report.metrics.sqrt_s_n);
            }
            other => return Err(Error::Config(format!("{} is not part of the wheel sweep", other.name()))),
        }
    }
    let (first, last) = match (ks.iter().position(|k| *k == 0.0), ks.iter().position(|k| *k == 4.0)) {
        (Some(a), Some(b)) => (dev[a], dev[b]),
        _ => return Err(Error::Config("wheel sweep needs K = 0 and K = 4".into())),
    };
    let rho = metrics::spearman(&ks, &dev);
    let ratio = first / last;
    Ok(Check::new(
        "jitter filtering trend",
        ratio >= 2.0 && rho < 0.0,
        format!("sqrt_S_n(K=0)/sqrt_S_n(K=4) = {ratio:.3}, Spearman = {rho:.3}"),
    ))
}
