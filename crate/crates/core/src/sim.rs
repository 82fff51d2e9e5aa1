//! Discrete-time simulation of a clock network.
//!
//! Each epoch every node measures the offsets to its out-neighbours, forms the
//! weighted aggregate and applies its correction rule. In synchronous mode all
//! measurements are taken against the pre-step snapshot, which is exactly the
//! linear iteration analysed in [`crate::stability`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{self, BaselineScheme, ClockState, CorrectionPair, ProtocolParams};
use crate::error::{Error, Result};
use crate::topology::{self, Edge, Topology};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JitterKind {
    #[default]
    None,
    UniformPingPong,
}

/// Which measured edges receive jitter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JitteredEdges {
    #[default]
    All,
    /// Edges whose target is a leader.
    LeaderLinks,
    /// Explicit `(from, to)` pairs.
    Listed(Vec<(usize, usize)>),
}

/// Two-way exchange noise: each direction is delayed by an independent draw
/// from `{0, g, 2g, ..., jitter_max}` and the offset is estimated from the
/// midpoint, so `D = x_j - x_i + (eta_fwd - eta_bwd) / 2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    pub kind: JitterKind,
    #[serde(rename = "max")]
    pub jitter_max: f64,
    pub granularity: f64,
    #[serde(default)]
    pub edges: JitteredEdges,
}

impl JitterModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn uniform_ping_pong(jitter_max: f64, granularity: f64, edges: JitteredEdges) -> Result<Self> {
        let model = Self { kind: JitterKind::UniformPingPong, jitter_max, granularity, edges };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_max.is_finite() && self.jitter_max >= 0.0) {
            return Err(Error::InvalidParameter(format!("jitter max must be >= 0, got {}", self.jitter_max)));
        }
        if self.kind == JitterKind::UniformPingPong && !(self.granularity.is_finite() && self.granularity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jitter granularity must be > 0, got {}",
                self.granularity
            )));
        }
        Ok(())
    }

    /// Number of support points `{0, g, ..., jitter_max}`.
    pub fn levels(&self) -> u64 {
        (self.jitter_max / self.granularity + 1e-9).floor() as u64 + 1
    }

    /// One per-direction delay.
    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            JitterKind::None => 0.0,
            JitterKind::UniformPingPong => rng.gen_range(0..self.levels()) as f64 * self.granularity,
        }
    }

    pub fn applies_to(&self, t: &Topology, from: usize, to: usize) -> bool {
        if self.kind == JitterKind::None {
            return false;
        }
        match &self.edges {
            JitteredEdges::All => true,
            JitteredEdges::LeaderLinks => t.is_leader(to),
            JitteredEdges::Listed(pairs) => pairs.contains(&(from, to)),
        }
    }
}

/// Correction rule run by a node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeScheme {
    #[default]
    Skewless,
    Baseline(BaselineScheme),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduling {
    #[default]
    Synchronous,
    /// Node `i` updates at `t_k + phase[i]`, measuring the continuously
    /// running clocks of its neighbours at that instant.
    PhaseShifted(Vec<f64>),
}

/// Replace the measurement graph from `step` on (the update of epoch `step`
/// already uses the new edges).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyEvent {
    pub step: usize,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub topology: Topology,
    pub params: ProtocolParams,
    pub schemes: Vec<NodeScheme>,
    pub initial: Vec<ClockState>,
    pub steps: usize,
    pub seed: u64,
    pub jitter: JitterModel,
    pub scheduling: Scheduling,
    pub events: Vec<TopologyEvent>,
    /// True time of step 0, seconds.
    pub t0: f64,
    pub divergence_threshold: f64,
}

impl SimulationConfig {
    /// All-skewless, jitter-free, synchronous configuration.
    pub fn new(topology: Topology, params: ProtocolParams, initial: Vec<ClockState>, steps: usize, seed: u64) -> Self {
        let n = topology.n();
        Self {
            topology,
            params,
            schemes: vec![NodeScheme::Skewless; n],
            initial,
            steps,
            seed,
            jitter: JitterModel::none(),
            scheduling: Scheduling::Synchronous,
            events: Vec::new(),
            t0: 0.0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.topology.n();
        if self.steps == 0 {
            return Err(Error::Config("step count must be >= 1".into()));
        }
        if self.schemes.len() != n || self.initial.len() != n {
            return Err(Error::Config(format!(
                "{} nodes but {} schemes and {} initial states",
                n,
                self.schemes.len(),
                self.initial.len()
            )));
        }
        for st in &self.initial {
            ClockState::with_state(st.node_id, st.r, st.x, st.s, st.y)?;
        }
        for scheme in &self.schemes {
            if let NodeScheme::Baseline(b) = scheme {
                b.validate()?;
            }
        }
        self.jitter.validate()?;
        if let JitteredEdges::Listed(pairs) = &self.jitter.edges {
            if let Some(bad) = pairs.iter().find(|(a, b)| *a >= n || *b >= n) {
                return Err(Error::Config(format!("jittered edge {bad:?} is out of range")));
            }
        }
        if let Scheduling::PhaseShifted(phases) = &self.scheduling {
            if phases.len() != n {
                return Err(Error::Config(format!("{} phases for {n} nodes", phases.len())));
            }
            let tau = self.params.tau();
            if let Some(bad) = phases.iter().find(|ph| !(ph.is_finite() && **ph >= 0.0 && **ph < tau)) {
                return Err(Error::Config(format!("phase {bad} outside [0, tau)")));
            }
        }
        for ev in &self.events {
            if ev.step >= self.steps {
                return Err(Error::Config(format!("event at step {} beyond {} steps", ev.step, self.steps)));
            }
            self.topology.with_edges(ev.edges.clone())?;
        }
        if !self.t0.is_finite() {
            return Err(Error::NonFinite("t0"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence threshold must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    /// An offset exceeded the threshold (or stopped being finite) at `step`.
    Diverged { step: usize },
}

/// A realized per-edge measurement noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub eta_fwd: f64,
    pub eta_bwd: f64,
}

impl NoiseSample {
    pub fn offset_error(&self) -> f64 {
        (self.eta_fwd - self.eta_bwd) / 2.0
    }
}

/// Row `k` holds the state at true time `times[k]`; row 0 is the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n: usize,
    /// Node the offsets are taken against.
    pub reference: usize,
    pub tau: f64,
    pub t0: f64,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub noise: Vec<NoiseSample>,
    pub status: RunStatus,
}

impl Trace {
    pub fn rows(&self) -> usize {
        self.times.len()
    }

    pub fn offset(&self, k: usize, i: usize) -> f64 {
        self.x[k][i] - self.x[k][self.reference]
    }

    /// Largest pairwise offset `max_i x_i - min_i x_i` at row `k`.
    pub fn spread(&self, k: usize) -> f64 {
        let row = &self.x[k];
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// CSV with header `step,time_s,node,offset_to_leader_s,s,y`, one row per
    /// (step, node), floats with 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "time_s", "node", "offset_to_leader_s", "s", "y"])?;
        for k in 0..self.rows() {
            for i in 0..self.n {
                w.write_record([
                    k.to_string(),
                    fmt17(self.times[k]),
                    i.to_string(),
                    fmt17(self.offset(k, i)),
                    fmt17(self.s[k][i]),
                    fmt17(self.y[k][i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Offsets `D_ij` for every edge of `t`, measured against `x`.
pub fn measure_offsets<R: Rng + ?Sized>(
    x: &[f64],
    t: &Topology,
    jitter: &JitterModel,
    rng: &mut R,
    step: usize,
    noise_log: &mut Vec<NoiseSample>,
) -> Vec<(Edge, f64)> {
    t.edges()
        .iter()
        .map(|e| {
            let exact = x[e.to] - x[e.from];
            if jitter.applies_to(t, e.from, e.to) {
                let sample =
                    NoiseSample { step, from: e.from, to: e.to, eta_fwd: jitter.sample_delay(rng), eta_bwd: jitter.sample_delay(rng) };
                noise_log.push(sample);
                (*e, exact + sample.offset_error())
            } else {
                (*e, exact)
            }
        })
        .collect()
}

/// Per-node memory needed by the frequency-error baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct PrevMeasurement {
    d: f64,
    x: f64,
    valid: bool,
}

struct World<'a> {
    cfg: &'a SimulationConfig,
    topology: Topology,
    states: Vec<ClockState>,
    prev: Vec<PrevMeasurement>,
    rng: ChaCha8Rng,
    noise: Vec<NoiseSample>,
}

impl<'a> World<'a> {
    fn new(cfg: &'a SimulationConfig) -> Self {
        World {
            cfg,
            topology: cfg.topology.clone(),
            states: cfg.initial.clone(),
            prev: vec![PrevMeasurement::default(); cfg.topology.n()],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise: Vec::new(),
        }
    }

    /// Corrections of node `i` for aggregated offset `d` read at local time
    /// `x_read`: the offset step `u_x` and the steered `(s, y)`.
    fn steer(&mut self, i: usize, d: f64, x_read: f64) -> Result<(f64, ClockState)> {
        let params = &self.cfg.params;
        let st = self.states[i];
        match self.cfg.schemes[i] {
            NodeScheme::Skewless => Ok((0.0, clock::skewless_update(&st, d, params)?)),
            NodeScheme::Baseline(scheme) => {
                let prev = self.prev[i];
                let f_err = if prev.valid && scheme.kind.uses_freq_error() {
                    clock::relative_frequency_error(d, prev.d, x_read, prev.x).unwrap_or(0.0)
                } else {
                    0.0
                };
                self.prev[i] = PrevMeasurement { d, x: x_read, valid: true };
                let corr = clock::baseline_correction(&scheme, d, f_err);
                crate::error::ensure_finite("u_s", corr.u_s)?;
                Ok((corr.u_x, ClockState { s: st.s + corr.u_s, ..st }))
            }
        }
    }

    fn apply_events(&mut self, step: usize) -> Result<()> {
        for ev in self.cfg.events.iter().filter(|ev| ev.step == step) {
            self.topology = self.topology.with_edges(ev.edges.clone())?;
        }
        Ok(())
    }

    fn aggregate(&self, measured: &[(Edge, f64)]) -> Vec<f64> {
        let mut d = vec![0.0; self.topology.n()];
        for (e, dij) in measured {
            d[e.from] += e.alpha * dij;
        }
        d
    }

    fn step_synchronous(&mut self, k: usize) -> Result<()> {
        let x: Vec<f64> = self.states.iter().map(|s| s.x).collect();
        let measured = measure_offsets(&x, &self.topology, &self.cfg.jitter, &mut self.rng, k, &mut self.noise);
        let d = self.aggregate(&measured);
        let mut next = Vec::with_capacity(self.states.len());
        for i in 0..self.states.len() {
            let (u_x, steered) = self.steer(i, d[i], x[i])?;
            let moved = clock::advance(&self.states[i], &self.cfg.params, CorrectionPair { u_x, u_s: 0.0 })?;
            next.push(ClockState { x: moved.x, ..steered });
        }
        self.states = next;
        Ok(())
    }

    /// Epoch `k` with per-node phases. Clocks run continuously at `r s`
    /// between their own updates; `anchor[i]` is the true time at which
    /// `states[i].x` was read.
    fn step_phase_shifted(&mut self, k: usize, phases: &[f64], anchor: &mut [f64]) -> Result<()> {
        let tau = self.cfg.params.tau();
        let t_k = self.cfg.t0 + k as f64 * tau;
        let mut order: Vec<usize> = (0..phases.len()).collect();
        order.sort_by(|a, b| phases[*a].total_cmp(&phases[*b]).then(a.cmp(b)));
        for i in order {
            let t = t_k + phases[i];
            let x_now: Vec<f64> =
                self.states.iter().zip(anchor.iter()).map(|(s, a)| s.x + (t - a) * s.r * s.s).collect();
            let local: Vec<Edge> = self.topology.out_edges(i).copied().collect();
            let mut d = 0.0;
            for e in local {
                let mut dij = x_now[e.to] - x_now[i];
                if self.cfg.jitter.applies_to(&self.topology, e.from, e.to) {
                    let sample = NoiseSample {
                        step: k,
                        from: e.from,
                        to: e.to,
                        eta_fwd: self.cfg.jitter.sample_delay(&mut self.rng),
                        eta_bwd: self.cfg.jitter.sample_delay(&mut self.rng),
                    };
                    self.noise.push(sample);
                    dij += sample.offset_error();
                }
                d += e.alpha * dij;
            }
            let (u_x, steered) = self.steer(i, d, x_now[i])?;
            let x = x_now[i] + u_x;
            crate::error::ensure_finite("x", x)?;
            self.states[i] = ClockState { x, ..steered };
            anchor[i] = t;
        }
        Ok(())
    }
}

fn record(trace: &mut Trace, states: &[ClockState], x: Vec<f64>, time: f64) {
    trace.times.push(time);
    trace.x.push(x);
    trace.s.push(states.iter().map(|s| s.s).collect());
    trace.y.push(states.iter().map(|s| s.y).collect());
}

pub fn run(cfg: &SimulationConfig) -> Result<Trace> {
    cfg.validate()?;
    let n = cfg.topology.n();
    let tau = cfg.params.tau();
    let mut world = World::new(cfg);
    let mut trace = Trace {
        n,
        reference: cfg.topology.reference_node(),
        tau,
        t0: cfg.t0,
        times: Vec::with_capacity(cfg.steps + 1),
        x: Vec::with_capacity(cfg.steps + 1),
        s: Vec::with_capacity(cfg.steps + 1),
        y: Vec::with_capacity(cfg.steps + 1),
        noise: Vec::new(),
        status: RunStatus::Completed,
    };
    let mut anchor = vec![cfg.t0; n];
    record(&mut trace, &world.states, world.states.iter().map(|s| s.x).collect(), cfg.t0);
    for k in 0..cfg.steps {
        world.apply_events(k)?;
        let outcome = match &cfg.scheduling {
            Scheduling::Synchronous => world.step_synchronous(k),
            Scheduling::PhaseShifted(phases) => world.step_phase_shifted(k, phases, &mut anchor),
        };
        match outcome {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                trace.status = RunStatus::Diverged { step: k + 1 };
                break;
            }
            Err(e) => return Err(e),
        }
        let t_next = cfg.t0 + (k + 1) as f64 * tau;
        let x: Vec<f64> = match cfg.scheduling {
            Scheduling::Synchronous => world.states.iter().map(|s| s.x).collect(),
            Scheduling::PhaseShifted(_) => {
                world.states.iter().zip(&anchor).map(|(s, a)| s.x + (t_next - a) * s.r * s.s).collect()
            }
        };
        record(&mut trace, &world.states, x, t_next);
        let row = trace.rows() - 1;
        let blown = (0..n).any(|i| {
            let off = trace.offset(row, i);
            !off.is_finite() || off.abs() > cfg.divergence_threshold
        });
        if blown {
            trace.status = RunStatus::Diverged { step: k + 1 };
            break;
        }
    }
    trace.noise = world.noise;
    Ok(trace)
}

pub const EXP2_CLIENTS: usize = 9;
pub const EXP2_TAU: f64 = 0.5;
pub const EXP2_C: f64 = 0.7;
pub const EXP2_STEPS: usize = 4000;
pub const EXP2_GRANULARITY: f64 = 1e-3;
/// Bound on the random client skews, `|r - 1|`.
pub const EXP2_SKEW_SPREAD: f64 = 1e-4;
/// Bound on the random initial client offsets, seconds.
pub const EXP2_INITIAL_OFFSET: f64 = 1e-3;

/// Wheel of nine clients around a leader, jitter on the leader links only.
/// Skews and initial offsets are drawn from a stream of `seed` separate from
/// the measurement noise.
pub fn experiment_two_config(k: usize, jitter_max: f64, seed: u64) -> Result<SimulationConfig> {
    let t = topology::default_weights(&topology::make_wheel(EXP2_CLIENTS, k)?, EXP2_C)?;
    let params = ProtocolParams::default_gains(EXP2_TAU, EXP2_C)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut initial = vec![ClockState::new(0, 1.0, 0.0)?];
    for i in 1..=EXP2_CLIENTS {
        let r = 1.0 + rng.gen_range(-EXP2_SKEW_SPREAD..=EXP2_SKEW_SPREAD);
        let x = rng.gen_range(-EXP2_INITIAL_OFFSET..=EXP2_INITIAL_OFFSET);
        initial.push(ClockState::new(i, r, x)?);
    }
    let mut cfg = SimulationConfig::new(t, params, initial, EXP2_STEPS, seed);
    cfg.jitter = if jitter_max > 0.0 {
        JitterModel::uniform_ping_pong(jitter_max, EXP2_GRANULARITY, JitteredEdges::LeaderLinks)?
    } else {
        JitterModel::none()
    };
    Ok(cfg)
}

pub fn run_experiment_two(k: usize, jitter_max: f64, seed: u64) -> Result<Trace> {
    run(&experiment_two_config(k, jitter_max, seed)?)
}
