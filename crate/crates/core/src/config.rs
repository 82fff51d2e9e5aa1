//! Versioned JSON configuration for analyses and simulations.
//!
//! ```json
//! {
//!   "version": 1,
//!   "nodes": [{"id": 0, "r": 1.0, "x0": 0.0}, {"id": 1, "r": 1.00001, "x0": 0.01}],
//!   "edges": [{"from": 1, "to": 0}],
//!   "weights": {"mode": "paper-eq15", "c": 0.7},
//!   "params": {"kappa1": 1.1, "kappa2": 1.0, "p": 0.99, "tau": 1.0},
//!   "run": {"steps": 300, "seed": 1}
//! }
//! ```
//!
//! [`ConfigFile::canonical_json`] is a fixed point: parsing its output and
//! serializing again yields the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::{ClockState, ProtocolParams};
use crate::error::{Error, Result};
use crate::sim::{JitterModel, NodeScheme, Scheduling, SimulationConfig, TopologyEvent, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::topology::{self, Edge, Topology};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    pub r: f64,
    pub x0: f64,
    #[serde(default = "one")]
    pub s0: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default)]
    pub scheme: NodeScheme,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    /// `alpha_ij = c / |N_i|`.
    #[serde(rename = "paper-eq15")]
    CommitFactor,
    /// Every edge carries its own `alpha`.
    #[serde(rename = "explicit")]
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub mode: WeightMode,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    0.7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub kappa1: f64,
    pub kappa2: f64,
    pub p: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventAction {
    SetEdges(Vec<EdgeSpec>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub step: usize,
    pub action: EventAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheduling: Scheduling,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    pub nodes: Vec<NodeSpec>,
    /// Defaults to the nodes without outgoing edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaders: Option<Vec<usize>>,
    pub edges: Vec<EdgeSpec>,
    pub weights: WeightsSpec,
    pub params: ParamsSpec,
    #[serde(default)]
    pub jitter: JitterModel,
    pub run: RunSpec,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = serde_json::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported version {}, expected {CONFIG_VERSION}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let p = &self.params;
        ProtocolParams::new(p.kappa1, p.kappa2, p.p, p.tau, self.weights.c)
    }

    fn edges(&self, specs: &[EdgeSpec], what: &str) -> Result<Vec<Edge>> {
        specs
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let alpha = match (self.weights.mode, e.alpha) {
                    (WeightMode::Explicit, Some(a)) => a,
                    (WeightMode::Explicit, None) => {
                        return Err(Error::Config(format!("{what}[{k}]: explicit weights need `alpha`")))
                    }
                    // placeholder, replaced by the commit-factor weighting
                    (WeightMode::CommitFactor, None) => 1.0,
                    (WeightMode::CommitFactor, Some(_)) => {
                        return Err(Error::Config(format!(
                            "{what}[{k}]: `alpha` is not allowed with paper-eq15 weights"
                        )))
                    }
                };
                Ok(Edge { from: e.from, to: e.to, alpha })
            })
            .collect()
    }

    fn weighted(&self, t: Topology) -> Result<Topology> {
        match self.weights.mode {
            WeightMode::Explicit => Ok(t),
            WeightMode::CommitFactor => topology::default_weights(&t, self.weights.c),
        }
    }

    pub fn topology(&self) -> Result<Topology> {
        let t = Topology::new(self.nodes.len(), self.edges(&self.edges, "edges")?, self.leaders.clone())?;
        self.weighted(t)
    }

    pub fn initial_states(&self) -> Result<Vec<ClockState>> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if n.id != i {
                    return Err(Error::Config(format!("nodes[{i}].id is {}, expected {i}", n.id)));
                }
                ClockState::with_state(i, n.r, n.x0, n.s0, n.y0)
                    .map_err(|e| Error::Config(format!("nodes[{i}]: {e}")))
            })
            .collect()
    }

    pub fn to_simulation(&self) -> Result<SimulationConfig> {
        let initial = self.initial_states()?;
        let t = self.topology()?;
        let mut events = Vec::with_capacity(self.run.events.len());
        for (k, ev) in self.run.events.iter().enumerate() {
            let EventAction::SetEdges(specs) = &ev.action;
            let swapped = self.weighted(t.with_edges(self.edges(specs, &format!("run.events[{k}].edges"))?)?)?;
            events.push(TopologyEvent { step: ev.step, edges: swapped.edges().to_vec() });
        }
        let cfg = SimulationConfig {
            topology: t,
            params: self.protocol_params()?,
            schemes: self.nodes.iter().map(|n| n.scheme).collect(),
            initial,
            steps: self.run.steps,
            seed: self.run.seed,
            jitter: self.jitter.clone(),
            scheduling: self.run.scheduling.clone(),
            events,
            t0: self.run.t0,
            divergence_threshold: self.run.divergence_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Explicit-weight config reproducing `cfg`.
    pub fn from_simulation(cfg: &SimulationConfig) -> Self {
        let t = &cfg.topology;
        let spec = |edges: &[Edge]| {
            edges.iter().map(|e| EdgeSpec { from: e.from, to: e.to, alpha: Some(e.alpha) }).collect::<Vec<_>>()
        };
        let derived = Topology::new(t.n(), t.edges().to_vec(), None).map(|d| d.leaders().to_vec()).ok();
        let leaders = (derived.as_deref() != Some(t.leaders())).then(|| t.leaders().to_vec());
        let p = &cfg.params;
        ConfigFile {
            version: CONFIG_VERSION,
            nodes: cfg
                .initial
                .iter()
                .zip(&cfg.schemes)
                .enumerate()
                .map(|(i, (st, scheme))| NodeSpec { id: i, r: st.r, x0: st.x, s0: st.s, y0: st.y, scheme: *scheme })
                .collect(),
            leaders,
            edges: spec(t.edges()),
            weights: WeightsSpec { mode: WeightMode::Explicit, c: p.c() },
            params: ParamsSpec { kappa1: p.kappa1(), kappa2: p.kappa2(), p: p.p(), tau: p.tau() },
            jitter: cfg.jitter.clone(),
            run: RunSpec {
                steps: cfg.steps,
                seed: cfg.seed,
                scheduling: cfg.scheduling.clone(),
                events: cfg
                    .events
                    .iter()
                    .map(|ev| EventSpec { step: ev.step, action: EventAction::SetEdges(spec(&ev.edges)) })
                    .collect(),
                t0: cfg.t0,
                divergence_threshold: cfg.divergence_threshold,
            },
        }
    }
}
