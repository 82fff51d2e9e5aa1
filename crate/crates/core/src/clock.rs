//! Single-clock model and the per-node correction rules.
//!
//! A clock `i` keeps a steered estimate `x` of the reference time. Between two
//! update epochs separated by the poll interval `tau` it advances by
//! `tau * r * s`, where `r` is the (unknown) hardware skew and `s` the
//! skew-correction factor the protocol controls. The skewless rule steers `s`
//! from the current weighted offset and an exponential average `y` of past
//! offsets; the baseline rules are the classic offset/skew correction schemes.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Per-node clock state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub node_id: usize,
    /// True skew: seconds of hardware advance per reference second.
    pub r: f64,
    /// Steered time estimate, seconds.
    pub x: f64,
    /// Skew-correction factor.
    pub s: f64,
    /// Exponential average of the weighted offset, seconds.
    pub y: f64,
}

impl ClockState {
    /// A clock with neutral steering state (`s = 1`, `y = 0`).
    pub fn new(node_id: usize, r: f64, x: f64) -> Result<Self> {
        Self::with_state(node_id, r, x, 1.0, 0.0)
    }

    pub fn with_state(node_id: usize, r: f64, x: f64, s: f64, y: f64) -> Result<Self> {
        ensure_finite("r", r)?;
        ensure_finite("x", x)?;
        ensure_finite("s", s)?;
        ensure_finite("y", y)?;
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!("skew r must be > 0, got {r}")));
        }
        Ok(Self { node_id, r, x, s, y })
    }

    fn check(&self) -> Result<()> {
        ensure_finite("r", self.r)?;
        ensure_finite("x", self.x)?;
        ensure_finite("s", self.s)?;
        ensure_finite("y", self.y)?;
        if self.r <= 0.0 {
            return Err(Error::InvalidParameter(format!("skew r must be > 0, got {}", self.r)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct RawParams {
    kappa1: f64,
    kappa2: f64,
    p: f64,
    tau: f64,
    c: f64,
}

/// Gains `(kappa1, kappa2, p)`, poll interval `tau` and commit factor `c`.
///
/// `delta_kappa` is derived on demand, so it can never disagree with the gains.
/// Gains are not range-checked here: the stability analysis must be able to
/// report on parameter sets that violate the synchronization conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProtocolParams {
    kappa1: f64,
    kappa2: f64,
    p: f64,
    tau: f64,
    c: f64,
}

impl TryFrom<RawParams> for ProtocolParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ProtocolParams::new(raw.kappa1, raw.kappa2, raw.p, raw.tau, raw.c)
    }
}

impl From<ProtocolParams> for RawParams {
    fn from(p: ProtocolParams) -> Self {
        RawParams { kappa1: p.kappa1, kappa2: p.kappa2, p: p.p, tau: p.tau, c: p.c }
    }
}

impl ProtocolParams {
    pub fn new(kappa1: f64, kappa2: f64, p: f64, tau: f64, c: f64) -> Result<Self> {
        ensure_finite("kappa1", kappa1)?;
        ensure_finite("kappa2", kappa2)?;
        ensure_finite("p", p)?;
        ensure_finite("tau", tau)?;
        ensure_finite("c", c)?;
        if tau <= 0.0 {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
        }
        if c <= 0.0 {
            return Err(Error::InvalidParameter(format!("c must be > 0, got {c}")));
        }
        Ok(Self { kappa1, kappa2, p, tau, c })
    }

    /// Default gains `p = 0.99, kappa1 = 1.1, kappa2 = 1.0`.
    pub fn default_gains(tau: f64, c: f64) -> Result<Self> {
        Self::new(1.1, 1.0, 0.99, tau, c)
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn delta_kappa(&self) -> f64 {
        self.kappa1 - self.kappa2
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Self::new(self.kappa1, self.kappa2, self.p, tau, self.c)
    }

    pub fn with_c(self, c: f64) -> Result<Self> {
        Self::new(self.kappa1, self.kappa2, self.p, self.tau, c)
    }
}

/// Named parameter sets used in the reference deployments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterProfile {
    /// `p = 0.99, kappa1 = 1.1, kappa2 = 1.0`, `tau = 1 s`, `c = 0.7`.
    Default,
    /// Long poll interval profile: `p = 1.98, kappa1 = 1.388, kappa2 = 1.374`, `tau = 16 s`.
    LongPoll,
    /// Low-gain jitter-robust profile: `p = 0.62, kappa1 = 0.1385, kappa2 = 0.1363`, `tau = 250 ms`.
    LowGain,
}

impl ParameterProfile {
    pub const ALL: [ParameterProfile; 3] =
        [ParameterProfile::Default, ParameterProfile::LongPoll, ParameterProfile::LowGain];

    pub fn params(self) -> ProtocolParams {
        let (k1, k2, p, tau, c) = match self {
            ParameterProfile::Default => (1.1, 1.0, 0.99, 1.0, 0.7),
            // The commit factor for this profile is not published; 0.05 keeps a
            // single-hop client inside the stability region at tau = 16 s.
            ParameterProfile::LongPoll => (1.388, 1.374, 1.98, 16.0, 0.05),
            ParameterProfile::LowGain => (0.1385, 0.1363, 0.62, 0.25, 0.70),
        };
        ProtocolParams::new(k1, k2, p, tau, c).expect("profile constants are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            ParameterProfile::Default => "default",
            ParameterProfile::LongPoll => "long-poll",
            ParameterProfile::LowGain => "low-gain",
        }
    }
}

/// Offset correction `u_x` (seconds) and skew correction `u_s`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPair {
    pub u_x: f64,
    pub u_s: f64,
}

impl CorrectionPair {
    pub const ZERO: CorrectionPair = CorrectionPair { u_x: 0.0, u_s: 0.0 };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `u_x = k1 D`, skew fixed.
    OffsetOnly,
    /// `u_x = k1 D + k2 f_err`, skew fixed.
    OffsetPlusFreq,
    /// `u_s = k1 D + k2 f_err`, no offset correction.
    SkewOnly,
    /// `u_x = k1 D`, `u_s = k2 D`.
    SkewAndOffset,
    /// `u_s = k1 D`, no averaging. Unstable.
    NaiveSkew,
}

impl BaselineKind {
    pub fn uses_kappa2(self) -> bool {
        matches!(self, BaselineKind::OffsetPlusFreq | BaselineKind::SkewOnly | BaselineKind::SkewAndOffset)
    }

    pub fn uses_freq_error(self) -> bool {
        matches!(self, BaselineKind::OffsetPlusFreq | BaselineKind::SkewOnly)
    }
}

/// A baseline correction scheme together with its gains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineScheme {
    pub kind: BaselineKind,
    pub kappa1: f64,
    #[serde(default)]
    pub kappa2: f64,
}

impl BaselineScheme {
    pub fn new(kind: BaselineKind, kappa1: f64, kappa2: f64) -> Result<Self> {
        let scheme = Self { kind, kappa1, kappa2 };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("kappa1", self.kappa1)?;
        ensure_finite("kappa2", self.kappa2)?;
        if self.kappa1 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "baseline {:?} needs kappa1 > 0, got {}",
                self.kind, self.kappa1
            )));
        }
        if self.kind.uses_kappa2() && self.kappa2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "baseline {:?} needs kappa2 > 0, got {}",
                self.kind, self.kappa2
            )));
        }
        Ok(())
    }
}

/// One update epoch of the clock recursion:
/// `x' = x + tau r s + u_x`, `s' = s + u_s`.
pub fn advance(state: &ClockState, params: &ProtocolParams, corr: CorrectionPair) -> Result<ClockState> {
    state.check()?;
    ensure_finite("u_x", corr.u_x)?;
    ensure_finite("u_s", corr.u_s)?;
    let x = state.x + params.tau() * state.r * state.s + corr.u_x;
    let s = state.s + corr.u_s;
    ensure_finite("x", x)?;
    ensure_finite("s", s)?;
    Ok(ClockState { x, s, ..*state })
}

/// Skew and moving-average update of the skewless rule.
///
/// `weighted_offset` is the already aggregated `sum_j alpha_ij (x_j - x_i)`.
/// The returned state keeps `x`: the time estimate only moves through
/// [`advance`] with a zero offset correction.
pub fn skewless_update(state: &ClockState, weighted_offset: f64, params: &ProtocolParams) -> Result<ClockState> {
    state.check()?;
    ensure_finite("weighted_offset", weighted_offset)?;
    let s = state.s + params.kappa1() * weighted_offset - params.kappa2() * state.y;
    let y = params.p() * weighted_offset + (1.0 - params.p()) * state.y;
    ensure_finite("s", s)?;
    ensure_finite("y", y)?;
    Ok(ClockState { s, y, ..*state })
}

/// Offset change per unit of local clock advance over one measurement interval.
pub fn relative_frequency_error(d_now: f64, d_prev: f64, x_now: f64, x_prev: f64) -> Result<f64> {
    ensure_finite("d_now", d_now)?;
    ensure_finite("d_prev", d_prev)?;
    ensure_finite("x_now", x_now)?;
    ensure_finite("x_prev", x_prev)?;
    if x_now == x_prev {
        return Err(Error::DegenerateInterval);
    }
    Ok((d_now - d_prev) / (x_now - x_prev))
}

/// Corrections prescribed by a baseline scheme for offset `d` and relative
/// frequency error `f_err`. Only the frequency-based schemes read `f_err`.
pub fn baseline_correction(scheme: &BaselineScheme, d: f64, f_err: f64) -> CorrectionPair {
    let (k1, k2) = (scheme.kappa1, scheme.kappa2);
    match scheme.kind {
        BaselineKind::OffsetOnly => CorrectionPair { u_x: k1 * d, u_s: 0.0 },
        BaselineKind::OffsetPlusFreq => CorrectionPair { u_x: k1 * d + k2 * f_err, u_s: 0.0 },
        BaselineKind::SkewOnly => CorrectionPair { u_x: 0.0, u_s: k1 * d + k2 * f_err },
        BaselineKind::SkewAndOffset => CorrectionPair { u_x: k1 * d, u_s: k2 * d },
        BaselineKind::NaiveSkew => CorrectionPair { u_x: 0.0, u_s: k1 * d },
    }
}
