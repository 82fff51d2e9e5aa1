//! Linear analysis of the synchronous skewless iteration.
//!
//! Stacking `z = [x; s; y]` the network update is `z' = A z` with
//!
//! ```text
//!     | I        tau R   0        |
//! A = | -k1 L    I       -k2 I    |
//!     | -p L     0       (1-p) I  |
//! ```
//!
//! The spectrum of `A` factors through the eigenvalues `nu_l` of `tau L R`:
//! each `nu_l` contributes the three roots of
//! `g(lambda) = (lambda-1)^2 (lambda-1+p) + nu ((lambda-1) k1 + p (k1-k2))`.
//! Synchronization requires eigenvalue 1 with multiplicity exactly two and
//! every other eigenvalue strictly inside the unit circle. For Laplacians
//! with a real spectrum this reduces to closed-form parameter conditions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clock::ProtocolParams;
use crate::error::{Error, Result};
use crate::linalg;
use crate::topology::{self, Connectivity, LaplacianMatrix, Topology};

/// Radius around 1 inside which an eigenvalue of `A` counts as 1.
pub const UNIT_EIGENVALUE_RADIUS: f64 = 1e-7;
/// Slack reported next to the strict `|mu| < 1` test.
pub const MARGIN_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    a: DMatrix<f64>,
    n: usize,
}

impl SystemMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Block `(row, col)` of the 3x3 block grid, each block `n x n`.
    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        assert!(row < 3 && col < 3, "block index out of range");
        self.a.view((row * self.n, col * self.n), (self.n, self.n)).into_owned()
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z
    }
}

fn check_skews(l: &LaplacianMatrix, r: &[f64]) -> Result<()> {
    if r.len() != l.n() {
        return Err(Error::Dimension(format!("{} skews for {} nodes", r.len(), l.n())));
    }
    if let Some(bad) = r.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!("skew must be positive, got {bad}")));
    }
    Ok(())
}

pub fn assemble_system_matrix(l: &LaplacianMatrix, r: &[f64], params: &ProtocolParams) -> Result<SystemMatrix> {
    check_skews(l, r)?;
    let n = l.n();
    let lm = l.matrix();
    let (k1, k2, p, tau) = (params.kappa1(), params.kappa2(), params.p(), params.tau());
    let mut a = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(i, n + i)] = tau * r[i];
        a[(n + i, n + i)] = 1.0;
        a[(n + i, 2 * n + i)] = -k2;
        a[(2 * n + i, 2 * n + i)] = 1.0 - p;
        for j in 0..n {
            a[(n + i, j)] = -k1 * lm[(i, j)];
            a[(2 * n + i, j)] = -p * lm[(i, j)];
        }
    }
    Ok(SystemMatrix { a, n })
}

/// The per-mode cubic `g(lambda; nu)` evaluated at `lambda`.
pub fn mode_polynomial(nu: Complex64, params: &ProtocolParams, lambda: Complex64) -> Complex64 {
    let e = lambda - 1.0;
    e * e * (e + params.p()) + nu * (e * params.kappa1() + params.p() * params.delta_kappa())
}

/// Roots of the per-mode cubic. Solved in `e = lambda - 1`, where the cubic
/// reads `e^3 + p e^2 + nu k1 e + nu p dk`, so `nu = 0` yields the exact
/// double root at 1.
pub fn companion_roots(nu: Complex64, params: &ProtocolParams) -> [Complex64; 3] {
    let p = Complex64::new(params.p(), 0.0);
    let coeffs = [nu * params.p() * params.delta_kappa(), nu * params.kappa1(), p, Complex64::new(1.0, 0.0)];
    let roots = linalg::poly_roots(&coeffs);
    let mut out = [Complex64::new(1.0, 0.0); 3];
    for (slot, e) in out.iter_mut().zip(roots) {
        *slot = e + 1.0;
    }
    linalg::sort_spectrum(&mut out);
    out
}

/// Whether all three roots lie strictly inside the unit circle, by root finding.
pub fn roots_are_schur(nu: Complex64, params: &ProtocolParams) -> bool {
    companion_roots(nu, params).iter().all(|z| z.norm() < 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Check {
    pub multiplicity_of_one: usize,
    /// Eigenvalues of `A`.
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvalues of `tau L R`.
    pub nus: Vec<Complex64>,
    /// Union of the per-mode cubic roots.
    pub factor_roots: Vec<Complex64>,
    /// Largest distance in the closest pairing of `eigenvalues` and `factor_roots`.
    pub factorization_residual: f64,
}

pub fn count_unit_eigenvalues(values: &[Complex64]) -> usize {
    values.iter().filter(|z| (*z - 1.0).norm() <= UNIT_EIGENVALUE_RADIUS).count()
}

pub fn lemma1_check(l: &LaplacianMatrix, r: &[f64], params: &ProtocolParams) -> Result<Lemma1Check> {
    let sys = assemble_system_matrix(l, r, params)?;
    let eigenvalues = linalg::eigenvalues(sys.matrix())?;
    let tau_lr = l.times_diag(r)? * params.tau();
    let nus = linalg::eigenvalues(&tau_lr)?;
    let mut factor_roots: Vec<Complex64> = nus.iter().flat_map(|nu| companion_roots(*nu, params)).collect();
    linalg::sort_spectrum(&mut factor_roots);
    let factorization_residual =
        linalg::multiset_distance(&eigenvalues, &factor_roots).expect("3n eigenvalues and 3n roots");
    Ok(Lemma1Check {
        multiplicity_of_one: count_unit_eigenvalues(&eigenvalues),
        eigenvalues,
        nus,
        factor_roots,
        factorization_residual,
    })
}

/// Right chain `zeta`, left chain `eta` and the scalars they are built from.
/// `zeta[0], zeta[1]` span the eigenvalue-1 Jordan block, `zeta[2]` is the
/// `1 - p` eigenvector; `eta` is the biorthogonal dual.
#[derive(Clone, Debug, PartialEq)]
pub struct JordanChain {
    pub zeta: [DVector<f64>; 3],
    pub eta: [DVector<f64>; 3],
    pub gamma: f64,
    pub xi: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanResiduals {
    pub right_eigen: f64,
    pub right_generalized: f64,
    pub right_decay: f64,
    pub left_eigen: f64,
    pub left_generalized: f64,
    pub left_decay: f64,
    /// `max |eta_l . zeta_h - delta_lh|`.
    pub biorthogonality: f64,
}

impl JordanResiduals {
    pub fn max(&self) -> f64 {
        [
            self.right_eigen,
            self.right_generalized,
            self.right_decay,
            self.left_eigen,
            self.left_generalized,
            self.left_decay,
            self.biorthogonality,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `1 / sum_i (xi_i / r_i)`: the xi-weighted harmonic mean of the skews.
pub fn harmonic_skew(xi: &DVector<f64>, r: &[f64]) -> f64 {
    1.0 / xi.iter().zip(r).map(|(w, ri)| w / ri).sum::<f64>()
}

pub fn jordan_chain(
    l: &LaplacianMatrix,
    r: &[f64],
    params: &ProtocolParams,
    xi: &DVector<f64>,
) -> Result<JordanChain> {
    check_skews(l, r)?;
    let n = l.n();
    if xi.len() != n {
        return Err(Error::Dimension(format!("xi has {} entries for {n} nodes", xi.len())));
    }
    if params.p() <= 0.0 {
        return Err(Error::InvalidParameter(format!("Jordan chain needs p > 0, got {}", params.p())));
    }
    if params.delta_kappa() == 0.0 {
        return Err(Error::InvalidParameter("Jordan chain needs kappa1 != kappa2".into()));
    }
    let resid = (xi.transpose() * l.matrix()).amax();
    if resid > 1e-8 || (xi.sum() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter(format!("xi is not a normalized left null vector (residual {resid:e})")));
    }
    let (k2, p, tau) = (params.kappa2(), params.p(), params.tau());
    let gamma = harmonic_skew(xi, r);
    let ones = DVector::from_element(n, 1.0);
    let rinv = DVector::from_iterator(n, r.iter().map(|v| 1.0 / v));
    let rinv_xi = rinv.component_mul(xi);
    let zero = DVector::zeros(n);
    let stack = |a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>| {
        let mut v = DVector::zeros(3 * n);
        v.rows_mut(0, n).copy_from(a);
        v.rows_mut(n, n).copy_from(b);
        v.rows_mut(2 * n, n).copy_from(c);
        v
    };
    let zeta = [
        stack(&ones, &zero, &zero),
        stack(&ones, &(&rinv / tau), &zero),
        stack(&(&ones * (-tau * k2 / (p * p))), &(&rinv * (k2 / p)), &rinv),
    ];
    let eta = [
        stack(&rinv_xi, &(xi * -tau), &(xi * (tau * k2 * (1.0 / p + 1.0 / (p * p))))) * gamma,
        // The tau factor on the second left vector is what makes
        // eta_1^T (A - I) = eta_2^T and eta_2 . zeta_2 = 1 hold together.
        stack(&zero, xi, &(xi * (-k2 / p))) * (gamma * tau),
        stack(&zero, &zero, xi) * gamma,
    ];
    Ok(JordanChain { zeta, eta, gamma, xi: xi.clone() })
}

impl JordanChain {
    pub fn residuals(&self, sys: &SystemMatrix, params: &ProtocolParams) -> JordanResiduals {
        let dim = sys.matrix().nrows();
        let eye = DMatrix::<f64>::identity(dim, dim);
        let a_minus_1 = sys.matrix() - &eye;
        let a_minus_d = sys.matrix() - &eye * (1.0 - params.p());
        let [z1, z2, z3] = &self.zeta;
        let [e1, e2, e3] = &self.eta;
        let mut bi: f64 = 0.0;
        for (l, e) in self.eta.iter().enumerate() {
            for (h, z) in self.zeta.iter().enumerate() {
                let target = if l == h { 1.0 } else { 0.0 };
                bi = bi.max((e.dot(z) - target).abs());
            }
        }
        JordanResiduals {
            right_eigen: (&a_minus_1 * z1).amax(),
            right_generalized: (&a_minus_1 * z2 - z1).amax(),
            right_decay: (&a_minus_d * z3).amax(),
            left_eigen: (e2.transpose() * &a_minus_1).amax(),
            left_generalized: (e1.transpose() * &a_minus_1 - e2.transpose()).amax(),
            left_decay: (e3.transpose() * &a_minus_d).amax(),
            biorthogonality: bi,
        }
    }
}

/// Asymptotic line `x_i(t_k) = r_star (t_k - t_0) + x_star`, with `t_0` the
/// epoch of the initial state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointPrediction {
    pub x_star: f64,
    pub r_star: f64,
}

pub fn predict_fixed_point(
    x0: &[f64],
    s0: &[f64],
    y0: &[f64],
    r: &[f64],
    xi: &DVector<f64>,
    gamma: f64,
    params: &ProtocolParams,
) -> Result<FixedPointPrediction> {
    let n = xi.len();
    if [x0.len(), s0.len(), y0.len(), r.len()].iter().any(|&len| len != n) {
        return Err(Error::Dimension("initial state vectors must match xi".into()));
    }
    let (k2, p, tau) = (params.kappa2(), params.p(), params.tau());
    let mut x_star = 0.0;
    let mut r_star = 0.0;
    for i in 0..n {
        x_star += xi[i] * (x0[i] / r[i] + tau * k2 / (p * p) * y0[i]);
        r_star += xi[i] * (s0[i] - k2 / p * y0[i]);
    }
    Ok(FixedPointPrediction { x_star: gamma * x_star, r_star: gamma * r_star })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterConditions {
    /// `0 < p < 2`.
    pub cond_i: bool,
    /// `2 k1 / (3 p) > k1 - k2 > 0`.
    pub cond_ii: bool,
    /// `tau < tau_bound`.
    pub cond_iii: bool,
    /// `p (k2 - p dk) / (mu_max (k1 - p dk)^2)`, seconds.
    pub tau_bound: f64,
}

impl ParameterConditions {
    pub fn all(&self) -> bool {
        self.cond_i && self.cond_ii && self.cond_iii
    }
}

/// Largest `nu` for which the per-mode cubic is Schur: `p (k2 - p dk) / (k1 - p dk)^2`.
pub fn critical_nu(params: &ProtocolParams) -> f64 {
    let (k1, k2, p, dk) = (params.kappa1(), params.kappa2(), params.p(), params.delta_kappa());
    p * (k2 - p * dk) / ((k1 - p * dk) * (k1 - p * dk))
}

fn cond_i(params: &ProtocolParams) -> bool {
    params.p() > 0.0 && params.p() < 2.0
}

fn cond_ii(params: &ProtocolParams) -> bool {
    let dk = params.delta_kappa();
    dk > 0.0 && 2.0 * params.kappa1() / (3.0 * params.p()) > dk
}

/// Closed-form synchronization conditions for real-spectrum Laplacians.
/// `mu_max` is the largest eigenvalue of `L R`.
pub fn check_parameter_conditions(params: &ProtocolParams, mu_max: f64) -> Result<ParameterConditions> {
    if !(mu_max.is_finite() && mu_max > 0.0) {
        return Err(Error::InvalidParameter(format!("largest eigenvalue of L R must be > 0, got {mu_max}")));
    }
    let tau_bound = critical_nu(params) / mu_max;
    Ok(ParameterConditions {
        cond_i: cond_i(params),
        cond_ii: cond_ii(params),
        cond_iii: params.tau() < tau_bound,
        tau_bound,
    })
}

/// Poll-interval bound valid for every connected real-spectrum graph whose
/// diagonal weights are at most `alpha_max` and skews at most `r_max_hat`.
pub fn topology_free_tau_bound(params: &ProtocolParams, alpha_max: f64, r_max_hat: f64) -> Result<f64> {
    let (k1, k2, p, dk) = (params.kappa1(), params.kappa2(), params.p(), params.delta_kappa());
    let denom = 2.0 * alpha_max * r_max_hat * (k1 - dk * p) * (k1 - dk * p);
    if !(denom.is_finite() && denom > 0.0) {
        return Err(Error::ConditionViolation(format!(
            "bound denominator 2 alpha_max r_max (k1 - dk p)^2 = {denom} is not positive"
        )));
    }
    Ok(p * (k2 - dk * p) / denom)
}

/// Coefficients of the Hurwitz image `P(s) = s^3 + a2 s^2 + a1 s + a0` of the
/// per-mode cubic under `lambda = (s + 1) / (s - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HurwitzImage {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
}

impl HurwitzImage {
    pub fn new(nu: f64, params: &ProtocolParams) -> Self {
        let (k1, p, dk) = (params.kappa1(), params.p(), params.delta_kappa());
        let base = 2.0 * k1 / (dk * p);
        HurwitzImage {
            a2: base - 3.0,
            a1: 4.0 / (dk * nu) + 3.0 - 4.0 * k1 / (dk * p),
            a0: 4.0 * (2.0 - p) / (dk * p * nu) + base - 1.0,
        }
    }

    /// Squared root of the real part `P^r(w) = a0 - a2 w^2`.
    pub fn omega_r(&self) -> f64 {
        self.a0 / self.a2
    }

    /// Squared nonzero root of the imaginary part `P^i(w) = a1 w - w^3`.
    pub fn omega_i(&self) -> f64 {
        self.a1
    }
}

/// Schur test of the per-mode cubic for real `nu > 0` through interlacing of
/// the real and imaginary parts of its Hurwitz image. No root finding.
pub fn hermite_biehler_schur_test(nu: f64, params: &ProtocolParams) -> bool {
    if !(nu.is_finite() && nu > 0.0) {
        return false;
    }
    if params.delta_kappa() <= 0.0 || !cond_i(params) {
        return false;
    }
    let img = HurwitzImage::new(nu, params);
    // leading-coefficient condition a3 a2 > 0
    if !(img.a2 > 0.0) {
        return false;
    }
    let (wr, wi) = (img.omega_r(), img.omega_i());
    0.0 < wr && wr < wi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
    NotCovered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub connected: bool,
    pub connectivity: Connectivity,
    pub multiplicity_of_one: usize,
    /// Largest `|mu|` over eigenvalues of `A` that are not 1.
    pub spectral_margin: f64,
    /// `1 - spectral_margin`; stability needs this above zero.
    pub margin_slack: f64,
    pub spectral_verdict: Verdict,
    pub cond_i: bool,
    pub cond_ii: bool,
    /// `None` when the closed-form conditions do not apply.
    pub cond_iii: Option<bool>,
    /// Topology-specific poll-interval bound; `None` if unbounded or not applicable.
    pub tau_bound: Option<f64>,
    pub tau_bound_topology_free: Option<f64>,
    pub tau: f64,
    pub mu_max: f64,
    pub gershgorin_bound: f64,
    pub alpha_max: f64,
    pub r_max: f64,
    pub all_real_spectrum: bool,
    pub analytic_verdict: Option<Verdict>,
    pub verdict: Verdict,
    pub xi: Option<Vec<f64>>,
    pub gamma: Option<f64>,
    pub factorization_residual: f64,
    pub diagnostics: Vec<String>,
}

impl StabilityReport {
    /// Analytic and spectral verdicts agree, or the analytic one does not apply.
    pub fn consistent(&self) -> bool {
        self.analytic_verdict.map_or(true, |v| v == self.spectral_verdict)
    }
}

pub fn spectral_margin(eigenvalues: &[Complex64]) -> f64 {
    eigenvalues
        .iter()
        .filter(|z| (*z - 1.0).norm() > UNIT_EIGENVALUE_RADIUS)
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn full_stability_report(t: &Topology, r: &[f64], params: &ProtocolParams) -> Result<StabilityReport> {
    let l = topology::build_laplacian(t);
    check_skews(&l, r)?;
    let mut diagnostics = Vec::new();
    let connectivity = t.connectivity()?;
    let connected = connectivity.is_connected();
    if let Some(why) = connectivity.describe_failure() {
        diagnostics.push(format!("not connected: {why}"));
    }

    let lemma = lemma1_check(&l, r, params)?;
    if lemma.factorization_residual > 1e-7 {
        diagnostics.push(format!(
            "eigenvalues of A deviate from the per-mode cubic roots by {:.3e}",
            lemma.factorization_residual
        ));
    }
    let margin = spectral_margin(&lemma.eigenvalues);
    let spectral_verdict =
        if lemma.multiplicity_of_one == 2 && margin < 1.0 { Verdict::Stable } else { Verdict::Unstable };
    if (margin - 1.0).abs() <= MARGIN_SLACK {
        diagnostics.push(format!("spectral margin {margin} is within {MARGIN_SLACK:e} of the unit circle"));
    }

    let l_spec = topology::real_eigenvalues(l.matrix())?;
    let lr_spec = topology::real_eigenvalues(&l.times_diag(r)?)?;
    let all_real_spectrum = l_spec.all_real && lr_spec.all_real;
    let mu_max = lr_spec.max_real();
    let alpha_max = t.alpha_max();
    let r_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let has_edges = !t.edges().is_empty();

    let (cond_iii, tau_bound) = if !all_real_spectrum {
        diagnostics.push("Laplacian spectrum is not real: closed-form conditions do not apply".into());
        (None, None)
    } else if has_edges && mu_max > 0.0 {
        let pc = check_parameter_conditions(params, mu_max)?;
        (Some(pc.cond_iii), Some(pc.tau_bound))
    } else {
        // No measurements: only the nu = 0 mode exists.
        (Some(true), None)
    };
    let tau_bound_topology_free = if has_edges {
        topology_free_tau_bound(params, alpha_max, r_max.max(1.0)).ok()
    } else {
        None
    };

    let cond_i = cond_i(params);
    let cond_ii = cond_ii(params);
    let analytic_verdict = cond_iii.map(|c3| {
        if connected && cond_i && cond_ii && c3 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        }
    });
    if let Some(av) = analytic_verdict {
        if av != spectral_verdict {
            diagnostics.push(format!("analytic verdict {av:?} disagrees with spectral verdict {spectral_verdict:?}"));
        }
    }
    let verdict = if all_real_spectrum { spectral_verdict } else { Verdict::NotCovered };

    let (xi, gamma) = match topology::left_null_vector(&l) {
        Ok(xi) if connected => {
            let g = harmonic_skew(&xi, r);
            (Some(xi.iter().copied().collect()), Some(g))
        }
        _ => (None, None),
    };

    Ok(StabilityReport {
        n: t.n(),
        connected,
        connectivity,
        multiplicity_of_one: lemma.multiplicity_of_one,
        spectral_margin: margin,
        margin_slack: 1.0 - margin,
        spectral_verdict,
        cond_i,
        cond_ii,
        cond_iii,
        tau_bound,
        tau_bound_topology_free,
        tau: params.tau(),
        mu_max,
        gershgorin_bound: topology::gershgorin_bound(&l),
        alpha_max,
        r_max,
        all_real_spectrum,
        analytic_verdict,
        verdict,
        xi,
        gamma,
        factorization_residual: lemma.factorization_residual,
        diagnostics,
    })
}
