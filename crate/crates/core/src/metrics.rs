//! Performance metrics over simulation traces. All offsets are taken against
//! the trace's reference node, so every metric is invariant under a common
//! shift of the clocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{RunStatus, Trace};

/// Half-open range of trace rows `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Self {
        Window { start, end }
    }

    /// Drops the first fifth of the rows as transient.
    pub fn steady_state(trace: &Trace) -> Self {
        Window { start: trace.rows() / 5, end: trace.rows() }
    }

    /// The last `len` rows.
    pub fn tail(trace: &Trace, len: usize) -> Self {
        Window { start: trace.rows().saturating_sub(len), end: trace.rows() }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, trace: &Trace) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidParameter(format!("empty window {}..{}", self.start, self.end)));
        }
        if self.end > trace.rows() {
            return Err(Error::InvalidParameter(format!(
                "window {}..{} exceeds the {} trace rows",
                self.start,
                self.end,
                trace.rows()
            )));
        }
        Ok(())
    }
}

fn clients(trace: &Trace) -> impl Iterator<Item = usize> + '_ {
    (0..trace.n).filter(move |i| *i != trace.reference)
}

/// RMS offset of the non-reference nodes to the reference over `window`.
pub fn mean_relative_deviation(trace: &Trace, window: Window) -> Result<f64> {
    if trace.n < 2 {
        return Err(Error::InvalidParameter("mean relative deviation needs at least two nodes".into()));
    }
    window.check(trace)?;
    let per_node: f64 = clients(trace)
        .map(|i| (window.start..window.end).map(|k| trace.offset(k, i).powi(2)).sum::<f64>() / window.len() as f64)
        .sum();
    Ok((per_node / (trace.n - 1) as f64).sqrt())
}

/// Nearest-rank `q`-th percentile of `|x_i - x_ref|` pooled over the
/// non-reference nodes and `window`. `q = 100` is the maximum.
pub fn confidence_interval(trace: &Trace, window: Window, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidParameter(format!("percentile must be in (0, 100], got {q}")));
    }
    window.check(trace)?;
    let mut pool: Vec<f64> =
        clients(trace).flat_map(|i| (window.start..window.end).map(move |k| trace.offset(k, i).abs())).collect();
    if pool.is_empty() {
        return Err(Error::InvalidParameter("no offset samples to rank".into()));
    }
    Ok(nearest_rank(&mut pool, q))
}

/// Nearest-rank percentile; sorts `pool` in place.
pub fn nearest_rank(pool: &mut [f64], q: f64) -> f64 {
    pool.sort_by(f64::total_cmp);
    let rank = ((q * pool.len() as f64) / 100.0).ceil() as usize;
    pool[rank.clamp(1, pool.len()) - 1]
}

/// Least-squares line `x_i(t) = r (t - t0) + x` per node, summarized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    /// Mean slope across nodes.
    pub r_hat: f64,
    /// Mean intercept at `t0` across nodes.
    pub x_hat: f64,
    pub slope_spread: f64,
    pub intercept_spread: f64,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
}

pub fn fit_synchronized_line(trace: &Trace, tail: Window) -> Result<LineFit> {
    tail.check(trace)?;
    if tail.len() < 2 {
        return Err(Error::InvalidParameter("line fit needs at least two rows".into()));
    }
    let m = tail.len() as f64;
    let dt: Vec<f64> = (tail.start..tail.end).map(|k| trace.times[k] - trace.t0).collect();
    let t_bar = dt.iter().sum::<f64>() / m;
    let stt: f64 = dt.iter().map(|t| (t - t_bar).powi(2)).sum();
    let mut slopes = Vec::with_capacity(trace.n);
    let mut intercepts = Vec::with_capacity(trace.n);
    for i in 0..trace.n {
        let xs: Vec<f64> = (tail.start..tail.end).map(|k| trace.x[k][i]).collect();
        // centre on the first sample to keep the sums small
        let x_ref = xs[0];
        let x_bar = xs.iter().map(|x| x - x_ref).sum::<f64>() / m;
        let stx: f64 = dt.iter().zip(&xs).map(|(t, x)| (t - t_bar) * (x - x_ref - x_bar)).sum();
        let slope = stx / stt;
        slopes.push(slope);
        intercepts.push(x_ref + x_bar - slope * t_bar);
    }
    let spread = |v: &[f64]| {
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(LineFit {
        r_hat: slopes.iter().sum::<f64>() / trace.n as f64,
        x_hat: intercepts.iter().sum::<f64>() / trace.n as f64,
        slope_spread: spread(&slopes),
        intercept_spread: spread(&intercepts),
        slopes,
        intercepts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    /// First row of the first run of `hold` rows below the threshold.
    pub first_step: Option<usize>,
}

/// Whether the inter-node spread `max_i x_i - min_i x_i` stays below
/// `threshold` for `hold` consecutive rows.
pub fn detect_convergence(trace: &Trace, threshold: f64, hold: usize) -> Convergence {
    let not = Convergence { converged: false, first_step: None };
    if trace.diverged() || !(threshold > 0.0) {
        return not;
    }
    let hold = hold.max(1);
    let mut run_start = None;
    for k in 0..trace.rows() {
        if trace.spread(k) < threshold {
            let start = *run_start.get_or_insert(k);
            if k + 1 - start >= hold {
                return Convergence { converged: true, first_step: Some(start) };
            }
        } else {
            run_start = None;
        }
    }
    not
}

/// Growth of the oscillation of `node`'s offset between two windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub early_peak: f64,
    pub late_peak: f64,
    /// `late_peak / early_peak`.
    pub growth_ratio: f64,
    /// Sign changes of the offset inside the late window.
    pub sign_changes: usize,
    pub growing: bool,
}

pub fn oscillation(trace: &Trace, node: usize, early: Window, late: Window) -> Result<Oscillation> {
    early.check(trace)?;
    late.check(trace)?;
    let peak = |w: Window| (w.start..w.end).map(|k| trace.offset(k, node).abs()).fold(0.0, f64::max);
    let early_peak = peak(early);
    let late_peak = peak(late);
    let signs: Vec<bool> =
        (late.start..late.end).map(|k| trace.offset(k, node)).filter(|v| *v != 0.0).map(|v| v > 0.0).collect();
    let sign_changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    let growth_ratio = late_peak / early_peak;
    Ok(Oscillation { early_peak, late_peak, growth_ratio, sign_changes, growing: growth_ratio > 1.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub sqrt_s_n: f64,
    pub ci99: f64,
    pub ci100: f64,
    pub converged: bool,
    pub first_converged_step: Option<usize>,
    pub empirical_r_star: f64,
    pub empirical_x_star: f64,
    pub line_intercept_spread: f64,
    pub window: Window,
    pub status: RunStatus,
}

/// Convergence spread threshold used by [`summarize`], seconds.
pub const DEFAULT_CONVERGENCE_THRESHOLD: f64 = 10e-6;
pub const DEFAULT_CONVERGENCE_HOLD: usize = 10;

/// Metrics over the steady-state window; the line fit uses the same window.
pub fn summarize(trace: &Trace) -> Result<MetricsSummary> {
    let window = Window::steady_state(trace);
    let window = if window.len() < 2 { Window::new(0, trace.rows()) } else { window };
    let conv = detect_convergence(trace, DEFAULT_CONVERGENCE_THRESHOLD, DEFAULT_CONVERGENCE_HOLD);
    let fit = fit_synchronized_line(trace, window)?;
    Ok(MetricsSummary {
        sqrt_s_n: mean_relative_deviation(trace, window)?,
        ci99: confidence_interval(trace, window, 99.0)?,
        ci100: confidence_interval(trace, window, 100.0)?,
        converged: conv.converged,
        first_converged_step: conv.first_step,
        empirical_r_star: fit.r_hat,
        empirical_x_star: fit.x_hat,
        line_intercept_spread: fit.intercept_spread,
        window,
        status: trace.status,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Trace with node 0 at zero and the other nodes at `offsets[k][i-1]`.
    fn synthetic(offsets: &[Vec<f64>]) -> Trace {
        let n = offsets[0].len() + 1;
        let times: Vec<f64> = (0..offsets.len()).map(|k| k as f64).collect();
        let x = offsets
            .iter()
            .map(|row| std::iter::once(0.0).chain(row.iter().copied()).collect())
            .collect();
        Trace {
            n,
            reference: 0,
            tau: 1.0,
            t0: 0.0,
            times,
            x,
            s: vec![vec![1.0; n]; offsets.len()],
            y: vec![vec![0.0; n]; offsets.len()],
            noise: vec![],
            status: RunStatus::Completed,
        }
    }

    fn all(tr: &Trace) -> Window {
        Window::new(0, tr.rows())
    }

    #[test]
    fn deviation_examples() {
        let zero = synthetic(&vec![vec![0.0, 0.0]; 5]);
        assert_eq!(mean_relative_deviation(&zero, all(&zero)).unwrap(), 0.0);
        let d = 3e-6;
        let one = synthetic(&vec![vec![d]; 5]);
        assert!((mean_relative_deviation(&one, all(&one)).unwrap() - d).abs() < 1e-18);
        let two = synthetic(&vec![vec![d, -d]; 5]);
        assert!((mean_relative_deviation(&two, all(&two)).unwrap() - d).abs() < 1e-18);
        assert!(mean_relative_deviation(&two, Window::new(3, 3)).is_err());
    }

    #[test]
    fn percentile_examples() {
        let d = 2e-6;
        let c = synthetic(&vec![vec![d]; 7]);
        for q in [1.0, 50.0, 99.0, 100.0] {
            assert_eq!(confidence_interval(&c, all(&c), q).unwrap(), d);
        }
        let rows: Vec<Vec<f64>> = (1..=100).rev().map(|v| vec![v as f64 / 1e6]).collect();
        let u = synthetic(&rows);
        assert_eq!(confidence_interval(&u, all(&u), 99.0).unwrap(), 99e-6);
        assert_eq!(confidence_interval(&u, all(&u), 100.0).unwrap(), 100e-6);
        assert!(confidence_interval(&u, all(&u), 0.0).is_err());
    }

    #[test]
    fn perfect_clock_line() {
        let mut tr = synthetic(&vec![vec![0.0]; 10]);
        for (row, t) in tr.x.iter_mut().zip(&tr.times) {
            row.fill(*t);
        }
        let fit = fit_synchronized_line(&tr, all(&tr)).unwrap();
        assert_eq!(fit.r_hat, 1.0);
        assert_eq!(fit.x_hat, 0.0);
    }

    #[test]
    fn convergence_examples() {
        let z = synthetic(&vec![vec![0.0]; 4]);
        assert_eq!(detect_convergence(&z, 1e-6, 3), Convergence { converged: true, first_step: Some(0) });
        let rows: Vec<Vec<f64>> = [1.0, 1e-3, 1e-7, 1e-8, 1e-9, 1e-9].iter().map(|v| vec![*v]).collect();
        let c = synthetic(&rows);
        assert_eq!(detect_convergence(&c, 1e-6, 3).first_step, Some(2));
        let mut d = c.clone();
        d.status = RunStatus::Diverged { step: 5 };
        assert!(!detect_convergence(&d, 1e-6, 3).converged);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[0.0, 1.0, 2.0, 3.0], &[9.0, 7.0, 3.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        // brute force: 1 - 6 sum d^2 / (n (n^2 - 1)) without ties
        let a = [0.0, 1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 3.0, 4.0, 1.0, 2.0];
        let d2: f64 = [(1.0, 5.0), (2.0, 3.0), (3.0, 4.0), (4.0, 1.0), (5.0, 2.0)]
            .iter()
            .map(|(x, y): &(f64, f64)| (x - y).powi(2))
            .sum();
        assert!((spearman(&a, &b) - (1.0 - 6.0 * d2 / (5.0 * 24.0))).abs() < 1e-15);
    }

    #[test]
    fn oscillation_growth() {
        let rows: Vec<Vec<f64>> = (0..40).map(|k| vec![(-1.1f64).powi(k)]).collect();
        let tr = synthetic(&rows);
        let o = oscillation(&tr, 1, Window::new(0, 10), Window::new(30, 40)).unwrap();
        assert!(o.growing && o.growth_ratio > 6.0);
        assert_eq!(o.sign_changes, 9);
    }

    proptest! {
        #[test]
        fn metrics_ignore_common_shift(
            offs in prop::collection::vec(prop::collection::vec(-1e-3f64..1e-3, 2), 5..30),
            shift in -1e3f64..1e3,
        ) {
            let tr = synthetic(&offs);
            let mut moved = tr.clone();
            for row in &mut moved.x {
                for v in row.iter_mut() {
                    *v += shift;
                }
            }
            let w = all(&tr);
            let a = mean_relative_deviation(&tr, w).unwrap();
            let b = mean_relative_deviation(&moved, w).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 + 1e-9 * a);
            let a = confidence_interval(&tr, w, 99.0).unwrap();
            let b = confidence_interval(&moved, w, 99.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn metrics_shrink_with_offsets(
            offs in prop::collection::vec(prop::collection::vec(-1e-3f64..1e-3, 3), 5..30),
            lambda in 0.01f64..=1.0,
        ) {
            let tr = synthetic(&offs);
            let scaled: Vec<Vec<f64>> = offs.iter().map(|r| r.iter().map(|v| v * lambda).collect()).collect();
            let sc = synthetic(&scaled);
            let w = all(&tr);
            prop_assert!(mean_relative_deviation(&sc, w).unwrap() <= mean_relative_deviation(&tr, w).unwrap() * (1.0 + 1e-12));
            for q in [50.0, 99.0, 100.0] {
                prop_assert!(confidence_interval(&sc, w, q).unwrap() <= confidence_interval(&tr, w, q).unwrap() * (1.0 + 1e-12));
            }
            prop_assert!(confidence_interval(&tr, w, 99.0).unwrap() <= confidence_interval(&tr, w, 100.0).unwrap());
        }
    }
}
