//! Weighted directed measurement graphs and their Laplacians.
//!
//! An edge `i -> j` with weight `alpha_ij > 0` means node `i` measures its
//! offset to node `j`. Leaders have no outgoing edges. Node 0 is the leader
//! of every generated reference topology.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    edges: Vec<Edge>,
    leaders: Vec<usize>,
    explicit_leaders: bool,
}

impl Topology {
    /// Builds a validated topology. With `leaders = None` every node without
    /// outgoing edges is a leader.
    pub fn new(n: usize, edges: Vec<Edge>, leaders: Option<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("empty node set".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(Error::InvalidTopology(format!("edge {}->{} out of range for {n} nodes", e.from, e.to)));
            }
            if e.from == e.to {
                return Err(Error::InvalidTopology(format!("self-loop on node {}", e.from)));
            }
            if !(e.alpha.is_finite() && e.alpha > 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "edge {}->{} needs a positive weight, got {}",
                    e.from, e.to, e.alpha
                )));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::InvalidTopology(format!("duplicate edge {}->{}", e.from, e.to)));
            }
        }
        let explicit_leaders = leaders.is_some();
        let leaders = match leaders {
            Some(mut ls) => {
                ls.sort_unstable();
                ls.dedup();
                for &l in &ls {
                    if l >= n {
                        return Err(Error::InvalidTopology(format!("leader {l} out of range")));
                    }
                    if edges.iter().any(|e| e.from == l) {
                        return Err(Error::InvalidTopology(format!("leader {l} has outgoing edges")));
                    }
                }
                ls
            }
            None => (0..n).filter(|&i| !edges.iter().any(|e| e.from == i)).collect(),
        };
        Ok(Self { n, edges, leaders, explicit_leaders })
    }

    /// Unweighted (alpha = 1) topology from an edge list.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)], leaders: Option<Vec<usize>>) -> Result<Self> {
        let edges = pairs.iter().map(|&(from, to)| Edge { from, to, alpha: 1.0 }).collect();
        Self::new(n, edges, leaders)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn leaders(&self) -> &[usize] {
        &self.leaders
    }

    pub fn is_leader(&self, i: usize) -> bool {
        self.leaders.binary_search(&i).is_ok()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.from == i).count()
    }

    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == i)
    }

    /// Node offsets are reported against: the first leader, or node 0.
    pub fn reference_node(&self) -> usize {
        self.leaders.first().copied().unwrap_or(0)
    }

    /// Same nodes and leader declaration, different edges.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        let leaders = self.explicit_leaders.then(|| self.leaders.clone());
        Self::new(self.n, edges, leaders)
    }

    /// Largest diagonal weight `max_i sum_j alpha_ij`.
    pub fn alpha_max(&self) -> f64 {
        (0..self.n)
            .map(|i| self.out_edges(i).map(|e| e.alpha).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Directed-graph notion of connectivity: nodes every other node can
    /// reach by following measurement edges.
    pub fn roots(&self) -> Vec<usize> {
        let reach = self.reachability();
        (0..self.n).filter(|&r| (0..self.n).all(|i| reach[i][r])).collect()
    }

    fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.n;
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for e in &self.edges {
            reach[e.from][e.to] = true;
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        reach
    }

    pub fn connectivity(&self) -> Result<Connectivity> {
        let roots = self.roots();
        let l = build_laplacian(self);
        let spec = real_eigenvalues(l.matrix())?;
        let tol = 1e-9 * linalg::inf_norm(l.matrix()).max(1.0);
        let zeros = spec.values.iter().filter(|z| z.norm() <= tol).count();
        Ok(Connectivity { rooted_spanning_tree: !roots.is_empty(), simple_zero_eigenvalue: zeros == 1, roots })
    }
}

/// Both readings of "connected": a spanning tree rooted at some node set,
/// and a simple zero eigenvalue of the Laplacian. They coincide in exact
/// arithmetic; both are reported so a disagreement is visible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connectivity {
    pub rooted_spanning_tree: bool,
    pub simple_zero_eigenvalue: bool,
    pub roots: Vec<usize>,
}

impl Connectivity {
    pub fn is_connected(&self) -> bool {
        self.rooted_spanning_tree && self.simple_zero_eigenvalue
    }

    pub fn describe_failure(&self) -> Option<String> {
        match (self.rooted_spanning_tree, self.simple_zero_eigenvalue) {
            (true, true) => None,
            (false, false) => Some("no rooted spanning tree and zero eigenvalue of L is not simple".into()),
            (false, true) => Some("no rooted spanning tree".into()),
            (true, false) => Some("zero eigenvalue of L is not simple".into()),
        }
    }
}

/// Dense graph Laplacian: `L_ii = sum_j alpha_ij`, `L_ij = -alpha_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix(DMatrix<f64>);

impl LaplacianMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// `L R` for a diagonal of skews.
    pub fn times_diag(&self, r: &[f64]) -> Result<DMatrix<f64>> {
        if r.len() != self.n() {
            return Err(Error::Dimension(format!("{} skews for {} nodes", r.len(), self.n())));
        }
        Ok(DMatrix::from_fn(self.n(), self.n(), |i, j| self.0[(i, j)] * r[j]))
    }
}

pub fn build_laplacian(t: &Topology) -> LaplacianMatrix {
    let mut m = DMatrix::zeros(t.n, t.n);
    for e in &t.edges {
        m[(e.from, e.to)] -= e.alpha;
        m[(e.from, e.from)] += e.alpha;
    }
    LaplacianMatrix(m)
}

/// `alpha_ij = c / |N_i|` on every edge of a non-leader node.
pub fn default_weights(t: &Topology, c: f64) -> Result<Topology> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("commit factor c must be > 0, got {c}")));
    }
    for i in 0..t.n {
        if t.out_degree(i) == 0 && !t.is_leader(i) {
            return Err(Error::Config(format!("node {i} has no neighbors and is not a declared leader")));
        }
    }
    let edges = t
        .edges
        .iter()
        .map(|e| Edge { alpha: c / t.out_degree(e.from) as f64, ..*e })
        .collect();
    t.with_edges(edges)
}

/// Leader 0 with `n_clients` clients each measuring only the leader.
pub fn make_star(n_clients: usize) -> Topology {
    let pairs: Vec<_> = (1..=n_clients).map(|i| (i, 0)).collect();
    Topology::from_pairs(n_clients + 1, &pairs, Some(vec![0])).expect("star is valid")
}

/// Leader 0 and two clients that measure the leader and each other.
pub fn make_two_client_loop() -> Topology {
    Topology::from_pairs(3, &[(1, 0), (1, 2), (2, 0), (2, 1)], Some(vec![0])).expect("loop is valid")
}

/// `n` nodes where node `i` measures node `i - 1`.
pub fn make_chain(n: usize) -> Topology {
    let pairs: Vec<_> = (1..n).map(|i| (i, i - 1)).collect();
    Topology::from_pairs(n.max(1), &pairs, Some(vec![0])).expect("chain is valid")
}

/// Leader 0 plus `n_clients` clients on a ring. Every client measures the
/// leader and, bidirectionally, the `k` nearest clients on each side.
pub fn make_wheel(n_clients: usize, k: usize) -> Result<Topology> {
    if n_clients == 0 || 2 * k > n_clients - 1 {
        return Err(Error::InvalidTopology(format!(
            "wheel with {n_clients} clients needs 0 <= K <= {}, got K = {k}",
            n_clients.saturating_sub(1) / 2
        )));
    }
    let mut pairs = Vec::new();
    for c in 0..n_clients {
        pairs.push((c + 1, 0));
        for d in 1..=k {
            for nb in [(c + d) % n_clients, (c + n_clients - d) % n_clients] {
                pairs.push((c + 1, nb + 1));
            }
        }
    }
    Topology::from_pairs(n_clients + 1, &pairs, Some(vec![0]))
}

/// Left eigenvector of the zero eigenvalue, normalized to sum 1.
pub fn left_null_vector(l: &LaplacianMatrix) -> Result<DVector<f64>> {
    let n = l.n();
    let m = l.matrix();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("requested U");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let scale = linalg::inf_norm(m).max(1.0);
    let second = svd.singular_values[order[1]];
    if second <= 1e-9 * scale {
        return Err(Error::Disconnected("zero eigenvalue of the Laplacian is not simple".into()));
    }
    let mut xi: DVector<f64> = u.column(order[0]).into_owned();
    let total = xi.sum();
    if total.abs() < 1e-12 {
        return Err(Error::Disconnected("left null vector cannot be normalized".into()));
    }
    xi /= total;
    // One least-squares refinement of [L^T; 1^T] xi = [0; 1].
    let mut aug = DMatrix::zeros(n + 1, n);
    aug.view_mut((0, 0), (n, n)).copy_from(&m.transpose());
    aug.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let resid = &rhs - &aug * &xi;
    if let Ok(delta) = aug.clone().svd(true, true).solve(&resid, 1e-14) {
        xi += delta;
    }
    Ok(xi)
}

/// Gershgorin bound on the Laplacian spectrum: `2 max_i L_ii`.
pub fn gershgorin_bound(l: &LaplacianMatrix) -> f64 {
    2.0 * l.matrix().diagonal().iter().copied().fold(0.0, f64::max)
}

/// Full spectrum of a dense real matrix with a realness flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Sorted by decreasing real part.
    pub values: Vec<Complex64>,
    pub all_real: bool,
    /// Imaginary-part tolerance used for `all_real`.
    pub tolerance: f64,
}

impl Spectrum {
    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn max_real(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn real_eigenvalues(m: &DMatrix<f64>) -> Result<Spectrum> {
    let values = linalg::eigenvalues(m)?;
    let tolerance = 1e-9 * linalg::inf_norm(m);
    let all_real = values.iter().all(|z| z.im.abs() <= tolerance);
    Ok(Spectrum { values, all_real, tolerance })
}

/// Random members of the real-spectrum graph families: directed trees,
/// symmetric graphs and symmetric graphs with a leader.
pub mod families {
    use super::*;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Family {
        Tree,
        Symmetric,
        SymmetricWithLeader,
    }

    impl Family {
        pub const ALL: [Family; 3] = [Family::Tree, Family::Symmetric, Family::SymmetricWithLeader];
    }

    fn weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        rng.gen_range(0.1..1.0)
    }

    pub fn random<R: Rng + ?Sized>(family: Family, n: usize, rng: &mut R) -> Topology {
        match family {
            Family::Tree => random_tree(n, rng),
            Family::Symmetric => random_symmetric(n, rng),
            Family::SymmetricWithLeader => random_symmetric_with_leader(n, rng),
        }
    }

    /// Every node `i > 0` measures one earlier node; node 0 is the leader.
    pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Topology {
        let edges = (1..n)
            .map(|i| Edge { from: i, to: rng.gen_range(0..i), alpha: weight(rng) })
            .collect();
        Topology::new(n, edges, Some(vec![0])).expect("tree is valid")
    }

    /// Connected undirected graph with `alpha_ij = alpha_ji`.
    pub fn random_symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Topology {
        let mut und = BTreeSet::new();
        for i in 1..n {
            let j = rng.gen_range(0..i);
            und.insert((j, i));
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.3) {
                    und.insert((i, j));
                }
            }
        }
        let mut edges = Vec::new();
        for (i, j) in und {
            let a = weight(rng);
            edges.push(Edge { from: i, to: j, alpha: a });
            edges.push(Edge { from: j, to: i, alpha: a });
        }
        Topology::new(n, edges, None).expect("symmetric graph is valid")
    }

    /// Leader 0; clients form a connected symmetric graph and at least one
    /// client measures the leader.
    pub fn random_symmetric_with_leader<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Topology {
        if n < 2 {
            return Topology::new(1, Vec::new(), Some(vec![0])).expect("single node");
        }
        let clients = random_symmetric(n - 1, rng);
        let mut edges: Vec<Edge> =
            clients.edges().iter().map(|e| Edge { from: e.from + 1, to: e.to + 1, alpha: e.alpha }).collect();
        let first = rng.gen_range(1..n);
        for c in 1..n {
            if c == first || rng.gen_bool(0.4) {
                edges.push(Edge { from: c, to: 0, alpha: weight(rng) });
            }
        }
        Topology::new(n, edges, Some(vec![0])).expect("symmetric-with-leader graph is valid")
    }
}
