//! Undirected social graphs over choosers: Laplacian, normalized
//! adjacencies, Erdős–Rényi generation and the Gaussian graph prior.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const MAX_GENERATION_ATTEMPTS: usize = 1000;

/// Connected undirected simple graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    n: usize,
    /// Edges as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbour lists.
    neighbors: Vec<Vec<usize>>,
}

impl SocialGraph {
    /// Builds a graph from an edge list. Duplicate and reversed edges are
    /// merged; self-loops and disconnected graphs are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let g = Self::build(n, edges)?;
        if !g.is_connected() {
            return Err(Error::Graph(format!("graph on {n} nodes is not connected")));
        }
        Ok(g)
    }

    fn build(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::Graph(format!("self-loop on node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self { n, edges, neighbors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n
    }

    /// Returns the graph with nodes relabelled so that old node `i` becomes
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Argument("permutation length differs from node count".into()));
        }
        Self::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }

    /// Dense `L = D - A`.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            l[[i, j]] = -1.0;
            l[[j, i]] = -1.0;
            l[[i, i]] += 1.0;
            l[[j, j]] += 1.0;
        }
        l
    }

    /// `L x` without forming `L`.
    pub fn laplacian_apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |i| {
            let nb = &self.neighbors[i];
            nb.len() as f64 * x[i] - nb.iter().map(|&j| x[j]).sum::<f64>()
        })
    }

    /// `sum over edges (x_i - x_j)^2`, equal to `x^T L x`.
    pub fn edge_quadratic_form(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.edges.iter().map(|&(i, j)| (x[i] - x[j]).powi(2)).sum()
    }

    /// Symmetric degree normalization of the adjacency matrix.
    ///
    /// Without self-loops this is `D^{-1/2} A D^{-1/2}`, the propagation
    /// operator. With self-loops it is `(D+2I)^{-1/2} (A+I) (D+2I)^{-1/2}`,
    /// the GCN operator.
    pub fn normalized_operator(&self, with_self_loops: bool) -> SparseSymmetric {
        let scale: Vec<f64> = self
            .neighbors
            .iter()
            .map(|nb| {
                let d = nb.len() as f64 + if with_self_loops { 2.0 } else { 0.0 };
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> =
                    self.neighbors[i].iter().map(|&j| (j, scale[i] * scale[j])).collect();
                if with_self_loops {
                    let pos = row.partition_point(|&(j, _)| j < i);
                    row.insert(pos, (i, scale[i] * scale[i]));
                }
                row
            })
            .collect();
        SparseSymmetric { n: self.n, rows }
    }

    /// Dense form of [`normalized_operator`](Self::normalized_operator).
    pub fn normalized_adjacency(&self, with_self_loops: bool) -> Array2<f64> {
        self.normalized_operator(with_self_loops).to_dense()
    }

    /// Partial correlation between the prior draws at nodes `i` and `j`
    /// given all other nodes: `A_ij / sqrt(d_i d_j)`, independent of the
    /// prior strength.
    pub fn partial_correlation(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(Error::Argument(format!("partial correlation of node {i} with itself")));
        }
        if i >= self.n || j >= self.n {
            return Err(Error::Argument(format!("node ({i}, {j}) out of range")));
        }
        if !self.has_edge(i, j) {
            return Ok(0.0);
        }
        Ok(1.0 / ((self.degree(i) * self.degree(j)) as f64).sqrt())
    }

    /// Fraction of possible pairs between `s1` and `s2` joined by an edge.
    /// Pairs are unordered, exclude `a == b`, and are counted once.
    pub fn group_edge_density(&self, s1: &[usize], s2: &[usize]) -> Result<f64> {
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::Argument("group edge density of an empty node set".into()));
        }
        let a: BTreeSet<usize> = s1.iter().copied().collect();
        let b: BTreeSet<usize> = s2.iter().copied().collect();
        let mut pairs = BTreeSet::new();
        for &x in &a {
            for &y in &b {
                if x != y {
                    pairs.insert((x.min(y), x.max(y)));
                }
            }
        }
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let hits = pairs.iter().filter(|&&(x, y)| self.has_edge(x, y)).count();
        Ok(hits as f64 / pairs.len() as f64)
    }
}

/// Dense `alpha^T L alpha`.
pub fn quadratic_form(laplacian: &Array2<f64>, alpha: ArrayView1<'_, f64>) -> Result<f64> {
    if laplacian.nrows() != alpha.len() || laplacian.ncols() != alpha.len() {
        return Err(Error::Argument(format!(
            "{}x{} matrix against vector of length {}",
            laplacian.nrows(),
            laplacian.ncols(),
            alpha.len()
        )));
    }
    Ok(alpha.dot(&laplacian.dot(&alpha)))
}

/// Row-stored sparse symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSymmetric {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[[i, j]] = v;
            }
        }
        m
    }

    /// `self * x` for an `n x c` matrix.
    pub fn mul(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "sparse product dimension mismatch");
        let mut out = Array2::zeros((self.n, x.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut o = out.row_mut(i);
            for &(j, v) in row {
                o.scaled_add(v, &x.row(j));
            }
        }
        out
    }
}

/// Erdős–Rényi `G(n, p)` conditioned on connectivity: whole graphs are
/// redrawn from the same seeded stream until one is connected.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<SocialGraph> {
    if n < 2 {
        return Err(Error::Argument(format!("Erdős–Rényi graph needs n >= 2, got {n}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Argument(format!("edge probability {p} not in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = SocialGraph::build(n, edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Generation(format!(
        "no connected G({n}, {p}) after {MAX_GENERATION_ATTEMPTS} attempts"
    )))
}

/// Two-block planted partition: nodes `0..sizes[0]` form community 0, the
/// rest community 1. Redrawn until connected.
pub fn planted_partition(sizes: [usize; 2], p_in: f64, p_out: f64, seed: u64) -> Result<SocialGraph> {
    let n = sizes[0] + sizes[1];
    if n < 2 {
        return Err(Error::Argument("planted partition needs at least 2 nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let same = (i < sizes[0]) == (j < sizes[0]);
                if rng.gen::<f64>() < if same { p_in } else { p_out } {
                    edges.push((i, j));
                }
            }
        }
        let g = SocialGraph::build(n, edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Generation(format!(
        "no connected planted partition after {MAX_GENERATION_ATTEMPTS} attempts"
    )))
}

/// Random geometric graph: `n` uniform points in the unit square, joined
/// when closer than `radius`. Redrawn until connected.
pub fn random_geometric(n: usize, radius: f64, seed: u64) -> Result<SocialGraph> {
    if n < 2 {
        return Err(Error::Argument(format!("geometric graph needs n >= 2, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Argument(format!("radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                if dx * dx + dy * dy < radius * radius {
                    edges.push((i, j));
                }
            }
        }
        let g = SocialGraph::build(n, edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Generation(format!(
        "no connected geometric graph (n {n}, radius {radius}) after {MAX_GENERATION_ATTEMPTS} attempts"
    )))
}

/// Radius giving expected degree `mean_degree` for `n` points, ignoring
/// boundary effects.
pub fn geometric_radius(n: usize, mean_degree: f64) -> f64 {
    (mean_degree / ((n as f64 - 1.0) * std::f64::consts::PI)).sqrt()
}

/// Eigendecomposition of `L` restricted to the nonzero spectrum.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    /// Nonzero eigenvalues.
    pub values: Vec<f64>,
    /// Matching unit eigenvectors as columns (`n x values.len()`).
    pub vectors: Array2<f64>,
}

impl LaplacianSpectrum {
    pub fn new(g: &SocialGraph) -> Self {
        let n = g.n();
        let l = g.laplacian();
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| l[[i, j]]));
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let cutoff = 1e-9 * max.max(1.0);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
        let values = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = Array2::from_shape_fn((n, keep.len()), |(r, c)| eig.eigenvectors[(r, keep[c])]);
        Self { values, vectors }
    }

    /// `L^+` assembled from the nonzero eigenpairs.
    pub fn pseudoinverse(&self) -> Array2<f64> {
        let n = self.vectors.nrows();
        let mut out = Array2::zeros((n, n));
        for (c, &mu) in self.values.iter().enumerate() {
            let q = self.vectors.column(c);
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] += q[i] * q[j] / mu;
                }
            }
        }
        out
    }
}

/// Per-chooser utilities drawn from the graph prior.
#[derive(Debug, Clone)]
pub struct PriorSample {
    /// `n x k`, one column per item.
    pub utilities: Array2<f64>,
    pub lambda: f64,
}

/// Draws `k` independent columns from the degenerate Gaussian with
/// covariance `L^+ / lambda`, supported on vectors summing to zero.
pub fn sample_prior_utilities(g: &SocialGraph, lambda: f64, k: usize, seed: u64) -> Result<PriorSample> {
    let spectrum = LaplacianSpectrum::new(g);
    sample_prior_with_spectrum(&spectrum, lambda, k, seed)
}

pub fn sample_prior_with_spectrum(
    spectrum: &LaplacianSpectrum,
    lambda: f64,
    k: usize,
    seed: u64,
) -> Result<PriorSample> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!("prior strength must be positive, got {lambda}")));
    }
    if k == 0 {
        return Err(Error::Argument("need at least one item".into()));
    }
    let n = spectrum.vectors.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utilities = Array2::zeros((n, k));
    for item in 0..k {
        let mut col = utilities.column_mut(item);
        for (c, &mu) in spectrum.values.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            col.scaled_add(z / (lambda * mu).sqrt(), &spectrum.vectors.column(c));
        }
        let mean = col.sum() / n as f64;
        col -= mean;
    }
    Ok(PriorSample { utilities, lambda })
}

/// Log-density of the degenerate Gaussian `N(0, L^+ / lambda)` on the
/// subspace orthogonal to the all-ones vector, evaluated at the projection
/// of `alpha`. Built from the eigendecomposition of the covariance.
pub fn prior_log_density(spectrum: &LaplacianSpectrum, lambda: f64, alpha: ArrayView1<'_, f64>) -> f64 {
    let rank = spectrum.values.len() as f64;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for (c, &mu) in spectrum.values.iter().enumerate() {
        let variance = 1.0 / (lambda * mu);
        let coord = spectrum.vectors.column(c).dot(&alpha);
        quad += coord * coord / variance;
        log_det += variance.ln();
    }
    -0.5 * (rank * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// Reads `edges.csv` (two identifier columns with a header row) into a
/// graph over the given chooser identifiers.
pub fn load_edges(path: &Path, chooser_ids: &[String]) -> Result<SocialGraph> {
    let named = read_edge_list(path)?;
    let index: HashMap<&str, usize> = chooser_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let p = path.display().to_string();
    let mut edges = Vec::with_capacity(named.len());
    for (row, (a, b)) in named.iter().enumerate() {
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::schema(&p, row + 1, format!("unknown chooser {id:?}")))
        };
        edges.push((lookup(a)?, lookup(b)?));
    }
    SocialGraph::new(chooser_ids.len(), edges)
}

/// Raw identifier pairs from `edges.csv`; self-loop rows are rejected.
pub fn read_edge_list(path: &Path) -> Result<Vec<(String, String)>> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::schema(&p, i + 1, format!("expected 2 columns, found {}", rec.len())));
        }
        if rec[0] == rec[1] {
            return Err(Error::schema(&p, i + 1, format!("self-loop on {:?}", &rec[0])));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

pub fn save_edges(g: &SocialGraph, chooser_ids: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "target"])?;
    for &(i, j) in g.edges() {
        w.write_record([&chooser_ids[i], &chooser_ids[j]])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> SocialGraph {
        SocialGraph::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    fn triangle() -> SocialGraph {
        SocialGraph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn laplacian_small() {
        let g = SocialGraph::new(2, [(0, 1)]).unwrap();
        assert_eq!(g.laplacian(), array![[1.0, -1.0], [-1.0, 1.0]]);
        assert_eq!(
            path3().laplacian(),
            array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
        );
        let l = triangle().laplacian();
        assert!(l.sum_axis(ndarray::Axis(1)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_forms() {
        let g = path3();
        let l = g.laplacian();
        assert_eq!(quadratic_form(&l, array![3.0, 3.0, 3.0].view()).unwrap(), 0.0);
        assert_eq!(quadratic_form(&l, array![1.0, 2.0, 4.0].view()).unwrap(), 5.0);
        assert_eq!(g.edge_quadratic_form(array![1.0, 2.0, 4.0].view()), 5.0);
        assert!(quadratic_form(&l, array![1.0].view()).is_err());
        assert_eq!(g.laplacian_apply(array![1.0, 2.0, 4.0].view()), l.dot(&array![1.0, 2.0, 4.0]));
    }

    #[test]
    fn normalized_single_edge() {
        let g = SocialGraph::new(2, [(0, 1)]).unwrap();
        let a = g.normalized_adjacency(true);
        for v in a.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(g.normalized_adjacency(false), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(SocialGraph::new(2, [(1, 1)]), Err(Error::Graph(_))));
        assert!(matches!(SocialGraph::new(3, [(0, 1)]), Err(Error::Graph(_))));
        let g = SocialGraph::new(2, [(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn er_forced_and_deterministic() {
        let g = erdos_renyi(2, 1.0, 5).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(erdos_renyi(100, 0.1, 9).unwrap(), erdos_renyi(100, 0.1, 9).unwrap());
        assert!(erdos_renyi(1, 0.5, 0).is_err());
        assert!(erdos_renyi(5, 0.0, 0).is_err());
        assert!(matches!(erdos_renyi(50, 0.001, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn partial_correlations() {
        assert_eq!(triangle().partial_correlation(0, 1).unwrap(), 0.5);
        assert_eq!(path3().partial_correlation(0, 2).unwrap(), 0.0);
        let star = SocialGraph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        assert!((star.partial_correlation(0, 2).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(star.partial_correlation(2, 0).unwrap(), star.partial_correlation(0, 2).unwrap());
        assert!(matches!(star.partial_correlation(1, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn densities() {
        assert_eq!(triangle().group_edge_density(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(path3().group_edge_density(&[0], &[2]).unwrap(), 0.0);
        let g = erdos_renyi(30, 0.2, 1).unwrap();
        let all: Vec<usize> = (0..30).collect();
        let expected = 2.0 * g.n_edges() as f64 / (30.0 * 29.0);
        assert!((g.group_edge_density(&all, &all).unwrap() - expected).abs() < 1e-15);
        assert!(g.group_edge_density(&[], &all).is_err());
    }

    #[test]
    fn prior_columns_sum_to_zero_and_scale() {
        let g = erdos_renyi(12, 0.4, 2).unwrap();
        let a = sample_prior_utilities(&g, 1.0, 4, 7).unwrap();
        for col in a.utilities.columns() {
            assert!(col.sum().abs() < 1e-9);
        }
        let b = sample_prior_utilities(&g, 100.0, 4, 7).unwrap();
        for (x, y) in a.utilities.iter().zip(b.utilities.iter()) {
            assert!((y - x / 10.0).abs() < 1e-12);
        }
        assert!(sample_prior_utilities(&g, 0.0, 4, 7).is_err());
    }

    #[test]
    fn geometric_graph_is_connected_and_seeded() {
        let r = geometric_radius(60, 8.0);
        let a = random_geometric(60, r, 4).unwrap();
        assert!(a.is_connected());
        assert_eq!(a, random_geometric(60, r, 4).unwrap());
        let mean = 2.0 * a.n_edges() as f64 / 60.0;
        assert!(mean > 4.0 && mean < 10.0, "{mean}");
        assert!(random_geometric(1, r, 0).is_err());
    }
}
