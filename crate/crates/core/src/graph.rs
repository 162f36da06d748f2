//! The polarization graph on `K M` vertices `(k, m)`: `(k, m) ~ (k', m')`
//! exactly when `m' - m ∈ A`, for every pair of blocks `k, k'`. Its adjacency
//! matrix is `J ⊗ circ(1_A)`, so the graph is `K|A|`-regular and its spectral
//! gap equals `1 - (M/|A|) ||A||_u` independently of `K`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::setgen::{fourier_bias, ModulationSet};

/// Largest vertex count for which [`spectral_gap`] uses a dense
/// eigendecomposition; beyond it the bias formula is used.
pub const DENSE_EIGEN_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    pub k: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationGraph {
    count: usize,
    dim: usize,
    set: ModulationSet,
}

pub fn build_graph(count: usize, dim: usize, set: &ModulationSet) -> Result<PolarizationGraph> {
    if count == 0 || dim == 0 {
        return Err(Error::invalid("need K >= 1 and M >= 1"));
    }
    if set.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: set.dim(),
        });
    }
    if set.is_empty() {
        return Err(Error::EmptyModulationSet);
    }
    Ok(PolarizationGraph {
        count,
        dim,
        set: set.clone(),
    })
}

impl PolarizationGraph {
    /// Number of vertex masks `K`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modulation_set(&self) -> &ModulationSet {
        &self.set
    }

    pub fn num_vertices(&self) -> usize {
        self.count * self.dim
    }

    pub fn degree(&self) -> usize {
        self.count * self.set.len()
    }

    pub fn index(&self, v: Vertex) -> usize {
        v.k * self.dim + v.m
    }

    pub fn vertex(&self, index: usize) -> Vertex {
        Vertex {
            k: index / self.dim,
            m: index % self.dim,
        }
    }

    pub fn neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let Vertex { m, .. } = self.vertex(index);
        (0..self.count).flat_map(move |kp| {
            self.set
                .elements()
                .iter()
                .map(move |&a| kp * self.dim + (m + a) % self.dim)
        })
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_vertices()).flat_map(move |i| self.neighbors(i).filter(move |&j| i < j).map(move |j| (i, j)))
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_vertices()).map(|i| self.neighbors(i).collect()).collect()
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.num_vertices();
        let mut adj = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in self.neighbors(i) {
                adj[(i, j)] = 1.0;
            }
        }
        adj
    }

    /// Edge list, one `k,m k',m'` line per undirected edge.
    pub fn edge_list_text(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            let (a, b) = (self.vertex(i), self.vertex(j));
            let _ = writeln!(out, "{},{} {},{}", a.k, a.m, b.k, b.m);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMethod {
    Eigendecomposition,
    BiasFormula,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub gap: f64,
    pub lambda_max: f64,
    pub second_magnitude: f64,
    pub method: GapMethod,
}

/// `(lambda_1 - max_{i != 1} |lambda_i|) / lambda_1` from a dense
/// eigendecomposition of the adjacency matrix.
pub fn spectral_gap_eigen(graph: &PolarizationGraph) -> Result<SpectralReport> {
    let adj = graph.adjacency_matrix();
    if adj.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adjacency matrix"));
    }
    let eig = SymmetricEigen::new(adj);
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let lambda_max = values[0];
    let second_magnitude = values[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(SpectralReport {
        gap: (lambda_max - second_magnitude) / lambda_max,
        lambda_max,
        second_magnitude,
        method: GapMethod::Eigendecomposition,
    })
}

/// The same quantity through the nontrivial eigenvalues `K M (F* 1_A)(m)`.
pub fn spectral_gap_bias(graph: &PolarizationGraph) -> Result<SpectralReport> {
    let lambda_max = graph.degree() as f64;
    // A nonempty set forces M >= 2, so the bias is defined.
    let bias = fourier_bias(graph.set.elements(), graph.dim())?;
    let second_magnitude = (graph.count * graph.dim) as f64 * bias;
    Ok(SpectralReport {
        gap: (lambda_max - second_magnitude) / lambda_max,
        lambda_max,
        second_magnitude,
        method: GapMethod::BiasFormula,
    })
}

/// Dense eigendecomposition up to [`DENSE_EIGEN_LIMIT`] vertices, bias
/// formula beyond.
pub fn spectral_gap(graph: &PolarizationGraph) -> Result<SpectralReport> {
    if graph.num_vertices() <= DENSE_EIGEN_LIMIT {
        spectral_gap_eigen(graph)
    } else {
        spectral_gap_bias(graph)
    }
}

/// Size of the largest connected component after deleting `removed`.
pub fn largest_component_after_removal(graph: &PolarizationGraph, removed: &[usize]) -> usize {
    let n = graph.num_vertices();
    let mut blocked = vec![false; n];
    for &v in removed {
        if v < n {
            blocked[v] = true;
        }
    }
    let mut seen = blocked.clone();
    let mut best = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            for w in graph.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        best = best.max(size);
    }
    best
}
