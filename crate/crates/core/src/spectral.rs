//! Dense spectral helpers for small graphs given as adjacency lists over
//! local indices `0..n`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

/// Connected components, each sorted, ordered by their smallest vertex.
pub fn components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = vec![start];
        label[start] = id;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = id;
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// The largest component; ties go to the one containing the smallest vertex.
pub fn largest_component(adj: &[Vec<usize>]) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for comp in components(adj) {
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Eigenpairs of `L = I - D^{-1/2} A D^{-1/2}` sorted by ascending eigenvalue.
/// Isolated vertices get `D^{-1/2} = 0`.
#[derive(Debug, Clone)]
pub struct NormalizedSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl NormalizedSpectrum {
    pub fn of(adj: &[Vec<usize>]) -> Self {
        let n = adj.len();
        let inv_sqrt: Vec<f64> = adj
            .iter()
            .map(|nb| if nb.is_empty() { 0.0 } else { 1.0 / (nb.len() as f64).sqrt() })
            .collect();
        let mut lap = DMatrix::<f64>::identity(n, n);
        for (i, nb) in adj.iter().enumerate() {
            for &j in nb {
                lap[(i, j)] -= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        let eig = SymmetricEigen::new(lap);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    /// `1 - max_{i != 1} |lambda_i(D^{-1/2} A D^{-1/2})|`: the normalized
    /// adjacency eigenvalues are `1 - mu` for Laplacian eigenvalues `mu`, and
    /// the trivial one is the smallest `mu`.
    pub fn gap(&self) -> f64 {
        let second = self.values[1..]
            .iter()
            .map(|mu| (1.0 - mu).abs())
            .fold(0.0, f64::max);
        1.0 - second
    }

    /// `1 - lambda_2(D^{-1/2} A D^{-1/2})`, the second-smallest Laplacian
    /// eigenvalue. Unlike [`NormalizedSpectrum::gap`] it ignores the bottom of
    /// the spectrum, so bipartite graphs are not penalized.
    pub fn fiedler_value(&self) -> f64 {
        self.values.get(1).copied().unwrap_or(0.0)
    }
}
