//! Polarization-based reconstruction.
//!
//! Pipeline: relative phases `w_ij ≈ conj(<x, phi_i>) <x, phi_j>` from the
//! three edge intensities of each edge, reliability pruning (drop both
//! endpoints of the weakest edge, repeatedly), connectivity pruning (spectral
//! sweep cuts until the second normalized Laplacian eigenvalue reaches
//! `tau`), angular synchronization on the connection Laplacian, and a
//! least-squares solve for `x` from the phased vertex magnitudes.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{build_graph, PolarizationGraph};
use crate::masks::{cube_root, MaskEnsemble};
use crate::measure::{EdgeTuple, MeasurementSet, SignalInstance};
use crate::spectral::{components, largest_component, NormalizedSpectrum};

/// Synchronization coordinates below this modulus get phase 1 and a flag.
pub const PHASE_FLOOR: f64 = 1e-12;

/// Relative singular-value threshold for the least-squares rank test.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub i: usize,
    pub j: usize,
    /// Weight oriented from `i` to `j`; the reverse orientation is its
    /// conjugate.
    pub w: Complex64,
}

/// A graph on vertices `0..n` with Hermitian edge weights, nonnegative vertex
/// magnitudes and a set of surviving vertices.
#[derive(Debug, Clone)]
pub struct WeightedPolarizationGraph {
    edges: Vec<WeightedEdge>,
    incident: Vec<Vec<usize>>,
    alive: Vec<bool>,
    magnitudes: Vec<f64>,
}

impl WeightedPolarizationGraph {
    /// Builds from oriented estimates `(i, j, w_ij)`. Repeated estimates of
    /// one unordered pair are combined by Hermitian averaging.
    pub fn from_estimates(
        magnitudes: Vec<f64>,
        estimates: impl IntoIterator<Item = (usize, usize, Complex64)>,
    ) -> Result<Self> {
        let n = magnitudes.len();
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("vertex magnitudes must be finite and nonnegative"));
        }
        let mut slots: HashMap<(usize, usize), usize> = HashMap::new();
        let mut sums: Vec<(usize, usize, Complex64, u32)> = Vec::new();
        for (i, j, w) in estimates {
            if i >= n || j >= n || i == j {
                return Err(Error::invalid(format!("bad edge ({i}, {j}) on {n} vertices")));
            }
            if !w.re.is_finite() || !w.im.is_finite() {
                return Err(Error::NonFinite("edge weight"));
            }
            let (lo, hi, w) = if i < j { (i, j, w) } else { (j, i, w.conj()) };
            let slot = *slots.entry((lo, hi)).or_insert_with(|| {
                sums.push((lo, hi, Complex64::new(0.0, 0.0), 0));
                sums.len() - 1
            });
            sums[slot].2 += w;
            sums[slot].3 += 1;
        }
        sums.sort_by_key(|s| (s.0, s.1));
        let edges: Vec<WeightedEdge> = sums
            .into_iter()
            .map(|(i, j, sum, count)| WeightedEdge { i, j, w: sum / count as f64 })
            .collect();
        let mut incident = vec![Vec::new(); n];
        for (id, e) in edges.iter().enumerate() {
            incident[e.i].push(id);
            incident[e.j].push(id);
        }
        Ok(Self {
            edges,
            incident,
            alive: vec![true; n],
            magnitudes,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.alive.len()
    }

    pub fn is_alive(&self, v: usize) -> bool {
        self.alive[v]
    }

    pub fn alive_vertices(&self) -> Vec<usize> {
        (0..self.alive.len()).filter(|&v| self.alive[v]).collect()
    }

    pub fn num_alive(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn magnitude(&self, v: usize) -> f64 {
        self.magnitudes[v]
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// `w_ij` for an edge in either orientation, alive or not.
    pub fn weight(&self, i: usize, j: usize) -> Option<Complex64> {
        self.incident.get(i)?.iter().find_map(|&id| {
            let e = self.edges[id];
            if e.i == i && e.j == j {
                Some(e.w)
            } else if e.i == j && e.j == i {
                Some(e.w.conj())
            } else {
                None
            }
        })
    }

    /// Edges with both endpoints alive.
    pub fn alive_edges(&self) -> impl Iterator<Item = &WeightedEdge> + '_ {
        self.edges.iter().filter(|e| self.alive[e.i] && self.alive[e.j])
    }

    pub fn remove_vertex(&mut self, v: usize) {
        self.alive[v] = false;
    }

    /// Adjacency lists over the positions of `vertices`.
    fn local_adjacency(&self, vertices: &[usize]) -> Vec<Vec<usize>> {
        let mut pos = vec![usize::MAX; self.alive.len()];
        for (p, &v) in vertices.iter().enumerate() {
            pos[v] = p;
        }
        vertices
            .iter()
            .map(|&v| {
                self.incident[v]
                    .iter()
                    .map(|&id| {
                        let e = self.edges[id];
                        if e.i == v { e.j } else { e.i }
                    })
                    .filter(|&w| self.alive[w] && pos[w] != usize::MAX)
                    .map(|w| pos[w])
                    .collect()
            })
            .collect()
    }

    /// Connected components of the surviving subgraph, as global indices.
    pub fn alive_components(&self) -> Vec<Vec<usize>> {
        let verts = self.alive_vertices();
        components(&self.local_adjacency(&verts))
            .into_iter()
            .map(|c| c.into_iter().map(|p| verts[p]).collect())
            .collect()
    }

    /// Drops every surviving vertex outside the largest component.
    pub fn retain_largest_component(&mut self) {
        let verts = self.alive_vertices();
        let keep = largest_component(&self.local_adjacency(&verts));
        let mut keep_flag = vec![false; verts.len()];
        for p in keep {
            keep_flag[p] = true;
        }
        for (p, &v) in verts.iter().enumerate() {
            if !keep_flag[p] {
                self.alive[v] = false;
            }
        }
    }

    /// Second-smallest eigenvalue of the normalized Laplacian of the
    /// surviving subgraph (unweighted), the quantity compared against `tau`.
    pub fn normalized_gap(&self) -> f64 {
        let verts = self.alive_vertices();
        if verts.len() < 2 {
            return 0.0;
        }
        NormalizedSpectrum::of(&self.local_adjacency(&verts)).fiedler_value()
    }
}

/// `(1/3) sum_r w^r I_r` for the three intensities `I_r = |<x, phi_i + w^r phi_j>|^2`,
/// which equals `conj(<x, phi_i>) <x, phi_j>` on clean data.
pub fn polarization_weight(intensities: [f64; 3]) -> Complex64 {
    intensities
        .iter()
        .enumerate()
        .map(|(r, &v)| cube_root(r) * v)
        .sum::<Complex64>()
        / 3.0
}

/// Relative-phase estimates for every edge of `graph` from `meas`.
pub fn edge_weights(
    meas: &MeasurementSet,
    graph: &PolarizationGraph,
    clamp_negative: bool,
) -> Result<WeightedPolarizationGraph> {
    if meas.dim() != graph.dim() || meas.count() != graph.count() || meas.modulation_set() != graph.modulation_set() {
        return Err(Error::InconsistentMeasurements(format!(
            "measurements cover K = {}, M = {}, A = {:?} but the graph has K = {}, M = {}, A = {:?}",
            meas.count(),
            meas.dim(),
            meas.modulation_set().elements(),
            graph.count(),
            graph.dim(),
            graph.modulation_set().elements()
        )));
    }
    let dim = graph.dim();
    let magnitudes = meas
        .vertex_intensities()
        .iter()
        .map(|&v| if clamp_negative { v.max(0.0).sqrt() } else { v.abs().sqrt() })
        .collect();
    let mut estimates = Vec::with_capacity(meas.edge_intensities().len() / 3);
    for t in meas.edge_tuples().filter(|t| t.r == 0) {
        let mut intensities = [0.0; 3];
        for (r, slot) in intensities.iter_mut().enumerate() {
            *slot = meas
                .edge_intensity(EdgeTuple { r, ..t })
                .ok_or_else(|| Error::InconsistentMeasurements(format!("missing edge intensity {t:?}")))?;
        }
        let i = t.k * dim + t.m;
        let j = t.kp * dim + (t.m + t.a) % dim;
        estimates.push((i, j, polarization_weight(intensities)));
    }
    let g = WeightedPolarizationGraph::from_estimates(magnitudes, estimates)?;
    let expected = graph.num_vertices() * graph.degree() / 2;
    if g.edges.len() != expected {
        return Err(Error::InconsistentMeasurements(format!(
            "{} edges estimated, graph has {expected}",
            g.edges.len()
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityStats {
    pub iterations: usize,
    pub planned_iterations: usize,
    /// `|w|` of the edge removed in the final iteration.
    pub last_removed_weight: Option<f64>,
    pub stopped_early: bool,
}

/// Removes both endpoints of the weakest surviving edge,
/// `floor((1 - alpha) |V|)` times.
pub fn prune_reliability(g: &mut WeightedPolarizationGraph, alpha: f64) -> Result<ReliabilityStats> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let planned = ((1.0 - alpha) * g.num_alive() as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (g.edges[a], g.edges[b]);
        ea.w.norm().total_cmp(&eb.w.norm()).then((ea.i, ea.j).cmp(&(eb.i, eb.j)))
    });
    let mut cursor = order.iter();
    let mut stats = ReliabilityStats {
        iterations: 0,
        planned_iterations: planned,
        last_removed_weight: None,
        stopped_early: false,
    };
    while stats.iterations < planned {
        let next = cursor.by_ref().map(|&id| g.edges[id]).find(|e| g.alive[e.i] && g.alive[e.j]);
        let Some(edge) = next else {
            stats.stopped_early = true;
            break;
        };
        g.remove_vertex(edge.i);
        g.remove_vertex(edge.j);
        stats.iterations += 1;
        stats.last_removed_weight = Some(edge.w.norm());
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityStats {
    pub rounds: usize,
    pub final_gap: f64,
}

/// Sweep-cut pruning until the second-smallest eigenvalue of the surviving
/// subgraph's normalized Laplacian is at least `tau`. The surviving graph is
/// first restricted to its largest component.
pub fn prune_connectivity(g: &mut WeightedPolarizationGraph, tau: f64) -> Result<ConnectivityStats> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau = {tau} must lie in (0, 1)")));
    }
    g.retain_largest_component();
    let mut rounds = 0;
    loop {
        let verts = g.alive_vertices();
        if verts.len() < 2 {
            return Err(Error::ConnectivityUnreachable(verts.len()));
        }
        let adj = g.local_adjacency(&verts);
        let spectrum = NormalizedSpectrum::of(&adj);
        let gap = spectrum.fiedler_value();
        if gap >= tau {
            return Ok(ConnectivityStats { rounds, final_gap: gap });
        }
        let cut = sweep_cut(&adj, &spectrum);
        for p in cut {
            g.remove_vertex(verts[p]);
        }
        g.retain_largest_component();
        rounds += 1;
    }
}

/// The prefix `S_i` (by ascending `D^{-1/2} u`, `u` the Fiedler vector) of
/// minimal conductance, `1 <= i <= n - 1`; ties go to the smaller `i`.
fn sweep_cut(adj: &[Vec<usize>], spectrum: &NormalizedSpectrum) -> Vec<usize> {
    let n = adj.len();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let score: Vec<f64> = (0..n)
        .map(|v| spectrum.vectors[(v, 1)] / (deg[v].max(1) as f64).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));

    let total_vol: usize = deg.iter().sum();
    let mut in_set = vec![false; n];
    let (mut cut, mut vol) = (0i64, 0usize);
    let mut best = (f64::INFINITY, 1);
    for (step, &v) in order[..n - 1].iter().enumerate() {
        let inside = adj[v].iter().filter(|&&w| in_set[w]).count() as i64;
        cut += deg[v] as i64 - 2 * inside;
        vol += deg[v];
        in_set[v] = true;
        let denom = vol.min(total_vol - vol);
        let h = if denom == 0 { f64::INFINITY } else { cut as f64 / denom as f64 };
        if h < best.0 {
            best = (h, step + 1);
        }
    }
    order[..best.1].to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOutcome {
    /// Global vertex indices, ascending.
    pub vertices: Vec<usize>,
    /// Unit-modulus phase per entry of `vertices`.
    pub phases: Vec<Complex64>,
    /// Vertices whose eigenvector coordinate was numerically zero.
    pub flagged: Vec<usize>,
    /// Smallest eigenvalue of the connection Laplacian.
    pub eigenvalue: f64,
}

/// Phases from the eigenvector of the smallest eigenvalue of
/// `L1 = I - D^{-1/2} A1 D^{-1/2}`, where `A1` holds the normalized weights
/// (entry `(i, j)` is `conj(w_ij) / |w_ij|`, so a consistent `w_ij =
/// conj(z_i) z_j` yields `z` as the eigenvector) and `D` counts incident
/// edges with nonzero weight.
pub fn angular_sync(g: &WeightedPolarizationGraph) -> Result<SyncOutcome> {
    let vertices = g.alive_vertices();
    let n = vertices.len();
    if n == 0 {
        return Err(Error::Synchronization("no surviving vertices".into()));
    }
    let mut pos = vec![usize::MAX; g.num_vertices()];
    for (p, &v) in vertices.iter().enumerate() {
        pos[v] = p;
    }
    let mut conn = DMatrix::<Complex64>::zeros(n, n);
    let mut deg = vec![0usize; n];
    for e in g.alive_edges() {
        let norm = e.w.norm();
        if norm == 0.0 {
            continue;
        }
        let unit = e.w / norm;
        let (pi, pj) = (pos[e.i], pos[e.j]);
        conn[(pi, pj)] = unit.conj();
        conn[(pj, pi)] = unit;
        deg[pi] += 1;
        deg[pj] += 1;
    }
    if deg.iter().all(|&d| d == 0) {
        return Err(Error::Synchronization("every surviving edge weight is zero".into()));
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let mut lap = DMatrix::<Complex64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = conn[(i, j)];
            if a != Complex64::new(0.0, 0.0) {
                lap[(i, j)] -= a * (inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    let eig = SymmetricEigen::new(lap);
    let (col, eigenvalue) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty spectrum");
    let u = eig.eigenvectors.column(col);
    let scale = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut flagged = Vec::new();
    let phases = u
        .iter()
        .enumerate()
        .map(|(p, z)| {
            if z.norm() < PHASE_FLOOR * scale.max(1.0) {
                flagged.push(vertices[p]);
                Complex64::new(1.0, 0.0)
            } else {
                z / z.norm()
            }
        })
        .collect();
    Ok(SyncOutcome {
        vertices,
        phases,
        flagged,
        eigenvalue,
    })
}

/// The stage a failed recovery stopped in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Input,
    EdgeWeights,
    Reliability,
    Connectivity,
    Synchronization,
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub estimate: SignalInstance,
    pub surviving_vertices: usize,
    pub final_gap: f64,
    /// Reliability iterations plus connectivity rounds.
    pub pruning_iterations: usize,
    pub reliability_iterations: usize,
    pub connectivity_rounds: usize,
    pub flagged_vertices: usize,
    /// Numerical rank of the least-squares system.
    pub rank: usize,
    pub success: bool,
    pub failed_stage: Option<Stage>,
    pub message: Option<String>,
}

impl RecoveryResult {
    fn failure(dim: usize, stage: Stage, message: impl Into<String>) -> Self {
        Self {
            estimate: SignalInstance::zeros(dim),
            surviving_vertices: 0,
            final_gap: 0.0,
            pruning_iterations: 0,
            reliability_iterations: 0,
            connectivity_rounds: 0,
            flagged_vertices: 0,
            rank: 0,
            success: false,
            failed_stage: Some(stage),
            message: Some(message.into()),
        }
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            surviving_vertices: self.surviving_vertices,
            final_gap: self.final_gap,
            pruning_iterations: self.pruning_iterations,
            success: self.success,
            failed_stage: self.failed_stage,
            message: self.message.clone(),
        }
    }
}

/// JSON sidecar written next to a recovered estimate.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub surviving_vertices: usize,
    pub final_gap: f64,
    pub pruning_iterations: usize,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Least-squares estimate of `x` from `<x, phi_i> ≈ magnitude_i * phase_i`
/// over the listed vertices `i = k M + m`, with `phi_i = D_k f_m`.
pub fn assemble_and_solve(
    phases: &[Complex64],
    magnitudes: &[f64],
    vertices: &[usize],
    ensemble: &MaskEnsemble,
) -> RecoveryResult {
    let dim = ensemble.dim();
    if phases.len() != vertices.len() || magnitudes.len() != vertices.len() {
        return RecoveryResult::failure(dim, Stage::LeastSquares, "phase, magnitude and vertex lists differ in length");
    }
    let mut result = RecoveryResult::failure(dim, Stage::LeastSquares, "");
    result.surviving_vertices = vertices.len();
    if vertices.len() < dim {
        result.message = Some(format!("{} equations cannot determine {dim} unknowns", vertices.len()));
        return result;
    }
    let n_rows = vertices.len();
    let mut mat = DMatrix::<Complex64>::zeros(n_rows, dim);
    let mut rhs = DVector::<Complex64>::zeros(n_rows);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (row, &v) in vertices.iter().enumerate() {
        let (k, m) = (v / dim, v % dim);
        if k >= ensemble.count() {
            result.message = Some(format!("vertex {v} is outside the ensemble"));
            return result;
        }
        let diag = ensemble.vertex().mask(k).diag();
        for l in 0..dim {
            let f = Complex64::from_polar(1.0 / dim as f64, two_pi * ((m * l) % dim) as f64 / dim as f64);
            mat[(row, l)] = (diag[l] * f).conj();
        }
        rhs[row] = phases[row] * magnitudes[row];
    }
    let svd = mat.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let threshold = RANK_TOLERANCE * sigma_max;
    result.rank = svd.singular_values.iter().filter(|&&s| s > threshold).count();
    if sigma_max == 0.0 || result.rank < dim {
        result.message = Some(format!("rank {} < {dim}", result.rank));
        return result;
    }
    match svd.solve(&rhs, threshold) {
        Ok(sol) => match SignalInstance::new(sol.iter().copied().collect()) {
            Ok(estimate) => {
                result.estimate = estimate;
                result.success = true;
                result.failed_stage = None;
                result.message = None;
            }
            Err(e) => result.message = Some(e.to_string()),
        },
        Err(e) => result.message = Some(e.to_string()),
    }
    result
}

/// `min_{|c| = 1} ||c xhat - x|| / ||x||`, attained at
/// `c = conj(<xhat, x>) / |<xhat, x>|`.
pub fn relative_error(xhat: &SignalInstance, x: &SignalInstance) -> Result<f64> {
    if xhat.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: xhat.dim(),
        });
    }
    let norm = x.norm();
    if norm == 0.0 {
        return Err(Error::invalid("reference signal is zero"));
    }
    let corr: Complex64 = xhat.values().iter().zip(x.values()).map(|(a, b)| a * b.conj()).sum();
    let c = if corr.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { corr.conj() / corr.norm() };
    let err = xhat
        .values()
        .iter()
        .zip(x.values())
        .map(|(a, b)| (c * a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(err / norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryParams {
    /// Reliability pruning keeps roughly this fraction of vertices.
    pub alpha: f64,
    /// Target normalized spectral gap for connectivity pruning.
    pub tau: f64,
    /// Negative vertex intensities become 0 before the square root; when
    /// off, their absolute value is used.
    pub clamp_negative: bool,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            tau: 0.1,
            clamp_negative: true,
        }
    }
}

impl RecoveryParams {
    pub fn new(alpha: f64, tau: f64) -> Result<Self> {
        let params = Self {
            alpha,
            tau,
            clamp_negative: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha = {} must lie in (0, 1]", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau = {} must lie in (0, 1)", self.tau)));
        }
        Ok(())
    }
}

/// The full pipeline. Stage failures are reported through
/// [`RecoveryResult::failed_stage`] rather than as errors.
pub fn recover(meas: &MeasurementSet, ensemble: &MaskEnsemble, params: &RecoveryParams) -> RecoveryResult {
    let dim = ensemble.dim();
    if let Err(e) = params.validate() {
        return RecoveryResult::failure(dim, Stage::Input, e.to_string());
    }
    let graph = match build_graph(ensemble.count(), dim, ensemble.modulation_set()) {
        Ok(g) => g,
        Err(e) => return RecoveryResult::failure(dim, Stage::Input, e.to_string()),
    };
    let mut wg = match edge_weights(meas, &graph, params.clamp_negative) {
        Ok(g) => g,
        Err(e) => return RecoveryResult::failure(dim, Stage::EdgeWeights, e.to_string()),
    };
    let reliability = match prune_reliability(&mut wg, params.alpha) {
        Ok(s) => s,
        Err(e) => return RecoveryResult::failure(dim, Stage::Reliability, e.to_string()),
    };
    let connectivity = match prune_connectivity(&mut wg, params.tau) {
        Ok(s) => s,
        Err(e) => {
            let mut r = RecoveryResult::failure(dim, Stage::Connectivity, e.to_string());
            r.reliability_iterations = reliability.iterations;
            r.pruning_iterations = reliability.iterations;
            return r;
        }
    };
    let sync = match angular_sync(&wg) {
        Ok(s) => s,
        Err(e) => {
            let mut r = RecoveryResult::failure(dim, Stage::Synchronization, e.to_string());
            r.surviving_vertices = wg.num_alive();
            r.final_gap = connectivity.final_gap;
            return r;
        }
    };
    let magnitudes: Vec<f64> = sync.vertices.iter().map(|&v| wg.magnitude(v)).collect();
    let mut result = assemble_and_solve(&sync.phases, &magnitudes, &sync.vertices, ensemble);
    result.final_gap = connectivity.final_gap;
    result.reliability_iterations = reliability.iterations;
    result.connectivity_rounds = connectivity.rounds;
    result.pruning_iterations = reliability.iterations + connectivity.rounds;
    result.flagged_vertices = sync.flagged.len();
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{build_vertex_masks, AlphaMode};
    use crate::measure::{analyze, measure_all};
    use crate::rng::rng_from_seed;
    use crate::setgen::{symmetrize, ModulationSet};
    use rand::Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_complex(rng: &mut impl Rng) -> Complex64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
        x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
    }

    fn intensities(x: &[Complex64], pi: &[Complex64], pj: &[Complex64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, slot) in out.iter_mut().enumerate() {
            let phi: Vec<Complex64> = pi.iter().zip(pj).map(|(a, b)| a + cube_root(r) * b).collect();
            *slot = inner(x, &phi).norm_sqr();
        }
        out
    }

    /// Graph on `n` vertices with unit magnitudes.
    fn graph(n: usize, edges: &[(usize, usize, Complex64)]) -> WeightedPolarizationGraph {
        WeightedPolarizationGraph::from_estimates(vec![1.0; n], edges.iter().copied()).unwrap()
    }

    fn max_phase_error(got: &[Complex64], want: &[Complex64]) -> f64 {
        // Align on the first coordinate, then compare angles.
        let rot = want[0] / got[0];
        got.iter()
            .zip(want)
            .map(|(g, w)| ((g * rot) / w).arg().abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn polarization_identity_examples() {
        // Zero second inner product: three equal intensities.
        assert!(polarization_weight([2.5, 2.5, 2.5]).norm() < 1e-15);

        let x = [c(2.0, 0.0)];
        let w = polarization_weight(intensities(&x, &[c(1.0, 0.0)], &[c(0.0, 1.0)]));
        assert!((w - c(0.0, -4.0)).norm() < 1e-14);

        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let x: Vec<Complex64> = (0..8).map(|_| random_complex(&mut rng)).collect();
            let pi: Vec<Complex64> = (0..8).map(|_| random_complex(&mut rng)).collect();
            let pj: Vec<Complex64> = (0..8).map(|_| random_complex(&mut rng)).collect();
            let (yi, yj) = (inner(&x, &pi), inner(&x, &pj));
            let w = polarization_weight(intensities(&x, &pi, &pj));
            assert!((w - yi.conj() * yj).norm() <= 1e-12 * (1.0 + (yi * yj).norm()));
        }
    }

    #[test]
    fn edge_weights_match_inner_products() {
        let dim = 8;
        let vertex = build_vertex_masks(dim, 2, AlphaMode::Gaussian, 3).unwrap();
        let ensemble = MaskEnsemble::new(vertex, symmetrize(dim, &[1, 2, 4])).unwrap();
        let x = SignalInstance::gaussian(dim, true, 4);
        let meas = measure_all(&x, &ensemble).unwrap();
        let g = build_graph(2, dim, ensemble.modulation_set()).unwrap();
        let wg = edge_weights(&meas, &g, true).unwrap();
        let y: Vec<Complex64> = ensemble
            .vertex()
            .masks()
            .iter()
            .flat_map(|d| analyze(&x, d).unwrap())
            .collect();
        assert_eq!(wg.alive_edges().count(), g.edges().count());
        for (i, j) in g.edges() {
            let w = wg.weight(i, j).unwrap();
            assert!((w - y[i].conj() * y[j]).norm() <= 1e-10);
            assert!((wg.weight(j, i).unwrap() - w.conj()).norm() == 0.0);
        }
        for (v, mag) in wg.magnitudes().iter().enumerate() {
            assert!((mag - y[v].norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn edge_weights_reject_mismatched_graph() {
        let dim = 8;
        let vertex = build_vertex_masks(dim, 2, AlphaMode::Gaussian, 3).unwrap();
        let ensemble = MaskEnsemble::new(vertex, symmetrize(dim, &[1])).unwrap();
        let meas = measure_all(&SignalInstance::gaussian(dim, true, 1), &ensemble).unwrap();
        let other = build_graph(2, dim, &symmetrize(dim, &[2])).unwrap();
        assert!(matches!(edge_weights(&meas, &other, true), Err(Error::InconsistentMeasurements(_))));
    }

    #[test]
    fn hermitian_averaging_of_duplicate_estimates() {
        let g = WeightedPolarizationGraph::from_estimates(vec![1.0; 2], [(0, 1, c(1.0, 1.0)), (1, 0, c(3.0, 1.0))]).unwrap();
        assert!((g.weight(0, 1).unwrap() - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn reliability_pruning_examples() {
        let path = [(0, 1, c(0.1, 0.0)), (1, 2, c(5.0, 0.0)), (2, 3, c(0.0, 7.0))];
        let mut g = graph(4, &path);
        let stats = prune_reliability(&mut g, 1.0).unwrap();
        assert_eq!(stats.iterations, 0);
        assert_eq!(g.num_alive(), 4);

        // floor(0.26 * 4) = 1 iteration.
        let mut g = graph(4, &path);
        let stats = prune_reliability(&mut g, 0.74).unwrap();
        assert_eq!(stats.iterations, 1);
        assert_eq!(g.alive_vertices(), vec![2, 3]);
        assert_eq!(stats.last_removed_weight, Some(0.1));

        let ring: Vec<_> = (0..100).map(|i| (i, (i + 1) % 100, c(1.0 + i as f64, 0.0))).collect();
        let mut g = graph(100, &ring);
        let stats = prune_reliability(&mut g, 0.99).unwrap();
        assert_eq!(stats.iterations, 1);
        assert_eq!(g.num_alive(), 98);

        // Runs out of edges.
        let mut g = graph(4, &path);
        let stats = prune_reliability(&mut g, 0.1).unwrap();
        assert!(stats.stopped_early);
        assert_eq!(stats.iterations, 2);
        assert!(prune_reliability(&mut graph(2, &[]), 0.0).is_err());
    }

    #[test]
    fn reliability_ties_break_lexicographically() {
        let edges = [(2, 3, c(1.0, 0.0)), (0, 1, c(0.0, 1.0)), (1, 2, c(4.0, 0.0))];
        let mut g = graph(4, &edges);
        prune_reliability(&mut g, 0.75).unwrap();
        assert_eq!(g.alive_vertices(), vec![2, 3]);
    }

    fn clique_edges(vertices: &[usize]) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::new();
        for (p, &i) in vertices.iter().enumerate() {
            for &j in &vertices[p + 1..] {
                out.push((i, j, c(1.0, 0.0)));
            }
        }
        out
    }

    #[test]
    fn connectivity_pruning_examples() {
        let all: Vec<usize> = (0..8).collect();
        let mut g = graph(8, &clique_edges(&all));
        let stats = prune_connectivity(&mut g, 0.1).unwrap();
        assert_eq!(stats.rounds, 0);
        assert_eq!(g.num_alive(), 8);
        assert!((stats.final_gap - 8.0 / 7.0).abs() < 1e-12);

        let mut edges = clique_edges(&[0, 1, 2, 3, 4]);
        edges.extend(clique_edges(&[5, 6, 7, 8, 9]));
        edges.push((4, 5, c(1.0, 0.0)));
        let mut g = graph(10, &edges);
        assert!(g.normalized_gap() < 0.5);
        let stats = prune_connectivity(&mut g, 0.5).unwrap();
        assert_eq!(stats.rounds, 1);
        let left = g.alive_vertices();
        assert!(left == vec![0, 1, 2, 3, 4] || left == vec![5, 6, 7, 8, 9], "{left:?}");

        // Bipartite graphs are not pruned: the 4-cycle has lambda_2 = 1.
        let cycle: Vec<_> = (0..4).map(|i| (i, (i + 1) % 4, c(1.0, 0.0))).collect();
        let mut g = graph(4, &cycle);
        assert_eq!(prune_connectivity(&mut g, 0.1).unwrap().rounds, 0);
        assert_eq!(g.num_alive(), 4);

        // A 40-cycle has lambda_2 = 1 - cos(2 pi / 40) < 0.1 and gets cut.
        let cycle: Vec<_> = (0..40).map(|i| (i, (i + 1) % 40, c(1.0, 0.0))).collect();
        let mut g = graph(40, &cycle);
        assert!(g.normalized_gap() < 0.1);
        let _ = prune_connectivity(&mut g, 0.1);
        assert!(g.num_alive() < 40);
        assert!(prune_connectivity(&mut graph(2, &[]), 1.0).is_err());
    }

    #[test]
    fn connectivity_pruning_starts_from_largest_component() {
        let mut edges = clique_edges(&[0, 1, 2, 3]);
        edges.extend(clique_edges(&[4, 5]));
        let mut g = graph(7, &edges);
        prune_connectivity(&mut g, 0.1).unwrap();
        assert_eq!(g.alive_vertices(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn sync_examples() {
        let all: Vec<usize> = (0..5).collect();
        let out = angular_sync(&graph(5, &clique_edges(&all))).unwrap();
        for p in &out.phases {
            assert!((p / out.phases[0] - 1.0).norm() < 1e-12);
        }

        let z = [c(1.0, 0.0), Complex64::from_polar(1.0, PI / 3.0), Complex64::from_polar(1.0, -PI / 5.0)];
        let tri: Vec<_> = [(0, 1), (1, 2), (0, 2)].iter().map(|&(i, j)| (i, j, z[i].conj() * z[j])).collect();
        let out = angular_sync(&graph(3, &tri)).unwrap();
        assert!(max_phase_error(&out.phases, &z) <= 1e-10);
        assert!(out.eigenvalue.abs() < 1e-12);

        let theta = 1.234;
        let out = angular_sync(&graph(2, &[(0, 1, Complex64::from_polar(2.0, theta))])).unwrap();
        assert!(((out.phases[1] / out.phases[0]).arg() - theta).abs() < 1e-12);

        assert!(angular_sync(&graph(3, &[(0, 1, c(0.0, 0.0)), (1, 2, c(0.0, 0.0))])).is_err());
    }

    #[test]
    fn sync_on_random_consistent_graphs() {
        let mut rng = rng_from_seed(8);
        for _ in 0..30 {
            let n = rng.random_range(2..=40);
            let z: Vec<Complex64> = (0..n).map(|_| Complex64::from_polar(1.0, rng.random_range(-PI..PI))).collect();
            let mags: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let mut edges = Vec::new();
            for j in 1..n {
                let i = rng.random_range(0..j);
                edges.push((i, j));
            }
            for _ in 0..n {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                if i != j {
                    edges.push((i, j));
                }
            }
            let est: Vec<_> = edges
                .iter()
                .map(|&(i, j)| (i, j, (z[i] * mags[i]).conj() * z[j] * mags[j]))
                .collect();
            let out = angular_sync(&graph(n, &est)).unwrap();
            assert!(max_phase_error(&out.phases, &z) <= 1e-8);
        }
    }

    #[test]
    fn relative_error_examples() {
        let x = SignalInstance::gaussian(8, true, 2);
        let rotated = x.scaled(Complex64::from_polar(1.0, 0.7));
        assert!(relative_error(&rotated, &x).unwrap() < 1e-15);
        let doubled = x.scaled(c(2.0, 0.0));
        assert!((relative_error(&doubled, &x).unwrap() - 1.0).abs() < 1e-14);
        assert!(relative_error(&x, &SignalInstance::zeros(8)).is_err());
        assert!(relative_error(&SignalInstance::zeros(8), &x).unwrap() == 1.0);
    }

    #[test]
    fn relative_error_matches_grid_search() {
        let x = SignalInstance::gaussian(8, true, 5);
        let xhat = SignalInstance::gaussian(8, true, 6);
        let closed = relative_error(&xhat, &x).unwrap();
        let grid = (0..10_000)
            .map(|t| {
                let cst = Complex64::from_polar(1.0, 2.0 * PI * t as f64 / 10_000.0);
                xhat.values()
                    .iter()
                    .zip(x.values())
                    .map(|(a, b)| (cst * a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
                    / x.norm()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((closed - grid).abs() < 1e-6);
        assert!(closed <= grid + 1e-15);
    }

    #[test]
    fn least_squares_from_exact_inner_products() {
        let dim = 12;
        let vertex = build_vertex_masks(dim, 3, AlphaMode::Gaussian, 9).unwrap();
        let ensemble = MaskEnsemble::new(vertex, symmetrize(dim, &[1])).unwrap();
        let x = SignalInstance::gaussian(dim, true, 10);
        let y: Vec<Complex64> = ensemble
            .vertex()
            .masks()
            .iter()
            .flat_map(|d| analyze(&x, d).unwrap())
            .collect();
        let global = Complex64::from_polar(1.0, 2.1);
        let phases: Vec<Complex64> = y.iter().map(|v| global * v / v.norm()).collect();
        let mags: Vec<f64> = y.iter().map(|v| v.norm()).collect();
        let vertices: Vec<usize> = (0..3 * dim).collect();
        let res = assemble_and_solve(&phases, &mags, &vertices, &ensemble);
        assert!(res.success);
        assert_eq!(res.rank, dim);
        assert!(relative_error(&res.estimate, &x).unwrap() <= 1e-10);

        let few = assemble_and_solve(&phases[..dim - 1], &mags[..dim - 1], &vertices[..dim - 1], &ensemble);
        assert!(!few.success);
        assert_eq!(few.failed_stage, Some(Stage::LeastSquares));
        assert!(few.estimate.values().iter().all(|z| *z == c(0.0, 0.0)));
    }

    fn section_four_instance(dim: usize, seed: u64) -> MaskEnsemble {
        use crate::setgen::{draw_b, SetGenConfig};
        let vertex = build_vertex_masks(dim, 3, AlphaMode::Gaussian, seed).unwrap();
        let set = symmetrize(dim, &draw_b(&SetGenConfig::nonzero_log_density(dim, seed + 1).unwrap()));
        MaskEnsemble::new(vertex, set).unwrap()
    }

    #[test]
    fn noiseless_recovery() {
        let mut seed = 40;
        let ensemble = loop {
            let e = section_four_instance(32, seed);
            if !e.modulation_set().is_empty() {
                break e;
            }
            seed += 2;
        };
        let x = SignalInstance::gaussian(32, true, 3);
        let meas = measure_all(&x, &ensemble).unwrap();
        let res = recover(&meas, &ensemble, &RecoveryParams::default());
        assert!(res.success, "{res:?}");
        assert!(relative_error(&res.estimate, &x).unwrap() <= 1e-10);
        assert_eq!(res.reliability_iterations, 0);
    }

    #[test]
    fn zero_signal_fails_cleanly() {
        let ensemble = MaskEnsemble::new(
            build_vertex_masks(16, 3, AlphaMode::Gaussian, 1).unwrap(),
            ModulationSet::new(16, [1, 3, 13, 15, 6, 10]).unwrap(),
        )
        .unwrap();
        let meas = measure_all(&SignalInstance::zeros(16), &ensemble).unwrap();
        let res = recover(&meas, &ensemble, &RecoveryParams::default());
        assert!(!res.success);
        assert!(res.failed_stage.is_some());
    }

    #[test]
    fn empty_set_fails_at_input() {
        let ensemble = MaskEnsemble::new(build_vertex_masks(8, 2, AlphaMode::Gaussian, 1).unwrap(), ModulationSet::empty(8)).unwrap();
        let meas = measure_all(&SignalInstance::gaussian(8, true, 1), &ensemble).unwrap();
        let res = recover(&meas, &ensemble, &RecoveryParams::default());
        assert_eq!(res.failed_stage, Some(Stage::Input));
    }

    #[test]
    fn params_validation() {
        assert!(RecoveryParams::new(0.99, 0.1).is_ok());
        assert!(RecoveryParams::new(0.0, 0.1).is_err());
        assert!(RecoveryParams::new(1.0, 1.0).is_err());
    }
}
