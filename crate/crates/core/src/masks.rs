//! Diagonal masks.
//!
//! Vertex masks are `D_k = diag{d_k(l)}`; in the power form `d_k(l) = alpha_k^l`
//! the vectors `{D_k f_m}` are the columns of an `M x KM` Vandermonde matrix
//! in the nodes `alpha_k exp(2 pi i m / M)`, which is full spark exactly when
//! those nodes are pairwise distinct. Auxiliary masks combine two vertex
//! masks with a modulation `E^a = diag{exp(2 pi i a l / M)}` and a cube root
//! of unity, so that `(D_k + w^r E^a D_k') f_m = D_k f_m + w^r D_k' f_{m+a}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::setgen::ModulationSet;

/// `exp(2 pi i r / 3)`.
pub fn cube_root(r: usize) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * (r % 3) as f64 / 3.0)
}

fn modulation(a: usize, l: usize, dim: usize) -> Complex64 {
    // Reduce before converting so large a*l stays exact.
    Complex64::from_polar(1.0, 2.0 * PI * ((a * l) % dim) as f64 / dim as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMask {
    diag: Vec<Complex64>,
}

impl DiagonalMask {
    pub fn new(diag: Vec<Complex64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("mask must have at least one entry"));
        }
        if diag.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("mask diagonal"));
        }
        Ok(Self { diag })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            diag: vec![Complex64::new(1.0, 0.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[Complex64] {
        &self.diag
    }
}

/// How vertex mask diagonals are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// `alpha_k = exp(2 pi i k / (K M))`.
    Deterministic,
    /// `alpha_k` uniform on the unit circle.
    RandomUnitCircle,
    /// i.i.d. standard normal real diagonal entries (no power form).
    Gaussian,
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(AlphaMode::Deterministic),
            "random" | "random-unit-circle" => Ok(AlphaMode::RandomUnitCircle),
            "gaussian" => Ok(AlphaMode::Gaussian),
            other => Err(Error::invalid(format!("unknown mask mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlphaMode::Deterministic => "deterministic",
            AlphaMode::RandomUnitCircle => "random-unit-circle",
            AlphaMode::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexMaskSet {
    dim: usize,
    mode: AlphaMode,
    seed: u64,
    /// Present for the power-form modes.
    alphas: Option<Vec<Complex64>>,
    masks: Vec<DiagonalMask>,
}

impl VertexMaskSet {
    /// Power-form masks `diag{alpha_k^l}` for caller-chosen scalars. The
    /// full-spark condition is not enforced here; see [`check_full_spark`].
    pub fn from_alphas(dim: usize, alphas: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || alphas.is_empty() {
            return Err(Error::invalid("need M >= 1 and K >= 1"));
        }
        if alphas.iter().any(|a| a.norm() == 0.0) {
            return Err(Error::invalid("alpha_k must be nonzero"));
        }
        let masks = alphas
            .iter()
            .map(|&alpha| DiagonalMask::new(power_diag(alpha, dim)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            mode: AlphaMode::RandomUnitCircle,
            seed: 0,
            alphas: Some(alphas),
            masks,
        })
    }

    /// Arbitrary diagonals, e.g. read back from a file.
    pub fn from_masks(mode: AlphaMode, seed: u64, masks: Vec<DiagonalMask>) -> Result<Self> {
        let dim = masks
            .first()
            .map(DiagonalMask::dim)
            .ok_or_else(|| Error::invalid("need at least one vertex mask"))?;
        if let Some(bad) = masks.iter().find(|d| d.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self {
            dim,
            mode,
            seed,
            alphas: None,
            masks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn mode(&self) -> AlphaMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphas(&self) -> Option<&[Complex64]> {
        self.alphas.as_deref()
    }

    pub fn masks(&self) -> &[DiagonalMask] {
        &self.masks
    }

    pub fn mask(&self, k: usize) -> &DiagonalMask {
        &self.masks[k]
    }
}

fn power_diag(alpha: Complex64, dim: usize) -> Vec<Complex64> {
    // Unit-modulus alphas are raised through their angle to avoid drift from
    // repeated multiplication.
    if (alpha.norm() - 1.0).abs() < 1e-15 {
        let theta = alpha.arg();
        (0..dim)
            .map(|l| Complex64::from_polar(1.0, theta * l as f64))
            .collect()
    } else {
        (0..dim).map(|l| alpha.powu(l as u32)).collect()
    }
}

const MAX_REDRAWS: usize = 16;

pub fn build_vertex_masks(dim: usize, count: usize, mode: AlphaMode, seed: u64) -> Result<VertexMaskSet> {
    if dim == 0 || count == 0 {
        return Err(Error::invalid(format!(
            "need M >= 1 and K >= 1 (got M = {dim}, K = {count})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let alphas = match mode {
        AlphaMode::Deterministic => (0..count)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / (count * dim) as f64))
            .collect::<Vec<_>>(),
        AlphaMode::RandomUnitCircle => {
            let mut drawn = None;
            for _ in 0..MAX_REDRAWS {
                let alphas: Vec<Complex64> = (0..count)
                    .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()))
                    .collect();
                if check_full_spark(&alphas, dim)? {
                    drawn = Some(alphas);
                    break;
                }
            }
            drawn.ok_or_else(|| {
                Error::invalid(format!(
                    "no full-spark draw in {MAX_REDRAWS} attempts (K M = {} is too fine for the tolerance)",
                    count * dim
                ))
            })?
        }
        AlphaMode::Gaussian => {
            let masks = (0..count)
                .map(|_| {
                    DiagonalMask::new(
                        (0..dim)
                            .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
                            .collect(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            return VertexMaskSet::from_masks(mode, seed, masks);
        }
    };
    if mode == AlphaMode::Deterministic && !check_full_spark(&alphas, dim)? {
        return Err(Error::invalid(format!(
            "deterministic nodes are not separable at K M = {}",
            count * dim
        )));
    }
    let mut set = VertexMaskSet::from_alphas(dim, alphas)?;
    set.mode = mode;
    set.seed = seed;
    Ok(set)
}

/// True iff the nodes `alpha_k exp(2 pi i m / M)` are pairwise distinct, i.e.
/// no ratio `alpha_k / alpha_k'` is an `M`-th root of unity. Two nodes count
/// as equal when they are closer than `1e-9 M` relative to their modulus.
pub fn check_full_spark(alphas: &[Complex64], dim: usize) -> Result<bool> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if alphas.iter().any(|a| a.norm() == 0.0 || !a.re.is_finite() || !a.im.is_finite()) {
        return Err(Error::invalid("alpha_k must be finite and nonzero"));
    }
    // A single row is spanned by any nonzero vector, coincident nodes or not.
    if dim == 1 {
        return Ok(true);
    }
    let tol = 1e-9 * dim as f64;
    for (k, &ak) in alphas.iter().enumerate() {
        for &akp in &alphas[..k] {
            let ratio = ak / akp;
            let step = (ratio.arg() * dim as f64 / (2.0 * PI)).round();
            let root = Complex64::from_polar(1.0, 2.0 * PI * step / dim as f64);
            let gap = (ak - akp * root).norm();
            if gap < tol * ak.norm().max(akp.norm()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Identifies one auxiliary mask `D_k + w^r E^a D_k'` (with `k' <= k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuxIndex {
    pub k: usize,
    #[serde(rename = "k'")]
    pub kp: usize,
    pub r: usize,
    pub a: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryMask {
    pub index: AuxIndex,
    pub mask: DiagonalMask,
}

fn auxiliary_diag(vertex: &VertexMaskSet, idx: AuxIndex) -> Vec<Complex64> {
    let dim = vertex.dim();
    let wr = cube_root(idx.r);
    let dk = vertex.mask(idx.k).diag();
    let dkp = vertex.mask(idx.kp).diag();
    (0..dim)
        .map(|l| dk[l] + wr * modulation(idx.a, l, dim) * dkp[l])
        .collect()
}

/// All `(k, k', r, a)` with `k' <= k`, ordered by `(k, k', a, r)`.
pub fn auxiliary_indices(count: usize, set: &ModulationSet) -> impl Iterator<Item = AuxIndex> + '_ {
    (0..count).flat_map(move |k| {
        (0..=k).flat_map(move |kp| {
            set.elements()
                .iter()
                .flat_map(move |&a| (0..3).map(move |r| AuxIndex { k, kp, r, a }))
        })
    })
}

pub fn build_auxiliary_masks(vertex: &VertexMaskSet, set: &ModulationSet) -> Result<Vec<AuxiliaryMask>> {
    if set.dim() != vertex.dim() {
        return Err(Error::DimensionMismatch {
            expected: vertex.dim(),
            got: set.dim(),
        });
    }
    auxiliary_indices(vertex.count(), set)
        .map(|index| {
            Ok(AuxiliaryMask {
                index,
                mask: DiagonalMask::new(auxiliary_diag(vertex, index))?,
            })
        })
        .collect()
}

/// `K + 3 C(K+1, 2) |A|`.
pub fn mask_count(count: usize, set_size: usize) -> usize {
    count + 3 * (count * (count + 1) / 2) * set_size
}

/// Vertex masks plus the modulation set. Auxiliary masks are generated on
/// demand from these two, since at production sizes they do not fit in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEnsemble {
    vertex: VertexMaskSet,
    set: ModulationSet,
}

impl MaskEnsemble {
    pub fn new(vertex: VertexMaskSet, set: ModulationSet) -> Result<Self> {
        if set.dim() != vertex.dim() {
            return Err(Error::DimensionMismatch {
                expected: vertex.dim(),
                got: set.dim(),
            });
        }
        Ok(Self { vertex, set })
    }

    pub fn dim(&self) -> usize {
        self.vertex.dim()
    }

    /// Number of vertex masks `K`.
    pub fn count(&self) -> usize {
        self.vertex.count()
    }

    pub fn vertex(&self) -> &VertexMaskSet {
        &self.vertex
    }

    pub fn modulation_set(&self) -> &ModulationSet {
        &self.set
    }

    pub fn auxiliary_indices(&self) -> impl Iterator<Item = AuxIndex> + '_ {
        auxiliary_indices(self.count(), &self.set)
    }

    pub fn auxiliary_mask(&self, index: AuxIndex) -> AuxiliaryMask {
        AuxiliaryMask {
            index,
            mask: DiagonalMask {
                diag: auxiliary_diag(&self.vertex, index),
            },
        }
    }

    pub fn auxiliary_masks(&self) -> impl Iterator<Item = AuxiliaryMask> + '_ {
        self.auxiliary_indices().map(|idx| self.auxiliary_mask(idx))
    }

    pub fn num_auxiliary(&self) -> usize {
        3 * (self.count() * (self.count() + 1) / 2) * self.set.len()
    }

    pub fn num_masks(&self) -> usize {
        self.count() + self.num_auxiliary()
    }

    pub fn to_document(&self) -> EnsembleDocument {
        EnsembleDocument {
            dim: self.dim(),
            k: self.count(),
            alpha_mode: self.vertex.mode(),
            seed: self.vertex.seed(),
            modulation_set: self.set.elements().to_vec(),
            vertex_masks: self.vertex.masks().iter().map(|d| pairs(d.diag())).collect(),
            auxiliary_masks: self
                .auxiliary_masks()
                .map(|aux| AuxDocument {
                    index: aux.index,
                    diag: pairs(aux.mask.diag()),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &EnsembleDocument) -> Result<Self> {
        if doc.vertex_masks.len() != doc.k {
            return Err(Error::invalid(format!(
                "K = {} but {} vertex masks listed",
                doc.k,
                doc.vertex_masks.len()
            )));
        }
        let masks = doc
            .vertex_masks
            .iter()
            .map(|d| DiagonalMask::new(unpairs(d)))
            .collect::<Result<Vec<_>>>()?;
        let vertex = VertexMaskSet::from_masks(doc.alpha_mode, doc.seed, masks)?;
        if vertex.dim() != doc.dim {
            return Err(Error::DimensionMismatch {
                expected: doc.dim,
                got: vertex.dim(),
            });
        }
        let set = ModulationSet::new(doc.dim, doc.modulation_set.iter().copied())?;
        let ensemble = Self::new(vertex, set)?;
        if doc.auxiliary_masks.len() != ensemble.num_auxiliary() {
            return Err(Error::invalid(format!(
                "expected {} auxiliary masks, found {}",
                ensemble.num_auxiliary(),
                doc.auxiliary_masks.len()
            )));
        }
        for (expected, listed) in ensemble.auxiliary_indices().zip(&doc.auxiliary_masks) {
            if expected != listed.index {
                return Err(Error::invalid(format!(
                    "auxiliary mask {:?} listed where {:?} was expected",
                    listed.index, expected
                )));
            }
            let rebuilt = auxiliary_diag(&ensemble.vertex, expected);
            let stored = unpairs(&listed.diag);
            let consistent = stored.len() == rebuilt.len()
                && stored.iter().zip(&rebuilt).all(|(s, r)| (s - r).norm() <= 1e-9 * (1.0 + r.norm()));
            if !consistent {
                return Err(Error::invalid(format!(
                    "auxiliary mask {expected:?} does not match its vertex masks"
                )));
            }
        }
        Ok(ensemble)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

fn pairs(values: &[Complex64]) -> Vec<[f64; 2]> {
    values.iter().map(|z| [z.re, z.im]).collect()
}

fn unpairs(values: &[[f64; 2]]) -> Vec<Complex64> {
    values.iter().map(|&[re, im]| Complex64::new(re, im)).collect()
}

/// On-disk layout of a [`MaskEnsemble`]; complex numbers are `[re, im]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha_mode: AlphaMode,
    pub seed: u64,
    pub modulation_set: Vec<usize>,
    pub vertex_masks: Vec<Vec<[f64; 2]>>,
    pub auxiliary_masks: Vec<AuxDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxDocument {
    #[serde(flatten)]
    pub index: AuxIndex,
    pub diag: Vec<[f64; 2]>,
}
