//! Random symmetric modulation sets `A ⊂ Z_M` and their Fourier bias.
//!
//! A set `B` is drawn with independent Bernoulli memberships and symmetrized
//! into `A = B ∪ (-B) \ {0}`. The spectral gap of the polarization graph
//! built on `A` is `1 - (M/|A|) ||A||_u`, where `||A||_u` is the largest
//! nonzero-frequency magnitude of the normalized DFT of the indicator of `A`.
//! All logarithms are natural.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use num_complex::Complex64;

/// A subset of `Z_M` with `0 ∉ A` and `A = -A`, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationSet {
    dim: usize,
    elements: Vec<usize>,
}

impl ModulationSet {
    /// Validates the residues and stores them sorted and deduplicated.
    pub fn new(dim: usize, elements: impl IntoIterator<Item = usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("modulation set dimension must be positive"));
        }
        let mut elements: Vec<usize> = elements.into_iter().collect();
        elements.sort_unstable();
        elements.dedup();
        if let Some(&bad) = elements.iter().find(|&&a| a >= dim) {
            return Err(Error::invalid(format!("residue {bad} is not in Z_{dim}")));
        }
        if elements.first() == Some(&0) {
            return Err(Error::invalid("0 must not belong to a modulation set"));
        }
        for &a in &elements {
            let neg = dim - a;
            if elements.binary_search(&neg).is_err() {
                return Err(Error::invalid(format!(
                    "set is not symmetric: {a} present but -{a} = {neg} missing"
                )));
            }
        }
        Ok(Self { dim, elements })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            elements: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, a: usize) -> bool {
        self.elements.binary_search(&a).is_ok()
    }

    /// Position of `a` in the sorted element list.
    pub fn position(&self, a: usize) -> Option<usize> {
        self.elements.binary_search(&a).ok()
    }
}

/// Parameters of the Bernoulli draw for `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetGenConfig {
    pub dim: usize,
    /// Inclusion probability per eligible residue.
    pub density: f64,
    /// Draw only over `{1, .., M-1}`.
    pub restrict_nonzero: bool,
    pub seed: u64,
    /// The constant `c` when `density = c ln M / M`.
    pub c: Option<f64>,
}

impl SetGenConfig {
    pub fn new(dim: usize, density: f64, restrict_nonzero: bool, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&density) {
            return Err(Error::invalid(format!("density {density} is not in [0, 1]")));
        }
        Ok(Self {
            dim,
            density,
            restrict_nonzero,
            seed,
            c: None,
        })
    }

    /// `p = min(1, c ln M / M)` over all residues, including 0.
    pub fn with_bias_constant(dim: usize, c: f64, seed: u64) -> Result<Self> {
        if c.is_nan() || c < 0.0 {
            return Err(Error::invalid(format!("bias constant {c} must be nonnegative")));
        }
        let p = (c * (dim as f64).ln() / dim as f64).clamp(0.0, 1.0);
        let mut cfg = Self::new(dim, p, false, seed)?;
        cfg.c = Some(c);
        Ok(cfg)
    }

    /// The numerical-experiment variant: `p = ln M / M` over nonzero residues.
    pub fn nonzero_log_density(dim: usize, seed: u64) -> Result<Self> {
        let p = ((dim as f64).ln() / dim as f64).clamp(0.0, 1.0);
        let mut cfg = Self::new(dim, p, true, seed)?;
        cfg.c = Some(1.0);
        Ok(cfg)
    }
}

/// Draws `B`: residues are visited in increasing order, each consuming one
/// uniform variate and joining `B` when the variate is below the density.
pub fn draw_b(config: &SetGenConfig) -> Vec<usize> {
    let mut rng = rng_from_seed(config.seed);
    let start = usize::from(config.restrict_nonzero);
    (start..config.dim)
        .filter(|_| rng.random::<f64>() < config.density)
        .collect()
}

/// `A = B ∪ (-B) \ {0}`. Residues are reduced mod `dim`.
pub fn symmetrize(dim: usize, b: &[usize]) -> ModulationSet {
    let mut elements = Vec::with_capacity(2 * b.len());
    for &v in b {
        let v = v % dim;
        if v != 0 {
            elements.push(v);
            elements.push(dim - v);
        }
    }
    elements.sort_unstable();
    elements.dedup();
    ModulationSet { dim, elements }
}

/// Normalized DFT of the indicator of `set`.
pub fn indicator_spectrum(set: &[usize], dim: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); dim];
    for &s in set {
        buf[s % dim] = Complex64::new(1.0, 0.0);
    }
    Dft::new(dim).analyze_in_place(&mut buf);
    buf
}

/// `max_{m != 0} |(F* 1_S)(m)|`.
pub fn fourier_bias(set: &[usize], dim: usize) -> Result<f64> {
    if dim < 2 {
        return Err(Error::invalid(
            "Fourier bias needs M >= 2 (no nonzero frequency otherwise)",
        ));
    }
    let spectrum = indicator_spectrum(set, dim);
    Ok(spectrum[1..].iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// `1 - (M/|A|) ||A||_u`. Negative values are legitimate and flag a poor set.
pub fn spectral_gap_from_bias(set: &ModulationSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyModulationSet);
    }
    let bias = fourier_bias(set.elements(), set.dim())?;
    Ok(1.0 - set.dim() as f64 / set.len() as f64 * bias)
}

/// `ln M / (2 + ln(1/eps))`: any set whose graph has gap above `eps` must be
/// at least this large.
pub fn min_size_lower_bound(dim: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("eps = {eps} must lie in (0, 1]")));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    Ok((dim as f64).ln() / (2.0 + (1.0 / eps).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    /// O(M^2) evaluation straight from the definition.
    fn naive_bias(set: &[usize], dim: usize) -> f64 {
        (1..dim)
            .map(|m| {
                set.iter()
                    .map(|&s| Complex64::from_polar(1.0, -2.0 * PI * (m * s) as f64 / dim as f64))
                    .sum::<Complex64>()
                    .norm()
                    / dim as f64
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn draw_b_extremes() {
        let none = SetGenConfig::new(50, 0.0, false, 1).unwrap();
        assert!(draw_b(&none).is_empty());
        let all = SetGenConfig::new(50, 1.0, true, 1).unwrap();
        assert_eq!(draw_b(&all), (1..50).collect::<Vec<_>>());
    }

    #[test]
    fn draw_b_is_seed_deterministic() {
        let cfg = SetGenConfig::new(256, 0.1, false, 99).unwrap();
        assert_eq!(draw_b(&cfg), draw_b(&cfg));
        let other = SetGenConfig { seed: 100, ..cfg };
        assert_ne!(draw_b(&cfg), draw_b(&other));
    }

    #[test]
    fn draw_b_mean_size_matches_binomial_mean() {
        let m = 1024;
        let p = (m as f64).ln() / m as f64;
        let total: usize = (0..1000)
            .map(|seed| draw_b(&SetGenConfig::new(m, p, false, seed).unwrap()).len())
            .sum();
        let mean = total as f64 / 1000.0;
        let expected = (m as f64).ln();
        assert!((mean - expected).abs() <= 0.1 * expected, "mean |B| = {mean}");
    }

    #[test]
    fn config_rejects_bad_density() {
        assert!(SetGenConfig::new(10, 1.5, false, 0).is_err());
        assert!(SetGenConfig::new(10, -0.1, false, 0).is_err());
        assert!(SetGenConfig::new(0, 0.5, false, 0).is_err());
        let cfg = SetGenConfig::with_bias_constant(16, 144.0, 0).unwrap();
        assert_eq!(cfg.density, 1.0);
    }

    #[test]
    fn symmetrize_examples() {
        assert_eq!(symmetrize(7, &[1, 2]).elements(), &[1, 2, 5, 6]);
        assert_eq!(symmetrize(6, &[0, 3]).elements(), &[3]);
        assert!(symmetrize(9, &[]).is_empty());
    }

    #[test]
    fn modulation_set_validation() {
        assert!(ModulationSet::new(8, [1, 7]).is_ok());
        assert!(ModulationSet::new(8, [0]).is_err());
        assert!(ModulationSet::new(8, [1]).is_err());
        assert!(ModulationSet::new(8, [9]).is_err());
        assert_eq!(ModulationSet::new(8, [7, 1, 1]).unwrap().elements(), &[1, 7]);
    }

    #[test]
    fn fourier_bias_examples() {
        assert_eq!(fourier_bias(&[], 10).unwrap(), 0.0);
        assert!((fourier_bias(&[1, 3], 4).unwrap() - 0.5).abs() < 1e-15);
        for m in 2..40 {
            let all: Vec<usize> = (1..m).collect();
            assert!((fourier_bias(&all, m).unwrap() - 1.0 / m as f64).abs() < 1e-14);
        }
        assert!(fourier_bias(&[0], 1).is_err());
    }

    #[test]
    fn fourier_bias_matches_naive_sum() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let m = rng.random_range(2..80);
            let set: Vec<usize> = (0..m).filter(|_| rng.random::<f64>() < 0.3).collect();
            assert!((fourier_bias(&set, m).unwrap() - naive_bias(&set, m)).abs() < 1e-13);
        }
    }

    #[test]
    fn gap_from_bias_examples() {
        let cycle = ModulationSet::new(4, [1, 3]).unwrap();
        assert!(spectral_gap_from_bias(&cycle).unwrap().abs() < 1e-15);
        let complete = ModulationSet::new(5, [1, 2, 3, 4]).unwrap();
        assert!((spectral_gap_from_bias(&complete).unwrap() - 0.75).abs() < 1e-14);
        assert!(matches!(
            spectral_gap_from_bias(&ModulationSet::empty(5)),
            Err(Error::EmptyModulationSet)
        ));
    }

    #[test]
    fn lower_bound_examples() {
        let m = 1000;
        assert!((min_size_lower_bound(m, 1.0).unwrap() - (m as f64).ln() / 2.0).abs() < 1e-15);
        // ln(e^2)/2 = 1, evaluated on the closed form since M is an integer.
        let e2 = std::f64::consts::E.powi(2);
        assert!((e2.ln() / (2.0 + (1.0f64).ln()) - 1.0).abs() < 1e-15);
        assert!(min_size_lower_bound(m, 0.0).is_err());
        assert!(min_size_lower_bound(m, 1.5).is_err());
    }

    #[test]
    fn size_bound_holds_on_dense_random_sets() {
        let eps = 0.5;
        let mut checked = 0;
        let mut seed = 0;
        while checked < 200 {
            seed += 1;
            let m = 8 + (rng::mix(seed, 1, 2) % 249) as usize;
            let cfg = SetGenConfig::with_bias_constant(m, 144.0, seed).unwrap();
            let a = symmetrize(m, &draw_b(&cfg));
            if a.is_empty() {
                continue;
            }
            let gap = spectral_gap_from_bias(&a).unwrap();
            if gap > eps {
                assert!(a.len() as f64 >= min_size_lower_bound(m, eps).unwrap());
                checked += 1;
            }
        }
    }

    use crate::rng;

    proptest! {
        #[test]
        fn symmetrize_yields_valid_sets(dim in 1usize..200, raw in proptest::collection::vec(0usize..400, 0..30)) {
            let a = symmetrize(dim, &raw);
            prop_assert!(!a.contains(0));
            for &x in a.elements() {
                prop_assert!(a.contains(dim - x));
            }
            prop_assert!(ModulationSet::new(dim, a.elements().iter().copied()).is_ok());
        }

        #[test]
        fn bias_is_at_most_density(dim in 2usize..128, seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let set: Vec<usize> = (0..dim).filter(|_| rng.random::<f64>() < 0.4).collect();
            let bias = fourier_bias(&set, dim).unwrap();
            prop_assert!(bias <= set.len() as f64 / dim as f64 + 1e-12);
        }

        #[test]
        fn symmetrized_bias_is_subadditive(dim in 3usize..160, seed in any::<u64>()) {
            // B drawn so that B ∩ (-B) = ∅ and 0 ∉ B.
            let mut rng = rng_from_seed(seed);
            let mut b = Vec::new();
            for v in 1..dim {
                let neg = dim - v;
                if v < neg && rng.random::<f64>() < 0.3 {
                    b.push(if rng.random::<bool>() { v } else { neg });
                }
            }
            let neg_b: Vec<usize> = b.iter().map(|&v| dim - v).collect();
            let a = symmetrize(dim, &b);
            let lhs = fourier_bias(a.elements(), dim).unwrap();
            let rhs = fourier_bias(&b, dim).unwrap() + fourier_bias(&neg_b, dim).unwrap();
            prop_assert!(lhs <= rhs + 1e-12);
            prop_assert!((fourier_bias(&b, dim).unwrap() - fourier_bias(&neg_b, dim).unwrap()).abs() < 1e-12);
        }
    }
}
