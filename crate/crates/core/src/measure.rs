//! Intensity measurements `|<x, D f_m>|^2` and the additive noise model.
//!
//! Inner products are linear in the first slot: `<x, y> = sum_l x(l) conj(y(l))`.
//! For a diagonal mask `D`, the vector `m -> <x, D f_m>` is `F*(D* x)`, one
//! normalized DFT per mask.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::masks::{DiagonalMask, MaskEnsemble};
use crate::rng::rng_from_seed;
use crate::setgen::ModulationSet;

/// A signal in `C^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalInstance {
    values: Vec<Complex64>,
}

impl SignalInstance {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("signal"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); dim],
        }
    }

    /// i.i.d. entries with unit variance: complex entries have independent
    /// `N(0, 1/2)` real and imaginary parts; real entries are `N(0, 1)`.
    pub fn gaussian(dim: usize, complex: bool, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let values = (0..dim)
            .map(|_| {
                if complex {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                } else {
                    Complex64::new(rng.sample(StandardNormal), 0.0)
                }
            })
            .collect();
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|z| z * c).collect(),
        }
    }

    /// CSV rows `m,re,im` with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["m", "re", "im"])?;
        for (m, z) in self.values.iter().enumerate() {
            out.write_record([m.to_string(), fmt17(z.re), fmt17(z.im)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let mut rows: Vec<(usize, Complex64)> = Vec::new();
        for record in input.records() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim().to_owned();
            let m: usize = parse_field(&field(0), "m")?;
            let re: f64 = parse_field(&field(1), "re")?;
            let im: f64 = parse_field(&field(2), "im")?;
            rows.push((m, Complex64::new(re, im)));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::invalid("signal rows must cover m = 0..M-1 exactly once"));
        }
        Self::new(rows.into_iter().map(|r| r.1).collect())
    }
}

fn parse_field<T: std::str::FromStr>(text: &str, name: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::invalid(format!("cannot parse {name} from '{text}'")))
}

/// Decimal scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `m -> <x, D f_m>` through the FFT.
pub fn analyze(x: &SignalInstance, mask: &DiagonalMask) -> Result<Vec<Complex64>> {
    check_dims(x.dim(), mask.dim())?;
    Ok(analyze_with(&Dft::new(x.dim()), x, mask.diag()))
}

fn analyze_with(dft: &Dft, x: &SignalInstance, diag: &[Complex64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.values.iter().zip(diag).map(|(v, d)| v * d.conj()).collect();
    dft.analyze_in_place(&mut buf);
    buf
}

/// One edge measurement coordinate: auxiliary mask `(k, k', a, r)` at
/// frequency `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeTuple {
    pub k: usize,
    pub kp: usize,
    pub a: usize,
    pub r: usize,
    pub m: usize,
}

/// Vertex intensities indexed by `(k, m)` and edge intensities indexed by
/// `(k, k', a, r, m)` with `k' <= k`, both stored in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    dim: usize,
    count: usize,
    set: ModulationSet,
    vertex: Vec<f64>,
    edge: Vec<f64>,
    noise_variance: f64,
}

impl MeasurementSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn modulation_set(&self) -> &ModulationSet {
        &self.set
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn vertex_intensities(&self) -> &[f64] {
        &self.vertex
    }

    pub fn edge_intensities(&self) -> &[f64] {
        &self.edge
    }

    pub fn vertex_intensity(&self, k: usize, m: usize) -> f64 {
        self.vertex[k * self.dim + m]
    }

    fn edge_offset(&self, t: EdgeTuple) -> Option<usize> {
        if t.kp > t.k || t.k >= self.count || t.r > 2 || t.m >= self.dim {
            return None;
        }
        let pair = t.k * (t.k + 1) / 2 + t.kp;
        let ai = self.set.position(t.a)?;
        Some(((pair * self.set.len() + ai) * 3 + t.r) * self.dim + t.m)
    }

    pub fn edge_intensity(&self, t: EdgeTuple) -> Option<f64> {
        self.edge_offset(t).map(|i| self.edge[i])
    }

    /// Edge tuples in storage order.
    pub fn edge_tuples(&self) -> impl Iterator<Item = EdgeTuple> + '_ {
        let dim = self.dim;
        (0..self.count).flat_map(move |k| {
            (0..=k).flat_map(move |kp| {
                self.set.elements().iter().flat_map(move |&a| {
                    (0..3).flat_map(move |r| (0..dim).map(move |m| EdgeTuple { k, kp, a, r, m }))
                })
            })
        })
    }

    /// Rows `kind,k,kp,a,r,m,value`; vertex rows leave `kp,a,r` empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["kind", "k", "kp", "a", "r", "m", "value"])?;
        for k in 0..self.count {
            for m in 0..self.dim {
                out.write_record([
                    "vertex".to_owned(),
                    k.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    m.to_string(),
                    fmt17(self.vertex_intensity(k, m)),
                ])?;
            }
        }
        for (t, v) in self.edge_tuples().zip(&self.edge) {
            out.write_record([
                "edge".to_owned(),
                t.k.to_string(),
                t.kp.to_string(),
                t.a.to_string(),
                t.r.to_string(),
                t.m.to_string(),
                fmt17(*v),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads measurements laid out for `ensemble`; every coordinate must be
    /// present exactly once.
    pub fn read_csv<R: Read>(reader: R, ensemble: &MaskEnsemble, noise_variance: f64) -> Result<Self> {
        let mut meas = Self {
            dim: ensemble.dim(),
            count: ensemble.count(),
            set: ensemble.modulation_set().clone(),
            vertex: vec![f64::NAN; ensemble.count() * ensemble.dim()],
            edge: vec![f64::NAN; ensemble.num_auxiliary() * ensemble.dim()],
            noise_variance,
        };
        let mut input = csv::Reader::from_reader(reader);
        for record in input.records() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let value: f64 = parse_field(field(6), "value")?;
            let k: usize = parse_field(field(1), "k")?;
            let m: usize = parse_field(field(5), "m")?;
            let slot = match field(0) {
                "vertex" => {
                    if k >= meas.count || m >= meas.dim {
                        None
                    } else {
                        Some(&mut meas.vertex[k * meas.dim + m])
                    }
                }
                "edge" => {
                    let t = EdgeTuple {
                        k,
                        kp: parse_field(field(2), "kp")?,
                        a: parse_field(field(3), "a")?,
                        r: parse_field(field(4), "r")?,
                        m,
                    };
                    meas.edge_offset(t).map(|i| &mut meas.edge[i])
                }
                other => return Err(Error::InconsistentMeasurements(format!("unknown row kind '{other}'"))),
            };
            let slot = slot.ok_or_else(|| {
                Error::InconsistentMeasurements(format!("row {:?} is outside the ensemble's index set", record))
            })?;
            if !slot.is_nan() {
                return Err(Error::InconsistentMeasurements(format!("duplicate row {:?}", record)));
            }
            *slot = value;
        }
        let missing = meas.vertex.iter().chain(&meas.edge).filter(|v| v.is_nan()).count();
        if missing > 0 {
            return Err(Error::InconsistentMeasurements(format!("{missing} measurements missing")));
        }
        Ok(meas)
    }
}

/// Clean intensities for every vertex and auxiliary mask of the ensemble.
pub fn measure_all(x: &SignalInstance, ensemble: &MaskEnsemble) -> Result<MeasurementSet> {
    check_dims(ensemble.dim(), x.dim())?;
    let dft = Dft::new(x.dim());
    let vertex: Vec<f64> = ensemble
        .vertex()
        .masks()
        .iter()
        .flat_map(|mask| analyze_with(&dft, x, mask.diag()).into_iter().map(|c| c.norm_sqr()))
        .collect();
    let indices: Vec<_> = ensemble.auxiliary_indices().collect();
    let edge: Vec<f64> = indices
        .par_iter()
        .flat_map_iter(|&idx| {
            let aux = ensemble.auxiliary_mask(idx);
            analyze_with(&dft, x, aux.mask.diag()).into_iter().map(|c| c.norm_sqr())
        })
        .collect();
    Ok(MeasurementSet {
        dim: ensemble.dim(),
        count: ensemble.count(),
        set: ensemble.modulation_set().clone(),
        vertex,
        edge,
        noise_variance: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub variance: f64,
    pub seed: u64,
}

/// Adds independent `N(0, variance)` to every intensity, vertices first and
/// then edges, each in storage order. Negative results are kept.
pub fn add_noise(meas: &MeasurementSet, noise: &NoiseModel) -> Result<MeasurementSet> {
    if !noise.variance.is_finite() || noise.variance < 0.0 {
        return Err(Error::invalid(format!("noise variance {} must be finite and >= 0", noise.variance)));
    }
    let mut out = meas.clone();
    out.noise_variance = meas.noise_variance + noise.variance;
    if noise.variance == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, noise.variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_from_seed(noise.seed);
    for v in out.vertex.iter_mut().chain(out.edge.iter_mut()) {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}
