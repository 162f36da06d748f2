//! Masked-DFT intensity measurements and polarization-based phase retrieval.
//!
//! A signal `x` in `C^M` is observed only through intensities
//! `|<x, D_k f_m>|^2`, where `D_k` is a diagonal mask and `f_m` the complex
//! sinusoid `(1/M) exp(2 pi i m l / M)`. Vertex masks give a full-spark frame;
//! auxiliary masks `D_k + w^r E^a D_k'` (with `w = exp(2 pi i / 3)` and `E`
//! the modulation operator) measure relative phases between vertex
//! measurements along the edges of a Cayley-type graph over `Z_M`.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`masks`] | vertex and auxiliary masks, full-spark test, ensembles |
//! | [`setgen`] | random symmetric modulation sets, Fourier bias, gap bounds |
//! | [`graph`] | the polarization graph and its spectral gap |
//! | [`measure`] | intensity simulation and additive noise |
//! | [`recover`] | edge weights, pruning, angular synchronization, least squares |
//! | [`bench`] | seeded experiment driver, summaries and SVG plots |

pub mod bench;
pub mod dft;
pub mod error;
pub mod graph;
pub mod masks;
pub mod measure;
pub mod recover;
pub mod rng;
pub mod setgen;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
