//! The normalized DFT `(F* x)(m) = (1/M) sum_l x(l) exp(-2 pi i m l / M)`
//! and its inverse, backed by `rustfft`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward/inverse transforms for one length.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place `F*`: forward transform scaled by `1/M`.
    pub fn analyze_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
        let scale = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }

    /// In-place synthesis `x(l) = sum_m c(m) exp(2 pi i m l / M)`, the exact
    /// inverse of [`Dft::analyze_in_place`].
    pub fn synthesize_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
    }
}
