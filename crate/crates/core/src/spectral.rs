//! Fourier collocation utilities on uniform periodic grids.
//!
//! Samples live on offset nodes (cell centers); because forward and inverse
//! transforms are always paired, the offset phase cancels and derivatives
//! come out exact at the same nodes. First derivatives use the symbol
//! `2 pi i m` with the Nyquist mode zeroed (the standard odd-derivative
//! convention on even grids); mixed and repeated second derivatives compose
//! two first-derivative symbols, which keeps every assembled operator
//! exactly self-adjoint.

use crate::error::{Error, Result};
use crate::tensor::MAX_DIM;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Spectral {
    d: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidGeometry(format!(
                "dimension must be 1, 2, or 3, got {d}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 nodes per axis, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            d,
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Signed integer frequency of bin `k` along one axis.
    pub fn freq(&self, k: usize) -> i64 {
        if k < self.n.div_ceil(2) {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    fn is_nyquist(&self, k: usize) -> bool {
        self.n % 2 == 0 && k == self.n / 2
    }

    /// First-derivative symbol for bin `k`: `2 pi i m`, zero at Nyquist.
    pub fn first_deriv_factor(&self, k: usize) -> Complex64 {
        if self.is_nyquist(k) {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, 2.0 * std::f64::consts::PI * self.freq(k) as f64)
        }
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, forward: bool) {
        let n = self.n;
        let total = self.num_nodes();
        let stride = n.pow((self.d - 1 - axis) as u32);
        let jump = stride * n;
        let plan = if forward { &self.fwd } else { &self.inv };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for block in 0..total / jump {
            for off in 0..stride {
                let base = block * jump + off;
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[base + t * stride];
                }
                plan.process(&mut line);
                for (t, v) in line.iter().enumerate() {
                    data[base + t * stride] = *v;
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.num_nodes());
        for axis in 0..self.d {
            self.transform_axis(data, axis, true);
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.num_nodes());
        for axis in 0..self.d {
            self.transform_axis(data, axis, false);
        }
        let scale = 1.0 / self.num_nodes() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Multiply a spectrum in place by the first-derivative symbol along
    /// `axis`.
    pub fn derivative_hat(&self, hat: &mut [Complex64], axis: usize) {
        let n = self.n;
        let stride = n.pow((self.d - 1 - axis) as u32);
        for (lin, v) in hat.iter_mut().enumerate() {
            let k = (lin / stride) % n;
            *v *= self.first_deriv_factor(k);
        }
    }

    pub fn to_complex(f: &[f64]) -> Vec<Complex64> {
        f.iter().map(|v| Complex64::new(*v, 0.0)).collect()
    }

    pub fn to_real(c: &[Complex64]) -> Vec<f64> {
        c.iter().map(|v| v.re).collect()
    }

    /// d/dx_axis of a real field via one transform round trip.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let mut hat = Self::to_complex(f);
        self.forward(&mut hat);
        self.derivative_hat(&mut hat, axis);
        self.inverse(&mut hat);
        Self::to_real(&hat)
    }

    /// Composed second derivative d²/dx_a dx_b of a real field.
    pub fn second_derivative(&self, f: &[f64], axis_a: usize, axis_b: usize) -> Vec<f64> {
        let mut hat = Self::to_complex(f);
        self.forward(&mut hat);
        self.derivative_hat(&mut hat, axis_a);
        self.derivative_hat(&mut hat, axis_b);
        self.inverse(&mut hat);
        Self::to_real(&hat)
    }
}
