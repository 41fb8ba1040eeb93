//! Matrix-free spectral solver for the periodic corrector problems on the
//! unit cell: the mixed second/fourth-order problem driven by unit
//! macroscopic gradients and the pure fourth-order problem driven by unit
//! macroscopic second gradients.
//!
//! Derivatives are exact in frequency space, variable-coefficient tensor
//! contractions happen pointwise in physical space, and each corrector is
//! found by conjugate gradients on the zero-mean subspace, preconditioned by
//! a constant-reference operator inverted diagonally in frequency space.
//! Hessian symbols are products of first-derivative symbols, so the discrete
//! operators are exactly self-adjoint and annihilate exactly the grid modes
//! with vanishing spectral derivative; right-hand sides are divergences and
//! therefore orthogonal to that kernel by construction.

use crate::error::{Error, Result};
use crate::microstructure::{CellGrid, CoefficientField};
use crate::spectral::Spectral;
use num_complex::Complex64;
use rayon::prelude::*;

/// Allowed relative mean of a field that is supposed to have zero mean.
pub const MEAN_TOL: f64 = 1e-13;

/// Vector field on a periodic cell grid with one value per component per
/// node, stored component-major, with zero mean in every component.
#[derive(Clone, Debug)]
pub struct PeriodicVectorField {
    grid: CellGrid,
    data: Vec<f64>,
}

impl PeriodicVectorField {
    pub fn zeros(grid: CellGrid) -> Self {
        let len = grid.dim() * grid.num_nodes();
        Self {
            grid,
            data: vec![0.0; len],
        }
    }

    /// Wraps component-major nodal values, projecting out the mean of each
    /// component; values must be finite and of length `dim * num_nodes`.
    pub fn from_data(grid: CellGrid, data: Vec<f64>) -> Result<Self> {
        let expected = grid.dim() * grid.num_nodes();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid needs {expected}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("vector field".into()));
        }
        let mut field = Self { grid, data };
        field.project_zero_mean();
        Ok(field)
    }

    /// Wraps stored nodal values without re-projecting, so a round trip
    /// through disk reproduces the bytes exactly. The zero-mean invariant is
    /// still checked.
    pub fn from_stored(grid: CellGrid, data: Vec<f64>) -> Result<Self> {
        let expected = grid.dim() * grid.num_nodes();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid needs {expected}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("vector field".into()));
        }
        let field = Self { grid, data };
        let mean = field.max_mean();
        let scale = field.max_abs().max(1.0);
        if mean > MEAN_TOL * scale {
            return Err(Error::Format(format!(
                "stored field has component mean {mean:.3e}, expected zero"
            )));
        }
        Ok(field)
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let nn = self.grid.num_nodes();
        &self.data[c * nn..(c + 1) * nn]
    }

    /// Subtracts the mean of each component.
    pub fn project_zero_mean(&mut self) {
        let nn = self.grid.num_nodes();
        for c in 0..self.grid.dim() {
            let slice = &mut self.data[c * nn..(c + 1) * nn];
            let mean = slice.iter().sum::<f64>() / nn as f64;
            for v in slice.iter_mut() {
                *v -= mean;
            }
        }
    }

    /// Largest component mean, for checking the zero-mean invariant.
    pub fn max_mean(&self) -> f64 {
        let nn = self.grid.num_nodes();
        (0..self.grid.dim())
            .map(|c| (self.component(c).iter().sum::<f64>() / nn as f64).abs())
            .fold(0.0, f64::max)
    }

    /// L^2 norm over the cell (trapezoidal weights, exact on the torus).
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.node_weight();
        (self.data.iter().map(|v| v * v).sum::<f64>() * w).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L^2 inner product over the cell.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch("fields live on different grids".into()));
        }
        let w = self.grid.node_weight();
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * w)
    }
}

/// Conjugate-gradient controls and the constant reference medium behind the
/// frequency-diagonal preconditioner.
#[derive(Clone, Copy, Debug)]
pub struct SolverParams {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// `(c_ref, a_ref)`; when absent, the means of the pointwise minimum
    /// ellipticity eigenvalues of K and A are used.
    pub reference_medium: Option<(f64, f64)>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_iter: 1000,
            reference_medium: None,
        }
    }
}

/// One solved corrector with its iteration count and relative residual.
#[derive(Clone, Debug)]
pub struct CorrectorSolve {
    pub field: PeriodicVectorField,
    pub iterations: usize,
    pub residual: f64,
}

/// Correctors for every unit macroscopic gradient direction (alpha, beta).
#[derive(Clone, Debug)]
pub struct CorrectorHs1 {
    grid: CellGrid,
    fields: Vec<PeriodicVectorField>,
    residuals: Vec<f64>,
    iterations: Vec<usize>,
}

impl CorrectorHs1 {
    /// Rebuilds a corrector set from stored parts: one field, residual, and
    /// iteration count per (alpha, beta) slot in row-major order.
    pub fn from_parts(
        grid: CellGrid,
        fields: Vec<PeriodicVectorField>,
        residuals: Vec<f64>,
        iterations: Vec<usize>,
    ) -> Result<Self> {
        let slots = grid.dim() * grid.dim();
        check_parts(&grid, slots, &fields, &residuals, &iterations)?;
        Ok(Self { grid, fields, residuals, iterations })
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn field(&self, alpha: usize, beta: usize) -> &PeriodicVectorField {
        let d = self.grid.dim();
        assert!(alpha < d && beta < d, "corrector index out of range");
        &self.fields[alpha * d + beta]
    }

    pub fn residual(&self, alpha: usize, beta: usize) -> f64 {
        let d = self.grid.dim();
        assert!(alpha < d && beta < d, "corrector index out of range");
        self.residuals[alpha * d + beta]
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }
}

/// Correctors for every unit macroscopic second-gradient direction
/// (alpha, beta, gamma).
#[derive(Clone, Debug)]
pub struct CorrectorHs2 {
    grid: CellGrid,
    fields: Vec<PeriodicVectorField>,
    residuals: Vec<f64>,
    iterations: Vec<usize>,
}

impl CorrectorHs2 {
    /// Rebuilds a corrector set from stored parts: one field, residual, and
    /// iteration count per (alpha, beta, gamma) slot in row-major order.
    pub fn from_parts(
        grid: CellGrid,
        fields: Vec<PeriodicVectorField>,
        residuals: Vec<f64>,
        iterations: Vec<usize>,
    ) -> Result<Self> {
        let slots = grid.dim() * grid.dim() * grid.dim();
        check_parts(&grid, slots, &fields, &residuals, &iterations)?;
        Ok(Self { grid, fields, residuals, iterations })
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn field(&self, alpha: usize, beta: usize, gamma: usize) -> &PeriodicVectorField {
        let d = self.grid.dim();
        assert!(alpha < d && beta < d && gamma < d, "corrector index out of range");
        &self.fields[(alpha * d + beta) * d + gamma]
    }

    pub fn residual(&self, alpha: usize, beta: usize, gamma: usize) -> f64 {
        let d = self.grid.dim();
        assert!(alpha < d && beta < d && gamma < d, "corrector index out of range");
        self.residuals[(alpha * d + beta) * d + gamma]
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }
}

fn check_parts(
    grid: &CellGrid,
    slots: usize,
    fields: &[PeriodicVectorField],
    residuals: &[f64],
    iterations: &[usize],
) -> Result<()> {
    if fields.len() != slots || residuals.len() != slots || iterations.len() != slots {
        return Err(Error::ShapeMismatch(format!(
            "expected {slots} corrector slots, got {} fields, {} residuals, {} iteration counts",
            fields.len(),
            residuals.len(),
            iterations.len()
        )));
    }
    if fields.iter().any(|f| f.grid() != grid) {
        return Err(Error::ShapeMismatch(
            "corrector fields live on different grids".into(),
        ));
    }
    if !residuals.iter().all(|r| r.is_finite() && *r >= 0.0) {
        return Err(Error::NonFinite("corrector residuals".into()));
    }
    Ok(())
}

/// Spectral machinery bound to one coefficient field: transforms, frequency
/// tables, operator applications, and right-hand sides.
struct Engine<'f> {
    field: &'f CoefficientField,
    spec: Spectral,
    d: usize,
    nn: usize,
    /// Squared frequency magnitude per node index, Nyquist included.
    xi2: Vec<f64>,
}

impl<'f> Engine<'f> {
    fn new(field: &'f CoefficientField) -> Result<Self> {
        let grid = *field.grid();
        let d = grid.dim();
        let nn = grid.num_nodes();
        let spec = Spectral::new(d, grid.nodes_per_axis())?;
        let two_pi = 2.0 * std::f64::consts::PI;
        let xi2 = (0..nn)
            .map(|lin| {
                let multi = grid.index_to_multi(lin);
                (0..d)
                    .map(|ax| {
                        let f = two_pi * spec.freq(multi[ax]) as f64;
                        f * f
                    })
                    .sum()
            })
            .collect();
        Ok(Self { field, spec, d, nn, xi2 })
    }

    /// Spectral gradient and Hessian of every component of a component-major
    /// field; either part can be skipped. The Hessian is symmetric in its two
    /// derivative axes because the symbols commute.
    fn derivatives(
        &self,
        data: &[f64],
        want_grad: bool,
        want_hess: bool,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.d;
        let nn = self.nn;
        let mut grads = if want_grad { vec![Vec::new(); d * d] } else { Vec::new() };
        let mut hess = if want_hess { vec![Vec::new(); d * d * d] } else { Vec::new() };
        for c in 0..d {
            let mut hat = Spectral::to_complex(&data[c * nn..(c + 1) * nn]);
            self.spec.forward(&mut hat);
            if want_grad {
                for ax in 0..d {
                    let mut dh = hat.clone();
                    self.spec.derivative_hat(&mut dh, ax);
                    self.spec.inverse(&mut dh);
                    grads[c * d + ax] = Spectral::to_real(&dh);
                }
            }
            if want_hess {
                for l in 0..d {
                    for p in l..d {
                        let mut hh = hat.clone();
                        self.spec.derivative_hat(&mut hh, l);
                        self.spec.derivative_hat(&mut hh, p);
                        self.spec.inverse(&mut hh);
                        let vals = Spectral::to_real(&hh);
                        if p != l {
                            hess[(c * d + p) * d + l] = vals.clone();
                        }
                        hess[(c * d + l) * d + p] = vals;
                    }
                }
            }
        }
        (grads, hess)
    }

    /// Assembles `-D_j T_ij + D_j D_k M_ijk` in frequency space and returns
    /// the component-major result with the mean mode removed.
    fn divergence(&self, t: Option<&[Vec<f64>]>, m: Option<&[Vec<f64>]>) -> Vec<f64> {
        let d = self.d;
        let nn = self.nn;
        let mut out = vec![0.0; d * nn];
        for i in 0..d {
            let mut acc = vec![Complex64::new(0.0, 0.0); nn];
            if let Some(t) = t {
                for j in 0..d {
                    let mut hat = Spectral::to_complex(&t[i * d + j]);
                    self.spec.forward(&mut hat);
                    self.spec.derivative_hat(&mut hat, j);
                    for (a, b) in acc.iter_mut().zip(hat.iter()) {
                        *a -= b;
                    }
                }
            }
            if let Some(m) = m {
                for j in 0..d {
                    for k in 0..d {
                        let mut hat = Spectral::to_complex(&m[(i * d + j) * d + k]);
                        self.spec.forward(&mut hat);
                        self.spec.derivative_hat(&mut hat, j);
                        self.spec.derivative_hat(&mut hat, k);
                        for (a, b) in acc.iter_mut().zip(hat.iter()) {
                            *a += b;
                        }
                    }
                }
            }
            acc[0] = Complex64::new(0.0, 0.0);
            self.spec.inverse(&mut acc);
            for (slot, v) in out[i * nn..(i + 1) * nn].iter_mut().zip(acc.iter()) {
                *slot = v.re;
            }
        }
        out
    }

    /// Pointwise stress and hyperstress of a field: `T = K grad`,
    /// `M = A hess`, as node-major scalar fields per tensor slot.
    fn fluxes(&self, data: &[f64], want_t: bool, want_m: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.d;
        let nn = self.nn;
        let dd = d * d;
        let ddd = dd * d;
        let (grads, hess) = self.derivatives(data, want_t, want_m);
        let mut t_fields = if want_t { vec![vec![0.0; nn]; dd] } else { Vec::new() };
        let mut m_fields = if want_m { vec![vec![0.0; nn]; ddd] } else { Vec::new() };
        let mut gn = vec![0.0; dd];
        let mut qn = vec![0.0; ddd];
        let mut tn = vec![0.0; dd];
        let mut mn = vec![0.0; ddd];
        for node in 0..nn {
            if want_t {
                for idx in 0..dd {
                    gn[idx] = grads[idx][node];
                }
                self.field.k_at(node).apply_into(&gn, &mut tn);
                for idx in 0..dd {
                    t_fields[idx][node] = tn[idx];
                }
            }
            if want_m {
                for idx in 0..ddd {
                    qn[idx] = hess[idx][node];
                }
                self.field.a_at(node).apply_into(&qn, &mut mn);
                for idx in 0..ddd {
                    m_fields[idx][node] = mn[idx];
                }
            }
        }
        (t_fields, m_fields)
    }

    /// Operator of the mixed problem: divergence of `K grad` plus double
    /// divergence of `A hess`.
    fn apply_hs1(&self, data: &[f64]) -> Vec<f64> {
        let (t_fields, m_fields) = self.fluxes(data, true, true);
        self.divergence(Some(&t_fields), Some(&m_fields))
    }

    /// Operator of the pure fourth-order problem.
    fn apply_hs2(&self, data: &[f64]) -> Vec<f64> {
        let (_, m_fields) = self.fluxes(data, false, true);
        self.divergence(None, Some(&m_fields))
    }

    /// Right-hand side of the mixed problem: divergence of the stress the
    /// unit gradient e_alpha x e_beta induces through K.
    fn rhs_hs1(&self, alpha: usize, beta: usize) -> Vec<f64> {
        let d = self.d;
        let nn = self.nn;
        let mut out = vec![0.0; d * nn];
        for i in 0..d {
            let mut acc = vec![Complex64::new(0.0, 0.0); nn];
            for j in 0..d {
                let vals: Vec<f64> = (0..nn)
                    .map(|node| self.field.k_at(node).get(i, j, alpha, beta))
                    .collect();
                let mut hat = Spectral::to_complex(&vals);
                self.spec.forward(&mut hat);
                self.spec.derivative_hat(&mut hat, j);
                for (a, b) in acc.iter_mut().zip(hat.iter()) {
                    *a += b;
                }
            }
            acc[0] = Complex64::new(0.0, 0.0);
            self.spec.inverse(&mut acc);
            for (slot, v) in out[i * nn..(i + 1) * nn].iter_mut().zip(acc.iter()) {
                *slot = v.re;
            }
        }
        out
    }

    /// Right-hand side of the fourth-order problem: minus the double
    /// divergence of the hyperstress the unit second gradient induces
    /// through A.
    fn rhs_hs2(&self, alpha: usize, beta: usize, gamma: usize) -> Vec<f64> {
        let d = self.d;
        let nn = self.nn;
        let mut out = vec![0.0; d * nn];
        for i in 0..d {
            let mut acc = vec![Complex64::new(0.0, 0.0); nn];
            for j in 0..d {
                for k in 0..d {
                    let vals: Vec<f64> = (0..nn)
                        .map(|node| self.field.a_at(node).get(i, j, k, alpha, beta, gamma))
                        .collect();
                    let mut hat = Spectral::to_complex(&vals);
                    self.spec.forward(&mut hat);
                    self.spec.derivative_hat(&mut hat, j);
                    self.spec.derivative_hat(&mut hat, k);
                    for (a, b) in acc.iter_mut().zip(hat.iter()) {
                        *a -= b;
                    }
                }
            }
            acc[0] = Complex64::new(0.0, 0.0);
            self.spec.inverse(&mut acc);
            for (slot, v) in out[i * nn..(i + 1) * nn].iter_mut().zip(acc.iter()) {
                *slot = v.re;
            }
        }
        out
    }

    /// Applies the inverse of the constant-reference operator with symbol
    /// `c_ref |xi|^2 + a_ref |xi|^4` (`a_ref |xi|^4` alone for the pure
    /// fourth-order problem); the mean mode is annihilated.
    fn precondition(&self, r: &[f64], c_ref: f64, a_ref: f64, fourth_only: bool) -> Vec<f64> {
        let d = self.d;
        let nn = self.nn;
        let mut out = vec![0.0; d * nn];
        for c in 0..d {
            let mut hat = Spectral::to_complex(&r[c * nn..(c + 1) * nn]);
            self.spec.forward(&mut hat);
            hat[0] = Complex64::new(0.0, 0.0);
            for lin in 1..nn {
                let x2 = self.xi2[lin];
                let s = if fourth_only {
                    a_ref * x2 * x2
                } else {
                    c_ref * x2 + a_ref * x2 * x2
                };
                hat[lin] /= s;
            }
            self.spec.inverse(&mut hat);
            for (slot, v) in out[c * nn..(c + 1) * nn].iter_mut().zip(hat.iter()) {
                *slot = v.re;
            }
        }
        out
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn check_same_grid(field: &CoefficientField, v: &PeriodicVectorField) -> Result<()> {
    if *field.grid() != *v.grid() {
        return Err(Error::ShapeMismatch(
            "vector field grid does not match coefficient grid".into(),
        ));
    }
    Ok(())
}

fn check_indices(d: usize, indices: &[usize]) -> Result<()> {
    if indices.iter().any(|&i| i >= d) {
        return Err(Error::ShapeMismatch(format!(
            "direction index out of range for dimension {d}"
        )));
    }
    Ok(())
}

/// Energy of the mixed problem between two fields:
/// `integral of K grad(phi) : grad(psi) + A hess(phi) : hess(psi)`.
pub fn apply_hs1_form(
    field: &CoefficientField,
    phi: &PeriodicVectorField,
    psi: &PeriodicVectorField,
) -> Result<f64> {
    check_same_grid(field, phi)?;
    check_same_grid(field, psi)?;
    let engine = Engine::new(field)?;
    let (t_phi, m_phi) = engine.fluxes(phi.data(), true, true);
    let (g_psi, q_psi) = engine.derivatives(psi.data(), true, true);
    let d = engine.d;
    let mut total = 0.0;
    for idx in 0..d * d {
        total += dot(&t_phi[idx], &g_psi[idx]);
    }
    for idx in 0..d * d * d {
        total += dot(&m_phi[idx], &q_psi[idx]);
    }
    Ok(total * field.grid().node_weight())
}

/// Energy of the pure fourth-order problem between two fields:
/// `integral of A hess(w) : hess(xi)`.
pub fn apply_hs2_form(
    field: &CoefficientField,
    w: &PeriodicVectorField,
    xi: &PeriodicVectorField,
) -> Result<f64> {
    check_same_grid(field, w)?;
    check_same_grid(field, xi)?;
    let engine = Engine::new(field)?;
    let (_, m_w) = engine.fluxes(w.data(), false, true);
    let (_, q_xi) = engine.derivatives(xi.data(), false, true);
    let d = engine.d;
    let mut total = 0.0;
    for idx in 0..d * d * d {
        total += dot(&m_w[idx], &q_xi[idx]);
    }
    Ok(total * field.grid().node_weight())
}

/// Load functional of the mixed problem:
/// `- integral of K (e_alpha x e_beta) : grad(psi)`.
pub fn hs1_rhs(
    field: &CoefficientField,
    alpha: usize,
    beta: usize,
    psi: &PeriodicVectorField,
) -> Result<f64> {
    check_same_grid(field, psi)?;
    let d = field.grid().dim();
    check_indices(d, &[alpha, beta])?;
    let engine = Engine::new(field)?;
    let (g_psi, _) = engine.derivatives(psi.data(), true, false);
    let nn = engine.nn;
    let mut total = 0.0;
    for node in 0..nn {
        let k = field.k_at(node);
        for i in 0..d {
            for j in 0..d {
                total += k.get(i, j, alpha, beta) * g_psi[i * d + j][node];
            }
        }
    }
    Ok(-total * field.grid().node_weight())
}

/// Load functional of the fourth-order problem:
/// `- integral of A (e_alpha x e_beta x e_gamma) : hess(xi)`.
pub fn hs2_rhs(
    field: &CoefficientField,
    alpha: usize,
    beta: usize,
    gamma: usize,
    xi: &PeriodicVectorField,
) -> Result<f64> {
    check_same_grid(field, xi)?;
    let d = field.grid().dim();
    check_indices(d, &[alpha, beta, gamma])?;
    let engine = Engine::new(field)?;
    let (_, q_xi) = engine.derivatives(xi.data(), false, true);
    let nn = engine.nn;
    let mut total = 0.0;
    for node in 0..nn {
        let a = field.a_at(node);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    total += a.get(i, j, k, alpha, beta, gamma) * q_xi[(i * d + j) * d + k][node];
                }
            }
        }
    }
    Ok(-total * field.grid().node_weight())
}

fn mean_min_eigenvalue_k(field: &CoefficientField) -> Result<f64> {
    let nn = field.grid().num_nodes();
    let mut sum = 0.0;
    for node in 0..nn {
        sum += field.k_at(node).ellipticity_estimate()?.min_eigenvalue;
    }
    Ok(sum / nn as f64)
}

fn mean_min_eigenvalue_a(field: &CoefficientField) -> Result<f64> {
    let nn = field.grid().num_nodes();
    let mut sum = 0.0;
    for node in 0..nn {
        sum += field.a_at(node).ellipticity_estimate()?.min_eigenvalue;
    }
    Ok(sum / nn as f64)
}

fn resolve_reference(
    field: &CoefficientField,
    params: &SolverParams,
    fourth_only: bool,
) -> Result<(f64, f64)> {
    if params.rel_tol <= 0.0 || !params.rel_tol.is_finite() {
        return Err(Error::Format(format!(
            "solver tolerance must be positive and finite, got {}",
            params.rel_tol
        )));
    }
    let (c_ref, a_ref) = match params.reference_medium {
        Some((c, a)) => {
            if !(c > 0.0 && a > 0.0) || !c.is_finite() || !a.is_finite() {
                return Err(Error::Format(format!(
                    "reference medium must be positive and finite, got ({c}, {a})"
                )));
            }
            (c, a)
        }
        None => {
            let a = mean_min_eigenvalue_a(field)?.max(0.0);
            if fourth_only {
                if a <= 0.0 {
                    return Err(Error::InvalidMaterial(
                        "fourth-order coefficient is not elliptic on average".into(),
                    ));
                }
                (0.0, a)
            } else {
                let c = mean_min_eigenvalue_k(field)?;
                if c <= 0.0 {
                    return Err(Error::InvalidMaterial(
                        "gradient coefficient is not elliptic on average".into(),
                    ));
                }
                (c, a)
            }
        }
    };
    Ok((c_ref, a_ref))
}

fn tensor_field_is_constant<T: PartialEq>(items: &[T]) -> bool {
    items.windows(2).all(|w| w[0] == w[1])
}

/// Preconditioned conjugate gradients on the zero-mean subspace; declares
/// success only after recomputing the true residual. Finite precision puts a
/// floor of about `eps * |operator| * |x| / |b|` under the attainable true
/// residual, so convergence is accepted at that floor when it sits above the
/// requested tolerance; stalls against the floor are detected rather than
/// iterated away.
#[allow(clippy::too_many_arguments)]
fn pcg(
    engine: &Engine,
    apply: &dyn Fn(&Engine, &[f64]) -> Vec<f64>,
    b: &[f64],
    c_ref: f64,
    a_ref: f64,
    fourth_only: bool,
    rel_tol: f64,
    max_iter: usize,
    op_bound: f64,
) -> Result<(Vec<f64>, usize, f64, Vec<f64>)> {
    let norm_b = euclid(b);
    if norm_b == 0.0 {
        return Ok((vec![0.0; b.len()], 0, 0.0, vec![0.0]));
    }
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut z = engine.precondition(&r, c_ref, a_ref, fourth_only);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    let mut iterations = 0;
    let mut best_true = f64::INFINITY;
    let mut stalls = 0;
    while iterations < max_iter {
        iterations += 1;
        let ap = apply(engine, &p);
        let pap = dot(&p, &ap);
        let breakdown = !pap.is_finite() || pap <= 0.0;
        if !breakdown {
            let alpha = rz / pap;
            for ((xi, pi), (ri, api)) in x
                .iter_mut()
                .zip(p.iter())
                .zip(r.iter_mut().zip(ap.iter()))
            {
                *xi += alpha * pi;
                *ri -= alpha * api;
            }
        }
        let rel = euclid(&r) / norm_b;
        history.push(rel);
        if breakdown || rel <= rel_tol {
            let ax = apply(engine, &x);
            let r_true: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
            let rel_true = euclid(&r_true) / norm_b;
            let floor = 32.0 * f64::EPSILON * (op_bound * euclid(&x) + norm_b) / norm_b;
            if rel_true <= rel_tol.max(floor) {
                return Ok((x, iterations, rel_true, history));
            }
            if rel_true >= 0.5 * best_true {
                stalls += 1;
                if stalls >= 3 || breakdown {
                    return Err(Error::SolverDiverged {
                        iterations,
                        residual: rel_true,
                        history,
                    });
                }
            }
            best_true = best_true.min(rel_true);
            r = r_true;
            z = engine.precondition(&r, c_ref, a_ref, fourth_only);
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }
        z = engine.precondition(&r, c_ref, a_ref, fourth_only);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(z.iter()) {
            *pi = zi + beta * *pi;
        }
    }
    let residual = history.last().copied().unwrap_or(1.0);
    Err(Error::SolverDiverged {
        iterations,
        residual,
        history,
    })
}

fn solve_generic(
    field: &CoefficientField,
    params: &SolverParams,
    fourth_only: bool,
    rhs: impl Fn(&Engine) -> Vec<f64>,
) -> Result<CorrectorSolve> {
    let constant = if fourth_only {
        tensor_field_is_constant(field.a_field())
    } else {
        tensor_field_is_constant(field.k_field())
    };
    if constant {
        return Ok(CorrectorSolve {
            field: PeriodicVectorField::zeros(*field.grid()),
            iterations: 0,
            residual: 0.0,
        });
    }
    let (c_ref, a_ref) = resolve_reference(field, params, fourth_only)?;
    let engine = Engine::new(field)?;
    let b = rhs(&engine);
    let apply: &dyn Fn(&Engine, &[f64]) -> Vec<f64> = if fourth_only {
        &|e, v| e.apply_hs2(v)
    } else {
        &|e, v| e.apply_hs1(v)
    };
    let (cal_k, _, cal_a) = crate::scaling::tensor_maxima(field);
    let x2m = engine.xi2.iter().fold(0.0f64, |m, v| m.max(*v));
    let op_bound = if fourth_only {
        cal_a * x2m * x2m
    } else {
        cal_k * x2m + cal_a * x2m * x2m
    };
    let (x, iterations, residual, _history) = pcg(
        &engine,
        apply,
        &b,
        c_ref,
        a_ref,
        fourth_only,
        params.rel_tol,
        params.max_iter,
        op_bound,
    )?;
    let mut corrector = PeriodicVectorField::from_data(*field.grid(), x)?;
    corrector.project_zero_mean();
    Ok(CorrectorSolve {
        field: corrector,
        iterations,
        residual,
    })
}

/// Solves the mixed corrector problem for the unit gradient
/// `e_alpha x e_beta`.
pub fn solve_corrector_hs1(
    field: &CoefficientField,
    alpha: usize,
    beta: usize,
    params: &SolverParams,
) -> Result<CorrectorSolve> {
    check_indices(field.grid().dim(), &[alpha, beta])?;
    solve_generic(field, params, false, |e| e.rhs_hs1(alpha, beta))
}

/// Solves the fourth-order corrector problem for the unit second gradient
/// `e_alpha x e_beta x e_gamma`.
pub fn solve_corrector_hs2(
    field: &CoefficientField,
    alpha: usize,
    beta: usize,
    gamma: usize,
    params: &SolverParams,
) -> Result<CorrectorSolve> {
    check_indices(field.grid().dim(), &[alpha, beta, gamma])?;
    solve_generic(field, params, true, |e| e.rhs_hs2(alpha, beta, gamma))
}

/// Solves all d^2 mixed correctors; the independent solves run in parallel
/// and the result is ordered by `(alpha, beta)` regardless of scheduling.
pub fn solve_all_hs1(field: &CoefficientField, params: &SolverParams) -> Result<CorrectorHs1> {
    let d = field.grid().dim();
    let solves: Vec<CorrectorSolve> = (0..d * d)
        .into_par_iter()
        .map(|idx| solve_corrector_hs1(field, idx / d, idx % d, params))
        .collect::<Result<_>>()?;
    let mut fields = Vec::with_capacity(solves.len());
    let mut residuals = Vec::with_capacity(solves.len());
    let mut iterations = Vec::with_capacity(solves.len());
    for s in solves {
        fields.push(s.field);
        residuals.push(s.residual);
        iterations.push(s.iterations);
    }
    Ok(CorrectorHs1 {
        grid: *field.grid(),
        fields,
        residuals,
        iterations,
    })
}

/// Solves all d^3 fourth-order correctors in parallel, ordered by
/// `(alpha, beta, gamma)`.
pub fn solve_all_hs2(field: &CoefficientField, params: &SolverParams) -> Result<CorrectorHs2> {
    let d = field.grid().dim();
    let solves: Vec<CorrectorSolve> = (0..d * d * d)
        .into_par_iter()
        .map(|idx| solve_corrector_hs2(field, idx / (d * d), (idx / d) % d, idx % d, params))
        .collect::<Result<_>>()?;
    let mut fields = Vec::with_capacity(solves.len());
    let mut residuals = Vec::with_capacity(solves.len());
    let mut iterations = Vec::with_capacity(solves.len());
    for s in solves {
        fields.push(s.field);
        residuals.push(s.residual);
        iterations.push(s.iterations);
    }
    Ok(CorrectorHs2 {
        grid: *field.grid(),
        fields,
        residuals,
        iterations,
    })
}

/// Relative strong-form residual of a candidate mixed corrector; when the
/// load vanishes the absolute operator norm is returned instead.
pub fn residual_hs1(
    field: &CoefficientField,
    alpha: usize,
    beta: usize,
    phi: &PeriodicVectorField,
) -> Result<f64> {
    check_same_grid(field, phi)?;
    check_indices(field.grid().dim(), &[alpha, beta])?;
    let engine = Engine::new(field)?;
    let b = engine.rhs_hs1(alpha, beta);
    let ax = engine.apply_hs1(phi.data());
    let r: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
    let norm_b = euclid(&b);
    if norm_b == 0.0 {
        return Ok(euclid(&r));
    }
    Ok(euclid(&r) / norm_b)
}

/// Relative strong-form residual of a candidate fourth-order corrector.
pub fn residual_hs2(
    field: &CoefficientField,
    alpha: usize,
    beta: usize,
    gamma: usize,
    w: &PeriodicVectorField,
) -> Result<f64> {
    check_same_grid(field, w)?;
    check_indices(field.grid().dim(), &[alpha, beta, gamma])?;
    let engine = Engine::new(field)?;
    let b = engine.rhs_hs2(alpha, beta, gamma);
    let ax = engine.apply_hs2(w.data());
    let r: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
    let norm_b = euclid(&b);
    if norm_b == 0.0 {
        return Ok(euclid(&r));
    }
    Ok(euclid(&r) / norm_b)
}
