//! One-dimensional boundary-value solves on the unit interval with clamped
//! endpoints: fine-scale problems with oscillating coefficients, their
//! homogenized counterparts, and the diagnostics connecting the two
//! (convergence studies, coupling-independence probes, coercivity estimates).
//!
//! The discretization is a C1-conforming piecewise-cubic (Hermite) Galerkin
//! method, so second derivatives live in the trial space and the fourth-order
//! term is handled without mixed formulations. Displacement is pinned at both
//! endpoints; the double traction is left natural, i.e. endpoint slopes stay
//! free. In one dimension the tangential surface terms vanish identically, so
//! this exhausts the boundary conditions.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{solve_all_hs1, solve_all_hs2, SolverParams};
use crate::effective::{assemble_a_eff, assemble_k_eff, assemble_k_mean};
use crate::microstructure::CoefficientField;
use crate::scaling::{regime_multipliers, Regime};
use crate::{Error, Result};

/// Gauss-Legendre rule on [0,1], exact through polynomial degree 7.
const GAUSS: [(f64, f64); 4] = [
    (0.069431844202973714, 0.17392742256872693),
    (0.33000947820757187, 0.32607257743127305),
    (0.66999052179242813, 0.32607257743127305),
    (0.930568155797026286, 0.17392742256872693),
];

/// Minimum number of elements per oscillation period in fine-scale solves.
pub const MIN_ELEMENTS_PER_PERIOD: usize = 8;

/// Loads drawn by [`coercivity_probe`] when estimating the stability constant.
pub const STABILITY_LOADS: usize = 5;

/// Uniform mesh of the unit interval carrying two degrees of freedom per node
/// (value and slope).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh1D {
    num_elements: usize,
}

impl Mesh1D {
    pub fn uniform(num_elements: usize) -> Result<Self> {
        if num_elements < 2 {
            return Err(Error::InvalidGeometry(format!(
                "mesh needs at least 2 elements, got {num_elements}"
            )));
        }
        Ok(Self { num_elements })
    }

    /// Mesh whose element boundaries align with the period boundaries of an
    /// oscillation of size `epsilon`, with at least
    /// [`MIN_ELEMENTS_PER_PERIOD`] elements per period. Material interfaces at
    /// rational positions within the period line up with element boundaries
    /// whenever `elements_per_period` is a multiple of their denominator; a
    /// plain [`Mesh1D::uniform`] mesh deliberately breaks that alignment for
    /// robustness checks.
    pub fn resolving(epsilon: f64, elements_per_period: usize) -> Result<Self> {
        let periods = periods_in_unit_interval(epsilon)?;
        let per = elements_per_period.max(MIN_ELEMENTS_PER_PERIOD);
        Self::uniform(periods * per)
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.num_elements as f64
    }

    pub fn num_dofs(&self) -> usize {
        2 * (self.num_elements + 1)
    }
}

fn periods_in_unit_interval(epsilon: f64) -> Result<usize> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon > 1.0 {
        return Err(Error::InvalidGeometry(format!(
            "oscillation size must lie in (0, 1], got {epsilon}"
        )));
    }
    let periods = (1.0 / epsilon).round();
    if ((1.0 / epsilon) - periods).abs() > 1e-9 {
        return Err(Error::InvalidGeometry(format!(
            "the unit interval must contain a whole number of periods, got 1/{epsilon}"
        )));
    }
    Ok(periods as usize)
}

/// Hermite shape functions on one element: values, first and second
/// derivatives with respect to the physical coordinate, at local coordinate
/// `t` in [0,1] for element size `h`. Degree-of-freedom order is (left value,
/// left slope, right value, right slope).
fn shape(t: f64, h: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let v = [
        1.0 - 3.0 * t * t + 2.0 * t * t * t,
        h * t * (1.0 - t) * (1.0 - t),
        3.0 * t * t - 2.0 * t * t * t,
        h * t * t * (t - 1.0),
    ];
    let d1 = [
        6.0 * t * (t - 1.0) / h,
        (1.0 - t) * (1.0 - 3.0 * t),
        6.0 * t * (1.0 - t) / h,
        t * (3.0 * t - 2.0),
    ];
    let d2 = [
        (12.0 * t - 6.0) / (h * h),
        (6.0 * t - 4.0) / h,
        (6.0 - 12.0 * t) / (h * h),
        (6.0 * t - 2.0) / h,
    ];
    (v, d1, d2)
}

/// A discrete solution: nodal values and slopes on its mesh, with evaluators
/// for the function and its first two derivatives, and the discrete energy
/// `B[u,u]`. The endpoint values are zero by construction.
#[derive(Debug, Clone)]
pub struct Solution1D {
    mesh: Mesh1D,
    coeffs: Vec<f64>,
    energy: f64,
}

impl Solution1D {
    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let ne = self.mesh.num_elements;
        let clamped = x.clamp(0.0, 1.0);
        let e = ((clamped * ne as f64).floor() as usize).min(ne - 1);
        let t = clamped * ne as f64 - e as f64;
        (e, t)
    }

    pub fn value(&self, x: f64) -> f64 {
        let (e, t) = self.locate(x);
        let (v, _, _) = shape(t, self.mesh.spacing());
        (0..4).map(|i| self.coeffs[2 * e + i] * v[i]).sum()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (e, t) = self.locate(x);
        let (_, d1, _) = shape(t, self.mesh.spacing());
        (0..4).map(|i| self.coeffs[2 * e + i] * d1[i]).sum()
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let (e, t) = self.locate(x);
        let (_, _, d2) = shape(t, self.mesh.spacing());
        (0..4).map(|i| self.coeffs[2 * e + i] * d2[i]).sum()
    }
}

/// Pointwise coefficients of the bilinear form at a physical coordinate:
/// `(k, s_stress, s_moment, a)` multiply `u'v'`, `u''v'`, `u'v''`, `u''v''`.
type CoefficientFn<'a> = &'a (dyn Fn(f64) -> (f64, f64, f64, f64) + Sync);
type LoadFn<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

fn assemble(mesh: &Mesh1D, coeff: CoefficientFn, g: LoadFn) -> (DMatrix<f64>, DVector<f64>) {
    let ne = mesh.num_elements;
    let h = mesh.spacing();
    let ndof = mesh.num_dofs();
    let mut b = DMatrix::<f64>::zeros(ndof, ndof);
    let mut f = DVector::<f64>::zeros(ndof);
    for e in 0..ne {
        for &(t, w) in GAUSS.iter() {
            let x = (e as f64 + t) * h;
            let (k, s_stress, s_moment, a) = coeff(x);
            let (v, d1, d2) = shape(t, h);
            let gw = g(x) * w * h;
            for i in 0..4 {
                let row = 2 * e + i;
                f[row] += gw * v[i];
                for j in 0..4 {
                    let col = 2 * e + j;
                    b[(row, col)] += w
                        * h
                        * (k * d1[j] * d1[i]
                            + s_stress * d2[j] * d1[i]
                            + s_moment * d1[j] * d2[i]
                            + a * d2[j] * d2[i]);
                }
            }
        }
    }
    (b, f)
}

fn constrained_dofs(mesh: &Mesh1D) -> [usize; 2] {
    [0, 2 * mesh.num_elements]
}

fn reduce(mesh: &Mesh1D, full: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
    let constrained = constrained_dofs(mesh);
    let keep: Vec<usize> = (0..mesh.num_dofs())
        .filter(|d| !constrained.contains(d))
        .collect();
    let m = keep.len();
    let mut red = DMatrix::<f64>::zeros(m, m);
    for (ri, &di) in keep.iter().enumerate() {
        for (rj, &dj) in keep.iter().enumerate() {
            red[(ri, rj)] = full[(di, dj)];
        }
    }
    (keep, red)
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

fn solve_clamped(mesh: &Mesh1D, coeff: CoefficientFn, g: LoadFn) -> Result<Solution1D> {
    let (b_full, f_full) = assemble(mesh, coeff, g);
    let (keep, b_red) = reduce(mesh, &b_full);
    let f_red = DVector::from_iterator(keep.len(), keep.iter().map(|&d| f_full[d]));

    let chol = match b_red.clone().cholesky() {
        Some(c) => c,
        None => {
            return Err(Error::NotCoercive {
                margin: min_symmetric_eigenvalue(&b_red),
            })
        }
    };
    let x = chol.solve(&f_red);
    let energy = x.dot(&(&b_red * &x));
    if !energy.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discrete solution is not finite".into()));
    }

    let mut coeffs = vec![0.0f64; mesh.num_dofs()];
    for (ri, &d) in keep.iter().enumerate() {
        coeffs[d] = x[ri];
    }
    Ok(Solution1D { mesh: *mesh, coeffs, energy })
}

fn scalar_samples(field: &CoefficientField) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if field.grid().dim() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "macroscopic solves are one-dimensional, got a {}-dimensional field",
            field.grid().dim()
        )));
    }
    let nn = field.grid().num_nodes();
    let mut k = Vec::with_capacity(nn);
    let mut s = Vec::with_capacity(nn);
    let mut a = Vec::with_capacity(nn);
    for m in 0..nn {
        k.push(field.k_at(m).get(0, 0, 0, 0));
        s.push(field.s_at(m).get(0, 0, 0, 0, 0));
        a.push(field.a_at(m).get(0, 0, 0, 0, 0, 0));
    }
    Ok((k, s, a))
}

fn cell_index(x: f64, epsilon: f64, n: usize) -> usize {
    let y = (x / epsilon).fract();
    let y = if y < 0.0 { y + 1.0 } else { y };
    ((y * n as f64).floor() as usize).min(n - 1)
}

/// Galerkin solution of the fine-scale problem on (0,1): the coefficients are
/// the cell field traversed at period `epsilon`, with the coupling and
/// gradient terms scaled by the powers of `epsilon` belonging to the regime.
/// The mesh must resolve the oscillation with at least
/// [`MIN_ELEMENTS_PER_PERIOD`] elements per period. Fails with the computed
/// margin when the assembled form is not positive definite.
pub fn solve_fine_1d(
    field: &CoefficientField,
    epsilon: f64,
    regime: Regime,
    g: LoadFn,
    mesh: &Mesh1D,
) -> Result<Solution1D> {
    let periods = periods_in_unit_interval(epsilon)?;
    if mesh.num_elements() < MIN_ELEMENTS_PER_PERIOD * periods {
        return Err(Error::InvalidGeometry(format!(
            "mesh has {} elements but {} periods need at least {}",
            mesh.num_elements(),
            periods,
            MIN_ELEMENTS_PER_PERIOD * periods
        )));
    }
    let mult = regime_multipliers(regime)?;
    let (k, s, a) = scalar_samples(field)?;
    let n = field.grid().nodes_per_axis();
    let s_stress_scale = epsilon.powf(mult.s_in_sigma);
    let s_moment_scale = epsilon.powf(mult.s_in_mu);
    let a_scale = epsilon.powf(mult.a_in_mu);

    let coeff = move |x: f64| {
        let m = cell_index(x, epsilon, n);
        (
            k[m],
            s_stress_scale * s[m],
            s_moment_scale * s[m],
            a_scale * a[m],
        )
    };
    solve_clamped(mesh, &coeff, g)
}

/// Solution of the homogenized second-order problem: `k_eff u'' = -g` in weak
/// form with clamped endpoints.
pub fn solve_homog_hs1_1d(k_eff: f64, g: LoadFn, mesh: &Mesh1D) -> Result<Solution1D> {
    if !k_eff.is_finite() || k_eff <= 0.0 {
        return Err(Error::InvalidMaterial(format!(
            "homogenized stiffness must be positive, got {k_eff}"
        )));
    }
    solve_clamped(mesh, &move |_| (k_eff, 0.0, 0.0, 0.0), g)
}

/// Solution of the homogenized fourth-order problem: averaged second-order
/// stiffness plus homogenized gradient stiffness, clamped endpoint values,
/// natural (weakly zero) double traction at the endpoints.
pub fn solve_homog_hs2_1d(
    k_mean: f64,
    a_eff: f64,
    g: LoadFn,
    mesh: &Mesh1D,
) -> Result<Solution1D> {
    if !k_mean.is_finite() || k_mean <= 0.0 || !a_eff.is_finite() || a_eff <= 0.0 {
        return Err(Error::InvalidMaterial(format!(
            "homogenized moduli must be positive, got k = {k_mean}, a = {a_eff}"
        )));
    }
    solve_clamped(mesh, &move |_| (k_mean, 0.0, 0.0, a_eff), g)
}

/// Work of the load against a discrete solution, `∫ g u`, by element
/// quadrature on the solution's own mesh.
pub fn load_work(sol: &Solution1D, g: LoadFn) -> f64 {
    let ne = sol.mesh.num_elements();
    let h = sol.mesh.spacing();
    let mut acc = 0.0;
    for e in 0..ne {
        for &(t, w) in GAUSS.iter() {
            let x = (e as f64 + t) * h;
            acc += w * h * g(x) * sol.value(x);
        }
    }
    acc
}

/// L2 and full H1 distances between two discrete solutions, integrated on the
/// finer of the two meshes.
pub fn solution_distance(a: &Solution1D, b: &Solution1D) -> (f64, f64) {
    let ne = a.mesh.num_elements().max(b.mesh.num_elements());
    let h = 1.0 / ne as f64;
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for e in 0..ne {
        for &(t, w) in GAUSS.iter() {
            let x = (e as f64 + t) * h;
            let dv = a.value(x) - b.value(x);
            let dd = a.derivative(x) - b.derivative(x);
            l2 += w * h * dv * dv;
            h1 += w * h * dd * dd;
        }
    }
    (l2.sqrt(), (l2 + h1).sqrt())
}

fn l2_norm_of_load(g: LoadFn, mesh: &Mesh1D) -> f64 {
    let ne = mesh.num_elements();
    let h = mesh.spacing();
    let mut acc = 0.0;
    for e in 0..ne {
        for &(t, w) in GAUSS.iter() {
            let x = (e as f64 + t) * h;
            acc += w * h * g(x) * g(x);
        }
    }
    acc.sqrt()
}

/// Regime-weighted solution norm `(‖u‖²_{H¹} + w ‖u''‖²)^{1/2}` with
/// `w = ε^b`, the gradient-term power of the regime.
pub fn weighted_norm(sol: &Solution1D, second_derivative_weight: f64) -> f64 {
    let ne = sol.mesh.num_elements();
    let h = sol.mesh.spacing();
    let mut acc = 0.0;
    for e in 0..ne {
        for &(t, w) in GAUSS.iter() {
            let x = (e as f64 + t) * h;
            let v = sol.value(x);
            let d = sol.derivative(x);
            let q = sol.second_derivative(x);
            acc += w * h * (v * v + d * d + second_derivative_weight * q * q);
        }
    }
    acc.sqrt()
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Format("the list of oscillation sizes is empty".into()));
    }
    for pair in eps_list.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::Format(format!(
                "oscillation sizes must strictly decrease, got {} before {}",
                pair[0], pair[1]
            )));
        }
    }
    for &eps in eps_list {
        periods_in_unit_interval(eps)?;
    }
    Ok(())
}

/// One row of a convergence study: distances between the fine-scale solution
/// at `epsilon` and the homogenized limit, the two discrete energies, and the
/// stability constant (weighted solution norm over load norm).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub l2_error: f64,
    pub h1_error: f64,
    pub energy_fine: f64,
    pub energy_homog: f64,
    pub stability_const: f64,
}

/// Run the whole pipeline for one cell field: solve the cell problems, build
/// the effective scalar moduli, solve the homogenized problem once, then solve
/// the fine-scale problem for every `epsilon` and report the distances.
pub fn convergence_study(
    field: &CoefficientField,
    regime: Regime,
    eps_list: &[f64],
    g: LoadFn,
    elements_per_period: usize,
    params: &SolverParams,
) -> Result<Vec<ConvergenceRow>> {
    check_eps_list(eps_list)?;
    let mult = regime_multipliers(regime)?;
    let eps_min = *eps_list.last().unwrap();
    let reference_mesh = Mesh1D::resolving(eps_min, elements_per_period)?;

    let homog = match regime {
        Regime::Hs1 => {
            let correctors = solve_all_hs1(field, params)?;
            let k_eff = assemble_k_eff(field, &correctors)?.get(0, 0, 0, 0);
            solve_homog_hs1_1d(k_eff, g, &reference_mesh)?
        }
        Regime::Hs2 => {
            let correctors = solve_all_hs2(field, params)?;
            let k_mean = assemble_k_mean(field)?.get(0, 0, 0, 0);
            let a_eff = assemble_a_eff(field, &correctors)?.get(0, 0, 0, 0, 0, 0);
            solve_homog_hs2_1d(k_mean, a_eff, g, &reference_mesh)?
        }
        Regime::Other => unreachable!("rejected by regime_multipliers"),
    };

    eps_list
        .par_iter()
        .map(|&epsilon| {
            let mesh = Mesh1D::resolving(epsilon, elements_per_period)?;
            let fine = solve_fine_1d(field, epsilon, regime, g, &mesh)?;
            let (l2_error, h1_error) = solution_distance(&fine, &homog);
            let stability_const =
                weighted_norm(&fine, epsilon.powf(mult.a_in_mu)) / l2_norm_of_load(g, &mesh);
            Ok(ConvergenceRow {
                epsilon,
                l2_error,
                h1_error,
                energy_fine: fine.energy(),
                energy_homog: homog.energy(),
                stability_const,
            })
        })
        .collect()
}

/// One row of a coupling-independence probe: the L2 distance between the
/// fine-scale solutions of two fields that differ only in their coupling
/// tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingDifferenceRow {
    pub epsilon: f64,
    pub l2_difference: f64,
}

/// Solve the fine-scale problem for two fields sharing the same second-order
/// and gradient stiffness but different coupling tensors, and report the L2
/// distance between the solutions for each oscillation size. The homogenized
/// limit contains no coupling contribution, so the distances must shrink.
pub fn s_independence_probe(
    field_a: &CoefficientField,
    field_b: &CoefficientField,
    regime: Regime,
    eps_list: &[f64],
    g: LoadFn,
    elements_per_period: usize,
) -> Result<Vec<CouplingDifferenceRow>> {
    check_eps_list(eps_list)?;
    regime_multipliers(regime)?;
    let (k_a, _, a_a) = scalar_samples(field_a)?;
    let (k_b, _, a_b) = scalar_samples(field_b)?;
    if k_a != k_b || a_a != a_b {
        return Err(Error::Inconsistent(
            "the two fields must share the same second-order and gradient stiffness".into(),
        ));
    }

    eps_list
        .par_iter()
        .map(|&epsilon| {
            let mesh = Mesh1D::resolving(epsilon, elements_per_period)?;
            let ua = solve_fine_1d(field_a, epsilon, regime, g, &mesh)?;
            let ub = solve_fine_1d(field_b, epsilon, regime, g, &mesh)?;
            let (l2_difference, _) = solution_distance(&ua, &ub);
            Ok(CouplingDifferenceRow { epsilon, l2_difference })
        })
        .collect()
}

/// Result of a coercivity probe: the smallest Rayleigh quotient of the
/// assembled form against the regime-weighted norm (from the generalized
/// eigenvalue problem, sharpened by random sampling), whether it is positive,
/// and — when it is — the worst stability constant over [`STABILITY_LOADS`]
/// random loads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub c_est: f64,
    pub passes: bool,
    pub stability_constant: Option<f64>,
    pub trials: usize,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Estimate the coercivity constant of the fine-scale form at one oscillation
/// size: assemble the form and the regime-weighted norm on a resolving mesh,
/// compute the minimum generalized Rayleigh quotient, and cross-check it with
/// `trials` random admissible directions.
pub fn coercivity_probe(
    field: &CoefficientField,
    epsilon: f64,
    regime: Regime,
    trials: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    if trials < 100 {
        return Err(Error::Format(format!(
            "coercivity probe needs at least 100 trials, got {trials}"
        )));
    }
    let mult = regime_multipliers(regime)?;
    let mesh = Mesh1D::resolving(epsilon, MIN_ELEMENTS_PER_PERIOD)?;
    let (k, s, a) = scalar_samples(field)?;
    let n = field.grid().nodes_per_axis();
    let s_stress_scale = epsilon.powf(mult.s_in_sigma);
    let s_moment_scale = epsilon.powf(mult.s_in_mu);
    let a_scale = epsilon.powf(mult.a_in_mu);
    let coeff = move |x: f64| {
        let m = cell_index(x, epsilon, n);
        (
            k[m],
            s_stress_scale * s[m],
            s_moment_scale * s[m],
            a_scale * a[m],
        )
    };
    let norm_weight = epsilon.powf(mult.a_in_mu);
    let norm_coeff = move |_: f64| (1.0, 0.0, 0.0, norm_weight);
    let zero = |_: f64| 0.0;

    let (b_full, _) = assemble(&mesh, &coeff, &zero);
    let (keep, b_red) = reduce(&mesh, &b_full);
    let (mut n_full, _) = assemble(&mesh, &norm_coeff, &zero);
    // The weighted norm also carries the L2 term, which the form assembly has
    // no slot for; add the value-value mass here.
    add_mass(&mut n_full, &mesh);
    let (_, n_red) = reduce(&mesh, &n_full);

    let chol_n = n_red
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Inconsistent("the weighted norm Gram matrix is singular".into()))?;
    let l = chol_n.l();
    let y = l
        .solve_lower_triangular(&b_red)
        .ok_or_else(|| Error::Inconsistent("triangular solve failed".into()))?;
    let m = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Inconsistent("triangular solve failed".into()))?
        .transpose();
    let mut c_est = min_symmetric_eigenvalue(&m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dofs = keep.len();
    for _ in 0..trials {
        let v = DVector::from_iterator(dofs, (0..dofs).map(|_| uniform(&mut rng)));
        let denom = v.dot(&(&n_red * &v));
        if denom > 0.0 {
            c_est = c_est.min(v.dot(&(&b_red * &v)) / denom);
        }
    }
    let passes = c_est > 0.0;

    let stability_constant = if passes {
        let chol_b = b_red
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Inconsistent("positive form failed to factorize".into()))?;
        let mut worst = 0.0f64;
        for _ in 0..STABILITY_LOADS {
            let amps: Vec<f64> = (0..4).map(|_| uniform(&mut rng)).collect();
            let g = move |x: f64| {
                amps.iter()
                    .enumerate()
                    .map(|(kk, amp)| amp * ((kk + 1) as f64 * std::f64::consts::PI * x).sin())
                    .sum()
            };
            let (_, f_full) = assemble(&mesh, &norm_coeff, &g);
            let f_red = DVector::from_iterator(dofs, keep.iter().map(|&d| f_full[d]));
            let x = chol_b.solve(&f_red);
            let norm2 = x.dot(&(&n_red * &x));
            let gnorm = l2_norm_of_load(&g, &mesh);
            if gnorm > 0.0 {
                worst = worst.max(norm2.max(0.0).sqrt() / gnorm);
            }
        }
        Some(worst)
    } else {
        None
    };

    Ok(CoercivityReport { c_est, passes, stability_constant, trials })
}

fn add_mass(matrix: &mut DMatrix<f64>, mesh: &Mesh1D) {
    let ne = mesh.num_elements();
    let h = mesh.spacing();
    for e in 0..ne {
        for &(t, w) in GAUSS.iter() {
            let (v, _, _) = shape(t, h);
            for i in 0..4 {
                for j in 0..4 {
                    matrix[(2 * e + i, 2 * e + j)] += w * h * v[j] * v[i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{chiral_S, laminate, CellGrid, CoefficientField, PhaseTensors};
    use crate::tensor::{Tensor4, Tensor5, Tensor6};
    use gradhom_oracle::bvp1d;

    fn scalar_phase(kv: f64, av: f64) -> PhaseTensors {
        let mut k = Tensor4::zeros(1).unwrap();
        k.set(0, 0, 0, 0, kv);
        let s = Tensor5::zeros(1).unwrap();
        let mut a = Tensor6::zeros(1).unwrap();
        a.set(0, 0, 0, 0, 0, 0, av);
        PhaseTensors::new(k, s, a).unwrap()
    }

    fn constant_scalar_field(n: usize, kv: f64, av: f64) -> CoefficientField {
        let grid = CellGrid::new(1, n).unwrap();
        let phase = scalar_phase(kv, av);
        laminate(grid, 0, 0.5, &phase, &phase).unwrap()
    }

    fn two_phase_k(n: usize) -> CoefficientField {
        let grid = CellGrid::new(1, n).unwrap();
        laminate(grid, 0, 0.5, &scalar_phase(1.0, 1.0), &scalar_phase(4.0, 1.0)).unwrap()
    }

    fn two_phase_a(n: usize) -> CoefficientField {
        let grid = CellGrid::new(1, n).unwrap();
        laminate(grid, 0, 0.5, &scalar_phase(1.0, 1.0), &scalar_phase(1.0, 4.0)).unwrap()
    }

    fn with_coupling(base: &CoefficientField, amplitude: f64, pitch: u32) -> CoefficientField {
        let grid = *base.grid();
        let nn = grid.num_nodes();
        let k: Vec<Tensor4> = (0..nn).map(|m| base.k_at(m).clone()).collect();
        let a: Vec<Tensor6> = (0..nn).map(|m| base.a_at(m).clone()).collect();
        let s = chiral_S(grid, amplitude, pitch).unwrap();
        CoefficientField::from_parts(grid, k, s, a).unwrap()
    }

    fn closed_form_fourth(x: f64) -> f64 {
        // Solution of -u'' + u'''' = 1 with u(0) = u(1) = 0 and u''(0) = u''(1) = 0.
        x * (1.0 - x) / 2.0 + ((x - 0.5).cosh() / 0.5f64.cosh() - 1.0)
    }

    #[test]
    fn mesh_constructors_validate() {
        assert!(Mesh1D::uniform(1).is_err());
        assert!(Mesh1D::resolving(0.3, 8).is_err());
        assert!(Mesh1D::resolving(0.0, 8).is_err());
        let mesh = Mesh1D::resolving(0.25, 4).unwrap();
        assert_eq!(mesh.num_elements(), 4 * MIN_ELEMENTS_PER_PERIOD);
        assert_eq!(Mesh1D::resolving(0.125, 16).unwrap().num_elements(), 128);
    }

    #[test]
    fn homog_hs1_reproduces_closed_forms() {
        let mesh = Mesh1D::uniform(32).unwrap();
        let u = solve_homog_hs1_1d(1.0, &|_| 1.0, &mesh).unwrap();
        for i in 0..=64 {
            let x = i as f64 / 64.0;
            assert!((u.value(x) - x * (1.0 - x) / 2.0).abs() <= 1e-12);
        }
        assert!((u.value(0.5) - 0.125).abs() <= 1e-12);

        let doubled = solve_homog_hs1_1d(2.0, &|_| 1.0, &mesh).unwrap();
        assert!((doubled.value(0.25) - 0.5 * u.value(0.25)).abs() <= 1e-12);

        let fine = Mesh1D::uniform(64).unwrap();
        let sine = solve_homog_hs1_1d(1.0, &|x| (std::f64::consts::PI * x).sin(), &fine).unwrap();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        for i in 1..64 {
            let x = i as f64 / 64.0;
            let exact = (std::f64::consts::PI * x).sin() / pi2;
            assert!((sine.value(x) - exact).abs() <= 1e-6);
        }
    }

    #[test]
    fn homog_hs2_matches_oracle_and_closed_form() {
        let mesh = Mesh1D::uniform(128).unwrap();
        let u = solve_homog_hs2_1d(1.0, 1.0, &|_| 1.0, &mesh).unwrap();
        for i in 0..=128 {
            let x = i as f64 / 128.0;
            assert!(
                (u.value(x) - closed_form_fourth(x)).abs() <= 1e-8,
                "x = {x}"
            );
        }

        let oracle = bvp1d::second_fourth_bvp_richardson(&|_| 1.0, &|_| 1.0, &|_| 1.0, 256);
        for (i, &x) in oracle.nodes.iter().enumerate() {
            assert!((u.value(x) - oracle.u[i]).abs() <= 1e-8, "x = {x}");
        }
    }

    #[test]
    fn hs2_with_vanishing_gradient_term_approaches_hs1() {
        let mesh = Mesh1D::uniform(64).unwrap();
        let g = |x: f64| 1.0 + 0.3 * (2.0 * std::f64::consts::PI * x).cos();
        let second = solve_homog_hs1_1d(1.3, &g, &mesh).unwrap();
        let fourth = solve_homog_hs2_1d(1.3, 1e-10, &g, &mesh).unwrap();
        let (l2, _) = solution_distance(&fourth, &second);
        assert!(l2 <= 1e-4, "distance {l2}");
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let field = two_phase_k(8);
        let mesh = Mesh1D::resolving(0.125, 8).unwrap();
        let u = solve_fine_1d(&field, 0.125, Regime::Hs1, &|_| 0.0, &mesh).unwrap();
        assert!(u.coeffs().iter().all(|c| c.abs() <= 1e-12));
        assert!(u.energy().abs() <= 1e-20);
    }

    #[test]
    fn fine_constant_coefficients_match_closed_form() {
        let field = constant_scalar_field(8, 1.0, 1.0);
        let mesh = Mesh1D::resolving(0.25, 32).unwrap();
        let u = solve_fine_1d(&field, 0.25, Regime::Hs2, &|_| 1.0, &mesh).unwrap();
        for i in 1..32 {
            let x = i as f64 / 32.0;
            let exact = closed_form_fourth(x);
            assert!(
                (u.value(x) - exact).abs() <= 1e-6 * exact.abs().max(1e-2),
                "x = {x}: {} vs {exact}",
                u.value(x)
            );
        }
    }

    #[test]
    fn fine_energy_equals_load_work_and_gradients_oscillate() {
        // A small gradient modulus keeps the interface layers thin relative to
        // the period, so the two-phase slope contrast stays visible.
        let grid = CellGrid::new(1, 8).unwrap();
        let field = laminate(
            grid,
            0,
            0.5,
            &scalar_phase(1.0, 1e-4),
            &scalar_phase(4.0, 1e-4),
        )
        .unwrap();
        let epsilon = 1.0 / 16.0;
        let mesh = Mesh1D::resolving(epsilon, 8).unwrap();
        let u = solve_fine_1d(&field, epsilon, Regime::Hs1, &|_| 1.0, &mesh).unwrap();

        let work = load_work(&u, &|_| 1.0);
        assert!((u.energy() - work).abs() <= 1e-10 * work.abs());

        // Slopes inside the stiff and compliant halves of one period differ.
        let x_soft = 0.25 + 0.25 * epsilon;
        let x_stiff = 0.25 + 0.75 * epsilon;
        let ratio = u.derivative(x_soft) / u.derivative(x_stiff);
        assert!(
            (ratio - 4.0).abs() <= 1.0,
            "slope ratio {ratio} shows no phase contrast"
        );
    }

    #[test]
    fn misaligned_mesh_still_solves_consistently() {
        let field = two_phase_k(8);
        let epsilon = 0.125;
        let aligned = solve_fine_1d(
            &field,
            epsilon,
            Regime::Hs1,
            &|_| 1.0,
            &Mesh1D::resolving(epsilon, 16).unwrap(),
        )
        .unwrap();
        let misaligned = solve_fine_1d(
            &field,
            epsilon,
            Regime::Hs1,
            &|_| 1.0,
            &Mesh1D::uniform(100).unwrap(),
        )
        .unwrap();
        let work = load_work(&misaligned, &|_| 1.0);
        assert!((misaligned.energy() - work).abs() <= 1e-10 * work.abs());
        assert!((misaligned.energy() - aligned.energy()).abs() <= 0.05 * aligned.energy());
    }

    #[test]
    fn homog_solution_inherits_load_symmetry() {
        let mesh = Mesh1D::uniform(64).unwrap();
        let g = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let u = solve_homog_hs2_1d(1.0, 0.5, &g, &mesh).unwrap();
        for i in 0..=32 {
            let x = i as f64 / 64.0;
            assert!((u.value(1.0 - x) + u.value(x)).abs() <= 1e-10);
        }
    }

    #[test]
    fn natural_double_traction_vanishes_under_refinement() {
        let mut traces = Vec::new();
        for ne in [16usize, 32, 64] {
            let mesh = Mesh1D::uniform(ne).unwrap();
            let u = solve_homog_hs2_1d(1.0, 1.0, &|_| 1.0, &mesh).unwrap();
            traces.push(u.second_derivative(0.0).abs());
        }
        assert!(traces[1] < traces[0]);
        assert!(traces[2] < traces[1]);
    }

    #[test]
    fn convergence_study_hs1_errors_decrease() {
        let field = two_phase_k(8);
        let eps = [0.125, 0.0625, 0.03125];
        let rows = convergence_study(
            &field,
            Regime::Hs1,
            &eps,
            &|_| 1.0,
            8,
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].l2_error < rows[0].l2_error, "{rows:?}");
        assert!(rows[2].l2_error < rows[1].l2_error, "{rows:?}");
        for row in &rows {
            assert!(row.h1_error >= row.l2_error);
            assert!(row.energy_fine.is_finite() && row.energy_homog.is_finite());
        }
        let consts: Vec<f64> = rows.iter().map(|r| r.stability_const).collect();
        let max = consts.iter().cloned().fold(f64::MIN, f64::max);
        let min = consts.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 2.0, "stability constants {consts:?}");
    }

    #[test]
    fn convergence_study_hs2_errors_decrease() {
        let field = two_phase_a(8);
        let eps = [0.125, 0.0625, 0.03125];
        let rows = convergence_study(
            &field,
            Regime::Hs2,
            &eps,
            &|_| 1.0,
            8,
            &SolverParams::default(),
        )
        .unwrap();
        assert!(rows[1].l2_error < rows[0].l2_error, "{rows:?}");
        assert!(rows[2].l2_error < rows[1].l2_error, "{rows:?}");
    }

    #[test]
    fn coupling_differences_decrease_with_period() {
        let base = two_phase_k(8);
        let with_s = with_coupling(&base, 4.0, 1);
        let eps = [0.125, 0.0625, 0.03125];

        for regime in [Regime::Hs1, Regime::Hs2] {
            let rows =
                s_independence_probe(&base, &with_s, regime, &eps, &|_| 1.0, 8).unwrap();
            assert!(rows[0].l2_difference > 0.0, "{regime:?}: {rows:?}");
            assert!(
                rows[1].l2_difference < rows[0].l2_difference,
                "{regime:?}: {rows:?}"
            );
            assert!(
                rows[2].l2_difference < rows[1].l2_difference,
                "{regime:?}: {rows:?}"
            );
        }

        let same = s_independence_probe(&base, &base, Regime::Hs1, &eps, &|_| 1.0, 8).unwrap();
        for row in same {
            assert!(row.l2_difference <= 1e-14);
        }
    }

    #[test]
    fn coercivity_probe_accepts_plain_field() {
        let field = constant_scalar_field(8, 1.0, 1.0);
        let report = coercivity_probe(&field, 0.125, Regime::Hs2, 100, 5).unwrap();
        assert!(report.passes);
        assert!(report.c_est >= 0.5, "c_est = {}", report.c_est);
        let stability = report.stability_constant.unwrap();
        assert!(stability.is_finite() && stability > 0.0);
    }

    #[test]
    fn coercivity_probe_flags_strong_coupling_at_coarse_scale() {
        let grid = CellGrid::new(1, 64).unwrap();
        let nn = grid.num_nodes();
        let mut k = Vec::with_capacity(nn);
        let mut a = Vec::with_capacity(nn);
        for _ in 0..nn {
            let mut kt = Tensor4::zeros(1).unwrap();
            kt.set(0, 0, 0, 0, 1.0);
            k.push(kt);
            a.push(Tensor6::diagonal(0.1, 1).unwrap());
        }
        let s = chiral_S(grid, 10.0, 2).unwrap();
        let field = CoefficientField::from_parts(grid, k, s, a).unwrap();

        let coarse = coercivity_probe(&field, 0.5, Regime::Hs2, 100, 3).unwrap();
        assert!(!coarse.passes, "c_est = {}", coarse.c_est);
        assert!(coarse.c_est < 0.0);
        assert!(coarse.stability_constant.is_none());

        let fine = coercivity_probe(&field, 1.0 / 32.0, Regime::Hs2, 100, 3).unwrap();
        assert!(fine.passes, "c_est = {}", fine.c_est);

        let mesh = Mesh1D::resolving(0.5, 8).unwrap();
        assert!(matches!(
            solve_fine_1d(&field, 0.5, Regime::Hs2, &|_| 1.0, &mesh),
            Err(Error::NotCoercive { .. })
        ));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mesh = Mesh1D::uniform(16).unwrap();
        assert!(solve_homog_hs1_1d(0.0, &|_| 1.0, &mesh).is_err());
        assert!(solve_homog_hs1_1d(-1.0, &|_| 1.0, &mesh).is_err());
        assert!(solve_homog_hs2_1d(1.0, 0.0, &|_| 1.0, &mesh).is_err());

        let field = two_phase_k(8);
        assert!(matches!(
            solve_fine_1d(&field, 0.25, Regime::Hs1, &|_| 1.0, &Mesh1D::uniform(8).unwrap()),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(convergence_study(
            &field,
            Regime::Other,
            &[0.125, 0.0625],
            &|_| 1.0,
            8,
            &SolverParams::default()
        )
        .is_err());
        assert!(convergence_study(
            &field,
            Regime::Hs1,
            &[0.0625, 0.125],
            &|_| 1.0,
            8,
            &SolverParams::default()
        )
        .is_err());
        assert!(coercivity_probe(&field, 0.125, Regime::Hs1, 99, 0).is_err());

        let other = two_phase_a(8);
        assert!(matches!(
            s_independence_probe(&field, &other, Regime::Hs1, &[0.125], &|_| 1.0, 8),
            Err(Error::Inconsistent(_))
        ));
    }
}
