//! Assembly of homogenized tensors from solved cell correctors, together with
//! structural verification: major symmetry, ellipticity, and upper-bound margins
//! against the plain cell average.

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CorrectorHs1, CorrectorHs2};
use crate::microstructure::CoefficientField;
use crate::spectral::Spectral;
use crate::tensor::{Tensor4, Tensor6};
use crate::{Error, Result};

/// Number of random unit-norm directions probed per tensor in [`verify_effective`],
/// in addition to the eigenbasis of the averaged-minus-effective difference.
pub const VOIGT_SAMPLES: usize = 200;

/// Absolute tolerance on upper-bound margins: a margin below `-MARGIN_TOL` fails.
pub const MARGIN_TOL: f64 = 1e-10;

/// Relative major-symmetry defect above which [`verify_effective`] reports failure.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Homogenized tensors produced by one run; parts not applicable to the regime stay `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveTensors {
    pub k_eff: Option<Tensor4>,
    pub k_mean: Option<Tensor4>,
    pub a_eff: Option<Tensor6>,
}

impl EffectiveTensors {
    pub fn hs1(k_eff: Tensor4) -> Self {
        Self { k_eff: Some(k_eff), k_mean: None, a_eff: None }
    }

    pub fn hs2(k_mean: Tensor4, a_eff: Tensor6) -> Self {
        Self { k_eff: None, k_mean: Some(k_mean), a_eff: Some(a_eff) }
    }
}

/// Verification summary for a set of effective tensors. Symmetry defects are
/// relative to the largest entry; margins are signed, with negative values
/// meaning the effective quadratic form exceeded the averaged one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub k_eff_symmetry_defect: Option<f64>,
    pub k_eff_min_eigenvalue: Option<f64>,
    pub k_voigt_min_margin: Option<f64>,
    pub k_mean_min_eigenvalue: Option<f64>,
    pub a_eff_symmetry_defect: Option<f64>,
    pub a_eff_min_eigenvalue: Option<f64>,
    pub a_voigt_min_margin: Option<f64>,
    pub samples_per_tensor: usize,
    pub margin_tolerance: f64,
    pub symmetry_tolerance: f64,
    pub pass: bool,
}

fn check_grids(field: &CoefficientField, grid: &crate::microstructure::CellGrid) -> Result<()> {
    if *field.grid() != *grid {
        return Err(Error::ShapeMismatch(
            "coefficient field and correctors live on different grids".into(),
        ));
    }
    Ok(())
}

fn ensure_finite4(t: Tensor4, what: &str) -> Result<Tensor4> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(t)
    } else {
        Err(Error::NonFinite(format!("{what} contains a non-finite entry")))
    }
}

fn ensure_finite6(t: Tensor6, what: &str) -> Result<Tensor6> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(t)
    } else {
        Err(Error::NonFinite(format!("{what} contains a non-finite entry")))
    }
}

/// Cell average of the second-order stiffness, `<K>`.
pub fn assemble_k_mean(field: &CoefficientField) -> Result<Tensor4> {
    let d = field.grid().dim();
    let nn = field.grid().num_nodes();
    let w = 1.0 / nn as f64;
    let mut mean = Tensor4::zeros(d)?;
    for node in 0..nn {
        mean.add_scaled(field.k_at(node), w)?;
    }
    ensure_finite4(mean, "averaged stiffness")
}

/// Cell average of the gradient stiffness, `<A>`.
pub fn assemble_a_mean(field: &CoefficientField) -> Result<Tensor6> {
    let d = field.grid().dim();
    let nn = field.grid().num_nodes();
    let w = 1.0 / nn as f64;
    let mut mean = Tensor6::zeros(d)?;
    for node in 0..nn {
        mean.add_scaled(field.a_at(node), w)?;
    }
    ensure_finite6(mean, "averaged gradient stiffness")
}

/// Homogenized second-order stiffness: the cell average of the stress response
/// to each unit mean gradient, corrected by the first-family correctors,
///
/// `K_eff[i,j,a,b] = < K[i,j,k,l] (δ_ak δ_bl + D_l φ^{ab}_k) >`.
///
/// No symmetrization is applied afterwards; any asymmetry left by an
/// unconverged solve stays visible to [`verify_effective`].
pub fn assemble_k_eff(field: &CoefficientField, correctors: &CorrectorHs1) -> Result<Tensor4> {
    check_grids(field, correctors.grid())?;
    let grid = *field.grid();
    let d = grid.dim();
    let nn = grid.num_nodes();
    let spec = Spectral::new(d, grid.nodes_per_axis())?;

    let columns: Result<Vec<Vec<f64>>> = (0..d * d)
        .into_par_iter()
        .map(|slot| {
            let (alpha, beta) = (slot / d, slot % d);
            let phi = correctors.field(alpha, beta);
            let mut grads = Vec::with_capacity(d * d);
            for c in 0..d {
                for axis in 0..d {
                    grads.push(spec.derivative(phi.component(c), axis));
                }
            }
            let mut acc = vec![0.0f64; d * d];
            let mut gmat = vec![0.0f64; d * d];
            let mut stress = vec![0.0f64; d * d];
            for node in 0..nn {
                for k in 0..d {
                    for l in 0..d {
                        let unit = if k == alpha && l == beta { 1.0 } else { 0.0 };
                        gmat[k * d + l] = unit + grads[k * d + l][node];
                    }
                }
                field.k_at(node).apply_into(&gmat, &mut stress);
                for (a, s) in acc.iter_mut().zip(stress.iter()) {
                    *a += s;
                }
            }
            let w = 1.0 / nn as f64;
            for a in acc.iter_mut() {
                *a *= w;
            }
            Ok(acc)
        })
        .collect();
    let columns = columns?;

    let t = Tensor4::from_fn(d, |i, j, alpha, beta| columns[alpha * d + beta][i * d + j])?;
    ensure_finite4(t, "homogenized stiffness")
}

/// Homogenized gradient stiffness: the cell average of the hyperstress response
/// to each unit mean curvature, corrected by the second-family correctors,
///
/// `A_eff[i,j,k,a,b,c] = < A[i,j,k,n,l,p] (δ_an δ_bl δ_cp + D_l D_p w^{abc}_n) >`.
pub fn assemble_a_eff(field: &CoefficientField, correctors: &CorrectorHs2) -> Result<Tensor6> {
    check_grids(field, correctors.grid())?;
    let grid = *field.grid();
    let d = grid.dim();
    let nn = grid.num_nodes();
    let spec = Spectral::new(d, grid.nodes_per_axis())?;

    let columns: Result<Vec<Vec<f64>>> = (0..d * d * d)
        .into_par_iter()
        .map(|slot| {
            let (alpha, rest) = (slot / (d * d), slot % (d * d));
            let (beta, gamma) = (rest / d, rest % d);
            let w_field = correctors.field(alpha, beta, gamma);
            let mut hess = vec![Vec::new(); d * d * d];
            for n in 0..d {
                for l in 0..d {
                    for p in l..d {
                        let h = spec.second_derivative(w_field.component(n), l, p);
                        if p != l {
                            hess[(n * d + p) * d + l] = h.clone();
                        }
                        hess[(n * d + l) * d + p] = h;
                    }
                }
            }
            let mut acc = vec![0.0f64; d * d * d];
            let mut qmat = vec![0.0f64; d * d * d];
            let mut moment = vec![0.0f64; d * d * d];
            for node in 0..nn {
                for n in 0..d {
                    for l in 0..d {
                        for p in 0..d {
                            let unit = if n == alpha && l == beta && p == gamma { 1.0 } else { 0.0 };
                            qmat[(n * d + l) * d + p] = unit + hess[(n * d + l) * d + p][node];
                        }
                    }
                }
                field.a_at(node).apply_into(&qmat, &mut moment);
                for (a, m) in acc.iter_mut().zip(moment.iter()) {
                    *a += m;
                }
            }
            let w = 1.0 / nn as f64;
            for a in acc.iter_mut() {
                *a *= w;
            }
            Ok(acc)
        })
        .collect();
    let columns = columns?;

    let t = Tensor6::from_fn(d, |i, j, k, alpha, beta, gamma| {
        columns[(alpha * d + beta) * d + gamma][(i * d + j) * d + k]
    })?;
    ensure_finite6(t, "homogenized gradient stiffness")
}

/// Assemble whichever effective tensors the supplied corrector families allow:
/// the first family yields `k_eff`, the second yields `k_mean` and `a_eff`.
pub fn assemble(
    field: &CoefficientField,
    hs1: Option<&CorrectorHs1>,
    hs2: Option<&CorrectorHs2>,
) -> Result<EffectiveTensors> {
    if hs1.is_none() && hs2.is_none() {
        return Err(Error::Inconsistent(
            "no corrector family supplied; nothing to assemble".into(),
        ));
    }
    let k_eff = hs1.map(|c| assemble_k_eff(field, c)).transpose()?;
    let k_mean = if hs2.is_some() { Some(assemble_k_mean(field)?) } else { None };
    let a_eff = hs2.map(|c| assemble_a_eff(field, c)).transpose()?;
    Ok(EffectiveTensors { k_eff, k_mean, a_eff })
}

fn unit_direction(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn eigen_directions(diff: DMatrix<f64>) -> Vec<Vec<f64>> {
    let sym = 0.5 * (&diff + diff.transpose());
    let eig = sym.symmetric_eigen();
    (0..eig.eigenvectors.ncols())
        .map(|c| eig.eigenvectors.column(c).iter().cloned().collect())
        .collect()
}

fn min_margin(
    mean_q: &dyn Fn(&[f64]) -> f64,
    eff_q: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    eigen: Vec<Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut min = f64::INFINITY;
    for v in eigen {
        min = min.min(mean_q(&v) - eff_q(&v));
    }
    for _ in 0..VOIGT_SAMPLES {
        let v = unit_direction(rng, dim);
        min = min.min(mean_q(&v) - eff_q(&v));
    }
    min
}

fn relative_defect4(t: &Tensor4) -> f64 {
    t.major_symmetry_defect() / t.max_abs().max(f64::MIN_POSITIVE)
}

fn relative_defect6(t: &Tensor6) -> f64 {
    t.major_symmetry_defect() / t.max_abs().max(f64::MIN_POSITIVE)
}

/// Check the structural properties the homogenized tensors must satisfy:
/// relative major-symmetry defect within [`SYMMETRY_TOL`], strictly positive
/// minimum eigenvalue over all matrix (resp. third-order) arguments, and the
/// averaged tensor dominating the effective one in quadratic form, probed on
/// [`VOIGT_SAMPLES`] seeded unit directions plus the eigenbasis of the
/// flattened difference. Margins below `-`[`MARGIN_TOL`] fail the report.
pub fn verify_effective(
    field: &CoefficientField,
    eff: &EffectiveTensors,
    seed: u64,
) -> Result<VerifyReport> {
    if eff.k_eff.is_none() && eff.k_mean.is_none() && eff.a_eff.is_none() {
        return Err(Error::Inconsistent("no effective tensors to verify".into()));
    }
    let d = field.grid().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pass = true;

    let mut k_eff_symmetry_defect = None;
    let mut k_eff_min_eigenvalue = None;
    let mut k_voigt_min_margin = None;
    if let Some(k_eff) = &eff.k_eff {
        if k_eff.d() != d {
            return Err(Error::ShapeMismatch(
                "effective stiffness dimension disagrees with the field".into(),
            ));
        }
        let defect = relative_defect4(k_eff);
        let est = k_eff.ellipticity_estimate()?;
        let k_mean = assemble_k_mean(field)?;
        let diff = k_mean.flatten() - k_eff.flatten();
        let margin = min_margin(
            &|v| k_mean.quadratic_form(v),
            &|v| k_eff.quadratic_form(v),
            d * d,
            eigen_directions(diff),
            &mut rng,
        );
        pass = pass
            && defect <= SYMMETRY_TOL
            && est.min_eigenvalue > 0.0
            && margin >= -MARGIN_TOL;
        k_eff_symmetry_defect = Some(defect);
        k_eff_min_eigenvalue = Some(est.min_eigenvalue);
        k_voigt_min_margin = Some(margin);
    }

    let mut k_mean_min_eigenvalue = None;
    if let Some(k_mean) = &eff.k_mean {
        if k_mean.d() != d {
            return Err(Error::ShapeMismatch(
                "averaged stiffness dimension disagrees with the field".into(),
            ));
        }
        let est = k_mean.ellipticity_estimate()?;
        pass = pass && est.min_eigenvalue > 0.0;
        k_mean_min_eigenvalue = Some(est.min_eigenvalue);
    }

    let mut a_eff_symmetry_defect = None;
    let mut a_eff_min_eigenvalue = None;
    let mut a_voigt_min_margin = None;
    if let Some(a_eff) = &eff.a_eff {
        if a_eff.d() != d {
            return Err(Error::ShapeMismatch(
                "effective gradient stiffness dimension disagrees with the field".into(),
            ));
        }
        let defect = relative_defect6(a_eff);
        let est = a_eff.ellipticity_estimate()?;
        let a_mean = assemble_a_mean(field)?;
        let diff = a_mean.flatten() - a_eff.flatten();
        let margin = min_margin(
            &|v| a_mean.quadratic_form(v),
            &|v| a_eff.quadratic_form(v),
            d * d * d,
            eigen_directions(diff),
            &mut rng,
        );
        pass = pass
            && defect <= SYMMETRY_TOL
            && est.min_eigenvalue > 0.0
            && margin >= -MARGIN_TOL;
        a_eff_symmetry_defect = Some(defect);
        a_eff_min_eigenvalue = Some(est.min_eigenvalue);
        a_voigt_min_margin = Some(margin);
    }

    Ok(VerifyReport {
        k_eff_symmetry_defect,
        k_eff_min_eigenvalue,
        k_voigt_min_margin,
        k_mean_min_eigenvalue,
        a_eff_symmetry_defect,
        a_eff_min_eigenvalue,
        a_voigt_min_margin,
        samples_per_tensor: VOIGT_SAMPLES,
        margin_tolerance: MARGIN_TOL,
        symmetry_tolerance: SYMMETRY_TOL,
        pass,
    })
}
