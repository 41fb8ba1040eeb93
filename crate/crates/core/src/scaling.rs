//! Dimensional analysis of a coefficient field: tensor maxima, the
//! second-gradient and chiral intrinsic lengths, classification of the
//! admissible scaling regimes, and the resulting powers of the cell size
//! that multiply S and A in the fine-scale constitutive law.

use crate::error::{Error, Result};
use crate::microstructure::CoefficientField;
use serde::{Deserialize, Serialize};

/// Factor-of-3 band on the log scale; "comparable" means within this.
pub fn default_log_tol() -> f64 {
    3.0f64.ln()
}

const HOLDER_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "HS1")]
    Hs1,
    #[serde(rename = "HS2")]
    Hs2,
    #[serde(rename = "other")]
    Other,
}

/// Powers of epsilon that scale the chiral and second-gradient tensors in
/// the fine-scale stress and hyperstress.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeMultipliers {
    /// Power on S in the stress law.
    pub s_in_sigma: f64,
    /// Power on A in the hyperstress law.
    pub a_in_mu: f64,
    /// Power on S in the hyperstress law.
    pub s_in_mu: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    #[serde(rename = "calK")]
    pub cal_k: f64,
    #[serde(rename = "calS")]
    pub cal_s: f64,
    #[serde(rename = "calA")]
    pub cal_a: f64,
    #[serde(rename = "ell_SG")]
    pub ell_sg: f64,
    pub ell_chiral: f64,
    pub p_prime: f64,
    pub q_prime: f64,
    pub epsilon: f64,
    pub regime: Regime,
}

/// Max Frobenius norms of (K, S, A) over all nodes.
pub fn tensor_maxima(field: &CoefficientField) -> (f64, f64, f64) {
    let mut cal_k = 0.0f64;
    let mut cal_s = 0.0f64;
    let mut cal_a = 0.0f64;
    for lin in 0..field.grid().num_nodes() {
        cal_k = cal_k.max(field.k_at(lin).frobenius_norm());
        cal_s = cal_s.max(field.s_at(lin).frobenius_norm());
        cal_a = cal_a.max(field.a_at(lin).frobenius_norm());
    }
    (cal_k, cal_s, cal_a)
}

fn check_holder(p_prime: f64, q_prime: f64) -> Result<()> {
    if !(p_prime >= 1.0 && q_prime >= 1.0 && p_prime.is_finite() && q_prime.is_finite()) {
        return Err(Error::Inconsistent(format!(
            "exponents must be finite and at least 1, got p' = {p_prime}, q' = {q_prime}"
        )));
    }
    if (1.0 / p_prime + 1.0 / q_prime - 1.0).abs() > HOLDER_TOL {
        return Err(Error::Inconsistent(format!(
            "1/p' + 1/q' must equal 1, got p' = {p_prime}, q' = {q_prime}"
        )));
    }
    Ok(())
}

/// Intrinsic lengths from the tensor maxima:
/// `ell_SG = sqrt(calA/calK)` and
/// `ell_chiral = (calS / (calK ell_SG^{1/p'}))^{q'}`.
///
/// A chiral coupling without a second-gradient stiffness has no admissible
/// scaling, so `calA = 0` with `calS > 0` is refused.
pub fn intrinsic_lengths(
    cal_k: f64,
    cal_s: f64,
    cal_a: f64,
    p_prime: f64,
    q_prime: f64,
) -> Result<(f64, f64)> {
    if !(cal_k > 0.0) {
        return Err(Error::InvalidMaterial(format!(
            "calK must be positive, got {cal_k}"
        )));
    }
    if cal_s < 0.0 || cal_a < 0.0 {
        return Err(Error::InvalidMaterial(
            "tensor maxima must be nonnegative".into(),
        ));
    }
    check_holder(p_prime, q_prime)?;
    if cal_a == 0.0 {
        if cal_s > 0.0 {
            return Err(Error::Inconsistent(
                "chiral coupling without second-gradient stiffness: calS > 0 but calA = 0"
                    .into(),
            ));
        }
        return Ok((0.0, 0.0));
    }
    let ell_sg = (cal_a / cal_k).sqrt();
    let ell_chiral = (cal_s / (cal_k * ell_sg.powf(1.0 / p_prime))).powf(q_prime);
    Ok((ell_sg, ell_chiral))
}

/// Log-band classification of the scaling regime. Both lengths must land in
/// their bands: for HS1, `ell_SG ~ epsilon` and `ell_chiral ~ epsilon^{q'+1}`;
/// for HS2, `ell_SG ~ 1` and `ell_chiral ~ epsilon^{q'}`. HS1 is checked
/// first. Zero lengths, or `epsilon`/`tol` outside their ranges, classify as
/// `other`.
pub fn classify_regime(
    ell_sg: f64,
    ell_chiral: f64,
    epsilon: f64,
    q_prime: f64,
    tol: f64,
) -> Regime {
    if !(epsilon > 0.0 && epsilon < 1.0 && tol > 0.0) {
        return Regime::Other;
    }
    if !(ell_sg > 0.0 && ell_chiral > 0.0) {
        return Regime::Other;
    }
    let in_band = |value: f64, target: f64| (value / target).ln().abs() <= tol;
    if in_band(ell_sg, epsilon) && in_band(ell_chiral, epsilon.powf(q_prime + 1.0)) {
        return Regime::Hs1;
    }
    if in_band(ell_sg, 1.0) && in_band(ell_chiral, epsilon.powf(q_prime)) {
        return Regime::Hs2;
    }
    Regime::Other
}

/// Epsilon powers for the fine-scale law in the given regime.
pub fn regime_multipliers(regime: Regime) -> Result<RegimeMultipliers> {
    match regime {
        Regime::Hs1 => Ok(RegimeMultipliers { s_in_sigma: 2.0, a_in_mu: 2.0, s_in_mu: 2.0 }),
        Regime::Hs2 => Ok(RegimeMultipliers { s_in_sigma: 1.0, a_in_mu: 0.0, s_in_mu: 1.0 }),
        Regime::Other => Err(Error::Inconsistent(
            "no coefficient scaling is defined outside the HS1/HS2 regimes".into(),
        )),
    }
}

/// Full report for one field at one cell size.
pub fn scaling_report(
    field: &CoefficientField,
    epsilon: f64,
    p_prime: f64,
    q_prime: f64,
    tol: f64,
) -> Result<ScalingReport> {
    let (cal_k, cal_s, cal_a) = tensor_maxima(field);
    let (ell_sg, ell_chiral) = intrinsic_lengths(cal_k, cal_s, cal_a, p_prime, q_prime)?;
    let regime = classify_regime(ell_sg, ell_chiral, epsilon, q_prime, tol);
    Ok(ScalingReport {
        cal_k,
        cal_s,
        cal_a,
        ell_sg,
        ell_chiral,
        p_prime,
        q_prime,
        epsilon,
        regime,
    })
}
