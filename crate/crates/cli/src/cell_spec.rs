//! JSON description of a periodic cell: grid, phase layout, and an optional
//! chiral coupling profile. Unknown keys are rejected so a typo cannot
//! silently fall back to a default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use gradhom_core::microstructure::{
    chiral_S, laminate, two_phase, CellGrid, CoefficientField, InclusionSpec, PhaseTensors,
};
use gradhom_core::tensor::{Tensor4, Tensor5, Tensor6};
use gradhom_core::{Error, Result};

/// One material phase, given by isotropic moduli plus two strictly
/// positive-definite completions: `K = lambda I (x) I + 2 mu sym + kappa id`
/// and `A = eta id`. `kappa > 0` is required for `d >= 2` because a purely
/// isotropic stiffness annihilates antisymmetric gradients.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub lambda: f64,
    pub mu: f64,
    #[serde(default)]
    pub kappa: f64,
    pub eta: f64,
}

impl PhaseSpec {
    fn build(&self, d: usize) -> Result<PhaseTensors> {
        let mut k = Tensor4::isotropic(self.lambda, self.mu, d)?;
        if self.kappa != 0.0 {
            if self.kappa < 0.0 {
                return Err(Error::InvalidMaterial(format!(
                    "kappa must be nonnegative, got {}",
                    self.kappa
                )));
            }
            k.add_scaled(&Tensor4::identity_action(d)?, self.kappa)?;
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        PhaseTensors::new(k, Tensor5::zeros(d)?, Tensor6::diagonal(self.eta, d)?)
    }
}

/// Spatial layout of the phases on the unit cell.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Structure {
    /// One phase everywhere.
    Constant { phase: PhaseSpec },
    /// Two-phase layering normal to `direction`; `phase_low` occupies the
    /// `fraction` of the cell nearest the lower face.
    Laminate {
        direction: usize,
        fraction: f64,
        phase_low: PhaseSpec,
        phase_high: PhaseSpec,
    },
    /// A smoothed inclusion of `inside` embedded in `outside`.
    Inclusion {
        inclusion: InclusionSpec,
        inside: PhaseSpec,
        outside: PhaseSpec,
    },
}

/// Chiral coupling: the inversion-odd sine profile along the first axis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub amplitude: f64,
    pub pitch: u32,
}

/// Everything needed to build one coefficient field.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub d: usize,
    pub n: usize,
    pub structure: Structure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Coupling>,
}

impl CellSpec {
    /// Parses a spec file; JSON errors keep their line/column positions.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds the nodal coefficient field this description defines.
    pub fn build(&self) -> Result<CoefficientField> {
        let grid = CellGrid::new(self.d, self.n)?;
        let base = match &self.structure {
            Structure::Constant { phase } => {
                let p = phase.build(self.d)?;
                laminate(grid, 0, 0.5, &p, &p)?
            }
            Structure::Laminate { direction, fraction, phase_low, phase_high } => laminate(
                grid,
                *direction,
                *fraction,
                &phase_low.build(self.d)?,
                &phase_high.build(self.d)?,
            )?,
            Structure::Inclusion { inclusion, inside, outside } => two_phase(
                grid,
                inclusion,
                &inside.build(self.d)?,
                &outside.build(self.d)?,
            )?,
        };
        match &self.coupling {
            None => Ok(base),
            Some(c) => {
                let s = chiral_S(grid, c.amplitude, c.pitch)?;
                CoefficientField::from_parts(
                    grid,
                    base.k_field().to_vec(),
                    s,
                    base.a_field().to_vec(),
                )
            }
        }
    }
}
