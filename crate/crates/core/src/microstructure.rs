//! Periodic coefficient fields on the unit cell Y = (-1/2, 1/2]^d.
//!
//! Nodes sit at cell centers, `y_m = -1/2 + (m + 1/2)/N` per axis, so the
//! grid is inversion-symmetric and no node lies on a centered phase
//! interface for even N. Linear node indices are row-major with the last
//! axis fastest.

use crate::error::{Error, Result};
use crate::tensor::{Tensor4, Tensor5, Tensor6, MAX_DIM};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    d: usize,
    n: usize,
}

impl CellGrid {
    /// `n` nodes per axis; must be even and at least 4 so the frequency
    /// layout of the spectral solver is well defined.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidGeometry(format!(
                "dimension must be 1, 2, or 3, got {d}"
            )));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGeometry(format!(
                "nodes per axis must be even and at least 4, got {n}"
            )));
        }
        Ok(Self { d, n })
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

    /// Grid spacing, also the quadrature weight per axis.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Cell measure attached to one node (trapezoid/midpoint weight).
    pub fn node_weight(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn coord_1d(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) / self.n as f64
    }

    pub fn index_to_multi(&self, lin: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        let mut rest = lin;
        for axis in (0..self.d).rev() {
            idx[axis] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn multi_to_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for axis in 0..self.d {
            lin = lin * self.n + idx[axis];
        }
        lin
    }

    /// Coordinates of a node; unused trailing axes are zero.
    pub fn node(&self, lin: usize) -> [f64; MAX_DIM] {
        let idx = self.index_to_multi(lin);
        let mut y = [0.0; MAX_DIM];
        for axis in 0..self.d {
            y[axis] = self.coord_1d(idx[axis]);
        }
        y
    }

    /// Linear index of the node at -y. Even N means no node is self-paired.
    pub fn inversion_partner(&self, lin: usize) -> usize {
        let idx = self.index_to_multi(lin);
        let mut inv = [0usize; MAX_DIM];
        for axis in 0..self.d {
            inv[axis] = self.n - 1 - idx[axis];
        }
        self.multi_to_index(&inv[..self.d])
    }
}

/// One material phase: gradient stiffness K, chiral coupling S, and
/// second-gradient stiffness A.
#[derive(Clone, Debug)]
pub struct PhaseTensors {
    pub k: Tensor4,
    pub s: Tensor5,
    pub a: Tensor6,
}

impl PhaseTensors {
    pub fn new(k: Tensor4, s: Tensor5, a: Tensor6) -> Result<Self> {
        if k.d() != s.d() || k.d() != a.d() {
            return Err(Error::ShapeMismatch(format!(
                "phase tensors disagree on dimension: K is {}, S is {}, A is {}",
                k.d(),
                s.d(),
                a.d()
            )));
        }
        Ok(Self { k, s, a })
    }

    /// Strict ellipticity of K and A over all matrices / 3-tensors.
    pub fn check_elliptic(&self) -> Result<()> {
        let ek = self.k.ellipticity_estimate()?;
        if !ek.is_elliptic {
            return Err(Error::InvalidMaterial(format!(
                "phase K is not strictly elliptic (min eigenvalue {:.3e})",
                ek.min_eigenvalue
            )));
        }
        let ea = self.a.ellipticity_estimate()?;
        if !ea.is_elliptic {
            return Err(Error::InvalidMaterial(format!(
                "phase A is not strictly elliptic (min eigenvalue {:.3e})",
                ea.min_eigenvalue
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum InclusionShape {
    /// Euclidean ball of the given radius.
    Ball { radius: f64 },
    /// Axis-aligned box with per-axis half-widths.
    Box { half_widths: [f64; MAX_DIM] },
    /// Slab normal to one axis; spans the cell in the other directions.
    Slab { axis: usize, half_width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionSpec {
    #[serde(flatten)]
    pub shape: InclusionShape,
    pub center: [f64; MAX_DIM],
    /// Width of the half-cosine transition layer; 0 keeps the sharp
    /// interface.
    pub smoothing_width: f64,
}

impl InclusionSpec {
    /// Signed distance to the inclusion surface (negative inside). Exact
    /// for ball and slab; for the box this is the max-coordinate gauge,
    /// which has the right sign and boundary.
    fn signed_distance(&self, y: &[f64]) -> f64 {
        match self.shape {
            InclusionShape::Ball { radius } => {
                let r2: f64 = y
                    .iter()
                    .zip(&self.center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum();
                r2.sqrt() - radius
            }
            InclusionShape::Box { half_widths } => y
                .iter()
                .zip(&self.center)
                .zip(&half_widths)
                .map(|((a, c), w)| (a - c).abs() - w)
                .fold(f64::NEG_INFINITY, f64::max),
            InclusionShape::Slab { axis, half_width } => {
                (y[axis] - self.center[axis]).abs() - half_width
            }
        }
    }

    /// The inclusion closure, thickened by half the smoothing layer, must
    /// stay strictly inside Y along every constrained axis.
    fn check_compact(&self, d: usize) -> Result<()> {
        if self.smoothing_width < 0.0 {
            return Err(Error::InvalidGeometry(
                "smoothing width must be nonnegative".into(),
            ));
        }
        let reach = self.smoothing_width / 2.0;
        let check_axis = |axis: usize, extent: f64| -> Result<()> {
            if extent <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "inclusion extent along axis {axis} must be positive"
                )));
            }
            if self.center[axis].abs() + extent + reach >= 0.5 {
                return Err(Error::InvalidGeometry(format!(
                    "inclusion reaches the cell boundary along axis {axis}"
                )));
            }
            Ok(())
        };
        match self.shape {
            InclusionShape::Ball { radius } => {
                for axis in 0..d {
                    check_axis(axis, radius)?;
                }
            }
            InclusionShape::Box { half_widths } => {
                for axis in 0..d {
                    check_axis(axis, half_widths[axis])?;
                }
            }
            InclusionShape::Slab { axis, half_width } => {
                if axis >= d {
                    return Err(Error::InvalidGeometry(format!(
                        "slab axis {axis} out of range for dimension {d}"
                    )));
                }
                check_axis(axis, half_width)?;
            }
        }
        Ok(())
    }
}

/// Phase-1 weight of the half-cosine transition ramp at signed distance
/// `dist`: 1 deep inside, 0 outside, smooth over a layer of width `w`.
fn ramp(dist: f64, w: f64) -> f64 {
    if w == 0.0 {
        return if dist < 0.0 { 1.0 } else { 0.0 };
    }
    if dist <= -w / 2.0 {
        1.0
    } else if dist >= w / 2.0 {
        0.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * dist / w).sin())
    }
}

/// Immutable per-node material data. Tensors are stored in node order
/// (row-major, last axis fastest).
#[derive(Clone, Debug)]
pub struct CoefficientField {
    grid: CellGrid,
    k: Vec<Tensor4>,
    s: Vec<Tensor5>,
    a: Vec<Tensor6>,
}

impl CoefficientField {
    pub fn from_parts(
        grid: CellGrid,
        k: Vec<Tensor4>,
        s: Vec<Tensor5>,
        a: Vec<Tensor6>,
    ) -> Result<Self> {
        let nn = grid.num_nodes();
        if k.len() != nn || s.len() != nn || a.len() != nn {
            return Err(Error::ShapeMismatch(format!(
                "field length mismatch: grid has {nn} nodes, got K {}, S {}, A {}",
                k.len(),
                s.len(),
                a.len()
            )));
        }
        let d = grid.dim();
        for t in &k {
            if t.d() != d {
                return Err(Error::ShapeMismatch("K entry dimension mismatch".into()));
            }
        }
        for t in &s {
            if t.d() != d {
                return Err(Error::ShapeMismatch("S entry dimension mismatch".into()));
            }
        }
        for t in &a {
            if t.d() != d {
                return Err(Error::ShapeMismatch("A entry dimension mismatch".into()));
            }
        }
        Ok(Self { grid, k, s, a })
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn k_at(&self, lin: usize) -> &Tensor4 {
        &self.k[lin]
    }

    pub fn s_at(&self, lin: usize) -> &Tensor5 {
        &self.s[lin]
    }

    pub fn a_at(&self, lin: usize) -> &Tensor6 {
        &self.a[lin]
    }

    pub fn k_field(&self) -> &[Tensor4] {
        &self.k
    }

    pub fn s_field(&self) -> &[Tensor5] {
        &self.s
    }

    pub fn a_field(&self) -> &[Tensor6] {
        &self.a
    }

    /// Minimum ellipticity eigenvalues of K and A over all nodes; errors if
    /// either fails strict ellipticity anywhere.
    pub fn pointwise_ellipticity(&self) -> Result<(f64, f64)> {
        let mut min_k = f64::INFINITY;
        let mut min_a = f64::INFINITY;
        for lin in 0..self.grid.num_nodes() {
            min_k = min_k.min(self.k[lin].ellipticity_estimate()?.min_eigenvalue);
            min_a = min_a.min(self.a[lin].ellipticity_estimate()?.min_eigenvalue);
        }
        if min_k <= 0.0 || min_a <= 0.0 {
            return Err(Error::InvalidMaterial(format!(
                "field is not pointwise elliptic: min K eigenvalue {min_k:.3e}, \
                 min A eigenvalue {min_a:.3e}"
            )));
        }
        Ok((min_k, min_a))
    }
}

fn blend(grid: CellGrid, phase1: &PhaseTensors, phase2: &PhaseTensors, weight: &[f64]) -> CoefficientField {
    let nn = grid.num_nodes();
    let mut k = Vec::with_capacity(nn);
    let mut s = Vec::with_capacity(nn);
    let mut a = Vec::with_capacity(nn);
    for lam in weight.iter().take(nn) {
        if *lam == 1.0 {
            k.push(phase1.k.clone());
            s.push(phase1.s.clone());
            a.push(phase1.a.clone());
        } else if *lam == 0.0 {
            k.push(phase2.k.clone());
            s.push(phase2.s.clone());
            a.push(phase2.a.clone());
        } else {
            let mut kt = phase2.k.clone();
            kt.scale(1.0 - lam);
            kt.add_scaled(&phase1.k, *lam).expect("phases share a dimension");
            let mut st = phase2.s.clone();
            st.scale(1.0 - lam);
            st.add_scaled(&phase1.s, *lam).expect("phases share a dimension");
            let mut at = phase2.a.clone();
            at.scale(1.0 - lam);
            at.add_scaled(&phase1.a, *lam).expect("phases share a dimension");
            k.push(kt);
            s.push(st);
            a.push(at);
        }
    }
    CoefficientField { grid, k, s, a }
}

fn check_phases(grid: CellGrid, phase1: &PhaseTensors, phase2: &PhaseTensors) -> Result<()> {
    if phase1.k.d() != grid.dim() || phase2.k.d() != grid.dim() {
        return Err(Error::ShapeMismatch(format!(
            "phase dimension does not match grid dimension {}",
            grid.dim()
        )));
    }
    phase1.check_elliptic()?;
    phase2.check_elliptic()
}

/// Two-phase field: `phase1` inside the inclusion, `phase2` in the matrix,
/// blended over the smoothing layer when one is requested.
pub fn two_phase(
    grid: CellGrid,
    inc: &InclusionSpec,
    phase1: &PhaseTensors,
    phase2: &PhaseTensors,
) -> Result<CoefficientField> {
    check_phases(grid, phase1, phase2)?;
    inc.check_compact(grid.dim())?;
    let weight: Vec<f64> = (0..grid.num_nodes())
        .map(|lin| {
            let y = grid.node(lin);
            ramp(inc.signed_distance(&y[..grid.dim()]), inc.smoothing_width)
        })
        .collect();
    Ok(blend(grid, phase1, phase2, &weight))
}

/// Laminate along one axis: `phase1` where the shifted coordinate
/// `y + 1/2` lies below `fraction`, `phase2` elsewhere. Sharp interface.
pub fn laminate(
    grid: CellGrid,
    direction: usize,
    fraction: f64,
    phase1: &PhaseTensors,
    phase2: &PhaseTensors,
) -> Result<CoefficientField> {
    check_phases(grid, phase1, phase2)?;
    if direction >= grid.dim() {
        return Err(Error::InvalidGeometry(format!(
            "laminate direction {direction} out of range for dimension {}",
            grid.dim()
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidGeometry(format!(
            "laminate fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let weight: Vec<f64> = (0..grid.num_nodes())
        .map(|lin| {
            let y = grid.node(lin);
            if y[direction] + 0.5 < fraction {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(blend(grid, phase1, phase2, &weight))
}

/// Chiral coupling field with no centrosymmetric part: a single fixed index
/// pattern carried by `amplitude * sin(2 pi pitch y_1)`. The sine is
/// antisymmetrized over exact node pairs so `S(-y) = -S(y)` holds bitwise.
#[allow(non_snake_case)]
pub fn chiral_S(grid: CellGrid, amplitude: f64, pitch: u32) -> Result<Vec<Tensor5>> {
    if pitch < 1 {
        return Err(Error::Periodicity(
            "chiral pitch must be a positive integer".into(),
        ));
    }
    let nn = grid.num_nodes();
    let raw: Vec<f64> = (0..nn)
        .map(|lin| {
            let y = grid.node(lin);
            (2.0 * std::f64::consts::PI * pitch as f64 * y[0]).sin()
        })
        .collect();
    let mut field = Vec::with_capacity(nn);
    for lin in 0..nn {
        let odd = 0.5 * (raw[lin] - raw[grid.inversion_partner(lin)]);
        let mut s = Tensor5::zeros(grid.dim())?;
        s.set(0, 0, 0, 0, 0, amplitude * odd);
        field.push(s);
    }
    Ok(field)
}

/// Discrete L^2 norms of the inversion-odd and inversion-even parts of an
/// S field, split via exact node pairing.
pub fn inversion_defect(grid: &CellGrid, field: &[Tensor5]) -> Result<(f64, f64)> {
    if field.len() != grid.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "S field has {} entries for a grid of {} nodes",
            field.len(),
            grid.num_nodes()
        )));
    }
    let w = grid.node_weight();
    let mut odd2 = 0.0;
    let mut even2 = 0.0;
    for lin in 0..field.len() {
        let partner = grid.inversion_partner(lin);
        let a = field[lin].data();
        let b = field[partner].data();
        for (va, vb) in a.iter().zip(b) {
            let even = 0.5 * (va + vb);
            let odd = 0.5 * (va - vb);
            even2 += w * even * even;
            odd2 += w * odd * odd;
        }
    }
    Ok((odd2.sqrt(), even2.sqrt()))
}
