//! Discrete periodic unfolding of grid functions on the macro domain
//! Omega = (0,1)^d.
//!
//! The fine grid is cell-centered, `x_i = (i + 1/2) h` per axis with
//! `h = epsilon / N_y`, so every complete epsilon-cell holds exactly
//! `N_y^d` fine nodes and unfolding is a pure reindexing: value at
//! (cell l, local node j) is the fine value at index `l N_y + j` per axis.
//! Local cell coordinates run over [0,1)^d with nodes `(j + 1/2)/N_y`.
//! When `1/epsilon` is not an integer, the trailing fine nodes outside the
//! last complete cell form the leftover set and unfold to zero.

use crate::error::{Error, Result};
use crate::spectral::Spectral;
use crate::tensor::MAX_DIM;
use serde::{Deserialize, Serialize};

const ALIGN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MacroGrid {
    d: usize,
    epsilon: f64,
    n_y: usize,
    cells_per_axis: usize,
    fine_per_axis: usize,
    aligned: bool,
}

impl MacroGrid {
    /// `n_y` fine nodes per cell per axis. When `1/epsilon` is an integer
    /// the grids nest exactly and the leftover set is empty.
    pub fn new(d: usize, epsilon: f64, n_y: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidGeometry(format!(
                "dimension must be 1, 2, or 3, got {d}"
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if n_y < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 nodes per cell per axis, got {n_y}"
            )));
        }
        let inv = 1.0 / epsilon;
        let aligned = (inv - inv.round()).abs() < ALIGN_TOL;
        let cells_per_axis = if aligned { inv.round() as usize } else { inv.floor() as usize };
        let fine_per_axis = if aligned {
            cells_per_axis * n_y
        } else {
            (n_y as f64 * inv + ALIGN_TOL).floor() as usize
        };
        Ok(Self { d, epsilon, n_y, cells_per_axis, fine_per_axis, aligned })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nodes_per_cell_axis(&self) -> usize {
        self.n_y
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn fine_per_axis(&self) -> usize {
        self.fine_per_axis
    }

    pub fn aligned(&self) -> bool {
        self.aligned
    }

    pub fn spacing(&self) -> f64 {
        self.epsilon / self.n_y as f64
    }

    pub fn num_fine(&self) -> usize {
        self.fine_per_axis.pow(self.d as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis.pow(self.d as u32)
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.n_y.pow(self.d as u32)
    }

    pub fn fine_coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing()
    }

    /// Local cell coordinate of node `j` in [0, 1).
    pub fn local_coord(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.n_y as f64
    }

    fn fine_multi(&self, lin: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        let mut rest = lin;
        for axis in (0..self.d).rev() {
            idx[axis] = rest % self.fine_per_axis;
            rest /= self.fine_per_axis;
        }
        idx
    }

    fn check_len(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.num_fine() {
            return Err(Error::ShapeMismatch(format!(
                "grid function has {} values but the fine grid has {} nodes",
                phi.len(),
                self.num_fine()
            )));
        }
        Ok(())
    }
}

/// Values indexed by (complete cell, local node); zero over the leftover
/// set by construction.
#[derive(Clone, Debug)]
pub struct UnfoldedField {
    pub num_cells: usize,
    pub nodes_per_cell: usize,
    /// Cell-major layout: `values[cell * nodes_per_cell + local]`.
    pub values: Vec<f64>,
}

/// Complete-cell multi-indices and the leftover fine-node indices.
pub fn decompose_domain(grid: &MacroGrid) -> (Vec<[usize; MAX_DIM]>, Vec<usize>) {
    let c = grid.cells_per_axis;
    let mut cells = Vec::with_capacity(grid.num_cells());
    let mut idx = [0usize; MAX_DIM];
    loop {
        cells.push(idx);
        let mut axis = grid.d;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < c {
                break;
            }
            idx[axis] = 0;
        }
        if idx.iter().all(|v| *v == 0) {
            break;
        }
    }
    let mut leftover = Vec::new();
    let covered = c * grid.n_y;
    for lin in 0..grid.num_fine() {
        let multi = grid.fine_multi(lin);
        if (0..grid.d).any(|axis| multi[axis] >= covered) {
            leftover.push(lin);
        }
    }
    (cells, leftover)
}

/// Reindex a fine grid function into (cell, local node) blocks.
pub fn unfold(grid: &MacroGrid, phi: &[f64]) -> Result<UnfoldedField> {
    grid.check_len(phi)?;
    let npc = grid.nodes_per_cell();
    let mut values = vec![0.0; grid.num_cells() * npc];
    let c = grid.cells_per_axis;
    let ny = grid.n_y;
    for (cell_lin, slot) in values.chunks_mut(npc).enumerate() {
        // Decode the cell multi-index.
        let mut cell = [0usize; MAX_DIM];
        let mut rest = cell_lin;
        for axis in (0..grid.d).rev() {
            cell[axis] = rest % c;
            rest /= c;
        }
        for (local, v) in slot.iter_mut().enumerate() {
            let mut rest = local;
            let mut fine = 0usize;
            // Rebuild the fine linear index axis by axis (row-major).
            let mut local_idx = [0usize; MAX_DIM];
            for axis in (0..grid.d).rev() {
                local_idx[axis] = rest % ny;
                rest /= ny;
            }
            for axis in 0..grid.d {
                fine = fine * grid.fine_per_axis + cell[axis] * ny + local_idx[axis];
            }
            *v = phi[fine];
        }
    }
    Ok(UnfoldedField { num_cells: grid.num_cells(), nodes_per_cell: npc, values })
}

/// Compares the unfolded integral with the direct sum over the covered
/// nodes. Both are the same terms re-bracketed, so the defect is pure
/// rounding.
pub fn integral_identity_check(grid: &MacroGrid, phi: &[f64]) -> Result<(f64, f64, f64)> {
    grid.check_len(phi)?;
    let unfolded = unfold(grid, phi)?;
    // Cell measure epsilon^d times local node weight (1/n_y)^d equals h^d.
    let w_pair = (grid.epsilon / grid.n_y as f64).powi(grid.d as i32);
    let lhs: f64 = unfolded.values.iter().sum::<f64>() * w_pair;
    let h_d = grid.spacing().powi(grid.d as i32);
    let (_, leftover) = decompose_domain(grid);
    let mut skip = vec![false; grid.num_fine()];
    for lin in &leftover {
        skip[*lin] = true;
    }
    let rhs: f64 = phi
        .iter()
        .enumerate()
        .filter(|(lin, _)| !skip[*lin])
        .map(|(_, v)| v)
        .sum::<f64>()
        * h_d;
    Ok((lhs, rhs, (lhs - rhs).abs()))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProductNormReport {
    /// Max nodewise defect of unfold(phi*psi) vs unfold(phi)*unfold(psi).
    pub product_defect: f64,
    /// L^2(Omega x Y) norm of the unfolded field.
    pub unfolded_norm: f64,
    /// |Y|^{1/2} times the L^2(Omega) norm of the source.
    pub source_norm: f64,
}

/// Nodewise product rule (exact reindexing) and the L^2 contraction bound.
pub fn product_and_norm_checks(
    grid: &MacroGrid,
    phi: &[f64],
    psi: &[f64],
) -> Result<ProductNormReport> {
    grid.check_len(phi)?;
    grid.check_len(psi)?;
    let prod: Vec<f64> = phi.iter().zip(psi).map(|(a, b)| a * b).collect();
    let u_prod = unfold(grid, &prod)?;
    let u_phi = unfold(grid, phi)?;
    let u_psi = unfold(grid, psi)?;
    let mut defect = 0.0f64;
    for i in 0..u_prod.values.len() {
        defect = defect.max((u_prod.values[i] - u_phi.values[i] * u_psi.values[i]).abs());
    }
    let w_pair = (grid.epsilon / grid.n_y as f64).powi(grid.d as i32);
    let unfolded_norm =
        (u_phi.values.iter().map(|v| v * v).sum::<f64>() * w_pair).sqrt();
    let h_d = grid.spacing().powi(grid.d as i32);
    let source_norm = (phi.iter().map(|v| v * v).sum::<f64>() * h_d).sqrt();
    Ok(ProductNormReport { product_defect: defect, unfolded_norm, source_norm })
}

/// One row of a convergence table: cell size and L^2(Omega x Y) error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub epsilon: f64,
    pub error: f64,
}

/// Oscillation test, d = 1: phi_eps(x) = a(x) psi(x/eps) with psi given by
/// its `n_y` samples on the local grid. The unfolded field is compared with
/// the two-scale limit a(x) psi(y), with the macro variable frozen at cell
/// centers. Modulation by a Lipschitz a makes the error O(epsilon).
pub fn two_scale_convergence_probe(
    a: &dyn Fn(f64) -> f64,
    psi: &[f64],
    eps_list: &[f64],
) -> Result<Vec<ProbeRow>> {
    let n_y = psi.len();
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let grid = MacroGrid::new(1, eps, n_y)?;
        let phi: Vec<f64> = (0..grid.num_fine())
            .map(|i| a(grid.fine_coord(i)) * psi[i % n_y])
            .collect();
        let unfolded = unfold(&grid, &phi)?;
        let w_pair = grid.epsilon / n_y as f64;
        let mut err2 = 0.0;
        for cell in 0..grid.num_cells() {
            let center = (cell as f64 + 0.5) * eps;
            for j in 0..n_y {
                let limit = a(center) * psi[j];
                let diff = unfolded.values[cell * n_y + j] - limit;
                err2 += w_pair * diff * diff;
            }
        }
        rows.push(ProbeRow { epsilon: eps, error: err2.sqrt() });
    }
    Ok(rows)
}

/// Second-derivative compatibility test, d = 1: for
/// phi_eps(x) = eps^2 u(x) w(x/eps) with smooth periodic u and w, the
/// unfolded spectral second derivative is compared with u(x) w''(y), the
/// local derivative taken on the cell grid. Chain-rule cross terms make the
/// error O(epsilon).
pub fn gradient_compatibility_probe(
    u: &dyn Fn(f64) -> f64,
    w: &dyn Fn(f64) -> f64,
    n_y: usize,
    eps_list: &[f64],
) -> Result<Vec<ProbeRow>> {
    let cell_spectral = Spectral::new(1, n_y)?;
    let w_samples: Vec<f64> = (0..n_y).map(|j| w((j as f64 + 0.5) / n_y as f64)).collect();
    // Second derivative with respect to the local variable.
    let w_dd = cell_spectral.second_derivative(&w_samples, 0, 0);

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let grid = MacroGrid::new(1, eps, n_y)?;
        if !grid.aligned() {
            return Err(Error::Periodicity(format!(
                "1/epsilon must be an integer for the periodic probe, got epsilon = {eps}"
            )));
        }
        let m = grid.num_fine();
        let fine_spectral = Spectral::new(1, m)?;
        let phi: Vec<f64> = (0..m)
            .map(|i| {
                let x = grid.fine_coord(i);
                eps * eps * u(x) * w_samples[i % n_y]
            })
            .collect();
        // x-derivatives on the fine grid; eps^2 cancels the chain rule, so
        // the target is u(x) w''(y) with w'' taken in the local variable.
        let phi_dd = fine_spectral.second_derivative(&phi, 0, 0);
        let unfolded = unfold(&grid, &phi_dd)?;
        let w_pair = grid.epsilon / n_y as f64;
        let mut err2 = 0.0;
        for cell in 0..grid.num_cells() {
            for j in 0..n_y {
                let x = grid.fine_coord(cell * n_y + j);
                let limit = u(x) * w_dd[j];
                let diff = unfolded.values[cell * n_y + j] - limit;
                err2 += w_pair * diff * diff;
            }
        }
        rows.push(ProbeRow { epsilon: eps, error: err2.sqrt() });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn aligned_decomposition_counts() {
        let g = MacroGrid::new(1, 0.25, 4).unwrap();
        assert!(g.aligned());
        let (cells, leftover) = decompose_domain(&g);
        assert_eq!(cells.len(), 4);
        assert!(leftover.is_empty());
        assert_eq!(g.num_fine(), 16);

        let g = MacroGrid::new(2, 1.0 / 3.0, 4).unwrap();
        assert!(g.aligned());
        let (cells, leftover) = decompose_domain(&g);
        assert_eq!(cells.len(), 9);
        assert!(leftover.is_empty());
    }

    #[test]
    fn misaligned_grid_has_leftover_nodes() {
        let g = MacroGrid::new(1, 1.0 / std::f64::consts::PI, 8).unwrap();
        assert!(!g.aligned());
        assert_eq!(g.cells_per_axis(), 3);
        assert_eq!(g.fine_per_axis(), 25);
        let (cells, leftover) = decompose_domain(&g);
        assert_eq!(cells.len(), 3);
        assert_eq!(leftover, vec![24]);
    }

    #[test]
    fn constant_unfolds_to_constant() {
        let g = MacroGrid::new(1, 0.25, 4).unwrap();
        let phi = vec![2.5; g.num_fine()];
        let u = unfold(&g, &phi).unwrap();
        assert!(u.values.iter().all(|v| *v == 2.5));
    }

    #[test]
    fn periodic_function_unfolds_cell_independently() {
        let n_y = 8;
        let g = MacroGrid::new(1, 0.125, n_y).unwrap();
        let psi: Vec<f64> = (0..n_y).map(|j| (j as f64).sin()).collect();
        let phi: Vec<f64> = (0..g.num_fine()).map(|i| psi[i % n_y]).collect();
        let u = unfold(&g, &phi).unwrap();
        for cell in 0..g.num_cells() {
            for j in 0..n_y {
                assert_eq!(u.values[cell * n_y + j], psi[j]);
            }
        }
    }

    #[test]
    fn indicator_of_one_cell_unfolds_to_one_block() {
        let g = MacroGrid::new(1, 0.25, 4).unwrap();
        let mut phi = vec![0.0; g.num_fine()];
        for j in 8..12 {
            phi[j] = 1.0; // third cell
        }
        let u = unfold(&g, &phi).unwrap();
        for cell in 0..4 {
            for j in 0..4 {
                let expect = if cell == 2 { 1.0 } else { 0.0 };
                assert_eq!(u.values[cell * 4 + j], expect);
            }
        }
    }

    #[test]
    fn unfold_rejects_wrong_length() {
        let g = MacroGrid::new(1, 0.25, 4).unwrap();
        assert!(unfold(&g, &vec![0.0; 15]).is_err());
    }

    #[test]
    fn integral_identity_is_exact() {
        let g = MacroGrid::new(1, 0.25, 4).unwrap();
        let ones = vec![1.0; g.num_fine()];
        let (lhs, rhs, defect) = integral_identity_check(&g, &ones).unwrap();
        assert!((lhs - 1.0).abs() < 1e-14);
        assert!((rhs - 1.0).abs() < 1e-14);
        assert!(defect <= 1e-14);

        let phi: Vec<f64> = (0..g.num_fine())
            .map(|i| ((i * 31 + 7) % 13) as f64 / 13.0 - 0.4)
            .collect();
        let (_, _, defect) = integral_identity_check(&g, &phi).unwrap();
        let norm1: f64 =
            phi.iter().map(|v| v.abs()).sum::<f64>() * g.spacing();
        assert!(defect <= 1e-13 * norm1.max(1e-300));
    }

    #[test]
    fn leftover_support_vanishes_after_unfolding() {
        let g = MacroGrid::new(1, 1.0 / std::f64::consts::PI, 8).unwrap();
        let (_, leftover) = decompose_domain(&g);
        assert!(!leftover.is_empty());
        let mut phi = vec![0.0; g.num_fine()];
        for lin in &leftover {
            phi[*lin] = 3.0;
        }
        let (lhs, rhs, _) = integral_identity_check(&g, &phi).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
        let u = unfold(&g, &phi).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn product_rule_and_norm_bound() {
        let g = MacroGrid::new(2, 0.25, 4).unwrap();
        let phi: Vec<f64> = (0..g.num_fine())
            .map(|i| ((i * 17 + 3) % 11) as f64 / 11.0 - 0.5)
            .collect();
        let psi: Vec<f64> = (0..g.num_fine())
            .map(|i| ((i * 23 + 5) % 7) as f64 / 7.0)
            .collect();
        let report = product_and_norm_checks(&g, &phi, &psi).unwrap();
        assert_eq!(report.product_defect, 0.0);
        // Aligned grids make the contraction an equality.
        assert!((report.unfolded_norm - report.source_norm).abs() <= 1e-13);

        let g = MacroGrid::new(1, 1.0 / std::f64::consts::PI, 8).unwrap();
        let phi = vec![1.0; g.num_fine()];
        let report = product_and_norm_checks(&g, &phi, &phi).unwrap();
        assert!(report.unfolded_norm < report.source_norm);
    }

    #[test]
    fn unfolding_is_linear_and_multiset_preserving() {
        let g = MacroGrid::new(1, 0.125, 8).unwrap();
        let phi: Vec<f64> = (0..g.num_fine()).map(|i| (i as f64 * 0.37).sin()).collect();
        let psi: Vec<f64> = (0..g.num_fine()).map(|i| (i as f64 * 0.11).cos()).collect();
        let combo: Vec<f64> = phi.iter().zip(&psi).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let u_combo = unfold(&g, &combo).unwrap();
        let u_phi = unfold(&g, &phi).unwrap();
        let u_psi = unfold(&g, &psi).unwrap();
        for i in 0..u_combo.values.len() {
            assert_eq!(u_combo.values[i], 2.0 * u_phi.values[i] - 3.0 * u_psi.values[i]);
        }
        let mut a = phi.clone();
        let mut b = u_phi.values.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn two_scale_probe_decreases_linearly() {
        let n_y = 16;
        let psi: Vec<f64> =
            (0..n_y).map(|j| (2.0 * PI * (j as f64 + 0.5) / n_y as f64).sin()).collect();

        let rows = two_scale_convergence_probe(&|_| 1.0, &psi, &[0.25, 0.125]).unwrap();
        assert_eq!(rows[0].error, 0.0);
        assert_eq!(rows[1].error, 0.0);

        let rows =
            two_scale_convergence_probe(&|x| x, &psi, &[0.25, 0.125, 0.0625]).unwrap();
        assert!(rows[0].error > rows[1].error);
        assert!(rows[1].error > rows[2].error);
        let ratio = rows[1].error / rows[0].error;
        assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn gradient_probe_decreases() {
        let u = |x: f64| (PI * x).sin().powi(2);
        let w = |y: f64| (2.0 * PI * y).cos();
        let rows = gradient_compatibility_probe(&u, &w, 16, &[0.25, 0.125, 0.0625]).unwrap();
        assert!(rows[0].error > rows[1].error);
        assert!(rows[1].error > rows[2].error);
        let ratio = rows[2].error / rows[1].error;
        assert!((ratio - 0.5).abs() < 0.15, "ratio {ratio}");
    }
}
