//! Finite-difference discretizations of the one-dimensional periodic cell
//! problems on the cell-centered grid `y_m = -1/2 + (m + 1/2)/n`.
//!
//! Second-order terms use midpoint fluxes, fourth-order terms nodal second
//! differences; both come from minimizing the discrete energy, so the
//! resulting systems are symmetric. The constant null direction is removed
//! by pinning node 0 and dropping its row, after which the second-order
//! problem is tridiagonal and the fourth-order ones are banded with a single
//! symmetric wrap-around corner handled by a Woodbury update.

use crate::banded::{solve_with_sym_corner, BandedMatrix};

pub struct CellSolution {
    /// Node coordinates in (-1/2, 1/2].
    pub nodes: Vec<f64>,
    /// Zero-mean corrector values at the nodes.
    pub phi: Vec<f64>,
    /// Effective coefficient (cell average of the corrected flux).
    pub eff: f64,
}

fn nodes(n: usize) -> Vec<f64> {
    (0..n).map(|m| -0.5 + (m as f64 + 0.5) / n as f64).collect()
}

fn zero_mean(phi: &mut [f64]) {
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    for v in phi.iter_mut() {
        *v -= mean;
    }
}

/// Interval coefficients from harmonic averaging of the nodal samples; this
/// keeps the discrete effective coefficient equal to the harmonic mean of
/// the nodal values, matching what nodal collocation sees.
fn interval_harmonic(knode: &[f64]) -> Vec<f64> {
    let n = knode.len();
    (0..n)
        .map(|m| 2.0 / (1.0 / knode[m] + 1.0 / knode[(m + 1) % n]))
        .collect()
}

/// Classical elasticity corrector: K(y)(1 + phi') has constant flux.
pub fn classical_corrector(k: &dyn Fn(f64) -> f64, n: usize) -> CellSolution {
    let h = 1.0 / n as f64;
    let knode: Vec<f64> = nodes(n).iter().map(|y| k(*y)).collect();
    let kmid = interval_harmonic(&knode);

    // Unknowns phi_1..phi_{n-1}, phi_0 = 0; rows are the stationarity
    // conditions at nodes 1..n-1.
    let nu = n - 1;
    let mut m = BandedMatrix::new(nu, 1, 1);
    let mut b = vec![0.0; nu];
    for i in 1..n {
        let r = i - 1;
        m.add(r, r, (kmid[i] + kmid[i - 1]) / h);
        if i + 1 < n {
            m.add(r, r + 1, -kmid[i] / h);
        }
        if i >= 2 {
            m.add(r, r - 1, -kmid[i - 1] / h);
        }
        b[r] = kmid[i] - kmid[i - 1];
    }
    let x = m.factor().solve(&b);
    let mut phi = vec![0.0; n];
    phi[1..].copy_from_slice(&x);
    zero_mean(&mut phi);

    let mut eff = 0.0;
    for mdx in 0..n {
        let dphi = (phi[(mdx + 1) % n] - phi[mdx]) / h;
        eff += kmid[mdx] * (1.0 + dphi);
    }
    CellSolution { nodes: nodes(n), phi, eff: eff / n as f64 }
}

/// Builds the reduced fourth-order stiffness `C^T diag(h a_node) C` (cyclic
/// nodal second differences), returning the banded part with the
/// compensated corner and the corner value.
fn fourth_order_reduced(anode: &[f64], h: f64) -> (BandedMatrix, usize, usize, f64) {
    let n = anode.len();
    let nu = n - 1;
    let mut m = BandedMatrix::new(nu, 2, 2);
    let h3 = h * h * h;
    // C row m touches columns m-1, m, m+1 (cyclic) with weights 1, -2, 1.
    let cols = |row: usize| [(row + n - 1) % n, row, (row + 1) % n];
    let wts = [1.0, -2.0, 1.0];
    for row in 0..n {
        let cs = cols(row);
        for (ca, wa) in cs.iter().zip(wts) {
            if *ca == 0 {
                continue;
            }
            for (cb, wb) in cs.iter().zip(wts) {
                if *cb == 0 {
                    continue;
                }
                // Row 0 couples nodes 1 and n-1 across the wrap; that pair
                // is routed through the Woodbury corner instead.
                if row == 0 && *ca != *cb {
                    continue;
                }
                let (i, j) = (*ca - 1, *cb - 1);
                m.add(i, j, anode[row] * wa * wb / h3);
            }
        }
    }
    // Wrap-around coupling between nodes 1 and n-1 (from row 0 of C);
    // compensate the diagonal so the banded part stays positive definite.
    let corner = anode[0] / h3;
    let (p, q) = (0, nu - 1);
    m.add(p, p, corner.abs());
    m.add(q, q, corner.abs());
    (m, p, q, corner)
}

/// Corrector of the combined problem: gradient stiffness K plus
/// second-gradient stiffness A acting on the corrector Hessian. The
/// reported effective coefficient is the average of K(y)(1 + phi').
pub fn hs1_corrector(k: &dyn Fn(f64) -> f64, a: &dyn Fn(f64) -> f64, n: usize) -> CellSolution {
    let h = 1.0 / n as f64;
    let ys = nodes(n);
    let knode: Vec<f64> = ys.iter().map(|y| k(*y)).collect();
    let kmid = interval_harmonic(&knode);
    let anode: Vec<f64> = ys.iter().map(|y| a(*y)).collect();

    let nu = n - 1;
    let (mut m, p, q, corner) = fourth_order_reduced(&anode, h);
    let mut b = vec![0.0; nu];
    for i in 1..n {
        let r = i - 1;
        m.add(r, r, (kmid[i] + kmid[i - 1]) / h);
        if i + 1 < n {
            m.add(r, r + 1, -kmid[i] / h);
        }
        if i >= 2 {
            m.add(r, r - 1, -kmid[i - 1] / h);
        }
        b[r] = kmid[i] - kmid[i - 1];
    }
    let x = solve_with_sym_corner(m, p, q, corner, &b);
    let mut phi = vec![0.0; n];
    phi[1..].copy_from_slice(&x);
    zero_mean(&mut phi);

    let mut eff = 0.0;
    for mdx in 0..n {
        let dphi = (phi[(mdx + 1) % n] - phi[mdx]) / h;
        eff += kmid[mdx] * (1.0 + dphi);
    }
    CellSolution { nodes: ys, phi, eff: eff / n as f64 }
}

/// Pure second-gradient corrector: A(y)(1 + w'') has constant moment; the
/// effective coefficient is the average of A(y)(1 + w'').
pub fn hs2_corrector(a: &dyn Fn(f64) -> f64, n: usize) -> CellSolution {
    let h = 1.0 / n as f64;
    let ys = nodes(n);
    let anode: Vec<f64> = ys.iter().map(|y| a(*y)).collect();

    let nu = n - 1;
    let (m, p, q, corner) = fourth_order_reduced(&anode, h);
    // RHS: -C^T (h a 1) / h-weighting folded in: row i gets
    // -(a_{i-1} - 2 a_i + a_{i+1}) / h.
    let mut b = vec![0.0; nu];
    for i in 1..n {
        let am = anode[(i + n - 1) % n];
        let ap = anode[(i + 1) % n];
        b[i - 1] = -(am - 2.0 * anode[i] + ap) / h;
    }
    let x = solve_with_sym_corner(m, p, q, corner, &b);
    let mut w = vec![0.0; n];
    w[1..].copy_from_slice(&x);
    zero_mean(&mut w);

    let mut eff = 0.0;
    for mdx in 0..n {
        let curv =
            (w[(mdx + 1) % n] - 2.0 * w[mdx] + w[(mdx + n - 1) % n]) / (h * h);
        eff += anode[mdx] * (1.0 + curv);
    }
    CellSolution { nodes: ys, phi: w, eff: eff / n as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic_two_phase(k1: f64, k2: f64) -> f64 {
        2.0 / (1.0 / k1 + 1.0 / k2)
    }

    #[test]
    fn constant_coefficient_correctors_vanish() {
        let sol = classical_corrector(&|_| 2.0, 64);
        assert!(sol.phi.iter().all(|v| v.abs() < 1e-12));
        assert!((sol.eff - 2.0).abs() < 1e-12);

        let sol = hs2_corrector(&|_| 3.0, 64);
        assert!(sol.phi.iter().all(|v| v.abs() < 1e-10));
        assert!((sol.eff - 3.0).abs() < 1e-10);
    }

    #[test]
    fn two_phase_reaches_harmonic_mean() {
        let k = |y: f64| if y.abs() < 0.25 { 1.0 } else { 4.0 };
        let sol = classical_corrector(&k, 2048);
        assert!(
            (sol.eff - harmonic_two_phase(1.0, 4.0)).abs() < 1e-10,
            "eff = {}",
            sol.eff
        );

        let sol = hs2_corrector(&k, 2048);
        assert!(
            (sol.eff - harmonic_two_phase(1.0, 4.0)).abs() < 1e-6,
            "eff = {}",
            sol.eff
        );
    }

    #[test]
    fn vanishing_second_gradient_recovers_classical() {
        let k = |y: f64| if y.abs() < 0.25 { 1.0 } else { 4.0 };
        let classical = classical_corrector(&k, 1024);
        let mixed = hs1_corrector(&k, &|_| 1e-10, 1024);
        let num: f64 = classical
            .phi
            .iter()
            .zip(&mixed.phi)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = classical.phi.iter().map(|v| v * v).sum();
        assert!((num / den).sqrt() < 1e-4);
        assert!((mixed.eff - classical.eff).abs() < 1e-6);
    }

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            for i in (k + 1)..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..n {
                s -= a[i][j] * b[j];
            }
            b[i] = s / a[i][i];
        }
        b
    }

    #[test]
    fn fourth_order_assembly_matches_dense() {
        for n in [4usize, 6, 9, 16] {
            let h = 1.0 / n as f64;
            let anode: Vec<f64> =
                (0..n).map(|m| 1.5 + (3.7 * m as f64).sin().abs()).collect();
            let nu = n - 1;

            // Dense reference: reduced C^T diag(a/h^3) C with column 0 of the
            // cyclic second-difference matrix dropped.
            let mut dense = vec![vec![0.0; nu]; nu];
            for row in 0..n {
                let cs = [(row + n - 1) % n, row, (row + 1) % n];
                let wts = [1.0, -2.0, 1.0];
                for (ca, wa) in cs.iter().zip(wts) {
                    if *ca == 0 {
                        continue;
                    }
                    for (cb, wb) in cs.iter().zip(wts) {
                        if *cb == 0 {
                            continue;
                        }
                        dense[*ca - 1][*cb - 1] += anode[row] * wa * wb / (h * h * h);
                    }
                }
            }

            let (m, p, q, corner) = fourth_order_reduced(&anode, h);
            for i in 0..nu {
                for j in 0..nu {
                    let mut v = m.get(i, j);
                    if (i, j) == (p, q) || (i, j) == (q, p) {
                        v += corner;
                    }
                    if (i, j) == (p, p) || (i, j) == (q, q) {
                        v -= corner.abs();
                    }
                    assert!(
                        (v - dense[i][j]).abs() < 1e-9 * (1.0 + dense[i][j].abs()),
                        "n = {n}, entry ({i}, {j}): {v} vs {}",
                        dense[i][j]
                    );
                }
            }

            let rhs: Vec<f64> = (0..nu).map(|i| (1.3 * i as f64).cos()).collect();
            let x = solve_with_sym_corner(m, p, q, corner, &rhs);
            let xd = dense_solve(dense, rhs);
            for (a, b) in x.iter().zip(&xd) {
                assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn penalized_corrector_is_smaller() {
        let k = |y: f64| if y.abs() < 0.25 { 1.0 } else { 4.0 };
        let soft = hs1_corrector(&k, &|_| 1e-8, 512);
        let stiff = hs1_corrector(&k, &|_| 10.0, 512);
        let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&stiff.phi) < 0.5 * norm(&soft.phi));
        assert!(stiff.eff > soft.eff);
        assert!(stiff.eff < 2.5);
    }
}
