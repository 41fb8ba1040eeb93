//! Finite-difference reference solves of the macroscopic two-point problem
//!
//! `-(K u')' + (A u'')'' = g` on (0, 1),  `u(0) = u(1) = 0`,
//!
//! with the natural end conditions `A u'' = 0` that come from minimizing the
//! energy without constraining the end slopes. Vertex grid `x_j = j/m`;
//! second-order terms use midpoint fluxes and fourth-order terms interior
//! nodal second differences, which reproduces exactly those natural
//! conditions in the limit.

use crate::banded::BandedMatrix;

pub struct BvpSolution {
    pub nodes: Vec<f64>,
    pub u: Vec<f64>,
}

/// One solve on `m` intervals. `kmid`/`anode`/`g` are sampled pointwise.
pub fn second_fourth_bvp(
    kmid: &dyn Fn(f64) -> f64,
    anode: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
    m: usize,
) -> BvpSolution {
    let h = 1.0 / m as f64;
    let nu = m - 1;
    let mut mat = BandedMatrix::new(nu, 2, 2);
    let mut rhs = vec![0.0; nu];

    // Gradient part: sum_j h K_{j+1/2} ((u_{j+1} - u_j)/h)^2.
    for j in 0..m {
        let kv = kmid((j as f64 + 0.5) * h) / h;
        let left = j.checked_sub(1).filter(|_| j >= 1);
        let right = if j + 1 <= nu { Some(j) } else { None };
        // Interval j couples unknowns u_j and u_{j+1} (0-based reduced:
        // j-1 and j), with boundary values fixed at zero.
        if let Some(r) = left {
            mat.add(r, r, kv);
        }
        if let Some(r) = right {
            mat.add(r, r, kv);
        }
        if let (Some(a), Some(b)) = (left, right) {
            mat.add(a, b, -kv);
            mat.add(b, a, -kv);
        }
    }

    // Second-gradient part: sum over interior nodes of h A_j (u''_j)^2 with
    // u''_j = (u_{j-1} - 2 u_j + u_{j+1})/h^2.
    let h3 = h * h * h;
    for j in 1..m {
        let av = anode(j as f64 * h) / h3;
        let cols = [j as isize - 1, j as isize, j as isize + 1];
        let wts = [1.0, -2.0, 1.0];
        for (ca, wa) in cols.iter().zip(wts) {
            let ia = *ca;
            if ia < 1 || ia as usize > nu {
                continue;
            }
            for (cb, wb) in cols.iter().zip(wts) {
                let ib = *cb;
                if ib < 1 || ib as usize > nu {
                    continue;
                }
                mat.add(ia as usize - 1, ib as usize - 1, av * wa * wb);
            }
        }
    }

    for j in 1..m {
        rhs[j - 1] = h * g(j as f64 * h);
    }

    let x = mat.factor().solve(&rhs);
    let mut u = vec![0.0; m + 1];
    u[1..m].copy_from_slice(&x);
    BvpSolution {
        nodes: (0..=m).map(|j| j as f64 * h).collect(),
        u,
    }
}

/// Richardson extrapolation over meshes `m` and `2m`; vertex grids nest, so
/// the returned values sit on the coarse nodes with leading error O(h^4).
pub fn second_fourth_bvp_richardson(
    kmid: &dyn Fn(f64) -> f64,
    anode: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
    m: usize,
) -> BvpSolution {
    let coarse = second_fourth_bvp(kmid, anode, g, m);
    let fine = second_fourth_bvp(kmid, anode, g, 2 * m);
    let u = (0..=m)
        .map(|j| (4.0 * fine.u[2 * j] - coarse.u[j]) / 3.0)
        .collect();
    BvpSolution { nodes: coarse.nodes, u }
}
