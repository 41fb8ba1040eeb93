//! Minimal banded LU (no pivoting; intended for symmetric positive definite
//! assemblies) plus a rank-2 Woodbury update for the corner entries produced
//! by periodic wrap-around.

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    a: Vec<f64>,
}

impl BandedMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let w = kl + ku + 1;
        Self { n, kl, ku, w, a: vec![0.0; n * w] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * self.w + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.a[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.a[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// In-place LU without pivoting; panics on a vanishing pivot.
    pub fn factor(mut self) -> BandedLu {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let pivot = self.a[self.slot(k, k)];
            assert!(pivot.abs() > 1e-300, "banded LU hit a zero pivot at row {k}");
            let imax = (k + kl).min(n - 1);
            for i in (k + 1)..=imax {
                let sik = self.slot(i, k);
                let lik = self.a[sik] / pivot;
                self.a[sik] = lik;
                let jmax = (k + ku).min(n - 1);
                for j in (k + 1)..=jmax {
                    let akj = self.a[self.slot(k, j)];
                    if akj != 0.0 {
                        let s = self.slot(i, j);
                        self.a[s] -= lik * akj;
                    }
                }
            }
        }
        BandedLu { m: self }
    }
}

pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.m.n, self.m.kl, self.m.ku);
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 1..n {
            let jmin = i.saturating_sub(kl);
            let mut acc = x[i];
            for j in jmin..i {
                acc -= self.m.a[self.m.slot(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let jmax = (i + ku).min(n - 1);
            let mut acc = x[i];
            for j in (i + 1)..=jmax {
                acc -= self.m.a[self.m.slot(i, j)] * x[j];
            }
            x[i] = acc / self.m.a[self.m.slot(i, i)];
        }
        x
    }
}

/// Solves `(B + U W^T) x = b` where the update is the symmetric pair of
/// corner entries `c` at `(p, q)` and `(q, p)`, diagonally compensated so the
/// banded part `B` passed in stays positive definite:
///
/// `A = B + c e_p e_q^T + c e_q e_p^T - |c| e_p e_p^T - |c| e_q e_q^T`.
///
/// Callers assemble `B` by routing the corner values into `|c|` diagonal
/// additions at `p` and `q`; this keeps `B = A + |c| (e_p - s e_q)(...)^T`
/// positive definite whenever `A` is.
pub fn solve_with_sym_corner(b_mat: BandedMatrix, p: usize, q: usize, c: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let lu = b_mat.factor();
    let mut ep = vec![0.0; n];
    ep[p] = 1.0;
    let mut eq = vec![0.0; n];
    eq[q] = 1.0;
    let z1 = lu.solve(&ep);
    let z2 = lu.solve(&eq);
    let y = lu.solve(rhs);
    let g = c.abs();
    // W columns: w1 = -g e_p + c e_q, w2 = c e_p - g e_q.
    let m11 = 1.0 + (-g * z1[p] + c * z1[q]);
    let m12 = -g * z2[p] + c * z2[q];
    let m21 = c * z1[p] - g * z1[q];
    let m22 = 1.0 + (c * z2[p] - g * z2[q]);
    let r1 = -g * y[p] + c * y[q];
    let r2 = c * y[p] - g * y[q];
    let det = m11 * m22 - m12 * m21;
    assert!(det.abs() > 1e-300, "singular Woodbury block");
    let a1 = (m22 * r1 - m12 * r2) / det;
    let a2 = (m11 * r2 - m21 * r1) / det;
    let mut x = y;
    for i in 0..n {
        x[i] -= z1[i] * a1 + z2[i] * a2;
    }
    x
}
