//! Dense constitutive tensors of orders four, five and six.
//!
//! The material law couples a displacement gradient `G` (a `d x d` matrix,
//! stored row-major as `g[i*d + j] = dU_i/dx_j`) and a displacement Hessian
//! `Q` (a `d x d x d` array, `q[(n*d + l)*d + p] = d2U_n/dx_l dx_p`) through
//!
//! ```text
//! stress[i,j]        = K[i,j,k,l] G[k,l] + S[i,j,k,l,m] Q[k,l,m]
//! hyperstress[i,j,k] = A[i,j,k,n,l,p] Q[n,l,p] + S[n,l,i,j,k] G[n,l]
//! ```
//!
//! `K` and `A` are major-symmetric (invariant under swapping the first index
//! group with the second: `K[i,j,k,l] = K[k,l,i,j]`, `A[i,j,k,n,l,p] =
//! A[n,l,p,i,j,k]`). No minor symmetries are assumed anywhere: quadratic
//! forms are evaluated over *all* matrices and third-order arrays, not just
//! symmetric ones. `S` carries no symmetry at all; the same array couples
//! gradients into the hyperstress and Hessians into the stress, which keeps
//! the mixed terms of the energy a symmetric bilinear form.
//!
//! Ellipticity of `K`/`A` is estimated from the eigenvalues of the
//! `d^2 x d^2` / `d^3 x d^3` flattening; the inverse-form constant is
//! reported as the reciprocal of the largest eigenvalue.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest admissible spatial dimension.
pub const MAX_DIM: usize = 3;

/// Relative tolerance below which a symmetry defect is treated as exact.
const SYMMETRY_TOL: f64 = 1e-10;

fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "dimension must be 1..={MAX_DIM}, got {d}"
        )))
    }
}

/// Eigenvalue summary of a flattened constitutive tensor.
///
/// `min_eigenvalue` is the best lower ellipticity constant over all
/// (not necessarily symmetric) arguments; `1.0 / max_eigenvalue` bounds the
/// inverse form from below. `used_symmetric_part` records that the input had
/// a nontrivial major-symmetry defect and the estimate was taken on the
/// symmetric part of the flattening.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EllipticityEstimate {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub is_elliptic: bool,
    pub used_symmetric_part: bool,
}

fn estimate_from_flat(mut flat: DMatrix<f64>) -> Result<EllipticityEstimate> {
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor entries in ellipticity estimate".into()));
    }
    let scale = flat.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut defect = 0.0f64;
    for i in 0..flat.nrows() {
        for j in (i + 1)..flat.ncols() {
            defect = defect.max((flat[(i, j)] - flat[(j, i)]).abs());
        }
    }
    let used_symmetric_part = defect > SYMMETRY_TOL * scale;
    if defect > 0.0 {
        let t = flat.transpose();
        flat = (&flat + t) * 0.5;
    }
    let eig = flat.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(EllipticityEstimate {
        min_eigenvalue: min,
        max_eigenvalue: max,
        is_elliptic: min > 0.0,
        used_symmetric_part,
    })
}

fn frobenius(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn nested_json(data: &[f64], dims: &[usize]) -> serde_json::Value {
    if dims.len() == 1 {
        serde_json::Value::Array(data.iter().map(|v| serde_json::json!(v)).collect())
    } else {
        let chunk = data.len() / dims[0];
        serde_json::Value::Array(
            (0..dims[0])
                .map(|i| nested_json(&data[i * chunk..(i + 1) * chunk], &dims[1..]))
                .collect(),
        )
    }
}

fn flatten_json(value: &serde_json::Value, dims: &[usize], out: &mut Vec<f64>) -> bool {
    match value {
        serde_json::Value::Array(items) if items.len() == dims[0] => {
            if dims.len() == 1 {
                for it in items {
                    match it.as_f64() {
                        Some(v) => out.push(v),
                        None => return false,
                    }
                }
                true
            } else {
                items.iter().all(|it| flatten_json(it, &dims[1..], out))
            }
        }
        _ => false,
    }
}

macro_rules! tensor_serde {
    ($ty:ident, $rank:expr, $order:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                use serde::ser::SerializeStruct;
                let mut st = s.serialize_struct(stringify!($ty), 3)?;
                st.serialize_field("d", &self.d)?;
                st.serialize_field("index_order", $order)?;
                st.serialize_field("data", &nested_json(&self.data, &[self.d; $rank]))?;
                st.end()
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    d: usize,
                    index_order: String,
                    data: serde_json::Value,
                }
                let raw = Raw::deserialize(de)?;
                if raw.index_order != $order {
                    return Err(D::Error::custom(format!(
                        "expected index_order {:?}, got {:?}",
                        $order, raw.index_order
                    )));
                }
                check_dim(raw.d).map_err(D::Error::custom)?;
                let mut data = Vec::with_capacity(raw.d.pow($rank as u32));
                if !flatten_json(&raw.data, &[raw.d; $rank], &mut data) {
                    return Err(D::Error::custom("tensor data has wrong shape or non-numeric entries"));
                }
                Ok($ty { d: raw.d, data })
            }
        }
    };
}

/// Fourth-order stiffness `K[i,j,k,l]`, flat layout `((i*d + j)*d + k)*d + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self { d, data: vec![0.0; d.pow(4)] })
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut t = Self::zeros(d)?;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        t.set(i, j, k, l, f(i, j, k, l));
                    }
                }
            }
        }
        Ok(t)
    }

    /// Isotropic stiffness `lambda delta_ij delta_kl + mu (delta_ik delta_jl
    /// + delta_il delta_jk)`. Requires `mu > 0` and `d lambda + 2 mu > 0`.
    ///
    /// Note that an isotropic tensor annihilates antisymmetric matrices, so
    /// its full-flattening ellipticity constant is zero; add an
    /// [`identity_action`](Self::identity_action) multiple to obtain a
    /// strictly elliptic stiffness over all matrices.
    pub fn isotropic(lambda: f64, mu: f64, d: usize) -> Result<Self> {
        check_dim(d)?;
        if !(mu > 0.0) {
            return Err(Error::InvalidMaterial(format!("shear modulus must be positive, got {mu}")));
        }
        if !(d as f64 * lambda + 2.0 * mu > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "bulk combination d*lambda + 2*mu must be positive, got {}",
                d as f64 * lambda + 2.0 * mu
            )));
        }
        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Self::from_fn(d, |i, j, k, l| {
            lambda * kd(i, j) * kd(k, l) + mu * (kd(i, k) * kd(j, l) + kd(i, l) * kd(j, k))
        })
    }

    /// The identity on matrices: `K[i,j,k,l] = delta_ik delta_jl`.
    pub fn identity_action(d: usize) -> Result<Self> {
        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Self::from_fn(d, |i, j, k, l| kd(i, k) * kd(j, l))
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.d + j) * self.d + k) * self.d + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.d + j) * self.d + k) * self.d + l] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `out[i,j] = K[i,j,k,l] m[k,l]` for a row-major `d x d` argument.
    pub fn apply_into(&self, m: &[f64], out: &mut [f64]) {
        let d = self.d;
        let n = d * d;
        assert_eq!(m.len(), n);
        assert_eq!(out.len(), n);
        for r in 0..n {
            let row = &self.data[r * n..(r + 1) * n];
            let mut acc = 0.0;
            for c in 0..n {
                acc += row[c] * m[c];
            }
            out[r] = acc;
        }
    }

    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d * self.d];
        self.apply_into(m, &mut out);
        out
    }

    /// `K m : m`, the energy density of a gradient `m`.
    pub fn quadratic_form(&self, m: &[f64]) -> f64 {
        self.apply(m).iter().zip(m).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    /// `max |K[i,j,k,l] - K[k,l,i,j]|` over all index pairs.
    pub fn major_symmetry_defect(&self) -> f64 {
        let n = self.d * self.d;
        let mut defect = 0.0f64;
        for r in 0..n {
            for c in (r + 1)..n {
                defect = defect.max((self.data[r * n + c] - self.data[c * n + r]).abs());
            }
        }
        defect
    }

    pub fn is_major_symmetric(&self) -> bool {
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        self.major_symmetry_defect() <= SYMMETRY_TOL * scale
    }

    /// Flattening with row `(i*d + j)` and column `(k*d + l)`.
    pub fn flatten(&self) -> DMatrix<f64> {
        let n = self.d * self.d;
        DMatrix::from_row_iterator(n, n, self.data.iter().cloned())
    }

    pub fn ellipticity_estimate(&self) -> Result<EllipticityEstimate> {
        estimate_from_flat(self.flatten())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        if self.d != other.d {
            return Err(Error::ShapeMismatch("tensor dimensions differ".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(other, -1.0)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Fifth-order chiral coupling `S[i,j,k,l,m]`; the `(i,j)` pair contracts
/// with gradients, the `(k,l,m)` triple with Hessians. No symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor5 {
    pub fn zeros(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self { d, data: vec![0.0; d.pow(5)] })
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut t = Self::zeros(d)?;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        for m in 0..d {
                            t.set(i, j, k, l, m, f(i, j, k, l, m));
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize, m: usize) -> f64 {
        self.data[(((i * self.d + j) * self.d + k) * self.d + l) * self.d + m]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, m: usize, v: f64) {
        self.data[(((i * self.d + j) * self.d + k) * self.d + l) * self.d + m] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Hyperstress contribution `out[k,l,m] = S[i,j,k,l,m] g[i,j]`.
    pub fn apply_gradient(&self, g: &[f64]) -> Vec<f64> {
        let d = self.d;
        assert_eq!(g.len(), d * d);
        let n3 = d * d * d;
        let mut out = vec![0.0; n3];
        for (pair, &gv) in g.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let block = &self.data[pair * n3..(pair + 1) * n3];
            for (o, b) in out.iter_mut().zip(block) {
                *o += gv * b;
            }
        }
        out
    }

    /// Stress contribution `out[i,j] = S[i,j,k,l,m] q[k,l,m]`.
    pub fn apply_hessian(&self, q: &[f64]) -> Vec<f64> {
        let d = self.d;
        let n3 = d * d * d;
        assert_eq!(q.len(), n3);
        let mut out = vec![0.0; d * d];
        for pair in 0..d * d {
            let block = &self.data[pair * n3..(pair + 1) * n3];
            out[pair] = block.iter().zip(q).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        if other.d != self.d {
            return Err(Error::ShapeMismatch("tensor dimension mismatch".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }
}

/// Sixth-order second-gradient stiffness `A[i,j,k,n,l,p]`, flat layout with
/// the `(i,j,k)` triple first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor6 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor6 {
    pub fn zeros(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self { d, data: vec![0.0; d.pow(6)] })
    }

    pub fn from_fn(
        d: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(d)?;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for n in 0..d {
                        for l in 0..d {
                            for p in 0..d {
                                t.set(i, j, k, n, l, p, f(i, j, k, n, l, p));
                            }
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    /// `A[i,j,k,n,l,p] = eta delta_in delta_jl delta_kp`, the simplest
    /// second-gradient stiffness: `A q ... q = eta |q|^2`.
    pub fn diagonal(eta: f64, d: usize) -> Result<Self> {
        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Self::from_fn(d, |i, j, k, n, l, p| eta * kd(i, n) * kd(j, l) * kd(k, p))
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, n: usize, l: usize, p: usize) -> f64 {
        let d = self.d;
        self.data[((((i * d + j) * d + k) * d + n) * d + l) * d + p]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, n: usize, l: usize, p: usize, v: f64) {
        let d = self.d;
        self.data[((((i * d + j) * d + k) * d + n) * d + l) * d + p] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `out[i,j,k] = A[i,j,k,n,l,p] q[n,l,p]`.
    pub fn apply_into(&self, q: &[f64], out: &mut [f64]) {
        let n3 = self.d.pow(3);
        assert_eq!(q.len(), n3);
        assert_eq!(out.len(), n3);
        for r in 0..n3 {
            let row = &self.data[r * n3..(r + 1) * n3];
            let mut acc = 0.0;
            for c in 0..n3 {
                acc += row[c] * q[c];
            }
            out[r] = acc;
        }
    }

    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d.pow(3)];
        self.apply_into(q, &mut out);
        out
    }

    /// `A q ... q`, the second-gradient energy density.
    pub fn quadratic_form(&self, q: &[f64]) -> f64 {
        self.apply(q).iter().zip(q).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    pub fn major_symmetry_defect(&self) -> f64 {
        let n = self.d.pow(3);
        let mut defect = 0.0f64;
        for r in 0..n {
            for c in (r + 1)..n {
                defect = defect.max((self.data[r * n + c] - self.data[c * n + r]).abs());
            }
        }
        defect
    }

    pub fn is_major_symmetric(&self) -> bool {
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        self.major_symmetry_defect() <= SYMMETRY_TOL * scale
    }

    /// Flattening with row `(i*d + j)*d + k` and column `(n*d + l)*d + p`.
    pub fn flatten(&self) -> DMatrix<f64> {
        let n = self.d.pow(3);
        DMatrix::from_row_iterator(n, n, self.data.iter().cloned())
    }

    pub fn ellipticity_estimate(&self) -> Result<EllipticityEstimate> {
        estimate_from_flat(self.flatten())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        if self.d != other.d {
            return Err(Error::ShapeMismatch("tensor dimensions differ".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(other, -1.0)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

tensor_serde!(Tensor4, 4, "ijkl");
tensor_serde!(Tensor5, 5, "ijklm");
tensor_serde!(Tensor6, 6, "ijknlp");
