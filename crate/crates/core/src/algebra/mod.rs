//! Lie-algebra kernel: structure constants, brackets, adjoint operators,
//! derivations and matrix functions.

mod derivation;
pub mod matfun;
mod subspace;

pub use derivation::{
    fix_inner_sign, inner_sign, is_nilpotent_operator, solve_inner_witness, DerivationSpec,
    InnerSign,
};
pub use matfun::{dexp, matrix_exp, matrix_exp_nilpotent, matrix_log, matrix_sqrt, LogMode};
pub use subspace::{closure_residual, subspace_series, SeriesKind, Subspace};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates of an algebra element in a descriptor's basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement(pub DVector<f64>);

impl AlgebraElement {
    pub fn new(coords: DVector<f64>) -> Self {
        Self(coords)
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self(DVector::from_column_slice(coords))
    }

    pub fn zero(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        Self(v)
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Basis, structure constants and matrix realization of a finite-dimensional
/// real Lie algebra. `[e_i, e_j] = sum_k c[i][j][k] e_k`.
#[derive(Debug, Clone)]
pub struct LieAlgebraDescriptor {
    name: String,
    dim: usize,
    ambient_dim: usize,
    // flat, index (i * n + j) * n + k
    constants: Vec<f64>,
    realization: Vec<DMatrix<f64>>,
    // n x d^2, maps a column-major vectorized matrix to coordinates
    coord_map: DMatrix<f64>,
    // n^2 x n, column k is vec(ad(e_k))
    ad_map: DMatrix<f64>,
    // n x n^2, Moore-Penrose inverse of ad_map
    ad_pinv: DMatrix<f64>,
}

/// Residuals of the descriptor's defining identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraResiduals {
    pub antisymmetry: f64,
    pub jacobi: f64,
    pub realization: f64,
}

impl AlgebraResiduals {
    pub fn passes(&self, tol_alg: f64) -> bool {
        self.antisymmetry == 0.0 && self.jacobi < tol_alg && self.realization < tol_alg
    }
}

/// JSON form of a descriptor. Realization matrices are nested row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorJson {
    pub name: String,
    pub dim: usize,
    pub structure_constants: Vec<Vec<Vec<f64>>>,
    pub realization: Vec<Vec<Vec<f64>>>,
    pub ambient_dim: usize,
}

fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-10 * smax.max(1.0);
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

impl LieAlgebraDescriptor {
    /// Builds a descriptor from explicit structure constants and realization.
    ///
    /// Shapes, finiteness and exact antisymmetry are enforced here; Jacobi and
    /// realization consistency are reported by [`Self::residuals`] so a broken
    /// descriptor can still be loaded and diagnosed.
    pub fn new(
        name: impl Into<String>,
        constants: Vec<Vec<Vec<f64>>>,
        realization: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let name = name.into();
        let n = constants.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "algebra dimension must be positive".into(),
            ));
        }
        if realization.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} realization matrices for dimension {n}",
                realization.len()
            )));
        }
        let d = realization[0].nrows();
        if d == 0 || realization.iter().any(|m| m.shape() != (d, d)) {
            return Err(Error::InvalidInput(
                "realization matrices must be square and of equal size".into(),
            ));
        }
        let mut flat = vec![0.0; n * n * n];
        for (i, plane) in constants.iter().enumerate() {
            if plane.len() != n {
                return Err(Error::InvalidInput(
                    "structure constants must be n x n x n".into(),
                ));
            }
            for (j, row) in plane.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::InvalidInput(
                        "structure constants must be n x n x n".into(),
                    ));
                }
                for (k, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::InvalidInput("non-finite structure constant".into()));
                    }
                    flat[(i * n + j) * n + k] = *v;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if flat[(i * n + j) * n + k] != -flat[(j * n + i) * n + k] {
                        return Err(Error::InvalidInput(format!(
                            "structure constants not antisymmetric at ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        if realization.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("non-finite realization entry".into()));
        }
        let basis_cols: Vec<DVector<f64>> = realization.iter().map(vectorize).collect();
        let basis_mat = DMatrix::from_columns(&basis_cols);
        if basis_mat.rank(1e-10) != n {
            return Err(Error::InvalidInput(
                "realization matrices are linearly dependent".into(),
            ));
        }
        let coord_map = pseudo_inverse(&basis_mat);

        let mut ad_map = DMatrix::zeros(n * n, n);
        for a in 0..n {
            // ad(e_a) column j = coords of [e_a, e_j] = c[a][j][.]
            for j in 0..n {
                for k in 0..n {
                    ad_map[(j * n + k, a)] = flat[(a * n + j) * n + k];
                }
            }
        }
        let ad_pinv = pseudo_inverse(&ad_map);
        Ok(Self {
            name,
            dim: n,
            ambient_dim: d,
            constants: flat,
            realization,
            coord_map,
            ad_map,
            ad_pinv,
        })
    }

    /// Derives structure constants from commutators of the given basis.
    pub fn from_realization(name: impl Into<String>, basis: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = basis.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty basis".into()));
        }
        let cols: Vec<DVector<f64>> = basis.iter().map(vectorize).collect();
        let pinv = pseudo_inverse(&DMatrix::from_columns(&cols));
        let mut constants = vec![vec![vec![0.0; n]; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let comm = &basis[i] * &basis[j] - &basis[j] * &basis[i];
                let c = &pinv * vectorize(&comm);
                for k in 0..n {
                    // snap pseudo-inverse roundoff onto integers
                    let v = if (c[k] - c[k].round()).abs() < 1e-12 {
                        c[k].round()
                    } else {
                        c[k]
                    };
                    constants[i][j][k] = v;
                    constants[j][i][k] = -v;
                }
            }
        }
        Self::new(name, constants, basis)
    }

    pub fn from_json(doc: &DescriptorJson) -> Result<Self> {
        let d = doc.ambient_dim;
        let mut mats = Vec::with_capacity(doc.realization.len());
        for m in &doc.realization {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidInput(format!(
                    "realization matrix is not {d}x{d}"
                )));
            }
            mats.push(DMatrix::from_fn(d, d, |i, j| m[i][j]));
        }
        if doc.structure_constants.len() != doc.dim {
            return Err(Error::InvalidInput(format!(
                "declared dim {} but {} structure-constant planes",
                doc.dim,
                doc.structure_constants.len()
            )));
        }
        Self::new(doc.name.clone(), doc.structure_constants.clone(), mats)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: DescriptorJson =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_json(&doc)
    }

    pub fn to_json(&self) -> DescriptorJson {
        let n = self.dim;
        DescriptorJson {
            name: self.name.clone(),
            dim: n,
            structure_constants: (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).map(|k| self.c(i, j, k)).collect())
                        .collect()
                })
                .collect(),
            realization: self
                .realization
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().cloned().collect()).collect())
                .collect(),
            ambient_dim: self.ambient_dim,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.constants[(i * self.dim + j) * self.dim + k]
    }

    pub fn realization(&self) -> &[DMatrix<f64>] {
        &self.realization
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() == self.dim {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "element has {} coordinates, algebra `{}` has dimension {}",
                v.len(),
                self.name,
                self.dim
            )))
        }
    }

    /// Bracket from structure constants, unchecked dimensions.
    pub fn bracket_coords(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut out = DVector::zeros(n);
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = a[i] * b[j];
                if w == 0.0 {
                    continue;
                }
                for k in 0..n {
                    out[k] += w * self.c(i, j, k);
                }
            }
        }
        out
    }

    pub fn bracket(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement> {
        self.check_dim(&a.0)?;
        self.check_dim(&b.0)?;
        Ok(AlgebraElement(self.bracket_coords(&a.0, &b.0)))
    }

    /// Matrix of `ad(a)` acting on coordinates.
    pub fn ad_coords(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let v = &self.ad_map * a;
        DMatrix::from_column_slice(n, n, v.as_slice())
    }

    /// `ad(a)` as a derivation, with `a` recorded as its own inner witness.
    pub fn ad_matrix(&self, a: &AlgebraElement) -> Result<DerivationSpec> {
        self.check_dim(&a.0)?;
        if !a.is_finite() {
            return Err(Error::InvalidInput("non-finite element".into()));
        }
        let m = self.ad_coords(&a.0);
        Ok(DerivationSpec::from_inner(self, m, a.clone()))
    }

    /// The linear map `W -> vec(ad W)`.
    pub fn ad_map(&self) -> &DMatrix<f64> {
        &self.ad_map
    }

    pub(crate) fn ad_pinv(&self) -> &DMatrix<f64> {
        &self.ad_pinv
    }

    /// Realization matrix of an element.
    pub fn realize(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        let d = self.ambient_dim;
        let mut m = DMatrix::zeros(d, d);
        for (k, e) in self.realization.iter().enumerate() {
            if coords[k] != 0.0 {
                m += e * coords[k];
            }
        }
        m
    }

    /// Least-squares coordinates of an ambient matrix.
    pub fn coords_of(&self, m: &DMatrix<f64>) -> DVector<f64> {
        &self.coord_map * vectorize(m)
    }

    /// Coordinates plus the Frobenius distance of `m` from the realized algebra.
    pub fn coords_with_residual(&self, m: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let c = self.coords_of(m);
        let r = (self.realize(&c) - m).norm();
        (c, r)
    }

    pub fn residuals(&self) -> AlgebraResiduals {
        let n = self.dim;
        let mut anti: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    anti = anti.max((self.c(i, j, k) + self.c(j, i, k)).abs());
                }
            }
        }
        let e = |i: usize| {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            v
        };
        let mut jac: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let ij = self.bracket_coords(&e(i), &e(j));
                for l in 0..n {
                    let jl = self.bracket_coords(&e(j), &e(l));
                    let li = self.bracket_coords(&e(l), &e(i));
                    let s = self.bracket_coords(&ij, &e(l))
                        + self.bracket_coords(&jl, &e(i))
                        + self.bracket_coords(&li, &e(j));
                    jac = jac.max(s.norm());
                }
            }
        }
        let mut real: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let comm = &self.realization[i] * &self.realization[j]
                    - &self.realization[j] * &self.realization[i];
                let mut via_c = DMatrix::zeros(self.ambient_dim, self.ambient_dim);
                for k in 0..n {
                    via_c += &self.realization[k] * self.c(i, j, k);
                }
                real = real.max((comm - via_c).norm());
            }
        }
        AlgebraResiduals {
            antisymmetry: anti,
            jacobi: jac,
            realization: real,
        }
    }

    pub fn validate(&self, tol_alg: f64) -> Result<AlgebraResiduals> {
        let r = self.residuals();
        if r.passes(tol_alg) {
            Ok(r)
        } else {
            Err(Error::InvalidInput(format!(
                "algebra `{}` fails its identities: jacobi {:.3e}, realization {:.3e}",
                self.name, r.jacobi, r.realization
            )))
        }
    }

    /// Kernel of `ad`.
    pub fn center(&self, tol_rank: f64) -> Subspace {
        null_space(&self.ad_map, tol_rank)
    }

    /// Killing form `K_ij = tr(ad e_i ad e_j)`.
    pub fn killing_form(&self) -> DMatrix<f64> {
        let n = self.dim;
        let ads: Vec<DMatrix<f64>> = (0..n)
            .map(|i| self.ad_coords(&AlgebraElement::basis(n, i).0))
            .collect();
        DMatrix::from_fn(n, n, |i, j| (&ads[i] * &ads[j]).trace())
    }

    pub fn is_semisimple(&self, tol_rank: f64) -> bool {
        self.killing_form().rank(tol_rank.max(1e-12)) == self.dim
    }

    /// Leibniz defect of a coordinate operator: largest
    /// `|D[e_i,e_j] - [De_i,e_j] - [e_i,De_j]|` over basis pairs.
    pub fn leibniz_residual(&self, d: &DMatrix<f64>) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let ei = AlgebraElement::basis(n, i).0;
            let dei = d.column(i).into_owned();
            for j in 0..n {
                let ej = AlgebraElement::basis(n, j).0;
                let dej = d.column(j).into_owned();
                let lhs = d * self.bracket_coords(&ei, &ej);
                let rhs = self.bracket_coords(&dei, &ej) + self.bracket_coords(&ei, &dej);
                worst = worst.max((lhs - rhs).norm());
            }
        }
        worst
    }

    /// Basis of the derivation algebra, as coordinate operators.
    pub fn derivation_basis(&self, tol_rank: f64) -> Vec<DMatrix<f64>> {
        let n = self.dim;
        let mut leibniz = DMatrix::zeros(n * n * n, n * n);
        for r in 0..n {
            for s in 0..n {
                let mut unit = DMatrix::zeros(n, n);
                unit[(r, s)] = 1.0;
                let col = r + s * n;
                let mut row = 0;
                for i in 0..n {
                    let ei = AlgebraElement::basis(n, i).0;
                    for j in 0..n {
                        let ej = AlgebraElement::basis(n, j).0;
                        let lhs = &unit * self.bracket_coords(&ei, &ej);
                        let rhs = self.bracket_coords(&unit.column(i).into_owned(), &ej)
                            + self.bracket_coords(&ei, &unit.column(j).into_owned());
                        let diff = lhs - rhs;
                        for k in 0..n {
                            leibniz[(row + k, col)] = diff[k];
                        }
                        row += n;
                    }
                }
            }
        }
        let kernel = null_space(&leibniz, tol_rank);
        kernel
            .basis_vectors()
            .into_iter()
            .map(|v| DMatrix::from_column_slice(n, n, v.as_slice()))
            .collect()
    }
}

/// Right null space via SVD, singular values below `tol * max(1, s_max)`.
pub(crate) fn null_space(m: &DMatrix<f64>, tol: f64) -> Subspace {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return Subspace::full(cols);
    }
    // pad to at least square so v_t is cols x cols
    let work = if m.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), m.shape()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let thresh = tol * smax.max(1.0);
    let vecs: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= thresh)
        .map(|(i, _)| v_t.row(i).transpose().into_owned())
        .collect();
    Subspace::span(cols, &vecs, 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn heisenberg() -> LieAlgebraDescriptor {
        let e = |i: usize, j: usize| {
            let mut m = DMatrix::zeros(3, 3);
            m[(i, j)] = 1.0;
            m
        };
        LieAlgebraDescriptor::from_realization("heisenberg", vec![e(0, 1), e(1, 2), e(0, 2)])
            .unwrap()
    }

    fn so3() -> LieAlgebraDescriptor {
        let l1 = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 0., -1., 0., 1., 0.]);
        let l2 = DMatrix::from_row_slice(3, 3, &[0., 0., 1., 0., 0., 0., -1., 0., 0.]);
        let l3 = DMatrix::from_row_slice(3, 3, &[0., -1., 0., 1., 0., 0., 0., 0., 0.]);
        LieAlgebraDescriptor::from_realization("so3", vec![l1, l2, l3]).unwrap()
    }

    #[test]
    fn heisenberg_brackets() {
        let h = heisenberg();
        let x = AlgebraElement::basis(3, 0);
        let y = AlgebraElement::basis(3, 1);
        let z = AlgebraElement::basis(3, 2);
        assert_eq!(h.bracket(&x, &y).unwrap(), z);
        assert_eq!(h.bracket(&x, &z).unwrap().norm(), 0.0);
        assert_eq!(h.bracket(&y, &z).unwrap().norm(), 0.0);
        assert_eq!(h.bracket(&x, &x).unwrap().norm(), 0.0);
    }

    #[test]
    fn bracket_dimension_mismatch() {
        let h = heisenberg();
        let bad = AlgebraElement::zero(2);
        assert!(matches!(
            h.bracket(&bad, &AlgebraElement::zero(3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn heisenberg_ad_x_sends_y_to_z() {
        let h = heisenberg();
        let d = h.ad_matrix(&AlgebraElement::basis(3, 0)).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(2, 1)] = 1.0;
        assert_eq!(d.matrix(), &expected);
        assert_eq!(d.witness_residual(), 0.0);
        let zero = h.ad_matrix(&AlgebraElement::zero(3)).unwrap();
        assert_eq!(zero.matrix().amax(), 0.0);
    }

    #[test]
    fn so3_ad_is_antisymmetric() {
        let g = so3();
        for k in 0..3 {
            let m = g.ad_coords(&AlgebraElement::basis(3, k).0);
            assert_eq!(&m + m.transpose(), DMatrix::zeros(3, 3));
        }
        assert!(g.is_semisimple(1e-8));
        assert_eq!(g.center(1e-8).dim(), 0);
    }

    #[test]
    fn residuals_of_good_and_corrupted_algebras() {
        let h = heisenberg();
        assert!(h.residuals().passes(1e-9));
        let mut doc = h.to_json();
        // [X, Z] = X breaks Jacobi
        doc.structure_constants[0][2][0] = 1.0;
        doc.structure_constants[2][0][0] = -1.0;
        let bad = LieAlgebraDescriptor::from_json(&doc).unwrap();
        let r = bad.residuals();
        assert!(r.jacobi > 0.5);
        assert!(bad.validate(1e-9).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = so3();
        let text = serde_json::to_string(&g.to_json()).unwrap();
        let back = LieAlgebraDescriptor::from_json_str(&text).unwrap();
        assert_eq!(back.dim(), 3);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(back.c(i, j, k), g.c(i, j, k));
                }
            }
        }
    }

    #[test]
    fn non_antisymmetric_constants_are_rejected() {
        let h = heisenberg();
        let mut doc = h.to_json();
        doc.structure_constants[0][1][2] = 2.0;
        assert!(LieAlgebraDescriptor::from_json(&doc).is_err());
    }

    #[test]
    fn heisenberg_derivation_algebra_has_dimension_six() {
        // gl(2) acting on span{X, Y} plus maps into the center
        let h = heisenberg();
        let basis = h.derivation_basis(1e-8);
        assert_eq!(basis.len(), 6);
        for d in &basis {
            assert!(h.leibniz_residual(d) < 1e-12);
        }
        assert_eq!(h.center(1e-8).dim(), 1);
    }
}
