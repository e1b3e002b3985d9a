use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AlgebraElement, LieAlgebraDescriptor};
use crate::error::{Error, Result};

/// Linear subspace of the coordinate space, stored as orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Derived,
    LowerCentral,
}

impl Subspace {
    pub fn zero(n: usize) -> Self {
        Self {
            basis: DMatrix::zeros(n, 0),
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            basis: DMatrix::identity(n, n),
        }
    }

    /// Span of `vectors` by Gram-Schmidt with column pivoting. A candidate is
    /// kept while its residual exceeds `tol * max(1, |v|)`.
    pub fn span(n: usize, vectors: &[DVector<f64>], tol: f64) -> Self {
        let mut residuals: Vec<(DVector<f64>, f64)> = vectors
            .iter()
            .map(|v| (v.clone(), v.norm().max(1.0)))
            .collect();
        let mut chosen: Vec<DVector<f64>> = Vec::new();
        while chosen.len() < n {
            let best = residuals
                .iter()
                .enumerate()
                .map(|(i, (r, s))| (i, r.norm() / s))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let Some((idx, rel)) = best else { break };
            if rel <= tol {
                break;
            }
            let (pivot, _) = residuals.swap_remove(idx);
            let mut q = pivot.clone();
            // two passes for stability
            for _ in 0..2 {
                for c in &chosen {
                    let p = c.dot(&q);
                    q -= c * p;
                }
            }
            let qn = q.norm();
            if qn == 0.0 {
                continue;
            }
            let q = q / qn;
            for (r, _) in residuals.iter_mut() {
                let p = q.dot(r);
                *r -= &q * p;
            }
            chosen.push(q);
        }
        let basis = if chosen.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&chosen)
        };
        Self { basis }
    }

    pub fn from_columns(columns: &DMatrix<f64>, tol: f64) -> Self {
        let vs: Vec<DVector<f64>> = columns.column_iter().map(|c| c.into_owned()).collect();
        Self::span(columns.nrows(), &vs, tol)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn basis_vectors(&self) -> Vec<DVector<f64>> {
        self.basis.column_iter().map(|c| c.into_owned()).collect()
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(v.len());
        }
        &self.basis * (self.basis.transpose() * v)
    }

    /// Distance from `v` to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        (v - self.project(v)).norm()
    }

    /// Largest residual of `other`'s basis vectors; zero iff contained.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        other
            .basis
            .column_iter()
            .map(|c| self.residual(&c.into_owned()))
            .fold(0.0, f64::max)
    }

    /// Orthonormality defect of the stored columns.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis;
        (g - DMatrix::identity(self.dim(), self.dim())).amax()
    }

    /// Largest residual of `D v` over basis vectors `v`, measured against `target`.
    pub fn image_residual(&self, operator: &DMatrix<f64>, target: &Subspace) -> f64 {
        self.basis
            .column_iter()
            .map(|c| target.residual(&(operator * c)))
            .fold(0.0, f64::max)
    }
}

/// Largest component of `[u, v]` outside `space` over basis pairs.
pub fn closure_residual(alg: &LieAlgebraDescriptor, space: &Subspace) -> f64 {
    let vs = space.basis_vectors();
    let mut worst: f64 = 0.0;
    for (i, u) in vs.iter().enumerate() {
        for v in vs.iter().skip(i + 1) {
            let b = alg.bracket_coords(u, v);
            worst = worst.max(space.residual(&b));
        }
    }
    worst
}

/// Derived (`h_{i+1} = [h_i, h_i]`) or lower central (`n_{i+1} = [n, n_i]`)
/// series starting from `start`. Stops at the first repeated dimension (not
/// repeated in the output) or at the zero subspace (included).
pub fn subspace_series(
    alg: &LieAlgebraDescriptor,
    start: &Subspace,
    kind: SeriesKind,
    tol_alg: f64,
    tol_rank: f64,
) -> Result<Vec<Subspace>> {
    let n = alg.dim();
    if start.ambient_dim() != n {
        return Err(Error::InvalidInput(format!(
            "subspace lives in R^{}, algebra has dimension {n}",
            start.ambient_dim()
        )));
    }
    let residual = closure_residual(alg, start);
    if residual >= tol_alg {
        return Err(Error::NotASubalgebra { residual });
    }
    let mut series = vec![start.clone()];
    loop {
        let current = series.last().unwrap();
        if current.dim() == 0 {
            break;
        }
        let left = match kind {
            SeriesKind::Derived => current.basis_vectors(),
            SeriesKind::LowerCentral => start.basis_vectors(),
        };
        let right = current.basis_vectors();
        let mut brackets = Vec::with_capacity(left.len() * right.len());
        for a in &left {
            for b in &right {
                brackets.push(alg.bracket_coords(a, b));
            }
        }
        let next = Subspace::span(n, &brackets, tol_rank);
        if next.dim() == current.dim() {
            break;
        }
        series.push(next);
    }
    Ok(series)
}

impl From<&Subspace> for Vec<AlgebraElement> {
    fn from(s: &Subspace) -> Self {
        s.basis_vectors()
            .into_iter()
            .map(AlgebraElement::new)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_drops_dependent_vectors() {
        let vs = vec![
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![2.0, 0.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0, 0.0]),
        ];
        let s = Subspace::span(3, &vs, 1e-8);
        assert_eq!(s.dim(), 2);
        assert!(s.orthonormality_residual() < 1e-14);
        assert!(s.residual(&DVector::from_vec(vec![0.0, 0.0, 1.0])) > 0.99);
    }

    #[test]
    fn span_of_nothing_is_zero() {
        assert_eq!(Subspace::span(4, &[], 1e-8).dim(), 0);
        assert_eq!(Subspace::span(2, &[DVector::zeros(2)], 1e-8).dim(), 0);
    }
}
