use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::matfun::{matrix_exp, matrix_log, LogMode};
use super::{AlgebraElement, LieAlgebraDescriptor};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::rng;

/// A derivation of the algebra acting on coordinates, with its Leibniz
/// certificate, optional inner witness and nilpotency index.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivationSpec {
    matrix: DMatrix<f64>,
    leibniz_residual: f64,
    inner_witness: Option<AlgebraElement>,
    witness_residual: f64,
    nilpotency_index: Option<usize>,
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.norm().max(1.0)
}

impl DerivationSpec {
    /// Certifies `matrix` as a derivation and fills in witness and nilpotency
    /// data. Residual thresholds are relative to `max(1, |D|_F)`.
    pub fn new(alg: &LieAlgebraDescriptor, matrix: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        let n = alg.dim();
        if matrix.shape() != (n, n) {
            return Err(Error::InvalidInput(format!(
                "derivation must be {n}x{n}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite derivation entry".into()));
        }
        let leibniz = alg.leibniz_residual(&matrix);
        if leibniz >= tol.alg * scale_of(&matrix) {
            return Err(Error::NotADerivation { residual: leibniz });
        }
        let (w, r) = witness_least_squares(alg, &matrix);
        let inner_witness = (r < tol.inner * scale_of(&matrix)).then_some(w);
        let nilpotency_index = is_nilpotent_operator(&matrix, tol.alg);
        Ok(Self {
            matrix,
            leibniz_residual: leibniz,
            inner_witness,
            witness_residual: r,
            nilpotency_index,
        })
    }

    pub(crate) fn from_inner(
        alg: &LieAlgebraDescriptor,
        matrix: DMatrix<f64>,
        w: AlgebraElement,
    ) -> Self {
        let leibniz = alg.leibniz_residual(&matrix);
        let nilpotency_index = is_nilpotent_operator(&matrix, Tolerances::default().alg);
        Self {
            matrix,
            leibniz_residual: leibniz,
            inner_witness: Some(w),
            witness_residual: 0.0,
            nilpotency_index,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
            leibniz_residual: 0.0,
            inner_witness: Some(AlgebraElement::zero(n)),
            witness_residual: 0.0,
            nilpotency_index: Some(1),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn leibniz_residual(&self) -> f64 {
        self.leibniz_residual
    }

    pub fn inner_witness(&self) -> Option<&AlgebraElement> {
        self.inner_witness.as_ref()
    }

    pub fn witness_residual(&self) -> f64 {
        self.witness_residual
    }

    pub fn is_inner(&self) -> bool {
        self.inner_witness.is_some()
    }

    pub fn nilpotency_index(&self) -> Option<usize> {
        self.nilpotency_index
    }

    pub fn is_valid(&self, tol_alg: f64) -> bool {
        self.leibniz_residual < tol_alg * scale_of(&self.matrix)
    }

    /// `D v` on coordinates.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// Minimum-norm least-squares `W` for `ad(W) = D`, with `|ad(W) - D|_F`.
fn witness_least_squares(alg: &LieAlgebraDescriptor, d: &DMatrix<f64>) -> (AlgebraElement, f64) {
    let target = DVector::from_column_slice(d.as_slice());
    let w = alg.ad_pinv() * &target;
    let residual = (alg.ad_map() * &w - target).norm();
    (AlgebraElement::new(w), residual)
}

/// Solves `ad(W) = D` in the least-squares sense. The witness is returned
/// only when the residual is below `tol.inner`; the residual always is.
pub fn solve_inner_witness(
    d: &DMatrix<f64>,
    alg: &LieAlgebraDescriptor,
    tol: &Tolerances,
) -> Result<(Option<AlgebraElement>, f64)> {
    let n = alg.dim();
    if d.shape() != (n, n) {
        return Err(Error::InvalidInput(format!("derivation must be {n}x{n}")));
    }
    let leibniz = alg.leibniz_residual(d);
    if leibniz >= tol.alg * scale_of(d) {
        return Err(Error::NotADerivation { residual: leibniz });
    }
    let (w, r) = witness_least_squares(alg, d);
    Ok(((r < tol.inner * scale_of(d)).then_some(w), r))
}

/// Smallest `k <= n` with `|D^k|_max < tol * max(1, |D|^k)`.
pub fn is_nilpotent_operator(d: &DMatrix<f64>, tol_alg: f64) -> Option<usize> {
    let n = d.nrows();
    let scale = d.norm().max(1.0);
    let mut power = d.clone();
    for k in 1..=n.max(1) {
        if power.amax() < tol_alg * scale.powi(k as i32) {
            return Some(k);
        }
        power = &power * d;
    }
    None
}

/// Sign `s` with `d/dZ log(e^{tW} e^Z e^{-tW}) = exp(s t ad W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSign {
    Plus,
    Minus,
}

impl InnerSign {
    pub fn value(self) -> f64 {
        match self {
            InnerSign::Plus => 1.0,
            InnerSign::Minus => -1.0,
        }
    }
}

const FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian at 0 of `Z -> log(e^{tW} e^Z e^{-tW})` in
/// coordinates.
fn conjugation_jacobian(
    alg: &LieAlgebraDescriptor,
    w: &AlgebraElement,
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = alg.dim();
    let wm = alg.realize(&(w.coords() * t));
    let left = matrix_exp(&wm)?;
    let right = matrix_exp(&(-wm))?;
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut cols = [DVector::zeros(n), DVector::zeros(n)];
        for (slot, sign) in [1.0, -1.0].iter().enumerate() {
            let z = alg.realize(&(AlgebraElement::basis(n, k).0 * (sign * FD_STEP)));
            let g = &left * matrix_exp(&z)? * &right;
            let l = matrix_log(&g, LogMode::Principal)?;
            cols[slot] = alg.coords_of(&l);
        }
        jac.set_column(k, &((&cols[0] - &cols[1]) / (2.0 * FD_STEP)));
    }
    Ok(jac)
}

/// Determines which of `exp(+t ad W)` / `exp(-t ad W)` is the differential of
/// conjugation by `e^{tW}` at the identity. When both agree (t = 0, W
/// central) the result is `Plus`.
pub fn fix_inner_sign(alg: &LieAlgebraDescriptor, w: &AlgebraElement, t: f64) -> Result<InnerSign> {
    let jac = conjugation_jacobian(alg, w, t)?;
    let ad = alg.ad_coords(w.coords());
    let plus = matrix_exp(&(&ad * t))?;
    let minus = matrix_exp(&(&ad * -t))?;
    let tol = 1e-6 * plus.norm().max(minus.norm()).max(1.0);
    let err_plus = (&jac - plus).amax();
    let err_minus = (&jac - minus).amax();
    if err_plus < tol {
        Ok(InnerSign::Plus)
    } else if err_minus < tol {
        Ok(InnerSign::Minus)
    } else {
        Err(Error::ConventionError(format!(
            "conjugation differential matches neither sign (errors {err_plus:.3e}, {err_minus:.3e})"
        )))
    }
}

/// Runs [`fix_inner_sign`] on every basis element at `t = 1` and on a seeded
/// random unit element at `t = 0.5`; all probes must agree.
pub fn inner_sign(alg: &LieAlgebraDescriptor) -> Result<InnerSign> {
    let n = alg.dim();
    let mut probes: Vec<(AlgebraElement, f64)> =
        (0..n).map(|k| (AlgebraElement::basis(n, k), 1.0)).collect();
    let mut r = rng::seeded(0x51_6e);
    probes.push((AlgebraElement::new(rng::unit_vector(&mut r, n)), 0.5));
    let mut found: Option<InnerSign> = None;
    for (w, t) in &probes {
        let s = fix_inner_sign(alg, w, *t)?;
        // central probes cannot discriminate
        if alg.ad_coords(w.coords()).amax() == 0.0 {
            continue;
        }
        match found {
            None => found = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::ConventionError(
                    "inner sign differs between probes".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(found.unwrap_or(InnerSign::Plus))
}
