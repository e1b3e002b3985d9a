//! Dense matrix functions used to realize group exponentials and flows.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const TAYLOR_ORDER: usize = 12;
const SCALE_TARGET: f64 = 0.5;
const MAX_SQUARINGS: i32 = 1000;

/// Branch selection for [`matrix_log`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogMode {
    Principal,
    Nilpotent,
}

/// Entries on and below the diagonal are exactly zero.
pub fn is_strictly_upper(m: &DMatrix<f64>) -> bool {
    let (r, c) = m.shape();
    (0..r).all(|i| (0..c.min(i + 1)).all(|j| m[(i, j)] == 0.0))
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} has non-finite entries"
        )))
    }
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Terminating series `sum_{k<index} M^k / k!` for `M^index = 0`.
pub fn matrix_exp_nilpotent(m: &DMatrix<f64>, index: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..index.max(1) {
        term = &term * m / k as f64;
        acc += &term;
    }
    acc
}

/// Matrix exponential by Taylor order 12 with scaling and squaring.
///
/// Strictly upper-triangular inputs take the terminating series, which is
/// exact up to roundoff.
pub fn matrix_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "matrix_exp input")?;
    check_finite(m, "matrix_exp input")?;
    let n = m.nrows();
    if is_strictly_upper(m) {
        return Ok(matrix_exp_nilpotent(m, n));
    }
    let norm = m.norm();
    let squarings = if norm > SCALE_TARGET {
        (norm / SCALE_TARGET).log2().ceil() as i32
    } else {
        0
    };
    if squarings > MAX_SQUARINGS {
        return Err(Error::NumericalOverflow(format!(
            "matrix_exp argument norm {norm:.3e} too large"
        )));
    }
    let a = m / 2f64.powi(squarings);
    // Horner: I + a(I + a/2(I + a/3(...)))
    let id = DMatrix::<f64>::identity(n, n);
    let mut acc = id.clone();
    for k in (1..=TAYLOR_ORDER).rev() {
        acc = &id + (&a * acc) / k as f64;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow(
            "matrix_exp result overflowed".into(),
        ));
    }
    Ok(acc)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Principal square root by the Denman-Beavers iteration.
pub fn matrix_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(g, "matrix_sqrt input")?;
    check_finite(g, "matrix_sqrt input")?;
    let n = g.nrows();
    let mut y = g.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LogDomainError("singular iterate in square root".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LogDomainError("singular iterate in square root".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::LogDomainError(
        "square root iteration did not converge".into(),
    ))
}

fn mercator(x: &DMatrix<f64>, max_terms: usize) -> DMatrix<f64> {
    // log(I + X) = X - X^2/2 + X^3/3 - ...
    let n = x.nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in 1..=max_terms {
        power = &power * x;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = &power * (sign / k as f64);
        let tn = term.norm();
        acc += term;
        if tn == 0.0 || tn < 1e-18 * acc.norm().max(1e-300) {
            break;
        }
    }
    acc
}

/// Matrix logarithm.
///
/// `Principal` requires `||g - I||_2 < 1` and uses inverse scaling and
/// squaring down to `||g - I||_F <= 0.25` before the Mercator series.
/// `Nilpotent` requires `g - I` nilpotent and sums the terminating series.
pub fn matrix_log(g: &DMatrix<f64>, mode: LogMode) -> Result<DMatrix<f64>> {
    check_square(g, "matrix_log input")?;
    check_finite(g, "matrix_log input")?;
    let n = g.nrows();
    let x = g - DMatrix::<f64>::identity(n, n);
    match mode {
        LogMode::Nilpotent => {
            let scale = x.norm().max(1.0);
            let mut p = x.clone();
            for _ in 1..n {
                p = &p * &x;
            }
            if p.amax() > 1e-12 * scale.powi(n as i32) {
                return Err(Error::LogDomainError("g - I is not nilpotent".into()));
            }
            Ok(mercator(&x, n.saturating_sub(1).max(1)))
        }
        LogMode::Principal => {
            let dist = spectral_norm(&x);
            if !(dist < 1.0) {
                return Err(Error::LogDomainError(format!(
                    "||g - I|| = {dist:.4} is not below 1"
                )));
            }
            if is_strictly_upper(&x) {
                return Ok(mercator(&x, n.saturating_sub(1).max(1)));
            }
            let mut root = g.clone();
            let mut halvings = 0;
            while (&root - DMatrix::<f64>::identity(n, n)).norm() > 0.25 {
                root = matrix_sqrt(&root)?;
                halvings += 1;
                if halvings > 60 {
                    return Err(Error::LogDomainError("too many square roots".into()));
                }
            }
            let xr = root - DMatrix::<f64>::identity(n, n);
            Ok(mercator(&xr, 80) * 2f64.powi(halvings))
        }
    }
}

/// Derivative of the exponential: `d/ds exp(Z + sV)` at `s = 0`, read off the
/// upper-right block of `exp([[Z, V], [0, Z]])`.
pub fn dexp(z: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = z.nrows();
    let mut block = DMatrix::<f64>::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(z);
    block.view_mut((0, d), (d, d)).copy_from(v);
    block.view_mut((d, d), (d, d)).copy_from(z);
    let e = matrix_exp(&block)?;
    Ok(e.view((0, d), (d, d)).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_matrix(seed: u64, n: usize, norm: f64) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng::gaussian(&mut r));
        let s = m.norm();
        m * (norm / s)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(matrix_exp(&z).unwrap(), DMatrix::identity(4, 4));
    }

    #[test]
    fn exp_of_nilpotent_jordan_block_is_exact() {
        let mut m = DMatrix::<f64>::zeros(3, 3);
        m[(0, 1)] = 1.0;
        m[(1, 2)] = 1.0;
        let expected = DMatrix::identity(3, 3) + &m + (&m * &m) * 0.5;
        assert_eq!(matrix_exp(&m).unwrap(), expected);
    }

    #[test]
    fn exp_times_exp_of_negative_is_identity() {
        for seed in 0..20 {
            let m = random_matrix(seed, 3, 1.0);
            let p = matrix_exp(&m).unwrap() * matrix_exp(&(-&m)).unwrap();
            assert!((p - DMatrix::identity(3, 3)).amax() < 1e-12);
        }
    }

    #[test]
    fn exp_matches_rotation_closed_form() {
        let theta: f64 = 2.5;
        let mut m = DMatrix::<f64>::zeros(2, 2);
        m[(0, 1)] = -theta;
        m[(1, 0)] = theta;
        let e = matrix_exp(&m).unwrap();
        assert!((e[(0, 0)] - theta.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - theta.sin()).abs() < 1e-14);
    }

    #[test]
    fn exp_relative_error_at_norm_ten() {
        // diagonal oracle
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![10.0, -3.0, 0.5]));
        let e = matrix_exp(&m).unwrap();
        for (i, v) in [10.0f64, -3.0, 0.5].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() / v.exp() < 1e-12);
        }
    }

    #[test]
    fn huge_argument_overflows() {
        let m = DMatrix::from_element(2, 2, 1e300);
        assert!(matches!(matrix_exp(&m), Err(Error::NumericalOverflow(_))));
    }

    #[test]
    fn log_of_identity_is_zero() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(matrix_log(&id, LogMode::Principal).unwrap().amax(), 0.0);
        assert_eq!(matrix_log(&id, LogMode::Nilpotent).unwrap().amax(), 0.0);
    }

    #[test]
    fn nilpotent_log_of_unit_heisenberg_element() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let l = matrix_log(&g, LogMode::Nilpotent).unwrap();
        assert_eq!(l[(0, 1)], 1.0);
        assert_eq!(l[(1, 2)], 1.0);
        assert_eq!(l[(0, 2)], 0.5);
    }

    #[test]
    fn principal_log_round_trip() {
        for seed in 0..20 {
            let g = DMatrix::identity(3, 3) + random_matrix(100 + seed, 3, 0.6);
            let l = matrix_log(&g, LogMode::Principal).unwrap();
            let back = matrix_exp(&l).unwrap();
            assert!((back - g).amax() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn log_outside_domain_is_rejected() {
        let g = DMatrix::<f64>::identity(2, 2) * -1.0;
        assert!(matches!(
            matrix_log(&g, LogMode::Principal),
            Err(Error::LogDomainError(_))
        ));
        let g = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert!(matrix_log(&g, LogMode::Nilpotent).is_err());
    }

    #[test]
    fn sqrt_squares_back() {
        let g = DMatrix::identity(3, 3) + random_matrix(5, 3, 0.8);
        let r = matrix_sqrt(&g).unwrap();
        assert!((&r * &r - g).amax() < 1e-13);
    }

    #[test]
    fn dexp_matches_finite_difference() {
        let z = random_matrix(11, 3, 1.2);
        let v = random_matrix(12, 3, 1.0);
        let h = 1e-5;
        let fd =
            (matrix_exp(&(&z + &v * h)).unwrap() - matrix_exp(&(&z - &v * h)).unwrap()) / (2.0 * h);
        assert!((dexp(&z, &v).unwrap() - fd).amax() < 1e-8);
    }
}
