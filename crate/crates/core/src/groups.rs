//! Catalog of matrix Lie groups: operations, exp/log charts, metrics and
//! subgroup data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::matfun::spectral_norm;
use crate::algebra::{
    matrix_exp, matrix_log, matrix_sqrt, subspace_series, AlgebraElement, LieAlgebraDescriptor,
    LogMode, SeriesKind, Subspace,
};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

/// Rotations closer than this to a half-turn are outside the SO3 log domain.
pub const SO3_LOG_MARGIN: f64 = 1e-4;

/// Membership residuals above this are rejected rather than projected.
pub const PROJECTION_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GroupKind {
    Rn(usize),
    Heisenberg3,
    SO3,
    SL2,
    AffPlus,
    GLnPlus(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    BiInvariant,
    ChartFrobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassFlags {
    pub abelian: bool,
    pub nilpotent: bool,
    pub solvable: bool,
    pub semisimple: bool,
    pub compact: bool,
    pub simply_connected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupData {
    pub derived_algebra: Subspace,
    pub center_algebra: Subspace,
    pub nilradical_algebra: Subspace,
    /// Solvable radical, when the catalog provides one.
    pub radical_algebra: Option<Subspace>,
    pub derived_series: Vec<Subspace>,
    pub lower_central_series: Vec<Subspace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LogKind {
    Nilpotent,
    Rodrigues,
    AffineClosed,
    Principal,
}

/// Parameters accepted by [`make_group`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

impl GroupParams {
    pub fn with_n(n: usize) -> Self {
        Self { n: Some(n) }
    }
}

/// A matrix of the chart's group. Construct through [`GroupChart::element`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    matrix: DMatrix<f64>,
}

impl GroupElement {
    pub(crate) fn from_raw(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.matrix.transpose().as_slice().to_vec()
    }

    pub fn max_abs_diff(&self, other: &GroupElement) -> f64 {
        (&self.matrix - &other.matrix).amax()
    }
}

#[derive(Debug, Clone)]
pub struct GroupChart {
    kind: GroupKind,
    name: String,
    algebra: LieAlgebraDescriptor,
    flags: ClassFlags,
    metric_kind: MetricKind,
    subgroups: SubgroupData,
    log_kind: LogKind,
    tol: Tolerances,
}

fn unit(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    m[(i, j)] = 1.0;
    m
}

fn so3_basis() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 0., -1., 0., 1., 0.]),
        DMatrix::from_row_slice(3, 3, &[0., 0., 1., 0., 0., 0., -1., 0., 0.]),
        DMatrix::from_row_slice(3, 3, &[0., -1., 0., 1., 0., 0., 0., 0., 0.]),
    ]
}

/// Builds a catalog chart. Names: `Rn`, `Heisenberg3`, `SO3`, `SL2`,
/// `AffPlus`, `GLnPlus`; `Rn` and `GLnPlus` need `params.n`.
pub fn make_group(name: &str, params: &GroupParams) -> Result<GroupChart> {
    let need_n = |what: &str| -> Result<usize> {
        match params.n {
            Some(n) if n >= 1 => Ok(n),
            Some(_) => Err(Error::InvalidInput(format!("{what} needs n >= 1"))),
            None => Err(Error::InvalidInput(format!("{what} needs params.n"))),
        }
    };
    let kind = match name {
        "Rn" => GroupKind::Rn(need_n("Rn")?),
        "Heisenberg3" => GroupKind::Heisenberg3,
        "SO3" => GroupKind::SO3,
        "SL2" => GroupKind::SL2,
        "AffPlus" => GroupKind::AffPlus,
        "GLnPlus" => GroupKind::GLnPlus(need_n("GLnPlus")?),
        other => return Err(Error::UnknownGroup(other.to_string())),
    };
    GroupChart::new(kind, Tolerances::default())
}

impl GroupChart {
    pub fn new(kind: GroupKind, tol: Tolerances) -> Result<Self> {
        let (name, basis, log_kind, metric_kind, compact, simply_connected) = match kind {
            GroupKind::Rn(n) => (
                "Rn".to_string(),
                (0..n).map(|i| unit(n + 1, i, n)).collect(),
                LogKind::Nilpotent,
                MetricKind::ChartFrobenius,
                false,
                true,
            ),
            GroupKind::Heisenberg3 => (
                "Heisenberg3".to_string(),
                vec![unit(3, 0, 1), unit(3, 1, 2), unit(3, 0, 2)],
                LogKind::Nilpotent,
                MetricKind::ChartFrobenius,
                false,
                true,
            ),
            GroupKind::SO3 => (
                "SO3".to_string(),
                so3_basis(),
                LogKind::Rodrigues,
                MetricKind::BiInvariant,
                true,
                false,
            ),
            GroupKind::SL2 => (
                "SL2".to_string(),
                vec![
                    DMatrix::from_row_slice(2, 2, &[1., 0., 0., -1.]),
                    unit(2, 0, 1),
                    unit(2, 1, 0),
                ],
                LogKind::Principal,
                MetricKind::ChartFrobenius,
                false,
                false,
            ),
            GroupKind::AffPlus => (
                "AffPlus".to_string(),
                vec![unit(2, 0, 0), unit(2, 0, 1)],
                LogKind::AffineClosed,
                MetricKind::ChartFrobenius,
                false,
                true,
            ),
            GroupKind::GLnPlus(n) => (
                "GLnPlus".to_string(),
                (0..n * n).map(|k| unit(n, k / n, k % n)).collect(),
                LogKind::Principal,
                MetricKind::ChartFrobenius,
                false,
                n == 1,
            ),
        };
        let algebra = LieAlgebraDescriptor::from_realization(name.to_lowercase(), basis)?;
        algebra.validate(tol.alg)?;
        let n = algebra.dim();
        let full = Subspace::full(n);
        let derived_series =
            subspace_series(&algebra, &full, SeriesKind::Derived, tol.alg, tol.rank)?;
        let lower_central_series =
            subspace_series(&algebra, &full, SeriesKind::LowerCentral, tol.alg, tol.rank)?;
        let derived_algebra = derived_series
            .get(1)
            .cloned()
            .unwrap_or_else(|| full.clone());
        let center_algebra = algebra.center(tol.rank);
        let (nilradical_algebra, radical_algebra) = match kind {
            GroupKind::Rn(_) | GroupKind::Heisenberg3 => (full.clone(), Some(full.clone())),
            GroupKind::AffPlus => (
                Subspace::span(n, &[AlgebraElement::basis(n, 1).0], tol.rank),
                Some(full.clone()),
            ),
            GroupKind::SO3 | GroupKind::SL2 => (Subspace::zero(n), Some(Subspace::zero(n))),
            GroupKind::GLnPlus(_) => (center_algebra.clone(), Some(center_algebra.clone())),
        };
        let flags = ClassFlags {
            abelian: derived_algebra.dim() == 0,
            nilpotent: lower_central_series.last().map(Subspace::dim) == Some(0),
            solvable: derived_series.last().map(Subspace::dim) == Some(0),
            semisimple: algebra.is_semisimple(tol.rank),
            compact,
            simply_connected,
        };
        Ok(Self {
            kind,
            name,
            algebra,
            flags,
            metric_kind,
            subgroups: SubgroupData {
                derived_algebra,
                center_algebra,
                nilradical_algebra,
                radical_algebra,
                derived_series,
                lower_central_series,
            },
            log_kind,
            tol,
        })
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn algebra(&self) -> &LieAlgebraDescriptor {
        &self.algebra
    }

    pub fn flags(&self) -> &ClassFlags {
        &self.flags
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.metric_kind
    }

    pub fn subgroups(&self) -> &SubgroupData {
        &self.subgroups
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.algebra.ambient_dim()
    }

    /// True when the log chart covers the whole group.
    pub fn has_global_log(&self) -> bool {
        matches!(self.log_kind, LogKind::Nilpotent | LogKind::AffineClosed)
    }

    pub fn identity(&self) -> GroupElement {
        let d = self.ambient_dim();
        GroupElement::from_raw(DMatrix::identity(d, d))
    }

    /// Defining-constraint residual of an ambient matrix.
    pub fn membership_residual(&self, m: &DMatrix<f64>) -> f64 {
        let d = self.ambient_dim();
        if m.shape() != (d, d) || m.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        match self.kind {
            GroupKind::Rn(n) => pattern_residual(m, |i, j| j == n && i < n),
            GroupKind::Heisenberg3 => pattern_residual(m, |i, j| i < j),
            GroupKind::SO3 => {
                let orth = (m.transpose() * m - DMatrix::identity(3, 3)).amax();
                orth.max((m.determinant() - 1.0).abs())
            }
            GroupKind::SL2 => (m.determinant() - 1.0).abs(),
            GroupKind::AffPlus => {
                if m[(0, 0)] <= 0.0 {
                    return f64::INFINITY;
                }
                m[(1, 0)].abs().max((m[(1, 1)] - 1.0).abs())
            }
            GroupKind::GLnPlus(_) => {
                if m.determinant() > 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Maps a nearly-member matrix back onto the group: pattern reset for
    /// unipotent/affine charts, polar factor for SO3, determinant scaling for
    /// SL2. Residuals at or above [`PROJECTION_LIMIT`] are rejected.
    pub fn project(&self, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
        let residual = self.membership_residual(&m);
        if !(residual < PROJECTION_LIMIT) {
            return Err(Error::Membership { residual });
        }
        Ok(match self.kind {
            GroupKind::Rn(n) => reset_pattern(m, |i, j| j == n && i < n),
            GroupKind::Heisenberg3 => reset_pattern(m, |i, j| i < j),
            GroupKind::AffPlus => {
                let mut m = m;
                m[(1, 0)] = 0.0;
                m[(1, 1)] = 1.0;
                m
            }
            GroupKind::SO3 if residual > self.tol.grp => polar(&m),
            GroupKind::SL2 if residual > self.tol.grp => {
                let det = m.determinant();
                m / det.sqrt()
            }
            _ => m,
        })
    }

    /// Checked construction; small drift is projected away.
    pub fn element(&self, m: DMatrix<f64>) -> Result<GroupElement> {
        self.project(m).map(GroupElement::from_raw)
    }

    pub fn mul(&self, g: &GroupElement, h: &GroupElement) -> GroupElement {
        GroupElement::from_raw(&g.matrix * &h.matrix)
    }

    pub fn inv(&self, g: &GroupElement) -> Result<GroupElement> {
        let m = &g.matrix;
        let inv = match self.kind {
            GroupKind::SO3 => m.transpose(),
            GroupKind::SL2 => {
                let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
                if det == 0.0 || !det.is_finite() {
                    return Err(Error::NumericalOverflow("singular SL2 matrix".into()));
                }
                DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]]) / det
            }
            GroupKind::Heisenberg3 => {
                let (a, b, c) = (m[(0, 1)], m[(1, 2)], m[(0, 2)]);
                heisenberg_matrix(-a, -b, a * b - c)
            }
            GroupKind::Rn(n) => {
                let mut r = m.clone();
                for i in 0..n {
                    r[(i, n)] = -m[(i, n)];
                }
                r
            }
            GroupKind::AffPlus => {
                let (a, b) = (m[(0, 0)], m[(0, 1)]);
                if a == 0.0 {
                    return Err(Error::NumericalOverflow("singular affine matrix".into()));
                }
                DMatrix::from_row_slice(2, 2, &[1.0 / a, -b / a, 0.0, 1.0])
            }
            GroupKind::GLnPlus(_) => m
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NumericalOverflow("singular matrix".into()))?,
        };
        Ok(GroupElement::from_raw(inv))
    }

    /// `exp` of an algebra element realized in the ambient space.
    pub fn exp(&self, a: &AlgebraElement) -> Result<GroupElement> {
        self.exp_coords(a.coords())
    }

    pub fn exp_coords(&self, c: &DVector<f64>) -> Result<GroupElement> {
        if c.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                c.len()
            )));
        }
        let m = match self.kind {
            GroupKind::SO3 => rodrigues_exp(c),
            GroupKind::AffPlus => {
                let (x, y) = (c[0], c[1]);
                let ratio = if x.abs() < 1e-12 {
                    1.0 + x / 2.0
                } else {
                    x.exp_m1() / x
                };
                DMatrix::from_row_slice(2, 2, &[x.exp(), y * ratio, 0.0, 1.0])
            }
            _ => matrix_exp(&self.algebra.realize(c))?,
        };
        Ok(GroupElement::from_raw(m))
    }

    /// Log coordinates in the algebra basis.
    pub fn log_coords(&self, g: &GroupElement) -> Result<DVector<f64>> {
        let m = &g.matrix;
        match self.log_kind {
            LogKind::Rodrigues => {
                let (theta, v) = rotation_angle_axis(m);
                if theta > PI - SO3_LOG_MARGIN {
                    return Err(Error::LogDomainError(format!(
                        "rotation angle {theta:.6} too close to a half-turn"
                    )));
                }
                let s = theta.sin();
                let factor = if theta < 1e-6 {
                    1.0 + theta * theta / 6.0
                } else {
                    theta / s
                };
                Ok(v * factor)
            }
            LogKind::AffineClosed => {
                let (a, b) = (m[(0, 0)], m[(0, 1)]);
                if !(a > 0.0) {
                    return Err(Error::LogDomainError(
                        "affine scale must be positive".into(),
                    ));
                }
                let u = a - 1.0;
                let ratio = if u.abs() < 1e-8 {
                    1.0 - u / 2.0 + u * u / 3.0
                } else {
                    a.ln() / u
                };
                Ok(DVector::from_vec(vec![a.ln(), b * ratio]))
            }
            LogKind::Nilpotent => Ok(self.algebra.coords_of(&matrix_log(m, LogMode::Nilpotent)?)),
            LogKind::Principal => Ok(self.algebra.coords_of(&matrix_log(m, LogMode::Principal)?)),
        }
    }

    /// Log coordinates with square-root reduction on principal-log charts:
    /// `log g = 2^k log g^{1/2^k}`. Defined whenever the principal matrix
    /// logarithm is.
    pub fn log_coords_extended(&self, g: &GroupElement) -> Result<DVector<f64>> {
        if self.log_kind != LogKind::Principal {
            return self.log_coords(g);
        }
        let d = self.ambient_dim();
        let mut h = g.matrix.clone();
        let mut k = 0;
        while spectral_norm(&(&h - DMatrix::identity(d, d))) >= 0.5 {
            if k > 60 {
                return Err(Error::LogDomainError(
                    "square-root reduction did not converge".into(),
                ));
            }
            h = matrix_sqrt(&h)?;
            k += 1;
        }
        let z = self.algebra.coords_of(&matrix_log(&h, LogMode::Principal)?);
        Ok(z * 2f64.powi(k))
    }

    pub fn log(&self, g: &GroupElement) -> Result<AlgebraElement> {
        self.log_coords(g).map(AlgebraElement::new)
    }

    /// Bi-invariant distance on compact charts, Frobenius distance otherwise.
    /// On SO3 the rotation angle of `g^-1 h` is computed in closed form, so
    /// the value is defined on the whole group.
    pub fn distance(&self, g: &GroupElement, h: &GroupElement) -> Result<f64> {
        match self.metric_kind {
            MetricKind::BiInvariant => match self.kind {
                GroupKind::SO3 => Ok(rotation_angle_axis(&(g.matrix.transpose() * &h.matrix)).0),
                _ => {
                    let rel = self.mul(&self.inv(g)?, h);
                    Ok(self.log_coords(&rel)?.norm())
                }
            },
            MetricKind::ChartFrobenius => Ok((&g.matrix - &h.matrix).norm()),
        }
    }

    pub fn distance_to_identity(&self, g: &GroupElement) -> Result<f64> {
        self.distance(&self.identity(), g)
    }

    /// `exp` of a uniform sample in the algebra ball of radius `radius`.
    pub fn random_near_identity(&self, radius: f64, seed: u64) -> Result<GroupElement> {
        self.sample_near_identity(&mut rng::seeded(seed), radius)
    }

    pub fn sample_near_identity(&self, rng: &mut Rng64, radius: f64) -> Result<GroupElement> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("radius must be positive".into()));
        }
        let c = rng::in_ball(rng, self.dim(), radius);
        self.exp_coords(&c)
    }

    /// Quasi-uniform point set on SO3: a Halton sequence in bases 2, 3, 5
    /// pushed through Shoemake's uniform-quaternion map.
    pub fn quasi_uniform_grid(&self, size: usize) -> Result<Vec<GroupElement>> {
        if self.kind != GroupKind::SO3 {
            return Err(Error::WrongClass(format!("no grid for {}", self.name)));
        }
        Ok((1..=size)
            .map(|i| {
                let (u1, u2, u3) = (halton(i, 2), halton(i, 3), halton(i, 5));
                let (s1, s2) = ((1.0 - u1).sqrt(), u1.sqrt());
                let t2 = 2.0 * PI * u2;
                let t3 = 2.0 * PI * u3;
                let q = [s2 * t3.cos(), s1 * t2.sin(), s1 * t2.cos(), s2 * t3.sin()];
                GroupElement::from_raw(quaternion_matrix(q))
            })
            .collect())
    }
}

fn pattern_residual(m: &DMatrix<f64>, free: impl Fn(usize, usize) -> bool) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !free(i, j) {
                let target = if i == j { 1.0 } else { 0.0 };
                r = r.max((m[(i, j)] - target).abs());
            }
        }
    }
    r
}

fn reset_pattern(mut m: DMatrix<f64>, free: impl Fn(usize, usize) -> bool) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !free(i, j) {
                m[(i, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    m
}

fn polar(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    u * v_t
}

/// `I + aX + bY + cZ` with `X = E01`, `Y = E12`, `Z = E02`.
pub fn heisenberg_matrix(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, a, c, 0.0, 1.0, b, 0.0, 0.0, 1.0])
}

pub fn heisenberg_element(a: f64, b: f64, c: f64) -> GroupElement {
    GroupElement::from_raw(heisenberg_matrix(a, b, c))
}

/// Matrix coordinates `(a, b, c)` of a Heisenberg element.
pub fn heisenberg_coords(g: &GroupElement) -> [f64; 3] {
    let m = g.matrix();
    [m[(0, 1)], m[(1, 2)], m[(0, 2)]]
}

fn rodrigues_exp(c: &DVector<f64>) -> DMatrix<f64> {
    let theta = c.norm();
    let k = DMatrix::from_row_slice(
        3,
        3,
        &[0.0, -c[2], c[1], c[2], 0.0, -c[0], -c[1], c[0], 0.0],
    );
    let (a, b) = if theta < 1e-6 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    DMatrix::identity(3, 3) + &k * a + &k * &k * b
}

/// Rotation angle in `[0, pi]` and the vector `sin(angle) * axis`.
fn rotation_angle_axis(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let v = DVector::from_vec(vec![
        (m[(2, 1)] - m[(1, 2)]) / 2.0,
        (m[(0, 2)] - m[(2, 0)]) / 2.0,
        (m[(1, 0)] - m[(0, 1)]) / 2.0,
    ]);
    let cos = (m.trace() - 1.0) / 2.0;
    (v.norm().atan2(cos), v)
}

fn quaternion_matrix(q: [f64; 4]) -> DMatrix<f64> {
    let [w, x, y, z] = q;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    )
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}
