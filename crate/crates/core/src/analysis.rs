//! Controllability machinery: bracket saturation in the normalizer,
//! sampling probes of local controllability, invariant-subgroup
//! certificates for bilinear systems and theorem verdicts.

use std::collections::HashSet;
use std::sync::OnceLock;

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    subspace_series, AlgebraElement, DerivationSpec, LieAlgebraDescriptor, SeriesKind, Subspace,
};
use crate::error::{Error, Result};
use crate::fields::{AffineField, LinearField, RightInvariantField};
use crate::groups::{
    heisenberg_element, make_group, GroupChart, GroupElement, GroupKind, GroupParams,
};
use crate::rng::{self, Rng64};
use crate::systems::{AffineSystem, BilinearSystem, ControlLaw, Method};

/// Affine field as a pair (derivation, right-invariant element).
#[derive(Debug, Clone, PartialEq)]
pub struct SemidirectElement {
    pub d: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl SemidirectElement {
    pub fn new(d: DMatrix<f64>, y: DVector<f64>) -> Self {
        Self { d, y }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(DMatrix::zeros(n, n), DVector::zeros(n))
    }

    pub fn from_field(f: &AffineField) -> Self {
        Self::new(
            f.linear().derivation().matrix().clone(),
            f.invariant().element().coords().clone(),
        )
    }

    pub fn flatten(&self) -> DVector<f64> {
        let n = self.y.len();
        let mut v = DVector::zeros(n * n + n);
        v.rows_mut(0, n * n).copy_from_slice(self.d.as_slice());
        v.rows_mut(n * n, n).copy_from(&self.y);
        v
    }

    pub fn unflatten(n: usize, v: &DVector<f64>) -> Self {
        Self::new(
            DMatrix::from_column_slice(n, n, &v.as_slice()[..n * n]),
            DVector::from_column_slice(&v.as_slice()[n * n..]),
        )
    }

    pub fn to_field(&self, chart: &GroupChart) -> Result<AffineField> {
        Ok(AffineField::new(
            LinearField::from_matrix(chart, self.d.clone())?,
            RightInvariantField::new(AlgebraElement::new(self.y.clone())),
        ))
    }
}

/// Signs in `([D_p, D_q] * s_d, s_c (D_p Y_q - D_q Y_p) + s_y [Y_p, Y_q])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketSigns {
    pub derivation: f64,
    pub cross: f64,
    pub invariant: f64,
}

pub fn bracket_with_signs(
    alg: &LieAlgebraDescriptor,
    p: &SemidirectElement,
    q: &SemidirectElement,
    signs: BracketSigns,
) -> SemidirectElement {
    let d = (&p.d * &q.d - &q.d * &p.d) * signs.derivation;
    let y = (&p.d * &q.y - &q.d * &p.y) * signs.cross
        + alg.bracket_coords(&p.y, &q.y) * signs.invariant;
    SemidirectElement::new(d, y)
}

const FD_STEP: f64 = 1e-5;
const SIGN_TOLERANCE: f64 = 1e-4;

/// Lie bracket `[V, W](g) = DV(g) W(g) - DW(g) V(g)` of two affine fields by
/// central differences in the ambient matrix space.
pub fn fd_field_bracket(
    chart: &GroupChart,
    p: &AffineField,
    q: &AffineField,
    g: &GroupElement,
) -> Result<DMatrix<f64>> {
    let directional = |f: &AffineField, w: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let plus = GroupElement::from_raw(g.matrix() + w * FD_STEP);
        let minus = GroupElement::from_raw(g.matrix() - w * FD_STEP);
        Ok((f.eval(chart, &plus)? - f.eval(chart, &minus)?) / (2.0 * FD_STEP))
    };
    let vp = p.eval(chart, g)?;
    let vq = q.eval(chart, g)?;
    Ok(directional(p, &vq)? - directional(q, &vp)?)
}

fn calibration_cases() -> Result<
    Vec<(
        GroupChart,
        SemidirectElement,
        SemidirectElement,
        GroupElement,
    )>,
> {
    let h = make_group("Heisenberg3", &GroupParams::default())?;
    let s = make_group("SO3", &GroupParams::default())?;
    let ad = |c: &GroupChart, v: &[f64]| c.algebra().ad_coords(&DVector::from_column_slice(v));
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0]));
    let v = |x: &[f64]| DVector::from_column_slice(x);
    Ok(vec![
        (
            h.clone(),
            SemidirectElement::new(diag, v(&[0.3, -0.5, 0.2])),
            SemidirectElement::new(ad(&h, &[1.0, 0.5, 0.0]), v(&[1.0, 0.4, -0.7])),
            heisenberg_element(0.2, -0.3, 0.1),
        ),
        (
            h.clone(),
            SemidirectElement::new(DMatrix::zeros(3, 3), v(&[1.0, 0.0, 0.0])),
            SemidirectElement::new(DMatrix::zeros(3, 3), v(&[0.0, 1.0, 0.0])),
            heisenberg_element(-0.1, 0.25, 0.3),
        ),
        (
            s.clone(),
            SemidirectElement::new(ad(&s, &[0.4, -0.2, 0.9]), v(&[0.1, 0.7, -0.3])),
            SemidirectElement::new(ad(&s, &[-0.6, 0.3, 0.2]), v(&[0.5, -0.2, 0.4])),
            s.exp_coords(&v(&[0.15, -0.1, 0.2]))?,
        ),
    ])
}

/// Tries all eight sign assignments against the finite-difference bracket
/// on Heisenberg3 and SO3 and returns the unique one that matches, with its
/// worst error.
pub fn calibrate_bracket_signs() -> Result<(BracketSigns, f64)> {
    let cases = calibration_cases()?;
    let mut oracle = Vec::with_capacity(cases.len());
    for (chart, p, q, g) in &cases {
        oracle.push(fd_field_bracket(
            chart,
            &p.to_field(chart)?,
            &q.to_field(chart)?,
            g,
        )?);
    }
    let mut matches = Vec::new();
    for code in 0..8u32 {
        let sign = |bit: u32| if code & (1 << bit) == 0 { 1.0 } else { -1.0 };
        let signs = BracketSigns {
            derivation: sign(0),
            cross: sign(1),
            invariant: sign(2),
        };
        let mut worst: f64 = 0.0;
        for ((chart, p, q, g), fd) in cases.iter().zip(&oracle) {
            let r = bracket_with_signs(chart.algebra(), p, q, signs);
            let err = (r.to_field(chart)?.eval(chart, g)? - fd).amax();
            worst = worst.max(err);
        }
        if worst < SIGN_TOLERANCE {
            matches.push((signs, worst));
        }
    }
    match matches.as_slice() {
        [one] => Ok(*one),
        [] => Err(Error::ConventionError(
            "no sign assignment matches the vector-field bracket".into(),
        )),
        _ => Err(Error::ConventionError(
            "bracket calibration is ambiguous".into(),
        )),
    }
}

/// Calibrated signs, computed once per process.
pub fn bracket_signs() -> Result<BracketSigns> {
    static SIGNS: OnceLock<std::result::Result<BracketSigns, Error>> = OnceLock::new();
    SIGNS
        .get_or_init(|| calibrate_bracket_signs().map(|(s, _)| s))
        .clone()
}

pub fn semidirect_bracket(
    alg: &LieAlgebraDescriptor,
    p: &SemidirectElement,
    q: &SemidirectElement,
) -> Result<SemidirectElement> {
    let n = alg.dim();
    if p.y.len() != n || q.y.len() != n || p.d.shape() != (n, n) || q.d.shape() != (n, n) {
        return Err(Error::InvalidInput(
            "semidirect elements do not match the algebra".into(),
        ));
    }
    Ok(bracket_with_signs(alg, p, q, bracket_signs()?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LarcReport {
    pub generated_dim: usize,
    pub evaluation_rank_at_e: usize,
    pub full_rank: bool,
    pub generator_count: usize,
    pub bracket_depth_used: usize,
    pub bracket_signs: BracketSigns,
}

pub const DEFAULT_LARC_DEPTH: usize = 8;

/// Saturates the span of `{(D^j, Y^j)}` under the semidirect bracket. Linear
/// fields vanish at `e`, so the evaluation at `e` is the span of the
/// invariant parts.
pub fn larc_report(sys: &AffineSystem, max_depth: usize) -> Result<LarcReport> {
    if max_depth == 0 {
        return Err(Error::InvalidInput("max_depth must be at least 1".into()));
    }
    let chart = sys.chart();
    let alg = chart.algebra();
    let n = chart.dim();
    let big = n * n + n;
    let tol = chart.tolerances().rank;
    let signs = bracket_signs()?;
    let gens: Vec<DVector<f64>> = sys
        .fields()
        .iter()
        .map(|f| SemidirectElement::from_field(f).flatten())
        .collect();
    let mut span = Subspace::span(big, &gens, tol);
    let mut depth = 0;
    while depth < max_depth {
        let basis: Vec<SemidirectElement> = span
            .basis_vectors()
            .iter()
            .map(|v| SemidirectElement::unflatten(n, v))
            .collect();
        let mut candidates = span.basis_vectors();
        for i in 0..basis.len() {
            for j in i + 1..basis.len() {
                candidates.push(bracket_with_signs(alg, &basis[i], &basis[j], signs).flatten());
            }
        }
        let next = Subspace::span(big, &candidates, tol);
        if next.dim() == span.dim() {
            break;
        }
        span = next;
        depth += 1;
    }
    let ys: Vec<DVector<f64>> = span
        .basis_vectors()
        .iter()
        .map(|v| v.rows(n * n, n).into_owned())
        .collect();
    let rank = Subspace::span(n, &ys, tol).dim();
    Ok(LarcReport {
        generated_dim: span.dim(),
        evaluation_rank_at_e: rank,
        full_rank: rank == n,
        generator_count: gens.len(),
        bracket_depth_used: depth,
        bracket_signs: signs,
    })
}

/// Random piecewise-constant law with `1..=max_segments` segments, total
/// duration uniform in `(0, tau]` and values uniform in `[-value_box, value_box]^m`.
pub fn random_control_law(
    rng: &mut Rng64,
    m: usize,
    max_segments: usize,
    tau: f64,
    value_box: f64,
) -> (ControlLaw, f64) {
    let segments = 1 + rng::index_below(rng, max_segments.max(1));
    let total = tau * (1.0 - rng::uniform(rng, 0.0, 1.0));
    let weights: Vec<f64> = (0..segments)
        .map(|_| rng::uniform(rng, 0.05, 1.0))
        .collect();
    let sum: f64 = weights.iter().sum();
    let durations: Vec<f64> = weights.iter().map(|w| w / sum * total).collect();
    let values = (0..segments)
        .map(|_| {
            (0..m)
                .map(|_| rng::uniform(rng, -value_box, value_box))
                .collect()
        })
        .collect();
    let law = ControlLaw::new(durations, values).expect("sampled law is valid");
    let end = law.end();
    (law, end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
    pub value_box: f64,
    pub max_segments: usize,
    pub hull_eps: f64,
    pub random_directions: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            samples: 2000,
            seed: 0,
            value_box: 1.0,
            max_segments: 4,
            hull_eps: 1e-6,
            random_directions: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub sample_index: usize,
    pub t: f64,
    pub coords: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Clouds {
    pub forward: Vec<CloudPoint>,
    pub backward: Vec<CloudPoint>,
}

/// Forward endpoints `phi(T, e, omega)` and backward endpoints
/// `phi(-T, e, theta_T omega)` in log coordinates; endpoints outside the
/// log domain are dropped.
pub fn reachable_clouds(sys: &AffineSystem, cfg: &ProbeConfig) -> Result<Clouds> {
    let chart = sys.chart();
    let e = chart.identity();
    let draws: Vec<Result<(Option<CloudPoint>, Option<CloudPoint>)>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, i as u64);
            let (law, t) = random_control_law(
                &mut r,
                sys.input_dim(),
                cfg.max_segments,
                cfg.tau,
                cfg.value_box,
            );
            let fwd = sys.solution(&law, t, &e, Method::Concatenation)?;
            let bwd = sys.solution(&law.shift(t), -t, &e, Method::Concatenation)?;
            let to_point = |g: &GroupElement| match chart.log_coords(g) {
                Ok(c) => Ok(Some(CloudPoint {
                    sample_index: i,
                    t,
                    coords: c,
                })),
                Err(Error::LogDomainError(_)) => Ok(None),
                Err(other) => Err(other),
            };
            Ok((to_point(&fwd)?, to_point(&bwd)?))
        })
        .collect();
    let mut clouds = Clouds {
        forward: Vec::new(),
        backward: Vec::new(),
    };
    for d in draws {
        let (f, b) = d?;
        clouds.forward.extend(f);
        clouds.backward.extend(b);
    }
    Ok(clouds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HullTest {
    pub landed: usize,
    pub rank: usize,
    /// Optimal common lower bound on the convex weights.
    pub weight_margin: f64,
    pub interior: bool,
    /// Smallest support value over the probe directions.
    pub support_margin: f64,
}

/// Origin strictly inside the convex hull: maximize `mu` subject to
/// `sum (mu + s_i) p_i = 0`, `sum (mu + s_i) = 1`, `mu, s_i >= 0`, and
/// require `mu >= hull_eps` together with full rank of the cloud.
pub fn hull_test(
    points: &[DVector<f64>],
    n: usize,
    cfg: &ProbeConfig,
    tol_rank: f64,
) -> Result<HullTest> {
    let count = points.len();
    if count < n + 1 {
        return Err(Error::InsufficientSamples {
            got: count,
            need: n + 1,
        });
    }
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let mu = pb.add_var(1.0, (0.0, f64::INFINITY));
    let s: Vec<_> = (0..count)
        .map(|_| pb.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    for k in 0..n {
        let mut expr = LinearExpr::empty();
        expr.add(mu, points.iter().map(|p| p[k]).sum());
        for (i, p) in points.iter().enumerate() {
            if p[k] != 0.0 {
                expr.add(s[i], p[k]);
            }
        }
        pb.add_constraint(expr, ComparisonOp::Eq, 0.0);
    }
    let mut total = LinearExpr::empty();
    total.add(mu, count as f64);
    for v in &s {
        total.add(*v, 1.0);
    }
    pb.add_constraint(total, ComparisonOp::Eq, 1.0);
    let weight_margin = match pb.solve() {
        Ok(sol) => sol[mu],
        Err(minilp::Error::Infeasible) => 0.0,
        Err(e) => return Err(Error::NumericalOverflow(format!("hull LP failed: {e}"))),
    };

    let mat = DMatrix::from_columns(points);
    let sv = mat.singular_values();
    let top = sv.max();
    let rank = sv.iter().filter(|v| **v > tol_rank * top.max(1.0)).count();

    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(2 * n + cfg.random_directions);
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut d = DVector::zeros(n);
            d[k] = sign;
            dirs.push(d);
        }
    }
    let mut r = rng::seeded(cfg.seed ^ 0xD1CE_D1CE);
    dirs.extend((0..cfg.random_directions).map(|_| rng::unit_vector(&mut r, n)));
    let support_margin = dirs
        .iter()
        .map(|u| {
            points
                .iter()
                .map(|p| u.dot(p))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min);

    Ok(HullTest {
        landed: count,
        rank,
        weight_margin,
        interior: weight_margin >= cfg.hull_eps && rank == n,
        support_margin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub tau: f64,
    pub samples: usize,
    pub forward_interior: bool,
    pub backward_interior: bool,
    pub locally_controllable: bool,
    /// Radius estimate of a ball around the origin inside both hulls
    /// (zero unless both are interior).
    pub margin: f64,
    pub forward: HullTest,
    pub backward: HullTest,
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub report: ProbeReport,
    pub clouds: Clouds,
}

pub fn local_controllability_probe(sys: &AffineSystem, cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    if !(cfg.tau > 0.0) || cfg.samples < 100 {
        return Err(Error::InvalidInput(
            "probe needs tau > 0 and at least 100 samples".into(),
        ));
    }
    let n = sys.chart().dim();
    let clouds = reachable_clouds(sys, cfg)?;
    let tol = sys.chart().tolerances().rank;
    let pts = |c: &[CloudPoint]| c.iter().map(|p| p.coords.clone()).collect::<Vec<_>>();
    let forward = hull_test(&pts(&clouds.forward), n, cfg, tol)?;
    let backward = hull_test(&pts(&clouds.backward), n, cfg, tol)?;
    let both = forward.interior && backward.interior;
    let margin = if both {
        forward.support_margin.min(backward.support_margin).max(0.0)
    } else {
        0.0
    };
    Ok(ProbeOutcome {
        report: ProbeReport {
            tau: cfg.tau,
            samples: cfg.samples,
            forward_interior: forward.interior,
            backward_interior: backward.interior,
            locally_controllable: both,
            margin,
            forward,
            backward,
        },
        clouds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstructionCase {
    AbelianCompactTrivialFlows,
    SolvableDerivedInvariant,
    CompactSemisimpleSphereInvariant,
    SemisimpleConjugationInvariant,
    MixedRadicalInvariant,
    EuclideanNoObstruction,
}

impl ObstructionCase {
    pub fn tolerance(self) -> f64 {
        match self {
            ObstructionCase::AbelianCompactTrivialFlows => 1e-10,
            ObstructionCase::SolvableDerivedInvariant => 1e-9,
            ObstructionCase::CompactSemisimpleSphereInvariant => 1e-8,
            ObstructionCase::SemisimpleConjugationInvariant => 1e-10,
            ObstructionCase::MixedRadicalInvariant => 1e-9,
            ObstructionCase::EuclideanNoObstruction => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObstructionCase::AbelianCompactTrivialFlows => "abelian_compact_trivial_flows",
            ObstructionCase::SolvableDerivedInvariant => "solvable_derived_invariant",
            ObstructionCase::CompactSemisimpleSphereInvariant => {
                "compact_semisimple_sphere_invariant"
            }
            ObstructionCase::SemisimpleConjugationInvariant => "semisimple_conjugation_invariant",
            ObstructionCase::MixedRadicalInvariant => "mixed_radical_invariant",
            ObstructionCase::EuclideanNoObstruction => "euclidean_no_obstruction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstructionReport {
    pub case_tag: ObstructionCase,
    pub invariant_set_description: String,
    pub numeric_residual: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub certificate_issued: bool,
    pub verdict: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateConfig {
    pub samples: usize,
    pub seed: u64,
    /// Largest sampled control duration.
    pub horizon: f64,
    pub value_box: f64,
    pub max_segments: usize,
    /// Multiplier on the per-case tolerances.
    pub tol_scale: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 0,
            horizon: 2.0,
            value_box: 1.0,
            max_segments: 4,
            tol_scale: 1.0,
        }
    }
}

const NOT_CONTROLLABLE: &str = "not controllable on G\\{e}";

/// Worst residual of `check(phi^B_{t, omega}, rng)` over sampled laws.
fn sampled_max<F>(sys: &BilinearSystem, cfg: &CertificateConfig, check: F) -> Result<f64>
where
    F: Fn(&mut Rng64, &ControlLaw, f64) -> Result<f64> + Sync,
{
    let m = sys.input_dim();
    let residuals: Vec<Result<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, i as u64);
            let (law, t) =
                random_control_law(&mut r, m, cfg.max_segments, cfg.horizon, cfg.value_box);
            check(&mut r, &law, t)
        })
        .collect();
    residuals
        .into_iter()
        .try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

fn subgroup_log_residual(
    sys: &BilinearSystem,
    cfg: &CertificateConfig,
    space: &Subspace,
    radius: f64,
) -> Result<f64> {
    let chart = sys.chart();
    sampled_max(sys, cfg, |r, law, t| {
        let c = rng::in_ball(r, space.dim(), radius);
        let z = space.basis() * c;
        let g = chart.exp_coords(&z)?;
        let image = sys.solution(law, t, &g)?;
        let coords = chart.log_coords_extended(&image)?;
        Ok(space.residual(&coords))
    })
}

fn finish(
    case: ObstructionCase,
    description: String,
    residual: f64,
    cfg: &CertificateConfig,
    verdict: String,
) -> Result<ObstructionReport> {
    let tolerance = case.tolerance() * cfg.tol_scale;
    if case != ObstructionCase::EuclideanNoObstruction && !(residual < tolerance) {
        return Err(Error::CertificateFailure {
            case: case.name().to_string(),
            residual,
            tolerance,
        });
    }
    Ok(ObstructionReport {
        case_tag: case,
        invariant_set_description: description,
        numeric_residual: residual,
        tolerance,
        samples: cfg.samples,
        certificate_issued: case != ObstructionCase::EuclideanNoObstruction,
        verdict,
    })
}

/// Invariant-subgroup certificate: selects the case from the chart class
/// and verifies the invariance numerically on sampled solutions.
pub fn obstruction_report(
    sys: &BilinearSystem,
    cfg: &CertificateConfig,
) -> Result<ObstructionReport> {
    let chart = sys.chart();
    let flags = *chart.flags();
    let subgroups = chart.subgroups();
    if flags.abelian && flags.simply_connected {
        return finish(
            ObstructionCase::EuclideanNoObstruction,
            "none: the group is a vector space".into(),
            0.0,
            cfg,
            "no invariant-subgroup obstruction (classical bilinear system); controllability on G\\{e} is left to the probe".into(),
        );
    }
    if flags.abelian && flags.compact {
        let full = Subspace::full(chart.dim());
        return torus_certificate(sys, &full, cfg);
    }
    if flags.solvable {
        let derived = &subgroups.derived_algebra;
        let residual = subgroup_log_residual(sys, cfg, derived, 1.0)?;
        return finish(
            ObstructionCase::SolvableDerivedInvariant,
            format!(
                "derived subgroup exp of a {}-dimensional subalgebra",
                derived.dim()
            ),
            residual,
            cfg,
            format!("{NOT_CONTROLLABLE}: the derived subgroup is a proper invariant subgroup"),
        );
    }
    if flags.semisimple && flags.compact {
        let residual = sampled_max(sys, cfg, |r, law, t| {
            let g = chart.sample_near_identity(r, 2.5)?;
            let before = chart.distance_to_identity(&g)?;
            let after = chart.distance_to_identity(&sys.solution(law, t, &g)?)?;
            Ok((after - before).abs())
        })?;
        return finish(
            ObstructionCase::CompactSemisimpleSphereInvariant,
            "spheres centered at e for the bi-invariant metric".into(),
            residual,
            cfg,
            format!("{NOT_CONTROLLABLE}: every sphere centered at e is invariant"),
        );
    }
    if flags.semisimple {
        let residual = sampled_max(sys, cfg, |r, law, t| {
            let g = chart.sample_near_identity(r, 1.0)?;
            let image = sys.solution(law, t, &g)?;
            Ok((image.matrix().trace() - g.matrix().trace()).abs())
        })?;
        return finish(
            ObstructionCase::SemisimpleConjugationInvariant,
            "level sets of the trace".into(),
            residual,
            cfg,
            format!("{NOT_CONTROLLABLE}: solutions are conjugations and preserve the trace"),
        );
    }
    let Some(radical) = subgroups.radical_algebra.as_ref() else {
        return Err(Error::WrongClass(format!(
            "no radical data for {}",
            chart.name()
        )));
    };
    let residual = subgroup_log_residual(sys, cfg, radical, 1.0)?;
    finish(
        ObstructionCase::MixedRadicalInvariant,
        format!(
            "solvable radical, exp of a {}-dimensional ideal",
            radical.dim()
        ),
        residual,
        cfg,
        format!("{NOT_CONTROLLABLE}: the solvable radical is a proper invariant subgroup"),
    )
}

/// Trivial-flow certificate on a torus `exp(t)` inside the chart, for an
/// abelian subalgebra `t` that every derivation preserves. Reports
/// `max |phi^B(g) - g|` over sampled `g` in the torus.
pub fn torus_certificate(
    sys: &BilinearSystem,
    torus: &Subspace,
    cfg: &CertificateConfig,
) -> Result<ObstructionReport> {
    let chart = sys.chart();
    let alg = chart.algebra();
    if crate::algebra::closure_residual(alg, torus) > chart.tolerances().alg
        || torus
            .basis_vectors()
            .iter()
            .flat_map(|u| {
                torus
                    .basis_vectors()
                    .into_iter()
                    .map(move |v| (u.clone(), v))
            })
            .any(|(u, v)| alg.bracket_coords(&u, &v).amax() > chart.tolerances().alg)
    {
        return Err(Error::InvalidInput(
            "torus subalgebra must be abelian".into(),
        ));
    }
    for (j, f) in sys.fields().iter().enumerate() {
        let r = torus.image_residual(f.derivation().matrix(), torus);
        if r > chart.tolerances().alg {
            return Err(Error::InvalidInput(format!(
                "derivation {j} does not preserve the torus (residual {r:.3e})"
            )));
        }
    }
    let residual = sampled_max(sys, cfg, |r, law, t| {
        let c = rng::in_ball(r, torus.dim(), std::f64::consts::PI);
        let g = chart.exp_coords(&(torus.basis() * c))?;
        Ok(sys.solution(law, t, &g)?.max_abs_diff(&g))
    })?;
    finish(
        ObstructionCase::AbelianCompactTrivialFlows,
        format!("{}-dimensional torus, fixed pointwise", torus.dim()),
        residual,
        cfg,
        format!("{NOT_CONTROLLABLE}: solutions restrict to the identity on the torus"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremTag {
    CompactThm,
    SolvableThm,
    NilpotentCor,
    NoneApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub name: String,
    pub pass: bool,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllabilityVerdict {
    pub theorem_tag: TheoremTag,
    pub hypotheses_checked: Vec<Hypothesis>,
    /// `D^j(n_i) ⊆ n_{i+1}` along the lower central series of the nilradical.
    pub filtration_checks: Vec<Hypothesis>,
    pub probe: Option<ProbeReport>,
    pub controllable: bool,
    pub conclusion: String,
}

fn inner_hypothesis(j: usize, d: &DerivationSpec, chart: &GroupChart) -> Hypothesis {
    let tol = chart.tolerances().inner * d.matrix().norm().max(1.0);
    Hypothesis {
        name: format!("inner[{j}]"),
        pass: d.is_inner(),
        residual: d.witness_residual(),
        tolerance: tol,
    }
}

fn nilpotent_hypothesis(j: usize, d: &DerivationSpec, chart: &GroupChart) -> Hypothesis {
    let n = d.dim();
    let power = (0..n).fold(DMatrix::identity(n, n), |acc, _| acc * d.matrix());
    Hypothesis {
        name: format!("nilpotent[{j}]"),
        pass: d.nilpotency_index().is_some(),
        residual: power.amax(),
        tolerance: chart.tolerances().alg * d.matrix().norm().max(1.0).powi(n as i32),
    }
}

fn probe_hypothesis(p: &ProbeReport, cfg: &ProbeConfig) -> Hypothesis {
    Hypothesis {
        name: "locally_controllable_at_e".into(),
        pass: p.locally_controllable,
        residual: p.forward.weight_margin.min(p.backward.weight_margin),
        tolerance: cfg.hull_eps,
    }
}

fn conclude(
    tag: TheoremTag,
    hypotheses: Vec<Hypothesis>,
    filtration: Vec<Hypothesis>,
    probe: Option<ProbeReport>,
) -> ControllabilityVerdict {
    let structural_ok = hypotheses
        .iter()
        .filter(|h| h.name != "locally_controllable_at_e")
        .all(|h| h.pass);
    let probe_ok = probe.as_ref().is_some_and(|p| p.locally_controllable);
    let (theorem_tag, controllable, conclusion) = if !structural_ok {
        let failed: Vec<&str> = hypotheses
            .iter()
            .filter(|h| !h.pass)
            .map(|h| h.name.as_str())
            .collect();
        (
            TheoremTag::NoneApplicable,
            false,
            format!("theorem not applicable: {} failed", failed.join(", ")),
        )
    } else if probe_ok {
        (tag, true, "controllable".to_string())
    } else {
        (
            tag,
            false,
            "not certified: the probe did not find e interior to the reachable and controllable sets".to_string(),
        )
    };
    ControllabilityVerdict {
        theorem_tag,
        hypotheses_checked: hypotheses,
        filtration_checks: filtration,
        probe,
        controllable,
        conclusion,
    }
}

/// Verdict for solvable charts: inner and nilpotent derivations plus local
/// controllability at `e` give controllability. Nilpotent charts are tagged
/// with the corollary. The probe is skipped when a structural hypothesis
/// fails.
pub fn solvable_verdict(
    sys: &AffineSystem,
    probe_cfg: &ProbeConfig,
) -> Result<ControllabilityVerdict> {
    solvable_verdict_with(sys, probe_cfg, None)
}

fn solvable_verdict_with(
    sys: &AffineSystem,
    probe_cfg: &ProbeConfig,
    cached: Option<&ProbeReport>,
) -> Result<ControllabilityVerdict> {
    let chart = sys.chart();
    if !chart.flags().solvable {
        return Err(Error::WrongClass(format!(
            "{} is not solvable",
            chart.name()
        )));
    }
    let mut hypotheses = Vec::new();
    for (j, f) in sys.fields().iter().enumerate() {
        hypotheses.push(inner_hypothesis(j, f.linear().derivation(), chart));
    }
    for (j, f) in sys.fields().iter().enumerate() {
        hypotheses.push(nilpotent_hypothesis(j, f.linear().derivation(), chart));
    }

    let alg = chart.algebra();
    let tol = chart.tolerances();
    let series = subspace_series(
        alg,
        &chart.subgroups().nilradical_algebra,
        SeriesKind::LowerCentral,
        tol.alg,
        tol.rank,
    )?;
    let mut filtration = Vec::new();
    for (j, f) in sys.fields().iter().enumerate() {
        let d = f.linear().derivation().matrix();
        for i in 0..series.len() {
            let next = series
                .get(i + 1)
                .cloned()
                .unwrap_or_else(|| Subspace::zero(chart.dim()));
            if series[i].dim() == 0 {
                continue;
            }
            let r = series[i].image_residual(d, &next);
            let t = tol.alg * d.norm().max(1.0);
            filtration.push(Hypothesis {
                name: format!("D[{j}](n_{}) in n_{}", i + 1, i + 2),
                pass: r < t,
                residual: r,
                tolerance: t,
            });
        }
    }

    let structural_ok = hypotheses.iter().all(|h| h.pass);
    let probe = if structural_ok {
        let p = match cached {
            Some(p) => p.clone(),
            None => local_controllability_probe(sys, probe_cfg)?.report,
        };
        hypotheses.push(probe_hypothesis(&p, probe_cfg));
        Some(p)
    } else {
        None
    };
    let tag = if chart.flags().nilpotent {
        TheoremTag::NilpotentCor
    } else {
        TheoremTag::SolvableThm
    };
    Ok(conclude(tag, hypotheses, filtration, probe))
}

/// Verdict for compact charts: local controllability at `e` suffices when
/// the chart carries a bi-invariant metric.
pub fn compact_verdict(
    sys: &AffineSystem,
    probe_cfg: &ProbeConfig,
) -> Result<ControllabilityVerdict> {
    compact_verdict_with(sys, probe_cfg, None)
}

fn compact_verdict_with(
    sys: &AffineSystem,
    probe_cfg: &ProbeConfig,
    cached: Option<&ProbeReport>,
) -> Result<ControllabilityVerdict> {
    let chart = sys.chart();
    if !chart.flags().compact {
        return Err(Error::WrongClass(format!(
            "{} is not compact",
            chart.name()
        )));
    }
    let bi = chart.metric_kind() == crate::groups::MetricKind::BiInvariant;
    let mut hypotheses = vec![Hypothesis {
        name: "bi_invariant_metric".into(),
        pass: bi,
        residual: 0.0,
        tolerance: 0.0,
    }];
    let p = match cached {
        Some(p) => p.clone(),
        None => local_controllability_probe(sys, probe_cfg)?.report,
    };
    hypotheses.push(probe_hypothesis(&p, probe_cfg));
    Ok(conclude(
        TheoremTag::CompactThm,
        hypotheses,
        Vec::new(),
        Some(p),
    ))
}

/// Verdict of the theorem matching the chart class (solvable first, then
/// compact), reusing `probe` when it was run with `probe_cfg`. `None` when
/// no theorem covers the chart.
pub fn applicable_verdict(
    sys: &AffineSystem,
    probe_cfg: &ProbeConfig,
    probe: Option<&ProbeReport>,
) -> Result<Option<ControllabilityVerdict>> {
    let flags = sys.chart().flags();
    if flags.solvable {
        solvable_verdict_with(sys, probe_cfg, probe).map(Some)
    } else if flags.compact {
        compact_verdict_with(sys, probe_cfg, probe).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationConfig {
    pub grid_size: usize,
    pub tau: f64,
    /// Fresh reachable increments drawn at each depth.
    pub samples: usize,
    pub depth_max: usize,
    pub delta: f64,
    pub seed: u64,
    pub value_box: f64,
    pub max_segments: usize,
    /// Products formed from each newly reached point at the next depth.
    pub branching: usize,
}

impl Default for SaturationConfig {
    fn default() -> Self {
        Self {
            grid_size: 1000,
            tau: 1.0,
            samples: 500,
            depth_max: 8,
            delta: 0.25,
            seed: 0,
            value_box: 1.0,
            max_segments: 4,
            branching: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub grid_size: usize,
    pub delta: f64,
    pub samples_per_depth: usize,
    pub branching: usize,
    /// Coverage of the cloud `{e}` before any increment.
    pub initial_coverage: f64,
    /// Coverage after depth `1..=depth_max`.
    pub coverage: Vec<f64>,
    pub cloud_sizes: Vec<usize>,
    pub monotone: bool,
    pub first_depth_reaching_099: Option<usize>,
}

struct Increment {
    at_e: GroupElement,
    pieces: Vec<(f64, LinearField)>,
}

impl Increment {
    /// `phi^A(T, g, omega) = phi^A(T, e, omega) phi^B(T, g, omega)`.
    fn apply(&self, chart: &GroupChart, g: &GroupElement) -> Result<GroupElement> {
        let mut x = g.clone();
        for (dur, f) in &self.pieces {
            x = f.flow(chart, *dur, &x)?;
        }
        Ok(chart.mul(&self.at_e, &x))
    }
}

fn draw_increments(
    sys: &AffineSystem,
    cfg: &SaturationConfig,
    depth: usize,
) -> Result<Vec<Increment>> {
    let chart = sys.chart();
    let bil = sys.induced_bilinear();
    let trivial = bil
        .fields()
        .iter()
        .all(|f| f.derivation().matrix().amax() == 0.0);
    let base = (depth as u64) << 32;
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, base + i as u64);
            let (law, t) = random_control_law(
                &mut r,
                sys.input_dim(),
                cfg.max_segments,
                cfg.tau,
                cfg.value_box,
            );
            let at_e = sys.solution(&law, t, &chart.identity(), Method::Concatenation)?;
            let pieces = if trivial {
                Vec::new()
            } else {
                law.pieces(t)
                    .into_iter()
                    .map(|(d, u)| Ok((d, bil.mixed_field(u)?)))
                    .collect::<Result<Vec<_>>>()?
            };
            Ok(Increment { at_e, pieces })
        })
        .collect()
}

fn so3_close(a: &[f64; 9], b: &[f64; 9], threshold: f64) -> bool {
    // tr(a^T b) = 1 + 2 cos(angle)
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() > threshold
}

fn as_array(g: &GroupElement) -> [f64; 9] {
    let mut out = [0.0; 9];
    out.copy_from_slice(g.matrix().as_slice());
    out
}

/// Grows the products `W^n` of sampled reachable increments from `e`,
/// breadth first. Points are kept one per cell of side `delta / 2` in log
/// coordinates; every point first reached at depth `n - 1` is multiplied by
/// `branching` of the increments drawn for depth `n`. Coverage is the
/// fraction of a quasi-uniform grid within `delta` of the cloud.
pub fn compact_saturation_experiment(
    sys: &AffineSystem,
    cfg: &SaturationConfig,
) -> Result<CoverageReport> {
    let chart = sys.chart();
    if !chart.flags().compact {
        return Err(Error::WrongClass(format!(
            "{} is not compact",
            chart.name()
        )));
    }
    if cfg.samples == 0 || cfg.branching == 0 || !(cfg.tau > 0.0) || !(cfg.delta > 0.0) {
        return Err(Error::InvalidInput(
            "saturation needs samples, branching, tau and delta positive".into(),
        ));
    }
    let grid = chart.quasi_uniform_grid(cfg.grid_size)?;
    let grid_arr: Vec<[f64; 9]> = grid.iter().map(as_array).collect();
    let threshold = 1.0 + 2.0 * cfg.delta.cos();
    let is_so3 = chart.kind() == GroupKind::SO3;
    let mut covered = vec![false; grid.len()];
    let mark = |covered: &mut Vec<bool>, pts: &[GroupElement]| -> Result<()> {
        let arrs: Vec<[f64; 9]> = if is_so3 {
            pts.iter().map(as_array).collect()
        } else {
            Vec::new()
        };
        let updates: Vec<Result<bool>> = covered
            .par_iter()
            .enumerate()
            .map(|(j, done)| {
                if *done {
                    return Ok(true);
                }
                if is_so3 {
                    return Ok(arrs.iter().any(|a| so3_close(a, &grid_arr[j], threshold)));
                }
                for p in pts {
                    if chart.distance(p, &grid[j])? < cfg.delta {
                        return Ok(true);
                    }
                }
                Ok(false)
            })
            .collect();
        for (c, u) in covered.iter_mut().zip(updates) {
            *c = u?;
        }
        Ok(())
    };
    let fraction = |covered: &[bool]| {
        covered.iter().filter(|c| **c).count() as f64 / covered.len().max(1) as f64
    };

    let cell = 0.5 * cfg.delta;
    let mut cells: HashSet<Vec<i64>> = HashSet::new();
    let admit = |cells: &mut HashSet<Vec<i64>>, g: &GroupElement| -> Result<bool> {
        match chart.log_coords(g) {
            Ok(c) => Ok(cells.insert(c.iter().map(|v| (v / cell).floor() as i64).collect())),
            Err(Error::LogDomainError(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };

    let e = chart.identity();
    admit(&mut cells, &e)?;
    let mut cloud_size = 1;
    mark(&mut covered, std::slice::from_ref(&e))?;
    let initial_coverage = fraction(&covered);
    let mut frontier = vec![e];
    let mut coverage = Vec::with_capacity(cfg.depth_max);
    let mut sizes = Vec::with_capacity(cfg.depth_max);
    for depth in 1..=cfg.depth_max {
        let increments = draw_increments(sys, cfg, depth)?;
        let candidates: Vec<Vec<GroupElement>> = frontier
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut pick = rng::stream(
                    cfg.seed ^ 0x5A5A_5A5A_5A5A_5A5A,
                    ((depth as u64) << 40) + i as u64,
                );
                let count = if depth == 1 {
                    cfg.samples
                } else {
                    cfg.branching
                };
                (0..count)
                    .map(|k| {
                        let inc = if depth == 1 {
                            &increments[k]
                        } else {
                            &increments[rng::index_below(&mut pick, cfg.samples)]
                        };
                        inc.apply(chart, p)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut fresh = Vec::new();
        for g in candidates.into_iter().flatten() {
            if admit(&mut cells, &g)? {
                fresh.push(g);
            }
        }
        mark(&mut covered, &fresh)?;
        cloud_size += fresh.len();
        frontier = fresh;
        coverage.push(fraction(&covered));
        sizes.push(cloud_size);
    }
    let monotone = coverage.windows(2).all(|w| w[1] >= w[0])
        && coverage.first().is_none_or(|c| *c >= initial_coverage);
    Ok(CoverageReport {
        grid_size: grid.len(),
        delta: cfg.delta,
        samples_per_depth: cfg.samples,
        branching: cfg.branching,
        initial_coverage,
        first_depth_reaching_099: coverage.iter().position(|c| *c >= 0.99).map(|i| i + 1),
        coverage,
        cloud_sizes: sizes,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::make_group;

    fn affine(chart: &GroupChart, parts: &[(Option<&[f64]>, &[f64])]) -> AffineSystem {
        let fields = parts
            .iter()
            .map(|(w, y)| {
                let lin = match w {
                    Some(w) => LinearField::inner(chart, &AlgebraElement::from_slice(w)).unwrap(),
                    None => LinearField::zero(chart),
                };
                AffineField::new(lin, RightInvariantField::new(AlgebraElement::from_slice(y)))
            })
            .collect();
        AffineSystem::new(chart.clone(), fields).unwrap()
    }

    #[test]
    fn calibrated_signs_are_all_plus() {
        let (signs, err) = calibrate_bracket_signs().unwrap();
        assert_eq!(
            signs,
            BracketSigns {
                derivation: 1.0,
                cross: 1.0,
                invariant: 1.0
            }
        );
        assert!(err < 1e-6);
    }

    #[test]
    fn bracket_examples() {
        let h = make_group("Heisenberg3", &GroupParams::default()).unwrap();
        let alg = h.algebra();
        let x =
            SemidirectElement::new(DMatrix::zeros(3, 3), DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let y =
            SemidirectElement::new(DMatrix::zeros(3, 3), DVector::from_vec(vec![0.0, 1.0, 0.0]));
        let z = semidirect_bracket(alg, &x, &y).unwrap();
        assert_eq!(z.d, DMatrix::zeros(3, 3));
        assert_eq!(z.y, DVector::from_vec(vec![0.0, 0.0, 1.0]));
        let p = SemidirectElement::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0])),
            y.y.clone(),
        );
        let self_bracket = semidirect_bracket(alg, &p, &p).unwrap();
        assert_eq!(self_bracket.flatten().amax(), 0.0);
    }

    #[test]
    fn larc_examples() {
        let h = make_group("Heisenberg3", &GroupParams::default()).unwrap();
        let sys = affine(
            &h,
            &[
                (None, &[0.0, 0.0, 0.0]),
                (None, &[1.0, 0.0, 0.0]),
                (None, &[0.0, 1.0, 0.0]),
            ],
        );
        let rep = larc_report(&sys, DEFAULT_LARC_DEPTH).unwrap();
        assert_eq!(rep.evaluation_rank_at_e, 3);
        assert!(rep.full_rank);
        assert_eq!(rep.bracket_depth_used, 1);

        let drift_only = affine(&h, &[(None, &[0.0, 0.0, 0.0])]);
        assert_eq!(larc_report(&drift_only, 3).unwrap().evaluation_rank_at_e, 0);

        let r3 = make_group("Rn", &GroupParams::with_n(3)).unwrap();
        let sys = affine(
            &r3,
            &[
                (None, &[0.0; 3]),
                (None, &[1.0, 0.0, 0.0]),
                (None, &[1.0, 1.0, 0.0]),
            ],
        );
        assert_eq!(larc_report(&sys, 4).unwrap().evaluation_rank_at_e, 2);
        // recombined controls span the same space
        let sys2 = affine(
            &r3,
            &[
                (None, &[0.0; 3]),
                (None, &[2.0, 1.0, 0.0]),
                (None, &[0.0, -1.0, 0.0]),
            ],
        );
        assert_eq!(larc_report(&sys2, 4).unwrap().evaluation_rank_at_e, 2);
    }

    #[test]
    fn probe_examples() {
        let h = make_group("Heisenberg3", &GroupParams::default()).unwrap();
        let sys = affine(
            &h,
            &[
                (None, &[0.0; 3]),
                (None, &[1.0, 0.0, 0.0]),
                (None, &[0.0, 1.0, 0.0]),
            ],
        );
        let cfg = ProbeConfig {
            samples: 400,
            seed: 3,
            ..ProbeConfig::default()
        };
        let out = local_controllability_probe(&sys, &cfg).unwrap();
        assert!(out.report.locally_controllable);
        assert!(out.report.margin > 0.0);
        let again = local_controllability_probe(&sys, &cfg).unwrap();
        assert_eq!(out.report, again.report);

        let r2 = make_group("Rn", &GroupParams::with_n(2)).unwrap();
        let line = affine(&r2, &[(None, &[0.0; 2]), (None, &[1.0, 0.0])]);
        let out = local_controllability_probe(&line, &cfg).unwrap();
        assert!(!out.report.forward_interior && !out.report.locally_controllable);
        assert_eq!(out.report.forward.rank, 1);
    }

    #[test]
    fn hull_test_on_simplex() {
        let pts = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-1.0, 1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        ];
        let h = hull_test(&pts, 2, &ProbeConfig::default(), 1e-8).unwrap();
        assert!(h.interior);
        assert!((h.weight_margin - 0.25).abs() < 1e-9);
        let shifted: Vec<DVector<f64>> = pts
            .iter()
            .map(|p| p + DVector::from_vec(vec![2.0, 0.0]))
            .collect();
        assert!(
            !hull_test(&shifted, 2, &ProbeConfig::default(), 1e-8)
                .unwrap()
                .interior
        );
        assert!(matches!(
            hull_test(&pts[..2], 2, &ProbeConfig::default(), 1e-8),
            Err(Error::InsufficientSamples { got: 2, need: 3 })
        ));
    }

    #[test]
    fn obstruction_cases() {
        let cfg = CertificateConfig {
            samples: 50,
            ..CertificateConfig::default()
        };
        let h = make_group("Heisenberg3", &GroupParams::default()).unwrap();
        let diag = LinearField::from_matrix(
            &h,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 1.0])),
        )
        .unwrap();
        let inner = LinearField::inner(&h, &AlgebraElement::from_slice(&[1.0, -0.5, 0.3])).unwrap();
        let b = BilinearSystem::new(h.clone(), vec![diag, inner]).unwrap();
        let rep = obstruction_report(&b, &cfg).unwrap();
        assert_eq!(rep.case_tag, ObstructionCase::SolvableDerivedInvariant);
        assert!(rep.numeric_residual < 1e-9);

        let s = make_group("SO3", &GroupParams::default()).unwrap();
        let b = BilinearSystem::new(
            s.clone(),
            vec![
                LinearField::inner(&s, &AlgebraElement::from_slice(&[0.3, 0.0, 1.0])).unwrap(),
                LinearField::inner(&s, &AlgebraElement::from_slice(&[0.0, 1.0, 0.0])).unwrap(),
            ],
        )
        .unwrap();
        let rep = obstruction_report(&b, &cfg).unwrap();
        assert_eq!(
            rep.case_tag,
            ObstructionCase::CompactSemisimpleSphereInvariant
        );

        let sl = make_group("SL2", &GroupParams::default()).unwrap();
        let b = BilinearSystem::new(
            sl.clone(),
            vec![LinearField::inner(&sl, &AlgebraElement::from_slice(&[0.3, 0.5, -0.2])).unwrap()],
        )
        .unwrap();
        let rep = obstruction_report(&b, &cfg).unwrap();
        assert_eq!(
            rep.case_tag,
            ObstructionCase::SemisimpleConjugationInvariant
        );
        assert!(rep.numeric_residual < 1e-10);

        let r2 = make_group("Rn", &GroupParams::with_n(2)).unwrap();
        let b = BilinearSystem::new(
            r2.clone(),
            vec![LinearField::from_matrix(
                &r2,
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            )
            .unwrap()],
        )
        .unwrap();
        let rep = obstruction_report(&b, &cfg).unwrap();
        assert_eq!(rep.case_tag, ObstructionCase::EuclideanNoObstruction);
        assert!(!rep.certificate_issued);

        let gl = make_group("GLnPlus", &GroupParams::with_n(2)).unwrap();
        let mut trace_part = DMatrix::zeros(4, 4);
        for r in [0, 3] {
            for c in [0, 3] {
                trace_part[(r, c)] = 0.5;
            }
        }
        let b = BilinearSystem::new(
            gl.clone(),
            vec![
                LinearField::from_matrix(&gl, trace_part).unwrap(),
                LinearField::inner(&gl, &AlgebraElement::from_slice(&[0.1, 0.4, -0.3, 0.2]))
                    .unwrap(),
            ],
        )
        .unwrap();
        let rep = obstruction_report(&b, &cfg).unwrap();
        assert_eq!(rep.case_tag, ObstructionCase::MixedRadicalInvariant);
    }

    #[test]
    fn torus_inside_so3_is_fixed() {
        let s = make_group("SO3", &GroupParams::default()).unwrap();
        let b = BilinearSystem::new(
            s.clone(),
            vec![
                LinearField::inner(&s, &AlgebraElement::from_slice(&[0.0, 0.0, 1.0])).unwrap(),
                LinearField::inner(&s, &AlgebraElement::from_slice(&[0.0, 0.0, -0.4])).unwrap(),
            ],
        )
        .unwrap();
        let torus = Subspace::span(3, &[DVector::from_vec(vec![0.0, 0.0, 1.0])], 1e-8);
        let rep = torus_certificate(&b, &torus, &CertificateConfig::default()).unwrap();
        assert!(rep.numeric_residual < 1e-10);
        let bad = BilinearSystem::new(
            s.clone(),
            vec![LinearField::inner(&s, &AlgebraElement::from_slice(&[1.0, 0.0, 0.0])).unwrap()],
        )
        .unwrap();
        assert!(torus_certificate(&bad, &torus, &CertificateConfig::default()).is_err());
    }

    #[test]
    fn verdicts() {
        let cfg = ProbeConfig {
            samples: 300,
            seed: 1,
            ..ProbeConfig::default()
        };
        let h = make_group("Heisenberg3", &GroupParams::default()).unwrap();
        let sys = affine(
            &h,
            &[
                (None, &[0.0; 3]),
                (Some(&[1.0, 0.0, 0.0]), &[1.0, 0.0, 0.0]),
                (Some(&[0.0, 1.0, 0.0]), &[0.0, 1.0, 0.0]),
            ],
        );
        let v = solvable_verdict(&sys, &cfg).unwrap();
        assert_eq!(v.theorem_tag, TheoremTag::NilpotentCor);
        assert!(v.controllable, "{v:?}");
        assert!(v.filtration_checks.iter().all(|c| c.pass));

        let a = make_group("AffPlus", &GroupParams::default()).unwrap();
        let sys = affine(&a, &[(Some(&[1.0, 0.0]), &[0.0, 0.0]), (None, &[0.0, 1.0])]);
        let v = solvable_verdict(&sys, &cfg).unwrap();
        assert_eq!(v.theorem_tag, TheoremTag::NoneApplicable);
        assert!(v
            .hypotheses_checked
            .iter()
            .any(|h| h.name == "nilpotent[0]" && !h.pass));
        assert!(v
            .hypotheses_checked
            .iter()
            .all(|h| !h.name.starts_with("inner") || h.pass));

        let s = make_group("SO3", &GroupParams::default()).unwrap();
        assert!(matches!(
            solvable_verdict(&affine(&s, &[(None, &[0.0; 3])]), &cfg),
            Err(Error::WrongClass(_))
        ));
    }

    #[test]
    fn saturation_zero_system_stays_at_identity() {
        let s = make_group("SO3", &GroupParams::default()).unwrap();
        let sys = affine(&s, &[(None, &[0.0; 3])]);
        let cfg = SaturationConfig {
            grid_size: 200,
            samples: 5,
            depth_max: 3,
            ..SaturationConfig::default()
        };
        let rep = compact_saturation_experiment(&sys, &cfg).unwrap();
        assert!(rep.coverage.iter().all(|c| *c == rep.initial_coverage));
        assert!(rep.monotone);
        let h = make_group("Heisenberg3", &GroupParams::default()).unwrap();
        assert!(matches!(
            compact_saturation_experiment(&affine(&h, &[(None, &[0.0; 3])]), &cfg),
            Err(Error::WrongClass(_))
        ));
    }
}
