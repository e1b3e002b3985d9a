//! Right-invariant, linear and affine vector fields and their flows.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::algebra::{
    dexp, matrix_exp, matrix_log, matrix_sqrt, solve_inner_witness, AlgebraElement, DerivationSpec,
    LogMode,
};
use crate::error::{Error, Result};
use crate::groups::{GroupChart, GroupElement, GroupKind};

/// `g -> Y g`.
#[derive(Debug, Clone, PartialEq)]
pub struct RightInvariantField {
    y: AlgebraElement,
}

impl RightInvariantField {
    pub fn new(y: AlgebraElement) -> Self {
        Self { y }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(AlgebraElement::zero(n))
    }

    pub fn element(&self) -> &AlgebraElement {
        &self.y
    }

    pub fn eval(&self, chart: &GroupChart, g: &GroupElement) -> DMatrix<f64> {
        chart.algebra().realize(self.y.coords()) * g.matrix()
    }

    /// `e^{tY} g`.
    pub fn flow(&self, chart: &GroupChart, t: f64, g: &GroupElement) -> Result<GroupElement> {
        let e = chart.exp_coords(&(self.y.coords() * t))?;
        Ok(chart.mul(&e, g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowStrategy {
    /// `e^{tW} g e^{-tW}` for an inner derivation `ad(W)`.
    Conjugation(AlgebraElement),
    /// `exp(e^{tD} log g)` on simply connected nilpotent charts.
    ExpCoordinates,
    /// On `GLnPlus`, `D = ad(W) + c P` with `P(X) = (tr X / n) I`:
    /// `e^{tW} g e^{-tW} exp((e^{ct} - 1) ln det(g) / n)`.
    ScalarSplit { witness: AlgebraElement, rate: f64 },
    /// RK4 on the field with the chart's default step.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Conjugation,
    ExpCoordinates,
    ScalarSplit,
    Numeric,
}

impl FlowStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            FlowStrategy::Conjugation(_) => StrategyKind::Conjugation,
            FlowStrategy::ExpCoordinates => StrategyKind::ExpCoordinates,
            FlowStrategy::ScalarSplit { .. } => StrategyKind::ScalarSplit,
            FlowStrategy::Numeric => StrategyKind::Numeric,
        }
    }
}

/// Vector field whose flow is a one-parameter group of automorphisms with
/// `(d psi_t)_e = e^{tD}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    derivation: DerivationSpec,
    strategy: FlowStrategy,
}

fn exp_coordinates_available(chart: &GroupChart) -> bool {
    chart.flags().simply_connected && chart.flags().nilpotent
}

/// Splits a derivation of `gl_n` as `ad(W) + c P`.
fn scalar_split(chart: &GroupChart, derivation: &DerivationSpec) -> Option<FlowStrategy> {
    let GroupKind::GLnPlus(k) = chart.kind() else {
        return None;
    };
    let alg = chart.algebra();
    let tol = chart.tolerances();
    let d = derivation.matrix();
    let z = alg.coords_of(&DMatrix::identity(k, k));
    let c = (d * &z).dot(&z) / z.norm_squared();
    let mut p = DMatrix::zeros(d.nrows(), d.ncols());
    for (l, b) in alg.realization().iter().enumerate() {
        p.set_column(l, &(&z * (b.trace() / k as f64)));
    }
    let scale = d.norm().max(1.0);
    if (d * &z - &z * c).norm() > tol.inner * scale {
        return None;
    }
    let (w, _) = solve_inner_witness(&(d - p * c), alg, tol).ok()?;
    w.map(|witness| FlowStrategy::ScalarSplit { witness, rate: c })
}

/// `ln det(g) / n`.
fn log_scalar(g: &DMatrix<f64>) -> Result<f64> {
    let det = g.determinant();
    if !(det > 0.0) {
        return Err(Error::LogDomainError(format!(
            "determinant {det:.3e} is not positive"
        )));
    }
    Ok(det.ln() / g.nrows() as f64)
}

impl LinearField {
    /// Picks conjugation when an inner witness exists, exponential
    /// coordinates on simply connected nilpotent charts, the scalar split on
    /// `GLnPlus`, RK4 otherwise.
    pub fn new(chart: &GroupChart, derivation: DerivationSpec) -> Self {
        let strategy = match derivation.inner_witness() {
            Some(w) => FlowStrategy::Conjugation(w.clone()),
            None if exp_coordinates_available(chart) => FlowStrategy::ExpCoordinates,
            None => scalar_split(chart, &derivation).unwrap_or(FlowStrategy::Numeric),
        };
        Self {
            derivation,
            strategy,
        }
    }

    pub fn from_matrix(chart: &GroupChart, matrix: DMatrix<f64>) -> Result<Self> {
        let d = DerivationSpec::new(chart.algebra(), matrix, chart.tolerances())?;
        Ok(Self::new(chart, d))
    }

    /// The inner field `g -> Wg - gW`.
    pub fn inner(chart: &GroupChart, w: &AlgebraElement) -> Result<Self> {
        let d = chart.algebra().ad_matrix(w)?;
        Ok(Self {
            derivation: d,
            strategy: FlowStrategy::Conjugation(w.clone()),
        })
    }

    pub fn zero(chart: &GroupChart) -> Self {
        Self {
            derivation: DerivationSpec::zero(chart.dim()),
            strategy: FlowStrategy::Conjugation(AlgebraElement::zero(chart.dim())),
        }
    }

    /// Forces a strategy, checking that it applies.
    pub fn with_strategy(
        chart: &GroupChart,
        derivation: DerivationSpec,
        kind: StrategyKind,
    ) -> Result<Self> {
        let strategy = match kind {
            StrategyKind::Conjugation => match derivation.inner_witness() {
                Some(w) => FlowStrategy::Conjugation(w.clone()),
                None => {
                    return Err(Error::StrategyError(format!(
                        "conjugation needs an inner witness (residual {:.3e})",
                        derivation.witness_residual()
                    )))
                }
            },
            StrategyKind::ExpCoordinates if exp_coordinates_available(chart) => {
                FlowStrategy::ExpCoordinates
            }
            StrategyKind::ExpCoordinates => {
                return Err(Error::StrategyError(format!(
                    "exponential coordinates need a simply connected nilpotent chart, {} is not",
                    chart.name()
                )))
            }
            StrategyKind::ScalarSplit => match scalar_split(chart, &derivation) {
                Some(s) => s,
                None => {
                    return Err(Error::StrategyError(format!(
                        "no scalar split of the derivation on {}",
                        chart.name()
                    )))
                }
            },
            StrategyKind::Numeric => FlowStrategy::Numeric,
        };
        Ok(Self {
            derivation,
            strategy,
        })
    }

    pub fn derivation(&self) -> &DerivationSpec {
        &self.derivation
    }

    pub fn strategy(&self) -> &FlowStrategy {
        &self.strategy
    }

    /// Tangent matrix at `g`.
    pub fn eval(&self, chart: &GroupChart, g: &GroupElement) -> Result<DMatrix<f64>> {
        match &self.strategy {
            FlowStrategy::Conjugation(w) => {
                let wm = chart.algebra().realize(w.coords());
                Ok(&wm * g.matrix() - g.matrix() * &wm)
            }
            FlowStrategy::ScalarSplit { witness, rate } => {
                let wm = chart.algebra().realize(witness.coords());
                let sigma = log_scalar(g.matrix())?;
                Ok(&wm * g.matrix() - g.matrix() * &wm + g.matrix() * (rate * sigma))
            }
            _ => automorphism_eval(chart, self.derivation.matrix(), g.matrix()),
        }
    }

    /// `psi_t(g)`.
    pub fn flow(&self, chart: &GroupChart, t: f64, g: &GroupElement) -> Result<GroupElement> {
        if t == 0.0 {
            return Ok(g.clone());
        }
        match &self.strategy {
            FlowStrategy::Conjugation(w) => {
                let a = chart.exp_coords(&(w.coords() * t))?;
                let b = chart.exp_coords(&(w.coords() * -t))?;
                Ok(chart.mul(&chart.mul(&a, g), &b))
            }
            FlowStrategy::ExpCoordinates => {
                let z = chart.log_coords(g)?;
                let et = matrix_exp(&(self.derivation.matrix() * t))?;
                chart.exp_coords(&(et * z))
            }
            FlowStrategy::ScalarSplit { witness, rate } => {
                let sigma = log_scalar(g.matrix())?;
                let a = chart.exp_coords(&(witness.coords() * t))?;
                let b = chart.exp_coords(&(witness.coords() * -t))?;
                let conj = chart.mul(&chart.mul(&a, g), &b).into_matrix();
                let factor = ((rate * t).exp_m1() * sigma).exp();
                Ok(GroupElement::from_raw(conj * factor))
            }
            FlowStrategy::Numeric => {
                let d = self.derivation.matrix();
                let m = rk4_integrate(chart, g.matrix(), t, chart.tolerances().rk4_dt, |x| {
                    automorphism_eval(chart, d, x)
                })?;
                Ok(GroupElement::from_raw(m))
            }
        }
    }

    /// `e^{tD}`.
    pub fn flow_differential_at_identity(&self, t: f64) -> Result<DMatrix<f64>> {
        matrix_exp(&(self.derivation.matrix() * t))
    }
}

/// Value at `g` of the linear field with derivation `d`, from
/// `X(exp Z) = dexp_Z(D Z)`. Off the log domain, `g` is reduced by square
/// roots and the field rebuilt with `X(h^2) = X(h) h + h X(h)`.
pub(crate) fn automorphism_eval(
    chart: &GroupChart,
    d: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let alg = chart.algebra();
    let at = |z: nalgebra::DVector<f64>| dexp(&alg.realize(&z), &alg.realize(&(d * &z)));
    if chart.has_global_log() {
        return at(chart.log_coords(&GroupElement::from_raw(g.clone()))?);
    }
    let dim = g.nrows();
    let mut roots = vec![g.clone()];
    while (roots.last().unwrap() - DMatrix::identity(dim, dim)).norm() > 0.25 {
        if roots.len() > 60 {
            return Err(Error::LogDomainError(
                "square-root reduction did not converge".into(),
            ));
        }
        let next = matrix_sqrt(roots.last().unwrap())?;
        roots.push(next);
    }
    let h = roots.pop().unwrap();
    let z = alg.coords_of(&matrix_log(&h, LogMode::Principal)?);
    let mut x = at(z)?;
    let mut cur = h;
    while let Some(next) = roots.pop() {
        x = &x * &cur + &cur * &x;
        cur = next;
    }
    Ok(x)
}

/// Classical RK4 from `g0` over signed time `t`, split into
/// `ceil(|t| / dt)` equal steps, projecting onto the chart after each step.
pub(crate) fn rk4_integrate<F>(
    chart: &GroupChart,
    g0: &DMatrix<f64>,
    t: f64,
    dt: f64,
    f: F,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    if t == 0.0 {
        return Ok(g0.clone());
    }
    let steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut g = g0.clone();
    for _ in 0..steps {
        g = rk4_step(chart, &g, h, &f)?;
    }
    Ok(g)
}

pub(crate) fn rk4_step<F>(
    chart: &GroupChart,
    g: &DMatrix<f64>,
    h: f64,
    f: &F,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let k1 = f(g)?;
    let k2 = f(&(g + &k1 * (h / 2.0)))?;
    let k3 = f(&(g + &k2 * (h / 2.0)))?;
    let k4 = f(&(g + &k3 * h))?;
    let next = g + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow("RK4 state is not finite".into()));
    }
    chart.project(next)
}

/// `F = X + Y` with `X` linear and `Y` right-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineField {
    linear: LinearField,
    invariant: RightInvariantField,
}

impl AffineField {
    pub fn new(linear: LinearField, invariant: RightInvariantField) -> Self {
        Self { linear, invariant }
    }

    /// Field given as `g -> Ag - gA + gB` (linear part plus a left-invariant
    /// term). Rewritten as `(Cg - gC) + Bg` with `C = A - B`.
    pub fn from_left_invariant_form(
        chart: &GroupChart,
        a: &AlgebraElement,
        b: &AlgebraElement,
    ) -> Result<Self> {
        let c = AlgebraElement::new(a.coords() - b.coords());
        Ok(Self::new(
            LinearField::inner(chart, &c)?,
            RightInvariantField::new(b.clone()),
        ))
    }

    pub fn linear(&self) -> &LinearField {
        &self.linear
    }

    pub fn invariant(&self) -> &RightInvariantField {
        &self.invariant
    }

    pub fn eval(&self, chart: &GroupChart, g: &GroupElement) -> Result<DMatrix<f64>> {
        Ok(self.linear.eval(chart, g)? + self.invariant.eval(chart, g))
    }

    fn eval_matrix(&self, chart: &GroupChart, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.eval(chart, &GroupElement::from_raw(g.clone()))
    }

    /// `alpha_t(e)`: closed form on Rn and Heisenberg3 and in the inner
    /// case, RK4 otherwise.
    pub fn identity_orbit(&self, chart: &GroupChart, t: f64) -> Result<GroupElement> {
        self.flow(chart, t, &chart.identity())
    }

    /// `alpha_t(g)`: `e^{t(W+Y)} g e^{-tW}` in the inner case, otherwise
    /// `alpha_t(e) psi_t(g)`.
    pub fn flow(&self, chart: &GroupChart, t: f64, g: &GroupElement) -> Result<GroupElement> {
        if t == 0.0 {
            return Ok(g.clone());
        }
        if let FlowStrategy::Conjugation(w) = self.linear.strategy() {
            let a = chart.exp_coords(&((w.coords() + self.invariant.element().coords()) * t))?;
            let b = chart.exp_coords(&(w.coords() * -t))?;
            return Ok(chart.mul(&chart.mul(&a, g), &b));
        }
        let psi = self.linear.flow(chart, t, g)?;
        if self.invariant.element().coords().amax() == 0.0 {
            return Ok(psi);
        }
        let e = match (chart.kind(), self.linear.strategy()) {
            (GroupKind::Rn(_) | GroupKind::Heisenberg3, _) => {
                two_step_identity_orbit(chart, self, t)?.into_matrix()
            }
            (_, FlowStrategy::ScalarSplit { witness, rate }) => {
                scalar_split_identity_orbit(chart, self, witness, *rate, t)?
            }
            _ => rk4_integrate(
                chart,
                chart.identity().matrix(),
                t,
                chart.tolerances().rk4_dt,
                |x| self.eval_matrix(chart, x),
            )?,
        };
        Ok(chart.mul(&GroupElement::from_raw(e), &psi))
    }
}

/// On a group with `[g, [g, g]] = 0` and a global log, `zeta = log g` obeys
/// `zeta' = (D + ad(Y)/2) zeta + Y` along `F = X + Y`, which the exponential
/// of `[[D + ad(Y)/2, Y], [0, 0]]` integrates exactly.
fn two_step_identity_orbit(chart: &GroupChart, f: &AffineField, t: f64) -> Result<GroupElement> {
    let n = chart.dim();
    let y = f.invariant().element().coords();
    let mut big = DMatrix::zeros(n + 1, n + 1);
    let a = f.linear().derivation().matrix() + chart.algebra().ad_coords(y) * 0.5;
    big.view_mut((0, 0), (n, n)).copy_from(&a);
    big.view_mut((0, n), (n, 1)).copy_from(y);
    let zeta = matrix_exp(&(big * t))?.view((0, n), (n, 1)).into_owned();
    chart.exp_coords(&zeta.column(0).into_owned())
}

/// With `Y = Y0 + y I`, `tr Y0 = 0`, the scalar `s = ln det(g) / n` obeys
/// `s' = c s + y` and `g e^{-s}` follows the inner field with drift `Y0`.
fn scalar_split_identity_orbit(
    chart: &GroupChart,
    f: &AffineField,
    witness: &AlgebraElement,
    rate: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let GroupKind::GLnPlus(k) = chart.kind() else {
        return Err(Error::StrategyError("scalar split outside GLnPlus".into()));
    };
    let alg = chart.algebra();
    let yc = f.invariant().element().coords();
    let ym = alg.realize(yc);
    let y = ym.trace() / k as f64;
    let y0 = alg.coords_of(&(ym - DMatrix::identity(k, k) * y));
    let a = chart.exp_coords(&((witness.coords() + y0) * t))?;
    let b = chart.exp_coords(&(witness.coords() * -t))?;
    let sigma = if rate == 0.0 {
        y * t
    } else {
        y * (rate * t).exp_m1() / rate
    };
    Ok(chart.mul(&a, &b).into_matrix() * sigma.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{heisenberg_coords, heisenberg_element, make_group, GroupParams};
    use crate::rng;
    use nalgebra::DVector;

    fn heis() -> GroupChart {
        make_group("Heisenberg3", &GroupParams::default()).unwrap()
    }

    fn so3() -> GroupChart {
        make_group("SO3", &GroupParams::default()).unwrap()
    }

    fn example_field(chart: &GroupChart) -> LinearField {
        LinearField::from_matrix(
            chart,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0])),
        )
        .unwrap()
    }

    #[test]
    fn example_field_closed_form() {
        let h = heis();
        let x = example_field(&h);
        assert_eq!(x.strategy().kind(), StrategyKind::ExpCoordinates);
        for t in [-1.0, 2f64.ln(), 1.0] {
            let g = x.flow(&h, t, &heisenberg_element(1.0, 1.0, 1.0)).unwrap();
            let c = heisenberg_coords(&g);
            let expected = [t.exp(), t.exp(), (2.0 * t).exp()];
            for k in 0..3 {
                assert!((c[k] - expected[k]).abs() < 1e-12 * expected[k].max(1.0));
            }
        }
        let g = heisenberg_element(0.7, -1.5, 2.25);
        let v = x.eval(&h, &g).unwrap();
        assert!((v[(0, 1)] - 0.7).abs() < 1e-14);
        assert!((v[(1, 2)] + 1.5).abs() < 1e-14);
        assert!((v[(0, 2)] - 4.5).abs() < 1e-14);
        let diff = x.flow_differential_at_identity(1.0).unwrap();
        let e = std::f64::consts::E;
        assert!(
            (diff - DMatrix::from_diagonal(&DVector::from_vec(vec![e, e, e * e]))).amax() < 1e-13
        );
    }

    #[test]
    fn linear_fields_vanish_at_identity() {
        let h = heis();
        let s = so3();
        assert_eq!(
            example_field(&h).eval(&h, &h.identity()).unwrap().amax(),
            0.0
        );
        let w = AlgebraElement::from_slice(&[0.2, -0.4, 1.0]);
        assert_eq!(
            LinearField::inner(&s, &w)
                .unwrap()
                .eval(&s, &s.identity())
                .unwrap()
                .amax(),
            0.0
        );
    }

    #[test]
    fn strategies_agree_on_inner_heisenberg_field() {
        let h = heis();
        let d = h
            .algebra()
            .ad_matrix(&AlgebraElement::from_slice(&[1.0, 2.0, 0.0]))
            .unwrap();
        let g = heisenberg_element(0.4, -0.3, 1.2);
        let flows: Vec<GroupElement> = [
            StrategyKind::Conjugation,
            StrategyKind::ExpCoordinates,
            StrategyKind::Numeric,
        ]
        .iter()
        .map(|k| {
            LinearField::with_strategy(&h, d.clone(), *k)
                .unwrap()
                .flow(&h, 1.3, &g)
                .unwrap()
        })
        .collect();
        assert!(flows[0].max_abs_diff(&flows[1]) < 1e-12);
        assert!(flows[0].max_abs_diff(&flows[2]) < 1e-7);
        let s = so3();
        assert!(LinearField::with_strategy(
            &s,
            DerivationSpec::zero(3),
            StrategyKind::ExpCoordinates
        )
        .is_err());
        let diag = DerivationSpec::new(
            h.algebra(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0])),
            h.tolerances(),
        )
        .unwrap();
        assert!(matches!(
            LinearField::with_strategy(&h, diag, StrategyKind::Conjugation),
            Err(Error::StrategyError(_))
        ));
    }

    #[test]
    fn numeric_strategy_matches_determinant_scaling_on_gl2() {
        // D(Z) = tr(Z)/2 I is a non-inner derivation of gl(2); its flow is
        // g -> g det(g)^{(e^t - 1)/2}.
        let gl = make_group("GLnPlus", &GroupParams::with_n(2)).unwrap();
        let mut d = DMatrix::zeros(4, 4);
        for r in [0, 3] {
            for c in [0, 3] {
                d[(r, c)] = 0.5;
            }
        }
        let x = LinearField::from_matrix(&gl, d).unwrap();
        assert_eq!(x.strategy().kind(), StrategyKind::ScalarSplit);
        let numeric =
            LinearField::with_strategy(&gl, x.derivation().clone(), StrategyKind::Numeric).unwrap();
        let g = gl
            .element(DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.2, 0.9]))
            .unwrap();
        let t: f64 = 0.8;
        let expected = g.matrix() * g.matrix().determinant().powf((t.exp() - 1.0) / 2.0);
        assert!((x.flow(&gl, t, &g).unwrap().matrix() - &expected).amax() < 1e-13);
        assert!((numeric.flow(&gl, t, &g).unwrap().matrix() - expected).amax() < 1e-9);
    }

    #[test]
    fn automorphism_law_and_eq3() {
        let mut r = rng::seeded(21);
        let h = heis();
        let s = so3();
        let cases = vec![
            (h.clone(), example_field(&h)),
            (
                s.clone(),
                LinearField::inner(&s, &AlgebraElement::from_slice(&[0.3, -1.0, 0.5])).unwrap(),
            ),
        ];
        for (chart, x) in &cases {
            for _ in 0..20 {
                let t = rng::uniform(&mut r, -2.0, 2.0);
                let g = chart.sample_near_identity(&mut r, 1.0).unwrap();
                let k = chart.sample_near_identity(&mut r, 1.0).unwrap();
                let lhs = x.flow(chart, t, &chart.mul(&g, &k)).unwrap();
                let rhs = chart.mul(
                    &x.flow(chart, t, &g).unwrap(),
                    &x.flow(chart, t, &k).unwrap(),
                );
                assert!(lhs.max_abs_diff(&rhs) < 1e-8);

                let y = rng::in_ball(&mut r, chart.dim(), 0.5);
                let lhs = x.flow(chart, t, &chart.exp_coords(&y).unwrap()).unwrap();
                let rhs = chart
                    .exp_coords(&(x.flow_differential_at_identity(t).unwrap() * y))
                    .unwrap();
                assert!(lhs.max_abs_diff(&rhs) < 1e-8);
            }
        }
    }

    #[test]
    fn conjugation_preserves_trace_and_determinant() {
        let s = so3();
        let x = LinearField::inner(&s, &AlgebraElement::from_slice(&[1.1, 0.2, -0.7])).unwrap();
        let g = s.random_near_identity(2.0, 4).unwrap();
        let f = x.flow(&s, 1.7, &g).unwrap();
        assert!((f.matrix().trace() - g.matrix().trace()).abs() < 1e-14);
        assert!((f.matrix().determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn right_invariant_semigroup() {
        let s = so3();
        let y = RightInvariantField::new(AlgebraElement::from_slice(&[0.5, 0.1, -0.9]));
        let g = s.random_near_identity(1.0, 1).unwrap();
        let a = y.flow(&s, 0.4, &y.flow(&s, 0.9, &g).unwrap()).unwrap();
        let b = y.flow(&s, 1.3, &g).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-11);
        assert_eq!(y.flow(&s, 0.0, &g).unwrap(), g);
    }

    #[test]
    fn affine_closed_form_and_rk4() {
        let h = heis();
        let f = AffineField::new(
            LinearField::inner(&h, &AlgebraElement::basis(3, 0)).unwrap(),
            RightInvariantField::new(AlgebraElement::basis(3, 1)),
        );
        let c = heisenberg_coords(&f.identity_orbit(&h, 1.0).unwrap());
        assert!((c[0]).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15 && (c[2] - 0.5).abs() < 1e-15);

        let f2 = AffineField::new(
            example_field(&h),
            RightInvariantField::new(AlgebraElement::from_slice(&[0.3, -0.2, 0.7])),
        );
        let g = heisenberg_element(0.5, 0.2, -0.4);
        for t in [0.5, 1.0, 2.0] {
            let closed = f2.flow(&h, t, &g).unwrap();
            let oracle = rk4_integrate(&h, g.matrix(), t, 1e-3, |x| f2.eval_matrix(&h, x)).unwrap();
            assert!((closed.matrix() - oracle).amax() < 1e-6 * closed.matrix().amax().max(1.0));
        }
    }

    #[test]
    fn rn_identity_orbit_is_variation_of_constants() {
        let r2 = make_group("Rn", &GroupParams::with_n(2)).unwrap();
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let f = AffineField::new(
            LinearField::from_matrix(&r2, d).unwrap(),
            RightInvariantField::new(AlgebraElement::from_slice(&[1.0, 0.0])),
        );
        // x' = (x2 + 1, -x1) from 0 gives (sin t, cos t - 1)
        let t: f64 = 1.3;
        let m = f.identity_orbit(&r2, t).unwrap();
        assert!((m.matrix()[(0, 2)] - t.sin()).abs() < 1e-14);
        assert!((m.matrix()[(1, 2)] - (t.cos() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn left_invariant_form_matches_example() {
        let gl = make_group("GLnPlus", &GroupParams::with_n(2)).unwrap();
        let a = AlgebraElement::from_slice(&[0.2, 1.0, -0.5, 0.3]);
        let b = AlgebraElement::from_slice(&[0.7, 0.0, 0.4, -0.1]);
        let f = AffineField::from_left_invariant_form(&gl, &a, &b).unwrap();
        let g = gl
            .element(DMatrix::from_row_slice(2, 2, &[1.2, 0.1, 0.3, 0.8]))
            .unwrap();
        let am = gl.algebra().realize(a.coords());
        let bm = gl.algebra().realize(b.coords());
        let cm = &am - &bm;
        let expected = &am * g.matrix() - g.matrix() * &cm;
        assert!((f.eval(&gl, &g).unwrap() - expected).amax() < 1e-14);
        assert!((f.eval(&gl, &gl.identity()).unwrap() - bm).amax() < 1e-14);
    }

    #[test]
    fn differential_matches_finite_differences() {
        let s = so3();
        let x = LinearField::inner(&s, &AlgebraElement::from_slice(&[0.8, -0.3, 0.4])).unwrap();
        let t = 0.9;
        let step = 1e-5;
        let mut jac = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let mut e = DVector::zeros(3);
            e[k] = step;
            let p = s
                .log_coords(&x.flow(&s, t, &s.exp_coords(&e).unwrap()).unwrap())
                .unwrap();
            let m = s
                .log_coords(&x.flow(&s, t, &s.exp_coords(&-e).unwrap()).unwrap())
                .unwrap();
            jac.set_column(k, &((p - m) / (2.0 * step)));
        }
        assert!((jac - x.flow_differential_at_identity(t).unwrap()).amax() < 1e-6);
    }

    #[test]
    fn scalar_split_agrees_with_rk4_on_gl2() {
        let gl = make_group("GLnPlus", &GroupParams::with_n(2)).unwrap();
        let w = gl
            .algebra()
            .ad_matrix(&AlgebraElement::from_slice(&[0.3, -0.5, 0.2, 0.1]))
            .unwrap();
        let mut d = w.matrix().clone();
        for (l, k) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            d[(l, k)] += 0.35;
        }
        let spec = DerivationSpec::new(gl.algebra(), d, gl.tolerances()).unwrap();
        assert!(!spec.is_inner());
        let split = LinearField::new(&gl, spec.clone());
        assert_eq!(split.strategy().kind(), StrategyKind::ScalarSplit);
        let numeric = LinearField::with_strategy(&gl, spec, StrategyKind::Numeric).unwrap();
        let g = gl
            .exp_coords(&DVector::from_vec(vec![0.4, 0.2, -0.3, 0.1]))
            .unwrap();
        assert!((split.eval(&gl, &g).unwrap() - numeric.eval(&gl, &g).unwrap()).amax() < 1e-12);
        let a = split.flow(&gl, 1.2, &g).unwrap();
        let b = numeric.flow(&gl, 1.2, &g).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-7);
        let y = RightInvariantField::new(AlgebraElement::from_slice(&[0.5, 0.3, -0.2, -0.1]));
        let fa = AffineField::new(split, y.clone());
        let fb = AffineField::new(numeric, y);
        let a = fa.flow(&gl, -0.8, &g).unwrap();
        let b = fb.flow(&gl, -0.8, &g).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-7);
    }
}
