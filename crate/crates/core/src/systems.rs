//! Control laws and affine/bilinear/right-invariant systems with their
//! concatenated-flow solutions and an RK4 oracle.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{matrix_exp, AlgebraElement, DerivationSpec};
use crate::error::{Error, Result};
use crate::fields::{rk4_step, AffineField, LinearField, RightInvariantField};
use crate::groups::{GroupChart, GroupElement};

/// Piecewise-constant control. Segment `i` covers `(b_{i-1}, b_i]` with
/// `b_0 = origin` and `b_i = b_{i-1} + durations[i-1]`. The first value is
/// held before `b_0` and the last one after `b_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    #[serde(default, skip_serializing_if = "is_zero")]
    origin: f64,
    durations: Vec<f64>,
    values: Vec<Vec<f64>>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ControlLaw {
    pub fn new(durations: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_origin(0.0, durations, values)
    }

    pub fn with_origin(origin: f64, durations: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let law = Self {
            origin,
            durations,
            values,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn constant(u: Vec<f64>, duration: f64) -> Result<Self> {
        Self::new(vec![duration], vec![u])
    }

    pub fn validate(&self) -> Result<()> {
        if self.durations.is_empty() {
            return Err(Error::InvalidInput(
                "control law needs at least one segment".into(),
            ));
        }
        if self.durations.len() != self.values.len() {
            return Err(Error::InvalidInput(format!(
                "{} durations but {} values",
                self.durations.len(),
                self.values.len()
            )));
        }
        if !self.origin.is_finite() || self.durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidInput(
                "durations must be finite and positive".into(),
            ));
        }
        let m = self.values[0].len();
        if self
            .values
            .iter()
            .any(|v| v.len() != m || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidInput(
                "control values must be finite with equal length".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// `b_0, ..., b_n`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.durations.len() + 1);
        let mut acc = self.origin;
        b.push(acc);
        for d in &self.durations {
            acc += d;
            b.push(acc);
        }
        b
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints().last().unwrap()
    }

    fn index_at(&self, t: f64) -> usize {
        let b = self.breakpoints();
        (1..b.len())
            .find(|&i| t <= b[i])
            .map_or(self.values.len() - 1, |i| i - 1)
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.values[self.index_at(t)]
    }

    /// `theta_s omega = omega(. + s)`.
    pub fn shift(&self, s: f64) -> Self {
        Self {
            origin: self.origin - s,
            durations: self.durations.clone(),
            values: self.values.clone(),
        }
        .canonical()
    }

    /// `omega_1` on `(-inf, s]`, `omega_2(. - s)` afterwards.
    pub fn concatenate(first: &ControlLaw, s: f64, second: &ControlLaw) -> Result<Self> {
        if first.input_dim() != second.input_dim() {
            return Err(Error::InvalidInput(
                "concatenated laws differ in input dimension".into(),
            ));
        }
        let mut points: Vec<f64> = first.breakpoints().into_iter().filter(|b| *b < s).collect();
        if points.is_empty() {
            points.push(s - 1.0);
        }
        points.push(s);
        points.extend(
            second
                .breakpoints()
                .into_iter()
                .map(|b| b + s)
                .filter(|b| *b > s),
        );
        if *points.last().unwrap() == s {
            points.push(s + 1.0);
        }
        let value = |tau: f64| -> Vec<f64> {
            if tau <= s {
                first.value_at(tau).to_vec()
            } else {
                second.value_at(tau - s).to_vec()
            }
        };
        let durations: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
        let values: Vec<Vec<f64>> = points
            .windows(2)
            .map(|w| value(0.5 * (w[0] + w[1])))
            .collect();
        Ok(Self::with_origin(points[0], durations, values)?.canonical())
    }

    /// Merges adjacent segments carrying equal values.
    pub fn canonical(mut self) -> Self {
        let mut durations = Vec::with_capacity(self.durations.len());
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.values.len());
        for (d, v) in self.durations.drain(..).zip(self.values.drain(..)) {
            match values.last() {
                Some(prev) if *prev == v => *durations.last_mut().unwrap() += d,
                _ => {
                    durations.push(d);
                    values.push(v);
                }
            }
        }
        self.durations = durations;
        self.values = values;
        self
    }

    /// Signed pieces `(duration, value)` traversed from 0 to `t`, in the
    /// order they act. For `t < 0` durations are negative and the pieces run
    /// backwards from 0.
    pub fn pieces(&self, t: f64) -> Vec<(f64, &[f64])> {
        if t == 0.0 {
            return Vec::new();
        }
        let (lo, hi) = if t > 0.0 { (0.0, t) } else { (t, 0.0) };
        let mut cuts = vec![lo];
        cuts.extend(
            self.breakpoints()
                .into_iter()
                .filter(|b| *b > lo && *b < hi),
        );
        cuts.push(hi);
        let mut pieces: Vec<(f64, &[f64])> = cuts
            .windows(2)
            .map(|w| (w[1] - w[0], self.value_at(0.5 * (w[0] + w[1]))))
            .collect();
        if t < 0.0 {
            pieces.reverse();
            for p in pieces.iter_mut() {
                p.0 = -p.0;
            }
        }
        pieces
    }
}

fn check_input(u: &[f64], m: usize) -> Result<()> {
    if u.len() != m {
        return Err(Error::InvalidInput(format!(
            "control has {} entries, system has {m}",
            u.len()
        )));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("control value not finite".into()));
    }
    Ok(())
}

fn mixed_derivation(
    chart: &GroupChart,
    fields: &[&LinearField],
    u: &[f64],
) -> Result<DerivationSpec> {
    let mut d = fields[0].derivation().matrix().clone();
    for (j, f) in fields[1..].iter().enumerate() {
        if u[j] != 0.0 {
            d += f.derivation().matrix() * u[j];
        }
    }
    DerivationSpec::new(chart.algebra(), d, chart.tolerances())
}

/// `Sigma_B`: `g' = X^0(g) + sum_j u_j X^j(g)`.
#[derive(Debug, Clone)]
pub struct BilinearSystem {
    chart: GroupChart,
    fields: Vec<LinearField>,
}

impl BilinearSystem {
    /// `fields[0]` is the drift.
    pub fn new(chart: GroupChart, fields: Vec<LinearField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidInput("a system needs a drift field".into()));
        }
        if fields.iter().any(|f| f.derivation().dim() != chart.dim()) {
            return Err(Error::InvalidInput(
                "field dimension differs from the chart".into(),
            ));
        }
        Ok(Self { chart, fields })
    }

    pub fn chart(&self) -> &GroupChart {
        &self.chart
    }

    pub fn fields(&self) -> &[LinearField] {
        &self.fields
    }

    pub fn input_dim(&self) -> usize {
        self.fields.len() - 1
    }

    /// `X_u` with derivation `D^0 + sum u_j D^j`.
    pub fn mixed_field(&self, u: &[f64]) -> Result<LinearField> {
        check_input(u, self.input_dim())?;
        let refs: Vec<&LinearField> = self.fields.iter().collect();
        Ok(LinearField::new(
            &self.chart,
            mixed_derivation(&self.chart, &refs, u)?,
        ))
    }

    pub fn solution(&self, omega: &ControlLaw, t: f64, g: &GroupElement) -> Result<GroupElement> {
        let mut x = g.clone();
        for (dur, u) in omega.pieces(t) {
            x = self.mixed_field(u)?.flow(&self.chart, dur, &x)?;
        }
        Ok(x)
    }

    /// `e^{tau_k D_{omega_k}} ... e^{tau_1 D_{omega_1}}`.
    pub fn differential_at_identity(&self, omega: &ControlLaw, t: f64) -> Result<DMatrix<f64>> {
        let n = self.chart.dim();
        let mut m = DMatrix::identity(n, n);
        for (dur, u) in omega.pieces(t) {
            m = matrix_exp(&(self.mixed_field(u)?.derivation().matrix() * dur))? * m;
        }
        Ok(m)
    }

    pub fn as_affine(&self) -> AffineSystem {
        let n = self.chart.dim();
        AffineSystem {
            chart: self.chart.clone(),
            fields: self
                .fields
                .iter()
                .map(|f| AffineField::new(f.clone(), RightInvariantField::zero(n)))
                .collect(),
        }
    }

    /// `Sigma_I` built from the inner witnesses of every derivation.
    pub fn induced_right_invariant(&self) -> Result<RightInvariantSystem> {
        let elements = self
            .fields
            .iter()
            .enumerate()
            .map(|(index, f)| {
                f.derivation()
                    .inner_witness()
                    .cloned()
                    .ok_or(Error::NotInner {
                        index,
                        residual: f.derivation().witness_residual(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        RightInvariantSystem::new(self.chart.clone(), elements)
    }
}

/// `Sigma_I`: `g' = (Y^0 + sum_j u_j Y^j) g`.
#[derive(Debug, Clone)]
pub struct RightInvariantSystem {
    chart: GroupChart,
    elements: Vec<AlgebraElement>,
}

impl RightInvariantSystem {
    pub fn new(chart: GroupChart, elements: Vec<AlgebraElement>) -> Result<Self> {
        if elements.is_empty() || elements.iter().any(|e| e.dim() != chart.dim()) {
            return Err(Error::InvalidInput(
                "right-invariant system needs drift of chart dimension".into(),
            ));
        }
        Ok(Self { chart, elements })
    }

    pub fn elements(&self) -> &[AlgebraElement] {
        &self.elements
    }

    pub fn mixed_element(&self, u: &[f64]) -> Result<DVector<f64>> {
        check_input(u, self.elements.len() - 1)?;
        let mut y = self.elements[0].coords().clone();
        for (j, e) in self.elements[1..].iter().enumerate() {
            y += e.coords() * u[j];
        }
        Ok(y)
    }

    pub fn solution(&self, omega: &ControlLaw, t: f64, g: &GroupElement) -> Result<GroupElement> {
        let mut x = g.clone();
        for (dur, u) in omega.pieces(t) {
            let e = self.chart.exp_coords(&(self.mixed_element(u)? * dur))?;
            x = self.chart.mul(&e, &x);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Concatenation,
    Decomposition,
    Rk4,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Concatenation => "concatenation",
            Method::Decomposition => "decomposition",
            Method::Rk4 => "rk4",
        }
    }
}

/// Sampled solution path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<GroupElement>,
    pub control: ControlLaw,
    pub method: Method,
}

impl Trajectory {
    pub fn terminal(&self) -> &GroupElement {
        self.points.last().unwrap()
    }

    /// Largest entrywise deviation at common sample times.
    pub fn max_deviation(&self, other: &Trajectory) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// Output sample times `k / samples_per_unit` on `[0, t_end]`, always
/// including `t_end`.
pub fn sample_times(t_end: f64, samples_per_unit: usize) -> Vec<f64> {
    let spu = samples_per_unit.max(1) as f64;
    let count = (t_end * spu).floor() as usize;
    let mut times: Vec<f64> = (0..=count)
        .map(|k| k as f64 / spu)
        .filter(|t| *t < t_end)
        .collect();
    times.push(t_end);
    times
}

/// `Sigma_A`: `g' = F^0(g) + sum_j u_j F^j(g)`.
#[derive(Debug, Clone)]
pub struct AffineSystem {
    chart: GroupChart,
    fields: Vec<AffineField>,
}

impl AffineSystem {
    /// `fields[0]` is the drift.
    pub fn new(chart: GroupChart, fields: Vec<AffineField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidInput("a system needs a drift field".into()));
        }
        let n = chart.dim();
        if fields
            .iter()
            .any(|f| f.linear().derivation().dim() != n || f.invariant().element().dim() != n)
        {
            return Err(Error::InvalidInput(
                "field dimension differs from the chart".into(),
            ));
        }
        Ok(Self { chart, fields })
    }

    pub fn chart(&self) -> &GroupChart {
        &self.chart
    }

    pub fn fields(&self) -> &[AffineField] {
        &self.fields
    }

    pub fn input_dim(&self) -> usize {
        self.fields.len() - 1
    }

    /// `F_u`: mixed derivation with recomputed witness, `Y_u = Y^0 + sum u_j Y^j`.
    pub fn mixed_field(&self, u: &[f64]) -> Result<AffineField> {
        check_input(u, self.input_dim())?;
        let linear: Vec<&LinearField> = self.fields.iter().map(AffineField::linear).collect();
        let d = mixed_derivation(&self.chart, &linear, u)?;
        let mut y = self.fields[0].invariant().element().coords().clone();
        for (j, f) in self.fields[1..].iter().enumerate() {
            y += f.invariant().element().coords() * u[j];
        }
        Ok(AffineField::new(
            LinearField::new(&self.chart, d),
            RightInvariantField::new(AlgebraElement::new(y)),
        ))
    }

    pub fn induced_bilinear(&self) -> BilinearSystem {
        BilinearSystem {
            chart: self.chart.clone(),
            fields: self.fields.iter().map(|f| f.linear().clone()).collect(),
        }
    }

    pub fn solution(
        &self,
        omega: &ControlLaw,
        t: f64,
        g: &GroupElement,
        method: Method,
    ) -> Result<GroupElement> {
        match method {
            Method::Concatenation => {
                let mut x = g.clone();
                for (dur, u) in omega.pieces(t) {
                    x = self.mixed_field(u)?.flow(&self.chart, dur, &x)?;
                }
                Ok(x)
            }
            Method::Decomposition => {
                let at_e =
                    self.solution(omega, t, &self.chart.identity(), Method::Concatenation)?;
                let b = self.induced_bilinear().solution(omega, t, g)?;
                Ok(self.chart.mul(&at_e, &b))
            }
            Method::Rk4 => {
                if t < 0.0 {
                    return Err(Error::InvalidInput(
                        "RK4 solutions run forward in time".into(),
                    ));
                }
                let traj = self.rk4_solution(omega, g, t, self.chart.tolerances().rk4_dt, 1)?;
                Ok(traj.terminal().clone())
            }
        }
    }

    /// Closed-form trajectory sampled at [`sample_times`], advanced sample to
    /// sample through the cocycle identity.
    pub fn trajectory(
        &self,
        omega: &ControlLaw,
        g0: &GroupElement,
        t_end: f64,
        samples_per_unit: usize,
        method: Method,
    ) -> Result<Trajectory> {
        if method == Method::Rk4 {
            return self.rk4_solution(
                omega,
                g0,
                t_end,
                self.chart.tolerances().rk4_dt,
                samples_per_unit,
            );
        }
        let times = sample_times(t_end, samples_per_unit);
        let mut points = vec![g0.clone()];
        for w in times.windows(2) {
            let next = self.solution(
                &omega.shift(w[0]),
                w[1] - w[0],
                points.last().unwrap(),
                method,
            )?;
            points.push(next);
        }
        Ok(Trajectory {
            times,
            points,
            control: omega.clone(),
            method,
        })
    }

    /// Fixed-step RK4 in ambient matrices. Every control breakpoint and
    /// output sample is a step boundary; each interval between them is split
    /// into `ceil(len / dt)` equal steps.
    pub fn rk4_solution(
        &self,
        omega: &ControlLaw,
        g0: &GroupElement,
        t_end: f64,
        dt: f64,
        samples_per_unit: usize,
    ) -> Result<Trajectory> {
        if !(dt > 0.0) || !(t_end >= 0.0) {
            return Err(Error::InvalidInput(
                "RK4 needs dt > 0 and t_end >= 0".into(),
            ));
        }
        let times = sample_times(t_end, samples_per_unit);
        let mut events: Vec<f64> = times.clone();
        events.extend(
            omega
                .breakpoints()
                .into_iter()
                .filter(|b| *b > 0.0 && *b < t_end),
        );
        events.sort_by(f64::total_cmp);
        events.dedup();
        let mut points = vec![g0.clone()];
        let mut g = g0.matrix().clone();
        let mut next_sample = 1;
        for w in events.windows(2) {
            let (a, b) = (w[0], w[1]);
            let field = self.mixed_field(omega.value_at(0.5 * (a + b)))?;
            let f = |x: &DMatrix<f64>| field.eval(&self.chart, &GroupElement::from_raw(x.clone()));
            let steps = ((b - a) / dt).ceil().max(1.0) as usize;
            let h = (b - a) / steps as f64;
            for _ in 0..steps {
                g = rk4_step(&self.chart, &g, h, &f)?;
            }
            if next_sample < times.len() && times[next_sample] == b {
                points.push(GroupElement::from_raw(g.clone()));
                next_sample += 1;
            }
        }
        if times.len() == 1 {
            points.truncate(1);
        }
        Ok(Trajectory {
            times,
            points,
            control: omega.clone(),
            method: Method::Rk4,
        })
    }

    /// Evaluates many `(omega, t, g)` triples in parallel; results keep the
    /// input order.
    pub fn batch_solutions(
        &self,
        inputs: &[(ControlLaw, f64, GroupElement)],
        method: Method,
    ) -> Vec<Result<GroupElement>> {
        inputs
            .par_iter()
            .map(|(omega, t, g)| self.solution(omega, *t, g, method))
            .collect()
    }
}
