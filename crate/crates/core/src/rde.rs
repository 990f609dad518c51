//! `X_t = x₀ + ∫_0^t f(X_r) dr + ∫_0^t σ(X_r) d𝐁_r`.
//!
//! Two solvers serve as each other's oracle: the one-step Davie scheme
//! `x + f(x)h + σ(x)ΔB + (Dσσ)(x):Δ𝔹`, and Picard iteration of
//! `Ψ(Y, Y') = (x₀ + ∫ f(Y) dr + ∫ σ(Y) d𝐁, σ(Y))` over the whole horizon.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controlled::{
    compensated_term, compose_smooth, controlled_norm_at, rough_integral, rough_integral_path,
    ControlledPath,
};
use crate::error::{Error, Result};
use crate::grid_path::GridPath;
use crate::rough_lift::{Flavor, RoughPath};
use crate::transform::{MatrixField, VectorField};

/// Solutions whose norm exceeds this are treated as blown up.
pub const BLOW_UP: f64 = 1e8;

type DriftFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// Bounded drift with its Hölder exponent `θ`.
#[derive(Clone)]
pub struct Drift {
    dim: usize,
    f: DriftFn,
    theta: f64,
    holder: f64,
    sup: f64,
}

impl std::fmt::Debug for Drift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Drift")
            .field("dim", &self.dim)
            .field("theta", &self.theta)
            .field("sup", &self.sup)
            .finish()
    }
}

impl Drift {
    pub fn new(
        dim: usize,
        f: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        theta: f64,
        sup: f64,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!("Hölder exponent {theta} outside (0, 1]"),
            });
        }
        if !(sup >= 0.0 && sup.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sup",
                reason: format!("drift bound {sup} must be finite"),
            });
        }
        Ok(Self {
            dim,
            f: Arc::new(f),
            theta,
            holder: f64::NAN,
            sup,
        })
    }

    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        theta: f64,
        sup: f64,
    ) -> Result<Self> {
        Self::new(1, move |x| DVector::from_element(1, f(x[0])), theta, sup)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, move |_| DVector::zeros(dim), 1.0, 0.0).expect("zero drift is valid")
    }

    pub fn constant(v: DVector<f64>) -> Self {
        let sup = v.norm();
        Self::new(v.len(), move |_| v.clone(), 1.0, sup).expect("constant drift is valid")
    }

    /// Declared `‖f‖_θ`.
    pub fn with_holder_constant(mut self, c: f64) -> Self {
        self.holder = c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        (self.f)(x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn holder_constant(&self) -> f64 {
        self.holder
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    /// `f - ½ Dσσ` (contracted): the drift that makes an Itô-lift solve
    /// agree with a geometric-lift solve of `f`.
    pub fn minus_ito_shift(&self, sigma: &VectorField) -> Drift {
        let (f, s) = (self.f.clone(), sigma.clone());
        Drift {
            dim: self.dim,
            f: Arc::new(move |x| f(x) - s.ito_shift(x)),
            theta: self.theta,
            holder: f64::NAN,
            sup: f64::NAN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RdeProblem {
    x0: DVector<f64>,
    drift: Drift,
    sigma: VectorField,
    noise: Arc<RoughPath>,
}

impl RdeProblem {
    /// Checks dimensions, ellipticity of `σ(x₀)` along the axes and
    /// `|f(x₀)| ≤ ‖f‖_∞`.
    pub fn new(
        x0: DVector<f64>,
        drift: Drift,
        sigma: VectorField,
        noise: Arc<RoughPath>,
    ) -> Result<Self> {
        let d = x0.len();
        if drift.dim() != d || sigma.dim() != d || noise.dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "x0 has dimension {d}, drift {}, sigma {}, noise {}",
                drift.dim(),
                sigma.dim(),
                noise.dim()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(0));
        }
        let s = sigma.sigma(x0.as_slice());
        for k in 0..d {
            if s[(k, k)] < sigma.lambda() * (1.0 - 1e-12) {
                return Err(Error::Assumption(format!(
                    "σ(x0) fails ellipticity along axis {k}: {} < {}",
                    s[(k, k)],
                    sigma.lambda()
                )));
            }
        }
        let f0 = drift.eval(x0.as_slice()).norm();
        if drift.sup().is_finite() && f0 > drift.sup() * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::Assumption(format!(
                "|f(x0)| = {f0} exceeds the declared bound {}",
                drift.sup()
            )));
        }
        Ok(Self {
            x0,
            drift,
            sigma,
            noise,
        })
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn sigma(&self) -> &VectorField {
        &self.sigma
    }

    pub fn noise(&self) -> &Arc<RoughPath> {
        &self.noise
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn horizon(&self) -> f64 {
        self.noise.grid().horizon()
    }

    pub fn with_noise(&self, noise: Arc<RoughPath>) -> Result<Self> {
        Self::new(
            self.x0.clone(),
            self.drift.clone(),
            self.sigma.clone(),
            noise,
        )
    }

    pub fn with_drift(&self, drift: Drift) -> Result<Self> {
        Self::new(
            self.x0.clone(),
            drift,
            self.sigma.clone(),
            self.noise.clone(),
        )
    }

    /// Same problem on `[0, t_steps]`.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        self.with_noise(Arc::new(self.noise.prefix(steps)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Euler,
    Picard,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Picard => "picard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Picard iterations (0 for Euler).
    pub iterations: usize,
    /// Last sup-norm change between iterates (0 for Euler).
    pub residual: f64,
    pub damped: bool,
    pub max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct RdeSolution {
    path: GridPath,
    derivative: Vec<DMatrix<f64>>,
    solver: SolverKind,
    diagnostics: Diagnostics,
}

impl RdeSolution {
    fn from_path(
        path: GridPath,
        sigma: &VectorField,
        solver: SolverKind,
        mut diagnostics: Diagnostics,
    ) -> Self {
        let derivative = (0..=path.steps())
            .map(|i| sigma.sigma(path.value(i)))
            .collect();
        diagnostics.max_abs = (0..=path.steps())
            .map(|i| path.vector(i).norm())
            .fold(0.0, f64::max);
        Self {
            path,
            derivative,
            solver,
            diagnostics,
        }
    }

    pub fn path(&self) -> &GridPath {
        &self.path
    }

    /// `X'_t = σ(X_t)`.
    pub fn derivative(&self) -> &[DMatrix<f64>] {
        &self.derivative
    }

    pub fn solver(&self) -> SolverKind {
        self.solver
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn final_value(&self) -> DVector<f64> {
        self.path.vector(self.path.steps())
    }

    /// `(X, σ(X))` as a path controlled by the noise.
    pub fn to_controlled(&self, prob: &RdeProblem) -> Result<ControlledPath> {
        ControlledPath::new(
            prob.noise.clone(),
            self.path.clone(),
            self.derivative.clone(),
            prob.noise.alpha(),
        )
    }
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r)
        .flat_map(|a| (0..c).map(move |b| (a, b)))
        .map(|(a, b)| m[(a, b)])
        .collect()
}

/// `x + f(x)h + σ(x)ΔB + (Dσσ)(x):Δ𝔹`, where the contraction pairs
/// `(Dσσ)[(a, b), c]` with `Δ𝔹^{cb}`.
pub fn euler_davie_step(
    x: &DVector<f64>,
    drift: &Drift,
    sigma: &VectorField,
    dw: &DVector<f64>,
    area: &DMatrix<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let d = x.len();
    if dw.len() != d || area.shape() != (d, d) {
        return Err(Error::ShapeMismatch(
            "increment shapes do not match the state".into(),
        ));
    }
    let xs = x.as_slice();
    let s = flatten(&sigma.sigma(xs));
    let rough = compensated_term(&s, &sigma.dsigma_sigma(xs), dw, area, d);
    let next = x + drift.eval(xs) * h + rough;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    Ok(next)
}

fn guard(step: usize, x: &DVector<f64>) -> Result<()> {
    let magnitude = x.norm();
    if !magnitude.is_finite() || magnitude > BLOW_UP {
        return Err(Error::BlowUp { step, magnitude });
    }
    Ok(())
}

pub fn solve_euler(prob: &RdeProblem) -> Result<RdeSolution> {
    let noise = &prob.noise;
    let base = noise.base();
    let n = noise.steps();
    let h = noise.grid().step();
    let mut x = prob.x0.clone();
    let mut values = Vec::with_capacity((n + 1) * x.len());
    values.extend(x.iter());
    for k in 0..n {
        let dw = base.increment_unchecked(k, k + 1);
        x = match euler_davie_step(&x, &prob.drift, &prob.sigma, &dw, noise.level2(k), h) {
            Ok(next) => next,
            Err(Error::NonFinite(_)) => {
                return Err(Error::BlowUp {
                    step: k + 1,
                    magnitude: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        guard(k + 1, &x)?;
        values.extend(x.iter());
    }
    let path = GridPath::new(*noise.grid(), x.len(), values)?;
    Ok(RdeSolution::from_path(
        path,
        &prob.sigma,
        SolverKind::Euler,
        Diagnostics {
            iterations: 0,
            residual: 0.0,
            damped: false,
            max_abs: 0.0,
        },
    ))
}

/// `κ(x₀) = (x₀ + σ(x₀)B_{0,·}, σ(x₀))`.
pub fn kappa(prob: &RdeProblem) -> Result<ControlledPath> {
    let s0 = prob.sigma.sigma(prob.x0.as_slice());
    let base = prob.noise.base();
    let values = base.map(prob.dim(), |w| {
        let b = DVector::from_column_slice(w) - base.vector(0);
        (&prob.x0 + &s0 * b).iter().copied().collect()
    })?;
    ControlledPath::new(
        prob.noise.clone(),
        values,
        vec![s0; base.steps() + 1],
        prob.noise.alpha(),
    )
}

fn drift_integral(prob: &RdeProblem, values: &GridPath) -> Vec<DVector<f64>> {
    let h = values.grid().step();
    let fs: Vec<DVector<f64>> = (0..=values.steps())
        .map(|i| prob.drift.eval(values.value(i)))
        .collect();
    let mut acc = DVector::zeros(prob.dim());
    let mut out = Vec::with_capacity(fs.len());
    out.push(acc.clone());
    for w in fs.windows(2) {
        acc += (&w[0] + &w[1]) * (0.5 * h);
        out.push(acc.clone());
    }
    out
}

/// `Ψ(Y, Y')`: trapezoid drift, compensated rough integral of `σ(Y)`, and
/// derivative `σ(Y_t)`.
pub fn apply_psi(cp: &ControlledPath, prob: &RdeProblem) -> Result<ControlledPath> {
    if cp.reference().base() != prob.noise.base() || cp.dim() != prob.dim() {
        return Err(Error::ShapeMismatch(
            "controlled path is not driven by the problem's noise".into(),
        ));
    }
    let drift = drift_integral(prob, cp.values());
    let sigma_y = compose_smooth(&prob.sigma.field().as_map(), cp)?;
    let rough = rough_integral_path(&sigma_y, &prob.noise)?;
    let n = cp.steps();
    let d = prob.dim();
    let mut values = Vec::with_capacity((n + 1) * d);
    for (i, di) in drift.iter().enumerate() {
        let x = &prob.x0 + di + rough.vector(i);
        values.extend(x.iter());
    }
    let values = GridPath::new(*cp.values().grid(), d, values)?;
    let derivative = (0..=n)
        .map(|i| prob.sigma.sigma(cp.values().value(i)))
        .collect();
    ControlledPath::new(prob.noise.clone(), values, derivative, cp.alpha())
}

fn blend(a: &ControlledPath, b: &ControlledPath, weight: f64) -> Result<ControlledPath> {
    let values: Vec<f64> = a
        .values()
        .values()
        .iter()
        .zip(b.values().values())
        .map(|(x, y)| (1.0 - weight) * x + weight * y)
        .collect();
    let derivative = a
        .derivative()
        .iter()
        .zip(b.derivative())
        .map(|(x, y)| x * (1.0 - weight) + y * weight)
        .collect();
    ControlledPath::new(
        b.reference().clone(),
        GridPath::new(*a.values().grid(), a.dim(), values)?,
        derivative,
        a.alpha(),
    )
}

/// Picard iteration from `κ(x₀)`.
pub fn solve_picard(prob: &RdeProblem, tol: f64, max_iter: usize) -> Result<RdeSolution> {
    solve_picard_from(prob, kappa(prob)?, tol, max_iter)
}

/// Picard iteration from a given starting path. Once the change between
/// iterates grows instead of shrinking, updates are damped by `½`.
pub fn solve_picard_from(
    prob: &RdeProblem,
    init: ControlledPath,
    tol: f64,
    max_iter: usize,
) -> Result<RdeSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("{tol} must be positive"),
        });
    }
    let mut y = init;
    let mut previous = f64::INFINITY;
    let mut damped = false;
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let next = apply_psi(&y, prob)?;
        for i in 0..=next.steps() {
            guard(i, &next.values().vector(i))?;
        }
        residual = next.values().sup_distance(y.values())?;
        if residual < tol {
            return Ok(RdeSolution::from_path(
                next.values().clone(),
                &prob.sigma,
                SolverKind::Picard,
                Diagnostics {
                    iterations: iteration,
                    residual,
                    damped,
                    max_abs: 0.0,
                },
            ));
        }
        if residual > previous {
            damped = true;
        }
        previous = residual;
        y = if damped { blend(&y, &next, 0.5)? } else { next };
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Elements of the ball `K = {(Y, Y') : Y₀ = x₀, Y'₀ = σ(x₀), ‖(Y, Y')‖_{B,γ} ≤ 1}`,
/// built as `κ(x₀)` plus smooth perturbations scaled to norms in `[½, 1]`.
/// Odd-indexed elements also perturb `Y'`.
pub fn ball_elements(
    prob: &RdeProblem,
    gamma: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ControlledPath>> {
    let k0 = kappa(prob)?;
    let grid = *k0.values().grid();
    let horizon = grid.horizon();
    let d = prob.dim();
    let n = grid.steps();
    let mut out = Vec::with_capacity(count);
    for e in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(e as u64);
        let modes = 3;
        let coeff_g: Vec<f64> = (0..d * modes)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let coeff_h: Vec<f64> = (0..d * d * modes)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let radius = if e + 1 == count {
            1.0
        } else {
            rng.random_range(0.5..1.0)
        };
        let wave = |j: usize, t: f64| (std::f64::consts::PI * (j + 1) as f64 * t / horizon).sin();
        let g = |t: f64| {
            DVector::from_fn(d, |a, _| {
                (0..modes)
                    .map(|j| coeff_g[a * modes + j] * wave(j, t))
                    .sum::<f64>()
            })
        };
        let hmat = |t: f64| {
            if e % 2 == 0 {
                DMatrix::zeros(d, d)
            } else {
                DMatrix::from_fn(d, d, |a, b| {
                    (0..modes)
                        .map(|j| coeff_h[(a * d + b) * modes + j] * wave(j, t))
                        .sum::<f64>()
                })
            }
        };
        // the perturbation alone has remainder g_{s,t} - h_s B_{s,t}, and its
        // controlled norm scales linearly
        let pert_values = GridPath::from_fn(grid, d, |t| g(t).iter().copied().collect())?;
        let pert_der: Vec<DMatrix<f64>> = (0..=n).map(|i| hmat(grid.point(i))).collect();
        let pert = ControlledPath::new(prob.noise.clone(), pert_values, pert_der.clone(), gamma)?;
        let norm = controlled_norm_at(&pert, gamma)?.total;
        let scale = if norm > 0.0 { radius / norm } else { 0.0 };
        let values: Vec<f64> = k0
            .values()
            .values()
            .iter()
            .zip(pert.values().values())
            .map(|(a, b)| a + scale * b)
            .collect();
        let derivative = k0
            .derivative()
            .iter()
            .zip(&pert_der)
            .map(|(a, b)| a + b * scale)
            .collect();
        out.push(ControlledPath::new(
            prob.noise.clone(),
            GridPath::new(grid, d, values)?,
            derivative,
            gamma,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallReport {
    pub horizon: f64,
    /// `‖(Y, Y')‖_{B,γ}` of each element.
    pub element_norms: Vec<f64>,
    /// `1 - ‖Ψ(Y, Y')‖_{B,γ}` per element.
    pub margins: Vec<f64>,
    pub worst_margin: f64,
    pub inside: bool,
}

fn validate_exponents(prob: &RdeProblem, beta: f64, gamma: f64) -> Result<()> {
    let alpha = prob.noise.alpha();
    if !(1.0 / 3.0 < beta && beta < gamma && gamma < alpha) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("need 1/3 < beta ({beta}) < gamma ({gamma}) < alpha ({alpha})"),
        });
    }
    Ok(())
}

fn ball_report(prob: &RdeProblem, elements: &[ControlledPath], gamma: f64) -> Result<BallReport> {
    let mut element_norms = Vec::with_capacity(elements.len());
    let mut margins = Vec::with_capacity(elements.len());
    for y in elements {
        element_norms.push(controlled_norm_at(y, gamma)?.total);
        let image = apply_psi(y, prob)?;
        margins.push(1.0 - controlled_norm_at(&image, gamma)?.total);
    }
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BallReport {
        horizon: prob.horizon(),
        element_norms,
        margins,
        worst_margin,
        inside: worst_margin > 0.0,
    })
}

/// Applies `Ψ` to `count` elements of `K` on the problem's horizon and
/// reports the worst margin `1 - ‖Ψ(Y)‖_{B,γ}`.
pub fn check_schauder_ball(
    prob: &RdeProblem,
    beta: f64,
    gamma: f64,
    count: usize,
    seed: u64,
) -> Result<BallReport> {
    validate_exponents(prob, beta, gamma)?;
    let elements = ball_elements(prob, gamma, count, seed)?;
    ball_report(prob, &elements, gamma)
}

/// [`check_schauder_ball`] on the horizon and on `halvings` successive
/// halvings of it, with the same elements restricted to each prefix.
pub fn schauder_margin_ladder(
    prob: &RdeProblem,
    beta: f64,
    gamma: f64,
    count: usize,
    seed: u64,
    halvings: usize,
) -> Result<Vec<BallReport>> {
    validate_exponents(prob, beta, gamma)?;
    let elements = ball_elements(prob, gamma, count, seed)?;
    let mut reports = vec![ball_report(prob, &elements, gamma)?];
    let mut steps = prob.noise.steps();
    for _ in 0..halvings {
        if !steps.is_multiple_of(2) || steps < 2 {
            return Err(Error::InvalidParameter {
                name: "halvings",
                reason: format!("{steps} steps cannot be halved"),
            });
        }
        steps /= 2;
        let sub = prob.prefix(steps)?;
        let restricted: Vec<ControlledPath> = elements
            .iter()
            .map(|y| {
                y.prefix(steps)
                    .and_then(|p| p.with_reference(sub.noise.clone()))
            })
            .collect::<Result<_>>()?;
        reports.push(ball_report(&sub, &restricted, gamma)?);
    }
    Ok(reports)
}

/// Level-2 lift of a solution:
/// `𝕏_{u,v} = ∫_u^v (X_r - X_u) ⊗ f(X_r) dr + ∫_u^v η(X) d𝐁 - X_u ⊗ ∫_u^v σ(X) d𝐁`
/// with `η(x)y = x ⊗ σ(x)y`, one interval at a time.
pub fn lift_solution(sol: &RdeSolution, prob: &RdeProblem) -> Result<RoughPath> {
    let noise = &prob.noise;
    let x = sol.path();
    if x.grid() != noise.grid() {
        return Err(Error::ShapeMismatch(
            "solution and noise live on different grids".into(),
        ));
    }
    let d = prob.dim();
    let h = noise.grid().step();
    let base = noise.base();
    let mut level2 = Vec::with_capacity(x.steps());
    for k in 0..x.steps() {
        let xu = x.value(k);
        let xd = x.increment_unchecked(k, k + 1);
        let fv = prob.drift.eval(x.value(k + 1));
        let s = prob.sigma.sigma(xu);
        let t = prob.sigma.dsigma_sigma(xu);
        let dw = base.increment_unchecked(k, k + 1);
        let area = noise.level2(k);

        // η(X_u) as a (d·d) × d integrand and its derivative
        let eta: Vec<f64> = (0..d)
            .flat_map(|p| (0..d).flat_map(move |q| (0..d).map(move |b| (p, q, b))))
            .map(|(p, q, b)| xu[p] * s[(q, b)])
            .collect();
        let eta_prime = DMatrix::from_fn(d * d * d, d, |row, c| {
            let (pq, b) = (row / d, row % d);
            let (p, q) = (pq / d, pq % d);
            s[(p, c)] * s[(q, b)] + xu[p] * t[(q * d + b, c)]
        });
        let eta_int = compensated_term(&eta, &eta_prime, &dw, area, d * d);
        let sigma_int = compensated_term(&flatten(&s), &t, &dw, area, d);
        let drift_part = (&xd * fv.transpose()) * (0.5 * h);
        let m = DMatrix::from_fn(d, d, |p, q| {
            drift_part[(p, q)] + eta_int[p * d + q] - xu[p] * sigma_int[q]
        });
        level2.push(m);
    }
    RoughPath::new(x.clone(), level2, noise.flavor(), noise.alpha())
}

/// Sup over grid times of the gap between `∫_0^t F(X) d𝐗` and
/// `∫_0^t F(X) f(X) dr + ∫_0^t F(X) σ(X) d𝐁`.
///
/// The drift integral uses the same rule as the solver that produced `sol`
/// (left point for Euler, trapezoid for Picard), so that `F ≡ I` telescopes.
pub fn check_rough_ito(f_field: &MatrixField, sol: &RdeSolution, prob: &RdeProblem) -> Result<f64> {
    let d = prob.dim();
    if f_field.dim() != d {
        return Err(Error::ShapeMismatch("F must take d columns".into()));
    }
    let lift = Arc::new(lift_solution(sol, prob)?);
    let x = sol.path();
    let n = x.steps();
    let rows = f_field.rows();
    let identity = DMatrix::identity(d, d);

    let lhs_values = x.map(rows * d, |xi| flatten(&f_field.value(xi)))?;
    let lhs_der = (0..=n)
        .map(|i| f_field.gubinelli(x.value(i), &identity))
        .collect();
    let lhs = ControlledPath::new(lift.clone(), lhs_values, lhs_der, lift.alpha())?;
    let lhs = rough_integral_path(&lhs, &lift)?;

    let fs = f_field.product(prob.sigma.field())?;
    let rhs_values = x.map(rows * d, |xi| flatten(&fs.value(xi)))?;
    let rhs_der = (0..=n)
        .map(|i| fs.gubinelli(x.value(i), &sol.derivative[i]))
        .collect();
    let rhs = ControlledPath::new(prob.noise.clone(), rhs_values, rhs_der, prob.noise.alpha())?;
    let rough = rough_integral_path(&rhs, &prob.noise)?;

    let h = x.grid().step();
    let integrand: Vec<DVector<f64>> = (0..=n)
        .map(|i| f_field.value(x.value(i)) * prob.drift.eval(x.value(i)))
        .collect();
    let mut drift = DVector::zeros(rows);
    let mut defect: f64 = 0.0;
    for i in 0..=n {
        if i > 0 {
            drift += match sol.solver {
                SolverKind::Euler => &integrand[i - 1] * h,
                SolverKind::Picard => (&integrand[i - 1] + &integrand[i]) * (0.5 * h),
            };
        }
        let gap = lhs.vector(i) - (&drift + rough.vector(i));
        defect = defect.max(gap.norm());
    }
    Ok(defect)
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type HessFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A scalar `G ∈ C³` with gradient and Hessian.
#[derive(Clone)]
pub struct Potential {
    dim: usize,
    value: ScalarFn,
    gradient: GradFn,
    hessian: HessFn,
}

impl Potential {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    pub fn scalar(
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dg: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            move |x| g(x[0]),
            move |x| DVector::from_element(1, dg(x[0])),
            move |x| DMatrix::from_element(1, 1, d2g(x[0])),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `|G(W_T) - G(W_0) - ∫_0^T DG(W) d𝐖|` for a geometric lift.
pub fn check_integration_by_parts(g: &Potential, rp: &Arc<RoughPath>) -> Result<f64> {
    if rp.flavor() != Flavor::Geometric {
        return Err(Error::Unsupported(
            "integration by parts needs a geometric lift".into(),
        ));
    }
    if g.dim != rp.dim() {
        return Err(Error::ShapeMismatch(
            "potential and path dimensions differ".into(),
        ));
    }
    let base = rp.base();
    let values = base.map(g.dim, |w| (g.gradient)(w).iter().copied().collect())?;
    let derivative = (0..=base.steps())
        .map(|i| (g.hessian)(base.value(i)))
        .collect();
    let cp = ControlledPath::new(rp.clone(), values, derivative, rp.alpha())?;
    let integral = rough_integral(&cp, rp, 0, rp.steps())?[0];
    let n = base.steps();
    Ok(((g.value)(base.value(n)) - (g.value)(base.value(0)) - integral).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{FbmParams, FbmSampler};
    use crate::grid_path::TimeGrid;
    use crate::numerics::fit_order;
    use crate::rough_lift::{check_chen, check_geometric, lift_ito, lift_piecewise_linear};

    fn bm_fine(steps: usize, dim: usize, horizon: f64, seed: u64) -> GridPath {
        let p = FbmParams::new(0.5, dim, TimeGrid::new(horizon, steps).unwrap(), seed)
            .with_oversample(1);
        FbmSampler::new(p).unwrap().sample(0)
    }

    fn geometric(fine: &GridPath, coarsen: usize) -> Arc<RoughPath> {
        Arc::new(lift_piecewise_linear(fine, coarsen, 0.45).unwrap())
    }

    fn two_plus_sin() -> VectorField {
        VectorField::scalar(|x| 2.0 + x.sin(), |x| x.cos(), 1.0, 3.0).unwrap()
    }

    fn linear_sigma() -> VectorField {
        // σ(x) = x: elliptic only near x₀ = 1, which is all the checks use
        VectorField::scalar(|x| x, |_| 1.0, 1.0, BLOW_UP).unwrap()
    }

    fn cos_drift() -> Drift {
        Drift::scalar(|x| x.cos(), 1.0, 1.0).unwrap()
    }

    fn one() -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    #[test]
    fn davie_step_examples() {
        let x = DVector::from_vec(vec![0.3, -1.0]);
        let dw = DVector::from_vec(vec![0.1, 0.2]);
        let area = DMatrix::from_row_slice(2, 2, &[0.005, 0.3, -0.2, 0.02]);
        let step = euler_davie_step(
            &x,
            &Drift::zero(2),
            &VectorField::identity(2),
            &dw,
            &area,
            0.01,
        )
        .unwrap();
        assert!((step - (&x + &dw)).amax() < 1e-16);

        let x = one() * 1.3;
        let dw = DVector::from_element(1, 0.4);
        let area = DMatrix::from_element(1, 1, 0.08);
        let step =
            euler_davie_step(&x, &Drift::zero(1), &linear_sigma(), &dw, &area, 0.01).unwrap();
        assert!((step[0] - 1.3 * (1.0 + 0.4 + 0.08)).abs() < 1e-15);

        let step = euler_davie_step(
            &x,
            &cos_drift(),
            &two_plus_sin(),
            &DVector::zeros(1),
            &DMatrix::zeros(1, 1),
            0.01,
        )
        .unwrap();
        assert!((step[0] - (1.3 + 0.01 * 1.3f64.cos())).abs() < 1e-16);

        let blow = Drift::scalar(|_| f64::INFINITY, 1.0, 1.0).unwrap();
        assert!(euler_davie_step(&x, &blow, &two_plus_sin(), &dw, &area, 0.01).is_err());
    }

    #[test]
    fn euler_closed_forms() {
        let fine = bm_fine(256, 1, 1.0, 1);
        let rp = geometric(&fine, 1);
        let prob = RdeProblem::new(
            one() * 0.5,
            Drift::zero(1),
            VectorField::identity(1),
            rp.clone(),
        )
        .unwrap();
        let sol = solve_euler(&prob).unwrap();
        for i in 0..=256 {
            assert!((sol.path().value(i)[0] - 0.5 - fine.value(i)[0]).abs() < 1e-13);
        }
        let prob = prob.with_drift(Drift::constant(one() * 0.7)).unwrap();
        let sol = solve_euler(&prob).unwrap();
        for i in 0..=256 {
            let expected = 0.5 + 0.7 * rp.grid().point(i) + fine.value(i)[0];
            assert!((sol.path().value(i)[0] - expected).abs() < 1e-13);
        }
        assert_eq!(sol.path().value(0), &[0.5]);
    }

    #[test]
    fn euler_matches_stratonovich_exponential() {
        let fine = bm_fine(4096, 1, 1.0, 2);
        for n in [256usize, 1024, 4096] {
            let rp = geometric(&fine, 4096 / n);
            let prob = RdeProblem::new(one(), Drift::zero(1), linear_sigma(), rp).unwrap();
            let sol = solve_euler(&prob).unwrap();
            let exact = fine.value(4096)[0].exp();
            let rel = (sol.final_value()[0] / exact - 1.0).abs();
            assert!(rel <= 10.0 * (n as f64).powf(-0.9), "n = {n}: {rel}");
            for (i, d) in sol.derivative().iter().enumerate() {
                assert_eq!(d[(0, 0)], sol.path().value(i)[0]);
            }
        }
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let flat = GridPath::new(grid, 1, vec![0.0; 5]).unwrap();
        let rp = Arc::new(
            RoughPath::new(flat, vec![DMatrix::zeros(1, 1); 4], Flavor::Geometric, 0.45).unwrap(),
        );
        let huge = Drift::scalar(|_| 1e9, 1.0, 1e9).unwrap();
        let prob = RdeProblem::new(one(), huge, VectorField::identity(1), rp).unwrap();
        assert!(matches!(
            solve_euler(&prob),
            Err(Error::BlowUp { step: 1, .. })
        ));
    }

    #[test]
    fn psi_examples() {
        let rp = geometric(&bm_fine(128, 1, 1.0, 3), 1);
        let prob = RdeProblem::new(
            one() * 0.2,
            Drift::zero(1),
            VectorField::identity(1),
            rp.clone(),
        )
        .unwrap();
        let other = ControlledPath::new(
            rp.clone(),
            rp.base().map(1, |w| vec![w[0].sin() + 0.2]).unwrap(),
            (0..=128)
                .map(|i| DMatrix::from_element(1, 1, rp.base().value(i)[0].cos()))
                .collect(),
            0.45,
        )
        .unwrap();
        let image = apply_psi(&other, &prob).unwrap();
        for i in 0..=128 {
            assert!((image.values().value(i)[0] - 0.2 - rp.base().value(i)[0]).abs() < 1e-13);
        }
        let prob = RdeProblem::new(one() * 0.2, cos_drift(), two_plus_sin(), rp).unwrap();
        let image = apply_psi(&kappa(&prob).unwrap(), &prob).unwrap();
        assert_eq!(image.values().value(0), &[0.2]);
        assert!((image.derivative()[0][(0, 0)] - (2.0 + 0.2f64.sin())).abs() < 1e-15);
    }

    #[test]
    fn picard_examples() {
        let rp = geometric(&bm_fine(512, 1, 1.0, 4), 1);
        let trivial =
            RdeProblem::new(one(), Drift::zero(1), VectorField::identity(1), rp.clone()).unwrap();
        assert_eq!(
            solve_picard(&trivial, 1e-10, 50)
                .unwrap()
                .diagnostics()
                .iterations,
            1
        );

        let prob = RdeProblem::new(one() * 0.3, cos_drift(), two_plus_sin(), rp.clone()).unwrap();
        let sol = solve_picard(&prob, 1e-10, 200).unwrap();
        assert!(
            sol.diagnostics().iterations <= 30,
            "{:?}",
            sol.diagnostics()
        );
        for (i, d) in sol.derivative().iter().enumerate() {
            assert!((d[(0, 0)] - (2.0 + sol.path().value(i)[0].sin())).abs() <= 1e-14);
        }
        let euler = solve_euler(&prob).unwrap();
        let gap = sol.path().sup_distance(euler.path()).unwrap();
        assert!(gap < 0.05, "{gap}");
        assert!(matches!(
            solve_picard(&prob, 1e-10, 2),
            Err(Error::NotConverged { iterations: 2, .. })
        ));
        assert!(solve_picard(&prob, 0.0, 10).is_err());
    }

    #[test]
    fn solvers_converge_together() {
        let fine = bm_fine(4096, 1, 1.0, 5);
        let mut scales = Vec::new();
        let mut gaps = Vec::new();
        for n in [256usize, 512, 1024, 2048] {
            let prob = RdeProblem::new(
                one() * 0.3,
                cos_drift(),
                two_plus_sin(),
                geometric(&fine, 4096 / n),
            )
            .unwrap();
            let e = solve_euler(&prob).unwrap();
            let p = solve_picard(&prob, 1e-12, 300).unwrap();
            scales.push(1.0 / n as f64);
            gaps.push(e.path().sup_distance(p.path()).unwrap());
        }
        assert!(
            fit_order(&scales, &gaps).unwrap().at_least(0.9 - 0.25),
            "{gaps:?}"
        );
    }

    #[test]
    fn ito_lift_matches_shifted_drift() {
        let rp = geometric(&bm_fine(512, 1, 1.0, 6), 1);
        let ito = Arc::new(lift_ito(&rp, 0.5).unwrap());
        let sigma = two_plus_sin();
        let a = RdeProblem::new(one() * 0.1, cos_drift(), sigma.clone(), ito).unwrap();
        let b =
            RdeProblem::new(one() * 0.1, cos_drift().minus_ito_shift(&sigma), sigma, rp).unwrap();
        let gap = solve_euler(&a)
            .unwrap()
            .path()
            .sup_distance(solve_euler(&b).unwrap().path())
            .unwrap();
        assert!(gap < 1e-12, "{gap}");
    }

    #[test]
    fn ito_shift_two_dimensional() {
        let rp = geometric(&bm_fine(256, 2, 1.0, 7), 4);
        let ito = Arc::new(lift_ito(&rp, 0.5).unwrap());
        let sigma = VectorField::new(
            MatrixField::new(
                2,
                2,
                |x| {
                    DMatrix::from_row_slice(
                        2,
                        2,
                        &[2.0 + x[0].sin(), 0.3 * x[1].cos(), 0.0, 2.0 + x[1].cos()],
                    )
                },
                |x| {
                    vec![
                        DMatrix::from_row_slice(2, 2, &[x[0].cos(), 0.0, 0.0, 0.0]),
                        DMatrix::from_row_slice(2, 2, &[0.0, -0.3 * x[1].sin(), 0.0, -x[1].sin()]),
                    ]
                },
            ),
            0.8,
            3.5,
        )
        .unwrap();
        let f = Drift::new(
            2,
            |x| DVector::from_vec(vec![x[1].cos(), -x[0].sin()]),
            1.0,
            2f64.sqrt(),
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.2, -0.4]);
        let a = RdeProblem::new(x0.clone(), f.clone(), sigma.clone(), ito).unwrap();
        let b = RdeProblem::new(x0, f.minus_ito_shift(&sigma), sigma, rp).unwrap();
        let gap = solve_euler(&a)
            .unwrap()
            .path()
            .sup_distance(solve_euler(&b).unwrap().path())
            .unwrap();
        assert!(gap < 1e-12, "{gap}");
    }

    #[test]
    fn lift_solution_examples() {
        let fine = bm_fine(64, 2, 1.0, 8);
        let rp = geometric(&fine, 1);
        let prob = RdeProblem::new(
            DVector::from_vec(vec![0.5, -0.5]),
            Drift::zero(2),
            VectorField::identity(2),
            rp.clone(),
        )
        .unwrap();
        let lift = lift_solution(&solve_euler(&prob).unwrap(), &prob).unwrap();
        for k in 0..64 {
            assert!((lift.level2(k) - rp.level2(k)).amax() < 1e-14);
        }

        let fine = bm_fine(2048, 1, 1.0, 9);
        let mut scales = Vec::new();
        let mut defects = Vec::new();
        for n in [128usize, 256, 512, 1024] {
            let prob = RdeProblem::new(
                one() * 0.3,
                cos_drift(),
                two_plus_sin(),
                geometric(&fine, 2048 / n),
            )
            .unwrap();
            let lift = lift_solution(&solve_euler(&prob).unwrap(), &prob).unwrap();
            assert!(check_chen(&lift, 1000, 1).residual <= 1e-10);
            scales.push(1.0 / n as f64);
            defects.push(check_geometric(&lift).defect);
        }
        assert!(
            fit_order(&scales, &defects).unwrap().order() > 0.0,
            "{defects:?}"
        );
    }

    #[test]
    fn rough_ito_examples() {
        let rp = geometric(&bm_fine(256, 1, 1.0, 10), 1);
        let prob = RdeProblem::new(one() * 0.3, cos_drift(), two_plus_sin(), rp).unwrap();
        for sol in [
            solve_euler(&prob).unwrap(),
            solve_picard(&prob, 1e-12, 200).unwrap(),
        ] {
            assert!(check_rough_ito(&MatrixField::identity(1), &sol, &prob).unwrap() <= 1e-10);
        }
        let sol = solve_euler(&prob).unwrap();
        let a =
            check_rough_ito(&MatrixField::scalar(|x| x.sin(), |x| x.cos()), &sol, &prob).unwrap();
        let b = check_rough_ito(
            &MatrixField::scalar(|x| 3.0 * x.sin(), |x| 3.0 * x.cos()),
            &sol,
            &prob,
        )
        .unwrap();
        assert!((b / a - 3.0).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn rough_ito_for_inverse_sigma_decays() {
        let fine = bm_fine(4096, 1, 1.0, 11);
        let sigma = two_plus_sin();
        let mut scales = Vec::new();
        let mut defects = Vec::new();
        for n in [256usize, 512, 1024, 2048, 4096] {
            let prob = RdeProblem::new(
                one() * 0.3,
                cos_drift(),
                sigma.clone(),
                geometric(&fine, 4096 / n),
            )
            .unwrap();
            let sol = solve_euler(&prob).unwrap();
            scales.push(1.0 / n as f64);
            defects.push(check_rough_ito(&sigma.inverse_field(), &sol, &prob).unwrap());
        }
        assert!(
            fit_order(&scales, &defects).unwrap().at_least(0.45 - 0.25),
            "{defects:?}"
        );
    }

    #[test]
    fn integration_by_parts_examples() {
        let rp = geometric(&bm_fine(512, 2, 1.0, 12), 4);
        let linear = Potential::new(
            2,
            |x| 2.0 * x[0] - 0.5 * x[1] + 1.0,
            |_| DVector::from_vec(vec![2.0, -0.5]),
            |_| DMatrix::zeros(2, 2),
        );
        assert!(check_integration_by_parts(&linear, &rp).unwrap() <= 1e-12);

        let rp = geometric(&bm_fine(512, 1, 1.0, 13), 1);
        let square = Potential::scalar(|x| x * x, |x| 2.0 * x, |_| 2.0);
        assert!(check_integration_by_parts(&square, &rp).unwrap() <= 1e-10);

        let ito = Arc::new(lift_ito(&rp, 0.5).unwrap());
        assert!(check_integration_by_parts(&square, &ito).is_err());
    }

    #[test]
    fn schauder_examples() {
        let fine = bm_fine(512, 1, 0.05, 14);
        let rp = geometric(&fine, 1);
        let sigma =
            VectorField::scalar(|x| 1.0 + 0.1 * x.sin(), |x| 0.1 * x.cos(), 0.9, 1.1).unwrap();
        let f = Drift::scalar(|x| 0.5 * x.cos(), 1.0, 0.5).unwrap();
        let prob = RdeProblem::new(one() * 0.2, f, sigma, rp.clone()).unwrap();

        let k = kappa(&prob).unwrap();
        assert!(controlled_norm_at(&k, 0.4).unwrap().total < 1e-12);
        let margin = 1.0
            - controlled_norm_at(&apply_psi(&k, &prob).unwrap(), 0.4)
                .unwrap()
                .total;
        assert!(margin > 0.0, "{margin}");

        let ladder = schauder_margin_ladder(&prob, 0.35, 0.4, 6, 7, 2).unwrap();
        assert!(ladder[0]
            .element_norms
            .iter()
            .all(|n| (0.5 - 1e-9..=1.0 + 1e-9).contains(n)));
        for r in &ladder {
            assert!(r.element_norms.iter().all(|n| *n <= 1.0 + 1e-9), "{r:?}");
        }
        for w in ladder.windows(2) {
            assert!(w[1].worst_margin >= w[0].worst_margin - 1e-12);
        }
        assert!(check_schauder_ball(&prob, 0.4, 0.35, 2, 1).is_err());

        let trivial = RdeProblem::new(one(), Drift::zero(1), VectorField::identity(1), rp).unwrap();
        let elems = ball_elements(&trivial, 0.4, 3, 9).unwrap();
        for y in &elems {
            let image = apply_psi(y, &trivial).unwrap();
            assert_eq!(controlled_norm_at(&image, 0.4).unwrap().gubinelli, 0.0);
        }
    }
}
