//! The map `G` with `DG = σ⁻¹`, which turns `dX = f dt + σ(X) d𝐁` into
//! `dZ = f̃(Z) dt + dB`.
//!
//! `G(z)` is the line integral of `σ⁻¹` along the axis polyline
//! `0 → (z₁, 0, …) → (z₁, z₂, 0, …) → z`. Path independence is checked
//! before anything is built.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::controlled::FnMap;
use crate::error::{Error, Result};
use crate::grid_path::GridPath;
use crate::numerics::{adaptive_simpson_vec, trapezoid};
use crate::rde::{solve_euler, Drift, RdeProblem, RdeSolution, SolverKind};
use crate::rough_lift::Flavor;

type MatFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type PartialsFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;

/// A smooth map `x ∈ R^d ↦ M(x) ∈ R^{rows × d}` with its partial
/// derivatives `∂_k M`.
#[derive(Clone)]
pub struct MatrixField {
    rows: usize,
    dim: usize,
    value: MatFn,
    partials: PartialsFn,
}

impl std::fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MatrixField({}x{})", self.rows, self.dim)
    }
}

impl MatrixField {
    pub fn new(
        rows: usize,
        dim: usize,
        value: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        partials: impl Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            rows,
            dim,
            value: Arc::new(value),
            partials: Arc::new(partials),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let (rows, dim) = m.shape();
        let zero = DMatrix::zeros(rows, dim);
        Self::new(
            rows,
            dim,
            move |_| m.clone(),
            move |_| vec![zero.clone(); dim],
        )
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim))
    }

    /// Scalar `x ↦ s(x)` with derivative `ds`.
    pub fn scalar(
        s: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ds: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            1,
            move |x| DMatrix::from_element(1, 1, s(x[0])),
            move |x| vec![DMatrix::from_element(1, 1, ds(x[0]))],
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        (self.value)(x)
    }

    pub fn partials(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        (self.partials)(x)
    }

    /// Pointwise product `M · N` with the product rule.
    pub fn product(&self, other: &MatrixField) -> Result<MatrixField> {
        if other.rows != self.dim || other.dim != self.dim {
            return Err(Error::ShapeMismatch(
                "product of incompatible matrix fields".into(),
            ));
        }
        let (a, b) = (self.clone(), other.clone());
        let (a2, b2) = (self.clone(), other.clone());
        Ok(MatrixField::new(
            self.rows,
            other.dim,
            move |x| a.value(x) * b.value(x),
            move |x| {
                let (ma, mb) = (a2.value(x), b2.value(x));
                a2.partials(x)
                    .iter()
                    .zip(b2.partials(x))
                    .map(|(da, db)| da * &mb + &ma * db)
                    .collect()
            },
        ))
    }

    /// `x ↦ vec M(x)` (row-major) as a [`FnMap`], the form taken by
    /// controlled-path composition.
    pub fn as_map(&self) -> FnMap {
        let (rows, dim) = (self.rows, self.dim);
        let (v, p) = (self.value.clone(), self.partials.clone());
        FnMap::new(
            dim,
            rows * dim,
            move |x| {
                let m = v(x);
                DVector::from_iterator(
                    rows * dim,
                    (0..rows)
                        .flat_map(|a| (0..dim).map(move |b| (a, b)))
                        .map(|(a, b)| m[(a, b)]),
                )
            },
            move |x| {
                let parts = p(x);
                DMatrix::from_fn(rows * dim, dim, |ab, k| parts[k][(ab / dim, ab % dim)])
            },
        )
    }

    /// Gubinelli derivative of `M(X)` when `X' = xprime` (`d × e`):
    /// entry `[(a, b), c] = Σ_k ∂_k M^{ab} xprime^{kc}`.
    pub fn gubinelli(&self, x: &[f64], xprime: &DMatrix<f64>) -> DMatrix<f64> {
        let parts = self.partials(x);
        let (rows, dim) = (self.rows, self.dim);
        DMatrix::from_fn(rows * dim, xprime.ncols(), |ab, c| {
            let (a, b) = (ab / dim, ab % dim);
            (0..dim).map(|k| parts[k][(a, b)] * xprime[(k, c)]).sum()
        })
    }
}

/// Diffusion coefficient `σ: R^d → R^{d×d}` with its ellipticity constant
/// and sup-norm bounds.
#[derive(Clone, Debug)]
pub struct VectorField {
    sigma: MatrixField,
    lambda: f64,
    sup_sigma: f64,
    sup_dsigma: f64,
    sup_d2sigma: f64,
}

impl VectorField {
    /// `lambda` is the ellipticity constant and `sup_sigma` a bound on the
    /// operator norm of `σ`.
    pub fn new(sigma: MatrixField, lambda: f64, sup_sigma: f64) -> Result<Self> {
        if sigma.rows != sigma.dim {
            return Err(Error::ShapeMismatch("σ must be square".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("ellipticity constant {lambda} must be positive"),
            });
        }
        if !(sup_sigma.is_finite() && sup_sigma >= lambda) {
            return Err(Error::InvalidParameter {
                name: "sup_sigma",
                reason: format!("{sup_sigma} must be finite and at least lambda"),
            });
        }
        Ok(Self {
            sigma,
            lambda,
            sup_sigma,
            sup_dsigma: f64::NAN,
            sup_d2sigma: f64::NAN,
        })
    }

    /// Declared bounds on `‖Dσ‖_∞` and `‖D²σ‖_∞` (diagnostic only).
    pub fn with_derivative_bounds(mut self, sup_dsigma: f64, sup_d2sigma: f64) -> Self {
        self.sup_dsigma = sup_dsigma;
        self.sup_d2sigma = sup_d2sigma;
        self
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(MatrixField::identity(dim), 1.0, 1.0)
            .expect("identity is elliptic")
            .with_derivative_bounds(0.0, 0.0)
    }

    pub fn constant(m: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let sup = m.clone().svd(false, false).singular_values.max();
        Ok(Self::new(MatrixField::constant(m), lambda, sup)?.with_derivative_bounds(0.0, 0.0))
    }

    /// Scalar `σ = s` with `λ = inf s` and `‖σ‖_∞ = sup |s|`.
    pub fn scalar(
        s: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ds: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lambda: f64,
        sup_sigma: f64,
    ) -> Result<Self> {
        Self::new(MatrixField::scalar(s, ds), lambda, sup_sigma)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sup_sigma(&self) -> f64 {
        self.sup_sigma
    }

    pub fn sup_dsigma(&self) -> f64 {
        self.sup_dsigma
    }

    pub fn sup_d2sigma(&self) -> f64 {
        self.sup_d2sigma
    }

    pub fn field(&self) -> &MatrixField {
        &self.sigma
    }

    pub fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        self.sigma.value(x)
    }

    /// `∂_k σ`, one matrix per coordinate.
    pub fn dsigma(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        self.sigma.partials(x)
    }

    pub fn inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.sigma(x).try_inverse().ok_or(Error::Singular)
    }

    /// `(Dσ σ)(x)` laid out as `[(a, b), c] = Σ_k ∂_k σ^{ab} σ^{kc}`.
    pub fn dsigma_sigma(&self, x: &[f64]) -> DMatrix<f64> {
        self.sigma.gubinelli(x, &self.sigma(x))
    }

    /// `½ Σ_b (Dσ σ)[(a, b), b]`: the drift shift between Itô and
    /// Stratonovich readings of `σ(X) dB`.
    pub fn ito_shift(&self, x: &[f64]) -> DVector<f64> {
        let d = self.dim();
        let t = self.dsigma_sigma(x);
        DVector::from_fn(d, |a, _| {
            0.5 * (0..d).map(|b| t[(a * d + b, b)]).sum::<f64>()
        })
    }

    /// `σ⁻¹` as a matrix field, with `∂_k σ⁻¹ = -σ⁻¹ (∂_k σ) σ⁻¹`.
    pub fn inverse_field(&self) -> MatrixField {
        let (a, b) = (self.clone(), self.clone());
        let d = self.dim();
        MatrixField::new(
            d,
            d,
            move |x| {
                a.inverse(x)
                    .unwrap_or_else(|_| DMatrix::from_element(d, d, f64::NAN))
            },
            move |x| match b.inverse(x) {
                Ok(inv) => b.dsigma(x).iter().map(|ds| -(&inv * ds * &inv)).collect(),
                Err(_) => vec![DMatrix::from_element(d, d, f64::NAN); d],
            },
        )
    }
}

/// A point and a direction at which `vᵀσ(x)v / ‖v‖²` is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub point: DVector<f64>,
    pub direction: DVector<f64>,
}

/// Uniform lattice on `[-radius, radius]^d` with `per_axis` points per axis;
/// directions are the axes and the pairwise diagonals `(e_k ± e_l)/√2`.
pub fn lattice_probes(dim: usize, radius: f64, per_axis: usize) -> Vec<Probe> {
    let per_axis = per_axis.max(2);
    let mut directions = Vec::new();
    for k in 0..dim {
        directions.push(DVector::from_fn(dim, |i, _| if i == k { 1.0 } else { 0.0 }));
        for l in k + 1..dim {
            for sign in [1.0, -1.0] {
                directions.push(DVector::from_fn(dim, |i, _| {
                    std::f64::consts::FRAC_1_SQRT_2
                        * if i == k {
                            1.0
                        } else if i == l {
                            sign
                        } else {
                            0.0
                        }
                }));
            }
        }
    }
    let total = per_axis.pow(dim as u32);
    let mut probes = Vec::with_capacity(total * directions.len());
    for idx in 0..total {
        let mut rest = idx;
        let point = DVector::from_fn(dim, |_, _| {
            let k = rest % per_axis;
            rest /= per_axis;
            -radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64
        });
        for v in &directions {
            probes.push(Probe {
                point: point.clone(),
                direction: v.clone(),
            });
        }
    }
    probes
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityReport {
    /// Smallest signed quotient `vᵀσ(x)v / ‖v‖²`.
    pub min_quotient: f64,
    pub worst: Option<Probe>,
    pub passed: bool,
}

/// Smallest Rayleigh quotient over the probes; passes iff it is at least
/// the declared `λ`. Negative quotients fail: only the positive branch of
/// the sign dichotomy is accepted.
pub fn check_ellipticity(vf: &VectorField, probes: &[Probe]) -> Result<EllipticityReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter {
            name: "probes",
            reason: "at least one probe is required".into(),
        });
    }
    let mut report = EllipticityReport {
        min_quotient: f64::INFINITY,
        worst: None,
        passed: false,
    };
    for p in probes {
        let v = &p.direction;
        let q = (v.transpose() * vf.sigma(p.point.as_slice()) * v)[(0, 0)] / v.norm_squared();
        if q < report.min_quotient {
            report.min_quotient = q;
            report.worst = Some(p.clone());
        }
    }
    report.passed = report.min_quotient >= vf.lambda() * (1.0 - 1e-12);
    Ok(report)
}

/// Closed polyline (first point repeated at the end) around an axis-aligned
/// square in the `(i, j)` coordinate plane.
pub fn square_loop(center: &DVector<f64>, side: f64, i: usize, j: usize) -> Vec<DVector<f64>> {
    let h = 0.5 * side;
    let corner = |a: f64, b: f64| {
        let mut p = center.clone();
        p[i] += a;
        p[j] += b;
        p
    };
    vec![
        corner(-h, -h),
        corner(h, -h),
        corner(h, h),
        corner(-h, h),
        corner(-h, -h),
    ]
}

/// `∮ σ⁻¹ dx` by the trapezoid rule with `segments` pieces per edge.
pub fn circulation(
    vf: &VectorField,
    polyline: &[DVector<f64>],
    segments: usize,
) -> Result<DVector<f64>> {
    let d = vf.dim();
    let mut total = DVector::zeros(d);
    for edge in polyline.windows(2) {
        let (a, b) = (&edge[0], &edge[1]);
        let delta = b - a;
        let h = 1.0 / segments as f64;
        let mut comps = vec![Vec::with_capacity(segments + 1); d];
        for s in 0..=segments {
            let x = a + &delta * (s as f64 * h);
            let v = vf.inverse(x.as_slice())? * &delta;
            for (k, c) in comps.iter_mut().enumerate() {
                c.push(v[k]);
            }
        }
        for (k, c) in comps.iter().enumerate() {
            total[k] += trapezoid(c, h);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservativeReport {
    /// `(segments per edge, max circulation over loops)` for each refinement.
    pub levels: Vec<(usize, f64)>,
    /// Richardson-extrapolated max circulation.
    pub max_circulation: f64,
    pub passed: bool,
}

/// Default refinement ladder for [`check_conservative`].
pub const CIRCULATION_LEVELS: [usize; 4] = [64, 128, 256, 512];

/// Max circulation of `σ⁻¹` over the loops, refined along
/// [`CIRCULATION_LEVELS`]; passes iff the extrapolated value is `≤ tol`.
pub fn check_conservative(
    vf: &VectorField,
    loops: &[Vec<DVector<f64>>],
    tol: f64,
) -> Result<ConservativeReport> {
    if vf.dim() < 2 {
        return Ok(ConservativeReport {
            levels: Vec::new(),
            max_circulation: 0.0,
            passed: true,
        });
    }
    let mut levels = Vec::new();
    let mut max_extrapolated: f64 = 0.0;
    let mut previous: Vec<DVector<f64>> = Vec::new();
    for (lvl, &segments) in CIRCULATION_LEVELS.iter().enumerate() {
        let current: Vec<DVector<f64>> = loops
            .iter()
            .map(|l| circulation(vf, l, segments))
            .collect::<Result<_>>()?;
        levels.push((
            segments,
            current.iter().map(|c| c.norm()).fold(0.0, f64::max),
        ));
        if lvl + 1 == CIRCULATION_LEVELS.len() {
            max_extrapolated = current
                .iter()
                .zip(&previous)
                .map(|(fine, coarse)| (fine + (fine - coarse) / 3.0).norm())
                .fold(0.0, f64::max);
        }
        previous = current;
    }
    Ok(ConservativeReport {
        levels,
        max_circulation: max_extrapolated,
        passed: max_extrapolated <= tol,
    })
}

/// Loops used by [`build_g`]: unit squares in every coordinate plane,
/// centred at the origin and at `(±1, ±1, …)`.
pub fn default_loops(dim: usize) -> Vec<Vec<DVector<f64>>> {
    let mut loops = Vec::new();
    let centers = [
        DVector::zeros(dim),
        DVector::from_element(dim, 1.0),
        DVector::from_element(dim, -1.0),
    ];
    for c in &centers {
        for i in 0..dim {
            for j in i + 1..dim {
                loops.push(square_loop(c, 1.0, i, j));
            }
        }
    }
    loops
}

pub const QUADRATURE_TOL: f64 = 1e-12;
pub const INVERSION_TOL: f64 = 1e-12;
pub const MAX_NEWTON: usize = 100;

/// `G` with `DG = σ⁻¹` and its numerical inverse.
#[derive(Debug, Clone)]
pub struct Diffeo {
    field: VectorField,
    lambda_prime: f64,
}

/// Builds `G` after checking ellipticity on a lattice over `[-3, 3]^d` and,
/// for `d ≥ 2`, path independence on [`default_loops`].
pub fn build_g(vf: VectorField) -> Result<Diffeo> {
    let per_axis = match vf.dim() {
        1 => 601,
        2 => 25,
        _ => 7,
    };
    build_g_with(
        vf,
        &|dim| lattice_probes(dim, 3.0, per_axis),
        &default_loops,
    )
}

/// [`build_g`] with caller-supplied probe and loop generators.
pub fn build_g_with(
    vf: VectorField,
    probes: &dyn Fn(usize) -> Vec<Probe>,
    loops: &dyn Fn(usize) -> Vec<Vec<DVector<f64>>>,
) -> Result<Diffeo> {
    let d = vf.dim();
    let ell = check_ellipticity(&vf, &probes(d))?;
    if !ell.passed {
        return Err(Error::Assumption(format!(
            "ellipticity fails: min quotient {} < lambda {}",
            ell.min_quotient,
            vf.lambda()
        )));
    }
    if d >= 2 {
        let cons = check_conservative(&vf, &loops(d), 1e-8)?;
        if !cons.passed {
            return Err(Error::Assumption(format!(
                "σ⁻¹ is not conservative: circulation {:e}",
                cons.max_circulation
            )));
        }
    }
    let lambda_prime = vf.lambda() / (vf.sup_sigma() * vf.sup_sigma());
    Ok(Diffeo {
        field: vf,
        lambda_prime,
    })
}

impl Diffeo {
    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// Growth constant `λ' = λ / ‖σ‖_∞²` in `‖G(v) - G(0)‖ ≥ λ'‖v‖`.
    pub fn lambda_prime(&self) -> f64 {
        self.lambda_prime
    }

    pub fn forward(&self, z: &[f64]) -> Result<DVector<f64>> {
        let d = self.dim();
        if z.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "expected a {d}-vector, got {}",
                z.len()
            )));
        }
        let mut total = DVector::zeros(d);
        let mut corner = vec![0.0; d];
        for (k, &zk) in z.iter().enumerate() {
            if zk == 0.0 {
                continue;
            }
            // leg k: x(s) = corner + s e_k, s from 0 to z_k
            let leg = adaptive_simpson_vec(
                |s| {
                    let mut x = corner.clone();
                    x[k] = s;
                    match self.field.inverse(&x) {
                        Ok(inv) => inv.column(k).iter().copied().collect(),
                        Err(_) => vec![f64::NAN; d],
                    }
                },
                0.0,
                zk,
                QUADRATURE_TOL,
            )?;
            if leg.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular);
            }
            total += DVector::from_vec(leg);
            corner[k] = zk;
        }
        Ok(total)
    }

    /// `DG(z) = σ(z)⁻¹`.
    pub fn derivative(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.field.inverse(z)
    }

    /// Trust-region radius `‖z - G(0)‖/λ' + 1` for the preimage of `z`.
    /// `G(0) = 0` by construction.
    pub fn search_radius(&self, z: &[f64]) -> f64 {
        DVector::from_column_slice(z).norm() / self.lambda_prime + 1.0
    }

    /// `G⁻¹(z)` by Newton's method `x ← x - σ(x)(G(x) - z)`, damped to stay
    /// inside the trust region, with bisection as the scalar fallback.
    pub fn inverse(&self, z: &[f64]) -> Result<DVector<f64>> {
        let target = DVector::from_column_slice(z);
        let radius = self.search_radius(z);
        let mut x = target.clone();
        if x.norm() > radius {
            x *= radius / x.norm();
        }
        let mut res = self.forward(x.as_slice())? - &target;
        for iteration in 0..MAX_NEWTON {
            let r = res.norm();
            if r <= INVERSION_TOL {
                return Ok(x);
            }
            let step = self.field.sigma(x.as_slice()) * &res;
            let mut t = 1.0;
            let accepted = loop {
                let cand = &x - &step * t;
                if cand.norm() <= radius {
                    let cand_res = self.forward(cand.as_slice())? - &target;
                    if cand_res.norm() < r {
                        break Some((cand, cand_res));
                    }
                }
                t *= 0.5;
                if t < 1e-10 {
                    break None;
                }
            };
            match accepted {
                Some((cand, cand_res)) => {
                    x = cand;
                    res = cand_res;
                }
                None if self.dim() == 1 => return self.bisect(z[0], radius),
                None => {
                    return Err(Error::Inversion {
                        iterations: iteration,
                        residual: r,
                    })
                }
            }
        }
        if res.norm() <= INVERSION_TOL {
            return Ok(x);
        }
        if self.dim() == 1 {
            return self.bisect(z[0], radius);
        }
        Err(Error::Inversion {
            iterations: MAX_NEWTON,
            residual: res.norm(),
        })
    }

    fn bisect(&self, z: f64, radius: f64) -> Result<DVector<f64>> {
        let g = |x: f64| -> Result<f64> { Ok(self.forward(&[x])?[0] - z) };
        let (mut lo, mut hi) = (-radius, radius);
        let (glo, ghi) = (g(lo)?, g(hi)?);
        if glo.signum() == ghi.signum() {
            return Err(Error::Inversion {
                iterations: 0,
                residual: glo.abs().min(ghi.abs()),
            });
        }
        let increasing = ghi > glo;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid)?;
            if gm.abs() <= INVERSION_TOL || hi - lo < 1e-15 {
                return Ok(DVector::from_element(1, mid));
            }
            if (gm > 0.0) == increasing {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Err(Error::Inversion {
            iterations: 200,
            residual: g(0.5 * (lo + hi))?.abs(),
        })
    }
}

/// `f̃(z) = σ(x)⁻¹ f(x)` at `x = G⁻¹(z)`.
#[derive(Clone)]
pub struct ReducedDrift {
    diffeo: Arc<Diffeo>,
    drift: Drift,
}

impl ReducedDrift {
    pub fn eval(&self, z: &[f64]) -> Result<DVector<f64>> {
        let x = self.diffeo.inverse(z)?;
        Ok(self.diffeo.derivative(x.as_slice())? * self.drift.eval(x.as_slice()))
    }

    /// As a [`Drift`]. Inversion failures surface as NaN, which the solvers
    /// report as a non-finite step.
    pub fn into_drift(self) -> Drift {
        let d = self.diffeo.dim();
        let sup = self.drift.sup() / self.diffeo.field().lambda();
        let theta = self.drift.theta();
        Drift::new(
            d,
            move |z| {
                self.eval(z)
                    .unwrap_or_else(|_| DVector::from_element(d, f64::NAN))
            },
            theta,
            sup,
        )
        .expect("bounds inherited from a valid drift")
    }
}

pub fn reduce_drift(diffeo: Arc<Diffeo>, drift: Drift) -> Result<ReducedDrift> {
    if drift.dim() != diffeo.dim() {
        return Err(Error::ShapeMismatch(
            "drift and diffeomorphism dimensions differ".into(),
        ));
    }
    Ok(ReducedDrift { diffeo, drift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformReport {
    /// `|G(X_t) - G(x₀) - ∫_0^t f̃(Z_r) dr - B_t|` on the grid.
    pub residual: Vec<f64>,
    pub sup_residual: f64,
    /// `‖G⁻¹(Z) - X‖_∞` where `Z` solves the unit-diffusion equation directly.
    pub converse: f64,
    /// Largest `|G⁻¹(G(X_t)) - X_t|` along the solution.
    pub roundtrip: f64,
}

/// Checks that `Z = G(X)` solves `Z_t = G(x₀) + ∫ f̃(Z) dr + B_t`, and
/// conversely that solving that equation and mapping back recovers `X`.
/// The drift integral uses the rule of the solver that produced `sol`.
pub fn verify_transform_equivalence(
    prob: &RdeProblem,
    sol: &RdeSolution,
    diffeo: &Arc<Diffeo>,
) -> Result<TransformReport> {
    if prob.noise().flavor() != Flavor::Geometric {
        return Err(Error::Unsupported(
            "the transform needs a geometric lift".into(),
        ));
    }
    let x = sol.path();
    let n = x.steps();
    let d = x.dim();
    let h = x.grid().step();
    let reduced = reduce_drift(diffeo.clone(), prob.drift().clone())?;
    let z: Vec<DVector<f64>> = (0..=n)
        .map(|i| diffeo.forward(x.value(i)))
        .collect::<Result<_>>()?;
    let ftilde: Vec<DVector<f64>> = z
        .iter()
        .map(|zi| reduced.eval(zi.as_slice()))
        .collect::<Result<_>>()?;
    let mut roundtrip: f64 = 0.0;
    for (i, zi) in z.iter().enumerate().step_by((n / 64).max(1)) {
        let back = diffeo.inverse(zi.as_slice())?;
        roundtrip = roundtrip.max((back - x.vector(i)).amax());
    }
    let base = prob.noise().base();
    let mut residual = Vec::with_capacity(n + 1);
    let mut drift_int = DVector::zeros(d);
    for i in 0..=n {
        if i > 0 {
            drift_int += match sol.solver() {
                SolverKind::Euler => &ftilde[i - 1] * h,
                SolverKind::Picard => (&ftilde[i - 1] + &ftilde[i]) * (0.5 * h),
            };
        }
        let r = &z[i] - &z[0] - &drift_int - base.increment_unchecked(0, i);
        residual.push(r.norm());
    }
    let sup_residual = residual.iter().copied().fold(0.0, f64::max);

    let unit = RdeProblem::new(
        z[0].clone(),
        reduced.into_drift(),
        VectorField::identity(d),
        prob.noise().clone(),
    )?;
    let zsol = solve_euler(&unit)?;
    let mut converse: f64 = 0.0;
    for i in 0..=n {
        let back = diffeo.inverse(zsol.path().value(i))?;
        converse = converse.max((back - x.vector(i)).amax());
    }
    Ok(TransformReport {
        residual,
        sup_residual,
        converse,
        roundtrip,
    })
}

/// `G` applied along a path.
pub fn map_path(diffeo: &Diffeo, path: &GridPath) -> Result<GridPath> {
    let mut values = Vec::with_capacity(path.values().len());
    for i in 0..=path.steps() {
        values.extend(diffeo.forward(path.value(i))?.iter());
    }
    GridPath::new(*path.grid(), path.dim(), values)
}
