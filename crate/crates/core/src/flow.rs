//! Scalar Brownian flows `ψ(s, t, x)` of `dX = f(X) dt + dB`.
//!
//! For fixed `s, x, y` and `u ∈ [0, 1]` let `Zᵘ = u ψ(s,·,x) + (1-u) ψ(s,·,y)`
//! and
//!
//! ```text
//! Iᵘ_t = F(Zᵘ_t) - F(Zᵘ_s) - ∫_s^t f(Zᵘ_r)(u f(ψ(s,r,x)) + (1-u) f(ψ(s,r,y))) dr
//! Jᵘ_t = ∫_s^t f(Zᵘ_r) dB_r
//! ```
//!
//! with `F' = f`. Then `ψ(s,t,x) - ψ(s,t,y) = (x - y) exp(2 ∫_0^1 (Iᵘ_t - Jᵘ_t) du)`,
//! and at `x = y` this is the spatial derivative.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbm::{FbmParams, FbmSampler};
use crate::grid_path::{GridPath, TimeGrid};
use crate::numerics::{fit_order, gauss_legendre_unit, OrderFit};
use crate::rde::BLOW_UP;

/// Default number of Gauss–Legendre nodes in `u`.
pub const U_NODES: usize = 8;

/// Smallest admissible finite-difference step.
pub const MIN_FD_STEP: f64 = 1e-8;

/// Panels in the cumulative Simpson table for `F`.
const F_TABLE_PANELS: usize = 1 << 16;

/// `1` on `[0, R]`, `0` beyond `2R`, quintic smoothstep in between.
pub fn cutoff_weight(r: f64, radius: f64) -> f64 {
    let a = r.abs();
    if a <= radius {
        1.0
    } else if a >= 2.0 * radius {
        0.0
    } else {
        let t = 2.0 - a / radius;
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift after the cutoff, `f(x) w(|x|)`.
#[derive(Clone)]
pub struct ScalarDrift {
    f: ScalarFn,
    theta: f64,
    radius: f64,
}

impl std::fmt::Debug for ScalarDrift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ScalarDrift(theta = {}, radius = {})",
            self.theta, self.radius
        )
    }
}

impl ScalarDrift {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        theta: f64,
        radius: f64,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!("{theta} outside (0, 1]"),
            });
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "radius",
                reason: format!("cutoff radius {radius} must be positive"),
            });
        }
        Ok(Self {
            f: Arc::new(f),
            theta,
            radius,
        })
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, 1.0, 1.0).expect("valid")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let w = cutoff_weight(x, self.radius);
        if w == 0.0 {
            0.0
        } else {
            (self.f)(x) * w
        }
    }

    /// The drift without the cutoff.
    pub fn raw(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// `F` with `F' = f` (cutoff included) and `F(0) = 0`.
#[derive(Clone)]
pub enum Antiderivative {
    Analytic(ScalarFn),
    Table(Arc<SimpsonTable>),
}

impl Antiderivative {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Antiderivative::Analytic(f) => f(x),
            Antiderivative::Table(t) => t.eval(x),
        }
    }
}

/// Cumulative Simpson table of `F` on `[-2R, 2R]`, where the drift lives.
#[derive(Debug)]
pub struct SimpsonTable {
    drift: ScalarDrift,
    lo: f64,
    width: f64,
    nodes: Vec<f64>,
    offset: f64,
}

impl SimpsonTable {
    pub fn build(drift: &ScalarDrift) -> Self {
        let lo = -2.0 * drift.radius;
        let width = 4.0 * drift.radius / F_TABLE_PANELS as f64;
        let mut nodes = Vec::with_capacity(F_TABLE_PANELS + 1);
        let mut acc = 0.0;
        nodes.push(0.0);
        for k in 0..F_TABLE_PANELS {
            let a = lo + k as f64 * width;
            acc += width / 6.0
                * (drift.eval(a) + 4.0 * drift.eval(a + 0.5 * width) + drift.eval(a + width));
            nodes.push(acc);
        }
        let mut table = Self {
            drift: drift.clone(),
            lo,
            width,
            nodes,
            offset: 0.0,
        };
        table.offset = table.eval(0.0);
        table
    }

    pub fn eval(&self, x: f64) -> f64 {
        let hi = self.lo + self.width * F_TABLE_PANELS as f64;
        let x = x.clamp(self.lo, hi);
        let k = (((x - self.lo) / self.width).floor() as usize).min(F_TABLE_PANELS - 1);
        let a = self.lo + k as f64 * self.width;
        let part = x - a;
        let tail = part / 6.0
            * (self.drift.eval(a) + 4.0 * self.drift.eval(a + 0.5 * part) + self.drift.eval(x));
        self.nodes[k] + tail - self.offset
    }
}

/// Drift, antiderivative, one Brownian path and the `(s, t, x)` lattice.
#[derive(Clone)]
pub struct FlowProblem {
    drift: ScalarDrift,
    antiderivative: Antiderivative,
    noise: Arc<GridPath>,
    s_indices: Vec<usize>,
    t_indices: Vec<usize>,
    x_values: Vec<f64>,
}

impl FlowProblem {
    /// Default lattice: `s ∈ {0, T/4, T/2}`, `t ∈ {T/4, T/2, 3T/4, T}` and
    /// 33 equally spaced `x` on `[-2R, 2R]`. `F` is tabulated.
    pub fn new(drift: ScalarDrift, noise: GridPath) -> Result<Self> {
        if noise.dim() != 1 {
            return Err(Error::ShapeMismatch("flows are scalar".into()));
        }
        let n = noise.steps();
        if !n.is_multiple_of(4) {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: format!("{n} is not divisible by 4"),
            });
        }
        let r = drift.radius;
        let x_values = (0..33)
            .map(|k| -2.0 * r + 4.0 * r * k as f64 / 32.0)
            .collect();
        let antiderivative = Antiderivative::Table(Arc::new(SimpsonTable::build(&drift)));
        Ok(Self {
            drift,
            antiderivative,
            noise: Arc::new(noise),
            s_indices: vec![0, n / 4, n / 2],
            t_indices: vec![n / 4, n / 2, 3 * n / 4, n],
            x_values,
        })
    }

    /// Uses a closed-form `F`, shifted so that `F(0) = 0`.
    pub fn with_antiderivative(
        mut self,
        big_f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let f0 = big_f(0.0);
        self.antiderivative = Antiderivative::Analytic(Arc::new(move |x| big_f(x) - f0));
        self
    }

    pub fn with_lattice(
        mut self,
        s_indices: Vec<usize>,
        t_indices: Vec<usize>,
        x_values: Vec<f64>,
    ) -> Result<Self> {
        let n = self.steps();
        if s_indices.iter().chain(&t_indices).any(|&k| k > n) {
            return Err(Error::InvalidParameter {
                name: "lattice",
                reason: format!("time index beyond {n}"),
            });
        }
        self.s_indices = s_indices;
        self.t_indices = t_indices;
        self.x_values = x_values;
        Ok(self)
    }

    /// Same drift and lattice with another noise path on an equal grid.
    pub fn with_noise(&self, noise: GridPath) -> Result<Self> {
        if noise.grid() != self.noise.grid() || noise.dim() != 1 {
            return Err(Error::ShapeMismatch(
                "replacement noise must share the grid".into(),
            ));
        }
        Ok(Self {
            noise: Arc::new(noise),
            ..self.clone()
        })
    }

    pub fn drift(&self) -> &ScalarDrift {
        &self.drift
    }

    pub fn f(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    pub fn big_f(&self, x: f64) -> f64 {
        self.antiderivative.eval(x)
    }

    pub fn noise(&self) -> &GridPath {
        &self.noise
    }

    pub fn grid(&self) -> &TimeGrid {
        self.noise.grid()
    }

    pub fn steps(&self) -> usize {
        self.noise.steps()
    }

    pub fn s_indices(&self) -> &[usize] {
        &self.s_indices
    }

    pub fn t_indices(&self) -> &[usize] {
        &self.t_indices
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x_values
    }

    fn db(&self, k: usize) -> f64 {
        self.noise.value(k + 1)[0] - self.noise.value(k)[0]
    }

    /// `ψ(s, t_k, x)` for `k = s..=n` by the Euler march
    /// `ψ_{k+1} = ψ_k + f(ψ_k) h + ΔB_k`.
    pub fn march(&self, s: usize, x: f64) -> Result<Vec<f64>> {
        let n = self.steps();
        if s > n {
            return Err(Error::IndexOutOfRange {
                i: s,
                j: n,
                steps: n,
            });
        }
        let h = self.grid().step();
        let mut out = Vec::with_capacity(n - s + 1);
        let mut v = x;
        out.push(v);
        for k in s..n {
            v = v + self.f(v) * h + self.db(k);
            if !v.is_finite() || v.abs() > BLOW_UP {
                return Err(Error::BlowUp {
                    step: k + 1,
                    magnitude: v.abs(),
                });
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// `ψ(s, ·, x)` for every lattice `(s, x)`.
#[derive(Debug, Clone)]
pub struct FlowField {
    s_indices: Vec<usize>,
    x_values: Vec<f64>,
    /// `paths[si][xi][k - s]`
    paths: Vec<Vec<Vec<f64>>>,
}

impl FlowField {
    fn s_slot(&self, s: usize) -> Result<usize> {
        self.s_indices
            .iter()
            .position(|&v| v == s)
            .ok_or_else(|| Error::Missing(format!("s index {s} is not on the lattice")))
    }

    fn x_slot(&self, xi: usize) -> Result<usize> {
        if xi < self.x_values.len() {
            Ok(xi)
        } else {
            Err(Error::Missing(format!(
                "x index {xi} is not on the lattice"
            )))
        }
    }

    /// `ψ(s, t_k, x)` for `k ≥ s`, indexed from `s`.
    pub fn path(&self, s: usize, xi: usize) -> Result<&[f64]> {
        Ok(&self.paths[self.s_slot(s)?][self.x_slot(xi)?])
    }

    pub fn value(&self, s: usize, t: usize, xi: usize) -> Result<f64> {
        let path = self.path(s, xi)?;
        if t < s || t - s >= path.len() {
            return Err(Error::IndexOutOfRange {
                i: s,
                j: t,
                steps: s + path.len() - 1,
            });
        }
        Ok(path[t - s])
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x_values
    }

    pub fn s_indices(&self) -> &[usize] {
        &self.s_indices
    }
}

pub fn compute_flow(fp: &FlowProblem) -> Result<FlowField> {
    let paths = fp
        .s_indices
        .par_iter()
        .map(|&s| {
            fp.x_values
                .par_iter()
                .map(|&x| fp.march(s, x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowField {
        s_indices: fp.s_indices.clone(),
        x_values: fp.x_values.clone(),
        paths,
    })
}

/// `Iᵘ`, `Jᵘ` at the Gauss–Legendre nodes and their `u`-integrals, for
/// times `t_k`, `k = s..=n` (indexed from `s`).
#[derive(Debug, Clone)]
pub struct IjField {
    pub s: usize,
    pub nodes: Vec<(f64, f64)>,
    pub i_u: Vec<Vec<f64>>,
    pub j_u: Vec<Vec<f64>>,
    pub i: Vec<f64>,
    pub j: Vec<f64>,
}

/// `Iᵘ`, `Jᵘ` from two flow paths started at time index `s`.
pub fn ij_from_paths(
    fp: &FlowProblem,
    s: usize,
    px: &[f64],
    py: &[f64],
    m: usize,
) -> Result<IjField> {
    if px.len() != py.len() || s + px.len() != fp.steps() + 1 {
        return Err(Error::ShapeMismatch(
            "flow paths must run from s to the horizon".into(),
        ));
    }
    let h = fp.grid().step();
    let nodes = gauss_legendre_unit(m);
    let len = px.len();
    let fx: Vec<f64> = px.iter().map(|&v| fp.f(v)).collect();
    let fy: Vec<f64> = py.iter().map(|&v| fp.f(v)).collect();
    let mut i_u = Vec::with_capacity(m);
    let mut j_u = Vec::with_capacity(m);
    for &(u, _) in &nodes {
        let mut iu = Vec::with_capacity(len);
        let mut ju = Vec::with_capacity(len);
        let z0 = u * px[0] + (1.0 - u) * py[0];
        let f_z0 = fp.big_f(z0);
        let mut drift = 0.0;
        let mut ito = 0.0;
        let mut prev = fp.f(z0) * (u * fx[0] + (1.0 - u) * fy[0]);
        let mut fz_prev = fp.f(z0);
        iu.push(0.0);
        ju.push(0.0);
        for k in 1..len {
            let z = u * px[k] + (1.0 - u) * py[k];
            let fz = fp.f(z);
            let cur = fz * (u * fx[k] + (1.0 - u) * fy[k]);
            drift += 0.5 * h * (prev + cur);
            ito += fz_prev * fp.db(s + k - 1);
            iu.push(fp.big_f(z) - f_z0 - drift);
            ju.push(ito);
            prev = cur;
            fz_prev = fz;
        }
        i_u.push(iu);
        j_u.push(ju);
    }
    let aggregate = |tab: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..len)
            .map(|k| nodes.iter().zip(tab).map(|((_, w), row)| w * row[k]).sum())
            .collect()
    };
    let i = aggregate(&i_u);
    let j = aggregate(&j_u);
    Ok(IjField {
        s,
        nodes,
        i_u,
        j_u,
        i,
        j,
    })
}

pub fn compute_ij(
    fp: &FlowProblem,
    field: &FlowField,
    s: usize,
    xi: usize,
    yi: usize,
    m: usize,
) -> Result<IjField> {
    ij_from_paths(fp, s, field.path(s, xi)?, field.path(s, yi)?, m)
}

fn exp_checked(exponent: f64) -> Result<f64> {
    if exponent > 700.0 {
        return Err(Error::Overflow(exponent));
    }
    Ok(exponent.exp())
}

/// `Dψ(s, t, x) = exp(2 (I(s,t,x,x) - J(s,t,x,x)))`.
pub fn derivative_by_identity(
    fp: &FlowProblem,
    field: &FlowField,
    s: usize,
    t: usize,
    xi: usize,
) -> Result<f64> {
    if t < s {
        return Err(Error::IndexOutOfRange {
            i: s,
            j: t,
            steps: fp.steps(),
        });
    }
    let ij = compute_ij(fp, field, s, xi, xi, U_NODES)?;
    exp_checked(2.0 * (ij.i[t - s] - ij.j[t - s]))
}

/// Central difference `(ψ(s,t,x+δ) - ψ(s,t,x-δ)) / 2δ` on the same noise.
pub fn derivative_by_fd(fp: &FlowProblem, s: usize, t: usize, x: f64, delta: f64) -> Result<f64> {
    if !(delta >= MIN_FD_STEP) {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("{delta} is below {MIN_FD_STEP}"),
        });
    }
    if t < s || t > fp.steps() {
        return Err(Error::IndexOutOfRange {
            i: s,
            j: t,
            steps: fp.steps(),
        });
    }
    let up = fp.march(s, x + delta)?;
    let down = fp.march(s, x - delta)?;
    Ok((up[t - s] - down[t - s]) / (2.0 * delta))
}

/// `|(ψ(s,t,x) - ψ(s,t,y)) - (x - y) exp(2(I - J))| / |x - y|`.
pub fn ratio_identity_check(
    fp: &FlowProblem,
    field: &FlowField,
    s: usize,
    t: usize,
    xi: usize,
    yi: usize,
) -> Result<f64> {
    let (x, y) = (
        field.x_values[field.x_slot(xi)?],
        field.x_values[field.x_slot(yi)?],
    );
    if x == y {
        return Err(Error::InvalidParameter {
            name: "y",
            reason: "x and y must differ".into(),
        });
    }
    let ij = compute_ij(fp, field, s, xi, yi, U_NODES)?;
    let k = t.checked_sub(s).ok_or(Error::IndexOutOfRange {
        i: s,
        j: t,
        steps: fp.steps(),
    })?;
    let gap = field.value(s, t, xi)? - field.value(s, t, yi)?;
    Ok((gap - (x - y) * exp_checked(2.0 * (ij.i[k] - ij.j[k]))?).abs() / (x - y).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeRow {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub identity: f64,
    pub fd: f64,
    pub relerr: f64,
}

/// Both derivatives at every lattice `(s, t, x)` with `t > s`.
pub fn derivative_table(
    fp: &FlowProblem,
    field: &FlowField,
    delta: f64,
) -> Result<Vec<DerivativeRow>> {
    let grid = *fp.grid();
    let mut jobs = Vec::new();
    for &s in &fp.s_indices {
        for xi in 0..fp.x_values.len() {
            jobs.push((s, xi));
        }
    }
    let rows: Vec<Vec<DerivativeRow>> = jobs
        .par_iter()
        .map(|&(s, xi)| {
            let x = fp.x_values[xi];
            let ij = compute_ij(fp, field, s, xi, xi, U_NODES)?;
            let up = fp.march(s, x + delta)?;
            let down = fp.march(s, x - delta)?;
            fp.t_indices
                .iter()
                .filter(|&&t| t > s)
                .map(|&t| {
                    let identity = exp_checked(2.0 * (ij.i[t - s] - ij.j[t - s]))?;
                    let fd = (up[t - s] - down[t - s]) / (2.0 * delta);
                    Ok(DerivativeRow {
                        s: grid.point(s),
                        t: grid.point(t),
                        x,
                        identity,
                        fd,
                        relerr: (identity - fd).abs() / fd.abs(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if delta < MIN_FD_STEP {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("{delta} is below {MIN_FD_STEP}"),
        });
    }
    Ok(rows.into_iter().flatten().collect())
}

/// Which increment a moment study measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    /// `ψ(s,t,x) - ψ(s,t,x̃)` against `|x - x̃|`.
    Space,
    /// `ψ(s,t,x) - ψ(s̃,t,x)` against `|s - s̃|`.
    TimeS,
    /// `ψ(s,t,x) - ψ(s,t̃,x)` against `|t - t̃|`.
    TimeT,
    /// `J(s,t,x,y) - J(s,t,x̃,y)` against `|x - x̃|`.
    JField,
}

impl MomentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MomentKind::Space => "space",
            MomentKind::TimeS => "time-s",
            MomentKind::TimeT => "time-t",
            MomentKind::JField => "J-field",
        }
    }

    /// Exponent of the moment bound: `p` in space, `p/2` in time, `pθ` for `J`.
    pub fn bound_exponent(&self, p: f64, theta: f64) -> f64 {
        match self {
            MomentKind::Space => p,
            MomentKind::TimeS | MomentKind::TimeT => p / 2.0,
            MomentKind::JField => p * theta,
        }
    }
}

/// Monte Carlo setup. Time separations are grid-index offsets; space
/// separations are distances. The base point is `(s, t, x)`; `J` uses `y`
/// as its second argument.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentConfig {
    pub kind: MomentKind,
    pub p: f64,
    pub paths: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    pub s: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub space_ladder: Vec<f64>,
    pub time_ladder: Vec<usize>,
}

impl MomentConfig {
    /// `s = 0`, `t = T/2` for time-t, `s = T/4` for time-s, otherwise `t = T`;
    /// space ladder `0.4 … 0.025`, time ladder `T/8 … T/128`.
    pub fn standard(kind: MomentKind, grid: TimeGrid, paths: usize, seed: u64) -> Self {
        let n = grid.steps();
        let (s, t) = match kind {
            MomentKind::TimeT => (0, n / 2),
            MomentKind::TimeS => (n / 4, n),
            _ => (0, n),
        };
        Self {
            kind,
            p: 4.0,
            paths,
            seed,
            grid,
            s,
            t,
            x: 0.0,
            y: 0.5,
            space_ladder: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            time_ladder: [8usize, 16, 32, 64, 128].iter().map(|d| n / d).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub kind: MomentKind,
    pub p: f64,
    pub separations: Vec<f64>,
    pub moments: Vec<f64>,
    pub slope: f64,
    pub constant: f64,
    pub bound_exponent: f64,
    pub passed: bool,
}

/// Estimates `E|Δ|^p` across the separation ladder with independent
/// Brownian paths (one ChaCha stream per path) and fits the log-log slope.
/// Passes iff the slope is at least the bound exponent minus `0.3`.
pub fn moment_scaling(drift: &ScalarDrift, cfg: &MomentConfig) -> Result<MomentReport> {
    let ladder_len = match cfg.kind {
        MomentKind::Space | MomentKind::JField => cfg.space_ladder.len(),
        _ => cfg.time_ladder.len(),
    };
    if ladder_len < 4 {
        return Err(Error::InvalidParameter {
            name: "ladder",
            reason: format!("{ladder_len} separations; at least 4 are needed"),
        });
    }
    if cfg.paths < 1000 {
        return Err(Error::InvalidParameter {
            name: "paths",
            reason: format!("{} paths; at least 1000 are needed", cfg.paths),
        });
    }
    let min_p = match cfg.kind {
        MomentKind::JField => 2.0 / drift.theta(),
        _ => 2.0,
    };
    if cfg.p < min_p {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("{} is below {min_p}", cfg.p),
        });
    }
    let n = cfg.grid.steps();
    let bad_ladder = match cfg.kind {
        MomentKind::TimeT => cfg.time_ladder.iter().any(|&d| d == 0 || cfg.t + d > n),
        MomentKind::TimeS => cfg.time_ladder.iter().any(|&d| d == 0 || cfg.s + d > cfg.t),
        _ => cfg.space_ladder.iter().any(|&dx| !(dx > 0.0)),
    };
    if cfg.s > cfg.t || cfg.t > n || bad_ladder {
        return Err(Error::InvalidParameter {
            name: "ladder",
            reason: "separations must be positive and stay inside [s, T]".into(),
        });
    }
    let sampler = FbmSampler::new(FbmParams::new(0.5, 1, cfg.grid, cfg.seed).with_oversample(1))?;
    let template = FlowProblem::new(drift.clone(), sampler.sample(0))?;
    let per_path: Vec<Vec<f64>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|index| {
            let fp = template.with_noise(sampler.sample(index))?;
            moment_terms(&fp, cfg)
        })
        .collect::<Result<_>>()?;
    let moments: Vec<f64> = (0..ladder_len)
        .map(|l| per_path.iter().map(|row| row[l]).sum::<f64>() / cfg.paths as f64)
        .collect();
    let separations: Vec<f64> = match cfg.kind {
        MomentKind::Space | MomentKind::JField => cfg.space_ladder.clone(),
        _ => cfg
            .time_ladder
            .iter()
            .map(|&d| d as f64 * cfg.grid.step())
            .collect(),
    };
    let (slope, constant) = match fit_order(&separations, &moments)? {
        OrderFit::Fitted { order, constant } => (order, constant),
        OrderFit::Exact => (f64::INFINITY, 0.0),
    };
    let bound_exponent = cfg.kind.bound_exponent(cfg.p, drift.theta());
    Ok(MomentReport {
        kind: cfg.kind,
        p: cfg.p,
        separations,
        moments,
        slope,
        constant,
        bound_exponent,
        passed: slope >= bound_exponent - 0.3,
    })
}

fn moment_terms(fp: &FlowProblem, cfg: &MomentConfig) -> Result<Vec<f64>> {
    let (s, t) = (cfg.s, cfg.t);
    let pow = |v: f64| v.abs().powf(cfg.p);
    match cfg.kind {
        MomentKind::Space => {
            let base = fp.march(s, cfg.x)?[t - s];
            cfg.space_ladder
                .iter()
                .map(|&dx| Ok(pow(fp.march(s, cfg.x + dx)?[t - s] - base)))
                .collect()
        }
        MomentKind::TimeT => {
            let path = fp.march(s, cfg.x)?;
            Ok(cfg
                .time_ladder
                .iter()
                .map(|&d| pow(path[t + d - s] - path[t - s]))
                .collect())
        }
        MomentKind::TimeS => {
            let base = fp.march(s, cfg.x)?[t - s];
            cfg.time_ladder
                .iter()
                .map(|&d| Ok(pow(fp.march(s + d, cfg.x)?[t - s - d] - base)))
                .collect()
        }
        MomentKind::JField => {
            let py = fp.march(s, cfg.y)?;
            let px = fp.march(s, cfg.x)?;
            let base = ij_from_paths(fp, s, &px, &py, U_NODES)?.j[t - s];
            cfg.space_ladder
                .iter()
                .map(|&dx| {
                    let pxt = fp.march(s, cfg.x + dx)?;
                    Ok(pow(
                        ij_from_paths(fp, s, &pxt, &py, U_NODES)?.j[t - s] - base
                    ))
                })
                .collect()
        }
    }
}

/// `sup_r |L_r - L_0|` with `L_r = ψ(r, T, X_r) - ψ(0, T, x)`.
pub fn uniqueness_residual(fp: &FlowProblem, candidate: &GridPath, x: f64) -> Result<f64> {
    if candidate.grid() != fp.grid() || candidate.dim() != 1 {
        return Err(Error::ShapeMismatch(
            "candidate must live on the flow's grid".into(),
        ));
    }
    if candidate.value(0)[0] != x {
        return Err(Error::InvalidParameter {
            name: "candidate",
            reason: format!("starts at {} instead of {x}", candidate.value(0)[0]),
        });
    }
    let n = fp.steps();
    let reference = *fp.march(0, x)?.last().expect("nonempty");
    let deviations: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|r| {
            Ok((fp
                .march(r, candidate.value(r)[0])?
                .last()
                .expect("nonempty")
                - reference)
                .abs())
        })
        .collect::<Result<_>>()?;
    Ok(deviations.into_iter().fold(0.0, f64::max))
}

/// Setup for contrasting the noiseless and noisy equations with drift
/// `c|x|^θ` (cut off at `radius`) from `x₀ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastConfig {
    pub c: f64,
    pub theta: f64,
    pub radius: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Grid sizes; all must divide the largest.
    pub levels: Vec<usize>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            theta: 0.5,
            radius: 2.0,
            horizon: 1.0,
            seed: 42,
            levels: vec![512, 1024, 2048, 4096],
            picard_tol: 1e-12,
            picard_max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastLevel {
    pub steps: usize,
    /// Left-point residuals of the zero solution and of the envelope.
    pub noiseless_residuals: (f64, f64),
    /// `sup |Euler - Picard|` for Picard started from `B` and from envelope `+ B`.
    pub noisy_distances: (f64, f64),
    pub picard_iterations: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastReport {
    pub levels: Vec<ContrastLevel>,
    /// `sup |0 - envelope|` on `[0, T]`: the noiseless solutions differ.
    pub noiseless_gap: f64,
    /// Largest inter-scheme distance at the finest level over the coarsest.
    pub noisy_ratio: f64,
    pub noisy_fit: OrderFit,
}

/// `((1-θ) c t)^{1/(1-θ)}`, the nonzero noiseless solution from `0`.
pub fn envelope(c: f64, theta: f64, t: f64) -> f64 {
    ((1.0 - theta) * c * t).powf(1.0 / (1.0 - theta))
}

fn left_point_residual(f: &dyn Fn(f64) -> f64, path: &[f64], h: f64) -> f64 {
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for k in 1..path.len() {
        acc += f(path[k - 1]) * h;
        worst = worst.max((path[k] - path[0] - acc).abs());
    }
    worst
}

pub fn nonuniqueness_contrast(cfg: &ContrastConfig) -> Result<ContrastReport> {
    use crate::rde::{solve_euler, solve_picard_from, Drift, RdeProblem};
    use crate::rough_lift::lift_piecewise_linear;
    use crate::transform::VectorField;
    use nalgebra::{DMatrix, DVector};

    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("{} outside (0, 1)", cfg.theta),
        });
    }
    let finest = *cfg.levels.iter().max().ok_or(Error::InvalidParameter {
        name: "levels",
        reason: "no grid sizes".into(),
    })?;
    if cfg.levels.iter().any(|&n| n == 0 || finest % n != 0) {
        return Err(Error::InvalidParameter {
            name: "levels",
            reason: "every level must divide the finest".into(),
        });
    }
    let (c, theta) = (cfg.c, cfg.theta);
    let drift = ScalarDrift::new(move |x| c * x.abs().powf(theta), theta, cfg.radius)?;
    let sup = c * (2.0 * cfg.radius).powf(theta);
    let fine_grid = TimeGrid::new(cfg.horizon, finest)?;
    let fine =
        FbmSampler::new(FbmParams::new(0.5, 1, fine_grid, cfg.seed).with_oversample(1))?.sample(0);

    let mut levels = Vec::new();
    for &n in &cfg.levels {
        let grid = TimeGrid::new(cfg.horizon, n)?;
        let h = grid.step();
        let f = |x: f64| drift.eval(x);
        let zero = vec![0.0; n + 1];
        let env: Vec<f64> = grid.points().map(|t| envelope(c, theta, t)).collect();
        let noiseless_residuals = (
            left_point_residual(&f, &zero, h),
            left_point_residual(&f, &env, h),
        );

        let rp = Arc::new(lift_piecewise_linear(&fine, finest / n, 0.45)?);
        let d2 = drift.clone();
        let rde_drift = Drift::new(
            1,
            move |x| DVector::from_element(1, d2.eval(x[0])),
            theta,
            sup,
        )?;
        let prob = RdeProblem::new(
            DVector::zeros(1),
            rde_drift,
            VectorField::identity(1),
            rp.clone(),
        )?;
        let euler = solve_euler(&prob)?;
        let start = |offset: &dyn Fn(f64) -> f64| -> Result<crate::controlled::ControlledPath> {
            let b0 = rp.base().value(0)[0];
            let vals = (0..=n)
                .map(|i| offset(grid.point(i)) + rp.base().value(i)[0] - b0)
                .collect();
            crate::controlled::ControlledPath::new(
                rp.clone(),
                GridPath::scalar(grid, vals)?,
                vec![DMatrix::identity(1, 1); n + 1],
                rp.alpha(),
            )
        };
        let from_b =
            solve_picard_from(&prob, start(&|_| 0.0)?, cfg.picard_tol, cfg.picard_max_iter)?;
        let from_env = solve_picard_from(
            &prob,
            start(&|t| envelope(c, theta, t))?,
            cfg.picard_tol,
            cfg.picard_max_iter,
        )?;
        levels.push(ContrastLevel {
            steps: n,
            noiseless_residuals,
            noisy_distances: (
                euler.path().sup_distance(from_b.path())?,
                euler.path().sup_distance(from_env.path())?,
            ),
            picard_iterations: (
                from_b.diagnostics().iterations,
                from_env.diagnostics().iterations,
            ),
        });
    }
    let worst = |l: &ContrastLevel| l.noisy_distances.0.max(l.noisy_distances.1);
    let coarsest = levels.iter().min_by_key(|l| l.steps).expect("nonempty");
    let finest_level = levels.iter().max_by_key(|l| l.steps).expect("nonempty");
    let noisy_ratio = worst(finest_level) / worst(coarsest);
    let scales: Vec<f64> = levels
        .iter()
        .map(|l| cfg.horizon / l.steps as f64)
        .collect();
    let dists: Vec<f64> = levels.iter().map(worst).collect();
    Ok(ContrastReport {
        noiseless_gap: envelope(c, theta, cfg.horizon),
        noisy_ratio,
        noisy_fit: fit_order(&scales, &dists)?,
        levels,
    })
}
