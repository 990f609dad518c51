//! Level-2 rough paths over a grid.
//!
//! Only the level-2 increments on consecutive intervals are stored. Any
//! other pair is rebuilt by folding Chen's relation
//! `𝔹_{i,k+1} = 𝔹_{i,k} + 𝔹_{k,k+1} + W_{i,k} ⊗ W_{k,k+1}` from the left,
//! so stored data can never be Chen-inconsistent. [`Level2Table`] holds
//! arbitrary per-pair values when that guarantee must be tested.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controlled::{rough_integral, ControlledPath};
use crate::error::{Error, Result};
use crate::grid_path::{two_param_holder_norm, GridPath, HolderReport, TimeGrid};
use crate::numerics::trapezoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// Symmetric part equals `½ W ⊗ W` (Stratonovich-consistent).
    Geometric,
    /// Brownian Itô lift: geometric minus `½ (t - s) I`.
    Ito,
}

impl Flavor {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flavor::Geometric => "geometric",
            Flavor::Ito => "ito",
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Flavor::Geometric),
            "ito" => Ok(Flavor::Ito),
            other => Err(Error::Parse(format!("unknown flavor `{other}`"))),
        }
    }
}

/// `(W, 𝔹)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughPath {
    base: GridPath,
    level2: Vec<DMatrix<f64>>,
    flavor: Flavor,
    alpha: f64,
}

impl RoughPath {
    pub fn new(
        base: GridPath,
        level2: Vec<DMatrix<f64>>,
        flavor: Flavor,
        alpha: f64,
    ) -> Result<Self> {
        if level2.len() != base.steps() {
            return Err(Error::ShapeMismatch(format!(
                "{} level-2 increments for {} intervals",
                level2.len(),
                base.steps()
            )));
        }
        let d = base.dim();
        for (k, m) in level2.iter().enumerate() {
            if m.shape() != (d, d) {
                return Err(Error::ShapeMismatch(format!(
                    "level-2 increment {k} has shape {:?}, expected ({d}, {d})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(k));
            }
        }
        if !(alpha > 1.0 / 3.0 && alpha < 0.5 + 1e-12) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("{alpha} outside (1/3, 1/2]"),
            });
        }
        Ok(Self {
            base,
            level2,
            flavor,
            alpha,
        })
    }

    pub fn base(&self) -> &GridPath {
        &self.base
    }

    pub fn grid(&self) -> &TimeGrid {
        self.base.grid()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn steps(&self) -> usize {
        self.base.steps()
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Stored `𝔹_{t_k, t_{k+1}}`.
    pub fn level2(&self, k: usize) -> &DMatrix<f64> {
        &self.level2[k]
    }

    pub fn level2_all(&self) -> &[DMatrix<f64>] {
        &self.level2
    }

    /// Restriction to `[0, t_steps]`.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        Self::new(
            self.base.prefix(steps)?,
            self.level2[..steps].to_vec(),
            self.flavor,
            self.alpha,
        )
    }

    /// `𝔹_{t_i, t_j}` by left fold of Chen's relation.
    pub fn chen_reconstruct(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        if i > j || j > self.steps() {
            return Err(Error::IndexOutOfRange {
                i,
                j,
                steps: self.steps(),
            });
        }
        let d = self.dim();
        let mut area = DMatrix::zeros(d, d);
        let mut path = DVector::zeros(d);
        for k in i..j {
            let dw = self.base.increment_unchecked(k, k + 1);
            area += &self.level2[k] + &path * dw.transpose();
            path += dw;
        }
        Ok(area)
    }

    /// Calls `visit(j, W_{i,j}, 𝔹_{i,j})` for `j = i+1..=n`, folding once.
    pub fn fold_from(&self, i: usize, mut visit: impl FnMut(usize, &DVector<f64>, &DMatrix<f64>)) {
        let d = self.dim();
        let mut area = DMatrix::zeros(d, d);
        let mut path = DVector::zeros(d);
        for k in i..self.steps() {
            let dw = self.base.increment_unchecked(k, k + 1);
            area += &self.level2[k] + &path * dw.transpose();
            path += dw;
            visit(k + 1, &path, &area);
        }
    }

    /// `‖𝔹‖_{exponent}` over grid pairs (Frobenius norm per pair).
    pub fn level2_holder_norm(&self, exponent: f64) -> Result<HolderReport> {
        two_param_holder_norm(self.grid(), exponent, |i| {
            let mut row = Vec::with_capacity(self.steps() - i);
            self.fold_from(i, |_, _, area| row.push(area.norm()));
            Ok(row)
        })
    }

    /// Companion CSV: one row per grid point, `t, B1..Bd, L1_1..Ld_d`, where
    /// the `L` entries of row `i` are `𝔹_{t_i, t_{i+1}}` (zero on the last row).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("B{k}")));
        for r in 1..=d {
            for c in 1..=d {
                header.push(format!("L{r}_{c}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let zero = DMatrix::zeros(d, d);
        for i in 0..=self.steps() {
            write!(out, "{:.16e}", self.grid().point(i))?;
            for v in self.base.value(i) {
                write!(out, ",{v:.16e}")?;
            }
            let area = self.level2.get(i).unwrap_or(&zero);
            for r in 0..d {
                for c in 0..d {
                    write!(out, ",{:.16e}", area[(r, c)])?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Sidecar JSON recording flavor and exponent.
    pub fn sidecar_json(&self) -> String {
        format!(
            "{{\n  \"flavor\": \"{}\",\n  \"alpha\": {},\n  \"dim\": {},\n  \"steps\": {}\n}}\n",
            self.flavor.as_str(),
            self.alpha,
            self.dim(),
            self.steps()
        )
    }

    pub fn read_csv<R: BufRead>(input: R, flavor: Flavor, alpha: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty input".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let ncol = header.trim().split(',').count();
        // 1 + d + d² columns
        let d = (1..=16)
            .find(|d| 1 + d + d * d == ncol)
            .ok_or_else(|| Error::Parse(format!("cannot infer dimension from {ncol} columns")))?;
        let mut rows = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .trim()
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("{e}")))?;
            if fields.len() != ncol {
                return Err(Error::Parse("ragged row".into()));
            }
            rows.push(fields);
        }
        if rows.len() < 2 {
            return Err(Error::Parse("need at least two rows".into()));
        }
        let grid = TimeGrid::new(rows.last().unwrap()[0], rows.len() - 1)?;
        let values = rows.iter().flat_map(|r| r[1..=d].to_vec()).collect();
        let base = GridPath::new(grid, d, values)?;
        let level2 = rows[..rows.len() - 1]
            .iter()
            .map(|r| DMatrix::from_row_slice(d, d, &r[1 + d..]))
            .collect();
        Self::new(base, level2, flavor, alpha)
    }
}

/// Geometric lift of the piecewise-linear interpolant of `fine`, observed on
/// every `coarsen`-th grid point.
pub fn lift_piecewise_linear(fine: &GridPath, coarsen: usize, alpha: f64) -> Result<RoughPath> {
    if coarsen == 0 || !fine.steps().is_multiple_of(coarsen) {
        return Err(Error::InvalidParameter {
            name: "coarsen",
            reason: format!("{coarsen} does not divide {} steps", fine.steps()),
        });
    }
    let base = fine.subsample(coarsen)?;
    let d = fine.dim();
    let level2 = (0..base.steps())
        .map(|k| {
            let mut area = DMatrix::zeros(d, d);
            let mut path = DVector::zeros(d);
            for s in k * coarsen..(k + 1) * coarsen {
                let dw = fine.increment_unchecked(s, s + 1);
                area += (&dw * dw.transpose()) * 0.5 + &path * dw.transpose();
                path += dw;
            }
            area
        })
        .collect();
    RoughPath::new(base, level2, Flavor::Geometric, alpha)
}

/// Brownian Itô lift `𝔹^{Ito} = 𝔹^{Strat} - ½ h I` per interval.
///
/// Only defined for Brownian motion, so `hurst` must be exactly `1/2`.
pub fn lift_ito(geometric: &RoughPath, hurst: f64) -> Result<RoughPath> {
    if hurst != 0.5 {
        return Err(Error::Unsupported(format!(
            "the Itô lift is only defined for Brownian motion, got H = {hurst}"
        )));
    }
    lift_ito_with_rate(geometric, |_| 1.0)
}

/// Itô-type lift with a time-dependent quadratic-variation rate:
/// `𝔹^{Ito}_{u,v} = 𝔹_{u,v} - ½ (∫_u^v rate) I`, the integral by the
/// trapezoid rule.
pub fn lift_ito_with_rate(geometric: &RoughPath, rate: impl Fn(f64) -> f64) -> Result<RoughPath> {
    if geometric.flavor != Flavor::Geometric {
        return Err(Error::Unsupported(
            "Itô correction needs a geometric lift".into(),
        ));
    }
    let d = geometric.dim();
    let grid = geometric.grid();
    let h = grid.step();
    let level2 = geometric
        .level2
        .iter()
        .enumerate()
        .map(|(k, area)| {
            let qv = 0.5 * h * (rate(grid.point(k)) + rate(grid.point(k + 1)));
            area - DMatrix::identity(d, d) * (0.5 * qv)
        })
        .collect();
    RoughPath::new(geometric.base.clone(), level2, Flavor::Ito, geometric.alpha)
}

/// Anything that can report `W_{i,j}` and `𝔹_{i,j}` on a grid.
pub trait Level2Source {
    fn steps(&self) -> usize;
    fn path_increment(&self, i: usize, j: usize) -> DVector<f64>;
    fn area(&self, i: usize, j: usize) -> DMatrix<f64>;
}

impl Level2Source for RoughPath {
    fn steps(&self) -> usize {
        RoughPath::steps(self)
    }
    fn path_increment(&self, i: usize, j: usize) -> DVector<f64> {
        self.base.increment_unchecked(i, j)
    }
    fn area(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.chen_reconstruct(i, j)
            .expect("indices checked by caller")
    }
}

/// Dense per-pair table of level-2 values; unlike [`RoughPath`] it can hold
/// Chen-inconsistent data.
#[derive(Debug, Clone)]
pub struct Level2Table {
    base: GridPath,
    areas: Vec<DMatrix<f64>>,
}

impl Level2Table {
    pub fn from_rough_path(rp: &RoughPath) -> Self {
        let n = rp.steps();
        let d = rp.dim();
        let mut areas = vec![DMatrix::zeros(d, d); (n + 1) * (n + 1)];
        for i in 0..n {
            rp.fold_from(i, |j, _, area| areas[i * (n + 1) + j] = area.clone());
        }
        Self {
            base: rp.base.clone(),
            areas,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.areas[i * (self.base.steps() + 1) + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: DMatrix<f64>) -> Result<()> {
        let n = self.base.steps();
        if i > j || j > n {
            return Err(Error::IndexOutOfRange { i, j, steps: n });
        }
        self.areas[i * (n + 1) + j] = value;
        Ok(())
    }
}

impl Level2Source for Level2Table {
    fn steps(&self) -> usize {
        self.base.steps()
    }
    fn path_increment(&self, i: usize, j: usize) -> DVector<f64> {
        self.base.increment_unchecked(i, j)
    }
    fn area(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.get(i, j).clone()
    }
}

/// Largest Chen residual over triples `i < u < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChenReport {
    pub residual: f64,
    pub triple: (usize, usize, usize),
    pub triples_checked: usize,
}

/// Chen residual `‖𝔹_{i,j} - 𝔹_{i,u} - 𝔹_{u,j} - W_{i,u} ⊗ W_{u,j}‖`.
///
/// All triples are visited when there are at most `max_triples` of them;
/// otherwise `max_triples` are drawn with a seeded generator.
pub fn check_chen<S: Level2Source>(source: &S, max_triples: usize, seed: u64) -> ChenReport {
    let n = source.steps();
    let residual = |i: usize, u: usize, j: usize| -> f64 {
        let lhs = source.area(i, j);
        let rhs = source.area(i, u)
            + source.area(u, j)
            + source.path_increment(i, u) * source.path_increment(u, j).transpose();
        (lhs - rhs).norm()
    };
    let mut report = ChenReport {
        residual: 0.0,
        triple: (0, 0, 0),
        triples_checked: 0,
    };
    let consider = |i, u, j, report: &mut ChenReport| {
        let r = residual(i, u, j);
        report.triples_checked += 1;
        if r > report.residual {
            report.residual = r;
            report.triple = (i, u, j);
        }
    };
    if n < 2 {
        return report;
    }
    let total = (n + 1) * n * (n - 1) / 6;
    if total <= max_triples {
        for i in 0..=n {
            for u in i + 1..=n {
                for j in u + 1..=n {
                    consider(i, u, j, &mut report);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_triples {
            let t = loop {
                let mut t = [
                    rng.random_range(0..=n),
                    rng.random_range(0..=n),
                    rng.random_range(0..=n),
                ];
                t.sort();
                if t[0] < t[1] && t[1] < t[2] {
                    break t;
                }
            };
            consider(t[0], t[1], t[2], &mut report);
        }
    }
    report
}

/// Largest geometric defect `‖Sym(𝔹_{s,t}) - ½ W_{s,t} ⊗ W_{s,t}‖_F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricReport {
    pub defect: f64,
    pub pair: (usize, usize),
}

fn symmetry_defect(dw: &DVector<f64>, area: &DMatrix<f64>) -> f64 {
    let sym = (area + area.transpose()) * 0.5;
    (sym - (dw * dw.transpose()) * 0.5).norm()
}

pub fn check_geometric(rp: &RoughPath) -> GeometricReport {
    let mut report = GeometricReport {
        defect: 0.0,
        pair: (0, 0),
    };
    for i in 0..rp.steps() {
        rp.fold_from(i, |j, dw, area| {
            let defect = symmetry_defect(dw, area);
            if defect > report.defect {
                report.defect = defect;
                report.pair = (i, j);
            }
        });
    }
    report
}

pub fn check_geometric_table(table: &Level2Table) -> GeometricReport {
    let n = table.steps();
    let mut report = GeometricReport {
        defect: 0.0,
        pair: (0, 0),
    };
    for i in 0..n {
        for j in i + 1..=n {
            let defect = symmetry_defect(&table.path_increment(i, j), table.get(i, j));
            if defect > report.defect {
                report.defect = defect;
                report.pair = (i, j);
            }
        }
    }
    report
}

/// `|∫ Y d𝐁^{Strat} - ∫ Y d𝐁^{Ito} - ½ ∫ tr Y' dr|` over the whole grid,
/// with the time integral by the trapezoid rule.
pub fn check_ito_strat_correction(
    y: &ControlledPath,
    strat: &RoughPath,
    ito: &RoughPath,
) -> Result<f64> {
    if strat.base() != ito.base() || y.reference().base() != strat.base() {
        return Err(Error::ShapeMismatch(
            "integrand and lifts do not share a base path".into(),
        ));
    }
    if strat.flavor() != Flavor::Geometric || ito.flavor() != Flavor::Ito {
        return Err(Error::Unsupported(
            "expected a geometric and an Itô lift".into(),
        ));
    }
    let n = y.steps();
    let d = strat.dim();
    let rows = y.dim() / d;
    let s = rough_integral(y, strat, 0, n)?;
    let i = rough_integral(y, ito, 0, n)?;
    let h = strat.grid().step();
    let correction = DVector::from_fn(rows, |a, _| {
        let trace: Vec<f64> = y
            .derivative()
            .iter()
            .map(|m| (0..d).map(|b| m[(a * d + b, b)]).sum())
            .collect();
        0.5 * trapezoid(&trace, h)
    });
    Ok((s - i - correction).norm())
}

/// Shared handle used by callers that build several controlled paths on one lift.
pub type SharedRoughPath = Arc<RoughPath>;
