//! Paths sampled on uniform time grids, their increments, and discrete
//! Hölder norms.
//!
//! Every path-valued object in the crate (noise samples, RDE solutions,
//! flow trajectories) is a [`GridPath`]. Hölder norms are suprema over grid
//! pairs only, so they approximate the continuous-time norms from below.

use std::io::{BufRead, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Pair count above which [`PairScan::Auto`] switches to dyadic subsampling.
pub const FULL_SCAN_LIMIT: usize = 4096;

/// Uniform partition `t_i = i * T / n` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!("must be finite and positive, got {horizon}"),
            });
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Mesh size `T / n`.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|i| self.point(i))
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * factor,
        }
    }

    /// Grid covering `[0, t_steps]` with the same mesh.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps {
            return Err(Error::IndexOutOfRange {
                i: 0,
                j: steps,
                steps: self.steps,
            });
        }
        Self::new(self.point(steps), steps)
    }
}

/// A `d`-valued path stored row-major, one row per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be at least 1".into(),
            });
        }
        if values.len() != (grid.steps() + 1) * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for {} points of dimension {dim}, got {}",
                (grid.steps() + 1) * dim,
                grid.steps() + 1,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos / dim));
        }
        Ok(Self { grid, dim, values })
    }

    /// Samples `f(t)` at every grid point.
    pub fn from_fn(grid: TimeGrid, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((grid.steps() + 1) * dim);
        for t in grid.points() {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "path function returned {} components, expected {dim}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Self::new(grid, dim, values)
    }

    /// Scalar path from one value per grid point.
    pub fn scalar(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.value(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Component `k` at every grid point.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(k)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i > j || j > self.steps() {
            return Err(Error::IndexOutOfRange {
                i,
                j,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// `W_{t_i, t_j} = W_{t_j} - W_{t_i}`.
    pub fn increment(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        self.check_pair(i, j)?;
        Ok(self.increment_unchecked(i, j))
    }

    pub(crate) fn increment_unchecked(&self, i: usize, j: usize) -> DVector<f64> {
        let a = self.value(i);
        let b = self.value(j);
        DVector::from_iterator(self.dim, a.iter().zip(b).map(|(x, y)| y - x))
    }

    fn increment_norm(&self, i: usize, j: usize) -> f64 {
        self.value(i)
            .iter()
            .zip(self.value(j))
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt()
    }

    /// Every `factor`-th point, on the coarser grid.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::InvalidParameter {
                name: "factor",
                reason: format!("{factor} does not divide {} steps", self.steps()),
            });
        }
        let grid = TimeGrid::new(self.grid.horizon(), self.steps() / factor)?;
        let values = (0..=grid.steps())
            .flat_map(|i| self.value(i * factor).to_vec())
            .collect();
        Self::new(grid, self.dim, values)
    }

    /// Linear interpolation onto a grid with `factor` times as many steps.
    pub fn interpolate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter {
                name: "factor",
                reason: "must be at least 1".into(),
            });
        }
        let grid = self.grid.refined(factor);
        let mut values = Vec::with_capacity((grid.steps() + 1) * self.dim);
        for i in 0..self.steps() {
            let (a, b) = (self.value(i), self.value(i + 1));
            for k in 0..factor {
                let w = k as f64 / factor as f64;
                values.extend(a.iter().zip(b).map(|(x, y)| x + w * (y - x)));
            }
        }
        values.extend_from_slice(self.value(self.steps()));
        Self::new(grid, self.dim, values)
    }

    /// Restriction to `[0, t_steps]`.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        let grid = self.grid.prefix(steps)?;
        Self::new(
            grid,
            self.dim,
            self.values[..(steps + 1) * self.dim].to_vec(),
        )
    }

    /// Pointwise map to another path on the same grid.
    pub fn map(&self, dim: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((self.steps() + 1) * dim);
        for i in 0..=self.steps() {
            let v = f(self.value(i));
            if v.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "map returned {} components, expected {dim}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Self::new(self.grid, dim, values)
    }

    /// `sup_i |self_i - other_i|` (Euclidean norm per point).
    pub fn sup_distance(&self, other: &GridPath) -> Result<f64> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::ShapeMismatch("paths live on different grids".into()));
        }
        Ok((0..=self.steps())
            .map(|i| {
                self.value(i)
                    .iter()
                    .zip(other.value(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max))
    }

    /// CSV with header `t,x1,...,xd` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|k| format!("x{k}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..=self.steps() {
            write!(out, "{:.16e}", self.grid.point(i))?;
            for v in self.value(i) {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty input".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let columns: Vec<&str> = header.trim().split(',').collect();
        if columns.first() != Some(&"t") || columns.len() < 2 {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        for (k, name) in columns.iter().enumerate().skip(1) {
            if *name != format!("x{k}") {
                return Err(Error::Parse(format!("bad column `{name}`")));
            }
        }
        let dim = columns.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    dim + 1,
                    fields.len()
                )));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::Parse(
                "need at least two rows starting at t = 0".into(),
            ));
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
        for (i, t) in times.iter().enumerate() {
            if (t - grid.point(i)).abs() > 1e-12 * grid.horizon() {
                return Err(Error::Parse(format!("row {i}: grid is not uniform")));
            }
        }
        Self::new(grid, dim, values)
    }
}

/// Which grid pairs a Hölder scan visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairScan {
    /// All pairs up to [`FULL_SCAN_LIMIT`] steps, dyadic beyond.
    #[default]
    Auto,
    Full,
    /// Only pairs with `j - i` a power of two.
    Dyadic,
}

impl PairScan {
    fn dyadic(self, steps: usize) -> bool {
        match self {
            PairScan::Auto => steps > FULL_SCAN_LIMIT,
            PairScan::Full => false,
            PairScan::Dyadic => true,
        }
    }
}

/// Result of a discrete Hölder scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderReport {
    pub exponent: f64,
    pub norm: f64,
    /// Grid pair realizing `norm`; smallest lexicographically on ties.
    pub pair: (usize, usize),
}

fn check_exponent(exponent: f64, upper_inclusive: bool) -> Result<()> {
    let ok = exponent > 0.0
        && if upper_inclusive {
            exponent <= 1.0
        } else {
            exponent < 1.0
        };
    if !ok {
        return Err(Error::InvalidParameter {
            name: "exponent",
            reason: format!("{exponent} outside the admissible range"),
        });
    }
    Ok(())
}

fn scan_offsets(steps: usize, i: usize, dyadic: bool) -> Box<dyn Iterator<Item = usize>> {
    if dyadic {
        Box::new(
            std::iter::successors(Some(1usize), |k| k.checked_mul(2))
                .map(move |k| i + k)
                .take_while(move |&j| j <= steps),
        )
    } else {
        Box::new(i + 1..=steps)
    }
}

/// `max_{i<j} |W_{t_i,t_j}| / (t_j - t_i)^alpha`.
pub fn holder_norm(path: &GridPath, alpha: f64) -> Result<HolderReport> {
    holder_norm_with(path, alpha, PairScan::Auto)
}

pub fn holder_norm_with(path: &GridPath, alpha: f64, scan: PairScan) -> Result<HolderReport> {
    check_exponent(alpha, false)?;
    let n = path.steps();
    if n == 0 {
        return Err(Error::DegenerateGrid);
    }
    let grid = path.grid();
    let dyadic = scan.dyadic(n);
    let mut best = HolderReport {
        exponent: alpha,
        norm: 0.0,
        pair: (0, 1),
    };
    for i in 0..n {
        for j in scan_offsets(n, i, dyadic) {
            let ratio = path.increment_norm(i, j) / (grid.point(j) - grid.point(i)).powf(alpha);
            if ratio > best.norm {
                best.norm = ratio;
                best.pair = (i, j);
            }
        }
    }
    Ok(best)
}

/// `max_{i<j} |field(i, j)| / (t_j - t_i)^exponent` for a two-parameter field.
///
/// `row(i)` must return the magnitudes `|field(i, j)|` for `j = i+1..=n`.
pub fn two_param_holder_norm<F>(grid: &TimeGrid, exponent: f64, row: F) -> Result<HolderReport>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    two_param_holder_norm_with(grid, exponent, PairScan::Auto, row)
}

pub fn two_param_holder_norm_with<F>(
    grid: &TimeGrid,
    exponent: f64,
    scan: PairScan,
    mut row: F,
) -> Result<HolderReport>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    check_exponent(exponent, true)?;
    let n = grid.steps();
    if n == 0 {
        return Err(Error::DegenerateGrid);
    }
    let dyadic = scan.dyadic(n);
    let mut best = HolderReport {
        exponent,
        norm: 0.0,
        pair: (0, 1),
    };
    for i in 0..n {
        let magnitudes = row(i)?;
        if magnitudes.len() != n - i {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} entries, expected {}",
                magnitudes.len(),
                n - i
            )));
        }
        for j in scan_offsets(n, i, dyadic) {
            let m = magnitudes[j - i - 1];
            if !m.is_finite() {
                return Err(Error::NonFinite(j));
            }
            let ratio = m / (grid.point(j) - grid.point(i)).powf(exponent);
            if ratio > best.norm {
                best.norm = ratio;
                best.pair = (i, j);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn increment_basics() {
        let p = GridPath::scalar(TimeGrid::new(2.0, 2).unwrap(), vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(p.increment(1, 1).unwrap()[0], 0.0);
        assert_eq!(p.increment(0, 2).unwrap()[0], 3.0);
        assert!(matches!(
            p.increment(2, 1),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            p.increment(0, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn constant_path_has_zero_norm() {
        let p = GridPath::from_fn(unit_grid(8), 2, |_| vec![1.5, -2.0]).unwrap();
        assert_eq!(holder_norm(&p, 0.4).unwrap().norm, 0.0);
    }

    #[test]
    fn linear_path_norm_matches_brute_force() {
        let p = GridPath::from_fn(unit_grid(4), 1, |t| vec![t]).unwrap();
        // brute force over all 10 pairs, including the trivial diagonal ones
        let mut brute: f64 = 0.0;
        for i in 0..=4 {
            for j in i..=4 {
                if i < j {
                    let dt = (j - i) as f64 / 4.0;
                    brute = brute.max(dt / dt.sqrt());
                }
            }
        }
        let report = holder_norm(&p, 0.5).unwrap();
        assert_eq!(report.pair, (0, 4));
        assert!((report.norm - 1.0).abs() < 1e-15);
        assert!((report.norm - brute).abs() < 1e-15);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let p = GridPath::scalar(TimeGrid::new(1.0, 0).unwrap(), vec![0.0]).unwrap();
        assert_eq!(holder_norm(&p, 0.5), Err(Error::DegenerateGrid));
        assert!(holder_norm(&p, 1.0).is_err());
    }

    #[test]
    fn two_param_closed_forms() {
        let grid = unit_grid(16);
        let zero = two_param_holder_norm(&grid, 0.9, |i| Ok(vec![0.0; 16 - i])).unwrap();
        assert_eq!(zero.norm, 0.0);

        let quad = two_param_holder_norm(&grid, 1.0, |i| {
            Ok((i + 1..=16)
                .map(|j| (grid.point(j) - grid.point(i)).powi(2))
                .collect())
        })
        .unwrap();
        assert!((quad.norm - 1.0).abs() < 1e-15);
        assert_eq!(quad.pair, (0, 16));

        // half the square of a linear path with slope 3 at exponent 2*alpha = 0.8
        let slope: f64 = 3.0;
        let t_end: f64 = 2.0;
        let grid = TimeGrid::new(t_end, 10).unwrap();
        let report = two_param_holder_norm(&grid, 0.8, |i| {
            Ok((i + 1..=10)
                .map(|j| 0.5 * (slope * (grid.point(j) - grid.point(i))).powi(2))
                .collect())
        })
        .unwrap();
        let expected = 0.5 * slope * slope * t_end.powf(2.0 - 0.8);
        assert!((report.norm - expected).abs() < 1e-12 * expected);
        assert_eq!(report.pair, (0, 10));
    }

    #[test]
    fn two_param_missing_entries() {
        let grid = unit_grid(4);
        let err = two_param_holder_norm(&grid, 0.8, |_| Ok(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn dyadic_scan_is_a_lower_bound() {
        let p = GridPath::from_fn(unit_grid(64), 1, |t| vec![(7.0 * t).sin() + t * t]).unwrap();
        let full = holder_norm_with(&p, 0.4, PairScan::Full).unwrap();
        let dyadic = holder_norm_with(&p, 0.4, PairScan::Dyadic).unwrap();
        assert!(dyadic.norm <= full.norm);
        assert!(dyadic.norm > 0.5 * full.norm);
    }

    #[test]
    fn csv_round_trip() {
        let p = GridPath::from_fn(TimeGrid::new(0.7, 5).unwrap(), 2, |t| {
            vec![t.exp(), -t / 3.0]
        })
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let back = GridPath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn non_finite_values_rejected() {
        let err = GridPath::scalar(unit_grid(2), vec![0.0, f64::NAN, 1.0]).unwrap_err();
        assert_eq!(err, Error::NonFinite(1));
    }

    fn arb_path() -> impl Strategy<Value = GridPath> {
        (1usize..24, 1usize..3).prop_flat_map(|(n, d)| {
            prop::collection::vec(-5.0f64..5.0, (n + 1) * d)
                .prop_map(move |v| GridPath::new(TimeGrid::new(1.3, n).unwrap(), d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn increments_are_additive(p in arb_path(), a in 0usize..100, b in 0usize..100, c in 0usize..100) {
            let n = p.steps();
            let mut idx = [a % (n + 1), b % (n + 1), c % (n + 1)];
            idx.sort();
            let [i, j, k] = idx;
            let whole = p.increment(i, k).unwrap();
            let split = p.increment(i, j).unwrap() + p.increment(j, k).unwrap();
            prop_assert!((whole - split).amax() <= 1e-14);
        }

        #[test]
        fn sum_of_consecutive_increments(p in arb_path()) {
            let n = p.steps();
            let mut acc = DVector::zeros(p.dim());
            for k in 0..n {
                acc += p.increment(k, k + 1).unwrap();
            }
            prop_assert!((acc - p.increment(0, n).unwrap()).amax() <= 1e-13);
        }

        #[test]
        fn holder_norm_monotone_in_alpha(p in arb_path(), a in 0.05f64..0.9, da in 0.0f64..0.09) {
            // pair lengths <= 1: (t_j - t_i)^alpha shrinks as alpha grows
            let unit = GridPath::new(TimeGrid::new(1.0, p.steps()).unwrap(), p.dim(), p.values().to_vec()).unwrap();
            let lo = holder_norm(&unit, a).unwrap().norm;
            let hi = holder_norm(&unit, a + da).unwrap().norm;
            prop_assert!(hi >= lo - 1e-12);

            // pair lengths >= 1: the opposite direction
            let long = GridPath::new(TimeGrid::new(p.steps() as f64, p.steps()).unwrap(), p.dim(), p.values().to_vec()).unwrap();
            let lo = holder_norm(&long, a).unwrap().norm;
            let hi = holder_norm(&long, a + da).unwrap().norm;
            prop_assert!(hi <= lo + 1e-12);
        }

        #[test]
        fn holder_norm_homogeneous(p in arb_path(), alpha in 0.1f64..0.9) {
            let doubled = GridPath::new(*p.grid(), p.dim(), p.values().iter().map(|v| 2.0 * v).collect()).unwrap();
            let a = holder_norm(&p, alpha).unwrap().norm;
            let b = holder_norm(&doubled, alpha).unwrap().norm;
            prop_assert!((b - 2.0 * a).abs() <= 1e-12 * (1.0 + b));
        }

        #[test]
        fn interpolation_never_lowers_the_norm(p in arb_path(), factor in 1usize..4, alpha in 0.1f64..0.9) {
            let fine = p.interpolate(factor).unwrap();
            let coarse = holder_norm(&p, alpha).unwrap().norm;
            prop_assert!(holder_norm(&fine, alpha).unwrap().norm >= coarse - 1e-12);
        }

        #[test]
        fn reported_pair_realizes_the_norm(p in arb_path(), alpha in 0.1f64..0.9) {
            let r = holder_norm(&p, alpha).unwrap();
            let (i, j) = r.pair;
            let g = p.grid();
            let direct = p.increment(i, j).unwrap().norm() / (g.point(j) - g.point(i)).powf(alpha);
            prop_assert!((direct - r.norm).abs() <= 1e-12 * (1.0 + r.norm));
        }
    }
}
