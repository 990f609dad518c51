//! Controlled rough paths and the rough integral.
//!
//! A [`ControlledPath`] stores `Y` (values in `R^k`) and its Gubinelli
//! derivative `Y'` (a `k × d` matrix per grid point) relative to a
//! reference [`RoughPath`]. When `Y` is used as an integrand, `k = m * d`
//! and each value is read as a row-major `m × d` matrix; its derivative
//! entry `Y'[(a, b), c]` multiplies `𝔹^{c b}` in the compensated sum
//!
//! ```text
//! ∫_u^v Y dW ≈ Y_u W_{u,v} + Y'_u 𝔹_{u,v}
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid_path::{holder_norm, two_param_holder_norm, GridPath};
use crate::numerics::{fit_order, OrderFit, EXACT_FLOOR};
use crate::rough_lift::RoughPath;

/// A map `R^k -> R^p` with its Jacobian (`p × k`).
pub trait SmoothMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> DVector<f64>;
    fn jacobian(&self, y: &[f64]) -> DMatrix<f64>;
}

type ValueFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// [`SmoothMap`] built from closures.
#[derive(Clone)]
pub struct FnMap {
    input_dim: usize,
    output_dim: usize,
    value: ValueFn,
    jacobian: JacobianFn,
}

impl FnMap {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        value: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
        }
    }

    /// Componentwise scalar function with derivative.
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            1,
            move |y| DVector::from_element(1, f(y[0])),
            move |y| DMatrix::from_element(1, 1, df(y[0])),
        )
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, dim, DVector::from_column_slice, move |_| {
            DMatrix::identity(dim, dim)
        })
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &FnMap) -> Result<FnMap> {
        if inner.output_dim != self.input_dim {
            return Err(Error::ShapeMismatch("composed maps do not chain".into()));
        }
        let (outer_v, outer_j) = (self.value.clone(), self.jacobian.clone());
        let (inner_v, inner_j) = (inner.value.clone(), inner.jacobian.clone());
        let inner_v2 = inner_v.clone();
        Ok(FnMap::new(
            inner.input_dim,
            self.output_dim,
            move |y| outer_v(inner_v(y).as_slice()),
            move |y| outer_j(inner_v2(y).as_slice()) * inner_j(y),
        ))
    }
}

impl SmoothMap for FnMap {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn value(&self, y: &[f64]) -> DVector<f64> {
        (self.value)(y)
    }
    fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(y)
    }
}

/// `(Y, Y')` controlled by a reference rough path.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    reference: Arc<RoughPath>,
    values: GridPath,
    derivative: Vec<DMatrix<f64>>,
    alpha: f64,
}

/// `‖(Y, Y')‖_{W,α} = ‖Y'‖_α + ‖R^Y‖_{2α}` and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlledNorm {
    pub gubinelli: f64,
    pub remainder: f64,
    pub total: f64,
}

impl ControlledPath {
    pub fn new(
        reference: Arc<RoughPath>,
        values: GridPath,
        derivative: Vec<DMatrix<f64>>,
        alpha: f64,
    ) -> Result<Self> {
        let base = reference.base();
        if values.grid() != base.grid() {
            return Err(Error::ShapeMismatch(
                "controlled path and reference live on different grids".into(),
            ));
        }
        if derivative.len() != values.steps() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} derivative entries for {} grid points",
                derivative.len(),
                values.steps() + 1
            )));
        }
        let (k, d) = (values.dim(), base.dim());
        for (i, m) in derivative.iter().enumerate() {
            if m.shape() != (k, d) {
                return Err(Error::ShapeMismatch(format!(
                    "derivative at point {i} is {:?}, expected ({k}, {d})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self {
            reference,
            values,
            derivative,
            alpha,
        })
    }

    /// The rough path itself, `(W, I)`.
    pub fn of_reference(reference: Arc<RoughPath>) -> Self {
        let d = reference.dim();
        let n = reference.steps();
        let values = reference.base().clone();
        let alpha = reference.alpha();
        Self {
            reference,
            values,
            derivative: vec![DMatrix::identity(d, d); n + 1],
            alpha,
        }
    }

    pub fn reference(&self) -> &Arc<RoughPath> {
        &self.reference
    }

    pub fn values(&self) -> &GridPath {
        &self.values
    }

    pub fn derivative(&self) -> &[DMatrix<f64>] {
        &self.derivative
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn steps(&self) -> usize {
        self.values.steps()
    }

    /// Same `(Y, Y')` rebased on another rough path over the same base path.
    pub fn with_reference(&self, reference: Arc<RoughPath>) -> Result<Self> {
        if reference.base() != self.reference.base() {
            return Err(Error::ShapeMismatch(
                "rough paths have different base paths".into(),
            ));
        }
        Ok(Self {
            reference,
            ..self.clone()
        })
    }

    /// Restriction to `[0, t_steps]`, with the reference restricted too.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        let reference = Arc::new(self.reference.prefix(steps)?);
        Self::new(
            reference,
            self.values.prefix(steps)?,
            self.derivative[..=steps].to_vec(),
            self.alpha,
        )
    }

    /// `R^Y_{t_i,t_j} = Y_{t_i,t_j} - Y'_{t_i} W_{t_i,t_j}`.
    pub fn remainder(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        let dy = self.values.increment(i, j)?;
        let dw = self.reference.base().increment(i, j)?;
        Ok(dy - &self.derivative[i] * dw)
    }

    fn remainder_row(&self, i: usize) -> Vec<f64> {
        let base = self.reference.base();
        (i + 1..=self.steps())
            .map(|j| {
                let dy = self.values.increment_unchecked(i, j);
                let dw = base.increment_unchecked(i, j);
                (dy - &self.derivative[i] * dw).norm()
            })
            .collect()
    }

    /// `Y'` flattened row-major into a path of dimension `k * d`.
    pub fn derivative_path(&self) -> GridPath {
        let (k, d) = (self.dim(), self.reference.dim());
        let mut values = Vec::with_capacity((self.steps() + 1) * k * d);
        for m in &self.derivative {
            for a in 0..k {
                for c in 0..d {
                    values.push(m[(a, c)]);
                }
            }
        }
        GridPath::new(*self.values.grid(), k * d, values).expect("derivative entries are finite")
    }
}

/// Discrete controlled norm at the path's exponent.
pub fn controlled_norm(cp: &ControlledPath) -> Result<ControlledNorm> {
    controlled_norm_at(cp, cp.alpha)
}

/// Discrete controlled norm at an arbitrary exponent.
pub fn controlled_norm_at(cp: &ControlledPath, alpha: f64) -> Result<ControlledNorm> {
    let gubinelli = holder_norm(&cp.derivative_path(), alpha)?.norm;
    let remainder =
        two_param_holder_norm(cp.values.grid(), 2.0 * alpha, |i| Ok(cp.remainder_row(i)))?.norm;
    Ok(ControlledNorm {
        gubinelli,
        remainder,
        total: gubinelli + remainder,
    })
}

/// `(φ(Y), Dφ(Y) Y')`.
pub fn compose_smooth(map: &dyn SmoothMap, cp: &ControlledPath) -> Result<ControlledPath> {
    if map.input_dim() != cp.dim() {
        return Err(Error::ShapeMismatch(format!(
            "map takes {} inputs, path has dimension {}",
            map.input_dim(),
            cp.dim()
        )));
    }
    let p = map.output_dim();
    let mut values = Vec::with_capacity((cp.steps() + 1) * p);
    let mut derivative = Vec::with_capacity(cp.steps() + 1);
    for i in 0..=cp.steps() {
        let y = cp.values.value(i);
        let v = map.value(y);
        if v.len() != p {
            return Err(Error::ShapeMismatch(
                "map returned the wrong dimension".into(),
            ));
        }
        values.extend(v.iter());
        derivative.push(map.jacobian(y) * &cp.derivative[i]);
    }
    let values = GridPath::new(*cp.values.grid(), p, values)?;
    ControlledPath::new(cp.reference.clone(), values, derivative, cp.alpha)
}

fn integrand_rows(cp: &ControlledPath, rp: &RoughPath) -> Result<usize> {
    if rp.base().grid() != cp.values.grid() || rp.dim() != cp.reference.dim() {
        return Err(Error::ShapeMismatch(
            "integrator does not share the integrand's grid and dimension".into(),
        ));
    }
    let (k, d) = (cp.dim(), rp.dim());
    if k % d != 0 {
        return Err(Error::ShapeMismatch(format!(
            "integrand of dimension {k} cannot be read as an m × {d} matrix"
        )));
    }
    Ok(k / d)
}

/// One compensated-sum term `Y W + Y' 𝔹` for a single interval.
pub(crate) fn compensated_term(
    y: &[f64],
    yprime: &DMatrix<f64>,
    dw: &DVector<f64>,
    area: &DMatrix<f64>,
    rows: usize,
) -> DVector<f64> {
    let d = dw.len();
    let mut out = DVector::zeros(rows);
    for a in 0..rows {
        let mut acc = 0.0;
        for b in 0..d {
            acc += y[a * d + b] * dw[b];
            for c in 0..d {
                acc += yprime[(a * d + b, c)] * area[(c, b)];
            }
        }
        out[a] = acc;
    }
    out
}

/// `∫_{t_i}^{t_j} Y d𝐖` as a compensated sum over consecutive intervals.
pub fn rough_integral(
    cp: &ControlledPath,
    rp: &RoughPath,
    i: usize,
    j: usize,
) -> Result<DVector<f64>> {
    let rows = integrand_rows(cp, rp)?;
    if i > j || j > cp.steps() {
        return Err(Error::IndexOutOfRange {
            i,
            j,
            steps: cp.steps(),
        });
    }
    let base = rp.base();
    let mut acc = DVector::zeros(rows);
    for k in i..j {
        let dw = base.increment_unchecked(k, k + 1);
        acc += compensated_term(
            cp.values.value(k),
            &cp.derivative[k],
            &dw,
            rp.level2(k),
            rows,
        );
    }
    Ok(acc)
}

/// Running integral `t_j ↦ ∫_0^{t_j} Y d𝐖`.
pub fn rough_integral_path(cp: &ControlledPath, rp: &RoughPath) -> Result<GridPath> {
    let rows = integrand_rows(cp, rp)?;
    let base = rp.base();
    let mut values = vec![0.0; rows];
    let mut acc = DVector::zeros(rows);
    for k in 0..cp.steps() {
        let dw = base.increment_unchecked(k, k + 1);
        acc += compensated_term(
            cp.values.value(k),
            &cp.derivative[k],
            &dw,
            rp.level2(k),
            rows,
        );
        values.extend(acc.iter());
    }
    GridPath::new(*cp.values.grid(), rows, values)
}

/// Empirical form of the sewing estimate
/// `|∫_s^t Y d𝐖 - Y_s W_{s,t} - Y'_s 𝔹_{s,t}| ≤ C (‖W‖_α‖R^Y‖_{2α} + ‖𝔹‖_{2α}‖Y'‖_α) |t-s|^{3α}`.
#[derive(Debug, Clone)]
pub struct SewingReport {
    /// Regression of `ln D` on `ln (t - s)` over pairs with nonzero defect.
    pub fit: OrderFit,
    /// `max D / |t-s|^{3α}` divided by the bracket of norms.
    pub constant_ratio: f64,
    pub path_norm: f64,
    pub area_norm: f64,
    pub remainder_norm: f64,
    pub gubinelli_norm: f64,
    /// `(s, t, D_{s,t})` for every pair with `j >= i + 1`.
    pub defects: Vec<(f64, f64, f64)>,
}

impl SewingReport {
    /// `‖W‖_α‖R^Y‖_{2α} + ‖𝔹‖_{2α}‖Y'‖_α`.
    pub fn bound_bracket(&self) -> f64 {
        self.path_norm * self.remainder_norm + self.area_norm * self.gubinelli_norm
    }

    pub fn write_defects_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "s,t,defect")?;
        for (s, t, d) in &self.defects {
            writeln!(out, "{s:.16e},{t:.16e},{d:.16e}")?;
        }
        Ok(())
    }
}

pub fn check_sewing_bound(cp: &ControlledPath, rp: &RoughPath) -> Result<SewingReport> {
    let rows = integrand_rows(cp, rp)?;
    let alpha = cp.alpha;
    let grid = *cp.values.grid();
    let base = rp.base();
    let n = cp.steps();
    let d = rp.dim();
    let mut defects = Vec::with_capacity(n * (n + 1) / 2);
    let mut scaled_max: f64 = 0.0;
    for i in 0..n {
        let mut integral = DVector::zeros(rows);
        let mut area = DMatrix::zeros(d, d);
        let mut dw_total = DVector::zeros(d);
        for j in i + 1..=n {
            let dw = base.increment_unchecked(j - 1, j);
            integral += compensated_term(
                cp.values.value(j - 1),
                &cp.derivative[j - 1],
                &dw,
                rp.level2(j - 1),
                rows,
            );
            area += rp.level2(j - 1) + &dw_total * dw.transpose();
            dw_total += &dw;
            let local = compensated_term(
                cp.values.value(i),
                &cp.derivative[i],
                &dw_total,
                &area,
                rows,
            );
            let defect = (&integral - local).norm();
            let (s, t) = (grid.point(i), grid.point(j));
            scaled_max = scaled_max.max(defect / (t - s).powf(3.0 * alpha));
            defects.push((s, t, defect));
        }
    }
    let (scales, errors): (Vec<f64>, Vec<f64>) = defects
        .iter()
        .filter(|(_, _, e)| *e > EXACT_FLOOR)
        .map(|(s, t, e)| (t - s, *e))
        .unzip();
    let fit = if scales.len() < 2 {
        OrderFit::Exact
    } else {
        fit_order(&scales, &errors)?
    };
    let norms = controlled_norm(cp)?;
    let path_norm = holder_norm(base, alpha)?.norm;
    let area_norm = rp.level2_holder_norm(2.0 * alpha)?.norm;
    let bracket = path_norm * norms.remainder + area_norm * norms.gubinelli;
    Ok(SewingReport {
        fit,
        constant_ratio: if bracket > 0.0 {
            scaled_max / bracket
        } else {
            0.0
        },
        path_norm,
        area_norm,
        remainder_norm: norms.remainder,
        gubinelli_norm: norms.gubinelli,
        defects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{FbmParams, FbmSampler};
    use crate::grid_path::TimeGrid;
    use crate::rough_lift::{lift_ito, lift_piecewise_linear};
    use proptest::prelude::*;

    fn brownian(steps: usize, oversample: usize, dim: usize, seed: u64) -> Arc<RoughPath> {
        let p = FbmParams::new(0.5, dim, TimeGrid::new(1.0, steps).unwrap(), seed)
            .with_oversample(oversample);
        let fine = FbmSampler::new(p).unwrap().sample(0);
        Arc::new(lift_piecewise_linear(&fine, oversample, 0.45).unwrap())
    }

    fn scalar_controlled(
        rp: &Arc<RoughPath>,
        y: impl Fn(f64) -> f64,
        dy: impl Fn(f64) -> f64,
    ) -> ControlledPath {
        let values = rp.base().map(1, |w| vec![y(w[0])]).unwrap();
        let derivative = (0..=rp.steps())
            .map(|i| DMatrix::from_element(1, 1, dy(rp.base().value(i)[0])))
            .collect();
        ControlledPath::new(rp.clone(), values, derivative, 0.45).unwrap()
    }

    #[test]
    fn remainder_examples() {
        let rp = brownian(32, 1, 1, 1);
        let perfect = ControlledPath::of_reference(rp.clone());
        for (i, j) in [(0, 32), (3, 17), (5, 5)] {
            assert_eq!(perfect.remainder(i, j).unwrap().amax(), 0.0);
        }
        let constant = scalar_controlled(&rp, |_| 2.5, |_| 0.0);
        assert_eq!(constant.remainder(0, 32).unwrap()[0], 0.0);

        let grid = *rp.base().grid();
        let linear_time = ControlledPath::new(
            rp.clone(),
            GridPath::from_fn(grid, 1, |t| vec![t]).unwrap(),
            vec![DMatrix::zeros(1, 1); 33],
            0.45,
        )
        .unwrap();
        let r = linear_time.remainder(4, 20).unwrap()[0];
        assert!((r - (grid.point(20) - grid.point(4))).abs() < 1e-15);
        assert!(linear_time.remainder(5, 4).is_err());
    }

    #[test]
    fn controlled_norm_examples() {
        let rp = brownian(64, 1, 2, 3);
        let perfect = controlled_norm(&ControlledPath::of_reference(rp.clone())).unwrap();
        assert_eq!(perfect.total, 0.0);

        let rp1 = brownian(64, 1, 1, 4);
        let constant = controlled_norm(&scalar_controlled(&rp1, |_| 1.0, |_| 0.0)).unwrap();
        assert_eq!(constant.total, 0.0);

        // (B², 2B): R_{s,t} = (B_{s,t})², so ‖R‖_{2α} = ‖B‖_α² at the same pair
        let square = scalar_controlled(&rp1, |b| b * b, |b| 2.0 * b);
        let r =
            two_param_holder_norm(rp1.base().grid(), 0.9, |i| Ok(square.remainder_row(i))).unwrap();
        let h = holder_norm(rp1.base(), 0.45).unwrap();
        assert!((r.norm - h.norm * h.norm).abs() < 1e-12 * r.norm);
        assert_eq!(r.pair, h.pair);
    }

    #[test]
    fn compose_smooth_examples() {
        let rp = brownian(32, 1, 1, 5);
        let cp = ControlledPath::of_reference(rp.clone());
        let same = compose_smooth(&FnMap::identity(1), &cp).unwrap();
        assert_eq!(same.values(), cp.values());
        assert_eq!(same.derivative(), cp.derivative());

        let constant = compose_smooth(&FnMap::scalar(|_| 3.0, |_| 0.0), &cp).unwrap();
        assert!(constant.derivative().iter().all(|m| m[(0, 0)] == 0.0));

        let square = compose_smooth(&FnMap::scalar(|x| x * x, |x| 2.0 * x), &cp).unwrap();
        for i in 0..=32 {
            let b = rp.base().value(i)[0];
            assert_eq!(square.values().value(i)[0], b * b);
            assert_eq!(square.derivative()[i][(0, 0)], 2.0 * b);
        }
        assert!(controlled_norm(&square).unwrap().remainder.is_finite());
    }

    #[test]
    fn compose_smooth_chain_rule() {
        let rp = brownian(48, 2, 1, 6);
        let cp = scalar_controlled(&rp, |b| b.sin(), |b| b.cos());
        let inner = FnMap::scalar(|x| x.exp(), |x| x.exp());
        let outer = FnMap::scalar(|x| x * x * x, |x| 3.0 * x * x);
        let direct = compose_smooth(&outer.compose(&inner).unwrap(), &cp).unwrap();
        let staged = compose_smooth(&outer, &compose_smooth(&inner, &cp).unwrap()).unwrap();
        assert_eq!(direct.values(), staged.values());
        for (a, b) in direct.derivative().iter().zip(staged.derivative()) {
            assert!((a - b).amax() <= 1e-12 * (1.0 + a.amax()));
        }
    }

    #[test]
    fn integral_closed_forms() {
        let rp = brownian(256, 4, 1, 8);
        let n = rp.steps();
        let bt = rp.base().value(n)[0];

        let constant = scalar_controlled(&rp, |_| 1.7, |_| 0.0);
        let v = rough_integral(&constant, &rp, 10, 200).unwrap()[0];
        let dw = rp.base().increment(10, 200).unwrap()[0];
        assert!((v - 1.7 * dw).abs() < 1e-13);

        let b = ControlledPath::of_reference(rp.clone());
        let strat = rough_integral(&b, &rp, 0, n).unwrap()[0];
        assert!((strat - 0.5 * bt * bt).abs() < 1e-12);

        let ito = Arc::new(lift_ito(&rp, 0.5).unwrap());
        let b_ito = b.with_reference(ito.clone()).unwrap();
        let v = rough_integral(&b_ito, &ito, 0, n).unwrap()[0];
        assert!((v - (0.5 * bt * bt - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn integral_errors() {
        let rp = brownian(16, 1, 2, 9);
        let cp = ControlledPath::of_reference(rp.clone());
        // R^2-valued Y cannot be read as an m × 2 integrand with m integral... it can: m = 1
        assert!(rough_integral(&cp, &rp, 0, 16).is_ok());
        assert!(rough_integral(&cp, &rp, 4, 3).is_err());
        assert!(rough_integral(&cp, &rp, 0, 17).is_err());
        let odd = ControlledPath::new(
            rp.clone(),
            rp.base().map(3, |w| vec![w[0], w[1], 0.0]).unwrap(),
            vec![DMatrix::zeros(3, 2); 17],
            0.45,
        )
        .unwrap();
        assert!(matches!(
            rough_integral(&odd, &rp, 0, 16),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sewing_constant_integrand_is_exact() {
        let rp = brownian(64, 1, 1, 10);
        let cp = scalar_controlled(&rp, |_| 0.3, |_| 0.0);
        let report = check_sewing_bound(&cp, &rp).unwrap();
        assert_eq!(report.fit, OrderFit::Exact);
    }

    #[test]
    fn sewing_slope_for_smooth_integrand() {
        let rp = brownian(512, 1, 1, 11);
        let cp = scalar_controlled(&rp, |b| 2.0 + b.sin(), |b| b.cos());
        let report = check_sewing_bound(&cp, &rp).unwrap();
        assert!(report.fit.order() >= 3.0 * 0.45 - 0.25, "{:?}", report.fit);
        assert!(report.constant_ratio.is_finite() && report.constant_ratio > 0.0);
    }

    #[test]
    fn doubling_derivative_doubles_area_term() {
        let rp = brownian(64, 1, 1, 12);
        let cp = scalar_controlled(&rp, |b| 2.0 + b.sin(), |b| b.cos());
        let doubled = ControlledPath::new(
            rp.clone(),
            cp.values().clone(),
            cp.derivative().iter().map(|m| m * 2.0).collect(),
            0.45,
        )
        .unwrap();
        let a = check_sewing_bound(&cp, &rp).unwrap();
        let b = check_sewing_bound(&doubled, &rp).unwrap();
        let term = |r: &SewingReport| r.area_norm * r.gubinelli_norm;
        assert!((term(&b) - 2.0 * term(&a)).abs() < 1e-12 * term(&b));
    }

    proptest! {
        #[test]
        fn windows_add_up(seed in 0u64..500, i in 0usize..40, j in 0usize..40, k in 0usize..40) {
            let rp = brownian(40, 2, 2, seed);
            let cp = compose_smooth(
                &FnMap::new(2, 2, |y| DVector::from_vec(vec![y[0].sin(), y[1] * y[0]]),
                    |y| DMatrix::from_row_slice(2, 2, &[y[0].cos(), 0.0, y[1], y[0]])),
                &ControlledPath::of_reference(rp.clone()),
            ).unwrap();
            let mut idx = [i, j, k];
            idx.sort();
            let whole = rough_integral(&cp, &rp, idx[0], idx[2]).unwrap();
            let split = rough_integral(&cp, &rp, idx[0], idx[1]).unwrap() + rough_integral(&cp, &rp, idx[1], idx[2]).unwrap();
            prop_assert!((&whole - split).amax() <= 1e-12 * (1.0 + whole.amax()));
        }

        #[test]
        fn integral_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let rp = brownian(32, 2, 1, seed);
            let p = scalar_controlled(&rp, |x| x.cos(), |x| -x.sin());
            let q = scalar_controlled(&rp, |x| x * x, |x| 2.0 * x);
            let combo = ControlledPath::new(
                rp.clone(),
                p.values().map(1, |_| vec![0.0]).unwrap(),
                vec![DMatrix::zeros(1, 1); 33],
                0.45,
            ).unwrap();
            let values = GridPath::new(*p.values().grid(), 1,
                p.values().values().iter().zip(q.values().values()).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let derivative = p.derivative().iter().zip(q.derivative()).map(|(x, y)| x * a + y * b).collect();
            let combo = ControlledPath::new(combo.reference().clone(), values, derivative, 0.45).unwrap();
            let lhs = rough_integral(&combo, &rp, 0, 32).unwrap()[0];
            let rhs = a * rough_integral(&p, &rp, 0, 32).unwrap()[0] + b * rough_integral(&q, &rp, 0, 32).unwrap()[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
