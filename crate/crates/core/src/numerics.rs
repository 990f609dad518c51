//! Quadrature rules, log-log order fits and sample statistics shared by the
//! solvers and the refinement studies.

use crate::error::{Error, Result};

/// Values below this are treated as exact zeros by [`fit_order`].
pub const EXACT_FLOOR: f64 = 1e-14;

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Empirical order of `error ~ C * scale^order`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderFit {
    /// Every error sits below [`EXACT_FLOOR`]; the regression is degenerate.
    Exact,
    Fitted {
        order: f64,
        constant: f64,
    },
}

impl OrderFit {
    /// Passes when exact or when the fitted order reaches `min_order`.
    pub fn at_least(&self, min_order: f64) -> bool {
        match *self {
            OrderFit::Exact => true,
            OrderFit::Fitted { order, .. } => order >= min_order,
        }
    }

    /// Fitted order, `+inf` when exact.
    pub fn order(&self) -> f64 {
        match *self {
            OrderFit::Exact => f64::INFINITY,
            OrderFit::Fitted { order, .. } => order,
        }
    }
}

/// Log-log regression of `errors` against `scales`. Points whose error is
/// below [`EXACT_FLOOR`] are dropped; if fewer than two remain the data is
/// reported as exact.
pub fn fit_order(scales: &[f64], errors: &[f64]) -> Result<OrderFit> {
    if scales.len() != errors.len() {
        return Err(Error::ShapeMismatch(
            "scales and errors differ in length".into(),
        ));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = scales
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > EXACT_FLOOR)
        .map(|(s, e)| (s.ln(), e.ln()))
        .unzip();
    if xs.len() < 2 {
        if errors.iter().all(|e| *e <= EXACT_FLOOR) {
            return Ok(OrderFit::Exact);
        }
        return Err(Error::InvalidParameter {
            name: "errors",
            reason: "need at least two nonzero errors to fit an order".into(),
        });
    }
    let (order, intercept) = linear_fit(&xs, &ys).ok_or_else(|| Error::InvalidParameter {
        name: "scales",
        reason: "scales must not all coincide".into(),
    })?;
    Ok(OrderFit::Fitted {
        order,
        constant: intercept.exp(),
    })
}

/// Sample mean and unbiased variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(m: usize) -> Vec<(f64, f64)> {
    assert!(m >= 1, "need at least one node");
    let mut rule = Vec::with_capacity(m);
    for k in 0..m {
        // Chebyshev initial guess, then Newton on P_m
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // p1 = P_m(x), p2 = P_{m-1}(x)
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=m {
                let j = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * x * p2 - (j - 1.0) * p3) / j;
            }
            dp = m as f64 * (x * p1 - p2) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((0.5 * (1.0 - x), 0.5 * w));
    }
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// Adaptive Simpson quadrature of a scalar integrand.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let out = adaptive_simpson_vec(|x| vec![f(x)], a, b, tol)?;
    Ok(out[0])
}

/// Adaptive Simpson quadrature of a vector-valued integrand; the error
/// estimate uses the max-norm across components.
pub fn adaptive_simpson_vec(
    f: impl Fn(f64) -> Vec<f64>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if a == b {
        return Ok(vec![0.0; f(a).len()]);
    }
    const MAX_DEPTH: u32 = 48;
    struct Panel {
        a: f64,
        b: f64,
        fa: Vec<f64>,
        fm: Vec<f64>,
        fb: Vec<f64>,
        whole: Vec<f64>,
        tol: f64,
        depth: u32,
    }
    let simpson = |fa: &[f64], fm: &[f64], fb: &[f64], h: f64| -> Vec<f64> {
        fa.iter()
            .zip(fm)
            .zip(fb)
            .map(|((x, y), z)| h / 6.0 * (x + 4.0 * y + z))
            .collect()
    };
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(&fa, &fm, &fb, b - a);
    let mut total = vec![0.0; fa.len()];
    let mut stack = vec![Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol,
        depth: 0,
    }];
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let flm = f(0.5 * (p.a + m));
        let frm = f(0.5 * (m + p.b));
        let left = simpson(&p.fa, &flm, &p.fm, m - p.a);
        let right = simpson(&p.fm, &frm, &p.fb, p.b - m);
        let err = left
            .iter()
            .zip(&right)
            .zip(&p.whole)
            .map(|((l, r), w)| (l + r - w).abs())
            .fold(0.0, f64::max);
        if err <= 15.0 * p.tol || (p.b - p.a).abs() < 1e-15 * (1.0 + p.a.abs()) {
            for (k, t) in total.iter_mut().enumerate() {
                *t += left[k] + right[k] + (left[k] + right[k] - p.whole[k]) / 15.0;
            }
        } else if p.depth >= MAX_DEPTH {
            return Err(Error::Quadrature { a, b });
        } else {
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm.clone(),
                fm: frm,
                fb: p.fb,
                whole: right,
                tol: 0.5 * p.tol,
                depth: p.depth + 1,
            });
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                tol: 0.5 * p.tol,
                depth: p.depth + 1,
            });
        }
    }
    Ok(total)
}

/// Composite Simpson rule with `panels` (even count enforced) on `[a, b]`.
pub fn composite_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Trapezoid rule on equally spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for m in [1usize, 2, 5, 8, 16] {
            let rule = gauss_legendre_unit(m);
            assert_eq!(rule.len(), m);
            let wsum: f64 = rule.iter().map(|r| r.1).sum();
            assert!((wsum - 1.0).abs() < 1e-14);
            for p in 0..(2 * m) {
                let q: f64 = rule.iter().map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "m={m} p={p}");
            }
        }
    }

    #[test]
    fn adaptive_simpson_matches_closed_forms() {
        let v = adaptive_simpson(|x| x.cos(), 0.0, 2.0, 1e-13).unwrap();
        assert!((v - 2f64.sin()).abs() < 1e-12);
        let v = adaptive_simpson(|x| (x - 0.3).abs(), -1.0, 4.0, 1e-12).unwrap();
        assert!((v - 0.5 * (1.3 * 1.3 + 3.7 * 3.7)).abs() < 1e-10);
        assert!(adaptive_simpson(|x| x.abs().sqrt(), -1.0, 4.0, 1e-12).is_err());
        let v = adaptive_simpson(|x| x, 3.0, 1.0, 1e-12).unwrap();
        assert!((v + 4.0).abs() < 1e-14);
    }

    #[test]
    fn order_fit_recovers_power_law() {
        let scales = [0.1, 0.05, 0.025, 0.0125];
        let errors: Vec<f64> = scales.iter().map(|h: &f64| 3.0 * h.powf(1.5)).collect();
        match fit_order(&scales, &errors).unwrap() {
            OrderFit::Fitted { order, constant } => {
                assert!((order - 1.5).abs() < 1e-12);
                assert!((constant - 3.0).abs() < 1e-10);
            }
            OrderFit::Exact => panic!("expected a fit"),
        }
        assert_eq!(
            fit_order(&scales, &[0.0, 1e-16, 0.0, 0.0]).unwrap(),
            OrderFit::Exact
        );
        assert!(fit_order(&scales, &[1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let h = 0.25;
        let vals: Vec<f64> = (0..=4).map(|k| 2.0 * k as f64 * h + 1.0).collect();
        assert!((trapezoid(&vals, h) - 2.0).abs() < 1e-15);
    }
}
