//! Named drift and diffusion families, written `name(p1, p2, ...)`.
//!
//! Vector-valued members act coordinatewise, so diffusion fields are
//! diagonal (and therefore conservative) in every dimension.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use roughflow::flow::{cutoff_weight, ScalarDrift};
use roughflow::rde::{Drift, BLOW_UP};
use roughflow::transform::{MatrixField, VectorField};

fn parse_call(text: &str) -> Result<(String, Vec<f64>), String> {
    let text = text.trim();
    let (name, args) = match text.split_once('(') {
        None => (text, ""),
        Some((name, rest)) => (
            name.trim(),
            rest.strip_suffix(')')
                .ok_or_else(|| format!("missing `)` in `{text}`"))?,
        ),
    };
    let params = if args.trim().is_empty() {
        Vec::new()
    } else {
        args.split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad parameter `{}` in `{text}`", a.trim()))
            })
            .collect::<Result<_, _>>()?
    };
    if params.iter().any(|p| !p.is_finite()) {
        return Err(format!("non-finite parameter in `{text}`"));
    }
    Ok((name.to_string(), params))
}

fn write_call(f: &mut fmt::Formatter<'_>, name: &str, params: &[f64]) -> fmt::Result {
    if params.is_empty() {
        return f.write_str(name);
    }
    let list: Vec<String> = params.iter().map(f64::to_string).collect();
    write!(f, "{name}({})", list.join(", "))
}

fn arity(name: &str, params: &[f64], want: usize) -> Result<(), String> {
    if params.len() == want {
        Ok(())
    } else {
        Err(format!(
            "`{name}` takes {want} parameter(s), got {}",
            params.len()
        ))
    }
}

/// Scalar drift families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSpec {
    Zero,
    Constant(f64),
    Sin(f64),
    Cos(f64),
    /// `a exp(-x²/2)`
    Bump(f64),
    /// `c |x|^θ`, cut off at the flow radius
    Holder(f64, f64),
}

impl DriftSpec {
    pub fn theta(&self) -> f64 {
        match self {
            DriftSpec::Holder(_, theta) => *theta,
            _ => 1.0,
        }
    }

    /// The scalar function without any cutoff.
    pub fn scalar_fn(&self) -> impl Fn(f64) -> f64 + Send + Sync + Copy + 'static {
        let spec = *self;
        move |x: f64| match spec {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant(c) => c,
            DriftSpec::Sin(a) => a * x.sin(),
            DriftSpec::Cos(a) => a * x.cos(),
            DriftSpec::Bump(a) => a * (-0.5 * x * x).exp(),
            DriftSpec::Holder(c, theta) => c * x.abs().powf(theta),
        }
    }

    fn sup(&self, radius: f64) -> f64 {
        match *self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant(c) | DriftSpec::Sin(c) | DriftSpec::Cos(c) | DriftSpec::Bump(c) => {
                c.abs()
            }
            DriftSpec::Holder(c, theta) => c.abs() * (2.0 * radius).powf(theta),
        }
    }

    /// Coordinatewise drift for the solvers; Hölder members carry the cutoff.
    pub fn build(&self, dim: usize, radius: f64) -> roughflow::Result<Drift> {
        let f = self.scalar_fn();
        let cut = matches!(self, DriftSpec::Holder(..));
        Drift::new(
            dim,
            move |x| {
                DVector::from_iterator(
                    x.len(),
                    x.iter().map(|&v| {
                        if cut {
                            f(v) * cutoff_weight(v, radius)
                        } else {
                            f(v)
                        }
                    }),
                )
            },
            self.theta(),
            self.sup(radius),
        )
    }

    pub fn build_scalar(&self, radius: f64) -> roughflow::Result<ScalarDrift> {
        ScalarDrift::new(self.scalar_fn(), self.theta(), radius)
    }
}

impl FromStr for DriftSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, p) = parse_call(s)?;
        let spec = match name.as_str() {
            "zero" => arity(&name, &p, 0).map(|_| DriftSpec::Zero),
            "constant" => arity(&name, &p, 1).map(|_| DriftSpec::Constant(p[0])),
            "sin" => arity(&name, &p, 1).map(|_| DriftSpec::Sin(p[0])),
            "cos" => arity(&name, &p, 1).map(|_| DriftSpec::Cos(p[0])),
            "bump" => arity(&name, &p, 1).map(|_| DriftSpec::Bump(p[0])),
            "holder" => {
                arity(&name, &p, 2)?;
                if !(p[1] > 0.0 && p[1] < 1.0) {
                    return Err(format!("holder exponent {} outside (0, 1)", p[1]));
                }
                Ok(DriftSpec::Holder(p[0], p[1]))
            }
            _ => Err(format!("unknown drift `{name}`")),
        }?;
        Ok(spec)
    }
}

impl fmt::Display for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DriftSpec::Zero => write_call(f, "zero", &[]),
            DriftSpec::Constant(c) => write_call(f, "constant", &[c]),
            DriftSpec::Sin(a) => write_call(f, "sin", &[a]),
            DriftSpec::Cos(a) => write_call(f, "cos", &[a]),
            DriftSpec::Bump(a) => write_call(f, "bump", &[a]),
            DriftSpec::Holder(c, t) => write_call(f, "holder", &[c, t]),
        }
    }
}

/// Diffusion families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSpec {
    Identity,
    Constant(f64),
    /// `2 + sin x`
    TwoPlusSin,
    /// `1 + ε sin x`, `0 ≤ ε < 1`
    OnePlusSin(f64),
    /// `σ(x) = x`; only elliptic near `x₀ ≠ 0`, scalar only
    Linear,
}

impl SigmaSpec {
    pub fn check_dim(&self, dim: usize) -> Result<(), String> {
        if *self == SigmaSpec::Linear && dim != 1 {
            return Err("`linear` is scalar only".into());
        }
        Ok(())
    }

    fn scalar(&self) -> (fn(f64, f64) -> f64, fn(f64, f64) -> f64, f64, f64, f64) {
        // (s, ds, parameter, λ, sup)
        match *self {
            SigmaSpec::Identity => (|_, _| 1.0, |_, _| 0.0, 0.0, 1.0, 1.0),
            SigmaSpec::Constant(c) => (|_, c| c, |_, _| 0.0, c, c.abs(), c.abs()),
            SigmaSpec::TwoPlusSin => (|x, _| 2.0 + x.sin(), |x, _| x.cos(), 0.0, 1.0, 3.0),
            SigmaSpec::OnePlusSin(e) => (
                |x, e| 1.0 + e * x.sin(),
                |x, e| e * x.cos(),
                e,
                1.0 - e.abs(),
                1.0 + e.abs(),
            ),
            SigmaSpec::Linear => (|x, _| x, |_, _| 1.0, 0.0, 1.0, BLOW_UP),
        }
    }

    /// Diagonal field `diag(s(x₁), ..., s(x_d))`.
    pub fn build(&self, dim: usize) -> roughflow::Result<VectorField> {
        self.check_dim(dim).map_err(roughflow::Error::Unsupported)?;
        if *self == SigmaSpec::Identity {
            return Ok(VectorField::identity(dim));
        }
        let (s, ds, p, lambda, sup) = self.scalar();
        let field = MatrixField::new(
            dim,
            dim,
            move |x| {
                DMatrix::from_diagonal(&DVector::from_iterator(dim, x.iter().map(|&v| s(v, p))))
            },
            move |x| {
                (0..dim)
                    .map(|k| {
                        let mut m = DMatrix::zeros(dim, dim);
                        m[(k, k)] = ds(x[k], p);
                        m
                    })
                    .collect()
            },
        );
        VectorField::new(field, lambda, sup)
    }
}

impl FromStr for SigmaSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, p) = parse_call(s)?;
        match name.as_str() {
            "identity" => arity(&name, &p, 0).map(|_| SigmaSpec::Identity),
            "constant" => {
                arity(&name, &p, 1)?;
                if p[0] == 0.0 {
                    return Err("constant sigma must be nonzero".into());
                }
                Ok(SigmaSpec::Constant(p[0]))
            }
            "two_plus_sin" => arity(&name, &p, 0).map(|_| SigmaSpec::TwoPlusSin),
            "one_plus_sin" => {
                arity(&name, &p, 1)?;
                if !(p[0].abs() < 1.0) {
                    return Err(format!("one_plus_sin needs |ε| < 1, got {}", p[0]));
                }
                Ok(SigmaSpec::OnePlusSin(p[0]))
            }
            "linear" => arity(&name, &p, 0).map(|_| SigmaSpec::Linear),
            _ => Err(format!("unknown sigma `{name}`")),
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SigmaSpec::Identity => write_call(f, "identity", &[]),
            SigmaSpec::Constant(c) => write_call(f, "constant", &[c]),
            SigmaSpec::TwoPlusSin => write_call(f, "two_plus_sin", &[]),
            SigmaSpec::OnePlusSin(e) => write_call(f, "one_plus_sin", &[e]),
            SigmaSpec::Linear => write_call(f, "linear", &[]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for text in [
            "zero",
            "constant(-0.5)",
            "sin(2)",
            "cos(1)",
            "bump(0.2)",
            "holder(1, 0.5)",
        ] {
            let spec: DriftSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        for text in [
            "identity",
            "constant(3)",
            "two_plus_sin",
            "one_plus_sin(0.1)",
            "linear",
        ] {
            let spec: SigmaSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!(
            "holder( 2 ,0.25 )".parse::<DriftSpec>().unwrap(),
            DriftSpec::Holder(2.0, 0.25)
        );
    }

    #[test]
    fn rejects_bad_entries() {
        assert!("tan(1)".parse::<DriftSpec>().is_err());
        assert!("sin".parse::<DriftSpec>().is_err());
        assert!("sin(1, 2)".parse::<DriftSpec>().is_err());
        assert!("holder(1, 1.5)".parse::<DriftSpec>().is_err());
        assert!("cos(x)".parse::<DriftSpec>().is_err());
        assert!("one_plus_sin(1)".parse::<SigmaSpec>().is_err());
        assert!(SigmaSpec::Linear.build(2).is_err());
    }

    #[test]
    fn built_fields_evaluate() {
        let f = DriftSpec::Holder(1.0, 0.5).build(2, 2.0).unwrap();
        let v = f.eval(&[0.25, 10.0]);
        assert_eq!((v[0], v[1]), (0.5, 0.0));
        let s = SigmaSpec::TwoPlusSin.build(2).unwrap();
        let m = s.sigma(&[0.0, std::f64::consts::FRAC_PI_2]);
        assert_eq!((m[(0, 0)], m[(1, 1)], m[(0, 1)]), (2.0, 3.0, 0.0));
        assert_eq!(s.dsigma(&[0.0, 0.0])[1][(1, 1)], 1.0);
    }
}
