//! Problem data for the (magnetic) semiclassical Schrödinger family
//! `-Δu + (1 + V(εx))u = K(εx)|u|^{p-1}u`, written in the fast variable.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::CartesianGrid;
use crate::interp::Pchip;

/// A scalar coefficient field on ℝⁿ.
#[derive(Clone)]
pub enum Potential {
    Constant(f64),
    Expr(Expr),
    Func(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    /// One-dimensional tabulated data, interpolated monotonically and held
    /// constant beyond the table ends.
    Tabulated1d(Pchip),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Constant(c) => write!(f, "Constant({c})"),
            Potential::Expr(e) => write!(f, "{e:?}"),
            Potential::Func(_) => f.write_str("Func(..)"),
            Potential::Tabulated1d(t) => write!(f, "Tabulated1d({:?})", t.domain()),
        }
    }
}

impl Potential {
    pub fn constant(c: f64) -> Self {
        Potential::Constant(c)
    }

    pub fn expr(src: &str) -> Result<Self> {
        let e = Expr::parse(src)?;
        if e.is_constant() {
            return Ok(Potential::Constant(e.eval(&[])));
        }
        Ok(Potential::Expr(e))
    }

    pub fn func(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Potential::Func(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Constant(c) => *c,
            Potential::Expr(e) => e.eval(x),
            Potential::Func(f) => f(x),
            Potential::Tabulated1d(t) => t.eval(x[0]),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Potential::Constant(_))
    }

    /// Coordinates referenced by the potential, when known.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Potential::Constant(_) => Some(0),
            Potential::Expr(e) => Some(e.arity()),
            Potential::Func(_) => None,
            Potential::Tabulated1d(_) => Some(1),
        }
    }

    /// Fourth-order central-difference gradient with step `h`.
    pub fn gradient(&self, x: &[f64], h: f64) -> Vec<f64> {
        if self.is_constant() {
            return vec![0.0; x.len()];
        }
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                let mut at = |d: f64| {
                    y[i] = x[i] + d;
                    let v = self.eval(&y);
                    y[i] = x[i];
                    v
                };
                (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
            })
            .collect()
    }
}

/// Fourth-order finite-difference Hessian of a scalar function.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut y = x.to_vec();
    let mut eval = |shifts: &[(usize, f64)]| {
        for &(i, s) in shifts {
            y[i] += s;
        }
        let v = f(&y);
        y.copy_from_slice(x);
        v
    };
    let mut hess = vec![vec![0.0; d]; d];
    let f0 = eval(&[]);
    for i in 0..d {
        let v = (-eval(&[(i, 2.0 * h)]) + 16.0 * eval(&[(i, h)]) - 30.0 * f0 + 16.0 * eval(&[(i, -h)])
            - eval(&[(i, -2.0 * h)]))
            / (12.0 * h * h);
        hess[i][i] = v;
        for j in 0..i {
            let mut m = |a: f64, b: f64| eval(&[(i, a * h), (j, b * h)]);
            let c1 = m(1.0, 1.0) - m(1.0, -1.0) - m(-1.0, 1.0) + m(-1.0, -1.0);
            let c2 = m(2.0, 2.0) - m(2.0, -2.0) - m(-2.0, 2.0) + m(-2.0, -2.0);
            let v = (16.0 * c1 - c2) / (48.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Dimension, exponent, coefficients and semiclassical parameter.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub n: usize,
    pub p: f64,
    pub v: Potential,
    pub k: Potential,
    /// Magnetic vector potential, one component per axis; `None` means `A ≡ 0`.
    pub a: Option<Vec<Potential>>,
    pub epsilon: f64,
}

impl ProblemSpec {
    pub fn new(n: usize, p: f64, v: Potential, k: Potential, epsilon: f64) -> Result<Self> {
        let spec = Self { n, p, v, k, a: None, epsilon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_magnetic(mut self, a: Vec<Potential>) -> Result<Self> {
        self.a = Some(a);
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut s = self.clone();
        s.epsilon = epsilon;
        s.validate()?;
        Ok(s)
    }

    /// Exclusive upper bound on `p` (infinite for n ≤ 2).
    pub fn critical_exponent(n: usize) -> f64 {
        if n <= 2 {
            f64::INFINITY
        } else {
            (n as f64 + 2.0) / (n as f64 - 2.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::validation("n", format!("dimension must be 1, 2 or 3, got {}", self.n)));
        }
        validate_exponent(self.n, self.p)?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation("epsilon", format!("epsilon must be positive, got {}", self.epsilon)));
        }
        for (name, pot) in [("V", &self.v), ("K", &self.k)] {
            if let Some(ar) = pot.arity() {
                if ar > self.n {
                    return Err(Error::validation(name, format!("refers to coordinate {ar} in dimension {}", self.n)));
                }
            }
        }
        if let Potential::Constant(k) = self.k {
            if k <= 0.0 {
                return Err(Error::validation("K", format!("K must be positive, got {k}")));
            }
        }
        if let Potential::Constant(v) = self.v {
            if 1.0 + v <= 0.0 {
                return Err(Error::validation("V", format!("1 + V must be positive, got {}", 1.0 + v)));
            }
        }
        if let Some(a) = &self.a {
            if a.len() != self.n {
                return Err(Error::validation("A", format!("expected {} components, got {}", self.n, a.len())));
            }
        }
        Ok(())
    }

    pub fn is_magnetic(&self) -> bool {
        self.a.is_some()
    }

    /// `θ = (p+1)/(p-1) - n/2`.
    pub fn theta(&self) -> f64 {
        (self.p + 1.0) / (self.p - 1.0) - self.n as f64 / 2.0
    }

    /// `1 + V(y)` at a point of the slow variable, with the positivity check.
    pub fn one_plus_v(&self, y: &[f64]) -> Result<f64> {
        let w = 1.0 + self.v.eval(y);
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Domain(format!("1 + V = {w} is not positive at {y:?}")));
        }
        Ok(w)
    }

    pub fn k_at(&self, y: &[f64]) -> Result<f64> {
        let k = self.k.eval(y);
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Domain(format!("K = {k} is not positive at {y:?}")));
        }
        Ok(k)
    }

    pub fn a_at(&self, y: &[f64]) -> Vec<f64> {
        match &self.a {
            None => vec![0.0; self.n],
            Some(a) => a.iter().map(|c| c.eval(y)).collect(),
        }
    }

    /// Checks `inf(1 + V(εx)) > 0` and `K(εx) > 0` on every node of a box
    /// in the fast variable.
    pub fn check_on_grid(&self, grid: &CartesianGrid) -> Result<()> {
        if grid.dim() != self.n {
            return Err(Error::validation("grid", "grid dimension differs from the problem dimension"));
        }
        let mut x = vec![0.0; self.n];
        for i in 0..grid.len() {
            grid.point(i, &mut x);
            x.iter_mut().for_each(|v| *v *= self.epsilon);
            self.one_plus_v(&x)?;
            self.k_at(&x)?;
        }
        Ok(())
    }
}

pub fn validate_exponent(n: usize, p: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::validation("p", format!("exponent must exceed 1, got {p}")));
    }
    let crit = ProblemSpec::critical_exponent(n);
    if p >= crit {
        return Err(Error::validation("p", format!("exponent {p} is not below the critical value {crit}")));
    }
    Ok(())
}
