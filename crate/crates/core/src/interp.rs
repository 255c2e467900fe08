//! Monotone piecewise-cubic Hermite interpolation.

use crate::error::{Error, Result};

/// Shape-preserving cubic interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    uniform: Option<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::validation("x", "need at least two nodes and matching values"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("x", "nodes must be strictly increasing"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] <= 0.0 {
                    d[i] = 0.0;
                } else {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        let step = h[0];
        let uniform = h.iter().all(|v| (v - step).abs() <= 1e-12 * step).then_some(step);
        Ok(Self { x, y, d, uniform })
    }

    /// Cubic Hermite interpolant with caller-supplied node slopes.
    pub fn hermite(x: Vec<f64>, y: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(x, y)?;
        if d.len() != out.x.len() {
            return Err(Error::validation("d", "one slope per node is required"));
        }
        out.d = d;
        Ok(out)
    }

    /// Overrides the slope at the first node (e.g. zero for even profiles).
    pub fn with_start_slope(mut self, slope: f64) -> Self {
        self.d[0] = slope;
        self
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        if let Some(step) = self.uniform {
            (((t - self.x[0]) / step).floor().max(0.0) as usize).min(n - 2)
        } else {
            match self.x.partition_point(|&v| v <= t) {
                0 => 0,
                k => (k - 1).min(n - 2),
            }
        }
    }

    /// Evaluates the interpolant; values outside the node range are clamped.
    pub fn eval(&self, t: f64) -> f64 {
        let (lo, hi) = self.domain();
        let t = t.clamp(lo, hi);
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}
