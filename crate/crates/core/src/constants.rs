//! Best constants: weighted Hardy quotients on Cartesian grids, the
//! Hardy–Sobolev infimum, Sobolev quotients of radial functions, the
//! Brezis–Nirenberg quotient on the unit ball and first Dirichlet eigenvalues.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, GridFunction};
use crate::linalg::{cg, lbfgs, tridiagonal_eigenvalue, LbfgsOptions};
use crate::special::{gauss_legendre, simpson_weights, sphere_area};

/// Parameters of the split-variable inequalities on `ℝ^N = ℝ^k × ℝ^{N−k}`.
/// `p` is the gradient exponent (called `q` for the Hardy–Sobolev problem).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardyParams {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub alpha: f64,
    pub s: f64,
}

impl HardyParams {
    /// Weighted Hardy inequality `∫|u|^p|x′|^α ≤ C ∫|∇u|^p|x′|^{α+p}`.
    pub fn hardy(n: usize, k: usize, p: f64, alpha: f64) -> Result<Self> {
        if !(1..=4).contains(&n) {
            return Err(Error::validation("n", format!("dimension must be in 1..=4, got {n}")));
        }
        if k == 0 || k > n {
            return Err(Error::validation("k", format!("split dimension must be in 1..={n}, got {k}")));
        }
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::validation("p", format!("exponent must be at least 1, got {p}")));
        }
        if !(alpha.is_finite() && alpha + k as f64 > 0.0) {
            return Err(Error::validation("alpha", format!("need alpha + k > 0, got alpha = {alpha}")));
        }
        Ok(Self { n, k, p, alpha, s: 0.0 })
    }

    /// Hardy–Sobolev problem with gradient exponent `q` and weight `|x′|^{−s}`.
    pub fn sobolev(n: usize, k: usize, q: f64, s: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::validation("n", format!("dimension must be at least 2, got {n}")));
        }
        if k == 0 || k > n {
            return Err(Error::validation("k", format!("split dimension must be in 1..={n}, got {k}")));
        }
        if !(q.is_finite() && q > 1.0 && q < n as f64) {
            return Err(Error::validation("q", format!("need 1 < q < {n}, got {q}")));
        }
        if !(s.is_finite() && s >= 0.0 && s < q) {
            return Err(Error::validation("s", format!("need 0 <= s < q, got {s}")));
        }
        if s >= k as f64 {
            return Err(Error::validation("s", format!("need s < k = {k}, got {s}")));
        }
        Ok(Self { n, k, p: q, alpha: 0.0, s })
    }

    /// `((α+k)/p)^p`, the reciprocal of the sharp Hardy constant.
    pub fn bound_constant(&self) -> f64 {
        ((self.alpha + self.k as f64) / self.p).powf(self.p)
    }

    /// `q(N−s)/(N−q)`.
    pub fn critical_exponent(&self) -> f64 {
        let n = self.n as f64;
        self.p * (n - self.s) / (n - self.p)
    }
}

const NEAR_AXIS_CELLS: f64 = 1.5;

/// Value of `|x′|^beta` attached to a node: the point value away from the
/// axis `x′ = 0` (and everywhere when the weight is a polynomial), and the
/// average over the node's cell close to the axis.
fn axis_weight(xp: &[f64], beta: f64, h: f64) -> f64 {
    let r2: f64 = xp.iter().map(|v| v * v).sum();
    let polynomial = beta >= 0.0 && (beta / 2.0).fract() == 0.0;
    if polynomial {
        return r2.powi((beta / 2.0) as i32);
    }
    let k = xp.len() as f64;
    if r2.sqrt() > NEAR_AXIS_CELLS * h * k.sqrt() {
        return r2.powf(beta / 2.0);
    }
    cell_average(xp, beta, h)
}

fn cell_average(xp: &[f64], beta: f64, h: f64) -> f64 {
    const SUB: usize = 4;
    let (gx, gw) = gauss_legendre(4);
    let sub_h = h / SUB as f64;
    let mut offsets = Vec::with_capacity(SUB * gx.len());
    for c in 0..SUB {
        let mid = -0.5 * h + (c as f64 + 0.5) * sub_h;
        for (x, w) in gx.iter().zip(&gw) {
            offsets.push((mid + 0.5 * sub_h * x, 0.5 * w / SUB as f64));
        }
    }
    let k = xp.len();
    let per_axis = offsets.len();
    let total = per_axis.pow(k as u32);
    let mut acc = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut r2 = 0.0;
        let mut w = 1.0;
        for x in xp {
            let (o, ow) = offsets[rem % per_axis];
            rem /= per_axis;
            r2 += (x + o) * (x + o);
            w *= ow;
        }
        acc += w * r2.powf(beta / 2.0);
    }
    acc
}

/// Precomputed weights for repeated Hardy quotients on one grid.
#[derive(Debug, Clone)]
pub struct HardyQuadrature {
    grid: Arc<CartesianGrid>,
    params: HardyParams,
    /// `|x′|^{α+p}` per node.
    w_grad: Vec<f64>,
    /// `|x′|^α` per node.
    w_val: Vec<f64>,
}

impl HardyQuadrature {
    pub fn new(grid: Arc<CartesianGrid>, params: HardyParams) -> Result<Self> {
        if grid.dim() != params.n {
            return Err(Error::validation(
                "n",
                format!("grid dimension {} differs from N = {}", grid.dim(), params.n),
            ));
        }
        let h = grid.spacing();
        let k = params.k;
        let m = grid.points_per_axis();
        // weights depend on the first k coordinates only
        let sub_len = m.pow(k as u32);
        let sub: Vec<(f64, f64)> = (0..sub_len)
            .into_par_iter()
            .map(|flat| {
                let mut xp = vec![0.0; k];
                let mut rem = flat;
                for a in (0..k).rev() {
                    xp[a] = grid.coord(a, rem % m);
                    rem /= m;
                }
                (axis_weight(&xp, params.alpha + params.p, h), axis_weight(&xp, params.alpha, h))
            })
            .collect();
        let tail = grid.len() / sub_len;
        let mut w_grad = Vec::with_capacity(grid.len());
        let mut w_val = Vec::with_capacity(grid.len());
        for &(g, v) in &sub {
            for _ in 0..tail {
                w_grad.push(g);
                w_val.push(v);
            }
        }
        Ok(Self { grid, params, w_grad, w_val })
    }

    pub fn params(&self) -> &HardyParams {
        &self.params
    }

    /// `∫|∇u|^p|x′|^{α+p} / ∫|u|^p|x′|^α` with fourth-order central gradients
    /// (zero values outside the box).
    pub fn quotient(&self, u: &GridFunction) -> Result<f64> {
        if u.is_complex() {
            return Err(Error::validation("u", "Hardy quotients take real fields"));
        }
        if u.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::validation("u", "field lives on a different grid"));
        }
        let g = &self.grid;
        let vals = u.values();
        let p = self.params.p;
        let m = g.points_per_axis() as isize;
        let h = g.spacing();
        let dim = g.dim();
        let strides: Vec<usize> = (0..dim).map(|a| g.stride(a)).collect();
        let (num, den) = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let mut grad2 = 0.0;
                for a in 0..dim {
                    let j = g.axis_index(idx, a) as isize;
                    let s = strides[a] as isize;
                    let at = |d: isize| {
                        let jj = j + d;
                        if jj < 0 || jj >= m {
                            0.0
                        } else {
                            vals[(idx as isize + d * s) as usize]
                        }
                    };
                    let d = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
                    grad2 += d * d;
                }
                let num = grad2.powf(0.5 * p) * self.w_grad[idx];
                let den = vals[idx].abs().powf(p) * self.w_val[idx];
                (num, den)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if !(den > 0.0) {
            return Err(Error::Degenerate("weighted L^p norm of the field vanishes".into()));
        }
        Ok(num / den)
    }
}

/// One-shot weighted Hardy quotient of `u`.
pub fn hardy_quotient(u: &GridFunction, params: &HardyParams) -> Result<f64> {
    HardyQuadrature::new(u.grid().clone(), *params)?.quotient(u)
}

fn smooth_step(s: f64) -> (f64, f64) {
    // C^∞ transition from 0 (s <= 0) to 1 (s >= 1), with its derivative
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0);
    }
    let f = |t: f64| (-1.0 / t).exp();
    let df = |t: f64| (-1.0 / t).exp() / (t * t);
    let (a, b) = (f(s), f(1.0 - s));
    let val = a / (a + b);
    let der = (df(s) * b + a * df(1.0 - s)) / ((a + b) * (a + b));
    (val, der)
}

/// Random compactly supported test field: one to four Gaussian bumps with
/// random signs, centers and widths resolved by the grid, multiplied by a
/// smooth cutoff that vanishes on the outer tenth of the box.
pub fn random_test_field(grid: Arc<CartesianGrid>, rng: &mut impl Rng) -> GridFunction {
    let dim = grid.dim();
    let r = grid.radius();
    let h = grid.spacing();
    let count = rng.gen_range(1..=4);
    let bumps: Vec<(Vec<f64>, f64, f64)> = (0..count)
        .map(|_| {
            let c: Vec<f64> = (0..dim).map(|a| grid.center()[a] + rng.gen_range(-0.4..0.4) * r).collect();
            let width = rng.gen_range((3.0 * h).min(0.2 * r)..0.3 * r);
            let amp = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (c, width, amp)
        })
        .collect();
    let center = grid.center().to_vec();
    GridFunction::from_fn(grid, move |x| {
        let inf_norm = x.iter().zip(&center).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        let (cut, _) = smooth_step((0.9 * r - inf_norm) / (0.3 * r));
        if cut == 0.0 {
            return 0.0;
        }
        let sum: f64 = bumps
            .iter()
            .map(|(c, w, a)| {
                let d2: f64 = x.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum();
                a * (-0.5 * d2 / (w * w)).exp()
            })
            .sum();
        cut * sum
    })
}

/// Settings of the separable probe family `v(x′) w(z/m)`.
#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    /// Offset from the critical power `|x′|^{−(α+k)/p}` in the profile `v`.
    pub delta: f64,
    /// Half-width of the available box in the `z` directions.
    pub z_extent: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { delta: 0.02, z_extent: 100.0 }
    }
}

/// Quotient of the separable function `v(|x′|) w(|z|/m)` where `v = r^{−γ+δ}`
/// for `r ≤ 1` continued by an exponential tail and `w` is a Gaussian. As `m`
/// grows the `z`-gradient contribution vanishes and the quotient approaches
/// `((α+k)/p)^p` up to the `O(δ)` defect of `v`.
pub fn hardy_constant_probe(params: &HardyParams, m: f64, opts: &ProbeOptions) -> Result<f64> {
    if !(m.is_finite() && m >= 1.0) {
        return Err(Error::validation("m", format!("family index must be at least 1, got {m}")));
    }
    let p = params.p;
    let gamma = (params.alpha + params.k as f64) / p;
    let delta = opts.delta.min(0.25 * gamma);
    if !(delta > 0.0) {
        return Err(Error::validation("delta", "probe offset must be positive"));
    }
    let zdim = params.n - params.k;
    let rho_max = 8.5 * m;
    if zdim > 0 && rho_max > opts.z_extent {
        return Err(Error::Resource(format!(
            "spreading profile with m = {m} needs |z| up to {rho_max:.1}, box extent is {}",
            opts.z_extent
        )));
    }

    // z-quadrature: (weight, w, |w'|) per node, measure ρ^{zdim−1} dρ
    let z_nodes: Vec<(f64, f64, f64)> = if zdim == 0 {
        vec![(1.0, 1.0, 0.0)]
    } else {
        let nz = 1601;
        let dz = rho_max / (nz - 1) as f64;
        let sw = simpson_weights(nz, dz);
        (0..nz)
            .map(|i| {
                let rho = i as f64 * dz;
                let w = (-0.5 * rho * rho / (m * m)).exp();
                (sw[i] * rho.powi(zdim as i32 - 1), w, rho / (m * m) * w)
            })
            .collect()
    };
    let z_mass: f64 = z_nodes.iter().map(|(q, w, _)| q * w.powf(p)).sum();
    let gd = gamma - delta;

    // inner region r = e^t ≤ 1; below t_cut the e^{2t} term is below round-off
    let t_cut = -20.0;
    let nt = 4001;
    let dt = -t_cut / (nt - 1) as f64;
    let tw = simpson_weights(nt, dt);
    let inner_num: f64 = (0..nt)
        .into_par_iter()
        .map(|i| {
            let t = t_cut + i as f64 * dt;
            let e2 = (2.0 * t).exp();
            let zsum: f64 = z_nodes
                .iter()
                .map(|(q, w, dw)| q * (gd * gd * w * w + e2 * dw * dw).powf(0.5 * p))
                .sum();
            tw[i] * (delta * p * t).exp() * zsum
        })
        .sum::<f64>()
        + (delta * p * t_cut).exp() / (delta * p) * gd.powf(p) * z_mass;
    let inner_den = 1.0 / (delta * p);

    // outer region: v = exp(−(γ−δ)(r−1)), matching value and slope at r = 1
    let r_end = 1.0 + 40.0 / (gd * p);
    let nr = 4001;
    let dr = (r_end - 1.0) / (nr - 1) as f64;
    let rw = simpson_weights(nr, dr);
    let (outer_num, outer_den) = (0..nr)
        .into_par_iter()
        .map(|i| {
            let r = 1.0 + i as f64 * dr;
            let v = (-gd * (r - 1.0)).exp();
            let dv = gd * v;
            let zsum: f64 = z_nodes
                .iter()
                .map(|(q, w, dw)| q * (dv * dv * w * w + v * v * dw * dw).powf(0.5 * p))
                .sum();
            let base = r.powf(params.k as f64 - 1.0 + params.alpha);
            (rw[i] * base * r.powf(p) * zsum, rw[i] * base * v.powf(p))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((inner_num + outer_num) / ((inner_den + outer_den) * z_mass))
}

/// Resolution and iteration budget of [`hardy_sobolev_s`].
#[derive(Debug, Clone, Copy)]
pub struct SobolevBudget {
    pub max_iter: usize,
    /// Truncation `|τ| ≤ L` of the logarithmic radius `τ = ln|x|`.
    pub tau_half_width: f64,
    pub tau_nodes: usize,
    /// Nodes on the angle `φ ∈ [0, π/2]` between `x` and the `x′`-subspace.
    pub phi_nodes: usize,
    /// Stop once one step lowers the quotient by less than this fraction.
    pub rel_decrease: f64,
}

impl Default for SobolevBudget {
    fn default() -> Self {
        Self { max_iter: 3000, tau_half_width: 40.0, tau_nodes: 801, phi_nodes: 17, rel_decrease: 1e-10 }
    }
}

/// Result of a Hardy–Sobolev minimization.
#[derive(Debug, Clone)]
pub struct HardySobolevResult {
    pub value: f64,
    /// Nodal values of the minimizer in `(τ, φ)` variables, `φ` fastest.
    pub field: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Quotient after every accepted descent step.
    pub history: Vec<f64>,
}

/// Finite-element form of the Hardy–Sobolev quotient for functions that are
/// radial in `x′` and in `z`. With `|x| = e^τ`, `|x′| = |x| cos φ` and
/// `u = |x|^{−(N−q)/q} v(τ, φ)` both integrals lose their dependence on the
/// scale, so dilations become shifts in `τ`.
#[derive(Debug, Clone)]
pub struct HardySobolevDiscretization {
    params: HardyParams,
    n_tau: usize,
    n_phi: usize,
    dtau: f64,
    dphi: f64,
    tau0: f64,
    a: f64,
    qstar: f64,
    angular: f64,
    gauss: (Vec<f64>, Vec<f64>),
}

impl HardySobolevDiscretization {
    pub fn new(params: HardyParams, budget: &SobolevBudget) -> Result<Self> {
        HardyParams::sobolev(params.n, params.k, params.p, params.s)?;
        if budget.tau_nodes < 16 || budget.tau_half_width <= 0.0 {
            return Err(Error::validation("tau_nodes", "need at least 16 nodes on a positive interval"));
        }
        let one_d = params.s == 0.0 || params.k == params.n;
        let n_phi = if one_d { 1 } else { budget.phi_nodes.max(3) };
        let n = params.n;
        let angular = if one_d { sphere_area(n) } else { sphere_area(params.k) * sphere_area(n - params.k) };
        Ok(Self {
            params,
            n_tau: budget.tau_nodes,
            n_phi,
            dtau: 2.0 * budget.tau_half_width / (budget.tau_nodes - 1) as f64,
            dphi: if one_d { 0.0 } else { std::f64::consts::FRAC_PI_2 / (n_phi - 1) as f64 },
            tau0: -budget.tau_half_width,
            a: (n as f64 - params.p) / params.p,
            qstar: params.critical_exponent(),
            angular,
            gauss: gauss_legendre(4),
        })
    }

    /// Number of unknowns (interior `τ` nodes times `φ` nodes).
    pub fn len(&self) -> usize {
        (self.n_tau - 2) * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.tau0 + (i + 1) as f64 * self.dtau
    }

    pub fn phi(&self, j: usize) -> f64 {
        j as f64 * self.dphi
    }

    fn node(&self, v: &[f64], i: isize, j: usize) -> f64 {
        // i indexes all τ nodes; the two ends carry the Dirichlet condition
        if i <= 0 || i as usize >= self.n_tau - 1 {
            0.0
        } else {
            v[(i as usize - 1) * self.n_phi + j]
        }
    }

    fn weights(&self, phi: f64) -> (f64, f64) {
        let (k, n, s) = (self.params.k as f64, self.params.n as f64, self.params.s);
        if self.n_phi == 1 {
            return (1.0, 1.0);
        }
        let (c, sn) = (phi.cos(), phi.sin());
        let z = sn.powf(n - k - 1.0);
        (c.powf(k - 1.0) * z, c.powf(k - 1.0 - s) * z)
    }

    /// `(E, G, ∇E, ∇G)` of the gradient integral and the weighted constraint.
    fn integrals(&self, v: &[f64], want_grad: bool) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let q = self.params.p;
        let qs = self.qstar;
        let a = self.a;
        let (gx, gw) = &self.gauss;
        let len = self.len();
        let mut ge = if want_grad { vec![0.0; len] } else { Vec::new() };
        let mut gg = if want_grad { vec![0.0; len] } else { Vec::new() };
        let mut e = 0.0;
        let mut g = 0.0;
        let nt = self.n_tau as isize;
        let dt = self.dtau;
        let add = |grad: &mut Vec<f64>, i: isize, j: usize, val: f64| {
            if i > 0 && i < nt - 1 {
                grad[(i as usize - 1) * self.n_phi + j] += val;
            }
        };
        if self.n_phi == 1 {
            for el in 0..nt - 1 {
                let (v0, v1) = (self.node(v, el, 0), self.node(v, el + 1, 0));
                let vt = (v1 - v0) / dt;
                for (x, w) in gx.iter().zip(gw) {
                    let l = 0.5 * (1.0 + x);
                    let wq = 0.5 * w * dt;
                    let val = v0 * (1.0 - l) + v1 * l;
                    let d = vt - a * val;
                    let ad = d.abs();
                    e += wq * ad.powf(q);
                    g += wq * val.abs().powf(qs);
                    if want_grad {
                        let de = q * ad.powf(q - 1.0) * d.signum();
                        add(&mut ge, el, 0, wq * de * (-1.0 / dt - a * (1.0 - l)));
                        add(&mut ge, el + 1, 0, wq * de * (1.0 / dt - a * l));
                        let dg = qs * val.abs().powf(qs - 1.0) * val.signum();
                        add(&mut gg, el, 0, wq * dg * (1.0 - l));
                        add(&mut gg, el + 1, 0, wq * dg * l);
                    }
                }
            }
        } else {
            let dp = self.dphi;
            for el in 0..nt - 1 {
                for ej in 0..self.n_phi - 1 {
                    let c = [
                        self.node(v, el, ej),
                        self.node(v, el + 1, ej),
                        self.node(v, el, ej + 1),
                        self.node(v, el + 1, ej + 1),
                    ];
                    if c.iter().all(|x| *x == 0.0) && !want_grad {
                        continue;
                    }
                    for (xb, wb) in gx.iter().zip(gw) {
                        let lb = 0.5 * (1.0 + xb);
                        let phi = (ej as f64 + lb) * dp;
                        let (w1, w2) = self.weights(phi);
                        for (xa, wa) in gx.iter().zip(gw) {
                            let la = 0.5 * (1.0 + xa);
                            let wq = 0.25 * wa * wb * dt * dp;
                            let sh = [(1.0 - la) * (1.0 - lb), la * (1.0 - lb), (1.0 - la) * lb, la * lb];
                            let st = [-(1.0 - lb) / dt, (1.0 - lb) / dt, -lb / dt, lb / dt];
                            let sp = [-(1.0 - la) / dp, -la / dp, (1.0 - la) / dp, la / dp];
                            let val: f64 = (0..4).map(|i| c[i] * sh[i]).sum();
                            let vt: f64 = (0..4).map(|i| c[i] * st[i]).sum();
                            let vp: f64 = (0..4).map(|i| c[i] * sp[i]).sum();
                            let d = vt - a * val;
                            let m2 = d * d + vp * vp;
                            e += wq * w1 * m2.powf(0.5 * q);
                            g += wq * w2 * val.abs().powf(qs);
                            if want_grad {
                                let de = if m2 > 0.0 { q * m2.powf(0.5 * q - 1.0) } else { 0.0 };
                                let dg = qs * val.abs().powf(qs - 1.0) * val.signum();
                                let idx = [(el, ej), (el + 1, ej), (el, ej + 1), (el + 1, ej + 1)];
                                for (n, &(ii, jj)) in idx.iter().enumerate() {
                                    let dd = d * (st[n] - a * sh[n]) + vp * sp[n];
                                    add(&mut ge, ii, jj, wq * w1 * de * dd);
                                    add(&mut gg, ii, jj, wq * w2 * dg * sh[n]);
                                }
                            }
                        }
                    }
                }
            }
        }
        (e, g, ge, gg)
    }

    /// Discrete quotient `∫|∇u|^q / (∫|u|^{q⋆}|x′|^{−s})^{q/q⋆}` of nodal values.
    pub fn quotient(&self, v: &[f64]) -> f64 {
        let (e, g, _, _) = self.integrals(v, false);
        let theta = self.params.p / self.qstar;
        self.angular.powf(1.0 - theta) * e / g.powf(theta)
    }

    fn quotient_and_gradient(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let (e, g, ge, gg) = self.integrals(v, true);
        let theta = self.params.p / self.qstar;
        if !(g > 0.0) {
            return (f64::INFINITY, vec![0.0; v.len()]);
        }
        let c = self.angular.powf(1.0 - theta);
        let gt = g.powf(theta);
        let val = c * e / gt;
        let grad = ge.iter().zip(&gg).map(|(a, b)| c * (a / gt - theta * e / (gt * g) * b)).collect();
        (val, grad)
    }

    /// Nodal values shifted by `nodes` positions in `τ` (a dilation of `u`),
    /// with zeros entering at the vacated end.
    pub fn shifted(&self, v: &[f64], nodes: isize) -> Vec<f64> {
        let rows = (self.n_tau - 2) as isize;
        let mut out = vec![0.0; v.len()];
        for i in 0..rows {
            let src = i - nodes;
            if (0..rows).contains(&src) {
                let (d, s) = (i as usize * self.n_phi, src as usize * self.n_phi);
                out[d..d + self.n_phi].copy_from_slice(&v[s..s + self.n_phi]);
            }
        }
        out
    }

    /// Positive starting field `(cosh τ)^{−1/2}`, constant in `φ`.
    pub fn initial_field(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for i in 0..self.n_tau - 2 {
            let t = self.tau(i);
            for _ in 0..self.n_phi {
                v.push(1.0 / t.cosh().sqrt());
            }
        }
        v
    }

    /// L-BFGS descent on the quotient with renormalization of the constraint
    /// integral to one after every step.
    pub fn minimize(&self, budget: &SobolevBudget) -> HardySobolevResult {
        let opts = LbfgsOptions {
            memory: 12,
            max_iter: budget.max_iter,
            gtol: 0.0,
            ftol: budget.rel_decrease,
        };
        let qs = self.qstar;
        let out = lbfgs(
            |v| self.quotient_and_gradient(v),
            &self.initial_field(),
            &opts,
            |v| {
                let (_, g, _, _) = self.integrals(v, false);
                let c = g.powf(-1.0 / qs);
                v.iter_mut().for_each(|x| *x *= c);
                c
            },
        );
        HardySobolevResult {
            value: out.value,
            field: out.x,
            iterations: out.iterations,
            converged: out.converged,
            history: out.history,
        }
    }
}

/// Infimum of `∫|∇u|^q` under `∫|u|^{q⋆}|x′|^{−s} = 1`, searched over
/// functions radially symmetric in `x′` and in `z`.
pub fn hardy_sobolev_s(params: &HardyParams, budget: &SobolevBudget) -> Result<HardySobolevResult> {
    let disc = HardySobolevDiscretization::new(*params, budget)?;
    Ok(disc.minimize(budget))
}

/// `∫|∇u|^q / (∫|u|^{q⋆}|x′|^{−s})^{q/q⋆}` of a Cartesian field, with the
/// weight cell-averaged near the axis `x′ = 0`.
pub fn sobolev_hardy_quotient(u: &GridFunction, params: &HardyParams) -> Result<f64> {
    let g = u.grid();
    if g.dim() != params.n || u.is_complex() {
        return Err(Error::validation("u", "field must be real and live on an N-dimensional grid"));
    }
    let h = g.spacing();
    let qs = params.critical_exponent();
    let q = params.p;
    let grads = gradient_fourth_order(u);
    let (e, c) = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let x = g.point_vec(idx);
            let w = axis_weight(&x[..params.k], -params.s, h);
            let g2: f64 = grads.iter().map(|d| d[idx] * d[idx]).sum();
            (g2.powf(0.5 * q), u.values()[idx].abs().powf(qs) * w)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if !(c > 0.0) {
        return Err(Error::Degenerate("constraint integral vanishes".into()));
    }
    let vol = g.cell_volume();
    Ok(vol * e / (vol * c).powf(q / qs))
}

fn gradient_fourth_order(u: &GridFunction) -> Vec<Vec<f64>> {
    let g = u.grid();
    let m = g.points_per_axis() as isize;
    let h = g.spacing();
    let vals = u.values();
    (0..g.dim())
        .map(|axis| {
            let s = g.stride(axis) as isize;
            (0..g.len())
                .map(|idx| {
                    let j = g.axis_index(idx, axis) as isize;
                    let at = |d: isize| {
                        if j + d < 0 || j + d >= m {
                            0.0
                        } else {
                            vals[(idx as isize + d * s) as usize]
                        }
                    };
                    (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h)
                })
                .collect()
        })
        .collect()
}

/// Sobolev quotient `∫|∇u|²/(∫|u|^{2⋆})^{2/2⋆}` of a radial function in `ℝⁿ`
/// given as `r ↦ (u(r), u′(r))`, by Simpson quadrature in `ln r` over
/// `[r_min, r_max]`.
pub fn radial_sobolev_quotient(
    n: usize,
    f: impl Fn(f64) -> (f64, f64) + Sync,
    r_min: f64,
    r_max: f64,
    nodes: usize,
) -> Result<f64> {
    if n < 3 {
        return Err(Error::validation("n", format!("critical quotient needs n >= 3, got {n}")));
    }
    if !(r_min > 0.0 && r_max > r_min) {
        return Err(Error::validation("r_min", "need 0 < r_min < r_max"));
    }
    let nodes = nodes.max(3) | 1;
    let crit = 2.0 * n as f64 / (n as f64 - 2.0);
    let (t0, t1) = (r_min.ln(), r_max.ln());
    let dt = (t1 - t0) / (nodes - 1) as f64;
    let w = simpson_weights(nodes, dt);
    let (a, b) = (0..nodes)
        .into_par_iter()
        .map(|i| {
            let r = (t0 + i as f64 * dt).exp();
            let (u, du) = f(r);
            let rn = r.powi(n as i32);
            (w[i] * du * du * rn, w[i] * u.abs().powf(crit) * rn)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    if !(b > 0.0) {
        return Err(Error::Degenerate("critical norm vanishes".into()));
    }
    let s = sphere_area(n);
    Ok(s.powf(2.0 / n as f64) * a / b.powf(2.0 / crit))
}

/// Box radius used by [`aubin_talenti_quotient`].
pub const AUBIN_TALENTI_BOX: f64 = 1000.0;

/// `S₀ = π n(n−2) (Γ(n/2)/Γ(n))^{2/n}`, the sharp Sobolev constant.
pub fn sobolev_constant(n: usize) -> f64 {
    let gamma_n: f64 = (1..n).map(|i| i as f64).product();
    let ratio = crate::special::gamma_half(n) / gamma_n;
    std::f64::consts::PI * (n * (n - 2)) as f64 * ratio.powf(2.0 / n as f64)
}

/// Sobolev quotients of `(ε+|x|²)^{−(n−2)/2}` smoothly cut off between half
/// the box radius and the box radius.
pub fn aubin_talenti_quotient_in_box(n: usize, eps_values: &[f64], box_radius: f64) -> Result<Vec<f64>> {
    eps_values
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::validation("eps", format!("need eps > 0, got {eps}")));
            }
            let b = (n as f64 - 2.0) / 2.0;
            let f = |r: f64| {
                let base = (eps + r * r).powf(-b);
                let dbase = -2.0 * b * r * (eps + r * r).powf(-b - 1.0);
                let (chi, dchi) = smooth_step(2.0 * (box_radius - r) / box_radius);
                (chi * base, chi * dbase - 2.0 / box_radius * dchi * base)
            };
            radial_sobolev_quotient(n, f, 1e-8 * eps.sqrt(), box_radius, 40001)
        })
        .collect()
}

pub fn aubin_talenti_quotient(n: usize, eps_values: &[f64]) -> Result<Vec<f64>> {
    aubin_talenti_quotient_in_box(n, eps_values, AUBIN_TALENTI_BOX)
}

/// Graded radial mesh `r_i = (i/E)^grading` on the unit ball.
#[derive(Debug, Clone, Copy)]
pub struct RadialBallGrid {
    pub elements: usize,
    pub grading: f64,
}

impl Default for RadialBallGrid {
    fn default() -> Self {
        Self { elements: 400, grading: 2.0 }
    }
}

impl RadialBallGrid {
    fn nodes(&self) -> Vec<f64> {
        (0..=self.elements)
            .map(|i| (i as f64 / self.elements as f64).powf(self.grading))
            .collect()
    }
    fn refined(&self) -> Self {
        Self { elements: 2 * self.elements, grading: self.grading }
    }
}

/// Brezis–Nirenberg estimate with its resolution error bar.
#[derive(Debug, Clone, Serialize)]
pub struct BrezisNirenbergEstimate {
    /// Quotient on the refined mesh.
    pub value: f64,
    /// Difference to the same computation on the base mesh.
    pub error_bar: f64,
    pub iterations: usize,
    /// `ε` of the best member of the cut-off family used as the seed.
    pub seed_epsilon: f64,
    pub lambda1: f64,
}

struct BnFunctional {
    n: usize,
    lambda: f64,
    r: Vec<f64>,
    crit: f64,
    gauss: (Vec<f64>, Vec<f64>),
}

impl BnFunctional {
    /// `(A, B, ∇A, ∇B)` with `A = ∫(u′² − λu²) r^{n−1}`, `B = ∫|u|^{2⋆} r^{n−1}`.
    fn integrals(&self, u: &[f64], want_grad: bool) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let ne = self.r.len() - 1;
        let node = |i: usize| if i < ne { u[i] } else { 0.0 };
        let (gx, gw) = &self.gauss;
        let mut a = 0.0;
        let mut b = 0.0;
        let mut ga = if want_grad { vec![0.0; ne] } else { Vec::new() };
        let mut gb = if want_grad { vec![0.0; ne] } else { Vec::new() };
        let nn = self.n as f64;
        for e in 0..ne {
            let (r0, r1) = (self.r[e], self.r[e + 1]);
            let len = r1 - r0;
            let (u0, u1) = (node(e), node(e + 1));
            let du = (u1 - u0) / len;
            let stiff = (r1.powf(nn) - r0.powf(nn)) / nn;
            a += du * du * stiff;
            if want_grad {
                let c = 2.0 * du * stiff / len;
                ga[e] -= c;
                if e + 1 < ne {
                    ga[e + 1] += c;
                }
            }
            for (x, w) in gx.iter().zip(gw) {
                let l = 0.5 * (1.0 + x);
                let r = r0 + l * len;
                let wq = 0.5 * w * len * r.powf(nn - 1.0);
                let val = u0 * (1.0 - l) + u1 * l;
                a -= self.lambda * wq * val * val;
                b += wq * val.abs().powf(self.crit);
                if want_grad {
                    let da = -2.0 * self.lambda * wq * val;
                    let db = wq * self.crit * val.abs().powf(self.crit - 1.0) * val.signum();
                    ga[e] += da * (1.0 - l);
                    gb[e] += db * (1.0 - l);
                    if e + 1 < ne {
                        ga[e + 1] += da * l;
                        gb[e + 1] += db * l;
                    }
                }
            }
        }
        (a, b, ga, gb)
    }

    fn quotient(&self, u: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (a, b, ga, gb) = self.integrals(u, want_grad);
        if !(b > 0.0) {
            return (f64::INFINITY, vec![0.0; u.len()]);
        }
        let theta = 2.0 / self.crit;
        let c = sphere_area(self.n).powf(1.0 - theta);
        let bt = b.powf(theta);
        let grad = if want_grad {
            ga.iter().zip(&gb).map(|(x, y)| c * (x / bt - theta * a / (bt * b) * y)).collect()
        } else {
            Vec::new()
        };
        (c * a / bt, grad)
    }

    fn family(&self, eps: f64) -> Vec<f64> {
        let b = (self.n as f64 - 2.0) / 2.0;
        self.r[..self.r.len() - 1]
            .iter()
            .map(|&r| smooth_step((0.75 - r) / 0.5).0 * (eps + r * r).powf(-b))
            .collect()
    }

    fn minimize(&self, max_iter: usize) -> (f64, usize, f64) {
        let eps_grid: Vec<f64> = (0..=48).map(|i| 10f64.powf(-6.0 + i as f64 / 8.0)).collect();
        let (best_eps, _) = eps_grid
            .iter()
            .map(|&e| (e, self.quotient(&self.family(e), false).0))
            .fold((1.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let opts = LbfgsOptions { memory: 12, max_iter, gtol: 0.0, ftol: 1e-13 };
        let crit = self.crit;
        let out = lbfgs(
            |u| self.quotient(u, true),
            &self.family(best_eps),
            &opts,
            |u| {
                let (_, b, _, _) = self.integrals(u, false);
                let c = b.powf(-1.0 / crit);
                u.iter_mut().for_each(|x| *x *= c);
                c
            },
        );
        (out.value, out.iterations, best_eps)
    }
}

/// `S_λ = inf ∫(|∇u|² − λu²)/(∫|u|^{2⋆})^{2/2⋆}` over radial functions on the
/// unit ball of `ℝⁿ`: best member of the cut-off family
/// `φ(x)(ε+|x|²)^{−(n−2)/2}` followed by quasi-Newton descent, on `grid` and on
/// its refinement.
pub fn brezis_nirenberg_s_lambda(lambda: f64, n: usize, grid: &RadialBallGrid) -> Result<BrezisNirenbergEstimate> {
    if n < 3 {
        return Err(Error::validation("n", format!("need n >= 3, got {n}")));
    }
    if grid.elements < 16 || !(grid.grading >= 1.0) {
        return Err(Error::validation("grid", "need at least 16 elements and grading >= 1"));
    }
    let lambda1 = lambda1_radial(n, 4000, 1.0)?;
    if !(lambda >= 0.0 && lambda < lambda1) {
        return Err(Error::Domain(format!("lambda = {lambda} outside [0, lambda_1 = {lambda1:.6})")));
    }
    let crit = 2.0 * n as f64 / (n as f64 - 2.0);
    let run = |g: &RadialBallGrid| {
        BnFunctional { n, lambda, r: g.nodes(), crit, gauss: gauss_legendre(4) }.minimize(4000)
    };
    let (coarse, _, _) = run(grid);
    let (fine, iterations, seed_epsilon) = run(&grid.refined());
    Ok(BrezisNirenbergEstimate {
        value: fine,
        error_bar: (fine - coarse).abs(),
        iterations,
        seed_epsilon,
        lambda1,
    })
}

/// Discretization of the ball for [`lambda1_ball`].
#[derive(Debug, Clone)]
pub enum BallGrid {
    /// Masked Cartesian grid; the ball of the given radius is centered at the
    /// grid center and must fit in the box.
    Cartesian { grid: Arc<CartesianGrid>, radius: f64 },
    /// Radial finite volumes with `nodes` cells.
    Radial { nodes: usize, radius: f64 },
}

/// First Dirichlet eigenvalue of `−Δ` on a ball.
pub fn lambda1_ball(n: usize, grid: &BallGrid) -> Result<f64> {
    match grid {
        BallGrid::Radial { nodes, radius } => lambda1_radial(n, *nodes, *radius),
        BallGrid::Cartesian { grid, radius } => lambda1_masked(n, grid, *radius),
    }
}

fn lambda1_radial(n: usize, nodes: usize, radius: f64) -> Result<f64> {
    if n == 0 || nodes < 8 || !(radius > 0.0) {
        return Err(Error::validation("grid", "need n >= 1, at least 8 cells and a positive radius"));
    }
    let h = radius / nodes as f64;
    let nn = n as f64;
    let vol = |i: usize| {
        let r = i as f64 * h;
        if i == 0 {
            (0.5 * h).powf(nn) / nn
        } else {
            ((r + 0.5 * h).powf(nn) - (r - 0.5 * h).powf(nn)) / nn
        }
    };
    let flux = |i: usize| ((i as f64 + 0.5) * h).powf(nn - 1.0) / h;
    let mut d = vec![0.0; nodes];
    let mut e = vec![0.0; nodes - 1];
    for i in 0..nodes {
        let left = if i == 0 { 0.0 } else { flux(i - 1) };
        d[i] = (left + flux(i)) / vol(i);
        if i + 1 < nodes {
            e[i] = -flux(i) / (vol(i) * vol(i + 1)).sqrt();
        }
    }
    Ok(tridiagonal_eigenvalue(&d, &e, 0, 1e-15))
}

fn lambda1_masked(n: usize, grid: &CartesianGrid, radius: f64) -> Result<f64> {
    if !(1..=3).contains(&n) || grid.dim() != n {
        return Err(Error::validation("n", format!("masked grids support n in 1..=3 matching the grid, got {n}")));
    }
    if !(radius > 0.0 && radius <= grid.radius()) {
        return Err(Error::validation("radius", "ball must fit inside the box"));
    }
    let h = grid.spacing();
    let c = grid.center();
    let inside = |x: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < radius - 1e-12 * h;
    let mut unknown = vec![usize::MAX; grid.len()];
    let mut nodes = Vec::new();
    for idx in 0..grid.len() {
        if inside(&grid.point_vec(idx)) {
            unknown[idx] = nodes.len();
            nodes.push(idx);
        }
    }
    if nodes.is_empty() {
        return Err(Error::Resource("no grid node inside the ball".into()));
    }
    // symmetric ghost-fluid stencil: a cut link at fraction θ adds 1/(θh²) to the diagonal
    let mut diag = vec![0.0; nodes.len()];
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (row, &idx) in nodes.iter().enumerate() {
        let x = grid.point_vec(idx);
        for a in 0..n {
            let s = grid.stride(a);
            for dir in [-1.0, 1.0] {
                let nb = if dir < 0.0 { idx - s } else { idx + s };
                if unknown[nb] != usize::MAX {
                    diag[row] += 1.0 / (h * h);
                    links[row].push(unknown[nb]);
                } else {
                    // solve |x − c + t e_a| = radius for the crossing t in (0, h]
                    let d0: f64 = x.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum();
                    let xa = dir * (x[a] - c[a]);
                    let t = -xa + (xa * xa - d0 + radius * radius).max(0.0).sqrt();
                    let theta = (t / h).clamp(1e-6, 1.0);
                    diag[row] += 1.0 / (theta * h * h);
                }
            }
        }
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut s = diag[i] * v[i];
            for &j in &links[i] {
                s -= v[j] / (h * h);
            }
            *o = s;
        });
    };
    let len = nodes.len();
    let mut x = vec![1.0; len];
    let mut ax = vec![0.0; len];
    let mut prev = f64::INFINITY;
    for it in 0..300 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        apply(&x, &mut ax);
        let rq: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        if (rq - prev).abs() <= 1e-12 * rq {
            return Ok(rq);
        }
        prev = rq;
        let (y, _) = cg(apply, &x, 1e-12, 20 * len).map_err(|e| match e {
            Error::Solver { message, .. } => Error::solver("inverse_iteration", it, message),
            other => other,
        })?;
        x = y;
    }
    Err(Error::solver("inverse_iteration", 300, "Rayleigh quotient did not settle"))
}

/// One row of the constants CSV.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantRow {
    pub quantity: String,
    pub params: Vec<(String, f64)>,
    pub value: f64,
    pub error_bar: f64,
    pub iterations: usize,
}

/// Writes `quantity,<params…>,value,error_bar,iterations`. All rows must share
/// the parameter names of the first row.
pub fn write_constants_csv(rows: &[ConstantRow], out: &mut impl Write) -> Result<()> {
    let names: Vec<&str> = rows.first().map(|r| r.params.iter().map(|p| p.0.as_str()).collect()).unwrap_or_default();
    let mut header = vec!["quantity"];
    header.extend(&names);
    header.extend(["value", "error_bar", "iterations"]);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        if row.params.len() != names.len() || row.params.iter().zip(&names).any(|(p, n)| p.0 != *n) {
            return Err(Error::validation("params", "rows must share the same parameter columns"));
        }
        let mut line = vec![row.quantity.clone()];
        line.extend(row.params.iter().map(|p| format!("{:.17e}", p.1)));
        line.push(format!("{:.17e}", row.value));
        line.push(format!("{:.17e}", row.error_bar));
        line.push(row.iterations.to_string());
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
