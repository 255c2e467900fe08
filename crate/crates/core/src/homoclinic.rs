//! Homoclinic orbits of the planar Hamiltonian system
//! `u′ = H_v`, `−v′ = H_u` with
//! `H = ½(v² + λu² + a(t)u²) − |u|^{σ+2}/((σ+2)(1+e^{−t})) + u²v²/(2(e^t+1))`,
//! on a truncated line with Dirichlet ends: the bifurcation value `λ₀`, the
//! parity of the linearization, Newton solves and pseudo-arclength
//! continuation of the bifurcating branch.

use std::fmt;
use std::io::Write;

use log::{debug, warn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{linear_fit, sturm_count, tridiagonal_eigenvalue, tridiagonal_solve, BandMatrix};
use crate::problem::Potential;

/// The truncated line `[−T, T]` split into `M` intervals. `u` lives on the
/// nodes `t_j = −T + j·dt` and `v` on the midpoints `t_{j+½}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineGrid {
    pub half_width: f64,
    pub intervals: usize,
}

impl LineGrid {
    pub fn new(half_width: f64, intervals: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::validation("T", format!("half width must be positive, got {half_width}")));
        }
        if intervals < 512 {
            return Err(Error::validation("M", format!("need at least 512 intervals, got {intervals}")));
        }
        Ok(Self { half_width, intervals })
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.half_width / self.intervals as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dt()
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        -self.half_width + (j as f64 + 0.5) * self.dt()
    }
}

impl Default for LineGrid {
    fn default() -> Self {
        Self { half_width: 20.0, intervals: 2048 }
    }
}

/// Parameters of the Hamiltonian.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub sigma: f64,
    /// Decaying coefficient `a(t)`, evaluated with the single variable `t`.
    pub a: Potential,
    pub lambda: f64,
}

impl HamiltonianSpec {
    /// Validates `σ > 0` and that `a` is non-negative and not identically zero
    /// on `[−50, 50]`.
    pub fn new(sigma: f64, a: Potential, lambda: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::validation("sigma", format!("need sigma > 0, got {sigma}")));
        }
        if !lambda.is_finite() {
            return Err(Error::validation("lambda", "lambda must be finite"));
        }
        let samples: Vec<f64> = (0..=4000).map(|i| a.eval(&[-50.0 + 0.025 * i as f64])).collect();
        if samples.iter().any(|v| !v.is_finite() || *v < -1e-14) {
            return Err(Error::validation("a", "coefficient must be finite and non-negative"));
        }
        if samples.iter().all(|v| *v == 0.0) {
            return Err(Error::validation("a", "coefficient must not vanish identically"));
        }
        Ok(Self { sigma, a, lambda })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    fn a_at(&self, t: f64) -> f64 {
        self.a.eval(&[t])
    }

    pub fn value(&self, t: f64, u: f64, v: f64) -> f64 {
        let s = self.sigma;
        0.5 * (v * v + (self.lambda + self.a_at(t)) * u * u)
            - u.abs().powf(s + 2.0) / ((s + 2.0) * (1.0 + (-t).exp()))
            + u * u * v * v / (2.0 * (t.exp() + 1.0))
    }

    /// `(H_u, H_v)`.
    pub fn gradient(&self, t: f64, u: f64, v: f64) -> (f64, f64) {
        let c = 1.0 / (t.exp() + 1.0);
        let g = 1.0 / (1.0 + (-t).exp());
        (
            (self.lambda + self.a_at(t)) * u - g * u.abs().powf(self.sigma) * u + c * u * v * v,
            v + c * u * u * v,
        )
    }
}

/// Bifurcation value and its ground state.
#[derive(Debug, Clone)]
pub struct Lambda0 {
    pub lambda0: f64,
    pub grid: LineGrid,
    /// Positive ground state on all nodes (zero at the ends), `dt Σ φ² = 1`.
    pub phi0: Vec<f64>,
}

fn linear_operator(a: &Potential, grid: &LineGrid) -> (Vec<f64>, Vec<f64>) {
    let dt = grid.dt();
    let n = grid.intervals - 1;
    let d = (1..=n).map(|j| 2.0 / (dt * dt) - a.eval(&[grid.node(j)])).collect();
    let e = vec![-1.0 / (dt * dt); n - 1];
    (d, e)
}

fn eigenvector(d: &[f64], e: &[f64], value: f64) -> Vec<f64> {
    let n = d.len();
    let shift = value - 1e-10 * (1.0 + value.abs());
    let mut x = vec![1.0; n];
    for _ in 0..6 {
        x = tridiagonal_solve(d, e, shift, &x);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
    }
    x
}

/// Smallest eigenvalue of `−d²/dt² − a(t)` with Dirichlet ends, by Sturm
/// bisection followed by inverse iteration for the eigenfunction.
pub fn lambda0(a: &Potential, grid: &LineGrid) -> Result<Lambda0> {
    let amax = (0..=grid.intervals).map(|j| a.eval(&[grid.node(j)])).fold(0.0, f64::max);
    let edge = a.eval(&[-grid.half_width]).abs().max(a.eval(&[grid.half_width]).abs());
    if edge > 1e-8 * amax {
        return Err(Error::validation(
            "T",
            format!("a(±T) = {edge:.3e} is not below 1e-8·max a; enlarge the truncation"),
        ));
    }
    let (d, e) = linear_operator(a, grid);
    let value = tridiagonal_eigenvalue(&d, &e, 0, 1e-15);
    if value >= 0.0 {
        return Err(Error::Domain(format!(
            "lambda0 = {value:.6e} >= 0: no bifurcation point in (-inf, 0)"
        )));
    }
    let x = eigenvector(&d, &e, value);
    let dt = grid.dt();
    let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let norm = (dt * x.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut phi0 = vec![0.0; grid.intervals + 1];
    for (j, v) in x.iter().enumerate() {
        phi0[j + 1] = sign * v / norm;
    }
    Ok(Lambda0 { lambda0: value, grid: *grid, phi0 })
}

/// Outcome of [`hyperbolicity_check`] for nonzero `λ`.
pub fn hyperbolicity_check(lambda: f64) -> Result<bool> {
    if lambda == 0.0 {
        return Err(Error::Degenerate("lambda = 0: the asymptotic spectrum is {0}".into()));
    }
    Ok(lambda < 0.0)
}

/// Sampled trajectory: `u` on the nodes (including the zero ends), `v` on the
/// midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: LineGrid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(grid: LineGrid) -> Self {
        Self { grid, u: vec![0.0; grid.intervals + 1], v: vec![0.0; grid.intervals] }
    }

    /// `δ(φ₀, φ₀′)` with `δ = amplitude / ‖φ₀‖∞`.
    pub fn seed(l0: &Lambda0, amplitude: f64) -> Self {
        let grid = l0.grid;
        let peak = l0.phi0.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let delta = amplitude / peak;
        let u: Vec<f64> = l0.phi0.iter().map(|p| delta * p).collect();
        let dt = grid.dt();
        let v = (0..grid.intervals).map(|j| (u[j + 1] - u[j]) / dt).collect();
        Self { grid, u, v }
    }

    fn pack(&self) -> Vec<f64> {
        let m = self.grid.intervals;
        let mut x = vec![0.0; 2 * m - 1];
        for j in 0..m {
            x[2 * j] = self.v[j];
        }
        for j in 1..m {
            x[2 * j - 1] = self.u[j];
        }
        x
    }

    fn unpack(grid: LineGrid, x: &[f64]) -> Self {
        let m = grid.intervals;
        let mut out = Self::zeros(grid);
        for j in 0..m {
            out.v[j] = x[2 * j];
        }
        for j in 1..m {
            out.u[j] = x[2 * j - 1];
        }
        out
    }

    pub fn amplitude(&self) -> f64 {
        self.u.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    /// `v` at node `j` by four-point interpolation of the midpoint values.
    pub fn v_at_node(&self, j: usize) -> f64 {
        let m = self.grid.intervals;
        let at = |k: isize| if k < 0 || k >= m as isize { 0.0 } else { self.v[k as usize] };
        let j = j as isize;
        (-at(j - 2) + 9.0 * at(j - 1) + 9.0 * at(j) - at(j + 1)) / 16.0
    }

    /// Weighted distance `(dt Σ (Δu² + Δv²))^{1/2}`.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        let dt = self.grid.dt();
        let s: f64 = self.u.iter().zip(&other.u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            + self.v.iter().zip(&other.v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (dt * s).sqrt()
    }

    /// Two columns `u v` per node, `v` interpolated to the nodes.
    pub fn write_columns(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "# t from {} to {} in {} intervals", -self.grid.half_width, self.grid.half_width, self.grid.intervals)?;
        for j in 0..=self.grid.intervals {
            writeln!(out, "{:.17e} {:.17e}", self.u[j], self.v_at_node(j))?;
        }
        Ok(())
    }
}

/// Box-scheme residual of `u′ = H_v` on the midpoints and `−v′ = H_u` on the
/// interior nodes, interleaved as `(v_{½}, u_1, v_{3/2}, u_2, …)`.
fn residual(spec: &HamiltonianSpec, grid: &LineGrid, x: &[f64]) -> Vec<f64> {
    let m = grid.intervals;
    let dt = grid.dt();
    let u = |j: usize| if j == 0 || j == m { 0.0 } else { x[2 * j - 1] };
    let v = |j: usize| x[2 * j];
    let mut f = vec![0.0; x.len()];
    for j in 0..m {
        let t = grid.midpoint(j);
        let c = 1.0 / (t.exp() + 1.0);
        let ub = 0.5 * (u(j) + u(j + 1));
        f[2 * j] = (u(j + 1) - u(j)) / dt - v(j) * (1.0 + c * ub * ub);
    }
    for j in 1..m {
        let t = grid.node(j);
        let c = 1.0 / (t.exp() + 1.0);
        let g = 1.0 / (1.0 + (-t).exp());
        let uj = u(j);
        let vb2 = 0.5 * (v(j - 1) * v(j - 1) + v(j) * v(j));
        let hu = (spec.lambda + spec.a_at(t)) * uj - g * uj.abs().powf(spec.sigma) * uj + c * uj * vb2;
        f[2 * j - 1] = -(v(j) - v(j - 1)) / dt - hu;
    }
    f
}

fn jacobian(spec: &HamiltonianSpec, grid: &LineGrid, x: &[f64]) -> BandMatrix {
    let m = grid.intervals;
    let dt = grid.dt();
    let n = x.len();
    let u = |j: usize| if j == 0 || j == m { 0.0 } else { x[2 * j - 1] };
    let v = |j: usize| x[2 * j];
    let mut jac = BandMatrix::zeros(n, 1, 1);
    for j in 0..m {
        let row = 2 * j;
        let t = grid.midpoint(j);
        let c = 1.0 / (t.exp() + 1.0);
        let ub = 0.5 * (u(j) + u(j + 1));
        jac.set(row, row, -(1.0 + c * ub * ub));
        if j >= 1 {
            jac.set(row, row - 1, -1.0 / dt - v(j) * c * ub);
        }
        if j + 1 < m {
            jac.set(row, row + 1, 1.0 / dt - v(j) * c * ub);
        }
    }
    for j in 1..m {
        let row = 2 * j - 1;
        let t = grid.node(j);
        let c = 1.0 / (t.exp() + 1.0);
        let g = 1.0 / (1.0 + (-t).exp());
        let uj = u(j);
        let vb2 = 0.5 * (v(j - 1) * v(j - 1) + v(j) * v(j));
        let s = spec.sigma;
        jac.set(row, row, -((spec.lambda + spec.a_at(t)) - g * (s + 1.0) * uj.abs().powf(s) + c * vb2));
        jac.set(row, row - 1, 1.0 / dt - c * uj * v(j - 1));
        jac.set(row, row + 1, -1.0 / dt - c * uj * v(j));
    }
    jac
}

/// `∂F/∂λ`: minus `u_j` on the node rows.
fn lambda_derivative(grid: &LineGrid, x: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; x.len()];
    for j in 1..grid.intervals {
        b[2 * j - 1] = -x[2 * j - 1];
    }
    b
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Max-norm residual of a trajectory for the given parameters.
pub fn bvp_residual(spec: &HamiltonianSpec, x: &Trajectory) -> f64 {
    max_norm(&residual(spec, &x.grid, &x.pack()))
}

/// Newton settings shared by single solves and continuation correctors.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Iteration stops once the max-norm residual is below this.
    pub tol: f64,
    /// Largest residual of an accepted point.
    pub accept: f64,
    pub max_iter: usize,
    /// Solutions with `max|u|` below this count as the trivial solution.
    pub amplitude_floor: f64,
    /// Largest admissible `|x(±T)|`.
    pub decay_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-11, accept: 1e-8, max_iter: 60, amplitude_floor: 1e-4, decay_tol: 1e-6 }
    }
}

/// A solution on the branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub lambda: f64,
    pub x: Trajectory,
    pub residual: f64,
    pub arclength: f64,
    pub amplitude: f64,
}

impl BranchPoint {
    /// `max(|x(−T)|, |x(T)|)`, with `v` taken at the outermost midpoints.
    pub fn edge_value(&self) -> f64 {
        let m = self.x.grid.intervals;
        self.x.v[0].abs().max(self.x.v[m - 1].abs())
    }
}

/// Damped Newton for a homoclinic orbit at `spec.lambda` from `guess`.
pub fn solve_homoclinic(spec: &HamiltonianSpec, guess: &Trajectory, opts: &NewtonOptions) -> Result<BranchPoint> {
    if !hyperbolicity_check(spec.lambda)? {
        return Err(Error::Domain(format!("lambda = {} > 0 is not hyperbolic", spec.lambda)));
    }
    if guess.amplitude() == 0.0 {
        return Err(Error::TrivialAttractor { amplitude: 0.0 });
    }
    let grid = guess.grid;
    let mut x = guess.pack();
    let mut f = residual(spec, &grid, &x);
    let mut iterations = 0;
    while max_norm(&f) > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::Convergence(format!(
                "Newton stopped at residual {:.3e} after {iterations} iterations",
                max_norm(&f)
            )));
        }
        let mut jac = jacobian(spec, &grid, &x);
        jac.factor()?;
        let step = jac.solve(&f);
        let f0 = l2(&f);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a - alpha * b).collect();
            let ft = residual(spec, &grid, &trial);
            if l2(&ft) < (1.0 - 1e-4 * alpha) * f0 || alpha < 1e-6 {
                x = trial;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        debug!("homoclinic Newton {iterations}: residual {:.3e}, damping {alpha}", max_norm(&f));
    }
    accept(spec, Trajectory::unpack(grid, &x), 0.0, opts)
}

fn accept(spec: &HamiltonianSpec, x: Trajectory, arclength: f64, opts: &NewtonOptions) -> Result<BranchPoint> {
    let residual = bvp_residual(spec, &x);
    let amplitude = x.amplitude();
    if amplitude < opts.amplitude_floor {
        return Err(Error::TrivialAttractor { amplitude });
    }
    if residual > opts.accept {
        return Err(Error::Convergence(format!("residual {residual:.3e} above {:.1e}", opts.accept)));
    }
    let point = BranchPoint { lambda: spec.lambda, x, residual, arclength, amplitude };
    if point.edge_value() > opts.decay_tol {
        return Err(Error::Resource(format!(
            "|x(±T)| = {:.3e} exceeds {:.1e}; enlarge T",
            point.edge_value(),
            opts.decay_tol
        )));
    }
    Ok(point)
}

/// Why a continuation run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// The step budget was used up.
    Budget,
    /// `max|u|` exceeded the cap (proxy for an unbounded branch).
    Unbounded,
    /// `λ` came within the margin of the boundary `λ = 0`.
    Boundary,
    /// The amplitude fell below the trivial threshold (the branch returned to
    /// the line of zero solutions).
    Trivial,
    /// A step failed after the allowed number of halvings.
    Stalled,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Budget => "budget",
            Termination::Unbounded => "unbounded-proxy",
            Termination::Boundary => "boundary",
            Termination::Trivial => "trivial",
            Termination::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    pub amplitude_cap: f64,
    /// Stop once `λ > −boundary_margin`.
    pub boundary_margin: f64,
    /// Stop once `max|u|` drops below this.
    pub trivial_amplitude: f64,
    pub max_halvings: usize,
    pub corrector_iter: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            amplitude_cap: 10.0,
            boundary_margin: 0.02,
            trivial_amplitude: 0.02,
            max_halvings: 5,
            corrector_iter: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Continuation {
    /// Accepted points, starting with the initial one.
    pub points: Vec<BranchPoint>,
    pub termination: Termination,
}

/// Weighted inner product on `(x, λ)`: `dt·⟨x, y⟩ + λ μ`.
fn winner(dt: f64, a: &[f64], la: f64, b: &[f64], lb: f64) -> f64 {
    dt * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + la * lb
}

/// Solves the bordered system `[J b; cᵀ d] (z, ζ) = (r, ρ)` through two
/// banded solves with the factored `J`.
fn bordered_solve(jac: &BandMatrix, b: &[f64], c: &[f64], d: f64, r: &[f64], rho: f64) -> Result<(Vec<f64>, f64)> {
    let y = jac.solve(r);
    let w = jac.solve(b);
    let cy: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
    let cw: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
    let den = d - cw;
    if den.abs() < 1e-14 {
        return Err(Error::solver("bordered_solve", 0, "singular bordered system"));
    }
    let zeta = (rho - cy) / den;
    let z = y.iter().zip(&w).map(|(a, b)| a - zeta * b).collect();
    Ok((z, zeta))
}

fn tangent(
    spec: &HamiltonianSpec,
    grid: &LineGrid,
    x: &[f64],
    previous: Option<(&[f64], f64)>,
    orientation: f64,
) -> Result<(Vec<f64>, f64)> {
    let dt = grid.dt();
    let mut jac = jacobian(spec, grid, x);
    jac.factor()?;
    let b = lambda_derivative(grid, x);
    let (mut tx, mut tl) = match previous {
        Some((px, pl)) => {
            let c: Vec<f64> = px.iter().map(|v| dt * v).collect();
            bordered_solve(&jac, &b, &c, pl, &vec![0.0; x.len()], 1.0)?
        }
        None => {
            let w = jac.solve(&b);
            (w.iter().map(|v| -v).collect(), 1.0)
        }
    };
    let norm = winner(dt, &tx, tl, &tx, tl).sqrt();
    tx.iter_mut().for_each(|v| *v /= norm);
    tl /= norm;
    if previous.is_none() && tl * orientation < 0.0 {
        tx.iter_mut().for_each(|v| *v = -*v);
        tl = -tl;
    }
    Ok((tx, tl))
}

/// Pseudo-arclength continuation in `(λ, x)` from an accepted point. The sign
/// of `ds` selects the initial direction: positive moves toward larger `λ`.
pub fn continue_branch(
    spec: &HamiltonianSpec,
    from: &BranchPoint,
    steps: usize,
    ds: f64,
    opts: &ContinuationOptions,
) -> Result<Continuation> {
    if from.residual > opts.newton.accept {
        return Err(Error::validation("from", format!("start residual {:.3e} above tolerance", from.residual)));
    }
    if ds == 0.0 || !ds.is_finite() {
        return Err(Error::validation("ds", "step must be finite and nonzero"));
    }
    let grid = from.x.grid;
    let mut points = vec![from.clone()];
    let mut x = from.x.pack();
    let mut lambda = from.lambda;
    let mut s = from.arclength;
    let mut tan = tangent(&spec.with_lambda(lambda), &grid, &x, None, ds.signum())?;
    let h0 = ds.abs();
    for _ in 0..steps {
        let mut h = h0;
        let mut accepted = None;
        for halving in 0..=opts.max_halvings {
            match corrector(spec, &grid, &x, lambda, &tan, h, opts) {
                Some(next) => {
                    accepted = Some(next);
                    break;
                }
                None => {
                    debug!("continuation step {h:.3e} failed (halving {halving})");
                    h *= 0.5;
                }
            }
        }
        let Some((xn, ln)) = accepted else {
            warn!("continuation stalled at lambda = {lambda}");
            return Ok(Continuation { points, termination: Termination::Stalled });
        };
        let next_tan = tangent(&spec.with_lambda(ln), &grid, &xn, Some((&tan.0, tan.1)), 1.0)?;
        s += h * ds.signum();
        x = xn;
        lambda = ln;
        tan = next_tan;
        let traj = Trajectory::unpack(grid, &x);
        let pspec = spec.with_lambda(lambda);
        let residual = bvp_residual(&pspec, &traj);
        let amplitude = traj.amplitude();
        points.push(BranchPoint { lambda, x: traj, residual, arclength: s, amplitude });
        if amplitude > opts.amplitude_cap {
            return Ok(Continuation { points, termination: Termination::Unbounded });
        }
        if lambda > -opts.boundary_margin {
            return Ok(Continuation { points, termination: Termination::Boundary });
        }
        if amplitude < opts.trivial_amplitude {
            return Ok(Continuation { points, termination: Termination::Trivial });
        }
    }
    Ok(Continuation { points, termination: Termination::Budget })
}

fn corrector(
    spec: &HamiltonianSpec,
    grid: &LineGrid,
    x0: &[f64],
    l0: f64,
    tan: &(Vec<f64>, f64),
    h: f64,
    opts: &ContinuationOptions,
) -> Option<(Vec<f64>, f64)> {
    let dt = grid.dt();
    let xp: Vec<f64> = x0.iter().zip(&tan.0).map(|(a, b)| a + h * b).collect();
    let lp = l0 + h * tan.1;
    let mut x = xp.clone();
    let mut lambda = lp;
    let c: Vec<f64> = tan.0.iter().map(|v| dt * v).collect();
    for _ in 0..opts.corrector_iter {
        if lambda >= 0.0 {
            return None;
        }
        let pspec = spec.with_lambda(lambda);
        let f = residual(&pspec, grid, &x);
        let dx: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
        let g = winner(dt, &tan.0, tan.1, &dx, lambda - lp);
        if max_norm(&f) <= opts.newton.tol && g.abs() <= 1e-12 {
            return Some((x, lambda));
        }
        let mut jac = jacobian(&pspec, grid, &x);
        jac.factor().ok()?;
        let b = lambda_derivative(grid, &x);
        let r: Vec<f64> = f.iter().map(|v| -v).collect();
        let (z, zeta) = bordered_solve(&jac, &b, &c, tan.1, &r, -g).ok()?;
        x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        lambda += zeta;
    }
    let f = residual(&spec.with_lambda(lambda), grid, &x);
    (max_norm(&f) <= opts.newton.accept).then_some((x, lambda))
}

/// Kernel count and parity of the linearization at the trivial solution.
#[derive(Debug, Clone, Serialize)]
pub struct ParityReport {
    /// Number of eigenvalues within the tolerance of zero.
    pub k: usize,
    pub parity: i32,
    /// Eigenvalues inside the tolerance window.
    pub kernel_eigenvalues: Vec<f64>,
    /// Smallest eigenvalue of the Gram matrix `∫u_i u_j` of the kernel, when
    /// the kernel is nontrivial.
    pub pairing: Option<f64>,
    pub tolerance: f64,
}

/// Parity at `λ` of the linearization of one channel.
pub fn parity_at(spec: &HamiltonianSpec, lambda: f64, grid: &LineGrid) -> Result<ParityReport> {
    parity_at_channels(std::slice::from_ref(spec), lambda, grid)
}

/// Parity of the block-diagonal linearization of independent channels. Each
/// block is `−Δ_h − a − λ` after eliminating `v`; a kernel element `(φ, φ′)`
/// pairs with `diag(1, 0)` through `∫φ²`.
pub fn parity_at_channels(channels: &[HamiltonianSpec], lambda: f64, grid: &LineGrid) -> Result<ParityReport> {
    if channels.is_empty() {
        return Err(Error::validation("channels", "need at least one channel"));
    }
    let dt = grid.dt();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = channels
        .iter()
        .map(|c| {
            let (mut d, e) = linear_operator(&c.a, grid);
            d.iter_mut().for_each(|v| *v -= lambda);
            (d, e)
        })
        .collect();
    let scale = blocks
        .iter()
        .map(|(d, e)| d.iter().map(|v| v.abs()).fold(0.0, f64::max) + 2.0 * e[0].abs())
        .fold(0.0, f64::max);
    let tol = 1e-6 * scale;
    let mut eigenvalues = Vec::new();
    let mut kernel: Vec<(usize, Vec<f64>)> = Vec::new();
    for (b, (d, e)) in blocks.iter().enumerate() {
        let below = sturm_count(d, e, -tol);
        let upto = sturm_count(d, e, tol);
        for idx in below..upto {
            let value = tridiagonal_eigenvalue(d, e, idx, 1e-15);
            eigenvalues.push(value);
            let scale = 1.0 / dt.sqrt();
            kernel.push((b, eigenvector(d, e, value).iter().map(|v| v * scale).collect()));
        }
    }
    let k = kernel.len();
    let pairing = if k == 0 {
        None
    } else {
        let mut gram = nalgebra::DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                if kernel[i].0 == kernel[j].0 {
                    gram[(i, j)] = dt * kernel[i].1.iter().zip(&kernel[j].1).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let (values, _) = crate::linalg::sym_eigen(&gram);
        Some(values[0])
    };
    if let Some(p) = pairing {
        if p < 1e-8 {
            return Err(Error::DegenerateCrossing { pairing: p });
        }
    }
    Ok(ParityReport {
        k,
        parity: if k % 2 == 0 { 1 } else { -1 },
        kernel_eigenvalues: eigenvalues,
        pairing,
        tolerance: tol,
    })
}

/// Exponential decay rate `μ` of `|x(t)|` from a least-squares fit of
/// `ln|x|` against `|t|` over `5 ≤ |t| ≤ T − 5`.
pub fn decay_rate(point: &BranchPoint) -> Result<f64> {
    let grid = point.x.grid;
    let t_max = grid.half_width - 5.0;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for j in 1..grid.intervals {
        let t = grid.node(j);
        if t.abs() >= 5.0 && t.abs() <= t_max {
            let r = point.x.u[j].hypot(point.x.v_at_node(j));
            if r > 0.0 {
                ts.push(t.abs());
                ys.push(r.ln());
            }
        }
    }
    if ts.len() < 4 {
        return Err(Error::Degenerate("too few samples in the decay window".into()));
    }
    let (_, slope) = linear_fit(&ts, &ys);
    Ok(-slope)
}

/// Largest mismatch between the discrete orbit and fine RK4 integrations of
/// the ODE, each started from the orbit's own state and run over a segment of
/// length about `segment_length` with `substeps` RK4 steps per grid interval.
/// Shooting across the whole line is not usable: the unstable direction
/// amplifies round-off by `e^{2√|λ| T}`.
pub fn shooting_mismatch(spec: &HamiltonianSpec, point: &BranchPoint, segment_length: f64, substeps: usize) -> f64 {
    let x = &point.x;
    let grid = x.grid;
    let dt = grid.dt();
    let segment = ((segment_length / dt).round() as usize).clamp(1, grid.intervals);
    let rhs = |t: f64, u: f64, v: f64| {
        let (hu, hv) = spec.gradient(t, u, v);
        (hv, -hu)
    };
    let mut worst = 0.0f64;
    let mut start = 0;
    while start + segment <= grid.intervals {
        let mut t = grid.node(start);
        let mut u = x.u[start];
        let mut v = x.v_at_node(start);
        let h = dt / substeps as f64;
        for _ in 0..segment * substeps {
            let k1 = rhs(t, u, v);
            let k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
            let k3 = rhs(t + 0.5 * h, u + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
            let k4 = rhs(t + h, u + h * k3.0, v + h * k3.1);
            u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            t += h;
        }
        let end = start + segment;
        worst = worst.max((u - x.u[end]).abs()).max((v - x.v_at_node(end)).abs());
        start = end;
    }
    worst
}

/// Branch CSV with one row per point.
pub fn write_branch_csv(run: &Continuation, out: &mut impl Write) -> Result<()> {
    writeln!(out, "arclength,lambda,amplitude,residual,termination_cause")?;
    for p in &run.points {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{}",
            p.arclength, p.lambda, p.amplitude, p.residual, run.termination
        )?;
    }
    Ok(())
}
