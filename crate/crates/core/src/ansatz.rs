//! Radial ground state of `-ΔU + U = U^p` by shooting, and the concentrating
//! approximate solutions built from it.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, GridFunction};
use crate::interp::Pchip;
use crate::linalg::linear_fit;
use crate::problem::{validate_exponent, ProblemSpec};
use crate::special::{simpson_weights, sphere_area};

/// Tuning of the shooting method.
#[derive(Debug, Clone)]
pub struct ShootingConfig {
    /// Number of fixed RK4 steps on `[0, r_max]`.
    pub steps: usize,
    /// Bisection depth on `U(0)`.
    pub depth: usize,
    /// Upper end of the bracket for `U(0)`; the lower end is the constant solution 1.
    pub upper_bracket: f64,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self { steps: 4096, depth: 60, upper_bracket: 20.0 }
    }
}

/// The ground state sampled on `[0, r_max]`, with an exponential tail
/// `C r^{-(n-1)/2} e^{-μ r}` used beyond the last node.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub n: usize,
    pub p: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub peak: f64,
    /// Fitted exponential decay rate μ.
    pub decay_rate: f64,
    tail_amplitude: f64,
    interp: Pchip,
}

/// Fourth-order slopes of an even profile sampled on a uniform grid from 0.
fn even_slopes(radii: &[f64], values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let h = radii[1] - radii[0];
    let at = |i: isize| values[i.unsigned_abs()];
    (0..m as isize)
        .map(|i| {
            if i + 2 < m as isize {
                (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h)
            } else {
                // one-sided fourth order at the outer end
                let i = i as usize;
                (25.0 * values[i] - 48.0 * values[i - 1] + 36.0 * values[i - 2] - 16.0 * values[i - 3]
                    + 3.0 * values[i - 4])
                    / (12.0 * h)
            }
        })
        .collect()
}

impl RadialProfile {
    fn assemble(n: usize, p: f64, radii: Vec<f64>, values: Vec<f64>, decay_rate: f64) -> Result<Self> {
        let interp = Pchip::hermite(radii.clone(), values.clone(), even_slopes(&radii, &values))?;
        let r_last = *radii.last().unwrap();
        let u_last = *values.last().unwrap();
        let tail_amplitude = u_last * r_last.powf((n as f64 - 1.0) / 2.0) * (decay_rate * r_last).exp();
        Ok(Self { n, p, peak: values[0], radii, values, decay_rate, tail_amplitude, interp })
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    /// `U(r)` for `r ≥ 0`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.r_max() {
            self.interp.eval(r)
        } else {
            self.tail_amplitude * r.powf(-(self.n as f64 - 1.0) / 2.0) * (-self.decay_rate * r).exp()
        }
    }

    /// `∫_{ℝⁿ} U^q dx` by Simpson's rule in the radial variable.
    pub fn moment(&self, q: f64) -> f64 {
        let h = self.radii[1] - self.radii[0];
        let w = simpson_weights(self.radii.len(), h);
        let s: f64 = self
            .radii
            .iter()
            .zip(&self.values)
            .zip(&w)
            .map(|((r, u), wi)| wi * u.powf(q) * r.powi(self.n as i32 - 1))
            .sum();
        sphere_area(self.n) * s
    }

    /// Max-norm residual of the radial ODE at the nodes, from sixth-order
    /// central differences (the profile is extended evenly through `r = 0`).
    pub fn ode_residual(&self) -> f64 {
        let u = &self.values;
        let m = u.len() as isize;
        let h = self.radii[1] - self.radii[0];
        let at = |i: isize| -> f64 { u[i.unsigned_abs()] };
        const D2: [f64; 4] = [-49.0 / 18.0, 1.5, -0.15, 1.0 / 90.0];
        const D1: [f64; 4] = [0.0, 0.75, -0.15, 1.0 / 60.0];
        let mut worst = 0.0f64;
        for i in 0..m - 3 {
            let c = at(i);
            let mut d2 = D2[0] * c;
            let mut d1 = 0.0;
            for k in 1..4 {
                d2 += D2[k] * (at(i + k as isize) + at(i - k as isize));
                d1 += D1[k] * (at(i + k as isize) - at(i - k as isize));
            }
            d2 /= h * h;
            d1 /= h;
            let radial = if i == 0 { (self.n as f64 - 1.0) * d2 } else { (self.n as f64 - 1.0) / (i as f64 * h) * d1 };
            let res = d2 + radial - c + c.abs().powf(self.p - 1.0) * c;
            worst = worst.max(res.abs());
        }
        worst
    }

    /// Writes the two-column text format with a metadata header.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# n p peak decay_rate")?;
        writeln!(w, "# {} {} {:.17e} {:.17e}", self.n, self.p, self.peak, self.decay_rate)?;
        for (r, u) in self.radii.iter().zip(&self.values) {
            writeln!(w, "{r:.17e} {u:.17e}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut meta: Option<(usize, f64, f64)> = None;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let parse_err = |m: &str| Error::Parse { position: lineno + 1, message: m.to_string() };
            if let Some(rest) = t.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.first().is_some_and(|f| f.parse::<f64>().is_ok()) {
                    if fields.len() != 4 {
                        return Err(parse_err("metadata line needs n p peak decay_rate"));
                    }
                    let n = fields[0].parse().map_err(|_| parse_err("bad n"))?;
                    let p = fields[1].parse().map_err(|_| parse_err("bad p"))?;
                    let mu = fields[3].parse().map_err(|_| parse_err("bad decay rate"))?;
                    meta = Some((n, p, mu));
                }
                continue;
            }
            let mut it = t.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => {
                    radii.push(a);
                    values.push(b);
                }
                _ => return Err(parse_err("expected two numeric columns")),
            }
        }
        let (n, p, mu) = meta.ok_or_else(|| Error::Parse { position: 0, message: "missing metadata line".into() })?;
        if radii.len() < 5 {
            return Err(Error::Parse { position: 0, message: "profile has too few rows".into() });
        }
        Self::assemble(n, p, radii, values, mu)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    /// `U` crosses zero.
    Over,
    /// `U'` turns positive while `U > 0`.
    Under,
}

fn rhs(n: usize, p: f64, r: f64, u: f64, du: f64) -> (f64, f64) {
    let nl = u - u.abs().powf(p - 1.0) * u;
    if r == 0.0 {
        (du, nl / n as f64)
    } else {
        (du, -(n as f64 - 1.0) / r * du + nl)
    }
}

fn rk4_step(n: usize, p: f64, r: f64, h: f64, u: f64, du: f64) -> (f64, f64) {
    let k1 = rhs(n, p, r, u, du);
    let k2 = rhs(n, p, r + 0.5 * h, u + 0.5 * h * k1.0, du + 0.5 * h * k1.1);
    let k3 = rhs(n, p, r + 0.5 * h, u + 0.5 * h * k2.0, du + 0.5 * h * k2.1);
    let k4 = rhs(n, p, r + h, u + h * k3.0, du + h * k3.1);
    (
        u + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        du + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Intervals near the origin get extra substeps, since the `(n-1)/r`
/// coefficient is large there compared to `1/h`.
const REFINED_INTERVALS: usize = 64;
const SUBSTEPS_NEAR: usize = 64;
const SUBSTEPS_FAR: usize = 4;

/// Integrates from `U(0) = u0`; stops at the first shooting event.
fn shoot(n: usize, p: f64, u0: f64, h: f64, steps: usize, record: bool) -> (Shot, Vec<f64>) {
    let mut out = Vec::new();
    if record {
        out.reserve(steps + 1);
        out.push(u0);
    }
    // start from the series U = u0 + a r² + b r⁴ at a tiny radius, which
    // avoids the coordinate singularity at the origin
    let f0 = u0 - u0.powf(p);
    let df0 = 1.0 - p * u0.powf(p - 1.0);
    let a = f0 / (2.0 * n as f64);
    let b = df0 * a / (4.0 * (n as f64 + 2.0));
    let hs = h / SUBSTEPS_NEAR as f64;
    let mut u = u0 + a * hs * hs + b * hs.powi(4);
    let mut du = 2.0 * a * hs + 4.0 * b * hs.powi(3);
    for i in 0..steps {
        let r = i as f64 * h;
        let (sub, first) = match i {
            0 => (SUBSTEPS_NEAR, 1),
            i if i < REFINED_INTERVALS => (SUBSTEPS_NEAR, 0),
            _ => (SUBSTEPS_FAR, 0),
        };
        let hk = h / sub as f64;
        for k in first..sub {
            (u, du) = rk4_step(n, p, r + k as f64 * hk, hk, u, du);
        }
        if u <= 0.0 {
            return (Shot::Over, out);
        }
        if du > 0.0 {
            return (Shot::Under, out);
        }
        if record {
            out.push(u);
        }
    }
    (Shot::Under, out)
}

/// Completes the profile on `[r_cut, r_max]` by a finite-difference
/// boundary-value solve, where the shooting trajectory is no longer
/// trustworthy. `left` is the value at node `cut - 1` and `right` the
/// asymptotic value at `r_max`. Returns values at nodes `cut..=steps`.
fn tail_bvp(n: usize, p: f64, h: f64, cut: usize, steps: usize, left: f64, right: f64) -> Vec<f64> {
    let m = steps - cut;
    let r0 = (cut - 1) as f64 * h;
    // initial guess: exponential interpolation between the end values
    let mut u: Vec<f64> = (1..=m)
        .map(|k| {
            let t = k as f64 / (m + 1) as f64;
            (left.ln() * (1.0 - t) + right.ln() * t).exp()
        })
        .collect();
    let nm1 = n as f64 - 1.0;
    for _ in 0..8 {
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        let mut worst = 0.0f64;
        for k in 0..m {
            let r = r0 + (k + 1) as f64 * h;
            let um = if k == 0 { left } else { u[k - 1] };
            let up = if k + 1 == m { right } else { u[k + 1] };
            let a = 1.0 / (h * h) - nm1 / (2.0 * r * h);
            let b = 1.0 / (h * h) + nm1 / (2.0 * r * h);
            let f = a * um - 2.0 * u[k] / (h * h) + b * up - u[k] + u[k].abs().powf(p - 1.0) * u[k];
            worst = worst.max(f.abs());
            lower[k] = a;
            upper[k] = b;
            diag[k] = -2.0 / (h * h) - 1.0 + p * u[k].abs().powf(p - 1.0);
            rhs[k] = -f;
        }
        // Thomas algorithm
        for k in 1..m {
            let w = lower[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        let mut du = vec![0.0; m];
        du[m - 1] = rhs[m - 1] / diag[m - 1];
        for k in (0..m - 1).rev() {
            du[k] = (rhs[k] - upper[k] * du[k + 1]) / diag[k];
        }
        u.iter_mut().zip(&du).for_each(|(a, d)| *a += d);
        if worst < 1e-15 * left {
            break;
        }
    }
    u.push(right);
    u
}

/// Ground state of `U'' + (n-1)/r U' - U + U^p = 0`, `U'(0) = 0`, `U → 0`.
pub fn solve_ground_state(n: usize, p: f64, tol: f64, r_max: f64) -> Result<RadialProfile> {
    solve_ground_state_with(n, p, tol, r_max, &ShootingConfig::default())
}

pub fn solve_ground_state_with(
    n: usize,
    p: f64,
    tol: f64,
    r_max: f64,
    cfg: &ShootingConfig,
) -> Result<RadialProfile> {
    if n == 0 {
        return Err(Error::validation("n", "dimension must be positive"));
    }
    validate_exponent(n, p)?;
    if !(tol > 1e-12 && tol < 1e-3) {
        return Err(Error::validation("tol", format!("tolerance must lie in (1e-12, 1e-3), got {tol}")));
    }
    if !(r_max.is_finite() && r_max > 2.0) {
        return Err(Error::validation("r_max", format!("r_max must exceed 2, got {r_max}")));
    }
    let steps = cfg.steps;
    let h = r_max / steps as f64;
    let (mut lo, mut hi) = (1.0, cfg.upper_bracket);
    let (hi_shot, _) = shoot(n, p, hi, h, steps, false);
    if hi_shot != Shot::Over {
        return Err(Error::solver(
            "shooting",
            0,
            format!("no sign change on the bracket [1, {hi}]: U(0) = {hi} does not overshoot"),
        ));
    }
    for _ in 0..cfg.depth {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot(n, p, mid, h, steps, false).0 {
            Shot::Over => hi = mid,
            Shot::Under => lo = mid,
        }
    }
    let (_, tr_lo) = shoot(n, p, lo, h, steps, true);
    let (_, tr_hi) = shoot(n, p, hi, h, steps, true);
    // keep the part of the trajectory on which both bracket ends agree
    let common = tr_lo.len().min(tr_hi.len());
    let mut cut = common;
    for i in 0..common {
        let scale = tr_lo[i].abs().max(1e-300);
        if (tr_lo[i] - tr_hi[i]).abs() > 1e-6 * scale {
            cut = i;
            break;
        }
    }
    // discard the last stretch where the bracket ends start to separate
    let cut = cut.saturating_sub(steps / 100).max(16);
    if cut < 32 {
        return Err(Error::Convergence("shooting trajectory separates immediately".into()));
    }
    let half = cut / 2;
    let rs: Vec<f64> = (half..cut).map(|i| i as f64 * h).collect();
    let ls: Vec<f64> = (half..cut)
        .map(|i| (tr_lo[i] * (i as f64 * h).powf((n as f64 - 1.0) / 2.0)).ln())
        .collect();
    let (ln_c, slope) = linear_fit(&rs, &ls);
    let mu = -slope;
    if !(mu.is_finite() && (mu - 1.0).abs() <= 0.1) {
        return Err(Error::Convergence(format!("fitted decay rate {mu} is not within 10% of 1")));
    }
    let c = ln_c.exp();
    let radii: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
    let far = c * r_max.powf(-(n as f64 - 1.0) / 2.0) * (-mu * r_max).exp();
    let mut values: Vec<f64> = tr_lo[..cut].to_vec();
    values.extend(tail_bvp(n, p, h, cut, steps, tr_lo[cut - 1], far));
    if values.windows(2).any(|w| !(w[1] < w[0])) || values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Convergence("non-monotone ground-state profile".into()));
    }
    let profile = RadialProfile::assemble(n, p, radii, values, mu)?;
    let res = profile.ode_residual();
    if res > tol {
        return Err(Error::Convergence(format!(
            "radial ODE residual {res:.3e} exceeds tolerance {tol:.1e} at step r_max/{steps}"
        )));
    }
    Ok(profile)
}

/// Loads a cached ground state from `dir` or solves and stores it there.
pub fn cached_ground_state(n: usize, p: f64, dir: Option<&Path>) -> Result<Arc<RadialProfile>> {
    let Some(dir) = dir else {
        return Ok(Arc::new(solve_ground_state(n, p, 1e-8, 20.0)?));
    };
    let path: PathBuf = dir.join(format!("ground_state_n{n}_p{p}.txt"));
    if let Ok(profile) = RadialProfile::load(&path) {
        if profile.n == n && profile.p == p {
            return Ok(Arc::new(profile));
        }
    }
    let profile = solve_ground_state(n, p, 1e-8, 20.0)?;
    std::fs::create_dir_all(dir)?;
    profile.save(&path)?;
    Ok(Arc::new(profile))
}

/// Frozen-point parameters of the ansatz.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzParams {
    pub xi: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// `α = ((1+V)/K)^{1/(p-1)}` and `β = (1+V)^{1/2}` evaluated at `εξ`.
pub fn scaling_coefficients(spec: &ProblemSpec, xi: &[f64]) -> Result<(f64, f64)> {
    let y: Vec<f64> = xi.iter().map(|v| v * spec.epsilon).collect();
    let w = spec.one_plus_v(&y)?;
    let k = spec.k_at(&y)?;
    Ok(((w / k).powf(1.0 / (spec.p - 1.0)), w.sqrt()))
}

pub fn ansatz_params(spec: &ProblemSpec, xi: &[f64], sigma: f64) -> Result<AnsatzParams> {
    let (alpha, beta) = scaling_coefficients(spec, xi)?;
    Ok(AnsatzParams { xi: xi.to_vec(), sigma, alpha, beta })
}

fn check_placement(profile: &RadialProfile, spec: &ProblemSpec, xi: &[f64], grid: &CartesianGrid, beta: f64) -> Result<()> {
    if profile.n != spec.n || (profile.p - spec.p).abs() > 1e-12 {
        return Err(Error::validation(
            "profile",
            format!("profile (n={}, p={}) does not match the problem (n={}, p={})", profile.n, profile.p, spec.n, spec.p),
        ));
    }
    if grid.dim() != spec.n || xi.len() != spec.n {
        return Err(Error::validation("xi", "point and grid must have the problem dimension"));
    }
    let margin = 4.0 / (beta * profile.decay_rate);
    let dist = grid.distance_to_boundary(xi);
    if dist < margin {
        return Err(Error::Placement(format!(
            "ξ = {xi:?} lies {dist:.3} from the box boundary, below the required margin {margin:.3}"
        )));
    }
    Ok(())
}

/// Samples `z_ξ(x) = α U(β |x - ξ|)`.
pub fn build_ansatz(
    profile: &RadialProfile,
    spec: &ProblemSpec,
    xi: &[f64],
    grid: Arc<CartesianGrid>,
) -> Result<GridFunction> {
    let (alpha, beta) = scaling_coefficients(spec, xi)?;
    check_placement(profile, spec, xi, &grid, beta)?;
    Ok(GridFunction::from_fn(grid, |x| {
        let r2: f64 = x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
        alpha * profile.eval(beta * r2.sqrt())
    }))
}

/// Samples `e^{iσ + i A(εξ)·x} α U(β |x - ξ|)`.
pub fn build_magnetic_ansatz(
    profile: &RadialProfile,
    spec: &ProblemSpec,
    xi: &[f64],
    sigma: f64,
    grid: Arc<CartesianGrid>,
) -> Result<GridFunction> {
    let (alpha, beta) = scaling_coefficients(spec, xi)?;
    check_placement(profile, spec, xi, &grid, beta)?;
    let y: Vec<f64> = xi.iter().map(|v| v * spec.epsilon).collect();
    let a = spec.a_at(&y);
    Ok(GridFunction::from_complex_fn(grid, |x| {
        let r2: f64 = x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
        let m = alpha * profile.eval(beta * r2.sqrt());
        let phase = sigma + a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>();
        (m * phase.cos(), m * phase.sin())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian_apply, make_grid};
    use crate::problem::Potential;

    fn spec(v: f64, k: f64, p: f64, n: usize) -> ProblemSpec {
        ProblemSpec::new(n, p, Potential::constant(v), Potential::constant(k), 0.1).unwrap()
    }

    #[test]
    fn ground_state_cubic_1d_is_sech() {
        let g = solve_ground_state(1, 3.0, 1e-8, 20.0).unwrap();
        let s2 = 2f64.sqrt();
        assert!((g.peak - s2).abs() < 1e-9, "{}", g.peak);
        for k in 0..=1000 {
            let r = k as f64 * 0.01;
            let err = (g.eval(r) - s2 / r.cosh()).abs();
            assert!(err < 1e-7, "r = {r}: {err:e}");
        }
        assert!((g.decay_rate - 1.0).abs() < 0.01);
    }

    #[test]
    fn ground_state_quadratic_1d() {
        let g = solve_ground_state(1, 2.0, 1e-8, 20.0).unwrap();
        assert!((g.peak - 1.5).abs() < 1e-9);
        let r: f64 = 3.0;
        assert!((g.eval(r) - 1.5 / (r / 2.0).cosh().powi(2)).abs() < 1e-8);
    }

    #[test]
    fn ground_state_matches_fine_oracle_in_3d() {
        // independent DOP853 shooting, 1e-13 tolerances
        const ORACLE: f64 = 4.337387679977015;
        let g = solve_ground_state(3, 3.0, 1e-8, 20.0).unwrap();
        assert!((g.peak - ORACLE).abs() / ORACLE < 1e-6, "{}", g.peak);
    }

    #[test]
    fn ground_state_is_bracket_independent() {
        let a = solve_ground_state(2, 3.0, 1e-8, 20.0).unwrap();
        let cfg = ShootingConfig { upper_bracket: 13.7, ..Default::default() };
        let b = solve_ground_state_with(2, 3.0, 1e-8, 20.0, &cfg).unwrap();
        assert!((a.peak - b.peak).abs() < 1e-7);
    }

    #[test]
    fn ground_state_errors() {
        assert!(matches!(solve_ground_state(3, 5.0, 1e-8, 20.0), Err(Error::Validation { .. })));
        let cfg = ShootingConfig { upper_bracket: 1.2, ..Default::default() };
        assert!(matches!(solve_ground_state_with(1, 3.0, 1e-8, 20.0, &cfg), Err(Error::Solver { .. })));
    }

    #[test]
    fn profile_round_trips_through_text() {
        let g = solve_ground_state(1, 3.0, 1e-8, 20.0).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# n p peak decay_rate\n"));
        let back = RadialProfile::read_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.n, 1);
        assert_eq!(back.peak, g.peak);
        assert!((back.eval(25.0) - g.eval(25.0)).abs() < 1e-20);
    }

    #[test]
    fn moment_matches_closed_form() {
        // ∫ (√2 sech)^4 = 4 · 4/3
        let g = solve_ground_state(1, 3.0, 1e-8, 20.0).unwrap();
        assert!((g.moment(4.0) - 16.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn scaling_coefficient_examples() {
        let (a, b) = scaling_coefficients(&spec(0.0, 1.0, 3.0, 1), &[0.0]).unwrap();
        assert_eq!((a, b), (1.0, 1.0));
        let (a, b) = scaling_coefficients(&spec(3.0, 1.0, 3.0, 1), &[0.0]).unwrap();
        assert!((a - 2.0).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
        let (a, b) = scaling_coefficients(&spec(0.0, 4.0, 3.0, 1), &[0.0]).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let bad = ProblemSpec::new(1, 3.0, Potential::expr("x - 5").unwrap(), Potential::constant(1.0), 1.0).unwrap();
        assert!(matches!(scaling_coefficients(&bad, &[0.0]), Err(Error::Domain(_))));
    }

    fn frozen_residual(m: usize) -> f64 {
        let profile = solve_ground_state(1, 3.0, 1e-8, 20.0).unwrap();
        let s = spec(3.0, 2.0, 3.0, 1);
        let grid = Arc::new(make_grid(1, 10.0, m).unwrap());
        let z = build_ansatz(&profile, &s, &[0.0], grid).unwrap();
        let lap = laplacian_apply(&z);
        (0..z.node_count())
            .map(|i| {
                let u = z.values()[i];
                (-lap.values()[i] + 4.0 * u - 2.0 * u * u * u).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ansatz_solves_frozen_equation_to_second_order() {
        let (r1, r2) = (frozen_residual(201), frozen_residual(401));
        let h: f64 = 0.1;
        let peak: f64 = 2f64.sqrt() * (4.0f64 / 2.0).sqrt();
        assert!(r1 < 10.0 * h * h * peak.powi(3), "{r1}");
        let ratio = r1 / r2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn ansatz_translation_equivariance_and_placement() {
        let profile = solve_ground_state(2, 3.0, 1e-8, 20.0).unwrap();
        let s = spec(0.0, 1.0, 3.0, 2);
        let grid = Arc::new(make_grid(2, 10.0, 41).unwrap());
        let z0 = build_ansatz(&profile, &s, &[0.0, 0.0], grid.clone()).unwrap();
        let z1 = build_ansatz(&profile, &s, &[1.0, -0.5], grid.clone()).unwrap();
        // node (i, j) of z1 equals node (i - 2, j + 1) of z0
        for i in 4..36 {
            for j in 4..36 {
                let a = z1.values()[grid.index(&[i, j])];
                let b = z0.values()[grid.index(&[i - 2, j + 1])];
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(matches!(build_ansatz(&profile, &s, &[8.0, 0.0], grid), Err(Error::Placement(_))));
    }

    #[test]
    fn magnetic_ansatz_modulus_and_phase() {
        let profile = solve_ground_state(2, 3.0, 1e-8, 20.0).unwrap();
        let s = spec(0.5, 1.0, 3.0, 2)
            .with_magnetic(vec![Potential::constant(1.0), Potential::constant(0.0)])
            .unwrap();
        let grid = Arc::new(make_grid(2, 8.0, 81).unwrap());
        let real = build_ansatz(&profile, &s, &[0.0, 0.0], grid.clone()).unwrap();
        for sigma in [0.0, 1.0, 2.5] {
            let z = build_magnetic_ansatz(&profile, &s, &[0.0, 0.0], sigma, grid.clone()).unwrap();
            for i in 0..z.node_count() {
                assert!((z.modulus(i) - real.values()[i]).abs() < 1e-14);
            }
        }
        let z = build_magnetic_ansatz(&profile, &s, &[0.0, 0.0], 0.3, grid.clone()).unwrap();
        let c = grid.index(&[40, 40]);
        let h = grid.spacing();
        let phase = |i: usize| {
            let (re, im) = z.at(i);
            im.atan2(re)
        };
        let dx = (phase(c + 81) - phase(c - 81)) / (2.0 * h);
        let dy = (phase(c + 1) - phase(c - 1)) / (2.0 * h);
        assert!((dx - 1.0).abs() < 1e-10 && dy.abs() < 1e-10);
        let s0 = spec(0.5, 1.0, 3.0, 2);
        let z0 = build_magnetic_ansatz(&profile, &s0, &[0.0, 0.0], 0.0, grid).unwrap();
        assert!(z0.real_part().sub(&real).max_abs() < 1e-15);
    }
}
