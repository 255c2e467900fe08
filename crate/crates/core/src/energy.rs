//! Discrete energy of the (magnetic) semiclassical problem
//!
//! `f_ε(u) = ½∫|(∇/i − A(εx))u|² + ½∫(1 + V(εx))|u|² − 1/(p+1)∫K(εx)|u|^{p+1}`
//!
//! with its H¹ gradient, Hessian action, Nehari scaling, and a Pohozaev
//! identity check on balls.
//!
//! All integrals use the node-sum measure `h^n Σ`, and the kinetic term sums
//! squared link differences (links to the zero exterior included). The
//! magnetic term multiplies each link by the phase `e^{-i h A_a(ε x_mid)}`,
//! which makes it exactly gauge covariant for constant `A`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, FieldKind, GridFunction, ShiftedLaplacianSolver};
use crate::problem::ProblemSpec;
use crate::special::gauss_legendre;

/// Which functional is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Coefficients sampled at `εx` on every node.
    Full,
    /// Coefficients frozen at `εξ` for the given point `ξ`.
    Frozen(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub value: f64,
    pub grad_norm: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub nonlinear: f64,
}

impl EnergyReport {
    /// Flat `key=value` record.
    pub fn to_record(&self) -> String {
        format!(
            "value={:.17e}\ngrad_norm={:.17e}\nkinetic={:.17e}\npotential={:.17e}\nnonlinear={:.17e}\n",
            self.value, self.grad_norm, self.kinetic, self.potential, self.nonlinear
        )
    }
}

/// The discretized functional on a fixed grid, with coefficients sampled once.
#[derive(Debug)]
pub struct Functional {
    grid: Arc<CartesianGrid>,
    p: f64,
    /// `1 + V` per node.
    mass: Vec<f64>,
    /// `K` per node.
    coupling: Vec<f64>,
    /// Per axis, the phase `h A_a` of the link from each node to its upper neighbor.
    phases: Option<Vec<Vec<f64>>>,
    riesz: ShiftedLaplacianSolver,
}

impl Functional {
    pub fn new(spec: &ProblemSpec, grid: Arc<CartesianGrid>, mode: Mode) -> Result<Self> {
        if grid.dim() != spec.n {
            return Err(Error::validation("grid", "grid dimension differs from the problem dimension"));
        }
        let eps = spec.epsilon;
        let n = grid.len();
        let h = grid.spacing();
        let mut mass = Vec::with_capacity(n);
        let mut coupling = Vec::with_capacity(n);
        let mut phases = spec.a.as_ref().map(|_| vec![vec![0.0; n]; spec.n]);
        match &mode {
            Mode::Frozen(xi) => {
                if xi.len() != spec.n {
                    return Err(Error::validation("xi", "frozen point has the wrong dimension"));
                }
                let y: Vec<f64> = xi.iter().map(|v| v * eps).collect();
                let w = spec.one_plus_v(&y)?;
                let k = spec.k_at(&y)?;
                mass.resize(n, w);
                coupling.resize(n, k);
                if let Some(ph) = phases.as_mut() {
                    let a = spec.a_at(&y);
                    for (axis, col) in ph.iter_mut().enumerate() {
                        col.iter_mut().for_each(|v| *v = h * a[axis]);
                    }
                }
            }
            Mode::Full => {
                let mut x = vec![0.0; spec.n];
                for i in 0..n {
                    grid.point(i, &mut x);
                    x.iter_mut().for_each(|v| *v *= eps);
                    mass.push(spec.one_plus_v(&x)?);
                    coupling.push(spec.k_at(&x)?);
                }
                if let Some(ph) = phases.as_mut() {
                    for (axis, col) in ph.iter_mut().enumerate() {
                        for (i, slot) in col.iter_mut().enumerate() {
                            grid.point(i, &mut x);
                            x[axis] += 0.5 * h;
                            x.iter_mut().for_each(|v| *v *= eps);
                            *slot = h * spec.a.as_ref().unwrap()[axis].eval(&x);
                        }
                    }
                }
            }
        }
        let riesz = ShiftedLaplacianSolver::h1(&grid);
        Ok(Self { grid, p: spec.p, mass, coupling, phases, riesz })
    }

    pub fn grid(&self) -> &Arc<CartesianGrid> {
        &self.grid
    }

    pub fn is_magnetic(&self) -> bool {
        self.phases.is_some()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn check(&self, u: &GridFunction) -> Result<usize> {
        if u.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::validation("u", "field lives on a different grid than the functional"));
        }
        match (u.kind(), self.is_magnetic()) {
            (FieldKind::Real, true) => Err(Error::validation(
                "field_kind",
                "a nonzero magnetic potential requires a complex field",
            )),
            (FieldKind::Real, false) => Ok(1),
            (FieldKind::Complex, _) => Ok(2),
        }
    }

    /// `(−Δ_A + 1 + V) u` on raw storage, i.e. the linear part of the strong residual.
    fn apply_linear(&self, comps: usize, u: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let m = g.points_per_axis();
        let inv_h2 = 1.0 / (g.spacing() * g.spacing());
        let dim = g.dim();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (2.0 * dim as f64 * inv_h2 + self.mass[i / comps]) * u[i];
        }
        for axis in 0..dim {
            let s = g.stride(axis);
            for idx in 0..g.len() {
                if g.axis_index(idx, axis) + 1 >= m {
                    continue;
                }
                let hi = idx + s;
                if comps == 1 {
                    out[idx] -= inv_h2 * u[hi];
                    out[hi] -= inv_h2 * u[idx];
                } else {
                    let th = self.phases.as_ref().map_or(0.0, |ph| ph[axis][idx]);
                    let (c, sn) = (th.cos(), th.sin());
                    let (ur, ui) = (u[2 * idx], u[2 * idx + 1]);
                    let (vr, vi) = (u[2 * hi], u[2 * hi + 1]);
                    // node idx receives e^{-iθ} u_hi; node hi receives e^{iθ} u_idx
                    out[2 * idx] -= inv_h2 * (c * vr + sn * vi);
                    out[2 * idx + 1] -= inv_h2 * (c * vi - sn * vr);
                    out[2 * hi] -= inv_h2 * (c * ur - sn * ui);
                    out[2 * hi + 1] -= inv_h2 * (c * ui + sn * ur);
                }
            }
        }
    }

    /// Strong residual `−Δ_A u + (1+V)u − K|u|^{p−1}u` on raw storage.
    pub fn strong_residual_raw(&self, comps: usize, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_linear(comps, u, &mut out);
        for i in 0..self.grid.len() {
            let a = modulus(u, comps, i);
            let f = self.coupling[i] * a.powf(self.p - 1.0);
            for c in 0..comps {
                out[i * comps + c] -= f * u[i * comps + c];
            }
        }
        out
    }

    /// Kinetic, potential and nonlinear parts of the energy.
    fn parts(&self, comps: usize, u: &[f64]) -> (f64, f64, f64) {
        let vol = self.grid.cell_volume();
        let mut lin = vec![0.0; u.len()];
        self.apply_linear(comps, u, &mut lin);
        let quad: f64 = lin.iter().zip(u).map(|(a, b)| a * b).sum();
        let mut potential = 0.0;
        let mut nonlinear = 0.0;
        for i in 0..self.grid.len() {
            let a = modulus(u, comps, i);
            potential += self.mass[i] * a * a;
            nonlinear += self.coupling[i] * a.powf(self.p + 1.0);
        }
        let potential = 0.5 * vol * potential;
        let kinetic = 0.5 * vol * quad - potential;
        (kinetic, potential, vol * nonlinear / (self.p + 1.0))
    }

    pub fn value(&self, u: &GridFunction) -> Result<f64> {
        let comps = self.check(u)?;
        let (k, v, nl) = self.parts(comps, u.values());
        Ok(k + v - nl)
    }

    pub fn energy(&self, u: &GridFunction) -> Result<EnergyReport> {
        let comps = self.check(u)?;
        let (kinetic, potential, nonlinear) = self.parts(comps, u.values());
        let r = self.strong_residual_raw(comps, u.values());
        let mut g = r.clone();
        self.riesz.solve_in_place(&mut g, comps);
        let gn2: f64 = self.grid.cell_volume() * r.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        Ok(EnergyReport {
            value: kinetic + potential - nonlinear,
            grad_norm: gn2.max(0.0).sqrt(),
            kinetic,
            potential,
            nonlinear,
        })
    }

    /// H¹ Riesz representative of `Df(u)`.
    pub fn gradient(&self, u: &GridFunction) -> Result<GridFunction> {
        let comps = self.check(u)?;
        let mut r = self.strong_residual_raw(comps, u.values());
        self.riesz.solve_in_place(&mut r, comps);
        GridFunction::from_values(u.grid().clone(), r, u.kind())
    }

    /// `D²f(u)[v, ·]` as a strong (unmapped) residual on raw storage.
    pub fn hessian_strong_raw(&self, comps: usize, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_linear(comps, v, &mut out);
        let p = self.p;
        for i in 0..self.grid.len() {
            let k = self.coupling[i];
            if comps == 1 {
                out[i] -= p * k * u[i].abs().powf(p - 1.0) * v[i];
            } else {
                let (ur, ui) = (u[2 * i], u[2 * i + 1]);
                let a2 = ur * ur + ui * ui;
                let ap = a2.sqrt().powf(p - 1.0);
                out[2 * i] -= k * ap * v[2 * i];
                out[2 * i + 1] -= k * ap * v[2 * i + 1];
                if a2 > 0.0 {
                    let proj = (p - 1.0) * k * ap * (ur * v[2 * i] + ui * v[2 * i + 1]) / a2;
                    out[2 * i] -= proj * ur;
                    out[2 * i + 1] -= proj * ui;
                }
            }
        }
        out
    }

    /// H¹ Riesz representative of `D²f(u)[v, ·]`.
    pub fn hessian_apply(&self, u: &GridFunction, v: &GridFunction) -> Result<GridFunction> {
        let comps = self.check(u)?;
        if !u.same_layout(v) {
            return Err(Error::validation("v", "direction must share grid and field kind with u"));
        }
        let mut r = self.hessian_strong_raw(comps, u.values(), v.values());
        self.riesz.solve_in_place(&mut r, comps);
        GridFunction::from_values(u.grid().clone(), r, u.kind())
    }

    /// Applies the H¹ Riesz map in place.
    pub fn riesz_in_place(&self, data: &mut [f64], comps: usize) {
        self.riesz.solve_in_place(data, comps);
    }

    /// `t > 0` with `t u` on the Nehari manifold.
    pub fn nehari_scale(&self, u: &GridFunction) -> Result<f64> {
        let comps = self.check(u)?;
        let (k, v, nl) = self.parts(comps, u.values());
        let q = 2.0 * (k + v);
        let n = nl * (self.p + 1.0);
        if !(n > 0.0) || !(q > 0.0) {
            return Err(Error::Degenerate(format!("Nehari scaling needs positive forms, got Q = {q:.3e}, N = {n:.3e}")));
        }
        Ok((q / n).powf(1.0 / (self.p - 1.0)))
    }
}

fn modulus(u: &[f64], comps: usize, i: usize) -> f64 {
    if comps == 1 {
        u[i].abs()
    } else {
        u[2 * i].hypot(u[2 * i + 1])
    }
}

pub fn energy(u: &GridFunction, spec: &ProblemSpec) -> Result<EnergyReport> {
    Functional::new(spec, u.grid().clone(), Mode::Full)?.energy(u)
}

pub fn gradient(u: &GridFunction, spec: &ProblemSpec) -> Result<GridFunction> {
    Functional::new(spec, u.grid().clone(), Mode::Full)?.gradient(u)
}

pub fn hessian_apply(u: &GridFunction, v: &GridFunction, spec: &ProblemSpec) -> Result<GridFunction> {
    Functional::new(spec, u.grid().clone(), Mode::Full)?.hessian_apply(u, v)
}

pub fn nehari_scale(u: &GridFunction, spec: &ProblemSpec) -> Result<f64> {
    Functional::new(spec, u.grid().clone(), Mode::Full)?.nehari_scale(u)
}

/// The two sides of the Pohozaev identity for `−Δu = |u|^{p−1}u + λu` on the
/// ball `|x| < R`:
/// `n∫F(u) + (2−n)/2 ∫u f(u) = ½∫_{∂B}(x·ν)|∂u/∂ν|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PohozaevTerms {
    pub primitive: f64,
    pub pairing: f64,
    pub boundary: f64,
}

impl PohozaevTerms {
    pub fn residual(&self) -> f64 {
        (self.primitive + self.pairing - self.boundary).abs()
    }

    /// Magnitude of the largest individual term.
    pub fn scale(&self) -> f64 {
        self.primitive.abs().max(self.pairing.abs()).max(self.boundary.abs())
    }
}

pub fn pohozaev_terms(u: &GridFunction, ball_radius: f64, p: f64, lambda: f64) -> Result<PohozaevTerms> {
    let g = u.grid();
    let n = g.dim();
    let h = g.spacing();
    if !(ball_radius > 0.0) || ball_radius + 4.0 * h > g.distance_to_boundary(g.center()) + 1e-12 * ball_radius {
        return Err(Error::validation(
            "ball_radius",
            format!("ball of radius {ball_radius} is not contained in the grid with a 4h margin"),
        ));
    }
    if u.is_complex() {
        return Err(Error::validation("u", "the Pohozaev check expects a real field"));
    }
    let c = g.center().to_vec();
    let vol = g.cell_volume();
    let mut big_f = 0.0;
    let mut uf = 0.0;
    let mut x = vec![0.0; n];
    for i in 0..g.len() {
        g.point(i, &mut x);
        let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 >= ball_radius * ball_radius {
            continue;
        }
        let v = u.values()[i];
        let a = v.abs();
        big_f += a.powf(p + 1.0) / (p + 1.0) + 0.5 * lambda * v * v;
        uf += a.powf(p + 1.0) + lambda * v * v;
    }
    let primitive = n as f64 * vol * big_f;
    let pairing = 0.5 * (2.0 - n as f64) * vol * uf;
    // boundary term: one-sided second-order normal differences with step 2h,
    // using the Dirichlet value on the sphere
    let delta = 2.0 * h;
    let normal_sq = |omega: &[f64]| -> f64 {
        let at = |t: f64| {
            let y: Vec<f64> = c.iter().zip(omega).map(|(ci, o)| ci + t * o).collect();
            u.sample(&y).0
        };
        // u = 0 on the sphere; sampling there would straddle the kink at the boundary
        let d = (-4.0 * at(ball_radius - delta) + at(ball_radius - 2.0 * delta)) / (2.0 * delta);
        d * d
    };
    let surface: f64 = match n {
        1 => normal_sq(&[1.0]) + normal_sq(&[-1.0]),
        2 => {
            let k = 512;
            (0..k)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                    normal_sq(&[t.cos(), t.sin()])
                })
                .sum::<f64>()
                * 2.0
                * std::f64::consts::PI
                / k as f64
                * ball_radius
        }
        3 => {
            let (nodes, weights) = gauss_legendre(64);
            let k = 128;
            let mut acc = 0.0;
            for (ct, w) in nodes.iter().zip(&weights) {
                let st = (1.0 - ct * ct).sqrt();
                for j in 0..k {
                    let ph = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                    acc += w * normal_sq(&[st * ph.cos(), st * ph.sin(), *ct]);
                }
            }
            acc * 2.0 * std::f64::consts::PI / k as f64 * ball_radius * ball_radius
        }
        _ => return Err(Error::validation("u", "Pohozaev check supports dimensions 1 to 3")),
    };
    // x·ν = R on the sphere
    let boundary = 0.5 * ball_radius * surface;
    Ok(PohozaevTerms { primitive, pairing, boundary })
}

/// `|LHS − RHS|` of the Pohozaev identity for `−Δu = |u|^{p−1}u + λu` on a ball
/// centered at the grid center.
pub fn pohozaev_residual(u: &GridFunction, ball_radius: f64, p: f64, lambda: f64) -> Result<f64> {
    Ok(pohozaev_terms(u, ball_radius, p, lambda)?.residual())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{build_ansatz, build_magnetic_ansatz, solve_ground_state};
    use crate::grid::{h1_inner, make_grid};
    use crate::problem::Potential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec1(v: Potential, k: Potential, eps: f64) -> ProblemSpec {
        ProblemSpec::new(1, 3.0, v, k, eps).unwrap()
    }

    fn random_smooth(grid: &Arc<CartesianGrid>, rng: &mut ChaCha8Rng, kind: FieldKind) -> GridFunction {
        let n = grid.dim();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = rng.gen_range(0.5..1.5);
        let a = rng.gen_range(0.5..1.5);
        let k: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let envelope = move |x: &[f64]| {
            let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            a * (-r2 / (2.0 * w * w)).exp()
        };
        match kind {
            FieldKind::Real => GridFunction::from_fn(grid.clone(), move |x| envelope(x)),
            FieldKind::Complex => GridFunction::from_complex_fn(grid.clone(), move |x| {
                let ph: f64 = x.iter().zip(&k).map(|(a, b)| a * b).sum();
                let e = envelope(x);
                (e * ph.cos(), e * ph.sin())
            }),
        }
    }

    #[test]
    fn zero_field_has_zero_energy_and_gradient() {
        let s = spec1(Potential::expr("x^2").unwrap(), Potential::constant(1.0), 0.1);
        let g = Arc::new(make_grid(1, 8.0, 65).unwrap());
        let u = GridFunction::zeros(g, FieldKind::Real);
        let r = energy(&u, &s).unwrap();
        assert_eq!((r.value, r.grad_norm), (0.0, 0.0));
        assert_eq!(gradient(&u, &s).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn exact_ansatz_is_nearly_critical() {
        let profile = solve_ground_state(1, 3.0, 1e-8, 20.0).unwrap();
        let s = spec1(Potential::constant(0.5), Potential::constant(2.0), 0.1);
        let mut last = None;
        for m in [241, 481] {
            let g = Arc::new(make_grid(1, 12.0, m).unwrap());
            let h = g.spacing();
            let z = build_ansatz(&profile, &s, &[0.0], g).unwrap();
            let gn = energy(&z, &s).unwrap().grad_norm;
            assert!(gn < 10.0 * h * h, "{gn}");
            if let Some(prev) = last {
                let ratio: f64 = prev / gn;
                assert!((3.5..4.5).contains(&ratio), "{ratio}");
            }
            last = Some(gn);
        }
    }

    #[test]
    fn gradient_matches_centered_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let configs: Vec<(ProblemSpec, usize, FieldKind)> = vec![
            (spec1(Potential::expr("x^2").unwrap(), Potential::constant(1.0), 0.2), 1, FieldKind::Real),
            (
                ProblemSpec::new(2, 2.5, Potential::expr("0.3*sin(x)*cos(y)").unwrap(), Potential::expr("1 + 0.2*x^2").unwrap(), 0.3)
                    .unwrap()
                    .with_magnetic(vec![Potential::expr("-y").unwrap(), Potential::expr("x").unwrap()])
                    .unwrap(),
                2,
                FieldKind::Complex,
            ),
        ];
        for (s, n, kind) in configs {
            let g = Arc::new(make_grid(n, 5.0, if n == 1 { 101 } else { 41 }).unwrap());
            let f = Functional::new(&s, g.clone(), Mode::Full).unwrap();
            for _ in 0..5 {
                let u = random_smooth(&g, &mut rng, kind);
                let v = random_smooth(&g, &mut rng, kind);
                let t = 1e-4;
                let mut up = u.clone();
                up.axpy(t, &v);
                let mut um = u.clone();
                um.axpy(-t, &v);
                let fd = (f.value(&up).unwrap() - f.value(&um).unwrap()) / (2.0 * t);
                let an = h1_inner(&f.gradient(&u).unwrap(), &v);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} {an}");
            }
        }
    }

    #[test]
    fn hessian_is_symmetric_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = ProblemSpec::new(2, 3.0, Potential::expr("0.2*x^2").unwrap(), Potential::constant(1.0), 0.5)
            .unwrap()
            .with_magnetic(vec![Potential::constant(0.3), Potential::expr("x").unwrap()])
            .unwrap();
        let g = Arc::new(make_grid(2, 5.0, 41).unwrap());
        let f = Functional::new(&s, g.clone(), Mode::Full).unwrap();
        let u = random_smooth(&g, &mut rng, FieldKind::Complex);
        let v = random_smooth(&g, &mut rng, FieldKind::Complex);
        let w = random_smooth(&g, &mut rng, FieldKind::Complex);
        let hv = f.hessian_apply(&u, &v).unwrap();
        let hw = f.hessian_apply(&u, &w).unwrap();
        let (a, b) = (h1_inner(&hv, &w), h1_inner(&hw, &v));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        let mut errs = Vec::new();
        for t in [1e-3, 5e-4] {
            let mut ut = u.clone();
            ut.axpy(t, &v);
            let fd = f.gradient(&ut).unwrap().sub(&f.gradient(&u).unwrap()).scaled(1.0 / t);
            errs.push(fd.sub(&hv).max_abs() / hv.max_abs());
        }
        assert!(errs[0] < 1e-2 && (errs[0] / errs[1] - 2.0).abs() < 0.2, "{errs:?}");
    }

    #[test]
    fn real_field_rejected_with_magnetic_potential() {
        let s = ProblemSpec::new(1, 3.0, Potential::constant(0.0), Potential::constant(1.0), 0.1)
            .unwrap()
            .with_magnetic(vec![Potential::constant(1.0)])
            .unwrap();
        let g = Arc::new(make_grid(1, 4.0, 33).unwrap());
        let u = GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp());
        match energy(&u, &s) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "field_kind"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gauge_invariance_and_magnetic_ansatz_criticality() {
        let profile = solve_ground_state(2, 3.0, 1e-8, 20.0).unwrap();
        let s = ProblemSpec::new(2, 3.0, Potential::constant(0.2), Potential::constant(1.0), 0.1)
            .unwrap()
            .with_magnetic(vec![Potential::constant(0.7), Potential::constant(-0.4)])
            .unwrap();
        let g = Arc::new(make_grid(2, 10.0, 101).unwrap());
        let z = build_magnetic_ansatz(&profile, &s, &[0.0, 0.0], 0.0, g.clone()).unwrap();
        let f = Functional::new(&s, g, Mode::Frozen(vec![0.0, 0.0])).unwrap();
        let e0 = f.energy(&z).unwrap();
        let e1 = f.energy(&z.rotate_phase(1.3)).unwrap();
        assert!((e0.value - e1.value).abs() <= 1e-13 * e0.value.abs());
        let real = build_ansatz(&profile, &s, &[0.0, 0.0], z.grid().clone()).unwrap();
        let s0 = ProblemSpec::new(2, 3.0, Potential::constant(0.2), Potential::constant(1.0), 0.1).unwrap();
        let er = energy(&real, &s0).unwrap();
        assert!((e0.value - er.value).abs() < 1e-10 * er.value.abs(), "{} {}", e0.value, er.value);
        // the Riesz map is not gauge covariant, so only the order of magnitude carries over
        assert!(e0.grad_norm < 4.0 * er.grad_norm + 1e-12, "{} {}", e0.grad_norm, er.grad_norm);
    }

    #[test]
    fn grad_norm_order_at_critical_point_of_v() {
        let profile = solve_ground_state(1, 3.0, 1e-8, 20.0).unwrap();
        let mut gs = Vec::new();
        let eps = [0.2, 0.1, 0.05];
        for &e in &eps {
            let s = spec1(Potential::expr("x^2").unwrap(), Potential::constant(1.0), e);
            let g = Arc::new(make_grid(1, 14.0, 2801).unwrap());
            let z = build_ansatz(&profile, &s, &[0.0], g).unwrap();
            gs.push(energy(&z, &s).unwrap().grad_norm);
        }
        let slope = crate::linalg::loglog_slope(&eps, &gs);
        assert!((1.7..=2.3).contains(&slope), "{slope} {gs:?}");
    }

    #[test]
    fn nehari_scale_examples() {
        let s = spec1(Potential::constant(0.0), Potential::constant(1.0), 0.1);
        let g = Arc::new(make_grid(1, 10.0, 401).unwrap());
        let u = GridFunction::from_fn(g.clone(), |x| (-x[0] * x[0]).exp());
        let f = Functional::new(&s, g, Mode::Full).unwrap();
        let t = f.nehari_scale(&u).unwrap();
        assert!((f.nehari_scale(&u.scaled(t)).unwrap() - 1.0).abs() < 1e-12);
        assert!((f.nehari_scale(&u.scaled(2.0)).unwrap() - t / 2.0).abs() < 1e-12);
        // root of d/dt f(t u) by bisection
        let dfdt = |t: f64| {
            let h = 1e-6;
            (f.value(&u.scaled(t + h)).unwrap() - f.value(&u.scaled(t - h)).unwrap()) / (2.0 * h)
        };
        let (mut lo, mut hi) = (0.1, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if dfdt(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((0.5 * (lo + hi) - t).abs() < 1e-6);
        let z = GridFunction::zeros(u.grid().clone(), FieldKind::Real);
        assert!(matches!(f.nehari_scale(&z), Err(Error::Degenerate(_))));
    }

    /// Radial positive solution of `u'' + 2u'/r + u³ + λu = 0`, `u(1) = 0`,
    /// by shooting on `u(0)`, sampled at `r ∈ [0, 1]` with RK4.
    fn radial_ball_solution(lambda: f64) -> impl Fn(f64) -> f64 {
        let steps = 20000;
        let h = 1.0 / steps as f64;
        // returns the minimum of u on [0, 1] together with the samples
        let run = |u0: f64| -> (f64, Vec<f64>) {
            let f = |r: f64, u: f64, du: f64| -> (f64, f64) {
                let nl = -u * u * u - lambda * u;
                if r == 0.0 {
                    (du, nl / 3.0)
                } else {
                    (du, -2.0 / r * du + nl)
                }
            };
            let (mut u, mut du) = (u0, 0.0);
            let mut out = vec![u];
            let mut low = u0;
            for i in 0..steps {
                let r = i as f64 * h;
                let k1 = f(r, u, du);
                let k2 = f(r + h / 2.0, u + h / 2.0 * k1.0, du + h / 2.0 * k1.1);
                let k3 = f(r + h / 2.0, u + h / 2.0 * k2.0, du + h / 2.0 * k2.1);
                let k4 = f(r + h, u + h * k3.0, du + h * k3.1);
                u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                du += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                out.push(u);
                low = low.min(u);
            }
            (low, out)
        };
        // u(1) decreases through zero as u(0) grows
        let (mut lo, mut hi) = (0.1, 50.0);
        assert!(run(lo).0 > 0.0 && run(hi).0 < 0.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if run(mid).0 > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let (_, vals) = run(0.5 * (lo + hi));
        move |r: f64| {
            if r >= 1.0 {
                return 0.0;
            }
            let t = r / h;
            let i = (t.floor() as usize).min(steps - 1);
            let s = t - i as f64;
            vals[i] * (1.0 - s) + vals[i + 1] * s
        }
    }

    #[test]
    fn pohozaev_identity_on_ball() {
        let sol = radial_ball_solution(-5.0);
        let mut rel = Vec::new();
        for m in [61, 121] {
            let g = Arc::new(make_grid(3, 1.25, m).unwrap());
            let u = GridFunction::from_fn(g, |x| sol((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()));
            let t = pohozaev_terms(&u, 1.0, 3.0, -5.0).unwrap();
            rel.push(t.residual() / t.scale());
        }
        assert!(rel[1] <= 5e-3, "{rel:?}");
        assert!(rel[1] < rel[0]);
        let g = Arc::new(make_grid(3, 1.25, 121).unwrap());
        let bump = GridFunction::from_fn(g.clone(), |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            if r2 < 1.0 {
                3.0 * (1.0 - r2) * (-(x[0] - 0.3).powi(2) * 4.0).exp()
            } else {
                0.0
            }
        });
        let t = pohozaev_terms(&bump, 1.0, 3.0, -5.0).unwrap();
        assert!(t.residual() / t.scale() >= 10.0 * rel[1]);
        let zero = GridFunction::zeros(g.clone(), FieldKind::Real);
        assert_eq!(pohozaev_residual(&zero, 1.0, 3.0, -5.0).unwrap(), 0.0);
        assert!(matches!(pohozaev_residual(&zero, 1.2, 3.0, -5.0), Err(Error::Validation { .. })));
    }
}
