//! Lyapunov–Schmidt reduction around translated ground states.
//!
//! For a point `ξ` in the fast variable the ansatz `z_ξ` is sampled on a box
//! that moves with `ξ` (the same node offsets relative to `ξ` for every
//! point), so the reduced energy `Φ_ε(ξ) = f_ε(z_ξ + w)` is a smooth function
//! of `ξ` without grid ripple. The correction `w ⟂ T_z Z` solves
//! `P ∇f_ε(z + w) = 0`, where `P` is the H¹-orthogonal projection onto the
//! complement of the tangent space.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ansatz::{build_ansatz, build_magnetic_ansatz, RadialProfile};
use crate::energy::{Functional, Mode};
use crate::error::{Error, Result};
use crate::grid::{gradient_components, h1_inner_raw, laplacian_raw, CartesianGrid, FieldKind, GridFunction};
use crate::linalg::{lanczos, minres, pinv_solve, sym_eigen};
use crate::problem::ProblemSpec;

/// Which symmetry directions span the tangent space of the critical manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TangentKind {
    /// `n` translations.
    Translation,
    /// `n` translations and the phase rotation `i z`.
    TranslationPhase,
}

/// H¹-orthonormal basis of the tangent space at an ansatz field.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    pub vectors: Vec<GridFunction>,
    pub kind: TangentKind,
}

impl TangentBasis {
    /// Largest deviation of the H¹ Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate() {
                let g = crate::grid::h1_inner(a, b);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

fn comps_of(kind: FieldKind) -> usize {
    match kind {
        FieldKind::Real => 1,
        FieldKind::Complex => 2,
    }
}

/// Tangent vectors `−∂_{x_i} z` (central differences), plus `i z` for the
/// phase kind, orthonormalized by Gram–Schmidt in the discrete H¹ product.
pub fn tangent_basis(z: &GridFunction, kind: TangentKind) -> Result<TangentBasis> {
    let grid = z.grid().clone();
    let comps = comps_of(z.kind());
    if kind == TangentKind::TranslationPhase && comps == 1 {
        return Err(Error::validation("kind", "the phase direction needs a complex field"));
    }
    let mut raw: Vec<Vec<f64>> = gradient_components(z)
        .into_iter()
        .map(|g| g.into_iter().map(|v| -v).collect())
        .collect();
    if kind == TangentKind::TranslationPhase {
        let v = z.values();
        let mut iz = vec![0.0; v.len()];
        for i in 0..grid.len() {
            iz[2 * i] = -v[2 * i + 1];
            iz[2 * i + 1] = v[2 * i];
        }
        raw.push(iz);
    }
    let vectors = orthonormalize(&grid, comps, raw)?;
    let vectors = vectors
        .into_iter()
        .map(|v| GridFunction::from_values(grid.clone(), v, z.kind()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentBasis { vectors, kind })
}

fn orthonormalize(grid: &CartesianGrid, comps: usize, raw: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
    for mut v in raw {
        let n0 = h1_inner_raw(grid, comps, &v, &v).max(0.0).sqrt();
        for _pass in 0..2 {
            for q in &out {
                let c = h1_inner_raw(grid, comps, &v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n1 = h1_inner_raw(grid, comps, &v, &v).max(0.0).sqrt();
        if !(n0 > 0.0) || n1 <= 1e-8 * n0 {
            return Err(Error::validation("z", "tangent vectors are rank deficient; the field is degenerate"));
        }
        v.iter_mut().for_each(|a| *a /= n1);
        out.push(v);
    }
    Ok(out)
}

/// Numerical parameters of the reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionConfig {
    /// Half-width of the co-moving box in the fast variable.
    pub window_radius: f64,
    pub points_per_axis: usize,
    /// Newton stops once `‖P∇f_ε(z+w)‖_{H¹} ≤ newton_tol · max(1, ‖z‖_{H¹})`.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub minres_max_iter: usize,
    pub lanczos_steps: usize,
    pub coercivity_threshold: f64,
    /// Largest admissible `ε`.
    pub max_epsilon: f64,
}

impl ReductionConfig {
    /// Defaults tuned per dimension: fine in 1D so that the discretization
    /// part of `w` stays well below the `ε²` signal, coarser in 2D/3D.
    pub fn for_dim(n: usize) -> Self {
        let (window_radius, points_per_axis) = match n {
            1 => (12.0, 1921),
            2 => (10.0, 161),
            _ => (8.0, 65),
        };
        Self {
            window_radius,
            points_per_axis,
            newton_tol: 1e-10,
            max_newton: 50,
            minres_max_iter: 2000,
            lanczos_steps: 60,
            coercivity_threshold: 1e-6,
            max_epsilon: 0.5,
        }
    }
}

/// Diagnostics of one reduced point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedPoint {
    pub xi: Vec<f64>,
    pub sigma: f64,
    pub w_norm: f64,
    pub phi: f64,
    pub reduced_grad: Vec<f64>,
    pub morse_index: Option<usize>,
    pub coercivity: f64,
}

impl ReducedPoint {
    pub fn grad_norm(&self) -> f64 {
        self.reduced_grad.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Writes reduced points as CSV with columns
/// `eps, xi_1..xi_d, sigma, phi, w_norm, grad_norm, morse_index, coercivity`.
pub fn write_points_csv(eps: f64, points: &[ReducedPoint], mut out: impl Write) -> Result<()> {
    let d = points.first().map_or(1, |p| p.xi.len());
    let xi_cols: Vec<String> = (1..=d).map(|i| format!("xi_{i}")).collect();
    writeln!(out, "eps,{},sigma,phi,w_norm,grad_norm,morse_index,coercivity", xi_cols.join(","))?;
    for p in points {
        let xi: Vec<String> = p.xi.iter().map(|v| format!("{v:.12e}")).collect();
        let idx = p.morse_index.map(|m| m.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{eps:.6e},{},{:.12e},{:.15e},{:.6e},{:.6e},{idx},{:.6e}",
            xi.join(","),
            p.sigma,
            p.phi,
            p.w_norm,
            p.grad_norm(),
            p.coercivity
        )?;
    }
    Ok(())
}

/// The correction at one point together with its diagnostics.
#[derive(Debug, Clone)]
pub struct Correction {
    pub z: GridFunction,
    pub w: GridFunction,
    pub basis: TangentBasis,
    pub point: ReducedPoint,
    /// Components `⟨∇f_ε(z+w), t_i⟩_{H¹}` along the tangent basis.
    pub multipliers: Vec<f64>,
    pub projected_residual: f64,
    /// `‖∇f_ε(z+w)‖_{H¹}`.
    pub full_gradient_norm: f64,
    /// Tolerance the projected residual was driven below.
    pub tolerance: f64,
    pub newton_iterations: usize,
}

/// Spectral information on the second variation at the ansatz.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityReport {
    /// Smallest magnitude eigenvalue on the complement of the tangent space and `z`.
    pub coercivity: f64,
    /// `⟨L z, z⟩ / ‖z‖²`; negative at a mountain-pass type ansatz.
    pub z_quotient: f64,
    /// `⟨L t, t⟩` for each normalized tangent vector.
    pub tangent_quotients: Vec<f64>,
    /// Residual bound of the Ritz pair that realized `coercivity`.
    pub ritz_residual: f64,
}

/// `Λ(y) = (1 + V(y))^θ K(y)^{−2/(p−1)}` with `θ = (p+1)/(p−1) − n/2`.
#[derive(Debug, Clone)]
pub struct AuxiliaryFunction {
    spec: ProblemSpec,
    pub theta: f64,
}

const AUX_STEP: f64 = 1e-3;

impl AuxiliaryFunction {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let theta = spec.theta();
        if !(theta > 0.0) {
            return Err(Error::validation("p", format!("θ = {theta} must be positive")));
        }
        Ok(Self { spec: spec.clone(), theta })
    }

    pub fn value(&self, y: &[f64]) -> Result<f64> {
        let w = self.spec.one_plus_v(y)?;
        let k = self.spec.k_at(y)?;
        Ok(w.powf(self.theta) * k.powf(-2.0 / (self.spec.p - 1.0)))
    }

    /// Fourth-order central differences.
    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let h = AUX_STEP;
        let mut x = y.to_vec();
        let mut g = Vec::with_capacity(y.len());
        for i in 0..y.len() {
            let mut f = [0.0; 4];
            for (slot, s) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                x[i] = y[i] + s * h;
                *slot = self.value(&x)?;
            }
            x[i] = y[i];
            g.push((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h));
        }
        Ok(g)
    }

    /// Fourth-order central differences of the gradient, symmetrized.
    pub fn hessian(&self, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = y.len();
        let h = 10.0 * AUX_STEP;
        let mut x = y.to_vec();
        let mut hess = vec![vec![0.0; d]; d];
        for i in 0..d {
            let mut gs = Vec::with_capacity(4);
            for s in [-2.0, -1.0, 1.0, 2.0] {
                x[i] = y[i] + s * h;
                gs.push(self.gradient(&x)?);
            }
            x[i] = y[i];
            for j in 0..d {
                hess[i][j] = (gs[0][j] - 8.0 * gs[1][j] + 8.0 * gs[2][j] - gs[3][j]) / (12.0 * h);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let m = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = m;
                hess[j][i] = m;
            }
        }
        Ok(hess)
    }
}

/// Search region in the slow variable `y = εξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::validation("search_box", "bounds must have equal, nonzero length"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::validation("search_box", "each lower bound must be below the upper bound"));
        }
        Ok(Self { lower, upper })
    }

    fn contains_padded(&self, y: &[f64], pad: f64) -> bool {
        y.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| {
            let m = pad * (b - a);
            *v >= a - m && *v <= b + m
        })
    }

    fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let d = self.lower.len();
        let total = per_axis.pow(d as u32);
        (0..total)
            .map(|mut k| {
                let mut y = vec![0.0; d];
                for a in (0..d).rev() {
                    let j = k % per_axis;
                    k /= per_axis;
                    let t = (j as f64 + 0.5) / per_axis as f64;
                    y[a] = self.lower[a] + t * (self.upper[a] - self.lower[a]);
                }
                y
            })
            .collect()
    }
}

/// Outcome of a multistart search.
#[derive(Debug, Clone)]
pub struct ConcentrationSearch {
    pub points: Vec<ReducedPoint>,
    /// Set when `Φ_ε` is constant to within `1e−10` relative over the seeds.
    pub flat: bool,
    pub warnings: Vec<String>,
}

/// Reduced Hessian and the resulting index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorseReport {
    pub index: usize,
    pub eigenvalues: Vec<f64>,
    /// Number of negative eigenvalues of the Hessian of `Λ` at `εξ`.
    pub lambda_index: usize,
}

impl MorseReport {
    pub fn agrees_with_lambda(&self) -> bool {
        self.index == self.lambda_index
    }
}

/// Internal result of one projected Newton solve on a window.
struct Solved {
    grid: Arc<CartesianGrid>,
    kind: FieldKind,
    z: Vec<f64>,
    w: Vec<f64>,
    basis: Vec<Vec<f64>>,
    multipliers: Vec<f64>,
    projected: f64,
    tolerance: f64,
    phi: f64,
    iterations: usize,
}

/// Reduction engine for one problem and ground-state profile.
#[derive(Debug, Clone)]
pub struct Reducer {
    spec: ProblemSpec,
    profile: Arc<RadialProfile>,
    config: ReductionConfig,
    c0: f64,
}

impl Reducer {
    pub fn new(spec: &ProblemSpec, profile: Arc<RadialProfile>, config: ReductionConfig) -> Result<Self> {
        spec.validate()?;
        if profile.n != spec.n || (profile.p - spec.p).abs() > 1e-12 {
            return Err(Error::validation("profile", "ground-state profile does not match the problem"));
        }
        if spec.epsilon > config.max_epsilon {
            return Err(Error::validation(
                "epsilon",
                format!("ε = {} exceeds the configured cap {}", spec.epsilon, config.max_epsilon),
            ));
        }
        if config.points_per_axis < 5 || !(config.window_radius > 0.0) {
            return Err(Error::validation("config", "window must have a positive radius and at least 5 points"));
        }
        let c0 = profile.moment(spec.p + 1.0);
        Ok(Self { spec: spec.clone(), profile, config, c0 })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(&self.spec.with_epsilon(epsilon)?, self.profile.clone(), self.config.clone())
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn config(&self) -> &ReductionConfig {
        &self.config
    }

    pub fn profile(&self) -> &Arc<RadialProfile> {
        &self.profile
    }

    /// `C₀ = ∫ U^{p+1}`.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// `C₁ = (1/2 − 1/(p+1)) C₀`, so that the frozen energy of the ansatz is `C₁ Λ(εξ)`.
    pub fn c1(&self) -> f64 {
        (0.5 - 1.0 / (self.spec.p + 1.0)) * self.c0
    }

    pub fn auxiliary(&self) -> Result<AuxiliaryFunction> {
        AuxiliaryFunction::new(&self.spec)
    }

    /// The co-moving box centered at `ξ`.
    pub fn window(&self, xi: &[f64]) -> Result<Arc<CartesianGrid>> {
        if xi.len() != self.spec.n {
            return Err(Error::validation("xi", "point has the wrong dimension"));
        }
        Ok(Arc::new(CartesianGrid::with_center(
            self.spec.n,
            self.config.window_radius,
            self.config.points_per_axis,
            xi,
        )?))
    }

    /// The ansatz on the window at `ξ`; complex exactly when the problem is magnetic.
    pub fn ansatz(&self, xi: &[f64], sigma: f64) -> Result<GridFunction> {
        let grid = self.window(xi)?;
        if self.spec.is_magnetic() {
            build_magnetic_ansatz(&self.profile, &self.spec, xi, sigma, grid)
        } else {
            build_ansatz(&self.profile, &self.spec, xi, grid)
        }
    }

    fn tangent_kind(&self) -> TangentKind {
        if self.spec.is_magnetic() {
            TangentKind::TranslationPhase
        } else {
            TangentKind::Translation
        }
    }

    fn solve_raw(&self, xi: &[f64], sigma: f64) -> Result<Solved> {
        let z = self.ansatz(xi, sigma)?;
        let grid = z.grid().clone();
        let kind = z.kind();
        let comps = comps_of(kind);
        let functional = Functional::new(&self.spec, grid.clone(), Mode::Full)?;
        let basis: Vec<Vec<f64>> = tangent_basis(&z, self.tangent_kind())?
            .vectors
            .into_iter()
            .map(GridFunction::into_values)
            .collect();
        let duals = dual_vectors(&grid, comps, &basis);
        let z = z.into_values();
        let z_norm = h1_inner_raw(&grid, comps, &z, &z).max(0.0).sqrt();
        let tol = self.config.newton_tol * z_norm.max(1.0);
        let project = |v: &mut [f64]| project_out(v, &basis, &duals);
        let ip = |a: &[f64], b: &[f64]| h1_inner_raw(&grid, comps, a, b);

        let mut w = vec![0.0; z.len()];
        let mut iterations = 0;
        loop {
            let u: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a + b).collect();
            let r = functional.strong_residual_raw(comps, &u);
            let mut g = r.clone();
            functional.riesz_in_place(&mut g, comps);
            let multipliers: Vec<f64> = duals.iter().map(|s| dot(&g, s)).collect();
            project(&mut g);
            let res = ip(&g, &g).max(0.0).sqrt();
            if res <= tol {
                let gf = GridFunction::from_values(grid.clone(), u, kind)?;
                let phi = functional.value(&gf)?;
                return Ok(Solved {
                    grid: grid.clone(),
                    kind,
                    z,
                    w,
                    basis,
                    multipliers,
                    projected: res,
                    tolerance: tol,
                    phi,
                    iterations,
                });
            }
            if iterations >= self.config.max_newton {
                return Err(Error::Convergence(format!(
                    "projected Newton for w stalled at residual {res:.3e} after {iterations} steps (target {tol:.1e})"
                )));
            }
            let apply = |v: &[f64]| {
                let mut y = functional.hessian_strong_raw(comps, &u, v);
                functional.riesz_in_place(&mut y, comps);
                project_out(&mut y, &basis, &duals);
                y
            };
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let eta = (0.01 * tol / res).clamp(1e-12, 1e-4);
            let step = minres(apply, ip, &rhs, eta, self.config.minres_max_iter)?;
            w.iter_mut().zip(&step.x).for_each(|(a, b)| *a += b);
            project(&mut w);
            project(&mut w);
            iterations += 1;
        }
    }

    /// Solves for `w ⟂ T_z Z` with `P∇f_ε(z + w) = 0` and reports the
    /// reduced point, including the coercivity of the second variation.
    pub fn solve_correction(&self, xi: &[f64], sigma: f64) -> Result<Correction> {
        let s = self.solve_raw(xi, sigma)?;
        let report = self.coercivity_from(&s)?;
        if report.coercivity < self.config.coercivity_threshold {
            return Err(Error::IllConditioned {
                coercivity: report.coercivity,
                threshold: self.config.coercivity_threshold,
            });
        }
        let comps = comps_of(s.kind);
        let w_norm = h1_inner_raw(&s.grid, comps, &s.w, &s.w).max(0.0).sqrt();
        let full = (s.projected * s.projected + s.multipliers.iter().map(|c| c * c).sum::<f64>()).sqrt();
        let reduced_grad = self.reduced_gradient(xi, sigma)?;
        let point = ReducedPoint {
            xi: xi.to_vec(),
            sigma,
            w_norm,
            phi: s.phi,
            reduced_grad,
            morse_index: None,
            coercivity: report.coercivity,
        };
        let basis = TangentBasis {
            vectors: s
                .basis
                .iter()
                .map(|v| GridFunction::from_values(s.grid.clone(), v.clone(), s.kind))
                .collect::<Result<Vec<_>>>()?,
            kind: self.tangent_kind(),
        };
        Ok(Correction {
            z: GridFunction::from_values(s.grid.clone(), s.z, s.kind)?,
            w: GridFunction::from_values(s.grid.clone(), s.w, s.kind)?,
            basis,
            point,
            multipliers: s.multipliers,
            projected_residual: s.projected,
            full_gradient_norm: full,
            tolerance: s.tolerance,
            newton_iterations: s.iterations,
        })
    }

    /// `Φ_ε(ξ) = f_ε(z_ξ + w(ε, ξ))`.
    pub fn reduced_energy(&self, xi: &[f64], sigma: f64) -> Result<f64> {
        Ok(self.solve_raw(xi, sigma)?.phi)
    }

    /// Central differences of `Φ_ε` with step `10⁻⁴/ε`.
    pub fn reduced_gradient(&self, xi: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let d = 1e-4 / self.spec.epsilon;
        let mut x = xi.to_vec();
        let mut g = Vec::with_capacity(xi.len());
        for i in 0..xi.len() {
            x[i] = xi[i] + d;
            let fp = self.reduced_energy(&x, sigma)?;
            x[i] = xi[i] - d;
            let fm = self.reduced_energy(&x, sigma)?;
            x[i] = xi[i];
            g.push((fp - fm) / (2.0 * d));
        }
        Ok(g)
    }

    /// Tangential components of `∇f_ε(z_ξ + w)`; they vanish exactly at
    /// critical points of the full functional.
    pub fn multipliers(&self, xi: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.solve_raw(xi, sigma)?.multipliers)
    }

    /// Coercivity of the second variation at the ansatz on the complement of
    /// the tangent space and `z`, with the Rayleigh quotients on `z` and on
    /// the tangent vectors.
    pub fn check_coercivity(&self, xi: &[f64], sigma: f64) -> Result<CoercivityReport> {
        let z = self.ansatz(xi, sigma)?;
        let grid = z.grid().clone();
        let kind = z.kind();
        let basis: Vec<Vec<f64>> = tangent_basis(&z, self.tangent_kind())?
            .vectors
            .into_iter()
            .map(GridFunction::into_values)
            .collect();
        let s = Solved {
            grid,
            kind,
            w: vec![0.0; z.values().len()],
            z: z.into_values(),
            basis,
            multipliers: Vec::new(),
            projected: 0.0,
            tolerance: 0.0,
            phi: 0.0,
            iterations: 0,
        };
        self.coercivity_from(&s)
    }

    fn coercivity_from(&self, s: &Solved) -> Result<CoercivityReport> {
        let grid = &s.grid;
        let comps = comps_of(s.kind);
        let functional = Functional::new(&self.spec, grid.clone(), Mode::Full)?;
        let z = &s.z;
        let hess_quotient = |v: &[f64]| -> f64 {
            let hv = functional.hessian_strong_raw(comps, z, v);
            grid.cell_volume() * dot(&hv, v)
        };
        let z_norm2 = h1_inner_raw(grid, comps, z, z);
        let z_quotient = hess_quotient(z) / z_norm2;
        let tangent_quotients: Vec<f64> = s.basis.iter().map(|t| hess_quotient(t)).collect();

        let mut excluded = s.basis.clone();
        excluded.push(z.clone());
        let excluded = orthonormalize(grid, comps, excluded)?;
        let duals = dual_vectors(grid, comps, &excluded);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut start: Vec<f64> = z.iter().map(|v| v.abs().sqrt() * rng.gen_range(-1.0..1.0)).collect();
        // smooth the random start so that it lies in H¹ with a moderate norm
        functional.riesz_in_place(&mut start, comps);
        project_out(&mut start, &excluded, &duals);
        project_out(&mut start, &excluded, &duals);
        // The excluded directions are mapped to eigenvalue 1, inside the bulk
        // of the spectrum, so rounding leakage into them cannot produce
        // spurious small Ritz values.
        let apply = |v: &[f64]| {
            let mut inner = v.to_vec();
            project_out(&mut inner, &excluded, &duals);
            let mut y = functional.hessian_strong_raw(comps, z, &inner);
            functional.riesz_in_place(&mut y, comps);
            project_out(&mut y, &excluded, &duals);
            y.iter_mut().zip(v.iter().zip(&inner)).for_each(|(a, (b, c))| *a += b - c);
            y
        };
        let ip = |a: &[f64], b: &[f64]| h1_inner_raw(grid, comps, a, b);
        let ritz = lanczos(apply, ip, &start, self.config.lanczos_steps)?;
        let (k, _) = ritz
            .values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .ok_or_else(|| Error::solver("lanczos", 0, "no Ritz values"))?;
        let coercivity = ritz.values[k].abs();
        let ritz_residual = ritz.residuals[k];
        if !(ritz_residual <= 0.1 * coercivity.max(1e-12)) {
            return Err(Error::solver(
                "lanczos",
                self.config.lanczos_steps,
                format!("smallest Ritz value {coercivity:.3e} not converged (residual {ritz_residual:.1e})"),
            ));
        }
        Ok(CoercivityReport { coercivity, z_quotient, tangent_quotients, ritz_residual })
    }

    /// Multistart search for critical points of `Φ_ε` in the slow-variable box.
    ///
    /// Lattice seeds (`multistart` per axis) are first moved to nearby
    /// critical points of `Λ`, which are cheap to locate and are where the
    /// reduced critical points sit for small `ε`; the deduplicated seeds are
    /// then refined by Newton's method on the tangential multipliers with a
    /// finite-difference Jacobian.
    pub fn find_concentration_points(&self, search: &SearchBox, multistart: usize) -> Result<ConcentrationSearch> {
        let d = self.spec.n;
        if search.lower.len() != d {
            return Err(Error::validation("search_box", "box dimension differs from the problem dimension"));
        }
        if multistart == 0 {
            return Err(Error::validation("multistart", "need at least one seed per axis"));
        }
        let eps = self.spec.epsilon;
        let aux = self.auxiliary()?;
        let lattice = search.lattice(multistart);
        let mut warnings = Vec::new();

        // The flatness screen uses an odd lattice finer than the seeds, so a
        // seed lattice placed symmetrically around an extremum cannot pass
        // for a flat landscape.
        let screen = search.lattice(2 * multistart + 1);
        let lam: Vec<f64> = screen.iter().map(|y| aux.value(y)).collect::<Result<_>>()?;
        let (lmin, lmax) = lam.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        if lmax - lmin <= 1e-12 * lmax.abs() {
            let probes = [0, screen.len() / 2, screen.len() - 1];
            let phis: Vec<f64> = probes
                .iter()
                .map(|&i| {
                    let xi: Vec<f64> = screen[i].iter().map(|v| v / eps).collect();
                    self.reduced_energy(&xi, 0.0)
                })
                .collect::<Result<_>>()?;
            let (pmin, pmax) = phis.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            if pmax - pmin <= 1e-10 * pmax.abs() {
                log::warn!("flat reduced landscape: Φ_ε varies by {:.2e}", pmax - pmin);
                warnings.push("flat reduced landscape".to_string());
                return Ok(ConcentrationSearch { points: Vec::new(), flat: true, warnings });
            }
        }

        let mut seeds: Vec<Vec<f64>> = Vec::new();
        for y in &lattice {
            let target = lambda_critical_point(&aux, y, search).unwrap_or_else(|| y.clone());
            if !seeds.iter().any(|s| dist(s, &target) < 1e-3) {
                seeds.push(target);
            }
        }

        let refined: Vec<Option<ReducedPoint>> = seeds
            .par_iter()
            .map(|y| {
                let xi: Vec<f64> = y.iter().map(|v| v / eps).collect();
                self.refine_point(&xi, search).ok()
            })
            .collect();

        let mut points: Vec<ReducedPoint> = Vec::new();
        for p in refined.into_iter().flatten() {
            if let Some(q) = points.iter_mut().find(|q| dist(&q.xi, &p.xi) < 1e-3 / eps) {
                if p.phi < q.phi || (p.phi == q.phi && lex_less(&p.xi, &q.xi)) {
                    *q = p;
                }
            } else {
                points.push(p);
            }
        }
        points.sort_by(|a, b| lex_cmp(&a.xi, &b.xi));
        if points.is_empty() {
            log::warn!("no multistart seed converged");
            warnings.push("no convergent start".to_string());
        }
        Ok(ConcentrationSearch { points, flat: false, warnings })
    }

    fn refine_point(&self, xi0: &[f64], search: &SearchBox) -> Result<ReducedPoint> {
        let eps = self.spec.epsilon;
        let d = xi0.len();
        let mut xi = xi0.to_vec();
        let h = 1e-3 / eps;
        let max_step = 0.25 / eps;
        for _ in 0..40 {
            let s = self.solve_raw(&xi, 0.0)?;
            let c = &s.multipliers[..d];
            let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if cn <= 5.0 * s.tolerance {
                return self.accept(&xi);
            }
            let mut jac = DMatrix::zeros(d, d);
            let mut x = xi.clone();
            for j in 0..d {
                x[j] = xi[j] + h;
                let cp = self.multipliers(&x, 0.0)?;
                x[j] = xi[j] - h;
                let cm = self.multipliers(&x, 0.0)?;
                x[j] = xi[j];
                for i in 0..d {
                    jac[(i, j)] = (cp[i] - cm[i]) / (2.0 * h);
                }
            }
            let rhs = DVector::from_iterator(d, c.iter().map(|v| -v));
            let mut step = pinv_solve(&jac, &rhs, 1e-10);
            let sn = step.norm();
            if sn > max_step {
                step *= max_step / sn;
            }
            for i in 0..d {
                xi[i] += step[i];
            }
            let y: Vec<f64> = xi.iter().map(|v| v * eps).collect();
            if !search.contains_padded(&y, 0.1) {
                return Err(Error::Convergence("reduced Newton left the search box".into()));
            }
        }
        Err(Error::Convergence("reduced Newton did not converge in 40 steps".into()))
    }

    fn accept(&self, xi: &[f64]) -> Result<ReducedPoint> {
        let c = self.solve_correction(xi, 0.0)?;
        let scale = self.spec.epsilon * c.point.phi.abs();
        if c.point.grad_norm() > 1e-7 * scale {
            return Err(Error::Convergence(format!(
                "reduced gradient {:.3e} above acceptance level {:.3e}",
                c.point.grad_norm(),
                1e-7 * scale
            )));
        }
        Ok(c.point)
    }

    /// Number of negative eigenvalues of the reduced Hessian (second
    /// differences of `Φ_ε` with step `0.02/ε`), with the index of `Λ`'s
    /// Hessian at `εξ` for comparison.
    pub fn morse_index(&self, point: &ReducedPoint) -> Result<MorseReport> {
        let d = point.xi.len();
        let eps = self.spec.epsilon;
        let h = 0.02 / eps;
        let xi = &point.xi;
        let f0 = self.reduced_energy(xi, point.sigma)?;
        let mut x = xi.clone();
        let mut eval = |shifts: &[(usize, f64)]| -> Result<f64> {
            x.copy_from_slice(xi);
            for &(i, s) in shifts {
                x[i] += s;
            }
            self.reduced_energy(&x, point.sigma)
        };
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            let fp = eval(&[(i, h)])?;
            let fm = eval(&[(i, -h)])?;
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let fpp = eval(&[(i, h), (j, h)])?;
                let fpm = eval(&[(i, h), (j, -h)])?;
                let fmp = eval(&[(i, -h), (j, h)])?;
                let fmm = eval(&[(i, -h), (j, -h)])?;
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let (eigenvalues, _) = sym_eigen(&hess);
        if let Some(e) = eigenvalues.iter().find(|e| e.abs() < 1e-8) {
            return Err(Error::DegenerateIndex { eigenvalue: *e });
        }
        let index = eigenvalues.iter().filter(|e| **e < 0.0).count();
        let y: Vec<f64> = xi.iter().map(|v| v * eps).collect();
        let lh = self.auxiliary()?.hessian(&y)?;
        let lm = DMatrix::from_fn(d, d, |i, j| lh[i][j]);
        let (lev, _) = sym_eigen(&lm);
        let lambda_index = lev.iter().filter(|e| **e < 0.0).count();
        Ok(MorseReport { index, eigenvalues, lambda_index })
    }
}

fn dual_vectors(grid: &CartesianGrid, comps: usize, basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let vol = grid.cell_volume();
    basis
        .iter()
        .map(|t| {
            let mut lap = vec![0.0; t.len()];
            laplacian_raw(grid, comps, t, &mut lap);
            t.iter().zip(&lap).map(|(a, l)| vol * (a - l)).collect()
        })
        .collect()
}

/// `v ← v − Σ ⟨v, t_i⟩_{H¹} t_i`, with `⟨v, t_i⟩_{H¹} = v · s_i` through the duals.
fn project_out(v: &mut [f64], basis: &[Vec<f64>], duals: &[Vec<f64>]) {
    for (t, s) in basis.iter().zip(duals) {
        let c = dot(v, s);
        v.iter_mut().zip(t).for_each(|(a, b)| *a -= c * b);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    lex_cmp(a, b) == std::cmp::Ordering::Less
}

/// Newton on `∇Λ` from `y`, steps capped at 0.25; `None` if it leaves the
/// padded box or fails to converge.
fn lambda_critical_point(aux: &AuxiliaryFunction, y0: &[f64], search: &SearchBox) -> Option<Vec<f64>> {
    let d = y0.len();
    let mut y = y0.to_vec();
    for _ in 0..60 {
        let g = aux.gradient(&y).ok()?;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = aux.value(&y).ok()?.abs().max(1e-300);
        if gn <= 1e-10 * scale {
            return Some(y);
        }
        let h = aux.hessian(&y).ok()?;
        let hm = DMatrix::from_fn(d, d, |i, j| h[i][j]);
        let rhs = DVector::from_iterator(d, g.iter().map(|v| -v));
        let mut step = pinv_solve(&hm, &rhs, 1e-10);
        let sn = step.norm();
        if !(sn.is_finite()) || sn == 0.0 {
            return None;
        }
        if sn > 0.25 {
            step *= 0.25 / sn;
        }
        for i in 0..d {
            y[i] += step[i];
        }
        if !search.contains_padded(&y, 0.05) {
            return None;
        }
    }
    None
}

/// A rectangular chart on which the Melnikov function is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Periodic axes wrap around; their upper bound is identified with the lower one.
    pub periodic: Vec<bool>,
    pub samples: Vec<usize>,
}

impl Chart {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, periodic: Vec<bool>, samples: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || periodic.len() != d || samples.len() != d {
            return Err(Error::validation("chart", "bounds, periodicity and samples need one entry per axis"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::validation("chart", "each lower bound must be below the upper bound"));
        }
        if samples.iter().any(|s| *s < 3) {
            return Err(Error::validation("samples", "need at least three samples per axis"));
        }
        Ok(Self { lower, upper, periodic, samples })
    }

    fn step(&self, a: usize) -> f64 {
        let n = self.samples[a];
        let span = self.upper[a] - self.lower[a];
        if self.periodic[a] {
            span / n as f64
        } else {
            span / (n - 1) as f64
        }
    }

    fn coord(&self, a: usize, j: usize) -> f64 {
        self.lower[a] + j as f64 * self.step(a)
    }

    fn wrap(&self, y: &mut [f64]) {
        for a in 0..y.len() {
            if self.periodic[a] {
                let span = self.upper[a] - self.lower[a];
                y[a] = self.lower[a] + (y[a] - self.lower[a]).rem_euclid(span);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartExtremum {
    pub point: Vec<f64>,
    pub value: f64,
    pub kind: ExtremumKind,
}

/// Strict local extrema of `gamma` on the chart lattice, refined by Newton's
/// method with finite-difference derivatives.
pub fn abstract_reduce(gamma: impl Fn(&[f64]) -> f64, chart: &Chart) -> Result<Vec<ChartExtremum>> {
    let d = chart.lower.len();
    let total: usize = chart.samples.iter().product();
    let values: Vec<f64> = (0..total)
        .map(|k| {
            let y: Vec<f64> = multi_index(k, &chart.samples).iter().enumerate().map(|(a, &j)| chart.coord(a, j)).collect();
            gamma(&y)
        })
        .collect();
    let vmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let margin = 1e-13 * vmax.max(f64::MIN_POSITIVE);

    let mut found: Vec<ChartExtremum> = Vec::new();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|k| multi_index(k, &vec![3; d]).iter().map(|&j| j as i64 - 1).collect::<Vec<i64>>())
        .filter(|o| o.iter().any(|&v| v != 0))
        .collect();
    'nodes: for k in 0..total {
        let js = multi_index(k, &chart.samples);
        let v = values[k];
        let (mut is_max, mut is_min) = (true, true);
        for o in &offsets {
            let mut nb = Vec::with_capacity(d);
            for a in 0..d {
                let n = chart.samples[a] as i64;
                let mut j = js[a] as i64 + o[a];
                if chart.periodic[a] {
                    j = j.rem_euclid(n);
                } else if j < 0 || j >= n {
                    continue 'nodes;
                }
                nb.push(j as usize);
            }
            let w = values[flat_index(&nb, &chart.samples)];
            is_max &= v > w + margin;
            is_min &= v < w - margin;
            if !is_max && !is_min {
                continue 'nodes;
            }
        }
        let kind = if is_max { ExtremumKind::Max } else { ExtremumKind::Min };
        let y0: Vec<f64> = js.iter().enumerate().map(|(a, &j)| chart.coord(a, j)).collect();
        let point = refine_extremum(&gamma, chart, &y0);
        let value = gamma(&point);
        let duplicate = found.iter().any(|e| {
            e.kind == kind
                && (0..d).all(|a| (e.point[a] - point[a]).abs() < 1e-6 * (chart.upper[a] - chart.lower[a]))
        });
        if !duplicate {
            found.push(ChartExtremum { point, value, kind });
        }
    }
    found.sort_by(|a, b| lex_cmp(&a.point, &b.point));
    Ok(found)
}

fn refine_extremum(gamma: &impl Fn(&[f64]) -> f64, chart: &Chart, y0: &[f64]) -> Vec<f64> {
    let d = y0.len();
    let mut y = y0.to_vec();
    let steps: Vec<f64> = (0..d).map(|a| chart.step(a)).collect();
    for _ in 0..50 {
        let (g, h) = fd_grad_hess(gamma, &y, &steps);
        let hm = DMatrix::from_fn(d, d, |i, j| h[i][j]);
        let rhs = DVector::from_iterator(d, g.iter().map(|v| -v));
        let step = pinv_solve(&hm, &rhs, 1e-12);
        let mut small = true;
        let mut candidate = y.clone();
        for a in 0..d {
            let s = step[a].clamp(-steps[a], steps[a]);
            candidate[a] += s;
            if s.abs() > 1e-13 * (chart.upper[a] - chart.lower[a]) {
                small = false;
            }
        }
        chart.wrap(&mut candidate);
        // stay within one lattice cell of the detected node
        if (0..d).any(|a| !chart.periodic[a] && (candidate[a] - y0[a]).abs() > 1.5 * steps[a]) {
            return y;
        }
        y = candidate;
        if small {
            break;
        }
    }
    y
}

fn fd_grad_hess(f: &impl Fn(&[f64]) -> f64, y: &[f64], cell: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = y.len();
    let hs: Vec<f64> = cell.iter().map(|c| 1e-3 * c).collect();
    let f0 = f(y);
    let mut x = y.to_vec();
    let mut g = vec![0.0; d];
    let mut hess = vec![vec![0.0; d]; d];
    for i in 0..d {
        x[i] = y[i] + hs[i];
        let fp = f(&x);
        x[i] = y[i] - hs[i];
        let fm = f(&x);
        x[i] = y[i];
        g[i] = (fp - fm) / (2.0 * hs[i]);
        hess[i][i] = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i]);
        for j in 0..i {
            let mut q = |si: f64, sj: f64| {
                x[i] = y[i] + si * hs[i];
                x[j] = y[j] + sj * hs[j];
                let v = f(&x);
                x[i] = y[i];
                x[j] = y[j];
                v
            };
            let v = (q(1.0, 1.0) - q(1.0, -1.0) - q(-1.0, 1.0) + q(-1.0, -1.0)) / (4.0 * hs[i] * hs[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    (g, hess)
}

fn multi_index(mut k: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        out[a] = k % dims[a];
        k /= dims[a];
    }
    out
}

fn flat_index(js: &[usize], dims: &[usize]) -> usize {
    js.iter().zip(dims).fold(0, |acc, (j, n)| acc * n + j)
}
