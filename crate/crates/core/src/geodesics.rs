//! Closed geodesics on the cylinder `ℝ × S^N` with a perturbed metric
//! `g_ε = g₀ + ε h`, located through the Melnikov function on the manifold
//! of great circles.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{pinv_solve, sym_eigen};
use crate::reduction::{abstract_reduce, Chart};

/// Default number of periodic quadrature nodes.
pub const DEFAULT_SAMPLES: usize = 128;

type MetricFn = dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync;

/// Symmetric bilinear form `h(s, ξ)` on ambient tangent vectors
/// `(ṡ, ξ̇) ∈ ℝ × ℝ^{N+1}`, given as an `(N+2) × (N+2)` matrix.
#[derive(Clone)]
pub struct MetricPerturbation {
    sphere_dim: usize,
    h: Arc<MetricFn>,
    zero: bool,
}

impl std::fmt::Debug for MetricPerturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricPerturbation").field("sphere_dim", &self.sphere_dim).finish_non_exhaustive()
    }
}

impl MetricPerturbation {
    pub fn new(sphere_dim: usize, h: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Result<Self> {
        if sphere_dim == 0 {
            return Err(Error::validation("sphere_dim", "the sphere must have dimension at least 1"));
        }
        Ok(Self { sphere_dim, h: Arc::new(h), zero: false })
    }

    pub fn zero(sphere_dim: usize) -> Result<Self> {
        let d = sphere_dim + 2;
        let mut m = Self::new(sphere_dim, move |_, _| DMatrix::zeros(d, d))?;
        m.zero = true;
        Ok(m)
    }

    /// `h(s, ξ) = φ(s) g₀`.
    pub fn conformal(sphere_dim: usize, phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let d = sphere_dim + 2;
        Self::new(sphere_dim, move |s, _| DMatrix::identity(d, d) * phi(s))
    }

    /// `h(s, ξ)[a, b] = φ(s) (a·e)(b·e)` with `e` a direction in the sphere's
    /// ambient space `ℝ^{N+1}`.
    pub fn directional(
        sphere_dim: usize,
        direction: Vec<f64>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if direction.len() != sphere_dim + 1 {
            return Err(Error::validation("direction", "direction must live in the sphere's ambient space"));
        }
        let mut e = DVector::zeros(sphere_dim + 2);
        for (i, v) in direction.iter().enumerate() {
            e[i + 1] = *v;
        }
        Self::new(sphere_dim, move |s, _| &e * e.transpose() * phi(s))
    }

    pub fn sphere_dim(&self) -> usize {
        self.sphere_dim
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Evaluates the form and checks its shape and symmetry.
    pub fn eval(&self, s: f64, xi: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.sphere_dim + 2;
        let m = (self.h)(s, xi);
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::validation("h", format!("expected a {d}x{d} matrix, got {}x{}", m.nrows(), m.ncols())));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::validation("h", format!("form is not symmetric at s = {s} (defect {asym:.2e})")));
        }
        Ok(m)
    }
}

/// A great circle `t ↦ (r, p cos 2πt + q sin 2πt)` with its quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopState {
    pub r: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub samples: usize,
}

impl LoopState {
    /// Checks `|p| = |q| = 1` and `p·q = 0` to within `1e−12`.
    pub fn new(r: f64, p: Vec<f64>, q: Vec<f64>, samples: usize) -> Result<Self> {
        if p.len() != q.len() || p.len() < 2 {
            return Err(Error::validation("p", "p and q must have the same length, at least 2"));
        }
        if samples < 16 {
            return Err(Error::validation("samples", "need at least 16 quadrature nodes"));
        }
        if !r.is_finite() {
            return Err(Error::validation("r", "cylinder coordinate must be finite"));
        }
        let np = norm(&p);
        let nq = norm(&q);
        let pq = dot(&p, &q);
        if (np - 1.0).abs() > 1e-12 || (nq - 1.0).abs() > 1e-12 || pq.abs() > 1e-12 {
            return Err(Error::validation("p", "p and q must be orthonormal"));
        }
        Ok(Self { r, p, q, samples })
    }

    /// Gram–Schmidt retraction of an arbitrary pair onto the Stiefel manifold.
    pub fn orthonormalized(r: f64, p: Vec<f64>, q: Vec<f64>, samples: usize) -> Result<Self> {
        let (p, q) = gram_schmidt_pair(&p, &q)
            .ok_or_else(|| Error::validation("p", "p and q are linearly dependent"))?;
        Self::new(r, p, q, samples)
    }

    pub fn sphere_dim(&self) -> usize {
        self.p.len() - 1
    }

    /// Position and velocity of the circle at time `t`.
    pub fn at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (s, c) = (2.0 * PI * t).sin_cos();
        let x = self.p.iter().zip(&self.q).map(|(a, b)| a * c + b * s).collect();
        let v = self.p.iter().zip(&self.q).map(|(a, b)| 2.0 * PI * (-a * s + b * c)).collect();
        (x, v)
    }

    /// The O(2) action: time shift by `tau` and, if `reflect`, `t ↦ −t`.
    pub fn transformed(&self, tau: f64, reflect: bool) -> Self {
        let (s, c) = (2.0 * PI * tau).sin_cos();
        let p: Vec<f64> = self.p.iter().zip(&self.q).map(|(a, b)| a * c + b * s).collect();
        let mut q: Vec<f64> = self.p.iter().zip(&self.q).map(|(a, b)| -a * s + b * c).collect();
        if reflect {
            q.iter_mut().for_each(|v| *v = -*v);
        }
        Self { r: self.r, p, q, samples: self.samples }
    }

    /// Representative of the O(2) orbit with `p·e_k` maximal on the first
    /// axis where the circle has a nonzero component, and the next nonzero
    /// component of `q` positive.
    pub fn gauge_fixed(&self) -> Self {
        let d = self.p.len();
        let Some(k) = (0..d).find(|&k| self.p[k].hypot(self.q[k]) > 1e-9) else {
            return self.clone();
        };
        let tau = self.q[k].atan2(self.p[k]) / (2.0 * PI);
        let mut out = self.transformed(tau, false);
        if let Some(j) = (0..d).find(|&j| out.q[j].abs() > 1e-9) {
            if out.q[j] < 0.0 {
                out.q.iter_mut().for_each(|v| *v = -*v);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn gram_schmidt_pair(p: &[f64], q: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let np = norm(p);
    if !(np > 1e-300) {
        return None;
    }
    let p: Vec<f64> = p.iter().map(|v| v / np).collect();
    let mut q = q.to_vec();
    for _ in 0..2 {
        let c = dot(&q, &p);
        q.iter_mut().zip(&p).for_each(|(a, b)| *a -= c * b);
    }
    let nq = norm(&q);
    if !(nq > 1e-12) {
        return None;
    }
    q.iter_mut().for_each(|v| *v /= nq);
    Some((p, q))
}

/// `Γ(r, p, q) = ½ ∫₀¹ h(r, z(t))[ż, ż] dt` by the periodic trapezoid rule.
pub fn melnikov_gamma(state: &LoopState, h: &MetricPerturbation) -> Result<f64> {
    if state.sphere_dim() != h.sphere_dim() {
        return Err(Error::validation("loop", "loop and metric live on spheres of different dimension"));
    }
    if h.is_zero() {
        return Ok(0.0);
    }
    let m = state.samples;
    let d = state.p.len() + 1;
    let mut acc = 0.0;
    let mut tangent = DVector::zeros(d);
    for j in 0..m {
        let (x, v) = state.at(j as f64 / m as f64);
        let form = h.eval(state.r, &x)?;
        tangent[0] = 0.0;
        for (i, vi) in v.iter().enumerate() {
            tangent[i + 1] = *vi;
        }
        acc += tangent.dot(&(&form * &tangent));
    }
    Ok(0.5 * acc / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Max,
    Min,
    Saddle,
}

impl std::fmt::Display for CriticalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Min => "min",
            Self::Saddle => "saddle",
        })
    }
}

/// A critical point of `Γ` modulo O(2).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicCandidate {
    pub state: LoopState,
    pub gamma: f64,
    /// Classification from the nondegenerate directions of the Hessian.
    pub kind: CriticalKind,
    /// Number of Hessian directions flat to within the tolerance.
    pub degenerate_directions: usize,
    pub hessian_eigenvalues: Vec<f64>,
    pub gradient_norm: f64,
}

/// Search options for [`find_geodesic_candidates`].
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOptions {
    pub r_min: f64,
    pub r_max: f64,
    pub samples: usize,
    /// Lattice points per unit of `r` used to bracket extrema along each frame.
    pub r_resolution: usize,
    pub seed: u64,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self { r_min: -5.0, r_max: 5.0, samples: DEFAULT_SAMPLES, r_resolution: 16, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct CandidateSearch {
    pub candidates: Vec<GeodesicCandidate>,
    pub warnings: Vec<String>,
}

/// Local chart around a frame: `r` plus rotations of `p` and `q` towards the
/// orthogonal complement of their plane. The in-plane rotation, which is the
/// O(2) orbit direction, is left out.
struct FrameChart {
    r: f64,
    p: Vec<f64>,
    q: Vec<f64>,
    complement: Vec<Vec<f64>>,
    samples: usize,
}

impl FrameChart {
    fn new(state: &LoopState) -> Self {
        let d = state.p.len();
        let mut complement: Vec<Vec<f64>> = Vec::new();
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            for _ in 0..2 {
                for b in [&state.p, &state.q].into_iter().chain(complement.iter()) {
                    let c = dot(&e, b);
                    e.iter_mut().zip(b.iter()).for_each(|(a, v)| *a -= c * v);
                }
            }
            let n = norm(&e);
            if n > 1e-6 {
                e.iter_mut().for_each(|v| *v /= n);
                complement.push(e);
            }
            if complement.len() == d - 2 {
                break;
            }
        }
        Self { r: state.r, p: state.p.clone(), q: state.q.clone(), complement, samples: state.samples }
    }

    fn dim(&self) -> usize {
        1 + 2 * self.complement.len()
    }

    fn point(&self, x: &[f64]) -> LoopState {
        let m = self.complement.len();
        let mut p = self.p.clone();
        let mut q = self.q.clone();
        for (k, e) in self.complement.iter().enumerate() {
            p.iter_mut().zip(e).for_each(|(a, v)| *a += x[1 + k] * v);
            q.iter_mut().zip(e).for_each(|(a, v)| *a += x[1 + m + k] * v);
        }
        let (p, q) = gram_schmidt_pair(&p, &q).expect("chart steps are bounded well below a quarter turn");
        LoopState { r: self.r + x[0], p, q, samples: self.samples }
    }
}

fn chart_derivatives(f: &dyn Fn(&[f64]) -> Result<f64>, d: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let hg = 1e-3;
    let hh = 1e-3;
    let mut x = vec![0.0; d];
    let f0 = f(&x)?;
    let mut g = vec![0.0; d];
    let mut hess = DMatrix::zeros(d, d);
    let mut fp1 = vec![0.0; d];
    let mut fm1 = vec![0.0; d];
    for i in 0..d {
        let mut vals = [0.0; 4];
        for (slot, s) in vals.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
            x[i] = s * hg;
            *slot = f(&x)?;
        }
        x[i] = 0.0;
        g[i] = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * hg);
        fm1[i] = vals[1];
        fp1[i] = vals[2];
        hess[(i, i)] = (-vals[0] + 16.0 * vals[1] - 30.0 * f0 + 16.0 * vals[2] - vals[3]) / (12.0 * hh * hh);
    }
    for i in 0..d {
        for j in 0..i {
            let mut q = |si: f64, sj: f64| -> Result<f64> {
                x[i] = si * hh;
                x[j] = sj * hh;
                let v = f(&x);
                x[i] = 0.0;
                x[j] = 0.0;
                v
            };
            let v = (q(1.0, 1.0)? - q(1.0, -1.0)? - q(-1.0, 1.0)? + q(-1.0, -1.0)?) / (4.0 * hh * hh);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((g, hess))
}

/// Newton on the chart coordinates, re-centering the chart after each step.
fn newton_on_frames(
    h: &MetricPerturbation,
    start: &LoopState,
    opts: &CandidateOptions,
    scale: f64,
) -> Result<GeodesicCandidate> {
    let mut state = start.clone();
    let tol = 1e-9 * scale;
    for _ in 0..60 {
        let chart = FrameChart::new(&state);
        let d = chart.dim();
        let f = |x: &[f64]| melnikov_gamma(&chart.point(x), h);
        let (g, hess) = chart_derivatives(&f, d)?;
        let gn = norm(&g);
        if gn <= tol {
            return classify(h, &state, &g, &hess, scale);
        }
        let rhs = DVector::from_iterator(d, g.iter().map(|v| -v));
        let mut step = pinv_solve(&hess, &rhs, 1e-6);
        let sn = step.norm();
        if !sn.is_finite() || sn == 0.0 {
            break;
        }
        if sn > 0.25 {
            step *= 0.25 / sn;
        }
        state = chart.point(step.as_slice());
        let pad = 0.1 * (opts.r_max - opts.r_min);
        if state.r < opts.r_min - pad || state.r > opts.r_max + pad {
            return Err(Error::Convergence("candidate search left the r range".into()));
        }
    }
    Err(Error::Convergence("candidate search did not converge".into()))
}

fn classify(
    _h: &MetricPerturbation,
    state: &LoopState,
    g: &[f64],
    hess: &DMatrix<f64>,
    scale: f64,
) -> Result<GeodesicCandidate> {
    let (eig, _) = sym_eigen(hess);
    let big = eig.iter().fold(scale, |m, v| m.max(v.abs()));
    let flat = 1e-5 * big;
    let pos = eig.iter().filter(|v| **v > flat).count();
    let neg = eig.iter().filter(|v| **v < -flat).count();
    let kind = match (pos, neg) {
        (_, 0) => CriticalKind::Min,
        (0, _) => CriticalKind::Max,
        _ => CriticalKind::Saddle,
    };
    let state = state.gauge_fixed();
    let gamma = melnikov_gamma(&state, _h)?;
    Ok(GeodesicCandidate {
        state,
        gamma,
        kind,
        degenerate_directions: eig.len() - pos - neg,
        hessian_eigenvalues: eig,
        gradient_norm: norm(g),
    })
}

fn random_frame(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let p: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let q: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(pair) = gram_schmidt_pair(&p, &q) {
            return pair;
        }
    }
}

/// Critical points of `Γ` over `r ∈ [r_min, r_max]` and all orthonormal
/// frames, modulo O(2).
///
/// For each of `multistart` frames (the coordinate frame first, then
/// seeded random ones) the extrema of `r ↦ Γ(r, p, q)` are bracketed on a
/// lattice; each is then refined by Newton's method on the whole manifold.
/// Points whose `(p, q)` directions are flat are reported once per `r`.
pub fn find_geodesic_candidates(
    h: &MetricPerturbation,
    sphere_dim: usize,
    multistart: usize,
    opts: &CandidateOptions,
) -> Result<CandidateSearch> {
    if sphere_dim != h.sphere_dim() {
        return Err(Error::validation("sphere_dim", "metric is defined on a sphere of another dimension"));
    }
    if multistart == 0 {
        return Err(Error::validation("multistart", "need at least one start"));
    }
    if !(opts.r_min < opts.r_max) {
        return Err(Error::validation("r_range", "r_min must be below r_max"));
    }
    let d = sphere_dim + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut frames = Vec::with_capacity(multistart);
    let mut e1 = vec![0.0; d];
    let mut e2 = vec![0.0; d];
    e1[0] = 1.0;
    e2[1] = 1.0;
    frames.push((e1, e2));
    while frames.len() < multistart {
        frames.push(random_frame(&mut rng, d));
    }
    let samples = ((opts.r_max - opts.r_min) * opts.r_resolution as f64).ceil() as usize + 1;
    let chart = Chart::new(vec![opts.r_min], vec![opts.r_max], vec![false], vec![samples.max(3)])?;

    let mut seeds: Vec<LoopState> = Vec::new();
    let mut scale = 0.0f64;
    for (p, q) in &frames {
        let profile = |x: &[f64]| {
            let s = LoopState { r: x[0], p: p.clone(), q: q.clone(), samples: opts.samples };
            melnikov_gamma(&s, h).unwrap_or(f64::NAN)
        };
        for k in 0..samples {
            let r = opts.r_min + (opts.r_max - opts.r_min) * k as f64 / (samples - 1) as f64;
            scale = scale.max(profile(&[r]).abs());
        }
        for ext in abstract_reduce(profile, &chart)? {
            seeds.push(LoopState { r: ext.point[0], p: p.clone(), q: q.clone(), samples: opts.samples });
        }
    }
    let mut warnings = Vec::new();
    if !(scale > 1e-14) {
        log::warn!("flat Melnikov function");
        warnings.push("flat Melnikov function".into());
        return Ok(CandidateSearch { candidates: Vec::new(), warnings });
    }
    let results: Vec<Option<GeodesicCandidate>> =
        seeds.par_iter().map(|s| newton_on_frames(h, s, opts, scale).ok()).collect();

    let mut out: Vec<GeodesicCandidate> = Vec::new();
    for c in results.into_iter().flatten() {
        let dup = out.iter().any(|o| {
            let same_r = (o.state.r - c.state.r).abs() <= 1e-5 * o.state.r.abs().max(1.0);
            let same_gamma = (o.gamma - c.gamma).abs() <= 1e-8 * scale;
            let same_frame = frame_distance(&o.state, &c.state) < 1e-4;
            same_r && same_gamma && (same_frame || (o.degenerate_directions > 0 && c.degenerate_directions > 0))
        });
        if !dup {
            out.push(c);
        }
    }
    out.sort_by(|a, b| a.state.r.total_cmp(&b.state.r).then(a.gamma.total_cmp(&b.gamma)));
    if out.is_empty() {
        warnings.push("no convergent start".into());
    }
    Ok(CandidateSearch { candidates: out, warnings })
}

fn frame_distance(a: &LoopState, b: &LoopState) -> f64 {
    let dp: f64 = a.p.iter().zip(&b.p).map(|(x, y)| (x - y).powi(2)).sum();
    let dq: f64 = a.q.iter().zip(&b.q).map(|(x, y)| (x - y).powi(2)).sum();
    (dp + dq).sqrt()
}

/// Writes candidates as CSV with columns `r, p_1.., q_1.., gamma, class`.
pub fn write_candidates_csv(cands: &[GeodesicCandidate], mut out: impl Write) -> Result<()> {
    let d = cands.first().map_or(2, |c| c.state.p.len());
    let ps: Vec<String> = (1..=d).map(|i| format!("p_{i}")).collect();
    let qs: Vec<String> = (1..=d).map(|i| format!("q_{i}")).collect();
    writeln!(out, "r,{},{},gamma,class", ps.join(","), qs.join(","))?;
    for c in cands {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(",");
        writeln!(out, "{:.12e},{},{},{:.15e},{}", c.state.r, fmt(&c.state.p), fmt(&c.state.q), c.gamma, c.kind)?;
    }
    Ok(())
}

/// A closed loop on the cylinder given by truncated Fourier series for `r`
/// and for an ambient curve `y` whose pointwise normalization is the sphere
/// component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierLoop {
    pub modes: usize,
    pub sphere_dim: usize,
    /// Coefficients per ambient component: `[a_0, a_1, b_1, …, a_K, b_K]`,
    /// component 0 being `r`.
    pub coeffs: Vec<f64>,
}

impl FourierLoop {
    pub fn from_circle(state: &LoopState, modes: usize) -> Self {
        let d = state.p.len() + 1;
        let stride = 2 * modes + 1;
        let mut coeffs = vec![0.0; d * stride];
        coeffs[0] = state.r;
        for k in 0..state.p.len() {
            coeffs[(k + 1) * stride + 1] = state.p[k];
            coeffs[(k + 1) * stride + 2] = state.q[k];
        }
        Self { modes, sphere_dim: state.p.len() - 1, coeffs }
    }

    /// Position and velocity on the cylinder at `t`.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        eval_loop(&self.coeffs, self.modes, self.sphere_dim + 2, t)
    }

    pub fn mean_r(&self) -> f64 {
        self.coeffs[0]
    }
}

fn eval_loop(c: &[f64], modes: usize, d: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let stride = 2 * modes + 1;
    let mut y = vec![0.0; d];
    let mut dy = vec![0.0; d];
    for comp in 0..d {
        let base = comp * stride;
        let mut v = c[base];
        let mut dv = 0.0;
        for k in 1..=modes {
            let w = 2.0 * PI * k as f64;
            let (s, co) = (w * t).sin_cos();
            let (a, b) = (c[base + 2 * k - 1], c[base + 2 * k]);
            v += a * co + b * s;
            dv += w * (-a * s + b * co);
        }
        y[comp] = v;
        dy[comp] = dv;
    }
    let n = y[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let radial: f64 = y[1..].iter().zip(&dy[1..]).map(|(a, b)| a * b).sum::<f64>() / (n * n);
    let mut pos = y.clone();
    let mut vel = dy.clone();
    for k in 1..d {
        pos[k] = y[k] / n;
        vel[k] = (dy[k] - radial * y[k]) / n;
    }
    (pos, vel)
}

/// `E_ε(u) = ½ ∫₀¹ g_ε(u)[u̇, u̇] dt` on a Fourier loop.
fn loop_energy(c: &[f64], modes: usize, d: usize, h: &MetricPerturbation, eps: f64, nodes: usize) -> Result<f64> {
    let mut acc = 0.0;
    let mut tangent = DVector::zeros(d);
    for j in 0..nodes {
        let (pos, vel) = eval_loop(c, modes, d, j as f64 / nodes as f64);
        if pos.iter().chain(&vel).any(|v| !v.is_finite()) {
            return Err(Error::Refinement("loop left the chart (sphere component vanished)".into()));
        }
        let mut e = vel.iter().map(|v| v * v).sum::<f64>();
        if eps != 0.0 && !h.is_zero() {
            for (k, v) in vel.iter().enumerate() {
                tangent[k] = *v;
            }
            let form = h.eval(pos[0], &pos[1..])?;
            e += eps * tangent.dot(&(&form * &tangent));
        }
        acc += e;
    }
    Ok(0.5 * acc / nodes as f64)
}

/// Result of [`refine_closed_geodesic`].
#[derive(Debug, Clone, Serialize)]
pub struct RefinedLoop {
    pub lp: FourierLoop,
    pub energy: f64,
    pub gradient_norm: f64,
    /// Largest pointwise distance from the starting great circle.
    pub distance: f64,
    pub iterations: usize,
}

impl RefinedLoop {
    /// Writes `samples` points `t, r, x_1, …` of the loop, one per line.
    pub fn write_polyline(&self, samples: usize, mut out: impl Write) -> Result<()> {
        for j in 0..samples {
            let t = j as f64 / samples as f64;
            let (pos, _) = self.lp.eval(t);
            let row: Vec<String> = pos.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{t:.8} {}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Newton's method with a pseudo-inverse on the Fourier coefficients of the
/// loop, starting at the candidate's great circle, until `‖∇E_ε‖ ≤ 1e−6`.
pub fn refine_closed_geodesic(
    candidate: &GeodesicCandidate,
    h: &MetricPerturbation,
    eps: f64,
    fourier_modes: usize,
) -> Result<RefinedLoop> {
    if fourier_modes == 0 {
        return Err(Error::validation("fourier_modes", "need at least one Fourier mode"));
    }
    let start = FourierLoop::from_circle(&candidate.state, fourier_modes);
    let d = start.sphere_dim + 2;
    let modes = fourier_modes;
    let nodes = candidate.state.samples.max(8 * modes + 8);
    let energy = |c: &[f64]| loop_energy(c, modes, d, h, eps, nodes);
    let n = start.coeffs.len();
    let mut c = start.coeffs.clone();
    let tol = 1e-6;
    let fd = 1e-4;
    let grad = |c: &[f64]| -> Result<Vec<f64>> {
        let mut x = c.to_vec();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let mut vals = [0.0; 4];
            for (slot, s) in vals.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                x[i] = c[i] + s * fd;
                *slot = energy(&x)?;
            }
            x[i] = c[i];
            g[i] = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * fd);
        }
        Ok(g)
    };
    let mut g = grad(&c)?;
    let mut iterations = 0;
    while norm(&g) > tol {
        if iterations >= 40 {
            return Err(Error::Refinement(format!("gradient {:.2e} after {iterations} Newton steps", norm(&g))));
        }
        let hstep = 1e-3;
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut xp = c.clone();
                xp[j] += hstep;
                let mut xm = c.clone();
                xm[j] -= hstep;
                let gp = grad(&xp)?;
                let gm = grad(&xm)?;
                Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * hstep)).collect())
            })
            .collect::<Result<_>>()?;
        let mut hess = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
        hess = (&hess + hess.transpose()) * 0.5;
        let rhs = DVector::from_iterator(n, g.iter().map(|v| -v));
        let step = pinv_solve(&hess, &rhs, 1e-8);
        let g0 = norm(&g);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let gt = grad(&trial);
            if let Ok(gt) = gt {
                if norm(&gt) < g0 || t < 1e-3 {
                    c = trial;
                    g = gt;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-3 {
                return Err(Error::Refinement("line search failed; the loop may be degenerating".into()));
            }
        }
        iterations += 1;
    }
    let lp = FourierLoop { modes, sphere_dim: start.sphere_dim, coeffs: c };
    let energy_value = energy(&lp.coeffs)?;
    let mut distance = 0.0f64;
    for j in 0..nodes {
        let t = j as f64 / nodes as f64;
        let (a, _) = lp.eval(t);
        let (b, _) = start.eval(t);
        let dd = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        distance = distance.max(dd);
    }
    Ok(RefinedLoop { lp, energy: energy_value, gradient_norm: norm(&g), distance, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(r: f64) -> f64 {
        r * (-r * r).exp()
    }

    fn circle(r: f64, n: usize) -> LoopState {
        let mut p = vec![0.0; n + 1];
        let mut q = vec![0.0; n + 1];
        p[0] = 1.0;
        q[1] = 1.0;
        LoopState::new(r, p, q, DEFAULT_SAMPLES).unwrap()
    }

    #[test]
    fn zero_and_conformal_gamma() {
        let s = circle(0.3, 2);
        assert_eq!(melnikov_gamma(&s, &MetricPerturbation::zero(2).unwrap()).unwrap(), 0.0);
        let h = MetricPerturbation::conformal(2, bump).unwrap();
        let g = melnikov_gamma(&s, &h).unwrap();
        assert!((g - 2.0 * PI * PI * bump(0.3)).abs() < 1e-12);
    }

    #[test]
    fn directional_gamma_matches_fine_quadrature() {
        let h = MetricPerturbation::directional(2, vec![1.0, 0.0, 0.0], |s| (-s * s).exp()).unwrap();
        let s = LoopState::orthonormalized(0.4, vec![0.6, 0.8, 0.0], vec![0.3, -0.2, 0.9], DEFAULT_SAMPLES).unwrap();
        let coarse = melnikov_gamma(&s, &h).unwrap();
        let fine = melnikov_gamma(&LoopState { samples: 4096, ..s.clone() }, &h).unwrap();
        assert!((coarse - fine).abs() < 1e-12 * fine.abs());
        // ½ φ(r) (2π)² (p₁² + q₁²)/2
        let expected = PI * PI * (-0.16f64).exp() * (s.p[0].powi(2) + s.q[0].powi(2));
        assert!((coarse - expected).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_form_is_rejected() {
        let h = MetricPerturbation::new(1, |_, _| {
            let mut m = DMatrix::zeros(3, 3);
            m[(0, 1)] = 1.0;
            m
        })
        .unwrap();
        assert!(matches!(melnikov_gamma(&circle(0.0, 1), &h), Err(Error::Validation { .. })));
    }

    #[test]
    fn conformal_candidates_at_both_radii() {
        let h = MetricPerturbation::conformal(2, bump).unwrap();
        let out = find_geodesic_candidates(&h, 2, 3, &CandidateOptions::default()).unwrap();
        assert_eq!(out.candidates.len(), 2, "{:?}", out.candidates);
        let r = 0.5f64.sqrt();
        let (lo, hi) = (&out.candidates[0], &out.candidates[1]);
        assert!((lo.state.r + r).abs() < 1e-6 && (hi.state.r - r).abs() < 1e-6);
        assert_eq!(lo.kind, CriticalKind::Min);
        assert_eq!(hi.kind, CriticalKind::Max);
        assert_eq!(hi.degenerate_directions, 2);
        let gamma = 2.0 * PI * PI * (-0.5f64).exp() / 2.0f64.sqrt();
        assert!((hi.gamma - gamma).abs() < 1e-9);
    }

    #[test]
    fn zero_metric_gives_no_candidates() {
        let out = find_geodesic_candidates(&MetricPerturbation::zero(2).unwrap(), 2, 2, &CandidateOptions::default())
            .unwrap();
        assert!(out.candidates.is_empty());
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn refinement_keeps_conformal_circle() {
        let h = MetricPerturbation::conformal(2, bump).unwrap();
        let out = find_geodesic_candidates(&h, 2, 1, &CandidateOptions::default()).unwrap();
        let c = &out.candidates[1];
        let unchanged = refine_closed_geodesic(c, &h, 0.0, 3).unwrap();
        assert_eq!(unchanged.iterations, 0);
        assert!(unchanged.distance < 1e-14);
        let refined = refine_closed_geodesic(c, &h, 0.01, 3).unwrap();
        assert!(refined.gradient_norm <= 1e-6);
        let b = 2.0 * PI * PI;
        assert!((refined.energy - b - 0.01 * c.gamma).abs() < 1e-8);
    }

    #[test]
    fn directional_refinement_energy_follows_gamma() {
        let h = MetricPerturbation::directional(2, vec![1.0, 0.0, 0.0], bump).unwrap();
        let out = find_geodesic_candidates(&h, 2, 4, &CandidateOptions::default()).unwrap();
        let c = out.candidates.last().unwrap();
        assert_eq!(c.kind, CriticalKind::Max);
        let mut dists = Vec::new();
        for eps in [0.02, 0.01] {
            let r = refine_closed_geodesic(c, &h, eps, 3).unwrap();
            let ratio = (r.energy - 2.0 * PI * PI) / (eps * c.gamma);
            assert!((ratio - 1.0).abs() < 2e-3, "{ratio}");
            dists.push(r.distance);
        }
        assert!((dists[0] / dists[1] - 2.0).abs() < 0.1, "{dists:?}");
    }

    #[test]
    fn gauge_fixing_is_orbit_invariant() {
        let s = LoopState::orthonormalized(0.1, vec![0.2, 0.7, 0.1], vec![-0.5, 0.1, 0.8], 64).unwrap();
        let a = s.gauge_fixed();
        for (tau, refl) in [(0.13, false), (0.71, true), (0.4, true)] {
            let b = s.transformed(tau, refl).gauge_fixed();
            assert!(frame_distance(&a, &b) < 1e-12);
        }
    }
}
