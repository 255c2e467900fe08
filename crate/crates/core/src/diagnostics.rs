//! Concentration-compactness instrumentation: the Brezis–Lieb defect, the
//! Lions concentration function with a trichotomy classifier, the mass budget
//! splitting into weak limit, concentrated part and mass lost at infinity,
//! and the canonical failure modes of weak convergence.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{integrate, integrate_modulus, trapezoid_weight, CartesianGrid, GridFunction};

type ProfileFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A real profile `u` together with the radius of a ball holding its support
/// (up to a negligible tail).
#[derive(Clone)]
pub struct BaseProfile {
    pub dim: usize,
    pub radius: f64,
    f: Arc<ProfileFn>,
}

impl std::fmt::Debug for BaseProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BaseProfile").field("dim", &self.dim).field("radius", &self.radius).finish_non_exhaustive()
    }
}

impl BaseProfile {
    pub fn new(dim: usize, radius: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::validation("dim", "profiles live in dimension 1 to 3"));
        }
        if !(radius > 0.0) {
            return Err(Error::validation("radius", "support radius must be positive"));
        }
        Ok(Self { dim, radius, f: Arc::new(f) })
    }

    pub fn gaussian(dim: usize, width: f64) -> Result<Self> {
        Self::new(dim, 7.0 * width, move |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            (-r2 / (2.0 * width * width)).exp()
        })
    }

    /// The constant `c` on the box of half-width `radius`.
    pub fn constant(dim: usize, radius: f64, c: f64) -> Result<Self> {
        Self::new(dim, radius, move |x| if x.iter().all(|v| v.abs() <= radius) { c } else { 0.0 })
    }

    /// A sum of one to three Gaussians with random centers in `[−1, 1]`,
    /// widths in `[0.3, 0.8]` and amplitudes in `[0.5, 1.5]`.
    pub fn random(dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let count = rng.gen_range(1..=3);
        let bumps: Vec<(Vec<f64>, f64, f64)> = (0..count)
            .map(|_| {
                let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (c, rng.gen_range(0.3..0.8), rng.gen_range(0.5..1.5))
            })
            .collect();
        let radius = bumps
            .iter()
            .map(|(c, w, _)| c.iter().map(|v| v * v).sum::<f64>().sqrt() + 7.0 * w)
            .fold(0.0, f64::max);
        Self::new(dim, radius, move |x| {
            bumps
                .iter()
                .map(|(c, w, a)| {
                    let r2: f64 = x.iter().zip(c).map(|(u, v)| (u - v) * (u - v)).sum();
                    a * (-r2 / (2.0 * w * w)).exp()
                })
                .sum()
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

type TermFn = dyn Fn(usize) -> Result<GridFunction> + Send + Sync;

/// How the terms of a sequence are generated from the base profile.
#[derive(Clone)]
pub enum SequenceKind {
    /// `u_n(x) = u(x) cos(2πn x₁)`.
    Oscillation,
    /// `u_n(x) = n^{d/p} u(n x)`.
    Concentration,
    /// `u_n(x) = u(x − n e₁)`.
    VanishingTranslation,
    /// `u_n(x) = n^{−d/p} u(x/n)`.
    Spreading,
    /// `u_n(x) = 2^{−1/p} (u(x − n e₁) + u(x + n e₁))`.
    DichotomyPair,
    /// Caller-supplied terms.
    Custom(Arc<TermFn>),
}

impl std::fmt::Debug for SequenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oscillation => "Oscillation",
            Self::Concentration => "Concentration",
            Self::VanishingTranslation => "VanishingTranslation",
            Self::Spreading => "Spreading",
            Self::DichotomyPair => "DichotomyPair",
            Self::Custom(_) => "Custom",
        })
    }
}

/// A sequence `u_n`, `n` in `indices`, with its `L^p` bookkeeping exponent.
#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    pub indices: Vec<usize>,
    pub base: BaseProfile,
    pub p: f64,
    /// Node spacing for an unscaled profile; scaled sequences adapt it.
    pub spacing: f64,
}

impl SequenceSpec {
    pub fn new(kind: SequenceKind, indices: Vec<usize>, base: BaseProfile, p: f64) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|&n| n == 0) {
            return Err(Error::validation("indices", "need at least one positive index"));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::validation("p", "exponent must be at least 1"));
        }
        Ok(Self { kind, indices, base, p, spacing: 0.05 })
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::validation("spacing", "spacing must be positive"));
        }
        self.spacing = spacing;
        Ok(self)
    }

    fn grid(&self, radius: f64, spacing: f64) -> Result<Arc<CartesianGrid>> {
        let half = (radius / spacing).ceil() as usize;
        let m = 2 * half + 1;
        Ok(Arc::new(CartesianGrid::new(self.base.dim, half as f64 * spacing, m)?))
    }

    /// The `n`-th term on a grid centered at the origin large enough to hold it.
    pub fn term(&self, n: usize) -> Result<GridFunction> {
        let u = &self.base;
        let d = u.dim as f64;
        let nf = n as f64;
        let h = self.spacing;
        let shifted = |x: &[f64], s: f64| {
            let mut y = x.to_vec();
            y[0] -= s;
            u.eval(&y)
        };
        let out = match &self.kind {
            SequenceKind::Oscillation => {
                let h = h.min(1.0 / (16.0 * nf));
                GridFunction::from_fn(self.grid(u.radius, h)?, |x| u.eval(x) * (2.0 * std::f64::consts::PI * nf * x[0]).cos())
            }
            SequenceKind::Concentration => {
                let amp = nf.powf(d / self.p);
                GridFunction::from_fn(self.grid(u.radius, h / nf)?, |x| {
                    let y: Vec<f64> = x.iter().map(|v| v * nf).collect();
                    amp * u.eval(&y)
                })
            }
            SequenceKind::VanishingTranslation => {
                GridFunction::from_fn(self.grid(u.radius + nf, h)?, |x| shifted(x, nf))
            }
            SequenceKind::Spreading => {
                let amp = nf.powf(-d / self.p);
                GridFunction::from_fn(self.grid(u.radius * nf, h * nf.sqrt())?, |x| {
                    let y: Vec<f64> = x.iter().map(|v| v / nf).collect();
                    amp * u.eval(&y)
                })
            }
            SequenceKind::DichotomyPair => {
                let amp = 0.5f64.powf(1.0 / self.p);
                GridFunction::from_fn(self.grid(u.radius + nf, h)?, |x| amp * (shifted(x, nf) + shifted(x, -nf)))
            }
            SequenceKind::Custom(f) => f(n)?,
        };
        if out.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("sequence", format!("term {n} is not finite")));
        }
        Ok(out)
    }

    pub fn terms(&self) -> Result<Vec<GridFunction>> {
        self.indices.iter().map(|&n| self.term(n)).collect()
    }

    /// The pointwise limit sampled on `grid`: zero for every generated kind
    /// except oscillation, whose weak limit is zero as well; custom kinds
    /// supply their own limit through [`SequenceSpec::limit_of`].
    pub fn zero_limit(&self, grid: Arc<CartesianGrid>) -> GridFunction {
        GridFunction::from_fn(grid, |_| 0.0)
    }

    /// The base profile sampled on `grid`, the limit of strongly convergent
    /// custom sequences built from it.
    pub fn limit_of(&self, grid: Arc<CartesianGrid>) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.base.eval(x))
    }
}

fn lp_mass(u: &GridFunction, p: f64) -> f64 {
    integrate_modulus(u, |a| a.powf(p))
}

fn aligned_limit(term: &GridFunction, limit: &GridFunction) -> Result<GridFunction> {
    if term.grid().dim() != limit.grid().dim() || term.kind() != limit.kind() {
        return Err(Error::validation("limit", "term and limit live on incompatible grids"));
    }
    Ok(limit.resample(term.grid().clone()))
}

/// `d_n = | ‖u_n‖_p^p − ‖u_n − u‖_p^p − ‖u‖_p^p |` for each term. The limit is
/// transferred to each term's grid (zero outside its box).
pub fn brezis_lieb_defect(terms: &[GridFunction], limit: &GridFunction, p: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0) {
        return Err(Error::validation("p", "exponent must be at least 1"));
    }
    terms
        .iter()
        .map(|t| {
            let u = aligned_limit(t, limit)?;
            let diff = t.sub(&u);
            Ok((lp_mass(t, p) - lp_mass(&diff, p) - lp_mass(&u, p)).abs())
        })
        .collect()
}

/// Largest ball mass for each radius, with the node realizing it.
fn concentration_with_centers(rho: &GridFunction, radii: &[f64]) -> Result<Vec<(f64, usize)>> {
    let g = rho.grid();
    let vals: Vec<f64> = (0..g.len()).map(|i| rho.at(i).0).collect();
    if let Some(v) = vals.iter().find(|v| **v < -1e-12) {
        return Err(Error::validation("rho", format!("density must be nonnegative, found {v:.3e}")));
    }
    if radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::validation("radii", "radii must be nonnegative"));
    }
    let weighted: Vec<f64> = vals.iter().enumerate().map(|(i, v)| v.max(0.0) * trapezoid_weight(g, i)).collect();
    let d = g.dim();
    let m = g.points_per_axis();
    let h = g.spacing();
    // prefix sums along the last axis
    let lines = g.len() / m;
    let mut prefix = vec![0.0; lines * (m + 1)];
    for l in 0..lines {
        for j in 0..m {
            prefix[l * (m + 1) + j + 1] = prefix[l * (m + 1) + j] + weighted[l * m + j];
        }
    }
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let k = (r / h).floor() as i64;
        // offsets over the leading axes inside the ball, with the half-chord on the last axis
        let mut offsets: Vec<(Vec<i64>, i64)> = Vec::new();
        let lead = d - 1;
        let span = (2 * k + 1) as usize;
        for code in 0..span.pow(lead as u32) {
            let mut c = code;
            let mut off = vec![0i64; lead];
            let mut s2 = 0.0;
            for o in off.iter_mut() {
                *o = (c % span) as i64 - k;
                c /= span;
                s2 += (*o as f64 * h).powi(2);
            }
            if s2 <= r * r + 1e-12 {
                let chord = (((r * r - s2).max(0.0)).sqrt() / h + 1e-9).floor() as i64;
                offsets.push((off, chord));
            }
        }
        let mut best = (0.0f64, 0usize);
        for idx in 0..g.len() {
            let mut js = vec![0i64; d];
            let mut rem = idx;
            for a in (0..d).rev() {
                js[a] = (rem % m) as i64;
                rem /= m;
            }
            let mut acc = 0.0;
            'off: for (off, chord) in &offsets {
                let mut line = 0usize;
                for a in 0..lead {
                    let j = js[a] + off[a];
                    if j < 0 || j >= m as i64 {
                        continue 'off;
                    }
                    line = line * m + j as usize;
                }
                let lo = (js[d - 1] - chord).max(0) as usize;
                let hi = ((js[d - 1] + chord).min(m as i64 - 1) + 1) as usize;
                acc += prefix[line * (m + 1) + hi] - prefix[line * (m + 1) + lo];
                // trapezoid end weights along the chord
                if *chord > 0 {
                    if js[d - 1] - chord >= 0 {
                        acc -= 0.5 * weighted[line * m + lo];
                    }
                    if js[d - 1] + chord < m as i64 {
                        acc -= 0.5 * weighted[line * m + hi - 1];
                    }
                }
            }
            if acc > best.0 {
                best = (acc, idx);
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// `Q(R) = max_y ∫_{B(y,R)} ρ`, the maximum taken over grid nodes.
pub fn concentration_function(rho: &GridFunction, radii: &[f64]) -> Result<Vec<f64>> {
    Ok(concentration_with_centers(rho, radii)?.into_iter().map(|(q, _)| q).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrichotomyLabel {
    Compactness,
    Vanishing,
    Dichotomy,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrichotomyReport {
    pub label: TrichotomyLabel,
    /// Total mass `λ` (mean over the sampled terms).
    pub mass: f64,
    pub indices: Vec<usize>,
    pub radii: Vec<f64>,
    /// `Q_n(R)` with one row per index.
    pub q_profile: Vec<Vec<f64>>,
    /// Recentering points `y_n`, set for compactness.
    pub centers: Option<Vec<Vec<f64>>>,
    /// Mass `α` of the first piece and `λ − α`, set for dichotomy.
    pub split_masses: Option<(f64, f64)>,
    /// Indices treated as the tail of the sequence ("lim sup" is the max over them).
    pub tail_from: usize,
}

impl TrichotomyReport {
    /// Writes the Q-profile as CSV with columns `n, R, Q`.
    pub fn write_q_profile(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "n,R,Q")?;
        for (n, row) in self.indices.iter().zip(&self.q_profile) {
            for (r, q) in self.radii.iter().zip(row) {
                writeln!(out, "{n},{r:.6e},{q:.10e}")?;
            }
        }
        Ok(())
    }
}

fn tail_start(len: usize) -> usize {
    len - len.div_ceil(3)
}

/// Classifies the density sequence `ρ_n = |u_n|^p` by Lions's trichotomy.
///
/// * vanishing: `max_R Q_n(R) < 0.05 λ` at the largest `n`;
/// * compactness: for `ε ∈ {0.1, 0.05}` some radius has `Q_n(R) ≥ (1 − ε) λ`
///   for every tail index, with the maximizing centers recorded;
/// * dichotomy: `Q_n` at the largest `n` has a plateau at a level `α` strictly
///   between `0.05 λ` and `0.95 λ`, stable over the tail;
/// * otherwise inconclusive.
pub fn lions_classify(seq: &SequenceSpec, radii: &[f64], n_grid: &[usize]) -> Result<TrichotomyReport> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("radii", "need an increasing list of at least two radii"));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("n_grid", "need an increasing list of indices"));
    }
    let seq = SequenceSpec { indices: n_grid.to_vec(), ..seq.clone() };
    let mut masses = Vec::with_capacity(n_grid.len());
    let mut profile = Vec::with_capacity(n_grid.len());
    let mut center_pts = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let u = seq.term(n)?;
        let rho = u.modulus_field().map_values(|a| a.powf(seq.p));
        masses.push(integrate(&rho));
        let qc = concentration_with_centers(&rho, radii)?;
        center_pts.push(qc.iter().map(|(_, i)| rho.grid().point_vec(*i)).collect::<Vec<_>>());
        profile.push(qc.into_iter().map(|(q, _)| q).collect::<Vec<_>>());
    }
    let lambda = masses.iter().sum::<f64>() / masses.len() as f64;
    if !(lambda > 0.0) {
        return Err(Error::validation("sequence", "sequence carries no mass"));
    }
    if masses.iter().any(|m| (m - lambda).abs() > 0.01 * lambda) {
        return Err(Error::validation("sequence", "masses vary by more than 1% across the sampled indices"));
    }
    let tail = tail_start(n_grid.len());
    let last = profile.last().unwrap();
    let mut report = TrichotomyReport {
        label: TrichotomyLabel::Inconclusive,
        mass: lambda,
        indices: n_grid.to_vec(),
        radii: radii.to_vec(),
        q_profile: profile.clone(),
        centers: None,
        split_masses: None,
        tail_from: n_grid[tail],
    };

    if last.iter().cloned().fold(0.0, f64::max) < 0.05 * lambda {
        report.label = TrichotomyLabel::Vanishing;
        return Ok(report);
    }

    let captures = |eps: f64| -> Option<usize> {
        (0..radii.len()).find(|&k| profile[tail..].iter().all(|row| row[k] >= (1.0 - eps) * lambda))
    };
    if let (Some(_), Some(k)) = (captures(0.1), captures(0.05)) {
        report.label = TrichotomyLabel::Compactness;
        report.centers = Some(center_pts.iter().map(|c| c[k].clone()).collect());
        return Ok(report);
    }

    // plateau of the last Q-profile: the longest run of radii over which Q
    // moves by less than 2% of λ, at a level strictly inside (0.05λ, 0.95λ)
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0;
    for k in 1..=radii.len() {
        let ends = k == radii.len() || (last[k] - last[start]).abs() > 0.02 * lambda;
        if ends {
            let len = k - start;
            if len >= 2 && best.map_or(true, |(s, e)| len > e - s) {
                best = Some((start, k));
            }
            start = k;
        }
    }
    if let Some((s, e)) = best {
        let alpha = last[s..e].iter().sum::<f64>() / (e - s) as f64;
        let inside = alpha > 0.05 * lambda && alpha < 0.95 * lambda;
        let mid = (s + e - 1) / 2;
        let stable = profile[tail..].iter().all(|row| (row[mid] - alpha).abs() <= 0.05 * lambda);
        if inside && stable {
            report.label = TrichotomyLabel::Dichotomy;
            report.split_masses = Some((alpha, lambda - alpha));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    Oscillation,
    Concentration,
    Vanishing,
    Unclassified,
}

/// Which canonical obstruction to strong `L²` convergence the sequence shows.
pub fn weak_failure_mode(seq: &SequenceSpec) -> Result<FailureMode> {
    if seq.indices.len() < 2 {
        return Err(Error::validation("indices", "need at least two indices"));
    }
    let u0 = &seq.base;
    let fixed_radius = u0.radius;
    struct Stats {
        norm2: f64,
        sup: f64,
        fixed_fraction: f64,
        shrinking_fraction: f64,
        local_average: f64,
    }
    let mut stats = Vec::new();
    let mut indices = seq.indices.clone();
    indices.sort_unstable();
    for &n in &indices {
        let u = seq.term(n)?;
        let g = u.grid().clone();
        let norm2 = lp_mass(&u, 2.0);
        let shrink = fixed_radius / (n as f64).sqrt();
        let mut fixed = 0.0;
        let mut shrinking = 0.0;
        let mut local = 0.0;
        let mut phi_norm = 0.0;
        for i in 0..g.len() {
            let x = g.point_vec(i);
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w = trapezoid_weight(&g, i);
            let a2 = u.modulus(i).powi(2);
            if r <= fixed_radius {
                fixed += w * a2;
            }
            if r <= shrink {
                shrinking += w * a2;
            }
            let phi = (-(r / (0.3 * fixed_radius)).powi(2)).exp();
            local += w * u.at(i).0 * phi;
            phi_norm += w * phi * phi;
        }
        stats.push(Stats {
            norm2,
            sup: u.max_abs(),
            fixed_fraction: fixed / norm2,
            shrinking_fraction: shrinking / norm2,
            local_average: local.abs() / (norm2.sqrt() * phi_norm.sqrt()),
        });
    }
    let first = &stats[0];
    let last = stats.last().unwrap();
    let (nmin, nmax) = stats.iter().fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s.norm2), b.max(s.norm2)));
    if !(nmin > 0.0) || nmax / nmin > 1.2 {
        return Ok(FailureMode::Unclassified);
    }
    let sup_ratio = last.sup / first.sup;
    if sup_ratio > 2.0 && last.shrinking_fraction > 0.9 {
        return Ok(FailureMode::Concentration);
    }
    if (0.5..=2.0).contains(&sup_ratio) && last.fixed_fraction < 0.05 {
        return Ok(FailureMode::Vanishing);
    }
    if (0.5..=2.0).contains(&sup_ratio) && last.fixed_fraction > 0.9 && last.local_average < 0.05 {
        return Ok(FailureMode::Oscillation);
    }
    Ok(FailureMode::Unclassified)
}

/// Split of `lim sup ‖u_n‖_p^p` into `‖u‖_p^p`, concentrated mass `‖ν‖` and
/// mass lost at infinity `ν_∞`.
#[derive(Debug, Clone, Serialize)]
pub struct MassBudget {
    pub nu_norm: f64,
    pub nu_infinity: f64,
    pub budget_residual: f64,
    pub limsup_mass: f64,
    pub limit_mass: f64,
    /// Spread of the `ν_∞` estimate over the two largest radii, widened when
    /// the tail estimates are not monotone in `R`.
    pub error_bar: f64,
    pub non_monotone: bool,
}

/// Mass budget over the tail third of `terms` (treated as the lim sup).
/// `ν_∞` is the tail mass outside `|x| > R` at the largest sampled radius.
pub fn mass_budget(terms: &[GridFunction], limit: &GridFunction, p: f64, radii: &[f64]) -> Result<MassBudget> {
    if terms.is_empty() {
        return Err(Error::validation("terms", "need at least one term"));
    }
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("radii", "need an increasing list of radii"));
    }
    let tail = &terms[tail_start(terms.len())..];
    let mut limsup_mass = 0.0f64;
    let mut limsup_diff = 0.0f64;
    let mut tails = vec![0.0f64; radii.len()];
    let mut limit_mass = 0.0;
    for t in tail {
        let u = aligned_limit(t, limit)?;
        limit_mass = lp_mass(&u, p);
        limsup_mass = limsup_mass.max(lp_mass(t, p));
        limsup_diff = limsup_diff.max(lp_mass(&t.sub(&u), p));
        let g = t.grid();
        for (k, &r) in radii.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..g.len() {
                let x = g.point_vec(i);
                if x.iter().map(|v| v * v).sum::<f64>() > r * r {
                    acc += trapezoid_weight(g, i) * t.modulus(i).powf(p);
                }
            }
            tails[k] = tails[k].max(acc);
        }
    }
    let scale = limsup_mass.max(f64::MIN_POSITIVE);
    let non_monotone = tails.windows(2).any(|w| w[1] > w[0] + 1e-3 * scale);
    let nu_infinity = *tails.last().unwrap();
    let mut error_bar = if tails.len() > 1 { (tails[tails.len() - 2] - nu_infinity).abs() } else { 0.0 };
    if non_monotone {
        log::warn!("tail mass estimates are not monotone in R; widening the error bar");
        error_bar = error_bar.max(tails.iter().cloned().fold(0.0, f64::max) - nu_infinity);
    }
    let nu_norm = (limsup_diff - nu_infinity).max(0.0);
    let budget_residual = (limsup_mass - (limit_mass + nu_norm + nu_infinity)).abs();
    Ok(MassBudget { nu_norm, nu_infinity, budget_residual, limsup_mass, limit_mass, error_bar, non_monotone })
}

/// Template families used to exercise the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Template {
    Translated,
    Spreading,
    TwoBump,
    Concentrating,
    StrongConvergent,
}

impl Template {
    pub const ALL: [Template; 5] =
        [Template::Translated, Template::Spreading, Template::TwoBump, Template::Concentrating, Template::StrongConvergent];

    pub fn expected(self) -> TrichotomyLabel {
        match self {
            Template::Spreading => TrichotomyLabel::Vanishing,
            Template::TwoBump => TrichotomyLabel::Dichotomy,
            _ => TrichotomyLabel::Compactness,
        }
    }

    /// A one-dimensional sequence of this family built on `base`, with index
    /// grid and radii suited to its scales.
    pub fn sequence(self, base: BaseProfile) -> Result<(SequenceSpec, Vec<usize>, Vec<f64>)> {
        let p = 2.0;
        let r0 = base.radius;
        let radii: Vec<f64> = (1..=24).map(|k| k as f64 * r0 / 8.0).collect();
        let far: Vec<usize> = (1..=6).map(|k| (4.0 * r0).ceil() as usize * k).collect();
        let (kind, n_grid) = match self {
            Template::Translated => (SequenceKind::VanishingTranslation, far),
            Template::TwoBump => (SequenceKind::DichotomyPair, far),
            Template::Spreading => (SequenceKind::Spreading, vec![50, 100, 200, 400, 800]),
            Template::Concentrating => (SequenceKind::Concentration, vec![2, 4, 8, 16]),
            Template::StrongConvergent => {
                let b = base.clone();
                let f = move |n: usize| -> Result<GridFunction> {
                    let h = 0.05;
                    let half = ((b.radius + 1.0) / h).ceil() as usize;
                    let grid = Arc::new(CartesianGrid::new(1, half as f64 * h, 2 * half + 1)?);
                    let s = 1.0 / n as f64;
                    Ok(GridFunction::from_fn(grid, |x| b.eval(&[x[0] - s])))
                };
                (SequenceKind::Custom(Arc::new(f)), vec![2, 4, 8, 16, 32])
            }
        };
        let spec = SequenceSpec::new(kind, n_grid.clone(), base, p)?;
        Ok((spec, n_grid, radii))
    }
}

/// Deterministic random base profiles for template runs.
pub fn random_profiles(dim: usize, count: usize, seed: u64) -> Result<Vec<BaseProfile>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| BaseProfile::random(dim, &mut rng)).collect()
}

trait MapValues {
    fn map_values(self, f: impl Fn(f64) -> f64) -> GridFunction;
}

impl MapValues for GridFunction {
    fn map_values(mut self, f: impl Fn(f64) -> f64) -> GridFunction {
        self.values_mut().iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump() -> BaseProfile {
        BaseProfile::gaussian(1, 0.5).unwrap()
    }

    #[test]
    fn defect_is_zero_for_constant_sequence_and_disjoint_escape() {
        let seq = SequenceSpec::new(SequenceKind::Custom(Arc::new(|_| {
            let g = Arc::new(CartesianGrid::new(1, 6.0, 241)?);
            Ok(GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp()))
        })), vec![1, 2, 3], bump(), 2.0)
        .unwrap();
        let terms = seq.terms().unwrap();
        let d = brezis_lieb_defect(&terms, &terms[0], 2.0).unwrap();
        assert!(d.iter().all(|v| *v < 1e-14));

        let u = bump();
        let escaping = SequenceSpec::new(
            SequenceKind::Custom(Arc::new(move |n| {
                let g = Arc::new(CartesianGrid::new(1, 10.0 + n as f64, 2 * (200 + 20 * n) + 1)?);
                let u = u.clone();
                Ok(GridFunction::from_fn(g, move |x| u.eval(x) + u.eval(&[x[0] - n as f64])))
            })),
            vec![2, 5, 10],
            bump(),
            2.0,
        )
        .unwrap();
        let terms = escaping.terms().unwrap();
        let limit = escaping.limit_of(terms[0].grid().clone());
        let d = brezis_lieb_defect(&terms, &limit, 2.0).unwrap();
        assert!(d[2] < 1e-12 && d[2] < d[0], "{d:?}");
        let gap = lp_mass(&terms[2].sub(&limit.resample(terms[2].grid().clone())), 2.0);
        assert!(gap > 0.5);
    }

    #[test]
    fn concentration_function_examples() {
        let g = Arc::new(CartesianGrid::new(1, 10.0, 2001).unwrap());
        let uniform = GridFunction::from_fn(g.clone(), |_| 3.0 / 20.0);
        let q = concentration_function(&uniform, &[1.0, 2.5]).unwrap();
        assert!((q[0] - 0.3).abs() < 1e-3 && (q[1] - 0.75).abs() < 1e-3, "{q:?}");

        let s = 0.3;
        let norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
        let two = GridFunction::from_fn(g.clone(), |x| {
            0.5 * norm * ((-(x[0] - 5.0).powi(2) / (2.0 * s * s)).exp() + (-(x[0] + 5.0).powi(2) / (2.0 * s * s)).exp())
        });
        // half the mass until a ball centered between the bumps reaches both
        let q = concentration_function(&two, &[2.0, 3.0, 7.0]).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-6 && (q[1] - 0.5).abs() < 1e-6, "{q:?}");
        assert!((q[2] - 1.0).abs() < 1e-6);

        let neg = GridFunction::from_fn(g, |x| x[0]);
        assert!(matches!(concentration_function(&neg, &[1.0]), Err(Error::Validation { .. })));
    }

    #[test]
    fn concentration_function_two_dimensional_disk() {
        let g = Arc::new(CartesianGrid::new(2, 3.0, 121).unwrap());
        let one = GridFunction::from_fn(g, |_| 1.0);
        let q = concentration_function(&one, &[1.0]).unwrap();
        assert!((q[0] - std::f64::consts::PI).abs() < 0.1, "{q:?}");
    }

    #[test]
    fn classifier_on_templates() {
        for t in Template::ALL {
            let (seq, n, radii) = t.sequence(bump()).unwrap();
            let rep = lions_classify(&seq, &radii, &n).unwrap();
            assert_eq!(rep.label, t.expected(), "{t:?}");
            if t == Template::Translated {
                let c = rep.centers.unwrap();
                for (y, n) in c.iter().zip(&n) {
                    assert!((y[0] - *n as f64).abs() < 0.1);
                }
            }
            if t == Template::TwoBump {
                let (a, _) = rep.split_masses.unwrap();
                assert!((a / rep.mass - 0.5).abs() < 0.02);
            }
        }
    }

    #[test]
    fn failure_modes() {
        let flat = BaseProfile::constant(1, 0.5, 1.0).unwrap();
        let osc = SequenceSpec::new(SequenceKind::Oscillation, vec![4, 16, 64], flat, 2.0).unwrap();
        assert_eq!(weak_failure_mode(&osc).unwrap(), FailureMode::Oscillation);
        let conc = SequenceSpec::new(SequenceKind::Concentration, vec![2, 8, 32], bump(), 2.0).unwrap();
        assert_eq!(weak_failure_mode(&conc).unwrap(), FailureMode::Concentration);
        let van = SequenceSpec::new(SequenceKind::VanishingTranslation, vec![5, 10, 40], bump(), 2.0).unwrap();
        assert_eq!(weak_failure_mode(&van).unwrap(), FailureMode::Vanishing);
        let spread = SequenceSpec::new(SequenceKind::Spreading, vec![2, 8, 32], bump(), 2.0).unwrap();
        assert_eq!(weak_failure_mode(&spread).unwrap(), FailureMode::Unclassified);
    }

    #[test]
    fn mass_budget_examples() {
        let u = bump();
        let m = lp_mass(&GridFunction::from_fn(Arc::new(CartesianGrid::new(1, 8.0, 321).unwrap()), |x| u.eval(x)), 2.0);
        let radii = [2.0, 4.0, 8.0];
        let esc = SequenceSpec::new(SequenceKind::VanishingTranslation, vec![20, 40, 80], u.clone(), 2.0).unwrap();
        let terms = esc.terms().unwrap();
        let zero = esc.zero_limit(terms[0].grid().clone());
        let b = mass_budget(&terms, &zero, 2.0, &radii).unwrap();
        assert!((b.nu_infinity - m).abs() < 1e-6 * m && b.nu_norm < 1e-6 * m, "{b:?}");

        let conc = SequenceSpec::new(SequenceKind::Concentration, vec![4, 8, 16], u.clone(), 2.0).unwrap();
        let terms = conc.terms().unwrap();
        let b = mass_budget(&terms, &conc.zero_limit(terms[0].grid().clone()), 2.0, &radii).unwrap();
        assert!((b.nu_norm - m).abs() < 1e-3 * m && b.nu_infinity < 1e-6 * m, "{b:?}");
        assert!(b.budget_residual <= 0.02 * b.limsup_mass);

        let (strong, _, _) = Template::StrongConvergent.sequence(u).unwrap();
        let terms = strong.terms().unwrap();
        let b = mass_budget(&terms, &strong.limit_of(terms[0].grid().clone()), 2.0, &radii).unwrap();
        assert!(b.nu_norm < 1e-2 * m && b.nu_infinity < 1e-6 && b.budget_residual < 1e-2 * m, "{b:?}");
    }
}
