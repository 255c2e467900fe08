//! Uniform Cartesian boxes, sampled fields, quadrature and the discrete
//! differential operators shared by every solver in the crate.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default upper bound on the number of grid nodes a single box may hold.
pub const DEFAULT_NODE_CAP: usize = 1 << 24;

/// Largest dimension supported by the internal machinery. Public construction
/// through [`make_grid`] is restricted to 1..=3; four-dimensional boxes are
/// only used by the weighted Hardy quotients.
pub const MAX_DIM: usize = 4;

/// A truncated uniform box `center + [-R, R]^n` with `M` nodes per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianGrid {
    dim: usize,
    radius: f64,
    m: usize,
    h: f64,
    center: Vec<f64>,
}

impl CartesianGrid {
    /// Box centered at the origin. Accepts `dim` in `1..=4`.
    pub fn new(dim: usize, radius: f64, points_per_axis: usize) -> Result<Self> {
        Self::with_center(dim, radius, points_per_axis, &vec![0.0; dim])
    }

    /// Box centered at `center`; node coordinates are `center_a - R + j h`.
    pub fn with_center(
        dim: usize,
        radius: f64,
        points_per_axis: usize,
        center: &[f64],
    ) -> Result<Self> {
        Self::with_center_capped(dim, radius, points_per_axis, center, DEFAULT_NODE_CAP)
    }

    pub fn with_center_capped(
        dim: usize,
        radius: f64,
        points_per_axis: usize,
        center: &[f64],
        node_cap: usize,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::validation("dim", format!("dimension {dim} outside 1..={MAX_DIM}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::validation("radius", format!("radius must be positive, got {radius}")));
        }
        if points_per_axis < 3 || points_per_axis % 2 == 0 {
            return Err(Error::validation(
                "points_per_axis",
                format!("points per axis must be odd and at least 3, got {points_per_axis}"),
            ));
        }
        if center.len() != dim || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("center", "center must be a finite point of the grid dimension"));
        }
        let nodes = (points_per_axis as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
        if nodes > node_cap as u128 {
            return Err(Error::Resource(format!(
                "grid with {nodes} nodes exceeds the cap of {node_cap} nodes"
            )));
        }
        Ok(Self {
            dim,
            radius,
            m: points_per_axis,
            h: 2.0 * radius / (points_per_axis - 1) as f64,
            center: center.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn points_per_axis(&self) -> usize {
        self.m
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn center(&self) -> &[f64] {
        &self.center
    }
    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Volume element `h^n` of the node-sum measure.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Coordinate of node `j` along `axis`.
    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        self.center[axis] - self.radius + j as f64 * self.h
    }

    /// Memory stride of `axis` (the last axis is contiguous).
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.dim - 1 - axis) as u32)
    }

    /// Per-axis index of node `idx` along `axis`.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.m
    }

    /// Writes the coordinates of node `idx` into `out`.
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            let j = rem % self.m;
            rem /= self.m;
            out[a] = self.coord(a, j);
        }
    }

    pub fn point_vec(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point(idx, &mut p);
        p
    }

    /// Linear index of a multi-index.
    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &j| acc * self.m + j)
    }

    /// Distance from `x` to the nearest face of the box (negative if outside).
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        (0..self.dim)
            .map(|a| self.radius - (x[a] - self.center[a]).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Same box shape translated to a new center.
    pub fn recentered(&self, center: &[f64]) -> Result<Self> {
        Self::with_center(self.dim, self.radius, self.m, center)
    }
}

/// Builds an origin-centered box, restricted to physical dimensions 1..=3.
pub fn make_grid(dim: usize, radius: f64, points_per_axis: usize) -> Result<CartesianGrid> {
    if !(1..=3).contains(&dim) {
        return Err(Error::validation("dim", format!("dimension must be 1, 2 or 3, got {dim}")));
    }
    CartesianGrid::new(dim, radius, points_per_axis)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FieldKind {
    Real,
    Complex,
}

/// Samples of a real or complex field, one per grid node. Complex values are
/// stored as interleaved `(re, im)` pairs.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<CartesianGrid>,
    values: Vec<f64>,
    kind: FieldKind,
}

impl GridFunction {
    pub fn zeros(grid: Arc<CartesianGrid>, kind: FieldKind) -> Self {
        let n = grid.len() * components(kind);
        Self { grid, values: vec![0.0; n], kind }
    }

    pub fn from_values(grid: Arc<CartesianGrid>, values: Vec<f64>, kind: FieldKind) -> Result<Self> {
        let expected = grid.len() * components(kind);
        if values.len() != expected {
            return Err(Error::validation(
                "values",
                format!("expected {expected} samples, got {}", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation("values", format!("non-finite sample at position {i}")));
        }
        Ok(Self { grid, values, kind })
    }

    /// Samples a real function at every node.
    pub fn from_fn(grid: Arc<CartesianGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut x);
                f(&x)
            })
            .collect();
        Self { grid, values, kind: FieldKind::Real }
    }

    /// Samples a complex function `x -> (re, im)` at every node.
    pub fn from_complex_fn(grid: Arc<CartesianGrid>, f: impl Fn(&[f64]) -> (f64, f64)) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let mut values = Vec::with_capacity(2 * grid.len());
        for i in 0..grid.len() {
            grid.point(i, &mut x);
            let (re, im) = f(&x);
            values.push(re);
            values.push(im);
        }
        Self { grid, values, kind: FieldKind::Complex }
    }

    pub fn grid(&self) -> &Arc<CartesianGrid> {
        &self.grid
    }
    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn is_complex(&self) -> bool {
        self.kind == FieldKind::Complex
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn node_count(&self) -> usize {
        self.grid.len()
    }

    /// Value at node `i` as `(re, im)`; `im = 0` for real fields.
    pub fn at(&self, i: usize) -> (f64, f64) {
        match self.kind {
            FieldKind::Real => (self.values[i], 0.0),
            FieldKind::Complex => (self.values[2 * i], self.values[2 * i + 1]),
        }
    }

    pub fn modulus(&self, i: usize) -> f64 {
        let (re, im) = self.at(i);
        re.hypot(im)
    }

    pub fn modulus_field(&self) -> GridFunction {
        let values = (0..self.node_count()).map(|i| self.modulus(i)).collect();
        Self { grid: self.grid.clone(), values, kind: FieldKind::Real }
    }

    pub fn real_part(&self) -> GridFunction {
        let values = (0..self.node_count()).map(|i| self.at(i).0).collect();
        Self { grid: self.grid.clone(), values, kind: FieldKind::Real }
    }

    pub fn to_complex(&self) -> GridFunction {
        match self.kind {
            FieldKind::Complex => self.clone(),
            FieldKind::Real => {
                let mut values = Vec::with_capacity(2 * self.values.len());
                for &v in &self.values {
                    values.push(v);
                    values.push(0.0);
                }
                Self { grid: self.grid.clone(), values, kind: FieldKind::Complex }
            }
        }
    }

    pub fn same_layout(&self, other: &GridFunction) -> bool {
        self.kind == other.kind && (Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid)
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &GridFunction) {
        assert!(self.same_layout(x), "axpy on incompatible grid functions");
        self.values.iter_mut().zip(&x.values).for_each(|(s, v)| *s += a * v);
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Multiplies every value by the unit complex number `e^{i phase}`.
    pub fn rotate_phase(&self, phase: f64) -> GridFunction {
        let mut out = self.to_complex();
        let (s, c) = phase.sin_cos();
        for pair in out.values.chunks_exact_mut(2) {
            let (re, im) = (pair[0], pair[1]);
            pair[0] = c * re - s * im;
            pair[1] = s * re + c * im;
        }
        out
    }

    /// Real part of the Hermitian node-sum product `h^n Σ u conj(v)`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        assert!(self.same_layout(other), "dot on incompatible grid functions");
        self.grid.cell_volume() * dot_raw(&self.values, &other.values)
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.node_count()).map(|i| self.modulus(i)).fold(0.0, f64::max)
    }

    /// Multilinear interpolation at an arbitrary point; zero outside the box.
    pub fn sample(&self, x: &[f64]) -> (f64, f64) {
        let g = &*self.grid;
        let d = g.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for a in 0..d {
            let s = (x[a] - (g.center[a] - g.radius)) / g.h;
            if !(s >= 0.0 && s <= (g.m - 1) as f64) {
                return (0.0, 0.0);
            }
            let j = (s.floor() as usize).min(g.m - 2);
            base[a] = j;
            frac[a] = s - j as f64;
        }
        let mut re = 0.0;
        let mut im = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx = idx * g.m + base[a] + bit;
            }
            if w != 0.0 {
                let (r, i) = self.at(idx);
                re += w * r;
                im += w * i;
            }
        }
        (re, im)
    }

    /// Multilinear transfer onto another grid (zero outside this field's box).
    pub fn resample(&self, target: Arc<CartesianGrid>) -> GridFunction {
        if *target == *self.grid {
            return Self { grid: target, values: self.values.clone(), kind: self.kind };
        }
        match self.kind {
            FieldKind::Real => GridFunction::from_fn(target, |x| self.sample(x).0),
            FieldKind::Complex => GridFunction::from_complex_fn(target, |x| self.sample(x)),
        }
    }
}

fn components(kind: FieldKind) -> usize {
    match kind {
        FieldKind::Real => 1,
        FieldKind::Complex => 2,
    }
}

pub(crate) fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norms available on grid functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    Lp(f64),
    H1,
    Linf,
}

impl NormKind {
    pub fn lp(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::validation("p", format!("Lp norm requires p > 1, got {p}")));
        }
        Ok(NormKind::Lp(p))
    }
}

/// Tensor-product trapezoid weight of node `idx`.
pub fn trapezoid_weight(grid: &CartesianGrid, idx: usize) -> f64 {
    let mut w = grid.cell_volume();
    let mut rem = idx;
    for _ in 0..grid.dim() {
        let j = rem % grid.m;
        rem /= grid.m;
        if j == 0 || j == grid.m - 1 {
            w *= 0.5;
        }
    }
    w
}

/// Trapezoidal quadrature of a real field (the real part for complex fields).
pub fn integrate(f: &GridFunction) -> f64 {
    integrate_complex(f).re
}

/// Trapezoidal quadrature of a complex field.
pub fn integrate_complex(f: &GridFunction) -> Complex64 {
    let g = f.grid();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..g.len() {
        let w = trapezoid_weight(g, i);
        let (re, im) = f.at(i);
        acc.re += w * re;
        acc.im += w * im;
    }
    acc
}

/// Trapezoidal quadrature of `phi(|f|)` without allocating a new field.
pub fn integrate_modulus(f: &GridFunction, phi: impl Fn(f64) -> f64) -> f64 {
    let g = f.grid();
    (0..g.len()).map(|i| trapezoid_weight(g, i) * phi(f.modulus(i))).sum()
}

/// Componentwise gradient by central differences, second-order one-sided at the
/// box faces. Returns one array per axis, each holding `values.len()` entries.
pub fn gradient_components(f: &GridFunction) -> Vec<Vec<f64>> {
    let g = f.grid();
    let comps = components(f.kind());
    let m = g.points_per_axis();
    let h = g.spacing();
    let vals = f.values();
    (0..g.dim())
        .map(|axis| {
            let s = g.stride(axis);
            let mut out = vec![0.0; vals.len()];
            for idx in 0..g.len() {
                let j = g.axis_index(idx, axis);
                for c in 0..comps {
                    let at = |k: usize| vals[k * comps + c];
                    let d = if j == 0 {
                        (-3.0 * at(idx) + 4.0 * at(idx + s) - at(idx + 2 * s)) / (2.0 * h)
                    } else if j == m - 1 {
                        (3.0 * at(idx) - 4.0 * at(idx - s) + at(idx - 2 * s)) / (2.0 * h)
                    } else {
                        (at(idx + s) - at(idx - s)) / (2.0 * h)
                    };
                    out[idx * comps + c] = d;
                }
            }
            out
        })
        .collect()
}

pub fn norm(f: &GridFunction, kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => integrate_modulus(f, |a| a * a).sqrt(),
        NormKind::Lp(p) => {
            assert!(p > 1.0, "Lp norm requires p > 1");
            integrate_modulus(f, |a| a.powf(p)).powf(1.0 / p)
        }
        NormKind::Linf => f.max_abs(),
        NormKind::H1 => {
            let g = f.grid();
            let comps = components(f.kind());
            let grads = gradient_components(f);
            let mut acc = 0.0;
            for i in 0..g.len() {
                let w = trapezoid_weight(g, i);
                let mut s = 0.0;
                for c in 0..comps {
                    let v = f.values()[i * comps + c];
                    s += v * v;
                    for gr in &grads {
                        let d = gr[i * comps + c];
                        s += d * d;
                    }
                }
                acc += w * s;
            }
            acc.sqrt()
        }
    }
}

/// Applies the (2n+1)-point Laplacian with zero values outside the box.
pub fn laplacian_apply(f: &GridFunction) -> GridFunction {
    let mut out = GridFunction::zeros(f.grid().clone(), f.kind());
    laplacian_raw(f.grid(), components(f.kind()), f.values(), out.values_mut());
    out
}

pub(crate) fn laplacian_raw(g: &CartesianGrid, comps: usize, u: &[f64], out: &mut [f64]) {
    let m = g.points_per_axis();
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    let dim = g.dim();
    let strides: Vec<usize> = (0..dim).map(|a| g.stride(a)).collect();
    for idx in 0..g.len() {
        let mut rem = idx;
        let mut js = [0usize; MAX_DIM];
        for a in (0..dim).rev() {
            js[a] = rem % m;
            rem /= m;
        }
        for c in 0..comps {
            let center = u[idx * comps + c];
            let mut acc = -2.0 * dim as f64 * center;
            for a in 0..dim {
                let s = strides[a];
                if js[a] > 0 {
                    acc += u[(idx - s) * comps + c];
                }
                if js[a] + 1 < m {
                    acc += u[(idx + s) * comps + c];
                }
            }
            out[idx * comps + c] = acc * inv_h2;
        }
    }
}

/// Discrete H¹ inner product `h^n Σ ((-Δ_h + 1) u) · v`, i.e. the sum of all
/// link differences (including links to the zero exterior) plus the mass term.
pub fn h1_inner(u: &GridFunction, v: &GridFunction) -> f64 {
    assert!(u.same_layout(v), "h1_inner on incompatible grid functions");
    h1_inner_raw(u.grid(), components(u.kind()), u.values(), v.values())
}

pub(crate) fn h1_inner_raw(g: &CartesianGrid, comps: usize, u: &[f64], v: &[f64]) -> f64 {
    let m = g.points_per_axis();
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    let dim = g.dim();
    let mut links = 0.0;
    for a in 0..dim {
        let s = g.stride(a);
        for idx in 0..g.len() {
            let j = g.axis_index(idx, a);
            for c in 0..comps {
                let k = idx * comps + c;
                // link towards the lower neighbor (exterior counts as zero)
                let (ul, vl) = if j > 0 {
                    (u[(idx - s) * comps + c], v[(idx - s) * comps + c])
                } else {
                    (0.0, 0.0)
                };
                links += (u[k] - ul) * (v[k] - vl);
                if j == m - 1 {
                    links += u[k] * v[k];
                }
            }
        }
    }
    g.cell_volume() * (links * inv_h2 + dot_raw(u, v))
}

pub fn h1_norm_discrete(u: &GridFunction) -> f64 {
    h1_inner(u, u).max(0.0).sqrt()
}

/// Fast exact solver for `(-Δ_h + shift) g = r` with zero exterior values,
/// diagonalized by the type-I discrete sine transform on each axis.
pub struct ShiftedLaplacianSolver {
    dim: usize,
    m: usize,
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    eig: Vec<f64>,
    shift: f64,
}

impl std::fmt::Debug for ShiftedLaplacianSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShiftedLaplacianSolver")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("shift", &self.shift)
            .finish()
    }
}

impl ShiftedLaplacianSolver {
    pub fn new(grid: &CartesianGrid, shift: f64) -> Self {
        let m = grid.points_per_axis();
        let h = grid.spacing();
        let fft = FftPlanner::new().plan_fft_forward(2 * (m + 1));
        let eig = (1..=m)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / (2.0 * (m + 1) as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        Self { dim: grid.dim(), m, len: grid.len(), fft, eig, shift }
    }

    /// Riesz map of the discrete H¹ inner product.
    pub fn h1(grid: &CartesianGrid) -> Self {
        Self::new(grid, 1.0)
    }

    pub fn solve(&self, r: &GridFunction) -> GridFunction {
        let mut out = r.clone();
        self.solve_in_place(out.values_mut(), components(r.kind()));
        out
    }

    /// Solves in place on raw (possibly interleaved complex) storage.
    pub fn solve_in_place(&self, data: &mut [f64], comps: usize) {
        assert_eq!(data.len(), self.len * comps);
        if comps == 1 {
            self.solve_real(data);
        } else {
            let mut re: Vec<f64> = data.iter().step_by(2).copied().collect();
            let mut im: Vec<f64> = data.iter().skip(1).step_by(2).copied().collect();
            self.solve_real(&mut re);
            self.solve_real(&mut im);
            for i in 0..self.len {
                data[2 * i] = re[i];
                data[2 * i + 1] = im[i];
            }
        }
    }

    fn solve_real(&self, data: &mut [f64]) {
        for axis in 0..self.dim {
            self.dst_axis(data, axis);
        }
        let m = self.m;
        for (idx, v) in data.iter_mut().enumerate() {
            let mut rem = idx;
            let mut lam = self.shift;
            for _ in 0..self.dim {
                lam += self.eig[rem % m];
                rem /= m;
            }
            *v /= lam;
        }
        let norm = (2.0 / (m + 1) as f64).powi(self.dim as i32);
        for axis in 0..self.dim {
            self.dst_axis(data, axis);
        }
        data.iter_mut().for_each(|v| *v *= norm);
    }

    /// Unnormalized DST-I along one axis: `X_k = Σ_j x_j sin(π j k / (M+1))`.
    fn dst_axis(&self, data: &mut [f64], axis: usize) {
        let m = self.m;
        let stride = m.pow((self.dim - 1 - axis) as u32);
        let outer = self.len / (stride * m);
        let n = 2 * (m + 1);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * stride * m + inner;
                buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                for j in 0..m {
                    let x = data[base + j * stride];
                    buf[j + 1].re = x;
                    buf[n - 1 - j].re = -x;
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                for k in 0..m {
                    data[base + k * stride] = -0.5 * buf[k + 1].im;
                }
            }
        }
    }
}

/// Conjugate-gradient route for `(-Δ_h + shift) g = r`, kept as an independent
/// cross-check of the transform solver.
pub fn solve_shifted_laplacian_cg(
    r: &GridFunction,
    shift: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GridFunction> {
    let g = r.grid().clone();
    let comps = components(r.kind());
    let apply = |x: &[f64], y: &mut [f64]| {
        laplacian_raw(&g, comps, x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = shift * xi - *yi;
        }
    };
    let (x, _) = crate::linalg::cg(apply, r.values(), tol, max_iter)?;
    GridFunction::from_values(g.clone(), x, r.kind())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dim: usize, r: f64, m: usize) -> Arc<CartesianGrid> {
        Arc::new(make_grid(dim, r, m).unwrap())
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(1, 8.0, 17).unwrap();
        assert_eq!(g.len(), 17);
        assert!((g.spacing() - 1.0).abs() < 1e-15);
        assert_eq!(make_grid(2, 8.0, 17).unwrap().len(), 289);
        assert!(matches!(make_grid(3, 8.0, 1025), Err(Error::Resource(_))));
        assert!(matches!(make_grid(1, 8.0, 16), Err(Error::Validation { .. })));
        assert!(make_grid(4, 1.0, 5).is_err());
    }

    #[test]
    fn origin_is_a_node() {
        let g = make_grid(2, 3.0, 31).unwrap();
        let mid = g.index(&[15, 15]);
        assert_eq!(g.point_vec(mid), vec![0.0, 0.0]);
    }

    #[test]
    fn integrate_constants_and_gaussian() {
        let g = grid(1, 8.0, 17);
        assert!((integrate(&GridFunction::from_fn(g.clone(), |_| 1.0)) - 16.0).abs() < 1e-12);
        assert_eq!(integrate(&GridFunction::zeros(g, FieldKind::Real)), 0.0);
        let g = grid(1, 8.0, 513);
        let f = GridFunction::from_fn(g, |x| (-x[0] * x[0]).exp());
        assert!((integrate(&f) - std::f64::consts::PI.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn h1_norm_of_sine_is_second_order() {
        let r = 4.0;
        let k = std::f64::consts::PI / r;
        // sin(k x) over [-R, R]: ∫ sin² = R, ∫ k² cos² = k² R
        let exact = (r * (1.0 + k * k)).sqrt();
        let err = |m: usize| {
            let f = GridFunction::from_fn(grid(1, r, m), |x| (k * x[0]).sin());
            (norm(&f, NormKind::H1) - exact).abs()
        };
        let (e1, e2) = (err(65), err(129));
        assert!(e1 < 2e-3, "{e1}");
        assert!(e1 / e2 > 3.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn norms_of_zero_and_homogeneity() {
        let g = grid(2, 2.0, 21);
        let z = GridFunction::zeros(g.clone(), FieldKind::Real);
        let f = GridFunction::from_fn(g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp() * (1.0 + x[0]));
        for kind in [NormKind::L2, NormKind::lp(3.0).unwrap(), NormKind::H1, NormKind::Linf] {
            assert_eq!(norm(&z, kind), 0.0);
            let a = norm(&f.scaled(-2.5), kind);
            assert!((a - 2.5 * norm(&f, kind)).abs() < 1e-12 * a);
        }
        assert!(NormKind::lp(1.0).is_err());
    }

    #[test]
    fn laplacian_of_linear_and_sine() {
        let g = grid(1, 4.0, 81);
        let lin = laplacian_apply(&GridFunction::from_fn(g.clone(), |x| x[0]));
        for j in 1..80 {
            assert!(lin.values()[j].abs() < 1e-10);
        }
        assert!(lin.values()[0].abs() > 1.0);
        let k = 1.3;
        let f = GridFunction::from_fn(g.clone(), |x| (k * x[0]).sin());
        let l = laplacian_apply(&f);
        let h = g.spacing();
        for j in 1..80 {
            let x = g.coord(0, j);
            let bound = h * h * k.powi(4) / 12.0 + 1e-12;
            assert!((l.values()[j] + k * k * (k * x).sin()).abs() <= bound);
        }
    }

    #[test]
    fn dst_solver_matches_cg() {
        let g = grid(2, 3.0, 25);
        let r = GridFunction::from_fn(g.clone(), |x| (x[0] - 0.3 * x[1]).cos() * (-x[0] * x[0]).exp());
        let fast = ShiftedLaplacianSolver::h1(&g).solve(&r);
        let slow = solve_shifted_laplacian_cg(&r, 1.0, 1e-13, 2000).unwrap();
        let diff = fast.sub(&slow).max_abs();
        assert!(diff < 1e-10 * slow.max_abs(), "{diff}");
        // the Riesz representative reproduces the node-sum pairing
        let v = GridFunction::from_fn(g, |x| x[0] * (-x[1] * x[1]).exp());
        let lhs = h1_inner(&fast, &v);
        let rhs = r.dot(&v);
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn dst_solver_complex_and_3d() {
        let g = grid(3, 2.0, 9);
        let r = GridFunction::from_complex_fn(g.clone(), |x| (x[0] + x[2], x[1] * x[1]));
        let sol = ShiftedLaplacianSolver::new(&g, 2.0).solve(&r);
        let back = {
            let l = laplacian_apply(&sol);
            let mut out = sol.scaled(2.0);
            out.axpy(-1.0, &l);
            out
        };
        assert!(back.sub(&r).max_abs() < 1e-11);
    }

    #[test]
    fn sample_reproduces_nodes_and_linear_fields() {
        let g = grid(2, 1.0, 11);
        let f = GridFunction::from_fn(g.clone(), |x| 2.0 * x[0] - x[1] + 0.5);
        assert!((f.sample(&[0.13, -0.41]).0 - (0.26 + 0.41 + 0.5)).abs() < 1e-12);
        assert_eq!(f.sample(&[1.5, 0.0]).0, 0.0);
        let p = g.point_vec(37);
        assert!((f.sample(&p).0 - f.values()[37]).abs() < 1e-12);
    }
}
