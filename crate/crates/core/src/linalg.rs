//! Iterative and banded solvers used by the reduction, constants and
//! continuation code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for a symmetric positive definite operator. The
/// tolerance is relative to `‖b‖`. Returns the solution and iteration count.
pub fn cg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok((x, it));
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::solver("cg", it, "operator is not positive definite"));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= tol * bnorm {
        Ok((x, max_iter))
    } else {
        Err(Error::solver(
            "cg",
            max_iter,
            format!("relative residual {:.3e} above {tol:.1e}", rr.sqrt() / bnorm),
        ))
    }
}

/// Outcome of a MINRES solve.
#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// MINRES for an operator that is self-adjoint with respect to the inner
/// product `ip`. Stops when the residual (in the `ip` norm) drops below
/// `tol * ‖b‖`.
pub fn minres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    ip: impl Fn(&[f64], &[f64]) -> f64,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<MinresOutcome> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = ip(b, b).max(0.0).sqrt();
    if beta1 == 0.0 {
        return Ok(MinresOutcome { x, iterations: 0, residual: 0.0 });
    }
    let mut v_old = vec![0.0; n];
    let mut v: Vec<f64> = b.iter().map(|t| t / beta1).collect();
    let mut beta = beta1;
    let (mut w, mut w_old) = (vec![0.0; n], vec![0.0; n]);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let (mut dbar, mut epsln) = (0.0f64, 0.0f64);
    let mut phibar = beta1;
    for it in 1..=max_iter {
        let mut y = apply(&v);
        if it > 1 {
            for i in 0..n {
                y[i] -= beta * v_old[i];
            }
        }
        let alpha = ip(&v, &y);
        for i in 0..n {
            y[i] -= alpha * v[i];
        }
        let beta_new = ip(&y, &y).max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alpha;
        let gbar = sn * dbar - cs * alpha;
        epsln = sn * beta_new;
        dbar = -cs * beta_new;
        let gamma = gbar.hypot(beta_new).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta_new / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        for i in 0..n {
            let wn = (v[i] - oldeps * w_old[i] - delta * w[i]) / gamma;
            w_old[i] = w[i];
            w[i] = wn;
            x[i] += phi * wn;
        }
        if phibar.abs() <= tol * beta1 {
            return Ok(MinresOutcome { x, iterations: it, residual: phibar.abs() });
        }
        if beta_new <= f64::EPSILON * beta1 {
            // invariant subspace reached; the current iterate is the best available
            return Ok(MinresOutcome { x, iterations: it, residual: phibar.abs() });
        }
        std::mem::swap(&mut v_old, &mut v);
        v = y.iter().map(|t| t / beta_new).collect();
        beta = beta_new;
    }
    Err(Error::solver(
        "minres",
        max_iter,
        format!("relative residual {:.3e} above {tol:.1e}", phibar.abs() / beta1),
    ))
}

/// Ritz pairs from a Lanczos run.
#[derive(Debug, Clone)]
pub struct RitzPairs {
    pub values: Vec<f64>,
    /// Residual bound `|β_k s_{k,i}|` of each Ritz pair.
    pub residuals: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Lanczos with full reorthogonalization for an operator self-adjoint in `ip`.
/// Returns all Ritz pairs of the final Krylov space, sorted ascending.
pub fn lanczos(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    ip: impl Fn(&[f64], &[f64]) -> f64,
    start: &[f64],
    steps: usize,
) -> Result<RitzPairs> {
    let n = start.len();
    let nrm = ip(start, start).max(0.0).sqrt();
    if nrm == 0.0 {
        return Err(Error::Degenerate("lanczos start vector is zero".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|t| t / nrm).collect()];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last_beta = 0.0;
    for k in 0..steps {
        let mut w = apply(&basis[k]);
        let alpha = ip(&w, &basis[k]);
        alphas.push(alpha);
        for _pass in 0..2 {
            for q in &basis {
                let c = ip(&w, q);
                for i in 0..n {
                    w[i] -= c * q[i];
                }
            }
        }
        let beta = ip(&w, &w).max(0.0).sqrt();
        last_beta = beta;
        if beta < 1e-13 || k + 1 == steps {
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|t| t / beta).collect());
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &j in &order {
        values.push(eig.eigenvalues[j]);
        residuals.push((last_beta * eig.eigenvectors[(m - 1, j)]).abs());
        let mut vec = vec![0.0; n];
        for (i, q) in basis.iter().take(m).enumerate() {
            let c = eig.eigenvectors[(i, j)];
            for (vi, qi) in vec.iter_mut().zip(q) {
                *vi += c * qi;
            }
        }
        vectors.push(vec);
    }
    Ok(RitzPairs { values, residuals, vectors })
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, factorized in
/// place by Gaussian elimination with partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        // room for the fill-in produced by row interchanges
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width], pivots: vec![0; n], factored: false }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside the band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside the band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.pivots[k] = p;
            if best <= 1e-3 * f64::EPSILON * scale {
                return Err(Error::solver("band_lu", k, "singular pivot"));
            }
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let piv = self.get(k, k);
            for i in k + 1..=last {
                let s = self.slot(i, k);
                let l = self.data[s] / piv;
                self.data[s] = l;
                if l != 0.0 {
                    for j in k + 1..=cmax {
                        let kj = self.data[self.slot(k, j)];
                        let ij = self.slot(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "solve called before factor");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.data[self.slot(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let cmax = (k + kl + ku).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=cmax {
                s -= self.data[self.slot(k, j)] * x[j];
            }
            x[k] = s / self.data[self.slot(k, k)];
        }
        x
    }
}

/// Number of eigenvalues strictly below `x` of the symmetric tridiagonal
/// matrix with diagonal `d` and off-diagonal `e` (Sturm sequence count).
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
        q = d[i] - x - if i == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = -f64::EPSILON * (d[i].abs() + x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solves `(T - shift) x = b` for a symmetric tridiagonal `T` (no pivoting).
pub fn tridiagonal_solve(d: &[f64], e: &[f64], shift: f64, b: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut c = vec![0.0; n];
    let mut x = b.to_vec();
    let mut diag = d[0] - shift;
    if diag == 0.0 {
        diag = 1e-300;
    }
    c[0] = if n > 1 { e[0] / diag } else { 0.0 };
    x[0] /= diag;
    for i in 1..n {
        let mut m = d[i] - shift - e[i - 1] * c[i - 1];
        if m == 0.0 {
            m = 1e-300;
        }
        c[i] = if i + 1 < n { e[i] / m } else { 0.0 };
        x[i] = (x[i] - e[i - 1] * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// The `k`-th smallest eigenvalue (0-based) of a symmetric tridiagonal matrix,
/// by bisection on the Sturm count.
pub fn tridiagonal_eigenvalue(d: &[f64], e: &[f64], k: usize, tol: f64) -> f64 {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = (if i > 0 { e[i - 1].abs() } else { 0.0 }) + (if i + 1 < n { e[i].abs() } else { 0.0 });
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    while hi - lo > tol * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Options for [`lbfgs`].
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖g‖∞ <= gtol`.
    pub gtol: f64,
    /// Stop when the relative decrease of `f` over one step is below `ftol`.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iter: 500, gtol: 1e-9, ftol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting with the initial one.
    pub history: Vec<f64>,
}

/// Limited-memory BFGS with backtracking Armijo line search. `rescale` is
/// called after every accepted step and may return a factor `c` by which the
/// iterate was multiplied (used for scale-invariant objectives); the stored
/// curvature pairs are rescaled consistently.
pub fn lbfgs(
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    opts: &LbfgsOptions,
    mut rescale: impl FnMut(&mut [f64]) -> f64,
) -> LbfgsOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut history = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it;
        let gmax = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if gmax <= opts.gtol {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &q);
            for j in 0..n {
                q[j] -= alphas[i] * y_hist[i][j];
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / dot(&g, &g).sqrt().max(1e-300)
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for j in 0..n {
                q[j] += (alphas[i] - beta) * s_hist[i][j];
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((mut xn, fn_, mut gn)) = accepted else {
            break;
        };
        let mut s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mut y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let c = rescale(&mut xn);
        if c != 1.0 {
            gn.iter_mut().for_each(|v| *v /= c);
            for v in s_hist.iter_mut().chain(std::iter::once(&mut s)) {
                v.iter_mut().for_each(|t| *t *= c);
            }
            for v in y_hist.iter_mut().chain(std::iter::once(&mut y)) {
                v.iter_mut().for_each(|t| *t /= c);
            }
        }
        if dot(&s, &y) > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let rel = (fx - fn_).abs() / fx.abs().max(1e-300);
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        iterations = it + 1;
        if rel <= opts.ftol {
            converged = true;
            break;
        }
    }
    LbfgsOutcome { x, value: fx, iterations, converged, history }
}

/// Symmetric eigen-decomposition of a small dense matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vecs)
}

/// Least-squares line fit `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Log–log slope of `y` against `x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).1
}

/// Solves a small dense system with a pseudo-inverse that discards singular
/// values below `rcond * σ_max`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DVector::zeros(a.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            let coef = u.column(k).dot(b) / s;
            out += vt.row(k).transpose() * coef;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> impl Fn(&[f64], &mut [f64]) {
        move |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - l - r + 0.1 * x[i];
            }
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 50;
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let (x, _) = cg(laplace_1d(n), &b, 1e-12, 500).unwrap();
        let mut ax = vec![0.0; n];
        laplace_1d(n)(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn minres_handles_indefinite_systems() {
        let n = 40;
        let diag: Vec<f64> = (0..n).map(|i| i as f64 - 10.5).collect();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let out = minres(
            |x| x.iter().zip(&diag).map(|(a, d)| a * d).collect(),
            |a, c| dot(a, c),
            &b,
            1e-12,
            200,
        )
        .unwrap();
        for i in 0..n {
            assert!((out.x[i] - b[i] / diag[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn minres_with_weighted_inner_product() {
        // operator D^{-1} A is self-adjoint in the D-weighted inner product
        let n = 30;
        let w: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let op = {
            let w = w.clone();
            move |x: &[f64]| {
                let mut y = vec![0.0; n];
                laplace_1d(n)(x, &mut y);
                y.iter().zip(&w).map(|(a, b)| a / b).collect::<Vec<f64>>()
            }
        };
        let ip = |a: &[f64], c: &[f64]| a.iter().zip(c).zip(&w).map(|((x, y), z)| x * y * z).sum();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let out = minres(&op, ip, &b, 1e-12, 200).unwrap();
        let r = op(&out.x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lanczos_finds_extreme_eigenvalues() {
        let n = 60;
        let d: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).powi(2)).collect();
        let start = vec![1.0; n];
        let out = lanczos(
            |x| x.iter().zip(&d).map(|(a, b)| a * b).collect(),
            |a, c| dot(a, c),
            &start,
            60,
        )
        .unwrap();
        assert!((out.values[0] - 1.0).abs() < 1e-8);
        assert!((out.values.last().unwrap() - 3600.0).abs() < 1e-6);
    }

    #[test]
    fn band_lu_matches_dense_solution() {
        let n = 25;
        let mut a = BandMatrix::zeros(n, 2, 1);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 1).min(n - 1) {
                // small diagonal forces pivoting
                let v = if i == j { 0.01 * (i as f64 + 1.0) } else { 1.0 + 0.1 * (i + 2 * j) as f64 };
                a.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let ax = a.matvec(&b);
        a.factor().unwrap();
        let x = a.solve(&ax);
        for i in 0..n {
            assert!((x[i] - b[i]).abs() < 1e-9, "{i}: {} vs {}", x[i], b[i]);
        }
        let lu = dense.lu();
        assert!(lu.solve(&DVector::from_vec(ax)).is_some());
    }

    #[test]
    fn sturm_count_and_bisection() {
        let n = 100;
        let d = vec![2.0; n];
        let e = vec![-1.0; n - 1];
        let exact = |k: usize| {
            let s = (std::f64::consts::PI * (k + 1) as f64 / (2.0 * (n + 1) as f64)).sin();
            4.0 * s * s
        };
        assert_eq!(sturm_count(&d, &e, exact(3) + 1e-9), 4);
        assert!((tridiagonal_eigenvalue(&d, &e, 0, 1e-14) - exact(0)).abs() < 1e-12);
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = tridiagonal_solve(&d, &e, 0.5, &b);
        for i in 1..n - 1 {
            let r = 1.5 * x[i] - x[i - 1] - x[i + 1];
            assert!((r - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lbfgs_minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let opts = LbfgsOptions { max_iter: 2000, gtol: 1e-10, ftol: 0.0, ..Default::default() };
        let out = lbfgs(f, &[-1.2, 1.0], &opts, |_| 1.0);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pinv_drops_null_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let x = pinv_solve(&a, &DVector::from_vec(vec![2.0, 5.0]), 1e-12);
        assert_eq!(x[0], 2.0);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
