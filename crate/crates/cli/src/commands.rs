//! One planner per command. Planning reads and validates every config key
//! and returns a job; the job does the computation and writes artifacts.

use std::path::PathBuf;
use std::sync::Arc;

use concentra_core::ansatz::{cached_ground_state, solve_ground_state, RadialProfile};
use concentra_core::constants::{
    aubin_talenti_quotient, brezis_nirenberg_s_lambda, hardy_constant_probe, hardy_sobolev_s, lambda1_ball,
    sobolev_constant, write_constants_csv, BallGrid, ConstantRow, HardyParams, ProbeOptions, RadialBallGrid,
    SobolevBudget,
};
use concentra_core::diagnostics::{lions_classify, mass_budget, random_profiles, Template};
use concentra_core::geodesics::{
    find_geodesic_candidates, refine_closed_geodesic, write_candidates_csv, CandidateOptions, MetricPerturbation,
};
use concentra_core::homoclinic::{
    continue_branch, lambda0, parity_at, solve_homoclinic, write_branch_csv, ContinuationOptions, HamiltonianSpec,
    LineGrid, NewtonOptions, Trajectory,
};
use concentra_core::problem::{validate_exponent, Potential, ProblemSpec};
use concentra_core::reduction::{write_points_csv, ReductionConfig, Reducer, SearchBox};
use rayon::prelude::*;

use crate::config::{Command, RunConfig};
use crate::error::{at, core, RunError};
use crate::output::OutputDir;

pub type Job = Box<dyn FnOnce(&mut OutputDir) -> Result<(), RunError> + Send>;

/// Settings shared by all commands that come from the environment.
#[derive(Debug, Clone, Default)]
pub struct Env {
    pub cache_dir: Option<PathBuf>,
}

pub fn plan(cfg: &RunConfig, env: &Env) -> Result<Job, RunError> {
    let job = match cfg.command {
        Command::GroundState => ground_state(cfg, env)?,
        Command::Reduce => reduce(cfg, env)?,
        Command::Geodesics => geodesics(cfg)?,
        Command::Cc => cc(cfg)?,
        Command::Constants => constants(cfg)?,
        Command::Homoclinic => homoclinic(cfg)?,
    };
    cfg.check_unused()?;
    Ok(job)
}

fn potential(cfg: &RunConfig, key: &'static str, default: &str) -> Result<Potential, RunError> {
    Potential::expr(&cfg.string(key, default)).map_err(at(key))
}

fn csv<F>(f: F) -> Result<Vec<u8>, RunError>
where
    F: FnOnce(&mut Vec<u8>) -> concentra_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(core)?;
    Ok(buf)
}

fn profile(n: usize, p: f64, env: &Env) -> Result<Arc<RadialProfile>, RunError> {
    cached_ground_state(n, p, env.cache_dir.as_deref()).map_err(core)
}

fn ground_state(cfg: &RunConfig, env: &Env) -> Result<Job, RunError> {
    let n: usize = cfg.value("problem.n", 1)?;
    let p: f64 = cfg.value("problem.p", 3.0)?;
    let custom = cfg.has("numerics.tol") || cfg.has("numerics.r_max");
    let tol: f64 = cfg.value("numerics.tol", 1e-8)?;
    let r_max: f64 = cfg.value("numerics.r_max", 20.0)?;
    if !(1..=3).contains(&n) {
        return Err(RunError::validation("problem.n", format!("dimension must be 1, 2 or 3, got {n}")));
    }
    validate_exponent(n, p).map_err(core)?;
    if !(tol > 0.0) {
        return Err(RunError::validation("numerics.tol", "must be positive"));
    }
    if !(r_max > 0.0) {
        return Err(RunError::validation("numerics.r_max", "must be positive"));
    }
    let env = env.clone();
    Ok(Box::new(move |out: &mut OutputDir| {
        let prof = if custom {
            Arc::new(solve_ground_state(n, p, tol, r_max).map_err(core)?)
        } else {
            profile(n, p, &env)?
        };
        let text = csv(|b| prof.write_to(b))?;
        out.write("ground_state.txt", "profile", text)?;
        Ok(())
    }))
}

fn reduce(cfg: &RunConfig, env: &Env) -> Result<Job, RunError> {
    let n: usize = cfg.value("problem.n", 1)?;
    let p: f64 = cfg.value("problem.p", 3.0)?;
    let v = potential(cfg, "problem.V", "0")?;
    let k = potential(cfg, "problem.K", "1")?;
    let eps: f64 = cfg.value("problem.epsilon", 0.05)?;
    let mut spec = ProblemSpec::new(n, p, v, k, eps).map_err(core)?;
    if let Some(a) = cfg.opt_string("problem.A") {
        let comps = a
            .split(';')
            .map(|c| Potential::expr(c.trim()).map_err(at("problem.A")))
            .collect::<Result<Vec<_>, _>>()?;
        spec = spec.with_magnetic(comps).map_err(at("problem.A"))?;
    }
    let sweep: Vec<f64> = cfg.list("numerics.eps_sweep", vec![eps])?;
    let specs = sweep
        .iter()
        .map(|&e| spec.with_epsilon(e).map_err(at("numerics.eps_sweep")))
        .collect::<Result<Vec<_>, _>>()?;
    let lower: Vec<f64> = cfg.list("numerics.search_lower", vec![-1.0; n])?;
    let upper: Vec<f64> = cfg.list("numerics.search_upper", vec![1.0; n])?;
    if lower.len() != n || upper.len() != n {
        return Err(RunError::validation("numerics.search_lower", format!("search bounds need {n} entries")));
    }
    let search = SearchBox::new(lower, upper).map_err(at("numerics.search_lower"))?;
    let multistart: usize = cfg.value("numerics.multistart", 4)?;
    if multistart == 0 {
        return Err(RunError::validation("numerics.multistart", "need at least one start"));
    }
    let morse: bool = cfg.value("numerics.morse", true)?;
    let defaults = ReductionConfig::for_dim(n);
    let rc = ReductionConfig {
        window_radius: cfg.value("numerics.window_radius", defaults.window_radius)?,
        points_per_axis: cfg.value("numerics.points_per_axis", defaults.points_per_axis)?,
        newton_tol: cfg.value("numerics.newton_tol", defaults.newton_tol)?,
        max_epsilon: cfg.value("numerics.max_epsilon", defaults.max_epsilon)?,
        ..defaults
    };
    if rc.points_per_axis < 5 || !(rc.window_radius > 0.0) {
        return Err(RunError::validation("numerics.points_per_axis", "window must have a positive radius and at least 5 points"));
    }
    if let Some(e) = sweep.iter().find(|&&e| e > rc.max_epsilon) {
        return Err(RunError::validation("numerics.eps_sweep", format!("ε = {e} exceeds the cap {}", rc.max_epsilon)));
    }
    let env = env.clone();
    Ok(Box::new(move |out: &mut OutputDir| {
        let prof = profile(n, p, &env)?;
        let mut table = Vec::new();
        let mut warnings = Vec::new();
        for (i, s) in specs.iter().enumerate() {
            let reducer = Reducer::new(s, prof.clone(), rc.clone()).map_err(core)?;
            let mut found = reducer.find_concentration_points(&search, multistart).map_err(core)?;
            if morse {
                for pt in &mut found.points {
                    pt.morse_index = Some(reducer.morse_index(pt).map_err(core)?.index);
                }
            }
            if found.flat {
                warnings.push(format!("eps={}: flat reduced landscape", s.epsilon));
            }
            warnings.extend(found.warnings.iter().map(|w| format!("eps={}: {w}", s.epsilon)));
            let block = csv(|b| write_points_csv(s.epsilon, &found.points, b))?;
            let skip = if i == 0 { 0 } else { block.iter().position(|&c| c == b'\n').map_or(0, |j| j + 1) };
            table.extend_from_slice(&block[skip..]);
        }
        out.write("points.csv", "table", table)?;
        if !warnings.is_empty() {
            out.write("warnings.txt", "log", (warnings.join("\n") + "\n").into_bytes())?;
        }
        Ok(())
    }))
}

fn geodesics(cfg: &RunConfig) -> Result<Job, RunError> {
    let dim: usize = cfg.value("problem.sphere_dim", 2)?;
    if dim == 0 {
        return Err(RunError::validation("problem.sphere_dim", "sphere dimension must be positive"));
    }
    let kind = cfg.string("problem.metric", "conformal");
    let phi_expr = potential(cfg, "problem.phi", "x*exp(-x^2)")?;
    let phi = move |s: f64| phi_expr.eval(&[s]);
    let metric = match kind.as_str() {
        "conformal" => MetricPerturbation::conformal(dim, phi).map_err(core)?,
        "directional" => {
            let mut e1 = vec![0.0; dim + 1];
            e1[0] = 1.0;
            let dir: Vec<f64> = cfg.list("problem.direction", e1)?;
            MetricPerturbation::directional(dim, dir, phi).map_err(at("problem.direction"))?
        }
        other => {
            return Err(RunError::validation("problem.metric", format!("unknown metric `{other}`, expected conformal or directional")))
        }
    };
    let defaults = CandidateOptions::default();
    let opts = CandidateOptions {
        r_min: cfg.value("numerics.r_min", defaults.r_min)?,
        r_max: cfg.value("numerics.r_max", defaults.r_max)?,
        samples: cfg.value("numerics.samples", defaults.samples)?,
        r_resolution: cfg.value("numerics.r_resolution", defaults.r_resolution)?,
        seed: cfg.value("numerics.seed", defaults.seed)?,
    };
    if !(opts.r_min < opts.r_max) {
        return Err(RunError::validation("numerics.r_max", "must exceed numerics.r_min"));
    }
    let multistart: usize = cfg.value("numerics.multistart", 4)?;
    let refine_eps: Vec<f64> = cfg.list("numerics.refine_eps", vec![])?;
    if refine_eps.iter().any(|e| !(*e > 0.0)) {
        return Err(RunError::validation("numerics.refine_eps", "values must be positive"));
    }
    let modes: usize = cfg.value("numerics.fourier_modes", 4)?;
    let polyline: usize = cfg.value("output.polyline_samples", 256)?;
    Ok(Box::new(move |out: &mut OutputDir| {
        let search = find_geodesic_candidates(&metric, dim, multistart, &opts).map_err(core)?;
        out.write("candidates.csv", "table", csv(|b| write_candidates_csv(&search.candidates, b))?)?;
        if !search.warnings.is_empty() {
            out.write("warnings.txt", "log", (search.warnings.join("\n") + "\n").into_bytes())?;
        }
        if refine_eps.is_empty() {
            return Ok(());
        }
        let mut table = String::from("candidate,eps,energy,gradient_norm,distance,iterations\n");
        for (ci, cand) in search.candidates.iter().enumerate() {
            for (ei, &eps) in refine_eps.iter().enumerate() {
                let lp = refine_closed_geodesic(cand, &metric, eps, modes).map_err(core)?;
                table.push_str(&format!(
                    "{ci},{eps:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                    lp.energy, lp.gradient_norm, lp.distance, lp.iterations
                ));
                let text = csv(|b| lp.write_polyline(polyline, b))?;
                out.write(&format!("loops/candidate{ci:02}_eps{ei:02}.txt"), "profile", text)?;
            }
        }
        out.write("refined.csv", "table", table.into_bytes())?;
        Ok(())
    }))
}

fn template_name(t: Template) -> &'static str {
    match t {
        Template::Translated => "translated",
        Template::Spreading => "spreading",
        Template::TwoBump => "two-bump",
        Template::Concentrating => "concentrating",
        Template::StrongConvergent => "strong-convergent",
    }
}

fn cc(cfg: &RunConfig) -> Result<Job, RunError> {
    let names: Vec<String> = cfg.list("problem.templates", vec!["all".to_string()])?;
    let mut templates = Vec::new();
    for name in &names {
        if name == "all" {
            templates.extend(Template::ALL);
            continue;
        }
        let t = Template::ALL
            .into_iter()
            .find(|t| template_name(*t) == name)
            .ok_or_else(|| RunError::validation("problem.templates", format!("unknown template `{name}`")))?;
        templates.push(t);
    }
    let count: usize = cfg.value("numerics.profiles", 5)?;
    let seed: u64 = cfg.value("numerics.seed", 1)?;
    if count == 0 {
        return Err(RunError::validation("numerics.profiles", "need at least one profile"));
    }
    Ok(Box::new(move |out: &mut OutputDir| {
        let bases = random_profiles(1, count, seed).map_err(core)?;
        let cells: Vec<(Template, usize)> =
            templates.iter().flat_map(|&t| (0..count).map(move |i| (t, i))).collect();
        let rows = cells
            .par_iter()
            .map(|&(t, i)| -> Result<String, RunError> {
                let (seq, n_grid, radii) = t.sequence(bases[i].clone()).map_err(core)?;
                let report = lions_classify(&seq, &radii, &n_grid).map_err(core)?;
                let terms = seq.terms().map_err(core)?;
                let grid = terms[0].grid().clone();
                let limit =
                    if t == Template::StrongConvergent { seq.limit_of(grid) } else { seq.zero_limit(grid) };
                let b = mass_budget(&terms, &limit, 2.0, &radii).map_err(core)?;
                let label = format!("{:?}", report.label).to_lowercase();
                let expected = format!("{:?}", t.expected()).to_lowercase();
                Ok(format!(
                    "{},{i},{expected},{label},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    template_name(t),
                    report.mass,
                    b.limit_mass,
                    b.nu_norm,
                    b.nu_infinity,
                    b.budget_residual
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut table = String::from("template,profile,expected,label,mass,limit_mass,nu_norm,nu_infinity,budget_residual\n");
        rows.iter().for_each(|r| table.push_str(r));
        out.write("classification.csv", "table", table.into_bytes())?;
        Ok(())
    }))
}

fn constants(cfg: &RunConfig) -> Result<Job, RunError> {
    let quantity = cfg.string("problem.quantity", "hardy_probe");
    let n: usize = cfg.value("problem.n", 3)?;
    let job: Box<dyn FnOnce() -> Result<Vec<ConstantRow>, RunError> + Send> = match quantity.as_str() {
        "hardy_probe" => {
            let k: usize = cfg.value("problem.k", n)?;
            let p: f64 = cfg.value("problem.p", 2.0)?;
            let alpha: f64 = cfg.value("problem.alpha", 0.0)?;
            let params = HardyParams::hardy(n, k, p, alpha).map_err(core)?;
            let ms: Vec<f64> = cfg.list("numerics.m", vec![1.0, 2.0, 4.0, 8.0])?;
            let d = ProbeOptions::default();
            let opts = ProbeOptions { delta: cfg.value("numerics.delta", d.delta)?, z_extent: cfg.value("numerics.z_extent", d.z_extent)? };
            Box::new(move || {
                let bound = params.bound_constant();
                ms.iter()
                    .map(|&m| {
                        let q = hardy_constant_probe(&params, m, &opts).map_err(core)?;
                        Ok(ConstantRow {
                            quantity: "hardy_probe".into(),
                            params: hardy_cols(&params, m),
                            value: q,
                            error_bar: (q - bound).abs(),
                            iterations: 0,
                        })
                    })
                    .collect()
            })
        }
        "hardy_sobolev" => {
            let k: usize = cfg.value("problem.k", n)?;
            let q: f64 = cfg.value("problem.q", 2.0)?;
            let s: f64 = cfg.value("problem.s", 0.0)?;
            let params = HardyParams::sobolev(n, k, q, s).map_err(core)?;
            let d = SobolevBudget::default();
            let budget = SobolevBudget {
                max_iter: cfg.value("numerics.max_iter", d.max_iter)?,
                tau_half_width: cfg.value("numerics.tau_half_width", d.tau_half_width)?,
                tau_nodes: cfg.value("numerics.tau_nodes", d.tau_nodes)?,
                phi_nodes: cfg.value("numerics.phi_nodes", d.phi_nodes)?,
                rel_decrease: cfg.value("numerics.rel_decrease", d.rel_decrease)?,
            };
            Box::new(move || {
                let r = hardy_sobolev_s(&params, &budget).map_err(core)?;
                let last = r.history.iter().rev().nth(1).copied().unwrap_or(r.value);
                Ok(vec![ConstantRow {
                    quantity: "hardy_sobolev".into(),
                    params: vec![("n".into(), n as f64), ("k".into(), k as f64), ("q".into(), q), ("s".into(), s)],
                    value: r.value,
                    error_bar: (last - r.value).abs(),
                    iterations: r.iterations,
                }])
            })
        }
        "aubin_talenti" => {
            let eps: Vec<f64> = cfg.list("numerics.eps", vec![0.5, 1.0, 2.0])?;
            if n < 3 {
                return Err(RunError::validation("problem.n", "need n ≥ 3"));
            }
            Box::new(move || {
                let values = aubin_talenti_quotient(n, &eps).map_err(core)?;
                let exact = sobolev_constant(n);
                Ok(eps
                    .iter()
                    .zip(values)
                    .map(|(&e, v)| ConstantRow {
                        quantity: "aubin_talenti".into(),
                        params: vec![("n".into(), n as f64), ("eps".into(), e)],
                        value: v,
                        error_bar: (v - exact).abs(),
                        iterations: 0,
                    })
                    .collect())
            })
        }
        "brezis_nirenberg" => {
            let lambdas: Vec<f64> = cfg.list("problem.lambda", vec![0.0])?;
            let d = RadialBallGrid::default();
            let grid = RadialBallGrid {
                elements: cfg.value("numerics.elements", d.elements)?,
                grading: cfg.value("numerics.grading", d.grading)?,
            };
            if n < 3 {
                return Err(RunError::validation("problem.n", "need n ≥ 3"));
            }
            Box::new(move || {
                lambdas
                    .par_iter()
                    .map(|&l| {
                        let est = brezis_nirenberg_s_lambda(l, n, &grid).map_err(at("problem.lambda"))?;
                        Ok(ConstantRow {
                            quantity: "brezis_nirenberg".into(),
                            params: vec![("n".into(), n as f64), ("lambda".into(), l), ("lambda1".into(), est.lambda1)],
                            value: est.value,
                            error_bar: est.error_bar,
                            iterations: est.iterations,
                        })
                    })
                    .collect()
            })
        }
        "lambda1" => {
            let radius: f64 = cfg.value("problem.radius", 1.0)?;
            let nodes: usize = cfg.value("numerics.nodes", 2000)?;
            Box::new(move || {
                let coarse = lambda1_ball(n, &BallGrid::Radial { nodes, radius }).map_err(core)?;
                let fine = lambda1_ball(n, &BallGrid::Radial { nodes: 2 * nodes, radius }).map_err(core)?;
                Ok(vec![ConstantRow {
                    quantity: "lambda1".into(),
                    params: vec![("n".into(), n as f64), ("radius".into(), radius), ("nodes".into(), 2.0 * nodes as f64)],
                    value: fine,
                    error_bar: (fine - coarse).abs(),
                    iterations: 0,
                }])
            })
        }
        other => {
            return Err(RunError::validation(
                "problem.quantity",
                format!("unknown quantity `{other}`, expected hardy_probe, hardy_sobolev, aubin_talenti, brezis_nirenberg or lambda1"),
            ))
        }
    };
    Ok(Box::new(move |out: &mut OutputDir| {
        let rows = job()?;
        out.write("constants.csv", "table", csv(|b| write_constants_csv(&rows, b))?)?;
        Ok(())
    }))
}

fn hardy_cols(params: &HardyParams, m: f64) -> Vec<(String, f64)> {
    vec![
        ("n".into(), params.n as f64),
        ("k".into(), params.k as f64),
        ("p".into(), params.p),
        ("alpha".into(), params.alpha),
        ("m".into(), m),
        ("bound".into(), params.bound_constant()),
    ]
}

fn homoclinic(cfg: &RunConfig) -> Result<Job, RunError> {
    let a = potential(cfg, "problem.a", "2*sech(t)^2")?;
    let sigma: f64 = cfg.value("problem.sigma", 2.0)?;
    let half_width: f64 = cfg.value("numerics.half_width", 20.0)?;
    let intervals: usize = cfg.value("numerics.intervals", 2048)?;
    let grid = LineGrid::new(half_width, intervals).map_err(|e| match e {
        concentra_core::Error::Validation { field, message } => {
            RunError::validation(if field == "T" { "numerics.half_width" } else { "numerics.intervals" }, message)
        }
        other => core(other),
    })?;
    let spec = HamiltonianSpec::new(sigma, a.clone(), 0.0).map_err(core)?;
    let offset: f64 = cfg.value("numerics.seed_offset", 0.05)?;
    let amplitude: f64 = cfg.value("numerics.seed_amplitude", 0.3)?;
    let steps: usize = cfg.value("numerics.steps", 20)?;
    let ds: f64 = cfg.value("numerics.ds", 0.02)?;
    let stride: usize = cfg.value("output.trajectory_stride", 5)?;
    if !(offset > 0.0) {
        return Err(RunError::validation("numerics.seed_offset", "must be positive"));
    }
    if !(amplitude > 0.0) {
        return Err(RunError::validation("numerics.seed_amplitude", "must be positive"));
    }
    if ds == 0.0 || !ds.is_finite() {
        return Err(RunError::validation("numerics.ds", "must be finite and nonzero"));
    }
    Ok(Box::new(move |out: &mut OutputDir| {
        let l0 = lambda0(&a, &grid).map_err(|e| match e {
            concentra_core::Error::Validation { message, .. } => RunError::validation("numerics.half_width", message),
            other => core(other),
        })?;
        let parity = parity_at(&spec, l0.lambda0, &grid).map_err(core)?;
        let mut summary = String::from("lambda0,kernel_dim,parity,pairing,tolerance\n");
        summary.push_str(&format!(
            "{:.17e},{},{},{:.17e},{:.17e}\n",
            l0.lambda0,
            parity.k,
            parity.parity,
            parity.pairing.unwrap_or(f64::NAN),
            parity.tolerance
        ));
        out.write("bifurcation.csv", "table", summary.into_bytes())?;

        let start_spec = spec.with_lambda(l0.lambda0 + offset);
        let start =
            solve_homoclinic(&start_spec, &Trajectory::seed(&l0, amplitude), &NewtonOptions::default()).map_err(core)?;
        let run = continue_branch(&start_spec, &start, steps, ds, &ContinuationOptions::default()).map_err(core)?;
        out.write("branch.csv", "table", csv(|b| write_branch_csv(&run, b))?)?;
        if stride > 0 {
            for (i, pt) in run.points.iter().enumerate().filter(|(i, _)| i % stride == 0) {
                let mut text = format!("# lambda {:.17e}\n", pt.lambda).into_bytes();
                text.extend(csv(|b| pt.x.write_columns(b))?);
                out.write(&format!("trajectories/point{i:03}.txt"), "profile", text)?;
            }
        }
        Ok(())
    }))
}
