use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use brachx_core::bvp::{solve_multistart, type1_algebraic_solve_with, BvpProblem};
use brachx_core::decomposition::{block_diagonal_p, build_type_ab, centralizer_split, make_pseudo_cartan};
use brachx_core::dynamics::{evolve_unitary, integrate, uniform_grid};
use brachx_core::fixtures;
use brachx_core::integrable::{brachistochrone_as_splits, euler_arnold_flow, lax_from_split, split_distance, write_type1_csv, TLSplit};
use brachx_core::lie_algebra::gell_mann_basis;
use brachx_core::optimize::LocalMethod;
use brachx_core::seeding::{child_rng, child_seed, isotropic_vec};
use brachx_core::stability::{
    divergence_e, f_measure, fit_exponential, initial_slope, linear_regime_end, lyapunov_distribution,
    lyapunov_exponent_with, quartiles, unitary_divergence_o, DivergenceRun, LyapunovConfig,
};
use brachx_core::{ABDecomposition, Brachistochrone, PhaseState, UnitaryMatrix};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind};
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StateSpec {
    Named(String),
    Split { a: Vec<f64>, lambda: Vec<f64> },
    Flat(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TargetSpec {
    Named(String),
    Matrix(UnitaryMatrix),
}

/// Union of every kind's parameters; `Kind::allowed_keys` has already
/// rejected keys that do not belong to the kind at hand.
#[derive(Debug, Default, Deserialize)]
struct Params {
    fixture: Option<String>,
    n: Option<usize>,
    k: Option<usize>,
    decomposition_file: Option<PathBuf>,
    state: Option<StateSpec>,
    state_norm: Option<f64>,
    t_end: Option<f64>,
    samples: Option<usize>,
    tol: Option<f64>,
    closed_form: Option<bool>,
    unitary: Option<bool>,
    target: Option<TargetSpec>,
    n_starts: Option<usize>,
    budget: Option<usize>,
    start_norm: Option<f64>,
    method: Option<LocalMethod>,
    n_perturbations: Option<usize>,
    grid_intervals: Option<usize>,
    d_rel: Option<f64>,
    n_samples: Option<usize>,
    c: Option<Vec<f64>>,
    q: Option<usize>,
    epsilons: Option<Vec<f64>>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    p: Params,
    dir: &'a Path,
    outputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn seed(&self) -> Result<u64, CliError> {
        self.cfg
            .seed
            .ok_or_else(|| invalid(format!("kind '{}' needs a seed for the random state", self.cfg.kind)))
    }

    fn tol(&self, default: f64) -> Result<f64, CliError> {
        let t = self.p.tol.unwrap_or(default);
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid(format!("tol must lie in (0, 1), got {t}")));
        }
        Ok(t)
    }

    fn decomposition(&self) -> Result<Arc<ABDecomposition>, CliError> {
        let p = &self.p;
        let given = [p.fixture.is_some(), p.decomposition_file.is_some(), p.n.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(invalid("give exactly one of fixture, decomposition_file or n (with optional k)"));
        }
        if let Some(name) = &p.fixture {
            return Ok(fixtures::by_name(name)?);
        }
        if let Some(path) = &p.decomposition_file {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let dec: ABDecomposition = serde_json::from_str(&text).map_err(|e| crate::config::json_error(path, &e))?;
            return Ok(Arc::new(dec));
        }
        let n = p.n.unwrap_or_default();
        let k = p.k.unwrap_or(n / 2);
        Ok(Arc::new(make_pseudo_cartan(n, k)?.ab()))
    }

    fn state(&self, dec: &ABDecomposition) -> Result<PhaseState, CliError> {
        if self.p.state_norm.is_some() && !matches!(self.p.state, None | Some(StateSpec::Named(_))) {
            return Err(invalid("state_norm only applies to random states"));
        }
        let random = |norm: f64| -> Result<PhaseState, CliError> {
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(invalid(format!("state_norm must be positive, got {norm}")));
            }
            let x = isotropic_vec(&mut child_rng(self.seed()?, "cli-state", 0), dec.dim(), norm);
            let (a, lambda) = dec.split(&x);
            Ok(PhaseState::new(a, lambda))
        };
        let norm = self.p.state_norm.unwrap_or(1.0);
        let state = match &self.p.state {
            None => random(norm)?,
            Some(StateSpec::Named(s)) if s == "random" => random(norm)?,
            Some(StateSpec::Named(s)) if s == "generic" => {
                if self.p.state_norm.is_some() {
                    return Err(invalid("state_norm only applies to random states"));
                }
                let name = self
                    .p
                    .fixture
                    .as_deref()
                    .ok_or_else(|| invalid("state \"generic\" needs a fixture"))?;
                fixtures::generic_solution(name)?
            }
            Some(StateSpec::Named(s)) => {
                return Err(invalid(format!("unknown state '{s}'; use \"random\", \"generic\", a coordinate list or {{a, lambda}}")))
            }
            Some(StateSpec::Split { a, lambda }) => PhaseState::new(a.clone(), lambda.clone()),
            Some(StateSpec::Flat(x)) => {
                if x.len() != dec.dim() {
                    return Err(invalid(format!("state has {} coordinates, expected {}", x.len(), dec.dim())));
                }
                let (a, lambda) = dec.split(x);
                PhaseState::new(a, lambda)
            }
        };
        if state.a.len() != dec.dim_a() || state.lambda.len() != dec.dim_b() {
            return Err(invalid(format!(
                "state must have {} a-coordinates and {} lambda-coordinates",
                dec.dim_a(),
                dec.dim_b()
            )));
        }
        Ok(state)
    }

    fn target(&self, dec: &ABDecomposition) -> Result<UnitaryMatrix, CliError> {
        let n = dec.n();
        let u = match &self.p.target {
            None => fixtures::haar_unitary(n, child_seed(self.seed()?, "cli-target", 0)),
            Some(TargetSpec::Named(s)) => match s.as_str() {
                "haar" => fixtures::haar_unitary(n, child_seed(self.seed()?, "cli-target", 0)),
                "identity" => UnitaryMatrix::identity(n),
                "generic" => {
                    if n != 4 {
                        return Err(invalid("target \"generic\" is an su(4) target"));
                    }
                    fixtures::generic_target()
                }
                "near-identity" => {
                    let sys = Brachistochrone::from_arc(Arc::new(dec.clone()));
                    brachx_core::figures::near_identity_target(&sys, child_seed(self.seed()?, "cli-target", 0))?.1
                }
                _ => {
                    return Err(invalid(format!(
                        "unknown target '{s}'; use \"haar\", \"identity\", \"generic\", \"near-identity\" or a matrix {{n, re, im}}"
                    )))
                }
            },
            Some(TargetSpec::Matrix(u)) => u.clone(),
        };
        if u.dim() != n {
            return Err(invalid(format!("target is {}x{}, decomposition acts on n = {n}", u.dim(), u.dim())));
        }
        Ok(u)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let w = self.create(name)?;
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        wr.write_record(header).map_err(io)?;
        for r in rows {
            wr.write_record(&r).map_err(io)?;
        }
        wr.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

fn s(v: f64) -> String {
    v.to_string()
}

fn dec_summary(dec: &ABDecomposition) -> Value {
    json!({
        "n": dec.n(),
        "kind": dec.kind().as_str(),
        "dim_a": dec.dim_a(),
        "dim_b": dec.dim_b(),
        "content_hash": dec.content_hash(),
    })
}

/// Runs one experiment, writing into `dir`. Returns the files written and a
/// short JSON summary for stdout.
pub fn run(kind: Kind, cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value), CliError> {
    let mut ctx = Ctx {
        cfg,
        p: cfg.params()?,
        dir,
        outputs: Vec::new(),
    };
    let summary = match kind {
        Kind::Basis => basis(&mut ctx)?,
        Kind::DecompVerify => decomp_verify(&mut ctx)?,
        Kind::Simulate => simulate(&mut ctx)?,
        Kind::Solve | Kind::SolveType1 => solve(&mut ctx, kind == Kind::SolveType1)?,
        Kind::Lyapunov => lyapunov(&mut ctx)?,
        Kind::LyapunovDist => lyapunov_dist(&mut ctx)?,
        Kind::Divergence => divergence(&mut ctx)?,
        Kind::Fmeasure => fmeasure(&mut ctx)?,
        Kind::EulerArnoldLimit => euler_arnold(&mut ctx)?,
    };
    Ok((ctx.outputs, summary))
}

fn basis(ctx: &mut Ctx) -> Result<Value, CliError> {
    let n = ctx.p.n.ok_or_else(|| invalid("kind 'basis' needs parameter n"))?;
    let basis = gell_mann_basis(n)?;
    let v = json!({
        "n": n,
        "ordering": brachx_core::lie_algebra::GELL_MANN_ORDERING,
        "normalization": "Tr(g_i g_j) = 2 delta_ij",
        "elements": basis.elements(),
    });
    ctx.write_json("basis.json", &v)?;
    Ok(json!({"n": n, "elements": basis.len(), "reconstruction_error": basis.reconstruction_error()}))
}

fn decomp_verify(ctx: &mut Ctx) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let mut v = dec_summary(&dec);
    v["controllable"] = json!(dec.verify_controllability());
    v["b_closure_residual"] = json!(dec.b_closure_residual());
    v["type1"] = json!(dec.is_type1());
    v["type2"] = json!(dec.is_type2());
    v["block_size"] = json!(dec.block_size());
    if let Some(cs) = dec.cartan() {
        v["pseudo_cartan_closure_residual"] = json!(cs.parent().closure_residual());
        v["centralizer_commutation_residual"] = json!(cs.commutation_residual());
        v["a_hat_eigenvalues"] = json!(cs.eigenvalues());
        if let Some(w) = cs.warning() {
            v["warning"] = json!(w);
        }
    }
    let j = serde_json::to_value(&*dec).map_err(|e| CliError::Io(e.to_string()))?;
    ctx.write_json("decomposition.json", &j)?;
    ctx.write_json("verification.json", &v)?;
    Ok(v)
}

fn simulate(ctx: &mut Ctx) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let state = ctx.state(&dec)?;
    let tol = ctx.tol(1e-10)?;
    let t_end = ctx.p.t_end.unwrap_or(1.0);
    let m = ctx.p.samples.unwrap_or(100);
    if !(t_end > 0.0 && t_end.is_finite()) || m == 0 {
        return Err(invalid("t_end must be positive and samples at least 1"));
    }
    let sys = Arc::new(Brachistochrone::from_arc(dec.clone()));
    let times = uniform_grid(t_end, m);
    let mut traj = integrate(&sys, &state, t_end, tol, &times)?;
    if ctx.p.unitary.unwrap_or(false) {
        traj = evolve_unitary(&traj)?;
    }
    let w = ctx.create("trajectory.csv")?;
    traj.write_csv(w, Some("integrated"))?;
    if ctx.p.closed_form.unwrap_or(false) {
        if !dec.is_type1() {
            return Err(invalid("closed_form needs a Type I decomposition"));
        }
        let w = ctx.create("trajectory_closed_form.csv")?;
        write_type1_csv(w, &dec, &state, &times)?;
    }
    let d = traj.drift();
    let mut v = dec_summary(&dec);
    v["state_norm"] = json!(state.norm());
    v["t_end"] = json!(t_end);
    v["drift"] = json!({
        "normH": d.norm_h,
        "normD": d.norm_d,
        "F_k": d.f_k,
        "angular_momentum": d.angular_momentum,
    });
    ctx.write_json("summary.json", &v)?;
    Ok(v)
}

fn solve(ctx: &mut Ctx, type1: bool) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let target = ctx.target(&dec)?;
    let mut prob = BvpProblem::new(dec.clone(), target, ctx.seed()?);
    if let Some(t) = ctx.p.tol {
        prob.integration_tol = ctx.tol(t)?;
    }
    prob.n_starts = ctx.p.n_starts.unwrap_or(prob.n_starts);
    prob.optimizer_budget = ctx.p.budget.unwrap_or(prob.optimizer_budget);
    prob.start_norm = ctx.p.start_norm.unwrap_or(prob.start_norm);
    prob.method = ctx.p.method.unwrap_or(prob.method);
    let res = if type1 {
        type1_algebraic_solve_with(&prob)?
    } else {
        solve_multistart(&prob)?
    };
    let w = ctx.create("costs.csv")?;
    res.write_costs_csv(w)?;
    let threshold = brachx_core::NumericPolicy::current().bvp_success;
    let summary = json!({
        "decomposition": dec_summary(&dec),
        "best_cost": res.best_cost,
        "median_cost": res.median_cost(),
        "success_threshold": threshold,
        "success_fraction": res.success_fraction(threshold),
        "protocol_cost": brachx_core::dynamics::cost(&res.best_x),
    });
    let full = json!({
        "summary": summary,
        "target": prob.target,
        "n_starts": prob.n_starts,
        "budget": prob.optimizer_budget,
        "start_norm": prob.start_norm,
        "method": prob.method,
        "integration_tol": prob.integration_tol,
        "result": res,
    });
    ctx.write_json("result.json", &full)?;
    Ok(summary)
}

fn lyap_config(p: &Params, tol: f64) -> Result<LyapunovConfig, CliError> {
    let d = LyapunovConfig::default();
    let cfg = LyapunovConfig {
        n_perturbations: p.n_perturbations.unwrap_or(d.n_perturbations),
        d_rel: p.d_rel.unwrap_or(d.d_rel),
        grid_intervals: p.grid_intervals.unwrap_or(d.grid_intervals),
        tol,
        ..d
    };
    if cfg.n_perturbations == 0 || cfg.grid_intervals < 2 {
        return Err(invalid("n_perturbations must be at least 1 and grid_intervals at least 2"));
    }
    if !(cfg.d_rel > 0.0 && cfg.d_rel <= 0.01) {
        return Err(invalid(format!("d_rel must lie in (0, 0.01], got {}", cfg.d_rel)));
    }
    Ok(cfg)
}

fn lyapunov(ctx: &mut Ctx) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let state = ctx.state(&dec)?;
    let cfg = lyap_config(&ctx.p, ctx.tol(1e-11)?)?;
    let sys = Brachistochrone::from_arc(dec.clone());
    let sample = lyapunov_exponent_with(&sys, &state, child_seed(ctx.seed()?, "cli-lyapunov", 0), &cfg)?;
    let v = json!({
        "decomposition": dec_summary(&dec),
        "exponent": sample.exponent,
        "fit_t_lo": sample.fit_window.0,
        "fit_t_hi": sample.fit_window.1,
        "fit_r2": sample.fit_r2,
        "acceptable": sample.acceptable(cfg.r2_min),
        "retained": sample.retained,
        "dropped": sample.dropped,
        "state_norm": state.norm(),
        "config": cfg,
    });
    ctx.write_json("lyapunov.json", &v)?;
    Ok(v)
}

fn lyapunov_dist(ctx: &mut Ctx) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let cfg = lyap_config(&ctx.p, ctx.tol(1e-11)?)?;
    let n_samples = ctx.p.n_samples.unwrap_or(2500);
    let sys = Brachistochrone::from_arc(dec.clone());
    let samples = lyapunov_distribution(&sys, n_samples, ctx.seed()?, &cfg)?;
    ctx.csv(
        "exponents.csv",
        &["sample", "exponent", "fit_t_lo", "fit_t_hi", "fit_r2", "retained", "dropped"],
        samples.iter().enumerate().map(|(i, x)| {
            vec![
                i.to_string(),
                s(x.exponent),
                s(x.fit_window.0),
                s(x.fit_window.1),
                s(x.fit_r2),
                x.retained.to_string(),
                x.dropped.to_string(),
            ]
        }),
    )?;
    let ex: Vec<f64> = samples.iter().map(|x| x.exponent).collect();
    let (q1, q3) = quartiles(&ex);
    let acceptable = samples.iter().filter(|x| x.acceptable(cfg.r2_min)).count();
    let v = json!({
        "decomposition": dec_summary(&dec),
        "n_samples": n_samples,
        "median": median(&ex),
        "q1": q1,
        "q3": q3,
        "acceptable_fraction": acceptable as f64 / n_samples as f64,
        "config": cfg,
    });
    ctx.write_json("summary.json", &v)?;
    Ok(v)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

fn divergence(ctx: &mut Ctx) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let state = ctx.state(&dec)?;
    let tol = ctx.tol(1e-11)?;
    let mut run = DivergenceRun::new(
        state.clone(),
        ctx.p.n_perturbations.unwrap_or(200),
        ctx.p.grid_intervals.unwrap_or(100),
        child_seed(ctx.seed()?, "cli-divergence", 0),
    );
    run.tol = tol;
    if let Some(d) = ctx.p.d_rel {
        run.d_norm = d * state.norm();
    }
    run.validate()?;
    let sys = Brachistochrone::from_arc(dec.clone());
    let e = divergence_e(&sys, &run)?;
    let o = unitary_divergence_o(&sys, &run)?;
    let log_mean = e.log_mean.clone().unwrap_or_else(|| vec![f64::NAN; e.t.len()]);
    ctx.csv(
        "divergence.csv",
        &["t", "E_mean", "E_logmean", "O_mean", "O_branch_excluded"],
        (0..e.t.len()).map(|i| vec![s(e.t[i]), s(e.mean[i]), s(log_mean[i]), s(o.mean[i]), o.branch_excluded[i].to_string()]),
    )?;
    let fit = fit_exponential(&e.t, &e.mean, 0.98);
    let (slope, slope_r2) = initial_slope(&o.t, &o.mean, 0.1);
    let v = json!({
        "decomposition": dec_summary(&dec),
        "exponent": fit.exponent,
        "fit_r2": fit.r2,
        "fit_t_lo": e.t[fit.window.0],
        "fit_t_hi": e.t[fit.window.1],
        "o_initial_slope": slope,
        "o_initial_r2": slope_r2,
        "o_changepoint": linear_regime_end(&o.t, &o.mean, 0.1),
        "retention_e": e.retention(),
        "retention_o": o.retention(),
        "state_norm": state.norm(),
        "d_norm": run.d_norm,
    });
    ctx.write_json("summary.json", &v)?;
    Ok(v)
}

fn fmeasure(ctx: &mut Ctx) -> Result<Value, CliError> {
    let dec = ctx.decomposition()?;
    let state = ctx.state(&dec)?;
    let tol = ctx.tol(1e-11)?;
    let d_rel = ctx.p.d_rel.unwrap_or(1e-4);
    if !(d_rel > 0.0 && d_rel <= 0.01) {
        return Err(invalid(format!("d_rel must lie in (0, 0.01], got {d_rel}")));
    }
    let n_samples = ctx.p.n_samples.unwrap_or(200);
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let sys = Brachistochrone::from_arc(dec.clone());
    let (_, u0) = sys.propagate(&sys.full_coords(&state), 1.0, tol)?;
    let seed = child_seed(ctx.seed()?, "cli-fmeasure", 0);
    let fm = f_measure(&sys, &u0, &state, d_rel * state.norm(), n_samples, seed, tol)?;
    ctx.csv(
        "fmeasure.csv",
        &["sample", "log_f"],
        fm.log_f.iter().enumerate().map(|(i, v)| vec![i.to_string(), s(*v)]),
    )?;
    let (q1, q3) = fm.quartiles();
    let v = json!({
        "decomposition": dec_summary(&dec),
        "median_log_f": fm.median(),
        "q1": q1,
        "q3": q3,
        "control": fm.control,
        "retained": fm.retained,
        "dropped": fm.dropped,
        "d_norm": d_rel * state.norm(),
        "state_norm": state.norm(),
    });
    ctx.write_json("summary.json", &v)?;
    Ok(v)
}

fn euler_arnold(ctx: &mut Ctx) -> Result<Value, CliError> {
    let n = ctx.p.n.unwrap_or(4);
    let k = ctx.p.k.unwrap_or(n / 2);
    let c = ctx.p.c.clone().unwrap_or_else(|| {
        let m = k.min(n - k);
        (0..m).map(|i| 1.0 - 0.45 * i as f64 / (m.max(2) - 1) as f64).collect()
    });
    let pc = make_pseudo_cartan(n, k)?;
    let p_hat = block_diagonal_p(n, k, &c)?;
    let cs = centralizer_split(&pc, &p_hat, ctx.p.q.unwrap_or(2))?;
    let dec = build_type_ab(&cs);
    let state = ctx.state(&dec)?;
    let tol = ctx.tol(1e-12)?;
    let mut eps = ctx.p.epsilons.clone().unwrap_or_else(|| vec![1e-2, 5e-3]);
    if eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(invalid("epsilons must be non-negative"));
    }
    eps.sort_by(|a, b| b.total_cmp(a));
    let sys = Brachistochrone::new(dec.clone());
    let tl = TLSplit::from_state(&dec, &state)?;
    let reference = brachistochrone_as_splits(&sys, &tl, 1.0, tol, &[1.0])?;
    let mut rows = Vec::new();
    let mut devs = Vec::new();
    for &e in &eps {
        let f = euler_arnold_flow(&tl, &lax_from_split(&cs, e)?, 1.0, tol, &[1.0])?;
        let d = split_distance(&f[0], &reference[0]);
        let ratio = devs.last().map_or(f64::NAN, |prev: &f64| prev / d);
        rows.push(vec![s(e), s(d), s(ratio)]);
        devs.push(d);
    }
    ctx.csv("euler_arnold.csv", &["epsilon", "deviation", "ratio_to_previous"], rows)?;
    let v = json!({
        "n": n,
        "k": k,
        "c": c,
        "q": cs.q(),
        "epsilons": eps,
        "deviations": devs,
        "state_norm": state.norm(),
    });
    ctx.write_json("summary.json", &v)?;
    Ok(v)
}
