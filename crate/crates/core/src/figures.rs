//! End-to-end pipelines for the four stability figures. Each one writes
//! plot-ready CSVs and a JSON sidecar (config, seed, fixture hashes, retention,
//! summary statistics) into an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bvp::{median, solve_multistart, BvpProblem};
use crate::dynamics::{Brachistochrone, PhaseState};
use crate::error::{Error, Result};
use crate::fixtures::{by_name, generic_solution, generic_target};
use crate::lie_algebra::UnitaryMatrix;
use crate::seeding::child_seed;
use crate::stability::{
    divergence_e, f_measure, fit_exponential, initial_slope, linear_fit, linear_regime_end, lyapunov_distribution, quartiles,
    random_unit_state, unitary_divergence_o, DivergenceRun, LyapunovConfig,
};

/// Fixtures compared in the divergence figure.
pub const FIG1_FIXTURES: [&str; 3] = ["su4_type1", "su4_type2", "su4_chaotic"];
/// Integrable vs chaotic pair used by the F-measure and BVP figures.
pub const PAIR_FIXTURES: [&str; 2] = ["su4_type1", "su4_chaotic"];
/// Norm of the state generating the near-identity BVP target.
pub const NEAR_IDENTITY_NORM: f64 = 0.5;
/// Success threshold for terminal BVP costs.
pub const SUCCESS_COST: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::invalid(format!("unknown scale '{s}'; expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureConfig {
    pub figure: u8,
    pub scale: Scale,
    pub seed: u64,
    /// Perturbations per divergence curve (figs 1, 2).
    pub n_perturbations: usize,
    pub grid_intervals: usize,
    /// Exponent samples (fig 2) or F-measure samples per case (fig 3).
    pub n_samples: usize,
    pub n_starts: usize,
    /// Objective evaluations per start (fig 4).
    pub budget: usize,
    pub tol: f64,
}

impl FigureConfig {
    pub fn new(figure: u8, scale: Scale, seed: u64) -> Result<Self> {
        let paper = scale == Scale::Paper;
        let mut cfg = Self {
            figure,
            scale,
            seed,
            n_perturbations: 0,
            grid_intervals: 0,
            n_samples: 0,
            n_starts: 0,
            budget: 0,
            tol: 1e-11,
        };
        match figure {
            1 => {
                cfg.n_perturbations = if paper { 2000 } else { 200 };
                cfg.grid_intervals = 100;
            }
            2 => {
                let d = LyapunovConfig::default();
                cfg.n_perturbations = d.n_perturbations;
                cfg.grid_intervals = d.grid_intervals;
                cfg.n_samples = if paper { 25_000 } else { 2500 };
            }
            3 => cfg.n_samples = if paper { 2000 } else { 200 },
            4 => {
                cfg.n_starts = if paper { 1000 } else { 100 };
                cfg.budget = 20_000;
                cfg.tol = 1e-10;
            }
            _ => return Err(Error::invalid(format!("figure must be 1, 2, 3 or 4, got {figure}"))),
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.figure) {
            return Err(Error::invalid(format!("figure must be 1, 2, 3 or 4, got {}", self.figure)));
        }
        let need = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::invalid(format!("{what} must be at least 1 for figure {}", self.figure)))
            } else {
                Ok(())
            }
        };
        match self.figure {
            1 => {
                need(self.n_perturbations, "n_perturbations")?;
                need(self.grid_intervals, "grid_intervals")?;
            }
            2 => {
                need(self.n_perturbations, "n_perturbations")?;
                need(self.grid_intervals, "grid_intervals")?;
                need(self.n_samples, "n_samples")?;
            }
            3 => need(self.n_samples, "n_samples")?,
            _ => need(self.n_starts, "n_starts")?,
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub retained: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureReport {
    pub figure: u8,
    pub files: Vec<PathBuf>,
    pub stats: BTreeMap<String, f64>,
    pub retention: BTreeMap<String, Retention>,
}

impl FigureReport {
    pub fn stat(&self, key: &str) -> Option<f64> {
        self.stats.get(key).copied()
    }

    /// Worst retained fraction over all sample sets.
    pub fn min_retention(&self) -> f64 {
        self.retention
            .values()
            .map(|r| r.retained as f64 / (r.retained + r.dropped).max(1) as f64)
            .fold(1.0, f64::min)
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    figure: u8,
    config: &'a FigureConfig,
    fixtures: BTreeMap<&'a str, String>,
    columns: BTreeMap<&'a str, &'a [&'a str]>,
    retention: &'a BTreeMap<String, Retention>,
    stats: &'a BTreeMap<String, f64>,
}

struct Collector<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
    stats: BTreeMap<String, f64>,
    retention: BTreeMap<String, Retention>,
    columns: BTreeMap<&'static str, &'static [&'static str]>,
}

impl<'a> Collector<'a> {
    fn csv(&mut self, name: &'static str, header: &'static [&'static str], rows: Vec<Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| Error::invalid(format!("{}: {e}", name));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(&r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("{name}: {e}")))?;
        self.columns.insert(name, header);
        self.files.push(path);
        Ok(())
    }

    fn stat(&mut self, key: String, v: f64) {
        // JSON has no NaN; missing values are simply absent
        if v.is_finite() {
            self.stats.insert(key, v);
        }
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Target `U_b(x*, 1)` with `x*` a seeded isotropic state of norm
/// `NEAR_IDENTITY_NORM` on the fixture itself.
pub fn near_identity_target(sys: &Brachistochrone, seed: u64) -> Result<(PhaseState, UnitaryMatrix)> {
    let x = random_unit_state(sys, seed, "near-identity", 0).scaled(NEAR_IDENTITY_NORM);
    let (_, u) = sys.propagate(&sys.full_coords(&x), 1.0, 1e-12)?;
    Ok((x, u))
}

/// Runs one figure pipeline and writes its outputs into `out_dir`.
pub fn run_figure(cfg: &FigureConfig, out_dir: &Path) -> Result<FigureReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::invalid(format!("{}: {e}", out_dir.display())))?;
    let mut c = Collector {
        dir: out_dir,
        files: Vec::new(),
        stats: BTreeMap::new(),
        retention: BTreeMap::new(),
        columns: BTreeMap::new(),
    };
    let names: &[&str] = match cfg.figure {
        1 => &FIG1_FIXTURES,
        2 => &["su4_chaotic"],
        _ => &PAIR_FIXTURES,
    };
    match cfg.figure {
        1 => figure1(cfg, &mut c)?,
        2 => figure2(cfg, &mut c)?,
        3 => figure3(cfg, &mut c)?,
        _ => figure4(cfg, &mut c)?,
    }
    let mut fixtures = BTreeMap::new();
    for n in names {
        fixtures.insert(*n, by_name(n)?.content_hash());
    }
    let sidecar = Sidecar {
        figure: cfg.figure,
        config: cfg,
        fixtures,
        columns: c.columns.clone(),
        retention: &c.retention,
        stats: &c.stats,
    };
    let path = out_dir.join(format!("fig{}.json", cfg.figure));
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    c.files.push(path);
    Ok(FigureReport {
        figure: cfg.figure,
        files: c.files,
        stats: c.stats,
        retention: c.retention,
    })
}

const FIG1_COLUMNS: &[&str] = &["t", "E_mean", "E_logmean", "O_mean", "O_branch_excluded"];

fn figure1(cfg: &FigureConfig, c: &mut Collector) -> Result<()> {
    for (i, name) in FIG1_FIXTURES.iter().enumerate() {
        let sys = Brachistochrone::from_arc(by_name(name)?);
        let x0 = generic_solution(name)?;
        let mut run = DivergenceRun::new(x0, cfg.n_perturbations, cfg.grid_intervals, child_seed(cfg.seed, "fig1", i as u64));
        run.tol = cfg.tol;
        let e = divergence_e(&sys, &run)?;
        let o = unitary_divergence_o(&sys, &run)?;
        let log_mean = e.log_mean.clone().unwrap_or_default();
        let rows = (0..e.t.len())
            .map(|k| vec![f(e.t[k]), f(e.mean[k]), f(log_mean[k]), f(o.mean[k]), o.branch_excluded[k].to_string()])
            .collect();
        let file: &'static str = match *name {
            "su4_type1" => "fig1_su4_type1.csv",
            "su4_type2" => "fig1_su4_type2.csv",
            _ => "fig1_su4_chaotic.csv",
        };
        c.csv(file, FIG1_COLUMNS, rows)?;

        let fit = fit_exponential(&e.t, &e.mean, 0.98);
        c.stat(format!("{name}.exponent"), fit.exponent);
        c.stat(format!("{name}.fit_r2"), fit.r2);
        c.stat(format!("{name}.fit_t_lo"), e.t[fit.window.0]);
        c.stat(format!("{name}.fit_t_hi"), e.t[fit.window.1]);
        // polynomial growth shows up as a bounded slope of log E against log t
        let tail: Vec<usize> = (1..e.t.len()).filter(|&k| e.t[k] >= 0.1).collect();
        let lt: Vec<f64> = tail.iter().map(|&k| e.t[k].ln()).collect();
        let le: Vec<f64> = tail.iter().map(|&k| e.mean[k].ln()).collect();
        if lt.len() >= 2 {
            let (s, _, r2) = linear_fit(&lt, &le);
            c.stat(format!("{name}.loglog_slope"), s);
            c.stat(format!("{name}.loglog_r2"), r2);
        }
        let (slope, r2) = initial_slope(&o.t, &o.mean, 0.1);
        c.stat(format!("{name}.o_initial_slope"), slope);
        c.stat(format!("{name}.o_initial_r2"), r2);
        if let Some(tc) = linear_regime_end(&o.t, &o.mean, 0.1) {
            c.stat(format!("{name}.o_changepoint"), tc);
        }
        c.stat(format!("{name}.x0_norm"), run.x0.norm());
        c.retention.insert(format!("{name}.E"), Retention { retained: e.retained, dropped: e.dropped });
        c.retention.insert(format!("{name}.O"), Retention { retained: o.retained, dropped: o.dropped });
    }
    Ok(())
}

const FIG2_COLUMNS: &[&str] = &["sample", "exponent", "fit_t_lo", "fit_t_hi", "fit_r2", "retained", "dropped"];

fn figure2(cfg: &FigureConfig, c: &mut Collector) -> Result<()> {
    let sys = Brachistochrone::from_arc(by_name("su4_chaotic")?);
    let lc = LyapunovConfig {
        n_perturbations: cfg.n_perturbations,
        grid_intervals: cfg.grid_intervals,
        tol: cfg.tol,
        ..LyapunovConfig::default()
    };
    let samples = lyapunov_distribution(&sys, cfg.n_samples, child_seed(cfg.seed, "fig2", 0), &lc)?;
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                i.to_string(),
                f(s.exponent),
                f(s.fit_window.0),
                f(s.fit_window.1),
                f(s.fit_r2),
                s.retained.to_string(),
                s.dropped.to_string(),
            ]
        })
        .collect();
    c.csv("fig2_exponents.csv", FIG2_COLUMNS, rows)?;
    let ex: Vec<f64> = samples.iter().map(|s| s.exponent).collect();
    let (q1, q3) = quartiles(&ex);
    c.stat("exponent.mean".into(), ex.iter().sum::<f64>() / ex.len() as f64);
    c.stat("exponent.median".into(), median(&ex));
    c.stat("exponent.q25".into(), q1);
    c.stat("exponent.q75".into(), q3);
    let ok = samples.iter().filter(|s| s.acceptable(lc.r2_min)).count();
    c.stat("fit_acceptable_fraction".into(), ok as f64 / samples.len() as f64);
    let retained = samples.iter().map(|s| s.retained).sum();
    let dropped = samples.iter().map(|s| s.dropped).sum();
    c.retention.insert("perturbations".into(), Retention { retained, dropped });
    Ok(())
}

const FIG3_COLUMNS: &[&str] = &["fixture", "regime", "sample", "log_f"];

fn figure3(cfg: &FigureConfig, c: &mut Collector) -> Result<()> {
    let mut rows = Vec::new();
    for (i, name) in PAIR_FIXTURES.iter().enumerate() {
        let sys = Brachistochrone::from_arc(by_name(name)?);
        let unit = random_unit_state(&sys, cfg.seed, "fig3-x0", i as u64);
        let (_, u_unit) = sys.propagate(&sys.full_coords(&unit), 1.0, 1e-12)?;
        let cases = [("unit", unit, u_unit), ("generic", generic_solution(name)?, generic_target())];
        for (j, (regime, x0, u0)) in cases.into_iter().enumerate() {
            let seed = child_seed(cfg.seed, "fig3", (2 * i + j) as u64);
            let fm = f_measure(&sys, &u0, &x0, 1e-4 * x0.norm(), cfg.n_samples, seed, cfg.tol)?;
            for (k, v) in fm.log_f.iter().enumerate() {
                rows.push(vec![name.to_string(), regime.to_string(), k.to_string(), f(*v)]);
            }
            let (q1, q3) = fm.quartiles();
            let key = format!("{name}.{regime}");
            c.stat(format!("{key}.median"), fm.median());
            c.stat(format!("{key}.q25"), q1);
            c.stat(format!("{key}.q75"), q3);
            c.stat(format!("{key}.control"), fm.control);
            c.stat(format!("{key}.x0_norm"), x0.norm());
            c.retention.insert(key, Retention { retained: fm.retained, dropped: fm.dropped });
        }
    }
    c.csv("fig3_fmeasure.csv", FIG3_COLUMNS, rows)
}

const FIG4_COLUMNS: &[&str] = &["fixture", "start", "terminal_cost", "log10_cost", "evaluations"];

fn figure4(cfg: &FigureConfig, c: &mut Collector) -> Result<()> {
    let mut rows = Vec::new();
    for (i, name) in PAIR_FIXTURES.iter().enumerate() {
        let dec = by_name(name)?;
        let sys = Brachistochrone::from_arc(dec.clone());
        let (x_star, target) = near_identity_target(&sys, child_seed(cfg.seed, "fig4-target", i as u64))?;
        let mut prob = BvpProblem::new(dec, target, child_seed(cfg.seed, "fig4-starts", i as u64));
        prob.n_starts = cfg.n_starts;
        prob.optimizer_budget = cfg.budget;
        prob.integration_tol = cfg.tol;
        let r = solve_multistart(&prob)?;
        for (k, (cost, ev)) in r.final_costs.iter().zip(&r.evaluations_used).enumerate() {
            rows.push(vec![name.to_string(), k.to_string(), f(*cost), f(cost.log10()), ev.to_string()]);
        }
        c.stat(format!("{name}.success_fraction"), r.success_fraction(SUCCESS_COST));
        c.stat(format!("{name}.median_cost"), r.median_cost());
        c.stat(format!("{name}.best_cost"), r.best_cost);
        c.stat(format!("{name}.target_state_norm"), x_star.norm());
        c.retention.insert(
            name.to_string(),
            Retention {
                retained: r.final_costs.len(),
                dropped: 0,
            },
        );
    }
    c.csv("fig4_costs.csv", FIG4_COLUMNS, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(figure: u8) -> FigureConfig {
        let mut cfg = FigureConfig::new(figure, Scale::Desk, 9).unwrap();
        cfg.n_perturbations = cfg.n_perturbations.min(4);
        cfg.grid_intervals = cfg.grid_intervals.min(20);
        cfg.n_samples = cfg.n_samples.min(6);
        cfg.n_starts = cfg.n_starts.min(2);
        cfg.budget = cfg.budget.min(40);
        cfg
    }

    #[test]
    fn scales_and_validation() {
        assert_eq!(FigureConfig::new(2, Scale::Desk, 0).unwrap().n_samples, 2500);
        assert_eq!(FigureConfig::new(2, Scale::Paper, 0).unwrap().n_samples, 25_000);
        assert_eq!(FigureConfig::new(1, Scale::Desk, 0).unwrap().n_perturbations, 200);
        assert!(FigureConfig::new(5, Scale::Desk, 0).is_err());
        assert_eq!("paper".parse::<Scale>().unwrap(), Scale::Paper);
        assert!("huge".parse::<Scale>().is_err());
        let mut cfg = small(3);
        cfg.n_samples = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_pipeline_writes_csv_and_sidecar() {
        for fig in 1..=4u8 {
            let dir = std::env::temp_dir().join(format!("brachx-fig-test-{}-{fig}", std::process::id()));
            let _ = fs::remove_dir_all(&dir);
            let rep = run_figure(&small(fig), &dir).unwrap();
            assert!(rep.files.iter().all(|p| p.exists()), "{fig}");
            let json: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(dir.join(format!("fig{fig}.json"))).unwrap()).unwrap();
            assert_eq!(json["figure"], fig);
            assert!(json["fixtures"].as_object().unwrap().values().all(|h| h.as_str().unwrap().len() == 64));
            assert!(rep.min_retention() > 0.0);
            let again = run_figure(&small(fig), &dir).unwrap();
            assert_eq!(rep.stats, again.stats);
            fs::remove_dir_all(&dir).unwrap();
        }
    }

    #[test]
    fn near_identity_target_has_a_small_root() {
        let sys = Brachistochrone::from_arc(by_name("su4_chaotic").unwrap());
        let (x, u) = near_identity_target(&sys, 4).unwrap();
        assert!((x.norm() - NEAR_IDENTITY_NORM).abs() < 1e-12);
        assert!(crate::bvp::cost_c(&sys, &x, &u, 1e-11).unwrap() < 1e-8);
    }
}
