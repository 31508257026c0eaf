//! Divergence of nearby trajectories and unitaries, Lyapunov fits and the
//! F-measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvp::{cost_c, median};
use crate::dynamics::{Brachistochrone, PhaseState};
use crate::error::{Error, Result};
use crate::lie_algebra::{log_norm, UnitaryMatrix};
use crate::policy::NumericPolicy;
use crate::seeding::{child_rng, isotropic_vec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRun {
    pub x0: PhaseState,
    pub d_norm: f64,
    pub n_perturbations: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-11
}

impl DivergenceRun {
    /// Default perturbation size `1e-6·‖x0‖` and `m + 1` equally spaced samples on `[0, 1]`.
    pub fn new(x0: PhaseState, n_perturbations: usize, m: usize, seed: u64) -> Self {
        let d_norm = 1e-6 * x0.norm();
        Self {
            x0,
            d_norm,
            n_perturbations,
            t_grid: crate::dynamics::uniform_grid(1.0, m),
            seed,
            tol: default_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_perturbations == 0 {
            return Err(Error::invalid("n_perturbations must be at least 1"));
        }
        let norm = self.x0.norm();
        if !(self.d_norm > 0.0) || self.d_norm > 0.01 * norm {
            return Err(Error::invalid(format!(
                "d_norm must lie in (0, 0.01·‖x0‖] = (0, {:e}], got {:e}",
                0.01 * norm,
                self.d_norm
            )));
        }
        if self.t_grid.first() != Some(&0.0) {
            return Err(Error::invalid("t_grid must start at 0"));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("t_grid must be strictly increasing"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }

    fn t_end(&self) -> f64 {
        *self.t_grid.last().unwrap()
    }

    fn perturbation(&self, dim: usize, j: usize) -> Vec<f64> {
        isotropic_vec(&mut child_rng(self.seed, "perturbation", j as u64), dim, self.d_norm)
    }
}

/// Sample-averaged curve on the run's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCurve {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    /// `exp(⟨log E⟩)`; only filled for E(t).
    pub log_mean: Option<Vec<f64>>,
    pub retained: usize,
    pub dropped: usize,
    /// Per-time count of samples excluded because the logarithm hit the branch cut.
    pub branch_excluded: Vec<usize>,
}

impl DivergenceCurve {
    pub fn retention(&self) -> f64 {
        self.retained as f64 / (self.retained + self.dropped) as f64
    }
}

fn check_state(sys: &Brachistochrone, x: &PhaseState) -> Result<()> {
    if x.a.len() != sys.dec().dim_a() || x.lambda.len() != sys.dec().dim_b() {
        return Err(Error::invalid("state does not match the decomposition"));
    }
    Ok(())
}

/// `E(t) = ‖x'(t) − x(t)‖ / ‖d‖` averaged over isotropic perturbations `d`.
pub fn divergence_e(sys: &Brachistochrone, run: &DivergenceRun) -> Result<DivergenceCurve> {
    run.validate()?;
    check_state(sys, &run.x0)?;
    let x0 = sys.full_coords(&run.x0);
    let base = sys.integrate_dense(&x0, 0.0, run.t_end(), run.tol)?;
    let base_pts = base.eval_many(&run.t_grid)?;
    let per: Vec<Option<Vec<f64>>> = (0..run.n_perturbations)
        .into_par_iter()
        .map(|j| {
            let d = run.perturbation(x0.len(), j);
            let xp: Vec<f64> = x0.iter().zip(&d).map(|(a, b)| a + b).collect();
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sol = sys.integrate_dense(&xp, 0.0, run.t_end(), run.tol).ok()?;
            let mut e = Vec::with_capacity(run.t_grid.len());
            for (k, &t) in run.t_grid.iter().enumerate() {
                if k == 0 {
                    e.push(1.0);
                    continue;
                }
                let y = sol.eval(t).ok()?;
                let diff = y.iter().zip(&base_pts[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                e.push(diff / dn);
            }
            Some(e)
        })
        .collect();
    let m = run.t_grid.len();
    let mut mean = vec![0.0; m];
    let mut logm = vec![0.0; m];
    let mut retained = 0;
    for e in per.iter().flatten() {
        retained += 1;
        for k in 0..m {
            mean[k] += e[k];
            logm[k] += e[k].ln();
        }
    }
    if retained == 0 {
        return Err(Error::Integration {
            t_reached: 0.0,
            reason: "every perturbed trajectory failed".into(),
        });
    }
    for k in 0..m {
        mean[k] /= retained as f64;
        logm[k] = (logm[k] / retained as f64).exp();
    }
    mean[0] = 1.0;
    logm[0] = 1.0;
    Ok(DivergenceCurve {
        t: run.t_grid.clone(),
        mean,
        log_mean: Some(logm),
        retained,
        dropped: run.n_perturbations - retained,
        branch_excluded: vec![0; m],
    })
}

/// `O(t) = ⟨‖Log(U_b†(x0, t) U_b(x0 + d, t))‖_F⟩_d`.
pub fn unitary_divergence_o(sys: &Brachistochrone, run: &DivergenceRun) -> Result<DivergenceCurve> {
    run.validate()?;
    check_state(sys, &run.x0)?;
    let x0 = sys.full_coords(&run.x0);
    let base = sys.propagate_on_grid(&x0, &run.t_grid, run.tol)?;
    let branch_tol = NumericPolicy::current().branch_cut;
    let per: Vec<Option<Vec<Option<f64>>>> = (0..run.n_perturbations)
        .into_par_iter()
        .map(|j| {
            let d = run.perturbation(x0.len(), j);
            let xp: Vec<f64> = x0.iter().zip(&d).map(|(a, b)| a + b).collect();
            let traj = sys.propagate_on_grid(&xp, &run.t_grid, run.tol).ok()?;
            Some(
                traj.iter()
                    .zip(&base)
                    .enumerate()
                    .map(|(k, ((_, u), (_, ub)))| {
                        if k == 0 {
                            return Some(0.0);
                        }
                        log_norm(&(ub.matrix().adjoint() * u.matrix()), branch_tol)
                    })
                    .collect(),
            )
        })
        .collect();
    let m = run.t_grid.len();
    let mut sum = vec![0.0; m];
    let mut count = vec![0usize; m];
    let mut excluded = vec![0usize; m];
    let mut retained = 0;
    for o in per.iter().flatten() {
        retained += 1;
        for k in 0..m {
            match o[k] {
                Some(v) => {
                    sum[k] += v;
                    count[k] += 1;
                }
                None => excluded[k] += 1,
            }
        }
    }
    if retained == 0 {
        return Err(Error::Integration {
            t_reached: 0.0,
            reason: "every perturbed trajectory failed".into(),
        });
    }
    let mean = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    Ok(DivergenceCurve {
        t: run.t_grid.clone(),
        mean,
        log_mean: None,
        retained,
        dropped: run.n_perturbations - retained,
        branch_excluded: excluded,
    })
}

/// Least-squares line `y = c + s·t`: returns `(s, c, r²)`.
pub fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sxx += (a - mt) * (a - mt);
        sxy += (a - mt) * (b - my);
        syy += (b - my) * (b - my);
    }
    let s = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (s, my - s * mt, r2)
}

/// Slope and r² of `y = s·t` (fit through the origin).
pub fn origin_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let stt: f64 = t.iter().map(|v| v * v).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| a * b).sum();
    let s = sty / stt;
    let ss_res: f64 = t.iter().zip(y).map(|(a, b)| (b - s * a).powi(2)).sum();
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (s, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
    pub window: (usize, usize),
}

/// Fits `log E` on the longest contiguous window (at least half the grid) whose
/// r² reaches `r2_min`; among windows of that length the best r² wins. When no
/// window qualifies the best half-grid window is returned and `r2 < r2_min`.
pub fn fit_exponential(t: &[f64], e: &[f64], r2_min: f64) -> ExpFit {
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let m = t.len();
    let min_len = m.div_ceil(2).max(2);
    let mut fallback: Option<ExpFit> = None;
    for len in (min_len..=m).rev() {
        let mut best: Option<ExpFit> = None;
        for lo in 0..=m - len {
            let hi = lo + len;
            let (s, c, r2) = linear_fit(&t[lo..hi], &y[lo..hi]);
            let fit = ExpFit {
                exponent: s,
                intercept: c,
                r2,
                window: (lo, hi - 1),
            };
            if best.is_none_or(|b| r2 > b.r2) {
                best = Some(fit);
            }
        }
        let best = best.unwrap();
        if best.r2 >= r2_min {
            return best;
        }
        if len == min_len {
            fallback = Some(best);
        }
    }
    fallback.unwrap()
}

/// First grid time where `O(t)` exceeds its initial linear trend by the factor
/// `e − 1`; for `O ∝ (e^{λt} − 1)/λ` this happens at `t = 1/λ`.
pub fn linear_regime_end(t: &[f64], o: &[f64], initial_fraction: f64) -> Option<f64> {
    let (slope, _) = initial_slope(t, o, initial_fraction);
    let thresh = std::f64::consts::E - 1.0;
    let k = t.iter().zip(o).skip(1).position(|(&tt, &v)| v / (slope * tt) >= thresh)?;
    // interpolate the crossing between neighbouring samples
    let i = k + 1;
    let r = |j: usize| o[j] / (slope * t[j]);
    if i >= 2 {
        let (r0, r1) = (r(i - 1), r(i));
        let w = (thresh - r0) / (r1 - r0);
        Some(t[i - 1] + w * (t[i] - t[i - 1]))
    } else {
        Some(t[i])
    }
}

/// Origin fit of `O(t)` over the first `fraction` of the grid (at least two points).
pub fn initial_slope(t: &[f64], o: &[f64], fraction: f64) -> (f64, f64) {
    let k = ((t.len() as f64 * fraction).round() as usize).max(2).min(t.len());
    origin_fit(&t[1..k.max(2)], &o[1..k.max(2)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub n_perturbations: usize,
    /// Perturbation size relative to `‖x0‖`.
    pub d_rel: f64,
    pub grid_intervals: usize,
    pub t_end: f64,
    pub tol: f64,
    pub r2_min: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 8,
            d_rel: 1e-6,
            grid_intervals: 50,
            t_end: 1.0,
            tol: 1e-11,
            r2_min: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub x0: PhaseState,
    pub exponent: f64,
    pub fit_window: (f64, f64),
    pub fit_r2: f64,
    pub retained: usize,
    pub dropped: usize,
}

impl LyapunovSample {
    pub fn acceptable(&self, r2_min: f64) -> bool {
        self.fit_r2 >= r2_min
    }
}

pub fn lyapunov_exponent(sys: &Brachistochrone, x0: &PhaseState, seed: u64) -> Result<LyapunovSample> {
    lyapunov_exponent_with(sys, x0, seed, &LyapunovConfig::default())
}

pub fn lyapunov_exponent_with(sys: &Brachistochrone, x0: &PhaseState, seed: u64, cfg: &LyapunovConfig) -> Result<LyapunovSample> {
    let run = DivergenceRun {
        x0: x0.clone(),
        d_norm: cfg.d_rel * x0.norm(),
        n_perturbations: cfg.n_perturbations,
        t_grid: crate::dynamics::uniform_grid(cfg.t_end, cfg.grid_intervals),
        seed,
        tol: cfg.tol,
    };
    let curve = divergence_e(sys, &run)?;
    let fit = fit_exponential(&curve.t, &curve.mean, cfg.r2_min);
    Ok(LyapunovSample {
        x0: x0.clone(),
        exponent: fit.exponent,
        fit_window: (curve.t[fit.window.0], curve.t[fit.window.1]),
        fit_r2: fit.r2,
        retained: curve.retained,
        dropped: curve.dropped,
    })
}

/// Unit-norm isotropic state from a named child stream.
pub fn random_unit_state(sys: &Brachistochrone, seed: u64, stream: &str, index: u64) -> PhaseState {
    let x = isotropic_vec(&mut child_rng(seed, stream, index), sys.dim(), 1.0);
    let (a, lambda) = sys.dec().split(&x);
    PhaseState::new(a, lambda)
}

/// Exponents for `n_samples` unit-norm isotropic initial states.
pub fn lyapunov_distribution(sys: &Brachistochrone, n_samples: usize, seed: u64, cfg: &LyapunovConfig) -> Result<Vec<LyapunovSample>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let x0 = random_unit_state(sys, seed, "lyapunov-x0", i as u64);
            lyapunov_exponent_with(sys, &x0, crate::seeding::child_seed(seed, "lyapunov-d", i as u64), cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMeasure {
    /// `log F` per retained sample, in sample order.
    pub log_f: Vec<f64>,
    /// `F` at `d = 0`.
    pub control: f64,
    pub retained: usize,
    pub dropped: usize,
}

impl FMeasure {
    pub fn median(&self) -> f64 {
        median(&self.log_f)
    }

    pub fn quartiles(&self) -> (f64, f64) {
        quartiles(&self.log_f)
    }
}

pub fn quartiles(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    };
    (q(0.25), q(0.75))
}

/// `log F(U0, d) = log ‖Log(U0† U_b(x0 + d, 1))‖_F` over isotropic `d` of norm `d_norm`.
pub fn f_measure(
    sys: &Brachistochrone,
    u0: &UnitaryMatrix,
    x0: &PhaseState,
    d_norm: f64,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<FMeasure> {
    check_state(sys, x0)?;
    let control = cost_c(sys, x0, u0, tol)?;
    if control >= 1e-6 {
        return Err(Error::invalid(format!("x0 does not generate U0: residual cost {control:e}")));
    }
    if !(d_norm > 0.0) {
        return Err(Error::invalid("d_norm must be positive"));
    }
    let x = sys.full_coords(x0);
    let branch_tol = NumericPolicy::current().branch_cut;
    let per: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let d = isotropic_vec(&mut child_rng(seed, "f-measure", j as u64), x.len(), d_norm);
            let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            let (_, u) = sys.propagate(&xp, 1.0, tol).ok()?;
            log_norm(&(u0.matrix().adjoint() * u.matrix()), branch_tol).map(f64::ln)
        })
        .collect();
    let log_f: Vec<f64> = per.iter().flatten().copied().collect();
    Ok(FMeasure {
        retained: log_f.len(),
        dropped: n_samples - log_f.len(),
        log_f,
        control,
    })
}

/// Largest deviation between the trajectory of `κx` at `t` and `κ` times the
/// trajectory of `x` at `κt`, over `times`.
pub fn scaling_deviation(sys: &Brachistochrone, x0: &PhaseState, kappa: f64, times: &[f64], tol: f64) -> Result<f64> {
    check_state(sys, x0)?;
    let x = sys.full_coords(x0);
    let xk: Vec<f64> = x.iter().map(|v| kappa * v).collect();
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let scaled = sys.integrate_dense(&xk, 0.0, t_end, tol)?;
    let plain = sys.integrate_dense(&x, 0.0, kappa * t_end, tol)?;
    let mut worst: f64 = 0.0;
    for &t in times {
        let a = scaled.eval(t)?;
        let b = plain.eval(kappa * t)?;
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - kappa * q).abs());
        }
    }
    Ok(worst)
}
