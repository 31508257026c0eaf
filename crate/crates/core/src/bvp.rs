//! Boundary-value problem `U(1) = U_d`: residual cost, multi-start local search
//! and the closed-form Type I variant.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::ABDecomposition;
use crate::dynamics::{Brachistochrone, PhaseState};
use crate::error::{Error, Result};
use crate::integrable::type1_unitary_unchecked;
use crate::lie_algebra::{log_norm, logm_principal, traceless_log, UnitaryMatrix};
use crate::optimize::{minimize, LocalMethod, LocalOptions};
use crate::policy::NumericPolicy;
use crate::seeding::{child_rng, isotropic_vec};

/// Cost reported when the principal logarithm is ambiguous: `2π√n` bounds
/// `‖Log U‖_F` on SU(n).
pub fn branch_sentinel(n: usize) -> f64 {
    2.0 * std::f64::consts::PI * (n as f64).sqrt()
}

/// `‖Log(U_d† V)‖_F`, or the sentinel on the branch cut.
pub fn residual_cost(target: &UnitaryMatrix, v: &UnitaryMatrix) -> f64 {
    let m = target.matrix().adjoint() * v.matrix();
    log_norm(&m, NumericPolicy::current().branch_cut).unwrap_or_else(|| branch_sentinel(target.dim()))
}

/// `C(x) = ‖Log(U_d† U_b(x, 1))‖_F`.
pub fn cost_c(sys: &Brachistochrone, x: &PhaseState, target: &UnitaryMatrix, tol: f64) -> Result<f64> {
    if x.a.len() != sys.dec().dim_a() || x.lambda.len() != sys.dec().dim_b() {
        return Err(Error::invalid("state does not match the problem decomposition"));
    }
    if target.dim() != sys.dec().n() {
        return Err(Error::invalid("target dimension does not match the decomposition"));
    }
    let (_, u) = sys.propagate(&sys.full_coords(x), 1.0, tol)?;
    Ok(residual_cost(target, &u))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BvpProblem {
    pub dec: Arc<ABDecomposition>,
    pub target: UnitaryMatrix,
    pub integration_tol: f64,
    pub optimizer_budget: usize,
    pub n_starts: usize,
    pub seed: u64,
    #[serde(default = "default_start_norm")]
    pub start_norm: f64,
    #[serde(default)]
    pub method: LocalMethod,
}

fn default_start_norm() -> f64 {
    1.0
}

impl BvpProblem {
    pub fn new(dec: Arc<ABDecomposition>, target: UnitaryMatrix, seed: u64) -> Self {
        Self {
            dec,
            target,
            integration_tol: 1e-10,
            optimizer_budget: 3000,
            n_starts: 16,
            seed,
            start_norm: 1.0,
            method: LocalMethod::NelderMead,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.dim() != self.dec.n() {
            return Err(Error::invalid("target dimension does not match the decomposition"));
        }
        if self.n_starts == 0 {
            return Err(Error::invalid("n_starts must be at least 1"));
        }
        if !(self.integration_tol > 0.0) {
            return Err(Error::invalid("integration_tol must be positive"));
        }
        if !(self.start_norm > 0.0 && self.start_norm.is_finite()) {
            return Err(Error::invalid("start_norm must be positive"));
        }
        Ok(())
    }

    pub fn starts(&self) -> Vec<Vec<f64>> {
        (0..self.n_starts)
            .map(|i| isotropic_vec(&mut child_rng(self.seed, "bvp-start", i as u64), self.dec.dim(), self.start_norm))
            .collect()
    }

    fn local_options(&self) -> LocalOptions {
        LocalOptions {
            method: self.method,
            budget: self.optimizer_budget,
            f_target: 1e-10,
            step: 0.25 * self.start_norm,
            ..LocalOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpResult {
    pub best_x: PhaseState,
    pub best_cost: f64,
    pub final_costs: Vec<f64>,
    pub evaluations_used: Vec<usize>,
    pub final_states: Vec<PhaseState>,
}

impl BvpResult {
    fn collect(dec: &ABDecomposition, runs: Vec<(Vec<f64>, f64, usize)>) -> Self {
        let mut best = 0;
        for (i, r) in runs.iter().enumerate() {
            if r.1 < runs[best].1 {
                best = i;
            }
        }
        let state = |x: &[f64]| {
            let (a, lambda) = dec.split(x);
            PhaseState::new(a, lambda)
        };
        Self {
            best_x: state(&runs[best].0),
            best_cost: runs[best].1,
            final_costs: runs.iter().map(|r| r.1).collect(),
            evaluations_used: runs.iter().map(|r| r.2).collect(),
            final_states: runs.iter().map(|r| state(&r.0)).collect(),
        }
    }

    pub fn success_fraction(&self, threshold: f64) -> f64 {
        self.final_costs.iter().filter(|&&c| c < threshold).count() as f64 / self.final_costs.len() as f64
    }

    pub fn median_cost(&self) -> f64 {
        median(&self.final_costs)
    }

    /// One row per start: `start,terminal_cost,log10_cost,evaluations,protocol_cost`.
    pub fn write_costs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["start", "terminal_cost", "log10_cost", "evaluations", "protocol_cost"])
            .map_err(csv_err)?;
        for (i, ((c, e), s)) in self.final_costs.iter().zip(&self.evaluations_used).zip(&self.final_states).enumerate() {
            wr.write_record([
                i.to_string(),
                crate::dynamics::fmt(*c),
                crate::dynamics::fmt(c.max(f64::MIN_POSITIVE).log10()),
                e.to_string(),
                crate::dynamics::fmt(crate::dynamics::cost(s)),
            ])
            .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn run_starts<F>(prob: &BvpProblem, objective: F) -> BvpResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut opts = prob.local_options();
    // C is a norm, so its minima are cones; the gradient method works on C² instead
    let squared = opts.method == LocalMethod::FiniteDifferenceBfgs;
    if squared {
        opts.f_target *= opts.f_target;
        opts.ftol *= opts.ftol;
    }
    let runs: Vec<(Vec<f64>, f64, usize)> = prob
        .starts()
        .into_par_iter()
        .map(|x0| {
            if squared {
                let r = minimize(|x: &[f64]| objective(x).powi(2), &x0, &opts);
                (r.x, r.f.sqrt(), r.evaluations)
            } else {
                let r = minimize(&objective, &x0, &opts);
                (r.x, r.f, r.evaluations)
            }
        })
        .collect();
    BvpResult::collect(&prob.dec, runs)
}

/// Independent local searches from `n_starts` isotropic starting vectors of
/// norm `start_norm`; each start uses its own child RNG, so the result does not
/// depend on the worker count.
pub fn solve_multistart(prob: &BvpProblem) -> Result<BvpResult> {
    prob.validate()?;
    let sys = Brachistochrone::from_arc(prob.dec.clone());
    let sentinel = branch_sentinel(prob.dec.n());
    let tol = prob.integration_tol;
    Ok(run_starts(prob, |x| match sys.propagate(x, 1.0, tol) {
        Ok((_, u)) => residual_cost(&prob.target, &u),
        Err(_) => sentinel,
    }))
}

/// Minimizes `‖Log(U_d† exp(iD₀) exp(−i(H₀+D₀)))‖_F` over `(a, λ)` on a Type I
/// decomposition, with the same multi-start machinery but no ODE integration.
pub fn type1_algebraic_solve(target: &UnitaryMatrix, dec: &Arc<ABDecomposition>, seed: u64, n_starts: usize) -> Result<BvpResult> {
    let mut prob = BvpProblem::new(dec.clone(), target.clone(), seed);
    prob.n_starts = n_starts;
    type1_algebraic_solve_with(&prob)
}

pub fn type1_algebraic_solve_with(prob: &BvpProblem) -> Result<BvpResult> {
    prob.validate()?;
    let dec = &prob.dec;
    if !dec.is_type1() {
        return Err(Error::invalid("type1_algebraic_solve needs a Type I decomposition"));
    }
    if dec.dim_b() == 0 {
        // H₀ = i Log U_d is the unconstrained geodesic
        let h = traceless_log(&prob.target)?;
        let a = dec.coordinates(h.matrix());
        let u = type1_unitary_unchecked(dec, &a, &[], 1.0);
        let c = residual_cost(&prob.target, &u);
        let runs = (0..prob.n_starts).map(|_| (a.clone(), c, 1)).collect();
        return Ok(BvpResult::collect(dec, runs));
    }
    let na = dec.dim_a();
    Ok(run_starts(prob, |x| {
        let (a, l) = x.split_at(na);
        let u = type1_unitary_unchecked(dec, a, l, 1.0);
        residual_cost(&prob.target, &u)
    }))
}

/// Canonical coordinates of the traceless part of `Log(U_d† U_b(x, 1))`, or
/// `None` on the branch cut or when integration fails.
pub fn residual_vector(sys: &Brachistochrone, x: &[f64], target: &UnitaryMatrix, tol: f64) -> Option<Vec<f64>> {
    let (_, u) = sys.propagate(x, 1.0, tol).ok()?;
    let m = UnitaryMatrix::nearest(&(target.matrix().adjoint() * u.matrix()));
    let log = logm_principal(&m).ok()?;
    if log.phase.abs() > 1e-8 {
        return None;
    }
    Some(sys.dec().basis().coordinates(log.generator.matrix()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Damped Newton (Levenberg–Marquardt) shooting on the residual vector with a
/// forward-difference Jacobian. Returns the best point reached.
pub fn newton_shoot(sys: &Brachistochrone, x0: &[f64], target: &UnitaryMatrix, tol: f64, max_iter: usize) -> Result<ShootingResult> {
    let dim = sys.dim();
    if x0.len() != dim {
        return Err(Error::invalid("start vector does not match the decomposition"));
    }
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = x0.to_vec();
    let Some(mut r) = residual_vector(sys, &x, target, tol) else {
        return Ok(ShootingResult {
            x,
            cost: branch_sentinel(sys.dec().n()),
            iterations: 0,
        });
    };
    let mut mu = 1e-3;
    let mut it = 0;
    while it < max_iter && norm(&r) > 1e-11 {
        it += 1;
        let h = 1e-7 * norm(&x).max(1.0);
        let m = r.len();
        let mut jac = nalgebra::DMatrix::zeros(m, dim);
        for c in 0..dim {
            let mut xp = x.clone();
            xp[c] += h;
            let Some(rp) = residual_vector(sys, &xp, target, tol) else {
                return Ok(ShootingResult { cost: norm(&r), x, iterations: it });
            };
            for k in 0..m {
                jac[(k, c)] = (rp[k] - r[k]) / h;
            }
        }
        let rv = nalgebra::DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..dim {
                a[(d, d)] += mu * (1.0 + jtj[(d, d)]);
            }
            let Some(mut step) = a.lu().solve(&(-&jtr)) else { break };
            // trust region: keep the iterate near the start's scale
            let cap = 0.5 * norm(&x).max(1.0);
            if step.norm() > cap {
                step *= cap / step.norm();
            }
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(p, q)| p + q).collect();
            if let Some(rn) = residual_vector(sys, &xn, target, tol) {
                if norm(&rn) < norm(&r) {
                    x = xn;
                    r = rn;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(ShootingResult {
        cost: norm(&r),
        x,
        iterations: it,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{make_generic_ab, make_pseudo_cartan};
    use crate::lie_algebra::{expm, gell_mann_basis};

    fn type1(n: usize, k: usize) -> Arc<ABDecomposition> {
        Arc::new(make_pseudo_cartan(n, k).unwrap().ab())
    }

    fn state(dec: &ABDecomposition, seed: u64, norm: f64) -> PhaseState {
        let x = isotropic_vec(&mut child_rng(seed, "t", 0), dec.dim(), norm);
        let (a, l) = dec.split(&x);
        PhaseState::new(a, l)
    }

    #[test]
    fn cost_trivial_cases() {
        let dec = type1(3, 2);
        let sys = Brachistochrone::from_arc(dec.clone());
        let zero = PhaseState::new(vec![0.0; dec.dim_a()], vec![0.0; dec.dim_b()]);
        assert_eq!(cost_c(&sys, &zero, &UnitaryMatrix::identity(3), 1e-10).unwrap(), 0.0);
        let x = state(&dec, 3, 0.8);
        let (_, u) = sys.propagate(&sys.full_coords(&x), 1.0, 1e-11).unwrap();
        assert!(cost_c(&sys, &x, &u, 1e-10).unwrap() < 1e-9);
        // λ = 0: autonomous, target exp(−iH₀)
        let h0 = PhaseState::new(x.a.clone(), vec![0.0; dec.dim_b()]);
        let target = expm(&dec.assemble_a(&x.a), 1.0);
        assert!(cost_c(&sys, &h0, &target, 1e-10).unwrap() < 1e-8);
        let bad = PhaseState::new(vec![0.0; 2], vec![]);
        assert!(cost_c(&sys, &bad, &target, 1e-10).is_err());
    }

    #[test]
    fn residual_is_branch_safe() {
        // exp(−iπ·diag(1,−1)) = −𝕀 sits on the cut
        let h = crate::lie_algebra::HermitianMatrix::new(nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            crate::lie_algebra::C64::new(std::f64::consts::PI, 0.0),
            crate::lie_algebra::C64::new(-std::f64::consts::PI, 0.0),
        ])))
        .unwrap();
        let u = expm(&h, 1.0);
        assert_eq!(residual_cost(&UnitaryMatrix::identity(2), &u), branch_sentinel(2));
    }

    #[test]
    fn cost_round_trip_and_tolerance_stability() {
        let dec = Arc::new(make_generic_ab(gell_mann_basis(3).unwrap(), &[0, 1, 2, 3, 5]).unwrap());
        let sys = Brachistochrone::from_arc(dec.clone());
        for seed in 0..5 {
            let x = state(&dec, seed, 1.2);
            let (_, u) = sys.propagate(&sys.full_coords(&x), 1.0, 1e-12).unwrap();
            assert!(cost_c(&sys, &x, &u, 1e-10).unwrap() < 1e-8);
            let other = state(&dec, seed + 100, 1.0);
            let c1 = cost_c(&sys, &other, &u, 1e-10).unwrap();
            let c2 = cost_c(&sys, &other, &u, 1e-11).unwrap();
            assert!((c1 - c2).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_budget_returns_start_cost() {
        let dec = type1(3, 2);
        let sys = Brachistochrone::from_arc(dec.clone());
        let target = expm(&dec.assemble_a(&state(&dec, 1, 1.0).a), 1.0);
        let mut p = BvpProblem::new(dec.clone(), target.clone(), 9);
        p.n_starts = 1;
        p.optimizer_budget = 0;
        let r = solve_multistart(&p).unwrap();
        let x0 = &p.starts()[0];
        let (a, l) = dec.split(x0);
        let c = cost_c(&sys, &PhaseState::new(a, l), &target, p.integration_tol).unwrap();
        assert_eq!(r.final_costs, vec![c]);
        assert_eq!(r.best_cost, c);
    }

    #[test]
    fn multistart_is_worker_independent() {
        let dec = type1(3, 2);
        let target = expm(&dec.assemble_a(&state(&dec, 2, 0.6).a), 1.0);
        let mut p = BvpProblem::new(dec, target, 4);
        p.n_starts = 4;
        p.optimizer_budget = 150;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| solve_multistart(&p).unwrap());
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| solve_multistart(&p).unwrap());
        assert_eq!(one, many);
        let min = one.final_costs.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(one.best_cost, min);
    }

    #[test]
    fn type1_algebraic_recovers_forward_target() {
        let dec = type1(3, 2);
        let x = state(&dec, 5, 0.7);
        let target = type1_unitary_unchecked(&dec, &x.a, &x.lambda, 1.0);
        let mut p = BvpProblem::new(dec.clone(), target.clone(), 1);
        p.n_starts = 8;
        p.start_norm = 0.7;
        p.optimizer_budget = 6000;
        let r = type1_algebraic_solve_with(&p).unwrap();
        assert!(r.best_cost < 1e-6, "{}", r.best_cost);
        // the ODE path reaches the same residual
        p.n_starts = 4;
        p.optimizer_budget = 4000;
        let ode = solve_multistart(&p).unwrap();
        assert!((ode.best_cost - r.best_cost).abs() < 1e-4, "{} vs {}", ode.best_cost, r.best_cost);
    }

    #[test]
    fn type1_algebraic_with_empty_b_is_logm() {
        let basis = gell_mann_basis(2).unwrap();
        let dec = Arc::new(make_generic_ab(basis, &[0, 1, 2]).unwrap());
        let h = dec.assemble_a(&[0.4, -1.1, 0.9]);
        let target = expm(&h, 1.0);
        let r = type1_algebraic_solve(&target, &dec, 0, 2).unwrap();
        assert!(r.best_cost < 1e-9);
        assert!(r.best_x.a.iter().zip([0.4, -1.1, 0.9]).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn type1_algebraic_rejects_generic() {
        let dec = Arc::new(make_generic_ab(gell_mann_basis(3).unwrap(), &[0, 1, 2, 3, 5]).unwrap());
        assert!(type1_algebraic_solve(&UnitaryMatrix::identity(3), &dec, 0, 1).is_err());
    }

    #[test]
    fn costs_csv_has_one_row_per_start() {
        let dec = type1(3, 2);
        let mut p = BvpProblem::new(dec, UnitaryMatrix::identity(3), 1);
        p.n_starts = 3;
        p.optimizer_budget = 5;
        let r = solve_multistart(&p).unwrap();
        let mut buf = Vec::new();
        r.write_costs_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
