//! The brachistochrone flow on an AB decomposition.
//!
//! With `T = H + D` expanded in the adapted basis as `x = (a, λ)`, the flow is
//! `dT/dt = −i[H, D]`, i.e. `ẋ_i = −Σ_{j∈𝔹, m∈𝔸} f_ijm λ_j a_m` with the
//! structure constants of the adapted basis. The same formula covers `ȧ` and
//! `λ̇`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decomposition::ABDecomposition;
use crate::error::{Error, Result};
use crate::lie_algebra::{time_ordered_exp_on_grid, CMatrix, HermitianMatrix, UnitaryMatrix, C64};
use crate::ode::{self, DenseSolution, OdeOptions};

/// Coefficients `(a, λ)` at time `t`, in the adapted basis of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(a: Vec<f64>, lambda: Vec<f64>) -> Self {
        Self { a, lambda, t: 0.0 }
    }

    /// Euclidean norm of the combined vector `x = (a, λ)`.
    pub fn norm(&self) -> f64 {
        self.a.iter().chain(&self.lambda).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            a: self.a.iter().map(|v| v * s).collect(),
            lambda: self.lambda.iter().map(|v| v * s).collect(),
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    i: u32,
    j: u32,
    m: u32,
    c: f64,
}

/// Precomputed brachistochrone vector field for one decomposition.
#[derive(Debug, Clone)]
pub struct Brachistochrone {
    dec: Arc<ABDecomposition>,
    terms: Vec<Term>,
    /// Real and imaginary parts of the 𝔸 elements, row-major n×n each.
    a_re: Vec<Vec<f64>>,
    a_im: Vec<Vec<f64>>,
}

impl Brachistochrone {
    pub fn new(dec: ABDecomposition) -> Self {
        Self::from_arc(Arc::new(dec))
    }

    pub fn from_arc(dec: Arc<ABDecomposition>) -> Self {
        let d = dec.dim();
        let f = dec.adapted_structure_constants();
        let mut terms = Vec::new();
        for i in 0..d {
            for &j in dec.b_indices() {
                for &m in dec.a_indices() {
                    let v = f[(i * d + j) * d + m];
                    if v.abs() > 1e-14 {
                        terms.push(Term {
                            i: i as u32,
                            j: j as u32,
                            m: m as u32,
                            c: -v,
                        });
                    }
                }
            }
        }
        let n = dec.n();
        let mut a_re = Vec::new();
        let mut a_im = Vec::new();
        for &i in dec.a_indices() {
            let e = dec.elements()[i].matrix();
            a_re.push((0..n * n).map(|k| e[(k / n, k % n)].re).collect());
            a_im.push((0..n * n).map(|k| e[(k / n, k % n)].im).collect());
        }
        Self { dec, terms, a_re, a_im }
    }

    pub fn dec(&self) -> &ABDecomposition {
        &self.dec
    }

    pub fn dec_arc(&self) -> &Arc<ABDecomposition> {
        &self.dec
    }

    /// Number of phase-space coordinates (n² − 1).
    pub fn dim(&self) -> usize {
        self.dec.dim()
    }

    /// Vector field on full adapted coordinates.
    pub fn rhs_full(&self, x: &[f64], dx: &mut [f64]) {
        dx[..self.dim()].iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            dx[t.i as usize] += t.c * x[t.j as usize] * x[t.m as usize];
        }
    }

    pub fn rhs(&self, state: &PhaseState) -> (Vec<f64>, Vec<f64>) {
        let x = self.dec.join(&state.a, &state.lambda);
        let mut dx = vec![0.0; x.len()];
        self.rhs_full(&x, &mut dx);
        self.dec.split(&dx)
    }

    fn check_state(&self, state: &PhaseState) -> Result<()> {
        if state.a.len() != self.dec.dim_a() || state.lambda.len() != self.dec.dim_b() {
            return Err(Error::invalid(format!(
                "state has (|a|, |λ|) = ({}, {}), decomposition needs ({}, {})",
                state.a.len(),
                state.lambda.len(),
                self.dec.dim_a(),
                self.dec.dim_b()
            )));
        }
        Ok(())
    }

    pub fn full_coords(&self, state: &PhaseState) -> Vec<f64> {
        self.dec.join(&state.a, &state.lambda)
    }

    pub fn state_at(&self, x: &[f64], t: f64) -> PhaseState {
        let (a, lambda) = self.dec.split(x);
        PhaseState { a, lambda, t }
    }

    /// Continuous solution of the flow from full coordinates `x0` at `t0`.
    pub fn integrate_dense(&self, x0: &[f64], t0: f64, t_end: f64, tol: f64) -> Result<DenseSolution> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        ode::solve(|_, x, dx| self.rhs_full(x, dx), t0, x0, t_end, &OdeOptions::with_tol(tol))
    }

    /// `H(t)` as a dense matrix from full coordinates.
    pub fn h_matrix(&self, x: &[f64]) -> CMatrix {
        let (a, _) = self.dec.split(x);
        self.dec.assemble_a(&a).into_matrix()
    }

    pub fn d_matrix(&self, x: &[f64]) -> CMatrix {
        let (_, l) = self.dec.split(x);
        self.dec.assemble_b(&l).into_matrix()
    }

    fn joint_rhs(&self, x: &[f64], dx: &mut [f64]) {
        let d = self.dim();
        let n = self.dec.n();
        let nn = n * n;
        self.rhs_full(&x[..d], &mut dx[..d]);
        let mut hr = vec![0.0; nn];
        let mut hi = vec![0.0; nn];
        for (k, &ai) in self.dec.a_indices().iter().enumerate() {
            let c = x[ai];
            if c != 0.0 {
                for e in 0..nn {
                    hr[e] += c * self.a_re[k][e];
                    hi[e] += c * self.a_im[k][e];
                }
            }
        }
        let ur = &x[d..d + nn];
        let ui = &x[d + nn..d + 2 * nn];
        // dU/dt = −iHU: d(Ur) = Hr·Ui + Hi·Ur, d(Ui) = Hi·Ui − Hr·Ur
        for r in 0..n {
            for c in 0..n {
                let mut re = 0.0;
                let mut im = 0.0;
                for k in 0..n {
                    let (hrk, hik) = (hr[r * n + k], hi[r * n + k]);
                    let (urk, uik) = (ur[k * n + c], ui[k * n + c]);
                    re += hrk * uik + hik * urk;
                    im += hik * uik - hrk * urk;
                }
                dx[d + r * n + c] = re;
                dx[d + nn + r * n + c] = im;
            }
        }
    }

    fn unpack_unitary(&self, y: &[f64]) -> UnitaryMatrix {
        let d = self.dim();
        let n = self.dec.n();
        let nn = n * n;
        let m = CMatrix::from_fn(n, n, |r, c| C64::new(y[d + r * n + c], y[d + nn + r * n + c]));
        UnitaryMatrix::nearest(&m)
    }

    fn joint_initial(&self, x0: &[f64]) -> Vec<f64> {
        let n = self.dec.n();
        let mut y = x0.to_vec();
        y.resize(self.dim() + 2 * n * n, 0.0);
        for k in 0..n {
            y[self.dim() + k * n + k] = 1.0;
        }
        y
    }

    /// Final coordinates and `U(t_end)`, integrating the flow and the Schrödinger
    /// equation together in one adaptive run.
    pub fn propagate(&self, x0: &[f64], t_end: f64, tol: f64) -> Result<(Vec<f64>, UnitaryMatrix)> {
        let y0 = self.joint_initial(x0);
        let sol = ode::solve(|_, y, dy| self.joint_rhs(y, dy), 0.0, &y0, t_end, &OdeOptions::with_tol(tol))?;
        let y = sol.last();
        Ok((y[..self.dim()].to_vec(), self.unpack_unitary(&y)))
    }

    /// As [`Brachistochrone::propagate`], sampled at each of `times` (within `[0, max]`).
    pub fn propagate_on_grid(&self, x0: &[f64], times: &[f64], tol: f64) -> Result<Vec<(Vec<f64>, UnitaryMatrix)>> {
        let t_end = times.iter().copied().fold(0.0, f64::max);
        let y0 = self.joint_initial(x0);
        let sol = ode::solve(|_, y, dy| self.joint_rhs(y, dy), 0.0, &y0, t_end, &OdeOptions::with_tol(tol))?;
        times
            .iter()
            .map(|&t| {
                let y = sol.eval(t)?;
                Ok((y[..self.dim()].to_vec(), self.unpack_unitary(&y)))
            })
            .collect()
    }
}

/// `‖H(0)‖_F`, the protocol cost under the constant-norm gauge.
pub fn cost(state0: &PhaseState) -> f64 {
    state0.a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rhs(sys: &Brachistochrone, state: &PhaseState) -> (Vec<f64>, Vec<f64>) {
    sys.rhs(state)
}

/// Invariant monitors at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub norm_h: f64,
    pub norm_d: f64,
    /// `Tr((H + D)^k)` for k = 2..n.
    pub f_k: Vec<f64>,
    /// `U†(H + D)U`, present once the unitary has been evolved.
    pub angular_momentum: Option<HermitianMatrix>,
}

fn trace_powers(t: &CMatrix, n: usize) -> Vec<f64> {
    let eig = t.clone().symmetric_eigen();
    (2..=n)
        .map(|k| eig.eigenvalues.iter().map(|mu| mu.powi(k as i32)).sum())
        .collect()
}

/// Relative drifts of the monitored invariants over a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub norm_h: f64,
    pub norm_d: f64,
    pub f_k: Vec<f64>,
    /// Largest Frobenius distance of `U†(H+D)U` from its initial value.
    pub angular_momentum: Option<f64>,
}

impl Drift {
    pub fn max_invariant(&self) -> f64 {
        self.f_k.iter().copied().fold(self.norm_h.max(self.norm_d), f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<PhaseState>,
    /// `U(t)` at each sample; empty until [`evolve_unitary`] runs.
    pub unitaries: Vec<UnitaryMatrix>,
    pub monitors: Vec<Monitor>,
    system: Arc<Brachistochrone>,
    dense: Arc<DenseSolution>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn system(&self) -> &Brachistochrone {
        &self.system
    }

    /// Full adapted coordinates at any time inside the integrated interval.
    pub fn coords_at(&self, t: f64) -> Result<Vec<f64>> {
        self.dense.eval(t)
    }

    pub fn last(&self) -> &PhaseState {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn drift(&self) -> Drift {
        let m0 = &self.monitors[0];
        let tnorm = (m0.norm_h.powi(2) + m0.norm_d.powi(2)).sqrt();
        let rel = |v: f64, v0: f64| (v - v0).abs() / v0.max(1e-300);
        let mut d = Drift {
            norm_h: 0.0,
            norm_d: 0.0,
            f_k: vec![0.0; m0.f_k.len()],
            angular_momentum: m0.angular_momentum.as_ref().map(|_| 0.0),
        };
        for m in &self.monitors {
            d.norm_h = d.norm_h.max(if m0.norm_h > 0.0 { rel(m.norm_h, m0.norm_h) } else { m.norm_h });
            d.norm_d = d.norm_d.max(if m0.norm_d > 0.0 { rel(m.norm_d, m0.norm_d) } else { m.norm_d });
            for (k, (v, v0)) in m.f_k.iter().zip(&m0.f_k).enumerate() {
                let scale = v0.abs().max(tnorm.powi(k as i32 + 2)).max(1e-300);
                d.f_k[k] = d.f_k[k].max((v - v0).abs() / scale);
            }
            if let (Some(l), Some(l0), Some(acc)) =
                (&m.angular_momentum, &m0.angular_momentum, d.angular_momentum.as_mut())
            {
                *acc = acc.max((l.matrix() - l0.matrix()).norm());
            }
        }
        d
    }

    /// CSV with columns `t, a_*, lambda_*, normH, normH_drift, normD, F_2..F_n` and an
    /// optional trailing provenance column.
    pub fn write_csv<W: Write>(&self, w: W, provenance: Option<&str>) -> Result<()> {
        write_trajectory_csv(w, self.system.dec().n(), &self.samples, &self.monitors, provenance)
    }
}

pub(crate) fn write_trajectory_csv<W: Write>(
    w: W,
    n: usize,
    samples: &[PhaseState],
    monitors: &[Monitor],
    provenance: Option<&str>,
) -> Result<()> {
    let io = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    let mut wr = csv::Writer::from_writer(w);
    let first = samples.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..first.a.len()).map(|i| format!("a_{i}")));
    header.extend((0..first.lambda.len()).map(|i| format!("lambda_{i}")));
    header.push("normH".into());
    header.push("normH_drift".into());
    header.push("normD".into());
    header.extend((2..=n).map(|k| format!("F_{k}")));
    if provenance.is_some() {
        header.push("provenance".into());
    }
    wr.write_record(&header).map_err(io)?;
    let h0 = monitors.first().map_or(0.0, |m| m.norm_h);
    for (s, m) in samples.iter().zip(monitors) {
        let mut row: Vec<String> = vec![fmt(s.t)];
        row.extend(s.a.iter().map(|v| fmt(*v)));
        row.extend(s.lambda.iter().map(|v| fmt(*v)));
        row.push(fmt(m.norm_h));
        row.push(fmt(if h0 > 0.0 { (m.norm_h - h0).abs() / h0 } else { m.norm_h }));
        row.push(fmt(m.norm_d));
        row.extend(m.f_k.iter().map(|v| fmt(*v)));
        if let Some(p) = provenance {
            row.push(p.to_string());
        }
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Shortest round-trip decimal form; keeps CSV output byte-stable.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v:e}")
}

pub(crate) fn monitor_for(dec: &ABDecomposition, x: &[f64]) -> Monitor {
    let (a, l) = dec.split(x);
    let t = dec.assemble(x).into_matrix();
    Monitor {
        norm_h: a.iter().map(|v| v * v).sum::<f64>().sqrt(),
        norm_d: l.iter().map(|v| v * v).sum::<f64>().sqrt(),
        f_k: trace_powers(&t, dec.n()),
        angular_momentum: None,
    }
}

/// Integrates the flow from `state0` to `t_end`, sampling at `sample_times`
/// (which must lie between `state0.t` and `t_end`).
pub fn integrate(
    sys: &Arc<Brachistochrone>,
    state0: &PhaseState,
    t_end: f64,
    tol: f64,
    sample_times: &[f64],
) -> Result<Trajectory> {
    sys.check_state(state0)?;
    if sample_times.is_empty() {
        return Err(Error::invalid("at least one sample time is required"));
    }
    let x0 = sys.full_coords(state0);
    let dense = sys.integrate_dense(&x0, state0.t, t_end, tol)?;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut monitors = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let x = dense.eval(t)?;
        monitors.push(monitor_for(sys.dec(), &x));
        samples.push(sys.state_at(&x, t));
    }
    Ok(Trajectory {
        samples,
        unitaries: Vec::new(),
        monitors,
        system: sys.clone(),
        dense: Arc::new(dense),
    })
}

/// `m + 1` equally spaced times on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, m: usize) -> Vec<f64> {
    (0..=m).map(|k| t_end * k as f64 / m as f64).collect()
}

fn time_ordered_along<G: Fn(&[f64]) -> CMatrix>(traj: &Trajectory, gen: G, tol: f64) -> Result<Vec<UnitaryMatrix>> {
    let times = traj.times();
    let t0 = traj.dense.t_start();
    if (times[0] - t0).abs() > 1e-14 {
        return Err(Error::invalid("unitary evolution needs the first sample at the initial time"));
    }
    let dense = &traj.dense;
    let us = time_ordered_exp_on_grid(
        |t| {
            let x = dense.eval(t).expect("time inside the integrated interval");
            gen(&x)
        },
        &times,
        tol,
    )?;
    Ok(us.into_iter().map(UnitaryMatrix::from_raw).collect())
}

/// Solves `i dU/dt = H(t) U`, `U(0) = 𝕀`, along the trajectory and fills the
/// unitaries and the conserved matrix `U†(H+D)U`.
pub fn evolve_unitary(traj: &Trajectory) -> Result<Trajectory> {
    let sys = traj.system.clone();
    let us = time_ordered_along(traj, |x| sys.h_matrix(x), 1e-9)?;
    let mut out = traj.clone();
    for ((m, u), s) in out.monitors.iter_mut().zip(&us).zip(&traj.samples) {
        let t = sys.dec().assemble(&sys.full_coords(s)).into_matrix();
        let l = u.matrix().adjoint() * t * u.matrix();
        m.angular_momentum = Some(HermitianMatrix::project(&l));
    }
    out.unitaries = us;
    Ok(out)
}

/// Solves `i dU₋D/dt = −D(t) U₋D`, `U₋D(0) = 𝕀`, along the trajectory.
pub fn evolve_minus_d(traj: &Trajectory) -> Result<Vec<UnitaryMatrix>> {
    let sys = traj.system.clone();
    time_ordered_along(traj, |x| -sys.d_matrix(x), 1e-9)
}

/// Largest `‖U(t) − U₋D(t)·exp(−i(H(0)+D(0))t)‖_F` over the samples.
pub fn factorization_residual(traj: &Trajectory, u_minus_d: &[UnitaryMatrix]) -> Result<f64> {
    if traj.unitaries.len() != traj.samples.len() || u_minus_d.len() != traj.samples.len() {
        return Err(Error::invalid("factorization check needs both unitary sequences"));
    }
    let sys = traj.system();
    let t0 = sys.dec().assemble(&sys.full_coords(&traj.samples[0]));
    let mut worst: f64 = 0.0;
    for ((s, u), v) in traj.samples.iter().zip(&traj.unitaries).zip(u_minus_d) {
        let k = crate::lie_algebra::expm(&t0, s.t - traj.samples[0].t);
        let r = u.matrix() - v.matrix() * k.matrix();
        worst = worst.max(r.norm());
    }
    Ok(worst)
}

/// Largest `‖[U₋D† U, H(0)+D(0)]‖_F` over the samples.
pub fn commutation_residual(traj: &Trajectory, u_minus_d: &[UnitaryMatrix]) -> f64 {
    let sys = traj.system();
    let t0 = sys.dec().assemble(&sys.full_coords(&traj.samples[0])).into_matrix();
    traj.unitaries
        .iter()
        .zip(u_minus_d)
        .map(|(u, v)| {
            let w = v.matrix().adjoint() * u.matrix();
            (&w * &t0 - &t0 * &w).norm()
        })
        .fold(0.0, f64::max)
}

/// Dense-matrix form of the flow, `d(H+D)/dt = −i[H, D]`, in adapted coordinates.
pub fn matrix_form_rhs(dec: &ABDecomposition, x: &[f64]) -> Vec<f64> {
    let (a, l) = dec.split(x);
    let h = dec.assemble_a(&a).into_matrix();
    let d = dec.assemble_b(&l).into_matrix();
    let c = (&h * &d - &d * &h) * C64::new(0.0, -1.0);
    dec.coordinates(&c)
}
