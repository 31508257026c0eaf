//! Dormand–Prince 5(4) integrator with PI step control and continuous
//! (dense) output over the whole integration interval.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 200_000,
            h_init: None,
        }
    }
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

/// Continuous solution over `[t_start, t_end]` (either orientation).
#[derive(Debug, Clone)]
pub struct DenseSolution {
    t_start: f64,
    t_end: f64,
    y0: Vec<f64>,
    segments: Vec<Segment>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    /// Final state.
    pub fn last(&self) -> Vec<f64> {
        match self.segments.last() {
            Some(s) => self.interpolate(s, 1.0),
            None => self.y0.clone(),
        }
    }

    fn interpolate(&self, s: &Segment, theta: f64) -> Vec<f64> {
        let t1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &s.rcont;
        (0..r1.len())
            .map(|i| r1[i] + theta * (r2[i] + t1 * (r3[i] + theta * (r4[i] + t1 * r5[i]))))
            .collect()
    }

    /// State at time `t`, which must lie in the integrated interval.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = if self.t_end >= self.t_start {
            (self.t_start, self.t_end)
        } else {
            (self.t_end, self.t_start)
        };
        let slack = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
        if t < lo - slack || t > hi + slack {
            return Err(Error::invalid(format!("time {t} outside the integrated interval [{lo}, {hi}]")));
        }
        if self.segments.is_empty() {
            return Ok(self.y0.clone());
        }
        let forward = self.t_end >= self.t_start;
        // first segment whose end reaches t
        let idx = self.segments.partition_point(|s| {
            let end = s.t0 + s.h;
            if forward {
                end < t
            } else {
                end > t
            }
        });
        let s = &self.segments[idx.min(self.segments.len() - 1)];
        let theta = ((t - s.t0) / s.h).clamp(0.0, 1.0);
        Ok(self.interpolate(s, theta))
    }

    pub fn eval_many(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times.iter().map(|&t| self.eval(t)).collect()
    }
}

fn error_norm(y: &[f64], ynew: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let s: f64 = y
        .iter()
        .zip(ynew)
        .zip(err)
        .map(|((a, b), e)| {
            let sk = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step<F: FnMut(f64, &[f64], &mut [f64])>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    span: f64,
    opts: &OdeOptions,
) -> f64 {
    let sk: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let n = y0.len().max(1) as f64;
    let d0 = (y0.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n).sqrt();
    let mut h = if d0 <= 1e-10 || d1 <= 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, k)| y + dir * h * k).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(t0 + dir * h, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h;
    let der = d1.max(d2);
    let h1 = if der <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der).powf(0.2)
    };
    (100.0 * h).min(h1).min(span)
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (backwards if `t_end < t0`).
pub fn solve<F>(mut f: F, t0: f64, y0: &[f64], t_end: f64, opts: &OdeOptions) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::invalid("integration tolerances must be positive"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state contains non-finite values"));
    }
    let dim = y0.len();
    let mut sol = DenseSolution {
        t_start: t0,
        t_end,
        y0: y0.to_vec(),
        segments: Vec::new(),
        accepted: 0,
        rejected: 0,
        evaluations: 0,
    };
    let span = (t_end - t0).abs();
    if span == 0.0 || dim == 0 {
        return Ok(sol);
    }
    let dir = (t_end - t0).signum();

    let safe = 0.9;
    let beta = 0.04;
    let expo1 = 0.2 - beta * 0.75;
    let facc1: f64 = 5.0;
    let facc2: f64 = 0.1;
    let mut facold: f64 = 1e-4;

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut err = vec![0.0; dim];

    f(t0, &y, &mut k1);
    sol.evaluations += 1;
    let mut h = match opts.h_init {
        Some(h) => h.abs().min(span),
        None => {
            sol.evaluations += 1;
            initial_step(&mut f, t0, &y, &k1, dir, span, opts)
        }
    };
    let mut t = t0;
    let mut last = false;
    let mut reject = false;
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                t_reached: t,
                reason: format!("step limit {} reached", opts.max_steps),
            });
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::Integration {
                t_reached: t,
                reason: format!("step size underflow (h = {h:e})"),
            });
        }
        if (t + dir * 1.01 * h - t_end) * dir >= 0.0 {
            h = (t_end - t).abs();
            last = true;
        }
        let hs = dir * h;
        steps += 1;

        for i in 0..dim {
            ytmp[i] = y[i] + hs * A21 * k1[i];
        }
        f(t + C2 * hs, &ytmp, &mut k2);
        for i in 0..dim {
            ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hs, &ytmp, &mut k3);
        for i in 0..dim {
            ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hs, &ytmp, &mut k4);
        for i in 0..dim {
            ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hs, &ytmp, &mut k5);
        for i in 0..dim {
            ytmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + hs, &ytmp, &mut k6);
        for i in 0..dim {
            ynew[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + hs, &ynew, &mut k7);
        sol.evaluations += 6;

        for i in 0..dim {
            err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = error_norm(&y, &ynew, &err, opts);
        if !e.is_finite() {
            if ynew.iter().any(|v| !v.is_finite()) && h <= h_min * 2.0 {
                return Err(Error::Integration {
                    t_reached: t,
                    reason: "state became non-finite".into(),
                });
            }
            h *= 0.1;
            last = false;
            reject = true;
            sol.rejected += 1;
            continue;
        }
        let fac11 = e.powf(expo1);
        let mut fac = fac11 / facold.powf(beta);
        fac = facc2.max(facc1.min(fac / safe));
        let mut hnew = h / fac;

        if e <= 1.0 {
            facold = e.max(1e-4);
            sol.accepted += 1;
            let r1 = y.clone();
            let r2: Vec<f64> = (0..dim).map(|i| ynew[i] - y[i]).collect();
            let r3: Vec<f64> = (0..dim).map(|i| hs * k1[i] - r2[i]).collect();
            let r4: Vec<f64> = (0..dim).map(|i| r2[i] - hs * k7[i] - r3[i]).collect();
            let r5: Vec<f64> = (0..dim)
                .map(|i| {
                    hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                })
                .collect();
            sol.segments.push(Segment {
                t0: t,
                h: hs,
                rcont: [r1, r2, r3, r4, r5],
            });
            std::mem::swap(&mut k1, &mut k7);
            std::mem::swap(&mut y, &mut ynew);
            t = if last { t_end } else { t + hs };
            if last {
                return Ok(sol);
            }
            if reject {
                hnew = hnew.min(h);
            }
            reject = false;
        } else {
            hnew = h / facc1.min(fac11 / safe);
            reject = true;
            last = false;
            sol.rejected += 1;
        }
        h = hnew;
    }
}
