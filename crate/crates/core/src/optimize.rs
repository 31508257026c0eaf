//! Derivative-free and finite-difference local minimizers with an evaluation budget.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalMethod {
    #[default]
    NelderMead,
    FiniteDifferenceBfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub method: LocalMethod,
    /// Maximum number of objective evaluations (the starting point included).
    pub budget: usize,
    /// Stop as soon as the objective falls to this value.
    pub f_target: f64,
    /// Initial simplex edge / finite-difference reference scale.
    pub step: f64,
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            method: LocalMethod::NelderMead,
            budget: 2000,
            f_target: 1e-10,
            step: 0.1,
            xtol: 1e-11,
            ftol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
}

/// Minimizes `f` from `x0` with the method in `opts`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &LocalOptions) -> LocalResult {
    match opts.method {
        LocalMethod::NelderMead => nelder_mead(f, x0, opts),
        LocalMethod::FiniteDifferenceBfgs => fd_bfgs(f, x0, opts),
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best_f {
            self.best_f = v;
            self.best_x.copy_from_slice(x);
        }
        v
    }
}

/// Nelder–Mead with reflection 1, expansion 2, contraction ½, shrink ½.
/// When the simplex collapses before the budget is spent, it is rebuilt around
/// the best vertex with a smaller edge.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &LocalOptions) -> LocalResult {
    let n = x0.len();
    let mut cf = Counted {
        f,
        evals: 0,
        best_x: x0.to_vec(),
        best_f: f64::INFINITY,
    };
    if opts.budget == 0 {
        return LocalResult {
            x: x0.to_vec(),
            f: (cf.f)(x0),
            evaluations: 0,
        };
    }
    let f0 = cf.call(x0);
    if n == 0 || f0 <= opts.f_target {
        return LocalResult {
            x: x0.to_vec(),
            f: f0,
            evaluations: cf.evals,
        };
    }
    let mut step = opts.step;
    let mut centre = x0.to_vec();
    let mut f_centre = f0;
    'restart: loop {
        let mut simplex: Vec<Vec<f64>> = vec![centre.clone()];
        let mut values = vec![f_centre];
        for i in 0..n {
            if cf.evals >= opts.budget {
                break 'restart;
            }
            let mut v = centre.clone();
            v[i] += step;
            values.push(cf.call(&v));
            simplex.push(v);
        }
        loop {
            if cf.evals >= opts.budget || cf.best_f <= opts.f_target {
                break 'restart;
            }
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let diam = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread <= opts.ftol || diam <= opts.xtol {
                if step <= opts.xtol * 10.0 {
                    break 'restart;
                }
                centre = simplex[0].clone();
                f_centre = values[0];
                step = (diam * 10.0).max(opts.xtol * 10.0).min(step * 0.5);
                continue 'restart;
            }

            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let along = |s: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + s * (c - w))
                    .collect()
            };
            let xr = along(1.0);
            let fr = cf.call(&xr);
            if fr < values[0] {
                if cf.evals >= opts.budget {
                    simplex[n] = xr;
                    values[n] = fr;
                    continue;
                }
                let xe = along(2.0);
                let fe = cf.call(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                if cf.evals >= opts.budget {
                    continue;
                }
                let (xc, fc) = if fr < values[n] {
                    let xc = along(0.5);
                    let fc = cf.call(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = cf.call(&xc);
                    (xc, fc)
                };
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        if cf.evals >= opts.budget {
                            break;
                        }
                        let v: Vec<f64> = simplex[0]
                            .iter()
                            .zip(&simplex[i])
                            .map(|(b, x)| b + 0.5 * (x - b))
                            .collect();
                        values[i] = cf.call(&v);
                        simplex[i] = v;
                    }
                }
            }
        }
    }
    LocalResult {
        x: cf.best_x,
        f: cf.best_f,
        evaluations: cf.evals,
    }
}

/// Quasi-Newton descent with central-difference gradients and Armijo backtracking.
pub fn fd_bfgs<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &LocalOptions) -> LocalResult {
    let n = x0.len();
    let mut cf = Counted {
        f,
        evals: 0,
        best_x: x0.to_vec(),
        best_f: f64::INFINITY,
    };
    if opts.budget == 0 {
        return LocalResult {
            x: x0.to_vec(),
            f: (cf.f)(x0),
            evaluations: 0,
        };
    }
    let mut x = x0.to_vec();
    let mut fx = cf.call(&x);
    let h = 1e-7 * opts.step.max(1e-3) / 0.1;
    let grad = |cf: &mut Counted<F>, x: &[f64]| -> Option<Vec<f64>> {
        let mut g = vec![0.0; n];
        let mut xp = x.to_vec();
        for i in 0..n {
            if cf.evals + 2 > opts.budget {
                return None;
            }
            xp[i] = x[i] + h;
            let fp = cf.call(&xp);
            xp[i] = x[i] - h;
            let fm = cf.call(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Some(g)
    };
    let mut hinv = nalgebra::DMatrix::<f64>::identity(n, n);
    let Some(mut g) = grad(&mut cf, &x) else {
        return LocalResult {
            x: cf.best_x,
            f: cf.best_f,
            evaluations: cf.evals,
        };
    };
    while cf.evals < opts.budget && fx > opts.f_target {
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut p = -(&hinv * &gv);
        let mut slope = p.dot(&gv);
        if slope >= 0.0 {
            hinv = nalgebra::DMatrix::identity(n, n);
            p = -gv.clone();
            slope = -gv.norm_squared();
        }
        if slope.abs() < 1e-300 {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while cf.evals < opts.budget && alpha > 1e-12 {
            let xn: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + alpha * b).collect();
            let fn_ = cf.call(&xn);
            if fn_ <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fn_));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_)) = accepted else { break };
        let Some(gn) = grad(&mut cf, &xn) else { break };
        let s = nalgebra::DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = nalgebra::DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = nalgebra::DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            hinv = &a * &hinv * &b + &s * s.transpose() * rho;
        }
        let moved = s.amax();
        x = xn;
        fx = fn_;
        g = gn;
        if moved < opts.xtol {
            break;
        }
    }
    LocalResult {
        x: cf.best_x,
        f: cf.best_f,
        evaluations: cf.evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }

    #[test]
    fn nelder_mead_quadratic_and_cone() {
        let opts = LocalOptions {
            budget: 5000,
            f_target: 0.0,
            ..Default::default()
        };
        let r = nelder_mead(|x| x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * (v - 0.3).powi(2)).sum(), &[1.0, -1.0, 2.0], &opts);
        assert!(r.f < 1e-12, "{}", r.f);
        // non-smooth minimum, like a matrix-log norm
        let r = nelder_mead(|x| x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>().sqrt(), &[0.0; 6], &opts);
        assert!(r.f < 1e-7, "{}", r.f);
        assert!(r.evaluations <= 5000);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let opts = LocalOptions {
            budget: 4000,
            f_target: 1e-12,
            ..Default::default()
        };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(r.f < 1e-10, "{}", r.f);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_budget_evaluates_start_only() {
        let opts = LocalOptions {
            budget: 0,
            ..Default::default()
        };
        let r = nelder_mead(rosenbrock, &[0.0, 0.0], &opts);
        assert_eq!(r.f, 1.0);
        assert_eq!(r.x, vec![0.0, 0.0]);
        let r = fd_bfgs(rosenbrock, &[0.0, 0.0], &opts);
        assert_eq!(r.f, 1.0);
    }

    #[test]
    fn budget_is_respected() {
        for budget in [1, 2, 3, 7, 50] {
            let mut calls = 0;
            let opts = LocalOptions {
                budget,
                ..Default::default()
            };
            let r = nelder_mead(
                |x| {
                    calls += 1;
                    rosenbrock(x)
                },
                &[-1.0, 1.0, 0.5],
                &opts,
            );
            assert_eq!(calls, r.evaluations);
            assert!(r.evaluations <= budget);
        }
    }

    #[test]
    fn fd_bfgs_smooth_problem() {
        let opts = LocalOptions {
            method: LocalMethod::FiniteDifferenceBfgs,
            budget: 4000,
            f_target: 1e-14,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(r.f < 1e-8, "{}", r.f);
    }
}
