//! Local optimizers shared by the fitting routines.
//!
//! [`NelderMead`] is used for the non-smooth objectives (L1 volume cost, IoU,
//! point-to-plane L1); [`LevenbergMarquardt`] for the smooth least-squares
//! ones (PnP reprojection, point-to-line template fitting).

use nalgebra::{DMatrix, DVector};

/// Outcome of a minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

/// Downhill simplex with restarts from the incumbent.
///
/// Non-finite objective values are treated as `+∞`, which lets callers encode
/// hard constraints by rejection.
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub value_tolerance: f64,
    /// ...and the simplex diameter falls below this.
    pub parameter_tolerance: f64,
    /// Simplex re-initializations around the best vertex after convergence.
    pub max_restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evaluations: 20_000,
            value_tolerance: 1e-8,
            parameter_tolerance: 1e-6,
            max_restarts: 3,
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], step: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert_eq!(x0.len(), step.len(), "step must match dimension");
        let mut evals = 0usize;
        let mut iterations = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            sanitize(f(x))
        };

        let mut best_x = x0.to_vec();
        let mut best_v = eval(&best_x, &mut evals);
        let mut scale = 1.0;
        for restart in 0..=self.max_restarts {
            let start_v = best_v;
            let (x, v) = self.run(&mut eval, &best_x, best_v, step, scale, &mut evals, &mut iterations);
            if v < best_v {
                best_x = x;
                best_v = v;
            }
            if evals >= self.max_evaluations {
                break;
            }
            // a restart that no longer improves means we are done
            if restart > 0 && start_v - best_v <= self.value_tolerance {
                break;
            }
            scale *= 0.5;
        }
        Minimum { x: best_x, value: best_v, evaluations: evals, iterations }
    }

    #[allow(clippy::too_many_arguments)]
    fn run<E>(
        &self,
        eval: &mut E,
        x0: &[f64],
        v0: f64,
        step: &[f64],
        scale: f64,
        evals: &mut usize,
        iterations: &mut usize,
    ) -> (Vec<f64>, f64)
    where
        E: FnMut(&[f64], &mut usize) -> f64,
    {
        let n = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += step[i] * scale;
            let v = eval(&x, evals);
            simplex.push((x, v));
        }

        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        while *evals < self.max_evaluations {
            *iterations += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            let flat = spread <= self.value_tolerance || (simplex[0].1.is_infinite() && simplex[n].1.is_infinite());
            if flat && diameter <= self.parameter_tolerance {
                break;
            }
            if diameter <= self.parameter_tolerance * 1e-3 {
                break;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let worst = simplex[n].0.clone();
            let along = |t: f64, out: &mut Vec<f64>| {
                for i in 0..n {
                    out[i] = centroid[i] + t * (worst[i] - centroid[i]);
                }
            };

            along(-1.0, &mut trial);
            let vr = eval(&trial, evals);
            if vr < simplex[0].1 {
                let reflected = trial.clone();
                along(-2.0, &mut trial);
                let ve = eval(&trial, evals);
                simplex[n] = if ve < vr { (trial.clone(), ve) } else { (reflected, vr) };
                continue;
            }
            if vr < simplex[n - 1].1 {
                simplex[n] = (trial.clone(), vr);
                continue;
            }
            let (t, bound) = if vr < simplex[n].1 { (-0.5, vr) } else { (0.5, simplex[n].1) };
            along(t, &mut trial);
            let vc = eval(&trial, evals);
            if vc < bound {
                simplex[n] = (trial.clone(), vc);
                continue;
            }
            // shrink toward the best vertex
            let best = simplex[0].0.clone();
            for (x, v) in simplex[1..].iter_mut() {
                for i in 0..n {
                    x[i] = best[i] + 0.5 * (x[i] - best[i]);
                }
                *v = eval(x, evals);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, v) = simplex.swap_remove(0);
        (x, v)
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub history: Vec<f64>,
}

/// Damped Gauss–Newton with a central-difference Jacobian.
#[derive(Debug, Clone)]
pub struct LevenbergMarquardt {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
}

impl Default for LevenbergMarquardt {
    fn default() -> Self {
        LevenbergMarquardt { max_iterations: 200, step_tolerance: 1e-12, cost_tolerance: 1e-20 }
    }
}

impl LevenbergMarquardt {
    /// `residuals(x, out)` must fill `out` with a fixed number of residuals.
    pub fn solve<F>(&self, mut residuals: F, x0: &[f64]) -> LeastSquares
    where
        F: FnMut(&[f64], &mut Vec<f64>),
    {
        let n = x0.len();
        let mut x = x0.to_vec();
        let mut r = Vec::new();
        residuals(&x, &mut r);
        let m = r.len();
        let mut cost = sumsq(&r);
        let mut history = vec![cost];
        let mut mu = 1e-3;
        let mut iterations = 0;
        let mut rp = Vec::with_capacity(m);
        let mut rm = Vec::with_capacity(m);
        let mut trial = x.clone();

        while iterations < self.max_iterations && cost > self.cost_tolerance {
            iterations += 1;
            let mut jac = DMatrix::<f64>::zeros(m, n);
            for j in 0..n {
                let h = 1e-7 * x[j].abs().max(1.0);
                trial.copy_from_slice(&x);
                trial[j] = x[j] + h;
                residuals(&trial, &mut rp);
                trial[j] = x[j] - h;
                residuals(&trial, &mut rm);
                for i in 0..m {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let rv = DVector::from_column_slice(&r);
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * rv;
            if jtr.amax() < 1e-15 {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut a = jtj.clone();
                for d in 0..n {
                    a[(d, d)] += mu * jtj[(d, d)].max(1e-12);
                }
                let Some(chol) = a.cholesky() else {
                    mu *= 10.0;
                    continue;
                };
                let delta = chol.solve(&(-&jtr));
                for j in 0..n {
                    trial[j] = x[j] + delta[j];
                }
                let mut rt = Vec::with_capacity(m);
                residuals(&trial, &mut rt);
                let ct = sumsq(&rt);
                if ct.is_finite() && ct < cost {
                    let step_norm = delta.norm();
                    let rel = (cost - ct) / cost.max(1e-300);
                    x.copy_from_slice(&trial);
                    r = rt;
                    cost = ct;
                    history.push(cost);
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    if step_norm < self.step_tolerance || rel < 1e-15 {
                        return LeastSquares { x, cost, iterations, history };
                    }
                    break;
                }
                mu *= 4.0;
            }
            if !improved {
                break;
            }
        }
        LeastSquares { x, cost, iterations, history }
    }
}

fn sumsq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}
