//! Derivative-free Nelder–Mead simplex minimisation with box constraints.
//!
//! Trial points are projected onto the box before evaluation, so the
//! objective is never called outside the bounds.

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Per-dimension `(lower, upper)` bounds; use infinities for free axes.
    pub bounds: Vec<(f64, f64)>,
    /// Initial simplex edge length per dimension.
    pub initial_step: Vec<f64>,
    pub max_evals: usize,
    /// Terminates when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ...and the simplex diameter (max-norm) falls below this.
    pub x_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// True when the tolerances were met before the evaluation budget ran out.
    pub converged: bool,
}

impl NelderMead {
    pub fn new(bounds: Vec<(f64, f64)>, initial_step: Vec<f64>) -> Self {
        assert_eq!(bounds.len(), initial_step.len());
        NelderMead {
            bounds,
            initial_step,
            max_evals: 2000,
            f_tol: 1e-14,
            x_tol: 1e-10,
        }
    }

    pub fn max_evals(mut self, n: usize) -> Self {
        self.max_evals = n;
        self
    }

    pub fn tolerances(mut self, f_tol: f64, x_tol: f64) -> Self {
        self.f_tol = f_tol;
        self.x_tol = x_tol;
        self
    }

    fn project(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, start: &[f64]) -> Minimum {
        let dim = start.len();
        assert_eq!(dim, self.bounds.len());
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut x0 = start.to_vec();
        self.project(&mut x0);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        let f0 = eval(&x0, &mut evals);
        simplex.push((x0.clone(), f0));
        for i in 0..dim {
            let mut xi = x0.clone();
            let (lo, hi) = self.bounds[i];
            let step = self.initial_step[i];
            // Step inward when the start sits on the upper bound.
            xi[i] = if x0[i] + step <= hi { x0[i] + step } else { (x0[i] - step).max(lo) };
            let fi = eval(&xi, &mut evals);
            simplex.push((xi, fi));
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut converged = false;
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[dim].1;
            let spread = if best.is_finite() && worst.is_finite() {
                (worst - best).abs()
            } else {
                f64::INFINITY
            };
            let diameter = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread <= self.f_tol.max(self.f_tol * best.abs()) && diameter <= self.x_tol {
                converged = true;
                break;
            }
            if diameter == 0.0 {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; dim];
            for (x, _) in &simplex[..dim] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / dim as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let mut xr = along(-alpha);
            self.project(&mut xr);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let mut xe = along(-gamma);
                self.project(&mut xe);
                let fe = eval(&xe, &mut evals);
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
                continue;
            }
            let (mut xc, outside) = if fr < simplex[dim].1 { (along(-rho), true) } else { (along(rho), false) };
            self.project(&mut xc);
            let fc = eval(&xc, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < simplex[dim].1) {
                simplex[dim] = (xc, fc);
                continue;
            }
            let x_best = simplex[0].0.clone();
            for item in simplex.iter_mut().skip(1) {
                let mut xs: Vec<f64> = x_best
                    .iter()
                    .zip(&item.0)
                    .map(|(b, x)| b + sigma * (x - b))
                    .collect();
                self.project(&mut xs);
                let fs = eval(&xs, &mut evals);
                *item = (xs, fs);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            evals,
            converged,
        }
    }
}
