//! Derivative-free Nelder–Mead simplex minimiser.

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once the spread of objective values across the simplex drops below this.
    pub ftol: f64,
    /// Stop once the simplex diameter drops below this.
    pub xtol: f64,
    /// Initial simplex edge length per coordinate.
    pub initial_step: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    /// Best objective value after each iteration (non-increasing).
    pub history: Vec<f64>,
}

impl NelderMead {
    pub fn new(dim: usize) -> Self {
        Self {
            max_evals: 2000 * dim,
            ftol: 1e-12,
            xtol: 1e-10,
            initial_step: vec![0.1; dim],
        }
    }

    pub fn with_step(mut self, step: Vec<f64>) -> Self {
        self.initial_step = step;
        self
    }

    pub fn with_max_evals(mut self, n: usize) -> Self {
        self.max_evals = n;
        self
    }

    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> NelderMeadResult {
        let n = x0.len();
        assert_eq!(self.initial_step.len(), n);
        // adaptive coefficients (Gao & Han) behave better beyond a few dimensions
        let nf = n as f64;
        let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
        let rho = 0.75 - 1.0 / (2.0 * nf);
        let sigma = 1.0 - 1.0 / nf;

        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() { f64::INFINITY } else { v }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), f0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += self.initial_step[i];
            let fx = eval(&x, &mut evals);
            simplex.push((x, fx));
        }
        let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
        sort(&mut simplex);
        let mut history = vec![simplex[0].1];

        while evals < self.max_evals {
            let spread = simplex[n].1 - simplex[0].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread.abs() <= self.ftol * (1.0 + simplex[0].1.abs()) && diameter <= self.xtol {
                break;
            }
            if diameter <= self.xtol * 1e-3 {
                break;
            }

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                centroid.iter_mut().zip(x).for_each(|(c, v)| *c += v / nf);
            }
            let along = |t: f64, worst: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let worst = simplex[n].0.clone();
            let xr = along(alpha, &worst);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(gamma, &worst);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(alpha * rho, &worst);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = along(-rho, &worst);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let best = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        x.iter_mut()
                            .zip(&best)
                            .for_each(|(v, b)| *v = b + sigma * (*v - b));
                        *fx = eval(x, &mut evals);
                    }
                }
            }
            sort(&mut simplex);
            history.push(simplex[0].1);
        }

        let (x, fx) = simplex.swap_remove(0);
        NelderMeadResult {
            x,
            fx,
            evals,
            history,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = NelderMead::new(2).with_max_evals(10_000).minimize(rosen, &[-1.2, 1.0]);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn minimises_shifted_quadratic_4d() {
        let target = [0.3, -2.0, 1.5, 4.0];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let r = NelderMead::new(4).minimize(f, &[0.0; 4]);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn nan_objective_treated_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let r = NelderMead::new(1).minimize(f, &[0.5]);
        assert!((r.x[0] - 1.0).abs() < 1e-4);
    }
}
