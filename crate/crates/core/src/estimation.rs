//! Parameter estimation for the null regression model: maximum likelihood,
//! general M-estimators, least squares, and the scale estimate.
//!
//! The solver is damped Gauss–Newton on the estimating equation with a
//! backtracking line search on the squared equation norm.

use std::sync::Arc;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::error_models::ErrorModel;
use crate::linalg;
use crate::quad;

type MuFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type StartFn = Arc<dyn Fn(&Dataset) -> Vec<f64> + Send + Sync>;

/// A parametric regression function `mu(x, theta)` with its gradient in
/// `theta`. `p` is the design dimension, `q` the parameter dimension.
#[derive(Clone)]
pub struct RegressionModel {
    pub p: usize,
    pub q: usize,
    mu: MuFn,
    grad: GradFn,
    warm_start: Option<StartFn>,
    /// Linear in the parameters with `mu(x, theta) = theta' x`; enables the
    /// closed-form kernels in the regression test.
    pub linear_through_origin: bool,
}

impl std::fmt::Debug for RegressionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegressionModel")
            .field("p", &self.p)
            .field("q", &self.q)
            .field("linear_through_origin", &self.linear_through_origin)
            .finish()
    }
}

impl RegressionModel {
    pub fn new(
        p: usize,
        q: usize,
        mu: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        RegressionModel {
            p,
            q,
            mu: Arc::new(mu),
            grad: Arc::new(grad),
            warm_start: None,
            linear_through_origin: false,
        }
    }

    /// `mu(x, theta) = theta' x` without an intercept.
    pub fn linear(p: usize) -> Self {
        let mut m = RegressionModel::new(
            p,
            p,
            |x: &[f64], th: &[f64]| x.iter().zip(th).map(|(a, b)| a * b).sum(),
            |x: &[f64], _: &[f64]| x.to_vec(),
        );
        m.linear_through_origin = true;
        m
    }

    /// Scalar exponential model `mu(x, theta) = exp(theta x)` with a
    /// log-linear warm start.
    pub fn exponential() -> Self {
        let mut m = RegressionModel::new(
            1,
            1,
            |x: &[f64], th: &[f64]| (th[0] * x[0]).exp(),
            |x: &[f64], th: &[f64]| vec![x[0] * (th[0] * x[0]).exp()],
        );
        m.warm_start = Some(Arc::new(|data: &Dataset| {
            // regress log Y on x over the rows with positive response
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            let mut k = 0usize;
            for (x, y) in data.xs.iter().zip(&data.ys) {
                if *y > 0.0 {
                    sxx += x[0] * x[0];
                    sxy += x[0] * y.ln();
                    k += 1;
                }
            }
            if k >= 2 && sxx > 0.0 {
                vec![sxy / sxx]
            } else {
                vec![0.0]
            }
        }));
        m
    }

    pub fn mu(&self, x: &[f64], theta: &[f64]) -> f64 {
        (self.mu)(x, theta)
    }

    pub fn grad_mu(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        (self.grad)(x, theta)
    }

    fn start(&self, data: &Dataset, opts: &FitOptions) -> Vec<f64> {
        if let Some(s) = &opts.start {
            return s.clone();
        }
        if let Some(w) = &self.warm_start {
            return w(data);
        }
        vec![0.0; self.q]
    }

    /// Finite-difference check of the supplied gradient on given points.
    pub fn check_gradient(&self, x: &[f64], theta: &[f64]) -> bool {
        let delta = 1e-5;
        let g = self.grad_mu(x, theta);
        let base = self.mu(x, theta);
        for j in 0..self.q {
            let mut th = theta.to_vec();
            th[j] += delta;
            let fd = self.mu(x, &th) - base;
            if (fd - delta * g[j]).abs() > 1e-6 * (1.0 + base.abs()) {
                return false;
            }
        }
        true
    }

    /// Smallest eigenvalue of the empirical Gram matrix
    /// `n^-1 sum grad_mu grad_mu'` at `theta`.
    pub fn gram_min_eigenvalue(&self, data: &Dataset, theta: &[f64]) -> f64 {
        let q = self.q;
        let mut c = vec![vec![0.0; q]; q];
        for x in &data.xs {
            let g = self.grad_mu(x, theta);
            for i in 0..q {
                for j in 0..q {
                    c[i][j] += g[i] * g[j];
                }
            }
        }
        let n = data.n() as f64;
        for row in c.iter_mut() {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        linalg::sym_eigen_min(&c)
    }
}

/// Result of an estimating-equation fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub sigma_hat: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    /// Set when the estimating equation was built from a nonsmooth score, in
    /// which case the returned root need not be unique.
    pub possibly_nonunique: bool,
}

/// Solver options.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub start: Option<Vec<f64>>,
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            start: None,
            gtol: 1e-8,
            max_iter: 200,
        }
    }
}

/// A score function for M-estimation, with an optional derivative. Without
/// one, the solver uses a secant slope over the bandwidth
/// `n^(-1/5) * MAD(residuals)`.
#[derive(Clone)]
pub struct PhiFn {
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl PhiFn {
    pub fn smooth(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PhiFn {
            f: Arc::new(f),
            df: Some(Arc::new(df)),
        }
    }

    pub fn nonsmooth(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        PhiFn {
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn identity() -> Self {
        PhiFn::smooth(|y| y, |_| 1.0)
    }
}

/// Residuals `eps_i(theta) = Y_i - mu(X_i, theta)`.
pub fn residuals(model: &RegressionModel, theta: &[f64], data: &Dataset) -> Vec<f64> {
    data.xs
        .iter()
        .zip(&data.ys)
        .map(|(x, y)| y - model.mu(x, theta))
        .collect()
}

/// Root-mean-square scale estimate `sqrt(n^-1 sum eps_i^2)`.
pub fn fit_scale(residuals: &[f64]) -> Result<f64> {
    if residuals.len() < 2 {
        return Err(Error::invalid("scale estimate needs n >= 2 residuals"));
    }
    let n = residuals.len() as f64;
    let s2 = residuals.iter().map(|e| e * e).sum::<f64>() / n;
    if s2 <= 0.0 {
        return Err(Error::Degenerate("all residuals are zero".into()));
    }
    Ok(s2.sqrt())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mad(v: &[f64]) -> f64 {
    let med = median(v.to_vec());
    median(v.iter().map(|x| (x - med).abs()).collect())
}

/// Damped Gauss–Newton on the equation
/// `eq(theta) = n^-1 sum eta(X_i, theta) [phi(eps_i(theta)) - center]`.
fn solve_equation(
    model: &RegressionModel,
    data: &Dataset,
    eta: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    phi: &PhiFn,
    center: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = data.n();
    let q = model.q;
    if n <= q {
        return Err(Error::invalid(format!("n = {n} must exceed q = {q}")));
    }
    let mut theta = model.start(data, opts);
    if theta.len() != q {
        return Err(Error::invalid(format!(
            "start has {} entries, expected {q}",
            theta.len()
        )));
    }

    let eq_at = |th: &[f64]| -> Vec<f64> {
        let mut eq = vec![0.0; q];
        for (x, y) in data.xs.iter().zip(&data.ys) {
            let e = y - model.mu(x, th);
            let w = (phi.f)(e) - center;
            let v = eta(x, th);
            for j in 0..q {
                eq[j] += v[j] * w;
            }
        }
        for v in eq.iter_mut() {
            *v /= n as f64;
        }
        eq
    };
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();

    let mut eq = eq_at(&theta);
    let mut best = norm2(&eq);
    for iter in 0..opts.max_iter {
        if best.sqrt() <= opts.gtol {
            return Ok(FitResult {
                theta_hat: theta,
                sigma_hat: None,
                iterations: iter,
                converged: true,
                final_gradient_norm: best.sqrt(),
                possibly_nonunique: phi.df.is_none(),
            });
        }
        // Gauss–Newton Jacobian: d eq / d theta ~= -n^-1 sum eta phi' grad_mu'
        let slope: Box<dyn Fn(f64) -> f64> = match &phi.df {
            Some(df) => {
                let df = df.clone();
                Box::new(move |e| df(e))
            }
            None => {
                let res = residuals(model, &theta, data);
                let h = (n as f64).powf(-0.2) * mad(&res).max(1e-3);
                let f = phi.f.clone();
                Box::new(move |e| (f(e + h) - f(e - h)) / (2.0 * h))
            }
        };
        let mut jac = vec![vec![0.0; q]; q];
        for (x, y) in data.xs.iter().zip(&data.ys) {
            let e = y - model.mu(x, &theta);
            let s = slope(e);
            let v = eta(x, &theta);
            let g = model.grad_mu(x, &theta);
            for i in 0..q {
                for j in 0..q {
                    jac[i][j] -= v[i] * s * g[j];
                }
            }
        }
        for row in jac.iter_mut() {
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        let mut rhs: Vec<f64> = eq.iter().map(|v| -v).collect();
        let step = linalg::solve(&mut jac, &mut rhs).map_err(|_| Error::Singular {
            t: f64::NAN,
            detail: "rank-deficient Jacobian in the estimating equation".into(),
        })?;
        // backtracking on the squared equation norm
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1e-10 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| t + lambda * s)
                .collect();
            let eq_c = eq_at(&cand);
            let n2 = norm2(&eq_c);
            if n2 < best * (1.0 - 1e-4 * lambda) || n2 < opts.gtol * opts.gtol {
                theta = cand;
                eq = eq_c;
                best = n2;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: iter,
                equation_norm: best.sqrt(),
                last_iterate: theta,
            });
        }
    }
    if best.sqrt() <= opts.gtol {
        Ok(FitResult {
            theta_hat: theta,
            sigma_hat: None,
            iterations: opts.max_iter,
            converged: true,
            final_gradient_norm: best.sqrt(),
            possibly_nonunique: phi.df.is_none(),
        })
    } else {
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            equation_norm: best.sqrt(),
            last_iterate: theta,
        })
    }
}

/// Maximum likelihood under the null error law: solves
/// `sum grad_mu(X_i) psi_f(eps_i(theta)) = 0`. With Gaussian errors this is
/// nonlinear least squares.
pub fn fit_mle(
    model: &RegressionModel,
    err: &ErrorModel,
    data: &Dataset,
    opts: &FitOptions,
) -> Result<FitResult> {
    // for the Gaussian the score slope is -1 exactly; otherwise secant
    let phi = if err.is_gaussian() {
        let e = err.clone();
        PhiFn::smooth(move |y| e.score(y), |_| -1.0)
    } else {
        let e = err.clone();
        PhiFn {
            f: Arc::new(move |y| e.score(y)),
            df: None,
        }
    };
    let m = model.clone();
    solve_equation(
        model,
        data,
        &move |x, th| m.grad_mu(x, th),
        &phi,
        0.0,
        opts,
    )
}

/// General M-estimator: root of
/// `sum eta(X_i, theta) [phi(eps_i(theta)) - int phi dF] = 0`.
/// `err` supplies the compensator `int phi dF`; pass `None` for a mean-zero
/// score.
pub fn fit_mestimator(
    model: &RegressionModel,
    data: &Dataset,
    eta: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    phi: &PhiFn,
    err: Option<&ErrorModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let center = match err {
        Some(e) => {
            let (lo, hi) = e.support_range();
            quad::integrate(&|y| (phi.f)(y) * e.pdf(y), lo, hi, 1e-10)
        }
        None => 0.0,
    };
    solve_equation(model, data, eta, phi, center, opts)
}

/// Nonlinear least squares: the M-estimator with `eta = grad_mu`,
/// `phi(y) = y`.
pub fn fit_least_squares(
    model: &RegressionModel,
    data: &Dataset,
    opts: &FitOptions,
) -> Result<FitResult> {
    let m = model.clone();
    solve_equation(
        model,
        data,
        &move |x, th| m.grad_mu(x, th),
        &PhiFn::identity(),
        0.0,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::gaussian_model;
    use crate::rng::{mix_seed, SeedStream};

    fn zero_noise_linear() -> (RegressionModel, Dataset) {
        let model = RegressionModel::linear(2);
        let theta = [1.5, -0.75];
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64) / 5.0 - 2.0, ((3 * i + 1) as f64).sin()])
            .collect();
        let ys = xs
            .iter()
            .map(|x| theta[0] * x[0] + theta[1] * x[1])
            .collect();
        (model, Dataset::new(xs, ys).unwrap())
    }

    #[test]
    fn zero_noise_exact_recovery() {
        let (model, data) = zero_noise_linear();
        let err = gaussian_model();
        let fit = fit_mle(&model, &err, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - 1.5).abs() < 1e-10);
        assert!((fit.theta_hat[1] + 0.75).abs() < 1e-10);
        let res = residuals(&model, &fit.theta_hat, &data);
        assert!(res.iter().all(|e| e.abs() < 1e-8));
    }

    #[test]
    fn residuals_single_point() {
        let model = RegressionModel::linear(1);
        let data = Dataset::new(vec![vec![1.0]], vec![3.0]).unwrap();
        let r = residuals(&model, &[1.0], &data);
        assert_eq!(r, vec![2.0]);
    }

    #[test]
    fn scale_examples() {
        assert!((fit_scale(&[1.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((fit_scale(&[0.0, 0.0, 3.0]).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!(fit_scale(&[0.0, 0.0]).is_err());
        assert!(fit_scale(&[1.0]).is_err());
    }

    #[test]
    fn scale_monte_carlo() {
        let m = gaussian_model();
        let mut s = SeedStream::new(mix_seed(99, 0));
        let draws: Vec<f64> = (0..10_000).map(|_| 2.0 * m.sample(&mut s)).collect();
        let sig = fit_scale(&draws).unwrap();
        assert!(sig > 1.94 && sig < 2.06, "{sig}");
    }

    #[test]
    fn mle_equals_least_squares_for_gaussian() {
        let model = RegressionModel::exponential();
        let err = gaussian_model();
        let mut s = SeedStream::new(7);
        let xs: Vec<Vec<f64>> = (0..60).map(|_| vec![2.0 + 2.0 * s.uniform()]).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| (0.25 * x[0]).exp() + err.quantile(s.uniform()))
            .collect();
        let data = Dataset::new(xs, ys).unwrap();
        let a = fit_mle(&model, &err, &data, &FitOptions::default()).unwrap();
        let b = fit_least_squares(&model, &data, &FitOptions::default()).unwrap();
        assert!((a.theta_hat[0] - b.theta_hat[0]).abs() < 1e-8);
        assert!(a.final_gradient_norm <= 1e-8);
    }

    #[test]
    fn exponential_monte_carlo_mean() {
        // X ~ U[2,4], true theta 0.25, Gaussian noise, n = 400: the average
        // of the MLE over 200 seeded replications recovers theta to 0.01
        let model = RegressionModel::exponential();
        let err = gaussian_model();
        let mut sum = 0.0;
        let reps = 200;
        for rep in 0..reps {
            let mut s = SeedStream::new(mix_seed(2024, rep));
            let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![2.0 + 2.0 * s.uniform()]).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| (0.25 * x[0]).exp() + err.quantile(s.uniform()))
                .collect();
            let data = Dataset::new(xs, ys).unwrap();
            let fit = fit_mle(&model, &err, &data, &FitOptions::default()).unwrap();
            sum += fit.theta_hat[0];
        }
        let mean = sum / reps as f64;
        assert!((mean - 0.25).abs() < 0.01, "{mean}");
    }

    #[test]
    fn mestimator_ols_identity() {
        let (model, mut_data) = zero_noise_linear();
        let mut data = mut_data;
        // perturb responses so the fit is not the interpolant
        for (i, y) in data.ys.iter_mut().enumerate() {
            *y += if i % 2 == 0 { 0.25 } else { -0.25 };
        }
        let m = model.clone();
        let fit = fit_mestimator(
            &model,
            &data,
            &move |x, th| m.grad_mu(x, th),
            &PhiFn::identity(),
            None,
            &FitOptions::default(),
        )
        .unwrap();
        let b = fit_least_squares(&model, &data, &FitOptions::default()).unwrap();
        for j in 0..2 {
            assert!((fit.theta_hat[j] - b.theta_hat[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn mestimator_sign_gives_median() {
        // location model mu = theta, phi = sign: any root of the estimating
        // equation lies in the sample-median interval
        let model = RegressionModel::new(1, 1, |_, th| th[0], |_, _| vec![1.0]);
        let ys = vec![-2.0, -0.4, 0.1, 0.3, 2.2, 5.0];
        let sign = |y: f64| {
            if y > 0.0 {
                1.0
            } else if y < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        // brute-force root scan oracle over a theta grid
        let eq = |th: f64| ys.iter().map(|y| sign(y - th)).sum::<f64>() / ys.len() as f64;
        let mut root_lo = f64::INFINITY;
        let mut root_hi = f64::NEG_INFINITY;
        let mut k = -3000i64;
        while k <= 6000 {
            let th = k as f64 * 1e-3;
            if eq(th).abs() < 1e-12 {
                root_lo = root_lo.min(th);
                root_hi = root_hi.max(th);
            }
            k += 1;
        }
        assert!((root_lo - 0.1).abs() < 2e-3 && (root_hi - 0.3).abs() < 2e-3);
        let xs = vec![vec![0.0]; 6];
        let data = Dataset::new(xs, ys.clone()).unwrap();
        let fit = fit_mestimator(
            &model,
            &data,
            &|_, _| vec![1.0],
            &PhiFn::nonsmooth(sign),
            None,
            &FitOptions {
                start: Some(vec![0.0]),
                gtol: 1e-8,
                max_iter: 300,
            },
        )
        .unwrap();
        assert!(fit.possibly_nonunique);
        let th = fit.theta_hat[0];
        assert!(
            th >= root_lo - 2e-3 && th <= root_hi + 2e-3,
            "root {th} outside oracle interval [{root_lo}, {root_hi}]"
        );
    }

    #[test]
    fn gradient_check_and_gram() {
        let model = RegressionModel::exponential();
        assert!(model.check_gradient(&[2.5], &[0.25]));
        let (lin, data) = zero_noise_linear();
        assert!(lin.gram_min_eigenvalue(&data, &[0.0, 0.0]) > 1e-10);
    }

    #[test]
    fn determinism_same_seed() {
        let model = RegressionModel::exponential();
        let err = gaussian_model();
        let run = || {
            let mut s = SeedStream::new(555);
            let xs: Vec<Vec<f64>> = (0..50).map(|_| vec![2.0 + 2.0 * s.uniform()]).collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| (0.25 * x[0]).exp() + err.quantile(s.uniform()))
                .collect();
            let data = Dataset::new(xs, ys).unwrap();
            fit_mle(&model, &err, &data, &FitOptions::default())
                .unwrap()
                .theta_hat[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
