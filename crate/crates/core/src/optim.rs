//! Quasi-Newton (BFGS) minimization with central-difference gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when the gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// ... or when the objective improves by less than this (relative).
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-7,
            f_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gradient(f: &impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Minimize `f` from `x0`. Non-finite objective values are treated as
/// infeasible by the line search.
pub fn minimize(f: impl Fn(&DVector<f64>) -> f64, x0: DVector<f64>, opts: &BfgsOptions) -> Minimum {
    let k = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = gradient(&f, &x);
    let mut h_inv = DMatrix::identity(k, k);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;
        if g.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(k, k);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * step;
            let fn_ = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // No descent along the quasi-Newton direction: retry from steepest
            // descent once, then give up.
            if h_inv != DMatrix::identity(k, k) {
                h_inv = DMatrix::identity(k, k);
                continue;
            }
            converged = g.amax() < opts.grad_tol.sqrt();
            break;
        };
        let gn = gradient(&f, &xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let improvement = fx - fn_;
        x = xn;
        g = gn;
        let small_change = improvement.abs() <= opts.f_tol * fx.abs().max(1.0);
        fx = fn_;
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
        if small_change && g.amax() < opts.grad_tol.sqrt() {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations,
        converged,
    }
}
