//! Small dense quasi-Newton minimiser used by the ML fit.
//!
//! The objective returns `Err` outside its domain (non-PD covariance); the
//! line search treats that as `+∞` and backtracks.

use nalgebra::{DMatrix, DVector};

use crate::fisher::symmetrize;
use crate::Result;

pub(crate) struct Settings {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
}

fn eval<F>(f: &mut F, x: &DVector<f64>) -> Option<(f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    match f(x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Some((v, g)),
        _ => None,
    }
}

/// Backtracking Armijo search along `dir`. Returns the accepted point.
fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    gx: &DVector<f64>,
    dir: &DVector<f64>,
) -> Option<(DVector<f64>, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let slope = gx.dot(dir);
    if slope >= 0.0 {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let xn = x + dir * step;
        if let Some((fv, gv)) = eval(f, &xn) {
            if fv <= fx + 1e-4 * step * slope {
                return Some((xn, fv, gv));
            }
        }
        step *= 0.5;
    }
    None
}

pub(crate) fn bfgs<F>(mut f: F, x0: DVector<f64>, s: &Settings) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut gx) = f(&x0)?;
    let mut x = x0;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut stalls = 0;
    let mut it = 0;

    while it < s.max_iter {
        if gx.norm() < s.grad_tol {
            break;
        }
        let mut dir = -(&h * &gx);
        if first {
            let nd = dir.norm();
            if nd > 1.0 {
                dir /= nd;
            }
        }
        let accepted = line_search(&mut f, &x, fx, &gx, &dir).or_else(|| {
            // fall back to steepest descent once before giving up
            let sd = -&gx / gx.norm().max(1.0);
            line_search(&mut f, &x, fx, &gx, &sd)
        });
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        it += 1;
        let sv = &xn - &x;
        let yv = &gn - &gx;
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            h += (&sv * sv.transpose()) * (rho * rho * yhy + rho)
                - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            symmetrize(&mut h);
        }
        let rel = (fx - fnew).abs() / fx.abs().max(1e-300);
        x = xn;
        fx = fnew;
        gx = gn;
        if rel < s.rel_tol {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok(Minimum {
        x,
        f: fx,
        grad: gx,
        iterations: it,
    })
}

/// Hessian by central differences of the analytic gradient.
pub(crate) fn fd_hessian<F>(f: &mut F, x: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let h = 1e-5 * x[i].abs().max(1.0);
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let (_, gp) = eval(f, &xp)?;
        let (_, gm) = eval(f, &xm)?;
        hess.set_column(i, &((gp - gm) / (2.0 * h)));
    }
    symmetrize(&mut hess);
    Some(hess)
}

/// Damped Newton steps on a finite-difference Hessian with eigenvalues
/// reflected/floored to keep the direction a descent direction.
pub(crate) fn newton_polish<F>(mut f: F, mut m: Minimum, s: &Settings, steps: usize) -> Minimum
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    for _ in 0..steps {
        if m.grad.norm() < s.grad_tol {
            break;
        }
        let Some(hess) = fd_hessian(&mut f, &m.x) else {
            break;
        };
        let eig = hess.symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1e-300);
        let vals = eig
            .eigenvalues
            .map(|l| 1.0 / l.abs().max(1e-10 * scale));
        let dir = -(&eig.eigenvectors
            * DMatrix::from_diagonal(&vals)
            * eig.eigenvectors.transpose()
            * &m.grad);
        // near the optimum the predicted decrease drops below the rounding
        // noise of f, so a full step that shrinks the gradient is accepted
        let noise = 1e-12 * m.f.abs().max(1.0);
        let full = eval(&mut f, &(&m.x + &dir))
            .filter(|(fv, g)| *fv <= m.f + noise && g.norm() < m.grad.norm());
        let Some((x, fv, g)) = full
            .map(|(fv, g)| (&m.x + &dir, fv, g))
            .or_else(|| line_search(&mut f, &m.x, m.f, &m.grad, &dir))
        else {
            break;
        };
        if g.norm() >= m.grad.norm() && fv >= m.f {
            break;
        }
        m = Minimum {
            x,
            f: fv,
            grad: g,
            iterations: m.iterations + 1,
        };
    }
    m
}
