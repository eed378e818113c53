//! Marginal likelihood of the two-level model and its maximisation.
//!
//! `β` is profiled out by generalised least squares. The remaining covariance
//! parameters are optimised as `φ = (vech L, log σ²)` with `Ψ = LL'`, which
//! keeps `Ψ` PSD everywhere and turns a zero-variance boundary into a smooth
//! interior point of `φ`-space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataio::DesignSet;
use crate::fisher::{symmetrize, unvech, vech, ClusterWorkspace};
use crate::optim::{self, Minimum, Settings};
use crate::{Error, Result};

/// Model parameters `(β, Ψ, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub sigma2: f64,
}

impl Theta {
    pub fn new(beta: DVector<f64>, psi: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let t = Theta { beta, psi, sigma2 };
        t.validate()?;
        Ok(t)
    }

    /// Random-intercept-and-slope parameters for `q = 2`.
    pub fn with_tau(beta: Vec<f64>, tau0sq: f64, tau1sq: f64, tau01: f64, sigma2: f64) -> Result<Self> {
        Theta::new(
            DVector::from_vec(beta),
            DMatrix::from_row_slice(2, 2, &[tau0sq, tau01, tau01, tau1sq]),
            sigma2,
        )
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.psi.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.psi.nrows();
        if self.psi.ncols() != q {
            return Err(Error::InvalidTheta("Ψ is not square".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidTheta(format!("σ² = {} must be positive", self.sigma2)));
        }
        if self.psi.iter().chain(self.beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTheta("non-finite entry".into()));
        }
        let scale = self.psi.amax().max(1.0);
        for i in 0..q {
            for j in 0..i {
                if (self.psi[(i, j)] - self.psi[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidTheta("Ψ is not symmetric".into()));
                }
            }
        }
        let min_eig = self
            .psi
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if q > 0 && min_eig < -1e-10 * self.psi.trace().max(0.0) {
            return Err(Error::InvalidTheta(format!(
                "Ψ is not PSD (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    pub(crate) fn check_dims(&self, designs: &DesignSet) -> Result<()> {
        if self.p() != designs.p() || self.q() != designs.q() {
            return Err(Error::Dimension(format!(
                "θ has p = {}, q = {} but the design has p = {}, q = {}",
                self.p(),
                self.q(),
                designs.p(),
                designs.q()
            )));
        }
        Ok(())
    }

    /// `ρ = (vech Ψ, σ²)`.
    pub fn rho(&self) -> DVector<f64> {
        let v = vech(&self.psi);
        DVector::from_iterator(v.len() + 1, v.iter().copied().chain([self.sigma2]))
    }
}

impl Serialize for Theta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let psi: Vec<Vec<f64>> = self
            .psi
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let mut st = s.serialize_struct("Theta", 3)?;
        st.serialize_field("beta", self.beta.as_slice())?;
        st.serialize_field("psi", &psi)?;
        st.serialize_field("sigma2", &self.sigma2)?;
        st.end()
    }
}

/// `V = ZΨZ' + σ²I`.
pub fn marginal_cov(z: &DMatrix<f64>, psi: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let n = z.nrows();
    let mut v = z * psi * z.transpose() + DMatrix::identity(n, n) * sigma2;
    symmetrize(&mut v);
    v
}

/// Per-cluster residual summaries at a given `β`.
struct Residual {
    /// r'r
    rr: f64,
    /// G⁻¹Z'r
    a0: DVector<f64>,
    /// Z'r
    u: DVector<f64>,
}

fn residual(c: &crate::dataio::ClusterDesign, beta: &DVector<f64>) -> Residual {
    let rr = c.yty - 2.0 * beta.dot(&c.xty) + (beta.transpose() * &c.xtx * beta)[(0, 0)];
    let u = &c.zty - c.xtz.transpose() * beta;
    let g_inv = c
        .ztz
        .clone()
        .cholesky()
        .expect("Z has full column rank")
        .inverse();
    Residual {
        rr,
        a0: g_inv * &u,
        u,
    }
}

/// Marginal log-likelihood `Σ_j log N(y_j; X_jβ, V_j)`.
pub fn log_likelihood(designs: &DesignSet, theta: &Theta) -> Result<f64> {
    theta.validate()?;
    theta.check_dims(designs)?;
    let mut ll = 0.0;
    for c in designs.clusters() {
        let w = ClusterWorkspace::new(c, &theta.psi, theta.sigma2)?;
        let r = residual(c, &theta.beta);
        let quad = (r.rr - r.u.dot(&r.a0)) / theta.sigma2 + r.a0.dot(&w.m_solve_vec(&r.a0));
        ll -= 0.5 * (c.n() as f64 * (2.0 * PI).ln() + w.logdet_v() + quad);
    }
    Ok(ll)
}

impl ClusterWorkspace {
    fn m_solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.m_solve(&m).as_slice())
    }
}

/// GLS estimate of `β` given the covariance parameters.
pub fn gls_beta(designs: &DesignSet, psi: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    Ok(profile(designs, psi, sigma2, false)?.beta)
}

struct Profiled {
    loglik: f64,
    beta: DVector<f64>,
    grad_psi: DMatrix<f64>,
    grad_sigma2: f64,
}

/// Log-likelihood at the GLS `β̂(Ψ, σ²)` and, optionally, its gradient with
/// respect to the free entries of symmetric `Ψ` and to `σ²`. By the envelope
/// theorem the gradient needs no `∂β̂` term.
fn profile(designs: &DesignSet, psi: &DMatrix<f64>, sigma2: f64, want_grad: bool) -> Result<Profiled> {
    let (p, q) = (designs.p(), designs.q());
    let ws = designs
        .clusters()
        .iter()
        .map(|c| ClusterWorkspace::new(c, psi, sigma2))
        .collect::<Result<Vec<_>>>()?;

    let mut xvx = DMatrix::zeros(p, p);
    let mut xvy = DVector::zeros(p);
    for (c, w) in designs.clusters().iter().zip(&ws) {
        xvx += w.x_vinv_x();
        let g_inv = w.g_inv();
        let a = &g_inv * &c.zty;
        let b = &g_inv * w.m_solve_vec(&a);
        xvy += (&c.xty - &c.xtz * &a) / sigma2 + &c.xtz * b;
    }
    let beta = xvx
        .cholesky()
        .ok_or(Error::SingularInformation {
            block: "fixed-effect",
            min_eigenvalue: 0.0,
        })?
        .solve(&xvy);

    let mut loglik = 0.0;
    let mut grad_psi = DMatrix::zeros(q, q);
    let mut grad_sigma2 = 0.0;
    for (c, w) in designs.clusters().iter().zip(&ws) {
        let r = residual(c, &beta);
        let within = r.rr - r.u.dot(&r.a0);
        let aj = w.m_solve_vec(&r.a0);
        let quad = within / sigma2 + r.a0.dot(&aj);
        loglik -= 0.5 * (c.n() as f64 * (2.0 * PI).ln() + w.logdet_v() + quad);
        if want_grad {
            grad_psi += (&aj * aj.transpose() - w.z_vinv_z()) * 0.5;
            let vr2 = within / (sigma2 * sigma2) + aj.dot(&(w.g_inv() * &aj));
            grad_sigma2 += 0.5 * (vr2 - w.trace_vinv());
        }
    }
    symmetrize(&mut grad_psi);
    Ok(Profiled {
        loglik,
        beta,
        grad_psi,
        grad_sigma2,
    })
}

fn lower_from_vech(v: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = unvech(v, q);
    for j in 0..q {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    l
}

fn unpack(phi: &DVector<f64>, q: usize) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let qs = q * (q + 1) / 2;
    let l = lower_from_vech(&phi.as_slice()[..qs], q);
    let psi = &l * l.transpose();
    (l, psi, phi[qs].exp())
}

/// `-loglik` and its gradient in `φ` coordinates.
fn objective(designs: &DesignSet, phi: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let q = designs.q();
    let (l, psi, sigma2) = unpack(phi, q);
    let pr = profile(designs, &psi, sigma2, true)?;
    let gl = vech(&(&pr.grad_psi * &l * 2.0));
    let mut g = DVector::zeros(phi.len());
    for (k, v) in gl.iter().enumerate() {
        g[k] = -v;
    }
    g[phi.len() - 1] = -pr.grad_sigma2 * sigma2;
    Ok((-pr.loglik, g))
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    /// Variances below this fraction of the response variance are flagged as
    /// boundary estimates.
    pub boundary_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            rel_tol: 1e-10,
            grad_tol: 1e-6,
            boundary_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub loglik: f64,
    pub deviance: f64,
    pub converged: bool,
    /// Euclidean norm of the log-likelihood gradient in `(vech L, log σ²)`.
    pub gradient_norm: f64,
    /// One flag per random effect (conditional variance `L_kk²` at the lower
    /// bound) followed by one for `σ²`.
    pub boundary_flags: Vec<bool>,
    pub hessian_indefinite: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn any_boundary(&self) -> bool {
        self.boundary_flags.iter().any(|&b| b)
    }
}

/// Deterministic starting values: OLS `β`, pooled within-cluster residual
/// variance for `σ²`, and a moment estimate of `Ψ` from per-cluster
/// regressions of the OLS residuals on `Z_j`, floored to be positive definite.
pub fn initial_theta(designs: &DesignSet) -> Result<Theta> {
    let (p, q) = (designs.p(), designs.q());
    let j = designs.n_clusters();
    let n = designs.n_obs();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for c in designs.clusters() {
        xtx += &c.xtx;
        xty += &c.xty;
    }
    let beta = xtx
        .cholesky()
        .ok_or(Error::SingularInformation {
            block: "fixed-effect",
            min_eigenvalue: 0.0,
        })?
        .solve(&xty);

    let mut ss_within = 0.0;
    let mut ss_total = 0.0;
    let mut b_sum = DVector::zeros(q);
    let mut b_outer = DMatrix::zeros(q, q);
    let mut g_inv_sum = DMatrix::zeros(q, q);
    for c in designs.clusters() {
        let r = residual(c, &beta);
        ss_within += (r.rr - r.u.dot(&r.a0)).max(0.0);
        ss_total += r.rr.max(0.0);
        b_sum += &r.a0;
        b_outer += &r.a0 * r.a0.transpose();
        g_inv_sum += c.ztz.clone().cholesky().expect("Z full rank").inverse();
    }
    let dof = n as f64 - (j * q) as f64;
    let sigma2 = if dof > 0.0 && ss_within > 0.0 {
        ss_within / dof
    } else {
        (ss_total / (n as f64 - p as f64).max(1.0)).max(1e-8)
    };
    let jf = j as f64;
    let mean_b = &b_sum / jf;
    let mut psi = &b_outer / jf - &mean_b * mean_b.transpose() - &g_inv_sum * (sigma2 / jf);
    symmetrize(&mut psi);

    let floor = 0.05 * sigma2 * g_inv_sum.trace() / (jf * q as f64);
    let eig = psi.symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let mut psi = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut psi);
    Theta::new(beta, psi, sigma2)
}

fn pack(theta: &Theta) -> Result<DVector<f64>> {
    let q = theta.q();
    let mut psi = theta.psi.clone();
    // keep the starting point off the L = 0 saddle
    let tr = psi.trace().max(1e-12 * theta.sigma2);
    for k in 0..q {
        psi[(k, k)] += 1e-6 * tr / q as f64;
    }
    let l = psi
        .cholesky()
        .ok_or_else(|| Error::InvalidTheta("initial Ψ not PD".into()))?
        .l();
    let v = vech(&l);
    Ok(DVector::from_iterator(
        v.len() + 1,
        v.iter().copied().chain([theta.sigma2.ln()]),
    ))
}

/// Maximum-likelihood fit with default options.
pub fn fit_ml(designs: &DesignSet, init: Option<&Theta>) -> Result<FitResult> {
    fit_ml_with(designs, init, &FitOptions::default())
}

pub fn fit_ml_with(designs: &DesignSet, init: Option<&Theta>, opts: &FitOptions) -> Result<FitResult> {
    let (p, q) = (designs.p(), designs.q());
    let qs = q * (q + 1) / 2;
    let needed = p + qs + 1;
    if designs.n_obs() <= needed {
        return Err(Error::TooFewObservations {
            n: designs.n_obs(),
            needed,
        });
    }
    let start = match init {
        Some(t) => {
            t.validate()?;
            t.check_dims(designs)?;
            t.clone()
        }
        None => initial_theta(designs)?,
    };

    let settings = Settings {
        max_iter: opts.max_iter,
        rel_tol: opts.rel_tol,
        grad_tol: opts.grad_tol,
    };
    let obj = |phi: &DVector<f64>| objective(designs, phi);
    let m: Minimum = optim::bfgs(obj, pack(&start)?, &settings)?;
    let mut m = optim::newton_polish(obj, m, &settings, 25);

    // canonical Cholesky factor: nonnegative diagonal
    let (mut l, _, _) = unpack(&m.x, q);
    for k in 0..q {
        if l[(k, k)] < 0.0 {
            let col = -l.column(k);
            l.set_column(k, &col);
        }
    }
    let var_y = designs.response_variance().max(1e-300);
    let mut boundary_flags: Vec<bool> = (0..q)
        .map(|k| l[(k, k)].powi(2) < opts.boundary_tol * var_y)
        .collect();
    for (k, &flag) in boundary_flags.iter().enumerate() {
        if flag {
            l[(k, k)] = 0.0;
        }
    }
    let lv = vech(&l);
    m.x.as_mut_slice()[..qs].copy_from_slice(lv.as_slice());
    let (_, psi, sigma2) = unpack(&m.x, q);
    boundary_flags.push(sigma2 < opts.boundary_tol * var_y);

    let hessian_indefinite = optim::fd_hessian(&mut |x: &DVector<f64>| objective(designs, x), &m.x)
        .map(|h| {
            let ev = h.symmetric_eigenvalues();
            let scale = ev.amax().max(1e-300);
            ev.iter().any(|&v| v < -1e-6 * scale)
        })
        .unwrap_or(true);

    let pr = profile(designs, &psi, sigma2, false)?;
    let gradient_norm = objective(designs, &m.x)?.1.norm();
    let at_boundary = boundary_flags.iter().any(|&b| b);
    let converged = (gradient_norm < opts.grad_tol || at_boundary) && !hessian_indefinite;

    let theta_hat = Theta {
        beta: pr.beta,
        psi,
        sigma2,
    };
    Ok(FitResult {
        loglik: pr.loglik,
        deviance: -2.0 * pr.loglik,
        theta_hat,
        converged,
        gradient_norm,
        boundary_flags,
        hessian_indefinite,
        iterations: m.iterations,
    })
}

/// Gradient of the profiled log-likelihood in `φ = (vech L, log σ²)` at a
/// given `Ψ`, `σ²`.
pub fn profiled_gradient(designs: &DesignSet, psi: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let l = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidTheta("Ψ not PD".into()))?
        .l();
    let v = vech(&l);
    let phi = DVector::from_iterator(v.len() + 1, v.iter().copied().chain([sigma2.ln()]));
    Ok(-objective(designs, &phi)?.1)
}

/// Gradient of the log-likelihood with respect to `(vech Ψ, σ²)` at the GLS
/// `β̂(Ψ, σ²)`. Off-diagonal entries of `Ψ` appear once in `vech`, so their
/// derivative is twice the symmetric-matrix gradient entry.
pub fn profiled_gradient_rho(designs: &DesignSet, psi: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let q = designs.q();
    let pr = profile(designs, psi, sigma2, true)?;
    let mut out = Vec::with_capacity(q * (q + 1) / 2 + 1);
    for j in 0..q {
        for i in j..q {
            out.push(if i == j { pr.grad_psi[(i, j)] } else { 2.0 * pr.grad_psi[(i, j)] });
        }
    }
    out.push(pr.grad_sigma2);
    Ok(DVector::from_vec(out))
}

/// Profiled log-likelihood `max_β loglik(β, Ψ, σ²)`.
pub fn profiled_loglik(designs: &DesignSet, psi: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
    Ok(profile(designs, psi, sigma2, false)?.loglik)
}

/// Intraclass correlation `τ0² / (τ0² + σ²)` of a random-intercept model.
pub fn icc(theta: &Theta) -> Result<f64> {
    if theta.q() != 1 {
        return Err(Error::InvalidTheta(format!(
            "ICC needs a single random intercept, model has q = {}",
            theta.q()
        )));
    }
    let tau = theta.psi[(0, 0)].max(0.0);
    Ok(tau / (tau + theta.sigma2))
}
