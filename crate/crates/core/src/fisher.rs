//! Expected Fisher information of the two-level model.
//!
//! Everything is expressed through the `q × q` matrix
//! `M_j = (σ²/n_j)·S_ZZ⁻¹ + Ψ`, which stays positive definite for any PSD `Ψ`
//! as long as `σ² > 0`. With `G_j = Z_j'Z_j` the identities used are
//!
//! ```text
//! V⁻¹       = (I − Z G⁻¹ Z')/σ² + Z G⁻¹ M⁻¹ G⁻¹ Z'
//! Z'V⁻¹Z    = M⁻¹
//! Z'V⁻²Z    = M⁻¹ G⁻¹ M⁻¹
//! tr V⁻²    = (n − q)/σ⁴ + tr{(M⁻¹G⁻¹)²}
//! log|V|    = (n − q)·log σ² + log|M| + log|G|
//! ```
//!
//! The covariance block is laid out over `ρ = (vech Ψ, σ²)` with `vech` taken
//! column-major over the lower triangle: `(1,1), (2,1), …, (q,1), (2,2), …`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataio::{ClusterDesign, DesignSet};
use crate::lmmfit::Theta;
use crate::{Error, Result};

/// Per-cluster scaled cross-products and the factorised `M_j`.
#[derive(Debug, Clone)]
pub struct ClusterWorkspace {
    pub n: usize,
    pub sigma2: f64,
    pub s_xx: DMatrix<f64>,
    pub s_xz: DMatrix<f64>,
    pub s_zz: DMatrix<f64>,
    s_zz_inv: DMatrix<f64>,
    logdet_szz: f64,
    m_chol: Cholesky<f64, Dyn>,
    m_inv: DMatrix<f64>,
}

impl ClusterWorkspace {
    pub fn new(cluster: &ClusterDesign, psi: &DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let n = cluster.n();
        let s_zz = cluster.s_zz();
        let s_zz_chol = s_zz
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("S_ZZ of `{}` not PD", cluster.label)))?;
        let logdet_szz = chol_logdet(&s_zz_chol);
        let s_zz_inv = s_zz_chol.inverse();
        let mut m = &s_zz_inv * (sigma2 / n as f64) + psi;
        symmetrize(&mut m);
        let m_chol = m
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("M of `{}` not PD", cluster.label)))?;
        let m_inv = m_chol.inverse();
        Ok(ClusterWorkspace {
            n,
            sigma2,
            s_xx: cluster.s_xx(),
            s_xz: cluster.s_xz(),
            s_zz,
            s_zz_inv,
            logdet_szz,
            m_chol,
            m_inv,
        })
    }

    pub fn q(&self) -> usize {
        self.s_zz.nrows()
    }

    /// `(Z'Z)⁻¹`.
    pub fn g_inv(&self) -> DMatrix<f64> {
        &self.s_zz_inv / self.n as f64
    }

    /// `Z'V⁻¹Z = M⁻¹`.
    pub fn z_vinv_z(&self) -> &DMatrix<f64> {
        &self.m_inv
    }

    /// `Z'V⁻²Z = M⁻¹ G⁻¹ M⁻¹`.
    pub fn z_vinv2_z(&self) -> DMatrix<f64> {
        let mut out = &self.m_inv * self.g_inv() * &self.m_inv;
        symmetrize(&mut out);
        out
    }

    pub fn trace_vinv(&self) -> f64 {
        let q = self.q() as f64;
        (self.n as f64 - q) / self.sigma2 + (&self.m_inv * self.g_inv()).trace()
    }

    pub fn trace_vinv2(&self) -> f64 {
        let q = self.q() as f64;
        let mg = &self.m_inv * self.g_inv();
        (self.n as f64 - q) / (self.sigma2 * self.sigma2) + (&mg * &mg).trace()
    }

    /// `X'V⁻¹X = (n/σ²)(S_XX − S_XZ S_ZZ⁻¹ S_ZX) + S_XZ S_ZZ⁻¹ M⁻¹ S_ZZ⁻¹ S_ZX`.
    pub fn x_vinv_x(&self) -> DMatrix<f64> {
        let b = &self.s_xz * &self.s_zz_inv;
        let within = &self.s_xx - &b * self.s_xz.transpose();
        let mut out = within * (self.n as f64 / self.sigma2) + &b * &self.m_inv * b.transpose();
        symmetrize(&mut out);
        out
    }

    pub fn logdet_m(&self) -> f64 {
        chol_logdet(&self.m_chol)
    }

    /// `log|V_j|` by the determinant lemma.
    pub fn logdet_v(&self) -> f64 {
        let q = self.q();
        let logdet_g = q as f64 * (self.n as f64).ln() + self.logdet_szz;
        (self.n - q) as f64 * self.sigma2.ln() + self.logdet_m() + logdet_g
    }

    pub fn m_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.m_chol.solve(b)
    }
}

pub(crate) fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `V⁻¹B` for `V = ZΨZ' + σ²I`, without forming or inverting `V`.
///
/// With a thin QR `Z = QR` this is `(B − QQ'B)/σ² + Q(σ²I + RΨR')⁻¹Q'B`,
/// which never inverts `Z'Z` and accepts a singular `Ψ`.
pub fn woodbury_apply(
    z: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    sigma2: f64,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, q) = z.shape();
    if n < q {
        return Err(Error::Dimension(format!("Z is {n} × {q}; need at least as many rows as columns")));
    }
    let qr = z.clone().qr();
    let (qm, r) = (qr.q(), qr.r());
    let mut inner = &r * psi * r.transpose();
    for k in 0..q {
        inner[(k, k)] += sigma2;
    }
    symmetrize(&mut inner);
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::Numerical("σ²I + RΨR' not PD".into()))?;
    let a = qm.transpose() * b;
    let w = chol.solve(&a);
    Ok((b - &qm * &a) / sigma2 + &qm * w)
}

/// `q² × q(q+1)/2` matrix with `D_q · vech(A) = vec(A)` for symmetric `A`.
pub fn duplication_matrix(q: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(q * q, q * (q + 1) / 2);
    let mut k = 0;
    for j in 0..q {
        for i in j..q {
            d[(i + j * q, k)] = 1.0;
            d[(j + i * q, k)] = 1.0;
            k += 1;
        }
    }
    d
}

/// Column-major lower-triangle stacking.
pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let q = a.nrows();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for j in 0..q {
        for i in j..q {
            out.push(a[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vech`] for symmetric matrices.
pub fn unvech(v: &[f64], q: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(q, q);
    let mut k = 0;
    for j in 0..q {
        for i in j..q {
            a[(i, j)] = v[k];
            a[(j, i)] = v[k];
            k += 1;
        }
    }
    a
}

fn workspaces(designs: &DesignSet, theta: &Theta) -> Result<Vec<ClusterWorkspace>> {
    theta.check_dims(designs)?;
    designs
        .clusters()
        .iter()
        .map(|c| ClusterWorkspace::new(c, &theta.psi, theta.sigma2))
        .collect()
}

/// `Σ_j X_j'V_j⁻¹X_j`.
pub fn info_fixed(designs: &DesignSet, theta: &Theta) -> Result<DMatrix<f64>> {
    let p = designs.p();
    Ok(workspaces(designs, theta)?
        .iter()
        .fold(DMatrix::zeros(p, p), |acc, w| acc + w.x_vinv_x()))
}

fn info_random_from(ws: &[ClusterWorkspace], q: usize) -> DMatrix<f64> {
    let qs = q * (q + 1) / 2;
    let d = duplication_matrix(q);
    let dt = d.transpose();
    let mut info = DMatrix::zeros(qs + 1, qs + 1);
    for w in ws {
        let a = w.z_vinv_z();
        let psi_psi = &dt * a.kronecker(a) * &d * 0.5;
        let b = w.z_vinv2_z();
        let vec_b = DVector::from_column_slice(b.as_slice());
        let psi_s2 = &dt * vec_b * 0.5;
        info.view_mut((0, 0), (qs, qs)).add_assign(&psi_psi);
        for k in 0..qs {
            info[(k, qs)] += psi_s2[k];
            info[(qs, k)] += psi_s2[k];
        }
        info[(qs, qs)] += 0.5 * w.trace_vinv2();
    }
    info
}

use std::ops::AddAssign;

/// Information over `ρ = (vech Ψ, σ²)`.
pub fn info_random(designs: &DesignSet, theta: &Theta) -> Result<DMatrix<f64>> {
    Ok(info_random_from(&workspaces(designs, theta)?, designs.q()))
}

/// Fixed-effect and covariance-parameter information blocks with their
/// log-determinants. The full information is block diagonal, so
/// `log|A| = logdet_bb + logdet_rr`.
#[derive(Debug, Clone)]
pub struct InfoBlocks {
    pub i_bb: DMatrix<f64>,
    pub i_rr: DMatrix<f64>,
    pub logdet_bb: f64,
    pub logdet_rr: f64,
}

impl InfoBlocks {
    pub fn logdet(&self) -> f64 {
        self.logdet_bb + self.logdet_rr
    }
}

/// Blocks whose smallest eigenvalue is below this fraction of the largest are
/// treated as singular.
pub const SINGULAR_REL_TOL: f64 = 1e-13;

fn block_logdet(m: &DMatrix<f64>, block: &'static str) -> Result<f64> {
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_eigenvalue = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = Error::SingularInformation {
        block,
        min_eigenvalue,
    };
    if !(max > 0.0) || min_eigenvalue <= SINGULAR_REL_TOL * max {
        return Err(singular);
    }
    m.clone()
        .cholesky()
        .map(|c| chol_logdet(&c))
        .ok_or(singular)
}

pub fn info_blocks(designs: &DesignSet, theta: &Theta) -> Result<InfoBlocks> {
    let ws = workspaces(designs, theta)?;
    let p = designs.p();
    let i_bb = ws
        .iter()
        .fold(DMatrix::zeros(p, p), |acc, w| acc + w.x_vinv_x());
    let i_rr = info_random_from(&ws, designs.q());
    Ok(InfoBlocks {
        logdet_bb: block_logdet(&i_bb, "fixed-effect")?,
        logdet_rr: block_logdet(&i_rr, "covariance-parameter")?,
        i_bb,
        i_rr,
    })
}

/// `(log|I_ββ|, log|I_ρρ|)`.
pub fn logdet_blocks(designs: &DesignSet, theta: &Theta) -> Result<(f64, f64)> {
    let b = info_blocks(designs, theta)?;
    Ok((b.logdet_bb, b.logdet_rr))
}
