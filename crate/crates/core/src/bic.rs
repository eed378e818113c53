//! Penalty counting and the three BIC variants.
//!
//! The effective-sample-size criterion is
//! `BIC_E = D + K1·log N + K2·log J`, where `K = p + q* + 1` and the split
//! between `K1` and `K2` depends on how much of the fixed-effect design lies
//! inside the column space of the random-effect design (`p2`) and on the rank
//! of the random-effect covariance. With `Ψ` of full rank `K1 = p1 + 1`; with
//! rank `q1 < q`, `K1 = p1 + 1 + q1·q2 + 2·q2*` and `p2` is measured against
//! `Z_j·U1`. `BIC_N` and `BIC_J` charge all `K` parameters at `log N` or
//! `log J` respectively.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataio::{build_designs, Dataset, DesignSet, ModelSpec, Term};
use crate::lmmfit::{fit_ml_with, FitOptions};
use crate::{Error, Result};

/// Default relative eigenvalue threshold for `rank(Ψ̂)` and `rank(S_EE)`.
pub const RANK_TOL: f64 = 1e-8;

/// `Ψ̂` of full rank whose smallest/largest eigenvalue ratio falls below this
/// gets a near-singularity warning.
pub const NEAR_SINGULAR_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyCount {
    pub p: usize,
    pub q: usize,
    pub q_star: usize,
    pub p1: usize,
    pub p2: usize,
    pub q1: usize,
    pub q2: usize,
    pub q2_star: usize,
    #[serde(rename = "K")]
    pub k: i64,
    #[serde(rename = "K1")]
    pub k1: i64,
    #[serde(rename = "K2")]
    pub k2: i64,
    /// `K1` was computed with the rank-deficient formula.
    pub singular: bool,
    /// Smallest over largest eigenvalue of `Ψ̂` (0 when `Ψ̂ = 0`).
    pub psi_eigen_ratio: f64,
}

impl PenaltyCount {
    pub fn near_singular(&self) -> bool {
        !self.singular && self.q > 1 && self.psi_eigen_ratio < NEAR_SINGULAR_RATIO
    }
}

/// Numerical rank of a PSD `Ψ` and an orthonormal basis of its range, with
/// columns ordered by decreasing eigenvalue.
pub fn rank_psi(psi: &DMatrix<f64>, tol: f64) -> (usize, DMatrix<f64>) {
    let q = psi.nrows();
    let eig = psi.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]);
    let cut = tol * top.max(1e-300);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > cut)
        .collect();
    let u1 = DMatrix::from_fn(q, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
    (keep.len(), u1)
}

fn psi_eigen_ratio(psi: &DMatrix<f64>) -> f64 {
    let ev = psi.clone().symmetric_eigenvalues();
    let max = ev.max();
    if max <= 0.0 {
        0.0
    } else {
        (ev.min() / max).max(0.0)
    }
}

/// Dimension of the overlap between the fixed and random design column
/// spaces, `p − rank(Σ_j E_j'E_j)` with `E_j` the residual of `X_j` after
/// projecting on `Z_j` (or on `Z_j·U` when a basis `U` is supplied).
pub fn intersection_dim(designs: &DesignSet, z_basis: Option<&DMatrix<f64>>) -> Result<usize> {
    intersection_dim_tol(designs, z_basis, RANK_TOL)
}

pub fn intersection_dim_tol(
    designs: &DesignSet,
    z_basis: Option<&DMatrix<f64>>,
    tol: f64,
) -> Result<usize> {
    let (p, q) = (designs.p(), designs.q());
    if let Some(u) = z_basis {
        if u.nrows() != q {
            return Err(Error::Dimension(format!(
                "random-design basis has {} rows, expected {q}",
                u.nrows()
            )));
        }
    }
    let mut s_xx = DMatrix::zeros(p, p);
    let mut s_ee = DMatrix::zeros(p, p);
    for c in designs.clusters() {
        s_xx += &c.xtx;
        let (xtz, ztz) = match z_basis {
            Some(u) => (&c.xtz * u, u.transpose() * &c.ztz * u),
            None => (c.xtz.clone(), c.ztz.clone()),
        };
        let mut e = c.xtx.clone();
        if ztz.nrows() > 0 {
            let chol = ztz.cholesky().ok_or_else(|| {
                Error::Numerical(format!("Z'Z not positive definite in cluster {}", c.label))
            })?;
            e -= &xtz * chol.solve(&xtz.transpose());
        }
        s_ee += e;
    }
    // scale columns to unit length so the threshold ignores covariate units
    let d = DVector::from_iterator(p, s_xx.diagonal().iter().map(|v| 1.0 / v.max(1e-300).sqrt()));
    let scale = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] *= d[i] * d[j];
            }
        }
        out
    };
    let top = scale(&s_xx).symmetric_eigenvalues().max();
    let rank = scale(&s_ee)
        .symmetric_eigenvalues()
        .iter()
        .filter(|&&v| v > tol * top)
        .count();
    Ok(p - rank)
}

/// `K1`, `K2` and their ingredients for a fitted candidate.
pub fn count_penalty(designs: &DesignSet, psi_hat: &DMatrix<f64>, tol: f64) -> Result<PenaltyCount> {
    let (p, q) = (designs.p(), designs.q());
    if psi_hat.nrows() != q || psi_hat.ncols() != q {
        return Err(Error::Dimension(format!(
            "Ψ̂ is {}×{}, design has q = {q}",
            psi_hat.nrows(),
            psi_hat.ncols()
        )));
    }
    let q_star = q * (q + 1) / 2;
    let (q1, u1) = rank_psi(psi_hat, tol);
    let singular = q1 < q;
    let p2 = if singular {
        intersection_dim_tol(designs, Some(&u1), tol)?
    } else {
        intersection_dim_tol(designs, None, tol)?
    };
    let p1 = p - p2;
    let q2 = q - q1;
    let q2_star = q2 * (q2 + 1) / 2;
    let k = (p + q_star + 1) as i64;
    let k1 = (p1 + 1 + q1 * q2 + 2 * q2_star) as i64;
    Ok(PenaltyCount {
        p,
        q,
        q_star,
        p1,
        p2,
        q1,
        q2,
        q2_star,
        k,
        k1,
        k2: k - k1,
        singular,
        psi_eigen_ratio: psi_eigen_ratio(psi_hat),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BicValues {
    pub bic_e: f64,
    pub bic_n: f64,
    pub bic_j: f64,
}

/// The three criteria from a deviance and the `K1`/`K2` split.
pub fn bic_from_counts(deviance: f64, k1: i64, k2: i64, n_obs: usize, n_clusters: usize) -> BicValues {
    let ln_n = (n_obs as f64).ln();
    let ln_j = (n_clusters as f64).ln();
    let k = (k1 + k2) as f64;
    BicValues {
        bic_e: deviance + k1 as f64 * ln_n + k2 as f64 * ln_j,
        bic_n: deviance + k * ln_n,
        bic_j: deviance + k * ln_j,
    }
}

pub fn bic_all(deviance: f64, counts: &PenaltyCount, n_obs: usize, n_clusters: usize) -> BicValues {
    bic_from_counts(deviance, counts.k1, counts.k2, n_obs, n_clusters)
}

/// A named list of model terms, e.g. `F5 = [1, gender, texp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSet {
    pub name: String,
    pub terms: Vec<Term>,
}

impl TermSet {
    pub fn new(name: impl Into<String>, terms: Vec<Term>) -> Self {
        TermSet {
            name: name.into(),
            terms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub rank_tol: f64,
    pub fit: FitOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            rank_tol: RANK_TOL,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateRow {
    pub label: String,
    pub fixed: String,
    pub random: String,
    pub deviance: Option<f64>,
    #[serde(rename = "K1")]
    pub k1: Option<i64>,
    #[serde(rename = "K2")]
    pub k2: Option<i64>,
    #[serde(rename = "K")]
    pub k: Option<i64>,
    pub bic_e: Option<f64>,
    pub bic_n: Option<f64>,
    pub bic_j: Option<f64>,
    pub rank_e: Option<usize>,
    pub rank_n: Option<usize>,
    pub rank_j: Option<usize>,
    pub converged: Option<bool>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub penalty: Option<PenaltyCount>,
}

impl CandidateRow {
    fn failed(label: String, fixed: String, random: String, err: impl ToString) -> Self {
        CandidateRow {
            label,
            fixed,
            random,
            deviance: None,
            k1: None,
            k2: None,
            k: None,
            bic_e: None,
            bic_n: None,
            bic_j: None,
            rank_e: None,
            rank_n: None,
            rank_j: None,
            converged: None,
            warnings: Vec::new(),
            error: Some(err.to_string()),
            penalty: None,
        }
    }

    /// True when the three criteria do not agree on this candidate's rank.
    pub fn ranks_disagree(&self) -> bool {
        match (self.rank_e, self.rank_n, self.rank_j) {
            (Some(e), Some(n), Some(j)) => e != n || e != j,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BicReport {
    pub n_obs: usize,
    pub n_clusters: usize,
    pub candidates: Vec<CandidateRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    label: &'a str,
    fixed: &'a str,
    random: &'a str,
    deviance: Option<f64>,
    #[serde(rename = "K1")]
    k1: Option<i64>,
    #[serde(rename = "K2")]
    k2: Option<i64>,
    #[serde(rename = "K")]
    k: Option<i64>,
    bic_e: Option<f64>,
    bic_n: Option<f64>,
    bic_j: Option<f64>,
    rank_e: Option<usize>,
    rank_n: Option<usize>,
    rank_j: Option<usize>,
    converged: Option<bool>,
    warnings: String,
    error: Option<&'a str>,
}

impl BicReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for c in &self.candidates {
            wtr.serialize(CsvRow {
                label: &c.label,
                fixed: &c.fixed,
                random: &c.random,
                deviance: c.deviance,
                k1: c.k1,
                k2: c.k2,
                k: c.k,
                bic_e: c.bic_e,
                bic_n: c.bic_n,
                bic_j: c.bic_j,
                rank_e: c.rank_e,
                rank_n: c.rank_n,
                rank_j: c.rank_j,
                converged: c.converged,
                warnings: c.warnings.join("; "),
                error: c.error.as_deref(),
            })
            .map_err(|e| Error::Numerical(format!("csv write: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::Numerical(format!("csv write: {e}")))?;
        Ok(())
    }

    /// Label of the rank-1 candidate under `BIC_E`, `BIC_N`, `BIC_J`.
    pub fn winners(&self) -> (Option<&str>, Option<&str>, Option<&str>) {
        let find = |f: fn(&CandidateRow) -> Option<usize>| {
            self.candidates
                .iter()
                .find(|c| f(c) == Some(1))
                .map(|c| c.label.as_str())
        };
        (find(|c| c.rank_e), find(|c| c.rank_n), find(|c| c.rank_j))
    }
}

/// Fit one candidate and compute its penalties and criteria.
pub fn evaluate_candidate(
    data: &Dataset,
    spec: &ModelSpec,
    label: &str,
    opts: &SelectOptions,
) -> CandidateRow {
    let fixed = crate::dataio::join_terms(&spec.fixed);
    let random = crate::dataio::join_terms(&spec.random);
    let designs = match build_designs(data, spec) {
        Ok(d) => d,
        Err(e) => return CandidateRow::failed(label.into(), fixed, random, e),
    };
    let fit = match fit_ml_with(&designs, None, &opts.fit) {
        Ok(f) => f,
        Err(e) => return CandidateRow::failed(label.into(), fixed, random, e),
    };
    let pc = match count_penalty(&designs, &fit.theta_hat.psi, opts.rank_tol) {
        Ok(pc) => pc,
        Err(e) => return CandidateRow::failed(label.into(), fixed, random, e),
    };
    let (n, j) = (designs.n_obs(), designs.n_clusters());
    let b = bic_all(fit.deviance, &pc, n, j);

    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push(format!(
            "fit did not converge (gradient norm {:.2e})",
            fit.gradient_norm
        ));
    }
    let names = designs.random_names();
    for (k, &flag) in fit.boundary_flags.iter().enumerate() {
        if flag {
            let what = names.get(k).map_or("residual variance".to_string(), |n| {
                format!("conditional variance of random '{n}'")
            });
            warnings.push(format!("{what} at the lower bound"));
        }
    }
    if pc.singular {
        warnings.push(format!(
            "random-effect covariance has rank {} < {}; redundant-effect K1 used",
            pc.q1, pc.q
        ));
    } else if pc.near_singular() {
        warnings.push(format!(
            "random-effect covariance close to singular (eigenvalue ratio {:.2e}); full-rank K1 used",
            pc.psi_eigen_ratio
        ));
    }
    if pc.k2 < 0 {
        warnings.push("K2 is negative, so BIC_E exceeds BIC_N".into());
    }

    CandidateRow {
        label: label.into(),
        fixed,
        random,
        deviance: Some(fit.deviance),
        k1: Some(pc.k1),
        k2: Some(pc.k2),
        k: Some(pc.k),
        bic_e: Some(b.bic_e),
        bic_n: Some(b.bic_n),
        bic_j: Some(b.bic_j),
        rank_e: None,
        rank_n: None,
        rank_j: None,
        converged: Some(fit.converged),
        warnings,
        error: None,
        penalty: Some(pc),
    }
}

fn assign_ranks(rows: &mut [CandidateRow], value: fn(&CandidateRow) -> Option<f64>, set: fn(&mut CandidateRow, usize)) {
    let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| value(&rows[i]).is_some()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        value(ra)
            .unwrap()
            .total_cmp(&value(rb).unwrap())
            .then(ra.k.cmp(&rb.k))
            .then(ra.label.cmp(&rb.label))
    });
    for (rank, i) in idx.into_iter().enumerate() {
        set(&mut rows[i], rank + 1);
    }
}

/// Rank rows in place under each criterion; failed rows stay unranked.
pub fn rank_rows(rows: &mut [CandidateRow]) {
    assign_ranks(rows, |r| r.bic_e, |r, k| r.rank_e = Some(k));
    assign_ranks(rows, |r| r.bic_n, |r, k| r.rank_n = Some(k));
    assign_ranks(rows, |r| r.bic_j, |r, k| r.rank_j = Some(k));
}

/// Fit every fixed × random combination (fixed-major order, labels
/// `"<fixed>+<random>"`) and rank them under the three criteria.
pub fn enumerate_and_rank(
    data: &Dataset,
    response: &str,
    fixed_sets: &[TermSet],
    random_sets: &[TermSet],
    opts: &SelectOptions,
) -> BicReport {
    let jobs: Vec<(String, Result<ModelSpec>)> = fixed_sets
        .iter()
        .flat_map(|f| {
            random_sets.iter().map(move |r| {
                (
                    format!("{}+{}", f.name, r.name),
                    ModelSpec::new(response, f.terms.clone(), r.terms.clone(), data.group()),
                )
            })
        })
        .collect();
    let run = |(label, spec): &(String, Result<ModelSpec>)| match spec {
        Ok(spec) => evaluate_candidate(data, spec, label, opts),
        Err(e) => CandidateRow::failed(label.clone(), String::new(), String::new(), e),
    };

    #[cfg(feature = "parallel")]
    let mut rows: Vec<CandidateRow> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let mut rows: Vec<CandidateRow> = jobs.iter().map(run).collect();

    rank_rows(&mut rows);
    BicReport {
        n_obs: data.n_obs(),
        n_clusters: data.n_clusters(),
        candidates: rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ClusterDesign;

    fn design(xcols: &[Vec<f64>], zcols: &[Vec<f64>], j: usize) -> DesignSet {
        let n = xcols[0].len();
        let clusters = (0..j)
            .map(|k| {
                let shift = k as f64;
                let x = DMatrix::from_fn(n, xcols.len(), |i, c| {
                    if c == 2 {
                        shift
                    } else {
                        xcols[c][i]
                    }
                });
                let z = DMatrix::from_fn(n, zcols.len(), |i, c| zcols[c][i]);
                ClusterDesign::new(format!("{k}"), x, z, DVector::zeros(n)).unwrap()
            })
            .collect();
        DesignSet::new(clusters).unwrap()
    }

    fn model_a() -> DesignSet {
        let ones = vec![1.0; 4];
        let x = vec![-1.5, 0.2, 0.9, 0.4];
        design(&[ones.clone(), x.clone(), vec![0.0; 4]], &[ones, x], 5)
    }

    fn model_b() -> DesignSet {
        let ones = vec![1.0; 4];
        let x = vec![-1.5, 0.2, 0.9, 0.4];
        design(&[ones.clone(), x, vec![0.0; 4]], &[ones], 5)
    }

    #[test]
    fn intersection_examples() {
        assert_eq!(intersection_dim(&model_a(), None).unwrap(), 3);
        assert_eq!(intersection_dim(&model_b(), None).unwrap(), 2);
    }

    #[test]
    fn rank_psi_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(rank_psi(&m, RANK_TOL).0, 1);
        let k = DMatrix::from_row_slice(2, 2, &[40.20, -28.95, -28.95, 21.58]);
        let (q1, u) = rank_psi(&k, RANK_TOL);
        assert_eq!(q1, 2);
        let ev = k.symmetric_eigenvalues();
        assert!((ev.max() - 61.30).abs() < 0.01 && (ev.min() - 0.48).abs() < 0.01);
        assert!((u.transpose() * &u - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert_eq!(rank_psi(&DMatrix::zeros(1, 1), RANK_TOL).0, 0);
    }

    #[test]
    fn penalty_examples() {
        let full = DMatrix::from_row_slice(2, 2, &[40.2, -10.0, -10.0, 21.58]);
        let a = count_penalty(&model_a(), &full, RANK_TOL).unwrap();
        assert_eq!((a.k1, a.k2, a.k), (1, 6, 7));
        let b = count_penalty(&model_b(), &DMatrix::from_element(1, 1, 40.2), RANK_TOL).unwrap();
        assert_eq!((b.k1, b.k2, b.k), (2, 3, 5));
        let (t0, t1) = (40.2f64.sqrt(), 21.58f64.sqrt());
        let sing = DMatrix::from_row_slice(2, 2, &[t0 * t0, -t0 * t1, -t0 * t1, t1 * t1]);
        let s = count_penalty(&model_a(), &sing, RANK_TOL).unwrap();
        assert!(s.singular);
        assert_eq!((s.q1, s.q2, s.p2, s.k1), (1, 1, 1, 6));
    }

    #[test]
    fn bic_examples() {
        let b = bic_from_counts(5528.5, 2, 3, 2000, 100);
        assert!((b.bic_e - 5557.5).abs() < 0.1);
        assert!((b.bic_n - 5566.5).abs() < 0.1);
        assert!((b.bic_j - 5551.5).abs() < 0.1);
        let b = bic_from_counts(6327.5, 1, 2, 2000, 100);
        assert!((b.bic_e - 6344.3).abs() < 0.1);
        assert!((b.bic_n - 6350.3).abs() < 0.1);
        assert!((b.bic_j - 6341.3).abs() < 0.1);
        let z = bic_from_counts(0.0, 0, 0, 2000, 100);
        assert_eq!((z.bic_e, z.bic_n, z.bic_j), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ranking_ties_prefer_smaller_k_then_label() {
        let row = |label: &str, bic: f64, k: i64| {
            let mut r = CandidateRow::failed(label.into(), String::new(), String::new(), Error::Config(String::new()));
            r.error = None;
            r.k = Some(k);
            r.bic_e = Some(bic);
            r.bic_n = Some(bic);
            r.bic_j = Some(-bic);
            r
        };
        let mut rows = vec![row("b", 1.0, 3), row("a", 1.0, 3), row("c", 1.0, 2), row("d", 0.5, 9)];
        rank_rows(&mut rows);
        let ranks: Vec<_> = rows.iter().map(|r| r.rank_e.unwrap()).collect();
        assert_eq!(ranks, vec![4, 3, 2, 1]);
        assert!(rows[3].ranks_disagree());
    }
}
