//! Numerical demonstration: how the two information log-determinants grow
//! with cluster size `n` and cluster count `J`.
//!
//! For every design point the data-generating covariates and latent terms
//! are drawn so that their sample mean and covariance (denominator `J`)
//! equal the population values exactly. The information blocks are then
//! evaluated at the generating parameters and each block's log-determinant
//! is regressed on `(1, log n, log J)` within each `(corr, σ²)` cell.
//!
//! Two generating models share `X_j = [1, x_ij, x_j]`:
//! Model A has random intercept and random `x_ij` slope, Model B a random
//! intercept only.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bic::{count_penalty, RANK_TOL};
use crate::dataio::{build_designs, parse_formula, Dataset, DesignSet};
use crate::fisher::logdet_blocks;
use crate::lmmfit::Theta;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    A,
    B,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ModelKind::A),
            "B" | "b" => Ok(ModelKind::B),
            other => Err(Error::Config(format!("model must be A or B, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::A => "A",
            ModelKind::B => "B",
        })
    }
}

impl ModelKind {
    pub fn formula(self) -> &'static str {
        match self {
            ModelKind::A => "y ~ 1 + xw + xb + (1 + xw | cluster)",
            ModelKind::B => "y ~ 1 + xw + xb + (1 | cluster)",
        }
    }
}

/// How the within-cluster covariate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WithinCovariate {
    /// Independent normal draws, standardised over the whole sample to
    /// mean 0 and the target standard deviation (denominator `N`).
    Iid,
    /// The `n` covariate values of a cluster join the moment-matched block,
    /// so their cross-moments with the random effects and errors vanish too.
    /// Needs `J ≥ 2n + 5`.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub model: ModelKind,
    pub beta: [f64; 3],
    pub tau0sq: f64,
    pub tau1sq: f64,
    pub correlations: Vec<f64>,
    pub sigma2_levels: Vec<f64>,
    pub n_grid: Vec<usize>,
    #[serde(rename = "J_grid")]
    pub j_grid: Vec<usize>,
    pub x_within_sd: f64,
    pub x_between_mean: f64,
    pub x_between_var: f64,
    pub within: WithinCovariate,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            model: ModelKind::A,
            beta: [57.98, 1.93, -14.57],
            tau0sq: 40.20,
            tau1sq: 21.58,
            correlations: vec![-1.0, -0.8, -0.6, -0.4, -0.2, 0.0],
            sigma2_levels: vec![42.78, 10.0, 1.0],
            n_grid: vec![10, 20, 40],
            j_grid: vec![50, 100, 200, 400],
            x_within_sd: 2.07,
            x_between_mean: 0.0,
            x_between_var: 1.0,
            within: WithinCovariate::Iid,
            seed: 7,
        }
    }
}

impl DemoConfig {
    pub fn model_b() -> Self {
        DemoConfig {
            model: ModelKind::B,
            ..Default::default()
        }
    }

    /// Smallest `J` for which exact matching is attempted at cluster size `n`.
    pub fn min_clusters(&self, n: usize) -> usize {
        match self.within {
            WithinCovariate::Iid => n + 5,
            WithinCovariate::Matched => 2 * n + 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma2_levels.is_empty() || self.n_grid.is_empty() || self.j_grid.is_empty() {
            return Err(Error::Config("σ², n and J grids must be nonempty".into()));
        }
        if self.model == ModelKind::A && self.correlations.is_empty() {
            return Err(Error::Config("model A needs at least one correlation".into()));
        }
        if let Some(c) = self.correlations.iter().find(|c| !(-1.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("correlation {c} outside [-1, 1]")));
        }
        if let Some(s) = self.sigma2_levels.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Config(format!("σ² level {s} must be positive")));
        }
        if !(self.tau0sq > 0.0 && self.tau1sq > 0.0 && self.x_within_sd > 0.0 && self.x_between_var > 0.0) {
            return Err(Error::Config("variances and the covariate sd must be positive".into()));
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("cluster size {n} must be at least 2")));
        }
        for &n in &self.n_grid {
            for &j in &self.j_grid {
                let need = self.min_clusters(n);
                if j < need {
                    return Err(Error::Config(format!(
                        "J = {j} is too small for exact moment matching with n = {n} (need J ≥ {need})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(corr, σ²)` cells in reporting order; `corr` is `None` for model B.
    pub fn cells(&self) -> Vec<(Option<f64>, f64)> {
        let corrs: Vec<Option<f64>> = match self.model {
            ModelKind::A => self.correlations.iter().map(|&c| Some(c)).collect(),
            ModelKind::B => vec![None],
        };
        corrs
            .into_iter()
            .flat_map(|c| self.sigma2_levels.iter().map(move |&s| (c, s)))
            .collect()
    }

    /// Generating parameters of one cell.
    pub fn theta0(&self, corr: Option<f64>, sigma2: f64) -> Result<Theta> {
        let beta = self.beta.to_vec();
        match self.model {
            ModelKind::A => {
                let c = corr.ok_or_else(|| Error::Config("model A cell without correlation".into()))?;
                let t01 = c * (self.tau0sq * self.tau1sq).sqrt();
                Theta::with_tau(beta, self.tau0sq, self.tau1sq, t01, sigma2)
            }
            ModelKind::B => Theta::new(
                DVector::from_vec(beta),
                DMatrix::from_element(1, 1, self.tau0sq),
                sigma2,
            ),
        }
    }

    pub fn covariates(&self) -> CovariateTarget {
        CovariateTarget {
            x_between_mean: self.x_between_mean,
            x_between_var: self.x_between_var,
            x_within_sd: self.x_within_sd,
            within: self.within,
        }
    }
}

/// Target moments of the two covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateTarget {
    pub x_between_mean: f64,
    pub x_between_var: f64,
    pub x_within_sd: f64,
    pub within: WithinCovariate,
}

impl Default for CovariateTarget {
    fn default() -> Self {
        DemoConfig::default().covariates()
    }
}

/// `J` draws whose sample mean is exactly `mean` and whose sample covariance
/// (denominator `J`) is exactly `cov`. Singular targets are handled by
/// drawing only as many independent columns as the rank of `cov`.
pub fn exact_moment_sample(
    rng: &mut ChaCha8Rng,
    j: usize,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::Dimension("mean and covariance sizes differ".into()));
    }
    let eig = cov.clone().symmetric_eigen();
    let top = eig.eigenvalues.max().max(0.0);
    let keep: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * top)
        .collect();
    let r = keep.len();
    if r > 0 && j <= r {
        return Err(Error::Config(format!(
            "J = {j} draws cannot match a covariance of rank {r}"
        )));
    }
    let factor = DMatrix::from_fn(d, r, |a, b| {
        eig.eigenvectors[(a, keep[b])] * eig.eigenvalues[keep[b]].sqrt()
    });

    let mut raw: DMatrix<f64> = DMatrix::from_fn(j, r, |_, _| StandardNormal.sample(&mut *rng));
    for mut col in raw.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let s = raw.transpose() * &raw / j as f64;
    let white = match s.cholesky() {
        Some(ch) => ch
            .l()
            .solve_lower_triangular(&raw.transpose())
            .ok_or_else(|| Error::Numerical("whitening failed".into()))?
            .transpose(),
        None => return Err(Error::Numerical("sample covariance of raw draws is singular".into())),
    };
    let mut out = white * factor.transpose();
    for mut row in out.row_iter_mut() {
        row += mean.transpose();
    }
    Ok(out)
}

/// A generated dataset together with the moment-matched block it came from.
#[derive(Debug, Clone)]
pub struct MatchedSample {
    /// Columns `y`, `xw`, `xb`; group column `cluster`.
    pub dataset: Dataset,
    /// `J × d` block with columns `x_j`, random effects, `n` errors and,
    /// in matched mode, the `n` within-cluster covariate values.
    pub block: DMatrix<f64>,
    pub target_mean: DVector<f64>,
    pub target_cov: DMatrix<f64>,
    /// `J × n` within-cluster covariate values.
    pub x_within: DMatrix<f64>,
}

impl MatchedSample {
    pub fn x_between(&self) -> DVector<f64> {
        self.block.column(0).into_owned()
    }

    /// `J × q` random effects.
    pub fn effects(&self, q: usize) -> DMatrix<f64> {
        self.block.columns(1, q).into_owned()
    }

    /// `J × n` residual errors.
    pub fn errors(&self, q: usize, n: usize) -> DMatrix<f64> {
        self.block.columns(1 + q, n).into_owned()
    }
}

/// Balanced two-level data of `j` clusters of size `n` whose latent block
/// has the exact target moments. `theta0` has `q = 1` (random intercept) or
/// `q = 2` (random intercept and random `xw` slope) and `p = 3` coefficients
/// for `(1, xw, xb)`.
pub fn gen_moment_matched(
    j: usize,
    n: usize,
    theta0: &Theta,
    target: &CovariateTarget,
    seed: u64,
) -> Result<MatchedSample> {
    let q = theta0.q();
    if theta0.p() != 3 || !(q == 1 || q == 2) {
        return Err(Error::Dimension(format!(
            "generator needs p = 3 and q ∈ {{1, 2}}, got p = {}, q = {q}",
            theta0.p()
        )));
    }
    let need = match target.within {
        WithinCovariate::Iid => n + 5,
        WithinCovariate::Matched => 2 * n + 5,
    };
    if j < need {
        return Err(Error::Config(format!(
            "J = {j} is too small for exact moment matching with n = {n} (need J ≥ {need})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matched_x = target.within == WithinCovariate::Matched;
    let d = 1 + q + n + if matched_x { n } else { 0 };
    let mut mean = DVector::zeros(d);
    mean[0] = target.x_between_mean;
    let mut cov = DMatrix::zeros(d, d);
    cov[(0, 0)] = target.x_between_var;
    cov.view_mut((1, 1), (q, q)).copy_from(&theta0.psi);
    for i in 0..n {
        cov[(1 + q + i, 1 + q + i)] = theta0.sigma2;
    }
    if matched_x {
        let sd2 = target.x_within_sd.powi(2);
        for i in 0..n {
            cov[(1 + q + n + i, 1 + q + n + i)] = sd2;
        }
    }
    let block = exact_moment_sample(&mut rng, j, &mean, &cov)?;

    let x_within = if matched_x {
        block.columns(1 + q + n, n).into_owned()
    } else {
        let mut x = DMatrix::from_fn(j, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * target.x_within_sd
        });
        let m = x.mean();
        x.add_scalar_mut(-m);
        let sd = (x.norm_squared() / (j * n) as f64).sqrt();
        x *= target.x_within_sd / sd;
        x
    };

    let b = &theta0.beta;
    let mut ids = Vec::with_capacity(j * n);
    let (mut y, mut xw, mut xb) = (Vec::with_capacity(j * n), Vec::with_capacity(j * n), Vec::with_capacity(j * n));
    for c in 0..j {
        let xj = block[(c, 0)];
        let b0 = block[(c, 1)];
        let b1 = if q == 2 { block[(c, 2)] } else { 0.0 };
        for i in 0..n {
            let x = x_within[(c, i)];
            let e = block[(c, 1 + q + i)];
            ids.push((c + 1).to_string());
            y.push(b[0] + b[1] * x + b[2] * xj + b0 + b1 * x + e);
            xw.push(x);
            xb.push(xj);
        }
    }
    let dataset = Dataset::new(
        "cluster",
        ids,
        vec![("y".into(), y), ("xw".into(), xw), ("xb".into(), xb)],
    )?;
    Ok(MatchedSample {
        dataset,
        block,
        target_mean: mean,
        target_cov: cov,
        x_within,
    })
}

/// Designs of a generated dataset for the generating model.
pub fn demo_designs(model: ModelKind, data: &Dataset) -> Result<DesignSet> {
    build_designs(data, &parse_formula(model.formula())?)
}

/// Per-design-point generator seed.
pub fn point_seed(seed: u64, n: usize, j: usize) -> u64 {
    // splitmix64 finaliser over the packed coordinates
    let mut z = seed ^ ((n as u64) << 32) ^ (j as u64);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub model: ModelKind,
    pub corr: Option<f64>,
    pub sigma2: f64,
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub logdet_bb: f64,
    pub logdet_rr: f64,
}

/// One row per `(corr, σ², n, J)`, cell-major then `n` then `J`. All cells
/// at a given `(n, J)` share the same underlying normal draws.
pub fn demo_grid(config: &DemoConfig) -> Result<Vec<GridRow>> {
    config.validate()?;
    let mut points = Vec::new();
    for (corr, s2) in config.cells() {
        for &n in &config.n_grid {
            for &j in &config.j_grid {
                points.push((corr, s2, n, j));
            }
        }
    }
    let target = config.covariates();
    let eval = |&(corr, s2, n, j): &(Option<f64>, f64, usize, usize)| -> Result<GridRow> {
        let theta0 = config.theta0(corr, s2)?;
        let sample = gen_moment_matched(j, n, &theta0, &target, point_seed(config.seed, n, j))?;
        let designs = demo_designs(config.model, &sample.dataset)?;
        let (logdet_bb, logdet_rr) = logdet_blocks(&designs, &theta0)?;
        Ok(GridRow {
            model: config.model,
            corr,
            sigma2: s2,
            n,
            j,
            logdet_bb,
            logdet_rr,
        })
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<Result<GridRow>> = {
        use rayon::prelude::*;
        points.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<GridRow>> = points.iter().map(eval).collect();

    rows.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Fixed,
    Random,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Block::Fixed => "fixed",
            Block::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub block: Block,
    pub intercept: f64,
    pub coef_logn: f64,
    #[serde(rename = "coef_logJ")]
    pub coef_logj: f64,
    pub se_intercept: f64,
    pub se_logn: f64,
    #[serde(rename = "se_logJ")]
    pub se_logj: f64,
    pub points: usize,
}

/// OLS of a block's log-determinant on `(1, log n, log J)` with classical
/// standard errors.
pub fn ols_regress(rows: &[GridRow], block: Block) -> Result<RegressionResult> {
    let m = rows.len();
    if m < 4 {
        return Err(Error::Config(format!("regression needs at least 4 rows, got {m}")));
    }
    let a = DMatrix::from_fn(m, 3, |i, c| match c {
        0 => 1.0,
        1 => (rows[i].n as f64).ln(),
        _ => (rows[i].j as f64).ln(),
    });
    let y = DVector::from_fn(m, |i, _| match block {
        Block::Fixed => rows[i].logdet_bb,
        Block::Random => rows[i].logdet_rr,
    });
    let ata = a.transpose() * &a;
    let ev = ata.clone().symmetric_eigenvalues();
    if ev.min() <= 1e-10 * ev.max() {
        return Err(Error::RankDeficientRegression);
    }
    let inv = ata.try_inverse().ok_or(Error::RankDeficientRegression)?;
    let coef = &inv * a.transpose() * &y;
    let resid = &y - &a * &coef;
    let s2 = resid.norm_squared() / (m - 3).max(1) as f64;
    let se = |k: usize| (s2 * inv[(k, k)]).max(0.0).sqrt();
    Ok(RegressionResult {
        block,
        intercept: coef[0],
        coef_logn: coef[1],
        coef_logj: coef[2],
        se_intercept: se(0),
        se_logn: se(1),
        se_logj: se(2),
        points: m,
    })
}

/// Coefficients implied by the penalty counting rules for the generating
/// design and `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expected {
    pub fixed_logn: f64,
    #[serde(rename = "fixed_logJ")]
    pub fixed_logj: f64,
    pub random_logn: f64,
    #[serde(rename = "random_logJ")]
    pub random_logj: f64,
}

pub fn expected_coefficients(config: &DemoConfig, corr: Option<f64>, sigma2: f64) -> Result<Expected> {
    let theta0 = config.theta0(corr, sigma2)?;
    let n = config.n_grid[0];
    let j = config.min_clusters(n).max(config.j_grid[0]);
    let sample = gen_moment_matched(j, n, &theta0, &config.covariates(), point_seed(config.seed, n, j))?;
    let designs = demo_designs(config.model, &sample.dataset)?;
    let pc = count_penalty(&designs, &theta0.psi, RANK_TOL)?;
    Ok(Expected {
        fixed_logn: pc.p1 as f64,
        fixed_logj: pc.p as f64,
        random_logn: (1 + pc.q1 * pc.q2 + 2 * pc.q2_star) as f64,
        random_logj: (pc.q_star + 1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRegression {
    pub model: ModelKind,
    pub corr: Option<f64>,
    pub sigma2: f64,
    pub fixed: RegressionResult,
    pub random: RegressionResult,
    pub expected: Expected,
}

/// One pair of regressions per `(corr, σ²)` cell.
pub fn regress_cells(config: &DemoConfig, rows: &[GridRow]) -> Result<Vec<CellRegression>> {
    config
        .cells()
        .into_iter()
        .map(|(corr, s2)| {
            let cell: Vec<GridRow> = rows
                .iter()
                .filter(|r| r.corr == corr && r.sigma2 == s2)
                .cloned()
                .collect();
            Ok(CellRegression {
                model: config.model,
                corr,
                sigma2: s2,
                fixed: ols_regress(&cell, Block::Fixed)?,
                random: ols_regress(&cell, Block::Random)?,
                expected: expected_coefficients(config, corr, s2)?,
            })
        })
        .collect()
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Numerical(format!("csv write: {e}"))
}

pub fn write_grid_csv<W: std::io::Write>(rows: &[GridRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)?;
    Ok(())
}

#[derive(Serialize)]
struct RegressionCsvRow {
    model: ModelKind,
    corr: Option<f64>,
    sigma2: f64,
    block: Block,
    coef_logn: f64,
    se_logn: f64,
    #[serde(rename = "coef_logJ")]
    coef_logj: f64,
    #[serde(rename = "se_logJ")]
    se_logj: f64,
    intercept: f64,
    expected_logn: f64,
    #[serde(rename = "expected_logJ")]
    expected_logj: f64,
    points: usize,
}

pub fn write_regression_csv<W: std::io::Write>(cells: &[CellRegression], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for c in cells {
        for (r, en, ej) in [
            (&c.fixed, c.expected.fixed_logn, c.expected.fixed_logj),
            (&c.random, c.expected.random_logn, c.expected.random_logj),
        ] {
            wtr.serialize(RegressionCsvRow {
                model: c.model,
                corr: c.corr,
                sigma2: c.sigma2,
                block: r.block,
                coef_logn: r.coef_logn,
                se_logn: r.se_logn,
                coef_logj: r.coef_logj,
                se_logj: r.se_logj,
                intercept: r.intercept,
                expected_logn: en,
                expected_logj: ej,
                points: r.points,
            })
            .map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(csv_err)?;
    Ok(())
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 70.0;

fn marker(out: &mut String, sigma2: f64, x: f64, y: f64) {
    let r = 4.5;
    let shape = if (sigma2 - 1.0).abs() < 1e-9 {
        format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}"/>"#)
    } else if (sigma2 - 10.0).abs() < 1e-9 {
        format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        )
    } else if (sigma2 - 42.78).abs() < 1e-9 {
        format!(
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        )
    } else {
        format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        )
    };
    let _ = writeln!(
        out,
        r#"  <g class="empirical" data-sigma2="{sigma2}" fill="none" stroke="black">{shape}</g>"#
    );
}

/// Figure with four panels (rows: `log n`, `log J` coefficient; columns:
/// fixed, random block). Markers are empirical coefficients per cell
/// (circle σ²=1, triangle σ²=10, square σ²=42.78, diamond otherwise); blue
/// segments are the expected values at each correlation.
pub fn figure_svg(cells: &[CellRegression]) -> String {
    let mut xs: Vec<Option<f64>> = Vec::new();
    for c in cells {
        if !xs.contains(&c.corr) {
            xs.push(c.corr);
        }
    }
    xs.sort_by(|a, b| a.unwrap_or(0.0).total_cmp(&b.unwrap_or(0.0)));
    let mut sig: Vec<f64> = Vec::new();
    for c in cells {
        if !sig.contains(&c.sigma2) {
            sig.push(c.sigma2);
        }
    }

    let width = MARGIN_L + 2.0 * PANEL_W + GAP + 20.0;
    let height = MARGIN_T + 2.0 * PANEL_H + GAP + 30.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"  <rect width="100%" height="100%" fill="white"/>"#);

    type Pick = fn(&CellRegression) -> (f64, f64);
    let panels: [(&str, Pick); 4] = [
        ("Fixed effects: coefficient of log(n)", |c| (c.fixed.coef_logn, c.expected.fixed_logn)),
        ("Random effects: coefficient of log(n)", |c| (c.random.coef_logn, c.expected.random_logn)),
        ("Fixed effects: coefficient of log(J)", |c| (c.fixed.coef_logj, c.expected.fixed_logj)),
        ("Random effects: coefficient of log(J)", |c| (c.random.coef_logj, c.expected.random_logj)),
    ];
    for (k, (title, pick)) in panels.iter().enumerate() {
        let ox = MARGIN_L + (k % 2) as f64 * (PANEL_W + GAP);
        let oy = MARGIN_T + (k / 2) as f64 * (PANEL_H + GAP);
        let vals: Vec<f64> = cells
            .iter()
            .flat_map(|c| {
                let (a, b) = pick(c);
                [a, b]
            })
            .collect();
        let mut lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.1).max(0.25);
        lo -= pad;
        hi += pad;
        let ymap = |v: f64| oy + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;
        let slot = PANEL_W / xs.len() as f64;
        let xmap = |i: usize| ox + slot * (i as f64 + 0.5);

        let _ = writeln!(out, r#"  <g class="panel" data-panel="{k}">"#);
        let _ = writeln!(
            out,
            r#"  <rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"  <text x="{:.1}" y="{:.1}" text-anchor="middle">{title}</text>"#,
            ox + PANEL_W / 2.0,
            oy - 8.0
        );
        for t in 0..=4 {
            let v = lo + (hi - lo) * t as f64 / 4.0;
            let y = ymap(v);
            let _ = writeln!(
                out,
                r#"  <text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
                ox - 5.0,
                y + 4.0
            );
        }
        for (i, x) in xs.iter().enumerate() {
            let label = x.map_or("Model B".to_string(), |c| format!("{c:.1}"));
            let _ = writeln!(
                out,
                r#"  <text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                xmap(i),
                oy + PANEL_H + 15.0
            );
            if let Some(c) = cells.iter().find(|c| c.corr == *x) {
                let (_, e) = pick(c);
                let y = ymap(e);
                let _ = writeln!(
                    out,
                    r#"  <line class="expected" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="blue" stroke-width="2"/>"#,
                    xmap(i) - slot * 0.4,
                    xmap(i) + slot * 0.4
                );
            }
            for c in cells.iter().filter(|c| c.corr == *x) {
                let s = sig.iter().position(|&v| v == c.sigma2).unwrap_or(0);
                let dx = (s as f64 - (sig.len() as f64 - 1.0) / 2.0) * 10.0;
                let (v, _) = pick(c);
                marker(&mut out, c.sigma2, xmap(i) + dx, ymap(v));
            }
        }
        if xs.iter().any(|x| x.is_some()) {
            let _ = writeln!(
                out,
                r#"  <text x="{:.1}" y="{:.1}" text-anchor="middle">random-effect correlation</text>"#,
                ox + PANEL_W / 2.0,
                oy + PANEL_H + 32.0
            );
        }
        let _ = writeln!(out, "  </g>");
    }
    let _ = writeln!(out, "</svg>");
    out
}
