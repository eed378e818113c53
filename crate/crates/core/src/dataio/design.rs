use nalgebra::{DMatrix, DVector};

use super::formula::{ModelSpec, Term};
use super::table::Dataset;
use crate::{Error, Result};

/// Singular values below this fraction of the largest count as zero when
/// checking that a random-effect design has full column rank.
pub const Z_RANK_TOL: f64 = 1e-10;

/// Design matrices of one cluster together with the cross-products every
/// likelihood and information evaluation needs.
#[derive(Debug, Clone)]
pub struct ClusterDesign {
    pub label: String,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub(crate) xtx: DMatrix<f64>,
    pub(crate) xtz: DMatrix<f64>,
    pub(crate) ztz: DMatrix<f64>,
    pub(crate) xty: DVector<f64>,
    pub(crate) zty: DVector<f64>,
    pub(crate) yty: f64,
}

impl ClusterDesign {
    pub fn new(
        label: impl Into<String>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let label = label.into();
        let n = y.len();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "cluster `{label}`: X has {} rows, Z has {} rows, y has {n}",
                x.nrows(),
                z.nrows()
            )));
        }
        let q = z.ncols();
        let rank = numeric_rank(&z, Z_RANK_TOL);
        if rank < q {
            return Err(Error::RankDeficientZ {
                cluster: label,
                rank,
                q,
            });
        }
        let xt = x.transpose();
        let zt = z.transpose();
        Ok(ClusterDesign {
            xtx: &xt * &x,
            xtz: &xt * &z,
            ztz: &zt * &z,
            xty: &xt * &y,
            zty: &zt * &y,
            yty: y.dot(&y),
            label,
            x,
            z,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `X_j'X_j / n_j`.
    pub fn s_xx(&self) -> DMatrix<f64> {
        &self.xtx / self.n() as f64
    }

    /// `X_j'Z_j / n_j`.
    pub fn s_xz(&self) -> DMatrix<f64> {
        &self.xtz / self.n() as f64
    }

    /// `Z_j'Z_j / n_j`.
    pub fn s_zz(&self) -> DMatrix<f64> {
        &self.ztz / self.n() as f64
    }
}

fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Per-cluster `(X_j, Z_j, y_j)` for every cluster of a dataset.
#[derive(Debug, Clone)]
pub struct DesignSet {
    clusters: Vec<ClusterDesign>,
    p: usize,
    q: usize,
    fixed_names: Vec<String>,
    random_names: Vec<String>,
}

impl DesignSet {
    pub fn new(clusters: Vec<ClusterDesign>) -> Result<Self> {
        let first = clusters
            .first()
            .ok_or_else(|| Error::Dimension("design set has no clusters".into()))?;
        let (p, q) = (first.x.ncols(), first.z.ncols());
        if q == 0 {
            return Err(Error::Dimension("random-effect design has no columns".into()));
        }
        for c in &clusters {
            if c.x.ncols() != p || c.z.ncols() != q {
                return Err(Error::Dimension(format!(
                    "cluster `{}` has {}/{} columns, expected {p}/{q}",
                    c.label,
                    c.x.ncols(),
                    c.z.ncols()
                )));
            }
        }
        Ok(DesignSet {
            fixed_names: (1..=p).map(|i| format!("x{i}")).collect(),
            random_names: (1..=q).map(|i| format!("z{i}")).collect(),
            clusters,
            p,
            q,
        })
    }

    pub fn with_names(mut self, fixed: Vec<String>, random: Vec<String>) -> Self {
        assert_eq!(fixed.len(), self.p);
        assert_eq!(random.len(), self.q);
        self.fixed_names = fixed;
        self.random_names = random;
        self
    }

    pub fn clusters(&self) -> &[ClusterDesign] {
        &self.clusters
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }

    pub fn random_names(&self) -> &[String] {
        &self.random_names
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(ClusterDesign::n).sum()
    }

    /// Responses stacked in cluster order.
    pub fn stacked_response(&self) -> Vec<f64> {
        self.clusters
            .iter()
            .flat_map(|c| c.y.iter().copied())
            .collect()
    }

    /// Sample variance of the response (denominator `N`).
    pub fn response_variance(&self) -> f64 {
        let n = self.n_obs() as f64;
        let sum: f64 = self.clusters.iter().map(|c| c.y.sum()).sum();
        let ss: f64 = self.clusters.iter().map(|c| c.yty).sum();
        let mean = sum / n;
        (ss / n - mean * mean).max(0.0)
    }
}

fn term_value(term: &Term, cols: &[&[f64]], row: usize) -> f64 {
    match term {
        Term::Intercept => 1.0,
        Term::Var(_) => cols[0][row],
        Term::Interaction(..) => cols[0][row] * cols[1][row],
    }
}

fn resolve<'a>(data: &'a Dataset, terms: &[Term]) -> Result<Vec<Vec<&'a [f64]>>> {
    terms
        .iter()
        .map(|t| {
            t.variables()
                .into_iter()
                .map(|v| {
                    data.column(v)
                        .ok_or_else(|| Error::UnknownVariable(v.to_string()))
                })
                .collect()
        })
        .collect()
}

fn fill(terms: &[Term], cols: &[Vec<&[f64]>], rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), terms.len(), |i, k| {
        term_value(&terms[k], &cols[k], rows[i])
    })
}

/// Builds `X_j`, `Z_j` and `y_j` for every cluster, columns ordered as in the
/// formula. Interactions are elementwise products.
pub fn build_designs(data: &Dataset, spec: &ModelSpec) -> Result<DesignSet> {
    if spec.group != data.group() {
        return Err(Error::UnknownVariable(spec.group.clone()));
    }
    let y = data
        .column(&spec.response)
        .ok_or_else(|| Error::UnknownVariable(spec.response.clone()))?;
    let xcols = resolve(data, &spec.fixed)?;
    let zcols = resolve(data, &spec.random)?;

    let clusters = data
        .clusters()
        .iter()
        .map(|c| {
            ClusterDesign::new(
                c.label.clone(),
                fill(&spec.fixed, &xcols, &c.rows),
                fill(&spec.random, &zcols, &c.rows),
                DVector::from_iterator(c.rows.len(), c.rows.iter().map(|&r| y[r])),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DesignSet::new(clusters)?.with_names(
        spec.fixed.iter().map(Term::to_string).collect(),
        spec.random.iter().map(Term::to_string).collect(),
    ))
}
