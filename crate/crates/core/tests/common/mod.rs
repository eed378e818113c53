//! Dense reference computations shared by the integration tests. Nothing here
//! goes through the Woodbury / sufficient-statistic paths of the library.
#![allow(dead_code)]

use std::f64::consts::PI;

use mlmbic::dataio::{ClusterDesign, DesignSet};
use mlmbic::fisher::{unvech, vech};
use mlmbic::Theta;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// Random PD matrix with eigenvalues bounded away from zero.
pub fn random_pd(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, q, q);
    &a * a.transpose() + DMatrix::identity(q, q) * 0.3
}

/// Random design: intercept in both X and Z, other columns Gaussian.
pub fn random_designs(
    rng: &mut ChaCha8Rng,
    j: usize,
    n_range: (usize, usize),
    p: usize,
    q: usize,
) -> DesignSet {
    let clusters = (0..j)
        .map(|k| {
            let n = rng.random_range(n_range.0..=n_range.1);
            let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { normal(rng) });
            let z = DMatrix::from_fn(n, q, |i, c| {
                if c == 0 {
                    1.0
                } else if c < p {
                    x[(i, c)]
                } else {
                    normal(rng)
                }
            });
            let y = DVector::from_fn(n, |_, _| 3.0 * normal(rng) + 1.0);
            ClusterDesign::new(format!("c{k}"), x, z, y).unwrap()
        })
        .collect();
    DesignSet::new(clusters).unwrap()
}

pub fn random_theta(rng: &mut ChaCha8Rng, p: usize, q: usize) -> Theta {
    Theta::new(
        DVector::from_fn(p, |_, _| normal(rng)),
        random_pd(rng, q),
        0.2 + rng.random::<f64>() * 2.0,
    )
    .unwrap()
}

pub fn dense_v(z: &DMatrix<f64>, psi: &DMatrix<f64>, s2: f64) -> DMatrix<f64> {
    z * psi * z.transpose() + DMatrix::identity(z.nrows(), z.nrows()) * s2
}

pub fn dense_loglik(d: &DesignSet, t: &Theta) -> f64 {
    d.clusters()
        .iter()
        .map(|c| {
            let v = dense_v(&c.z, &t.psi, t.sigma2);
            let r = &c.y - &c.x * &t.beta;
            let lu = v.clone().lu();
            let quad = r.dot(&lu.solve(&r).unwrap());
            -0.5 * (c.n() as f64 * (2.0 * PI).ln() + lu.determinant().ln() + quad)
        })
        .sum()
}

/// Full parameter vector `(β, vech Ψ, σ²)`.
pub fn theta_vec(t: &Theta) -> DVector<f64> {
    let v = vech(&t.psi);
    DVector::from_iterator(
        t.p() + v.len() + 1,
        t.beta.iter().copied().chain(v.iter().copied()).chain([t.sigma2]),
    )
}

pub fn theta_from_vec(v: &DVector<f64>, p: usize, q: usize) -> (DVector<f64>, DMatrix<f64>, f64) {
    let qs = q * (q + 1) / 2;
    (
        v.rows(0, p).into_owned(),
        unvech(&v.as_slice()[p..p + qs], q),
        v[p + qs],
    )
}

/// Expected information of the Gaussian model assembled from central
/// differences of `μ_j(θ)` and `V_j(θ)`:
/// `I_ab = Σ_j ∂_aμ'V⁻¹∂_bμ + ½ tr(V⁻¹ ∂_aV V⁻¹ ∂_bV)`.
pub fn fd_moment_information(d: &DesignSet, t: &Theta) -> DMatrix<f64> {
    let (p, q) = (d.p(), d.q());
    let theta = theta_vec(t);
    let k = theta.len();
    let h = 1e-4;
    let mut info = DMatrix::zeros(k, k);
    for c in d.clusters() {
        let mut dmu = Vec::with_capacity(k);
        let mut dv = Vec::with_capacity(k);
        for a in 0..k {
            let mut tp = theta.clone();
            tp[a] += h;
            let mut tm = theta.clone();
            tm[a] -= h;
            let (bp, pp, sp) = theta_from_vec(&tp, p, q);
            let (bm, pm, sm) = theta_from_vec(&tm, p, q);
            dmu.push((&c.x * bp - &c.x * bm) / (2.0 * h));
            dv.push((dense_v(&c.z, &pp, sp) - dense_v(&c.z, &pm, sm)) / (2.0 * h));
        }
        let vi = dense_v(&c.z, &t.psi, t.sigma2).try_inverse().unwrap();
        for a in 0..k {
            let va = &vi * &dv[a];
            for b in 0..k {
                let mean_part = (dmu[a].transpose() * &vi * &dmu[b])[(0, 0)];
                let cov_part = 0.5 * (&va * &vi * &dv[b]).trace();
                info[(a, b)] += mean_part + cov_part;
            }
        }
    }
    info
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Synthetic pupils-in-classes data: 100 classes of 16–24 pupils, a ±1
/// within-class covariate `gender` (both values present in every class), a
/// class-level `texp` in 2..=25, and a response with random intercept and
/// random `gender` slope.
pub fn popular_like(seed: u64) -> mlmbic::Dataset {
    let mut r = rng(seed);
    let (t0, t1, rho) = (0.8f64, 0.35f64, 0.3f64);
    let mut ids = Vec::new();
    let (mut pop, mut gender, mut texp) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..100 {
        let n = r.random_range(16..=24);
        let t = r.random_range(2..=25) as f64;
        let z0 = normal(&mut r);
        let b0 = t0 * z0;
        let b1 = t1 * (rho * z0 + (1.0 - rho * rho).sqrt() * normal(&mut r));
        for i in 0..n {
            let g = if i == 0 {
                -1.0
            } else if i == 1 {
                1.0
            } else if r.random::<bool>() {
                1.0
            } else {
                -1.0
            };
            let y = 3.3 + 0.65 * g + 0.11 * t + 0.03 * g * t + b0 + b1 * g + 0.85 * normal(&mut r);
            ids.push(format!("{}", class + 1));
            pop.push(y);
            gender.push(g);
            texp.push(t);
        }
    }
    mlmbic::Dataset::new(
        "class",
        ids,
        vec![
            ("popular".into(), pop),
            ("gender".into(), gender),
            ("texp".into(), texp),
        ],
    )
    .unwrap()
}

/// The six fixed-effect and two random-effect term sets of the pupils example.
pub fn popular_term_sets() -> (Vec<mlmbic::bic::TermSet>, Vec<mlmbic::bic::TermSet>) {
    use mlmbic::bic::TermSet;
    use mlmbic::dataio::parse_terms;
    let t = |s: &str| parse_terms(s).unwrap();
    let fixed = vec![
        TermSet::new("F1", t("1")),
        TermSet::new("F2", t("1 + gender")),
        TermSet::new("F3", t("1 + gender + gender:texp")),
        TermSet::new("F4", t("1 + texp")),
        TermSet::new("F5", t("1 + gender + texp")),
        TermSet::new("F6", t("1 + gender + texp + gender:texp")),
    ];
    let random = vec![
        TermSet::new("V1", t("1")),
        TermSet::new("V2", t("1 + gender")),
    ];
    (fixed, random)
}
