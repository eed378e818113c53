mod common;

use common::*;
use mlmbic::dataio::{ClusterDesign, DesignSet};
use mlmbic::lmmfit::{fit_ml, profiled_gradient_rho, profiled_loglik};
use mlmbic::{log_likelihood, Theta};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_case(seed: u64) -> (DesignSet, Theta) {
    let mut r = rng(seed);
    let q = 1 + (seed % 2) as usize;
    let p = 1 + (seed % 3) as usize;
    let d = random_designs(&mut r, 1 + (seed % 4) as usize, (q, 6), p.max(q), q);
    let t = random_theta(&mut r, p.max(q), q);
    (d, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loglik_matches_dense(seed in 0u64..100_000) {
        let (d, t) = small_case(seed);
        let fast = log_likelihood(&d, &t).unwrap();
        let dense = dense_loglik(&d, &t);
        prop_assert!((fast - dense).abs() < 1e-8 * dense.abs().max(1.0), "{fast} vs {dense}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let q = 1 + (seed % 2) as usize;
        let d = random_designs(&mut r, 6, (q + 2, 7), 2.max(q), q);
        let t = random_theta(&mut r, 2.max(q), q);
        let g = profiled_gradient_rho(&d, &t.psi, t.sigma2).unwrap();
        let theta = theta_vec(&t);
        let p = t.p();
        let k = theta.len() - p;
        for a in 0..k {
            let h = 1e-5 * theta[p + a].abs().max(1.0);
            let eval = |delta: f64| {
                let mut v = theta.clone();
                v[p + a] += delta;
                let (_, psi, s2) = theta_from_vec(&v, p, q);
                profiled_loglik(&d, &psi, s2).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (g[a] - fd).abs() / fd.abs().max(1.0);
            assert!(err < 1e-5, "seed {seed} coord {a}: analytic {} fd {fd}", g[a]);
        }
    }
}

fn tiny_designs() -> DesignSet {
    let ys = [[9.1, 10.3], [3.9, 5.2], [14.0, 12.6]];
    let clusters = ys
        .iter()
        .enumerate()
        .map(|(k, y)| {
            ClusterDesign::new(
                format!("g{k}"),
                DMatrix::from_element(2, 1, 1.0),
                DMatrix::from_element(2, 1, 1.0),
                DVector::from_row_slice(y),
            )
            .unwrap()
        })
        .collect();
    DesignSet::new(clusters).unwrap()
}

/// Deviance minimised by nested grids over `(log τ², log σ²)` with β by
/// dense GLS at each grid point.
fn grid_deviance(d: &DesignSet) -> f64 {
    let dev = |lt: f64, ls: f64| {
        let psi = DMatrix::from_element(1, 1, lt.exp());
        let s2 = ls.exp();
        let mut xtvx = DMatrix::zeros(1, 1);
        let mut xtvy = DVector::zeros(1);
        for c in d.clusters() {
            let vi = dense_v(&c.z, &psi, s2).try_inverse().unwrap();
            xtvx += c.x.transpose() * &vi * &c.x;
            xtvy += c.x.transpose() * &vi * &c.y;
        }
        let beta = xtvx.try_inverse().unwrap() * xtvy;
        -2.0 * dense_loglik(d, &Theta::new(beta, psi, s2).unwrap())
    };
    let (mut ct, mut cs, mut width) = (0.0, 0.0, 8.0);
    let mut best = f64::INFINITY;
    for _ in 0..30 {
        let (mut bt, mut bs) = (ct, cs);
        for i in 0..=40 {
            for j in 0..=40 {
                let lt = ct - width + 2.0 * width * i as f64 / 40.0;
                let ls = cs - width + 2.0 * width * j as f64 / 40.0;
                let v = dev(lt, ls);
                if v < best {
                    best = v;
                    bt = lt;
                    bs = ls;
                }
            }
        }
        ct = bt;
        cs = bs;
        width /= 4.0;
    }
    best
}

#[test]
fn tiny_fit_matches_grid_search() {
    let d = tiny_designs();
    let fit = fit_ml(&d, None).unwrap();
    let grid = grid_deviance(&d);
    assert!(fit.converged);
    assert!((fit.deviance - grid).abs() < 1e-4, "fit {} grid {grid}", fit.deviance);
}

#[test]
fn cluster_order_does_not_change_fit() {
    let mut r = rng(77);
    let d = random_designs(&mut r, 12, (4, 8), 2, 2);
    let reversed = DesignSet::new(d.clusters().iter().rev().cloned().collect()).unwrap();
    let a = fit_ml(&d, None).unwrap();
    let b = fit_ml(&reversed, None).unwrap();
    assert!((a.deviance - b.deviance).abs() < 1e-8, "{} vs {}", a.deviance, b.deviance);
}

#[test]
fn interior_optimum_is_stationary() {
    // data with a visible cluster effect so the optimum is interior
    let mut r = rng(5);
    let clusters = (0..30)
        .map(|k| {
            let b0 = 2.0 * normal(&mut r);
            let b1 = 0.7 * normal(&mut r);
            let n = 6;
            let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { normal(&mut r) });
            let y = DVector::from_fn(n, |i, _| {
                1.0 + b0 + (0.5 + b1) * x[(i, 1)] + normal(&mut r)
            });
            ClusterDesign::new(format!("k{k}"), x.clone(), x, y).unwrap()
        })
        .collect();
    let d = DesignSet::new(clusters).unwrap();
    let fit = fit_ml(&d, None).unwrap();
    assert!(fit.converged && !fit.any_boundary());
    let t = &fit.theta_hat;
    let theta = theta_vec(t);
    let ll = dense_loglik(&d, t);
    let mut g2 = 0.0;
    for a in 0..theta.len() {
        let h = 1e-5 * theta[a].abs().max(1.0);
        let eval = |delta: f64| {
            let mut v = theta.clone();
            v[a] += delta;
            let (b, psi, s2) = theta_from_vec(&v, t.p(), t.q());
            dense_loglik(&d, &Theta::new(b, psi, s2).unwrap())
        };
        g2 += ((eval(h) - eval(-h)) / (2.0 * h)).powi(2);
    }
    assert!(g2.sqrt() < 1e-5 * (1.0 + ll.abs()), "gradient norm {}", g2.sqrt());
    assert!((fit.loglik - ll).abs() < 1e-8 * ll.abs());
}
