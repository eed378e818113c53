use mlmbic::dataio::DesignSet;
use mlmbic::lmmfit::{fit_ml, gls_beta, profiled_gradient_rho};
use mlmbic::simlab::*;
use mlmbic::{log_likelihood, Theta};
use nalgebra::{DMatrix, DVector};

fn moments(block: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let j = block.nrows() as f64;
    let mean = block.row_mean().transpose();
    let mut c = block.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = c.transpose() * &c / j;
    (mean, cov)
}

fn assert_exact(s: &MatchedSample) {
    let (m, c) = moments(&s.block);
    assert!((m - &s.target_mean).amax() < 1e-10);
    assert!((c - &s.target_cov).amax() < 1e-10);
}

#[test]
fn model_b_moments_are_exact() {
    let cfg = DemoConfig::model_b();
    let t = cfg.theta0(None, 42.78).unwrap();
    let s = gen_moment_matched(50, 10, &t, &cfg.covariates(), 3).unwrap();
    assert_eq!(s.block.ncols(), 12);
    assert_exact(&s);
    assert_eq!(s.dataset.n_obs(), 500);
    assert_eq!(s.dataset.n_clusters(), 50);
    let xw = DVector::from_column_slice(s.x_within.as_slice());
    assert!(xw.mean().abs() < 1e-10);
    assert!(((xw.norm_squared() / 500.0).sqrt() - 2.07).abs() < 1e-10);
}

#[test]
fn every_grid_point_is_matched_exactly() {
    for cfg in [DemoConfig::model_b(), DemoConfig::default()] {
        for (corr, s2) in cfg.cells().into_iter().step_by(2) {
            let t = cfg.theta0(corr, s2).unwrap();
            for &n in &cfg.n_grid {
                for &j in &cfg.j_grid {
                    let s = gen_moment_matched(j, n, &t, &cfg.covariates(), point_seed(cfg.seed, n, j)).unwrap();
                    assert_exact(&s);
                }
            }
        }
    }
}

#[test]
fn perfect_negative_correlation_ties_the_effects() {
    let cfg = DemoConfig::default();
    let t = cfg.theta0(Some(-1.0), 10.0).unwrap();
    let s = gen_moment_matched(60, 10, &t, &cfg.covariates(), 9).unwrap();
    assert_exact(&s);
    let b = s.effects(2);
    let ratio = (cfg.tau1sq / cfg.tau0sq).sqrt();
    for r in 0..b.nrows() {
        assert!((b[(r, 1)] + ratio * b[(r, 0)]).abs() < 1e-9);
    }
}

#[test]
fn too_few_clusters_is_rejected() {
    let cfg = DemoConfig {
        n_grid: vec![40],
        j_grid: vec![10],
        ..DemoConfig::model_b()
    };
    assert!(cfg.validate().is_err());
    assert!(demo_grid(&cfg).is_err());
}

fn matched_b(j: usize, n: usize, s2: f64) -> (Theta, DesignSet) {
    let cfg = DemoConfig {
        within: WithinCovariate::Matched,
        ..DemoConfig::model_b()
    };
    let t = cfg.theta0(None, s2).unwrap();
    let s = gen_moment_matched(j, n, &t, &cfg.covariates(), 11).unwrap();
    assert_exact(&s);
    (t.clone(), demo_designs(ModelKind::B, &s.dataset).unwrap())
}

#[test]
fn gradient_vanishes_at_generating_parameters() {
    let (t, d) = matched_b(60, 10, 42.78);
    let ll = log_likelihood(&d, &t).unwrap();
    let beta = gls_beta(&d, &t.psi, t.sigma2).unwrap();
    assert!((beta - &t.beta).amax() < 1e-8);
    let g = profiled_gradient_rho(&d, &t.psi, t.sigma2).unwrap();
    assert!(g.norm() < 1e-5 * (1.0 + ll.abs()), "gradient {}", g.norm());
}

#[test]
fn fit_recovers_generating_parameters() {
    let (t, d) = matched_b(100, 20, 10.0);
    let fit = fit_ml(&d, None).unwrap();
    assert!(fit.converged);
    assert!(fit.gradient_norm < 1e-6, "gradient {}", fit.gradient_norm);
    assert!((fit.theta_hat.beta.clone() - &t.beta).amax() < 1e-6);
    assert!((fit.theta_hat.psi[(0, 0)] - t.psi[(0, 0)]).abs() < 1e-5);
    assert!((fit.theta_hat.sigma2 - t.sigma2).abs() < 1e-6);
}

#[test]
fn grid_is_deterministic_and_ordered() {
    let cfg = DemoConfig {
        sigma2_levels: vec![1.0],
        ..DemoConfig::model_b()
    };
    let a = demo_grid(&cfg).unwrap();
    let b = demo_grid(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 12);
    assert_eq!((a[0].n, a[0].j, a[11].n, a[11].j), (10, 50, 40, 400));
    let mut x = Vec::new();
    let mut y = Vec::new();
    write_grid_csv(&a, &mut x).unwrap();
    write_grid_csv(&b, &mut y).unwrap();
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().starts_with("model,corr,sigma2,n,J,logdet_bb,logdet_rr"));
}

#[test]
fn single_point_grid() {
    let cfg = DemoConfig {
        sigma2_levels: vec![1.0],
        n_grid: vec![10],
        j_grid: vec![50],
        ..DemoConfig::model_b()
    };
    assert_eq!(demo_grid(&cfg).unwrap().len(), 1);
}

#[test]
fn approaching_singularity_inflates_random_block() {
    let cfg = DemoConfig {
        correlations: vec![0.0, -0.8],
        sigma2_levels: vec![10.0],
        n_grid: vec![20],
        j_grid: vec![100],
        ..DemoConfig::default()
    };
    let rows = demo_grid(&cfg).unwrap();
    assert!(rows[1].logdet_rr > rows[0].logdet_rr);
}

#[test]
fn model_b_coefficients() {
    let cfg = DemoConfig::model_b();
    let rows = demo_grid(&cfg).unwrap();
    for c in regress_cells(&cfg, &rows).unwrap() {
        assert!((0.9..=1.4).contains(&c.fixed.coef_logn), "{}", c.fixed.coef_logn);
        assert!((c.random.coef_logj - 2.0).abs() <= 0.02);
        assert_eq!(c.expected.fixed_logn, 1.0);
        assert_eq!(c.expected.random_logj, 2.0);
    }
}

#[test]
fn model_a_full_rank_coefficients_and_monotonicity() {
    let cfg = DemoConfig::default();
    let rows = demo_grid(&cfg).unwrap();
    let cells = regress_cells(&cfg, &rows).unwrap();
    for c in cells.iter().filter(|c| c.corr != Some(-1.0)) {
        assert!((c.fixed.coef_logj - 3.0).abs() <= 0.05);
        assert!((c.random.coef_logj - 4.0).abs() <= 0.05);
    }
    for corr in [-0.8, -0.6, -0.4, -0.2, 0.0] {
        let seq: Vec<f64> = cells
            .iter()
            .filter(|c| c.corr == Some(corr))
            .map(|c| c.fixed.coef_logn)
            .collect();
        assert!(seq.windows(2).all(|w| w[1] <= w[0]), "{corr}: {seq:?}");
    }

    let svg = figure_svg(&cells);
    assert_eq!(svg.matches(r#"class="empirical""#).count(), 4 * cells.len());
    assert_eq!(svg.matches(r#"class="expected""#).count(), 4 * 6);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}
