mod common;

use common::*;
use mlmbic::bic::bic_from_counts;
use mlmbic::dataio::{join_terms, parse_formula, parse_terms, Term};
use mlmbic::fisher::{duplication_matrix, unvech, vech, woodbury_apply};
use mlmbic::simlab::exact_moment_sample;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn term() -> impl Strategy<Value = Term> {
    prop_oneof![
        ident().prop_map(Term::Var),
        (ident(), ident())
            .prop_filter("distinct", |(a, b)| a != b)
            .prop_map(|(a, b)| Term::Interaction(a, b)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bic_orders_with_nonnegative_split(
        dev in 0.0f64..1e5,
        k1 in 0i64..20,
        k2 in 0i64..20,
        j in 2usize..500,
        extra in 0usize..5000,
    ) {
        let n = j + extra;
        let v = bic_from_counts(dev, k1, k2, n, j);
        prop_assert!(v.bic_j <= v.bic_e + 1e-9);
        prop_assert!(v.bic_e <= v.bic_n + 1e-9);
        // the criteria coincide when one of the two counts is zero
        let all_n = bic_from_counts(dev, k1 + k2, 0, n, j);
        prop_assert!((all_n.bic_e - v.bic_n).abs() < 1e-9);
    }

    #[test]
    fn term_lists_round_trip(mut extra in prop::collection::vec(term(), 0..5), intercept in any::<bool>()) {
        let mut terms = Vec::new();
        if intercept {
            terms.push(Term::Intercept);
        }
        terms.append(&mut extra);
        prop_assume!(!terms.is_empty());
        let mut seen = Vec::new();
        terms.retain(|t| {
            let key = t.to_string();
            let fresh = !seen.contains(&key);
            seen.push(key);
            fresh
        });
        let text = join_terms(&terms);
        prop_assert_eq!(parse_terms(&text).unwrap(), terms.clone());
        let formula = format!("y ~ {text} + (1 | g)");
        let spec = parse_formula(&formula).unwrap();
        prop_assert_eq!(parse_formula(&spec.to_string()).unwrap(), spec);
    }

    #[test]
    fn vech_unvech_and_duplication(q in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_pd(&mut r, q);
        let v = vech(&a);
        prop_assert_eq!(v.len(), q * (q + 1) / 2);
        prop_assert_eq!(unvech(v.as_slice(), q), a.clone());
        let dv = duplication_matrix(q) * &v;
        prop_assert_eq!(dv.as_slice(), a.as_slice());
    }

    #[test]
    fn woodbury_solves_the_system(q in 1usize..=3, extra in 0usize..6, s2 in 0.05f64..5.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = q + extra;
        let z = random_matrix(&mut r, n, q);
        let psi = random_pd(&mut r, q);
        let b = random_matrix(&mut r, n, 2);
        let x = woodbury_apply(&z, &psi, s2, &b).unwrap();
        let v = dense_v(&z, &psi, s2);
        // backward-stable solve: residual on the order of ε‖V‖‖x‖
        let resid = (&v * &x - &b).amax();
        prop_assert!(resid < 1e-12 * v.amax() * x.amax(), "{resid:e}");
    }

    #[test]
    fn moment_matching_is_exact(d in 1usize..=5, extra in 2usize..40, seed in any::<u64>(), rank_drop in 0usize..2) {
        let mut r = rng(seed);
        let j = d + extra;
        let mut cov = random_pd(&mut r, d);
        if rank_drop == 1 && d > 1 {
            // project out one direction to get a singular target
            let u = DVector::from_fn(d, |_, _| normal(&mut r)).normalize();
            let p = DMatrix::identity(d, d) - &u * u.transpose();
            cov = &p * cov * &p;
        }
        let mean = DVector::from_fn(d, |_, _| normal(&mut r));
        let s = exact_moment_sample(&mut r, j, &mean, &cov).unwrap();
        let m = s.row_mean().transpose();
        let mut c = s.clone();
        for mut row in c.row_iter_mut() {
            row -= m.transpose();
        }
        let sample_cov = c.transpose() * &c / j as f64;
        prop_assert!((m - &mean).amax() < 1e-10);
        prop_assert!((sample_cov - &cov).amax() < 1e-10 * cov.amax().max(1.0));
    }
}
