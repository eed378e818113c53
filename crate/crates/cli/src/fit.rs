use mlmbic::bic::{bic_all, count_penalty, BicValues, PenaltyCount, RANK_TOL};
use mlmbic::lmmfit::{fit_ml, icc, FitResult};
use mlmbic::{build_designs, load_table, parse_formula};
use serde::Serialize;

use crate::{infer_format, write_file, Failure, FitArgs};

#[derive(Serialize)]
struct FitReport<'a> {
    formula: String,
    n_obs: usize,
    n_clusters: usize,
    fixed_names: &'a [String],
    random_names: &'a [String],
    #[serde(flatten)]
    fit: &'a FitResult,
    icc: Option<f64>,
    penalty: PenaltyCount,
    bic: BicValues,
}

pub(crate) fn run(args: FitArgs) -> Result<(), Failure> {
    let spec = parse_formula(&args.formula)?;
    let path = args.data.data.ok_or("--data is required")?;
    if let Some(g) = &args.data.group {
        if *g != spec.group {
            return Err(format!(
                "--group `{g}` differs from the formula's grouping variable `{}`",
                spec.group
            )
            .into());
        }
    }
    let data = load_table(&path, infer_format(&path, args.data.format), &spec.group)?;
    let designs = build_designs(&data, &spec)?;
    let fit = fit_ml(&designs, None)?;
    let penalty = count_penalty(&designs, &fit.theta_hat.psi, RANK_TOL)?;
    let bic = bic_all(fit.deviance, &penalty, designs.n_obs(), designs.n_clusters());
    let icc = icc(&fit.theta_hat).ok();

    println!("model     {spec}");
    println!(
        "data      N = {}, J = {}, mean cluster size {:.2}",
        designs.n_obs(),
        designs.n_clusters(),
        data.mean_cluster_size()
    );
    println!(
        "converged {} (gradient norm {:.2e}, {} iterations{})",
        if fit.converged { "yes" } else { "NO" },
        fit.gradient_norm,
        fit.iterations,
        if fit.hessian_indefinite { ", Hessian indefinite" } else { "" }
    );
    println!("loglik    {:.4}", fit.loglik);
    println!("deviance  {:.1}", fit.deviance);
    println!("fixed effects");
    for (name, b) in designs.fixed_names().iter().zip(fit.theta_hat.beta.iter()) {
        println!("  {name:<16} {b:>12.5}");
    }
    println!("random-effect covariance");
    let q = designs.q();
    for (r, name) in designs.random_names().iter().enumerate() {
        let row: Vec<String> = (0..q)
            .map(|c| format!("{:>12.5}", fit.theta_hat.psi[(r, c)]))
            .collect();
        println!("  {name:<16} {}", row.join(" "));
    }
    println!("residual variance {:.5}", fit.theta_hat.sigma2);
    if let Some(v) = icc {
        println!("ICC       {v:.3}");
    }
    for (k, &flag) in fit.boundary_flags.iter().enumerate() {
        if flag {
            let what = designs
                .random_names()
                .get(k)
                .map_or("residual variance".to_string(), |n| format!("random '{n}'"));
            println!("boundary  {what} estimated at the lower bound");
        }
    }
    println!(
        "penalty   K1 = {}, K2 = {}, K = {} (p2 = {}, rank Ψ̂ = {})",
        penalty.k1, penalty.k2, penalty.k, penalty.p2, penalty.q1
    );
    println!(
        "BIC_E {:.1}   BIC_N {:.1}   BIC_J {:.1}",
        bic.bic_e, bic.bic_n, bic.bic_j
    );

    if let Some(out) = &args.out_json {
        let report = FitReport {
            formula: spec.to_string(),
            n_obs: designs.n_obs(),
            n_clusters: designs.n_clusters(),
            fixed_names: designs.fixed_names(),
            random_names: designs.random_names(),
            fit: &fit,
            icc,
            penalty,
            bic,
        };
        let json = serde_json::to_string_pretty(&report)?;
        write_file(out, json.as_bytes())?;
    }
    if !fit.converged {
        return Err(Failure {
            code: 2,
            msg: "fit did not converge".into(),
        });
    }
    Ok(())
}
