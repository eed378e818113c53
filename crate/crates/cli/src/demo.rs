use mlmbic::simlab::{
    demo_grid, figure_svg, regress_cells, write_grid_csv, write_regression_csv, DemoConfig, ModelKind,
    WithinCovariate,
};

use crate::{write_file, DemoArgs, Failure};

fn build_config(args: &DemoArgs) -> Result<DemoConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            serde_json::from_str::<DemoConfig>(&text).map_err(|e| format!("config {}: {e}", p.display()))?
        }
        None => DemoConfig::default(),
    };
    if let Some(m) = &args.model {
        cfg.model = m.parse::<ModelKind>()?;
    }
    if !args.corr.is_empty() {
        cfg.correlations = args.corr.clone();
    }
    if !args.sigma2.is_empty() {
        cfg.sigma2_levels = args.sigma2.clone();
    }
    if !args.n.is_empty() {
        cfg.n_grid = args.n.clone();
    }
    if !args.j.is_empty() {
        cfg.j_grid = args.j.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = &args.within {
        cfg.within = if w == "matched" {
            WithinCovariate::Matched
        } else {
            WithinCovariate::Iid
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn run(args: DemoArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    let rows = demo_grid(&cfg)?;

    if let Some(p) = &args.out_csv {
        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf)?;
        write_file(p, &buf)?;
    }

    let points = cfg.n_grid.len() * cfg.j_grid.len();
    if cfg.n_grid.len() < 2 || cfg.j_grid.len() < 2 || points < 4 {
        println!("{:>6} {:>8} {:>4} {:>4} {:>12} {:>12}", "corr", "sigma2", "n", "J", "logdet_bb", "logdet_rr");
        for r in &rows {
            let corr = r.corr.map_or("-".to_string(), |c| format!("{c:.1}"));
            println!(
                "{corr:>6} {:>8} {:>4} {:>4} {:>12.4} {:>12.4}",
                r.sigma2, r.n, r.j, r.logdet_bb, r.logdet_rr
            );
        }
        println!("(regressions need at least two n and two J values)");
        return Ok(());
    }

    let cells = regress_cells(&cfg, &rows)?;
    println!(
        "model {}  seed {}  n {:?}  J {:?}",
        cfg.model, cfg.seed, cfg.n_grid, cfg.j_grid
    );
    println!(
        "{:>6} {:>8} {:<7} {:>16} {:>8} {:>16} {:>8}",
        "corr", "sigma2", "block", "log n (SE)", "expect", "log J (SE)", "expect"
    );
    for c in &cells {
        let corr = c.corr.map_or("-".to_string(), |v| format!("{v:.1}"));
        for (r, en, ej) in [
            (&c.fixed, c.expected.fixed_logn, c.expected.fixed_logj),
            (&c.random, c.expected.random_logn, c.expected.random_logj),
        ] {
            println!(
                "{corr:>6} {:>8} {:<7} {:>16} {:>8} {:>16} {:>8}",
                c.sigma2,
                r.block.to_string(),
                format!("{:.3} ({:.3})", r.coef_logn, r.se_logn),
                en,
                format!("{:.3} ({:.3})", r.coef_logj, r.se_logj),
                ej
            );
        }
    }

    if let Some(p) = &args.out_regression {
        let mut buf = Vec::new();
        write_regression_csv(&cells, &mut buf)?;
        write_file(p, &buf)?;
    }
    if let Some(p) = &args.out_json {
        write_file(p, serde_json::to_string_pretty(&cells)?.as_bytes())?;
    }
    if let Some(p) = &args.out_svg {
        write_file(p, figure_svg(&cells).as_bytes())?;
    }
    Ok(())
}
