use std::path::{Path, PathBuf};

use mlmbic::bic::{enumerate_and_rank, BicReport, SelectOptions, TermSet, RANK_TOL};
use mlmbic::dataio::{parse_terms, TableFormat};
use mlmbic::load_table;
use serde::Deserialize;

use crate::{infer_format, write_file, Failure, SelectArgs};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTerms {
    name: String,
    terms: String,
}

/// Selection config file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectConfig {
    data: Option<PathBuf>,
    format: Option<String>,
    group: Option<String>,
    response: String,
    fixed: Vec<NamedTerms>,
    random: Vec<NamedTerms>,
    out_json: Option<PathBuf>,
    out_csv: Option<PathBuf>,
    rank_tol: Option<f64>,
}

fn term_sets(list: &[NamedTerms], what: &str) -> Result<Vec<TermSet>, Failure> {
    if list.is_empty() {
        return Err(format!("config has no {what} candidate sets").into());
    }
    list.iter()
        .map(|t| {
            parse_terms(&t.terms)
                .map(|terms| TermSet::new(t.name.clone(), terms))
                .map_err(|e| format!("{what} set `{}`: {e}", t.name).into())
        })
        .collect()
}

fn relative_to(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn print_table(report: &BicReport) {
    println!(
        "N = {}, J = {}   (* = criteria disagree on rank)",
        report.n_obs, report.n_clusters
    );
    println!(
        "{:<10} {:<34} {:<16} {:>9} {:>3} {:>3} {:>12} {:>12} {:>12}",
        "model", "fixed", "random", "deviance", "K1", "K2", "BIC_E", "BIC_N", "BIC_J"
    );
    for c in &report.candidates {
        if let Some(err) = &c.error {
            println!("{:<10} {:<34} {:<16} failed: {err}", c.label, c.fixed, c.random);
            continue;
        }
        let cell = |v: Option<f64>, r: Option<usize>| {
            format!("{:.1}({})", v.unwrap_or(f64::NAN), r.unwrap_or(0))
        };
        println!(
            "{:<10} {:<34} {:<16} {:>9.1} {:>3} {:>3} {:>12} {:>12} {:>12}{}",
            c.label,
            c.fixed,
            c.random,
            c.deviance.unwrap_or(f64::NAN),
            c.k1.unwrap_or(0),
            c.k2.unwrap_or(0),
            cell(c.bic_e, c.rank_e),
            cell(c.bic_n, c.rank_n),
            cell(c.bic_j, c.rank_j),
            if c.ranks_disagree() { " *" } else { "" }
        );
        for w in &c.warnings {
            println!("{:<10} note: {w}", "");
        }
    }
    let (e, n, j) = report.winners();
    println!(
        "best: BIC_E {}, BIC_N {}, BIC_J {}",
        e.unwrap_or("-"),
        n.unwrap_or("-"),
        j.unwrap_or("-")
    );
}

pub(crate) fn run(args: SelectArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let cfg: SelectConfig = serde_json::from_str(&text)
        .map_err(|e| format!("config {}: {e}", args.config.display()))?;
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();

    let data_path = args
        .data
        .data
        .or_else(|| cfg.data.map(|p| relative_to(&base, p)))
        .ok_or("no data file given (config `data` or --data)")?;
    let format = match (args.data.format, &cfg.format) {
        (Some(f), _) => Some(f),
        (None, Some(s)) => Some(s.parse::<TableFormat>()?),
        (None, None) => None,
    };
    let group = args
        .data
        .group
        .or(cfg.group)
        .ok_or("no group column given (config `group` or --group)")?;
    let fixed = term_sets(&cfg.fixed, "fixed")?;
    let random = term_sets(&cfg.random, "random")?;
    let opts = SelectOptions {
        rank_tol: cfg.rank_tol.unwrap_or(RANK_TOL),
        ..Default::default()
    };

    let data = load_table(&data_path, infer_format(&data_path, format), &group)?;
    let report = enumerate_and_rank(&data, &cfg.response, &fixed, &random, &opts);
    print_table(&report);

    let out_json = args.out_json.or(cfg.out_json.map(|p| relative_to(&base, p)));
    let out_csv = args.out_csv.or(cfg.out_csv.map(|p| relative_to(&base, p)));
    if let Some(p) = out_json {
        write_file(&p, report.to_json().as_bytes())?;
    }
    if let Some(p) = out_csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_file(&p, &buf)?;
    }
    if report.candidates.iter().all(|c| c.error.is_some()) {
        return Err("no candidate could be fitted".into());
    }
    Ok(())
}
