//! Browser bindings. Every export takes and returns plain strings/numbers;
//! structured results are JSON so the page can stay framework-free.

use mlmbic::bic::{bic_from_counts, enumerate_and_rank, SelectOptions, TermSet};
use mlmbic::dataio::{parse_terms, read_table, TableFormat};
use mlmbic::simlab::{demo_grid, figure_svg, regress_cells, CellRegression, DemoConfig, GridRow};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// BIC under the three sample-size conventions for a known deviance and
/// penalty split.
#[wasm_bindgen]
pub fn bic_values(deviance: f64, k1: i32, k2: i32, n_obs: u32, n_clusters: u32) -> Result<String, JsValue> {
    if n_obs == 0 || n_clusters == 0 {
        return Err(js_err("N and J must be positive"));
    }
    let v = bic_from_counts(deviance, k1.into(), k2.into(), n_obs as usize, n_clusters as usize);
    serde_json::to_string(&v).map_err(js_err)
}

#[derive(Serialize)]
struct DemoOutput {
    grid: Vec<GridRow>,
    cells: Vec<CellRegression>,
    svg: String,
}

/// Runs the log-determinant simulation. `config_json` may be partial; missing
/// fields take their defaults.
#[wasm_bindgen]
pub fn run_demo(config_json: &str) -> Result<String, JsValue> {
    let config: DemoConfig = serde_json::from_str(config_json).map_err(js_err)?;
    config.validate().map_err(js_err)?;
    let grid = demo_grid(&config).map_err(js_err)?;
    let cells = regress_cells(&config, &grid).map_err(js_err)?;
    let svg = figure_svg(&cells);
    serde_json::to_string(&DemoOutput { grid, cells, svg }).map_err(js_err)
}

#[derive(Deserialize)]
struct NamedTerms {
    name: String,
    terms: String,
}

fn term_sets(json: &str) -> Result<Vec<TermSet>, JsValue> {
    let raw: Vec<NamedTerms> = serde_json::from_str(json).map_err(js_err)?;
    raw.into_iter()
        .map(|t| Ok(TermSet::new(t.name, parse_terms(&t.terms).map_err(js_err)?)))
        .collect()
}

/// Fits every fixed × random combination on CSV text and returns the ranked
/// report. Term sets are JSON arrays of `{"name", "terms"}`.
#[wasm_bindgen]
pub fn select_csv(
    csv: &str,
    group: &str,
    response: &str,
    fixed_json: &str,
    random_json: &str,
) -> Result<String, JsValue> {
    let data = read_table(csv.as_bytes(), TableFormat::Csv, group).map_err(js_err)?;
    let fixed = term_sets(fixed_json)?;
    let random = term_sets(random_json)?;
    let report = enumerate_and_rank(&data, response, &fixed, &random, &SelectOptions::default());
    Ok(report.to_json())
}
