//! Clustered tables, mixed-model formulas and per-cluster design matrices.

mod design;
mod formula;
mod table;

pub use design::{build_designs, ClusterDesign, DesignSet};
pub use formula::{join_terms, parse_formula, parse_terms, ModelSpec, Term};
pub use table::{load_table, read_table, Cluster, Dataset, TableFormat};
