#![allow(dead_code)]

use sortsel::datagen::{simulate, truth_grid_fit, DgpSpec};
use sortsel::selection::{grid_from_households, Household, ModelGridFit};

/// Simulates `spec` and fills a `grid`×`grid` fit with the true parameters.
pub fn truth_fit(spec: &DgpSpec, grid: usize) -> (ModelGridFit, Vec<Household>) {
    let data = simulate(spec).unwrap().households;
    let g = grid_from_households(&data, grid).unwrap();
    (truth_grid_fit(spec, &g, &data).unwrap(), data)
}

/// Observed wages of the couples in which both spouses work.
pub fn working_wages(data: &[Household]) -> (Vec<f64>, Vec<f64>) {
    data.iter().filter_map(|h| Some((h.y_w?, h.y_h?))).unzip()
}
