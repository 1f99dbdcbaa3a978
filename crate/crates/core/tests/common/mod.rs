#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use nhhj::geometry::DifferentiationStrategy;
use nhhj::systems::{default_example, ExampleName, ExampleSpec};

pub fn map(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn all_examples() -> Vec<ExampleSpec> {
    ExampleName::ALL.into_iter().map(default_example).collect()
}

/// The Hamiltonians written out term by term, independent of the metric
/// used by the library.
pub fn literal_hamiltonian(ex: &ExampleSpec, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let k = &ex.params;
    match ex.name {
        ExampleName::VerticalRollingDisk => {
            0.5 * ((p[0] * p[0] + p[1] * p[1]) / k["m"] + p[2] * p[2] / k["J"] + p[3] * p[3] / k["I"])
        }
        ExampleName::KnifeEdge => {
            0.5 * ((p[0] * p[0] + p[1] * p[1]) / k["m"] + p[2] * p[2] / k["J"]) - k["m"] * k["g"] * q[0] * k["alpha"].sin()
        }
        ExampleName::Snakeboard => {
            let (m, r, j0, j1) = (k["m"], k["r"], k["J0"], k["J1"]);
            (p[0] * p[0] + p[1] * p[1]) / (2.0 * m)
                + p[3] * p[3] / (2.0 * j0)
                + (p[2] - p[3]).powi(2) / (2.0 * (m * r * r - j0))
                + p[4] * p[4] / (4.0 * j1)
        }
        ExampleName::ChaplyginSleigh => {
            let (mm, j, a) = (k["M"], k["J"], k["a"]);
            let (s, c) = q[2].sin_cos();
            (mm * a * a * s * s + j) / (2.0 * j * mm) * p[0] * p[0]
                + (mm * a * a * c * c + j) / (2.0 * j * mm) * p[1] * p[1]
                + p[2] * p[2] / (2.0 * j)
                - a * a * s * c / j * p[0] * p[1]
                + a / j * (s * p[0] - c * p[1]) * p[2]
        }
    }
}

pub fn fd() -> DifferentiationStrategy {
    DifferentiationStrategy::finite_difference()
}

pub fn an() -> DifferentiationStrategy {
    DifferentiationStrategy::analytic()
}

/// `‖a − b‖_∞ / max(1, ‖b‖_∞)`.
pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Sup-norm distance of a recorded configuration trajectory to the example's
/// closed form, over the components the closed form determines.
pub fn sup_error_q(ex: &ExampleSpec, times: &[f64], qs: &[DVector<f64>]) -> f64 {
    times
        .iter()
        .zip(qs)
        .map(|(&t, q)| {
            let cf = ex.closed_form(t).expect("closed form");
            cf.q.iter().zip(q.iter()).filter_map(|(c, v)| c.map(|c| (c - v).abs())).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
