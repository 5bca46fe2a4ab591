//! Finite-difference verification of reverse-mode gradients.
//!
//! Derivatives use the fourth-order five-point stencil, so a step near
//! `1e-3` keeps both truncation and round-off far below `1e-6` relative
//! for well-scaled functions.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient vanishes are judged on absolute error instead of 0/0.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    pub coords_checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<F>(f: &F, points: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let graph = Graph::new();
    let vars: Vec<_> = points.iter().map(|p| graph.constant(p.clone())).collect();
    let out = f(&graph, &vars)?.value();
    if out.len() != 1 {
        return Err(Error::dim("check_gradients", out.shape(), &[]));
    }
    let v = out.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("function value in gradient check".into()));
    }
    Ok(v)
}

/// Worst relative error between the reverse-mode gradient of the scalar
/// `f` at `point` and the five-point difference with step `step`.
pub fn check_gradients<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    let report = check_gradients_multi(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step, None)?;
    Ok(report.max_rel_error)
}

/// Multi-input variant. With `max_coords`, at most that many evenly spaced
/// coordinates of each input are perturbed.
pub fn check_gradients_multi<F>(
    f: F,
    points: &[Tensor<f64>],
    step: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {step}")));
    }
    let analytic: Vec<Tensor<f64>> = {
        let graph = Graph::new();
        let vars: Vec<_> = points.iter().map(|p| graph.param(p.clone())).collect();
        let out = f(&graph, &vars)?;
        if !out.value().item().is_finite() {
            return Err(Error::NonFinite("function value in gradient check".into()));
        }
        let grads = graph.backward(out)?;
        vars.iter()
            .zip(points)
            .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };

    let mut work: Vec<Tensor<f64>> = points.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: vec![0.0; points.len()],
        worst: None,
        worst_values: None,
        coords_checked: 0,
    };
    for input in 0..points.len() {
        let len = points[input].len();
        let stride = match max_coords {
            Some(k) if k > 0 && k < len => len.div_ceil(k),
            _ => 1,
        };
        for coord in (0..len).step_by(stride) {
            let x = points[input].data()[coord];
            let mut at = |offset: f64| {
                work[input].data_mut()[coord] = x + offset;
                eval(&f, &work)
            };
            let (p2, p1, m1, m2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
            work[input].data_mut()[coord] = x;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let err = rel_error(analytic[input].data()[coord], numeric);
            report.coords_checked += 1;
            if err > report.per_input[input] {
                report.per_input[input] = err;
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((input, coord));
                report.worst_values = Some((analytic[input].data()[coord], numeric));
            }
        }
    }
    Ok(report)
}
