//! Dense `f64` tensors, a static computation graph with reverse-mode
//! differentiation, and the Adam optimizer.

mod graph;
mod params;
mod tensor;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub use graph::{Graph, NodeId, Op, Values};
pub use params::{glorot_uniform, AdamConfig, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at node {node} ({op}): {shapes:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("output node {node} is not a scalar (shape {shape:?})")]
    NonScalarOutput { node: usize, shape: Vec<usize> },
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("missing gradient for `{0}`")]
    MissingGradient(String),
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
}

/// Evaluates the graph and returns every output registered with
/// [`Graph::mark_output`].
pub fn forward(
    graph: &Graph,
    params: &ParamSet,
    inputs: &HashMap<String, Tensor>,
) -> Result<BTreeMap<String, Tensor>, DiffError> {
    let values = graph.evaluate(params, inputs)?;
    Ok(graph
        .outputs()
        .iter()
        .map(|(name, &id)| (name.clone(), values.get(id).clone()))
        .collect())
}

/// Gradients of a scalar output.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub inputs: BTreeMap<String, Tensor>,
    pub output: f64,
}

/// Gradient of the named scalar output with respect to every parameter in
/// the graph and to each input listed in `wrt_inputs`.
///
/// Parameters the output does not depend on receive zeros.
pub fn backward(
    graph: &Graph,
    params: &ParamSet,
    inputs: &HashMap<String, Tensor>,
    output: &str,
    wrt_inputs: &[&str],
) -> Result<Gradients, DiffError> {
    let out = graph
        .output_id(output)
        .ok_or_else(|| DiffError::UnknownOutput(output.to_string()))?;
    let mut g = graph.clone();
    let param_names: Vec<String> = g.params().keys().cloned().collect();
    let mut wrt: Vec<NodeId> = param_names.iter().map(|n| g.params()[n]).collect();
    for name in wrt_inputs {
        wrt.push(
            g.input_id(name)
                .ok_or_else(|| DiffError::MissingInput(name.to_string()))?,
        );
    }
    let grad_ids = g.gradients(out, &wrt)?;
    let values = g.evaluate(params, inputs)?;
    let mut result = Gradients {
        output: values.scalar(out),
        ..Default::default()
    };
    for (name, id) in param_names.iter().zip(&grad_ids) {
        result.params.insert(name.clone(), values.get(*id).clone());
    }
    for (name, id) in wrt_inputs.iter().zip(&grad_ids[param_names.len()..]) {
        result.inputs.insert(name.to_string(), values.get(*id).clone());
    }
    Ok(result)
}

/// Relative error used by the finite-difference checks:
/// `|a - n| / max(|a|, |n|, 1e-3)`. The floor keeps near-zero gradients
/// from inflating the ratio with pure round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates excluded because the perturbation crossed a relu or
    /// clamp kink.
    pub skipped: usize,
}

/// Compares [`backward`] against central differences with step `h` for
/// every parameter coordinate.
///
/// A coordinate is excluded when `+h` and `-h` land on different sides of
/// a relu or clamp boundary anywhere in the graph; the derivative is not
/// defined there.
pub fn finite_diff_check(
    graph: &Graph,
    params: &ParamSet,
    inputs: &HashMap<String, Tensor>,
    output: &str,
    h: f64,
) -> Result<FdReport, DiffError> {
    let out = graph
        .output_id(output)
        .ok_or_else(|| DiffError::UnknownOutput(output.to_string()))?;
    let analytic = backward(graph, params, inputs, output, &[])?;
    let kinks: Vec<(NodeId, Op)> = (0..graph.len())
        .map(NodeId)
        .filter(|&id| matches!(graph.op(id), Op::Relu | Op::Clamp { .. }))
        .map(|id| (graph.parents(id)[0], graph.op(id).clone()))
        .collect();
    let pattern = |values: &Values| -> Vec<bool> {
        kinks
            .iter()
            .flat_map(|(p, op)| {
                let v = values.get(*p).data().to_vec();
                let op = op.clone();
                v.into_iter().map(move |x| match op {
                    Op::Clamp { lo, hi } => x > lo && x < hi,
                    _ => x > 0.0,
                })
            })
            .collect()
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work = params.clone();
    for name in graph.params().keys() {
        let value = params.get(name).ok_or_else(|| DiffError::MissingParam(name.clone()))?;
        for i in 0..value.len() {
            let base = value.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = base + h;
            let plus = graph.evaluate(&work, inputs)?;
            work.get_mut(name).unwrap().data_mut()[i] = base - h;
            let minus = graph.evaluate(&work, inputs)?;
            work.get_mut(name).unwrap().data_mut()[i] = base;
            if !kinks.is_empty() && pattern(&plus) != pattern(&minus) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.scalar(out) - minus.scalar(out)) / (2.0 * h);
            let a = analytic.params[name].data()[i];
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}
