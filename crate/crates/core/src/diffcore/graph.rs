//! Static computation graph with symbolic reverse-mode differentiation.
//!
//! Nodes are appended in topological order and their shapes are inferred
//! when they are created. [`Graph::gradients`] appends the vector-Jacobian
//! products as ordinary nodes, so a gradient can itself be differentiated.

use std::collections::{BTreeMap, HashMap};

use super::tensor::{numel, Tensor};
use super::{DiffError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    Const(Tensor),
    Neg,
    Scale(f64),
    AddScalar(f64),
    Tanh,
    Relu,
    /// 1 where the input is positive, else 0. Zero derivative.
    ReluMask,
    Exp,
    Square,
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// 1 where `lo < x < hi`, else 0. Zero derivative.
    ClampMask {
        lo: f64,
        hi: f64,
    },
    /// Identity in value, blocks gradient flow.
    Detach,
    Transpose,
    Reshape(Vec<usize>),
    Softmax,
    LogSoftmax,
    ReduceSum,
    ReduceMean,
    SumRows,
    SumCols,
    /// Each row repeated `k` times in place: `[r,c] -> [r*k,c]`.
    RepeatRows(usize),
    /// Sum of consecutive blocks of `k` rows: `[r*k,c] -> [r,c]`.
    SumRowBlocks(usize),
    BroadcastScalar(Vec<usize>),
    BroadcastRow(usize),
    BroadcastCol(usize),
    SliceCols {
        start: usize,
        end: usize,
    },
    PadCols {
        start: usize,
        total: usize,
    },
    Add,
    Sub,
    Mul,
    MatMul,
    AddBias,
    ConcatCols,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::ReluMask => "relu_mask",
            Op::Exp => "exp",
            Op::Square => "square",
            Op::Clamp { .. } => "clamp",
            Op::ClampMask { .. } => "clamp_mask",
            Op::Detach => "detach",
            Op::Transpose => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::ReduceSum => "reduce_sum",
            Op::ReduceMean => "reduce_mean",
            Op::SumRows => "sum_rows",
            Op::SumCols => "sum_cols",
            Op::RepeatRows(_) => "repeat_rows",
            Op::SumRowBlocks(_) => "sum_row_blocks",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::BroadcastRow(_) => "broadcast_row",
            Op::BroadcastCol(_) => "broadcast_col",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::AddBias => "add_bias",
            Op::ConcatCols => "concat_cols",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    parents: Vec<NodeId>,
    shape: Vec<usize>,
}

/// Values of every node after [`Graph::evaluate`].
#[derive(Clone, Debug)]
pub struct Values {
    values: Vec<Tensor>,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.values[id.0].item()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, NodeId>,
    params: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    /// Parameter nodes by name.
    pub fn params(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    /// Registers `id` under an output name used by [`super::forward`].
    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn outputs(&self) -> &BTreeMap<String, NodeId> {
        &self.outputs
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents, shape });
        id
    }

    fn mismatch(&self, op: &Op, parents: &[NodeId]) -> DiffError {
        DiffError::ShapeMismatch {
            node: self.nodes.len(),
            op: op.name(),
            shapes: parents.iter().map(|p| self.shape(*p).to_vec()).collect(),
        }
    }

    fn check_rank2(&self, op: &Op, x: NodeId) -> Result<(usize, usize), DiffError> {
        match self.shape(x) {
            [r, c] => Ok((*r, *c)),
            _ => Err(self.mismatch(op, &[x])),
        }
    }

    /// Named input. Re-declaring a name returns the existing node.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, DiffError> {
        if let Some(&id) = self.inputs.get(name) {
            if self.shape(id) != shape {
                return Err(DiffError::ShapeMismatch {
                    node: id.0,
                    op: "input",
                    shapes: vec![self.shape(id).to_vec(), shape.to_vec()],
                });
            }
            return Ok(id);
        }
        let id = self.push(Op::Input(name.to_string()), vec![], shape.to_vec());
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    /// Named parameter read from the [`ParamSet`] at evaluation time.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, DiffError> {
        if let Some(&id) = self.params.get(name) {
            if self.shape(id) != shape {
                return Err(DiffError::ShapeMismatch {
                    node: id.0,
                    op: "param",
                    shapes: vec![self.shape(id).to_vec(), shape.to_vec()],
                });
            }
            return Ok(id);
        }
        let id = self.push(Op::Param(name.to_string()), vec![], shape.to_vec());
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        self.push(Op::Const(t), vec![], shape)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(op, vec![x], shape)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Neg, x)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::AddScalar(c), x)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu, x)
    }

    fn relu_mask(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::ReluMask, x)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Square, x)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp { lo, hi }, x)
    }

    pub fn detach(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Detach, x)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.check_rank2(&Op::Transpose, x)?;
        Ok(self.push(Op::Transpose, vec![x], vec![c, r]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let op = Op::Reshape(shape.to_vec());
        if numel(shape) != numel(self.shape(x)) || shape.contains(&0) {
            return Err(self.mismatch(&op, &[x]));
        }
        Ok(self.push(op, vec![x], shape.to_vec()))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.check_rank2(&Op::Softmax, x)?;
        Ok(self.unary(Op::Softmax, x))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.check_rank2(&Op::LogSoftmax, x)?;
        Ok(self.unary(Op::LogSoftmax, x))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::ReduceSum, vec![x], vec![])
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::ReduceMean, vec![x], vec![])
    }

    /// `[r,c] -> [c]`
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let (_, c) = self.check_rank2(&Op::SumRows, x)?;
        Ok(self.push(Op::SumRows, vec![x], vec![c]))
    }

    /// `[r,c] -> [r]`
    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        let (r, _) = self.check_rank2(&Op::SumCols, x)?;
        Ok(self.push(Op::SumCols, vec![x], vec![r]))
    }

    /// `[r,c] -> [r*k,c]`, row `i` of the result is row `i / k` of `x`.
    pub fn repeat_rows(&mut self, x: NodeId, k: usize) -> Result<NodeId, DiffError> {
        let op = Op::RepeatRows(k);
        let (r, c) = self.check_rank2(&op, x)?;
        if k == 0 {
            return Err(self.mismatch(&op, &[x]));
        }
        Ok(self.push(op, vec![x], vec![r * k, c]))
    }

    /// `[r*k,c] -> [r,c]`, summing each block of `k` consecutive rows.
    pub fn sum_row_blocks(&mut self, x: NodeId, k: usize) -> Result<NodeId, DiffError> {
        let op = Op::SumRowBlocks(k);
        let (rk, c) = self.check_rank2(&op, x)?;
        if k == 0 || rk % k != 0 {
            return Err(self.mismatch(&op, &[x]));
        }
        Ok(self.push(op, vec![x], vec![rk / k, c]))
    }

    pub fn broadcast_scalar(&mut self, s: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let op = Op::BroadcastScalar(shape.to_vec());
        if numel(self.shape(s)) != 1 {
            return Err(self.mismatch(&op, &[s]));
        }
        Ok(self.push(op, vec![s], shape.to_vec()))
    }

    /// `[c] -> [rows, c]`
    pub fn broadcast_row(&mut self, v: NodeId, rows: usize) -> Result<NodeId, DiffError> {
        let op = Op::BroadcastRow(rows);
        match self.shape(v) {
            [c] => {
                let c = *c;
                Ok(self.push(op, vec![v], vec![rows, c]))
            }
            _ => Err(self.mismatch(&op, &[v])),
        }
    }

    /// `[r] -> [r, cols]`
    pub fn broadcast_col(&mut self, v: NodeId, cols: usize) -> Result<NodeId, DiffError> {
        let op = Op::BroadcastCol(cols);
        match self.shape(v) {
            [r] => {
                let r = *r;
                Ok(self.push(op, vec![v], vec![r, cols]))
            }
            _ => Err(self.mismatch(&op, &[v])),
        }
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, DiffError> {
        let op = Op::SliceCols { start, end };
        let (r, c) = self.check_rank2(&op, x)?;
        if start >= end || end > c {
            return Err(self.mismatch(&op, &[x]));
        }
        Ok(self.push(op, vec![x], vec![r, end - start]))
    }

    fn pad_cols(&mut self, x: NodeId, start: usize, total: usize) -> Result<NodeId, DiffError> {
        let op = Op::PadCols { start, total };
        let (r, w) = self.check_rank2(&op, x)?;
        if start + w > total {
            return Err(self.mismatch(&op, &[x]));
        }
        Ok(self.push(op, vec![x], vec![r, total]))
    }

    fn same_shape(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(&op, &[a, b]));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, vec![a, b], shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(Op::Mul, a, b)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        match (self.shape(a), self.shape(b)) {
            ([m, k1], [k2, n]) if k1 == k2 => {
                let shape = vec![*m, *n];
                Ok(self.push(Op::MatMul, vec![a, b], shape))
            }
            _ => Err(self.mismatch(&Op::MatMul, &[a, b])),
        }
    }

    /// Adds a rank-1 bias onto every row of a rank-2 node.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        match (self.shape(x), self.shape(b)) {
            ([r, c], [cb]) if c == cb => {
                let shape = vec![*r, *c];
                Ok(self.push(Op::AddBias, vec![x, b], shape))
            }
            _ => Err(self.mismatch(&Op::AddBias, &[x, b])),
        }
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        match (self.shape(a), self.shape(b)) {
            ([ra, ca], [rb, cb]) if ra == rb => {
                let shape = vec![*ra, ca + cb];
                Ok(self.push(Op::ConcatCols, vec![a, b], shape))
            }
            _ => Err(self.mismatch(&Op::ConcatCols, &[a, b])),
        }
    }

    /// `x W + b`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    /// Row-wise diagonal Gaussian log-density of `z` under `N(mu, exp(log_sigma)^2)`.
    /// All three are `[r, d]`; the result is `[r]`.
    pub fn gaussian_log_density(&mut self, z: NodeId, mu: NodeId, log_sigma: NodeId) -> Result<NodeId, DiffError> {
        let d = *self.shape(z).last().unwrap_or(&1) as f64;
        let diff = self.sub(z, mu)?;
        let neg_ls = self.neg(log_sigma);
        let inv_sigma = self.exp(neg_ls);
        let scaled = self.mul(diff, inv_sigma)?;
        let sq = self.square(scaled);
        let quad = self.sum_cols(sq)?;
        let log_det = self.sum_cols(log_sigma)?;
        let half_quad = self.scale(quad, -0.5);
        let lp = self.sub(half_quad, log_det)?;
        Ok(self.add_scalar(lp, -0.5 * d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// Evaluates every node in order.
    pub fn evaluate(&self, params: &ParamSet, inputs: &HashMap<String, Tensor>) -> Result<Values, DiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = |k: usize| &values[node.parents[k].0];
            let out = match &node.op {
                Op::Input(name) => {
                    let t = inputs.get(name).ok_or_else(|| DiffError::MissingInput(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(DiffError::ShapeMismatch {
                            node: i,
                            op: "input",
                            shapes: vec![node.shape.clone(), t.shape().to_vec()],
                        });
                    }
                    t.clone()
                }
                Op::Param(name) => {
                    let t = params.get(name).ok_or_else(|| DiffError::MissingParam(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(DiffError::ShapeMismatch {
                            node: i,
                            op: "param",
                            shapes: vec![node.shape.clone(), t.shape().to_vec()],
                        });
                    }
                    t.clone()
                }
                Op::Const(t) => t.clone(),
                Op::Neg => v(0).map(|x| -x),
                Op::Scale(c) => v(0).map(|x| c * x),
                Op::AddScalar(c) => v(0).map(|x| x + c),
                Op::Tanh => v(0).map(f64::tanh),
                Op::Relu => v(0).map(|x| x.max(0.0)),
                Op::ReluMask => v(0).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
                Op::Exp => v(0).map(f64::exp),
                Op::Square => v(0).map(|x| x * x),
                Op::Clamp { lo, hi } => v(0).map(|x| x.clamp(*lo, *hi)),
                Op::ClampMask { lo, hi } => v(0).map(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 }),
                Op::Detach => v(0).clone(),
                Op::Transpose => v(0).transpose(),
                Op::Reshape(shape) => v(0).reshape(shape),
                Op::Softmax => v(0).softmax_rows(),
                Op::LogSoftmax => v(0).log_softmax_rows(),
                Op::ReduceSum => Tensor::scalar(v(0).sum()),
                Op::ReduceMean => Tensor::scalar(v(0).sum() / v(0).len() as f64),
                Op::SumRows => v(0).sum_rows(),
                Op::SumCols => v(0).sum_cols(),
                Op::RepeatRows(k) => v(0).repeat_rows(*k),
                Op::SumRowBlocks(k) => v(0).sum_row_blocks(*k),
                Op::BroadcastScalar(shape) => Tensor::filled(shape, v(0).item()),
                Op::BroadcastRow(rows) => {
                    let row = v(0).data();
                    let mut data = Vec::with_capacity(rows * row.len());
                    for _ in 0..*rows {
                        data.extend_from_slice(row);
                    }
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::BroadcastCol(cols) => {
                    let data = v(0)
                        .data()
                        .iter()
                        .flat_map(|&x| std::iter::repeat_n(x, *cols))
                        .collect();
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::SliceCols { start, end } => v(0).slice_cols(*start, *end),
                Op::PadCols { start, total } => v(0).pad_cols(*start, *total),
                Op::Add => v(0).zip_map(v(1), |a, b| a + b),
                Op::Sub => v(0).zip_map(v(1), |a, b| a - b),
                Op::Mul => v(0).zip_map(v(1), |a, b| a * b),
                Op::MatMul => v(0).matmul(v(1)),
                Op::AddBias => v(0).add_row_vector(v(1)),
                Op::ConcatCols => v(0).concat_cols(v(1)),
            };
            values.push(out);
        }
        Ok(Values { values })
    }

    /// Appends nodes computing `d output / d wrt[i]` for each requested node.
    ///
    /// `output` must hold exactly one element. A node that `output` does not
    /// depend on (or only through [`Graph::detach`]) gets a zero gradient.
    pub fn gradients(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>, DiffError> {
        if numel(self.shape(output)) != 1 {
            return Err(DiffError::NonScalarOutput {
                node: output.0,
                shape: self.shape(output).to_vec(),
            });
        }
        let n = output.0 + 1;
        // needs[i]: some wrt node is reachable from i through differentiable edges.
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if needs[i] || !differentiable(&self.nodes[i].op) {
                continue;
            }
            if self.nodes[i].parents.iter().any(|p| needs[p.0]) {
                needs[i] = true;
            }
        }

        let mut grads: HashMap<usize, NodeId> = HashMap::new();
        if needs[output.0] {
            let seed = self.constant(Tensor::filled(self.shape(output), 1.0));
            grads.insert(output.0, seed);
        }
        for i in (0..n).rev() {
            let Some(&g) = grads.get(&i) else { continue };
            if !differentiable(&self.nodes[i].op) {
                continue;
            }
            let parents = self.nodes[i].parents.clone();
            let contribs = self.vjp(NodeId(i), g)?;
            for (p, c) in parents.into_iter().zip(contribs) {
                let Some(c) = c else { continue };
                if !needs[p.0] {
                    continue;
                }
                let acc = match grads.get(&p.0) {
                    Some(&prev) => self.add(prev, c)?,
                    None => c,
                };
                grads.insert(p.0, acc);
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match grads.get(&w.0) {
                Some(&g) => g,
                None => {
                    let shape = self.shape(*w).to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect())
    }

    /// Vector-Jacobian product contributions for each parent of `y`.
    fn vjp(&mut self, y: NodeId, g: NodeId) -> Result<Vec<Option<NodeId>>, DiffError> {
        let node = self.nodes[y.0].clone();
        let p = &node.parents;
        let out = match node.op {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
            Op::ReluMask | Op::ClampMask { .. } | Op::Detach => vec![None],
            Op::Neg => vec![Some(self.neg(g))],
            Op::Scale(c) => vec![Some(self.scale(g, c))],
            Op::AddScalar(_) => vec![Some(g)],
            Op::Tanh => {
                let sq = self.square(y);
                let neg = self.neg(sq);
                let d = self.add_scalar(neg, 1.0);
                vec![Some(self.mul(g, d)?)]
            }
            Op::Relu => {
                let m = self.relu_mask(p[0]);
                vec![Some(self.mul(g, m)?)]
            }
            Op::Exp => vec![Some(self.mul(g, y)?)],
            Op::Square => {
                let two_x = self.scale(p[0], 2.0);
                vec![Some(self.mul(g, two_x)?)]
            }
            Op::Clamp { lo, hi } => {
                let m = self.unary(Op::ClampMask { lo, hi }, p[0]);
                vec![Some(self.mul(g, m)?)]
            }
            Op::Transpose => vec![Some(self.transpose(g)?)],
            Op::Reshape(_) => {
                let shape = self.shape(p[0]).to_vec();
                vec![Some(self.reshape(g, &shape)?)]
            }
            Op::Softmax => {
                // s * (g - rowsum(g * s))
                let c = node.shape[1];
                let gs = self.mul(g, y)?;
                let rs = self.sum_cols(gs)?;
                let b = self.broadcast_col(rs, c)?;
                let centered = self.sub(g, b)?;
                vec![Some(self.mul(y, centered)?)]
            }
            Op::LogSoftmax => {
                // g - softmax * rowsum(g)
                let c = node.shape[1];
                let s = self.exp(y);
                let rs = self.sum_cols(g)?;
                let b = self.broadcast_col(rs, c)?;
                let sb = self.mul(s, b)?;
                vec![Some(self.sub(g, sb)?)]
            }
            Op::ReduceSum => {
                let shape = self.shape(p[0]).to_vec();
                vec![Some(self.broadcast_scalar(g, &shape)?)]
            }
            Op::ReduceMean => {
                let shape = self.shape(p[0]).to_vec();
                let b = self.broadcast_scalar(g, &shape)?;
                vec![Some(self.scale(b, 1.0 / numel(&shape) as f64))]
            }
            Op::SumRows => {
                let r = self.shape(p[0])[0];
                vec![Some(self.broadcast_row(g, r)?)]
            }
            Op::SumCols => {
                let c = self.shape(p[0])[1];
                vec![Some(self.broadcast_col(g, c)?)]
            }
            Op::BroadcastScalar(_) => {
                let s = self.reduce_sum(g);
                let shape = self.shape(p[0]).to_vec();
                let s = if shape.is_empty() { s } else { self.reshape(s, &shape)? };
                vec![Some(s)]
            }
            Op::RepeatRows(k) => vec![Some(self.sum_row_blocks(g, k)?)],
            Op::SumRowBlocks(k) => vec![Some(self.repeat_rows(g, k)?)],
            Op::BroadcastRow(_) => vec![Some(self.sum_rows(g)?)],
            Op::BroadcastCol(_) => vec![Some(self.sum_cols(g)?)],
            Op::SliceCols { start, .. } => {
                let total = self.shape(p[0])[1];
                vec![Some(self.pad_cols(g, start, total)?)]
            }
            Op::PadCols { start, .. } => {
                let w = self.shape(p[0])[1];
                vec![Some(self.slice_cols(g, start, start + w)?)]
            }
            Op::Add => vec![Some(g), Some(g)],
            Op::Sub => vec![Some(g), Some(self.neg(g))],
            Op::Mul => vec![Some(self.mul(g, p[1])?), Some(self.mul(g, p[0])?)],
            Op::MatMul => {
                let bt = self.transpose(p[1])?;
                let at = self.transpose(p[0])?;
                vec![Some(self.matmul(g, bt)?), Some(self.matmul(at, g)?)]
            }
            Op::AddBias => vec![Some(g), Some(self.sum_rows(g)?)],
            Op::ConcatCols => {
                let a = self.shape(p[0])[1];
                let b = self.shape(p[1])[1];
                vec![Some(self.slice_cols(g, 0, a)?), Some(self.slice_cols(g, a, a + b)?)]
            }
        };
        Ok(out)
    }
}

fn differentiable(op: &Op) -> bool {
    !matches!(
        op,
        Op::Input(_) | Op::Param(_) | Op::Const(_) | Op::ReluMask | Op::ClampMask { .. } | Op::Detach
    )
}
