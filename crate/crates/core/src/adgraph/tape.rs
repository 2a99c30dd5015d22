//! Append-only computation graph over dense matrices with a single
//! reverse-mode sweep.
//!
//! Nodes are recorded with static shapes, evaluated in id order against a
//! set of leaf bindings, and differentiated by walking the tape backwards
//! in fixed (reverse id) order so repeated runs are bitwise identical.

use super::linalg;
use super::value::Value;
use crate::error::{Error, Result};
use crate::special;
use rayon::prelude::*;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Constant,
    Leaf,
    Add,
    Subtract,
    Multiply,
    ScalarMultiply,
    MatMul,
    Transpose,
    Square,
    Log,
    Exp,
    Sqrt,
    ClampMin(f64),
    NormCdf,
    LogNormCdf,
    ReduceSum,
    DiagPart,
    MakeDiag,
    Cholesky,
    TriSolve { lower: bool, trans: bool },
    BroadcastAddRow,
    BroadcastAddCol,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Constant => "constant",
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Multiply => "elementwise-multiply",
            OpKind::ScalarMultiply => "scalar-multiply",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Square => "elementwise-square",
            OpKind::Log => "elementwise-log",
            OpKind::Exp => "elementwise-exp",
            OpKind::Sqrt => "elementwise-sqrt",
            OpKind::ClampMin(_) => "clamp-min",
            OpKind::NormCdf => "normcdf",
            OpKind::LogNormCdf => "log-normcdf",
            OpKind::ReduceSum => "reduce-sum",
            OpKind::DiagPart => "diag-part",
            OpKind::MakeDiag => "make-diag",
            OpKind::Cholesky => "cholesky",
            OpKind::TriSolve { .. } => "triangular-solve",
            OpKind::BroadcastAddRow => "broadcast-add-row",
            OpKind::BroadcastAddCol => "broadcast-add-col",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: OpKind,
    pub inputs: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
}

/// Computation tape. Nodes only accumulate; values are cached per forward
/// pass and invalidated by bumping an epoch counter.
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Option<Value>>,
    value_epoch: Vec<u64>,
    epoch: u64,
    leaves: Vec<usize>,
    /// Panel width for the blocked Cholesky pullback.
    pub chol_rev_block: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            values: Vec::new(),
            value_epoch: Vec::new(),
            epoch: 0,
            leaves: Vec::new(),
            chol_rev_block: 32,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    fn mismatch(&self, op: &OpKind, detail: String) -> Error {
        Error::ShapeMismatch {
            op: op.name().into(),
            detail,
        }
    }

    fn push(&mut self, op: OpKind, inputs: Vec<usize>, rows: usize, cols: usize) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, rows, cols });
        self.values.push(None);
        self.value_epoch.push(0);
        NodeId(id)
    }

    /// Records a constant; its value is cached permanently.
    pub fn constant(&mut self, v: Value) -> NodeId {
        let (r, c) = v.shape();
        let id = self.push(OpKind::Constant, vec![], r, c);
        self.values[id.0] = Some(v);
        self.value_epoch[id.0] = u64::MAX;
        id
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Value::scalar(v))
    }

    /// Records a bindable input of fixed shape.
    pub fn leaf(&mut self, rows: usize, cols: usize) -> NodeId {
        let id = self.push(OpKind::Leaf, vec![], rows, cols);
        self.leaves.push(id.0);
        id
    }

    /// Core recording entry point: validates input shapes for the op kind
    /// and appends a node.
    pub fn record(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::UndefinedInput {
                    node: self.nodes.len(),
                    input: id.0,
                });
            }
        }
        let shapes: Vec<(usize, usize)> = inputs.iter().map(|i| self.shape(*i)).collect();
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                Err(self.mismatch(&op, format!("expected {} inputs, got {}", n, inputs.len())))
            } else {
                Ok(())
            }
        };
        let out = match &op {
            OpKind::Constant | OpKind::Leaf => {
                return Err(self.mismatch(&op, "use constant()/leaf() constructors".into()))
            }
            OpKind::Add | OpKind::Subtract | OpKind::Multiply => {
                arity(2)?;
                if shapes[0] != shapes[1] {
                    return Err(self.mismatch(
                        &op,
                        format!("{:?} vs {:?}", shapes[0], shapes[1]),
                    ));
                }
                shapes[0]
            }
            OpKind::ScalarMultiply => {
                arity(2)?;
                if shapes[0] != (1, 1) {
                    return Err(self.mismatch(&op, format!("first input {:?} is not 1x1", shapes[0])));
                }
                shapes[1]
            }
            OpKind::MatMul => {
                arity(2)?;
                if shapes[0].1 != shapes[1].0 {
                    return Err(self.mismatch(
                        &op,
                        format!("{:?} x {:?}", shapes[0], shapes[1]),
                    ));
                }
                (shapes[0].0, shapes[1].1)
            }
            OpKind::Transpose => {
                arity(1)?;
                (shapes[0].1, shapes[0].0)
            }
            OpKind::Square
            | OpKind::Log
            | OpKind::Exp
            | OpKind::Sqrt
            | OpKind::ClampMin(_)
            | OpKind::NormCdf
            | OpKind::LogNormCdf => {
                arity(1)?;
                shapes[0]
            }
            OpKind::ReduceSum => {
                arity(1)?;
                (1, 1)
            }
            OpKind::DiagPart => {
                arity(1)?;
                if shapes[0].0 != shapes[0].1 {
                    return Err(self.mismatch(&op, format!("{:?} is not square", shapes[0])));
                }
                (shapes[0].0, 1)
            }
            OpKind::MakeDiag => {
                arity(1)?;
                if shapes[0].1 != 1 {
                    return Err(self.mismatch(&op, format!("{:?} is not a column", shapes[0])));
                }
                (shapes[0].0, shapes[0].0)
            }
            OpKind::Cholesky => {
                arity(1)?;
                if shapes[0].0 != shapes[0].1 {
                    return Err(self.mismatch(&op, format!("{:?} is not square", shapes[0])));
                }
                shapes[0]
            }
            OpKind::TriSolve { .. } => {
                arity(2)?;
                if shapes[0].0 != shapes[0].1 || shapes[0].1 != shapes[1].0 {
                    return Err(self.mismatch(
                        &op,
                        format!("{:?} vs {:?}", shapes[0], shapes[1]),
                    ));
                }
                shapes[1]
            }
            OpKind::BroadcastAddRow => {
                arity(2)?;
                if shapes[1] != (1, shapes[0].1) {
                    return Err(self.mismatch(
                        &op,
                        format!("row {:?} does not match {:?}", shapes[1], shapes[0]),
                    ));
                }
                shapes[0]
            }
            OpKind::BroadcastAddCol => {
                arity(2)?;
                if shapes[1] != (shapes[0].0, 1) {
                    return Err(self.mismatch(
                        &op,
                        format!("column {:?} does not match {:?}", shapes[1], shapes[0]),
                    ));
                }
                shapes[0]
            }
        };
        Ok(self.push(op, inputs.iter().map(|i| i.0).collect(), out.0, out.1))
    }

    // Convenience wrappers.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::Subtract, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::Multiply, &[a, b])
    }
    pub fn scalar_mul(&mut self, s: NodeId, m: NodeId) -> Result<NodeId> {
        self.record(OpKind::ScalarMultiply, &[s, m])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::MatMul, &[a, b])
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Transpose, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Square, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Log, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Exp, &[a])
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Sqrt, &[a])
    }
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.record(OpKind::ClampMin(floor), &[a])
    }
    pub fn normcdf(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::NormCdf, &[a])
    }
    pub fn log_normcdf(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::LogNormCdf, &[a])
    }
    pub fn reduce_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::ReduceSum, &[a])
    }
    pub fn diag_part(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::DiagPart, &[a])
    }
    pub fn make_diag(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::MakeDiag, &[a])
    }
    pub fn cholesky(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Cholesky, &[a])
    }
    pub fn trisolve(&mut self, t: NodeId, b: NodeId, lower: bool, trans: bool) -> Result<NodeId> {
        self.record(OpKind::TriSolve { lower, trans }, &[t, b])
    }
    pub fn broadcast_add_row(&mut self, m: NodeId, r: NodeId) -> Result<NodeId> {
        self.record(OpKind::BroadcastAddRow, &[m, r])
    }
    pub fn broadcast_add_col(&mut self, m: NodeId, c: NodeId) -> Result<NodeId> {
        self.record(OpKind::BroadcastAddCol, &[m, c])
    }

    /// Negation, composed as (-1) * x.
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let m1 = self.scalar(-1.0);
        self.scalar_mul(m1, a)
    }

    /// Elementwise reciprocal of a strictly positive tensor: exp(-log x).
    pub fn recip_positive(&mut self, a: NodeId) -> Result<NodeId> {
        let l = self.log(a)?;
        let nl = self.neg(l)?;
        self.exp(nl)
    }

    fn reachable(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = roots.iter().map(|r| r.0).collect();
        while let Some(i) = stack.pop() {
            if mark[i] {
                continue;
            }
            mark[i] = true;
            for &j in &self.nodes[i].inputs {
                if !mark[j] {
                    stack.push(j);
                }
            }
        }
        mark
    }

    /// Forward pass for several roots sharing one set of leaf bindings.
    /// Every reachable node's value is computed in id order and cached.
    pub fn eval_many(&mut self, roots: &[NodeId], bindings: &[(NodeId, Value)]) -> Result<Vec<Value>> {
        for r in roots {
            if r.0 >= self.nodes.len() {
                return Err(Error::UndefinedInput { node: r.0, input: r.0 });
            }
        }
        let mark = self.reachable(roots);
        self.epoch += 1;
        let mut bound: HashMap<usize, &Value> = HashMap::with_capacity(bindings.len());
        for (id, v) in bindings {
            let node = self
                .nodes
                .get(id.0)
                .ok_or(Error::UndefinedInput { node: id.0, input: id.0 })?;
            if node.op != OpKind::Leaf {
                return Err(Error::InvalidValue(format!(
                    "binding provided for non-leaf node {}",
                    id.0
                )));
            }
            if v.shape() != (node.rows, node.cols) {
                return Err(Error::BindingShape {
                    node: id.0,
                    rows: node.rows,
                    cols: node.cols,
                    got_rows: v.rows(),
                    got_cols: v.cols(),
                });
            }
            if !v.all_finite() {
                return Err(Error::InvalidValue(format!(
                    "binding for leaf {} has non-finite entries",
                    id.0
                )));
            }
            bound.insert(id.0, v);
        }
        for i in 0..self.nodes.len() {
            if !mark[i] {
                continue;
            }
            match self.nodes[i].op {
                OpKind::Constant => continue,
                OpKind::Leaf => {
                    let v = bound.get(&i).ok_or(Error::UnboundLeaf { node: i })?;
                    self.values[i] = Some((*v).clone());
                    self.value_epoch[i] = self.epoch;
                }
                _ => {
                    let v = self.forward(i)?;
                    if !v.all_finite() {
                        return Err(Error::NonFinite {
                            node: i,
                            op: self.nodes[i].op.name().into(),
                        });
                    }
                    self.values[i] = Some(v);
                    self.value_epoch[i] = self.epoch;
                }
            }
        }
        Ok(roots.iter().map(|r| self.values[r.0].clone().unwrap()).collect())
    }

    /// Forward pass for a single root.
    pub fn eval(&mut self, root: NodeId, bindings: &[(NodeId, Value)]) -> Result<Value> {
        Ok(self.eval_many(&[root], bindings)?.pop().unwrap())
    }

    /// Cached value of a node from the most recent forward pass.
    pub fn value(&self, id: NodeId) -> Result<&Value> {
        if self.value_epoch[id.0] == self.epoch || self.value_epoch[id.0] == u64::MAX {
            Ok(self.values[id.0].as_ref().unwrap())
        } else {
            Err(Error::NotEvaluated { node: id.0 })
        }
    }

    fn val(&self, i: usize) -> &Value {
        self.values[i].as_ref().unwrap()
    }

    fn forward(&self, i: usize) -> Result<Value> {
        let node = &self.nodes[i];
        let input = |k: usize| self.val(node.inputs[k]);
        let v = match &node.op {
            OpKind::Constant | OpKind::Leaf => unreachable!(),
            OpKind::Add => input(0).add(input(1)),
            OpKind::Subtract => input(0).sub(input(1)),
            OpKind::Multiply => {
                let a = input(0);
                let b = input(1);
                Value::from_raw(
                    a.rows(),
                    a.cols(),
                    a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
                )
            }
            OpKind::ScalarMultiply => input(1).scale(input(0).as_scalar()),
            OpKind::MatMul => linalg::matmul(input(0), input(1)),
            OpKind::Transpose => input(0).transposed(),
            OpKind::Square => map_elementwise(input(0), |x| x * x),
            OpKind::Log => map_elementwise(input(0), f64::ln),
            OpKind::Exp => map_elementwise(input(0), f64::exp),
            OpKind::Sqrt => map_elementwise(input(0), f64::sqrt),
            OpKind::ClampMin(floor) => {
                let f = *floor;
                map_elementwise(input(0), move |x| x.max(f))
            }
            OpKind::NormCdf => map_elementwise(input(0), special::normcdf),
            OpKind::LogNormCdf => map_elementwise(input(0), special::log_normcdf),
            OpKind::ReduceSum => Value::scalar(input(0).sum()),
            OpKind::DiagPart => {
                let a = input(0);
                Value::from_raw(a.rows(), 1, (0..a.rows()).map(|k| a[(k, k)]).collect())
            }
            OpKind::MakeDiag => {
                let a = input(0);
                let n = a.rows();
                let mut out = Value::zeros(n, n);
                for k in 0..n {
                    out[(k, k)] = a[(k, 0)];
                }
                out
            }
            OpKind::Cholesky => linalg::cholesky(input(0))?,
            OpKind::TriSolve { lower, trans } => {
                linalg::trisolve(input(0), input(1), *lower, *trans)
            }
            OpKind::BroadcastAddRow => {
                let m = input(0);
                let r = input(1);
                let cols = m.cols();
                Value::from_raw(
                    m.rows(),
                    cols,
                    m.data()
                        .iter()
                        .enumerate()
                        .map(|(k, &x)| x + r.data()[k % cols])
                        .collect(),
                )
            }
            OpKind::BroadcastAddCol => {
                let m = input(0);
                let c = input(1);
                let cols = m.cols();
                Value::from_raw(
                    m.rows(),
                    cols,
                    m.data()
                        .iter()
                        .enumerate()
                        .map(|(k, &x)| x + c.data()[k / cols])
                        .collect(),
                )
            }
        };
        Ok(v)
    }

    /// Reverse sweep from a scalar root. The forward pass for `root` must
    /// have been run already; adjoints are accumulated in reverse id order
    /// and returned for the requested leaves (same shape as each leaf).
    pub fn grad(&self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Value>> {
        let node = &self.nodes[root.0];
        if (node.rows, node.cols) != (1, 1) {
            return Err(Error::NonScalarRoot {
                rows: node.rows,
                cols: node.cols,
            });
        }
        if self.value_epoch[root.0] != self.epoch && self.value_epoch[root.0] != u64::MAX {
            return Err(Error::NotEvaluated { node: root.0 });
        }
        for w in wrt {
            if self.nodes[w.0].op != OpKind::Leaf {
                return Err(Error::InvalidValue(format!(
                    "gradient requested for non-leaf node {}",
                    w.0
                )));
            }
        }
        let mark = self.reachable(&[root]);
        let mut adjoints: Vec<Option<Value>> = vec![None; self.nodes.len()];
        adjoints[root.0] = Some(Value::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !mark[i] || adjoints[i].is_none() {
                continue;
            }
            let g = adjoints[i].take().unwrap();
            self.backward(i, &g, &mut adjoints)?;
            adjoints[i] = Some(g);
        }
        Ok(wrt
            .iter()
            .map(|w| {
                adjoints[w.0].take().unwrap_or_else(|| {
                    let n = &self.nodes[w.0];
                    Value::zeros(n.rows, n.cols)
                })
            })
            .collect())
    }

    fn backward(&self, i: usize, g: &Value, adjoints: &mut Vec<Option<Value>>) -> Result<()> {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        let input = |k: usize| self.val(ins[k]);
        let send = |k: usize, delta: Value, adjoints: &mut Vec<Option<Value>>| {
            let slot = &mut adjoints[ins[k]];
            match slot {
                Some(acc) => acc.add_assign(&delta),
                None => *slot = Some(delta),
            }
        };
        match &node.op {
            OpKind::Constant | OpKind::Leaf => {}
            OpKind::Add => {
                send(0, g.clone(), adjoints);
                send(1, g.clone(), adjoints);
            }
            OpKind::Subtract => {
                send(0, g.clone(), adjoints);
                send(1, g.scale(-1.0), adjoints);
            }
            OpKind::Multiply => {
                send(0, elementwise_product(g, input(1)), adjoints);
                send(1, elementwise_product(g, input(0)), adjoints);
            }
            OpKind::ScalarMultiply => {
                send(0, Value::scalar(g.dot(input(1))), adjoints);
                send(1, g.scale(input(0).as_scalar()), adjoints);
            }
            OpKind::MatMul => {
                send(0, linalg::matmul(g, &input(1).transposed()), adjoints);
                send(1, linalg::matmul(&input(0).transposed(), g), adjoints);
            }
            OpKind::Transpose => send(0, g.transposed(), adjoints),
            OpKind::Square => {
                let x = input(0);
                let d = Value::from_raw(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(x, g)| 2.0 * x * g)
                        .collect(),
                );
                send(0, d, adjoints);
            }
            OpKind::Log => {
                let x = input(0);
                let d = Value::from_raw(
                    x.rows(),
                    x.cols(),
                    x.data().iter().zip(g.data()).map(|(x, g)| g / x).collect(),
                );
                send(0, d, adjoints);
            }
            OpKind::Exp => send(0, elementwise_product(g, self.val(i)), adjoints),
            OpKind::Sqrt => {
                let y = self.val(i);
                let d = Value::from_raw(
                    y.rows(),
                    y.cols(),
                    y.data()
                        .iter()
                        .zip(g.data())
                        .map(|(y, g)| 0.5 * g / y)
                        .collect(),
                );
                send(0, d, adjoints);
            }
            OpKind::ClampMin(floor) => {
                let x = input(0);
                let f = *floor;
                let d = Value::from_raw(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(x, g)| if *x >= f { *g } else { 0.0 })
                        .collect(),
                );
                send(0, d, adjoints);
            }
            OpKind::NormCdf => {
                let x = input(0);
                let d = Value::from_raw(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(x, g)| g * special::norm_pdf(*x))
                        .collect(),
                );
                send(0, d, adjoints);
            }
            OpKind::LogNormCdf => {
                let x = input(0);
                let d = Value::from_raw(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(g.data())
                        .map(|(x, g)| g * special::log_normcdf_deriv(*x))
                        .collect(),
                );
                send(0, d, adjoints);
            }
            OpKind::ReduceSum => {
                let (r, c) = self.shape(NodeId(ins[0]));
                let s = g.as_scalar();
                send(0, Value::from_raw(r, c, vec![s; r * c]), adjoints);
            }
            OpKind::DiagPart => {
                let n = self.nodes[ins[0]].rows;
                let mut d = Value::zeros(n, n);
                for k in 0..n {
                    d[(k, k)] = g[(k, 0)];
                }
                send(0, d, adjoints);
            }
            OpKind::MakeDiag => {
                let n = node.rows;
                let d = Value::from_raw(n, 1, (0..n).map(|k| g[(k, k)]).collect());
                send(0, d, adjoints);
            }
            OpKind::Cholesky => {
                let l = self.val(i);
                let abar = linalg::chol_rev_blocked(l, &g.tril(), self.chol_rev_block)?;
                send(0, abar, adjoints);
            }
            OpKind::TriSolve { lower, trans } => {
                let x = self.val(i);
                let (tbar, bbar) =
                    linalg::trisolve_rev_general(input(0), x, g, *lower, *trans);
                send(0, tbar, adjoints);
                send(1, bbar, adjoints);
            }
            OpKind::BroadcastAddRow => {
                send(0, g.clone(), adjoints);
                let cols = node.cols;
                let mut r = Value::zeros(1, cols);
                for (k, &v) in g.data().iter().enumerate() {
                    r.data_mut()[k % cols] += v;
                }
                send(1, r, adjoints);
            }
            OpKind::BroadcastAddCol => {
                send(0, g.clone(), adjoints);
                let cols = node.cols;
                let mut c = Value::zeros(node.rows, 1);
                for (k, &v) in g.data().iter().enumerate() {
                    c.data_mut()[k / cols] += v;
                }
                send(1, c, adjoints);
            }
        }
        Ok(())
    }

    /// Line-oriented debug dump: `id op shape inputs`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let inputs = n
                .inputs
                .iter()
                .map(|j| j.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("{} {} {}x{} {}\n", i, n.op.name(), n.rows, n.cols, inputs));
        }
        out
    }
}

fn elementwise_product(a: &Value, b: &Value) -> Value {
    Value::from_raw(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}

fn map_elementwise(v: &Value, f: impl Fn(f64) -> f64 + Sync) -> Value {
    const CHUNK: usize = 4096;
    let src = v.data();
    let data = if src.len() >= 4 * CHUNK {
        let mut out = vec![0.0; src.len()];
        out.par_chunks_mut(CHUNK)
            .zip(src.par_chunks(CHUNK))
            .for_each(|(o, s)| {
                for (o, s) in o.iter_mut().zip(s) {
                    *o = f(*s);
                }
            });
        out
    } else {
        src.iter().map(|&x| f(x)).collect()
    };
    Value::from_raw(v.rows(), v.cols(), data)
}
