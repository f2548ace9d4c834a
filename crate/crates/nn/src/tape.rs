//! Reverse-mode autodiff over 2-D f64 arrays.
//!
//! A `Tape` records one forward pass as a flat arena of nodes; `backward`
//! walks it in reverse and accumulates gradients for every parameter node.
//! Ops store parent indices plus whatever small caches the backward rule
//! needs, and read parent values straight out of the arena — no operand is
//! ever cloned. With gradients disabled the same ops run the same
//! arithmetic without recording, which keeps train and inference paths
//! numerically identical.

use ndarray::{Array2, Axis};

use crate::params::{Grads, ParamId, ParamSet};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        x_hat: Array2<f64>,
        inv_sigma: Vec<f64>,
    },
    Embed {
        table: usize,
        ids: Vec<usize>,
    },
    ConcatCols {
        a: usize,
        b: usize,
        a_cols: usize,
    },
    ConcatRows(Vec<(usize, usize)>),
    SliceCols {
        a: usize,
        from: usize,
        to: usize,
    },
    SliceRows {
        a: usize,
        from: usize,
        to: usize,
    },
    Transpose(usize),
    CrossEntropyMean {
        logits: usize,
        targets: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    param_nodes: Vec<(usize, ParamId)>,
}

impl Tape {
    pub fn new(grad_enabled: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled,
            param_nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let op = if self.grad_enabled { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf: its gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let var = self.push(params.value(id).clone(), Op::Leaf);
        if self.grad_enabled {
            self.param_nodes.push((var.0, id));
        }
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(value, Op::Matmul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a.0, b.0))
    }

    /// Broadcast-add a (1, D) row to every row of a (T, D) matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = &self.nodes[a.0].value * factor;
        self.push(value, Op::Scale(a.0, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a.0))
    }

    /// Tanh-approximation GELU, the convention the encoder family uses.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0]
            .value
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a.0))
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(&self.nodes[a.0].value);
        self.push(value, Op::SoftmaxRows(a.0))
    }

    /// Layer normalization over each row, with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let x_val = &self.nodes[x.0].value;
        let dim = x_val.ncols() as f64;
        let mut x_hat = Array2::zeros(x_val.raw_dim());
        let mut inv_sigma = Vec::with_capacity(x_val.nrows());
        for (mut out_row, row) in x_hat.axis_iter_mut(Axis(0)).zip(x_val.axis_iter(Axis(0))) {
            let mean = row.sum() / dim;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma.push(inv);
            for (o, v) in out_row.iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        let value = &x_hat * &self.nodes[gamma.0].value + &self.nodes[beta.0].value;
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                x_hat,
                inv_sigma,
            },
        )
    }

    /// Gather rows of an embedding table: ids -> (len, dim).
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let table_val = &self.nodes[table.0].value;
        let (rows, dim) = (table_val.nrows(), table_val.ncols());
        let mut value = Array2::zeros((ids.len(), dim));
        for (mut out_row, &id) in value.axis_iter_mut(Axis(0)).zip(ids.iter()) {
            assert!(id < rows, "token id {id} out of embedding range {rows}");
            out_row.assign(&table_val.row(id));
        }
        self.push(
            value,
            Op::Embed {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let a_val = &self.nodes[a.0].value;
        let b_val = &self.nodes[b.0].value;
        let a_cols = a_val.ncols();
        let value =
            ndarray::concatenate(Axis(1), &[a_val.view(), b_val.view()]).expect("row counts match");
        self.push(
            value,
            Op::ConcatCols {
                a: a.0,
                b: b.0,
                a_cols,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts match");
        let row_counts: Vec<(usize, usize)> = parts
            .iter()
            .map(|v| (v.0, self.nodes[v.0].value.nrows()))
            .collect();
        self.push(value, Op::ConcatRows(row_counts))
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let value = self.nodes[a.0].value.slice(ndarray::s![.., from..to]).to_owned();
        self.push(value, Op::SliceCols { a: a.0, from, to })
    }

    pub fn slice_rows(&mut self, a: Var, from: usize, to: usize) -> Var {
        let value = self.nodes[a.0].value.slice(ndarray::s![from..to, ..]).to_owned();
        self.push(value, Op::SliceRows { a: a.0, from, to })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        self.push(value, Op::Transpose(a.0))
    }

    /// Mean token-level cross-entropy of row-wise logits against target ids.
    /// Returns a (1, 1) scalar node.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Var {
        let logits_val = &self.nodes[logits.0].value;
        assert_eq!(logits_val.nrows(), targets.len(), "one target per row");
        let probs = softmax_rows_value(logits_val);
        let count = targets.len() as f64;
        let mut loss = 0.0;
        for (row, &target) in probs.axis_iter(Axis(0)).zip(targets.iter()) {
            loss -= row[target].max(1e-300).ln();
        }
        loss /= count;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropyMean {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from a (1, 1) scalar node; returns parameter gradients.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Grads {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut node_grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        node_grads.resize_with(self.nodes.len(), || None);
        node_grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = node_grads[idx].take() else {
                continue;
            };
            self.apply_backward(idx, &grad, &mut node_grads);
            if self.param_nodes.iter().any(|&(node, _)| node == idx) {
                node_grads[idx] = Some(grad);
            }
        }

        let mut grads = Grads::zeros_like(params);
        for &(node, id) in &self.param_nodes {
            if let Some(grad) = &node_grads[node] {
                grads.accumulate(id, grad);
            }
        }
        grads
    }

    fn apply_backward(&self, idx: usize, grad: &Array2<f64>, node_grads: &mut [Option<Array2<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let mut add_to = |i: usize, contribution: Array2<f64>| match &mut node_grads[i] {
            Some(existing) => *existing += &contribution,
            slot @ None => *slot = Some(contribution),
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                add_to(*a, grad.dot(&val(*b).t()));
                add_to(*b, val(*a).t().dot(grad));
            }
            Op::Add(a, b) => {
                add_to(*a, grad.clone());
                add_to(*b, grad.clone());
            }
            Op::AddRow(a, row) => {
                add_to(*a, grad.clone());
                add_to(*row, grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                add_to(*a, grad * val(*b));
                add_to(*b, grad * val(*a));
            }
            Op::Scale(a, factor) => add_to(*a, grad * *factor),
            Op::Tanh(a) => {
                let out = &self.nodes[idx].value;
                add_to(*a, grad * &out.mapv(|y| 1.0 - y * y));
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[idx].value;
                add_to(*a, grad * &out.mapv(|y| y * (1.0 - y)));
            }
            Op::Gelu(a) => {
                let local = val(*a).mapv(|x| {
                    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
                });
                add_to(*a, grad * &local);
            }
            Op::SoftmaxRows(a) => {
                let out = &self.nodes[idx].value;
                let mut dx = grad * out;
                for (mut dx_row, (g_row, s_row)) in dx
                    .axis_iter_mut(Axis(0))
                    .zip(grad.axis_iter(Axis(0)).zip(out.axis_iter(Axis(0))))
                {
                    let dot: f64 = g_row.iter().zip(s_row.iter()).map(|(g, s)| g * s).sum();
                    for (d, s) in dx_row.iter_mut().zip(s_row.iter()) {
                        *d -= dot * s;
                    }
                }
                add_to(*a, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_sigma,
            } => {
                let dim = x_hat.ncols() as f64;
                add_to(*beta, grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
                add_to(*gamma, (grad * x_hat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let d_xhat = grad * val(*gamma);
                let mut dx = Array2::zeros(d_xhat.raw_dim());
                for ((mut dx_row, dxh_row), (xh_row, &inv)) in dx
                    .axis_iter_mut(Axis(0))
                    .zip(d_xhat.axis_iter(Axis(0)))
                    .zip(x_hat.axis_iter(Axis(0)).zip(inv_sigma.iter()))
                {
                    let mean_dxh = dxh_row.sum() / dim;
                    let mean_dxh_xh: f64 = dxh_row
                        .iter()
                        .zip(xh_row.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / dim;
                    for ((d, &dxh), &xh) in dx_row.iter_mut().zip(dxh_row.iter()).zip(xh_row.iter())
                    {
                        *d = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                    }
                }
                add_to(*x, dx);
            }
            Op::Embed { table, ids } => {
                // Scatter-add rows straight into the table's gradient slot.
                let (rows, dim) = val(*table).dim();
                if node_grads[*table].is_none() {
                    node_grads[*table] = Some(Array2::zeros((rows, dim)));
                }
                let d_table = node_grads[*table].as_mut().expect("just initialized");
                for (g_row, &id) in grad.axis_iter(Axis(0)).zip(ids.iter()) {
                    let mut target = d_table.row_mut(id);
                    target += &g_row;
                }
            }
            Op::ConcatCols { a, b, a_cols } => {
                add_to(*a, grad.slice(ndarray::s![.., ..*a_cols]).to_owned());
                add_to(*b, grad.slice(ndarray::s![.., *a_cols..]).to_owned());
            }
            Op::ConcatRows(row_counts) => {
                let mut offset = 0;
                for &(part, rows) in row_counts {
                    add_to(
                        part,
                        grad.slice(ndarray::s![offset..offset + rows, ..]).to_owned(),
                    );
                    offset += rows;
                }
            }
            Op::SliceCols { a, from, to } => {
                let shape = val(*a).dim();
                if node_grads[*a].is_none() {
                    node_grads[*a] = Some(Array2::zeros(shape));
                }
                let da = node_grads[*a].as_mut().expect("just initialized");
                let mut slot = da.slice_mut(ndarray::s![.., *from..*to]);
                slot += grad;
            }
            Op::SliceRows { a, from, to } => {
                let shape = val(*a).dim();
                if node_grads[*a].is_none() {
                    node_grads[*a] = Some(Array2::zeros(shape));
                }
                let da = node_grads[*a].as_mut().expect("just initialized");
                let mut slot = da.slice_mut(ndarray::s![*from..*to, ..]);
                slot += grad;
            }
            Op::Transpose(a) => add_to(*a, grad.t().to_owned()),
            Op::CrossEntropyMean {
                logits,
                targets,
                probs,
            } => {
                let scale = grad[(0, 0)] / targets.len() as f64;
                let mut d_logits = probs.clone();
                for (mut row, &target) in d_logits.axis_iter_mut(Axis(0)).zip(targets.iter()) {
                    row[target] -= 1.0;
                }
                d_logits *= scale;
                add_to(*logits, d_logits);
            }
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

pub(crate) fn softmax_rows_value(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log-softmax on plain values (inference path).
pub fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - log_sum).collect()
}
