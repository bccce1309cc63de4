//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node in an
//! append-only arena. Node ids are handed out in execution order, so walking
//! the arena backwards is a reverse topological order of the computation.
//! [`Tape::backward`] seeds the scalar loss with 1 and applies each node's
//! backward rule, accumulating into its inputs so fan-out is summed.
//!
//! ```
//! use bgrl::autograd::Tape;
//! use bgrl::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(&Tensor::from_vec(vec![3.0]).with_requires_grad());
//! let zero = tape.constant(Tensor::from_vec(vec![0.0]));
//! let loss = tape.mse_loss(x, zero).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::ops::{self, BnCache, BnMode, RunningStats, Vol5};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Named parameter gradients, flattened in row-major order.
pub type NamedGrads = Vec<(String, Vec<f64>)>;

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Mse(Var, Var),
    Reshape(Var),
    RowDot(Var, Var),
    ScaleRows {
        s: Var,
        m: Var,
    },
    Conv3d {
        x: Var,
        k: Var,
        padding: usize,
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample3d {
        x: Var,
        factor: usize,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    BatchNorm3d {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the var does not require a gradient or is unreachable
    /// from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `param`'s accumulator.
    pub fn accumulate_into(&self, v: Var, param: &mut Tensor) {
        if let Some(g) = self.get(v) {
            param.accumulate_grad(g);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that takes part in differentiation only if
    /// `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        let v = self.push(t.detach(), Op::Leaf, &[]);
        self.nodes[v.0].requires_grad = rg;
        v
    }

    /// Records a leaf that always receives a gradient, regardless of the
    /// tensor's own flag. Used by gradient checks.
    pub fn input(&mut self, t: Tensor) -> Var {
        let v = self.push(t.detach(), Op::Leaf, &[]);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detach(), Op::Leaf, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x[N×in]·Wᵀ (+ b)` for `W[out×in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// `W·input (+ b)` for a single vector input.
    pub fn fully_connected(&mut self, input: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let n = self.value(input).numel();
        if self.value(input).rank() != 1 {
            return Err(Error::dim(format!(
                "fully_connected expects a vector, got {:?}",
                self.shape(input)
            )));
        }
        let row = self.reshape(input, &[1, n])?;
        let y = self.linear(row, w, b)?;
        let dout = self.shape(y)[1];
        self.reshape(y, &[dout])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Mse(pred, target),
            &[pred, target],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Row-wise dot product of two `N×M` matrices, giving a length-`N` vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 {
            return Err(Error::dim(format!(
                "row_dot expects matrices, got {:?}",
                ta.shape()
            )));
        }
        let n = ta.shape()[0];
        let out: Vec<f64> = (0..n)
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::from_vec(out), Op::RowDot(a, b), &[a, b]))
    }

    /// Multiplies row `i` of `m[N×D]` by `s[i]`.
    pub fn scale_rows(&mut self, s: Var, m: Var) -> Result<Var> {
        let (ts, tm) = (self.value(s), self.value(m));
        match (ts.shape(), tm.shape()) {
            ([n], [n2, _]) if n == n2 => {}
            (a, b) => {
                return Err(Error::dim(format!(
                    "scale_rows: {a:?} cannot scale rows of {b:?}"
                )))
            }
        }
        let d = tm.shape()[1];
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ts.data()[i / d])
            .collect();
        let out = Tensor::new(tm.shape(), data)?;
        Ok(self.push(out, Op::ScaleRows { s, m }, &[s, m]))
    }

    pub fn conv3d(&mut self, x: Var, k: Var, padding: usize) -> Result<Var> {
        let out = ops::conv3d(self.value(x), self.value(k), padding)?;
        Ok(self.push(out, Op::Conv3d { x, k, padding }, &[x, k]))
    }

    pub fn maxpool3d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (out, argmax) = ops::maxpool3d(self.value(x), window)?;
        Ok(self.push(out, Op::MaxPool3d { x, argmax }, &[x]))
    }

    pub fn upsample3d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample3d(self.value(x), factor)?;
        Ok(self.push(out, Op::Upsample3d { x, factor }, &[x]))
    }

    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = ops::channel_bias(self.value(x), self.value(b))?;
        Ok(self.push(out, Op::ChannelBias { x, b }, &[x, b]))
    }

    pub fn batchnorm3d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: &mut RunningStats,
    ) -> Result<Var> {
        let (out, cache) = ops::batchnorm3d(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mode,
            running,
        )?;
        Ok(self.push(
            out,
            Op::BatchNorm3d {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.apply_rule(&node.op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Only requires_grad nodes keep their gradient.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn apply_rule(&self, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, delta: Vec<f64>| accumulate(grads, v, delta);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ga, gb) = ops::matmul_backward(self.value(*a), self.value(*b), g);
                if self.needs(*a) {
                    send(*a, ga);
                }
                if self.needs(*b) {
                    send(*b, gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = ops::linear_backward(self.value(*x), self.value(*w), g);
                if self.needs(*x) {
                    send(*x, gx);
                }
                if self.needs(*w) {
                    send(*w, gw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        send(*b, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    send(*a, g.to_vec());
                }
                if self.needs(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    send(*a, g.to_vec());
                }
                if self.needs(*b) {
                    send(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    send(*a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(a, k) => send(*a, g.iter().map(|v| v * k).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Mse(p, t) => {
                let (tp, tt) = (self.value(*p), self.value(*t));
                let k = 2.0 * g[0] / tp.numel() as f64;
                let d: Vec<f64> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(a, b)| k * (a - b))
                    .collect();
                if self.needs(*t) {
                    send(*t, d.iter().map(|v| -v).collect());
                }
                if self.needs(*p) {
                    send(*p, d);
                }
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let m = ta.shape()[1];
                let rowwise = |other: &Tensor| -> Vec<f64> {
                    other
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v * g[i / m])
                        .collect()
                };
                if self.needs(*a) {
                    send(*a, rowwise(tb));
                }
                if self.needs(*b) {
                    send(*b, rowwise(ta));
                }
            }
            Op::ScaleRows { s, m } => {
                let (ts, tm) = (self.value(*s), self.value(*m));
                let d = tm.shape()[1];
                if self.needs(*s) {
                    let gs = (0..ts.numel())
                        .map(|i| {
                            g[i * d..(i + 1) * d]
                                .iter()
                                .zip(tm.row(i))
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    send(*s, gs);
                }
                if self.needs(*m) {
                    send(
                        *m,
                        g.iter()
                            .enumerate()
                            .map(|(i, &v)| v * ts.data()[i / d])
                            .collect(),
                    );
                }
            }
            Op::Conv3d { x, k, padding } => {
                let (gx, gk) = ops::conv3d_backward(
                    self.value(*x),
                    self.value(*k),
                    *padding,
                    g,
                    self.needs(*x),
                );
                if let Some(gx) = gx {
                    send(*x, gx);
                }
                if self.needs(*k) {
                    send(*k, gk);
                }
            }
            Op::MaxPool3d { x, argmax } => {
                send(
                    *x,
                    ops::maxpool3d_backward(self.value(*x).numel(), argmax, g),
                );
            }
            Op::Upsample3d { x, factor } => {
                send(
                    *x,
                    ops::upsample3d_backward(self.value(*x).shape(), *factor, g),
                );
            }
            Op::ChannelBias { x, b } => {
                if self.needs(*x) {
                    send(*x, g.to_vec());
                }
                if self.needs(*b) {
                    let v = Vol5::of(self.value(*x), "").expect("checked in forward");
                    send(*b, ops::channel_bias_backward(v, g));
                }
            }
            Op::BatchNorm3d {
                x,
                gamma,
                beta,
                cache,
            } => {
                let v = Vol5::of(self.value(*x), "").expect("checked in forward");
                let (gx, gg, gb) = ops::batchnorm3d_backward(v, self.value(*gamma), cache, g);
                if self.needs(*x) {
                    send(*x, gx);
                }
                if self.needs(*gamma) {
                    send(*gamma, gg);
                }
                if self.needs(*beta) {
                    send(*beta, gb);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(&delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
