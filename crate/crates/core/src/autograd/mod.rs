//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations in execution order; [`Var`] is a
//! handle into it. [`Tape::backward`] walks the record once in reverse and
//! returns the gradient of a scalar root with respect to every node. A leaf
//! used several times (shared weights across unrolled iterations) receives
//! the sum of all its contributions.

mod conv;
mod norm;

use std::sync::Arc;

use crate::error::{shape_err, NpgdError, Result};
use crate::tensor::Tensor;

use conv::ConvGeom;

pub use norm::INSTANCE_NORM_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module.
///
/// `vjp` returns one gradient per entry of `inputs`, in the same order.
pub trait Function: Send + Sync {
    fn inputs(&self) -> Vec<Var>;
    fn vjp(&self, tape: &Tape, output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Swish(Var),
    Gate {
        input: Var,
        mask: Tensor,
    },
    InstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f32>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f32),
    SumSquares(Var),
    MseLoss {
        a: Var,
        target: Tensor,
    },
    L1Loss {
        a: Var,
        target: Tensor,
    },
    Custom(Arc<dyn Function>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

/// Gate value `D(z)` of the ReLU, with `D(0) = 0`.
pub fn relu_gate(z: f32) -> f32 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Gate value `D(z)` of the Swish, the logistic sigmoid.
pub fn swish_gate(z: f32) -> f32 {
    sigmoid(z)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn custom(&mut self, value: Tensor, f: Arc<dyn Function>) -> Var {
        debug_assert!(f.inputs().iter().all(|p| p.0 < self.nodes.len()));
        self.push(value, Op::Custom(f))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.value(input).shape(), self.value(kernel).shape());
        let geom = ConvGeom::new(xs, ks, stride, padding).ok_or_else(|| {
            NpgdError::Shape(format!(
                "conv2d input {xs:?} incompatible with kernel {ks:?} (stride {stride}, padding {padding})"
            ))
        })?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.c_out] {
                return shape_err(format!(
                    "conv2d bias {:?} does not match {} output channels",
                    self.value(b).shape(),
                    geom.c_out
                ));
            }
        }
        let out = conv::conv_forward(
            &geom,
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        );
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|z| z * relu_gate(z));
        self.push(out, Op::Relu(x))
    }

    pub fn swish(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|z| z * swish_gate(z));
        self.push(out, Op::Swish(x))
    }

    /// Multiply by a fixed gate tensor: the activation with its mask frozen.
    pub fn gate(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(&mask, |z, d| z * d)?;
        Ok(self.push(out, Op::Gate { input: x, mask }))
    }

    /// Per-channel normalization of a `C x H x W` tensor with learned affine.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, xhat, inv_std) =
            norm::instance_norm_forward(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(
            out,
            Op::InstanceNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_squares() as f32;
        self.push(Tensor::scalar(v), Op::SumSquares(x))
    }

    /// `||a - target||^2`, summed without averaging.
    pub fn mse_loss(&mut self, a: Var, target: &Tensor) -> Result<Var> {
        self.value(a).check_same_shape(target)?;
        let v: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| {
                let e = (x - t) as f64;
                e * e
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(v as f32),
            Op::MseLoss {
                a,
                target: target.clone(),
            },
        ))
    }

    /// Smoothed absolute error `sum sqrt((a - target)^2 + 1e-8)`.
    pub fn l1_loss(&mut self, a: Var, target: &Tensor) -> Result<Var> {
        self.value(a).check_same_shape(target)?;
        let v: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| {
                let e = (x - t) as f64;
                (e * e + L1_SMOOTHING).sqrt()
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(v as f32),
            Op::L1Loss {
                a,
                target: target.clone(),
            },
        ))
    }

    /// Reverse pass from a scalar root. A tape supports a single backward pass.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(NpgdError::Contract(
                "backward already ran on this tape".into(),
            ));
        }
        if self.value(root).len() != 1 {
            return Err(NpgdError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.consumed = true;
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::new(self.value(root).shape(), vec![1.0])?);
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (parent, pg) in self.vjp(idx, &g) {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn vjp(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let cg = conv::conv_backward(geom, self.value(*input), self.value(*kernel), g);
                let mut out = vec![(*input, cg.input), (*kernel, cg.kernel)];
                if let Some(b) = bias {
                    out.push((*b, cg.bias));
                }
                out
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .zip_map(g, |z, gv| gv * relu_gate(z))
                    .expect("same shape");
                vec![(*x, d)]
            }
            Op::Swish(x) => {
                let d = self
                    .value(*x)
                    .zip_map(g, |z, gv| {
                        let s = sigmoid(z);
                        gv * (s + z * s * (1.0 - s))
                    })
                    .expect("same shape");
                vec![(*x, d)]
            }
            Op::Gate { input, mask } => {
                vec![(*input, mask.zip_map(g, |d, gv| d * gv).expect("same shape"))]
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (dx, dgamma, dbeta) =
                    norm::instance_norm_backward(xhat, inv_std, self.value(*gamma), g);
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Scale(x, s) => vec![(*x, g.scale(*s))],
            Op::SumSquares(x) => {
                let gv = g.item();
                vec![(*x, self.value(*x).map(|v| 2.0 * gv * v))]
            }
            Op::MseLoss { a, target } => {
                let gv = g.item();
                let d = self
                    .value(*a)
                    .zip_map(target, |x, t| 2.0 * gv * (x - t))
                    .expect("same shape");
                vec![(*a, d)]
            }
            Op::L1Loss { a, target } => {
                let gv = g.item();
                let d = self
                    .value(*a)
                    .zip_map(target, |x, t| {
                        let e = (x - t) as f64;
                        (gv as f64 * e / (e * e + L1_SMOOTHING).sqrt()) as f32
                    })
                    .expect("same shape");
                vec![(*a, d)]
            }
            Op::Custom(f) => {
                let inputs = f.inputs();
                let grads = f.vjp(self, &node.value, g);
                debug_assert_eq!(inputs.len(), grads.len());
                inputs.into_iter().zip(grads).collect()
            }
        }
    }
}

const L1_SMOOTHING: f64 = 1e-8;

