use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Array2, Ix1, Ix2, Ix4, IxDyn};

use super::ops::{self, GroupStats};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Conv2d { x: Var, kernel: Var, bias: Var },
    Selu { x: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, stats: Vec<GroupStats<F>> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Flatten { x: Var },
    Linear { x: Var, weight: Var, bias: Var },
    L2Normalize { x: Var, norms: Vec<F> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking
/// them backwards is a valid topological order. `backward` may run once per
/// recorded forward pass; call [`Tape::reset`] to record a new one.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

/// Gradients of the leaves that require them.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn as4<'a, F: Real>(t: &'a Tensor<F>, what: &str) -> Result<ndarray::ArrayView4<'a, F>> {
    t.view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| Error::Shape(format!("{what}: expected a 4-d tensor, got shape {:?}", t.shape())))
}

fn as2<'a, F: Real>(t: &'a Tensor<F>, what: &str) -> Result<ndarray::ArrayView2<'a, F>> {
    t.view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| Error::Shape(format!("{what}: expected a 2-d tensor, got shape {:?}", t.shape())))
}

fn as1<'a, F: Real>(t: &'a Tensor<F>, what: &str) -> Result<ndarray::ArrayView1<'a, F>> {
    t.view()
        .into_dimensionality::<Ix1>()
        .map_err(|_| Error::Shape(format!("{what}: expected a 1-d tensor, got shape {:?}", t.shape())))
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Drops all recorded nodes so the tape can record a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::Tape("tape already replayed; reset before recording".into()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable input whose gradient is reported by `backward`.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true).expect("recording on a fresh tape")
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false).expect("recording on a fresh tape")
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let y = ops::conv2d(
            as4(self.value(x), "conv2d input")?,
            as4(self.value(kernel), "conv2d kernel")?,
            as1(self.value(bias), "conv2d bias")?,
        )?;
        let rg = self.requires(x) || self.requires(kernel) || self.requires(bias);
        self.push(y.into_dyn(), Op::Conv2d { x, kernel, bias }, rg)
    }

    pub fn selu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).mapv(ops::selu_scalar);
        let rg = self.requires(x);
        self.push(y, Op::Selu { x }, rg)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (y, stats) = ops::group_norm(
            as4(self.value(x), "group_norm input")?,
            as1(self.value(gamma), "group_norm gamma")?,
            as1(self.value(beta), "group_norm beta")?,
            groups,
        )?;
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            y.into_dyn(),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            rg,
        )
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: (usize, usize)) -> Result<Var> {
        let (y, argmax) = ops::max_pool2d(as4(self.value(x), "max_pool2d input")?, kernel)?;
        let rg = self.requires(x);
        self.push(y.into_dyn(), Op::MaxPool { x, argmax }, rg)
    }

    /// `[n, ...] -> [n, prod(...)]` in row-major order.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = *v.shape().first().ok_or_else(|| Error::Shape("flatten: scalar input".into()))?;
        let d = if n == 0 { 0 } else { v.len() / n };
        let y = v
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[n, d]))
            .expect("same element count");
        let rg = self.requires(x);
        self.push(y, Op::Flatten { x }, rg)
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = ops::linear(
            as2(self.value(x), "linear input")?,
            as2(self.value(weight), "linear weight")?,
            as1(self.value(bias), "linear bias")?,
        )?;
        let rg = self.requires(x) || self.requires(weight) || self.requires(bias);
        self.push(y.into_dyn(), Op::Linear { x, weight, bias }, rg)
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (y, norms) = ops::l2_normalize(as2(self.value(x), "l2_normalize input")?)?;
        let rg = self.requires(x);
        self.push(y.into_dyn(), Op::L2Normalize { x, norms }, rg)
    }

    /// Hash of every branch decision taken by the recorded forward pass
    /// (pooling winners, SELU sides). Two evaluations with equal signatures
    /// lie on the same smooth piece of the function.
    pub fn region_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                Op::Selu { x } => {
                    for v in self.value(*x).iter() {
                        (*v > F::zero()).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates `seed` (the gradient of some scalar w.r.t. `output`) back
    /// to every leaf that requires a gradient.
    pub fn backward(&mut self, output: Var, seed: Tensor<F>) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(Error::Tape("backward already invoked for this forward pass".into()));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::Shape(format!(
                "backward seed shape {:?} does not match output shape {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => grads[i] = Some(g),
                Op::Conv2d { x, kernel, bias } => {
                    let r = ops::conv2d_backward(
                        as4(self.value(*x), "conv2d input")?,
                        as4(self.value(*kernel), "conv2d kernel")?,
                        as4(&g, "conv2d grad")?,
                        self.requires(*x),
                    );
                    if let Some(dx) = r.input {
                        accumulate(&mut grads, *x, dx.into_dyn());
                    }
                    accumulate(&mut grads, *kernel, r.kernel.into_dyn());
                    accumulate(&mut grads, *bias, r.bias.into_dyn());
                }
                Op::Selu { x } => {
                    let mut dx = g;
                    dx.zip_mut_with(self.value(*x), |d, &v| *d = *d * ops::selu_derivative(v));
                    accumulate(&mut grads, *x, dx);
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let r = ops::group_norm_backward(
                        as4(self.value(*x), "group_norm input")?,
                        as1(self.value(*gamma), "group_norm gamma")?,
                        *groups,
                        stats,
                        as4(&g, "group_norm grad")?,
                        self.requires(*x),
                    );
                    if let Some(dx) = r.input {
                        accumulate(&mut grads, *x, dx.into_dyn());
                    }
                    accumulate(&mut grads, *gamma, r.gamma.into_dyn());
                    accumulate(&mut grads, *beta, r.beta.into_dyn());
                }
                Op::MaxPool { x, argmax } => {
                    let xv = as4(self.value(*x), "max_pool2d input")?;
                    let dx = ops::max_pool2d_backward(xv.dim(), argmax, as4(&g, "max_pool2d grad")?);
                    accumulate(&mut grads, *x, dx.into_dyn());
                }
                Op::Flatten { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    let dx = g
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(&shape))
                        .expect("same element count");
                    accumulate(&mut grads, *x, dx);
                }
                Op::Linear { x, weight, bias } => {
                    let r = ops::linear_backward(
                        as2(self.value(*x), "linear input")?,
                        as2(self.value(*weight), "linear weight")?,
                        as2(&g, "linear grad")?,
                    );
                    accumulate(&mut grads, *x, r.input.into_dyn());
                    accumulate(&mut grads, *weight, r.weight.into_dyn());
                    accumulate(&mut grads, *bias, r.bias.into_dyn());
                }
                Op::L2Normalize { x, norms } => {
                    let y: Array2<F> = as2(&node.value, "l2_normalize output")?.to_owned();
                    let dx = ops::l2_normalize_backward(y.view(), norms, as2(&g, "l2_normalize grad")?);
                    accumulate(&mut grads, *x, dx.into_dyn());
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        if let Some(bad) = grads.iter().flatten().find(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!(
                "gradient of shape {:?} contains non-finite entries",
                bad.shape()
            )));
        }
        Ok(Gradients { grads })
    }
}
