//! Tape-based reverse-mode differentiation.
//!
//! Every primitive executed through a [`Tape`] appends one node holding its
//! output value, the handles of its inputs and a [`BackwardRule`]. Calling
//! [`Tape::backward`] walks the nodes in reverse order exactly once.

use std::fmt;

use crate::real::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies the primitive behind a node. Used for diagnostics and for the
/// fault-injection fixture of the gradient-check suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    Sum,
    Mean,
    Conv2d,
    Linear,
    LayerNorm,
    AvgPool2d,
    GlobalAvgPool,
    ChannelMean,
    ChannelMax,
    Concat,
    PixelShuffle,
    UpsampleNearest,
    Crop,
    Reshape,
    HighFreq,
    SelectiveScan,
    L1Loss,
}

impl OpKind {
    pub const ALL: [OpKind; 26] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Sigmoid,
        OpKind::Silu,
        OpKind::Softplus,
        OpKind::Exp,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Conv2d,
        OpKind::Linear,
        OpKind::LayerNorm,
        OpKind::AvgPool2d,
        OpKind::GlobalAvgPool,
        OpKind::ChannelMean,
        OpKind::ChannelMax,
        OpKind::Concat,
        OpKind::PixelShuffle,
        OpKind::UpsampleNearest,
        OpKind::Crop,
        OpKind::Reshape,
        OpKind::HighFreq,
        OpKind::SelectiveScan,
        OpKind::L1Loss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Silu => "silu",
            OpKind::Softplus => "softplus",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Conv2d => "conv2d",
            OpKind::Linear => "linear",
            OpKind::LayerNorm => "layer_norm",
            OpKind::AvgPool2d => "avg_pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::ChannelMean => "channel_mean",
            OpKind::ChannelMax => "channel_max",
            OpKind::Concat => "concat",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::UpsampleNearest => "upsample_nearest",
            OpKind::Crop => "crop",
            OpKind::Reshape => "reshape",
            OpKind::HighFreq => "highfreq",
            OpKind::SelectiveScan => "selective_scan",
            OpKind::L1Loss => "l1_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Local derivative of one primitive.
///
/// `backward` receives the forward inputs, the forward output and the
/// gradient flowing into the output. It returns one entry per input;
/// entries for inputs whose `needs` flag is false may be `None`.
pub trait BackwardRule<T: Real>: Send + Sync {
    fn kind(&self) -> OpKind;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardRule<T>>>,
}

/// Record of one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            fault: None,
        }
    }

    /// Test fixture: corrupts the backward rule of every `kind` node on this
    /// tape by scaling its input gradients by 1.5.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a leaf. Its gradient is populated by `backward` when
    /// `tensor.requires_grad` is set and the leaf is reachable from the loss.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            inputs: Vec::new(),
            rule: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Appends the output of a primitive. The rule is dropped when no input
    /// requires a gradient.
    pub fn push(&mut self, mut value: Tensor<T>, inputs: Vec<Var>, rule: Box<dyn BackwardRule<T>>) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.requires_grad = requires;
        value.grad = None;
        self.nodes.push(Node {
            value,
            inputs,
            rule: requires.then_some(rule),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Gradient of a leaf after `backward`; `None` for leaves that were not
    /// reachable from the loss or do not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Copy of a node's value, detached from the tape.
    pub fn detach(&self, v: Var) -> Tensor<T> {
        let t = &self.nodes[v.0].value;
        Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("recorded tensor is well formed")
    }

    /// Runs every recorded backward rule in reverse order and stores
    /// d(loss)/d(leaf) on each reachable trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            let Some(rule) = node.rule.as_ref() else {
                grads[id] = Some(grad_out);
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|t| t.requires_grad).collect();
            let mut input_grads = rule.backward(&inputs, &node.value, &grad_out, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            if self.fault == Some(rule.kind()) {
                let k = T::of(1.5);
                for g in input_grads.iter_mut().flatten() {
                    g.iter_mut().for_each(|v| *v *= k);
                }
            }
            for ((input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.len(), self.nodes[input.0].value.len());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.rule.is_none() && node.value.requires_grad {
                node.value.grad = grad;
            }
        }
        Ok(())
    }
}
