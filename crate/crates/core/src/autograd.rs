//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends one node holding its output value, the ids of its
//! inputs and a backward closure. Because a node can only reference nodes
//! that already exist, recording order is a topological order, and the
//! backward pass is a single sweep over the nodes in reverse.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// What a backward rule sees: the forward inputs and output, the gradient
/// flowing into the output, and which inputs actually need a gradient.
pub struct BackwardCtx<'a, T> {
    pub inputs: &'a [Rc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub needs: &'a [bool],
}

impl<T> BackwardCtx<'_, T> {
    pub fn input(&self, i: usize) -> &Tensor<T> {
        &self.inputs[i]
    }
}

/// Gradients for each input, `None` where the input does not need one.
pub type InputGrads<T> = Vec<Option<Tensor<T>>>;

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Result<InputGrads<T>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A tracked input whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "leaf",
            value: Rc::new(value),
            inputs: Vec::new(),
            requires_grad: true,
            backward: None,
        })
    }

    /// An untracked input (data, labels, frozen tensors).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "constant",
            value: Rc::new(value),
            inputs: Vec::new(),
            requires_grad: false,
            backward: None,
        })
    }

    /// Record an operation. The backward closure is dropped when no input
    /// requires a gradient.
    pub fn record<'t, F>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        output: Tensor<T>,
        backward: F,
    ) -> Result<Var<'t, T>>
    where
        F: Fn(&BackwardCtx<'_, T>) -> Result<InputGrads<T>> + 'static,
    {
        if let Some(foreign) = inputs.iter().find(|v| !std::ptr::eq(v.tape, self)) {
            return Err(Error::Tape(format!(
                "{op}: input {foreign:?} was recorded on a different tape"
            )));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        Ok(self.push(Node {
            op,
            value: Rc::new(output),
            inputs: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
        }))
    }

    /// Names of the recorded operations, in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Propagate `d loss / d loss = 1` back through the tape.
    ///
    /// Gradients are kept for leaves only; intermediates are released as soon
    /// as their node has been processed.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Tape("loss was not recorded on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                shape: root.value.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one())?);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor<T>>> =
                node.inputs.iter().map(|&i| Rc::clone(&nodes[i].value)).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let ctx = BackwardCtx {
                inputs: &inputs,
                output: &node.value,
                grad: &grad,
                needs: &needs,
            };
            let input_grads = rule(&ctx)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Tape(format!(
                    "{}: backward returned {} gradients for {} inputs",
                    node.op,
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                if g.shape() != nodes[input].value.shape() {
                    return Err(Error::Tape(format!(
                        "{}: gradient shape {:?} does not match input shape {:?}",
                        node.op,
                        g.shape(),
                        nodes[input].value.shape()
                    )));
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        // Keep only leaf gradients.
        for (node, g) in nodes.iter().zip(grads.iter_mut()) {
            if node.backward.is_some() || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]).expect("recorded shapes are valid"),
        }
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.id]).expect("recorded shapes are valid"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum<'t>(x: Var<'t, f64>) -> Var<'t, f64> {
        let out = Tensor::scalar(x.value().sum());
        let shape = x.shape();
        x.tape()
            .record("sum", &[x], out, move |ctx| {
                let g = ctx.grad.data()[0];
                Ok(vec![Some(Tensor::full(&shape, g)?)])
            })
            .unwrap()
    }

    fn square<'t>(x: Var<'t, f64>) -> Var<'t, f64> {
        let out = x.value().map(|v| v * v);
        x.tape()
            .record("square", &[x], out, |ctx| {
                Ok(vec![Some(ctx.input(0).zip_map(ctx.grad, "square", |x, g| 2.0 * x * g)?)])
            })
            .unwrap()
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1], vec![3.0]).unwrap());
        let loss = sum(square(x));
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let y = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let a = sum(y);
        let b = sum(y);
        let out = Tensor::scalar(a.value().data()[0] + b.value().data()[0]);
        let loss = tape
            .record("add", &[a, b], out, |ctx| {
                Ok(vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())])
            })
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(y).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn untouched_leaf_gets_zeros() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let unused = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0; 4]).unwrap());
        let grads = tape.backward(sum(x)).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused).data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::ones(&[2]).unwrap());
        assert!(matches!(tape.backward(square(x)), Err(Error::Rank { .. })));
    }

    #[test]
    fn foreign_loss_is_rejected() {
        let tape = Tape::new();
        let other = Tape::new();
        let x = other.leaf(Tensor::<f64>::ones(&[1]).unwrap());
        assert!(matches!(tape.backward(sum(x)), Err(Error::Tape(_))));
    }

    #[test]
    fn constants_do_not_record_backward() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::<f64>::ones(&[2]).unwrap());
        let s = sum(c);
        assert!(!s.requires_grad());
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(c).is_none());
    }
}
