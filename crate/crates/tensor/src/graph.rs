use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::tensor::Tensor;

/// Backward rule of an operation: receives the output gradient, the input
/// values, the output value and which inputs need a gradient.
pub(crate) type BackwardFn =
    Box<dyn Fn(&Tensor, &[&Tensor], &Tensor, &[bool]) -> Vec<Option<Tensor>> + Send + Sync>;

struct Node {
    value: RwLock<Tensor>,
    grad: Mutex<Option<Tensor>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// A node of the computation graph. Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Var(Arc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording any graph; all produced vars are constants.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

impl Var {
    fn from_node(node: Node) -> Self {
        Var(Arc::new(node))
    }

    /// Trainable leaf.
    pub fn param(value: Tensor) -> Self {
        Self::from_node(Node {
            value: RwLock::new(value),
            grad: Mutex::new(None),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Self::from_node(Node {
            value: RwLock::new(value),
            grad: Mutex::new(None),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Self {
        let requires_grad = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::from_node(Node {
                value: RwLock::new(value),
                grad: Mutex::new(None),
                parents,
                backward: Some(backward),
                requires_grad: true,
            })
        } else {
            Self::constant(value)
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor> {
        self.0.value.read()
    }

    /// Copy of the current value.
    pub fn tensor(&self) -> Tensor {
        self.0.value.read().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.read().shape().to_vec()
    }

    pub fn item(&self) -> f32 {
        self.0.value.read().item()
    }

    /// Overwrite a leaf's value (optimizer steps, checkpoint loading).
    pub fn set_value(&self, value: Tensor) {
        let mut guard = self.0.value.write();
        assert_eq!(guard.shape(), value.shape(), "set_value shape mismatch");
        *guard = value;
    }

    pub fn update_value(&self, f: impl FnOnce(&mut Tensor)) {
        f(&mut self.0.value.write());
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.lock().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor> {
        self.0.grad.lock().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Same value, cut from the graph (stop-gradient).
    pub fn detach(&self) -> Var {
        Var::constant(self.tensor())
    }

    fn key(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn accumulate_leaf_grad(&self, g: Tensor) {
        let mut slot = self.0.grad.lock();
        match slot.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        }
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

/// Reverse-mode sweep from a scalar `loss`; gradients land on leaves that
/// require them and accumulate across calls until `zero_grad`.
pub fn backward(loss: &Var) {
    assert_eq!(loss.value().numel(), 1, "backward() needs a scalar loss");
    if !loss.requires_grad() {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    let mut order: Vec<Var> = Vec::new();
    let mut visited: HashSet<*const Node> = HashSet::new();
    let mut stack: Vec<(Var, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.key());
    while let Some((node, idx)) = stack.pop() {
        if idx < node.0.parents.len() {
            let parent = node.0.parents[idx].clone();
            stack.push((node, idx + 1));
            if parent.requires_grad() && visited.insert(parent.key()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut grads: HashMap<*const Node, Tensor> = HashMap::new();
    let shape = loss.shape();
    grads.insert(loss.key(), Tensor::ones(shape));
    for node in order.iter().rev() {
        let Some(grad) = grads.remove(&node.key()) else { continue };
        let Some(backward_fn) = node.0.backward.as_ref() else {
            node.accumulate_leaf_grad(grad);
            continue;
        };
        let guards: Vec<_> = node.0.parents.iter().map(|p| p.0.value.read()).collect();
        let inputs: Vec<&Tensor> = guards.iter().map(|g| &**g).collect();
        let needs: Vec<bool> = node.0.parents.iter().map(|p| p.requires_grad()).collect();
        let out = node.0.value.read();
        let parent_grads = backward_fn(&grad, &inputs, &out, &needs);
        drop(out);
        drop(guards);
        debug_assert_eq!(parent_grads.len(), node.0.parents.len());
        for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
            let Some(pg) = pg else { continue };
            if !parent.requires_grad() {
                continue;
            }
            debug_assert_eq!(pg.shape(), parent.value().shape());
            match grads.get_mut(&parent.key()) {
                Some(acc) => acc.add_assign(&pg),
                None => {
                    grads.insert(parent.key(), pg);
                }
            }
        }
    }
}
