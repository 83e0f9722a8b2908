use std::collections::{HashMap, HashSet};

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// The recorded ops reachable from a root, in topological order
/// (every node appears after all of its inputs).
pub struct Tape<T: Float> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Float> Tape<T> {
    /// Linearises the graph under `root`, keeping only gradient-carrying nodes.
    pub fn record(root: &Tensor<T>) -> Self {
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        if !root.is_tracked() {
            return Tape { nodes };
        }
        // Iterative post-order DFS; (tensor, children_pushed).
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                nodes.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(g) = t.grad_fn() {
                for input in g.inputs.iter().rev() {
                    if input.is_tracked() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor<T>] {
        &self.nodes
    }

    /// Names of the recorded ops in tape order (leaves report `"leaf"`).
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|t| t.op_name().unwrap_or("leaf")).collect()
    }

    /// Reverse sweep seeded with d(root)/d(root) = 1.
    fn run(&self, root: &Tensor<T>) -> Gradients<T> {
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        let mut leaves = HashMap::new();
        pending.insert(root.id(), vec![T::one(); root.numel()]);
        for node in self.nodes.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(g) = node.grad_fn() else {
                leaves.insert(node.id(), grad);
                continue;
            };
            let input_grads = (g.backward)(&grad);
            debug_assert_eq!(input_grads.len(), g.inputs.len(), "{} backward arity", g.op);
            for (input, ig) in g.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.is_tracked() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "{} gradient length", g.op);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                    None => {
                        pending.insert(input.id(), ig);
                    }
                }
            }
        }
        Gradients { by_id: leaves }
    }
}

/// Gradients of a scalar loss with respect to every tracked leaf it depends on.
pub struct Gradients<T: Float> {
    by_id: HashMap<u64, Vec<T>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient buffer for `leaf`, or `None` when the loss does not depend on it.
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&[T]> {
        self.by_id.get(&leaf.id()).map(Vec::as_slice)
    }

    /// Gradient for `leaf` as a tensor of the leaf's shape (zeros when absent).
    pub fn wrt(&self, leaf: &Tensor<T>) -> Tensor<T> {
        let data = match self.get(leaf) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); leaf.numel()],
        };
        Tensor::from_vec(leaf.shape(), data).expect("leaf shape is valid")
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

impl<T: Float> Tensor<T> {
    /// Reverse-mode sweep from this scalar.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        Ok(Tape::record(self).run(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_is_topological_and_visits_each_node_once() {
        let x = Tensor::<f64>::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let a = x.mul(&x).unwrap();
        let b = a.add(&x).unwrap();
        let c = b.mul(&a).unwrap().sum_all().unwrap();
        let tape = Tape::record(&c);
        let ids: Vec<u64> = tape.nodes().iter().map(|t| t.id()).collect();
        let unique: HashSet<u64> = ids.iter().copied().collect();
        assert_eq!(ids.len(), unique.len());
        let pos: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        for t in tape.nodes() {
            if let Some(g) = t.grad_fn() {
                for input in &g.inputs {
                    assert!(pos[&input.id()] < pos[&t.id()]);
                }
            }
        }
        assert_eq!(tape.len(), 5);
    }

    #[test]
    fn sum_gives_ones_and_square_gives_two_x() {
        let x = Tensor::<f64>::parameter(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let g = x.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0; 4]);
        let g = x.mul(&x).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[2.0, -4.0, 7.0, 0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.mul_scalar(2.0).unwrap().backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn untracked_inputs_receive_nothing() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let g = x.mul(&c).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[3.0, 4.0]);
        assert!(g.get(&c).is_none());
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.mul(&x.detach()).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0, 2.0]);
    }
}
