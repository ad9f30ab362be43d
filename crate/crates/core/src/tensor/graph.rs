use super::{Element, Tensor};

/// One recorded tensor in a [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: u64,
    /// `None` for leaves.
    pub op: Option<&'static str>,
    pub inputs: Vec<u64>,
    pub shape: Vec<usize>,
}

/// Snapshot of the differentiable graph behind a tensor, in topological
/// order: every node appears after all of its operands.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub nodes: Vec<GraphNode>,
}

impl Graph {
    pub fn from_root<T: Element>(root: &Tensor<T>) -> Self {
        let mut order = root.reverse_topo();
        order.reverse();
        let nodes = order
            .iter()
            .map(|t| GraphNode {
                id: t.id(),
                op: t.op_name(),
                inputs: t
                    .inputs()
                    .iter()
                    .filter(|i| i.requires_grad())
                    .map(|i| i.id())
                    .collect(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ops_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a GraphNode> + 'a {
        self.nodes.iter().filter(move |n| n.op == Some(name))
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_follow_their_operands() {
        let a = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::param(&[2], vec![3.0, 4.0]).unwrap();
        let c = a.mul(&b).unwrap();
        let d = c.add(&a).unwrap().exp().sum_all();
        let g = Graph::from_root(&d);
        assert_eq!(g.len(), 6);
        for (i, node) in g.nodes.iter().enumerate() {
            for input in &node.inputs {
                assert!(g.position(*input).unwrap() < i);
            }
        }
        assert_eq!(g.nodes.last().unwrap().id, d.id());
        assert_eq!(g.ops_named("mul").count(), 1);
    }
}
