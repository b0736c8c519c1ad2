//! Rooted tree over the structural dimensions of a sequence.

use crate::error::{Result, StsError};

/// Parent-link tree over `m` dimensions plus the coordinate dimensionality
/// of each point. Node 0 is conventionally the root `d_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonTopology {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    root: usize,
    coord_dim: usize,
}

impl SkeletonTopology {
    /// Builds and validates a tree from parent links (`None` marks the root).
    pub fn new(parent: Vec<Option<usize>>, coord_dim: usize) -> Result<Self> {
        let m = parent.len();
        if m == 0 {
            return Err(StsError::Input("topology needs at least one node".into()));
        }
        if coord_dim == 0 {
            return Err(StsError::Input("coordinate dimensionality must be positive".into()));
        }
        let roots: Vec<usize> = (0..m).filter(|&j| parent[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(StsError::Input(format!(
                "topology must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); m];
        for j in 0..m {
            if let Some(p) = parent[j] {
                if p >= m {
                    return Err(StsError::Input(format!(
                        "node {j} has out-of-range parent {p}"
                    )));
                }
                children[p].push(j);
            }
        }
        // reachability from the root doubles as the cycle check
        let mut seen = vec![false; m];
        let mut stack = vec![root];
        while let Some(j) = stack.pop() {
            if seen[j] {
                return Err(StsError::Input("topology contains a cycle".into()));
            }
            seen[j] = true;
            stack.extend(&children[j]);
        }
        if seen.iter().any(|&s| !s) {
            return Err(StsError::Input(
                "topology has nodes unreachable from the root".into(),
            ));
        }
        for c in &mut children {
            c.sort_unstable();
        }
        Ok(SkeletonTopology {
            parent,
            children,
            root,
            coord_dim,
        })
    }

    /// The 7-node full binary tree on the plane used by the synthetic
    /// generator: 0 -> {1,2}, 1 -> {3,4}, 2 -> {5,6}.
    pub fn binary_tree_7() -> Self {
        SkeletonTopology::new(
            vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)],
            2,
        )
        .unwrap()
    }

    pub fn num_dims(&self) -> usize {
        self.parent.len()
    }

    pub fn coord_dim(&self) -> usize {
        self.coord_dim
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn parent_links(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    /// Tree neighbors of `j` (parent plus children), ascending.
    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.children[j].clone();
        if let Some(p) = self.parent[j] {
            n.push(p);
        }
        n.sort_unstable();
        n
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.parent[a] == Some(b) || self.parent[b] == Some(a)
    }

    /// Largest neighbor count over all nodes.
    pub fn max_degree(&self) -> usize {
        (0..self.num_dims())
            .map(|j| self.neighbors(j).len())
            .max()
            .unwrap_or(0)
    }

    /// Number of angle features per node: one per unordered pair of incident
    /// edges at the highest-degree node.
    pub fn angle_feature_count(&self) -> usize {
        let k = self.max_degree();
        k * k.saturating_sub(1) / 2
    }

    /// Euler tour from the root: a depth-first walk that re-emits a node each
    /// time the walk returns to it, children in ascending index order.
    /// Length is `2m - 1`.
    pub fn euler_tour(&self) -> Vec<usize> {
        let mut tour = Vec::with_capacity(2 * self.num_dims() - 1);
        self.tour_from(self.root, &mut tour);
        tour
    }

    fn tour_from(&self, node: usize, tour: &mut Vec<usize>) {
        tour.push(node);
        for &c in &self.children[node] {
            self.tour_from(c, tour);
            tour.push(node);
        }
    }

    /// Index of the first appearance of each node in the Euler tour.
    pub fn first_visit_positions(&self) -> Vec<usize> {
        let tour = self.euler_tour();
        let mut first = vec![usize::MAX; self.num_dims()];
        for (pos, &j) in tour.iter().enumerate() {
            if first[j] == usize::MAX {
                first[j] = pos;
            }
        }
        first
    }
}
