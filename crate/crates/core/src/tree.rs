//! Rooted phylogenetic trees with branch lengths.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Length of the branch joining this node to its parent.
    pub branch_length: f64,
    pub name: Option<String>,
}

/// A rooted tree whose leaves are the variables of an analysis.
///
/// Leaves are ordered by a preorder walk from the root visiting children in
/// insertion order; that order is the variable order of derived kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    nodes: Vec<TreeNode>,
    root: usize,
    leaves: Vec<usize>,
}

impl PhyloTree {
    /// Builds a tree from `(parent, branch_length, name)` triples, one per
    /// node, validating structure and leaf names.
    pub fn from_parents(spec: Vec<(Option<usize>, f64, Option<String>)>) -> Result<Self> {
        let n = spec.len();
        if n == 0 {
            return Err(Error::invalid("tree has no nodes"));
        }
        let mut nodes: Vec<TreeNode> = spec
            .into_iter()
            .map(|(parent, branch_length, name)| TreeNode {
                parent,
                children: vec![],
                branch_length,
                name,
            })
            .collect();
        let mut root = None;
        for i in 0..n {
            let len = nodes[i].branch_length;
            if !len.is_finite() || len < 0.0 {
                return Err(Error::invalid(format!(
                    "node {i}: branch length {len} must be finite and >= 0"
                )));
            }
            match nodes[i].parent {
                None if root.is_some() => return Err(Error::invalid("tree has more than one root")),
                None => root = Some(i),
                Some(p) if p >= n || p == i => {
                    return Err(Error::invalid(format!("node {i}: invalid parent {p}")));
                }
                Some(p) => nodes[p].children.push(i),
            }
        }
        let root = root.ok_or_else(|| Error::invalid("tree has no root"))?;

        let mut leaves = Vec::new();
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        let mut visited = 0;
        while let Some(v) = stack.pop() {
            if seen[v] {
                return Err(Error::invalid("tree contains a cycle"));
            }
            seen[v] = true;
            visited += 1;
            if nodes[v].children.is_empty() {
                leaves.push(v);
            }
            stack.extend(nodes[v].children.iter().rev());
        }
        if visited != n {
            return Err(Error::invalid("tree has nodes unreachable from the root"));
        }

        let mut names = HashSet::new();
        for &leaf in &leaves {
            match nodes[leaf].name.as_deref() {
                None | Some("") => return Err(Error::invalid(format!("leaf node {leaf} has no name"))),
                Some(name) => {
                    if !names.insert(name.to_string()) {
                        return Err(Error::invalid(format!("duplicate leaf name {name:?}")));
                    }
                }
            }
        }
        Ok(PhyloTree { nodes, root, leaves })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Node indices of the leaves, in variable order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves
            .iter()
            .map(|&l| self.nodes[l].name.clone().expect("validated leaf name"))
            .collect()
    }

    /// Preorder node sequence from the root.
    pub fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        order
    }

    /// Path length from the root to every node.
    pub fn root_distances(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.nodes.len()];
        for v in self.preorder() {
            if let Some(p) = self.nodes[v].parent {
                depth[v] = depth[p] + self.nodes[v].branch_length;
            }
        }
        depth
    }

    /// Positions (in leaf order) of the leaves descending from `node`,
    /// `node` itself included when it is a leaf.
    pub fn descendant_leaves(&self, node: usize) -> Result<Vec<usize>> {
        if node >= self.nodes.len() {
            return Err(Error::invalid(format!(
                "no node {node} in a tree of {} nodes",
                self.nodes.len()
            )));
        }
        let mut position = vec![usize::MAX; self.nodes.len()];
        for (i, &l) in self.leaves.iter().enumerate() {
            position[l] = i;
        }
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if self.nodes[v].children.is_empty() {
                out.push(position[v]);
            }
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Number of leaves descending from every node.
    pub fn descendant_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        for &v in self.preorder().iter().rev() {
            if self.nodes[v].children.is_empty() {
                counts[v] = 1;
            }
            if let Some(p) = self.nodes[v].parent {
                counts[p] += counts[v];
            }
        }
        counts
    }

    /// Raw shared-ancestry matrix `1sᵀ + s1ᵀ − δ` over the leaves, where `s`
    /// holds root-to-leaf path lengths and `δ` leaf-to-leaf path lengths.
    ///
    /// Entry (i, j) equals twice the root distance of the leaves' most recent
    /// common ancestor; it is filled per ancestor in O(p²).
    pub fn shared_ancestry(&self) -> Matrix {
        let p = self.leaves.len();
        let depth = self.root_distances();
        let mut position = vec![usize::MAX; self.nodes.len()];
        for (i, &l) in self.leaves.iter().enumerate() {
            position[l] = i;
        }
        let mut q = Matrix::zeros(p, p);
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for &v in self.preorder().iter().rev() {
            let node = &self.nodes[v];
            let mut acc: Vec<usize> = Vec::new();
            if node.children.is_empty() {
                let i = position[v];
                q[(i, i)] = 2.0 * depth[v];
                acc.push(i);
            } else {
                let shared = 2.0 * depth[v];
                for &c in &node.children {
                    let group = std::mem::take(&mut below[c]);
                    for &i in &acc {
                        for &j in &group {
                            q[(i, j)] = shared;
                            q[(j, i)] = shared;
                        }
                    }
                    acc.extend(group);
                }
            }
            below[v] = acc;
        }
        q
    }

    /// Patristic distances between leaves.
    pub fn leaf_distances(&self) -> Matrix {
        let q = self.shared_ancestry();
        let p = self.leaves.len();
        Matrix::from_fn(p, p, |i, j| 0.5 * (q[(i, i)] + q[(j, j)]) - q[(i, j)])
    }

    /// Serialises to Newick, quoting labels where needed.
    pub fn to_newick(&self) -> String {
        fn label(out: &mut String, name: &str) {
            let plain = name.chars().all(|c| !c.is_whitespace() && !"()[]':;,".contains(c));
            if plain {
                out.push_str(name);
            } else {
                out.push('\'');
                out.push_str(&name.replace('\'', "''"));
                out.push('\'');
            }
        }
        fn walk(tree: &PhyloTree, v: usize, out: &mut String) {
            let node = &tree.nodes[v];
            if !node.children.is_empty() {
                out.push('(');
                for (k, &c) in node.children.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    walk(tree, c, out);
                }
                out.push(')');
            }
            if let Some(name) = &node.name {
                label(out, name);
            }
            if node.parent.is_some() {
                out.push(':');
                out.push_str(&format!("{}", node.branch_length));
            }
        }
        let mut out = String::new();
        walk(self, self.root, &mut out);
        out.push(';');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cherry_plus_one() -> PhyloTree {
        // ((A:1,B:1):1,C:2);
        PhyloTree::from_parents(vec![
            (None, 0.0, None),
            (Some(0), 1.0, None),
            (Some(1), 1.0, Some("A".into())),
            (Some(1), 1.0, Some("B".into())),
            (Some(0), 2.0, Some("C".into())),
        ])
        .unwrap()
    }

    #[test]
    fn shared_ancestry_hand_traced() {
        let q = cherry_plus_one().shared_ancestry();
        let expected = Matrix::from_rows(&[[4.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 4.0]]).unwrap();
        assert_eq!(q, expected);
    }

    #[test]
    fn distances_and_counts() {
        let t = cherry_plus_one();
        let d = t.leaf_distances();
        assert_eq!(d[(0, 1)], 2.0);
        assert_eq!(d[(0, 2)], 4.0);
        assert_eq!(t.descendant_counts(), vec![3, 2, 1, 1, 1]);
        assert_eq!(t.descendant_leaves(1).unwrap(), vec![0, 1]);
        assert_eq!(t.descendant_leaves(4).unwrap(), vec![2]);
        assert!(t.descendant_leaves(9).is_err());
    }

    #[test]
    fn rejects_bad_structures() {
        let two_roots = vec![(None, 0.0, None), (None, 0.0, Some("A".into()))];
        assert!(PhyloTree::from_parents(two_roots).is_err());
        let cycle = vec![
            (None, 0.0, None),
            (Some(2), 1.0, Some("A".into())),
            (Some(1), 1.0, Some("B".into())),
        ];
        assert!(PhyloTree::from_parents(cycle).is_err());
        let negative = vec![(None, 0.0, None), (Some(0), -1.0, Some("A".into()))];
        assert!(PhyloTree::from_parents(negative).is_err());
        let dup = vec![
            (None, 0.0, None),
            (Some(0), 1.0, Some("A".into())),
            (Some(0), 1.0, Some("A".into())),
        ];
        assert!(PhyloTree::from_parents(dup).is_err());
        let unnamed = vec![(None, 0.0, None), (Some(0), 1.0, None)];
        assert!(PhyloTree::from_parents(unnamed).is_err());
    }

    #[test]
    fn newick_output() {
        assert_eq!(cherry_plus_one().to_newick(), "((A:1,B:1):1,C:2);");
        let quoted = PhyloTree::from_parents(vec![
            (None, 0.0, None),
            (Some(0), 0.5, Some("a b".into())),
            (Some(0), 0.25, Some("o'k".into())),
        ])
        .unwrap();
        assert_eq!(quoted.to_newick(), "('a b':0.5,'o''k':0.25);");
    }
}
