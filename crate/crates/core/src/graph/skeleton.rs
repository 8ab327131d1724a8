use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Undirected, connected skeleton graph over body joints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct SkeletonGraph {
    n_joints: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    joint_names: Vec<String>,
}

/// On-disk layout: `{"n_joints", "root", "joint_names", "edges": [[i, j], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    n_joints: usize,
    root: usize,
    #[serde(default)]
    joint_names: Vec<String>,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<SkeletonFile> for SkeletonGraph {
    type Error = Error;

    fn try_from(f: SkeletonFile) -> Result<Self> {
        let edges = f.edges.into_iter().map(|[a, b]| (a, b)).collect();
        SkeletonGraph::new(f.n_joints, edges, f.root, f.joint_names)
    }
}

impl From<SkeletonGraph> for SkeletonFile {
    fn from(g: SkeletonGraph) -> Self {
        SkeletonFile {
            n_joints: g.n_joints,
            root: g.root,
            joint_names: g.joint_names,
            edges: g.edges.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

pub const H36M_JOINT_NAMES: [&str; 17] = [
    "Hip",
    "RHip",
    "RKnee",
    "RFoot",
    "LHip",
    "LKnee",
    "LFoot",
    "Spine",
    "Thorax",
    "Neck",
    "Head",
    "LShoulder",
    "LElbow",
    "LWrist",
    "RShoulder",
    "RElbow",
    "RWrist",
];

pub const H36M_EDGES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

impl SkeletonGraph {
    /// Validates and builds a skeleton graph.
    ///
    /// Rejects out-of-range indices, self-edges, duplicate edges (in either
    /// orientation), isolated joints and disconnected graphs. Empty
    /// `joint_names` are filled with `j0, j1, ...`.
    pub fn new(
        n_joints: usize,
        edges: Vec<(usize, usize)>,
        root: usize,
        mut joint_names: Vec<String>,
    ) -> Result<Self> {
        if n_joints < 2 {
            return Err(Error::DegenerateGraph(format!(
                "need at least 2 joints, got {n_joints}"
            )));
        }
        if root >= n_joints {
            return Err(Error::DegenerateGraph(format!(
                "root {root} out of range for {n_joints} joints"
            )));
        }
        if joint_names.is_empty() {
            joint_names = (0..n_joints).map(|i| format!("j{i}")).collect();
        } else if joint_names.len() != n_joints {
            return Err(Error::DegenerateGraph(format!(
                "{} joint names for {n_joints} joints",
                joint_names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n_joints || b >= n_joints {
                return Err(Error::DegenerateGraph(format!(
                    "edge ({a}, {b}) out of range"
                )));
            }
            if a == b {
                return Err(Error::DegenerateGraph(format!("self-edge at joint {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::DegenerateGraph(format!("duplicate edge ({a}, {b})")));
            }
        }
        let g = Self {
            n_joints,
            edges,
            root,
            joint_names,
        };
        if let Some(j) = g.degrees().iter().position(|&d| d == 0) {
            return Err(Error::DegenerateGraph(format!("joint {j} is isolated")));
        }
        if g.bfs_order().len() != n_joints {
            return Err(Error::DegenerateGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    /// 17-joint Human3.6M layout rooted at the pelvis.
    pub fn h36m() -> Self {
        Self::new(
            17,
            H36M_EDGES.to_vec(),
            0,
            H36M_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in skeleton is valid")
    }

    /// Random connected graph: a random spanning tree plus each remaining
    /// pair with probability `extra_edge_prob`.
    pub fn random_connected<R: Rng + ?Sized>(
        n: usize,
        extra_edge_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut edges = Vec::new();
        let mut present = BTreeSet::new();
        for k in 1..n {
            let parent = order[rng.gen_range(0..k)];
            let e = (parent.min(order[k]), parent.max(order[k]));
            present.insert(e);
            edges.push(e);
        }
        for a in 0..n {
            for b in a + 1..n {
                if !present.contains(&(a, b)) && rng.gen::<f64>() < extra_edge_prob {
                    edges.push((a, b));
                }
            }
        }
        Self::new(n, edges, order[0], Vec::new())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_joints];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_joints];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb
    }

    /// Joints in breadth-first order from the root.
    pub fn bfs_order(&self) -> Vec<usize> {
        let nb = self.neighbors();
        let mut seen = vec![false; self.n_joints];
        let mut order = Vec::with_capacity(self.n_joints);
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(j) = queue.pop_front() {
            order.push(j);
            for &k in &nb[j] {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        order
    }

    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.n_joints
    }

    /// Parent of every joint in the tree rooted at `root` (`None` for the root).
    pub fn parents(&self) -> Result<Vec<Option<usize>>> {
        if !self.is_tree() {
            return Err(Error::Domain(format!(
                "skeleton with {} joints and {} edges is not a tree",
                self.n_joints,
                self.edges.len()
            )));
        }
        let nb = self.neighbors();
        let mut parent = vec![None; self.n_joints];
        for j in self.bfs_order() {
            for &k in &nb[j] {
                if k != self.root && parent[k].is_none() && parent[j] != Some(k) {
                    parent[k] = Some(j);
                }
            }
        }
        Ok(parent)
    }

    /// Binary adjacency matrix.
    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n_joints, self.n_joints);
        for &(i, j) in &self.edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        a
    }
}

/// `D^{-1/2} A D^{-1/2}` for a square adjacency matrix.
///
/// Fails with [`Error::DegenerateGraph`] when a node has zero degree.
pub fn normalize_adjacency_matrix(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::shape("normalize_adjacency", a.shape(), a.shape()));
    }
    let n = a.rows();
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let d: f64 = a.row(i).iter().sum();
        if d <= 0.0 {
            return Err(Error::DegenerateGraph(format!("node {i} has degree 0")));
        }
        inv_sqrt.push(1.0 / d.sqrt());
    }
    Ok(Matrix::from_fn(n, n, |i, j| {
        inv_sqrt[i] * a.get(i, j) * inv_sqrt[j]
    }))
}

/// Normalized adjacency of a skeleton.
pub fn normalize_adjacency(g: &SkeletonGraph) -> Result<Matrix> {
    normalize_adjacency_matrix(&g.adjacency())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h36m_is_a_tree() {
        let g = SkeletonGraph::h36m();
        assert_eq!(g.n_joints(), 17);
        assert_eq!(g.edges().len(), 16);
        assert!(g.is_tree());
        let parents = g.parents().unwrap();
        assert_eq!(parents[0], None);
        assert_eq!(parents[3], Some(2));
        assert_eq!(parents[11], Some(8));
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert!(SkeletonGraph::new(3, vec![(0, 0), (1, 2)], 0, vec![]).is_err());
        assert!(SkeletonGraph::new(3, vec![(0, 1), (1, 0), (1, 2)], 0, vec![]).is_err());
        assert!(SkeletonGraph::new(3, vec![(0, 3)], 0, vec![]).is_err());
        assert!(matches!(
            SkeletonGraph::new(3, vec![(0, 1)], 0, vec![]),
            Err(Error::DegenerateGraph(_))
        ));
        assert!(SkeletonGraph::new(4, vec![(0, 1), (2, 3)], 0, vec![]).is_err());
    }

    #[test]
    fn isolated_node_is_degenerate() {
        let a = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            normalize_adjacency_matrix(&a),
            Err(Error::DegenerateGraph(_))
        ));
    }

    #[test]
    fn single_edge_normalizes_to_swap() {
        let g = SkeletonGraph::new(2, vec![(0, 1)], 0, vec![]).unwrap();
        let a = normalize_adjacency(&g).unwrap();
        assert_eq!(a, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let g = SkeletonGraph::h36m();
        let back = SkeletonGraph::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, back);
        assert!(
            SkeletonGraph::from_json_str(r#"{"n_joints":2,"root":0,"edges":[[0,0]]}"#).is_err()
        );
    }

    #[test]
    fn non_tree_has_no_parents() {
        let g = SkeletonGraph::new(3, vec![(0, 1), (1, 2), (0, 2)], 0, vec![]).unwrap();
        assert!(g.parents().is_err());
    }
}
