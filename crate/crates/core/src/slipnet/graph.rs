//! Sensor graph topology and the normalized propagation matrix.

use super::SlipnetError;
use crate::tactile::{TactileFrame, ARRAY_SIDE, TAXEL_COUNT};
use nalgebra::{DMatrix, DVector};
use std::sync::{Arc, OnceLock};

/// Grid-of-arrays layout of the tactile skin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SensorLayout {
    pub arrays: usize,
    pub rows: usize,
    pub cols: usize,
    /// Link each taxel to its same-index taxel in every other array.
    pub inter_array: bool,
}

impl SensorLayout {
    /// The skin of this gripper: three 4x4 arrays with inter-array links.
    pub const STANDARD: SensorLayout = SensorLayout {
        arrays: 3,
        rows: ARRAY_SIDE,
        cols: ARRAY_SIDE,
        inter_array: true,
    };

    pub fn node_count(&self) -> usize {
        self.arrays * self.rows * self.cols
    }

    /// Directed edge list: 8-neighbour connectivity within each array plus
    /// optional same-index inter-array links.
    pub fn edges(&self) -> Vec<(u16, u16)> {
        let per_array = self.rows * self.cols;
        let mut edges = Vec::new();
        let node = |a: usize, r: usize, c: usize| (a * per_array + r * self.cols + c) as u16;
        for a in 0..self.arrays {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    for dr in -1i32..=1 {
                        for dc in -1i32..=1 {
                            if dr == 0 && dc == 0 {
                                continue;
                            }
                            let (nr, nc) = (r as i32 + dr, c as i32 + dc);
                            if nr >= 0
                                && nr < self.rows as i32
                                && nc >= 0
                                && nc < self.cols as i32
                            {
                                edges.push((node(a, r, c), node(a, nr as usize, nc as usize)));
                            }
                        }
                    }
                }
            }
        }
        if self.inter_array {
            for a in 0..self.arrays {
                for b in 0..self.arrays {
                    if a == b {
                        continue;
                    }
                    for i in 0..per_array {
                        edges.push(((a * per_array + i) as u16, (b * per_array + i) as u16));
                    }
                }
            }
        }
        edges
    }
}

/// The tactile graph: per-node features plus the shared topology.
#[derive(Clone, Debug)]
pub struct TactileGraph {
    /// `node_count x feature_dim`.
    pub node_features: DMatrix<f64>,
    pub edges: Arc<Vec<(u16, u16)>>,
    /// Symmetrically normalized adjacency with self-loops.
    pub a_hat: Arc<DMatrix<f64>>,
}

impl TactileGraph {
    pub fn node_count(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Graph for an arbitrary layout and feature matrix.
    pub fn with_layout(
        layout: SensorLayout,
        node_features: DMatrix<f64>,
    ) -> Result<Self, SlipnetError> {
        if node_features.nrows() != layout.node_count() {
            return Err(SlipnetError::BadLayout {
                expected: layout.node_count(),
                got: node_features.nrows(),
            });
        }
        let edges = layout.edges();
        let a_hat = normalize_adjacency(&edges, layout.node_count());
        Ok(TactileGraph {
            node_features,
            edges: Arc::new(edges),
            a_hat: Arc::new(a_hat),
        })
    }
}

fn standard_topology() -> &'static (Arc<Vec<(u16, u16)>>, Arc<DMatrix<f64>>) {
    static TOPOLOGY: OnceLock<(Arc<Vec<(u16, u16)>>, Arc<DMatrix<f64>>)> = OnceLock::new();
    TOPOLOGY.get_or_init(|| {
        let edges = SensorLayout::STANDARD.edges();
        let a_hat = normalize_adjacency(&edges, SensorLayout::STANDARD.node_count());
        (Arc::new(edges), Arc::new(a_hat))
    })
}

/// Graph for one tactile frame on the standard 3x(4x4) skin; node features
/// are the taxel forces.
pub fn build_graph(frame: &TactileFrame) -> TactileGraph {
    let features = DVector::from_iterator(TAXEL_COUNT, frame.taxels());
    let (edges, a_hat) = standard_topology().clone();
    TactileGraph {
        node_features: DMatrix::from_column_slice(TAXEL_COUNT, 1, features.as_slice()),
        edges,
        a_hat,
    }
}

/// Graph whose per-node features stack a window of frames (most recent
/// last); feature dimension equals the window length.
pub fn build_graph_window(frames: &[TactileFrame]) -> TactileGraph {
    let dim = frames.len().max(1);
    let mut features = DMatrix::zeros(TAXEL_COUNT, dim);
    for (j, frame) in frames.iter().enumerate() {
        for (i, v) in frame.taxels().enumerate() {
            features[(i, j)] = v;
        }
    }
    let (edges, a_hat) = standard_topology().clone();
    TactileGraph {
        node_features: features,
        edges,
        a_hat,
    }
}

/// Symmetric normalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}`
/// where `A` is the (symmetrized) adjacency of the edge list.
pub fn normalize_adjacency(edges: &[(u16, u16)], node_count: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(node_count, node_count);
    for &(s, d) in edges {
        a[(s as usize, d as usize)] = 1.0;
        a[(d as usize, s as usize)] = 1.0;
    }
    for i in 0..node_count {
        a[(i, i)] = 1.0;
    }
    let degrees: Vec<f64> = (0..node_count).map(|i| a.row(i).sum()).collect();
    for i in 0..node_count {
        for j in 0..node_count {
            if a[(i, j)] != 0.0 {
                a[(i, j)] /= (degrees[i] * degrees[j]).sqrt();
            }
        }
    }
    a
}
