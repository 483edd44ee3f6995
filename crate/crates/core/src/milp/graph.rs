use crate::milp::MilpInstance;
use crate::sparse::CsrMatrix;

/// Variable/constraint bipartite graph with weighted adjacency
/// `[[I, Aᵀ], [A, I]]`; variable nodes come first.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    num_vars: usize,
    num_rows: usize,
    adjacency: CsrMatrix,
}

impl BipartiteGraph {
    pub fn build(instance: &MilpInstance) -> Self {
        let nv = instance.num_vars();
        let nc = instance.num_rows();
        let mut triplets = Vec::with_capacity(2 * instance.a().nnz() + nv + nc);
        for v in 0..nv + nc {
            triplets.push((v, v, 1.0));
        }
        for (i, j, a) in instance.a().triplets() {
            triplets.push((nv + i, j, a));
            triplets.push((j, nv + i, a));
        }
        let adjacency =
            CsrMatrix::from_triplets(nv + nc, nv + nc, triplets).expect("indices in range");
        Self {
            num_vars: nv,
            num_rows: nc,
            adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_vars + self.num_rows
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Number of variable/constraint edges (self-loops excluded).
    pub fn num_edges(&self) -> usize {
        (self.adjacency.nnz() - self.num_nodes()) / 2
    }

    /// `D^{-1/2} A_adj D^{-1/2}` with degrees from absolute weights. Every
    /// node has its self-loop, so all degrees are at least one.
    pub fn normalized_adjacency(&self) -> CsrMatrix {
        let n = self.num_nodes();
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|v| {
                let (_, vals) = self.adjacency.row(v);
                1.0 / vals.iter().map(|w| w.abs()).sum::<f64>().sqrt()
            })
            .collect();
        self.adjacency
            .map_entries(|i, j, w| inv_sqrt_deg[i] * w * inv_sqrt_deg[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_graph_layout() {
        let inst =
            MilpInstance::from_dense(vec![1.0, 1.0], &[vec![1.0, -1.0]], vec![0.0], 2).unwrap();
        let g = BipartiteGraph::build(&inst);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(
            g.adjacency().to_dense(),
            vec![
                vec![1.0, 0.0, 1.0],
                vec![0.0, 1.0, -1.0],
                vec![1.0, -1.0, 1.0]
            ]
        );
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let inst =
            MilpInstance::from_dense(vec![1.0, 1.0], &[vec![0.0, 0.0]], vec![1.0], 2).unwrap();
        let g = BipartiteGraph::build(&inst);
        assert_eq!(g.adjacency(), &CsrMatrix::identity(3));
        assert_eq!(g.normalized_adjacency(), CsrMatrix::identity(3));
    }

    #[test]
    fn nonzero_count_is_twice_a_plus_nodes() {
        let inst = MilpInstance::from_dense(
            vec![1.0; 4],
            &[
                vec![1.0, 0.0, 2.0, 0.0],
                vec![0.0, 3.0, 0.0, -1.0],
                vec![1.0, 1.0, 1.0, 0.0],
            ],
            vec![1.0; 3],
            4,
        )
        .unwrap();
        let g = BipartiteGraph::build(&inst);
        assert_eq!(g.adjacency().nnz(), 2 * 7 + 4 + 3);
    }

    #[test]
    fn normalized_adjacency_uses_absolute_degrees() {
        let inst =
            MilpInstance::from_dense(vec![1.0, 1.0], &[vec![3.0, -1.0]], vec![0.0], 2).unwrap();
        let g = BipartiteGraph::build(&inst);
        let n = g.normalized_adjacency();
        // degrees: var0 = 4, var1 = 2, row = 5
        assert!((n.get(0, 2) - 3.0 / (4f64.sqrt() * 5f64.sqrt())).abs() < 1e-15);
        assert!((n.get(1, 2) + 1.0 / (2f64.sqrt() * 5f64.sqrt())).abs() < 1e-15);
        assert!((n.get(2, 2) - 0.2).abs() < 1e-15);
    }
}
