use crate::error::{Error, Result};

/// Symmetric adjacency in compressed sparse row layout.
///
/// Row `u` lists `u`'s neighbours in ascending order, always including `u`
/// itself exactly once. Entry `e` in row `u` is the directed pair `u ← v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    sources: Vec<usize>,
}

impl Csr {
    /// Symmetrises, deduplicates and adds one self-loop per node.
    pub fn build(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = (0..n).map(|u| vec![u]).collect();
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut sources = Vec::new();
        offsets.push(0);
        for (u, mut row) in adj.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            sources.extend(std::iter::repeat_n(u, row.len()));
            targets.extend(row);
            offsets.push(targets.len());
        }
        Ok(Csr {
            offsets,
            targets,
            sources,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of directed entries, self-loops included.
    pub fn num_entries(&self) -> usize {
        self.targets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Neighbour `v` of each entry.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Owning row `u` of each entry.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub(crate) fn check_symmetric_with_self_loops(&self) -> Result<()> {
        for u in 0..self.num_nodes() {
            let row = self.neighbors(u);
            if row.iter().filter(|&&v| v == u).count() != 1 {
                return Err(Error::InvalidArgument(format!("node {u} lacks a unique self-loop")));
            }
            if let Some(&v) = row.iter().find(|&&v| !self.contains(v, u)) {
                return Err(Error::InvalidArgument(format!("edge {u}->{v} has no reverse")));
            }
        }
        Ok(())
    }
}
