//! Structured fine triangulation of the unit square, the coarse square-block
//! overlay and oversampled patches.
//!
//! Vertex `(i, j)` sits at `(i/n, j/n)` and has index `j * (n + 1) + i`.
//! Cell `(ci, cj)` is split along its lower-left to upper-right diagonal into
//! triangles `2 * (cj * n + ci)` (below the diagonal) and `2 * (cj * n + ci) + 1`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FineMesh {
    pub n: usize,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_vertex_flags: Vec<bool>,
    pub h: f64,
}

impl FineMesh {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!(
                "fine mesh needs at least 2 cells per side, got {n}"
            )));
        }
        let np = n + 1;
        let mut vertices = Vec::with_capacity(np * np);
        let mut boundary_vertex_flags = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
                boundary_vertex_flags.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for cj in 0..n {
            for ci in 0..n {
                let v00 = cj * np + ci;
                let v10 = v00 + 1;
                let v01 = v00 + np;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Ok(Self {
            n,
            vertices,
            triangles,
            boundary_vertex_flags,
            h: std::f64::consts::SQRT_2 / n as f64,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    #[inline]
    pub fn vertex_ij(&self, v: usize) -> (usize, usize) {
        (v % (self.n + 1), v / (self.n + 1))
    }

    #[inline]
    pub fn cell_of_triangle(&self, t: usize) -> (usize, usize) {
        let c = t / 2;
        (c % self.n, c / self.n)
    }

    /// Signed area; positive for every triangle of this mesh.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Gradients of the three barycentric coordinates on triangle `t`, and its area.
    pub fn barycentric_gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let tri = self.triangles[t];
        let p = [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ];
        let area = self.signed_area(t);
        let inv = 1.0 / (2.0 * area);
        let mut g = [[0.0; 2]; 3];
        for k in 0..3 {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            g[k] = [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv];
        }
        (g, area)
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices())
            .filter(|&v| !self.boundary_vertex_flags[v])
            .collect()
    }
}

/// Inclusive rectangle of coarse block coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRange {
    pub bi0: usize,
    pub bi1: usize,
    pub bj0: usize,
    pub bj1: usize,
}

impl BlockRange {
    pub fn contains(&self, bi: usize, bj: usize) -> bool {
        (self.bi0..=self.bi1).contains(&bi) && (self.bj0..=self.bj1).contains(&bj)
    }
}

#[derive(Debug, Clone)]
pub struct CoarsePartition {
    /// Coarse blocks per side.
    pub coarse_n: usize,
    pub fine_n: usize,
    /// Fine cells per block side.
    pub cells_per_block: usize,
    pub block_of_triangle: Vec<usize>,
    /// Coarse mesh size, the block diameter.
    pub h_coarse: f64,
    /// Coarse node indices `J * (N + 1) + I` with `0 < I, J < N`.
    pub interior_coarse_nodes: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
}

impl CoarsePartition {
    pub fn new(mesh: &FineMesh, coarse_n: usize) -> Result<Self> {
        if coarse_n == 0 || mesh.n % coarse_n != 0 {
            return Err(Error::invalid(format!(
                "coarse blocks per side ({coarse_n}) must divide fine cells per side ({})",
                mesh.n
            )));
        }
        let cpb = mesh.n / coarse_n;
        let mut blocks = vec![Vec::with_capacity(2 * cpb * cpb); coarse_n * coarse_n];
        let block_of_triangle: Vec<usize> = (0..mesh.num_triangles())
            .map(|t| {
                let (ci, cj) = mesh.cell_of_triangle(t);
                let b = (cj / cpb) * coarse_n + ci / cpb;
                blocks[b].push(t);
                b
            })
            .collect();
        let interior_coarse_nodes = (1..coarse_n)
            .flat_map(|jj| (1..coarse_n).map(move |ii| jj * (coarse_n + 1) + ii))
            .collect();
        Ok(Self {
            coarse_n,
            fine_n: mesh.n,
            cells_per_block: cpb,
            block_of_triangle,
            h_coarse: std::f64::consts::SQRT_2 / coarse_n as f64,
            interior_coarse_nodes,
            blocks,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.coarse_n * self.coarse_n
    }

    pub fn num_coarse_nodes(&self) -> usize {
        (self.coarse_n + 1) * (self.coarse_n + 1)
    }

    #[inline]
    pub fn block_index(&self, bi: usize, bj: usize) -> usize {
        bj * self.coarse_n + bi
    }

    #[inline]
    pub fn block_ij(&self, b: usize) -> (usize, usize) {
        (b % self.coarse_n, b / self.coarse_n)
    }

    pub fn coarse_node_coord(&self, node: usize) -> [f64; 2] {
        let np = self.coarse_n + 1;
        [
            (node % np) as f64 / self.coarse_n as f64,
            (node / np) as f64 / self.coarse_n as f64,
        ]
    }

    /// Fine vertices of the closed block, row-major from the lower-left corner.
    pub fn block_vertices(&self, b: usize) -> Vec<usize> {
        let (bi, bj) = self.block_ij(b);
        self.vertices_in_range(BlockRange {
            bi0: bi,
            bi1: bi,
            bj0: bj,
            bj1: bj,
        })
    }

    fn vertex_span(&self, range: BlockRange) -> (usize, usize, usize, usize) {
        let c = self.cells_per_block;
        (range.bi0 * c, (range.bi1 + 1) * c, range.bj0 * c, (range.bj1 + 1) * c)
    }

    fn vertices_in_range(&self, range: BlockRange) -> Vec<usize> {
        let (i0, i1, j0, j1) = self.vertex_span(range);
        let np = self.fine_n + 1;
        (j0..=j1)
            .flat_map(|j| (i0..=i1).map(move |i| j * np + i))
            .collect()
    }

    pub fn oversample(&self, center_block: usize, layers: usize) -> Result<OversampledPatch> {
        if center_block >= self.num_blocks() {
            return Err(Error::invalid(format!(
                "block index {center_block} out of range ({} blocks)",
                self.num_blocks()
            )));
        }
        let (bi, bj) = self.block_ij(center_block);
        let last = self.coarse_n - 1;
        let range = BlockRange {
            bi0: bi.saturating_sub(layers),
            bi1: (bi + layers).min(last),
            bj0: bj.saturating_sub(layers),
            bj1: (bj + layers).min(last),
        };
        let block_set = (range.bj0..=range.bj1)
            .flat_map(|j| (range.bi0..=range.bi1).map(move |i| j * self.coarse_n + i))
            .collect();
        // Interior of the patch: strictly inside its outer rectangle. The patch
        // boundary includes any part of the domain boundary it touches.
        let (i0, i1, j0, j1) = self.vertex_span(range);
        let np = self.fine_n + 1;
        let interior_vertices = (j0 + 1..j1)
            .flat_map(|j| (i0 + 1..i1).map(move |i| j * np + i))
            .collect();
        Ok(OversampledPatch {
            center_block,
            layers,
            block_set,
            range,
            interior_vertices,
        })
    }
}

/// `K_i` enlarged by `layers` rings of coarse blocks, including corner neighbors.
#[derive(Debug, Clone)]
pub struct OversampledPatch {
    pub center_block: usize,
    pub layers: usize,
    pub block_set: Vec<usize>,
    pub range: BlockRange,
    /// Fine vertices strictly inside the patch; all patch functions vanish elsewhere.
    pub interior_vertices: Vec<usize>,
}

impl OversampledPatch {
    pub fn displacement_dofs(&self) -> Vec<usize> {
        self.interior_vertices
            .iter()
            .flat_map(|&v| [2 * v, 2 * v + 1])
            .collect()
    }

    pub fn pressure_dofs(&self) -> Vec<usize> {
        self.interior_vertices.clone()
    }

    pub fn contains_block(&self, part: &CoarsePartition, b: usize) -> bool {
        let (bi, bj) = part.block_ij(b);
        self.range.contains(bi, bj)
    }
}
