//! Partition of unity, spectral weights, per-block generalized eigenproblems
//! and the projections onto the resulting auxiliary spaces.
//!
//! Each coarse block `K_i` carries its own local DOF numbering: the fine
//! vertices of the closed block that are not on the domain boundary, in
//! ascending global order. Auxiliary functions live in that broken
//! (block-by-block) representation; two blocks sharing an edge each see
//! their own copy of the interface values.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatRef, Par, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{elasticity_element, mass_element, stiffness_element};
use crate::linalg::{self, SpMat};
use crate::medium::Medium;
use crate::mesh::{CoarsePartition, FineMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Displacement,
    Pressure,
}

impl Family {
    pub fn tag(self) -> char {
        match self {
            Family::Displacement => 'u',
            Family::Pressure => 'p',
        }
    }

    /// DOFs per fine vertex.
    pub fn components(self) -> usize {
        match self {
            Family::Displacement => 2,
            Family::Pressure => 1,
        }
    }
}

/// Coarse bilinear hats interpolated onto the fine P1 space.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub coarse_n: usize,
    /// Per coarse node `J * (N + 1) + I`: nonzero nodal values `(fine vertex, value)`.
    pub chi: Vec<Vec<(usize, f64)>>,
    /// Per fine triangle: gradients of the hats of the four corners of its block.
    pub grad_chi: Vec<[(usize, [f64; 2]); 4]>,
}

/// Hat of coarse node `(ni, nj)` at fine vertex `(i, j)`, from integer offsets.
fn hat_value(cpb: usize, ni: usize, nj: usize, i: usize, j: usize) -> f64 {
    let c = cpb as f64;
    let fx = (1.0 - (i as f64 - (ni * cpb) as f64).abs() / c).max(0.0);
    let fy = (1.0 - (j as f64 - (nj * cpb) as f64).abs() / c).max(0.0);
    fx * fy
}

impl PartitionOfUnity {
    pub fn new(mesh: &FineMesh, part: &CoarsePartition) -> Self {
        let nc = part.coarse_n;
        let cpb = part.cells_per_block;
        let np = nc + 1;
        let mut chi = Vec::with_capacity(np * np);
        for nj in 0..np {
            for ni in 0..np {
                let i0 = (ni * cpb).saturating_sub(cpb);
                let i1 = (ni * cpb + cpb).min(mesh.n);
                let j0 = (nj * cpb).saturating_sub(cpb);
                let j1 = (nj * cpb + cpb).min(mesh.n);
                let mut vals = Vec::new();
                for j in j0..=j1 {
                    for i in i0..=i1 {
                        let v = hat_value(cpb, ni, nj, i, j);
                        if v != 0.0 {
                            vals.push((mesh.vertex_index(i, j), v));
                        }
                    }
                }
                chi.push(vals);
            }
        }
        let grad_chi = (0..mesh.num_triangles())
            .map(|t| {
                let (bi, bj) = part.block_ij(part.block_of_triangle[t]);
                let (g, _) = mesh.barycentric_gradients(t);
                let tri = mesh.triangles[t];
                let corners = [(bi, bj), (bi + 1, bj), (bi, bj + 1), (bi + 1, bj + 1)];
                corners.map(|(ni, nj)| {
                    let mut grad = [0.0; 2];
                    for k in 0..3 {
                        let (i, j) = mesh.vertex_ij(tri[k]);
                        let v = hat_value(cpb, ni, nj, i, j);
                        grad[0] += v * g[k][0];
                        grad[1] += v * g[k][1];
                    }
                    (nj * np + ni, grad)
                })
            })
            .collect();
        Self {
            coarse_n: nc,
            chi,
            grad_chi,
        }
    }

    /// `Σ_i |∇χ_i|²` on triangle `t`, over every coarse node.
    pub fn gradient_energy(&self, t: usize) -> f64 {
        self.grad_chi[t]
            .iter()
            .map(|(_, g)| g[0] * g[0] + g[1] * g[1])
            .sum()
    }
}

/// Per-triangle spectral weights `σ̃ = (λ + 2μ) Σ|∇χ|²` and `κ̃ = (κ/ν) Σ|∇χ|²`.
#[derive(Debug, Clone)]
pub struct WeightFields {
    pub sigma_tilde: Vec<f64>,
    pub kappa_tilde: Vec<f64>,
}

impl WeightFields {
    pub fn new(pou: &PartitionOfUnity, medium: &Medium) -> Self {
        let nt = pou.grad_chi.len();
        let (mut sigma_tilde, mut kappa_tilde) = (Vec::with_capacity(nt), Vec::with_capacity(nt));
        for t in 0..nt {
            let s = pou.gradient_energy(t);
            sigma_tilde.push((medium.lambda[t] + 2.0 * medium.mu[t]) * s);
            kappa_tilde.push(medium.kappa[t] / medium.viscosity * s);
        }
        Self {
            sigma_tilde,
            kappa_tilde,
        }
    }
}

/// One eigen family on one block: ascending eigenvalues, s-orthonormal vectors
/// (columns, in local numbering) and the local weighted mass matrix.
#[derive(Debug, Clone)]
pub struct EigenFamily {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat<f64>,
    /// Local `s_i` matrix.
    pub weight: SpMat,
    /// `weight * eigenvectors`, so that `s_i(w, v_j) = w · s_vectors[:, j]`.
    pub s_vectors: Mat<f64>,
}

impl EigenFamily {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

#[derive(Debug, Clone)]
pub struct AuxiliaryBlockSpace {
    pub block: usize,
    /// Local vertex numbering: global fine vertex ids.
    pub vertices: Vec<usize>,
    pub displacement: EigenFamily,
    pub pressure: EigenFamily,
}

impl AuxiliaryBlockSpace {
    pub fn family(&self, f: Family) -> &EigenFamily {
        match f {
            Family::Displacement => &self.displacement,
            Family::Pressure => &self.pressure,
        }
    }

    /// Global DOF index of each local DOF of `family`.
    pub fn global_dofs(&self, f: Family) -> Vec<usize> {
        match f {
            Family::Displacement => self.vertices.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect(),
            Family::Pressure => self.vertices.clone(),
        }
    }
}

/// Dense local block matrices `(a_i, s¹_i)` and `(b_i, s²_i)`.
pub struct BlockMatrices {
    pub vertices: Vec<usize>,
    pub a: Mat<f64>,
    pub s_u: Mat<f64>,
    pub b: Mat<f64>,
    pub s_p: Mat<f64>,
}

impl BlockMatrices {
    pub fn assemble(
        mesh: &FineMesh,
        medium: &Medium,
        part: &CoarsePartition,
        weights: &WeightFields,
        block: usize,
    ) -> Self {
        let vertices: Vec<usize> = part
            .block_vertices(block)
            .into_iter()
            .filter(|&v| !mesh.boundary_vertex_flags[v])
            .collect();
        let nl = vertices.len();
        let local = |v: usize| vertices.binary_search(&v).ok();
        let mut a = Mat::zeros(2 * nl, 2 * nl);
        let mut s_u = Mat::zeros(2 * nl, 2 * nl);
        let mut b = Mat::zeros(nl, nl);
        let mut s_p = Mat::zeros(nl, nl);
        for &t in &part.blocks[block] {
            let (g, area) = mesh.barycentric_gradients(t);
            let ke = elasticity_element(&g, area, medium.mu[t], medium.lambda[t]);
            let kb = stiffness_element(&g, area, medium.kappa[t] / medium.viscosity);
            let ms = mass_element(area, weights.sigma_tilde[t]);
            let mk = mass_element(area, weights.kappa_tilde[t]);
            let loc = mesh.triangles[t].map(local);
            for r in 0..3 {
                let Some(lr) = loc[r] else { continue };
                for c in 0..3 {
                    let Some(lc) = loc[c] else { continue };
                    b[(lr, lc)] += kb[r][c];
                    s_p[(lr, lc)] += mk[r][c];
                    for dr in 0..2 {
                        s_u[(2 * lr + dr, 2 * lc + dr)] += ms[r][c];
                        for dc in 0..2 {
                            a[(2 * lr + dr, 2 * lc + dc)] += ke[2 * r + dr][2 * c + dc];
                        }
                    }
                }
            }
        }
        Self {
            vertices,
            a,
            s_u,
            b,
            s_p,
        }
    }
}

/// All eigenpairs of `K x = λ S x` for symmetric `K` and SPD `S`, ascending,
/// with `S`-orthonormal eigenvectors.
pub fn generalized_symmetric_eigen(k: MatRef<'_, f64>, s: MatRef<'_, f64>) -> Option<(Vec<f64>, Mat<f64>)> {
    let llt = s.llt(Side::Lower).ok()?;
    let l = llt.L();
    // C = L⁻¹ K L⁻ᵀ
    let mut y = k.to_owned();
    solve_lower_triangular_in_place(l, y.as_mut(), Par::Seq);
    let mut c = y.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let n = c.nrows();
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let eig = c.self_adjoint_eigen(Side::Lower).ok()?;
    let vals: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();
    let mut vecs = eig.U().to_owned();
    solve_upper_triangular_in_place(l.transpose(), vecs.as_mut(), Par::Seq);
    Some((vals, vecs))
}

/// Smooth probe functions in block-local coordinates, used to pick a
/// canonical basis inside clusters of (numerically) repeated eigenvalues.
fn probes(coords: &[[f64; 2]], family: Family) -> Vec<Vec<f64>> {
    let mut monomials = Vec::new();
    for deg in 0..=5usize {
        for py in 0..=deg {
            let px = deg - py;
            monomials.push(
                coords
                    .iter()
                    .map(|c| c[0].powi(px as i32) * c[1].powi(py as i32))
                    .collect::<Vec<f64>>(),
            );
        }
    }
    match family {
        Family::Pressure => monomials,
        Family::Displacement => {
            let nl = coords.len();
            let vec_of = |fx: &dyn Fn(usize) -> f64, fy: &dyn Fn(usize) -> f64| {
                (0..2 * nl)
                    .map(|k| if k % 2 == 0 { fx(k / 2) } else { fy(k / 2) })
                    .collect::<Vec<f64>>()
            };
            let mut out = vec![
                vec_of(&|_| 1.0, &|_| 0.0),
                vec_of(&|_| 0.0, &|_| 1.0),
                vec_of(&|v| -coords[v][1], &|v| coords[v][0]),
            ];
            for m in monomials.iter().skip(1) {
                out.push(vec_of(&|v| m[v], &|_| 0.0));
                out.push(vec_of(&|_| 0.0, &|v| m[v]));
            }
            out
        }
    }
}

/// Replace the eigenvectors of every cluster of repeated eigenvalues by the
/// S-orthonormal basis obtained from projecting the probes, and fix the sign
/// of isolated eigenvectors (first significant entry positive).
fn canonicalize(vals: &[f64], scale: f64, vecs: &mut Mat<f64>, s: MatRef<'_, f64>, probes: &[Vec<f64>]) {
    let n = vals.len();
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-12 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && same(vals[end - 1], vals[end]) {
            end += 1;
        }
        let k = end - start;
        if k == 1 {
            let col = vecs.col(start);
            let amax = (0..col.nrows()).fold(0.0f64, |m, r| m.max(col[r].abs()));
            let first = (0..col.nrows()).find(|&r| col[r].abs() > 1e-8 * amax);
            if let Some(r) = first {
                if col[r] < 0.0 {
                    for rr in 0..vecs.nrows() {
                        vecs[(rr, start)] = -vecs[(rr, start)];
                    }
                }
            }
        } else {
            let x = vecs.subcols(start, k).to_owned();
            let sx = s * &x;
            let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
            for p in probes {
                if chosen.len() == k {
                    break;
                }
                // coefficients of the S-projection of p onto span(x)
                let mut c: Vec<f64> = (0..k)
                    .map(|j| (0..x.nrows()).map(|r| sx[(r, j)] * p[r]).sum())
                    .collect();
                let before = linalg::norm2(&c);
                for q in &chosen {
                    let d = linalg::dot(&c, q);
                    for (ci, qi) in c.iter_mut().zip(q) {
                        *ci -= d * qi;
                    }
                }
                let after = linalg::norm2(&c);
                if before > 0.0 && after > 1e-6 * before.max(1e-300) && after > 1e-10 {
                    chosen.push(c.iter().map(|v| v / after).collect());
                }
            }
            // Fall back to the raw vectors if the probes do not span the cluster.
            for e in 0..k {
                if chosen.len() == k {
                    break;
                }
                let mut c = vec![0.0; k];
                c[e] = 1.0;
                for q in &chosen {
                    let d = linalg::dot(&c, q);
                    for (ci, qi) in c.iter_mut().zip(q) {
                        *ci -= d * qi;
                    }
                }
                let nrm = linalg::norm2(&c);
                if nrm > 1e-8 {
                    chosen.push(c.iter().map(|v| v / nrm).collect());
                }
            }
            for (j, q) in chosen.iter().enumerate() {
                for r in 0..x.nrows() {
                    vecs[(r, start + j)] = (0..k).map(|e| x[(r, e)] * q[e]).sum();
                }
            }
        }
        start = end;
    }
}

fn to_sparse(m: &Mat<f64>) -> SpMat {
    let mut t = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                t.push((i, j, m[(i, j)]));
            }
        }
    }
    linalg::from_triplets(m.nrows(), m.ncols(), &t)
}

fn solve_family(
    block: usize,
    family: Family,
    k: &Mat<f64>,
    s: &Mat<f64>,
    coords: &[[f64; 2]],
    count: usize,
) -> Result<EigenFamily> {
    let dim = k.nrows();
    if count > dim {
        return Err(Error::invalid(format!(
            "block {block}: requested {count} {} eigenpairs but only {dim} local DOFs",
            family.tag()
        )));
    }
    let (vals, mut vecs) = generalized_symmetric_eigen(k.as_ref(), s.as_ref()).ok_or_else(|| {
        Error::DegenerateBlock {
            block,
            reason: format!("weighted mass for family {} is not positive definite", family.tag()),
        }
    })?;
    // Canonicalize through the cluster that contains the last retained pair.
    let mut keep = count;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if count > 0 {
        while keep < dim
            && (vals[keep] - vals[keep - 1]).abs()
                <= 1e-9 * vals[keep].abs().max(vals[keep - 1].abs()) + 1e-12 * scale
        {
            keep += 1;
        }
    }
    let mut head = vecs.subcols_mut(0, keep).to_owned();
    canonicalize(&vals[..keep], scale, &mut head, s.as_ref(), &probes(coords, family));
    vecs = head.subcols(0, count).to_owned();
    let s_vectors = s * &vecs;
    Ok(EigenFamily {
        eigenvalues: vals[..count].to_vec(),
        eigenvectors: vecs,
        weight: to_sparse(s),
        s_vectors,
    })
}

/// Local spectral problems on block `block`, keeping `j_u` displacement and
/// `j_p` pressure eigenpairs.
pub fn solve_block_eigen(
    mesh: &FineMesh,
    medium: &Medium,
    part: &CoarsePartition,
    weights: &WeightFields,
    block: usize,
    j_u: usize,
    j_p: usize,
) -> Result<AuxiliaryBlockSpace> {
    let mats = BlockMatrices::assemble(mesh, medium, part, weights, block);
    let (bi, bj) = part.block_ij(block);
    let cpb = part.cells_per_block as f64;
    let coords: Vec<[f64; 2]> = mats
        .vertices
        .iter()
        .map(|&v| {
            let (i, j) = mesh.vertex_ij(v);
            let li = (i - bi * part.cells_per_block) as f64;
            let lj = (j - bj * part.cells_per_block) as f64;
            [li / cpb - 0.5, lj / cpb - 0.5]
        })
        .collect();
    let displacement = solve_family(block, Family::Displacement, &mats.a, &mats.s_u, &coords, j_u)?;
    let pressure = solve_family(block, Family::Pressure, &mats.b, &mats.s_p, &coords, j_p)?;
    Ok(AuxiliaryBlockSpace {
        block,
        vertices: mats.vertices,
        displacement,
        pressure,
    })
}

/// Per-block auxiliary spaces for the whole coarse grid.
#[derive(Debug, Clone)]
pub struct AuxiliarySpaces {
    pub blocks: Vec<AuxiliaryBlockSpace>,
    pub j_u: usize,
    pub j_p: usize,
}

/// Function in broken form: one local vector per block.
pub type BrokenField = Vec<Vec<f64>>;

impl AuxiliarySpaces {
    pub fn build(
        mesh: &FineMesh,
        medium: &Medium,
        part: &CoarsePartition,
        weights: &WeightFields,
        j_u: usize,
        j_p: usize,
    ) -> Result<Self> {
        let blocks = (0..part.num_blocks())
            .into_par_iter()
            .map(|b| solve_block_eigen(mesh, medium, part, weights, b, j_u, j_p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, j_u, j_p })
    }

    /// Restrict a global fine vector to every block's local DOFs.
    pub fn restrict(&self, family: Family, w: &[f64]) -> BrokenField {
        self.blocks
            .iter()
            .map(|blk| linalg::gather(w, &blk.global_dofs(family)))
            .collect()
    }

    /// `s_i(w, v_j^i)` for every block `i` and retained `j`.
    pub fn coefficients(&self, family: Family, w: &BrokenField) -> Vec<Vec<f64>> {
        self.blocks
            .iter()
            .zip(w)
            .map(|(blk, wl)| {
                let sv = &blk.family(family).s_vectors;
                (0..sv.ncols())
                    .map(|j| (0..sv.nrows()).map(|r| wl[r] * sv[(r, j)]).sum())
                    .collect()
            })
            .collect()
    }

    /// `π(w) = Σ_i Σ_j s_i(w, v_j^i) v_j^i` in broken form.
    pub fn project_broken(&self, family: Family, w: &BrokenField) -> BrokenField {
        let coeffs = self.coefficients(family, w);
        self.blocks
            .iter()
            .zip(&coeffs)
            .map(|(blk, c)| {
                let v = &blk.family(family).eigenvectors;
                (0..v.nrows())
                    .map(|r| (0..v.ncols()).map(|j| c[j] * v[(r, j)]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn project(&self, family: Family, w: &[f64]) -> BrokenField {
        self.project_broken(family, &self.restrict(family, w))
    }

    /// `s(x, y) = Σ_i s_i(x, y)` for broken fields.
    pub fn s_inner(&self, family: Family, x: &BrokenField, y: &BrokenField) -> f64 {
        self.blocks
            .iter()
            .zip(x.iter().zip(y))
            .map(|(blk, (xl, yl))| linalg::bilinear(&blk.family(family).weight, xl, yl))
            .sum()
    }

    /// The auxiliary function `v_j^i` in broken form (zero on other blocks).
    pub fn auxiliary_function(&self, family: Family, block: usize, j: usize) -> BrokenField {
        self.blocks
            .iter()
            .map(|blk| {
                let v = &blk.family(family).eigenvectors;
                if blk.block == block {
                    (0..v.nrows()).map(|r| v[(r, j)]).collect()
                } else {
                    vec![0.0; v.nrows()]
                }
            })
            .collect()
    }
}
