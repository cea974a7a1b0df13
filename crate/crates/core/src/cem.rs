//! Constraint energy minimizing basis functions on oversampled patches and
//! the multiscale spaces they span.
//!
//! For block `i`, eigenfunction `j` and patch `K_{i,m}` the displacement basis
//! function solves
//!
//! ```text
//! a(ψ, v) + s¹(π¹ψ, π¹v) = s¹(v_j^i, π¹v)   for all v in V₀(K_{i,m})
//! ```
//!
//! and the pressure basis the analogue with `b` and `s²`. Because the
//! auxiliary vectors are `s`-orthonormal, the penalty equals `vᵀ W Wᵀ ψ` with
//! `W` collecting the columns `S_k v_l^k` of every block `k` in the patch, and
//! the right-hand side is the column of `W` belonging to `(i, j)`.

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{OperatorSet, SOLVER_TOLERANCE};
use crate::linalg::{self, SparseSolver, SpMat};
use crate::mesh::{CoarsePartition, OversampledPatch};
use crate::spectral::{AuxiliarySpaces, Family};

#[derive(Debug, Clone)]
pub struct CemBasisFunction {
    pub block: usize,
    pub index: usize,
    pub layers: usize,
    pub family: Family,
    /// Global fine DOFs of the patch interior, ascending.
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl CemBasisFunction {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        linalg::scatter(len, &self.dofs, &self.values)
    }
}

/// Factorized patch system for one (patch, family); reused for every `j`.
pub struct PatchSolver<'a> {
    aux: &'a AuxiliarySpaces,
    patch: OversampledPatch,
    family: Family,
    dofs: Vec<usize>,
    map: Vec<usize>,
    solver: SparseSolver,
}

impl<'a> PatchSolver<'a> {
    pub fn new(
        ops: &OperatorSet,
        aux: &'a AuxiliarySpaces,
        patch: OversampledPatch,
        family: Family,
    ) -> Result<Self> {
        let (k, dofs, len) = match family {
            Family::Displacement => (&ops.a, patch.displacement_dofs(), ops.num_u()),
            Family::Pressure => (&ops.b, patch.pressure_dofs(), ops.num_p()),
        };
        let map = linalg::index_map(len, &dofs);
        let mut t: Vec<(usize, usize, f64)> = linalg::entries(&linalg::submatrix(k, &dofs, &dofs)).collect();
        for &b in &patch.block_set {
            let blk = &aux.blocks[b];
            let sv = &blk.family(family).s_vectors;
            let local: Vec<(usize, usize)> = blk
                .global_dofs(family)
                .iter()
                .enumerate()
                .filter_map(|(l, &g)| (map[g] != usize::MAX).then_some((l, map[g])))
                .collect();
            for &(lr, pr) in &local {
                for &(lc, pc) in &local {
                    let v: f64 = (0..sv.ncols()).map(|q| sv[(lr, q)] * sv[(lc, q)]).sum();
                    if v != 0.0 {
                        t.push((pr, pc, v));
                    }
                }
            }
        }
        let n = dofs.len();
        let solver = SparseSolver::spd(linalg::from_triplets(n, n, &t), SOLVER_TOLERANCE, "CEM patch system")
            .map_err(|e| annotate(e, &patch, family))?;
        Ok(Self {
            aux,
            patch,
            family,
            dofs,
            map,
            solver,
        })
    }

    pub fn patch(&self) -> &OversampledPatch {
        &self.patch
    }

    /// Basis function for auxiliary vector `j` of the patch's center block.
    pub fn solve(&self, j: usize) -> Result<CemBasisFunction> {
        let i = self.patch.center_block;
        let blk = &self.aux.blocks[i];
        let fam = blk.family(self.family);
        if j >= fam.count() {
            return Err(Error::invalid(format!(
                "block {i} has {} auxiliary {} functions, requested index {j}",
                fam.count(),
                self.family.tag()
            )));
        }
        let mut rhs = vec![0.0; self.dofs.len()];
        for (l, &g) in blk.global_dofs(self.family).iter().enumerate() {
            let p = self.map[g];
            if p != usize::MAX {
                rhs[p] = fam.s_vectors[(l, j)];
            }
        }
        let values = self
            .solver
            .solve(&rhs)
            .map_err(|e| annotate(e, &self.patch, self.family))?;
        Ok(CemBasisFunction {
            block: i,
            index: j,
            layers: self.patch.layers,
            family: self.family,
            dofs: self.dofs.clone(),
            values,
        })
    }
}

fn annotate(e: Error, patch: &OversampledPatch, family: Family) -> Error {
    match e {
        Error::SolverFailure { context, residual } => Error::SolverFailure {
            context: format!(
                "{context} (block {}, m = {}, family {}, {} patch blocks)",
                patch.center_block,
                patch.layers,
                family.tag(),
                patch.block_set.len()
            ),
            residual,
        },
        other => other,
    }
}

pub fn solve_cem_basis(
    ops: &OperatorSet,
    aux: &AuxiliarySpaces,
    patch: &OversampledPatch,
    j: usize,
    family: Family,
) -> Result<CemBasisFunction> {
    PatchSolver::new(ops, aux, patch.clone(), family)?.solve(j)
}

/// Unlocalized basis function: the patch problem posed on the whole domain.
pub fn solve_global_basis(
    ops: &OperatorSet,
    aux: &AuxiliarySpaces,
    part: &CoarsePartition,
    i: usize,
    j: usize,
    family: Family,
) -> Result<Vec<f64>> {
    let patch = part.oversample(i, part.coarse_n)?;
    let len = match family {
        Family::Displacement => ops.num_u(),
        Family::Pressure => ops.num_p(),
    };
    Ok(solve_cem_basis(ops, aux, &patch, j, family)?.to_dense(len))
}

/// Sparse column of a prolongation matrix together with the bounding box
/// `[i0, i1, j0, j1]` of its support in fine vertex coordinates.
#[derive(Debug, Clone)]
pub struct BasisColumn {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub vertex_box: [usize; 4],
    /// Coarse block the column belongs to, if any.
    pub block: Option<usize>,
}

impl BasisColumn {
    fn new(indices: Vec<usize>, values: Vec<f64>, family: Family, fine_n: usize, block: Option<usize>) -> Self {
        let np = fine_n + 1;
        let mut bx = [usize::MAX, 0, usize::MAX, 0];
        for &g in &indices {
            let v = g / family.components();
            let (i, j) = (v % np, v / np);
            bx = [bx[0].min(i), bx[1].max(i), bx[2].min(j), bx[3].max(j)];
        }
        Self {
            indices,
            values,
            vertex_box: bx,
            block,
        }
    }

    /// Whether `self` and `other` may couple through a P1 stencil.
    fn may_couple(&self, other: &BasisColumn) -> bool {
        let (a, b) = (self.vertex_box, other.vertex_box);
        a[0] <= b[1] + 1 && b[0] <= a[1] + 1 && a[2] <= b[3] + 1 && b[2] <= a[3] + 1
    }
}

/// Multiscale displacement and pressure spaces given by sparse prolongation columns.
#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    pub columns_u: Vec<BasisColumn>,
    pub columns_p: Vec<BasisColumn>,
    pub num_fine_u: usize,
    pub num_fine_p: usize,
    pub layers: usize,
    pub j_u: usize,
    pub j_p: usize,
}

impl MultiscaleSpace {
    pub fn dim_u(&self) -> usize {
        self.columns_u.len()
    }

    pub fn dim_p(&self) -> usize {
        self.columns_p.len()
    }

    /// The full fine space: one unit column per free DOF.
    pub fn identity(ops: &OperatorSet) -> Self {
        let n = (ops.num_vertices as f64).sqrt().round() as usize - 1;
        let unit = |dofs: &[usize], fam| {
            dofs.iter()
                .map(|&d| BasisColumn::new(vec![d], vec![1.0], fam, n, None))
                .collect()
        };
        Self {
            columns_u: unit(&ops.free_u, Family::Displacement),
            columns_p: unit(&ops.free_p, Family::Pressure),
            num_fine_u: ops.num_u(),
            num_fine_p: ops.num_p(),
            layers: 0,
            j_u: 0,
            j_p: 0,
        }
    }

    fn columns(&self, family: Family) -> &[BasisColumn] {
        match family {
            Family::Displacement => &self.columns_u,
            Family::Pressure => &self.columns_p,
        }
    }

    /// `R c` as a fine DOF vector.
    pub fn prolongate(&self, family: Family, coeffs: &[f64]) -> Vec<f64> {
        let len = match family {
            Family::Displacement => self.num_fine_u,
            Family::Pressure => self.num_fine_p,
        };
        let mut out = vec![0.0; len];
        for (col, &c) in self.columns(family).iter().zip(coeffs) {
            for (&i, &v) in col.indices.iter().zip(&col.values) {
                out[i] += c * v;
            }
        }
        out
    }

    /// `Rᵀ x`.
    pub fn restrict(&self, family: Family, x: &[f64]) -> Vec<f64> {
        self.columns(family)
            .iter()
            .map(|col| col.indices.iter().zip(&col.values).map(|(&i, &v)| v * x[i]).sum())
            .collect()
    }

    /// `R_leftᵀ K R_right` as a sparse matrix.
    pub fn galerkin(&self, k: &SpMat, left: Family, right: Family) -> SpMat {
        let (lc, rc) = (self.columns(left), self.columns(right));
        let cp = k.symbolic().col_ptr();
        let ri = k.symbolic().row_idx();
        let val = k.val();
        let triplets: Vec<Vec<(usize, usize, f64)>> = rc
            .par_iter()
            .enumerate()
            .map_init(
                || vec![0.0; k.nrows()],
                |y, (r, col)| {
                    let mut touched = Vec::new();
                    for (&g, &v) in col.indices.iter().zip(&col.values) {
                        for p in cp[g]..cp[g + 1] {
                            y[ri[p]] += val[p] * v;
                            touched.push(ri[p]);
                        }
                    }
                    let out = lc
                        .iter()
                        .enumerate()
                        .filter(|(_, l)| l.may_couple(col))
                        .filter_map(|(l, lcol)| {
                            let s: f64 = lcol.indices.iter().zip(&lcol.values).map(|(&i, &v)| v * y[i]).sum();
                            (s != 0.0).then_some((l, r, s))
                        })
                        .collect();
                    for i in touched {
                        y[i] = 0.0;
                    }
                    out
                },
            )
            .collect();
        let t: Vec<_> = triplets.into_iter().flatten().collect();
        linalg::from_triplets(lc.len(), rc.len(), &t)
    }

    /// Fail with the blocks of the first dependent column if `R_fᵀ K R_f` is singular.
    pub fn check_gram(&self, k: &SpMat, family: Family) -> Result<()> {
        let g = self.galerkin(k, family, family);
        let cols = self.columns(family);
        if g.nrows() <= crate::ms_solver::DENSE_LIMIT {
            let dense = g.to_dense();
            if let Some(j) = linalg::cholesky_first_breakdown(dense.as_ref(), 1e-11) {
                return Err(Error::RankDeficient(cols[j].block.into_iter().collect()));
            }
            Ok(())
        } else {
            g.sp_cholesky(faer::Side::Lower)
                .map(|_| ())
                .map_err(|_| Error::RankDeficient(Vec::new()))
        }
    }
}

/// Localized CEM bases for every block with `m` oversampling layers.
/// Columns are ordered by block, then auxiliary index.
pub fn build_multiscale_space(
    ops: &OperatorSet,
    aux: &AuxiliarySpaces,
    part: &CoarsePartition,
    m: usize,
) -> Result<MultiscaleSpace> {
    let tasks: Vec<(usize, Family)> = (0..part.num_blocks())
        .flat_map(|b| [(b, Family::Displacement), (b, Family::Pressure)])
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(b, fam)| {
            let patch = part.oversample(b, m)?;
            let solver = PatchSolver::new(ops, aux, patch, fam)?;
            let count = aux.blocks[b].family(fam).count();
            (0..count).map(|j| solver.solve(j)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut columns_u = Vec::new();
    let mut columns_p = Vec::new();
    for ((_, fam), funcs) in tasks.iter().zip(results) {
        for f in funcs {
            let col = BasisColumn::new(f.dofs, f.values, *fam, part.fine_n, Some(f.block));
            match fam {
                Family::Displacement => columns_u.push(col),
                Family::Pressure => columns_p.push(col),
            }
        }
    }
    let space = MultiscaleSpace {
        columns_u,
        columns_p,
        num_fine_u: ops.num_u(),
        num_fine_p: ops.num_p(),
        layers: m,
        j_u: aux.j_u,
        j_p: aux.j_p,
    };
    space.check_gram(&ops.a, Family::Displacement)?;
    space.check_gram(&ops.b, Family::Pressure)?;
    log::debug!(
        "multiscale space: m = {m}, dim V = {}, dim Q = {}",
        space.dim_u(),
        space.dim_p()
    );
    Ok(space)
}

/// Dense copy of the basis functions of one block, for export.
pub fn block_basis(space: &MultiscaleSpace, family: Family, block: usize) -> Mat<f64> {
    let cols: Vec<&BasisColumn> = space
        .columns(family)
        .iter()
        .filter(|c| c.block == Some(block))
        .collect();
    let len = match family {
        Family::Displacement => space.num_fine_u,
        Family::Pressure => space.num_fine_p,
    };
    let mut m = Mat::zeros(len, cols.len());
    for (k, c) in cols.iter().enumerate() {
        for (&i, &v) in c.indices.iter().zip(&c.values) {
            m[(i, k)] = v;
        }
    }
    m
}
