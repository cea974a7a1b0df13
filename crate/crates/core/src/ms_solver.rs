//! Galerkin reduction onto a multiscale space and the reduced backward Euler scheme.

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::cem::MultiscaleSpace;
use crate::error::{Error, Result};
use crate::fem::{load_vector, OperatorSet, PoroState, Source, TimeGrid, SOLVER_TOLERANCE};
use crate::linalg::{self, SparseSolver, SpMat};
use crate::mesh::FineMesh;
use crate::spectral::Family;

/// Reduced systems up to this total dimension are factorized densely.
pub const DENSE_LIMIT: usize = 4000;

/// `A_ms = R_uᵀ A R_u`, `B_ms`, `C_ms` and `D_ms = R_pᵀ D R_u`.
#[derive(Debug, Clone)]
pub struct ReducedOperatorSet {
    pub a: SpMat,
    pub b: SpMat,
    pub c: SpMat,
    pub d: SpMat,
}

impl ReducedOperatorSet {
    pub fn dim_u(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim_p(&self) -> usize {
        self.b.nrows()
    }

    /// `a(u, u) + c(p, p)` in reduced coordinates.
    pub fn energy(&self, state: &ReducedState) -> f64 {
        linalg::quad_form(&self.a, &state.u) + linalg::quad_form(&self.c, &state.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

fn symmetrized(m: SpMat, label: &str) -> Result<SpMat> {
    let scale = linalg::entries(&m).fold(0.0f64, |s, (_, _, v)| s.max(v.abs()));
    let asym = linalg::max_asymmetry(&m);
    if asym > 1e-13 * scale.max(f64::MIN_POSITIVE) {
        log::warn!("{label}: asymmetry {asym:.2e} relative to {scale:.2e} before symmetrization");
    }
    let t: Vec<_> = linalg::entries(&m)
        .flat_map(|(r, c, v)| [(r, c, 0.5 * v), (c, r, 0.5 * v)])
        .collect();
    Ok(linalg::from_triplets(m.nrows(), m.ncols(), &t))
}

pub fn reduce_operators(ops: &OperatorSet, space: &MultiscaleSpace) -> Result<ReducedOperatorSet> {
    if space.num_fine_u != ops.num_u() || space.num_fine_p != ops.num_p() {
        return Err(Error::invalid(format!(
            "multiscale space built for {}/{} fine DOFs, operators have {}/{}",
            space.num_fine_u,
            space.num_fine_p,
            ops.num_u(),
            ops.num_p()
        )));
    }
    let (u, p) = (Family::Displacement, Family::Pressure);
    Ok(ReducedOperatorSet {
        a: symmetrized(space.galerkin(&ops.a, u, u), "A_ms")?,
        b: symmetrized(space.galerkin(&ops.b, p, p), "B_ms")?,
        c: symmetrized(space.galerkin(&ops.c, p, p), "C_ms")?,
        d: space.galerkin(&ops.d, p, u),
    })
}

/// Symmetric positive definite solve with a dense or sparse factorization.
fn spd_solve(m: &SpMat, rhs: &[f64], label: &'static str) -> Result<Vec<f64>> {
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; rhs.len()]);
    }
    if m.nrows() <= DENSE_LIMIT {
        DenseSolver::new(m, label)?.solve(rhs)
    } else {
        SparseSolver::spd(m.clone(), SOLVER_TOLERANCE, label)?.solve(rhs)
    }
}

/// `b(p_h0 - p_ms0, q) = 0` for all `q` in the multiscale pressure space.
pub fn init_ms_pressure(
    ops: &OperatorSet,
    space: &MultiscaleSpace,
    reduced: &ReducedOperatorSet,
    p_h0: &[f64],
) -> Result<Vec<f64>> {
    let rhs = space.restrict(Family::Pressure, &linalg::spmv(&ops.b, p_h0));
    spd_solve(&reduced.b, &rhs, "multiscale initial pressure")
}

/// `A_ms u0 = D_msᵀ p0`.
pub fn init_ms_displacement(reduced: &ReducedOperatorSet, p0: &[f64]) -> Result<Vec<f64>> {
    let rhs = linalg::spmv_t(&reduced.d, p0);
    spd_solve(&reduced.a, &rhs, "multiscale initial displacement")
}

struct DenseSolver {
    matrix: Mat<f64>,
    scale: Vec<f64>,
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    label: &'static str,
}

impl DenseSolver {
    fn new(m: &SpMat, label: &'static str) -> Result<Self> {
        let (scaled, scale) = linalg::equilibrate(m);
        let matrix = scaled.to_dense();
        let lu = matrix.partial_piv_lu();
        Ok(Self {
            matrix,
            scale,
            lu,
            label,
        })
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        let n = b.len();
        let mut r = b.to_vec();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                let col = self.matrix.col(j);
                for i in 0..n {
                    r[i] -= col[i] * xj;
                }
            }
        }
        let nb = linalg::norm2(b);
        let rel = linalg::norm2(&r) / if nb == 0.0 { 1.0 } else { nb };
        (r, rel)
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let bs: Vec<f64> = b.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        let mut y = bs.clone();
        self.lu.solve_in_place(linalg::vec_as_mat(&mut y));
        let (mut r, mut rel) = self.residual(&y, &bs);
        let mut sweeps = 0;
        while !(rel <= SOLVER_TOLERANCE) && sweeps < 3 {
            self.lu.solve_in_place(linalg::vec_as_mat(&mut r));
            for (yi, ri) in y.iter_mut().zip(&r) {
                *yi += ri;
            }
            (r, rel) = self.residual(&y, &bs);
            sweeps += 1;
        }
        if rel <= SOLVER_TOLERANCE && y.iter().all(|v| v.is_finite()) {
            Ok(y.iter().zip(&self.scale).map(|(v, s)| v * s).collect())
        } else {
            Err(Error::solver(self.label, rel))
        }
    }
}

enum StepFactor {
    Dense(DenseSolver),
    Sparse(SparseSolver),
}

/// Backward Euler stepper for the reduced system, stored symmetrically as
/// `[A_ms, -D_msᵀ; -D_ms, -(C_ms + τ B_ms)]`.
pub struct MsStepper<'a> {
    reduced: &'a ReducedOperatorSet,
    tau: f64,
    factor: StepFactor,
}

impl<'a> MsStepper<'a> {
    pub fn new(reduced: &'a ReducedOperatorSet, tau: f64) -> Result<Self> {
        let nu = reduced.dim_u();
        let mut t: Vec<(usize, usize, f64)> = linalg::entries(&reduced.a).collect();
        for (r, c, v) in linalg::entries(&reduced.d) {
            t.push((nu + r, c, -v));
            t.push((c, nu + r, -v));
        }
        for (m, s) in [(&reduced.c, 1.0), (&reduced.b, tau)] {
            t.extend(linalg::entries(m).map(|(r, c, v)| (nu + r, nu + c, -s * v)));
        }
        let dim = nu + reduced.dim_p();
        let mat = linalg::from_triplets(dim, dim, &t);
        let label = "multiscale backward Euler step";
        let factor = if dim <= DENSE_LIMIT {
            StepFactor::Dense(DenseSolver::new(&mat, label)?)
        } else {
            StepFactor::Sparse(SparseSolver::general(mat, SOLVER_TOLERANCE, label)?)
        };
        Ok(Self { reduced, tau, factor })
    }

    /// One step; `load` is the reduced load `R_pᵀ F(t_n)`.
    pub fn step(&self, prev: &ReducedState, load: &[f64]) -> Result<ReducedState> {
        let r = self.reduced;
        let mut rhs_p = linalg::spmv(&r.d, &prev.u);
        linalg::spmv_acc(&r.c, &prev.p, &mut rhs_p);
        let nu = r.dim_u();
        let mut rhs = vec![0.0; nu];
        rhs.extend(rhs_p.iter().zip(load).map(|(x, l)| -(x + self.tau * l)));
        let x = match &self.factor {
            StepFactor::Dense(s) => s.solve(&rhs)?,
            StepFactor::Sparse(s) => s.solve(&rhs)?,
        };
        Ok(ReducedState {
            u: x[..nu].to_vec(),
            p: x[nu..].to_vec(),
            t: prev.t + self.tau,
        })
    }
}

/// Reduced trajectory with its fine-grid prolongation.
#[derive(Debug, Clone)]
pub struct MsRun {
    pub states: Vec<ReducedState>,
    pub fine: Vec<PoroState>,
}

pub fn prolongate(space: &MultiscaleSpace, state: &ReducedState) -> PoroState {
    PoroState {
        u: space.prolongate(Family::Displacement, &state.u),
        p: space.prolongate(Family::Pressure, &state.p),
        t: state.t,
    }
}

/// Time-steps the reduced system from multiscale initial pressure coefficients `p0`.
pub fn run_ms_solver(
    mesh: &FineMesh,
    reduced: &ReducedOperatorSet,
    space: &MultiscaleSpace,
    grid: TimeGrid,
    f: &dyn Source,
    p0: Vec<f64>,
) -> Result<MsRun> {
    let u0 = init_ms_displacement(reduced, &p0)?;
    let stepper = MsStepper::new(reduced, grid.tau)?;
    let mut states = vec![ReducedState { u: u0, p: p0, t: 0.0 }];
    for n in 1..=grid.steps {
        let tn = grid.time(n);
        let load = space.restrict(Family::Pressure, &load_vector(mesh, |x| f(tn, x)));
        let next = stepper.step(states.last().unwrap(), &load)?;
        states.push(ReducedState { t: tn, ..next });
    }
    let fine = states.iter().map(|s| prolongate(space, s)).collect();
    Ok(MsRun { states, fine })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cem::build_multiscale_space;
    use crate::fem::{project_initial_pressure, run_fine_from};
    use crate::medium::{Medium, PhysicsConstants};
    use crate::mesh::CoarsePartition;
    use crate::spectral::{AuxiliarySpaces, PartitionOfUnity, WeightFields};

    fn fine(n: usize, alpha: f64) -> (FineMesh, Medium, OperatorSet) {
        let mesh = FineMesh::new(n).unwrap();
        let med = Medium::homogeneous(&mesh, 1.0, 1.0, alpha, PhysicsConstants::default()).unwrap();
        let ops = OperatorSet::assemble(&mesh, &med).unwrap();
        (mesh, med, ops)
    }

    fn cem_space(mesh: &FineMesh, med: &Medium, ops: &OperatorSet, nc: usize, j: usize, m: usize) -> MultiscaleSpace {
        let part = CoarsePartition::new(mesh, nc).unwrap();
        let w = WeightFields::new(&PartitionOfUnity::new(mesh, &part), med);
        let aux = AuxiliarySpaces::build(mesh, med, &part, &w, j, j).unwrap();
        build_multiscale_space(ops, &aux, &part, m).unwrap()
    }

    fn bubble(x: [f64; 2]) -> f64 {
        x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
    }

    #[test]
    fn identity_space_reproduces_fine_operators() {
        let (_, _, ops) = fine(6, 0.7);
        let space = MultiscaleSpace::identity(&ops);
        let red = reduce_operators(&ops, &space).unwrap();
        let sub = |m: &SpMat, r: &[usize], c: &[usize]| linalg::submatrix(m, r, c).to_dense();
        for (got, want) in [
            (red.a.to_dense(), sub(&ops.a, &ops.free_u, &ops.free_u)),
            (red.b.to_dense(), sub(&ops.b, &ops.free_p, &ops.free_p)),
            (red.c.to_dense(), sub(&ops.c, &ops.free_p, &ops.free_p)),
            (red.d.to_dense(), sub(&ops.d, &ops.free_p, &ops.free_u)),
        ] {
            assert_eq!(got.nrows(), want.nrows());
            for i in 0..got.nrows() {
                for j in 0..got.ncols() {
                    assert!((got[(i, j)] - want[(i, j)]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn quadratic_forms_agree() {
        let (mesh, med, ops) = fine(12, 0.8);
        let space = cem_space(&mesh, &med, &ops, 3, 2, 1);
        let red = reduce_operators(&ops, &space).unwrap();
        let c: Vec<f64> = (0..space.dim_u()).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let fine_u = space.prolongate(Family::Displacement, &c);
        let a = linalg::quad_form(&red.a, &c);
        assert!((a - linalg::quad_form(&ops.a, &fine_u)).abs() <= 1e-12 * a);
        assert!(linalg::max_asymmetry(&red.a) == 0.0);
    }

    #[test]
    fn initial_pressure_projection() {
        let (mesh, med, ops) = fine(12, 0.8);
        let space = cem_space(&mesh, &med, &ops, 3, 2, 1);
        let red = reduce_operators(&ops, &space).unwrap();
        let zero = init_ms_pressure(&ops, &space, &red, &vec![0.0; ops.num_p()]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let coeffs: Vec<f64> = (0..space.dim_p()).map(|k| 1.0 + k as f64 * 0.1).collect();
        let inside = space.prolongate(Family::Pressure, &coeffs);
        let back = init_ms_pressure(&ops, &space, &red, &inside).unwrap();
        for (a, b) in back.iter().zip(&coeffs) {
            assert!((a - b).abs() < 1e-8 * b.abs());
        }
        let ph = project_initial_pressure(&mesh, &ops, bubble).unwrap();
        let pc = init_ms_pressure(&ops, &space, &red, &ph).unwrap();
        let pms = space.prolongate(Family::Pressure, &pc);
        assert!(linalg::quad_form(&ops.b, &pms) <= linalg::quad_form(&ops.b, &ph) * (1.0 + 1e-12));
        // b-orthogonality of the error
        let err: Vec<f64> = ph.iter().zip(&pms).map(|(a, b)| a - b).collect();
        let orth = space.restrict(Family::Pressure, &linalg::spmv(&ops.b, &err));
        let scale = linalg::norm2(&space.restrict(Family::Pressure, &linalg::spmv(&ops.b, &ph)));
        assert!(linalg::norm2(&orth) <= 1e-10 * scale);
    }

    #[test]
    fn initial_displacement_matches_dense_oracle() {
        let (mesh, med, ops) = fine(8, 0.9);
        let space = cem_space(&mesh, &med, &ops, 2, 2, 1);
        let red = reduce_operators(&ops, &space).unwrap();
        let p: Vec<f64> = (0..space.dim_p()).map(|k| 0.5 - k as f64 * 0.2).collect();
        let u = init_ms_displacement(&red, &p).unwrap();
        let a = red.a.to_dense();
        let rhs = red.d.to_dense().transpose() * Mat::from_fn(p.len(), 1, |i, _| p[i]);
        let oracle = a.llt(faer::Side::Lower).unwrap().solve(&rhs);
        for i in 0..u.len() {
            assert!((u[i] - oracle[(i, 0)]).abs() < 1e-10 * oracle.norm_max());
        }
        assert!(init_ms_displacement(&red, &vec![0.0; p.len()]).unwrap().iter().all(|&v| v == 0.0));
        let (mesh0, med0, ops0) = fine(8, 0.0);
        let sp0 = cem_space(&mesh0, &med0, &ops0, 2, 2, 1);
        let red0 = reduce_operators(&ops0, &sp0).unwrap();
        assert!(init_ms_displacement(&red0, &p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_space_trajectory_matches_fine() {
        let (mesh, _, ops) = fine(8, 0.8);
        let grid = TimeGrid::new(0.25, 1.0).unwrap();
        let f = |_t: f64, x: [f64; 2]| 1.0 + x[0];
        let ph = project_initial_pressure(&mesh, &ops, bubble).unwrap();
        let reference = run_fine_from(&mesh, &ops, grid, &f, ph.clone()).unwrap();
        let space = MultiscaleSpace::identity(&ops);
        let red = reduce_operators(&ops, &space).unwrap();
        let p0 = init_ms_pressure(&ops, &space, &red, &ph).unwrap();
        let run = run_ms_solver(&mesh, &red, &space, grid, &f, p0).unwrap();
        for (a, b) in reference.iter().zip(&run.fine) {
            for (x, y) in [(&a.u, &b.u), (&a.p, &b.p)] {
                let d: Vec<f64> = x.iter().zip(y.iter()).map(|(p, q)| p - q).collect();
                assert!(linalg::norm2(&d) <= 1e-9 * linalg::norm2(x));
            }
        }
    }

    #[test]
    fn reduced_energy_decays_without_source() {
        let (mesh, med, ops) = fine(12, 0.8);
        let space = cem_space(&mesh, &med, &ops, 3, 2, 1);
        let red = reduce_operators(&ops, &space).unwrap();
        let ph = project_initial_pressure(&mesh, &ops, bubble).unwrap();
        let p0 = init_ms_pressure(&ops, &space, &red, &ph).unwrap();
        let zero = |_t: f64, _x: [f64; 2]| 0.0;
        let run = run_ms_solver(&mesh, &red, &space, TimeGrid::new(0.1, 1.0).unwrap(), &zero, p0).unwrap();
        let e: Vec<f64> = run.states.iter().map(|s| red.energy(s)).collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for s in &run.fine {
            for &v in mesh.boundary_vertex_flags.iter().enumerate().filter(|(_, &b)| b).map(|(v, _)| v).collect::<Vec<_>>().iter() {
                assert_eq!(s.p[v], 0.0);
                assert_eq!(s.u[2 * v], 0.0);
            }
        }
    }
}
