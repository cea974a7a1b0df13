//! P1 assembly of the Biot bilinear forms and the fine-grid backward Euler
//! reference solver.
//!
//! DOF layout: pressure DOF `v` is fine vertex `v`; displacement DOFs of
//! vertex `v` are `2v` (x-component) and `2v + 1` (y-component). Global
//! vectors always carry every vertex, with zeros on the Dirichlet boundary.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SpMat, SparseSolver};
use crate::medium::Medium;
use crate::mesh::FineMesh;

/// Relative residual required from every linear solve.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

pub type ElasticityElement = [[f64; 6]; 6];

/// Element matrix of `a(u, v) = ∫ 2μ ε(u):ε(v) + λ div u div v`.
pub fn elasticity_element(g: &[[f64; 2]; 3], area: f64, mu: f64, lambda: f64) -> ElasticityElement {
    let mut k = [[0.0; 6]; 6];
    for a in 0..3 {
        for c in 0..2 {
            for b in 0..3 {
                for d in 0..2 {
                    let delta = if c == d { g[a][0] * g[b][0] + g[a][1] * g[b][1] } else { 0.0 };
                    let shear = mu * (delta + g[a][d] * g[b][c]);
                    let vol = lambda * (g[a][c] * g[b][d]);
                    k[2 * a + c][2 * b + d] = area * (shear + vol);
                }
            }
        }
    }
    k
}

/// Element matrix of `∫ coef ∇p·∇q`.
pub fn stiffness_element(g: &[[f64; 2]; 3], area: f64, coef: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = coef * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    k
}

/// Element matrix of `∫ coef p q`.
pub fn mass_element(area: f64, coef: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = coef * area / if a == b { 6.0 } else { 12.0 };
        }
    }
    k
}

/// Element matrix of `d(u, q) = ∫ α div(u) q`; rows are pressure, columns displacement.
pub fn coupling_element(g: &[[f64; 2]; 3], area: f64, alpha: f64) -> [[f64; 6]; 3] {
    let mut k = [[0.0; 6]; 3];
    for l in 0..3 {
        for a in 0..3 {
            for c in 0..2 {
                k[l][2 * a + c] = alpha * g[a][c] * area / 3.0;
            }
        }
    }
    k
}

fn assemble<F>(mesh: &FineMesh, nrows: usize, ncols: usize, element: F) -> SpMat
where
    F: Fn(usize, &mut Vec<(usize, usize, f64)>) + Sync,
{
    // Per-triangle triplets collected in triangle order; duplicates are summed
    // by the sparse constructor, so the result does not depend on threading.
    let triplets: Vec<(usize, usize, f64)> = (0..mesh.num_triangles())
        .into_par_iter()
        .flat_map_iter(|t| {
            let mut local = Vec::with_capacity(36);
            element(t, &mut local);
            local
        })
        .collect();
    linalg::from_triplets(nrows, ncols, &triplets)
}

fn vector_dofs(tri: &[usize; 3]) -> [usize; 6] {
    [
        2 * tri[0],
        2 * tri[0] + 1,
        2 * tri[1],
        2 * tri[1] + 1,
        2 * tri[2],
        2 * tri[2] + 1,
    ]
}

/// Scalar P1 mass matrix with a per-triangle weight.
pub fn assemble_weighted_mass(mesh: &FineMesh, weight: &[f64]) -> SpMat {
    let nv = mesh.num_vertices();
    assemble(mesh, nv, nv, |t, out| {
        let tri = mesh.triangles[t];
        let k = mass_element(mesh.signed_area(t), weight[t]);
        for a in 0..3 {
            for b in 0..3 {
                out.push((tri[a], tri[b], k[a][b]));
            }
        }
    })
}

/// Vector P1 mass matrix `∫ w u·v` with a per-triangle weight.
pub fn assemble_weighted_vector_mass(mesh: &FineMesh, weight: &[f64]) -> SpMat {
    let nu = 2 * mesh.num_vertices();
    assemble(mesh, nu, nu, |t, out| {
        let tri = mesh.triangles[t];
        let k = mass_element(mesh.signed_area(t), weight[t]);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..2 {
                    out.push((2 * tri[a] + c, 2 * tri[b] + c, k[a][b]));
                }
            }
        }
    })
}

/// Assembled fine-grid forms, without boundary conditions, plus the free DOF sets.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    /// Elasticity `a(u, v)`, displacement × displacement.
    pub a: SpMat,
    /// Darcy `b(p, q)`.
    pub b: SpMat,
    /// Storage `c(p, q) = (p / M, q)`.
    pub c: SpMat,
    /// Coupling `d(u, q)`: pressure rows, displacement columns.
    pub d: SpMat,
    /// Plain L² mass on the pressure space.
    pub mass: SpMat,
    pub free_u: Vec<usize>,
    pub free_p: Vec<usize>,
    pub num_vertices: usize,
}

impl OperatorSet {
    pub fn assemble(mesh: &FineMesh, medium: &Medium) -> Result<Self> {
        medium.check_mesh(mesh)?;
        let nv = mesh.num_vertices();
        let nu = 2 * nv;
        let a = assemble(mesh, nu, nu, |t, out| {
            let (g, area) = mesh.barycentric_gradients(t);
            let k = elasticity_element(&g, area, medium.mu[t], medium.lambda[t]);
            let dofs = vector_dofs(&mesh.triangles[t]);
            for r in 0..6 {
                for c in 0..6 {
                    out.push((dofs[r], dofs[c], k[r][c]));
                }
            }
        });
        let b = assemble(mesh, nv, nv, |t, out| {
            let (g, area) = mesh.barycentric_gradients(t);
            let k = stiffness_element(&g, area, medium.kappa[t] / medium.viscosity);
            let tri = mesh.triangles[t];
            for r in 0..3 {
                for c in 0..3 {
                    out.push((tri[r], tri[c], k[r][c]));
                }
            }
        });
        let d = assemble(mesh, nv, nu, |t, out| {
            let (g, area) = mesh.barycentric_gradients(t);
            let k = coupling_element(&g, area, medium.alpha[t]);
            let tri = mesh.triangles[t];
            let dofs = vector_dofs(&tri);
            for r in 0..3 {
                for c in 0..6 {
                    out.push((tri[r], dofs[c], k[r][c]));
                }
            }
        });
        let ones = vec![1.0; mesh.num_triangles()];
        let mass = assemble_weighted_mass(mesh, &ones);
        let storage = vec![1.0 / medium.biot_modulus; mesh.num_triangles()];
        let c = assemble_weighted_mass(mesh, &storage);
        let free_p = mesh.interior_vertices();
        let free_u = free_p.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect();
        Ok(Self {
            a,
            b,
            c,
            d,
            mass,
            free_u,
            free_p,
            num_vertices: nv,
        })
    }

    pub fn num_u(&self) -> usize {
        2 * self.num_vertices
    }

    pub fn num_p(&self) -> usize {
        self.num_vertices
    }

    /// `a(u, u) + c(p, p)`.
    pub fn energy(&self, state: &PoroState) -> f64 {
        linalg::quad_form(&self.a, &state.u) + linalg::quad_form(&self.c, &state.p)
    }
}

/// Load vector `(g, q)` for every P1 basis function, by edge-midpoint quadrature.
pub fn load_vector(mesh: &FineMesh, g: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let p = tri.map(|v| mesh.vertices[v]);
        let mid = |a: usize, b: usize| [(p[a][0] + p[b][0]) / 2.0, (p[a][1] + p[b][1]) / 2.0];
        // midpoint of edge opposite vertex k
        let gm = [g(mid(1, 2)), g(mid(2, 0)), g(mid(0, 1))];
        for k in 0..3 {
            // basis k is 1/2 at the two adjacent midpoints and 0 at the opposite one
            let s = gm[(k + 1) % 3] + gm[(k + 2) % 3];
            out[tri[k]] += area / 3.0 * 0.5 * s;
        }
    }
    out
}

/// L² projection of `p0` onto the pressure space with zero boundary values.
pub fn project_initial_pressure(
    mesh: &FineMesh,
    ops: &OperatorSet,
    p0: impl Fn([f64; 2]) -> f64,
) -> Result<Vec<f64>> {
    let rhs = linalg::gather(&load_vector(mesh, p0), &ops.free_p);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; ops.num_p()]);
    }
    let m = linalg::submatrix(&ops.mass, &ops.free_p, &ops.free_p);
    let x = SparseSolver::spd(m, SOLVER_TOLERANCE, "L2 projection")?.solve(&rhs)?;
    Ok(linalg::scatter(ops.num_p(), &ops.free_p, &x))
}

/// Consistent initial displacement: `a(u0, v) = d(v, p0)` for all `v`.
pub fn solve_initial_displacement(ops: &OperatorSet, p0: &[f64]) -> Result<Vec<f64>> {
    let rhs = linalg::gather(&linalg::spmv_t(&ops.d, p0), &ops.free_u);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; ops.num_u()]);
    }
    let a = linalg::submatrix(&ops.a, &ops.free_u, &ops.free_u);
    let x = SparseSolver::spd(a, SOLVER_TOLERANCE, "initial displacement")?.solve(&rhs)?;
    Ok(linalg::scatter(ops.num_u(), &ops.free_u, &x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoroState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, final_time: f64) -> Result<Self> {
        if !(tau > 0.0) || !(final_time > 0.0) {
            return Err(Error::invalid("time step and final time must be positive"));
        }
        let steps = (final_time / tau).round();
        if steps < 1.0 || (steps * tau - final_time).abs() > 1e-9 * final_time {
            return Err(Error::invalid(format!(
                "time step {tau} does not divide final time {final_time}"
            )));
        }
        Ok(Self {
            tau,
            steps: steps as usize,
        })
    }

    pub fn final_time(&self) -> f64 {
        self.steps as f64 * self.tau
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }
}

/// Backward Euler stepper for the monolithic fine system, factorized once per `tau`.
///
/// Unknowns are ordered `[u_free; p_free]` and the second block row is negated
/// so the stored matrix `[A, -Dᵀ; -D, -(C + τB)]` is symmetric.
pub struct FineStepper<'a> {
    ops: &'a OperatorSet,
    tau: f64,
    solver: SparseSolver,
}

impl<'a> FineStepper<'a> {
    pub fn new(ops: &'a OperatorSet, tau: f64) -> Result<Self> {
        let nu = ops.free_u.len();
        let umap = linalg::index_map(ops.num_u(), &ops.free_u);
        let pmap = linalg::index_map(ops.num_p(), &ops.free_p);
        let mut t = Vec::new();
        for (r, c, v) in linalg::entries(&ops.a) {
            if umap[r] != usize::MAX && umap[c] != usize::MAX {
                t.push((umap[r], umap[c], v));
            }
        }
        for (r, c, v) in linalg::entries(&ops.d) {
            let (pr, uc) = (pmap[r], umap[c]);
            if pr != usize::MAX && uc != usize::MAX {
                t.push((nu + pr, uc, -v));
                t.push((uc, nu + pr, -v));
            }
        }
        for (m, scale) in [(&ops.c, 1.0), (&ops.b, tau)] {
            for (r, c, v) in linalg::entries(m) {
                if pmap[r] != usize::MAX && pmap[c] != usize::MAX {
                    t.push((nu + pmap[r], nu + pmap[c], -scale * v));
                }
            }
        }
        let dim = nu + ops.free_p.len();
        let mat = linalg::from_triplets(dim, dim, &t);
        let solver = SparseSolver::general(mat, SOLVER_TOLERANCE, "fine backward Euler step")?;
        Ok(Self { ops, tau, solver })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// One step from `prev`; `load` is the full pressure-space load vector of `f(t_n)`.
    pub fn step(&self, prev: &PoroState, load: &[f64]) -> Result<PoroState> {
        let ops = self.ops;
        let mut rhs_p = linalg::spmv(&ops.d, &prev.u);
        linalg::spmv_acc(&ops.c, &prev.p, &mut rhs_p);
        for (r, l) in rhs_p.iter_mut().zip(load) {
            *r += self.tau * l;
        }
        let nu = ops.free_u.len();
        let mut rhs = vec![0.0; nu];
        rhs.extend(ops.free_p.iter().map(|&v| -rhs_p[v]));
        let x = self.solver.solve(&rhs)?;
        Ok(PoroState {
            u: linalg::scatter(ops.num_u(), &ops.free_u, &x[..nu]),
            p: linalg::scatter(ops.num_p(), &ops.free_p, &x[nu..]),
            t: prev.t + self.tau,
        })
    }
}

/// Source term `f(t, x)`.
pub trait Source: Fn(f64, [f64; 2]) -> f64 + Sync {}
impl<F: Fn(f64, [f64; 2]) -> f64 + Sync> Source for F {}

/// Fine reference trajectory starting from a projected initial pressure.
/// Returns the states at `t_0, ..., t_N`.
pub fn run_fine_solver(
    mesh: &FineMesh,
    medium: &Medium,
    grid: TimeGrid,
    f: &dyn Source,
    p0: &(dyn Fn([f64; 2]) -> f64 + Sync),
) -> Result<(OperatorSet, Vec<PoroState>)> {
    let ops = OperatorSet::assemble(mesh, medium)?;
    let p_init = project_initial_pressure(mesh, &ops, p0)?;
    let states = run_fine_from(mesh, &ops, grid, f, p_init)?;
    Ok((ops, states))
}

pub fn run_fine_from(
    mesh: &FineMesh,
    ops: &OperatorSet,
    grid: TimeGrid,
    f: &dyn Source,
    p_init: Vec<f64>,
) -> Result<Vec<PoroState>> {
    let u_init = solve_initial_displacement(ops, &p_init)?;
    let stepper = FineStepper::new(ops, grid.tau)?;
    let mut states = Vec::with_capacity(grid.steps + 1);
    states.push(PoroState {
        u: u_init,
        p: p_init,
        t: 0.0,
    });
    for n in 1..=grid.steps {
        let tn = grid.time(n);
        let load = load_vector(mesh, |x| f(tn, x));
        let next = stepper.step(states.last().unwrap(), &load)?;
        log::debug!("fine step {n}/{}: t = {tn}", grid.steps);
        states.push(PoroState { t: tn, ..next });
    }
    Ok(states)
}
